"""Attention interpretability: percentiles, top-k patches, heatmap rendering.

Raw pooling scores are rank-normalized to percentiles in (0, 1] (mean rank
for ties, so the map depends only on score order), then drawn onto the patch
grid one cell per patch through a fixed five-stop color ramp. Every heatmap
ships with a JSON sidecar holding the full record.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor
from .errors import ContractError, FormatError

# five evenly spaced ramp stops, dark violet -> bright yellow; percentile 1.0
# maps exactly to the last stop
RAMP_STOPS = ((13, 8, 135), (126, 3, 168), (204, 71, 120),
              (248, 149, 64), (240, 249, 33))
BACKGROUND_RGB = (24, 24, 30)


def _as_array(alpha) -> np.ndarray:
    a = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise ContractError(f"scores must be a non-empty vector, got shape {a.shape}")
    return np.asarray(a, dtype=np.float64)


def attention_percentiles(alpha) -> np.ndarray:
    """percentile_i = rank_i / N with ranks 1..N and mean rank on ties."""
    a = _as_array(alpha)
    n = len(a)
    order = np.argsort(a, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    xs = a[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks / n


def top_k_patches(alpha, k: int) -> np.ndarray:
    """Ids of the k largest scores, descending; ties go to the lower id."""
    a = _as_array(alpha)
    if not 1 <= k <= len(a):
        raise ContractError(f"k must be in 1..{len(a)}, got {k}")
    order = np.lexsort((np.arange(len(a)), -a))
    return order[:k].astype(np.int64)


@dataclass
class HeatmapRecord:
    slide_id: str
    entries: list            # {patch_id, x, y, raw_score, percentile} dicts
    predicted_class: int
    class_scores: list
    top_k: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(slide_id=self.slide_id, entries=self.entries,
                    predicted_class=self.predicted_class,
                    class_scores=self.class_scores, top_k=self.top_k)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "HeatmapRecord":
        try:
            return cls(slide_id=str(d["slide_id"]), entries=list(d["entries"]),
                       predicted_class=int(d["predicted_class"]),
                       class_scores=list(d["class_scores"]),
                       top_k=list(d.get("top_k", [])))
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad heatmap record: {e}") from e

    @classmethod
    def from_json(cls, text: str) -> "HeatmapRecord":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise FormatError(f"bad heatmap JSON: {e}") from e


def make_heatmap_record(slide_id: str, coords: np.ndarray, alpha,
                        class_scores, k: int = 8) -> HeatmapRecord:
    """Assemble the exportable record for one slide."""
    a = _as_array(alpha)
    coords = np.asarray(coords)
    if coords.shape != (len(a), 2):
        raise ContractError(f"coords shape {coords.shape} does not match "
                            f"{len(a)} scores")
    pct = attention_percentiles(a)
    entries = [dict(patch_id=i, x=int(coords[i, 0]), y=int(coords[i, 1]),
                    raw_score=float(a[i]), percentile=float(pct[i]))
               for i in range(len(a))]
    scores = [float(s) for s in np.asarray(class_scores).ravel()]
    return HeatmapRecord(slide_id=slide_id, entries=entries,
                         predicted_class=int(np.argmax(scores)),
                         class_scores=scores,
                         top_k=[int(i) for i in top_k_patches(a, min(k, len(a)))])


def ramp_color(t: float) -> tuple:
    """Piecewise-linear interpolation through the documented ramp stops."""
    t = min(max(float(t), 0.0), 1.0)
    pos = t * (len(RAMP_STOPS) - 1)
    lo = min(int(pos), len(RAMP_STOPS) - 2)
    frac = pos - lo
    a, b = RAMP_STOPS[lo], RAMP_STOPS[lo + 1]
    return tuple(int(round(av + frac * (bv - av))) for av, bv in zip(a, b))


def render_heatmap(record: HeatmapRecord, out_path, cell: int = 16) -> tuple:
    """Write the percentile raster PNG and its JSON sidecar.

    One ``cell`` x ``cell`` square per patch at its grid coordinate; grid
    cells with no patch stay the neutral background color. Returns
    (png_path, sidecar_path); bytes are deterministic for a given record.
    """
    out_path = Path(out_path)
    if out_path.suffix != ".png":
        out_path = out_path.with_suffix(".png")
    if not record.entries:
        raise ContractError("heatmap record has no entries")
    xs = np.array([e["x"] for e in record.entries])
    ys = np.array([e["y"] for e in record.entries])
    x0, y0 = xs.min(), ys.min()
    w, h = int(xs.max() - x0 + 1), int(ys.max() - y0 + 1)
    img = np.empty((h * cell, w * cell, 3), dtype=np.uint8)
    img[:] = BACKGROUND_RGB
    for e in record.entries:
        color = ramp_color(e["percentile"])
        cx, cy = int(e["x"] - x0), int(e["y"] - y0)
        img[cy * cell:(cy + 1) * cell, cx * cell:(cx + 1) * cell] = color
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="RGB").save(out_path, format="PNG")
    sidecar = out_path.with_suffix(".json")
    sidecar.write_text(record.to_json())
    return out_path, sidecar
