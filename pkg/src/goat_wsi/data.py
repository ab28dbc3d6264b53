"""Slide bags: validated containers, manifest I/O, and a synthetic generator.

A bag is one slide's worth of patch embeddings plus the patch-grid coordinate
of every patch and a slide-level label. On disk a bag is a small JSON manifest
pointing at a raw float32 embedding blob and a coordinate CSV; a dataset is a
JSON manifest listing slide manifests plus the class-name table.

The synthetic generator plants a feature motif whose *spatial arrangement*
carries the class: class 0 concentrates motif patches in one contiguous disc,
later classes scatter the same number of motif patches across several
well-separated discs. Bag-level marginal statistics are therefore matched
across classes by construction and only geometry is informative.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MANIFEST_FIELDS = ("slide_id", "n_patches", "dim", "embedding_file", "coords_file", "label")


@dataclass
class SlideBag:
    """One slide: embeddings (N, d), integer patch coordinates (N, 2), label."""

    slide_id: str
    embeddings: np.ndarray
    coords: np.ndarray
    label: int

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.int64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ValidationError(f"embeddings must be a non-empty (N, d) matrix, "
                                  f"got shape {self.embeddings.shape}")
        if self.coords.shape != (self.embeddings.shape[0], 2):
            raise ValidationError(f"coordinate count {self.coords.shape} does not match "
                                  f"embedding rows {self.embeddings.shape[0]}")
        if not np.isfinite(self.embeddings).all():
            raise ValidationError(f"slide {self.slide_id!r}: embeddings contain NaN/Inf")
        if len({(int(x), int(y)) for x, y in self.coords}) != len(self.coords):
            raise ValidationError(f"slide {self.slide_id!r}: duplicate patch coordinates")

    @property
    def n_patches(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass
class Dataset:
    classes: list[str]
    bags: list[SlideBag]

    @property
    def labels(self) -> np.ndarray:
        return np.array([b.label for b in self.bags], dtype=np.int64)


def load_slide_bag(manifest_path) -> SlideBag:
    """Load and validate a slide bag from its JSON manifest.

    The embedding blob is raw little-endian float32, row-major N x d, widened
    to float64 in memory. File references are resolved relative to the
    manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read slide manifest {manifest_path}: {e}") from e
    missing = [k for k in MANIFEST_FIELDS if k not in manifest]
    if missing:
        raise FormatError(f"slide manifest {manifest_path} missing fields {missing}")

    n, d = int(manifest["n_patches"]), int(manifest["dim"])
    base = manifest_path.parent
    blob_path = base / manifest["embedding_file"]
    raw = blob_path.read_bytes()
    if len(raw) != n * d * 4:
        raise FormatError(f"embedding blob {blob_path} holds {len(raw)} bytes, "
                          f"expected {n * d * 4} for {n}x{d} float32")
    emb = np.frombuffer(raw, dtype="<f4").reshape(n, d).astype(np.float64)

    coords_path = base / manifest["coords_file"]
    with open(coords_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["patch_id", "x", "y"]:
            raise FormatError(f"coordinate table {coords_path} has header {header}, "
                              "expected patch_id,x,y")
        rows = [(int(r[0]), int(r[1]), int(r[2])) for r in reader]
    if len(rows) != n:
        raise FormatError(f"coordinate table {coords_path} has {len(rows)} rows, "
                          f"manifest declares n_patches={n}")
    if sorted(r[0] for r in rows) != list(range(n)):
        raise FormatError(f"coordinate table {coords_path}: patch_id must cover 0..{n - 1}")
    coords = np.zeros((n, 2), dtype=np.int64)
    for pid, x, y in rows:
        coords[pid] = (x, y)

    return SlideBag(slide_id=str(manifest["slide_id"]), embeddings=emb,
                    coords=coords, label=int(manifest["label"]))


def save_slide_bag(bag: SlideBag, manifest_path) -> Path:
    """Write a bag as manifest + float32 blob + coordinate CSV, deterministically.

    Companion files are named after the slide id and placed next to the
    manifest, so saving a loaded bag reproduces the exact bytes of a bag this
    function wrote before.
    """
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    emb_name = f"{bag.slide_id}.emb"
    coords_name = f"{bag.slide_id}.coords.csv"

    (manifest_path.parent / emb_name).write_bytes(
        np.ascontiguousarray(bag.embeddings, dtype="<f4").tobytes())

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["patch_id", "x", "y"])
    for pid, (x, y) in enumerate(bag.coords):
        writer.writerow([pid, int(x), int(y)])
    (manifest_path.parent / coords_name).write_text(buf.getvalue())

    manifest = {
        "slide_id": bag.slide_id,
        "n_patches": bag.n_patches,
        "dim": bag.dim,
        "embedding_file": emb_name,
        "coords_file": coords_name,
        "label": int(bag.label),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_dataset(manifest_path) -> Dataset:
    """Load a dataset manifest: class names plus slide manifests (relative paths)."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read dataset manifest {manifest_path}: {e}") from e
    if not isinstance(doc, dict) or "classes" not in doc or "slides" not in doc:
        raise FormatError(f"dataset manifest {manifest_path} must carry 'classes' and 'slides'")
    classes = [str(c) for c in doc["classes"]]
    bags = [load_slide_bag(manifest_path.parent / rel) for rel in doc["slides"]]
    for bag in bags:
        if not 0 <= bag.label < len(classes):
            raise ValidationError(f"slide {bag.slide_id!r} label {bag.label} outside "
                                  f"[0, {len(classes)})")
    return Dataset(classes=classes, bags=bags)


def save_dataset(bags: list[SlideBag], classes: list[str], out_dir,
                 name: str = "dataset.json") -> Path:
    """Write every bag under ``out_dir/slides/`` and a dataset manifest."""
    out_dir = Path(out_dir)
    slide_dir = out_dir / "slides"
    rels = []
    for bag in bags:
        rel = Path("slides") / f"{bag.slide_id}.json"
        save_slide_bag(bag, out_dir / rel)
        rels.append(str(rel))
    path = out_dir / name
    path.write_text(json.dumps({"classes": classes, "slides": rels}, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# synthetic geometric bags


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the synthetic generator. Defaults are the calibrated ones."""

    dim: int = 64
    motif_frac: float = 0.12
    background_norm: float = 2.5      # length of the shared background mean
    feature_sep: float = 2.0          # motif mean offset along a fixed direction
    noise: float = 0.4                # per-coordinate Gaussian noise
    scatter_clusters: tuple[int, int] = (3, 5)  # cluster-count range for class 1
    min_cluster_gap: float = 4.0      # min cell distance between scattered discs
    feature_seed: int = 20240915      # seeds the class-independent mean vectors


_NEIGHBORHOOD = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _grow_blob(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    """Grow a compact connected set of n grid cells around the origin."""
    cells = [(0, 0)]
    taken = {(0, 0)}
    frontier: list[tuple[int, int]] = []
    seen = set()

    def push_neighbors(c):
        for dx, dy in _NEIGHBORHOOD:
            nb = (c[0] + dx, c[1] + dy)
            if nb not in taken and nb not in seen:
                seen.add(nb)
                frontier.append(nb)

    push_neighbors((0, 0))
    cx = cy = 0.0
    while len(cells) < n:
        # prefer frontier cells near the running centroid: keeps the blob disc-like
        best, best_d = None, None
        sample = rng.choice(len(frontier), size=min(len(frontier), 12), replace=False)
        for si in sorted(int(s) for s in sample):
            fx, fy = frontier[si]
            d = (fx - cx / len(cells)) ** 2 + (fy - cy / len(cells)) ** 2
            if best_d is None or d < best_d:
                best, best_d = si, d
        cell = frontier[best]
        frontier[best] = frontier[-1]
        frontier.pop()
        seen.discard(cell)
        taken.add(cell)
        cells.append(cell)
        cx += cell[0]
        cy += cell[1]
        push_neighbors(cell)
    return cells


def _extend_by_one(cluster: set, anchor, tissue: set, blocked_fn) -> bool:
    """Add the admissible frontier cell nearest the anchor; False if stuck."""
    frontier = set()
    for cell in cluster:
        for dx, dy in _NEIGHBORHOOD:
            nb = (cell[0] + dx, cell[1] + dy)
            if nb in tissue and nb not in cluster:
                frontier.add(nb)
    admissible = [f for f in sorted(frontier) if not blocked_fn(f)]
    if not admissible:
        return False
    d = [(f[0] - anchor[0]) ** 2 + (f[1] - anchor[1]) ** 2 for f in admissible]
    cluster.add(admissible[int(np.argmin(d))])
    return True


def _farthest_point_seeds(rng, cells: list, k: int) -> list:
    first = int(rng.integers(len(cells)))
    seeds = [cells[first]]
    pts = np.asarray(cells, dtype=np.float64)
    dist = np.linalg.norm(pts - np.asarray(seeds[0]), axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        seeds.append(cells[nxt])
        dist = np.minimum(dist, np.linalg.norm(pts - np.asarray(seeds[-1]), axis=1))
    return seeds


def _cluster_count(rng, class_id: int, spec: SynthSpec) -> int:
    lo, hi = spec.scatter_clusters
    shift = (hi - lo + 1) * (class_id - 1)
    return int(rng.integers(lo + shift, hi + shift + 1))


def _place_motif(rng, cells, class_id: int, m: int, spec: SynthSpec) -> set:
    """Choose the motif cells: one grown disc for class 0, separated discs otherwise.

    Separation is enforced during growth (no cell may come within
    ``min_cluster_gap`` of another disc), so the disc count is exact whenever
    the tissue blob is large enough to host it.
    """
    tissue = set(cells)
    if class_id == 0:
        start = cells[int(rng.integers(len(cells)))]
        cluster = {start}
        while len(cluster) < m:
            if not _extend_by_one(cluster, start, tissue, lambda c: False):
                break
        return cluster

    k = min(_cluster_count(rng, class_id, spec), m)
    seeds = _farthest_point_seeds(rng, cells, k)
    gap2 = spec.min_cluster_gap ** 2
    kept = []
    for s in seeds:
        if all((s[0] - t[0]) ** 2 + (s[1] - t[1]) ** 2 >= gap2 for t in kept):
            kept.append(s)
    seeds = kept
    k = len(seeds)
    clusters = [{s} for s in seeds]
    quota = [m // k + (1 if i < m % k else 0) for i in range(k)]

    def blocked(cell, own):
        for j, cl in enumerate(clusters):
            if j == own:
                continue
            for (ox, oy) in cl:
                if (cell[0] - ox) ** 2 + (cell[1] - oy) ** 2 < gap2:
                    return True
        return False

    placed = k
    for respect_quota in (True, False):
        progress = True
        while placed < m and progress:
            progress = False
            for i in range(k):
                if respect_quota and len(clusters[i]) >= quota[i]:
                    continue
                if _extend_by_one(clusters[i], seeds[i], tissue,
                                  lambda c, i=i: blocked(c, i)):
                    placed += 1
                    progress = True
                    if placed == m:
                        break
    return set().union(*clusters)


def synth_slide_with_truth(class_id: int, n_patches: int, seed: int,
                           spec: SynthSpec = SynthSpec()) -> tuple[SlideBag, np.ndarray]:
    """Generate one bag plus the boolean mask of planted motif patches."""
    if n_patches < 4:
        raise ValidationError(f"n_patches must be >= 4, got {n_patches}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), class_id]))
    cells = _grow_blob(rng, n_patches)

    m = max(1, round(spec.motif_frac * n_patches))
    motif = _place_motif(rng, cells, class_id, m, spec)

    feat_rng = np.random.default_rng(spec.feature_seed)
    mu_bg = feat_rng.normal(size=spec.dim)
    mu_bg *= spec.background_norm / np.linalg.norm(mu_bg)
    sep_dir = feat_rng.normal(size=spec.dim)
    sep_dir /= np.linalg.norm(sep_dir)
    mu_motif = mu_bg + spec.feature_sep * sep_dir

    mask = np.array([c in motif for c in cells], dtype=bool)
    emb = np.where(mask[:, None], mu_motif[None, :], mu_bg[None, :])
    emb = emb + spec.noise * rng.normal(size=(n_patches, spec.dim))

    coords = np.asarray(cells, dtype=np.int64)
    coords -= coords.min(axis=0)  # shift into the nonnegative quadrant
    bag = SlideBag(slide_id=f"synth-c{class_id}-s{seed}", embeddings=emb,
                   coords=coords, label=class_id)
    return bag, mask


def synth_slide(class_id: int, n_patches: int, seed: int,
                spec: SynthSpec = SynthSpec()) -> SlideBag:
    """Deterministic synthetic bag; classes differ only in motif geometry."""
    return synth_slide_with_truth(class_id, n_patches, seed, spec)[0]


def synth_dataset_with_truth(n_bags: int, seed: int, spec: SynthSpec = SynthSpec(),
                             n_classes: int = 2,
                             n_patches_range: tuple[int, int] = (48, 80)
                             ) -> tuple[list[SlideBag], list[np.ndarray]]:
    """Balanced synthetic dataset (bag i gets class i mod n_classes) with motif masks."""
    master = np.random.default_rng(seed)
    bags, masks = [], []
    for i in range(n_bags):
        n = int(master.integers(n_patches_range[0], n_patches_range[1] + 1))
        bag_seed = int(master.integers(2**62))
        bag, mask = synth_slide_with_truth(i % n_classes, n, bag_seed, spec)
        bag.slide_id = f"synth-{i:04d}-c{i % n_classes}"
        bags.append(bag)
        masks.append(mask)
    return bags, masks


def synth_dataset(n_bags: int, seed: int, spec: SynthSpec = SynthSpec(),
                  n_classes: int = 2,
                  n_patches_range: tuple[int, int] = (48, 80)) -> list[SlideBag]:
    return synth_dataset_with_truth(n_bags, seed, spec, n_classes, n_patches_range)[0]


def class_names(n_classes: int) -> list[str]:
    return ["focal"] + [f"scattered_{c}" for c in range(1, n_classes)]
