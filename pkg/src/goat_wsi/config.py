"""Model and training configuration, including the ablation flag algebra.

The four ablation flags line up with the incremental model variants:

    A  all off         linear projection + mean pooling + head
    B  +use_mhga       adds the edge-biased attention trunk
    C  +use_tagcn      adds the graph-convolution stack (no residuals)
    D  +use_residual   turns on the GCN-layer residual skips
    E  +use_gap        gated attention pooling replaces the mean

Derived widths (attention pooling width, FFN width, edge-bias hidden width)
default to d_model/2, 4*d_model and d_edge when left at 0.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError
from .graph import KNN_METRICS

ABLATIONS = {
    "A": dict(use_mhga=False, use_tagcn=False, use_residual=False, use_gap=False),
    "B": dict(use_mhga=True, use_tagcn=False, use_residual=False, use_gap=False),
    "C": dict(use_mhga=True, use_tagcn=True, use_residual=False, use_gap=False),
    "D": dict(use_mhga=True, use_tagcn=True, use_residual=True, use_gap=False),
    "E": dict(use_mhga=True, use_tagcn=True, use_residual=True, use_gap=True),
}


@dataclass
class ModelConfig:
    # architecture
    d_in: int = 64
    d_model: int = 128
    d_edge: int = 16
    h: int = 4
    mhga_layers: int = 2
    f: int = 3            # TAGCN layer count
    p: int = 3            # TAGCN polynomial hops
    k: int = 8
    knn_metric: str = "spatial_euclidean"
    d_attn: int = 0       # 0 -> d_model // 2
    d_ffn: int = 0        # 0 -> 4 * d_model
    d_theta: int = 0      # 0 -> d_edge
    n_classes: int = 2
    # ablation flags (A..E in the table above)
    use_mhga: bool = True
    use_tagcn: bool = True
    use_residual: bool = True
    use_gap: bool = True
    # slide pooling: "" resolves to gap/mean from use_gap; max/abmil are the
    # remaining baseline poolers
    pool_mode: str = ""
    # optimizer / schedule
    lr: float = 2e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    patience: int = 10
    # protocol
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.d_attn == 0:
            self.d_attn = max(1, self.d_model // 2)
        if self.d_ffn == 0:
            self.d_ffn = 4 * self.d_model
        if self.d_theta == 0:
            self.d_theta = self.d_edge
        if self.d_model % self.h != 0:
            raise ConfigError(f"d_model={self.d_model} must be divisible by H={self.h}")
        if self.knn_metric not in KNN_METRICS:
            raise ConfigError(f"knn_metric must be one of {KNN_METRICS}, "
                              f"got {self.knn_metric!r}")
        if self.n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {self.n_classes}")
        if self.f < 1 or self.p < 1:
            raise ConfigError(f"F and P must be >= 1, got F={self.f} P={self.p}")
        if self.k < 1 or self.folds < 1 or self.epochs < 1:
            raise ConfigError("k, folds and epochs must all be >= 1")
        if self.pool_mode == "":
            self.pool_mode = "gap" if self.use_gap else "mean"
        if self.pool_mode not in ("gap", "mean", "max", "abmil"):
            raise ConfigError(f"pool_mode must be gap/mean/max/abmil, got {self.pool_mode!r}")
        if self.use_gap and self.pool_mode != "gap":
            raise ConfigError("use_gap=True requires pool_mode='gap'")
        if not self.use_gap and self.pool_mode == "gap":
            raise ConfigError("pool_mode='gap' requires use_gap=True")

    @classmethod
    def ablation(cls, letter: str, **overrides) -> "ModelConfig":
        if letter not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {sorted(ABLATIONS)}, got {letter!r}")
        return cls(**{**ABLATIONS[letter], **overrides})

    @property
    def ablation_name(self) -> str:
        flags = dict(use_mhga=self.use_mhga, use_tagcn=self.use_tagcn,
                     use_residual=self.use_residual, use_gap=self.use_gap)
        for letter, spec in ABLATIONS.items():
            if spec == flags:
                return letter
        return "custom"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path) -> "ModelConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(doc)
