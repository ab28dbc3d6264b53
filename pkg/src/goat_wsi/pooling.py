"""Gated global attention pooling, baseline poolers, and the classifier head.

The slide embedding is a convex combination of node embeddings whose weights
come from a gated two-branch scorer (tanh content branch times sigmoid gate
branch). Baselines swap that for coordinatewise max, the arithmetic mean, or
the same gated pooling applied directly to ungraphed features (ABMIL).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

POOL_MODES = ("max", "mean", "abmil")


@dataclass
class PoolingParams:
    w: Tensor  # (1, d_attn)
    v: Tensor  # (d_attn, d_model)
    u: Tensor  # (d_attn, d_model)


@dataclass
class HeadParams:
    w1: Tensor     # (d_model, d_ffn)
    b1: Tensor     # (d_ffn,)
    w2: Tensor     # (d_ffn, d_model)
    b2: Tensor     # (d_model,)
    w_cls: Tensor  # (d_model, n_classes)
    b_cls: Tensor  # (n_classes,)


def gated_attention_scores(h: Tensor, p: PoolingParams) -> Tensor:
    """Per-node pooling weights: softmax_i of w @ (tanh(v h_i) * sigm(u h_i))."""
    ht = ad.transpose(h)                      # (d_model, N)
    gated = ad.mul(ad.tanh(ad.matmul(p.v, ht)), ad.sigmoid(ad.matmul(p.u, ht)))
    scores = ad.matmul(p.w, gated)            # (1, N)
    return ad.reshape(ad.softmax_lastdim(scores), (h.data.shape[0],))


def pool(h: Tensor, alpha: Tensor) -> Tensor:
    """Weighted sum of node embeddings; weights must already sum to one."""
    n = h.data.shape[0]
    if alpha.data.shape != (n,):
        raise ContractError(f"alpha shape {alpha.data.shape} does not match {n} nodes")
    if abs(float(alpha.data.sum()) - 1.0) > 1e-8:
        raise ContractError(f"pooling weights sum to {alpha.data.sum():.10f}, expected 1")
    out = ad.matmul(ad.reshape(alpha, (1, n)), h)
    return ad.reshape(out, (h.data.shape[1],))


def classify(h_slide: Tensor, p: HeadParams) -> Tensor:
    """Logits = Linear(FFN(h_slide)); softmax is the loss's business."""
    x = ad.reshape(h_slide, (1, h_slide.data.shape[-1]))
    hid = ad.relu(ad.add(ad.matmul(x, p.w1), p.b1))
    ffn = ad.add(ad.matmul(hid, p.w2), p.b2)
    logits = ad.add(ad.matmul(ffn, p.w_cls), p.b_cls)
    return ad.reshape(logits, (p.w_cls.data.shape[1],))


def baseline_pool(h: Tensor, mode: str,
                  p: Optional[PoolingParams] = None) -> Tensor:
    """Table-style baseline slide embeddings: max, mean, or ABMIL pooling."""
    if mode not in POOL_MODES:
        raise ContractError(f"unknown pooling mode {mode!r}, expected one of {POOL_MODES}")
    if mode == "max":
        return ad.amax_axis0(h)
    if mode == "mean":
        n = h.data.shape[0]
        return ad.mul(ad.tsum(h, axis=0), Tensor(1.0 / n))
    if p is None:
        raise ContractError("abmil pooling requires PoolingParams")
    return pool(h, gated_attention_scores(h, p))
