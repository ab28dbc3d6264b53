"""Graph embedding and Multi-Head Geometry Attention.

Attention is restricted to the slide graph's directed edges: every logit
lives on an edge, softmax runs over each source node's out-neighbourhood
(structurally equivalent to -inf masking of non-edges), and an edge-bias
network turns edge embeddings into per-head additive logit terms plus a
multiplicative gate on the value aggregation. Each layer also emits an
updated per-edge logit state (logits + their softmax) that the next layer
consumes as an extra additive bias.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .graph import SlideGraph


@dataclass
class EmbedParams:
    """Linear node and edge embeddings into the model width."""

    w_node: Tensor   # (d_in, d_model)
    b_node: Tensor   # (d_model,)
    w_edge: Tensor   # (d_in + 3, d_edge): feature diff ++ spatial offset ++ distance
    b_edge: Tensor   # (d_edge,)


@dataclass
class MhgaParams:
    """One attention layer: fused per-head projections plus the edge-bias net.

    w_q/w_k/w_v hold all H head projections side by side (column blocks of
    width d_head); theta is a tanh hidden layer over edge embeddings and
    w_theta2 maps it to one scalar bias per head.
    """

    h: int
    w_q: Tensor       # (d_model, d_model)
    w_k: Tensor       # (d_model, d_model)
    w_v: Tensor       # (d_model, d_model)
    w_o: Tensor       # (d_model, d_model)
    w_theta1: Tensor  # (d_edge, d_theta)
    b_theta1: Tensor  # (d_theta,)
    w_theta2: Tensor  # (d_theta, H)
    b_theta2: Tensor  # (H,)
    ln_gamma: Optional[Tensor] = None  # (d_model,) pre-norm scale, None = no norm
    ln_beta: Optional[Tensor] = None   # (d_model,) pre-norm shift

    def __post_init__(self):
        d_model = self.w_q.data.shape[0]
        if d_model % self.h != 0:
            raise ContractError(f"d_model={d_model} not divisible by H={self.h}")

    @property
    def d_model(self) -> int:
        return self.w_q.data.shape[0]

    @property
    def d_head(self) -> int:
        return self.d_model // self.h


@dataclass
class GraphEmbedding:
    node_emb: Tensor  # (N, d_model)
    edge_emb: Tensor  # (E, d_edge)


@dataclass
class AttentionState:
    """Per-edge tensors of one layer, kept for inspection and heatmaps."""

    logits: Tensor          # (E, H) pre-softmax, bias and carry-in included
    weights: Tensor         # (E, H) softmax over each source's out-edges
    gated_weights: Tensor   # (E, H) gate-modulated, renormalized per source
    edge_logits_out: Tensor  # (E, H) carry-out: logits + weights


def edge_raw_features(g: SlideGraph) -> np.ndarray:
    """Raw (E, d_in+3) edge descriptors: feature diff, spatial offset, distance.

    All three blocks are dst minus src, so self-loops are exactly zero.
    """
    src, dst = g.edges[:, 0], g.edges[:, 1]
    fdiff = g.node_features[dst] - g.node_features[src]
    offset = (g.coords[dst] - g.coords[src]).astype(np.float64)
    dist = np.sqrt(np.square(offset).sum(axis=1, keepdims=True))
    return np.concatenate([fdiff, offset, dist], axis=1)


def embed_graph(g: SlideGraph, params: EmbedParams) -> GraphEmbedding:
    """Project node features and raw edge descriptors into model widths."""
    d_in = g.node_features.shape[1]
    if params.w_node.data.shape[0] != d_in:
        raise ContractError(f"node projection expects d_in={params.w_node.data.shape[0]}, "
                            f"bag has {d_in}")
    if params.w_edge.data.shape[0] != d_in + 3:
        raise ContractError(f"edge projection expects {params.w_edge.data.shape[0]} raw "
                            f"features, graph yields {d_in + 3}")
    x = Tensor(g.node_features)
    node_emb = ad.add(ad.matmul(x, params.w_node), params.b_node)
    raw = Tensor(edge_raw_features(g))
    edge_emb = ad.add(ad.matmul(raw, params.w_edge), params.b_edge)
    return GraphEmbedding(node_emb=node_emb, edge_emb=edge_emb)


def edge_bias(edge_emb: Tensor, params: MhgaParams) -> Tensor:
    """E_theta: per-head scalar bias per edge, via a tanh hidden layer."""
    hidden = ad.tanh(ad.add(ad.matmul(edge_emb, params.w_theta1), params.b_theta1))
    return ad.add(ad.matmul(hidden, params.w_theta2), params.b_theta2)


def attention_logits(q: Tensor, k: Tensor, e_theta: Tensor, edges: np.ndarray,
                     n_heads: int) -> Tensor:
    """(E, H) logits: scaled per-head query-key dot products on edges, plus bias."""
    n, d_model = q.data.shape
    d_head = d_model // n_heads
    e = edges.shape[0]
    qe = ad.reshape(ad.gather_rows(q, edges[:, 0]), (e, n_heads, d_head))
    ke = ad.reshape(ad.gather_rows(k, edges[:, 1]), (e, n_heads, d_head))
    dots = ad.tsum(ad.mul(qe, ke), axis=2)
    scaled = ad.mul(dots, Tensor(1.0 / np.sqrt(d_head)))
    return ad.add(scaled, e_theta)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization built from primitive ops."""
    d = x.data.shape[1]
    mu = ad.mul(ad.tsum(x, axis=1, keepdims=True), Tensor(1.0 / d))
    xm = ad.sub(x, mu)
    var = ad.mul(ad.tsum(ad.mul(xm, xm), axis=1, keepdims=True), Tensor(1.0 / d))
    xn = ad.div(xm, ad.sqrt(ad.add(var, Tensor(eps))))
    return ad.add(ad.mul(xn, gamma), beta)


def mhga_layer(emb: GraphEmbedding, edges: np.ndarray, params: MhgaParams,
               prev_edge_logits: Optional[Tensor] = None,
               mode: str = "gated") -> tuple[Tensor, Tensor, AttentionState]:
    """One geometry-attention layer over the graph's directed edges.

    Per head: softmax the biased logits over each source's out-edges; in
    ``gated`` mode multiply by the softmaxed edge-bias gate and renormalize,
    in ``plain`` mode use the logit softmax directly. Values are gathered
    from edge destinations, mixed by those weights, concatenated across
    heads, projected by w_o, and added to the input (residual). The carry-out
    edge state is logits + their softmax. If ln params are present the input
    is layer-normalized first (pre-norm); the residual always adds the raw
    input.
    """
    if mode not in ("gated", "plain"):
        raise ContractError(f"unknown attention mode {mode!r}")
    x = emb.node_emb
    n, d_model = x.data.shape
    e = edges.shape[0]
    h, d_head = params.h, params.d_head
    src = edges[:, 0]
    if np.bincount(src, minlength=n).min() < 1:
        raise ContractError("every node needs at least one out-edge (self-loops missing?)")
    if prev_edge_logits is not None and prev_edge_logits.data.shape != (e, h):
        raise ContractError(f"prev_edge_logits shape {prev_edge_logits.data.shape} "
                            f"does not match (|edges|={e}, H={h})")

    pre = x
    if params.ln_gamma is not None:
        pre = layer_norm(x, params.ln_gamma, params.ln_beta)

    q = ad.matmul(pre, params.w_q)
    k = ad.matmul(pre, params.w_k)
    v = ad.matmul(pre, params.w_v)
    e_theta = edge_bias(emb.edge_emb, params)

    logits = attention_logits(q, k, e_theta, edges, h)
    if prev_edge_logits is not None:
        logits = ad.add(logits, prev_edge_logits)

    a = ad.segment_softmax(logits, src, n)
    if mode == "gated":
        gate = ad.segment_softmax(e_theta, src, n)
        ag = ad.mul(a, gate)
        denom = ad.segment_sum(ag, src, n)
        w = ad.div(ag, ad.gather_rows(denom, src))
    else:
        w = a

    ve = ad.reshape(ad.gather_rows(v, edges[:, 1]), (e, h, d_head))
    mixed = ad.mul(ve, ad.reshape(w, (e, h, 1)))
    out_heads = ad.segment_sum(mixed, src, n)
    out = ad.matmul(ad.reshape(out_heads, (n, d_model)), params.w_o)
    node_out = ad.add(x, out)

    edge_logits_out = ad.add(logits, a)
    state = AttentionState(logits=logits, weights=a, gated_weights=w,
                           edge_logits_out=edge_logits_out)
    return node_out, edge_logits_out, state
