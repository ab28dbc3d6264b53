"""Topology-adaptive graph convolution stack.

Each layer applies a polynomial filter in the normalized adjacency,
y = relu(sum_{p=0..P} A^p h W_p + b), with an optional residual skip. Powers
of A are never materialized: A^p h is computed by applying the sparse
operator p times, one gather-scale-scatter per hop. The stack runs F layers
with relu between them and none after the last, leaving signed values for
the pooling gates downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError
from .graph import NormAdj


@dataclass
class TagcnLayerParams:
    weights: list  # P+1 Tensors of (d_model, d_model), index = hop count
    bias: Tensor   # (d_model,), shared across hops


@dataclass
class TagcnParams:
    layers: list   # F TagcnLayerParams
    residual: bool = True

    @property
    def f(self) -> int:
        return len(self.layers)

    @property
    def p(self) -> int:
        return len(self.layers[0].weights) - 1


def spmv(adj: NormAdj, h: Tensor) -> Tensor:
    """Sparse operator application: (A h)[i] = sum over edges (i,j) of w_ij h[j]."""
    vals = ad.mul(ad.gather_rows(h, adj.edges[:, 1]), Tensor(adj.weights[:, None]))
    return ad.segment_sum(vals, adj.edges[:, 0], adj.n_nodes)


def tagcn_layer(h: Tensor, adj: NormAdj, layer: TagcnLayerParams,
                residual: bool = True, activation: bool = True) -> Tensor:
    """One polynomial graph-filter layer; residual skips around the filter."""
    if adj.n_nodes != h.data.shape[0]:
        raise ContractError(f"adjacency over {adj.n_nodes} nodes cannot filter "
                            f"{h.data.shape[0]} node embeddings")
    acc = ad.matmul(h, layer.weights[0])
    hp = h
    for w in layer.weights[1:]:
        hp = spmv(adj, hp)
        acc = ad.add(acc, ad.matmul(hp, w))
    acc = ad.add(acc, layer.bias)
    y = ad.relu(acc) if activation else acc
    return ad.add(y, h) if residual else y


def gcn_stack(h: Tensor, adj: NormAdj, params: TagcnParams) -> Tensor:
    """F sequential layers; relu on all but the final layer's filter output."""
    last = params.f - 1
    for i, layer in enumerate(params.layers):
        h = tagcn_layer(h, adj, layer, residual=params.residual,
                        activation=(i < last))
    return h
