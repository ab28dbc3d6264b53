"""k-NN slide graphs and their normalized adjacency.

Each slide bag becomes a directed graph: every patch points at its k nearest
neighbours (spatial grid distance by default, feature distance optionally)
and at itself. Attention layers consume the directed edge list; the graph
convolution stack consumes the symmetrized, degree-normalized adjacency
D^{-1/2} (A + I) D^{-1/2} stored sparsely as (src, dst, weight) triples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SlideBag
from .errors import ContractError

KNN_METRICS = ("spatial_euclidean", "feature_euclidean")


@dataclass
class SlideGraph:
    """A slide bag plus its directed edge set (self-loops included).

    ``edges`` is an (E, 2) int64 array of (src, dst) pairs in lexicographic
    order — the canonical order every downstream consumer relies on.
    """

    node_features: np.ndarray
    edges: np.ndarray
    coords: np.ndarray
    label: int
    slide_id: str = ""
    k: int = 0
    metric: str = "spatial_euclidean"

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]


@dataclass
class NormAdj:
    """Sparse symmetric normalized adjacency: weight 1/sqrt(d_i d_j) per edge."""

    n_nodes: int
    edges: np.ndarray     # (E, 2) int64, lexicographically sorted, symmetric
    weights: np.ndarray   # (E,) float64, all in (0, 1]


def build_knn_graph(bag: SlideBag, k: int = 8,
                    metric: str = "spatial_euclidean") -> SlideGraph:
    """Connect every patch to its k nearest neighbours plus itself.

    Distances are Euclidean over grid coordinates (``spatial_euclidean``) or
    over embeddings (``feature_euclidean``). Distance ties are broken toward
    the lower patch index, and when the bag holds fewer than k+1 patches every
    node simply connects to all others. Brute-force O(N^2) distances — bags
    are a few thousand patches at most.
    """
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if metric not in KNN_METRICS:
        raise ContractError(f"unknown kNN metric {metric!r}, expected one of {KNN_METRICS}")
    pts = bag.coords.astype(np.float64) if metric == "spatial_euclidean" else bag.embeddings
    n = pts.shape[0]

    d2 = np.square(pts[:, None, :] - pts[None, :, :]).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    kk = min(k, n - 1)
    # stable sort keeps equal distances in index order -> lower index wins ties
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :kk]

    src = np.repeat(np.arange(n, dtype=np.int64), kk)
    dst = nearest.ravel().astype(np.int64)
    loops = np.arange(n, dtype=np.int64)
    edges = np.stack([np.concatenate([src, loops]), np.concatenate([dst, loops])], axis=1)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]

    return SlideGraph(node_features=bag.embeddings, edges=edges, coords=bag.coords,
                      label=bag.label, slide_id=bag.slide_id, k=k, metric=metric)


def normalize_adjacency(g: SlideGraph) -> NormAdj:
    """Symmetrize the edge set, force self-loops, and degree-normalize.

    Weights are 1/sqrt(d_src * d_dst) where degrees count the symmetrized
    edges including the self-loop, i.e. the operator D^{-1/2}(A + I)D^{-1/2}.
    Idempotent on an already symmetric, self-looped edge set.
    """
    n = g.n_nodes
    loops = np.stack([np.arange(n, dtype=np.int64)] * 2, axis=1)
    und = np.unique(np.vstack([g.edges, g.edges[:, ::-1], loops]), axis=0)
    deg = np.bincount(und[:, 0], minlength=n).astype(np.float64)
    weights = 1.0 / np.sqrt(deg[und[:, 0]] * deg[und[:, 1]])
    return NormAdj(n_nodes=n, edges=und, weights=weights)


def graph_stats(g: SlideGraph) -> dict:
    """Summary counts for CLI reporting: sizes, degree, undirected components."""
    n = g.n_nodes
    nonloop = g.edges[g.edges[:, 0] != g.edges[:, 1]]
    adj: list[list[int]] = [[] for _ in range(n)]
    for s, d in nonloop:
        adj[int(s)].append(int(d))
        adj[int(d)].append(int(s))
    seen = np.zeros(n, dtype=bool)
    components = 0
    for start in range(n):
        if seen[start]:
            continue
        components += 1
        stack = [start]
        seen[start] = True
        while stack:
            for nb in adj[stack.pop()]:
                if not seen[nb]:
                    seen[nb] = True
                    stack.append(nb)
    return {
        "n_nodes": n,
        "n_edges": int(g.n_edges),
        "k": g.k,
        "metric": g.metric,
        "avg_out_degree": float(g.n_edges) / n,
        "components": components,
    }
