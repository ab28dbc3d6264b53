"""Shared builders for the test suite."""

import numpy as np

from goat_wsi.data import SlideBag
from goat_wsi.graph import SlideGraph


def rand_bag(rng, n, d=8, grid=None, label=0, slide_id="t") -> SlideBag:
    """Random bag with unique integer coordinates on a small grid."""
    grid = grid or max(4, int(np.ceil(np.sqrt(n))) + 2)
    cells = rng.choice(grid * grid, size=n, replace=False)
    coords = np.stack([cells // grid, cells % grid], axis=1).astype(np.int64)
    return SlideBag(slide_id=slide_id, embeddings=rng.normal(size=(n, d)),
                    coords=coords, label=label)


def permute_graph(g: SlideGraph, perm: np.ndarray) -> SlideGraph:
    """Relabel nodes so that new node i is old node perm[i]; edges re-sorted."""
    inv = np.argsort(perm)
    edges = np.stack([inv[g.edges[:, 0]], inv[g.edges[:, 1]]], axis=1)
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    return SlideGraph(node_features=g.node_features[perm], edges=edges,
                      coords=g.coords[perm], label=g.label, slide_id=g.slide_id,
                      k=g.k, metric=g.metric)
