"""The assembled slide classifier and its parameter store.

Parameters live in one ordered name -> Tensor dict so checkpointing, the
optimizer, and ablation accounting all see the same flat manifest. Which
groups exist follows the ablation flags: the attention trunk (with its edge
embedding and per-layer pre-norm), the graph-convolution stack, and the
gated pooling head are each created only when their flag is on, so parameter
counts track the A..E ladder exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attention import (EmbedParams, GraphEmbedding, MhgaParams, edge_raw_features,
                        mhga_layer)
from .config import ModelConfig
from .errors import ContractError
from .graph import NormAdj, SlideGraph, normalize_adjacency
from .pooling import HeadParams, PoolingParams, baseline_pool, classify, \
    gated_attention_scores, pool
from .tagcn import TagcnLayerParams, TagcnParams, gcn_stack


@dataclass
class AttentionRecord:
    """Detached per-slide attention, kept for reports and heatmaps."""

    alpha: np.ndarray              # (N,) pooling weights (uniform when GAP is off)
    edge_weights: list             # per MHGA layer: (E, H) combined weights
    edges: np.ndarray              # (E, 2) the edges those weights live on


class GoatModel:
    """Ablation-aware classifier over slide graphs."""

    def __init__(self, config: ModelConfig, init_seed: int | None = None):
        self.config = config
        seed = config.seed if init_seed is None else init_seed
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), 0x90A7]))
        self.params: dict[str, Tensor] = {}
        c = config

        def weight(name, shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[name] = Tensor(rng.uniform(-bound, bound, size=shape),
                                       requires_grad=True)

        def zeros(name, shape):
            self.params[name] = Tensor(np.zeros(shape), requires_grad=True)

        def ones(name, shape):
            self.params[name] = Tensor(np.ones(shape), requires_grad=True)

        weight("embed.w_node", (c.d_in, c.d_model), c.d_in)
        zeros("embed.b_node", (c.d_model,))
        if c.use_mhga:
            weight("embed.w_edge", (c.d_in + 3, c.d_edge), c.d_in + 3)
            zeros("embed.b_edge", (c.d_edge,))
            for i in range(c.mhga_layers):
                pre = f"mhga.{i}."
                for nm in ("w_q", "w_k", "w_v", "w_o"):
                    weight(pre + nm, (c.d_model, c.d_model), c.d_model)
                weight(pre + "w_theta1", (c.d_edge, c.d_theta), c.d_edge)
                zeros(pre + "b_theta1", (c.d_theta,))
                weight(pre + "w_theta2", (c.d_theta, c.h), c.d_theta)
                zeros(pre + "b_theta2", (c.h,))
                ones(pre + "ln_gamma", (c.d_model,))
                zeros(pre + "ln_beta", (c.d_model,))
        if c.use_tagcn:
            for i in range(c.f):
                for p in range(c.p + 1):
                    weight(f"tagcn.{i}.w{p}", (c.d_model, c.d_model), c.d_model)
                zeros(f"tagcn.{i}.bias", (c.d_model,))
        if self.pool_mode in ("gap", "abmil"):
            weight("pool.w", (1, c.d_attn), c.d_attn)
            weight("pool.v", (c.d_attn, c.d_model), c.d_model)
            weight("pool.u", (c.d_attn, c.d_model), c.d_model)
        weight("head.w1", (c.d_model, c.d_ffn), c.d_model)
        zeros("head.b1", (c.d_ffn,))
        weight("head.w2", (c.d_ffn, c.d_model), c.d_ffn)
        zeros("head.b2", (c.d_model,))
        weight("head.w_cls", (c.d_model, c.n_classes), c.d_model)
        zeros("head.b_cls", (c.n_classes,))

    @property
    def pool_mode(self) -> str:
        return self.config.pool_mode

    # -- parameter views ----------------------------------------------------

    def _mhga_params(self, i: int) -> MhgaParams:
        p = self.params
        pre = f"mhga.{i}."
        return MhgaParams(h=self.config.h, w_q=p[pre + "w_q"], w_k=p[pre + "w_k"],
                          w_v=p[pre + "w_v"], w_o=p[pre + "w_o"],
                          w_theta1=p[pre + "w_theta1"], b_theta1=p[pre + "b_theta1"],
                          w_theta2=p[pre + "w_theta2"], b_theta2=p[pre + "b_theta2"],
                          ln_gamma=p[pre + "ln_gamma"], ln_beta=p[pre + "ln_beta"])

    def _tagcn_params(self) -> TagcnParams:
        c, p = self.config, self.params
        layers = [TagcnLayerParams([p[f"tagcn.{i}.w{q}"] for q in range(c.p + 1)],
                                   p[f"tagcn.{i}.bias"]) for i in range(c.f)]
        return TagcnParams(layers, residual=c.use_residual)

    def _pooling_params(self) -> PoolingParams:
        p = self.params
        return PoolingParams(w=p["pool.w"], v=p["pool.v"], u=p["pool.u"])

    def _head_params(self) -> HeadParams:
        p = self.params
        return HeadParams(w1=p["head.w1"], b1=p["head.b1"], w2=p["head.w2"],
                          b2=p["head.b2"], w_cls=p["head.w_cls"], b_cls=p["head.b_cls"])

    def _embed_params(self) -> EmbedParams:
        p = self.params
        return EmbedParams(w_node=p["embed.w_node"], b_node=p["embed.b_node"],
                           w_edge=p.get("embed.w_edge"), b_edge=p.get("embed.b_edge"))

    # -- forward ------------------------------------------------------------

    def forward(self, graph: SlideGraph, adj: NormAdj | None = None
                ) -> tuple[Tensor, AttentionRecord]:
        c = self.config
        if graph.node_features.shape[1] != c.d_in:
            raise ContractError(f"model expects d_in={c.d_in}, slide has "
                                f"{graph.node_features.shape[1]}")
        n = graph.n_nodes
        x = Tensor(graph.node_features)
        h = ad.add(ad.matmul(x, self.params["embed.w_node"]), self.params["embed.b_node"])

        edge_weights = []
        if c.use_mhga:
            raw = Tensor(edge_raw_features(graph))
            eemb = ad.add(ad.matmul(raw, self.params["embed.w_edge"]),
                          self.params["embed.b_edge"])
            carry = None
            for i in range(c.mhga_layers):
                h, carry, state = mhga_layer(GraphEmbedding(h, eemb), graph.edges,
                                             self._mhga_params(i), prev_edge_logits=carry)
                edge_weights.append(state.gated_weights.data.copy())

        if c.use_tagcn:
            if adj is None:
                adj = normalize_adjacency(graph)
            h = gcn_stack(h, adj, self._tagcn_params())

        if self.pool_mode in ("gap", "abmil"):
            alpha_t = gated_attention_scores(h, self._pooling_params())
            slide = pool(h, alpha_t)
            alpha = alpha_t.data.copy()
        else:
            slide = baseline_pool(h, self.pool_mode)
            alpha = np.full(n, 1.0 / n)

        logits = classify(slide, self._head_params())
        return logits, AttentionRecord(alpha=alpha, edge_weights=edge_weights,
                                       edges=graph.edges)

    # -- bookkeeping ----------------------------------------------------------

    def parameter_manifest(self) -> list:
        return [(name, tuple(t.data.shape)) for name, t in self.params.items()]

    def param_count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def state_dict(self) -> dict:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ContractError(f"state dict mismatch: missing {sorted(missing)}, "
                                f"unexpected {sorted(extra)}")
        for name, t in self.params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ContractError(f"parameter {name}: shape {arr.shape} != "
                                    f"{t.data.shape}")
            t.data = arr.copy()
