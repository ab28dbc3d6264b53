"""Monte Carlo cross-validation splits.

Every fold is an independent seeded shuffle cut into train/val/test by the
configured ratios. Partition sizes come from largest-remainder rounding of
the ratios against the dataset size, so they are identical across folds;
when labels are supplied the cut is class-stratified, distributing each
fixed partition size across classes by the same largest-remainder rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError


@dataclass
class SplitPlan:
    folds: list           # (train_ids, val_ids, test_ids) index-array triples
    n: int
    ratios: tuple
    seed: int


def largest_remainder(n: int, ratios) -> list:
    """Integer partition sizes for ``n`` items: floor quotas, then the units
    left over go to the largest fractional remainders (lowest index on ties)."""
    quotas = [n * r for r in ratios]
    base = [int(q) for q in quotas]
    short = n - sum(base)
    remainders = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in remainders[:short]:
        base[i] += 1
    return base


def _allocate(counts: np.ndarray, total: int, caps: np.ndarray) -> np.ndarray:
    """Spread ``total`` across classes proportionally to ``counts``, capped."""
    quota = total * counts / counts.sum()
    out = np.minimum(np.floor(quota).astype(np.int64), caps)
    remainders = quota - out
    order = sorted(range(len(counts)), key=lambda i: (-remainders[i], i))
    short = total - int(out.sum())
    while short > 0:
        progressed = False
        for i in order:
            if out[i] < caps[i]:
                out[i] += 1
                short -= 1
                progressed = True
                if short == 0:
                    break
        if not progressed:
            raise ContractError("split allocation infeasible: caps too tight")
    return out


def monte_carlo_splits(n_slides: int, folds: int = 10,
                       ratios: tuple = (0.60, 0.15, 0.25), seed: int = 0,
                       labels=None) -> SplitPlan:
    """Independent per-fold shuffles partitioned 60/15/25 (largest remainder)."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if n_slides < folds:
        raise ContractError(f"need at least as many slides ({n_slides}) as folds ({folds})")
    n_tr, n_va, n_te = largest_remainder(n_slides, ratios)

    plan = []
    for f in range(folds):
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**63 - 1), f]))
        if labels is None:
            perm = rng.permutation(n_slides)
            tr = perm[:n_tr]
            va = perm[n_tr:n_tr + n_va]
            te = perm[n_tr + n_va:]
        else:
            lab = np.asarray(labels)
            classes, counts = np.unique(lab, return_counts=True)
            tr_c = _allocate(counts.astype(np.float64), n_tr, counts)
            va_c = _allocate(counts.astype(np.float64), n_va, counts - tr_c)
            tr_parts, va_parts, te_parts = [], [], []
            for c, cls in enumerate(classes):
                idx = np.flatnonzero(lab == cls)
                idx = idx[rng.permutation(len(idx))]
                tr_parts.append(idx[:tr_c[c]])
                va_parts.append(idx[tr_c[c]:tr_c[c] + va_c[c]])
                te_parts.append(idx[tr_c[c] + va_c[c]:])
            tr = np.concatenate(tr_parts)
            va = np.concatenate(va_parts)
            te = np.concatenate(te_parts)
            # shuffle within each partition so training order is not class-blocked
            tr = tr[rng.permutation(len(tr))]
            va = va[rng.permutation(len(va))]
            te = te[rng.permutation(len(te))]
        plan.append((tr, va, te))
    return SplitPlan(folds=plan, n=n_slides, ratios=tuple(ratios), seed=seed)
