"""Training and evaluation harness.

Bags vary in patch count, so the batch is one slide: each step runs a taped
forward, backpropagates the cross-entropy loss, and applies one Adam update.
Every Monte Carlo fold trains an independently initialized model on its own
train split, selects the epoch by validation accuracy (patience-limited),
and reports test accuracy/AUC at that epoch. Graphs are built once and
shared across folds. A fold whose loss or gradients go non-finite is marked
aborted with its diagnostic instead of killing the run.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import ModelConfig
from .errors import ContractError, NumericsError, TrainingError
from .graph import build_knn_graph, normalize_adjacency
from .metrics import MetricUndefinedError, accuracy, auc
from .model import GoatModel
from .optim import Adam, grads_by_name
from .splits import monte_carlo_splits


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """-log softmax(logits)[label], stabilized by a detached max shift."""
    n_cls = logits.data.shape[-1]
    if not 0 <= label < n_cls:
        raise ContractError(f"label {label} outside [0, {n_cls})")
    z = ad.reshape(logits, (1, n_cls))
    shift = Tensor(float(logits.data.max()))          # constant: exact for gradients
    exps = ad.exp(ad.sub(z, shift))
    lse = ad.add(ad.log(ad.tsum(exps)), shift)
    onehot = np.zeros((1, n_cls))
    onehot[0, label] = 1.0
    picked = ad.tsum(ad.mul(z, Tensor(onehot)))
    return ad.sub(lse, picked)


def softmax_scores(logit_values: np.ndarray) -> np.ndarray:
    e = np.exp(logit_values - logit_values.max())
    return e / e.sum()


@dataclass
class FoldOutcome:
    fold: int
    accuracy: float | None = None
    auc: float | None = None
    best_epoch: int = -1
    val_accuracy: float | None = None
    test_ids: list = field(default_factory=list)
    preds: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    def to_dict(self) -> dict:
        return dict(fold=self.fold, accuracy=self.accuracy, auc=self.auc,
                    best_epoch=self.best_epoch, val_accuracy=self.val_accuracy,
                    test_ids=list(map(int, self.test_ids)),
                    preds=list(map(int, self.preds)),
                    scores=[[float(s) for s in row] for row in self.scores],
                    aborted=self.aborted, abort_reason=self.abort_reason)


@dataclass
class EvalReport:
    config: dict
    folds: list                      # FoldOutcome.to_dict() entries
    mean_accuracy: float | None
    mean_auc: float | None
    n_slides: int
    elapsed_s: float = 0.0

    def to_dict(self) -> dict:
        return dict(config=self.config, folds=self.folds,
                    mean_accuracy=self.mean_accuracy, mean_auc=self.mean_auc,
                    n_slides=self.n_slides, elapsed_s=self.elapsed_s)

    @property
    def any_aborted(self) -> bool:
        return any(f["aborted"] for f in self.folds)


def prepare_graphs(bags, config: ModelConfig):
    """Build each slide's graph (and normalized adjacency if the stack needs it)."""
    graphs = [build_knn_graph(b, k=config.k, metric=config.knn_metric) for b in bags]
    adjs = [normalize_adjacency(g) for g in graphs] if config.use_tagcn else [None] * len(bags)
    return graphs, adjs


def evaluate_ids(model: GoatModel, graphs, adjs, ids, labels):
    """Accuracy, AUC (None if undefined), predictions and class scores on ids."""
    preds, scores = [], []
    for i in ids:
        logits, _ = model.forward(graphs[i], adjs[i])
        s = softmax_scores(logits.data)
        preds.append(int(np.argmax(s)))
        scores.append(s)
    got = np.asarray(preds)
    want = np.asarray([labels[i] for i in ids])
    acc = accuracy(got, want)
    try:
        auc_val = auc(np.asarray(scores), want)
    except MetricUndefinedError:
        auc_val = None
    return acc, auc_val, preds, [list(map(float, s)) for s in scores]


def _train_one_fold(fold: int, splits, graphs, adjs, labels,
                    config: ModelConfig) -> tuple:
    """Returns (FoldOutcome, best params state dict or None)."""
    tr_ids, va_ids, te_ids = splits.folds[fold]
    init_seed = (config.seed * 1000003 + fold) & (2**63 - 1)
    model = GoatModel(config, init_seed=init_seed)
    opt = Adam(model.params, lr=config.lr, weight_decay=config.weight_decay,
               beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    outcome = FoldOutcome(fold=fold, test_ids=list(map(int, te_ids)))

    # Selection: best validation accuracy, ties resolved toward the later
    # epoch (accuracy plateaus early on separable folds and a strict ">"
    # would freeze a barely-trained snapshot). Patience counts epochs since
    # the last tie-or-improvement.
    best_val, best_epoch, best_state = -1.0, -1, None
    try:
        for epoch in range(config.epochs):
            rng = np.random.default_rng(
                np.random.SeedSequence([config.seed & (2**63 - 1), 0xE, fold, epoch]))
            for i in tr_ids[rng.permutation(len(tr_ids))]:
                with Tape() as tape:
                    logits, _ = model.forward(graphs[i], adjs[i])
                    loss = cross_entropy(logits, int(labels[i]))
                    tape.backward(loss)
                opt.step(grads_by_name(model.params, tape.gradients))
            val_acc, _, _, _ = evaluate_ids(model, graphs, adjs, va_ids, labels)
            if val_acc >= best_val:
                best_val, best_epoch = val_acc, epoch
                best_state = model.state_dict()
            elif epoch - best_epoch >= config.patience:
                break
    except (NumericsError, TrainingError) as e:
        outcome.aborted = True
        outcome.abort_reason = f"{type(e).__name__}: {e}"
        return outcome, None

    model.load_state_dict(best_state)
    acc, auc_val, preds, scores = evaluate_ids(model, graphs, adjs, te_ids, labels)
    outcome.accuracy = acc
    outcome.auc = auc_val
    outcome.best_epoch = best_epoch
    outcome.val_accuracy = best_val
    outcome.preds = preds
    outcome.scores = scores
    return outcome, best_state


def train(bags, config: ModelConfig, progress=None) -> tuple:
    """Full Monte Carlo protocol. Returns (checkpoint payload, EvalReport).

    The checkpoint payload carries the best-validation fold's parameters
    (ties to the lower fold index) plus that fold's index, so evaluating the
    checkpoint against the same dataset and seed reproduces the reported
    test metrics exactly.
    """
    if not bags:
        raise ContractError("dataset is empty")
    labels = np.asarray([b.label for b in bags])
    if len(np.unique(labels)) < 2:
        raise ContractError("training needs at least two classes present")
    if int(labels.max()) >= config.n_classes:
        raise ContractError(f"label {int(labels.max())} outside configured "
                            f"n_classes={config.n_classes}")

    t0 = time.perf_counter()
    graphs, adjs = prepare_graphs(bags, config)
    splits = monte_carlo_splits(len(bags), folds=config.folds, seed=config.seed,
                                labels=labels)

    outcomes, states = [], []
    for fold in range(config.folds):
        outcome, state = _train_one_fold(fold, splits, graphs, adjs, labels, config)
        outcomes.append(outcome)
        states.append(state)
        if progress is not None:
            progress(outcome)

    ok = [o for o in outcomes if not o.aborted]
    mean_acc = float(np.mean([o.accuracy for o in ok])) if ok else None
    aucs = [o.auc for o in ok if o.auc is not None]
    mean_auc = float(np.mean(aucs)) if aucs else None
    report = EvalReport(config=config.to_dict(),
                        folds=[o.to_dict() for o in outcomes],
                        mean_accuracy=mean_acc, mean_auc=mean_auc,
                        n_slides=len(bags),
                        elapsed_s=round(time.perf_counter() - t0, 3))

    best_fold = -1
    best_val = -1.0
    for o in outcomes:
        if not o.aborted and o.val_accuracy is not None and o.val_accuracy > best_val:
            best_val, best_fold = o.val_accuracy, o.fold
    if best_fold < 0:
        raise TrainingError("every fold aborted; nothing to checkpoint — "
                            + "; ".join(o.abort_reason for o in outcomes))
    payload = {
        "params": states[best_fold],
        "extra": {"fold_index": best_fold, "val_accuracy": best_val,
                  "test_accuracy": outcomes[best_fold].accuracy,
                  "test_auc": outcomes[best_fold].auc},
    }
    return payload, report


def evaluate_checkpoint(config: ModelConfig, params: dict, extra: dict, bags) -> dict:
    """Re-evaluate a checkpointed model on its fold's test split."""
    labels = np.asarray([b.label for b in bags])
    graphs, adjs = prepare_graphs(bags, config)
    splits = monte_carlo_splits(len(bags), folds=config.folds, seed=config.seed,
                                labels=labels)
    fold = int(extra.get("fold_index", 0))
    if not 0 <= fold < config.folds:
        raise ContractError(f"checkpoint fold_index {fold} outside 0..{config.folds - 1}")
    model = GoatModel(config)
    model.load_state_dict(params)
    _, _, te_ids = splits.folds[fold]
    acc, auc_val, preds, scores = evaluate_ids(model, graphs, adjs, te_ids, labels)
    return {"fold_index": fold, "accuracy": acc, "auc": auc_val,
            "test_ids": list(map(int, te_ids)), "preds": preds, "scores": scores}
