"""Command-line surface: synth, build-graph, train, eval, heatmap.

Every run first echoes its resolved configuration as a JSON line so logs are
self-describing. Seeds resolve in precedence order: --seed flag, config
file, the GOAT_SEED environment variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ABLATIONS, ModelConfig
from .data import class_names, load_dataset, load_slide_bag, save_dataset, \
    synth_dataset_with_truth
from .errors import GoatError
from .graph import KNN_METRICS, build_knn_graph, graph_stats
from .interpret import make_heatmap_record, render_heatmap
from .model import GoatModel
from .train import evaluate_checkpoint, prepare_graphs, train


def _resolve_seed(args, file_cfg: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    if "seed" in file_cfg:
        return int(file_cfg["seed"])
    env = os.environ.get("GOAT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise GoatError(f"GOAT_SEED must be an integer, got {env!r}") from None
    return 0


def _echo(command: str, config: dict) -> None:
    print(json.dumps({"command": command, "resolved_config": config}, sort_keys=True))


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise GoatError(f"cannot read config file {path}: {e}") from e
    if not isinstance(doc, dict):
        raise GoatError(f"config file {path} must hold a JSON object")
    return doc


def _build_model_config(args, n_classes: int, d_in: int) -> ModelConfig:
    doc = _load_config_file(getattr(args, "config", None))
    doc["seed"] = _resolve_seed(args, doc)
    doc.setdefault("n_classes", n_classes)
    doc.setdefault("d_in", d_in)
    if getattr(args, "ablation", None):
        doc.update(ABLATIONS[args.ablation])
        doc.pop("pool_mode", None)
    for flag in ("k", "knn_metric", "folds", "epochs"):
        v = getattr(args, flag, None)
        if v is not None:
            doc[flag] = v
    return ModelConfig.from_dict(doc)


def cmd_synth(args) -> int:
    cfg = dict(n_bags=args.n_bags, n_classes=args.classes,
               seed=_resolve_seed(args, {}),
               n_patches_range=[args.patches_min, args.patches_max])
    _echo("synth", cfg)
    bags, masks = synth_dataset_with_truth(
        args.n_bags, seed=cfg["seed"], n_classes=args.classes,
        n_patches_range=(args.patches_min, args.patches_max))
    out = Path(args.out_dir)
    manifest = save_dataset(bags, class_names(args.classes), out)
    truth = {b.slide_id: {"label": int(b.label),
                          "motif": [int(v) for v in m]}
             for b, m in zip(bags, masks)}
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    print(json.dumps({"dataset": str(manifest), "slides": len(bags),
                      "ground_truth": str(out / "ground_truth.json")}))
    return 0


def cmd_build_graph(args) -> int:
    cfg = dict(k=args.k, knn_metric=args.knn_metric)
    _echo("build-graph", cfg)
    if args.slide:
        bags = [load_slide_bag(args.slide)]
    else:
        bags = load_dataset(args.dataset).bags
    for bag in bags:
        g = build_knn_graph(bag, k=args.k, metric=args.knn_metric)
        print(json.dumps({"slide_id": bag.slide_id, **graph_stats(g)}))
    return 0


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    config = _build_model_config(args, n_classes=len(ds.classes),
                                 d_in=ds.bags[0].dim)
    _echo("train", config.to_dict())
    payload, report = train(ds.bags, config,
                            progress=lambda o: print(json.dumps(o.to_dict()),
                                                     file=sys.stderr))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(out / "checkpoint.goat", config, payload["params"],
                           extra=payload["extra"])
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(json.dumps({"checkpoint": str(ckpt), "report": str(out / "report.json"),
                      "mean_accuracy": report.mean_accuracy,
                      "mean_auc": report.mean_auc}))
    return 1 if report.any_aborted else 0


def cmd_eval(args) -> int:
    config, params, extra = load_checkpoint(args.checkpoint)
    _echo("eval", config.to_dict())
    ds = load_dataset(args.dataset)
    result = evaluate_checkpoint(config, params, extra, ds.bags)
    text = json.dumps(result, indent=2) + "\n"
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(text)
    print(text, end="")
    return 0


def cmd_heatmap(args) -> int:
    config, params, extra = load_checkpoint(args.checkpoint)
    _echo("heatmap", config.to_dict())
    bag = load_slide_bag(args.slide)
    model = GoatModel(config)
    model.load_state_dict(params)
    graphs, adjs = prepare_graphs([bag], config)
    logits, record = model.forward(graphs[0], adjs[0])
    from .train import softmax_scores
    rec = make_heatmap_record(bag.slide_id, bag.coords, record.alpha,
                              softmax_scores(logits.data), k=args.top_k)
    out = Path(args.out_dir)
    png, sidecar = render_heatmap(rec, out / f"{bag.slide_id}.png")
    print(json.dumps({"heatmap": str(png), "sidecar": str(sidecar),
                      "predicted_class": rec.predicted_class,
                      "top_k": rec.top_k}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="goat",
        description="Geometry-aware graph-attention pipeline for slide bags")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (falls back to GOAT_SEED, then 0)")

    p = sub.add_parser("synth", help="generate a synthetic geometric dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-bags", type=int, default=200)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--patches-min", type=int, default=48)
    p.add_argument("--patches-max", type=int, default=80)
    add_seed(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-graph", help="build k-NN graphs and print stats")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", help="dataset manifest JSON")
    src.add_argument("--slide", help="single slide manifest JSON")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--knn-metric", choices=KNN_METRICS, default="spatial_euclidean")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train with Monte Carlo cross-validation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON file with ModelConfig fields")
    p.add_argument("--ablation", choices=sorted(ABLATIONS))
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--knn-metric", dest="knn_metric", choices=KNN_METRICS,
                   default=None)
    add_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a checkpoint on its test fold")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="render attention heatmap for one slide")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--slide", required=True, help="slide manifest JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--top-k", type=int, default=8)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GoatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
