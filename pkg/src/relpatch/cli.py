"""Command-line entry point: ``relpatch <subcommand> [flags]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .backbone import MODEL_PRESETS, ViTEncoder, forward, preset
from .data import ImageSet, SyntheticSpec, load_cifar10, make_synthetic
from .errors import ConfigurationError, RelPatchError
from .heads import SSLHeads, TaskSet, total_loss
from .numerics import grad_check
from .patch_grid import Lattice, PatchGrid, extract_megapatches, sample_megapatch_layout
from .ssl_targets import build_target_set, stack_targets, targets_to_json
from .training import evaluate, parse_config_file, plan_from_mapping, run

log = logging.getLogger("relpatch")

_REGIME_OF = {"pretrain": "pretrain", "finetune": "finetune", "downstream": "downstream_only"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file, or a model preset name")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--tasks", help="comma list: sp_rel,abs_pos,dist,angle,classification")
    p.add_argument("--megapatch", type=int, metavar="M")
    p.add_argument("--no-pe", action="store_true", help="disable positional embeddings")
    p.add_argument("--shuffle", action="store_true", help="shuffle patches and permute labels")
    p.add_argument("--checkpoint", help="checkpoint to initialize from (finetune) or evaluate (eval)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--deterministic", action="store_true", help="force single-threaded sequential execution")
    p.add_argument("--data", default="cifar10",
                   help="cifar10 (root from --data-dir or $RELPATCH_DATA) or synthetic:<generator>")
    p.add_argument("--data-dir")
    p.add_argument("--subset", type=int, help="use the first N training images")
    p.add_argument("--eval-subset", type=int, help="use the first N test images")
    p.add_argument("--model", help="model preset (default tiny)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relpatch", description="Patch-relation self-supervision for ViTs.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, help_ in (("pretrain", "SSL pre-training without positional embeddings"),
                        ("finetune", "classification fine-tuning from a checkpoint"),
                        ("downstream", "joint SSL + classification from scratch"),
                        ("eval", "evaluate a checkpoint")):
        _common(sub.add_parser(name, help=help_))
    lab = sub.add_parser("labels", help="dump SSL targets as JSON")
    lab.add_argument("--rows", type=int, required=True)
    lab.add_argument("--cols", type=int, required=True)
    lab.add_argument("--megapatch", type=int, metavar="M")
    lab.add_argument("--seed", type=int, default=0)
    lab.add_argument("--out")
    gc = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    gc.add_argument("--config", default="micro", help="model preset name or key=value config file")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--samples", type=int, default=None,
                    help="elements checked per tensor (default: all for micro, 6 otherwise)")
    gc.add_argument("--tol", type=float, default=1e-4)
    pl = sub.add_parser("plot", help="render a metrics CSV as an SVG line chart")
    pl.add_argument("metrics")
    pl.add_argument("--out", help="output .svg (default: next to the CSV)")
    pl.add_argument("--columns", default=None, help="comma list of metric columns")
    return parser


def _config_values(args) -> dict:
    values: dict = {}
    if args.config:
        if os.path.isfile(args.config):
            values.update(parse_config_file(args.config))
        elif args.config.lower() in MODEL_PRESETS:
            values["model"] = args.config
        else:
            raise ConfigurationError(f"--config {args.config!r} is neither a file nor a model preset")
    flags = {"seed": args.seed, "epochs": args.epochs, "batch_size": args.batch, "tasks": args.tasks,
             "megapatch_M": args.megapatch, "out_dir": args.out, "model": args.model,
             "subset": args.subset, "eval_subset": args.eval_subset}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.no_pe:
        values["use_pos_embed"] = False
    if args.shuffle:
        values["shuffle_patches"] = True
    if args.data != "cifar10" or "data" not in values:
        values["data"] = args.data
    return values


def _load_data(values: dict, data_dir, seed: int, model) -> tuple[ImageSet, ImageSet]:
    source = str(values.get("data", "cifar10"))
    if source == "cifar10":
        train, test = load_cifar10(data_dir)
    elif source.startswith("synthetic"):
        gen = source.split(":", 1)[1] if ":" in source else "colored-shapes"
        n = int(values.get("subset") or 512)
        spec = dict(resolution=model.img_h, num_classes=model.num_classes, generator=gen, channels=model.channels)
        train = make_synthetic(SyntheticSpec(seed=seed, count=n, **spec))
        test = make_synthetic(SyntheticSpec(seed=seed + 1, count=max(n // 4, 1), **spec))
    else:
        raise ConfigurationError(f"unknown data source {source!r}")
    if values.get("subset"):
        train = train.subset(int(values["subset"]))
    if values.get("eval_subset"):
        test = test.subset(int(values["eval_subset"]))
    return train, test


def _train(args, regime: str) -> int:
    values = _config_values(args)
    data_keys = {k: values.pop(k) for k in ("data", "subset", "eval_subset") if k in values}
    if args.checkpoint:
        values["init_checkpoint"] = args.checkpoint
    plan = plan_from_mapping(regime, values)
    train, test = _load_data(data_keys, args.data_dir, plan.seed, plan.model)
    report = run(plan, train, test)
    print(json.dumps({"final_eval": report.final_eval,
                      "checkpoint": str(report.checkpoint_path) if report.checkpoint_path else None,
                      "metrics": str(report.metrics_path) if report.metrics_path else None}, indent=2))
    return 0


def _eval(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("eval needs --checkpoint")
    values = _config_values(args)
    from .backbone import load_checkpoint

    cfg, _ = load_checkpoint(args.checkpoint)
    tasks = TaskSet.parse(args.tasks or str(values.get("tasks", "sp_rel,abs_pos")))
    _, test = _load_data(values, args.data_dir, args.seed or 0, cfg)
    metrics = evaluate(args.checkpoint, test, tasks, shuffle=bool(args.shuffle), megapatch_M=args.megapatch,
                       seed=args.seed or 0)
    print(json.dumps(metrics, indent=2))
    return 0


def _labels(args) -> int:
    rows, cols = args.rows, args.cols
    if args.megapatch:
        grid = PatchGrid(rows, cols, 1, 1)
        layout = sample_megapatch_layout(grid, args.megapatch, np.random.default_rng(args.seed))
        _, positions = extract_megapatches(np.zeros((1, rows, cols)), layout, 1)
        targets = build_target_set(layout.lattice, positions)
        doc = targets_to_json(targets)
        doc["layout"] = {"M": layout.M, "row_cuts": list(layout.row_cuts), "col_cuts": list(layout.col_cuts)}
    else:
        targets = build_target_set(Lattice(rows, cols))
        doc = targets_to_json(targets)
    n = targets.N
    doc["relations"] = [{"i": i, "j": j, "class": int(targets.rel[i, j])} for i in range(n) for j in range(n)]
    text = json.dumps(doc)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def _gradcheck(args) -> int:
    if os.path.isfile(args.config):
        values = parse_config_file(args.config)
        model = preset(values.get("model", "micro"))
    else:
        model = preset(args.config)
    rng = np.random.default_rng(args.seed)
    enc = ViTEncoder(model, rng=[args.seed, 0], dtype=np.float64)
    tasks = TaskSet(sp_rel=True, abs_pos=True, dist=True, angle=True, classification=True)
    heads = SSLHeads(model.dim, model.grid.N, tasks, rng=[args.seed, 1], dtype=np.float64)
    x = rng.random((2, model.channels, model.img_h, model.img_w))
    y = rng.integers(0, model.num_classes, size=2)
    targets = stack_targets(build_target_set(model.grid), 2)

    def objective():
        tokens, logits = forward(x, enc)
        return total_loss(heads, tokens, logits, targets, tasks, y).total

    samples = args.samples
    if samples is None and model != MODEL_PRESETS["micro"]:
        samples = 6
    report = grad_check(objective, {**enc.params, **heads.parameters()}, max_per_param=samples, seed=args.seed)
    ok = report.max_relative_error < args.tol
    print(f"max relative error {report.max_relative_error:.3e} at {report.worst_parameter} "
          f"({report.checked} elements) -> {'PASS' if ok else 'FAIL'} (tol {args.tol:g})")
    return 0 if ok else 1


def _plot(args) -> int:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    path = Path(args.metrics)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigurationError(f"{path} has no rows")
    skip = {"epoch", "split", "lr"}
    numeric = [c for c in rows[0] if c not in skip and any(r[c] for r in rows)]
    columns = args.columns.split(",") if args.columns else numeric
    fig, ax = plt.subplots(figsize=(7, 4))
    for split in sorted({r["split"] for r in rows}):
        sub = [r for r in rows if r["split"] == split]
        for c in columns:
            pts = [(int(r["epoch"]), float(r[c])) for r in sub if r.get(c)]
            if pts:
                ax.plot(*zip(*pts), marker="o", label=f"{split}:{c}")
    ax.set_xlabel("epoch")
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    out = Path(args.out) if args.out else path.with_suffix(".svg")
    fig.savefig(out, format="svg", bbox_inches="tight")
    plt.close(fig)
    print(out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    if getattr(args, "deterministic", False):
        # one BLAS thread: reductions then run in a fixed order
        from threadpoolctl import threadpool_limits

        threadpool_limits(1)
    try:
        if args.command in _REGIME_OF:
            return _train(args, _REGIME_OF[args.command])
        return {"eval": _eval, "labels": _labels, "gradcheck": _gradcheck, "plot": _plot}[args.command](args)
    except (RelPatchError, OSError, ValueError, IndexError) as e:
        print(f"relpatch {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
