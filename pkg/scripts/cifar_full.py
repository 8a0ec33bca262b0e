"""Full-length CIFAR-10 pre-train then fine-tune (opt-in, many CPU hours).

Runs 100 pre-training epochs with SpRel + AbsPos on the whole training split,
then fine-tunes classification from the saved checkpoint. A supervised
baseline with the same schedule can be added with --baseline.

    RELPATCH_DATA=/root/data python3 scripts/cifar_full.py --model vit-s/4 --out runs/full
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from relpatch.data import load_cifar10
from relpatch.training import TrainPlan, run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="vit-s/4")
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/cifar_full")
    ap.add_argument("--subset", type=int, default=None, help="first N training images (smoke runs)")
    ap.add_argument("--baseline", action="store_true", help="also train downstream-only from scratch")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    train, test = load_cifar10(args.data_dir)
    if args.subset:
        train, test = train.subset(args.subset), test.subset(args.subset)
    out = Path(args.out)
    common = dict(epochs=args.epochs, warmup_epochs=args.epochs / 10, batch_size=args.batch, seed=args.seed,
                  model=args.model)
    pre = run(TrainPlan("pretrain", out_dir=str(out / "pretrain"), **common), train, test)
    result = {"pretrain": pre.final_eval}
    print(json.dumps(result), flush=True)
    ft = run(TrainPlan("finetune", init_checkpoint=str(pre.checkpoint_path), out_dir=str(out / "finetune"),
                       **common), train, test)
    result["finetune"] = ft.final_eval
    print(json.dumps(result), flush=True)
    if args.baseline:
        base = run(TrainPlan("downstream_only", out_dir=str(out / "downstream"), **common), train, test)
        result["downstream_only"] = base.final_eval
        print(json.dumps(result), flush=True)


if __name__ == "__main__":
    main()
