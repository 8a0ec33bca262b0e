"""Parameter overhead of the SSL heads relative to the backbone.

    python3 scripts/head_overhead.py --model vit-s/4
"""

from __future__ import annotations

import argparse
import json

from relpatch.backbone import ViTEncoder, param_count, preset
from relpatch.heads import head_overhead


def overhead_table(model: str = "vit-s/4") -> dict:
    cfg = preset(model)
    backbone = param_count(ViTEncoder(cfg, rng=0))
    heads = head_overhead(cfg.dim, cfg.grid.N)
    pairwise = heads["sp_rel"] + heads["dist"] + heads["angle"]
    return {
        "model": model,
        "backbone_params": backbone,
        "heads": heads,
        "pairwise_percent": round(100 * pairwise / backbone, 3),
        "abs_pos_percent": round(100 * heads["abs_pos"] / backbone, 3),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="vit-s/4")
    args = ap.parse_args(argv)
    print(json.dumps(overhead_table(args.model), indent=2))


if __name__ == "__main__":
    main()
