#!/usr/bin/env python3
"""Ablation battery on a trained checkpoint.

Fast, evaluation-time variants: uniform attention instead of gated,
random windows instead of saliency-guided retrieval, and a patch-count
sweep. Optionally retrains one model per pooling fraction (GMP-like,
several t values, GAP) to compare aggregation functions; that path is
slow and off by default.

Usage:
    python scripts/run_ablations.py --checkpoint runs/desk/best.ckpt \
        --data data/ [--split test] [--out ablations.json]
        [--retrain-pooling --epochs 10]
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--data", required=True)
    parser.add_argument("--split", default="test", choices=("train", "val", "test"))
    parser.add_argument("--out", default="ablations.json")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--retrain-pooling", action="store_true",
                        help="also retrain one model per pooling fraction (slow)")
    parser.add_argument("--epochs", type=int, default=10, help="epochs per pooling retrain")
    args = parser.parse_args()

    from gmic.checkpoint import model_from_checkpoint
    from gmic.data import load_dataset
    from gmic.evaluate import ablation_battery, evaluate_report
    from gmic.networks import NetworkConfig
    from gmic.training import TrainConfig, train

    dataset = load_dataset(args.data)
    split = dataset.split(args.split)
    model, meta = model_from_checkpoint(args.checkpoint)

    results = ablation_battery(model, split, seed=args.seed)
    print(json.dumps(results, indent=2))

    if args.retrain_pooling:
        net_cfg = NetworkConfig(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in meta["network"].items()})
        grid_cells = net_cfg.grid[0] * net_cfg.grid[1]
        fractions = {"gmp": 1.0 / grid_cells, "t=3%": 0.03, "t=10%": 0.10,
                     "t=20%": 0.20, "gap": 1.0}
        base = TrainConfig(**meta["train"]) if "train" in meta else TrainConfig()
        results["pooling_retrain"] = {}
        for name, t in fractions.items():
            cfg = replace(base, pool_fraction=t, epochs=args.epochs, seed=args.seed)
            run_dir = Path(args.out).parent / f"pool_{name.replace('%', '').replace('=', '')}"
            res = train(dataset.train, dataset.val, net_cfg, cfg, run_dir, log=print)
            pooled_model, _ = model_from_checkpoint(res.best_checkpoint)
            report, _ = evaluate_report(pooled_model, split, seed=args.seed)
            results["pooling_retrain"][name] = {
                "pool_fraction": t,
                "auc": report["auc"],
                "best_epoch": res.best_epoch,
            }
            print(f"pooling {name}: test AUC {report['auc']}")

    with open(args.out, "w") as f:
        json.dump(results, f, indent=2)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
