"""Command-line entry point.

Subcommands: generate (synthetic dataset), train, sweep (hyperparameter
random search), eval (metrics report, TTA, ensembling, DSC, hybrid and
simplex combiners) and viz (saliency/ROI overlays). Configuration comes
from an optional JSON file plus flat flag overrides; --print-config
dumps the resolved config. Exit codes: 0 success, 2 configuration
error, 3 runtime numeric failure.

Heavy imports happen inside main() so --threads can cap the BLAS pool
before numpy starts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_OVERRIDE_KEYS = (
    "seed", "threads", "data_dir", "out_dir", "network_preset",
    "network.input_height", "network.input_width", "network.downsample_factor",
    "network.first_conv", "network.stage_strides", "network.block_channels",
    "network.blocks_per_stage", "network.local_variant", "network.local_channels",
    "network.local_first_conv", "network.patch_size", "network.num_patches",
    "network.embed_dim", "network.attention_dim",
    "train.learning_rate", "train.reg_weight", "train.pool_fraction", "train.epochs",
    "train.batch_size", "train.seed", "train.early_stop_patience", "train.aug_translate",
    "train.aug_scale", "train.tta_runs",
    "synth.height", "synth.width", "synth.n_train", "synth.n_val", "synth.n_test",
    "synth.prevalence_benign", "synth.prevalence_malignant", "synth.noise_octaves",
    "synth.contrast", "synth.seed",
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--print-config", action="store_true", help="dump the resolved config before running")
    for key in _OVERRIDE_KEYS:
        parser.add_argument(f"--{key}", dest=key, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmic", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render the synthetic dataset to data_dir")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train one model; writes checkpoints and metrics.csv to out_dir")
    _add_config_flags(p)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("sweep", help="hyperparameter random search")
    _add_config_flags(p)
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--top-k", type=int, default=5)

    p = sub.add_parser("eval", help="evaluate checkpoints on a split")
    _add_config_flags(p)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--tta", type=int, nargs="?", const=-1, default=0,
                   help="average this many random augmentations (default train.tta_runs)")
    p.add_argument("--ensemble", action="store_true", help="average predictions over all checkpoints")
    p.add_argument("--dsc", action="store_true", help="report DSC (thresholds tuned on the val split)")
    p.add_argument("--hybrid", metavar="READER_CSV", help="reader scores for the convex-combination sweep")
    p.add_argument("--simplex", nargs="+", metavar="SCORES_CSV",
                   help="external score files for the simplex ensemble (2 files: combined with this eval; 3: standalone)")
    p.add_argument("--scores-out", help="write per-image fusion scores CSV here")

    p = sub.add_parser("viz", help="export overlay, saliency maps, patches and a JSON record")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input PGM image")
    p.add_argument("--stem", default="viz")
    return parser


def _limit_threads(n: int) -> None:
    if n and n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(n)


def _resolve_config(args):
    from .config import build_run_config

    overrides = {key: getattr(args, key) for key in _OVERRIDE_KEYS}
    run = build_run_config(args.config, overrides)
    if args.print_config:
        print(json.dumps(run.to_json_dict(), indent=2))
    return run


def _cmd_generate(args) -> int:
    run = _resolve_config(args)
    from .data import write_dataset
    from .synth import generate

    dataset = generate(run.synth)
    out = Path(run.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out)
    n = (len(dataset.train), len(dataset.val), len(dataset.test))
    print(f"wrote {n[0]}/{n[1]}/{n[2]} train/val/test exams to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    run = _resolve_config(args)
    from .data import load_dataset
    from .training import train

    dataset = load_dataset(run.data_dir)
    result = train(dataset.train, dataset.val, run.network, run.train,
                   Path(run.out_dir), resume=args.resume, log=print)
    print(f"best epoch {result.best_epoch} (val malignant AUC {result.best_val_auc:.4f}); "
          f"checkpoints in {run.out_dir}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    run = _resolve_config(args)
    from .data import load_dataset
    from .training import random_search

    dataset = load_dataset(run.data_dir)
    out_dir = Path(run.out_dir)
    ranked = random_search(dataset.train, dataset.val, run.network, run.train,
                           args.trials, out_dir, top_k=args.top_k, log=print)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "trials.json", "w") as f:
        json.dump(ranked, f, indent=2)
    top = [tr for tr in ranked if tr["selected"]]
    print(f"{args.trials} trials done; top-{len(top)} val AUCs: "
          + ", ".join(f"{tr['val_auc']:.4f}" for tr in top))
    return EXIT_OK


def _cmd_eval(args) -> int:
    run = _resolve_config(args)
    import numpy as np

    from .checkpoint import model_from_checkpoint
    from .data import load_dataset
    from .errors import ConfigError
    from .evaluate import (breast_level_scores, breast_table_from_rows, evaluate_report,
                           predict_split, read_scores_csv, select_dsc_threshold, write_scores_csv)
    from .metrics import hybrid_sweep, simplex_grid_search

    if len(args.checkpoints) > 1 and not args.ensemble:
        raise ConfigError("multiple checkpoints require --ensemble")
    loaded = [model_from_checkpoint(p) for p in args.checkpoints]
    models = [m for m, _ in loaded]
    net_cfgs = [meta.get("network") for _, meta in loaded]
    if any(cfg != net_cfgs[0] for cfg in net_cfgs[1:]):
        raise ConfigError("checkpoints have incompatible network configs")
    model_arg = models if len(models) > 1 else models[0]

    dataset = load_dataset(run.data_dir)
    split = dataset.split(args.split)
    tta = run.train.tta_runs if args.tta == -1 else args.tta

    dsc_thresholds = None
    if args.dsc:
        val_records = predict_split(model_arg, dataset.val, seed=run.seed)
        dsc_thresholds = {
            cls: select_dsc_threshold(val_records, dataset.val, cls)
            for cls in ("benign", "malignant")
        }
    report, records = evaluate_report(
        model_arg, split, tta_runs=tta, seed=run.seed, dsc_thresholds=dsc_thresholds,
        aug_translate=run.train.aug_translate, aug_scale=run.train.aug_scale,
    )
    report["split"] = args.split
    report["checkpoints"] = list(args.checkpoints)

    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = Path(args.scores_out) if args.scores_out else out_dir / "scores.csv"
    write_scores_csv(scores_path, records)

    _, labels, model_scores = breast_level_scores(records, head="fusion")
    ids_model = sorted({r.breast_id for r in records})

    if args.hybrid:
        reader_ids, reader_labels, reader_scores = breast_table_from_rows(read_scores_csv(args.hybrid))
        if reader_ids != ids_model:
            raise ConfigError("reader scores do not cover the same breasts as this split")
        rows, best_lam = hybrid_sweep(reader_scores[:, 1], model_scores[:, 1], labels[:, 1])
        with open(out_dir / "hybrid_sweep.csv", "w") as f:
            f.write("lam,auc,prauc\n")
            for row in rows:
                f.write(f"{row['lam']},{row['auc']:.10g},{row['prauc']:.10g}\n")
        report["hybrid"] = {
            "best_lam": best_lam,
            "auc_at_best": max(r["auc"] for r in rows),
            "curve": "hybrid_sweep.csv",
        }

    if args.simplex:
        tables = [breast_table_from_rows(read_scores_csv(p)) for p in args.simplex]
        for ids_ext, _, _ in tables:
            if ids_ext != ids_model:
                raise ConfigError("simplex score files do not cover the same breasts as this split")
        members = [t[2][:, 1] for t in tables]
        if len(members) == 2:
            members = [model_scores[:, 1]] + members
        if len(members) != 3:
            raise ConfigError(f"simplex ensemble needs 3 members, got {len(members)}")
        weights, best_auc = simplex_grid_search(members, labels[:, 1])
        report["simplex"] = {"weights": list(weights), "auc": best_auc}

    with open(out_dir / "report.json", "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps({"auc": report["auc"], "prauc": report["prauc"],
                      "dsc": report.get("dsc"), "n_breasts": report["n_breasts"]}, indent=2))
    print(f"report written to {out_dir / 'report.json'}")
    return EXIT_OK


def _cmd_viz(args) -> int:
    run = _resolve_config(args)
    from .checkpoint import model_from_checkpoint
    from .pgm import read_pgm, to_float
    from .viz import save_visualization

    model, _ = model_from_checkpoint(args.checkpoint)
    image = to_float(read_pgm(args.image))
    record = save_visualization(model, image, Path(run.out_dir), stem=args.stem)
    print(f"wrote overlays for {len(record['windows'])} windows to {run.out_dir}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "sweep": _cmd_sweep,
    "eval": _cmd_eval,
    "viz": _cmd_viz,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # cap BLAS pools before numpy is imported anywhere
    if "--threads" in argv:
        try:
            _limit_threads(int(argv[argv.index("--threads") + 1]))
        except (IndexError, ValueError):
            pass
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        _limit_threads(int(args.threads))
    from .errors import ConfigError, MetricError, NumericError

    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, MetricError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
