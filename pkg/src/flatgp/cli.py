"""Command line interface: run, compare and predict subcommands."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .complexity import MEASURES
from .config import ConfigError, ExperimentConfig
from .data import SPLIT_RULES, load_csv
from .sharpness import ADAPTIVITIES, AGGREGATIONS, NOISE_FAMILIES


def parse_seeds(text: str) -> list[int]:
    """Accept '7', '1,2,5' or inclusive ranges like '0..9'."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(part) for part in text.split(",") if part.strip()]


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="CSV dataset path")
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--target", help="target column name (default: last column)")
    parser.add_argument("--split", choices=SPLIT_RULES, help="train/test split rule")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--population", type=int)
    parser.add_argument("--generations", type=int)
    parser.add_argument("--sigma", type=float, help="perturbation stddev")
    parser.add_argument("--rounds", type=int, help="perturbation rounds per estimate")
    parser.add_argument("--alpha", type=float, help="ridge regularization strength")
    parser.add_argument("--measure", choices=MEASURES, help="second objective")
    parser.add_argument("--aggregation", choices=AGGREGATIONS)
    parser.add_argument("--m", type=int, help="mini-batch size for m_sam")
    parser.add_argument("--noise", choices=NOISE_FAMILIES, dest="noise_family")
    parser.add_argument("--adaptivity", choices=ADAPTIVITIES)
    parser.add_argument("--ensemble-size", type=int, dest="ensemble_size")
    parser.add_argument("--no-cache", action="store_true", help="disable the semantics cache")
    parser.add_argument("--cache-capacity", type=int, dest="cache_capacity")
    parser.add_argument("--label-noise", type=float, dest="label_noise_sigma",
                        help="stddev of Gaussian noise added to train labels")
    parser.add_argument("--wcrv-raw-variables", action="store_true",
                        help="score wcrv on raw inputs instead of constructed features")
    parser.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    parser.add_argument("--out", help="output directory")


_FLAG_TO_FIELD = {
    "data": "data_path",
    "target": "target_column",
    "split": "split_rule",
    "seed": "seed",
    "population": "population",
    "generations": "generations",
    "sigma": "sigma",
    "rounds": "rounds",
    "alpha": "alpha",
    "measure": "measure",
    "aggregation": "aggregation",
    "m": "m",
    "noise_family": "noise_family",
    "adaptivity": "adaptivity",
    "ensemble_size": "ensemble_size",
    "cache_capacity": "cache_capacity",
    "label_noise_sigma": "label_noise_sigma",
    "out": "out_dir",
}


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge config file and CLI flags (flags win), then validate."""
    base: dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    overrides = {}
    for flag, field in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "no_cache", False):
        overrides["cache"] = False
    if getattr(args, "wcrv_raw_variables", False):
        overrides["wcrv_raw_variables"] = True
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    merged = {**base, **overrides}
    cfg = ExperimentConfig.from_dict(merged)
    if not cfg.data_path:
        raise ConfigError("invalid configuration:\n  - --data (or a config file with data_path) is required")
    return cfg.validate()


def _cmd_run(args: argparse.Namespace) -> int:
    from .runner import emit_metrics, run_batch, run_experiment

    cfg = build_config(args)
    out_dir = cfg.out_dir
    seeds = parse_seeds(args.seeds) if args.seeds else None
    if seeds is not None and len(seeds) > 1:
        if out_dir is None:
            raise ConfigError("invalid configuration:\n  - --out is required for multi-seed batches")
        reports = run_batch(cfg, seeds, out_dir)
        medians = float(np.median([r.final_test_r2 for r in reports]))
        print(f"{len(reports)} runs complete; median test R^2 = {medians:.4f}")
        return 0
    if seeds is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=seeds[0])
    report = run_experiment(cfg)
    if out_dir is not None:
        paths = emit_metrics(report, out_dir)
        print(f"report written to {Path(out_dir).resolve()}")
        for name in ("generations", "summary", "model"):
            if name in paths:
                print(f"  {paths[name]}")
    print(
        f"measure={cfg.measure} seed={cfg.seed} "
        f"train R^2={report.final_train_r2:.4f} test R^2={report.final_test_r2:.4f}"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    from .runner import compare_measures

    cfg = build_config(args)
    seeds = parse_seeds(args.seeds) if args.seeds else [cfg.seed]
    datasets = args.datasets or [cfg.data_path]
    for measure in args.measures:
        if measure not in MEASURES:
            raise ConfigError(
                f"invalid configuration:\n  - unknown measure {measure!r}"
            )
    result = compare_measures(
        cfg, args.measures, seeds, data_paths=datasets, out_dir=cfg.out_dir
    )
    for pair, tally in result["win_tie_loss"].items():
        print(f"{pair}: {tally}")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    from .inference import bundle_from_dict

    with open(args.model, "r", encoding="utf-8") as fh:
        bundle = bundle_from_dict(json.load(fh))
    dataset = load_csv(args.data) if args.with_target else None
    if dataset is not None:
        X = dataset.features
    else:
        X = _read_feature_csv(args.data, bundle.feature_names)
    preds = bundle.predict(X)
    out_path = Path(args.out) if args.out else None
    if out_path is None:
        for value in preds:
            print(value)
        return 0
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prediction"])
        for value in preds:
            writer.writerow([value])
    print(f"{len(preds)} predictions written to {out_path}")
    return 0


def _read_feature_csv(path: str, feature_names: list[str]) -> np.ndarray:
    """Read feature columns by name, ignoring any extra columns."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    missing = [name for name in feature_names if name not in header]
    if missing:
        raise ConfigError(
            f"invalid configuration:\n  - columns missing from {path}: {missing}"
        )
    idx = [header.index(name) for name in feature_names]
    return np.array(
        [[float(row[i]) for i in idx] for row in rows[1:] if row],
        dtype=np.float64,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="flatgp",
        description="Evolve symbolic ridge features regularized by semantic sharpness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment or a seed batch")
    _add_run_options(p_run)
    p_run.add_argument("--seeds", help="seed list: '3', '1,4,9' or '0..9'")
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare", help="compare measures over a seed grid")
    _add_run_options(p_cmp)
    p_cmp.add_argument("--seeds", help="seed list: '3', '1,4,9' or '0..9'")
    p_cmp.add_argument("--measures", nargs="+", required=True,
                       help=f"measures to compare, from {MEASURES}")
    p_cmp.add_argument("--datasets", nargs="+",
                       help="override --data with several datasets")
    p_cmp.set_defaults(func=_cmd_compare)

    p_pred = sub.add_parser("predict", help="predict with a saved model bundle")
    p_pred.add_argument("--model", required=True, help="model.json path")
    p_pred.add_argument("--data", required=True, help="CSV with feature columns")
    p_pred.add_argument("--with-target", action="store_true",
                        help="data file ends with a target column to drop")
    p_pred.add_argument("--out", help="output CSV path (default: stdout)")
    p_pred.set_defaults(func=_cmd_predict)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
