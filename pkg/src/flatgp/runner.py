"""Experiment orchestration: single runs, seed batches, measure comparisons.

Deterministic artifacts (config.json, generations.csv, summary.json,
model.json, runs_long.csv, comparison.*) are byte-reproducible from the
configuration and master seed; wall-clock numbers go to a separate timing
log so they never break reproducibility checks.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as data_mod
from . import evolution
from .config import ExperimentConfig, RunReport
from .inference import bundle_to_dict
from .stats import compare_outcome

_NOISE_TAG = 0x5EED20
_MASK64 = (1 << 64) - 1


def prepare_data(cfg: ExperimentConfig):
    """Load, split, optionally corrupt labels, and standardize features."""
    dataset = data_mod.load_csv(cfg.data_path, cfg.target_column)
    spec = data_mod.SplitSpec(
        train_size_rule=cfg.split_rule,
        seed=cfg.seed,
        label_noise_sigma=cfg.label_noise_sigma,
    )
    rule_used = data_mod.effective_split_rule(dataset.n_instances, cfg.split_rule)
    train, test = data_mod.split(dataset, spec)
    if cfg.label_noise_sigma > 0:
        noise_seed = int(
            np.random.SeedSequence(
                [cfg.seed & _MASK64, _NOISE_TAG]
            ).generate_state(1, np.uint64)[0]
        )
        train = data_mod.inject_label_noise(train, cfg.label_noise_sigma, noise_seed)
    train_std, test_std, stats = data_mod.standardize(train, test)
    return train_std, test_std, stats, rule_used


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """One full run: data pipeline, evolution, inference-time scoring."""
    cfg.validate()
    train, test, stats, rule_used = prepare_data(cfg)
    report = evolution.run(cfg, train, test, input_stats=stats)
    report.split_rule_used = rule_used
    report.split_fallback = rule_used != cfg.split_rule
    return report


def emit_metrics(
    report: RunReport, out_dir: str | Path, figures: Optional[bool] = None
) -> dict[str, Path]:
    """Write the per-run report files; returns a name -> path map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if figures is None:
        figures = report.config.figures
    paths: dict[str, Path] = {}

    paths["config"] = out / "config.json"
    _write_json(paths["config"], report.config.to_dict())

    paths["generations"] = out / "generations.csv"
    with open(paths["generations"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["gen", "best_o1", "best_o2", "archive_score", "train_r2", "test_r2"]
        )
        for rec in report.records:
            writer.writerow(
                [rec.gen, rec.best_o1, rec.best_o2, rec.archive_score,
                 rec.train_r2, rec.test_r2]
            )

    paths["timings"] = out / "timings.csv"
    with open(paths["timings"], "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gen", "seconds"])
        for rec in report.records:
            writer.writerow([rec.gen, rec.seconds])

    paths["summary"] = out / "summary.json"
    _write_json(paths["summary"], summarize(report))

    if report.bundle is not None:
        paths["model"] = out / "model.json"
        _write_json(paths["model"], bundle_to_dict(report.bundle))

    if figures:
        from .plots import render_run_figures

        for p in render_run_figures(report, out / "figures"):
            paths[p.stem] = p
    return paths


def summarize(report: RunReport) -> dict:
    return {
        "seed": report.config.seed,
        "measure": report.config.measure,
        "dataset": report.config.data_path,
        "split_rule_used": report.split_rule_used,
        "split_fallback": report.split_fallback,
        "generations": len(report.records),
        "final_train_r2": report.final_train_r2,
        "final_test_r2": report.final_test_r2,
        "final_tree_count": report.final_tree_count,
        "final_node_count": report.final_node_count,
        "archive_size": report.archive_size,
        "cache_hits": report.cache_hits,
        "cache_misses": report.cache_misses,
        "front": [list(pair) for pair in report.front],
    }


def run_batch(
    cfg: ExperimentConfig, seeds: Sequence[int], out_dir: Optional[str | Path] = None
) -> list[RunReport]:
    """Independent runs over a seed list plus an aggregate summary."""
    from dataclasses import replace

    reports = []
    for seed in seeds:
        run_cfg = replace(cfg, seed=int(seed))
        report = run_experiment(run_cfg)
        reports.append(report)
        if out_dir is not None:
            emit_metrics(report, Path(out_dir) / f"seed_{seed}")
    if out_dir is not None:
        _emit_batch_outputs(reports, Path(out_dir))
    return reports


def _emit_batch_outputs(reports: Sequence[RunReport], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rows = long_rows(reports)
    _write_long_csv(out / "runs_long.csv", rows)
    finals = [r.final_test_r2 for r in reports]
    _write_json(
        out / "summary.json",
        {
            "measure": reports[0].config.measure,
            "dataset": reports[0].config.data_path,
            "seeds": [r.config.seed for r in reports],
            "median_test_r2": float(np.median(finals)),
            "median_train_r2": float(np.median([r.final_train_r2 for r in reports])),
            "per_seed_test_r2": finals,
        },
    )


def long_rows(reports: Sequence[RunReport]) -> list[dict]:
    """Flatten per-generation records, keyed by (measure, gen, seed)."""
    rows = []
    for report in reports:
        for rec in report.records:
            rows.append(
                {
                    "measure": report.config.measure,
                    "dataset": report.config.data_path,
                    "seed": report.config.seed,
                    "gen": rec.gen,
                    "train_r2": rec.train_r2,
                    "test_r2": rec.test_r2,
                }
            )
    return rows


def _write_long_csv(path: Path, rows: Sequence[dict]) -> None:
    fields = ["measure", "dataset", "seed", "gen", "train_r2", "test_r2"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})


def compare_measures(
    cfg: ExperimentConfig,
    measures: Sequence[str],
    seeds: Sequence[int],
    data_paths: Optional[Sequence[str]] = None,
    out_dir: Optional[str | Path] = None,
    significance: float = 0.05,
) -> dict:
    """Run a measure x seed grid and tally pairwise win/tie/loss outcomes.

    One paired signed-rank comparison per dataset per measure pair; counts
    aggregate over datasets like the usual benchmark tables.
    """
    from dataclasses import replace

    data_paths = list(data_paths or [cfg.data_path])
    scores: dict[tuple[str, str], list[float]] = {}
    all_reports: list[RunReport] = []
    for path in data_paths:
        for measure in measures:
            finals = []
            for seed in seeds:
                run_cfg = replace(
                    cfg, data_path=path, measure=measure, seed=int(seed)
                )
                report = run_experiment(run_cfg)
                finals.append(report.final_test_r2)
                all_reports.append(report)
            scores[(path, measure)] = finals

    counts = {
        (a, b): {"+": 0, "~": 0, "-": 0}
        for a in measures
        for b in measures
        if a != b
    }
    outcomes = []
    for path in data_paths:
        for a in measures:
            for b in measures:
                if a == b:
                    continue
                outcome = compare_outcome(
                    scores[(path, a)], scores[(path, b)], alpha=significance
                )
                counts[(a, b)][outcome] += 1
                outcomes.append(
                    {"dataset": path, "a": a, "b": b, "outcome": outcome}
                )

    result = {
        "measures": list(measures),
        "datasets": data_paths,
        "seeds": [int(s) for s in seeds],
        "significance": significance,
        "median_test_r2": {
            f"{path}::{measure}": float(np.median(scores[(path, measure)]))
            for path in data_paths
            for measure in measures
        },
        "per_seed_test_r2": {
            f"{path}::{measure}": scores[(path, measure)]
            for path in data_paths
            for measure in measures
        },
        "win_tie_loss": {
            f"{a} vs {b}": f"{c['+']}(+)/{c['~']}(~)/{c['-']}(-)"
            for (a, b), c in counts.items()
        },
        "outcomes": outcomes,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "comparison.json", result)
        with open(out / "comparison.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["dataset", "a", "b", "outcome"])
            for row in outcomes:
                writer.writerow([row["dataset"], row["a"], row["b"], row["outcome"]])
        rows = long_rows(all_reports)
        _write_long_csv(out / "runs_long.csv", rows)
        if cfg.figures:
            from .plots import render_compare_figures

            render_compare_figures(rows, out / "figures")
    return result


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
