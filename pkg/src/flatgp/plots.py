"""Figure rendering for run and comparison reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .config import RunReport


def render_run_figures(report: RunReport, fig_dir: str | Path) -> list[Path]:
    """Render the evolutionary curves of one run to PNG files."""
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    gens = [rec.gen for rec in report.records]
    paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(gens, [rec.train_r2 for rec in report.records], label="train R$^2$")
    ax.plot(gens, [rec.test_r2 for rec in report.records], label="test R$^2$")
    ax.set_xlabel("generation")
    ax.set_ylabel("R$^2$")
    ax.set_title(f"{report.config.measure}: incumbent model quality")
    ax.legend()
    fig.tight_layout()
    path = fig_dir / "r2_evolution.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(gens, [rec.best_o1 for rec in report.records], label="best $O_1$")
    ax.plot(gens, [rec.best_o2 for rec in report.records], label="best $O_2$")
    ax.plot(
        gens,
        [rec.archive_score for rec in report.records],
        label="archive $O_1 + O_2$",
        linestyle="--",
    )
    ax.set_xlabel("generation")
    ax.set_ylabel("objective value")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.set_title(f"{report.config.measure}: objective evolution")
    ax.legend()
    fig.tight_layout()
    path = fig_dir / "objective_evolution.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    paths.append(path)
    return paths


def render_compare_figures(
    rows: Sequence[dict], fig_dir: str | Path
) -> list[Path]:
    """Median test-R2 curve per measure from long-format comparison rows.

    Each row needs keys: measure, seed, gen, test_r2.
    """
    import numpy as np

    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    measures = sorted({row["measure"] for row in rows})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for measure in measures:
        by_gen: dict[int, list[float]] = {}
        for row in rows:
            if row["measure"] == measure:
                by_gen.setdefault(int(row["gen"]), []).append(float(row["test_r2"]))
        gens = sorted(by_gen)
        med = [float(np.median(by_gen[g])) for g in gens]
        ax.plot(gens, med, label=measure)
    ax.set_xlabel("generation")
    ax.set_ylabel("median test R$^2$")
    ax.set_title("measure comparison")
    ax.legend()
    fig.tight_layout()
    path = fig_dir / "measure_comparison.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return [path]
