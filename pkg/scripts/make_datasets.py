"""Regenerate the bundled desk-scale regression datasets.

Targets are z-scored at generation time so that an absolute label-noise
level of 1.0 is meaningful across all three files. Feature columns stay on
their natural scales; the training pipeline standardizes them per split.
"""

import csv
from pathlib import Path

import numpy as np
from sklearn.datasets import load_diabetes, make_friedman1

OUT = Path(__file__).resolve().parent.parent / "datasets"


def zscore(y):
    return (y - y.mean()) / y.std()


def write_csv(path, names, X, y):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + ["target"])
        for row, target in zip(X, y):
            writer.writerow([f"{v:.10g}" for v in row] + [f"{target:.10g}"])
    print(f"wrote {path} ({X.shape[0]} rows, {X.shape[1]} features)")


def main():
    OUT.mkdir(exist_ok=True)

    bunch = load_diabetes(scaled=False)
    write_csv(
        OUT / "diabetes.csv",
        [n.replace(" ", "_") for n in bunch.feature_names],
        bunch.data.astype(float),
        zscore(bunch.target.astype(float)),
    )

    # noise on the same order as the signal: the regime where a model fitted
    # on 100 samples can chase noise instead of structure
    X, y = make_friedman1(n_samples=500, n_features=10, noise=4.5, random_state=7)
    write_csv(OUT / "friedman1.csv", [f"x{i}" for i in range(10)], X, zscore(y))

    # interaction-heavy synthetic with distractors and heteroscedastic noise
    rng = np.random.default_rng(11)
    n, d = 500, 12
    X = rng.uniform(-2.0, 2.0, (n, d))
    signal = (
        X[:, 0] * X[:, 1]
        + 1.5 * np.sin(1.3 * X[:, 2])
        + 0.8 * np.abs(X[:, 3])
    )
    noise = rng.normal(0.0, 1.2 + 0.8 * np.abs(X[:, 0]), n)
    write_csv(
        OUT / "interactions.csv",
        [f"x{i}" for i in range(d)],
        X,
        zscore(signal + noise),
    )


if __name__ == "__main__":
    main()
