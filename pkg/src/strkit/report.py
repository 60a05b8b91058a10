"""Figure rendering for training runs and sweep summaries.

Every plot is written as a PNG next to a tidy CSV holding exactly the
plotted numbers, so results stay scriptable without reparsing logs.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def read_metrics(path: str | Path) -> list[dict]:
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def plot_training_curves(
    metrics_paths: list[str | Path],
    out_dir: str | Path,
    labels: list[str] | None = None,
) -> tuple[Path, Path]:
    """Validation accuracy and training loss against iteration.

    Returns (figure path, csv path).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if labels is None:
        labels = [Path(p).parent.name or f"run{i}" for i, p in enumerate(metrics_paths)]

    tidy_rows = []
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    for path, label in zip(metrics_paths, labels):
        rows = read_metrics(path)
        val = [(int(r["iter"]), float(r["accuracy"])) for r in rows if r["phase"] == "valid" and r["accuracy"]]
        train = [(int(r["iter"]), float(r["loss"])) for r in rows if r["phase"] == "train" and r["loss"]]
        if val:
            ax_acc.plot(*zip(*val), marker="o", label=label)
        if train:
            ax_loss.plot(*zip(*train), marker=".", label=label)
        for iteration, acc in val:
            tidy_rows.append({"run": label, "iter": iteration, "metric": "val_accuracy", "value": acc})
        for iteration, loss in train:
            tidy_rows.append({"run": label, "iter": iteration, "metric": "train_loss", "value": loss})
    ax_acc.set_xlabel("iteration")
    ax_acc.set_ylabel("validation accuracy (%)")
    ax_acc.legend()
    ax_acc.grid(True, alpha=0.3)
    ax_loss.set_xlabel("iteration")
    ax_loss.set_ylabel("training loss")
    ax_loss.legend()
    ax_loss.grid(True, alpha=0.3)
    fig.tight_layout()
    fig_path = out_dir / "training_curves.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    csv_path = out_dir / "training_curves.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["run", "iter", "metric", "value"])
        writer.writeheader()
        writer.writerows(tidy_rows)
    return fig_path, csv_path


def plot_accuracy_vs_data(
    records: list[dict],
    out_dir: str | Path,
    x_key: str = "ratio",
    x_label: str = "fraction of labeled data",
) -> tuple[Path, Path]:
    """Accuracy against labeled-data amount, one curve per method.

    ``records`` holds dicts with keys ``method``, ``ratio`` (or another
    ``x_key``), and ``accuracy``; repeated (method, x) points are
    averaged (seed replicates).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    grouped: dict[str, dict[float, list[float]]] = {}
    for record in records:
        method = str(record["method"])
        x = float(record[x_key])
        grouped.setdefault(method, {}).setdefault(x, []).append(float(record["accuracy"]))

    fig, ax = plt.subplots(figsize=(6, 4))
    tidy_rows = []
    for method, points in sorted(grouped.items()):
        xs = sorted(points)
        means = [sum(points[x]) / len(points[x]) for x in xs]
        ax.plot(xs, means, marker="o", label=method)
        for x, mean in zip(xs, means):
            tidy_rows.append(
                {"method": method, x_key: x, "accuracy": mean, "replicates": len(points[x])}
            )
    ax.set_xlabel(x_label)
    ax.set_ylabel("accuracy (%)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig_path = out_dir / "accuracy_vs_data.png"
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)

    csv_path = out_dir / "accuracy_vs_data.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["method", x_key, "accuracy", "replicates"])
        writer.writeheader()
        writer.writerows(tidy_rows)
    return fig_path, csv_path


def read_sweep_csv(path: str | Path) -> list[dict]:
    """Sweep summary rows: method,ratio,accuracy (extra columns kept)."""
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
