"""Report rendering: CSV tables and matplotlib figures next to every
command's machine-readable output."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def write_csv(path: str | Path, rows: list[dict], fieldnames: list[str] | None = None) -> None:
    """Write dict rows as CSV; field order defaults to the first row's keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    if fieldnames is None:
        fieldnames = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def save_loss_curve(metrics: list[dict], path: str | Path) -> None:
    """Training loss (log scale) and learning rate over steps."""
    steps = [m["step"] for m in metrics]
    losses = [m["loss"] for m in metrics]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=0.8, color="tab:blue", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    twin = ax.twinx()
    twin.plot(steps, [m["lr"] for m in metrics], lw=0.8, color="tab:orange", label="lr")
    twin.set_ylabel("learning rate")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_importance_histogram(importances: list[float], path: str | Path) -> None:
    """Distribution of per-token combined importance across a corpus."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(importances, bins=40, color="tab:green", alpha=0.8)
    ax.set_xlabel("token importance")
    ax.set_ylabel("count")
    ax.set_title("importance distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_chart(report: dict, path: str | Path) -> None:
    """Accuracy/fluency snapshot for a single control-task evaluation."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(7, 3.5))
    left.bar(["accuracy"], [report["accuracy"]], color="tab:blue")
    left.set_ylim(0, 1.05)
    left.set_title(f"{report['task']} accuracy")
    right.bar(["fluency"], [report["fluency"]], color="tab:orange")
    right.set_title("fluency (perplexity, lower better)")
    fig.suptitle(f"samples: {report['sample_count']}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_chart(cells: list[dict], path: str | Path) -> None:
    """Grouped bars of accuracy and fluency per (strategy, objective) cell."""
    strategies = []
    for cell in cells:
        if cell["strategy"] not in strategies:
            strategies.append(cell["strategy"])
    objectives = []
    for cell in cells:
        if cell["objective"] not in objectives:
            objectives.append(cell["objective"])
    width = 0.8 / max(len(objectives), 1)
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    for k, objective in enumerate(objectives):
        xs, accs, flus = [], [], []
        for i, strategy in enumerate(strategies):
            match = [
                c for c in cells
                if c["strategy"] == strategy and c["objective"] == objective
            ]
            if not match or match[0]["report"] is None:
                continue
            xs.append(i + k * width)
            accs.append(match[0]["report"]["accuracy"])
            flus.append(match[0]["report"]["fluency"])
        top.bar(xs, accs, width=width, label=objective)
        bottom.bar(xs, flus, width=width, label=objective)
    top.set_ylabel("content accuracy")
    top.set_ylim(0, 1.05)
    top.legend()
    bottom.set_ylabel("fluency (perplexity)")
    bottom.set_xticks(
        [i + width * (len(objectives) - 1) / 2 for i in range(len(strategies))]
    )
    bottom.set_xticklabels(strategies, rotation=20, ha="right")
    fig.suptitle("noise-strategy / objective ablation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
