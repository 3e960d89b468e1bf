"""Rendering of metrics reports: fixed-width table, CSV, JSON, and figures.

Figures are written next to the delimited outputs with the Agg backend so
report generation works headless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import MetricsReport


@dataclass(frozen=True)
class ResultRow:
    model: str
    report: MetricsReport


_HEADER = ("Model", "Precision (%)", "Recall (%)", "F1 Score (%)")


def render_table(rows: Sequence[ResultRow]) -> str:
    """Fixed-width comparison table, two decimals per metric."""
    cells = [list(_HEADER)]
    for row in rows:
        cells.append(
            [
                row.model,
                f"{row.report.precision:.2f}",
                f"{row.report.recall:.2f}",
                f"{row.report.f1:.2f}",
            ]
        )
    widths = [max(len(line[col]) for line in cells) for col in range(4)]
    lines = []
    for i, line in enumerate(cells):
        rendered = "  ".join(
            line[col].ljust(widths[col]) if col == 0 else line[col].rjust(widths[col])
            for col in range(4)
        )
        lines.append(rendered.rstrip())
        if i == 0:
            lines.append("-" * len(rendered.rstrip()))
    return "\n".join(lines) + "\n"


def write_table(rows: Sequence[ResultRow], path: str | Path) -> None:
    Path(path).write_text(render_table(rows), encoding="utf-8")


def write_csv(rows: Sequence[ResultRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "precision", "recall", "f1", "tp", "fp", "fn"])
        for row in rows:
            rep = row.report
            writer.writerow(
                [row.model, f"{rep.precision:.2f}", f"{rep.recall:.2f}", f"{rep.f1:.2f}", rep.tp, rep.fp, rep.fn]
            )


def write_json(rows: Sequence[ResultRow], path: str | Path) -> None:
    payload = [{"model": row.model, **row.report.to_json_dict()} for row in rows]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_metrics_figure(rows: Sequence[ResultRow], path: str | Path) -> None:
    """Grouped bar chart of precision/recall/F1 per model."""
    names = [row.model for row in rows]
    metrics = {
        "Precision": [row.report.precision for row in rows],
        "Recall": [row.report.recall for row in rows],
        "F1": [row.report.f1 for row in rows],
    }
    x = range(len(names))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(names)), 4.0))
    for i, (label, values) in enumerate(metrics.items()):
        ax.bar([xi + (i - 1) * width for xi in x], values, width=width, label=label)
    ax.set_xticks(list(x))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("score (%)")
    ax.set_ylim(0, 105)
    ax.legend(loc="lower right")
    ax.set_title("Entity-level scores by model")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_loss_figure(loss_histories: Sequence[Sequence[float]], path: str | Path) -> None:
    """Per-fold training loss curves over optimizer steps."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for fold_index, losses in enumerate(loss_histories):
        ax.plot(range(1, len(losses) + 1), losses, label=f"fold {fold_index}", linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_title("Training loss")
    if len(loss_histories) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
