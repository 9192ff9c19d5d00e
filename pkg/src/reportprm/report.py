"""Human-readable summary rendering and curve figures.

The report command collects whatever artifacts a run produced (sentence
metrics, ablation table, rejection and Best-of-N curves, training history)
into one markdown document, rendering each curve table to a PNG next to it.
Identical inputs produce byte-identical output: figures are written without
any time-dependent metadata.
"""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SAVEFIG_KW = {"dpi": 110, "metadata": {"Software": None}}


def _save(fig, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def _curve_panel(rows: Sequence[Mapping], x_key: str, group_key: str, path: Path, log_x=False):
    """One subplot per metric; one line per method/strategy."""
    metrics = sorted({r["metric"] for r in rows})
    groups = sorted({r[group_key] for r in rows})
    cols = min(3, len(metrics))
    rows_n = -(-len(metrics) // cols)
    fig, axes = plt.subplots(rows_n, cols, figsize=(4.2 * cols, 3.2 * rows_n), squeeze=False)
    for i, metric in enumerate(metrics):
        ax = axes[i // cols][i % cols]
        for group in groups:
            pts = sorted(
                (float(r[x_key]), float(r["value"]))
                for r in rows
                if r["metric"] == metric and r[group_key] == group
            )
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=str(group))
        ax.set_title(metric)
        ax.set_xlabel(x_key)
        if log_x:
            ax.set_xscale("log", base=2)
        ax.grid(True, alpha=0.3)
    for j in range(len(metrics), rows_n * cols):
        axes[j // cols][j % cols].axis("off")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def rejection_figure(rows: Sequence[Mapping], path) -> None:
    _curve_panel(rows, x_key="pct", group_key="method", path=Path(path))


def bon_figure(rows: Sequence[Mapping], path) -> None:
    _curve_panel(rows, x_key="n", group_key="strategy", path=Path(path), log_x=True)


def history_figure(records: Sequence[Mapping], path) -> None:
    steps = [r for r in records if "step" in r]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(
        [r["step"] for r in steps],
        [r["train_loss"] for r in steps],
        label="train loss (per sentence)",
    )
    evals = [r for r in steps if "val_loss" in r]
    if evals:
        ax.plot([r["step"] for r in evals], [r["val_loss"] for r in evals], "o-", label="val loss")
    ax.set_xlabel("optimizer step")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, Path(path))


def _metric_table(metrics: Mapping[str, Mapping]) -> list[str]:
    lines = ["| metric | point | 95% CI |", "|---|---|---|"]
    for name in sorted(metrics):
        entry = metrics[name]
        lines.append(
            f"| {name} | {entry['point']:.4f} | ({entry['lo']:.4f}, {entry['hi']:.4f}) |"
        )
    return lines


def _keyword_table(rows: Sequence[Mapping]) -> list[str]:
    lines = ["| keyword | count | F1-micro | 95% CI |", "|---|---|---|---|"]
    for row in rows:
        if row.get("count", 0) == 0:
            lines.append(f"| {row['keyword']} | 0 | - | - |")
        else:
            ci = row["ci"]
            lines.append(
                f"| {row['keyword']} | {row['count']} | {row['f1_micro']:.4f} "
                f"| ({ci['lo']:.4f}, {ci['hi']:.4f}) |"
            )
    return lines


def _ablation_table(rows: Sequence[Mapping]) -> list[str]:
    metrics = ("accuracy", "f1_macro", "mcc", "auroc", "auprc")
    header = "| variant | " + " | ".join(metrics) + " |"
    lines = [header, "|" + "---|" * (len(metrics) + 1)]
    for row in rows:
        cells = [
            f"{float(row[m]):.4f} ({float(row[m + '_lo']):.4f}, {float(row[m + '_hi']):.4f})"
            for m in metrics
        ]
        lines.append(f"| {row['variant']} | " + " | ".join(cells) + " |")
    return lines


def _curve_section(rows: Sequence[Mapping], x_key: str, group_key: str) -> list[str]:
    lines = []
    by_metric = defaultdict(list)
    for row in rows:
        by_metric[row["metric"]].append(row)
    for metric in sorted(by_metric):
        lines.append(f"**{metric}**")
        lines.append("")
        xs = sorted({float(r[x_key]) for r in by_metric[metric]})
        groups = sorted({r[group_key] for r in by_metric[metric]})
        lines.append(f"| {group_key} | " + " | ".join(f"{x:g}" for x in xs) + " |")
        lines.append("|" + "---|" * (len(xs) + 1))
        for group in groups:
            values = {
                float(r[x_key]): float(r["value"])
                for r in by_metric[metric]
                if r[group_key] == group
            }
            cells = [f"{values[x]:.4f}" if x in values else "-" for x in xs]
            lines.append(f"| {group} | " + " | ".join(cells) + " |")
        lines.append("")
    return lines


def render_report(
    out_dir,
    metrics: Mapping | None = None,
    ablation_rows: Sequence[Mapping] | None = None,
    rejection_rows: Sequence[Mapping] | None = None,
    bon_rows: Sequence[Mapping] | None = None,
    history_records: Sequence[Mapping] | None = None,
) -> Path:
    """Write report.md plus figures; returns the markdown path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["# Verification pipeline report", ""]

    if metrics:
        lines += ["## Sentence-level metrics", ""]
        lines += _metric_table({k: v for k, v in metrics.items() if isinstance(v, dict) and "point" in v})
        lines.append("")
        keyword_rows = metrics.get("keywords")
        if keyword_rows:
            lines += ["### Keyword strata", ""]
            lines += _keyword_table(keyword_rows)
            lines.append("")
    if ablation_rows:
        lines += ["## Context ablation", ""]
        lines += _ablation_table(ablation_rows)
        lines.append("")
    if rejection_rows:
        rejection_figure(rejection_rows, out_dir / "rejection_curves.png")
        lines += [
            "## Rejection curves",
            "",
            "Figure: `rejection_curves.png`",
            "",
        ]
        lines += _curve_section(rejection_rows, "pct", "method")
    if bon_rows:
        bon_figure(bon_rows, out_dir / "bon_curves.png")
        lines += [
            "## Best-of-N curves",
            "",
            "Figure: `bon_curves.png`",
            "",
        ]
        lines += _curve_section(bon_rows, "n", "strategy")
    if history_records:
        history_figure(history_records, out_dir / "training_history.png")
        lines += ["## Training history", "", "Figure: `training_history.png`", ""]

    text = "\n".join(lines).rstrip() + "\n"
    path = out_dir / "report.md"
    path.write_text(text, encoding="utf-8")
    return path
