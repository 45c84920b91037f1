"""Figure rendering for the report tables.

Every figure is written as a PNG next to the CSV it visualizes, using the
non-interactive matplotlib backend so reports render identically on headless
machines. Each renderer degrades gracefully: with nothing to draw it writes
no file and returns nothing.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 150


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def render_faa_by_method(report_dir: Path, method_rows: list[dict]) -> list[Path]:
    if not method_rows:
        return []
    labels = [f"{r['method']}" + (f" (b={r['buffer_size']})" if r["buffer_size"] != "" else "")
              for r in method_rows]
    means = [r["faa_mean"] for r in method_rows]
    stds = [r["faa_std"] or 0.0 for r in method_rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(labels)), 3.2))
    x = np.arange(len(labels))
    ax.bar(x, means, yerr=stds, capsize=3, color="#4878cf")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("final average accuracy")
    ax.set_ylim(0, 1)
    ax.set_title("FAA by method")
    return [_save(fig, report_dir / "faa_by_method.png")]


def render_stage_ablation(report_dir: Path, ablation_rows: list[dict]) -> list[Path]:
    if not ablation_rows:
        return []
    order = {"only_wake": 0, "wake_rem": 1, "wake_nrem": 2, "full": 3}
    rows = sorted(ablation_rows, key=lambda r: order.get(r["stages"], 99))
    labels = [r["stages"] for r in rows]
    faa = [r["faa_mean"] for r in rows]
    fwt = [r["fwt_mean"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    x = np.arange(len(rows))
    ax.bar(x - 0.18, faa, width=0.36, label="FAA", color="#4878cf")
    if any(v is not None for v in fwt):
        ax.bar(x + 0.18, [v or 0.0 for v in fwt], width=0.36, label="FWT",
               color="#ee854a")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.set_ylabel("metric value")
    ax.set_title("Stage ablation")
    ax.legend(fontsize=8)
    return [_save(fig, report_dir / "stage_ablation.png")]


def render_freeze_depths(report_dir: Path, depth_rows: list[dict]) -> list[Path]:
    if not depth_rows:
        return []
    groups: dict[str, dict[int, list[int]]] = {}
    for row in depth_rows:
        per_task = groups.setdefault(f"{row['method']}/{row['stages']}", {})
        per_task.setdefault(row["task"], []).append(row["accepted_depth"])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, per_task in sorted(groups.items()):
        tasks = sorted(per_task)
        means = [np.mean(per_task[t]) for t in tasks]
        ax.plot(tasks, means, marker="o", label=label)
    ax.set_xlabel("task index")
    ax.set_ylabel("accepted freeze depth (mean over seeds)")
    ax.set_title("Freeze depth per task")
    ax.legend(fontsize=7)
    return [_save(fig, report_dir / "freeze_depths.png")]


def render_update_counts(report_dir: Path, summary_rows: list[dict]) -> list[Path]:
    if not summary_rows:
        return []
    labels = [f"{r['method']}/{r['stages']}"
              + (f"@{r['sweep_value']}" if r["sweep_value"] is not None else "")
              for r in summary_rows]
    accepted = [r["update_count_mean"] for r in summary_rows]
    search = [r["search_update_count_mean"] for r in summary_rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(labels)), 3.2))
    x = np.arange(len(labels))
    ax.bar(x, accepted, label="accepted trajectory", color="#4878cf")
    if any(search):
        ax.bar(x, search, bottom=accepted, label="candidate search", color="#d1d9e6")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("scalar parameter updates")
    ax.set_title("Update counts")
    ax.legend(fontsize=8)
    return [_save(fig, report_dir / "update_counts.png")]


def render_sweep_curve(report_dir: Path, sweep_rows: list[dict]) -> list[Path]:
    numeric = [r for r in sweep_rows
               if isinstance(r["sweep_value"], (int, float))
               and not isinstance(r["sweep_value"], bool)]
    if not numeric:
        return []
    groups: dict[str, list[dict]] = {}
    for row in numeric:
        groups.setdefault(f"{row['method']}/{row['stages']}", []).append(row)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, rows in sorted(groups.items()):
        rows = sorted(rows, key=lambda r: r["sweep_value"])
        x = [r["sweep_value"] for r in rows]
        y = [r["faa_mean"] for r in rows]
        err = [r["faa_std"] or 0.0 for r in rows]
        ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=label)
    ax.set_xlabel("sweep value")
    ax.set_ylabel("final average accuracy")
    ax.set_title("FAA across the sweep")
    ax.legend(fontsize=7)
    return [_save(fig, report_dir / "sweep_curve.png")]


def render_all(report_dir: Path, method_rows: list[dict], ablation_rows: list[dict],
               depth_rows: list[dict], summary_rows: list[dict],
               sweep_rows: list[dict]) -> list[Path]:
    written: list[Path] = []
    written += render_faa_by_method(report_dir, method_rows)
    written += render_stage_ablation(report_dir, ablation_rows)
    written += render_freeze_depths(report_dir, depth_rows)
    written += render_update_counts(report_dir, summary_rows)
    written += render_sweep_curve(report_dir, sweep_rows)
    return written
