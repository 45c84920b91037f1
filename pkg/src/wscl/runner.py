"""Experiment orchestration: seed and sweep fan-out, artifact persistence,
aggregate summaries, and report emission.

One experiment produces, inside its output directory:

    config.resolved.json        canonical configuration actually run
    manifest.json               name, config hash, code version, run list
    run-<variant>-seed<S>.json  one RunRecord per (sweep value, seed)
    run-<variant>-seed<S>-matrix.csv
    summary.json / summary.csv  mean and std of FAA / FWT / forgetting
    failure.json                present only when at least one run failed

`emit_report` turns a directory of RunRecords into fixed-column CSV tables
(method FAA, forgetting, stage ablation, update counts, freeze depths, sweep
curve) and renders a matplotlib figure next to each table that has one.
"""

from __future__ import annotations

import csv
import json
import os
import re
import traceback
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path
from statistics import mean, stdev
from typing import Any, Optional

from .config import (ExperimentConfig, build_stream, canonical_json,
                     parse_experiment)
from .engine import run_stream
from .errors import ConfigError, WsclError
from . import plots


def _code_version() -> str:
    try:
        return metadata.version("wscl")
    except metadata.PackageNotFoundError:
        return "unknown"


def _slug(value: Any, index: int) -> str:
    if isinstance(value, (str, int, float, bool)):
        text = re.sub(r"[^A-Za-z0-9._-]+", "-", str(value)).strip("-")
        if text:
            return text
    return f"v{index}"


def _matrix_csv(path: Path, matrix: list[list[float]]) -> None:
    T = len(matrix[0])
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["after_task"] + [f"task{i}" for i in range(T)])
        for t, row in enumerate(matrix):
            writer.writerow([t] + [f"{v:.6f}" for v in row])


def _run_single(args: tuple) -> dict:
    """Worker body: one (sweep value, seed) run, artifacts written in place."""
    doc, seed, run_id, out_dir, cfg_hash, sweep_param, sweep_value, name = args
    try:
        exp = parse_experiment(doc)
        stream, dream = build_stream(exp.data, seed)
        record = run_stream(stream, dream, exp.training, seed)
        payload = record.to_dict()
        payload.update({
            "experiment": name,
            "config_hash": cfg_hash,
            "sweep_parameter": sweep_param,
            "sweep_value": sweep_value,
            "buffer_size": exp.training.buffer_size,
            "sleep_epochs": exp.training.sleep_epochs,
            "batch_size": exp.training.batch_size,
            "learning_rate": exp.training.learning_rate,
        })
        out = Path(out_dir)
        record_path = out / f"{run_id}.json"
        record_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        _matrix_csv(out / f"{run_id}-matrix.csv", payload["accuracy_matrix"])
        return {"run_id": run_id, "ok": True, "record": payload}
    except Exception as exc:
        return {"run_id": run_id, "ok": False,
                "error": f"{type(exc).__name__}: {exc}",
                "traceback": traceback.format_exc()}


def _aggregate(records: list[dict]) -> list[dict]:
    """Mean and std of the headline metrics per (sweep value, method, stages)."""
    groups: dict[tuple, list[dict]] = {}
    for rec in records:
        key = (str(rec["sweep_value"]), rec["method_label"], rec["stages"])
        groups.setdefault(key, []).append(rec)

    def stats(values):
        values = [v for v in values if v is not None]
        if not values:
            return None, None
        return mean(values), (stdev(values) if len(values) > 1 else 0.0)

    rows = []
    for key in sorted(groups):
        grp = groups[key]
        faa_m, faa_s = stats([r["metrics"]["faa"] for r in grp])
        fwt_m, fwt_s = stats([r["metrics"]["fwt"] for r in grp])
        fg_m, fg_s = stats([r["metrics"]["forgetting"] for r in grp])
        rows.append({
            "sweep_value": grp[0]["sweep_value"],
            "method": grp[0]["method_label"],
            "stages": grp[0]["stages"],
            "n_seeds": len(grp),
            "faa_mean": faa_m, "faa_std": faa_s,
            "fwt_mean": fwt_m, "fwt_std": fwt_s,
            "forgetting_mean": fg_m, "forgetting_std": fg_s,
            "update_count_mean": mean(r["update_count"] for r in grp),
            "search_update_count_mean": mean(r["search_update_count"] for r in grp),
        })
    return rows


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            out = {}
            for col in columns:
                v = row.get(col)
                out[col] = f"{v:.6f}" if isinstance(v, float) else v
            writer.writerow(out)


def run_experiment(exp: ExperimentConfig, out_dir: Optional[str] = None) -> int:
    """Execute every (sweep value, seed) run; returns 0 on full success, 1
    when any run failed (partial artifacts and a failure marker remain)."""
    out = Path(out_dir or exp.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(canonical_json(exp.doc) + "\n")

    jobs = []
    for idx, (value, variant) in enumerate(exp.variants()):
        for seed in exp.seeds:
            run_id = (f"run-seed{seed}" if exp.sweep_parameter is None
                      else f"run-{_slug(value, idx)}-seed{seed}")
            jobs.append((variant.doc, seed, run_id, str(out), exp.hash,
                         exp.sweep_parameter, value, exp.name))

    workers = int(os.environ.get("WSCL_WORKERS", "1") or "1")
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_single, jobs))
    else:
        results = [_run_single(job) for job in jobs]

    ok = [r for r in results if r["ok"]]
    failed = [r for r in results if not r["ok"]]
    records = [r["record"] for r in ok]

    if records:
        summary_rows = _aggregate(records)
        (out / "summary.json").write_text(
            json.dumps(summary_rows, sort_keys=True, indent=2) + "\n")
        _write_csv(out / "summary.csv", summary_rows,
                   ["sweep_value", "method", "stages", "n_seeds",
                    "faa_mean", "faa_std", "fwt_mean", "fwt_std",
                    "forgetting_mean", "forgetting_std",
                    "update_count_mean", "search_update_count_mean"])
    manifest = {
        "experiment": exp.name,
        "config_hash": exp.hash,
        "code_version": _code_version(),
        "seeds": exp.seeds,
        "sweep_parameter": exp.sweep_parameter,
        "sweep_values": exp.sweep_values,
        "runs": sorted(r["run_id"] for r in results),
        "failed_runs": sorted(r["run_id"] for r in failed),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    if failed:
        marker = [{"run_id": r["run_id"], "error": r["error"],
                   "traceback": r["traceback"]} for r in failed]
        (out / "failure.json").write_text(json.dumps(marker, indent=2) + "\n")
        return 1
    return 0


# -- reporting ----------------------------------------------------------------


def _load_records(run_dir: Path) -> list[dict]:
    paths = sorted(p for p in run_dir.glob("run-*.json") if not p.name.endswith("-matrix.json"))
    records = []
    for p in paths:
        try:
            records.append(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise WsclError(f"unreadable run record {p}: {exc}") from exc
    if not records:
        raise ConfigError(f"no run records found in {run_dir}")
    return records


def emit_report(run_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write the fixed-column CSV tables (and figures) for a run directory."""
    run_dir = Path(run_dir)
    records = _load_records(run_dir)
    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)
    written: list[Path] = []

    def emit(name: str, rows: list[dict], columns: list[str]) -> None:
        path = report_dir / name
        _write_csv(path, rows, columns)
        written.append(path)

    summary = _aggregate(records)

    # method-level FAA/FWT, one row per method x buffer size
    by_method: dict[tuple, list[dict]] = {}
    for rec in records:
        cfg_buffer = rec.get("buffer_size")
        key = (rec["method_label"], cfg_buffer if cfg_buffer is not None else "")
        by_method.setdefault(key, []).append(rec)
    method_rows = []
    for (label, buffer_size) in sorted(by_method, key=str):
        grp = by_method[(label, buffer_size)]
        faas = [r["metrics"]["faa"] for r in grp]
        fwts = [r["metrics"]["fwt"] for r in grp if r["metrics"]["fwt"] is not None]
        fgs = [r["metrics"]["forgetting"] for r in grp
               if r["metrics"]["forgetting"] is not None]
        method_rows.append({
            "method": label, "buffer_size": buffer_size, "n_seeds": len(grp),
            "faa_mean": mean(faas), "faa_std": stdev(faas) if len(faas) > 1 else 0.0,
            "fwt_mean": mean(fwts) if fwts else None,
            "fwt_std": stdev(fwts) if len(fwts) > 1 else (0.0 if fwts else None),
            "forgetting_mean": mean(fgs) if fgs else None,
            "forgetting_std": stdev(fgs) if len(fgs) > 1 else (0.0 if fgs else None),
        })
    emit("faa_by_method.csv", method_rows,
         ["method", "buffer_size", "n_seeds", "faa_mean", "faa_std",
          "fwt_mean", "fwt_std"])
    emit("forgetting.csv", method_rows,
         ["method", "buffer_size", "n_seeds", "forgetting_mean", "forgetting_std"])

    # stage ablation over wscl runs only
    ablation = [row for row in summary if row["method"].startswith("wscl-")]
    emit("stage_ablation.csv", ablation,
         ["stages", "method", "n_seeds", "faa_mean", "faa_std",
          "fwt_mean", "fwt_std"])

    # efficiency: accepted-trajectory and search update counts
    emit("update_counts.csv", summary,
         ["method", "stages", "sweep_value", "n_seeds",
          "update_count_mean", "search_update_count_mean"])

    # per-task accepted freeze depth
    depth_rows = []
    for rec in records:
        for outcome in rec["task_outcomes"]:
            depth_rows.append({
                "method": rec["method_label"], "stages": rec["stages"],
                "seed": rec["seed"], "sweep_value": rec["sweep_value"],
                "task": outcome["task_index"],
                "accepted_depth": outcome["accepted_depth"],
            })
    emit("freeze_depths.csv", depth_rows,
         ["method", "stages", "seed", "sweep_value", "task", "accepted_depth"])

    sweep_rows = [row for row in summary if row["sweep_value"] is not None]
    if sweep_rows:
        emit("sweep_curve.csv", sweep_rows,
             ["sweep_value", "method", "stages", "n_seeds", "faa_mean", "faa_std"])

    if figures:
        written += plots.render_all(report_dir, method_rows, ablation,
                                    depth_rows, summary, sweep_rows)
    return written
