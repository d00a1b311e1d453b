"""CSV and JSON outputs for runs, ablations and sweeps.

Per-run CSV columns, in order (``p`` state dim, ``N`` robots, ``M``
targets, ``U`` sensor types; indices are zero-based)::

    step
    true_{j}_{k}        j < M, k < p   true target state
    est_{j}_{k}         j < M, k < p   posterior estimate
    trace_p_{j}         j < M          trace of the posterior block
    trace_inv_sog                      tr O_Pi^{-1} at the chosen positions
    x_{i}_{k}           i < N, k < p   robot position after the move
    gamma_{i}_{l}       i < N, l < U   sensor matrix after failures
    n_failures                         sensors lost this step
    failures                           "robot:type" pairs joined by ";"
    margin                             sensing margin after failures
    delta1_{j}          j < M          tracking slacks
    delta2                             safety slack
    objective
    status                             solver status
    observability_lost                 0/1

Width: ``1 + 2Mp + M + 1 + Np + NU + 2 + 1 + M + 4``. Floats are written
with 17 significant digits so the file round-trips exactly. Wall-clock
time is kept out of the CSV (it is in the JSON summary) so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import json
from importlib import metadata
from pathlib import Path

import numpy as np

from .simulation import AblationSummary, RunLog

FLOAT_FMT = ".17g"


def version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__
        return __version__


def run_columns(N: int, M: int, p: int, U: int) -> list:
    cols = ["step"]
    cols += [f"true_{j}_{k}" for j in range(M) for k in range(p)]
    cols += [f"est_{j}_{k}" for j in range(M) for k in range(p)]
    cols += [f"trace_p_{j}" for j in range(M)]
    cols += ["trace_inv_sog"]
    cols += [f"x_{i}_{k}" for i in range(N) for k in range(p)]
    cols += [f"gamma_{i}_{l}" for i in range(N) for l in range(U)]
    cols += ["n_failures", "failures", "margin"]
    cols += [f"delta1_{j}" for j in range(M)]
    cols += ["delta2", "objective", "status", "observability_lost"]
    return cols


def schema_width(N: int, M: int, p: int, U: int) -> int:
    return 1 + 2 * M * p + M + 1 + N * p + N * U + 2 + 1 + M + 4


def _f(v) -> str:
    return format(float(v), FLOAT_FMT)


def _row(rec) -> list:
    row = [str(rec.step)]
    row += [_f(v) for v in rec.true_targets]
    row += [_f(v) for v in rec.estimate]
    row += [_f(v) for v in rec.trace_cov]
    row.append(_f(rec.trace_inv_sog))
    row += [_f(v) for v in np.ravel(rec.robot_positions)]
    row += [str(int(v)) for v in np.ravel(rec.gamma)]
    row.append(str(len(rec.failures)))
    row.append(";".join(f"{i}:{l}" for i, l in rec.failures))
    row.append(_f(rec.margin))
    row += [_f(v) for v in rec.delta1]
    row += [_f(rec.delta2), _f(rec.objective), rec.status, str(int(rec.observability_lost))]
    return row


def _open(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: cannot write ({exc.strerror})") from None


def write_run_csv(runlog: RunLog, path) -> Path:
    path = Path(path)
    rt_cfg = runlog.config
    N = len(rt_cfg.team.sensor_matrix)
    M = len(rt_cfg.targets)
    U = len(rt_cfg.team.sensor_library)
    p = len(rt_cfg.team.sensor_library[0].h)
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(run_columns(N, M, p, U))
        for rec in runlog.records:
            w.writerow(_row(rec))
    return path


def run_summary(runlog: RunLog) -> dict:
    """Terminal metrics plus a reloadable echo of the configuration as run."""
    cfg = runlog.config.with_run(seed=runlog.seed, steps=len(runlog), mode=runlog.mode)
    last = runlog.records[-1] if runlog.records else None
    return {
        "version": version(),
        "scenario": cfg.name,
        "seed": runlog.seed,
        "mode": runlog.mode,
        "steps": len(runlog),
        "final_margin": None if last is None else last.margin,
        "final_trace_p": None if last is None else [float(v) for v in last.trace_cov],
        "sensors_remaining": None if last is None else int(np.sum(last.gamma)),
        "time_to_zero_margin": runlog.time_to_zero_margin(),
        "observability_lost_before_final_step": runlog.degraded,
        "mean_step_ms": runlog.mean_step_ms,
        "config": json.loads(cfg.to_json()),
    }


def _write_json(obj, path: Path) -> Path:
    with _open(path) as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    return path


def export_run(runlog: RunLog, out_dir, stem: str | None = None) -> tuple:
    """Write ``<stem>.csv`` and ``<stem>.json``; returns both paths."""
    out = Path(out_dir)
    stem = stem or f"{runlog.config.name}_seed{runlog.seed}_{runlog.mode}"
    csv_path = write_run_csv(runlog, out / f"{stem}.csv")
    summary = run_summary(runlog)
    summary["csv"] = csv_path.name
    return csv_path, _write_json(summary, out / f"{stem}.json")


def export_ablation(summary: AblationSummary, out_dir, stem: str = "ablation") -> tuple:
    """Long-format per-run and per-step aggregate CSVs plus a JSON summary.

    ``<stem>_runs.csv``: mode, seed, step, metric, value.
    ``<stem>_summary.csv``: mode, step, metric, mean, std.
    Metrics are ``tracking_error`` (sum of per-target traces) and ``margin``.
    """
    out = Path(out_dir)
    metrics = (("tracking_error", "tracking_error"), ("margin", "margin"))
    runs = out / f"{stem}_runs.csv"
    with _open(runs) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "seed", "step", "metric", "value"])
        for mode in summary.MODES:
            for s, seed in enumerate(summary.seeds):
                for t in range(summary.steps):
                    for name, attr in metrics:
                        w.writerow([mode, seed, t, name, _f(getattr(summary, attr)[mode][s, t])])
    agg = out / f"{stem}_summary.csv"
    with _open(agg) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "step", "metric", "mean", "std"])
        for mode in summary.MODES:
            for name, attr in metrics:
                mean, std = summary.mean(attr, mode), summary.std(attr, mode)
                for t in range(summary.steps):
                    w.writerow([mode, t, name, _f(mean[t]), _f(std[t])])
    info = {
        "version": version(),
        "seeds": summary.seeds,
        "steps": summary.steps,
        "final_margin_mean": {m: summary.final_margin_mean(m) for m in summary.MODES},
        "median_time_to_zero_margin": {m: summary.median_time_to_zero(m) for m in summary.MODES},
        "time_to_zero_margin": {m: [int(v) for v in summary.time_to_zero[m]] for m in summary.MODES},
    }
    return runs, agg, _write_json(info, out / f"{stem}.json")


def export_sweep(rows, out_dir, stem: str = "sweep") -> tuple:
    """Long-format ``<stem>.csv`` (delta, metric, value) and a JSON table."""
    out = Path(out_dir)
    path = out / f"{stem}.csv"
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "metric", "value"])
        for r in rows:
            w.writerow([_f(r.delta), "tracking_quality", _f(r.tracking_quality)])
            w.writerow([_f(r.delta), "safety_metric", _f(r.safety_metric)])
    table = [{"delta": r.delta, "tracking_quality": r.tracking_quality, "safety_metric": r.safety_metric,
              "objective": r.objective, "status": r.status, "positions": np.asarray(r.positions).tolist()}
             for r in rows]
    return path, _write_json({"version": version(), "rows": table}, out / f"{stem}.json")
