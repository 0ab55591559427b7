"""Alignment error metrics and a small benchmark runner."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .baselines import WarpPath, path_displacement

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("dataset", "record", "method", "repeat", "mae_ms", "std_ms", "wall_time_s")


def alignment_mae(d_true, d_hat, eval_times) -> tuple[float, float]:
    """Mean and (population) standard deviation of ``|d_true - d_hat|``.

    ``d_true`` and ``d_hat`` are callables of time in ms or arrays already
    sampled at ``eval_times``.
    """
    t = np.asarray(eval_times, dtype=np.float64).reshape(-1)
    if t.size == 0:
        raise ValueError("no evaluation times")
    a = np.asarray(d_true(t) if callable(d_true) else d_true, dtype=np.float64)
    b = np.asarray(d_hat(t) if callable(d_hat) else d_hat, dtype=np.float64)
    err = np.abs(a - b)
    return float(err.mean()), float(err.std())


def dtw_path_error(path: WarpPath, d_true, fs: float, t0: float = 0.0) -> tuple[float, float]:
    """Score a DTW path against ``d_true`` at every sensor-1 index."""
    n1 = int(path.i.max()) + 1
    disp = path_displacement(path, n1) * 1000.0 / fs
    t = t0 + np.arange(n1) * 1000.0 / fs
    return alignment_mae(d_true, disp, t)


@dataclass
class BenchRow:
    dataset: str
    record: str
    method: str
    repeat: int
    mae_ms: float
    std_ms: float
    wall_time_s: float
    error: str = ""


@dataclass
class BenchRecord:
    """One benchmark input: a callable that produces ``(s1, s2, truth)``."""

    dataset: str
    record: str
    load: Callable


Method = Callable  # (s1, s2, repeat) -> callable d_hat


def run_benchmark(records: Sequence[BenchRecord], methods: dict[str, Method],
                  repeats: int = 1, eval_step_ms: float = 1000.0,
                  deterministic: Sequence[str] = ()) -> list[BenchRow]:
    """Run every method on every record; failures become rows with ``error`` set.

    Methods named in ``deterministic`` run once and their row is copied to the
    remaining repeats.
    """
    rows: list[BenchRow] = []
    for rec in records:
        s1, s2, truth = rec.load()
        t = np.arange(s1.t0, s1.t0 + s1.duration_ms, eval_step_ms)
        for name, method in methods.items():
            first = None
            for r in range(repeats):
                if first is not None and name in deterministic:
                    rows.append(BenchRow(**{**asdict(first), "repeat": r}))
                    continue
                tic = time.perf_counter()
                try:
                    d_hat = method(s1, s2, r)
                    mae, sd = alignment_mae(truth, d_hat, t)
                    row = BenchRow(rec.dataset, rec.record, name, r, mae, sd, time.perf_counter() - tic)
                except Exception as exc:  # noqa: BLE001 - reported, run continues
                    log.warning("%s failed on %s/%s: %s", name, rec.dataset, rec.record, exc)
                    row = BenchRow(rec.dataset, rec.record, name, r, float("nan"), float("nan"),
                                   time.perf_counter() - tic, f"{type(exc).__name__}: {exc}")
                rows.append(row)
                first = first or row
    return rows


def summarize(rows: Sequence[BenchRow]) -> dict:
    """Per (dataset, method): grand means, medians and the three spreads.

    ``std_time`` (mean over records of the per-record std over time points) is
    the headline spread; ``std_records`` and ``std_repeats`` are also given.
    """
    out: dict = {}
    keys = sorted({(r.dataset, r.method) for r in rows})
    for ds, m in keys:
        sel = [r for r in rows if r.dataset == ds and r.method == m]
        ok = [r for r in sel if not r.error]
        entry = dict(dataset=ds, method=m, runs=len(sel), failures=len(sel) - len(ok))
        if ok:
            mae = np.array([r.mae_ms for r in ok])
            recs = sorted({r.record for r in ok})
            per_rec = np.array([np.mean([r.mae_ms for r in ok if r.record == k]) for k in recs])
            rep_sd = [np.std([r.mae_ms for r in ok if r.record == k]) for k in recs]
            entry.update(
                mae_mean=float(mae.mean()),
                mae_median=float(np.median(mae)),
                std_time=float(np.mean([r.std_ms for r in ok])),
                std_records=float(per_rec.std()),
                std_repeats=float(np.mean(rep_sd)),
            )
        out[f"{ds}/{m}"] = entry
    return out


def _json_safe(v):
    # NaN is not valid JSON; failed runs are written as null
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def write_report(rows: Sequence[BenchRow], out_dir, summary: Optional[dict] = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(REPORT_COLUMNS + ("error",))
        for r in rows:
            wr.writerow([getattr(r, c) for c in REPORT_COLUMNS] + [r.error])
    json_path = out_dir / "report.json"
    with open(json_path, "w") as fh:
        payload = dict(rows=[asdict(r) for r in rows], summary=summary or summarize(rows))
        json.dump(_json_safe(payload), fh, indent=2, allow_nan=False)
    return csv_path, json_path
