"""Signal, warp, ground-truth and plot-data file formats."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .signal import OUTLIER, PiecewiseWarp, Signal, apply_warp
from .synth import GroundTruth

WARP_SCHEMA = "dcca.warp"
WARP_VERSION = 1


def _fmt(path, fmt: Optional[str]) -> str:
    fmt = fmt or Path(path).suffix.lstrip(".").lower()
    if fmt not in ("csv", "bin"):
        raise ValueError(f"unknown signal format {fmt!r}; use csv or bin")
    return fmt


def load_signal(path, fmt: Optional[str] = None) -> Signal:
    fmt = _fmt(path, fmt)
    return _load_csv(path) if fmt == "csv" else _load_bin(path)


def save_signal(path, s: Signal, fmt: Optional[str] = None) -> None:
    fmt = _fmt(path, fmt)
    if fmt == "csv":
        names = list(s.channel_names) if s.channel_names else [f"ch{i}" for i in range(s.n_channels)]
        table = np.column_stack([s.times, s.data.T])
        header = ",".join(["time_ms"] + names)
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
    else:
        np.ascontiguousarray(s.data.T, dtype="<f4").tofile(path)
        side = dict(fs=s.fs, t0=s.t0, channels=list(s.channel_names or [f"ch{i}" for i in range(s.n_channels)]),
                    dtype="float32le", count=s.n_samples)
        Path(str(path) + ".json").write_text(json.dumps(side, indent=2))


def _load_csv(path) -> Signal:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2 or rows[0][0].strip() != "time_ms":
        raise ValueError(f"{path}: header must be 'time_ms,ch0,...'")
    names = [c.strip() for c in rows[0][1:]]
    body = [r for r in rows[1:] if r]
    if len(body) < 2:
        raise ValueError(f"{path}: need at least two samples to infer the sampling rate")
    try:
        table = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ValueError(f"{path}: unparsable cell ({exc})") from None
    if table.shape[1] != len(names) + 1:
        raise ValueError(f"{path}: rows must have {len(names) + 1} columns")
    if not np.all(np.isfinite(table)):
        r = int(np.argwhere(~np.isfinite(table))[0, 0])
        raise ValueError(f"{path}: non-finite value in data row {r + 1}")
    t = table[:, 0]
    dt = t[1] - t[0]
    if dt <= 0:
        raise ValueError(f"{path}: time must be strictly increasing (data row 2)")
    bad = np.flatnonzero(np.abs(np.diff(t) - dt) > 1e-6 * dt)
    if bad.size:
        raise ValueError(f"{path}: non-uniform time grid at data row {bad[0] + 2} (t = {t[bad[0] + 1]} ms)")
    fs = 1000.0 * (len(t) - 1) / (t[-1] - t[0])
    return Signal(table[:, 1:].T.copy(), fs, float(t[0]), names)


def _load_bin(path) -> Signal:
    side_path = Path(str(path) + ".json")
    side = json.loads(side_path.read_text())
    for key in ("fs", "t0", "channels", "dtype", "count"):
        if key not in side:
            raise ValueError(f"{side_path}: missing key {key!r}")
    if side["dtype"] != "float32le":
        raise ValueError(f"{side_path}: unsupported dtype {side['dtype']!r}")
    raw = np.fromfile(path, dtype="<f4")
    l = len(side["channels"])
    if raw.size != l * side["count"]:
        raise ValueError(f"{path}: {raw.size} values but sidecar declares {side['count']} x {l}")
    data = raw.reshape(side["count"], l).T.astype(np.float64)
    return Signal(data, float(side["fs"]), float(side["t0"]), list(side["channels"]))


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def warp_to_dict(w: PiecewiseWarp) -> dict:
    return dict(schema=WARP_SCHEMA, version=WARP_VERSION,
                models=[m.tolist() for m in w.models], centers=list(w.centers),
                knots=w.knots.tolist(), labeling=w.labeling.tolist(), family=w.family,
                breakpoints=None if w.breakpoints is None else w.breakpoints.tolist(),
                meta=_plain(w.meta))


def warp_from_dict(d: dict) -> PiecewiseWarp:
    if d.get("schema") != WARP_SCHEMA:
        raise ValueError(f"not a warp document (schema {d.get('schema')!r})")
    if d.get("version") != WARP_VERSION:
        raise ValueError(f"unsupported warp schema version {d.get('version')!r}")
    return PiecewiseWarp([np.array(m, dtype=np.float64) for m in d["models"]], d["centers"],
                         np.array(d["knots"], dtype=np.float64), np.array(d["labeling"], dtype=np.int64),
                         int(d["family"]), None if d["breakpoints"] is None else np.array(d["breakpoints"]),
                         dict(d.get("meta") or {}))


def save_warp(path, w: PiecewiseWarp) -> None:
    Path(path).write_text(json.dumps(warp_to_dict(w), indent=1))


def load_warp(path) -> PiecewiseWarp:
    return warp_from_dict(json.loads(Path(path).read_text()))


def save_truth(path, truth: GroundTruth) -> None:
    table = np.column_stack([truth.t_ms, truth.h_ms, truth.b_ms, truth.d_ms])
    np.savetxt(path, table, delimiter=",", header="t_ms,h_ms,b_ms,d_ms", comments="", fmt="%.17g")


def load_truth(path) -> GroundTruth:
    with open(path) as fh:
        header = fh.readline().strip()
    if header != "t_ms,h_ms,b_ms,d_ms":
        raise ValueError(f"{path}: header must be 't_ms,h_ms,b_ms,d_ms'")
    table = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    return GroundTruth(table[:, 0], table[:, 1], table[:, 2], None, float(table[0, 0]))


def _names(s: Signal, prefix: str) -> list[str]:
    return [f"{prefix}_{n}" for n in (s.channel_names or [f"ch{i}" for i in range(s.n_channels)])]


def _write_table(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def export_plot_data(kind: str, path, s1: Optional[Signal] = None, s2: Optional[Signal] = None,
                     warp: Optional[PiecewiseWarp] = None, estimates=None, transforms=None,
                     curve_points: int = 100) -> Path:
    """Write a CSV table for one figure panel.

    ``overlay``: both signals on the sensor-1 axis (sensor 2 corrected by
    ``warp`` when given). ``knots``: one ``knot`` row per window plus ``model``
    rows sampling each model over the span of its knots. ``transformed``: like
    ``overlay`` on z-scored signals passed through ``transforms = (f1, f2)``.
    """
    path = Path(path)
    if kind in ("overlay", "transformed"):
        if s1 is None or s2 is None:
            raise ValueError(f"{kind} export needs both signals")
        if kind == "transformed":
            from .correlation import zscore
            f1, f2 = transforms or (None, None)
            s1 = s1.with_data(f1(zscore(s1.data)) if f1 else zscore(s1.data))
            s2 = s2.with_data(f2(zscore(s2.data)) if f2 else zscore(s2.data))
        if warp is not None:
            s2 = apply_warp(s2, warp, s1.times)
        else:
            s2 = s2.with_data(np.stack([np.interp(s1.times, s2.times, ch) for ch in s2.data]))
        rows = np.column_stack([s1.times, s1.data.T, s2.data.T]).tolist()
        _write_table(path, ["time_ms"] + _names(s1, "s1") + _names(s2, "s2"), rows)
        return path
    if kind != "knots":
        raise ValueError(f"unknown plot kind {kind!r}")
    if warp is None:
        raise ValueError("knots export needs a warp")
    rows = []
    t = warp.knots
    if estimates is not None:
        lag = [e.lag_ms for e in estimates]
        score = [e.score for e in estimates]
    else:
        info = warp.meta.get("knots", {})
        lag = info.get("lag_ms", [float("nan")] * len(t))
        score = info.get("score", [float("nan")] * len(t))
    for i, tk in enumerate(t):
        rows.append(["knot", i, float(tk), float(lag[i]), float(score[i]), int(warp.labeling[i])])
    for k in range(warp.n_models):
        sel = warp.labeling == k
        if warp.breakpoints is not None:
            lo = warp.knots[k] if k < len(warp.knots) else warp.centers[k]
            hi = warp.knots[k + 1] if k + 1 < len(warp.knots) else lo
        elif np.any(sel):
            lo, hi = t[sel].min(), t[sel].max()
        else:
            continue
        for tt in np.linspace(lo, hi, curve_points):
            rows.append(["model", k, float(tt), float(warp.model_value(k, tt)), "", k])
    _write_table(path, ["kind", "index", "t_ms", "d_ms", "score", "label"], rows)
    return path


__all__ = ["OUTLIER", "load_signal", "save_signal", "save_warp", "load_warp", "warp_to_dict",
           "warp_from_dict", "save_truth", "load_truth", "export_plot_data"]
