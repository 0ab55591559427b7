"""Signal container, resampling, differencing and piecewise warps.

All times are milliseconds. A warp ``d(t)`` is the displacement that has to be
added to a reference (sensor 1) time ``t`` to find the matching instant on the
sensor 2 time axis, i.e. ``s2(t + d(t)) ~ s1(t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

OUTLIER = -1


@dataclass
class Signal:
    """Uniformly sampled multichannel signal, shape ``(channels, samples)``."""

    data: np.ndarray
    fs: float
    t0: float = 0.0
    channel_names: Optional[list[str]] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 1:
            data = data[np.newaxis, :]
        if data.ndim != 2:
            raise ValueError(f"signal data must be 1-D or 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("signal must have at least one channel and one sample")
        if not self.fs > 0:
            raise ValueError(f"sampling frequency must be positive, got {self.fs}")
        if not np.all(np.isfinite(data)):
            raise ValueError("signal contains NaN or Inf samples")
        self.data = data
        self.fs = float(self.fs)
        self.t0 = float(self.t0)
        if self.channel_names is not None and len(self.channel_names) != data.shape[0]:
            raise ValueError("channel_names does not match the number of channels")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def period_ms(self) -> float:
        return 1000.0 / self.fs

    @property
    def duration_ms(self) -> float:
        return self.n_samples * self.period_ms

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) * self.period_ms

    def with_data(self, data: np.ndarray, **changes) -> "Signal":
        kw = dict(fs=self.fs, t0=self.t0, channel_names=self.channel_names)
        kw.update(changes)
        return Signal(data, **kw)

    def __len__(self) -> int:
        return self.n_samples


def _interp_channels(t_new: np.ndarray, t_old: np.ndarray, data: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(t_new, t_old, ch) for ch in data])


def resample(s: Signal, target_fs: float) -> Signal:
    """Linearly resample ``s`` onto a uniform grid at ``target_fs`` (same t0)."""
    if not target_fs > 0:
        raise ValueError(f"target_fs must be positive, got {target_fs}")
    if s.n_samples < 1:
        raise ValueError("cannot resample an empty signal")
    n_new = max(1, int(round(s.n_samples * target_fs / s.fs)))
    t_new = s.t0 + np.arange(n_new) * (1000.0 / target_fs)
    return s.with_data(_interp_channels(t_new, s.times, s.data), fs=target_fs)


def difference(s: Signal, order: int = 1) -> Signal:
    """Per-channel finite difference; the start time moves by ``order`` samples."""
    if order not in (1, 2):
        raise ValueError(f"difference order must be 1 or 2, got {order}")
    if s.n_samples <= order:
        raise ValueError(f"need more than {order} samples to difference")
    return s.with_data(np.diff(s.data, n=order, axis=1), t0=s.t0 + order * s.period_ms)


@dataclass
class PiecewiseWarp:
    """Set of polynomial displacement models attached to knot times.

    ``models[k]`` holds coefficients (highest degree first) of a polynomial in
    ``t - centers[k]``. Evaluation picks the model of the nearest labelled knot
    unless ``breakpoints`` are given, in which case model ``k`` is used on
    ``[breakpoints[k-1], breakpoints[k])``.
    """

    models: list[np.ndarray]
    centers: list[float]
    knots: np.ndarray = field(default_factory=lambda: np.zeros(0))
    labeling: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    family: int = 2
    breakpoints: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.models = [np.atleast_1d(np.asarray(m, dtype=np.float64)) for m in self.models]
        self.centers = [float(c) for c in self.centers]
        self.knots = np.asarray(self.knots, dtype=np.float64).reshape(-1)
        self.labeling = np.asarray(self.labeling, dtype=np.int64).reshape(-1)
        if len(self.centers) != len(self.models):
            raise ValueError("one center per model is required")
        if len(self.knots) != len(self.labeling):
            raise ValueError("knots and labeling differ in length")
        bad = (self.labeling != OUTLIER) & ((self.labeling < 0) | (self.labeling >= len(self.models)))
        if np.any(bad):
            raise ValueError("labeling refers to a model that does not exist")
        if self.breakpoints is not None:
            self.breakpoints = np.asarray(self.breakpoints, dtype=np.float64).reshape(-1)
            if len(self.breakpoints) != max(len(self.models) - 1, 0):
                raise ValueError("breakpoints must number len(models) - 1")

    @classmethod
    def constant(cls, d_ms: float = 0.0) -> "PiecewiseWarp":
        return cls(models=[np.array([float(d_ms)])], centers=[0.0], family=0)

    @classmethod
    def identity(cls) -> "PiecewiseWarp":
        return cls.constant(0.0)

    @classmethod
    def from_samples(cls, t_ms: np.ndarray, d_ms: np.ndarray) -> "PiecewiseWarp":
        """Piecewise-linear warp through the given samples."""
        t = np.asarray(t_ms, dtype=np.float64)
        d = np.asarray(d_ms, dtype=np.float64)
        if len(t) == 0:
            raise ValueError("no samples")
        if len(t) == 1:
            w = cls.constant(d[0])
            w.knots, w.labeling = t.copy(), np.zeros(1, dtype=np.int64)
            return w
        if np.any(np.diff(t) <= 0):
            raise ValueError("sample times must be strictly increasing")
        slopes = np.diff(d) / np.diff(t)
        models = [np.array([sl, d0]) for sl, d0 in zip(slopes, d[:-1])]
        labeling = np.minimum(np.arange(len(t)), len(models) - 1)
        return cls(models=models, centers=list(t[:-1]), knots=t, labeling=labeling,
                   family=1, breakpoints=t[1:-1].copy())

    @property
    def n_models(self) -> int:
        return len(self.models)

    def model_value(self, k: int, t) -> np.ndarray:
        return np.polyval(self.models[k], np.asarray(t, dtype=np.float64) - self.centers[k])

    def __call__(self, t):
        return evaluate_warp(self, t)


def _select_models(w: PiecewiseWarp, t: np.ndarray) -> np.ndarray:
    if w.breakpoints is not None:
        return np.searchsorted(w.breakpoints, t, side="right")
    labelled = w.labeling != OUTLIER
    if not np.any(labelled):
        if w.n_models == 1:
            return np.zeros(t.shape, dtype=np.int64)
        raise ValueError("warp has several models but no labelled knot to choose between them")
    kt = w.knots[labelled]
    kl = w.labeling[labelled]
    order = np.argsort(kt, kind="stable")
    kt, kl = kt[order], kl[order]
    right = np.clip(np.searchsorted(kt, t), 0, len(kt) - 1)
    left = np.clip(right - 1, 0, len(kt) - 1)
    use_left = np.abs(t - kt[left]) <= np.abs(kt[right] - t)
    return np.where(use_left, kl[left], kl[right])


def evaluate_warp(w: PiecewiseWarp, t) -> np.ndarray:
    """Displacement ``d(t)`` in ms; scalar in, scalar out."""
    if w.n_models == 0:
        raise ValueError("warp has no models")
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    idx = _select_models(w, t)
    out = np.empty_like(t)
    for k in np.unique(idx):
        sel = idx == k
        out[sel] = w.model_value(int(k), t[sel])
    return float(out[0]) if scalar else out


def apply_warp(s: Signal, w: PiecewiseWarp, grid_times: Optional[np.ndarray] = None) -> Signal:
    """Resample sensor-2 signal ``s`` onto the reference axis using warp ``w``.

    Output sample ``i`` is ``s`` evaluated at ``t_i + d(t_i)``; ``grid_times``
    defaults to the time axis of ``s`` itself.
    """
    t = s.times if grid_times is None else np.asarray(grid_times, dtype=np.float64)
    mapped = t + evaluate_warp(w, t)
    step = np.diff(mapped)
    bad = np.flatnonzero(step <= 0)
    if bad.size:
        i = bad[0]
        raise ValueError(
            f"warp is not monotone: t + d(t) does not increase on [{t[i]:.3f}, {t[i + 1]:.3f}] ms"
        )
    data = _interp_channels(mapped, s.times, s.data)
    return s.with_data(data, t0=float(t[0]), fs=s.fs if grid_times is None else _grid_fs(t, s.fs))


def _grid_fs(t: np.ndarray, default: float) -> float:
    if len(t) < 2:
        return default
    return 1000.0 / float(np.median(np.diff(t)))


def stack_warps(parts: Sequence[PiecewiseWarp]) -> PiecewiseWarp:
    """Concatenate nearest-knot warps fitted on consecutive stretches of knots."""
    models, centers, knots, labels = [], [], [], []
    for p in parts:
        if p.breakpoints is not None:
            raise ValueError("cannot stack interval-mode warps")
        off = len(models)
        models.extend(p.models)
        centers.extend(p.centers)
        knots.append(p.knots)
        labels.append(np.where(p.labeling == OUTLIER, OUTLIER, p.labeling + off))
    family = max((p.family for p in parts), default=2)
    return PiecewiseWarp(models, centers, np.concatenate(knots) if knots else np.zeros(0),
                         np.concatenate(labels) if labels else np.zeros(0, dtype=int), family)
