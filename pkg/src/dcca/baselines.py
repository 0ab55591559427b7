"""Comparison aligners: windowed cross-correlation (PLW) and approximate DTW (NLW)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .correlation import windowed_lag_estimates
from .segmentation import WindowGrid
from .signal import PiecewiseWarp, Signal

DEFAULT_RADIUS = 30


@dataclass
class WarpPath:
    """Monotone DTW path as parallel index arrays into ``x`` and ``y``."""

    i: np.ndarray
    j: np.ndarray
    cost: float = 0.0

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.i.tolist(), self.j.tolist()))

    def __len__(self) -> int:
        return len(self.i)

    def check(self, n1: int, n2: int) -> None:
        if len(self.i) == 0 or (self.i[0], self.j[0]) != (0, 0) or (self.i[-1], self.j[-1]) != (n1 - 1, n2 - 1):
            raise ValueError("path must run from (0, 0) to (N1-1, N2-1)")
        di, dj = np.diff(self.i), np.diff(self.j)
        if np.any(di < 0) or np.any(dj < 0) or np.any(di > 1) or np.any(dj > 1) or np.any(di + dj == 0):
            raise ValueError("path steps must be (1,0), (0,1) or (1,1)")


@numba.njit(cache=True)
def _dtw_window(x, y, lo, hi):
    """DTW restricted to row spans ``[lo[i], hi[i])``; returns cost and path.

    Step directions: 0 diagonal, 1 from the row above, 2 from the left.
    Ties prefer the diagonal.
    """
    n = x.shape[0]
    off = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        off[i + 1] = off[i] + hi[i] - lo[i]
    step = np.empty(off[n], dtype=np.uint8)
    inf = np.inf
    prev = np.empty(0)
    prev_lo = 0
    prev_hi = 0
    for i in range(n):
        w = hi[i] - lo[i]
        cur = np.empty(w)
        for jj in range(w):
            j = lo[i] + jj
            c = abs(x[i] - y[j])
            best = inf
            arg = 0
            if i == 0 and j == 0:
                best = 0.0
            else:
                if i > 0 and prev_lo <= j - 1 < prev_hi:
                    best = prev[j - 1 - prev_lo]
                    arg = 0
                if i > 0 and prev_lo <= j < prev_hi:
                    v = prev[j - prev_lo]
                    if v < best:
                        best = v
                        arg = 1
                if jj > 0:
                    v = cur[jj - 1]
                    if v < best:
                        best = v
                        arg = 2
            cur[jj] = c + best
            step[off[i] + jj] = arg
        prev = cur
        prev_lo = lo[i]
        prev_hi = hi[i]
    total = prev[prev_hi - 1 - prev_lo]
    # backtrack
    m = y.shape[0]
    pi = np.empty(n + m, dtype=np.int64)
    pj = np.empty(n + m, dtype=np.int64)
    i = n - 1
    j = m - 1
    k = 0
    while True:
        pi[k] = i
        pj[k] = j
        k += 1
        if i == 0 and j == 0:
            break
        a = step[off[i] + j - lo[i]]
        if a == 0:
            i -= 1
            j -= 1
        elif a == 1:
            i -= 1
        else:
            j -= 1
    return total, pi[:k][::-1].copy(), pj[:k][::-1].copy()


def _as_series(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional; project multivariate input with cca_project")
    if v.size == 0:
        raise ValueError(f"{name} is empty")
    return v


def dtw_exact(x, y) -> WarpPath:
    """Full-matrix DTW with absolute-difference point cost (small inputs only)."""
    x, y = _as_series(x, "x"), _as_series(y, "y")
    lo = np.zeros(len(x), dtype=np.int64)
    hi = np.full(len(x), len(y), dtype=np.int64)
    cost, i, j = _dtw_window(x, y, lo, hi)
    return WarpPath(i, j, float(cost))


def _coarsen(v: np.ndarray) -> np.ndarray:
    n = len(v)
    out = 0.5 * (v[0:n - 1:2] + v[1:n:2])
    if n % 2:
        out = np.append(out, v[-1])
    return out


def _expand_window(path: WarpPath, n: int, m: int, radius: int):
    """Project a coarse path to full resolution and dilate it by ``radius``."""
    lo = np.full(n, m, dtype=np.int64)
    hi = np.zeros(n, dtype=np.int64)
    for di in (0, 1):
        rows = np.minimum(2 * path.i + di, n - 1)
        np.minimum.at(lo, rows, 2 * path.j)
        np.maximum.at(hi, rows, np.minimum(2 * path.j + 2, m))
    # square dilation: running min/max over +-radius rows, then widen columns
    from scipy.ndimage import maximum_filter1d, minimum_filter1d
    size = 2 * radius + 1
    lo = minimum_filter1d(lo, size, mode="nearest") - radius
    hi = maximum_filter1d(hi, size, mode="nearest") + radius
    return np.clip(lo, 0, m).astype(np.int64), np.clip(hi, 0, m).astype(np.int64)


def fastdtw(x, y, radius: int = DEFAULT_RADIUS) -> WarpPath:
    """Approximate DTW by recursive coarsening, solving and windowed refinement."""
    x, y = _as_series(x, "x"), _as_series(y, "y")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    min_size = radius + 2
    if len(x) <= min_size or len(y) <= min_size:
        return dtw_exact(x, y)
    coarse = fastdtw(_coarsen(x), _coarsen(y), radius)
    lo, hi = _expand_window(coarse, len(x), len(y), radius)
    cost, i, j = _dtw_window(x, y, lo, hi)
    return WarpPath(i, j, float(cost))


def path_displacement(path: WarpPath, n1: int) -> np.ndarray:
    """Mean matched ``j - i`` per index of ``x``, in samples."""
    sums = np.bincount(path.i, weights=path.j - path.i, minlength=n1)
    counts = np.bincount(path.i, minlength=n1)
    return sums / np.maximum(counts, 1)


def cca_project(s1: Signal, s2: Signal, ridge: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Project both signals onto their top canonical pair (univariate pass-through).

    The two signals are paired sample by sample over their common length.
    """
    X, Y = s1.data, s2.data
    if X.shape[0] == 1 and Y.shape[0] == 1:
        return X[0].copy(), Y[0].copy()
    n = min(X.shape[1], Y.shape[1])
    Xc = X[:, :n] - X[:, :n].mean(axis=1, keepdims=True)
    Yc = Y[:, :n] - Y[:, :n].mean(axis=1, keepdims=True)
    s11 = Xc @ Xc.T / n
    s22 = Yc @ Yc.T / n
    s12 = Xc @ Yc.T / n
    i1 = np.linalg.inv(np.linalg.cholesky(s11 + ridge * np.trace(s11) / len(s11) * np.eye(len(s11))))
    i2 = np.linalg.inv(np.linalg.cholesky(s22 + ridge * np.trace(s22) / len(s22) * np.eye(len(s22))))
    u, _, vt = np.linalg.svd(i1 @ s12 @ i2.T)
    a = i1.T @ u[:, 0]
    b = i2.T @ vt[0]
    return a @ X, b @ Y


@dataclass
class SampledWarp:
    """Displacement samples ``d(t)`` evaluated by linear interpolation."""

    t_ms: np.ndarray
    d_ms: np.ndarray

    def __call__(self, t):
        return np.interp(t, self.t_ms, self.d_ms)

    def to_warp(self, step_ms: Optional[float] = None) -> PiecewiseWarp:
        """Piecewise-linear warp, optionally thinned to one sample per ``step_ms``."""
        t, d = self.t_ms, self.d_ms
        if step_ms is not None and len(t) > 2:
            grid = np.arange(t[0], t[-1], step_ms)
            grid = np.append(grid, t[-1]) if grid[-1] < t[-1] else grid
            t, d = grid, np.interp(grid, self.t_ms, self.d_ms)
        return PiecewiseWarp.from_samples(t, d)


def nlw_align(s1: Signal, s2: Signal, radius: int = DEFAULT_RADIUS) -> tuple[SampledWarp, WarpPath]:
    """DTW-based displacement, averaging collapsed links, in ms on sensor-1 time."""
    if s1.fs != s2.fs:
        raise ValueError("nlw_align needs a common sampling rate")
    x, y = cca_project(s1, s2)
    x = (x - x.mean()) / (x.std() or 1.0)
    y = (y - y.mean()) / (y.std() or 1.0)
    path = fastdtw(x, y, radius)
    disp = path_displacement(path, len(x))
    d_ms = disp * s1.period_ms + (s2.t0 - s1.t0)
    return SampledWarp(s1.times, d_ms), path


def plw_align(s1: Signal, s2: Signal, grid: WindowGrid, base_shift_ms=0.0,
              ridge_factor: float = 1e-4, threads: int = 1) -> PiecewiseWarp:
    """Per-window correlation peaks joined linearly, with no outlier handling."""
    est = windowed_lag_estimates(s1, s2, grid, threshold=0.0, ridge_factor=ridge_factor,
                                 base_shift_ms=base_shift_ms, threads=threads)
    t = np.array([e.knot for e in est])
    d = np.array([e.lag_ms for e in est])
    warp = PiecewiseWarp.from_samples(t, d)
    warp.meta = dict(scores=[e.score for e in est])
    return warp
