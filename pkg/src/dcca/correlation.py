"""All-lag normalized cross-correlation and CCA scores on window pairs.

Lag convention: a positive lag ``c`` pairs ``x[k]`` with ``y[k + c]``, so a
copy of ``x`` delayed by ``c`` samples peaks at ``+c``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import signal as sps

from .segmentation import WindowGrid, WindowUnavailable, extract_window_pair
from .signal import Signal

DEFAULT_RIDGE = 1e-4


class CorrelationError(ValueError):
    pass


@dataclass
class LagCurve:
    lags: np.ndarray
    scores: np.ndarray
    degenerate: bool = False

    @property
    def best(self) -> int:
        return int(np.argmax(self.scores))

    @property
    def argmax_lag(self) -> int:
        return int(self.lags[self.best])

    @property
    def peak(self) -> float:
        return float(self.scores[self.best])

    def refined_lag(self) -> float:
        """Parabolic sub-sample refinement of the peak."""
        i = self.best
        if i == 0 or i == len(self.scores) - 1:
            return float(self.lags[i])
        a, b, c = self.scores[i - 1:i + 2]
        den = a - 2 * b + c
        if den >= 0:
            return float(self.lags[i])
        return float(self.lags[i] + 0.5 * (a - c) / den)


@dataclass
class LagEstimate:
    knot: float
    lag_ms: float
    score: float
    valid: bool
    window: tuple = (0, 0)


def _overlap_sums(a: np.ndarray, b: np.ndarray, lags: np.ndarray, left: bool) -> np.ndarray:
    """Sums of ``a * b`` over the slice each lag keeps from one side.

    ``left=True`` is the sensor-1 slice (``x[0:n-c]`` for c >= 0, ``x[-c:n]``
    otherwise); ``left=False`` the sensor-2 slice.
    """
    n = np.shape(a)[-1]
    prod = a * b
    pre = np.concatenate([np.zeros(prod.shape[:-1] + (1,)), np.cumsum(prod, axis=-1)], axis=-1)
    pos = lags >= 0
    if left:
        lo = np.where(pos, 0, -lags)
        hi = np.where(pos, n - lags, n)
    else:
        lo = np.where(pos, lags, 0)
        hi = np.where(pos, n, n + lags)
    return pre[..., hi] - pre[..., lo]


def _cross_sums(x: np.ndarray, y: np.ndarray, max_lag: int) -> np.ndarray:
    """``sum_k x[i, k] * y[j, k + c]`` for all channel pairs and lags."""
    n = x.shape[-1]
    out = np.empty((x.shape[0], y.shape[0], 2 * max_lag + 1))
    for i in range(x.shape[0]):
        for j in range(y.shape[0]):
            full = sps.correlate(y[j], x[i], mode="full", method="fft")
            out[i, j] = full[n - 1 - max_lag:n + max_lag]
    return out


def _check_pair(x, y, max_lag):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"window lengths differ: {x.shape[-1]} vs {y.shape[-1]}")
    n = x.shape[-1]
    max_lag = int(max_lag)
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must lie in [0, {n - 1}], got {max_lag}")
    return x, y, max_lag


def _lagged_moments(x: np.ndarray, y: np.ndarray, max_lag: int):
    """Per-lag centered covariance blocks of the overlapping slices."""
    x = x - x.mean(axis=-1, keepdims=True)
    y = y - y.mean(axis=-1, keepdims=True)
    n = x.shape[-1]
    lags = np.arange(-max_lag, max_lag + 1)
    cnt = (n - np.abs(lags)).astype(np.float64)
    ones = np.ones(n)
    sx = _overlap_sums(x, ones, lags, left=True)  # (l1, L)
    sy = _overlap_sums(y, ones, lags, left=False)
    sxx = _overlap_sums(x[:, None, :], x[None, :, :], lags, left=True)  # (l1, l1, L)
    syy = _overlap_sums(y[:, None, :], y[None, :, :], lags, left=False)
    sxy = _cross_sums(x, y, max_lag)
    c11 = sxx - sx[:, None, :] * sx[None, :, :] / cnt
    c22 = syy - sy[:, None, :] * sy[None, :, :] / cnt
    c12 = sxy - sx[:, None, :] * sy[None, :, :] / cnt
    move = lambda a: np.moveaxis(a, -1, 0)
    return lags, move(c11), move(c22), move(c12)


def _scale_floor(c: np.ndarray) -> float:
    return 1e-12 * max(float(np.max(np.abs(c))), 1e-300)


def ncc_all_lags(x, y, max_lag: int) -> LagCurve:
    """Pearson correlation of the overlapping slices at every lag in ``[-max_lag, max_lag]``."""
    x, y, max_lag = _check_pair(x, y, max_lag)
    if x.shape[0] != 1 or y.shape[0] != 1:
        raise ValueError("ncc_all_lags expects univariate windows; use cca_all_lags")
    lags, c11, c22, c12 = _lagged_moments(x, y, max_lag)
    vx, vy, cxy = c11[:, 0, 0], c22[:, 0, 0], c12[:, 0, 0]
    ok = (vx > _scale_floor(vx)) & (vy > _scale_floor(vy))
    scores = np.zeros(len(lags))
    scores[ok] = cxy[ok] / np.sqrt(vx[ok] * vy[ok])
    return LagCurve(lags, scores, degenerate=not np.any(ok))


def _inv_chol(c: np.ndarray, ridge_factor: float, absolute: float = 0.0):
    l = c.shape[-1]
    tr = np.trace(c, axis1=-2, axis2=-1)
    ridge = ridge_factor * tr / l + absolute
    reg = c + ridge[:, None, None] * np.eye(l)
    try:
        L = np.linalg.cholesky(reg)
    except np.linalg.LinAlgError as exc:
        raise CorrelationError(
            f"Cholesky factorisation failed even with ridge; try a larger ridge ({exc})"
        ) from None
    return np.linalg.inv(L)


def cca_all_lags(x, y, max_lag: int, ridge_factor: float = DEFAULT_RIDGE,
                 signed_univariate: bool = True) -> LagCurve:
    """CCA correlation (nuclear norm of the whitened cross-covariance) per lag.

    The ridge added to each covariance block is ``ridge_factor * trace / l``.
    For two univariate windows the signed correlation is returned when
    ``signed_univariate`` is set, matching :func:`ncc_all_lags` up to the ridge.
    """
    x, y, max_lag = _check_pair(x, y, max_lag)
    lags, c11, c22, c12 = _lagged_moments(x, y, max_lag)
    d1 = np.trace(c11, axis1=1, axis2=2)
    d2 = np.trace(c22, axis1=1, axis2=2)
    ok = (d1 > _scale_floor(d1)) & (d2 > _scale_floor(d2))
    scores = np.zeros(len(lags))
    if not np.any(ok):
        return LagCurve(lags, scores, degenerate=True)
    if x.shape[0] == 1 and y.shape[0] == 1:
        r = 1.0 + ridge_factor
        val = c12[ok, 0, 0] / np.sqrt(c11[ok, 0, 0] * r * c22[ok, 0, 0] * r)
        scores[ok] = val if signed_univariate else np.abs(val)
        return LagCurve(lags, scores)
    # tiny absolute floor keeps rank-deficient blocks factorizable
    i1 = _inv_chol(c11[ok], ridge_factor, 1e-12 * d1[ok].max())
    i2 = _inv_chol(c22[ok], ridge_factor, 1e-12 * d2[ok].max())
    t = i1 @ c12[ok] @ np.swapaxes(i2, -1, -2)
    scores[ok] = np.linalg.svd(t, compute_uv=False).sum(axis=-1)
    return LagCurve(lags, scores)


def cca_score(X, Y, ridge: float = 0.0) -> float:
    """Sum of canonical correlations between two blocks (channels x samples).

    ``ridge`` is added to the diagonal of both auto-covariance matrices.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("blocks must have the same number of samples")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    X = X - X.mean(axis=1, keepdims=True)
    Y = Y - Y.mean(axis=1, keepdims=True)
    s11 = X @ X.T + ridge * np.eye(X.shape[0])
    s22 = Y @ Y.T + ridge * np.eye(Y.shape[0])
    s12 = X @ Y.T
    try:
        i1 = np.linalg.inv(np.linalg.cholesky(s11))
        i2 = np.linalg.inv(np.linalg.cholesky(s22))
    except np.linalg.LinAlgError:
        raise CorrelationError(
            f"Cholesky factorisation failed with ridge={ridge}; use a larger ridge"
        ) from None
    return float(np.linalg.svd(i1 @ s12 @ i2.T, compute_uv=False).sum())


def zscore(block: np.ndarray) -> np.ndarray:
    block = np.asarray(block, dtype=np.float64)
    mu = block.mean(axis=-1, keepdims=True)
    sd = block.std(axis=-1, keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    return (block - mu) / sd


Transform = Callable[[np.ndarray], np.ndarray]


def estimate_window(x: np.ndarray, y: np.ndarray, max_lag: int, transform1: Optional[Transform] = None,
                    transform2: Optional[Transform] = None, ridge_factor: float = DEFAULT_RIDGE) -> LagCurve:
    xs, ys = zscore(x), zscore(y)
    if transform1 is not None:
        xs = np.asarray(transform1(xs), dtype=np.float64)
    if transform2 is not None:
        ys = np.asarray(transform2(ys), dtype=np.float64)
    return cca_all_lags(xs, ys, max_lag, ridge_factor)


def windowed_lag_estimates(s1: Signal, s2: Signal, grid: WindowGrid,
                           transform1: Optional[Transform] = None,
                           transform2: Optional[Transform] = None,
                           threshold: float = 0.3, ridge_factor: float = DEFAULT_RIDGE,
                           base_shift_ms: float | Sequence[float] = 0.0,
                           windows: Optional[Sequence[tuple]] = None,
                           subsample: bool = False, threads: int = 1) -> list[LagEstimate]:
    """Per-window lag estimates in time order.

    ``base_shift_ms`` is either one value or one value per super-segment; it is
    included in the returned ``lag_ms``.
    """
    if not 0.0 <= threshold < 1.0:
        raise ValueError(f"threshold must lie in [0, 1), got {threshold}")
    todo = list(grid.windows()) if windows is None else list(windows)

    def shift_of(k):
        if np.ndim(base_shift_ms) == 0:
            return float(base_shift_ms)
        return float(base_shift_ms[k])

    def one(kj):
        k, j = kj
        try:
            pair = extract_window_pair(s1, s2, grid, k, j, shift_of(k))
        except WindowUnavailable:
            # the carried shift pushes this window past the data: no estimate
            return LagEstimate(grid.knot(k, j), shift_of(k), 0.0, False, (k, j))
        max_lag = min(grid.max_lag, int(np.floor(grid.lam * pair.x.shape[1])))
        curve = estimate_window(pair.x, pair.y, max_lag, transform1, transform2, ridge_factor)
        lag = curve.refined_lag() if subsample else float(curve.argmax_lag)
        score = 0.0 if curve.degenerate else curve.peak
        return LagEstimate(
            knot=grid.knot(k, j),
            lag_ms=(pair.shift + lag) * 1000.0 / grid.fs,
            score=score,
            valid=(not curve.degenerate) and score >= threshold,
            window=(k, j),
        )

    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, todo))
    else:
        out = [one(kj) for kj in todo]
    out.sort(key=lambda e: e.knot)
    return out
