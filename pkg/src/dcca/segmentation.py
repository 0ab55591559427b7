"""Two-level tiling of a recording into super-segments and windows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .signal import Signal


@dataclass(frozen=True)
class SuperSegment:
    index: int
    start: int  # sample index on sensor 1
    n_windows: int
    partial: bool = False


@dataclass
class WindowGrid:
    z: int
    w: int
    Z: int
    M: int
    lam: float
    fs: float
    n_samples: int
    t0: float = 0.0
    segments: tuple = ()

    @property
    def window_ms(self) -> float:
        return self.w * 1000.0 / self.fs

    @property
    def max_lag(self) -> int:
        return int(np.floor(self.lam * self.w))

    def window_start(self, super_idx: int, window_idx: int) -> int:
        seg = self.segments[super_idx]
        if not 0 <= window_idx < seg.n_windows:
            raise IndexError(f"window {window_idx} out of range for super-segment {super_idx}")
        return seg.start + window_idx * self.w

    def window_length(self, super_idx: int, window_idx: int) -> int:
        return min(self.w, self.n_samples - self.window_start(super_idx, window_idx))

    def knot(self, super_idx: int, window_idx: int) -> float:
        start = self.window_start(super_idx, window_idx)
        length = self.window_length(super_idx, window_idx)
        return self.t0 + (start + (length - 1) / 2.0) * 1000.0 / self.fs

    def windows(self, super_idx: Optional[int] = None):
        """Yield ``(super_idx, window_idx)`` pairs in time order."""
        segs = self.segments if super_idx is None else [self.segments[super_idx]]
        for seg in segs:
            for j in range(seg.n_windows):
                yield seg.index, j

    @property
    def knots(self) -> np.ndarray:
        return np.array([self.knot(k, j) for k, j in self.windows()])

    def subgrid(self, super_idx: int) -> "WindowGrid":
        return WindowGrid(self.z, self.w, self.Z, self.M, self.lam, self.fs, self.n_samples,
                          self.t0, (self.segments[super_idx],))


def plan_segmentation(n_samples: int, fs: float, w_ms: float, z_ms: Optional[float] = None,
                      lam: float = 0.5, max_drift_ms_per_hr: float = 0.0,
                      t0: float = 0.0) -> WindowGrid:
    """Build the window grid and check the sizing constraints.

    ``z_ms=None`` uses the whole record as a single super-segment. A declared
    ``max_drift_ms_per_hr`` of zero skips the drift check.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    if fs <= 0 or n_samples < 1:
        raise ValueError("need a positive sampling rate and at least one sample")
    duration_ms = n_samples * 1000.0 / fs
    if z_ms is None:
        z_ms = duration_ms
    if not w_ms < z_ms:
        raise ValueError(f"window length must be shorter than the super-segment: w_ms={w_ms} >= z_ms={z_ms}")
    if z_ms > duration_ms + 1e-9:
        raise ValueError(f"super-segment longer than the record: z_ms={z_ms} > duration {duration_ms} ms")
    w = int(round(w_ms * fs / 1000.0))
    z = int(round(z_ms * fs / 1000.0))
    if w < 2:
        raise ValueError("window shorter than two samples")
    M = z // w
    Z = n_samples // z
    if M < 1 or Z < 1:
        raise ValueError(f"degenerate plan: M={M}, Z={Z}")
    drift_per_segment = max_drift_ms_per_hr * (z_ms / 3.6e6)
    if drift_per_segment > lam * w_ms:
        raise ValueError(
            f"drift constraint violated: max drift per super-segment {drift_per_segment:g} ms "
            f"> lambda * w = {lam * w_ms:g} ms"
        )
    segments = [SuperSegment(k, k * z, M) for k in range(Z)]
    rest = n_samples - Z * z
    # trailing partial super-segment keeps whole windows plus one truncated window >= w/2
    if rest >= w // 2 and rest > 0:
        n_rest = rest // w + (1 if rest % w >= w / 2 else 0)
        if n_rest:
            segments.append(SuperSegment(Z, Z * z, n_rest, partial=True))
    return WindowGrid(z, w, Z, M, lam, fs, n_samples, t0, tuple(segments))


class WindowPair(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    truncated: bool
    start: int
    shift: int


class WindowUnavailable(ValueError):
    """The shifted window runs off the end (or start) of a signal."""


def extract_window_pair(s1: Signal, s2: Signal, grid: WindowGrid, super_idx: int,
                        window_idx: int, base_shift_ms: float = 0.0) -> WindowPair:
    """Cut the ``(super_idx, window_idx)`` window from both signals.

    The sensor-2 block starts ``base_shift_ms`` later than the sensor-1 block.
    """
    start = grid.window_start(super_idx, window_idx)
    shift = int(round(base_shift_ms * grid.fs / 1000.0))
    ystart = start + shift
    head = max(0, -ystart)
    length = min(grid.w, s1.n_samples - start, s2.n_samples - ystart) - head
    if length < grid.w / 2:
        raise WindowUnavailable(
            f"window ({super_idx}, {window_idx}) has only {max(length, 0)} of {grid.w} samples available"
        )
    x = s1.data[:, start + head:start + head + length]
    y = s2.data[:, ystart + head:ystart + head + length]
    return WindowPair(x, y, length < grid.w, start + head, shift)
