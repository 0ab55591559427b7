"""Synthetic benchmark pairs with known warping functions.

Families: smoothed Poisson processes (``smp``), their difference/square pair
(``rnd1d``), a Cartesian/spherical 3-D pair (``rnd3d``) and a quasi-periodic
pulse train with a derived, smoothed and sine-modulated counterpart
(``ecgbcg``). The last one is a lightweight stand-in for an ECG/BCG pair, not a
physiological model.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.signal import fftconvolve

from .signal import Signal, difference

FAMILIES = ("smp", "rnd1d", "rnd3d", "ecgbcg")


@dataclass
class PoissonSpec:
    rates: tuple = (0.4, 1.0, 2.5)  # events per second
    weights: tuple = (1.0, 0.6, 0.35)
    widths_ms: tuple = (300.0, 120.0, 60.0)  # Gaussian smoothing sigma
    noise_sigma: float = 0.05


def gen_poisson_smooth(seed: int, duration_s: float, fs: float, channels: int = 1,
                       spec: Optional[PoissonSpec] = None) -> Signal:
    """Weighted sum of smoothed Poisson event trains plus white noise."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    spec = spec or PoissonSpec()
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    data = np.zeros((channels, n))
    for c in range(channels):
        for rate, weight, width in zip(spec.rates, spec.weights, spec.widths_ms):
            if rate <= 0 or weight == 0:
                continue
            events = rng.poisson(rate / fs, size=n).astype(np.float64) * fs
            data[c] += weight * gaussian_filter1d(events, width * fs / 1000.0, mode="constant")
        data[c] += rng.normal(0.0, spec.noise_sigma, size=n)
    return Signal(data, fs)


def derive_pair_1d(base: Signal) -> tuple[Signal, Signal]:
    """First difference and elementwise square of ``base`` on a common axis."""
    s1 = difference(base, 1)
    sq = base.data[:, 1:] ** 2
    return s1, Signal(sq, base.fs, s1.t0, base.channel_names)


def to_spherical(xyz: np.ndarray) -> np.ndarray:
    """``(r^2, theta, phi)``: theta is the inclination from +z, phi the azimuth.

    The origin maps to ``(0, 0, 0)``.
    """
    x, y, z = xyz
    r2 = x * x + y * y + z * z
    r = np.sqrt(r2)
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.where(r > 0, np.arccos(np.clip(z / np.where(r > 0, r, 1.0), -1.0, 1.0)), 0.0)
    phi = np.arctan2(y, x)
    return np.stack([r2, theta, phi])


def from_spherical(sph: np.ndarray) -> np.ndarray:
    r2, theta, phi = sph
    r = np.sqrt(r2)
    return np.stack([r * np.sin(theta) * np.cos(phi), r * np.sin(theta) * np.sin(phi), r * np.cos(theta)])


def derive_pair_3d(base3: Signal) -> tuple[Signal, Signal]:
    if base3.n_channels != 3:
        raise ValueError("3-D pair needs a three-channel base signal")
    return base3, base3.with_data(to_spherical(base3.data), channel_names=["r2", "theta", "phi"])


@dataclass
class QuasiPeriodicPair:
    source: Signal
    derived: Signal
    beats_ms: np.ndarray


# (offset ms, amplitude, width ms) of the pulse template
_PULSE = ((-200.0, 0.15, 25.0), (-25.0, -0.12, 10.0), (0.0, 1.0, 9.0), (25.0, -0.25, 10.0), (300.0, 0.3, 40.0))


def _pulse_kernel(fs: float) -> np.ndarray:
    half = int(np.ceil(0.5 * fs))
    tk = np.arange(-half, half + 1) * 1000.0 / fs
    return sum(a * np.exp(-0.5 * ((tk - o) / w) ** 2) for o, a, w in _PULSE)


def _ricker(fs: float, width_ms: float) -> np.ndarray:
    half = int(np.ceil(4 * width_ms * fs / 1000.0))
    u = np.arange(-half, half + 1) * 1000.0 / fs / width_ms
    k = (1 - u ** 2) * np.exp(-0.5 * u ** 2)
    return k - k.mean()


def gen_quasiperiodic_pair(seed: int, duration_s: float, fs: float, rate_bpm: float = 60.0,
                           rr_std_ms: float = 50.0, resp_hz: float = 0.25,
                           wavelet_ms: float = 40.0, smooth_ms: float = 30.0,
                           noise_sigma: float = 0.0) -> QuasiPeriodicPair:
    """Pulse train with variable beat intervals and a morphologically distinct twin.

    The twin is the source band-passed by a zero-mean wavelet, smoothed and
    multiplied by a sine at ``resp_hz`` (which flips its sign periodically).
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    mean_rr = 60000.0 / rate_bpm
    count = int(duration_s * 1000.0 / max(mean_rr - 4 * rr_std_ms, 0.3 * mean_rr)) + 2
    rr = mean_rr + rng.normal(0.0, rr_std_ms, size=count) if rr_std_ms > 0 else np.full(count, mean_rr)
    rr = np.maximum(rr, 0.3 * mean_rr)
    beats = np.cumsum(rr) - rr[0] * rng.random()
    beats = beats[(beats >= 0) & (beats < duration_s * 1000.0)]
    train = np.zeros(n)
    np.add.at(train, np.clip(np.round(beats * fs / 1000.0).astype(int), 0, n - 1), 1.0)
    source = fftconvolve(train, _pulse_kernel(fs), mode="same")
    band = fftconvolve(source, _ricker(fs, wavelet_ms), mode="same")
    band = gaussian_filter1d(band, smooth_ms * fs / 1000.0)
    t = np.arange(n) / fs
    derived = band * np.sin(2 * np.pi * resp_hz * t + rng.uniform(0, 2 * np.pi))
    derived /= max(np.std(derived), 1e-12)
    if noise_sigma > 0:
        source = source + rng.normal(0, noise_sigma, n)
        derived = derived + rng.normal(0, noise_sigma, n)
    return QuasiPeriodicPair(Signal(source, fs), Signal(derived, fs), beats)


@dataclass
class DriftSpec:
    """Clock drift ``h`` plus step offsets ``b`` as functions of sensor-1 time.

    ``poly`` holds coefficients (highest first) of a polynomial in ms elapsed
    since the signal start; ``sine`` is ``(amplitude_ms, period_ms, phase)``.
    """

    poly: tuple = ()
    sine: Optional[tuple] = None
    offsets: tuple = ()  # ((time_ms, step_ms), ...)

    def __post_init__(self):
        self.poly = tuple(float(c) for c in self.poly)
        self.offsets = tuple(sorted((float(a), float(b)) for a, b in self.offsets))
        if self.sine is not None:
            self.sine = tuple(float(v) for v in self.sine)

    def h(self, elapsed_ms) -> np.ndarray:
        e = np.asarray(elapsed_ms, dtype=np.float64)
        out = np.polyval(self.poly, e) if self.poly else np.zeros_like(e)
        if self.sine is not None:
            amp, period, phase = self.sine
            out = out + amp * np.sin(2 * np.pi * e / period + phase)
        return out

    def dh(self, elapsed_ms) -> np.ndarray:
        e = np.asarray(elapsed_ms, dtype=np.float64)
        out = np.polyval(np.polyder(self.poly), e) if len(self.poly) > 1 else np.zeros_like(e)
        if self.sine is not None:
            amp, period, phase = self.sine
            out = out + amp * 2 * np.pi / period * np.cos(2 * np.pi * e / period + phase)
        return out

    def b(self, elapsed_ms) -> np.ndarray:
        e = np.asarray(elapsed_ms, dtype=np.float64)
        out = np.zeros_like(e)
        for at, step in self.offsets:
            out = out + np.where(e >= at, step, 0.0)
        return out

    def d(self, elapsed_ms) -> np.ndarray:
        return self.h(elapsed_ms) + self.b(elapsed_ms)

    def max_rate_ms_per_hr(self, duration_ms: float) -> float:
        e = np.linspace(0.0, duration_ms, 2001)
        return float(np.max(np.abs(self.dh(e)))) * 3.6e6

    def to_dict(self) -> dict:
        return dict(poly=list(self.poly), sine=None if self.sine is None else list(self.sine),
                    offsets=[list(o) for o in self.offsets])

    @classmethod
    def from_dict(cls, d: dict) -> "DriftSpec":
        return cls(tuple(d.get("poly", ())), d.get("sine"), tuple(tuple(o) for o in d.get("offsets", ())))

    @classmethod
    def random(cls, rng: np.random.Generator, duration_ms: float, max_total_ms: float = 2000.0,
               n_offsets: int = 2, max_offset_ms: float = 600.0) -> "DriftSpec":
        """Quadratic drift reaching at most ``max_total_ms`` plus positive offsets."""
        total = rng.uniform(0.3, 1.0) * max_total_ms * rng.choice([-1.0, 1.0])
        bend = rng.uniform(-0.5, 0.5)
        # h(e) = total * ((1 - bend) u + bend u^2), u = e / duration
        a = total * bend / duration_ms ** 2
        b1 = total * (1 - bend) / duration_ms
        init = rng.uniform(-200.0, 200.0)
        # one offset per equal slice of the middle 80 %, kept off the slice edges
        slots = (np.arange(n_offsets) + rng.uniform(0.25, 0.75, size=n_offsets)) / max(n_offsets, 1)
        times = (0.1 + 0.8 * slots) * duration_ms
        steps = rng.uniform(0.3, 1.0, size=n_offsets) * max_offset_ms
        return cls((a, b1, init), None, tuple(zip(times, steps)))


@dataclass
class GroundTruth:
    """True displacement sampled on a regular grid (1 Hz by default)."""

    t_ms: np.ndarray
    h_ms: np.ndarray
    b_ms: np.ndarray
    spec: Optional[DriftSpec] = None
    t0: float = 0.0

    @property
    def d_ms(self) -> np.ndarray:
        return self.h_ms + self.b_ms

    def __call__(self, t):
        if self.spec is not None:
            return self.spec.d(np.asarray(t, dtype=np.float64) - self.t0)
        return np.interp(t, self.t_ms, self.d_ms)


def inject_drift_offsets(s: Signal, spec: DriftSpec, truth_hz: float = 1.0) -> tuple[Signal, GroundTruth]:
    """Warp the time stamps of ``s`` by ``t -> t + h(t) + b(t)`` and resample.

    Negative steps make stamps collide; the colliding later samples are dropped.
    """
    elapsed = np.arange(s.n_samples) * s.period_ms
    if np.any(np.abs(spec.dh(elapsed)) >= 1.0):
        raise ValueError("drift rate must stay below 1 so that time remains monotone")
    warped = s.times + spec.d(elapsed)
    keep = np.ones(len(warped), dtype=bool)
    if any(step < 0 for _, step in spec.offsets):
        keep[1:] = warped[1:] > np.maximum.accumulate(warped)[:-1]
    data = np.stack([np.interp(s.times, warped[keep], ch[keep]) for ch in s.data])
    step = 1000.0 / truth_hz
    te = np.arange(0.0, s.duration_ms + 1e-9, step)
    truth = GroundTruth(s.t0 + te, spec.h(te), spec.b(te), spec, s.t0)
    return s.with_data(data), truth


@dataclass
class NoiseSpec:
    """Amplitudes are relative to each channel's standard deviation."""

    wander_amp: float = 0.0
    wander_band: tuple = (0.05, 0.3)  # Hz
    wander_components: int = 3
    loss_rate: float = 0.0
    loss_segment_ms: float = 5000.0
    loss_amp: float = 0.05
    external_rate: float = 0.0
    external_segment_ms: float = 10000.0
    external_mix: float = 1.0
    snr_db: Optional[float] = None

    def __post_init__(self):
        for name in ("loss_rate", "external_rate", "external_mix"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def _segments(rng, n: int, rate: float, seg: int) -> list[tuple[int, int]]:
    """Non-overlapping segments of length ``seg`` covering ``round(rate * n)`` samples."""
    seg = max(1, min(seg, n))
    count = int(round(rate * n / seg))
    if count == 0:
        return []
    count = min(count, n // seg)
    free = n - count * seg
    cuts = np.sort(rng.integers(0, free + 1, size=count))
    return [(int(c + i * seg), int(c + (i + 1) * seg)) for i, c in enumerate(cuts)]


def inject_noise(s: Signal, spec: NoiseSpec, seed: int) -> Signal:
    """Baseline wander, signal loss, external-signal segments and white noise."""
    rng = np.random.default_rng(seed)
    data = s.data.copy()
    n = s.n_samples
    sd = np.std(s.data, axis=1)
    sd = np.where(sd > 0, sd, 1.0)
    mu = np.mean(s.data, axis=1)
    t = np.arange(n) / s.fs
    if spec.wander_amp > 0:
        T = n / s.fs
        bins = np.arange(int(np.ceil(spec.wander_band[0] * T)), int(np.floor(spec.wander_band[1] * T)) + 1)
        bins = bins[bins > 0]
        if bins.size:
            for c in range(s.n_channels):
                picks = rng.choice(bins, size=min(spec.wander_components, bins.size), replace=False)
                for k in picks:
                    amp = spec.wander_amp * sd[c] * rng.uniform(0.5, 1.0)
                    data[c] += amp * np.sin(2 * np.pi * k / T * t + rng.uniform(0, 2 * np.pi))
    if spec.loss_rate > 0:
        for a, b in _segments(rng, n, spec.loss_rate, int(round(spec.loss_segment_ms * s.fs / 1000.0))):
            data[:, a:b] = mu[:, None] + spec.loss_amp * sd[:, None] * rng.normal(size=(s.n_channels, b - a))
    if spec.external_rate > 0:
        segs = _segments(rng, n, spec.external_rate, int(round(spec.external_segment_ms * s.fs / 1000.0)))
        for a, b in segs:
            other = gen_poisson_smooth(int(rng.integers(2 ** 31)), (b - a) / s.fs, s.fs, s.n_channels).data
            other = other[:, :b - a]
            o_sd = np.std(other, axis=1, keepdims=True)
            other = (other - other.mean(axis=1, keepdims=True)) / np.where(o_sd > 0, o_sd, 1.0)
            other = mu[:, None] + sd[:, None] * other
            data[:, a:b] = (1 - spec.external_mix) * data[:, a:b] + spec.external_mix * other
    if spec.snr_db is not None:
        noise_sd = sd / (10 ** (spec.snr_db / 20.0))
        data += noise_sd[:, None] * rng.normal(size=data.shape)
    return s.with_data(data)


@dataclass
class SyntheticRecord:
    s1: Signal
    s2: Signal
    truth: GroundTruth
    meta: dict = field(default_factory=dict)


def make_record(family: str, seed: int, duration_s: float, fs: float,
                drift: Optional[DriftSpec] = None, noise: Optional[NoiseSpec] = None,
                noise1: Optional[NoiseSpec] = None) -> SyntheticRecord:
    """Generate one record of ``family`` with sensor 2 drifted by ``drift``.

    ``noise`` applies to sensor 2 and ``noise1`` (default: same as ``noise``)
    to sensor 1, each with its own seed. For ``ecgbcg`` sensor 1 is the
    derived, modulated signal and sensor 2 the pulse train.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    rng = np.random.default_rng(seed)
    if drift is None:
        drift = DriftSpec.random(rng, duration_s * 1000.0)
    if family == "smp":
        base = gen_poisson_smooth(seed, duration_s, fs)
        noise_spec = PoissonSpec()
        s1 = base.with_data(base.data + rng.normal(0, noise_spec.noise_sigma, base.data.shape))
        s2 = base
    elif family == "rnd1d":
        s1, s2 = derive_pair_1d(gen_poisson_smooth(seed, duration_s, fs))
    elif family == "rnd3d":
        s1, s2 = derive_pair_3d(gen_poisson_smooth(seed, duration_s, fs, channels=3))
    else:
        pair = gen_quasiperiodic_pair(seed, duration_s, fs)
        s1, s2 = pair.derived, pair.source
    s2, truth = inject_drift_offsets(s2, drift)
    if noise is not None:
        s2 = inject_noise(s2, noise, seed + 1)
        s1 = inject_noise(s1, noise1 if noise1 is not None else noise, seed + 2)
    meta = dict(family=family, seed=seed, duration_s=duration_s, fs=fs, drift=drift.to_dict(),
                noise=None if noise is None else noise.to_dict())
    return SyntheticRecord(s1, s2, truth, meta)
