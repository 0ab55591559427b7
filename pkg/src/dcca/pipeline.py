"""End-to-end alignment: segmentation, lag estimation, transforms, model extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baselines import WarpPath, nlw_align
from .config import RunConfig
from .correlation import LagEstimate, windowed_lag_estimates
from .modelfit import KnotSet, pearl_fit
from .segmentation import WindowGrid, plan_segmentation
from .signal import OUTLIER, PiecewiseWarp, Signal, difference, evaluate_warp, resample, stack_warps
from .transform import NoCorrelatedContent, TransformNet, as_transform, train_alternating

log = logging.getLogger(__name__)

DEFAULT_Z_MS = 2 * 3.6e6


@dataclass
class AlignResult:
    warp: PiecewiseWarp
    estimates: list[LagEstimate] = field(default_factory=list)
    grid: Optional[WindowGrid] = None
    nets: Optional[dict] = None
    path: Optional[WarpPath] = None
    history: list = field(default_factory=list)


def _prepare(s1: Signal, s2: Signal, cfg: RunConfig) -> tuple[Signal, Signal]:
    if s2.fs != s1.fs:
        s2 = resample(s2, s1.fs)
    if cfg.difference:
        s1, s2 = difference(s1, cfg.difference), difference(s2, cfg.difference)
    return s1, s2


def _shifted(est: list[LagEstimate], offset: float) -> list[LagEstimate]:
    return [LagEstimate(e.knot, e.lag_ms + offset, e.score, e.valid, e.window) for e in est]


def align(s1: Signal, s2: Signal, config: Optional[RunConfig] = None, mode: Optional[str] = None,
          pretrained: Optional[dict] = None) -> AlignResult:
    """Estimate ``d(t)`` such that ``s2(t + d(t))`` matches ``s1(t)``.

    Super-segments are processed in order; each starts from the previous
    segment's warp evaluated at its first sample. ``pretrained`` may hold
    networks ``{"f1": ..., "f2": ...}`` to start training from.
    """
    cfg = config or RunConfig()
    if mode is not None:
        cfg = cfg.with_overrides(mode=mode)
    s1, s2 = _prepare(s1, s2, cfg)
    # index-based pairing already implies a displacement of t0_2 - t0_1
    offset = s2.t0 - s1.t0

    if cfg.mode == "nlw":
        sampled, path = nlw_align(s1, s2, cfg.radius)
        return AlignResult(sampled.to_warp(cfg.nlw_step_ms), path=path)

    z_ms = cfg.z_ms
    if z_ms is None and s1.duration_ms > DEFAULT_Z_MS:
        z_ms = DEFAULT_Z_MS
    grid = plan_segmentation(s1.n_samples, s1.fs, cfg.w_ms, z_ms, cfg.lam,
                             cfg.max_drift_ms_per_hr, t0=s1.t0)
    if cfg.mode == "plw":
        return _align_plw(s1, s2, grid, cfg, offset)

    tcfg = cfg.train_config()
    ecfg = cfg.energy_config()
    init = None
    if pretrained is not None:
        init = (pretrained["f1"], pretrained["f2"])
    nets = None
    parts, estimates, history = [], [], []
    base = cfg.initial_shift_ms
    any_valid = False
    for seg in grid.segments:
        k = seg.index
        wins = list(grid.windows(k))
        shift = base - offset
        if cfg.mode == "idcca":
            est = windowed_lag_estimates(s1, s2, grid, threshold=cfg.threshold, ridge_factor=cfg.ridge,
                                         base_shift_ms=shift, windows=wins, subsample=cfg.subsample,
                                         threads=cfg.threads)
        else:
            res = train_alternating(s1, s2, grid, tcfg, cfg.mode, init=init, base_shift_ms=shift, windows=wins)
            est = res.estimates
            nets = dict(f1=res.p1, f2=res.p2)
            init = (res.p1, res.p2)  # carry the weights into the next super-segment
            history.extend(dict(h, segment=k) for h in res.history)
        est = _shifted(est, offset)
        estimates.extend(est)
        knots = KnotSet.from_estimates(est)
        if knots.valid.any():
            any_valid = True
            part = pearl_fit(knots, ecfg, np.random.default_rng(cfg.seed + k))
        else:
            log.warning("super-segment %d has no window above the threshold; carrying the shift %.1f ms", k, base)
            part = PiecewiseWarp([np.array([base])], [0.0], knots.t.copy(),
                                 np.full(len(knots), OUTLIER), ecfg.family)
        parts.append(part)
        if cfg.sequential and np.any(part.labeling != OUTLIER):
            start = grid.t0 + (seg.start + seg.n_windows * grid.w) * 1000.0 / grid.fs
            base = float(evaluate_warp(part, start))
    if not any_valid:
        raise NoCorrelatedContent("no correlated content: no window reached the correlation threshold")
    warp = stack_warps(parts)
    warp.meta = dict(mode=cfg.mode, segments=len(parts), knots=_knot_meta(estimates))
    return AlignResult(warp, estimates, grid, nets, history=history)


def _knot_meta(est: list[LagEstimate]) -> dict:
    return dict(lag_ms=[e.lag_ms for e in est], score=[e.score for e in est], valid=[bool(e.valid) for e in est])


def _align_plw(s1, s2, grid, cfg, offset) -> AlignResult:
    base = cfg.initial_shift_ms
    estimates = []
    for seg in grid.segments:
        sub = grid.subgrid(seg.index)
        est = windowed_lag_estimates(s1, s2, sub, threshold=0.0, ridge_factor=cfg.ridge,
                                     base_shift_ms=base - offset, threads=cfg.threads)
        est = _shifted(est, offset)
        estimates.extend(est)
        if cfg.sequential:
            base = est[-1].lag_ms
    warp = PiecewiseWarp.from_samples(np.array([e.knot for e in estimates]), np.array([e.lag_ms for e in estimates]))
    warp.meta = dict(mode="plw", segments=len(grid.segments), knots=_knot_meta(estimates))
    return AlignResult(warp, estimates, grid)


def transformed_signals(result: AlignResult, s1: Signal, s2: Signal) -> tuple[Signal, Signal]:
    """Apply the trained (or identity) transforms to whole z-scored signals."""
    from .correlation import zscore
    nets = result.nets or {}
    out = []
    for key, s in (("f1", s1), ("f2", s2)):
        f = as_transform(nets.get(key)) if key in nets else None
        data = zscore(s.data)
        out.append(s.with_data(f(data) if f is not None else data))
    return out[0], out[1]
