from __future__ import annotations

import numpy as np
import pytest

from dcca.config import RunConfig
from dcca.pipeline import align, transformed_signals
from dcca.signal import OUTLIER, Signal
from dcca.synth import DriftSpec, gen_poisson_smooth, inject_drift_offsets
from dcca.transform import NoCorrelatedContent

FS = 20.0


def _pair(seed=0, dur=1200, k=8):
    base = gen_poisson_smooth(seed, dur, FS)
    return Signal(base.data[:, k:], FS), Signal(base.data[:, :-k], FS)


def test_constant_lag_all_modes():
    s1, s2 = _pair()
    for mode in ("idcca", "plw", "nlw"):
        res = align(s1, s2, RunConfig(w_ms=20_000.0), mode=mode)
        t = s1.times[400:-400]
        assert np.median(np.abs(res.warp(t) - 400.0)) < 1e-6, mode


def test_start_time_offset_enters_displacement():
    s1, s2 = _pair(1)
    moved = Signal(s2.data, FS, t0=5000.0)  # same samples, stamped 5 s later
    a = align(s1, s2, RunConfig(w_ms=20_000.0))
    b = align(s1, moved, RunConfig(w_ms=20_000.0))
    t = s1.times[::100]
    np.testing.assert_allclose(b.warp(t), a.warp(t) + 5000.0, atol=1e-6)


def test_super_segments_and_sequential_carry():
    fs = FS
    base = gen_poisson_smooth(2, 1800, fs)
    drifted, truth = inject_drift_offsets(base, DriftSpec(poly=(1e-3, 100.0)))
    cfg = RunConfig(w_ms=20_000.0, z_ms=300_000.0)
    res = align(base, drifted, cfg)
    assert res.warp.meta["segments"] == 6 and res.grid.Z == 6
    t = base.times[200:-600:50]
    assert np.mean(np.abs(res.warp(t) - truth(t))) < 30.0
    # without carrying the shift every segment starts from the initial guess; a
    # drift this small stays inside the lag range, so the result is the same
    res2 = align(base, drifted, cfg.with_overrides(sequential=False))
    assert np.mean(np.abs(res2.warp(t) - truth(t))) < 30.0


def test_sequential_carry_extends_lag_range():
    # drift of 3.6 s over 30 min: beyond half a 4 s window by the end
    base = gen_poisson_smooth(3, 1800, FS)
    drifted, truth = inject_drift_offsets(base, DriftSpec(poly=(2e-3, 0.0)))
    cfg = RunConfig(w_ms=4000.0, z_ms=120_000.0, threshold=0.3)
    t = base.times[100:-4000:50]
    seq = align(base, drifted, cfg)
    free = align(base, drifted, cfg.with_overrides(sequential=False))
    err_seq = np.mean(np.abs(seq.warp(t) - truth(t)))
    err_free = np.mean(np.abs(free.warp(t) - truth(t)))
    assert err_seq < 30.0 < err_free


def test_no_valid_windows_raises():
    rng = np.random.default_rng(0)
    s1, s2 = Signal(rng.normal(size=24_000), FS), Signal(rng.normal(size=24_000), FS)
    with pytest.raises(NoCorrelatedContent):
        align(s1, s2, RunConfig(w_ms=20_000.0, threshold=0.8))


def test_empty_segment_marked_outlier():
    s1, s2 = _pair(4, dur=1200)
    data = s1.data.copy()
    data[:, 12_000:] = np.random.default_rng(1).normal(size=(1, data.shape[1] - 12_000))
    res = align(s1.with_data(data), s2, RunConfig(w_ms=20_000.0, z_ms=600_000.0, threshold=0.5))
    seg1 = res.warp.knots >= 600_000.0
    assert np.all(res.warp.labeling[seg1] == OUTLIER)
    # the empty segment inherits the shift of its predecessor
    assert res.warp(900_000.0) == pytest.approx(400.0, abs=1e-6)


def test_dcca_mode_and_transformed_signals():
    s1, s2 = _pair(5, dur=400)
    cfg = RunConfig(w_ms=20_000.0, epochs=1, hidden=4, n_blocks=1, n_out=1, kernel=5)
    res = align(s1, s2, cfg, mode="dcca")
    assert set(res.nets) == {"f1", "f2"} and res.history
    t1, t2 = transformed_signals(res, s1, s2)
    assert t1.n_samples == s1.n_samples and t2.n_samples == s2.n_samples
    ident = align(s1, s2, cfg.with_overrides(epochs=0), mode="dcca")
    np.testing.assert_array_equal([e.lag_ms for e in ident.estimates],
                                  [e.lag_ms for e in align(s1, s2, cfg, mode="idcca").estimates])
