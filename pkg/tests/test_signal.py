from __future__ import annotations

import numpy as np
import pytest

from dcca.signal import (OUTLIER, PiecewiseWarp, Signal, apply_warp, difference, evaluate_warp,
                         resample, stack_warps)
from dcca.synth import DriftSpec, gen_poisson_smooth, inject_drift_offsets


def test_signal_validation():
    with pytest.raises(ValueError):
        Signal(np.array([[1.0, np.nan]]), 10.0)
    with pytest.raises(ValueError):
        Signal(np.ones((1, 3)), 0.0)
    s = Signal(np.arange(5.0), 10.0, t0=100.0)
    assert s.n_channels == 1 and s.n_samples == 5
    np.testing.assert_allclose(s.times, [100, 200, 300, 400, 500])


def test_resample_constant_and_ramp():
    s = resample(Signal(np.full(4, 5.0), 4.0), 2.0)
    assert s.n_samples == 2 and s.fs == 2.0
    np.testing.assert_array_equal(s.data[0], [5.0, 5.0])
    r = resample(Signal(np.arange(10.0), 10.0), 5.0)
    assert r.data[0, 0] == 0.0
    assert r.t0 == 0.0


def test_resample_sine_accuracy():
    fs = 100.0
    t = np.arange(2000) / fs
    s = resample(Signal(np.sin(2 * np.pi * t), fs), 50.0)
    tt = s.times / 1000.0
    assert np.max(np.abs(s.data[0] - np.sin(2 * np.pi * tt))) < 1e-3


def test_difference():
    s = Signal(np.array([1.0, 3.0, 6.0, 10.0]), 10.0)
    d = difference(s, 1)
    np.testing.assert_array_equal(d.data[0], [2, 3, 4])
    assert d.t0 == pytest.approx(100.0)
    ramp = Signal(np.arange(20.0) * 3, 10.0)
    np.testing.assert_array_equal(difference(ramp, 2).data, 0.0)
    np.testing.assert_array_equal(difference(difference(ramp, 1), 1).data, difference(ramp, 2).data)
    with pytest.raises(ValueError):
        difference(s, 3)


def test_difference_of_random_walk_is_white():
    rng = np.random.default_rng(0)
    walk = Signal(np.cumsum(rng.normal(size=100_000)), 100.0)
    inc = difference(walk, 1).data[0]
    r1 = np.corrcoef(inc[:-1], inc[1:])[0, 1]
    assert abs(r1) < 0.01


def test_evaluate_warp_basics():
    assert evaluate_warp(PiecewiseWarp.identity(), 1234.0) == 0.0
    lin = PiecewiseWarp([np.array([1e-4, 0.0])], [0.0])
    assert evaluate_warp(lin, 1e6) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        evaluate_warp(PiecewiseWarp([], []), 0.0)


def test_evaluate_warp_nearest_labelled_knot():
    w = PiecewiseWarp([np.array([0.0]), np.array([500.0])], [0.0, 0.0],
                      knots=np.array([0.0, 1000.0, 2000.0, 3000.0]),
                      labeling=np.array([0, OUTLIER, 1, 1]))
    # 1000 ms is an outlier knot; the nearest labelled knot is at 0 or 2000
    assert evaluate_warp(w, 900.0) == 0.0
    assert evaluate_warp(w, 1100.0) == 500.0
    assert evaluate_warp(w, 1999.0) - evaluate_warp(w, 0.0) == 500.0
    for k, lab in zip(w.knots, w.labeling):
        if lab != OUTLIER:
            assert evaluate_warp(w, k) == w.model_value(lab, k)


def test_apply_warp_identity_and_constant():
    s = gen_poisson_smooth(0, 20, 10.0)
    out = apply_warp(s, PiecewiseWarp.identity())
    np.testing.assert_array_equal(out.data, s.data)
    shifted = apply_warp(s, PiecewiseWarp.constant(1000.0))
    np.testing.assert_allclose(shifted.data[0, :-10], s.data[0, 10:], atol=1e-12)


def test_apply_warp_rejects_non_monotone():
    s = Signal(np.arange(100.0), 10.0)
    w = PiecewiseWarp.from_samples(np.array([0.0, 5000.0, 5100.0, 9900.0]), np.array([0.0, 0.0, -500.0, -500.0]))
    with pytest.raises(ValueError, match="5000"):
        apply_warp(s, w)


def test_apply_true_warp_undoes_drift():
    s = gen_poisson_smooth(1, 600, 50.0)
    spec = DriftSpec(poly=(2e-10, 1e-4, 30.0))
    drifted, truth = inject_drift_offsets(s, spec)
    w = PiecewiseWarp.from_samples(truth.t_ms, truth.d_ms)
    back = apply_warp(drifted, w, s.times)
    inner = slice(100, -200)
    err = np.abs(back.data[0, inner] - s.data[0, inner])
    assert np.corrcoef(back.data[0, inner], s.data[0, inner])[0, 1] > 0.999
    assert np.median(err) < 0.05 * np.std(s.data)


def test_from_samples_interval_mode():
    w = PiecewiseWarp.from_samples(np.array([0.0, 10.0, 20.0]), np.array([0.0, 10.0, 0.0]))
    np.testing.assert_allclose(w(np.array([5.0, 10.0, 15.0, 25.0])), [5.0, 10.0, 5.0, -5.0])


def test_stack_warps_offsets_labels():
    a = PiecewiseWarp([np.array([1.0])], [0.0], np.array([0.0, 1.0]), np.array([0, OUTLIER]))
    b = PiecewiseWarp([np.array([2.0]), np.array([3.0])], [0.0, 0.0], np.array([2.0, 3.0]), np.array([1, 0]))
    w = stack_warps([a, b])
    np.testing.assert_array_equal(w.labeling, [0, OUTLIER, 2, 1])
    np.testing.assert_allclose(w(np.array([0.0, 2.0, 3.0])), [1.0, 3.0, 2.0])
