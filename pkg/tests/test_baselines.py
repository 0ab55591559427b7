from __future__ import annotations

import numpy as np
import pytest

from dcca.baselines import (SampledWarp, WarpPath, cca_project, dtw_exact, fastdtw, nlw_align, path_displacement,
                            plw_align)
from dcca.correlation import windowed_lag_estimates
from dcca.segmentation import plan_segmentation
from dcca.signal import Signal
from dcca.synth import gen_poisson_smooth


def brute_dtw_cost(x, y):
    n, m = len(x), len(y)
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = abs(x[i - 1] - y[j - 1]) + min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
    return D[n, m]


def test_identical_series_diagonal_path():
    x = np.random.default_rng(0).normal(size=200)
    p = fastdtw(x, x)
    assert p.pairs == [(k, k) for k in range(200)]
    assert p.cost == 0.0


def test_single_repeat_gives_one_vertical_step():
    x = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    y = np.array([0.0, 1.0, 2.0, 2.0, 3.0, 4.0])
    p = dtw_exact(x, y)
    assert p.cost == 0.0
    assert p.pairs == [(0, 0), (1, 1), (2, 2), (2, 3), (3, 4), (4, 5)]


@pytest.mark.parametrize("seed", range(4))
def test_exact_dtw_matches_recurrence(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=int(rng.integers(5, 40))), rng.normal(size=int(rng.integers(5, 40)))
    p = dtw_exact(x, y)
    assert p.cost == pytest.approx(brute_dtw_cost(x, y), abs=1e-9)
    assert p.cost == pytest.approx(np.abs(x[p.i] - y[p.j]).sum(), abs=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_fastdtw_close_to_exact(seed):
    rng = np.random.default_rng(seed)
    base = np.cumsum(rng.normal(size=600))
    x = base[:500] + 0.1 * rng.normal(size=500)
    y = np.interp(np.linspace(0, 499, 550) + 3 * np.sin(np.linspace(0, 6, 550)), np.arange(600), base)
    exact = dtw_exact(x, y).cost
    approx = fastdtw(x, y, radius=20)
    assert exact <= approx.cost <= 1.2 * exact + 1e-9
    approx.check(len(x), len(y))


def test_fastdtw_symmetric_cost_and_path_invariants():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=300), rng.normal(size=280)
    a, b = fastdtw(x, y, 10), fastdtw(y, x, 10)
    assert a.cost == pytest.approx(b.cost, rel=1e-9)
    a.check(300, 280)
    assert a.cost == pytest.approx(np.abs(x[a.i] - y[a.j]).sum(), rel=1e-12)


def test_path_check_rejects_bad_paths():
    with pytest.raises(ValueError, match="run from"):
        WarpPath([0, 1], [0, 0]).check(3, 1)
    with pytest.raises(ValueError, match="steps"):
        WarpPath([0, 2], [0, 1]).check(3, 2)


def test_input_errors():
    with pytest.raises(ValueError, match="empty"):
        fastdtw(np.zeros(0), np.zeros(3))
    with pytest.raises(ValueError, match="one-dimensional"):
        fastdtw(np.zeros((2, 5)), np.zeros(5))
    with pytest.raises(ValueError, match="radius"):
        fastdtw(np.zeros(5), np.zeros(5), radius=0)


def test_path_displacement_averages_collapsed_links():
    p = WarpPath([0, 1, 1, 1, 2], [0, 1, 2, 3, 3])
    np.testing.assert_allclose(path_displacement(p, 3), [0.0, 1.0, 1.0])


def test_nlw_zero_and_constant_lead():
    fs = 100.0
    s = gen_poisson_smooth(1, 60, fs)
    w, _ = nlw_align(s, s)
    np.testing.assert_array_equal(w(s.times), 0.0)
    k = 10
    s1 = Signal(s.data[:, k:], fs)
    s2 = Signal(s.data[:, :-k], fs)
    w, _ = nlw_align(s1, s2)
    inner = s1.times[200:-200]
    assert np.median(w(inner)) == pytest.approx(k * 1000.0 / fs)
    with pytest.raises(ValueError, match="sampling rate"):
        nlw_align(s1, Signal(s2.data, 50.0))


def test_cca_project_recovers_shared_component():
    rng = np.random.default_rng(3)
    z = rng.normal(size=3000)
    X = np.vstack([z + 0.1 * rng.normal(size=3000), rng.normal(size=3000)])
    Y = np.vstack([rng.normal(size=3000), rng.normal(size=3000), -2 * z + 0.1 * rng.normal(size=3000)])
    a, b = cca_project(Signal(X, 10.0), Signal(Y, 10.0))
    assert abs(np.corrcoef(a, b)[0, 1]) > 0.98
    assert abs(np.corrcoef(a, z)[0, 1]) > 0.98


def test_sampled_warp_thinning():
    t = np.arange(0.0, 10_000.0, 10.0)
    sw = SampledWarp(t, 0.01 * t)
    w = sw.to_warp(step_ms=1000.0)
    np.testing.assert_allclose(w(t), sw(t), atol=1e-9)
    assert len(w.knots) == 11


def _shifted_pair(seed, fs=50.0, dur=900, k=12):
    base = gen_poisson_smooth(seed, dur, fs)
    return Signal(base.data[:, k:], fs), Signal(base.data[:, :-k], fs)


def test_plw_knots_equal_windowed_estimates():
    s1, s2 = _shifted_pair(2)
    grid = plan_segmentation(s1.n_samples, s1.fs, 20_000.0)
    w = plw_align(s1, s2, grid)
    est = windowed_lag_estimates(s1, s2, grid, threshold=0.0)
    np.testing.assert_array_equal(w.knots, [e.knot for e in est])
    np.testing.assert_array_equal(w(w.knots), [e.lag_ms for e in est])


def test_plw_follows_outliers():
    s1, s2 = _shifted_pair(4)
    grid = plan_segmentation(s1.n_samples, s1.fs, 20_000.0)
    clean = plw_align(s1, s2, grid)
    np.testing.assert_allclose(clean(clean.knots), 240.0)
    # one window of unrelated noise drags the PLW curve away at that knot
    data = s1.data.copy()
    a = grid.window_start(0, 10)
    data[:, a:a + grid.w] = np.random.default_rng(0).normal(size=(1, grid.w))
    noisy = plw_align(s1.with_data(data), s2, grid)
    assert abs(noisy(noisy.knots[10]) - 240.0) > 20.0
