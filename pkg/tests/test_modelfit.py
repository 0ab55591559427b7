from __future__ import annotations

import numpy as np
import pytest

from dcca.modelfit import (EnergyConfig, KnotSet, alpha_expansion, build_neighborhood, data_costs,
                           energy, pearl_fit, propose_models)
from dcca.signal import OUTLIER
from oracles import brute_force_labeling, sequential_ransac


def test_neighbourhood_chain_and_weights():
    t = np.arange(10.0)
    edges, w = build_neighborhood(t, 2, c_smooth=1.0)
    # two nearest neighbours of an interior knot are its left and right; the ends reach one further
    assert {tuple(e) for e in edges.tolist()} == {(i, i + 1) for i in range(9)} | {(0, 2), (7, 9)}
    np.testing.assert_allclose(w[(edges[:, 1] - edges[:, 0]) == 1], np.exp(-1.0))


def test_neighbourhood_complete_and_degenerate():
    edges, _ = build_neighborhood(np.arange(5.0), 10)
    assert len(edges) == 10
    with pytest.warns(UserWarning, match="empty"):
        e, w = build_neighborhood(np.array([1.0]), 4)
    assert e.shape == (0, 2) and w.size == 0


def test_proposals_reproduce_exact_families():
    t = np.arange(40.0) * 25_000.0
    rng = np.random.default_rng(0)
    for fam, truth in [(1, lambda x: 3e-4 * x - 5.0), (2, lambda x: 1e-10 * x ** 2 - 2e-4 * x + 8.0)]:
        ks = KnotSet(t, truth(t))
        for m in propose_models(ks, EnergyConfig(family=fam), rng, count=10):
            np.testing.assert_allclose(m(t), truth(t), atol=1e-6)


def test_zero_curvature_bound_gives_lines():
    t = np.arange(30.0)
    ks = KnotSet(t, 0.05 * t ** 2)
    for m in propose_models(ks, EnergyConfig(family=2, max_curvature=0.0), np.random.default_rng(1), count=8):
        assert m.degree == 1


def test_proposals_need_enough_valid_knots():
    ks = KnotSet(np.arange(5.0), np.zeros(5), valid=np.array([1, 1, 0, 0, 0], bool))
    with pytest.raises(ValueError, match="at least 3"):
        propose_models(ks, EnergyConfig(family=2), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        EnergyConfig(gamma=0.0)
    with pytest.raises(ValueError):
        EnergyConfig(family=3)
    with pytest.raises(ValueError):
        KnotSet(np.array([0.0, 0.0]), np.zeros(2))


def test_expansion_trivial_cases():
    costs = np.array([[0.0, 5.0, 10.0], [0.0, 5.0, 10.0], [5.0, 0.0, 10.0]])
    edges = np.zeros((0, 2), dtype=np.int64)
    lab = alpha_expansion(costs, edges, np.zeros(0), label_cost=0.0)
    np.testing.assert_array_equal(lab, [0, 0, 1])
    # a moderate label cost merges everything onto one model (5 + 8 < 0 + 2 * 8)
    lab = alpha_expansion(costs, edges, np.zeros(0), label_cost=8.0)
    np.testing.assert_array_equal(lab, [0, 0, 0])
    # a prohibitive one makes every knot an outlier
    lab = alpha_expansion(costs, edges, np.zeros(0), label_cost=100.0)
    np.testing.assert_array_equal(lab, [2, 2, 2])
    with pytest.raises(ValueError, match="finite"):
        alpha_expansion(np.array([[np.inf, 1.0]]), edges, np.zeros(0), 1.0)


@pytest.mark.parametrize("seed", range(6))
def test_expansion_near_global_optimum(seed):
    rng = np.random.default_rng(seed)
    n, L = int(rng.integers(5, 8)), 3
    costs = np.column_stack([rng.uniform(0, 10, size=(n, L)), np.full(n, 6.0)])
    edges, w = build_neighborhood(np.arange(float(n)), 2, c_smooth=2.0)
    w = w * 3
    h = float(rng.uniform(1, 8))
    best, _ = brute_force_labeling(costs, edges, w, h)
    lab = alpha_expansion(costs, edges, w, h)
    assert energy(lab, costs, edges, w, h) <= 1.05 * best + 1e-9


def test_energy_counts_label_cost_once_per_model():
    costs = np.zeros((4, 3))
    e = energy(np.array([0, 0, 1, 2]), costs, np.array([[0, 1], [1, 2], [2, 3]]), np.ones(3), 7.0)
    assert e == 2 + 2 * 7.0


def _knots(fn, n=60, step=25_000.0, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * step + step / 2
    return KnotSet(t, fn(t) + noise * rng.normal(size=n))


def test_single_quadratic_recovered():
    fn = lambda t: 2e-10 * t ** 2 + 3e-4 * t + 20.0
    ks = _knots(fn, noise=1.0)
    w = pearl_fit(ks, EnergyConfig(), np.random.default_rng(0))
    assert len(w.models) == 1
    assert np.mean(np.abs(w(ks.t) - fn(ks.t))) < 1.0


def test_step_discontinuity_recovered():
    step_at = 30
    fn = lambda t: 1e-4 * t + np.where(t > (step_at * 25_000.0), 400.0, 0.0)
    ks = _knots(fn, noise=1.0, seed=1)
    w = pearl_fit(ks, EnergyConfig(), np.random.default_rng(0))
    assert len(w.models) == 2
    change = np.flatnonzero(np.diff(w.labeling) != 0)
    assert len(change) == 1 and abs(int(change[0]) + 1 - step_at) <= 1
    assert np.mean(np.abs(w(ks.t) - fn(ks.t))) < 2.0


def test_outliers_rejected():
    fn = lambda t: 5e-4 * t - 100.0
    ks = _knots(fn, n=80, noise=1.0, seed=2)
    rng = np.random.default_rng(3)
    bad = rng.choice(80, size=32, replace=False)
    d = ks.d.copy()
    d[bad] += rng.uniform(-3000, 3000, size=32)
    ks = KnotSet(ks.t, d)
    w = pearl_fit(ks, EnergyConfig(), np.random.default_rng(0))
    assert np.mean(np.abs(w(ks.t) - fn(ks.t))) < 2.0
    far = np.abs(d - fn(ks.t)) > 50
    assert np.mean(w.labeling[far] == OUTLIER) >= 0.9


def test_invalid_knots_ignored_and_marked():
    fn = lambda t: 1e-4 * t
    ks = _knots(fn, n=30)
    valid = np.ones(30, bool)
    valid[::5] = False
    d = ks.d.copy()
    d[~valid] = 1e5
    w = pearl_fit(KnotSet(ks.t, d, valid=valid))
    assert np.all(w.labeling[~valid] == OUTLIER)
    np.testing.assert_allclose(w(ks.t), fn(ks.t), atol=1e-6)
    with pytest.raises(ValueError, match="no valid"):
        pearl_fit(KnotSet(ks.t, d, valid=np.zeros(30, bool)))


def test_energy_history_monotone_and_deterministic():
    fn = lambda t: 3e-4 * t + np.where(t > 700_000, -250.0, 0.0)
    ks = _knots(fn, noise=4.0, seed=5)
    a = pearl_fit(ks, EnergyConfig(), np.random.default_rng(7), return_details=True)
    b = pearl_fit(ks, EnergyConfig(), np.random.default_rng(7), return_details=True)
    assert np.all(np.diff(a.history) <= 1e-9)
    np.testing.assert_array_equal(a.warp.labeling, b.warp.labeling)
    assert a.energy == b.energy


@pytest.mark.parametrize("seed", range(3))
def test_not_worse_than_sequential_ransac(seed):
    fn = lambda t: 2e-4 * t + np.where(t > 800_000, 300.0, 0.0)
    ks = _knots(fn, n=60, noise=3.0, seed=seed)
    rng = np.random.default_rng(seed)
    d = ks.d.copy()
    bad = rng.choice(60, size=10, replace=False)
    d[bad] += rng.uniform(-2000, 2000, size=10)
    ks = KnotSet(ks.t, d)
    cfg = EnergyConfig(family=1)
    edges, w = build_neighborhood(ks.t, cfg.n_neighbors, cfg.c_smooth, ks.spacing)
    res = pearl_fit(ks, cfg, np.random.default_rng(0), return_details=True)
    models, lab = sequential_ransac(ks.t, ks.d, cfg.gamma, 1, np.random.default_rng(seed))
    e_ransac = energy(lab, data_costs(models, ks.t, ks.d, cfg.gamma), edges, w, cfg.h_L)
    assert res.energy <= e_ransac + 1e-9


def test_too_few_knots_single_model():
    ks = KnotSet(np.array([0.0, 1.0]), np.array([3.0, 5.0]))
    w = pearl_fit(ks, EnergyConfig(family=2))
    assert len(w.models) == 1
    np.testing.assert_allclose(w(np.array([0.0, 1.0])), [3.0, 5.0])


def test_all_rejected_falls_back_to_one_labelled_model(caplog):
    # knot noise far above gamma: no model pays for its label cost
    ks = _knots(lambda t: 1e-4 * t, n=20, noise=200.0, seed=9)
    valid = np.ones(20, bool)
    valid[3] = False
    ks = KnotSet(ks.t, ks.d, valid=valid)
    w = pearl_fit(ks, EnergyConfig(gamma=1.0, h_L=1e4))
    assert len(w.models) == 1 and "least-squares" in caplog.text
    assert np.all(w.labeling[valid] == 0) and w.labeling[3] == OUTLIER
    coef = np.polyfit(ks.t[valid] - ks.t[valid].mean(), ks.d[valid], 2)
    np.testing.assert_allclose(w(ks.t), np.polyval(coef, ks.t - ks.t[valid].mean()), atol=1e-8)
