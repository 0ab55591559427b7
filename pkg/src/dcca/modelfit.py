"""Robust piecewise-polynomial warp extraction from noisy knot lags.

The energy of a labeling is

    sum_p D_p(l_p) + sum_{pq in N} w_pq [l_p != l_q] + h_L * (#models used)

where ``D_p`` is the absolute residual of knot ``p`` to its model (``gamma``
for the outlier label) and ``w_pq = exp(-(dist/c)^2)`` with the distance in
window units. It is minimized by alternating label-cost alpha-expansion and
least-squares refits of the used models.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import maxflow
import numpy as np
from scipy.spatial import cKDTree

from .correlation import LagEstimate
from .signal import OUTLIER, PiecewiseWarp

log = logging.getLogger(__name__)


@dataclass
class EnergyConfig:
    h_L: float = 50.0
    c_smooth: float = 10.0
    gamma: float = 10.0
    n_neighbors: int = 4
    family: int = 2
    max_curvature: Optional[float] = None
    proposals: Optional[int] = None
    local_span: int = 8
    max_iter: int = 50
    tol: float = 1e-6

    def __post_init__(self):
        if self.h_L <= 0 or self.gamma <= 0:
            raise ValueError("h_L and gamma must be positive")
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if self.family not in (0, 1, 2):
            raise ValueError("family must be a polynomial degree <= 2")


@dataclass
class KnotSet:
    t: np.ndarray
    d: np.ndarray
    score: np.ndarray = None
    valid: np.ndarray = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        n = len(self.t)
        self.score = np.ones(n) if self.score is None else np.asarray(self.score, dtype=np.float64)
        self.valid = np.ones(n, dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if not (len(self.d) == len(self.score) == len(self.valid) == n):
            raise ValueError("knot arrays differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("knot times must be strictly increasing")

    @classmethod
    def from_estimates(cls, est: Sequence[LagEstimate]) -> "KnotSet":
        return cls(np.array([e.knot for e in est]), np.array([e.lag_ms for e in est]),
                   np.array([e.score for e in est]), np.array([e.valid for e in est], dtype=bool))

    def __len__(self):
        return len(self.t)

    @property
    def spacing(self) -> float:
        return float(np.median(np.diff(self.t))) if len(self.t) > 1 else 1.0


@dataclass
class Model:
    coef: np.ndarray  # highest degree first, in (t - center)
    center: float

    def __call__(self, t) -> np.ndarray:
        return np.polyval(self.coef, np.asarray(t, dtype=np.float64) - self.center)

    @property
    def degree(self) -> int:
        return len(self.coef) - 1


def build_neighborhood(t: np.ndarray, n: int, c_smooth: float = 10.0, spacing: float = 1.0):
    """Symmetric ``n``-nearest-neighbour graph on knot times.

    Returns ``(edges, weights)``; edges are index pairs ``p < q``.
    """
    t = np.asarray(t, dtype=np.float64)
    if len(t) < 2:
        warnings.warn("fewer than two knots: neighbourhood graph is empty")
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    u = t / spacing
    k = min(n, len(t) - 1)
    _, idx = cKDTree(u[:, None]).query(u[:, None], k=k + 1)
    pairs = set()
    for p, row in enumerate(idx):
        for q in row:
            if q != p:
                pairs.add((min(p, q), max(p, q)))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    dist = u[edges[:, 1]] - u[edges[:, 0]]
    return edges, np.exp(-(dist / c_smooth) ** 2)


def _fit(t: np.ndarray, d: np.ndarray, degree: int, max_curvature: Optional[float]) -> Model:
    center = float(np.mean(t))
    degree = min(degree, len(t) - 1)
    coef = np.polyfit(t - center, d, degree) if degree > 0 else np.array([np.mean(d)])
    if degree == 2 and max_curvature is not None and abs(coef[0]) > max_curvature:
        coef = np.polyfit(t - center, d, 1)
    return Model(np.asarray(coef, dtype=np.float64), center)


def _grow(m: Model, t: np.ndarray, d: np.ndarray, config: "EnergyConfig", iters: int = 10) -> Model:
    """Refit ``m`` to every knot within ``gamma`` of it until the set stops changing."""
    prev = None
    for _ in range(iters):
        sel = np.abs(d - m(t)) < config.gamma
        if sel.sum() < config.family + 1 or (prev is not None and np.array_equal(sel, prev)):
            break
        m = _fit(t[sel], d[sel], config.family, config.max_curvature)
        prev = sel
    return m


def propose_models(knots: KnotSet, config: EnergyConfig, rng: np.random.Generator,
                   count: Optional[int] = None) -> list[Model]:
    """Candidate models from local knot neighbourhoods.

    Half are exact fits to random minimal subsets; the other half are
    least-squares fits to random contiguous runs of valid knots, which stay
    usable when every single estimate is noisy. Quadratics breaking
    ``max_curvature`` are replaced by the linear fit of the same subset.
    """
    v = np.flatnonzero(knots.valid)
    need = config.family + 1
    if len(v) < need:
        raise ValueError(f"need at least {need} valid knots for degree {config.family}, got {len(v)}")
    if count is None:
        count = config.proposals or max(50, len(v) // 2)
    span = max(config.local_span, need)
    out = []
    for c in range(count):
        if c % 2:
            length = int(rng.integers(need, min(2 * span, len(v)) + 1))
            a = int(rng.integers(len(v) - length + 1))
            pick = v[a:a + length]
            out.append(_fit(knots.t[pick], knots.d[pick], config.family, config.max_curvature))
            continue
        a = int(rng.integers(len(v)))
        lo, hi = max(0, a - span), min(len(v), a + span + 1)
        if hi - lo < need:
            lo, hi = 0, len(v)
        pick = v[np.sort(rng.choice(np.arange(lo, hi), size=need, replace=False))]
        out.append(_fit(knots.t[pick], knots.d[pick], config.family, config.max_curvature))
    return out


def data_costs(models: Sequence[Model], t: np.ndarray, d: np.ndarray, gamma: float) -> np.ndarray:
    """``(knots, models + 1)`` absolute residuals; the last column is the outlier label."""
    cost = np.empty((len(t), len(models) + 1))
    for k, m in enumerate(models):
        cost[:, k] = np.abs(d - m(t))
    cost[:, -1] = gamma
    return cost


def energy(labeling: np.ndarray, costs: np.ndarray, edges: np.ndarray, weights: np.ndarray,
           label_cost: float) -> float:
    labeling = np.asarray(labeling)
    outlier = costs.shape[1] - 1
    e = float(costs[np.arange(len(labeling)), labeling].sum())
    if len(edges):
        e += float(weights[labeling[edges[:, 0]] != labeling[edges[:, 1]]].sum())
    used = np.unique(labeling)
    e += label_cost * int(np.sum(used != outlier))
    return e


def _expansion_move(alpha: int, labeling: np.ndarray, costs: np.ndarray, edges: np.ndarray,
                    weights: np.ndarray, label_cost: float) -> np.ndarray:
    """Optimal alpha-expansion of ``labeling`` as a single min-cut."""
    n, n_labels = costs.shape
    outlier = n_labels - 1
    var = np.flatnonzero(labeling != alpha)
    if var.size == 0:
        return labeling
    vid = -np.ones(n, dtype=np.int64)
    vid[var] = np.arange(var.size)
    e0 = costs[var, labeling[var]].copy()  # keep current label
    e1 = costs[var, alpha].copy()  # switch to alpha
    pair_terms = []
    for (p, q), w in zip(edges, weights):
        vp, vq = vid[p], vid[q]
        if vp < 0 and vq < 0:
            continue
        if vp < 0 or vq < 0:
            # one end already alpha: disagreement only if the other keeps its label
            e0[vq if vp < 0 else vp] += w
            continue
        a = w if labeling[p] != labeling[q] else 0.0
        # E(xp,xq) = A + (C-A) xp + (D-C) xq + (B+C-A-D)(1-xp) xq with B=C=w, D=0
        e1[vp] += w - a
        e1[vq] += -w
        lam = 2 * w - a
        if lam > 0:
            pair_terms.append((vp, vq, lam))
    aux = []
    if label_cost > 0:
        for beta in np.unique(labeling[var]):
            if beta != outlier:
                aux.append(("keep", np.flatnonzero(labeling[var] == beta)))
        if alpha != outlier and not np.any(labeling == alpha):
            aux.append(("add", np.arange(var.size)))
    g = maxflow.Graph[float]()
    nodes = g.add_nodes(var.size + len(aux))
    for i, (kind, members) in enumerate(aux):
        y = var.size + i
        if kind == "keep":
            # h * [some member keeps beta] = min_y h(1-y) + sum h y (1-x_p)
            g.add_tedge(nodes[y], 0.0, label_cost)
            for m in members:
                g.add_edge(nodes[m], nodes[y], label_cost, 0.0)
        else:
            # h * [some node takes alpha] = min_z h z + sum h (1-z) x_p
            g.add_tedge(nodes[y], label_cost, 0.0)
            for m in members:
                g.add_edge(nodes[y], nodes[m], label_cost, 0.0)
    base = np.minimum(e0, e1)
    for i in range(var.size):
        g.add_tedge(nodes[i], e1[i] - base[i], e0[i] - base[i])
    for vp, vq, lam in pair_terms:
        g.add_edge(nodes[vp], nodes[vq], lam, 0.0)
    g.maxflow()
    take = np.array([g.get_segment(nodes[i]) for i in range(var.size)], dtype=bool)
    out = labeling.copy()
    out[var[take]] = alpha
    return out


def alpha_expansion(costs: np.ndarray, edges: np.ndarray, weights: np.ndarray, label_cost: float,
                    labeling: Optional[np.ndarray] = None, max_cycles: int = 20) -> np.ndarray:
    """Label-cost alpha-expansion; the last column of ``costs`` is the outlier label.

    A move is kept only if it strictly lowers the energy, so the result never
    has a higher energy than ``labeling`` (all-outlier by default).
    """
    costs = np.asarray(costs, dtype=np.float64)
    if not np.all(np.isfinite(costs)) or not np.all(np.isfinite(weights)):
        raise ValueError("data and smoothness costs must be finite")
    n, n_labels = costs.shape
    lab = np.full(n, n_labels - 1, dtype=np.int64) if labeling is None else np.asarray(labeling, dtype=np.int64).copy()
    if n == 0:
        return lab
    cur = energy(lab, costs, edges, weights, label_cost)
    for _ in range(max_cycles):
        improved = False
        for alpha in range(n_labels):
            cand = _expansion_move(alpha, lab, costs, edges, weights, label_cost)
            e = energy(cand, costs, edges, weights, label_cost)
            if e < cur - 1e-9:
                lab, cur, improved = cand, e, True
        lab, e = _removal_moves(lab, cur, costs, edges, weights, label_cost)
        if e < cur - 1e-9:
            cur, improved = e, True
        if not improved:
            break
    return lab


def _removal_moves(lab: np.ndarray, cur: float, costs: np.ndarray, edges: np.ndarray,
                   weights: np.ndarray, label_cost: float) -> tuple[np.ndarray, float]:
    """Try dropping each used model, sending its knots to their cheapest remaining label.

    Expansion alone cannot leave a minimum where a model survives on one
    stray knot; this move removes such a model in one step.
    """
    outlier = costs.shape[1] - 1
    for m in np.unique(lab):
        if m == outlier or not np.any(lab == m):
            continue
        others = np.append(np.setdiff1d(np.unique(lab), [m, outlier]), outlier)
        cand = lab.copy()
        sel = lab == m
        cand[sel] = others[np.argmin(costs[np.ix_(sel, others)], axis=1)]
        e = energy(cand, costs, edges, weights, label_cost)
        if e < cur - 1e-9:
            lab, cur = cand, e
    return lab, cur


@dataclass
class FitResult:
    warp: PiecewiseWarp
    energy: float
    history: list = field(default_factory=list)


def pearl_fit(knots: KnotSet, config: EnergyConfig = None, rng: Optional[np.random.Generator] = None,
              return_details: bool = False):
    """Extract a piecewise-polynomial warp, rejecting outlying knots."""
    config = config or EnergyConfig()
    rng = np.random.default_rng(0) if rng is None else rng
    v = np.flatnonzero(knots.valid)
    if v.size == 0:
        raise ValueError("no valid knots to fit")
    t, d = knots.t[v], knots.d[v]
    if v.size < config.family + 1:
        # too few points for the family: one low-order model through all of them
        models = [_fit(t, d, config.family, config.max_curvature)]
        lab = np.zeros(v.size, dtype=np.int64)
        hist = []
    else:
        edges, weights = build_neighborhood(t, config.n_neighbors, config.c_smooth, knots.spacing)
        models = propose_models(knots, config, rng)
        costs = data_costs(models, t, d, config.gamma)
        lab = np.full(v.size, len(models), dtype=np.int64)
        prev = energy(lab, costs, edges, weights, config.h_L)
        hist = [prev]
        stalled = False
        for it in range(config.max_iter):
            lab = alpha_expansion(costs, edges, weights, config.h_L, lab)
            used = [int(m) for m in np.unique(lab) if m < len(models)]
            if not used:
                hist.append(energy(lab, costs, edges, weights, config.h_L))
                break
            for m in used:
                sel = lab == m
                new = _fit(t[sel], d[sel], config.family, config.max_curvature)
                new_col = np.abs(d - new(t))
                if new_col[sel].sum() <= costs[sel, m].sum():
                    models[m] = new
                    costs[:, m] = new_col
            e = energy(lab, costs, edges, weights, config.h_L)
            hist.append(e)
            log.debug("pearl iteration %d energy %.6f", it, e)
            # keep the used models; offer regrown versions and merges of time-adjacent ones
            kept = [models[m] for m in used]
            grown = [_grow(models[m], t, d, config) for m in used]
            spans = sorted(used, key=lambda m: np.median(t[lab == m]))
            merges = []
            for a, b in zip(spans, spans[1:]):
                # only members their own model explains, so absorbed outliers do not leak in
                sel = ((lab == a) & (costs[:, a] < config.gamma)) | ((lab == b) & (costs[:, b] < config.gamma))
                if sel.sum() >= config.family + 1:
                    merges.append(_grow(_fit(t[sel], d[sel], config.family, config.max_curvature), t, d, config))
            # fresh random proposals each round give the expansion new ways out of a local minimum
            new_models = kept + grown + merges + propose_models(knots, config, rng)
            remap = np.full(len(models) + 1, len(new_models), dtype=np.int64)
            remap[used] = np.arange(len(used))
            lab = remap[lab]
            models = new_models
            costs = data_costs(models, t, d, config.gamma)
            # stop after two rounds in a row without progress
            if prev - e < config.tol and stalled:
                break
            stalled = prev - e < config.tol
            prev = e
    used = [int(m) for m in np.unique(lab) if m < len(models)]
    remap = {m: i for i, m in enumerate(used)}
    full = np.full(len(knots), OUTLIER, dtype=np.int64)
    full[v] = [remap.get(int(m), OUTLIER) for m in lab]
    final_models = [models[m] for m in used]
    if not final_models:
        # everything rejected: fall back to one least-squares model over the valid knots
        log.warning("all %d valid knots labelled outliers; using a single least-squares model", v.size)
        final_models = [_fit(t, d, config.family, config.max_curvature)]
        full[v] = 0
    warp = PiecewiseWarp([m.coef for m in final_models], [m.center for m in final_models],
                         knots.t.copy(), full, config.family)
    e_final = hist[-1] if hist else 0.0
    warp.meta = dict(energy=e_final, iterations=len(hist) - 1 if hist else 0)
    if return_details:
        return FitResult(warp, e_final, hist)
    return warp
