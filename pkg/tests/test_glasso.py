import dataclasses
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from loglasso.complex import InteractionClass, SimplicialComplex, maximal_elements
from loglasso.design import TableShape, saturated_design
from loglasso.glasso import (
    NonHierarchicalWarning,
    PenaltyConfig,
    SolverConfig,
    fit,
    group_prox,
    kkt_report,
    lambda_path,
    null_lambda,
    objective,
    select_model,
    smoothed_mle_check,
)
from loglasso.model import ContingencyTable, fit_mle, log_likelihood, mean_map

KKT_TOL = 1e-7


def brute_kkt(design, theta, table, lam, w):
    """Residuals straight from the dense matrix and explicit softmax."""
    U = design.matrix
    eta = U @ theta
    p = np.exp(eta - eta.max())
    p /= p.sum()
    score = U.T @ (table.counts - table.N * p) / table.N
    out = []
    for i, s in enumerate(design.slices):
        t = theta[s]
        if np.linalg.norm(t) > 0:
            out.append(np.linalg.norm(score[s] - lam * w[i] * t / np.linalg.norm(t)))
        else:
            out.append(max(0.0, np.linalg.norm(score[s]) - lam * w[i]))
    return np.array(out)


def table_of(levels, counts):
    return ContingencyTable(TableShape(levels), counts)


@pytest.fixture
def t222():
    return table_of((2, 2, 2), [30, 12, 9, 25, 14, 40, 22, 8])


@pytest.mark.parametrize(
    "v, thr, out",
    [([3.0, 4.0], 2.5, [1.5, 2.0]), ([3.0, 4.0], 6.0, [0.0, 0.0]), ([3.0, 4.0], 0.0, [3.0, 4.0]), ([-2.0], 0.5, [-1.5])],
)
def test_group_prox(v, thr, out):
    np.testing.assert_allclose(group_prox(np.array(v), thr), out)


def test_objective_examples(t222):
    d = saturated_design(t222.shape)
    theta = np.random.default_rng(1).normal(size=d.ncols)
    assert objective(d, theta, t222, PenaltyConfig(0.0)) == pytest.approx(log_likelihood(d, theta, t222) / t222.N)
    assert objective(d, np.zeros(d.ncols), t222, PenaltyConfig(0.3)) == pytest.approx(-math.log(8))


def test_objective_penalty_dominates_large_blocks(t222):
    d = saturated_design(t222.shape)
    theta = np.random.default_rng(2).normal(size=d.ncols)
    pen = PenaltyConfig(0.05)
    for s in d.slices:
        base = objective(d, theta, t222, pen)
        scan = []
        for c in [2.0, 8.0, 32.0, 128.0]:
            t = theta.copy()
            t[s] *= c
            scan.append(objective(d, t, t222, pen))
        assert scan[-1] < base


def test_null_lambda_matches_matrix_oracle(t222):
    d = saturated_design(t222.shape)
    U = d.matrix
    r = t222.counts - t222.N / t222.shape.I
    w = np.sqrt(d.dims)
    expect = max(np.linalg.norm(U[:, s].T @ r) / (t222.N * w[i]) for i, s in enumerate(d.slices))
    assert null_lambda(d, t222) == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("rule", ["sqrt-dim", "unit"])
@pytest.mark.parametrize("factor", [1.0, 1.5, 10.0])
def test_null_screening(t222, rule, factor):
    d = saturated_design(t222.shape)
    lam = null_lambda(d, t222, rule) * factor
    res = fit(d, t222, PenaltyConfig(lam, rule))
    assert res.converged and res.iterations <= 2
    assert np.all(res.theta.values == 0.0)
    assert len(res.active) == 0 and res.facets.to_lists() == []
    rep = kkt_report(d, np.zeros(d.ncols), t222, PenaltyConfig(lam, rule))
    assert np.all(rep.residuals == 0.0)


def test_just_below_screening_is_nonzero(t222):
    d = saturated_design(t222.shape)
    res = fit(d, t222, PenaltyConfig(0.98 * null_lambda(d, t222)))
    assert res.converged and len(res.active) >= 1


@pytest.mark.parametrize(
    "levels, counts",
    [((2, 2), [12, 30, 7, 51]), ((2, 2), [1, 2, 3, 4]), ((2, 2, 2), [30, 12, 9, 25, 14, 40, 22, 8]), ((2, 2, 2), [3, 1, 4, 1, 5, 9, 2, 6])],
)
def test_mle_limit(levels, counts):
    t = table_of(levels, counts)
    d = saturated_design(t.shape)
    res = fit(d, t, PenaltyConfig(1e-8))
    mle = fit_mle(d, t).raise_for_status()
    assert res.converged
    assert np.max(np.abs(res.theta.values - mle.theta.values)) <= 1e-4
    assert len(res.active) == len(d.subsets)
    sm = smoothed_mle_check(res, d, t)
    assert np.all(sm.suff_gap <= 1e-3 * t.N)


def test_lambda_zero_delegates_with_warning(t222):
    d = saturated_design(t222.shape)
    with pytest.warns(RuntimeWarning):
        res = fit(d, t222, PenaltyConfig(0.0))
    np.testing.assert_allclose(res.theta.values, fit_mle(d, t222).theta.values)


def test_corpus_kkt(corpus):
    for design, table, pen, res in corpus:
        assert res.converged
        rep = kkt_report(design, res.theta, table, pen)
        assert rep.ok(KKT_TOL)
        np.testing.assert_allclose(
            rep.residuals, brute_kkt(design, res.theta.values, table, pen.lam, pen.weights(design)), atol=1e-12
        )
        assert res.active == InteractionClass(tuple(h for h, v in res.theta.blocks().items() if np.any(v != 0)))


def test_corpus_perturbation_breaks_kkt(corpus):
    rng = np.random.default_rng(4)
    for design, table, pen, res in corpus:
        u = rng.normal(size=design.ncols)
        pert = res.theta.values + 0.1 * u / np.linalg.norm(u)
        assert not kkt_report(design, pert, table, pen).ok(KKT_TOL)


def test_corpus_smoothed_mle_identity(corpus):
    for design, table, pen, res in corpus:
        rep = smoothed_mle_check(res, design, table)
        assert rep.ok
        assert rep.max_relative <= 1e-5
        assert len(rep.cls) == len(res.active)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(2, 2), (2, 3), (2, 2, 2)]), st.floats(0.005, 0.2))
def test_uniqueness_from_random_starts(seed, levels, lam):
    rng = np.random.default_rng(seed)
    shape = TableShape(levels)
    d = saturated_design(shape)
    t = ContingencyTable(shape, rng.multinomial(int(rng.integers(30, 2000)), rng.dirichlet(np.ones(shape.I))))
    pen = PenaltyConfig(lam)
    a = fit(d, t, pen, theta0=rng.normal(scale=2.0, size=d.ncols))
    b = fit(d, t, pen, theta0=rng.normal(scale=2.0, size=d.ncols))
    assert a.converged and b.converged
    assert np.max(np.abs(a.theta.values - b.theta.values)) <= 1e-5


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_monotone_objective(seed, accelerate):
    rng = np.random.default_rng(seed)
    shape = TableShape((2, 3, 2))
    d = saturated_design(shape)
    t = ContingencyTable(shape, rng.multinomial(500, rng.dirichlet(np.ones(shape.I))))
    res = fit(d, t, PenaltyConfig(0.01), SolverConfig(accelerate=accelerate), theta0=rng.normal(size=d.ncols))
    tr = np.array(res.objective_trace)
    assert np.all(np.diff(tr) >= -1e-12)


@pytest.mark.parametrize("c", [0.25, 3.0, 17.0])
def test_penalty_scaling_equivariance(t222, c):
    d = saturated_design(t222.shape)
    w = np.sqrt(d.dims) * np.linspace(0.7, 1.6, len(d.dims))
    a = fit(d, t222, PenaltyConfig(0.03, list(w)))
    b = fit(d, t222, PenaltyConfig(0.03 * c, list(w / c)))
    theta = np.random.default_rng(0).normal(size=d.ncols)
    assert objective(d, theta, t222, a.penalty) == pytest.approx(objective(d, theta, t222, b.penalty), abs=1e-12)
    assert np.max(np.abs(a.theta.values - b.theta.values)) <= 1e-8


def _with_active(res, sets):
    active = InteractionClass.from_lists(sets)
    return dataclasses.replace(res, active=active, facets=maximal_elements(active, res.facets.K))


@pytest.mark.parametrize(
    "active, facets",
    [([[1], [2], [1, 2]], [[1, 2]]), ([], []), ([[1, 3]], [[1, 3]]), ([[1], [2], [3], [1, 2], [2, 3]], [[1, 2], [2, 3]])],
)
def test_select_model_examples(t222, active, facets):
    d = saturated_design(t222.shape)
    res = _with_active(fit(d, t222, PenaltyConfig(0.05)), active)
    assert select_model(res) == SimplicialComplex.from_lists(3, facets)


def test_non_hierarchical_warning_keeps_facets():
    # a strong pure interaction with flat margins
    shape = TableShape((2, 2))
    t = ContingencyTable(shape, [40, 10, 10, 40])
    d = saturated_design(shape)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        res = fit(d, t, PenaltyConfig(0.05))
    assert res.active.to_lists() == [[1, 2]]
    assert not res.hierarchical
    assert res.facets.to_lists() == [[1, 2]]
    assert any(issubclass(r.category, NonHierarchicalWarning) for r in rec)


def test_nonconvergence_is_reported(t222):
    d = saturated_design(t222.shape)
    res = fit(d, t222, PenaltyConfig(0.001), SolverConfig(max_iter=1, polish=False), theta0=np.ones(d.ncols))
    assert not res.converged
    assert res.kkt.worst > KKT_TOL


def test_lambda_path(t222):
    d = saturated_design(t222.shape)
    top = null_lambda(d, t222)
    (single,) = lambda_path(d, t222, "sqrt-dim", [top])
    assert np.all(single.theta.values == 0)
    grid = list(np.geomspace(top, 1e-6, 8))
    path = lambda_path(d, t222, "sqrt-dim", grid)
    assert len(path[0].active) == 0 and len(path[-1].active) == len(d.subsets)
    for prev, cur, lam in zip(path, path[1:], grid[1:]):
        pen = PenaltyConfig(lam)
        assert objective(d, cur.theta, t222, pen) >= objective(d, prev.theta, t222, pen) - 1e-12
    with pytest.raises(ValueError):
        lambda_path(d, t222, "sqrt-dim", [0.1, 0.2])


def test_fit_json_shape(t222):
    d = saturated_design(t222.shape)
    out = fit(d, t222, PenaltyConfig(0.05)).to_dict()
    assert {"theta", "active", "facets", "kkt", "converged", "iterations"} <= out.keys()
    assert set(out["theta"]) == {h.key for h in d.subsets}


def test_penalty_validation():
    with pytest.raises(ValueError):
        PenaltyConfig(-1.0)
    with pytest.raises(ValueError):
        PenaltyConfig(0.1, "cubic")
    d = saturated_design(TableShape((2, 2)))
    with pytest.raises(ValueError):
        PenaltyConfig(0.1, [1.0, 0.0, 1.0]).weights(d)
    np.testing.assert_allclose(PenaltyConfig(0.1, {"1": 2, "2": 3, "1,2": 4}).weights(d), [2, 3, 4])


def test_means_are_consistent(t222):
    d = saturated_design(t222.shape)
    res = fit(d, t222, PenaltyConfig(0.02))
    np.testing.assert_allclose(res.means.means, mean_map(d, res.theta, t222.N).means)
