#!/usr/bin/env python3
"""
Tests for the EM, HK and capped EM estimators and model evaluation
"""

import os

import numpy as np
import pytest
from sklearn.isotonic import isotonic_regression

from hkfit.design import build_design, build_lattice
from hkfit.errors import DimensionMismatchError, EmptyDesignError, InvalidParameterError, NonFiniteDataError
from hkfit.estimators import (
    EstimatorKind,
    empirical_loss,
    fit,
    fit_em,
    fit_em_capped,
    fit_hk,
    predict,
)
from hkfit.lattice_core import LatticeGrid, Tensor, lattice_points
from hkfit.solvers import L1Ball, SolverConfig, solve_constrained_ls
from hkfit.variation import (
    fn_is_entirely_monotone,
    hk0_variation_coeffs,
    is_entirely_monotone,
    lattice_hk0_variation,
)

slow = pytest.mark.skipif(os.getenv("HKFIT_RUN_SLOW") != "1", reason="set HKFIT_RUN_SLOW=1")

TIGHT = SolverConfig(kkt_tol=1e-10, rel_tol=1e-14)


def lattice_data(dims, seed, sigma=1.0):
    grid = LatticeGrid(dims)
    xs = lattice_points(grid)
    rng = np.random.default_rng(seed)
    y = xs.sum(axis=1) + sigma * rng.standard_normal(grid.n)
    return grid, xs, y


@pytest.mark.parametrize("seed", range(5))
def test_em_in_one_dimension_is_isotonic_regression(seed):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(size=30)
    y = 2.0 * xs + rng.standard_normal(30)
    model = fit_em(xs, y, TIGHT)
    order = np.argsort(xs)
    expected = isotonic_regression(y[order], increasing=True)
    np.testing.assert_allclose(model.fitted[order], expected, atol=1e-6)


def test_hk_with_zero_bound_fits_the_mean():
    _, xs, y = lattice_data((6, 6), seed=1)
    model = fit_hk(xs, y, 0.0)
    np.testing.assert_allclose(model.fitted, np.full(y.size, y.mean()), atol=1e-9)
    assert model.fn.p == 1
    assert model.variation == 0.0


def test_em_recovers_noiseless_monotone_data():
    _, xs, y = lattice_data((10, 10), seed=0, sigma=0.0)
    model = fit_em(xs, y, TIGHT)
    assert model.converged
    np.testing.assert_allclose(model.fitted, y, atol=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_hk_with_loose_bound_interpolates(seed):
    grid, xs, y = lattice_data((5, 5), seed=seed)
    V = lattice_hk0_variation(Tensor(grid, y)) + 1.0
    model = fit_hk(xs, y, V, TIGHT)
    np.testing.assert_allclose(model.fitted, y, atol=1e-6)
    assert model.grid_dims == (5, 5)
    assert model.diagnostics["backend"] == "lattice"


def test_em_capped_zero_bound_fits_the_mean():
    _, xs, y = lattice_data((5, 5), seed=2)
    model = fit_em_capped(xs, y, 0.0)
    np.testing.assert_allclose(model.fitted, np.full(y.size, y.mean()), atol=1e-9)


def test_em_capped_without_cap_matches_em():
    _, xs, y = lattice_data((6, 6), seed=3)
    capped = fit_em_capped(xs, y, float("inf"), TIGHT)
    em = fit_em(xs, y, TIGHT)
    np.testing.assert_allclose(capped.fitted, em.fitted, atol=1e-6)


def test_em_capped_respects_the_cap():
    _, xs, y = lattice_data((8, 8), seed=4)
    model = fit_em_capped(xs, y, 1.0)
    tail = model.fn.coefficients[1:]
    assert np.all(tail >= 0.0)
    assert tail.sum() <= 1.0 + 1e-9
    assert fn_is_entirely_monotone(model.fn)


@pytest.mark.parametrize("seed", range(5))
def test_em_fit_is_entirely_monotone(seed):
    _, xs, y = lattice_data((7, 6), seed=seed, sigma=2.0)
    model = fit_em(xs, y)
    assert np.all(model.fn.coefficients[1:] >= 0.0)
    assert fn_is_entirely_monotone(model.fn)


@pytest.mark.parametrize("seed", range(5))
def test_hk_fit_stays_inside_the_ball(seed):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(size=(25, 2))
    y = rng.standard_normal(25)
    model = fit_hk(xs, y, 1.5)
    assert hk0_variation_coeffs(model.fn) <= 1.5 + 1e-9


def test_objective_decreases_as_bound_grows():
    _, xs, y = lattice_data((8, 8), seed=5)
    design = build_lattice(LatticeGrid((8, 8)))
    objectives = [fit_hk(None, y, V, TIGHT, design=design).diagnostics["objective"] for V in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(b <= a + 1e-8 for a, b in zip(objectives, objectives[1:]))


@pytest.mark.parametrize("seed", range(3))
def test_design_strategies_give_same_fitted_values(seed):
    rng = np.random.default_rng(seed)
    xs = rng.uniform(size=(15, 2))
    y = xs[:, 0] - xs[:, 1] + 0.3 * rng.standard_normal(15)
    naive = fit_hk(xs, y, 2.0, TIGHT, strategy="naive")
    induced = fit_hk(xs, y, 2.0, TIGHT, strategy="induced-grid")
    cmin = fit_hk(xs, y, 2.0, TIGHT, strategy="componentwise-min")
    np.testing.assert_allclose(naive.fitted, induced.fitted, atol=1e-5)
    np.testing.assert_allclose(naive.fitted, cmin.fitted, atol=1e-5)


def chain_points(n, seed):
    rng = np.random.default_rng(seed)
    return np.column_stack([np.sort(rng.uniform(size=n)), np.sort(rng.uniform(size=n))])


def test_induced_grid_anchors_are_componentwise_minima():
    rng = np.random.default_rng(11)
    xs = rng.uniform(size=(40, 2))
    y = xs.sum(axis=1) + 0.5 * rng.standard_normal(40)
    model = fit_em(xs, y, TIGHT, strategy="induced-grid")
    cmin_anchors = {tuple(a) for a in build_design(xs, strategy="componentwise-min").anchors}
    assert model.diagnostics["backend"] == "induced_grid"
    assert np.all(model.fn.anchors[0] == 0.0)
    assert {tuple(a) for a in model.fn.anchors} <= cmin_anchors
    np.testing.assert_allclose(predict(model, xs), model.fitted, atol=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_induced_grid_and_componentwise_min_agree_off_design(seed):
    xs = chain_points(30, seed)
    rng = np.random.default_rng(100 + seed)
    y = xs.sum(axis=1) + 0.5 * rng.standard_normal(30)
    induced = fit_em(xs, y, TIGHT, strategy="induced-grid")
    cmin = fit_em(xs, y, TIGHT, strategy="componentwise-min")
    axis = np.linspace(0.0, 1.0, 21)
    off_design = np.array([(a, b) for a in axis for b in axis])
    np.testing.assert_allclose(predict(induced, off_design), predict(cmin, off_design), atol=1e-5)


def test_predict_at_design_points_matches_fitted():
    rng = np.random.default_rng(9)
    xs = rng.uniform(size=(20, 2))
    y = xs.prod(axis=1) + 0.1 * rng.standard_normal(20)
    model = fit_em(xs, y)
    np.testing.assert_allclose(predict(model, xs), model.fitted, atol=1e-10)
    assert predict(model, [0.0, 0.0]) == pytest.approx(model.fn.intercept)
    assert predict(model, [1.0, 1.0]) == pytest.approx(model.fn.coefficients.sum())


def test_predict_clamps_to_unit_interval():
    _, xs, _ = lattice_data((4, 4), seed=0)
    y = 3.0 * xs.sum(axis=1) - 1.0
    model = fit_em(xs, y)
    clamped = predict(model, xs, clamp=True)
    assert clamped.min() >= 0.0 and clamped.max() <= 1.0
    assert predict(model, [1.0, 1.0], clamp=True) == 1.0


def test_empirical_loss_examples():
    assert empirical_loss([1.0, 2.0], [1.0, 4.0]) == 2.0
    assert empirical_loss(np.zeros(3), np.zeros(3)) == 0.0
    with pytest.raises(DimensionMismatchError):
        empirical_loss([1.0, 2.0], [1.0])
    with pytest.raises(EmptyDesignError):
        empirical_loss([], [])


def test_fit_dispatch():
    _, xs, y = lattice_data((4, 4), seed=6)
    assert fit("em", xs, y).kind is EstimatorKind.EM
    assert fit("hk", xs, y, V=1.0).V == 1.0
    assert fit("em-capped", xs, y, V=2.0).kind is EstimatorKind.EM_CAPPED
    with pytest.raises(InvalidParameterError):
        fit("hk", xs, y)
    with pytest.raises(ValueError):
        fit("lasso", xs, y, V=1.0)


def test_input_validation():
    xs = np.array([[0.1, 0.2], [0.5, 0.6]])
    with pytest.raises(InvalidParameterError):
        fit_hk(xs, [1.0, 2.0], -1.0)
    with pytest.raises(InvalidParameterError):
        fit_em([[0.1, 1.2], [0.5, 0.6]], [1.0, 2.0])
    with pytest.raises(NonFiniteDataError):
        fit_em(xs, [1.0, np.nan])
    with pytest.raises(DimensionMismatchError):
        fit_em(xs, [1.0, 2.0, 3.0])
    with pytest.raises(EmptyDesignError):
        fit_em(np.zeros((0, 2)), [])


def test_prebuilt_design_is_reused():
    rng = np.random.default_rng(10)
    xs = rng.uniform(size=(12, 2))
    design = build_design(xs)
    y1 = rng.standard_normal(12)
    y2 = rng.standard_normal(12)
    first = fit_em(None, y1, design=design)
    second = fit_em(None, y2, design=design)
    assert first.diagnostics["p"] == second.diagnostics["p"] == design.n_cols


@slow
@pytest.mark.parametrize("seed", range(100))
def test_em_in_one_dimension_is_isotonic_regression_large(seed):
    rng = np.random.default_rng(1000 + seed)
    n = int(rng.integers(2, 201))
    xs = rng.uniform(size=n)
    y = np.sin(3.0 * xs) + rng.standard_normal(n)
    model = fit_em(xs, y, TIGHT)
    order = np.argsort(xs)
    np.testing.assert_allclose(model.fitted[order], isotonic_regression(y[order]), atol=1e-6)


@pytest.mark.parametrize("kind", ["em", "hk", "em-capped"])
@pytest.mark.parametrize("seed", range(3))
def test_fit_is_no_farther_from_a_feasible_truth_than_the_data(kind, seed):
    grid = LatticeGrid((8, 8))
    xs = lattice_points(grid)
    truth = xs.sum(axis=1)
    V = lattice_hk0_variation(Tensor(grid, truth)) + 0.5
    rng = np.random.default_rng(seed)
    y = truth + rng.standard_normal(grid.n)
    model = fit(kind, xs, y, V=None if kind == "em" else V, cfg=TIGHT)
    assert np.linalg.norm(model.fitted - truth) <= np.linalg.norm(y - truth) + 1e-6


@pytest.mark.parametrize("seed", range(3))
def test_em_fitted_values_are_entirely_monotone_on_the_lattice(seed):
    grid, xs, y = lattice_data((7, 6), seed=seed, sigma=2.0)
    model = fit_em(xs, y, TIGHT)
    assert model.grid_dims == (7, 6)
    assert is_entirely_monotone(Tensor(grid, model.fitted))


@pytest.mark.parametrize("V", [0.5, 1.0, 3.0])
def test_hk_variation_equals_coefficient_sum(V):
    grid, xs, y = lattice_data((8, 8), seed=7)
    design = build_lattice(grid)
    result = solve_constrained_ls(design, y, L1Ball(V), TIGHT)
    model = fit_hk(None, y, V, TIGHT, design=design)
    assert model.variation == pytest.approx(np.abs(result.beta[1:]).sum(), rel=1e-12, abs=1e-12)
    assert hk0_variation_coeffs(model.fn) <= V + 1e-9
