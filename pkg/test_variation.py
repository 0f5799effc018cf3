#!/usr/bin/env python3
"""
Tests for quasi-volumes, entire monotonicity and HK0 variation
"""

import itertools

import numpy as np
import pytest

from hkfit.errors import InvalidParameterError
from hkfit.lattice_core import LatticeGrid, Tensor, cumsum, lattice_points
from hkfit.sim import FunctionTag, TestFunction
from hkfit.variation import (
    RectPiecewiseFn,
    Rectangle,
    em_decompose,
    fn_is_entirely_monotone,
    hk0_variation_coeffs,
    hk0_variation_full,
    is_entirely_monotone,
    lattice_hk0_variation,
    quasi_volume,
    vitali_rect,
)


def random_fn(rng, d: int, max_anchors: int = 20) -> RectPiecewiseFn:
    k = int(rng.integers(1, max_anchors))
    # quarter-step coordinates put anchors on faces and on the far boundary too
    anchors = np.unique(rng.integers(0, 5, size=(k, d)) / 4.0, axis=0)
    anchors = anchors[anchors.any(axis=1)]
    anchors = np.vstack([np.zeros((1, d)), anchors])
    return RectPiecewiseFn(anchors, rng.normal(size=anchors.shape[0]))


def split_sum(f, axes) -> float:
    """sum of |quasi-volume| over the split generated by the given per-axis breakpoints"""
    total = 0.0
    for cell in itertools.product(*[range(len(ax) - 1) for ax in axes]):
        a = [ax[k] for ax, k in zip(axes, cell)]
        b = [ax[k + 1] for ax, k in zip(axes, cell)]
        total += abs(quasi_volume(f, Rectangle(a, b)))
    return total


def test_quasi_volume_examples():
    unit = Rectangle([0.0, 0.0], [1.0, 1.0])
    assert quasi_volume(lambda x: x[:, 0] * x[:, 1], unit) == pytest.approx(1.0)
    assert quasi_volume(lambda x: np.full(x.shape[0], 3.0), unit) == 0.0
    assert quasi_volume(lambda x: x[:, 0] + x[:, 1], unit) == pytest.approx(0.0, abs=1e-15)


def test_quasi_volume_skips_collapsed_coordinates():
    # with x2 collapsed the quasi-volume is the first difference in x1
    box = Rectangle([0.2, 0.5], [0.7, 0.5])
    value = quasi_volume(lambda x: x[:, 0] ** 2 + x[:, 1], box)
    assert value == pytest.approx(0.7 ** 2 - 0.2 ** 2)


def test_quasi_volume_rejects_point_rectangle():
    with pytest.raises(InvalidParameterError):
        quasi_volume(lambda x: x[:, 0], Rectangle([0.3, 0.3], [0.3, 0.3]))


def test_rectangle_requires_ordered_corners():
    with pytest.raises(InvalidParameterError):
        Rectangle([0.5, 0.1], [0.2, 0.9])


@pytest.mark.parametrize("seed", range(20))
def test_quasi_volume_is_additive_under_splits(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    f = random_fn(rng, d)
    a = rng.uniform(0.0, 0.4, size=d)
    b = rng.uniform(0.6, 1.0, size=d)
    axis = int(rng.integers(d))
    cut = rng.uniform(a[axis], b[axis])
    b_left = b.copy()
    b_left[axis] = cut
    a_right = a.copy()
    a_right[axis] = cut
    whole = quasi_volume(f, Rectangle(a, b))
    parts = quasi_volume(f, Rectangle(a, b_left)) + quasi_volume(f, Rectangle(a_right, b))
    assert whole == pytest.approx(parts, abs=1e-12)


def test_is_entirely_monotone_examples():
    grid = LatticeGrid((10, 10))
    additive = Tensor(grid, lattice_points(grid).sum(axis=1))
    assert is_entirely_monotone(additive)
    # 0/2/3 counterexample: (D t) at (1, 1) is 3 - 2 - 2 + 0 = -1
    assert not is_entirely_monotone(Tensor.from_array([[0.0, 2.0], [2.0, 3.0]]))
    assert is_entirely_monotone(Tensor.from_array(np.full((4, 3), -7.0)))


@pytest.mark.parametrize("seed", range(5))
def test_cumsum_of_nonnegative_increments_is_monotone(seed):
    rng = np.random.default_rng(seed)
    b = rng.uniform(0.0, 1.0, size=(4, 3, 3))
    b[0, 0, 0] = -5.0
    assert is_entirely_monotone(cumsum(Tensor.from_array(b)))


def test_variation_coefficient_examples():
    assert hk0_variation_coeffs(RectPiecewiseFn([[0.0, 0.0]], [4.2])) == 0.0
    corner = RectPiecewiseFn([[0.0, 0.0], [0.5, 0.5]], [0.0, -1.0])
    assert hk0_variation_coeffs(corner) == 1.0
    checkered = TestFunction(FunctionTag.CHECKERED).anchored_form()
    assert hk0_variation_coeffs(checkered) == 12.0


def test_vitali_examples():
    assert vitali_rect(RectPiecewiseFn([[0.0, 0.0]], [2.0]), Rectangle([0, 0], [1, 1])) == 0.0
    step = RectPiecewiseFn([[0.0], [0.5]], [0.0, 1.0])
    assert vitali_rect(step, Rectangle([0.0], [1.0])) == 1.0
    corner = RectPiecewiseFn([[0.0, 0.0], [0.5, 0.5]], [0.0, 1.0])
    assert vitali_rect(corner, Rectangle([0, 0], [1, 1])) == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_vitali_split_is_not_improved_by_refinement(seed):
    rng = np.random.default_rng(seed)
    f = random_fn(rng, 2, max_anchors=8)
    box = Rectangle([0.0, 0.0], [1.0, 1.0])
    value = vitali_rect(f, box)
    axes = []
    for j in range(2):
        extra = rng.uniform(size=3)
        axes.append(np.unique(np.concatenate([[0.0, 1.0], f.anchors[:, j], extra])))
    assert split_sum(f, axes) == pytest.approx(value, abs=1e-12)


def test_full_variation_examples():
    corner = RectPiecewiseFn([[0.0, 0.0], [0.5, 0.5]], [0.0, 1.0])
    assert hk0_variation_full(corner) == 1.0
    checkered = TestFunction(FunctionTag.CHECKERED).anchored_form()
    assert hk0_variation_full(checkered) == pytest.approx(12.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(200))
def test_full_variation_equals_coefficient_sum(seed):
    rng = np.random.default_rng(seed)
    f = random_fn(rng, int(rng.integers(1, 4)))
    assert hk0_variation_full(f) == pytest.approx(hk0_variation_coeffs(f), abs=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_em_variation_is_total_increase(seed):
    rng = np.random.default_rng(seed)
    f = random_fn(rng, 2)
    f = RectPiecewiseFn(f.anchors, np.abs(f.coefficients))
    ones, zeros = np.ones(2), np.zeros(2)
    assert hk0_variation_coeffs(f) == pytest.approx(f(ones) - f(zeros), abs=1e-12)
    assert hk0_variation_full(f) == pytest.approx(f(ones) - f(zeros), abs=1e-10)
    assert fn_is_entirely_monotone(f)


def test_em_decompose_examples():
    monotone = RectPiecewiseFn([[0.0], [0.3], [0.6]], [1.0, 2.0, 0.5])
    _, f_minus = em_decompose(monotone)
    assert hk0_variation_coeffs(f_minus) == 0.0
    np.testing.assert_array_equal(f_minus(np.linspace(0, 1, 11).reshape(-1, 1)), np.zeros(11))

    f = RectPiecewiseFn([[0.0], [0.3], [0.6]], [0.0, 2.0, -3.0])
    f_plus, f_minus = em_decompose(f)
    assert hk0_variation_coeffs(f_plus) == 2.0
    assert hk0_variation_coeffs(f_minus) == 3.0
    assert hk0_variation_coeffs(f) == 5.0


@pytest.mark.parametrize("seed", range(10))
def test_em_decompose_pointwise(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    f = random_fn(rng, d)
    f_plus, f_minus = em_decompose(f)
    assert f_plus.intercept == 0.0 and f_minus.intercept == 0.0
    assert fn_is_entirely_monotone(f_plus) and fn_is_entirely_monotone(f_minus)
    points = rng.uniform(size=(100, d))
    np.testing.assert_allclose(f(points) - f.intercept, f_plus(points) - f_minus(points), atol=1e-12)
    assert hk0_variation_coeffs(f) == pytest.approx(hk0_variation_coeffs(f_plus) + hk0_variation_coeffs(f_minus))


def test_rect_piecewise_fn_validation():
    with pytest.raises(InvalidParameterError):
        RectPiecewiseFn([[0.5, 0.0]], [1.0])
    with pytest.raises(InvalidParameterError):
        RectPiecewiseFn([[0.0, 0.0], [0.5, 0.5], [0.5, 0.5]], [1.0, 1.0, 1.0])
    with pytest.raises(InvalidParameterError):
        RectPiecewiseFn([[0.0, 0.0], [1.5, 0.5]], [1.0, 1.0])


def test_evaluation_uses_closed_corners():
    f = RectPiecewiseFn([[0.0, 0.0], [0.5, 0.5]], [1.0, 2.0])
    assert f([0.5, 0.5]) == 3.0
    assert f([0.5, 0.4999]) == 1.0
    assert f(np.zeros(2)) == 1.0


def test_from_lattice_drops_zero_terms():
    grid = LatticeGrid((2, 2))
    f = RectPiecewiseFn.from_lattice(grid, [0.0, 0.0, 1.5, 0.0])
    assert f.p == 2
    np.testing.assert_array_equal(f.anchors, [[0.0, 0.0], [0.5, 0.0]])
    np.testing.assert_array_equal(f.to_lattice_tensor(grid).as_array(), [[0.0, 0.0], [1.5, 1.5]])


def test_lattice_variation_of_interpolant():
    t = Tensor.from_array([[0.0, 2.0], [2.0, 3.0]])
    # D t = [[0, 2], [2, -1]]
    assert lattice_hk0_variation(t) == 5.0
