#!/usr/bin/env python3
"""
Tests for design matrix construction and the implicit operators
"""

import numpy as np
import pytest

from hkfit.design import (
    DesignBackend,
    build_componentwise_min,
    build_design,
    build_induced_grid,
    build_lattice,
    build_lattice_design,
    build_naive_grid,
    detect_lattice,
    eval_vector,
    vc_bound,
)
from hkfit.errors import DimensionMismatchError, EmptyDesignError
from hkfit.lattice_core import LatticeGrid, lattice_points


def column_set(design) -> set:
    dense = design.to_dense().astype(np.uint8)
    return {tuple(col) for col in dense.T if col.any()}


def random_design(rng, n, d):
    if rng.random() < 0.5:
        # coarse coordinates produce ties
        return rng.integers(0, 4, size=(n, d)) / 4.0
    return rng.uniform(size=(n, d))


def anti_diagonal(n):
    t = np.arange(1, n + 1) / (n + 1)
    return np.column_stack([t, 1.0 - t])


def test_eval_vector_examples():
    xs = lattice_points(LatticeGrid((2, 2)))
    np.testing.assert_array_equal(eval_vector([0.0, 0.0], xs), [1, 1, 1, 1])
    np.testing.assert_array_equal(eval_vector([1.0, 1.0], xs), [0, 0, 0, 0])

    xs = lattice_points(LatticeGrid((3, 3)))
    v = eval_vector([0.5, 0.5], xs)
    expected = [int(x[0] >= 0.5 and x[1] >= 0.5) for x in xs]
    np.testing.assert_array_equal(v, expected)
    assert v.sum() == 1
    assert v[8] == 1


def test_eval_vector_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        eval_vector([0.1, 0.2, 0.3], [[0.5, 0.5]])


def test_empty_design():
    with pytest.raises(EmptyDesignError):
        build_naive_grid(np.zeros((0, 2)))
    with pytest.raises(EmptyDesignError):
        build_componentwise_min(np.zeros((0, 2)))


def test_naive_grid_on_lattice():
    grid = LatticeGrid((2, 2))
    design = build_naive_grid(lattice_points(grid))
    assert design.n_cols == 4
    assert design.backend is DesignBackend.DENSE
    np.testing.assert_array_equal(design.anchors, lattice_points(grid))
    np.testing.assert_array_equal(design.to_dense(), [[1, 0, 0, 0], [1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 1, 1]])


def test_single_point_gives_single_column():
    design = build_naive_grid([[0.3, 0.7]])
    assert design.n_cols == 1
    np.testing.assert_array_equal(design.anchors, [[0.0, 0.0]])


def test_first_column_is_ones_and_columns_distinct():
    rng = np.random.default_rng(5)
    xs = rng.uniform(size=(10, 2))
    design = build_componentwise_min(xs)
    dense = design.to_dense()
    np.testing.assert_array_equal(dense[:, 0], np.ones(10))
    np.testing.assert_array_equal(design.anchors[0], [0.0, 0.0])
    assert len({tuple(col) for col in dense.T}) == design.n_cols
    assert dense[:, 1:].any(axis=0).all()


def test_anchor_columns_agree_with_eval_vector():
    rng = np.random.default_rng(6)
    xs = rng.uniform(size=(8, 3))
    design = build_componentwise_min(xs)
    dense = design.to_dense()
    for j, z in enumerate(design.anchors):
        np.testing.assert_array_equal(dense[:, j], eval_vector(z, xs))


@pytest.mark.parametrize("n", [4, 10, 25, 50])
def test_anti_diagonal_count(n):
    xs = anti_diagonal(n)
    assert build_componentwise_min(xs).n_cols == n * (n + 1) // 2
    if n <= 25:
        assert build_naive_grid(xs).n_cols == n * (n + 1) // 2


@pytest.mark.parametrize("dims", [(6, 5), (3, 3, 2), (12,)])
def test_dense_lattice_has_p_equal_n(dims):
    grid = LatticeGrid(dims)
    xs = lattice_points(grid)
    assert build_naive_grid(xs).n_cols == grid.n
    assert build_componentwise_min(xs).n_cols == grid.n


def test_lattice_backend_has_p_equal_n():
    grid = LatticeGrid((50, 50))
    design = build_design(lattice_points(grid))
    assert design.backend is DesignBackend.LATTICE
    assert design.n_cols == grid.n == 2500


@pytest.mark.parametrize("seed", range(200))
def test_naive_and_componentwise_min_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    d = int(rng.integers(1, 4))
    xs = random_design(rng, n, d)
    naive = build_naive_grid(xs)
    cmin = build_componentwise_min(xs)
    assert column_set(naive) == column_set(cmin)
    assert naive.n_cols == cmin.n_cols <= vc_bound(n, d)


def test_vc_bound_examples():
    assert vc_bound(5, 2) == 16
    assert vc_bound(0, 3) == 1
    assert vc_bound(3, 5) == 8


def test_vc_bound_overflow_detected():
    with pytest.raises(OverflowError):
        vc_bound(10 ** 6, 10)


def test_lattice_matrix_example():
    design = build_lattice(LatticeGrid((2, 2)))
    np.testing.assert_array_equal(design.to_dense(), [[1, 0, 0, 0], [1, 1, 0, 0], [1, 0, 1, 0], [1, 1, 1, 1]])
    e1 = np.zeros(4)
    e1[0] = 1.0
    np.testing.assert_array_equal(design.apply(e1), np.ones(4))


def test_lattice_operator_matches_dense():
    design = build_lattice(LatticeGrid((3, 4)))
    dense = design.to_dense()
    rng = np.random.default_rng(2)
    beta = rng.normal(size=12)
    r = rng.normal(size=12)
    np.testing.assert_allclose(design.apply(beta), dense @ beta, atol=1e-12)
    np.testing.assert_allclose(design.transpose_apply(r), dense.T @ r, atol=1e-12)


@pytest.mark.parametrize("builder", ["lattice", "naive", "induced"])
def test_operator_consistency_on_basis_vectors(builder):
    rng = np.random.default_rng(11)
    if builder == "lattice":
        design = build_lattice(LatticeGrid((3, 2, 2)))
    elif builder == "naive":
        design = build_naive_grid(rng.uniform(size=(7, 2)))
    else:
        design = build_induced_grid(random_design(rng, 9, 2))
    dense = design.to_dense()
    n, p = design.shape
    for j in range(p):
        e = np.zeros(p)
        e[j] = 1.0
        np.testing.assert_array_equal(design.apply(e), dense[:, j])
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        np.testing.assert_array_equal(design.transpose_apply(e), dense[i])


def test_detect_lattice_with_shuffled_rows():
    grid = LatticeGrid((4, 3))
    xs = lattice_points(grid)
    order = np.random.default_rng(0).permutation(grid.n)
    detected = detect_lattice(xs[order])
    assert detected is not None
    found, cells = detected
    assert found.dims == (4, 3)
    np.testing.assert_array_equal(cells, order)

    design = build_lattice_design(xs[order])
    np.testing.assert_array_equal(design.to_dense(), build_lattice(grid).to_dense()[order])


def test_detect_lattice_rejects_non_lattices():
    xs = lattice_points(LatticeGrid((3, 3)))
    assert detect_lattice(xs[:-1]) is None
    assert detect_lattice(np.vstack([xs, xs[:1]])) is None
    assert detect_lattice(xs * 0.9) is None


def test_induced_grid_has_same_columns_as_naive_grid():
    rng = np.random.default_rng(4)
    for _ in range(10):
        xs = random_design(rng, 8, 2)
        assert column_set(build_induced_grid(xs)) == column_set(build_naive_grid(xs))


def test_duplicate_points_kept_as_rows():
    xs = np.array([[0.2, 0.4], [0.2, 0.4], [0.6, 0.1]])
    design = build_componentwise_min(xs)
    assert design.n_rows == 3
    dense = design.to_dense()
    np.testing.assert_array_equal(dense[0], dense[1])


def test_auto_strategy_selection():
    rng = np.random.default_rng(8)
    assert build_design(rng.uniform(size=(20, 2))).backend is DesignBackend.DENSE
    assert build_design(rng.uniform(size=(200, 2))).backend is DesignBackend.INDUCED_GRID
    assert build_design(lattice_points(LatticeGrid((5, 4)))).backend is DesignBackend.LATTICE
    assert build_design(rng.uniform(size=(20, 2)), strategy="induced-grid").backend is DesignBackend.INDUCED_GRID
