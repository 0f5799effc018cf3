"""
Design matrices for hkfit
-------------------------
Builds the binary design matrix A whose columns are the distinct evaluation
vectors v(z) = (1{z <= x_1}, ..., 1{z <= x_n}) of a design x_1, ..., x_n.

Backends:
1. DENSE: columns enumerated from a candidate anchor set (naive gridding or
   component-wise minima), deduplicated, stored as packed bits per column.
2. LATTICE: the equally spaced lattice, where A is the cumulative-sum
   operator and p = n.
3. INDUCED_GRID: naive gridding kept implicit. Anchors are the full product
   of unique coordinates, A is a cumulative sum on that grid sampled at the
   design points. Columns may repeat or be zero; the cone and l1-ball images
   of A are the same as for the deduplicated matrix.

Zero columns are never part of a DENSE design. The all-ones column is always
first and is labelled with the anchor 0.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, Iterator, Optional, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator

from hkfit.errors import DimensionMismatchError, EmptyDesignError, InvalidParameterError
from hkfit.lattice_core import (
    LatticeGrid,
    cumsum_array,
    lattice_points,
    reverse_cumsum_array,
)

logger = logging.getLogger(__name__)

# Lattice coordinates must equal i/n_j to this absolute tolerance
LATTICE_ATOL = 1e-12
CANDIDATE_CHUNK = 4096
INT64_MAX = 2 ** 63 - 1


class DesignBackend(Enum):
    """How the design matrix is stored and applied"""
    DENSE = "dense"
    LATTICE = "lattice"
    INDUCED_GRID = "induced_grid"


class DesignStrategy(Enum):
    """How anchors are enumerated for a design"""
    AUTO = "auto"
    LATTICE = "lattice"
    NAIVE = "naive"
    COMPONENTWISE_MIN = "componentwise-min"
    INDUCED_GRID = "induced-grid"


def _as_points(xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(-1, 1)
    if xs.ndim != 2:
        raise DimensionMismatchError(f"design points must be an (n, d) array, got shape {xs.shape}")
    if xs.shape[0] == 0:
        raise EmptyDesignError("design has no points")
    if xs.shape[1] == 0:
        raise DimensionMismatchError("design points need at least one coordinate")
    return xs


@dataclass(frozen=True)
class DesignMatrix:
    """
    The n x p binary matrix with entries 1{z_j <= x_i}.

    Attributes:
        anchors: (p, d) anchor points z_1..z_p, z_1 = 0
        design_points: (n, d) design points x_1..x_n (duplicates kept as rows)
        backend: storage / application strategy
        packed_columns: DENSE only, np.packbits of the columns along rows
        grid: LATTICE / INDUCED_GRID only, the grid carrying the coefficients
        cells: LATTICE / INDUCED_GRID only, flat grid cell of each design point
    """
    anchors: np.ndarray
    design_points: np.ndarray
    backend: DesignBackend
    packed_columns: Optional[np.ndarray] = None
    grid: Optional[LatticeGrid] = None
    cells: Optional[np.ndarray] = None

    @property
    def n_rows(self) -> int:
        return self.design_points.shape[0]

    @property
    def n_cols(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.design_points.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def _unpacked(self) -> np.ndarray:
        return np.unpackbits(self.packed_columns, axis=0, count=self.n_rows)

    def apply(self, beta: np.ndarray) -> np.ndarray:
        """A @ beta"""
        beta = np.asarray(beta, dtype=float).ravel()
        if beta.size != self.n_cols:
            raise DimensionMismatchError(f"coefficient vector of length {beta.size}, expected {self.n_cols}")
        if self.backend is DesignBackend.DENSE:
            return self._unpacked() @ beta
        theta = cumsum_array(beta.reshape(self.grid.dims)).ravel()
        return theta[self.cells]

    def transpose_apply(self, r: np.ndarray) -> np.ndarray:
        """A.T @ r"""
        r = np.asarray(r, dtype=float).ravel()
        if r.size != self.n_rows:
            raise DimensionMismatchError(f"residual vector of length {r.size}, expected {self.n_rows}")
        if self.backend is DesignBackend.DENSE:
            return r @ self._unpacked()
        scattered = np.bincount(self.cells, weights=r, minlength=self.grid.n)
        return reverse_cumsum_array(scattered.reshape(self.grid.dims)).ravel()

    def as_operator(self) -> LinearOperator:
        """scipy LinearOperator with matvec = apply and rmatvec = transpose_apply"""
        return LinearOperator(self.shape, matvec=self.apply, rmatvec=self.transpose_apply, dtype=float)

    def to_dense(self) -> np.ndarray:
        """Materialized 0/1 matrix (for small designs and tests)"""
        if self.backend is DesignBackend.DENSE:
            return self._unpacked().astype(float)
        return (self.design_points[:, None, :] >= self.anchors[None, :, :]).all(axis=2).astype(float)


def eval_vector(z, xs) -> np.ndarray:
    """Binary vector with component i equal to 1{z <= x_i}"""
    xs = _as_points(xs)
    z = np.asarray(z, dtype=float).ravel()
    if z.size != xs.shape[1]:
        raise DimensionMismatchError(f"anchor of dimension {z.size} for {xs.shape[1]}-dimensional design")
    return (xs >= z).all(axis=1).astype(np.uint8)


def vc_bound(n: int, d: int) -> int:
    """sum_{j=0}^{d} C(n, j), the worst-case number of distinct columns"""
    if n < 0:
        raise InvalidParameterError(f"n must be nonnegative, got {n}")
    if d < 1:
        raise InvalidParameterError(f"d must be at least 1, got {d}")
    total = sum(math.comb(n, j) for j in range(d + 1))
    if total > INT64_MAX:
        raise OverflowError(f"vc_bound({n}, {d}) exceeds the 64-bit integer range")
    return total


def _column_chunks(xs: np.ndarray, candidates: Iterable[np.ndarray]) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (candidate chunk, packed column bits) pairs"""
    for chunk in candidates:
        bits = (xs[None, :, :] >= chunk[:, None, :]).all(axis=2)
        yield chunk, np.packbits(bits, axis=1)


def _from_candidates(xs: np.ndarray, candidates: Iterable[np.ndarray]) -> DesignMatrix:
    """Evaluate candidates, drop zero columns, dedup by bit pattern"""
    n, d = xs.shape
    seen: Dict[bytes, None] = {}
    n_candidates = 0
    for chunk, packed in _column_chunks(xs, candidates):
        n_candidates += chunk.shape[0]
        for row in packed:
            if row.any():
                seen.setdefault(row.tobytes(), None)

    ones_key = np.packbits(np.ones(n, dtype=bool)).tobytes()
    patterns = [ones_key] + sorted(key for key in seen if key != ones_key)
    packed_rows = np.frombuffer(b"".join(patterns), dtype=np.uint8).reshape(len(patterns), -1)
    columns = np.unpackbits(packed_rows, axis=1, count=n).astype(bool)

    # The componentwise-largest anchor producing a column is the componentwise
    # minimum of the design points it covers
    anchors = np.empty((len(patterns), d))
    anchors[0] = 0.0
    for j in range(1, len(patterns)):
        anchors[j] = xs[columns[j]].min(axis=0)

    order = np.lexsort(anchors[1:, ::-1].T) + 1
    anchors = np.vstack([anchors[:1], anchors[order]])
    packed_rows = np.vstack([packed_rows[:1], packed_rows[order]])

    packed_columns = np.packbits(np.unpackbits(packed_rows, axis=1, count=n).T, axis=0)
    logger.info(f"Dense design: n={n}, d={d}, candidates={n_candidates}, p={len(patterns)}")
    return DesignMatrix(
        anchors=anchors,
        design_points=xs,
        backend=DesignBackend.DENSE,
        packed_columns=packed_columns,
    )


def _grid_points(axes) -> Iterator[np.ndarray]:
    shape = tuple(axis.size for axis in axes)
    total = int(np.prod(shape))
    for start in range(0, total, CANDIDATE_CHUNK):
        flat = np.arange(start, min(start + CANDIDATE_CHUNK, total))
        index = np.unravel_index(flat, shape)
        yield np.column_stack([axis[i] for axis, i in zip(axes, index)])


def build_naive_grid(xs) -> DesignMatrix:
    """Dense design from the smallest grid S_1 x ... x S_d containing the design"""
    xs = _as_points(xs)
    axes = [np.unique(xs[:, j]) for j in range(xs.shape[1])]
    return _from_candidates(xs, _grid_points(axes))


def _componentwise_minima(xs: np.ndarray) -> Iterator[np.ndarray]:
    n, d = xs.shape
    for size in range(1, min(d, n) + 1):
        combos = itertools.combinations(range(n), size)
        while True:
            block = list(itertools.islice(combos, CANDIDATE_CHUNK))
            if not block:
                break
            yield xs[np.asarray(block)].min(axis=1)


def build_componentwise_min(xs) -> DesignMatrix:
    """Dense design from component-wise minima of all subsets of size <= d"""
    xs = _as_points(xs)
    return _from_candidates(xs, _componentwise_minima(xs))


def build_lattice(grid: LatticeGrid) -> DesignMatrix:
    """Implicit design for the full lattice in flat order: A = cumulative sum, p = n"""
    points = lattice_points(grid)
    return DesignMatrix(
        anchors=points,
        design_points=points,
        backend=DesignBackend.LATTICE,
        grid=grid,
        cells=np.arange(grid.n),
    )


def detect_lattice(xs) -> Optional[Tuple[LatticeGrid, np.ndarray]]:
    """
    Detect a full equally spaced lattice design in any row order

    Returns:
        (grid, cells) where cells[i] is the flat lattice position of row i,
        or None when xs is not exactly a lattice (each cell hit once)
    """
    xs = _as_points(xs)
    n, d = xs.shape
    dims = []
    indices = np.empty((n, d), dtype=int)
    for j in range(d):
        values = np.unique(xs[:, j])
        n_j = values.size
        if not np.allclose(values, np.arange(n_j) / n_j, rtol=0.0, atol=LATTICE_ATOL):
            return None
        dims.append(n_j)
        indices[:, j] = np.rint(xs[:, j] * n_j).astype(int)
    grid = LatticeGrid(tuple(dims))
    if grid.n != n:
        return None
    cells = np.ravel_multi_index(tuple(indices.T), grid.dims)
    if np.unique(cells).size != n:
        return None
    return grid, cells


def build_lattice_design(xs) -> DesignMatrix:
    """Lattice backend for a design already known to be a lattice, rows in their given order"""
    xs = _as_points(xs)
    detected = detect_lattice(xs)
    if detected is None:
        raise InvalidParameterError("design points do not form a full lattice")
    grid, cells = detected
    return DesignMatrix(
        anchors=lattice_points(grid),
        design_points=xs,
        backend=DesignBackend.LATTICE,
        grid=grid,
        cells=cells,
    )


def build_induced_grid(xs, max_cells: Optional[int] = None) -> DesignMatrix:
    """Implicit naive-gridding design on the grid of unique coordinates"""
    xs = _as_points(xs)
    n, d = xs.shape
    axes = [np.unique(xs[:, j]) for j in range(d)]
    grid = LatticeGrid(tuple(axis.size for axis in axes))
    if max_cells is not None and grid.n > max_cells:
        raise InvalidParameterError(f"induced grid {grid.dims} has {grid.n} cells, limit is {max_cells}")
    ranks = np.column_stack([np.searchsorted(axes[j], xs[:, j]) for j in range(d)])
    cells = np.ravel_multi_index(tuple(ranks.T), grid.dims)
    mesh = np.meshgrid(*axes, indexing="ij")
    anchors = np.column_stack([m.ravel() for m in mesh])
    # cell 0 covers every design point, so it is the intercept column
    anchors[0] = 0.0
    logger.info(f"Induced grid design: n={n}, grid={grid.dims}, p={grid.n}")
    return DesignMatrix(
        anchors=anchors,
        design_points=xs,
        backend=DesignBackend.INDUCED_GRID,
        grid=grid,
        cells=cells,
    )


def build_design(xs, strategy="auto", max_candidates: int = 10000,
                 max_grid_cells: int = 4000000) -> DesignMatrix:
    """
    Pick and build a design backend

    Args:
        xs: (n, d) design points
        strategy: DesignStrategy or its value; 'auto' uses the lattice when
            detected, component-wise minima when vc_bound(n, d) <= max_candidates,
            and the induced grid otherwise
    """
    xs = _as_points(xs)
    strategy = DesignStrategy(strategy)
    n, d = xs.shape
    if strategy is DesignStrategy.LATTICE:
        return build_lattice_design(xs)
    if strategy is DesignStrategy.NAIVE:
        return build_naive_grid(xs)
    if strategy is DesignStrategy.COMPONENTWISE_MIN:
        return build_componentwise_min(xs)
    if strategy is DesignStrategy.INDUCED_GRID:
        return build_induced_grid(xs, max_grid_cells)

    if detect_lattice(xs) is not None:
        return build_lattice_design(xs)
    try:
        small = vc_bound(n, d) <= max_candidates
    except OverflowError:
        small = False
    if small:
        return build_componentwise_min(xs)
    try:
        return build_induced_grid(xs, max_grid_cells)
    except InvalidParameterError as e:
        logger.warning(f"{e}; falling back to component-wise minimum enumeration")
        return build_componentwise_min(xs)
