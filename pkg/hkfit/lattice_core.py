"""
Lattice geometry for hkfit
--------------------------
Multi-index geometry on equally spaced lattices, the differencing operator D
and its inverse, the cumulative sum over lower orthants.

Flat ordering is row-major (C order) over (i_1, ..., i_d): the last index
varies fastest, so for dims (2, 2) the order is (0,0), (0,1), (1,0), (1,1).
Model files and CSV outputs rely on this ordering.

Points are numpy arrays of shape (d,); collections of points are arrays of
shape (n, d).
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from hkfit.errors import DimensionMismatchError, InvalidParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


@dataclass(frozen=True)
class LatticeGrid:
    """Dimensions (n_1, ..., n_d) of an equally spaced lattice"""
    dims: Tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(n_j) for n_j in self.dims)
        if len(dims) == 0:
            raise InvalidParameterError("a lattice needs at least one dimension")
        if any(n_j < 1 for n_j in dims):
            raise InvalidParameterError(f"lattice dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    def flat_index(self, multi_index: ArrayLike) -> int:
        """Flat position of a multi-index under the row-major ordering"""
        idx = np.asarray(multi_index, dtype=int)
        if idx.shape != (self.d,):
            raise DimensionMismatchError(f"multi-index of length {idx.size} for a {self.d}-dimensional grid")
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.dims)):
            raise InvalidParameterError(f"multi-index {tuple(idx)} outside grid {self.dims}")
        return int(np.ravel_multi_index(tuple(idx), self.dims))

    def multi_index(self, flat: int) -> Tuple[int, ...]:
        """Inverse of flat_index"""
        if not 0 <= flat < self.n:
            raise InvalidParameterError(f"flat position {flat} outside grid of size {self.n}")
        return tuple(int(i) for i in np.unravel_index(flat, self.dims))


@dataclass(frozen=True)
class Tensor:
    """Values on a lattice, stored flat in row-major order (read-only)"""
    grid: LatticeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.size != self.grid.n:
            raise DimensionMismatchError(
                f"tensor has {values.size} values but grid {self.grid.dims} has {self.grid.n} cells"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor":
        """Wrap a d-dimensional array; its shape becomes the grid dims"""
        array = np.asarray(array, dtype=float)
        return cls(LatticeGrid(array.shape), array.ravel())

    def as_array(self) -> np.ndarray:
        """Read-only view with shape grid.dims"""
        return self.values.reshape(self.grid.dims)

    def __getitem__(self, multi_index) -> float:
        return float(self.as_array()[tuple(multi_index)])


def leq(a: ArrayLike, b: ArrayLike) -> bool:
    """Componentwise order: True iff a_j <= b_j for every j"""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"cannot compare points of shapes {a.shape} and {b.shape}")
    return bool(np.all(a <= b))


def lattice_points(grid: LatticeGrid) -> np.ndarray:
    """All points (i_1/n_1, ..., i_d/n_d) in flat order, shape (n, d)"""
    dims = np.asarray(grid.dims, dtype=float)
    indices = np.indices(grid.dims).reshape(grid.d, -1).T
    return indices / dims


def difference_array(theta: np.ndarray) -> np.ndarray:
    """
    Direct 2^d-term differencing of a d-dimensional array.

    (D theta)_i = sum over z in {0,1}^d with i - z >= 0 of (-1)^|z| theta_{i-z}
    """
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for corner in itertools.product((0, 1), repeat=theta.ndim):
        dst = tuple(slice(1, None) if z else slice(None) for z in corner)
        src = tuple(slice(None, -1) if z else slice(None) for z in corner)
        sign = -1.0 if sum(corner) % 2 else 1.0
        out[dst] += sign * theta[src]
    return out


def cumsum_array(beta: np.ndarray) -> np.ndarray:
    """theta_i = sum of beta over the lower orthant {i' <= i}, one prefix sum per axis"""
    theta = np.asarray(beta, dtype=float)
    for axis in range(theta.ndim):
        theta = np.cumsum(theta, axis=axis)
    return theta


def reverse_cumsum_array(r: np.ndarray) -> np.ndarray:
    """Sum over the upper orthant {i' >= i}; the adjoint of cumsum_array"""
    flipped = np.flip(np.asarray(r, dtype=float))
    return np.flip(cumsum_array(flipped)).copy()


def difference(t: Tensor) -> Tensor:
    """The differencing operator D on a lattice tensor; (D t)_0 = t_0"""
    return Tensor(t.grid, difference_array(t.as_array()).ravel())


def cumsum(b: Tensor) -> Tensor:
    """Inverse of difference: lower-orthant sums, O(d n)"""
    return Tensor(b.grid, cumsum_array(b.as_array()).ravel())


def reverse_cumsum(r: Tensor) -> Tensor:
    return Tensor(r.grid, reverse_cumsum_array(r.as_array()).ravel())
