"""
Variation calculators for hkfit
-------------------------------
Quasi-volumes, entire-monotonicity certificates, Vitali and HK0 variation
(anchored at the origin) and the EM decomposition, for rectangular piecewise
constant functions written as anchored indicators

    f(x) = sum_j beta_j * 1{z_j <= x},   z_1 = 0.

Functions handed to quasi_volume are callables mapping an (m, d) array of
points to an (m,) array of values; RectPiecewiseFn satisfies this.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from hkfit.errors import DimensionMismatchError, InvalidParameterError
from hkfit.lattice_core import LatticeGrid, Tensor, difference_array, lattice_points

logger = logging.getLogger(__name__)

# Largest m * p * d block compared at once when evaluating
EVAL_BLOCK = 4_000_000

DEFAULT_MONOTONICITY_TOL = 1e-9


def _check_unit_cube(points: np.ndarray, what: str):
    if not np.all(np.isfinite(points)):
        raise InvalidParameterError(f"{what} contain NaN or infinite coordinates")
    if np.any(points < 0.0) or np.any(points > 1.0):
        raise InvalidParameterError(f"{what} must lie in [0, 1]^d")


@dataclass(frozen=True)
class RectPiecewiseFn:
    """
    f(x) = sum_j coefficients[j] * 1{anchors[j] <= x}

    Attributes:
        anchors: (p, d) distinct points in [0, 1]^d, anchors[0] = 0
        coefficients: (p,) reals; coefficients[0] is the intercept f(0)
    """
    anchors: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=float)
        if anchors.ndim == 1:
            anchors = anchors.reshape(-1, 1)
        coefficients = np.array(self.coefficients, dtype=float).ravel()
        if anchors.ndim != 2 or anchors.shape[0] == 0 or anchors.shape[1] == 0:
            raise DimensionMismatchError(f"anchors must be a nonempty (p, d) array, got shape {anchors.shape}")
        if coefficients.size != anchors.shape[0]:
            raise DimensionMismatchError(
                f"{coefficients.size} coefficients for {anchors.shape[0]} anchors"
            )
        if not np.all(np.isfinite(coefficients)):
            raise InvalidParameterError("coefficients contain NaN or infinite values")
        _check_unit_cube(anchors, "anchors")
        if np.any(anchors[0] != 0.0):
            raise InvalidParameterError(f"first anchor must be the origin, got {tuple(anchors[0])}")
        if np.unique(anchors, axis=0).shape[0] != anchors.shape[0]:
            raise InvalidParameterError("anchors must be pairwise distinct")
        anchors.flags.writeable = False
        coefficients.flags.writeable = False
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def d(self) -> int:
        return self.anchors.shape[1]

    @property
    def p(self) -> int:
        return self.anchors.shape[0]

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def __call__(self, x) -> np.ndarray:
        """Evaluate at one point (returns a float) or at an (m, d) array of points"""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        points = x.reshape(1, -1) if single else x
        if points.ndim != 2 or points.shape[1] != self.d:
            raise DimensionMismatchError(f"points of shape {x.shape} for a {self.d}-dimensional function")
        out = np.empty(points.shape[0])
        block = max(1, EVAL_BLOCK // (self.p * self.d))
        for start in range(0, points.shape[0], block):
            chunk = points[start:start + block]
            covered = (chunk[:, None, :] >= self.anchors[None, :, :]).all(axis=2)
            out[start:start + block] = covered @ self.coefficients
        return float(out[0]) if single else out

    @classmethod
    def from_lattice(cls, grid: LatticeGrid, beta: np.ndarray, drop_zeros: bool = True) -> "RectPiecewiseFn":
        """Function with coefficient beta_i at lattice point i (flat order); zero terms dropped"""
        beta = np.asarray(beta, dtype=float).ravel()
        if beta.size != grid.n:
            raise DimensionMismatchError(f"{beta.size} coefficients for a grid of {grid.n} cells")
        keep = np.ones(grid.n, dtype=bool)
        if drop_zeros:
            keep = beta != 0.0
            keep[0] = True
        return cls(lattice_points(grid)[keep], beta[keep])

    def to_lattice_tensor(self, grid: LatticeGrid) -> Tensor:
        """Values of f at the lattice points of grid"""
        return Tensor(grid, self(lattice_points(grid)))


@dataclass(frozen=True)
class Rectangle:
    """Closed axis-aligned box [a, b] with a <= b"""
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).ravel()
        b = np.array(self.b, dtype=float).ravel()
        if a.shape != b.shape or a.size == 0:
            raise DimensionMismatchError(f"rectangle corners of shapes {a.shape} and {b.shape}")
        _check_unit_cube(np.vstack([a, b]), "rectangle corners")
        if np.any(a > b):
            raise InvalidParameterError(f"rectangle needs a <= b, got a={tuple(a)}, b={tuple(b)}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def d(self) -> int:
        return self.a.size

    @property
    def is_degenerate(self) -> bool:
        return bool(np.all(self.a == self.b))


def quasi_volume(f: Callable[[np.ndarray], np.ndarray], r: Rectangle) -> float:
    """
    Alternating corner sum of f over r, skipping collapsed coordinates

    Each free coordinate i (a_i != b_i) contributes a factor
    (f at b_i) - (f at a_i); collapsed coordinates stay at a_i.
    """
    if r.is_degenerate:
        raise InvalidParameterError("quasi-volume is undefined for a rectangle with a = b")
    free = np.nonzero(r.a != r.b)[0]
    corners = []
    signs = []
    for pattern in itertools.product((0, 1), repeat=free.size):
        corner = r.a.copy()
        for axis, upper in zip(free, pattern):
            if upper:
                corner[axis] = r.b[axis]
        corners.append(corner)
        signs.append(-1.0 if (free.size - sum(pattern)) % 2 else 1.0)
    values = np.asarray(f(np.vstack(corners)), dtype=float).ravel()
    return float(np.dot(signs, values))


def is_entirely_monotone(t: Tensor, tol: float = DEFAULT_MONOTONICITY_TOL) -> bool:
    """True iff every entry of D t other than the origin's is >= -tol"""
    diff = difference_array(t.as_array()).ravel()
    return bool(np.all(diff[1:] >= -tol))


def lattice_hk0_variation(t: Tensor) -> float:
    """HK0 variation of the lattice interpolant of t: sum of |(D t)_i| over i != 0"""
    diff = difference_array(t.as_array()).ravel()
    return float(np.abs(diff[1:]).sum())


def hk0_variation_coeffs(f: RectPiecewiseFn) -> float:
    """sum_{j>=2} |beta_j|; the intercept carries no variation"""
    return float(np.abs(f.coefficients[1:]).sum())


def fn_is_entirely_monotone(f: RectPiecewiseFn, tol: float = DEFAULT_MONOTONICITY_TOL) -> bool:
    """EM certificate: distinct anchors make the expansion unique, so check the signs"""
    return bool(np.all(f.coefficients[1:] >= -tol))


def _breakpoints(f: RectPiecewiseFn, box: Rectangle, axis: int) -> np.ndarray:
    a, b = box.a[axis], box.b[axis]
    if a == b:
        return np.array([a])
    z = f.anchors[:, axis]
    inner = z[(z > a) & (z <= b)]
    return np.unique(np.concatenate([[a, b], inner]))


def vitali_rect(f: RectPiecewiseFn, box: Rectangle) -> float:
    """
    Vitali variation of f over box

    Uses the split generated by the anchor coordinates inside the box: f is
    constant on each cell of that split, so the sum of |quasi-volumes| over
    its cells is the supremum over all splits.
    """
    if box.d != f.d:
        raise DimensionMismatchError(f"{box.d}-dimensional box for a {f.d}-dimensional function")
    axes = [_breakpoints(f, box, j) for j in range(f.d)]
    free = [j for j, ax in enumerate(axes) if ax.size > 1]
    if not free:
        return 0.0
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    values = f(points).reshape(tuple(ax.size for ax in axes))
    for j in free:
        values = np.diff(values, axis=j)
    return float(np.abs(values).sum())


def _face_boxes(d: int):
    for size in range(1, d + 1):
        for subset in itertools.combinations(range(d), size):
            upper = np.zeros(d)
            upper[list(subset)] = 1.0
            yield subset, Rectangle(np.zeros(d), upper)


def hk0_variation_full(f: RectPiecewiseFn) -> float:
    """
    HK0 variation from its definition: the Vitali variations of f on every
    face of [0, 1]^d touching the origin, summed over nonempty S in [d]
    """
    total = 0.0
    for subset, box in _face_boxes(f.d):
        face_variation = vitali_rect(f, box)
        logger.debug(f"face {subset}: Vitali variation {face_variation:.12g}")
        total += face_variation
    return total


def em_decompose(f: RectPiecewiseFn) -> Tuple[RectPiecewiseFn, RectPiecewiseFn]:
    """
    Split f - f(0) into f_plus - f_minus with both parts entirely monotone

    Returns:
        (f_plus, f_minus), each with zero intercept; their HK0 variations add
        up to that of f
    """
    beta = f.coefficients
    parts = []
    for keep in (beta[1:] > 0, beta[1:] < 0):
        index = np.concatenate([[0], np.nonzero(keep)[0] + 1])
        coefficients = np.abs(beta[index])
        coefficients[0] = 0.0
        parts.append(RectPiecewiseFn(f.anchors[index], coefficients))
    return parts[0], parts[1]
