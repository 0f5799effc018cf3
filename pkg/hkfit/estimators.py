"""
Estimators for hkfit
--------------------
End-to-end fits returning RectPiecewiseFn models:

- fit_em:        least squares over entirely monotone functions
- fit_hk:        least squares over functions with HK0 variation <= V
- fit_em_capped: least squares over entirely monotone functions with
                 HK0 variation <= V

Each fit builds the design matrix, solves the constrained least squares
problem for beta and keeps the nonzero anchored indicators (the intercept is
always kept).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from hkfit.design import DesignBackend, DesignMatrix, build_design
from hkfit.errors import DimensionMismatchError, EmptyDesignError, InvalidParameterError, NonFiniteDataError
from hkfit.solvers import (
    CappedSimplex,
    L1Ball,
    NonnegativeCone,
    SolveResult,
    SolverConfig,
    solve_constrained_ls,
)
from hkfit.variation import RectPiecewiseFn, hk0_variation_coeffs

logger = logging.getLogger(__name__)


class EstimatorKind(Enum):
    EM = "em"
    HK = "hk"
    EM_CAPPED = "em-capped"


@dataclass
class FittedModel:
    """
    A fitted anchored-indicator model

    Attributes:
        fn: the fitted function
        fitted: fitted values A beta at the design points
        kind: which estimator produced it
        V: variation bound (None for EM)
        diagnostics: solver summary plus n, p and the design backend
        grid_dims: lattice dimensions when the design was a full lattice
    """
    fn: RectPiecewiseFn
    fitted: np.ndarray
    kind: EstimatorKind
    V: Optional[float] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    grid_dims: Optional[Tuple[int, ...]] = None

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", True))

    @property
    def variation(self) -> float:
        return hk0_variation_coeffs(self.fn)


def _check_V(V: float) -> float:
    V = float(V)
    if math.isnan(V) or V < 0:
        raise InvalidParameterError(f"V must be nonnegative, got {V}")
    return V


def _prepare(xs, y, strategy, design: Optional[DesignMatrix]) -> Tuple[DesignMatrix, np.ndarray]:
    if design is None:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs.reshape(-1, 1)
        if xs.size == 0:
            raise EmptyDesignError("cannot fit without observations")
        if not np.all(np.isfinite(xs)):
            raise NonFiniteDataError("design points contain NaN or infinite values")
        if np.any(xs < 0.0) or np.any(xs > 1.0):
            raise InvalidParameterError("design points must lie in [0, 1]^d")
        design = build_design(xs, strategy=strategy)
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        raise EmptyDesignError("cannot fit without observations")
    if y.size != design.n_rows:
        raise DimensionMismatchError(f"{y.size} responses for {design.n_rows} design points")
    if not np.all(np.isfinite(y)):
        raise NonFiniteDataError("responses contain NaN or infinite values")
    return design, y


def _canonical_terms(design: DesignMatrix, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Re-anchor every nonzero term at the component-wise minimum of the design
    points its column covers, merging terms that land on the same anchor.
    Columns covering every point fold into the intercept; empty columns drop.
    """
    xs = design.design_points
    intercept = float(beta[0])
    merged: Dict[Tuple[float, ...], float] = {}
    for j in np.flatnonzero(beta[1:]) + 1:
        covered = (xs >= design.anchors[j]).all(axis=1)
        if not covered.any():
            continue
        anchor = xs[covered].min(axis=0)
        if covered.all() or not np.any(anchor):
            intercept += float(beta[j])
            continue
        key = tuple(anchor)
        merged[key] = merged.get(key, 0.0) + float(beta[j])
    terms = [(key, c) for key, c in merged.items() if c != 0.0]
    anchors = np.zeros((len(terms) + 1, design.d))
    coefficients = np.empty(len(terms) + 1)
    coefficients[0] = intercept
    if terms:
        tail = np.array([key for key, _ in terms])
        order = np.lexsort(tail[:, ::-1].T)
        anchors[1:] = tail[order]
        coefficients[1:] = np.array([c for _, c in terms])[order]
    return anchors, coefficients


def _model_from_solution(design: DesignMatrix, result: SolveResult, kind: EstimatorKind,
                         V: Optional[float]) -> FittedModel:
    beta = result.beta
    if design.backend is DesignBackend.INDUCED_GRID:
        # grid anchors are not canonical, and duplicate columns split their mass
        fn = RectPiecewiseFn(*_canonical_terms(design, beta))
    else:
        keep = beta != 0.0
        keep[0] = True
        fn = RectPiecewiseFn(design.anchors[keep], beta[keep])
    diagnostics = result.summary()
    diagnostics.update({"n": design.n_rows, "p": design.n_cols, "backend": design.backend.value})
    grid_dims = design.grid.dims if design.backend is DesignBackend.LATTICE else None
    logger.info(
        f"{kind.value} fit: n={design.n_rows}, p={design.n_cols}, "
        f"nonzero={fn.p}, objective={result.objective:.6g}, converged={result.converged}"
    )
    return FittedModel(
        fn=fn,
        fitted=design.apply(beta),
        kind=kind,
        V=V,
        diagnostics=diagnostics,
        grid_dims=grid_dims,
    )


def fit_em(xs, y, cfg: Optional[SolverConfig] = None, strategy: str = "auto",
           design: Optional[DesignMatrix] = None) -> FittedModel:
    """
    Entirely monotone least squares fit

    Args:
        xs: (n, d) design points in [0, 1]^d (ignored when design is given)
        y: n responses
        cfg: solver settings
        strategy: design strategy for build_design
        design: prebuilt design matrix to reuse across fits
    """
    design, y = _prepare(xs, y, strategy, design)
    result = solve_constrained_ls(design, y, NonnegativeCone(), cfg)
    return _model_from_solution(design, result, EstimatorKind.EM, None)


def fit_hk(xs, y, V: float, cfg: Optional[SolverConfig] = None, strategy: str = "auto",
           design: Optional[DesignMatrix] = None) -> FittedModel:
    """Least squares over functions with HK0 variation at most V"""
    V = _check_V(V)
    design, y = _prepare(xs, y, strategy, design)
    result = solve_constrained_ls(design, y, L1Ball(V), cfg)
    return _model_from_solution(design, result, EstimatorKind.HK, V)


def fit_em_capped(xs, y, V: float, cfg: Optional[SolverConfig] = None, strategy: str = "auto",
                  design: Optional[DesignMatrix] = None) -> FittedModel:
    """Entirely monotone least squares with total increase f(1) - f(0) at most V; V = inf drops the cap"""
    V = _check_V(V)
    design, y = _prepare(xs, y, strategy, design)
    projector = NonnegativeCone() if math.isinf(V) else CappedSimplex(V)
    result = solve_constrained_ls(design, y, projector, cfg)
    return _model_from_solution(design, result, EstimatorKind.EM_CAPPED, V)


def fit(kind, xs, y, V: Optional[float] = None, cfg: Optional[SolverConfig] = None,
        strategy: str = "auto", design: Optional[DesignMatrix] = None) -> FittedModel:
    """Dispatch on the estimator kind ('em', 'hk' or 'em-capped')"""
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.EM:
        return fit_em(xs, y, cfg, strategy, design)
    if V is None:
        raise InvalidParameterError(f"estimator '{kind.value}' needs a variation bound V")
    if kind is EstimatorKind.HK:
        return fit_hk(xs, y, V, cfg, strategy, design)
    return fit_em_capped(xs, y, V, cfg, strategy, design)


def predict(model: FittedModel, x, clamp: bool = False):
    """
    Evaluate the fitted function at one point or at an (m, d) array

    Args:
        clamp: truncate predictions to [0, 1] (for fitted distribution functions)
    """
    values = model.fn(x)
    if clamp:
        values = np.clip(values, 0.0, 1.0)
        if np.ndim(values) == 0:
            values = float(values)
    return values


def empirical_loss(model_or_values, truth_values) -> float:
    """(1/n) sum (fhat(x_i) - f*(x_i))^2"""
    if isinstance(model_or_values, FittedModel):
        estimate = model_or_values.fitted
    else:
        estimate = np.asarray(model_or_values, dtype=float).ravel()
    truth = np.asarray(truth_values, dtype=float).ravel()
    if estimate.size != truth.size:
        raise DimensionMismatchError(f"{estimate.size} estimates against {truth.size} true values")
    if estimate.size == 0:
        raise EmptyDesignError("loss over an empty design")
    return float(np.mean((estimate - truth) ** 2))
