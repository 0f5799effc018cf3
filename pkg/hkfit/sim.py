"""
Simulation harness for hkfit
----------------------------
Seeded data generation, the library of test regression functions, risk
experiments with log-log slope fits, the bivariate current status study and
the figure reproductions (surfaces and losses as data).

Seeding: every trial draws from np.random.default_rng(trial_seed(seed, g, t))
with trial_seed built from splitmix64, so results do not depend on how
trials are scheduled across threads.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from hkfit.design import DesignMatrix, build_design, build_lattice
from hkfit.errors import DegenerateRegressionError, DimensionMismatchError, InvalidParameterError
from hkfit.estimators import EstimatorKind, FittedModel, empirical_loss, fit, fit_em, predict
from hkfit.lattice_core import LatticeGrid, difference_array, lattice_points
from hkfit.solvers import SolverConfig
from hkfit.variation import RectPiecewiseFn, fn_is_entirely_monotone

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
THIRD = 1.0 / 3.0
TWO_THIRDS = 2.0 / 3.0

# Risks at or below this are reported as zero (exact recovery up to rounding)
ZERO_RISK_TOL = 1e-12

CURRENT_STATUS_EVAL_POINTS = 21
CURRENT_STATUS_INTERIOR = (0.2, 0.8)

SLOPE_REGRESSORS = ("log_n", "log_n_over_log_n", "log_n_over_log2_n")


def splitmix64(x: int) -> int:
    """One splitmix64 step on a 64-bit unsigned integer"""
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(seed: int, grid_index: int, trial: int) -> int:
    """Seed for trial `trial` on grid `grid_index` of an experiment seeded with `seed`"""
    return splitmix64(splitmix64(splitmix64(seed & MASK64) ^ grid_index) ^ trial)


class FunctionTag(Enum):
    ADDITIVE_LINEAR = "additive_linear"
    TWO_STEP = "two_step"
    NEG_CORNER = "neg_corner"
    CHECKERED = "checkered"
    ONE_JUMP = "one_jump"
    CURRENT_STATUS_CDF = "current_status_cdf"


# 3x3 block values of the checkered function, indexed by (block of x1, block of x2)
CHECKERED_BLOCKS = np.array([[0.0, 1.0, 0.0],
                             [1.0, 0.0, 1.0],
                             [0.0, 1.0, 0.0]])


def _blocks(coordinate: np.ndarray) -> np.ndarray:
    return (coordinate >= THIRD).astype(int) + (coordinate >= TWO_THIRDS).astype(int)


@dataclass(frozen=True)
class TestFunction:
    """
    A regression function f* on [0, 1]^d

    Tags:
        additive_linear:    x_1 + ... + x_d
        two_step:           1{x1 >= 0.5} + 1{x2 >= 0.5}
        neg_corner:         -1{x1 >= 0.5, x2 >= 0.5}
        checkered:          1 on the four edge-centre cells of the 3x3 grid of thirds, else 0
        one_jump:           a0 + a1 * 1{x >= x_star}
        current_status_cdf: (x1^2 x2 + x1 x2^2) / 2
    """
    __test__ = False

    tag: FunctionTag
    d: int = 2
    x_star: Optional[Tuple[float, ...]] = None
    a1: float = 1.0
    a0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "tag", FunctionTag(self.tag))
        if self.d < 1:
            raise InvalidParameterError(f"d must be at least 1, got {self.d}")
        if self.tag is not FunctionTag.ADDITIVE_LINEAR and self.tag is not FunctionTag.ONE_JUMP and self.d != 2:
            raise InvalidParameterError(f"{self.tag.value} is defined on [0, 1]^2 only")
        if self.tag is FunctionTag.ONE_JUMP:
            if self.x_star is None:
                raise InvalidParameterError("one_jump needs x_star")
            x_star = tuple(float(v) for v in self.x_star)
            if len(x_star) != self.d:
                raise DimensionMismatchError(f"x_star has {len(x_star)} coordinates, expected {self.d}")
            if any(v < 0.0 or v > 1.0 for v in x_star):
                raise InvalidParameterError("x_star must lie in [0, 1]^d")
            object.__setattr__(self, "x_star", x_star)

    @classmethod
    def from_name(cls, name: str, **params) -> "TestFunction":
        """Build from a tag name plus optional parameters (d, x_star, a1, a0)"""
        try:
            tag = FunctionTag(name)
        except ValueError:
            known = ", ".join(t.value for t in FunctionTag)
            raise InvalidParameterError(f"unknown test function '{name}' (known: {known})")
        if "x_star" in params and params["x_star"] is not None:
            params["x_star"] = tuple(params["x_star"])
            params.setdefault("d", len(params["x_star"]))
        return cls(tag, **params)

    @property
    def name(self) -> str:
        return self.tag.value

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        points = x.reshape(1, -1) if single else x
        if points.ndim != 2 or points.shape[1] != self.d:
            raise DimensionMismatchError(f"points of shape {x.shape} for {self.name} on [0, 1]^{self.d}")
        x1 = points[:, 0]
        x2 = points[:, 1] if self.d > 1 else None

        if self.tag is FunctionTag.ADDITIVE_LINEAR:
            values = points.sum(axis=1)
        elif self.tag is FunctionTag.TWO_STEP:
            values = (x1 >= 0.5).astype(float) + (x2 >= 0.5).astype(float)
        elif self.tag is FunctionTag.NEG_CORNER:
            values = -((x1 >= 0.5) & (x2 >= 0.5)).astype(float)
        elif self.tag is FunctionTag.CHECKERED:
            values = CHECKERED_BLOCKS[_blocks(x1), _blocks(x2)]
        elif self.tag is FunctionTag.ONE_JUMP:
            values = self.a0 + self.a1 * (points >= np.asarray(self.x_star)).all(axis=1)
        else:
            values = 0.5 * (x1 ** 2 * x2 + x1 * x2 ** 2)
        return float(values[0]) if single else values.astype(float)

    def v_star(self) -> float:
        """HK0 variation of f*"""
        if self.tag is FunctionTag.ADDITIVE_LINEAR:
            return float(self.d)
        if self.tag is FunctionTag.CURRENT_STATUS_CDF:
            # entirely monotone, so the variation is F(1, 1) - F(0, 0)
            return 1.0
        return float(np.abs(self.anchored_form().coefficients[1:]).sum())

    def anchored_form(self) -> RectPiecewiseFn:
        """f* written as sum_j beta_j 1{z_j <= x} (rectangular piecewise constant tags only)"""
        if self.tag is FunctionTag.TWO_STEP:
            return RectPiecewiseFn([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]], [0.0, 1.0, 1.0])
        if self.tag is FunctionTag.NEG_CORNER:
            return RectPiecewiseFn([[0.0, 0.0], [0.5, 0.5]], [0.0, -1.0])
        if self.tag is FunctionTag.CHECKERED:
            diff = difference_array(CHECKERED_BLOCKS)
            cuts = np.array([0.0, THIRD, TWO_THIRDS])
            keep = diff != 0.0
            keep[0, 0] = True
            i1, i2 = np.nonzero(keep)
            anchors = np.column_stack([cuts[i1], cuts[i2]])
            return RectPiecewiseFn(anchors, diff[keep])
        if self.tag is FunctionTag.ONE_JUMP:
            if all(v == 0.0 for v in self.x_star):
                return RectPiecewiseFn(np.zeros((1, self.d)), [self.a0 + self.a1])
            return RectPiecewiseFn([[0.0] * self.d, list(self.x_star)], [self.a0, self.a1])
        raise InvalidParameterError(f"{self.name} is not rectangular piecewise constant")

    def min_size_fraction(self, grid: LatticeGrid) -> float:
        """min(|lattice in [x*, 1]|, |lattice in [0, x*)|) / n for one_jump"""
        if self.tag is not FunctionTag.ONE_JUMP:
            raise InvalidParameterError("the minimum size condition applies to one_jump functions")
        if grid.d != self.d:
            raise DimensionMismatchError(f"{grid.d}-dimensional grid for a {self.d}-dimensional function")
        points = lattice_points(grid)
        x_star = np.asarray(self.x_star)
        upper = int((points >= x_star).all(axis=1).sum())
        lower = int((points < x_star).all(axis=1).sum())
        return min(upper, lower) / grid.n

    def in_one_jump_class(self, grid: LatticeGrid, c: float) -> bool:
        """Whether f* satisfies the minimum size condition with constant 0 < c <= 1/2"""
        if not 0.0 < c <= 0.5:
            raise InvalidParameterError(f"c must lie in (0, 1/2], got {c}")
        return self.min_size_fraction(grid) >= c


def generate_observations(f, xs, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """y_i = f(x_i) + sigma * xi_i with xi_i iid standard Gaussian from rng"""
    if sigma < 0 or math.isnan(sigma):
        raise InvalidParameterError(f"sigma must be nonnegative, got {sigma}")
    truth = np.asarray(f(np.asarray(xs, dtype=float)), dtype=float)
    return truth + sigma * rng.standard_normal(truth.size)


class VPolicy(Enum):
    ORACLE = "oracle"
    MULTIPLE = "multiple"
    EXPLICIT = "explicit"


@dataclass
class ExperimentSpec:
    """
    A risk experiment on a sequence of lattices

    Attributes:
        function: f*
        grids: lattices, one risk estimate each
        sigma: noise level
        trials: fits per grid
        v_policy: oracle (V = V*), multiple (V = v_value * V*) or explicit (V = v_value)
        v_value: multiplier or explicit bound
        seed: 64-bit experiment seed
        estimator: hk, em or em-capped
        solver: solver settings for every fit
    """
    function: TestFunction
    grids: List[LatticeGrid]
    sigma: float
    trials: int
    v_policy: VPolicy = VPolicy.ORACLE
    v_value: float = 1.0
    seed: int = 0
    estimator: EstimatorKind = EstimatorKind.HK
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        self.v_policy = VPolicy(self.v_policy)
        self.estimator = EstimatorKind(self.estimator)
        self.grids = [g if isinstance(g, LatticeGrid) else LatticeGrid(tuple(g)) for g in self.grids]
        if not self.grids:
            raise InvalidParameterError("an experiment needs at least one grid")
        if self.trials < 1:
            raise InvalidParameterError(f"trials must be at least 1, got {self.trials}")
        if self.sigma < 0:
            raise InvalidParameterError(f"sigma must be nonnegative, got {self.sigma}")
        if not 0 <= int(self.seed) <= MASK64:
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        for grid in self.grids:
            if grid.d != self.function.d:
                raise DimensionMismatchError(f"grid {grid.dims} for a {self.function.d}-dimensional function")

    @classmethod
    def from_preset(cls, preset: Dict[str, Any], solver: Optional[SolverConfig] = None,
                    seed: Optional[int] = None) -> "ExperimentSpec":
        """Build from a 'risk' preset of hkfit_config.yaml"""
        function = TestFunction.from_name(preset["function"], **preset.get("function_params", {}))
        return cls(
            function=function,
            grids=[LatticeGrid(tuple(g)) for g in preset["grids"]],
            sigma=float(preset.get("sigma", 1.0)),
            trials=int(preset.get("trials", 1)),
            v_policy=preset.get("v_policy", "oracle"),
            v_value=float(preset.get("v_value", 1.0)),
            seed=int(seed if seed is not None else preset.get("seed", 0)),
            estimator=preset.get("estimator", "hk"),
            solver=solver or SolverConfig(),
        )

    def resolve_V(self) -> Optional[float]:
        if self.estimator is EstimatorKind.EM:
            return None
        if self.v_policy is VPolicy.EXPLICIT:
            return float(self.v_value)
        v_star = self.function.v_star()
        if self.v_policy is VPolicy.MULTIPLE:
            return float(self.v_value) * v_star
        return v_star


@dataclass
class GridRisk:
    """Risk estimate on one lattice"""
    dims: Tuple[int, ...]
    n: int
    r_n: float
    stderr: float
    trials_used: int
    excluded: int

    def to_dict(self) -> Dict[str, Any]:
        row = {"n": self.n, "r_n": self.r_n, "stderr": self.stderr}
        row.update({f"n{j + 1}": n_j for j, n_j in enumerate(self.dims)})
        row.update({"trials_used": self.trials_used, "excluded": self.excluded})
        return row


@dataclass
class RiskReport:
    """
    Per-grid risks and OLS slopes of log r_n on log n, log(n / log n) and
    log(n / (log n)^2)

    status is 'ok', 'single_grid' (fewer than two grids with positive risk)
    or 'zero_risk' (every risk is zero)
    """
    grids: List[GridRisk]
    slopes: Dict[str, Optional[float]]
    status: str
    function: str
    estimator: str
    V: Optional[float]

    def slopes_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = dict(self.slopes)
        out["status"] = self.status
        return out


def fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Ordinary least squares slope of ys on xs"""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size != ys.size:
        raise DimensionMismatchError(f"{xs.size} regressor values for {ys.size} responses")
    if xs.size < 2 or np.unique(xs).size < 2:
        raise DegenerateRegressionError("slope regression needs at least two distinct regressor values")
    return float(stats.linregress(xs, ys).slope)


def slope_regressors(n: np.ndarray) -> Dict[str, np.ndarray]:
    log_n = np.log(np.asarray(n, dtype=float))
    return {
        "log_n": log_n,
        "log_n_over_log_n": log_n - np.log(log_n),
        "log_n_over_log2_n": log_n - 2.0 * np.log(log_n),
    }


def risk_slopes(grids: List[GridRisk]) -> Tuple[Dict[str, Optional[float]], str]:
    """Slopes over grids with positive finite risk and n >= 3"""
    usable = [g for g in grids if np.isfinite(g.r_n) and g.r_n > ZERO_RISK_TOL and g.n >= 3]
    empty = {key: None for key in SLOPE_REGRESSORS}
    if all(np.isfinite(g.r_n) and g.r_n <= ZERO_RISK_TOL for g in grids):
        return empty, "zero_risk"
    if len({g.n for g in usable}) < 2:
        return empty, "single_grid"
    n = np.array([g.n for g in usable])
    log_r = np.log([g.r_n for g in usable])
    slopes = {key: fit_slope(x, log_r) for key, x in slope_regressors(n).items()}
    return slopes, "ok"


def _run_trial(spec: ExperimentSpec, design: DesignMatrix, xs: np.ndarray, truth: np.ndarray,
               V: Optional[float], grid_index: int, trial: int) -> Tuple[float, bool]:
    rng = np.random.default_rng(trial_seed(spec.seed, grid_index, trial))
    y = generate_observations(spec.function, xs, spec.sigma, rng)
    model = fit(spec.estimator, xs, y, V=V, cfg=spec.solver, design=design)
    return empirical_loss(model, truth), model.converged


def run_risk_experiment(spec: ExperimentSpec, threads: int = 1) -> RiskReport:
    """
    Monte Carlo risk on each grid of spec, then the three log-log slopes

    Trials that do not converge are excluded from r_n and counted.
    """
    V = spec.resolve_V()
    logger.info(
        f"Risk experiment: f*={spec.function.name}, estimator={spec.estimator.value}, "
        f"V={V}, sigma={spec.sigma}, trials={spec.trials}, grids={[g.dims for g in spec.grids]}"
    )
    results = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        for grid_index, grid in enumerate(spec.grids):
            xs = lattice_points(grid)
            design = build_lattice(grid)
            truth = spec.function(xs)
            outcomes = list(executor.map(
                lambda t: _run_trial(spec, design, xs, truth, V, grid_index, t),
                range(spec.trials),
            ))
            losses = np.array([loss for loss, converged in outcomes if converged])
            excluded = spec.trials - losses.size
            if excluded:
                logger.warning(f"Grid {grid.dims}: excluded {excluded} of {spec.trials} non-converged trials")
            r_n = float(losses.mean()) if losses.size else float("nan")
            stderr = float(losses.std(ddof=1) / math.sqrt(losses.size)) if losses.size > 1 else 0.0
            results.append(GridRisk(grid.dims, grid.n, r_n, stderr, int(losses.size), int(excluded)))
            logger.info(f"Grid {grid.dims}: n={grid.n}, r_n={r_n:.6g}, stderr={stderr:.3g}")

    slopes, status = risk_slopes(results)
    if status == "ok":
        logger.info(f"Slopes: {slopes}")
    else:
        logger.warning(f"Slopes not computable: {status}")
    return RiskReport(
        grids=results,
        slopes=slopes,
        status=status,
        function=spec.function.name,
        estimator=spec.estimator.value,
        V=V,
    )


@dataclass
class CurrentStatusResult:
    """Fit and errors of one bivariate current status run"""
    model: FittedModel
    n: int
    clamp: bool
    mse_full: float
    mse_interior: float
    entirely_monotone: bool

    def summary(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "clamp": self.clamp,
            "mse_full": self.mse_full,
            "mse_interior": self.mse_interior,
            "entirely_monotone": self.entirely_monotone,
            "converged": self.model.converged,
        }


def current_status_eval_grid() -> Tuple[np.ndarray, np.ndarray]:
    """21 x 21 evaluation points on [0, 1]^2 and the mask of those inside [0.2, 0.8]^2"""
    ticks = np.linspace(0.0, 1.0, CURRENT_STATUS_EVAL_POINTS)
    mesh = np.meshgrid(ticks, ticks, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    lo, hi = CURRENT_STATUS_INTERIOR
    # rounding keeps 0.2 and 0.8 inside
    rounded = np.round(points, 12)
    interior = ((rounded >= lo) & (rounded <= hi)).all(axis=1)
    return points, interior


def run_current_status(n: int, rng: np.random.Generator, clamp: bool = False,
                       cfg: Optional[SolverConfig] = None, strategy: str = "auto") -> CurrentStatusResult:
    """
    Bivariate current status: x_i uniform on [0, 1]^2, y_i ~ Bernoulli(F_0(x_i)),
    F_0(x) = (x1^2 x2 + x1 x2^2) / 2, fitted with fit_em
    """
    if n < 1:
        raise InvalidParameterError(f"n must be at least 1, got {n}")
    cdf = TestFunction(FunctionTag.CURRENT_STATUS_CDF)
    xs = rng.uniform(size=(n, 2))
    y = rng.binomial(1, cdf(xs)).astype(float)
    model = fit_em(xs, y, cfg, strategy)

    points, interior = current_status_eval_grid()
    errors = (predict(model, points, clamp=clamp) - cdf(points)) ** 2
    result = CurrentStatusResult(
        model=model,
        n=n,
        clamp=clamp,
        mse_full=float(errors.mean()),
        mse_interior=float(errors[interior].mean()),
        entirely_monotone=fn_is_entirely_monotone(model.fn),
    )
    logger.info(f"Current status n={n}: mse_full={result.mse_full:.5f}, mse_interior={result.mse_interior:.5f}")
    return result


@dataclass
class FigureResult:
    """Design, truth, observations and every fit of one figure preset"""
    points: np.ndarray
    truth: np.ndarray
    y: np.ndarray
    fits: Dict[str, FittedModel]
    losses: Dict[str, float]


def run_figure(preset: Dict[str, Any], seed: Optional[int] = None,
               cfg: Optional[SolverConfig] = None) -> FigureResult:
    """
    One figure preset: a lattice ('grid') or uniform random ('random_design')
    design, one noisy sample, and an EM fit or HK fits at V = m * V* for each
    m in 'v_multiples'
    """
    seed = int(seed if seed is not None else preset.get("seed", 0))
    rng = np.random.default_rng(trial_seed(seed, 0, 0))
    function = TestFunction.from_name(preset["function"], **preset.get("function_params", {}))
    if "random_design" in preset:
        points = rng.uniform(size=(int(preset["random_design"]), function.d))
    else:
        points = lattice_points(LatticeGrid(tuple(preset["grid"])))
    truth = function(points)
    y = generate_observations(function, points, float(preset.get("sigma", 1.0)), rng)
    design = build_design(points, strategy=preset.get("strategy", "auto"))

    kind = EstimatorKind(preset.get("estimator", "em"))
    fits: Dict[str, FittedModel] = {}
    if kind is EstimatorKind.EM:
        fits["em"] = fit(kind, points, y, cfg=cfg, design=design)
    else:
        v_star = function.v_star()
        for multiple in preset.get("v_multiples", [1.0]):
            label = f"{kind.value}_{float(multiple):g}vstar"
            fits[label] = fit(kind, points, y, V=float(multiple) * v_star, cfg=cfg, design=design)
    losses = {label: empirical_loss(model, truth) for label, model in fits.items()}
    for label, loss in losses.items():
        logger.info(f"{preset['function']} {label}: loss={loss:.5f}")
    return FigureResult(points=points, truth=truth, y=y, fits=fits, losses=losses)
