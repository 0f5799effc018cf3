"""
Constrained least squares solvers for hkfit
-------------------------------------------
Accelerated projected gradient (FISTA with restart-on-increase) for

    minimize ||y - A beta||^2

over one of three sets, each leaving the intercept beta_1 free:

1. NonnegativeCone:  beta_j >= 0 for j >= 2                  (EM fit)
2. L1Ball(V):        sum_{j>=2} |beta_j| <= V                (HK fit)
3. CappedSimplex(V): beta_j >= 0 and sum_{j>=2} beta_j <= V  (capped EM fit)

Only A @ v and A.T @ r are needed, so the implicit lattice operator keeps
each iteration O(n).

The KKT residual is measured on the raw gradient g = A.T (A beta - y), so
kkt_tol is an absolute bound on the gradient entries.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from hkfit.errors import DimensionMismatchError, InvalidParameterError, NonFiniteDataError

logger = logging.getLogger(__name__)

LIPSCHITZ_SAFETY = 1.05
OBJECTIVE_WINDOW = 10
# Objective increases below INCREASE_RTOL * f + ROUNDING_FLOOR * ||y||^2 are rounding noise
INCREASE_RTOL = 1e-12
ROUNDING_FLOOR = 1e-28
PROGRESS_EVERY = 1000


@dataclass
class SolverConfig:
    """Stopping rules and step-size estimation for solve_constrained_ls"""
    max_iter: int = 50000
    rel_tol: float = 1e-10
    kkt_tol: float = 1e-6
    lipschitz_power_iters: int = 50
    restart: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidParameterError(f"max_iter must be at least 1, got {self.max_iter}")
        if self.rel_tol <= 0 or self.kkt_tol <= 0:
            raise InvalidParameterError("solver tolerances must be positive")
        if self.lipschitz_power_iters < 1:
            raise InvalidParameterError("lipschitz_power_iters must be at least 1")


@dataclass
class SolveResult:
    """Outcome of a constrained least squares solve"""
    beta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    restarts: int = 0

    def summary(self) -> dict:
        return {
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "kkt_residual": float(self.kkt_residual),
        }


def _check_radius(V: float) -> float:
    V = float(V)
    if math.isnan(V) or V < 0:
        raise InvalidParameterError(f"constraint radius V must be nonnegative, got {V}")
    return V


def _simplex_threshold(v: np.ndarray, radius: float) -> float:
    """Pivot tau with sum(max(v - tau, 0)) = radius, for v >= 0 and sum(v) > radius"""
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - radius
    ind = np.arange(1, u.size + 1)
    rho = np.nonzero(u - cssv / ind > 0)[0][-1]
    return cssv[rho] / (rho + 1.0)


def project_nonneg_except_first(beta: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {beta_j >= 0, j >= 2}"""
    out = np.array(beta, dtype=float)
    out[1:] = np.maximum(out[1:], 0.0)
    return out


def project_l1_ball_except_first(beta: np.ndarray, V: float) -> np.ndarray:
    """Euclidean projection onto {sum_{j>=2} |beta_j| <= V} by sort-based soft thresholding"""
    V = _check_radius(V)
    out = np.array(beta, dtype=float)
    tail = out[1:]
    if np.abs(tail).sum() <= V:
        return out
    if V == 0.0:
        out[1:] = 0.0
        return out
    tau = _simplex_threshold(np.abs(tail), V)
    out[1:] = np.sign(tail) * np.maximum(np.abs(tail) - tau, 0.0)
    return out


def project_capped_simplex_except_first(beta: np.ndarray, V: float) -> np.ndarray:
    """Euclidean projection onto {beta_j >= 0, sum_{j>=2} beta_j <= V}"""
    V = _check_radius(V)
    out = np.array(beta, dtype=float)
    clamped = np.maximum(out[1:], 0.0)
    if clamped.sum() <= V:
        out[1:] = clamped
        return out
    if V == 0.0:
        out[1:] = 0.0
        return out
    tau = _simplex_threshold(clamped, V)
    out[1:] = np.maximum(clamped - tau, 0.0)
    return out


class NonnegativeCone:
    """beta_j >= 0 for j >= 2"""
    name = "nonneg_cone"

    def project(self, beta: np.ndarray) -> np.ndarray:
        return project_nonneg_except_first(beta)

    def kkt_residual(self, beta: np.ndarray, g: np.ndarray, tol: float) -> float:
        if beta.size == 1:
            return float(abs(g[0]))
        tail_b, tail_g = beta[1:], g[1:]
        return float(max(
            abs(g[0]),
            np.max(np.maximum(-tail_g, 0.0)),
            np.max(np.abs(tail_g * tail_b) / (1.0 + np.abs(tail_b))),
        ))


class L1Ball:
    """sum_{j>=2} |beta_j| <= V"""
    name = "l1_ball"

    def __init__(self, V: float):
        self.V = _check_radius(V)

    def project(self, beta: np.ndarray) -> np.ndarray:
        return project_l1_ball_except_first(beta, self.V)

    def kkt_residual(self, beta: np.ndarray, g: np.ndarray, tol: float) -> float:
        if beta.size == 1:
            return float(abs(g[0]))
        tail_b, tail_g = beta[1:], g[1:]
        residual = abs(g[0])
        if np.abs(tail_b).sum() < self.V - tol:
            return float(max(residual, np.max(np.abs(tail_g))))
        lam = np.max(np.abs(tail_g))
        active = tail_b != 0
        if np.any(active):
            residual = max(residual, np.max(np.abs(tail_g[active] + lam * np.sign(tail_b[active]))))
        return float(residual)


class CappedSimplex:
    """beta_j >= 0 and sum_{j>=2} beta_j <= V"""
    name = "capped_simplex"

    def __init__(self, V: float):
        self.V = _check_radius(V)

    def project(self, beta: np.ndarray) -> np.ndarray:
        return project_capped_simplex_except_first(beta, self.V)

    def kkt_residual(self, beta: np.ndarray, g: np.ndarray, tol: float) -> float:
        if beta.size == 1:
            return float(abs(g[0]))
        tail_b, tail_g = beta[1:], g[1:]
        if tail_b.sum() < self.V - tol:
            lam = 0.0
        else:
            lam = max(0.0, -float(np.min(tail_g)))
        shifted = tail_g + lam
        return float(max(
            abs(g[0]),
            np.max(np.maximum(-shifted, 0.0)),
            np.max(np.abs(shifted * tail_b) / (1.0 + np.abs(tail_b))),
        ))


def as_operator(A) -> LinearOperator:
    """Wrap a DesignMatrix, ndarray or LinearOperator as a scipy LinearOperator"""
    if hasattr(A, "as_operator"):
        return A.as_operator()
    return aslinearoperator(A)


def estimate_lipschitz(A, iters: int = 50) -> float:
    """Power-iteration estimate of lambda_max(A.T A), inflated by 5%"""
    if iters < 1:
        raise InvalidParameterError(f"iters must be at least 1, got {iters}")
    op = as_operator(A)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(op.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op.rmatvec(op.matvec(v))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        lam = norm
        v = w / norm
    return LIPSCHITZ_SAFETY * lam


def solve_constrained_ls(A, y: np.ndarray, projector, cfg: Optional[SolverConfig] = None,
                         beta0: Optional[np.ndarray] = None) -> SolveResult:
    """
    Minimize ||y - A beta||^2 over the projector's constraint set

    Args:
        A: DesignMatrix, dense array or scipy LinearOperator of shape (n, p)
        y: observations, length n
        projector: NonnegativeCone, L1Ball or CappedSimplex
        cfg: stopping rules; defaults to SolverConfig()
        beta0: starting point (projected first); defaults to beta_1 = mean(y), rest 0

    Returns:
        SolveResult; converged is False when max_iter ran out
    """
    cfg = cfg or SolverConfig()
    op = as_operator(A)
    n, p = op.shape
    y = np.asarray(y, dtype=float).ravel()
    if y.size != n:
        raise DimensionMismatchError(f"y has length {y.size} but A has {n} rows")
    if not np.all(np.isfinite(y)):
        raise NonFiniteDataError("observations contain NaN or infinite values")

    if beta0 is None:
        beta0 = np.zeros(p)
        beta0[0] = y.mean()
    beta0 = np.asarray(beta0, dtype=float).ravel()
    if beta0.size != p:
        raise DimensionMismatchError(f"beta0 has length {beta0.size}, expected {p}")
    if not np.all(np.isfinite(beta0)):
        raise NonFiniteDataError("starting point contains NaN or infinite values")

    x = projector.project(beta0)
    Ax = op.matvec(x)
    f_x = float(np.sum((y - Ax) ** 2))

    lipschitz = estimate_lipschitz(op, cfg.lipschitz_power_iters)
    if lipschitz == 0.0:
        logger.info("Zero operator: every feasible point is optimal")
        return SolveResult(beta=x, objective=f_x, iterations=0, converged=True, kkt_residual=0.0)

    y_sq = float(np.dot(y, y))

    def kkt(beta, A_beta):
        g = op.rmatvec(A_beta - y)
        return projector.kkt_residual(beta, g, cfg.kkt_tol)

    # gradient of ||y - A b||^2 is 2 A.T (A b - y), Lipschitz constant 2 * lipschitz
    step = 1.0 / (2.0 * lipschitz)
    z, Az = x, Ax
    t = 1.0
    plain_step = True
    restarts = 0
    history = deque([f_x], maxlen=OBJECTIVE_WINDOW + 1)
    kkt_res = float("inf")
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iter + 1):
        noise = INCREASE_RTOL * f_x + ROUNDING_FLOOR * y_sq
        grad = 2.0 * op.rmatvec(Az - y)
        x_new = projector.project(z - step * grad)
        Ax_new = op.matvec(x_new)
        f_new = float(np.sum((y - Ax_new) ** 2))

        if cfg.restart and f_new - f_x > noise:
            if plain_step:
                # the Lipschitz estimate was too small
                step /= 2.0
                logger.warning(f"Objective increased on a plain gradient step; halving step to {step:.3e}")
            restarts += 1
            z, Az, t = x, Ax, 1.0
            plain_step = True
            continue

        t_new = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
        momentum = (t - 1.0) / t_new
        z = x_new + momentum * (x_new - x)
        Az = Ax_new + momentum * (Ax_new - Ax)
        plain_step = momentum == 0.0
        x, Ax, f_x, t = x_new, Ax_new, f_new, t_new
        history.append(f_x)

        if iteration % PROGRESS_EVERY == 0:
            logger.debug(f"iter {iteration}: objective={f_x:.12g} step={step:.3e} restarts={restarts}")

        if len(history) == history.maxlen and history[0] - f_x <= cfg.rel_tol * history[0]:
            kkt_res = kkt(x, Ax)
            if kkt_res <= cfg.kkt_tol:
                converged = True
                break

    if not converged:
        kkt_res = kkt(x, Ax)
        logger.warning(
            f"{projector.name} solve did not converge in {cfg.max_iter} iterations "
            f"(objective={f_x:.6g}, kkt={kkt_res:.3e})"
        )
    else:
        logger.info(f"{projector.name} solve converged in {iteration} iterations (objective={f_x:.6g})")

    return SolveResult(
        beta=x,
        objective=f_x,
        iterations=iteration,
        converged=converged,
        kkt_residual=kkt_res,
        restarts=restarts,
    )
