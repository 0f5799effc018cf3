"""
hkfit: entirely monotone and Hardy-Krause variation constrained least squares
for multivariate regression on [0, 1]^d
"""

from hkfit.design import DesignMatrix, build_design, build_lattice
from hkfit.estimators import EstimatorKind, FittedModel, empirical_loss, fit, fit_em, fit_em_capped, fit_hk, predict
from hkfit.lattice_core import LatticeGrid, Tensor
from hkfit.solvers import SolveResult, SolverConfig, solve_constrained_ls
from hkfit.variation import RectPiecewiseFn, Rectangle

__version__ = "0.1.0"
