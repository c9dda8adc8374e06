"""Two independent solvers for the transaction-cost Merton problem.

A direct free-boundary ODE solver (shooting) and a fractional
power-series engine that expands the no-trade region and the value
function in powers of the cost to the one-third.  Each is a check on the
other; the verification layer ties them together.
"""

from .errors import MertonWedgeError
from .expansion import (
    ExpansionBundle,
    ValueSeries,
    build_bundle,
    compute_beta_series,
    compute_c_F_alpha,
    compute_g_series,
    compute_value_series,
    compute_wedge_series,
    reconstruction_defect,
    reversion_defect,
)
from .freeboundary import (
    Endowment,
    FreeBoundarySolution,
    WedgeSlopes,
    check_solvency,
    deflator_f,
    locate_xhat,
    solve_free_boundary,
    value_u,
    wedge_slopes,
)
from .hjbcheck import (
    ValidationReport,
    ValidationRow,
    convergence_slope,
    cross_validate,
    h_profile,
    hjb_residual,
)
from .model import (
    LAMBDA_CEILING,
    MarketParams,
    MertonQuantities,
    eval_L,
    eval_T,
    validate_params,
)
from .odeint import LegPoint, LegSolution, eval_leg, integrate_to_flat
from .powerseries import BivariateSeries, UnivariateSeries

__version__ = "0.1.0"

__all__ = [
    "BivariateSeries",
    "Endowment",
    "ExpansionBundle",
    "FreeBoundarySolution",
    "LAMBDA_CEILING",
    "LegPoint",
    "LegSolution",
    "MarketParams",
    "MertonQuantities",
    "MertonWedgeError",
    "UnivariateSeries",
    "ValidationReport",
    "ValidationRow",
    "ValueSeries",
    "WedgeSlopes",
    "build_bundle",
    "check_solvency",
    "compute_beta_series",
    "compute_c_F_alpha",
    "compute_g_series",
    "compute_value_series",
    "compute_wedge_series",
    "convergence_slope",
    "cross_validate",
    "deflator_f",
    "eval_L",
    "eval_T",
    "eval_leg",
    "h_profile",
    "hjb_residual",
    "integrate_to_flat",
    "locate_xhat",
    "reconstruction_defect",
    "reversion_defect",
    "solve_free_boundary",
    "validate_params",
    "value_u",
    "wedge_slopes",
    "__version__",
]
