"""Independent verification layer: the variational bracket at its
minimizers, the no-zeros condition on h, and a numeric-versus-series
cross-validation harness.

The slope field L that drives the leg integrator is one elimination away
from the variational characterization of the value: along a true
solution the bracket

    (1/2) Sigma^2 x / g' - alpha_q(Sigma, theta) x - beta(theta) g + sgn(p)

vanishes at its pointwise minimizers (Sigma-hat, theta-hat), which are
closed-form in (x, g, g').  Evaluating the bracket on a solved strip is
therefore an end-to-end check on the transcription of L that shares no
code with the solver.  Sigma-hat carries a g' factor, so the quadratic
term is implemented in the cancelled form sigma^2 (qg-x)^2 g' x / h^2,
which stays finite where g' vanishes and extends the check to the
endpoints.

Cross-validation closes the loop between the package's two halves: for a
grid of costs it differences the numeric boundaries, wedge slopes, and
value against the series truncations at every order, and a log-log fit
of difference against cost measures the decay rate each truncation
claims.  The harness prices the endowment (1 - pi, pi, 1), whose risky
proportion sits exactly on the Merton line and hence strictly inside the
wedge at every positive cost.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (DegenerateFit, HZero, MertonWedgeError, SignChange)
from .expansion import ExpansionBundle, build_bundle, compute_value_series
from .freeboundary import (Endowment, FreeBoundarySolution, deflator_f,
                           solve_free_boundary, value_u, wedge_slopes)
from .model import MarketParams
from .odeint import eval_leg
from .powerseries import uni_compose

QUANTITIES = ("x_lo", "x_hi", "pi_lo", "pi_hi", "u")

# half-decade default grid; slope fits use the lowest six points so the
# differences stay inside the asymptotic regime
DEFAULT_LAMBDA_GRID = tuple(10.0 ** (-6.0 + 0.5 * k) for k in range(9))
_SLOPE_POINTS = 6
_HJB_POINTS = 50
_H_POINTS = 200


@dataclass(frozen=True)
class ValidationRow:
    """One cost's numerics, per-order predictions, and diagnostics.

    ``predictions[q][j-1]`` is the order-j truncation of quantity ``q``
    and ``differences`` the matching absolute gaps; a row whose solve
    failed carries the error marker instead, with the numeric fields
    NaN.
    """

    lam: float
    x_lo: float
    x_hi: float
    pi_lo: float
    pi_hi: float
    u: float
    predictions: dict
    differences: dict
    hjb_max_residual: float
    h_min_abs: float
    h_sign: float
    f_err_lo: float
    f_err_hi: float
    error: str | None = None


@dataclass(frozen=True)
class ValidationReport:
    """Rows in increasing cost order, one per grid point."""

    params: MarketParams
    order: int
    rows: tuple


def hjb_residual(sol: FreeBoundarySolution, x: float) -> float:
    """The variational bracket at its minimizers, at one position.

    Zero along a true solution; the size of the violation measures how
    far the integrated g is from satisfying the dynamic programming
    equation, independently of how it was produced.

    Raises
    ------
    HZero
        If h vanishes at x, which leaves the minimizers undefined.
    """
    params = sol.params
    quant = params.quantities()
    q, sgn = quant.q, quant.sgn_p
    mu, sigma, delta, p = params.mu, params.sigma, params.delta, params.p
    pt = eval_leg(sol.leg, x)
    g, gp = pt.g, pt.gprime
    h = q * g * (gp + 1.0) - (q + 1.0) * x * gp
    if h == 0.0:
        raise HZero(f"h vanishes at x = {x}; minimizers undefined")
    theta = -sigma * (1.0 - p) * x * (q * gp - 1.0) / h
    big_sigma = -sigma * (q * g - x) * gp / h
    alpha_q = (theta * sigma - mu
               - big_sigma * (0.5 * big_sigma + sigma - theta * (1.0 + q)))
    beta_th = (1.0 + q) * (delta - 0.5 * q * theta * theta)
    quad = 0.5 * sigma ** 2 * (q * g - x) ** 2 * gp * x / h ** 2
    return quad - alpha_q * x - beta_th * g + sgn


def h_profile(sol: FreeBoundarySolution) -> tuple:
    """Minimum magnitude and common sign of h across the strip.

    Raises
    ------
    SignChange
        If h changes sign or vanishes on the evaluation grid; the
        minimizer formulas are meaningless past such a point, so
        validation must not continue silently.
    """
    quant = sol.params.quantities()
    q = quant.q
    xs = np.linspace(sol.x_lo, sol.x_hi, _H_POINTS)
    vals = np.empty(xs.size)
    for i, x in enumerate(xs):
        pt = eval_leg(sol.leg, x)
        vals[i] = q * pt.g * (pt.gprime + 1.0) - (q + 1.0) * x * pt.gprime
    if np.any(vals == 0.0) or vals.min() < 0.0 < vals.max():
        k = int(np.argmin(np.abs(vals)))
        raise SignChange(
            f"h changes sign on [{sol.x_lo}, {sol.x_hi}]: "
            f"h({xs[k]}) = {vals[k]}")
    return float(np.min(np.abs(vals))), float(np.sign(vals[0]))


def _prediction_series(bundle: ExpansionBundle, endow: Endowment, n: int):
    """Series in w = lam^(1/3) for each cross-validated quantity."""
    upper = uni_compose(bundle.beta_series, bundle.alpha_series)
    zeta = compute_value_series(bundle, endow, n).zeta
    return {
        "x_lo": bundle.alpha_series,
        "x_hi": upper,
        "pi_lo": bundle.wedge_lo,
        "pi_hi": bundle.wedge_hi,
        "u": zeta,
    }


def _truncations(series, w: float, n: int) -> list:
    out = []
    for j in range(1, n + 1):
        out.append(series.truncated(min(j, series.order)).eval(w))
    return out


def cross_validate(params: MarketParams, lambda_grid=None,
                   n: int = 3) -> ValidationReport:
    """Numeric solve versus series truncations over a cost grid.

    One row per cost, in increasing order; a row whose numeric solve
    fails carries the error marker and NaN numerics while the remaining
    rows still validate.  Invariant violations on a solved strip
    (h changing sign, h vanishing at a probe) abort the whole run: they
    mean the solution itself is suspect, not just one grid point.
    """
    grid = DEFAULT_LAMBDA_GRID if lambda_grid is None else lambda_grid
    lams = sorted(float(v) for v in grid)
    bundle = build_bundle(params, n)
    quant = params.quantities()
    endow = Endowment(eta_B=1.0 - quant.pi, eta_S=quant.pi, S0=1.0)
    series = _prediction_series(bundle, endow, n)

    rows = []
    for lam in lams:
        w = lam ** (1.0 / 3.0)
        preds = {name: _truncations(s, w, n) for name, s in series.items()}
        hint = series["x_lo"].eval(w)
        try:
            sol = solve_free_boundary(
                replace(params, lam=lam),
                alpha_hint=hint if 0.0 < hint < quant.x_N else None)
            slopes = wedge_slopes(sol)
            numeric = {
                "x_lo": sol.x_lo,
                "x_hi": sol.x_hi,
                "pi_lo": slopes.pi_lo,
                "pi_hi": slopes.pi_hi,
                "u": value_u(sol, endow),
            }
        except (HZero, SignChange):
            raise
        except MertonWedgeError as exc:
            nan = float("nan")
            rows.append(ValidationRow(
                lam=lam, x_lo=nan, x_hi=nan, pi_lo=nan, pi_hi=nan, u=nan,
                predictions=preds,
                differences={name: [nan] * n for name in QUANTITIES},
                hjb_max_residual=nan, h_min_abs=nan, h_sign=nan,
                f_err_lo=nan, f_err_hi=nan,
                error=f"{type(exc).__name__}: {exc}"))
            continue

        diffs = {name: [abs(v - numeric[name]) for v in preds[name]]
                 for name in QUANTITIES}
        interior = np.linspace(sol.x_lo, sol.x_hi, _HJB_POINTS + 2)[1:-1]
        hjb = max(abs(hjb_residual(sol, float(x))) for x in interior)
        h_min, h_sign = h_profile(sol)
        rows.append(ValidationRow(
            lam=lam, x_lo=sol.x_lo, x_hi=sol.x_hi,
            pi_lo=slopes.pi_lo, pi_hi=slopes.pi_hi, u=numeric["u"],
            predictions=preds, differences=diffs,
            hjb_max_residual=hjb, h_min_abs=h_min, h_sign=h_sign,
            f_err_lo=abs(deflator_f(sol, sol.x_lo)),
            f_err_hi=abs(deflator_f(sol, sol.x_hi)
                         - np.log1p(-sol.params.lam))))
    return ValidationReport(params=params, order=n, rows=tuple(rows))


def convergence_slope(report: ValidationReport, quantity: str,
                      truncation: int) -> float:
    """Least-squares decay rate of one truncation's error in the cost.

    Fits log
    |difference| against log lam on the smallest grid points; the fit
    window is capped so larger costs cannot drag the slope out of the
    asymptotic regime.

    Raises
    ------
    DegenerateFit
        If fewer than three usable points remain once failed rows and
        differences at the floating-point floor are dropped.
    """
    if quantity not in QUANTITIES:
        raise KeyError(f"unknown quantity {quantity!r}")
    if not 1 <= truncation <= report.order:
        raise IndexError(
            f"truncation {truncation} outside 1..{report.order}")
    pts = []
    for row in report.rows:
        if row.error is not None:
            continue
        diff = row.differences[quantity][truncation - 1]
        floor = 1e3 * np.finfo(float).eps * max(
            1.0, abs(getattr(row, quantity)))
        if diff > floor:
            pts.append((row.lam, diff))
        if len(pts) == _SLOPE_POINTS:
            break
    if len(pts) < 3:
        raise DegenerateFit(
            f"{quantity} at truncation {truncation}: "
            f"{len(pts)} usable points; differences sit at the "
            f"floating-point floor")
    arr = np.log(np.array(pts))
    return float(np.polyfit(arr[:, 0], arr[:, 1], 1)[0])
