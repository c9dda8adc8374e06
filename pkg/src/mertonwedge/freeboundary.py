"""Shooting solver for the free boundary, and everything downstream of it:
wedge slopes, the deflator f, the starting position x-hat, and the value.

The free-boundary problem fixes a pair (x_lo, x_hi) and a function g by
three requirements: g solves g' = L(x, g) with g(x_lo) = T(x_lo), the
derivative vanishes at both ends, and the quadrature of g'/x over
[x_lo, x_hi] equals log(1/(1-lam)).  A leg integration (odeint module)
already delivers the first two for any candidate start alpha, so the
solver is a one-dimensional shoot on alpha against the quadrature
target.

The scan-and-refine strategy: candidates alpha_k = x_N (1 - 2^k eps0)
march geometrically away from the collapse point until the quadrature
reaches the target, which brackets the root; a safeguarded
secant/bisection then refines.  The quadrature vanishes as alpha
approaches x_N and grows as the strip widens, but no global monotonicity
is assumed: the refinement never leaves its bracket.  Starts whose legs
never flatten are classified by their initial bend (see
``_leg_quadrature``): too-short legs next to x_N count as below target,
which is what lets the scan start right there, while starts beyond the
window where legs rise at all count as above.  A cost too large for the
parameter set leaves the target unreachable; the refinement then lands
on the window's edge and the residual check turns that into an error
instead of an answer.

The bracket is driven to machine width rather than stopping at the
residual tolerance: downstream convergence studies difference the
numeric boundary against series truncations at costs as small as 1e-6,
where the boundary must be resolved to about 1e-12 relative for the
differences to carry signal.  The residual tolerance is still checked
and recorded on the solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (BadRange, BracketFailure, NoFlatPoint,
                     RootNotBracketed, StiffnessFailure)
from .model import MarketParams, eval_T, l_rational_coeffs
from .odeint import LegSolution, eval_leg, integrate_to_flat

#: Default tolerance on the quadrature residual.
DEFAULT_SHOOT_TOL = 1e-10

#: Initial scan offset: alpha_0 = x_N (1 - _SCAN_EPS0).
_SCAN_EPS0 = 1e-6


@dataclass(frozen=True)
class FreeBoundarySolution:
    """Solved free boundary; immutable after construction."""

    params: MarketParams
    x_lo: float
    x_hi: float
    leg: LegSolution
    integral_residual: float


@dataclass(frozen=True)
class WedgeSlopes:
    """Boundary slopes of the no-trade wedge in holdings space."""

    pi_lo: float
    pi_hi: float


@dataclass(frozen=True)
class Endowment:
    """Initial position: bond units, stock shares, and the stock price."""

    eta_B: float
    eta_S: float
    S0: float = 1.0


def check_solvency(endow: Endowment, lam: float) -> float:
    """Return the liquidation value; reject non-positive positions.

    Shares held long are valued at the quoted price, shares owed at the
    bid price (1 - lam) times quoted.
    """
    if endow.S0 <= 0:
        raise BadRange(f"stock price must be positive, got {endow.S0}")
    value = (endow.eta_B
             + max(endow.eta_S, 0.0) * endow.S0
             - max(-endow.eta_S, 0.0) * (1.0 - lam) * endow.S0)
    if value <= 0:
        raise BadRange(
            f"endowment ({endow.eta_B}, {endow.eta_S}) is insolvent")
    return value


def _initial_rise(alpha: float, params: MarketParams) -> bool:
    """Whether the leg from ``alpha`` starts by rising.

    The trajectory leaves (alpha, T(alpha)) with slope zero, so its
    initial bend is the sign of d/dx L along it, which on the numerator's
    zero curve reduces to P_x / Q.  A positive bend means the leg rises
    into a genuine candidate; a negative one means it sinks away
    immediately and no start this deep or deeper can work.
    """
    z = eval_T(alpha, params)
    p_rows, q_rows = l_rational_coeffs(params)
    polyval = np.polynomial.polynomial.polyval
    p_x = sum(polyval(alpha, np.polynomial.polynomial.polyder(row)) * z**j
              for j, row in enumerate(p_rows) if len(row) > 1)
    q = sum(polyval(alpha, row) * z**j for j, row in enumerate(q_rows))
    return p_x / q > 0.0


def _leg_quadrature(alpha: float, params: MarketParams, tol: float,
                    target: float):
    """Residual I(beta(alpha)) - target, with legless starts classified.

    A start whose leg never flattens carries no quadrature.  Which side
    of the target it stands in for depends on how the leg died: a leg
    that began by rising but stayed below the flat-point detector's
    threshold was merely too short (below target); one that sank from
    the outset, or rose decisively and then died against the slope
    field's singular locus without ever flattening, lies beyond the
    window of workable starts, on the same side as starts whose
    quadrature overshoots (above target).
    """
    try:
        leg = integrate_to_flat(alpha, params, tol=tol)
    except NoFlatPoint:
        if _initial_rise(alpha, params):
            return -target, None
        return target, None
    except StiffnessFailure:
        return target, None
    return leg.integral_I - target, leg


def solve_free_boundary(params: MarketParams,
                        tol: float = DEFAULT_SHOOT_TOL,
                        alpha_hint: float | None = None
                        ) -> FreeBoundarySolution:
    """Shoot on the left boundary until the quadrature meets its target.

    ``alpha_hint`` optionally seeds the bracket (typically from the
    series prediction of x_lo); the solver falls back to the geometric
    scan whenever the hint fails to bracket, and must work without it.

    Raises
    ------
    BadRange
        If the cost is zero (nothing to solve).
    BracketFailure
        If no start in (0, x_N) attains the target quadrature.
    """
    lam = params.lam
    if lam <= 0.0:
        raise BadRange("shooting requires a positive cost")
    quant = params.quantities()
    x_N = quant.x_N
    target = -math.log1p(-lam)
    leg_tol = min(tol, 1e-10) * 1e-2

    bracket = None
    if alpha_hint is not None and 0.0 < alpha_hint < x_N:
        gap = x_N - alpha_hint
        lo_cand = x_N - 1.5 * gap
        hi_cand = x_N - 0.6 * gap
        if lo_cand > 0.0:
            r_lo, leg_lo = _leg_quadrature(lo_cand, params, leg_tol, target)
            r_hi, leg_hi = _leg_quadrature(hi_cand, params, leg_tol, target)
            if r_lo >= 0.0 > r_hi:
                bracket = (lo_cand, r_lo, leg_lo, hi_cand, r_hi, leg_hi)

    if bracket is None:
        bracket = _scan_bracket(params, x_N, leg_tol, target)
    a, r_a, leg_a, b, r_b, leg_b = bracket

    # Safeguarded refinement: secant candidate accepted only strictly
    # inside the bracket and only when it moves at least a tenth of the
    # bracket width; bisection otherwise.  Runs to machine width.
    last_mid = None
    while (b - a) > 5e-16 * max(abs(a), abs(b)):
        mid = None
        if r_a != r_b:
            cand = a - r_a * (b - a) / (r_b - r_a)
            if a < cand < b:
                mid = cand
        if mid is None:
            mid = 0.5 * (a + b)
        elif last_mid is not None and abs(mid - last_mid) < 0.1 * (b - a):
            mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        last_mid = mid
        r_mid, leg_mid = _leg_quadrature(mid, params, leg_tol, target)
        if r_mid >= 0.0:
            a, r_a, leg_a = mid, r_mid, leg_mid
        else:
            b, r_b, leg_b = mid, r_mid, leg_mid

    if leg_a is not None and (leg_b is None or abs(r_a) <= abs(r_b)):
        alpha, residual, leg = a, r_a, leg_a
    else:
        alpha, residual, leg = b, r_b, leg_b
    if leg is None:
        raise BracketFailure(
            "refinement ended on a leg without a flat point")
    if abs(residual) > tol:
        # the refinement converged in alpha but not onto the target:
        # the quadrature tops out short of it for this cost
        raise BracketFailure(
            f"quadrature target {target} unreachable for this parameter "
            f"set (best residual {residual})")
    return FreeBoundarySolution(params=params, x_lo=alpha, x_hi=leg.beta,
                                leg=leg, integral_residual=residual)


def _scan_bracket(params, x_N, leg_tol, target):
    """Geometric scan alpha_k = x_N (1 - 2^k eps0) until target reached."""
    prev = None
    k = 0
    while True:
        offset = (2.0**k) * _SCAN_EPS0
        if offset >= 1.0:
            raise BracketFailure(
                f"no start in (0, x_N) reaches the quadrature target "
                f"{target} (cost too large for this parameter set)")
        alpha = x_N * (1.0 - offset)
        r, leg = _leg_quadrature(alpha, params, leg_tol, target)
        if r >= 0.0:
            if prev is None:
                # root closer to x_N than the first scan point
                lo = alpha
                hi = x_N * (1.0 - 0.5 * _SCAN_EPS0)
                r_hi, leg_hi = _leg_quadrature(hi, params, leg_tol, target)
                return (lo, r, leg, hi, r_hi, leg_hi)
            return (alpha, r, leg, prev[0], prev[1], prev[2])
        prev = (alpha, r, leg)
        k += 1


def wedge_slopes(sol: FreeBoundarySolution) -> WedgeSlopes:
    """Boundary slopes from the solved pair.

    The lower slope uses the exact closed-form boundary value
    g(x_lo) = T(x_lo), keeping integration error out of it; the upper
    slope necessarily uses the integrated value at the flat point.
    """
    p = sol.params.p
    lam = sol.params.lam
    g_lo = eval_T(sol.x_lo, sol.params)
    g_hi = eval_leg(sol.leg, sol.x_hi).g
    pi_lo = (1.0 - p) * sol.x_lo / (p * g_lo)
    pi_hi = (1.0 - p) * sol.x_hi / ((1.0 - p) * lam * sol.x_hi
                                    + p * (1.0 - lam) * g_hi)
    return WedgeSlopes(pi_lo=pi_lo, pi_hi=pi_hi)


def deflator_f(sol: FreeBoundarySolution, x: float) -> float:
    """The deflator f(x) = log(1 - lam) + I(x_hi) - I(x).

    Strictly decreasing from f(x_lo) = 0 to f(x_hi) = log(1 - lam).
    """
    point = eval_leg(sol.leg, x)  # raises OutOfRange outside the strip
    total = eval_leg(sol.leg, sol.x_hi).I
    return math.log1p(-sol.params.lam) + total - point.I


def _proportion_map(sol: FreeBoundarySolution, x: float) -> float:
    """The strictly increasing map whose ends are the wedge slopes."""
    p = sol.params.p
    ef = math.exp(deflator_f(sol, x))
    g = eval_leg(sol.leg, x).g
    return (1.0 - p) * x / ((1.0 - p) * (1.0 - ef) * x + p * g * ef)


def locate_xhat(sol: FreeBoundarySolution, endow: Endowment) -> float:
    """The position the optimal initial trade moves to.

    Above the wedge the answer is x_hi, below it x_lo; in between it is
    the root of the proportion map against the endowment's risky
    proportion, found by bisection (the map is strictly increasing).
    """
    check_solvency(endow, sol.params.lam)
    wealth = endow.eta_B + endow.eta_S * endow.S0
    if wealth <= 0:
        raise BadRange(
            "risky proportion undefined for nonpositive quoted wealth")
    rho = endow.eta_S * endow.S0 / wealth
    slopes = wedge_slopes(sol)
    if rho >= slopes.pi_hi:
        return sol.x_hi
    if rho <= slopes.pi_lo:
        return sol.x_lo

    lo, hi = sol.x_lo, sol.x_hi
    f_lo = _proportion_map(sol, lo) - rho
    f_hi = _proportion_map(sol, hi) - rho
    if not (f_lo <= 0.0 <= f_hi):
        raise RootNotBracketed(
            f"proportion map does not bracket {rho} on the strip")
    xtol = 1e-12 * (sol.x_hi - sol.x_lo)
    while (hi - lo) > xtol:
        mid = 0.5 * (lo + hi)
        if _proportion_map(sol, mid) - rho <= 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def value_u(sol: FreeBoundarySolution, endow: Endowment) -> float:
    """Expected utility of the optimal policy from this endowment."""
    p = sol.params.p
    xhat = locate_xhat(sol, endow)
    bond = endow.eta_B + endow.eta_S * endow.S0 * math.exp(
        deflator_f(sol, xhat))
    if bond <= 0:
        raise BadRange(
            "deflated wealth is not positive; endowment outside the "
            "value formula's domain")
    g = eval_T(sol.x_lo, sol.params) if xhat == sol.x_lo \
        else eval_leg(sol.leg, xhat).g
    sgn = 1.0 if p > 0 else -1.0
    return (bond**p) * (sgn * g) ** (1.0 - p) / p
