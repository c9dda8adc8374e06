"""Leg integration: follow g' = L(x, g) from a candidate boundary to the
first flat point.

A "leg" starts at an abscissa ``alpha`` strictly left of the collapse
point, with the exact initial value g(alpha) = T(alpha).  The derivative
vanishes at the start (T is a root of L's numerator), rises, and comes
back to zero at the flat point ``beta``, which is the candidate upper
boundary paired with ``alpha``.  The quadrature ``integral_I`` of g'/x
over the leg is carried as an augmented state component, not recomputed
in a second pass, because the shooting residual is a difference of this
integral against a target of the same small magnitude.

The integrator is an explicit embedded Runge-Kutta 5(4) pair with dense
output (scipy's RK45), driven step by step.  The right-hand side is
smooth on the solution strip, so a high-order explicit pair with
proportional-integral step control is the natural choice; no stiffness
is expected, and a step-size underflow is reported as a failure rather
than worked around.

Flat-point detection needs care because g' = 0 at the start of every
leg: the zero-crossing detector arms only once g' has grown past
``max(1e-9 (1 + |y_N|), 1e-3 peak)``, and the crossing is then located
on the dense output by bisection on the sign of L.  Legs too short to
reach the arming threshold raise ``NoFlatPoint``; the shooting layer
treats that as "quadrature below target" and widens its scan.

A leg that never flattens does not simply coast to the horizon: off the
solution strip the trajectory can run into the locus where L's
denominator vanishes.  L itself stays bounded there (numerator and
denominator shrink together) but its derivatives blow up, and the
integrator's error control shrinks steps without limit instead of
failing.  The loop therefore watches the denominator along the
trajectory and abandons the leg once it has collapsed to a small
fraction of its starting value; on genuine legs the denominator never
drops below about 40% of it.  A step budget and a stall floor back
this up.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import RK45

from .errors import NoFlatPoint, OutOfDomain, OutOfRange, StiffnessFailure
from .model import MarketParams, eval_L, eval_T, l_rational_coeffs, t_radicand

#: Default bound on the local error per step.
DEFAULT_TOL = 1e-10

#: Integration horizon in units of x_N; for small costs the strip is a
#: narrow neighborhood of x_N, so three times that is generous.
HORIZON_FACTOR = 3.0

#: Abandon a leg once |Q(x, g)| falls below this fraction of its value
#: at the leg start; a genuine leg keeps the ratio of order one.
_DEN_COLLAPSE = 1e-2

#: Accepted-step budget per leg; genuine legs need a few thousand.
_MAX_STEPS = 40_000

#: Dense-output samples per accepted step when hunting the sign change.
_SAMPLES_PER_STEP = 33


class LegPoint(NamedTuple):
    g: float
    gprime: float
    I: float


class _PiecewiseDense:
    """Ordered dense-output segments with binary-search evaluation."""

    def __init__(self, segments):
        self._segments = tuple(segments)
        self._rights = np.array([s.t_max for s in segments]) if segments \
            else np.empty(0)

    def __call__(self, x: float) -> np.ndarray:
        idx = int(np.searchsorted(self._rights, x, side="left"))
        idx = min(idx, len(self._segments) - 1)
        return self._segments[idx](x)

    def __len__(self):
        return len(self._segments)


@dataclass(frozen=True)
class LegSolution:
    """One integrated leg; immutable after construction."""

    alpha: float
    beta: float
    g_dense: _PiecewiseDense
    integral_I: float
    steps: int
    params: MarketParams


def _den_value(x, z, q_rows):
    """Evaluate L's denominator from its coefficient rows."""
    q0, q1, q2 = (np.polynomial.polynomial.polyval(x, row)
                  for row in q_rows)
    return q0 + q1 * z + q2 * z * z


def integrate_to_flat(alpha: float, params: MarketParams,
                      tol: float = DEFAULT_TOL) -> LegSolution:
    """Integrate one leg from ``alpha`` and locate its flat point.

    ``alpha`` must lie in (0, x_N] and inside the boundary curve's
    domain.  ``alpha == x_N`` returns the degenerate stationary leg.

    Raises
    ------
    OutOfDomain
        If ``alpha`` is outside (0, x_N] or the curve's domain.
    NoFlatPoint
        If the derivative never re-crosses zero while the detector is
        unarmed: the leg reaches the horizon, or it leaves the strip
        and runs into the locus where the slope field's denominator
        vanishes (the integrator cannot pass that locus, so no flat
        point is reachable beyond it).
    StiffnessFailure
        If the integrator stalls or fails after the detector armed.
    """
    quant = params.quantities()
    x_N, y_N = quant.x_N, quant.y_N
    if not (0.0 < alpha <= x_N):
        raise OutOfDomain(
            f"leg start {alpha} outside (0, x_N] with x_N = {x_N}")
    if t_radicand(alpha, params) < 0:
        raise OutOfDomain(f"leg start {alpha} outside the curve's domain")

    if alpha == x_N:
        return LegSolution(alpha=x_N, beta=x_N,
                           g_dense=_PiecewiseDense(()), integral_I=0.0,
                           steps=0, params=params)

    flat_tol = 1e-12 * (1.0 + abs(y_N))
    arm_floor = 1e-9 * (1.0 + abs(y_N))
    horizon = HORIZON_FACTOR * x_N

    def rhs(x, y):
        gp = eval_L(x, y[0], params)
        return np.array([gp, gp / x])

    g0 = eval_T(alpha, params)
    q_rows = l_rational_coeffs(params)[1]
    den_floor = _DEN_COLLAPSE * abs(_den_value(alpha, g0, q_rows))
    stall_floor = 1e-12 * max(1.0, x_N)

    solver = RK45(rhs, alpha, np.array([g0, 0.0]),
                  horizon, rtol=tol, atol=tol * 1e-3 * (1.0 + abs(y_N)))

    segments = []
    steps = 0
    peak = 0.0
    armed = False
    beta = None

    def abandon(reason):
        # a trajectory that cannot continue flattens nowhere; whether
        # that is an error depends on whether a rise was ever seen
        if armed:
            raise StiffnessFailure(
                f"integrator {reason} at x = {solver.t} after the "
                f"detector armed (leg start {alpha})")
        raise NoFlatPoint(
            f"integrator {reason} at x = {solver.t} before the "
            f"detector armed (leg start {alpha})")

    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            abandon(f"failed ({message})")
        steps += 1
        dense = solver.dense_output()
        segments.append(dense)

        xs = np.linspace(dense.t_min, dense.t_max, _SAMPLES_PER_STEP)
        crossing = None
        prev_gp = None
        for x in xs:
            g = dense(x)[0]
            gp = eval_L(x, g, params)
            peak = max(peak, gp)
            if not armed and gp > max(arm_floor, 1e-3 * peak):
                armed = True
                prev_gp = gp
                prev_x = x
                continue
            if armed and prev_gp is not None and gp <= 0.0 < prev_gp:
                crossing = (prev_x, x)
                break
            if armed:
                prev_gp = gp
                prev_x = x
        if crossing is not None:
            beta = _bisect_flat(dense, crossing[0], crossing[1], params,
                                flat_tol)
            break

        # guards run after the step's samples so a crossing inside the
        # final step is still found
        if steps > _MAX_STEPS:
            abandon(f"exceeded the step budget {_MAX_STEPS}")
        if abs(_den_value(solver.t, solver.y[0], q_rows)) < den_floor:
            abandon("reached the slope field's singular locus")
        if solver.step_size is not None and solver.step_size < stall_floor:
            abandon(f"stalled (step {solver.step_size:.3e})")

    if beta is None:
        raise NoFlatPoint(
            f"no flat point before the horizon {horizon} "
            f"(leg start {alpha}, armed={armed})")

    g_dense = _PiecewiseDense(segments)
    integral_I = float(g_dense(beta)[1])
    return LegSolution(alpha=alpha, beta=beta, g_dense=g_dense,
                       integral_I=integral_I, steps=steps, params=params)


def _bisect_flat(dense, lo, hi, params, flat_tol):
    """Refine the sign change of L(x, g(x)) on one dense segment."""
    f_lo = eval_L(lo, dense(lo)[0], params)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = eval_L(mid, dense(mid)[0], params)
        if abs(f_mid) < flat_tol or (hi - lo) < 4e-16 * max(1.0, abs(mid)):
            return mid
        if (f_mid > 0.0) == (f_lo > 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def eval_leg(leg: LegSolution, x: float) -> LegPoint:
    """Evaluate (g, g', I) at ``x`` in [alpha, beta].

    The derivative is recovered through the exact relation g' = L(x, g),
    never by differentiating the interpolant.
    """
    if not (leg.alpha <= x <= leg.beta):
        raise OutOfRange(
            f"{x} outside the leg interval [{leg.alpha}, {leg.beta}]")
    if len(leg.g_dense) == 0:
        # degenerate stationary leg
        y_N = leg.params.quantities().y_N
        return LegPoint(g=y_N, gprime=0.0, I=0.0)
    g, integral = leg.g_dense(x)
    return LegPoint(g=float(g), gprime=eval_L(x, float(g), leg.params),
                    I=float(integral))
