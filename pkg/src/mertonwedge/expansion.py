"""Asymptotic expansion engine for small transaction costs.

Everything here is Taylor coefficients; no ODE integration.  The chain
runs: the two-parameter solution surface g (coefficients a_ij), the
flat-point curve beta (b_i), the quadrature primitive G, the cubic
contact coefficients of the cost map (c_i), its real cube-root factor F,
the boundary inverse alpha in the scaled cost w = lam^(1/3) (d_i), the
wedge slope series (s_i down and up), and finally the value series
(zeta_i) for an endowment.

The surface g(z1, z2) is the leg solution as a function of position z1
and of the leg's start z2, expanded about the double collapse point
(x_N, x_N) on a coefficient rectangle.  Two constraint families pin its
coefficients: the ODE in z1, written with series arithmetic as
d(g)/d(z1) minus the rational slope field (numerator series divided by
denominator series), and the initial condition along the diagonal,
g(z2, z2) = T(z2).  Counting coefficients shows the stacked system is
square; it is solved by Newton iteration with a finite-difference
Jacobian, warm-started column by column in z2 so each stage begins next
to its solution.

The expansion's convergence radius can be a small fraction of x_N, in
which case the raw coefficients grow by orders of magnitude per order
and double precision cannot evaluate the constraints near zero.  All
internal solves therefore run in a scaled gauge z = x_N + rho * t, with
rho estimated from coefficient tail growth so the scaled rectangle
stays O(1); the stored series always carry the raw, unscaled
convention.  Residuals are measured in the scaled gauge for the same
reason: it is the gauge in which "zero" is a meaningful double.

The cost map sends a candidate start z2 to the cost lambda whose lower
boundary it would be; it has a triple zero at x_N, which is what makes
the boundaries move like lam^(1/3).  Its cubic-contact coefficients c_i
and their cube root F turn the map into omega = (z2 - x_N) F(z2), and
reverting omega gives the boundary inverse alpha.  All downstream series
are compositions of stored series with alpha.

The cube root and the reversion condition the cost map's noise into the
boundary inverse, so that leg of the chain runs the series kernels over
an arbitrary-precision scalar and rounds once at the end; the identity
defect evaluators do the same so they report the stored coefficients'
defect, not their own.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from mpmath import mp, mpf

from .errors import (BadRange, BranchAmbiguity, BranchSelectionFailure,
                     CaseBoundary, DivisionByZeroConstantTerm,
                     LeadingCoefficientZero, MertonWedgeError,
                     NewtonDivergence, SingularDenominator)
from .freeboundary import Endowment, check_solvency
from .model import MarketParams, l_rational_coeffs
from .powerseries import (BivariateSeries, UnivariateSeries, _bdiv, _bmul,
                          _ucompose, _uexp, _umul, _upow, _urevert,
                          bi_antiderivative_z1, bi_ops, bi_partial_z1,
                          bi_subst, uni_compose, uni_map)

_NEWTON_TOL = 1e-12
_NEWTON_ACCEPT = 1e-10
_NEWTON_MAXIT = 16
_REPORT_BOUND = 1e-9
_MAX_RESCALES = 4
# digits for the cost-map-to-alpha chain; enough that double rounding
# of the results is the only loss even when coefficients span 20 decades
_CHAIN_DPS = 40


def _scale(quant):
    return max(1.0, abs(quant.y_N), quant.x_N)


@dataclass(frozen=True)
class ExpansionBundle:
    """All series of one expansion, solved to one order.

    ``order`` is the order n in w of the wedge and value output; the
    internal series carry the extra orders the compositions consume.
    ``residual_report`` is the largest absolute residual left anywhere
    in the pipeline, each constraint measured in its numerically
    meaningful gauge: the g-surface and flat-curve systems in the scaled
    gauge, the contact zeros, the reversion identity and the
    cost-reconstruction identity as raw coefficients.  ``build_bundle``
    guarantees the report is below 1e-9 times the parameter scale.
    """

    params: MarketParams
    order: int
    g_series: BivariateSeries
    beta_series: UnivariateSeries
    G_series: BivariateSeries
    c_series: UnivariateSeries
    F_series: UnivariateSeries
    alpha_series: UnivariateSeries
    wedge_lo: UnivariateSeries | None
    wedge_hi: UnivariateSeries | None
    residual_report: float


@dataclass(frozen=True)
class ValueSeries:
    """Value expansion for one endowment.

    ``zeta`` is the series in w = lam^(1/3); ``case`` records which side
    of the Merton proportion the endowment sits on; ``xhat_series`` (the
    starting-position curve in the z2 variable) exists only for the
    interior case, where the initial position varies with the cost.
    """

    endow: Endowment
    case: str
    zeta: UnivariateSeries
    xhat_series: UnivariateSeries | None


def _shift_poly(row, x0):
    """Recenter an ascending global polynomial to powers of (x - x0)."""
    poly = np.polynomial.Polynomial(np.asarray(row, dtype=float))
    return poly(np.polynomial.Polynomial([x0, 1.0])).coef


def _curve_coeffs(params: MarketParams, order: int) -> np.ndarray:
    """Taylor coefficients of the boundary curve T about x_N.

    The radicand is a quadratic with value p^2 > 0 at x_N, so its square
    root is an ordinary power-half series and T follows from the same
    closed form the pointwise evaluator uses.
    """
    quant = params.quantities()
    p, mu, delta = params.p, params.mu, params.delta
    sgn = float(quant.sgn_p)
    rad_global = (p * p, 2.0 * sgn * p * p * mu, -p * quant.margin)
    rad = np.zeros(order + 1)
    shifted = _shift_poly(rad_global, quant.x_N)
    take = min(shifted.size, order + 1)
    rad[:take] = shifted[:take]
    root = uni_map(UnivariateSeries(quant.x_N, rad), "power", 0.5)
    out = (1.0 - p) * root.coeffs.copy()
    out[0] += p * (1.0 - p) * (sgn + mu * quant.x_N)
    if order >= 1:
        out[1] += p * (1.0 - p) * mu
    return out / (2.0 * delta * p)


def _diag_coeffs(a: np.ndarray, order: int) -> np.ndarray:
    """Coefficients of the diagonal slice z1 = z2 through ``order``."""
    out = np.zeros(order + 1)
    for k in range(order + 1):
        js = np.arange(min(k, a.shape[1] - 1) + 1)
        out[k] = a[k - js, js].sum()
    return out


def _rows_of_g(rows, a, g2, m1, m2):
    """A quadratic-in-g polynomial with x-polynomial rows, as a series.

    ``rows`` are the three ascending coefficient rows (in z1, already
    recentered and gauge-scaled) multiplying g^0, g^1, g^2.
    """
    r0, r1, r2 = rows
    out = np.zeros((m1 + 1, m2 + 1))
    take = min(r0.size, m1 + 1)
    out[:take, 0] = r0[:take]
    out += _bmul(np.asarray(r1, dtype=float).reshape(-1, 1), a, m1, m2)
    out += r2[0] * g2[: m1 + 1, : m2 + 1]
    return out


def _pow_grid(rho: float, m1: int, m2: int) -> np.ndarray:
    """The (i, j) grid of rho**(i+j), for gauge conversions."""
    powers = rho ** np.arange(m1 + m2 + 1, dtype=float)
    return powers[np.add.outer(np.arange(m1 + 1), np.arange(m2 + 1))]


def _clip_radius(rho, x_N):
    span = max(1.0, x_N)
    return float(min(max(rho, 1e-3 * span), 10.0 * span))


def _series_radius(g_series: BivariateSeries) -> float:
    """Gauge radius for a raw surface: no scaled entry above the scale.

    Picks the largest rho for which |a_ij| rho^(i+j) stays within the
    surface's own scale at every order, so the scaled rectangle is O(1)
    by construction.  A decaying rectangle gives a radius above one,
    which the clip caps; an empty one gives the raw gauge back.
    """
    a = np.abs(np.asarray(g_series.coeffs, dtype=float))
    target = max(1.0, a[0, 0])
    i, j = np.indices(a.shape)
    k = i + j
    mask = (k >= 1) & (a > 0.0)
    if not np.any(mask):
        return 1.0
    rho = np.min((target / a[mask]) ** (1.0 / k[mask]))
    return _clip_radius(rho, g_series.center[0])


def compute_g_series(params: MarketParams, n: int) -> BivariateSeries:
    """Solve the coefficient rectangle of the solution surface.

    The rectangle holds z1 orders through n+3 and z2 orders through n+2,
    which is what the downstream compositions need for output order n.
    Unknowns and equations per z2 column balance exactly: the ODE
    constraint provides one equation per interior z1 order and the
    diagonal condition one more.  The ladder re-estimates the gauge
    radius whenever the scaled block drifts away from O(1) and restarts
    the affected stage in the new gauge.

    Raises
    ------
    SingularDenominator
        If the slope field's denominator vanishes at the collapse point,
        which makes the rational right-hand side meaningless as a series.
    NewtonDivergence
        If a stage of the warm-started Newton ladder fails to converge.
    """
    quant = params.quantities()
    x_N, y_N = quant.x_N, quant.y_N
    scale = _scale(quant)
    m1, m2 = n + 3, n + 2
    p_raw = [_shift_poly(r, x_N) for r in l_rational_coeffs(params)[0]]
    q_raw = [_shift_poly(r, x_N) for r in l_rational_coeffs(params)[1]]
    curve_raw = _curve_coeffs(params, m2)
    d_weights = np.arange(1.0, m1 + 1)[:, None]
    tol = _NEWTON_TOL * scale

    def scaled_system(rho):
        p_rows = [row * rho ** (np.arange(row.size) + 1.0) for row in p_raw]
        q_rows = [row * rho ** np.arange(row.size, dtype=float)
                  for row in q_raw]
        return p_rows, q_rows, curve_raw * rho ** np.arange(m2 + 1.0)

    def make_residual(p_rows, q_rows, curve, j):
        def residual(a):
            g2 = _bmul(a, a, m1 - 1, j)
            num = _rows_of_g(p_rows, a, g2, m1 - 1, j)
            den = _rows_of_g(q_rows, a, g2, m1 - 1, j)
            try:
                slope = _bdiv(num, den, m1 - 1, j)
            except DivisionByZeroConstantTerm as exc:
                raise SingularDenominator(
                    "slope field denominator vanishes at the collapse "
                    "point; the surface expansion does not exist") from exc
            r1 = a[1:] * d_weights - slope
            r2 = _diag_coeffs(a, j) - curve[: j + 1]
            return np.concatenate([r1.ravel(), r2])
        return residual

    # pass 1: raw gauge, stall-tolerant; its only job is to pin down
    # the coefficient growth so the working gauge can be chosen
    rho = 1.0
    p_rows, q_rows, curve = scaled_system(rho)
    a = np.zeros((m1 + 1, m2 + 1))
    a[0, 0] = y_N
    a[:, :1] = _newton_stage(
        a[:, :1], make_residual(p_rows, q_rows, curve, 0), tol, 0,
        strict=False)

    rescales = 0
    j = 0
    while j <= m2:
        raw = BivariateSeries((x_N, x_N), a / _pow_grid(rho, m1, m2))
        fresh = _series_radius(raw)
        if rescales < _MAX_RESCALES and not 0.77 < fresh / rho < 1.3:
            a *= _pow_grid(fresh / rho, m1, m2)
            rho = fresh
            p_rows, q_rows, curve = scaled_system(rho)
            rescales += 1
        a[:, : j + 1] = _newton_stage(
            a[:, : j + 1], make_residual(p_rows, q_rows, curve, j), tol, j)
        j += 1

    # downstream residual checks re-derive the gauge from the returned
    # coefficients, so convergence must hold at exactly that gauge; one
    # warm-started polish of the full rectangle closes any drift left
    # by the ladder's rescale hysteresis
    raw = a / _pow_grid(rho, m1, m2)
    fresh = _series_radius(BivariateSeries((x_N, x_N), raw))
    if abs(fresh / rho - 1.0) > 1e-12:
        rho = fresh
        a = raw * _pow_grid(rho, m1, m2)
        p_rows, q_rows, curve = scaled_system(rho)
        a = _newton_stage(
            a, make_residual(p_rows, q_rows, curve, m2), tol, m2)
    out = a / _pow_grid(rho, m1, m2)
    # the flat-curve stage solves one coefficient per defect order,
    # which is only triangular because these two entries vanish
    # identically; left at the solver's floor they re-enter each order
    # multiplied by the curve's fastest-growing coefficient
    out[1, 0] = 0.0
    out[2, 0] = 0.0
    return BivariateSeries((x_N, x_N), out)


def _newton_stage(block, residual, tol, stage, strict=True):
    """Newton on one column-prefix block, finite-difference Jacobian.

    The forward-difference Jacobian caps the reachable residual around
    1e-11 of the block scale, so a stalled iterate is still accepted as
    long as it sits two decades inside the pipeline's 1e-9 bound.  With
    ``strict`` off the best iterate is returned no matter where it
    stalls; the raw-gauge probe pass uses that, since its result only
    seeds the gauge estimate.
    """
    shape = block.shape
    u = block.ravel().copy()
    r = residual(u.reshape(shape))
    accept = tol * (_NEWTON_ACCEPT / _NEWTON_TOL)
    best_u, best_norm = u.copy(), np.max(np.abs(r))
    prev = np.inf
    for _ in range(_NEWTON_MAXIT):
        norm = np.max(np.abs(r))
        if norm < best_norm:
            best_u, best_norm = u.copy(), norm
        if norm < tol:
            return u.reshape(shape)
        if norm < accept and norm > 0.25 * prev:
            return u.reshape(shape)
        prev = norm
        jac = np.empty((r.size, u.size))
        for c in range(u.size):
            h = 1e-7 * (1.0 + abs(u[c]))
            up = u.copy()
            up[c] += h
            jac[:, c] = (residual(up.reshape(shape)) - r) / h
        try:
            step = np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as exc:
            if not strict:
                return best_u.reshape(shape)
            raise NewtonDivergence(
                f"singular Jacobian in stage {stage}") from exc
        u = u - step
        r = residual(u.reshape(shape))
        if not np.all(np.isfinite(r)):
            if not strict:
                return best_u.reshape(shape)
            raise NewtonDivergence(
                f"non-finite residual in stage {stage}")
    norm = np.max(np.abs(r))
    if norm < best_norm:
        best_u, best_norm = u.copy(), norm
    if not strict or best_norm < accept:
        return best_u.reshape(shape)
    raise NewtonDivergence(
        f"stage {stage} stalled at residual {best_norm:.3e} "
        f"(tolerance {tol:.3e})")


def compute_beta_series(g_series: BivariateSeries,
                        n: int) -> UnivariateSeries:
    """Solve the flat-point curve beta through coefficient order n+1.

    beta(z2) is where the leg from z2 flattens; it satisfies
    d(g)/d(z1) (beta(z2), z2) = 0.  The defining residual's coefficient
    at order k+1 is affine in b_k for k >= 2 and quadratic in b_1, with
    roots +1 (the diagonal itself, where the derivative also vanishes)
    and -1 (the flat-point curve); the diagonal root is excluded.

    Raises
    ------
    BranchAmbiguity
        If the quadratic for b_1 fails to offer exactly one root away
        from +1, or a later affine update degenerates.
    """
    x_N = g_series.center[0]
    dg = bi_partial_z1(g_series)
    nb = n + 1
    # the curve's raw coefficients can outgrow what double evaluation
    # resolves, so the probes run over the swapped scalar, where each
    # affine update is exact and the stored doubles are the only
    # rounding
    with mp.workdps(_CHAIN_DPS):
        ident = np.zeros(nb + 2, dtype=object)
        ident[1] = mpf(1)
        dev = np.zeros(nb + 2, dtype=object)

        def defect(upto):
            return _raw_bsubst(dg.coeffs, dev, ident, upto)

        probes = []
        for t in (0, 1, -1):
            dev[1] = mpf(t)
            probes.append(defect(2)[2])
        c0 = probes[0]
        c1 = (probes[1] - probes[2]) / 2
        c2 = (probes[1] + probes[2]) / 2 - c0
        if abs(c2) < 1e-12 * max(1.0, abs(c0), abs(c1)):
            raise BranchAmbiguity(
                "flat-curve slope condition is not genuinely quadratic")
        roots = np.roots([float(c2), float(c1), float(c0)])
        away = [float(r.real) for r in roots
                if abs(r.imag) < 1e-9 and abs(r - 1.0) > 1e-6]
        if len(away) != 1:
            raise BranchAmbiguity(
                f"expected one slope root away from the diagonal, got "
                f"{roots}")
        # polish the float root so b_1 is exact to the working digits
        b1 = mpf(away[0])
        for _ in range(2):
            b1 -= (c2 * b1 * b1 + c1 * b1 + c0) / (2 * c2 * b1 + c1)
        dev[1] = b1

        for k in range(2, nb + 1):
            dev[k] = 0
            at0 = defect(k + 1)[k + 1]
            dev[k] = mpf(1)
            ats = defect(k + 1)[k + 1]
            if at0 == ats:
                raise BranchAmbiguity(
                    f"flat-curve update degenerates at order {k}")
            dev[k] = at0 / (at0 - ats)
        coeffs = np.empty(nb + 1)
        coeffs[0] = x_N
        for k in range(1, nb + 1):
            coeffs[k] = float(dev[k])
    return UnivariateSeries(x_N, coeffs)


def _probe_step(dev, k):
    """Probe displacement matched to the coefficient's expected size.

    Extrapolates the geometric growth of the two previous deviation
    coefficients; a probe far below the residual's own scale would lose
    the slope to rounding.
    """
    prev1 = abs(dev[k - 1])
    prev2 = abs(dev[k - 2]) if k >= 3 else 1.0
    growth = prev1 / prev2 if prev2 > 0 else 1.0
    return float(min(max(1.0, prev1 * growth), 1e8))


def _quadrature_primitive(g_series: BivariateSeries) -> BivariateSeries:
    """G with d(G)/d(z1) = (1/z1) d(g)/d(z1) and G = 0 at z1 = x_N."""
    x_N = g_series.center[0]
    m1, m2 = g_series.orders
    dg = bi_partial_z1(g_series)
    k = np.arange(m1, dtype=float)
    inv = np.zeros((m1, m2 + 1))
    inv[:, 0] = (-1.0) ** k / x_N ** (k + 1.0)
    over_x = BivariateSeries(g_series.center, inv)
    return bi_antiderivative_z1(bi_ops(over_x, dg, "mul"))


def _contact_series(g_series, beta_series, G_series):
    """The cost map 1 - exp(G(z2,z2) - G(beta(z2),z2)) about x_N.

    Returns the raw coefficient array together with the surface's gauge
    radius.  The map's tail seeds the cube root and the reversion, whose
    conditioning amplifies any noise here into the boundary inverse, so
    the substitutions swap the series scalar for one with enough digits
    that rounding the results back to doubles is the only loss.
    """
    m2 = g_series.orders[1]
    rho = _series_radius(g_series)
    with mp.workdps(_CHAIN_DPS):
        dev_id = np.zeros(m2 + 1, dtype=object)
        if m2 >= 1:
            dev_id[1] = mpf(1)
        # entries beyond the stored flat curve stay zero; they multiply
        # dG/dz1(x_N, .) = 0, so the map does not depend on them
        b_t = np.zeros(m2 + 1, dtype=object)
        take = min(beta_series.coeffs.size, m2 + 1)
        for k in range(1, take):
            b_t[k] = mpf(float(beta_series.coeffs[k]))
        phi = (_raw_bsubst(G_series.coeffs, dev_id, dev_id, m2)
               - _raw_bsubst(G_series.coeffs, b_t, dev_id, m2))
        psi = -_uexp(phi, m2)
        psi[0] += 1.0
    return psi, rho


def compute_c_F_alpha(params: MarketParams, g_series: BivariateSeries,
                      beta_series: UnivariateSeries,
                      G_series: BivariateSeries, n: int):
    """Cubic-contact coefficients, cube-root factor, boundary inverse.

    The cost map is 1 - exp(G(z2,z2) - G(beta(z2),z2)); its series must
    vanish at orders 0..2 (checked, not assumed) and open with a
    negative cubic coefficient c_0.  Writing it as (z2-x_N)^3 c(z2), the
    real cube root F of c turns it into omega(z2) = (z2-x_N) F(z2)
    cubed, and alpha is the reversion of omega, the boundary position as
    a function of w = lam^(1/3).  Its linear coefficient d_1 = 1/F(x_N)
    is negative: the lower boundary moves left of x_N.

    Raises
    ------
    LeadingCoefficientZero
        If the map's low orders fail to vanish or the cubic coefficient
        is numerically zero; either way the cubic contact is broken and
        no cube root exists.
    BranchSelectionFailure
        If the real cube root exists but sends the boundary to the
        wrong side (c_0 > 0, so d_1 > 0).
    """
    quant = params.quantities()
    x_N = quant.x_N
    scale = _scale(quant)

    psi, rho = _contact_series(g_series, beta_series, G_series)
    low = np.abs(psi[:3].astype(float))
    if np.any(low > _REPORT_BOUND * scale):
        raise LeadingCoefficientZero(
            f"cost map's orders 0..2 do not vanish: {low}")
    c64 = psi[3: 3 + n].astype(float)
    # the zero test compares against the gauge-balanced tail, which is
    # what the evaluation noise actually scales with
    c_scale = max(1.0, float(np.max(np.abs(c64) * rho ** np.arange(n))))
    c0 = c64[0]
    if abs(c0) <= 1e-10 * c_scale:
        raise LeadingCoefficientZero(
            "cubic coefficient of the cost map is numerically zero")
    if c0 > 0.0:
        raise BranchSelectionFailure(
            f"cubic coefficient {c0} is positive; the real cube root "
            f"would move the boundary right of x_N")
    c_series = UnivariateSeries(x_N, c64)

    # the coefficients fan out over many decades (the boundary inverse
    # can grow fast in w), so the cube root and the reversion keep the
    # swapped scalar; alpha inverts the rounded F, not the exact one, so
    # the stored pair closes the reversion identity at its own
    # representation floor
    with mp.workdps(_CHAIN_DPS):
        f_mp = -_upow(-psi[3: 3 + n], mpf(1) / 3, n - 1)
        f64 = f_mp.astype(float)
        omega = np.zeros(n + 1, dtype=object)
        for k in range(n):
            omega[k + 1] = mpf(f64[k])
        alpha64 = _urevert(omega, n).astype(float)
    f_series = UnivariateSeries(x_N, f64)
    alpha = UnivariateSeries(0.0, np.concatenate([[x_N], alpha64[1:]]))
    return c_series, f_series, alpha


def compute_wedge_series(bundle: ExpansionBundle, n: int):
    """Wedge slope series from the assembled bundle.

    The lower slope composes the surface's diagonal with alpha; the
    upper one uses the flat-point curve's image B = beta(alpha) and the
    cost factor w^3 that separates quoted and liquidation wealth.
    """
    params = bundle.params
    p = params.p
    alpha = bundle.alpha_series
    g_aa = bi_subst(bundle.g_series, alpha, alpha)
    s_lo = ((1.0 - p) * alpha) / (p * g_aa)

    beta_at = uni_compose(bundle.beta_series, alpha)
    g_ba = bi_subst(bundle.g_series, beta_at, alpha)
    w3 = _cube_series(n)
    s_hi = ((1.0 - p) * beta_at) / ((1.0 - p) * w3 * beta_at
                                    + p * (1.0 - w3) * g_ba)
    return s_lo.truncated(n), s_hi.truncated(n)


def _cube_series(n: int) -> UnivariateSeries:
    coeffs = np.zeros(n + 1)
    if n >= 3:
        coeffs[3] = 1.0
    return UnivariateSeries(0.0, coeffs)


def build_bundle(params: MarketParams, n: int) -> ExpansionBundle:
    """Run the whole pipeline at output order n and verify it.

    The returned bundle's ``residual_report`` collects the worst
    constraint residual across the g-surface constraints, the
    flat-curve defining equation, and the cost map's cubic contact, all
    in the scaled gauge.  A report above 1e-9 times the parameter scale
    raises instead of returning.  The reversion and reconstruction
    identities are not part of the report; ``reversion_defect`` and
    ``reconstruction_defect`` measure them on the returned bundle.
    """
    if not isinstance(n, int) or n < 1:
        raise BadRange(f"expansion order must be a positive integer, "
                       f"got {n}")
    quant = params.quantities()
    scale = _scale(quant)

    g_series = compute_g_series(params, n)
    beta_series = compute_beta_series(g_series, n)
    G_series = _quadrature_primitive(g_series)
    c_series, f_series, alpha = compute_c_F_alpha(
        params, g_series, beta_series, G_series, n)

    partial = ExpansionBundle(
        params=params, order=n, g_series=g_series,
        beta_series=beta_series, G_series=G_series, c_series=c_series,
        F_series=f_series, alpha_series=alpha, wedge_lo=None,
        wedge_hi=None, residual_report=float("nan"))
    wedge_lo, wedge_hi = compute_wedge_series(partial, n)

    report = _residual_report(partial)
    if not report < _REPORT_BOUND * scale:
        raise NewtonDivergence(
            f"expansion pipeline left residual {report:.3e}, above "
            f"{_REPORT_BOUND * scale:.3e}")
    return dataclasses.replace(partial, wedge_lo=wedge_lo,
                               wedge_hi=wedge_hi, residual_report=report)


def _residual_report(bundle: ExpansionBundle) -> float:
    """Worst constraint residual across the pipeline's defining relations.

    Covers the surface's two constraint families, the flat curve's
    defining equation, and the cost map's cubic contact, each measured
    in the gauge where its zero is a meaningful double.  The two
    pipeline identities are not constraints and are reported separately
    by ``reversion_defect`` and ``reconstruction_defect``: their
    absolute size scales with the coefficients' growth, which for
    fast-growing instances sits far above any solver's control.
    """
    params = bundle.params
    quant = params.quantities()
    x_N = quant.x_N
    g = bundle.g_series
    m1, m2 = g.orders
    n = bundle.order
    rho = _series_radius(g)

    p_rows = [_shift_poly(r, x_N) * rho ** (np.arange(len(r)) + 1.0)
              for r in l_rational_coeffs(params)[0]]
    q_rows = [_shift_poly(r, x_N) * rho ** np.arange(len(r), dtype=float)
              for r in l_rational_coeffs(params)[1]]
    a = g.coeffs * _pow_grid(rho, m1, m2)
    g2 = _bmul(a, a, m1 - 1, m2)
    num = _rows_of_g(p_rows, a, g2, m1 - 1, m2)
    den = _rows_of_g(q_rows, a, g2, m1 - 1, m2)
    ode = a[1:] * np.arange(1.0, m1 + 1)[:, None] - _bdiv(num, den,
                                                          m1 - 1, m2)
    diag = _diag_coeffs(a, m2) - (_curve_coeffs(params, m2)
                                  * rho ** np.arange(m2 + 1.0))
    worst = max(np.max(np.abs(ode)), np.max(np.abs(diag)))

    # the stored curve's defect, evaluated exactly and read in the same
    # gauge as the surface constraints; double evaluation would bury it
    # under its own rounding when the curve's coefficients grow fast
    dg = bi_partial_z1(g)
    n_flat = n + 2
    with mp.workdps(_CHAIN_DPS):
        ident_dev = np.zeros(n_flat + 1, dtype=object)
        ident_dev[1] = mpf(1)
        b_dev = np.zeros(n_flat + 1, dtype=object)
        take = min(bundle.beta_series.coeffs.size, n_flat + 1)
        for k in range(1, take):
            b_dev[k] = mpf(float(bundle.beta_series.coeffs[k]))
        flat = _raw_bsubst(dg.coeffs, b_dev, ident_dev, n_flat)
        flat_worst = max(abs(flat[k]) * mpf(rho) ** k
                         for k in range(n_flat + 1))
    worst = max(worst, float(flat_worst))

    psi, _ = _contact_series(g, bundle.beta_series, bundle.G_series)
    worst = max(worst, np.max(np.abs(psi[:3].astype(float))))
    return float(worst)


def _raw_bsubst(a, dev1, dev2, n):
    """Bivariate substitution on raw arrays, Horner both ways.

    ``dev1``/``dev2`` are deviation series (zero constant) for the two
    slots; dtype follows the inputs, which is how the cost-map chain and
    the defect evaluators get their high-precision path.
    """
    dt = np.result_type(a, dev1, dev2)
    acc = np.zeros(n + 1, dtype=dt)
    for i in range(a.shape[0] - 1, -1, -1):
        row = np.zeros(n + 1, dtype=dt)
        for j in range(a.shape[1] - 1, -1, -1):
            row = _umul(row, dev2, n)
            row[0] += a[i, j]
        acc = _umul(acc, dev1, n)
        acc += row
    return acc


def _mp_dev(coeffs) -> np.ndarray:
    """Stored coefficients as an exact deviation series (zero constant)."""
    out = np.zeros(coeffs.size, dtype=object)
    for k in range(1, coeffs.size):
        out[k] = mpf(float(coeffs[k]))
    return out


def reversion_defect(bundle: ExpansionBundle) -> float:
    """Largest coefficient of (alpha(w) - x_N) F(alpha(w)) - w.

    This is the defect of the reversion identity for the stored
    coefficients.  The compositions run over exact conversions of the
    stored doubles at high precision, so the returned number measures
    the coefficients' own identity defect, with no evaluation noise on
    top; the floor is set by the rounding the bundle's storage format
    imposes, not by this function.
    """
    n = bundle.alpha_series.order
    with mp.workdps(_CHAIN_DPS):
        dev = _mp_dev(bundle.alpha_series.coeffs)
        f = np.array([mpf(float(x)) for x in bundle.F_series.coeffs],
                     dtype=object)
        prod = _umul(dev, _ucompose(f, dev, n), n)
        if prod.size > 1:
            prod[1] -= 1
        return float(max(abs(x) for x in prod))


def reconstruction_defect(bundle: ExpansionBundle) -> float:
    """Largest coefficient of 1 - exp(G(A,A) - G(B,A)) - w^3.

    A = alpha(w) and B = beta(alpha(w)); the identity says the cost map
    composed with the boundary inverse gives back the cost lambda = w^3.
    Evaluated like ``reversion_defect``: exact conversions of the stored
    coefficients, high-precision arithmetic, so the answer is the stored
    bundle's defect and not the evaluator's.
    """
    n = bundle.alpha_series.order
    with mp.workdps(_CHAIN_DPS):
        dev_a = _mp_dev(bundle.alpha_series.coeffs)
        b_t = _mp_dev(bundle.beta_series.coeffs)
        dev_b = _ucompose(b_t, dev_a, n)
        grid = bundle.G_series.coeffs
        diff = (_raw_bsubst(grid, dev_a, dev_a, n)
                - _raw_bsubst(grid, dev_b, dev_a, n))
        recon = -_uexp(diff, n)
        recon[0] += 1
        if recon.size > 3:
            recon[3] -= 1
        return float(max(abs(x) for x in recon))


def compute_value_series(bundle: ExpansionBundle, endow: Endowment,
                         n: int, case: str | None = None) -> ValueSeries:
    """Value expansion for one endowment, with the case split.

    The asymptotic case is fixed by the endowment's risky proportion
    against the Merton proportion: strictly below it the start sits on
    the lower boundary, strictly above on the upper, exactly on it in
    the interior.  A proportion so close to a boundary slope at the
    bundle's own cost that floating point cannot settle the side raises
    ``CaseBoundary``; passing ``case`` explicitly overrides the split.

    Raises
    ------
    BadRange
        For insolvent endowments or nonpositive quoted wealth.
    CaseBoundary
        See above.
    """
    params = bundle.params
    quant = params.quantities()
    p, x_N, y_N = params.p, quant.x_N, quant.y_N
    check_solvency(endow, params.lam)
    wealth = endow.eta_B + endow.eta_S * endow.S0
    if wealth <= 0:
        raise BadRange("risky proportion undefined for nonpositive "
                       "quoted wealth")
    rho = endow.eta_S * endow.S0 / wealth
    if case is None:
        case = _pick_case(bundle, rho, quant)
    elif case not in ("below", "on", "above"):
        raise BadRange(f"unknown case {case!r}")

    alpha = bundle.alpha_series
    sgn_y = 1.0 if y_N > 0 else -1.0
    xhat_series = None

    if case == "below":
        curve = UnivariateSeries(x_N, _curve_coeffs(params, n))
        g_val = uni_compose(curve, alpha)
        bond_pow = wealth ** p
        zeta = (bond_pow / p) * uni_map(sgn_y * g_val, "power", 1.0 - p)
    elif case == "above":
        beta_at = uni_compose(bundle.beta_series, alpha)
        g_val = bi_subst(bundle.g_series, beta_at, alpha)
        bond = endow.eta_B + (1.0 - _cube_series(n)) * (endow.S0
                                                        * endow.eta_S)
        zeta = (uni_map(bond, "power", p) / p) * uni_map(
            sgn_y * g_val, "power", 1.0 - p)
    else:
        xhat_series = _position_curve(bundle, rho, n)
        x_at = uni_compose(xhat_series, alpha)
        g_val = bi_subst(bundle.g_series, x_at, alpha)
        deflate = uni_map(bi_subst(bundle.G_series, alpha, alpha)
                          - bi_subst(bundle.G_series, x_at, alpha), "exp")
        bond = endow.eta_B + (endow.S0 * endow.eta_S) * deflate
        zeta = (uni_map(bond, "power", p) / p) * uni_map(
            sgn_y * g_val, "power", 1.0 - p)

    zeta = zeta.truncated(min(n, zeta.order))
    zeta0 = zeta.coeffs[0]
    if zeta.order >= 1 and abs(zeta.coeffs[1]) > 1e-10 * abs(zeta0):
        raise MertonWedgeError(
            f"value series linear term {zeta.coeffs[1]} fails to vanish "
            f"against {zeta0}")
    if zeta.order >= 2 and not zeta.coeffs[2] < 0.0:
        raise MertonWedgeError(
            f"value series quadratic term {zeta.coeffs[2]} must be "
            f"negative")
    return ValueSeries(endow=endow, case=case, zeta=zeta,
                       xhat_series=xhat_series)


def _pick_case(bundle, rho, quant):
    """Case split with the ambiguity guard at the bundle's own cost."""
    pi = quant.pi
    span = 1.0 + pi
    if abs(rho - pi) <= 1e-15 * span:
        return "on"
    if abs(rho - pi) < 1e-12 * span:
        raise CaseBoundary(
            f"proportion {rho} is ambiguously close to the Merton "
            f"proportion {pi}; pass the case explicitly")
    w = bundle.params.lam ** (1.0 / 3.0)
    for slope in (bundle.wedge_lo, bundle.wedge_hi):
        if slope is not None and abs(rho - slope.eval(w)) < 1e-12 * span:
            raise CaseBoundary(
                f"proportion {rho} sits on a wedge boundary at this "
                f"cost; pass the case explicitly")
    return "below" if rho < pi else "above"


def _position_curve(bundle, rho, n):
    """The interior starting position as a curve in z2.

    x-hat solves: rho equals the risky proportion held at position x
    under the deflator, which clears to
    rho ((1-p)(1-E) x + p g E) - (1-p) x = 0 with
    E = exp(G(z2,z2) - G(x,z2)).  The residual's coefficient at order k
    is affine in the k-th position coefficient (the slope at the center
    is -(1-p), never zero), so each order is two probes and one division.
    """
    params = bundle.params
    g = bundle.g_series
    G = bundle.G_series
    x_N = g.center[0]
    p = params.p
    m2 = g.orders[1]
    ident = UnivariateSeries(x_N, [x_N, 1.0] + [0.0] * (m2 - 1))
    g_diag = bi_subst(G, ident, ident)

    coeffs = np.zeros(n + 1)
    coeffs[0] = x_N

    def defect(c):
        xs = UnivariateSeries(x_N, c)
        e = uni_map(g_diag - bi_subst(G, xs, ident), "exp")
        gx = bi_subst(g, xs, ident)
        r = (rho * ((1.0 - p) * (1.0 - e) * xs + p * gx * e)
             - (1.0 - p) * xs)
        return r.coeffs

    for k in range(1, n + 1):
        step = _probe_step(coeffs, k) if k >= 2 else 1.0
        coeffs[k] = 0.0
        at0 = defect(coeffs)[k]
        coeffs[k] = step
        ats = defect(coeffs)[k]
        if at0 == ats:
            raise NewtonDivergence(
                f"interior position update degenerates at order {k}")
        coeffs[k] = step * at0 / (at0 - ats)
    return UnivariateSeries(x_N, coeffs)
