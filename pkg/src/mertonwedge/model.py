"""Market model: parameter validation and closed-form ingredients.

The optimal investment/consumption problem with proportional transaction
costs and power utility is governed by five constants: drift ``mu``,
volatility ``sigma``, impatience rate ``delta``, risk-aversion exponent
``p`` and the proportional cost ``lam``.  This module validates them,
derives the frictionless quantities (the Merton proportion ``pi`` and the
distinguished point ``(x_N, y_N)`` that the no-trade strip shrinks to as
the cost vanishes), and evaluates the two closed forms shared by the
numeric solver and the series engine:

* ``eval_L`` -- the rational slope field L(x, z) of the free-boundary ODE
  g'(x) = L(x, g(x)),
* ``eval_T`` -- the boundary curve T(x), the "+sqrt" root in z of L's
  numerator, which supplies the initial value g(alpha) = T(alpha).

Both are rational/algebraic in (x, z); their coefficient tables live in
``l_rational_coeffs`` so that every consumer (pointwise evaluation here,
series arithmetic in the expansion engine) works from one source.

A note on T's radicand: the constant multiplying x^2 inside the square
root is the well-posedness margin K = 2*sigma^2*delta*(1-p) - p*mu^2.
Deriving T as a root of L's numerator forces this constant; any variant
without the delta factor fails the identity T(x_N) = y_N, which the test
suite checks to near machine precision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import BadRange, DenominatorZero, IllPosed, OutOfDomain, UnitMerton

#: Costs at or above this ceiling are rejected: the solver targets the
#: small-cost regime and reports failure rather than extrapolating.
LAMBDA_CEILING = 0.2

#: Proportions within this distance of 1 are treated as the excluded case.
_UNIT_PI_TOL = 1e-12


@dataclass(frozen=True)
class MertonQuantities:
    """Derived frictionless quantities for a validated parameter set.

    Attributes
    ----------
    pi : float
        Merton proportion mu / (sigma^2 (1-p)).
    x_N : float
        Abscissa of the collapse point; positive for both signs of p.
    y_N : float
        Ordinate of the collapse point; carries the sign of p.
    margin : float
        Well-posedness margin K = 2 sigma^2 delta (1-p) - p mu^2.
    sgn_p : int
        Sign of p, in {-1, +1}.
    q : float
        The exponent ratio p / (1-p).
    """

    pi: float
    x_N: float
    y_N: float
    margin: float
    sgn_p: int
    q: float


def validate_params(mu: float, sigma: float, delta: float, p: float,
                    lam: float) -> MertonQuantities:
    """Check the five raw constants and return the derived quantities.

    Raises
    ------
    BadRange
        If any constant is outside its admissible range (mu, sigma,
        delta positive; p in (-inf, 1) excluding 0; lam in
        [0, LAMBDA_CEILING)).
    IllPosed
        If the margin K = 2 sigma^2 delta (1-p) - p mu^2 is not positive.
    UnitMerton
        If the Merton proportion equals one (within 1e-12).
    """
    for name, value in (("mu", mu), ("sigma", sigma), ("delta", delta),
                        ("p", p), ("lam", lam)):
        if not isinstance(value, (int, float)) or not math.isfinite(value):
            raise BadRange(f"{name} must be a finite real, got {value!r}")
    if mu <= 0:
        raise BadRange(f"mu must be positive, got {mu}")
    if sigma <= 0:
        raise BadRange(f"sigma must be positive, got {sigma}")
    if delta <= 0:
        raise BadRange(f"delta must be positive, got {delta}")
    if p == 0 or p >= 1:
        raise BadRange(f"p must lie in (-inf, 1) excluding 0, got {p}")
    if lam < 0 or lam >= LAMBDA_CEILING:
        raise BadRange(
            f"lam must lie in [0, {LAMBDA_CEILING}), got {lam}")

    margin = 2.0 * sigma**2 * delta * (1.0 - p) - p * mu**2
    if margin <= 0:
        raise IllPosed(
            f"well-posedness margin 2*sigma^2*delta*(1-p) - p*mu^2 = "
            f"{margin} is not positive")

    pi = mu / (sigma**2 * (1.0 - p))
    if abs(pi - 1.0) <= _UNIT_PI_TOL:
        raise UnitMerton(f"Merton proportion {pi} equals one")

    sgn_p = 1 if p > 0 else -1
    x_N = 2.0 * sgn_p * p * mu / margin
    y_N = 2.0 * sgn_p * (1.0 - p) ** 2 * sigma**2 / margin
    q = p / (1.0 - p)
    return MertonQuantities(pi=pi, x_N=x_N, y_N=y_N, margin=margin,
                            sgn_p=sgn_p, q=q)


@dataclass(frozen=True)
class MarketParams:
    """Validated, immutable model constants.

    Construction runs the full validation, so any instance in hand
    satisfies the standing assumptions (positive margin, proportion
    different from one, cost below the ceiling).
    """

    mu: float
    sigma: float
    delta: float
    p: float
    lam: float

    def __post_init__(self):
        validate_params(self.mu, self.sigma, self.delta, self.p, self.lam)

    def quantities(self) -> MertonQuantities:
        """Derived frictionless quantities for this parameter set."""
        return validate_params(self.mu, self.sigma, self.delta, self.p,
                               self.lam)


def l_rational_coeffs(params: MarketParams):
    """Coefficient tables of the slope field L = P / Q.

    Both the numerator P(x, z) and the denominator Q(x, z) are quadratic
    in z with polynomial-in-x coefficients.  Returns a pair
    ``(p_polys, q_polys)``; each entry is a 3-tuple indexed by the power
    of z, and each element is a tuple of x-polynomial coefficients in
    ascending order.  The cost parameter does not enter.
    """
    mu, sigma, delta, p = params.mu, params.sigma, params.delta, params.p
    sgn = 1.0 if p > 0 else -1.0
    p_polys = (
        (0.0, 0.0, -sigma**2 * (1.0 - p) ** 3),
        (2.0 * p * (1.0 - p) * sgn, 2.0 * p * (1.0 - p) * mu),
        (-2.0 * delta * p,),
    )
    q_polys = (
        (0.0, 2.0 * sgn * (1.0 - p),
         (1.0 - p) * (2.0 * mu + sigma**2 * (p**2 - 1.0))),
        (-2.0 * p * (1.0 - p) * sgn,
         -(2.0 * delta + p * (1.0 - p) * (2.0 * mu - sigma**2))),
        (2.0 * delta * p,),
    )
    return p_polys, q_polys


def _eval_poly(coeffs, x: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


def eval_L(x: float, z: float, params: MarketParams) -> float:
    """Evaluate the slope field L(x, z) of the free-boundary ODE.

    Raises
    ------
    DenominatorZero
        If Q(x, z) is exactly zero, which signals evaluation outside the
        regular region of the solution.
    """
    p_polys, q_polys = l_rational_coeffs(params)
    num = sum(_eval_poly(c, x) * z**k for k, c in enumerate(p_polys))
    den = sum(_eval_poly(c, x) * z**k for k, c in enumerate(q_polys))
    if den == 0.0:
        raise DenominatorZero(f"denominator of L vanishes at ({x}, {z})")
    return num / den


def t_radicand(x: float, params: MarketParams) -> float:
    """Radicand of the boundary curve: p*(p + 2*sgn(p)*p*mu*x - K*x^2)."""
    p, mu = params.p, params.mu
    sgn = 1.0 if p > 0 else -1.0
    margin = 2.0 * params.sigma**2 * params.delta * (1.0 - p) - p * mu**2
    return p * (p + 2.0 * sgn * p * mu * x - margin * x**2)


def eval_T(x: float, params: MarketParams) -> float:
    """Evaluate the boundary curve T(x), the "+sqrt" root of L's numerator.

    T supplies the left-boundary initial value of the free-boundary ODE
    and satisfies T(x_N) = y_N (the radicand collapses to p^2 there) and
    T(0) = (1-p) sgn(p) / delta.

    Raises
    ------
    OutOfDomain
        If the radicand is negative; the positive margin forces this for
        all sufficiently large x.
    """
    p, mu, delta = params.p, params.mu, params.delta
    sgn = 1.0 if p > 0 else -1.0
    rad = t_radicand(x, params)
    if rad < 0:
        raise OutOfDomain(
            f"boundary curve radicand is negative at x = {x}")
    return (p * (1.0 - p) * (sgn + mu * x)
            + (1.0 - p) * math.sqrt(rad)) / (2.0 * delta * p)
