"""Parameter validation and the closed forms L and T."""

import math

import numpy as np
import pytest

from mertonwedge.errors import (
    BadRange,
    DenominatorZero,
    IllPosed,
    OutOfDomain,
    UnitMerton,
)
from mertonwedge.model import (
    MarketParams,
    eval_L,
    eval_T,
    l_rational_coeffs,
    t_radicand,
    validate_params,
)

from conftest import SET_A, SET_B, draw_params


def test_reference_set_a_quantities():
    q = validate_params(0.1, 0.4, 0.1, 0.5, 0.01)
    assert q.pi == pytest.approx(1.25, rel=1e-14)
    assert q.margin == pytest.approx(0.011, rel=1e-14)
    assert q.x_N == pytest.approx(100.0 / 11.0, rel=1e-14)
    assert q.y_N == pytest.approx(80.0 / 11.0, rel=1e-14)
    assert q.sgn_p == 1
    assert q.q == pytest.approx(1.0, rel=1e-14)


def test_reference_set_b_quantities():
    q = validate_params(0.08, 0.25, 0.1, -1.0, 0.001)
    assert q.pi == pytest.approx(0.64, rel=1e-14)
    assert q.margin == pytest.approx(0.0314, rel=1e-14)
    assert q.x_N == pytest.approx(800.0 / 157.0, rel=1e-14)
    assert q.y_N == pytest.approx(-2500.0 / 157.0, rel=1e-14)
    assert q.sgn_p == -1
    assert q.q == pytest.approx(-0.5, rel=1e-14)


def test_negative_margin_rejected():
    # 2*0.04*0.05*0.5 - 0.5*0.04 = -0.018
    with pytest.raises(IllPosed):
        validate_params(0.2, 0.2, 0.05, 0.5, 0.0)


def test_unit_proportion_rejected():
    # mu = sigma^2 (1-p) makes the proportion exactly one
    with pytest.raises(UnitMerton):
        validate_params(0.08, 0.4, 0.1, 0.5, 0.0)


@pytest.mark.parametrize("kwargs", [
    dict(mu=-0.1), dict(mu=0.0), dict(sigma=0.0), dict(sigma=-1.0),
    dict(delta=0.0), dict(p=0.0), dict(p=1.0), dict(p=1.5),
    dict(lam=-0.01), dict(lam=0.2), dict(lam=0.5),
    dict(mu=float("nan")), dict(sigma=float("inf")),
])
def test_bad_ranges_rejected(kwargs):
    raw = dict(mu=0.1, sigma=0.4, delta=0.1, p=0.5, lam=0.01)
    raw.update(kwargs)
    with pytest.raises(BadRange):
        validate_params(**raw)


def test_params_dataclass_validates_on_construction():
    with pytest.raises(IllPosed):
        MarketParams(mu=0.2, sigma=0.2, delta=0.05, p=0.5, lam=0.0)
    p = MarketParams(lam=0.01, **SET_A)
    assert p.quantities().pi == pytest.approx(1.25, rel=1e-14)


def test_random_sets_quantities_and_field_zero():
    rng = np.random.default_rng(20240817)
    for _ in range(200):
        params = draw_params(rng)
        q = params.quantities()
        assert q.x_N > 0
        assert math.copysign(1.0, q.y_N) == q.sgn_p
        assert abs(eval_L(q.x_N, q.y_N, params)) < 1e-12 * (1 + abs(q.y_N))


def test_boundary_curve_is_root_of_numerator(params_a, params_b):
    for params in (params_a, params_b):
        q = params.quantities()
        p_polys, _ = l_rational_coeffs(params)
        for x in np.linspace(0.9 * q.x_N, 1.1 * q.x_N, 41):
            if t_radicand(x, params) < 0:
                continue
            z = eval_T(x, params)
            monos = [sum(c * x**k for k, c in enumerate(poly)) * z**j
                     for j, poly in enumerate(p_polys)]
            scale = max(abs(m) for m in monos)
            assert abs(sum(monos)) < 1e-10 * scale


def test_boundary_curve_through_collapse_point(params_a, params_b):
    for params in (params_a, params_b):
        q = params.quantities()
        assert eval_T(q.x_N, params) == pytest.approx(q.y_N, rel=1e-12)
        # the radicand collapses to p^2 there
        assert t_radicand(q.x_N, params) == pytest.approx(
            params.p**2, rel=1e-10)


def test_boundary_curve_at_origin(params_a):
    # (1-p) sgn(p) / delta = 0.5 / 0.1
    assert eval_T(0.0, params_a) == pytest.approx(5.0, rel=1e-14)


def test_boundary_curve_domain_ends(params_a):
    # the positive margin forces the radicand negative for large x
    with pytest.raises(OutOfDomain):
        eval_T(100.0, params_a)


def test_field_ignores_cost(params_a):
    other = MarketParams(lam=0.0, **SET_A)
    for x, z in [(5.0, 6.0), (9.0, 7.3), (10.0, 7.0)]:
        assert eval_L(x, z, params_a) == eval_L(x, z, other)


def test_field_denominator_zero_detected(params_a):
    # P and Q both vanish at the origin; the evaluation must refuse
    with pytest.raises(DenominatorZero):
        eval_L(0.0, 0.0, params_a)


def test_field_matches_direct_formula(params_b):
    # spot-check the coefficient table against a literal transcription
    mu, sigma, delta, p = (SET_B["mu"], SET_B["sigma"], SET_B["delta"],
                           SET_B["p"])
    sgn = -1.0
    for x, z in [(5.0, -16.0), (4.5, -15.0), (5.5, -17.0)]:
        num = (-sigma**2 * (1 - p) ** 3 * x**2
               + 2 * p * (1 - p) * (sgn + mu * x) * z
               - 2 * delta * p * z**2)
        den = ((1 - p) * x * (2 * sgn + 2 * mu * x + sigma**2 * (p**2 - 1))
               - (2 * delta * x + p * (1 - p) * (2 * sgn + 2 * mu * x
                                                 - sigma**2 * x)) * z
               + 2 * delta * p * z**2)
        assert eval_L(x, z, params_b) == pytest.approx(num / den, rel=1e-14)
