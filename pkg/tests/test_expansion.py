"""Expansion pipeline against independently computed coefficients.

Expected values were frozen from a 50-digit arbitrary-precision solve
of the same constraint systems (triangular elimination, no Newton
iteration), so agreement here is evidence the stacked solver lands on
the correct surface rather than reproducing its own arithmetic.
"""

import numpy as np
import pytest

from mertonwedge.errors import (BadRange, BranchAmbiguity,
                                BranchSelectionFailure, CaseBoundary,
                                LeadingCoefficientZero)
from mertonwedge.expansion import (build_bundle, compute_beta_series,
                                   compute_c_F_alpha,
                                   compute_value_series)
from mertonwedge.freeboundary import Endowment
from mertonwedge.model import MarketParams
from mertonwedge.powerseries import (BivariateSeries, UnivariateSeries,
                                     uni_compose, uni_map, bi_subst)

from conftest import SET_A, SET_B, draw_params

# Frozen from the arbitrary-precision solve, 17 significant digits.
SURFACE_A = {(0, 2): -0.04, (0, 3): -0.084666666666666667,
             (1, 2): 0.121, (3, 0): -0.040333333333333333,
             (0, 4): -0.06167375, (1, 3): 0.25611666666666667,
             (2, 2): -0.2622675, (4, 0): 0.067104583333333333}
SURFACE_B = {(0, 2): -0.125, (0, 3): -0.24359053497942387,
             (1, 2): 0.3803858024691358, (3, 0): -0.12679526748971193,
             (0, 4): -0.32188354689405197, (1, 3): 0.74126704897627394,
             (2, 2): -0.46817097967630697, (4, 0): 0.048768727594084997}
FLAT_A = [-1.0, -2.1166666666666667, -4.4802777777777778,
          -12.146386259259259]
FLAT_B = [-1.0, -1.9487242798353909, -3.7975263188199631,
          -7.9437872664004308]
INVERSE_A = [-3.8337848422806784, -15.555284079553649,
             3.4197658402203857, -4.4625946455125331,
             -234.4269251581879]
INVERSE_B = [-2.1577896203641418, -4.536684732314889,
             -1.0478785940614457, 9.3971998710242108,
             3.1848723469001215]
CUBIC_A = -0.017746666666666667
CUBIC_B = -0.099534284979423868
WEDGE_LO_A = [1.25, -0.52714541581359328, -2.0378034556974318,
              1.2088541666666667, -0.069370872428247171]
WEDGE_HI_A = [1.25, 0.52714541581359328, -2.0378034556974318,
              -1.5213541666666667, -0.68437385754410599]
WEDGE_LO_B = [0.64, -0.27101837631773621, -0.59319962795260422,
              -0.22410781893004115, 1.0937259916486688]
WEDGE_HI_B = [0.64, 0.27101837631773621, -0.59319962795260422,
              0.45450781893004115, 1.1081803050522814]

# (endowment, case, zeta_0, zeta_2, zeta_3); zeta_1 vanishes everywhere.
VALUE_A = [
    (Endowment(1.0, 5.0 / 3.0, 1.0), "below", 8.8077101210108848,
     -0.35600096769673838, -2.7524094128159015),
    (Endowment(-0.25, 1.25, 1.0), "on", 5.3935988997059367,
     -0.21800517969851155, -1.6854996561581052),
    (Endowment(-0.875, 1.875, 1.0), "above", 5.3935988997059367,
     -0.21800517969851155, -3.3709993123162104),
]
VALUE_B = [
    (Endowment(1.0, 8.0 / 17.0, 1.0), "below", -172.42078786157653,
     -12.603973372256506, -55.174652115704491),
    (Endowment(1.0, 16.0 / 9.0, 1.0), "on", -91.281593573775812,
     -6.672691785312268, -29.21010994360826),
    (Endowment(1.0, 24.0, 1.0), "above", -10.14239928597509,
     -0.74141019836802978, -6.4911355430240578),
]


@pytest.fixture(scope="module")
def bundle_a():
    return build_bundle(MarketParams(lam=1e-4, **SET_A), 8)


@pytest.fixture(scope="module")
def bundle_b():
    return build_bundle(MarketParams(lam=1e-4, **SET_B), 8)


@pytest.mark.parametrize("which,expected", [("a", SURFACE_A),
                                            ("b", SURFACE_B)])
def test_surface_coefficients(which, expected, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    a = bundle.g_series.coeffs
    quant = bundle.params.quantities()
    assert a[0, 0] == pytest.approx(quant.y_N, rel=1e-13)
    for idx in [(1, 0), (2, 0), (0, 1), (1, 1), (2, 1), (3, 1)]:
        assert abs(a[idx]) < 1e-9
    for (i, j), value in expected.items():
        assert a[i, j] == pytest.approx(value, rel=1e-8)


@pytest.mark.parametrize("which,expected", [("a", FLAT_A), ("b", FLAT_B)])
def test_flat_curve_coefficients(which, expected, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    b = bundle.beta_series.coeffs
    assert b[0] == bundle.params.quantities().x_N
    assert b[1] == pytest.approx(-1.0, abs=1e-9)
    for k, value in enumerate(expected, start=1):
        assert b[k] == pytest.approx(value, rel=1e-8)


@pytest.mark.parametrize("which,expected", [("a", INVERSE_A),
                                            ("b", INVERSE_B)])
def test_boundary_inverse_coefficients(which, expected, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    alpha = bundle.alpha_series
    quant = bundle.params.quantities()
    assert alpha.center == 0.0
    assert alpha.coeffs[0] == quant.x_N
    assert alpha.coeffs[1] < 0.0
    for k, value in enumerate(expected, start=1):
        assert alpha.coeffs[k] == pytest.approx(value, rel=1e-7)


@pytest.mark.parametrize("which,expected", [("a", CUBIC_A), ("b", CUBIC_B)])
def test_cubic_coefficient_and_link(which, expected, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    c0 = bundle.c_series.coeffs[0]
    assert c0 < 0.0
    assert c0 == pytest.approx(expected, rel=1e-8)
    # the linear boundary shift is the real inverse cube root of c_0
    assert bundle.alpha_series.coeffs[1] == pytest.approx(
        -abs(c0) ** (-1.0 / 3.0), rel=1e-9)


@pytest.mark.parametrize("which,lo,hi", [("a", WEDGE_LO_A, WEDGE_HI_A),
                                         ("b", WEDGE_LO_B, WEDGE_HI_B)])
def test_wedge_slope_series(which, lo, hi, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    assert bundle.wedge_lo.order == bundle.order
    assert bundle.wedge_hi.order == bundle.order
    for k in range(5):
        assert bundle.wedge_lo.coeffs[k] == pytest.approx(
            lo[k], rel=1e-8, abs=1e-12)
        assert bundle.wedge_hi.coeffs[k] == pytest.approx(
            hi[k], rel=1e-8, abs=1e-12)


@pytest.mark.parametrize("which", ["a", "b"])
def test_wedge_slope_closed_forms(which, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    p = bundle.params.p
    quant = bundle.params.quantities()
    pi, sigma = quant.pi, bundle.params.sigma
    s1 = -np.cbrt(3.0 * pi**2 * (1.0 - pi) ** 2 / (4.0 * (1.0 - p)))
    s2 = -pi * quant.margin / (
        2.0 * sigma**4 * (1.0 - p) ** 2
        * np.cbrt(6.0 * pi**2 * (1.0 - pi) ** 2 * (1.0 - p) ** 2))
    assert bundle.wedge_lo.coeffs[0] == pytest.approx(pi, rel=1e-12)
    assert bundle.wedge_hi.coeffs[0] == pytest.approx(pi, rel=1e-12)
    assert bundle.wedge_lo.coeffs[1] == pytest.approx(s1, rel=1e-9)
    assert bundle.wedge_hi.coeffs[1] == pytest.approx(-s1, rel=1e-9)
    assert bundle.wedge_lo.coeffs[2] == pytest.approx(s2, rel=1e-9)
    assert bundle.wedge_hi.coeffs[2] == pytest.approx(s2, rel=1e-9)


@pytest.mark.parametrize("which", ["a", "b"])
def test_residual_report_bound(which, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    quant = bundle.params.quantities()
    scale = max(1.0, abs(quant.y_N), quant.x_N)
    assert 0.0 <= bundle.residual_report < 1e-9 * scale


def _reversion_defect(bundle):
    alpha = bundle.alpha_series
    x_N = alpha.coeffs[0]
    shifted = UnivariateSeries(0.0, alpha.coeffs
                               - np.concatenate([[x_N],
                                                 np.zeros(alpha.order)]))
    rev = shifted * uni_compose(bundle.F_series, alpha)
    target = np.zeros(rev.order + 1)
    target[1] = 1.0
    return np.max(np.abs(rev.coeffs - target))


def _reconstruction_defect(bundle):
    alpha = bundle.alpha_series
    beta_at = uni_compose(bundle.beta_series, alpha)
    recon = 1.0 - uni_map(
        bi_subst(bundle.G_series, alpha, alpha)
        - bi_subst(bundle.G_series, beta_at, alpha), "exp")
    target = np.zeros(recon.order + 1)
    target[3] = 1.0
    return np.max(np.abs(recon.coeffs - target))


@pytest.mark.parametrize("which", ["a", "b"])
def test_reversion_identity(which, request):
    assert _reversion_defect(request.getfixturevalue(f"bundle_{which}")) \
        < 1e-9


@pytest.mark.parametrize("which", ["a", "b"])
def test_cost_reconstruction_identity(which, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    assert _reconstruction_defect(bundle) < 1e-9


def test_identities_on_random_draws():
    rng = np.random.default_rng(7)
    for _ in range(3):
        bundle = build_bundle(draw_params(rng, lam=1e-4), 5)
        assert _reversion_defect(bundle) < 1e-9
        assert _reconstruction_defect(bundle) < 1e-9


@pytest.mark.parametrize("which,rows", [("a", VALUE_A), ("b", VALUE_B)])
def test_value_series_three_cases(which, rows, request):
    bundle = request.getfixturevalue(f"bundle_{which}")
    for endow, case, z0, z2, z3 in rows:
        value = compute_value_series(bundle, endow, 8)
        assert value.case == case
        z = value.zeta.coeffs
        assert z[0] == pytest.approx(z0, rel=1e-8)
        assert abs(z[1]) <= 1e-10 * abs(z[0])
        assert z[2] == pytest.approx(z2, rel=1e-8)
        assert z[2] < 0.0
        assert z[3] == pytest.approx(z3, rel=1e-8)
        if case == "on":
            assert value.xhat_series is not None
            assert value.xhat_series.coeffs[0] == \
                bundle.params.quantities().x_N
        else:
            assert value.xhat_series is None


def test_exact_merton_proportion_is_on(bundle_a):
    value = compute_value_series(bundle_a, Endowment(-0.25, 1.25, 1.0), 4)
    assert value.case == "on"


def test_case_boundary_near_merton(bundle_a):
    pi = bundle_a.params.quantities().pi
    eta_s = pi + 2e-13
    endow = Endowment(1.0 - eta_s, eta_s, 1.0)
    with pytest.raises(CaseBoundary):
        compute_value_series(bundle_a, endow, 4)
    forced = compute_value_series(bundle_a, endow, 4, case="on")
    assert forced.case == "on"


def test_case_boundary_on_wedge_edge(bundle_a):
    w = bundle_a.params.lam ** (1.0 / 3.0)
    rho = bundle_a.wedge_lo.eval(w)
    endow = Endowment(1.0 - rho, rho, 1.0)
    with pytest.raises(CaseBoundary):
        compute_value_series(bundle_a, endow, 4)
    forced = compute_value_series(bundle_a, endow, 4, case="below")
    assert forced.case == "below"


def test_value_rejects_insolvent_endowment(bundle_a):
    with pytest.raises(BadRange):
        compute_value_series(bundle_a, Endowment(0.5, -2.0, 1.0), 4)


def test_value_rejects_unknown_case(bundle_a):
    with pytest.raises(BadRange):
        compute_value_series(bundle_a, Endowment(1.0, 1.0, 1.0), 4,
                             case="sideways")


def test_build_bundle_rejects_bad_order(params_a):
    with pytest.raises(BadRange):
        build_bundle(params_a, 0)


def test_flat_curve_needs_genuine_quadratic(params_a):
    x_N = params_a.quantities().x_N
    coeffs = np.zeros((6, 5))
    coeffs[0, 0] = params_a.quantities().y_N
    degenerate = BivariateSeries((x_N, x_N), coeffs)
    with pytest.raises(BranchAmbiguity):
        compute_beta_series(degenerate, 2)


def _crafted_pieces(params):
    x_N = params.quantities().x_N
    g = np.zeros((6, 5))
    g[0, 0] = params.quantities().y_N
    g_series = BivariateSeries((x_N, x_N), g)
    beta = UnivariateSeries(x_N, [x_N, -1.0, 0.0, 0.0])
    return x_N, g_series, beta


def test_vanishing_cubic_coefficient_detected(params_a):
    x_N, g_series, beta = _crafted_pieces(params_a)
    flat_primitive = BivariateSeries((x_N, x_N), np.zeros((6, 5)))
    with pytest.raises(LeadingCoefficientZero):
        compute_c_F_alpha(params_a, g_series, beta, flat_primitive, 2)


def test_positive_cubic_coefficient_rejected(params_a):
    x_N, g_series, beta = _crafted_pieces(params_a)
    coeffs = np.zeros((6, 5))
    coeffs[3, 0] = -0.5
    primitive = BivariateSeries((x_N, x_N), coeffs)
    with pytest.raises(BranchSelectionFailure):
        compute_c_F_alpha(params_a, g_series, beta, primitive, 2)
