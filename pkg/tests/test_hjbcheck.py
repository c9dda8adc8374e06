"""Variational-bracket checks and the numeric-versus-series harness."""

import math
from dataclasses import replace

import numpy as np
import pytest

from mertonwedge.errors import DegenerateFit, SignChange
from mertonwedge.freeboundary import solve_free_boundary, wedge_slopes
from mertonwedge.hjbcheck import (
    QUANTITIES,
    ValidationReport,
    ValidationRow,
    convergence_slope,
    cross_validate,
    h_profile,
    hjb_residual,
)
from mertonwedge.model import MarketParams
from mertonwedge.odeint import eval_leg

from conftest import SET_A, SET_B


@pytest.fixture(scope="module")
def sol_a():
    return solve_free_boundary(MarketParams(lam=0.01, **SET_A))


@pytest.fixture(scope="module")
def sol_b():
    return solve_free_boundary(MarketParams(lam=0.001, **SET_B))


def _interior_grid(sol, n=50):
    return np.linspace(sol.x_lo, sol.x_hi, n + 2)[1:-1]


class TestHjbResidual:
    def test_vanishes_on_solved_strip_a(self, sol_a):
        worst = max(abs(hjb_residual(sol_a, float(x)))
                    for x in _interior_grid(sol_a))
        assert worst < 1e-10

    def test_vanishes_on_solved_strip_b(self, sol_b):
        worst = max(abs(hjb_residual(sol_b, float(x)))
                    for x in _interior_grid(sol_b))
        assert worst < 1e-10

    def test_finite_and_small_at_endpoints(self, sol_a):
        # g' vanishes at both ends; the cancelled quadratic term must
        # keep the bracket finite there, not blow up through h**2
        for x in (sol_a.x_lo, sol_a.x_hi):
            r = hjb_residual(sol_a, x)
            assert math.isfinite(r)
            assert abs(r) < 1e-10

    def test_detects_wrong_equation(self, sol_a):
        # same solved curve, different drift: the bracket is evaluated
        # against an equation the curve does not solve, so it must move
        # well away from zero
        doctored = replace(sol_a, params=replace(sol_a.params, mu=0.11))
        mid = 0.5 * (sol_a.x_lo + sol_a.x_hi)
        assert abs(hjb_residual(doctored, mid)) > 1e-3

    def test_scales_with_perturbation(self, sol_a):
        mid = 0.5 * (sol_a.x_lo + sol_a.x_hi)
        base = sol_a.params
        small = abs(hjb_residual(
            replace(sol_a, params=replace(base, mu=base.mu * 1.0001)), mid))
        large = abs(hjb_residual(
            replace(sol_a, params=replace(base, mu=base.mu * 1.01)), mid))
        assert 0.0 < small < large


class TestHProfile:
    def test_sign_and_floor_a(self, sol_a):
        h_min, sign = h_profile(sol_a)
        quant = sol_a.params.quantities()
        assert sign == 1.0
        assert h_min > 0.1 * abs(quant.q * quant.y_N)

    def test_sign_and_floor_b(self, sol_b):
        h_min, sign = h_profile(sol_b)
        quant = sol_b.params.quantities()
        assert sign == 1.0
        assert h_min > 0.1 * abs(quant.q * quant.y_N)

    def test_approaches_frictionless_limit(self):
        # as the cost shrinks the strip collapses onto the flat point,
        # where h = q * g = q * y_N exactly
        params = MarketParams(lam=1e-8, **SET_A)
        sol = solve_free_boundary(params)
        h_min, _ = h_profile(sol)
        quant = params.quantities()
        assert h_min == pytest.approx(abs(quant.q * quant.y_N), rel=1e-2)

    def test_detects_sign_change(self, sol_a):
        # shrinking the exponent shrinks q g against (q+1) x g', which
        # drags h negative mid-strip while the endpoints stay positive
        doctored = replace(sol_a, params=replace(sol_a.params, p=0.02))
        with pytest.raises(SignChange):
            h_profile(doctored)


class TestCrossValidate:
    @pytest.fixture(scope="class")
    def report(self):
        params = MarketParams(lam=0.0, **SET_A)
        grid = (1e-5, 1e-4, 1e-3)
        return cross_validate(params, grid, n=3)

    def test_rows_sorted_and_complete(self, report):
        lams = [row.lam for row in report.rows]
        assert lams == sorted(lams)
        assert len(lams) == 3
        assert report.order == 3

    def test_row_structure(self, report):
        for row in report.rows:
            assert row.error is None
            assert set(row.predictions) == set(QUANTITIES)
            assert set(row.differences) == set(QUANTITIES)
            for name in QUANTITIES:
                assert len(row.predictions[name]) == 3
                assert len(row.differences[name]) == 3

    def test_numerics_match_direct_solve(self, report):
        row = report.rows[-1]
        sol = solve_free_boundary(MarketParams(lam=row.lam, **SET_A))
        assert row.x_lo == pytest.approx(sol.x_lo, rel=1e-9)
        assert row.x_hi == pytest.approx(sol.x_hi, rel=1e-9)
        slopes = wedge_slopes(sol)
        assert row.pi_lo == pytest.approx(slopes.pi_lo, rel=1e-9)
        assert row.pi_hi == pytest.approx(slopes.pi_hi, rel=1e-9)

    def test_differences_shrink_with_cost(self, report):
        # order-3 truncations: every quantity's gap must shrink as the
        # cost does, by roughly the extra power the truncation carries
        for name in QUANTITIES:
            gaps = [row.differences[name][2] for row in report.rows]
            assert gaps[0] < gaps[1] < gaps[2]

    def test_diagnostics_within_bounds(self, report):
        quant = MarketParams(lam=0.0, **SET_A).quantities()
        scale = max(1.0, abs(quant.y_N), quant.x_N)
        for row in report.rows:
            assert row.hjb_max_residual < 1e-8 * scale
            assert row.h_min_abs > 0.1 * abs(quant.q * quant.y_N)
            assert row.h_sign == 1.0
            assert row.f_err_lo < 1e-10
            assert row.f_err_hi < 1e-10

    def test_failed_row_is_marked_not_fatal(self):
        params = MarketParams(lam=0.0, **SET_A)
        report = cross_validate(params, (1e-4, 0.3), n=2)
        good, bad = report.rows
        assert good.error is None
        assert bad.error is not None
        assert math.isnan(bad.x_lo)
        assert math.isnan(bad.u)
        # predictions are series evaluations and survive the failure
        assert all(math.isfinite(v) for v in bad.predictions["x_lo"])


def _synthetic_report(diffs_fn, lams=None, order=1):
    """Rows whose differences follow a prescribed law of the cost."""
    lams = lams or [10.0 ** (-6 + 0.5 * k) for k in range(9)]
    rows = []
    for lam in lams:
        d = diffs_fn(lam)
        rows.append(ValidationRow(
            lam=lam, x_lo=9.0, x_hi=9.2, pi_lo=1.2, pi_hi=1.3, u=5.4,
            predictions={name: [0.0] * order for name in QUANTITIES},
            differences={name: [d] * order for name in QUANTITIES},
            hjb_max_residual=0.0, h_min_abs=7.0, h_sign=1.0,
            f_err_lo=0.0, f_err_hi=0.0))
    params = MarketParams(lam=0.0, **SET_A)
    return ValidationReport(params=params, order=order, rows=tuple(rows))


class TestConvergenceSlope:
    def test_recovers_two_thirds(self):
        report = _synthetic_report(lambda lam: lam ** (2.0 / 3.0))
        slope = convergence_slope(report, "u", 1)
        assert slope == pytest.approx(2.0 / 3.0, abs=1e-9)

    def test_recovers_linear(self):
        report = _synthetic_report(lambda lam: 3.7 * lam)
        slope = convergence_slope(report, "x_lo", 1)
        assert slope == pytest.approx(1.0, abs=1e-9)

    def test_floor_points_dropped(self):
        # half the grid at the floating-point floor: only the genuine
        # points may enter the fit
        def diffs(lam):
            return lam if lam > 3e-5 else 1e-18
        report = _synthetic_report(diffs)
        slope = convergence_slope(report, "u", 1)
        assert slope == pytest.approx(1.0, abs=1e-9)

    def test_all_floor_raises(self):
        report = _synthetic_report(lambda lam: 1e-18)
        with pytest.raises(DegenerateFit):
            convergence_slope(report, "u", 1)

    def test_skips_failed_rows(self):
        report = _synthetic_report(lambda lam: lam)
        rows = list(report.rows)
        rows[0] = replace(rows[0], error="boom", x_lo=float("nan"))
        report = ValidationReport(params=report.params, order=report.order,
                                  rows=tuple(rows))
        slope = convergence_slope(report, "u", 1)
        assert slope == pytest.approx(1.0, abs=1e-9)

    def test_rejects_unknown_quantity(self):
        report = _synthetic_report(lambda lam: lam)
        with pytest.raises(KeyError):
            convergence_slope(report, "volume", 1)

    def test_rejects_bad_truncation(self):
        report = _synthetic_report(lambda lam: lam)
        with pytest.raises(IndexError):
            convergence_slope(report, "u", 2)


class TestMeasuredRates:
    """Decay rates measured on real solves for the negative-exponent set.

    The first-order boundary truncation misses at the next fractional
    power, two-thirds beyond its own, so its gap decays like the cost
    itself.
    """

    @pytest.fixture(scope="class")
    def report_b(self):
        params = MarketParams(lam=0.0, **SET_B)
        grid = tuple(10.0 ** (-6.0 + 0.5 * k) for k in range(7))
        return cross_validate(params, grid, n=2)

    def test_boundary_first_order_rate(self, report_b):
        slope = convergence_slope(report_b, "x_lo", 1)
        assert slope == pytest.approx(2.0 / 3.0, abs=0.2)

    def test_boundary_second_order_rate(self, report_b):
        slope = convergence_slope(report_b, "x_lo", 2)
        assert slope == pytest.approx(1.0, abs=0.2)

    def test_value_first_order_rate(self, report_b):
        slope = convergence_slope(report_b, "u", 1)
        assert slope == pytest.approx(2.0 / 3.0, abs=0.15)
