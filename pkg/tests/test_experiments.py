"""
Tests cho c-sweep engine: dự đoán exponent, fit, verdict, bảng sweep và một sweep nhỏ end-to-end
"""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from app.diagnostics import boundary_layer_norm
from app.exceptions import FitError
from app.experiments import (
    base_fields,
    classify_thresholds,
    epsilon_exponent,
    fit_rate,
    initial_em_state,
    predicted_exponent,
    run_sweep,
    series_rows,
    sort_rows,
    threshold_row,
    verdict_for_slope,
)
from app.models import Family, RateFit, StepperConfig, SweepPlan, SweepRow
from app.spectral import l2_norm, random_divfree_field


def _fit(slope: float) -> RateFit:
    return RateFit(quantity="q", pairs=[], slope=slope, intercept=0.0, stderr=0.0, r2=1.0)


def _rows(family, quantity, p, values, cs=(4.0, 8.0, 16.0)):
    return [SweepRow(family=family, c=c, p=p, quantity=quantity, value=v) for c, v in zip(cs, values)]


@pytest.fixture(scope="module")
def small_plan() -> SweepPlan:
    return SweepPlan(
        family=Family(kind="F1"),
        c_values=[4.0, 8.0, 16.0],
        n=8,
        stepper=StepperConfig(dt_max=0.01, t_end=0.05),
        t_star=0.025,
    )


@pytest.fixture(scope="module")
def small_sweep(small_plan):
    return run_sweep(small_plan, workers=1)


class TestFamily:
    """Family labels và electric scale"""

    @pytest.mark.parametrize("label", ["F1", "F3", "F2(beta=0.25)", "F4(alpha=1.5)"])
    def test_label_round_trip(self, label):
        assert Family.from_label(label).label == label

    def test_unknown_label(self):
        with pytest.raises(ValueError, match="unknown family"):
            Family.from_label("F5")

    def test_electric_scale(self):
        assert Family(kind="F1").electric_scale(16.0) == 1.0
        assert Family(kind="F2", beta=0.5).electric_scale(16.0) == pytest.approx(0.25)


class TestInitialData:
    """initial_em_state theo family"""

    def test_well_prepared(self, grid8):
        family = Family(kind="F3")
        fields = base_fields(grid8, family)
        ebar0 = random_divfree_field(grid8, 11)
        em = initial_em_state(family, fields, ebar0, 8.0)

        assert np.allclose(em.E.data, ebar0.data / 8.0, rtol=1e-15)
        assert np.array_equal(em.u.data, fields.u0.data)

    def test_fluid_perturbation(self, grid8):
        family = Family(kind="F4", alpha=2.0)
        fields = base_fields(grid8, family)
        em = initial_em_state(family, fields, random_divfree_field(grid8, 11), 4.0)
        assert l2_norm(em.u - fields.u0) == pytest.approx(l2_norm(fields.du) / 16.0, rel=1e-10)

    def test_f2_scaling(self, grid8):
        family = Family(kind="F2", beta=0.5)
        fields = base_fields(grid8, family)
        em = initial_em_state(family, fields, random_divfree_field(grid8, 11), 16.0)
        assert l2_norm(em.E) == pytest.approx(0.25 * l2_norm(fields.E_direction), rel=1e-12)

    def test_seeds_are_distinct(self, grid8):
        fields = base_fields(grid8, Family())
        assert not np.array_equal(fields.u0.data, fields.B0.data)


class TestFitRate:
    """fit_rate trên (log c, log value)"""

    def test_power_law(self):
        fit = fit_rate([(c, 3.0 * c ** -1.5) for c in (4.0, 8.0, 16.0, 32.0)], quantity="q")

        assert fit.slope == pytest.approx(-1.5, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log(3.0), abs=1e-12)
        assert fit.r2 == pytest.approx(1.0)
        assert fit.stderr <= 1e-10

    def test_nonpositive_values_excluded(self):
        fit = fit_rate([(2.0, 4.0), (4.0, 0.0), (8.0, 1.0), (16.0, 0.5)])
        assert len(fit.pairs) == 3

    def test_too_few_points(self):
        with pytest.raises(FitError, match=">= 3"):
            fit_rate([(4.0, 1.0), (8.0, 0.5), (16.0, -1.0)], quantity="E[p=2]")


class TestPredictions:
    """predicted_exponent và verdicts"""

    def test_epsilon_exponents(self):
        assert epsilon_exponent(Family(kind="F1")) == -1.0
        assert epsilon_exponent(Family(kind="F2", beta=0.5)) == -1.5
        assert epsilon_exponent(Family(kind="F3")) == -2.0
        assert epsilon_exponent(Family(kind="F4", alpha=3.0)) == -2.0

    @pytest.mark.parametrize("p, exponent", [(1.0, -1.0), (2.0, -1.0), (4.0, -0.5), (math.inf, 0.0)])
    def test_electric_field_fixed_data(self, p, exponent):
        assert predicted_exponent(Family(kind="F1"), "E", p) == (exponent, "rate")

    @pytest.mark.parametrize("p, exponent", [(1.0, -1.0), (2.0, 0.0), (math.inf, 1.0)])
    def test_boundary_layer_quantities(self, p, exponent):
        assert predicted_exponent(Family(kind="F1"), "cE_Ebar", p) == (exponent, "rate")
        assert predicted_exponent(Family(kind="F1"), "j_jbar", p) == (exponent, "rate")

    def test_f2(self):
        family = Family(kind="F2", beta=0.5)
        assert predicted_exponent(family, "E", math.inf) == (-0.5, "rate")
        assert predicted_exponent(family, "cE_Ebar", 2.0) == (-0.5, "rate")
        assert predicted_exponent(family, "uB_diff", 2.0) == (-1.5, "bound")

    def test_well_prepared(self):
        family = Family(kind="F3")
        assert predicted_exponent(family, "uB_diff", 2.0) == (-2.0, "rate")
        assert predicted_exponent(family, "cE_Ebar_sub", math.inf) == (-1.0, "bound")
        assert predicted_exponent(family, "cEL_Ebar", 2.0) is None
        assert predicted_exponent(family, "B_L", 2.0) is None

    @pytest.mark.parametrize("slope, verdict", [
        (-0.15, "converge"), (-0.149, "plateau"), (0.0, "plateau"), (0.149, "plateau"), (0.15, "diverge"),
    ])
    def test_verdict_threshold(self, slope, verdict):
        assert verdict_for_slope(slope) == verdict


class TestThresholdRow:
    """Match cho kind = rate và bound"""

    def test_rate_match(self):
        row = threshold_row(Family(kind="F1"), "E", math.inf, _fit(0.05))
        assert (row.kind, row.verdict, row.predicted, row.match) == ("rate", "plateau", "plateau", True)

    def test_rate_mismatch(self):
        row = threshold_row(Family(kind="F1"), "E", math.inf, _fit(-0.5))
        assert row.verdict == "converge"
        assert row.match is False

    def test_bound(self):
        family = Family(kind="F3")
        assert threshold_row(family, "cE_Ebar_sub", 2.0, _fit(-2.1)).match is True
        assert threshold_row(family, "cE_Ebar_sub", 2.0, _fit(-1.5)).match is False
        assert threshold_row(family, "cE_Ebar_sub", 2.0, _fit(-1.5)).predicted is None

    def test_no_prediction(self):
        row = threshold_row(Family(kind="F3"), "cEL_Ebar", 2.0, _fit(-1.0))
        assert row.predicted_exponent is None and row.match is None


class TestClassifyThresholds:
    """Gom bảng sweep thành verdict"""

    def test_groups(self):
        rows = (
            _rows("F1", "E", "inf", [1.0, 1.0, 1.0])
            + _rows("F1", "E", "2", [0.4, 0.2, 0.1])
            + _rows("F1", "epsilon0", "-", [0.25, 0.125, 0.0625])
            + _rows("F1", "B_L", "2", [1.0, 0.5, 0.25])
        )
        report = classify_thresholds(rows)

        assert len(report.rows) == 2
        assert report.find("E", "inf").verdict == "plateau"
        assert report.find("E", "2").slope == pytest.approx(-1.0)
        assert report.all_match

    def test_short_group_skipped(self):
        rows = _rows("F1", "E", "2", [0.4, 0.2], cs=(4.0, 8.0))
        assert classify_thresholds(rows).rows == []

    def test_sort_order(self):
        rows = _rows("F1", "E", "inf", [1.0, 1.0, 1.0]) + _rows("F1", "E", "4/3", [1.0, 1.0, 1.0])
        ordered = sort_rows(reversed(rows))
        assert [(r.p, r.c) for r in ordered][:3] == [("4/3", 4.0), ("4/3", 8.0), ("4/3", 16.0)]


class TestRunSweep:
    """Sweep nhỏ: n = 8, ba giá trị c"""

    def test_results_sorted_and_complete(self, small_sweep, small_plan):
        assert [r.c for r in small_sweep.results] == small_plan.c_values
        for r in small_sweep.results:
            assert len(r.times) == r.steps + 1
            assert r.times[-1] == pytest.approx(small_plan.T, rel=1e-9)
            assert all(len(s.values) == len(r.times) for s in r.series.values())

    def test_fixed_electric_field_plateaus(self, small_sweep):
        # sup‖Eᶜ‖ đạt tại t = 0 và bằng ‖e‖ với mọi c
        row = small_sweep.thresholds.find("E", "inf")
        assert row.verdict == "plateau"
        assert row.match is True

    def test_rows_and_reports(self, small_sweep, small_plan):
        quantities = {r.quantity for r in small_sweep.rows}
        assert {"uB_diff", "cE_Ebar", "epsilon0", "jump_defect", "u_diff_H1"} <= quantities
        assert small_sweep.rows == sort_rows(small_sweep.rows)
        assert [row.c for row in small_sweep.energy_flow.rows] == small_plan.c_values
        assert small_sweep.sharpness is not None and len(small_sweep.sharpness.electric) == 3
        assert small_sweep.smallness is not None
        assert set(small_sweep.hs_fits) == {"u_diff_H0", "B_diff_H0", "j_diff_H0",
                                            "u_diff_H1", "B_diff_H1", "j_diff_H1"}

    def test_epsilon0_rows(self, small_sweep):
        eps = [r.value for r in small_sweep.rows if r.quantity == "epsilon0"]
        assert all(b < a for a, b in zip(eps, eps[1:]))

    def test_series_rows(self, small_sweep):
        rows = series_rows(small_sweep.results)
        labels = {r.label for r in rows}
        assert "E@c=4" in labels and "uB_diff@c=16" in labels

    def test_electric_norm_keeps_layer_exact(self, small_sweep):
        for r in small_sweep.results:
            assert r.series["E_sub"].values[0] == pytest.approx(0.0, abs=1e-12)
            assert r.quantity_value("E", math.inf) >= math.sqrt(r.electric0)
            # layer e^{−c²t}E₀ᶜ không được lấy mẫu: p = 2 giữ phần giải tích
            layer = boundary_layer_norm(r.c, math.sqrt(r.electric0), 2.0, r.T)
            assert r.quantity_value("E", 2.0) >= 2.0 ** -0.5 * layer

    def test_error_functional_series(self, small_sweep):
        for r in small_sweep.results:
            parts = [np.asarray(r.series[k].values) for k in ("u_tilde", "E_tilde", "B_tilde")]
            floor = (r.gap.dE0_H1 ** 2 + 1.0) / r.c ** 4
            expected = np.sqrt(sum(v ** 2 for v in parts) + floor)
            assert np.allclose(r.series["error_functional"].values, expected, rtol=1e-12)

    def test_jbar_integral_is_trapezoid(self, small_sweep):
        r = small_sweep.results[0]
        integral = r.jbar_integral()
        assert integral[0] == 0.0
        assert integral[-1] == pytest.approx(trapezoid(r.jbar2, r.times), rel=1e-12)
        assert np.all(np.diff(integral) >= 0.0)

    def test_monitor_series(self, small_sweep):
        for r in small_sweep.results:
            assert len(r.series["X"].values) == len(r.times)
            assert min(r.series["A"].values) > 0.0
        a_rows = [row for row in small_sweep.rows if row.quantity == "A_sup"]
        assert len(a_rows) == len(small_sweep.results)
        assert all(row.value > 0.0 for row in a_rows)
        labels = {row.label for row in series_rows(small_sweep.results)}
        assert {"A@c=4", "X@c=16"} <= labels


# ================================================================
# c-SWEEP PROPERTIES (n = 16, T = 0.5, c = 4..32)
# ================================================================

ALL_P = [1.0, 4.0 / 3.0, 2.0, 4.0, math.inf]
VERDICT_QUANTITIES = ("E", "cE_Ebar", "j_jbar")


def _property_sweep(label: str):
    plan = SweepPlan(
        family=Family.from_label(label),
        c_values=[4.0, 8.0, 16.0, 32.0],
        n=16,
        p_values=ALL_P,
        stepper=StepperConfig(t_end=0.5),
        t_star=0.25,
    )
    return run_sweep(plan, workers=1)


@pytest.fixture(scope="module")
def f1_sweep():
    return _property_sweep("F1")


@pytest.fixture(scope="module")
def f2_sweep():
    return _property_sweep("F2(beta=0.5)")


@pytest.fixture(scope="module")
def f3_sweep():
    return _property_sweep("F3")


@pytest.mark.slow
class TestFixedElectricData:
    """F1: E₀ᶜ cố định, ℰ₀ᶜ ~ c^{−1}"""

    def test_fluid_difference_rate(self, f1_sweep):
        assert f1_sweep.thresholds.find("uB_diff", "inf").slope == pytest.approx(-1.0, abs=0.2)

    @pytest.mark.parametrize("p", ["2", "inf"])
    def test_layer_subtraction_gains(self, f1_sweep, p):
        inv_p = 0.0 if p == "inf" else 1.0 / float(p)
        assert f1_sweep.thresholds.find("cE_Ebar_sub", p).slope <= (1.0 - 2.0 * inv_p) - 0.7

    def test_threshold_verdicts(self, f1_sweep):
        rows = [r for r in f1_sweep.thresholds.rows if r.quantity in VERDICT_QUANTITIES]
        assert len(rows) == len(VERDICT_QUANTITIES) * len(ALL_P)
        assert [(r.quantity, r.p, r.slope) for r in rows if not r.match] == []

    def test_plateau_level_is_layer(self, f1_sweep):
        for r in f1_sweep.results[-2:]:
            layer = boundary_layer_norm(r.c, r.layer_amplitude, 2.0, r.T)
            assert r.quantity_value("cE_Ebar", 2.0) == pytest.approx(layer, rel=0.1)

    def test_linear_system_sharpness(self, f1_sweep):
        report = f1_sweep.sharpness
        slopes = {row.p: row.slope for row in report.electric}
        assert slopes["2"] == pytest.approx(0.0, abs=0.2)
        assert slopes["4"] == pytest.approx(0.5, abs=0.2)
        assert slopes["inf"] == pytest.approx(1.0, abs=0.2)
        assert report.magnetic_in_bracket

    def test_error_tracks_initial_gap(self, f1_sweep):
        assert f1_sweep.smallness.within_tolerance

    def test_energy_moves_into_dissipation(self, f1_sweep):
        assert f1_sweep.energy_flow.electric_decreasing
        assert f1_sweep.energy_flow.defect_decreasing


@pytest.mark.slow
class TestScaledElectricData:
    """F2, β = 1/2"""

    def test_threshold_verdicts(self, f2_sweep):
        rows = [r for r in f2_sweep.thresholds.rows if r.quantity in VERDICT_QUANTITIES]
        assert [(r.quantity, r.p, r.slope) for r in rows if not r.match] == []


@pytest.mark.slow
class TestWellPreparedData:
    """F3: cE₀ᶜ = Ē(0), ℰ₀ᶜ ~ c^{−2}"""

    def test_fluid_difference_rate(self, f3_sweep):
        assert f3_sweep.thresholds.find("uB_diff", "inf").slope == pytest.approx(-2.0, abs=0.3)

    def test_error_tracks_initial_gap(self, f3_sweep):
        assert f3_sweep.smallness.within_tolerance

    def test_linear_magnetic_decay(self, f3_sweep):
        assert f3_sweep.sharpness.magnetic_slope <= -1.7
