"""
c-sweep Engine - đo các exponent theo c và so với dự đoán

Workflow của một sweep:
    1. Sinh base fields (u₀, B₀, hướng E, δu) từ seed (seed..seed+3)
    2. Chạy MHD một lần (c-independent, cache) ở dt/4, ghi Ē dày đặc
    3. Với mỗi c: chạy Euler–Maxwell và linear system cùng lưới dt, ghi NormSeries
    4. Gom thành bảng (family, c, p, quantity, value), fit log-log, phân loại verdict
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from itertools import groupby
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import cumulative_trapezoid

from app.config import settings
from app.diagnostics import (
    EnergySamples,
    MBound,
    MHDEnergyRecorder,
    NormSeries,
    boundary_layer_norm,
    diagnostic_XA,
    dt_ebar_bounds,
    epsilon0,
    error_decompose,
    error_functional,
    layer_aware_lp_norm,
    layer_aware_square_integral,
    lp_time_norm,
    m_bound,
)
from app.dynamics import EMState, LinState, MHDState, compute_ebar, compute_jbar, ohm_current
from app.exceptions import BlowUpError, CFLViolationError, FitError
from app.models import (
    VERDICT_THRESHOLD,
    EnergyFlowReport,
    EnergyFlowRow,
    ErrorSmallnessReport,
    Family,
    InitialGap,
    RateFit,
    SeriesRow,
    SharpnessReport,
    StepperConfig,
    SweepPlan,
    SweepRow,
    ThresholdReport,
    ThresholdRow,
    Verdict,
    p_label,
    parse_p,
)
from app.spectral import (
    GridSpec,
    SpectralField,
    gradient_norm,
    inner_product,
    l2_norm,
    linf_norm,
    random_divfree_field,
    sobolev_norm,
)
from app.timestepping import (
    CFL_ABORT,
    EbarHistory,
    EMPropagators,
    choose_dt,
    mhd_with_history,
    plan_time_grid,
    step_em,
    step_linear,
)

logger = logging.getLogger(__name__)

MHD_REFINE = 4

# Đại lượng đưa vào bảng verdict
CLASSIFIED_QUANTITIES = ("uB_diff", "E", "cE_Ebar", "j_jbar", "cE_Ebar_sub", "j_jbar_sub", "cEL_Ebar")
SHARPNESS_P = (2.0, 4.0, math.inf)


# ================================================================
# INITIAL DATA
# ================================================================

class BaseFields(BaseModel):
    """Các field ngẫu nhiên dùng chung cho mọi c trong một sweep"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    u0: SpectralField
    B0: SpectralField
    E_direction: SpectralField
    du: SpectralField


def base_fields(grid: GridSpec, family: Family) -> BaseFields:
    """Seeds seed, seed+1, seed+2, seed+3 cho u₀, B₀, hướng E, δu"""
    make = lambda offset: random_divfree_field(  # noqa: E731
        grid, family.seed + offset, amplitude=family.amplitude, decay=family.decay
    )
    return BaseFields(u0=make(0), B0=make(1), E_direction=make(2), du=make(3))


def initial_em_state(family: Family, fields: BaseFields, ebar0: SpectralField, c: float) -> EMState:
    """
    Initial data của Euler–Maxwell theo family

        F1: E₀ᶜ = e (cố định)
        F2: E₀ᶜ = c^{−(1−β)} e
        F3: E₀ᶜ = Ē(0)/c
        F4: u₀ᶜ = u₀ + c^{−α} δu, E₀ᶜ = Ē(0)/c
    """
    u = fields.u0
    if family.kind in ("F1", "F2"):
        E = family.electric_scale(c) * fields.E_direction
    else:
        E = ebar0 * (1.0 / c)
    if family.kind == "F4":
        u = u + c ** (-family.alpha) * fields.du
    return EMState(t=0.0, c=c, u=u, E=E, B=fields.B0)


# ================================================================
# MHD REFERENCE (cache)
# ================================================================

class MHDReference(BaseModel):
    """
    MHD trajectory dùng chung cho mọi c

    Attributes:
        states: (ū, B̄) tại các node dt
        history: Ē tại các node dt/4
        energy: năng lượng và ‖j̄‖² tại các node dt
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: GridSpec
    dt: float
    steps: int
    times: List[float]
    states: List[MHDState]
    history: EbarHistory
    ebar0: SpectralField
    energy: EnergySamples
    dt_ebar_linf_l2: float
    dt_ebar_l2_h1: float


@lru_cache(maxsize=8)
def _mhd_reference(n: int, seed: int, amplitude: float, decay: float, stepper: StepperConfig) -> MHDReference:
    grid = GridSpec(n=n)
    fields = base_fields(grid, Family(seed=seed, amplitude=amplitude, decay=decay))
    mhd0 = MHDState(t=0.0, u_bar=fields.u0, B_bar=fields.B0)

    dt, steps = plan_time_grid(stepper.t_end, choose_dt(mhd0, stepper))
    recorder = MHDEnergyRecorder()
    traj, history = mhd_with_history(mhd0, stepper, dt, steps, refine=MHD_REFINE, observer=recorder)
    linf_l2, l2_h1 = dt_ebar_bounds(history)

    logger.info("MHD reference ready: n=%d dt=%.4g steps=%d", n, dt, steps)
    return MHDReference(
        grid=grid,
        dt=dt,
        steps=steps,
        times=list(traj.times),
        states=list(traj.snapshots),
        history=history,
        ebar0=compute_ebar(mhd0),
        energy=recorder.samples,
        dt_ebar_linf_l2=linf_l2,
        dt_ebar_l2_h1=l2_h1,
    )


def mhd_reference(plan: SweepPlan) -> MHDReference:
    """MHD reference của plan; chỉ phụ thuộc grid, seed, amplitude, decay và stepper"""
    fam = plan.family
    return _mhd_reference(plan.n, fam.seed, fam.amplitude, fam.decay, plan.stepper)


# ================================================================
# TRIPLET RUN
# ================================================================

class RunResult(BaseModel):
    """
    Kết quả (EM, MHD, linear) tại một c

    Attributes:
        series: NormSeries theo label (uB_diff, E, cE_Ebar_sub, ...)
        layer_amplitude: a = ‖cE₀ᶜ − Ē(0)‖_{L²}
        current_remainder2, current_cross: ‖jᶜ − L(t)‖², ⟨jᶜ − L(t), L₀⟩ (L(t) = e^{−c²t}L₀)
        jbar2: ‖j̄‖² tại cùng các node
    """
    family: str
    c: float
    dt: float
    steps: int
    times: List[float]
    series: Dict[str, NormSeries] = Field(default_factory=dict)
    layer_amplitude: float = 0.0
    electric0: float = Field(0.0, description="‖E₀ᶜ‖²")
    gap: InitialGap
    current_remainder2: List[float] = Field(default_factory=list)
    current_cross: List[float] = Field(default_factory=list)
    jbar2: List[float] = Field(default_factory=list)
    mbound: Optional[MBound] = None
    dt_ebar_linf_l2: float = 0.0
    dt_ebar_l2_h1: float = 0.0
    wall_time_s: float = 0.0

    # ==================== DERIVED QUANTITIES ====================

    @property
    def T(self) -> float:
        return self.times[-1]

    def quantity_value(self, quantity: str, p: float) -> float:
        """
        Norm L^p(0,T; L²) của một quantity

        cE_Ebar, j_jbar, cEL_Ebar (không trừ layer) dùng layer_aware_lp_norm trên phần '_sub'.
        E cũng vậy: layer e^{−c²t}E₀ᶜ giải tích, chỉ ‖Eᶜ − e^{−c²t}E₀ᶜ‖ được lấy mẫu.
        """
        if quantity in ("cE_Ebar", "j_jbar", "cEL_Ebar"):
            return layer_aware_lp_norm(self.series[quantity + "_sub"], self.c, self.layer_amplitude, p)
        if quantity == "E":
            return layer_aware_lp_norm(self.series["E_sub"], self.c, math.sqrt(self.electric0), p)
        return lp_time_norm(self.series[quantity], p)

    def current_integral(self) -> np.ndarray:
        """∫₀^{t_i}‖jᶜ‖² (layer tính giải tích)"""
        return layer_aware_square_integral(
            self.times, self.current_remainder2, self.current_cross, self.layer_amplitude ** 2, self.c
        )

    def jbar_integral(self) -> np.ndarray:
        if len(self.times) < 2:
            return np.zeros(len(self.times))
        return np.concatenate([[0.0], cumulative_trapezoid(self.jbar2, self.times)])

    def electric_energy_at(self, t: float) -> float:
        """‖Eᶜ(t)‖²"""
        return self.series["E"].value_at(t) ** 2

    def jump_defect_at(self, t: float) -> float:
        """|∫₀ᵗ‖jᶜ‖² − ½‖E₀ᶜ‖² − ∫₀ᵗ‖j̄‖²|"""
        total = np.interp(t, self.times, self.current_integral() - self.jbar_integral())
        return float(abs(total - 0.5 * self.electric0))

    def error_size(self) -> float:
        """sup(‖ũ‖ + ‖Ẽ‖ + ‖B̃‖) + c‖Ẽ‖_{L²(0,T;L²)}"""
        parts = [self.series[k].arrays()[1] for k in ("u_tilde", "E_tilde", "B_tilde")]
        return float(np.max(sum(parts))) + self.c * lp_time_norm(self.series["E_tilde"], 2.0)

    def linear_magnetic_size(self) -> float:
        """sup‖B_L‖ + ‖∇B_L‖_{L²(0,T;L²)}"""
        return self.series["B_L"].sup() + lp_time_norm(self.series["grad_B_L"], 2.0)


def _series_labels(s_values: Sequence[float]) -> List[str]:
    labels = [
        "uB_diff", "E", "E_sub", "cE_Ebar_sub", "j_jbar_sub", "cEL_Ebar_sub",
        "B_L", "grad_B_L", "u_tilde", "E_tilde", "B_tilde", "error_functional", "X", "A",
    ]
    for s in s_values:
        labels += [f"u_diff_H{s:g}", f"B_diff_H{s:g}", f"j_diff_H{s:g}"]
    return labels


def run_triplet(plan: SweepPlan, c: float) -> RunResult:
    """
    Chạy Euler–Maxwell và linear system tại c, đối chiếu với MHD reference

    Raises:
        BlowUpError: từ stepper, message có thêm c
    """
    started = time.perf_counter()
    ref = mhd_reference(plan)
    grid, dt, steps = ref.grid, ref.dt, ref.steps
    stepper = plan.stepper
    fields = base_fields(grid, plan.family)

    em = initial_em_state(plan.family, fields, ref.ebar0, c)
    E0 = em.E
    lin = LinState.initial(E0, c)
    gap = epsilon0(em, ref.states[0])
    layer0 = c * em.E - ref.ebar0
    a = l2_norm(layer0)
    props = EMPropagators(grid, c, dt, stepper.scheme)

    result = RunResult(
        family=plan.family.label,
        c=c,
        dt=dt,
        steps=steps,
        times=[],
        series={label: NormSeries(label=label) for label in _series_labels(plan.s_values)},
        layer_amplitude=a,
        electric0=l2_norm(em.E) ** 2,
        gap=gap,
        dt_ebar_linf_l2=ref.dt_ebar_linf_l2,
        dt_ebar_l2_h1=ref.dt_ebar_l2_h1,
    )
    B_linf: List[float] = []
    j_linf: List[float] = []

    def record(em: EMState, lin: LinState, mhd: MHDState) -> float:
        t = em.t
        put = lambda label, value: result.series[label].append(t, value)  # noqa: E731
        layer = math.exp(-c * c * t) * layer0
        ebar = ref.history.at(t)
        jbar = compute_jbar(mhd)
        j = ohm_current(em)
        parts = error_decompose(em, mhd, lin, time_tol=0.5 * dt)

        u_diff = em.u - mhd.u_bar
        B_diff = em.B - mhd.B_bar
        j_rem = j - layer
        j_diff = j_rem - jbar
        put("uB_diff", math.sqrt(l2_norm(u_diff) ** 2 + l2_norm(B_diff) ** 2))
        put("E", l2_norm(em.E))
        put("E_sub", l2_norm(em.E - math.exp(-c * c * t) * E0))
        put("cE_Ebar_sub", l2_norm(c * em.E - ebar - layer))
        put("j_jbar_sub", l2_norm(j_diff))
        put("cEL_Ebar_sub", l2_norm(c * lin.E_L - ebar - layer))
        put("B_L", l2_norm(lin.B_L))
        put("grad_B_L", gradient_norm(lin.B_L))
        nu, nE, nB = parts.norms()
        put("u_tilde", nu)
        put("E_tilde", nE)
        put("B_tilde", nB)
        put("error_functional", error_functional(parts, c, gap.dE0_H1))
        for s in plan.s_values:
            put(f"u_diff_H{s:g}", sobolev_norm(u_diff, s))
            put(f"B_diff_H{s:g}", sobolev_norm(B_diff, s))
            put(f"j_diff_H{s:g}", sobolev_norm(j_diff, s))

        result.times.append(t)
        result.current_remainder2.append(inner_product(j_rem, j_rem))
        result.current_cross.append(inner_product(j_rem, layer0))
        result.jbar2.append(inner_product(jbar, jbar))

        u_inf = linf_norm(em.u)
        b_inf = linf_norm(em.B)
        B_linf.append(b_inf)
        j_linf.append(linf_norm(j))
        X, A = diagnostic_XA(em, plan.m_index)
        put("X", X)
        put("A", A)
        return dt * max(u_inf, b_inf) / grid.dx

    courant = record(em, lin, ref.states[0])
    for i in range(steps):
        if courant > CFL_ABORT:
            raise CFLViolationError(f"c={c:g}: Courant number {courant:.3f} exceeds {CFL_ABORT}", t=em.t)
        try:
            em = step_em(em, stepper, props)
            lin = step_linear(lin, ref.history.at, stepper, props)
        except BlowUpError as exc:
            raise BlowUpError(f"c={c:g}: {exc}", t=exc.t, norm_trace=exc.norm_trace) from exc
        courant = record(em, lin, ref.states[i + 1])

    result.mbound = m_bound(c, result.times, B_linf, j_linf, result.series["X"].values)
    result.wall_time_s = time.perf_counter() - started
    logger.info("Triplet run c=%g finished in %.2fs (epsilon0=%.3e)", c, result.wall_time_s, gap.epsilon0)
    return result


# ================================================================
# FITS / PREDICTIONS
# ================================================================

def fit_rate(pairs: Sequence[Tuple[float, float]], quantity: str = "") -> RateFit:
    """
    Least squares trên (log c, log value)

    Raises:
        FitError: ít hơn 3 điểm dương
    """
    kept = [(float(c), float(v)) for c, v in pairs if v > 0 and math.isfinite(v)]
    if len(kept) < len(pairs):
        logger.warning("fit %s: excluded %d nonpositive values", quantity or "rate", len(pairs) - len(kept))
    if len(kept) < 3:
        raise FitError(f"fit {quantity or 'rate'} needs >= 3 positive values (got {len(kept)})")

    x = np.log([c for c, _ in kept])
    y = np.log([v for _, v in kept])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ssr = float(np.sum(resid ** 2))
    sst = float(np.sum((y - y.mean()) ** 2))
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(ssr / (len(kept) - 2) / sxx) if len(kept) > 2 and sxx > 0 else 0.0
    r2 = 1.0 - ssr / sst if sst > 0 else 1.0
    return RateFit(quantity=quantity, pairs=kept, slope=float(slope), intercept=float(intercept),
                   stderr=stderr, r2=r2)


def epsilon_exponent(family: Family) -> float:
    """Exponent của ℰ₀ᶜ theo c"""
    if family.kind == "F1":
        return -1.0
    if family.kind == "F2":
        return family.beta - 2.0
    if family.kind == "F3":
        return -2.0
    return -min(family.alpha, 2.0)


def predicted_exponent(family: Family, quantity: str, p: float) -> Optional[Tuple[float, str]]:
    """
    (exponent, kind) dự đoán cho quantity ~ c^exponent, hoặc None

    kind = 'rate' khi exponent sharp, 'bound' khi chỉ là upper bound.
    """
    inv_p = 0.0 if math.isinf(p) else 1.0 / p
    eps = epsilon_exponent(family)
    bound = max(0.0, 1.0 - 2.0 * inv_p) + eps
    kind = family.kind

    if quantity == "uB_diff":
        return eps, "rate" if kind in ("F1", "F3") else "bound"
    if quantity == "E":
        if kind == "F1":
            return max(-2.0 * inv_p, -1.0), "rate"
        if kind == "F2":
            return max(family.beta - 1.0 - 2.0 * inv_p, -1.0), "rate"
        return -1.0, "rate"
    if quantity in ("cE_Ebar", "j_jbar", "cEL_Ebar"):
        if kind == "F1":
            return 1.0 - 2.0 * inv_p, "rate"
        if kind == "F2":
            return family.beta - 2.0 * inv_p, "rate"
        return (bound, "bound") if quantity != "cEL_Ebar" else None
    if quantity in ("cE_Ebar_sub", "j_jbar_sub"):
        return bound, "bound"
    return None


def verdict_for_slope(slope: float) -> Verdict:
    if slope <= -VERDICT_THRESHOLD:
        return "converge"
    if slope >= VERDICT_THRESHOLD:
        return "diverge"
    return "plateau"


def verdict_for_exponent(exponent: float) -> Verdict:
    if exponent < -1e-12:
        return "converge"
    if exponent > 1e-12:
        return "diverge"
    return "plateau"


def threshold_row(family: Family, quantity: str, p: float, fit: RateFit) -> ThresholdRow:
    verdict = verdict_for_slope(fit.slope)
    prediction = predicted_exponent(family, quantity, p)
    row = dict(family=family.label, quantity=quantity, p=p_label(p), slope=fit.slope,
               stderr=fit.stderr, r2=fit.r2, verdict=verdict)
    if prediction is None:
        return ThresholdRow(**row)
    exponent, kind = prediction
    if kind == "rate":
        predicted = verdict_for_exponent(exponent)
        return ThresholdRow(**row, kind=kind, predicted_exponent=exponent, predicted=predicted,
                            match=predicted == verdict)
    return ThresholdRow(**row, kind=kind, predicted_exponent=exponent,
                        match=fit.slope <= exponent + VERDICT_THRESHOLD)


# ================================================================
# SWEEP TABLE
# ================================================================

def sweep_rows(results: Sequence[RunResult], plan: SweepPlan) -> List[SweepRow]:
    """Các dòng (family, c, p, quantity, value), thứ tự (family, quantity, p, c)"""
    rows: List[SweepRow] = []
    fam = plan.family.label
    for r in results:
        for q in CLASSIFIED_QUANTITIES:
            for p in plan.p_values:
                rows.append(SweepRow(family=fam, c=r.c, p=p_label(p), quantity=q, value=r.quantity_value(q, p)))
        for s in plan.s_values:
            for base in ("u_diff", "B_diff", "j_diff"):
                q = f"{base}_H{s:g}"
                rows.append(SweepRow(family=fam, c=r.c, p="inf", quantity=q, value=r.quantity_value(q, math.inf)))
        extra = {
            "epsilon0": r.gap.epsilon0,
            "error_size": r.error_size(),
            "B_L_size": r.linear_magnetic_size(),
            "E_sq_tstar": r.electric_energy_at(plan.t_star),
            "jump_defect": r.jump_defect_at(plan.t_star),
            "layer_L2": boundary_layer_norm(r.c, r.layer_amplitude, 2.0, r.T),
            "dt_Ebar_Linf_L2": r.dt_ebar_linf_l2,
            "dt_Ebar_L2_H1": r.dt_ebar_l2_h1,
            "M_integral": r.mbound.integral if r.mbound else 0.0,
            "X_sup": r.mbound.sup_X if r.mbound else 0.0,
            "A_sup": r.series["A"].sup() if r.series["A"].values else 0.0,
        }
        for q, value in extra.items():
            rows.append(SweepRow(family=fam, c=r.c, p="-", quantity=q, value=value))
    return sort_rows(rows)


def _p_order(label: str) -> float:
    return -1.0 if label == "-" else parse_p(label)


def sort_rows(rows: Sequence[SweepRow]) -> List[SweepRow]:
    return sorted(rows, key=lambda r: (r.family, r.quantity, _p_order(r.p), r.c))


def _pairs(rows: Sequence[SweepRow], quantity: str, p: str) -> List[Tuple[float, float]]:
    return [(r.c, r.value) for r in rows if r.quantity == quantity and r.p == p]


def classify_thresholds(rows: Sequence[SweepRow], quantities: Sequence[str] = CLASSIFIED_QUANTITIES) -> ThresholdReport:
    """
    Fit từng (family, quantity, p) và so verdict đo được với dự đoán

    Verdict đo: slope ≤ −0.15 converge, ≥ 0.15 diverge, còn lại plateau.
    """
    report = ThresholdReport()
    for (fam_label, quantity, p), group in groupby(sort_rows(rows), key=lambda r: (r.family, r.quantity, r.p)):
        if quantity not in quantities or p == "-":
            continue
        group = list(group)
        try:
            fit = fit_rate([(r.c, r.value) for r in group], quantity=f"{quantity}[p={p}]")
        except FitError as exc:
            logger.warning("skipping %s %s p=%s: %s", fam_label, quantity, p, exc)
            continue
        report.rows.append(threshold_row(Family.from_label(fam_label), quantity, parse_p(p), fit))
    return report


# ================================================================
# REPORTS
# ================================================================

def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def energy_flow_check(results: Sequence[RunResult], t_star: float) -> EnergyFlowReport:
    """
    (‖Eᶜ(t*)‖², |∫₀^{t*}‖jᶜ‖² − ½‖E₀ᶜ‖² − ∫₀^{t*}‖j̄‖²|) theo c; cả hai phải giảm
    """
    if t_star <= 0:
        raise ValueError(f"t_star must be positive (got {t_star})")
    rows = [
        EnergyFlowRow(c=r.c, electric_energy=r.electric_energy_at(t_star), jump_defect=r.jump_defect_at(t_star))
        for r in sorted(results, key=lambda r: r.c)
    ]
    return EnergyFlowReport(
        t_star=t_star,
        rows=rows,
        electric_decreasing=_strictly_decreasing([row.electric_energy for row in rows]),
        defect_decreasing=_strictly_decreasing([row.jump_defect for row in rows]),
    )


def linear_sharpness(results: Sequence[RunResult], plan: SweepPlan) -> SharpnessReport:
    """
    Slopes của ‖cE_L − Ē‖_{L^pL²} (p = 2, 4, ∞) và của sup‖B_L‖ + ‖∇B_L‖_{L²L²}
    """
    family = plan.family
    report = SharpnessReport(family=family.label)
    for p in SHARPNESS_P:
        pairs = [(r.c, r.quantity_value("cEL_Ebar", p)) for r in results]
        report.electric.append(threshold_row(family, "cEL_Ebar", p, fit_rate(pairs, quantity=f"cEL_Ebar[p={p_label(p)}]")))

    fit = fit_rate([(r.c, r.linear_magnetic_size()) for r in results], quantity="B_L_size")
    bracket = (-2.2, -0.8) if family.kind in ("F1", "F2") else (-2.3, -1.7)
    report.magnetic_slope = fit.slope
    report.magnetic_bracket = bracket
    report.magnetic_in_bracket = bracket[0] <= fit.slope <= bracket[1]
    return report


def electric_field_decay(rows: Sequence[SweepRow]) -> ThresholdReport:
    """Verdict của ‖Eᶜ‖_{L^pL²} cho mọi p"""
    return classify_thresholds(rows, quantities=("E",))


def error_smallness(results: Sequence[RunResult], plan: SweepPlan, tolerance: float = 0.3) -> ErrorSmallnessReport:
    """Slope của sup(‖ũ‖+‖Ẽ‖+‖B̃‖) + c‖Ẽ‖_{L²L²} so với slope của ℰ₀ᶜ"""
    error_fit = fit_rate([(r.c, r.error_size()) for r in results], quantity="error_size")
    eps_fit = fit_rate([(r.c, r.gap.epsilon0) for r in results], quantity="epsilon0")
    return ErrorSmallnessReport(
        family=plan.family.label,
        slope=error_fit.slope,
        epsilon0_slope=eps_fit.slope,
        within_tolerance=abs(error_fit.slope - eps_fit.slope) <= tolerance,
    )


def hs_differences(rows: Sequence[SweepRow], s_values: Sequence[float]) -> Dict[str, RateFit]:
    """Fit của sup_t ‖uᶜ−ū‖_{H^s}, ‖Bᶜ−B̄‖_{H^s}, ‖jᶜ−j̄−L‖_{H^s} theo c"""
    fits: Dict[str, RateFit] = {}
    for s in s_values:
        for base in ("u_diff", "B_diff", "j_diff"):
            q = f"{base}_H{s:g}"
            pairs = _pairs(rows, q, "inf")
            if len(pairs) >= 3:
                fits[q] = fit_rate(pairs, quantity=q)
    return fits


# ================================================================
# SWEEP RUNNER
# ================================================================

class SweepResult(BaseModel):
    """Mọi output của một sweep (đã sắp xếp theo c)"""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    plan: SweepPlan
    results: List[RunResult]
    rows: List[SweepRow]
    thresholds: ThresholdReport
    energy_flow: EnergyFlowReport
    electric_decay: ThresholdReport
    sharpness: Optional[SharpnessReport] = None
    smallness: Optional[ErrorSmallnessReport] = None
    hs_fits: Dict[str, RateFit] = Field(default_factory=dict)


def run_sweep(plan: SweepPlan, workers: Optional[int] = None) -> SweepResult:
    """
    Chạy run_triplet cho mọi c (song song theo SWEEP_WORKERS), ghép kết quả theo c

    MHD reference được tính trước khi phân job để các thread dùng chung cache.
    """
    workers = workers or settings.SWEEP_WORKERS
    mhd_reference(plan)
    logger.info("Sweep %s: c=%s workers=%d", plan.family.label, plan.c_values, workers)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: run_triplet(plan, c), plan.c_values))
    else:
        results = [run_triplet(plan, c) for c in plan.c_values]
    results.sort(key=lambda r: r.c)

    rows = sweep_rows(results, plan)
    enough = len(results) >= 3
    return SweepResult(
        plan=plan,
        results=results,
        rows=rows,
        thresholds=classify_thresholds(rows),
        energy_flow=energy_flow_check(results, plan.t_star),
        electric_decay=electric_field_decay(rows),
        sharpness=linear_sharpness(results, plan) if enough and plan.family.kind in ("F1", "F2", "F3") else None,
        smallness=error_smallness(results, plan) if enough else None,
        hs_fits=hs_differences(rows, plan.s_values),
    )


def series_rows(results: Sequence[RunResult]) -> List[SeriesRow]:
    """series.csv của một sweep: label '<quantity>@c=<c>'"""
    rows: List[SeriesRow] = []
    for r in results:
        for label, series in sorted(r.series.items()):
            rows += [SeriesRow(t=t, label=f"{label}@c={r.c:g}", value=v) for t, v in zip(series.times, series.values)]
    return rows
