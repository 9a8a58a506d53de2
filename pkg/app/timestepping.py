"""
Time stepping bằng exponential integrators

Phần tuyến tính stiff được propagate chính xác theo từng mode:
    - Euler–Maxwell: telegraph block cho (E, B) qua ModePropagator; phần cE×B của lực
      Lorentz dùng impulse c∫E dt lấy từ ΔB của bước (không lấy mẫu E trong boundary layer)
    - MHD: heat semigroup e^{−|k|²h} cho B̄
    - Linear system: telegraph block + forcing (cĒ, ∇×Ē) tích phân bằng φ1, φ2

Hai scheme:
    ETD2: Cox–Matthews bậc 2; với forcing hằng hoặc tuyến tính theo t là chính xác
    ETD-RK4-Lawson: integrating factor + RK4 cổ điển; kick cE×B của u vẫn là impulse bậc 2

dt cố định trong một run (chọn một lần từ CFL của fluid), không phụ thuộc c.
"""

import logging
import math
from typing import Any, Callable, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.dynamics import EMState, LinState, MHDState, compute_ebar, em_split_rhs, lin_rhs, mhd_rhs, project
from app.exceptions import BlowUpError, CFLViolationError
from app.models import StepperConfig
from app.propagators import HeatPropagator, ModePropagator, phi_functions
from app.spectral import GridSpec, SpectralField, _cross_k, curl, l2_norm, linf_norm, product_fields

logger = logging.getLogger(__name__)

VELOCITY_FLOOR = 1e-8
CFL_ABORT = 2.0


# ================================================================
# TIME STEP SELECTION
# ================================================================

def _fluid_fields(s: Union[EMState, MHDState]) -> Tuple[SpectralField, SpectralField]:
    if isinstance(s, EMState):
        return s.u, s.B
    return s.u_bar, s.B_bar


def max_speed(s: Union[EMState, MHDState]) -> float:
    u, B = _fluid_fields(s)
    return max(linf_norm(u), linf_norm(B), VELOCITY_FLOOR)


def choose_dt(s: Union[EMState, MHDState], cfg: StepperConfig) -> float:
    """
    dt = min(dt_max, cfl·Δx / max(‖u‖∞, ‖B‖∞, 1e-8))

    Không phụ thuộc c: phần sóng/damping đã được propagate chính xác.
    """
    return min(cfg.dt_max, cfg.cfl * s.grid.dx / max_speed(s))


def courant_number(s: Union[EMState, MHDState], dt: float) -> float:
    """dt·max(‖u‖∞, ‖B‖∞)/Δx"""
    u, B = _fluid_fields(s)
    return dt * max(linf_norm(u), linf_norm(B)) / s.grid.dx


def plan_time_grid(t_end: float, dt: float) -> Tuple[float, int]:
    """Làm tròn để steps·dt = t_end đúng: steps = ⌈t_end/dt⌉"""
    if dt <= 0 or t_end <= 0:
        raise ValueError(f"t_end and dt must be positive (got t_end={t_end}, dt={dt})")
    steps = max(1, math.ceil(t_end / dt - 1e-12))
    return t_end / steps, steps


# ================================================================
# PROPAGATOR BUNDLES
# ================================================================

class EMPropagators:
    """Telegraph propagators tại dt (và dt/2 cho Lawson)"""

    def __init__(self, grid: GridSpec, c: float, dt: float, scheme: str = "ETD2"):
        self.grid = grid
        self.c = c
        self.dt = dt
        self.full = ModePropagator.for_grid(grid, c, dt)
        self.half = ModePropagator.for_grid(grid, c, dt / 2.0) if scheme != "ETD2" else None


class HeatPropagators:
    """Heat propagators tại dt (và dt/2 cho Lawson)"""

    def __init__(self, grid: GridSpec, dt: float, scheme: str = "ETD2"):
        self.grid = grid
        self.dt = dt
        self.full = HeatPropagator(grid, dt)
        self.half = HeatPropagator(grid, dt / 2.0) if scheme != "ETD2" else None


def _require_half(props) -> None:
    if props.half is None:
        raise ValueError("Lawson scheme needs half-step propagators (build them with scheme='ETD-RK4-Lawson')")


def _check_finite(state, system: str):
    if not state.is_finite():
        raise BlowUpError(f"non-finite values in {system} state", t=state.t)
    return state


def _guarded(advance, s, system: str):
    """Chạy một bước; overflow trong stage (t chưa biết) được gắn t của state đầu bước"""
    try:
        new = advance(s)
    except BlowUpError as exc:
        if math.isnan(exc.t):
            raise BlowUpError(f"non-finite values in {system} stage", t=s.t) from exc
        raise
    return _check_finite(new, system)


# ================================================================
# EULER–MAXWELL
# ================================================================

def _em_state(s: EMState, t: float, u: np.ndarray, E: np.ndarray, B: np.ndarray) -> EMState:
    return EMState(t=t, c=s.c, u=s.u.with_data(u), E=s.E.with_data(E), B=s.B.with_data(B))


def _em_forcing(s: EMState) -> Tuple[np.ndarray, np.ndarray]:
    du, dE = em_split_rhs(s)
    return du.data, dE.data


def electric_impulse(grid: GridSpec, c: float, h: float, E: np.ndarray, dB: np.ndarray) -> np.ndarray:
    """
    c∫E dt trên một bước, suy chính xác từ độ tăng ΔB của B

    ∂tB = −c∇×E và ∇×∇× = |k|² trên solenoidal fields nên c∫E dt = −∇×ΔB/|k|².
    Mode không có curl (mean, Nyquist) chỉ tắt dần: c·h·φ1(−c²h)·E.
    """
    wn = grid.wavenumbers()
    from_curl = -1j * _cross_k(wn.k, dB) * wn.inv_k2
    _, phi1, _ = phi_functions(-c * c * h)
    decay = c * h * float(np.real(phi1)) * E
    return np.where(wn.k2 > 0, from_curl, decay)


def _lorentz_kick(s: EMState, h: float, B_end: np.ndarray) -> np.ndarray:
    """
    ∫P(cE×B)dt trên một bước kết thúc tại B_end

    Với I(t) = c∫₀ᵗE thì B(t) = B(0) − ∇×I(t), nên ∫dI×B = I×B_mid khi I giữ nguyên hình dạng.
    I tách thành layer I_L = hφ1(−c²h)(cE − Ē) (profile e^{−c²t}) và phần chậm I_S = I − I_L;
    cặp chéo giữa hai phần có trọng số ω = φ2/φ1 − ½ tại z = −c²h (→ ½ khi stiff, → 0 khi h → 0).
    """
    _, phi1, phi2 = (float(np.real(x)) for x in phi_functions(-s.c * s.c * h))
    impulse = s.E.with_data(electric_impulse(s.grid, s.c, h, s.E.data, B_end - s.B.data), solenoidal=True)
    B_mid = s.B.with_data(0.5 * (s.B.data + B_end))
    force = product_fields(impulse, B_mid, "cross")

    omega = phi2 / phi1 - 0.5
    if omega != 0.0:
        ebar = compute_ebar(MHDState(t=s.t, u_bar=s.u, B_bar=s.B))
        layer = (h * phi1) * (s.c * s.E - ebar)
        slow = impulse - layer
        force = force + omega * (
            product_fields(layer, curl(slow), "cross") - product_fields(slow, curl(layer), "cross")
        )
    return project(force).data


def _em_etd2(s: EMState, props: EMPropagators) -> EMState:
    h, P = props.dt, props.full
    du0, dE0 = _em_forcing(s)

    E_a, B_a = P.apply(0, s.E.data, s.B.data)
    fE, fB = P.apply(1, dE0)
    E_a = E_a + h * fE
    B_a = B_a + h * fB
    u_a = s.u.data + h * du0 + _lorentz_kick(s, h, B_a)
    stage = _em_state(s, s.t + h, u_a, E_a, B_a)

    du1, dE1 = _em_forcing(stage)
    gE, gB = P.apply(2, dE1 - dE0)
    E_new = E_a + h * gE
    B_new = B_a + h * gB
    u_new = s.u.data + 0.5 * h * (du0 + du1) + _lorentz_kick(s, h, B_new)
    return _em_state(s, s.t + h, u_new, E_new, B_new)


def _em_lawson(s: EMState, props: EMPropagators) -> EMState:
    _require_half(props)
    h, P, Ph = props.dt, props.full, props.half
    u, E, B = s.u.data, s.E.data, s.B.data

    k1u, k1E = _em_forcing(s)
    E2, B2 = Ph.apply(0, E + 0.5 * h * k1E, B)
    u2 = u + 0.5 * h * k1u + _lorentz_kick(s, 0.5 * h, B2)
    k2u, k2E = _em_forcing(_em_state(s, s.t + 0.5 * h, u2, E2, B2))

    Eh, Bh = Ph.apply(0, E, B)
    u3 = u + 0.5 * h * k2u + _lorentz_kick(s, 0.5 * h, Bh)
    k3u, k3E = _em_forcing(_em_state(s, s.t + 0.5 * h, u3, Eh + 0.5 * h * k2E, Bh))

    Ef, Bf = P.apply(0, E, B)
    wE, wB = Ph.apply(0, k3E)
    B4 = Bf + h * wB
    u4 = u + h * k3u + _lorentz_kick(s, h, B4)
    k4u, k4E = _em_forcing(_em_state(s, s.t + h, u4, Ef + h * wE, B4))

    e1E, e1B = P.apply(0, k1E)
    e23E, e23B = Ph.apply(0, k2E + k3E)
    E_new = Ef + h / 6.0 * (e1E + 2.0 * e23E + k4E)
    B_new = Bf + h / 6.0 * (e1B + 2.0 * e23B)
    u_new = u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u) + _lorentz_kick(s, h, B_new)
    return _em_state(s, s.t + h, u_new, E_new, B_new)


def step_em(s: EMState, cfg: StepperConfig, props: EMPropagators) -> EMState:
    """
    Một bước Euler–Maxwell

    Raises:
        BlowUpError: state mới chứa NaN/Inf
    """
    if not math.isclose(props.c, s.c):
        raise ValueError(f"propagators built for c={props.c}, state has c={s.c}")
    advance = _em_etd2 if cfg.scheme == "ETD2" else _em_lawson
    return _guarded(lambda x: advance(x, props), s, "Euler–Maxwell")


# ================================================================
# MHD
# ================================================================

def _mhd_state(s: MHDState, t: float, u: np.ndarray, B: np.ndarray) -> MHDState:
    return MHDState(t=t, u_bar=s.u_bar.with_data(u), B_bar=s.B_bar.with_data(B))


def _mhd_forcing(s: MHDState) -> Tuple[np.ndarray, np.ndarray]:
    du, dB = mhd_rhs(s)
    return du.data, dB.data


def _mhd_etd2(s: MHDState, props: HeatPropagators) -> MHDState:
    h, H = props.dt, props.full
    du0, dB0 = _mhd_forcing(s)
    u_a = s.u_bar.data + h * du0
    B_a = H.apply(0, s.B_bar.data) + h * H.apply(1, dB0)

    du1, dB1 = _mhd_forcing(_mhd_state(s, s.t + h, u_a, B_a))
    u_new = u_a + 0.5 * h * (du1 - du0)
    B_new = B_a + h * H.apply(2, dB1 - dB0)
    return _mhd_state(s, s.t + h, u_new, B_new)


def _mhd_lawson(s: MHDState, props: HeatPropagators) -> MHDState:
    _require_half(props)
    h, H, Hh = props.dt, props.full, props.half
    u, B = s.u_bar.data, s.B_bar.data

    k1u, k1B = _mhd_forcing(s)
    k2u, k2B = _mhd_forcing(_mhd_state(s, s.t + 0.5 * h, u + 0.5 * h * k1u, Hh.apply(0, B + 0.5 * h * k1B)))
    k3u, k3B = _mhd_forcing(_mhd_state(s, s.t + 0.5 * h, u + 0.5 * h * k2u, Hh.apply(0, B) + 0.5 * h * k2B))
    k4u, k4B = _mhd_forcing(_mhd_state(s, s.t + h, u + h * k3u, H.apply(0, B) + h * Hh.apply(0, k3B)))

    u_new = u + h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
    B_new = H.apply(0, B) + h / 6.0 * (H.apply(0, k1B) + 2.0 * Hh.apply(0, k2B + k3B) + k4B)
    return _mhd_state(s, s.t + h, u_new, B_new)


def step_mhd(s: MHDState, cfg: StepperConfig, props: HeatPropagators) -> MHDState:
    """Một bước MHD; −ΔB̄ được xử lý bằng heat multiplier chính xác"""
    advance = _mhd_etd2 if cfg.scheme == "ETD2" else _mhd_lawson
    return _guarded(lambda x: advance(x, props), s, "MHD")


# ================================================================
# LINEAR SYSTEM
# ================================================================

EbarSource = Callable[[float], SpectralField]


def _lin_forcing(s: LinState, ebar_at: EbarSource, t: float) -> Tuple[np.ndarray, np.ndarray]:
    fE, fB = lin_rhs(s, ebar_at(t))
    return fE.data, fB.data


def step_linear(s: LinState, ebar_at: EbarSource, cfg: StepperConfig, props: EMPropagators) -> LinState:
    """
    Một bước của linear system với forcing (cĒ, ∇×Ē)

    ETD2: U₁ = φ0 U + hφ1 F(t) + hφ2 (F(t+h) − F(t)); chính xác khi Ē hằng hoặc tuyến tính theo t.
    Lawson: F tại t, t+h/2, t+h.

    Args:
        ebar_at: hàm t -> Ē(t) (thường là EbarHistory.at)
    """
    h, P = props.dt, props.full
    E, B = s.E_L.data, s.B_L.data
    F0E, F0B = _lin_forcing(s, ebar_at, s.t)
    F1E, F1B = _lin_forcing(s, ebar_at, s.t + h)

    if cfg.scheme == "ETD2":
        E_new, B_new = P.apply(0, E, B)
        aE, aB = P.apply(1, F0E, F0B)
        bE, bB = P.apply(2, F1E - F0E, F1B - F0B)
        E_new = E_new + h * (aE + bE)
        B_new = B_new + h * (aB + bB)
    else:
        _require_half(props)
        Ph = props.half
        FhE, FhB = _lin_forcing(s, ebar_at, s.t + 0.5 * h)
        E_new, B_new = P.apply(0, E, B)
        e0E, e0B = P.apply(0, F0E, F0B)
        ehE, ehB = Ph.apply(0, FhE, FhB)
        E_new = E_new + h / 6.0 * (e0E + 4.0 * ehE + F1E)
        B_new = B_new + h / 6.0 * (e0B + 4.0 * ehB + F1B)

    new = LinState(t=s.t + h, c=s.c, E_L=s.E_L.with_data(E_new), B_L=s.B_L.with_data(B_new))
    return _check_finite(new, "linear")


# ================================================================
# Ē HISTORY
# ================================================================

class EbarHistory:
    """
    Dense Ē samples từ MHD run trên lưới thời gian đều

    Chỉ lưu các mode dưới dealias cutoff (Ē band-limited). Giá trị tại thời điểm bất kỳ
    lấy bằng cubic Lagrange interpolation trên 4 node gần nhất; đúng tuyệt đối tại node.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        self._mask = grid.wavenumbers().dealias_mask
        self._times: List[float] = []
        self._values: List[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._times)

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self._times)

    @property
    def values(self) -> np.ndarray:
        """Compact coefficients shape (N, 3, M)"""
        return np.stack(self._values)

    @property
    def mode_k2(self) -> np.ndarray:
        """|k|² của các mode được lưu (cho H^s norms)"""
        return self.grid.wavenumbers().k2_full[self._mask]

    def append(self, t: float, ebar: SpectralField) -> None:
        if self._times and t <= self._times[-1]:
            raise ValueError(f"times must increase (got {t} after {self._times[-1]})")
        self._times.append(float(t))
        self._values.append(ebar.data[:, self._mask].copy())

    def expand(self, compact: np.ndarray) -> SpectralField:
        data = np.zeros(self.grid.vector_shape, dtype=np.complex128)
        data[:, self._mask] = compact
        return SpectralField(grid=self.grid, data=data, solenoidal=True)

    def at(self, t: float) -> SpectralField:
        if not self._times:
            raise ValueError("empty Ebar history")
        times = self.times
        span = times[-1] - times[0]
        slack = 1e-9 * max(span, 1.0)
        if t < times[0] - slack or t > times[-1] + slack:
            raise ValueError(f"t={t} outside Ebar history [{times[0]}, {times[-1]}]")

        nearest = int(np.argmin(np.abs(times - t)))
        if abs(times[nearest] - t) <= slack:
            return self.expand(self._values[nearest])

        count = min(4, len(times))
        start = int(np.searchsorted(times, t)) - count // 2
        start = min(max(start, 0), len(times) - count)
        nodes = times[start:start + count]

        compact = np.zeros_like(self._values[0])
        for i, ti in enumerate(nodes):
            others = np.delete(nodes, i)
            weight = float(np.prod((t - others) / (ti - others)))
            compact = compact + weight * self._values[start + i]
        return self.expand(compact)


# ================================================================
# RUN LOOPS
# ================================================================

class Trajectory(BaseModel):
    """
    Kết quả một run

    Attributes:
        times: các node t_i = i·dt (kể cả 0)
        final: state cuối
        snapshots: state tại mỗi node (chỉ khi keep_snapshots=True)
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    dt: float = Field(..., gt=0)
    steps: int = Field(..., ge=0)
    times: List[float] = Field(default_factory=list)
    final: Any = None
    snapshots: List[Any] = Field(default_factory=list)


Observer = Optional[Callable[[object], None]]


def _norm_entry(state) -> tuple:
    return (state.t,) + tuple(l2_norm(f) for f in state.fields())


def _run(state, advance, dt: float, steps: int, observer: Observer, keep_snapshots: bool,
         cfl_state: Optional[Callable[[object], object]] = None) -> Trajectory:
    traj = Trajectory(dt=dt, steps=steps, times=[state.t], final=state)
    trace = [_norm_entry(state)]
    if observer is not None:
        observer(state)
    if keep_snapshots:
        traj.snapshots.append(state)

    for i in range(steps):
        if cfl_state is not None:
            courant = courant_number(cfl_state(state), dt)
            if courant > CFL_ABORT:
                raise CFLViolationError(
                    f"Courant number {courant:.3f} exceeds {CFL_ABORT}", t=state.t, norm_trace=trace
                )
        try:
            state = advance(state)
        except BlowUpError as exc:
            exc.norm_trace = trace
            raise
        trace.append(_norm_entry(state))
        trace = trace[-10:]
        traj.times.append(state.t)
        if observer is not None:
            observer(state)
        if keep_snapshots:
            traj.snapshots.append(state)
        logger.debug("step %d/%d t=%.6f", i + 1, steps, state.t)

    traj.final = state
    return traj


def integrate_em(s: EMState, cfg: StepperConfig, dt: float, steps: int,
                 observer: Observer = None, keep_snapshots: bool = False) -> Trajectory:
    """
    Chạy Euler–Maxwell `steps` bước với dt cố định

    Courant number được kiểm tra trước mỗi bước; vượt 2 thì abort.
    """
    props = EMPropagators(s.grid, s.c, dt, cfg.scheme)
    logger.info("Euler-Maxwell run: c=%g n=%d dt=%.4g steps=%d scheme=%s", s.c, s.grid.n, dt, steps, cfg.scheme)
    return _run(s, lambda x: step_em(x, cfg, props), dt, steps, observer, keep_snapshots, cfl_state=lambda x: x)


def integrate_mhd(s: MHDState, cfg: StepperConfig, dt: float, steps: int,
                  observer: Observer = None, keep_snapshots: bool = False) -> Trajectory:
    props = HeatPropagators(s.grid, dt, cfg.scheme)
    logger.info("MHD run: n=%d dt=%.4g steps=%d scheme=%s", s.grid.n, dt, steps, cfg.scheme)
    return _run(s, lambda x: step_mhd(x, cfg, props), dt, steps, observer, keep_snapshots, cfl_state=lambda x: x)


def integrate_linear(s: LinState, ebar_at: EbarSource, cfg: StepperConfig, dt: float, steps: int,
                     observer: Observer = None, keep_snapshots: bool = False) -> Trajectory:
    props = EMPropagators(s.grid, s.c, dt, cfg.scheme)
    logger.info("Linear run: c=%g n=%d dt=%.4g steps=%d", s.c, s.grid.n, dt, steps)
    return _run(s, lambda x: step_linear(x, ebar_at, cfg, props), dt, steps, observer, keep_snapshots)


def mhd_with_history(s: MHDState, cfg: StepperConfig, dt: float, steps: int, refine: int = 4,
                     observer: Observer = None) -> Tuple[Trajectory, EbarHistory]:
    """
    MHD tại dt/refine, ghi Ē ở mọi node con; observer và snapshots chỉ ở node dt

    Returns:
        (trajectory trên lưới dt với snapshots, EbarHistory trên lưới dt/refine)
    """
    history = EbarHistory(s.grid)
    history.append(s.t, compute_ebar(s))
    coarse = Trajectory(dt=dt, steps=steps, times=[s.t], final=s, snapshots=[s])
    if observer is not None:
        observer(s)

    def record(state: MHDState) -> None:
        if state.t == s.t:
            return
        history.append(state.t, compute_ebar(state))
        index = len(history) - 1
        if index % refine == 0:
            coarse.times.append(state.t)
            coarse.snapshots.append(state)
            if observer is not None:
                observer(state)

    fine = integrate_mhd(s, cfg, dt / refine, steps * refine, observer=record)
    coarse.final = fine.final
    return coarse, history
