"""
Diagnostics: norm series, energy ledger, boundary layer, error decomposition

Các L^p(0,T) norm tính bằng trapezoid trên các node đều của một run. Boundary layer
e^{−c²t}(cE₀ᶜ − Ē(0)) có độ rộng c^{−2}, nhỏ hơn dt khi c lớn, nên luôn được tính giải tích
(boundary_layer_norm) và chỉ phần còn lại được lấy mẫu.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.integrate import cumulative_trapezoid, trapezoid

from app.dynamics import EMState, LinState, MHDState, compute_ebar, ohm_current
from app.exceptions import AuditError
from app.models import EnergyLedger, InitialGap
from app.propagators import phi_functions
from app.spectral import (
    VOLUME,
    SpectralField,
    check_same_grid,
    gradient_linf_norm,
    gradient_norm,
    inner_product,
    l2_norm,
    linf_norm,
    sobolev_norm,
)
from app.timestepping import EbarHistory

logger = logging.getLogger(__name__)


# ================================================================
# NORM SERIES
# ================================================================

class NormSeries(BaseModel):
    """
    Chuỗi norm theo thời gian của một đại lượng

    Attributes:
        label: tên đại lượng (ví dụ 'uB_diff', 'cE_Ebar_sub')
        times: node thời gian tăng dần, bắt đầu từ 0
        values: norm tại mỗi node (≥ 0)
        quadrature: luật tích phân theo thời gian
    """
    label: str
    times: List[float] = Field(default_factory=list)
    values: List[float] = Field(default_factory=list)
    quadrature: str = "trapezoid"

    @field_validator("values")
    @classmethod
    def check_nonnegative(cls, v: List[float]) -> List[float]:
        if any(x < 0 or math.isnan(x) for x in v):
            raise ValueError("norm values must be >= 0")
        return v

    @model_validator(mode="after")
    def check_lengths(self) -> "NormSeries":
        if len(self.times) != len(self.values):
            raise ValueError(f"{self.label}: {len(self.times)} times vs {len(self.values)} values")
        if any(b < a for a, b in zip(self.times, self.times[1:])):
            raise ValueError(f"{self.label}: times must be increasing")
        return self

    def append(self, t: float, value: float) -> None:
        self.times.append(float(t))
        self.values.append(float(value))

    def arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.times, dtype=float), np.asarray(self.values, dtype=float)

    def sup(self) -> float:
        if not self.values:
            raise ValueError(f"{self.label}: empty series")
        return max(self.values)

    def value_at(self, t: float) -> float:
        """Nội suy tuyến tính tại t"""
        times, values = self.arrays()
        return float(np.interp(t, times, values))


def lp_time_norm(s: NormSeries, p: float) -> float:
    """
    ‖f‖_{L^p(0,T)} từ các giá trị đã lấy mẫu

    p hữu hạn: (trapezoid(values^p))^{1/p}; p = ∞: max
    """
    if not s.values:
        raise ValueError(f"lp_time_norm of empty series {s.label!r}")
    if p < 1:
        raise ValueError(f"p must be >= 1 (got {p})")
    times, values = s.arrays()
    if math.isinf(p):
        return float(values.max())
    if len(values) == 1:
        return 0.0
    return float(trapezoid(values ** p, times) ** (1.0 / p))


# ================================================================
# BOUNDARY LAYER
# ================================================================

def boundary_layer_norm(c: float, a: float, p: float, T: float) -> float:
    """
    ‖e^{−c²t}a‖_{L^p(0,T)} chính xác

        p hữu hạn: a·((1 − e^{−pc²T})/(pc²))^{1/p},  p = ∞: a
    """
    if a == 0:
        return 0.0
    if math.isinf(p):
        return float(a)
    rate = p * c * c
    return float(a * (-math.expm1(-rate * T) / rate) ** (1.0 / p))


def layer_aware_lp_norm(remainder: NormSeries, c: float, a: float, p: float) -> float:
    """
    L^p norm của một đại lượng có transient dẫn đầu là boundary layer

    Ghép phần giải tích boundary_layer_norm(c, a, p, T) với phần còn lại đã lấy mẫu:
        p hữu hạn: (layer^p + ‖R‖_p^p)^{1/p},  p = ∞: max(a, sup R)

    Đây không phải norm của tổng layer + R mà tương đương với nó: mọi cách ghép nằm giữa
    2^{1/p − 1}(layer + ‖R‖_p) và layer + ‖R‖_p. Exponent theo c vì vậy không đổi.
    """
    T = remainder.times[-1] if remainder.times else 0.0
    rest = lp_time_norm(remainder, p)
    if math.isinf(p):
        return max(float(a), rest)
    layer = boundary_layer_norm(c, a, p, T)
    return float((layer ** p + rest ** p) ** (1.0 / p))


def exp_weighted_cumulative(times: Sequence[float], values: Sequence[float], rate: float) -> np.ndarray:
    """
    ∫₀^{t_i} e^{−rate·t} g(t) dt với g tuyến tính trên từng khoảng

    Mỗi khoảng [t_i, t_i + h]: e^{−rate t_i}·h·[g₀φ1(z) + (g₁ − g₀)(φ1(z) − φ2(z))], z = −rate·h
    """
    times = np.asarray(times, dtype=float)
    g = np.asarray(values, dtype=float)
    out = np.zeros_like(times)
    if len(times) < 2:
        return out
    h = np.diff(times)
    _, phi1, phi2 = phi_functions(-rate * h)
    pieces = np.exp(-rate * times[:-1]) * h * (g[:-1] * phi1 + (g[1:] - g[:-1]) * (phi1 - phi2))
    out[1:] = np.cumsum(np.real(pieces))
    return out


def layer_aware_square_integral(times: Sequence[float], remainder2: Sequence[float], cross: Sequence[float],
                                layer_norm2: float, c: float) -> np.ndarray:
    """
    ∫₀^{t_i} ‖R + e^{−c²t}L₀‖² dt, cumulative

        = trapezoid(‖R‖²) + 2∫e^{−c²t}⟨R, L₀⟩ + ‖L₀‖²(1 − e^{−2c²t})/(2c²)
    """
    times = np.asarray(times, dtype=float)
    smooth = np.concatenate([[0.0], cumulative_trapezoid(remainder2, times)]) if len(times) > 1 else np.zeros(1)
    mixed = 2.0 * exp_weighted_cumulative(times, cross, c * c)
    layer = layer_norm2 * -np.expm1(-2.0 * c * c * times) / (2.0 * c * c)
    return smooth + mixed + layer


# ================================================================
# ENERGY LEDGER
# ================================================================

class EnergySamples(BaseModel):
    """
    Các mẫu năng lượng dọc một run

    dissipation_density là ‖j − e^{−c²t}L₀‖² (EM) hoặc ‖∇B̄‖² (MHD); cross là ⟨j − e^{−c²t}L₀, L₀⟩.
    """
    times: List[float] = Field(default_factory=list)
    kinetic: List[float] = Field(default_factory=list)
    electric: List[float] = Field(default_factory=list)
    magnetic: List[float] = Field(default_factory=list)
    dissipation_density: Optional[List[float]] = None
    cross: List[float] = Field(default_factory=list)
    layer_norm2: float = Field(default=0.0, ge=0)
    layer_rate: float = Field(default=0.0, ge=0, description="c² (0 for MHD)")


class EMEnergyRecorder:
    """
    Observer cho integrate_em: ghi năng lượng và current tại mỗi node

    L₀ = cE₀ − Ē(0), Ē(0) tính từ fluid data ban đầu.
    """

    def __init__(self, initial: EMState, record_current: bool = True):
        self.c = initial.c
        self.layer = initial.c * initial.E - compute_ebar(
            MHDState(t=initial.t, u_bar=initial.u, B_bar=initial.B)
        )
        self.t0 = initial.t
        self.record_current = record_current
        self.samples = EnergySamples(
            dissipation_density=[] if record_current else None,
            layer_norm2=inner_product(self.layer, self.layer),
            layer_rate=self.c ** 2,
        )

    def __call__(self, s: EMState) -> None:
        self.samples.times.append(s.t)
        self.samples.kinetic.append(0.5 * l2_norm(s.u) ** 2)
        self.samples.electric.append(0.5 * l2_norm(s.E) ** 2)
        self.samples.magnetic.append(0.5 * l2_norm(s.B) ** 2)
        if self.record_current:
            remainder = ohm_current(s) - math.exp(-self.c ** 2 * (s.t - self.t0)) * self.layer
            self.samples.dissipation_density.append(inner_product(remainder, remainder))
            self.samples.cross.append(inner_product(remainder, self.layer))


class MHDEnergyRecorder:
    """Observer cho integrate_mhd"""

    def __init__(self):
        self.samples = EnergySamples(dissipation_density=[])

    def __call__(self, s: MHDState) -> None:
        self.samples.times.append(s.t)
        self.samples.kinetic.append(0.5 * l2_norm(s.u_bar) ** 2)
        self.samples.electric.append(0.0)
        self.samples.magnetic.append(0.5 * l2_norm(s.B_bar) ** 2)
        self.samples.dissipation_density.append(gradient_norm(s.B_bar) ** 2)
        self.samples.cross.append(0.0)


def _ledger(samples: EnergySamples) -> EnergyLedger:
    n = len(samples.times)
    density = samples.dissipation_density
    if density is None or len(density) != n:
        raise AuditError(
            f"energy audit needs a current sample at every step "
            f"({0 if density is None else len(density)} of {n})"
        )
    if n == 0:
        return EnergyLedger(times=[], kinetic=[], electric=[], magnetic=[], dissipation=[], residual=[])

    times = samples.times
    if samples.layer_rate > 0:
        c = math.sqrt(samples.layer_rate)
        cross = samples.cross if len(samples.cross) == n else [0.0] * n
        shifted = [t - times[0] for t in times]
        dissipation = layer_aware_square_integral(shifted, density, cross, samples.layer_norm2, c)
    elif n > 1:
        dissipation = np.concatenate([[0.0], cumulative_trapezoid(density, times)])
    else:
        dissipation = np.zeros(1)

    total = np.asarray(samples.kinetic) + np.asarray(samples.electric) + np.asarray(samples.magnetic)
    residual = total + dissipation - total[0]
    return EnergyLedger(
        times=list(times),
        kinetic=list(samples.kinetic),
        electric=list(samples.electric),
        magnetic=list(samples.magnetic),
        dissipation=[float(x) for x in dissipation],
        residual=[float(x) for x in residual],
    )


def energy_audit(samples: EnergySamples) -> EnergyLedger:
    """
    Ledger ½(‖u‖² + ‖E‖² + ‖B‖²) + ∫‖j‖² − total(0)

    Raises:
        AuditError: thiếu current sample tại một node
    """
    ledger = _ledger(samples)
    logger.info("Energy audit: %d samples, relative residual %.3e", len(ledger.times), ledger.relative_residual())
    return ledger


def mhd_energy_audit(samples: EnergySamples) -> EnergyLedger:
    """Ledger ½(‖ū‖² + ‖B̄‖²) + ∫‖∇B̄‖²"""
    if samples.layer_rate:
        raise AuditError("MHD samples must not carry a boundary layer")
    return _ledger(samples)


def energy_jump_identity(em: EnergyLedger, mhd: EnergyLedger, electric0: float) -> List[float]:
    """
    [½(‖uᶜ‖²+‖Eᶜ‖²+‖Bᶜ‖²) + ∫‖jᶜ‖²] − [½(‖ū‖²+‖B̄‖²) + ∫‖j̄‖²] − ½‖E₀ᶜ‖² tại mỗi node

    Bằng 0 (sai số discretization) khi fluid data hai hệ trùng nhau.
    """
    if len(em.times) != len(mhd.times):
        raise ValueError(f"ledgers have {len(em.times)} and {len(mhd.times)} samples")
    return [
        (te + de) - (tm + dm) - 0.5 * electric0
        for te, de, tm, dm in zip(em.total, em.dissipation, mhd.total, mhd.dissipation)
    ]


# ================================================================
# INITIAL GAP
# ================================================================

def epsilon0(init_em: EMState, init_mhd: MHDState) -> InitialGap:
    """
    ℰ₀ᶜ = ‖u₀ᶜ − u₀‖ + ‖B₀ᶜ − B₀‖ + (‖cE₀ᶜ − Ē(0)‖_{H¹} + 1)/c²
    """
    check_same_grid(init_em.u, init_mhd.u_bar)
    c = init_em.c
    du0 = l2_norm(init_em.u - init_mhd.u_bar)
    dB0 = l2_norm(init_em.B - init_mhd.B_bar)
    dE0 = sobolev_norm(c * init_em.E - compute_ebar(init_mhd), 1.0)
    return InitialGap(c=c, du0=du0, dB0=dB0, dE0_H1=dE0, epsilon0=du0 + dB0 + (dE0 + 1.0) / c ** 2)


# ================================================================
# ERROR DECOMPOSITION
# ================================================================

class ErrorParts(BaseModel):
    """ũ = uᶜ − ū, Ẽ = Eᶜ − E_L, B̃ = Bᶜ − B̄ − B_L"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    u_tilde: SpectralField
    E_tilde: SpectralField
    B_tilde: SpectralField

    def norms(self) -> Tuple[float, float, float]:
        return l2_norm(self.u_tilde), l2_norm(self.E_tilde), l2_norm(self.B_tilde)


def error_decompose(em: EMState, mhd: MHDState, lin: LinState, time_tol: float = 1e-9) -> ErrorParts:
    """
    Raises:
        ValueError: ba state lệch thời điểm quá time_tol (thường dt/2)
    """
    check_same_grid(em.u, mhd.u_bar, lin.E_L)
    if abs(em.t - mhd.t) > time_tol or abs(em.t - lin.t) > time_tol:
        raise ValueError(f"time mismatch: em t={em.t}, mhd t={mhd.t}, linear t={lin.t}")
    return ErrorParts(
        u_tilde=em.u - mhd.u_bar,
        E_tilde=em.E - lin.E_L,
        B_tilde=em.B - mhd.B_bar - lin.B_L,
    )


def error_functional(parts: ErrorParts, c: float, dE0_H1: float) -> float:
    """(‖ũ‖² + ‖Ẽ‖² + ‖B̃‖² + c⁻⁴‖cE₀ᶜ − Ē(0)‖²_{H¹} + c⁻⁴)^{1/2}"""
    nu, nE, nB = parts.norms()
    return math.sqrt(nu ** 2 + nE ** 2 + nB ** 2 + (dE0_H1 ** 2 + 1.0) / c ** 4)


# ================================================================
# ∂tĒ
# ================================================================

def dt_ebar_series(history: EbarHistory) -> Tuple[NormSeries, NormSeries]:
    """
    ‖∂tĒ(t)‖_{L²} và ‖∂tĒ(t)‖_{H¹} bằng sai phân hữu hạn (centered, one-sided ở hai đầu)

    Raises:
        ValueError: ít hơn 3 mẫu
    """
    if len(history) < 3:
        raise ValueError(f"dt_ebar_series needs >= 3 samples (got {len(history)})")
    times = history.times
    derivative = np.gradient(history.values, times, axis=0)
    power = np.sum(np.abs(derivative) ** 2, axis=1)
    l2 = np.sqrt(VOLUME * np.sum(power, axis=1))
    h1 = np.sqrt(VOLUME * np.sum((1.0 + history.mode_k2)[None, :] * power, axis=1))
    return (
        NormSeries(label="dt_Ebar_L2", times=list(times), values=[float(x) for x in l2]),
        NormSeries(label="dt_Ebar_H1", times=list(times), values=[float(x) for x in h1]),
    )


def dt_ebar_bounds(history: EbarHistory) -> Tuple[float, float]:
    """(‖∂tĒ‖_{L∞(0,T;L²)}, ‖∂tĒ‖_{L²(0,T;H¹)})"""
    l2, h1 = dt_ebar_series(history)
    return lp_time_norm(l2, math.inf), lp_time_norm(h1, 2.0)


# ================================================================
# HIGH-NORM MONITORS
# ================================================================

def diagnostic_XA(em: EMState, m_index: int = 3) -> Tuple[float, float]:
    """
    X = ‖u‖²_{H^m} + ‖E‖²_{H^m} + ‖B‖²_{H^m}
    A = ‖∇u‖∞ + ‖u‖²∞ + ‖B‖²∞ + ‖j‖∞

    Chỉ theo dõi, không so với hằng số.
    """
    if m_index < 3:
        raise ValueError(f"m_index must be >= 3 (got {m_index})")
    X = sum(sobolev_norm(f, float(m_index)) ** 2 for f in em.fields())
    A = (
        gradient_linf_norm(em.u)
        + linf_norm(em.u) ** 2
        + linf_norm(em.B) ** 2
        + linf_norm(ohm_current(em))
    )
    return float(X), float(A)


class MBound(BaseModel):
    """∫₀ᵀ(‖Bᶜ‖²∞ + ‖jᶜ‖∞)dt và sup X(t)"""
    c: float
    integral: float = Field(..., ge=0)
    sup_X: float = Field(..., ge=0)


def m_bound(c: float, times: Sequence[float], B_linf: Sequence[float], j_linf: Sequence[float],
            X: Sequence[float]) -> MBound:
    B_linf = np.asarray(B_linf, dtype=float)
    integrand = B_linf ** 2 + np.asarray(j_linf, dtype=float)
    integral = float(trapezoid(integrand, times)) if len(times) > 1 else 0.0
    return MBound(c=c, integral=integral, sup_X=float(max(X, default=0.0)))
