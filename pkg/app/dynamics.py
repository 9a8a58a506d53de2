"""
Right-hand sides cho ba hệ phương trình

    Euler–Maxwell (σ = 1):
        ∂t u = P[−(u·∇)u + j×B],  j = cE + P(u×B)
        ∂t E = c∇×B − c²E − cP(u×B)
        ∂t B = −c∇×E
    MHD:
        ∂t ū = P[−(ū·∇)ū + (∇×B̄)×B̄]
        ∂t B̄ = ΔB̄ + ∇×(ū×B̄)
    Linear system (driven by Ē = ∇×B̄ − P(ū×B̄)):
        ∂t E_L = c∇×B_L − c²E_L + cĒ
        ∂t B_L = −c∇×E_L + ∇×Ē

Phần stiff tuyến tính (wave coupling, −c²E, ΔB̄) thuộc về propagator trong timestepping;
các hàm *_rhs ở đây chỉ trả về phần forcing.
"""

import logging
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.spectral import (
    GridSpec,
    SpectralField,
    SpectralScalar,
    check_same_grid,
    curl,
    inner_product,
    gradient_norm,
    leray_project,
    product_fields,
    remove_mean,
)

logger = logging.getLogger(__name__)


# ================================================================
# STATES
# ================================================================

class EMState(BaseModel):
    """
    Trạng thái Euler–Maxwell (u, E, B) tại thời điểm t với tham số c

    Pressure không lưu; xem recover_pressure.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: float = Field(default=0.0, ge=0)
    c: float = Field(..., gt=0)
    u: SpectralField
    E: SpectralField
    B: SpectralField

    @model_validator(mode="after")
    def check_grids(self) -> "EMState":
        check_same_grid(self.u, self.E, self.B)
        return self

    @property
    def grid(self) -> GridSpec:
        return self.u.grid

    def fields(self) -> Tuple[SpectralField, ...]:
        return (self.u, self.E, self.B)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(f.data)) for f in self.fields())


class MHDState(BaseModel):
    """Trạng thái MHD (ū, B̄)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: float = Field(default=0.0, ge=0)
    u_bar: SpectralField
    B_bar: SpectralField

    @model_validator(mode="after")
    def check_grids(self) -> "MHDState":
        check_same_grid(self.u_bar, self.B_bar)
        return self

    @property
    def grid(self) -> GridSpec:
        return self.u_bar.grid

    def fields(self) -> Tuple[SpectralField, ...]:
        return (self.u_bar, self.B_bar)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(f.data)) for f in self.fields())


class LinState(BaseModel):
    """
    Trạng thái của linear system (E_L, B_L)

    Biến 𝐁 = B_L + B̄ của dạng viết lại không lưu ở đây.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    t: float = Field(default=0.0, ge=0)
    c: float = Field(..., gt=0)
    E_L: SpectralField
    B_L: SpectralField

    @model_validator(mode="after")
    def check_grids(self) -> "LinState":
        check_same_grid(self.E_L, self.B_L)
        return self

    @property
    def grid(self) -> GridSpec:
        return self.E_L.grid

    def fields(self) -> Tuple[SpectralField, ...]:
        return (self.E_L, self.B_L)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(f.data)) for f in self.fields())

    @classmethod
    def initial(cls, E0: SpectralField, c: float, t: float = 0.0) -> "LinState":
        """E_L(0) = E₀ᶜ, B_L(0) = 0"""
        return cls(t=t, c=c, E_L=E0, B_L=SpectralField.zeros(E0.grid))


# ================================================================
# HELPERS
# ================================================================

def project(f: SpectralField) -> SpectralField:
    """Leray projection sau khi bỏ mean mode (P coi như 0 tại k = 0)"""
    return leray_project(remove_mean(f))


# ================================================================
# EULER–MAXWELL
# ================================================================

def ohm_current(s: EMState) -> SpectralField:
    """j = cE + P(u×B)"""
    return s.c * s.E + project(product_fields(s.u, s.B, "cross"))


def em_split_rhs(s: EMState) -> Tuple[SpectralField, SpectralField]:
    """
    Forcing của Euler–Maxwell không chứa phần cE×B của lực Lorentz

    cE×B stiff trong boundary layer; timestepping tích phân nó bằng impulse c∫E dt chính xác.

    Returns:
        du_fluid: P[−(u·∇)u + P(u×B)×B]
        dE_forcing: −cP(u×B)
    """
    p_uxb = project(product_fields(s.u, s.B, "cross"))
    lorentz = product_fields(p_uxb, s.B, "cross")
    advection = product_fields(s.u, s.u, "advection")
    return project(lorentz - advection), -s.c * p_uxb


def em_rhs(s: EMState) -> Tuple[SpectralField, SpectralField, SpectralField]:
    """
    Forcing của Euler–Maxwell

    Returns:
        du: P[−(u·∇)u + j×B]
        dE_forcing: −cP(u×B)
        dB_forcing: 0
    """
    du_fluid, dE = em_split_rhs(s)
    du = du_fluid + project(s.c * product_fields(s.E, s.B, "cross"))
    return du, dE, SpectralField.zeros(s.grid)


def em_linear_tendency(s: EMState) -> Tuple[SpectralField, SpectralField]:
    """Phần tuyến tính: (c∇×B − c²E, −c∇×E)"""
    return s.c * curl(s.B) - (s.c ** 2) * s.E, -s.c * curl(s.E)


def em_energy_rate(s: EMState) -> Tuple[float, float]:
    """
    (d/dt ½(‖u‖²+‖E‖²+‖B‖²), ‖j‖²) tại một thời điểm

    Tổng hai giá trị bằng 0 (dạng vi phân của energy identity).
    """
    du, dE_f, dB_f = em_rhs(s)
    dE_lin, dB_lin = em_linear_tendency(s)
    rate = (
        inner_product(s.u, du)
        + inner_product(s.E, dE_f + dE_lin)
        + inner_product(s.B, dB_f + dB_lin)
    )
    j = ohm_current(s)
    return rate, inner_product(j, j)


def recover_pressure(s: EMState) -> SpectralScalar:
    """
    p̂(k) = −i k·ĝ(k)/|k|², g = j×B − (u·∇)u, mean = 0

    Khi đó g − ∇p là solenoidal.
    """
    j = ohm_current(s)
    g = product_fields(j, s.B, "cross") - product_fields(s.u, s.u, "advection")
    wn = s.grid.wavenumbers()
    k = wn.k
    kdotg = k[0] * g.data[0] + k[1] * g.data[1] + k[2] * g.data[2]
    data = -1j * kdotg * wn.inv_k2
    data[0, 0, 0] = 0.0
    return SpectralScalar(grid=s.grid, data=data)


# ================================================================
# MHD
# ================================================================

def compute_jbar(s: MHDState) -> SpectralField:
    """j̄ = ∇×B̄"""
    return curl(s.B_bar)


def compute_ebar(s: MHDState) -> SpectralField:
    """Ē = ∇×B̄ − P(ū×B̄)"""
    return curl(s.B_bar) - project(product_fields(s.u_bar, s.B_bar, "cross"))


def mhd_rhs(s: MHDState) -> Tuple[SpectralField, SpectralField]:
    """
    Forcing của MHD

    Returns:
        du_bar: P[−(ū·∇)ū + (∇×B̄)×B̄]
        dB_bar: ∇×(ū×B̄) (ΔB̄ thuộc heat propagator)
    """
    lorentz = product_fields(compute_jbar(s), s.B_bar, "cross")
    advection = product_fields(s.u_bar, s.u_bar, "advection")
    du = project(lorentz - advection)
    dB = curl(product_fields(s.u_bar, s.B_bar, "cross"))
    return du, dB


def mhd_energy_rate(s: MHDState) -> Tuple[float, float]:
    """(d/dt ½(‖ū‖²+‖B̄‖²), ‖∇B̄‖²)"""
    du, dB_f = mhd_rhs(s)
    k2 = s.grid.wavenumbers().k2
    laplace_B = s.B_bar.with_data(-k2 * s.B_bar.data)
    rate = inner_product(s.u_bar, du) + inner_product(s.B_bar, dB_f + laplace_B)
    return rate, gradient_norm(s.B_bar) ** 2


# ================================================================
# LINEAR SYSTEM
# ================================================================

def lin_rhs(s: LinState, ebar: SpectralField) -> Tuple[SpectralField, SpectralField]:
    """Forcing (cĒ, ∇×Ē); phần damped-wave thuộc propagator"""
    check_same_grid(s.E_L, ebar)
    return s.c * ebar, curl(ebar)


def lin_bold_rhs(mhd: MHDState, c: float) -> Tuple[SpectralField, SpectralField]:
    """
    Forcing của dạng viết lại theo 𝐁 = B_L + B̄:
        ∂t E_L = c∇×𝐁 − c²E_L − cP(ū×B̄),  ∂t 𝐁 = −c∇×E_L
    """
    forcing = -c * project(product_fields(mhd.u_bar, mhd.B_bar, "cross"))
    return forcing, SpectralField.zeros(mhd.grid)
