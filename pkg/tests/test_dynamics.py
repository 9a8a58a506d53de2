"""
Tests cho app.dynamics: Ohm's law, forcing của ba hệ, energy identities dạng vi phân
"""

import numpy as np
import pytest

from app.dynamics import (
    EMState,
    LinState,
    MHDState,
    compute_ebar,
    compute_jbar,
    em_energy_rate,
    em_rhs,
    em_split_rhs,
    lin_bold_rhs,
    lin_rhs,
    mhd_energy_rate,
    mhd_rhs,
    ohm_current,
    project,
    recover_pressure,
)
from app.spectral import (
    SpectralField,
    curl,
    gradient,
    l2_norm,
    leray_project,
    product_fields,
    remove_mean,
)


class TestStates:
    """Validation của các state"""

    def test_grid_mismatch(self, random_fields, grid4):
        u, E, _ = random_fields
        with pytest.raises(ValueError, match="grid mismatch"):
            EMState(c=2.0, u=u, E=E, B=SpectralField.zeros(grid4))

    def test_c_positive(self, random_fields):
        u, E, B = random_fields
        with pytest.raises(ValueError):
            EMState(c=0.0, u=u, E=E, B=B)

    def test_linear_initial(self, random_fields):
        lin = LinState.initial(random_fields[1], c=3.0)
        assert lin.t == 0.0
        assert l2_norm(lin.B_L) == 0.0
        assert np.array_equal(lin.E_L.data, random_fields[1].data)


class TestOhmCurrent:
    """j = cE + P(u×B)"""

    def test_no_flow(self, random_fields, grid8):
        _, E, B = random_fields
        s = EMState(c=5.0, u=SpectralField.zeros(grid8), E=E, B=B)
        assert np.allclose(ohm_current(s).data, 5.0 * E.data, atol=1e-15)

    def test_divergence_free(self, em_state):
        assert ohm_current(em_state).is_divergence_free()

    def test_matches_composition(self, em_state):
        j = ohm_current(em_state)
        uxb = product_fields(em_state.u, em_state.B, "cross")
        expected = em_state.c * em_state.E.data + leray_project(remove_mean(uxb)).data
        assert np.max(np.abs(j.data - expected)) <= 1e-14


class TestEulerMaxwell:
    """em_rhs và energy identity"""

    def test_zero_fluid(self, grid8):
        zero = SpectralField.zeros(grid8)
        du, dE, dB = em_rhs(EMState(c=3.0, u=zero, E=zero, B=zero))
        assert l2_norm(du) == 0.0 and l2_norm(dE) == 0.0 and l2_norm(dB) == 0.0

    def test_outputs_solenoidal(self, em_state):
        du, dE, _ = em_rhs(em_state)
        assert du.is_divergence_free()
        assert dE.is_divergence_free()
        assert du.is_hermitian() and dE.is_hermitian()

    def test_energy_identity(self, em_state):
        # ½ d/dt(‖u‖²+‖E‖²+‖B‖²) + ‖j‖² = 0
        rate, dissipation = em_energy_rate(em_state)
        assert abs(rate + dissipation) <= 1e-8 * dissipation

    def test_pressure_makes_tendency_solenoidal(self, em_state):
        j = ohm_current(em_state)
        g = product_fields(j, em_state.B, "cross") - product_fields(em_state.u, em_state.u, "advection")
        residual = remove_mean(g - gradient(recover_pressure(em_state)))
        assert l2_norm(leray_project(residual) - residual) <= 1e-10 * l2_norm(residual)

    def test_split_forcing_without_current(self, em_state):
        # cE = −P(u×B) ⇒ j = 0: lực Lorentz triệt tiêu, phần fluid giữ P(u×B)×B
        s = em_state
        p_uxb = project(product_fields(s.u, s.B, "cross"))
        no_current = EMState(c=s.c, u=s.u, E=-(1.0 / s.c) * p_uxb, B=s.B)
        du, dE, _ = em_rhs(no_current)
        du_fluid, dE_split = em_split_rhs(no_current)

        advection = project(-1.0 * product_fields(s.u, s.u, "advection"))
        assert l2_norm(du - advection) <= 1e-10 * l2_norm(advection)
        assert l2_norm(du_fluid - du - project(product_fields(p_uxb, s.B, "cross"))) <= 1e-10 * l2_norm(du_fluid)
        assert l2_norm(dE_split - dE) == 0.0


class TestMHD:
    """mhd_rhs, Ē, j̄"""

    def test_zero_velocity(self, mhd_state, grid8):
        s = MHDState(u_bar=SpectralField.zeros(grid8), B_bar=mhd_state.B_bar)
        _, dB = mhd_rhs(s)
        assert l2_norm(dB) == 0.0
        assert np.allclose(compute_ebar(s).data, curl(s.B_bar).data, atol=1e-15)

    def test_no_field_reduces_to_euler(self, mhd_state, grid8):
        s = MHDState(u_bar=mhd_state.u_bar, B_bar=SpectralField.zeros(grid8))
        du, dB = mhd_rhs(s)
        euler = project(-1.0 * product_fields(s.u_bar, s.u_bar, "advection"))

        assert np.max(np.abs(du.data - euler.data)) <= 1e-14
        assert l2_norm(dB) == 0.0
        assert l2_norm(compute_ebar(s)) == 0.0

    def test_jbar_is_curl(self, mhd_state):
        assert np.array_equal(compute_jbar(mhd_state).data, curl(mhd_state.B_bar).data)

    def test_energy_identity(self, mhd_state):
        # ½ d/dt(‖ū‖²+‖B̄‖²) + ‖∇B̄‖² = 0
        rate, dissipation = mhd_energy_rate(mhd_state)
        assert abs(rate + dissipation) <= 1e-8 * dissipation


class TestLinearSystem:
    """lin_rhs và dạng viết lại theo 𝐁 = B_L + B̄"""

    def test_zero_forcing(self, random_fields, grid8):
        lin = LinState.initial(random_fields[1], c=4.0)
        fE, fB = lin_rhs(lin, SpectralField.zeros(grid8))
        assert l2_norm(fE) == 0.0 and l2_norm(fB) == 0.0

    def test_forcing(self, random_fields, mhd_state):
        lin = LinState.initial(random_fields[1], c=4.0)
        ebar = compute_ebar(mhd_state)
        fE, fB = lin_rhs(lin, ebar)

        assert np.allclose(fE.data, 4.0 * ebar.data)
        assert np.allclose(fB.data, curl(ebar).data)

    def test_bold_formulation(self, mhd_state):
        # −cP(ū×B̄) = c(Ē − ∇×B̄)
        c = 6.0
        forcing, zero = lin_bold_rhs(mhd_state, c)
        expected = c * (compute_ebar(mhd_state) - curl(mhd_state.B_bar))

        assert np.max(np.abs(forcing.data - expected.data)) <= 1e-13
        assert l2_norm(zero) == 0.0
