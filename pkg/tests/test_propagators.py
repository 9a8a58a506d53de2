"""
Tests cho exact propagators: φ-functions, telegraph block, heat multiplier
"""

import math

import numpy as np
import pytest
import scipy.linalg

from app.oracle import dense_block, phi_decimal, propagator_error
from app.propagators import (
    DEGENERATE_TOL,
    HeatPropagator,
    ModePropagator,
    block_coefficients,
    build_propagator,
    is_degenerate,
    phi_functions,
    telegraph_eigenvalues,
)


class TestPhiFunctions:
    """φ0, φ1, φ2 với nhánh Taylor quanh 0"""

    def test_at_zero(self):
        phi0, phi1, phi2 = phi_functions(0.0)
        assert (phi0, phi1, phi2) == (1.0, 1.0, 0.5)

    def test_closed_form(self):
        # c = 10, dt = 0.01 ⇒ z = −1
        _, phi1, _ = phi_functions(-1.0)
        assert phi1 == pytest.approx(1.0 - math.exp(-1.0), rel=1e-15)

    @pytest.mark.parametrize("z", [-1e6, -250.0, -3.0, -1.001e-3, -0.999e-3, -1e-7, 2e-4, 1.5])
    def test_against_decimal(self, z):
        fast = phi_functions(z)
        exact = phi_decimal(z)
        for j in (0, 1, 2):
            ref = float(exact[j])
            if ref != 0.0:
                assert abs(float(fast[j]) - ref) <= 1e-12 * abs(ref)

    def test_array_and_complex(self):
        z = np.array([0.0, -1e-5, -2.0 + 1.0j])
        phi0, phi1, phi2 = phi_functions(z)

        assert phi1.shape == (3,)
        assert phi1[2] == pytest.approx((np.exp(z[2]) - 1) / z[2], rel=1e-14)
        assert phi2[2] == pytest.approx((np.exp(z[2]) - 1 - z[2]) / z[2] ** 2, rel=1e-13)


class TestModePropagator:
    """exp(hA) trên telegraph block so với scipy.linalg.expm"""

    def test_k_zero(self):
        c, dt = 3.0, 0.05
        prop = build_propagator((0.0, 0.0, 0.0), c, dt)
        E = np.array([1.0, -2.0, 0.5], dtype=complex)
        B = np.array([0.3, 0.0, 1.0], dtype=complex)
        E1, B1 = prop.homogeneous(E, B)

        assert np.allclose(E1, math.exp(-c * c * dt) * E, rtol=1e-14)
        assert np.allclose(B1, B, rtol=1e-14)

    @pytest.mark.parametrize("k, c, dt", [
        ((1.0, 0.0, 0.0), 2.0, 0.1),
        ((1.0, 2.0, -1.0), 0.8, 0.05),
        ((0.0, 3.0, 4.0), 50.0, 0.01),
        ((1.0, 1.0, 0.0), 20.0, 0.02),
    ])
    def test_against_expm(self, k, c, dt):
        assert propagator_error(k, c, dt) <= 1e-11

    @pytest.mark.parametrize("offset", [0.0, 1e-6, -1e-6, 1e-3, -0.2])
    def test_double_root_neighbourhood(self, offset):
        c = 2.0
        assert propagator_error((c / 2.0 + offset, 0.0, 0.0), c, 0.1) <= 1e-11

    def test_jordan_form_at_double_root(self):
        c, dt = 2.0, 0.1
        kappa = c / 2.0
        lam = -c * c / 2.0
        A = np.array([[-c * c, c * kappa], [-c * kappa, 0.0]])
        jordan = (np.eye(2) + (A - lam * np.eye(2)) * dt) * math.exp(lam * dt)
        block = build_propagator((kappa, 0.0, 0.0), c, dt).block_matrix(0)
        assert np.max(np.abs(block - jordan)) <= 1e-13

    def test_phi_weights_match_expm(self):
        # φ1(hA) = (hA)⁻¹(e^{hA} − I)
        c, dt, kappa = 3.0, 0.07, 1.7
        prop = build_propagator((kappa, 0.0, 0.0), c, dt)
        hA = dt * np.array([[-c * c, c * kappa], [-c * kappa, 0.0]])
        expected = np.linalg.solve(hA, scipy.linalg.expm(hA) - np.eye(2))
        assert np.max(np.abs(prop.block_matrix(1) - expected)) <= 1e-12

    def test_spectral_radius(self):
        c, dt = 7.0, 0.03
        for kappa in (0.0, 0.5, 3.5, 3.5 + 1e-7, 10.0, 100.0):
            block = build_propagator((kappa, 0.0, 0.0), c, dt).block_matrix(0)
            assert np.max(np.abs(np.linalg.eigvals(block))) <= 1.0 + 1e-12

    def test_heat_limit(self):
        # c → ∞: phần tử B→B tiến về e^{−|k|²dt}
        dt, kappa = 0.05, 3.0
        for c in (100.0, 300.0):
            block = build_propagator((kappa, 0.0, 0.0), c, dt).block_matrix(0)
            heat = math.exp(-kappa ** 2 * dt)
            assert abs(block[1, 1] - heat) / heat <= 10.0 / c ** 2

    def test_grid_propagator_shares_coefficients(self, grid8):
        prop = ModePropagator.for_grid(grid8, c=4.0, dt=0.01)
        a, b = prop.coefficients[0]
        assert a.shape == grid8.scalar_shape
        # cùng |k|² ⇒ cùng hệ số
        assert a[1, 2, 0] == a[2, 0, 1] == a[7, 6, 0]

    def test_invalid_parameters(self):
        with pytest.raises(ValueError, match="dt"):
            build_propagator((1.0, 0.0, 0.0), 2.0, -0.1)
        with pytest.raises(ValueError, match="c"):
            build_propagator((1.0, 0.0, 0.0), 0.0, 0.1)


class TestTelegraphHelpers:
    """eigenvalues và phát hiện double root"""

    def test_eigenvalues_are_roots(self):
        c, kappa2 = 3.0, 1.3
        for lam in telegraph_eigenvalues(kappa2, c):
            assert abs(lam ** 2 + c * c * lam + c * c * kappa2) <= 1e-12

    def test_degenerate(self):
        c = 4.0
        assert is_degenerate(c * c / 4.0, c)
        assert not is_degenerate(c * c / 4.0 * (1.0 + 10 * DEGENERATE_TOL), c)

    @pytest.mark.parametrize("offset", [-1e-9, 1e-9])
    def test_coefficients_exact_on_both_sides_of_contour_switch(self, offset):
        # c = 2, h = 0.1: |δ| = 0.5 tại |k|² = 7.25, ranh giới contour / complex
        c, h = 2.0, 0.1
        kappa = math.sqrt(7.25 + offset)
        M = h * np.array([[-c * c, c * kappa], [-c * kappa, 0.0]])
        coeffs = block_coefficients(kappa * kappa, c, h)

        expm = scipy.linalg.expm(M)
        exact = {0: expm, 1: np.linalg.solve(M, expm - np.eye(2))}
        for j, reference in exact.items():
            a, b = coeffs[j]
            assert np.allclose(a[0] * np.eye(2) + b[0] * M, reference, rtol=0.0, atol=1e-12)

    def test_matches_dense_block_eigen(self):
        c, k = 2.5, np.array([0.0, 1.0, 0.0])
        eig = np.sort_complex(np.linalg.eigvals(dense_block(k, c)))
        lam = telegraph_eigenvalues(1.0, c)
        for value in lam:
            assert np.min(np.abs(eig - value)) <= 1e-12


class TestHeatPropagator:
    """φ_j(−|k|²h)"""

    def test_homogeneous_is_heat_factor(self, grid8, shear_field):
        heat = HeatPropagator(grid8, dt=0.2)
        out = heat.apply(0, shear_field.data)
        assert np.allclose(out, math.exp(-0.2) * shear_field.data, rtol=1e-14)

    def test_rejects_bad_dt(self, grid8):
        with pytest.raises(ValueError):
            HeatPropagator(grid8, dt=0.0)
