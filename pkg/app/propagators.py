"""
Exact propagators cho phần tuyến tính stiff

Telegraph block trên mặt phẳng vuông góc với k, với W = i k× (W² = |k|² trên solenoidal fields):

    d/dt [Ê; B̂] = A [Ê; B̂],  A = [[−c², cW], [−cW, 0]]

Mọi hàm f của block có dạng f(hA) = a_f I + b_f (hA), với a_f, b_f chỉ phụ thuộc |k|², c, h
(Cayley–Hamilton trên từng polarization). Eigenvalues của hA là h·λ±,
λ± = (−c² ± √(c⁴ − 4c²|k|²)) / 2.

Heat block cho B̄ là scalar: e^{−|k|²h} và các φ-function tương ứng.
"""

import logging
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from app.spectral import GridSpec, _cross_k

logger = logging.getLogger(__name__)

PHI_SERIES_RADIUS = 1e-3
PHI_SERIES_TERMS = 8
CONTOUR_NODES = 64
DEGENERATE_TOL = 1e-6

_FACTORIALS = np.cumprod([1.0] + [float(i) for i in range(1, PHI_SERIES_TERMS + 3)])


# ================================================================
# φ-FUNCTIONS
# ================================================================

def phi_functions(z) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    φ0 = e^z, φ1 = (e^z − 1)/z, φ2 = (e^z − 1 − z)/z²

    Taylor 8 số hạng khi |z| < 1e-3. Nhận scalar hoặc array (real/complex).
    """
    z = np.asarray(z)
    small = np.abs(z) < PHI_SERIES_RADIUS
    safe = np.where(small, 1.0, z)

    em1 = np.expm1(safe)
    phi0 = np.exp(z)
    phi1 = em1 / safe
    phi2 = (em1 - safe) / safe ** 2

    if np.any(small):
        zs = np.where(small, z, 0.0)
        s1 = np.zeros_like(phi1)
        s2 = np.zeros_like(phi2)
        power = np.ones_like(zs)
        for j in range(PHI_SERIES_TERMS):
            s1 = s1 + power / _FACTORIALS[j + 1]
            s2 = s2 + power / _FACTORIALS[j + 2]
            power = power * zs
        phi1 = np.where(small, s1, phi1)
        phi2 = np.where(small, s2, phi2)

    return phi0, phi1, phi2


# ================================================================
# 2×2 BLOCK COEFFICIENTS
# ================================================================

def block_coefficients(kappa2, c: float, h: float) -> Dict[int, Tuple[np.ndarray, np.ndarray]]:
    """
    Hệ số (a_j, b_j) sao cho φ_j(hA) = a_j I + b_j (hA), j = 0, 1, 2

    Với z₁, z₂ là eigenvalues của hA:
        b = (f(z₁) − f(z₂)) / (z₁ − z₂),  a = (z₁ f(z₂) − z₂ f(z₁)) / (z₁ − z₂)

    Gần double root (|δ| nhỏ, z₁,₂ = z_m ± δ) dùng Cauchy integral trên đường tròn
    quanh z_m; tại δ = 0 kết quả trùng Jordan form.
    """
    kappa2 = np.atleast_1d(np.asarray(kappa2, dtype=float))
    zm = -0.5 * c * c * h
    det = (c * h) ** 2 * kappa2
    delta2 = zm * zm - det
    abs_delta = np.sqrt(np.abs(delta2))

    # vùng gần suy biến: luôn chứa |c⁴ − 4c²|k|²| < 1e-6·c⁴
    near = abs_delta < max(0.5, 0.25 * abs(zm))
    real_split = (~near) & (delta2 > 0)
    complex_split = (~near) & (delta2 <= 0)

    out = {j: (np.zeros_like(kappa2), np.zeros_like(kappa2)) for j in range(3)}

    if np.any(real_split):
        d = abs_delta[real_split]
        z_minus = zm - d
        z_plus = det[real_split] / z_minus  # tránh cancellation của zm + d
        f_minus = phi_functions(z_minus)
        f_plus = phi_functions(z_plus)
        gap = z_plus - z_minus
        for j in range(3):
            out[j][0][real_split] = (z_plus * f_minus[j] - z_minus * f_plus[j]) / gap
            out[j][1][real_split] = (f_plus[j] - f_minus[j]) / gap

    if np.any(complex_split):
        w = abs_delta[complex_split]
        f1 = phi_functions(zm + 1j * w)
        for j in range(3):
            b = f1[j].imag / w
            out[j][1][complex_split] = b
            out[j][0][complex_split] = f1[j].real - zm * b

    if np.any(near):
        radius = max(1.0, 0.5 * abs(zm))
        theta = 2.0 * np.pi * (np.arange(CONTOUR_NODES) + 0.5) / CONTOUR_NODES
        rot = radius * np.exp(1j * theta)
        zeta = zm + rot
        denom = rot[None, :] ** 2 - delta2[near][:, None]
        f_zeta = phi_functions(zeta)
        for j in range(3):
            weight = f_zeta[j][None, :] * rot[None, :] / denom
            out[j][1][near] = np.mean(weight, axis=1).real
            out[j][0][near] = np.mean(weight * (zeta[None, :] - 2.0 * zm), axis=1).real

    return out


# ================================================================
# MODE PROPAGATOR
# ================================================================

class ModePropagator:
    """
    Exact exponential của telegraph block + φ-weights cho forcing

    Workflow:
        1. Lấy các giá trị |k|² phân biệt (grid hoặc một wavevector)
        2. Tính (a_j, b_j) cho j = 0, 1, 2 bằng block_coefficients
        3. Trải lại về shape của grid

    Attributes:
        k: tuple 3 mảng wavenumber broadcast được
        c, dt: tham số
        coefficients: {j: (a_j, b_j)}; j = 0 là homogeneous, 1 và 2 là φ1, φ2
    """

    def __init__(self, k: Sequence[np.ndarray], c: float, dt: float):
        if dt <= 0:
            raise ValueError(f"dt must be positive (got {dt})")
        if c <= 0:
            raise ValueError(f"c must be positive (got {c})")

        self.k = tuple(np.asarray(kj, dtype=float) for kj in k)
        self.c = float(c)
        self.dt = float(dt)

        kappa2 = self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2
        values, inverse = np.unique(kappa2, return_inverse=True)
        raw = block_coefficients(values, self.c, self.dt)
        shape = np.shape(kappa2)
        self.kappa2 = kappa2
        self.coefficients = {
            j: (a[inverse].reshape(shape), b[inverse].reshape(shape)) for j, (a, b) in raw.items()
        }

    @classmethod
    def for_grid(cls, grid: GridSpec, c: float, dt: float) -> "ModePropagator":
        return cls(grid.wavenumbers().k, c, dt)

    # ==================== APPLICATION ====================

    def _curl(self, data: np.ndarray) -> np.ndarray:
        return 1j * _cross_k(self.k, data)

    def apply(self, j: int, E: np.ndarray, B: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        φ_j(hA) tác động lên (Ê, B̂) (solenoidal)

        (Ê, B̂) ↦ a(Ê, B̂) + b·h(−c²Ê + cWB̂, −cWÊ)
        """
        a, b = self.coefficients[j]
        h, c = self.dt, self.c
        hb = h * b
        curl_E = self._curl(E)
        if B is None:
            E_new = (a - c * c * hb) * E
            B_new = -c * hb * curl_E
        else:
            E_new = (a - c * c * hb) * E + c * hb * self._curl(B)
            B_new = a * B - c * hb * curl_E
        return E_new, B_new

    def homogeneous(self, E: np.ndarray, B: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.apply(0, E, B)

    # ==================== INSPECTION ====================

    def block_matrix(self, j: int = 0, index=()) -> np.ndarray:
        """
        Ma trận 2×2 tường minh trên polarization W = +|k| tại một mode

        Dùng để so sánh với dense expm.
        """
        a = np.asarray(self.coefficients[j][0])[index]
        b = np.asarray(self.coefficients[j][1])[index]
        kappa = float(np.sqrt(np.asarray(self.kappa2)[index]))
        h, c = self.dt, self.c
        block = h * np.array([[-c * c, c * kappa], [-c * kappa, 0.0]])
        return a * np.eye(2) + b * block


def build_propagator(k: Union[GridSpec, Sequence[float]], c: float, dt: float) -> ModePropagator:
    """ModePropagator cho cả grid hoặc cho một wavevector k = (k₁, k₂, k₃)"""
    if isinstance(k, GridSpec):
        return ModePropagator.for_grid(k, c, dt)
    k1, k2, k3 = (np.asarray(float(x)) for x in k)
    return ModePropagator((k1, k2, k3), c, dt)


def telegraph_eigenvalues(kappa2: float, c: float) -> Tuple[complex, complex]:
    """λ± = (−c² ± √(c⁴ − 4c²|k|²)) / 2"""
    root = np.sqrt(complex(c ** 4 - 4.0 * c * c * kappa2))
    return (-c * c + root) / 2.0, (-c * c - root) / 2.0


def is_degenerate(kappa2: float, c: float) -> bool:
    """|c⁴ − 4c²|k|²| < 1e-6·c⁴"""
    return abs(c ** 4 - 4.0 * c * c * kappa2) < DEGENERATE_TOL * c ** 4


# ================================================================
# HEAT PROPAGATOR
# ================================================================

class HeatPropagator:
    """φ_j(−|k|²h) cho phần −ΔB̄ của MHD"""

    def __init__(self, grid: GridSpec, dt: float):
        if dt <= 0:
            raise ValueError(f"dt must be positive (got {dt})")
        self.grid = grid
        self.dt = float(dt)
        self.phi = phi_functions(-grid.wavenumbers().k2 * self.dt)

    def apply(self, j: int, data: np.ndarray) -> np.ndarray:
        return self.phi[j] * data
