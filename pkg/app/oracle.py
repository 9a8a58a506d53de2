"""
Brute-force self-check suite

Mỗi check so một toán tử nhanh với một cách tính chậm nhưng hiển nhiên đúng:
    - DFT trực tiếp O(n⁶) và vòng lặp theo từng mode cho spectral operators
    - scipy.linalg.expm trên block 6×6 tường minh cho ModePropagator
    - Decimal 50 chữ số cho φ-functions
    - scipy.integrate.quad_vec cho tích phân Duhamel của linear system
"""

import logging
import math
from decimal import Decimal, localcontext
from typing import Callable, List, Tuple

import numpy as np
import scipy.linalg
from scipy.integrate import quad_vec

from app.config import settings
from app.dynamics import LinState
from app.exceptions import OracleFailure
from app.models import OracleCheck, StepperConfig
from app.propagators import build_propagator, phi_functions
from app.spectral import (
    VOLUME,
    GridSpec,
    PhysicalField,
    SpectralField,
    SpectralScalar,
    curl,
    dealias,
    divergence,
    gradient,
    inner_product,
    leray_project,
    product_fields,
    remove_mean,
    sobolev_norm,
    to_physical,
    to_spectral,
)
from app.timestepping import EMPropagators, step_linear

logger = logging.getLogger(__name__)

OPERATOR_TOL = 1e-10
PROPAGATOR_TOL = 1e-11
PHI_TOL = 1e-12
DUHAMEL_TOL = 1e-7


# ================================================================
# DIRECT DFT
# ================================================================

def dft_matrix(n: int) -> np.ndarray:
    """Ma trận DFT 3D đầy đủ (n³ × n³), thứ tự C"""
    j = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(j, j) / n)
    return np.kron(F, np.kron(F, F))


def brute_forward(values: np.ndarray) -> np.ndarray:
    """f̂ = (1/n³) Σ_x f(x) e^{−ik·x}, áp dụng trên 3 trục cuối"""
    n = values.shape[-1]
    M = dft_matrix(n)
    flat = values.reshape(values.shape[:-3] + (n ** 3,))
    return (flat @ M.T / n ** 3).reshape(values.shape)


def brute_inverse(coeffs: np.ndarray) -> np.ndarray:
    """f(x) = Σ_k f̂(k) e^{ik·x}"""
    n = coeffs.shape[-1]
    M = np.conj(dft_matrix(n))
    flat = coeffs.reshape(coeffs.shape[:-3] + (n ** 3,))
    return (flat @ M.T).reshape(coeffs.shape)


def _signed(m: int, n: int) -> int:
    return m if m < n // 2 else m - n


def _mode_k(idx: Tuple[int, int, int], n: int) -> np.ndarray:
    """Wavevector đạo hàm của một index (Nyquist = 0)"""
    return np.array([0.0 if m == n // 2 else float(_signed(m, n)) for m in idx])


def _modes(n: int):
    for i in range(n):
        for j in range(n):
            for l in range(n):
                yield (i, j, l)


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(b).max(initial=0.0), 1e-300)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def _random_physical(grid: GridSpec, seed: int) -> PhysicalField:
    rng = np.random.default_rng(seed)
    return PhysicalField(grid=grid, values=rng.standard_normal(grid.vector_shape))


def _band_limited(grid: GridSpec, seed: int) -> SpectralField:
    """Field thực, mean-free, band-limited (dealiased) từ dữ liệu ngẫu nhiên"""
    return dealias(remove_mean(to_spectral(_random_physical(grid, seed))))


# ================================================================
# SPECTRAL OPERATOR CHECKS
# ================================================================

def check_transforms(grid: GridSpec) -> List[OracleCheck]:
    p = _random_physical(grid, 11)
    fast = to_spectral(p).data
    slow = brute_forward(p.values.astype(np.complex128))
    back = to_physical(to_spectral(p)).values
    return [
        OracleCheck(name="to_spectral vs direct DFT", error=_relative(fast, slow), tolerance=OPERATOR_TOL),
        OracleCheck(name="to_physical vs direct inverse DFT",
                    error=_relative(back, np.real(brute_inverse(slow))), tolerance=OPERATOR_TOL),
    ]


def check_differential_operators(grid: GridSpec) -> List[OracleCheck]:
    n = grid.n
    f = _band_limited(grid, 12)
    phi = SpectralScalar(grid=grid, data=f.data[0])

    curl_ref = np.zeros(grid.vector_shape, dtype=np.complex128)
    div_ref = np.zeros(grid.scalar_shape, dtype=np.complex128)
    grad_ref = np.zeros(grid.vector_shape, dtype=np.complex128)
    leray_ref = np.zeros(grid.vector_shape, dtype=np.complex128)
    dealias_ref = np.zeros(grid.vector_shape, dtype=np.complex128)
    raw = to_spectral(_random_physical(grid, 13))
    sob_sum = 0.0

    for idx in _modes(n):
        k = _mode_k(idx, n)
        v = f.data[(slice(None),) + idx]
        curl_ref[(slice(None),) + idx] = 1j * np.cross(k, v)
        div_ref[idx] = 1j * np.dot(k, v)
        grad_ref[(slice(None),) + idx] = 1j * k * phi.data[idx]
        k2 = float(np.dot(k, k))
        if k2 > 0:
            leray_ref[(slice(None),) + idx] = (np.eye(3) - np.outer(k, k) / k2) @ v
        kfull = np.array([abs(_signed(m, n)) if m != n // 2 else n // 2 for m in idx])
        if kfull.max() <= n // 3:
            dealias_ref[(slice(None),) + idx] = raw.data[(slice(None),) + idx]
        sob_sum += (1.0 + float(np.sum(kfull.astype(float) ** 2))) * float(np.sum(np.abs(v) ** 2))

    return [
        OracleCheck(name="curl", error=_relative(curl(f).data, curl_ref), tolerance=OPERATOR_TOL),
        OracleCheck(name="divergence", error=_relative(divergence(f).data, div_ref), tolerance=OPERATOR_TOL),
        OracleCheck(name="gradient", error=_relative(gradient(phi).data, grad_ref), tolerance=OPERATOR_TOL),
        OracleCheck(name="leray_project", error=_relative(leray_project(f).data, leray_ref), tolerance=OPERATOR_TOL),
        OracleCheck(name="dealias", error=_relative(dealias(raw).data, dealias_ref), tolerance=OPERATOR_TOL),
        OracleCheck(name="sobolev_norm H1",
                    error=abs(sobolev_norm(f, 1.0) - math.sqrt(VOLUME * sob_sum)) / math.sqrt(VOLUME * sob_sum),
                    tolerance=OPERATOR_TOL),
    ]


def check_products(grid: GridSpec) -> List[OracleCheck]:
    n = grid.n
    a = _band_limited(grid, 14)
    b = _band_limited(grid, 15)
    pa = np.real(brute_inverse(a.data))
    pb = np.real(brute_inverse(b.data))

    cross_ref = brute_forward(np.cross(pa, pb, axis=0).astype(np.complex128))
    adv_phys = np.zeros(grid.vector_shape)
    for i in range(3):
        for j in range(3):
            kj = np.zeros(grid.scalar_shape)
            for idx in _modes(n):
                kj[idx] = _mode_k(idx, n)[j]
            adv_phys[i] += pa[j] * np.real(brute_inverse(1j * kj * b.data[i]))
    adv_ref = brute_forward(adv_phys.astype(np.complex128))

    mask = grid.wavenumbers().dealias_mask
    inner_ref = float(np.sum(pa * pb)) * VOLUME / n ** 3
    return [
        OracleCheck(name="cross product (dealiased)",
                    error=_relative(product_fields(a, b, "cross").data, cross_ref * mask), tolerance=OPERATOR_TOL),
        OracleCheck(name="advection (dealiased)",
                    error=_relative(product_fields(a, b, "advection").data, adv_ref * mask), tolerance=OPERATOR_TOL),
        OracleCheck(name="inner_product (Parseval)",
                    error=abs(inner_product(a, b) - inner_ref) / max(abs(inner_ref), 1e-300), tolerance=OPERATOR_TOL),
    ]


# ================================================================
# PROPAGATOR / φ / DUHAMEL
# ================================================================

def curl_matrix(k: np.ndarray) -> np.ndarray:
    """Ma trận của v ↦ ik × v"""
    return 1j * np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])


def dense_block(k: np.ndarray, c: float) -> np.ndarray:
    """Ma trận 6×6 của (E, B) ↦ (−c²E + c ik×B, −c ik×E)"""
    W = curl_matrix(k)
    top = np.hstack([-c * c * np.eye(3), c * W])
    bottom = np.hstack([-c * W, np.zeros((3, 3))])
    return np.vstack([top, bottom])


def _solenoidal_pair(k: np.ndarray, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    P = np.eye(3) - np.outer(k, k) / max(float(np.dot(k, k)), 1e-300) if np.any(k) else np.eye(3)
    E = P @ (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    B = P @ (rng.standard_normal(3) + 1j * rng.standard_normal(3))
    return E, B


def propagator_error(k, c: float, dt: float, seed: int = 21) -> float:
    """Sai số tương đối giữa ModePropagator.homogeneous và expm(dt·A) trên một cặp solenoidal"""
    k = np.asarray(k, dtype=float)
    E, B = _solenoidal_pair(k, seed)
    prop = build_propagator(k, c, dt)
    fast = np.concatenate(prop.homogeneous(E, B))
    exact = scipy.linalg.expm(dt * dense_block(k, c)) @ np.concatenate([E, B])
    return _relative(fast, exact)


def check_propagators() -> List[OracleCheck]:
    c = 2.0
    cases = [
        ("propagator k=0", (0.0, 0.0, 0.0), c, 0.1),
        ("propagator c=2 |k|=1 dt=0.1", (1.0, 0.0, 0.0), c, 0.1),
        ("propagator |k|=c/2 (double root)", (c / 2.0, 0.0, 0.0), c, 0.1),
        ("propagator |k|=c/2+1e-6", (c / 2.0 + 1e-6, 0.0, 0.0), c, 0.1),
        ("propagator |k|=c/2-1e-6", (c / 2.0 - 1e-6, 0.0, 0.0), c, 0.1),
        ("propagator oblique, wave regime", (1.0, 2.0, -1.0), 0.8, 0.05),
        ("propagator stiff c=20", (1.0, 1.0, 0.0), 20.0, 0.02),
    ]
    return [OracleCheck(name=name, error=propagator_error(k, cc, dt), tolerance=PROPAGATOR_TOL)
            for name, k, cc, dt in cases]


def phi_decimal(z: float) -> Tuple[Decimal, Decimal, Decimal]:
    """φ0, φ1, φ2 tại z thực với 50 chữ số"""
    with localcontext() as ctx:
        ctx.prec = 50
        zd = Decimal(repr(z))
        e = zd.exp()
        if zd == 0:
            return Decimal(1), Decimal(1), Decimal(1) / Decimal(2)
        return e, (e - 1) / zd, (e - 1 - zd) / (zd * zd)


def check_phi_functions() -> List[OracleCheck]:
    points = [-1e6, -1e3, -37.5, -1.0, -0.1, -2e-3, -9e-4, -1e-6, 0.0, 1e-6, 5e-4, 0.5, 3.0]
    worst = 0.0
    for z in points:
        fast = phi_functions(z)
        exact = phi_decimal(z)
        for j in (1, 2):
            ref = float(exact[j])
            worst = max(worst, abs(float(fast[j]) - ref) / abs(ref))
    return [OracleCheck(name="phi_functions vs 50-digit decimal", error=worst, tolerance=PHI_TOL)]


def check_duhamel(c: float = 3.0, T: float = 0.2, steps: int = 8) -> List[OracleCheck]:
    """
    Linear system một mode, Ē(t) = (0.3 + 2t)·f, so với nghiệm Duhamel bằng quad_vec
    """
    grid = GridSpec(n=4)
    idx = (1, 0, 0)
    k = np.array([1.0, 0.0, 0.0])
    f_mode = np.array([0.0, 1.0, 0.5j])
    e0_mode = np.array([0.0, 0.2, -0.7])

    def mode_field(vec: np.ndarray) -> SpectralField:
        data = np.zeros(grid.vector_shape, dtype=np.complex128)
        data[(slice(None),) + idx] = vec
        mirror = tuple((-m) % grid.n for m in idx)
        data[(slice(None),) + mirror] = np.conj(vec)
        return SpectralField(grid=grid, data=data, solenoidal=True)

    ramp: Callable[[float], float] = lambda t: 0.3 + 2.0 * t  # noqa: E731
    ebar_at = lambda t: mode_field(ramp(t) * f_mode)  # noqa: E731

    dt = T / steps
    cfg = StepperConfig(scheme="ETD2", t_end=T)
    props = EMPropagators(grid, c, dt, "ETD2")
    state = LinState.initial(mode_field(e0_mode), c)
    for _ in range(steps):
        state = step_linear(state, ebar_at, cfg, props)
    fast = np.concatenate([state.E_L.data[(slice(None),) + idx], state.B_L.data[(slice(None),) + idx]])

    A = dense_block(k, c)
    W = curl_matrix(k)

    def integrand(s: float) -> np.ndarray:
        forcing = np.concatenate([c * ramp(s) * f_mode, W @ (ramp(s) * f_mode)])
        return scipy.linalg.expm((T - s) * A) @ forcing

    duhamel, _ = quad_vec(integrand, 0.0, T, epsabs=1e-13, epsrel=1e-12)
    exact = scipy.linalg.expm(T * A) @ np.concatenate([e0_mode, np.zeros(3)]) + duhamel
    return [OracleCheck(name="linear step vs Duhamel quadrature", error=_relative(fast, exact), tolerance=DUHAMEL_TOL)]


# ================================================================
# SUITE
# ================================================================

def run_oracle_suite(n: int = None, strict: bool = False) -> List[OracleCheck]:
    """
    Chạy toàn bộ oracle checks trên lưới n³ (mặc định ORACLE_GRID)

    Raises:
        OracleFailure: khi strict=True và có check không đạt
    """
    grid = GridSpec(n=n or settings.ORACLE_GRID)
    checks: List[OracleCheck] = []
    checks += check_transforms(grid)
    checks += check_differential_operators(grid)
    checks += check_products(grid)
    checks += check_propagators()
    checks += check_phi_functions()
    checks += check_duhamel()

    failed = [c.name for c in checks if not c.passed]
    logger.info("Oracle suite: %d checks, %d failed", len(checks), len(failed))
    if strict and failed:
        raise OracleFailure(f"oracle checks failed: {', '.join(failed)}")
    return checks
