"""
Spectral core trên torus [0, 2π)³

Quy ước:
    f(x) = Σ_k f̂(k) e^{ik·x},  ‖f‖²_{L²} = (2π)³ Σ_k |f̂(k)|²
    f̂ = fftn(f) / n³ ; f = ifftn(f̂) · n³

Vector fields lưu dưới dạng mảng complex shape (3, n, n, n), trục 1..3 ứng với x₁, x₂, x₃.
Wavenumber cho đạo hàm đặt Nyquist = 0; các field tiến hóa luôn bị cắt dưới dealias cutoff.
"""

import logging
import math
from functools import lru_cache
from typing import Literal, Tuple

import numpy as np
import scipy.fft
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import settings
from app.exceptions import BlowUpError, GridMismatchError

logger = logging.getLogger(__name__)

VOLUME = (2.0 * np.pi) ** 3
DIVFREE_TOL = 1e-12
MEAN_TOL = 1e-12


# ================================================================
# GRID
# ================================================================

class GridSpec(BaseModel):
    """
    Lưới n³ trên [0, 2π)³

    Attributes:
        n: số mode mỗi trục (chẵn, 4 ≤ n ≤ 256)
    """
    model_config = ConfigDict(frozen=True)

    n: int = Field(..., ge=4, le=256, description="Modes per axis")

    @field_validator("n")
    @classmethod
    def check_even(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"n must be even (got {v})")
        return v

    @property
    def dealias_cutoff(self) -> int:
        return self.n // 3

    @property
    def dx(self) -> float:
        return 2.0 * np.pi / self.n

    @property
    def scalar_shape(self) -> Tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def vector_shape(self) -> Tuple[int, int, int, int]:
        return (3, self.n, self.n, self.n)

    def wavenumbers(self) -> "Wavenumbers":
        return _wavenumbers(self.n)

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Collocation points x₁, x₂, x₃ (indexing='ij')"""
        x = np.arange(self.n) * self.dx
        return tuple(np.meshgrid(x, x, x, indexing="ij"))


class Wavenumbers:
    """Các mảng wavenumber broadcast được cho một n cố định"""

    def __init__(self, n: int):
        freqs = scipy.fft.fftfreq(n, d=1.0 / n)
        deriv = freqs.copy()
        deriv[n // 2] = 0.0  # Nyquist không có đạo hàm lẻ

        self.n = n
        self.k = (
            deriv[:, None, None],
            deriv[None, :, None],
            deriv[None, None, :],
        )
        self.k2 = self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2
        self.k2_full = freqs[:, None, None] ** 2 + freqs[None, :, None] ** 2 + freqs[None, None, :] ** 2
        with np.errstate(divide="ignore"):
            self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)

        cutoff = n // 3
        kmax = np.maximum(
            np.maximum(np.abs(freqs)[:, None, None], np.abs(freqs)[None, :, None]),
            np.abs(freqs)[None, None, :],
        )
        self.dealias_mask = kmax <= cutoff

        for arr in (*self.k, self.k2, self.k2_full, self.inv_k2, self.dealias_mask):
            arr.flags.writeable = False


@lru_cache(maxsize=16)
def _wavenumbers(n: int) -> Wavenumbers:
    return Wavenumbers(n)


# ================================================================
# DFT PROVIDER
# ================================================================

class FFTProvider:
    """
    Forward không chuẩn hóa, inverse chuẩn hóa 1/n³ (scipy.fft mặc định)

    Thread-safe; số worker lấy từ settings.FFT_WORKERS tại thời điểm gọi.
    """

    def __init__(self, workers: int = None):
        self._workers = workers

    @property
    def workers(self) -> int:
        return self._workers if self._workers is not None else settings.FFT_WORKERS

    def forward(self, values: np.ndarray) -> np.ndarray:
        return scipy.fft.fftn(values, axes=(-3, -2, -1), workers=self.workers)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return scipy.fft.ifftn(coeffs, axes=(-3, -2, -1), workers=self.workers)


fft_provider = FFTProvider()


def set_fft_provider(provider: FFTProvider) -> FFTProvider:
    """Thay DFT provider; trả về provider cũ"""
    global fft_provider
    previous, fft_provider = fft_provider, provider
    return previous


# ================================================================
# FIELD TYPES
# ================================================================

def _readonly_complex(v) -> np.ndarray:
    arr = np.ascontiguousarray(v, dtype=np.complex128)
    arr.flags.writeable = False
    return arr


class SpectralField(BaseModel):
    """
    Vector field lưu bằng hệ số Fourier

    Attributes:
        grid: GridSpec
        data: complex array shape (3, n, n, n)
        solenoidal: flag divergence-free
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: GridSpec
    data: np.ndarray
    solenoidal: bool = False

    @field_validator("data")
    @classmethod
    def to_complex(cls, v) -> np.ndarray:
        return _readonly_complex(v)

    @model_validator(mode="after")
    def check_shape(self) -> "SpectralField":
        if self.data.shape != self.grid.vector_shape:
            raise ValueError(f"data shape {self.data.shape} does not match grid {self.grid.vector_shape}")
        return self

    # ==================== CONSTRUCTORS ====================

    @classmethod
    def zeros(cls, grid: GridSpec, solenoidal: bool = True) -> "SpectralField":
        return cls(grid=grid, data=np.zeros(grid.vector_shape, dtype=np.complex128), solenoidal=solenoidal)

    def with_data(self, data: np.ndarray, solenoidal: bool = None) -> "SpectralField":
        return SpectralField(
            grid=self.grid,
            data=data,
            solenoidal=self.solenoidal if solenoidal is None else solenoidal,
        )

    # ==================== ARITHMETIC ====================

    def __add__(self, other: "SpectralField") -> "SpectralField":
        check_same_grid(self, other)
        return self.with_data(self.data + other.data, self.solenoidal and other.solenoidal)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        check_same_grid(self, other)
        return self.with_data(self.data - other.data, self.solenoidal and other.solenoidal)

    def __mul__(self, scalar) -> "SpectralField":
        return self.with_data(self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return self.with_data(-self.data)

    # ==================== CHECKS ====================

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        """f̂(−k) = conj(f̂(k))"""
        mirrored = np.roll(np.flip(self.data, axis=(1, 2, 3)), 1, axis=(1, 2, 3))
        scale = max(np.abs(self.data).max(initial=0.0), 1e-300)
        return bool(np.abs(self.data - np.conj(mirrored)).max(initial=0.0) <= tol * scale)

    def is_divergence_free(self, tol: float = DIVFREE_TOL) -> bool:
        """|k·f̂(k)| ≤ tol·|f̂(k)| cho mọi k"""
        k = self.grid.wavenumbers().k
        kdotf = np.abs(k[0] * self.data[0] + k[1] * self.data[1] + k[2] * self.data[2])
        mag = np.sqrt(np.sum(np.abs(self.data) ** 2, axis=0))
        return bool(np.all(kdotf <= tol * mag + 1e-300))

    def mean_mode(self) -> np.ndarray:
        return self.data[:, 0, 0, 0]


class SpectralScalar(BaseModel):
    """Scalar field trong không gian Fourier, shape (n, n, n)"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: GridSpec
    data: np.ndarray

    @field_validator("data")
    @classmethod
    def to_complex(cls, v) -> np.ndarray:
        return _readonly_complex(v)

    @model_validator(mode="after")
    def check_shape(self) -> "SpectralScalar":
        if self.data.shape != self.grid.scalar_shape:
            raise ValueError(f"data shape {self.data.shape} does not match grid {self.grid.scalar_shape}")
        return self

    def to_physical(self) -> np.ndarray:
        n3 = self.grid.n ** 3
        return np.real(fft_provider.inverse(self.data)) * n3

    @classmethod
    def from_physical(cls, grid: GridSpec, values: np.ndarray) -> "SpectralScalar":
        return cls(grid=grid, data=fft_provider.forward(np.asarray(values, dtype=float)) / grid.n ** 3)


class PhysicalField(BaseModel):
    """Vector field trên lưới collocation n³, shape (3, n, n, n), giá trị thực"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: GridSpec
    values: np.ndarray

    @field_validator("values")
    @classmethod
    def to_real(cls, v) -> np.ndarray:
        arr = np.ascontiguousarray(v, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise BlowUpError("physical field contains non-finite values", t=math.nan)
        return arr

    @model_validator(mode="after")
    def check_shape(self) -> "PhysicalField":
        if self.values.shape != self.grid.vector_shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.vector_shape}")
        return self


# ================================================================
# TRANSFORMS
# ================================================================

def check_same_grid(*fields) -> GridSpec:
    """Tất cả field phải cùng grid"""
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid.n != grid.n:
            raise GridMismatchError(f"grid mismatch: n={grid.n} vs n={f.grid.n}")
    return grid


def to_physical(f: SpectralField) -> PhysicalField:
    n3 = f.grid.n ** 3
    return PhysicalField(grid=f.grid, values=np.real(fft_provider.inverse(f.data)) * n3)


def to_spectral(p: PhysicalField, solenoidal: bool = False) -> SpectralField:
    return SpectralField(grid=p.grid, data=fft_provider.forward(p.values) / p.grid.n ** 3, solenoidal=solenoidal)


def from_function(grid: GridSpec, func) -> SpectralField:
    """Field từ hàm func(x1, x2, x3) -> (f1, f2, f3) trên lưới collocation"""
    x1, x2, x3 = grid.coordinates()
    values = np.stack([np.broadcast_to(c, grid.scalar_shape) for c in func(x1, x2, x3)])
    return to_spectral(PhysicalField(grid=grid, values=values))


# ================================================================
# DIFFERENTIAL OPERATORS
# ================================================================

def _cross_k(k, a: np.ndarray) -> np.ndarray:
    """k × a theo từng mode"""
    return np.stack([
        k[1] * a[2] - k[2] * a[1],
        k[2] * a[0] - k[0] * a[2],
        k[0] * a[1] - k[1] * a[0],
    ])


def curl(f: SpectralField) -> SpectralField:
    """(curl f)̂(k) = i k × f̂(k)"""
    k = f.grid.wavenumbers().k
    return f.with_data(1j * _cross_k(k, f.data), solenoidal=True)


def divergence(f: SpectralField) -> SpectralScalar:
    """(div f)̂(k) = i k·f̂(k)"""
    k = f.grid.wavenumbers().k
    return SpectralScalar(grid=f.grid, data=1j * (k[0] * f.data[0] + k[1] * f.data[1] + k[2] * f.data[2]))


def gradient(phi: SpectralScalar) -> SpectralField:
    k = phi.grid.wavenumbers().k
    return SpectralField(
        grid=phi.grid,
        data=np.stack([1j * np.broadcast_to(kj, phi.grid.scalar_shape) * phi.data for kj in k]),
    )


def remove_mean(f: SpectralField) -> SpectralField:
    data = f.data.copy()
    data[:, 0, 0, 0] = 0.0
    return f.with_data(data)


def leray_project(f: SpectralField) -> SpectralField:
    """
    (Pf)̂(k) = f̂(k) − k (k·f̂(k)) / |k|²

    Raises:
        ValueError: mean mode khác 0 (P không xác định tại k = 0)
    """
    mean = np.abs(f.mean_mode()).max()
    if mean > MEAN_TOL * max(np.abs(f.data).max(), 1e-300):
        raise ValueError(f"leray_project requires zero mean mode (|f̂(0)| = {mean:.3e})")

    wn = f.grid.wavenumbers()
    k = wn.k
    kdotf = (k[0] * f.data[0] + k[1] * f.data[1] + k[2] * f.data[2]) * wn.inv_k2
    data = np.stack([f.data[i] - k[i] * kdotf for i in range(3)])
    data[:, 0, 0, 0] = 0.0
    return f.with_data(data, solenoidal=True)


def dealias(f: SpectralField) -> SpectralField:
    """2/3 rule: zero các mode có max_i |k_i| > n // 3"""
    return f.with_data(f.data * f.grid.wavenumbers().dealias_mask)


# ================================================================
# NORMS
# ================================================================

def sobolev_norm(f: SpectralField, s: float = 0.0) -> float:
    """((2π)³ Σ_k (1+|k|²)^s |f̂(k)|²)^{1/2}"""
    if s < 0:
        raise ValueError(f"sobolev_norm requires s >= 0 (got {s})")
    weight = (1.0 + f.grid.wavenumbers().k2_full) ** s
    return float(np.sqrt(VOLUME * np.sum(weight * np.sum(np.abs(f.data) ** 2, axis=0))))


def l2_norm(f: SpectralField) -> float:
    return sobolev_norm(f, 0.0)


def gradient_norm(f: SpectralField) -> float:
    """‖∇f‖_{L²} = ((2π)³ Σ |k|² |f̂|²)^{1/2}"""
    return float(np.sqrt(VOLUME * np.sum(f.grid.wavenumbers().k2_full * np.sum(np.abs(f.data) ** 2, axis=0))))


def inner_product(a: SpectralField, b: SpectralField) -> float:
    """∫ a·b dx (Parseval)"""
    check_same_grid(a, b)
    return float(VOLUME * np.sum(np.real(np.conj(a.data) * b.data)))


def linf_norm(f: SpectralField) -> float:
    """max_x |f(x)| (Euclidean magnitude)"""
    values = to_physical(f).values
    return float(np.sqrt(np.sum(values ** 2, axis=0)).max())


def gradient_linf_norm(f: SpectralField) -> float:
    """max_x |∇f(x)| (Frobenius norm của tensor ∂_j f_i)"""
    k = f.grid.wavenumbers().k
    n3 = f.grid.n ** 3
    total = np.zeros(f.grid.scalar_shape)
    for i in range(3):
        for j in range(3):
            total += (np.real(fft_provider.inverse(1j * k[j] * f.data[i])) * n3) ** 2
    return float(np.sqrt(total).max())


# ================================================================
# NONLINEAR PRODUCTS
# ================================================================

def product_fields(a: SpectralField, b: SpectralField, kind: Literal["cross", "advection"]) -> SpectralField:
    """
    Pseudo-spectral product, dealiased

    kind:
        cross: a × b
        advection: (a·∇) b (gradient tính trong không gian Fourier)
    """
    grid = check_same_grid(a, b)
    pa = to_physical(a).values

    if kind == "cross":
        pb = to_physical(b).values
        values = np.cross(pa, pb, axis=0)
    elif kind == "advection":
        k = grid.wavenumbers().k
        n3 = grid.n ** 3
        values = np.zeros(grid.vector_shape)
        for i in range(3):
            for j in range(3):
                dj_bi = np.real(fft_provider.inverse(1j * k[j] * b.data[i])) * n3
                values[i] += pa[j] * dj_bi
    else:
        raise ValueError(f"unknown product kind: {kind!r}")

    return dealias(to_spectral(PhysicalField(grid=grid, values=values)))


# ================================================================
# RANDOM INITIAL DATA
# ================================================================

def _canonical_modes(cutoff: int) -> np.ndarray:
    """Các wavevector |k_i| ≤ cutoff, xếp theo (max-norm shell, k₁, k₂, k₃)"""
    r = np.arange(-cutoff, cutoff + 1)
    kx, ky, kz = (a.ravel() for a in np.meshgrid(r, r, r, indexing="ij"))
    shell = np.maximum(np.maximum(np.abs(kx), np.abs(ky)), np.abs(kz))
    order = np.lexsort((kz, ky, kx, shell))
    return np.stack([kx[order], ky[order], kz[order]], axis=1)


def random_divfree_field(grid: GridSpec, seed: int, amplitude: float = 1.0, decay: float = 6.0) -> SpectralField:
    """
    Random solenoidal field với |f̂(k)| ∝ amplitude·(1+|k|²)^{−decay/2}

    Phase được rút theo thứ tự shell cố định nên các mode thấp giống nhau khi tăng n.
    """
    if decay <= 3.5:
        raise ValueError(f"decay must exceed 7/2 (got {decay})")

    modes = _canonical_modes(grid.dealias_cutoff)
    rng = np.random.default_rng(seed)
    phases = 2.0 * np.pi * rng.random((modes.shape[0], 3))

    mag = amplitude * (1.0 + np.sum(modes.astype(float) ** 2, axis=1)) ** (-decay / 2.0)
    coeffs = mag[:, None] * np.exp(1j * phases)

    n = grid.n
    g = np.zeros(grid.vector_shape, dtype=np.complex128)
    idx = tuple((modes % n).T)
    for comp in range(3):
        g[comp][idx] = coeffs[:, comp]

    mirrored = np.roll(np.flip(g, axis=(1, 2, 3)), 1, axis=(1, 2, 3))
    data = 0.5 * (g + np.conj(mirrored))
    data[:, 0, 0, 0] = 0.0

    return dealias(leray_project(SpectralField(grid=grid, data=data)))
