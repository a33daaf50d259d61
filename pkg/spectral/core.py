"""
Real and spectral representations of fields on the unit torus.

Coefficients are stored compactly: a scalar table has shape (..., m, m) with
m = 2*k_max + 1 and entry [k1 + k_max, k2 + k_max] holding the coefficient of
exp(i 2 pi k.x). Leading axes are free, so a time series of fields is one array.
Differentiation multiplies mode k by i*xi_k with xi_k = 2 pi k.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Tuple, Union

import numpy as np

from utils import FieldError, GridError, get_logger

logger = get_logger(__name__)

ModeIndex = Tuple[int, int]


# ========== Grid ==========

@dataclass(frozen=True)
class GridSpec:
    n: int
    k_max: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 8 or (self.n & (self.n - 1)) != 0:
            raise GridError(f"n must be a power of two >= 8, got {self.n}")
        if not 1 <= self.k_max <= self.n // 2 - 1:
            raise GridError(f"k_max must lie in [1, {self.n // 2 - 1}] for n={self.n}, got {self.k_max}")

    @property
    def m(self) -> int:
        return 2 * self.k_max + 1

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        """(2, n, n) node coordinates x_ab = (a/n, b/n)."""
        coords = np.arange(self.n) / self.n
        return np.stack(np.meshgrid(coords, coords, indexing="ij"))

    @cached_property
    def modes(self) -> np.ndarray:
        """(2, m, m) integer wave vectors."""
        ks = np.arange(-self.k_max, self.k_max + 1)
        return np.stack(np.meshgrid(ks, ks, indexing="ij"))

    @cached_property
    def xi(self) -> np.ndarray:
        return 2.0 * np.pi * self.modes

    @cached_property
    def xi_norm(self) -> np.ndarray:
        return np.hypot(self.xi[0], self.xi[1])

    @cached_property
    def k_norm(self) -> np.ndarray:
        return np.hypot(self.modes[0], self.modes[1]).astype(float)

    @cached_property
    def nonzero(self) -> np.ndarray:
        mask = np.ones((self.m, self.m), dtype=bool)
        mask[self.k_max, self.k_max] = False
        return mask

    @cached_property
    def _fft_index(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.modes[0] % self.n, self.modes[1] % self.n

    def index(self, k: ModeIndex) -> Tuple[int, int]:
        k1, k2 = k
        if max(abs(k1), abs(k2)) > self.k_max:
            raise GridError(f"mode {k} outside truncation |k|_inf <= {self.k_max}")
        return k1 + self.k_max, k2 + self.k_max


def _check_same_grid(*grids: GridSpec) -> GridSpec:
    first = grids[0]
    for other in grids[1:]:
        if other != first:
            raise FieldError(f"grid mismatch: {first} vs {other}")
    return first


# ========== Field Types ==========

@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[-2:] != (self.grid.n, self.grid.n):
            raise FieldError(f"scalar samples must end in ({self.grid.n}, {self.grid.n}), got {self.values.shape}")


@dataclass
class VectorField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[-3:] != (2, self.grid.n, self.grid.n):
            raise FieldError(f"vector samples must end in (2, {self.grid.n}, {self.grid.n}), got {self.values.shape}")


@dataclass
class SpectralScalar:
    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape[-2:] != (self.grid.m, self.grid.m):
            raise FieldError(f"scalar coefficients must end in ({self.grid.m}, {self.grid.m}), got {self.coeffs.shape}")

    def coeff(self, k: ModeIndex):
        a, b = self.grid.index(k)
        return self.coeffs[..., a, b]

    def __add__(self, other: "SpectralScalar") -> "SpectralScalar":
        return SpectralScalar(_check_same_grid(self.grid, other.grid), self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralScalar") -> "SpectralScalar":
        return SpectralScalar(_check_same_grid(self.grid, other.grid), self.coeffs - other.coeffs)

    def scaled(self, factor) -> "SpectralScalar":
        return SpectralScalar(self.grid, self.coeffs * factor)


@dataclass
class SpectralVector:
    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.coeffs.shape[-3:] != (2, self.grid.m, self.grid.m):
            raise FieldError(f"vector coefficients must end in (2, {self.grid.m}, {self.grid.m}), got {self.coeffs.shape}")

    def coeff(self, k: ModeIndex):
        a, b = self.grid.index(k)
        return self.coeffs[..., :, a, b]

    def component(self, i: int) -> SpectralScalar:
        return SpectralScalar(self.grid, self.coeffs[..., i, :, :])

    def __add__(self, other: "SpectralVector") -> "SpectralVector":
        return SpectralVector(_check_same_grid(self.grid, other.grid), self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralVector") -> "SpectralVector":
        return SpectralVector(_check_same_grid(self.grid, other.grid), self.coeffs - other.coeffs)

    def scaled(self, factor) -> "SpectralVector":
        return SpectralVector(self.grid, self.coeffs * factor)


Field = Union[ScalarField, VectorField]
Spectral = Union[SpectralScalar, SpectralVector]


# ========== Transforms ==========

def spectral_coeffs(grid: GridSpec, values: np.ndarray) -> np.ndarray:
    """Truncated coefficients of real samples with shape (..., n, n)."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise FieldError("non-finite samples cannot be transformed")
    full = np.fft.fft2(values, axes=(-2, -1)) / grid.n ** 2
    i1, i2 = grid._fft_index
    return full[..., i1, i2]


def real_values(grid: GridSpec, coeffs: np.ndarray) -> np.ndarray:
    """Real samples of compact coefficients with shape (..., m, m)."""
    coeffs = np.asarray(coeffs)
    full = np.zeros(coeffs.shape[:-2] + (grid.n, grid.n), dtype=np.complex128)
    i1, i2 = grid._fft_index
    full[..., i1, i2] = coeffs
    return np.fft.ifft2(full, axes=(-2, -1)).real * grid.n ** 2


def to_spectral(f: Field) -> Spectral:
    if isinstance(f, VectorField):
        return SpectralVector(f.grid, spectral_coeffs(f.grid, f.values))
    if isinstance(f, ScalarField):
        return SpectralScalar(f.grid, spectral_coeffs(f.grid, f.values))
    raise FieldError(f"cannot transform {type(f).__name__}")


def to_real(s: Spectral) -> Field:
    if isinstance(s, SpectralVector):
        return VectorField(s.grid, real_values(s.grid, s.coeffs))
    return ScalarField(s.grid, real_values(s.grid, s.coeffs))


def is_hermitian(s: Spectral, tol: float = 1e-12) -> bool:
    flipped = np.conj(s.coeffs[..., ::-1, ::-1])
    return bool(np.max(np.abs(s.coeffs - flipped), initial=0.0) <= tol * max(1.0, np.max(np.abs(s.coeffs), initial=0.0)))


# ========== Differential Operators ==========

def gradient(phi: SpectralScalar) -> SpectralVector:
    ixi = 1j * phi.grid.xi
    return SpectralVector(phi.grid, ixi * phi.coeffs[..., np.newaxis, :, :])


def divergence(e: SpectralVector) -> SpectralScalar:
    xi = e.grid.xi
    return SpectralScalar(e.grid, 1j * (xi[0] * e.coeffs[..., 0, :, :] + xi[1] * e.coeffs[..., 1, :, :]))


def curl_vec(e: SpectralVector) -> SpectralScalar:
    """d1 E2 - d2 E1."""
    xi = e.grid.xi
    return SpectralScalar(e.grid, 1j * (xi[0] * e.coeffs[..., 1, :, :] - xi[1] * e.coeffs[..., 0, :, :]))


def curl_scal(b: SpectralScalar) -> SpectralVector:
    """(d2 b, -d1 b)."""
    xi = b.grid.xi
    return SpectralVector(b.grid, np.stack([1j * xi[1] * b.coeffs, -1j * xi[0] * b.coeffs], axis=-3))


def laplacian(phi: SpectralScalar) -> SpectralScalar:
    return SpectralScalar(phi.grid, -(phi.grid.xi_norm ** 2) * phi.coeffs)


def inverse_laplacian(h: SpectralScalar) -> SpectralScalar:
    """Zero-mean solution of lap(theta) = h - mean(h)."""
    grid = h.grid
    denom = np.where(grid.nonzero, -(grid.xi_norm ** 2), 1.0)
    coeffs = np.where(grid.nonzero, h.coeffs / denom, 0.0)
    return SpectralScalar(grid, coeffs)


def mean(s: Union[Spectral, Field]):
    """Spatial mean; a vector gives one value per component."""
    if isinstance(s, (ScalarField, VectorField)):
        return s.values.mean(axis=(-2, -1))
    k = s.grid.k_max
    value = s.coeffs[..., k, k]
    return value.real if np.all(np.abs(value.imag) < 1e-12 * max(1.0, float(np.max(np.abs(value), initial=0.0)))) else value


def l2_norm_squared(s: Spectral) -> np.ndarray:
    """Parseval side: sum of |coeff|^2 over modes (and components)."""
    axes = (-3, -2, -1) if isinstance(s, SpectralVector) else (-2, -1)
    return np.sum(np.abs(s.coeffs) ** 2, axis=axes)


def grid_l2_squared(f: Field) -> np.ndarray:
    """Grid-averaged integral of |f|^2."""
    axes = (-3, -2, -1) if isinstance(f, VectorField) else (-2, -1)
    return np.sum(f.values ** 2, axis=axes) / f.grid.n ** 2


# ========== Point Evaluation ==========

def evaluate_series(grid: GridSpec, coeffs: np.ndarray, points: np.ndarray,
                    derivative: Tuple[int, int] = (0, 0)) -> np.ndarray:
    """
    Evaluate a compact coefficient table (m, m) and its partial derivatives at
    arbitrary points (P, 2). The sum factorizes over the two axes, so the cost
    is one (P, m) x (m, m) product.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    ks = np.arange(-grid.k_max, grid.k_max + 1)
    phase1 = np.exp(2j * np.pi * np.outer(points[:, 0], ks))
    phase2 = np.exp(2j * np.pi * np.outer(points[:, 1], ks))
    weighted = coeffs * (2j * np.pi * ks[:, None]) ** derivative[0] * (2j * np.pi * ks[None, :]) ** derivative[1]
    return np.einsum("pa,ab,pb->p", phase1, weighted, phase2).real


def scalar_field(grid: GridSpec, fn) -> ScalarField:
    """Sample fn(x1, x2) on the grid nodes."""
    x1, x2 = grid.nodes
    return ScalarField(grid, np.broadcast_to(fn(x1, x2), (grid.n, grid.n)).copy())


def vector_field(grid: GridSpec, fn) -> VectorField:
    x1, x2 = grid.nodes
    f1, f2 = fn(x1, x2)
    return VectorField(grid, np.stack([np.broadcast_to(f1, x1.shape), np.broadcast_to(f2, x1.shape)]))
