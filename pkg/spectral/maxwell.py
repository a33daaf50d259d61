"""
Maxwell evolution on the torus with prescribed sources.

Field equations (B is the out-of-plane magnetic field):
    dE1/dt - c d2 B = -j1,   dE2/dt + c d1 B = -j2,   dB/dt + c (d1 E2 - d2 E1) = 0.

Each mode k != 0 splits into a longitudinal part, fixed by Gauss's law and
updated directly from rho, and a transverse pair (a, B) rotating at frequency
omega = c |xi_k|. The rotation is applied exactly; the source integral is
integrated against the exact kernel with a piecewise quadratic interpolant of
the source samples.
"""
from dataclasses import dataclass, field
from math import factorial
from typing import List, Optional, Tuple

import numpy as np

from config import MaxwellDefaults
from utils import ChargeConservationError, FieldError, ZeroMeanCurrentError, get_logger

from .core import (GridSpec, ScalarField, SpectralScalar, SpectralVector, VectorField, _check_same_grid,
                   real_values, spectral_coeffs)

logger = get_logger(__name__)

# Monomial coefficients of the quadratic Lagrange basis on local nodes.
_FORWARD_BASIS = np.array([[1.0, -1.5, 0.5], [0.0, 2.0, -1.0], [0.0, -0.5, 0.5]])   # nodes 0, 1, 2
_BACKWARD_BASIS = np.array([[0.0, -0.5, 0.5], [1.0, 0.0, -1.0], [0.0, 0.5, 0.5]])  # nodes -1, 0, 1
_LINEAR_BASIS = np.array([[1.0, -1.0, 0.0], [0.0, 1.0, 0.0]])                       # nodes 0, 1
_SERIES_TERMS = 25


# ========== Types ==========

@dataclass
class EMState:
    t: float
    E: VectorField
    B: ScalarField
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise FieldError(f"speed of light must be positive, got {self.c}")
        _check_same_grid(self.E.grid, self.B.grid)

    @property
    def grid(self) -> GridSpec:
        return self.E.grid

    @classmethod
    def zero(cls, grid: GridSpec, c: float, t: float = 0.0, b_mean: float = 0.0) -> "EMState":
        return cls(t, VectorField(grid, np.zeros((2, grid.n, grid.n))),
                   ScalarField(grid, np.full((grid.n, grid.n), float(b_mean))), c)

    def spectral(self) -> Tuple[np.ndarray, np.ndarray]:
        return spectral_coeffs(self.grid, self.E.values), spectral_coeffs(self.grid, self.B.values)


@dataclass
class SourceMoments:
    """
    Charge and current samples on uniform times, stored spectrally.
    rho_hat: (nt, *batch, m, m); j_hat: (nt, *batch, 2, m, m).
    """
    grid: GridSpec
    times: np.ndarray
    rho_hat: np.ndarray
    j_hat: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.rho_hat = np.asarray(self.rho_hat, dtype=np.complex128)
        self.j_hat = np.asarray(self.j_hat, dtype=np.complex128)
        nt = self.times.shape[0]
        if self.rho_hat.shape[0] != nt or self.j_hat.shape[0] != nt:
            raise FieldError("source samples do not match the number of sample times")
        if self.j_hat.shape != self.rho_hat.shape[:-2] + (2,) + self.rho_hat.shape[-2:]:
            raise FieldError(f"current shape {self.j_hat.shape} inconsistent with charge shape {self.rho_hat.shape}")
        if nt > 2:
            steps = np.diff(self.times)
            if np.max(np.abs(steps - steps[0])) > 1e-9 * max(1.0, abs(steps[0])):
                raise FieldError("source sample times must be uniform")

    @property
    def nt(self) -> int:
        return self.times.shape[0]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.nt > 1 else 0.0

    @classmethod
    def from_fields(cls, grid: GridSpec, times: np.ndarray, rho: np.ndarray, j: np.ndarray) -> "SourceMoments":
        return cls(grid, times, spectral_coeffs(grid, rho), spectral_coeffs(grid, j))

    @classmethod
    def from_callables(cls, grid: GridSpec, times: np.ndarray, rho_fn, j_fn) -> "SourceMoments":
        """rho_fn(t, x1, x2) -> samples; j_fn(t, x1, x2) -> (j1, j2)."""
        x1, x2 = grid.nodes
        shape = (grid.n, grid.n)
        rho = np.stack([np.broadcast_to(rho_fn(t, x1, x2), shape) for t in times])
        j = np.stack([np.stack([np.broadcast_to(comp, shape) for comp in j_fn(t, x1, x2)]) for t in times])
        return cls.from_fields(grid, times, rho, j)

    @classmethod
    def zeros(cls, grid: GridSpec, times: np.ndarray, rho_mean: float = 0.0) -> "SourceMoments":
        nt = len(times)
        rho_hat = np.zeros((nt, grid.m, grid.m), dtype=np.complex128)
        rho_hat[:, grid.k_max, grid.k_max] = rho_mean
        return cls(grid, times, rho_hat, np.zeros((nt, 2, grid.m, grid.m), dtype=np.complex128))

    def reversed(self) -> "SourceMoments":
        """Sources of the time-reversed problem: rho(T - t), -j(T - t)."""
        return SourceMoments(self.grid, self.times, self.rho_hat[::-1].copy(), -self.j_hat[::-1])

    def truncated(self, T: float) -> "SourceMoments":
        keep = self.times <= T + 1e-9 * max(1.0, abs(T))
        return SourceMoments(self.grid, self.times[keep], self.rho_hat[keep], self.j_hat[keep])

    def rho_values(self) -> np.ndarray:
        return real_values(self.grid, self.rho_hat)

    def j_values(self) -> np.ndarray:
        return real_values(self.grid, self.j_hat)

    def __add__(self, other: "SourceMoments") -> "SourceMoments":
        _check_same_grid(self.grid, other.grid)
        if self.nt != other.nt or np.max(np.abs(self.times - other.times)) > 1e-12:
            raise FieldError("cannot add sources sampled on different times")
        return SourceMoments(self.grid, self.times, self.rho_hat + other.rho_hat, self.j_hat + other.j_hat)


@dataclass
class EMTrajectory:
    grid: GridSpec
    c: float
    times: np.ndarray
    E_hat: np.ndarray
    B_hat: np.ndarray

    @property
    def nt(self) -> int:
        return self.times.shape[0]

    def state_at(self, i: int) -> EMState:
        return EMState(float(self.times[i]), VectorField(self.grid, real_values(self.grid, self.E_hat[i])),
                       ScalarField(self.grid, real_values(self.grid, self.B_hat[i])), self.c)

    @property
    def final(self) -> EMState:
        return self.state_at(self.nt - 1)

    def E_values(self) -> np.ndarray:
        return real_values(self.grid, self.E_hat)

    def B_values(self) -> np.ndarray:
        return real_values(self.grid, self.B_hat)

    def reversed(self) -> "EMTrajectory":
        """(E(T - t), -B(T - t)) on the same time grid."""
        return EMTrajectory(self.grid, self.c, self.times, self.E_hat[::-1].copy(), -self.B_hat[::-1])


@dataclass
class TildeFields:
    times: np.ndarray
    E_tilde: VectorField
    B_tilde: ScalarField
    E_hat: np.ndarray
    B_hat: np.ndarray


@dataclass
class ApproxBound:
    C_rho_j: float
    C_prime_rho_j: float


@dataclass
class CompatibilityReport:
    residual: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual < self.tolerance


@dataclass
class ApproxReport:
    c_list: List[float]
    bound: ApproxBound
    rows: List[Tuple[float, float, float, float, float]] = field(default_factory=list)
    sup_errors_E: List[float] = field(default_factory=list)
    sup_errors_B: List[float] = field(default_factory=list)
    slope_E: float = float("nan")
    slope_B: float = float("nan")
    within_bound: bool = True

    @property
    def header(self) -> List[str]:
        return ["c", "t", "errE", "errB", "bound"]


# ========== Time Differences ==========

def time_derivative(values: np.ndarray, dt: float) -> np.ndarray:
    """Fourth-order finite differences along axis 0 (lower order for short series)."""
    nt = values.shape[0]
    if nt < 2:
        raise FieldError("time derivative needs at least two samples")
    if nt == 2:
        d = (values[1] - values[0]) / dt
        return np.stack([d, d])
    if nt < 5:
        return np.gradient(values, dt, axis=0, edge_order=2)
    out = np.empty_like(values)
    out[2:-2] = (-values[4:] + 8.0 * values[3:-1] - 8.0 * values[1:-3] + values[:-4]) / (12.0 * dt)
    out[0] = (-25.0 * values[0] + 48.0 * values[1] - 36.0 * values[2] + 16.0 * values[3] - 3.0 * values[4]) / (12.0 * dt)
    out[1] = (-3.0 * values[0] - 10.0 * values[1] + 18.0 * values[2] - 6.0 * values[3] + values[4]) / (12.0 * dt)
    out[-2] = (3.0 * values[-1] + 10.0 * values[-2] - 18.0 * values[-3] + 6.0 * values[-4] - values[-5]) / (12.0 * dt)
    out[-1] = (25.0 * values[-1] - 48.0 * values[-2] + 36.0 * values[-3] - 16.0 * values[-4] + 3.0 * values[-5]) / (12.0 * dt)
    return out


def uniform_times(T: float, dt: float, t0: float = 0.0) -> np.ndarray:
    steps = max(1, int(round((T - t0) / dt)))
    return np.linspace(t0, T, steps + 1)


# ========== Constraint Checks ==========

def gauss_residual(grid: GridSpec, E_hat: np.ndarray, rho_hat: np.ndarray) -> np.ndarray:
    """Real samples of div E - (rho - mean rho)."""
    xi = grid.xi
    div = 1j * (xi[0] * E_hat[..., 0, :, :] + xi[1] * E_hat[..., 1, :, :])
    target = np.where(grid.nonzero, rho_hat, 0.0)
    return real_values(grid, div - target)


def check_compatibility(state: EMState, rho0: ScalarField, tolerance: float = None) -> CompatibilityReport:
    _check_same_grid(state.grid, rho0.grid)
    tolerance = MaxwellDefaults.COMPATIBILITY_TOLERANCE if tolerance is None else tolerance
    E_hat, _ = state.spectral()
    residual = gauss_residual(state.grid, E_hat, spectral_coeffs(rho0.grid, rho0.values))
    return CompatibilityReport(float(np.max(np.abs(residual))), tolerance)


def charge_residual(src: SourceMoments) -> np.ndarray:
    """Real samples of d_t rho + div j at every sample time."""
    if src.nt < 2:
        raise FieldError("charge conservation needs at least two time samples")
    xi = src.grid.xi
    drho = time_derivative(src.rho_hat, src.dt)
    div = 1j * (xi[0] * src.j_hat[..., 0, :, :] + xi[1] * src.j_hat[..., 1, :, :])
    return real_values(src.grid, drho + div)


def check_charge_conservation(src: SourceMoments) -> float:
    return float(np.max(np.abs(charge_residual(src))))


def check_zero_mean_current(src: SourceMoments) -> float:
    if src.nt < 2:
        raise FieldError("zero-mean current check needs at least two time samples")
    k = src.grid.k_max
    return float(np.max(np.linalg.norm(src.j_hat[..., :, k, k], axis=-1)))


def _charge_scale(src: SourceMoments) -> float:
    drho = real_values(src.grid, time_derivative(src.rho_hat, src.dt))
    return max(1.0, float(np.max(np.abs(drho))))


# ========== Poisson and Tilde Fields ==========

def poisson_hat(grid: GridSpec, rho_hat: np.ndarray) -> np.ndarray:
    """E_inf coefficients: -i xi rho / |xi|^2 for k != 0, zero mean."""
    denom = np.where(grid.nonzero, grid.xi_norm ** 2, 1.0)
    factor = np.where(grid.nonzero, -1j / denom, 0.0)
    return np.stack([factor * grid.xi[0] * rho_hat, factor * grid.xi[1] * rho_hat], axis=-3)


def solve_poisson(rho: ScalarField) -> VectorField:
    grid = rho.grid
    return VectorField(grid, real_values(grid, poisson_hat(grid, spectral_coeffs(grid, rho.values))))


def tilde_hat(grid: GridSpec, E0_hat: np.ndarray, B0_hat: np.ndarray, rho0_hat: np.ndarray, c: float,
              times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    xi1, xi2 = grid.xi
    norm = np.where(grid.nonzero, grid.xi_norm, 1.0)
    phase = np.asarray(times, dtype=np.float64).reshape(-1, 1, 1) * c * grid.xi_norm
    sin, cos = np.sin(phase), np.cos(phase)
    mask = grid.nonzero
    wedge = xi1 * E0_hat[1] - xi2 * E0_hat[0]
    B_t = np.where(mask, -1j * wedge / norm * sin + B0_hat * cos, 0.0)
    transverse0 = E0_hat + 1j * grid.xi * rho0_hat / norm ** 2
    E1 = 1j * xi2 * B0_hat / norm * sin + transverse0[0] * cos
    E2 = -1j * xi1 * B0_hat / norm * sin + transverse0[1] * cos
    E_t = np.where(mask, np.stack([E1, E2], axis=1), 0.0)
    return E_t, B_t


def compute_tilde_fields(E0: VectorField, B0: ScalarField, rho0: ScalarField, c: float, t) -> TildeFields:
    """Free rotation of the initial transverse data; t may be a scalar or an array of times."""
    grid = _check_same_grid(E0.grid, B0.grid, rho0.grid)
    times = np.atleast_1d(np.asarray(t, dtype=np.float64))
    E_t, B_t = tilde_hat(grid, spectral_coeffs(grid, E0.values), spectral_coeffs(grid, B0.values),
                         spectral_coeffs(grid, rho0.values), c, times)
    E_real, B_real = real_values(grid, E_t), real_values(grid, B_t)
    if np.ndim(t) == 0:
        E_real, B_real, E_t, B_t = E_real[0], B_real[0], E_t[0], B_t[0]
    return TildeFields(times, VectorField(grid, E_real), ScalarField(grid, B_real), E_t, B_t)


# ========== Duhamel Quadrature ==========

def _kernel_moments(theta: np.ndarray) -> np.ndarray:
    """J_q(theta) = int_0^1 exp(i theta (1 - s)) s^q ds for q = 0, 1, 2."""
    theta = np.asarray(theta, dtype=np.float64)
    small = np.abs(theta) <= 1.0
    moments = np.empty((3,) + theta.shape, dtype=np.complex128)

    z = 1j * np.where(small, theta, 0.0)
    for q in range(3):
        series = np.zeros(theta.shape, dtype=np.complex128)
        term = np.ones(theta.shape, dtype=np.complex128)
        for p in range(_SERIES_TERMS):
            series += term * (factorial(q) / factorial(p + q + 1))
            term = term * z
        moments[q] = series

    safe = np.where(small, 1.0, theta)
    iz = 1j * safe
    j0 = (np.exp(iz) - 1.0) / iz
    j1 = -1.0 / iz + j0 / iz
    j2 = -1.0 / iz + 2.0 * j1 / iz
    moments[0] = np.where(small, moments[0], j0)
    moments[1] = np.where(small, moments[1], j1)
    moments[2] = np.where(small, moments[2], j2)
    return moments


def _step_weights(theta: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Weights (nodes, *theta.shape) of the node values in int_0^1 exp(i theta (1-s)) g(s) ds."""
    moments = _kernel_moments(theta)
    return np.tensordot(basis, moments, axes=([1], [0]))


def _transverse(grid: GridSpec, vec_hat: np.ndarray) -> np.ndarray:
    """Component along xi_perp / |xi| with xi_perp = (xi2, -xi1)."""
    norm = np.where(grid.nonzero, grid.xi_norm, 1.0)
    return (grid.xi[1] * vec_hat[..., 0, :, :] - grid.xi[0] * vec_hat[..., 1, :, :]) / norm


def _longitudinal(grid: GridSpec, vec_hat: np.ndarray) -> np.ndarray:
    norm = np.where(grid.nonzero, grid.xi_norm, 1.0)
    return (grid.xi[0] * vec_hat[..., 0, :, :] + grid.xi[1] * vec_hat[..., 1, :, :]) / norm


def _assemble(grid: GridSpec, a: np.ndarray, e_long: np.ndarray, mode0: np.ndarray) -> np.ndarray:
    norm = np.where(grid.nonzero, grid.xi_norm, 1.0)
    e1 = (a * grid.xi[1] + e_long * grid.xi[0]) / norm
    e2 = (-a * grid.xi[0] + e_long * grid.xi[1]) / norm
    E_hat = np.stack([e1, e2], axis=-3)
    k = grid.k_max
    E_hat[..., :, k, k] = mode0
    return E_hat


def evolve_maxwell(state0: EMState, src: SourceMoments, T: Optional[float] = None,
                   charge_tolerance: float = None, check_initial: bool = True) -> EMTrajectory:
    """
    Evolve (E, B) from state0 under the sampled sources up to T (default: last
    sample), returning the state at every sample time.
    """
    grid = _check_same_grid(state0.grid, src.grid)
    if T is not None:
        src = src.truncated(T)
    if src.nt < 2:
        raise FieldError("evolve_maxwell needs at least two source samples")
    if abs(src.times[0] - state0.t) > 1e-9 * max(1.0, abs(state0.t)):
        raise FieldError(f"initial state time {state0.t} does not match first source sample {src.times[0]}")

    charge_tolerance = MaxwellDefaults.CHARGE_TOLERANCE if charge_tolerance is None else charge_tolerance
    residual = check_charge_conservation(src)
    scale = _charge_scale(src)
    if residual > charge_tolerance * scale:
        raise ChargeConservationError(
            f"charge conservation residual {residual:.3e} exceeds {charge_tolerance:.1e} x {scale:.3e}", residual)

    E0_hat, B0_hat = state0.spectral()
    if check_initial:
        gauss = float(np.max(np.abs(gauss_residual(grid, E0_hat, src.rho_hat[0]))))
        if gauss > MaxwellDefaults.COMPATIBILITY_TOLERANCE * max(1.0, float(np.max(np.abs(src.rho_hat[0])))):
            raise ChargeConservationError(f"initial field violates Gauss's law (residual {gauss:.3e})", gauss)

    c, h, nt = state0.c, src.dt, src.nt
    batch = src.rho_hat.shape[1:-2]
    theta = c * grid.xi_norm * h
    rot_plus, rot_minus = np.exp(1j * theta), np.exp(-1j * theta)
    if nt == 2:
        weights = {0: (_step_weights(theta, _LINEAR_BASIS), _step_weights(-theta, _LINEAR_BASIS),
                       _step_weights(np.zeros(1), _LINEAR_BASIS)[:, 0])}
    else:
        fw = (_step_weights(theta, _FORWARD_BASIS), _step_weights(-theta, _FORWARD_BASIS),
              _step_weights(np.zeros(1), _FORWARD_BASIS)[:, 0])
        bw = (_step_weights(theta, _BACKWARD_BASIS), _step_weights(-theta, _BACKWARD_BASIS),
              _step_weights(np.zeros(1), _BACKWARD_BASIS)[:, 0])

    j_perp = _transverse(grid, src.j_hat)
    k = grid.k_max
    j_zero = src.j_hat[..., :, k, k]

    E0_hat = np.broadcast_to(E0_hat, batch + E0_hat.shape).astype(np.complex128)
    B0_hat = np.broadcast_to(B0_hat, batch + B0_hat.shape).astype(np.complex128)
    a = _transverse(grid, E0_hat)
    e_long0 = _longitudinal(grid, E0_hat)
    u = a + B0_hat
    w = a - B0_hat
    mode0 = E0_hat[..., :, k, k].copy()
    b_mean = B0_hat[..., k, k].copy()
    norm = np.where(grid.nonzero, grid.xi_norm, 1.0)

    E_hist = np.empty((nt,) + E0_hat.shape, dtype=np.complex128)
    B_hist = np.empty((nt,) + B0_hat.shape, dtype=np.complex128)
    E_hist[0], B_hist[0] = E0_hat, B0_hat

    for i in range(nt - 1):
        if nt == 2:
            wp, wm, w0 = weights[0]
            nodes = (0, 1)
        elif i + 2 < nt:
            wp, wm, w0 = fw
            nodes = (i, i + 1, i + 2)
        else:
            wp, wm, w0 = bw
            nodes = (i - 1, i, i + 1)
        u = rot_plus * u
        w = rot_minus * w
        for p, node in enumerate(nodes):
            u = u - h * wp[p] * j_perp[node]
            w = w - h * wm[p] * j_perp[node]
            mode0 = mode0 - h * w0[p] * j_zero[node]
        a = 0.5 * (u + w)
        B_hat = 0.5 * (u - w)
        B_hat[..., k, k] = b_mean
        e_long = e_long0 - 1j * (src.rho_hat[i + 1] - src.rho_hat[0]) / norm
        E_hist[i + 1] = _assemble(grid, np.where(grid.nonzero, a, 0.0), np.where(grid.nonzero, e_long, 0.0), mode0)
        B_hist[i + 1] = B_hat

    logger.debug(f"Maxwell evolution: {nt - 1} steps, c={c}, max theta={float(np.max(theta)):.3f}")
    return EMTrajectory(grid, c, src.times.copy(), E_hist, B_hist)


def field_energy(E_hat: np.ndarray, B_hat: np.ndarray) -> np.ndarray:
    return np.sum(np.abs(E_hat) ** 2, axis=(-3, -2, -1)) + np.sum(np.abs(B_hat) ** 2, axis=(-2, -1))


# ========== RK4 Oracle ==========

def step_maxwell_rk4(state0: EMState, src: SourceMoments, T: Optional[float] = None) -> EMTrajectory:
    """
    Classical RK4 on the Fourier-space field equations with step 2*dt, so the
    stage midpoints fall on source samples. Returns every other sample.
    """
    grid = _check_same_grid(state0.grid, src.grid)
    if T is not None:
        src = src.truncated(T)
    if src.nt < 3 or src.nt % 2 == 0:
        raise FieldError("RK4 oracle needs an odd number (>= 3) of source samples")
    c, H = state0.c, 2.0 * src.dt
    xi1, xi2 = grid.xi

    def rhs(E_hat, B_hat, j_hat):
        dE = np.stack([c * 1j * xi2 * B_hat, -c * 1j * xi1 * B_hat], axis=-3) - j_hat
        dB = -c * 1j * (xi1 * E_hat[..., 1, :, :] - xi2 * E_hat[..., 0, :, :])
        return dE, dB

    E_hat, B_hat = state0.spectral()
    times, E_hist, B_hist = [src.times[0]], [E_hat], [B_hat]
    for i in range(0, src.nt - 2, 2):
        j0, j1, j2 = src.j_hat[i], src.j_hat[i + 1], src.j_hat[i + 2]
        k1E, k1B = rhs(E_hat, B_hat, j0)
        k2E, k2B = rhs(E_hat + 0.5 * H * k1E, B_hat + 0.5 * H * k1B, j1)
        k3E, k3B = rhs(E_hat + 0.5 * H * k2E, B_hat + 0.5 * H * k2B, j1)
        k4E, k4B = rhs(E_hat + H * k3E, B_hat + H * k3B, j2)
        E_hat = E_hat + H / 6.0 * (k1E + 2 * k2E + 2 * k3E + k4E)
        B_hat = B_hat + H / 6.0 * (k1B + 2 * k2B + 2 * k3B + k4B)
        times.append(src.times[i + 2])
        E_hist.append(E_hat)
        B_hist.append(B_hat)
    return EMTrajectory(grid, c, np.array(times), np.stack(E_hist), np.stack(B_hist))


# ========== Maxwell vs Poisson Approximation ==========

def approx_constants(src: SourceMoments) -> ApproxBound:
    """
    C  = sum_{k != 0} (|j^k| + |d_t j^k|) / |k|
    C' = sum_{k != 0} |d_tt rho^k| / |k|^2 + |d_t rho^k| / |k|^2 + |j^k| / |k| + |d_t j^k| / |k|
    with sup norms over the sampled times and |k| the integer wave-vector length.
    Both constants are independent of c; the bounds applied are C (t + 1) / c
    for B and C' (t + 1) / c for E.
    """
    grid = src.grid
    dt = src.dt
    drho = time_derivative(src.rho_hat, dt)
    ddrho = time_derivative(drho, dt)
    dj = time_derivative(src.j_hat, dt)

    def sup(values, vector=False):
        mag = np.linalg.norm(values, axis=-3) if vector else np.abs(values)
        return np.max(mag, axis=0)

    kn = np.where(grid.nonzero, grid.k_norm, 1.0)
    j_sup, dj_sup = sup(src.j_hat, vector=True), sup(dj, vector=True)
    mask = grid.nonzero
    c_b = np.sum(np.where(mask, (j_sup + dj_sup) / kn, 0.0))
    c_e = np.sum(np.where(mask, (sup(ddrho) + sup(drho)) / kn ** 2 + (j_sup + dj_sup) / kn, 0.0))
    return ApproxBound(float(c_b), float(c_e))


def verify_approx_lemma(state0: EMState, src: SourceMoments, c_list: List[float], T: Optional[float] = None,
                        zero_mean_tolerance: float = None) -> ApproxReport:
    grid = _check_same_grid(state0.grid, src.grid)
    if T is not None:
        src = src.truncated(T)
    zero_mean_tolerance = MaxwellDefaults.ZERO_MEAN_TOLERANCE if zero_mean_tolerance is None else zero_mean_tolerance
    zm = check_zero_mean_current(src)
    if zm > zero_mean_tolerance:
        raise ZeroMeanCurrentError(f"mean current {zm:.3e} is not zero; the mode-0 identity does not hold", zm)

    bound = approx_constants(src)
    report = ApproxReport(list(c_list), bound)
    E0_hat, B0_hat = state0.spectral()
    k = grid.k_max
    e_inf = poisson_hat(grid, src.rho_hat)
    for c in c_list:
        logger.info(f"Approximation sweep: c={c}")
        start = EMState(state0.t, state0.E, state0.B, c)
        traj = evolve_maxwell(start, src)
        E_t, B_t = tilde_hat(grid, E0_hat, B0_hat, src.rho_hat[0], c, src.times - src.times[0])
        E_err = traj.E_hat - e_inf - E_t
        E_err[..., :, k, k] -= E0_hat[:, k, k]
        B_err = traj.B_hat - B_t
        B_err[..., k, k] -= B0_hat[k, k]
        err_E = np.max(np.linalg.norm(real_values(grid, E_err), axis=1), axis=(-2, -1))
        err_B = np.max(np.abs(real_values(grid, B_err)), axis=(-2, -1))
        run_E, run_B = np.maximum.accumulate(err_E), np.maximum.accumulate(err_B)
        t_rel = src.times - src.times[0]
        bound_E = bound.C_prime_rho_j * (t_rel + 1.0) / c
        bound_B = bound.C_rho_j * (t_rel + 1.0) / c
        if np.any(run_E > bound_E * (1 + 1e-9)) or np.any(run_B > bound_B * (1 + 1e-9)):
            report.within_bound = False
            logger.warning(f"Approximation bound exceeded at c={c}")
        report.rows.extend(zip([c] * len(t_rel), t_rel, run_E, run_B, bound_E))
        report.sup_errors_E.append(float(run_E[-1]))
        report.sup_errors_B.append(float(run_B[-1]))

    if len(c_list) >= 2:
        logc = np.log(np.asarray(c_list, dtype=float))
        report.slope_E = _fit_slope(logc, report.sup_errors_E)
        report.slope_B = _fit_slope(logc, report.sup_errors_B)
    return report


def _fit_slope(logc: np.ndarray, errors: List[float]) -> float:
    errors = np.asarray(errors)
    if np.any(errors <= 0):
        return float("nan")
    return float(np.polyfit(logc, np.log(errors), 1)[0])


def approx_sweep_source(grid: GridSpec, T: float, dt: float, alpha: float, beta: float) -> SourceMoments:
    """
    Smooth charge-conserving, zero-mean-current source:
    rho = 1 + alpha sin(2 pi t) cos(2 pi x1), j = (-alpha cos(2 pi t) sin(2 pi x1) - beta cos(pi t) sin(2 pi x2), 0).
    """
    times = uniform_times(T, dt)
    return SourceMoments.from_callables(
        grid, times,
        lambda t, x1, x2: 1.0 + alpha * np.sin(2 * np.pi * t) * np.cos(2 * np.pi * x1),
        lambda t, x1, x2: (-alpha * np.cos(2 * np.pi * t) * np.sin(2 * np.pi * x1)
                           - beta * np.cos(np.pi * t) * np.sin(2 * np.pi * x2), np.zeros_like(x1)))
