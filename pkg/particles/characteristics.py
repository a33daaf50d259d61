"""
Relativistic and classical characteristics on the torus.

    dX/dt = v_hat(V),   dV/dt = E(t, X) + b(t, X) v_hat_perp + F_extra(t, X, V)

with v_hat = V / sqrt(1 + |V|^2 / c^2) and v_hat_perp = (v_hat_2, -v_hat_1).
c = inf selects the classical flow. Positions are integrated on the lift R^2
and wrapped only when fields are sampled or reported.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from config import CharacteristicsDefaults
from spectral import (EMTrajectory, GridSpec, ScalarField, gradient, spectral_coeffs, real_values, SpectralScalar,
                      evaluate_series)
from utils import TrajectoryError, get_logger

logger = get_logger(__name__)

VectorFn = Callable[[float, np.ndarray], np.ndarray]
ScalarFn = Callable[[float, np.ndarray], np.ndarray]
ExtraFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


# ========== Kinematics ==========

def lorentz_factor(v: np.ndarray, c: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if math.isinf(c):
        return np.ones(v.shape[:-1])
    return np.sqrt(1.0 + np.sum(v * v, axis=-1) / (c * c))


def relativistic_velocity(v: np.ndarray, c: float) -> np.ndarray:
    """v / sqrt(1 + |v|^2 / c^2); the identity for c = inf."""
    v = np.asarray(v, dtype=np.float64)
    if not c > 0:
        raise TrajectoryError(f"speed of light must be positive, got {c}")
    if math.isinf(c):
        return v.copy()
    return v / lorentz_factor(v, c)[..., np.newaxis]


def perp(v: np.ndarray) -> np.ndarray:
    """(v2, -v1)."""
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


@dataclass
class PhaseState:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.x = np.mod(np.asarray(self.x, dtype=np.float64), 1.0)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.x.shape != self.v.shape or self.x.shape[-1] != 2:
            raise TrajectoryError(f"position {self.x.shape} and velocity {self.v.shape} must both be (..., 2)")
        if not np.all(np.isfinite(self.v)):
            raise TrajectoryError("initial velocity is not finite")


# ========== Field Samplers ==========

class GriddedField:
    """
    Time series of node samples, periodic cubic spline in x and linear in t.
    values: (nt, n, n) for a scalar, (nt, 2, n, n) for a vector.
    """

    def __init__(self, times: np.ndarray, values: np.ndarray):
        self.times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        values = np.asarray(values, dtype=np.float64)
        if values.shape[0] != self.times.shape[0]:
            raise TrajectoryError("field samples do not match the number of sample times")
        self.vector = values.ndim == 4
        if not self.vector:
            values = values[:, np.newaxis]
        self.n = values.shape[-1]
        self._coeffs = np.empty_like(values)
        for i in range(values.shape[0]):
            for comp in range(values.shape[1]):
                self._coeffs[i, comp] = ndimage.spline_filter(values[i, comp], order=3, mode='grid-wrap')

    @classmethod
    def constant(cls, values: np.ndarray) -> "GriddedField":
        return cls(np.zeros(1), np.asarray(values)[np.newaxis])

    def _at_slice(self, i: int, coords: np.ndarray) -> np.ndarray:
        out = [ndimage.map_coordinates(self._coeffs[i, comp], coords, order=3, mode='grid-wrap', prefilter=False)
               for comp in range(self._coeffs.shape[1])]
        return np.stack(out, axis=-1)

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        coords = (np.mod(x, 1.0) * self.n).T
        nt = self.times.shape[0]
        if nt == 1 or t <= self.times[0]:
            out = self._at_slice(0, coords)
        elif t >= self.times[-1]:
            out = self._at_slice(nt - 1, coords)
        else:
            i = int(np.searchsorted(self.times, t, side="right")) - 1
            s = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
            out = (1.0 - s) * self._at_slice(i, coords)
            if s > 0.0:
                out = out + s * self._at_slice(i + 1, coords)
        return out if self.vector else out[:, 0]


class SpectralSeriesField:
    """
    Time series of compact coefficients, (nt, m, m) or (nt, 2, m, m), summed
    exactly at the sample points and interpolated linearly in t.
    """

    def __init__(self, grid: GridSpec, times: np.ndarray, coeffs: np.ndarray, scale: float = 1.0):
        self.grid = grid
        self.times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        self.coeffs = np.asarray(coeffs, dtype=np.complex128) * scale
        if self.coeffs.shape[0] != self.times.shape[0]:
            raise TrajectoryError("field coefficients do not match the number of sample times")
        self.vector = self.coeffs.ndim == 4

    def _coeffs_at(self, t: float) -> np.ndarray:
        nt = self.times.shape[0]
        if nt == 1 or t <= self.times[0]:
            return self.coeffs[0]
        if t >= self.times[-1]:
            return self.coeffs[-1]
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        s = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1.0 - s) * self.coeffs[i] + s * self.coeffs[i + 1]

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        coeffs = self._coeffs_at(t)
        if self.vector:
            return np.stack([evaluate_series(self.grid, coeffs[0], x), evaluate_series(self.grid, coeffs[1], x)],
                            axis=-1)
        return evaluate_series(self.grid, coeffs, x)


def constant_vector(value) -> VectorFn:
    value = np.asarray(value, dtype=np.float64)

    def sample(t, x, *_):
        return np.broadcast_to(value, np.shape(x)).copy()
    return sample


def constant_scalar(value: float) -> ScalarFn:
    def sample(t, x):
        return np.full(np.shape(x)[:-1], float(value))
    return sample


# ========== Forces ==========

@dataclass
class ForceSpec:
    c: float = math.inf
    E: Optional[VectorFn] = None
    b: Optional[ScalarFn] = None
    F_extra: Optional[ExtraFn] = None
    F_extra_sup: float = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise TrajectoryError(f"speed of light must be positive or inf, got {self.c}")

    def force(self, t: float, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        xw = np.mod(x, 1.0)
        out = np.zeros_like(v)
        if self.E is not None:
            out += self.E(t, xw)
        if self.b is not None:
            out += self.b(t, xw)[..., np.newaxis] * perp(relativistic_velocity(v, self.c))
        if self.F_extra is not None:
            out += self.F_extra(t, xw, v)
        return out

    def with_c(self, c: float) -> "ForceSpec":
        return ForceSpec(c, self.E, self.b, self.F_extra, self.F_extra_sup)

    @classmethod
    def magnetic(cls, b: Union[float, ScalarField], c: float = math.inf, F_extra: Optional[ExtraFn] = None,
                 F_extra_sup: float = 0.0) -> "ForceSpec":
        if isinstance(b, ScalarField):
            sampler = GriddedField.constant(b.values)
        else:
            sampler = constant_scalar(b)
        return cls(c, None, sampler, F_extra, F_extra_sup)

    @classmethod
    def from_maxwell(cls, traj: EMTrajectory, F_extra: Optional[ExtraFn] = None, F_extra_sup: float = 0.0,
                     stride: int = 1) -> "ForceSpec":
        """Forces of a Maxwell trajectory; the magnetic term uses B / c."""
        sl = slice(None, None, stride)
        times = traj.times[sl]
        E = GriddedField(times, traj.E_values()[sl])
        b = GriddedField(times, traj.B_values()[sl] / traj.c)
        return cls(traj.c, E, b, F_extra, F_extra_sup)


# ========== Integration ==========

def rk4_step(force: ForceSpec, t: float, x: np.ndarray, v: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    c = force.c
    k1x, k1v = relativistic_velocity(v, c), force.force(t, x, v)
    x2, v2 = x + 0.5 * h * k1x, v + 0.5 * h * k1v
    k2x, k2v = relativistic_velocity(v2, c), force.force(t + 0.5 * h, x2, v2)
    x3, v3 = x + 0.5 * h * k2x, v + 0.5 * h * k2v
    k3x, k3v = relativistic_velocity(v3, c), force.force(t + 0.5 * h, x3, v3)
    x4, v4 = x + h * k3x, v + h * k3v
    k4x, k4v = relativistic_velocity(v4, c), force.force(t + h, x4, v4)
    return (x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v))


def step_count(t0: float, t1: float, dt: float) -> int:
    if not dt > 0:
        raise TrajectoryError(f"time step must be positive, got {dt}")
    return max(1, int(math.ceil(abs(t1 - t0) / dt - 1e-9)))


def steps(x: np.ndarray, v: np.ndarray, force: ForceSpec, t0: float, t1: float,
          dt: float) -> Iterator[Tuple[float, np.ndarray, np.ndarray]]:
    """
    Yield (t, x_lift, v) at t0 and after every RK4 step up to t1. The step is
    shrunk so an integer number of steps lands exactly on t1; t1 < t0 runs backward.
    """
    count = step_count(t0, t1, dt)
    h = (t1 - t0) / count
    x = np.array(x, dtype=np.float64)
    v = np.array(v, dtype=np.float64)
    yield t0, x, v
    limit = CharacteristicsDefaults.NONFINITE_LIMIT
    for i in range(count):
        t = t0 + i * h
        x, v = rk4_step(force, t, x, v, h)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))) or np.max(np.abs(v), initial=0.0) > limit:
            raise TrajectoryError(f"non-finite state at t={t + h:.6g}")
        yield t0 + (i + 1) * h, x, v


@dataclass
class Trajectory:
    times: np.ndarray
    x_lift: np.ndarray
    v: np.ndarray
    c: float = math.inf

    @property
    def x(self) -> np.ndarray:
        return np.mod(self.x_lift, 1.0)

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.v, axis=-1)

    @property
    def theta(self) -> np.ndarray:
        """Unwrapped clockwise velocity angle."""
        return np.unwrap(-np.arctan2(self.v[..., 1], self.v[..., 0]), axis=0)

    @property
    def final(self) -> PhaseState:
        return PhaseState(self.x_lift[-1], self.v[-1])

    def rows(self, particle: int = 0):
        """CSV rows t, x1, x2, v1, v2, |v|, theta for one particle."""
        x, v, speed, theta = self.x, self.v, self.speed, self.theta
        if x.ndim == 3:
            x, v, speed, theta = x[:, particle], v[:, particle], speed[:, particle], theta[:, particle]
        for i, t in enumerate(self.times):
            yield (t, x[i, 0], x[i, 1], v[i, 0], v[i, 1], speed[i], theta[i])

    header = ["t", "x1", "x2", "v1", "v2", "|v|", "theta"]


def integrate(start: PhaseState, force: ForceSpec, t0: float, t1: float, dt: float) -> Trajectory:
    """Fixed-step RK4 from start; the trajectory keeps every substep."""
    times, xs, vs = [], [], []
    for t, x, v in steps(start.x, start.v, force, t0, t1, dt):
        times.append(t)
        xs.append(x)
        vs.append(v)
    return Trajectory(np.array(times), np.stack(xs), np.stack(vs), force.c)


# ========== Bending Diagnostics ==========

def angle_rate(state: PhaseState, b_value, c: float, F_extra=None) -> np.ndarray:
    """
    d theta / dt for the clockwise angle theta of V:
        b / gamma - (V1 G2 - V2 G1) / |V|^2
    where G is every non-magnetic force (F_extra given as values at the state).
    """
    v = state.v
    speed2 = np.sum(v * v, axis=-1)
    if np.any(speed2 == 0.0):
        raise TrajectoryError("angle rate is undefined at zero velocity")
    rate = np.asarray(b_value, dtype=np.float64) / lorentz_factor(v, c)
    if F_extra is not None:
        g = np.broadcast_to(np.asarray(F_extra, dtype=np.float64), v.shape)
        rate = rate - (v[..., 0] * g[..., 1] - v[..., 1] * g[..., 0]) / speed2
    return rate


def speed_rate(state: PhaseState, F_extra=None) -> np.ndarray:
    """d|V|/dt = V . G / |V|; the magnetic force does no work."""
    v = state.v
    speed = np.linalg.norm(v, axis=-1)
    if F_extra is None:
        return np.zeros(speed.shape)
    if np.any(speed == 0.0):
        raise TrajectoryError("speed rate is undefined at zero velocity")
    g = np.broadcast_to(np.asarray(F_extra, dtype=np.float64), v.shape)
    return np.sum(v * g, axis=-1) / speed


def w1inf_norm(b: Union[float, ScalarField]) -> float:
    """sup |b| + sup |grad b|, the gradient taken spectrally at full resolution."""
    if not isinstance(b, ScalarField):
        return abs(float(b))
    grid = b.grid
    full = GridSpec(grid.n, grid.n // 2 - 1)
    grad = real_values(full, gradient(SpectralScalar(full, spectral_coeffs(full, b.values))).coeffs)
    return float(np.max(np.abs(b.values)) + np.max(np.linalg.norm(grad, axis=0)))


@dataclass
class GronwallReport:
    times: np.ndarray
    dev_x: np.ndarray
    dev_v: np.ndarray
    bound_x: np.ndarray
    bound_v: np.ndarray
    passed: bool = field(default=True)

    header = ["t", "dev_x", "bound_x", "dev_v", "bound_v"]

    def rows(self):
        return zip(self.times, self.dev_x, self.bound_x, self.dev_v, self.bound_v)


def gronwall_compare(start: PhaseState, b: Union[float, ScalarField], F_extra: Optional[ExtraFn], F_sup: float,
                     T: float, dt: float = None, c: float = math.inf) -> GronwallReport:
    """
    Integrate the purely magnetic flow and its F_extra perturbation from the
    same data and compare the deviations with
        |V - V_bar| <= F_sup exp(|b|_{W1,inf} (1 + 2|v|) t),   |X - X_bar| <= t * (same).
    """
    dt = CharacteristicsDefaults.DT if dt is None else dt
    bare = ForceSpec.magnetic(b, c)
    perturbed = ForceSpec.magnetic(b, c, F_extra, F_sup)
    ref = integrate(start, bare, 0.0, T, dt)
    run = integrate(start, perturbed, 0.0, T, dt)

    dev_x = np.linalg.norm(run.x_lift - ref.x_lift, axis=-1)
    dev_v = np.linalg.norm(run.v - ref.v, axis=-1)
    speed0 = np.linalg.norm(start.v, axis=-1)
    rate = w1inf_norm(b) * (1.0 + 2.0 * speed0)
    t = ref.times.reshape((-1,) + (1,) * (dev_v.ndim - 1))
    bound_v = F_sup * np.exp(rate * t)
    bound_x = t * bound_v
    tol = 1e-12
    passed = bool(np.all(dev_v <= bound_v + tol) and np.all(dev_x <= bound_x + tol))
    if not passed:
        logger.warning("Gronwall bound violated")
    return GronwallReport(ref.times, dev_x, dev_v, bound_x * np.ones_like(dev_x), bound_v * np.ones_like(dev_v),
                          passed)
