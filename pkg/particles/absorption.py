"""
Weighted-particle transport with absorption on small spheres, the
charge-neutral extension, the fixed-point map built from both, and the
scaling checks of the self-consistent solver.

Particles carry lifted positions (N, 2), momenta (N, 2) and nonnegative
weights (N,). Weights only ever shrink: an inward crossing of an absorbing
sphere multiplies them by the opacity factor, and particles under the weight
floor are dropped with their charge tallied.
"""
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import AbsorptionDefaults
from spectral import (EMState, EMTrajectory, GridSpec, ScalarField, SourceMoments, VectorField, charge_residual,
                      check_charge_conservation, evaluate_series, evolve_maxwell, poisson_hat, real_values,
                      spectral_coeffs, time_derivative, uniform_times)
from utils import (ConvergenceError, GeometryError, InfeasibleParametersError, TrajectoryError, get_logger,
                   map_chunks, smoothstep)

from .characteristics import ForceSpec, SpectralSeriesField, perp, relativistic_velocity, rk4_step, step_count

if TYPE_CHECKING:
    from controllers.reference_builder import ReferencePlan
    from geometry.conditions import ControlSet

logger = get_logger(__name__)

LABELS = ("gamma3", "gamma2", "gamma1", "gamma_plus", "none")
_GAMMA3, _GAMMA2, _GAMMA1, _PLUS, _NONE = range(5)


# ========== Sphere Geometry ==========

def _offset(x: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Shortest torus displacement from center to x."""
    return np.mod(np.asarray(x, dtype=np.float64) - center + 0.5, 1.0) - 0.5


def _signed_distance(x: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    return np.linalg.norm(_offset(x, center), axis=-1) - radius


def outward_normal(x: np.ndarray, center: np.ndarray) -> np.ndarray:
    d = _offset(x, center)
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    return d / np.where(norm > 0, norm, 1.0)


@dataclass(frozen=True)
class GammaSets:
    """(speed, incidence) thresholds of the nested incoming sets on a sphere."""
    gamma1: Tuple[float, float] = AbsorptionDefaults.GAMMA1
    gamma2: Tuple[float, float] = AbsorptionDefaults.GAMMA2
    gamma3: Tuple[float, float] = AbsorptionDefaults.GAMMA3

    def __post_init__(self):
        (s1, a1), (s2, a2), (s3, a3) = self.gamma1, self.gamma2, self.gamma3
        if not (0 < s1 <= s2 < s3 and 0 < a1 <= a2 < a3 < 1):
            raise InfeasibleParametersError(
                f"gamma thresholds must nest strictly: speeds {s1}, {s2}, {s3}, incidences {a1}, {a2}, {a3}",
                "gamma3 in gamma2 in gamma1")

    def codes(self, v: np.ndarray, nu: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        speed = np.linalg.norm(v, axis=-1)
        dot = np.sum(v * nu, axis=-1)
        (s1, a1), (s2, a2), (s3, a3) = self.gamma1, self.gamma2, self.gamma3
        g1 = (speed > s1) & (dot < -a1 * speed)
        g2 = (speed >= s2) & (dot <= -a2 * speed)
        g3 = (speed >= s3) & (dot <= -a3 * speed)
        return np.where(g3, _GAMMA3, np.where(g2, _GAMMA2, np.where(g1, _GAMMA1, np.where(dot >= 0, _PLUS, _NONE))))

    def to_dict(self) -> Dict[str, Any]:
        return {"gamma1": list(self.gamma1), "gamma2": list(self.gamma2), "gamma3": list(self.gamma3)}


def classify(x: np.ndarray, v: np.ndarray, center: Sequence[float], radius: float, sets: GammaSets = None,
             tolerance: float = None) -> np.ndarray:
    """Most specific set label of each (x, v) with x on the sphere S(center, radius)."""
    sets = GammaSets() if sets is None else sets
    tolerance = AbsorptionDefaults.SPHERE_TOLERANCE if tolerance is None else tolerance
    center = np.asarray(center, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    off = np.abs(_signed_distance(x, center, radius))
    if np.any(off > tolerance):
        raise GeometryError(f"point lies {float(np.max(off)):.3e} off the sphere of radius {radius}")
    return np.array(LABELS)[sets.codes(v, outward_normal(x, center))]


# ========== Configuration ==========

@dataclass
class AbsorptionConfig:
    """
    Absorbing spheres S(center, 2 r0) over the horizon [0, T]. Several centers
    are handled independently, one inward crossing per sphere and step.
    """
    centers: np.ndarray
    r0: float
    T: float
    dt: float
    sets: GammaSets = field(default_factory=GammaSets)
    upsilon: Tuple[float, float] = (AbsorptionDefaults.UPSILON_OFF, AbsorptionDefaults.UPSILON_ON)
    upsilon_tilde: Tuple[float, float] = (AbsorptionDefaults.UPSILON2_OFF, AbsorptionDefaults.UPSILON2_ON)
    weight_floor: float = AbsorptionDefaults.WEIGHT_FLOOR
    enabled: bool = True

    def __post_init__(self):
        self.centers = np.mod(np.atleast_2d(np.asarray(self.centers, dtype=np.float64)), 1.0)
        if self.centers.shape[-1] != 2:
            raise InfeasibleParametersError(f"sphere centers must be points, got shape {self.centers.shape}", "centers")
        if not 0 < 2.0 * self.r0 < 0.5:
            raise InfeasibleParametersError(f"sphere radius 2 r0 = {2.0 * self.r0} must lie in (0, 1/2)", "r0")
        if not (self.T > 0 and 0 < self.dt <= self.T):
            raise InfeasibleParametersError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}", "T")
        off, on = self.upsilon
        if not 0 <= off < on <= 0.5:
            raise InfeasibleParametersError(f"absorption window ({off}, {on}) must satisfy 0 <= off < on <= 1/2",
                                            "upsilon")
        off, on = self.upsilon_tilde
        if not 0 <= off < on <= 1:
            raise InfeasibleParametersError(f"extension ramp ({off}, {on}) must satisfy 0 <= off < on <= 1",
                                            "upsilon_tilde")

    @property
    def radius(self) -> float:
        return 2.0 * self.r0

    def Upsilon(self, t) -> np.ndarray:
        """Absorption switch: 0 near both ends of [0, T], 1 in the middle."""
        off, on = self.upsilon
        s = np.asarray(t, dtype=np.float64) / self.T
        up = smoothstep((s - off) / (on - off))[0]
        down = smoothstep((1.0 - s - off) / (on - off))[0]
        return up * down

    def Upsilon_tilde(self, t) -> np.ndarray:
        off, on = self.upsilon_tilde
        return smoothstep((np.asarray(t, dtype=np.float64) / self.T - off) / (on - off))[0]

    def U(self, x: np.ndarray, v: np.ndarray, center: Sequence[float]) -> np.ndarray:
        """1 off gamma2, 0 on gamma3, smooth in speed and incidence in between."""
        (s2, a2), (s3, a3) = self.sets.gamma2, self.sets.gamma3
        v = np.asarray(v, dtype=np.float64)
        speed = np.linalg.norm(v, axis=-1)
        nu = outward_normal(x, np.asarray(center, dtype=np.float64))
        safe = np.where(speed > 0, speed, 1.0)
        incidence = np.where(speed > 0, -np.sum(v * nu, axis=-1) / safe, 0.0)
        a = smoothstep((speed - s2) / (s3 - s2))[0]
        b = smoothstep((incidence - a2) / (a3 - a2))[0]
        return 1.0 - a * b

    def to_dict(self) -> Dict[str, Any]:
        return {"centers": self.centers.tolist(), "r0": self.r0, "radius": self.radius, "T": self.T, "dt": self.dt,
                "sets": self.sets.to_dict(), "upsilon": list(self.upsilon),
                "upsilon_tilde": list(self.upsilon_tilde), "weight_floor": self.weight_floor,
                "enabled": self.enabled}


def opacity(t: float, x: np.ndarray, v: np.ndarray, cfg: AbsorptionConfig,
            center: Optional[Sequence[float]] = None) -> np.ndarray:
    center = cfg.centers[0] if center is None else center
    upsilon = cfg.Upsilon(t)
    return (1.0 - upsilon) + upsilon * cfg.U(x, v, center)


@dataclass
class PicardConfig:
    epsilon: float
    R: float
    max_iter: int
    tol: float
    kappa: float

    def __post_init__(self):
        for name in ("epsilon", "R", "tol", "kappa"):
            if not getattr(self, name) > 0:
                raise InfeasibleParametersError(f"{name} must be positive, got {getattr(self, name)}", name)
        if self.max_iter < 1:
            raise InfeasibleParametersError(f"max_iter must be >= 1, got {self.max_iter}", "max_iter")


# ========== Ensembles ==========

@dataclass
class ParticleEnsemble:
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64).reshape(-1, 2)
        self.v = np.asarray(self.v, dtype=np.float64).reshape(-1, 2)
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not self.x.shape[0] == self.v.shape[0] == self.w.shape[0]:
            raise TrajectoryError(f"ensemble arrays disagree: {self.x.shape}, {self.v.shape}, {self.w.shape}")
        if np.any(self.w < 0):
            raise TrajectoryError("particle weights must be nonnegative")
        if self.ids is None:
            self.ids = np.arange(self.x.shape[0])
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)

    @classmethod
    def empty(cls) -> "ParticleEnsemble":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))

    @property
    def size(self) -> int:
        return self.w.shape[0]

    @property
    def charge(self) -> float:
        return math.fsum(self.w)

    def select(self, mask: np.ndarray) -> "ParticleEnsemble":
        return ParticleEnsemble(self.x[mask], self.v[mask], self.w[mask], self.ids[mask])

    def concat(self, other: "ParticleEnsemble") -> "ParticleEnsemble":
        return ParticleEnsemble(np.concatenate([self.x, other.x]), np.concatenate([self.v, other.v]),
                                np.concatenate([self.w, other.w]), np.concatenate([self.ids, other.ids]))

    def speed_max(self) -> float:
        return float(np.max(np.linalg.norm(self.v, axis=-1), initial=0.0))


def sample_ensemble(count: int, charge: float, speed: float, rng: np.random.Generator,
                    center: Optional[Sequence[float]] = None, radius: Optional[float] = None) -> ParticleEnsemble:
    """
    count equal-weight particles of total charge `charge`, momenta uniform in
    the disc of radius `speed`; positions uniform on the torus, or in a ball.
    """
    if count == 0:
        return ParticleEnsemble.empty()
    if center is None:
        x = rng.random((count, 2))
    else:
        r = radius * np.sqrt(rng.random(count))
        a = 2.0 * np.pi * rng.random(count)
        x = np.mod(np.asarray(center, dtype=np.float64) + np.column_stack([r * np.cos(a), r * np.sin(a)]), 1.0)
    s = speed * np.sqrt(rng.random(count))
    b = 2.0 * np.pi * rng.random(count)
    v = np.column_stack([s * np.cos(b), s * np.sin(b)])
    return ParticleEnsemble(x, v, np.full(count, charge / count))


def make_neutral_fill(cfg: AbsorptionConfig, count: int, rng: np.random.Generator,
                      speed: float = None) -> ParticleEnsemble:
    """
    Unit-mass profile supported in the absorbing balls. Momenta come in
    (v, -v) pairs at the same point, so the fill carries no current.
    """
    speed = AbsorptionDefaults.FILL_SPEED if speed is None else speed
    if count < 2 or count % 2:
        raise InfeasibleParametersError(f"fill particle count must be even and >= 2, got {count}", "mu_particles")
    half = count // 2
    centers = cfg.centers[np.arange(half) % cfg.centers.shape[0]]
    r = cfg.radius * np.sqrt(rng.random(half))
    a = 2.0 * np.pi * rng.random(half)
    x = np.mod(centers + np.column_stack([r * np.cos(a), r * np.sin(a)]), 1.0)
    s = speed * np.sqrt(rng.random(half))
    b = 2.0 * np.pi * rng.random(half)
    v = np.column_stack([s * np.cos(b), s * np.sin(b)])
    return ParticleEnsemble(np.concatenate([x, x]), np.concatenate([v, -v]), np.full(count, 1.0 / count),
                            np.full(count, -1))


# ========== Deposition ==========

def deposit_moments(ens: ParticleEnsemble, grid: GridSpec, c: float,
                    threads: int = 1) -> Tuple[ScalarField, VectorField]:
    """
    Cloud-in-cell charge and current at the grid nodes, normalized so that
    the node sum times h^2 equals the total weight. Chunk buffers are summed
    in chunk order.
    """
    n = grid.n
    size = n * n
    if ens.size == 0:
        return ScalarField(grid, np.zeros((n, n))), VectorField(grid, np.zeros((2, n, n)))
    vhat = relativistic_velocity(ens.v, c)

    def deposit(lo: int, hi: int) -> np.ndarray:
        s = np.mod(ens.x[lo:hi], 1.0) * n
        base = np.floor(s).astype(np.int64)
        frac = s - base
        out = np.zeros((3, size))
        for d1 in (0, 1):
            w1 = frac[:, 0] if d1 else 1.0 - frac[:, 0]
            for d2 in (0, 1):
                w2 = frac[:, 1] if d2 else 1.0 - frac[:, 1]
                idx = ((base[:, 0] + d1) % n) * n + (base[:, 1] + d2) % n
                share = ens.w[lo:hi] * w1 * w2
                out[0] += np.bincount(idx, weights=share, minlength=size)
                out[1] += np.bincount(idx, weights=share * vhat[lo:hi, 0], minlength=size)
                out[2] += np.bincount(idx, weights=share * vhat[lo:hi, 1], minlength=size)
        return out

    total = np.zeros((3, size))
    for part in map_chunks(deposit, ens.size, AbsorptionDefaults.PUSH_CHUNK, threads):
        total += part
    total *= size
    return ScalarField(grid, total[0].reshape(n, n)), VectorField(grid, total[1:].reshape(2, n, n))


@dataclass
class ConservationPatch:
    """
    Current added to restore d_t rho + div j = 0. `current` holds the node
    values of the ball-local patch (zero off every absorbing ball); the
    remainder left after it is removed by a torus-wide longitudinal
    projection whose size is `projection`.
    """
    current: np.ndarray
    patch: float
    projection: float


def ball_current_patch(grid: GridSpec, residual: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """
    Node values of a charge-free current h supported in B(center, radius)
    with div h = -residual on the core of the ball. The net residual of the
    core is moved to a bump on the blend ring first, so the potential
    problem has zero mean.
    """
    dist = np.linalg.norm(_offset(np.moveaxis(grid.nodes, 0, -1), center), axis=-1)
    core, blend = AbsorptionDefaults.PATCH_CORE * radius, AbsorptionDefaults.PATCH_BLEND * radius
    keep = 1.0 - smoothstep((dist - core) / (blend - core))[0]
    cutoff = 1.0 - smoothstep((dist - blend) / (radius - blend))[0]
    s = (dist - core) / (blend - core)
    ring = smoothstep(2.0 * s)[0] * (1.0 - smoothstep(2.0 * s - 1.0)[0])
    if not np.any(ring > 0):
        logger.debug(f"No grid nodes on the blend ring of the ball at {center}; local patch skipped")
        return np.zeros(residual.shape[:-2] + (2, grid.n, grid.n))
    ring = ring / np.mean(ring)
    local = keep * residual
    local = local - np.mean(local, axis=(-2, -1), keepdims=True) * ring
    denom = np.where(grid.nonzero, grid.xi_norm ** 2, 1.0)
    phi_hat = np.where(grid.nonzero, spectral_coeffs(grid, local) / denom, 0.0)
    grad = real_values(grid, 1j * grid.xi * phi_hat[..., np.newaxis, :, :])
    return cutoff[np.newaxis, :, :] * grad


def enforce_charge_conservation(src: SourceMoments,
                                cfg: Optional[AbsorptionConfig] = None) -> Tuple[SourceMoments, ConservationPatch]:
    """
    Patch the current inside each absorbing ball of cfg, then replace the
    longitudinal part of what remains so that d_t rho + div j = 0 holds for
    the discrete time derivative. The charge is never touched.
    """
    grid = src.grid
    current = np.zeros((src.nt, 2, grid.n, grid.n))
    if cfg is not None and cfg.enabled:
        for center in cfg.centers:
            h = ball_current_patch(grid, charge_residual(src), center, cfg.radius)
            current += h
            src = SourceMoments(grid, src.times, src.rho_hat, src.j_hat + spectral_coeffs(grid, h))

    xi = grid.xi
    denom = np.where(grid.nonzero, grid.xi_norm ** 2, 1.0)
    drho = time_derivative(src.rho_hat, src.dt)
    along = xi[0] * src.j_hat[..., 0, :, :] + xi[1] * src.j_hat[..., 1, :, :]
    delta = np.where(grid.nonzero, (1j * drho - along) / denom, 0.0)
    change = xi * delta[..., np.newaxis, :, :]
    projection = float(np.max(np.abs(real_values(grid, change)), initial=0.0))
    fix = ConservationPatch(current, float(np.max(np.abs(current), initial=0.0)), projection)
    return SourceMoments(grid, src.times, src.rho_hat, src.j_hat + change), fix


# ========== Absorbed Transport ==========

def _push(force: ForceSpec, t: float, x: np.ndarray, v: np.ndarray, h: float,
          threads: int) -> Tuple[np.ndarray, np.ndarray]:
    parts = map_chunks(lambda lo, hi: rk4_step(force, t, x[lo:hi], v[lo:hi], h), x.shape[0],
                       AbsorptionDefaults.PUSH_CHUNK, threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _hermite(p0, m0, p1, m1, tau, h):
    tau = tau[:, np.newaxis]
    t2, t3 = tau * tau, tau * tau * tau
    return ((2 * t3 - 3 * t2 + 1) * p0 + (t3 - 2 * t2 + tau) * h * m0 + (-2 * t3 + 3 * t2) * p1
            + (t3 - t2) * h * m1)


def _crossing(force: ForceSpec, t: float, h: float, x0, v0, x1, v1, center, radius):
    """Crossing fraction of the step and the (x, v) there, by bisection on the cubic Hermite interpolant."""
    c = force.c
    mx0, mx1 = relativistic_velocity(v0, c), relativistic_velocity(v1, c)
    mv0, mv1 = force.force(t, x0, v0), force.force(t + h, x1, v1)
    lo = np.zeros(x0.shape[0])
    hi = np.ones(x0.shape[0])
    iterations = min(60, max(1, int(math.ceil(math.log2(abs(h) / AbsorptionDefaults.BISECTION_TOL)))))
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        outside = _signed_distance(_hermite(x0, mx0, x1, mx1, mid, h), center, radius) > 0
        lo = np.where(outside, mid, lo)
        hi = np.where(outside, hi, mid)
    xc = _hermite(x0, mx0, x1, mx1, hi, h)
    vc = _hermite(v0, mv0, v1, mv1, hi, h)
    d = _offset(xc, center)
    xc = center + d * (radius / np.linalg.norm(d, axis=-1, keepdims=True))
    return hi, xc, vc


@dataclass
class StepTally:
    absorbed: float = 0.0
    dropped: float = 0.0
    crossings: int = 0
    labels: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in LABELS})

    def add(self, other: "StepTally") -> None:
        self.absorbed = math.fsum([self.absorbed, other.absorbed])
        self.dropped = math.fsum([self.dropped, other.dropped])
        self.crossings += other.crossings
        for name, count in other.labels.items():
            self.labels[name] += count

    def to_dict(self) -> Dict[str, Any]:
        return {"absorbed": self.absorbed, "dropped": self.dropped, "crossings": self.crossings,
                "labels": dict(self.labels)}


def absorbing_step(ens: ParticleEnsemble, force: ForceSpec, cfg: Optional[AbsorptionConfig], t: float, h: float,
                   census: Optional[np.ndarray] = None, threads: int = 1) -> Tuple[ParticleEnsemble, StepTally]:
    """
    One RK4 step of every particle. Inward crossings of each sphere in gamma1
    multiply the weight by the opacity at the crossing; gamma3 crossings inside
    the census window mark census[id].
    """
    tally = StepTally()
    if ens.size == 0:
        return ens, tally
    x1, v1 = _push(force, t, ens.x, ens.v, h, threads)
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(v1))):
        raise TrajectoryError(f"non-finite particle state at t={t + h:.6g}")
    if cfg is None or not cfg.enabled:
        return ParticleEnsemble(x1, v1, ens.w, ens.ids), tally

    w = ens.w.copy()
    lo_win, hi_win = AbsorptionDefaults.CENSUS_WINDOW
    for center in cfg.centers:
        hit = (_signed_distance(ens.x, center, cfg.radius) > 0) & (_signed_distance(x1, center, cfg.radius) <= 0)
        if not np.any(hit):
            continue
        idx = np.nonzero(hit)[0]
        tau, xc, vc = _crossing(force, t, h, ens.x[idx], ens.v[idx], x1[idx], v1[idx], center, cfg.radius)
        tc = t + tau * h
        codes = cfg.sets.codes(vc, outward_normal(xc, center))
        for code, name in enumerate(LABELS):
            tally.labels[name] += int(np.count_nonzero(codes == code))
        incoming = codes <= _GAMMA1
        upsilon = cfg.Upsilon(tc)
        factor = np.where(incoming, (1.0 - upsilon) + upsilon * cfg.U(xc, vc, center), 1.0)
        w[idx] *= np.clip(factor, 0.0, 1.0)
        tally.crossings += int(np.count_nonzero(incoming))
        if census is not None:
            deep = (codes == _GAMMA3) & (tc >= lo_win * cfg.T) & (tc <= hi_win * cfg.T)
            marked = ens.ids[idx][deep]
            census[marked[marked >= 0]] = True

    tally.absorbed = math.fsum(ens.w - w)
    keep = w >= cfg.weight_floor
    tally.dropped = math.fsum(w[~keep])
    return ParticleEnsemble(x1[keep], v1[keep], w[keep], ens.ids[keep]), tally


def push_with_absorption(ens: ParticleEnsemble, force: ForceSpec, cfg: AbsorptionConfig, t0: float, t1: float,
                         census: Optional[np.ndarray] = None,
                         threads: int = 1) -> Tuple[ParticleEnsemble, StepTally]:
    count = step_count(t0, t1, cfg.dt)
    h = (t1 - t0) / count
    total = StepTally()
    for i in range(count):
        ens, tally = absorbing_step(ens, force, cfg, t0 + i * h, h, census, threads)
        total.add(tally)
    return ens, total


# ========== Neutral Extension ==========

def extend_neutral(ens: ParticleEnsemble, cfg: AbsorptionConfig, t: float, f0_charge: float,
                   fill: ParticleEnsemble) -> Tuple[ParticleEnsemble, float]:
    """
    Fade the content of the absorbing balls with the extension ramp, then add
    lambda times the unit fill so the total charge equals f0_charge.
    """
    ramp = float(cfg.Upsilon_tilde(t))
    w = ens.w.copy()
    if ramp > 0 and ens.size:
        inside = np.zeros(ens.size, dtype=bool)
        for center in cfg.centers:
            inside |= _signed_distance(ens.x, center, cfg.radius) < 0
        w[inside] *= 1.0 - ramp
    body = ParticleEnsemble(ens.x, ens.v, w, ens.ids)
    lam = math.fsum([f0_charge, -body.charge])
    if lam < 0:
        if lam < -AbsorptionDefaults.BOOKKEEPING_TOLERANCE * max(1.0, abs(f0_charge)):
            logger.warning(f"Ensemble charge exceeds the initial charge by {-lam:.3e}; fill weight clamped to 0")
        lam = 0.0
    return body.concat(ParticleEnsemble(fill.x, fill.v, fill.w * lam, fill.ids)), lam


# ========== Transport Records ==========

@dataclass
class TransportRecord:
    times: np.ndarray
    rho_hat: np.ndarray
    j_hat: np.ndarray
    final: ParticleEnsemble
    view: ParticleEnsemble
    tally: StepTally
    bookkeeping: List[Tuple[float, float, float, float, float]]
    v_max: float
    x_hist: Optional[np.ndarray] = None
    v_hist: Optional[np.ndarray] = None

    @staticmethod
    def bookkeeping_header() -> List[str]:
        return ["t", "charge", "absorbed", "dropped", "fill"]


def _transport(ens: ParticleEnsemble, force: ForceSpec, times: np.ndarray, grid: GridSpec,
               cfg: Optional[AbsorptionConfig] = None, fill: Optional[ParticleEnsemble] = None,
               census: Optional[np.ndarray] = None, record_states: bool = False,
               threads: int = 1) -> TransportRecord:
    """Push over the sample times and deposit the (extended) ensemble at each of them."""
    nt, m = times.shape[0], grid.m
    rho_hat = np.zeros((nt, m, m), dtype=np.complex128)
    j_hat = np.zeros((nt, 2, m, m), dtype=np.complex128)
    x_hist = np.empty((nt,) + ens.x.shape) if record_states else None
    v_hist = np.empty((nt,) + ens.v.shape) if record_states else None
    f0_charge = ens.charge
    total = StepTally()
    rows = []
    v_max = 0.0
    view = ens
    lam = 0.0
    for k in range(nt):
        t = float(times[k])
        if k > 0:
            ens, tally = absorbing_step(ens, force, cfg, float(times[k - 1]), t - float(times[k - 1]), census,
                                        threads)
            total.add(tally)
        view = ens
        if cfg is not None and fill is not None:
            view, lam = extend_neutral(ens, cfg, t, f0_charge, fill)
        rho, j = deposit_moments(view, grid, force.c, threads)
        rho_hat[k] = spectral_coeffs(grid, rho.values)
        j_hat[k] = spectral_coeffs(grid, j.values)
        if record_states:
            if ens.size != x_hist.shape[1]:
                raise TrajectoryError("particle count changed while recording states")
            x_hist[k], v_hist[k] = ens.x, ens.v
        v_max = max(v_max, view.speed_max())
        rows.append((t, view.charge, total.absorbed, total.dropped, lam))
    return TransportRecord(times, rho_hat, j_hat, ens, view, total, rows, v_max, x_hist, v_hist)


def _series_force(fields: EMTrajectory, reverse: bool = False) -> ForceSpec:
    E_hat, B_hat = fields.E_hat, fields.B_hat
    if reverse:
        E_hat, B_hat = E_hat[::-1], -B_hat[::-1]
    return ForceSpec(fields.c, SpectralSeriesField(fields.grid, fields.times, E_hat),
                     SpectralSeriesField(fields.grid, fields.times, B_hat, scale=1.0 / fields.c))


def free_transport_moments(ens: ParticleEnsemble, times: np.ndarray, grid: GridSpec, c: float,
                           threads: int = 1) -> SourceMoments:
    rec = _transport(ens, ForceSpec(c), times, grid, threads=threads)
    return SourceMoments(grid, times, rec.rho_hat, rec.j_hat)


def compatible_state(ens: ParticleEnsemble, grid: GridSpec, c: float, b_mean: float = 0.0) -> EMState:
    """Zero-mean Poisson field of the deposited charge, constant B."""
    rho, _ = deposit_moments(ens, grid, c)
    E = real_values(grid, poisson_hat(grid, spectral_coeffs(grid, rho.values)))
    return EMState(0.0, VectorField(grid, E), ScalarField(grid, np.full((grid.n, grid.n), float(b_mean))), c)


# ========== Fixed-Point Map ==========

@dataclass
class PicardResult:
    moments: SourceMoments
    fields: EMTrajectory
    record: TransportRecord
    census: np.ndarray
    patch: float
    lcc_raw: float
    projection: float = 0.0

    @property
    def final(self) -> ParticleEnsemble:
        return self.record.view

    @property
    def v_max(self) -> float:
        return self.record.v_max


def picard_step(g: SourceMoments, state0: EMState, f0: ParticleEnsemble, cfg: AbsorptionConfig,
                pcfg: PicardConfig, plan: Optional["ReferencePlan"] = None, fill: Optional[ParticleEnsemble] = None,
                f1: Optional[ParticleEnsemble] = None, threads: int = 1) -> PicardResult:
    """
    Fields from the moments of g plus the reference plan, then absorbed
    transport of f0 under them and the neutral extension. With f1 the
    backward term f1-hat(T - t, x, -v) is added to the moments.
    """
    grid, c = state0.grid, state0.c
    times = g.times
    total = g if plan is None else g + plan.source_on(times)
    src, fix = enforce_charge_conservation(total, cfg)
    B0 = state0.B
    if plan is not None and plan.b_background:
        B0 = ScalarField(grid, state0.B.values + c * plan.b_background)
    fields = evolve_maxwell(EMState(float(times[0]), state0.E, B0, c), src)

    f0 = ParticleEnsemble(f0.x, f0.v, f0.w)
    census = np.zeros(f0.size, dtype=bool)
    record = _transport(f0, _series_force(fields), times, grid, cfg, fill, census, threads=threads)
    rho_hat, j_hat = record.rho_hat, record.j_hat
    if f1 is not None and f1.size:
        back = _transport(ParticleEnsemble(f1.x, -f1.v, f1.w), _series_force(fields, reverse=True), times, grid,
                          cfg, threads=threads)
        rho_hat = rho_hat + back.rho_hat[::-1]
        j_hat = j_hat - back.j_hat[::-1]
    moments = SourceMoments(grid, times, rho_hat, j_hat)
    lcc_raw = check_charge_conservation(moments)
    if record.v_max > pcfg.R:
        logger.warning(f"Velocity support {record.v_max:.3f} exceeds the bound R={pcfg.R}")
    return PicardResult(moments, fields, record, census, fix.patch, lcc_raw, fix.projection)


def moment_distance(a: SourceMoments, b: SourceMoments) -> float:
    """Sup-norm gap of the node moments, relative to the size of a (absolute when a vanishes)."""
    drho = np.max(np.abs(a.rho_values() - b.rho_values()), initial=0.0)
    dj = np.max(np.abs(a.j_values() - b.j_values()), initial=0.0)
    scale = max(np.max(np.abs(a.rho_values()), initial=0.0), np.max(np.abs(a.j_values()), initial=0.0))
    gap = float(max(drho, dj))
    return gap / scale if scale > 0 else gap


@dataclass
class FixedPointReport:
    history: List[float]
    converged: bool
    result: PicardResult
    f0_charge: float
    in_set: List[bool]
    outside_charge: Optional[float] = None

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.history, self.history[1:]))

    @property
    def census_fraction(self) -> float:
        census = self.result.census
        return float(np.mean(census)) if census.size else 1.0

    @property
    def outside_fraction(self) -> Optional[float]:
        if self.outside_charge is None:
            return None
        return self.outside_charge / self.f0_charge if self.f0_charge > 0 else 0.0

    @property
    def bookkeeping_error(self) -> float:
        """|initial - (surviving + absorbed + dropped)| relative to the initial charge."""
        tally = self.result.record.tally
        gap = math.fsum([self.f0_charge, -self.result.record.final.charge, -tally.absorbed, -tally.dropped])
        return abs(gap) / max(self.f0_charge, 1e-300)

    @property
    def charge_error(self) -> float:
        return abs(math.fsum([self.result.final.charge, -self.f0_charge])) / max(self.f0_charge, 1e-300)

    def rows(self) -> List[Tuple[int, float, bool]]:
        return [(i + 1, r, s) for i, (r, s) in enumerate(zip(self.history, self.in_set))]

    def to_dict(self) -> Dict[str, Any]:
        return {"iterations": self.iterations, "converged": self.converged, "monotone": self.monotone,
                "history": self.history, "in_set": self.in_set, "f0_charge": self.f0_charge,
                "census_fraction": self.census_fraction, "outside_charge": self.outside_charge,
                "outside_fraction": self.outside_fraction, "bookkeeping_error": self.bookkeeping_error,
                "charge_error": self.charge_error, "v_max": self.result.v_max, "patch": self.result.patch,
                "projection": self.result.projection, "lcc_raw": self.result.lcc_raw,
                "tally": self.result.record.tally.to_dict()}


def fixed_point_solve(f0: ParticleEnsemble, state0: EMState, cfg: AbsorptionConfig, pcfg: PicardConfig,
                      plan: Optional["ReferencePlan"] = None, omega: Optional["ControlSet"] = None,
                      fill: Optional[ParticleEnsemble] = None, f1: Optional[ParticleEnsemble] = None,
                      strict: bool = True, threads: int = 1) -> FixedPointReport:
    """
    Iterate picard_step from the free-transport moments of f0 until the
    relative moment gap drops below pcfg.tol. Raises ConvergenceError after
    max_iter iterations when strict.
    """
    grid, c = state0.grid, state0.c
    times = uniform_times(cfg.T, cfg.dt)
    g = free_transport_moments(f0, times, grid, c, threads)
    history: List[float] = []
    in_set: List[bool] = []
    result = None
    converged = False
    for it in range(1, pcfg.max_iter + 1):
        result = picard_step(g, state0, f0, cfg, pcfg, plan, fill, f1, threads)
        residual = moment_distance(result.moments, g)
        history.append(residual)
        perturbation = float(np.max(np.abs(result.moments.rho_values()), initial=0.0))
        in_set.append(perturbation <= pcfg.epsilon and result.v_max <= pcfg.R)
        logger.info(f"Picard iteration {it}: residual {residual:.3e}, v_max {result.v_max:.3f}")
        g = result.moments
        if residual < pcfg.tol:
            converged = True
            break
    if not converged:
        msg = f"fixed point not reached in {pcfg.max_iter} iterations (last residual {history[-1]:.3e})"
        if strict:
            raise ConvergenceError(msg, history)
        logger.warning(msg)

    outside = None
    if omega is not None:
        final = result.final
        outside = math.fsum(final.w[omega.depth(np.mod(final.x, 1.0)) <= 0]) if final.size else 0.0
    report = FixedPointReport(history, converged, result, f0.charge, in_set, outside)
    logger.info(f"Fixed point: {report.iterations} iterations, census {report.census_fraction:.2%}, "
                f"bookkeeping error {report.bookkeeping_error:.2e}")
    return report


@dataclass
class KappaScan:
    """Census of one Picard step per data scale; a scale passes when it keeps every hit of the smallest one."""
    kappas: List[float]
    fractions: List[float]
    preserved: List[bool]

    @property
    def largest_passing(self) -> Optional[float]:
        best = None
        for kappa, ok in zip(self.kappas, self.preserved):
            if not ok:
                break
            best = kappa
        return best

    def rows(self) -> List[Tuple[float, float, bool]]:
        return list(zip(self.kappas, self.fractions, self.preserved))

    def to_dict(self) -> Dict[str, Any]:
        return {"kappas": self.kappas, "fractions": self.fractions, "preserved": self.preserved,
                "largest_passing": self.largest_passing}


def kappa_scan(f0: ParticleEnsemble, kappas: Sequence[float], state_of: Callable[[ParticleEnsemble], EMState],
               cfg: AbsorptionConfig, pcfg: PicardConfig, plan: Optional["ReferencePlan"] = None,
               fill: Optional[ParticleEnsemble] = None, threads: int = 1) -> KappaScan:
    """
    Rescale the charge of f0 to each kappa (same particles) and run one
    Picard step from its free-transport moments. state_of builds the
    compatible initial fields of each rescaled ensemble.
    """
    if f0.size == 0 or not f0.charge > 0:
        raise InfeasibleParametersError("the data scale scan needs an ensemble with positive charge", "kappa")
    kappas = sorted(float(k) for k in kappas)
    if not kappas or kappas[0] <= 0:
        raise InfeasibleParametersError(f"data scales must be positive, got {kappas}", "kappa")
    times = uniform_times(cfg.T, cfg.dt)
    fractions, preserved = [], []
    baseline = None
    for kappa in kappas:
        ens = ParticleEnsemble(f0.x, f0.v, f0.w * (kappa / f0.charge), f0.ids)
        state0 = state_of(ens)
        g = free_transport_moments(ens, times, state0.grid, state0.c, threads)
        census = picard_step(g, state0, ens, cfg, pcfg, plan, fill, threads=threads).census
        if baseline is None:
            baseline = census
        fractions.append(float(np.mean(census)))
        preserved.append(bool(np.all(census[baseline])))
        logger.info(f"Data scale {kappa:.3g}: census {fractions[-1]:.2%}, baseline hits kept: {preserved[-1]}")
    return KappaScan(kappas, fractions, preserved)


# ========== Self-Consistent Solver and Rescaling ==========

@dataclass
class KineticTrajectory:
    """Particles, fields and the sources that drove the fields. c is signed after a reflection."""
    grid: GridSpec
    c: float
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray
    E_hat: np.ndarray
    B_hat: np.ndarray
    rho_hat: np.ndarray
    j_hat: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def solve_kinetic(ens: ParticleEnsemble, state0: EMState, T: float, dt: float, iterations: int = None,
                  threads: int = 1) -> KineticTrajectory:
    """Picard iteration of the unabsorbed Vlasov-Maxwell system started from free transport."""
    iterations = AbsorptionDefaults.KINETIC_ITERATIONS if iterations is None else iterations
    if iterations < 1:
        raise InfeasibleParametersError(f"need at least one iteration, got {iterations}", "iterations")
    grid, c = state0.grid, state0.c
    times = uniform_times(T, dt)
    g = free_transport_moments(ens, times, grid, c, threads)
    for _ in range(iterations):
        src, _ = enforce_charge_conservation(g)
        fields = evolve_maxwell(state0, src)
        record = _transport(ens, _series_force(fields), times, grid, record_states=True, threads=threads)
        g = SourceMoments(grid, times, record.rho_hat, record.j_hat)
    return KineticTrajectory(grid, c, times, record.x_hist, record.v_hist, ens.w.copy(), fields.E_hat,
                             fields.B_hat, src.rho_hat, src.j_hat)


def rescale_solution(traj: KineticTrajectory, lam: float) -> KineticTrajectory:
    """
    f(lam t, x, v / lam) with fields lam^2 (E, B)(lam t) at light speed c lam.
    Negative lam reverses time; the sample times are kept ascending.
    """
    if lam == 0:
        raise TrajectoryError("scaling factor must be nonzero")
    order = slice(None) if lam > 0 else slice(None, None, -1)
    l2 = lam * lam
    return KineticTrajectory(traj.grid, traj.c * lam, traj.times[order] / lam, traj.x[order], lam * traj.v[order],
                             l2 * traj.w, l2 * traj.E_hat[order], l2 * traj.B_hat[order], l2 * traj.rho_hat[order],
                             lam * l2 * traj.j_hat[order])


def kinetic_residual(traj: KineticTrajectory) -> Dict[str, float]:
    """Relative sup residuals of the characteristics and of Maxwell's equations at signed light speed c."""
    grid, c, dt = traj.grid, traj.c, traj.dt
    speed = abs(c)
    vhat = relativistic_velocity(traj.v, speed)
    dx = time_derivative(traj.x, dt)
    dv = time_derivative(traj.v, dt)
    force = np.empty_like(traj.v)
    for k in range(traj.times.shape[0]):
        points = np.mod(traj.x[k], 1.0)
        E = np.stack([evaluate_series(grid, traj.E_hat[k, 0], points),
                      evaluate_series(grid, traj.E_hat[k, 1], points)], axis=-1)
        B = evaluate_series(grid, traj.B_hat[k], points)
        force[k] = E + (B / c)[:, np.newaxis] * perp(vhat[k])

    def relative(residual, *terms):
        scale = max(float(np.max(np.abs(term), initial=0.0)) for term in terms)
        gap = float(np.max(np.abs(residual), initial=0.0))
        return gap / scale if scale > 0 else gap

    xi = grid.xi
    E, B, j = traj.E_hat, traj.B_hat, traj.j_hat
    dE = time_derivative(E, dt)
    dB = time_derivative(B, dt)
    curl_B = c * np.stack([1j * xi[1] * B, -1j * xi[0] * B], axis=1)
    curl_E = c * 1j * (xi[0] * E[:, 1] - xi[1] * E[:, 0])
    out = {"x": relative(dx - vhat, dx, vhat), "v": relative(dv - force, dv, force),
           "E": relative(dE - curl_B + j, dE, curl_B, j), "B": relative(dB + curl_E, dB, curl_E)}
    out["max"] = max(out.values())
    return out


def residual_rescaled(traj: KineticTrajectory, lam: float) -> Dict[str, float]:
    return kinetic_residual(rescale_solution(traj, lam))


def large_time_pipeline(ens: ParticleEnsemble, state0: EMState, T: float, dt: float, lam: float,
                        iterations: int = None, threads: int = 1) -> Dict[str, float]:
    """
    Solve directly on [0, T] and, separately, the rescaled data at light
    speed c lam on [0, T / lam], then map the second run back. Returns the
    relative gaps between the two.
    """
    if not lam > 0:
        raise TrajectoryError(f"large-time rescaling needs lam > 0, got {lam}")
    grid, c = state0.grid, state0.c
    direct = solve_kinetic(ens, state0, T, dt, iterations, threads)
    scaled_ens = ParticleEnsemble(ens.x, lam * ens.v, lam * lam * ens.w)
    scaled_state = EMState(0.0, VectorField(grid, lam * lam * state0.E.values),
                           ScalarField(grid, lam * lam * state0.B.values), c * lam)
    scaled = solve_kinetic(scaled_ens, scaled_state, T / lam, dt / lam, iterations, threads)
    back = rescale_solution(scaled, 1.0 / lam)

    def gap(a, b):
        scale = float(np.max(np.abs(b), initial=0.0))
        diff = float(np.max(np.abs(a - b), initial=0.0))
        return diff / scale if scale > 0 else diff

    out = {"lambda": lam, "steps": int(direct.times.shape[0] - 1),
           "times": float(np.max(np.abs(back.times - direct.times))),
           "x": float(np.max(np.abs(back.x - direct.x), initial=0.0)), "v": gap(back.v, direct.v),
           "E": gap(back.E_hat, direct.E_hat), "B": gap(back.B_hat, direct.B_hat)}
    logger.info(f"Large-time rescaling lam={lam}: x gap {out['x']:.2e}, v gap {out['v']:.2e}, E gap {out['E']:.2e}")
    return out
