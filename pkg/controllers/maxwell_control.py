"""
Finite-mode steering of the linear Maxwell system by currents supported in omega.

Controls are combinations of
  * stream-function bumps psi on balls inside omega, current curl psi = (d2 psi, -d1 psi),
  * loop currents (g(x2), 0) / (0, g(x1)) on bands inside omega (the only way to move mode 0),
each multiplied by a time profile vanishing at 0 and T. Every element is
divergence-free, so the charge stays identically zero.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from config import ControlDefaults
from geometry import BallUnion, ControlSet, Strip, WholeTorus
from spectral import (EMState, EMTrajectory, GridSpec, ScalarField, SourceMoments, VectorField, curl_scal,
                      evolve_maxwell, real_values, spectral_coeffs, uniform_times, SpectralScalar)
from utils import SteeringError, SupportError, get_logger

logger = get_logger(__name__)


def bump(s: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1 - s^2)) for |s| < 1, exactly 0 elsewhere."""
    s = np.asarray(s, dtype=np.float64)
    inside = np.abs(s) < 1.0
    safe = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - safe * safe)), 0.0)


def _periodic_delta(x: np.ndarray, center: np.ndarray) -> np.ndarray:
    delta = x - center.reshape((2,) + (1,) * (x.ndim - 1))
    return delta - np.round(delta)


# ========== Basis ==========

@dataclass
class ControlElement:
    kind: str
    center: np.ndarray
    radius: float
    axis: int = 0

    def stream(self, grid: GridSpec) -> np.ndarray:
        delta = _periodic_delta(grid.nodes, self.center)
        return bump(np.sqrt(delta[0] ** 2 + delta[1] ** 2) / self.radius)

    def current(self, grid: GridSpec) -> np.ndarray:
        """Analytic node samples (2, n, n); exactly zero off the element's support."""
        delta = _periodic_delta(grid.nodes, self.center)
        if self.kind == "bump":
            s2 = (delta[0] ** 2 + delta[1] ** 2) / self.radius ** 2
            inside = s2 < 1.0
            safe = np.where(inside, s2, 0.0)
            factor = np.where(inside, bump(np.sqrt(safe)) * (-2.0) / (1.0 - safe) ** 2 / self.radius ** 2, 0.0)
            grad1, grad2 = factor * delta[0], factor * delta[1]
            return np.stack([grad2, -grad1])
        profile = self._loop_profile(grid, delta)
        out = np.zeros((2, grid.n, grid.n))
        out[self.axis] = profile
        return out

    def _loop_profile(self, grid: GridSpec, delta: np.ndarray) -> np.ndarray:
        # axis 0 flows along x1 and lives on a band in x2, and vice versa
        u = delta[1 - self.axis]
        g = bump(u / self.radius)
        return g / g.mean()

    def current_hat(self, grid: GridSpec) -> np.ndarray:
        if self.kind == "bump":
            return curl_scal(SpectralScalar(grid, spectral_coeffs(grid, self.stream(grid)))).coeffs
        return spectral_coeffs(grid, self.current(grid))


def _bump_centers(omega: ControlSet, radius: float, spacing: float) -> List[np.ndarray]:
    if isinstance(omega, BallUnion):
        return [np.array([c1, c2]) for c1, c2, _ in omega.balls]
    if isinstance(omega, Strip):
        count = int(math.ceil(omega.norm / spacing))
        return [np.mod(omega.offset + omega.tangent * omega.norm * i / count, 1.0) for i in range(count)]
    count = max(1, int(round(1.0 / max(spacing, radius))))
    coords = (np.arange(count) + 0.5) / count
    centers = [np.array([a, b]) for a in coords for b in coords]
    if isinstance(omega, WholeTorus):
        return centers
    return [c for c in centers if omega.depth(c[np.newaxis])[0] > 0]


def _band_inside(omega: ControlSet, axis: int, level: float, band: float, samples: int = 256) -> bool:
    t = np.arange(samples) / samples
    offsets = np.linspace(-band, band, 9)
    pts = []
    for o in offsets:
        line = np.full(samples, level + o)
        pts.append(np.stack([t, line], axis=-1) if axis == 0 else np.stack([line, t], axis=-1))
    return bool(np.all(omega.depth(np.concatenate(pts)) > 0))


@dataclass
class ControlBasis:
    elements: List[ControlElement]
    profiles: List[Callable[[np.ndarray], np.ndarray]]
    labels: List[str]
    T: float

    @property
    def size(self) -> Tuple[int, int]:
        return len(self.elements), len(self.profiles)

    def profile_values(self, times: np.ndarray) -> np.ndarray:
        if not self.profiles:
            return np.zeros((0, len(times)))
        return np.stack([p(times) for p in self.profiles])

    def element_hats(self, grid: GridSpec) -> np.ndarray:
        if not self.elements:
            return np.zeros((0, 2, grid.m, grid.m), dtype=np.complex128)
        return np.stack([el.current_hat(grid) for el in self.elements])

    def element_values(self, grid: GridSpec) -> np.ndarray:
        if not self.elements:
            return np.zeros((0, 2, grid.n, grid.n))
        return np.stack([el.current(grid) for el in self.elements])

    def check_support(self, grid: GridSpec, omega: ControlSet, tolerance: float = None) -> float:
        tolerance = ControlDefaults.SUPPORT_TOLERANCE if tolerance is None else tolerance
        outside = ~omega.mask(grid.n)
        worst = 0.0
        for i, el in enumerate(self.elements):
            leak = float(np.max(np.abs(el.current(grid)[:, outside]), initial=0.0))
            if leak > tolerance:
                raise SupportError(f"control element {i} ({el.kind} at {el.center.tolist()}) leaks outside omega "
                                   f"with magnitude {leak:.3e}")
            worst = max(worst, leak)
        return worst

    @classmethod
    def build(cls, grid: GridSpec, omega: ControlSet, T: float, c: float, k_ctrl: int,
              bump_radius: float = None, time_profiles: int = None, loop_band: float = None,
              spacing: float = None) -> "ControlBasis":
        bump_radius = ControlDefaults.BUMP_RADIUS if bump_radius is None else bump_radius
        time_profiles = ControlDefaults.TIME_PROFILES if time_profiles is None else time_profiles
        loop_band = ControlDefaults.LOOP_BAND if loop_band is None else loop_band
        spacing = ControlDefaults.BUMP_SPACING if spacing is None else spacing

        elements = []
        for center in _bump_centers(omega, bump_radius, spacing):
            room = float(omega.depth(center[np.newaxis])[0])
            radius = min(bump_radius, 0.9 * room) if math.isfinite(room) else bump_radius
            if radius > 2.0 / grid.n:
                elements.append(ControlElement("bump", center, radius))
        levels = sorted({float(el.center[1]) for el in elements} | {float(el.center[0]) for el in elements})
        for axis in (0, 1):
            for level in levels:
                if _band_inside(omega, axis, level, loop_band * 1.05):
                    center = np.array([0.0, level]) if axis == 0 else np.array([level, 0.0])
                    elements.append(ControlElement("loop", center, loop_band, axis))
                    break

        profiles, labels = [], []
        for l in range(1, time_profiles + 1):
            profiles.append(lambda t, l=l: np.sin(l * np.pi * t / T))
            labels.append(f"sin{l}")
        ks = grid.modes.reshape(2, -1).T
        freqs = sorted({round(c * 2 * np.pi * math.hypot(*k), 12) for k in ks
                        if 0 < max(abs(k[0]), abs(k[1])) <= k_ctrl})
        for w in freqs:
            profiles.append(lambda t, w=w: np.sin(np.pi * t / T) * np.cos(w * t))
            profiles.append(lambda t, w=w: np.sin(np.pi * t / T) * np.sin(w * t))
            labels.extend([f"cos{w:.6g}", f"sin{w:.6g}"])
        logger.info(f"Control basis: {len(elements)} elements x {len(profiles)} profiles")
        return cls(elements, profiles, labels, T)


# ========== Problem and Reachability ==========

@dataclass
class SteeringProblem:
    E0: VectorField
    B0: ScalarField
    E1: VectorField
    B1: ScalarField
    T: float
    c: float
    k_ctrl: int = ControlDefaults.K_CTRL
    reg: float = ControlDefaults.REG
    dt: float = ControlDefaults.DT

    @property
    def grid(self) -> GridSpec:
        return self.E0.grid

    @property
    def times(self) -> np.ndarray:
        return uniform_times(self.T, self.dt)

    def controlled(self) -> np.ndarray:
        grid = self.grid
        inf_norm = np.max(np.abs(grid.modes), axis=0)
        return grid.nonzero & (inf_norm <= self.k_ctrl)


def _transverse(grid: GridSpec, vec_hat: np.ndarray) -> np.ndarray:
    norm = np.where(grid.nonzero, grid.xi_norm, 1.0)
    return (grid.xi[1] * vec_hat[..., 0, :, :] - grid.xi[0] * vec_hat[..., 1, :, :]) / norm


def _state_vector(problem: SteeringProblem, E_hat: np.ndarray, B_hat: np.ndarray) -> np.ndarray:
    """Real coordinates of a state on the controlled modes: Re/Im of a_k, B_k, then E mode 0."""
    grid = problem.grid
    mask = problem.controlled()
    a = _transverse(grid, E_hat)[..., mask]
    b = B_hat[..., mask]
    k = grid.k_max
    mode0 = E_hat[..., :, k, k].real
    return np.concatenate([a.real, a.imag, b.real, b.imag, mode0], axis=-1)


@dataclass
class ReachabilityMap:
    matrix: np.ndarray
    n_elements: int
    n_profiles: int
    times: np.ndarray

    def column(self, element: int, profile: int) -> np.ndarray:
        return self.matrix[:, element * self.n_profiles + profile]


def _unit_transverse(grid: GridSpec) -> np.ndarray:
    norm = np.where(grid.nonzero, grid.xi_norm, 1.0)
    unit = np.stack([grid.xi[1] / norm, -grid.xi[0] / norm]).astype(np.complex128)
    unit[:, ~grid.nonzero] = 0.0
    return unit


def assemble_reachability(problem: SteeringProblem, basis: ControlBasis, omega: Optional[ControlSet] = None,
                          ) -> ReachabilityMap:
    """
    Column (m, l): controlled-mode final state of a unit coefficient on
    element m with profile l, from zero data. Modes decouple, so one batched
    evolution per profile (unit transverse source at every k plus the two
    mode-0 directions) gives every column of that profile.
    """
    grid = problem.grid
    if problem.k_ctrl > grid.k_max:
        raise SteeringError(f"k_ctrl={problem.k_ctrl} exceeds the grid truncation {grid.k_max}")
    if omega is not None:
        basis.check_support(grid, omega)
    times = problem.times
    n_el, n_pr = basis.size
    rows = _state_vector(problem, np.zeros((2, grid.m, grid.m), complex), np.zeros((grid.m, grid.m), complex)).size
    if n_el == 0 or n_pr == 0:
        return ReachabilityMap(np.zeros((rows, 0)), n_el, n_pr, times)

    k = grid.k_max
    unit = _unit_transverse(grid)
    hats = basis.element_hats(grid)
    J = _transverse(grid, hats)
    J0 = hats[:, :, k, k]
    profiles = basis.profile_values(times)
    zero = EMState.zero(grid, problem.c, float(times[0]))
    matrix = np.zeros((rows, n_el * n_pr))
    mask = problem.controlled()
    for l in range(n_pr):
        theta = profiles[l]
        j_hat = np.zeros((len(times), 3, 2, grid.m, grid.m), dtype=np.complex128)
        j_hat[:, 0] = theta[:, None, None, None] * unit
        j_hat[:, 1, 0, k, k] = theta
        j_hat[:, 2, 1, k, k] = theta
        src = SourceMoments(grid, times, np.zeros((len(times), 3, grid.m, grid.m)), j_hat)
        final = evolve_maxwell(zero, src)
        E_T, B_T = final.E_hat[-1], final.B_hat[-1]
        Ra = _transverse(grid, E_T[0])
        RB = B_T[0]
        R0 = np.array([[E_T[1, 0, k, k], E_T[2, 0, k, k]], [E_T[1, 1, k, k], E_T[2, 1, k, k]]]).real
        for m_el in range(n_el):
            a = (J[m_el] * Ra)[mask]
            b = (J[m_el] * RB)[mask]
            mode0 = R0 @ J0[m_el].real
            matrix[:, m_el * n_pr + l] = np.concatenate([a.real, a.imag, b.real, b.imag, mode0])
    return ReachabilityMap(matrix, n_el, n_pr, times)


# ========== Steering ==========

@dataclass
class SteeringResult:
    coefficients: np.ndarray
    times: np.ndarray
    current_hat: np.ndarray
    target: np.ndarray
    achieved: np.ndarray
    mode_residuals: np.ndarray
    relative_residual: float
    simulated_final: EMState
    simulation_gap: float
    divergence_max: float
    outside_max: float
    passed: bool
    basis: ControlBasis = field(repr=False)
    trajectory: Optional[EMTrajectory] = field(default=None, repr=False)
    reach: Optional["ReachabilityMap"] = field(default=None, repr=False)

    def current_values(self, grid: GridSpec, i: int) -> np.ndarray:
        """Analytic real samples of j at times[i]; exactly zero outside omega."""
        theta = self.basis.profile_values(self.times[i:i + 1])[:, 0]
        weights = self.coefficients @ theta
        return np.tensordot(weights, self.basis.element_values(grid), axes=1)

    def source(self, grid: GridSpec) -> SourceMoments:
        return SourceMoments(grid, self.times, np.zeros((len(self.times), grid.m, grid.m)), self.current_hat)

    def to_dict(self):
        return {"relative_residual": self.relative_residual, "simulation_gap": self.simulation_gap,
                "divergence_max": self.divergence_max, "outside_max": self.outside_max, "passed": self.passed,
                "n_elements": int(self.coefficients.shape[0]), "n_profiles": int(self.coefficients.shape[1]),
                "coefficients": self.coefficients.tolist(),
                "mode_residuals": self.mode_residuals.tolist()}


def _ridge(A: np.ndarray, y: np.ndarray, reg: float) -> np.ndarray:
    """argmin |A x - y|^2 + reg |D x|^2 with D the column norms."""
    if A.shape[1] == 0:
        return np.zeros(0)
    scale = np.linalg.norm(A, axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    An = A / scale
    aug = np.vstack([An, math.sqrt(reg) * np.eye(A.shape[1])])
    rhs = np.concatenate([y, np.zeros(A.shape[1])])
    z, *_ = np.linalg.lstsq(aug, rhs, rcond=None)
    return z / scale


def solve_steering(problem: SteeringProblem, basis: ControlBasis, omega: Optional[ControlSet] = None,
                   tolerance: float = None, reach: Optional[ReachabilityMap] = None) -> SteeringResult:
    """
    Least-squares control coefficients driving (E0, B0) to (E1, B1), checked by
    a forward simulation. A reachability map from an earlier call with the same
    horizon and basis may be passed in.
    """
    grid = problem.grid
    tolerance = ControlDefaults.RESIDUAL_TOLERANCE if tolerance is None else tolerance
    b0, b1 = float(problem.B0.values.mean()), float(problem.B1.values.mean())
    if abs(b1 - b0) > 1e-12 * max(1.0, abs(b0)):
        raise SteeringError(f"mean of B cannot be steered: target {b1:.6g} differs from initial {b0:.6g}")
    for name, E in (("E0", problem.E0), ("E1", problem.E1)):
        E_hat = spectral_coeffs(grid, E.values)
        div = real_values(grid, 1j * (grid.xi[0] * E_hat[0] + grid.xi[1] * E_hat[1]))
        if np.max(np.abs(div)) > 1e-8 * max(1.0, float(np.max(np.abs(E.values)))):
            raise SteeringError(f"{name} must be divergence-free (max |div| = {np.max(np.abs(div)):.3e})")

    if reach is None:
        reach = assemble_reachability(problem, basis, omega)
    times = reach.times
    state0 = EMState(float(times[0]), problem.E0, problem.B0, problem.c)
    free = evolve_maxwell(state0, SourceMoments.zeros(grid, times))
    E1_hat, B1_hat = spectral_coeffs(grid, problem.E1.values), spectral_coeffs(grid, problem.B1.values)
    target = _state_vector(problem, E1_hat, B1_hat) - _state_vector(problem, free.E_hat[-1], free.B_hat[-1])

    x = _ridge(reach.matrix, target, problem.reg)
    n_el, n_pr = basis.size
    coefficients = x.reshape(n_el, n_pr) if x.size else np.zeros((n_el, n_pr))
    achieved = reach.matrix @ x if x.size else np.zeros_like(target)

    profiles = basis.profile_values(times)
    hats = basis.element_hats(grid)
    current_hat = np.einsum("ml,lt,mcab->tcab", coefficients, profiles, hats) if x.size else \
        np.zeros((len(times), 2, grid.m, grid.m), dtype=np.complex128)
    src = SourceMoments(grid, times, np.zeros((len(times), grid.m, grid.m)), current_hat)
    traj = evolve_maxwell(state0, src)
    final = traj.final
    simulated = _state_vector(problem, traj.E_hat[-1], traj.B_hat[-1]) - \
        _state_vector(problem, free.E_hat[-1], free.B_hat[-1])

    scale = max(float(np.linalg.norm(target)), 1e-300)
    residual_vec = achieved - target
    relative = float(np.linalg.norm(simulated - target)) / scale if np.linalg.norm(target) > 0 \
        else float(np.linalg.norm(simulated))
    gap = float(np.linalg.norm(simulated - achieved)) / max(scale, 1.0)
    div = np.max(np.abs(1j * (grid.xi[0] * current_hat[:, 0] + grid.xi[1] * current_hat[:, 1])), initial=0.0)

    outside_max = 0.0
    if omega is not None and n_el:
        outside = ~omega.mask(grid.n)
        values = basis.element_values(grid)
        leak = np.max(np.abs(values[:, :, outside]), axis=(1, 2), initial=0.0) if outside.any() else np.zeros(n_el)
        outside_max = float(np.max(np.abs(coefficients).sum(axis=1) * leak, initial=0.0))
    passed = relative < tolerance
    if not passed:
        logger.warning(f"Steering residual {relative:.3e} above tolerance {tolerance:.1e}")
    logger.info(f"Steering: relative residual {relative:.3e}, model/simulation gap {gap:.3e}")
    return SteeringResult(coefficients, times, current_hat, target, achieved, np.abs(residual_vec), relative,
                          final, gap, float(div), outside_max, passed, basis, traj, reach)


def reverse_steering(problem: SteeringProblem, result: SteeringResult) -> EMState:
    """Run the time-reversed control from (E(T), -B(T)); the end state should be (E0, -B0)."""
    grid = problem.grid
    final = result.simulated_final
    start = EMState(float(result.times[0]), final.E, ScalarField(grid, -final.B.values), problem.c)
    return evolve_maxwell(start, result.source(grid).reversed()).final


def constant_field_problem(grid: GridSpec, c: float, amplitude: float, T: float, dt: float, k_ctrl: int,
                           reg: float) -> SteeringProblem:
    """Steer (0, 0) to ((amplitude, 0), 0)."""
    zero_E = VectorField(grid, np.zeros((2, grid.n, grid.n)))
    zero_B = ScalarField(grid, np.zeros((grid.n, grid.n)))
    E1 = VectorField(grid, np.stack([np.full((grid.n, grid.n), amplitude), np.zeros((grid.n, grid.n))]))
    return SteeringProblem(zero_E, zero_B, E1, zero_B, T, c, k_ctrl, reg, dt)


def random_target_problem(grid: GridSpec, c: float, amplitude: float, T: float, dt: float, k_ctrl: int,
                          reg: float, rng: np.random.Generator) -> SteeringProblem:
    """Steer (0, 0) to a random divergence-free state on |k|_inf <= k_ctrl."""
    inf_norm = np.max(np.abs(grid.modes), axis=0)
    band = grid.nonzero & (inf_norm <= k_ctrl)

    def random_real():
        coeffs = np.where(band, rng.standard_normal((grid.m, grid.m)) + 1j * rng.standard_normal((grid.m, grid.m)),
                          0.0)
        coeffs = 0.5 * (coeffs + np.conj(coeffs[::-1, ::-1]))
        return coeffs

    psi = random_real()
    E_hat = curl_scal(SpectralScalar(grid, psi)).coeffs
    E = real_values(grid, E_hat)
    B = real_values(grid, random_real())
    scale = amplitude / max(float(np.max(np.abs(E))), float(np.max(np.abs(B))), 1e-300)
    zero_E = VectorField(grid, np.zeros((2, grid.n, grid.n)))
    zero_B = ScalarField(grid, np.zeros((grid.n, grid.n)))
    return SteeringProblem(zero_E, zero_B, VectorField(grid, scale * E), ScalarField(grid, scale * B), T, c, k_ctrl,
                           reg, dt)
