"""
Reference trajectories for the return method.

A reference is a kinetic profile built from velocity bumps,

    f(t, x, v) = Z(v) rho(t, x) + Z1(v) j1(t, x) + Z2(v) j2(t, x),

whose density and current are exactly (rho, j), together with the fields the
moments generate. Two plans are assembled:

    gcc    idle, steer the Maxwell fields to a constant E, hold, steer back
    strip  bend in a background magnetic field, kick with an electrostatic
           pulse charged inside the strip, bend again
"""
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from config import GeometryDefaults, ReferenceDefaults
from geometry import BallUnion, ControlSet, Strip, census_samples, check_gcc
from particles import ForceSpec, SpectralSeriesField, constant_scalar, perp, relativistic_velocity, steps, step_count
from spectral import (EMState, GridSpec, ScalarField, SourceMoments, VectorField, check_charge_conservation,
                      check_zero_mean_current, evolve_maxwell, poisson_hat, real_values, spectral_coeffs,
                      uniform_times)
from utils import (CensusFailure, ConstructionError, GeometryError, HodgeObstructionError, MomentError,
                   SteeringError, get_logger, map_chunks, smoothstep)

from .maxwell_control import ControlBasis, SteeringProblem, SteeringResult, constant_field_problem, solve_steering

logger = get_logger(__name__)

# exp(-1/q) underflows to zero below this q
_EDGE = 1.0 / 745.0

PLAN_MODES = ("idle", "maxwell-steer-up", "hold-constant-E", "maxwell-steer-down", "poisson-accelerate",
              "bend-wait")


# ========== Velocity Bumps ==========

def _bump_derivatives(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """beta = exp(-1/(1 - |v|^2)) with its gradient (..., 2) and Hessian (..., 2, 2)."""
    v = np.asarray(v, dtype=np.float64)
    r2 = np.sum(v * v, axis=-1)
    inside = r2 < 1.0 - _EDGE
    q = np.where(inside, 1.0 - r2, 1.0)
    beta = np.where(inside, np.exp(-1.0 / q), 0.0)
    g = -2.0 / q ** 2
    grad = (beta * g)[..., np.newaxis] * v
    outer = v[..., :, np.newaxis] * v[..., np.newaxis, :]
    hess = beta[..., np.newaxis, np.newaxis] * ((g * g - 8.0 / q ** 3)[..., np.newaxis, np.newaxis] * outer
                                                + g[..., np.newaxis, np.newaxis] * np.eye(2))
    return beta, grad, hess


@dataclass
class BumpProfile:
    """
    Z = beta / int beta and Zi = scale * d beta / d v_i on the unit ball.
    int Z v_hat and int Zi vanish by symmetry; scale makes int Zi v_hat = e_i
    at the profile's speed of light. Zi changes sign, so it is not a density.
    """
    c: float
    quad_n: int
    mass: float
    scale: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    residuals: Dict[str, float] = field(default_factory=dict)

    def values(self, v: np.ndarray) -> np.ndarray:
        """(3, ...) samples of Z, Z1, Z2."""
        beta, grad, _ = _bump_derivatives(v)
        return np.stack([beta / self.mass, self.scale * grad[..., 0], self.scale * grad[..., 1]])

    def gradients(self, v: np.ndarray) -> np.ndarray:
        """(3, ..., 2) velocity gradients of Z, Z1, Z2."""
        _, grad, hess = _bump_derivatives(v)
        return np.stack([grad / self.mass, self.scale * hess[..., 0, :], self.scale * hess[..., 1, :]])

    def moments(self) -> Tuple[np.ndarray, np.ndarray]:
        """Quadrature density (3,) and current (3, 2) of Z, Z1, Z2."""
        vals = self.values(self.nodes)
        v_hat = relativistic_velocity(self.nodes, self.c)
        return vals @ self.weights, (vals * self.weights) @ v_hat

    def to_dict(self) -> Dict[str, Any]:
        return {"c": self.c if math.isfinite(self.c) else None, "quad_n": self.quad_n, "mass": self.mass,
                "scale": self.scale, "residuals": dict(self.residuals)}


def _polar_quadrature(quad_n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre in r on (0, 1) times a uniform, reflection-symmetric angular grid."""
    x, w = leggauss(quad_n)
    r, wr = 0.5 * (x + 1.0), 0.5 * w
    phi = 2.0 * np.pi * (np.arange(quad_n) + 0.5) / quad_n
    rr, pp = np.meshgrid(r, phi, indexing="ij")
    nodes = np.stack([rr * np.cos(pp), rr * np.sin(pp)], axis=-1).reshape(-1, 2)
    weights = np.outer(wr * r, np.full(quad_n, 2.0 * np.pi / quad_n)).ravel()
    return nodes, weights


def make_bumps(quad_n: int = None, c: float = math.inf, tolerance: float = None) -> BumpProfile:
    quad_n = ReferenceDefaults.QUAD_N if quad_n is None else int(quad_n)
    tolerance = ReferenceDefaults.MOMENT_TOLERANCE if tolerance is None else tolerance
    if quad_n < ReferenceDefaults.QUAD_N:
        raise MomentError(f"velocity quadrature needs at least {ReferenceDefaults.QUAD_N}^2 nodes, "
                          f"got {quad_n}^2", math.inf)

    nodes, weights = _polar_quadrature(quad_n)
    beta, grad, _ = _bump_derivatives(nodes)
    mass = float(weights @ beta)
    raw = float(weights @ (grad[:, 0] * relativistic_velocity(nodes, c)[:, 0]))
    if mass <= 0 or raw == 0:
        raise MomentError("degenerate velocity quadrature", math.inf)

    profile = BumpProfile(float(c), quad_n, mass, 1.0 / raw, nodes, weights)
    density, current = profile.moments()
    profile.residuals = {
        "Z_density": float(abs(density[0] - 1.0)),
        "Z_current": float(np.max(np.abs(current[0]))),
        "Zi_density": float(np.max(np.abs(density[1:]))),
        "Zi_current": float(np.max(np.abs(current[1:] - np.eye(2)))),
    }
    worst = max(profile.residuals.values())
    if worst > tolerance:
        raise MomentError(f"bump moment residual {worst:.3e} exceeds {tolerance:.1e}", worst)
    logger.info(f"Velocity bumps ready: {quad_n}^2 nodes, c={c}, worst moment residual {worst:.2e}")
    return profile


@dataclass
class KineticProfile:
    """f(x, v) = sum_a coeffs[a](x) Z_a(v) with node coefficients (..., 3, n, n) ordered rho, j1, j2."""
    coeffs: np.ndarray
    bumps: BumpProfile = field(repr=False)

    def density(self) -> np.ndarray:
        mass, _ = self.bumps.moments()
        return np.einsum("a,...axy->...xy", mass, self.coeffs)

    def current(self) -> np.ndarray:
        _, cur = self.bumps.moments()
        return np.einsum("ai,...axy->...ixy", cur, self.coeffs)

    def values(self, v: np.ndarray) -> np.ndarray:
        """(..., Q, n, n) samples at velocities v (Q, 2)."""
        basis = self.bumps.values(np.asarray(v, dtype=np.float64).reshape(-1, 2))
        return np.einsum("aq,...axy->...qxy", basis, self.coeffs)

    def outside_max(self, omega: ControlSet) -> float:
        outside = ~omega.mask(self.coeffs.shape[-1])
        if not outside.any():
            return 0.0
        return float(np.max(np.abs(self.coeffs[..., outside]), initial=0.0))


def lift_current(j: Union[VectorField, np.ndarray], bumps: BumpProfile) -> KineticProfile:
    """f = Z1 j1 + Z2 j2: zero density, current j."""
    values = j.values if isinstance(j, VectorField) else np.asarray(j, dtype=np.float64)
    zeros = np.zeros(values.shape[:-3] + (1,) + values.shape[-2:])
    return KineticProfile(np.concatenate([zeros, values], axis=-3), bumps)


def lift_moments(rho: np.ndarray, j: np.ndarray, bumps: BumpProfile) -> KineticProfile:
    """f = Z rho + Z1 j1 + Z2 j2."""
    rho = np.asarray(rho, dtype=np.float64)
    return KineticProfile(np.concatenate([rho[..., np.newaxis, :, :], np.asarray(j, dtype=np.float64)], axis=-3),
                          bumps)


# ========== Smooth Cutoffs ==========

def time_bump(t, tau: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """chi, chi', chi'' of exp(1 - 1/(1 - s^2)), s = 2 t / tau - 1; zero off (0, tau)."""
    t = np.asarray(t, dtype=np.float64)
    s = 2.0 * t / tau - 1.0
    q = 1.0 - s * s
    inside = q > _EDGE
    q = np.where(inside, q, 1.0)
    s = np.where(inside, s, 0.0)
    f = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
    g = -2.0 * s / q ** 2
    f1 = f * g
    f2 = f * (g * g - 2.0 / q ** 2 - 8.0 * s * s / q ** 3)
    return f, f1 * (2.0 / tau), f2 * (4.0 / tau ** 2)


# ========== Accelerating Field ==========

@dataclass
class AccelReport:
    curl: float
    div: float
    min_norm: float
    max_norm: float
    flux: float
    circulation: float
    n_points: int
    tolerance: float = ReferenceDefaults.ACCEL_TOLERANCE
    flux_tolerance: float = ReferenceDefaults.FLUX_TOLERANCE

    @property
    def failures(self) -> List[str]:
        out = []
        if self.curl > self.tolerance:
            out.append("curl")
        if self.div > self.tolerance:
            out.append("div")
        if not self.min_norm > 0:
            out.append("vanishing")
        if self.flux > self.flux_tolerance:
            out.append("flux")
        if self.circulation > self.flux_tolerance:
            out.append("circulation")
        return out

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> Dict[str, Any]:
        return {"curl": self.curl, "div": self.div, "min_norm": self.min_norm, "max_norm": self.max_norm,
                "flux": self.flux, "circulation": self.circulation, "n_points": self.n_points,
                "failures": self.failures, "passed": self.passed}


class AccelField:
    """
    Potential phi = A exp(k U(v)) cos(2 pi d.x) of a strip with direction d,
    k = 2 pi |d| and v the signed offset from the nearest strand. U(v) = v off
    the core band |v| < d_core (shifted by one strand spacing on the negative
    side) and folds back smoothly inside it, so grad phi is harmonic outside
    the band and its charge Laplace(phi) lives in the band. A is set so that
    min |grad phi| off the band equals `amplitude`.
    """

    def __init__(self, strip: Strip, d: float, amplitude: float):
        spacing = strip.spacing
        if not 0 < d < 0.25 * spacing:
            raise ConstructionError(f"core half-width {d} must lie in (0, {0.25 * spacing:.6g})")
        if not d < strip.half_width:
            raise ConstructionError(f"core half-width {d} must stay inside the strip (half-width {strip.half_width})")
        if not amplitude > 0:
            raise ConstructionError(f"field amplitude must be positive, got {amplitude}")
        self.strip = strip
        self.d = float(d)
        self.amplitude = float(amplitude)
        self.k = 2.0 * np.pi * strip.norm
        self.A = self.amplitude / (self.k * math.exp(self.k * self.d))
        self.report: Optional[AccelReport] = None

    def _profile(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        sp, d = self.strip.spacing, self.d
        band = np.abs(v) < d
        S, S1, S2 = smoothstep((v + d) / (2.0 * d))
        U = np.where(band, v + sp * (1.0 - S), np.where(v >= d, v, v + sp))
        U1 = np.where(band, 1.0 - sp / (2.0 * d) * S1, 1.0)
        U2 = np.where(band, -sp / (4.0 * d * d) * S2, 0.0)
        return U, U1, U2, band

    def _parts(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        v = self.strip.transverse(x)
        theta = 2.0 * np.pi * (x @ np.asarray(self.strip.direction, dtype=np.float64))
        U, U1, U2, band = self._profile(v)
        return self.A * np.exp(self.k * U), theta, U1, U2, band

    def potential(self, x: np.ndarray) -> np.ndarray:
        amp, theta, _, _, _ = self._parts(x)
        return amp * np.cos(theta)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        amp, theta, U1, _, _ = self._parts(x)
        k = self.k
        return ((amp * k * U1 * np.cos(theta))[..., np.newaxis] * self.strip.normal
                - (amp * k * np.sin(theta))[..., np.newaxis] * self.strip.tangent)

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        """Exactly zero off the core band."""
        amp, theta, U1, U2, band = self._parts(x)
        k = self.k
        bracket = np.where(band, k * k * U1 * U1 + k * U2 - k * k, 0.0)
        return amp * np.cos(theta) * bracket

    def stream(self, x: np.ndarray) -> np.ndarray:
        """psi with grad_perp psi = grad phi; valid off the core band."""
        amp, theta, _, _, _ = self._parts(x)
        return -amp * np.sin(theta)

    def stream_gradient(self, x: np.ndarray) -> np.ndarray:
        amp, theta, U1, _, _ = self._parts(x)
        k = self.k
        return -((amp * k * U1 * np.sin(theta))[..., np.newaxis] * self.strip.normal
                 + (amp * k * np.cos(theta))[..., np.newaxis] * self.strip.tangent)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.gradient(x)


def far_line(strip: Strip, count: int) -> np.ndarray:
    """`count` equispaced points on the closed geodesic midway between strands."""
    s = strip.norm * np.arange(count) / count
    base = strip.offset + 0.5 * strip.spacing * strip.normal
    return np.mod(base + s[:, np.newaxis] * strip.tangent, 1.0)


def _derivative(field_fn: Callable, pts: np.ndarray, axis: int, h: float) -> np.ndarray:
    e = np.zeros(2)
    e[axis] = h
    return (-field_fn(pts + 2 * e) + 8.0 * field_fn(pts + e) - 8.0 * field_fn(pts - e)
            + field_fn(pts - 2 * e)) / (12.0 * h)


def check_accel_field(field_fn: Callable[[np.ndarray], np.ndarray], strip: Strip, d: float,
                      n: int = None, h: float = None) -> AccelReport:
    """
    Curl and divergence of w by fourth-order differences at collocation points
    off the core band (relative to max |w|), min |w| there, and the flux and
    circulation of w along the far line (relative to max |w| times its length).
    """
    n = ReferenceDefaults.COLLOCATION if n is None else n
    h = ReferenceDefaults.FD_STEP if h is None else h
    coords = (np.arange(n) + 0.5) / n
    g1, g2 = np.meshgrid(coords, coords, indexing="ij")
    pts = np.stack([g1.ravel(), g2.ravel()], axis=-1)
    pts = pts[np.abs(strip.transverse(pts)) > d + 3.0 * h]
    if pts.shape[0] == 0:
        raise ConstructionError("no collocation points outside the core band")

    w = field_fn(pts)
    norms = np.linalg.norm(w, axis=-1)
    scale = max(float(norms.max()), 1e-300)
    d1 = _derivative(field_fn, pts, 0, h)
    d2 = _derivative(field_fn, pts, 1, h)
    curl = float(np.max(np.abs(d1[:, 1] - d2[:, 0]))) / scale
    div = float(np.max(np.abs(d1[:, 0] + d2[:, 1]))) / scale

    line = far_line(strip, 4 * n)
    wl = field_fn(line)
    length = strip.norm
    flux = abs(float(np.mean(wl @ strip.normal))) * length / (scale * length)
    circulation = abs(float(np.mean(wl @ strip.tangent))) * length / (scale * length)
    return AccelReport(curl, div, float(norms.min()), scale, flux, circulation, int(pts.shape[0]))


def build_accel_field(strip: Strip, amplitude: float, d: float = None, n_points: int = None) -> AccelField:
    d = ReferenceDefaults.HD_FRACTION * strip.half_width if d is None else d
    accel = AccelField(strip, d, amplitude)
    report = check_accel_field(accel, strip, d, n_points)
    accel.report = report
    if not report.passed:
        raise ConstructionError(f"accelerating field fails {', '.join(report.failures)}: {report.to_dict()}")
    logger.info(f"Accelerating field: min |w| {report.min_norm:.4g}, curl {report.curl:.2e}, "
                f"div {report.div:.2e}, flux {report.flux:.2e}")
    return accel


# ========== Charge Correction ==========

def _unit_leg(xi: np.ndarray, coeffs: np.ndarray, start: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """
    int_0^1 J grad theta(start + s delta) . delta ds per point, theta = sum c_k e^{i xi.x},
    J the quarter turn (a, b) -> (-b, a).
    """
    a = delta @ xi.T                                         # (P, M)
    j_xi = np.stack([-xi[:, 1], xi[:, 0]], axis=-1)
    weight = 1j * (delta @ j_xi.T)
    small = np.abs(a) < 1e-8
    safe = np.where(small, 1.0, a)
    integral = np.where(small, 1.0 + 0.5j * a, (np.exp(1j * safe) - 1.0) / (1j * safe))
    return np.real(np.sum(coeffs * weight * np.exp(1j * (start @ xi.T)) * integral, axis=-1))


def _lattice_shift(p: int, q: int) -> Tuple[int, int]:
    """Integers (m1, m2) with -q m1 + p m2 = 1."""
    old_r, r = -q, p
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r != 0:
        quot = old_r // r
        old_r, r = r, old_r - quot * r
        old_s, s = s, old_s - quot * s
        old_t, t = t, old_t - quot * t
    return old_s * old_r, old_t * old_r


class SpectralPotential:
    """
    theta with Laplace(theta) = h on the truncated modes and a stream function
    psi found by integrating J grad theta from a base point of the far line,
    along the line and then straight across to the point. psi is meaningful
    where that path avoids the support of h.
    """

    def __init__(self, grid: GridSpec, h_hat: np.ndarray, strip: Strip):
        self.grid = grid
        self.strip = strip
        denom = np.where(grid.nonzero, grid.xi_norm ** 2, 1.0)
        self.theta_hat = np.where(grid.nonzero, -h_hat / denom, 0.0)
        self._xi = np.stack([grid.xi[0].ravel(), grid.xi[1].ravel()], axis=-1)
        self._c = self.theta_hat.ravel()
        self.base = strip.offset + 0.5 * strip.spacing * strip.normal
        self._shift = np.array(_lattice_shift(*strip.direction), dtype=np.float64)

    def _phases(self, x: np.ndarray) -> np.ndarray:
        return np.exp(1j * (np.asarray(x, dtype=np.float64).reshape(-1, 2) @ self._xi.T))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.real(self._phases(x) @ (1j * self._xi * self._c[:, np.newaxis]))

    def laplacian(self, x: np.ndarray) -> np.ndarray:
        return np.real(self._phases(x) @ (-np.sum(self._xi ** 2, axis=-1) * self._c))

    def stream_gradient(self, x: np.ndarray) -> np.ndarray:
        g = self.gradient(x)
        return np.stack([-g[:, 1], g[:, 0]], axis=-1)

    def stream(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        strip = self.strip
        v = strip.transverse(x)
        across = np.where(v >= 0, 0.5 * strip.spacing - v, -(0.5 * strip.spacing + v))
        foot = x + across[:, np.newaxis] * strip.normal
        delta = foot - self.base
        # lattice vector absorbing the whole strands between base and foot
        strands = np.round(delta @ strip.normal * strip.norm)
        m = strands[:, np.newaxis] * self._shift
        s = np.mod((delta - m) @ strip.tangent, strip.norm)
        along = s[:, np.newaxis] * strip.tangent
        base = np.broadcast_to(self.base, x.shape)
        return (_unit_leg(self._xi, self._c, base, along)
                + _unit_leg(self._xi, self._c, base + along, -across[:, np.newaxis] * strip.normal))


@dataclass
class ChargeCorrection:
    u: np.ndarray
    alpha: float
    div_residual: float
    outside_max: float
    mean: float
    inner: float
    outer: float

    def projected_hat(self, grid: GridSpec, h_hat: np.ndarray) -> np.ndarray:
        """Spectral u with i xi . u_hat = h_hat on every nonzero mode and zero mean."""
        u_hat = spectral_coeffs(grid, self.u)
        denom = np.where(grid.nonzero, grid.xi_norm ** 2, 1.0)
        gap = h_hat - 1j * (grid.xi[0] * u_hat[0] + grid.xi[1] * u_hat[1])
        u_hat = u_hat - 1j * grid.xi * gap / denom
        return np.where(grid.nonzero, u_hat, 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"alpha": self.alpha, "div_residual": self.div_residual, "outside_max": self.outside_max,
                "mean": self.mean, "inner": self.inner, "outer": self.outer}


def _far_line_flux(potential, strip: Strip, count: int = 256) -> Tuple[float, float]:
    g = potential.gradient(far_line(strip, count))
    scale = max(1.0, float(np.max(np.linalg.norm(g, axis=-1))) * strip.norm)
    return float(np.mean(g @ strip.normal)) * strip.norm, scale


def charge_correction(h: Union[ScalarField, AccelField], strip: Strip, grid: GridSpec = None,
                      inner: float = None, outer: float = None) -> ChargeCorrection:
    """
    Field u supported in the strip with div u = h:

        u = (1 - eta) grad theta - psi grad_perp eta,   Laplace(theta) = h,

    with grad_perp psi = grad theta off the support of h and eta a cutoff equal
    to 0 within `inner` of the strand and 1 from `outer` on. h is either a grid
    field or the charge of an accelerating field, in which case theta is its
    potential and every term is exact at the nodes.
    """
    hw = strip.half_width
    inner = ReferenceDefaults.INNER_FRACTION * hw if inner is None else inner
    outer = ReferenceDefaults.OUTER_FRACTION * hw if outer is None else outer
    if isinstance(h, ScalarField):
        grid = h.grid
        mean = float(h.values.mean())
        scale = max(1.0, float(np.max(np.abs(h.values))))
        if abs(mean) > ReferenceDefaults.ZM_TOLERANCE * scale:
            raise ConstructionError(f"charge to correct has nonzero mean {mean:.3e}")
        potential = SpectralPotential(grid, spectral_coeffs(grid, h.values), strip)
        core = 0.0
    else:
        if grid is None:
            raise ConstructionError("a grid is needed to sample the correction of an accelerating field")
        potential = h
        core = h.d
    if not core < inner < outer <= hw:
        raise ConstructionError(f"cutoff radii must satisfy {core:.4g} < inner={inner:.4g} < outer={outer:.4g} "
                                f"<= half-width {hw:.4g}")

    alpha, flux_scale = _far_line_flux(potential, strip)
    if abs(alpha) > ReferenceDefaults.HODGE_TOLERANCE * flux_scale:
        raise HodgeObstructionError(f"grad theta has flux {alpha:.4g} across the far line", alpha)

    pts = grid.nodes.reshape(2, -1).T
    v = strip.transverse(pts)
    width = outer - inner
    eta, deta, _ = smoothstep((np.abs(v) - inner) / width)
    grad_eta = (deta / width * np.sign(v))[:, np.newaxis] * strip.normal
    perp_eta = np.stack([grad_eta[:, 1], -grad_eta[:, 0]], axis=-1)
    grad_theta = potential.gradient(pts)
    ramp = eta > 0
    psi = np.zeros(pts.shape[0])
    dpsi = np.zeros_like(pts)
    if ramp.any():
        psi[ramp] = potential.stream(pts[ramp])
        dpsi[ramp] = potential.stream_gradient(pts[ramp])

    u = (1.0 - eta)[:, np.newaxis] * grad_theta - psi[:, np.newaxis] * perp_eta
    lap = potential.laplacian(pts)
    div = (1.0 - eta) * lap - np.sum(grad_eta * grad_theta, axis=-1) - np.sum(dpsi * perp_eta, axis=-1)
    residual = float(np.max(np.abs(div - lap))) / max(1.0, float(np.max(np.abs(lap))))
    outside = strip.depth(pts) < 0
    outside_max = float(np.max(np.abs(u[outside]), initial=0.0))
    u = u.T.reshape(2, grid.n, grid.n)
    mean = float(np.max(np.abs(u.mean(axis=(1, 2)))))
    logger.debug(f"Charge correction: div residual {residual:.2e}, outside {outside_max:.2e}, mean {mean:.2e}")
    return ChargeCorrection(u, alpha, residual, outside_max, mean, inner, outer)


# ========== Plans ==========

@dataclass
class PlanSegment:
    """One stage of a plan on [t0, t1]; callables take global time."""
    mode: str
    t0: float
    t1: float
    E: Optional[Callable[[float, np.ndarray], np.ndarray]] = field(default=None, repr=False)
    b: Optional[Callable[[float, np.ndarray], np.ndarray]] = field(default=None, repr=False)
    moments: Optional[Callable[[float], Tuple[np.ndarray, np.ndarray]]] = field(default=None, repr=False)
    nodes: Optional[Callable[[float], np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in PLAN_MODES:
            raise ConstructionError(f"unknown plan segment mode '{self.mode}'")

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def to_dict(self) -> Dict[str, Any]:
        return {"mode": self.mode, "t0": self.t0, "t1": self.t1}


@dataclass
class ReferencePlan:
    case: str
    grid: GridSpec
    c: float
    segments: List[PlanSegment]
    bumps: BumpProfile = field(repr=False)
    checks: Dict[str, Any] = field(default_factory=dict)
    census: Optional["CensusResult"] = None
    is_reversed: bool = False
    b_background: float = 0.0

    @property
    def T(self) -> float:
        return self.segments[-1].t1

    def segment_at(self, t: float) -> PlanSegment:
        for seg in self.segments:
            if t <= seg.t1 + 1e-12:
                return seg
        return self.segments[-1]

    def field_E(self, t: float, x: np.ndarray) -> np.ndarray:
        seg = self.segment_at(t)
        if seg.E is None:
            return np.zeros(np.shape(x))
        return seg.E(t, x)

    def field_b(self, t: float, x: np.ndarray) -> np.ndarray:
        seg = self.segment_at(t)
        if seg.b is None:
            return np.zeros(np.shape(x)[:-1])
        return seg.b(t, x)

    @property
    def force(self) -> ForceSpec:
        return ForceSpec(self.c, self.field_E, self.field_b)

    def moments(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        seg = self.segment_at(t)
        m = self.grid.m
        if seg.moments is None:
            return np.zeros((m, m), dtype=np.complex128), np.zeros((2, m, m), dtype=np.complex128)
        return seg.moments(t)

    def source_on(self, times: np.ndarray) -> SourceMoments:
        pairs = [self.moments(float(t)) for t in times]
        return SourceMoments(self.grid, times, np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))

    def profile_at(self, t: float) -> KineticProfile:
        seg = self.segment_at(t)
        n = self.grid.n
        coeffs = np.zeros((3, n, n)) if seg.nodes is None else seg.nodes(t)
        return KineticProfile(coeffs, self.bumps)

    def to_dict(self) -> Dict[str, Any]:
        return {"case": self.case, "c": self.c if math.isfinite(self.c) else None, "T": self.T,
                "reversed": self.is_reversed, "b_background": self.b_background,
                "segments": [s.to_dict() for s in self.segments],
                "bumps": self.bumps.to_dict(), "checks": self.checks,
                "census": None if self.census is None else self.census.to_dict()}


def reverse_plan(plan: ReferencePlan) -> ReferencePlan:
    """
    Time-reversed plan on [0, T]: fields E(T - t), b -> -b(T - t), moments
    (rho, -j)(T - t) and profile f(T - t, x, -v).
    """
    T = plan.T
    segments = []
    for seg in reversed(plan.segments):
        E = None if seg.E is None else (lambda t, x, f=seg.E: f(T - t, x))
        b = None if seg.b is None else (lambda t, x, f=seg.b: -f(T - t, x))
        if seg.moments is None:
            moments = None
        else:
            def moments(t, f=seg.moments):
                rho, j = f(T - t)
                return rho, -j
        if seg.nodes is None:
            nodes = None
        else:
            def nodes(t, f=seg.nodes):
                coeffs = np.array(f(T - t), dtype=np.float64)
                coeffs[1:] *= -1.0
                return coeffs
        segments.append(PlanSegment(seg.mode, T - seg.t1, T - seg.t0, E, b, moments, nodes))
    return ReferencePlan(plan.case, plan.grid, plan.c, segments, plan.bumps,
                         {"reversed_from": plan.case}, None, not plan.is_reversed, -plan.b_background)


def check_reversibility(plan: ReferencePlan, x: np.ndarray, v: np.ndarray, dt: float) -> float:
    """Run (x, v) forward, reverse the velocity, run the reversed plan; returns the max mismatch."""
    for _, xf, vf in steps(x, v, plan.force, 0.0, plan.T, dt):
        pass
    back = reverse_plan(plan)
    for _, xb, vb in steps(xf, -vf, back.force, 0.0, plan.T, dt):
        pass
    return float(max(np.max(np.abs(xb - np.asarray(x))), np.max(np.abs(vb + np.asarray(v)))))


# ========== Transport Source ==========

def transport_source(plan: ReferencePlan, t: float, velocities: np.ndarray, dt: float = None) -> np.ndarray:
    """
    G = d_t f + v_hat . grad_x f + F . grad_v f at the grid nodes for each
    velocity (Q, n, n): centred differences in t and x, exact in v.
    """
    grid = plan.grid
    n, h = grid.n, 1.0 / grid.n
    dt = 1e-4 * max(plan.T, 1.0) if dt is None else dt
    vel = np.asarray(velocities, dtype=np.float64).reshape(-1, 2)
    coeffs = plan.profile_at(t).coeffs
    dcoeffs = (plan.profile_at(t + dt).coeffs - plan.profile_at(t - dt).coeffs) / (2.0 * dt)
    grad_x = np.stack([(np.roll(coeffs, -1, axis=-2) - np.roll(coeffs, 1, axis=-2)) / (2.0 * h),
                       (np.roll(coeffs, -1, axis=-1) - np.roll(coeffs, 1, axis=-1)) / (2.0 * h)])

    basis = plan.bumps.values(vel)
    basis_grad = plan.bumps.gradients(vel)
    v_hat = relativistic_velocity(vel, plan.c)
    pts = grid.nodes.reshape(2, -1).T
    E = plan.field_E(t, pts).reshape(n, n, 2)
    b = plan.field_b(t, pts).reshape(n, n)

    term_t = np.einsum("aq,axy->qxy", basis, dcoeffs)
    term_x = np.einsum("aq,qi,iaxy->qxy", basis, v_hat, grad_x)
    electric = np.einsum("xyi,aqi->aqxy", E, basis_grad)
    magnetic = np.einsum("qi,aqi->aq", perp(v_hat), basis_grad)
    term_v = np.einsum("axy,aqxy->qxy", coeffs, electric) + \
        np.einsum("axy,aq,xy->qxy", coeffs, magnetic, b)
    return term_t + term_x + term_v


def _sample_velocities() -> np.ndarray:
    r = np.array([0.25, 0.5, 0.75])
    phi = 2.0 * np.pi * np.arange(8) / 8
    rr, pp = np.meshgrid(r, phi, indexing="ij")
    return np.stack([rr * np.cos(pp), rr * np.sin(pp)], axis=-1).reshape(-1, 2)


def source_support(plan: ReferencePlan, omega: ControlSet, times: Sequence[float]) -> Tuple[float, float]:
    """(max |G|, max |G| at nodes at least one cell outside omega) over the given times."""
    grid = plan.grid
    pts = grid.nodes.reshape(2, -1).T
    far = (omega.depth(pts) < -1.0 / grid.n).reshape(grid.n, grid.n)
    total, outside = 0.0, 0.0
    vel = _sample_velocities()
    for t in times:
        G = transport_source(plan, float(t), vel)
        total = max(total, float(np.max(np.abs(G))))
        if far.any():
            outside = max(outside, float(np.max(np.abs(G[:, far]))))
    return total, outside


# ========== Census ==========

@dataclass
class CensusResult:
    window: Tuple[float, float]
    samples: np.ndarray
    first_hit: np.ndarray
    speed_floor: float

    header = ["x1", "x2", "angle", "speed", "first_hit"]

    @property
    def hit_fraction(self) -> float:
        return float(np.mean(np.isfinite(self.first_hit))) if self.first_hit.size else 1.0

    @property
    def passed(self) -> bool:
        return bool(np.all(np.isfinite(self.first_hit)))

    @property
    def worst(self) -> Optional[Dict[str, Any]]:
        if self.first_hit.size == 0:
            return None
        missed = np.flatnonzero(~np.isfinite(self.first_hit))
        i = int(missed[0]) if missed.size else int(np.argmax(self.first_hit))
        s = self.samples[i]
        t = self.first_hit[i]
        return {"x": [float(s[0]), float(s[1])], "v": [float(s[3] * math.cos(s[2])), float(s[3] * math.sin(s[2]))],
                "first_hit": float(t) if math.isfinite(t) else None}

    def rows(self):
        for s, t in zip(self.samples, self.first_hit):
            yield (s[0], s[1], s[2], s[3], t)

    def to_dict(self) -> Dict[str, Any]:
        return {"window": list(self.window), "n_samples": int(self.samples.shape[0]),
                "hit_fraction": self.hit_fraction, "speed_floor": self.speed_floor, "passed": self.passed,
                "worst": self.worst}


@dataclass
class PlanCensus:
    """Chord-by-chord record of entries into a target set at speed above a floor."""
    samples: np.ndarray
    times: np.ndarray
    hits: np.ndarray
    speed_floor: float
    target: Dict[str, Any]

    def evaluate(self, lo: float, hi: float) -> CensusResult:
        eps = 1e-9 * max(1.0, abs(hi))
        valid = (self.times[:-1] >= lo - eps) & (self.times[1:] <= hi + eps)
        starts = self.times[:-1][valid]
        inside = self.hits[valid]
        any_hit = inside.any(axis=0)
        first = np.where(any_hit, starts[np.argmax(inside, axis=0)] if starts.size else np.inf, np.inf)
        return CensusResult((lo, hi), self.samples, first, self.speed_floor)


def run_census(force: ForceSpec, samples: np.ndarray, t0: float, t1: float, dt: float, target: ControlSet,
               speed_floor: float, threads: int = 1) -> PlanCensus:
    """
    Integrate every (x1, x2, angle, speed) sample from t0 to t1 and record, per
    RK4 chord, whether it enters the target (shrunk by the chord sagitta) with
    |V| >= speed_floor at both ends.
    """
    target_in = target.eroded(GeometryDefaults.SAGITTA)
    count = step_count(t0, t1, dt)
    times = t0 + (t1 - t0) * np.arange(count + 1) / count

    def run_chunk(first, last):
        part = samples[first:last]
        x0 = part[:, 0:2]
        v0 = np.column_stack([part[:, 3] * np.cos(part[:, 2]), part[:, 3] * np.sin(part[:, 2])])
        rows = []
        prev_x, prev_speed = None, None
        for _, x, v in steps(x0, v0, force, t0, t1, dt):
            speed = np.linalg.norm(v, axis=-1)
            if prev_x is not None:
                delta = x - prev_x
                seg = np.linalg.norm(delta, axis=-1)
                direction = delta / np.maximum(seg, 1e-300)[:, np.newaxis]
                with np.errstate(divide="ignore", invalid="ignore"):
                    y = target_in.first_hit(np.mod(prev_x, 1.0), direction, seg)
                rows.append(np.isfinite(y) & (speed >= speed_floor) & (prev_speed >= speed_floor))
            prev_x, prev_speed = x, speed
        return np.array(rows, dtype=bool).reshape(count, last - first)

    parts = map_chunks(run_chunk, samples.shape[0], GeometryDefaults.CENSUS_CHUNK, threads)
    hits = np.concatenate(parts, axis=1) if parts else np.zeros((count, 0), dtype=bool)
    return PlanCensus(samples, times, hits, speed_floor, target.to_dict())


# ========== Strip Plan ==========

def _strip_segments(accel: AccelField, h0: np.ndarray, u0: np.ndarray, h0_hat: np.ndarray, u0_hat: np.ndarray,
                    b0: float, T0: float, T1: float) -> List[PlanSegment]:
    b = constant_scalar(b0)

    def E(t, x):
        chi, _, _ = time_bump(t - T0, T0)
        return float(chi) * accel.gradient(x)

    def moments(t):
        chi, dchi, _ = time_bump(t - T0, T0)
        return float(chi) * h0_hat, -float(dchi) * u0_hat

    def nodes(t):
        chi, dchi, _ = time_bump(t - T0, T0)
        return np.concatenate([float(chi) * h0[np.newaxis], -float(dchi) * u0])

    return [PlanSegment("bend-wait", 0.0, T0, None, b),
            PlanSegment("poisson-accelerate", T0, 2.0 * T0, E, b, moments, nodes),
            PlanSegment("bend-wait", 2.0 * T0, 2.0 * T0 + T1, None, b)]


def calibrate_wait(census: PlanCensus, T0: float, T1_max: float, window: Tuple[float, float] = None,
                   ladder: float = None) -> Tuple[float, CensusResult]:
    """
    Shortest wait T1 on the ladder T0, T0 * r, T0 * r^2, ... (<= T1_max) for
    which every sample hits during [a T, b T], T = 2 T0 + T1.
    """
    lo_frac, hi_frac = ReferenceDefaults.WINDOW_STRIP if window is None else window
    ladder = ReferenceDefaults.WAIT_LADDER if ladder is None else ladder
    T1 = T0
    result = None
    while T1 <= T1_max * (1 + 1e-12):
        T = 2.0 * T0 + T1
        result = census.evaluate(lo_frac * T, hi_frac * T)
        if result.passed:
            logger.info(f"Wait calibrated: T1={T1:.4g} (T={T:.4g})")
            return T1, result
        T1 *= ladder
    worst = None if result is None else result.worst
    raise CensusFailure(f"no wait up to {T1_max} brings every sample into the target", worst)


def maxwell_poisson_deviation(plan: ReferencePlan, c: float, b0: float, samples: np.ndarray, dt: float,
                              target: Optional[ControlSet] = None, speed_floor: float = 0.0) -> Dict[str, Any]:
    """
    Characteristics under the Maxwell fields generated by the plan's moments
    (started from E = 0, B = c b0) against those under the Poisson field of the
    same charge plus the background b0. Returns the sup position deviation and,
    with a target, the Maxwell-driven hit fraction in the outer window.
    """
    grid = plan.grid
    times = uniform_times(plan.T, dt)
    src = plan.source_on(times)
    traj = evolve_maxwell(EMState.zero(grid, c, 0.0, b_mean=c * b0), src)
    maxwell = ForceSpec(c, SpectralSeriesField(grid, times, traj.E_hat),
                        SpectralSeriesField(grid, times, traj.B_hat, scale=1.0 / c))
    poisson = ForceSpec(c, SpectralSeriesField(grid, times, poisson_hat(grid, src.rho_hat)), constant_scalar(b0))

    x0 = samples[:, 0:2]
    v0 = np.column_stack([samples[:, 3] * np.cos(samples[:, 2]), samples[:, 3] * np.sin(samples[:, 2])])
    deviation = 0.0
    for (_, xm, _), (_, xp, _) in zip(steps(x0, v0, maxwell, 0.0, plan.T, dt), steps(x0, v0, poisson, 0.0, plan.T, dt)):
        deviation = max(deviation, float(np.max(np.linalg.norm(xm - xp, axis=-1), initial=0.0)))
    row = {"c": c, "deviation": deviation}
    if target is not None:
        lo, hi = ReferenceDefaults.WINDOW_MAXWELL
        census = run_census(maxwell, samples, 0.0, plan.T, dt, target, speed_floor)
        row["hit_fraction"] = census.evaluate(lo * plan.T, hi * plan.T).hit_fraction
    logger.info(f"Maxwell vs Poisson characteristics at c={c}: sup deviation {deviation:.4e}")
    return row


def c_sweep(plan: ReferencePlan, c_values: Sequence[float], b0: float, samples: np.ndarray, dt: float,
            target: Optional[ControlSet] = None, speed_floor: float = 0.0) -> Dict[str, Any]:
    rows = [maxwell_poisson_deviation(plan, float(c), b0, samples, dt, target, speed_floor) for c in c_values]
    ratios = []
    for a, b in zip(rows, rows[1:]):
        if a["deviation"] > 0:
            ratios.append({"c_from": a["c"], "c_to": b["c"], "ratio": b["deviation"] / a["deviation"]})
    halving = all(r["ratio"] <= ReferenceDefaults.DEVIATION_RATIO for r in ratios
                  if abs(r["c_to"] / r["c_from"] - 2.0) < 1e-9)
    return {"rows": rows, "ratios": ratios, "halving": halving}


def assemble_reference_strip(strip: Strip, grid: GridSpec, c: float, b0: float, x0: Sequence[float], r0: float,
                             bumps: BumpProfile = None, T0: float = 0.5, T1: Optional[float] = None,
                             T1_max: float = 8.0, dt: float = 2e-3, amplitude: float = 40.0,
                             census: Optional[Sequence[int]] = (6, 6, 4, 6), v_max: float = 4.0,
                             c_values: Sequence[float] = (), sweep_samples: int = None,
                             threads: int = 1) -> ReferencePlan:
    """
    bend-wait(T0) -> poisson-accelerate(T0) -> bend-wait(T1) in the background
    field b0. The charge rho = chi(t - T0) Laplace(phi) sits in the core band;
    the current -chi'(t - T0) u, u from charge_correction, keeps it conserved
    with zero mean. With census samples, T1 (unless given) is the shortest wait
    on the ladder that brings every sample into B(x0, r0/2) at speed >= 5.
    """
    bumps = make_bumps(c=c) if bumps is None else bumps
    accel = build_accel_field(strip, amplitude)
    correction = charge_correction(accel, strip, grid)
    pts = grid.nodes.reshape(2, -1).T
    h0 = accel.laplacian(pts).reshape(grid.n, grid.n)
    h0_hat = spectral_coeffs(grid, h0)
    raw_mean = float(h0.mean())
    h0_hat = np.where(grid.nonzero, h0_hat, 0.0)
    u0 = correction.u
    u0_hat = correction.projected_hat(grid, h0_hat)

    lcc_static = float(np.max(np.abs(real_values(grid, h0_hat - 1j * (grid.xi[0] * u0_hat[0]
                                                                      + grid.xi[1] * u0_hat[1])))))
    _, dchi, _ = time_bump(np.linspace(0.0, T0, 257), T0)
    lcc = lcc_static * float(np.max(np.abs(dchi))) / max(1.0, float(np.max(np.abs(h0))))
    checks: Dict[str, Any] = {"accel": accel.report.to_dict(), "correction": correction.to_dict(),
                              "charge_node_mean": raw_mean, "core_half_width": accel.d}

    target = BallUnion([(float(x0[0]), float(x0[1]), 0.5 * r0)])
    result = None
    wait = T1_max if T1 is None else T1
    plan = ReferencePlan("strip", grid, c, _strip_segments(accel, h0, u0, h0_hat, u0_hat, b0, T0, wait), bumps,
                         checks, b_background=b0)
    samples = None
    if census is not None:
        samples = census_samples(census, 0.0, v_max)
        record = run_census(plan.force, samples, 0.0, 2.0 * T0 + wait, dt, target,
                            ReferenceDefaults.STRIP_SPEED, threads)
        if T1 is None:
            wait, result = calibrate_wait(record, T0, T1_max)
        else:
            lo, hi = ReferenceDefaults.WINDOW_STRIP
            result = record.evaluate(lo * (2 * T0 + wait), hi * (2 * T0 + wait))
            if not result.passed:
                raise CensusFailure(f"{1 - result.hit_fraction:.2%} of samples miss the target with T1={wait}",
                                    result.worst)
    elif T1 is None:
        wait = T0
    plan.segments = _strip_segments(accel, h0, u0, h0_hat, u0_hat, b0, T0, wait)
    plan.census = result

    times = uniform_times(plan.T, dt)
    src = plan.source_on(times)
    zm = check_zero_mean_current(src)
    lcc_fd = check_charge_conservation(src) / max(1.0, float(np.max(np.abs(h0))))
    G_max, G_out = source_support(plan, strip, np.linspace(T0, 2 * T0, 7)[1:-1])
    ends = max(float(np.max(np.abs(plan.profile_at(0.0).coeffs))), float(np.max(np.abs(plan.profile_at(plan.T).coeffs))))
    fields_end = max(float(np.max(np.abs(plan.field_E(0.0, pts)))), float(np.max(np.abs(plan.field_E(plan.T, pts)))))
    checks.update({"lcc": lcc, "lcc_finite_difference": lcc_fd, "zero_mean_current": zm,
                   "profile_outside": plan.profile_at(1.5 * T0).outside_max(strip),
                   "source_max": G_max, "source_outside": G_out, "endpoint_profile": ends,
                   "endpoint_field": fields_end, "T1": wait})
    if lcc > ReferenceDefaults.LCC_TOLERANCE:
        raise ConstructionError(f"local charge conservation residual {lcc:.3e} above tolerance")
    if zm > ReferenceDefaults.ZM_TOLERANCE:
        raise ConstructionError(f"mean current {zm:.3e} above tolerance")
    if G_out > ReferenceDefaults.SUPPORT_TOLERANCE or checks["profile_outside"] > ReferenceDefaults.SUPPORT_TOLERANCE:
        raise ConstructionError(f"reference leaks outside the strip (source {G_out:.3e}, "
                                f"profile {checks['profile_outside']:.3e})")

    if c_values and samples is not None:
        count = ReferenceDefaults.SWEEP_SAMPLES if sweep_samples is None else sweep_samples
        subset = samples[np.linspace(0, samples.shape[0] - 1, min(count, samples.shape[0])).astype(int)]
        far_target = BallUnion([(float(x0[0]), float(x0[1]), r0)])
        checks["c_sweep"] = c_sweep(plan, c_values, b0, subset, dt, far_target, ReferenceDefaults.STRIP_SPEED)
    logger.info(f"Strip reference assembled: T={plan.T:.4g}, LCC {lcc:.2e}, ZM {zm:.2e}")
    return plan


# ========== GCC Plan ==========

def _series_segment(mode: str, t0: float, t1: float, grid: GridSpec, traj, c: float) -> PlanSegment:
    E_series = SpectralSeriesField(grid, traj.times, traj.E_hat)
    b_series = SpectralSeriesField(grid, traj.times, traj.B_hat, scale=1.0 / c)
    return PlanSegment(mode, t0, t1, lambda t, x: E_series(t - t0, x), lambda t, x: b_series(t - t0, x))


def _steering_segment(mode: str, t0: float, result: SteeringResult, grid: GridSpec, c: float) -> PlanSegment:
    seg = _series_segment(mode, t0, t0 + float(result.times[-1]), grid, result.trajectory, c)
    basis = result.basis
    hats = basis.element_hats(grid)
    values = basis.element_values(grid)

    def weights(t):
        local = np.clip(np.array([t - t0]), 0.0, result.times[-1])
        return result.coefficients @ basis.profile_values(local)[:, 0]

    def moments(t):
        return (np.zeros((grid.m, grid.m), dtype=np.complex128), np.tensordot(weights(t), hats, axes=1))

    def nodes(t):
        j = np.tensordot(weights(t), values, axes=1)
        return np.concatenate([np.zeros((1, grid.n, grid.n)), j])

    seg.moments, seg.nodes = moments, nodes
    return seg


def assemble_reference_gcc(omega: ControlSet, grid: GridSpec, c: float, T_parts: Sequence[float],
                           dt: float = 2e-3, k_ctrl: int = 1, reg: float = 1e-8, amplitude: float = 1.0,
                           bumps: BumpProfile = None, erosion: float = 0.02, hold_max: float = 8.0,
                           census: Optional[Sequence[int]] = (6, 6, 4, 6), v_max: float = 4.0,
                           gcc_params: Dict[str, Any] = None, basis_params: Dict[str, Any] = None,
                           tolerance: float = None, threads: int = 1) -> ReferencePlan:
    """
    pad -> idle(T1) -> steer (0, 0) to ((amplitude, 0), 0) in T2 -> hold for T3
    -> steer back in T2 -> pad, with pads of (T1 + 2 T2 + T3) / 7 so that the
    census window [T/9, 8T/9] is the core. The current of the reference is the
    steering current lifted by the Zi bumps. T3 = 0 means: hold until every
    census sample has entered omega shrunk by `erosion` at speed >= 4.
    """
    T1, T2, T3 = (float(t) for t in T_parts)
    if T2 <= 0:
        raise SteeringError("the steering horizon T2 must be positive")
    gcc = check_gcc(omega, threads=threads, **(gcc_params or {}))
    if not gcc.holds:
        raise GeometryError(f"omega fails the geometric control condition: {gcc.to_dict()['witness']}")
    bumps = make_bumps(c=c) if bumps is None else bumps

    basis = ControlBasis.build(grid, omega, T2, c, k_ctrl, **(basis_params or {}))
    support = basis.check_support(grid, omega)
    up = solve_steering(constant_field_problem(grid, c, amplitude, T2, dt, k_ctrl, reg), basis, omega, tolerance)
    if not up.passed:
        raise SteeringError(f"steer-up residual {up.relative_residual:.3e} above tolerance")
    held0 = EMState(0.0, up.simulated_final.E, up.simulated_final.B, c)

    def hold(length):
        return evolve_maxwell(held0, SourceMoments.zeros(grid, uniform_times(length, dt)))

    omega_in = omega.eroded(erosion)
    samples = census_samples(census, 0.0, v_max) if census is not None else None
    result = None
    floor = ReferenceDefaults.GCC_SPEED
    if T3 <= 0:
        if samples is None:
            raise ConstructionError("an automatic hold time needs census samples")
        long_hold = hold(hold_max)
        core = [PlanSegment("idle", 0.0, T1), _steering_segment("maxwell-steer-up", T1, up, grid, c),
                _series_segment("hold-constant-E", T1 + T2, T1 + T2 + hold_max, grid, long_hold, c)]
        trial = ReferencePlan("gcc", grid, c, core, bumps)
        record = run_census(trial.force, samples, 0.0, trial.T, dt, omega_in, floor, threads)
        scan = record.evaluate(0.0, trial.T)
        if not scan.passed:
            raise CensusFailure(f"{1 - scan.hit_fraction:.2%} of samples never reach omega' at speed >= {floor}",
                                scan.worst)
        latest = float(np.max(scan.first_hit, initial=0.0)) - (T1 + T2)
        T3 = max(2.0 * dt, math.ceil(ReferenceDefaults.HOLD_MARGIN * max(latest, 0.0) / dt) * dt)
        result = record.evaluate(0.0, T1 + T2 + T3)
    held = hold(T3)
    final = held.final
    down_problem = SteeringProblem(final.E, final.B, VectorField(grid, np.zeros((2, grid.n, grid.n))),
                                   ScalarField(grid, np.zeros((grid.n, grid.n))), T2, c, k_ctrl, reg, dt)
    down = solve_steering(down_problem, basis, omega, tolerance, reach=up.reach)
    if not down.passed:
        raise SteeringError(f"steer-down residual {down.relative_residual:.3e} above tolerance")

    core_length = T1 + 2.0 * T2 + T3
    pad = core_length / 7.0
    t = pad
    segments = [PlanSegment("idle", 0.0, pad), PlanSegment("idle", pad, pad + T1)]
    t += T1
    segments.append(_steering_segment("maxwell-steer-up", t, up, grid, c))
    t += T2
    segments.append(_series_segment("hold-constant-E", t, t + T3, grid, held, c))
    t += T3
    segments.append(_steering_segment("maxwell-steer-down", t, down, grid, c))
    t += T2
    segments.append(PlanSegment("idle", t, t + pad))
    plan = ReferencePlan("gcc", grid, c, segments, bumps)

    if samples is not None and result is None:
        record = run_census(plan.force, samples, pad, pad + core_length, dt, omega_in, floor, threads)
        result = record.evaluate(pad, pad + core_length)
        if not result.passed:
            raise CensusFailure(f"{1 - result.hit_fraction:.2%} of samples miss omega' in the window", result.worst)
    elif result is not None:
        result = CensusResult((pad, pad + core_length), result.samples, result.first_hit + pad, result.speed_floor)
    plan.census = result

    pts = grid.nodes.reshape(2, -1).T
    check_times = [pad + T1 + 0.5 * T2, pad + T1 + T2 + T3 + 0.5 * T2]
    G_max, G_out = source_support(plan, omega, check_times)
    profile_out = max(plan.profile_at(tt).outside_max(omega) for tt in check_times)
    src = plan.source_on(uniform_times(plan.T, dt))
    plan.checks = {
        "gcc": gcc.to_dict(), "control_support": support, "steer_up": up.to_dict(), "steer_down": down.to_dict(),
        "T_parts": [T1, T2, T3], "pad": pad,
        "end_field": {"E": float(np.max(np.abs(down.simulated_final.E.values))),
                      "B": float(np.max(np.abs(down.simulated_final.B.values)))},
        "start_field": {"E": float(np.max(np.abs(plan.field_E(0.0, pts)))),
                        "b": float(np.max(np.abs(plan.field_b(0.0, pts))))},
        "zero_mean_current": check_zero_mean_current(src),
        "lcc_finite_difference": check_charge_conservation(src),
        "source_max": G_max, "source_outside": G_out, "profile_outside": profile_out,
    }
    if G_out > ReferenceDefaults.SUPPORT_TOLERANCE or profile_out > ReferenceDefaults.SUPPORT_TOLERANCE:
        raise ConstructionError(f"reference leaks outside omega (source {G_out:.3e}, profile {profile_out:.3e})")
    logger.info(f"GCC reference assembled: T={plan.T:.4g} (T1={T1:.4g}, T2={T2:.4g}, T3={T3:.4g})")
    return plan
