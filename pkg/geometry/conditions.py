"""
Geometric hypotheses on the torus: control sets, the geometric control
condition (every straight ray enters the set), bad directions of a ball,
the magnetic bending certificate and the bending-lemma census.

Everything here is certified at a stated resolution (direction count, start
grid, erosion width), never claimed exactly.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage

from config import GeometryDefaults, CharacteristicsDefaults
from particles.characteristics import ForceSpec, GriddedField, constant_scalar, relativistic_velocity, steps, \
    w1inf_norm
from spectral import ScalarField
from utils import GeometryError, InfeasibleParametersError, get_logger, map_chunks

logger = get_logger(__name__)


# ========== Ray / Ball Lattice Hits ==========

def first_ball_hit(p: np.ndarray, e: np.ndarray, r: float, length, block: int = 64) -> np.ndarray:
    """
    First distance y in [0, length] at which the segment p + y e enters an
    open ball of radius r < 1/2 centred at some integer point (p is taken
    relative to the ball centre, e unit). Returns inf where there is none.

    The segment is scanned one unit cell at a time along its dominant axis;
    with r < 1/2 the balls met at successive crossings are entered in order,
    so the scan stops at the first block containing a hit.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    e = np.asarray(e, dtype=np.float64).reshape(-1, 2)
    count = p.shape[0]
    length = np.broadcast_to(np.asarray(length, dtype=np.float64), (count,))
    result = np.full(count, np.inf)
    if count == 0 or r <= 0:
        return result

    swap = np.abs(e[:, 1]) > np.abs(e[:, 0])
    p = np.where(swap[:, None], p[:, ::-1], p)
    e = np.where(swap[:, None], e[:, ::-1], e)
    sign = np.where(e[:, 0] < 0, -1.0, 1.0)
    p1, e1 = sign * p[:, 0], np.abs(e[:, 0])
    p2, e2 = p[:, 1], e[:, 1]

    k_lo = np.floor(p1 - r)
    k_hi = np.ceil(p1 + length * e1 + r)
    active = np.arange(count)
    offset = 0
    while active.size:
        j = np.arange(offset, offset + block)
        k1 = k_lo[active, None] + j
        valid = k1 <= k_hi[active, None]
        a1, a2 = p1[active, None], p2[active, None]
        b1, b2 = e1[active, None], e2[active, None]
        x2_cross = a2 + (k1 - a1) / b1 * b2
        best = np.full(active.size, np.inf)
        base = np.floor(x2_cross)
        for k2 in (base, base + 1.0):
            d1, d2 = a1 - k1, a2 - k2
            half_b = d1 * b1 + d2 * b2
            disc = half_b * half_b - (d1 * d1 + d2 * d2 - r * r)
            root = np.sqrt(np.maximum(disc, 0.0))
            y_in, y_out = -half_b - root, -half_b + root
            hit = valid & (disc > 0) & (y_out > 0) & (y_in <= length[active, None])
            best = np.minimum(best, np.min(np.where(hit, np.maximum(y_in, 0.0), np.inf), axis=1))
        result[active] = best
        keep = np.isinf(best) & (k_lo[active] + offset + block <= k_hi[active])
        active = active[keep]
        offset += block
    return result


# ========== Control Sets ==========

class ControlSet(ABC):
    """Open subset of the torus."""

    @abstractmethod
    def depth(self, x: np.ndarray) -> np.ndarray:
        """Signed distance to the boundary: positive inside, negative outside."""

    @abstractmethod
    def eroded(self, eps: float) -> "ControlSet":
        ...

    @abstractmethod
    def first_hit(self, x: np.ndarray, e: np.ndarray, length: float) -> np.ndarray:
        """Distance along x + y e to the first point of the set, inf if none within length."""

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.depth(x) > 0

    def distance_to_complement(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(self.depth(x), 0.0)

    def mask(self, n: int) -> np.ndarray:
        coords = np.arange(n) / n
        x1, x2 = np.meshgrid(coords, coords, indexing="ij")
        return self.contains(np.stack([x1.ravel(), x2.ravel()], axis=-1)).reshape(n, n)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": type(self).__name__}


class WholeTorus(ControlSet):
    def depth(self, x):
        return np.full(np.shape(x)[:-1], np.inf)

    def eroded(self, eps):
        return self

    def first_hit(self, x, e, length):
        return np.zeros(np.shape(x)[:-1])

    def to_dict(self):
        return {"kind": "whole"}


def whole() -> WholeTorus:
    return WholeTorus()


class Strip(ControlSet):
    """
    Band of half-width `half_width` around the closed geodesic through `offset`
    with direction (p, q), gcd(p, q) = 1. Successive strands of the geodesic are
    1 / |(p, q)| apart, so half_width must stay below half of that.
    """

    def __init__(self, direction: Sequence[int], offset: Sequence[float], half_width: float):
        p, q = int(direction[0]), int(direction[1])
        if (p, q) == (0, 0) or math.gcd(abs(p), abs(q)) != 1:
            raise GeometryError(f"strip direction {(p, q)} must be a coprime integer pair")
        self.direction = (p, q)
        self.norm = math.hypot(p, q)
        self.offset = np.asarray(offset, dtype=np.float64)
        self.half_width = float(half_width)
        if not 0 < self.half_width < 0.5 / self.norm:
            raise GeometryError(f"strip half-width {half_width} must lie in (0, {0.5 / self.norm:.6g})")
        self.tangent = np.array([p, q], dtype=np.float64) / self.norm
        self.normal = np.array([-q, p], dtype=np.float64) / self.norm

    @property
    def spacing(self) -> float:
        return 1.0 / self.norm

    def transverse(self, x: np.ndarray) -> np.ndarray:
        """Signed offset from the nearest strand, in [-spacing/2, spacing/2)."""
        s = (np.asarray(x) - self.offset) @ self.normal * self.norm
        return (np.mod(s + 0.5, 1.0) - 0.5) / self.norm

    def depth(self, x):
        return self.half_width - np.abs(self.transverse(x))

    def eroded(self, eps):
        if self.half_width - eps <= 0:
            return BallUnion([])
        return Strip(self.direction, self.offset, self.half_width - eps)

    def first_hit(self, x, e, length):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        e = np.asarray(e, dtype=np.float64).reshape(-1, 2)
        u = (x - self.offset) @ self.normal * self.norm
        du = e @ self.normal * self.norm
        w = self.half_width * self.norm
        frac = np.mod(u + 0.5, 1.0) - 0.5
        inside = np.abs(frac) < w
        with np.errstate(divide="ignore", invalid="ignore"):
            up = (np.floor(u + w) + 1.0 - w - u) / du
            down = (np.ceil(u - w) - 1.0 + w - u) / du
        y = np.where(du > 0, up, np.where(du < 0, down, np.inf))
        y = np.where(inside, 0.0, y)
        return np.where(y <= length, y, np.inf)

    def to_dict(self):
        return {"kind": "strip", "direction": list(self.direction), "offset": self.offset.tolist(),
                "half_width": self.half_width}


class BallUnion(ControlSet):
    def __init__(self, balls: Sequence[Sequence[float]]):
        self.balls = [(float(b[0]), float(b[1]), float(b[2])) for b in balls]
        for c1, c2, r in self.balls:
            if not 0 < r < 0.5:
                raise GeometryError(f"ball radius {r} must lie in (0, 1/2)")

    def depth(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = np.full(x.shape[:-1], -np.inf)
        for c1, c2, r in self.balls:
            delta = x - np.array([c1, c2])
            delta -= np.round(delta)
            out = np.maximum(out, r - np.linalg.norm(delta, axis=-1))
        return out

    def eroded(self, eps):
        return BallUnion([(c1, c2, r - eps) for c1, c2, r in self.balls if r - eps > 0])

    def first_hit(self, x, e, length):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        out = np.full(x.shape[0], np.inf)
        for c1, c2, r in self.balls:
            out = np.minimum(out, first_ball_hit(x - np.array([c1, c2]), e, r, length))
        return out

    def to_dict(self):
        return {"kind": "balls", "balls": [list(b) for b in self.balls]}


class GridMask(ControlSet):
    """Node mask with a periodic signed distance map; rays are marched at half-cell steps."""

    def __init__(self, mask: np.ndarray):
        self.values = np.asarray(mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise GeometryError(f"mask must be square, got shape {self.values.shape}")
        self.n = self.values.shape[0]
        self.depth_map = self._signed_distance(self.values)

    @staticmethod
    def _signed_distance(mask: np.ndarray) -> np.ndarray:
        n = mask.shape[0]
        if mask.all():
            return np.full(mask.shape, np.inf)
        if not mask.any():
            return np.full(mask.shape, -np.inf)
        tiled = np.tile(mask, (3, 3))
        inside = ndimage.distance_transform_edt(tiled)[n:2 * n, n:2 * n]
        outside = ndimage.distance_transform_edt(~tiled)[n:2 * n, n:2 * n]
        return np.where(mask, inside, -outside) / n

    @property
    def is_whole(self) -> bool:
        return bool(self.values.all())

    def depth(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape[:-1]
        if self.is_whole or not self.values.any():
            return self.depth_map.flat[0] * np.ones(shape)
        coords = (np.mod(x.reshape(-1, 2), 1.0) * self.n).T
        return ndimage.map_coordinates(self.depth_map, coords, order=1, mode='grid-wrap').reshape(shape)

    def _node_lookup(self, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        idx = np.mod(np.floor(np.mod(x, 1.0) * self.n + 0.5).astype(np.int64), self.n)
        return mask[idx[..., 0], idx[..., 1]]

    def eroded(self, eps):
        return GridMask(self.values & (self.depth_map > eps))

    def dilated(self, eps):
        return GridMask(self.values | (self.depth_map >= -eps))

    def first_hit(self, x, e, length):
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        e = np.asarray(e, dtype=np.float64).reshape(-1, 2)
        out = np.full(x.shape[0], np.inf)
        if self.is_whole:
            return np.zeros(x.shape[0])
        if not self.values.any():
            return out
        h = 0.5 / self.n
        total = int(math.ceil(length / h))
        active = np.arange(x.shape[0])
        for i in range(total + 1):
            y = i * h
            inside = self._node_lookup(x[active] + y * e[active], self.values)
            out[active[inside]] = y
            active = active[~inside]
            if not active.size:
                break
        return out

    def first_dwell(self, x: np.ndarray, e: np.ndarray, length: float, dwell: float) -> np.ndarray:
        """First y with [y, y + dwell] inside the mask along the ray (inf if none by `length`)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        e = np.asarray(e, dtype=np.float64).reshape(-1, 2)
        out = np.full(x.shape[0], np.inf)
        if self.is_whole:
            return np.zeros(x.shape[0])
        h = 0.5 / self.n
        need = int(math.ceil(dwell / h)) + 1
        run = np.zeros(x.shape[0], dtype=np.int64)
        found = np.zeros(x.shape[0], dtype=bool)
        for i in range(int(math.ceil((length + dwell) / h)) + 1):
            inside = self._node_lookup(x + i * h * e, self.values)
            run = np.where(inside, run + 1, 0)
            done = (run >= need) & ~found
            out[done] = (i - need + 1) * h
            found |= done
            if found.all():
                break
        return out

    def to_dict(self):
        return {"kind": "mask", "n": self.n, "fraction": float(self.values.mean())}


def _cross_balls(center: Sequence[float], radius: float, spacing: float) -> List[Tuple[float, float, float]]:
    count = int(math.ceil(1.0 / spacing))
    step = 1.0 / count
    c1, c2 = float(center[0]), float(center[1])
    balls = [(c1, (c2 + i * step) % 1.0, radius) for i in range(count)]
    balls += [((c1 + i * step) % 1.0, c2, radius) for i in range(1, count)]
    return balls


def control_set_from_spec(spec: Dict[str, Any]) -> ControlSet:
    """Build a control set from its config description."""
    kind = spec.get("kind")
    try:
        if kind == "whole":
            return whole()
        if kind == "balls":
            return BallUnion(spec["balls"])
        if kind == "strip":
            return Strip(spec["direction"], spec["offset"], spec["half_width"])
        if kind == "cross":
            return BallUnion(_cross_balls(spec["center"], spec["radius"], spec["spacing"]))
        if kind == "mask":
            return GridMask(np.asarray(spec["values"], dtype=bool))
    except KeyError as e:
        raise GeometryError(f"control set of kind '{kind}' is missing {e}") from e
    raise GeometryError(f"unknown control set kind '{kind}'")


# ========== Geometric Control Condition ==========

def ray_grid(n_dirs: int, n_starts: int, directions: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Starts on an n_starts^2 node grid crossed with directions (default: angles 2 pi i / n_dirs)."""
    if directions is None:
        angles = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
        directions = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    coords = np.arange(n_starts) / n_starts
    s1, s2 = np.meshgrid(coords, coords, indexing="ij")
    starts = np.stack([s1.ravel(), s2.ravel()], axis=-1)
    x = np.repeat(starts[np.newaxis], directions.shape[0], axis=0).reshape(-1, 2)
    e = np.repeat(directions, starts.shape[0], axis=0)
    return x, e


@dataclass
class GCCReport:
    holds: bool
    L: float
    witness: Optional[Tuple[List[float], List[float]]]
    resolution: Dict[str, float]
    n_rays: int

    def to_dict(self) -> Dict[str, Any]:
        return {"holds": self.holds, "L": self.L if math.isfinite(self.L) else None,
                "witness": None if self.witness is None else {"x": self.witness[0], "e": self.witness[1]},
                "resolution": self.resolution, "n_rays": self.n_rays}


def check_gcc(omega: ControlSet, n_dirs: int = None, n_starts: int = None, L_max: float = None,
              eps: float = None, threads: int = 1) -> GCCReport:
    """
    Every sampled ray x + y e (y in [0, L_max]) must enter the eps-erosion of
    omega. Returns the largest hitting length, or the first ray (in sampling
    order) that never hits.
    """
    n_dirs = GeometryDefaults.N_DIRS if n_dirs is None else n_dirs
    n_starts = GeometryDefaults.N_STARTS if n_starts is None else n_starts
    L_max = GeometryDefaults.L_MAX if L_max is None else L_max
    if eps is None:
        eps = 1.0 / omega.n if isinstance(omega, GridMask) else 1.0 / 64
    resolution = {"n_dirs": n_dirs, "n_starts": n_starts, "L_max": L_max, "eps": eps}
    x, e = ray_grid(n_dirs, n_starts)
    target = omega.eroded(eps)
    chunk = GeometryDefaults.CENSUS_CHUNK
    lengths = np.concatenate(map_chunks(lambda lo, hi: target.first_hit(x[lo:hi], e[lo:hi], L_max),
                                         x.shape[0], chunk, threads))
    missed = np.flatnonzero(~np.isfinite(lengths))
    if missed.size:
        i = int(missed[0])
        logger.info(f"GCC refuted: ray from {x[i]} along {e[i]} misses within {L_max}")
        return GCCReport(False, math.inf, (x[i].tolist(), e[i].tolist()), resolution, int(x.shape[0]))
    L = float(lengths.max(initial=0.0))
    logger.info(f"GCC holds at resolution {n_dirs} dirs x {n_starts}^2 starts, L={L:.4g}")
    return GCCReport(True, L, None, resolution, int(x.shape[0]))


# ========== Bad Directions ==========

def enumerate_bad_directions(center: Sequence[float], r: float) -> List[Tuple[int, int]]:
    """
    Coprime (p, q) whose closed geodesics are spaced 1/|(p, q)| > 2r apart, so
    some line of that direction misses B(center, r). Sorted by |(p, q)|, then angle.
    """
    if r <= 0:
        raise GeometryError(f"ball radius must be positive, got {r}")
    if r >= 0.5:
        return []
    bound = 1.0 / (4.0 * r * r)
    reach = int(math.ceil(math.sqrt(bound)))
    found = []
    for p in range(-reach, reach + 1):
        for q in range(-reach, reach + 1):
            if (p, q) == (0, 0) or math.gcd(abs(p), abs(q)) != 1:
                continue
            if p * p + q * q < bound:
                found.append((p, q))
    found.sort(key=lambda d: (d[0] ** 2 + d[1] ** 2, math.atan2(d[1], d[0]) % (2 * math.pi)))
    return found


def direction_angles(directions: Sequence[Tuple[int, int]]) -> np.ndarray:
    return np.array([math.atan2(q, p) % (2 * math.pi) for p, q in directions])


def min_angular_gap(angles: np.ndarray) -> float:
    if angles.size < 2:
        return 2 * math.pi
    ordered = np.sort(angles)
    gaps = np.diff(np.concatenate([ordered, ordered[:1] + 2 * math.pi]))
    return float(gaps.min())


# ========== Bending Certificate ==========

def bending_gamma(D: float, d: float, b_lower: float, b_tilde: float) -> float:
    return D * b_tilde + 0.5 * d * b_lower


@dataclass
class MagneticCertificate:
    valid: bool
    sign: int = 1
    threshold: float = 0.0
    b_lower: float = 0.0
    b_tilde: float = 0.0
    d: float = 0.0
    D: float = 0.0
    gamma: float = 0.0
    b_max: float = 0.0
    b_w1inf: float = 0.0
    diagnostic: str = ""
    K: Optional[GridMask] = field(default=None, repr=False)
    gcc: Optional[GCCReport] = field(default=None, repr=False)

    @property
    def window(self) -> float:
        """Length of the stretch in which a ray is guaranteed to turn."""
        return self.D + 0.5 * self.d

    def to_dict(self) -> Dict[str, Any]:
        return {"valid": self.valid, "sign": self.sign, "threshold": self.threshold, "b_lower": self.b_lower,
                "b_tilde": self.b_tilde, "d": self.d, "D": self.D, "gamma": self.gamma, "b_max": self.b_max,
                "b_w1inf": self.b_w1inf, "diagnostic": self.diagnostic,
                "K_fraction": None if self.K is None else float(self.K.values.mean()),
                "gcc": None if self.gcc is None else self.gcc.to_dict()}


def _largest_d(bs: np.ndarray, K: GridMask, threshold: float) -> Tuple[float, float]:
    """Bisection for the largest d <= D_CAP with min over K_{2d} of bs >= threshold / 2."""
    def floor_on(d):
        region = K.dilated(2.0 * d).values
        return float(bs[region].min())

    hi = GeometryDefaults.D_CAP
    if floor_on(hi) >= 0.5 * threshold:
        return hi, floor_on(hi)
    lo = 0.0
    for _ in range(GeometryDefaults.BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if floor_on(mid) >= 0.5 * threshold:
            lo = mid
        else:
            hi = mid
    return lo, floor_on(lo)


def certify_bending(b: ScalarField, threshold: float, n_dirs: int = None, n_starts: int = None,
                    L_max: float = None, threads: int = 1) -> MagneticCertificate:
    """Try b, then -b: K = {sign*b >= threshold} must satisfy the GCC; then measure d, D and gamma."""
    if threshold <= 0:
        raise GeometryError(f"bending threshold must be positive, got {threshold}")
    L_max = GeometryDefaults.L_MAX if L_max is None else L_max
    diagnostics = []
    for sign in (1, -1):
        bs = sign * b.values
        K = GridMask(bs >= threshold)
        if not K.values.any():
            diagnostics.append(f"sign {sign:+d}: {{b >= {threshold}}} is empty")
            continue
        gcc = check_gcc(K, n_dirs, n_starts, L_max, threads=threads)
        if not gcc.holds:
            diagnostics.append(f"sign {sign:+d}: K fails the GCC, witness {gcc.witness}")
            continue
        d, b_lower = _largest_d(bs, K, threshold)
        if d <= 0:
            diagnostics.append(f"sign {sign:+d}: no positive thickening keeps b >= threshold/2")
            continue
        if K.is_whole:
            D = 0.0
        else:
            x, e = ray_grid(n_dirs or GeometryDefaults.N_DIRS, n_starts or GeometryDefaults.N_STARTS)
            K_d = K.dilated(d)
            dwell = np.concatenate(map_chunks(lambda lo, hi: K_d.first_dwell(x[lo:hi], e[lo:hi], L_max, 0.5 * d),
                                               x.shape[0], GeometryDefaults.CENSUS_CHUNK, threads))
            if not np.all(np.isfinite(dwell)):
                diagnostics.append(f"sign {sign:+d}: some ray never stays d/2 inside K_d within {L_max}")
                continue
            D = float(dwell.max())
        b_tilde = float(bs.min())
        gamma = bending_gamma(D, d, b_lower, b_tilde)
        cert = MagneticCertificate(gamma > 0, sign, threshold, b_lower, b_tilde, d, D, gamma,
                                   float(np.max(np.abs(b.values))), w1inf_norm(b),
                                   "" if gamma > 0 else f"sign {sign:+d}: gamma = {gamma:.4g} <= 0", K, gcc)
        if cert.valid:
            logger.info(f"Bending certificate: sign {sign:+d}, d={d:.4g}, D={D:.4g}, gamma={gamma:.4g}")
            return cert
        diagnostics.append(cert.diagnostic)
    logger.warning(f"No bending certificate: {'; '.join(diagnostics)}")
    return MagneticCertificate(False, diagnostic="; ".join(diagnostics), threshold=threshold,
                               b_max=float(np.max(np.abs(b.values))))


# ========== Bending Parameters ==========

@dataclass
class BendingParams:
    m: float
    c0: float
    M: float
    tau: float
    beta: float
    N_bad: int
    L: float
    T: float
    T_m: float
    kappa: float
    window: float
    n_rotations: int
    gap: float
    constraints: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        out = {k: getattr(self, k) for k in ("m", "c0", "M", "tau", "beta", "N_bad", "L", "T", "T_m", "kappa",
                                             "window", "n_rotations", "gap")}
        out["constraints"] = self.constraints
        return out


def _cone_directions(bad_angles: np.ndarray, beta: float, n_dirs: int) -> np.ndarray:
    uniform = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
    edges = np.concatenate([bad_angles - beta, bad_angles + beta]) if bad_angles.size else np.empty(0)
    angles = np.concatenate([uniform, edges])
    if bad_angles.size:
        diff = np.abs((angles[:, None] - bad_angles[None, :] + np.pi) % (2 * np.pi) - np.pi)
        angles = angles[np.all(diff >= beta * (1 - 1e-12), axis=1)]
    return np.stack([np.cos(angles), np.sin(angles)], axis=-1)


def _bending_constraints(p: BendingParams, gamma: float, b_max: float, r0: float) -> Dict[str, Dict[str, float]]:
    f = math.sqrt(1.0 + p.M ** 2 / p.c0 ** 2)
    speed_scale = math.sqrt(1.0 / p.c0 ** 2 + 1.0 / p.m ** 2)
    checks = {
        "case3_beta": (p.beta, p.tau * gamma / (2.0 * f * p.window)),
        "cond1_free_flight": (p.T_m, p.tau),
        "cond2_deflection": (0.5 * p.L ** 2 * speed_scale * max(b_max, 1.0), r0 / 8.0),
        "cone_separation": (2.0 * p.beta, p.gap),
        "drift_gap": (p.L * math.sqrt(2.0) * b_max / p.m, p.gap - 2.0 * p.beta),
        "rotations": (3.0, float(p.n_rotations) + 0.5),
    }
    return {name: {"value": float(lhs), "limit": float(rhs), "ok": bool(lhs < rhs)}
            for name, (lhs, rhs) in checks.items()}


def derive_bending_params(cert: MagneticCertificate, center: Sequence[float], r0: float, M_bar: float,
                          n_dirs: int = None, n_starts: int = None, threads: int = 1) -> BendingParams:
    """
    Pick (beta, L, tau, m, c0, M, T) from a valid certificate so that the
    rotation, free-flight and deflection inequalities hold, each checked by
    substitution afterwards.
    """
    if not cert.valid or cert.gamma <= 0:
        raise InfeasibleParametersError("bending certificate is not valid (gamma <= 0)", "gamma")
    n_dirs = GeometryDefaults.N_DIRS if n_dirs is None else n_dirs
    n_starts = GeometryDefaults.N_STARTS if n_starts is None else n_starts
    margin = GeometryDefaults.PARAMETER_MARGIN
    gamma, window, b_max = cert.gamma, cert.window, cert.b_max

    bad = enumerate_bad_directions(center, GeometryDefaults.BAD_BALL_FACTOR * r0)
    angles = direction_angles(bad)
    gap = min_angular_gap(angles)
    beta = 0.9 * min(gap / 9.0, 3.0 * gamma / (2.0 * math.sqrt(2.0)))
    if beta < GeometryDefaults.BETA_FLOOR:
        raise InfeasibleParametersError(f"angular margin beta={beta:.3e} below floor", "beta")

    directions = _cone_directions(angles, beta, n_dirs)
    x, e = ray_grid(0, n_starts, directions)
    ball_r = GeometryDefaults.BAD_BALL_FACTOR * r0
    centre = np.asarray(center, dtype=np.float64)
    hits = np.concatenate(map_chunks(
        lambda lo, hi: first_ball_hit(x[lo:hi] - centre, e[lo:hi], ball_r, GeometryDefaults.L_SEARCH_MAX),
        x.shape[0], GeometryDefaults.CENSUS_CHUNK, threads))
    if not np.all(np.isfinite(hits)):
        raise InfeasibleParametersError("some direction outside the bad cones never reaches the ball", "L")
    L = max(float(hits.max()), 1e-12)

    m0 = margin * max(4.0 * math.sqrt(2.0) * L ** 2 * max(b_max, 1.0) / r0,
                      L * math.sqrt(2.0) * b_max / (gap - 2.0 * beta), 1.0)
    m = m0
    for _ in range(100):
        M = max(m + 1.0, M_bar, GeometryDefaults.M_CONSTANT * r0 * (b_max + 1.0))
        f = math.sqrt(1.0 + M ** 2 / m ** 2)
        tau = max(GeometryDefaults.ROTATION_WINDOWS * window, margin * 2.0 * f * beta * window / gamma)
        m_next = max(m0, margin * L * math.sqrt(2.0) / tau)
        if abs(m_next - m) <= 1e-12 * m:
            break
        m = m_next
    c0 = m
    T_m = L * math.sqrt(1.0 / m ** 2 + 1.0 / c0 ** 2)
    T = 4.0 * (T_m + tau)
    params = BendingParams(m, c0, M, tau, beta, len(bad), L, T, T_m, m / (2.0 * T), window,
                           int(math.floor(tau / window)), gap)
    params.constraints = _bending_constraints(params, gamma, b_max, r0)
    for name, check in params.constraints.items():
        if not check["ok"]:
            raise InfeasibleParametersError(
                f"constraint {name} fails: {check['value']:.4g} >= {check['limit']:.4g}", name)
    logger.info(f"Bending parameters: m={m:.4g}, tau={tau:.4g}, beta={beta:.3g}, L={L:.4g}, T={T:.4g}")
    return params


# ========== Bending Census ==========

@dataclass
class BendingCensus:
    n_samples: int
    hit_fraction: float
    band_fraction: float
    window: Tuple[float, float]
    samples: np.ndarray
    hit_times: np.ndarray
    band_ok: np.ndarray
    dt: float

    header = ["x1", "x2", "angle", "speed", "hit_time", "band_ok"]

    @property
    def passed(self) -> bool:
        return self.hit_fraction == 1.0 and self.band_fraction == 1.0

    def rows(self):
        for s, t, ok in zip(self.samples, self.hit_times, self.band_ok):
            yield (s[0], s[1], s[2], s[3], t, bool(ok))

    def to_dict(self) -> Dict[str, Any]:
        return {"n_samples": self.n_samples, "hit_fraction": self.hit_fraction, "band_fraction": self.band_fraction,
                "window": list(self.window), "dt": self.dt, "passed": self.passed}


def census_samples(samples: Sequence[int], v_lo: float, v_hi: float) -> np.ndarray:
    """(x1, x2, angle, speed) grid: nodes in x, angles 2 pi k / n, speeds spanning [v_lo, v_hi]."""
    n1, n2, na, ns = samples
    x1 = np.arange(n1) / n1
    x2 = np.arange(n2) / n2
    angle = 2.0 * np.pi * np.arange(na) / na
    speed = np.linspace(v_lo, v_hi, ns) if ns > 1 else np.array([v_lo])
    grids = np.meshgrid(x1, x2, angle, speed, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def verify_bending_lemma(cert: Optional[MagneticCertificate], params: BendingParams, center: Sequence[float],
                         r0: float, b: Union[float, ScalarField], c: float, samples: Sequence[int],
                         F_extra=None, F_extra_sup: float = 0.0, dt: float = None,
                         threads: int = 1) -> BendingCensus:
    """
    Census over an (x, v) grid with m <= |v| <= M: each characteristic must
    enter B(center, r0/2) during (T/4, 3T/4) and keep |v|/2 <= |V| <= 2|v| on [0, T].

    Hits are tested on the chords between RK4 states against the ball shrunk by
    the chord sagitta; the step is capped so the sagitta stays below that margin.
    """
    if cert is not None and not cert.valid:
        logger.warning("Bending census run without a valid certificate")
    dt = CharacteristicsDefaults.DT if dt is None else dt
    if isinstance(b, ScalarField):
        sampler = GriddedField.constant(b.values)
        b_max = float(np.max(np.abs(b.values)))
    else:
        sampler = constant_scalar(b)
        b_max = abs(float(b))
    force = ForceSpec(c, None, sampler, F_extra, F_extra_sup)

    table = census_samples(samples, params.m, params.M)
    sagitta = GeometryDefaults.SAGITTA
    target_r = 0.5 * r0 - sagitta
    if target_r <= 0:
        raise GeometryError(f"target ball radius {0.5 * r0} is below the chord sagitta {sagitta}")
    v_hat_max = float(np.max(np.linalg.norm(relativistic_velocity(
        np.column_stack([table[:, 3], np.zeros(len(table))]), c), axis=-1)))
    if b_max > 0:
        chord = math.sqrt(8.0 * sagitta * params.m / b_max)
        dt = min(dt, chord / max(v_hat_max, 1e-300))
    lo, hi = GeometryDefaults.HIT_WINDOW[0] * params.T, GeometryDefaults.HIT_WINDOW[1] * params.T
    centre = np.asarray(center, dtype=np.float64)

    def run_chunk(first, last):
        part = table[first:last]
        x0 = part[:, 0:2]
        v0 = np.column_stack([part[:, 3] * np.cos(part[:, 2]), part[:, 3] * np.sin(part[:, 2])])
        speed0 = part[:, 3]
        hit_time = np.full(len(part), np.nan)
        band = np.ones(len(part), dtype=bool)
        prev_t, prev_x = None, None
        for t, x, v in steps(x0, v0, force, 0.0, params.T, dt):
            speed = np.linalg.norm(v, axis=-1)
            band &= (speed >= 0.5 * speed0) & (speed <= 2.0 * speed0)
            if prev_t is not None and prev_t >= lo and t <= hi:
                todo = np.flatnonzero(np.isnan(hit_time))
                if todo.size:
                    delta = x[todo] - prev_x[todo]
                    seg = np.linalg.norm(delta, axis=-1)
                    direction = delta / np.maximum(seg, 1e-300)[:, None]
                    y = first_ball_hit(np.mod(prev_x[todo], 1.0) - centre, direction, target_r, seg)
                    found = np.isfinite(y)
                    hit_time[todo[found]] = prev_t + y[found] / np.maximum(seg[found], 1e-300) * (t - prev_t)
            prev_t, prev_x = t, x
        return hit_time, band

    results = map_chunks(run_chunk, len(table), GeometryDefaults.CENSUS_CHUNK, threads)
    hit_times = np.concatenate([r[0] for r in results])
    band_ok = np.concatenate([r[1] for r in results])
    census = BendingCensus(len(table), float(np.mean(np.isfinite(hit_times))), float(np.mean(band_ok)),
                           (lo, hi), table, hit_times, band_ok, dt)
    logger.info(f"Bending census: {census.n_samples} samples, hit fraction {census.hit_fraction:.4f}, "
                f"band fraction {census.band_fraction:.4f}")
    return census
