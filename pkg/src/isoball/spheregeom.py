"""Points, caps, rho-balls and covering numbers on the unit sphere."""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.spatial import cKDTree

from ._backend import kernels
from .errors import ConvergenceError, DomainError, MeshResolutionError
from .specfun import WBranch, lambert_w

RHO_PEAK = math.exp(-0.5)
EPS_BAR = RHO_PEAK / math.sqrt(2.0)
MAX_MESH_NODES = 100_000
PROBE_POINTS = 10_000
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass(frozen=True)
class SpherePoint:
    """A point of the unit sphere in colatitude/longitude coordinates."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        theta, phi = float(self.theta), float(self.phi)
        if not 0.0 <= theta <= math.pi:
            raise DomainError(f"colatitude {theta} not in [0, pi]")
        if not math.isfinite(phi):
            raise DomainError("longitude must be finite")
        phi = phi % (2.0 * math.pi)
        if theta in (0.0, math.pi):
            phi = 0.0
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_xyz(cls, v):
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        theta = math.atan2(math.hypot(v[0], v[1]), v[2])
        return cls(theta, math.atan2(v[1], v[0]) % (2.0 * math.pi))

    @property
    def xyz(self):
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])


NORTH_POLE = SpherePoint(0.0, 0.0)


def to_xyz(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def to_angles(xyz):
    xyz = np.asarray(xyz, dtype=float)
    theta = np.arctan2(np.hypot(xyz[..., 0], xyz[..., 1]), xyz[..., 2])
    phi = np.arctan2(xyz[..., 1], xyz[..., 0]) % (2.0 * np.pi)
    phi = np.where((theta == 0.0) | (theta == np.pi), 0.0, phi)
    return theta, phi


def angle_between(a, b):
    """Geodesic distance between unit vectors (broadcasting, atan2 form)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


def geodesic_distance(x, y):
    """Great-circle distance in ``[0, pi]`` between two :class:`SpherePoint`."""
    return float(angle_between(x.xyz, y.xyz))


def chord_sq(distance):
    """Squared chord length for a geodesic distance."""
    return 4.0 * np.sin(0.5 * np.asarray(distance, dtype=float)) ** 2


def rotation_to(center):
    """Rotation matrix taking the north pole to ``center``."""
    ct, st = math.cos(center.theta), math.sin(center.theta)
    cp, sp = math.cos(center.phi), math.sin(center.phi)
    ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    rz = np.array([[cp, -sp, 0.0], [sp, cp, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry


# ------------------------------------------------------------------ meshes


@dataclass(frozen=True, eq=False)
class CapMesh:
    """Nodes covering the closed geodesic cap ``B_r(center)``.

    Node 0 is always the center. ``fill_distance`` is certified by probing:
    every probe point of the cap lies within it of some node.
    """

    center: SpherePoint
    radius: float
    theta: np.ndarray
    phi: np.ndarray
    fill_distance: float
    probe_seed: int = 0
    probe_max: float = float("nan")
    xyz: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.ascontiguousarray(self.theta, dtype=float)
        phi = np.ascontiguousarray(self.phi, dtype=float)
        theta.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        xyz = np.ascontiguousarray(to_xyz(theta, phi))
        xyz.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        dist = angle_between(xyz, self.center.xyz)
        if dist.size and dist.max() > self.radius + 1e-12:
            raise DomainError("mesh node outside the cap")

    def __len__(self):
        return self.theta.shape[0]

    @property
    def nodes(self):
        return [SpherePoint(t, p) for t, p in zip(self.theta, self.phi)]

    @classmethod
    def from_points(cls, center, radius, points, fill_distance=float("nan")):
        """Wrap an explicit node list (no certificate) for ad-hoc evaluation."""
        theta = np.array([p.theta for p in points], dtype=float)
        phi = np.array([p.phi for p in points], dtype=float)
        return cls(center, float(radius), theta, phi, fill_distance)

    def geodesic_diameter(self):
        """Largest pairwise geodesic distance among the nodes."""
        if len(self) < 2:
            return 0.0
        d_center = angle_between(self.xyz, self.center.xyz)
        outer = self.xyz[d_center >= d_center.max() - 2.0 * max(self.fill_distance, 0.0) - 1e-12]
        best = 1.0
        for start in range(0, outer.shape[0], 2048):
            block = outer[start:start + 2048] @ outer.T
            best = min(best, float(block.min()))
        # pairs through the middle are never longer than 2 * max radius
        return min(float(math.acos(max(-1.0, min(1.0, best)))), 2.0 * float(d_center.max()))

    def to_csv(self, path):
        """Write ``theta,phi`` rows with a provenance header."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# schema_version=1\n")
            fh.write(f"# center_theta={self.center.theta!r} center_phi={self.center.phi!r}\n")
            fh.write(f"# radius={self.radius!r} fill_distance={self.fill_distance!r} probe_seed={self.probe_seed}\n")
            fh.write("theta,phi\n")
            for t, p in zip(self.theta.tolist(), self.phi.tolist()):
                fh.write(f"{t!r},{p!r}\n")


def _spiral(radius, count):
    """Equal-area Fibonacci spiral of ``count`` points in the polar cap."""
    i = np.arange(count, dtype=float) + 0.5
    one_minus_cos = (1.0 - math.cos(radius)) * i / count
    theta = 2.0 * np.arcsin(np.sqrt(0.5 * one_minus_cos))
    phi = (GOLDEN_ANGLE * np.arange(count)) % (2.0 * np.pi)
    return theta, phi


def cap_points(center, radius, n):
    """``n`` spiral points spread over the cap ``B_radius(center)``."""
    theta, phi = _spiral(radius, n)
    xyz = to_xyz(theta, phi) @ rotation_to(center).T
    return [SpherePoint.from_xyz(v) for v in xyz]


def _probe_cap(radius, fill, rng):
    """Uniform random cap points plus a dense ring on the cap boundary."""
    u = rng.random(PROBE_POINTS)
    theta = np.arccos(1.0 - u * (1.0 - math.cos(radius)))
    phi = rng.random(PROBE_POINTS) * 2.0 * math.pi
    ring = max(16, int(math.ceil(4.0 * math.pi * math.sin(radius) / fill)))
    ring_phi = np.arange(ring) * (2.0 * math.pi / ring)
    theta = np.concatenate([theta, np.full(ring, radius)])
    phi = np.concatenate([phi, ring_phi])
    return to_xyz(theta, phi)


def cap_mesh(center, radius, target_fill, probe_seed=0, max_nodes=MAX_MESH_NODES):
    """Fibonacci-spiral mesh of ``B_radius(center)`` with fill distance <= target.

    The node count starts from the hexagonal-packing estimate and grows by
    10% until the probe certificate passes.
    """
    radius = float(radius)
    target_fill = float(target_fill)
    if not 0.0 < radius <= math.pi / 2:
        raise DomainError("cap radius must lie in (0, pi/2]")
    if not 0.0 < target_fill < radius:
        raise DomainError("target fill distance must lie in (0, radius)")
    area = 2.0 * math.pi * (1.0 - math.cos(radius))
    count = max(1, int(math.ceil(0.45 * area / target_fill**2)))
    rng = np.random.default_rng(probe_seed)
    probe = _probe_cap(radius, target_fill, rng)
    while True:
        if count + 1 > max_nodes:
            raise MeshResolutionError(
                f"cap mesh for radius {radius} and fill {target_fill} needs more than {max_nodes} nodes"
            )
        theta, phi = _spiral(radius, count)
        theta = np.concatenate([[0.0], theta])
        phi = np.concatenate([[0.0], phi])
        xyz = to_xyz(theta, phi)
        chord, _ = cKDTree(xyz).query(probe)
        probe_max = float(2.0 * np.arcsin(np.minimum(chord.max() / 2.0, 1.0)))
        if probe_max <= target_fill:
            break
        count = int(math.ceil(count * 1.1))
    rot = rotation_to(center)
    t_rot, p_rot = to_angles(xyz @ rot.T)
    return CapMesh(center, radius, t_rot, p_rot, target_fill, probe_seed, probe_max)


def certify_fill(mesh, n_probe=PROBE_POINTS, seed=1):
    """Largest probe-to-node distance for fresh uniform probes of the cap."""
    rng = np.random.default_rng(seed)
    u = rng.random(n_probe)
    theta = np.arccos(1.0 - u * (1.0 - math.cos(mesh.radius)))
    phi = rng.random(n_probe) * 2.0 * math.pi
    probe = to_xyz(theta, phi) @ rotation_to(mesh.center).T
    chord, _ = cKDTree(mesh.xyz).query(probe)
    return float(2.0 * np.arcsin(np.minimum(chord.max() / 2.0, 1.0)))


# --------------------------------------------------------------- rho-balls


def _rho(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = t * np.sqrt(np.abs(np.log(t)))
    return np.where(t == 0.0, 0.0, out)


def rho_inverse(eps):
    """Smallest ``t > 0`` with ``rho(t) = eps``: ``exp(W_-1(-2 eps^2) / 2)``."""
    eps = float(eps)
    if not 0.0 < eps < EPS_BAR:
        raise DomainError(f"eps must lie in (0, {EPS_BAR})")
    return math.exp(0.5 * lambert_w(WBranch.LOWER, -2.0 * eps * eps))


@dataclass(frozen=True)
class RhoBallRoots:
    """The three roots ``theta1 < theta2 < 1 < theta3`` of ``t^2 |ln t| = eps^2``.

    ``gap2 = 1 - theta2`` and ``gap3 = theta3 - 1`` are stored separately so
    that roots next to 1 keep full relative precision.
    """

    eps: float
    theta1: float
    theta2: float
    theta3: float
    gap2: float
    gap3: float

    def residuals(self):
        """Relative residuals ``|t^2 |ln t| - eps^2| / eps^2`` for the three roots."""
        e2 = self.eps * self.eps
        r1 = self.theta1**2 * -math.log(self.theta1) - e2
        r2 = (1.0 - self.gap2) ** 2 * -math.log1p(-self.gap2) - e2
        r3 = (1.0 + self.gap3) ** 2 * math.log1p(self.gap3) - e2
        return (abs(r1) / e2, abs(r2) / e2, abs(r3) / e2)


def _gap2_equation(w, e2):
    return (1.0 - w) ** 2 * -math.log1p(-w) - e2


def rho_ball_roots(eps):
    """Solve ``theta^2 |ln theta| = eps^2`` for its three positive roots."""
    eps = float(eps)
    if not 0.0 < eps < EPS_BAR:
        raise DomainError(f"three roots exist only for 0 < eps < {EPS_BAR}")
    e2 = eps * eps
    theta1 = math.exp(0.5 * lambert_w(WBranch.LOWER, -2.0 * e2))
    gap3 = math.expm1(0.5 * lambert_w(WBranch.PRINCIPAL, 2.0 * e2))
    # bisection for w = 1 - theta2; t^2 |ln t| peaks at t = e^-1/2 and w ~ eps^2 near 1
    lo, hi = 0.5 * e2, 1.0 - math.exp(-0.5)
    f_lo, f_hi = _gap2_equation(lo, e2), _gap2_equation(hi, e2)
    if f_lo * f_hi > 0.0:
        raise ConvergenceError(f"theta2 bracket does not enclose a root for eps={eps}")
    # geometric midpoints: the bracket spans hundreds of decades for tiny eps
    for _ in range(200):
        mid = math.sqrt(lo) * math.sqrt(hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = _gap2_equation(mid, e2)
        if f_mid == 0.0:
            lo = hi = mid
            break
        if (f_mid < 0.0) == (f_lo < 0.0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    else:
        raise ConvergenceError("theta2 bisection hit the step cap")
    gap2 = math.sqrt(lo) * math.sqrt(hi)
    return RhoBallRoots(eps, theta1, 1.0 - gap2, 1.0 + gap3, gap2, gap3)


def rho_ball_volume(eps):
    """Exact area ``2 pi (1 - cos theta1(eps))`` of the rho-ball of radius eps."""
    theta1 = rho_ball_roots(eps).theta1
    return 4.0 * math.pi * math.sin(0.5 * theta1) ** 2


# ------------------------------------------------------------- covering


@dataclass(frozen=True)
class CoveringEstimate:
    """Greedy cover of a mesh by metric balls, with Talagrand-style bookkeeping.

    ``doubling_low``/``doubling_high`` bracket ``Psi(e/2) / Psi(e)`` over the
    dyadic grid ``eps * 2**-j``.
    """

    count: int
    radius: float
    bound_fn_value: float
    doubling_low: float
    doubling_high: float
    diameter: float
    geodesic_radius: float
    inflated_radius: float
    max_center_distance: float
    centers: np.ndarray = field(repr=False)


class _Metric:
    """A metric on the sphere that is an increasing function of geodesic distance."""

    def __init__(self, fn, name):
        self.fn = fn
        self.name = name

    def __call__(self, d):
        return self.fn(np.asarray(d, dtype=float))

    def geodesic_radius(self, eps, d_max):
        """Geodesic radius whose metric value is ``eps`` (``inf`` past ``d_max``)."""
        if eps >= float(self(d_max)):
            return math.inf
        if self.name == "rho":
            return rho_inverse(eps)
        grid = np.linspace(0.0, d_max, 2049)
        vals = self(grid)
        if np.any(np.diff(vals) <= 0.0):
            raise DomainError("canonical metric is not increasing on the mesh scale")
        from scipy.optimize import brentq

        j = int(np.searchsorted(vals, eps))
        return brentq(lambda d: float(self(d)) - eps, grid[j - 1], grid[j], xtol=1e-15, rtol=1e-14)


def resolve_metric(metric):
    """Turn ``"rho"`` or a power spectrum into a metric of geodesic distance."""
    if isinstance(metric, _Metric):
        return metric
    if isinstance(metric, str):
        if metric != "rho":
            raise DomainError(f"unknown metric {metric!r}")
        return _Metric(_rho, "rho")
    from .spectrum import canonical_metric_of_distance

    return _Metric(lambda d: canonical_metric_of_distance(metric, d), "canonical")


def psi_bound(r, eps):
    """Covering majorant ``r^2 |ln eps| / eps^2``."""
    return r * r * abs(math.log(eps)) / (eps * eps)


def covering_number(mesh, metric, eps, doubling_levels=6):
    """Greedy farthest-point cover count of the mesh by metric balls of radius eps.

    ``metric`` is ``"rho"`` (``rho`` composed with geodesic distance) or a
    :class:`~isoball.spectrum.PowerSpectrum` (its canonical metric). The mesh
    fill distance must be at most ``eps / 4`` in the chosen metric.
    """
    eps = float(eps)
    if eps <= 0.0:
        raise DomainError("eps must be positive")
    m = resolve_metric(metric)
    fill_metric = float(m(mesh.fill_distance)) if math.isfinite(mesh.fill_distance) else 0.0
    if fill_metric > 0.25 * eps * (1.0 + 1e-12):
        raise MeshResolutionError(
            f"mesh fill {mesh.fill_distance} has metric size {fill_metric} > eps/4 = {eps / 4}"
        )
    d_geo = mesh.geodesic_diameter()
    diameter = float(m(d_geo))
    g = m.geodesic_radius(eps, d_geo) if d_geo > 0.0 else math.inf
    chord_sq_radius = float(chord_sq(g)) if math.isfinite(g) else 4.0
    centers, nearest_sq = kernels.greedy_cover(mesh.xyz, chord_sq_radius, 0)
    worst = float(m(2.0 * np.arcsin(min(math.sqrt(nearest_sq.max()) / 2.0, 1.0))))
    if worst > eps * (1.0 + 1e-9):
        raise ConvergenceError("greedy cover left a node outside every ball")
    r = mesh.radius
    ratios = []
    if eps < 1.0:
        e = eps
        for _ in range(doubling_levels):
            ratios.append(psi_bound(r, e / 2.0) / psi_bound(r, e))
            e /= 2.0
    psi_value = psi_bound(r, eps) if eps < 1.0 else float("nan")
    return CoveringEstimate(
        count=int(centers.shape[0]),
        radius=eps,
        bound_fn_value=psi_value,
        doubling_low=min(ratios) if ratios else float("nan"),
        doubling_high=max(ratios) if ratios else float("nan"),
        diameter=diameter,
        geodesic_radius=g,
        inflated_radius=eps + fill_metric,
        max_center_distance=worst,
        centers=centers,
    )
