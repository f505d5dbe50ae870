"""Monte Carlo and exact-Gaussian experiments on the truncated field.

All randomness flows through :func:`isoball.field.replicate_generator`, and
replicates are processed in fixed-size blocks whose results are reassembled
in index order, so every output is independent of the worker count.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import math
import os

import numpy as np
from scipy import linalg

from ._backend import kernels
from .asymptotics import Variant, RateParams, phi, subcritical_rates
from .errors import DomainError, FactorizationError, TruncationError
from .field import (
    FieldSample,
    IncrementKernel,
    cholesky_with_jitter,
    increment_factor,
    replicate_generator,
    sample_field,
    synthesize_many,
)
from .spectrum import (
    canonical_metric_of_distance,
    covariance_matrix,
    rho,
    truncation_tail,
)
from .spheregeom import (
    RHO_PEAK,
    SpherePoint,
    angle_between,
    cap_mesh,
    resolve_metric,
    rho_inverse,
)

WILSON_Z99 = 2.5758293035489
MIN_REPLICATES = 1000
RARE_EVENT_HITS = 10
DEFAULT_BLOCK = 1024


def default_workers():
    return os.cpu_count() or 1


def _run_blocks(fn, n_items, block, workers):
    """Apply ``fn(start, stop)`` over fixed blocks; results in block order."""
    starts = list(range(0, n_items, block))
    spans = [(s, min(s + block, n_items)) for s in starts]
    workers = max(1, int(workers or 1))
    if workers == 1 or len(spans) <= 1:
        return [fn(a, b) for a, b in spans]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), spans))


def wilson_interval(hits, n, z=WILSON_Z99):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise DomainError("need at least one trial")
    p = hits / n
    z2 = z * z
    denom = 1.0 + z2 / n
    mid = (p + z2 / (2.0 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom
    lo = 0.0 if hits == 0 else max(0.0, mid - half)
    hi = 1.0 if hits == n else min(1.0, mid + half)
    return lo, hi


# ------------------------------------------------------------- small balls


@dataclass(frozen=True)
class SmallBallEstimate:
    """One ``(r, eps)`` cell. ``flag`` is ``""``, ``"zero_hits"`` or ``"below_floor"``.

    ``below_floor`` marks cells whose hit count is under the rare-event floor
    of 10; such cells are reported but excluded from fits.
    """

    r: float
    eps: float
    replicates: int
    hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    mesh_fill: float
    truncation: int
    seed: int
    flag: str = ""
    mesh_nodes: int = 0
    factor_method: str = ""
    factor_rank: int = 0
    residual_sd: float = 0.0

    @property
    def usable(self):
        return self.flag == ""

    def as_row(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SmallBallRun:
    estimates: list
    mesh: object = field(repr=False)
    factor: object = field(repr=False)
    maxima: np.ndarray = field(repr=False)
    truncation_certificate: dict = field(default_factory=dict)


def max_over_ball(sample_or_increments, mesh):
    """``max_y |T(y) - T(center)|`` over the mesh nodes.

    A :class:`FieldSample` is synthesized at the nodes and at the mesh
    center; an array is read as increments ``T(y) - T(center)`` at the nodes
    (shape ``(n,)`` or ``(n, k)`` for ``k`` replicates).
    """
    if isinstance(sample_or_increments, FieldSample):
        vals = synthesize_many(sample_or_increments, mesh.xyz)
        c = synthesize_many(sample_or_increments, [mesh.center])[0]
        return float(np.max(np.abs(vals - c)))
    inc = np.asarray(sample_or_increments, dtype=float)
    if inc.shape[0] != len(mesh):
        raise DomainError("increment array does not match the mesh")
    if inc.ndim == 1:
        return float(np.max(np.abs(inc)))
    return kernels.abs_max_columns(inc)


def mesh_fill_for(spectrum, eps, fraction=0.1):
    """Fill distance ``delta`` with ``modulus(delta) <= fraction * eps``.

    The modulus is ``rho`` for ``alpha = 4`` and the canonical metric
    otherwise.
    """
    target = fraction * eps
    if spectrum.alpha == 4.0:
        return rho_inverse(target)
    return resolve_metric(spectrum).geodesic_radius(target, math.pi / 2)


def truncation_certificate(spectrum, r, fraction=0.01):
    """Compare the variance tail bound at ``L`` with ``fraction * d_T(r)``."""
    tail = truncation_tail(spectrum, spectrum.max_degree)
    scale = float(canonical_metric_of_distance(spectrum, r))
    return {"tail_bound": tail, "metric_at_r": scale, "limit": fraction * scale, "ok": tail <= fraction * scale}


def _check_smallball_inputs(r, eps_grid, replicates):
    eps_grid = [float(e) for e in eps_grid]
    if not eps_grid:
        raise DomainError("empty eps grid")
    if any(not 0.0 < e < r for e in eps_grid):
        raise DomainError("every eps must satisfy 0 < eps < r")
    if int(replicates) != replicates or replicates < MIN_REPLICATES:
        raise DomainError(f"replicates must be an integer >= {MIN_REPLICATES}")
    return eps_grid


def replicate_maxima(factor, replicates, master_seed, workers=1, block=DEFAULT_BLOCK):
    """``max |F z_i|`` for replicates ``i = 0..replicates-1``."""
    k = factor.rank
    f = factor.matrix

    def run(a, b):
        z = np.empty((b - a, k))
        for j, i in enumerate(range(a, b)):
            z[j] = replicate_generator(master_seed, i).standard_normal(k)
        return kernels.abs_max_columns(f @ z.T)

    return np.concatenate(_run_blocks(run, int(replicates), block, workers))


def small_ball_sweep(spectrum, center, r, eps_grid, replicates, master_seed, mesh_fill=None,
                     workers=1, factor_method="auto", basis=None, block=DEFAULT_BLOCK):
    """Estimate ``P(M_r(center) < eps)`` for every eps from one replicate set.

    The same replicates serve the whole grid, so the estimates are exactly
    monotone in eps. ``basis`` (a pivoted factor from an earlier run) makes
    the field realizations those of that run, evaluated on this mesh.
    """
    eps_grid = _check_smallball_inputs(r, eps_grid, replicates)
    cert = truncation_certificate(spectrum, r)
    if not cert["ok"]:
        raise TruncationError(
            f"tail bound {cert['tail_bound']:.3g} exceeds 1% of d_T(r) = {cert['metric_at_r']:.3g}"
        )
    eps_min = min(eps_grid)
    if mesh_fill is None:
        mesh_fill = mesh_fill_for(spectrum, eps_min)
    mesh = cap_mesh(center, r, mesh_fill)
    xyz = mesh.xyz[1:]
    if basis is not None:
        factor = basis.extend(IncrementKernel(spectrum, center.xyz), xyz)
    else:
        factor = increment_factor(spectrum, center.xyz, xyz, factor_method)
    residual_sd = math.sqrt(factor.residual_variance)
    if residual_sd > 0.01 * eps_min:
        raise FactorizationError(f"factor residual sd {residual_sd:.3g} is not below 1% of eps")
    maxima = replicate_maxima(factor, replicates, master_seed, workers, block)
    sorted_max = np.sort(maxima)
    out = []
    for e in eps_grid:
        hits = int(np.searchsorted(sorted_max, e, side="left"))
        lo, hi = wilson_interval(hits, replicates)
        flag = "zero_hits" if hits == 0 else ("below_floor" if hits < RARE_EVENT_HITS else "")
        out.append(SmallBallEstimate(
            r=float(r), eps=e, replicates=int(replicates), hits=hits, p_hat=hits / replicates,
            ci_low=lo, ci_high=hi, mesh_fill=float(mesh_fill), truncation=spectrum.max_degree,
            seed=int(master_seed), flag=flag, mesh_nodes=len(mesh), factor_method=factor.method,
            factor_rank=factor.rank, residual_sd=residual_sd,
        ))
    return SmallBallRun(out, mesh, factor, maxima, cert)


def small_ball_estimate(spectrum, center, r, eps, mesh_fill, replicates, master_seed, workers=1):
    """Single-cell version of :func:`small_ball_sweep`."""
    return small_ball_sweep(spectrum, center, r, [eps], replicates, master_seed, mesh_fill, workers).estimates[0]


def refinement_shift(spectrum, center, r, eps_grid, replicates, master_seed, mesh_fill=None, workers=1):
    """Rerun a sweep at half the fill distance on the same realizations.

    Returns ``(coarse, fine, within)`` where ``within[i]`` says the fine
    estimate lies in the coarse 99% interval. Realizations are shared by
    reusing the pivots of the coarse factor, which requires the pivoted path.
    """
    coarse = small_ball_sweep(spectrum, center, r, eps_grid, replicates, master_seed, mesh_fill,
                              workers, factor_method="pivoted")
    fine = small_ball_sweep(spectrum, center, r, eps_grid, replicates, master_seed,
                            0.5 * coarse.estimates[0].mesh_fill, workers, basis=coarse.factor)
    within = [c.ci_low <= f.p_hat <= c.ci_high for c, f in zip(coarse.estimates, fine.estimates)]
    return coarse, fine, within


# --------------------------------------------------- conditional variance


@dataclass(frozen=True)
class ConditionalVarianceResult:
    center: SpherePoint
    conditioners: list
    variance: float
    min_rho_sq: float
    ratio: float


def _modulus_for(spectrum, modulus):
    if modulus is None or modulus == "auto":
        if spectrum.alpha == 4.0:
            return rho
        h = (spectrum.alpha - 2.0) / 2.0
        return lambda t: np.asarray(t, dtype=float) ** h
    if modulus == "rho":
        return rho
    return modulus


def _xyz_of(points):
    return np.array([p.xyz for p in points]).reshape(-1, 3)


def conditional_variance(spectrum, center, conditioners, modulus=None):
    """Exact ``Var(T(x0) | T(x1), ..., T(xn))`` by a Schur complement.

    The conditioner block is factored with the shared jitter policy.
    ``modulus`` defaults to ``rho`` for ``alpha = 4`` and to
    ``t^((alpha-2)/2)`` otherwise; ``ratio`` divides by its smallest square.
    """
    conditioners = list(conditioners)
    n = len(conditioners)
    if not 1 <= n <= 64:
        raise DomainError("between 1 and 64 conditioners are supported")
    xyz = _xyz_of([center] + conditioners)
    k = covariance_matrix(spectrum, xyz)
    chol, _ = cholesky_with_jitter(k[1:, 1:], spectrum.total_variance)
    w = linalg.solve_triangular(chol, k[1:, 0], lower=True)
    var = float(k[0, 0] - w @ w)
    var = max(var, 0.0)
    mod = _modulus_for(spectrum, modulus)
    d = angle_between(xyz[1:], xyz[0])
    min_sq = float(np.min(np.asarray(mod(d), dtype=float) ** 2))
    ratio = var / min_sq if min_sq > 0.0 else float("nan")
    return ConditionalVarianceResult(center, conditioners, var, min_sq, ratio)


# ------------------------------------------------------------------- SLND

LAYOUTS = ("random", "collinear", "clustered", "ring")


@dataclass(frozen=True)
class SlndSummary:
    min_ratio: float
    n_configs: int
    distance_floor: float
    by_layout: dict
    by_size: dict
    argmin: dict
    ratios: np.ndarray = field(repr=False)


def _offset(center_xyz, distance, bearing):
    """Point at geodesic ``distance`` from ``center`` along ``bearing``."""
    c = np.asarray(center_xyz, dtype=float)
    ref = np.array([0.0, 0.0, 1.0]) if abs(c[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, c)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)
    t = np.cos(bearing) * e1 + np.sin(bearing) * e2
    return np.cos(distance) * c + np.sin(distance) * t


def _pairwise_ok(points, floor):
    if len(points) < 2:
        return True
    p = np.asarray(points)
    d = angle_between(p[:, None, :], p[None, :, :])
    np.fill_diagonal(d, np.inf)
    return bool(d.min() >= floor)


def make_configuration(layout, n, floor, rng, max_distance=0.95 * RHO_PEAK, tries=2000):
    """Center and ``n`` conditioners (unit vectors) honouring the distance floor."""
    c = rng.standard_normal(3)
    c /= np.linalg.norm(c)
    span = max_distance - floor
    for _ in range(tries):
        if layout == "random":
            pts = [_offset(c, floor + span * rng.random(), 2.0 * math.pi * rng.random()) for _ in range(n)]
        elif layout == "collinear":
            bearing = 2.0 * math.pi * rng.random()
            sides = rng.integers(0, 2, n)
            step = floor * (1.0 + rng.random())
            pts, count = [], [0, 0]
            for s in sides:
                count[s] += 1
                pts.append(_offset(c, min(count[s] * step, max_distance), bearing + math.pi * s))
        elif layout == "clustered":
            hub = _offset(c, floor * (2.0 + 2.0 * rng.random()), 2.0 * math.pi * rng.random())
            spread = floor * (1.0 + math.sqrt(n))
            pts = [_offset(hub, spread * math.sqrt(rng.random()), 2.0 * math.pi * rng.random()) for _ in range(n)]
        elif layout == "ring":
            radius = max(floor, floor / (2.0 * math.sin(math.pi / n)) if n > 1 else floor) * (1.0 + 0.5 * rng.random())
            b0 = 2.0 * math.pi * rng.random()
            pts = [_offset(c, radius, b0 + 2.0 * math.pi * j / n) for j in range(n)]
        else:
            raise DomainError(f"unknown layout {layout!r}")
        d0 = angle_between(np.asarray(pts), c)
        if d0.min() >= floor and d0.max() <= max_distance and _pairwise_ok(pts, floor):
            return c, np.asarray(pts)
    raise DomainError(f"could not place a {layout} configuration of {n} points")


def check_configuration(center_xyz, pts, floor):
    d0 = angle_between(np.asarray(pts), center_xyz)
    if d0.min() < floor or not _pairwise_ok(pts, floor):
        raise DomainError("configuration violates the distance floor")


def slnd_scan(spectrum, n_configs=200, distance_floor=0.05, sizes=(1, 2, 4, 8), layouts=LAYOUTS,
              seed=0, modulus=None, configurations=None, max_distance=None):
    """Minimum of ``Var(T(x0) | ...) / min_k modulus(d(x0, xk))^2`` over configurations.

    Configuration ``j`` uses layout ``layouts[j % len(layouts)]``, size
    ``sizes[(j // len(layouts)) % len(sizes)]`` and the generator of replicate
    ``j`` under ``seed``; the same seed gives the same configurations for any
    truncation. Conditioners lie within ``max_distance`` of the center
    (default ``0.95 e^-1/2``, inside the monotone domain of rho).
    """
    floor = float(distance_floor)
    if floor < 4.0 / spectrum.max_degree:
        raise DomainError(f"distance floor {floor} is below the resolution limit 4/L")
    reach = 0.95 * RHO_PEAK if max_distance is None else float(max_distance)
    if not floor < reach <= RHO_PEAK:
        raise DomainError(f"max_distance must lie in ({floor}, e^-1/2]")
    if configurations is None:
        configurations = []
        for j in range(int(n_configs)):
            layout = layouts[j % len(layouts)]
            n = sizes[(j // len(layouts)) % len(sizes)]
            c, pts = make_configuration(layout, n, floor, replicate_generator(seed, j), reach)
            configurations.append((layout, c, pts))
    ratios = []
    by_layout, by_size = {}, {}
    best = None
    for j, (layout, c, pts) in enumerate(configurations):
        check_configuration(c, pts, floor)
        res = conditional_variance(spectrum, SpherePoint.from_xyz(c), [SpherePoint.from_xyz(p) for p in pts], modulus)
        ratios.append(res.ratio)
        by_layout[layout] = min(by_layout.get(layout, math.inf), res.ratio)
        by_size[len(pts)] = min(by_size.get(len(pts), math.inf), res.ratio)
        if best is None or res.ratio < best["ratio"]:
            best = {"index": j, "layout": layout, "n": len(pts), "ratio": res.ratio, "variance": res.variance}
    ratios = np.asarray(ratios)
    return SlndSummary(float(ratios.min()), len(ratios), floor, by_layout, by_size, best, ratios)


# ------------------------------------------------------------------ Chung


@dataclass(frozen=True)
class ChungTrace:
    center: SpherePoint
    radii: list
    stats: list
    running_min: list
    exponents: list = field(default_factory=list)
    mesh_nodes: list = field(default_factory=list)
    seed: int = 0


def _rate_function(spectrum, rate):
    if rate not in (None, "auto"):
        return rate
    if spectrum.alpha == 4.0:
        return phi
    params = RateParams(spectrum.alpha, Variant.SUBCRITICAL)
    return lambda r: subcritical_rates(params, r, 0.5)[0]


def chung_radii(ratio, max_degree, k_min=None, k_max=None):
    """Exponents ``k`` with ``R^-k < 1/e`` and ``R^-k >= 4/L``."""
    if not ratio > 1.0:
        raise DomainError("ratio R must exceed 1")
    floor = 4.0 / max_degree
    if k_min is None:
        k_min = int(math.floor(1.0 / math.log(ratio))) + 1
    if ratio ** (-k_min) >= math.exp(-1.0):
        raise DomainError("the first radius must be below 1/e")
    top = int(math.floor(-math.log(floor) / math.log(ratio) + 1e-12))
    if k_max is None:
        k_max = top
    if ratio ** (-k_max) < floor * (1.0 - 1e-12):
        raise DomainError(f"R^-k_max is below the resolution floor 4/L = {floor}")
    if k_max < k_min:
        raise DomainError("no radii between 1/e and the resolution floor")
    return list(range(k_min, k_max + 1))


def chung_trace(spectrum, center, ratio=1.5, k_max=None, fill_fraction=0.1, master_seed=0,
                k_min=None, rate=None):
    """``phi(r_k) M_{r_k}(center)`` for one field along ``r_k = R^-k``.

    The field is ``sample_field(spectrum, master_seed)``; each radius gets its
    own mesh with fill ``fill_fraction * r_k``. ``rate`` defaults to the
    critical ``phi`` for ``alpha = 4`` and to ``phi_alpha`` otherwise.
    """
    ks = chung_radii(ratio, spectrum.max_degree, k_min, k_max)
    fn = _rate_function(spectrum, rate)
    sample = sample_field(spectrum, master_seed)
    t0 = synthesize_many(sample, [center])[0]
    radii, stats, nodes = [], [], []
    for k in ks:
        r = ratio ** (-k)
        mesh = cap_mesh(center, r, fill_fraction * r, probe_seed=k)
        vals = synthesize_many(sample, mesh.xyz)
        radii.append(r)
        stats.append(float(fn(r)) * float(np.max(np.abs(vals - t0))))
        nodes.append(len(mesh))
    running = np.minimum.accumulate(stats).tolist()
    return ChungTrace(center, radii, stats, running, ks, nodes, int(master_seed))


# ------------------------------------------------------- band independence


def block_independence(spectrum, bands, points, replicates, master_seed, workers=1, block=DEFAULT_BLOCK):
    """Largest absolute empirical correlation between distinct band fields.

    Correlations are taken over replicates for every pair of bands and every
    pair of points.
    """
    bands = list(bands)
    for b in bands:
        b.validate(spectrum.max_degree)
    for i in range(len(bands)):
        for j in range(i + 1, len(bands)):
            if bands[i].overlaps(bands[j]):
                raise DomainError(f"bands {bands[i]} and {bands[j]} overlap")
    if len(bands) < 2:
        return 0.0
    if int(replicates) != replicates or replicates < 2:
        raise DomainError("need at least two replicates")
    pts = list(points)
    theta = np.array([p.theta for p in pts])
    phis = np.array([p.phi for p in pts])
    L = spectrum.max_degree
    h = kernels.harmonics_matrix(L, theta, phis)
    ell = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
    scale = np.sqrt(spectrum.c_ells)[ell]
    masks = [((ell > b.low) & (ell <= b.high)).astype(float) * scale for b in bands]

    def run(a, b):
        coeffs = np.zeros((b - a, (L + 1) ** 2))
        for j, i in enumerate(range(a, b)):
            coeffs[j, 1:] = replicate_generator(master_seed, i).standard_normal(L * (L + 2))
        return np.stack([(coeffs * m) @ h.T for m in masks])

    vals = np.concatenate(_run_blocks(run, int(replicates), block, workers), axis=1)
    vals = vals - vals.mean(axis=1, keepdims=True)
    vals /= np.sqrt(np.sum(vals**2, axis=1, keepdims=True))
    worst = 0.0
    for i in range(len(bands)):
        for j in range(i + 1, len(bands)):
            corr = vals[i].T @ vals[j]
            worst = max(worst, float(np.max(np.abs(corr))))
    return worst

