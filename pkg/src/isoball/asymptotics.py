"""Rate functions, small-ball regression fits and checks of two elementary bounds."""
from dataclasses import asdict, dataclass, field
from enum import Enum
import math

import numpy as np
from scipy import integrate, special

from .errors import ConvergenceError, DomainError, MeshResolutionError
from .spheregeom import covering_number, psi_bound, resolve_metric

INV_E = math.exp(-1.0)
WILSON_Z99 = 2.5758293035489


class Variant(Enum):
    CRITICAL = "critical"
    SUBCRITICAL = "subcritical"


@dataclass(frozen=True)
class RateParams:
    alpha: float
    variant: Variant = Variant.CRITICAL

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        if variant is Variant.CRITICAL and self.alpha != 4.0:
            raise DomainError("the critical rates require alpha = 4")
        if variant is Variant.SUBCRITICAL and not 2.0 < self.alpha < 4.0:
            raise DomainError("subcritical rates require 2 < alpha < 4")


def _check_r(r):
    if not 0.0 < r < INV_E:
        raise DomainError("r must lie in (0, 1/e)")


def phi(r):
    """``sqrt(log|log r| / (r^2 |log r|))``, natural logs."""
    _check_r(r)
    lr = abs(math.log(r))
    return math.sqrt(math.log(lr) / (r * r * lr))


def psi(r, eps):
    """``r^2 |ln eps| / eps^2``."""
    if not 0.0 < eps < 1.0:
        raise DomainError("eps must lie in (0, 1)")
    if not r > eps:
        raise DomainError("psi is used for r > eps")
    return psi_bound(r, eps)


def subcritical_rates(params, r, eps):
    """``(phi_alpha(r), theta_alpha(eps))`` for ``2 < alpha < 4``.

    ``phi_alpha(r) = (log|log r| / r^2)^((alpha-2)/4)`` and
    ``theta_alpha(eps) = -eps^(4/(alpha-2))``.
    """
    if params.variant is not Variant.SUBCRITICAL:
        raise DomainError("subcritical_rates needs a subcritical RateParams")
    _check_r(r)
    if not 0.0 < eps < 1.0:
        raise DomainError("eps must lie in (0, 1)")
    a = params.alpha
    phi_a = (math.log(abs(math.log(r))) / (r * r)) ** ((a - 2.0) / 4.0)
    return phi_a, -(eps ** (4.0 / (a - 2.0)))


# ------------------------------------------------------------------- fits


@dataclass(frozen=True)
class RateFit:
    """Origin-constrained fit of ``-log p`` on ``psi``.

    ``intercept`` comes from a separate free-intercept fit and is only a
    diagnostic. ``r_squared`` is the uncentered coefficient of determination
    appropriate for a model without intercept. ``p_squared`` is set in
    ``fixed_r`` mode.
    """

    slope: float
    intercept: float
    r_squared: float
    c_plus: float
    c_minus: float
    mode: str = "fixed_r"
    p_squared: float = float("nan")
    grid: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _as_point(pt):
    if hasattr(pt, "p_hat"):
        return pt.r, pt.eps, pt.p_hat, (pt.ci_low, pt.ci_high)
    r, eps, p_hat, ci = pt
    return float(r), float(eps), float(p_hat), (float(ci[0]), float(ci[1]))


def rate_fit(points, mode="fixed_r", z=WILSON_Z99):
    """Weighted least squares of ``-log p_hat`` against ``psi(r, eps)`` through 0.

    ``points`` holds ``(r, eps, p_hat, (ci_low, ci_high))`` tuples or objects
    with those attributes. Weights are inverse variances of ``log p_hat``
    read off the interval width (``z`` standard errors per side).
    """
    if mode not in ("fixed_r", "joint"):
        raise DomainError(f"unknown fit mode {mode!r}")
    pts = [_as_point(p) for p in points]
    if len(pts) < 4:
        raise DomainError("rate_fit needs at least 4 points")
    if mode == "fixed_r" and len({p[0] for p in pts}) != 1:
        raise DomainError("fixed_r mode needs a single radius")
    r = np.array([p[0] for p in pts])
    eps = np.array([p[1] for p in pts])
    p_hat = np.array([p[2] for p in pts])
    lo = np.array([p[3][0] for p in pts])
    hi = np.array([p[3][1] for p in pts])
    if np.any((p_hat <= 0.0) | (p_hat >= 1.0)):
        raise DomainError("every p_hat must lie in (0, 1)")
    if np.any((lo <= 0.0) | (hi <= lo)):
        raise DomainError("degenerate confidence interval")
    x = np.array([psi(ri, ei) for ri, ei in zip(r, eps)])
    y = -np.log(p_hat)
    sd = (np.log(hi) - np.log(lo)) / (2.0 * z)
    w = 1.0 / sd**2
    sxx = float(np.sum(w * x * x))
    if not sxx > 0.0:
        raise DomainError("singular design")
    slope = float(np.sum(w * x * y)) / sxx
    resid = y - slope * x
    r2 = 1.0 - float(np.sum(w * resid**2)) / float(np.sum(w * y * y))
    design = np.column_stack([np.ones_like(x), x]) * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(design, y * np.sqrt(w), rcond=None)
    ratios = y / x
    grid = [
        {"r": float(a), "eps": float(b), "p_hat": float(c), "psi": float(d), "ratio": float(e)}
        for a, b, c, d, e in zip(r, eps, p_hat, x, ratios)
    ]
    return RateFit(
        slope=slope,
        intercept=float(coef[0]),
        r_squared=min(max(r2, 0.0), 1.0),
        c_plus=float(ratios.max()),
        c_minus=float(ratios.min()),
        mode=mode,
        p_squared=slope if mode == "fixed_r" else float("nan"),
        grid=grid,
    )


# ------------------------------------------------------------------ bounds


def legendre_gaps(ell_max, theta):
    """Rows ``1 - P_l(cos theta)`` for ``l = 1..ell_max``, shape ``(ell_max, len(theta))``."""
    u = 2.0 * np.sin(0.5 * np.asarray(theta, dtype=float)) ** 2
    out = np.empty((ell_max,) + u.shape)
    q_prev = np.zeros_like(u)
    q_cur = u.copy()
    out[0] = q_cur
    for ell in range(1, ell_max):
        q_prev, q_cur = q_cur, (2.0 * ell + 1.0) / (ell + 1.0) * (u + q_cur - u * q_cur) - ell / (ell + 1.0) * q_prev
        out[ell] = q_cur
    return out


def legendre_bound_ratio(ell, theta):
    """``(1 - P_l(cos theta)) / (l^2 theta^2 + l^4 theta^4)``."""
    gap = legendre_gaps(int(ell), np.atleast_1d(theta))[-1]
    lt2 = (ell * np.atleast_1d(theta)) ** 2
    out = gap / (lt2 + lt2 * lt2)
    return float(out[0]) if np.ndim(theta) == 0 else out


def legendre_bound_check(theta_max, ell_max, n_theta=400, theta_min=1e-4):
    """Sup of ``(1 - P_l(cos theta)) / (l^2 theta^2 + l^4 theta^4)`` over a grid.

    The grid is ``l = 1..ell_max`` by a geometric ``theta`` grid in
    ``[theta_min, theta_max]``. Raises if ``1 - P_l(cos theta) <= 0`` anywhere.
    """
    if not 0.0 < theta_max <= 0.2:
        raise DomainError("theta_max must lie in (0, 0.2]")
    if int(ell_max) != ell_max or ell_max < 1:
        raise DomainError("ell_max must be a positive integer")
    theta = np.geomspace(min(theta_min, theta_max), theta_max, n_theta)
    gaps = legendre_gaps(int(ell_max), theta)
    if np.any(gaps <= 0.0):
        raise ConvergenceError("1 - P_l(cos theta) is not positive on the grid")
    lt2 = (np.arange(1, ell_max + 1)[:, None] * theta[None, :]) ** 2
    return float(np.max(gaps / (lt2 + lt2 * lt2)))


@dataclass(frozen=True)
class IntegralBound:
    lhs: float
    rhs_ratio: float


def integral_bound_check(p, a):
    """``int_0^a u^-p sqrt(-ln u) du`` and its ratio to ``a^(1-p) sqrt(-ln a)``.

    With ``u = a e^-v`` the integral becomes
    ``a^(1-p) int_0^inf e^-(1-p)v sqrt(S + v) dv`` with ``S = -ln a``, which
    removes the endpoint singularity and the dependence on the size of ``a``.
    """
    if not p < 1.0:
        raise DomainError("p must be below 1")
    if not 0.0 < a < 1.0:
        raise DomainError("a must lie in (0, 1)")
    s = -math.log(a)
    k = 1.0 - p
    val, err, info = integrate.quad(
        lambda v: math.exp(-k * v) * math.sqrt(s + v), 0.0, math.inf,
        epsabs=0.0, epsrel=1e-12, limit=200, full_output=True,
    )[:3]
    if err > 1e-8 * abs(val):
        raise ConvergenceError(f"quadrature did not converge (error estimate {err:.3g})")
    return IntegralBound(lhs=math.exp(-k * s) * val, rhs_ratio=val / math.sqrt(s))


def integral_bound_closed_form(p, a):
    """Closed form ``Gamma(3/2, (1-p) S) / (1-p)^(3/2)`` with ``S = -ln a``."""
    k = 1.0 - p
    s = -math.log(a)
    return float(special.gammaincc(1.5, k * s) * special.gamma(1.5)) / k**1.5


# ---------------------------------------------------------------- entropy


def entropy_integral_from_counts(eps, counts, upper, floor_fn=None):
    """``int_0^upper sqrt(log N(e)) de`` from counts on a decreasing grid.

    ``N`` is taken as the given counts on the grid (trapezoid rule), 1 above
    ``eps[0]``, and ``floor_fn`` (a majorant of ``log N``) below the last
    grid point. Without ``floor_fn`` the segment below the grid is bounded by
    the last count.
    """
    eps = np.asarray(eps, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if eps.ndim != 1 or eps.size != counts.size or eps.size == 0:
        raise DomainError("eps and counts must be matching 1-D arrays")
    if np.any(np.diff(eps) >= 0.0):
        raise DomainError("eps grid must be strictly decreasing")
    if np.any(counts < 1.0):
        raise DomainError("covering counts are at least 1")
    if not upper > 0.0:
        raise DomainError("upper limit must be positive")
    below = eps < upper
    above = ~below
    # N is nonincreasing; at the upper limit use the nearest grid count at or above it
    n_upper = counts[above][-1] if above.any() else counts[0]
    e = np.concatenate([[upper], eps[below]])
    n = np.concatenate([[n_upper], counts[below]])
    g = np.sqrt(np.log(n))
    total = float(np.sum(0.5 * (g[1:] + g[:-1]) * (e[:-1] - e[1:])))
    e_min = float(e[-1])
    if floor_fn is None:
        total += e_min * float(g[-1])
    else:
        tail, _ = integrate.quad(lambda t: math.sqrt(max(floor_fn(t), 0.0)), 0.0, e_min, limit=200)
        total += tail
    return total


def entropy_integral(mesh, metric, upper=None, max_levels=40):
    """Dudley-type entropy integral of the mesh for ``"rho"`` or a spectrum.

    Covering counts are computed on the dyadic grid ``D 2^-j`` down to the
    mesh resolution floor (four times the metric size of the fill distance).
    Below the floor ``log N`` is majorized by ``log(K psi(r, e))`` with ``K``
    the largest observed ``N / psi``.
    """
    m = resolve_metric(metric)
    diameter = float(m(mesh.geodesic_diameter()))
    d = diameter if upper is None else float(upper)
    if not d > 0.0:
        raise DomainError("upper limit must be positive")
    floor = 4.0 * float(m(mesh.fill_distance))
    eps, counts = [], []
    e = d
    for _ in range(max_levels):
        if e < floor:
            break
        eps.append(e)
        counts.append(covering_number(mesh, m, e).count)
        e *= 0.5
    if len(eps) < 2:
        raise MeshResolutionError("mesh too coarse for an entropy integral at this scale")
    r = mesh.radius
    ks = [c / psi_bound(r, x) for x, c in zip(eps, counts) if x < 1.0]
    k = max(ks + [1.0])

    def floor_fn(t):
        return math.log(k * psi_bound(r, t)) if 0.0 < t < 1.0 else 0.0

    return entropy_integral_from_counts(eps, counts, d, floor_fn)
