"""Legendre functions, real spherical harmonics and the real Lambert W branches.

Conventions
-----------
* ``P_l^m`` carries no Condon-Shortley phase.
* Real harmonics are normalized so that the addition formula
  ``sum_m Y_lm(x) Y_lm(y) = (2l+1)/(4 pi) P_l(<x, y>)`` holds exactly; in
  particular ``Y_00 = 1/sqrt(4 pi)``.
* Orders ``m > 0`` use ``cos(m phi)`` and orders ``m < 0`` use
  ``sin(|m| phi)``.
"""
from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

from ._backend import kernels
from ._recurrence import normalized_tables
from .errors import ConvergenceError, DomainError

MAX_DEGREE = 4096
INV_E = math.exp(-1.0)
_HALLEY_MAX_STEPS = 100


@dataclass(frozen=True)
class HarmonicIndex:
    """A spherical-harmonic index ``(l, m)`` with ``|m| <= l``."""

    degree: int
    order: int = 0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 0:
            raise DomainError(f"degree must be a nonnegative integer, got {self.degree!r}")
        if int(self.order) != self.order or abs(self.order) > self.degree:
            raise DomainError(f"order must satisfy |m| <= l, got l={self.degree}, m={self.order}")

    def eigenvalue(self):
        """Laplace-Beltrami eigenvalue ``l(l+1)`` (the operator has ``-l(l+1)``)."""
        return self.degree * (self.degree + 1)

    @property
    def flat(self):
        """Position in the canonical ``l*l + l + m`` ordering."""
        return self.degree * self.degree + self.degree + self.order


class WBranch(Enum):
    PRINCIPAL = "principal"
    LOWER = "lower"


def _check_t(t):
    arr = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(np.abs(arr) > 1.0):
        raise DomainError("Legendre argument must lie in [-1, 1]")
    return arr


def legendre_p(degree, t, max_degree=MAX_DEGREE):
    """Legendre polynomial ``P_l(t)`` by the three-term recurrence.

    Accepts a scalar or an array ``t``; returns the same shape. The result is
    clipped to ``[-1, 1]`` to remove rounding excursions.
    """
    if int(degree) != degree or degree < 0:
        raise DomainError(f"degree must be a nonnegative integer, got {degree!r}")
    if degree > max_degree:
        raise DomainError(f"degree {degree} exceeds the maximum {max_degree}")
    arr = _check_t(t)
    p_prev = np.ones_like(arr)
    if degree == 0:
        out = p_prev
    else:
        p_cur = arr.copy()
        for ell in range(1, degree):
            p_prev, p_cur = p_cur, ((2 * ell + 1) * arr * p_cur - ell * p_prev) / (ell + 1)
        out = np.clip(p_cur, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def assoc_legendre(index, t):
    """Unnormalized associated Legendre function ``P_l^m(t)`` for ``m >= 0``.

    Intended for small degrees and oracle testing; the value overflows double
    precision for roughly ``l > 150`` at large ``m``, in which case
    ``OverflowError`` is raised and :func:`real_sph_harm` should be used.
    """
    ell, m = index.degree, index.order
    if m < 0:
        raise DomainError("assoc_legendre requires m >= 0")
    if ell > MAX_DEGREE:
        raise DomainError(f"degree {ell} exceeds the maximum {MAX_DEGREE}")
    t = float(_check_t(t))
    if m > 0 and abs(t) == 1.0:
        return 0.0
    s = math.sqrt((1.0 - t) * (1.0 + t))
    p_mm = 1.0
    for k in range(1, m + 1):
        p_mm *= (2 * k - 1) * s
    if ell == m:
        value = p_mm
    else:
        p_prev, p_cur = p_mm, t * (2 * m + 1) * p_mm
        for k in range(m + 2, ell + 1):
            p_prev, p_cur = p_cur, (t * (2 * k - 1) * p_cur - (k + m - 1) * p_prev) / (k - m)
        value = p_cur
    if not math.isfinite(value):
        raise OverflowError(f"P_{ell}^{m} overflows double precision; use normalized harmonics")
    return value


def _normalized_column(ell, m, theta):
    """Fully normalized ``sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) P_l^m(cos theta)``."""
    diag, sub, a, b = normalized_tables(ell)
    t, s = math.cos(theta), math.sin(theta)
    lam = diag[0]
    for k in range(1, m + 1):
        lam *= s * diag[k]
    if ell == m:
        return lam
    prev, cur = lam, t * sub[m] * lam
    for k in range(m + 2, ell + 1):
        prev, cur = cur, a[k, m] * (t * cur - b[k, m] * prev)
    return cur


def real_sph_harm(index, colatitude, longitude):
    """Real spherical harmonic ``Y_lm(theta, phi)`` via the normalized recurrence."""
    if not 0.0 <= colatitude <= math.pi:
        raise DomainError("colatitude must lie in [0, pi]")
    if not math.isfinite(longitude):
        raise DomainError("longitude must be finite")
    ell, m = index.degree, index.order
    if ell > MAX_DEGREE:
        raise DomainError(f"degree {ell} exceeds the maximum {MAX_DEGREE}")
    lam = _normalized_column(ell, abs(m), colatitude)
    if m == 0:
        return lam
    if m > 0:
        return math.sqrt(2.0) * lam * math.cos(m * longitude)
    return math.sqrt(2.0) * lam * math.sin(-m * longitude)


def harmonics_matrix(lmax, colatitude, longitude):
    """All real harmonics up to ``lmax`` at many points.

    Returns an array of shape ``(n, (lmax+1)**2)`` whose column
    ``l*l + l + m`` is ``Y_lm`` evaluated at the ``n`` points.
    """
    theta = np.atleast_1d(np.asarray(colatitude, dtype=float))
    phi = np.atleast_1d(np.asarray(longitude, dtype=float))
    return kernels.harmonics_matrix(int(lmax), theta, phi)


# ---------------------------------------------------------------- Lambert W


def _lambert_guess(branch, x):
    if branch is WBranch.PRINCIPAL:
        if x == 0.0:
            return 0.0
        if x < -0.25:
            # branch-point expansion in p = sqrt(2(1 + e x))
            p = math.sqrt(max(2.0 * (1.0 + math.e * x), 0.0))
            return -1.0 + p - p * p / 3.0
        if x < 3.0:
            return x * (1.0 - x) if x < 0.5 else math.log1p(x)
        lx = math.log(x)
        return lx - math.log(lx)
    if x < -0.25:
        p = -math.sqrt(max(2.0 * (1.0 + math.e * x), 0.0))
        return -1.0 + p - p * p / 3.0
    l1 = math.log(-x)
    l2 = math.log(-l1)
    return l1 - l2


def _lambert_scalar(branch, x):
    if branch is WBranch.LOWER:
        if not -INV_E <= x < 0.0:
            raise DomainError("lower branch W_-1 requires -1/e <= x < 0")
    elif x < -INV_E:
        raise DomainError("principal branch W_0 requires x >= -1/e")
    if math.isinf(x):
        return math.inf
    if x == -INV_E or 1.0 + math.e * x <= 0.0:
        return -1.0
    if x == 0.0:
        return 0.0
    y = _lambert_guess(branch, x)
    for _ in range(_HALLEY_MAX_STEPS):
        ey = math.exp(y)
        f = y * ey - x
        if f == 0.0:
            return y
        yp1 = y + 1.0
        if yp1 == 0.0:
            yp1 = 1e-300
        step = f / (ey * yp1 - (y + 2.0) * f / (2.0 * yp1))
        y_new = y - step
        if branch is WBranch.PRINCIPAL and y_new < -1.0:
            y_new = 0.5 * (y - 1.0)
        elif branch is WBranch.LOWER and y_new > -1.0:
            y_new = 0.5 * (y - 1.0)
        if abs(y_new - y) <= 4.0 * np.finfo(float).eps * (1.0 + abs(y_new)):
            return y_new
        y = y_new
    raise ConvergenceError(f"Halley iteration for W({x!r}) on branch {branch.value} hit the step cap")


def lambert_w(branch, x):
    """Real Lambert W: the ``y`` with ``y * exp(y) = x`` on the chosen branch.

    ``branch`` is a :class:`WBranch` (or its string value). ``x`` may be a
    scalar or an array; arrays are evaluated elementwise.
    """
    branch = WBranch(branch)
    if np.ndim(x) == 0:
        return _lambert_scalar(branch, float(x))
    arr = np.asarray(x, dtype=float)
    out = np.empty(arr.shape)
    for idx, val in np.ndenumerate(arr):
        out[idx] = _lambert_scalar(branch, float(val))
    return out


def lambert_wm1_asymptotic_ratio(x):
    """``W_-1(-x) / log(x)`` for ``0 < x < 1/e``; tends to 1 as ``x -> 0+``."""
    if not 0.0 < x < INV_E:
        raise DomainError("x must lie in (0, 1/e)")
    return lambert_w(WBranch.LOWER, -x) / math.log(x)
