"""Angular power spectra ``C_l = G(l) l^-alpha`` and the quantities they induce.

The covariance of the truncated field is
``Gamma(x, y) = sum_{l=1}^{L} C_l (2l+1)/(4 pi) P_l(<x, y>)``
and its canonical metric is
``d_T(x, y)^2 = sum_l C_l (2l+1)/(2 pi) (1 - P_l(cos d(x, y)))``.
The latter is evaluated through the ``1 - P_l`` recurrence so that small
distances do not suffer cancellation.
"""
from dataclasses import dataclass, field
import csv
import math

import numpy as np

from ._backend import kernels
from .errors import DomainError, TruncationError
from .spheregeom import RHO_PEAK, angle_between, chord_sq

FOUR_PI = 4.0 * math.pi


# ------------------------------------------------------------ modulations


@dataclass(frozen=True)
class ConstantModulation:
    value: float = 1.0

    def __post_init__(self):
        if not self.value > 0.0:
            raise DomainError("constant modulation must be positive")

    def __call__(self, ell):
        return np.full(np.shape(ell), float(self.value))

    @property
    def lower(self):
        return float(self.value)

    @property
    def upper(self):
        return float(self.value)

    def describe(self):
        return f"const:{self.value!r}"


@dataclass(frozen=True)
class OscillatingModulation:
    """``G(l) = a + b sin^2(log l)``, a bounded log-periodic wobble."""

    a: float = 1.0
    b: float = 0.5

    def __post_init__(self):
        if not (self.a > 0.0 and self.a + self.b > 0.0):
            raise DomainError("oscillating modulation must stay positive")

    def __call__(self, ell):
        ell = np.asarray(ell, dtype=float)
        return self.a + self.b * np.sin(np.log(ell)) ** 2

    @property
    def lower(self):
        return min(self.a, self.a + self.b)

    @property
    def upper(self):
        return max(self.a, self.a + self.b)

    def describe(self):
        return f"osc:{self.a!r},{self.b!r}"


@dataclass(frozen=True, eq=False)
class TabulatedModulation:
    """Tabulated ``G(l)`` for ``l = 1..len(values)``.

    ``bound`` is the constant ``c >= 1`` with ``1/c <= G <= c``; it is checked
    on construction and, when omitted, set to the tightest such value.
    """

    values: np.ndarray
    bound: float = None
    source: str = "table"

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0 or np.any(~np.isfinite(vals)) or np.any(vals <= 0.0):
            raise DomainError("tabulated modulation needs finite positive values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        tight = max(1.0, float(vals.max()), 1.0 / float(vals.min()))
        if self.bound is None:
            object.__setattr__(self, "bound", tight)
        elif self.bound < tight * (1.0 - 1e-12):
            raise DomainError(f"tabulated G violates the bound c={self.bound} (needs {tight})")

    def __call__(self, ell):
        idx = np.asarray(ell, dtype=int) - 1
        if np.any(idx < 0) or np.any(idx >= self.values.size):
            raise DomainError("degree outside the tabulated range")
        return self.values[idx]

    @property
    def lower(self):
        return 1.0 / self.bound

    @property
    def upper(self):
        return float(self.bound)

    def describe(self):
        return f"table:{self.source}"


def parse_modulation(spec):
    """Parse ``const:V``, ``osc:A,B`` or ``table:PATH`` (PATH holds ``ell,G``)."""
    if not isinstance(spec, str):
        return spec
    kind, _, arg = spec.partition(":")
    if kind == "const":
        return ConstantModulation(float(arg or 1.0))
    if kind == "osc":
        a, b = (float(v) for v in arg.split(","))
        return OscillatingModulation(a, b)
    if kind == "table":
        ell, vals = _read_two_column(arg, "G")
        return TabulatedModulation(vals, source=arg)
    raise DomainError(f"unknown modulation spec {spec!r}")


def _read_two_column(path, name):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    if len(header) != 2 or header[0].strip() != "ell":
        raise DomainError(f"{path}: expected a header row 'ell,{name}'")
    ell = np.array([int(r[0]) for r in body])
    vals = np.array([float(r[1]) for r in body])
    if ell.size == 0 or not np.array_equal(ell, np.arange(1, ell.size + 1)):
        raise DomainError(f"{path}: degrees must be contiguous from 1")
    return ell, vals


# ----------------------------------------------------------------- models


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    """Truncated angular power spectrum ``C_l = G(l) l^-alpha``, ``1 <= l <= L``.

    With ``include_monopole`` the constant ``monopole`` is used as ``C_0``;
    by default ``C_0 = 0``.
    """

    alpha: float
    max_degree: int
    modulation: object = field(default_factory=ConstantModulation)
    include_monopole: bool = False
    monopole: float = 0.0
    c_ells: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    total_variance: float = field(init=False)

    def __post_init__(self):
        if not self.alpha > 2.0:
            raise DomainError("alpha must exceed 2 for finite variance")
        object.__setattr__(self, "alpha", float(self.alpha))
        if int(self.max_degree) != self.max_degree or self.max_degree < 1:
            raise DomainError("max_degree must be a positive integer")
        object.__setattr__(self, "max_degree", int(self.max_degree))
        object.__setattr__(self, "modulation", parse_modulation(self.modulation))
        if self.include_monopole and self.monopole < 0.0:
            raise DomainError("monopole variance must be nonnegative")
        ell = np.arange(self.max_degree + 1, dtype=float)
        c = np.zeros(self.max_degree + 1)
        c[1:] = self.modulation(ell[1:]) * ell[1:] ** (-float(self.alpha))
        if np.any(c[1:] <= 0.0):
            raise DomainError("power spectrum must be strictly positive")
        if self.include_monopole:
            c[0] = self.monopole
        w = c * (2.0 * ell + 1.0) / FOUR_PI
        c.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "c_ells", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "total_variance", float(math.fsum(w)))

    @property
    def bound(self):
        """The constant ``c >= 1`` with ``1/c <= G(l) <= c``."""
        return max(1.0, self.modulation.upper, 1.0 / self.modulation.lower)

    @classmethod
    def from_csv(cls, path, alpha, bound=None):
        """Load a tabulated ``ell,C_ell`` spectrum; ``G`` is recovered as ``C_l l^alpha``."""
        ell, c = _read_two_column(path, "C_ell")
        g = c * ell.astype(float) ** float(alpha)
        return cls(alpha, int(ell[-1]), TabulatedModulation(g, bound=bound, source=str(path)))

    def with_max_degree(self, max_degree):
        return PowerSpectrum(self.alpha, max_degree, self.modulation, self.include_monopole, self.monopole)

    def describe(self):
        return {
            "alpha": self.alpha,
            "lmax": self.max_degree,
            "modulation": self.modulation.describe(),
            "include_monopole": self.include_monopole,
            "monopole": self.monopole,
        }


def c_ell(spectrum, degree):
    """``C_l = G(l) l^-alpha`` for ``1 <= l <= L``."""
    if int(degree) != degree or not 1 <= degree <= spectrum.max_degree:
        raise DomainError(f"degree must lie in [1, {spectrum.max_degree}]")
    return float(spectrum.c_ells[int(degree)])


def covariance_of_cosine(spectrum, t):
    """``Gamma`` as a function of the inner product ``t = <x, y>``."""
    t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    return kernels.legendre_series(t, spectrum.weights)


def metric_sq_of_distance(spectrum, d):
    """``d_T^2`` as a function of the geodesic distance ``d``."""
    u = 0.5 * chord_sq(d)
    return 2.0 * kernels.legendre_gap_series(u, spectrum.weights)


def canonical_metric_of_distance(spectrum, d):
    return np.sqrt(np.maximum(metric_sq_of_distance(spectrum, d), 0.0))


def covariance(spectrum, x, y):
    """Covariance ``Gamma(x, y)`` of the truncated field."""
    return float(covariance_of_cosine(spectrum, float(np.dot(x.xyz, y.xyz))))


def canonical_metric(spectrum, x, y):
    """``d_T(x, y) = sqrt(E[(T(x) - T(y))^2])``."""
    return float(canonical_metric_of_distance(spectrum, geodesic_distance_xy(x, y)))


def geodesic_distance_xy(x, y):
    return float(angle_between(x.xyz, y.xyz))


def covariance_matrix(spectrum, xyz_a, xyz_b=None):
    """Covariance matrix between two point sets given as unit vectors."""
    xyz_a = np.asarray(xyz_a, dtype=float)
    sym = xyz_b is None
    xyz_b = xyz_a if sym else np.asarray(xyz_b, dtype=float)
    t = np.clip(xyz_a @ xyz_b.T, -1.0, 1.0)
    k = covariance_of_cosine(spectrum, t)
    if sym:
        k = 0.5 * (k + k.T)
    return k


def metric_sq_matrix(spectrum, xyz_a, xyz_b):
    """``d_T^2`` between every pair of rows of two unit-vector arrays."""
    diff_sq = (
        np.sum(xyz_a**2, axis=1)[:, None] + np.sum(xyz_b**2, axis=1)[None, :] - 2.0 * xyz_a @ xyz_b.T
    )
    u = 0.5 * np.clip(diff_sq, 0.0, 4.0)
    return 2.0 * kernels.legendre_gap_series(u, spectrum.weights)


def increment_covariance_matrix(spectrum, center_xyz, xyz_a, xyz_b=None):
    """Covariance of the increments ``T(y) - T(center)``.

    ``Cov = (d_T^2(c, y) + d_T^2(c, y') - d_T^2(y, y')) / 2``.
    """
    center_xyz = np.asarray(center_xyz, dtype=float).reshape(1, 3)
    xyz_a = np.asarray(xyz_a, dtype=float)
    sym = xyz_b is None
    xyz_b = xyz_a if sym else np.asarray(xyz_b, dtype=float)
    da = _exact_center_metric_sq(spectrum, center_xyz, xyz_a)
    db = da if sym else _exact_center_metric_sq(spectrum, center_xyz, xyz_b)
    k = 0.5 * (da[:, None] + db[None, :] - metric_sq_matrix(spectrum, xyz_a, xyz_b))
    if sym:
        k = 0.5 * (k + k.T)
        np.fill_diagonal(k, da)
    return k


def _exact_center_metric_sq(spectrum, center_xyz, xyz):
    d = angle_between(xyz, center_xyz)
    return metric_sq_of_distance(spectrum, d)


# ------------------------------------------------------------------- rho


class RhoModulus:
    """``rho(t) = t sqrt(|ln t|)`` with ``rho(0) = 0``; increasing on ``(0, e^-1/2)``."""

    peak = RHO_PEAK

    def __call__(self, t):
        return rho(t)

    def check_monotone_domain(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t <= 0.0) or np.any(t > self.peak):
            raise DomainError(f"rho is only monotone on (0, {self.peak}]")
        return t


def rho(t, strict=False):
    """``t sqrt(|ln t|)``, ``rho(0) = 0``; ``strict`` rejects ``t = 1`` (where rho vanishes)."""
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("rho is defined for t >= 0")
    if strict and np.any(arr == 1.0):
        raise DomainError("rho(1) = 0 is not strictly positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = arr * np.sqrt(np.abs(np.log(arr)))
    out = np.where(arr == 0.0, 0.0, out)
    return float(out) if out.ndim == 0 else out


def truncation_tail(spectrum, cutoff):
    """Upper bound on ``sum_{l > cutoff} C_l (2l+1)/(4 pi)`` by integral comparison.

    Uses ``C_l <= sup G * l^-alpha`` and that ``(2l+1) l^-alpha`` decreases.
    """
    if int(cutoff) != cutoff or cutoff < 1:
        raise DomainError("cutoff must be a positive integer")
    a = float(spectrum.alpha)
    k = float(cutoff)
    integral = 2.0 * k ** (2.0 - a) / (a - 2.0) + k ** (1.0 - a) / (a - 1.0)
    return spectrum.modulation.upper * integral / FOUR_PI


def metric_equivalence_scan(spectrum, distances, tail_fraction=0.01):
    """Bracket ``[D_low, D_high]`` of ``d_T^2(d) / rho(d)^2`` over a distance grid.

    Requires ``alpha = 4`` and distances inside the monotone domain of rho.
    The truncation must be certified: the bound ``4 * tail(L)`` on the missing
    part of ``d_T^2`` is below ``tail_fraction`` of ``d_T^2`` at the smallest
    distance.
    """
    if spectrum.alpha != 4.0:
        raise DomainError("metric equivalence with rho is the alpha = 4 statement")
    d = RhoModulus().check_monotone_domain(np.atleast_1d(np.asarray(distances, dtype=float)))
    d_sq = metric_sq_of_distance(spectrum, d)
    missing = 4.0 * truncation_tail(spectrum, spectrum.max_degree)
    if missing > tail_fraction * float(d_sq[np.argmin(d)]):
        raise TruncationError(
            f"L={spectrum.max_degree} too small: tail bound {missing:.3g} vs d_T^2 {float(d_sq.min()):.3g}"
        )
    ratio = d_sq / rho(d) ** 2
    return float(ratio.min()), float(ratio.max())
