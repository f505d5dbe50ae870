"""Realizations of the truncated field, band decompositions and Gaussian factors.

Coefficient layout
------------------
A :class:`FieldSample` stores ``a_lm`` for ``1 <= l <= L`` in the order
``l`` ascending and, within a degree, ``m = -l, ..., l``; the entry for
``(l, m)`` sits at ``l*l + l + m - 1``. The draws come from
``numpy.random.Generator(PCG64(seed)).standard_normal(L*(L+2))`` and, when the
spectrum carries a monopole, one further draw for ``a_00``.

Replicate streams
-----------------
Replicate ``i`` of a Monte Carlo run under master seed ``s`` uses
``Generator(PCG64(derive_seed(s, i)))``. ``derive_seed`` is a SplitMix64
finalizer, so the result of any experiment depends only on ``s`` and never on
how replicates are scheduled.
"""
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
import math

import numpy as np
from scipy import linalg

from ._backend import kernels
from .errors import DomainError, FactorizationError
from .spectrum import PowerSpectrum, truncation_tail  # noqa: F401  (re-exported)
from .spheregeom import to_angles

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
CHOLESKY_MAX_NODES = 4096
JITTER_SCALE = 1e-12
JITTER_ESCALATIONS = 3
BLOCK_SIZE_MAX_N = 26


def derive_seed(master_seed, index):
    """SplitMix64 mix of ``(master_seed, index)`` into a 64-bit seed."""
    z = (int(master_seed) + (int(index) + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replicate_generator(master_seed, index):
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, index)))


def _check_seed(seed):
    if int(seed) != seed or not 0 <= seed <= MASK64:
        raise DomainError("seed must be an unsigned 64-bit integer")
    return int(seed)


# ----------------------------------------------------------------- samples


@dataclass(frozen=True, eq=False)
class FieldSample:
    spectrum: PowerSpectrum
    coefficients: np.ndarray
    seed: int
    monopole_coefficient: float = 0.0

    def __post_init__(self):
        coeffs = np.ascontiguousarray(self.coefficients, dtype=float)
        L = self.spectrum.max_degree
        if coeffs.shape != (L * (L + 2),):
            raise DomainError(f"expected {L * (L + 2)} coefficients, got {coeffs.shape}")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def max_degree(self):
        return self.spectrum.max_degree

    def weighted(self, low=0, high=None):
        """Flat ``(L+1)^2`` vector of ``sqrt(C_l) a_lm`` restricted to ``low < l <= high``."""
        L = self.max_degree
        high = L if high is None else high
        out = np.zeros((L + 1) ** 2)
        out[1:] = self.coefficients
        ell = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
        out *= np.sqrt(self.spectrum.c_ells)[ell]
        if self.spectrum.include_monopole:
            out[0] = math.sqrt(self.spectrum.c_ells[0]) * self.monopole_coefficient
        out[(ell <= low) | (ell > high)] = 0.0
        return out

    def to_csv(self, path):
        """Write ``ell,m,a`` rows in canonical order under a parameter header."""
        s = self.spectrum
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# schema_version=1\n")
            fh.write(f"# L={s.max_degree} alpha={s.alpha!r} seed={self.seed}\n")
            fh.write("ell,m,a\n")
            k = 0
            for ell in range(1, s.max_degree + 1):
                for m in range(-ell, ell + 1):
                    fh.write(f"{ell},{m},{float(self.coefficients[k])!r}\n")
                    k += 1

    @classmethod
    def from_csv(cls, path, spectrum):
        header = {}
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line.startswith("#"):
                    for tok in line[1:].split():
                        key, _, val = tok.partition("=")
                        header[key] = val
                elif line and not line.startswith("ell"):
                    ell, m, a = line.split(",")
                    rows.append((int(ell), int(m), float(a)))
        if int(header.get("L", -1)) != spectrum.max_degree:
            raise DomainError("sample file truncation does not match the spectrum")
        expect = [(l, m) for l in range(1, spectrum.max_degree + 1) for m in range(-l, l + 1)]
        if [(l, m) for l, m, _ in rows] != expect:
            raise DomainError("sample rows are not in canonical order")
        return cls(spectrum, np.array([a for _, _, a in rows]), int(header["seed"]))


def sample_field(spectrum, seed):
    """Draw the ``L(L+2)`` coefficients from ``PCG64(seed)`` in canonical order."""
    seed = _check_seed(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    L = spectrum.max_degree
    coeffs = rng.standard_normal(L * (L + 2))
    mono = float(rng.standard_normal()) if spectrum.include_monopole else 0.0
    return FieldSample(spectrum, coeffs, seed, mono)


def _angles(points):
    if isinstance(points, np.ndarray) and points.ndim == 2 and points.shape[1] == 3:
        return to_angles(points)
    pts = [points] if hasattr(points, "theta") else list(points)
    return (np.array([p.theta for p in pts], dtype=float), np.array([p.phi for p in pts], dtype=float))


def synthesize_many(sample, points, band=None):
    """Field values at many points (SpherePoints or an ``(n, 3)`` array)."""
    theta, phi = _angles(points)
    if band is None:
        low, high = 0, sample.max_degree
    else:
        band.validate(sample.max_degree)
        low, high = band.low, band.high
    return kernels.synth_points(sample.weighted(low, high), sample.max_degree, theta, phi)


def synthesize(sample, x):
    """``T(x) = sum_l sqrt(C_l) sum_m a_lm Y_lm(x)``."""
    return float(synthesize_many(sample, [x])[0])


@dataclass(frozen=True)
class BandSpec:
    """Degrees ``low < l <= high``."""

    low: int
    high: int

    def validate(self, max_degree):
        if not 0 <= self.low < self.high <= max_degree:
            raise DomainError(f"band ({self.low}, {self.high}] not inside [1, {max_degree}]")
        return self

    def overlaps(self, other):
        return self.low < other.high and other.low < self.high

    def complement(self, max_degree):
        """The bands covering ``[1, L]`` outside this one."""
        out = []
        if self.low > 0:
            out.append(BandSpec(0, self.low))
        if self.high < max_degree:
            out.append(BandSpec(self.high, max_degree))
        return out


def synthesize_band(sample, band, x):
    """Partial sum of the field over the degrees of ``band``."""
    return float(synthesize_many(sample, [x], band)[0])


def band_variance(spectrum, band):
    """Closed-form pointwise variance of the band field."""
    band.validate(spectrum.max_degree)
    return float(math.fsum(spectrum.weights[band.low + 1:band.high + 1]))


def block_sequences(n):
    """``d_n = floor(e^(n^2))`` exactly and ``r_n = e^-n / d_n``."""
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    if n > BLOCK_SIZE_MAX_N:
        raise OverflowError(f"e^(n^2) overflows double precision for n = {n}")
    return _block_pair(int(n))


def _block_pair(n):
    with localcontext() as ctx:
        ctx.prec = n * n // 2 + 40
        d = int(Decimal(n * n).exp().to_integral_value(rounding="ROUND_FLOOR"))
    return math.exp(-n) / d, d


def block_growth_margin(n):
    """``log(r_n d_{n+1}) - n`` evaluated without overflow; positive when ``r_n d_{n+1} > e^n``."""
    r, _ = block_sequences(n)
    _, d_next = _block_pair(n + 1)
    with localcontext() as ctx:
        ctx.prec = 60
        return float((Decimal(r).ln() + Decimal(d_next).ln()) - n)


# --------------------------------------------------------- Gaussian factors


@dataclass(frozen=True, eq=False)
class GaussianFactor:
    """A matrix ``F`` with ``F F^T ~ K``; samples are ``F z`` with ``z`` standard normal.

    ``method`` is ``"cholesky"`` (dense, exact up to ``jitter``) or
    ``"pivoted"`` (greedy pivoted Cholesky, low rank). ``residual_variance``
    is the largest diagonal entry of ``K - F F^T``. For the pivoted form,
    ``pivot_xyz`` and ``pivot_chol`` allow the same latent vector to be
    evaluated at other points.
    """

    matrix: np.ndarray
    method: str
    jitter: float = 0.0
    residual_variance: float = 0.0
    pivot_xyz: np.ndarray = field(default=None, repr=False)
    pivot_chol: np.ndarray = field(default=None, repr=False)

    @property
    def rank(self):
        return self.matrix.shape[1]

    @property
    def size(self):
        return self.matrix.shape[0]

    def sample(self, z):
        """Map latent normals ``z`` of shape ``(rank,)`` or ``(k, rank)`` to field values."""
        return np.asarray(z) @ self.matrix.T

    def extend(self, kernel, xyz):
        """Evaluate the same latent vector at new points.

        Only for pivoted factors: the field at ``xyz`` is replaced by its
        conditional mean given the pivot values, which is exact at the pivots.
        """
        if self.pivot_xyz is None:
            raise FactorizationError("only pivoted factors can be extended")
        cross = kernel.cross(xyz, self.pivot_xyz)
        f = linalg.solve_triangular(self.pivot_chol, cross.T, lower=True).T
        resid = kernel.diag(xyz) - np.einsum("ij,ij->i", f, f)
        return GaussianFactor(
            np.ascontiguousarray(f), "pivoted", 0.0, float(max(resid.max(), 0.0)),
            self.pivot_xyz, self.pivot_chol,
        )


def cholesky_with_jitter(matrix, scale):
    """Lower Cholesky factor, adding ``1e-12 * scale`` (then x10, x100, x1000) on failure."""
    k = np.asarray(matrix, dtype=float)
    try:
        return linalg.cholesky(k, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER_SCALE * scale
    for _ in range(JITTER_ESCALATIONS + 1):
        try:
            l = linalg.cholesky(k + jitter * np.eye(k.shape[0]), lower=True, check_finite=False)
            return l, jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError("covariance matrix not positive definite after jitter escalation")


def dense_factor(matrix, scale):
    l, jitter = cholesky_with_jitter(matrix, scale)
    return GaussianFactor(l, "cholesky", jitter, jitter)


class IncrementKernel:
    """Covariance of ``T(y) - T(center)`` for one spectrum and center."""

    def __init__(self, spectrum, center_xyz):
        from .spectrum import increment_covariance_matrix, metric_sq_matrix, metric_sq_of_distance
        from .spheregeom import angle_between

        self.spectrum = spectrum
        self.center = np.asarray(center_xyz, dtype=float)
        self._inc = increment_covariance_matrix
        self._msq = metric_sq_of_distance
        self._gap = metric_sq_matrix
        self._angle = angle_between

    def diag(self, xyz):
        return self._msq(self.spectrum, self._angle(np.asarray(xyz), self.center))

    def cross(self, xyz_a, xyz_b):
        return self._inc(self.spectrum, self.center, xyz_a, xyz_b)

    def matrix(self, xyz):
        return self._inc(self.spectrum, self.center, xyz)

    def column(self, xyz, diag, p):
        """Column ``p`` of the matrix on ``xyz`` given its precomputed diagonal."""
        gap = self._gap(self.spectrum, xyz, xyz[p:p + 1])[:, 0]
        col = 0.5 * (diag + diag[p] - gap)
        col[p] = diag[p]
        return col


def pivoted_factor(kernel, xyz, rel_tol=1e-10, max_rank=2000):
    """Greedy pivoted Cholesky of ``kernel`` on ``xyz``.

    Stops once every residual variance is below ``rel_tol`` times the largest
    variance. Columns are generated on demand, so the dense matrix is never
    formed.
    """
    xyz = np.ascontiguousarray(xyz, dtype=float)
    n = xyz.shape[0]
    diag = np.array(kernel.diag(xyz), dtype=float)
    resid = diag.copy()
    top = float(resid.max()) if n else 0.0
    if top <= 0.0:
        raise FactorizationError("kernel has no variance on these points")
    cap = min(max_rank, n)
    f = np.zeros((n, cap))
    pivots = []
    while True:
        p = int(np.argmax(resid))
        if resid[p] <= rel_tol * top:
            break
        k = len(pivots)
        if k == cap:
            raise FactorizationError(f"pivoted Cholesky did not reach tolerance within rank {cap}")
        col = kernel.column(xyz, diag, p)
        col -= f[:, :k] @ f[p, :k]
        f[:, k] = col / math.sqrt(resid[p])
        resid -= f[:, k] ** 2
        resid[p] = 0.0
        pivots.append(p)
    f = np.ascontiguousarray(f[:, :len(pivots)])
    pxyz = xyz[pivots].copy()
    # recompute the pivot block factor directly for extension
    pchol, _ = cholesky_with_jitter(kernel.matrix(pxyz), top)
    return GaussianFactor(f, "pivoted", 0.0, float(max(resid.max(), 0.0)), pxyz, pchol)


def increment_factor(spectrum, center_xyz, xyz, method="auto", rel_tol=1e-10):
    """Factor of the increment covariance on ``xyz``.

    ``auto`` uses dense Cholesky up to 4096 points and the pivoted factor
    beyond that.
    """
    kernel = IncrementKernel(spectrum, center_xyz)
    if method == "auto":
        method = "cholesky" if len(xyz) <= CHOLESKY_MAX_NODES else "pivoted"
    if method == "cholesky":
        return dense_factor(kernel.matrix(xyz), spectrum.total_variance)
    if method == "pivoted":
        return pivoted_factor(kernel, xyz, rel_tol)
    raise DomainError(f"unknown factor method {method!r}")
