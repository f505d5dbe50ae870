"""Pure numpy implementations of the hot kernels.

This module is the reference fallback used when the compiled extension
``isoball._ckernels`` is unavailable (or when ``ISOBALL_BACKEND=python``).
Every function here has an identically named, identically typed twin in the
extension; ``tests/test_kernels.py`` checks that the two agree.
"""
import numpy as np

from ._recurrence import normalized_tables

SQRT2 = np.sqrt(2.0)


def legendre_series(t, weights):
    """Evaluate ``sum_l weights[l] * P_l(t)`` elementwise by forward recurrence."""
    t = np.ascontiguousarray(t, dtype=float)
    w = np.ascontiguousarray(weights, dtype=float)
    L = w.shape[0] - 1
    out = np.full(t.shape, w[0]) if L >= 0 else np.zeros(t.shape)
    if L < 1:
        return out
    p_prev = np.ones_like(t)
    p_cur = t.copy()
    out += w[1] * p_cur
    for ell in range(1, L):
        p_next = (2.0 * ell + 1.0) / (ell + 1.0) * t * p_cur - ell / (ell + 1.0) * p_prev
        out += w[ell + 1] * p_next
        p_prev, p_cur = p_cur, p_next
    return out


def legendre_gap_series(u, weights):
    """Evaluate ``sum_l weights[l] * (1 - P_l(1 - u))`` without cancellation.

    Uses the recurrence for ``Q_l = 1 - P_l`` in the variable ``u = 1 - t``:
    ``(l+1) Q_{l+1} = (2l+1)(u + Q_l - u Q_l) - l Q_{l-1}``.
    """
    u = np.ascontiguousarray(u, dtype=float)
    w = np.ascontiguousarray(weights, dtype=float)
    L = w.shape[0] - 1
    out = np.zeros(u.shape)
    if L < 1:
        return out
    q_prev = np.zeros_like(u)
    q_cur = u.copy()
    out += w[1] * q_cur
    for ell in range(1, L):
        q_next = (2.0 * ell + 1.0) / (ell + 1.0) * (u + q_cur - u * q_cur) - ell / (ell + 1.0) * q_prev
        out += w[ell + 1] * q_next
        q_prev, q_cur = q_cur, q_next
    return out


def _sectoral_iter(lmax, theta):
    """Yield ``(m, lam)`` where ``lam[l - m]`` holds normalized P_l^m(cos theta)."""
    diag, sub, a, b = normalized_tables(lmax)
    t = np.cos(theta)
    s = np.sin(theta)
    lam_mm = np.full(theta.shape, diag[0])
    for m in range(lmax + 1):
        if m > 0:
            lam_mm = lam_mm * s * diag[m]
        rows = np.empty((lmax - m + 1,) + theta.shape)
        rows[0] = lam_mm
        if m < lmax:
            rows[1] = t * sub[m] * lam_mm
        for ell in range(m + 2, lmax + 1):
            rows[ell - m] = a[ell, m] * (t * rows[ell - m - 1] - b[ell, m] * rows[ell - m - 2])
        yield m, rows


def harmonics_matrix(lmax, theta, phi):
    """Real spherical harmonics at ``n`` points, shape ``(n, (lmax+1)**2)``.

    Column ``l*l + l + m`` holds ``Y_{lm}``.
    """
    theta = np.ascontiguousarray(theta, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float)
    out = np.empty((theta.shape[0], (lmax + 1) ** 2))
    for m, rows in _sectoral_iter(lmax, theta):
        ells = np.arange(m, lmax + 1)
        if m == 0:
            out[:, ells * ells + ells] = rows.T
        else:
            c = SQRT2 * np.cos(m * phi)
            s = SQRT2 * np.sin(m * phi)
            out[:, ells * ells + ells + m] = rows.T * c[:, None]
            out[:, ells * ells + ells - m] = rows.T * s[:, None]
    return out


def synth_points(coeffs, lmax, theta, phi):
    """Evaluate ``sum_{l,m} coeffs[l*l+l+m] * Y_{lm}`` at each point."""
    coeffs = np.ascontiguousarray(coeffs, dtype=float)
    theta = np.ascontiguousarray(theta, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float)
    out = np.zeros(theta.shape[0])
    for m, rows in _sectoral_iter(lmax, theta):
        ells = np.arange(m, lmax + 1)
        if m == 0:
            out += coeffs[ells * ells + ells] @ rows
        else:
            cos_part = coeffs[ells * ells + ells + m] @ rows
            sin_part = coeffs[ells * ells + ells - m] @ rows
            out += SQRT2 * (cos_part * np.cos(m * phi) + sin_part * np.sin(m * phi))
    return out


def greedy_cover(xyz, chord_sq_radius, start=0):
    """Greedy farthest-point cover of unit vectors within a chord radius.

    Returns ``(centers, nearest_sq)``: the selected row indices in selection
    order and, for every row, the squared chord distance to its nearest
    selected center.
    """
    xyz = np.ascontiguousarray(xyz, dtype=float)
    n = xyz.shape[0]
    nearest = np.full(n, np.inf)
    centers = []
    current = int(start)
    while True:
        centers.append(current)
        diff = xyz - xyz[current]
        d2 = np.einsum("ij,ij->i", diff, diff)
        np.minimum(nearest, d2, out=nearest)
        far = int(np.argmax(nearest))
        if nearest[far] <= chord_sq_radius:
            break
        current = far
    return np.asarray(centers, dtype=np.intp), nearest


def abs_max_columns(values):
    """Column-wise maximum of absolute values of a 2-D array."""
    values = np.asarray(values, dtype=float)
    return np.abs(values).max(axis=0)
