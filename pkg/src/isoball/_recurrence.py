"""Coefficient tables for the normalized associated Legendre recurrence.

Both kernel backends consume these tables so that their arithmetic is
identical up to summation order.
"""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=16)
def normalized_tables(lmax):
    """Return ``(diag, sub, a, b)`` for degrees ``0..lmax``.

    ``diag[m]`` is the factor taking the sectoral value at order ``m - 1`` to
    order ``m`` (before multiplying by ``sin theta``), ``sub[m]`` the factor
    for the first off-diagonal step, and ``a[l, m]``, ``b[l, m]`` the
    three-term coefficients.
    """
    n = lmax + 1
    diag = np.empty(n)
    diag[0] = np.sqrt(1.0 / (4.0 * np.pi))
    m = np.arange(1, n, dtype=float)
    diag[1:] = np.sqrt((2.0 * m + 1.0) / (2.0 * m))
    sub = np.sqrt(2.0 * np.arange(n, dtype=float) + 3.0)
    a = np.zeros((n, n))
    b = np.zeros((n, n))
    ell = np.arange(n, dtype=float)[:, None]
    mm = np.arange(n, dtype=float)[None, :]
    mask = ell > mm + 1
    with np.errstate(divide="ignore", invalid="ignore"):
        a_full = np.sqrt((4.0 * ell**2 - 1.0) / (ell**2 - mm**2))
        b_full = np.sqrt(((ell - 1.0) ** 2 - mm**2) / (4.0 * (ell - 1.0) ** 2 - 1.0))
    a[mask] = a_full[mask]
    b[mask] = b_full[mask]
    for arr in (diag, sub, a, b):
        arr.setflags(write=False)
    return diag, sub, a, b
