import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, special

from isoball.errors import DomainError
from isoball.specfun import (
    HarmonicIndex,
    WBranch,
    assoc_legendre,
    harmonics_matrix,
    lambert_w,
    lambert_wm1_asymptotic_ratio,
    legendre_p,
    real_sph_harm,
)

INV_E = math.exp(-1.0)


def random_points(n, rng):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.arccos(np.clip(v[:, 2], -1, 1)), np.arctan2(v[:, 1], v[:, 0]) % (2 * np.pi), v


def scipy_real_harmonic(ell, m, theta, phi):
    # scipy carries the Condon-Shortley phase; remove it and take real parts
    y = special.sph_harm_y(ell, abs(m), theta, phi)
    if m == 0:
        return y.real
    sign = (-1.0) ** m
    return math.sqrt(2.0) * sign * (y.real if m > 0 else y.imag)


class TestHarmonicIndex:
    def test_eigenvalue(self):
        assert HarmonicIndex(4096, 0).eigenvalue() == 4096 * 4097

    def test_order_bound(self):
        with pytest.raises(DomainError):
            HarmonicIndex(2, 3)

    def test_flat(self):
        assert HarmonicIndex(3, -3).flat == 9
        assert HarmonicIndex(3, 3).flat == 15


class TestLegendre:
    def test_examples(self):
        assert legendre_p(0, 0.7) == 1.0
        assert legendre_p(1, 0.3) == 0.3
        assert legendre_p(2, 0.5) == pytest.approx(-0.125, abs=1e-15)

    def test_against_scipy(self):
        t = np.linspace(-1, 1, 101)
        for ell in (3, 17, 100, 1000):
            np.testing.assert_allclose(legendre_p(ell, t), special.eval_legendre(ell, t), atol=1e-12)

    def test_recurrence_consistency(self):
        t = np.linspace(-0.999, 0.999, 1000)
        prev, cur = legendre_p(0, t), legendre_p(1, t)
        for ell in range(1, 512):
            nxt = legendre_p(ell + 1, t)
            lhs = (ell + 1) * nxt
            rhs = (2 * ell + 1) * t * cur - ell * prev
            assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(lhs)))
            prev, cur = cur, nxt

    def test_bounded_and_one_at_one(self):
        t = np.linspace(-1, 1, 2001)
        for ell in (0, 1, 64, 4096):
            assert legendre_p(ell, 1.0) == 1.0
            assert np.all(np.abs(legendre_p(ell, t)) <= 1.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            legendre_p(2, 1.5)
        with pytest.raises(DomainError):
            legendre_p(5000, 0.1)


class TestAssocLegendre:
    def test_examples(self):
        assert assoc_legendre(HarmonicIndex(1, 1), 0.0) == pytest.approx(1.0)
        assert assoc_legendre(HarmonicIndex(3, 3), 1.0) == 0.0
        assert assoc_legendre(HarmonicIndex(2, 0), 0.5) == pytest.approx(-0.125)

    @pytest.mark.parametrize("ell,m", [(1, 1), (4, 2), (10, 7), (30, 15)])
    def test_against_scipy_without_phase(self, ell, m):
        for t in (-0.9, -0.3, 0.2, 0.77):
            ref = (-1.0) ** m * special.lpmv(m, ell, t)
            assert assoc_legendre(HarmonicIndex(ell, m), t) == pytest.approx(ref, rel=1e-10)

    def test_overflow(self):
        with pytest.raises(OverflowError):
            assoc_legendre(HarmonicIndex(300, 300), 0.0)


class TestRealHarmonics:
    def test_examples(self):
        assert real_sph_harm(HarmonicIndex(0, 0), 1.0, 2.0) == pytest.approx(1 / math.sqrt(4 * math.pi))
        assert real_sph_harm(HarmonicIndex(5, 3), 0.0, 1.3) == 0.0
        total = sum(real_sph_harm(HarmonicIndex(5, m), 0.7, 0.4) ** 2 for m in range(-5, 6))
        assert total == pytest.approx(11 / (4 * math.pi), rel=1e-12)

    @pytest.mark.parametrize("ell", [1, 3, 8, 25])
    def test_against_scipy(self, ell):
        rng = np.random.default_rng(ell)
        theta, phi, _ = random_points(5, rng)
        for m in range(-ell, ell + 1):
            for t, p in zip(theta, phi):
                ours = real_sph_harm(HarmonicIndex(ell, m), t, p)
                assert ours == pytest.approx(scipy_real_harmonic(ell, m, t, p), abs=1e-12)

    def test_matrix_matches_scalar(self):
        rng = np.random.default_rng(3)
        theta, phi, _ = random_points(4, rng)
        h = harmonics_matrix(12, theta, phi)
        for ell in (0, 5, 12):
            for m in (-ell, 0, ell):
                col = h[:, ell * ell + ell + m]
                ref = [real_sph_harm(HarmonicIndex(ell, m), t, p) for t, p in zip(theta, phi)]
                np.testing.assert_allclose(col, ref, atol=1e-14)

    def test_large_degree_finite(self):
        h = harmonics_matrix(2000, np.array([0.3, 1.5]), np.array([0.1, 2.0]))
        assert np.all(np.isfinite(h))

    def test_addition_formula(self):
        rng = np.random.default_rng(11)
        ta, pa, va = random_points(100, rng)
        tb, pb, vb = random_points(100, rng)
        ha = harmonics_matrix(100, ta, pa)
        hb = harmonics_matrix(100, tb, pb)
        cosines = np.sum(va * vb, axis=1)
        for ell in (1, 2, 5, 20, 100):
            sl = slice(ell * ell, (ell + 1) ** 2)
            lhs = np.sum(ha[:, sl] * hb[:, sl], axis=1)
            rhs = (2 * ell + 1) / (4 * math.pi) * special.eval_legendre(ell, cosines)
            assert np.max(np.abs(lhs - rhs)) <= 1e-9


def duplication_quadrature(ell, x, y, n_theta, n_phi):
    nodes, weights = np.polynomial.legendre.leggauss(n_theta)
    phi = np.arange(n_phi) * 2 * np.pi / n_phi
    ct = nodes[:, None] * np.ones(n_phi)
    st_ = np.sqrt(1 - nodes**2)[:, None]
    z = np.stack([st_ * np.cos(phi), st_ * np.sin(phi), ct], axis=-1)
    c = (2 * ell + 1) / (4 * math.pi)
    f = c * legendre_p(ell, np.clip(z @ x, -1, 1)) * c * legendre_p(ell, np.clip(z @ y, -1, 1))
    return float(np.sum(f * weights[:, None]) * 2 * np.pi / n_phi)


@pytest.mark.parametrize("ell", [1, 2, 5])
def test_duplication_formula(ell):
    rng = np.random.default_rng(ell)
    _, _, v = random_points(2, rng)
    x, y = v
    n = 2 * ell + 2
    val = duplication_quadrature(ell, x, y, n, n)
    ref = (2 * ell + 1) / (4 * math.pi) * legendre_p(ell, float(np.clip(x @ y, -1, 1)))
    assert abs(val - ref) <= 1e-6 * abs(ref)


class TestLambert:
    def test_examples(self):
        assert lambert_w(WBranch.PRINCIPAL, 0.0) == 0.0
        assert lambert_w(WBranch.LOWER, -INV_E) == -1.0
        ref = optimize.brentq(lambda y: y * math.exp(y) + 0.1, -50.0, -1.0, xtol=1e-15)
        assert lambert_w(WBranch.LOWER, -0.1) == pytest.approx(ref, rel=1e-13)
        assert lambert_w(WBranch.LOWER, -0.1) == pytest.approx(-3.577152, abs=1e-6)

    def test_residuals_both_branches(self):
        xs_lower = -np.geomspace(1e-300, INV_E, 500)
        xs_principal = np.concatenate([-np.geomspace(1e-300, INV_E, 250), np.geomspace(1e-300, 1e300, 250)])
        for branch, xs in ((WBranch.LOWER, xs_lower), (WBranch.PRINCIPAL, xs_principal)):
            y = lambert_w(branch, xs)
            resid = np.abs(y * np.exp(y) - xs)
            assert np.all(resid <= 1e-12 * np.maximum(np.abs(xs), 1e-300))
            if branch is WBranch.LOWER:
                assert np.all(y <= -1.0)
            else:
                assert np.all(y >= -1.0)

    def test_against_scipy(self):
        xs = np.linspace(-0.36, -1e-5, 200)
        np.testing.assert_allclose(lambert_w("lower", xs), special.lambertw(xs, -1).real, rtol=1e-12)
        xs = np.geomspace(1e-8, 1e8, 200)
        np.testing.assert_allclose(lambert_w("principal", xs), special.lambertw(xs, 0).real, rtol=1e-13)

    def test_derivative_identity(self):
        xs = -np.geomspace(1e-8, 0.99 * INV_E, 50)
        for x in xs:
            h = 1e-6 * abs(x)
            fd = (lambert_w(WBranch.LOWER, x + h) - lambert_w(WBranch.LOWER, x - h)) / (2 * h)
            w = lambert_w(WBranch.LOWER, x)
            closed = w / (x * (1 + w))
            assert abs(fd - closed) <= 1e-5 * abs(closed)

    def test_principal_small_argument(self):
        for x in np.concatenate([-np.geomspace(1e-12, 1e-3, 30), np.geomspace(1e-12, 1e-3, 30)]):
            assert abs(lambert_w(WBranch.PRINCIPAL, x) / x - 1) <= 2 * abs(x)

    def test_domain(self):
        with pytest.raises(DomainError):
            lambert_w(WBranch.PRINCIPAL, -0.5)
        with pytest.raises(DomainError):
            lambert_w(WBranch.LOWER, 0.1)
        with pytest.raises(DomainError):
            lambert_w(WBranch.LOWER, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=-INV_E, max_value=-1e-200))
    def test_lower_property(self, x):
        y = lambert_w(WBranch.LOWER, x)
        assert y <= -1.0
        assert abs(y * math.exp(y) - x) <= 1e-12 * abs(x)


class TestAsymptoticRatio:
    def test_examples(self):
        assert lambert_wm1_asymptotic_ratio(1e-6) == pytest.approx(1.203, abs=1e-3)
        assert lambert_wm1_asymptotic_ratio(1e-12) == pytest.approx(1.124, abs=1e-3)

    def test_decreasing(self):
        vals = [lambert_wm1_asymptotic_ratio(10.0**-k) for k in (3, 6, 9, 12)]
        assert all(a > b > 1.0 for a, b in zip(vals, vals[1:]))

    def test_domain(self):
        with pytest.raises(DomainError):
            lambert_wm1_asymptotic_ratio(0.5)
