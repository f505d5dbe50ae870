import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from isoball.errors import DomainError, FactorizationError
from isoball.field import (
    BandSpec,
    FieldSample,
    GaussianFactor,
    IncrementKernel,
    band_variance,
    block_growth_margin,
    block_sequences,
    cholesky_with_jitter,
    derive_seed,
    increment_factor,
    pivoted_factor,
    replicate_generator,
    sample_field,
    synthesize,
    synthesize_band,
    synthesize_many,
    truncation_tail,
)
from isoball.spectrum import PowerSpectrum, covariance, covariance_matrix, increment_covariance_matrix
from isoball.spheregeom import NORTH_POLE, SpherePoint, cap_points

DATA = Path(__file__).parent / "data"
SEEDS = 10_000


def cap_xyz(center, radius, n):
    return np.array([p.xyz for p in cap_points(center, radius, n)])


@pytest.fixture(scope="module")
def small_spectrum():
    return PowerSpectrum(4, 12)


@pytest.fixture(scope="module")
def ensemble(small_spectrum):
    """Field values for SEEDS seeds at a few fixed points."""
    pts = [SpherePoint(0.7, 0.2), SpherePoint(1.1, 0.5), SpherePoint(0.4, 2.0),
           SpherePoint(0.6, 4.0), SpherePoint(2.0, 1.0)]
    vals = np.array([synthesize_many(sample_field(small_spectrum, s), pts) for s in range(SEEDS)])
    return pts, vals


class TestSampling:
    def test_count(self):
        assert sample_field(PowerSpectrum(4, 3), 99).coefficients.shape == (15,)

    def test_deterministic(self):
        s = PowerSpectrum(4, 30)
        a = sample_field(s, 2**63 + 5).coefficients
        b = sample_field(s, 2**63 + 5).coefficients
        assert np.array_equal(a, b)

    def test_mean(self):
        a = sample_field(PowerSpectrum(4, 64), 31337).coefficients
        assert abs(a.mean()) <= 4 / math.sqrt(64 * 66)

    def test_immutable(self):
        a = sample_field(PowerSpectrum(4, 3), 1)
        with pytest.raises(ValueError):
            a.coefficients[0] = 1.0

    def test_bad_seed(self):
        with pytest.raises(DomainError):
            sample_field(PowerSpectrum(4, 3), -1)
        with pytest.raises(DomainError):
            sample_field(PowerSpectrum(4, 3), 2**64)

    def test_golden_file(self):
        spectrum = PowerSpectrum(4, 4)
        golden = FieldSample.from_csv(DATA / "sample_L4_seed12345.csv", spectrum)
        assert golden.seed == 12345
        assert np.array_equal(golden.coefficients, sample_field(spectrum, 12345).coefficients)

    def test_csv_round_trip(self, tmp_path):
        spectrum = PowerSpectrum(3.5, 9)
        a = sample_field(spectrum, 4242)
        a.to_csv(tmp_path / "a.csv")
        text = (tmp_path / "a.csv").read_text()
        assert text.startswith("# schema_version=1\n# L=9 alpha=3.5 seed=4242\nell,m,a\n")
        b = FieldSample.from_csv(tmp_path / "a.csv", spectrum)
        assert np.array_equal(a.coefficients, b.coefficients)
        with pytest.raises(DomainError):
            FieldSample.from_csv(tmp_path / "a.csv", PowerSpectrum(3.5, 8))


class TestSeeds:
    def test_splitmix_vector(self):
        # first SplitMix64 output from state 0
        assert derive_seed(0, 0) == 0xE220A8397B1DCDAF

    def test_distinct(self):
        seeds = {derive_seed(20261014, i) for i in range(10_000)}
        assert len(seeds) == 10_000

    def test_generator(self):
        a = replicate_generator(5, 3).standard_normal(4)
        b = replicate_generator(5, 3).standard_normal(4)
        assert np.array_equal(a, b)


class TestSynthesis:
    def test_north_pole(self):
        s = PowerSpectrum(4, 10)
        a = sample_field(s, 77)
        ell = np.arange(1, 11)
        a0 = a.coefficients[ell * ell + ell - 1]
        ref = math.fsum(np.sqrt(s.c_ells[1:]) * a0 * np.sqrt((2 * ell + 1) / (4 * math.pi)))
        assert synthesize(a, NORTH_POLE) == pytest.approx(ref, rel=1e-13)

    def test_pole_independent_of_phi(self):
        a = sample_field(PowerSpectrum(4, 25), 3)
        vals = {synthesize(a, SpherePoint(0.0, phi)) for phi in (0.0, 1.0, 2.5, 6.0)}
        assert len(vals) == 1

    def test_zero_coefficients(self):
        s = PowerSpectrum(4, 5)
        z = FieldSample(s, np.zeros(35), 0)
        assert synthesize(z, SpherePoint(1.2, 0.3)) == 0.0

    def test_linear(self):
        s = PowerSpectrum(4, 8)
        a, b = sample_field(s, 1), sample_field(s, 2)
        c = FieldSample(s, 2.0 * a.coefficients - b.coefficients, 0)
        x = SpherePoint(0.9, 1.9)
        assert synthesize(c, x) == pytest.approx(2 * synthesize(a, x) - synthesize(b, x), rel=1e-12)

    def test_points_and_xyz_agree(self):
        a = sample_field(PowerSpectrum(4, 20), 8)
        pts = [SpherePoint(0.3, 1.0), SpherePoint(2.0, 5.0)]
        xyz = np.array([p.xyz for p in pts])
        np.testing.assert_allclose(synthesize_many(a, pts), synthesize_many(a, xyz), rtol=1e-13)

    def test_mc_variance(self, small_spectrum, ensemble):
        pts, vals = ensemble
        var = covariance(small_spectrum, pts[0], pts[0])
        assert abs(vals[:, 0].var() / var - 1) < 0.05

    def test_gaussian_ks(self, small_spectrum, ensemble):
        pts, vals = ensemble
        sd = math.sqrt(covariance(small_spectrum, pts[0], pts[0]))
        assert stats.kstest(vals[:, 0] / sd, "norm").pvalue > 1e-3

    def test_isotropy(self, small_spectrum, ensemble):
        pts, vals = ensemble
        # pair two at the same geodesic distance as pair one, rotated elsewhere
        x, y = pts[0], pts[1]
        d = x.xyz @ y.xyz
        rng = np.random.default_rng(0)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        u, v = SpherePoint.from_xyz(q @ x.xyz), SpherePoint.from_xyz(q @ y.xyz)
        assert u.xyz @ v.xyz == pytest.approx(d, abs=1e-14)
        other = np.array([synthesize_many(sample_field(small_spectrum, s + SEEDS), [u, v]) for s in range(SEEDS)])
        prod1 = vals[:, 0] * vals[:, 1]
        prod2 = other[:, 0] * other[:, 1]
        se = math.sqrt(prod1.var() / SEEDS + prod2.var() / SEEDS)
        assert abs(prod1.mean() - prod2.mean()) <= 4 * se


class TestBands:
    def test_validate(self):
        with pytest.raises(DomainError):
            BandSpec(3, 3).validate(10)
        with pytest.raises(DomainError):
            BandSpec(0, 11).validate(10)
        assert BandSpec(2, 5).overlaps(BandSpec(4, 9))
        assert not BandSpec(2, 5).overlaps(BandSpec(5, 9))

    def test_full_band(self):
        a = sample_field(PowerSpectrum(4, 30), 5)
        x = SpherePoint(1.0, 1.0)
        assert synthesize_band(a, BandSpec(0, 30), x) == synthesize(a, x)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 39), st.integers(1, 40), st.integers(0, 2**32))
    def test_complement_reconstruction(self, lo, hi, seed):
        if lo >= hi:
            return
        a = sample_field(PowerSpectrum(4, 40), seed)
        band = BandSpec(lo, hi)
        x = SpherePoint(0.8, 2.2)
        total = synthesize(a, x)
        parts = synthesize_band(a, band, x) + sum(synthesize_band(a, b, x) for b in band.complement(40))
        assert abs(parts - total) <= 1e-12 * max(abs(total), 1e-300) + 1e-16

    def test_partition(self):
        a = sample_field(PowerSpectrum(4, 60), 11)
        x = SpherePoint(2.1, 0.4)
        cuts = [0, 2, 7, 19, 54, 60]
        parts = [synthesize_band(a, BandSpec(l, h), x) for l, h in zip(cuts, cuts[1:])]
        assert math.fsum(parts) == pytest.approx(synthesize(a, x), rel=1e-12)

    def test_variance_additivity(self):
        s = PowerSpectrum(4, 200)
        b = BandSpec(2, 54)
        total = band_variance(s, b) + sum(band_variance(s, c) for c in b.complement(200))
        assert total == pytest.approx(s.total_variance, rel=1e-10)

    def test_disjoint_bands_uncorrelated(self, small_spectrum):
        x = SpherePoint(0.5, 0.5)
        lo = np.empty(SEEDS)
        hi = np.empty(SEEDS)
        for s in range(SEEDS):
            a = sample_field(small_spectrum, s)
            lo[s] = synthesize_band(a, BandSpec(0, 3), x)
            hi[s] = synthesize_band(a, BandSpec(3, 12), x)
        prod = lo * hi
        assert abs(prod.mean()) <= 4 * prod.std() / math.sqrt(SEEDS)


class TestBlockSequences:
    def test_examples(self):
        r, d = block_sequences(1)
        assert d == 2
        assert r == pytest.approx(math.exp(-1) / 2, rel=1e-15)
        assert r == pytest.approx(0.1839397, abs=1e-7)
        assert block_sequences(2)[1] == 54

    def test_growth(self):
        for n in range(1, 26):
            assert block_growth_margin(n) > 0

    def test_product(self):
        for n in range(1, 10):
            r, d = block_sequences(n)
            assert r * d == pytest.approx(math.exp(-n), rel=1e-14)

    def test_domain(self):
        with pytest.raises(OverflowError):
            block_sequences(27)
        with pytest.raises(DomainError):
            block_sequences(0)

    def test_tail_reexport(self):
        assert truncation_tail(PowerSpectrum(4, 10), 100) == pytest.approx(7.96e-6, rel=0.01)


class TestFactors:
    def test_jitter_policy(self):
        k = np.ones((3, 3))
        l, jitter = cholesky_with_jitter(k, 1.0)
        assert jitter in (1e-12, 1e-11, 1e-10, 1e-9)
        with pytest.raises(FactorizationError):
            cholesky_with_jitter(-np.eye(3), 1.0)

    def test_no_jitter_when_pd(self):
        l, jitter = cholesky_with_jitter(np.eye(4) * 2.0, 1.0)
        assert jitter == 0.0
        np.testing.assert_allclose(l @ l.T, np.eye(4) * 2.0)

    def test_auto_method(self):
        s = PowerSpectrum(4, 100)
        c = NORTH_POLE.xyz
        small = cap_xyz(NORTH_POLE, 0.2, 300)
        assert increment_factor(s, c, small).method == "cholesky"

    def test_pivoted_matches_dense(self):
        s = PowerSpectrum(4, 100)
        c = NORTH_POLE.xyz
        xyz = cap_xyz(NORTH_POLE, 0.2, 400)
        pf = increment_factor(s, c, xyz, method="pivoted")
        k = increment_covariance_matrix(s, c, xyz)
        assert np.max(np.abs(pf.matrix @ pf.matrix.T - k)) <= 1e-6 * np.max(np.diag(k))
        assert pf.residual_variance <= 1e-10 * np.max(np.diag(k))

    def test_extend_exact_at_pivots(self):
        s = PowerSpectrum(4, 60)
        kernel = IncrementKernel(s, NORTH_POLE.xyz)
        xyz = cap_xyz(NORTH_POLE, 0.3, 300)
        pf = pivoted_factor(kernel, xyz)
        ext = pf.extend(kernel, pf.pivot_xyz)
        z = np.random.default_rng(1).standard_normal(pf.rank)
        idx = [int(np.argmin(np.linalg.norm(xyz - p, axis=1))) for p in pf.pivot_xyz]
        np.testing.assert_allclose(ext.sample(z), pf.sample(z)[idx], atol=1e-9)
        with pytest.raises(FactorizationError):
            GaussianFactor(np.eye(2), "cholesky").extend(kernel, xyz)

    def test_cholesky_path_matches_synthesis(self):
        # both sampling paths must agree in distribution at a fixed point set
        s = PowerSpectrum(4, 12)
        pts = [SpherePoint(0.7, 0.2), SpherePoint(0.9, 0.4)]
        xyz = np.array([p.xyz for p in pts])
        f = increment_factor(s, NORTH_POLE.xyz, xyz)
        n = 5000
        z = np.random.default_rng(2).standard_normal((n, f.rank))
        chol = f.sample(z)[:, 1]
        synth = np.empty(n)
        for i in range(n):
            a = sample_field(s, derive_seed(9, i))
            v = synthesize_many(a, [NORTH_POLE, pts[1]])
            synth[i] = v[1] - v[0]
        assert stats.ks_2samp(chol, synth).pvalue > 1e-3

    def test_dense_covariance(self):
        s = PowerSpectrum(4, 30)
        xyz = cap_xyz(SpherePoint(1.0, 1.0), 0.5, 50)
        f = increment_factor(s, xyz[0], xyz)
        # the increment at the center itself is identically zero
        k = covariance_matrix(s, xyz)
        inc = k - k[0][None, :] - k[:, 0][:, None] + k[0, 0]
        np.testing.assert_allclose(f.matrix @ f.matrix.T, inc, atol=1e-10)
