import math

import numpy as np
import pytest
from scipy import optimize

from isoball.errors import DomainError, TruncationError
from isoball.experiments import (
    block_independence,
    chung_radii,
    chung_trace,
    conditional_variance,
    make_configuration,
    max_over_ball,
    mesh_fill_for,
    small_ball_estimate,
    small_ball_sweep,
    slnd_scan,
    truncation_certificate,
    wilson_interval,
)
from isoball.field import BandSpec, FieldSample, replicate_generator, sample_field, synthesize
from isoball.spectrum import PowerSpectrum, covariance, rho
from isoball.spheregeom import NORTH_POLE, CapMesh, SpherePoint, cap_mesh, cap_points, geodesic_distance

Z99 = 2.5758293035489
# regression constants from the first scans (seed 0, 200 configurations, floor 0.05)
SLND_MIN_A4_L200 = 0.014275251462174732
SLND_MIN_A3_L200 = 0.10846512259350652
FAR_RATIO_L100 = 0.04175261068919157


@pytest.fixture(scope="module")
def spec100():
    return PowerSpectrum(4, 100)


@pytest.fixture(scope="module")
def sweep(spec100):
    return small_ball_sweep(spec100, NORTH_POLE, 0.2, [0.1, 0.12, 0.14, 0.16, 0.19], 2000, 7, mesh_fill=0.02)


class TestWilson:
    def score_oracle(self, hits, n):
        # invert the score test |p_hat - p| <= z sqrt(p(1-p)/n)
        p_hat = hits / n
        g = lambda p: (p_hat - p) ** 2 - Z99**2 * p * (1 - p) / n
        lo = 0.0 if hits == 0 else optimize.brentq(g, 1e-15, min(p_hat, 1 - 1e-15), xtol=1e-16)
        hi = 1.0 if hits == n else optimize.brentq(g, max(p_hat, 1e-15), 1 - 1e-15, xtol=1e-16)
        return lo, hi

    @pytest.mark.parametrize("hits,n", [(0, 1000), (3, 1000), (500, 1000), (99_000, 100_000), (1000, 1000)])
    def test_against_score_inversion(self, hits, n):
        lo, hi = wilson_interval(hits, n)
        olo, ohi = self.score_oracle(hits, n)
        assert lo == pytest.approx(olo, abs=1e-12)
        assert hi == pytest.approx(ohi, abs=1e-12)
        assert lo <= hits / n <= hi

    def test_zero_hits_upper(self):
        assert wilson_interval(0, 1000)[1] == pytest.approx(Z99**2 / (1000 + Z99**2), rel=1e-12)


class TestMaxOverBall:
    def test_zero_field(self, spec100):
        mesh = cap_mesh(NORTH_POLE, 0.2, 0.05)
        z = FieldSample(spec100, np.zeros(100 * 102), 0)
        assert max_over_ball(z, mesh) == 0.0

    def test_singleton(self, spec100):
        a = sample_field(spec100, 3)
        y = SpherePoint(0.1, 1.0)
        mesh = CapMesh.from_points(NORTH_POLE, 0.2, [y])
        assert max_over_ball(a, mesh) == pytest.approx(abs(synthesize(a, y) - synthesize(a, NORTH_POLE)), rel=1e-12)

    def test_superset_nondecreasing(self, spec100):
        a = sample_field(spec100, 4)
        coarse = cap_mesh(NORTH_POLE, 0.2, 0.04)
        fine = cap_mesh(NORTH_POLE, 0.2, 0.02)
        union = CapMesh.from_points(NORTH_POLE, 0.2, coarse.nodes + fine.nodes)
        assert max_over_ball(a, union) >= max_over_ball(a, coarse)
        assert max_over_ball(a, union) >= max_over_ball(a, fine)

    def test_increment_columns(self):
        mesh = cap_mesh(NORTH_POLE, 0.2, 0.1)
        inc = np.random.default_rng(0).standard_normal((len(mesh), 5))
        np.testing.assert_array_equal(max_over_ball(inc, mesh), np.abs(inc).max(axis=0))


class TestSmallBall:
    def test_fields(self, sweep):
        for e in sweep.estimates:
            assert e.p_hat == e.hits / e.replicates
            assert e.ci_low <= e.p_hat <= e.ci_high
            assert e.truncation == 100 and e.seed == 7
            assert e.factor_method == "cholesky"

    def test_monotone_in_eps(self, sweep):
        hits = [e.hits for e in sweep.estimates]
        assert hits == sorted(hits)

    def test_large_eps(self, sweep):
        # eps at ten increment standard deviations: the max stays below it
        sd_max = math.sqrt(np.max(np.sum(sweep.factor.matrix**2, axis=1)))
        assert np.mean(sweep.maxima < 10 * sd_max) >= 0.99

    def test_reproducible_and_worker_invariant(self, spec100, sweep):
        again = small_ball_sweep(spec100, NORTH_POLE, 0.2, [0.1, 0.12, 0.14, 0.16, 0.19], 2000, 7,
                                 mesh_fill=0.02, workers=8)
        assert [e.hits for e in again.estimates] == [e.hits for e in sweep.estimates]
        np.testing.assert_array_equal(again.maxima, sweep.maxima)

    def test_nonincreasing_in_r(self, spec100):
        small = small_ball_estimate(spec100, NORTH_POLE, 0.15, 0.12, 0.02, 2000, 1)
        large = small_ball_estimate(spec100, NORTH_POLE, 0.25, 0.12, 0.02, 2000, 1)
        assert large.p_hat <= small.p_hat or large.ci_high >= small.ci_low

    def test_zero_hits_flag(self, spec100):
        e = small_ball_estimate(spec100, NORTH_POLE, 0.2, 0.02, 0.02, 1000, 1)
        assert e.hits == 0 and e.flag == "zero_hits" and not e.usable
        assert e.ci_high > 0

    def test_validation(self, spec100):
        with pytest.raises(DomainError):
            small_ball_estimate(spec100, NORTH_POLE, 0.2, 0.2, 0.02, 1000, 1)
        with pytest.raises(DomainError):
            small_ball_estimate(spec100, NORTH_POLE, 0.2, 0.1, 0.02, 999, 1)

    def test_truncation_refused(self):
        assert not truncation_certificate(PowerSpectrum(4, 5), 0.2)["ok"]
        with pytest.raises(TruncationError):
            small_ball_estimate(PowerSpectrum(4, 5), NORTH_POLE, 0.2, 0.1, 0.05, 1000, 1)

    def test_mesh_fill_policy(self, spec100):
        d = mesh_fill_for(spec100, 0.08)
        assert rho(d) == pytest.approx(0.008, rel=1e-12)
        d3 = mesh_fill_for(PowerSpectrum(3, 100), 0.08)
        assert d3 > 0


class TestConditionalVariance:
    def test_single_conditioner(self, spec100):
        x0, x1 = SpherePoint(0.5, 0.5), SpherePoint(0.6, 0.9)
        res = conditional_variance(spec100, x0, [x1])
        g00, g01, g11 = covariance(spec100, x0, x0), covariance(spec100, x0, x1), covariance(spec100, x1, x1)
        assert res.variance == pytest.approx(g00 - g01**2 / g11, rel=1e-10)
        assert res.min_rho_sq == pytest.approx(float(rho(geodesic_distance(x0, x1))) ** 2, rel=1e-12)

    def test_determined(self, spec100):
        x0 = SpherePoint(1.0, 1.0)
        res = conditional_variance(spec100, x0, [x0, SpherePoint(1.2, 1.0)])
        assert res.variance <= 1e-10 * covariance(spec100, x0, x0)

    def test_far_conditioners(self, spec100):
        c = SpherePoint(0.3, 0.4)
        far = [SpherePoint(2.2, 0.4), SpherePoint(2.5, 3.0), SpherePoint(3.14159, 0.0)]
        assert all(geodesic_distance(c, f) >= math.pi / 2 for f in far)
        res = conditional_variance(spec100, c, far)
        assert res.ratio > 0
        assert res.ratio == pytest.approx(FAR_RATIO_L100, rel=1e-9)

    def test_nested_monotone(self, spec100):
        rng = replicate_generator(11, 0)
        c, pts = make_configuration("random", 8, 0.05, rng)
        center = SpherePoint.from_xyz(c)
        conds = [SpherePoint.from_xyz(p) for p in pts]
        prev = math.inf
        for k in range(1, 9):
            v = conditional_variance(spec100, center, conds[:k]).variance
            assert v <= prev * (1 + 1e-10)
            prev = v

    def test_limits(self, spec100):
        with pytest.raises(DomainError):
            conditional_variance(spec100, NORTH_POLE, [])


class TestSlnd:
    def test_regression(self):
        s = slnd_scan(PowerSpectrum(4, 200))
        assert s.n_configs == 200 and s.min_ratio > 0
        assert s.min_ratio == pytest.approx(SLND_MIN_A4_L200, rel=1e-9)
        assert set(s.by_size) == {1, 2, 4, 8}

    def test_subcritical(self):
        s = slnd_scan(PowerSpectrum(3, 200))
        assert s.min_ratio == pytest.approx(SLND_MIN_A3_L200, rel=1e-9)

    def test_reduction_to_single(self, spec100):
        c = NORTH_POLE.xyz
        p = SpherePoint(0.4, 1.0)
        s = slnd_scan(spec100, configurations=[("random", c, np.array([p.xyz]))])
        ref = conditional_variance(spec100, NORTH_POLE, [p])
        assert s.min_ratio == pytest.approx(ref.variance / float(rho(0.4)) ** 2, rel=1e-12)

    def test_floor_rules(self, spec100):
        with pytest.raises(DomainError):
            slnd_scan(spec100, distance_floor=0.03)
        bad = ("random", NORTH_POLE.xyz, np.array([SpherePoint(0.06, 0.0).xyz]))
        with pytest.raises(DomainError):
            slnd_scan(spec100, distance_floor=0.1, configurations=[bad])

    def test_reach(self, spec100):
        s = slnd_scan(spec100, n_configs=8, sizes=(1, 2), layouts=("random", "ring"), max_distance=0.3)
        assert s.min_ratio > 0
        with pytest.raises(DomainError):
            slnd_scan(spec100, max_distance=0.04)
        with pytest.raises(DomainError):
            slnd_scan(spec100, max_distance=0.7)

    @pytest.mark.parametrize("layout", ["random", "collinear", "clustered", "ring"])
    def test_layouts_respect_floor(self, layout):
        rng = np.random.default_rng(1)
        for n in (1, 2, 4, 8):
            c, pts = make_configuration(layout, n, 0.05, rng)
            d = np.arccos(np.clip(pts @ c, -1, 1))
            assert d.min() >= 0.05 - 1e-12 and pts.shape == (n, 3)


class TestChung:
    def test_trace(self):
        s = PowerSpectrum(4, 200)
        tr = chung_trace(s, NORTH_POLE, master_seed=5)
        assert all(a > b for a, b in zip(tr.radii, tr.radii[1:]))
        assert all(a >= b for a, b in zip(tr.running_min, tr.running_min[1:]))
        assert all(x > 0 for x in tr.stats)
        assert tr.radii[-1] >= 4 / 200

    def test_floor(self):
        with pytest.raises(DomainError):
            chung_radii(1.5, 200, k_max=20)
        ks = chung_radii(1.5, 400)
        assert 1.5 ** -ks[0] < math.exp(-1) <= 1.5 ** -(ks[0] - 1)
        assert 1.5 ** -ks[-1] >= 0.01 > 1.5 ** -(ks[-1] + 1)

    def test_subcritical_bounded(self):
        s = PowerSpectrum(3, 200)
        ends = [chung_trace(s, NORTH_POLE, master_seed=m).running_min[-1] for m in range(5)]
        assert min(ends) > 0 and max(ends) < 100


class TestBlockIndependence:
    @pytest.fixture(scope="class")
    @staticmethod
    def pts():
        return cap_points(SpherePoint(1.0, 1.0), 0.5, 4)

    def test_overlap_rejected(self, spec100, pts):
        with pytest.raises(DomainError):
            block_independence(spec100, [BandSpec(0, 10), BandSpec(0, 10)], pts, 100, 0)

    def test_single_band(self, spec100, pts):
        assert block_independence(spec100, [BandSpec(0, 10)], pts, 100, 0) == 0.0

    def test_disjoint(self, pts):
        s = PowerSpectrum(4, 30)
        worst = block_independence(s, [BandSpec(0, 2), BandSpec(2, 30)], pts, 10_000, 3)
        assert worst < 0.04

    def test_worker_invariant(self, pts):
        s = PowerSpectrum(4, 20)
        bands = [BandSpec(0, 3), BandSpec(3, 20)]
        a = block_independence(s, bands, pts, 3000, 1, workers=1, block=512)
        b = block_independence(s, bands, pts, 3000, 1, workers=8, block=512)
        assert a == b
