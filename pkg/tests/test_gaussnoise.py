"""Closed forms and Monte Carlo estimators for the Gaussian noise law."""

import io
import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import ndtr

from pmtune import gaussnoise as gn
from pmtune import zkernel as zk


class TestDensities:
    def test_noise_density_at_its_mean(self):
        assert gn.noise_density(1.0, -0.5) == pytest.approx(1.0 / math.sqrt(2 * math.pi))
        assert gn.noise_density(2.0, -2.0) == pytest.approx(1.0 / (2 * math.sqrt(2 * math.pi)))

    def test_tilted_density_values(self):
        assert gn.tilted_density(1.0, 0.5) == pytest.approx(1.0 / math.sqrt(2 * math.pi))
        assert gn.tilted_density(2.0, 0.0) == pytest.approx(0.1209853622595717, rel=1e-12)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0])
    def test_unbiasedness_identity_by_quadrature(self, sigma):
        """integral of exp(z) g(z) dz must equal one."""
        val, err = integrate.quad(
            lambda z: math.exp(z) * gn.noise_density(sigma, z),
            -sigma * 12 - sigma**2, sigma * 12 + sigma**2, epsabs=0, epsrel=1e-12, limit=200,
        )
        assert val == pytest.approx(1.0, abs=1e-9)

    def test_tilted_is_exp_weighted_noise_density(self):
        zs = np.array([-3.0, -1.0, 0.0, 1.0, 3.0])
        lhs = np.exp(zs) * gn.noise_density(1.2, zs)
        np.testing.assert_allclose(lhs, gn.tilted_density(1.2, zs), rtol=0, atol=1e-14)

    def test_sigma_validation(self):
        for fn in (gn.noise_density, gn.tilted_density, gn.accept_rate_z):
            with pytest.raises(ValueError):
                fn(0.0, 0.0)
            with pytest.raises(ValueError):
                fn(-1.0, 0.0)


class TestAcceptRate:
    def test_value_at_zero(self):
        # 1 - Phi(1/2) + Phi(-1/2) = 2 Phi(-1/2)
        assert gn.accept_rate_z(1.0, 0.0) == pytest.approx(2 * ndtr(-0.5), rel=1e-12)

    def test_monotone_non_increasing(self):
        zs = np.linspace(-8.0, 8.0, 400)
        vals = gn.accept_rate_z(1.5, zs)
        assert np.all(np.diff(vals) <= 1e-15)
        assert vals[0] <= 1.0 and vals[-1] > 0.0

    def test_zero_noise_limit_always_accepts(self):
        assert gn.accept_rate_z(1e-8, 0.0) == pytest.approx(1.0, abs=1e-6)

    def test_extreme_z_no_overflow(self):
        assert gn.accept_rate_z(1.0, -500.0) == pytest.approx(1.0, abs=1e-12)
        assert gn.accept_rate_z(1.0, 500.0) >= 0.0


class TestMeanAcceptance:
    def test_closed_form_against_quadrature(self):
        for sigma in np.arange(0.25, 3.01, 0.25):
            quad, _ = integrate.quad(
                lambda z: gn.tilted_density(sigma, z) * gn.accept_rate_z(sigma, z),
                -12 * sigma, 12 * sigma + sigma**2, epsabs=0, epsrel=1e-12, limit=200,
            )
            assert abs(gn.mean_accept_z(sigma) - quad) < 1e-8

    def test_values(self):
        assert gn.mean_accept_z(0.0) == 1.0
        assert gn.mean_accept_z(3.0) == pytest.approx(0.0338949, abs=1e-6)
        # printed two-decimal value 0.51 is a truncation of this
        assert gn.mean_accept_z(0.92) == pytest.approx(0.515345, abs=1e-6)


class TestInverseAcceptance:
    def test_zero_limit(self):
        assert gn.inv_accept_integral(0.0) == 1.0

    def test_known_values(self):
        assert gn.inv_accept_integral(0.92) == pytest.approx(2.77, abs=0.005)
        assert gn.inv_accept_integral(1.2) == pytest.approx(4.892, abs=0.005)

    def test_jensen_floor(self):
        for sigma in (0.3, 0.92, 1.68, 2.5):
            inv = gn.inv_accept_integral(sigma)
            assert inv >= 1.0 / gn.mean_accept_z(sigma) >= 1.0

    def test_matches_direct_tilted_expectation(self):
        """Same functional computed directly as E_tilted[1/rho_z]."""
        for sigma in (0.7, 1.5):
            direct, _ = integrate.quad(
                lambda z: gn.tilted_density(sigma, z) / gn.accept_rate_z(sigma, z),
                -10 * sigma, 10 * sigma + sigma**2, epsabs=0, epsrel=1e-11, limit=300,
            )
            assert gn.inv_accept_integral(sigma) == pytest.approx(direct, rel=1e-8)


def _jump_cdf(sigma, z0, w):
    """Exact CDF of one jump-kernel step from z0.

    The kernel density is g(w) min(1, exp(w - z0)) / rho_z(z0): below z0 it
    integrates to exp(-z0) times the tilted CDF, above z0 to the plain noise
    CDF increment.
    """
    w = np.asarray(w, dtype=float)
    tilted_cdf = ndtr((np.minimum(w, z0) - sigma**2 / 2) / sigma)
    noise_part = np.where(
        w > z0,
        ndtr((w + sigma**2 / 2) / sigma) - ndtr((z0 + sigma**2 / 2) / sigma),
        0.0,
    )
    return (np.exp(-z0) * tilted_cdf + noise_part) / gn.accept_rate_z(sigma, z0)


class TestJumpSampler:
    def test_far_left_start_accepts_immediately(self):
        rng = np.random.default_rng(0)
        sigma = 1.0
        accepted_first = 0
        n = 10_000
        for _ in range(n):
            state = rng.bit_generator.state
            w = gn.sample_jump_z(sigma, -10.0, rng)
            # a first-proposal acceptance consumes at most two draws
            rng.bit_generator.state = state
            w1 = rng.normal(-0.5, 1.0)
            if w1 >= -10.0:
                accepted_first += 1
                assert w == w1
            else:
                gn.sample_jump_z(sigma, -10.0, rng)  # realign the stream
        assert accepted_first / n >= 0.999

    def test_one_step_distribution_matches_exact_cdf(self):
        """KS test of one jump step from z=0 against the analytic kernel CDF."""
        sigma, z0 = 1.0, 0.0
        rng = np.random.default_rng(42)
        draws = np.array([gn.sample_jump_z(sigma, z0, rng) for _ in range(20_000)])
        res = stats.ks_1samp(draws, lambda w: _jump_cdf(sigma, z0, w))
        assert res.pvalue > 0.01

    def test_stationarity_of_tilted_jump_law(self):
        """One kernel step leaves the jump chain's stationary law invariant."""
        sigma = 1.0
        rng = np.random.default_rng(7)
        start = gn.sample_tilted_stationary(sigma, 50_000, rng)
        stepped = np.array([gn.sample_jump_z(sigma, z, rng) for z in start[:25_000]])
        fresh = gn.sample_tilted_stationary(sigma, 50_000, rng)
        res = stats.ks_2samp(stepped, fresh)
        assert res.pvalue > 0.01

    def test_rejection_cap(self):
        rng = np.random.default_rng(1)
        with pytest.raises(gn.RejectionCapError):
            gn.sample_jump_z(1.0, 60.0, rng, max_tries=50)


class TestPhiAndIfEstimators:
    def test_lag_zero_is_exactly_one(self):
        est = gn.estimate_phi_n(1.0, 0, 5_000, np.random.default_rng(3))
        assert est.value == 1.0

    def test_phi1_matches_grid_oracle(self):
        """Monte Carlo lag-1 autocorrelation against the discretized kernel."""
        oracle = zk.gaussian_z_functionals(1.0, m=2001)
        est = gn.estimate_phi_n(1.0, 1, 400_000, np.random.default_rng(11))
        assert abs(est.value - oracle.phi1) < 3 * est.se

    def test_phi_decays_and_stays_nonnegative(self):
        oracle_phi = zk.phi_sequence_z(zk.uniform_zgrid(1.0, m=1001), 8)
        assert np.all(oracle_phi >= -1e-12)
        assert np.all(np.diff(oracle_phi) < 0)
        rng = np.random.default_rng(5)
        ests = [gn.estimate_phi_n(1.0, n, 150_000, rng) for n in (1, 2, 4)]
        for est, n in zip(ests, (1, 2, 4)):
            assert abs(est.value - oracle_phi[n - 1]) < 4 * est.se

    def test_if_matches_grid_oracle(self):
        oracle = zk.gaussian_z_functionals(1.0, m=2001)
        est = gn.estimate_if_z(1.0, 400_000, cutoff=200, rng=np.random.default_rng(19))
        assert est.value >= 1.0
        assert abs(est.value - oracle.if_z) < 3 * max(est.se, 0.01)

    def test_zero_noise_limit(self):
        est = gn.estimate_if_z(1e-3, 20_000, cutoff=50, rng=np.random.default_rng(2))
        assert est.value == pytest.approx(1.0, abs=0.02)


class TestNoiseLawTable:
    def test_empty_grid(self):
        table = gn.build_table([], n_samples=1000, seed=0)
        assert table.grid.size == 0

    def test_singleton_anchor(self):
        table = gn.build_table([0.92], n_samples=50_000, seed=4)
        assert table.inv_accept[0] == pytest.approx(2.77, abs=0.005)
        assert table.if_z[0] >= 1.0
        assert 0.0 <= table.phi1[0] < 1.0

    def test_determinism_bitwise(self):
        t1 = gn.build_table([0.5, 1.0], n_samples=20_000, seed=123)
        t2 = gn.build_table([0.5, 1.0], n_samples=20_000, seed=123)
        np.testing.assert_array_equal(t1.phi1, t2.phi1)
        np.testing.assert_array_equal(t1.if_z, t2.if_z)
        np.testing.assert_array_equal(t1.inv_accept, t2.inv_accept)

    def test_matches_grid_oracle_pointwise(self):
        """Tabulated values agree with the deterministic kernel discretization.

        The inefficiency is not monotone in sigma over a wide grid (it peaks
        near sigma ~ 1.8 and falls again), so agreement is asserted per
        point rather than as a monotonicity property.
        """
        grid = [0.4, 1.0, 1.8]
        table = gn.build_table(grid, n_samples=150_000, seed=9)
        for i, sigma in enumerate(grid):
            oracle = zk.gaussian_z_functionals(sigma, m=1001)
            assert abs(table.phi1[i] - oracle.phi1) < 0.02
            assert abs(table.if_z[i] - oracle.if_z) < 0.05

    def test_large_sigma_reports_its_imprecision(self):
        """Beyond sigma ~ 2.5 the inverse acceptance rate is so heavy tailed
        (its mean at 2.6 is about 880) that the product estimator converges
        slowly; the contract there is an honest large standard error and a
        sane value, with precise work delegated to the grid evaluator."""
        oracle = zk.gaussian_z_functionals(2.6, m=1001)
        est = gn.estimate_if_z(2.6, 400_000, cutoff=200, rng=np.random.default_rng(14))
        assert est.value >= 1.0
        assert est.se > 0.005
        assert abs(est.value - oracle.if_z) < 0.35

    def test_if_monotone_on_rising_branch(self):
        sigmas = [0.2, 0.6, 1.0, 1.4]
        vals = [zk.gaussian_z_functionals(s, m=1001).if_z for s in sigmas]
        assert np.all(np.diff(vals) > 0)

    def test_csv_round_trip(self):
        table = gn.build_table([0.7, 1.3], n_samples=10_000, seed=8)
        buf = io.StringIO()
        table.to_csv(buf)
        buf.seek(0)
        back = gn.NoiseLawTable.from_csv(buf)
        np.testing.assert_array_equal(back.grid, table.grid)
        np.testing.assert_array_equal(back.inv_accept, table.inv_accept)
        np.testing.assert_array_equal(back.phi1, table.phi1)
        np.testing.assert_array_equal(back.if_z, table.if_z)
        assert back.seed == table.seed and back.n_samples == table.n_samples
