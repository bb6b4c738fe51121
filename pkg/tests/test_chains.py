"""Chain simulators: stationarity, orderings, jump transform, inefficiency
estimation, and the empirical jump-chain variance identity."""

import math

import numpy as np
import pytest

from pmtune import chains, oracle as oc
from pmtune.zkernel import degenerate_zgrid

STD_NORMAL = chains.TargetSpec(log_density=lambda th: -0.5 * float(th @ th), dim=1)


def rw_proposal(scale=2.4, dim=1, df=5.0):
    return chains.ProposalSpec(kind="random_walk_t", scale_root=scale * np.eye(dim), df=df)


def independence_normal():
    return chains.ProposalSpec(
        kind="independence",
        sample=lambda rng: rng.standard_normal(1),
        log_density=lambda th: -0.5 * float(th @ th),
    )


def if_of(trace, col=0):
    return chains.estimate_if(trace.thetas[:, col])


class TestExactChain:
    def test_standard_normal_moments(self):
        trace = chains.run_exact_chain(STD_NORMAL, rw_proposal(), 100_000, seed=1)
        est = if_of(trace)
        se_mean = math.sqrt(est.value / trace.n)
        assert abs(trace.thetas[:, 0].mean()) < 4 * se_mean
        assert trace.thetas[:, 0].var() == pytest.approx(1.0, abs=0.05)
        assert np.all(trace.zs == 0.0)

    def test_perfect_independence_proposal(self):
        trace = chains.run_exact_chain(STD_NORMAL, independence_normal(), 50_000, seed=2)
        assert trace.acceptance_rate == 1.0
        est = if_of(trace)
        assert est.value == pytest.approx(1.0, abs=0.05)

    def test_three_state_target_matches_matrix_oracle(self):
        """Categorical target embedded through a finite transition matrix."""
        pi = np.array([0.5, 0.3, 0.2])
        q = np.array([[0.0, 0.6, 0.4], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
        spec = oc.FiniteChainSpec(pi, q, degenerate_zgrid())
        p, _ = oc.build_mh_matrix(spec)
        h = np.array([1.0, -0.5, 2.0])
        exact, _ = oc.exact_if(p, pi, h)
        states, _ = oc.simulate_chain(p, 300_000, np.random.default_rng(4), stationary=pi)
        est = chains.estimate_if(h[states])
        assert abs(est.value - exact) < 3 * est.standard_error

    def test_bad_start_rejected(self):
        target = chains.TargetSpec(
            log_density=lambda th: -math.inf if th[0] < 0 else 0.0, dim=1
        )
        with pytest.raises(ValueError):
            chains.run_exact_chain(target, rw_proposal(), 1000, seed=0,
                                   theta0=np.array([-1.0]))


class TestPseudoMarginalChain:
    def test_zero_noise_equals_exact_path(self):
        t_pm = chains.run_pm_chain_gaussian(STD_NORMAL, rw_proposal(), 0.0, 5000, seed=3)
        t_ex = chains.run_exact_chain(STD_NORMAL, rw_proposal(), 5000, seed=3)
        np.testing.assert_array_equal(t_pm.thetas, t_ex.thetas)
        np.testing.assert_array_equal(t_pm.accepted, t_ex.accepted)

    def test_noise_marginal_is_tilted(self):
        sigma = 1.0
        trace = chains.run_pm_chain_gaussian(STD_NORMAL, rw_proposal(), sigma, 100_000, seed=4)
        z = trace.zs
        est = chains.estimate_if(z)
        se = math.sqrt(z.var() * est.value / z.size)
        assert abs(z.mean() - sigma**2 / 2) < 4 * se
        assert z.var() == pytest.approx(sigma**2, rel=0.1)

    def test_determinism(self):
        a = chains.run_pm_chain_gaussian(STD_NORMAL, rw_proposal(), 1.0, 2000, seed=11)
        b = chains.run_pm_chain_gaussian(STD_NORMAL, rw_proposal(), 1.0, 2000, seed=11)
        np.testing.assert_array_equal(a.thetas, b.thetas)
        np.testing.assert_array_equal(a.zs, b.zs)


class TestBoundingChain:
    def test_acceptance_dominated_by_pseudo_marginal(self):
        n = 60_000
        acc_q, acc_star = [], []
        for seed in range(4):
            acc_q.append(
                chains.run_pm_chain_gaussian(STD_NORMAL, rw_proposal(), 1.0, n,
                                             seed=(5, seed)).acceptance_rate
            )
            acc_star.append(
                chains.run_qstar_chain(STD_NORMAL, rw_proposal(), 1.0, n,
                                       seed=(6, seed)).acceptance_rate
            )
        se = math.sqrt(np.var(acc_q) / 4 + np.var(acc_star) / 4) + 1e-4
        assert np.mean(acc_star) <= np.mean(acc_q) + 3 * se

    def test_peskun_ordering_battery(self):
        """Chain inefficiencies order as exact <= pseudo-marginal <= bounding."""
        n = 120_000
        for sigma in (0.5, 1.0, 1.5):
            t_ex = chains.run_exact_chain(STD_NORMAL, rw_proposal(), n, seed=(7, 0))
            t_q = chains.run_pm_chain_gaussian(STD_NORMAL, rw_proposal(), sigma, n,
                                               seed=(7, 1))
            t_star = chains.run_qstar_chain(STD_NORMAL, rw_proposal(), sigma, n,
                                            seed=(7, 2))
            e_ex, e_q, e_star = if_of(t_ex), if_of(t_q), if_of(t_star)
            assert e_q.value >= e_ex.value - 3 * math.hypot(
                e_q.standard_error, e_ex.standard_error
            )
            assert e_star.value >= e_q.value - 3 * math.hypot(
                e_star.standard_error, e_q.standard_error
            )

    def test_perfect_proposal_bounding_inefficiency(self):
        """Independence proposals from the target at sigma=0.92 give the
        known inefficiency 2*pi_z(1/rho_z) - 1 = 4.54."""
        trace = chains.run_qstar_chain(
            STD_NORMAL, independence_normal(), 0.92, 200_000, seed=8
        )
        est = if_of(trace)
        assert abs(est.value - 4.54) < 3 * est.standard_error


class TestEstimatorChain:
    @staticmethod
    def _noisy_loglik(theta, rng, sigma=1.0):
        return -0.5 * float(theta @ theta) + rng.normal(-sigma**2 / 2, sigma)

    def test_matches_gaussian_noise_chain_statistics(self):
        log_prior = lambda th: 0.0  # noqa: E731 - flat prior, target is the estimator
        trace = chains.run_pm_chain_estimator(
            log_prior, self._noisy_loglik, rw_proposal(), 80_000, seed=9,
            theta0=np.zeros(1),
        )
        est = if_of(trace)
        se_mean = math.sqrt(trace.thetas[:, 0].var() * est.value / trace.n)
        assert abs(trace.thetas[:, 0].mean()) < 4 * se_mean

    def test_degenerate_estimates_rejected_and_counted(self):
        def sometimes_degenerate(theta, rng):
            if rng.random() < 0.05:
                return -math.inf
            return self._noisy_loglik(theta, rng)

        trace = chains.run_pm_chain_estimator(
            lambda th: 0.0, sometimes_degenerate, rw_proposal(), 5000, seed=10,
            theta0=np.zeros(1),
        )
        assert trace.n_minus_inf_rejects > 0

    def test_determinism(self):
        kwargs = dict(n=3000, seed=12, theta0=np.zeros(1))
        a = chains.run_pm_chain_estimator(lambda th: 0.0, self._noisy_loglik,
                                          rw_proposal(), **kwargs)
        b = chains.run_pm_chain_estimator(lambda th: 0.0, self._noisy_loglik,
                                          rw_proposal(), **kwargs)
        np.testing.assert_array_equal(a.thetas, b.thetas)


class TestJumpTransform:
    def test_all_accepted_gives_unit_sojourns(self):
        trace = chains.run_exact_chain(STD_NORMAL, independence_normal(), 5000, seed=13)
        jt = chains.to_jump_chain(trace)
        assert np.all(jt.sojourns == 1)

    def test_round_trip_exact(self):
        trace = chains.run_pm_chain_gaussian(STD_NORMAL, rw_proposal(), 1.0, 20_000, seed=14)
        jt = chains.to_jump_chain(trace)
        assert jt.sojourns.sum() == trace.n
        thetas, zs = jt.reconstruct()
        np.testing.assert_array_equal(thetas, trace.thetas)
        np.testing.assert_array_equal(zs, trace.zs)

    def test_jump_occupancy_matches_tilted_law(self):
        """Accepted states occupy each node proportionally to mu * rho."""
        spec_pi = np.array([0.5, 0.3, 0.2])
        q = np.array([[0.0, 0.6, 0.4], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
        spec = oc.FiniteChainSpec(spec_pi, q, degenerate_zgrid())
        p, _ = oc.build_mh_matrix(spec)
        _, mu_jump, rho = oc.jump_matrix(p, spec_pi)
        states, accepted = oc.simulate_chain(p, 400_000, np.random.default_rng(15),
                                             stationary=spec_pi)
        jump_states = states[accepted]
        freq = np.bincount(jump_states, minlength=3) / jump_states.size
        # binomial-scale error bars, inflated for serial dependence
        se = 3 * np.sqrt(mu_jump * (1 - mu_jump) / jump_states.size) * 3
        assert np.all(np.abs(freq - mu_jump) < np.maximum(se, 0.004))


class TestEstimateIf:
    def test_iid_is_one(self):
        x = np.random.default_rng(16).standard_normal(100_000)
        assert chains.estimate_if(x).value == pytest.approx(1.0, abs=0.05)
        assert chains.estimate_if(x, method="batch_means").value == pytest.approx(
            1.0, abs=0.1
        )

    def test_linear_autoregression(self):
        """AR(1) series with coefficient 0.8 has inefficiency (1+a)/(1-a) = 9."""
        rng = np.random.default_rng(17)
        n = 400_000
        x = np.empty(n)
        x[0] = rng.standard_normal()
        eps = rng.standard_normal(n)
        for t in range(1, n):
            x[t] = 0.8 * x[t - 1] + eps[t]
        est = chains.estimate_if(x)
        assert abs(est.value - 9.0) < 3 * est.standard_error

    def test_two_state_flip_chain(self):
        """Symmetric flip probability 1/4: eigenvalue 1/2, inefficiency 3,
        cross-checked against the exact spectral value."""
        p = np.array([[0.75, 0.25], [0.25, 0.75]])
        mu = np.array([0.5, 0.5])
        h = np.array([1.0, 0.0])
        exact, _ = oc.exact_if(p, mu, h)
        assert exact == pytest.approx(3.0, rel=1e-12)
        states, _ = oc.simulate_chain(p, 300_000, np.random.default_rng(18), stationary=mu)
        est = chains.estimate_if(h[states])
        assert abs(est.value - 3.0) < 3 * est.standard_error

    def test_methods_agree(self):
        trace = chains.run_exact_chain(STD_NORMAL, rw_proposal(), 150_000, seed=19)
        a = chains.estimate_if(trace.thetas[:, 0])
        b = chains.estimate_if(trace.thetas[:, 0], method="batch_means")
        assert abs(a.value - b.value) < 3 * math.hypot(a.standard_error, b.standard_error)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            chains.estimate_if(np.ones(500))
        with pytest.raises(ValueError):
            chains.estimate_if(np.arange(10.0))
        with pytest.raises(ValueError):
            chains.estimate_if(np.arange(500.0), method="bogus")


class TestJumpIdentityEmpirical:
    def test_three_state_oracle_chain(self):
        """Both sides of the variance identity estimated from one long path
        agree within replication error."""
        pi = np.array([0.45, 0.35, 0.2])
        q = np.array([[0.0, 0.7, 0.3], [0.6, 0.0, 0.4], [0.5, 0.5, 0.0]])
        spec = oc.FiniteChainSpec(pi, q, degenerate_zgrid())
        p, _ = oc.build_mh_matrix(spec)
        _, _, rho = oc.jump_matrix(p, pi)
        h = np.array([1.0, -1.0, 0.5])
        ratios = []
        for rep in range(12):
            states, accepted = oc.simulate_chain(
                p, 150_000, np.random.default_rng((20, rep)), stationary=pi
            )
            report = chains.verify_jump_identity_empirical(states, accepted, h, rho, pi)
            ratios.append(report.lhs / report.rhs)
        ratios = np.array(ratios)
        assert abs(ratios.mean() - 1.0) < 3 * ratios.std(ddof=1) / math.sqrt(ratios.size)

    def test_exact_sides_match_matrix_oracle(self):
        pi = np.array([0.45, 0.35, 0.2])
        q = np.array([[0.0, 0.7, 0.3], [0.6, 0.0, 0.4], [0.5, 0.5, 0.0]])
        spec = oc.FiniteChainSpec(pi, q, degenerate_zgrid())
        p, _ = oc.build_mh_matrix(spec)
        assert oc.verify_jump_identity(p, pi, np.array([1.0, -1.0, 0.5])) < 1e-10

    def test_all_accept_chain_reduces_to_equal_inefficiencies(self):
        """With rho identically one the jump chain is the chain itself."""
        p = np.array([[0.0, 0.6, 0.4], [0.3, 0.0, 0.7], [0.6, 0.4, 0.0]])
        w, v = np.linalg.eig(p.T)
        mu = np.abs(v[:, np.argmax(w.real)].real)
        mu /= mu.sum()
        # not reversible in general; build a reversible all-accept chain instead
        pi = np.array([0.3, 0.3, 0.4])
        sym = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])
        flux = (pi[:, None] * sym + pi[None, :] * sym.T) / 2.0
        p_rev = flux / flux.sum(axis=1, keepdims=True)
        mu_rev = flux.sum(axis=1) / flux.sum()
        h = np.array([1.0, 0.0, -1.0])
        if_chain, _ = oc.exact_if(p_rev, mu_rev, h - mu_rev @ h)
        p_jump, mu_jump, rho = oc.jump_matrix(p_rev, mu_rev)
        np.testing.assert_allclose(rho, 1.0, atol=1e-14)
        if_jump, _ = oc.exact_if(p_jump, mu_jump, (h - mu_rev @ h) / rho)
        assert if_jump == pytest.approx(if_chain, rel=1e-12)


class TestProposalSpec:
    def test_autoregressive_ratio_consistency(self):
        """Forward/backward proposal densities satisfy the same identity the
        chain driver relies on: log q(b->a) - log q(a->b)."""
        prop = chains.ProposalSpec(
            kind="autoregressive_t",
            scale_root=np.array([[0.5, 0.1], [0.0, 0.4]]),
            df=5.0,
            ar_rho=0.6,
            center=np.array([0.2, -0.1]),
        )
        rng = np.random.default_rng(30)
        a = rng.normal(size=2)
        b, log_ratio = prop.propose(a, rng)
        mean_fwd = (1 - 0.6) * prop.center + 0.6 * a
        mean_bwd = (1 - 0.6) * prop.center + 0.6 * b
        expected = prop._t_logpdf(a - mean_bwd) - prop._t_logpdf(b - mean_fwd)
        assert log_ratio == pytest.approx(expected, rel=1e-12)

    def test_autoregressive_chain_targets_correctly(self):
        """An off-centre autoregressive proposal still leaves the target
        invariant once the proposal ratio is included."""
        prop = chains.ProposalSpec(
            kind="autoregressive_t",
            scale_root=np.array([[1.0]]),
            df=5.0,
            ar_rho=0.7,
            center=np.array([0.8]),  # deliberately not the target mean
        )
        trace = chains.run_exact_chain(STD_NORMAL, prop, 200_000, seed=31)
        est = if_of(trace)
        se_mean = math.sqrt(trace.thetas[:, 0].var() * est.value / trace.n)
        assert abs(trace.thetas[:, 0].mean()) < 4 * se_mean
        assert trace.thetas[:, 0].var() == pytest.approx(1.0, abs=0.06)

    def test_validation(self):
        with pytest.raises(ValueError):
            chains.ProposalSpec(kind="random_walk_t", scale_root=np.eye(1), df=2.0)
        with pytest.raises(ValueError):
            chains.ProposalSpec(kind="autoregressive_t", scale_root=np.eye(1), ar_rho=1.0,
                                center=np.zeros(1))
        with pytest.raises(ValueError):
            chains.ProposalSpec(kind="independence")
        with pytest.raises(ValueError):
            chains.ProposalSpec(kind="mala", scale_root=np.eye(1))

    def test_trace_csv(self, tmp_path):
        trace = chains.run_exact_chain(STD_NORMAL, rw_proposal(), 500, seed=1)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "iter,accepted,z,theta_1"
