"""End-to-end tuning studies on the two state-space models.

The AR(1) study mirrors the tuning experiment the bounds are calibrated
against: simulate data, locate the likelihood mode and curvature with the
Kalman filter, run the exact chain per proposal persistence, then sweep the
particle count and record inefficiencies, computing times, acceptance rates
and the acceptance lower bound ``2*Phi(-sigma/sqrt(2)) * pr_acc_exact``.

The stochastic-volatility study runs on synthetic data only: calibrate the
particle count for a target noise scale, check the Gaussian error model
moments, and compare chain inefficiencies at the calibrated count against a
large-count proxy for the exact chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import optimize
from scipy.special import ndtr

from . import calibrate as cal
from . import chains, ssm
from .rngutil import seed_sequence
from .ssm import _ar1_apf_value

__all__ = [
    "Ar1StudyConfig",
    "Ar1CellResult",
    "Ar1StudyResult",
    "ar1_posterior_gadgets",
    "run_ar1_pm_cell",
    "run_ar1_study",
    "SvStudyConfig",
    "SvStudyResult",
    "run_sv_study",
]

_SQRT2 = math.sqrt(2.0)

AR1_N_GRID = (11, 16, 22, 31, 43, 60, 83, 116, 161, 224, 312)


@dataclass(frozen=True)
class Ar1StudyConfig:
    n_obs: int = 300
    data_seed: int = 26
    chain_len_exact: int = 200_000
    chain_len_pm: int = 150_000
    pilot_len: int = 40_000
    burn_in: float = 0.1
    n_grid: tuple = AR1_N_GRID
    rho_list: tuple = (0.0, 0.9)
    sigma_reps: int = 500
    prior_sd: float = 10.0
    df: float = 5.0
    seed: int = 90210


@dataclass(frozen=True)
class Ar1CellResult:
    rho: float
    n_particles: int
    sigma_hat: float
    sigma_se: float
    if_values: np.ndarray  # per natural parameter (phi, mu_x, sigma_x)
    if_ses: np.ndarray
    ct_values: np.ndarray  # N * IF
    rct_values: np.ndarray  # IF / IF_exact / sigma^2
    acc_rate: float
    acc_lower_bound: float


@dataclass(frozen=True)
class Ar1StudyResult:
    config: Ar1StudyConfig
    y: np.ndarray
    theta_bar: np.ndarray  # posterior mean on the natural scale (rho = first entry of rho_list)
    exact: dict  # rho -> dict(if_values, if_ses, acc_rate, theta_bar)
    cells: list = field(default_factory=list)

    def cells_for(self, rho):
        return [c for c in self.cells if c.rho == rho]


def _natural_columns(psis):
    """Unconstrained chain columns -> (phi, mu_x, sigma_x) columns."""
    out = np.empty_like(psis)
    out[:, 0] = np.tanh(psis[:, 0])
    out[:, 1] = psis[:, 1]
    out[:, 2] = np.exp(psis[:, 2])
    return out


def ar1_posterior_gadgets(y, sigma_eps2=0.5, prior_sd=10.0):
    """Log posterior on the unconstrained scale, likelihood mode and curvature.

    The proposal is centred at the mode of the Kalman log-likelihood with
    scale from the inverse negative Hessian there (finite differences).
    """
    def loglik(psi):
        return ssm.kalman_loglik(ssm.ar1_from_unconstrained(psi, sigma_eps2), y)

    def log_prior(psi):
        return float(-0.5 * np.sum(np.asarray(psi) ** 2) / (prior_sd * prior_sd))

    def log_post(psi):
        return loglik(psi) + log_prior(psi)

    start = ssm.ar1_to_unconstrained(ssm.Ar1Model(sigma_eps2=sigma_eps2))
    res = optimize.minimize(lambda p: -loglik(p), start, method="Nelder-Mead",
                            options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 4000})
    psi_hat = res.x
    hess = _numerical_hessian(loglik, psi_hat)
    cov = np.linalg.inv(-hess)
    # clip tiny/negative curvature directions, then take a Cholesky root
    eigvals, eigvecs = np.linalg.eigh(0.5 * (cov + cov.T))
    cov_psd = eigvecs @ np.diag(np.maximum(eigvals, 1e-10)) @ eigvecs.T
    scale_root = np.linalg.cholesky(cov_psd)
    return log_post, log_prior, psi_hat, scale_root


def _numerical_hessian(f, x, step=1e-4):
    x = np.asarray(x, dtype=float)
    d = x.size
    hess = np.empty((d, d))
    f0 = f(x)
    for i in range(d):
        for j in range(i, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = step
            ej[j] = step
            if i == j:
                val = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (step * step)
            else:
                val = (
                    f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
                ) / (4.0 * step * step)
            hess[i, j] = val
            hess[j, i] = val
    return hess


def _if_per_parameter(trace):
    nat = _natural_columns(trace.thetas)
    ests = [chains.estimate_if(nat[:, j]) for j in range(nat.shape[1])]
    return (
        np.array([e.value for e in ests]),
        np.array([e.standard_error for e in ests]),
        nat.mean(axis=0),
    )


@njit(cache=True)
def _ar1_pm_chain_core(
    y, n_iter, n_burn, n_particles, psi0, center, root, root_inv, ar_rho, df,
    prior_var, sigma_eps2, rng,
):
    """Jitted pseudo-marginal chain for the AR(1) study.

    Semantics match :func:`pmtune.chains.run_pm_chain_estimator` with an
    autoregressive t proposal and the adapted filter as the estimator; the
    whole iteration runs compiled because the study sweeps millions of
    iterations across the particle-count grid.
    """
    d = 3
    t_scale = np.sqrt((df - 2.0) / df) * np.sqrt(1.0 - ar_rho * ar_rho)
    psi = psi0.copy()
    prop = np.empty(d)
    u_vec = np.empty(d)
    phi = np.tanh(psi[0])
    sx2 = np.exp(2.0 * psi[2])
    llhat = _ar1_apf_value(phi, psi[1], sx2, sigma_eps2, y, n_particles, rng)
    log_prior = -0.5 * (psi[0] ** 2 + psi[1] ** 2 + psi[2] ** 2) / prior_var
    psis = np.empty((n_iter, d))
    lls = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=np.bool_)
    total = n_iter + n_burn
    for it in range(total):
        # multivariate t draw: scaled normals over a common chi-square
        tfac = np.sqrt(df / rng.chisquare(df)) * t_scale
        for i in range(d):
            u_vec[i] = rng.standard_normal() * tfac
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += root[i, j] * u_vec[j]
            prop[i] = (1.0 - ar_rho) * center[i] + ar_rho * psi[i] + acc
        # forward quadratic form is the t draw itself
        q_fwd = (u_vec[0] ** 2 + u_vec[1] ** 2 + u_vec[2] ** 2) / (t_scale * t_scale)
        # backward: standardized residual of psi under the reversed move
        q_bwd = 0.0
        for i in range(d):
            resid = psi[i] - ((1.0 - ar_rho) * center[i] + ar_rho * prop[i])
            u_vec[i] = resid
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += root_inv[i, j] * u_vec[j]
            q_bwd += (acc / t_scale) ** 2
        log_qratio = (
            -0.5 * (df + d) * (np.log1p(q_bwd / df) - np.log1p(q_fwd / df))
        )
        lp_prop = -0.5 * (prop[0] ** 2 + prop[1] ** 2 + prop[2] ** 2) / prior_var
        phi_p = np.tanh(prop[0])
        sx2_p = np.exp(2.0 * prop[2])
        ll_prop = _ar1_apf_value(phi_p, prop[1], sx2_p, sigma_eps2, y, n_particles, rng)
        accept = np.log(rng.random()) < (ll_prop + lp_prop) - (llhat + log_prior) + log_qratio
        if accept:
            psi[0] = prop[0]
            psi[1] = prop[1]
            psi[2] = prop[2]
            llhat = ll_prop
            log_prior = lp_prop
        if it >= n_burn:
            k = it - n_burn
            psis[k, 0] = psi[0]
            psis[k, 1] = psi[1]
            psis[k, 2] = psi[2]
            lls[k] = llhat
            accepted[k] = accept
    accepted[0] = True
    return psis, lls, accepted


def run_ar1_pm_cell(y, n_particles, proposal_center, scale_root, ar_rho, n_iter, seed,
                    burn_in=0.1, df=5.0, prior_sd=10.0, sigma_eps2=0.5):
    """One pseudo-marginal study cell as a chain trace (jitted driver)."""
    rng = np.random.default_rng(seed)
    n_burn = int(round(burn_in * n_iter))
    root = np.ascontiguousarray(scale_root, dtype=np.float64)
    psis, lls, accepted = _ar1_pm_chain_core(
        np.ascontiguousarray(y, dtype=np.float64),
        n_iter,
        n_burn,
        n_particles,
        np.ascontiguousarray(proposal_center, dtype=np.float64),
        np.ascontiguousarray(proposal_center, dtype=np.float64),
        root,
        np.ascontiguousarray(np.linalg.inv(root)),
        float(ar_rho),
        float(df),
        float(prior_sd) ** 2,
        float(sigma_eps2),
        rng,
    )
    return chains.Trace(
        thetas=psis,
        zs=lls,
        accepted=accepted,
        kernel_id="pseudo_marginal_estimator",
        seed=seed,
        burn_in_dropped=n_burn,
    )


def run_ar1_study(config: Ar1StudyConfig = Ar1StudyConfig(), progress=None):
    """Full particle-count sweep for the AR(1) model.

    For each proposal persistence ``rho``: run the exact (Kalman) chain, take
    the posterior mean as the noise reference point, estimate ``sigma(N)``
    with the adapted filter, then run one pseudo-marginal chain per ``N``.
    """
    model_true = ssm.Ar1Model()
    y, _ = ssm.simulate_ar1(model_true, config.n_obs, config.data_seed)
    log_post, log_prior, psi_hat, laplace_root = ar1_posterior_gadgets(
        y, model_true.sigma_eps2, config.prior_sd
    )
    target = chains.TargetSpec(log_density=log_post, dim=3)

    # refine the proposal with a cheap exact pilot: the curvature at the mode
    # understates the posterior spread at this series length, which costs a
    # factor ~2 of exact-chain inefficiency for an independence proposal
    pilot_prop = chains.ProposalSpec(
        kind="autoregressive_t", scale_root=laplace_root, df=config.df, ar_rho=0.0,
        center=psi_hat,
    )
    pilot = chains.run_exact_chain(
        target, pilot_prop, config.pilot_len,
        seed=seed_sequence(config.seed, 500), theta0=psi_hat, burn_in=config.burn_in,
    )
    center = pilot.thetas.mean(axis=0)
    scale_root = np.linalg.cholesky(np.cov(pilot.thetas.T))

    exact = {}
    cells = []
    theta_bar_first = None
    sigma_points = None
    for rho in config.rho_list:
        proposal = chains.ProposalSpec(
            kind="autoregressive_t",
            scale_root=scale_root,
            df=config.df,
            ar_rho=rho,
            center=center,
        )
        trace = chains.run_exact_chain(
            target,
            proposal,
            config.chain_len_exact,
            seed=seed_sequence(config.seed, 1000 + round(rho * 10)),
            theta0=psi_hat,
            burn_in=config.burn_in,
        )
        if_values, if_ses, theta_bar = _if_per_parameter(trace)
        exact[rho] = {
            "if_values": if_values,
            "if_ses": if_ses,
            "acc_rate": trace.acceptance_rate,
            "theta_bar": theta_bar,
        }
        if theta_bar_first is None:
            theta_bar_first = theta_bar
        if progress:
            progress(f"exact chain rho={rho}: IF={np.round(if_values, 3)} "
                     f"acc={trace.acceptance_rate:.4f}")

        if sigma_points is None:
            # noise scale is a property of the estimator at the posterior
            # mean, not of the proposal; tabulate it once
            model_ref = ssm.Ar1Model(
                phi=float(np.clip(theta_bar[0], -0.999, 0.999)),
                mu_x=float(theta_bar[1]),
                sigma_x2=float(theta_bar[2] ** 2),
                sigma_eps2=model_true.sigma_eps2,
            )
            exact_ll_ref = ssm.kalman_loglik(model_ref, y)

            def sigma_runner(n_particles, rng, _m=model_ref):
                return ssm.pf_loglik_adapted(_m, y, n_particles, rng).value

            sigma_points = {
                n: cal.estimate_sigma(
                    sigma_runner, n, config.sigma_reps, seed=(config.seed, 17),
                    exact_loglik=exact_ll_ref,
                )
                for n in config.n_grid
            }

        for n_particles in config.n_grid:
            point = sigma_points[n_particles]

            pm_trace = run_ar1_pm_cell(
                y,
                n_particles,
                center,
                scale_root,
                rho,
                config.chain_len_pm,
                seed=seed_sequence(config.seed, 2000 + round(rho * 10), n_particles),
                burn_in=config.burn_in,
                df=config.df,
                prior_sd=config.prior_sd,
                sigma_eps2=model_true.sigma_eps2,
            )
            pm_if, pm_se, _ = _if_per_parameter(pm_trace)
            sig2 = point.sigma_hat**2
            cell = Ar1CellResult(
                rho=rho,
                n_particles=n_particles,
                sigma_hat=point.sigma_hat,
                sigma_se=point.se,
                if_values=pm_if,
                if_ses=pm_se,
                ct_values=n_particles * pm_if,
                rct_values=pm_if / if_values / sig2,
                acc_rate=pm_trace.acceptance_rate,
                acc_lower_bound=float(
                    2.0 * ndtr(-point.sigma_hat / _SQRT2) * trace.acceptance_rate
                ),
            )
            cells.append(cell)
            if progress:
                progress(
                    f"rho={rho} N={n_particles}: sigma={point.sigma_hat:.4f} "
                    f"IF={np.round(pm_if, 2)} acc={pm_trace.acceptance_rate:.4f}"
                )
    return Ar1StudyResult(
        config=config, y=y, theta_bar=theta_bar_first, exact=exact, cells=cells
    )


# -- stochastic volatility study ----------------------------------------------


@dataclass(frozen=True)
class SvStudyConfig:
    n_obs: int = 300
    data_seed: int = 5
    sigma_target: float = 1.2
    calib_reps: int = 300
    diag_reps: int = 400
    chain_len_cal: int = 30_000
    chain_len_proxy: int = 10_000
    pilot_len: int = 4_000
    proxy_particles: int = 2_000
    burn_in: float = 0.1
    # isotropic pilot step on the unconstrained scale: tuned constant over
    # the 1/sqrt(n_obs) scaling (acceptance ~0.26 at the proxy count)
    step_constant: float = 0.9
    # final per-axis steps: pilot posterior sds times step_factor/sqrt(d)
    step_factor: float = 1.7
    # moderately informative prior: at this series length several of the nine
    # parameters are weakly identified, and a fully vague prior leaves the
    # posterior too diffuse for any fixed random-walk step to traverse
    prior_sd: float = 1.5
    df: float = 5.0
    seed: int = 777


@dataclass(frozen=True)
class SvStudyResult:
    config: SvStudyConfig
    model: ssm.Sv2fModel
    y: np.ndarray
    n_calibrated: int
    sigma_at_n: float
    diagnostics: cal.ZDiagnostics
    if_cal: np.ndarray
    if_cal_se: np.ndarray
    if_proxy: np.ndarray
    if_proxy_se: np.ndarray
    acc_cal: float
    acc_proxy: float


def _default_sv_model():
    # moderate volatility-of-volatility so the bootstrap filter's noise
    # constant keeps the calibrated particle count at laptop scale
    return ssm.Sv2fModel()


def run_sv_study(config: SvStudyConfig = SvStudyConfig(), progress=None):
    """Synthetic two-factor volatility study at a calibrated particle count."""
    model = _default_sv_model()
    y, _, _ = ssm.simulate_sv2f(model, config.n_obs, config.data_seed)
    psi_ref = ssm.sv2f_to_unconstrained(model)

    def sigma_runner(n_particles, rng):
        return ssm.sv2f_pf_loglik(model, y, n_particles, rng).value

    choice = cal.choose_n(
        sigma_runner,
        config.sigma_target,
        seed=(config.seed, 1),
        theta_ref=psi_ref,
        pilot_grid=(25, 50, 100, 200, 400),
        n_reps=config.calib_reps,
    )
    n_cal = choice.n_star
    if progress:
        progress(f"calibrated N={n_cal} (c={choice.c_fit:.1f}, R2={choice.r_squared:.4f})")

    # fresh replications for the moment diagnostics, scale taken from the
    # calibration confirmation run
    values = np.empty(config.diag_reps)
    for r in range(config.diag_reps):
        rng = np.random.default_rng(seed_sequence(config.seed, 2, r))
        values[r] = ssm.sv2f_pf_loglik(model, y, n_cal, rng).value
    z = values - (np.logaddexp.reduce(values) - math.log(values.size))
    diagnostics = cal.z_diagnostics(z, sigma=choice.confirmation.sigma_hat)

    def log_prior(psi):
        return float(-0.5 * np.sum(np.asarray(psi) ** 2) / (config.prior_sd**2))

    def run_chain(proposal, n_particles, n_iter, tag):
        def loglik_est(psi, rng):
            m = ssm.sv2f_from_unconstrained(psi, template=model)
            return ssm.sv2f_pf_loglik(m, y, n_particles, rng).value

        trace = chains.run_pm_chain_estimator(
            log_prior,
            loglik_est,
            proposal,
            n_iter,
            seed=seed_sequence(config.seed, 3, n_particles, n_iter),
            theta0=psi_ref,
            burn_in=config.burn_in,
        )
        ests = [chains.estimate_if(trace.thetas[:, j]) for j in range(9)]
        if progress:
            progress(f"{tag}: acc={trace.acceptance_rate:.4f} "
                     f"IF={np.round([e.value for e in ests], 1)}")
        return (
            np.array([e.value for e in ests]),
            np.array([e.standard_error for e in ests]),
            trace.acceptance_rate,
            trace,
        )

    # the nine components have very different posterior scales (several are
    # weakly identified at this series length), so a pilot run at the proxy
    # count sets per-axis random-walk steps
    step0 = config.step_constant / math.sqrt(config.n_obs)
    pilot_prop = chains.ProposalSpec(
        kind="random_walk_t", scale_root=step0 * np.eye(9), df=config.df
    )
    _, _, _, sv_pilot = run_chain(
        pilot_prop, config.proxy_particles, config.pilot_len, "pilot"
    )
    sds = np.maximum(sv_pilot.thetas.std(axis=0), 0.02)
    proposal = chains.ProposalSpec(
        kind="random_walk_t",
        scale_root=np.diag(config.step_factor / 3.0 * sds),
        df=config.df,
    )

    if_cal, if_cal_se, acc_cal, _ = run_chain(
        proposal, n_cal, config.chain_len_cal, f"chain N={n_cal}"
    )
    if_proxy, if_proxy_se, acc_proxy, _ = run_chain(
        proposal, config.proxy_particles, config.chain_len_proxy,
        f"proxy N={config.proxy_particles}"
    )
    return SvStudyResult(
        config=config,
        model=model,
        y=y,
        n_calibrated=n_cal,
        sigma_at_n=choice.confirmation.sigma_hat,
        diagnostics=diagnostics,
        if_cal=if_cal,
        if_cal_se=if_cal_se,
        if_proxy=if_proxy,
        if_proxy_se=if_proxy_se,
        acc_cal=acc_cal,
        acc_proxy=acc_proxy,
    )
