"""Chain simulators, the jump-chain transform, and inefficiency estimation.

Four Metropolis-type samplers share one driver:

* the exact chain (noise scale zero),
* the pseudo-marginal chain with synthetic Gaussian noise on the
  log-likelihood (acceptance ``min(1, exp(w - z) r)``),
* the bounding chain, which multiplies the parameter and noise acceptance
  probabilities (``min(1, r) * min(1, exp(w - z))``) and therefore mixes no
  better than the pseudo-marginal chain,
* the pseudo-marginal chain driven by a real log-likelihood estimator.

Traces record the parameter path, the noise (or log-likelihood-estimate)
path and per-iteration accept flags; the jump-chain transform and the
inefficiency estimators operate on those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TargetSpec",
    "ProposalSpec",
    "Trace",
    "JumpTrace",
    "IfEstimate",
    "run_exact_chain",
    "run_pm_chain_gaussian",
    "run_qstar_chain",
    "run_pm_chain_estimator",
    "to_jump_chain",
    "estimate_if",
    "if_report_json",
    "verify_jump_identity_empirical",
]


@dataclass(frozen=True)
class TargetSpec:
    """Unnormalized log target density on R^dim."""

    log_density: Callable[[np.ndarray], float]
    dim: int


@dataclass
class ProposalSpec:
    """Proposal kernel: t random walk, autoregressive t, or independence.

    ``scale_root`` is a d x d matrix square root of the proposal scale.  The
    autoregressive kind draws ``(1-ar_rho)*center + ar_rho*theta +
    sqrt(1-ar_rho^2) * sqrt((df-2)/df) * scale_root @ t_df`` and at
    ``ar_rho = 0`` reduces to an independence-style draw around ``center``.
    The independence kind takes explicit ``sample``/``log_density``
    callables (e.g. the target itself, for perfect-proposal studies).
    """

    kind: str
    scale_root: Optional[np.ndarray] = None
    df: float = 5.0
    ar_rho: float = 0.0
    center: Optional[np.ndarray] = None
    sample: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    log_density: Optional[Callable[[np.ndarray], float]] = None

    def __post_init__(self):
        if self.kind not in ("random_walk_t", "autoregressive_t", "independence"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if self.kind == "independence":
            if self.sample is None or self.log_density is None:
                raise ValueError("independence proposals need sample and log_density")
            return
        if self.scale_root is None:
            raise ValueError(f"{self.kind} proposals need a scale_root matrix")
        self.scale_root = np.atleast_2d(np.asarray(self.scale_root, dtype=float))
        if self.df <= 2.0:
            raise ValueError(f"degrees of freedom must exceed 2, got {self.df}")
        if not 0.0 <= self.ar_rho < 1.0:
            raise ValueError(f"autoregressive coefficient must be in [0, 1), got {self.ar_rho}")
        if self.kind == "autoregressive_t":
            if self.center is None:
                raise ValueError("autoregressive proposals need a center")
            self.center = np.asarray(self.center, dtype=float)
        # the effective scale of one t draw, including the variance-matching
        # factor for the autoregressive kind
        d = self.scale_root.shape[0]
        factor = math.sqrt((self.df - 2.0) / self.df)
        if self.kind == "autoregressive_t":
            factor *= math.sqrt(1.0 - self.ar_rho * self.ar_rho)
            self._root = factor * self.scale_root
        else:
            self._root = self.scale_root
        self._root_inv = np.linalg.inv(self._root)
        sign, logdet = np.linalg.slogdet(self._root)
        if sign <= 0:
            raise ValueError("scale_root must have positive determinant")
        self._logdet = logdet
        self._dim = d

    def _t_draw(self, rng):
        z = rng.standard_normal(self._dim)
        w = rng.chisquare(self.df)
        return z * math.sqrt(self.df / w)

    def _t_logpdf(self, u):
        """Log density of the elliptical t draw ``_root @ t_df`` at u (unnormalized
        constants included so forward/backward ratios are exact)."""
        y = self._root_inv @ u
        quad = float(y @ y)
        d, nu = self._dim, self.df
        return (
            math.lgamma((nu + d) / 2.0)
            - math.lgamma(nu / 2.0)
            - 0.5 * d * math.log(nu * math.pi)
            - self._logdet
            - 0.5 * (nu + d) * math.log1p(quad / nu)
        )

    def propose(self, theta, rng):
        """Return ``(proposal, log q(proposal -> theta) - log q(theta -> proposal))``."""
        if self.kind == "independence":
            prop = np.atleast_1d(np.asarray(self.sample(rng), dtype=float))
            return prop, self.log_density(theta) - self.log_density(prop)
        if self.kind == "random_walk_t":
            prop = theta + self._root @ self._t_draw(rng)
            return prop, 0.0  # symmetric
        mean_fwd = (1.0 - self.ar_rho) * self.center + self.ar_rho * theta
        prop = mean_fwd + self._root @ self._t_draw(rng)
        if self.ar_rho == 0.0:
            # independence draw around the center: ratio still matters
            return prop, self._t_logpdf(theta - self.center) - self._t_logpdf(prop - self.center)
        mean_bwd = (1.0 - self.ar_rho) * self.center + self.ar_rho * prop
        return prop, self._t_logpdf(theta - mean_bwd) - self._t_logpdf(prop - mean_fwd)


@dataclass
class Trace:
    """Sample path of a Metropolis-type chain over (theta, z)."""

    thetas: np.ndarray  # (n, d)
    zs: np.ndarray  # (n,)
    accepted: np.ndarray  # (n,) bool; first entry True
    kernel_id: str
    seed: object
    n_minus_inf_rejects: int = 0
    burn_in_dropped: int = 0

    def __post_init__(self):
        if not (len(self.thetas) == len(self.zs) == len(self.accepted)):
            raise ValueError("trace arrays must have matching lengths")
        if len(self.accepted) and not self.accepted[0]:
            raise ValueError("first trace entry must be marked accepted")

    @property
    def n(self) -> int:
        return len(self.zs)

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted[1:].mean()) if self.n > 1 else 1.0

    def to_csv(self, path):
        d = self.thetas.shape[1]
        header = "iter,accepted," + "z," + ",".join(f"theta_{j + 1}" for j in range(d))
        cols = np.column_stack(
            [np.arange(self.n), self.accepted.astype(int), self.zs, self.thetas]
        )
        np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.17g")


@dataclass
class JumpTrace:
    """Distinct accepted states with their sojourn times."""

    jump_thetas: np.ndarray
    jump_zs: np.ndarray
    sojourns: np.ndarray  # positive ints summing to the parent length

    def reconstruct(self):
        """Rebuild the flat (thetas, zs) path; exact round trip."""
        reps = self.sojourns
        return np.repeat(self.jump_thetas, reps, axis=0), np.repeat(self.jump_zs, reps)


def _run_mh(target, proposal, sigma, rule, n, seed, theta0, burn_in, kernel_id):
    rng = np.random.default_rng(seed)
    theta = np.atleast_1d(np.asarray(theta0, dtype=float))
    lp = target.log_density(theta)
    if not math.isfinite(lp):
        raise ValueError(f"log target density is {lp} at the initial point {theta}")
    n_burn = int(round(burn_in * n))
    total = n + n_burn
    thetas = np.empty((n, target.dim))
    zs = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    z = 0.0
    noise_loc = -sigma * sigma / 2.0
    for t in range(total):
        prop, log_qratio = proposal.propose(theta, rng)
        w = rng.normal(noise_loc, sigma) if sigma > 0.0 else 0.0
        lp_prop = target.log_density(prop)
        log_r_ex = lp_prop - lp + log_qratio
        if rule == "pm":
            accept = math.log(rng.random()) < (w - z) + log_r_ex
        else:  # bounding chain: product of the two acceptance probabilities
            accept = math.log(rng.random()) < min(0.0, w - z) + min(0.0, log_r_ex)
        if accept:
            theta, lp, z = prop, lp_prop, w
        if t >= n_burn:
            i = t - n_burn
            thetas[i] = theta
            zs[i] = z
            accepted[i] = accept
    accepted[0] = True
    return Trace(
        thetas=thetas,
        zs=zs,
        accepted=accepted,
        kernel_id=kernel_id,
        seed=seed,
        burn_in_dropped=n_burn,
    )


def run_exact_chain(target, proposal, n, seed, theta0=None, burn_in=0.1):
    """Exact-likelihood Metropolis-Hastings trace (noise coordinate fixed at 0)."""
    if theta0 is None:
        theta0 = np.zeros(target.dim)
    return _run_mh(target, proposal, 0.0, "pm", n, seed, theta0, burn_in, "exact")


def run_pm_chain_gaussian(target, proposal, sigma, n, seed, theta0=None, burn_in=0.1):
    """Pseudo-marginal trace with synthetic Gaussian noise of scale sigma.

    Each proposal draws a fresh noise value ``w ~ N(-sigma^2/2, sigma^2)``
    and accepts with probability ``min(1, exp(w - z) r)``.  At sigma = 0 the
    trace coincides path-by-path with :func:`run_exact_chain` under the same
    seed.  The stationary law of z is the tilted noise density (mean
    ``+sigma^2/2``).
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if theta0 is None:
        theta0 = np.zeros(target.dim)
    return _run_mh(target, proposal, sigma, "pm", n, seed, theta0, burn_in, "pseudo_marginal")


def run_qstar_chain(target, proposal, sigma, n, seed, theta0=None, burn_in=0.1):
    """Bounding-chain trace: parameter and noise moves accepted independently."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if theta0 is None:
        theta0 = np.zeros(target.dim)
    return _run_mh(target, proposal, sigma, "qstar", n, seed, theta0, burn_in, "bounding")


def run_pm_chain_estimator(
    log_prior,
    loglik_estimator,
    proposal,
    n,
    seed,
    theta0,
    burn_in=0.1,
):
    """Pseudo-marginal trace driven by a real log-likelihood estimator.

    ``loglik_estimator(theta, rng) -> float`` returns one unbiased-estimator
    evaluation (``-inf`` allowed for degenerate runs, which are rejected and
    counted).  The trace stores the current log-likelihood estimate in place
    of a noise value; only that scalar is carried between iterations.
    """
    rng = np.random.default_rng(seed)
    theta = np.atleast_1d(np.asarray(theta0, dtype=float))
    lp = log_prior(theta)
    llhat = loglik_estimator(theta, rng)
    if not (math.isfinite(lp) and math.isfinite(llhat)):
        raise ValueError("initial point has non-finite prior or likelihood estimate")
    n_burn = int(round(burn_in * n))
    total = n + n_burn
    d = theta.size
    thetas = np.empty((n, d))
    zs = np.empty(n)
    accepted = np.zeros(n, dtype=bool)
    n_minus_inf = 0
    for t in range(total):
        prop, log_qratio = proposal.propose(theta, rng)
        lp_prop = log_prior(prop)
        if math.isfinite(lp_prop):
            ll_prop = loglik_estimator(prop, rng)
        else:
            ll_prop = -math.inf
        if not math.isfinite(ll_prop):
            n_minus_inf += 1
            accept = False
        else:
            accept = math.log(rng.random()) < (ll_prop + lp_prop) - (llhat + lp) + log_qratio
        if accept:
            theta, lp, llhat = prop, lp_prop, ll_prop
        if t >= n_burn:
            i = t - n_burn
            thetas[i] = theta
            zs[i] = llhat
            accepted[i] = accept
    accepted[0] = True
    return Trace(
        thetas=thetas,
        zs=zs,
        accepted=accepted,
        kernel_id="pseudo_marginal_estimator",
        seed=seed,
        n_minus_inf_rejects=n_minus_inf,
        burn_in_dropped=n_burn,
    )


def to_jump_chain(trace: Trace) -> JumpTrace:
    """Collapse a trace to its accepted states and sojourn times.

    Jumps are detected from the recorded accept flags, never from state
    equality, so ties in floating point cannot merge distinct jumps.
    """
    idx = np.flatnonzero(trace.accepted)
    boundaries = np.append(idx, trace.n)
    sojourns = np.diff(boundaries)
    return JumpTrace(
        jump_thetas=trace.thetas[idx],
        jump_zs=trace.zs[idx],
        sojourns=sojourns,
    )


@dataclass(frozen=True)
class IfEstimate:
    """Inefficiency (integrated autocorrelation time) estimate for one series."""

    value: float
    standard_error: float
    method: str
    lags_used: int


def _autocovariances(x):
    n = x.size
    xc = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real / n
    return acov


def estimate_if(series, method="initial_sequence"):
    """Inefficiency of a scalar chain functional, ``1 + 2 sum_n phi_n``.

    ``initial_sequence`` (default) sums autocorrelations through the
    monotonized initial positive sequence of lag-pair sums, a consistent,
    conservative choice for reversible chains.  ``batch_means`` compares the
    variance of means over blocks of length ``n**(1/3)`` to the marginal
    variance.  The reported standard error is the usual first-order
    approximation for each method.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    n = x.size
    if n < 100:
        raise ValueError(f"need at least 100 points to estimate an inefficiency, got {n}")
    if np.ptp(x) == 0.0:
        raise ValueError("series is constant; inefficiency is undefined")
    if method == "initial_sequence":
        acov = _autocovariances(x)
        phi = acov / acov[0]
        n_pairs = (phi.size - 1) // 2
        pair = phi[2 : 2 * n_pairs : 2] + phi[3 : 2 * n_pairs + 1 : 2]
        gamma0 = phi[0] + phi[1]
        total = gamma0
        prev = gamma0
        k = 0
        for value in pair:
            if value <= 0.0:
                break
            value = min(value, prev)  # enforce monotone non-increasing
            total += value
            prev = value
            k += 1
        if_value = max(2.0 * total - 1.0, 0.0)
        lags = 2 * k + 1
        se = if_value * math.sqrt(2.0 * (2.0 * lags + 1.0) / n)
        return IfEstimate(value=if_value, standard_error=se, method=method, lags_used=lags)
    if method == "batch_means":
        b = max(2, int(round(n ** (1.0 / 3.0))))
        n_batches = n // b
        trimmed = x[: n_batches * b].reshape(n_batches, b)
        means = trimmed.mean(axis=1)
        var_batch = means.var(ddof=1)
        var_marg = x.var(ddof=1)
        if_value = b * var_batch / var_marg
        se = if_value * math.sqrt(2.0 / (n_batches - 1))
        return IfEstimate(value=if_value, standard_error=se, method=method, lags_used=b)
    raise ValueError(f"unknown method {method!r}")


def if_report_json(estimates):
    """Inefficiency estimates as JSON records ``{h, method, value, se, lags}``.

    ``estimates`` maps a functional name to an :class:`IfEstimate`.
    """
    import json

    records = [
        {"h": name, "method": est.method, "value": est.value,
         "se": est.standard_error, "lags": est.lags_used}
        for name, est in estimates.items()
    ]
    return json.dumps(records, indent=1)


@dataclass(frozen=True)
class JumpIdentityReport:
    """Empirical check of the jump-chain variance identity on one trace."""

    lhs: float
    rhs: float
    relative_residual: float
    if_chain: IfEstimate
    if_jump: IfEstimate


def verify_jump_identity_empirical(states, accepted, h_values, rho_values, stationary):
    """Estimate both sides of the jump-chain variance identity from one path.

    Applies to finite-state traces where the per-state acceptance rate is
    computable: ``mu(hbar^2)(1 + IF(h, P))`` against ``mu(rho) *
    mu~(hbar^2/rho^2) (1 + IF(hbar/rho, P~))``, all quantities replaced by
    their empirical counterparts except the exact centring mean.
    """
    states = np.asarray(states)
    accepted = np.asarray(accepted, dtype=bool)
    h_values = np.asarray(h_values, dtype=float)
    rho_values = np.asarray(rho_values, dtype=float)
    mu = np.asarray(stationary, dtype=float)
    hbar = h_values - float(mu @ h_values)
    series = hbar[states]
    if_chain = estimate_if(series)
    lhs = float((series**2).mean()) * (1.0 + if_chain.value)

    jump_states = states[accepted]
    jump_series = hbar[jump_states] / rho_values[jump_states]
    if_jump = estimate_if(jump_series)
    mu_rho_hat = float(rho_values[states].mean())
    rhs = mu_rho_hat * float((jump_series**2).mean()) * (1.0 + if_jump.value)
    residual = abs(lhs - rhs) / max(abs(lhs), 1e-300)
    return JumpIdentityReport(
        lhs=lhs, rhs=rhs, relative_residual=residual, if_chain=if_chain, if_jump=if_jump
    )
