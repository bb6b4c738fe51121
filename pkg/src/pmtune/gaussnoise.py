"""Gaussian law of the log-likelihood estimation error and its jump-chain functionals.

The additive error Z of an unbiased log-likelihood estimator is modelled as
Gaussian with mean ``-sigma**2/2`` and variance ``sigma**2``, so that
``E[exp(Z)] = 1``.  Exponential tilting of that density gives the law of the
error at accepted states, ``pi_z(z) = exp(z) g(z)``, which is Gaussian with
mean ``+sigma**2/2`` and the same variance.

For a Metropolis move on the error coordinate alone (propose ``w ~ g``,
accept with probability ``min(1, exp(w - z))``) this module provides:

* the pointwise acceptance rate ``rho_z(z)`` in closed form,
* the mean acceptance ``pi_z(rho_z) = 2*Phi(-sigma/sqrt(2))`` (closed form)
  and the mean inverse acceptance ``pi_z(1/rho_z)`` (adaptive quadrature),
* Monte Carlo estimators for the lag-n autocorrelation ``phi_n`` and the
  inefficiency ``IF(1/rho_z, Qz)`` of ``1/rho_z`` under the jump kernel
  ``Qz(z, dw) = g(w) min(1, exp(w - z)) dw / rho_z(z)``,
* a reproducible tabulation of these functionals over a sigma grid.

All Monte Carlo routines are bitwise deterministic given a seed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate
from scipy.special import log_ndtr, ndtr

__all__ = [
    "NoiseLawTable",
    "PhiEstimate",
    "IfZEstimate",
    "QuadratureError",
    "RejectionCapError",
    "noise_density",
    "tilted_density",
    "accept_rate_z",
    "mean_accept_z",
    "inv_accept_integral",
    "sample_jump_z",
    "sample_tilted_stationary",
    "estimate_phi_n",
    "estimate_if_z",
    "build_table",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class RejectionCapError(RuntimeError):
    """A rejection sampler exceeded its retry cap."""


def _check_sigma(sigma, allow_zero=False):
    sigma = float(sigma)
    if not math.isfinite(sigma):
        raise ValueError(f"sigma must be finite, got {sigma}")
    if sigma < 0.0 or (sigma == 0.0 and not allow_zero):
        raise ValueError(f"sigma must be positive, got {sigma}")
    return sigma


def noise_density(sigma, z):
    """Density ``g(z)`` of the log-likelihood error: normal(-sigma^2/2, sigma^2).

    Satisfies ``integral exp(z) g(z) dz = 1`` (unbiasedness on the
    likelihood scale).
    """
    sigma = _check_sigma(sigma)
    z = np.asarray(z, dtype=float)
    u = (z + sigma * sigma / 2.0) / sigma
    out = np.exp(-0.5 * u * u) / (sigma * _SQRT2PI)
    return out if out.ndim else float(out)


def tilted_density(sigma, z):
    """Density ``pi_z(z) = exp(z) g(z)``: normal(+sigma^2/2, sigma^2)."""
    sigma = _check_sigma(sigma)
    z = np.asarray(z, dtype=float)
    u = (z - sigma * sigma / 2.0) / sigma
    out = np.exp(-0.5 * u * u) / (sigma * _SQRT2PI)
    return out if out.ndim else float(out)


def accept_rate_z(sigma, z):
    """Acceptance rate ``rho_z(z)`` of the error-coordinate Metropolis move.

    Closed form ``1 - Phi(z/sigma + sigma/2) + exp(-z) Phi(z/sigma - sigma/2)``,
    evaluated in log space so the ``exp(-z)`` factor cannot overflow for
    z far below zero.  Non-increasing in z, with values in (0, 1].
    """
    sigma = _check_sigma(sigma)
    z = np.asarray(z, dtype=float)
    val = ndtr(-(z / sigma + sigma / 2.0)) + np.exp(-z + log_ndtr(z / sigma - sigma / 2.0))
    out = np.minimum(val, 1.0)
    return out if out.ndim else float(out)


def mean_accept_z(sigma):
    """Mean acceptance ``pi_z(rho_z) = 2*Phi(-sigma/sqrt(2))``; equals 1 at sigma=0."""
    sigma = _check_sigma(sigma, allow_zero=True)
    return float(2.0 * ndtr(-sigma / _SQRT2))


def inv_accept_integral(sigma, rel_tol=1e-10):
    """Mean inverse acceptance ``pi_z(1/rho_z)`` by adaptive quadrature.

    Substituting ``z = sigma*w + sigma^2/2`` (so w is standard normal under
    the tilted law) gives the integrand ``phi(w; 0, 1) / rho_z(sigma*w +
    sigma^2/2)`` with ``rho_z`` expressed as ``1 - Phi(w + sigma) +
    exp(-w*sigma - sigma^2/2) Phi(w)``.  The window [-10, 10] suffices for
    sigma <= 3 (the tail is dominated by ``exp(sigma^2) * phi(w - sigma)``);
    it is widened automatically for larger sigma.

    Returns a value >= 1; approaches 1 as sigma -> 0.
    """
    sigma = _check_sigma(sigma, allow_zero=True)
    if sigma == 0.0:
        return 1.0

    def integrand(w):
        rho = ndtr(-(w + sigma)) + math.exp(-w * sigma - sigma * sigma / 2.0 + log_ndtr(w))
        return math.exp(-0.5 * w * w) / _SQRT2PI / rho

    half_width = 10.0 + 2.0 * max(0.0, sigma - 3.0)
    value, abserr = integrate.quad(
        integrand, -half_width, half_width, epsabs=0.0, epsrel=rel_tol, limit=200
    )
    if not math.isfinite(value) or abserr > 1e-6 * max(1.0, abs(value)):
        raise QuadratureError(
            f"pi_z(1/rho_z) quadrature did not converge at sigma={sigma}: "
            f"value={value}, abserr={abserr}, window=+-{half_width}"
        )
    return value


def sample_jump_z(sigma, z, rng, max_tries=1_000_000):
    """One draw from the jump kernel ``Qz(z, .)`` by rejection.

    Proposes ``w ~ g`` repeatedly and accepts with probability
    ``min(1, exp(w - z))``; the first accepted w is returned.  The expected
    number of proposals is ``1/rho_z(z)``, so the cap only triggers for
    pathologically large z.
    """
    sigma = _check_sigma(sigma)
    z = float(z)
    loc = -sigma * sigma / 2.0
    for _ in range(max_tries):
        w = rng.normal(loc, sigma)
        if w >= z or math.log(rng.random()) < w - z:
            return w
    raise RejectionCapError(
        f"jump kernel rejection sampler exceeded {max_tries} tries at "
        f"sigma={sigma}, z={z} (acceptance rate {accept_rate_z(sigma, z):.3e})"
    )


def sample_tilted_stationary(sigma, size, rng):
    """Draws from the jump chain's stationary law ``pi_z(z) rho_z(z) / pi_z(rho_z)``.

    Rejection from the tilted density with acceptance probability
    ``rho_z(z) <= 1``; the overall acceptance rate is ``pi_z(rho_z)``.
    """
    sigma = _check_sigma(sigma)
    out = np.empty(size)
    pending = np.arange(size)
    loc = sigma * sigma / 2.0
    while pending.size:
        z = rng.normal(loc, sigma, pending.size)
        keep = np.log(rng.random(pending.size)) < np.log(accept_rate_z(sigma, z))
        out[pending[keep]] = z[keep]
        pending = pending[~keep]
    return out


def _jump_step_vec(sigma, z, rng):
    """Advance every entry of z one step through the jump kernel (vectorized)."""
    out = np.empty_like(z)
    pending = np.arange(z.size)
    loc = -sigma * sigma / 2.0
    while pending.size:
        w = rng.normal(loc, sigma, pending.size)
        keep = np.log(rng.random(pending.size)) < np.minimum(0.0, w - z[pending])
        out[pending[keep]] = w[keep]
        pending = pending[~keep]
    return out


@dataclass(frozen=True)
class PhiEstimate:
    """Monte Carlo estimate of one jump-chain autocorrelation."""

    lag: int
    value: float
    se: float


@dataclass(frozen=True)
class IfZEstimate:
    """Monte Carlo estimate of ``IF(1/rho_z, Qz)`` with truncation bookkeeping."""

    value: float
    se: float
    lags_used: int
    truncated_at_cap: bool


def _phi_products(sigma, f0, f_n, mean_exact, var_hat, n_samples):
    """Autocorrelation estimate from start/lag-n inverse-acceptance products.

    The lag-n autocovariance of ``1/rho_z`` under the stationary jump chain
    is ``E[f(Z_0) f(Z_n)] - m^2`` with the mean ``m = 1/pi_z(rho_z)`` known
    exactly, which is what makes the lag-0 estimate equal 1 identically.
    """
    prod = f0 * f_n
    num = float(prod.mean()) - mean_exact * mean_exact
    se = float(prod.std(ddof=1)) / math.sqrt(n_samples) / var_hat
    return num / var_hat, se


def estimate_phi_n(sigma, n, n_samples, rng):
    """Estimate ``phi_n(1/rho_z, Qz)`` from n_samples independent jump paths.

    Starts each path at the jump chain's stationary law, propagates n steps,
    and averages ``(1/rho_z)(Z_0) * (1/rho_z)(Z_n)``, centring with the exact
    mean ``1/pi_z(rho_z)`` and normalizing by the empirical variance of
    ``1/rho_z`` at the start points.  Lag 0 therefore returns exactly 1.
    """
    sigma = _check_sigma(sigma)
    if n < 0:
        raise ValueError(f"lag must be non-negative, got {n}")
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    z0 = sample_tilted_stationary(sigma, n_samples, rng)
    f0 = 1.0 / accept_rate_z(sigma, z0)
    mean_exact = 1.0 / mean_accept_z(sigma)
    var_hat = float((f0 * f0).mean()) - mean_exact * mean_exact
    z = z0
    for _ in range(n):
        z = _jump_step_vec(sigma, z, rng)
    f_n = f0 if n == 0 else 1.0 / accept_rate_z(sigma, z)
    value, se = _phi_products(sigma, f0, f_n, mean_exact, var_hat, n_samples)
    return PhiEstimate(lag=n, value=value, se=se)


def estimate_if_z(sigma, n_samples, cutoff=200, rng=None, _collect=None):
    """Estimate ``IF(1/rho_z, Qz) = 1 + 2*sum_n phi_n`` by ensemble propagation.

    A single ensemble of stationary starts is advanced lag by lag; the sum is
    truncated at the first lag whose autocorrelation estimate falls below
    twice its own standard error, or at ``cutoff``.  The reported standard
    error aggregates the per-lag errors and ignores the truncation bias.
    """
    sigma = _check_sigma(sigma)
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    if rng is None:
        raise ValueError("an rng is required")
    z0 = sample_tilted_stationary(sigma, n_samples, rng)
    f0 = 1.0 / accept_rate_z(sigma, z0)
    mean_exact = 1.0 / mean_accept_z(sigma)
    var_hat = float((f0 * f0).mean()) - mean_exact * mean_exact
    z = z0
    total = 0.0
    var_sum = 0.0
    lags = 0
    capped = True
    for n in range(1, cutoff + 1):
        z = _jump_step_vec(sigma, z, rng)
        f_n = 1.0 / accept_rate_z(sigma, z)
        value, se = _phi_products(sigma, f0, f_n, mean_exact, var_hat, n_samples)
        if _collect is not None:
            _collect.append(PhiEstimate(lag=n, value=value, se=se))
        if value < 2.0 * se:
            lags = n - 1
            capped = False
            break
        total += value
        var_sum += se * se
        lags = n
    if_value = max(1.0, 1.0 + 2.0 * total)
    return IfZEstimate(
        value=if_value, se=2.0 * math.sqrt(var_sum), lags_used=lags, truncated_at_cap=capped
    )


@dataclass(frozen=True)
class NoiseLawTable:
    """Tabulated jump-chain functionals of the Gaussian noise law on a sigma grid.

    ``inv_accept`` holds ``pi_z(1/rho_z)`` (quadrature, deterministic),
    ``phi1`` and ``if_z`` hold the Monte Carlo lag-1 autocorrelation and
    inefficiency of ``1/rho_z`` under the jump kernel.
    """

    grid: np.ndarray
    inv_accept: np.ndarray
    phi1: np.ndarray
    if_z: np.ndarray
    n_samples: int
    cutoff: int
    seed: int

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.size and (np.any(np.diff(grid) <= 0.0) or grid[0] <= 0.0):
            raise ValueError("sigma grid must be positive and strictly ascending")
        if np.any(self.inv_accept < 1.0):
            raise ValueError("pi_z(1/rho_z) must be >= 1")
        if np.any(self.if_z < 1.0):
            raise ValueError("IF(1/rho_z, Qz) must be >= 1")
        if np.any((self.phi1 < 0.0) | (self.phi1 >= 1.0)):
            raise ValueError("phi_1 must lie in [0, 1)")

    _CSV_HEADER = ("sigma", "inv_accept", "phi1", "if_z", "mc_samples", "seed")

    def to_csv(self, path_or_buffer):
        """Write one row per grid point with 17-significant-digit floats."""
        close = False
        if isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__"):
            fh = open(path_or_buffer, "w", newline="")
            close = True
        else:
            fh = path_or_buffer
        try:
            writer = csv.writer(fh)
            writer.writerow(self._CSV_HEADER)
            for i, sigma in enumerate(self.grid):
                writer.writerow(
                    [
                        format(sigma, ".17g"),
                        format(self.inv_accept[i], ".17g"),
                        format(self.phi1[i], ".17g"),
                        format(self.if_z[i], ".17g"),
                        self.n_samples,
                        self.seed,
                    ]
                )
        finally:
            if close:
                fh.close()

    @classmethod
    def from_csv(cls, path_or_buffer, cutoff=200):
        if isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__"):
            with open(path_or_buffer, newline="") as fh:
                text = fh.read()
        else:
            text = path_or_buffer.read()
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != cls._CSV_HEADER:
            raise ValueError(f"unexpected table header: {rows[:1]}")
        body = rows[1:]
        grid = np.array([float(r[0]) for r in body])
        n_samples = int(body[0][4]) if body else 0
        seed = int(body[0][5]) if body else 0
        return cls(
            grid=grid,
            inv_accept=np.array([float(r[1]) for r in body]),
            phi1=np.array([float(r[2]) for r in body]),
            if_z=np.array([float(r[3]) for r in body]),
            n_samples=n_samples,
            cutoff=cutoff,
            seed=seed,
        )


def build_table(grid: Sequence[float], n_samples=1_000_000, cutoff=200, seed=0):
    """Build a :class:`NoiseLawTable` over an ascending sigma grid.

    Each grid point uses an independent generator derived from
    ``(seed, index)``, so the table is reproducible point by point and grid
    points may be evaluated in any order (or concurrently) without changing
    the result.
    """
    grid = np.asarray(list(grid), dtype=float)
    inv_accept = np.empty(grid.size)
    phi1 = np.empty(grid.size)
    if_z = np.empty(grid.size)
    for i, sigma in enumerate(grid):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        inv_accept[i] = inv_accept_integral(sigma)
        collected: list[PhiEstimate] = []
        est = estimate_if_z(sigma, n_samples, cutoff=cutoff, rng=rng, _collect=collected)
        phi1[i] = collected[0].value if collected else 0.0
        if_z[i] = est.value
    return NoiseLawTable(
        grid=grid,
        inv_accept=inv_accept,
        phi1=np.clip(phi1, 0.0, np.nextafter(1.0, 0.0)),
        if_z=if_z,
        n_samples=n_samples,
        cutoff=cutoff,
        seed=seed,
    )
