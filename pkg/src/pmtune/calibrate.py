"""Noise calibration: estimate the log-likelihood error scale, choose the
sample count for a target scale, and test the Gaussian error model.

``estimate_sigma`` replicates a likelihood estimator at a reference
parameter and summarizes the log-scale error Z; ``choose_n`` fits the
``variance = c / N`` law on a pilot grid and inverts it; ``z_diagnostics``
compares the moments of observed Z draws with the ones the Gaussian model
implies (mean ``-sigma^2/2``, variance ``sigma^2``, zero third moment,
``3 sigma^4`` fourth moment); ``tilted_sample`` turns draws from the error
law into draws from its exponentially tilted (accepted-state) counterpart.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .rngutil import derive_rng

__all__ = [
    "CalibrationPoint",
    "NoiseCalibration",
    "ChooseNResult",
    "ZDiagnostics",
    "estimate_sigma",
    "calibration_table",
    "choose_n",
    "z_diagnostics",
    "tilted_sample",
]


@dataclass(frozen=True)
class CalibrationPoint:
    """Summary of replicated log-likelihood estimates at one sample count."""

    n_particles: int
    sigma_hat: float
    se: float
    mean_z: float
    var_z: float
    m3: float
    m4: float
    n_reps: int
    n_degenerate: int


def estimate_sigma(
    loglik_runner: Callable[[int, np.random.Generator], float],
    n_particles: int,
    n_reps: int,
    seed,
    exact_loglik: float | None = None,
):
    """Standard deviation of the log-likelihood estimator at a reference point.

    ``loglik_runner(n_particles, rng)`` returns one estimate (``-inf`` for a
    degenerate run; those are excluded and counted).  When ``exact_loglik``
    is supplied, Z is the error against it; otherwise Z is centred on the
    log of the average estimate on the natural scale, which converges to the
    exact value by unbiasedness.
    """
    if n_reps < 30:
        raise ValueError(f"need at least 30 replications, got {n_reps}")
    values = np.empty(n_reps)
    for r in range(n_reps):
        values[r] = loglik_runner(n_particles, derive_rng(seed, n_particles, r))
    finite = np.isfinite(values)
    n_degenerate = int((~finite).sum())
    values = values[finite]
    if values.size < 30:
        raise RuntimeError(f"only {values.size} non-degenerate runs out of {n_reps}")
    reference = exact_loglik
    if reference is None:
        reference = float(logsumexp(values) - math.log(values.size))
    z = values - reference
    sigma_hat = float(z.std(ddof=1))
    zc = z - z.mean()
    return CalibrationPoint(
        n_particles=n_particles,
        sigma_hat=sigma_hat,
        se=sigma_hat / math.sqrt(2.0 * (values.size - 1)),
        mean_z=float(z.mean()),
        var_z=float(z.var(ddof=1)),
        m3=float((zc**3).mean()),
        m4=float((zc**4).mean()),
        n_reps=int(values.size),
        n_degenerate=n_degenerate,
    )


@dataclass(frozen=True)
class NoiseCalibration:
    """Calibration table across sample counts at one reference parameter."""

    theta_ref: np.ndarray
    points: tuple[CalibrationPoint, ...]

    def __post_init__(self):
        counts = [p.n_particles for p in self.points]
        if counts != sorted(counts):
            raise ValueError("calibration rows must be ascending in the sample count")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["N", "sigma_hat", "se", "mean_z", "var_z", "m3", "m4", "S"])
            for p in self.points:
                writer.writerow(
                    [p.n_particles]
                    + [
                        format(v, ".17g")
                        for v in (p.sigma_hat, p.se, p.mean_z, p.var_z, p.m3, p.m4)
                    ]
                    + [p.n_reps]
                )


def calibration_table(loglik_runner, n_grid: Sequence[int], n_reps, seed, theta_ref,
                      exact_loglik=None):
    points = tuple(
        estimate_sigma(loglik_runner, int(n), n_reps, seed, exact_loglik=exact_loglik)
        for n in sorted(int(n) for n in n_grid)
    )
    return NoiseCalibration(theta_ref=np.asarray(theta_ref, dtype=float), points=points)


@dataclass(frozen=True)
class ChooseNResult:
    """Inversion of the ``variance = c/N`` law for a target noise scale."""

    n_star: int
    c_fit: float
    r_squared: float
    pilot: NoiseCalibration
    confirmation: CalibrationPoint
    fit_ok: bool


def choose_n(
    loglik_runner,
    sigma_target: float,
    seed,
    theta_ref,
    pilot_grid: Sequence[int] | None = None,
    n_reps: int = 100,
    exact_loglik=None,
    r2_threshold: float = 0.9,
):
    """Recommend a sample count for a target log-likelihood noise scale.

    Fits ``log(var) = log(c) - log(N)`` (slope fixed at -1) over a pilot
    grid, returns ``N* = ceil(c / sigma_target^2)`` and a confirmation run
    at ``N*``.  A poor fit (R^2 below the threshold) sets ``fit_ok=False``
    rather than failing, since the decision may still be usable.
    """
    if sigma_target <= 0.0:
        raise ValueError(f"sigma_target must be positive, got {sigma_target}")
    if pilot_grid is None:
        pilot_grid = np.unique(
            np.round(np.logspace(math.log10(10), math.log10(300), 5)).astype(int)
        )
    pilot = calibration_table(
        loglik_runner, pilot_grid, n_reps, seed, theta_ref, exact_loglik=exact_loglik
    )
    log_n = np.array([math.log(p.n_particles) for p in pilot.points])
    log_var = np.array([math.log(p.var_z) for p in pilot.points])
    log_c = float((log_var + log_n).mean())
    fitted = log_c - log_n
    ss_res = float(((log_var - fitted) ** 2).sum())
    ss_tot = float(((log_var - log_var.mean()) ** 2).sum())
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 0.0
    c = math.exp(log_c)
    n_star = max(2, math.ceil(c / (sigma_target * sigma_target)))
    confirmation = estimate_sigma(
        loglik_runner, n_star, n_reps, seed, exact_loglik=exact_loglik
    )
    return ChooseNResult(
        n_star=n_star,
        c_fit=c,
        r_squared=r_squared,
        pilot=pilot,
        confirmation=confirmation,
        fit_ok=r_squared >= r2_threshold,
    )


@dataclass(frozen=True)
class ZDiagnostics:
    """Moments of observed Z draws against the Gaussian error model.

    Standardized discrepancies divide (observed - implied) by the moment's
    own sampling standard error; under the model they are approximately
    standard normal.
    """

    n: int
    sigma: float
    mean: float
    variance: float
    m3: float
    m4: float
    d_mean: float
    d_var: float
    d_m3: float
    d_m4: float


def z_diagnostics(z_samples, sigma=None):
    """Moment report for Z draws, standardized against the Gaussian model.

    With ``sigma`` given, all four moments are tested against that external
    scale; otherwise the sample variance plays the role of ``sigma^2`` and
    the variance row is trivially zero (the mean row then tests the
    mean/variance coupling ``E[Z] = -var(Z)/2``).
    """
    z = np.asarray(z_samples, dtype=float)
    n = z.size
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    mean = float(z.mean())
    zc = z - mean
    m2 = float((zc**2).mean())
    m3 = float((zc**3).mean())
    m4 = float((zc**4).mean())
    m6 = float((zc**6).mean())
    m8 = float((zc**8).mean())
    m5 = float((zc**5).mean())
    sig2 = sigma * sigma if sigma is not None else m2
    se_mean = math.sqrt(m2 / n)
    se_var = math.sqrt(max(m4 - m2 * m2, 0.0) / n)
    se_m3 = math.sqrt(max(m6 - m3 * m3 - 6.0 * m4 * m2 + 9.0 * m2**3, 0.0) / n)
    se_m4 = math.sqrt(max(m8 - m4 * m4 - 8.0 * m3 * m5 + 16.0 * m3 * m3 * m2, 0.0) / n)
    return ZDiagnostics(
        n=n,
        sigma=math.sqrt(sig2),
        mean=mean,
        variance=m2,
        m3=m3,
        m4=m4,
        d_mean=(mean + sig2 / 2.0) / se_mean,
        d_var=(m2 - sig2) / se_var,
        d_m3=m3 / se_m3,
        d_m4=(m4 - 3.0 * sig2 * sig2) / se_m4,
    )


def tilted_sample(z_samples, n, seed):
    """Draws from the exponentially tilted law of an empirical Z sample.

    Runs a Metropolis chain on the empirical support with independence
    proposals from the sample and acceptance ``min(1, exp(z' - z))``; the
    output's mean exceeds the input's by about the sample variance when the
    error law is Gaussian.
    """
    z = np.asarray(z_samples, dtype=float)
    if z.size == 0:
        raise ValueError("no input samples")
    rng = np.random.default_rng(seed)
    idx = rng.integers(z.size, size=n)
    proposals = z[idx]
    out = np.empty(n)
    current = z[rng.integers(z.size)]
    log_u = np.log(rng.random(n))
    for t in range(n):
        if log_u[t] < proposals[t] - current:
            current = proposals[t]
        out[t] = current
    return out
