"""Tuning the number of Monte Carlo samples in pseudo-marginal Metropolis-Hastings.

When a Metropolis-Hastings chain runs on an unbiased likelihood estimator
instead of the exact likelihood, the estimator's sample count N trades off
per-iteration cost against chain inefficiency.  This package evaluates the
inefficiency and computing-time bounds that govern that trade-off under a
Gaussian model for the log-likelihood error, simulates the exact,
pseudo-marginal and bounding chains, verifies the underlying identities to
machine precision on finite state spaces, and calibrates N for particle
filter likelihood estimators on state-space models.
"""

__version__ = "0.1.0"

__all__ = [
    "bounds",
    "calibrate",
    "chains",
    "gaussnoise",
    "oracle",
    "ssm",
    "zkernel",
]
