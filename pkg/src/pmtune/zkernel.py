"""Finite discretizations of the noise coordinate and their exact functionals.

A :class:`ZGrid` carries support points ``z`` and proposal weights ``g``
normalized so that both ``sum(g) == 1`` and ``sum(g * exp(z)) == 1``; the
second constraint is the discrete unbiasedness identity and is enforced by a
constant shift of the grid, which keeps every downstream chain identity exact
in floating point rather than approximate.

Two grid builders are provided: Gauss-Hermite nodes (small m, used by the
finite-chain verification battery) and a wide uniform grid (large m, used to
evaluate continuous-law functionals such as ``IF(1/rho_z, Qz)`` to high
accuracy without Monte Carlo error).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "ZGrid",
    "ZFunctionals",
    "gauss_hermite_zgrid",
    "uniform_zgrid",
    "degenerate_zgrid",
    "jump_kernel_z",
    "zgrid_functionals",
    "phi_sequence_z",
    "gaussian_z_functionals",
]


@dataclass(frozen=True)
class ZGrid:
    """Discrete noise law: nodes ``z`` with proposal weights ``g``."""

    sigma: float
    z: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if z.shape != g.shape or z.ndim != 1 or z.size == 0:
            raise ValueError("z and g must be matching non-empty 1-d arrays")
        if np.any(g <= 0.0):
            raise ValueError("grid weights must be positive")
        if abs(g.sum() - 1.0) > 1e-12:
            raise ValueError("grid weights must sum to 1")
        if abs(float(g @ np.exp(z)) - 1.0) > 1e-10:
            raise ValueError("grid must satisfy sum(g * exp(z)) == 1")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "g", g)

    @property
    def m(self) -> int:
        return self.z.size

    @property
    def pi_z(self) -> np.ndarray:
        """Tilted (accepted-state) weights ``exp(z) * g``; sums to 1 by construction."""
        w = self.g * np.exp(self.z)
        return w / w.sum()

    @property
    def accept_matrix(self) -> np.ndarray:
        """``min(1, exp(z_j - z_i))`` for a move from node i to node j."""
        return np.exp(np.minimum(0.0, self.z[None, :] - self.z[:, None]))

    @property
    def rho(self) -> np.ndarray:
        """Discrete acceptance rate ``rho_z(z_i) = sum_j g_j min(1, exp(z_j - z_i))``."""
        return self.accept_matrix @ self.g


def _normalize(z, g):
    g = g / g.sum()
    zmax = z.max()
    # shift so sum g * exp(z) == 1 exactly (up to one rounding); rescale g last
    z = z - (math.log(float(g @ np.exp(z - zmax))) + zmax)
    return z, g


def gauss_hermite_zgrid(sigma, m=64):
    """Gauss-Hermite nodes/weights under the noise density, renormalized."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0.0:
        return degenerate_zgrid()
    x, w = np.polynomial.hermite_e.hermegauss(m)
    z = -sigma * sigma / 2.0 + sigma * x
    z, g = _normalize(z, w)
    return ZGrid(sigma=float(sigma), z=z, g=g)


def uniform_zgrid(sigma, m=1001, span=8.0):
    """Uniform grid over ``mean +- span*sigma`` (right-extended for tilted mass)."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    mean = -sigma * sigma / 2.0
    z = np.linspace(mean - span * sigma, mean + (span + 2.0) * sigma, m)
    g = np.exp(-((z - mean) ** 2) / (2.0 * sigma * sigma))
    z, g = _normalize(z, g)
    return ZGrid(sigma=float(sigma), z=z, g=g)


def degenerate_zgrid():
    """Single-point grid representing the zero-noise limit."""
    return ZGrid(sigma=0.0, z=np.zeros(1), g=np.ones(1))


def jump_kernel_z(grid: ZGrid):
    """Jump (accepted-move) kernel of the noise coordinate and its stationary law.

    ``Qz[i, j] = g_j min(1, exp(z_j - z_i)) / rho_i`` with stationary weights
    proportional to ``pi_z * rho``.  The kernel may keep the coordinate in
    place (i == j): a jump of the full chain refreshes the error coordinate
    with a fresh proposal, which can land on the same node.
    """
    accept = grid.accept_matrix
    rho = accept @ grid.g
    kernel = (grid.g[None, :] * accept) / rho[:, None]
    stationary = grid.pi_z * rho
    stationary = stationary / stationary.sum()
    return kernel, stationary, rho


@dataclass(frozen=True)
class ZFunctionals:
    """Noise-law functionals evaluated exactly on a grid."""

    sigma: float
    mean_accept: float
    inv_accept: float
    phi1: float
    if_z: float
    lags_used: int
    phi: np.ndarray = field(repr=False)


def zgrid_functionals(grid: ZGrid, max_lags=2000, tail_tol=1e-12):
    """Mean (inverse) acceptance, lag-1 autocorrelation and inefficiency of 1/rho.

    The autocorrelation sequence is accumulated by repeated application of
    the jump kernel to the centred function; summation stops once terms fall
    below ``tail_tol`` relative to the running sum and the remainder is
    added by geometric extrapolation.
    """
    kernel, stationary, rho = jump_kernel_z(grid)
    pi_z = grid.pi_z
    mean_accept = float(pi_z @ rho)
    inv_accept = float(pi_z @ (1.0 / rho))
    f = 1.0 / rho
    fbar = f - float(stationary @ f)
    var = float(stationary @ (fbar * fbar))
    if var <= 0.0:  # degenerate (single-node) grid
        return ZFunctionals(
            sigma=grid.sigma,
            mean_accept=mean_accept,
            inv_accept=inv_accept,
            phi1=0.0,
            if_z=1.0,
            lags_used=0,
            phi=np.zeros(0),
        )
    v = fbar.copy()
    phis = []
    total = 0.0
    prev = None
    for _ in range(max_lags):
        v = kernel @ v
        ph = float(stationary @ (fbar * v)) / var
        phis.append(ph)
        total += ph
        if prev is not None and 0.0 < ph < tail_tol * max(1.0, total):
            ratio = ph / prev
            if 0.0 < ratio < 1.0:
                total += ph * ratio / (1.0 - ratio)
            break
        if ph <= 0.0:
            break
        prev = ph
    phi = np.asarray(phis)
    return ZFunctionals(
        sigma=grid.sigma,
        mean_accept=mean_accept,
        inv_accept=inv_accept,
        phi1=float(phi[0]) if phi.size else 0.0,
        if_z=1.0 + 2.0 * total,
        lags_used=phi.size,
        phi=phi,
    )


def phi_sequence_z(grid: ZGrid, n_lags):
    """First ``n_lags`` autocorrelations of 1/rho under the jump kernel."""
    kernel, stationary, rho = jump_kernel_z(grid)
    f = 1.0 / rho
    fbar = f - float(stationary @ f)
    var = float(stationary @ (fbar * fbar))
    out = np.empty(n_lags)
    v = fbar.copy()
    for n in range(n_lags):
        v = kernel @ v
        out[n] = float(stationary @ (fbar * v)) / var
    return out


@lru_cache(maxsize=4096)
def _cached_functionals(sigma_key: float, m: int, span: float) -> ZFunctionals:
    return zgrid_functionals(uniform_zgrid(sigma_key, m=m, span=span))


def gaussian_z_functionals(sigma, m=1001, span=8.0) -> ZFunctionals:
    """Cached grid evaluation of the Gaussian noise-law functionals at sigma."""
    return _cached_functionals(round(float(sigma), 12), m, span)
