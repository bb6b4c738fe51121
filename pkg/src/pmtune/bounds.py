"""Relative inefficiency and relative computing time bounds, and their minimizers.

Write ``I = pi_z(1/rho_z)``, ``A = pi_z(rho_z)``, ``phi_z`` for the lag-1
autocorrelation and ``IF_z`` for the inefficiency of ``1/rho_z`` under the
noise jump kernel.  With ``if_ex`` the inefficiency of the exact chain and
``if_jump`` the inefficiency of its jump chain, the bounds on the relative
inefficiency RIF (pseudo-marginal over exact) implemented here are::

    urif1 = (1 + 1/if_ex) * [I + (1 - phi_zest) * (I - 1/A)] - 1/if_ex
    urif2 = (1 + 1/if_ex) * I - 1/if_ex
    urif3 = (1 + 1/if_jump) * [1/A + phi_z*(I - 1/A)]
            + 2*(I - 1/A)*(1 - phi_z)/if_jump - 1/if_jump
    urif4 = (1 + 1/if_jump)/(1 + if_jump) * (I - 1/A) * (1 + IF_z)
            + 1/A + (1/A - 1)/if_jump
    lrif1 = 1/A + 2/(1 + if_jump) * (I - 1/A)
    lrif2 = 1/A = 1 / (2*Phi(-sigma/sqrt(2)))

The relative computing time of any of these is the bound divided by
``sigma**2``, because the estimator's sample count scales like
``1/sigma**2`` and per-iteration cost is proportional to it.

Every bound takes the noise functionals by value through
:class:`NoiseFunctionals`, so laws other than the Gaussian one can be
plugged in provided they satisfy ``E[exp(Z)] = 1``; only the Gaussian law
ships with a built-in provider.  Infinite ``if_ex``/``if_jump`` are
supported directly (the formulas degrade gracefully through ``1/inf == 0``),
which avoids cancellation when evaluating the inefficient-proposal limit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

from .gaussnoise import inv_accept_integral, mean_accept_z
from .zkernel import gaussian_z_functionals

__all__ = [
    "NoiseFunctionals",
    "gaussian_functionals",
    "ExactChainProfile",
    "BoundSet",
    "SigmaOptResult",
    "SandwichRow",
    "urif1",
    "urif2",
    "urif3",
    "urif4",
    "lrif1",
    "lrif2",
    "rct",
    "rct_perfect",
    "bound_set",
    "rct_bound_value",
    "minimize_rct",
    "sandwich_interval",
    "arif",
    "arct",
    "psi",
    "write_curves_csv",
    "write_sandwich_csv",
]

_SQRT2 = math.sqrt(2.0)

RCT_BOUND_IDS = ("urct1", "urct2", "urct3", "urct4", "lrct1", "lrct2", "rct_perfect")


@dataclass(frozen=True)
class NoiseFunctionals:
    """Functionals of one noise law at a given scale, taken by value.

    ``inv_accept`` and ``mean_accept`` are the means of ``1/rho_z`` and
    ``rho_z`` under the tilted law; ``phi1`` and ``if_z`` describe
    ``1/rho_z`` under the jump kernel.
    """

    sigma: float
    inv_accept: float
    mean_accept: float
    phi1: float
    if_z: float

    def __post_init__(self):
        if not 0.0 < self.mean_accept <= 1.0:
            raise ValueError(f"mean acceptance must be in (0, 1], got {self.mean_accept}")
        # Jensen: pi_z(1/rho) >= 1/pi_z(rho) >= 1
        if self.inv_accept < 1.0 / self.mean_accept - 1e-9:
            raise ValueError(
                f"pi_z(1/rho_z)={self.inv_accept} below Jensen floor "
                f"1/pi_z(rho_z)={1.0 / self.mean_accept}"
            )
        if not 0.0 <= self.phi1 < 1.0:
            raise ValueError(f"phi_1 must be in [0, 1), got {self.phi1}")
        if self.if_z < 1.0 - 1e-12:
            raise ValueError(f"IF(1/rho_z) must be >= 1, got {self.if_z}")

    @classmethod
    def gaussian(cls, sigma, m=1001, span=8.0):
        """Gaussian-law functionals: quadrature for ``pi_z(1/rho_z)``, closed form
        for ``pi_z(rho_z)``, and a discretized jump kernel for ``phi1``/``if_z``."""
        sigma = float(sigma)
        if sigma == 0.0:
            return cls(sigma=0.0, inv_accept=1.0, mean_accept=1.0, phi1=0.0, if_z=1.0)
        zf = gaussian_z_functionals(sigma, m=m, span=span)
        return cls(
            sigma=sigma,
            inv_accept=inv_accept_integral(sigma),
            mean_accept=mean_accept_z(sigma),
            phi1=max(0.0, zf.phi1),
            if_z=max(1.0, zf.if_z),
        )

    @classmethod
    def from_table(cls, table, index):
        """Functionals from one row of a :class:`~pmtune.gaussnoise.NoiseLawTable`."""
        sigma = float(table.grid[index])
        return cls(
            sigma=sigma,
            inv_accept=float(table.inv_accept[index]),
            mean_accept=mean_accept_z(sigma),
            phi1=float(table.phi1[index]),
            if_z=float(table.if_z[index]),
        )


@lru_cache(maxsize=8192)
def _gaussian_cached(sigma_key: float) -> NoiseFunctionals:
    return NoiseFunctionals.gaussian(sigma_key)


def gaussian_functionals(sigma) -> NoiseFunctionals:
    """Cached default provider for the Gaussian noise law."""
    return _gaussian_cached(round(float(sigma), 12))


@dataclass(frozen=True)
class ExactChainProfile:
    """Inefficiencies of the exact chain and of its jump chain.

    Both default to infinity (the very-inefficient-proposal limit); either
    may be infinite independently.  ``if_jump`` can never exceed ``if_ex``.
    """

    if_ex: float = math.inf
    if_jump: float = math.inf

    def __post_init__(self):
        if self.if_ex < 1.0 or self.if_jump < 1.0:
            raise ValueError(
                f"inefficiencies must be >= 1, got if_ex={self.if_ex}, if_jump={self.if_jump}"
            )
        if self.if_jump > self.if_ex * (1.0 + 1e-12):
            raise ValueError(
                f"jump-chain inefficiency {self.if_jump} exceeds chain inefficiency {self.if_ex}"
            )


def urif1(nf: NoiseFunctionals, if_ex: float) -> float:
    """Upper RIF bound in terms of the exact-chain inefficiency (loose form)."""
    i, a = nf.inv_accept, nf.mean_accept
    return (1.0 + 1.0 / if_ex) * (i + (1.0 - nf.phi1) * (i - 1.0 / a)) - 1.0 / if_ex


def urif2(nf: NoiseFunctionals, if_ex: float) -> float:
    """Upper RIF bound in terms of the exact-chain inefficiency (sharp form).

    Valid when the exact jump chain has inefficiency >= 1 (e.g. positive
    jump kernel); always <= :func:`urif1`.
    """
    return (1.0 + 1.0 / if_ex) * nf.inv_accept - 1.0 / if_ex


def urif3(nf: NoiseFunctionals, if_jump: float) -> float:
    """Upper RIF bound in terms of the exact jump-chain inefficiency."""
    i, a, ph = nf.inv_accept, nf.mean_accept, nf.phi1
    return (
        (1.0 + 1.0 / if_jump) * (1.0 / a + ph * (i - 1.0 / a))
        + 2.0 * (i - 1.0 / a) * (1.0 - ph) / if_jump
        - 1.0 / if_jump
    )


def urif4(nf: NoiseFunctionals, if_jump: float) -> float:
    """Upper RIF bound using the full noise jump-chain inefficiency.

    Converges to :func:`lrif2` as ``if_jump`` grows, so it is sharp in the
    inefficient-proposal limit.
    """
    i, a = nf.inv_accept, nf.mean_accept
    return (
        (1.0 + 1.0 / if_jump) / (1.0 + if_jump) * (i - 1.0 / a) * (1.0 + nf.if_z)
        + 1.0 / a
        + (1.0 / a - 1.0) / if_jump
    )


def lrif1(nf: NoiseFunctionals, if_jump: float) -> float:
    """Lower RIF bound for the bounding chain (requires a positive exact jump kernel)."""
    i, a = nf.inv_accept, nf.mean_accept
    return 1.0 / a + 2.0 / (1.0 + if_jump) * (i - 1.0 / a)


def lrif2(sigma) -> float:
    """Inefficient-proposal lower RIF bound ``1 / (2*Phi(-sigma/sqrt(2)))``."""
    sigma = float(sigma)
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return 1.0 / (2.0 * ndtr(-sigma / _SQRT2))


def rct(rif_value, sigma) -> float:
    """Relative computing time: a relative inefficiency divided by sigma^2."""
    sigma = float(sigma)
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive for a computing time, got {sigma}")
    return float(rif_value) / (sigma * sigma)


def rct_perfect(sigma, provider: Callable[[float], NoiseFunctionals] = gaussian_functionals):
    """Computing time of the perfect-proposal chain, ``(2*pi_z(1/rho_z) - 1)/sigma^2``."""
    nf = provider(sigma)
    return rct(2.0 * nf.inv_accept - 1.0, sigma)


@dataclass(frozen=True)
class BoundSet:
    """All RIF bounds and their computing times at one noise scale."""

    sigma: float
    urif1: float
    urif2: float
    urif3: float
    urif4: float
    lrif1: float
    lrif2: float
    urct1: float
    urct2: float
    urct3: float
    urct4: float
    lrct1: float
    lrct2: float


def bound_set(
    sigma,
    profile: ExactChainProfile,
    provider: Callable[[float], NoiseFunctionals] = gaussian_functionals,
) -> BoundSet:
    nf = provider(sigma)
    rifs = dict(
        urif1=urif1(nf, profile.if_ex),
        urif2=urif2(nf, profile.if_ex),
        urif3=urif3(nf, profile.if_jump),
        urif4=urif4(nf, profile.if_jump),
        lrif1=lrif1(nf, profile.if_jump),
        lrif2=1.0 / nf.mean_accept,
    )
    rcts = {k.replace("rif", "rct"): rct(v, sigma) for k, v in rifs.items()}
    return BoundSet(sigma=float(sigma), **rifs, **rcts)


def rct_bound_value(
    bound_id: str,
    sigma,
    profile: ExactChainProfile,
    provider: Callable[[float], NoiseFunctionals] = gaussian_functionals,
) -> float:
    """Evaluate one named computing-time bound at sigma."""
    if bound_id == "rct_perfect":
        return rct_perfect(sigma, provider)
    if bound_id == "lrct2":
        return rct(1.0 / provider(sigma).mean_accept, sigma)
    nf = provider(sigma)
    if bound_id == "urct1":
        value = urif1(nf, profile.if_ex)
    elif bound_id == "urct2":
        value = urif2(nf, profile.if_ex)
    elif bound_id == "urct3":
        value = urif3(nf, profile.if_jump)
    elif bound_id == "urct4":
        value = urif4(nf, profile.if_jump)
    elif bound_id == "lrct1":
        value = lrif1(nf, profile.if_jump)
    else:
        raise ValueError(f"unknown bound id {bound_id!r}; expected one of {RCT_BOUND_IDS}")
    return rct(value, sigma)


@dataclass(frozen=True)
class SigmaOptResult:
    """Minimizer of one computing-time bound over sigma."""

    bound_id: str
    sigma_opt: float
    value_at_opt: float
    curve: np.ndarray  # columns: sigma, value
    at_boundary: bool


def _golden_section(f, lo, hi, tol):
    """Golden-section minimum of a unimodal f on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def minimize_rct(
    bound_id: str,
    profile: ExactChainProfile = ExactChainProfile(),
    bracket=(0.1, 5.0),
    tol=1e-4,
    curve_step=0.01,
    provider: Callable[[float], NoiseFunctionals] = gaussian_functionals,
) -> SigmaOptResult:
    """Golden-section minimum of a computing-time bound over sigma.

    The curve over the bracket (step ``curve_step``) is returned for
    plotting.  A minimum within one tolerance of either bracket end is
    flagged rather than silently returned.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not 0.0 < lo < hi:
        raise ValueError(f"bracket must satisfy 0 < lo < hi, got {bracket}")
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")

    def f(sigma):
        return rct_bound_value(bound_id, sigma, profile, provider)

    sigma_opt, value = _golden_section(f, lo, hi, tol)
    sigmas = np.arange(lo, hi + 0.5 * curve_step, curve_step)
    curve = np.column_stack([sigmas, [f(s) for s in sigmas]])
    at_boundary = sigma_opt - lo < 2.0 * tol or hi - sigma_opt < 2.0 * tol
    return SigmaOptResult(
        bound_id=bound_id,
        sigma_opt=sigma_opt,
        value_at_opt=value,
        curve=curve,
        at_boundary=at_boundary,
    )


@dataclass(frozen=True)
class SandwichRow:
    """Interval guaranteed to contain the bounding chain's optimum.

    ``sigma_interval`` is the sigma range on which the lower computing-time
    bound lies below the better of the two upper-bound minima;
    ``rct_interval`` brackets the optimal computing time itself.
    """

    if_jump: float
    rct_interval: tuple[float, float]
    sigma_interval: tuple[float, float]


def _bisect_crossing(f, lo, hi, tol=1e-9):
    """Root of f (sign change between lo and hi) by bisection."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise ValueError(f"no sign change on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if flo * fm < 0.0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


def sandwich_interval(
    if_jump,
    bracket=(0.15, 3.5),
    tol=1e-6,
    provider: Callable[[float], NoiseFunctionals] = gaussian_functionals,
) -> SandwichRow:
    """Sandwich the optimal sigma of the bounding chain for a given ``if_jump``.

    Computes ``m = min(inf_sigma urct3, inf_sigma urct4)``, the sigma
    interval on which ``lrct1 <= m``, and the computing-time interval
    ``(min_sigma lrct1, m)``.
    """
    if_jump = float(if_jump)
    if if_jump < 1.0:
        raise ValueError(f"if_jump must be >= 1, got {if_jump}")
    profile = ExactChainProfile(if_ex=math.inf, if_jump=if_jump)
    lo, hi = bracket

    def u3(s):
        return rct_bound_value("urct3", s, profile, provider)

    def u4(s):
        return rct_bound_value("urct4", s, profile, provider)

    def l1(s):
        return rct_bound_value("lrct1", s, profile, provider)

    m = min(_golden_section(u3, lo, hi, tol)[1], _golden_section(u4, lo, hi, tol)[1])
    sigma_low, rct_low = _golden_section(l1, lo, hi, tol)
    if rct_low > m:
        raise RuntimeError(
            f"lower bound minimum {rct_low} above upper-bound minimum {m}; "
            f"widen the bracket {bracket}"
        )
    # lrct1 diverges as sigma -> 0 and increases again for large sigma, so the
    # sub-level set {lrct1 <= m} is an interval around its minimizer
    left = _bisect_crossing(lambda s: l1(s) - m, lo, sigma_low)
    right_hi = sigma_low
    while l1(right_hi) <= m:
        right_hi += 0.05
        if right_hi > 10.0:
            raise RuntimeError("no upper crossing found below sigma = 10")
    right = _bisect_crossing(lambda s: l1(s) - m, right_hi - 0.05, right_hi)
    return SandwichRow(
        if_jump=if_jump,
        rct_interval=(rct_low, m),
        sigma_interval=(left, right),
    )


def arif(sigma, l) -> float:
    """Dimension-limit relative inefficiency of an isotropic random-walk chain.

    ``Phi(-l/2) / Phi(-sqrt(2*sigma^2 + l^2)/2)`` for jump-size parameter
    ``l > 0``, evaluated via log CDFs so large arguments do not underflow.
    Tends to :func:`lrif2` as ``l -> 0``.
    """
    sigma = float(sigma)
    l = float(l)
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if l <= 0.0:
        raise ValueError(f"l must be positive (use lrif2 for the l -> 0 limit), got {l}")
    return math.exp(
        log_ndtr(-l / 2.0) - log_ndtr(-math.sqrt(2.0 * sigma * sigma + l * l) / 2.0)
    )


def arct(sigma, l) -> float:
    """Computing-time counterpart of :func:`arif`; tends to :func:`psi` as l grows."""
    return rct(arif(sigma, l), sigma)


def psi(sigma) -> float:
    """Large-jump limit of :func:`arct`: ``exp(sigma^2/4) / sigma^2``."""
    sigma = float(sigma)
    if sigma <= 0.0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return math.exp(sigma * sigma / 4.0) / (sigma * sigma)


def write_curves_csv(path, rows: Sequence[tuple[float, str, float, float]]):
    """Write bound-curve rows ``(sigma, bound_id, if_param, value)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "bound_id", "if_param", "value"])
        for sigma, bound_id, if_param, value in rows:
            writer.writerow(
                [format(sigma, ".17g"), bound_id, format(if_param, ".17g"), format(value, ".17g")]
            )


def write_sandwich_csv(path, rows: Sequence[SandwichRow]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["if_jump", "rct_lo", "rct_hi", "sigma_lo", "sigma_hi"])
        for row in rows:
            writer.writerow(
                [
                    format(row.if_jump, ".17g"),
                    format(row.rct_interval[0], ".17g"),
                    format(row.rct_interval[1], ".17g"),
                    format(row.sigma_interval[0], ".17g"),
                    format(row.sigma_interval[1], ".17g"),
                ]
            )
