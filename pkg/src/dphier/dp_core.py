"""Laplace-distribution primitives, privacy parameterization, and split-cost bounds.

Everything here is pure given an explicit ``numpy.random.Generator``; callers
that need parallelism should hand each worker its own stream (e.g. via
``numpy.random.SeedSequence.spawn``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = [
    "LaplaceSample",
    "PrivacyParams",
    "compose_budgets",
    "laplace_cdf",
    "laplace_pdf",
    "laplace_sf",
    "privtree_params",
    "rho",
    "rho_upper",
    "sample_laplace",
]

_LN2 = math.log(2.0)


def _check_scale(scale: float) -> None:
    if not scale > 0:
        raise ParameterError(f"Laplace scale must be positive, got {scale!r}")


@dataclass(frozen=True)
class LaplaceSample:
    """A tagged Laplace draw, carrying the scale it was drawn at."""

    value: float
    scale: float

    def __post_init__(self) -> None:
        _check_scale(self.scale)


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy parameterization of a bias-decayed decomposition build.

    ``delta`` (the per-level bias) is stored redundantly alongside
    ``gamma = delta / lam``; construction enforces ``delta == gamma * lam``
    bitwise, so derive ``delta`` from ``gamma`` when building by hand.

    Attributes:
        epsilon: total privacy budget allocated to the tree structure.
        lam: Laplace scale used for split decisions.
        theta: split threshold.
        delta: per-level bias subtracted from the score (decaying factor).
        gamma: delta / lam.
        beta: tree fanout (children per split).
    """

    epsilon: float
    lam: float
    theta: float
    delta: float
    gamma: float
    beta: int

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon!r}")
        _check_scale(self.lam)
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be positive, got {self.gamma!r}")
        if not (isinstance(self.beta, (int, np.integer)) and self.beta >= 2):
            raise ParameterError(f"beta must be an integer >= 2, got {self.beta!r}")
        if self.delta != self.gamma * self.lam:
            raise ParameterError(
                f"delta must equal gamma * lam exactly "
                f"(delta={self.delta!r}, gamma*lam={self.gamma * self.lam!r})"
            )


def privtree_params(
    epsilon: float,
    beta: int,
    theta: float = 0.0,
    *,
    sensitivity: float = 1.0,
    scale_multiplier: float = 1.0,
) -> PrivacyParams:
    """Derive the tightest valid parameters for a fanout-``beta`` build.

    Uses the minimum admissible noise scale
    ``lam = (2*beta - 1) / (beta - 1) * sensitivity / epsilon`` and the
    convergence-friendly bias ``delta = lam * ln(beta)``.  ``sensitivity``
    scales the noise for score functions whose per-record influence exceeds 1
    (e.g. length-capped sequence scores).  ``scale_multiplier >= 1`` adds
    slack for callers that want more noise than the minimum.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon!r}")
    if not (isinstance(beta, (int, np.integer)) and beta >= 2):
        raise ParameterError(f"beta must be an integer >= 2, got {beta!r}")
    if not sensitivity > 0:
        raise ParameterError(f"sensitivity must be positive, got {sensitivity!r}")
    if not scale_multiplier >= 1.0:
        raise ParameterError(
            f"scale_multiplier must be >= 1, got {scale_multiplier!r}"
        )
    lam = (2.0 * beta - 1.0) / (beta - 1.0) * sensitivity / epsilon * scale_multiplier
    gamma = math.log(beta)
    return PrivacyParams(
        epsilon=float(epsilon),
        lam=lam,
        theta=float(theta),
        delta=gamma * lam,
        gamma=gamma,
        beta=int(beta),
    )


def compose_budgets(budgets) -> float:
    """Total budget consumed by running the given mechanisms in sequence."""
    budgets = list(budgets)
    if not budgets:
        raise ParameterError("budget list must be nonempty")
    for b in budgets:
        if not b > 0:
            raise ParameterError(f"all budgets must be positive, got {b!r}")
    return math.fsum(budgets)


def sample_laplace(scale: float, rng: np.random.Generator, size=None):
    """Draw zero-mean Laplace noise with the given scale.

    Sampling is an inverse-CDF transform of exactly one uniform draw per
    sample, so results are reproducible across platforms for a fixed stream.
    Returns a float for ``size=None``, else an ndarray.
    """
    _check_scale(scale)
    u = rng.random() if size is None else rng.random(size)
    return _laplace_ppf(u, scale)


def _laplace_ppf(u, scale: float):
    # u in [0, 1); guard the u == 0 endpoint, which would map to -inf.
    u = np.asarray(u, dtype=np.float64)
    tiny = np.finfo(np.float64).tiny
    lower = scale * np.log(np.maximum(2.0 * u, tiny))
    upper = -scale * np.log(np.maximum(2.0 * (1.0 - u), tiny))
    out = np.where(u < 0.5, lower, upper)
    return float(out) if out.ndim == 0 else out


def laplace_pdf(x, scale: float):
    """Density of the zero-mean Laplace distribution at ``x``."""
    _check_scale(scale)
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-np.abs(x) / scale) / (2.0 * scale)
    return float(out) if out.ndim == 0 else out


def laplace_cdf(x, scale: float):
    """P[Lap(scale) <= x], evaluated in closed form."""
    _check_scale(scale)
    x = np.asarray(x, dtype=np.float64)
    out = np.where(
        x <= 0,
        0.5 * np.exp(np.minimum(x, 0.0) / scale),
        1.0 - 0.5 * np.exp(-np.maximum(x, 0.0) / scale),
    )
    return float(out) if out.ndim == 0 else out


def laplace_sf(x, scale: float):
    """P[Lap(scale) > x] (survival function), evaluated in closed form."""
    _check_scale(scale)
    x = np.asarray(x, dtype=np.float64)
    out = np.where(
        x >= 0,
        0.5 * np.exp(-np.maximum(x, 0.0) / scale),
        1.0 - 0.5 * np.exp(np.minimum(x, 0.0) / scale),
    )
    return float(out) if out.ndim == 0 else out


def rho(x, theta: float, lam: float):
    """Per-node split-decision privacy cost at score ``x``.

    Computes ``ln( P[x + Lap(lam) > theta] / P[x - 1 + Lap(lam) > theta] )``
    from closed-form Laplace tails.  The evaluation is piecewise with branch
    points at ``x = theta`` and ``x = theta + 1`` so that the bound
    ``rho <= rho_upper`` holds without floating-point violations:

    * ``x <= theta``: both tails are in the exponential regime and the ratio
      is exactly ``exp(1/lam)``, so the value ``1/lam`` is returned directly.
    * ``theta < x < theta + 1``: evaluated via ``log1p``; the analytic value
      never exceeds ``1/lam``, and the result is clamped there to keep
      rounding from crossing the proven ceiling.
    * ``x >= theta + 1``: both tails are near 1; ``log1p`` keeps the
      difference accurate far into the tail.
    """
    _check_scale(lam)
    x = np.asarray(x, dtype=np.float64)
    u = theta - x  # numerator tail argument; denominator uses u + 1
    flat = 1.0 / lam
    with np.errstate(over="ignore"):
        mid = np.minimum(
            flat,
            np.log1p(-0.5 * np.exp(np.minimum(u, 0.0) / lam)) + _LN2 + (u + 1.0) / lam,
        )
        tail = np.log1p(-0.5 * np.exp(np.minimum(u, 0.0) / lam)) - np.log1p(
            -0.5 * np.exp(np.minimum(u + 1.0, 0.0) / lam)
        )
    out = np.where(u >= 0.0, flat, np.where(u + 1.0 > 0.0, mid, tail))
    return float(out) if out.ndim == 0 else out


def rho_upper(x, theta: float, lam: float):
    """Exponential-decay upper bound on :func:`rho`.

    Equals ``1/lam`` for ``x < theta + 1`` and
    ``(1/lam) * exp((theta + 1 - x) / lam)`` beyond.
    """
    _check_scale(lam)
    x = np.asarray(x, dtype=np.float64)
    flat = 1.0 / lam
    decay = flat * np.exp(np.minimum(theta + 1.0 - x, 0.0) / lam)
    out = np.where(x < theta + 1.0, flat, decay)
    return float(out) if out.ndim == 0 else out
