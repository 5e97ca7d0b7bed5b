"""Differential-privacy mechanics for noisy gradient training.

Implements L2 clipping, Gaussian noising of summed gradients, a Renyi-DP
accountant for the Poisson-subsampled Gaussian mechanism, conversion of a
composed RDP profile to (epsilon, delta), and calibration of the noise
multiplier to a target epsilon.

The subsampled-Gaussian divergence at integer orders uses the binomial
moment expansion; fractional orders interpolate the log-moment function
between adjacent integers (an upper bound, since the log-moment is convex
in the order). Everything is computed in log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import AccountingError, CalibrationError
from .rngs import as_generator

DEFAULT_ORDERS: tuple[float, ...] = (
    1.25,
    1.5,
    1.75,
    *[2.0 + 0.5 * i for i in range(125)],  # 2.0, 2.5, ..., 64.0
    128.0,
    256.0,
)


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget and mechanism knobs for one training run."""

    epsilon: float
    delta: float = 1e-5
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    sampling_rate: float = 1.0
    steps: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise AccountingError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise AccountingError(f"delta must be in [0, 1), got {self.delta}")
        if not self.clip_norm > 0:
            raise AccountingError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.noise_multiplier < 0:
            raise AccountingError(f"noise_multiplier must be >= 0, got {self.noise_multiplier}")
        if not 0 < self.sampling_rate <= 1:
            raise AccountingError(f"sampling_rate must be in (0, 1], got {self.sampling_rate}")
        if self.steps < 1:
            raise AccountingError(f"steps must be >= 1, got {self.steps}")
        if math.isfinite(self.epsilon) and self.noise_multiplier <= 0:
            raise AccountingError("finite epsilon requires a positive noise multiplier")

    def warn_if_delta_large(self, n: int) -> None:
        # Recommended regime is delta < 1/n; violating it only warns.
        if n > 0 and self.delta >= 1.0 / n:
            warnings.warn(
                f"delta={self.delta} is not below 1/n={1.0 / n:.3g}; the privacy "
                "guarantee is weaker than recommended",
                stacklevel=2,
            )


@dataclass(frozen=True)
class RdpProfile:
    """Per-order Renyi divergences of a single mechanism invocation."""

    orders: tuple[float, ...]
    rdp_values: tuple[float, ...]

    def __post_init__(self):
        if len(self.orders) != len(self.rdp_values):
            raise AccountingError("orders and rdp_values must have the same length")
        if not self.orders:
            raise AccountingError("empty RDP profile")
        if any(a <= 1 for a in self.orders):
            raise AccountingError("all orders must be > 1")
        if any(v < 0 for v in self.rdp_values):
            raise AccountingError("RDP values must be non-negative")


@dataclass(frozen=True)
class AccountResult:
    epsilon: float
    order: float


def clip(gradient: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale a gradient onto the L2 ball of radius clip_norm."""
    if not clip_norm > 0:
        raise AccountingError(f"clip_norm must be > 0, got {clip_norm}")
    g = np.asarray(gradient, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm <= clip_norm or math.isinf(clip_norm):
        return g.copy()
    return g * (clip_norm / norm)


def noisy_mean(
    gradients: "Sequence[np.ndarray] | np.ndarray",
    clip_norm: float,
    noise_multiplier: float,
    expected_batch: float,
    seed,
    dim: "int | None" = None,
) -> np.ndarray:
    """(sum of gradients + N(0, (noise_multiplier * clip_norm)^2 I)) / expected_batch.

    Poisson sampling can produce an empty batch, in which case `dim` tells
    the noise dimension.
    """
    if noise_multiplier < 0:
        raise AccountingError(f"noise_multiplier must be >= 0, got {noise_multiplier}")
    if expected_batch <= 0:
        raise AccountingError(f"expected_batch must be > 0, got {expected_batch}")
    if noise_multiplier > 0 and not math.isfinite(clip_norm):
        raise AccountingError("noise with an infinite clip norm is unbounded")
    grads = np.asarray(gradients, dtype=np.float64)
    if grads.size == 0:
        if dim is None:
            raise AccountingError("empty gradient list needs an explicit dim")
        total = np.zeros(dim)
    else:
        if grads.ndim == 1:
            grads = grads[None, :]
        total = grads.sum(axis=0)
    if noise_multiplier > 0:
        rng = as_generator(seed)
        total = total + rng.normal(0.0, noise_multiplier * clip_norm, size=total.shape)
    return total / expected_batch


def _log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _log_moment_int(q: float, sigma: float, alpha: int) -> float:
    """log E[(mixture/base)^alpha] for the subsampled Gaussian at integer alpha."""
    if q == 1.0:
        return (alpha * alpha - alpha) / (2.0 * sigma * sigma)
    log_q = math.log(q)
    log_1q = math.log1p(-q)
    terms = np.array(
        [
            _log_binom(alpha, i)
            + i * log_q
            + (alpha - i) * log_1q
            + (i * i - i) / (2.0 * sigma * sigma)
            for i in range(alpha + 1)
        ]
    )
    return float(logsumexp(terms))


def rdp_sgm(q: float, sigma: float, order: float) -> float:
    """Renyi divergence of one step of the Poisson-subsampled Gaussian
    mechanism with sampling rate q and noise multiplier sigma.

    q = 1 gives the plain Gaussian mechanism value order / (2 sigma^2).
    Integer orders use the binomial moment bound; fractional orders
    linearly interpolate the log-moment between the adjacent integers.
    """
    if sigma <= 0:
        raise AccountingError(f"sigma must be > 0, got {sigma}")
    if not 0 < q <= 1:
        raise AccountingError(f"q must be in (0, 1], got {q}")
    if order <= 1:
        raise AccountingError(f"order must be > 1, got {order}")
    if q == 1.0:
        return order / (2.0 * sigma * sigma)
    if float(order).is_integer():
        a = int(order)
        return _log_moment_int(q, sigma, a) / (order - 1.0)
    lo = math.floor(order)
    hi = lo + 1
    t = order - lo
    kappa_lo = 0.0 if lo == 1 else _log_moment_int(q, sigma, lo)
    kappa_hi = _log_moment_int(q, sigma, hi)
    return ((1.0 - t) * kappa_lo + t * kappa_hi) / (order - 1.0)


def rdp_profile(
    q: float, sigma: float, orders: Sequence[float] = DEFAULT_ORDERS
) -> RdpProfile:
    return RdpProfile(
        orders=tuple(float(a) for a in orders),
        rdp_values=tuple(rdp_sgm(q, sigma, a) for a in orders),
    )


def compose_and_convert(profile: RdpProfile, steps: int, delta: float) -> AccountResult:
    """Compose `steps` identical mechanism invocations and convert the RDP
    profile to an epsilon at the given delta.

    epsilon = min over orders of steps * rdp(order) + log(1/delta) / (order - 1).
    """
    if not 0 < delta < 1:
        raise AccountingError(f"delta must be in (0, 1), got {delta}")
    if steps < 1:
        raise AccountingError(f"steps must be >= 1, got {steps}")
    log_inv_delta = math.log(1.0 / delta)
    best_eps = math.inf
    best_order = profile.orders[0]
    for order, value in zip(profile.orders, profile.rdp_values):
        eps = steps * value + log_inv_delta / (order - 1.0)
        if eps < best_eps:
            best_eps = eps
            best_order = order
    return AccountResult(epsilon=best_eps, order=best_order)


def account(q: float, sigma: float, steps: int, delta: float,
            orders: Sequence[float] = DEFAULT_ORDERS) -> AccountResult:
    """One-call accountant for a full training run."""
    return compose_and_convert(rdp_profile(q, sigma, orders), steps, delta)


def calibrate_sigma(
    target_epsilon: float,
    delta: float,
    q: float,
    steps: int,
    orders: Sequence[float] = DEFAULT_ORDERS,
    bracket: tuple[float, float] = (1e-2, 1e3),
    resolution: float = 1e-3,
) -> float:
    """Smallest noise multiplier whose accounted epsilon lands within 1%
    below the target, found by bisection on the given bracket."""
    if not (math.isfinite(target_epsilon) and target_epsilon > 0):
        raise CalibrationError(f"target epsilon must be finite and > 0, got {target_epsilon}")
    lo, hi = bracket

    def eps_at(sigma: float) -> float:
        return account(q, sigma, steps, delta, orders).epsilon

    if eps_at(hi) > target_epsilon:
        raise CalibrationError(
            f"even sigma={hi} gives epsilon {eps_at(hi):.4g} > {target_epsilon}; "
            "expand the bracket upwards"
        )
    if eps_at(lo) <= target_epsilon:
        raise CalibrationError(
            f"sigma={lo} already gives epsilon {eps_at(lo):.4g} <= {target_epsilon}; "
            "expand the bracket downwards"
        )
    for _ in range(200):
        if hi - lo <= resolution and eps_at(hi) >= 0.99 * target_epsilon:
            break
        mid = 0.5 * (lo + hi)
        if eps_at(mid) > target_epsilon:
            lo = mid
        else:
            hi = mid
    result = eps_at(hi)
    if not 0.97 * target_epsilon <= result <= target_epsilon:
        raise CalibrationError(
            f"bisection stalled at sigma={hi} with epsilon {result:.6g} "
            f"for target {target_epsilon}"
        )
    return hi
