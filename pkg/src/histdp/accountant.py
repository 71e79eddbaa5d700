"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

Per-step RDP at integer orders via the binomial expansion

    RDP(alpha) = 1/(alpha-1) * log( sum_{k=0..alpha} C(alpha,k)
                 (1-q)^(alpha-k) q^k exp((k^2-k)/(2 sigma^2)) )

evaluated in log-space, composed linearly over steps, and converted to
(epsilon, delta)-DP with the standard bound
epsilon = min_alpha RDP(alpha) + log(1/delta)/(alpha-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

# Integer orders 2..64 plus two large orders for very low-noise regimes.
DEFAULT_ORDERS: tuple = tuple(range(2, 65)) + (128, 256)


class BudgetUnboundedError(ValueError):
    """All RDP orders are infinite; no finite epsilon exists."""


@dataclass(frozen=True)
class RdpCurve:
    """Cumulative RDP values over a grid of orders."""

    orders: tuple
    values: tuple  # may contain math.inf per order

    def __post_init__(self):
        if len(self.orders) != len(self.values):
            raise ValueError("orders and values must have equal length")
        if len(self.orders) == 0:
            raise ValueError("empty RDP curve")


def rdp_step(q: float, sigma: float, alpha: int) -> float:
    """RDP of one Poisson-subsampled Gaussian application at integer order alpha."""
    if not (0 < q <= 1):
        raise ValueError(f"sampling rate q={q} outside (0, 1]")
    if alpha <= 1:
        raise ValueError(f"order alpha={alpha} must exceed 1")
    if int(alpha) != alpha:
        raise ValueError(f"only integer orders supported, got {alpha}")
    if sigma < 0:
        raise ValueError(f"negative sigma: {sigma}")
    if sigma == 0:
        return math.inf
    alpha = int(alpha)
    if q == 1:
        return alpha / (2.0 * sigma * sigma)
    k = np.arange(alpha + 1, dtype=np.float64)
    log_binom = gammaln(alpha + 1) - gammaln(k + 1) - gammaln(alpha - k + 1)
    log_terms = (
        log_binom
        + (alpha - k) * math.log1p(-q)
        + k * math.log(q)
        + (k * k - k) / (2.0 * sigma * sigma)
    )
    log_moment = float(logsumexp(log_terms))
    return max(0.0, log_moment / (alpha - 1))


def per_step_curve(q: float, sigma: float, orders=DEFAULT_ORDERS) -> RdpCurve:
    return RdpCurve(tuple(orders), tuple(rdp_step(q, sigma, a) for a in orders))


def compose(curve: RdpCurve, steps: int) -> RdpCurve:
    """RDP composes additively; identical steps compose linearly."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0:
        return RdpCurve(curve.orders, tuple(0.0 for _ in curve.values))
    return RdpCurve(curve.orders, tuple(v * steps for v in curve.values))


def rdp_to_dp(curve: RdpCurve, delta: float):
    """Convert an RDP curve to (epsilon, best_order) at the given delta."""
    if not (0 < delta < 1):
        raise ValueError(f"delta={delta} outside (0, 1)")
    best_eps = math.inf
    best_order = None
    log_inv_delta = math.log(1.0 / delta)
    for alpha, rdp in zip(curve.orders, curve.values):
        if not math.isfinite(rdp):
            continue
        eps = rdp + log_inv_delta / (alpha - 1)
        if eps < best_eps:
            best_eps = eps
            best_order = alpha
    if best_order is None:
        raise BudgetUnboundedError("budget unbounded: all orders are infinite")
    return max(0.0, best_eps), best_order


def epsilon(q: float, sigma: float, steps: int, delta: float, orders=DEFAULT_ORDERS):
    """Accounted epsilon for `steps` subsampled Gaussian applications."""
    if sigma == 0:
        return math.inf, None
    if steps == 0:
        # Zero accesses: still finite via the conversion term.
        return rdp_to_dp(compose(per_step_curve(q, 1.0, orders), 0), delta)
    return rdp_to_dp(compose(per_step_curve(q, sigma, orders), steps), delta)


SIGMA_LO = 1e-2
SIGMA_HI = 1e3


def calibrate_sigma(
    target_epsilon: float,
    delta: float,
    q: float,
    steps: int,
    orders=DEFAULT_ORDERS,
    rel_width: float = 1e-3,
) -> float:
    """Smallest noise multiplier whose accounted epsilon is <= target.

    Bracketed binary search over sigma in [SIGMA_LO, SIGMA_HI]; epsilon is
    non-increasing in sigma so the upper bracket endpoint is returned once
    the relative bracket width falls below rel_width.
    """
    if target_epsilon <= 0:
        raise ValueError("target epsilon must be positive")

    def eps_at(s):
        try:
            return epsilon(q, s, steps, delta, orders)[0]
        except BudgetUnboundedError:
            return math.inf

    eps_hi = eps_at(SIGMA_HI)
    if eps_hi > target_epsilon:
        raise ValueError(
            f"target epsilon {target_epsilon} unreachable: "
            f"sigma={SIGMA_HI} still yields epsilon={eps_hi}"
        )
    if eps_at(SIGMA_LO) <= target_epsilon:
        return SIGMA_LO
    lo, hi = SIGMA_LO, SIGMA_HI
    while (hi - lo) / hi > rel_width:
        mid = math.sqrt(lo * hi)
        if eps_at(mid) <= target_epsilon:
            hi = mid
        else:
            lo = mid
    return hi


NONPRIVATE = math.inf  # sentinel epsilon label for sigma == 0 runs


@dataclass(frozen=True)
class PrivacySpec:
    """Privacy parameters of one training run.

    q is the Poisson per-example inclusion probability, sigma the noise
    multiplier (0 means the non-private sentinel), clip_bound the L2 cap C,
    and steps the total number of gradient accesses T.
    """

    q: float
    sigma: float
    clip_bound: float
    delta: float
    steps: int

    def __post_init__(self):
        if not (0 < self.q <= 1):
            raise ValueError(f"q={self.q} outside (0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not self.clip_bound > 0:
            raise ValueError("clip_bound must be positive")
        if not (0 < self.delta < 1):
            raise ValueError(f"delta={self.delta} outside (0, 1)")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")

    @property
    def is_private(self) -> bool:
        return self.sigma > 0

    def accounted_epsilon(self, steps: int | None = None) -> float:
        if not self.is_private:
            return NONPRIVATE
        t = self.steps if steps is None else steps
        return epsilon(self.q, self.sigma, t, self.delta)[0]

    def warn_delta(self, dataset_size: int) -> str | None:
        """Delta should stay below the inverse dataset size."""
        if self.delta >= 1.0 / dataset_size:
            return (
                f"delta={self.delta} is not smaller than 1/{dataset_size}; "
                "the (epsilon, delta) guarantee is weak at this dataset size"
            )
        return None
