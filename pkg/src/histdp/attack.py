"""Black-box membership inference by loss thresholding.

The adversary scores each candidate by its loss under the target model
(forward passes only) and calls low-loss samples members.  The threshold
is picked on a held-out calibration slice to maximize TPR - FPR, and the
leakage PL = TPR - FPR is reported on the remaining evaluation slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .loss import batch_loss_and_grad
from .metrics import AttackRates, privacy_leakage
from .model import ModelParams, forward_batch
from .numerics import RngStream


@dataclass
class AttackResult:
    threshold: float
    rates: AttackRates
    leakage: float
    member_scores: np.ndarray
    nonmember_scores: np.ndarray


def score_samples(params: ModelParams, samples, loss_config) -> np.ndarray:
    """Per-sample loss scores (lower means more member-like)."""
    if not samples:
        raise ValueError("no samples to score")
    probs, _ = forward_batch(
        [s.history for s in samples], [s.current for s in samples], params
    )
    labels = np.asarray([s.label for s in samples], dtype=np.int64)
    losses, _ = batch_loss_and_grad(probs, labels, loss_config)
    return losses


def _rates_at(threshold, member_scores, nonmember_scores) -> AttackRates:
    tpr = float(np.mean(member_scores <= threshold))
    fpr = float(np.mean(nonmember_scores <= threshold))
    return AttackRates(tpr, fpr)


def threshold_attack(
    member_scores,
    nonmember_scores,
    calibration_fraction: float = 0.5,
    rng: RngStream | None = None,
) -> AttackResult:
    """Calibrate a loss threshold, then report TPR/FPR and PL on held-out data."""
    if not (0 < calibration_fraction < 1):
        raise ValueError("calibration fraction must lie in (0, 1)")
    member_scores = np.asarray(member_scores, dtype=np.float64)
    nonmember_scores = np.asarray(nonmember_scores, dtype=np.float64)
    if member_scores.size == 0 or nonmember_scores.size == 0:
        raise ValueError("both score sets must be nonempty")
    rng = rng or RngStream(0, ("attack",))
    gen = rng.generator()
    mem_perm = gen.permutation(member_scores.size)
    non_perm = gen.permutation(nonmember_scores.size)
    n_mem_cal = max(1, int(round(calibration_fraction * member_scores.size)))
    n_non_cal = max(1, int(round(calibration_fraction * nonmember_scores.size)))
    n_mem_cal = min(n_mem_cal, member_scores.size - 1)
    n_non_cal = min(n_non_cal, nonmember_scores.size - 1)
    mem_cal = member_scores[mem_perm[:n_mem_cal]]
    mem_eval = member_scores[mem_perm[n_mem_cal:]]
    non_cal = nonmember_scores[non_perm[:n_non_cal]]
    non_eval = nonmember_scores[non_perm[n_non_cal:]]

    candidates = np.unique(np.concatenate([mem_cal, non_cal]))
    best_thr, best_adv = candidates[0], -math.inf
    for thr in candidates:
        r = _rates_at(thr, mem_cal, non_cal)
        adv = r.tpr - r.fpr
        if adv > best_adv:
            best_adv, best_thr = adv, float(thr)
    rates = _rates_at(best_thr, mem_eval, non_eval)
    return AttackResult(best_thr, rates, privacy_leakage(rates), mem_eval, non_eval)


def _binomial_halfwidth(p: float, n: int, z: float = 2.5758293035489004) -> float:
    """Two-sided 99% normal-approximation confidence half-width."""
    if n <= 0:
        return 1.0
    return z * math.sqrt(max(p * (1 - p), 1.0 / n) / n)


def dp_bound_check(result: AttackResult, epsilon: float, delta: float):
    """Check the DP implication TPR <= e^eps * FPR + delta with 99% margins.

    A violation (beyond binomial sampling error on both rates) indicates an
    accounting or training bug.  Returns (passed, margin) where margin is
    the slack of the bound.
    """
    if math.isinf(epsilon):
        return True, math.inf
    n_mem = result.member_scores.size
    n_non = result.nonmember_scores.size
    tpr_lo = result.rates.tpr - _binomial_halfwidth(result.rates.tpr, n_mem)
    fpr_hi = result.rates.fpr + _binomial_halfwidth(result.rates.fpr, n_non)
    bound = math.exp(epsilon) * fpr_hi + delta
    margin = bound - tpr_lo
    return margin >= 0, margin
