"""Class-balanced focal loss with analytic gradient w.r.t. logits.

Loss for a sample of class y with predicted distribution p:

    w_y * (1 - p_y)^gamma * (-log p_y),   w_y = (1 - beta) / (1 - beta^{n_y})

where n_y is the training count of class y.  beta = 0 disables the class
weighting (w_y = 1) and gamma = 0 recovers plain cross-entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12  # clamp before log; perturbs gradients below test tolerance


@dataclass(frozen=True)
class CbFocalConfig:
    beta: float = 0.0
    gamma: float = 0.0
    class_counts: tuple = ()

    def __post_init__(self):
        if not (0 <= self.beta < 1):
            raise ValueError(f"beta={self.beta} outside [0, 1)")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if any(n <= 0 for n in self.class_counts):
            raise ValueError("class counts must be positive")

    def weight(self, label: int) -> float:
        if self.class_counts:
            if not (0 <= label < len(self.class_counts)):
                raise ValueError(f"unknown label {label}")
            if self.beta == 0:
                return 1.0
            n = self.class_counts[label]
            return (1.0 - self.beta) / (1.0 - self.beta**n)
        return 1.0

    def weights(self) -> np.ndarray:
        return np.array(
            [self.weight(c) for c in range(len(self.class_counts))], dtype=np.float64
        )


def _check_label(probs: np.ndarray, label: int):
    if not (0 <= label < probs.shape[-1]):
        raise ValueError(f"unknown label {label} for {probs.shape[-1]} classes")


def cb_focal_loss(probs, label: int, config: CbFocalConfig) -> float:
    """Class-balanced focal loss of one predicted distribution."""
    probs = np.asarray(probs, dtype=np.float64)
    _check_label(probs, label)
    p = max(float(probs[label]), PROB_FLOOR)
    w = config.weight(label)
    return w * (1.0 - p) ** config.gamma * (-math.log(p))


def cb_focal_grad(probs, label: int, config: CbFocalConfig) -> np.ndarray:
    """Gradient of cb_focal_loss w.r.t. the logits producing `probs` by softmax."""
    probs = np.asarray(probs, dtype=np.float64)
    _check_label(probs, label)
    p = float(probs[label])
    if p >= 1.0:
        return np.zeros_like(probs)
    t = max(p, PROB_FLOOR)
    gamma = config.gamma
    w = config.weight(label)
    # dL/dt for L = w (1-t)^g (-log t)
    if gamma == 0:
        dl_dt = -w / t
    else:
        dl_dt = w * (
            -gamma * (1.0 - t) ** (gamma - 1.0) * (-math.log(t))
            - (1.0 - t) ** gamma / t
        )
    # dt/dz_j = p_y (delta_yj - p_j) through softmax
    one_hot = np.zeros_like(probs)
    one_hot[label] = 1.0
    return dl_dt * p * (one_hot - probs)


def batch_loss_and_grad(probs: np.ndarray, labels: np.ndarray, config: CbFocalConfig):
    """Vectorized loss values and logit gradients for a batch.

    probs: (B, K) softmax outputs; labels: (B,) integer classes.
    Returns (losses (B,), grads (B, K)).
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B, K = probs.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= K:
        raise ValueError("label outside class range")
    p = probs[np.arange(B), labels]
    t = np.maximum(p, PROB_FLOOR)
    if config.class_counts:
        w = config.weights()[labels]
    else:
        w = np.ones(B)
    gamma = config.gamma
    losses = w * (1.0 - t) ** gamma * (-np.log(t))
    if gamma == 0:
        dl_dt = -w / t
    else:
        onem = np.maximum(1.0 - t, 0.0)
        # guard t == 1 exactly: loss and grad are both zero there
        safe = onem > 0
        dl_dt = np.zeros(B)
        dl_dt[safe] = w[safe] * (
            -gamma * onem[safe] ** (gamma - 1.0) * (-np.log(t[safe]))
            - onem[safe] ** gamma / t[safe]
        )
    dl_dt = np.where(p >= 1.0, 0.0, dl_dt)
    one_hot = np.zeros((B, K))
    one_hot[np.arange(B), labels] = 1.0
    grads = (dl_dt * p)[:, None] * (one_hot - probs)
    return losses, grads
