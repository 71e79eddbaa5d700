"""Differentially private training loop: Poisson sampling, per-sample
clipping, Gaussian noising, and a DP-Adam parameter update.

Per step: sample a Poisson batch with rate q, compute per-sample gradients,
clip each to L2 norm C, average the clipped sum plus N(0, sigma^2 C^2 I)
noise over the expected batch size N = qM, and feed the privatized gradient
to Adam.  sigma = 0 with an infinite clip bound is the non-private sentinel
and reproduces plain Adam bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import accountant
from .accountant import PrivacySpec
from .model import ModelParams, backward_batch
from .numerics import NonFiniteError, RngStream, gaussian_sample, l2_norm


class DivergenceError(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"training diverged (non-finite loss) at step {step}")
        self.step = step


def poisson_sample(dataset_size: int, q: float, rng: RngStream) -> np.ndarray:
    """Indices included independently with probability q (may be empty)."""
    if not (0 < q <= 1):
        raise ValueError(f"q={q} outside (0, 1]")
    if q == 1:
        return np.arange(dataset_size)
    mask = rng.generator().random(dataset_size) < q
    return np.nonzero(mask)[0]


def clip_gradient(g: np.ndarray, clip_bound: float) -> np.ndarray:
    """g / max(1, ||g||_2 / C); identity on the ball of radius C."""
    if not clip_bound > 0:
        raise ValueError("clip bound must be positive")
    norm = l2_norm(g)
    if math.isinf(clip_bound):
        return np.asarray(g, dtype=np.float64)
    return np.asarray(g, dtype=np.float64) / max(1.0, norm / clip_bound)


def clip_gradients_batch(grads: np.ndarray, clip_bound: float) -> np.ndarray:
    """Row-wise clip of a (B, P) per-sample gradient matrix."""
    if math.isinf(clip_bound):
        return grads
    norms = np.sqrt(np.sum(grads * grads, axis=1))
    factors = 1.0 / np.maximum(1.0, norms / clip_bound)
    return grads * factors[:, None]


def aggregate_and_noise(
    clipped: np.ndarray,
    sigma: float,
    clip_bound: float,
    expected_batch: float,
    rng: RngStream,
) -> np.ndarray:
    """(sum of clipped per-sample grads + Gaussian noise) / expected batch size.

    The noise scale is sigma * C per coordinate; an empty batch yields a
    pure-noise step (the accountant already charged for the access).
    """
    clipped = np.asarray(clipped, dtype=np.float64)
    if clipped.ndim != 2:
        raise ValueError("clipped gradients must be a (B, P) matrix")
    if not math.isinf(clip_bound):
        norms = np.sqrt(np.sum(clipped * clipped, axis=1))
        if np.any(norms > clip_bound * (1 + 1e-9)):
            raise ValueError("clip contract violated: input gradient norm exceeds C")
    total = clipped.sum(axis=0)
    if sigma > 0:
        total = total + gaussian_sample(total.shape, sigma * clip_bound, rng)
    return total / expected_batch


@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    learning_rate: float = 1e-2

    @staticmethod
    def init(num_params: int, learning_rate: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999) -> "AdamState":
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        return AdamState(
            np.zeros(num_params),
            np.zeros(num_params),
            beta1=beta1,
            beta2=beta2,
            learning_rate=learning_rate,
        )


def dp_adam_step(state: AdamState, noisy_grad: np.ndarray):
    """One Adam update on the privatized gradient; returns (delta_w, new state)."""
    g = np.asarray(noisy_grad, dtype=np.float64)
    if g.shape != state.first_moment.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {state.first_moment.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    delta = -state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_hat)
    return delta, replace(state, first_moment=m, second_moment=v, step_count=t)


@dataclass
class TrainResult:
    params: ModelParams
    epsilon_per_epoch: list
    loss_per_epoch: list
    steps: int


def steps_per_epoch(q: float) -> int:
    """Expected one pass over the data per epoch under Poisson sampling."""
    return max(1, round(1.0 / q))


def train(
    params: ModelParams,
    dataset,
    privacy: PrivacySpec,
    loss_config,
    epochs: int,
    rng: RngStream,
    learning_rate: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    on_epoch_end=None,
) -> TrainResult:
    """Run the full DP-Adam loop over `dataset` (a list of timeline samples).

    The noise and batch draws for step s use dedicated child streams of
    `rng` keyed by the step index, so runs are reproducible and noise
    draws never alias across steps.  on_epoch_end(epoch, params, epsilon)
    is invoked after each epoch with the accounted budget so far.
    """
    if not dataset:
        raise ValueError("empty dataset")
    M = len(dataset)
    q = privacy.q
    sigma = privacy.sigma
    C = privacy.clip_bound
    N_expected = q * M
    per_epoch = steps_per_epoch(q)

    params = params.copy()
    flat = params.flatten()
    state = AdamState.init(flat.size, learning_rate, beta1, beta2)
    step = 0
    eps_per_epoch = []
    loss_per_epoch = []
    for epoch in range(epochs):
        epoch_losses = []
        for _ in range(per_epoch):
            idx = poisson_sample(M, q, rng.child("batch", step))
            if idx.size > 0:
                batch = [dataset[int(i)] for i in idx]
                losses, grads, _ = backward_batch(
                    [s.history for s in batch],
                    [s.current for s in batch],
                    [s.label for s in batch],
                    params,
                    loss_config,
                )
                if not np.all(np.isfinite(losses)):
                    raise DivergenceError(step)
                epoch_losses.extend(losses.tolist())
                clipped = clip_gradients_batch(grads, C)
            else:
                clipped = np.zeros((0, flat.size))
            noisy = aggregate_and_noise(clipped, sigma, C, N_expected, rng.child("noise", step))
            delta, state = dp_adam_step(state, noisy)
            flat = flat + delta
            if not np.all(np.isfinite(flat)):
                raise DivergenceError(step)
            params = ModelParams.from_flat(flat, params.dim, params.hidden, params.classes)
            step += 1
        eps = privacy.accounted_epsilon(steps=step) if privacy.is_private else accountant.NONPRIVATE
        eps_per_epoch.append(eps)
        loss_per_epoch.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        if on_epoch_end is not None:
            on_epoch_end(epoch, params, eps)
    return TrainResult(params, eps_per_epoch, loss_per_epoch, step)
