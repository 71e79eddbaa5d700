import math

import numpy as np
import pytest

from histdp.loss import (
    PROB_FLOOR,
    CbFocalConfig,
    batch_loss_and_grad,
    cb_focal_grad,
    cb_focal_loss,
)
from histdp.numerics import finite_diff_gradient


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def test_plain_cross_entropy_special_case():
    cfg = CbFocalConfig()
    probs = np.array([0.2, 0.5, 0.3])
    assert cb_focal_loss(probs, 1, cfg) == pytest.approx(-math.log(0.5), rel=1e-15)


def test_focal_term_downweights_easy_examples():
    cfg = CbFocalConfig(gamma=2.0)
    easy = cb_focal_loss(np.array([0.05, 0.95]), 1, cfg)
    hard = cb_focal_loss(np.array([0.6, 0.4]), 1, cfg)
    # focal factor (1-p)^2 shrinks the confident example far below CE
    assert easy == pytest.approx(0.05**2 * -math.log(0.95), rel=1e-12)
    assert hard == pytest.approx(0.6**2 * -math.log(0.4), rel=1e-12)
    assert easy < hard


def test_class_balanced_weight_formula():
    cfg = CbFocalConfig(beta=0.9, class_counts=(10, 1))
    # hand-computed effective-number weights
    assert cfg.weight(0) == pytest.approx(0.1 / (1 - 0.9**10), rel=1e-12)
    assert cfg.weight(1) == pytest.approx(0.1 / (1 - 0.9), rel=1e-12)
    assert cfg.weight(1) > cfg.weight(0)


def test_golden_extended_precision_value():
    # frozen from a 50-digit mpmath evaluation of the formula at
    # beta=0.999, gamma=2, n_y=1000, p_y=0.5
    cfg = CbFocalConfig(beta=0.999, gamma=2.0, class_counts=(1000,))
    got = cb_focal_loss(np.array([0.5, 0.5]), 0, cfg)
    assert got == pytest.approx(2.7405589320181286689e-4, rel=1e-13)


def test_prob_floor_keeps_loss_finite():
    cfg = CbFocalConfig(gamma=2.0)
    val = cb_focal_loss(np.array([1.0, 0.0]), 1, cfg)
    assert math.isfinite(val)
    assert val == pytest.approx(-math.log(PROB_FLOOR), rel=1e-9)


def test_grad_matches_finite_differences():
    gen = np.random.default_rng(42)
    for beta, gamma in [(0.0, 0.0), (0.0, 2.0), (0.9, 1.0), (0.999, 2.0), (0.5, 3.0)]:
        cfg = CbFocalConfig(beta=beta, gamma=gamma, class_counts=(50, 200, 1000))
        for _ in range(4):
            z = gen.standard_normal(3)
            label = int(gen.integers(3))
            analytic = cb_focal_grad(softmax(z), label, cfg)
            numeric = finite_diff_gradient(
                lambda zz: cb_focal_loss(softmax(zz), label, cfg), z, 1e-6
            )
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-9)


def test_grad_zero_when_prediction_saturated():
    cfg = CbFocalConfig(gamma=2.0)
    g = cb_focal_grad(np.array([0.0, 1.0]), 1, cfg)
    assert np.all(g == 0.0)


def test_grad_gamma_zero_is_softmax_ce_grad():
    cfg = CbFocalConfig()
    z = np.array([0.3, -1.2, 0.7])
    p = softmax(z)
    g = cb_focal_grad(p, 2, cfg)
    expect = p.copy()
    expect[2] -= 1.0
    np.testing.assert_allclose(g, expect, rtol=1e-12)


def test_batch_matches_scalar_path():
    gen = np.random.default_rng(3)
    cfg = CbFocalConfig(beta=0.99, gamma=2.0, class_counts=(30, 300))
    probs = np.apply_along_axis(softmax, 1, gen.standard_normal((16, 2)))
    labels = gen.integers(2, size=16)
    losses, grads = batch_loss_and_grad(probs, labels, cfg)
    for i in range(16):
        assert losses[i] == pytest.approx(cb_focal_loss(probs[i], labels[i], cfg), rel=1e-12)
        np.testing.assert_allclose(grads[i], cb_focal_grad(probs[i], labels[i], cfg), rtol=1e-12)


def test_batch_handles_saturated_rows():
    cfg = CbFocalConfig(gamma=2.0)
    probs = np.array([[0.0, 1.0], [0.5, 0.5]])
    losses, grads = batch_loss_and_grad(probs, np.array([1, 0]), cfg)
    assert losses[0] == 0.0
    assert np.all(grads[0] == 0.0)
    assert losses[1] > 0


def test_config_validation():
    with pytest.raises(ValueError):
        CbFocalConfig(beta=1.0)
    with pytest.raises(ValueError):
        CbFocalConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        CbFocalConfig(class_counts=(5, 0))
    cfg = CbFocalConfig(class_counts=(5, 5))
    with pytest.raises(ValueError):
        cfg.weight(2)
    with pytest.raises(ValueError):
        cb_focal_loss(np.array([0.5, 0.5]), 7, cfg)
