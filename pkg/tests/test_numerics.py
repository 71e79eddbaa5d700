import numpy as np
import pytest

from histdp.numerics import (
    NonFiniteError,
    RngStream,
    finite_diff_gradient,
    gaussian_sample,
    l2_norm,
)


def test_l2_norm_pythagorean():
    assert l2_norm([3.0, 4.0]) == 5.0


def test_l2_norm_zero():
    for n in (1, 5, 100):
        assert l2_norm(np.zeros(n)) == 0.0


def test_l2_norm_matches_independent_summation():
    gen = np.random.default_rng(7)
    v = gen.standard_normal(100)
    # independent oracle: explicit python-loop summation
    acc = 0.0
    for x in v:
        acc += float(x) * float(x)
    oracle = acc**0.5
    assert abs(l2_norm(v) - oracle) <= 1e-12 * oracle


def test_l2_norm_scaling_homogeneity():
    gen = np.random.default_rng(8)
    v = gen.standard_normal(37)
    for alpha in (-3.5, 0.0, 0.25, 7.0):
        assert l2_norm(alpha * v) == pytest.approx(abs(alpha) * l2_norm(v), rel=1e-12)


def test_l2_norm_rejects_nonfinite():
    with pytest.raises(NonFiniteError, match="non-finite tensor"):
        l2_norm([1.0, float("nan")])


def test_gaussian_zero_std_is_zero_tensor():
    out = gaussian_sample((4, 3), 0.0, RngStream(1))
    assert out.shape == (4, 3)
    assert np.all(out == 0.0)


def test_gaussian_negative_std_rejected():
    with pytest.raises(ValueError):
        gaussian_sample((2,), -1.0, RngStream(1))


def test_gaussian_moments():
    draws = gaussian_sample((10**6,), 2.0, RngStream(123, ("mc",)))
    assert abs(draws.mean()) < 0.02
    assert abs(draws.std() - 2.0) < 0.02


def test_gaussian_determinism():
    a = gaussian_sample((100,), 1.5, RngStream(5, ("x", 1)))
    b = gaussian_sample((100,), 1.5, RngStream(5, ("x", 1)))
    assert np.array_equal(a, b)


def test_gaussian_scaling_same_stream():
    s = RngStream(9, ("scale",))
    unit = gaussian_sample((50,), 1.0, s)
    scaled = gaussian_sample((50,), 3.0, s)
    assert np.array_equal(scaled, 3.0 * unit)


def test_streams_with_distinct_keys_differ():
    a = gaussian_sample((100,), 1.0, RngStream(5, (0,)))
    b = gaussian_sample((100,), 1.0, RngStream(5, (1,)))
    assert not np.array_equal(a, b)


def test_finite_diff_quadratic():
    g = finite_diff_gradient(lambda x: float(x @ x), np.array([1.0, 2.0]), 1e-6)
    assert np.allclose(g, [2.0, 4.0], atol=1e-6)


def test_finite_diff_constant():
    g = finite_diff_gradient(lambda x: 3.0, np.arange(5.0), 1e-5)
    assert np.all(g == 0.0)


def test_finite_diff_rejects_nonfinite_f():
    with pytest.raises(NonFiniteError):
        finite_diff_gradient(lambda x: float("nan"), np.ones(2), 1e-5)
