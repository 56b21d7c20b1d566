import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lmdpinn.autodiff import (
    DomainError,
    GradientTape,
    Jet,
    NonFiniteError,
    Tensor,
    backward,
    first_derivative,
    second_derivative,
    seed_inputs,
)
from lmdpinn.mlp import NetworkParams, ScalingSpec, forward, forward_reference, init_glorot

finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_seeded_input_is_identity():
    x, *_ = seed_inputs(0.5, 0.0, 0.0, 0.0)
    assert first_derivative(x, "x") == 1.0
    assert second_derivative(x, "x") == 0.0
    assert first_derivative(x, "y") == 0.0


def test_square():
    x, *_ = seed_inputs(3.0, 0.0, 0.0, 0.0)
    f = x * x
    assert first_derivative(f, "x") == 6.0
    assert second_derivative(f, "x") == 2.0


def test_exp_of_2x():
    x, *_ = seed_inputs(0.1, 0.0, 0.0, 0.0)
    f = (x * 2.0).exp()
    assert first_derivative(f, "x") == pytest.approx(2 * math.exp(0.2), rel=1e-12)
    assert second_derivative(f, "x") == pytest.approx(4 * math.exp(0.2), rel=1e-12)


def test_sum_and_product_rules():
    x, y, _, _ = seed_inputs(0.0, 2.0, 0.0, 0.0)
    assert first_derivative(x + y, "x") == 1.0
    assert first_derivative(x.sin() * y, "x") == 2.0


def test_cube_and_constant():
    x, *_ = seed_inputs(2.0, 0.0, 0.0, 0.0)
    assert second_derivative(x**3, "x") == pytest.approx(12.0, rel=1e-15)
    c = Jet.constant(7.0)
    assert first_derivative(c, "x") == 0.0
    assert second_derivative(c, "t") == 0.0


def test_unknown_input_name():
    x, *_ = seed_inputs(1.0, 0.0, 0.0, 0.0)
    with pytest.raises(KeyError, match="not seeded"):
        first_derivative(x, "w")
    with pytest.raises(KeyError):
        second_derivative(x, "q")


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_seed_rejected(bad):
    with pytest.raises(DomainError):
        seed_inputs(0.0, bad, 0.0, 0.0)


@given(x0=finite, a=finite, b=finite)
def test_composition_against_closed_form(x0, a, b):
    # f = tanh(a x) * exp(b x) + x^2
    x, *_ = seed_inputs(x0, 0.0, 0.0, 0.0)
    f = (x * a).tanh() * (x * b).exp() + x * x
    th = math.tanh(a * x0)
    e = math.exp(b * x0)
    s2 = 1 - th * th
    d1 = a * s2 * e + th * b * e + 2 * x0
    d2 = -2 * a * a * th * s2 * e + 2 * a * b * s2 * e + th * b * b * e + 2
    assert first_derivative(f, "x") == pytest.approx(d1, rel=1e-12, abs=1e-12)
    assert second_derivative(f, "x") == pytest.approx(d2, rel=1e-12, abs=1e-12)


@given(x0=finite, y0=finite, a=finite, b=finite)
def test_linearity(x0, y0, a, b):
    x, y, _, _ = seed_inputs(x0, y0, 0.0, 0.0)
    f = (x * y).sin()
    g = x.exp() * y
    combo = f * a + g * b
    for name in ("x", "y"):
        want1 = a * first_derivative(f, name) + b * first_derivative(g, name)
        want2 = a * second_derivative(f, name) + b * second_derivative(g, name)
        assert first_derivative(combo, name) == pytest.approx(want1, rel=1e-12, abs=1e-12)
        assert second_derivative(combo, name) == pytest.approx(want2, rel=1e-12, abs=1e-12)


@given(x0=finite, c=st.floats(-1e6, 1e6))
def test_second_derivative_ignores_additive_constant(x0, c):
    x, *_ = seed_inputs(x0, 0.0, 0.0, 0.0)
    g = x.sigmoid() * x.cos()
    assert second_derivative(g + c, "x") == second_derivative(g, "x")


def test_quotient_rule():
    x, y, _, _ = seed_inputs(1.5, 0.5, 0.0, 0.0)
    f = y / x
    assert first_derivative(f, "x") == pytest.approx(-0.5 / 1.5**2, rel=1e-14)
    assert second_derivative(f, "x") == pytest.approx(2 * 0.5 / 1.5**3, rel=1e-14)


def test_backward_sum_of_squares(rng):
    w = Tensor(rng.normal(size=7), requires_grad=True)
    (g,) = [backward((w * w).sum(), [w])]
    np.testing.assert_array_equal(g, 2 * w.value)


def test_unused_parameter_gets_zero_gradient(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    g = backward((w * w).sum(), [w, b])
    np.testing.assert_array_equal(g[3:], 0.0)


def test_two_backward_passes_agree(rng):
    w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    v = Tensor(rng.normal(size=(5, 3)))
    loss = ((v @ w).tanh() * (v @ w).sigmoid()).mean()
    tape = GradientTape(loss)
    first = tape.gradient([w])[0]
    second = tape.gradient([w])[0]
    np.testing.assert_array_equal(first, second)


def test_non_finite_loss_names_the_operation():
    w = Tensor(np.array([1e200]), requires_grad=True)
    with np.errstate(over="ignore"):
        loss = ((w * w) * w).sum()
    with pytest.raises(NonFiniteError) as info:
        backward(loss, [w])
    assert info.value.op is not None


def test_log_domain_error_is_reported():
    w = Tensor(np.array([-1.0]), requires_grad=True)
    with np.errstate(invalid="ignore"):
        loss = w.log().sum()
    with pytest.raises(NonFiniteError, match="log"):
        backward(loss, [w])


SCALING = ScalingSpec((0.0, 0.0, 0.0, 0.0), (10e-3, 4e-3, 2e-3, 1.0))


def _point(rng):
    hi = np.array(SCALING.upper)
    return rng.uniform(0.1, 0.9, size=4) * hi


@pytest.mark.parametrize("seed", range(5))
def test_mlp_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = init_glorot(seed)
    p = _point(rng)
    T = forward(params, SCALING, *p)
    span = np.array(SCALING.upper)
    for axis, name in enumerate("xyzt"):
        def f(delta):
            q = p.copy()
            q[axis] += delta
            return forward(params, SCALING, *q).value.value

        # step chosen relative to the input span (normalized step ~1e-4..1e-5)
        best = np.inf
        for hn in (1e-4, 3e-5, 1e-5):
            h = hn * span[axis]
            fd = (f(h) - f(-h)) / (2 * h)
            best = min(best, abs(fd - first_derivative(T, name)) / abs(first_derivative(T, name)))
        assert best < 1e-6, name
        h = 1e-3 * span[axis]
        fd2 = (f(h) - 2 * f(0.0) + f(-h)) / h**2
        assert fd2 == pytest.approx(second_derivative(T, name), rel=1e-4)


def test_fused_and_reference_paths_agree(rng):
    params = init_glorot(3)
    pts = np.array([_point(rng) for _ in range(16)])
    a = forward(params, SCALING, *pts.T)
    b = forward_reference(params, SCALING, *pts.T)
    np.testing.assert_allclose(a.value.value, b.value.value, rtol=1e-13)
    np.testing.assert_allclose(a.first.value, b.first.value, rtol=1e-10, atol=1e-8)
    np.testing.assert_allclose(a.second.value, b.second.value, rtol=1e-10, atol=1e-4)


def test_derivatives_do_not_mutate_parameters(rng):
    params = init_glorot(4)
    before = params.flatten().copy()
    leaves = params.as_tensors()
    T = forward(leaves, SCALING, *_point(rng))
    backward(T.d2("x") + T.d("t"), leaves)
    np.testing.assert_array_equal(params.flatten(), before)
    np.testing.assert_array_equal(NetworkParams.unflatten(np.concatenate([l.value.ravel() for l in leaves])).flatten(), before)
