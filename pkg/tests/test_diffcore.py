import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metapinn import diffcore as dc
from oracles import central_fd, grad_fd, loop_mlp, mixed_fd, rel_err


def richardson(fd, h):
    # two central differences combined to O(h^4)
    return (4 * fd(h / 2) - fd(h)) / 3


def random_net(seed, n_in=2, hidden=(8, 8), activation="tanh", scale=1.0):
    spec = dc.MlpSpec((n_in, *hidden, 1), activation)
    rng = np.random.default_rng(seed)
    return spec, scale * rng.standard_normal(spec.n_params) / np.sqrt(max(hidden))


# ---------------------------------------------------------------------------
# MlpSpec / init / forward
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ValueError):
        dc.MlpSpec((2, 1))
    with pytest.raises(ValueError):
        dc.MlpSpec((2, 0, 1))
    with pytest.raises(ValueError):
        dc.MlpSpec((2, 3, 1), "relu")


def test_optimizer_mlp_param_count():
    assert dc.MlpSpec((21, 32, 32, 3), "swish").n_params == (21 * 32 + 32) + (32 * 32 + 32) + (32 * 3 + 3) == 1859


def test_head_variance_statistics():
    spec = dc.MlpSpec((4, 64, 64, 32))
    p = dc.mlp_init(spec, 3, head_variance=1e-3)
    w, _, b = spec.layer_slices()[-1]
    head = np.concatenate([p[w], p[b]])
    assert len(head) >= 1000
    assert abs(np.var(head) / 1e-3 - 1) < 0.3


def test_zero_head_variance_gives_zero_output_layer():
    spec = dc.MlpSpec((3, 5, 2))
    p = dc.mlp_init(spec, 0, head_variance=0.0)
    w, _, b = spec.layer_slices()[-1]
    assert not p[w].any() and not p[b].any()


def test_init_deterministic_and_zero_biases():
    spec = dc.MlpSpec((3, 20, 20, 1))
    a, b = dc.mlp_init(spec, 11), dc.mlp_init(spec, 11)
    assert np.array_equal(a, b)
    for _, _, bias in spec.layer_slices():
        assert not a[bias].any()


def test_zero_params_zero_output():
    spec = dc.MlpSpec((3, 7, 7, 2))
    assert not dc.mlp_forward(spec, np.zeros(spec.n_params), np.array([0.3, -2.0, 5.0])).any()


def test_identity_tanh_net_at_zero():
    spec = dc.MlpSpec((1, 1, 1))
    params = np.array([1.0, 0.0, 1.0, 0.0])
    assert dc.mlp_forward(spec, params, np.array([0.0]))[0] == 0.0


@pytest.mark.parametrize("activation", ["tanh", "swish"])
def test_forward_matches_loop_oracle(activation):
    spec = dc.MlpSpec((2, 20, 1), activation)
    p = dc.mlp_init(spec, 5, head_variance=0.5)
    rng = np.random.default_rng(0)
    for x in rng.uniform(-2, 2, (20, 2)):
        assert abs(dc.mlp_forward(spec, p, x)[0] - loop_mlp(spec.layer_widths, activation, p, x)[0]) <= 1e-14


def test_forward_dimension_mismatch():
    spec = dc.MlpSpec((2, 4, 1))
    with pytest.raises(ValueError):
        dc.mlp_forward(spec, np.zeros(spec.n_params), np.zeros(3))
    with pytest.raises(ValueError):
        dc.mlp_forward(spec, np.zeros(spec.n_params + 1), np.zeros(2))


# ---------------------------------------------------------------------------
# input derivatives
# ---------------------------------------------------------------------------


def test_tanh_first_derivative_is_weight():
    w = 1.7
    spec = dc.MlpSpec((1, 1, 1))
    params = np.array([w, 0.0, 1.0, 0.0])
    assert dc.input_derivative(spec, params, np.array([0.0]), (1,)) == pytest.approx(w, abs=1e-15)


def test_tanh_third_derivative_at_zero():
    spec = dc.MlpSpec((1, 1, 1))
    params = np.array([1.0, 0.0, 1.0, 0.0])
    assert dc.input_derivative(spec, params, np.array([0.0]), (3,)) == pytest.approx(-2.0, abs=1e-14)


def test_order_four_rejected():
    spec, p = random_net(0)
    with pytest.raises(dc.UnsupportedOrderError):
        dc.input_derivative(spec, p, np.zeros(2), (2, 2))


def _fd_derivative(spec, p, x, alpha):
    f = lambda y: dc.mlp_forward(spec, p, y)[0]
    k = sum(alpha)
    if max(alpha) == k:
        axis = alpha.index(k)
        h = 1e-2 if k == 3 else 1e-3
        return richardson(lambda hh: central_fd(f, x, axis, k, hh), h)
    return richardson(lambda hh: mixed_fd(f, x, alpha, hh), 1e-2)


MULTI_INDICES = [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)]


@pytest.mark.parametrize("activation", ["tanh", "swish"])
def test_derivatives_match_finite_differences(activation):
    rng = np.random.default_rng(42)
    for seed in range(10):
        spec, p = random_net(seed, activation=activation)
        x = rng.uniform(-1, 1, 2)
        for alpha in MULTI_INDICES:
            exact = dc.input_derivative(spec, p, x, alpha)
            approx = _fd_derivative(spec, p, x, alpha)
            assert abs(exact - approx) <= 1e-4 * max(abs(exact), 1e-2), (seed, alpha, exact, approx)


def test_batched_derivative_matches_single():
    spec, p = random_net(1, n_in=3)
    xs = np.random.default_rng(1).uniform(-1, 1, (6, 3))
    batch = dc.input_derivative(spec, p, xs, (1, 0, 2))
    single = [dc.input_derivative(spec, p, x, (1, 0, 2)) for x in xs]
    assert np.allclose(batch, single, rtol=0, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(-3, 3))
def test_derivative_linear_in_output_layer(seed, c):
    spec, p = random_net(seed)
    q = np.random.default_rng(seed + 1).standard_normal(spec.n_params)
    w, _, b = spec.layer_slices()[-1]
    p2 = p.copy()
    p2[w] = q[w]
    p2[b] = q[b]
    mix = p.copy()
    mix[w] = p[w] + c * p2[w]
    mix[b] = p[b] + c * p2[b]
    x = np.array([0.2, -0.4])
    for alpha in [(0, 0), (1, 0), (1, 1), (0, 3)]:
        lhs = dc.input_derivative(spec, mix, x, alpha)
        rhs = dc.input_derivative(spec, p, x, alpha) + c * dc.input_derivative(spec, p2, x, alpha)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------------------
# parameter gradients
# ---------------------------------------------------------------------------


def test_quadratic_gradient_is_identity():
    theta = np.array([1.0, -2.0, 3.5])
    assert np.allclose(dc.param_gradient(lambda p: 0.5 * dc.tsum(p * p), theta), theta, rtol=0, atol=0)


def test_constant_loss_zero_gradient():
    theta = np.ones(4)
    assert not dc.param_gradient(lambda p: dc.tsum(p * 0.0) + 3.0, theta).any()


def test_non_finite_loss_propagates():
    value, grad = dc.value_and_grad(lambda p: dc.tsum(p) * np.inf, np.ones(3))
    assert not math.isfinite(value)
    assert not np.all(np.isfinite(grad))


def test_nested_gradient_through_third_derivative():
    spec, p = random_net(7)
    x = np.random.default_rng(7).uniform(-1, 1, (5, 2))

    def loss(params):
        u = dc.input_derivative(spec, params, x, (0, 0))
        u3 = dc.input_derivative(spec, params, x, (0, 3))
        u11 = dc.input_derivative(spec, params, x, (1, 1))
        r = u * u3 + u11
        return dc.mean(r * r)

    g = dc.param_gradient(loss, p)
    fd = grad_fd(lambda q: float(dc.value_of(loss(q))), p)
    assert rel_err(g, fd, floor=1e-6) < 1e-4


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), activation=st.sampled_from(["tanh", "swish"]))
def test_forward_gradient_matches_fd(seed, activation):
    spec, p = random_net(seed, n_in=3, hidden=(5, 4), activation=activation)
    x = np.random.default_rng(seed).uniform(-1, 1, (4, 3))
    loss = lambda q: dc.mean(dc.mlp_forward(spec, q, x) ** 2)
    g = dc.param_gradient(loss, p)
    fd = grad_fd(lambda q: float(dc.value_of(loss(q))), p)
    assert np.max(np.abs(g - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_determinism_bit_identical():
    spec, p = random_net(3)
    x = np.array([[0.1, 0.2], [0.3, -0.5]])
    a = dc.input_derivative(spec, p, x, (2, 1))
    b = dc.input_derivative(spec, p, x, (2, 1))
    assert np.array_equal(a, b)
