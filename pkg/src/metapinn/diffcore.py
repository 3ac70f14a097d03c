"""Small MLPs with exact input derivatives (up to third order) and parameter gradients.

Input derivatives are obtained by pushing truncated Taylor series through the
network (forward mode, one series per direction). Parameter gradients come from
a minimal reverse-mode tape over numpy arrays, so a loss assembled from those
series can itself be differentiated with respect to the weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

MAX_ORDER = 3


class UnsupportedOrderError(ValueError):
    pass


# ---------------------------------------------------------------------------
# reverse-mode tape
# ---------------------------------------------------------------------------


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node of a reverse-mode tape. ``value`` is a float64 ndarray.

    ``backward_fn(g)`` maps the upstream gradient to one gradient per parent.
    """

    __slots__ = ("value", "parents", "backward_fn", "grad")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def backward(self, seed=None):
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor."""
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node.backward_fn is None:
                continue
            for p, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __pow__(self, k):
        if k == 2:
            return mul(self, self)
        raise NotImplementedError("only squaring is supported")


def value_of(x):
    return x.value if isinstance(x, Tensor) else x


def add(a, b):
    if not isinstance(b, Tensor):
        b_val = np.asarray(b, dtype=np.float64)
        return Tensor(a.value + b_val, (a,), lambda g: (_unbroadcast(g, a.shape),))
    if not isinstance(a, Tensor):
        return add(b, a)
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def neg(a):
    return Tensor(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    if not isinstance(b, Tensor):
        b_val = np.asarray(b, dtype=np.float64)
        return Tensor(a.value * b_val, (a,), lambda g: (_unbroadcast(g * b_val, a.shape),))
    if not isinstance(a, Tensor):
        return mul(b, a)
    av, bv = a.value, b.value
    return Tensor(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)),
    )


def reciprocal(a):
    out = 1.0 / a.value
    return Tensor(out, (a,), lambda g: (-g * out * out,))


def matmul(a, b):
    if not isinstance(a, Tensor):
        av = np.asarray(a, dtype=np.float64)
        return Tensor(av @ b.value, (b,), lambda g: (av.T @ g,))
    if not isinstance(b, Tensor):
        bv = np.asarray(b, dtype=np.float64)
        return Tensor(a.value @ bv, (a,), lambda g: (g @ bv.T,))
    av, bv = a.value, b.value
    return Tensor(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def tanh(a):
    if not isinstance(a, Tensor):
        return np.tanh(a)
    out = np.tanh(a.value)
    return Tensor(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    if not isinstance(a, Tensor):
        return _sigmoid(a)
    out = _sigmoid(a.value)
    return Tensor(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    if not isinstance(a, Tensor):
        return np.exp(a)
    out = np.exp(a.value)
    return Tensor(out, (a,), lambda g: (g * out,))


def tsum(a, axis=None):
    if not isinstance(a, Tensor):
        return np.sum(a, axis=axis)
    shape = a.shape
    if axis is None:
        return Tensor(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))
    return Tensor(
        np.sum(a.value, axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
    )


def mean(a, axis=None):
    n = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return tsum(a, axis) * (1.0 / n)


def reshape(a, shape):
    if not isinstance(a, Tensor):
        return np.reshape(a, shape)
    old = a.shape
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, idx):
    shape = a.shape

    fancy = isinstance(idx, (list, np.ndarray))

    def backward(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return Tensor(a.value[idx], (a,), backward)


def _sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# MLP definition
# ---------------------------------------------------------------------------

ACTIVATIONS = ("tanh", "swish")


@dataclass(frozen=True)
class MlpSpec:
    layer_widths: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3:
            raise ValueError("an MLP needs input, at least one hidden layer, and output widths")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_params(self) -> int:
        w = self.layer_widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))

    def layer_slices(self):
        """(weight slice, weight shape, bias slice) per layer, layer-major."""
        out = []
        offset = 0
        for a, b in zip(self.layer_widths[:-1], self.layer_widths[1:]):
            w = slice(offset, offset + a * b)
            bias = slice(w.stop, w.stop + b)
            out.append((w, (a, b), bias))
            offset = bias.stop
        return out

    def to_dict(self):
        return {"layer_widths": list(self.layer_widths), "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_widths"]), d["activation"])


def mlp_init(spec: MlpSpec, seed: int, head_variance: float | None = None) -> np.ndarray:
    """Glorot-uniform weights and zero biases; optionally a Normal(0, head_variance) output layer."""
    rng = np.random.default_rng(seed)
    params = np.zeros(spec.n_params)
    slices = spec.layer_slices()
    for i, (w, shape, b) in enumerate(slices):
        last = i == len(slices) - 1
        if last and head_variance is not None:
            std = math.sqrt(head_variance)
            params[w] = std * rng.standard_normal(shape[0] * shape[1])
            params[b] = std * rng.standard_normal(shape[1])
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[w] = rng.uniform(-limit, limit, size=shape[0] * shape[1])
    return params


def unflatten(spec: MlpSpec, params):
    """Split a flat parameter vector (array or Tensor) into [(W, b), ...]."""
    layers = []
    for w, shape, b in spec.layer_slices():
        layers.append((reshape(params[w], shape), params[b]))
    return layers


def _act(spec, x):
    if spec.activation == "tanh":
        return tanh(x)
    return x * sigmoid(x)


def mlp_forward(spec: MlpSpec, params, inputs):
    """Feed-forward evaluation. ``inputs`` is (n_in,) or (batch, n_in)."""
    x = inputs
    single = np.ndim(value_of(x)) == 1
    if single:
        x = reshape(x, (1, -1)) if isinstance(x, Tensor) else np.reshape(x, (1, -1))
    if np.shape(value_of(x))[-1] != spec.n_in:
        raise ValueError(f"expected input width {spec.n_in}, got {np.shape(value_of(x))[-1]}")
    if np.shape(value_of(params)) != (spec.n_params,):
        raise ValueError(f"expected {spec.n_params} parameters, got {np.shape(value_of(params))}")
    layers = unflatten(spec, params)
    for W, b in layers[:-1]:
        x = _act(spec, x @ W + b)
    W, b = layers[-1]
    y = x @ W + b
    if single:
        return y[0] if isinstance(y, Tensor) else y[0]
    return y


# ---------------------------------------------------------------------------
# Taylor-series propagation
# ---------------------------------------------------------------------------


def _act_derivatives(spec, x, order):
    """Activation value and its derivatives 1..order at x (tape-aware)."""
    if spec.activation == "tanh":
        f = tanh(x)
        d = [f]
        if order >= 1:
            d1 = 1.0 - f * f
            d.append(d1)
        if order >= 2:
            d.append(-2.0 * (f * d1))
        if order >= 3:
            d.append(-2.0 * (d1 * (1.0 - 3.0 * (f * f))))
        return d
    s = sigmoid(x)
    f = x * s
    d = [f]
    if order >= 1:
        q = s * (1.0 - s)
        d.append(s + x * q)
    if order >= 2:
        one_m2s = 1.0 - 2.0 * s
        d.append(2.0 * q + x * (q * one_m2s))
    if order >= 3:
        d.append(3.0 * (q * one_m2s) + x * (q - 6.0 * (q * q)))
    return d


def _compose(d, c):
    """Taylor coefficients of g(h(tau)) given g-derivatives d and coefficients c[1..] of h.

    Coefficients are normalised (k-th coefficient = k-th derivative / k!). ``None``
    entries stand for identically zero coefficients.
    """
    p = len(c)
    out = []
    c1 = c[0]
    c2 = c[1] if p >= 2 else None
    c3 = c[2] if p >= 3 else None
    # order 1
    out.append(None if c1 is None else d[1] * c1)
    if p >= 2:
        terms = []
        if c2 is not None:
            terms.append(d[1] * c2)
        if c1 is not None:
            terms.append(0.5 * (d[2] * (c1 * c1)))
        out.append(_sum_terms(terms))
    if p >= 3:
        terms = []
        if c3 is not None:
            terms.append(d[1] * c3)
        if c1 is not None and c2 is not None:
            terms.append(d[2] * (c1 * c2))
        if c1 is not None:
            terms.append((1.0 / 6.0) * (d[3] * (c1 * (c1 * c1))))
        out.append(_sum_terms(terms))
    return out


def _sum_terms(terms):
    if not terms:
        return None
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc


def mlp_jet(spec: MlpSpec, params, x0, series: Sequence[Sequence]):
    """Push truncated Taylor series through the network.

    ``x0`` is the (batch, n_in) base point. ``series`` holds, per direction, the
    list of input coefficients [c1, ..., cp] (p <= 3), each (batch, n_in) or
    ``None`` for zero. Returns ``(y0, out_series)`` where ``out_series[d][k-1]``
    is the k-th normalised Taylor coefficient of the output along direction d
    (multiply by k! to get the directional derivative). Works on arrays or on
    a Tensor of parameters.
    """
    for s in series:
        if len(s) > MAX_ORDER:
            raise UnsupportedOrderError(f"derivative order {len(s)} exceeds {MAX_ORDER}")
    layers = unflatten(spec, params)
    order = max((len(s) for s in series), default=0)
    h = x0
    coeffs = [list(s) for s in series]
    n_layers = len(layers)
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        zc = [[None if c is None else c @ W for c in s] for s in coeffs]
        if i == n_layers - 1:
            h, coeffs = z, zc
            break
        d = _act_derivatives(spec, z, order)
        h = d[0]
        coeffs = [_compose(d, s) for s in zc]
    return h, coeffs


def _zero_like_output(y0):
    return np.zeros_like(value_of(y0))


def directional_derivatives(spec, params, x0, direction, order):
    """Derivatives d^k u / d tau^k, k=1..order, of u(x0 + tau*direction)."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    v = np.broadcast_to(np.asarray(direction, dtype=np.float64), x0.shape)
    y0, (cs,) = mlp_jet(spec, params, x0, [[v] + [None] * (order - 1)])
    return [math.factorial(k + 1) * (c if c is not None else _zero_like_output(y0)) for k, c in enumerate(cs)]


def input_derivative(spec: MlpSpec, params, inputs, multi_index: Sequence[int]):
    """Exact mixed partial derivative of a scalar-output network.

    Pure derivatives use one Taylor series along the coordinate axis; mixed
    ones are recovered from directional derivatives via polarization.
    ``inputs`` may be a single point or a (batch, n_in) array.
    """
    alpha = tuple(int(a) for a in multi_index)
    if len(alpha) != spec.n_in or any(a < 0 for a in alpha):
        raise ValueError(f"multi-index {alpha} does not match input width {spec.n_in}")
    k = sum(alpha)
    if k > MAX_ORDER:
        raise UnsupportedOrderError(f"derivative order {k} exceeds {MAX_ORDER}")
    if spec.n_out != 1:
        raise ValueError("input_derivative needs a scalar-output network")
    single = np.ndim(inputs) == 1
    x0 = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if k == 0:
        out = mlp_forward(spec, params, x0)[:, 0]
        return out[0] if single else out

    axes = [i for i, a in enumerate(alpha) for _ in range(a)]
    eye = np.eye(spec.n_in)
    if len(set(axes)) == 1:
        out = directional_derivatives(spec, params, x0, eye[axes[0]], k)[-1][:, 0]
        return out[0] if single else out
    total = None
    # T(v1..vk) = 1/(k! 2^k) sum_eps (prod eps) D^k(sum eps_i v_i); fix eps_1 = +1 by oddness/evenness
    for signs in product((1.0, -1.0), repeat=k - 1):
        eps = (1.0,) + signs
        v = sum(e * eye[a] for e, a in zip(eps, axes))
        dk = directional_derivatives(spec, params, x0, v, k)[-1][:, 0]
        term = float(np.prod(eps)) * dk
        total = term if total is None else total + term
    total = total * (2.0 / (math.factorial(k) * 2**k))
    return total[0] if single else total


def param_gradient(loss_closure: Callable, params) -> np.ndarray:
    """Gradient of ``loss_closure(params)`` w.r.t. every entry of ``params``."""
    return value_and_grad(loss_closure, params)[1]


def value_and_grad(loss_closure: Callable, params):
    """Return (loss value, gradient). The closure receives a Tensor and may call
    mlp_forward / mlp_jet on it; non-finite losses yield non-finite gradients."""
    p = Tensor(np.array(params, dtype=np.float64))
    loss = loss_closure(p)
    if not isinstance(loss, Tensor):
        return float(loss), np.zeros_like(p.value)
    loss.backward()
    grad = p.grad if p.grad is not None else np.zeros_like(p.value)
    value = float(loss.value)
    if not math.isfinite(value):
        grad = np.full_like(grad, np.nan)
    return value, grad
