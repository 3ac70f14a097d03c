"""Independent reference implementations used by the tests."""

import math

import numpy as np


def loop_mlp(widths, activation, params, x):
    """Scalar-loop feed-forward pass, no numpy linear algebra."""
    offset = 0
    h = [float(v) for v in x]
    n_layers = len(widths) - 1
    for layer in range(n_layers):
        a, b = widths[layer], widths[layer + 1]
        W = params[offset : offset + a * b]
        bias = params[offset + a * b : offset + a * b + b]
        offset += a * b + b
        out = []
        for j in range(b):
            z = bias[j]
            for i in range(a):
                z += h[i] * W[i * b + j]
            if layer < n_layers - 1:
                z = math.tanh(z) if activation == "tanh" else z / (1.0 + math.exp(-z))
            out.append(z)
        h = out
    return h


def central_fd(f, x, axis, order, h):
    """Central finite difference of order 1..3 along one coordinate."""
    e = np.zeros_like(x)
    e[axis] = h
    if order == 1:
        return (f(x + e) - f(x - e)) / (2 * h)
    if order == 2:
        return (f(x + e) - 2 * f(x) + f(x - e)) / h**2
    if order == 3:
        return (f(x + 2 * e) - 2 * f(x + e) + 2 * f(x - e) - f(x - 2 * e)) / (2 * h**3)
    raise ValueError(order)


def mixed_fd(f, x, alpha, h):
    """Mixed partial by nesting first/second central differences."""
    axes = [i for i, a in enumerate(alpha) for _ in range(a)]

    def nest(g, remaining):
        if not remaining:
            return g
        ax = remaining[0]

        def d(y):
            e = np.zeros_like(y)
            e[ax] = h
            return (g(y + e) - g(y - e)) / (2 * h)

        return nest(d, remaining[1:])

    return nest(f, axes)(x)


def grad_fd(f, p, h=1e-6, idx=None):
    idx = range(len(p)) if idx is None else idx
    out = []
    for i in idx:
        e = np.zeros_like(p)
        e[i] = h
        out.append((f(p + e) - f(p - e)) / (2 * h))
    return np.array(out)


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def adam_reference(theta, grad_fn, steps, eta=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam written element by element."""
    theta = [float(v) for v in theta]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    traj = []
    for t in range(1, steps + 1):
        g = grad_fn(np.array(theta))
        for i in range(len(theta)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            theta[i] -= eta * mh / (math.sqrt(vh) + eps)
        traj.append(list(theta))
    return np.array(traj)
