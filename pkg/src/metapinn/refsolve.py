"""Reference solutions: analytic formulas and a Fourier pseudo-spectral method of lines.

Spatial derivatives are taken in Fourier space on a uniform periodic grid,
products are formed pointwise, and the resulting ODE system is advanced with
an embedded Dormand-Prince 5(4) pair under a PI step-size controller.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .problems import PdeProblem


class IntegrationError(RuntimeError):
    def __init__(self, message, t_reached):
        super().__init__(f"{message} (reached t = {t_reached:.6g})")
        self.t_reached = t_reached


@dataclass(frozen=True)
class PeriodicGrid:
    n: int
    x_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 16, got {self.n}")
        if not self.x_range[0] < self.x_range[1]:
            raise ValueError("empty x range")

    @property
    def length(self) -> float:
        return self.x_range[1] - self.x_range[0]

    @property
    def nodes(self) -> np.ndarray:
        return self.x_range[0] + self.length * np.arange(self.n) / self.n

    @property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers of the rfft modes."""
        return 2.0 * np.pi / self.length * np.arange(self.n // 2 + 1)


@dataclass
class Field:
    grid: PeriodicGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.n,):
            raise ValueError("field values must match the grid size")


@dataclass
class IntegratorConfig:
    rtol: float = 1e-9
    atol: float = 1e-9
    initial_dt: float = 1e-4
    max_steps: int = 2_000_000

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")


def _spectral_multiplier(grid: PeriodicGrid, order: int) -> np.ndarray:
    mult = (1j * grid.wavenumbers) ** order
    if order % 2:
        mult[-1] = 0.0  # the Nyquist mode has no odd derivative on the grid
    return mult


def spectral_derivative(field: Field, order: int) -> Field:
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    values = np.fft.irfft(_spectral_multiplier(field.grid, order) * np.fft.rfft(field.values), n=field.grid.n)
    return Field(field.grid, values, field.time)


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


def _dealias_mask(grid):
    m = np.arange(grid.n // 2 + 1)
    return (m < grid.n / 3.0).astype(np.float64)


def make_rhs(problem: PdeProblem, grid: PeriodicGrid, dealias: bool = False) -> Callable:
    """u_t as a function of (t, u) for the semi-discrete problem."""
    n = grid.n
    d1 = _spectral_multiplier(grid, 1)
    mask = _dealias_mask(grid) if dealias else None

    def truncate(v_hat):
        # Galerkin truncation: modes above 2/3 of Nyquist get no forcing at all,
        # which also removes the stiffest dispersive eigenvalues
        return v_hat if mask is None else v_hat * mask

    def nonlinear(u_hat):
        # u u_x = (u^2 / 2)_x in conservative form
        u = np.fft.irfft(u_hat, n=n)
        return d1 * np.fft.rfft(0.5 * u * u)

    if problem.name == "advection":
        c = problem.params["c"]
        lin = -c * d1

        def rhs(t, u):
            return np.fft.irfft(lin * np.fft.rfft(u), n=n)

    elif problem.name == "kdv":
        lin = problem.params["nu"] * _spectral_multiplier(grid, 3)

        def rhs(t, u):
            u_hat = np.fft.rfft(u)
            return np.fft.irfft(truncate(lin * u_hat - nonlinear(u_hat)), n=n)

    elif problem.name == "burgers":
        lin = problem.params["nu"] * _spectral_multiplier(grid, 2)

        def rhs(t, u):
            u_hat = np.fft.rfft(u)
            return np.fft.irfft(truncate(lin * u_hat - nonlinear(u_hat)), n=n)

    else:
        raise ValueError(f"no spectral solver for {problem.name!r}")
    return rhs


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)
# ---------------------------------------------------------------------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

# PI controller gains for an order-4 error estimate
_K_I = 0.7 / 5.0
_K_P = 0.4 / 5.0
_SAFETY = 0.9
_MIN_FACTOR, _MAX_FACTOR = 0.2, 5.0


def dopri54(rhs: Callable, y0, t_samples: Sequence[float], cfg: IntegratorConfig, t0: float = 0.0):
    """Integrate y' = rhs(t, y) from t0, returning y at every time in ``t_samples``.

    Steps are shortened to land exactly on the requested times.
    """
    t_samples = np.asarray(t_samples, dtype=np.float64)
    if np.any(np.diff(t_samples) < 0) or (len(t_samples) and t_samples[0] < t0):
        raise ValueError("sample times must be ascending and not before t0")
    y = np.array(y0, dtype=np.float64)
    t = float(t0)
    h = cfg.initial_dt
    err_prev = 1.0
    k1 = rhs(t, y)
    out = []
    steps = 0
    for target in t_samples:
        while t < target:
            if steps >= cfg.max_steps:
                raise IntegrationError("maximum number of steps exceeded", t)
            if h < 1e-14 * max(1.0, abs(t)):
                raise IntegrationError("step size underflow", t)
            h_try = min(h, target - t)
            last = h_try == target - t
            ks = [k1]
            for i in range(1, 7):
                yi = y + h_try * sum(a * k for a, k in zip(_A[i], ks))
                ks.append(rhs(t + _C[i] * h_try, yi))
            y_new = y + h_try * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
            err_vec = h_try * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
            steps += 1
            if not np.isfinite(err):
                h = h_try * _MIN_FACTOR
                continue
            if err <= 1.0:
                t = target if last else t + h_try
                y = y_new
                k1 = ks[6]  # first-same-as-last
                factor = _SAFETY * max(err, 1e-10) ** (-_K_I) * err_prev**_K_P
                err_prev = max(err, 1e-4)
                # a step shortened to hit a sample time should not shrink the next one
                h = max(h, h_try) if last else h_try
                h *= min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            else:
                h = h_try * max(_MIN_FACTOR, _SAFETY * err ** (-1.0 / 5.0))
        out.append(y.copy())
    return out


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def integrate(problem: PdeProblem, u0: Field, t_samples, cfg: Optional[IntegratorConfig] = None, dealias: bool = False):
    """Fields at each sample time for advection, KdV or Burgers on a periodic grid."""
    cfg = IntegratorConfig() if cfg is None else cfg
    t_samples = np.asarray(t_samples, dtype=np.float64)
    tf = problem.domain.t_final
    if tf is not None and len(t_samples) and (t_samples[0] < 0 or t_samples[-1] > tf + 1e-12):
        raise ValueError(f"sample times must lie in [0, {tf}]")
    rhs = make_rhs(problem, u0.grid, dealias)
    y0 = u0.values
    if dealias:
        y0 = np.fft.irfft(np.fft.rfft(y0) * _dealias_mask(u0.grid), n=u0.grid.n)
    states = dopri54(rhs, y0, t_samples, cfg, t0=u0.time)
    return [Field(u0.grid, y, float(t)) for y, t in zip(states, t_samples)]


def initial_field(problem: PdeProblem, n: int) -> Field:
    grid = PeriodicGrid(n, tuple(problem.domain.x_ranges[0]))
    return Field(grid, problem.ic(grid.nodes), 0.0)


DEFAULT_N = {"kdv": 256, "burgers": 2048, "advection": 128}


def solve_reference(problem: PdeProblem, t_samples, n: Optional[int] = None, cfg: Optional[IntegratorConfig] = None, dealias: bool = False):
    n = DEFAULT_N.get(problem.name, 256) if n is None else n
    return integrate(problem, initial_field(problem, n), t_samples, cfg, dealias)


def trig_interpolate(field: Field, x) -> np.ndarray:
    """Band-limited interpolant of the grid values at arbitrary x."""
    grid = field.grid
    n = grid.n
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    coeffs = np.fft.rfft(field.values) / n
    weights = np.full(n // 2 + 1, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    phase = np.outer(x - grid.x_range[0], grid.wavenumbers)
    # Nyquist mode contributes cos only
    terms = weights * (coeffs.real * np.cos(phase) - coeffs.imag * np.sin(phase))
    return terms.sum(axis=1)


def evaluate_at(fields: Sequence[Field], t, x):
    """u_ref(t, x): trigonometric in x, cubic spline in t across the saved fields."""
    times = np.array([f.time for f in fields])
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if np.any(t_arr < times[0] - 1e-12) or np.any(t_arr > times[-1] + 1e-12):
        raise ValueError(f"t outside the saved range [{times[0]}, {times[-1]}]")
    t_arr, x_arr = np.broadcast_arrays(t_arr, x_arr)
    grid = fields[0].grid
    lo, length = grid.x_range[0], grid.length
    xi = (x_arr - lo) / length * grid.n
    node = np.rint(xi)
    on_node = np.abs(xi - node) < 1e-9
    out = np.empty(t_arr.shape)
    profiles = np.empty((len(fields), t_arr.size))
    for j, f in enumerate(fields):
        vals = trig_interpolate(f, x_arr.ravel())
        idx = np.mod(node.ravel().astype(int), grid.n)
        vals = np.where(on_node.ravel(), f.values[idx], vals)
        profiles[j] = vals
    exact_t = np.isclose(t_arr.ravel()[None, :], times[:, None], rtol=0, atol=1e-12)
    if len(fields) > 1:
        spline = CubicSpline(times, profiles, axis=0)
        interp = spline(t_arr.ravel())
        cols = np.arange(t_arr.size)
        interp = interp[cols, cols] if interp.ndim == 2 else interp
    else:
        interp = profiles[0]
    hit = exact_t.any(axis=0)
    hit_rows = exact_t.argmax(axis=0)
    vals = np.where(hit, profiles[hit_rows, np.arange(t_arr.size)], interp)
    out = vals.reshape(t_arr.shape)
    return out if np.ndim(t) or np.ndim(x) else float(out.ravel()[0])


def analytic_reference(problem: PdeProblem) -> Callable:
    if problem.exact is None:
        raise ValueError(f"{problem.name} has no analytic solution")
    return problem.exact


def write_fields_csv(fields: Sequence[Field], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u_ref"])
        for f in fields:
            for x, u in zip(f.grid.nodes, f.values):
                w.writerow([repr(f.time), repr(float(x)), repr(float(u))])
