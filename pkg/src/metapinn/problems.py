"""The four benchmark initial/boundary value problems and collocation sampling.

Residuals act on a *jet*: a dict holding ``u`` and whichever derivatives the
equation needs (``u_t``, ``u_x``, ``u_xx``, ``u_xxx``, ``u_yy``). Entries may be
floats, arrays or tape Tensors; the residuals only use ``+``, ``-`` and ``*``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

PROBLEM_NAMES = ("advection", "poisson", "kdv", "burgers")


@dataclass(frozen=True)
class Domain:
    x_ranges: tuple[tuple[float, float], ...]
    periodic: tuple[bool, ...]
    t_range: Optional[tuple[float, float]] = None

    def __post_init__(self):
        for lo, hi in self.x_ranges:
            if not lo < hi:
                raise ValueError(f"empty interval [{lo}, {hi}]")
        if self.t_range is not None and not self.t_range[1] > self.t_range[0]:
            raise ValueError("final time must be positive")
        if len(self.periodic) != len(self.x_ranges):
            raise ValueError("one periodic flag per spatial dimension")

    @property
    def t_final(self):
        return None if self.t_range is None else self.t_range[1]

    def bounds(self):
        """(lo, hi) per point column: (t, x) for evolution problems, (x, y) otherwise."""
        cols = [] if self.t_range is None else [self.t_range]
        return cols + list(self.x_ranges)


@dataclass(frozen=True)
class BoundarySpec:
    kind: str  # "periodic_hard" or "dirichlet"
    dirichlet_value: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("periodic_hard", "dirichlet"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "dirichlet" and self.dirichlet_value is None:
            raise ValueError("dirichlet boundary needs dirichlet_value")


@dataclass(frozen=True)
class PdeProblem:
    """One benchmark problem.

    ``derivatives`` maps each point column (``"t"``, ``"x"``, ``"y"``) to the
    highest pure derivative order the residual uses along it.
    """

    name: str
    residual: Callable  # (points (B, 2), jet) -> residual values
    domain: Domain
    bc: BoundarySpec
    derivatives: dict
    ic: Optional[Callable] = None
    gamma_i: float = 1.0
    gamma_b: float = 0.0
    reference: str = "analytic"  # or "spectral"
    exact: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.gamma_i < 0 or self.gamma_b < 0:
            raise ValueError("loss weights must be non-negative")
        if self.max_derivative_order > 3:
            raise ValueError("residuals may use at most third derivatives")

    @property
    def max_derivative_order(self) -> int:
        return max(self.derivatives.values())

    @property
    def coords(self) -> tuple[str, ...]:
        return ("x", "y") if self.domain.t_range is None else ("t", "x")

    @property
    def is_evolution(self) -> bool:
        return self.domain.t_range is not None


PERIODIC_LINE = dict(x_ranges=((-1.0, 1.0),), periodic=(True,))


def _advection_residual(c):
    def residual(points, jet):
        return jet["u_t"] + c * jet["u_x"]

    return residual


def advection_problem(c: float = 1.0) -> PdeProblem:
    c = float(c)

    def exact(t, x):
        return np.cos(np.pi * (np.asarray(x) - c * np.asarray(t)))

    return PdeProblem(
        name="advection",
        residual=_advection_residual(c),
        domain=Domain(t_range=(0.0, 3.0), **PERIODIC_LINE),
        bc=BoundarySpec("periodic_hard"),
        derivatives={"t": 1, "x": 1},
        ic=lambda x: np.cos(np.pi * np.asarray(x)),
        gamma_i=1.0,
        reference="analytic",
        exact=exact,
        params={"c": c},
    )


def poisson_exact(x, y):
    x = np.asarray(x)
    y = np.asarray(y)
    return (0.1 * np.sin(2 * np.pi * x) + np.tanh(10 * x)) * np.sin(2 * np.pi * y)


def poisson_forcing(x, y):
    """Laplacian of ``poisson_exact`` (derived symbolically)."""
    x = np.asarray(x)
    y = np.asarray(y)
    th = np.tanh(10 * x)
    sech2 = 1.0 - th * th
    pi2 = np.pi**2
    return np.sin(2 * np.pi * y) * (
        -0.8 * pi2 * np.sin(2 * np.pi * x) - 200.0 * th * sech2 - 4.0 * pi2 * th
    )


def _poisson_residual(points, jet):
    points = np.asarray(points)
    return jet["u_xx"] + jet["u_yy"] - poisson_forcing(points[..., 0], points[..., 1])


def poisson_problem(gamma_b: float = 1000.0) -> PdeProblem:
    return PdeProblem(
        name="poisson",
        residual=_poisson_residual,
        domain=Domain(x_ranges=((-1.0, 1.0), (-1.0, 1.0)), periodic=(False, False)),
        bc=BoundarySpec("dirichlet", dirichlet_value=poisson_exact),
        derivatives={"x": 2, "y": 2},
        ic=None,
        gamma_i=0.0,
        gamma_b=float(gamma_b),
        reference="analytic",
        exact=poisson_exact,
    )


def _kdv_residual(nu):
    def residual(points, jet):
        return jet["u_t"] + jet["u"] * jet["u_x"] - nu * jet["u_xxx"]

    return residual


def _neg_sin_pi(x):
    return -np.sin(np.pi * np.asarray(x))


def kdv_problem(nu: float = 0.0025, ic: Optional[Callable] = None, ic_label: str = "-sin(pi x)") -> PdeProblem:
    if nu < 0:
        raise ValueError("nu must be non-negative")
    return PdeProblem(
        name="kdv",
        residual=_kdv_residual(float(nu)),
        domain=Domain(t_range=(0.0, 1.0), **PERIODIC_LINE),
        bc=BoundarySpec("periodic_hard"),
        derivatives={"t": 1, "x": 3},
        ic=_neg_sin_pi if ic is None else ic,
        gamma_i=1.0,
        reference="spectral",
        params={"nu": float(nu), "ic": ic_label},
    )


def kdv_initial_family(k: int, phi: float, k_in_pi_units: bool = False) -> Callable:
    """x -> cos(k x + phi) with k in {1, 2, 3}, phi in [-pi/2, pi/2].

    ``k_in_pi_units`` swaps k for k*pi, which makes the family 2-periodic.
    """
    if k not in (1, 2, 3) or int(k) != k:
        raise ValueError(f"k must be one of 1, 2, 3, got {k}")
    if not -math.pi / 2 <= phi <= math.pi / 2:
        raise ValueError(f"phi must lie in [-pi/2, pi/2], got {phi}")
    wavenumber = k * math.pi if k_in_pi_units else float(k)

    def u0(x):
        return np.cos(wavenumber * np.asarray(x) + phi)

    return u0


def _burgers_residual(nu):
    def residual(points, jet):
        return jet["u_t"] + jet["u"] * jet["u_x"] - nu * jet["u_xx"]

    return residual


def burgers_problem(nu: float = 0.01 / math.pi) -> PdeProblem:
    if nu <= 0:
        raise ValueError("nu must be positive")
    return PdeProblem(
        name="burgers",
        residual=_burgers_residual(float(nu)),
        domain=Domain(t_range=(0.0, 1.0), **PERIODIC_LINE),
        bc=BoundarySpec("periodic_hard"),
        derivatives={"t": 1, "x": 2},
        ic=_neg_sin_pi,
        gamma_i=1.0,
        reference="spectral",
        params={"nu": float(nu), "ic": "-sin(pi x)"},
    )


def make_problem(name: str, **kwargs) -> PdeProblem:
    factories = {
        "advection": advection_problem,
        "poisson": poisson_problem,
        "kdv": kdv_problem,
        "burgers": burgers_problem,
    }
    if name not in factories:
        raise ValueError(f"unknown problem {name!r}; expected one of {PROBLEM_NAMES}")
    if name == "kdv" and "ic_k" in kwargs:
        # JSON-friendly spelling of a member of the cos(k x + phi) family
        k, phi = int(kwargs.pop("ic_k")), float(kwargs.pop("ic_phi", 0.0))
        in_pi = bool(kwargs.pop("ic_k_in_pi", False))
        kwargs["ic"] = kdv_initial_family(k, phi, in_pi)
        kwargs["ic_label"] = f"cos({k}x{'*pi' if in_pi else ''}+{phi!r})"
    return factories[name](**kwargs)


# ---------------------------------------------------------------------------
# collocation
# ---------------------------------------------------------------------------


@dataclass
class CollocationSet:
    pde_points: np.ndarray  # (N_pde, 2)
    ic_points: np.ndarray  # (N_i, 2) with t = 0; empty for Poisson
    bc_points: np.ndarray  # (N_b, 2); empty under hard periodicity


def _uniform(rng, n, bounds):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return lo + (hi - lo) * rng.random((n, len(bounds)))


def _square_edges(rng, n, x_range, y_range):
    per_edge = [n // 4 + (1 if i < n % 4 else 0) for i in range(4)]
    (x0, x1), (y0, y1) = x_range, y_range
    parts = []
    for edge, m in enumerate(per_edge):
        s = rng.random(m)
        if edge == 0:
            pts = np.column_stack([x0 + (x1 - x0) * s, np.full(m, y0)])
        elif edge == 1:
            pts = np.column_stack([np.full(m, x1), y0 + (y1 - y0) * s])
        elif edge == 2:
            pts = np.column_stack([x0 + (x1 - x0) * s, np.full(m, y1)])
        else:
            pts = np.column_stack([np.full(m, x0), y0 + (y1 - y0) * s])
        parts.append(pts)
    return np.concatenate(parts, axis=0)


def sample_collocation(problem: PdeProblem, counts, seed: int) -> CollocationSet:
    """Uniform i.i.d. points. ``counts`` = (N_pde, N_i, N_b); N_b is ignored
    under hard periodicity and N_i for problems without a time axis."""
    n_pde, n_i, n_b = counts
    rng = np.random.default_rng(seed)
    bounds = problem.domain.bounds()
    pde = _uniform(rng, n_pde, bounds)
    empty = np.zeros((0, 2))
    ic = empty
    if problem.is_evolution and problem.ic is not None:
        xs = _uniform(rng, n_i, problem.domain.x_ranges)[:, 0]
        ic = np.column_stack([np.zeros(n_i), xs])
    bc = empty
    if problem.bc.kind == "dirichlet":
        if problem.is_evolution:
            raise NotImplementedError("dirichlet data is only implemented for the square domain")
        bc = _square_edges(rng, n_b, *problem.domain.x_ranges)
    return CollocationSet(pde, ic, bc)
