"""PINN assembly: hard-periodic embedding, composite loss and minibatch training."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import diffcore as dc
from .problems import CollocationSet, PdeProblem, sample_collocation

DIVERGENCE_THRESHOLD = 1e6


def periodic_embed(t, x, x_range):
    """(t, cos 2 pi xi, sin 2 pi xi) with xi the coordinate rescaled to [0, 1]."""
    lo, hi = x_range
    theta = 2.0 * np.pi * (np.asarray(x, dtype=np.float64) - lo) / (hi - lo)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), theta.shape)
    return np.stack([t, np.cos(theta), np.sin(theta)], axis=-1)


@dataclass
class PinnModel:
    spec: dc.MlpSpec
    problem: PdeProblem
    embedding: str = "none"  # "periodic_x" under hard periodicity

    def __post_init__(self):
        periodic = self.problem.bc.kind == "periodic_hard"
        if periodic != (self.embedding == "periodic_x"):
            raise ValueError("periodic_x embedding is required exactly for hard-periodic problems")
        expected = 3 if periodic else len(self.problem.coords)
        if self.spec.n_in != expected or self.spec.n_out != 1:
            raise ValueError(f"network must map {expected} inputs to 1 output, got {self.spec.layer_widths}")

    @classmethod
    def build(cls, problem: PdeProblem, hidden_layers: int, units: int) -> "PinnModel":
        periodic = problem.bc.kind == "periodic_hard"
        n_in = 3 if periodic else len(problem.coords)
        spec = dc.MlpSpec((n_in,) + (units,) * hidden_layers + (1,), "tanh")
        return cls(spec, problem, "periodic_x" if periodic else "none")

    @property
    def x_range(self):
        return self.problem.domain.x_ranges[0]

    def init_params(self, seed: int) -> np.ndarray:
        return dc.mlp_init(self.spec, seed)

    # -- inputs and their Taylor series ---------------------------------------
    def network_inputs(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.embedding == "periodic_x":
            return periodic_embed(points[:, 0], points[:, 1], self.x_range)
        return points

    def _input_series(self, points, coord, order):
        """Input-space Taylor coefficients [c1..c_order] along one physical coordinate."""
        n = len(points)
        col = self.problem.coords.index(coord)
        if self.embedding == "none":
            c1 = np.zeros((n, self.spec.n_in))
            c1[:, col] = 1.0
            return [c1] + [None] * (order - 1)
        if coord == "t":
            c1 = np.zeros((n, 3))
            c1[:, 0] = 1.0
            return [c1] + [None] * (order - 1)
        lo, hi = self.x_range
        omega = 2.0 * np.pi / (hi - lo)
        theta = omega * (points[:, 1] - lo)
        cos, sin = np.cos(theta), np.sin(theta)
        # k-th derivatives of (cos, sin) follow the cycle (-sin, cos), (-cos, -sin), (sin, -cos)
        cycle = [(-sin, cos), (-cos, -sin), (sin, -cos)]
        out = []
        for k in range(1, order + 1):
            dcos, dsin = cycle[k - 1]
            scale = omega**k / math.factorial(k)
            c = np.zeros((n, 3))
            c[:, 1] = scale * dcos
            c[:, 2] = scale * dsin
            out.append(c)
        return out

    def jet(self, params, points, derivatives: Optional[dict] = None):
        """Network output and the requested pure derivatives at ``points``.

        Returns a dict with ``u`` and e.g. ``u_t``, ``u_xxx`` (arrays, or Tensors
        when ``params`` is a Tensor).
        """
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        derivatives = self.problem.derivatives if derivatives is None else derivatives
        coords = [c for c, k in derivatives.items() if k > 0]
        series = [self._input_series(points, c, derivatives[c]) for c in coords]
        y0, out = dc.mlp_jet(self.spec, params, self.network_inputs(points), series)
        jet = {"u": y0[:, 0]}
        for coord, cs in zip(coords, out):
            for k, c in enumerate(cs, start=1):
                key = "u_" + coord * k
                if c is None:
                    jet[key] = np.zeros(len(points))
                else:
                    jet[key] = math.factorial(k) * c[:, 0]
        return jet

    def predict(self, params, points):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return dc.mlp_forward(self.spec, dc.value_of(params), self.network_inputs(points))[:, 0]


def pde_residuals(model: PinnModel, params, points):
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return model.problem.residual(points, model.jet(params, points))


def pde_residual_at(model: PinnModel, params, point) -> float:
    return float(dc.value_of(pde_residuals(model, params, np.asarray(point)[None, :]))[0])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossWeights:
    gamma_i: float = 1.0
    gamma_b: float = 0.0

    def __post_init__(self):
        if self.gamma_i < 0 or self.gamma_b < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def of(cls, problem: PdeProblem) -> "LossWeights":
        return cls(problem.gamma_i, problem.gamma_b)


@dataclass
class LossRecord:
    total: float
    pde: float
    ic: float
    bc: float
    epoch: int = 0


def _mean_square(r):
    return dc.mean(r * r)


def loss_terms(model: PinnModel, params, pde_points, ic_points, bc_points):
    """(pde, ic, bc) mean squared residuals; absent terms are 0.0."""
    problem = model.problem
    pde = _mean_square(problem.residual(pde_points, model.jet(params, pde_points)))
    ic = 0.0
    if len(ic_points) and problem.ic is not None:
        u = model.jet(params, ic_points, {})["u"]
        ic = _mean_square(u - problem.ic(ic_points[:, 1]))
    bc = 0.0
    if len(bc_points) and problem.bc.kind == "dirichlet":
        u = model.jet(params, bc_points, {})["u"]
        bc = _mean_square(u - problem.bc.dirichlet_value(bc_points[:, 0], bc_points[:, 1]))
    return pde, ic, bc


def composite_loss(model: PinnModel, params, colloc: CollocationSet, weights: LossWeights, epoch: int = 0) -> LossRecord:
    params = dc.value_of(params)
    pde, ic, bc = (float(v) for v in loss_terms(model, params, colloc.pde_points, colloc.ic_points, colloc.bc_points))
    total = pde + weights.gamma_i * ic + weights.gamma_b * bc
    return LossRecord(total, pde, ic, bc, epoch)


def batch_loss_and_grad(model: PinnModel, params, pde_points, ic_points, bc_points, weights: LossWeights):
    def closure(p):
        pde, ic, bc = loss_terms(model, p, pde_points, ic_points, bc_points)
        return pde + weights.gamma_i * ic + weights.gamma_b * bc

    return dc.value_and_grad(closure, params)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int
    minibatches_per_epoch: int = 10
    seed: int = 0
    resample_collocation: bool = False
    counts: tuple = (10000, 100, 100)

    def __post_init__(self):
        if self.epochs < 0 or self.minibatches_per_epoch < 1:
            raise ValueError("epochs must be >= 0 and minibatches_per_epoch >= 1")


@dataclass
class LossHistory:
    records: list = field(default_factory=list)
    initial: Optional[LossRecord] = None
    status: str = "ok"  # or "diverged"

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    @property
    def final(self) -> Optional[LossRecord]:
        return self.records[-1] if self.records else self.initial

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "total", "pde", "ic", "bc"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.total), repr(r.pde), repr(r.ic), repr(r.bc)])

    @classmethod
    def from_csv(cls, path) -> "LossHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        recs = [LossRecord(float(r["total"]), float(r["pde"]), float(r["ic"]), float(r["bc"]), int(r["epoch"])) for r in rows]
        return cls(records=recs)


def _diverged(value) -> bool:
    return not math.isfinite(value) or value > DIVERGENCE_THRESHOLD


class InnerRun:
    """Resumable training state: parameters, optimizer state, collocation and RNG.

    Meta-training advances many of these a few epochs at a time; ``train`` runs
    one to completion.
    """

    def __init__(self, model: PinnModel, params0, optimizer, config: TrainConfig, colloc: Optional[CollocationSet] = None):
        self.model = model
        self.optimizer = optimizer
        self.config = config
        self.weights = LossWeights.of(model.problem)
        self.params = np.array(params0, dtype=np.float64)
        self.opt_state = optimizer.init(self.params)
        self.rng = np.random.default_rng(config.seed)
        self.colloc = colloc if colloc is not None else sample_collocation(model.problem, config.counts, config.seed)
        self.epoch = 0
        self.diverged = False

    def minibatches(self):
        n = len(self.colloc.pde_points)
        perm = self.rng.permutation(n)
        return np.array_split(perm, min(self.config.minibatches_per_epoch, n))

    def run_epoch(self, opt_params=None) -> list:
        """One epoch of minibatch steps; returns the minibatch losses seen.

        ``opt_params`` overrides the learned optimizer's weights for this epoch.
        """
        if self.config.resample_collocation and self.epoch > 0:
            self.colloc = sample_collocation(self.model.problem, self.config.counts, self.config.seed + 7919 * self.epoch)
        losses = []
        c = self.colloc
        for idx in self.minibatches():
            value, grad = batch_loss_and_grad(self.model, self.params, c.pde_points[idx], c.ic_points, c.bc_points, self.weights)
            losses.append(value)
            if _diverged(value):
                self.diverged = True
                break
            self.opt_state, new_params = self.optimizer.step(self.opt_state, self.params, grad, opt_params=opt_params)
            if not np.all(np.isfinite(new_params)):
                self.diverged = True
                losses.append(math.inf)
                break
            self.params = new_params
        self.epoch += 1
        return losses

    def full_loss(self) -> LossRecord:
        return composite_loss(self.model, self.params, self.colloc, self.weights, self.epoch)


def train(model: PinnModel, params0, optimizer, config: TrainConfig, colloc: Optional[CollocationSet] = None):
    """Minibatch training; returns (LossHistory, final params).

    The full-set loss is recorded before the first step (``history.initial``)
    and at the end of every epoch.
    """
    run = InnerRun(model, params0, optimizer, config, colloc)
    history = LossHistory(initial=run.full_loss())
    for _ in range(config.epochs):
        run.run_epoch()
        if run.diverged:
            history.status = "diverged"
            break
        rec = run.full_loss()
        history.records.append(rec)
        if _diverged(rec.total):
            history.status = "diverged"
            break
    return history, run.params
