"""Meta-training of the learned optimizer with Persistent Evolution Strategies.

Every task keeps ``N`` antithetic particles, each a full inner training run
under ``theta_opt + perturbation``. After each ``K``-epoch unroll the
accumulated perturbations weight the unroll losses to give an unbiased
estimate of the meta-gradient, which is applied with plain gradient descent (or Adam at the meta level).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .optimizers import (
    HEAD_VARIANCE,
    Adam,
    LearnedOptimizer,
    OptimizerCheckpoint,
    optimizer_mlp_init,
)
from .pinn import InnerRun, PinnModel, TrainConfig
from .problems import PdeProblem, advection_problem, kdv_initial_family, kdv_problem, make_problem

log = logging.getLogger(__name__)

TASK_KINDS = ("reinit_only", "kdv_ic_family", "advection_velocity_family")


@dataclass
class MetaConfig:
    n_particles: int = 2
    unroll_K: int = 1
    sigma: float = 0.01
    alpha: float = 1e-4
    n_tasks: int = 20
    meta_epochs: int = 50
    seed: int = 0
    meta_optimizer: str = "sgd"  # or "adam"
    meta_objective: str = "mean"  # or "log_mean"
    epochs_per_visit: Optional[int] = None  # inner epochs per task per meta-epoch; None = whole inner run

    def __post_init__(self):
        if self.n_particles < 2 or self.n_particles % 2:
            raise ValueError("PES needs an even number (>= 2) of antithetic particles")
        if self.sigma <= 0 or self.alpha <= 0:
            raise ValueError("sigma and alpha must be positive")
        if self.unroll_K < 1 or self.n_tasks < 1 or self.meta_epochs < 0:
            raise ValueError("invalid unroll length, task count or meta-epoch count")
        if self.meta_optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown meta optimizer {self.meta_optimizer!r}")
        if self.meta_objective not in ("mean", "log_mean"):
            raise ValueError(f"unknown meta objective {self.meta_objective!r}")
        if self.epochs_per_visit is not None and self.epochs_per_visit < self.unroll_K:
            raise ValueError("epochs_per_visit must be at least unroll_K")


@dataclass
class TaskDistribution:
    kind: str = "reinit_only"
    problem: str = "advection"
    hidden_layers: int = 2
    units: int = 20
    problem_kwargs: dict = field(default_factory=dict)
    velocity_range: tuple = (-1.0, 1.0)
    phi_range: tuple = (-math.pi / 2, math.pi / 2)
    k_values: tuple = (1, 2, 3)
    k_in_pi_units: bool = False

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task distribution {self.kind!r}")
        if self.kind == "kdv_ic_family":
            self.problem = "kdv"
        if self.kind == "advection_velocity_family":
            self.problem = "advection"
        self._base = make_problem(self.problem, **self.problem_kwargs)

    @property
    def base_problem(self) -> PdeProblem:
        return self._base

    def describe(self) -> dict:
        d = {"kind": self.kind, "problem": self.problem, "hidden_layers": self.hidden_layers, "units": self.units}
        if self.kind == "advection_velocity_family":
            d["velocity_range"] = list(self.velocity_range)
        if self.kind == "kdv_ic_family":
            d["k_values"] = list(self.k_values)
            d["phi_range"] = list(self.phi_range)
            d["k_in_pi_units"] = self.k_in_pi_units
        return d


def _task_rng(index: int, seed: int):
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def sample_task(dist: TaskDistribution, index: int, seed: int):
    """(problem, initial network params) for task ``index``; deterministic in (index, seed)."""
    rng = _task_rng(index, seed)
    problem = dist.base_problem
    if dist.kind == "kdv_ic_family":
        k = int(rng.choice(dist.k_values))
        phi = float(rng.uniform(*dist.phi_range))
        ic = kdv_initial_family(k, phi, dist.k_in_pi_units)
        kw = dict(dist.problem_kwargs)
        problem = kdv_problem(ic=ic, ic_label=f"cos({k}x{'*pi' if dist.k_in_pi_units else ''}+{phi!r})", **kw)
    elif dist.kind == "advection_velocity_family":
        problem = advection_problem(float(rng.uniform(*dist.velocity_range)))
    model = PinnModel.build(problem, dist.hidden_layers, dist.units)
    params0 = model.init_params(int(rng.integers(2**31)))
    return problem, params0


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def pes_gradient(losses, xi_cums, sigma: float) -> np.ndarray:
    """(1 / (N sigma^2)) * sum_i xi_cum_i * L_i."""
    losses = np.asarray(losses, dtype=np.float64)
    xi_cums = np.asarray(xi_cums, dtype=np.float64)
    if len(losses) < 2 or len(losses) != len(xi_cums):
        raise ValueError("need one accumulated perturbation per particle, at least two particles")
    # elementwise products, so antithetic pairs with equal losses cancel exactly
    return np.sum(losses[:, None] * xi_cums, axis=0) / (len(losses) * sigma**2)


def antithetic_perturbations(rng, n_particles: int, dim: int, sigma: float) -> np.ndarray:
    half = sigma * rng.standard_normal((n_particles // 2, dim))
    return np.concatenate([half, -half], axis=0)


class PersistentES:
    """Bookkeeping for one PES problem: accumulated perturbations per particle."""

    def __init__(self, dim: int, n_particles: int, sigma: float):
        self.dim = dim
        self.n_particles = n_particles
        self.sigma = sigma
        self.xi_cum = np.zeros((n_particles, dim))

    def ask(self, rng) -> np.ndarray:
        perts = antithetic_perturbations(rng, self.n_particles, self.dim, self.sigma)
        self.xi_cum += perts
        return perts

    def tell(self, losses) -> np.ndarray:
        return pes_gradient(losses, self.xi_cum, self.sigma)

    def reset(self):
        self.xi_cum[:] = 0.0


def pes_unrolled(theta, init_state, unroll: Callable, horizon: int, K: int, n_particles: int, sigma: float, rng):
    """Run PES over one full inner horizon with a fixed ``theta``; return the summed estimate.

    ``unroll(theta_i, state, t0, K) -> (state, loss)`` advances one particle by K
    steps. Summing the per-unroll estimates over a horizon gives an unbiased
    estimate of the gradient of the total loss.
    """
    es = PersistentES(len(theta), n_particles, sigma)
    states = [init_state for _ in range(n_particles)]
    total = np.zeros(len(theta))
    t = 0
    while t < horizon:
        k = min(K, horizon - t)
        perts = es.ask(rng)
        losses = []
        for i in range(n_particles):
            states[i], loss = unroll(theta + perts[i], states[i], t, k)
            losses.append(loss)
        total += es.tell(losses)
        t += k
    return total


def es_gradient(theta, objective: Callable, n_particles: int, sigma: float, rng) -> np.ndarray:
    """Vanilla antithetic ES estimate of grad objective(theta)."""
    perts = antithetic_perturbations(rng, n_particles, len(theta), sigma)
    losses = [objective(theta + p) for p in perts]
    return pes_gradient(losses, perts, sigma)


# ---------------------------------------------------------------------------
# meta-training on PINN tasks
# ---------------------------------------------------------------------------


def _unroll_objective(batch_losses, kind):
    losses = np.asarray(batch_losses, dtype=np.float64)
    if kind == "log_mean":
        return float(np.mean(np.log(losses)))
    return float(np.mean(losses))


@dataclass
class MetaLogRow:
    meta_epoch: int
    task: int
    mean_inner_loss: float
    grad_norm: float


class _Task:
    def __init__(self, index, dist, seed, inner_cfg, optimizer, n_particles, sigma, dim):
        self.index = index
        self.dist = dist
        self.seed = seed
        self.inner_cfg = inner_cfg
        self.optimizer = optimizer
        self.n_particles = n_particles
        self.es = PersistentES(dim, n_particles, sigma)
        self.restarts = 0
        self.start()

    def start(self):
        # restarts draw a fresh network from the same task slot
        problem, params0 = sample_task(self.dist, self.index, self.seed + 1_000_003 * self.restarts)
        self.problem = problem
        model = PinnModel.build(problem, self.dist.hidden_layers, self.dist.units)
        cfg = TrainConfig(
            epochs=self.inner_cfg.epochs,
            minibatches_per_epoch=self.inner_cfg.minibatches_per_epoch,
            seed=int(_task_rng(self.index, self.seed + self.restarts).integers(2**31)),
            resample_collocation=self.inner_cfg.resample_collocation,
            counts=self.inner_cfg.counts,
        )
        first = InnerRun(model, params0, self.optimizer, cfg)
        self.particles = [first] + [InnerRun(model, params0, self.optimizer, cfg, colloc=first.colloc) for _ in range(self.n_particles - 1)]
        self.es.reset()

    def restart(self):
        self.restarts += 1
        self.start()

    @property
    def epoch(self):
        return self.particles[0].epoch


def meta_train(
    dist: TaskDistribution,
    cfg: MetaConfig,
    inner_cfg: TrainConfig,
    lambdas=(1e-3, 1e-3, 1e-3, 1e-3),
    init_params: Optional[np.ndarray] = None,
    progress: Optional[Callable] = None,
):
    """Meta-train the optimizer weights; returns (OptimizerCheckpoint, list of MetaLogRow).

    One meta-epoch visits every task once. A visit advances the task's
    particles by ``epochs_per_visit`` inner epochs with a meta-gradient step
    after every ``unroll_K`` of them.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    theta = optimizer_mlp_init(int(rng.integers(2**31))) if init_params is None else np.array(init_params, dtype=np.float64)
    theta0 = theta.copy()
    optimizer = LearnedOptimizer(theta, lambdas)
    outer = Adam(cfg.alpha) if cfg.meta_optimizer == "adam" else None
    outer_state = outer.init(theta) if outer is not None else None
    tasks = []
    if cfg.meta_epochs > 0:
        tasks = [_Task(i, dist, cfg.seed, inner_cfg, optimizer, cfg.n_particles, cfg.sigma, len(theta)) for i in range(cfg.n_tasks)]
    rows = []
    dropped = []
    skipped = 0
    visit = inner_cfg.epochs if cfg.epochs_per_visit is None else cfg.epochs_per_visit
    unrolls_per_visit = max(1, visit // cfg.unroll_K)
    for meta_epoch in range(cfg.meta_epochs):
        for task in list(tasks):
            for _ in range(unrolls_per_visit):
                perts = task.es.ask(rng)
                losses = []
                for run, pert in zip(task.particles, perts):
                    batch_losses = []
                    for _ in range(cfg.unroll_K):
                        batch_losses += run.run_epoch(opt_params=theta + pert)
                        if run.diverged:
                            break
                    losses.append(math.inf if run.diverged else _unroll_objective(batch_losses, cfg.meta_objective))
                finite = [math.isfinite(v) for v in losses]
                if not any(finite):
                    log.warning("task %d: all particles diverged, dropping it", task.index)
                    tasks.remove(task)
                    dropped.append(task.index)
                    rows.append(MetaLogRow(meta_epoch, task.index, math.inf, 0.0))
                    break
                if not all(finite):
                    skipped += 1
                    log.info("task %d: a particle diverged, skipping this meta-step", task.index)
                    rows.append(MetaLogRow(meta_epoch, task.index, math.inf, 0.0))
                    task.restart()
                    continue
                grad = task.es.tell(losses)
                if outer is None:
                    theta = theta - cfg.alpha * grad
                else:
                    outer_state, theta = outer.step(outer_state, theta, grad)
                rows.append(MetaLogRow(meta_epoch, task.index, float(np.mean(losses)), float(np.linalg.norm(grad))))
                if task.epoch >= inner_cfg.epochs:
                    task.restart()
        if progress is not None:
            progress(meta_epoch, rows)
    provenance = {
        "method": "pes",
        "n_tasks": cfg.n_tasks,
        "meta_epochs": cfg.meta_epochs,
        "n_particles": cfg.n_particles,
        "unroll_K": cfg.unroll_K,
        "sigma": cfg.sigma,
        "alpha": cfg.alpha,
        "meta_optimizer": cfg.meta_optimizer,
        "meta_objective": cfg.meta_objective,
        "epochs_per_visit": visit,
        "seed": cfg.seed,
        "head_variance": HEAD_VARIANCE,
        "task_distribution": dist.describe(),
        "inner_epochs": inner_cfg.epochs,
        "inner_counts": list(inner_cfg.counts),
        "dropped_tasks": dropped,
        "skipped_steps": skipped,
        "initial_params_changed": bool(np.any(theta != theta0)),
    }
    return OptimizerCheckpoint(theta, tuple(lambdas), provenance=provenance), rows


def write_meta_log(rows, path):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["meta_epoch", "task", "mean_inner_loss", "grad_norm"])
        for r in rows:
            w.writerow([r.meta_epoch, r.task, repr(r.mean_inner_loss), repr(r.grad_norm)])
