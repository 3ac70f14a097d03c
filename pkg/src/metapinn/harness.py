"""Experiment orchestration: paired Adam / learned-optimizer comparisons, meta-training
runs, reference evaluation and CSV export."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from . import refsolve
from .meta import MetaConfig, TaskDistribution, meta_train, write_meta_log
from .optimizers import Adam, OptimizerCheckpoint
from .pinn import LossHistory, PinnModel, TrainConfig, train
from .problems import PROBLEM_NAMES, PdeProblem, make_problem

CONFIG_VERSION = 1
GRID_POINTS = 101

# hidden layers, IC/BC points, epochs, eta, lambdas
_TABLE = {
    "advection": (2, 100, 3000, 1e-3, (1e-3, 1e-3, 1e-3, 1e-3)),
    "poisson": (4, 400, 2000, 1e-3, (1e-3, 1e-3, 1e-3, 1e-3)),
    "kdv": (6, 100, 1000, 5e-4, (5e-4, 1e-3, 1e-3, 1e-3)),
    "burgers": (6, 100, 1000, 5e-4, (5e-4, 1e-3, 1e-3, 1e-3)),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "advection"
    hidden_layers: int = 2
    units: int = 20
    n_pde: int = 10_000
    n_ic: int = 100
    n_bc: int = 100
    epochs: int = 3000
    minibatches: int = 10
    optimizer: str = "adam"  # or "learned"
    checkpoint: Optional[str] = None
    eta: float = 1e-3
    lambdas: tuple = (1e-3, 1e-3, 1e-3, 1e-3)
    gamma_i: Optional[float] = None  # None keeps the problem's default
    gamma_b: Optional[float] = None
    seed: int = 0
    out_dir: str = "runs/out"
    problem_kwargs: dict = field(default_factory=dict)
    reference_n: Optional[int] = None
    grid_points: int = GRID_POINTS

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in self.lambdas)
        self.validate()

    def validate(self):
        if self.problem not in PROBLEM_NAMES:
            raise ConfigError(f"unknown problem {self.problem!r}; expected one of {PROBLEM_NAMES}")
        if self.optimizer not in ("adam", "learned"):
            raise ConfigError(f"optimizer must be 'adam' or 'learned', got {self.optimizer!r}")
        if self.hidden_layers < 1 or self.units < 1:
            raise ConfigError("network needs at least one hidden layer and one unit")
        if self.epochs < 0 or self.minibatches < 1 or self.n_pde < 1:
            raise ConfigError("invalid epochs, minibatch count or collocation count")
        if self.eta <= 0 or len(self.lambdas) != 4 or any(v <= 0 for v in self.lambdas):
            raise ConfigError("eta and the four lambdas must be positive")
        for g in (self.gamma_i, self.gamma_b):
            if g is not None and g < 0:
                raise ConfigError("loss weights must be non-negative")
        if self.grid_points < 2:
            raise ConfigError("evaluation grid needs at least 2 points per axis")

    @classmethod
    def for_problem(cls, problem: str, **overrides) -> "ExperimentConfig":
        """Defaults of the benchmark setup for ``problem``, then ``overrides``."""
        if problem not in _TABLE:
            raise ConfigError(f"unknown problem {problem!r}; expected one of {PROBLEM_NAMES}")
        layers, n_ib, epochs, eta, lambdas = _TABLE[problem]
        base = dict(problem=problem, hidden_layers=layers, n_ic=n_ib, n_bc=n_ib, epochs=epochs, eta=eta, lambdas=lambdas)
        if problem == "poisson":
            base["gamma_b"] = 1000.0
        base.update(overrides)
        return cls(**base)

    # -- derived objects --------------------------------------------------------
    def make_problem(self) -> PdeProblem:
        problem = make_problem(self.problem, **self.problem_kwargs)
        changes = {}
        if self.gamma_i is not None:
            changes["gamma_i"] = float(self.gamma_i)
        if self.gamma_b is not None:
            changes["gamma_b"] = float(self.gamma_b)
        return replace(problem, **changes) if changes else problem

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, minibatches_per_epoch=self.minibatches, seed=self.seed, counts=(self.n_pde, self.n_ic, self.n_bc))

    # -- serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        d["schema_version"] = CONFIG_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config schema version {version!r}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


# ---------------------------------------------------------------------------
# evaluation grid and reference
# ---------------------------------------------------------------------------


def evaluation_grid(problem: PdeProblem, n: int = GRID_POINTS) -> np.ndarray:
    """(n*n, 2) points on a uniform grid with both endpoints, first column slowest."""
    (a0, a1), (b0, b1) = problem.domain.bounds()
    a = np.linspace(a0, a1, n)
    b = np.linspace(b0, b1, n)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    return np.column_stack([aa.ravel(), bb.ravel()])


def reference_values(problem: PdeProblem, points, n_grid: Optional[int] = None, cfg: Optional[refsolve.IntegratorConfig] = None):
    """u_ref at ``points``: analytic where available, spectral otherwise."""
    points = np.asarray(points, dtype=np.float64)
    if problem.exact is not None:
        return problem.exact(points[:, 0], points[:, 1])
    times = np.unique(points[:, 0])
    fields_ = refsolve.solve_reference(problem, times, n=n_grid, cfg=cfg)
    return refsolve.evaluate_at(fields_, points[:, 0], points[:, 1])


# ---------------------------------------------------------------------------
# comparison
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    problem: str
    coords: tuple
    histories: dict  # optimizer name -> LossHistory
    grids: dict  # optimizer name -> (n, 5) array of (a, b, u_nn, u_ref, e)
    summary: dict = field(default_factory=dict)

    @property
    def diverged(self) -> bool:
        return any(h.status == "diverged" for h in self.histories.values())


def epochs_to_reach(history: LossHistory, target: float) -> Optional[int]:
    """First epoch whose full-set loss is <= ``target``; None if never."""
    for rec in history.records:
        if rec.total <= target:
            return rec.epoch
    return None


def _summarize(histories, grids):
    adam_final = histories["adam"].final.total if "adam" in histories else None
    out = {}
    for name, hist in histories.items():
        e = grids[name][:, 4]
        finite = np.all(np.isfinite(e))
        out[name] = {
            "final_loss": hist.final.total,
            "max_abs_error": float(np.max(np.abs(e))) if finite else math.inf,
            "l2_error": float(np.sqrt(np.mean(e * e))) if finite else math.inf,
            "epochs_to_match_adam": None if adam_final is None else epochs_to_reach(hist, adam_final),
            "status": hist.status,
        }
    return out


def _grid_rows(model, params, points, u_ref):
    with np.errstate(all="ignore"):
        u_nn = model.predict(params, points)
    return np.column_stack([points, u_nn, u_ref, u_nn - u_ref])


def run_comparison(cfg: ExperimentConfig, checkpoint: Optional[OptimizerCheckpoint], write: bool = True) -> ComparisonReport:
    """Train one initialization with Adam and with the learned optimizer, then evaluate both.

    With ``checkpoint`` None only the Adam run is performed.
    """
    problem = cfg.make_problem()
    model = PinnModel.build(problem, cfg.hidden_layers, cfg.units)
    params0 = model.init_params(cfg.seed)
    tcfg = cfg.train_config()
    optimizers = {"adam": Adam(cfg.eta)}
    if checkpoint is not None:
        optimizers["learned"] = checkpoint.optimizer(cfg.lambdas)
    points = evaluation_grid(problem, cfg.grid_points)
    u_ref = reference_values(problem, points, cfg.reference_n)
    histories, grids = {}, {}
    for name, opt in optimizers.items():
        hist, params = train(model, params0, opt, tcfg)
        histories[name] = hist
        grids[name] = _grid_rows(model, params, points, u_ref)
    report = ComparisonReport(problem.name, problem.coords, histories, grids)
    report.summary = _summarize(histories, grids)
    if write:
        write_report(report, cfg.out_dir)
    return report


SUMMARY_COLUMNS = ["optimizer", "final_loss", "max_abs_error", "l2_error", "epochs_to_match_adam", "status"]


def write_report(report: ComparisonReport, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for name, hist in report.histories.items():
        hist.to_csv(os.path.join(out_dir, f"loss_{name}.csv"))
    main = "learned" if "learned" in report.grids else "adam"
    _write_grid(report.grids[main], report.coords, os.path.join(out_dir, "grid.csv"))
    if main == "learned":
        _write_grid(report.grids["adam"], report.coords, os.path.join(out_dir, "grid_adam.csv"))
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for name, s in report.summary.items():
            match = "" if s["epochs_to_match_adam"] is None else s["epochs_to_match_adam"]
            w.writerow([name, repr(s["final_loss"]), repr(s["max_abs_error"]), repr(s["l2_error"]), match, s["status"]])


def _write_grid(rows, coords, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*coords, "u_nn", "u_ref", "e"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _read_grid(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in r] for r in reader])
    return tuple(header[:2]), rows


def load_report(run_dir) -> ComparisonReport:
    """Rebuild a report from the CSV files written by ``write_report``."""
    histories, grids = {}, {}
    for name in ("adam", "learned"):
        path = os.path.join(run_dir, f"loss_{name}.csv")
        if os.path.exists(path):
            histories[name] = LossHistory.from_csv(path)
    if not histories:
        raise FileNotFoundError(f"no loss_*.csv in {run_dir}")
    coords, main = _read_grid(os.path.join(run_dir, "grid.csv"))
    if "learned" in histories:
        grids["learned"] = main
        grids["adam"] = _read_grid(os.path.join(run_dir, "grid_adam.csv"))[1]
    else:
        grids["adam"] = main
    problem = "poisson" if coords == ("x", "y") else "unknown"
    report = ComparisonReport(problem, coords, histories, grids)
    report.summary = _summarize(histories, grids)
    return report


def export_figures_data(report: ComparisonReport, out_dir) -> list:
    """Loss curves and heatmap matrices as CSV; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    names = list(report.histories)
    path = os.path.join(out_dir, "fig_loss.csv")
    n_rows = max(len(h.records) for h in report.histories.values())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch"] + [f"total_{n}" for n in names])
        for i in range(n_rows):
            row = [i + 1]
            for n in names:
                recs = report.histories[n].records
                row.append(repr(recs[i].total) if i < len(recs) else "")
            w.writerow(row)
    written.append(path)
    for name, grid in report.grids.items():
        a = np.unique(grid[:, 0])
        b = np.unique(grid[:, 1])
        for col, label in ((2, "u_nn"), (3, "u_ref"), (4, "e")):
            if label == "u_ref" and name != names[0]:
                continue
            mat = grid[:, col].reshape(len(a), len(b))
            suffix = "" if label == "u_ref" else f"_{name}"
            path = os.path.join(out_dir, f"fig_{label}{suffix}.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow([f"{report.coords[0]}\\{report.coords[1]}"] + [repr(float(v)) for v in b])
                for av, row in zip(a, mat):
                    w.writerow([repr(float(av))] + [repr(float(v)) for v in row])
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# meta-training and reference runs
# ---------------------------------------------------------------------------


def run_meta(cfg: ExperimentConfig, meta: MetaConfig, dist_kind: str = "reinit_only", dist_options: Optional[dict] = None) -> str:
    """Meta-train on the named task distribution; writes ``opt.ckpt`` and ``meta_log.csv``."""
    dist = TaskDistribution(kind=dist_kind, problem=cfg.problem, hidden_layers=cfg.hidden_layers, units=cfg.units, problem_kwargs=dict(cfg.problem_kwargs), **(dist_options or {}))
    inner = cfg.train_config()
    ckpt, rows = meta_train(dist, meta, inner, cfg.lambdas)
    ckpt.provenance["experiment"] = cfg.to_dict()
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "opt.ckpt")
    ckpt.save(path)
    write_meta_log(rows, os.path.join(cfg.out_dir, "meta_log.csv"))
    return path


# Scaled-down protocol used by the acceptance suite and scripts/: meta-train on
# 2x20 advection networks with 2000 PDE points and 1000 epochs per task.
DESK_SIZES = {"n_pde": 2000, "epochs": 1000}
DESK_META = {
    "n_tasks": 5,
    "meta_epochs": 10,
    "n_particles": 32,
    "unroll_K": 5,
    "sigma": 0.01,
    "alpha": 1e-4,
    "meta_optimizer": "adam",
    "epochs_per_visit": 25,
}


def desk_comparison(dist_kind: str, target: str, seed: int, out_dir: Optional[str] = None, **meta_overrides) -> ComparisonReport:
    """Meta-train on advection tasks of ``dist_kind``, then compare both optimizers on a fresh ``target`` network.

    The evaluation network is seeded with ``1000 + seed`` so it never coincides
    with a meta-training task.
    """
    source = ExperimentConfig.for_problem("advection", seed=seed, out_dir=out_dir or "unused", **DESK_SIZES)
    meta_cfg = MetaConfig(seed=seed, **{**DESK_META, **meta_overrides})
    dist = TaskDistribution(kind=dist_kind, problem="advection", hidden_layers=source.hidden_layers, units=source.units)
    ckpt, rows = meta_train(dist, meta_cfg, source.train_config(), source.lambdas)
    target_cfg = ExperimentConfig.for_problem(target, seed=1000 + seed, out_dir=out_dir or "unused", **DESK_SIZES)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt.save(os.path.join(out_dir, "opt.ckpt"))
        write_meta_log(rows, os.path.join(out_dir, "meta_log.csv"))
        target_cfg.save(os.path.join(out_dir, "config.json"))
    return run_comparison(target_cfg, ckpt, write=out_dir is not None)


def write_reference(cfg: ExperimentConfig, n_times: int = GRID_POINTS) -> str:
    """Reference solution on the solver grid (spectral) or the evaluation grid (analytic)."""
    problem = cfg.make_problem()
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "reference.csv")
    if problem.exact is None:
        t_final = problem.domain.t_final
        fields_ = refsolve.solve_reference(problem, np.linspace(0.0, t_final, n_times), n=cfg.reference_n)
        refsolve.write_fields_csv(fields_, path)
        return path
    points = evaluation_grid(problem, cfg.grid_points)
    u = problem.exact(points[:, 0], points[:, 1])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*problem.coords, "u_ref"])
        for (a, b), v in zip(points, u):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(v))])
    return path
