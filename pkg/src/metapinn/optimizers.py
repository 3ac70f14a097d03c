"""Per-parameter optimizers: Adam and the MLP-parameterised learned update.

Both expose ``init(params) -> state`` and
``step(state, params, grads, opt_params=None) -> (state, new_params)``; states
are immutable dataclasses so a step never touches the previous state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import diffcore as dc

EPS = 1e-8
BETA1 = 0.9
BETA2 = 0.999
ACCUMULATOR_BETAS = (0.5, 0.9, 0.99, 0.999)
TIME_SCALES = (1, 3, 10, 30, 100, 300, 1000, 3000, 10_000, 30_000, 100_000)
N_NORMALIZED = 2 + 2 * len(ACCUMULATOR_BETAS)
N_FEATURES = N_NORMALIZED + len(TIME_SCALES)
OPT_SPEC = dc.MlpSpec((N_FEATURES, 32, 32, 3), "swish")
HEAD_VARIANCE = 1e-3
FEATURE_SCHEMA = "theta,grad,v[0.5,0.9,0.99,0.999],rsqrt_v,tanh_t[11]/v1"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    epsilon: float = EPS
    eta: float = 1e-3


def adam_step(state: AdamState, params, grads):
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError("params, grads and moments must share a shape")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.eta * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return replace(state, m=m, v=v, t=t), new_params


@dataclass
class Adam:
    eta: float = 1e-3
    beta1: float = BETA1
    beta2: float = BETA2
    epsilon: float = EPS

    def init(self, params) -> AdamState:
        z = np.zeros(np.shape(params))
        return AdamState(z, z.copy(), 0, self.beta1, self.beta2, self.epsilon, self.eta)

    def step(self, state, params, grads, opt_params=None):
        return adam_step(state, params, grads)


# ---------------------------------------------------------------------------
# learned optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LearnedOptimizerState:
    opt_params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    accumulators: np.ndarray  # (4, n_params), one row per decay rate
    t: int = 0
    lambdas: tuple = (1e-3, 1e-3, 1e-3, 1e-3)
    epsilon: float = EPS


def time_features(t) -> np.ndarray:
    return np.tanh(float(t) / np.asarray(TIME_SCALES, dtype=np.float64))


def normalize_columns(features: np.ndarray, n_cols: int = N_NORMALIZED) -> np.ndarray:
    """Scale the first ``n_cols`` columns to unit mean square; all-zero columns stay zero."""
    out = np.array(features, dtype=np.float64)
    block = out[:, :n_cols]
    ms = np.mean(block * block, axis=0)
    scale = np.where(ms > 0, 1.0 / np.sqrt(np.where(ms > 0, ms, 1.0)), 0.0)
    out[:, :n_cols] = block * scale
    return out


def raw_features(state: LearnedOptimizerState, params, grads) -> np.ndarray:
    acc = state.accumulators
    rsqrt = 1.0 / (np.sqrt(acc) + state.epsilon)
    n = len(params)
    cols = [params[:, None], grads[:, None], acc.T, rsqrt.T, np.broadcast_to(time_features(state.t), (n, len(TIME_SCALES)))]
    return np.concatenate(cols, axis=1)


def build_features(state: LearnedOptimizerState, params, grads) -> np.ndarray:
    """(n_params, 21) normalized optimizer inputs; expects accumulators already updated."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    return normalize_columns(raw_features(state, params, grads))


def head_outputs(opt_params, features):
    """Per-parameter (s_adam, s_bb, d_bb) from the optimizer MLP."""
    out = dc.mlp_forward(OPT_SPEC, opt_params, features)
    return out[:, 0], out[:, 1], out[:, 2]


def update_accumulators(state: LearnedOptimizerState, grads) -> LearnedOptimizerState:
    g2 = grads * grads
    betas = np.asarray(ACCUMULATOR_BETAS)[:, None]
    return replace(
        state,
        adam_m=BETA1 * state.adam_m + (1.0 - BETA1) * grads,
        adam_v=BETA2 * state.adam_v + (1.0 - BETA2) * g2,
        accumulators=betas * state.accumulators + (1.0 - betas) * g2,
        t=state.t + 1,
    )


def learned_update(state: LearnedOptimizerState, params, grads):
    """Update direction f for a state whose accumulators already include ``grads``."""
    t = state.t
    eps = state.epsilon
    m_hat = state.adam_m / (1.0 - BETA1**t)
    v_hat = state.adam_v / (1.0 - BETA2**t)
    w_adam = m_hat / (np.sqrt(v_hat) + eps)
    s_adam, s_bb, d_bb = head_outputs(state.opt_params, build_features(state, params, grads))
    l1, l2, l3, l4 = state.lambdas
    precond = np.sqrt(state.accumulators[-1]) + eps
    with np.errstate(over="ignore", invalid="ignore"):
        nominal = l1 * np.exp(l2 * s_adam) * w_adam
        blackbox = (l3 / precond) * d_bb * np.exp(l4 * s_bb)
    return nominal + blackbox


def learned_step(state: LearnedOptimizerState, params, grads):
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.adam_m.shape:
        raise ValueError("params, grads and optimizer state must share a shape")
    state = update_accumulators(state, grads)
    f = learned_update(state, params, grads)
    return state, params - f


def optimizer_mlp_init(seed: int, head_variance: float = HEAD_VARIANCE) -> np.ndarray:
    return dc.mlp_init(OPT_SPEC, seed, head_variance=head_variance)


def zero_head(opt_params) -> np.ndarray:
    """Copy of ``opt_params`` with the output layer set to zero (exactly Adam with eta = lambda_1)."""
    out = np.array(opt_params, dtype=np.float64)
    w, _, b = OPT_SPEC.layer_slices()[-1]
    out[w] = 0.0
    out[b] = 0.0
    return out


@dataclass
class LearnedOptimizer:
    opt_params: np.ndarray
    lambdas: tuple = (1e-3, 1e-3, 1e-3, 1e-3)
    epsilon: float = EPS

    def __post_init__(self):
        self.opt_params = np.asarray(self.opt_params, dtype=np.float64)
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if self.opt_params.shape != (OPT_SPEC.n_params,):
            raise ValueError(f"optimizer MLP needs {OPT_SPEC.n_params} weights, got {self.opt_params.shape}")
        if len(self.lambdas) != 4 or any(v <= 0 for v in self.lambdas):
            raise ValueError("need four positive lambdas")

    def init(self, params) -> LearnedOptimizerState:
        n = len(params)
        z = np.zeros(n)
        return LearnedOptimizerState(self.opt_params, z, z.copy(), np.zeros((len(ACCUMULATOR_BETAS), n)), 0, self.lambdas, self.epsilon)

    def step(self, state, params, grads, opt_params=None):
        if opt_params is not None:
            state = replace(state, opt_params=opt_params)
        return learned_step(state, params, grads)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class OptimizerCheckpoint:
    opt_params: np.ndarray
    lambdas: tuple
    epsilon: float = EPS
    mlp_spec: dc.MlpSpec = OPT_SPEC
    feature_schema: str = FEATURE_SCHEMA
    provenance: dict = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION

    def optimizer(self, lambdas: Optional[tuple] = None) -> LearnedOptimizer:
        if self.feature_schema != FEATURE_SCHEMA:
            raise ValueError(f"checkpoint feature schema {self.feature_schema!r} does not match {FEATURE_SCHEMA!r}")
        return LearnedOptimizer(self.opt_params, self.lambdas if lambdas is None else lambdas, self.epsilon)

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "mlp_spec": self.mlp_spec.to_dict(),
            "opt_params": [float(v) for v in self.opt_params],
            "lambdas": list(self.lambdas),
            "epsilon": self.epsilon,
            "feature_schema": self.feature_schema,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d) -> "OptimizerCheckpoint":
        if d.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format {d.get('format_version')!r}")
        return cls(
            opt_params=np.array(d["opt_params"], dtype=np.float64),
            lambdas=tuple(d["lambdas"]),
            epsilon=d["epsilon"],
            mlp_spec=dc.MlpSpec.from_dict(d["mlp_spec"]),
            feature_schema=d["feature_schema"],
            provenance=d.get("provenance", {}),
            format_version=d["format_version"],
        )

    def save(self, path):
        # json writes floats with repr(), which round-trips float64 exactly
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "OptimizerCheckpoint":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
