"""Persistent contrastive divergence training with constraint enforcement."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .constraints import (
    ConstraintSet,
    QuadraticConstraint,
    linear_residuals,
    project_weights,
    quadratic_penalty_gradient,
)
from .rbm import (
    RbmModel,
    _enumerate_hidden,
    _enumeration_guard,
    _state_block,
    free_energy,
    hidden_free_energy,
)
from .units import BINARY, UnitKind


@dataclass
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 100
    n_chains: int = 100
    n_updates: int = 10000
    l2_weight: float = 0.001
    penalty_weight: float = 100.0
    adaptive_moment_decays: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    centering: bool = True
    center_decay: float = 0.99
    reset_units: bool = False
    reset_check_interval: int = 5
    reset_threshold: float = 0.01
    gibbs_steps: int = 1
    record_every: int = 100
    field_clip: float = 30.0
    init_std: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        self.adaptive_moment_decays = tuple(float(b) for b in self.adaptive_moment_decays)
        if self.learning_rate <= 0 or self.batch_size < 1 or self.n_chains < 1 or self.n_updates < 0:
            raise ValueError("learning rate, batch size and chain count must be positive")
        if self.l2_weight < 0 or self.penalty_weight < 0:
            raise ValueError("regularization strengths must be non-negative")
        if not all(0.0 < b < 1.0 for b in self.adaptive_moment_decays):
            raise ValueError("adaptive moment decays must lie in (0, 1)")
        if not 0.0 < self.center_decay < 1.0:
            raise ValueError("center_decay must lie in (0, 1)")
        if self.gibbs_steps < 1 or self.record_every < 1 or self.reset_check_interval < 1:
            raise ValueError("step counts must be >= 1")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string or typed values keyed by field name."""
        known = {f.name: f for f in fields(cls)}
        defaults = cls()
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"unknown training option {key!r}")
            default = getattr(defaults, key)
            kwargs[key] = _coerce(raw, default)
        return cls(**kwargs)


def _coerce(raw, default):
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        return tuple(float(x) for x in raw.replace(",", " ").split())
    return type(default)(raw)


@dataclass
class Gradient:
    weights: np.ndarray
    visible_fields: np.ndarray
    hidden_fields: np.ndarray
    penalty: float = 0.0

    def norm(self) -> float:
        return float(
            np.sqrt(np.sum(self.weights**2) + np.sum(self.visible_fields**2) + np.sum(self.hidden_fields**2))
        )


@dataclass
class TrainerState:
    chains: np.ndarray
    visible_offset: np.ndarray
    hidden_offset: np.ndarray
    moments: dict = field(default_factory=dict)
    update: int = 0


@dataclass
class LikelihoodCosts:
    part_erasure: float
    disent: float
    n_units: int | None = None

    def __iter__(self):
        return iter((self.part_erasure, self.disent))

    @property
    def per_unit_part_erasure(self) -> float:
        return self.part_erasure / self.n_units if self.n_units else math.nan

    @property
    def per_unit_disent(self) -> float:
        return self.disent / self.n_units if self.n_units else math.nan


def likelihood_costs(
    l_unconstrained: float, l_constrained: float, l_released: float, n_units: int | None = None
) -> LikelihoodCosts:
    """Erasure and disentanglement costs from three mean log-likelihoods."""
    return LikelihoodCosts(l_unconstrained - l_constrained, l_unconstrained - l_released, n_units)


# -- initialization ---------------------------------------------------------------


def _weighted_mean(x: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    if weights is None:
        return x.mean(axis=0)
    w = np.asarray(weights, dtype=np.float64)
    return (w / w.sum()) @ x


def init_model(
    data: np.ndarray,
    n_hidden: int,
    rng: np.random.Generator,
    visible_kind: UnitKind = BINARY,
    hidden_kind: UnitKind = BINARY,
    symmetric: bool = False,
    config: TrainConfig | None = None,
    weights: np.ndarray | None = None,
) -> RbmModel:
    """Visible fields matched to data means, small Gaussian weights, zero hidden fields."""
    config = config or TrainConfig()
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("empty data")
    n_visible = data.shape[1]
    flat = visible_kind.flat_size(n_visible)
    clip = config.field_clip
    mean = _weighted_mean(visible_kind.embed(data), weights)
    if symmetric:
        fields_v = np.zeros(flat)
    elif visible_kind.name == "binary":
        with np.errstate(divide="ignore"):
            fields_v = np.clip(np.log(mean) - np.log1p(-mean), -clip, clip)
    elif visible_kind.name == "spin":
        with np.errstate(divide="ignore"):
            fields_v = np.clip(np.arctanh(np.clip(mean, -1.0, 1.0)), -clip, clip)
    else:
        with np.errstate(divide="ignore"):
            logs = np.clip(np.log(mean.reshape(n_visible, -1)), -clip, None)
        fields_v = (logs - logs.mean(axis=1, keepdims=True)).reshape(-1)
    w = rng.normal(0.0, config.init_std / np.sqrt(n_visible), size=(flat, n_hidden))
    return RbmModel(w, fields_v, np.zeros(n_hidden), visible_kind, hidden_kind, symmetric)


# -- gradient estimation ------------------------------------------------------------


def _moments_to_gradient(
    x_data, h_data, p_data, x_model, h_model, p_model, vis_offset, hid_offset
) -> Gradient:
    """Centered moment difference; zero offsets give the plain gradient."""
    xd, hd = x_data - vis_offset, h_data - hid_offset
    xm, hm = x_model - vis_offset, h_model - hid_offset
    d_w = (xd * p_data[:, None]).T @ hd - (xm * p_model[:, None]).T @ hm
    d_g = p_data @ x_data - p_model @ x_model - d_w @ hid_offset
    d_theta = p_data @ h_data - p_model @ h_model - d_w.T @ vis_offset
    return Gradient(d_w, d_g, d_theta)


def init_state(
    model: RbmModel, data: np.ndarray, config: TrainConfig, rng: np.random.Generator,
    weights: np.ndarray | None = None,
) -> TrainerState:
    """Chains start from random data points; offsets from data and hidden means."""
    data = np.asarray(data, dtype=np.float64)
    idx = rng.integers(0, len(data), size=config.n_chains)
    x = model.visible_kind.embed(data)
    vis_offset = _weighted_mean(x, weights) if config.centering else np.zeros(x.shape[1])
    if config.centering:
        h = model.hidden_kind.mean(model.hidden_fields + x @ model.weights)
        hid_offset = _weighted_mean(h, weights)
    else:
        hid_offset = np.zeros(model.n_hidden)
    return TrainerState(data[idx].copy(), vis_offset, hid_offset)


def pcd_gradient(
    model: RbmModel,
    minibatch: np.ndarray,
    state: TrainerState,
    rng: np.random.Generator,
    config: TrainConfig | None = None,
    quadratic: QuadraticConstraint | None = None,
) -> Gradient:
    """Ascent direction of the log-likelihood estimated against persistent chains.

    Advances the chains by ``config.gibbs_steps`` Gibbs rounds and updates the
    centering offsets in ``state``.
    """
    config = config or TrainConfig()
    vk, hk = model.visible_kind, model.hidden_kind
    x_data = vk.embed(minibatch)
    h_data = hk.mean(model.hidden_fields + x_data @ model.weights)

    v = state.chains
    for _ in range(config.gibbs_steps):
        h = hk.sample(model.hidden_fields + vk.embed(v) @ model.weights, rng)
        v = vk.sample(model.visible_fields + h @ model.weights.T, rng)
    state.chains = v
    x_model = vk.embed(v)
    h_model = hk.mean(model.hidden_fields + x_model @ model.weights)

    b, k = len(x_data), len(x_model)
    grad = _moments_to_gradient(
        x_data, h_data, np.full(b, 1.0 / b), x_model, h_model, np.full(k, 1.0 / k),
        state.visible_offset, state.hidden_offset,
    )
    if config.centering:
        d = config.center_decay
        state.visible_offset = d * state.visible_offset + (1 - d) * x_data.mean(axis=0)
        state.hidden_offset = d * state.hidden_offset + (1 - d) * h_data.mean(axis=0)
    grad.weights -= config.l2_weight * model.weights
    if quadratic is not None and not quadratic.inert:
        pen_grad, grad.penalty = quadratic_penalty_gradient(model.weights, quadratic)
        grad.weights -= pen_grad
    if model.symmetric:
        grad.visible_fields[:] = 0.0
        grad.hidden_fields[:] = 0.0
    return grad


def exact_gradient(model: RbmModel, data: np.ndarray, weights: np.ndarray | None = None) -> Gradient:
    """Gradient of the mean log-likelihood by exact enumeration (no regularizers)."""
    _enumeration_guard(model)
    vk, hk = model.visible_kind, model.hidden_kind
    data = np.asarray(data, dtype=np.float64)
    x_data = vk.embed(data)
    h_data = hk.mean(model.hidden_fields + x_data @ model.weights)
    p_data = np.full(len(data), 1.0 / len(data)) if weights is None else np.asarray(weights) / np.sum(weights)
    if _enumerate_hidden(model):
        h_states = _state_block(hk, model.n_hidden)(0, 2**model.n_hidden)
        logp = hidden_free_energy(model, h_states)
        p_model = np.exp(logp - logsumexp(logp))
        x_model = vk.mean(model.visible_fields + h_states @ model.weights.T)
        h_model = h_states
    else:
        n = vk.q**model.n_visible
        v_states = _state_block(vk, model.n_visible)(0, n)
        logp = free_energy(model, v_states)
        p_model = np.exp(logp - logsumexp(logp))
        x_model = vk.embed(v_states)
        h_model = hk.mean(model.hidden_fields + x_model @ model.weights)
    zero_v, zero_h = np.zeros(x_data.shape[1]), np.zeros(model.n_hidden)
    return _moments_to_gradient(x_data, h_data, p_data, x_model, h_model, p_model, zero_v, zero_h)


# -- training loop ------------------------------------------------------------------


def pseudo_log_likelihood(model: RbmModel, data: np.ndarray, rng: np.random.Generator) -> float:
    """Stochastic pseudo-log-likelihood: one random site per sample, scaled by N."""
    data = np.asarray(data, dtype=np.float64)
    n, n_vis = data.shape
    sites = rng.integers(0, n_vis, size=n)
    rows = np.arange(n)
    vk = model.visible_kind
    if vk.is_onehot:
        alts = []
        for s in range(vk.q):
            alt = data.copy()
            alt[rows, sites] = s
            alts.append(free_energy(model, alt))
        alts = np.stack(alts, axis=1)
        own = alts[rows, data[rows, sites].astype(np.intp)]
        return float(np.mean(own - logsumexp(alts, axis=1)) * n_vis)
    flipped = data.copy()
    flipped[rows, sites] = (1.0 - data[rows, sites]) if vk.name == "binary" else -data[rows, sites]
    diff = free_energy(model, data) - free_energy(model, flipped)
    return float(np.mean(-np.logaddexp(0.0, -diff)) * n_vis)


class _Adam:
    def __init__(self, shapes: dict[str, tuple], config: TrainConfig) -> None:
        self.b1, self.b2 = config.adaptive_moment_decays
        self.eps = config.adam_eps
        self.lr = config.learning_rate
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] += self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _batches(n: int, config: TrainConfig, rng: np.random.Generator, weights: np.ndarray | None):
    """Endless minibatch index stream; weighted draws are with replacement."""
    b = min(config.batch_size, n)
    if weights is not None:
        p = np.asarray(weights, dtype=np.float64)
        p = p / p.sum()
        while True:
            yield rng.choice(n, size=b, p=p)
    while True:
        perm = rng.permutation(n)
        for start in range(0, n - b + 1, b):
            yield perm[start : start + b]


def _reset_saturated(
    model: RbmModel, activity: np.ndarray, config: TrainConfig, rng: np.random.Generator, adam: _Adam
) -> int:
    """Fold always-on/always-off hidden units into the visible fields and re-randomize them."""
    eps = config.reset_threshold
    on = activity > 1.0 - eps
    off = activity < eps
    stuck = np.flatnonzero(on | off)
    if len(stuck) == 0:
        return 0
    for mu in stuck:
        if not model.symmetric:
            if on[mu]:
                model.visible_fields += model.weights[:, mu]
            elif model.hidden_kind.name == "spin":
                model.visible_fields -= model.weights[:, mu]
        model.hidden_fields[mu] = 0.0
        model.weights[:, mu] = rng.normal(0.0, config.init_std / np.sqrt(model.n_visible), model.weights.shape[0])
        for key, col in (("weights", np.s_[:, mu]), ("hidden_fields", np.s_[mu])):
            adam.m[key][col] = 0.0
            adam.v[key][col] = 0.0
    return len(stuck)


def train(
    model: RbmModel,
    data: np.ndarray,
    labels: np.ndarray | None = None,
    constraints: ConstraintSet | None = None,
    config: TrainConfig | None = None,
    rng: np.random.Generator | None = None,
    weights: np.ndarray | None = None,
    callback: Callable[[int, RbmModel], None] | None = None,
) -> tuple[RbmModel, list[dict]]:
    """Train a copy of ``model`` and return it with the recorded history.

    Weights are projected onto the constraint subspace after every update and
    once before the first one. ``labels`` are accepted for interface symmetry
    with the constraint builders and are not needed by the optimizer.
    """
    config = config or TrainConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    data = np.asarray(data, dtype=np.float64)
    if labels is not None and len(labels) != len(data):
        raise ValueError("labels and data differ in length")
    model = model.copy()
    if constraints is not None:
        if constraints.n_hidden != model.n_hidden:
            raise ValueError("constraint set and model disagree on hidden units")
        model.weights = project_weights(model.weights, constraints)
    quadratic = None
    if constraints is not None and constraints.quadratic is not None:
        q = constraints.quadratic
        quadratic = QuadraticConstraint(q.eigenvalues, q.eigenvectors, config.penalty_weight, q.applies_to)

    state = init_state(model, data, config, rng, weights)
    params = {"weights": model.weights, "visible_fields": model.visible_fields, "hidden_fields": model.hidden_fields}
    adam = _Adam({k: v.shape for k, v in params.items()}, config)
    batches = _batches(len(data), config, rng, weights)
    per_epoch = max(1, math.ceil(len(data) / min(config.batch_size, len(data))))
    activity = np.zeros(model.n_hidden)
    n_activity = 0
    n_reset = 0
    history: list[dict] = []
    start_update = int(model.metadata.get("iterations", 0))

    for t in range(1, config.n_updates + 1):
        batch = data[next(batches)]
        grad = pcd_gradient(model, batch, state, rng, config, quadratic)
        adam.step(params, {"weights": grad.weights, "visible_fields": grad.visible_fields, "hidden_fields": grad.hidden_fields})
        if constraints is not None:
            model.weights[...] = project_weights(model.weights, constraints)
        if not (np.all(np.isfinite(model.weights)) and np.all(np.isfinite(model.visible_fields))
                and np.all(np.isfinite(model.hidden_fields))):
            raise FloatingPointError(f"non-finite parameters at update {t}")

        if config.reset_units:
            mean_h = model.hidden_kind.mean(model.hidden_fields + model.visible_kind.embed(batch) @ model.weights)
            if model.hidden_kind.name == "spin":
                mean_h = 0.5 * (1.0 + mean_h)
            activity += mean_h.mean(axis=0)
            n_activity += 1
            if t % per_epoch == 0:
                epoch = t // per_epoch
                if epoch % config.reset_check_interval == 0:
                    n_reset += _reset_saturated(model, activity / n_activity, config, rng, adam)
                    if constraints is not None:
                        model.weights[...] = project_weights(model.weights, constraints)
                activity[:] = 0.0
                n_activity = 0

        if t % config.record_every == 0 or t == config.n_updates:
            res = linear_residuals(model.weights, constraints) if constraints is not None else np.zeros(0)
            penalty = quadratic_penalty_gradient(model.weights, quadratic)[1] if quadratic is not None else 0.0
            history.append(
                {
                    "update": start_update + t,
                    "pseudo_ll": pseudo_log_likelihood(model, batch, rng),
                    "grad_norm": grad.norm(),
                    "max_linear_residual": float(res.max()) if res.size else 0.0,
                    "quadratic_penalty": penalty,
                    "n_reset_units": n_reset,
                }
            )
        if callback is not None:
            callback(t, model)

    model.metadata["iterations"] = start_update + config.n_updates
    if constraints is not None:
        model.metadata["constraint_digest"] = constraints.digest()
        model.metadata["released"] = sorted(constraints.released)
    return model, history


HISTORY_COLUMNS = ("update", "pseudo_ll", "grad_norm", "max_linear_residual", "quadratic_penalty", "n_reset_units")


def write_history(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow(row)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
