"""Restricted Boltzmann machine: energy, conditionals, Gibbs sampling and exact oracles.

Configurations are arrays whose last axis runs over units; leading axes are
batch axes. One-hot visible layers hold state indices per site and are embedded
to indicator vectors when multiplied with the weights, which are stored flat as
``(n_visible * q, n_hidden)``.

Sampling functions take an explicit ``numpy.random.Generator``. Each call
consumes a fixed number of uniforms (one per sampled unit), so results are
reproducible for a given seed regardless of parameter values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import logsumexp

from .units import BINARY, SPIN, UnitKind

MAX_ENUMERATED_UNITS = 26


@dataclass
class RbmModel:
    weights: np.ndarray
    visible_fields: np.ndarray
    hidden_fields: np.ndarray
    visible_kind: UnitKind = BINARY
    hidden_kind: UnitKind = BINARY
    symmetric: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.visible_fields = np.asarray(self.visible_fields, dtype=np.float64)
        self.hidden_fields = np.asarray(self.hidden_fields, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a matrix")
        if self.hidden_kind.is_onehot:
            raise ValueError("one-hot hidden units are not supported")
        flat, m = self.weights.shape
        if flat % self.visible_kind.width:
            raise ValueError("weight rows do not match the visible unit width")
        if self.visible_fields.shape != (flat,) or self.hidden_fields.shape != (m,):
            raise ValueError("field shapes do not match the weight matrix")
        if self.symmetric:
            if self.visible_kind != SPIN or self.hidden_kind != SPIN:
                raise ValueError("symmetric models need spin units on both layers")
            if np.any(self.visible_fields) or np.any(self.hidden_fields):
                raise ValueError("symmetric models must have zero fields")
        if not (
            np.all(np.isfinite(self.weights))
            and np.all(np.isfinite(self.visible_fields))
            and np.all(np.isfinite(self.hidden_fields))
        ):
            raise FloatingPointError("non-finite RBM parameters")

    @property
    def n_visible(self) -> int:
        return self.weights.shape[0] // self.visible_kind.width

    @property
    def n_hidden(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "RbmModel":
        return RbmModel(
            self.weights.copy(),
            self.visible_fields.copy(),
            self.hidden_fields.copy(),
            self.visible_kind,
            self.hidden_kind,
            self.symmetric,
            dict(self.metadata),
        )

    @classmethod
    def zeros(
        cls,
        n_visible: int,
        n_hidden: int,
        visible_kind: UnitKind = BINARY,
        hidden_kind: UnitKind = BINARY,
        symmetric: bool = False,
    ) -> "RbmModel":
        flat = visible_kind.flat_size(n_visible)
        return cls(
            np.zeros((flat, n_hidden)),
            np.zeros(flat),
            np.zeros(n_hidden),
            visible_kind,
            hidden_kind,
            symmetric,
        )


def _check_visible(model: RbmModel, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.n_visible:
        raise ValueError(f"visible state has {v.shape[-1]} units, model has {model.n_visible}")
    return v


def _check_hidden(model: RbmModel, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != model.n_hidden:
        raise ValueError(f"hidden state has {h.shape[-1]} units, model has {model.n_hidden}")
    return h


def hidden_input(model: RbmModel, v: np.ndarray) -> np.ndarray:
    """Inputs I = W^T v received by the hidden units."""
    v = _check_visible(model, v)
    return model.visible_kind.embed(v) @ model.weights


def visible_input(model: RbmModel, h: np.ndarray) -> np.ndarray:
    """Flat inputs W h received by the visible units (fields excluded)."""
    h = _check_hidden(model, h)
    return h @ model.weights.T


def energy(model: RbmModel, v: np.ndarray, h: np.ndarray) -> np.ndarray:
    v = _check_visible(model, v)
    h = _check_hidden(model, h)
    x = model.visible_kind.embed(v)
    return -(x @ model.visible_fields) - h @ model.hidden_fields - np.sum((x @ model.weights) * h, axis=-1)


def sample_hidden_given_visible(
    model: RbmModel, v: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    return model.hidden_kind.sample(model.hidden_fields + hidden_input(model, v), rng)


def sample_visible_given_hidden(
    model: RbmModel, h: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    return model.visible_kind.sample(model.visible_fields + visible_input(model, h), rng)


def _validate_clamp(model: RbmModel, clamp: Mapping[int, float] | None) -> tuple[np.ndarray, np.ndarray]:
    if not clamp:
        return np.zeros(0, dtype=np.intp), np.zeros(0)
    idx = np.array(list(clamp.keys()), dtype=np.intp)
    val = np.array(list(clamp.values()), dtype=np.float64)
    if np.any((idx < 0) | (idx >= model.n_hidden)):
        raise ValueError(f"clamp index out of range for {model.n_hidden} hidden units")
    model.hidden_kind.validate(val, len(val))
    return idx, val


def gibbs_chain(
    model: RbmModel,
    v0: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    clamp: Mapping[int, float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Run ``steps`` rounds of h|v then v|h, holding clamped hidden units fixed.

    Clamped units are still drawn (so the random stream does not depend on the
    clamp) and then overwritten with their frozen values.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    idx, val = _validate_clamp(model, clamp)
    v = _check_visible(model, v0)
    h = None
    for _ in range(steps):
        h = sample_hidden_given_visible(model, v, rng)
        h[..., idx] = val
        v = sample_visible_given_hidden(model, h, rng)
    return v, h


def free_energy(model: RbmModel, v: np.ndarray) -> np.ndarray:
    """log sum_h exp(-E(v, h)), the log of the unnormalized visible marginal.

    Note the sign: this is the negative of the physicists' free energy.
    """
    v = _check_visible(model, v)
    x = model.visible_kind.embed(v)
    inputs = model.hidden_fields + x @ model.weights
    return x @ model.visible_fields + model.hidden_kind.cumulant(inputs).sum(axis=-1)


def hidden_free_energy(model: RbmModel, h: np.ndarray) -> np.ndarray:
    """log sum_v exp(-E(v, h)), the unnormalized hidden marginal."""
    h = _check_hidden(model, h)
    inputs = model.visible_fields + h @ model.weights.T
    return h @ model.hidden_fields + model.visible_kind.cumulant(inputs).sum(axis=-1)


def _enumeration_guard(model: RbmModel) -> None:
    if model.n_visible + model.n_hidden > MAX_ENUMERATED_UNITS:
        raise ValueError(
            f"exact enumeration limited to n_visible + n_hidden <= {MAX_ENUMERATED_UNITS}"
        )


def _enumerate_hidden(model: RbmModel) -> bool:
    """True when the hidden layer has fewer states than the visible layer."""
    vis_states = model.visible_kind.q ** model.n_visible
    return 2**model.n_hidden <= vis_states


def _chunked_logsumexp(states_fn, n_states: int, fn, chunk: int = 1 << 16) -> float:
    parts = []
    for start in range(0, n_states, chunk):
        parts.append(logsumexp(fn(states_fn(start, min(start + chunk, n_states)))))
    return float(logsumexp(parts))


def _state_block(kind: UnitKind, n_units: int):
    """Return a function producing rows [start, stop) of the full state table."""
    values = (
        np.arange(kind.q, dtype=np.float64)
        if kind.is_onehot
        else (np.array([0.0, 1.0]) if kind.name == "binary" else np.array([-1.0, 1.0]))
    )
    base = len(values)

    def block(start: int, stop: int) -> np.ndarray:
        codes = np.arange(start, stop)
        digits = np.empty((stop - start, n_units), dtype=np.intp)
        for j in range(n_units - 1, -1, -1):
            digits[:, j] = codes % base
            codes = codes // base
        return values[digits]

    return block


def exact_log_partition(model: RbmModel) -> float:
    """log Z by enumerating the layer with fewer states."""
    _enumeration_guard(model)
    if _enumerate_hidden(model):
        block = _state_block(model.hidden_kind, model.n_hidden)
        return _chunked_logsumexp(block, 2**model.n_hidden, lambda h: hidden_free_energy(model, h))
    n = model.visible_kind.q ** model.n_visible
    block = _state_block(model.visible_kind, model.n_visible)
    return _chunked_logsumexp(block, n, lambda v: free_energy(model, v))


def visible_states(model: RbmModel) -> np.ndarray:
    """All visible configurations (enumeration-sized models only)."""
    _enumeration_guard(model)
    n = model.visible_kind.q ** model.n_visible
    if n > 1 << 22:
        raise ValueError("visible layer too large to list")
    return _state_block(model.visible_kind, model.n_visible)(0, n)


def exact_visible_log_probs(model: RbmModel) -> tuple[np.ndarray, np.ndarray]:
    """(states, log P(v)) over every visible configuration."""
    states = visible_states(model)
    fe = free_energy(model, states)
    return states, fe - logsumexp(fe)


def exact_sample(model: RbmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Independent exact draws from P(v) by enumeration."""
    states, logp = exact_visible_log_probs(model)
    return states[rng.choice(len(states), size=n, p=np.exp(logp))]


def mean_log_likelihood(
    model: RbmModel,
    data: np.ndarray,
    log_z: float,
    weights: np.ndarray | None = None,
) -> float:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise ValueError("empty dataset")
    fe = free_energy(model, data)
    if weights is None:
        return float(fe.mean() - log_z)
    weights = np.asarray(weights, dtype=np.float64)
    return float(np.sum(weights * fe) / np.sum(weights) - log_z)
