"""Annealed importance sampling estimates of log Z, forward (AIS) and reverse (RAISE).

The annealing path multiplies the weights by beta and keeps every field, so
the beta = 0 member is the independent model returned by :func:`base_model`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .rbm import RbmModel, exact_sample, gibbs_chain, _enumeration_guard, MAX_ENUMERATED_UNITS


@dataclass(frozen=True)
class AnnealSchedule:
    betas: np.ndarray
    n_walkers: int = 100
    gibbs_steps_per_beta: int = 1

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 2:
            raise ValueError("need at least two betas")
        if betas[0] != 0.0 or betas[-1] != 1.0 or np.any(np.diff(betas) <= 0):
            raise ValueError("betas must increase strictly from 0 to 1")
        if self.n_walkers < 1 or self.gibbs_steps_per_beta < 1:
            raise ValueError("walker and step counts must be positive")
        object.__setattr__(self, "betas", betas)

    @classmethod
    def uniform(cls, n_betas: int = 10_000, n_walkers: int = 100, gibbs_steps_per_beta: int = 1) -> "AnnealSchedule":
        return cls(np.linspace(0.0, 1.0, n_betas), n_walkers, gibbs_steps_per_beta)

    @property
    def n_betas(self) -> int:
        return len(self.betas)


def log_mean_exp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return float(logsumexp(values) - np.log(len(values)))


@dataclass
class LogZEstimate:
    log_z: float
    direction: str
    per_walker_values: np.ndarray
    n_failed: int = 0

    @property
    def spread(self) -> float:
        return float(np.std(self.per_walker_values))

    @property
    def stderr(self) -> float:
        """Standard error of the walker mean."""
        n = len(self.per_walker_values)
        return float(np.std(self.per_walker_values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def base_model(model: RbmModel) -> RbmModel:
    """The zero-weight model with the same fields."""
    base = model.copy()
    base.weights = np.zeros_like(model.weights)
    return base


def base_log_partition(model: RbmModel) -> float:
    return float(
        model.visible_kind.cumulant(model.visible_fields).sum() + model.hidden_kind.cumulant(model.hidden_fields).sum()
    )


def _sample_base_visible(model: RbmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    fields = np.broadcast_to(model.visible_fields, (n, model.visible_fields.shape[0]))
    return model.visible_kind.sample(fields, rng)


class _Annealer:
    """Free energies and Gibbs moves of the interpolated models."""

    def __init__(self, model: RbmModel) -> None:
        self.model = model
        self.vk = model.visible_kind
        self.hk = model.hidden_kind

    def inputs(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = self.vk.embed(v)
        return x @ self.model.visible_fields, x @ self.model.weights

    def log_f(self, linear: np.ndarray, inputs: np.ndarray, beta: float) -> np.ndarray:
        return linear + self.hk.cumulant(self.model.hidden_fields + beta * inputs).sum(axis=-1)

    def gibbs(self, inputs: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
        h = self.hk.sample(self.model.hidden_fields + beta * inputs, rng)
        return self.vk.sample(self.model.visible_fields + beta * (h @ self.model.weights.T), rng)


def _finish(per_walker: np.ndarray, direction: str) -> LogZEstimate:
    ok = np.isfinite(per_walker)
    if not np.any(ok):
        raise FloatingPointError("every walker produced a non-finite weight")
    values = per_walker[ok]
    return LogZEstimate(log_mean_exp(values), direction, values, int(np.sum(~ok)))


def ais(model: RbmModel, schedule: AnnealSchedule, rng: np.random.Generator) -> LogZEstimate:
    """Forward annealing from the base model; a stochastic lower bound on log Z."""
    ann = _Annealer(model)
    betas = schedule.betas
    v = _sample_base_visible(model, schedule.n_walkers, rng)
    log_w = np.zeros(schedule.n_walkers)
    linear, inputs = ann.inputs(v)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, len(betas)):
            log_w += ann.log_f(linear, inputs, betas[k]) - ann.log_f(linear, inputs, betas[k - 1])
            if k == len(betas) - 1:
                break
            for _ in range(schedule.gibbs_steps_per_beta):
                v = ann.gibbs(inputs, betas[k], rng)
                linear, inputs = ann.inputs(v)
    return _finish(base_log_partition(model) + log_w, "lower")


def raise_(
    model: RbmModel, schedule: AnnealSchedule, data_seed: np.ndarray, rng: np.random.Generator
) -> LogZEstimate:
    """Reverse annealing from seed configurations down to the base model.

    Seeds should be typical of the model (training data or equilibrated chains);
    they are cycled when fewer than ``n_walkers`` are given. The estimate is a
    stochastic upper bound on log Z when the seeds are exact model samples.
    """
    seeds = np.asarray(data_seed, dtype=np.float64)
    if seeds.ndim != 2 or seeds.shape[1] != model.n_visible or len(seeds) == 0:
        raise ValueError("seeds must be a nonempty matrix of visible configurations")
    ann = _Annealer(model)
    betas = schedule.betas
    v = seeds[np.arange(schedule.n_walkers) % len(seeds)].copy()
    log_w = np.zeros(schedule.n_walkers)
    linear, inputs = ann.inputs(v)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(len(betas) - 2, -1, -1):
            log_w += ann.log_f(linear, inputs, betas[k]) - ann.log_f(linear, inputs, betas[k + 1])
            if k == 0:
                break
            for _ in range(schedule.gibbs_steps_per_beta):
                v = ann.gibbs(inputs, betas[k], rng)
                linear, inputs = ann.inputs(v)
    return _finish(base_log_partition(model) - log_w, "upper")


def default_seeds(model: RbmModel, n: int, rng: np.random.Generator, burn_in: int = 1000) -> np.ndarray:
    """Exact samples for enumerable models, otherwise long Gibbs chains from base samples."""
    small = model.n_visible + model.n_hidden <= MAX_ENUMERATED_UNITS and model.visible_kind.q**model.n_visible <= 1 << 20
    if small:
        _enumeration_guard(model)
        return exact_sample(model, n, rng)
    v0 = _sample_base_visible(model, n, rng)
    return gibbs_chain(model, v0, burn_in, rng)[0]


@dataclass
class SandwichReport:
    ais: LogZEstimate
    raise_: LogZEstimate
    schedule: AnnealSchedule
    tolerance: float
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def gap(self) -> float:
        return self.raise_.log_z - self.ais.log_z

    @property
    def converged(self) -> bool:
        return abs(self.gap) < self.tolerance

    @property
    def verdict(self) -> str:
        return "converged" if self.converged else "not converged"

    @property
    def log_z(self) -> float:
        """Midpoint of the sandwich."""
        return 0.5 * (self.ais.log_z + self.raise_.log_z)

    def to_json(self) -> str:
        return json.dumps(
            {
                "log_z_ais": self.ais.log_z,
                "log_z_raise": self.raise_.log_z,
                "gap": self.gap,
                "n_betas": self.schedule.n_betas,
                "n_walkers": self.schedule.n_walkers,
                "seed": self.seed,
                "verdict": self.verdict,
                **self.extra,
            },
            indent=2,
        )


def sandwich_report(
    model: RbmModel,
    schedule: AnnealSchedule,
    rng: np.random.Generator,
    seeds: np.ndarray | None = None,
    tolerance: float = 0.2,
) -> SandwichReport:
    """Run AIS and RAISE on the same schedule and compare them."""
    if seeds is None:
        seeds = default_seeds(model, schedule.n_walkers, rng)
    lower = ais(model, schedule, rng)
    upper = raise_(model, schedule, seeds, rng)
    return SandwichReport(lower, upper, schedule, tolerance)
