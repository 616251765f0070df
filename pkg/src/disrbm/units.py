"""Unit kinds and their single-unit potentials.

Every layer of an RBM is made of units of one kind. A kind knows how to embed
configurations into the flat real representation used by the energy, how to
compute the log-partition of one unit given its input (the cumulant), its mean,
and how to draw samples from its conditional distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp, softmax


@dataclass(frozen=True)
class UnitKind:
    """Support of a unit: ``binary`` {0,1}, ``spin`` {-1,+1} or ``onehot`` with q states."""

    name: str
    q: int = 2

    def __post_init__(self) -> None:
        if self.name not in ("binary", "spin", "onehot"):
            raise ValueError(f"unknown unit kind {self.name!r}")
        if self.name == "onehot" and self.q < 2:
            raise ValueError("one-hot units need q >= 2")
        if self.name != "onehot" and self.q != 2:
            object.__setattr__(self, "q", 2)

    @property
    def is_onehot(self) -> bool:
        return self.name == "onehot"

    @property
    def width(self) -> int:
        """Number of flat coordinates per unit."""
        return self.q if self.is_onehot else 1

    def flat_size(self, n_units: int) -> int:
        return n_units * self.width

    def tag(self) -> int:
        return {"binary": 0, "spin": 1, "onehot": 2}[self.name]

    @staticmethod
    def from_tag(tag: int, q: int) -> "UnitKind":
        names = {0: "binary", 1: "spin", 2: "onehot"}
        if tag not in names:
            raise ValueError(f"unknown unit kind tag {tag}")
        return UnitKind(names[tag], q)

    def __str__(self) -> str:
        return f"onehot{self.q}" if self.is_onehot else self.name

    @staticmethod
    def parse(text: str) -> "UnitKind":
        text = text.strip().lower()
        if text.startswith("onehot"):
            return UnitKind("onehot", int(text[6:] or 21))
        return UnitKind(text)

    # -- configurations -------------------------------------------------------

    def validate(self, x: np.ndarray, n_units: int) -> None:
        if x.shape[-1] != n_units:
            raise ValueError(f"expected {n_units} units, got {x.shape[-1]}")
        if self.is_onehot:
            if np.any((x < 0) | (x >= self.q)) or np.any(x != np.round(x)):
                raise ValueError(f"one-hot states must be integers in [0, {self.q})")
        elif self.name == "binary":
            if np.any((x != 0) & (x != 1)):
                raise ValueError("binary units take values 0 or 1")
        elif np.any(np.abs(x) != 1):
            raise ValueError("spin units take values -1 or +1")

    def embed(self, x: np.ndarray) -> np.ndarray:
        """Flat float representation; one-hot indices become indicator vectors."""
        if not self.is_onehot:
            return np.asarray(x, dtype=np.float64)
        idx = np.asarray(x, dtype=np.intp)
        out = np.zeros(idx.shape + (self.q,))
        np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
        return out.reshape(idx.shape[:-1] + (idx.shape[-1] * self.q,))

    # -- potentials -----------------------------------------------------------

    def _split(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[:-1] + (-1, self.q))

    def cumulant(self, x: np.ndarray) -> np.ndarray:
        """log sum_s exp(x s) per unit, for flat inputs ``x`` (shape (..., flat))."""
        if self.name == "binary":
            return np.logaddexp(0.0, x)
        if self.name == "spin":
            return np.logaddexp(x, -x)
        return logsumexp(self._split(x), axis=-1)

    def mean(self, x: np.ndarray) -> np.ndarray:
        """Conditional mean in the flat representation."""
        if self.name == "binary":
            return expit(x)
        if self.name == "spin":
            return np.tanh(x)
        return softmax(self._split(x), axis=-1).reshape(x.shape)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw unit values given flat inputs; one-hot draws return state indices.

        Consumes exactly one uniform per unit from ``rng``.
        """
        if self.name == "binary":
            return (rng.random(x.shape) < expit(x)).astype(np.float64)
        if self.name == "spin":
            return np.where(rng.random(x.shape) < expit(2.0 * x), 1.0, -1.0)
        p = softmax(self._split(x), axis=-1)
        u = rng.random(p.shape[:-1])
        idx = (np.cumsum(p, axis=-1) < u[..., None]).sum(axis=-1)
        return np.minimum(idx, self.q - 1).astype(np.float64)


BINARY = UnitKind("binary")
SPIN = UnitKind("spin")


def onehot(q: int) -> UnitKind:
    return UnitKind("onehot", q)
