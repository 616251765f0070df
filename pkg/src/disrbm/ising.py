"""Two-dimensional Ising model on a periodic square lattice.

Spins are int8 arrays of shape (L, L). Sampling kernels are compiled with
numba and draw from numba's internal generator, which is seeded from the
caller's ``numpy.random.Generator`` at every call so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np


@dataclass
class IsingLattice:
    spins: np.ndarray
    beta: float
    last_accepted: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        spins = np.asarray(self.spins)
        if spins.ndim != 2 or spins.shape[0] != spins.shape[1]:
            raise ValueError("spins must be an L x L array")
        if np.any(np.abs(spins) != 1):
            raise ValueError("spins must be -1 or +1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        self.spins = spins.astype(np.int8)

    @property
    def L(self) -> int:
        return self.spins.shape[0]

    @classmethod
    def random(cls, L: int, beta: float, rng: np.random.Generator) -> "IsingLattice":
        return cls(np.where(rng.random((L, L)) < 0.5, 1, -1).astype(np.int8), beta)


@dataclass(frozen=True)
class EffectiveIsingModel:
    """Ising energy plus a penalty (w*/beta)|sum v| against magnetized states."""

    beta: float
    w_star: float = 0.0

    def __post_init__(self) -> None:
        if self.beta < 0 or self.w_star < 0:
            raise ValueError("beta and w_star must be non-negative")


def neighbors(L: int, r: int, c: int) -> list[tuple[int, int]]:
    return [((r - 1) % L, c), ((r + 1) % L, c), (r, (c - 1) % L), (r, (c + 1) % L)]


def ising_energy(spins: np.ndarray) -> np.ndarray:
    """-sum over the 2 L^2 periodic bonds; accepts (L, L) or (n, L, L)."""
    if isinstance(spins, IsingLattice):
        spins = spins.spins
    s = np.asarray(spins, dtype=np.int64)
    right = np.roll(s, -1, axis=-1)
    down = np.roll(s, -1, axis=-2)
    return -(s * right + s * down).sum(axis=(-2, -1))


def magnetization_label(v: np.ndarray) -> int:
    """Sign of the total magnetization of one configuration; zero maps to -1."""
    return 1 if int(np.sum(v)) > 0 else -1


def magnetization_labels(samples: np.ndarray) -> np.ndarray:
    """Labels for a batch shaped (n, L, L) or (n, N)."""
    samples = np.asarray(samples)
    totals = samples.reshape(len(samples), -1).sum(axis=1, dtype=np.int64)
    return np.where(totals > 0, 1, -1).astype(np.int8)


# -- compiled kernels -----------------------------------------------------------------


@numba.njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@numba.njit(cache=True)
def _metropolis_sweep(s, beta, w_star):
    """L^2 random-site proposals; w_star > 0 adds the |M| penalty. Returns accepted flips."""
    L = s.shape[0]
    m = 0
    for r in range(L):
        for c in range(L):
            m += s[r, c]
    accepted = 0
    for _ in range(L * L):
        r = np.random.randint(L)
        c = np.random.randint(L)
        v = s[r, c]
        nb = s[(r - 1) % L, c] + s[(r + 1) % L, c] + s[r, (c - 1) % L] + s[r, (c + 1) % L]
        log_ratio = -2.0 * beta * v * nb
        if w_star > 0.0:
            log_ratio -= w_star * (abs(m - 2 * v) - abs(m))
        if log_ratio >= 0.0 or np.random.random() < np.exp(log_ratio):
            s[r, c] = -v
            m -= 2 * v
            accepted += 1
    return accepted


@numba.njit(cache=True)
def _wolff_step(s, beta, stack):
    L = s.shape[0]
    p_add = 1.0 - np.exp(-2.0 * beta)
    r0 = np.random.randint(L)
    c0 = np.random.randint(L)
    v = s[r0, c0]
    s[r0, c0] = -v
    stack[0] = r0 * L + c0
    top = 1
    size = 1
    while top > 0:
        top -= 1
        site = stack[top]
        r = site // L
        c = site % L
        for k in range(4):
            if k == 0:
                rr, cc = (r - 1) % L, c
            elif k == 1:
                rr, cc = (r + 1) % L, c
            elif k == 2:
                rr, cc = r, (c - 1) % L
            else:
                rr, cc = r, (c + 1) % L
            if s[rr, cc] == v and np.random.random() < p_add:
                s[rr, cc] = -v
                stack[top] = rr * L + cc
                top += 1
                size += 1
    return size


@numba.njit(cache=True)
def _hybrid_run(s, beta, n_samples, thinning, burn_in, out, mode, explore):
    """Run the selector loop; mode 0 hybrid, 1 Metropolis only, 2 Wolff only.

    The hybrid selector adapts during burn-in only. A choice that keeps tracking
    recent moves depends on the chain's history and biases the stationary
    distribution, so recorded samples come from a fixed mixture of the two
    kernels with the burn-in winner taken with probability 1 - explore.
    Returns counts of Metropolis sweeps and Wolff steps taken.
    """
    L = s.shape[0]
    n = L * L
    stack = np.empty(n, dtype=np.int64)
    avg_metro = -1.0
    avg_wolff = -1.0
    decay = 0.9
    p_wolff = 0.5
    n_metro = 0
    n_wolff = 0
    total = burn_in + n_samples * thinning
    recorded = 0
    for it in range(total):
        if mode == 1:
            use_wolff = False
        elif mode == 2:
            use_wolff = True
        elif it >= burn_in:
            if it == burn_in:
                if avg_metro < 0.0 or avg_wolff < 0.0:
                    p_wolff = 0.5
                elif avg_wolff > avg_metro:
                    p_wolff = 1.0 - explore
                else:
                    p_wolff = explore
            use_wolff = np.random.random() < p_wolff
        elif avg_metro < 0.0:
            use_wolff = False
        elif avg_wolff < 0.0:
            use_wolff = True
        elif np.random.random() < explore:
            use_wolff = avg_wolff < avg_metro
        else:
            use_wolff = avg_wolff > avg_metro
        if use_wolff:
            moved = _wolff_step(s, beta, stack)
            avg_wolff = moved if avg_wolff < 0.0 else decay * avg_wolff + (1.0 - decay) * moved
            n_wolff += 1
        else:
            moved = _metropolis_sweep(s, beta, 0.0)
            avg_metro = moved if avg_metro < 0.0 else decay * avg_metro + (1.0 - decay) * moved
            n_metro += 1
        if it >= burn_in and (it - burn_in + 1) % thinning == 0 and recorded < n_samples:
            out[recorded] = s
            recorded += 1
    return n_metro, n_wolff


@numba.njit(cache=True)
def _effective_run(s, beta, w_star, n_samples, thinning, burn_in, out):
    total = burn_in + n_samples * thinning
    recorded = 0
    for it in range(total):
        _metropolis_sweep(s, beta, w_star)
        if it >= burn_in and (it - burn_in + 1) % thinning == 0 and recorded < n_samples:
            out[recorded] = s
            recorded += 1


def _reseed(rng: np.random.Generator) -> None:
    _seed(int(rng.integers(0, 2**31 - 1)))


# -- public samplers --------------------------------------------------------------------


def metropolis_sweep(lattice: IsingLattice, rng: np.random.Generator) -> IsingLattice:
    """One sweep of L^2 single-spin Metropolis proposals (in place); returns the lattice."""
    _reseed(rng)
    lattice.last_accepted = _metropolis_sweep(lattice.spins, float(lattice.beta), 0.0)
    return lattice


def wolff_step(lattice: IsingLattice, rng: np.random.Generator) -> tuple[IsingLattice, int]:
    """Grow and flip one Wolff cluster (in place)."""
    _reseed(rng)
    stack = np.empty(lattice.L * lattice.L, dtype=np.int64)
    size = _wolff_step(lattice.spins, float(lattice.beta), stack)
    return lattice, int(size)


@dataclass
class SamplerStats:
    n_metropolis: int
    n_wolff: int

    @property
    def wolff_fraction(self) -> float:
        total = self.n_metropolis + self.n_wolff
        return self.n_wolff / total if total else 0.0


def hybrid_sampler(
    lattice: IsingLattice,
    n_samples: int,
    thinning: int,
    rng: np.random.Generator,
    burn_in: int = 1000,
    mode: str = "hybrid",
    explore: float = 0.05,
) -> tuple[np.ndarray, SamplerStats]:
    """Record ``n_samples`` configurations, one every ``thinning`` iterations after burn-in.

    Each iteration is a Metropolis sweep or a Wolff step. During burn-in the
    selector takes whichever has moved more spins on average recently, with a
    small ``explore`` fraction of iterations picking the other move; afterwards
    the choice is frozen into a fixed mixture so the recorded chain is exact.
    """
    if thinning < 1 or n_samples < 0 or burn_in < 0:
        raise ValueError("thinning must be >= 1 and counts non-negative")
    modes = {"hybrid": 0, "metropolis": 1, "wolff": 2}
    if mode not in modes:
        raise ValueError(f"unknown mode {mode!r}")
    _reseed(rng)
    out = np.empty((n_samples, lattice.L, lattice.L), dtype=np.int8)
    n_metro, n_wolff = _hybrid_run(
        lattice.spins, float(lattice.beta), n_samples, thinning, burn_in, out, modes[mode], explore
    )
    return out, SamplerStats(int(n_metro), int(n_wolff))


def effective_sampler(
    model: EffectiveIsingModel,
    L: int,
    n_samples: int,
    rng: np.random.Generator,
    thinning: int = 10,
    burn_in: int = 1000,
) -> np.ndarray:
    """Metropolis samples of P(v) proportional to exp(beta sum vv - w* |sum v|)."""
    spins = IsingLattice.random(L, model.beta, rng).spins
    _reseed(rng)
    out = np.empty((n_samples, L, L), dtype=np.int8)
    _effective_run(spins, float(model.beta), float(model.w_star), n_samples, thinning, burn_in, out)
    return out


# -- observables -------------------------------------------------------------------------


@dataclass
class Observables:
    m: float
    C: float
    chi: float

    def as_dict(self) -> dict:
        return {"m": self.m, "C": self.C, "chi": self.chi}


def observables(samples: np.ndarray, beta: float) -> Observables:
    """Magnetization, heat capacity and susceptibility per spin."""
    samples = np.asarray(samples)
    if samples.ndim == 2:
        samples = samples[None]
    if len(samples) == 0:
        raise ValueError("no samples")
    n = samples.shape[1] * samples.shape[2]
    mag = samples.reshape(len(samples), -1).astype(np.float64).sum(axis=1)
    e = ising_energy(samples).astype(np.float64)
    absm = np.abs(mag)
    return Observables(
        float(absm.mean() / n),
        float(beta**2 / n * e.var()),
        float(beta / n * (np.mean(mag**2) - absm.mean() ** 2)),
    )


def predict_w_star(beta: float, m_star: float, coordination: int = 4) -> float:
    if not 0.0 <= abs(m_star) <= 1.0:
        raise ValueError("m_star must lie in [-1, 1]")
    return beta * coordination * abs(m_star)


# -- exact enumeration (small lattices) -----------------------------------------------


@dataclass
class ExactIsing:
    """Energies and magnetizations of every configuration of an L x L lattice."""

    L: int
    energies: np.ndarray
    magnetizations: np.ndarray

    @classmethod
    def enumerate(cls, L: int) -> "ExactIsing":
        n = L * L
        if n > 20:
            raise ValueError("exact enumeration limited to 20 spins")
        codes = np.arange(2**n, dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(n)) & 1).astype(np.int8)
        spins = (2 * bits - 1).reshape(-1, L, L)
        return cls(L, ising_energy(spins).astype(np.float64), spins.reshape(len(spins), -1).sum(axis=1).astype(np.float64))

    def log_weights(self, beta: float, w_star: float = 0.0) -> np.ndarray:
        lw = -beta * self.energies - w_star * np.abs(self.magnetizations)
        return lw - lw.max()

    def probabilities(self, beta: float, w_star: float = 0.0) -> np.ndarray:
        w = np.exp(self.log_weights(beta, w_star))
        return w / w.sum()

    def magnetization_distribution(self, beta: float, w_star: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
        """Support and probabilities of the total magnetization."""
        p = self.probabilities(beta, w_star)
        values = np.arange(-self.L**2, self.L**2 + 1, 2)
        probs = np.array([p[self.magnetizations == v].sum() for v in values])
        return values, probs

    def observables(self, beta: float, w_star: float = 0.0) -> Observables:
        p = self.probabilities(beta, w_star)
        n = self.L**2
        e, mag = self.energies, self.magnetizations
        var_e = p @ e**2 - (p @ e) ** 2
        absm = p @ np.abs(mag)
        return Observables(float(absm / n), float(beta**2 / n * var_e), float(beta / n * (p @ mag**2 - absm**2)))
