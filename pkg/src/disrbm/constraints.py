"""Label-derived weight constraints.

First-order constraints are directions ``q`` that constrained weight columns
must be orthogonal to; they are enforced exactly by projection. Second-order
constraints are a symmetric matrix ``q2`` whose quadratic form on the
constrained columns is pushed to zero by a penalty. All data arguments are
flat real matrices (one row per sample); one-hot data must be embedded first.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rbm import RbmModel, hidden_input

DROP_TOLERANCE = 1e-10
DEFAULT_PENALTY_WEIGHT = 100.0


def _normalized_weights(weights: np.ndarray | None, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (n,) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("sample weights must be non-negative with a positive sum")
    return weights / weights.sum()


def _check_labeled(data: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    data = np.asarray(data, dtype=np.float64)
    labels = np.asarray(labels)
    if data.ndim != 2 or len(data) != len(labels) or len(data) < 2:
        raise ValueError("need at least two samples with one label each")
    if len(np.unique(labels)) < 2:
        raise ValueError("labels take a single value; the constraint direction would vanish")
    return data, labels


def _binary_label(labels: np.ndarray) -> np.ndarray:
    values = np.unique(labels)
    if len(values) != 2:
        raise ValueError("binary labels expected")
    return (labels == values[1]).astype(np.float64)


def q1_vector(data: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Covariance between the (0/1-coded) label and every visible coordinate."""
    data, labels = _check_labeled(data, labels)
    u = _binary_label(labels)
    p = _normalized_weights(weights, len(data))
    return (p * u) @ data - (p @ u) * (p @ data)


def q1_multiclass(
    data: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-class covariance directions.

    ``labels`` are integer classes 0..D-1 or a one-hot matrix. Returns
    ``(all_directions, independent)`` where the rows of ``all_directions`` sum to
    zero and ``independent`` holds the last D-1 rows.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        onehot = labels.astype(np.float64)
    else:
        classes = labels.astype(np.intp)
        if classes.min() < 0:
            raise ValueError("class labels must be non-negative")
        onehot = np.eye(classes.max() + 1)[classes]
    data = np.asarray(data, dtype=np.float64)
    if len(onehot) != len(data):
        raise ValueError("labels and data differ in length")
    if np.any(onehot.sum(axis=0) == 0):
        raise ValueError("every class must be present")
    p = _normalized_weights(weights, len(data))
    q = (onehot * p[:, None]).T @ data - np.outer(p @ onehot, p @ data)
    total = np.abs(q.sum(axis=0)).max()
    if total > 1e-10 * max(1.0, np.abs(q).max()):
        raise FloatingPointError(f"class directions do not sum to zero (residual {total:.3g})")
    return q, q[1:]


def q2_matrix(data: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Covariance between the label and every pairwise product of visible coordinates."""
    data, labels = _check_labeled(data, labels)
    u = _binary_label(labels)
    p = _normalized_weights(weights, len(data))
    mean_u = p @ u
    coef = p * (u - mean_u)
    q2 = (data * coef[:, None]).T @ data
    return 0.5 * (q2 + q2.T)


def mp_bounds(n_variables: int, n_samples: int) -> tuple[float, float]:
    """Edges of the Marchenko-Pastur bulk for aspect ratio n_variables / n_samples."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    r = n_variables / n_samples
    return (1.0 - np.sqrt(r)) ** 2, (1.0 + np.sqrt(r)) ** 2


def correlation_matrix(data: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Pearson correlation matrix; constant coordinates are dropped."""
    data = np.asarray(data, dtype=np.float64)
    p = _normalized_weights(weights, len(data))
    centered = data - p @ data
    std = np.sqrt(p @ centered**2)
    keep = std > 1e-12
    z = centered[:, keep] / std[keep]
    return (z * p[:, None]).T @ z


def mp_signal_rank(data: np.ndarray, weights: np.ndarray | None = None) -> int:
    """Number of correlation eigenvalues above the Marchenko-Pastur upper edge."""
    corr = correlation_matrix(data, weights)
    n_samples = len(data) if weights is None else _effective_count(weights)
    _, upper = mp_bounds(corr.shape[0], n_samples)
    return int(np.sum(np.linalg.eigvalsh(corr) > upper))


def _effective_count(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return float(w.sum() ** 2 / np.sum(w**2))


@dataclass(frozen=True)
class LinearConstraint:
    direction: np.ndarray
    applies_to: frozenset[int]

    def __post_init__(self) -> None:
        direction = np.asarray(self.direction, dtype=np.float64)
        if direction.ndim != 1 or not np.all(np.isfinite(direction)):
            raise ValueError("direction must be a finite vector")
        if np.linalg.norm(direction) == 0:
            raise ValueError("zero constraint direction")
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "applies_to", frozenset(int(i) for i in self.applies_to))


@dataclass(frozen=True)
class QuadraticConstraint:
    """Symmetric matrix stored as eigenpairs ``matrix = U diag(eigenvalues) U^T``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    penalty_weight: float = DEFAULT_PENALTY_WEIGHT
    applies_to: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        vals = np.asarray(self.eigenvalues, dtype=np.float64).reshape(-1)
        vecs = np.asarray(self.eigenvectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[1] != len(vals):
            raise ValueError("eigenvector matrix must have one column per eigenvalue")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be non-negative")
        object.__setattr__(self, "eigenvalues", vals)
        object.__setattr__(self, "eigenvectors", vecs)
        object.__setattr__(self, "applies_to", frozenset(int(i) for i in self.applies_to))

    @classmethod
    def from_matrix(
        cls,
        matrix: np.ndarray,
        penalty_weight: float = DEFAULT_PENALTY_WEIGHT,
        applies_to: Iterable[int] = (),
        normalize: bool = True,
        rank: int | None = None,
    ) -> "QuadraticConstraint":
        """Build from a symmetric matrix, optionally keeping the ``rank`` largest |eigenvalues|."""
        matrix = np.asarray(matrix, dtype=np.float64)
        scale = max(np.abs(matrix).max(), 1e-300)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("matrix must be square")
        if np.abs(matrix - matrix.T).max() > 1e-12 * scale:
            raise ValueError("matrix is not symmetric")
        vals, vecs = np.linalg.eigh(0.5 * (matrix + matrix.T))
        order = np.argsort(-np.abs(vals), kind="stable")
        if rank is not None:
            order = order[:rank]
        vals, vecs = vals[order], vecs[:, order]
        if normalize and len(vals) and np.abs(vals).max() > 0:
            vals = vals / np.abs(vals).max()
        return cls(vals, vecs, penalty_weight, frozenset(applies_to))

    @property
    def n_visible(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def rank(self) -> int:
        return len(self.eigenvalues)

    @property
    def inert(self) -> bool:
        return self.rank == 0 or self.penalty_weight == 0 or not np.any(self.eigenvalues)

    @property
    def matrix(self) -> np.ndarray:
        return (self.eigenvectors * self.eigenvalues) @ self.eigenvectors.T

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Matrix product q2 @ x without forming q2."""
        return self.eigenvectors @ (self.eigenvalues[:, None] * (self.eigenvectors.T @ x))

    def with_units(self, applies_to: Iterable[int]) -> "QuadraticConstraint":
        return QuadraticConstraint(self.eigenvalues, self.eigenvectors, self.penalty_weight, frozenset(applies_to))


def mp_truncate(
    matrix: np.ndarray,
    n_samples: int,
    penalty_weight: float = DEFAULT_PENALTY_WEIGHT,
    applies_to: Iterable[int] = (),
) -> QuadraticConstraint:
    """Keep the eigenpairs of a correlation-scale matrix above the Marchenko-Pastur edge.

    ``matrix`` is expected on correlation scale (unit-variance coordinates) so
    the null spectrum of pure noise fills ``[lambda_-, lambda_+]``.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    _, upper = mp_bounds(matrix.shape[0], n_samples)
    vals, vecs = np.linalg.eigh(0.5 * (matrix + matrix.T))
    keep = vals > upper
    if not np.any(keep):
        warnings.warn("no eigenvalue above the Marchenko-Pastur edge; quadratic constraint is inert")
    order = np.argsort(-vals[keep], kind="stable")
    return QuadraticConstraint(vals[keep][order], vecs[:, keep][:, order], penalty_weight, frozenset(applies_to))


def q2_lowrank(
    data: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    penalty_weight: float = DEFAULT_PENALTY_WEIGHT,
    applies_to: Iterable[int] = (),
) -> QuadraticConstraint:
    """Low-rank q2 whose rank is the summed per-class count of signal eigenvalues."""
    data, labels = _check_labeled(data, labels)
    q2 = q2_matrix(data, labels, weights)
    rank = 0
    for value in np.unique(labels):
        mask = labels == value
        rank += mp_signal_rank(data[mask], None if weights is None else np.asarray(weights)[mask])
    if rank == 0:
        warnings.warn("no class-wise signal eigenvalue; quadratic constraint is inert")
    return QuadraticConstraint.from_matrix(q2, penalty_weight, applies_to, normalize=True, rank=rank)


# -- Ising second-order constraint -------------------------------------------------


def _as_lattices(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 2:
        side = int(round(np.sqrt(samples.shape[1])))
        if side * side != samples.shape[1]:
            raise ValueError("flat Ising samples must have a square number of spins")
        samples = samples.reshape(len(samples), side, side)
    if samples.ndim != 3 or samples.shape[1] != samples.shape[2]:
        raise ValueError("Ising samples must be (n, L, L) or (n, L*L)")
    if np.any(np.abs(samples) != 1):
        raise ValueError("Ising samples must be spin valued")
    return samples


def _displacement_matrix(corr: np.ndarray) -> np.ndarray:
    """Expand a function of lattice displacement into an N x N matrix."""
    side = corr.shape[0]
    rows, cols = np.divmod(np.arange(side * side), side)
    dr = (rows[None, :] - rows[:, None]) % side
    dc = (cols[None, :] - cols[:, None]) % side
    return corr[dr, dc]


def ising_q2(samples: np.ndarray, method: str = "fft") -> np.ndarray:
    """Covariance of |magnetization| with pair products, averaged over lattice translations.

    Both methods estimate the same translation-averaged matrix: ``"fft"`` via a
    two-dimensional spectral autocorrelation, ``"direct"`` by explicit shifts.
    """
    lattices = _as_lattices(samples)
    n, side, _ = lattices.shape
    absm = np.abs(lattices.sum(axis=(1, 2)))
    if method == "fft":
        spectrum = np.fft.fft2(lattices)
        auto = np.fft.ifft2(np.abs(spectrum) ** 2).real / (side * side)
    elif method == "direct":
        auto = np.empty((n, side, side))
        for dr in range(side):
            for dc in range(side):
                shifted = np.roll(lattices, shift=(-dr, -dc), axis=(1, 2))
                auto[:, dr, dc] = (lattices * shifted).mean(axis=(1, 2))
    else:
        raise ValueError(f"unknown method {method!r}")
    corr = np.tensordot(absm, auto, axes=1) / n - absm.mean() * auto.mean(axis=0)
    corr[0, 0] = 0.0
    q2 = _displacement_matrix(corr)
    return 0.5 * (q2 + q2.T)


# -- constraint sets and projection ------------------------------------------------


def orthonormalize(directions: Sequence[np.ndarray], tol: float = DROP_TOLERANCE) -> np.ndarray:
    """Modified Gram-Schmidt; dependent directions are dropped with a warning."""
    basis: list[np.ndarray] = []
    for d in directions:
        v = np.array(d, dtype=np.float64)
        norm0 = np.linalg.norm(v)
        for b in basis:
            v -= (b @ v) * b
        for b in basis:
            v -= (b @ v) * b
        norm = np.linalg.norm(v)
        if norm <= tol * max(norm0, 1e-300):
            warnings.warn("dropping a linearly dependent constraint direction")
            continue
        basis.append(v / norm)
    n = len(directions[0]) if len(directions) else 0
    return np.array(basis).T if basis else np.zeros((n, 0))


@dataclass(frozen=True)
class ConstraintSet:
    n_hidden: int
    linear: tuple[LinearConstraint, ...] = ()
    quadratic: QuadraticConstraint | None = None
    released: frozenset[int] = frozenset()
    free_along: Mapping[int, int] = field(default_factory=dict)
    _groups: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "linear", tuple(self.linear))
        object.__setattr__(self, "released", frozenset(int(i) for i in self.released))
        object.__setattr__(self, "free_along", {int(k): int(v) for k, v in dict(self.free_along).items()})
        if any(i < 0 or i >= self.n_hidden for i in self.released):
            raise ValueError("released unit index out of range")
        sizes = {c.direction.shape[0] for c in self.linear}
        if self.quadratic is not None:
            sizes.add(self.quadratic.n_visible)
        if len(sizes) > 1:
            raise ValueError("constraint dimensions disagree")
        for c in self.linear:
            if any(i < 0 or i >= self.n_hidden for i in c.applies_to):
                raise ValueError("constraint applies to a hidden unit out of range")
        # group hidden units by the tuple of directions acting on them
        groups: dict[tuple[int, ...], list[int]] = {}
        for mu in range(self.n_hidden):
            key = tuple(k for k, c in enumerate(self.linear) if mu in c.applies_to)
            if key:
                groups.setdefault(key, []).append(mu)
        built = []
        for key, units in groups.items():
            basis = orthonormalize([self.linear[k].direction for k in key])
            built.append((np.array(units, dtype=np.intp), basis))
        object.__setattr__(self, "_groups", tuple(built))

    @classmethod
    def build(
        cls,
        n_hidden: int,
        directions: Sequence[np.ndarray] = (),
        released: Iterable[int] = (),
        quadratic: QuadraticConstraint | None = None,
        free_along: Mapping[int, int] | None = None,
    ) -> "ConstraintSet":
        """Constrain every non-released unit against every direction.

        ``free_along`` maps a released unit to the index of the one direction it
        stays free along; it remains orthogonal to the others.
        """
        released = frozenset(int(i) for i in released)
        free_along = dict(free_along or {})
        if not set(free_along) <= released:
            raise ValueError("free_along keys must be released units")
        constrained = [mu for mu in range(n_hidden) if mu not in released]
        linear = []
        for k, d in enumerate(directions):
            units = set(constrained) | {mu for mu, j in free_along.items() if j != k}
            linear.append(LinearConstraint(np.asarray(d, dtype=np.float64), frozenset(units)))
        if quadratic is not None and not quadratic.applies_to:
            quadratic = quadratic.with_units(constrained)
        return cls(n_hidden, tuple(linear), quadratic, released, free_along)

    @property
    def constrained_units(self) -> np.ndarray:
        units = set()
        for c in self.linear:
            units |= c.applies_to
        if self.quadratic is not None:
            units |= self.quadratic.applies_to
        return np.array(sorted(units), dtype=np.intp)

    @property
    def n_visible(self) -> int | None:
        if self.linear:
            return self.linear[0].direction.shape[0]
        if self.quadratic is not None:
            return self.quadratic.n_visible
        return None

    def groups(self) -> tuple:
        """(unit indices, orthonormal basis) pairs used by the projection."""
        return self._groups

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.n_hidden).tobytes())
        for c in self.linear:
            h.update(c.direction.tobytes())
            h.update(np.array(sorted(c.applies_to), dtype=np.int64).tobytes())
        if self.quadratic is not None:
            h.update(self.quadratic.eigenvalues.tobytes())
            h.update(self.quadratic.eigenvectors.tobytes())
            h.update(np.float64(self.quadratic.penalty_weight).tobytes())
            h.update(np.array(sorted(self.quadratic.applies_to), dtype=np.int64).tobytes())
        h.update(np.array(sorted(self.released), dtype=np.int64).tobytes())
        h.update(np.array(sorted(self.free_along.items()), dtype=np.int64).tobytes())
        return h.hexdigest()


def project_weights(weights: np.ndarray, constraints: ConstraintSet) -> np.ndarray:
    """Project each constrained column onto the orthogonal complement of its directions."""
    weights = np.array(weights, dtype=np.float64)
    if weights.shape[1] != constraints.n_hidden:
        raise ValueError("weight matrix and constraint set disagree on hidden units")
    if constraints.n_visible is not None and weights.shape[0] != constraints.n_visible:
        raise ValueError("weight matrix and constraint set disagree on visible size")
    for units, basis in constraints.groups():
        block = weights[:, units]
        weights[:, units] = block - basis @ (basis.T @ block)
    return weights


def linear_residuals(weights: np.ndarray, constraints: ConstraintSet) -> np.ndarray:
    """Scaled |q.w| / (|q||w|) for every (direction, constrained unit) pair."""
    out = []
    for c in constraints.linear:
        units = np.array(sorted(c.applies_to), dtype=np.intp)
        if len(units) == 0:
            continue
        cols = weights[:, units]
        norms = np.linalg.norm(cols, axis=0) * np.linalg.norm(c.direction)
        dots = np.abs(c.direction @ cols)
        out.append(np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0))
    return np.concatenate(out) if out else np.zeros(0)


def quadratic_penalty_gradient(
    weights: np.ndarray, quadratic: QuadraticConstraint
) -> tuple[np.ndarray, float]:
    """Penalty chi * ||W_c^T q2 W_c||_F^2 on the constrained columns W_c, and its gradient."""
    grad = np.zeros_like(weights, dtype=np.float64)
    units = np.array(sorted(quadratic.applies_to), dtype=np.intp)
    if quadratic.inert or len(units) == 0:
        return grad, 0.0
    w = weights[:, units]
    qw = quadratic.apply(w)
    gram = w.T @ qw
    penalty = quadratic.penalty_weight * float(np.sum(gram**2))
    grad[:, units] = 4.0 * quadratic.penalty_weight * (qw @ gram)
    return grad, penalty


@dataclass
class ResidualReport:
    rho: np.ndarray
    degenerate: np.ndarray
    max_linear_residual: float
    second_order_norm: float


def _pearson(u: np.ndarray, x: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    du = u - p @ u
    dx = x - p @ x
    cov = (p * du) @ dx
    var = np.sqrt((p @ du**2) * (p @ dx**2))
    degenerate = var <= 1e-12 * max(1.0, np.abs(x).max())
    rho = np.where(degenerate, 0.0, cov / np.where(degenerate, 1.0, var))
    return rho, degenerate


def constraint_residuals(
    model: RbmModel,
    constraints: ConstraintSet,
    data: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
) -> ResidualReport:
    """Label-input correlations and constraint violations for a model.

    ``data`` is in the model's visible representation (state indices for one-hot).
    """
    inputs = hidden_input(model, data)
    u = _binary_label(np.asarray(labels))
    p = _normalized_weights(weights, len(inputs))
    rho, degenerate = _pearson(u, inputs, p)
    res = linear_residuals(model.weights, constraints)
    units = constraints.constrained_units
    if len(units):
        x = inputs[:, units]
        coef = p * (u - p @ u)
        second = (x * coef[:, None]).T @ x
        second_norm = float(np.linalg.norm(second))
    else:
        second_norm = 0.0
    return ResidualReport(rho, degenerate, float(res.max()) if res.size else 0.0, second_norm)
