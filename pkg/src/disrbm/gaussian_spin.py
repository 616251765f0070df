"""Closed-form maximum likelihood for an RBM with one spin hidden unit and Gaussian hidden units.

The model couples real visible units v (per-unit scales sigma) to a label spin
h1 = +-1 through weights ``w_star`` and to M-1 Gaussian hidden units through
``weights``. Integrating out the Gaussian units leaves, for each value of h1,
a Gaussian over v with precision D - W W^T, where D = diag(1/sigma^2). The
optimal Gaussian weights are read off the spectrum of the scaled within-class
covariance, in scaled coordinates x = sigma * w.

Three regimes are compared:

* ``unconstrained``: everything free.
* ``released``: Gaussian weights orthogonal to the class-separation direction,
  spin weights free.
* ``constrained``: Gaussian weights orthogonal to the separation direction and
  spin weights zero, so the model cannot tell the classes apart.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-3
CONDITION_LIMIT = 1e8
SEPARATION_FLOOR = 1e-10
REGIMES = ("unconstrained", "constrained", "released")


@dataclass
class GaussianSpinModel:
    sigma: np.ndarray
    weights: np.ndarray
    w_star: np.ndarray
    g: np.ndarray
    theta: float

    def precision(self) -> np.ndarray:
        return np.diag(1.0 / self.sigma**2) - self.weights @ self.weights.T

    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.precision())

    def class_means(self) -> tuple[np.ndarray, np.ndarray]:
        """Means of v given h1 = -1 and h1 = +1."""
        cov = self.covariance()
        return cov @ (self.g - self.w_star), cov @ (self.g + self.w_star)

    def log_likelihood(self, data: np.ndarray, labels: np.ndarray) -> float:
        """Mean log P(v, h1) over labeled data (labels coded 0/1)."""
        data = np.asarray(data, dtype=np.float64)
        h1 = _spin_labels(labels)
        prec = self.precision()
        cov = np.linalg.inv(prec)
        sign, logdet_prec = np.linalg.slogdet(prec)
        if sign <= 0:
            raise FloatingPointError("precision matrix is not positive definite")
        means = (self.g[None, :] + h1[:, None] * self.w_star[None, :]) @ cov
        resid = data - means
        quad = np.einsum("ij,jk,ik->i", resid, prec, resid)
        n = data.shape[1]
        gauss = -0.5 * n * np.log(2 * np.pi) + 0.5 * logdet_prec - 0.5 * quad
        a = self.theta + self.g @ cov @ self.w_star
        log_ph = a * h1 - np.logaddexp(a, -a)
        return float(np.mean(gauss + log_ph))


@dataclass
class SpectralFit:
    regime: str
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    spectrum: np.ndarray
    likelihood: float
    reduced_rank: bool = False
    condition_number: float = 1.0

    def __post_init__(self) -> None:
        if np.any(self.eigenvalues <= 1.0):
            raise ValueError("selected eigenvalues must exceed 1")

    @property
    def ill_conditioned(self) -> bool:
        return self.condition_number > CONDITION_LIMIT


def _spin_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    values = np.unique(labels)
    if len(values) != 2:
        raise ValueError("two classes required")
    return np.where(labels == values[1], 1.0, -1.0)


def estimate_sigma(data: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(data, dtype=np.float64).std(axis=0), SIGMA_FLOOR)


def spin_direction(data: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Covariance <h1 v> - <h1><v> with h1 = +-1; half the class-mean difference when balanced."""
    data = np.asarray(data, dtype=np.float64)
    h1 = _spin_labels(labels)
    return (h1 - h1.mean()) @ data / len(data)


def _sorted_eigh(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Descending eigenpairs; each eigenvector's largest-magnitude entry is positive."""
    vals, vecs = np.linalg.eigh(0.5 * (matrix + matrix.T))
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    pivot = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def build_ctilde(data: np.ndarray, labels: np.ndarray, sigma: np.ndarray | None = None) -> np.ndarray:
    """Scaled within-class covariance diag(1/sigma) (C - q q^T) diag(1/sigma)."""
    data = np.asarray(data, dtype=np.float64)
    h1 = _spin_labels(labels)
    if abs(h1.mean()) > 0.05:
        warnings.warn("classes are unbalanced; the spectral solution assumes balance")
    sigma = estimate_sigma(data) if sigma is None else np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    q = spin_direction(data, labels)
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / len(data)
    mat = (cov - np.outer(q, q)) / np.outer(sigma, sigma)
    return 0.5 * (mat + mat.T)


def projector(direction: np.ndarray) -> np.ndarray:
    direction = np.asarray(direction, dtype=np.float64)
    norm2 = direction @ direction
    if norm2 == 0:
        raise ValueError("zero direction")
    return np.eye(len(direction)) - np.outer(direction, direction) / norm2


def fit(
    data: np.ndarray,
    labels: np.ndarray,
    M: int,
    regime: str = "unconstrained",
    sigma: np.ndarray | None = None,
) -> tuple[GaussianSpinModel, SpectralFit]:
    """Maximum-likelihood Gaussian-Spin model with M hidden units (one spin, M-1 Gaussian)."""
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    if M < 1:
        raise ValueError("M must be >= 1")
    data = np.asarray(data, dtype=np.float64)
    sigma = estimate_sigma(data) if sigma is None else np.asarray(sigma, dtype=np.float64)
    h1 = _spin_labels(labels)
    ctilde = build_ctilde(data, labels, sigma)
    q = spin_direction(data, labels)
    # a separation at roundoff level would project out an arbitrary direction
    if regime == "unconstrained" or np.linalg.norm(q / sigma) < SEPARATION_FLOOR:
        matrix = ctilde
    else:
        proj = projector(q / sigma)
        matrix = proj @ ctilde @ proj
    spectrum, vecs = _sorted_eigh(matrix)
    keep = min(M - 1, int(np.sum(spectrum > 1.0)))
    reduced = keep < M - 1
    if reduced:
        warnings.warn(f"only {keep} eigenvalues above 1; fitting with reduced rank")
    lam, u = spectrum[:keep], vecs[:, :keep]
    scaled = u * np.sqrt(1.0 - 1.0 / lam)
    weights = scaled / sigma[:, None]

    prec = np.diag(1.0 / sigma**2) - weights @ weights.T
    cond = float(np.linalg.cond(prec))
    cov = np.linalg.inv(prec)
    pos, neg = data[h1 > 0], data[h1 < 0]
    if regime == "constrained":
        w_star = np.zeros(data.shape[1])
        g = prec @ data.mean(axis=0)
    else:
        w_star = prec @ (0.5 * (pos.mean(axis=0) - neg.mean(axis=0)))
        g = prec @ (0.5 * (pos.mean(axis=0) + neg.mean(axis=0)))
    p_plus = np.mean(h1 > 0)
    theta = float(np.arctanh(2 * p_plus - 1) - g @ cov @ w_star)
    model = GaussianSpinModel(sigma, weights, w_star, g, theta)
    result = SpectralFit(regime, lam, u, spectrum, model.log_likelihood(data, labels), reduced, cond)
    if result.ill_conditioned:
        warnings.warn(f"precision matrix condition number {cond:.3g} exceeds {CONDITION_LIMIT:g}")
    return model, result


def gs_likelihood(fit: SpectralFit, g: np.ndarray | None = None, q1: np.ndarray | None = None) -> float:
    """Spectral likelihood term 1/2 sum(lambda - 1 - log lambda) - log cosh(g . q1).

    The constrained regime ignores ``q1`` (its separation direction is zero).
    """
    lam = np.asarray(fit.eigenvalues, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("eigenvalues must be positive")
    value = 0.5 * float(np.sum(lam - 1.0 - np.log(lam)))
    if fit.regime != "constrained" and g is not None and q1 is not None:
        x = float(np.dot(g, q1))
        value -= float(np.logaddexp(x, -x) - np.log(2.0))
    return value


@dataclass
class InterlacingReport:
    eigenvalues: np.ndarray
    projected: np.ndarray
    gaps: np.ndarray
    max_violation: float
    tolerance: float

    @property
    def holds(self) -> bool:
        return self.max_violation <= self.tolerance


def poincare_check(ctilde: np.ndarray, q1: np.ndarray, tol: float = 1e-9) -> InterlacingReport:
    """Compare the spectrum of a symmetric matrix with that of its compression orthogonal to q1.

    The compressed spectrum is computed on the complement of q1 (N-1 values)
    and reported with the zero eigenvalue along q1 appended last.
    """
    ctilde = np.asarray(ctilde, dtype=np.float64)
    scale = max(np.abs(ctilde).max(), 1.0)
    if np.abs(ctilde - ctilde.T).max() > 1e-9 * scale:
        raise ValueError("matrix is not symmetric")
    q1 = np.asarray(q1, dtype=np.float64)
    if not np.any(q1):
        raise ValueError("zero direction")
    # orthonormal basis of the complement of q1 from a full QR factorization
    basis = np.linalg.qr(np.column_stack([q1, np.eye(len(q1))]))[0][:, 1 : len(q1)]
    lam = _sorted_eigh(ctilde)[0]
    inner = _sorted_eigh(basis.T @ ctilde @ basis)[0]
    upper = np.max(inner - lam[:-1], initial=0.0)
    lower = np.max(lam[1:] - inner, initial=0.0)
    projected = np.append(inner, 0.0)
    return InterlacingReport(lam, projected, lam - projected, float(max(upper, lower) / scale), tol)


def gs_cost_table(data: np.ndarray, labels: np.ndarray, M: int, sigma: np.ndarray | None = None) -> dict:
    """Likelihoods of the three regimes and the erasure / disentanglement costs."""
    values = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for regime in REGIMES:
            values[regime] = fit(data, labels, M, regime, sigma)[1].likelihood
    return {
        "L_unconstr": values["unconstrained"],
        "L_constr": values["constrained"],
        "L_rel": values["released"],
        "delta_part_erasure": values["unconstrained"] - values["constrained"],
        "delta_disent": values["unconstrained"] - values["released"],
    }
