"""Classifier probes of label information in hidden-unit inputs.

Probes are small fully connected networks (SELU hidden layers, softmax output)
trained with Adam on cross-entropy. Their held-out cross-entropy gives a lower
bound on the mutual information between the inputs and the label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax
from scipy.stats import rankdata

from .rbm import RbmModel, hidden_input

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946

DESK_ARCHITECTURES: tuple[tuple[int, ...], ...] = (
    (),
    (4,), (8,), (16,), (32,), (64,), (128,), (256,),
    (128, 4), (128, 16), (128, 64),
)
FULL_ARCHITECTURES: tuple[tuple[int, ...], ...] = (
    ((),)
    + tuple((2**n,) for n in range(11))
    + tuple((128, 2**n) for n in range(7))
    + tuple((256, 2**n) for n in range(8))
    + tuple((512, 2**n) for n in range(9))
)


def selu(x: np.ndarray) -> np.ndarray:
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_grad(x: np.ndarray) -> np.ndarray:
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


Params = list[tuple[np.ndarray, np.ndarray]]


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> Params:
    """LeCun-normal weights (the SELU-matched scale) and zero biases."""
    return [
        (rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b)), np.zeros(b))
        for a, b in zip(sizes[:-1], sizes[1:])
    ]


def forward(params: Params, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Logits and the per-layer cache needed by :func:`loss_and_grad`."""
    cache = []
    a = x
    for k, (w, b) in enumerate(params):
        z = a @ w + b
        cache.append((a, z))
        a = z if k == len(params) - 1 else selu(z)
    return a, cache


def loss_and_grad(params: Params, x: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
    """Mean cross-entropy (nats) of integer labels ``y`` and its gradient."""
    logits, cache = forward(params, x)
    logp = log_softmax(logits, axis=1)
    n = len(y)
    loss = -float(np.mean(logp[np.arange(n), y]))
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads: Params = [None] * len(params)  # type: ignore[list-item]
    for k in range(len(params) - 1, -1, -1):
        a, _ = cache[k]
        grads[k] = (a.T @ delta, delta.sum(axis=0))
        if k:
            delta = (delta @ params[k][0].T) * selu_grad(cache[k - 1][1])
    return loss, grads


@dataclass
class ProbeClassifier:
    widths: tuple[int, ...]
    params: Params
    classes: np.ndarray
    input_mean: np.ndarray
    input_scale: np.ndarray
    steps_trained: int = 0

    @property
    def n_params(self) -> int:
        return int(sum(w.size + b.size for w, b in self.params))

    def _standardize(self, inputs: np.ndarray) -> np.ndarray:
        return (np.asarray(inputs, dtype=np.float64) - self.input_mean) / self.input_scale

    def log_proba(self, inputs: np.ndarray) -> np.ndarray:
        return log_softmax(forward(self.params, self._standardize(inputs))[0], axis=1)

    def predict_proba(self, inputs: np.ndarray) -> np.ndarray:
        return softmax(forward(self.params, self._standardize(inputs))[0], axis=1)

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.predict_proba(inputs), axis=1)]

    def encode(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels)
        idx = np.searchsorted(self.classes, labels)
        idx = np.clip(idx, 0, len(self.classes) - 1)
        if np.any(self.classes[idx] != labels):
            raise ValueError("labels outside the classifier's classes")
        return idx


def train_probe(
    inputs: np.ndarray,
    labels: np.ndarray,
    widths: Sequence[int],
    steps: int,
    rng: np.random.Generator,
    learning_rate: float = 1e-3,
    batch_size: int = 128,
    plateau_window: int = 2000,
    plateau_tol: float = 1e-5,
) -> ProbeClassifier:
    """Minimize cross-entropy with Adam; stop early once the training loss plateaus.

    Inputs are standardized with training statistics stored in the classifier.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels)
    if inputs.ndim != 2 or len(inputs) != len(labels) or len(inputs) == 0:
        raise ValueError("inputs must be a nonempty matrix with one label per row")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("labels take a single value")
    mean = inputs.mean(axis=0)
    scale = inputs.std(axis=0)
    scale[scale < 1e-12] = 1.0
    clf = ProbeClassifier(tuple(int(w) for w in widths), [], classes, mean, scale)
    x = clf._standardize(inputs)
    y = clf.encode(labels)
    params = init_params([x.shape[1], *clf.widths, len(classes)], rng)
    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    b1, b2, eps = 0.9, 0.999, 1e-8
    n = len(x)
    bs = min(batch_size, n)
    monitor = rng.choice(n, size=min(n, 5000), replace=False)
    last = loss_and_grad(params, x[monitor], y[monitor])[0]
    t = 0
    while t < steps:
        t += 1
        idx = rng.integers(0, n, size=bs)
        _, grads = loss_and_grad(params, x[idx], y[idx])
        c1, c2 = 1 - b1**t, 1 - b2**t
        for k, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            mw, mb = m[k]
            vw, vb = v[k]
            mw = b1 * mw + (1 - b1) * gw
            mb = b1 * mb + (1 - b1) * gb
            vw = b2 * vw + (1 - b2) * gw * gw
            vb = b2 * vb + (1 - b2) * gb * gb
            m[k], v[k] = (mw, mb), (vw, vb)
            w -= learning_rate * (mw / c1) / (np.sqrt(vw / c2) + eps)
            b -= learning_rate * (mb / c1) / (np.sqrt(vb / c2) + eps)
        if t % plateau_window == 0:
            current = loss_and_grad(params, x[monitor], y[monitor])[0]
            if last - current < plateau_tol:
                break
            last = current
    clf.params = params
    clf.steps_trained = t
    return clf


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties averaged)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    values = np.unique(labels)
    if len(values) != 2:
        raise ValueError("AUC needs exactly two classes")
    pos = labels == values[1]
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc(classifier: ProbeClassifier, inputs: np.ndarray, labels: np.ndarray) -> float:
    """AUC of the class-1 probability (second of the classifier's sorted classes)."""
    if len(classifier.classes) != 2:
        raise ValueError("AUC needs a binary classifier")
    return auc_score(classifier.log_proba(inputs)[:, 1] - classifier.log_proba(inputs)[:, 0], labels)


def label_entropy(labels: np.ndarray) -> float:
    """Empirical label entropy in bits."""
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def held_out_log_prob(classifier: ProbeClassifier, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Mean log2-probability of the true label."""
    logp = classifier.log_proba(inputs)
    y = classifier.encode(labels)
    return float(np.mean(logp[np.arange(len(y)), y]) / np.log(2.0))


def mi_lower_bound(classifier: ProbeClassifier, inputs: np.ndarray, labels: np.ndarray) -> float:
    """Label entropy plus held-out mean log-probability, in bits (may be negative)."""
    return label_entropy(labels) + held_out_log_prob(classifier, inputs, labels)


def stratified_split(
    labels: np.ndarray, rng: np.random.Generator, validation_fraction: float = 0.2
) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    train, val = [], []
    for value in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == value))
        n_val = int(round(validation_fraction * len(idx)))
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


@dataclass
class MiBoundReport:
    label_entropy: float
    rows: list[dict] = field(default_factory=list)

    @property
    def best_bound(self) -> float:
        return max((r["mi_bound_bits"] for r in self.rows), default=0.0)

    def row(self, widths: Sequence[int]) -> dict:
        name = architecture_name(widths)
        for r in self.rows:
            if r["architecture"] == name:
                return r
        raise KeyError(name)

    def write_csv(self, path: str | Path) -> None:
        cols = ["architecture", "params", "val_cross_entropy", "auc", "mi_bound_bits", "mi_bound_raw"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(self.rows)


def architecture_name(widths: Sequence[int]) -> str:
    return "perceptron" if not widths else "x".join(str(w) for w in widths)


def probe_inputs(
    inputs: np.ndarray,
    labels: np.ndarray,
    architectures: Sequence[Sequence[int]],
    rng: np.random.Generator,
    steps: int = 50_000,
    validation_fraction: float = 0.2,
) -> MiBoundReport:
    """Train each architecture on a stratified split and report held-out bounds."""
    labels = np.asarray(labels)
    train_idx, val_idx = stratified_split(labels, rng, validation_fraction)
    report = MiBoundReport(label_entropy(labels[val_idx]))
    for widths in architectures:
        clf = train_probe(inputs[train_idx], labels[train_idx], widths, steps, rng)
        x_val, y_val = inputs[val_idx], labels[val_idx]
        raw = mi_lower_bound(clf, x_val, y_val)
        report.rows.append(
            {
                "architecture": architecture_name(widths),
                "params": clf.n_params,
                "val_cross_entropy": -held_out_log_prob(clf, x_val, y_val) * np.log(2.0),
                "auc": auc(clf, x_val, y_val) if len(clf.classes) == 2 else float("nan"),
                "mi_bound_bits": max(raw, 0.0),
                "mi_bound_raw": raw,
                "steps": clf.steps_trained,
            }
        )
    return report


def probe_sweep(
    model: RbmModel,
    data: np.ndarray,
    labels: np.ndarray,
    architectures: Sequence[Sequence[int]] = DESK_ARCHITECTURES,
    rng: np.random.Generator | None = None,
    units: Sequence[int] | None = None,
    steps: int = 50_000,
) -> MiBoundReport:
    """Probe the hidden inputs I(v), optionally restricted to a subset of hidden units."""
    rng = rng if rng is not None else np.random.default_rng()
    inputs = hidden_input(model, data)
    if units is not None:
        inputs = inputs[:, np.asarray(units, dtype=np.intp)]
    return probe_inputs(inputs, labels, architectures, rng, steps)


# -- subsampled-label overlap ---------------------------------------------------------


def overlap(q_full: np.ndarray, q_sub: np.ndarray) -> float:
    """Cosine between two direction estimates."""
    a = np.asarray(q_full, dtype=np.float64)
    b = np.asarray(q_sub, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("zero vector")
    return float(a @ b / (na * nb))


def overlap_theory(class_cov_traces: tuple[float, float], separation_sq: float, B: float) -> float:
    """Expected overlap when each class contributes ``B`` labeled samples.

    ``class_cov_traces`` are the traces of the two class covariances and
    ``separation_sq`` the squared distance between the class means.
    """
    if separation_sq <= 0:
        raise ValueError("separation must be positive")
    if B <= 0:
        raise ValueError("B must be positive")
    total = float(class_cov_traces[0]) + float(class_cov_traces[1])
    return float((1.0 + total / (B * separation_sq)) ** -0.5)


def subsample_labeled(
    data: np.ndarray, labels: np.ndarray, B: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced draw without replacement of B/2 samples per class (two classes)."""
    labels = np.asarray(labels)
    if B < 2 or B % 2:
        raise ValueError("B must be a positive even number")
    values = np.unique(labels)
    if len(values) != 2:
        raise ValueError("two classes required")
    picks = []
    for value in values:
        idx = np.flatnonzero(labels == value)
        if len(idx) < B // 2:
            raise ValueError(f"class {value!r} has fewer than {B // 2} members")
        picks.append(rng.choice(idx, size=B // 2, replace=False))
    sel = np.concatenate(picks)
    return np.asarray(data)[sel], labels[sel]
