"""Dataset ingestion: IDX images, sequence alignments and synthetic generators."""

from __future__ import annotations

import csv
import gzip
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .units import BINARY, UnitKind, onehot

ALPHABET = "ACDEFGHIKLMNPQRSTVWY-"
GAP = ALPHABET.index("-")
N_STATES = len(ALPHABET)
_AA_INDEX = {c: i for i, c in enumerate(ALPHABET)}

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class LabeledDataset:
    """Configurations with class labels and sample weights.

    ``kind`` is the visible unit kind, or None for real-valued data.
    """

    configurations: np.ndarray
    labels: np.ndarray
    sample_weights: np.ndarray | None = None
    kind: UnitKind | None = BINARY
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.configurations = np.asarray(self.configurations, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.configurations)
        if self.sample_weights is None:
            self.sample_weights = np.ones(n)
        self.sample_weights = np.asarray(self.sample_weights, dtype=np.float64)
        if len(self.labels) != n or len(self.sample_weights) != n:
            raise ValueError("configurations, labels and weights differ in length")
        if np.any(self.sample_weights <= 0):
            raise ValueError("sample weights must be positive")

    def __len__(self) -> int:
        return len(self.configurations)

    @property
    def n_units(self) -> int:
        return self.configurations.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def normalized_weights(self) -> np.ndarray:
        return self.sample_weights / self.sample_weights.sum()

    def flat(self) -> np.ndarray:
        """Real matrix in the flat (embedded) representation."""
        return self.kind.embed(self.configurations) if self.kind is not None else self.configurations

    def subset(self, index: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            self.configurations[index], self.labels[index], self.sample_weights[index], self.kind, dict(self.metadata)
        )


# -- IDX -------------------------------------------------------------------------------


def _open(path: str | Path, mode: str = "rb"):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def read_idx(path: str | Path) -> np.ndarray:
    """Read an unsigned-byte IDX file (plain or gzipped)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    zero, dtype_code, ndim = raw[0] * 256 + raw[1], raw[2], raw[3]
    if zero != 0 or dtype_code != 0x08 or ndim not in (1, 3):
        raise ValueError(f"{path}: unsupported IDX magic {raw[:4].hex()}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise ValueError(f"{path}: truncated IDX header")
    shape = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = int(np.prod(shape))
    if len(raw) - header < count:
        raise ValueError(f"{path}: truncated IDX payload")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(shape)


def write_idx(path: str | Path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8 or array.ndim not in (1, 3):
        raise ValueError("IDX writer supports uint8 arrays with 1 or 3 dimensions")
    magic = IDX_IMAGES if array.ndim == 3 else IDX_LABELS
    with _open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(np.ascontiguousarray(array).tobytes())


def load_mnist_idx(
    images_path: str | Path,
    labels_path: str | Path,
    digit_filter: Iterable[int] | None = (0, 1),
    threshold: float = 0.5,
) -> LabeledDataset:
    """Binarized images (pixel/255 > threshold) with labels remapped to 0..D-1."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1:
        raise ValueError("expected an image file and a label file")
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    digits = sorted(set(digit_filter)) if digit_filter is not None else sorted(set(labels.tolist()))
    mask = np.isin(labels, digits)
    pixels = images[mask].reshape(int(mask.sum()), -1).astype(np.float64) / 255.0
    remap = {d: k for k, d in enumerate(digits)}
    mapped = np.array([remap[int(d)] for d in labels[mask]], dtype=np.int64)
    side = images.shape[1:]
    return LabeledDataset(
        (pixels > threshold).astype(np.float64), mapped, None, BINARY, {"source": "idx", "shape": list(side), "digits": digits}
    )


def invert_background(dataset: LabeledDataset, rng: np.random.Generator | None = None) -> LabeledDataset:
    """Originals (label 0) followed by their bit complements (label 1)."""
    if dataset.kind != BINARY:
        raise ValueError("background inversion needs binary units")
    x = dataset.configurations
    configs = np.concatenate([x, 1.0 - x])
    labels = np.concatenate([np.zeros(len(x), dtype=np.int64), np.ones(len(x), dtype=np.int64)])
    weights = np.concatenate([dataset.sample_weights, dataset.sample_weights])
    meta = dict(dataset.metadata, inverted=True)
    return LabeledDataset(configs, labels, weights, BINARY, meta)


# -- alignments --------------------------------------------------------------------------


@dataclass
class Alignment:
    sequences: np.ndarray
    names: list[str]
    column_mask: np.ndarray
    flagged: np.ndarray

    @property
    def length(self) -> int:
        return self.sequences.shape[1]

    def __len__(self) -> int:
        return len(self.sequences)

    def onehot(self) -> np.ndarray:
        return onehot(N_STATES).embed(self.sequences)


def parse_fasta(text: str) -> list[tuple[str, str]]:
    records: list[tuple[str, list[str]]] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            records.append((line[1:].split()[0] if len(line) > 1 else "", []))
        elif records:
            records[-1][1].append(line)
        else:
            raise ValueError("sequence data before the first header")
    return [(name, "".join(parts)) for name, parts in records]


def load_alignment(path: str | Path, max_gap_fraction: float = 0.5) -> Alignment:
    """Read an aligned FASTA file, drop insertions and gap-rich columns.

    Lowercase letters and '.' mark insertions and are removed. Unknown
    characters become gaps. Columns are kept when their gap fraction is below
    ``max_gap_fraction``.
    """
    text = Path(path).read_text()
    records = parse_fasta(text)
    if not records:
        raise ValueError(f"{path}: no sequences")
    rows = []
    unknown = 0
    for name, seq in records:
        kept = [c for c in seq if not (c.islower() or c == ".")]
        idx = []
        for c in kept:
            if c in _AA_INDEX:
                idx.append(_AA_INDEX[c])
            else:
                idx.append(GAP)
                unknown += 1
        rows.append(idx)
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError(f"{path}: aligned sequences have different lengths {sorted(lengths)}")
    if unknown:
        warnings.warn(f"{unknown} unknown characters mapped to the gap state")
    seqs = np.array(rows, dtype=np.int8)
    gap_fraction = (seqs == GAP).mean(axis=0)
    mask = gap_fraction < max_gap_fraction
    seqs = seqs[:, mask]
    flagged = np.all(seqs == GAP, axis=1)
    if np.any(flagged):
        warnings.warn(f"{int(flagged.sum())} sequences are entirely gaps after filtering")
    return Alignment(seqs, [n for n, _ in records], mask, flagged)


def _as_sequences(alignment: Alignment | np.ndarray) -> np.ndarray:
    return alignment.sequences if isinstance(alignment, Alignment) else np.asarray(alignment)


def sequence_weights(
    alignment: Alignment | np.ndarray,
    similarity_cutoff: float = 0.2,
    labels: np.ndarray | None = None,
    balance: bool = False,
    chunk: int = 2048,
) -> np.ndarray:
    """Inverse count of sequences closer than ``similarity_cutoff * L`` in Hamming distance.

    The sequence itself is counted. With ``balance`` the weights of each label
    class are rescaled so every class has the same total weight.
    """
    seqs = _as_sequences(alignment).astype(np.intp)
    n, length = seqs.shape
    if n == 0:
        raise ValueError("empty alignment")
    x = onehot(N_STATES).embed(seqs).astype(np.float32)
    limit = similarity_cutoff * length
    counts = np.zeros(n)
    for start in range(0, n, chunk):
        matches = x[start : start + chunk] @ x.T
        counts[start : start + chunk] = np.sum(length - matches < limit - 1e-6, axis=1)
    weights = 1.0 / counts
    if balance:
        if labels is None:
            raise ValueError("class rebalancing needs labels")
        labels = np.asarray(labels)
        classes = np.unique(labels)
        target = weights.sum() / len(classes)
        for c in classes:
            mask = labels == c
            weights[mask] *= target / weights[mask].sum()
    return weights


def per_site_frequencies(alignment: Alignment | np.ndarray, weights: np.ndarray | None = None, q: int = N_STATES) -> np.ndarray:
    """Weighted state frequencies per site, shape (L, q); rows sum to 1."""
    seqs = _as_sequences(alignment).astype(np.intp)
    w = np.ones(len(seqs)) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    x = onehot(q).embed(seqs).reshape(len(seqs), -1, q)
    return np.einsum("n,nlq->lq", w, x)


def read_label_sidecar(path: str | Path) -> dict[str, str]:
    """Map sequence id to label from a two-column CSV (id,label) with optional header."""
    out: dict[str, str] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}: expected id,label rows")
            if row[0] == "id" and row[1] == "label" and not out:
                continue
            out[row[0].strip()] = row[1].strip()
    return out


def alignment_dataset(
    alignment: Alignment,
    labels_by_id: dict[str, str] | None = None,
    similarity_cutoff: float = 0.2,
    balance: bool = False,
) -> LabeledDataset:
    """Labeled one-hot dataset from an alignment; unlabeled sequences are dropped when labels are given."""
    keep = np.arange(len(alignment))
    labels = np.zeros(len(alignment), dtype=np.int64)
    if labels_by_id is not None:
        keep = np.array([i for i, n in enumerate(alignment.names) if n in labels_by_id], dtype=np.intp)
        names = sorted({labels_by_id[alignment.names[i]] for i in keep})
        code = {name: k for k, name in enumerate(names)}
        labels = np.array([code[labels_by_id[alignment.names[i]]] for i in keep], dtype=np.int64)
    seqs = alignment.sequences[keep]
    weights = sequence_weights(seqs, similarity_cutoff, labels if balance else None, balance)
    return LabeledDataset(seqs, labels, weights, onehot(N_STATES), {"source": "alignment"})


# -- synthetic generators ------------------------------------------------------------------


def synthetic_gaussian_mixture(
    n: int,
    dim: int,
    means: Sequence[np.ndarray],
    covariances: Sequence[np.ndarray],
    rng: np.random.Generator,
) -> LabeledDataset:
    """Balanced draws from one Gaussian per class (``n // D`` samples per class)."""
    d = len(means)
    if d < 1 or len(covariances) != d:
        raise ValueError("need one covariance per mean")
    per_class = n // d
    configs, labels = [], []
    for k, (mu, cov) in enumerate(zip(means, covariances)):
        mu = np.asarray(mu, dtype=np.float64).reshape(dim)
        cov = np.asarray(cov, dtype=np.float64).reshape(dim, dim)
        if np.abs(cov - cov.T).max() > 1e-12 * max(1.0, np.abs(cov).max()):
            raise ValueError("covariance is not symmetric")
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -1e-10 * max(1.0, vals.max()):
            raise ValueError("covariance is not positive semi-definite")
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        configs.append(mu + rng.standard_normal((per_class, dim)) @ root.T)
        labels.append(np.full(per_class, k, dtype=np.int64))
    return LabeledDataset(np.concatenate(configs), np.concatenate(labels), None, None, {"source": "gaussian-mixture"})


def synthetic_potts_profiles(
    n: int,
    length: int,
    n_differing: int,
    rng: np.random.Generator,
    q: int = N_STATES,
    concentration: float = 0.2,
) -> tuple[LabeledDataset, np.ndarray, np.ndarray]:
    """Two classes of independent-site sequences whose profiles differ at ``n_differing`` sites.

    Returns the dataset, the two (length, q) profiles and the differing sites.
    """
    base = rng.dirichlet(np.full(q, concentration), size=length)
    other = base.copy()
    sites = np.sort(rng.choice(length, size=n_differing, replace=False))
    for s in sites:
        # move the dominant state to a different residue
        order = np.argsort(-base[s])
        other[s] = base[s][np.roll(order, 1)][np.argsort(order)]
    profiles = np.stack([base, other])
    per_class = n // 2
    seqs, labels = [], []
    for k in range(2):
        cum = np.cumsum(profiles[k], axis=1)
        u = rng.random((per_class, length, 1))
        seqs.append(np.minimum((cum[None] < u).sum(axis=2), q - 1))
        labels.append(np.full(per_class, k, dtype=np.int64))
    data = LabeledDataset(np.concatenate(seqs), np.concatenate(labels), None, onehot(q), {"source": "potts-profiles"})
    return data, profiles, sites
