"""Binary containers for checkpoints (DRBM), constraints (DCON), datasets (DSET) and Ising samples (DISN).

All containers are little-endian: a four-byte magic, a u32 format version, then
the payload. Real arrays are written as raw float64 so round trips are exact.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .constraints import ConstraintSet, LinearConstraint, QuadraticConstraint
from .data import LabeledDataset
from .rbm import RbmModel
from .units import UnitKind

VERSION = 1


class ContainerError(ValueError):
    """Malformed or incompatible container file."""


class _Writer:
    def __init__(self, magic: bytes) -> None:
        self.buf = io.BytesIO()
        self.buf.write(magic)
        self.u32(VERSION)

    def u8(self, x: int) -> None:
        self.buf.write(struct.pack("<B", x))

    def u32(self, x: int) -> None:
        self.buf.write(struct.pack("<I", x))

    def u64(self, x: int) -> None:
        self.buf.write(struct.pack("<Q", x))

    def f64(self, x: float) -> None:
        self.buf.write(struct.pack("<d", x))

    def array(self, a: np.ndarray, dtype: str = "<f8") -> None:
        self.buf.write(np.ascontiguousarray(a, dtype=dtype).tobytes())

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf.write(raw)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.buf.getvalue())


class _Reader:
    def __init__(self, path: str | Path, magic: bytes) -> None:
        self.raw = Path(path).read_bytes()
        self.pos = 0
        self.path = path
        found = self._take(4)
        if found != magic:
            raise ContainerError(f"{path}: expected magic {magic!r}, found {found!r}")
        version = self.u32()
        if version != VERSION:
            raise ContainerError(f"{path}: unsupported format version {version}")

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ContainerError(f"{self.path}: truncated file")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def array(self, shape: tuple[int, ...], dtype: str = "<f8") -> np.ndarray:
        dt = np.dtype(dtype)
        count = int(np.prod(shape))
        data = np.frombuffer(self._take(count * dt.itemsize), dtype=dt, count=count)
        return data.reshape(shape).astype(dt.newbyteorder("="))

    def text(self) -> str:
        return self._take(self.u32()).decode("utf-8")

    def done(self) -> None:
        if self.pos != len(self.raw):
            raise ContainerError(f"{self.path}: {len(self.raw) - self.pos} trailing bytes")


def peek_magic(path: str | Path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(4)


# -- DRBM --------------------------------------------------------------------------------


def save_model(model: RbmModel, path: str | Path) -> None:
    w = _Writer(b"DRBM")
    w.u32(model.n_visible)
    w.u32(model.n_hidden)
    for kind in (model.visible_kind, model.hidden_kind):
        w.u8(kind.tag())
        w.u32(kind.q)
    w.u8(int(model.symmetric))
    w.array(model.weights)
    w.array(model.visible_fields)
    w.array(model.hidden_fields)
    meta = dict(model.metadata)
    w.u64(int(meta.pop("iterations", 0)))
    w.text(str(meta.pop("constraint_digest", "")))
    w.text(json.dumps(meta, sort_keys=True))
    w.save(path)


def load_model(path: str | Path) -> RbmModel:
    r = _Reader(path, b"DRBM")
    n_visible, n_hidden = r.u32(), r.u32()
    vk = UnitKind.from_tag(r.u8(), r.u32())
    hk = UnitKind.from_tag(r.u8(), r.u32())
    symmetric = bool(r.u8())
    weights = r.array((vk.flat_size(n_visible), n_hidden))
    g = r.array((vk.flat_size(n_visible),))
    theta = r.array((n_hidden,))
    meta = {"iterations": r.u64()}
    digest = r.text()
    if digest:
        meta["constraint_digest"] = digest
    meta.update(json.loads(r.text()))
    r.done()
    return RbmModel(weights, g, theta, vk, hk, symmetric, meta)


# -- DCON --------------------------------------------------------------------------------


def save_constraints(constraints: ConstraintSet, path: str | Path, dataset_digest: str = "") -> None:
    n_vis = constraints.n_visible or 0
    w = _Writer(b"DCON")
    w.u32(constraints.n_hidden)
    w.u32(n_vis)
    index = {
        "linear": [sorted(c.applies_to) for c in constraints.linear],
        "released": sorted(constraints.released),
        "free_along": {str(k): v for k, v in sorted(constraints.free_along.items())},
    }
    quad = constraints.quadratic
    if quad is not None:
        index["quadratic"] = sorted(quad.applies_to)
    w.text(json.dumps(index, sort_keys=True))
    w.text(dataset_digest)
    for c in constraints.linear:
        w.array(c.direction)
    w.u8(int(quad is not None))
    if quad is not None:
        w.u32(quad.rank)
        w.f64(quad.penalty_weight)
        w.array(quad.eigenvalues)
        w.array(quad.eigenvectors)
    w.save(path)


def load_constraints(path: str | Path) -> tuple[ConstraintSet, str]:
    """Return the constraint set and the digest of the dataset it was built from."""
    r = _Reader(path, b"DCON")
    n_hidden, n_vis = r.u32(), r.u32()
    index = json.loads(r.text())
    dataset_digest = r.text()
    linear = [LinearConstraint(r.array((n_vis,)), frozenset(units)) for units in index["linear"]]
    quad = None
    if r.u8():
        rank = r.u32()
        chi = r.f64()
        vals = r.array((rank,))
        vecs = r.array((n_vis, rank))
        quad = QuadraticConstraint(vals, vecs, chi, frozenset(index["quadratic"]))
    r.done()
    free_along = {int(k): int(v) for k, v in index["free_along"].items()}
    return ConstraintSet(n_hidden, tuple(linear), quad, frozenset(index["released"]), free_along), dataset_digest


def export_constraints_text(constraints: ConstraintSet, path: str | Path) -> None:
    """One linear direction per line, space-separated decimals."""
    with open(path, "w") as fh:
        for c in constraints.linear:
            fh.write(" ".join(repr(float(x)) for x in c.direction) + "\n")


# -- DSET --------------------------------------------------------------------------------

_KIND_NONE = 255


def save_dataset(dataset: LabeledDataset, path: str | Path) -> None:
    w = _Writer(b"DSET")
    n, units = dataset.configurations.shape
    w.u64(n)
    w.u32(units)
    if dataset.kind is None:
        w.u8(_KIND_NONE)
        w.u32(0)
    else:
        w.u8(dataset.kind.tag())
        w.u32(dataset.kind.q)
    w.array(dataset.configurations)
    w.array(dataset.labels, "<i8")
    w.array(dataset.sample_weights)
    w.text(json.dumps(dataset.metadata, sort_keys=True))
    w.save(path)


def load_dataset(path: str | Path) -> LabeledDataset:
    r = _Reader(path, b"DSET")
    n, units = r.u64(), r.u32()
    tag, q = r.u8(), r.u32()
    kind = None if tag == _KIND_NONE else UnitKind.from_tag(tag, q)
    configs = r.array((n, units))
    labels = r.array((n,), "<i8")
    weights = r.array((n,))
    meta = json.loads(r.text())
    r.done()
    return LabeledDataset(configs, labels, weights, kind, meta)


# -- DISN --------------------------------------------------------------------------------


def save_ising_samples(samples: np.ndarray, beta: float, path: str | Path) -> None:
    """Spins (n, L, L) in {-1,+1}, stored as packed sign bits (1 for +1), one padded row per sample."""
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[1] != samples.shape[2]:
        raise ValueError("samples must have shape (n, L, L)")
    if np.any(np.abs(samples) != 1):
        raise ValueError("spins must be -1 or +1")
    n, L = samples.shape[0], samples.shape[1]
    w = _Writer(b"DISN")
    w.u32(L)
    w.f64(beta)
    w.u64(n)
    w.array(np.packbits(samples.reshape(n, L * L) > 0, axis=1), "u1")
    w.save(path)


def load_ising_samples(path: str | Path) -> tuple[np.ndarray, float]:
    r = _Reader(path, b"DISN")
    L = r.u32()
    beta = r.f64()
    n = r.u64()
    row = (L * L + 7) // 8
    bits = np.unpackbits(r.array((n, row), "u1"), axis=1, count=L * L)
    r.done()
    return (2 * bits.astype(np.int8) - 1).reshape(n, L, L), beta


def dataset_digest(dataset: LabeledDataset) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(dataset.configurations, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(dataset.sample_weights, dtype="<f8").tobytes())
    return h.hexdigest()
