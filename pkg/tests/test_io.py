import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disrbm.constraints import ConstraintSet, QuadraticConstraint, q1_vector
from disrbm.data import LabeledDataset
from disrbm.io import (
    ContainerError,
    dataset_digest,
    export_constraints_text,
    load_constraints,
    load_dataset,
    load_ising_samples,
    load_model,
    peek_magic,
    save_constraints,
    save_dataset,
    save_ising_samples,
    save_model,
)
from disrbm.units import BINARY, SPIN, onehot

from conftest import random_model


@pytest.mark.parametrize("vk, hk, sym", [(BINARY, BINARY, False), (onehot(4), SPIN, False), (SPIN, SPIN, True)])
def test_model_round_trip(tmp_path, vk, hk, sym):
    model = random_model(5, 3, np.random.default_rng(0), vk, hk)
    if sym:
        model.visible_fields[:] = 0
        model.hidden_fields[:] = 0
        model.symmetric = True
    model.metadata.update(iterations=123, constraint_digest="abc", released=[1])
    save_model(model, tmp_path / "m.drbm")
    back = load_model(tmp_path / "m.drbm")
    assert back.weights.tobytes() == model.weights.tobytes()
    assert back.visible_fields.tobytes() == model.visible_fields.tobytes()
    assert back.hidden_fields.tobytes() == model.hidden_fields.tobytes()
    assert (back.visible_kind, back.hidden_kind, back.symmetric) == (vk, hk, sym)
    assert back.metadata == {"iterations": 123, "constraint_digest": "abc", "released": [1]}
    assert peek_magic(tmp_path / "m.drbm") == b"DRBM"


def test_constraints_round_trip(tmp_path, rng):
    data = (rng.random((60, 6)) < 0.4).astype(float)
    labels = rng.integers(0, 2, 60)
    q2 = QuadraticConstraint.from_matrix(np.cov(data.T), penalty_weight=7.0)
    cs = ConstraintSet.build(4, [q1_vector(data, labels), rng.normal(size=6)], [0, 3], q2, free_along={3: 1})
    save_constraints(cs, tmp_path / "c.dcon", "digest123")
    back, digest = load_constraints(tmp_path / "c.dcon")
    assert digest == "digest123" and back.digest() == cs.digest()
    assert back.released == cs.released and back.free_along == {3: 1}
    assert back.quadratic.penalty_weight == 7.0

    export_constraints_text(cs, tmp_path / "c.txt")
    lines = (tmp_path / "c.txt").read_text().splitlines()
    np.testing.assert_array_equal([float(x) for x in lines[0].split()], cs.linear[0].direction)


@pytest.mark.parametrize("kind", [BINARY, onehot(21), None])
def test_dataset_round_trip(tmp_path, rng, kind):
    configs = rng.integers(0, 2 if kind == BINARY else 21, (7, 4)).astype(float) if kind else rng.normal(size=(7, 4))
    ds = LabeledDataset(configs, rng.integers(0, 3, 7), rng.random(7) + 0.1, kind, {"source": "test"})
    save_dataset(ds, tmp_path / "d.dset")
    back = load_dataset(tmp_path / "d.dset")
    assert back.configurations.tobytes() == ds.configurations.tobytes()
    assert back.kind == kind and back.metadata == {"source": "test"}
    assert dataset_digest(back) == dataset_digest(ds)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 9), st.integers(0, 5), st.integers(0, 2**31 - 1))
def test_ising_round_trip(tmp_path_factory, L, n, seed):
    samples = np.where(np.random.default_rng(seed).random((n, L, L)) < 0.5, 1, -1).astype(np.int8)
    path = tmp_path_factory.mktemp("disn") / "s.disn"
    save_ising_samples(samples, 0.44, path)
    back, beta = load_ising_samples(path)
    assert beta == 0.44
    np.testing.assert_array_equal(back.reshape(n, L, L), samples)


def test_ising_rejects_bad_spins(tmp_path):
    with pytest.raises(ValueError):
        save_ising_samples(np.zeros((1, 2, 2)), 0.4, tmp_path / "x")


def test_digest_changes_with_content(rng):
    ds = LabeledDataset(np.eye(3), [0, 1, 0])
    other = LabeledDataset(np.eye(3), [0, 1, 1])
    assert dataset_digest(ds) != dataset_digest(other)


def test_bad_containers(tmp_path):
    model = random_model(3, 2, np.random.default_rng(1))
    save_model(model, tmp_path / "m")
    raw = (tmp_path / "m").read_bytes()
    cases = {
        "magic": b"XXXX" + raw[4:],
        "version": raw[:4] + (99).to_bytes(4, "little") + raw[8:],
        "truncated": raw[:-5],
        "trailing": raw + b"\0",
    }
    for name, payload in cases.items():
        (tmp_path / name).write_bytes(payload)
        with pytest.raises(ContainerError):
            load_model(tmp_path / name)
    with pytest.raises(ContainerError):
        load_dataset(tmp_path / "m")
