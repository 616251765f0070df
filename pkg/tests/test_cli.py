import csv
import json

import numpy as np
import pytest

from disrbm import io as dio
from disrbm.cli import main, parse_clamp, parse_grid, read_config_file
from disrbm.data import LabeledDataset
from disrbm.ising import magnetization_labels
from disrbm.rbm import RbmModel, exact_log_partition, mean_log_likelihood

from conftest import MNIST_IMAGES, MNIST_LABELS, random_model


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def mnist_small(workdir):
    path = workdir / "mnist.dset"
    assert main(["make-dataset", "mnist", "--images", str(MNIST_IMAGES), "--labels", str(MNIST_LABELS),
                 "--limit", "120", "--seed", "1", "--out", str(path)]) == 0
    return path


@pytest.fixture
def small_data(workdir):
    rng = np.random.default_rng(0)
    labels = np.repeat([0, 1], 100)
    configs = (rng.random((200, 6)) < np.where(labels[:, None] == 1, 0.8, 0.2)).astype(float)
    path = workdir / "small.dset"
    dio.save_dataset(LabeledDataset(configs, labels), path)
    return path


@pytest.fixture
def released_checkpoint(workdir):
    model = random_model(6, 3, np.random.default_rng(2))
    model.metadata["released"] = [0]
    path = workdir / "released.drbm"
    dio.save_model(model, path)
    return path


# -- helpers ---------------------------------------------------------------------------------


def test_parse_grid():
    np.testing.assert_allclose(parse_grid("0.35:0.50:0.05"), [0.35, 0.40, 0.45, 0.50])
    np.testing.assert_allclose(parse_grid("1,2.5"), [1.0, 2.5])


def test_parse_clamp():
    assert parse_clamp("0=1,2=0", 3) == {0: 1.0, 2: 0.0}
    assert parse_clamp(None, 3) == {}
    with pytest.raises(ValueError):
        parse_clamp("5=1", 3)


def test_read_config_file(tmp_path):
    (tmp_path / "a.json").write_text('{"n_hidden": 4}')
    (tmp_path / "b.cfg").write_text("# comment\nn_hidden = 4\nlearning_rate = 0.01\n")
    assert read_config_file(str(tmp_path / "a.json")) == {"n_hidden": 4}
    assert read_config_file(str(tmp_path / "b.cfg")) == {"n_hidden": "4", "learning_rate": "0.01"}


# -- exit codes ------------------------------------------------------------------------------


def test_missing_file_is_io_error(workdir):
    assert main(["sample", "--checkpoint", "absent.drbm", "--out", "x.dset", "--seed", "1"]) == 4


def test_bad_magic_is_validation_error(workdir, small_data):
    assert main(["sample", "--checkpoint", str(small_data), "--out", "x.dset", "--seed", "1"]) == 2


def test_unknown_train_option_is_validation_error(workdir, small_data):
    code = main(["train", "--dataset", str(small_data), "--n-hidden", "2", "--out", "m.drbm", "--set", "nope=1"])
    assert code == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_training_is_numerical_error(workdir, small_data):
    code = main(["train", "--dataset", str(small_data), "--n-hidden", "2", "--out", "m.drbm", "--seed", "1",
                 "--set", "learning_rate=1e300", "--set", "n_updates=50"])
    assert code == 3


def test_clamp_on_missing_unit(workdir, released_checkpoint):
    assert main(["sample", "--checkpoint", str(released_checkpoint), "--clamp", "7=1", "--out", "s.dset", "--seed", "1"]) == 2


def test_dimension_mismatch(workdir, mnist_small, released_checkpoint):
    assert main(["evaluate-ll", "--checkpoints", str(released_checkpoint), "--test-data", str(mnist_small),
                 "--out", "ll.csv", "--seed", "1"]) == 2


# -- configuration -----------------------------------------------------------------------------


def test_dry_run_has_no_side_effects(workdir, small_data, capsys):
    assert main(["train", "--dataset", str(small_data), "--n-hidden", "3", "--out", "m.drbm", "--dry-run",
                 "--seed", "5", "--set", "n_updates=7"]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["seed"] == 5 and resolved["train"]["n_updates"] == 7
    assert not (workdir / "m.drbm").exists()


def test_config_file_merges_with_flags(workdir, small_data, capsys):
    (workdir / "run.json").write_text(json.dumps({"n_hidden": 9, "learning_rate": 0.02, "out": "cfg.drbm"}))
    assert main(["train", "--dataset", str(small_data), "--n-hidden", "3", "--config", "run.json", "--dry-run",
                 "--seed", "1"]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["n_hidden"] == 3 and resolved["out"] == "cfg.drbm"
    assert resolved["train"]["learning_rate"] == 0.02


def test_missing_seed_is_reported(workdir, small_data, capsys):
    assert main(["gs-analyze", "--dataset", str(small_data), "--M", "2", "--dry-run"]) == 0
    assert "seed: " in capsys.readouterr().err


# -- commands ---------------------------------------------------------------------------------


def test_train_is_deterministic(workdir, small_data):
    args = ["train", "--dataset", str(small_data), "--n-hidden", "3", "--seed", "11", "--set", "n_updates=60"]
    assert main(args + ["--out", "a.drbm", "--history", "h.csv"]) == 0
    assert main(args + ["--out", "b.drbm"]) == 0
    a, b = dio.load_model("a.drbm"), dio.load_model("b.drbm")
    assert a.weights.tobytes() == b.weights.tobytes()
    assert len(_rows("h.csv")) > 0


def test_train_with_constraints(workdir, small_data):
    assert main(["build-constraints", "--dataset", str(small_data), "--n-hidden", "3", "--released", "0",
                 "--out", "c.dcon", "--text", "c.txt"]) == 0
    assert main(["train", "--dataset", str(small_data), "--n-hidden", "3", "--constraints", "c.dcon",
                 "--out", "m.drbm", "--seed", "2", "--set", "n_updates=30"]) == 0
    model = dio.load_model("m.drbm")
    cs, _ = dio.load_constraints("c.dcon")
    assert np.abs(cs.linear[0].direction @ model.weights[:, 1:]).max() < 1e-10
    assert model.metadata["released"] == [0]


def test_sample_zero_weight_marginals(workdir):
    fields = np.array([-1.0, 0.0, 2.0])
    dio.save_model(RbmModel(np.zeros((3, 2)), fields, np.zeros(2)), "zero.drbm")
    assert main(["sample", "--checkpoint", "zero.drbm", "--n", "20000", "--steps", "2", "--out", "s.dset",
                 "--seed", "3"]) == 0
    v = dio.load_dataset("s.dset").configurations
    p = 1 / (1 + np.exp(-fields))
    assert np.all(np.abs(v.mean(0) - p) < 4 * np.sqrt(p * (1 - p) / len(v)))
    assert len(_rows("s.free_energy.csv")) == 20000


def test_sample_rejects_zero_steps(workdir, released_checkpoint):
    assert main(["sample", "--checkpoint", str(released_checkpoint), "--steps", "0", "--out", "s.dset",
                 "--seed", "1"]) == 2


def test_morph_flip_at_zero_and_single_frame(workdir, released_checkpoint):
    assert main(["morph", "--checkpoint", str(released_checkpoint), "--flip-at", "0", "--total-steps", "20",
                 "--record-every", "5", "--out", "m.dset", "--seed", "1"]) == 0
    rows = _rows("m.trajectory.csv")
    assert len(rows) == 4 and all(float(r["clamp"]) == 0.0 for r in rows)

    assert main(["morph", "--checkpoint", str(released_checkpoint), "--flip-at", "3", "--total-steps", "7",
                 "--record-every", "7", "--n-chains", "4", "--out", "one.dset", "--seed", "1"]) == 0
    assert len(_rows("one.trajectory.csv")) == 1 and len(dio.load_dataset("one.dset")) == 4


def test_morph_argument_errors(workdir, released_checkpoint):
    base = ["morph", "--checkpoint", str(released_checkpoint), "--out", "m.dset", "--seed", "1"]
    assert main(base + ["--flip-at", "20", "--total-steps", "20"]) == 2
    assert main(base + ["--flip-at", "2", "--total-steps", "20", "--released-unit", "1"]) == 2
    dio.save_model(random_model(6, 3, np.random.default_rng(0)), "plain.drbm")
    assert main(["morph", "--checkpoint", "plain.drbm", "--flip-at", "1", "--total-steps", "5", "--out", "m.dset"]) == 2


def test_evaluate_ll_matches_enumeration_and_duplicate_has_zero_cost(workdir, small_data, released_checkpoint):
    assert main(["evaluate-ll", "--checkpoints", str(released_checkpoint), str(released_checkpoint),
                 str(released_checkpoint), "--roles", "unconstrained,constrained,released", "--test-data",
                 str(small_data), "--n-betas", "2000", "--n-walkers", "100", "--out", "ll.csv", "--seed", "4"]) == 0
    rows = _rows("ll.csv")
    model = dio.load_model(released_checkpoint)
    exact = mean_log_likelihood(model, dio.load_dataset(small_data).configurations, exact_log_partition(model))
    assert abs(float(rows[0]["ll"]) - exact) < 0.1
    assert float(rows[0]["delta_part_erasure"]) == 0.0 and float(rows[0]["delta_disent"]) == 0.0


def test_ising_gen_and_constraints(workdir):
    assert main(["ising-gen", "--L", "6", "--betas", "0.3,0.5", "--n-samples", "50", "--burn-in", "100",
                 "--out-dir", "ising", "--seed", "1"]) == 0
    rows = _rows("ising/observables.csv")
    assert [float(r["beta"]) for r in rows] == [0.3, 0.5]
    files = sorted((workdir / "ising").glob("*.disn"))
    samples, beta = dio.load_ising_samples(files[0])
    assert samples.shape == (50, 6, 6) and beta == 0.3
    assert main(["build-constraints", "--dataset", str(files[1]), "--n-hidden", "4", "--order", "q2", "--ising",
                 "--out", "q2.dcon"]) == 0
    cs, _ = dio.load_constraints("q2.dcon")
    assert cs.quadratic is not None and cs.quadratic.matrix.shape == (36, 36)
    labels = magnetization_labels(samples)
    assert set(np.unique(labels)) <= {-1, 1}


def test_make_dataset_variants(workdir, mnist_small):
    assert len(dio.load_dataset(mnist_small)) == 120
    assert main(["make-dataset", "mnist", "--images", str(MNIST_IMAGES), "--labels", str(MNIST_LABELS),
                 "--digits", "0", "--invert", "--limit", "40", "--out", "inv.dset", "--seed", "1"]) == 0
    assert set(dio.load_dataset("inv.dset").labels) == {0, 1}
    assert main(["make-dataset", "gaussian", "--n", "100", "--dim", "3", "--out", "g.dset", "--seed", "2"]) == 0
    assert dio.load_dataset("g.dset").kind is None
    (workdir / "a.fasta").write_text(">s1\nACDE\n>s2\nACDF\n>s3\nKLMN\n")
    (workdir / "lab.csv").write_text("s1,x\ns2,y\ns3,y\n")
    assert main(["make-dataset", "alignment", "--fasta", "a.fasta", "--labels", "lab.csv", "--balance",
                 "--out", "a.dset"]) == 0
    assert dio.load_dataset("a.dset").n_classes == 2


def test_gs_analyze_and_overlap_sweep(workdir, capsys):
    assert main(["make-dataset", "gaussian", "--n", "2000", "--dim", "5", "--out", "g.dset", "--seed", "2"]) == 0
    assert main(["gs-analyze", "--dataset", "g.dset", "--M", "3", "--out", "gs.json", "--seed", "1"]) == 0
    report = json.loads((workdir / "gs.json").read_text())
    assert report["L_unconstr"] >= report["L_rel"] >= report["L_constr"]
    assert main(["overlap-sweep", "--dataset", "g.dset", "--b-grid", "10,100", "--n-subsamples", "20",
                 "--out", "ov.csv", "--seed", "1"]) == 0
    rows = _rows("ov.csv")
    assert [int(r["B"]) for r in rows] == [10, 100]
    assert float(rows[1]["overlap_mean"]) > float(rows[0]["overlap_mean"])


def test_probe_command(workdir, small_data, released_checkpoint):
    assert main(["probe", "--checkpoint", str(released_checkpoint), "--dataset", str(small_data), "--units", "1,2",
                 "--steps", "300", "--out", "probe.csv", "--seed", "1"]) == 0
    rows = _rows("probe.csv")
    assert len(rows) == 11 and rows[0]["architecture"] == "perceptron"
