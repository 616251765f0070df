"""Command-line entry point: ``disrbm <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import constraints as cons
from . import gaussian_spin as gs
from . import io as dio
from . import ising
from . import partition
from . import probe
from .data import (
    LabeledDataset,
    alignment_dataset,
    invert_background,
    load_alignment,
    load_mnist_idx,
    read_label_sidecar,
    synthetic_gaussian_mixture,
)
from .rbm import RbmModel, free_energy, gibbs_chain
from .training import TrainConfig, config_dict, init_model, likelihood_costs, train, write_history
from .units import SPIN, UnitKind

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ValidationError(ValueError):
    pass


# -- shared helpers ----------------------------------------------------------------------


def parse_grid(text: str) -> np.ndarray:
    """``a:b:step`` (inclusive) or a comma-separated list."""
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ValidationError(f"bad grid {text!r}; expected start:stop:step")
        n = int(round((parts[1] - parts[0]) / parts[2])) + 1
        return np.round(parts[0] + parts[2] * np.arange(n), 10)
    return np.array([float(x) for x in text.split(",") if x.strip()])


def parse_clamp(text: str | None, n_hidden: int) -> dict[int, float]:
    """``unit=value[,unit=value...]``; indices refer to hidden units."""
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        try:
            key, value = item.split("=")
            unit, val = int(key), float(value)
        except ValueError:
            raise ValidationError(f"bad clamp item {item!r}; expected unit=value") from None
        if not 0 <= unit < n_hidden:
            raise ValidationError(f"clamped unit {unit} does not exist (model has {n_hidden} hidden units)")
        out[unit] = val
    return out


def parse_int_list(text: str | None) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()] if text else []


def read_config_file(path: str) -> dict:
    """JSON object, or ``key = value`` lines with ``#`` comments."""
    text = Path(path).read_text()
    if path.endswith(".json"):
        values = json.loads(text)
        if not isinstance(values, dict):
            raise ValidationError("config file must hold a JSON object")
        return values
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def load_any_dataset(path: str) -> LabeledDataset:
    """DSET container or DISN Ising samples (labeled by magnetization sign)."""
    magic = dio.peek_magic(path)
    if magic == b"DSET":
        return dio.load_dataset(path)
    if magic == b"DISN":
        samples, beta = dio.load_ising_samples(path)
        flat = samples.reshape(len(samples), -1).astype(np.float64)
        labels = (ising.magnetization_labels(samples) > 0).astype(np.int64)
        return LabeledDataset(flat, labels, None, SPIN, {"source": "ising", "beta": beta, "L": samples.shape[1]})
    raise dio.ContainerError(f"{path}: not a dataset container (magic {magic!r})")


def write_csv(path: str, rows: list[dict], columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def emit_json(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, default=float)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _check_dims(model: RbmModel, data: LabeledDataset) -> None:
    if data.n_units != model.n_visible:
        raise ValidationError(f"dataset has {data.n_units} units but the model has {model.n_visible} visible units")


# -- commands ---------------------------------------------------------------------------------


def cmd_make_dataset(args, rng: np.random.Generator) -> int:
    if args.source == "mnist":
        if not (args.images and args.labels):
            raise ValidationError("mnist needs --images and --labels")
        digits = parse_int_list(args.digits) or None
        data = load_mnist_idx(args.images, args.labels, digits, args.threshold)
        if args.invert:
            data = invert_background(data, rng)
    elif args.source == "alignment":
        if not args.fasta:
            raise ValidationError("alignment needs --fasta")
        sidecar = read_label_sidecar(args.labels) if args.labels else None
        data = alignment_dataset(load_alignment(args.fasta), sidecar, args.similarity_cutoff, args.balance)
    else:
        if args.n < 2 or args.dim < 1:
            raise ValidationError("gaussian needs n >= 2 and dim >= 1")
        shift = np.zeros(args.dim)
        shift[0] = args.separation / 2
        cov = np.eye(args.dim)
        data = synthetic_gaussian_mixture(args.n, args.dim, [-shift, shift], [cov, cov], rng)
    if args.limit:
        keep = np.sort(rng.permutation(len(data))[: args.limit])
        data = data.subset(keep)
    dio.save_dataset(data, args.out)
    print(f"wrote {len(data)} configurations with {data.n_units} units to {args.out}")
    return EXIT_OK


def cmd_ising_gen(args, rng: np.random.Generator) -> int:
    betas = parse_grid(args.betas)
    if args.L < 2 or args.n_samples < 1 or args.thinning < 1:
        raise ValidationError("need L >= 2, n_samples >= 1 and thinning >= 1")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for beta in betas:
        lattice = ising.IsingLattice.random(args.L, float(beta), rng)
        samples, stats = ising.hybrid_sampler(lattice, args.n_samples, args.thinning, rng, args.burn_in, args.mode)
        dio.save_ising_samples(samples, float(beta), out_dir / f"ising_L{args.L}_beta{beta:.4f}.disn")
        obs = ising.observables(samples, float(beta))
        rows.append({"beta": float(beta), "m": obs.m, "C": obs.C, "chi": obs.chi, "wolff_fraction": stats.wolff_fraction})
        print(f"beta={beta:.4f} m={obs.m:.4f} C={obs.C:.4f} chi={obs.chi:.4f}")
    write_csv(str(out_dir / "observables.csv"), rows)
    return EXIT_OK


def cmd_build_constraints(args, rng: np.random.Generator) -> int:
    data = load_any_dataset(args.dataset)
    x, y, w = data.flat(), data.labels, data.sample_weights
    released = parse_int_list(args.released)
    directions: list[np.ndarray] = []
    free_along: dict[int, int] = {}
    if args.order in ("q1", "both"):
        if data.n_classes > 2:
            full, _ = cons.q1_multiclass(x, y, w)
            directions = list(full)
            free_along = {mu: k for k, mu in enumerate(released)} if args.free_along else {}
        else:
            directions = [cons.q1_vector(x, y, w)]
    quadratic = None
    if args.order in ("q2", "both"):
        if args.ising:
            L = int(round(np.sqrt(data.n_units)))
            q2 = cons.ising_q2(data.configurations.reshape(-1, L, L))
            quadratic = cons.QuadraticConstraint.from_matrix(q2, args.penalty)
        elif args.mp_truncate:
            std = np.maximum(x.std(axis=0), 1e-12)
            q2 = cons.q2_matrix(x, y, w) / np.outer(std, std)
            quadratic = cons.mp_truncate(q2, len(x), args.penalty)
        else:
            quadratic = cons.q2_lowrank(x, y, w, args.penalty)
    cs = cons.ConstraintSet.build(args.n_hidden, directions, released, quadratic, free_along or None)
    dio.save_constraints(cs, args.out, dio.dataset_digest(data))
    if args.text:
        dio.export_constraints_text(cs, args.text)
    print(f"wrote {args.out}: {len(cs.linear)} linear directions, quadratic rank "
          f"{0 if quadratic is None else quadratic.rank}, released {sorted(cs.released)}")
    return EXIT_OK


def cmd_train(args, rng: np.random.Generator, config: TrainConfig) -> int:
    data = load_any_dataset(args.dataset)
    constraints = None
    if args.constraints:
        constraints, _ = dio.load_constraints(args.constraints)
        if constraints.n_hidden != args.n_hidden:
            raise ValidationError(f"constraints are built for {constraints.n_hidden} hidden units, not {args.n_hidden}")
        if constraints.n_visible not in (None, data.kind.flat_size(data.n_units)):
            raise ValidationError("constraint dimension does not match the dataset")
    visible = UnitKind.parse(args.visible_kind) if args.visible_kind else data.kind
    hidden = UnitKind.parse(args.hidden_kind)
    if visible is None:
        raise ValidationError("real-valued datasets cannot train an RBM")
    model = init_model(data.configurations, args.n_hidden, rng, visible, hidden, args.symmetric, config)
    model, history = train(model, data.configurations, data.labels, constraints, config, rng, data.sample_weights)
    dio.save_model(model, args.out)
    if args.history:
        write_history(history, args.history)
    print(f"wrote {args.out} after {model.metadata['iterations']} updates")
    return EXIT_OK


def _sampling_start(model: RbmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    fields = np.zeros((n, model.visible_kind.flat_size(model.n_visible)))
    return model.visible_kind.sample(fields, rng)


def cmd_sample(args, rng: np.random.Generator) -> int:
    model = dio.load_model(args.checkpoint)
    clamp = parse_clamp(args.clamp, model.n_hidden)
    if args.n < 1 or args.steps < 1:
        raise ValidationError("n and steps must be positive")
    v, _ = gibbs_chain(model, _sampling_start(model, args.n, rng), args.steps, rng, clamp or None)
    dio.save_dataset(LabeledDataset(v, np.zeros(args.n, dtype=np.int64), None, model.visible_kind, {"clamp": clamp}), args.out)
    fe = free_energy(model, v)
    write_csv(args.free_energy or str(Path(args.out).with_suffix(".free_energy.csv")),
              [{"chain": i, "free_energy": float(f)} for i, f in enumerate(fe)])
    print(f"wrote {args.n} samples to {args.out}")
    return EXIT_OK


def cmd_morph(args, rng: np.random.Generator) -> int:
    model = dio.load_model(args.checkpoint)
    released = model.metadata.get("released", [])
    if not released:
        raise ValidationError("checkpoint records no released unit")
    unit = released[0] if args.released_unit is None else args.released_unit
    if unit not in released:
        raise ValidationError(f"unit {unit} is not released (released: {released})")
    if args.flip_at >= args.total_steps:
        raise ValidationError("flip_at must be smaller than total_steps")
    if args.record_every < 1:
        raise ValidationError("record_every must be positive")
    kind = model.hidden_kind
    low = -1.0 if kind == SPIN else 0.0
    start_value = float(args.start_value)
    flipped = (1.0 + low) - start_value
    classifier = None
    if args.probe_data:
        ref = load_any_dataset(args.probe_data)
        _check_dims(model, ref)
        classifier = probe.train_probe(ref.flat(), ref.labels, (), args.probe_steps, rng)
    v = _sampling_start(model, args.n_chains, rng)
    frames, rows = [], []
    for step in range(1, args.total_steps + 1):
        value = flipped if step > args.flip_at else start_value
        v, _ = gibbs_chain(model, v, 1, rng, {unit: value})
        if step % args.record_every == 0:
            frames.append(v.copy())
            row = {"step": step, "clamp": value, "mean_free_energy": float(free_energy(model, v).mean())}
            if classifier is not None:
                proba = classifier.predict_proba(model.visible_kind.embed(v))
                for k, c in enumerate(classifier.classes):
                    row[f"p_class{int(c)}"] = float(proba[:, k].mean())
            rows.append(row)
    stacked = np.concatenate(frames)
    steps = np.repeat([r["step"] for r in rows], args.n_chains)
    dio.save_dataset(LabeledDataset(stacked, steps, None, model.visible_kind, {"morph_unit": unit}), args.out)
    write_csv(str(Path(args.out).with_suffix(".trajectory.csv")), rows)
    print(f"wrote {len(rows)} frames to {args.out}")
    return EXIT_OK


def cmd_evaluate_ll(args, rng: np.random.Generator) -> int:
    test = load_any_dataset(args.test_data)
    models = [dio.load_model(p) for p in args.checkpoints]
    for m in models:
        _check_dims(m, test)
    schedule = partition.AnnealSchedule.uniform(args.n_betas, args.n_walkers)
    rows = []
    reports: dict[bytes, partition.SandwichReport] = {}
    for path, model in zip(args.checkpoints, models):
        # identical checkpoints share one estimate so their cost difference is exactly zero
        key = Path(path).read_bytes()
        if key not in reports:
            reports[key] = partition.sandwich_report(model, schedule, rng, tolerance=args.tolerance)
        rep = reports[key]
        fe = float(np.average(free_energy(model, test.configurations), weights=test.sample_weights))
        rows.append({
            "checkpoint": path,
            "log_z_ais": rep.ais.log_z,
            "log_z_raise": rep.raise_.log_z,
            "gap": rep.gap,
            "verdict": rep.verdict,
            "mean_free_energy": fe,
            "ll": fe - rep.log_z,
            "ll_low": fe - rep.raise_.log_z,
            "ll_high": fe - rep.ais.log_z,
            "per_unit_ll": (fe - rep.log_z) / model.n_visible,
        })
        print(f"{path}: ll={fe - rep.log_z:.4f} [{fe - rep.raise_.log_z:.4f}, {fe - rep.ais.log_z:.4f}] {rep.verdict}")
    if args.roles:
        roles = args.roles.split(",")
        if len(roles) != len(rows) or set(roles) != {"unconstrained", "constrained", "released"}:
            raise ValidationError("--roles must name unconstrained, constrained and released once each")
        ll = {r: row["ll"] for r, row in zip(roles, rows)}
        costs = likelihood_costs(ll["unconstrained"], ll["constrained"], ll["released"], test.n_units)
        for row in rows:
            row.update({"delta_part_erasure": costs.part_erasure, "delta_disent": costs.disent,
                        "per_unit_part_erasure": costs.per_unit_part_erasure, "per_unit_disent": costs.per_unit_disent})
        print(f"part erasure {costs.part_erasure:.4f} nat, disentanglement {costs.disent:.4f} nat")
    write_csv(args.out, rows)
    return EXIT_OK


def cmd_probe(args, rng: np.random.Generator) -> int:
    model = dio.load_model(args.checkpoint)
    data = load_any_dataset(args.dataset)
    _check_dims(model, data)
    archs = {"desk": probe.DESK_ARCHITECTURES, "full": probe.FULL_ARCHITECTURES}[args.architectures]
    units = parse_int_list(args.units) or None
    report = probe.probe_sweep(model, data.configurations, data.labels, archs, rng, units, args.steps)
    report.write_csv(args.out)
    print(f"label entropy {report.label_entropy:.4f} bits; best bound {report.best_bound:.4f} bits")
    return EXIT_OK


def cmd_gs_analyze(args, rng: np.random.Generator) -> int:
    data = load_any_dataset(args.dataset)
    x, y = data.flat(), data.labels
    table = gs.gs_cost_table(x, y, args.M)
    ctilde = gs.build_ctilde(x, y)
    q = gs.spin_direction(x, y) / gs.estimate_sigma(x)
    report = gs.poincare_check(ctilde, q, args.tolerance)
    table.update({"interlacing_holds": report.holds, "interlacing_violation": report.max_violation})
    emit_json(table, args.out)
    return EXIT_OK


def cmd_overlap_sweep(args, rng: np.random.Generator) -> int:
    data = load_any_dataset(args.dataset)
    x, y = data.flat(), data.labels
    if data.n_classes != 2:
        raise ValidationError("overlap sweep needs two classes")
    full = cons.q1_vector(x, y)
    traces = tuple(float(np.trace(np.atleast_2d(np.cov(x[y == c].T)))) for c in (0, 1))
    sep = float(np.sum((x[y == 1].mean(0) - x[y == 0].mean(0)) ** 2))
    rows = []
    for b in parse_grid(args.b_grid):
        B = int(b)
        values = []
        for _ in range(args.n_subsamples):
            xs, ys = probe.subsample_labeled(x, y, B, rng)
            values.append(probe.overlap(full, cons.q1_vector(xs, ys)))
        rows.append({"B": B, "B_over_N": B / x.shape[1], "overlap_mean": float(np.mean(values)),
                     "overlap_std": float(np.std(values)), "overlap_theory": probe.overlap_theory(traces, sep, B / 2)})
    write_csv(args.out, rows)
    for r in rows:
        print(f"B={r['B']} mean={r['overlap_mean']:.4f} theory={r['overlap_theory']:.4f}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="disrbm", description="Label-disentangled restricted Boltzmann machines.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: OS entropy, printed)")
    common.add_argument("--threads", type=int, default=None, help="worker thread limit (env DISRBM_THREADS)")
    common.add_argument("--config", default=None, help="config file (JSON or key = value lines)")
    common.add_argument("--dry-run", action="store_true", help="print the resolved configuration and exit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", parents=[common], help="convert IDX, FASTA or synthetic data to a dataset container")
    p.add_argument("source", choices=("mnist", "alignment", "gaussian"))
    p.add_argument("--images", default=None)
    p.add_argument("--labels", default=None, help="IDX labels (mnist) or id,label CSV (alignment)")
    p.add_argument("--digits", default="0,1")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--invert", action="store_true", help="add background-inverted copies as a second class")
    p.add_argument("--fasta", default=None)
    p.add_argument("--similarity-cutoff", type=float, default=0.2)
    p.add_argument("--balance", action="store_true", help="equalize total class weights")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--limit", type=int, default=None, help="keep a random subset of this size")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ising-gen", parents=[common], help="sample the 2D Ising model over a beta grid")
    p.add_argument("--L", type=int, default=16)
    p.add_argument("--betas", default="0.35:0.50:0.01")
    p.add_argument("--n-samples", type=int, default=10_000)
    p.add_argument("--thinning", type=int, default=10)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--mode", choices=("hybrid", "metropolis", "wolff"), default="hybrid")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("build-constraints", parents=[common], help="label constraints from a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-hidden", type=int, required=True)
    p.add_argument("--order", choices=("q1", "q2", "both"), default="q1")
    p.add_argument("--released", default=None, help="comma-separated released unit indices")
    p.add_argument("--free-along", action="store_true", help="multi-class: released unit k is free along direction k")
    p.add_argument("--ising", action="store_true", help="translation-averaged second-order matrix for lattice spins")
    p.add_argument("--mp-truncate", action="store_true", help="keep eigenvalues above the random-matrix edge")
    p.add_argument("--penalty", type=float, default=cons.DEFAULT_PENALTY_WEIGHT)
    p.add_argument("--out", required=True)
    p.add_argument("--text", default=None, help="also write directions as text")

    p = sub.add_parser("train", parents=[common], help="train an RBM with persistent contrastive divergence")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-hidden", type=int, required=True)
    p.add_argument("--visible-kind", default=None)
    p.add_argument("--hidden-kind", default="binary")
    p.add_argument("--symmetric", action="store_true", help="spin layers with zero fields")
    p.add_argument("--constraints", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--history", default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="training option override")

    p = sub.add_parser("sample", parents=[common], help="Gibbs samples from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--clamp", default=None, help="hidden clamps unit=value,...")
    p.add_argument("--out", required=True)
    p.add_argument("--free-energy", default=None)

    p = sub.add_parser("morph", parents=[common], help="flip a released unit in the middle of a chain")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--released-unit", type=int, default=None)
    p.add_argument("--start-value", type=float, default=1.0)
    p.add_argument("--flip-at", type=int, required=True)
    p.add_argument("--total-steps", type=int, required=True)
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--n-chains", type=int, default=10)
    p.add_argument("--probe-data", default=None, help="labeled dataset to fit a class-probability probe")
    p.add_argument("--probe-steps", type=int, default=5000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate-ll", parents=[common], help="log-likelihood sandwich and cost table")
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--n-betas", type=int, default=10_000)
    p.add_argument("--n-walkers", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=0.2)
    p.add_argument("--roles", default=None, help="e.g. unconstrained,constrained,released")
    p.add_argument("--out", required=True)

    p = sub.add_parser("probe", parents=[common], help="classifier sweep on hidden inputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--architectures", choices=("desk", "full"), default="desk")
    p.add_argument("--units", default=None, help="comma-separated hidden units to probe")
    p.add_argument("--steps", type=int, default=50_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gs-analyze", parents=[common], help="closed-form Gaussian-Spin costs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--out", default=None)

    p = sub.add_parser("overlap-sweep", parents=[common], help="subsampled first-order direction overlap")
    p.add_argument("--dataset", required=True)
    p.add_argument("--b-grid", default="10,100,1000")
    p.add_argument("--n-subsamples", type=int, default=100)
    p.add_argument("--out", required=True)
    return parser


COMMANDS: dict[str, Callable] = {
    "make-dataset": cmd_make_dataset,
    "ising-gen": cmd_ising_gen,
    "build-constraints": cmd_build_constraints,
    "sample": cmd_sample,
    "morph": cmd_morph,
    "evaluate-ll": cmd_evaluate_ll,
    "probe": cmd_probe,
    "gs-analyze": cmd_gs_analyze,
    "overlap-sweep": cmd_overlap_sweep,
}


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return action.choices[command]


def resolve(parser: argparse.ArgumentParser, argv: Sequence[str] | None) -> argparse.Namespace:
    """Parse arguments; config-file values become defaults, so explicit flags win."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    config_path = pre.parse_known_args(argv)[0].config
    train_options: dict = {}
    if config_path:
        action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        command = next((a for a in argv if a in action.choices), None)
        if command is None:
            parser.error("a command is required")
        sub = action.choices[command]
        flags = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in read_config_file(config_path).items():
            dest = key.replace("-", "_")
            if dest in ("config", "set", "help"):
                continue
            opt = flags.get(dest)
            if opt is None:
                train_options[dest] = value
                continue
            if isinstance(opt, argparse._StoreTrueAction):
                defaults[dest] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
            else:
                defaults[dest] = value if not isinstance(value, str) or opt.type is None else opt.type(value)
            # a value from the config satisfies a required flag
            opt.required = False
        sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ValidationError(f"bad --set item {item!r}; expected KEY=VALUE")
        key, value = item.split("=", 1)
        train_options[key.strip().replace("-", "_")] = value.strip()
    args.train_options = train_options
    return args


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = resolve(parser, argv)
        config = TrainConfig.from_mapping(args.train_options) if args.command == "train" else None
        if args.command != "train" and args.train_options:
            raise ValidationError(f"unknown options for {args.command}: {sorted(args.train_options)}")
        seed = args.seed
        if seed is None:
            seed = int(np.random.SeedSequence().entropy % (2**63))
            print(f"seed: {seed}", file=sys.stderr)
        if args.dry_run:
            resolved = {k: v for k, v in vars(args).items() if k not in ("set", "train_options", "dry_run")}
            resolved["seed"] = seed
            if config is not None:
                resolved["train"] = config_dict(config)
            print(json.dumps(resolved, indent=2, default=str))
            return EXIT_OK
        threads = args.threads or (int(os.environ["DISRBM_THREADS"]) if os.environ.get("DISRBM_THREADS") else None)
        if threads is not None and threads < 1:
            raise ValidationError("thread count must be positive")
        rng = np.random.default_rng(seed)
        with threadpool_limits(limits=threads):
            if args.command == "train":
                config = TrainConfig.from_mapping({**config_dict(config), "seed": seed})
                return cmd_train(args, rng, config)
            return COMMANDS[args.command](args, rng)
    except (ValidationError, dio.ContainerError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
