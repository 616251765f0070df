import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disrbm.constraints import (
    ConstraintSet,
    QuadraticConstraint,
    constraint_residuals,
    ising_q2,
    linear_residuals,
    mp_bounds,
    mp_signal_rank,
    mp_truncate,
    orthonormalize,
    project_weights,
    q1_multiclass,
    q1_vector,
    q2_lowrank,
    q2_matrix,
    quadratic_penalty_gradient,
)
from disrbm.ising import IsingLattice, hybrid_sampler
from disrbm.rbm import RbmModel


# -- first-order directions ---------------------------------------------------------------


def test_q1_rejects_constant_labels():
    with pytest.raises(ValueError):
        q1_vector(np.eye(3), np.zeros(3))


def test_q1_two_points():
    v0, v1 = np.array([1.0, 0.0, 2.0]), np.array([0.0, 3.0, 2.0])
    np.testing.assert_allclose(q1_vector(np.stack([v0, v1]), [0, 1]), (v1 - v0) / 4)


def test_q1_independent_labels_shrinks(rng):
    norms = []
    for n in (100, 10_000):
        data = rng.normal(size=(n, 5))
        norms.append(np.linalg.norm(q1_vector(data, rng.integers(0, 2, n))))
    assert norms[1] < norms[0] / 3


def test_q1_weighted_matches_replicated_data():
    data = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    labels = np.array([0, 1, 1])
    replicated = np.repeat(data, [2, 1, 1], axis=0)
    np.testing.assert_allclose(
        q1_vector(data, labels, weights=np.array([2.0, 1.0, 1.0])),
        q1_vector(replicated, np.repeat(labels, [2, 1, 1])),
    )


def test_q1_multiclass_two_classes_reduces_to_binary(rng):
    data = rng.normal(size=(50, 4))
    labels = rng.integers(0, 2, 50)
    full, independent = q1_multiclass(data, labels)
    q = q1_vector(data, labels)
    np.testing.assert_allclose(full[1], q, atol=1e-14)
    np.testing.assert_allclose(full[0], -q, atol=1e-14)
    assert independent.shape == (1, 4)


def test_q1_multiclass_three_points():
    points = np.array([[3.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    full, _ = q1_multiclass(points, [0, 1, 2])
    # q_d = <1[c=d] v> - <1[c=d]><v> = (x_d - mean)/3
    np.testing.assert_allclose(full, (points - points.mean(0)) / 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_q1_multiclass_sums_to_zero(n_classes, seed):
    r = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(n_classes), r.integers(0, n_classes, 40)])
    data = r.normal(size=(len(labels), 6)) * 10
    full, _ = q1_multiclass(data, labels, r.random(len(labels)) + 0.1)
    assert np.abs(full.sum(0)).max() <= 1e-12 * max(1.0, np.abs(full).max())


# -- second-order matrices ------------------------------------------------------------------


def test_q2_vanishes_for_sign_flipped_classes(rng):
    base = np.where(rng.random((30, 4)) < 0.5, 1.0, -1.0)
    data = np.concatenate([base, -base])
    labels = np.repeat([0, 1], 30)
    np.testing.assert_allclose(q2_matrix(data, labels), 0, atol=1e-14)


def test_q2_binary_diagonal_is_q1(rng):
    data = rng.integers(0, 2, (40, 5)).astype(float)
    labels = rng.integers(0, 2, 40)
    np.testing.assert_allclose(np.diag(q2_matrix(data, labels)), q1_vector(data, labels), atol=1e-14)


def test_q2_four_point_oracle():
    data = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
    u = np.array([0.0, 0.0, 1.0, 1.0])
    expected = np.zeros((3, 3))
    for i, j in itertools.product(range(3), repeat=2):
        pair = data[:, i] * data[:, j]
        expected[i, j] = np.mean(u * pair) - u.mean() * pair.mean()
    np.testing.assert_allclose(q2_matrix(data, u.astype(int)), expected, atol=1e-15)


def test_mp_bounds_unit_ratio():
    assert mp_bounds(100, 100) == pytest.approx((0.0, 4.0))


def test_white_noise_has_no_signal(rng):
    data = rng.normal(size=(20_000, 30))
    assert mp_signal_rank(data) == 0
    with pytest.warns(UserWarning):
        quad = mp_truncate(np.corrcoef(data.T), len(data))
    assert quad.inert


def test_mp_truncate_keeps_planted_spike(rng):
    n, p = 5000, 50
    spike = rng.normal(size=p)
    spike /= np.linalg.norm(spike)
    data = rng.normal(size=(n, p)) + 2.0 * rng.normal(size=(n, 1)) * spike
    z = (data - data.mean(0)) / data.std(0)
    quad = mp_truncate(z.T @ z / n, n)
    assert quad.rank == 1
    assert abs(quad.eigenvectors[:, 0] @ spike) > 0.95


def test_q2_lowrank_rank_is_class_signal_count(rng):
    n, p = 4000, 40
    # a correlated block; a single-axis spike would vanish after standardization
    spike = np.zeros(p)
    spike[:5] = 1 / np.sqrt(5)
    labels = np.repeat([0, 1], n // 2)
    data = rng.normal(size=(n, p))
    data[labels == 1] += 3.0 * rng.normal(size=(n // 2, 1)) * spike
    quad = q2_lowrank(data, labels)
    assert quad.rank == 1
    assert np.abs(quad.eigenvalues).max() == pytest.approx(1.0)
    assert abs(quad.eigenvectors[:, 0] @ spike) > 0.99


def test_ising_q2_fast_equals_direct(rng):
    samples = np.where(rng.random((50, 8, 8)) < 0.6, 1, -1)
    fast, direct = ising_q2(samples, "fft"), ising_q2(samples, "direct")
    np.testing.assert_allclose(fast, direct, atol=1e-9)
    assert np.all(np.diag(fast) == 0)
    np.testing.assert_array_equal(fast, fast.T)


def test_ising_q2_translation_invariant(rng):
    q2 = ising_q2(np.where(rng.random((40, 6, 6)) < 0.5, 1, -1))
    # entry (0 -> site) equals entry (shifted 0 -> shifted site)
    shift = lambda i, dr, dc: ((i // 6 + dr) % 6) * 6 + (i % 6 + dc) % 6  # noqa: E731
    for i in range(36):
        assert q2[0, i] == pytest.approx(q2[shift(0, 2, 3), shift(i, 2, 3)], abs=1e-12)


def test_ising_q2_infinite_temperature_matches_enumeration(rng):
    L = 4
    n = L * L
    states = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1) * 2 - 1
    absm = np.abs(states.sum(1))
    # exact <|M| v_0 v_1> - <|M|><v_0 v_1>, the same for every distinct pair
    exact = np.mean(absm * states[:, 0] * states[:, 1]) - absm.mean() * np.mean(states[:, 0] * states[:, 1])
    samples = np.where(rng.random((100_000, L, L)) < 0.5, 1, -1)
    q2 = ising_q2(samples)
    off = q2[~np.eye(n, dtype=bool)]
    assert np.abs(off - exact).max() < 0.05
    assert abs(off.mean() - exact) < 0.01


def test_ising_q1_components_uniform():
    rng = np.random.default_rng(3)
    samples, _ = hybrid_sampler(IsingLattice.random(8, 0.42, rng), 4000, 5, rng, burn_in=500)
    flat = samples.reshape(len(samples), -1).astype(float)
    labels = (flat.sum(1) > 0).astype(int)
    q = q1_vector(flat, labels)
    assert q.std() < 0.1 * abs(q.mean())


def test_q1_parallel_to_covariance_times_perceptron(rng):
    n, p = 100_000, 10
    a = rng.normal(size=(p, p))
    cov = a @ a.T / p + np.eye(p)
    data = rng.multivariate_normal(np.zeros(p), cov, size=n)
    r = rng.normal(size=p)
    q = q1_vector(data, (data @ r > 0).astype(int))
    target = cov @ r
    angle = np.degrees(np.arccos(q @ target / np.linalg.norm(q) / np.linalg.norm(target)))
    assert angle < 2.0


# -- constraint sets and projection -------------------------------------------------------------


def test_orthonormalize_drops_dependent_direction():
    with pytest.warns(UserWarning):
        basis = orthonormalize([np.array([1.0, 1.0, 0.0]), np.array([2.0, 2.0, 0.0]), np.array([0.0, 1.0, 0.0])])
    assert basis.shape == (3, 2)
    np.testing.assert_allclose(basis.T @ basis, np.eye(2), atol=1e-14)


def test_project_axis_direction():
    cs = ConstraintSet.build(1, [np.array([1.0, 0.0, 0.0])])
    np.testing.assert_allclose(project_weights(np.array([[3.0], [4.0], [5.0]]), cs), [[0.0], [4.0], [5.0]])


def test_project_leaves_orthogonal_column():
    cs = ConstraintSet.build(2, [np.array([1.0, -1.0, 0.0])])
    w = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, -1.0]])
    np.testing.assert_array_equal(project_weights(w, cs), w)


weight_problems = st.tuples(st.integers(2, 30), st.integers(1, 8), st.integers(1, 3), st.integers(0, 2**31 - 1))


@settings(max_examples=50, deadline=None)
@given(weight_problems)
def test_projection_properties(problem):
    n, m, d, seed = problem
    r = np.random.default_rng(seed)
    d = min(d, n - 1) or 1
    released = [0] if m > 1 else []
    cs = ConstraintSet.build(m, [r.normal(size=n) * 10 ** r.uniform(-3, 3) for _ in range(d)], released)
    w = r.normal(size=(n, m)) * 10 ** r.uniform(-3, 3)
    pw = project_weights(w, cs)
    assert linear_residuals(pw, cs).max(initial=0.0) <= 1e-10
    np.testing.assert_allclose(project_weights(pw, cs), pw, rtol=0, atol=1e-12 * max(1.0, np.abs(pw).max()))
    for mu in released:
        assert np.array_equal(pw[:, mu], w[:, mu])


def test_free_along_keeps_released_unit_orthogonal_to_other_directions(rng):
    dirs = [rng.normal(size=6) for _ in range(3)]
    cs = ConstraintSet.build(4, dirs, released=[0], free_along={0: 1})
    pw = project_weights(rng.normal(size=(6, 4)), cs)
    assert abs(dirs[0] @ pw[:, 0]) < 1e-10 and abs(dirs[2] @ pw[:, 0]) < 1e-10
    assert abs(dirs[1] @ pw[:, 0]) > 1e-3


def test_constraint_set_validation():
    with pytest.raises(ValueError):
        ConstraintSet.build(2, [np.ones(3)], released=[5])
    with pytest.raises(ValueError):
        ConstraintSet.build(2, [np.ones(3), np.ones(4)])


def test_digest_tracks_content():
    a = ConstraintSet.build(3, [np.array([1.0, 2.0])], released=[0])
    b = ConstraintSet.build(3, [np.array([1.0, 2.0])], released=[0])
    c = ConstraintSet.build(3, [np.array([1.0, 2.0])], released=[1])
    assert a.digest() == b.digest() != c.digest()


# -- quadratic penalty --------------------------------------------------------------------------------


def test_penalty_zero_cases(rng):
    w = rng.normal(size=(3, 2))
    zero = QuadraticConstraint(np.zeros(1), np.array([[1.0], [0.0], [0.0]]), applies_to=[0, 1])
    grad, pen = quadratic_penalty_gradient(w, zero)
    assert pen == 0 and not grad.any()
    kernel = QuadraticConstraint(np.ones(1), np.array([[1.0], [0.0], [0.0]]), applies_to=[0, 1])
    w[0] = 0.0
    grad, pen = quadratic_penalty_gradient(w, kernel)
    assert pen == 0 and not grad.any()


def test_penalty_gradient_finite_differences(rng):
    w = rng.normal(size=(3, 2))
    u = rng.normal(size=(3, 1))
    u /= np.linalg.norm(u)
    quad = QuadraticConstraint(np.array([0.7]), u, penalty_weight=3.0, applies_to=[0, 1])
    grad, _ = quadratic_penalty_gradient(w, quad)
    eps = 1e-6
    fd = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        plus, minus = w.copy(), w.copy()
        plus[idx] += eps
        minus[idx] -= eps
        fd[idx] = (quadratic_penalty_gradient(plus, quad)[1] - quadratic_penalty_gradient(minus, quad)[1]) / (2 * eps)
    np.testing.assert_allclose(grad, fd, rtol=1e-6)


def test_from_matrix_normalizes_spectral_norm(rng):
    a = rng.normal(size=(5, 5))
    quad = QuadraticConstraint.from_matrix(a + a.T)
    assert np.abs(quad.eigenvalues).max() == pytest.approx(1.0)
    np.testing.assert_allclose(quad.matrix * np.abs(np.linalg.eigvalsh(a + a.T)).max(), a + a.T, atol=1e-12)


# -- residual report ---------------------------------------------------------------------------------


def test_residual_report_hand_case():
    w = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    model = RbmModel(w, np.zeros(3), np.zeros(2))
    data = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 1.0]])
    labels = np.array([0, 0, 1, 1])
    cs = ConstraintSet(2)
    rep = constraint_residuals(model, cs, data, labels)
    inputs = data @ w
    expected = [np.corrcoef(inputs[:, k], labels)[0, 1] for k in range(2)]
    np.testing.assert_allclose(rep.rho, expected, atol=1e-14)


def test_residual_report_flags_degenerate_and_projection():
    w = np.array([[0.0, 1.0], [0.0, 2.0]])
    model = RbmModel(w, np.zeros(2), np.zeros(2))
    data = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
    labels = np.array([0, 1, 0, 1])
    cs = ConstraintSet.build(2, [q1_vector(data, labels)])
    rep = constraint_residuals(model, cs, data, labels)
    assert rep.degenerate[0] and not rep.degenerate[1]

    model.weights = project_weights(model.weights, cs)
    assert constraint_residuals(model, cs, data, labels).max_linear_residual <= 1e-10


def test_mp_truncate_on_mnist_per_digit(mnist_dir):
    from disrbm.data import load_mnist_idx

    data = load_mnist_idx(mnist_dir / "train-images-idx3-ubyte.gz", mnist_dir / "train-labels-idx1-ubyte.gz", (0, 1))
    digit = data.configurations[data.labels == 0]
    _, upper = mp_bounds(784, len(digit))
    assert upper == pytest.approx(1.6, abs=0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rank = mp_signal_rank(digit)
    assert rank == pytest.approx(60, abs=10)
