from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forgetting_anatomy import analytic as A
from forgetting_anatomy import probes
from forgetting_anatomy.data import ClusterConfig, synth_cluster_task
from forgetting_anatomy.errors import CompatibilityError, ConfigError, DimensionError
from forgetting_anatomy.nn import ArchSpec, OptimizerConfig, build_model, snapshot
from forgetting_anatomy.numeric import Rng


def fm(values, fp="fp"):
    return A.FeatureMatrix(np.asarray(values, dtype=float), fp)


def lemma_setup(seed=0, p=32, n=64, k=3):
    r = Rng(seed)
    g1 = r.normal(size=(n, p)) / np.sqrt(p)
    g2 = r.normal(size=(n, p)) / np.sqrt(p) + 0.5 * g1
    y1 = r.integers(0, k, size=n)
    y2 = r.integers(0, k, size=n)
    return g1, y1, g2, y2


# -- kernel ----------------------------------------------------------------------

def test_overlap_kernel_hand_example():
    k = A.overlap_kernel(fm([[1.0, 2.0]]), fm([[3.0, 4.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(k.values, [[11.0, 2.0]])


def test_constant_features_give_all_ones_kernel():
    k = A.overlap_kernel(fm(np.ones((3, 1))), fm(np.ones((4, 1))))
    np.testing.assert_array_equal(k.values, np.ones((3, 4)))


def test_kernel_dimension_mismatch():
    with pytest.raises(DimensionError):
        A.overlap_kernel(fm(np.ones((3, 2))), fm(np.ones((3, 3))))


def test_feature_matrix_is_read_only():
    g = fm(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        g.values[0, 0] = 1.0


def test_lemma_bound_hand_value():
    assert A.lemma_bound([3.0, 4.0], [0.0, 2.0], 0.5) == pytest.approx(5.0)


# -- single-head simulation --------------------------------------------------------

def test_lemma_kernel_consistency_and_bound():
    g1, y1, g2, y2 = lemma_setup()
    model = A.FrozenFeatureModel(np.zeros((32, 3)), lr=0.5)
    traj = A.head_sgd_simulate(model, fm(g2), y2, 100, fm(g1), y1)
    assert len(traj.step) == 101
    assert traj.max_kernel_error <= 1e-10
    assert traj.total_violations == 0
    assert traj.task2_loss[-1] < traj.task2_loss[0]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 2.0))
def test_lemma_holds_for_random_problems(seed, lr):
    g1, y1, g2, y2 = lemma_setup(seed, p=8, n=12)
    traj = A.head_sgd_simulate(A.FrozenFeatureModel(np.zeros((8, 3)), lr=lr), g2, y2, 10, g1, y1)
    assert traj.max_kernel_error <= 1e-10
    assert traj.total_violations == 0


def test_mini_batch_steps_and_determinism():
    g1, y1, g2, y2 = lemma_setup(p=6, n=20)
    a = A.head_sgd_simulate(A.FrozenFeatureModel(np.zeros((6, 3)), 0.3), g2, y2, 7, g1, y1, batch_size=8, rng=Rng(1))
    b = A.head_sgd_simulate(A.FrozenFeatureModel(np.zeros((6, 3)), 0.3), g2, y2, 7, g1, y1, batch_size=8, rng=Rng(1))
    assert a.step == list(range(8))
    assert a.task2_loss == b.task2_loss
    assert a.total_violations == 0
    with pytest.raises(ConfigError):
        A.head_sgd_simulate(A.FrozenFeatureModel(np.zeros((6, 3)), 0.3), g2, y2, 2, g1, y1, batch_size=8)


def test_zero_overlap_leaves_task1_untouched():
    g1 = np.zeros((4, 4))
    g1[:, :2] = Rng(0).normal(size=(4, 2))
    g2 = np.zeros((5, 4))
    g2[:, 2:] = Rng(1).normal(size=(5, 2))
    traj = A.head_sgd_simulate(A.FrozenFeatureModel(np.zeros((4, 2)), 1.0), g2, np.array([0, 1, 0, 1, 1]), 5, g1, np.zeros(4, dtype=int))
    assert max(traj.realized_delta_max) == 0.0


def test_weight_drift_zero_steps():
    g1, y1, g2, y2 = lemma_setup(p=4, n=6)
    traj = A.head_sgd_simulate(A.FrozenFeatureModel(np.ones((4, 3)), 0.1), g2, y2, 0, g1, y1)
    d = A.weight_drift_report(traj)
    assert d == {"distance": [0.0], "cosine": [1.0]}
    rows = traj.rows()
    assert list(rows[0]) == list(A.Trajectory.COLUMNS)


def test_frozen_head_init_fits_task1():
    r = Rng(2)
    labels = np.repeat(np.arange(3), 10)
    g = 3.0 * np.eye(3)[labels] + 0.1 * r.normal(size=(30, 3))
    model = A.frozen_head_init(g, labels, 3, lr=1.0, steps=50)
    assert np.mean(model.outputs(g).argmax(1) == labels) == 1.0


# -- multi-head simulation ---------------------------------------------------------

def multihead_model(h1, h2, a=3, p=5, lr=0.4, seed=0):
    theta = Rng(seed).normal(size=(a, p)) / np.sqrt(p)
    return A.FrozenFeatureModel(theta, lr, heads={"t1": h1, "t2": h2})


def test_orthogonal_heads_leave_task1_logits_fixed():
    h1 = np.zeros((3, 2))
    h1[0, 0] = h1[1, 1] = 1.0
    h2 = np.zeros((3, 2))
    h2[2] = [1.0, -1.0]
    g1, y1, g2, y2 = lemma_setup(p=5, n=8, k=2)
    model = multihead_model(h1, h2)
    traj = A.multihead_simulate(model, g2, y2, g1, y1, head_steps=0, body_steps=20)
    assert max(traj.realized_delta_max) <= 1e-12
    assert traj.max_kernel_error <= 1e-12
    assert np.linalg.norm(traj.weights[-1] - traj.weights[0]) > 0.0


def test_identical_identity_heads_reduce_to_single_head():
    g1, y1, g2, y2 = lemma_setup(p=5, n=8, k=3)
    eye = np.eye(3)
    multi = multihead_model(eye, eye.copy())
    single = A.FrozenFeatureModel(multi.theta.T.copy(), multi.lr)
    tm = A.multihead_simulate(multi, g2, y2, g1, y1, head_steps=0, body_steps=10)
    ts = A.head_sgd_simulate(single, g2, y2, 10, g1, y1)
    np.testing.assert_allclose(tm.task1_logits[-1], ts.task1_logits[-1], atol=1e-12)
    assert tm.max_kernel_error <= 1e-10 and tm.total_violations == 0


def test_multihead_one_step_hand_value():
    # p = A = 1, K = 2: f1 = g theta h1, a body step moves theta by -eta h2 d^T g2
    g1 = np.array([[1.0]])
    g2 = np.array([[2.0]])
    model = A.FrozenFeatureModel(np.array([[0.0]]), 1.0, heads={"t1": np.array([[2.0, 0.0]]), "t2": np.array([[1.0, -1.0]])})
    traj = A.multihead_simulate(model, g2, np.array([0]), g1, np.array([0]), head_steps=0, body_steps=1)
    # logits 0 -> p = (1/2, 1/2), d = (-1/2, 1/2); h2 d^T = -1; theta = 0 + 1 * 1 * 2 = 2
    assert model.theta[0, 0] == pytest.approx(2.0)
    np.testing.assert_allclose(traj.task1_logits[-1], [[4.0, 0.0]])


def test_head_phase_moves_only_head2():
    g1, y1, g2, y2 = lemma_setup(p=5, n=8, k=2)
    model = multihead_model(np.ones((3, 2)), np.zeros((3, 2)))
    theta0 = model.theta.copy()
    traj = A.multihead_simulate(model, g2, y2, g1, y1, head_steps=5, body_steps=0)
    np.testing.assert_array_equal(model.theta, theta0)
    assert max(traj.realized_delta_max) == 0.0
    assert np.abs(model.heads["t2"]).sum() > 0


# -- rotation ----------------------------------------------------------------------

def test_rotation_identity_at_zero():
    g1, *_ = lemma_setup(p=6, n=10)
    rot = A.rotate_features(fm(g1), 0.0, g1)
    np.testing.assert_allclose(rot.values, g1, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(0, 1000))
def test_rotation_preserves_norms(theta, seed):
    g1, _, g2, _ = lemma_setup(seed, p=5, n=9)
    rot = A.rotate_features(g2, theta, g1)
    np.testing.assert_allclose(np.linalg.norm(rot.values, axis=1), np.linalg.norm(g2, axis=1), rtol=1e-10)


def test_quarter_turn_reduces_overlap():
    r = Rng(3)
    scales = np.linspace(3.0, 0.1, 8)
    g1 = r.normal(size=(40, 8)) * scales
    g2 = r.normal(size=(40, 8)) * scales
    base = np.linalg.norm(g1 @ g2.T)
    turned = np.linalg.norm(g1 @ A.rotate_features(g2, np.pi / 2, g1).values.T)
    assert turned < 0.5 * base


def test_rotation_needs_two_features():
    with pytest.raises(ConfigError):
        A.rotate_features(np.ones((3, 1)), 0.1, np.ones((3, 1)))


# -- feature extraction --------------------------------------------------------------

def test_extract_features_from_snapshot():
    pair = synth_cluster_task(ClusterConfig(n_classes=3, dims=12, n_train=30, n_test=10), Rng(0))
    arch = ArchSpec(kind="mlp", input_shape=(12,), widths=(8, 6))
    m, _ = probes.run_task1(pair, arch, OptimizerConfig(lr=0.05, batch_size=16), 2, Rng(1))
    snap = snapshot(m, "post-task-1")
    g = A.extract_features(m, snap, pair.task1.test)
    assert g.values.shape == (len(pair.task1.test), 6)
    again = A.extract_features(m, snap, pair.task1.test)
    assert g.fingerprint == again.fingerprint
    np.testing.assert_array_equal(g.values, again.values)
    other = build_model(ArchSpec(kind="mlp", input_shape=(12,), widths=(4, 4)), Rng(0))
    with pytest.raises(CompatibilityError):
        A.extract_features(other, snap, pair.task1.test)
