from __future__ import annotations

import numpy as np
import pytest

from forgetting_anatomy import mitigations as M
from forgetting_anatomy import probes
from forgetting_anatomy.data import ClusterConfig, synth_cluster_task
from forgetting_anatomy.errors import ConfigError, DimensionError
from forgetting_anatomy.nn import ArchSpec, OptimizerConfig, build_model, snapshot
from forgetting_anatomy.numeric import Rng

ARCH = ArchSpec(kind="mlp", input_shape=(12,), widths=(16, 16, 8))
OPT = OptimizerConfig(lr=0.05, batch_size=16)


def small_pair(seed=0):
    return synth_cluster_task(ClusterConfig(n_classes=3, dims=12, n_train=40, n_test=20, separation=0.7), Rng(seed))


def after_task1(seed=0):
    pair = small_pair(seed)
    r = Rng(seed + 10)
    m, _ = probes.run_task1(pair, ARCH, OPT, 2, r)
    return pair, r, m


# -- EWC ------------------------------------------------------------------

def test_ewc_hand_example():
    m = build_model(ArchSpec(kind="mlp", input_shape=(2,), widths=(1, 1)), Rng(0))
    name = "stage1/0.b"
    params = m.named_params()
    anchor = {name: params[name] - 3.0}
    state = M.EwcState(anchor, {name: np.full_like(anchor[name], 2.0)}, 4.0, 1)
    value, grads = M.ewc_penalty_and_grad(m, state)
    assert value == pytest.approx(36.0)
    np.testing.assert_allclose(grads[name], 24.0)


def test_ewc_gradient_matches_finite_differences():
    _, _, m = after_task1()
    r = Rng(7)
    params = m.named_params()
    fisher = {k: r.uniform(size=v.shape) for k, v in params.items()}
    state = M.EwcState({k: v + 0.1 * r.normal(size=v.shape) for k, v in params.items()}, fisher, 3.0, 1)
    _, grads = state(m)
    eps = 1e-6
    for k in list(params)[:4]:
        p = params[k]
        for j in range(min(p.size, 5)):
            flat = p.reshape(-1)
            old = flat[j]
            flat[j] = old + eps
            up = M.ewc_penalty(m, state)
            flat[j] = old - eps
            down = M.ewc_penalty(m, state)
            flat[j] = old
            assert (up - down) / (2 * eps) == pytest.approx(grads[k].reshape(-1)[j], abs=1e-6)


def test_ewc_state_validation():
    a = {"x/w": np.zeros(3)}
    with pytest.raises(ConfigError):
        M.EwcState(a, {"x/w": -np.ones(3)}, 1.0, 1)
    with pytest.raises(DimensionError):
        M.EwcState(a, {"x/w": np.ones(2)}, 1.0, 1)
    with pytest.raises(ConfigError):
        M.EwcState(a, {"x/w": np.ones(3)}, -1.0, 1)


def test_fisher_zero_when_gradient_vanishes():
    pair, r, m = after_task1()
    head = m.heads["t1"]
    for v in head.params.values():
        v[...] = 0.0
    # zero head weights: gradients of the body vanish
    f = M.estimate_fisher_diag(m, pair.task1.train, r, units=[u for u in m.units() if u.startswith("stage")])
    assert all(not v.any() for v in f.values())


def test_fisher_invariant_to_duplicating_data():
    pair, r, m = after_task1()
    d = pair.task1.train
    from forgetting_anatomy.data import Dataset

    doubled = Dataset(np.concatenate([d.inputs, d.inputs]), np.concatenate([d.labels, d.labels]), d.class_names)
    f1 = M.estimate_fisher_diag(m, d, r, n_samples=1000)
    f2 = M.estimate_fisher_diag(m, doubled, r, n_samples=1000)
    for k in f1:
        np.testing.assert_allclose(f1[k], f2[k], rtol=1e-12, atol=1e-15)


def test_fisher_hand_logistic():
    # single input feature x=1 through identity-like body; only the head bias is measured
    from forgetting_anatomy.data import Dataset

    m = build_model(ArchSpec(kind="mlp", input_shape=(1,), widths=(1, 1)), Rng(0))
    m.attach_head("t1", 2, Rng(1))
    for v in m.heads["t1"].params.values():
        v[...] = 0.0
    d = Dataset(np.ones((4, 1)), np.array([0, 1, 0, 1]), ("a", "b"))
    f = M.estimate_fisher_diag(m, d, Rng(2), units=["head:t1"])
    # p = (1/2, 1/2): grad of bias is p - onehot = +-1/2, squared 1/4
    np.testing.assert_allclose(f["head:t1/b"], [0.25, 0.25])


def test_fisher_rejects_empty():
    pair, r, m = after_task1()
    with pytest.raises(ConfigError):
        M.estimate_fisher_diag(m, pair.task1.train, r, n_samples=0)


def test_ewc_zero_strength_is_baseline():
    pair, r, m = after_task1()
    a, b = m.clone(), m.clone()
    c_base = probes.train_second_task(a, pair, OPT, 2, r)
    fisher = M.estimate_fisher_diag(b, pair.task1.train, r, units=M.ewc_units(b, pair.head_mode))
    state = M.make_ewc_state(b, fisher, 0.0, 200)
    c_ewc = probes.train_second_task(b, pair, OPT, 2, r, extra_loss=state)
    assert c_base == c_ewc
    for k, v in a.named_params().items():
        np.testing.assert_array_equal(v, b.named_params()[k])


def test_ewc_units_excludes_heads_in_multi_head():
    _, _, m = after_task1()
    assert all(not u.startswith("head:") for u in M.ewc_units(m, "multi-head"))
    assert "head:t1" in M.ewc_units(m, "single-head")


# -- replay ----------------------------------------------------------------

def test_replay_split_examples():
    assert M.replay_split(128, 0.25) == (96, 32)
    assert M.replay_split(128, 0.0) == (128, 0)
    assert M.replay_split(4, 0.01) == (3, 1)
    assert M.replay_split(128, 1.0) == (0, 128)


def test_replay_buffer_bounds():
    pair = small_pair()
    buf = M.ReplayBuffer.from_dataset(pair.task1.train, "t1", 10, 0.5, Rng(0))
    assert len(buf) == 10
    x, y, h = buf.sample(7, Rng(1))
    assert x.shape == (7, 12) and set(h) == {"t1"}
    with pytest.raises(ConfigError):
        M.ReplayBuffer.from_dataset(pair.task1.train, "t1", 10, 1.5, Rng(0))
    empty = M.ReplayBuffer.from_dataset(pair.task1.train, "t1", 0, 0.5, Rng(0))
    with pytest.raises(ConfigError):
        empty.sample(1, Rng(0))


def replay_run(fraction, seed=0, epochs=2):
    pair, r, m = after_task1(seed)
    buf = M.ReplayBuffer.from_dataset(pair.task1.train, "t1", 20, fraction, r.derive("buffer"))
    head = probes.task2_head(pair)
    evals = {"task1": (pair.task1.test, "t1"), "task2": (pair.task2.test, head)}
    curves = M.train_with_replay(m, head, pair.task2, buf, OPT, epochs, r.derive("shuffle").derive("task2"), r.derive("init"), evals)
    return pair, r, m, curves


def test_replay_zero_is_baseline():
    pair, r, base = after_task1()
    c_base = probes.train_second_task(base, pair, OPT, 2, r)
    _, _, m, c_rep = replay_run(0.0)
    assert c_base == c_rep
    for k, v in base.named_params().items():
        np.testing.assert_array_equal(v, m.named_params()[k])


def test_replay_changes_training_and_is_deterministic():
    _, _, m1, c1 = replay_run(0.5)
    _, _, m2, c2 = replay_run(0.5)
    assert c1 == c2
    for k, v in m1.named_params().items():
        np.testing.assert_array_equal(v, m2.named_params()[k])
    _, _, m0, _ = replay_run(0.0)
    assert any(not np.array_equal(v, m0.named_params()[k]) for k, v in m1.named_params().items())


def test_replay_full_fraction_runs():
    _, _, _, curves = replay_run(1.0, epochs=1)
    assert len(curves["task1"]) == 2


# -- headfirst ------------------------------------------------------------------

def test_headfirst_zero_epochs_is_baseline():
    pair, r, base = after_task1()
    c_base = probes.train_second_task(base, pair, OPT, 2, r)
    _, _, m = after_task1()
    evals = {"task1": (pair.task1.test, "t1"), "task2": (pair.task2.test, "t2")}
    c_hf = M.headfirst_train(m, "t2", pair.task2, 0, OPT, 2, r.derive("shuffle").derive("task2"), r.derive("init"), evals)
    assert c_base == c_hf


def test_headfirst_phase_leaves_body_untouched():
    pair, r, m = after_task1()
    before = snapshot(m, "b")
    M.headfirst_train(m, "t2", pair.task2, 2, OPT, 0, r, r.derive("init"))
    for k, v in before.params.items():
        np.testing.assert_array_equal(v, m.named_params()[k])
    assert "t2" in m.heads
    assert all(m.trainable.values())
    with pytest.raises(ConfigError):
        M.headfirst_train(m, "t2", pair.task2, -1, OPT, 0, r, r.derive("init"))


# -- task-specific stages ----------------------------------------------------

def test_task_specific_parameter_count():
    pair, r, m = after_task1()
    ts = M.make_task_specific(m, 2)
    top = sum(st.n_params() for st in m.stages[-2:])
    assert ts.n_params() == m.n_params()
    ts.attach_head("t2", 3, Rng(1))
    head2 = sum(v.size for v in ts.heads["t2"].params.values())
    assert ts.n_params() == m.n_params() + top + head2
    assert "stage3@t2" in ts.units() and "stage1" in ts.units() and "stage2" not in ts.units()
    with pytest.raises(ConfigError):
        M.make_task_specific(m, 4)
    with pytest.raises(ConfigError):
        M.make_task_specific(ts, 1)


def test_task_specific_protects_task1_route():
    pair, r, m = after_task1()
    ts = M.make_task_specific(m, ARCH.n_stages)
    acc1 = ts.accuracy(np.asarray(pair.task1.test.inputs), pair.task1.test.labels, head="t1")
    probes.train_second_task(ts, pair, OPT, 2, r)
    after = ts.accuracy(np.asarray(pair.task1.test.inputs), pair.task1.test.labels, head="t1")
    assert after == acc1
