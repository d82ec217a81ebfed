import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuelbmi import cnn
from fuelbmi.cnn import (
    Architecture,
    CheckpointError,
    DimensionMismatch,
    Hyperparameters,
    KernelTooLong,
    backprop,
    build_model,
    classify_segment,
    conv1d_forward,
    cross_entropy,
    dense_softmax_forward,
    detect_events,
    he_init,
    lr_schedule,
    maxpool,
    momentum_schedule,
    relu,
    softmax,
    train,
    update_parameters,
)
from fuelbmi.cnn.checkpoint import FORMAT_VERSION, MAGIC, dumps, loads
from fuelbmi.core import ApplianceClass, ValidatedStream, label_space
from fuelbmi.preprocess import DatasetSplit, Segment

from helpers import gradient_errors, small_net

finite = st.floats(-50, 50, allow_nan=False)


# -- layers ------------------------------------------------------------------------

def conv(x, k, b=0.0):
    x = np.asarray(x, float)
    x = x[None] if x.ndim == 1 else x
    k = np.asarray(k, float).reshape(1, x.shape[0], -1)
    return conv1d_forward(x, k, np.array([b]))[0]


def test_conv_identity_kernel():
    assert conv([5, 7, 9], [1]).tolist() == [5, 7, 9]


def test_conv_difference_kernel():
    assert conv([1, 2, 3], [1, -1]).tolist() == [-1, -1]


def test_conv_sums_input_maps():
    assert conv([[5, 7, 9], [1, 2, 3]], [[1], [1]]).tolist() == [6, 9, 12]


@settings(max_examples=30)
@given(arrays(float, st.tuples(st.integers(1, 3), st.integers(5, 12)), elements=finite),
       st.integers(1, 5), st.integers(1, 3), st.integers(0, 2**31))
def test_conv_matches_direct_sum(x, klen, m_out, seed):
    rng = np.random.default_rng(seed)
    k = rng.normal(size=(m_out, x.shape[0], klen))
    b = rng.normal(size=m_out)
    z = conv1d_forward(x, k, b)
    t_out = x.shape[1] - klen + 1
    assert z.shape == (m_out, t_out)
    for j in range(m_out):
        for t in range(t_out):
            direct = b[j] + sum(x[i, t + u] * k[j, i, u] for i in range(x.shape[0]) for u in range(klen))
            assert z[j, t] == pytest.approx(direct, abs=1e-9)


def test_conv_kernel_too_long():
    with pytest.raises(KernelTooLong):
        conv([1, 2], [1, 1, 1])


def test_conv_map_mismatch():
    with pytest.raises(DimensionMismatch):
        conv1d_forward(np.zeros((1, 2, 5)), np.zeros((1, 3, 2)), np.zeros(1))


def test_relu():
    assert relu(np.array([-1.0, 0.0, 3.0])).tolist() == [0, 0, 3]
    assert relu(-np.ones(4)).tolist() == [0] * 4
    assert relu(np.arange(4.0)).tolist() == [0, 1, 2, 3]


def test_maxpool_examples():
    assert maxpool(np.array([1.0, 3, 2, 5]), 2)[0].tolist() == [3, 5]
    assert maxpool(np.array([4.0, 1, 7]), 2)[0].tolist() == [4, 7]
    x = np.array([2.0, -1, 6])
    assert maxpool(x, 1)[0].tolist() == x.tolist()


def test_maxpool_ties_take_first():
    _, arg = maxpool(np.array([2.0, 2.0]), 2)
    assert arg.tolist() == [0]


def test_softmax_uniform_for_zero_network():
    params = {"dense1.W": np.zeros((6, 4)), "dense1.b": np.zeros(4), "dense2.W": np.zeros((4, 3)),
              "dense2.b": np.zeros(3), "out.W": np.zeros((3, 5)), "out.b": np.zeros(5)}
    probs, _ = dense_softmax_forward(np.ones((2, 6)), params)
    assert np.allclose(probs, 0.2)


@given(arrays(float, st.tuples(st.integers(1, 4), st.integers(2, 8)), elements=finite), finite)
def test_softmax_shift_invariant_and_normalised(z, c):
    p = softmax(z)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.allclose(softmax(z + c), p, atol=1e-12)
    direct = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    assert np.allclose(p, direct, rtol=1e-9, atol=1e-15)


def test_cross_entropy_examples():
    Y = np.eye(5)[[2]]
    assert cross_entropy(Y, Y) == 0.0
    assert cross_entropy(Y, np.full((1, 5), 0.2)) == pytest.approx(-math.log(0.2))
    assert cross_entropy(Y, np.full((1, 5), 0.2)) == pytest.approx(1.6094, abs=1e-4)
    P = np.array([[0.1, 0.9], [0.7, 0.3]])
    T = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert cross_entropy(T, P) == pytest.approx(cross_entropy(T[:1], P[:1]) + cross_entropy(T[1:], P[1:]))


def test_cross_entropy_clamps_zero_probability():
    assert cross_entropy(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == pytest.approx(-math.log(1e-12))


# -- gradients -----------------------------------------------------------------------

@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed):
    model, X, Y = small_net(seed)
    assert gradient_errors(model, X, Y) < 1e-4


def test_output_bias_gradient_zero_on_perfect_prediction():
    model, X, _ = small_net(0, weight_decay=0.0)
    model.params["out.W"][:] = 0.0
    model.params["out.b"][:] = [50.0, 0.0, 0.0]
    Y = np.eye(3)[[0, 0, 0, 0]]
    grads, _ = backprop(model, X, Y)
    assert np.allclose(grads["out.b"], 0.0, atol=1e-12)


def test_decay_only_gradient():
    model, _, _ = small_net(1, weight_decay=0.5)
    grads, _ = backprop(model, np.zeros((0, 20)), np.zeros((0, 3)))
    assert np.allclose(grads["dense1.W"], 0.5 * model.params["dense1.W"])
    assert np.allclose(grads["conv.k"], 0.5 * model.params["conv.k"])
    assert np.all(grads["out.b"] == 0)


# -- optimiser -----------------------------------------------------------------------

def test_lr_schedule():
    hp = Hyperparameters(learning_rate=0.01, rate_annealing=1e-6, rate_decay=0.5)
    assert lr_schedule(0, hp, 0) == 0.01
    assert lr_schedule(10**6, hp, 0) == pytest.approx(0.005)
    assert lr_schedule(0, hp, 2) == pytest.approx(0.0025)
    flat = Hyperparameters(learning_rate=0.01, rate_decay=1.0)
    assert {lr_schedule(7, flat, d) for d in range(4)} == {lr_schedule(7, flat, 0)}


def test_momentum_schedule():
    hp = Hyperparameters(momentum_start=0.5, momentum_stable=0.99, momentum_ramp=1000)
    assert momentum_schedule(0, hp) == 0.5
    assert momentum_schedule(1000, hp) == 0.99
    assert momentum_schedule(5000, hp) == 0.99
    assert momentum_schedule(500, hp) == pytest.approx(0.745)


def _one_param_model(g_shape=(1,)):
    arch = Architecture(input_len=5, kernels=1, kernel_len=1, pool=1, hidden=(1, 1))
    return build_model(label_space(1)[:2], arch, Hyperparameters(learning_rate=0.1, rate_annealing=0.0))


def test_zero_gradient_is_fixed_point():
    m = _one_param_model()
    before = {k: v.copy() for k, v in m.params.items()}
    update_parameters(m, {k: np.zeros_like(v) for k, v in m.params.items()})
    assert all(np.array_equal(before[k], m.params[k]) for k in before)


def test_single_adam_step_by_hand():
    m = _one_param_model()
    g = 0.37
    grads = {k: np.zeros_like(v) for k, v in m.params.items()}
    grads["out.b"][:] = g
    before = m.params["out.b"].copy()
    update_parameters(m, grads, batch_size=1)
    # first step: m_hat = g and v_hat = g**2, so the move is lr * g / (|g| + eps)
    expected = before - 0.1 * g / (abs(g) + 1e-8)
    assert np.allclose(m.params["out.b"], expected, rtol=1e-12)


def test_update_deterministic():
    a, X, Y = small_net(3)
    b = a.copy()
    ga, _ = backprop(a, X, Y)
    gb, _ = backprop(b, X, Y)
    update_parameters(a, ga, 4)
    update_parameters(b, gb, 4)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert all(np.array_equal(a.opt.m[k], b.opt.m[k]) for k in a.params)


def test_he_init_variance():
    w = he_init((100_000,), 50, seed=4)
    assert abs(w.var() - 0.04) / 0.04 < 0.05


def test_build_model_biases_zero_and_seeded():
    a = build_model(label_space(3), hp=Hyperparameters(seed=7))
    b = build_model(label_space(3), hp=Hyperparameters(seed=7))
    for k in a.params:
        if k.endswith(".b"):
            assert not a.params[k].any()
        assert np.array_equal(a.params[k], b.params[k])


# -- training ------------------------------------------------------------------------

def _toy_split():
    rng = np.random.default_rng(0)
    classes = [ApplianceClass.of("Kettle"), ApplianceClass.background()]
    segs = []
    for i in range(60):
        x = np.zeros(20)
        if i % 2 == 0:
            x[rng.integers(0, 10):][:8] = 2500.0
            label = classes[0]
        else:
            label = classes[1]
        segs.append(Segment("", 0, x, label))
    return DatasetSplit(segs[:40], segs[40:50], segs[50:], 0, (0.7, 0.15, 0.15), classes, 3000.0)


def _toy_model(epochs=50):
    arch = Architecture(input_len=20, kernels=2, kernel_len=3, pool=2, hidden=(8, 4))
    hp = Hyperparameters(learning_rate=0.01, epochs=epochs, batch_size=8, seed=1)
    return build_model([ApplianceClass.of("Kettle"), ApplianceClass.background()], arch, hp)


def test_zero_epochs_identity():
    m = _toy_model()
    out, hist = train(m, _toy_split(), epochs=0)
    assert hist == []
    assert all(np.array_equal(out.params[k], m.params[k]) for k in m.params)


def test_separable_toy_problem_learned():
    m, hist = train(_toy_model(), _toy_split())
    assert max(r.train_accuracy for r in hist) == 1.0


def test_train_does_not_mutate_input():
    m = _toy_model(3)
    snap = {k: v.copy() for k, v in m.params.items()}
    train(m, _toy_split())
    assert all(np.array_equal(snap[k], m.params[k]) for k in snap)


def test_train_rejects_class_table_mismatch():
    split = _toy_split()
    split.classes = list(reversed(split.classes))
    with pytest.raises(DimensionMismatch):
        train(_toy_model(1), split)


# -- checkpoint ----------------------------------------------------------------------

def test_checkpoint_round_trip_bitwise():
    m, X, _ = small_net(2)
    back = loads(dumps(m))
    assert dumps(back) == dumps(m)
    assert np.array_equal(cnn.forward(back, X).probs, cnn.forward(m, X).probs)
    assert back.classes == m.classes


def test_checkpoint_version_mismatch():
    data = bytearray(dumps(small_net(0)[0]))
    data[len(MAGIC):len(MAGIC) + 4] = (FORMAT_VERSION + 1).to_bytes(4, "little")
    with pytest.raises(CheckpointError):
        loads(bytes(data))


def test_checkpoint_bad_magic_and_truncation():
    data = dumps(small_net(0)[0])
    with pytest.raises(CheckpointError):
        loads(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        loads(data[:-8])


# -- inference on the trained default model -----------------------------------------

def _stream(w, t0=1704067200):
    return ValidatedStream("H1", t0 + 10 * np.arange(len(w)), np.asarray(w, dtype=np.int64))


def test_zero_segment_is_background(trained):
    label, conf = classify_segment(trained.model, np.zeros(60))
    assert label.is_background


def test_confidence_is_max_probability(trained):
    x = np.random.default_rng(0).uniform(0, 3000, 60)
    label, conf = classify_segment(trained.model, x)
    probs = cnn.forward(trained.model, x[None] / trained.model.scale_w).probs[0]
    assert 0 <= conf <= 1 and conf == probs.max()
    assert label == trained.model.classes[int(probs.argmax())]


def test_training_kettle_exemplar(trained):
    kettle = ApplianceClass.of("Kettle")
    seg = next(s for s in trained.split.train if s.label == kettle)
    assert classify_segment(trained.model, seg.samples)[0] == kettle


def test_all_zero_stream_no_events(trained):
    assert detect_events(trained.model, _stream(np.zeros(600))) == []


def test_kettle_across_two_windows_single_event(trained):
    w = np.zeros(600, dtype=int)
    w[50:65] = 2800  # inside windows starting at samples 30 and 60... split by 60 boundary
    events = detect_events(trained.model, _stream(w))
    assert [e.appliance for e in events] == ["Kettle"]
    ev = events[0]
    assert ev.start_ts == 1704067200 + 500 and ev.end_ts == 1704067200 + 650


def test_composite_decodes_to_one_event_per_appliance(trained):
    w = np.zeros(600, dtype=int)
    w[240:255] += 2800
    w[240:258] += 1100
    events = detect_events(trained.model, _stream(w))
    assert sorted(e.appliance for e in events) == ["Kettle", "Toaster"]
    assert events[0].start_ts == events[1].start_ts


def test_cut_windows_defer_to_complete_view(trained):
    # toaster straddling a window edge; the cut views must not add a second appliance
    w = np.zeros(600, dtype=int)
    w[80:98] = 1100
    events = detect_events(trained.model, _stream(w))
    assert [e.appliance for e in events] == ["Toaster"]
