import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sealab.nncore import (
    ArchConfig,
    Dense,
    EncoderState,
    NoTapeError,
    Sequential,
    Tensor,
    backward,
    bce,
    checkpoint,
    cosine_lr,
    cross_entropy,
    ema_update,
    forward,
    l2_normalize,
    mlp,
    no_grad,
    relu,
    sgd_step,
    sigmoid,
    softmax,
    tape_node_count,
)
from sealab.nncore.functional import cross_entropy_loss, log_softmax, mse_loss, normalize_rows
from sealab.nncore.tensor import concat, matmul, rowdot, weighted_sum

from conftest import loss_builders, max_relative_grad_error, tiny_setup


class _OneParam:
    """Minimal optimizer state holding a single named parameter."""

    def __init__(self, value, velocity=0.0):
        self.p = Tensor(np.array([value], dtype=np.float64), requires_grad=True, name="p")
        self.velocity = {"p": np.array([velocity], dtype=np.float64)}

    @property
    def theta(self):
        return {"p": self.p}


# ---- layers and forward ----------------------------------------------------

def test_identity_dense_passes_input_through():
    d = Dense(4, 4, None, np.float64)
    d.weight.data = np.eye(4)
    x = np.arange(8.0).reshape(2, 4)
    assert np.array_equal(forward(Sequential([d]), x).data, x)


def test_relu_values_and_zero_subgradient():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    y = relu(x)
    assert y.data.tolist() == [0.0, 0.0, 2.0]
    backward(y, np.ones(3))
    assert x.grad.tolist() == [0.0, 0.0, 1.0]


def test_dense_shape_mismatch():
    with pytest.raises(ValueError):
        Dense(3, 2, np.random.default_rng(0))(np.zeros((1, 4)))


def test_glorot_init_range():
    d = Dense(30, 10, np.random.default_rng(0))
    limit = math.sqrt(6 / 40)
    assert np.all(np.abs(d.weight.data) <= limit)
    assert np.all(d.bias.data == 0)


def test_record_false_builds_no_tape():
    net = mlp([5, 4, 3], np.random.default_rng(0))
    before = tape_node_count()
    out = forward(net, np.ones((2, 5), dtype=np.float32), record=False)
    assert tape_node_count() == before
    assert not out.requires_grad
    with pytest.raises(NoTapeError):
        backward(mse_loss(out, np.zeros((2, 3))))


def test_record_true_builds_tape():
    net = mlp([5, 4, 3], np.random.default_rng(0))
    before = tape_node_count()
    forward(net, np.ones((2, 5), dtype=np.float32))
    assert tape_node_count() > before


def test_no_grad_context_restores():
    a = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        assert not (a * 2.0).requires_grad
    assert (a * 2.0).requires_grad


# ---- backward ----------------------------------------------------------------

def test_linear_gradient_is_outer_product():
    x = np.array([[1.0, 2.0, 3.0]])
    W = Tensor(np.random.default_rng(0).normal(size=(3, 2)), requires_grad=True)
    y = matmul(Tensor(x), W)
    backward(y, np.ones((1, 2)))
    assert np.allclose(W.grad, np.outer(x[0], np.ones(2)))


def test_gradients_accumulate_over_shared_use():
    a = Tensor(np.array([2.0]), requires_grad=True)
    backward(a * a + a * 3.0, np.ones(1))
    assert a.grad.tolist() == [2 * 2.0 + 3.0]


def test_weighted_sum_gradient():
    a = Tensor(np.array(2.0), requires_grad=True)
    b = Tensor(np.array(5.0), requires_grad=True)
    total = weighted_sum([(0.5, a), (0.0, b)])
    assert float(total.data) == 1.0
    backward(total)
    assert float(a.grad) == 0.5 and float(b.grad) == 0.0


def test_concat_and_rowdot_gradients():
    a = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    b = Tensor(np.array([[3.0, 4.0]]), requires_grad=True)
    backward(rowdot(a, b), np.ones((1, 1)))
    assert a.grad.tolist() == [[3.0, 4.0]] and b.grad.tolist() == [[1.0, 2.0]]
    c = Tensor(np.array([[1.0]]), requires_grad=True)
    d = Tensor(np.array([[2.0, 5.0]]), requires_grad=True)
    backward(concat([c, d]), np.array([[7.0, 8.0, 9.0]]))
    assert c.grad.tolist() == [[7.0]] and d.grad.tolist() == [[8.0, 9.0]]


def test_random_three_layer_net_matches_finite_differences():
    from sealab.oracles import oracle_grad

    rng = np.random.default_rng(0)
    net = mlp([5, 7, 6, 3], rng, np.float64)
    for p in net.parameters():
        p.data += rng.uniform(-0.1, 0.1, size=p.data.shape)
    x = rng.normal(size=(4, 5))
    y = rng.normal(size=(4, 3))
    loss = lambda: mse_loss(net(Tensor(x)), y)  # noqa: E731
    backward(loss())
    numeric = oracle_grad(lambda: loss().data, [p.data for p in net.parameters()])
    for p, n in zip(net.parameters(), numeric):
        assert np.max(np.abs(p.grad - n)) <= 1e-6 * max(1.0, np.max(np.abs(n)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_task_losses_gradcheck(seed):
    state, batch, bank = tiny_setup(seed)
    for name, fn in loss_builders(state, batch, bank).items():
        assert max_relative_grad_error(state, fn) <= 1e-5, name


def test_backward_without_tape_raises():
    with pytest.raises(NoTapeError):
        backward(Tensor(np.array(1.0)))


# ---- numerics ----------------------------------------------------------------

def test_softmax_uniform():
    p = softmax(np.zeros(3))
    assert np.allclose(p, 1 / 3) and abs(p.sum() - 1) < 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-500, 500)))
def test_softmax_properties(z):
    p = softmax(z)
    assert np.all(p > 0) or z.max() - z.min() > 700
    assert abs(p.sum() - 1) < 1e-6


def test_masked_softmax_zero_on_unavailable():
    mask = np.array([True, False, True, False])
    p = softmax(np.array([1.0, 50.0, 2.0, -3.0]), mask)
    assert p[1] == 0 and p[3] == 0 and abs(p.sum() - 1) < 1e-6


def test_softmax_zero_length_raises():
    with pytest.raises(ValueError):
        softmax(np.zeros(0))


def test_bce_at_half_is_ln2():
    assert bce(0.5, 1) == pytest.approx(math.log(2), abs=1e-12)
    assert bce(0.5, 0) == pytest.approx(0.693147, abs=1e-6)


def test_cross_entropy_margin_ten():
    logits = np.array([[0.0, 10.0]])
    assert cross_entropy(softmax(logits), [1]) < 1e-4
    # general closed form ln(1 + (C-1) e^-10)
    for c in (2, 5, 27):
        logits = np.zeros((1, c))
        logits[0, 0] = 10.0
        assert cross_entropy(softmax(logits), [0]) == pytest.approx(math.log1p((c - 1) * math.exp(-10)), rel=1e-9)


def test_sigmoid_is_stable_at_extremes():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert s.tolist() == [0.0, 0.5, 1.0]


def test_l2_normalize_errors_and_unit_norm():
    v = l2_normalize(np.array([[3.0, 4.0]]))
    assert np.allclose(v, [[0.6, 0.8]])
    with pytest.raises(ValueError):
        l2_normalize(np.zeros(3))
    with pytest.raises(ValueError):
        l2_normalize(np.array([1e-13, 0.0]))
    with pytest.raises(ValueError):
        l2_normalize(np.zeros(0))
    with pytest.raises(ValueError):
        normalize_rows(Tensor(np.zeros((1, 2))))


def test_cross_entropy_loss_rejects_masked_label():
    mask = np.ones((1, 4), dtype=bool)
    mask[0, 1] = False
    with pytest.raises(ValueError):
        cross_entropy_loss(np.zeros((1, 4)), [1], mask)


def test_log_softmax_consistent_with_softmax():
    z = np.random.default_rng(0).normal(size=(3, 6))
    assert np.allclose(np.exp(log_softmax(z, axis=1)), softmax(z, axis=1))


# ---- optimizer, EMA, schedule --------------------------------------------------

def test_sgd_nesterov_hand_case():
    s = _OneParam(0.0)
    sgd_step(s, {"p": np.array([1.0])}, lr=0.03, momentum=0.95, weight_decay=0.0)
    assert s.velocity["p"][0] == 1.0
    assert abs(s.p.data[0] - (-0.0585)) <= 1e-12


def test_sgd_zero_grad_no_change():
    s = _OneParam(0.7)
    sgd_step(s, {"p": np.array([0.0])}, lr=0.03, momentum=0.95, weight_decay=0.0)
    assert s.p.data[0] == 0.7


def test_sgd_weight_decay_hand_case():
    s = _OneParam(1.0)
    sgd_step(s, {"p": None}, lr=0.03, momentum=0.95, weight_decay=1e-4)
    assert abs(s.p.data[0] - (1.0 - 0.03 * 1e-4 * 1.95)) <= 1e-12


def test_sgd_plain_momentum_and_shape_check():
    s = _OneParam(0.0, velocity=1.0)
    sgd_step(s, {"p": np.array([1.0])}, lr=0.1, momentum=0.5, weight_decay=0.0, nesterov=False)
    assert abs(s.p.data[0] - (-0.15)) <= 1e-12
    with pytest.raises(ValueError):
        sgd_step(s, {"p": np.zeros(2)}, lr=0.1)


def _small_state():
    arch = ArchConfig(in_dim=6, enc_hidden=(5,), feat_dim=4, jig_hidden=4, trav_hidden=3, ins_hidden=3, proj_dim=2)
    return EncoderState(arch, 0, np.float64)


def test_ema_cases():
    state = _small_state()
    for hat in state.theta_hat.values():
        hat.data[...] = 1.0
    for name in state.theta_hat:
        state.theta[name].data[...] = 0.0
    ema_update(state, 0.999)
    assert all(np.all(h.data == 0.999) for h in state.theta_hat.values())
    before = {k: h.data.copy() for k, h in state.theta_hat.items()}
    ema_update(state, 1.0)
    assert all(np.array_equal(h.data, before[k]) for k, h in state.theta_hat.items())
    ema_update(state, 0.0)
    assert all(np.array_equal(h.data, state.theta[k].data) for k, h in state.theta_hat.items())
    with pytest.raises(ValueError):
        ema_update(state, 1.5)


def test_ema_exact_recurrence():
    state = _small_state()
    rng = np.random.default_rng(1)
    for p in state.theta.values():
        p.data[...] = rng.normal(size=p.data.shape)
    prev = {k: h.data.copy() for k, h in state.theta_hat.items()}
    ema_update(state, 0.9)
    for k, h in state.theta_hat.items():
        assert np.max(np.abs(h.data - (0.9 * prev[k] + (1 - 0.9) * state.theta[k].data))) == 0


def test_optimizer_never_touches_theta_hat():
    state = _small_state()
    before = [h.data.copy() for h in state.theta_hat.values()]
    grads = {k: np.ones_like(p.data) for k, p in state.theta.items()}
    sgd_step(state, grads, 0.1)
    assert all(np.array_equal(a, h.data) for a, h in zip(before, state.theta_hat.values()))


def test_cosine_schedule():
    assert cosine_lr(0, 100, 0.03) == 0.03
    assert abs(cosine_lr(50, 100, 0.03) - 0.015) <= 1e-12
    assert abs(cosine_lr(100, 100, 0.03)) <= 1e-12
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 0.03)
    with pytest.raises(ValueError):
        cosine_lr(0, 0, 0.03)


# ---- checkpoints ---------------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    state = EncoderState(ArchConfig(), 3)
    path = tmp_path / "c.sea1"
    checkpoint.save(path, state.named_arrays(), b"hello")
    tensors, extra = checkpoint.load(path)
    assert extra == b"hello"
    for name, arr in state.named_arrays():
        assert tensors[name].tobytes() == np.asarray(arr, dtype=np.float32).tobytes()
    other = EncoderState(ArchConfig(), 99)
    other.load_arrays(tensors)
    assert all(a.tobytes() == b.tobytes() for (_, a), (_, b) in zip(state.named_arrays(), other.named_arrays()))


def test_checkpoint_corruption_detected(tmp_path):
    blob = bytearray(checkpoint.encode([("a", np.ones((2, 2)))]))
    blob[12] ^= 0xFF
    with pytest.raises(checkpoint.CheckpointError, match="CRC"):
        checkpoint.decode(bytes(blob))
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.decode(b"XXXX" + bytes(blob[4:]))


def test_checkpoint_version_mismatch():
    import struct
    import zlib

    body = bytearray(checkpoint.encode([("a", np.ones(1))])[:-4])
    body[4:6] = struct.pack("<H", 9)
    blob = bytes(body) + struct.pack("<I", zlib.crc32(bytes(body)))
    with pytest.raises(checkpoint.CheckpointError, match="version 9"):
        checkpoint.decode(blob)


def test_load_arrays_shape_mismatch():
    state = EncoderState(ArchConfig(), 0)
    arrays = dict(state.named_arrays())
    key = next(iter(arrays))
    arrays[key] = np.zeros((1, 1), dtype=np.float32)
    with pytest.raises(ValueError, match="shape"):
        state.load_arrays(arrays)
