import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sealab.nncore import Dense, Sequential, Tensor, backward, mlp
from sealab.nncore.functional import softmax
from sealab.tasks import MemoryBank, enqueue, instance_logits, instance_loss, jigsaw_loss, traversability_loss


def _zero_head(d_in, d_out):
    return Sequential([Dense(d_in, d_out, None, np.float64)])


def _feat(n, d, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(n, d)), requires_grad=True)


# ---- jigsaw -------------------------------------------------------------------

def test_jigsaw_uniform_logits_ln27():
    loss, logits = jigsaw_loss(_zero_head(8, 27), _feat(3, 4), _feat(3, 4, 1), [1, 14, 27])
    assert abs(float(loss.data) - math.log(27)) <= 1e-9
    assert logits.shape == (3, 27)


def test_jigsaw_looking_up_mask_ln18():
    mask = np.ones((1, 27), dtype=bool)
    mask[0, [6, 7, 8, 15, 16, 17, 24, 25, 26]] = False
    loss, _ = jigsaw_loss(_zero_head(8, 27), _feat(1, 4), _feat(1, 4, 1), [14], mask)
    assert abs(float(loss.data) - math.log(18)) <= 1e-9


def test_jigsaw_confident_logit():
    head = _zero_head(8, 27)
    head.layers[0].bias.data[4] = 10.0
    loss, _ = jigsaw_loss(head, _feat(1, 4), _feat(1, 4, 1), [5])
    # ln(1 + 26 e^-10) ~= 1.18e-3 with 27 classes
    assert float(loss.data) == pytest.approx(math.log1p(26 * math.exp(-10)), rel=1e-9)
    assert float(loss.data) < 1.2e-3
    head.layers[0].bias.data[4] = 12.0
    assert float(jigsaw_loss(head, _feat(1, 4), _feat(1, 4, 1), [5])[0].data) < 1e-3


def test_jigsaw_label_outside_mask_errors():
    mask = np.ones((1, 27), dtype=bool)
    mask[0, 20] = False
    with pytest.raises(ValueError):
        jigsaw_loss(_zero_head(8, 27), _feat(1, 4), _feat(1, 4, 1), [21], mask)


def test_masked_probabilities_exactly_zero():
    mask = np.random.default_rng(0).random((5, 27)) < 0.6
    mask[:, 13] = True
    p = softmax(np.random.default_rng(1).normal(size=(5, 27)) * 5, mask)
    assert np.all(p[~mask] == 0)
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6)


# ---- traversability -----------------------------------------------------------

def test_traversability_zero_logit_ln2():
    loss, p = traversability_loss(_zero_head(4, 1), _feat(3, 4), [True, False, True])
    assert abs(float(loss.data) - math.log(2)) <= 1e-9
    assert np.allclose(p, 0.5)


def test_traversability_saturation():
    head = _zero_head(4, 1)
    head.layers[0].bias.data[0] = 20.0
    loss, _ = traversability_loss(head, _feat(1, 4), [True])
    assert float(loss.data) < 1e-8


def test_traversability_batch_mean():
    head = _zero_head(4, 1)
    head.layers[0].weight.data[0, 0] = 1.0
    f = Tensor(np.array([[1.0, 0, 0, 0], [-2.0, 0, 0, 0]]))
    both, _ = traversability_loss(head, f, [1, 0])
    a, _ = traversability_loss(head, Tensor(f.data[:1]), [1])
    b, _ = traversability_loss(head, Tensor(f.data[1:]), [0])
    assert float(both.data) == pytest.approx((float(a.data) + float(b.data)) / 2, abs=1e-12)


# ---- instance -----------------------------------------------------------------

def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_instance_uniform_logits_ln_k_plus_1():
    K = 1024
    bank = MemoryBank(K, 4, dtype=np.float64)
    q = Tensor(_unit([[1.0, 0, 0, 0]]), requires_grad=True)
    # every key (positive and negatives) orthogonal to q -> all logits 0
    k = _unit([[0, 1.0, 0, 0]])
    bank.enqueue(np.tile(_unit([[0, 0, 1.0, 0]]), (K, 1)))
    loss, logits = instance_loss(q, k, bank, 0.07)
    assert logits.shape == (1, K + 1)
    assert abs(float(loss.data) - math.log(K + 1)) <= 1e-9


def test_instance_orthogonal_negatives_closed_form():
    K = 1024
    bank = MemoryBank(K, 4, dtype=np.float64)
    bank.enqueue(np.tile(_unit([[0, 1.0, 0, 0]]), (K, 1)))
    q = Tensor(_unit([[1.0, 0, 0, 0]]), requires_grad=True)
    loss, logits = instance_loss(q, q.data, bank, 0.07)
    assert logits[0, 0] == pytest.approx(1 / 0.07)
    expected = math.log1p(K * math.exp(-1 / 0.07))
    assert float(loss.data) == pytest.approx(expected, rel=1e-9)
    assert expected < 1e-3


def test_instance_smaller_tau_lowers_loss_when_positive_wins():
    rng = np.random.default_rng(0)
    bank = MemoryBank(64, 8, dtype=np.float64)
    bank.enqueue(rng.normal(size=(64, 8)))
    q = Tensor(_unit(rng.normal(size=(1, 8))))
    k = q.data.copy()
    l1, _ = instance_loss(q, k, bank, 0.14)
    l2, _ = instance_loss(q, k, bank, 0.07)
    assert float(l2.data) < float(l1.data)


def test_instance_empty_bank_warns_and_is_zero():
    bank = MemoryBank(4, 2)
    q = Tensor(_unit([[1.0, 1.0]]).astype(np.float32), requires_grad=True)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        loss, logits = instance_loss(q, q.data, bank)
    assert any(issubclass(w.category, RuntimeWarning) for w in rec)
    assert float(loss.data) == 0.0 and logits.shape == (1, 1)


def test_instance_partial_bank_uses_filled_entries_only():
    bank = MemoryBank(10, 2, dtype=np.float64)
    bank.enqueue(_unit([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    q = Tensor(_unit([[1.0, 0.0]]))
    _, logits = instance_loss(q, q.data, bank)
    assert logits.shape == (1, 4)


def test_instance_gradient_only_reaches_q():
    rng = np.random.default_rng(0)
    bank = MemoryBank(8, 3, dtype=np.float64)
    bank.enqueue(rng.normal(size=(8, 3)))
    entries = bank.entries.copy()
    q = Tensor(_unit(rng.normal(size=(2, 3))), requires_grad=True)
    k = _unit(rng.normal(size=(2, 3)))
    k_copy = k.copy()
    loss, _ = instance_loss(q, k, bank)
    backward(loss)
    assert q.grad is not None and np.any(q.grad != 0)
    assert np.array_equal(bank.entries, entries) and np.array_equal(k, k_copy)


def test_instance_logits_layout():
    q = Tensor(_unit([[1.0, 0.0]]))
    logits = instance_logits(q, _unit([[0.6, 0.8]]), _unit([[0.0, 1.0], [1.0, 0.0]]), 0.5)
    assert np.allclose(logits.data, [[1.2, 0.0, 2.0]])


# ---- memory bank --------------------------------------------------------------

def test_bank_ring_arithmetic():
    bank = MemoryBank(4, 2)
    first = _unit([[1, 0], [0, 1], [1, 1]])
    second = _unit([[-1, 0], [0, -1], [-1, -1]])
    enqueue(bank, first)
    assert bank.cursor == 3 and bank.filled == 3
    enqueue(bank, second)
    assert bank.cursor == 2 and bank.filled == 4
    assert np.allclose(bank.entries[[3, 0, 1]], second)
    assert np.allclose(bank.entries[2], first[2])


def test_bank_dim_mismatch():
    with pytest.raises(ValueError):
        MemoryBank(4, 3).enqueue(np.ones((2, 2)))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 9), min_size=1, max_size=8), st.integers(1, 12))
def test_bank_unit_norm_and_fifo_property(batches, capacity):
    rng = np.random.default_rng(len(batches) * 31 + capacity)
    bank = MemoryBank(capacity, 3, dtype=np.float64)
    history = []
    for n in batches:
        keys = rng.normal(size=(n, 3)) + 0.1
        history.extend(_unit(keys))
        bank.enqueue(keys)
    assert bank.filled == min(capacity, len(history))
    assert np.allclose(np.linalg.norm(bank.negatives(), axis=1), 1, atol=1e-6)
    newest = history[-bank.filled:]
    # slot (cursor - 1 - i) holds the i-th newest key
    for i, key in enumerate(reversed(newest)):
        assert np.allclose(bank.entries[(bank.cursor - 1 - i) % capacity], key)


@pytest.mark.parametrize("fn", ["jig", "trav", "ins"])
def test_losses_nonnegative(fn):
    rng = np.random.default_rng(3)
    f = Tensor(rng.normal(size=(6, 5)))
    if fn == "jig":
        loss, _ = jigsaw_loss(mlp([10, 7, 27], rng, np.float64), f, Tensor(rng.normal(size=(6, 5))),
                              rng.integers(1, 28, size=6))
    elif fn == "trav":
        loss, _ = traversability_loss(mlp([5, 3, 1], rng, np.float64), f, rng.random(6) < 0.5)
    else:
        bank = MemoryBank(16, 5, dtype=np.float64)
        bank.enqueue(rng.normal(size=(16, 5)))
        loss, _ = instance_loss(Tensor(_unit(f.data)), _unit(rng.normal(size=(6, 5))), bank)
    assert float(loss.data) >= 0
