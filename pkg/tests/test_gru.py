import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedseq import gru
from fedseq.batching import collate
from fedseq.sequence_data import LabeledSequence

from conftest import random_batch, random_sequences


def scalar_logits(seq, p):
    """Loop-only reference forward pass for one sequence."""
    H, d = p.hidden, p.d
    h = [0.0] * H
    sig = lambda a: 1.0 / (1.0 + math.exp(-a))
    for x in seq:
        z = [sig(sum(p.W_z[i, c] * x[c] for c in range(d)) + sum(p.U_z[i, j] * h[j] for j in range(H)) + p.b_z[i]) for i in range(H)]
        r = [sig(sum(p.W_r[i, c] * x[c] for c in range(d)) + sum(p.U_r[i, j] * h[j] for j in range(H)) + p.b_r[i]) for i in range(H)]
        cand = [
            math.tanh(sum(p.W_h[i, c] * x[c] for c in range(d)) + sum(p.U_h[i, j] * r[j] * h[j] for j in range(H)) + p.b_h[i])
            for i in range(H)
        ]
        h = [(1 - z[i]) * h[i] + z[i] * cand[i] for i in range(H)]
    return [sum(p.W_out[a, j] * h[j] for j in range(H)) + p.b_out[a] for a in range(p.k)]


def random_params(rng, d, H, k, scale=0.5):
    return gru.GruParams(d, H, k, rng.normal(scale=scale, size=gru.param_count(d, H, k)))


def test_param_count_and_layout():
    assert gru.param_count(1, 64, 10) == 64 * (3 + 192 + 3) + 10 * 65
    p = gru.GruParams(2, 3, 4, np.arange(gru.param_count(2, 3, 4), dtype=float))
    assert p.W_z.shape == (3, 2) and p.U_h.shape == (3, 3) and p.W_out.shape == (4, 3)
    assert p.W_z[0, 0] == 0.0 and p.W_r[0, 0] == 6.0
    assert p.b_out[-1] == p.vector[-1]
    with pytest.raises(ValueError, match="expected"):
        gru.GruParams(2, 3, 4, np.zeros(5))


def test_init_ranges_and_determinism():
    p = gru.init_params(1, 64, 10, seed=3)
    bound = 1 / 8
    for block in (p.W, p.U, p.W_out):
        assert np.abs(block).max() <= bound
    assert not p.b.any() and not p.b_out.any()
    np.testing.assert_array_equal(p.vector, gru.init_params(1, 64, 10, seed=3).vector)


def test_step_zero_params_halves_state():
    p = gru.zeros(1, 4, 2)
    h = np.array([1.0, -2.0, 0.5, 0.0])
    np.testing.assert_allclose(gru.gru_step(np.array([3.0]), h, p), 0.5 * h, atol=1e-15)


def test_step_saturated_update_gate():
    p = gru.zeros(1, 3, 2)
    p.b_z[:] = 100.0
    p.b_h[:] = 0.3
    out = gru.gru_step(np.array([0.0]), np.array([5.0, -5.0, 1.0]), p)
    np.testing.assert_allclose(out, math.tanh(0.3), atol=1e-12)


def test_step_shape_error():
    with pytest.raises(ValueError, match="shape mismatch"):
        gru.gru_step(np.zeros(2), np.zeros(4), gru.zeros(1, 4, 2))


def test_forward_matches_scalar_oracle(rng):
    p = random_params(rng, 2, 5, 3)
    seqs = random_sequences(rng, [7, 3, 5], 3, d=2)
    logits, _ = gru.forward(collate(seqs), p)
    for row, s in zip(logits, seqs):
        np.testing.assert_allclose(row, scalar_logits(s.features, p), atol=1e-12)


def test_step_composes_to_forward(rng):
    p = random_params(rng, 1, 6, 4)
    seq = random_sequences(rng, [9], 4)[0]
    h = np.zeros(6)
    for x in seq.features:
        h = gru.gru_step(x, h, p)
    np.testing.assert_allclose(gru.final_hidden(collate([seq]), p)[0], h, atol=1e-13)


def test_zero_params_loss_is_log_k(rng):
    batch = random_batch(rng, [4, 9, 2], 10)
    loss, _ = gru.loss_and_grads(batch, gru.zeros(1, 8, 10))
    assert loss == pytest.approx(math.log(10), abs=1e-12)


def fd_check(rng, backend=None):
    p = random_params(rng, 1, 8, 3)
    batch = random_batch(rng, rng.integers(1, 13, size=4), 3)
    _, g = gru.loss_and_grads(batch, p, backend=backend)
    eps = 1e-5
    fd = np.empty_like(p.vector)
    for i in range(p.vector.size):
        v = p.vector.copy()
        v[i] += eps
        lp, _ = gru.loss_and_grads(batch, gru.GruParams(1, 8, 3, v), backend=backend)
        v[i] -= 2 * eps
        lm, _ = gru.loss_and_grads(batch, gru.GruParams(1, 8, 3, v), backend=backend)
        fd[i] = (lp - lm) / (2 * eps)
    return np.max(np.abs(g.vector - fd) / np.maximum(np.maximum(np.abs(g.vector), np.abs(fd)), 1e-7))


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_gradient_matches_finite_differences(backend):
    rng = np.random.default_rng(7)
    for _ in range(3):
        assert fd_check(rng, backend) < 1e-4


def test_padding_is_inert(rng):
    p = random_params(rng, 1, 5, 3)
    seqs = random_sequences(rng, [3, 8, 5], 3)
    batch = collate(seqs)
    noisy = batch.features.copy()
    noisy[~batch.mask] = rng.normal(size=(~batch.mask).sum())[:, None]
    dirty = type(batch)(noisy, batch.lengths, batch.mask, batch.labels)
    a, ga = gru.loss_and_grads(batch, p)
    b, gb = gru.loss_and_grads(dirty, p)
    assert a == b
    np.testing.assert_array_equal(ga.vector, gb.vector)


def test_batch_equals_singletons(rng):
    p = random_params(rng, 1, 6, 4)
    seqs = random_sequences(rng, [2, 11, 6, 6, 1], 4)
    logits, _ = gru.forward(collate(seqs), p)
    _, g = gru.loss_and_grads(collate(seqs), p)
    mean = np.zeros_like(g.vector)
    for row, s in zip(logits, seqs):
        single, _ = gru.forward(collate([s]), p)
        np.testing.assert_allclose(row, single[0], atol=1e-12)
        mean += gru.loss_and_grads(collate([s]), p)[1].vector / len(seqs)
    np.testing.assert_allclose(g.vector, mean, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2), st.integers(0, 2**32 - 1))
def test_flatten_is_linear_and_round_trips(coef, seed):
    rng = np.random.default_rng(seed)
    a, b = random_params(rng, 1, 3, 2), random_params(rng, 1, 3, 2)
    combo = gru.GruParams(1, 3, 2, coef[0] * a.vector + coef[1] * b.vector)
    np.testing.assert_allclose(
        gru.flatten(combo), coef[0] * gru.flatten(a) + coef[1] * gru.flatten(b), atol=1e-12
    )
    back = gru.unflatten(gru.flatten(a), a.dims)
    np.testing.assert_array_equal(back.vector, a.vector)
    assert back.vector is not a.vector


def test_unflatten_length_error():
    with pytest.raises(ValueError, match="cannot unflatten"):
        gru.unflatten(np.zeros(10), (1, 4, 2))


def test_predict_ties_lowest_index(rng):
    p = gru.zeros(1, 3, 4)
    assert gru.predict(random_batch(rng, [3, 2], 4), p).tolist() == [0, 0]
    p.b_out[:] = [0.0, 2.0, 2.0, 1.0]
    assert gru.predict(random_batch(rng, [3], 4), p).tolist() == [1]


def test_label_out_of_range(rng):
    batch = collate([LabeledSequence(np.zeros((2, 1)), 5)])
    with pytest.raises(IndexError):
        gru.loss_and_grads(batch, gru.zeros(1, 3, 4))


def test_save_load_vector(tmp_path, rng):
    v = rng.normal(size=17)
    gru.save_vector(tmp_path / "w.bin", v)
    raw = (tmp_path / "w.bin").read_bytes()
    assert raw[:8] == (17).to_bytes(8, "little") and len(raw) == 8 + 17 * 8
    np.testing.assert_array_equal(gru.load_vector(tmp_path / "w.bin"), v)
    (tmp_path / "bad.bin").write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        gru.load_vector(tmp_path / "bad.bin")


def test_backends_agree(rng):
    p = random_params(rng, 1, 16, 10, scale=0.3)
    batch = random_batch(rng, rng.integers(1, 60, size=20), 10)
    la, ga = gru.loss_and_grads(batch, p, backend="numpy")
    lb, gb = gru.loss_and_grads(batch, p, backend="numba")
    assert la == pytest.approx(lb, rel=1e-12)
    np.testing.assert_allclose(ga.vector, gb.vector, rtol=1e-9, atol=1e-12)
