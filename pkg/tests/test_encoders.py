import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oemb import encoders as enc
from oemb.encoders import DegenerateEmbeddingError
from oemb.model import init_params


def zero_lstm(d_in, d_h, **biases):
    t = {}
    for g in enc.GATES:
        t[f"W{g}"] = np.zeros((d_h, d_in))
        t[f"U{g}"] = np.zeros((d_h, d_h))
        t[f"b{g}"] = np.asarray(biases.get(f"b{g}", np.zeros(d_h)), dtype=float)
    return enc.LstmParams(**t)


def assert_embedding(e):
    assert np.all(e >= 0)
    assert abs(np.linalg.norm(e) - 1.0) < 1e-6


# simple-average sentence / video ------------------------------------------

def test_sentence_sa_examples():
    I = np.eye(2)
    np.testing.assert_allclose(enc.encode_sentence_sa(I, np.array([[1.0, -1.0], [3.0, 1.0]])),
                               [1.0, 0.0])
    np.testing.assert_allclose(enc.encode_sentence_sa(I, np.array([[0.0, 3.0]])), [0.0, 1.0])
    with pytest.raises(DegenerateEmbeddingError):
        enc.encode_sentence_sa(np.zeros((2, 2)), np.array([[1.0, 2.0]]))


def test_video_sa_examples():
    I = np.eye(2)
    np.testing.assert_allclose(enc.encode_video_sa(I, np.array([[0.0, 2.0], [0.0, 4.0]])),
                               [0.0, 1.0])
    W = np.array([[1.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(enc.encode_video_sa(W, np.array([[-1.0, -1.0]])), [1.0, 0.0])
    f = np.array([[0.3, -2.0]])
    W = np.array([[1.0, 2.0], [-0.5, 0.1]])
    np.testing.assert_allclose(enc.encode_video_sa(W, f), np.abs(W @ f[0]) / np.linalg.norm(W @ f[0]))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        enc.encode_sentence_sa(np.eye(3), np.ones((2, 2)))


# LSTM ---------------------------------------------------------------------

def test_lstm_zero_fixed_point():
    p = zero_lstm(1, 1)
    h, c = enc.lstm_step(p, [0.0], [0.0], [0.0])
    assert h[0] == 0.0 and c[0] == 0.0


def test_lstm_forget_half():
    p = zero_lstm(1, 1)
    h, c = enc.lstm_step(p, [0.0], [0.0], [2.0])
    assert c[0] == pytest.approx(1.0, abs=1e-15)
    assert h[0] == pytest.approx(0.5 * math.tanh(1.0), abs=1e-15)
    assert h[0] == pytest.approx(0.380797, abs=1e-6)


def test_lstm_step_shape_error():
    p = zero_lstm(2, 3)
    with pytest.raises(ValueError):
        enc.lstm_step(p, [0.0], np.zeros(3), np.zeros(3))


def test_lstm_zero_params_degenerate():
    with pytest.raises(DegenerateEmbeddingError):
        enc.encode_sentence_lstm(zero_lstm(2, 2), np.array([[0.5, -1.0]]))


def test_lstm_crafted_last_state():
    # zero weights: i = 0.5, g = tanh(bc), c = 0.5 g, h = sigmoid(bo) tanh(c)
    target = np.array([0.3, -0.4])
    g = np.array([0.9, -0.9])
    o = np.abs(target) / math.tanh(0.45)
    p = zero_lstm(1, 2, bc=np.arctanh(g), bo=np.log(o / (1 - o)))
    h = enc.lstm_last_hidden(p, np.array([[0.0]]))
    np.testing.assert_allclose(h, target, atol=1e-12)
    np.testing.assert_allclose(enc.encode_sentence_lstm(p, np.array([[0.0]])), [0.6, 0.8],
                               atol=1e-12)


def test_lstm_order_matters():
    rng = np.random.default_rng(0)
    p = init_params("m2", 3, 4, 5, 2, rng).lstm()
    S = rng.normal(size=(4, 3))
    a = enc.encode_sentence_lstm(p, S)
    b = enc.encode_sentence_lstm(p, S[::-1])
    assert np.max(np.abs(a - b)) > 1e-3


def test_batched_lstm_matches_stepwise():
    rng = np.random.default_rng(1)
    p = init_params("m2", 3, 4, 6, 2, rng).lstm()
    seqs = [rng.normal(size=(n, 3)) for n in (1, 4, 2)]
    X, mask = enc.pad_sequences(seqs)
    H, _ = enc.lstm_forward_batch(p, X, mask)
    for s, h in zip(seqs, H):
        np.testing.assert_allclose(h, enc.lstm_last_hidden(p, s), atol=1e-12)


# attention ----------------------------------------------------------------

def crafted_attention():
    # d_a = 1; frame [3, 0] scores ln 2, frame [0, 3] scores 0
    K = np.array([[math.atanh(math.log(2.0)) / 3.0, 0.0]])
    return enc.AttentionParams(Q=np.zeros((1, 2)), K=K, s=np.array([1.0]))


def test_attention_closed_form_softmax():
    V = np.array([[3.0, 0.0], [0.0, 3.0]])
    alpha = enc.attention_weights(crafted_attention(), np.zeros(2), V)
    np.testing.assert_allclose(alpha, [2 / 3, 1 / 3], atol=1e-12)
    e = enc.encode_video_attention(crafted_attention(), np.eye(2), np.zeros(2), V)
    np.testing.assert_allclose(e, np.array([2.0, 1.0]) / math.sqrt(5.0), atol=1e-12)


def test_attention_singleton_and_identical():
    rng = np.random.default_rng(2)
    p = init_params("m3", 3, 4, 5, 3, rng)
    att, W = p.attention(), p.tensors["W_video"]
    h = rng.normal(size=5)
    f = rng.normal(size=(1, 4))
    assert enc.attention_weights(att, h, f).tolist() == [1.0]
    np.testing.assert_allclose(enc.encode_video_attention(att, W, h, f),
                               enc.encode_video_sa(W, f), atol=1e-12)
    V = np.repeat(f, 6, axis=0)
    np.testing.assert_allclose(enc.attention_weights(att, h, V), np.full(6, 1 / 6), atol=1e-12)
    np.testing.assert_allclose(enc.encode_video_attention(att, W, h, V),
                               enc.encode_video_sa(W, f), atol=1e-9)


def test_batched_attention_matches_single():
    rng = np.random.default_rng(3)
    p = init_params("m3", 3, 4, 5, 3, rng)
    att = p.attention()
    vids = [rng.normal(size=(n, 4)) for n in (1, 3, 5)]
    Vpad, vmask = enc.pad_sequences(vids)
    h = rng.normal(size=5)
    alpha, pooled, _ = enc.attention_pool_batch(att, h, Vpad, vmask)
    for b, v in enumerate(vids):
        ref = enc.attention_weights(att, h, v)
        np.testing.assert_allclose(alpha[b, :len(v)], ref, atol=1e-12)
        assert np.all(alpha[b, len(v):] == 0)
        np.testing.assert_allclose(pooled[b], ref @ v, atol=1e-12)


# properties ---------------------------------------------------------------

seeds = st.integers(0, 2 ** 32 - 1)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_outputs_are_embeddings(seed):
    rng = np.random.default_rng(seed)
    p = init_params("m3", 3, 4, 5, 3, rng)
    S = rng.normal(size=(int(rng.integers(1, 6)), 3))
    V = rng.normal(size=(int(rng.integers(1, 6)), 4))
    W_word = rng.normal(size=(5, 3))
    h = enc.lstm_last_hidden(p.lstm(), S)
    assert_embedding(enc.encode_sentence_sa(W_word, S))
    assert_embedding(enc.encode_sentence_lstm(p.lstm(), S))
    assert_embedding(enc.encode_video_sa(p.tensors["W_video"], V))
    assert_embedding(enc.encode_video_attention(p.attention(), p.tensors["W_video"], h, V))


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_sa_sentence_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(5, 3))
    S = rng.normal(size=(int(rng.integers(1, 7)), 3))
    perm = rng.permutation(len(S))
    np.testing.assert_allclose(enc.encode_sentence_sa(W, S), enc.encode_sentence_sa(W, S[perm]),
                               atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(1e-3, 1e3))
def test_video_sa_scale_invariant(seed, lam):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(5, 4))
    V = rng.normal(size=(int(rng.integers(1, 7)), 4))
    np.testing.assert_allclose(enc.encode_video_sa(W, lam * V), enc.encode_video_sa(W, V),
                               atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seeds)
def test_uniform_attention_equals_mean(seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(5, 4))
    V = rng.normal(size=(int(rng.integers(1, 7)), 4))
    # score vector 0 makes every frame score equal
    att = enc.AttentionParams(rng.normal(size=(3, 5)), rng.normal(size=(3, 4)), np.zeros(3))
    out = enc.encode_video_attention(att, W, rng.normal(size=5), V)
    np.testing.assert_allclose(out, enc.encode_video_sa(W, V), atol=1e-9)
