import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajembed.embed import (
    FCEmbedder, FourierEmbedder, IndexEmbedding, Word2VecConfig, assemble, fc_embed, fourier_embed,
    index_embed, word2vec_train,
)
from trajembed.numerics import Parameter, SeededRng, ShapeError, Tensor, backward, grad_check, ops


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_fc_zero_weight_gives_activation_of_bias():
    layer = FCEmbedder(SeededRng(0), 3, 4, activation="tanh")
    b0 = np.array([0.1, -0.4, 2.0, 0.0])
    layer.layers[0].weight.assign(np.zeros((3, 4)))
    layer.layers[0].bias.assign(b0)
    out = fc_embed(np.random.default_rng(0).normal(size=(5, 3)), layer)
    np.testing.assert_allclose(out.data, np.tile(np.tanh(b0), (5, 1)), rtol=0, atol=0)


def test_fc_identity_layer():
    layer = FCEmbedder(SeededRng(0), 4, 4, activation="identity")
    layer.layers[0].weight.assign(np.eye(4))
    x = np.arange(8.0).reshape(2, 4)
    np.testing.assert_array_equal(fc_embed(x, layer).data, x)


def test_fc_dim_mismatch():
    with pytest.raises(ShapeError):
        fc_embed(np.ones((2, 5)), FCEmbedder(SeededRng(0), 4, 4))


def test_fc_gradient():
    layer = FCEmbedder(SeededRng(1), 3, 5, layers=2)
    w, b = layer.layers[0].weight.data, layer.layers[0].bias.data
    x = np.random.default_rng(1).normal(size=(4, 3))
    assert grad_check(lambda w_, b_: ops.sum(ops.tanh(Tensor(x) @ w_ + b_) ** 2), [w, b]) <= 1e-3


def test_index_embed_returns_rows_and_sparse_grad():
    emb = IndexEmbedding(SeededRng(0), 6, 3)
    np.testing.assert_array_equal(emb([2]).data[0], emb.table.data[2])
    backward(ops.sum(emb([2, 2]) * 3.0))
    touched = np.flatnonzero(np.abs(emb.table.grad).sum(axis=1))
    assert touched.tolist() == [2]
    np.testing.assert_array_equal(emb.table.grad[2], [6.0, 6.0, 6.0])


def test_index_embed_out_of_range():
    with pytest.raises(IndexError):
        index_embed([6], Parameter(np.zeros((6, 2))))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 19), min_size=1, max_size=12))
def test_index_grad_zero_on_unused_rows(tokens):
    table = Parameter(np.random.default_rng(len(tokens)).normal(size=(20, 4)))
    backward(ops.sum(ops.tanh(index_embed(tokens, table))))
    unused = sorted(set(range(20)) - set(tokens))
    assert np.all(table.grad[unused] == 0.0)


def test_fourier_at_zero():
    d = 8
    out = fourier_embed(0.0, Tensor(np.random.default_rng(0).normal(size=d // 2))).data
    np.testing.assert_allclose(out, np.r_[np.ones(d // 2), np.zeros(d // 2)] / np.sqrt(d), atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1e3, 1e3), st.integers(1, 16), st.integers(0, 2**32))
def test_fourier_norm_constant(x, half, seed):
    w = np.random.default_rng(seed).normal(size=half)
    out = fourier_embed(x, Tensor(w)).data
    assert np.linalg.norm(out) == pytest.approx(1 / np.sqrt(2), abs=1e-12)


def test_fourier_periodic_in_scalar_frequency():
    w = 0.7
    a = fourier_embed(1.3, Tensor([w])).data
    b = fourier_embed(1.3 + 2 * np.pi / w, Tensor([w])).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_fourier_odd_dim():
    with pytest.raises(ValueError):
        FourierEmbedder(SeededRng(0), 5)


def test_word2vec_shape_and_similarity():
    corpus = [[0, 1] * 200, [2, 3] * 200]
    table = word2vec_train(corpus, 4, Word2VecConfig(dim=16, epochs=5), seed=0)
    assert table.shape == (4, 16)
    assert _cos(table[0], table[1]) > _cos(table[0], table[2])
    cbow = word2vec_train(corpus, 4, Word2VecConfig(mode="cbow", dim=16, epochs=5), seed=0)
    assert _cos(cbow[0], cbow[1]) > _cos(cbow[0], cbow[2])


def test_word2vec_zero_epochs_is_initialisation():
    cfg = Word2VecConfig(dim=8, epochs=0)
    table = word2vec_train([[0, 1, 2]], 3, cfg, seed=5)
    np.testing.assert_array_equal(table, SeededRng(5).uniform((3, 8), -0.5 / 8, 0.5 / 8))


def test_word2vec_deterministic():
    corpus = [[0, 1, 2, 3, 1, 0], [3, 2, 1]]
    cfg = Word2VecConfig(dim=8, epochs=2)
    assert word2vec_train(corpus, 4, cfg, seed=1).tobytes() == word2vec_train(corpus, 4, cfg, seed=1).tobytes()


def test_word2vec_errors():
    with pytest.raises(ValueError):
        word2vec_train([[0, 0]], 1)
    with pytest.raises(ValueError):
        word2vec_train([], 4)


def test_assemble_examples():
    rng = np.random.default_rng(0)
    v = Tensor(rng.normal(size=(2, 5, 4)))
    mask = np.ones((2, 5))
    for mode in ("concat", "sum"):
        assert assemble([v], mask, mode).values is v
    assert assemble([v, Tensor(rng.normal(size=(2, 5, 4)))], mask, "concat").dim == 8
    np.testing.assert_array_equal(assemble([v, -v], mask, "sum").values.data, np.zeros((2, 5, 4)))
    assert assemble([v], mask).mask is mask


def test_assemble_errors():
    with pytest.raises(ShapeError):
        assemble([Tensor(np.ones((2, 5, 4))), Tensor(np.ones((2, 4, 4)))], np.ones((2, 5)))
    with pytest.raises(ShapeError):
        assemble([Tensor(np.ones((2, 5, 4))), Tensor(np.ones((2, 5, 3)))], np.ones((2, 5)), "sum")
