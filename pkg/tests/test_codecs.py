import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from rnn_oracle import ORACLES

from trajembed.codecs import (
    CDEEncoder, CNNDecoder, CNNEncoder, EncoderConfig, MultiHeadAttention, NFPostprocessor, ODEEncoder,
    PlanarFlow, RNNDecoder, RNNEncoder, TransformerDecoder, TransformerEncoder, VariationalPostprocessor,
    argmax_feedback, cde_encode, cnn_encode, masked_mean, nf_postprocess, ode_encode, rk4_solve, rnn_decode,
    rnn_encode, transformer_decode, transformer_encode, variational_postprocess,
)
from trajembed.embed import EmbeddingSequence
from trajembed.losses import cross_entropy
from trajembed.numerics import SeededRng, ShapeError, Tensor, grad_check_params, ops
from trajembed.preprocess import spline_from_arrays


def _zero_params(module):
    for p in module.parameters():
        p.assign(np.zeros(p.shape))


# ---------------------------------------------------------------- recurrent

@pytest.mark.parametrize("variant", ["vanilla", "lstm", "gru"])
def test_rnn_matches_scalar_loop_oracle(variant):
    for instance in range(10):
        rng = np.random.default_rng(1000 * instance + len(variant))
        in_dim, hidden, n = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
        enc = RNNEncoder(SeededRng(instance), in_dim, hidden, variant)
        cell = enc.cells[0]
        for p in cell.parameters():
            p.assign(rng.normal(size=p.shape))
        xs = rng.normal(size=(n, in_dim))
        got = rnn_encode(EmbeddingSequence(Tensor(xs), np.ones(n)), enc).data
        want = ORACLES[variant](xs.tolist(), cell.W.data.tolist(), cell.U.data.tolist(), cell.b.data.tolist(), hidden)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


@pytest.mark.parametrize("variant", ["vanilla", "lstm", "gru"])
def test_rnn_padding_returns_last_valid_state(variant):
    rng = np.random.default_rng(4)
    enc = RNNEncoder(SeededRng(2), 3, 4, variant)
    x = rng.normal(size=(2, 5, 3))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=float)
    z = enc(Tensor(x), mask).data
    np.testing.assert_allclose(z[0], enc(Tensor(x[:1, :3])).data[0], atol=1e-15)
    np.testing.assert_allclose(z[1], enc(Tensor(x[1:])).data[0], atol=1e-15)


def test_rnn_zero_weights_give_zero():
    enc = RNNEncoder(SeededRng(0), 3, 5, "vanilla")
    _zero_params(enc)
    z = enc(Tensor(np.random.default_rng(0).normal(size=(2, 7, 3)))).data
    np.testing.assert_array_equal(z, np.zeros((2, 5)))


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.sampled_from(["vanilla", "lstm", "gru"]))
def test_rnn_output_fixed_dim(n, variant):
    enc = RNNEncoder(SeededRng(n), 2, 6, variant, layers=2)
    z = enc(Tensor(np.random.default_rng(n).normal(size=(1, n, 2)))).data
    assert z.shape == (1, 6) and np.all(np.isfinite(z))


def test_rnn_empty_sequence():
    with pytest.raises(ValueError):
        RNNEncoder(SeededRng(0), 2, 3)(Tensor(np.zeros((1, 0, 2))))


def test_rnn_decoder_single_step_definition():
    dec = RNNDecoder(SeededRng(3), 4, 5, 6)
    z = Tensor(np.random.default_rng(0).normal(size=(2, 5)))
    out = dec.teacher_forced(z, Tensor(np.zeros((2, 1, 4)))).data
    start = np.tile(dec.start.data, (2, 1))
    h, _ = dec.cell(Tensor(start), z)
    np.testing.assert_allclose(out[:, 0], dec.head(h).data, atol=1e-15)


def test_rnn_decoder_one_token_vocab_zero_loss():
    dec = RNNDecoder(SeededRng(0), 3, 4, 1)
    logits = dec.teacher_forced(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 5, 3))))
    assert cross_entropy(logits, np.zeros((2, 5), dtype=int)).item() == pytest.approx(0.0, abs=1e-15)


def test_rnn_greedy_decode_deterministic():
    dec = RNNDecoder(SeededRng(0), 3, 4, 7)
    table = Tensor(np.random.default_rng(0).normal(size=(7, 3)))
    z = Tensor(np.random.default_rng(1).normal(size=(2, 4)))
    a = rnn_decode(z, 6, dec, feedback=argmax_feedback(table)).data
    b = rnn_decode(z, 6, dec, feedback=argmax_feedback(table)).data
    assert a.shape == (2, 6, 7)
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------- transformer

def test_attention_single_token_returns_value_projection():
    att = MultiHeadAttention(SeededRng(0), 8, 2)
    x = Tensor(np.random.default_rng(0).normal(size=(3, 1, 8)))
    out = att(x, x).data
    np.testing.assert_array_equal(att.last_weights, np.ones((3, 2, 1, 1)))
    np.testing.assert_allclose(out, att.out(att.v(x)).data, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32))
def test_attention_rows_are_distributions_and_ignore_padding(t, seed):
    rng = np.random.default_rng(seed)
    att = MultiHeadAttention(SeededRng(seed), 8, 4)
    x = Tensor(rng.normal(size=(2, t, 8)) * 3)
    mask = np.ones((2, t))
    mask[1, rng.integers(1, t + 1):] = 0 if t > 1 else 1
    att(x, x, mask)
    w = att.last_weights
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all(w[1][..., mask[1] == 0] == 0.0)


def test_padded_keys_do_not_change_valid_outputs():
    rng = np.random.default_rng(0)
    enc = TransformerEncoder(SeededRng(0), 8, 8, layers=2, heads=4)
    x = rng.normal(size=(1, 6, 8))
    mask = np.array([[1, 1, 1, 1, 0, 0]], dtype=float)
    padded = enc(Tensor(x), mask)[1].data
    x2 = x.copy()
    x2[0, 4:] = 99.0
    again = enc(Tensor(x2), mask)[1].data
    np.testing.assert_allclose(padded, again, atol=1e-12)
    np.testing.assert_allclose(padded, enc(Tensor(x[:, :4]))[1].data, atol=1e-12)


def test_mean_pool_of_identical_rows():
    row = np.arange(4.0)
    np.testing.assert_allclose(masked_mean(Tensor(np.tile(row, (1, 5, 1))), np.ones((1, 5))).data[0], row)


def test_transformer_encode_shapes_and_head_check():
    enc = TransformerEncoder(SeededRng(1), 3, 8, heads=2)
    m, z = transformer_encode(EmbeddingSequence(Tensor(np.ones((5, 3))), np.ones(5)), enc)
    assert m.shape == (5, 8) and z.shape == (8,)
    with pytest.raises(ValueError):
        TransformerEncoder(SeededRng(0), 8, 6, heads=4)


def test_transformer_decoder_zero_head_uniform_and_length():
    dec = TransformerDecoder(SeededRng(0), 8, 5, layers=2, heads=2)
    _zero_params(dec.head)
    rng = np.random.default_rng(0)
    logits = transformer_decode(Tensor(rng.normal(size=(2, 3, 8))), Tensor(rng.normal(size=(2, 7, 8))), dec)
    assert logits.shape == (2, 3, 5)
    probs = ops.softmax(logits).data
    np.testing.assert_allclose(probs, 0.2, atol=1e-15)
    with pytest.raises(ShapeError):
        dec(Tensor(np.ones((1, 3, 8))), Tensor(np.ones((1, 3, 6))))


def test_transformer_decoder_grad_check_two_layers():
    rng = np.random.default_rng(2)
    dec = TransformerDecoder(SeededRng(2), 4, 3, layers=2, heads=2, ff_mult=2)
    mem, src = Tensor(rng.normal(size=(1, 3, 4))), Tensor(rng.normal(size=(1, 4, 4)))
    target = rng.integers(0, 3, size=(1, 3))
    err = grad_check_params(lambda: cross_entropy(dec(mem, src), target), dec.parameters(), max_coords=6)
    assert err <= 1e-3


# ---------------------------------------------------------------- convolutional

def test_cnn_zero_weights_give_fc_bias():
    enc = CNNEncoder(SeededRng(0), 8, 8, 1, 5, filters=(3, 4))
    _zero_params(enc)
    bias = np.arange(5.0)
    enc.fc.bias.assign(bias)
    z = cnn_encode(np.random.default_rng(0).normal(size=(8, 8, 1)), enc).data
    np.testing.assert_array_equal(z, bias)


def test_cnn_shapes_round_trip():
    enc = CNNEncoder(SeededRng(0), 8, 8, 1, 6, filters=(3, 4))
    img = Tensor(np.random.default_rng(0).normal(size=(2, 8, 8, 1)))
    assert enc.features(img).shape == (2, 4, 4, 4)
    dec = CNNDecoder(SeededRng(1), 6, 8, 8, 1, filters=(3, 4))
    assert dec(enc(img)).shape == (2, 8, 8, 1)


def test_cnn_image_too_small():
    enc = CNNEncoder(SeededRng(0), 2, 2, 1, 3, kernel=3)
    with pytest.raises(ShapeError):
        enc(Tensor(np.ones((1, 2, 2, 1))))


# ---------------------------------------------------------------- ODE / CDE

def test_rk4_exponential_decay():
    h = rk4_solve(lambda s: -s, Tensor(np.array([[1.0, -2.0]])), 1.0, 10).data
    np.testing.assert_allclose(h, np.array([[1.0, -2.0]]) * np.exp(-1.0), rtol=0, atol=1e-5)


def test_ode_zero_dynamics_equals_gru():
    rng = np.random.default_rng(0)
    ode = ODEEncoder(SeededRng(0), 3, 4, dynamics=lambda h: h * 0.0)
    gru = RNNEncoder(SeededRng(9), 3, 4, "gru")
    gru.cells[0].load_state_dict(ode.cell.state_dict())
    x = rng.normal(size=(2, 6, 3))
    times = np.cumsum(rng.uniform(5, 30, size=(2, 6)), axis=1)
    mask = np.ones((2, 6))
    mask[0, 4:] = 0
    np.testing.assert_allclose(ode(Tensor(x), times, mask).data, gru(Tensor(x), mask).data, atol=1e-15)


def test_ode_rejects_equal_timestamps():
    ode = ODEEncoder(SeededRng(0), 2, 3)
    with pytest.raises(ValueError):
        ode_encode(EmbeddingSequence(Tensor(np.ones((3, 2))), np.ones(3)), [0.0, 10.0, 10.0], ode)


def test_ode_output_fixed_dim():
    ode = ODEEncoder(SeededRng(0), 2, 5)
    z = ode_encode(EmbeddingSequence(Tensor(np.ones((4, 2))), np.ones(4)), [0.0, 15.0, 30.0, 60.0], ode)
    assert z.shape == (5,) and np.all(np.isfinite(z.data))


def test_cde_constant_spline_gives_initial_transform():
    enc = CDEEncoder(SeededRng(0), 2, 6, steps=8)
    s = spline_from_arrays([0.0, 1.0, 2.0], [[0.3, 0.7]] * 3)
    z = cde_encode(s, enc).data
    np.testing.assert_allclose(z, enc.initial(Tensor(np.array([[0.3, 0.7]]))).data[0], atol=1e-15)
    assert z.shape == (6,)


def test_cde_step_doubling_converges():
    enc = CDEEncoder(SeededRng(0), 2, 8)
    knots = np.linspace(0.0, 1.0, 7)
    s = spline_from_arrays(knots, np.stack([np.sin(2 * knots), np.cos(3 * knots)], axis=1))
    z = {n: cde_encode(s, enc, steps=n).data for n in (256, 512, 1024, 2048)}
    assert np.max(np.abs(z[1024] - z[2048])) < 1e-3
    # forward-Euler control steps converge at first order
    ratio = np.max(np.abs(z[256] - z[512])) / np.max(np.abs(z[512] - z[1024]))
    assert 1.8 < ratio < 2.2


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(kind="lstm", steps=0)
    with pytest.raises(ValueError):
        EncoderConfig(kind="nope")
    with pytest.raises(ValueError):
        CDEEncoder(SeededRng(0), 2, 3, steps=0)


# ---------------------------------------------------------------- postprocessors

def test_variational_zero_nets():
    post = VariationalPostprocessor(SeededRng(0), 4)
    _zero_params(post)
    g, sample = variational_postprocess(Tensor(np.ones((2, 4))), np.zeros((2, 4)), post)
    np.testing.assert_array_equal(g.mu.data, 0.0)
    np.testing.assert_array_equal(g.sigma.data, 1.0)
    np.testing.assert_array_equal(sample.data, 0.0)


def test_variational_reparameterisation_identity():
    post = VariationalPostprocessor(SeededRng(1), 3)
    eps = np.random.default_rng(0).normal(size=(2, 3))
    g, sample = post(Tensor(np.random.default_rng(1).normal(size=(2, 3))), eps)
    np.testing.assert_array_equal(sample.data, (g.mu + g.sigma * eps).data)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.floats(-50, 50))
def test_variational_sigma_positive(seed, scale):
    post = VariationalPostprocessor(SeededRng(seed), 3)
    g, _ = post(Tensor(np.random.default_rng(seed).normal(size=(4, 3)) * scale))
    assert np.all(g.sigma.data > 0)


def test_variational_gradient_through_encoder():
    enc = RNNEncoder(SeededRng(0), 2, 3, "gru")
    post = VariationalPostprocessor(SeededRng(1), 3)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 4, 2)))
    eps = np.random.default_rng(1).normal(size=(2, 3))

    def loss():
        return ops.sum(post(enc(x), eps)[1] ** 2)

    assert grad_check_params(loss, enc.parameters() + post.parameters()) <= 1e-3


def test_flows_start_as_identity():
    z = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    out, logdet = nf_postprocess(z, NFPostprocessor(SeededRng(0), 4, flows=4))
    np.testing.assert_array_equal(out.data, z.data)
    np.testing.assert_array_equal(logdet.data, 0.0)
    out0, ld0 = NFPostprocessor(SeededRng(0), 4, flows=0)(z)
    np.testing.assert_array_equal(out0.data, z.data)
    np.testing.assert_array_equal(ld0.data, 0.0)


def _newton_invert(flow, y, iters=100):
    """Recover z from y = z + u tanh(w.z + b) by solving the scalar equation for a = w.z.

    The scalar map a + (w.u) tanh(a + b) is monotone, so Newton steps are kept
    inside a shrinking bracket.
    """
    u, w, b = flow.u_hat().data, flow.w.data, float(flow.b.data[0])
    wy, wu = float(w @ y), float(w @ u)
    lo, hi = wy - abs(wu) - 1.0, wy + abs(wu) + 1.0
    a = wy
    for _ in range(iters):
        t = np.tanh(a + b)
        g = a + wu * t - wy
        if g > 0:
            hi = a
        else:
            lo = a
        step = a - g / (1.0 + wu * (1 - t * t))
        a = step if lo < step < hi else 0.5 * (lo + hi)
    return y - u * np.tanh(a + b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_planar_flow_invertible(seed):
    rng = np.random.default_rng(seed)
    flow = PlanarFlow(SeededRng(seed), 4)
    flow.u.assign(rng.normal(size=4) * 2)
    flow.w.assign(rng.normal(size=4))
    flow.b.assign(rng.normal(size=1))
    z = rng.normal(size=4)
    y, logdet = flow(Tensor(z[None]))
    assert np.isfinite(logdet.data).all()
    np.testing.assert_allclose(_newton_invert(flow, y.data[0]), z, rtol=0, atol=1e-8)


def test_planar_flow_log_det_matches_jacobian():
    rng = np.random.default_rng(3)
    flow = PlanarFlow(SeededRng(0), 3)
    flow.u.assign(rng.normal(size=3))
    flow.b.assign(np.array([0.2]))
    z = rng.normal(size=3)
    jac = np.zeros((3, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        jac[:, i] = (flow(Tensor((z + e)[None]))[0].data[0] - flow(Tensor((z - e)[None]))[0].data[0]) / 2e-6
    assert flow(Tensor(z[None]))[1].data[0] == pytest.approx(np.log(abs(np.linalg.det(jac))), abs=1e-7)
