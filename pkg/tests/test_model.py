import math

import numpy as np
import pytest

from myoshift.errors import ContractError, InvalidArgumentError, InvalidInputError, ShapeError
from myoshift.model import (
    AdaptParams,
    LstmLayerParams,
    RnnLayerParams,
    adapt_forward,
    backward_batch,
    classifier_logits,
    classify_forward,
    draw_masks,
    forward,
    init_model,
    lstm_cell_step,
    predict,
    rnn_cell_step,
    softmax,
)


def zero_lstm(h, n_in):
    z = lambda *s: np.zeros(s)
    return LstmLayerParams(z(h, h + n_in), z(h, h + n_in), z(h, h + n_in), z(h, h + n_in), z(h), z(h), z(h), z(h))


# --- init -------------------------------------------------------------------------


def test_init_shapes_and_identity_adaptation():
    m = init_model(10, 16, 5, 2, seed=0, head_units=12)
    assert m.adapt.M.shape == (10, 10)
    np.testing.assert_array_equal(m.adapt.M, np.eye(10))
    assert not m.adapt.b.any()
    assert init_model(128, 4, 3, 1, seed=0, head_units=4).adapt.M.shape == (128, 128)
    names = list(m.named_params())
    assert names[:2] == ["adapt.M", "adapt.b"]
    assert m.layers[0].W_f.shape == (16, 16 + 10)
    assert m.layers[1].W_o.shape == (16, 32)
    assert m.head.W_fc.shape == (12, 16) and m.head.W_out.shape == (5, 12)


def test_init_deterministic():
    a, b = init_model(4, 8, 3, seed=3), init_model(4, 8, 3, seed=3)
    for (na, pa), (nb, pb) in zip(a.named_params().items(), b.named_params().items()):
        assert na == nb
        np.testing.assert_array_equal(pa, pb)


@pytest.mark.parametrize("kw", [dict(f=0, h=4, G=2), dict(f=2, h=0, G=2), dict(f=2, h=4, G=0), dict(f=2, h=4, G=2, num_layers=0)])
def test_init_rejects_bad_dims(kw):
    with pytest.raises(InvalidArgumentError):
        init_model(**kw)


def test_default_head_is_512_units():
    m = init_model(4, 8, 3, 2, seed=0)
    assert m.head.W_fc.shape == (512, 8)
    assert m.dropout_p == 0.5


# --- adaptation layer ---------------------------------------------------------------


def test_adapt_forward_examples(rng):
    x = rng.normal(size=(6, 2))
    np.testing.assert_array_equal(adapt_forward(AdaptParams(np.eye(2), np.zeros(2)), x), x)
    np.testing.assert_array_equal(adapt_forward(AdaptParams(2 * np.eye(2), np.zeros(2)), np.array([[1.0, -1.0]])), [[2.0, -2.0]])
    b0 = np.array([0.3, -0.7])
    np.testing.assert_array_equal(adapt_forward(AdaptParams(np.zeros((2, 2)), b0), x), np.tile(b0, (6, 1)))
    with pytest.raises(ShapeError):
        adapt_forward(AdaptParams(np.eye(3), np.zeros(3)), x)


# --- LSTM cell ------------------------------------------------------------------------


def test_lstm_all_zero_parameters():
    p = zero_lstm(3, 2)
    h, c, gates = lstm_cell_step(p, np.array([5.0, -2.0]), np.zeros(3), np.zeros(3), return_gates=True)
    assert not h.any() and not c.any()
    for g in ("f", "i", "o"):
        np.testing.assert_array_equal(gates[g], 0.5)
    assert not gates["C"].any()


def test_lstm_saturated_candidate_matches_scalar_oracle():
    # oracle evaluated with scalar math, independent of the vectorised cell
    sig0 = 1.0 / (1.0 + math.exp(-0.0))
    c_expected = sig0 * 0.0 + sig0 * math.tanh(100.0)
    h_expected = sig0 * math.tanh(c_expected)
    assert h_expected == pytest.approx(0.2311, abs=1e-4)
    p = zero_lstm(4, 3)
    p.b_C[:] = 100.0
    h, c = lstm_cell_step(p, np.ones(3), np.zeros(4), np.zeros(4))
    np.testing.assert_allclose(c, c_expected, rtol=1e-14)
    np.testing.assert_allclose(h, h_expected, rtol=1e-14)


def test_lstm_matches_scalar_loop_oracle(rng):
    h_dim, n_in = 3, 2
    p = LstmLayerParams(*(rng.normal(size=(h_dim, h_dim + n_in)) for _ in range(4)), *(rng.normal(size=h_dim) for _ in range(4)))
    x, hp, cp = rng.normal(size=n_in), rng.normal(size=h_dim), rng.normal(size=h_dim)
    z = list(hp) + list(x)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    dot = lambda W, b, r: sum(W[r, k] * z[k] for k in range(len(z))) + b[r]
    for r in range(h_dim):
        f = sig(dot(p.W_f, p.b_f, r))
        i = sig(dot(p.W_i, p.b_i, r))
        ct = math.tanh(dot(p.W_C, p.b_C, r))
        o = sig(dot(p.W_o, p.b_o, r))
        c_r = f * cp[r] + i * ct
        h_r = o * math.tanh(c_r)
        h, c = lstm_cell_step(p, x, hp, cp)
        assert c[r] == pytest.approx(c_r, rel=1e-12)
        assert h[r] == pytest.approx(h_r, rel=1e-12)


def test_lstm_gates_strictly_inside_unit_interval(rng):
    m = init_model(4, 6, 3, 1, seed=1)
    x = rng.normal(scale=5.0, size=4)
    _, _, gates = lstm_cell_step(m.layers[0], x, np.zeros(6), np.zeros(6), return_gates=True)
    for g in ("f", "i", "o"):
        assert np.all((gates[g] > 0) & (gates[g] < 1))


def test_lstm_shape_errors():
    with pytest.raises(ShapeError):
        lstm_cell_step(zero_lstm(3, 2), np.zeros(4), np.zeros(3), np.zeros(3))


# --- vanilla RNN cell -------------------------------------------------------------------


def rnn(h, n_in, rng=None, **kw):
    mk = (lambda *s: rng.normal(size=s)) if rng is not None else (lambda *s: np.zeros(s))
    return RnnLayerParams(mk(h, n_in), mk(h, h), mk(h), mk(h, h), mk(h), **kw)


def test_rnn_zero_and_independence(rng):
    h, _ = rnn_cell_step(rnn(3, 2), rng.normal(size=2), rng.normal(size=3))
    assert not h.any()
    p = rnn(3, 2, rng)
    p.u_h[:] = 0.0
    x = rng.normal(size=2)
    np.testing.assert_array_equal(rnn_cell_step(p, x, np.zeros(3))[0], rnn_cell_step(p, x, rng.normal(size=3))[0])


def test_rnn_identity_output(rng):
    p = RnnLayerParams(rng.normal(size=(3, 2)), rng.normal(size=(3, 3)), rng.normal(size=3), np.eye(3), np.zeros(3),
                       sigma_h="identity", sigma_y="identity")
    h, y = rnn_cell_step(p, rng.normal(size=2), rng.normal(size=3))
    np.testing.assert_array_equal(h, y)


# --- full forward -------------------------------------------------------------------


def test_eval_mode_is_deterministic(small_model, rng):
    seq = rng.normal(size=(7, 4))
    _, p1, c1 = classify_forward(small_model, seq)
    _, p2, _ = classify_forward(small_model, seq)
    np.testing.assert_array_equal(p1, p2)
    assert c1 is None
    assert p1.sum() == pytest.approx(1.0)


def test_empty_sequence_rejected(small_model):
    with pytest.raises(InvalidInputError):
        classify_forward(small_model, np.zeros((0, 4)))


def test_width_mismatch_rejected(small_model):
    with pytest.raises(ShapeError):
        forward(small_model, np.zeros((2, 5, 3)))


def test_batched_forward_matches_single_sequences(small_model, rng):
    X = rng.normal(size=(5, 6, 4))
    batch = forward(small_model, X)[0]
    for k in range(5):
        np.testing.assert_allclose(classify_forward(small_model, X[k])[0], batch[k], rtol=1e-12, atol=1e-14)


def test_forward_matches_cell_step_unroll(small_model, rng):
    x = rng.normal(size=(6, 4))
    inp = adapt_forward(small_model.adapt, x)
    for layer in small_model.layers:
        h, c = np.zeros(layer.hidden), np.zeros(layer.hidden)
        outs = []
        for t in range(len(inp)):
            h, c = lstm_cell_step(layer, inp[t], h, c)
            outs.append(h)
        inp = np.array(outs)
    head = small_model.head
    logits = head.W_out @ (head.W_fc @ inp[-1] + head.b_fc) + head.b_out
    np.testing.assert_allclose(classify_forward(small_model, x)[0], logits, rtol=1e-12, atol=1e-14)


def test_identity_adaptation_equals_bare_classifier(small_model, rng):
    X = rng.normal(size=(50, 5, 4))
    np.testing.assert_allclose(forward(small_model, X)[0], classifier_logits(small_model, X), rtol=0, atol=1e-12)


def test_dropout_rate_monte_carlo():
    m = init_model(4, 100, 3, 1, seed=0, head_units=100)
    rng = np.random.default_rng(99)
    layer_masks, head_mask = draw_masks(m, 100, 1, rng)  # 10,000 draws each
    for mask in (layer_masks[0], head_mask):
        assert mask.size == 10_000
        assert 0.48 <= np.mean(mask == 0) <= 0.52
        assert set(np.unique(mask)) <= {0.0, 2.0}


def test_train_mode_needs_randomness(small_model):
    with pytest.raises(InvalidArgumentError):
        forward(small_model, np.zeros((1, 3, 4)), mode="train")


def test_stale_cache_rejected(small_model, rng):
    X = rng.normal(size=(2, 3, 4))
    _, cache = forward(small_model, X, mode="train", rng=rng)
    small_model.version += 1
    with pytest.raises(ContractError):
        backward_batch(small_model, cache, [0, 1])
    with pytest.raises(ContractError):
        backward_batch(small_model.copy(), cache, [0, 1])


def test_predict_returns_labels(small_model, rng):
    labels = predict(small_model, rng.normal(size=(9, 4, 4)), batch_size=4)
    assert labels.shape == (9,) and labels.min() >= 0 and labels.max() < 3


def test_rnn_model_forward(rng):
    m = init_model(4, 6, 3, 2, seed=0, head_units=5, cell="rnn")
    assert m.cell == "rnn"
    assert forward(m, rng.normal(size=(2, 4, 4)))[0].shape == (2, 3)


# --- softmax -----------------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros(3)), [1 / 3] * 3)
    out = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(out)) and out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0)
    with pytest.raises(InvalidInputError):
        softmax(np.array([np.nan, 1.0]))


def test_softmax_sums_to_one(rng):
    p = softmax(rng.normal(scale=30, size=(20, 7)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-12)
    assert np.all(p >= 0)
