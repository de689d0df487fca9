import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import check_layer, check_model, numeric_grad, rel_error
from neurodecode.errors import ParameterError, UsageError
from neurodecode.nn import (AdamState, DenseLayer, DropoutLayer, GruLayer, LastStepLayer, SequenceModel,
                            TcnLayer, adam_step, categorical_cross_entropy, cross_entropy_grad,
                            dense_forward, dropout_forward, gru_forward, load_checkpoint, mse_grad,
                            mse_loss, save_checkpoint, softmax, tcn_forward)
from neurodecode.nn.model import checkpoint_bytes, checkpoint_from_bytes


def jitter(layer, rng, scale=0.3):
    for k in layer.params:
        layer.params[k] = layer.params[k] + scale * rng.standard_normal(layer.params[k].shape)
    return layer


class TestGru:
    def test_zero_weights_give_zero_output(self, rng):
        layer = GruLayer(4, 3)
        assert np.array_equal(gru_forward(layer, rng.standard_normal((6, 4))), np.zeros((6, 3)))

    def test_scalar_oracle(self):
        layer = GruLayer(1, 1)
        vals = dict(Wz=0.5, Wr=-0.3, Wh=0.8, Uz=0.2, Ur=0.7, Uh=-0.6, bz=0.1, br=-0.2, bh=0.05)
        for k, v in vals.items():
            layer.params[k] = np.full(layer.params[k].shape, v)
        xs, h = [0.3, -1.2, 2.0], 0.4
        expected = []
        for x in xs:
            z = 1 / (1 + np.exp(-(vals["Wz"] * x + vals["Uz"] * h + vals["bz"])))
            r = 1 / (1 + np.exp(-(vals["Wr"] * x + vals["Ur"] * h + vals["br"])))
            cand = np.tanh(vals["Wh"] * x + vals["Uh"] * (r * h) + vals["bh"])
            h = (1 - z) * h + z * cand
            expected.append(h)
        out = gru_forward(layer, np.array(xs)[:, None], h0=np.array([0.4]))
        np.testing.assert_allclose(out[:, 0], expected, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 20))
    def test_state_bounded(self, seed, scale):
        rng = np.random.default_rng(seed)
        layer = jitter(GruLayer(3, 5, rng), rng, scale)
        h0 = rng.uniform(-1, 1, 5)
        out = gru_forward(layer, scale * rng.standard_normal((12, 3)), h0=h0)
        assert np.all(np.abs(out) <= 1.0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ParameterError):
            gru_forward(GruLayer(4, 3, rng), rng.standard_normal((5, 2)))
        layer = GruLayer(4, 3, rng)
        layer.params["Uz"] = np.zeros((2, 2))
        with pytest.raises(ParameterError):
            gru_forward(layer, rng.standard_normal((5, 4)))

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        layer = jitter(GruLayer(3, 4, rng), rng)
        assert check_layer(layer, rng.standard_normal((2, 5, 3)), seed=seed) < 1e-4


def naive_tcn(layer, x):
    """Direct O(T k) convolution oracle."""
    p, d, k = layer.params, layer.dilation, layer.kernel_size
    T = x.shape[0]

    def conv(inp, w, b):
        out = np.zeros((T, w.shape[0]))
        for t in range(T):
            acc = b.copy()
            for j in range(k):
                src = t - (k - 1 - j) * d
                if src >= 0:
                    acc = acc + w[:, :, j] @ inp[src]
            out[t] = acc
        return out

    h1 = np.maximum(conv(x, p["conv1"], p["b1"]), 0)
    h2 = np.maximum(conv(h1, p["conv2"], p["b2"]), 0)
    res = x @ p["residual_proj"].T if "residual_proj" in p else x
    return np.maximum(h2 + res, 0)


class TestTcn:
    def test_identity_kernel_doubles_nonnegative_input(self, rng):
        layer = TcnLayer(4, 4, kernel_size=1)
        layer.params["conv1"] = np.eye(4)[:, :, None]
        layer.params["conv2"] = np.eye(4)[:, :, None]
        x = rng.uniform(0, 3, (7, 4))
        np.testing.assert_allclose(tcn_forward(layer, x), 2 * x, atol=0)

    @pytest.mark.parametrize("cfg", [(3, 5, 3, 1), (4, 4, 2, 2), (2, 3, 3, 3), (5, 2, 1, 1)])
    def test_matches_naive_convolution(self, rng, cfg):
        c, f, k, d = cfg
        layer = TcnLayer(c, f, k, d, rng)
        x = rng.standard_normal((11, c))
        np.testing.assert_allclose(tcn_forward(layer, x), naive_tcn(layer, x), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 3), st.integers(0, 9))
    def test_causality(self, seed, k, d, t):
        rng = np.random.default_rng(seed)
        layer = jitter(TcnLayer(3, 4, k, d, rng), rng)
        x = rng.standard_normal((10, 3))
        y = x.copy()
        y[t] += rng.standard_normal(3)
        a, b = tcn_forward(layer, x), tcn_forward(layer, y)
        assert np.array_equal(a[:t], b[:t])

    def test_padding_length(self):
        assert TcnLayer(2, 3, kernel_size=3, dilation=4).padding == 8

    def test_residual_projection_presence(self):
        assert "residual_proj" in TcnLayer(5, 3).params
        assert "residual_proj" not in TcnLayer(3, 3).params

    def test_shape_mismatch(self, rng):
        with pytest.raises(ParameterError):
            tcn_forward(TcnLayer(3, 4, rng=rng), rng.standard_normal((5, 2)))

    @pytest.mark.parametrize("seed", range(3))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        layer = jitter(TcnLayer(3, 4, 2, 2, rng), rng, 0.2)
        assert check_layer(layer, rng.standard_normal((2, 6, 3)), seed=seed) < 1e-4


class TestDenseAndSoftmax:
    def test_softmax_of_zero_is_uniform(self):
        layer = DenseLayer(3, 5, "softmax")
        np.testing.assert_allclose(dense_forward(layer, np.ones(3)), np.full(5, 0.2), atol=0)

    def test_linear_identity(self, rng):
        layer = DenseLayer(4, 4, time_distributed=True)
        layer.params["W"] = np.eye(4)
        x = rng.standard_normal((6, 4))
        assert np.array_equal(dense_forward(layer, x), x)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 10), st.floats(1e-3, 1e4))
    def test_softmax_normalized(self, seed, k, mag):
        z = np.random.default_rng(seed).uniform(-mag, mag, (3, k))
        p = softmax(z)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_positive_and_matches_high_precision(self, rng):
        import mpmath
        z = rng.uniform(-30, 30, 6)
        p = softmax(z)
        ez = [mpmath.e ** mpmath.mpf(float(v)) for v in z]
        s = sum(ez)
        np.testing.assert_allclose(p, [float(e / s) for e in ez], rtol=1e-12)
        assert np.all(p > 0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ParameterError):
            dense_forward(DenseLayer(3, 2), rng.standard_normal(4))
        with pytest.raises(ParameterError):
            DenseLayer(3, 2).forward(rng.standard_normal((2, 5, 3)))

    @pytest.mark.parametrize("activation,td", [("linear", True), ("softmax", False), ("linear", False)])
    def test_gradients(self, activation, td):
        rng = np.random.default_rng(7)
        layer = DenseLayer(4, 3, activation, td, rng)
        x = rng.standard_normal((2, 5, 4) if td else (3, 4))
        assert check_layer(layer, x) < 1e-4


class TestDropout:
    def test_eval_is_identity(self, rng):
        x = rng.standard_normal((4, 5))
        assert dropout_forward(DropoutLayer(0.5), x, "eval") is not None
        assert np.array_equal(dropout_forward(DropoutLayer(0.5), x, "eval"), x)

    def test_rate_zero(self, rng):
        x = rng.standard_normal((4, 5))
        assert np.array_equal(dropout_forward(DropoutLayer(0.0), x, "train", rng), x)

    def test_statistics(self):
        rng = np.random.default_rng(3)
        x = np.full((400, 500), 2.0)
        y = dropout_forward(DropoutLayer(0.1), x, "train", rng)
        assert np.mean(y == 0) == pytest.approx(0.1, abs=0.01)
        assert np.mean(y) == pytest.approx(2.0, rel=0.02)
        assert set(np.unique(y)) <= {0.0, 2.0 / 0.9}

    def test_mask_reused_in_backward(self, rng):
        layer = DropoutLayer(0.3)
        y = layer.forward(np.ones((5, 6)), train=True, rng=rng)
        assert np.array_equal(layer.backward(np.ones((5, 6))), y)

    def test_invalid_rate(self):
        with pytest.raises(ParameterError):
            DropoutLayer(1.0)


class TestLosses:
    def test_cross_entropy(self, rng):
        assert categorical_cross_entropy([0, 1, 0], [0, 1, 0]) == pytest.approx(0.0, abs=1e-9)
        assert categorical_cross_entropy([0.5, 0.5], [1, 0]) == pytest.approx(np.log(2), abs=1e-12)
        pred = softmax(rng.standard_normal((6, 4)))
        target = np.eye(4)[rng.integers(0, 4, 6)]
        oracle = sum(-np.log(pred[i, np.argmax(target[i])]) for i in range(6)) / 6
        assert categorical_cross_entropy(pred, target) == pytest.approx(oracle, abs=1e-12)
        with pytest.raises(ParameterError):
            categorical_cross_entropy([0.5, 0.5], [1, 0, 0])

    def test_mse(self, rng):
        a = rng.standard_normal((5, 3))
        assert mse_loss(a, a) == 0.0
        assert mse_loss(a + 2, a) == pytest.approx(4.0, abs=1e-12)
        b = rng.standard_normal((5, 3))
        assert mse_loss(a, b) == pytest.approx(sum((x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / 15, abs=1e-12)
        with pytest.raises(ParameterError):
            mse_loss(a, b[:4])

    def test_masked_mse_ignores_padding(self, rng):
        pred, target = rng.standard_normal((2, 2, 4, 3))
        lengths = np.array([4, 2])
        changed = pred.copy()
        changed[1, 2:] += 100
        assert mse_loss(pred, target, lengths) == mse_loss(changed, target, lengths)
        direct = np.concatenate([(pred[0] - target[0]).ravel(), (pred[1, :2] - target[1, :2]).ravel()])
        assert mse_loss(pred, target, lengths) == pytest.approx(np.mean(direct ** 2), abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_loss_gradients(self, seed):
        rng = np.random.default_rng(seed)
        pred = softmax(rng.standard_normal((3, 4)))
        target = np.eye(4)[rng.integers(0, 4, 3)]
        fd = numeric_grad(lambda: np.mean(-np.sum(target * np.log(pred), axis=1)), pred)
        assert np.max(rel_error(fd, cross_entropy_grad(pred, target))) < 1e-4
        p, t = rng.standard_normal((2, 2, 5, 3))
        lengths = np.array([5, 3])
        fd = numeric_grad(lambda: mse_loss(p, t, lengths), p)
        assert np.max(rel_error(fd, mse_grad(p, t, lengths))) < 1e-4


def small_stack(rng):
    layers = [GruLayer(3, 4, rng), DropoutLayer(0.2), GruLayer(4, 2, rng), TcnLayer(2, 3, 2, 1, rng),
              LastStepLayer(), DenseLayer(3, 2, "softmax", rng=rng)]
    for layer in layers:
        jitter(layer, rng, 0.2)
    return SequenceModel(layers)


class TestBackward:
    def test_full_stack_gradients(self):
        rng = np.random.default_rng(11)
        model = small_stack(rng)
        x = rng.standard_normal((3, 6, 3))
        lengths = np.array([6, 4, 5])
        y = np.eye(2)[[0, 1, 1]]
        assert check_model(model, x, lengths, categorical_cross_entropy, cross_entropy_grad, y) < 1e-4

    def test_backward_before_forward(self, rng):
        with pytest.raises(UsageError):
            small_stack(rng).backward(np.zeros((1, 2)))
        with pytest.raises(UsageError):
            GruLayer(2, 2, rng).backward(np.zeros((1, 3, 2)))

    def test_unused_parameter_has_zero_gradient(self, rng):
        model = SequenceModel([DenseLayer(3, 4, rng=rng), DenseLayer(4, 2, rng=rng)])
        model.layers[1].params["W"][1] = 0.0
        out = model.forward(rng.standard_normal((5, 3)))
        grad = np.zeros_like(out)
        grad[:, 0] = 1.0
        g = model.backward(grad)
        assert np.all(g["1.W"][1] == 0) and g["1.b"][1] == 0

    def test_loss_scale_is_linear(self, rng):
        model = small_stack(rng)
        x = rng.standard_normal((2, 5, 3))
        out = model.forward(x)
        d = rng.standard_normal(out.shape)
        g1 = {k: v.copy() for k, v in model.backward(d).items()}
        g2 = model.backward(2 * d)
        for k in g1:
            np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-12, atol=1e-15)

    def test_frozen_layers_get_no_gradients(self, rng):
        model = small_stack(rng)
        model.layers[0].trainable = False
        model.layers[2].trainable = False
        out = model.forward(rng.standard_normal((2, 5, 3)))
        grads = model.backward(np.ones_like(out))
        assert not any(k.startswith(("0.", "2.")) for k in grads)
        assert set(grads) == set(model.parameters())


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        adam_step(state, p, {"w": np.zeros(2)})
        assert np.array_equal(p["w"], [1.0, -2.0]) and state.t == 1

    def test_first_step_is_signed_lr(self, rng):
        g = rng.standard_normal(20)
        p = {"w": np.zeros(20)}
        state = AdamState()
        adam_step(state, p, {"w": g})
        bound = np.abs(state.lr * state.eps / (np.abs(g) + state.eps)) + 1e-18
        assert np.all(np.abs(p["w"] + state.lr * np.sign(g)) <= bound)

    def test_quadratic_trajectory(self):
        # f(w) = 0.5 * 3 * (w - 2)^2, hand-stepped scalar oracle
        w, m, v = 5.0, 0.0, 0.0
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        expected = []
        for t in range(1, 6):
            g = 3 * (w - 2)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w = w - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
            expected.append(w)
        p = {"w": np.array(5.0)}
        state = AdamState(lr=lr)
        got = []
        for _ in range(5):
            adam_step(state, p, {"w": 3 * (p["w"] - 2)})
            got.append(float(p["w"]))
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ParameterError):
            adam_step(AdamState(), {"w": np.zeros(3)}, {"w": np.zeros(2)})
        with pytest.raises(ParameterError):
            adam_step(AdamState(), {"w": np.zeros(3)}, {"v": np.zeros(3)})

    def test_frozen_parameters_untouched(self, rng):
        model = small_stack(rng)
        model.layers[0].trainable = False
        before = model.layers[0].params["Wz"].copy()
        state = AdamState(lr=0.1)
        for _ in range(5):
            out = model.forward(rng.standard_normal((2, 4, 3)), train=True, rng=rng)
            model.backward(np.ones_like(out))
            adam_step(state, model.parameters(), model.gradients())
        assert model.layers[0].params["Wz"].tobytes() == before.tobytes()
        assert not any(k.startswith("0.") for k in state.m)


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(5)
        model = small_stack(rng)
        x = rng.standard_normal((3, 7, 3))
        out = model.forward(x, np.array([7, 5, 2]), train=True, rng=np.random.default_rng(1))
        g = model.backward(np.ones_like(out))
        return out.tobytes(), b"".join(v.tobytes() for v in g.values())
    assert run() == run()


def test_checkpoint_round_trip(tmp_path, rng):
    model = small_stack(rng)
    model.layers[2].trainable = False
    model.meta = {"model": "test", "seed": 3}
    model.extras["input_mean"] = rng.standard_normal(3)
    save_checkpoint(model, tmp_path / "m.bin")
    loaded = load_checkpoint(tmp_path / "m.bin")
    assert [l.trainable for l in loaded.layers] == [l.trainable for l in model.layers]
    assert loaded.meta == model.meta
    for a, b in zip(model.layers, loaded.layers):
        assert a.kind == b.kind and a.config() == b.config()
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()
    assert loaded.extras["input_mean"].tobytes() == model.extras["input_mean"].tobytes()
    assert (tmp_path / "m.bin").read_bytes() == checkpoint_bytes(loaded)


def test_checkpoint_rejects_truncation(tmp_path, rng):
    raw = checkpoint_bytes(small_stack(rng))
    with pytest.raises(ParameterError):
        checkpoint_from_bytes(raw[:-8])
    with pytest.raises(ParameterError):
        checkpoint_from_bytes(raw + b"\0" * 8)
