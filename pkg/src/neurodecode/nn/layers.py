"""Layers operating on zero-padded batches of shape (B, T, D).

Every layer caches what it needs during ``forward`` and, in ``backward``,
fills ``self.grads`` (only when trainable) and returns the gradient with
respect to its input. Padding is always on the right, and every recurrent
or convolutional layer is causal, so padded steps never influence valid ones.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..errors import ParameterError, UsageError


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _as_batch(x, ndim):
    """Add a leading batch axis to an unbatched input; returns (array, was_unbatched)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ParameterError(f"expected a {ndim - 1}-d or {ndim}-d input, got shape {x.shape}")
    return x, False


class Layer:
    kind = "layer"
    param_names: tuple = ()

    def __init__(self, trainable=True):
        self.trainable = trainable
        self.params = {}
        self.grads = {}
        self._cache = None

    def config(self) -> dict:
        return {}

    def forward(self, x, lengths=None, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy, need_input_grad=True):
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise UsageError(f"{self.kind}: backward called before forward")
        return self._cache

    def _check_shapes(self, expected: dict):
        for name, shape in expected.items():
            got = self.params[name].shape
            if got != shape:
                raise ParameterError(f"{self.kind}.{name} has shape {got}, expected {shape}")

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


class GruLayer(Layer):
    """Gated recurrent unit, h_t = (1 - z) * h_{t-1} + z * candidate."""

    kind = "gru"
    param_names = ("Wz", "Wr", "Wh", "Uz", "Ur", "Uh", "bz", "br", "bh")

    def __init__(self, input_size, hidden_size, rng=None, trainable=True):
        super().__init__(trainable)
        self.input_size, self.hidden_size = int(input_size), int(hidden_size)
        i, h = self.input_size, self.hidden_size
        for g in "zrh":
            self.params[f"W{g}"] = glorot_uniform(rng, (h, i), i, h) if rng is not None else np.zeros((h, i))
        for g in "zrh":
            self.params[f"U{g}"] = orthogonal(rng, h) if rng is not None else np.zeros((h, h))
        for g in "zrh":
            self.params[f"b{g}"] = np.zeros(h)

    def config(self):
        return {"input_size": self.input_size, "hidden_size": self.hidden_size}

    def _shapes(self):
        i, h = self.input_size, self.hidden_size
        return {**{f"W{g}": (h, i) for g in "zrh"}, **{f"U{g}": (h, h) for g in "zrh"},
                **{f"b{g}": (h,) for g in "zrh"}}

    def forward(self, x, lengths=None, train=False, rng=None, h0=None):
        self._check_shapes(self._shapes())
        p, H = self.params, self.hidden_size
        B, T, D = x.shape
        if D != self.input_size:
            raise ParameterError(f"gru expects {self.input_size} input features, got {D}")
        W = np.concatenate([p["Wz"], p["Wr"], p["Wh"]])
        b = np.concatenate([p["bz"], p["br"], p["bh"]])
        Uzr = np.concatenate([p["Uz"], p["Ur"]])
        xa = x @ W.T + b

        h = np.zeros((B, H)) if h0 is None else np.broadcast_to(np.asarray(h0, dtype=np.float64), (B, H)).copy()
        hs = np.empty((B, T, H))
        hprev = np.empty((B, T, H))
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        cands = np.empty((B, T, H))
        for t in range(T):
            hprev[:, t] = h
            zr = expit(xa[:, t, :2 * H] + h @ Uzr.T)
            z, r = zr[:, :H], zr[:, H:]
            cand = np.tanh(xa[:, t, 2 * H:] + (r * h) @ p["Uh"].T)
            h = (1.0 - z) * h + z * cand
            hs[:, t], zs[:, t], rs[:, t], cands[:, t] = h, z, r, cand
        self._cache = (x, hprev, zs, rs, cands, W, Uzr)
        return hs

    def backward(self, dy, need_input_grad=True):
        x, hprev, zs, rs, cands, W, Uzr = self._require_cache()
        p, H = self.params, self.hidden_size
        B, T, _ = x.shape
        da = np.empty((B, T, 3 * H))
        dUzr = np.zeros((2 * H, H))
        dUh = np.zeros((H, H))
        dh_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            hp, z, r, cand = hprev[:, t], zs[:, t], rs[:, t], cands[:, t]
            dh = dy[:, t] + dh_next
            da_h = dh * z * (1.0 - cand * cand)
            da_z = dh * (cand - hp) * z * (1.0 - z)
            drh = da_h @ p["Uh"]
            da_r = drh * hp * r * (1.0 - r)
            da_zr = np.concatenate([da_z, da_r], axis=1)
            dh_next = dh * (1.0 - z) + drh * r + da_zr @ Uzr
            if self.trainable:
                dUzr += da_zr.T @ hp
                dUh += da_h.T @ (r * hp)
            da[:, t, :2 * H] = da_zr
            da[:, t, 2 * H:] = da_h
        if self.trainable:
            flat = da.reshape(-1, 3 * H)
            dW = flat.T @ x.reshape(-1, self.input_size)
            db = flat.sum(axis=0)
            for k, g in enumerate("zrh"):
                self.grads[f"W{g}"] = dW[k * H:(k + 1) * H]
                self.grads[f"b{g}"] = db[k * H:(k + 1) * H]
            self.grads["Uz"], self.grads["Ur"] = dUzr[:H], dUzr[H:]
            self.grads["Uh"] = dUh
        return da @ W if need_input_grad else None


def gru_forward(layer: GruLayer, x, h0=None) -> np.ndarray:
    """All hidden states h_1..h_T for one T x input_size sequence (or a batch)."""
    xb, single = _as_batch(x, 3)
    out = layer.forward(xb, h0=h0)
    return out[0] if single else out


def _causal_conv(xp, W, b, dilation, T):
    y = np.broadcast_to(b, (xp.shape[0], T, W.shape[0])).copy()
    for k in range(W.shape[2]):
        y += xp[:, k * dilation:k * dilation + T] @ W[:, :, k].T
    return y


def _causal_conv_backward(dy, xp, W, dilation, T, want_params):
    dxp = np.zeros_like(xp)
    dW = np.zeros_like(W) if want_params else None
    flat_dy = dy.reshape(-1, W.shape[0])
    for k in range(W.shape[2]):
        sl = slice(k * dilation, k * dilation + T)
        dxp[:, sl] += dy @ W[:, :, k]
        if want_params:
            dW[:, :, k] = flat_dy.T @ xp[:, sl].reshape(-1, W.shape[1])
    db = flat_dy.sum(axis=0) if want_params else None
    return dxp, dW, db


class TcnLayer(Layer):
    """One residual block: two causal dilated convolutions with ReLU, plus a skip path."""

    kind = "tcn"
    param_names = ("conv1", "b1", "conv2", "b2", "residual_proj")

    def __init__(self, in_channels, filters=32, kernel_size=3, dilation=1, rng=None, trainable=True):
        super().__init__(trainable)
        self.in_channels, self.filters = int(in_channels), int(filters)
        self.kernel_size, self.dilation = int(kernel_size), int(dilation)
        c, f, k = self.in_channels, self.filters, self.kernel_size
        if min(c, f, k, self.dilation) < 1:
            raise ParameterError("tcn sizes must be positive")

        def init(shape, fan_in, fan_out):
            return glorot_uniform(rng, shape, fan_in, fan_out) if rng is not None else np.zeros(shape)

        self.params["conv1"] = init((f, c, k), c * k, f * k)
        self.params["b1"] = np.zeros(f)
        self.params["conv2"] = init((f, f, k), f * k, f * k)
        self.params["b2"] = np.zeros(f)
        if c != f:
            self.params["residual_proj"] = init((f, c), c, f)

    @property
    def padding(self) -> int:
        return (self.kernel_size - 1) * self.dilation

    def config(self):
        return {"in_channels": self.in_channels, "filters": self.filters,
                "kernel_size": self.kernel_size, "dilation": self.dilation}

    def forward(self, x, lengths=None, train=False, rng=None):
        c, f, k = self.in_channels, self.filters, self.kernel_size
        shapes = {"conv1": (f, c, k), "b1": (f,), "conv2": (f, f, k), "b2": (f,)}
        if c != f:
            shapes["residual_proj"] = (f, c)
        self._check_shapes(shapes)
        B, T, D = x.shape
        if D != c:
            raise ParameterError(f"tcn expects {c} input channels, got {D}")
        P, d, p = self.padding, self.dilation, self.params
        xp = np.pad(x, ((0, 0), (P, 0), (0, 0)))
        a1 = _causal_conv(xp, p["conv1"], p["b1"], d, T)
        h1 = np.maximum(a1, 0.0)
        h1p = np.pad(h1, ((0, 0), (P, 0), (0, 0)))
        a2 = _causal_conv(h1p, p["conv2"], p["b2"], d, T)
        h2 = np.maximum(a2, 0.0)
        res = x @ p["residual_proj"].T if c != f else x
        pre = h2 + res
        self._cache = (x, xp, a1, h1p, a2, pre)
        return np.maximum(pre, 0.0)

    def backward(self, dy, need_input_grad=True):
        x, xp, a1, h1p, a2, pre = self._require_cache()
        p, d, P = self.params, self.dilation, self.padding
        T = x.shape[1]
        want = self.trainable
        dpre = dy * (pre > 0)
        da2 = dpre * (a2 > 0)
        dh1p, dW2, db2 = _causal_conv_backward(da2, h1p, p["conv2"], d, T, want)
        da1 = dh1p[:, P:] * (a1 > 0)
        dx = None
        if need_input_grad or want:
            dxp, dW1, db1 = _causal_conv_backward(da1, xp, p["conv1"], d, T, want)
        if want:
            self.grads.update(conv1=dW1, b1=db1, conv2=dW2, b2=db2)
            if "residual_proj" in p:
                self.grads["residual_proj"] = dpre.reshape(-1, self.filters).T @ x.reshape(-1, self.in_channels)
        if need_input_grad:
            dres = dpre @ p["residual_proj"] if "residual_proj" in p else dpre
            dx = dxp[:, P:] + dres
        return dx


def tcn_forward(layer: TcnLayer, x) -> np.ndarray:
    xb, single = _as_batch(x, 3)
    out = layer.forward(xb)
    return out[0] if single else out


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


class DenseLayer(Layer):
    kind = "dense"
    param_names = ("W", "b")

    def __init__(self, in_features, out_features, activation="linear", time_distributed=False,
                 rng=None, trainable=True):
        super().__init__(trainable)
        if activation not in ("linear", "softmax"):
            raise ParameterError(f"unsupported activation {activation!r}")
        self.in_features, self.out_features = int(in_features), int(out_features)
        self.activation, self.time_distributed = activation, bool(time_distributed)
        n_in, n_out = self.in_features, self.out_features
        self.params["W"] = glorot_uniform(rng, (n_out, n_in), n_in, n_out) if rng is not None else np.zeros((n_out, n_in))
        self.params["b"] = np.zeros(n_out)

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features,
                "activation": self.activation, "time_distributed": self.time_distributed}

    def forward(self, x, lengths=None, train=False, rng=None):
        self._check_shapes({"W": (self.out_features, self.in_features), "b": (self.out_features,)})
        want_ndim = 3 if self.time_distributed else 2
        if x.ndim != want_ndim or x.shape[-1] != self.in_features:
            raise ParameterError(
                f"dense expects {want_ndim}-d input with {self.in_features} features, got {x.shape}")
        z = x @ self.params["W"].T + self.params["b"]
        y = softmax(z) if self.activation == "softmax" else z
        self._cache = (x, y)
        return y

    def backward(self, dy, need_input_grad=True):
        x, y = self._require_cache()
        if self.activation == "softmax":
            dz = y * (dy - np.sum(dy * y, axis=-1, keepdims=True))
        else:
            dz = dy
        if self.trainable:
            self.grads["W"] = dz.reshape(-1, self.out_features).T @ x.reshape(-1, self.in_features)
            self.grads["b"] = dz.reshape(-1, self.out_features).sum(axis=0)
        return dz @ self.params["W"] if need_input_grad else None


def dense_forward(layer: DenseLayer, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == (2 if layer.time_distributed else 1)
    out = layer.forward(x[None] if single else x)
    return out[0] if single else out


class DropoutLayer(Layer):
    """Inverted dropout: survivors are scaled by 1 / (1 - rate) in train mode."""

    kind = "dropout"

    def __init__(self, rate=0.1, trainable=True):
        super().__init__(trainable)
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)

    def config(self):
        return {"rate": self.rate}

    def forward(self, x, lengths=None, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._cache = None, x.shape
            return x
        if rng is None:
            raise UsageError("dropout in train mode needs a seeded rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask, x.shape
        return x * mask

    def backward(self, dy, need_input_grad=True):
        mask, _ = self._require_cache()
        return dy if mask is None else dy * mask


def dropout_forward(layer: DropoutLayer, x, mode="eval", rng=None):
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    return layer.forward(np.asarray(x, dtype=np.float64), train=(mode == "train"), rng=rng)


class LastStepLayer(Layer):
    """Select the output at the last valid time step of every sequence."""

    kind = "last_step"

    def forward(self, x, lengths=None, train=False, rng=None):
        B, T, _ = x.shape
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
        idx = lengths - 1
        self._cache = (x.shape, idx)
        return x[np.arange(B), idx]

    def backward(self, dy, need_input_grad=True):
        shape, idx = self._require_cache()
        dx = np.zeros(shape)
        dx[np.arange(shape[0]), idx] = dy
        return dx


LAYER_TYPES = {cls.kind: cls for cls in (GruLayer, TcnLayer, DenseLayer, DropoutLayer, LastStepLayer)}
