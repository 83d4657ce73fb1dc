"""Layers with hand-written reverse-mode gradients.

Every layer works on batched float64 arrays: sequences are ``(batch, length,
channels)`` and vectors ``(batch, features)``.  ``forward`` caches what
``backward`` needs; ``backward`` takes the loss gradient w.r.t. the output,
fills ``self.grads`` and returns the gradient w.r.t. the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from rulforge.errors import InvalidShape, ShapeMismatch

ACTIVATIONS = ("relu", "linear", "softmax")


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def same_padding(length: int, size: int, stride: int) -> tuple[int, int, int]:
    """TensorFlow "same" padding: ``(out_len, pad_left, pad_right)``; the extra pad goes right."""
    out = -(-length // stride)
    total = max((out - 1) * stride + size - length, 0)
    return out, total // 2, total - total // 2


def _sigmoid(z):
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "linear":
        return z
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _activation_grad(dy, z, y, activation):
    if activation == "relu":
        return dy * (z > 0)
    if activation == "linear":
        return dy
    # softmax: J^T dy = y * (dy - <dy, y>)
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


class Layer:
    kind = "layer"
    trainable = True

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def config(self) -> dict:
        return {}

    def spec(self) -> dict:
        return {"type": self.kind, **self.config()}

    def build(self, input_shape: tuple, rng) -> tuple:
        """Allocate parameters for ``input_shape`` (no batch axis); return the output shape."""
        return self.output_shape(input_shape)

    def output_shape(self, input_shape: tuple) -> tuple:
        return input_shape

    def forward(self, x, train: bool = False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


class Conv1D(Layer):
    """1-D cross-correlation over the length axis followed by an activation."""

    kind = "Conv1D"

    def __init__(self, filters: int, kernel_size: int, stride: int = 1, padding: str = "same",
                 activation: str = "relu"):
        super().__init__()
        if filters < 1 or kernel_size < 1 or stride < 1:
            raise InvalidShape("Conv1D needs positive filters, kernel_size and stride")
        if padding not in ("same", "valid"):
            raise ValueError("padding must be 'same' or 'valid'")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.filters, self.kernel_size, self.stride = filters, kernel_size, stride
        self.padding, self.activation = padding, activation

    def config(self):
        return {"filters": self.filters, "kernel_size": self.kernel_size, "stride": self.stride,
                "padding": self.padding, "activation": self.activation}

    def _geometry(self, length):
        if self.padding == "same":
            return same_padding(length, self.kernel_size, self.stride)
        if length < self.kernel_size:
            raise ShapeMismatch(f"kernel {self.kernel_size} longer than input {length}")
        return (length - self.kernel_size) // self.stride + 1, 0, 0

    def output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeMismatch(f"Conv1D expects (length, channels), got {input_shape}")
        return (self._geometry(input_shape[0])[0], self.filters)

    def build(self, input_shape, rng):
        out = self.output_shape(input_shape)
        c_in = input_shape[1]
        k = self.kernel_size
        self.params = {
            "W": glorot_uniform(rng, (k, c_in, self.filters), k * c_in, k * self.filters),
            "b": np.zeros(self.filters),
        }
        return out

    def forward(self, x, train=False, rng=None):
        W = self.params["W"]
        if x.ndim != 3 or x.shape[2] != W.shape[1]:
            raise ShapeMismatch(f"Conv1D expects (B, L, {W.shape[1]}), got {x.shape}")
        B, L, C = x.shape
        out, left, right = self._geometry(L)
        xp = np.pad(x, ((0, 0), (left, right), (0, 0))) if left or right else x
        k, s = self.kernel_size, self.stride
        span = s * (out - 1) + 1
        cols = np.stack([xp[:, j:j + span:s, :] for j in range(k)], axis=2)  # (B, out, k, C)
        flat = cols.reshape(B * out, k * C)
        z = (flat @ W.reshape(k * C, self.filters)).reshape(B, out, self.filters) + self.params["b"]
        y = _activate(z, self.activation)
        self._cache = (flat, z, y, xp.shape, left, L, out)
        return y

    def backward(self, dy):
        flat, z, y, xp_shape, left, L, out = self._cache
        W = self.params["W"]
        k, C, F = W.shape
        B = dy.shape[0]
        dz = _activation_grad(dy, z, y, self.activation).reshape(B * out, F)
        self.grads = {"W": (flat.T @ dz).reshape(W.shape), "b": dz.sum(axis=0)}
        dcols = (dz @ W.reshape(k * C, F).T).reshape(B, out, k, C)
        dxp = np.zeros(xp_shape)
        s = self.stride
        span = s * (out - 1) + 1
        for j in range(k):
            dxp[:, j:j + span:s, :] += dcols[:, :, j, :]
        return dxp[:, left:left + L, :]


class MaxPool1D(Layer):
    """Max over length windows; "same" padding treats missing positions as absent."""

    kind = "MaxPool1D"
    trainable = False

    def __init__(self, pool_size: int = 2, stride: int | None = None, padding: str = "same"):
        super().__init__()
        stride = pool_size if stride is None else stride
        if pool_size < 1 or stride < 1:
            raise InvalidShape("pool_size and stride must be >= 1")
        if padding not in ("same", "valid"):
            raise ValueError("padding must be 'same' or 'valid'")
        self.pool_size, self.stride, self.padding = pool_size, stride, padding

    def config(self):
        return {"pool_size": self.pool_size, "stride": self.stride, "padding": self.padding}

    def _geometry(self, length):
        if self.padding == "same":
            return same_padding(length, self.pool_size, self.stride)
        if length < self.pool_size:
            raise ShapeMismatch(f"pool {self.pool_size} longer than input {length}")
        return (length - self.pool_size) // self.stride + 1, 0, 0

    def output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeMismatch(f"MaxPool1D expects (length, channels), got {input_shape}")
        return (self._geometry(input_shape[0])[0], input_shape[1])

    def forward(self, x, train=False, rng=None):
        if x.ndim != 3:
            raise ShapeMismatch(f"MaxPool1D expects (B, L, C), got {x.shape}")
        B, L, C = x.shape
        out, left, right = self._geometry(L)
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)), constant_values=-np.inf) if left or right else x
        p, s = self.pool_size, self.stride
        span = s * (out - 1) + 1
        win = np.stack([xp[:, j:j + span:s, :] for j in range(p)], axis=2)  # (B, out, p, C)
        arg = win.argmax(axis=2)
        y = np.take_along_axis(win, arg[:, :, None, :], axis=2)[:, :, 0, :]
        self._cache = (arg, xp.shape, left, L, out)
        return y

    def backward(self, dy):
        arg, xp_shape, left, L, out = self._cache
        p, s = self.pool_size, self.stride
        span = s * (out - 1) + 1
        dxp = np.zeros(xp_shape)
        for j in range(p):
            dxp[:, j:j + span:s, :] += np.where(arg == j, dy, 0.0)
        return dxp[:, left:left + L, :]


class Flatten(Layer):
    kind = "Flatten"
    trainable = False

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cache)


class Reshape(Layer):
    kind = "Reshape"
    trainable = False

    def __init__(self, seq_len: int, channels: int):
        super().__init__()
        self.seq_len, self.channels = seq_len, channels

    def config(self):
        return {"seq_len": self.seq_len, "channels": self.channels}

    def output_shape(self, input_shape):
        if int(np.prod(input_shape)) != self.seq_len * self.channels:
            raise ShapeMismatch(f"cannot reshape {input_shape} to ({self.seq_len}, {self.channels})")
        return (self.seq_len, self.channels)

    def forward(self, x, train=False, rng=None):
        self.output_shape(x.shape[1:])
        self._cache = x.shape
        return x.reshape(x.shape[0], self.seq_len, self.channels)

    def backward(self, dy):
        return dy.reshape(self._cache)


class Dense(Layer):
    kind = "Dense"

    def __init__(self, units: int, activation: str = "relu"):
        super().__init__()
        if units < 1:
            raise InvalidShape("Dense needs units >= 1")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.units, self.activation = units, activation

    def config(self):
        return {"units": self.units, "activation": self.activation}

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeMismatch(f"Dense expects a flat input, got {input_shape}")
        return (self.units,)

    def build(self, input_shape, rng):
        out = self.output_shape(input_shape)
        n_in = input_shape[0]
        self.params = {"W": glorot_uniform(rng, (n_in, self.units), n_in, self.units),
                       "b": np.zeros(self.units)}
        return out

    def forward(self, x, train=False, rng=None):
        W = self.params["W"]
        if x.ndim != 2 or x.shape[1] != W.shape[0]:
            raise ShapeMismatch(f"Dense expects (B, {W.shape[0]}), got {x.shape}")
        z = x @ W + self.params["b"]
        y = _activate(z, self.activation)
        self._cache = (x, z, y)
        return y

    def backward(self, dy):
        x, z, y = self._cache
        dz = _activation_grad(dy, z, y, self.activation)
        self.grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.params["W"].T


def dropout_forward(x, p: float, mode: str = "train", rng=None):
    """Inverted dropout. Returns ``(output, mask)``; the mask is ``None`` in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    if mode == "eval" or p == 0.0:
        return x, None
    if mode != "train":
        raise ValueError("mode must be 'train' or 'eval'")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


class Dropout(Layer):
    kind = "Dropout"
    trainable = False

    def __init__(self, p: float = 0.2):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")
        self.p = p

    def config(self):
        return {"p": self.p}

    def forward(self, x, train=False, rng=None):
        y, self._cache = dropout_forward(x, self.p, "train" if train else "eval", rng)
        return y

    def backward(self, dy):
        return dy if self._cache is None else dy * self._cache


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


@dataclass
class LstmWeights:
    """Packed gate weights, gate order (input, forget, candidate, output).

    ``U`` maps the input ``(D, 4H)``, ``W`` the previous hidden state ``(H, 4H)``.
    """

    U: np.ndarray
    W: np.ndarray
    b: np.ndarray

    def gate(self, name: str):
        H = self.W.shape[0]
        i = "ifco".index(name)
        sl = slice(i * H, (i + 1) * H)
        return self.U[:, sl], self.W[:, sl], self.b[sl]


def lstm_step(x, state: LstmState, weights: LstmWeights) -> LstmState:
    """One LSTM time step for a single vector or a batch of row vectors."""
    H = weights.W.shape[0]
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weights.U.shape[0] or state.h.shape[-1] != H or state.c.shape[-1] != H:
        raise ShapeMismatch("LSTM step dimensions are inconsistent")
    z = x @ weights.U + state.h @ weights.W + weights.b
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c = f * state.c + i * g
    return LstmState(h=o * np.tanh(c), c=c)


class LSTM(Layer):
    kind = "LSTM"

    def __init__(self, units: int, return_sequences: bool = False):
        super().__init__()
        if units < 1:
            raise InvalidShape("LSTM needs units >= 1")
        self.units, self.return_sequences = units, return_sequences

    def config(self):
        return {"units": self.units, "return_sequences": self.return_sequences}

    def output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeMismatch(f"LSTM expects (length, channels), got {input_shape}")
        return (input_shape[0], self.units) if self.return_sequences else (self.units,)

    def build(self, input_shape, rng):
        out = self.output_shape(input_shape)
        D, H = input_shape[1], self.units
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget-gate bias starts open
        self.params = {
            "U": glorot_uniform(rng, (D, 4 * H), D, 4 * H),
            "W": glorot_uniform(rng, (H, 4 * H), H, 4 * H),
            "b": b,
        }
        return out

    @property
    def weights(self) -> LstmWeights:
        return LstmWeights(self.params["U"], self.params["W"], self.params["b"])

    def forward(self, x, train=False, rng=None):
        U, W, b = self.params["U"], self.params["W"], self.params["b"]
        if x.ndim != 3 or x.shape[2] != U.shape[0]:
            raise ShapeMismatch(f"LSTM expects (B, T, {U.shape[0]}), got {x.shape}")
        B, T, D = x.shape
        H = self.units
        XU = (x.reshape(B * T, D) @ U).reshape(B, T, 4 * H) + b
        gates = np.empty((B, T, 4 * H))
        cs = np.empty((B, T, H))
        tcs = np.empty((B, T, H))
        hs = np.empty((B, T + 1, H))
        hs[:, 0] = 0.0
        c = np.zeros((B, H))
        for t in range(T):
            z = XU[:, t] + hs[:, t] @ W
            a = gates[:, t]
            a[:, :2 * H] = _sigmoid(z[:, :2 * H])
            a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
            a[:, 3 * H:] = _sigmoid(z[:, 3 * H:])
            c = a[:, H:2 * H] * c + a[:, :H] * a[:, 2 * H:3 * H]
            cs[:, t] = c
            tcs[:, t] = np.tanh(c)
            hs[:, t + 1] = a[:, 3 * H:] * tcs[:, t]
        self._cache = (x, gates, cs, tcs, hs)
        return hs[:, 1:].copy() if self.return_sequences else hs[:, T].copy()

    def backward(self, dy):
        x, gates, cs, tcs, hs = self._cache
        U, W = self.params["U"], self.params["W"]
        B, T, D = x.shape
        H = self.units
        if self.return_sequences:
            dH = dy
        else:
            dH = np.zeros((B, T, H))
            dH[:, -1] = dy
        dZ = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        WT = W.T
        for t in range(T - 1, -1, -1):
            a = gates[:, t]
            i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            dh = dH[:, t] + dh_next
            tc = tcs[:, t]
            dc = dc_next + dh * o * (1.0 - tc * tc)
            c_prev = cs[:, t - 1] if t > 0 else 0.0
            dz = dZ[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ WT
        flatZ = dZ.reshape(B * T, 4 * H)
        self.grads = {
            "U": x.reshape(B * T, D).T @ flatZ,
            "W": hs[:, :T].reshape(B * T, H).T @ flatZ,
            "b": flatZ.sum(axis=0),
        }
        return (flatZ @ U.T).reshape(B, T, D)


LAYER_TYPES = {cls.kind: cls for cls in (Conv1D, MaxPool1D, Flatten, Reshape, Dense, Dropout, LSTM)}


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("type")
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown layer type {kind!r}")
    return LAYER_TYPES[kind](**spec)
