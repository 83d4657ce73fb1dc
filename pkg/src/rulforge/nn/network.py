"""Sequential network container, RULNet/CNN/LSTM builders and JSON checkpoints."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from rulforge.errors import InvalidShape, NonFiniteError, NonFiniteGradient
from rulforge.nn.layers import (
    LSTM,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool1D,
    Reshape,
    layer_from_spec,
)

CHECKPOINT_VERSION = 1


def _check_finite(arr, where: str):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values after {where}")


class Network:
    """Ordered stack of layers trained on a mean-squared-error loss."""

    def __init__(self, layers: list[Layer], input_shape: tuple[int, ...], seed: int = 0,
                 name: str = "network", build: bool = True):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = seed
        self.name = name
        self.trained = False
        self.shapes: list[tuple] = []
        shape = self.input_shape
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            shape = layer.build(shape, rng) if build else layer.output_shape(shape)
            self.shapes.append(tuple(shape))

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    # forward / backward ------------------------------------------------------

    def forward(self, x, train: bool = False, rng=None, record_shapes: list | None = None):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise InvalidShape(f"{self.name} expects input {self.input_shape}, got {x.shape[1:]}")
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train=train, rng=rng)
            _check_finite(x, f"layer {i} ({layer.kind})")
            if record_shapes is not None:
                record_shapes.append((layer.kind, x.shape[1:]))
        return x

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [self.forward(x[i:i + batch_size])[:, 0] for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def loss_and_grads(self, x, y, train: bool = True, rng=None):
        """MSE loss of a batch and the gradient of every parameter."""
        pred = self.forward(x, train=train, rng=rng)[:, 0]
        y = np.asarray(y, dtype=np.float64)
        err = pred - y
        loss = float(np.mean(err * err))
        self.backward((2.0 / err.size * err)[:, None])
        grads = self.gradients()
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("gradient contains non-finite values")
        return loss, grads

    # parameters --------------------------------------------------------------

    def parameter_names(self) -> list[tuple[int, str]]:
        return [(i, k) for i, layer in enumerate(self.layers) for k in sorted(layer.params)]

    def parameters(self) -> list[np.ndarray]:
        return [self.layers[i].params[k] for i, k in self.parameter_names()]

    def gradients(self) -> list[np.ndarray]:
        return [self.layers[i].grads[k] for i, k in self.parameter_names()]

    def get_weights(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def set_weights(self, weights: list[np.ndarray]) -> None:
        for (i, k), w in zip(self.parameter_names(), weights, strict=True):
            if self.layers[i].params[k].shape != w.shape:
                raise InvalidShape(f"weight shape mismatch for layer {i} {k}")
            self.layers[i].params[k][...] = w

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # persistence -------------------------------------------------------------

    def to_dict(self, meta: dict | None = None) -> dict:
        return {
            "spec_version": CHECKPOINT_VERSION,
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layer_specs": [layer.spec() for layer in self.layers],
            "seed": self.seed,
            "trained": self.trained,
            "weights": [
                {"layer": i, "name": k, "shape": list(self.layers[i].params[k].shape),
                 "data": self.layers[i].params[k].ravel().tolist()}
                for i, k in self.parameter_names()
            ],
            "meta": meta or {},
        }

    def to_json(self, meta: dict | None = None) -> str:
        return json.dumps(self.to_dict(meta))

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        if doc.get("spec_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('spec_version')}")
        layers = [layer_from_spec(s) for s in doc["layer_specs"]]
        net = cls(layers, tuple(doc["input_shape"]), doc["seed"], doc.get("name", "network"))
        for w in doc["weights"]:
            arr = np.asarray(w["data"], dtype=np.float64).reshape(w["shape"])
            target = net.layers[w["layer"]].params[w["name"]]
            if target.shape != arr.shape:
                raise InvalidShape(f"checkpoint weight {w['layer']}/{w['name']} has wrong shape")
            target[...] = arr
        net.trained = bool(doc.get("trained", False))
        return net

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_dict(json.loads(text))

    def save(self, path, meta: dict | None = None) -> Path:
        path = Path(path)
        path.write_text(self.to_json(meta), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "Network":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def summary(self) -> str:
        lines = [f"{self.name}: input {self.input_shape}"]
        for i, (layer, shape) in enumerate(zip(self.layers, self.shapes), start=1):
            lines.append(f"  {i:2d} {layer!r:60s} -> {shape}")
        lines.append(f"  parameters: {self.n_parameters()}")
        return "\n".join(lines)


def _check_dims(sequence_length: int, channels: int):
    if sequence_length < 1 or channels < 1:
        raise InvalidShape("sequence_length and channels must be >= 1")


def _conv_stack(sequence_length: int, channels: int, bridge_activation: str) -> list[Layer]:
    return [
        Conv1D(18, 2, 1, "same"), MaxPool1D(2, 2, "same"),
        Conv1D(36, 2, 1, "same"), MaxPool1D(2, 2, "same"),
        Conv1D(72, 2, 1, "same"), MaxPool1D(2, 2, "same"),
        Flatten(),
        Dense(sequence_length * channels, bridge_activation),
        Dropout(0.2),
    ]


def _head(dropout: float = 0.2) -> list[Layer]:
    return [Dense(50, "relu"), Dropout(dropout), Dense(1, "linear")]


def build_rulnet(sequence_length: int = 100, channels: int = 7, seed: int = 0,
                 bridge_activation: str = "relu") -> Network:
    """Conv/pool x3 -> dense bridge -> reshape -> LSTM x2 -> dense head.

    ``bridge_activation="softmax"`` reproduces the literal bridge choice for
    fidelity experiments; the ReLU default keeps the bridge scale-preserving.
    """
    _check_dims(sequence_length, channels)
    units = 3 * channels
    layers = _conv_stack(sequence_length, channels, bridge_activation) + [
        Reshape(sequence_length, channels),
        LSTM(units, return_sequences=True), Dropout(0.2),
        LSTM(units, return_sequences=False), Dropout(0.2),
    ] + _head()
    return Network(layers, (sequence_length, channels), seed, "RULNet")


def build_cnn_baseline(sequence_length: int = 100, channels: int = 7, seed: int = 0) -> Network:
    _check_dims(sequence_length, channels)
    layers = _conv_stack(sequence_length, channels, "relu") + _head()
    return Network(layers, (sequence_length, channels), seed, "CNN")


def build_lstm_baseline(sequence_length: int = 100, channels: int = 7, seed: int = 0) -> Network:
    _check_dims(sequence_length, channels)
    units = 3 * channels
    layers = [
        LSTM(units, return_sequences=True), Dropout(0.2),
        LSTM(units, return_sequences=False), Dropout(0.2),
    ] + _head()
    return Network(layers, (sequence_length, channels), seed, "LSTM")


BUILDERS = {"rulnet": build_rulnet, "cnn": build_cnn_baseline, "lstm": build_lstm_baseline}


def build_network(kind: str, sequence_length: int, channels: int, seed: int = 0) -> Network:
    try:
        builder = BUILDERS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown network {kind!r}; choose from {sorted(BUILDERS)}") from None
    return builder(sequence_length, channels, seed)
