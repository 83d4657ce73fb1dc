"""Kohonen self-organizing map trained on healthy windows; MQE as a degradation feature."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from rulforge.data import FeatureMatrix
from rulforge.errors import DimensionMismatch, ModelNotFitted
from rulforge.features.health import trailing_windows

STOP_DISPLACEMENT = 1e-6


@dataclass(frozen=True, eq=False)
class SomModel:
    """Rectangular SOM. Unit ``u`` sits at grid cell ``(u // grid_cols, u % grid_cols)``.

    Learning rate and neighbourhood width decay as ``alpha0 * exp(-k / tau)``
    and ``sigma0 * exp(-k / tau)`` with ``k`` the global presentation count.
    ``tau=None`` means "total number of presentations", fixed at training time.
    """

    grid_rows: int
    grid_cols: int
    weights: np.ndarray
    alpha0: float = 0.5
    sigma0: float | None = None
    tau: float | None = None
    epochs: int = 50
    seed: int = 0
    trained: bool = False
    displacement: tuple[float, ...] = field(default=())

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        if w.ndim != 2 or w.shape[0] != self.grid_rows * self.grid_cols:
            raise ValueError("weights must have one row per grid unit")
        if not np.all(np.isfinite(w)):
            raise ValueError("SOM weights must be finite")
        if self.sigma0 is None:
            object.__setattr__(self, "sigma0", max(self.grid_rows, self.grid_cols) / 2.0)
        if not self.sigma0 > 0 or self.alpha0 < 0:
            raise ValueError("need sigma0 > 0 and alpha0 >= 0")

    @property
    def n_units(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def dim(self) -> int:
        return int(self.weights.shape[1])

    def alpha(self, k):
        return self.alpha0 * np.exp(-np.asarray(k, dtype=np.float64) / self.tau)

    def sigma(self, k):
        return self.sigma0 * np.exp(-np.asarray(k, dtype=np.float64) / self.tau)

    def to_json(self) -> str:
        return json.dumps({
            "grid": [self.grid_rows, self.grid_cols],
            "weights": self.weights.tolist(),
            "schedules": {"alpha0": self.alpha0, "sigma0": self.sigma0, "tau": self.tau,
                          "form": "exp(-k/tau)"},
            "epochs": self.epochs,
            "seed": self.seed,
            "trained": self.trained,
        })

    @classmethod
    def from_json(cls, text: str) -> "SomModel":
        d = json.loads(text)
        s = d["schedules"]
        return cls(d["grid"][0], d["grid"][1], np.asarray(d["weights"]), s["alpha0"], s["sigma0"],
                   s["tau"], d["epochs"], d["seed"], d.get("trained", False))


def init_som(dim: int, grid_rows: int = 10, grid_cols: int = 10, seed: int = 0, data=None,
             alpha0: float = 0.5, sigma0: float | None = None, epochs: int = 50) -> SomModel:
    """Random weights, uniform within the per-dimension range of ``data`` (or [0, 1])."""
    if grid_rows * grid_cols < 4:
        raise ValueError("grid must have at least 4 units")
    rng = np.random.default_rng(seed)
    if data is not None:
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        lo, hi = data.min(axis=0), data.max(axis=0)
    else:
        lo, hi = np.zeros(dim), np.ones(dim)
    w = lo + (hi - lo) * rng.random((grid_rows * grid_cols, dim))
    return SomModel(grid_rows, grid_cols, w, alpha0, sigma0, None, epochs, seed)


@numba.njit(cache=True)
def _train_epoch(w, grid, X, order, k0, alpha0, sigma0, tau):
    U = w.shape[0]
    n = X.shape[1]
    k = k0
    for s in range(order.shape[0]):
        x = X[order[s]]
        best, bmu = np.inf, 0
        for u in range(U):
            d = 0.0
            for j in range(n):
                diff = x[j] - w[u, j]
                d += diff * diff
            if d < best:
                best, bmu = d, u
        a = alpha0 * math.exp(-k / tau)
        sig = sigma0 * math.exp(-k / tau)
        two_s2 = 2.0 * sig * sig
        for u in range(U):
            g = max(abs(grid[u, 0] - grid[bmu, 0]), abs(grid[u, 1] - grid[bmu, 1]))
            h = a * math.exp(-(g * g) / two_s2)
            for j in range(n):
                w[u, j] += h * (x[j] - w[u, j])
        k += 1.0
    return k


def _grid(model: SomModel) -> np.ndarray:
    u = np.arange(model.n_units)
    return np.column_stack([u // model.grid_cols, u % model.grid_cols]).astype(np.float64)


def som_train(normal_windows, model_init: SomModel, shuffle: bool = False) -> SomModel:
    """Sequential Kohonen training.

    Samples are presented in the given order (or a seeded permutation per
    epoch when ``shuffle``).  Every unit moves toward the sample by
    ``alpha(k) * H``, with a Gaussian neighbourhood ``H`` over the Chebyshev
    grid distance to the BMU; for the BMU itself ``H = 1``.  Training stops
    after ``epochs`` or once the epoch-mean unit displacement drops below 1e-6.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(normal_windows, dtype=np.float64)))
    if X.shape[0] < 1:
        raise ValueError("need at least one training vector")
    if X.shape[1] != model_init.dim:
        raise DimensionMismatch(f"training vectors have dim {X.shape[1]}, SOM expects {model_init.dim}")
    tau = model_init.tau if model_init.tau is not None else float(max(1, model_init.epochs * X.shape[0]))
    w = model_init.weights.copy()
    grid = _grid(model_init)
    rng = np.random.default_rng(model_init.seed)
    k = 0.0
    disp = []
    for _ in range(model_init.epochs):
        order = rng.permutation(X.shape[0]) if shuffle else np.arange(X.shape[0])
        before = w.copy()
        k = _train_epoch(w, grid, X, order, k, float(model_init.alpha0), float(model_init.sigma0), tau)
        disp.append(float(np.linalg.norm(w - before, axis=1).mean()))
        if disp[-1] < STOP_DISPLACEMENT:
            break
    if not np.all(np.isfinite(w)):
        raise FloatingPointError("SOM weights diverged")
    return replace(model_init, weights=w, tau=tau, trained=True, displacement=tuple(disp))


def bmu_index(model: SomModel, x) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DimensionMismatch(f"input has shape {x.shape}, SOM expects ({model.dim},)")
    return int(np.argmin(((model.weights - x) ** 2).sum(axis=1)))


def mqe(model: SomModel, x) -> float:
    """Minimum quantization error ``||x - w_BMU||``."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.linalg.norm(x - model.weights[bmu_index(model, x)]))


def mqe_batch(model: SomModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"inputs have dim {X.shape[1]}, SOM expects {model.dim}")
    # |x|^2 - 2 x.w + |w|^2 loses precision near zero; use explicit differences
    d2 = ((X[:, None, :] - model.weights[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


def som_featurize(model: SomModel, x, window_length: int | None = None) -> FeatureMatrix:
    """MQE of every trailing window of ``x`` (one channel)."""
    if window_length is None:
        window_length = model.dim
    if window_length != model.dim:
        raise DimensionMismatch(f"window length {window_length} differs from SOM input dim {model.dim}")
    if not model.trained:
        raise ModelNotFitted("SOM has not been trained")
    values = np.asarray(getattr(x, "values", x), dtype=np.float64)
    cycles = np.asarray(getattr(x, "cycles", np.arange(1, values.size + 1)))
    windows = trailing_windows(values, window_length)
    q = np.empty(windows.shape[0])
    for start in range(0, windows.shape[0], 512):
        q[start:start + 512] = mqe_batch(model, windows[start:start + 512])
    return FeatureMatrix(q[:, None], cycles[window_length - 1:], "SOM",
                         getattr(x, "series_id", ""), ("mqe",))
