"""Windowed time-domain health indicators."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rulforge.data import FeatureMatrix
from rulforge.errors import DegenerateWindow, InsufficientData

log = logging.getLogger(__name__)

HI_CHANNELS = ("mean", "sd", "rms", "kurtosis", "shape_factor", "crest_factor", "value")
_TINY = 1e-12


@dataclass(frozen=True)
class HealthIndicatorConfig:
    window_length: int = 20

    def __post_init__(self):
        if self.window_length < 2:
            raise ValueError("window_length must be >= 2")


def window_statistics(windows: np.ndarray, strict: bool = False, cycles=None) -> np.ndarray:
    """Six indicators for each row of ``windows`` (shape ``(n, W)``).

    Columns: mean, SD, RMS, kurtosis, shape factor, crest factor, all with
    population (1/W) normalisation.  With ``strict`` a zero SD or RMS raises
    :class:`DegenerateWindow`; otherwise kurtosis falls back to 0 and the
    two factors to 1.
    """
    w = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    mean = w.mean(axis=1)
    centred = w - mean[:, None]
    var = (centred**2).mean(axis=1)
    sd = np.sqrt(var)
    rms = np.sqrt((w**2).mean(axis=1))
    abs_mean = np.abs(w).mean(axis=1)
    peak = np.abs(w).max(axis=1)
    m4 = (centred**4).mean(axis=1)

    flat = sd <= _TINY * np.maximum(peak, _TINY)
    dead = rms <= _TINY
    if (flat.any() or dead.any()) and strict:
        idx = int(np.flatnonzero(flat | dead)[0])
        cyc = None if cycles is None else int(cycles[idx])
        raise DegenerateWindow(f"zero spread in window ending at cycle {cyc}", cycle=cyc)

    with np.errstate(divide="ignore", invalid="ignore"):
        kurt = np.where(flat, 0.0, m4 / np.where(flat, 1.0, var**2))
        sf = np.where(dead, 1.0, rms / np.where(dead, 1.0, abs_mean))
        cf = np.where(dead, 1.0, peak / np.where(dead, 1.0, rms))
    # a flat window has zero spread: report SD exactly
    sd = np.where(flat, 0.0, sd)
    return np.column_stack([mean, sd, rms, kurt, sf, cf])


def trailing_windows(values: np.ndarray, window_length: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size < window_length:
        raise InsufficientData(f"series of length {values.size} shorter than window {window_length}")
    return sliding_window_view(values, window_length)


def health_indicators(x, config: HealthIndicatorConfig = HealthIndicatorConfig(),
                      strict: bool = False) -> FeatureMatrix:
    """Seven-channel feature matrix: six trailing-window indicators plus the value itself.

    The first ``window_length - 1`` cycles have no full window and are dropped.
    """
    values = np.asarray(getattr(x, "values", x), dtype=np.float64)
    cycles = np.asarray(getattr(x, "cycles", np.arange(1, values.size + 1)))
    W = config.window_length
    windows = trailing_windows(values, W)
    end_cycles = cycles[W - 1:]
    stats = window_statistics(windows, strict=strict, cycles=end_cycles)
    degenerate = int(np.sum(stats[:, 1] == 0.0))
    if degenerate:
        log.warning("%d degenerate windows in series %s; kurtosis set to 0",
                    degenerate, getattr(x, "series_id", "?"))
    rows = np.column_stack([stats, values[W - 1:]])
    return FeatureMatrix(rows, end_cycles, "HI", getattr(x, "series_id", ""), HI_CHANNELS)
