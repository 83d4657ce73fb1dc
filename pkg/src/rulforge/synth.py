"""Synthetic reed-relay contact-resistance generator.

Pattern 1 follows a Weibull failure-rate rise; Pattern 2 rises to an interior
peak and then decays along an inverse failure-rate curve; Normal series stay
in a low noisy band.  Sticking and missing faults are one-cycle spikes and
drifting is an additive ramp over a contiguous span.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from rulforge.data import DEFAULT_RUL_CAP, RunToFailureSeries

PATTERNS = ("pattern1", "pattern2", "normal", "mixed")
_CONDITIONS = {"pattern1": ("C1", "C2", "C3"), "pattern2": ("C4", "C5", "C6"),
               "normal": ("C1", "C2", "C3")}
_PREFIX = {"pattern1": "p1", "pattern2": "p2", "normal": "nm"}


@dataclass(frozen=True)
class SynthConfig:
    pattern: str = "mixed"
    mix: tuple[float, float, float] = (0.7, 0.15, 0.15)
    length_range: tuple[int, int] = (220, 360)
    base_range: tuple[float, float] = (0.3, 0.5)
    amp_range: tuple[float, float] = (0.8, 1.6)
    # Pattern 1 WFRF shape (beta); the rise is (k / L) ** (beta - 1)
    wfrf_beta_range: tuple[float, float] = (8.0, 14.0)
    # Pattern 2: peak position as a fraction of length, rise shape, decay
    peak_fraction_range: tuple[float, float] = (0.4, 0.5)
    rise_beta_range: tuple[float, float] = (4.0, 8.0)
    ifrf_beta_range: tuple[float, float] = (0.9, 1.3)
    ifrf_offset_range: tuple[float, float] = (0.15, 0.2)
    noise_std: float = 0.05
    sticking_rate: float = 0.003
    missing_rate: float = 0.003
    drifting_rate: float = 0.1
    spike_scale: float = 0.3
    drift_scale: float = 0.15
    knee_threshold: float = 0.05
    max_rul: int = DEFAULT_RUL_CAP
    seed: int = 0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}, got {self.pattern!r}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        for name in ("sticking_rate", "missing_rate", "drifting_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        lo, hi = self.length_range
        if lo < 2 or hi < lo:
            raise ValueError("invalid length_range")
        if len(self.mix) != 3 or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise ValueError("mix needs three non-negative weights")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(doc) - set(fields)
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})

    def noise_free(self) -> "SynthConfig":
        return dataclasses.replace(self, noise_std=0.0, sticking_rate=0.0,
                                   missing_rate=0.0, drifting_rate=0.0)


@dataclass(frozen=True, eq=False)
class SyntheticSeries:
    series: RunToFailureSeries
    trend: np.ndarray
    params: dict


def _uniform(rng, bounds):
    return float(rng.uniform(bounds[0], bounds[1]))


def _trend_pattern1(rng, cfg: SynthConfig, length: int):
    k = np.arange(1, length + 1, dtype=np.float64)
    c = _uniform(rng, cfg.base_range)
    amp = _uniform(rng, cfg.amp_range)
    beta = _uniform(rng, cfg.wfrf_beta_range)
    trend = c + amp * (k / length) ** (beta - 1.0)
    onset = int(np.argmax(trend - c >= cfg.knee_threshold * amp)) + 1
    return trend, {"c": c, "amp": amp, "beta": beta}, onset, amp


def _trend_pattern2(rng, cfg: SynthConfig, length: int):
    k = np.arange(1, length + 1, dtype=np.float64)
    c = _uniform(rng, cfg.base_range)
    amp = _uniform(rng, cfg.amp_range)
    peak = int(round(_uniform(rng, cfg.peak_fraction_range) * length))
    peak = min(max(peak, 2), length - 2)
    rise_beta = _uniform(rng, cfg.rise_beta_range)
    decay_beta = _uniform(rng, cfg.ifrf_beta_range)
    offset = _uniform(rng, cfg.ifrf_offset_range) * length   # peak + a2
    shift = offset - peak                                      # a2
    rise = c + amp * (k / peak) ** (rise_beta - 1.0)
    tail = k > peak
    trend = rise.copy()
    trend[tail] = c + amp * (offset / (k[tail] + shift)) ** decay_beta
    onset = int(np.argmax(trend - c >= cfg.knee_threshold * amp)) + 1
    params = {"c": c, "amp": amp, "peak": peak, "rise_beta": rise_beta,
              "decay_beta": decay_beta, "shift": shift}
    return trend, params, onset, amp


def _trend_normal(rng, cfg: SynthConfig, length: int):
    c = _uniform(rng, cfg.base_range)
    amp = _uniform(rng, cfg.amp_range)  # nominal scale, sets the noise level only
    return np.full(length, c), {"c": c, "amp": amp}, None, amp


def _inject_faults(rng, cfg: SynthConfig, x: np.ndarray, scale: float) -> np.ndarray:
    n = x.size
    x = x.copy()
    if cfg.drifting_rate > 0 and rng.random() < cfg.drifting_rate:
        span = int(rng.integers(10, 41))
        span = min(span, n - 1)
        start = int(rng.integers(0, n - span))
        x[start:start + span] += np.linspace(0.0, cfg.drift_scale * scale, span)
    if cfg.sticking_rate > 0:
        stick = rng.random(n) < cfg.sticking_rate
        x[stick] += cfg.spike_scale * scale
    if cfg.missing_rate > 0:
        miss = rng.random(n) < cfg.missing_rate
        x[miss] -= cfg.spike_scale * scale
    return x


def _one(rng, cfg: SynthConfig, pattern: str, index: int) -> SyntheticSeries:
    length = int(rng.integers(cfg.length_range[0], cfg.length_range[1] + 1))
    maker = {"pattern1": _trend_pattern1, "pattern2": _trend_pattern2, "normal": _trend_normal}[pattern]
    trend, params, onset, scale = maker(rng, cfg, length)
    values = trend
    if cfg.noise_std > 0:
        values = values + rng.normal(0.0, cfg.noise_std * scale, size=length)
    values = _inject_faults(rng, cfg, values, scale)
    floor = 0.1 * params["c"]
    values = np.maximum(values, floor)
    conds = _CONDITIONS[pattern]
    cond = conds[int(rng.integers(len(conds)))]
    knee = None
    if onset is not None:
        knee = max(onset, length - cfg.max_rul, 1)
    series = RunToFailureSeries(
        series_id=f"{_PREFIX[pattern]}-{index:04d}",
        cycles=np.arange(1, length + 1),
        resistance=values,
        condition_id=cond,
        is_failure=pattern != "normal",
        knee_cycle=knee,
        pattern=pattern,
    )
    return SyntheticSeries(series=series, trend=trend, params=params)


def _pattern_counts(cfg: SynthConfig, n_series: int) -> list[tuple[str, int]]:
    if cfg.pattern != "mixed":
        return [(cfg.pattern, n_series)]
    w = np.asarray(cfg.mix, dtype=np.float64)
    w = w / w.sum()
    n2 = int(round(n_series * w[1]))
    n3 = int(round(n_series * w[2]))
    n1 = n_series - n2 - n3
    return [("pattern1", n1), ("pattern2", n2), ("normal", n3)]


def generate_synthetic_with_truth(config: SynthConfig, n_series: int) -> list[SyntheticSeries]:
    """Like :func:`generate_synthetic` but also returns noise-free trends and draws."""
    if n_series < 0:
        raise ValueError("n_series must be >= 0")
    rng = np.random.default_rng(config.seed)
    out = []
    for pattern, count in _pattern_counts(config, n_series):
        for i in range(count):
            out.append(_one(rng, config, pattern, i))
    return out


def generate_synthetic(config: SynthConfig, n_series: int) -> list[RunToFailureSeries]:
    return [s.series for s in generate_synthetic_with_truth(config, n_series)]


def knees_of(series) -> dict[str, int]:
    return {s.series_id: s.knee_cycle for s in series if s.knee_cycle is not None}
