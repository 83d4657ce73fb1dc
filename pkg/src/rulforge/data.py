"""Series containers, normalization, RUL labels, windowing and dataset files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rulforge.errors import (
    ConstantSeries,
    InvalidKnee,
    NonMonotoneCycles,
    NonPositiveResistance,
    ParseError,
    TooShort,
)

DATASET_HEADER = ["series_id", "cycle", "resistance", "condition_id", "is_failure"]
KNEE_HEADER = ["series_id", "knee_cycle"]
DEFAULT_SEQUENCE_LENGTH = 100
DEFAULT_RUL_CAP = 125


def _as_float_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("expected a one-dimensional sequence")
    return arr


def _check_cycles(cycles: np.ndarray, series_id: str) -> None:
    if cycles.size and np.any(np.diff(cycles) <= 0):
        raise NonMonotoneCycles(f"cycles of series {series_id!r} are not strictly increasing")


@dataclass(frozen=True, eq=False)
class RunToFailureSeries:
    """Raw contact-resistance trajectory of one relay.

    ``knee_cycle`` and ``pattern`` are optional ground truth attached by the
    synthetic generator; they are not part of the dataset CSV.
    """

    series_id: str
    cycles: np.ndarray
    resistance: np.ndarray
    condition_id: str | None = None
    is_failure: bool = True
    knee_cycle: int | None = None
    pattern: str | None = None

    def __post_init__(self):
        cycles = np.array(self.cycles, dtype=np.int64)
        resistance = _as_float_array(self.resistance)
        object.__setattr__(self, "cycles", cycles)
        object.__setattr__(self, "resistance", resistance)
        if cycles.shape != resistance.shape:
            raise ValueError("cycles and resistance must have equal length")
        if resistance.size < 2:
            raise TooShort(f"series {self.series_id!r} needs at least 2 points")
        if not np.all(np.isfinite(resistance)):
            raise ValueError(f"series {self.series_id!r} contains non-finite values")
        if np.any(resistance <= 0):
            raise NonPositiveResistance(f"series {self.series_id!r} has non-positive resistance")
        _check_cycles(cycles, self.series_id)

    def __len__(self) -> int:
        return int(self.resistance.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RunToFailureSeries):
            return NotImplemented
        return (
            self.series_id == other.series_id
            and self.condition_id == other.condition_id
            and self.is_failure == other.is_failure
            and np.array_equal(self.cycles, other.cycles)
            and np.array_equal(self.resistance, other.resistance)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class NormalizedSeries:
    series_id: str
    cycles: np.ndarray
    values: np.ndarray
    min_val: float
    max_val: float
    condition_id: str | None = None
    is_failure: bool = True

    def __len__(self) -> int:
        return int(self.values.size)

    def denormalize(self) -> np.ndarray:
        return self.values * (self.max_val - self.min_val) + self.min_val


@dataclass(frozen=True)
class RulLabelSeries:
    targets: np.ndarray
    knee_cycle: int
    cap: float

    def at(self, cycle: int) -> float:
        """Target at a 1-based cycle index."""
        return float(self.targets[cycle - 1])


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Per-cycle feature rows; ``cycles[i]`` is the cycle index of ``rows[i]``."""

    rows: np.ndarray
    cycles: np.ndarray
    kind: str
    series_id: str = ""
    channel_names: tuple[str, ...] = field(default=())

    CHANNELS = {"HI": 7, "SOM": 1, "CurveFit": 3, "Raw": 1}

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[:, None]
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cycles", np.array(self.cycles, dtype=np.int64))
        if rows.shape[0] != self.cycles.size:
            raise ValueError("one cycle index per feature row is required")
        expected = self.CHANNELS.get(self.kind)
        if expected is not None and rows.shape[1] != expected:
            raise ValueError(f"{self.kind} features need {expected} channels, got {rows.shape[1]}")
        if not np.all(np.isfinite(rows)):
            raise ValueError("feature rows must be finite")

    @property
    def channels(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return int(self.rows.shape[0])


@dataclass(frozen=True)
class WindowedSample:
    features: np.ndarray
    target: float
    end_cycle: int
    series_id: str = ""


def normalize_min_max(series: RunToFailureSeries) -> NormalizedSeries:
    x = series.resistance
    lo, hi = float(x.min()), float(x.max())
    if not hi > lo:
        raise ConstantSeries(f"series {series.series_id!r} is constant; min-max scale undefined")
    return NormalizedSeries(
        series_id=series.series_id,
        cycles=series.cycles,
        values=(x - lo) / (hi - lo),
        min_val=lo,
        max_val=hi,
        condition_id=series.condition_id,
        is_failure=series.is_failure,
    )


def denormalize(series: NormalizedSeries) -> np.ndarray:
    return series.denormalize()


def piecewise_rul_labels(length: int, knee_cycle: int, cap: float = DEFAULT_RUL_CAP) -> RulLabelSeries:
    """Capped RUL target: ``cap`` before the knee, ``length - t`` from it on."""
    if not 1 <= knee_cycle <= length:
        raise InvalidKnee(f"knee cycle {knee_cycle} outside series of length {length}")
    if cap < length - knee_cycle:
        raise InvalidKnee(f"cap {cap} is below the post-knee RUL {length - knee_cycle}")
    t = np.arange(1, length + 1)
    targets = np.where(t < knee_cycle, float(cap), (length - t).astype(np.float64))
    return RulLabelSeries(targets=targets, knee_cycle=int(knee_cycle), cap=float(cap))


def window_count(length: int, sequence_length: int, stride: int) -> int:
    if length < sequence_length:
        return 0
    return (length - sequence_length) // stride + 1


def window_arrays(features: FeatureMatrix, labels: RulLabelSeries,
                  sequence_length: int = DEFAULT_SEQUENCE_LENGTH, stride: int = 1):
    """Vectorised windowing. Returns ``(X, y, end_cycles)``.

    ``X`` has shape ``(n_windows, sequence_length, channels)``; ``y`` holds the
    label at each window's final cycle.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = len(features)
    if n < sequence_length:
        raise TooShort(f"{n} feature rows is shorter than sequence length {sequence_length}")
    view = sliding_window_view(features.rows, sequence_length, axis=0)[::stride]
    X = np.ascontiguousarray(np.swapaxes(view, 1, 2))
    end_cycles = features.cycles[sequence_length - 1::stride]
    y = labels.targets[end_cycles - 1]
    return X, y.astype(np.float64), end_cycles


def window_series(features: FeatureMatrix, labels: RulLabelSeries,
                  sequence_length: int = DEFAULT_SEQUENCE_LENGTH, stride: int = 1) -> list[WindowedSample]:
    X, y, ends = window_arrays(features, labels, sequence_length, stride)
    return [WindowedSample(X[i], float(y[i]), int(ends[i]), features.series_id) for i in range(len(y))]


# dataset files ---------------------------------------------------------------

def write_dataset(series: Iterable[RunToFailureSeries], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for s in series:
            cond = "" if s.condition_id is None else s.condition_id
            flag = "1" if s.is_failure else "0"
            for c, r in zip(s.cycles.tolist(), s.resistance.tolist()):
                writer.writerow([s.series_id, c, repr(r), cond, flag])
    return path


def _parse_bool(text: str, line: int) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no"):
        return False
    raise ParseError(f"line {line}: is_failure must be 0/1, got {text!r}")


def read_dataset(path) -> list[RunToFailureSeries]:
    """Read a dataset CSV, grouping rows by series_id in first-seen order."""
    path = Path(path)
    groups: dict[str, dict] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DATASET_HEADER:
            raise ParseError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DATASET_HEADER):
                raise ParseError(f"line {lineno}: expected {len(DATASET_HEADER)} fields, got {len(row)}")
            sid, cyc, res, cond, flag = row
            try:
                cycle = int(cyc)
                value = float(res)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if not math.isfinite(value):
                raise ParseError(f"line {lineno}: non-finite resistance")
            if value <= 0:
                raise NonPositiveResistance(f"line {lineno}: resistance {value} is not positive")
            g = groups.setdefault(sid, {"cycles": [], "res": [], "cond": cond or None,
                                        "fail": _parse_bool(flag, lineno)})
            if g["cycles"] and cycle <= g["cycles"][-1]:
                raise NonMonotoneCycles(f"line {lineno}: series {sid!r} cycles not increasing")
            g["cycles"].append(cycle)
            g["res"].append(value)
    return [
        RunToFailureSeries(sid, np.array(g["cycles"]), np.array(g["res"]), g["cond"], g["fail"])
        for sid, g in groups.items()
    ]


def write_knees(knees: dict[str, int], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(KNEE_HEADER)
        for sid, k in knees.items():
            writer.writerow([sid, int(k)])
    return path


def read_knees(path) -> dict[str, int]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != KNEE_HEADER:
            raise ParseError(f"{path}: expected header {','.join(KNEE_HEADER)}")
        return {row["series_id"]: int(row["knee_cycle"]) for row in reader}


def write_manifest(path, name: str, n_series: int, seed: int | None, generator_config: dict | None = None) -> Path:
    doc = {"name": name, "n_series": n_series, "seed": seed}
    if generator_config is not None:
        doc["generator_config"] = generator_config
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def attach_knees(series: Sequence[RunToFailureSeries], knees: dict[str, int]) -> list[RunToFailureSeries]:
    out = []
    for s in series:
        k = knees.get(s.series_id)
        out.append(RunToFailureSeries(s.series_id, s.cycles, s.resistance, s.condition_id,
                                      s.is_failure, knee_cycle=k, pattern=s.pattern))
    return out
