"""Offline training per degradation pattern, RMSE evaluation and online prediction."""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rulforge.clustering import (
    ClusterModel,
    DtwConfig,
    assign_pattern,
    attach_medoids,
    cluster_kmedoids,
    distance_matrix,
)
from rulforge.data import (
    DEFAULT_RUL_CAP,
    FeatureMatrix,
    RunToFailureSeries,
    normalize_min_max,
    piecewise_rul_labels,
    window_arrays,
)
from rulforge.errors import InsufficientSeries, LengthMismatch, ModelNotFitted, RulError, TooShort
from rulforge.features import health_indicators, select_feature_strategy
from rulforge.features.curvefit import curvefit_featurize
from rulforge.features.health import HealthIndicatorConfig, trailing_windows
from rulforge.features.som import SomModel, init_som, som_featurize, som_train
from rulforge.nn.network import Network, build_network
from rulforge.nn.train import TrainingConfig, train_network

log = logging.getLogger(__name__)

STRATEGIES = ("HI", "SOM", "CurveFit", "Raw")
NETWORKS = ("RULNet", "CNN", "LSTM")
RMSE_MODE = "pooled over all test windows"
_STRATEGY_ALIASES = {s.lower(): s for s in STRATEGIES} | {"auto": "auto"}
_NETWORK_ALIASES = {n.lower(): n for n in NETWORKS}


def canonical_strategy(name: str) -> str:
    try:
        return _STRATEGY_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown feature strategy {name!r}") from None


def canonical_network(name: str) -> str:
    try:
        return _NETWORK_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown network {name!r}") from None


def rmse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size != t.size or p.size == 0:
        raise LengthMismatch(f"need equal non-zero lengths, got {p.size} and {t.size}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


# plan ------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentPlan:
    """Everything that determines an experiment besides the data itself."""

    train_fraction: float = 0.7
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    k: int = 2
    strategies: tuple[str, ...] = ("HI", "SOM", "CurveFit")
    networks: tuple[str, ...] = NETWORKS
    training: TrainingConfig = TrainingConfig()
    seed: int = 0
    sequence_length: int = 100
    window_length: int = 20
    rul_cap: float = DEFAULT_RUL_CAP
    train_stride: int = 5
    val_stride: int = 10
    eval_stride: int = 1
    som_grid: tuple[int, int] = (10, 10)
    som_epochs: int = 50
    som_stride: int = 2
    curvefit_starts: int = 8
    kmedoids_restarts: int = 10
    dtw_band: int | None = None
    cluster_normalized: bool = True
    failure_pattern_known: bool = True
    dataset: str = ""

    def __post_init__(self):
        fr = (self.train_fraction, self.val_fraction, self.test_fraction)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("split fractions must be positive and sum to 1")
        if not self.strategies or not self.networks:
            raise ValueError("plan needs at least one strategy and one network")
        object.__setattr__(self, "strategies", tuple(canonical_strategy(s) for s in self.strategies))
        object.__setattr__(self, "networks", tuple(canonical_network(n) for n in self.networks))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("train_stride", "val_stride", "eval_stride", "som_stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.sequence_length < 1 or self.window_length < 2:
            raise ValueError("sequence_length must be >= 1 and window_length >= 2")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["training"] = self.training.to_dict()
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentPlan":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        doc = dict(doc)
        if "training" in doc and isinstance(doc["training"], dict):
            tnames = {f.name for f in dataclasses.fields(TrainingConfig)}
            bad = set(doc["training"]) - tnames
            if bad:
                raise ValueError(f"unknown training keys: {sorted(bad)}")
            doc["training"] = TrainingConfig(**doc["training"])
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})


# split & clustering ------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def role(self, series_id: str) -> str | None:
        for name in ("train", "val", "test"):
            if series_id in getattr(self, name):
                return name
        return None


def split_series(series: Sequence[RunToFailureSeries], plan: ExperimentPlan) -> Split:
    """Seeded series-level split, done separately for failure and normal series."""
    rng = np.random.default_rng(plan.seed)
    parts = {"train": [], "val": [], "test": []}
    for is_failure in (True, False):
        ids = sorted(s.series_id for s in series if s.is_failure == is_failure)
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n = len(ids)
        n_train = int(round(plan.train_fraction * n))
        n_val = int(round(plan.val_fraction / (plan.val_fraction + plan.test_fraction) * (n - n_train)))
        parts["train"] += ids[:n_train]
        parts["val"] += ids[n_train:n_train + n_val]
        parts["test"] += ids[n_train + n_val:]
    return Split(*(tuple(sorted(parts[k])) for k in ("train", "val", "test")))


def pattern_shape(medoid_values) -> str:
    """``rise-decay`` when the medoid peaks well before its end, else ``rise``."""
    v = np.asarray(medoid_values, dtype=np.float64)
    return "rise-decay" if np.argmax(v) < 0.8 * (v.size - 1) else "rise"


@dataclass
class PatternInfo:
    index: int
    shape: str
    conditions: tuple[str, ...]
    train: list[str]
    val: list[str]
    test: list[str]
    normal_available: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def cluster_values(series: RunToFailureSeries, normalized: bool = True) -> np.ndarray:
    return normalize_min_max(series).values if normalized else series.resistance


def cluster_training(series_by_id: dict, split: Split, plan: ExperimentPlan):
    """Cluster the normalized training failure series; assign val/test ones by nearest medoid."""
    dtw = DtwConfig(plan.dtw_band)
    train_fail = [series_by_id[i] for i in split.train if series_by_id[i].is_failure]
    if len(train_fail) < plan.k:
        raise InsufficientSeries(f"{len(train_fail)} training failure series for K={plan.k}")
    norm = {s.series_id: cluster_values(s, plan.cluster_normalized)
            for s in series_by_id.values() if s.is_failure}
    ids = [s.series_id for s in train_fail]
    matrix = distance_matrix([norm[i] for i in ids], dtw, ids)
    model = cluster_kmedoids(matrix, plan.k, plan.seed, plan.kmedoids_restarts)
    attach_medoids(model, norm)
    members = {c: {"train": [], "val": [], "test": []} for c in range(plan.k)}
    for sid in ids:
        members[model.assignments[sid]]["train"].append(sid)
    for role in ("val", "test"):
        for sid in getattr(split, role):
            if series_by_id[sid].is_failure:
                c, _ = assign_pattern(norm[sid], model, config=dtw)
                members[c][role].append(sid)
    normal_train = [series_by_id[i] for i in split.train if not series_by_id[i].is_failure]
    patterns = []
    for c in range(plan.k):
        conds = tuple(sorted({series_by_id[i].condition_id for i in members[c]["train"]}))
        normal = any(s.condition_id in conds for s in normal_train)
        patterns.append(PatternInfo(c, pattern_shape(model.medoid_series[model.medoid_ids[c]]), conds,
                                    members[c]["train"], members[c]["val"], members[c]["test"], normal))
    return model, patterns, matrix


# features ----------------------------------------------------------------------

@dataclass
class FeatureModel:
    """Per-pattern feature recipe; SOM also carries its trained map and global scale."""

    strategy: str
    shape: str
    window_length: int
    seed: int = 0
    curvefit_starts: int = 8
    som: SomModel | None = None
    scale: tuple[float, float] | None = None

    def transform(self, series: RunToFailureSeries) -> FeatureMatrix:
        W = self.window_length
        if self.strategy == "SOM":
            if self.som is None or self.scale is None:
                raise ModelNotFitted("SOM feature model has not been trained")
            lo, hi = self.scale
            scaled = (series.resistance - lo) / (hi - lo)
            fm = som_featurize(self.som, scaled, W)
            return FeatureMatrix(fm.rows, series.cycles[W - 1:], "SOM", series.series_id, fm.channel_names)
        norm = normalize_min_max(series)
        if self.strategy == "HI":
            return health_indicators(norm, HealthIndicatorConfig(W))
        if self.strategy == "CurveFit":
            return curvefit_featurize(norm, self.shape, W, self.seed, self.curvefit_starts)
        if self.strategy == "Raw":
            return FeatureMatrix(norm.values[W - 1:, None], norm.cycles[W - 1:], "Raw", series.series_id, ("value",))
        raise ValueError(f"unknown strategy {self.strategy!r}")

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "shape": self.shape, "window_length": self.window_length,
                "seed": self.seed, "curvefit_starts": self.curvefit_starts,
                "scale": None if self.scale is None else list(self.scale),
                "som": None if self.som is None else json.loads(self.som.to_json())}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureModel":
        som = None if d.get("som") is None else SomModel.from_json(json.dumps(d["som"]))
        return cls(d["strategy"], d["shape"], d["window_length"], d.get("seed", 0),
                   d.get("curvefit_starts", 8), som, None if d.get("scale") is None else tuple(d["scale"]))


def global_scale(series: Sequence[RunToFailureSeries]) -> tuple[float, float]:
    lo = min(float(s.resistance.min()) for s in series)
    hi = max(float(s.resistance.max()) for s in series)
    return lo, hi


def fit_feature_model(strategy: str, pattern: PatternInfo, series_by_id: dict, split: Split,
                      plan: ExperimentPlan) -> FeatureModel:
    fm = FeatureModel(strategy, pattern.shape, plan.window_length, plan.seed, plan.curvefit_starts)
    if strategy != "SOM":
        return fm
    normals = [series_by_id[i] for i in split.train
               if not series_by_id[i].is_failure and series_by_id[i].condition_id in pattern.conditions]
    if not normals:
        raise InsufficientSeries("no normal series share this pattern's operating conditions")
    fm.scale = global_scale(normals + [series_by_id[i] for i in pattern.train])
    lo, hi = fm.scale
    W = plan.window_length
    windows = np.concatenate([trailing_windows((s.resistance - lo) / (hi - lo), W)[::plan.som_stride]
                              for s in normals])
    rows, cols = plan.som_grid
    init = init_som(W, rows, cols, plan.seed, data=windows, epochs=plan.som_epochs)
    fm.som = som_train(windows, init)
    return fm


# training cells ------------------------------------------------------------------

@dataclass
class CellResult:
    pattern: int
    strategy: str
    network: str
    status: str                       # ok | untrained | skipped | failed
    rmse: float | None = None
    baseline_rmse: float | None = None
    per_series_rmse: dict[str, float] = field(default_factory=dict)
    best_epoch: int | None = None
    epochs_run: int = 0
    n_train_windows: int = 0
    n_test_windows: int = 0
    message: str = ""
    model: Network | None = field(default=None, repr=False)
    predictions: list[tuple[str, int, float, float]] = field(default_factory=list, repr=False)

    @property
    def cell_id(self) -> str:
        return f"pattern{self.pattern + 1}-{self.strategy}-{self.network}"

    def to_dict(self) -> dict:
        return {"cell": self.cell_id, "pattern": self.pattern, "strategy": self.strategy,
                "network": self.network, "status": self.status, "rmse": self.rmse,
                "baseline_rmse": self.baseline_rmse,
                "per_series_rmse": dict(sorted(self.per_series_rmse.items())),
                "best_epoch": self.best_epoch, "epochs_run": self.epochs_run,
                "n_train_windows": self.n_train_windows, "n_test_windows": self.n_test_windows,
                "message": self.message}

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        return cls(d["pattern"], d["strategy"], d["network"], d["status"], d["rmse"], d["baseline_rmse"],
                   dict(d.get("per_series_rmse", {})), d.get("best_epoch"), d.get("epochs_run", 0),
                   d.get("n_train_windows", 0), d.get("n_test_windows", 0), d.get("message", ""))


def _labels(s: RunToFailureSeries, cap: float):
    if s.knee_cycle is None:
        raise ValueError(f"failure series {s.series_id!r} has no knee cycle")
    if s.cycles[0] != 1 or s.cycles[-1] != len(s):
        raise ValueError(f"series {s.series_id!r} must be logged on cycles 1..N for RUL labels")
    return piecewise_rul_labels(len(s), s.knee_cycle, cap)


def _windows(feats: dict, series_by_id: dict, ids, plan: ExperimentPlan, stride: int):
    X, y, meta = [], [], []
    for sid in ids:
        f = feats[sid]
        if len(f) < plan.sequence_length:
            continue
        xs, ys, ends = window_arrays(f, _labels(series_by_id[sid], plan.rul_cap), plan.sequence_length, stride)
        X.append(xs)
        y.append(ys)
        meta += [(sid, int(e)) for e in ends]
    if not X:
        return np.zeros((0, plan.sequence_length, 1)), np.zeros(0), meta
    return np.concatenate(X), np.concatenate(y), meta


def train_pattern_model(plan: ExperimentPlan, pattern: PatternInfo, strategy: str, network: str,
                        series_by_id: dict, feats: dict) -> CellResult:
    """Train one (pattern, strategy, network) cell and evaluate it on the test series."""
    cell = CellResult(pattern.index, strategy, network, "failed")
    if len(pattern.train) < 3:
        raise InsufficientSeries(f"pattern {pattern.index + 1} has {len(pattern.train)} training series; need 3")
    Xtr, ytr, _ = _windows(feats, series_by_id, pattern.train, plan, plan.train_stride)
    Xva, yva, _ = _windows(feats, series_by_id, pattern.val, plan, plan.val_stride)
    Xte, yte, meta = _windows(feats, series_by_id, pattern.test, plan, plan.eval_stride)
    Xfull, yfull, _ = _windows(feats, series_by_id, pattern.train, plan, plan.eval_stride)
    if Xtr.shape[0] == 0:
        raise TooShort("no training series in this pattern is long enough to window")
    channels = Xtr.shape[2]
    net = build_network(network, plan.sequence_length, channels, plan.training.seed)
    cap = float(plan.rul_cap)
    if Xva.shape[0] == 0:
        Xva, yva = None, None
    else:
        yva = yva / cap
    result = train_network(net, Xtr, ytr / cap, plan.training, Xva, yva)
    cell.status = "ok" if result.trained else "untrained"
    cell.best_epoch = result.best_epoch
    cell.epochs_run = len(result.train_loss)
    cell.n_train_windows, cell.n_test_windows = int(Xtr.shape[0]), int(Xte.shape[0])
    cell.model = net
    if Xte.shape[0] == 0:
        cell.message = "no test series long enough to window"
        return cell
    pred = net.predict(Xte) * cap
    cell.rmse = rmse(pred, yte)
    cell.baseline_rmse = rmse(np.full_like(yte, float(yfull.mean())), yte)
    sids = np.array([m[0] for m in meta])
    for sid in pattern.test:
        mask = sids == sid
        if mask.any():
            cell.per_series_rmse[sid] = rmse(pred[mask], yte[mask])
    cell.predictions = [(m[0], m[1], float(p), float(t)) for m, p, t in zip(meta, pred, yte)]
    return cell


# report ----------------------------------------------------------------------------

@dataclass
class EvalReport:
    plan: dict
    patterns: list[dict]
    cells: list[CellResult]
    cluster_sizes: list[int]
    split: dict
    # wall-clock seconds; kept out of the JSON so identical runs serialize identically
    runtime_seconds: float = 0.0

    def cell(self, pattern: int, strategy: str, network: str) -> CellResult:
        for c in self.cells:
            if (c.pattern, c.strategy, c.network) == (pattern, strategy, network):
                return c
        raise KeyError((pattern, strategy, network))

    def to_dict(self) -> dict:
        return {"plan": self.plan, "rmse_mode": RMSE_MODE, "cluster_sizes": self.cluster_sizes,
                "split": self.split, "patterns": self.patterns,
                "cells": [c.to_dict() for c in sorted(self.cells, key=lambda c: c.cell_id)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        """Rows are strategy x network, columns are patterns; skipped cells are marked."""
        k = len(self.patterns)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "network"] + [f"pattern{i + 1}" for i in range(k)])
        for strategy in self.plan["strategies"]:
            for network in self.plan["networks"]:
                row = [strategy, network]
                for p in range(k):
                    cells = [c for c in self.cells
                             if c.pattern == p and c.network == network
                             and (c.strategy == strategy or self._auto_match(strategy, c))]
                    row.append(_cell_text(cells[0]) if cells else "")
                w.writerow(row)
        return buf.getvalue()

    @staticmethod
    def _auto_match(strategy: str, cell: CellResult) -> bool:
        return strategy == "auto" and cell.message.startswith("auto:")


def _cell_text(c: CellResult) -> str:
    if c.status in ("ok", "untrained"):
        value = "n/a" if c.rmse is None else f"{c.rmse:.2f}"
        return value + ("" if c.status == "ok" else " (untrained)")
    return c.status


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RULFORGE_THREADS", "1")))
    except ValueError:
        return 1


def _resolve_strategy(strategy: str, pattern: PatternInfo, plan: ExperimentPlan) -> tuple[str, str]:
    if strategy != "auto":
        return strategy, ""
    chosen = select_feature_strategy(plan.failure_pattern_known, pattern.normal_available)
    return chosen, f"auto: {chosen}"


def run_experiment(plan: ExperimentPlan, series: Sequence[RunToFailureSeries],
                   out_dir=None) -> EvalReport:
    """Cluster, featurize and train every (pattern x strategy x network) cell.

    Cells that cannot run (no normal data for SOM, too few series) or that
    raise are recorded with a status instead of aborting the experiment.
    Artifacts are written under ``out_dir`` when given.
    """
    started = time.perf_counter()
    series_by_id = {s.series_id: s for s in series}
    if len(series_by_id) != len(series):
        raise ValueError("series ids must be unique")
    split = split_series(series, plan)
    model, patterns, _ = cluster_training(series_by_id, split, plan)
    jobs, cells, feature_models = [], [], {}
    for pattern in patterns:
        for requested in plan.strategies:
            strategy, note = _resolve_strategy(requested, pattern, plan)
            key = (pattern.index, strategy)
            if key not in feature_models:
                try:
                    if strategy == "SOM" and not pattern.normal_available:
                        raise InsufficientSeries("no normal data for this pattern")
                    fmodel = fit_feature_model(strategy, pattern, series_by_id, split, plan)
                    ids = pattern.train + pattern.val + pattern.test
                    feature_models[key] = (fmodel, {sid: fmodel.transform(series_by_id[sid]) for sid in ids})
                except RulError as exc:
                    feature_models[key] = (None, str(exc))
            fmodel, feats = feature_models[key]
            for network in plan.networks:
                if fmodel is None:
                    status = "skipped" if strategy == "SOM" else "failed"
                    cells.append(CellResult(pattern.index, strategy, network, status, message=note or feats))
                else:
                    jobs.append((pattern, strategy, network, feats, note))

    def run(job):
        pattern, strategy, network, feats, note = job
        try:
            cell = train_pattern_model(plan, pattern, strategy, network, series_by_id, feats)
        except RulError as exc:
            cell = CellResult(pattern.index, strategy, network, "failed", message=str(exc))
        if note:
            cell.message = f"{note}; {cell.message}" if cell.message else note
        return cell

    if _threads() > 1 and len(jobs) > 1:
        with concurrent.futures.ThreadPoolExecutor(_threads()) as pool:
            cells += list(pool.map(run, jobs))
    else:
        cells += [run(job) for job in jobs]
    report = EvalReport(
        plan=plan.to_dict(),
        patterns=[p.to_dict() for p in patterns],
        cells=cells,
        cluster_sizes=model.cluster_sizes(),
        split={"train": list(split.train), "val": list(split.val), "test": list(split.test)},
        runtime_seconds=time.perf_counter() - started,
    )
    if out_dir is not None:
        save_artifacts(Path(out_dir), report, model, patterns, feature_models, plan)
    return report


# persistence & online prediction -------------------------------------------------

@dataclass
class Registry:
    """Fitted artifacts needed to estimate RUL for a new series."""

    cluster: ClusterModel
    patterns: dict[int, dict] = field(default_factory=dict)   # pattern -> {feature, network}
    sequence_length: int = 100
    rul_cap: float = DEFAULT_RUL_CAP
    dtw_band: int | None = None
    cluster_normalized: bool = True

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "cluster.json").write_text(self.cluster.to_json(), encoding="utf-8")
        doc = {"sequence_length": self.sequence_length, "rul_cap": self.rul_cap,
               "dtw_band": self.dtw_band, "cluster_normalized": self.cluster_normalized,
               "patterns": {}}
        for p, entry in sorted(self.patterns.items()):
            net_path = directory / f"pattern{p + 1}-network.json"
            entry["network"].save(net_path, {"strategy": entry["feature"].strategy})
            doc["patterns"][str(p)] = {"feature": entry["feature"].to_dict(), "network": net_path.name,
                                       "cell": entry.get("cell", "")}
        path = directory / "registry.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, directory) -> "Registry":
        directory = Path(directory)
        for name in ("registry.json", "cluster.json"):
            if not (directory / name).exists():
                raise FileNotFoundError(str(directory / name))
        doc = json.loads((directory / "registry.json").read_text(encoding="utf-8"))
        cluster = ClusterModel.from_json((directory / "cluster.json").read_text(encoding="utf-8"))
        patterns = {}
        for key, entry in doc["patterns"].items():
            net_path = directory / entry["network"]
            if not net_path.exists():
                raise FileNotFoundError(str(net_path))
            patterns[int(key)] = {"feature": FeatureModel.from_dict(entry["feature"]),
                                  "network": Network.load(net_path), "cell": entry.get("cell", "")}
        return cls(cluster, patterns, doc["sequence_length"], doc["rul_cap"], doc.get("dtw_band"),
                   doc.get("cluster_normalized", True))


@dataclass
class RulEstimate:
    series_id: str
    cycles: np.ndarray
    predicted: np.ndarray
    pattern: int
    strategy: str
    model_id: str
    distance: float


def predict_online(x: RunToFailureSeries, registry: Registry) -> RulEstimate:
    """Normalize, assign to the nearest medoid, featurize and run that pattern's network."""
    if registry is None or not registry.cluster.medoid_series:
        raise ModelNotFitted("registry has no fitted cluster model")
    values = cluster_values(x, registry.cluster_normalized)
    pattern, dist = assign_pattern(values, registry.cluster, config=DtwConfig(registry.dtw_band))
    if pattern not in registry.patterns:
        raise ModelNotFitted(f"no trained model for pattern {pattern + 1}")
    entry = registry.patterns[pattern]
    L = registry.sequence_length
    if len(x) < L:
        raise TooShort(f"series of length {len(x)} shorter than sequence length {L}")
    feats = entry["feature"].transform(x)
    if len(feats) < L:
        raise TooShort(f"{len(feats)} feature rows shorter than sequence length {L}")
    from numpy.lib.stride_tricks import sliding_window_view

    X = np.ascontiguousarray(np.swapaxes(sliding_window_view(feats.rows, L, axis=0), 1, 2))
    pred = entry["network"].predict(X) * registry.rul_cap
    return RulEstimate(x.series_id, feats.cycles[L - 1:], pred, pattern, entry["feature"].strategy,
                       entry.get("cell", ""), dist)


def build_registry(report: EvalReport, cluster: ClusterModel, feature_models: dict,
                   plan: ExperimentPlan) -> Registry:
    """Pick, per pattern, the trained cell with the lowest test RMSE."""
    reg = Registry(cluster, {}, plan.sequence_length, plan.rul_cap, plan.dtw_band, plan.cluster_normalized)
    for p in range(cluster.K):
        ok = [c for c in report.cells if c.pattern == p and c.status == "ok" and c.model is not None]
        if not ok:
            continue
        best = min(ok, key=lambda c: (c.rmse is None, c.rmse or 0.0, c.cell_id))
        reg.patterns[p] = {"feature": feature_models[(p, best.strategy)][0], "network": best.model,
                           "cell": best.cell_id}
    return reg


def write_predictions(path, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "cycle", "predicted_rul", "target_rul"])
        for sid, cycle, p, t in rows:
            w.writerow([sid, cycle, repr(p), repr(t)])
    return path


def write_features(path, feats: dict) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        first = next(iter(feats.values()), None)
        names = list(first.channel_names) if first is not None and first.channel_names else []
        w.writerow(["series_id", "cycle"] + names)
        for sid in sorted(feats):
            f = feats[sid]
            for cyc, row in zip(f.cycles, f.rows):
                w.writerow([sid, int(cyc)] + [repr(float(v)) for v in row])
    return path


def read_features(path) -> dict[str, FeatureMatrix]:
    """Inverse of :func:`write_features`; ``kind`` comes from the file stem suffix."""
    path = Path(path)
    kind = path.stem.rsplit("-", 1)[-1]
    rows: dict[str, tuple[list, list]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for rec in reader:
            cyc, vals = rows.setdefault(rec[0], ([], []))
            cyc.append(int(rec[1]))
            vals.append([float(v) for v in rec[2:]])
    return {sid: FeatureMatrix(np.array(v), np.array(c), kind, sid, tuple(header[2:]))
            for sid, (c, v) in rows.items()}


def save_artifacts(out: Path, report: EvalReport, cluster: ClusterModel, patterns, feature_models,
                   plan: ExperimentPlan) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "runtime.json").write_text(json.dumps({"runtime_seconds": report.runtime_seconds}), encoding="utf-8")
    for (p, strategy), (fmodel, feats) in sorted(feature_models.items()):
        if fmodel is not None:
            write_features(out / f"features-pattern{p + 1}-{strategy}.csv", feats)
    for cell in report.cells:
        if cell.model is None:
            continue
        cdir = out / "cells" / cell.cell_id
        cdir.mkdir(parents=True, exist_ok=True)
        cell.model.save(cdir / "checkpoint.json", {"cell": cell.cell_id, "target_scale": plan.rul_cap})
        write_predictions(cdir / "predictions.csv", cell.predictions)
    build_registry(report, cluster, feature_models, plan).save(out / "registry")
