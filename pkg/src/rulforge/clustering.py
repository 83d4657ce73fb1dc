"""DTW distances and K-medoids clustering of degradation patterns."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numba
import numpy as np

from rulforge.errors import BandInfeasible, EmptySeries, KTooLarge, ModelNotFitted, ParseError

MAX_ITER = 300


@dataclass(frozen=True)
class DtwConfig:
    """``window_band`` is a Sakoe-Chiba radius in cycles; ``None`` means unconstrained."""

    window_band: int | None = None

    def __post_init__(self):
        if self.window_band is not None and self.window_band < 0:
            raise ValueError("window_band must be >= 0")

    def to_dict(self) -> dict:
        return {"window_band": self.window_band, "step_pattern": "symmetric"}


@numba.njit(cache=True)
def _dtw_sq(x, y, band):
    n, m = x.shape[0], y.shape[0]
    inf = np.inf
    acc = np.full((n, m), inf)
    for i in range(n):
        if band < 0:
            j0, j1 = 0, m
        else:
            j0, j1 = max(0, i - band), min(m, i + band + 1)
        for j in range(j0, j1):
            d = x[i] - y[j]
            cost = d * d
            if i == 0 and j == 0:
                acc[i, j] = cost
                continue
            best = inf
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
                best = acc[i - 1, j - 1]
            acc[i, j] = cost + best
    return acc[n - 1, m - 1]


def _prepare(seq, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(getattr(seq, "values", seq), dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size == 0:
        raise EmptySeries(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def dtw_distance(x, y, config: DtwConfig = DtwConfig()) -> float:
    """DTW distance: root of the minimal summed squared difference over warping paths."""
    a = _prepare(x, "x")
    b = _prepare(y, "y")
    band = -1 if config.window_band is None else int(config.window_band)
    if band >= 0 and abs(a.size - b.size) > band:
        raise BandInfeasible(f"band {band} cannot reach endpoint ({a.size}, {b.size})")
    return float(np.sqrt(_dtw_sq(a, b, band)))


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    entries: np.ndarray
    series_ids: tuple[str, ...]
    config: DtwConfig = DtwConfig()

    @property
    def n(self) -> int:
        return len(self.series_ids)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series_id", *self.series_ids])
            for sid, row in zip(self.series_ids, self.entries.tolist()):
                w.writerow([sid, *map(repr, row)])
        path.with_suffix(".json").write_text(json.dumps(self.config.to_dict(), indent=2) + "\n")

    @classmethod
    def from_csv(cls, path) -> "DistanceMatrix":
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        ids = tuple(rows[0][1:])
        if [r[0] for r in rows[1:]] != list(ids):
            raise ParseError(f"{path}: row and column ids differ")
        entries = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        band = None
        side = path.with_suffix(".json")
        if side.exists():
            band = json.loads(side.read_text()).get("window_band")
        return cls(entries, ids, DtwConfig(band))


def distance_matrix(series: Sequence, config: DtwConfig = DtwConfig(), ids: Sequence[str] | None = None) -> DistanceMatrix:
    if len(series) < 2:
        raise ValueError("distance matrix needs at least 2 series")
    if ids is None:
        ids = [getattr(s, "series_id", str(i)) for i, s in enumerate(series)]
    arrays = [_prepare(s, f"series {sid!r}") for s, sid in zip(series, ids)]
    n = len(arrays)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            try:
                d = dtw_distance(arrays[i], arrays[j], config)
            except (BandInfeasible, EmptySeries) as exc:
                raise type(exc)(f"pair ({ids[i]!r}, {ids[j]!r}): {exc}") from None
            D[i, j] = D[j, i] = d
    return DistanceMatrix(D, tuple(ids), config)


@dataclass
class ClusterModel:
    K: int
    medoid_ids: list[str]
    assignments: dict[str, int]
    inertia: float
    seed: int | None = None
    medoid_series: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def cluster_sizes(self) -> list[int]:
        sizes = [0] * self.K
        for c in self.assignments.values():
            sizes[c] += 1
        return sizes

    def to_json(self) -> str:
        doc = {"K": self.K, "medoid_ids": self.medoid_ids, "assignments": self.assignments,
               "inertia": self.inertia, "seed": self.seed}
        if self.medoid_series:
            doc["medoid_series"] = {k: v.tolist() for k, v in self.medoid_series.items()}
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ClusterModel":
        doc = json.loads(text)
        med = {k: np.asarray(v, dtype=np.float64) for k, v in doc.get("medoid_series", {}).items()}
        return cls(int(doc["K"]), list(doc["medoid_ids"]),
                   {k: int(v) for k, v in doc["assignments"].items()},
                   float(doc["inertia"]), doc.get("seed"), med)


def _assign(D: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    # argmin picks the lowest cluster index on ties; medoids always own themselves
    labels = np.argmin(D[:, medoids], axis=1)
    labels[medoids] = np.arange(medoids.size)
    return labels


def _inertia(D, medoids, labels) -> float:
    return float(D[np.arange(D.shape[0]), medoids[labels]].sum())


def _init_medoids(D: np.ndarray, K: int, rng) -> np.ndarray:
    """k-medoids++ seeding: spread initial medoids proportionally to squared distance."""
    n = D.shape[0]
    chosen = [int(rng.integers(n))]
    for _ in range(1, K):
        d = D[:, chosen].min(axis=1) ** 2
        d[chosen] = 0.0
        total = d.sum()
        if total <= 0:
            rest = np.setdiff1d(np.arange(n), chosen)
            chosen.append(int(rng.choice(rest)))
        else:
            chosen.append(int(rng.choice(n, p=d / total)))
    return np.array(chosen)


def _kmedoids_once(D: np.ndarray, K: int, rng, history: list | None = None):
    medoids = _init_medoids(D, K, rng)
    labels = _assign(D, medoids)
    for _ in range(MAX_ITER):
        new = medoids.copy()
        for c in range(K):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                # re-seed with the point farthest from its current medoid
                far = np.argsort(-D[np.arange(D.shape[0]), medoids[labels]], kind="stable")
                new[c] = next(int(p) for p in far if p not in new)
                continue
            within = D[np.ix_(members, members)].sum(axis=1)
            # keep the current medoid on ties so the iteration cannot cycle
            cur = np.flatnonzero(members == medoids[c])
            best = int(np.argmin(within))
            if cur.size and within[cur[0]] <= within[best]:
                best = int(cur[0])
            new[c] = members[best]
        new_labels = _assign(D, new)
        if history is not None:
            history.append(_inertia(D, new, new_labels))
        if np.array_equal(new, medoids) and np.array_equal(new_labels, labels):
            break
        medoids, labels = new, new_labels
    return medoids, labels, _inertia(D, medoids, labels)


def cluster_kmedoids(matrix: DistanceMatrix, K: int = 2, seed: int = 0, n_restarts: int = 10) -> ClusterModel:
    """Voronoi-iteration K-medoids over a precomputed DTW matrix.

    Clusters are returned ordered by decreasing size (ties: earlier medoid
    first), so cluster 0 is the dominant pattern.
    """
    D = np.asarray(matrix.entries, dtype=np.float64)
    n = D.shape[0]
    if K < 1 or K > n:
        raise KTooLarge(f"K={K} must lie in [1, {n}]")
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    streams = np.random.SeedSequence(seed).spawn(n_restarts)
    best = None
    for r, ss in enumerate(streams):
        med, lab, inertia = _kmedoids_once(D, K, np.random.default_rng(ss))
        if best is None or inertia < best[2]:
            best = (med, lab, inertia)
    medoids, labels, inertia = best
    sizes = np.bincount(labels, minlength=K)
    order = sorted(range(K), key=lambda c: (-sizes[c], medoids[c]))
    remap = np.empty(K, dtype=int)
    remap[order] = np.arange(K)
    ids = matrix.series_ids
    return ClusterModel(
        K=K,
        medoid_ids=[ids[medoids[c]] for c in order],
        assignments={ids[i]: int(remap[labels[i]]) for i in range(n)},
        inertia=inertia,
        seed=seed,
    )


def attach_medoids(model: ClusterModel, series: Mapping[str, object]) -> ClusterModel:
    """Store the medoid value sequences needed for online assignment."""
    model.medoid_series = {mid: _prepare(series[mid], mid).copy() for mid in model.medoid_ids}
    return model


def assign_pattern(x, model: ClusterModel, medoid_series: Mapping[str, object] | None = None,
                   config: DtwConfig = DtwConfig()) -> tuple[int, float]:
    """Nearest medoid under DTW; ties go to the lower cluster index."""
    store = medoid_series if medoid_series is not None else model.medoid_series
    if model is None or not model.medoid_ids or not store:
        raise ModelNotFitted("cluster model has no medoid series")
    best_c, best_d = -1, np.inf
    for c, mid in enumerate(model.medoid_ids):
        if mid not in store:
            raise ModelNotFitted(f"medoid series {mid!r} missing")
        d = dtw_distance(x, store[mid], config)
        if d < best_d:
            best_c, best_d = c, d
    return best_c, float(best_d)


def silhouette_sweep(matrix: DistanceMatrix, k_values: Sequence[int], seed: int = 0,
                     n_restarts: int = 10) -> dict[int, float]:
    """Mean silhouette per K, for inspection only; the pipeline never auto-selects K."""
    from sklearn.metrics import silhouette_score

    out = {}
    for k in k_values:
        if k < 2 or k >= matrix.n:
            continue
        model = cluster_kmedoids(matrix, k, seed, n_restarts)
        labels = [model.assignments[s] for s in matrix.series_ids]
        out[k] = float(silhouette_score(matrix.entries, labels, metric="precomputed"))
    return out
