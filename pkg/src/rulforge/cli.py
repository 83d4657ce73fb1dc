"""Command-line interface: generate, cluster, featurize, train, evaluate, predict.

Each stage reads only what earlier stages persisted in the work directory
(``--out``), so stages can be rerun independently.

Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 missing artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from rulforge import __version__
from rulforge.clustering import ClusterModel
from rulforge.data import (
    attach_knees,
    piecewise_rul_labels,
    read_dataset,
    read_knees,
    write_dataset,
    write_knees,
    write_manifest,
)
from rulforge.errors import ParseError, RulError
from rulforge.nn.network import Network
from rulforge.pipeline import (
    CellResult,
    EvalReport,
    ExperimentPlan,
    FeatureModel,
    PatternInfo,
    Registry,
    Split,
    cluster_training,
    fit_feature_model,
    predict_online,
    read_features,
    split_series,
    train_pattern_model,
    write_features,
    write_predictions,
)
from rulforge.synth import PATTERNS, SynthConfig, generate_synthetic

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3
DATASET_FILE, KNEES_FILE, MANIFEST_FILE = "dataset.csv", "knees.csv", "manifest.json"

log = logging.getLogger("rulforge")


class MissingArtifact(Exception):
    def __init__(self, path):
        super().__init__(f"missing artifact: {path}")
        self.path = Path(path)


class ConfigError(Exception):
    pass


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(path)
    return path


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path):
    return json.loads(_need(path).read_text(encoding="utf-8"))


# dataset -------------------------------------------------------------------------

def _dataset_paths(data: Path) -> tuple[Path, Path]:
    if data.is_dir():
        return data / DATASET_FILE, data / KNEES_FILE
    return data, data.with_name(KNEES_FILE)


def load_series(data):
    csv_path, knee_path = _dataset_paths(Path(data))
    series = read_dataset(_need(csv_path))
    if knee_path.exists():
        series = attach_knees(series, read_knees(knee_path))
    return series


def cmd_generate(args) -> int:
    if args.n < 0:
        raise ConfigError("--n must be >= 0")
    cfg = SynthConfig(pattern=args.pattern, seed=args.seed)
    series = generate_synthetic(cfg, args.n)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(series, out / DATASET_FILE)
    write_knees({s.series_id: s.knee_cycle for s in series if s.knee_cycle is not None}, out / KNEES_FILE)
    write_manifest(out / MANIFEST_FILE, f"synthetic-{args.pattern}", len(series), args.seed, cfg.to_dict())
    print(f"wrote {len(series)} series to {out}")
    return EXIT_OK


# work-directory state --------------------------------------------------------------

def _plan_overrides(args, plan: ExperimentPlan | None) -> ExperimentPlan:
    base = plan.to_dict() if plan is not None else ExperimentPlan().to_dict()
    training = dict(base["training"])
    for flag, key in (("seed", "seed"), ("k", "k"), ("sequence_length", "sequence_length"),
                      ("window_length", "window_length")):
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    if getattr(args, "seed", None) is not None:
        training["seed"] = args.seed
    for flag in ("epochs", "learning_rate", "batch_size", "patience", "samples_per_epoch"):
        value = getattr(args, flag, None)
        if value is not None:
            training[flag] = value
    base["training"] = training
    strategy = getattr(args, "strategy", None)
    if strategy:
        base["strategies"] = [strategy]
    network = getattr(args, "network", None)
    if network:
        base["networks"] = [network]
    if getattr(args, "raw", False):
        base["cluster_normalized"] = False
    if getattr(args, "data", None):
        base["dataset"] = str(Path(args.data).resolve())
    try:
        return ExperimentPlan.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _load_plan(work: Path) -> ExperimentPlan:
    return ExperimentPlan.from_dict(_read_json(work / "plan.json"))


def _load_patterns(work: Path) -> list[PatternInfo]:
    return [PatternInfo(**{**p, "conditions": tuple(p["conditions"])})
            for p in _read_json(work / "patterns.json")]


def _load_split(work: Path) -> Split:
    d = _read_json(work / "split.json")
    return Split(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]))


def _series_for(plan: ExperimentPlan, args):
    data = getattr(args, "data", None) or plan.dataset
    if not data:
        raise ConfigError("no dataset: pass --data")
    return {s.series_id: s for s in load_series(data)}


def cmd_cluster(args) -> int:
    work = Path(args.out)
    plan = _plan_overrides(args, None)
    series_by_id = _series_for(plan, args)
    split = split_series(list(series_by_id.values()), plan)
    model, patterns, matrix = cluster_training(series_by_id, split, plan)
    work.mkdir(parents=True, exist_ok=True)
    _write_json(work / "plan.json", plan.to_dict())
    _write_json(work / "split.json", {"train": list(split.train), "val": list(split.val),
                                      "test": list(split.test)})
    (work / "cluster.json").write_text(model.to_json() + "\n", encoding="utf-8")
    matrix.to_csv(work / "distances.csv")
    _write_json(work / "patterns.json", [p.to_dict() for p in patterns])
    for p in patterns:
        print(f"pattern{p.index + 1}: {len(p.train)} train, {len(p.val)} val, {len(p.test)} test, "
              f"shape {p.shape}, medoid {model.medoid_ids[p.index]}")
    return EXIT_OK


def _resolve(strategy: str, pattern: PatternInfo, plan: ExperimentPlan) -> str:
    from rulforge.features import select_feature_strategy

    if strategy == "auto":
        return select_feature_strategy(plan.failure_pattern_known, pattern.normal_available)
    return strategy


def cmd_featurize(args) -> int:
    work = Path(args.out)
    plan = _plan_overrides(args, _load_plan(work))
    patterns, split = _load_patterns(work), _load_split(work)
    series_by_id = _series_for(plan, args)
    _write_json(work / "plan.json", plan.to_dict())
    fdir = work / "features"
    for pattern in patterns:
        for requested in plan.strategies:
            strategy = _resolve(requested, pattern, plan)
            stem = f"pattern{pattern.index + 1}-{strategy}"
            if strategy == "SOM" and not pattern.normal_available:
                print(f"{stem}: skipped (no normal data for this pattern)")
                continue
            try:
                fmodel = fit_feature_model(strategy, pattern, series_by_id, split, plan)
                feats = {sid: fmodel.transform(series_by_id[sid])
                         for sid in pattern.train + pattern.val + pattern.test}
            except RulError as exc:
                print(f"{stem}: failed ({exc})")
                continue
            _write_json(fdir / f"{stem}.json", fmodel.to_dict())
            write_features(fdir / f"{stem}.csv", feats)
            print(f"{stem}: {len(feats)} series")
    return EXIT_OK


def _cell_dir(work: Path, cell_id: str) -> Path:
    return work / "cells" / cell_id


def cmd_train(args) -> int:
    work = Path(args.out)
    plan = _plan_overrides(args, _load_plan(work))
    patterns = _load_patterns(work)
    series_by_id = _series_for(plan, args)
    _write_json(work / "plan.json", plan.to_dict())
    for pattern in patterns:
        for requested in plan.strategies:
            strategy = _resolve(requested, pattern, plan)
            stem = f"pattern{pattern.index + 1}-{strategy}"
            if strategy == "SOM" and not pattern.normal_available:
                continue
            feats = read_features(_need(work / "features" / f"{stem}.csv"))
            for network in plan.networks:
                try:
                    cell = train_pattern_model(plan, pattern, strategy, network, series_by_id, feats)
                except RulError as exc:
                    cell = CellResult(pattern.index, strategy, network, "failed", message=str(exc))
                cdir = _cell_dir(work, cell.cell_id)
                cdir.mkdir(parents=True, exist_ok=True)
                if cell.model is not None:
                    cell.model.save(cdir / "checkpoint.json", {"cell": cell.cell_id, "target_scale": plan.rul_cap})
                    write_predictions(cdir / "predictions.csv", cell.predictions)
                _write_json(cdir / "cell.json", cell.to_dict())
                rm = "n/a" if cell.rmse is None else f"{cell.rmse:.3f}"
                print(f"{cell.cell_id}: {cell.status} rmse={rm}")
    _save_registry(work, plan, patterns)
    return EXIT_OK


def _load_cells(work: Path) -> list[CellResult]:
    cdir = work / "cells"
    if not cdir.exists():
        raise MissingArtifact(cdir)
    cells = []
    for path in sorted(cdir.glob("*/cell.json")):
        cell = CellResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
        ckpt = path.parent / "checkpoint.json"
        if ckpt.exists():
            cell.model = Network.load(ckpt)
        cells.append(cell)
    return cells


def _save_registry(work: Path, plan: ExperimentPlan, patterns) -> None:
    cluster = ClusterModel.from_json(_need(work / "cluster.json").read_text(encoding="utf-8"))
    reg = Registry(cluster, {}, plan.sequence_length, plan.rul_cap, plan.dtw_band, plan.cluster_normalized)
    cells = _load_cells(work)
    for p in patterns:
        ok = [c for c in cells if c.pattern == p.index and c.status == "ok" and c.model is not None]
        if not ok:
            continue
        best = min(ok, key=lambda c: (c.rmse is None, c.rmse or 0.0, c.cell_id))
        fmodel = FeatureModel.from_dict(_read_json(work / "features" / f"pattern{p.index + 1}-{best.strategy}.json"))
        reg.patterns[p.index] = {"feature": fmodel, "network": best.model, "cell": best.cell_id}
    reg.save(work / "registry")


def cmd_evaluate(args) -> int:
    work = Path(args.out)
    plan = _load_plan(work)
    patterns = _load_patterns(work)
    cluster = ClusterModel.from_json(_need(work / "cluster.json").read_text(encoding="utf-8"))
    split = _read_json(work / "split.json")
    cells = _load_cells(work)
    planned = {(p.index, _resolve(s, p, plan), n) for p in patterns for s in plan.strategies for n in plan.networks}
    have = {(c.pattern, c.strategy, c.network) for c in cells}
    for pattern, strategy, network in sorted(planned - have):
        status = "skipped" if strategy == "SOM" else "missing"
        cells.append(CellResult(pattern, strategy, network, status))
    report = EvalReport(plan.to_dict(), [p.to_dict() for p in patterns], cells,
                        cluster.cluster_sizes(), split)
    (work / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    (work / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_predict(args) -> int:
    work = Path(args.out)
    reg = Registry.load(_need(work / "registry"))
    series = load_series(args.data)
    if args.series_id:
        series = [s for s in series if s.series_id in set(args.series_id)]
        if not series:
            raise ConfigError(f"--series-id matched no series in {args.data}")
    rows = []
    for s in series:
        est = predict_online(s, reg)
        print(f"{s.series_id}: pattern{est.pattern + 1} distance={est.distance:.6g} "
              f"strategy={est.strategy} model={est.model_id}")
        labels = None
        if s.knee_cycle is not None:
            labels = piecewise_rul_labels(len(s), s.knee_cycle, reg.rul_cap)
        for cyc, p in zip(est.cycles, est.predicted):
            t = float("nan") if labels is None else labels.at(int(cyc))
            rows.append((s.series_id, int(cyc), float(p), t))
    target = Path(args.predictions) if args.predictions else work / "predictions.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(target, rows)
    print(f"wrote {len(rows)} predictions to {target}")
    return EXIT_OK


# argument parsing ------------------------------------------------------------------

def _add_plan_flags(p, strategy=False, network=False, training=False):
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset directory or CSV (defaults to the one recorded by 'cluster')")
    if strategy:
        p.add_argument("--strategy", choices=["hi", "som", "curvefit", "raw", "auto"])
        p.add_argument("--window-length", type=int, dest="window_length")
    if network:
        p.add_argument("--network", choices=["rulnet", "cnn", "lstm"])
    if training:
        p.add_argument("--epochs", type=int)
        p.add_argument("--sequence-length", type=int, dest="sequence_length")
        p.add_argument("--learning-rate", type=float, dest="learning_rate")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--patience", type=int)
        p.add_argument("--samples-per-epoch", type=int, dest="samples_per_epoch")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rulforge {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic run-to-failure dataset")
    g.add_argument("--pattern", choices=list(PATTERNS), default="mixed")
    g.add_argument("--n", type=int, default=60)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("cluster", help="split the dataset and cluster training failure series")
    c.add_argument("--out", required=True)
    c.add_argument("--k", type=int)
    c.add_argument("--raw", action="store_true", help="cluster raw resistance instead of min-max normalized")
    _add_plan_flags(c, strategy=True, network=True, training=True)
    c.set_defaults(func=cmd_cluster)

    f = sub.add_parser("featurize", help="fit feature models and write per-pattern features")
    f.add_argument("--out", required=True)
    _add_plan_flags(f, strategy=True)
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", help="train one network per pattern and feature strategy")
    t.add_argument("--out", required=True)
    _add_plan_flags(t, strategy=True, network=True, training=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="assemble the RMSE report and print it as CSV")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="estimate RUL for new series with the trained registry")
    p.add_argument("--out", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--series-id", action="append", dest="series_id")
    p.add_argument("--predictions", help="output CSV (default: <out>/predictions.csv)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MissingArtifact as exc:
        print(f"error: {exc} (run the upstream stage first)", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"error: missing artifact: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RulError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
