import dataclasses
import json

import numpy as np
import pytest

from rulforge.errors import LengthMismatch, ModelNotFitted, TooShort
from rulforge.nn import TrainingConfig
from rulforge.pipeline import (
    CellResult,
    ExperimentPlan,
    Registry,
    canonical_strategy,
    predict_online,
    read_features,
    rmse,
    run_experiment,
    split_series,
)
from rulforge.synth import SynthConfig, generate_synthetic


def small_series(seed=0, n=40):
    cfg = SynthConfig(pattern="mixed", mix=(0.6, 0.25, 0.15), length_range=(120, 170), seed=seed)
    return generate_synthetic(cfg, n)


def small_plan(**overrides):
    base = dict(
        strategies=("HI", "SOM", "CurveFit", "Raw"), networks=("CNN",), sequence_length=20, window_length=10,
        training=TrainingConfig(epochs=2, batch_size=32, samples_per_epoch=64, learning_rate=1e-3),
        train_stride=10, eval_stride=5, som_grid=(4, 4), som_epochs=2, curvefit_starts=2,
        kmedoids_restarts=2,
    )
    base.update(overrides)
    return ExperimentPlan(**base)


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    series = small_series()
    return series, run_experiment(small_plan(), series, out), out


def test_rmse_examples():
    assert rmse([0.0, 0.0], [1.0, -1.0]) == 1.0
    assert rmse([2.0, 3.0], [2.0, 3.0]) == 0.0
    with pytest.raises(LengthMismatch):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(LengthMismatch):
        rmse([], [])


def test_plan_validation_and_round_trip():
    with pytest.raises(ValueError):
        ExperimentPlan(train_fraction=0.8)
    with pytest.raises(ValueError):
        ExperimentPlan(strategies=("magic",))
    with pytest.raises(ValueError):
        ExperimentPlan(train_stride=0)
    with pytest.raises(ValueError):
        ExperimentPlan.from_dict({"nonsense": 1})
    plan = small_plan(dtw_band=5)
    assert ExperimentPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan
    assert canonical_strategy("curvefit") == "CurveFit"


def test_split_is_disjoint_and_stratified():
    series = small_series()
    split = split_series(series, small_plan())
    parts = [set(split.train), set(split.val), set(split.test)]
    assert sum(map(len, parts)) == len(series)
    assert set.union(*parts) == {s.series_id for s in series}
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    normals = {s.series_id for s in series if not s.is_failure}
    assert normals & parts[0] and normals - parts[0]
    assert split == split_series(series, small_plan())


def test_report_is_complete(experiment):
    _, report, _ = experiment
    k = len(report.patterns)
    assert k == 2 and sum(report.cluster_sizes) == len(report.patterns[0]["train"]) + len(report.patterns[1]["train"])
    ids = {c.cell_id for c in report.cells}
    assert len(ids) == len(report.cells) == k * 4
    for c in report.cells:
        assert c.status in ("ok", "skipped"), c.message
        if c.status == "ok":
            assert c.rmse is not None and c.rmse >= 0 and c.n_test_windows > 0
            assert c.rmse == pytest.approx(rmse([p for *_, p, _ in c.predictions], [t for *_, t in c.predictions]))


def test_som_skipped_without_normal_data(experiment):
    series, report, _ = experiment
    by_id = {s.series_id: s for s in series}
    for p in report.patterns:
        # only Pattern 1 shares operating conditions with the normal series
        kinds = {by_id[i].pattern for i in p["train"]}
        cell = report.cell(p["index"], "SOM", "CNN")
        if kinds == {"pattern2"}:
            assert not p["normal_available"] and cell.status == "skipped"
        else:
            assert p["normal_available"] and cell.status == "ok"


def test_pattern_shapes_follow_medoids(experiment):
    series, report, _ = experiment
    by_id = {s.series_id: s for s in series}
    for p in report.patterns:
        kinds = {by_id[i].pattern for i in p["train"]}
        assert p["shape"] == ("rise-decay" if kinds == {"pattern2"} else "rise")


def test_csv_layout(experiment):
    _, report, out = experiment
    lines = report.to_csv().splitlines()
    assert lines[0] == "strategy,network,pattern1,pattern2"
    assert [ln.split(",")[:2] for ln in lines[1:]] == [[s, "CNN"] for s in ("HI", "SOM", "CurveFit", "Raw")]
    assert "skipped" in report.to_csv()
    assert (out / "report.csv").read_text() == report.to_csv()


def test_artifacts_written(experiment):
    _, report, out = experiment
    assert json.loads((out / "report.json").read_text())["rmse_mode"]
    for c in report.cells:
        if c.status == "ok":
            assert (out / "cells" / c.cell_id / "checkpoint.json").exists()
            assert (out / "cells" / c.cell_id / "predictions.csv").exists()
    feats = read_features(out / "features-pattern1-HI.csv")
    some = next(iter(feats.values()))
    assert some.rows.shape[1] == 7 and some.kind == "HI"
    cell = CellResult.from_dict(json.loads(report.to_json())["cells"][0])
    assert cell.cell_id == json.loads(report.to_json())["cells"][0]["cell"]


def test_runs_are_byte_identical(experiment):
    series, report, _ = experiment
    again = run_experiment(small_plan(), series)
    assert again.to_json() == report.to_json()
    assert "runtime" not in report.to_json()
    assert report.runtime_seconds > 0


def test_zero_epochs_gives_untrained_cells():
    series = small_series(seed=2, n=30)
    plan = small_plan(strategies=("Raw",), training=TrainingConfig(epochs=0))
    report = run_experiment(plan, series)
    assert {c.status for c in report.cells} == {"untrained"}
    assert "(untrained)" in report.to_csv()


def test_predict_online(experiment):
    series, report, out = experiment
    registry = Registry.load(out / "registry")
    by_id = {s.series_id: s for s in series}
    medoid = registry.cluster.medoid_ids[0]
    est = predict_online(by_id[medoid], registry)
    assert est.pattern == 0 and est.distance == 0.0
    assert est.predicted.shape == (len(by_id[medoid]) - 10 + 1 - 20 + 1,)
    assert est.cycles[0] == 10 + 20 - 1
    p2 = next(p for p in report.patterns if p["shape"] == "rise-decay")
    test_p2 = [i for i in p2["test"] + p2["val"] if by_id[i].pattern == "pattern2"]
    assert predict_online(by_id[test_p2[0]], registry).pattern == p2["index"]


def test_predict_online_errors(experiment):
    series, _, out = experiment
    registry = Registry.load(out / "registry")
    short = series[0]
    short = dataclasses.replace(short, cycles=short.cycles[:25], resistance=short.resistance[:25])
    with pytest.raises(TooShort):
        predict_online(short, registry)
    empty = Registry(dataclasses.replace(registry.cluster, medoid_series={}))
    with pytest.raises(ModelNotFitted):
        predict_online(series[0], empty)
    with pytest.raises(FileNotFoundError):
        Registry.load(out / "nowhere")


def test_registry_round_trip(experiment, tmp_path):
    series, _, out = experiment
    registry = Registry.load(out / "registry")
    registry.save(tmp_path / "copy")
    back = Registry.load(tmp_path / "copy")
    a, b = predict_online(series[0], registry), predict_online(series[0], back)
    np.testing.assert_array_equal(a.predicted, b.predicted)
    assert a.model_id == b.model_id
