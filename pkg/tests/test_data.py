import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rulforge.clustering import dtw_distance
from rulforge.data import (
    FeatureMatrix,
    RunToFailureSeries,
    attach_knees,
    normalize_min_max,
    piecewise_rul_labels,
    read_dataset,
    read_knees,
    window_arrays,
    window_count,
    window_series,
    write_dataset,
    write_knees,
    write_manifest,
)
from rulforge.errors import (
    ConstantSeries,
    InvalidKnee,
    NonMonotoneCycles,
    NonPositiveResistance,
    ParseError,
    TooShort,
)
from rulforge.synth import SynthConfig, generate_synthetic, generate_synthetic_with_truth, knees_of


def make(values, sid="s", **kw):
    values = np.asarray(values, dtype=float)
    return RunToFailureSeries(sid, np.arange(1, values.size + 1), values, **kw)


# series validation -----------------------------------------------------------

def test_series_rejects_short_nonpositive_and_unordered():
    with pytest.raises(TooShort):
        make([1.0])
    with pytest.raises(NonPositiveResistance):
        make([1.0, 0.0])
    with pytest.raises(ValueError):
        make([1.0, np.nan])
    with pytest.raises(NonMonotoneCycles):
        RunToFailureSeries("s", [1, 3, 2], [1.0, 2.0, 3.0])


# normalization -----------------------------------------------------------------

def test_normalize_endpoints():
    n = normalize_min_max(make([1, 3, 2]))
    assert n.values.tolist() == [0.0, 1.0, 0.5]
    assert (n.min_val, n.max_val) == (1.0, 3.0)


def test_normalize_constant_series():
    with pytest.raises(ConstantSeries):
        normalize_min_max(make([5, 5, 5]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=50).filter(lambda v: max(v) > min(v)))
def test_normalize_round_trip(values):
    s = make(values)
    n = normalize_min_max(s)
    assert np.all((n.values >= 0) & (n.values <= 1))
    np.testing.assert_allclose(n.denormalize(), s.resistance, rtol=1e-12, atol=0)


# labels ---------------------------------------------------------------------------

def test_labels_pure_linear():
    assert piecewise_rul_labels(5, 1, 4).targets.tolist() == [4, 3, 2, 1, 0]


def test_labels_with_knee():
    assert piecewise_rul_labels(6, 4, 10).targets.tolist() == [10, 10, 10, 2, 1, 0]


def test_labels_knee_outside_series():
    with pytest.raises(InvalidKnee):
        piecewise_rul_labels(3, 5, 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 400), st.data())
def test_labels_non_increasing_and_end_at_zero(length, data):
    knee = data.draw(st.integers(1, length))
    cap = data.draw(st.integers(length - knee, length - knee + 300))
    lab = piecewise_rul_labels(length, knee, cap)
    assert np.all(np.diff(lab.targets) <= 0)
    assert lab.targets[-1] == 0
    assert lab.at(knee) == length - knee


# windowing -------------------------------------------------------------------------

def _features(n, channels=2):
    rows = np.arange(n * channels, dtype=float).reshape(n, channels)
    return FeatureMatrix(rows, np.arange(1, n + 1), "custom")


def test_window_exact_fit():
    X, y, ends = window_arrays(_features(100), piecewise_rul_labels(100, 1, 99), 100, 1)
    assert X.shape == (1, 100, 2) and ends.tolist() == [100]


def test_window_ends_and_targets():
    labels = piecewise_rul_labels(102, 1, 101)
    samples = window_series(_features(102), labels, 100, 1)
    assert [s.end_cycle for s in samples] == [100, 101, 102]
    assert [s.target for s in samples] == [2.0, 1.0, 0.0]
    np.testing.assert_array_equal(samples[1].features, _features(102).rows[1:101])


def test_window_too_short():
    with pytest.raises(TooShort):
        window_series(_features(50), piecewise_rul_labels(50, 1, 49), 100, 1)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 7))
def test_window_count_formula(length, seq, stride):
    if length < seq:
        return
    X, _, _ = window_arrays(_features(length, 1), piecewise_rul_labels(length, 1, length), seq, stride)
    assert X.shape[0] == window_count(length, seq, stride) == (length - seq) // stride + 1


# generator ----------------------------------------------------------------------------

def test_pattern1_noise_free_trend_monotone():
    s = generate_synthetic(SynthConfig(pattern="pattern1", seed=3).noise_free(), 1)[0]
    assert np.all(np.diff(s.resistance) >= 0)
    assert 1 <= s.knee_cycle <= len(s)


def test_pattern2_noise_free_interior_peak():
    s = generate_synthetic(SynthConfig(pattern="pattern2", seed=4).noise_free(), 1)[0]
    peak = int(np.argmax(s.resistance))
    assert 0 < peak < len(s) - 1
    assert np.all(np.diff(s.resistance[peak:]) < 0)


def test_normal_series_stay_low():
    cfg = SynthConfig(pattern="normal", seed=5)
    for item in generate_synthetic_with_truth(cfg, 10):
        s = item.series
        assert not s.is_failure and s.knee_cycle is None
        c, amp = item.params["c"], item.params["amp"]
        # a band of a few noise deviations plus the largest fault excursion
        assert np.all(np.abs(s.resistance - c) <= 5 * cfg.noise_std * amp + cfg.spike_scale * amp
                      + cfg.drift_scale * amp)


def test_generator_deterministic():
    a = generate_synthetic(SynthConfig(seed=11), 12)
    b = generate_synthetic(SynthConfig(seed=11), 12)
    assert a == b
    assert generate_synthetic(SynthConfig(seed=12), 12) != a


def test_generator_mixed_counts_and_ids():
    series = generate_synthetic(SynthConfig(seed=1), 20)
    kinds = [s.series_id[:2] for s in series]
    assert kinds.count("p1") == 14 and kinds.count("p2") == 3 and kinds.count("nm") == 3
    assert len({s.series_id for s in series}) == 20


def test_generator_knee_keeps_rul_under_cap():
    cfg = SynthConfig(pattern="pattern1", seed=2, max_rul=80)
    for s in generate_synthetic(cfg, 10):
        assert len(s) - s.knee_cycle <= 80
        piecewise_rul_labels(len(s), s.knee_cycle, 80)


def test_generator_class_separation():
    """Noise-free Pattern 1 vs Pattern 2 normalized trends: every cross-pattern DTW
    distance exceeds every within-pattern one."""
    cfg = SynthConfig(mix=(0.5, 0.5, 0.0), seed=8).noise_free()
    series = generate_synthetic(cfg, 16)
    norm = [normalize_min_max(s).values for s in series]
    pats = [s.pattern for s in series]
    within, across = [], []
    for i in range(len(series)):
        for j in range(i + 1, len(series)):
            d = dtw_distance(norm[i], norm[j])
            (within if pats[i] == pats[j] else across).append(d)
    assert min(across) > max(within)


def test_synth_config_validation_and_dict_round_trip():
    with pytest.raises(ValueError):
        SynthConfig(pattern="pattern3")
    with pytest.raises(ValueError):
        SynthConfig(noise_std=-1)
    with pytest.raises(ValueError):
        SynthConfig(sticking_rate=1.5)
    cfg = SynthConfig(seed=9, noise_std=0.02)
    assert SynthConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"bogus": 1})


def test_fault_injection_spikes():
    base = SynthConfig(pattern="normal", seed=6).noise_free()
    clean = generate_synthetic(base, 1)[0]
    stuck = generate_synthetic(dataclasses.replace(base, sticking_rate=1.0), 1)[0]
    missing = generate_synthetic(dataclasses.replace(base, missing_rate=1.0), 1)[0]
    assert np.all(stuck.resistance > clean.resistance)
    assert np.all(missing.resistance < clean.resistance)
    drift = generate_synthetic(dataclasses.replace(base, drifting_rate=1.0), 1)[0]
    delta = drift.resistance - clean.resistance
    assert np.all(delta >= 0) and 9 <= np.count_nonzero(delta) <= 40


# file I/O ------------------------------------------------------------------------------

def test_dataset_round_trip(tmp_path):
    series = generate_synthetic(SynthConfig(seed=2), 8)
    path = write_dataset(series, tmp_path / "d.csv")
    back = read_dataset(path)
    assert back == series
    assert read_dataset(path)[0].condition_id == series[0].condition_id


def test_dataset_rejects_negative_resistance(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("series_id,cycle,resistance,condition_id,is_failure\na,1,1.0,C1,1\na,2,-1,C1,1\n")
    with pytest.raises(NonPositiveResistance):
        read_dataset(p)


def test_dataset_rejects_shuffled_cycles(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("series_id,cycle,resistance,condition_id,is_failure\na,2,1.0,C1,1\na,1,2.0,C1,1\n")
    with pytest.raises(NonMonotoneCycles):
        read_dataset(p)


@pytest.mark.parametrize("text", [
    "id,cycle,resistance\n",
    "series_id,cycle,resistance,condition_id,is_failure\na,1,x,C1,1\n",
    "series_id,cycle,resistance,condition_id,is_failure\na,1,1.0,C1,maybe\n",
    "series_id,cycle,resistance,condition_id,is_failure\na,1,1.0\n",
])
def test_dataset_schema_errors(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text)
    with pytest.raises(ParseError):
        read_dataset(p)


def test_knees_and_manifest(tmp_path):
    series = generate_synthetic(SynthConfig(seed=2), 8)
    knees = knees_of(series)
    write_knees(knees, tmp_path / "k.csv")
    assert read_knees(tmp_path / "k.csv") == knees
    stripped = read_dataset(write_dataset(series, tmp_path / "d.csv"))
    assert [s.knee_cycle for s in attach_knees(stripped, knees)] == [s.knee_cycle for s in series]
    write_manifest(tmp_path / "m.json", "demo", 8, 2, SynthConfig(seed=2).to_dict())
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["n_series"] == 8 and doc["seed"] == 2 and doc["generator_config"]["seed"] == 2
