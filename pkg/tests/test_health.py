import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import window_stats_reference
from rulforge.data import normalize_min_max
from rulforge.errors import DegenerateWindow, InsufficientData
from rulforge.features import HealthIndicatorConfig, health_indicators, window_statistics
from rulforge.synth import SynthConfig, generate_synthetic


def stats(w, strict=False):
    return window_statistics(np.array([w], dtype=float), strict=strict)[0]


def test_constant_window():
    mean, sd, rms, kurt, sf, cf = stats([1, 1, 1, 1])
    assert (mean, sd, rms, kurt, sf, cf) == (1.0, 0.0, 1.0, 0.0, 1.0, 1.0)


def test_alternating_window():
    np.testing.assert_allclose(stats([-1, 1, -1, 1]), [0, 1, 1, 1, 1, 1], atol=1e-15)


def test_single_spike_window():
    mean, sd, rms, kurt, sf, cf = stats([0, 0, 0, 3])
    assert rms == pytest.approx(1.5) and sf == pytest.approx(2.0) and cf == pytest.approx(2.0)
    np.testing.assert_allclose(stats([0, 0, 0, 3]), window_stats_reference([0, 0, 0, 3]), atol=1e-12)


def test_strict_mode_reports_cycle():
    x = np.r_[np.linspace(0.1, 0.9, 30), np.full(25, 0.5)]
    with pytest.raises(DegenerateWindow) as err:
        health_indicators(x, HealthIndicatorConfig(20), strict=True)
    # the first all-constant trailing window ends 19 cycles into the flat stretch
    assert err.value.cycle == 30 + 20


def test_zero_window_policy():
    assert stats([0, 0, 0]).tolist() == [0.0, 0.0, 0.0, 0.0, 1.0, 1.0]
    with pytest.raises(DegenerateWindow):
        stats([0, 0, 0], strict=True)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=40))
def test_matches_reference(w):
    ref = window_stats_reference(w)
    got = stats(w)
    if ref[1] <= 1e-9 * max(1.0, max(abs(v) for v in w)):
        return  # spread at rounding level: kurtosis is not numerically meaningful
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-10)


def test_feature_matrix_layout():
    s = normalize_min_max(generate_synthetic(SynthConfig(pattern="pattern1", seed=1), 1)[0])
    fm = health_indicators(s, HealthIndicatorConfig(20))
    assert fm.kind == "HI" and fm.channels == 7 and len(fm) == len(s) - 19
    assert fm.cycles[0] == 20 and fm.cycles[-1] == len(s)
    np.testing.assert_array_equal(fm.rows[:, 6], s.values[19:])
    np.testing.assert_allclose(fm.rows[0, :6], window_stats_reference(list(s.values[:20])), atol=1e-12)


def test_too_short_and_bad_config():
    with pytest.raises(InsufficientData):
        health_indicators(np.ones(5), HealthIndicatorConfig(20))
    with pytest.raises(ValueError):
        HealthIndicatorConfig(1)
