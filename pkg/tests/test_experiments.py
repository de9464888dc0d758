import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigdfp.driver import RoundRecord
from sigdfp.experiments import (
    THRESHOLDS,
    desk_config,
    flow_gap_monotone,
    objective_gap_in_se,
    trailing_means,
    within_budget,
)


def _records(gaps, val=None, se=None):
    val = val if val is not None else [0.0] * len(gaps)
    se = se if se is not None else [1.0] * len(gaps)
    return [RoundRecord(i + 1, 0.1, [0.0], v, s, {"m": g}, 0.0) for i, (g, v, s) in enumerate(zip(gaps, val, se))]


def test_trailing_means_examples():
    assert np.allclose(trailing_means([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    assert trailing_means([1, 2], 3).size == 0
    assert np.allclose(trailing_means(np.ones(30)), np.ones(11))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.integers(1, 25))
def test_trailing_means_match_direct_average(values, window):
    out = trailing_means(values, window)
    direct = [np.mean(values[i:i + window]) for i in range(len(values) - window + 1)]
    assert np.allclose(out, direct, rtol=1e-9, atol=1e-9)


def test_decreasing_gap_passes_and_rising_gap_fails():
    down = flow_gap_monotone(_records(list(1.0 / np.arange(1, 61))), 0)["m"]
    assert down.ok and down.worst_ratio <= 1.0
    up = flow_gap_monotone(_records(list(np.linspace(1.0, 2.0, 60))), 0)["m"]
    assert not up.ok and up.worst_ratio > 1.1


def test_gap_within_band_passes():
    # a 5% bump after a plateau stays inside the 10% band
    gaps = [1.0] * 40 + [1.05] * 20
    assert flow_gap_monotone(_records(gaps), 0)["m"].worst_ratio == pytest.approx(1.05)


def test_warm_start_rounds_are_ignored():
    gaps = [5.0] * 30 + [1.0] * 40
    rep = flow_gap_monotone(_records(gaps), 30)["m"]
    assert rep.trailing.size == 21 and rep.ok
    assert not flow_gap_monotone(_records([1.0] * 30 + [5.0] * 40), 0)["m"].ok


def test_objective_gap_in_standard_errors():
    recs = _records([1.0] * 3, val=[0.0, 0.0, 1.3], se=[1.0, 1.0, 0.5])
    assert objective_gap_in_se(recs, 1.0) == pytest.approx(0.6)


def test_desk_configs_and_budgets():
    lq = desk_config("lq").validate()
    assert (lq.N, lq.n_rounds, lq.M, lq.L) == (2**13, 300, 2, 100)
    cons = desk_config("consumption").validate()
    assert (cons.n_rounds, cons.M) == (400, 4)
    assert desk_config("portfolio", N=64).N == 64
    assert within_budget({"X": 0.005, "alpha": 0.02, "m": 0.1}, "lq") == {"X": True, "alpha": False, "m": True}
    assert set(THRESHOLDS["consumption"]) == {"pi", "c", "m", "Gamma"}
