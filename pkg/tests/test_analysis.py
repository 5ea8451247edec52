import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccn.analysis import (AnalysisError, constant_pattern_window, detect_phase_shift, divides_multiple,
                          estimate_period, is_transitive, pattern_at, pattern_on_interval,
                          periodicity_report, stationary_cells, windows_balanced)
from ccn.coloring import Coloring, enumerate_balanced, is_finer
from ccn.dsl import parse_field, random_field_source
from ccn.fixtures import bipartite4, get_fixture, two_cell_chain
from ccn.harness import CHAIN_CANCELLATION, CHAIN_FROZEN
from ccn.simulate import Trajectory, integrate

from conftest import synced_pair_trajectory


def test_pattern_at_closure_and_flags():
    net = bipartite4()
    col, amb = pattern_at(net, np.array([0.0, 1.0, 0.5e-9, 5e-9]), tol=1e-9, with_flags=True)
    assert col == Coloring.from_blocks(net.cell_ids, [["1", "3"]])
    assert ("1", "4") in amb or ("4", "1") in amb


def test_pattern_on_interval(shifted_pair):
    rep = pattern_on_interval(shifted_pair, 0.0, 10.0)
    assert rep.pattern.is_trivial()
    assert rep.to_dict()["pattern_text"] == "{}"
    with pytest.raises(AnalysisError):
        pattern_on_interval(shifted_pair, 2.0, 1.0)
    with pytest.raises(AnalysisError):
        pattern_on_interval(shifted_pair, 0.0, 11.0)


def test_constant_window_on_crossing():
    net = get_fixture("free2")
    t = np.linspace(-1.0, 1.0, 201)
    tr = Trajectory(t, np.column_stack([t, -t]), net, derivs=np.column_stack([np.ones_like(t), -np.ones_like(t)]))
    wins = constant_pattern_window(tr)
    assert [str(w.pattern) for w in wins] == ["{}", "{1~2}", "{}"]
    # the crossing is an isolated coincidence: neighbours are finer, as required
    assert all(w.semicontinuous for w in wins)


def test_phase_shift_shifted_pair(shifted_pair):
    rep = detect_phase_shift(shifted_pair, 0.5)
    assert rep.pairs == [("1", "3")]
    assert rep.certificate.balanced and not rep.non_generic
    assert set(rep.self_shifts) == {"2", "4"}


def test_phase_shift_zero_is_diagonal(shifted_pair):
    rep = detect_phase_shift(shifted_pair, 0.0)
    assert rep.pairs == []
    assert rep.self_shifts == list(shifted_pair.net.cell_ids)


def test_phase_shift_broken_relation():
    rep = detect_phase_shift(synced_pair_trajectory(x4_period_halved=False), 0.5)
    assert ("1", "3") in rep.pairs
    assert rep.non_generic and not rep.certificate.balanced


def test_phase_shift_errors(shifted_pair):
    with pytest.raises(AnalysisError):
        detect_phase_shift(shifted_pair, -1.0)
    with pytest.raises(AnalysisError):
        detect_phase_shift(shifted_pair, 20.0)


def test_estimate_period_prefers_minimal_period():
    t = np.linspace(0.0, 20.0, 8001)
    # the second harmonic dominates, but the minimal period is still 2
    y = 0.2 * np.sin(np.pi * t) + np.sin(2 * np.pi * t)
    est = estimate_period(t, y)
    assert est.status == "periodic" and est.period == pytest.approx(2.0, rel=1e-6)
    assert estimate_period(t, np.ones_like(t)).status == "constant"
    rng = np.random.default_rng(0)
    assert estimate_period(t, np.cumsum(rng.normal(size=len(t)))).status == "aperiodic"


def test_divides_multiple():
    assert divides_multiple(0.5, 1.0, 1e-3, 8) == 1
    assert divides_multiple(2.0, 1.0, 1e-3, 8) == 2
    assert divides_multiple(3.0, 2.0, 1e-3, 8) == 3
    assert divides_multiple(np.sqrt(2), 1.0, 1e-3, 8) is None


def test_periodicity_shifted_pair(shifted_pair):
    rep = periodicity_report(shifted_pair)
    assert rep.periods["1"] == pytest.approx(1.0, rel=1e-3)
    assert rep.periods["2"] == pytest.approx(0.5, rel=1e-3)
    assert rep.verdict
    assert is_transitive(shifted_pair.net)


def test_periodicity_input_with_twice_the_period_passes():
    # cell period 1, input period 2: a multiple k = 2 of the cell period works
    net = two_cell_chain()
    t = np.linspace(0.0, 20.0, 8001)
    tr = Trajectory(t, np.column_stack([np.sin(np.pi * t), np.sin(2 * np.pi * t)]), net)
    rep = periodicity_report(tr)
    assert rep.checks[0].multiple == 2 and rep.verdict


def test_periodicity_flags_incommensurate_input():
    net = two_cell_chain()
    t = np.linspace(0.0, 40.0, 16001)
    tr = Trajectory(t, np.column_stack([np.sin(2 * np.pi * t / np.sqrt(2)), np.sin(2 * np.pi * t)]), net)
    assert not periodicity_report(tr).verdict


def test_stationarity_frozen_upstream():
    net = two_cell_chain()
    fld = parse_field(CHAIN_FROZEN, net)
    tr = integrate(fld, [0.7, 0.0], (0.0, 10.0))
    rep = stationary_cells(tr, 0.0, 10.0, tol_rate=1e-9)
    assert rep.stationary == {"1"} and rep.propagation_holds


def test_stationarity_cancellation_is_flagged():
    net = two_cell_chain(2)
    fld = parse_field(CHAIN_CANCELLATION, net)
    tr = integrate(fld, [1.0, 0.0, 0.0], (0.0, 10.0))
    rep = stationary_cells(tr, 0.0, 10.0, tol_rate=1e-6)
    assert rep.stationary == {"2"}
    assert rep.non_generic and rep.moving_inputs == {"2": ["1"]}


def test_stationarity_needs_rates(shifted_pair):
    with pytest.raises(AnalysisError):
        stationary_cells(shifted_pair, 0.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 9.0), st.floats(0.05, 0.5), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_interval_patterns_are_antitone(a, w, left, right):
    tr = synced_pair_trajectory()
    inner = (a, min(a + w, 10.0))
    outer = (max(0.0, a - left), min(10.0, inner[1] + right))
    p_in = pattern_on_interval(tr, *inner, tol=0.05, midpoints=False).pattern
    p_out = pattern_on_interval(tr, *outer, tol=0.05, midpoints=False).pattern
    assert is_finer(p_out, p_in)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["bipartite4", "ring3", "feedforward"]))
def test_windows_on_synchrony_space_are_balanced(seed, name):
    net = get_fixture(name)
    rng = np.random.default_rng(seed)
    fld = parse_field(random_field_source(net, rng), net)
    cols = enumerate_balanced(net)
    col = cols[int(rng.integers(len(cols)))]
    reps = rng.normal(size=col.num_colors)
    x0 = np.array([reps[col.color(c)] for c in net.cell_ids])
    tr = integrate(fld, x0, (0.0, 3.0), rtol=1e-10, atol=1e-12)
    for win, balanced in windows_balanced(tr):
        if win.last - win.first >= 3:
            assert balanced, str(win.pattern)
