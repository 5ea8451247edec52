import io
import math

import numpy as np
import pytest

from ccn.coloring import Coloring, synchrony_drift
from ccn.dsl import parse_field, random_field_source
from ccn.fixtures import bipartite4, tencell, single_cell
from ccn.simulate import (IntegrationError, Trajectory, TrajectoryError, dense_eval, integrate,
                          load_trajectory, quotient_consistency, save_trajectory, trajectory_from_bytes,
                          trajectory_from_csv, trajectory_to_bytes, trajectory_to_csv)

DECAY = "class T { dx = -self; }"


def decay():
    net = single_cell()
    return parse_field(DECAY, net)


def rk4_error(h):
    tr = integrate(decay(), [1.0], (0.0, 1.0), method="rk4", h=h)
    return abs(tr.final[0] - math.exp(-1.0))


def test_rk4_order():
    ratio = rk4_error(0.1) / rk4_error(0.05)
    assert 12 <= ratio <= 20


def test_rk4_lands_on_end_point():
    tr = integrate(decay(), [1.0], (0.0, 1.0), method="rk4", h=0.3)
    assert tr.t1 == 1.0
    tr = integrate(decay(), [1.0], (0.0, 1.0), method="rk4", h=0.1, t_stops=[0.25])
    assert 0.25 in tr.times.tolist()


def test_dopri_accuracy_and_dense_output():
    tr = integrate(decay(), [1.0], (0.0, 2.0), rtol=1e-10, atol=1e-12)
    assert abs(tr.final[0] - math.exp(-2.0)) < 1e-9
    for t in np.linspace(0.0, 2.0, 37):
        assert abs(dense_eval(tr, t)[0] - math.exp(-t)) <= 1e-6


def test_hermite_fallback():
    t = np.linspace(0.0, 2.0, 201)
    tr = Trajectory(t, np.exp(-t)[:, None], single_cell())
    assert abs(dense_eval(tr, 0.1234)[0] - math.exp(-0.1234)) <= 1e-6
    assert abs(dense_eval(tr, 0.1234, field=decay())[0] - math.exp(-0.1234)) <= 1e-8
    with pytest.raises(TrajectoryError):
        dense_eval(tr, 3.0)


def test_forward_backward():
    net = bipartite4()
    fld = parse_field(random_field_source(net, np.random.default_rng(4)), net)
    x0 = np.array([0.3, -0.1, 0.7, 0.2])
    fwd = integrate(fld, x0, (0.0, 2.0), rtol=1e-11, atol=1e-13)
    back = integrate(-fld, fwd.final, (0.0, 2.0), rtol=1e-11, atol=1e-13)
    assert np.max(np.abs(back.final - x0)) <= 1e-6


def test_blow_up_truncates():
    net = single_cell()
    tr = integrate(parse_field("class T { dx = self^2; }", net), [1.0], (0.0, 2.0), max_norm=1e6)
    assert tr.meta["status"] == "blow-up"
    assert tr.t1 < 1.0 and np.all(np.abs(tr.states) <= 1e6)


def test_integration_errors():
    with pytest.raises(IntegrationError) as info:
        integrate(decay(), [math.nan], (0.0, 1.0))
    assert info.value.code == "nonfinite-state"
    with pytest.raises(IntegrationError):
        integrate(decay(), [1.0], (1.0, 0.0))
    with pytest.raises(IntegrationError):
        integrate(decay(), [1.0], (0.0, 1.0), method="rk4")
    with pytest.raises(IntegrationError):
        integrate(decay(), [1.0], (0.0, 1.0), method="euler")


def test_flow_invariance_tencell():
    net = tencell()
    fld = parse_field(random_field_source(net, np.random.default_rng(7)), net)
    col = Coloring.from_blocks(net.cell_ids, [["c3", "c4", "c7"], ["c5", "c6"], ["c1", "c2"]])
    x0 = np.random.default_rng(8).normal(size=net.total_dim)
    for block in col.blocks():
        for c in block:
            x0[net.cell_ids.index(c)] = x0[net.cell_ids.index(block[0])]
    tr = integrate(fld, x0, (0.0, 5.0), rtol=1e-10, atol=1e-12)
    assert synchrony_drift(net, col, tr.states) <= 1e-8


def test_quotient_consistency():
    net = bipartite4()
    fld = parse_field(random_field_source(net, np.random.default_rng(1)), net)
    col = Coloring.from_blocks(net.cell_ids, [["1", "3"]])
    qc = quotient_consistency(net, col, fld, [0.2, 0.5, 0.2, -0.4], (0.0, 5.0), rtol=1e-10)
    assert qc.max_deviation <= 1e-7
    with pytest.raises(ValueError):
        quotient_consistency(net, col, fld, [0.2, 0.5, 0.3, -0.4], (0.0, 1.0))
    with pytest.raises(ValueError):
        quotient_consistency(net, Coloring.from_blocks(net.cell_ids, [["1", "2"]]), fld,
                             [0.2, 0.2, 0.0, 0.0], (0.0, 1.0))


def sample_trajectory():
    net = bipartite4()
    fld = parse_field(random_field_source(net, np.random.default_rng(2)), net)
    return integrate(fld, [0.1, 0.2, 0.3, 0.4], (0.0, 1.0))


def test_csv_roundtrip(tmp_path):
    tr = sample_trajectory()
    buf = io.StringIO()
    trajectory_to_csv(tr, buf)
    back = trajectory_from_csv(buf.getvalue(), tr.net)
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.states, tr.states)
    save_trajectory(tr, tmp_path / "t.csv")
    assert np.array_equal(load_trajectory(tmp_path / "t.csv", tr.net).states, tr.states)


def test_binary_roundtrip(tmp_path):
    tr = sample_trajectory()
    blob = trajectory_to_bytes(tr)
    assert blob[:4] == b"CCNT"
    back = trajectory_from_bytes(blob, tr.net)
    assert np.array_equal(back.states, tr.states) and np.array_equal(back.times, tr.times)
    save_trajectory(tr, tmp_path / "t.bin")
    again = load_trajectory(tmp_path / "t.bin", tr.net)
    assert np.array_equal(again.states, tr.states)
    with pytest.raises(Exception):
        trajectory_from_bytes(b"XXXX" + blob[4:], tr.net)


def test_trajectory_validation():
    with pytest.raises(TrajectoryError):
        Trajectory([0.0, 0.0], np.zeros((2, 4)), bipartite4())
    with pytest.raises(TrajectoryError):
        Trajectory([0.0, 1.0], np.zeros((2, 3)), bipartite4())
