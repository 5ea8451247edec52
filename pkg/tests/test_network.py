import numpy as np
import pytest
from hypothesis import given, settings

from ccn.fixtures import FIXTURES, bipartite4, tencell, get_fixture, two_cell_chain
from ccn.network import (Arrow, Cell, NetworkError, TypedNetwork, UnknownCellError,
                         doubled_network, identity_isomorphism, input_classes, input_isomorphisms,
                         inverse, pullback, reindex_inputs, validate_network)

from conftest import small_networks


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixtures_are_valid(name):
    assert validate_network(get_fixture(name)).valid


def test_bipartite4_inputs():
    net = bipartite4()
    assert net.input_cells("1") == ("2", "4")
    assert net.input_cells("2") == ("1", "3")
    assert [net.arrow(a).type for a in net.inputs("1").arrows] == ["magenta", "magenta"]


def test_bipartite4_isomorphism_counts():
    net = bipartite4()
    assert len(input_isomorphisms(net, "1", "3")) == 2
    assert len(input_isomorphisms(net, "1", "1")) == 2
    # different cell types never match because the implicit self-arrows differ
    assert input_isomorphisms(net, "1", "2") == []
    assert input_classes(net) == [("1", "3"), ("2", "4")]


def test_tencell_isomorphism_counts():
    net = tencell()
    assert len(input_isomorphisms(net, "c5", "c6")) == 2
    assert input_isomorphisms(net, "c1", "c10") == []
    assert len(input_isomorphisms(net, "c1", "c2")) >= 1
    assert len(input_isomorphisms(net, "c2", "c9")) == 1


def test_isomorphisms_are_lexicographic():
    net = bipartite4()
    images = [b.image for b in input_isomorphisms(net, "1", "3")]
    assert images == sorted(images)


def test_validation_reports_codes():
    bad = TypedNetwork(
        [Cell("a", "T"), Cell("a", "T"), Cell("b", "Q")],
        [Arrow("x", "e", "a", "zz"), Arrow("y", "undeclared", "a", "a")],
        {"T": 1}, ["e"])
    codes = validate_network(bad).codes()
    assert {"duplicate-cell", "unknown-cell-type", "unknown-head", "unknown-arrow-type"} <= codes
    with pytest.raises(NetworkError):
        bad.require_valid()


def test_type_compatibility_violation():
    net = TypedNetwork([Cell("a", "T"), Cell("b", "T"), Cell("c", "S")],
                       [Arrow("x", "e", "a", "b"), Arrow("y", "e", "c", "b")], {"T": 1, "S": 1})
    rep = validate_network(net)
    assert "type-compatibility" in rep.codes()
    assert rep.to_dict()["valid"] is False


def test_bad_dimension_and_reserved_ids():
    net = TypedNetwork([Cell("@self:x", "T")], [], {"T": 0})
    assert {"reserved-id", "bad-dim"} <= validate_network(net).codes()


def test_unknown_cell_lookup():
    with pytest.raises(UnknownCellError):
        bipartite4().dim("nope")


def test_state_layout():
    net = two_cell_chain(2)
    assert net.total_dim == 3
    x = net.state({"1": [1.0, 2.0], "2": 3.0})
    assert x.tolist() == [1.0, 2.0, 3.0]
    assert net.column_labels() == ["1[0]", "1[1]", "2[0]"]
    with pytest.raises(Exception):
        net.check_state(np.zeros(2))


def test_upstream_is_transitive():
    net = get_fixture("feedforward")
    assert set(net.upstream("3")) == {"0", "1"}
    assert net.upstream("0") == ()


def test_pullback_reads_along_beta():
    net = bipartite4()
    x = np.array([1.0, 2.0, 3.0, 4.0])
    swap = [b for b in input_isomorphisms(net, "1", "3") if not b.as_dict() == {"m21": "m23", "m41": "m43"}]
    assert swap
    assert [float(v[0]) for v in pullback(net, swap[0], x)] == [4.0, 2.0]


def test_doubled_network():
    net = bipartite4()
    d, pair = doubled_network(net)
    assert len(d.cells) == 8 and len(d.arrows) == 16
    assert pair["1"] == "1#2"
    assert validate_network(d).valid
    assert d.input_cells("1#2") == ("2#2", "4#2")


@settings(max_examples=60, deadline=None)
@given(small_networks())
def test_groupoid_laws(net):
    cells = net.cell_ids
    for c in cells:
        ident = identity_isomorphism(net, c)
        assert ident in input_isomorphisms(net, c, c)
    for c in cells:
        for c2 in cells:
            for b in input_isomorphisms(net, c, c2):
                inv = inverse(net, b)
                assert b.then(inv).is_identity()
                assert inv in input_isomorphisms(net, c2, c)
                for c3 in cells:
                    for g in input_isomorphisms(net, c2, c3):
                        comp = b.then(g)
                        assert comp in input_isomorphisms(net, c, c3)


@settings(max_examples=60, deadline=None)
@given(small_networks())
def test_reindex_roundtrip(net):
    for c in net.cell_ids:
        for c2 in net.cell_ids:
            for b in input_isomorphisms(net, c, c2):
                vals = list(range(len(net.inputs(c).arrows)))
                moved = reindex_inputs(net, b, vals)
                back = reindex_inputs(net, inverse(net, b), moved)
                assert back == vals
