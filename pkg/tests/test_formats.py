import json

import numpy as np
import pytest

from ccn.coloring import Coloring
from ccn.fixtures import FIXTURES, bipartite4, get_fixture
from ccn.formats import (FormatError, load_coloring, load_network, load_state, network_from_json,
                         network_to_json, save_network, state_from_json, state_to_json)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_network_roundtrip(name):
    net = get_fixture(name)
    assert network_from_json(network_to_json(net)) == net


def test_files(tmp_path):
    net = bipartite4()
    save_network(net, tmp_path / "n.json")
    assert load_network(tmp_path / "n.json") == net
    (tmp_path / "c.json").write_text(json.dumps({"colors": {"1": 0, "2": 1, "3": 0, "4": 2}}))
    assert load_coloring(tmp_path / "c.json", net) == Coloring.from_blocks(net.cell_ids, [["1", "3"]])
    (tmp_path / "s.json").write_text(json.dumps({"1": 1, "2": [2.0], "3": 3, "4": 4}))
    assert load_state(tmp_path / "s.json", net).tolist() == [1.0, 2.0, 3.0, 4.0]


def test_state_roundtrip():
    net = get_fixture("chain2")
    x = np.array([0.5, -1.5, 2.0])
    assert state_from_json(state_to_json(x, net), net).tolist() == x.tolist()


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("cells"),
    lambda d: d.update(extra=1),
    lambda d: d.update(version=99),
    lambda d: d["cell_types"].append({"id": "L", "dim": 1}),
    lambda d: d["cell_types"][0].update(dim="one"),
    lambda d: d["cells"][0].update(id=""),
])
def test_malformed_network(mutate):
    doc = network_to_json(bipartite4())
    mutate(doc)
    with pytest.raises(FormatError):
        network_from_json(doc)


def test_invalid_json_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        load_network(p)


def test_bad_state():
    with pytest.raises(FormatError):
        state_from_json([1, 2], bipartite4())
    with pytest.raises(FormatError):
        state_from_json({"1": 1}, bipartite4())
