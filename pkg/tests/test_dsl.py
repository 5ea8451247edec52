import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccn.dsl import (AsymmetricConstructError, DSLError, DSLSyntaxError, UnknownArrowTypeError,
                     bounded_perturbation_source, load_field, parse_field, random_field_source,
                     tokenize)
from ccn.fields import FieldEvaluationError, check_admissibility, eval_field
from ccn.fixtures import FIXTURES, bipartite4, tencell, get_fixture

BIPARTITE4_SRC = """
def g(a, s) = -a + s;
class L { dx = g(self, agg_sum(magenta_in, u -> u)); }
class R { dx = g(self, agg_sum(blue, u -> u)); }
"""


def test_bipartite4_shape():
    f = parse_field(BIPARTITE4_SRC, bipartite4())
    assert eval_field(f, np.array([1.0, 2.0, 3.0, 4.0])).tolist() == [5.0, 2.0, 3.0, 0.0]


def test_empty_source_rejected():
    with pytest.raises(DSLError, match="every cell class must be defined"):
        parse_field("", bipartite4())


def test_positional_access_is_asymmetric():
    src = "class L { dx = input[0]; }\nclass R { dx = 0; }"
    with pytest.raises(AsymmetricConstructError):
        parse_field(src, bipartite4())
    with pytest.raises(AsymmetricConstructError):
        parse_field("class L { dx = magenta[1]; }\nclass R { dx = 0; }", bipartite4())


def test_unknown_arrow_type():
    with pytest.raises(UnknownArrowTypeError):
        parse_field("class L { dx = agg_sum(green, u -> u); }\nclass R { dx = 0; }", bipartite4())


def test_syntax_error_position():
    with pytest.raises(DSLSyntaxError) as info:
        parse_field("class L {\n  dx = 1 + ;\n}", bipartite4())
    assert info.value.line == 2 and info.value.col > 0
    with pytest.raises(DSLSyntaxError):
        tokenize("dx = 1 $ 2;")


def test_params_and_overrides():
    src = "param k = 2;\nclass L { dx = k * self; }\nclass R { dx = -k; }"
    x = np.array([1.0, 0.0, 3.0, 0.0])
    assert eval_field(parse_field(src, bipartite4()), x).tolist() == [2.0, -2.0, 6.0, -2.0]
    assert eval_field(parse_field(src, bipartite4(), {"k": 0.5}), x).tolist() == [0.5, -0.5, 1.5, -0.5]
    with pytest.raises(DSLError):
        parse_field(src, bipartite4(), {"nope": 1})


def test_duplicate_and_conflicting_blocks():
    with pytest.raises(DSLError):
        parse_field("class L { dx = 0; }\nclass L { dx = 1; }\nclass R { dx = 0; }", bipartite4())
    with pytest.raises(DSLError, match="conflicting"):
        parse_field('class cell "1" { dx = 0; }\nclass cell "3" { dx = 1; }\nclass R { dx = 0; }', bipartite4())


def test_cell_block_overrides_type_block():
    net = tencell()
    src = "class A { dx = -self; }\nclass B { dx = 0; }\nclass C { dx = 1; }\nclass cell c5 { dx = 7; }"
    out = eval_field(parse_field(src, net), np.ones(net.total_dim))
    ids = list(net.cell_ids)
    assert out[ids.index("c5")] == 7.0 and out[ids.index("c6")] == 7.0
    assert out[ids.index("c3")] == 0.0


def test_reducers():
    net = get_fixture("feedforward")
    # cell 0 has no inputs, so it needs its own block
    src = """
    class cell "0" { dx = 1; }
    class cell "1" {
        dx = agg_sum(e, u -> u) + agg_prod(e, u -> u + 1) + agg_mean(e, u -> 2 * u)
             + agg_e(1, e, u -> u) + agg_p(2, e, u -> u);
    }
    """
    x = np.array([2.0, 3.0, 0.0, 0.0, 0.0])
    out = eval_field(parse_field(src, net), x)
    # cell 1 sees 2: 2 + 3 + 4 + 2 + 4
    assert out[1] == 15.0
    # cell 3 sees 3: 3 + 4 + 6 + 3 + 9
    assert out[3] == 25.0


def test_vector_cells():
    net = get_fixture("chain2")
    src = "class U { dx[0] = -self[1]; dx[1] = self[0]; }\nclass D { dx = agg_sum(e, u -> dot(u, u)); }"
    out = eval_field(parse_field(src, net), np.array([3.0, 4.0, 0.0]))
    assert out.tolist() == [-4.0, 3.0, 25.0]
    with pytest.raises(DSLError):
        parse_field("class U { dx = self[2]; }\nclass D { dx = 0; }", net)


def test_domain_error_reports_cell():
    f = parse_field("class L { dx = log(self); }\nclass R { dx = 0; }", bipartite4())
    with pytest.raises(FieldEvaluationError) as info:
        eval_field(f, np.array([1.0, 0.0, -1.0, 0.0]))
    assert info.value.cell == "3"


def test_raw_block_is_symmetrized():
    src = "raw class L { phi = input[0] - 2 * input[1] + self; dir = 1; }\nclass R { dx = 0; }"
    f = parse_field(src, bipartite4())
    assert check_admissibility(f, samples=200).passed
    # symmetrized over both orders: 2 * self + (x2 - 2 x4) + (x4 - 2 x2)
    out = eval_field(f, np.array([1.0, 2.0, 0.0, 5.0]))
    assert out[0] == pytest.approx(2.0 + (2 - 10) + (5 - 4))


def test_load_field(tmp_path):
    p = tmp_path / "f.ccn"
    p.write_text(BIPARTITE4_SRC)
    assert eval_field(load_field(p, bipartite4()), np.ones(4)).tolist() == [1.0, 1.0, 1.0, 1.0]


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_random_sources_are_admissible(name):
    net = get_fixture(name)
    rng = np.random.default_rng(0)
    for _ in range(3):
        f = parse_field(random_field_source(net, rng), net)
        assert check_admissibility(f, samples=200).passed


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-4, 1.0))
def test_bounded_perturbation_sup(seed, eps):
    net = tencell()
    rng = np.random.default_rng(seed)
    f = parse_field(bounded_perturbation_source(net, rng, eps), net)
    x = rng.normal(scale=5.0, size=(20, net.total_dim))
    assert max(np.max(np.abs(f(row))) for row in x) <= eps * (1 + 1e-12)
    assert check_admissibility(f, samples=20).passed
