import numpy as np
import pytest
from hypothesis import strategies as st

from ccn.fixtures import bipartite4
from ccn.network import Arrow, Cell, TypedNetwork
from ccn.simulate import Trajectory


def synced_pair_trajectory(period=1.0, x4_period_halved=True):
    """bipartite4 trajectory where cell 3 is cell 1 shifted by half a period.

    Cells 2 and 4 oscillate at twice the base frequency, so they are
    half-period self-shifts of themselves. With ``x4_period_halved=False``
    cell 4 runs at the base frequency and breaks that relation.
    """
    t = np.linspace(0.0, 10.0, 10001)

    def x1(s):
        w = 2 * np.pi * s / period
        return np.sin(w) + 0.3 * np.cos(2 * w) + 0.1 * np.sin(3 * w)

    x2 = 0.5 + 0.7 * np.cos(4 * np.pi * t / period)
    k = 4 if x4_period_halved else 2
    x4 = -0.2 + 0.4 * np.sin(k * np.pi * t / period + 0.3)
    states = np.column_stack([x1(t), x2, x1(t + period / 2), x4])
    return Trajectory(t, states, bipartite4())


@pytest.fixture
def shifted_pair():
    return synced_pair_trajectory()


@st.composite
def small_networks(draw, max_cells=6):
    """Random typed networks with at most two cell types and two arrow types."""
    n = draw(st.integers(1, max_cells))
    types = draw(st.lists(st.sampled_from(["A", "B"]), min_size=n, max_size=n))
    cells = [Cell(f"c{i}", t) for i, t in enumerate(types)]
    arrows = []
    edges = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1),
                                    st.sampled_from(["e", "f"])), max_size=2 * n))
    # arrow types are tied to (tail type, head type) so the network stays well typed
    for k, (i, j, a) in enumerate(edges):
        atype = f"{a}{types[i]}{types[j]}"
        arrows.append(Arrow(f"a{k}", atype, f"c{i}", f"c{j}"))
    return TypedNetwork(cells, arrows, {"A": 1, "B": 1})


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
