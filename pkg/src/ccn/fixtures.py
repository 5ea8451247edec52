"""Named example networks used by the tests, the presets and ``--net fixture:NAME``."""
from __future__ import annotations

from typing import Callable

from .network import Arrow, Cell, TypedNetwork


def bipartite4() -> TypedNetwork:
    """Four cells of two types; blue arrows go left->right, magenta right->left.

    Cells 1 and 3 are type ``L``; cells 2 and 4 are type ``R``. Each L cell
    receives both R cells through magenta arrows and vice versa, giving
    dx1 = g(x1, x2, x4), dx2 = h(x2, x1, x3), and so on.
    """
    cells = [Cell("1", "L"), Cell("2", "R"), Cell("3", "L"), Cell("4", "R")]
    arrows = [
        Arrow("b12", "blue", "1", "2"),
        Arrow("b14", "blue", "1", "4"),
        Arrow("b32", "blue", "3", "2"),
        Arrow("b34", "blue", "3", "4"),
        Arrow("m21", "magenta", "2", "1"),
        Arrow("m41", "magenta", "4", "1"),
        Arrow("m23", "magenta", "2", "3"),
        Arrow("m43", "magenta", "4", "3"),
    ]
    return TypedNetwork(cells, arrows, {"L": 1, "R": 1}, ["blue", "magenta"])


def tencell() -> TypedNetwork:
    """Ten cells, three cell types, seventeen arrows of five arrow types.

    Cell types: A = {c1, c2, c9, c10}, B = {c3, c4, c5, c6, c7}, C = {c8}.
    Arrow types: S (A->A), X (B->A), Y (B->A, only on a15), P (B->B) and
    W (C->C, the doubled self-loop of c8). Eight balanced colorings, among
    them {c3~c7} and {c3~c4~c7, c5~c6}; c2 and c9 are input isomorphic but
    never share a color in a balanced coloring.
    """
    A, B, C = "A", "B", "C"
    cells = [Cell(f"c{i}", t) for i, t in
             zip(range(1, 11), [A, A, B, B, B, B, B, C, A, A])]
    arrows = [
        Arrow("a1", "S", "c1", "c1"),
        Arrow("a2", "S", "c1", "c2"),
        Arrow("a3", "X", "c4", "c1"),
        Arrow("a4", "X", "c4", "c2"),
        Arrow("a5", "P", "c4", "c5"),
        Arrow("a6", "P", "c5", "c3"),
        Arrow("a7", "P", "c3", "c6"),
        Arrow("a8", "P", "c6", "c4"),
        Arrow("a9", "P", "c4", "c6"),
        Arrow("a10", "P", "c7", "c5"),
        Arrow("a11", "P", "c5", "c7"),
        Arrow("a12", "W", "c8", "c8"),
        Arrow("a13", "W", "c8", "c8"),
        Arrow("a14", "S", "c10", "c9"),
        Arrow("a15", "Y", "c3", "c10"),
        Arrow("a16", "X", "c7", "c9"),
        Arrow("a17", "S", "c9", "c10"),
    ]
    return TypedNetwork(cells, arrows, {A: 1, B: 1, C: 1}, ["S", "X", "Y", "P", "W"])


def single_cell() -> TypedNetwork:
    return TypedNetwork([Cell("c", "T")], [], {"T": 1})


def two_cell_chain(dim_upstream: int = 1) -> TypedNetwork:
    """Cell 1 feeds cell 2; nothing feeds cell 1."""
    types = {"U": dim_upstream, "D": 1}
    return TypedNetwork([Cell("1", "U"), Cell("2", "D")], [Arrow("a", "e", "1", "2")], types)


def two_free_cells(same_type: bool = True) -> TypedNetwork:
    t2 = "T" if same_type else "T2"
    dims = {"T": 1} if same_type else {"T": 1, "T2": 1}
    return TypedNetwork([Cell("1", "T"), Cell("2", t2)], [], dims)


def ring(n: int = 3) -> TypedNetwork:
    """Unidirectional ring of ``n`` identical cells."""
    cells = [Cell(str(i), "T") for i in range(n)]
    arrows = [Arrow(f"r{i}", "e", str(i), str((i + 1) % n)) for i in range(n)]
    return TypedNetwork(cells, arrows, {"T": 1})


def feed_forward() -> TypedNetwork:
    """Five identical cells: 0 drives 1 and 2, which drive 3 and 4 respectively."""
    cells = [Cell(str(i), "T") for i in range(5)]
    arrows = [Arrow("e01", "e", "0", "1"), Arrow("e02", "e", "0", "2"),
              Arrow("e13", "e", "1", "3"), Arrow("e24", "e", "2", "4")]
    return TypedNetwork(cells, arrows, {"T": 1})


def planar_pair() -> TypedNetwork:
    """Two mutually coupled cells with two-dimensional states."""
    cells = [Cell("p", "V"), Cell("q", "V")]
    arrows = [Arrow("pq", "e", "p", "q"), Arrow("qp", "e", "q", "p")]
    return TypedNetwork(cells, arrows, {"V": 2})


FIXTURES: dict[str, Callable[[], TypedNetwork]] = {
    "bipartite4": bipartite4,
    "tencell": tencell,
    "single": single_cell,
    "chain": two_cell_chain,
    "chain2": lambda: two_cell_chain(2),
    "free2": two_free_cells,
    "ring3": ring,
    "feedforward": feed_forward,
    "planar2": planar_pair,
}


def get_fixture(name: str) -> TypedNetwork:
    try:
        return FIXTURES[name]()
    except KeyError:
        raise KeyError(f"unknown fixture {name!r}; known: {', '.join(FIXTURES)}") from None
