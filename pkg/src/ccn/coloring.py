"""Colorings of the cell set, balancedness, enumeration and quotient networks."""
from __future__ import annotations

import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .network import (Arrow, Cell, InputIsomorphism, NetworkError, TypedNetwork,
                      validate_network)

AMBIGUITY_FACTOR = 10.0


class ColoringError(ValueError):
    pass


class EnumerationCapError(ColoringError):
    pass


class Coloring:
    """A partition of an ordered cell set, stored as canonical labels.

    Colors are numbered by first occurrence in cell order, so two colorings
    are equal exactly when they describe the same partition.
    """

    __slots__ = ("cells", "labels", "_index")

    def __init__(self, cells: Sequence[str], labels: Sequence[int]):
        if len(cells) != len(labels):
            raise ColoringError("cells and labels differ in length")
        relabel: dict = {}
        self.cells: tuple[str, ...] = tuple(cells)
        self.labels: tuple[int, ...] = tuple(relabel.setdefault(l, len(relabel)) for l in labels)
        self._index = {c: i for i, c in enumerate(self.cells)}
        if len(self._index) != len(self.cells):
            raise ColoringError("duplicate cell in coloring")

    @classmethod
    def trivial(cls, cells: Sequence[str]) -> "Coloring":
        return cls(cells, range(len(cells)))

    @classmethod
    def from_blocks(cls, cells: Sequence[str], blocks: Iterable[Iterable[str]]) -> "Coloring":
        """Cells listed together share a color; unlisted cells are singletons."""
        cells = tuple(cells)
        label = {c: ("s", c) for c in cells}
        for k, block in enumerate(blocks):
            for c in block:
                if c not in label:
                    raise ColoringError(f"unknown cell {c!r} in coloring")
                if label[c][0] == "b":
                    raise ColoringError(f"cell {c!r} appears in two blocks")
                label[c] = ("b", k)
        return cls(cells, [label[c] for c in cells])

    @classmethod
    def from_assignment(cls, cells: Sequence[str], colors: Mapping[str, object]) -> "Coloring":
        if set(colors) != set(cells):
            raise ColoringError("coloring must assign every cell exactly once")
        return cls(cells, [colors[c] for c in cells])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Coloring):
            return NotImplemented
        return self.cells == other.cells and self.labels == other.labels

    def __hash__(self) -> int:
        return hash((self.cells, self.labels))

    def __repr__(self) -> str:
        return f"Coloring({self})"

    def __str__(self) -> str:
        nontrivial = [b for b in self.blocks() if len(b) > 1]
        if not nontrivial:
            return "{}"
        return "{" + ", ".join("~".join(b) for b in nontrivial) + "}"

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def num_colors(self) -> int:
        return max(self.labels) + 1 if self.labels else 0

    def color(self, c: str) -> int:
        return self.labels[self._index[c]]

    def same(self, c: str, c2: str) -> bool:
        return self.color(c) == self.color(c2)

    def blocks(self) -> list[tuple[str, ...]]:
        out: list[list[str]] = [[] for _ in range(self.num_colors)]
        for c, l in zip(self.cells, self.labels):
            out[l].append(c)
        return [tuple(b) for b in out]

    def same_color_pairs(self) -> Iterator[tuple[str, str]]:
        """Ordered pairs of distinct cells sharing a color."""
        for b in self.blocks():
            for c, c2 in itertools.permutations(b, 2):
                yield c, c2

    def is_trivial(self) -> bool:
        return self.num_colors == len(self.cells)

    def restrict(self, cells: Sequence[str]) -> "Coloring":
        return Coloring(cells, [self.color(c) for c in cells])

    def sort_key(self) -> tuple:
        return (-self.num_colors, self.labels)

    def to_json(self) -> dict:
        return {"colors": {c: l for c, l in zip(self.cells, self.labels)}}

    @classmethod
    def from_json(cls, data: Mapping, cells: Sequence[str]) -> "Coloring":
        if set(data) != {"colors"}:
            raise ColoringError("coloring document must have exactly the key 'colors'")
        colors = data["colors"]
        if not isinstance(colors, Mapping):
            raise ColoringError("'colors' must map cell ids to color indices")
        for v in colors.values():
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ColoringError("color indices must be nonnegative integers")
        return cls.from_assignment(cells, colors)


def is_finer(a: Coloring, b: Coloring) -> bool:
    """True iff every color class of ``a`` lies inside a color class of ``b``."""
    if a.cells != b.cells:
        if set(a.cells) != set(b.cells):
            raise ColoringError("colorings are over different cell sets")
        b = b.restrict(a.cells)
    image: dict[int, int] = {}
    for la, lb in zip(a.labels, b.labels):
        if image.setdefault(la, lb) != lb:
            return False
    return True


def is_strictly_finer(a: Coloring, b: Coloring) -> bool:
    return is_finer(a, b) and not is_finer(b, a)


def meet(colorings: Sequence[Coloring]) -> Coloring:
    """Coarsest coloring finer than all of ``colorings`` (pairs equal in every one)."""
    first = colorings[0]
    keys = list(zip(*(c.restrict(first.cells).labels for c in colorings)))
    return Coloring(first.cells, keys)


# -- balancedness --------------------------------------------------------------

@dataclass(frozen=True)
class BalancednessCertificate:
    """Proof of (un)balancedness.

    For a balanced coloring, ``isomorphisms`` holds one color-preserving input
    isomorphism per ordered pair of distinct same-color cells. Otherwise
    ``witness`` names the first offending pair and ``reason`` says why.
    """

    balanced: bool
    isomorphisms: Mapping[tuple[str, str], InputIsomorphism] = field(default_factory=dict)
    witness: tuple[str, str] | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.balanced

    def to_dict(self) -> dict:
        return {
            "balanced": self.balanced,
            "witness": list(self.witness) if self.witness else None,
            "reason": self.reason,
            "isomorphisms": [b.to_dict() for b in self.isomorphisms.values()],
        }


def color_preserving_isomorphism(net: TypedNetwork, col: Coloring, c: str,
                                 c2: str) -> InputIsomorphism | None:
    """An input isomorphism c -> c2 with T(a) and T(beta(a)) of equal color, if any.

    The constraint only couples arrows with the same (type, tail color), so a
    greedy match within each such class is complete.
    """
    if net.cell_type(c) != net.cell_type(c2):
        return None
    src, dst = net.inputs(c), net.inputs(c2)
    if len(src) != len(dst):
        return None
    pools: dict[tuple, list[str]] = defaultdict(list)
    for a, t in zip(dst.arrows, dst.tails):
        pools[(net.arrow(a).type, col.color(t))].append(a)
    for pool in pools.values():
        pool.reverse()
    pairs = []
    for a, t in zip(src.arrows, src.tails):
        pool = pools.get((net.arrow(a).type, col.color(t)))
        if not pool:
            return None
        pairs.append((a, pool.pop()))
    return InputIsomorphism(c, c2, tuple(pairs))


def is_balanced(net: TypedNetwork, col: Coloring) -> BalancednessCertificate:
    if col.cells != net.cell_ids:
        if set(col.cells) != set(net.cell_ids):
            raise ColoringError("coloring does not cover the network's cells")
        col = col.restrict(net.cell_ids)
    isos: dict[tuple[str, str], InputIsomorphism] = {}
    for c, c2 in col.same_color_pairs():
        if net.cell_type(c) != net.cell_type(c2):
            return BalancednessCertificate(False, {}, (c, c2), "type-mismatch")
        beta = color_preserving_isomorphism(net, col, c, c2)
        if beta is None:
            return BalancednessCertificate(False, {}, (c, c2), "no color-preserving input isomorphism")
        isos[(c, c2)] = beta
    return BalancednessCertificate(True, isos)


def verify_certificate(net: TypedNetwork, col: Coloring, cert: BalancednessCertificate) -> bool:
    """Independent re-check of a positive certificate."""
    if not cert.balanced:
        return False
    for c, c2 in col.same_color_pairs():
        beta = cert.isomorphisms.get((c, c2))
        if beta is None or beta.source != c or beta.target != c2:
            return False
        src = net.inputs(c).arrows
        dst = net.inputs(c2).arrows
        if sorted(beta.image) != sorted(dst) or [a for a, _ in beta.mapping] != list(src):
            return False
        for a, b in beta.mapping:
            if net.arrow(a).type != net.arrow(b).type:
                return False
            if not col.same(net.arrow(a).tail, net.arrow(b).tail):
                return False
    return True


# -- enumeration ---------------------------------------------------------------

def type_partition(net: TypedNetwork) -> Coloring:
    return Coloring(net.cell_ids, [net.cell_type(c) for c in net.cell_ids])


def refine(net: TypedNetwork, col: Coloring) -> Coloring:
    """Coarsest balanced coloring finer than ``col``.

    Repeatedly splits each class by the multiset of (arrow type, tail color)
    over the cell's inputs until nothing changes. ``col`` must already separate
    cell types.
    """
    labels = list(col.labels)
    inputs = [(net.inputs(c).arrows, net.inputs(c).tails) for c in net.cell_ids]
    idx = net.cell_index
    while True:
        sigs = []
        for i, (arrows, tails) in enumerate(inputs):
            counts = Counter((net.arrow(a).type, labels[idx[t]]) for a, t in zip(arrows, tails))
            sigs.append((labels[i], tuple(sorted(counts.items()))))
        new = Coloring(net.cell_ids, sigs)
        if new.num_colors == max(labels) + 1:
            return new
        labels = list(new.labels)


def _binary_splits(block: tuple[str, ...]) -> Iterator[tuple[str, ...]]:
    """Proper subsets containing block[0], each giving one two-way split."""
    head, rest = block[0], block[1:]
    for r in range(len(rest)):
        for combo in itertools.combinations(rest, r):
            yield (head,) + combo


def enumerate_balanced(net: TypedNetwork, max_cells: int = 16) -> list[Coloring]:
    """Every balanced coloring, in canonical order.

    Top-down search: start at the coarsest balanced coloring, split one class
    in two, refine back to balance, and recurse. Any balanced coloring strictly
    finer than a visited one ``Q`` is finer than the refinement of some split
    of ``Q``, so the search reaches all of them.
    """
    report = validate_network(net)
    if not report.valid:
        raise NetworkError("cannot enumerate colorings of an invalid network")
    if len(net.cells) > max_cells:
        raise EnumerationCapError(f"{len(net.cells)} cells exceeds the enumeration cap of {max_cells}")
    if not net.cells:
        return [Coloring((), ())]
    top = refine(net, type_partition(net))
    seen = {top}
    stack = [top]
    while stack:
        q = stack.pop()
        for k, block in enumerate(q.blocks()):
            if len(block) < 2:
                continue
            for part in _binary_splits(block):
                part_set = set(part)
                labels = [(l, c in part_set) if l == k else (l, False)
                          for c, l in zip(q.cells, q.labels)]
                r = refine(net, Coloring(q.cells, labels))
                if r not in seen:
                    seen.add(r)
                    stack.append(r)
    return sorted(seen, key=Coloring.sort_key)


def _set_partitions(items: Sequence[str]) -> Iterator[list[list[str]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in _set_partitions(rest):
        yield [[first]] + sub
        for i in range(len(sub)):
            yield sub[:i] + [[first] + sub[i]] + sub[i + 1:]


BRUTE_FORCE_CAP = 10


def brute_force_balanced(net: TypedNetwork) -> list[Coloring]:
    """Reference oracle: test every same-type partition with :func:`is_balanced`."""
    if len(net.cells) > BRUTE_FORCE_CAP:
        raise EnumerationCapError(f"brute force is capped at {BRUTE_FORCE_CAP} cells")
    groups: dict[str, list[str]] = {}
    for c in net.cell_ids:
        groups.setdefault(net.cell_type(c), []).append(c)
    out = []
    for combo in itertools.product(*(list(_set_partitions(g)) for g in groups.values())):
        blocks = [b for part in combo for b in part]
        col = Coloring.from_blocks(net.cell_ids, blocks)
        if is_balanced(net, col).balanced:
            out.append(col)
    return sorted(out, key=Coloring.sort_key)


def hasse_edges(colorings: Sequence[Coloring]) -> list[tuple[int, int]]:
    """Cover relation (i finer than j, nothing strictly between) over the given list."""
    n = len(colorings)
    finer = [[i != j and is_strictly_finer(colorings[i], colorings[j]) for j in range(n)]
             for i in range(n)]
    edges = []
    for i in range(n):
        for j in range(n):
            if finer[i][j] and not any(finer[i][k] and finer[k][j] for k in range(n)):
                edges.append((i, j))
    return edges


def lattice_dot(colorings: Sequence[Coloring]) -> str:
    lines = ["digraph balanced {", "  rankdir=BT;"]
    for i, col in enumerate(colorings):
        lines.append(f'  n{i} [label="{col}"];')
    for i, j in hasse_edges(colorings):
        lines.append(f"  n{i} -> n{j};")
    lines.append("}")
    return "\n".join(lines)


# -- synchrony spaces -------------------------------------------------------------

def pair_deviation(net: TypedNetwork, x: np.ndarray, c: str, c2: str) -> float:
    """Sup-norm distance between two cell states; infinite for different dimensions."""
    if net.dim(c) != net.dim(c2):
        return float("inf")
    d = np.abs(net.cell_state(x, c) - net.cell_state(x, c2))
    return float(d.max(axis=-1).max()) if d.ndim > 1 else float(d.max())


def synchrony_status(net: TypedNetwork, col: Coloring, x: np.ndarray, tol: float) -> str:
    """'in', 'out' or 'ambiguous' with respect to the synchrony space of ``col``.

    Same-color pairs must agree within ``tol``; different-color pairs must be
    separated by more than ``10 * tol``. Anything in between is ambiguous.
    """
    x = net.check_state(x)
    col = col.restrict(net.cell_ids) if col.cells != net.cell_ids else col
    status = "in"
    for i, c in enumerate(net.cell_ids):
        for c2 in net.cell_ids[i + 1:]:
            dev = pair_deviation(net, x, c, c2)
            if col.same(c, c2):
                if dev > AMBIGUITY_FACTOR * tol:
                    return "out"
                if dev > tol:
                    status = "ambiguous"
            else:
                if dev <= tol:
                    return "out"
                if dev <= AMBIGUITY_FACTOR * tol:
                    status = "ambiguous"
    return status


def in_synchrony_space(net: TypedNetwork, col: Coloring, x: np.ndarray, tol: float = 0.0) -> bool:
    return synchrony_status(net, col, x, tol) == "in"


def synchrony_drift(net: TypedNetwork, col: Coloring, states: np.ndarray) -> float:
    """Largest sup-norm gap between same-color cells over one state or a stack of states."""
    states = np.atleast_2d(states)
    worst = 0.0
    for block in col.blocks():
        ref = states[:, net.slices[block[0]]]
        for c in block[1:]:
            worst = max(worst, float(np.max(np.abs(states[:, net.slices[c]] - ref), initial=0.0)))
    return worst


# -- quotient ----------------------------------------------------------------------

@dataclass(frozen=True)
class Quotient:
    network: TypedNetwork
    coloring: Coloring
    projection: Mapping[str, str]
    representatives: tuple[str, ...]
    source: TypedNetwork

    def project(self, x: np.ndarray) -> np.ndarray:
        """Restrict a full state to the representative cells."""
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.source.cell_state(x, r) for r in self.representatives], axis=-1)

    def lift(self, y: np.ndarray) -> np.ndarray:
        """Copy each quotient cell's state into every cell of its color."""
        y = np.asarray(y, dtype=float)
        parts = [self.network.cell_state(y, self.projection[c]) for c in self.source.cell_ids]
        return np.concatenate(parts, axis=-1)


def quotient_network(net: TypedNetwork, col: Coloring) -> Quotient:
    """Network on color classes; each class keeps its lowest cell as representative."""
    cert = is_balanced(net, col)
    if not cert.balanced:
        raise ColoringError(f"quotient needs a balanced coloring; {cert.witness} fails ({cert.reason})")
    col = col.restrict(net.cell_ids)
    reps = tuple(b[0] for b in col.blocks())
    proj = {c: reps[col.color(c)] for c in net.cell_ids}
    cells = [Cell(r, net.cell_type(r)) for r in reps]
    arrows = []
    for r in reps:
        for a in net.inputs(r).arrows:
            arr = net.arrow(a)
            arrows.append(Arrow(arr.id, arr.type, proj[arr.tail], r))
    q = TypedNetwork(cells, arrows, net.state_dims, net.arrow_types)
    return Quotient(q, col, proj, reps, net)
