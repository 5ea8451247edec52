"""Typed networks: cells, arrows, input sets and input isomorphisms.

Every cell carries an implicit internal self-arrow whose type is reserved and
unique per cell type. It makes the self-dependence of a cell's dynamics an
ordinary input, and it is what forces input-isomorphic cells to share a cell
type. Internal arrows are hidden from listings unless explicitly requested.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

INTERNAL_PREFIX = "@self:"


class NetworkError(ValueError):
    """Raised when a network is used in a way its structure does not allow."""


class UnknownCellError(NetworkError, KeyError):
    def __str__(self) -> str:
        return f"unknown cell id {self.args[0]!r}"


@dataclass(frozen=True)
class Cell:
    id: str
    type: str


@dataclass(frozen=True)
class Arrow:
    id: str
    type: str
    tail: str
    head: str
    internal: bool = False


@dataclass(frozen=True)
class InputSet:
    cell: str
    arrows: tuple[str, ...]
    tails: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.arrows)

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrows)

    @property
    def input_cells(self) -> tuple[str, ...]:
        """Distinct tails, in first-occurrence order."""
        return tuple(dict.fromkeys(self.tails))


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"code": self.code, "message": self.message, "ids": list(self.ids)}


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_dict(self) -> dict:
        return {"valid": self.valid, "violations": [v.to_dict() for v in self.violations]}


class TypedNetwork:
    """A directed multigraph with typed cells and arrows.

    Construction never raises on structural problems; use
    :func:`validate_network` (or :meth:`require_valid`) to check the type
    axioms. Cells and arrows keep their declaration order, which is the
    canonical order used everywhere else.
    """

    def __init__(
        self,
        cells: Iterable[Cell | tuple[str, str]],
        arrows: Iterable[Arrow | tuple[str, str, str, str]],
        state_dims: Mapping[str, int],
        arrow_types: Sequence[str] | None = None,
    ):
        self.cells: tuple[Cell, ...] = tuple(c if isinstance(c, Cell) else Cell(*c) for c in cells)
        self.arrows: tuple[Arrow, ...] = tuple(a if isinstance(a, Arrow) else Arrow(*a) for a in arrows)
        self.state_dims: Mapping[str, int] = MappingProxyType(dict(state_dims))
        if arrow_types is None:
            arrow_types = list(dict.fromkeys(a.type for a in self.arrows))
        self.arrow_types: tuple[str, ...] = tuple(arrow_types)

    def __repr__(self) -> str:
        return (f"TypedNetwork({len(self.cells)} cells, {len(self.arrows)} arrows, "
                f"{len(self.state_dims)} cell types, {len(self.arrow_types)} arrow types)")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TypedNetwork):
            return NotImplemented
        return (self.cells == other.cells and self.arrows == other.arrows
                and dict(self.state_dims) == dict(other.state_dims)
                and self.arrow_types == other.arrow_types)

    def __hash__(self) -> int:
        return hash((self.cells, self.arrows, tuple(sorted(self.state_dims.items())), self.arrow_types))

    # -- lookup -------------------------------------------------------------

    @cached_property
    def cell_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.cells)

    @cached_property
    def cell_index(self) -> Mapping[str, int]:
        return MappingProxyType({c.id: i for i, c in enumerate(self.cells)})

    @cached_property
    def _cell_map(self) -> Mapping[str, Cell]:
        return MappingProxyType({c.id: c for c in self.cells})

    @cached_property
    def internal_arrows(self) -> tuple[Arrow, ...]:
        return tuple(
            Arrow(INTERNAL_PREFIX + c.id, INTERNAL_PREFIX + c.type, c.id, c.id, internal=True)
            for c in self.cells
        )

    @cached_property
    def _arrow_map(self) -> Mapping[str, Arrow]:
        out = {a.id: a for a in self.internal_arrows}
        out.update({a.id: a for a in self.arrows})
        return MappingProxyType(out)

    @cached_property
    def arrow_index(self) -> Mapping[str, int]:
        return MappingProxyType({a.id: i for i, a in enumerate(self.arrows)})

    def has_cell(self, c: str) -> bool:
        return c in self._cell_map

    def cell(self, c: str) -> Cell:
        try:
            return self._cell_map[c]
        except KeyError:
            raise UnknownCellError(c) from None

    def arrow(self, a: str) -> Arrow:
        try:
            return self._arrow_map[a]
        except KeyError:
            raise NetworkError(f"unknown arrow id {a!r}") from None

    def cell_type(self, c: str) -> str:
        return self.cell(c).type

    def dim(self, c: str) -> int:
        return int(self.state_dims[self.cell(c).type])

    def all_arrows(self, include_internal: bool = False) -> tuple[Arrow, ...]:
        return self.internal_arrows + self.arrows if include_internal else self.arrows

    # -- inputs -------------------------------------------------------------

    @cached_property
    def _inputs(self) -> Mapping[str, tuple[str, ...]]:
        acc: dict[str, list[str]] = {c.id: [] for c in self.cells}
        for a in self.arrows:
            if a.head in acc:
                acc[a.head].append(a.id)
        return MappingProxyType({k: tuple(v) for k, v in acc.items()})

    def inputs(self, c: str, include_internal: bool = False) -> InputSet:
        """Arrows whose head is ``c``, in declaration order (internal arrow first)."""
        self.cell(c)
        arrows = self._inputs[c]
        if include_internal:
            arrows = (INTERNAL_PREFIX + c,) + arrows
        tails = tuple(self._arrow_map[a].tail for a in arrows)
        return InputSet(c, arrows, tails)

    def input_cells(self, c: str) -> tuple[str, ...]:
        return self.inputs(c).input_cells

    def input_signature(self, c: str) -> tuple:
        """Cell type plus the multiset of input arrow types; equal iff input isomorphic."""
        counts = Counter(self._arrow_map[a].type for a in self._inputs[self.cell(c).id])
        return (self.cell_type(c), tuple(sorted(counts.items())))

    def upstream(self, c: str) -> tuple[str, ...]:
        """Indirect inputs of ``c`` (cells with a directed path into ``c``), excluding ``c``
        unless it lies on a cycle through itself."""
        seen: dict[str, None] = {}
        stack = list(self.input_cells(c))
        while stack:
            d = stack.pop()
            if d in seen:
                continue
            seen[d] = None
            stack.extend(self.input_cells(d))
        return tuple(x for x in self.cell_ids if x in seen)

    # -- state layout -------------------------------------------------------

    @cached_property
    def slices(self) -> Mapping[str, slice]:
        out, k = {}, 0
        for c in self.cells:
            d = int(self.state_dims[c.type])
            out[c.id] = slice(k, k + d)
            k += d
        return MappingProxyType(out)

    @cached_property
    def total_dim(self) -> int:
        return sum(int(self.state_dims[c.type]) for c in self.cells)

    def cell_state(self, x: np.ndarray, c: str) -> np.ndarray:
        return x[..., self.slices[c]]

    def state(self, values: Mapping[str, float | Sequence[float]]) -> np.ndarray:
        """Assemble a flat state vector from per-cell values (scalars allowed for dim 1)."""
        x = np.empty(self.total_dim)
        missing = set(self.cell_ids) - set(values)
        if missing:
            raise NetworkError(f"state is missing cells {sorted(missing)}")
        extra = set(values) - set(self.cell_ids)
        if extra:
            raise UnknownCellError(sorted(extra)[0])
        for c in self.cell_ids:
            v = np.atleast_1d(np.asarray(values[c], dtype=float))
            if v.shape != (self.dim(c),):
                raise NetworkError(f"cell {c!r} expects dimension {self.dim(c)}, got {v.shape}")
            x[self.slices[c]] = v
        return x

    def check_state(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.total_dim,):
            raise NetworkError(f"state has shape {x.shape}, network needs last axis {self.total_dim}")
        return x

    def column_labels(self) -> list[str]:
        return [f"{c}[{k}]" for c in self.cell_ids for k in range(self.dim(c))]

    # -- validity -----------------------------------------------------------

    def require_valid(self) -> "TypedNetwork":
        report = validate_network(self)
        if not report.valid:
            msgs = "; ".join(v.message for v in report.violations[:5])
            raise NetworkError(f"invalid network: {msgs}")
        return self


def sup_norm(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.max(np.abs(x))) if x.size else 0.0


def validate_network(net: TypedNetwork) -> ValidationReport:
    """Check every structural invariant and return the violations found."""
    out: list[Violation] = []
    seen: set[str] = set()
    for c in net.cells:
        if not isinstance(c.id, str) or not c.id:
            out.append(Violation("empty-id", "cell id must be a nonempty string", (str(c.id),)))
        elif c.id.startswith(INTERNAL_PREFIX):
            out.append(Violation("reserved-id", f"cell id {c.id!r} uses the reserved prefix", (c.id,)))
        if c.id in seen:
            out.append(Violation("duplicate-cell", f"cell id {c.id!r} declared twice", (c.id,)))
        seen.add(c.id)
        if c.type not in net.state_dims:
            out.append(Violation("unknown-cell-type", f"cell {c.id!r} has undeclared type {c.type!r}", (c.id,)))
    for t, d in net.state_dims.items():
        if not isinstance(t, str) or not t:
            out.append(Violation("empty-id", "cell type id must be a nonempty string", (str(t),)))
        if isinstance(d, bool) or not isinstance(d, (int, np.integer)) or d < 1:
            out.append(Violation("bad-dim", f"cell type {t!r} has invalid dimension {d!r}", (str(t),)))

    arrow_types = set(net.arrow_types)
    seen_a: set[str] = set()
    for a in net.arrows:
        if not isinstance(a.id, str) or not a.id:
            out.append(Violation("empty-id", "arrow id must be a nonempty string", (str(a.id),)))
        elif a.id.startswith(INTERNAL_PREFIX):
            out.append(Violation("reserved-id", f"arrow id {a.id!r} uses the reserved prefix", (a.id,)))
        if a.id in seen_a:
            out.append(Violation("duplicate-arrow", f"arrow id {a.id!r} declared twice", (a.id,)))
        seen_a.add(a.id)
        if a.type not in arrow_types:
            out.append(Violation("unknown-arrow-type", f"arrow {a.id!r} has undeclared type {a.type!r}", (a.id,)))
        elif a.type.startswith(INTERNAL_PREFIX):
            out.append(Violation("reserved-id", f"arrow type {a.type!r} uses the reserved prefix", (a.id,)))
        for end in ("head", "tail"):
            if getattr(a, end) not in seen and not net.has_cell(getattr(a, end)):
                out.append(Violation(f"unknown-{end}",
                                     f"arrow {a.id!r} {end} {getattr(a, end)!r} is not a cell", (a.id,)))

    # same arrow type => same head cell type and same tail cell type
    by_type: dict[str, list[tuple[Arrow, tuple[str, str]]]] = {}
    for a in net.arrows:
        if net.has_cell(a.head) and net.has_cell(a.tail):
            ends = (net.cell_type(a.tail), net.cell_type(a.head))
            by_type.setdefault(a.type, []).append((a, ends))
    for t, members in by_type.items():
        counts = Counter(ends for _, ends in members)
        top = max(counts.values())
        reference = next(ends for _, ends in members if counts[ends] == top)
        for a, ends in members:
            if ends != reference:
                out.append(Violation(
                    "type-compatibility",
                    f"arrow {a.id!r} of type {t!r} connects {ends[0]}->{ends[1]}, "
                    f"other arrows of that type connect {reference[0]}->{reference[1]}",
                    (a.id,)))
    return ValidationReport(tuple(out))


# -- input isomorphisms -------------------------------------------------------

@dataclass(frozen=True)
class InputIsomorphism:
    """A type-preserving bijection between the explicit input arrows of two cells.

    ``mapping`` lists ``(source_arrow, target_arrow)`` pairs in the canonical
    order of the source's inputs. The internal self-arrows correspond
    implicitly.
    """

    source: str
    target: str
    mapping: tuple[tuple[str, str], ...]
    _lookup: Mapping[str, str] = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_lookup", MappingProxyType(dict(self.mapping)))

    def __call__(self, a: str) -> str:
        if a == INTERNAL_PREFIX + self.source:
            return INTERNAL_PREFIX + self.target
        return self._lookup[a]

    def as_dict(self) -> dict[str, str]:
        return dict(self.mapping)

    @property
    def image(self) -> tuple[str, ...]:
        return tuple(b for _, b in self.mapping)

    def is_identity(self) -> bool:
        return self.source == self.target and all(a == b for a, b in self.mapping)

    def then(self, other: "InputIsomorphism") -> "InputIsomorphism":
        """Composition ``other ∘ self`` (first self, then other)."""
        if other.source != self.target:
            raise NetworkError("cannot compose isomorphisms with mismatched endpoints")
        return InputIsomorphism(self.source, other.target,
                                tuple((a, other(b)) for a, b in self.mapping))

    def to_dict(self) -> dict:
        return {"source": self.source, "target": self.target, "map": dict(self.mapping)}


def inverse(net: TypedNetwork, beta: InputIsomorphism) -> InputIsomorphism:
    """Inverse isomorphism with pairs in the canonical order of the target's inputs."""
    inv = {b: a for a, b in beta.mapping}
    return InputIsomorphism(beta.target, beta.source,
                            tuple((b, inv[b]) for b in net.inputs(beta.target).arrows))


def input_isomorphisms(net: TypedNetwork, c: str, c2: str) -> list[InputIsomorphism]:
    """All type-preserving bijections I(c) -> I(c2), lexicographic by image sequence."""
    src = net.inputs(c, include_internal=True)
    dst = net.inputs(c2, include_internal=True)
    if len(src) != len(dst):
        return []
    src_types = [net.arrow(a).type for a in src.arrows]
    dst_types = [net.arrow(a).type for a in dst.arrows]
    if Counter(src_types) != Counter(dst_types):
        return []

    # candidates per source position, in target canonical order
    cand = [[j for j, t in enumerate(dst_types) if t == ts] for ts in src_types]
    used = [False] * len(dst.arrows)
    chosen: list[int] = []
    found: list[InputIsomorphism] = []

    def backtrack(i: int) -> None:
        if i == len(src.arrows):
            pairs = tuple((src.arrows[k], dst.arrows[chosen[k]])
                          for k in range(len(src.arrows)) if not net.arrow(src.arrows[k]).internal)
            found.append(InputIsomorphism(c, c2, pairs))
            return
        for j in cand[i]:
            if not used[j]:
                used[j] = True
                chosen.append(j)
                backtrack(i + 1)
                chosen.pop()
                used[j] = False

    backtrack(0)
    return found


def are_input_isomorphic(net: TypedNetwork, c: str, c2: str) -> bool:
    return net.input_signature(c) == net.input_signature(c2)


def identity_isomorphism(net: TypedNetwork, c: str) -> InputIsomorphism:
    return InputIsomorphism(c, c, tuple((a, a) for a in net.inputs(c).arrows))


def input_classes(net: TypedNetwork) -> list[tuple[str, ...]]:
    """Partition of the cells into input-isomorphism classes, in canonical order."""
    groups: dict[tuple, list[str]] = {}
    for c in net.cell_ids:
        groups.setdefault(net.input_signature(c), []).append(c)
    return [tuple(v) for v in groups.values()]


def pullback(net: TypedNetwork, beta: InputIsomorphism, x: np.ndarray) -> tuple[np.ndarray, ...]:
    """Input states of ``beta.target`` read along ``beta``, in the source's input order."""
    x = net.check_state(x)
    return tuple(net.cell_state(x, net.arrow(beta(a)).tail).copy()
                 for a in net.inputs(beta.source).arrows)


def reindex_inputs(net: TypedNetwork, beta: InputIsomorphism,
                   values: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Move per-slot values of ``beta.source``'s inputs onto the slots of ``beta.target``.

    Slot ``beta(a)`` of the target receives the value held in slot ``a`` of the
    source. This is the local form of the pullback used by the symmetry
    condition on admissible fields.
    """
    src = net.inputs(beta.source).arrows
    dst_pos = {a: i for i, a in enumerate(net.inputs(beta.target).arrows)}
    out: list = [None] * len(src)
    for i, a in enumerate(src):
        out[dst_pos[beta(a)]] = values[i]
    return out


def doubled_network(net: TypedNetwork, suffix: str = "#2") -> tuple[TypedNetwork, dict[str, str]]:
    """Two disconnected copies of ``net`` with identical types.

    The first copy keeps the original ids; the second copy's ids carry
    ``suffix``. Returns the doubled network and the map original -> second copy.
    """
    taken = set(net.cell_ids) | {a.id for a in net.arrows}
    while any((i + suffix) in taken for i in taken):
        suffix += "'"
    pair = {c: c + suffix for c in net.cell_ids}
    cells = list(net.cells) + [Cell(pair[c.id], c.type) for c in net.cells]
    arrows = list(net.arrows) + [Arrow(a.id + suffix, a.type, pair[a.tail], pair[a.head]) for a in net.arrows]
    return TypedNetwork(cells, arrows, net.state_dims, net.arrow_types), pair
