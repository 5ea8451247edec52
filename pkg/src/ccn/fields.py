"""Admissible vector fields: evaluation, admissibility checks and symmetrization.

A field is described cell by cell through its local form
``local(c, x_c, inputs)`` where ``inputs`` lists the states at the tails of
the cell's explicit input arrows in canonical order. Evaluating a full state
gathers those arguments from the flat vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

from .network import (InputIsomorphism, NetworkError, TypedNetwork, input_classes,
                      input_isomorphisms, reindex_inputs)


class FieldEvaluationError(ArithmeticError):
    """A field could not be evaluated (guarded domain, non-finite value...)."""

    def __init__(self, message: str, cell: str | None = None):
        super().__init__(f"cell {cell!r}: {message}" if cell is not None else message)
        self.cell = cell


@lru_cache(maxsize=128)
def isomorphism_table(net: TypedNetwork) -> dict[tuple[str, str], list[InputIsomorphism]]:
    """B(c, c2) for every pair of input-isomorphic cells."""
    table = {}
    for cls in input_classes(net):
        for c in cls:
            for c2 in cls:
                table[(c, c2)] = input_isomorphisms(net, c, c2)
    return table


class Field:
    """Base class: subclasses implement :meth:`local`."""

    def __init__(self, net: TypedNetwork):
        self.net = net
        self._gather = [(net.slices[c], [net.slices[t] for t in net.inputs(c).tails])
                        for c in net.cell_ids]

    def local(self, c: str, x_c: np.ndarray, inputs: Sequence[np.ndarray]) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for c, (sl, in_sl) in zip(self.net.cell_ids, self._gather):
            out[sl] = self.local(c, x[sl], [x[s] for s in in_sl])
        return out

    def __add__(self, other: "Field") -> "Field":
        return SumField(self, other)

    def __neg__(self) -> "Field":
        return ScaledField(self, -1.0)

    def scaled(self, k: float) -> "Field":
        return ScaledField(self, k)

    def on(self, net: TypedNetwork) -> "Field":
        """The same local functions evaluated on another network layout (quotients)."""
        return RebasedField(self, net)


class ZeroField(Field):
    def local(self, c, x_c, inputs):
        return np.zeros(self.net.dim(c))


class LocalField(Field):
    """Per-cell callables ``f(x_c, inputs) -> array``. No symmetry is implied."""

    def __init__(self, net: TypedNetwork, funcs: Mapping[str, Callable]):
        super().__init__(net)
        missing = set(net.cell_ids) - set(funcs)
        if missing:
            raise NetworkError(f"no local function for cells {sorted(missing)}")
        self.funcs = dict(funcs)

    def local(self, c, x_c, inputs):
        return np.broadcast_to(np.asarray(self.funcs[c](x_c, inputs), dtype=float),
                               (self.net.dim(c),)).copy()


class SumField(Field):
    def __init__(self, *parts: Field):
        nets = {id(p.net) for p in parts}
        if len(nets) != 1 and any(p.net != parts[0].net for p in parts):
            raise NetworkError("cannot add fields defined on different networks")
        super().__init__(parts[0].net)
        self.parts = parts

    def local(self, c, x_c, inputs):
        return sum((p.local(c, x_c, inputs) for p in self.parts[1:]),
                   self.parts[0].local(c, x_c, inputs))


class ScaledField(Field):
    def __init__(self, base: Field, k: float):
        super().__init__(base.net)
        self.base, self.k = base, float(k)

    def local(self, c, x_c, inputs):
        return self.k * self.base.local(c, x_c, inputs)


class RebasedField(Field):
    def __init__(self, base: Field, net: TypedNetwork):
        super().__init__(net)
        self.base = base

    def local(self, c, x_c, inputs):
        return self.base.local(c, x_c, inputs)


def eval_field(field: Field, x: np.ndarray) -> np.ndarray:
    x = field.net.check_state(x)
    return field(x)


# -- admissibility check ---------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityReport:
    samples: int
    comparisons: int
    max_violation: float
    worst: tuple[str, str, InputIsomorphism | None] | None
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol

    def to_dict(self) -> dict:
        return {"samples": self.samples, "comparisons": self.comparisons,
                "max_violation": self.max_violation, "tol": self.tol, "passed": self.passed,
                "worst": None if self.worst is None else
                [self.worst[0], self.worst[1], self.worst[2].to_dict() if self.worst[2] else None]}


def check_admissibility(field: Field, samples: int = 1000, tol: float = 1e-12,
                        seed: int = 0, scale: float = 1.0) -> AdmissibilityReport:
    """Sample the symmetry condition on random local arguments.

    For every cell ``c``, random ``(x_c, inputs)`` and every ``beta`` in
    ``B(c, c2)``: ``f_c(x_c, inputs)`` must equal ``f_c2`` evaluated with the
    inputs moved along ``beta``. Local arguments are drawn independently per
    slot, which also covers configurations no single network state realizes.
    """
    net = field.net
    rng = np.random.default_rng(seed)
    table = isomorphism_table(net)
    worst, worst_at, count = 0.0, None, 0
    for _ in range(samples):
        for c in net.cell_ids:
            x_c = rng.normal(scale=scale, size=net.dim(c))
            inputs = [rng.normal(scale=scale, size=net.dim(t)) for t in net.inputs(c).tails]
            ref = field.local(c, x_c, inputs)
            for (src, c2), betas in table.items():
                if src != c:
                    continue
                for beta in betas:
                    moved = reindex_inputs(net, beta, inputs)
                    val = field.local(c2, x_c, moved)
                    count += 1
                    dev = float(np.max(np.abs(val - ref), initial=0.0))
                    if not math.isfinite(dev):
                        dev = math.inf
                    if dev > worst:
                        worst, worst_at = dev, (c, c2, beta)
    return AdmissibilityReport(samples, count, worst, worst_at, tol)


# -- symmetrization ------------------------------------------------------------------

class SymmetrizedField(Field):
    """Sum of a raw scalar function over a cell's self-isomorphisms, times a direction.

    ``raw`` maps a representative cell to ``phi(x_c, inputs) -> float``. Its
    whole input-isomorphism class receives the propagated component; classes
    without a raw function are zero. Sums use exactly rounded accumulation so
    the symmetry holds bit for bit.
    """

    def __init__(self, net: TypedNetwork, raw: Mapping[str, Callable], directions: Mapping[str, np.ndarray]):
        super().__init__(net)
        table = isomorphism_table(net)
        self.raw: dict[str, Callable] = {}
        self.direction: dict[str, np.ndarray] = {}
        self.rep_of: dict[str, str] = {}
        self._perms: dict[str, list[tuple[int, ...]]] = {}
        self._pull: dict[str, tuple[int, ...]] = {}
        classes = input_classes(net)
        for cell, phi in raw.items():
            cls = next((k for k in classes if cell in k), None)
            if cls is None:
                raise NetworkError(f"unknown cell {cell!r} in raw function map")
            if any(self.rep_of.get(c) for c in cls):
                raise NetworkError(f"two raw functions given for the class of {cell!r}")
            y = np.broadcast_to(np.asarray(directions[cell], dtype=float), (net.dim(cell),)).copy()
            self.raw[cell], self.direction[cell] = phi, y
            pos = {a: i for i, a in enumerate(net.inputs(cell).arrows)}
            self._perms[cell] = [tuple(pos[beta(a)] for a in net.inputs(cell).arrows)
                                 for beta in table[(cell, cell)]]
            for c2 in cls:
                self.rep_of[c2] = cell
                self._pull[c2] = self.pull_positions(table[(cell, c2)][0])

    def pull_positions(self, beta: InputIsomorphism) -> tuple[int, ...]:
        """Slots of ``beta.target`` read in the order of the representative's inputs."""
        pos = {a: i for i, a in enumerate(self.net.inputs(beta.target).arrows)}
        return tuple(pos[beta(a)] for a in self.net.inputs(beta.source).arrows)

    def symmetric_part(self, rep: str, x_c: np.ndarray, inputs: Sequence[np.ndarray]) -> float:
        phi = self.raw[rep]
        return math.fsum(float(phi(x_c, [inputs[i] for i in perm])) for perm in self._perms[rep])

    def local(self, c, x_c, inputs):
        rep = self.rep_of.get(c)
        if rep is None:
            return np.zeros(self.net.dim(c))
        pulled = [inputs[i] for i in self._pull[c]]
        return self.symmetric_part(rep, x_c, pulled) * self.direction[rep]

    def local_via(self, beta: InputIsomorphism, x_c, inputs) -> np.ndarray:
        """Evaluate cell ``beta.target`` propagating through ``beta`` instead of the default."""
        rep = beta.source
        pulled = [inputs[i] for i in self.pull_positions(beta)]
        return self.symmetric_part(rep, x_c, pulled) * self.direction[rep]


def symmetrize(raw: Mapping[str, Callable], y, net: TypedNetwork) -> SymmetrizedField:
    """Build the admissible field ``g_c = sum_beta phi(x_c, beta* x_T) y``.

    ``y`` is either one direction used for every class or a map from the
    representative cells in ``raw`` to directions.
    """
    if isinstance(y, Mapping):
        directions = dict(y)
    else:
        directions = {c: y for c in raw}
    return SymmetrizedField(net, raw, directions)
