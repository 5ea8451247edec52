"""JSON interchange for networks, colorings and states."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .coloring import Coloring, ColoringError
from .network import Arrow, Cell, TypedNetwork

NETWORK_FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _expect_keys(obj: Any, required: set[str], where: str, optional: set[str] = frozenset()) -> None:
    if not isinstance(obj, Mapping):
        raise FormatError(f"{where}: expected an object")
    keys = set(obj)
    missing = required - keys
    unknown = keys - required - optional
    if missing:
        raise FormatError(f"{where}: missing field(s) {sorted(missing)}")
    if unknown:
        raise FormatError(f"{where}: unknown field(s) {sorted(unknown)}")


def _expect_id(v: Any, where: str) -> str:
    if not isinstance(v, str) or not v:
        raise FormatError(f"{where}: ids must be nonempty strings, got {v!r}")
    return v


def network_from_json(doc: Mapping) -> TypedNetwork:
    """Parse a version-1 network document. Unknown fields are rejected.

    Only the document's shape is checked here; type-axiom violations are left
    to :func:`ccn.network.validate_network` so they can be reported as data.
    """
    _expect_keys(doc, {"version", "cell_types", "arrow_types", "cells", "arrows"}, "network")
    if doc["version"] != NETWORK_FORMAT_VERSION:
        raise FormatError(f"network: unsupported version {doc['version']!r}")
    dims: dict[str, int] = {}
    for i, ct in enumerate(doc["cell_types"]):
        _expect_keys(ct, {"id", "dim"}, f"cell_types[{i}]")
        cid = _expect_id(ct["id"], f"cell_types[{i}].id")
        if cid in dims:
            raise FormatError(f"cell_types[{i}]: duplicate cell type {cid!r}")
        d = ct["dim"]
        if isinstance(d, bool) or not isinstance(d, int):
            raise FormatError(f"cell_types[{i}].dim must be an integer")
        dims[cid] = d
    if not isinstance(doc["arrow_types"], list):
        raise FormatError("arrow_types must be a list")
    arrow_types = [_expect_id(t, f"arrow_types[{i}]") for i, t in enumerate(doc["arrow_types"])]
    cells = []
    for i, c in enumerate(doc["cells"]):
        _expect_keys(c, {"id", "type"}, f"cells[{i}]")
        cells.append(Cell(_expect_id(c["id"], f"cells[{i}].id"), _expect_id(c["type"], f"cells[{i}].type")))
    arrows = []
    for i, a in enumerate(doc["arrows"]):
        _expect_keys(a, {"id", "type", "tail", "head"}, f"arrows[{i}]")
        arrows.append(Arrow(*(_expect_id(a[k], f"arrows[{i}].{k}") for k in ("id", "type", "tail", "head"))))
    return TypedNetwork(cells, arrows, dims, arrow_types)


def network_to_json(net: TypedNetwork) -> dict:
    return {
        "version": NETWORK_FORMAT_VERSION,
        "cell_types": [{"id": t, "dim": int(d)} for t, d in net.state_dims.items()],
        "arrow_types": list(net.arrow_types),
        "cells": [{"id": c.id, "type": c.type} for c in net.cells],
        "arrows": [{"id": a.id, "type": a.type, "tail": a.tail, "head": a.head} for a in net.arrows],
    }


def _read_json(path: str | Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from None


def load_network(path: str | Path) -> TypedNetwork:
    return network_from_json(_read_json(path))


def save_network(net: TypedNetwork, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_json(net), indent=2) + "\n", encoding="utf-8")


def load_coloring(path: str | Path, net: TypedNetwork) -> Coloring:
    try:
        return Coloring.from_json(_read_json(path), net.cell_ids)
    except ColoringError as exc:
        raise FormatError(f"{path}: {exc}") from None


def state_from_json(doc: Mapping, net: TypedNetwork) -> np.ndarray:
    """``{"cellId": value-or-list, ...}`` to a flat state vector."""
    if not isinstance(doc, Mapping):
        raise FormatError("state document must be an object keyed by cell id")
    try:
        return net.state(doc)
    except Exception as exc:
        raise FormatError(f"state: {exc}") from None


def state_to_json(x: np.ndarray, net: TypedNetwork) -> dict:
    return {c: [float(v) for v in net.cell_state(x, c)] for c in net.cell_ids}


def load_state(path: str | Path, net: TypedNetwork) -> np.ndarray:
    return state_from_json(_read_json(path), net)
