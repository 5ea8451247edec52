"""Command-line entry point: ``ccn <subcommand> ...``.

Exit codes: 0 success, 1 negative verdict, 2 usage error, 3 runtime failure.
Errors are also written to stderr as one JSON object with a ``code`` field.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .analysis import (DEFAULT_TOL, constant_pattern_window, detect_phase_shift,
                       pattern_on_interval, periodicity_report, stationary_cells)
from .coloring import (ColoringError, EnumerationCapError, brute_force_balanced, enumerate_balanced,
                       hasse_edges, is_balanced, lattice_dot, quotient_network)
from .dsl import DSLError, load_field
from .fields import check_admissibility
from .fixtures import FIXTURES, get_fixture
from .formats import FormatError, load_coloring, load_network, load_state, network_to_json, state_to_json
from .harness import ExperimentConfig, PRESETS, preset, run_experiment
from .network import TypedNetwork, input_isomorphisms, validate_network
from .simulate import IntegrationError, TrajectoryError, integrate, load_trajectory, save_trajectory

EXIT_OK, EXIT_NEGATIVE, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class CLIError(Exception):
    def __init__(self, code: str, message: str, exit_code: int = EXIT_RUNTIME):
        super().__init__(message)
        self.code, self.exit_code = code, exit_code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


def _emit_error(code: str, message: str) -> None:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)


def _out(args, doc, table: Callable[[], str]) -> None:
    if args.format == "json":
        print(json.dumps(doc, indent=2, default=_json_default))
    else:
        print(table())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, set):
        return sorted(o)
    raise TypeError(type(o).__name__)


def _net(spec: str) -> TypedNetwork:
    if spec.startswith("fixture:"):
        try:
            return get_fixture(spec.split(":", 1)[1])
        except KeyError as exc:
            raise CLIError("unknown-fixture", str(exc.args[0]), EXIT_USAGE) from None
    return load_network(spec)


def _valid_net(spec: str) -> TypedNetwork:
    net = _net(spec)
    report = validate_network(net)
    if not report.valid:
        raise CLIError("invalid-network", "; ".join(v.message for v in report.violations), EXIT_NEGATIVE)
    return net


def _params(pairs) -> dict[str, float]:
    out = {}
    for p in pairs or []:
        name, sep, value = p.partition("=")
        if not sep:
            raise CLIError("bad-parameter", f"expected name=value, got {p!r}", EXIT_USAGE)
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise CLIError("bad-parameter", f"parameter {name!r} is not a number", EXIT_USAGE) from None
    return out


def _write_plot(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for r in rows:
            fh.write(" ".join(repr(float(v)) if v is not None else "nan" for v in r) + "\n")


# -- subcommands ------------------------------------------------------------------------

def cmd_validate(args) -> int:
    net = _net(args.net)
    rep = validate_network(net)
    _out(args, rep.to_dict(), lambda: "valid" if rep.valid else "\n".join(
        f"{v.code}: {v.message}" for v in rep.violations))
    return EXIT_OK if rep.valid else EXIT_NEGATIVE


def cmd_isomorphisms(args) -> int:
    net = _valid_net(args.net)
    cells = net.cell_ids
    pairs = [(args.cell, args.cell2 or args.cell)] if args.cell else [(c, c2) for c in cells for c2 in cells]
    for c, c2 in pairs:
        for x in (c, c2):
            if not net.has_cell(x):
                raise CLIError("unknown-cell", f"unknown cell {x!r}", EXIT_USAGE)
    found = {f"{c}->{c2}": [b.as_dict() for b in input_isomorphisms(net, c, c2)] for c, c2 in pairs}
    if not args.cell:
        found = {k: v for k, v in found.items() if v}

    def table():
        lines = []
        for k, isos in found.items():
            lines.append(f"{k}: {len(isos)}")
            lines += ["  " + ", ".join(f"{a}->{b}" for a, b in m.items()) for m in isos]
        return "\n".join(lines)

    _out(args, found, table)
    return EXIT_OK


def cmd_colorings(args) -> int:
    net = _valid_net(args.net)
    cols = brute_force_balanced(net) if args.brute else enumerate_balanced(net, max_cells=args.max_cells)
    edges = hasse_edges(cols)
    if args.dot:
        Path(args.dot).write_text(lattice_dot(cols), encoding="utf-8")
    doc = {"count": len(cols), "colorings": [c.to_json()["colors"] for c in cols],
           "text": [str(c) for c in cols], "hasse_edges": edges}
    _out(args, doc, lambda: "\n".join(f"{i}: {c}" for i, c in enumerate(cols)))
    return EXIT_OK


def cmd_quotient(args) -> int:
    net = _valid_net(args.net)
    col = load_coloring(args.coloring, net)
    cert = is_balanced(net, col)
    if not cert.balanced:
        _out(args, {"balanced": False, "certificate": cert.to_dict()},
             lambda: f"coloring {col} is not balanced: {cert.reason}")
        return EXIT_NEGATIVE
    q = quotient_network(net, col)
    doc = {"network": network_to_json(q.network), "projection": dict(q.projection)}
    if args.out:
        Path(args.out).write_text(json.dumps(doc["network"], indent=2) + "\n", encoding="utf-8")
    _out(args, doc, lambda: "\n".join(f"{c} -> {r}" for c, r in q.projection.items()))
    return EXIT_OK


def cmd_simulate(args) -> int:
    net = _valid_net(args.net)
    field = load_field(args.field, net, _params(args.param))
    x0 = load_state(args.x0, net)
    traj = integrate(field, x0, (args.t0, args.t1), method=args.method, h=args.h,
                     rtol=args.rtol, atol=args.atol, max_norm=args.max_norm, seed=args.seed)
    if args.out:
        save_trajectory(traj, args.out)
    if args.emit_plot_data:
        _write_plot(Path(args.emit_plot_data), ["t"] + net.column_labels(),
                    np.column_stack([traj.times, traj.states]))
    doc = {"samples": len(traj), "t_final": traj.t1, "status": traj.meta["status"],
           "final_state": state_to_json(traj.final, net), "meta": traj.meta}
    _out(args, doc, lambda: f"{len(traj)} samples, t = {traj.t1:g}, status {traj.meta['status']}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    net = _valid_net(args.net)
    traj = load_trajectory(args.traj, net)
    field = load_field(args.field, net, _params(args.param)) if args.field else None
    sigma = args.window[0] if args.window else traj.t0
    tau = args.window[1] if args.window else traj.t1
    interval = pattern_on_interval(traj, sigma, tau, args.tol, field=field)
    windows = constant_pattern_window(traj, args.tol, field=field)
    doc = {"interval": interval.to_dict(), "windows": [w.to_dict() for w in windows]}
    if args.theta is not None:
        doc["phase_shift"] = detect_phase_shift(traj, args.theta, args.tol, field=field).to_dict()
    if args.periods:
        doc["periodicity"] = periodicity_report(traj, rel_tol=args.period_tol, field=field).to_dict()
    if field is not None or traj.derivs is not None:
        doc["stationarity"] = stationary_cells(traj, sigma, tau, args.rate_tol, field).to_dict()
    if args.emit_plot_data:
        _write_plot(Path(args.emit_plot_data), ["start", "end", "colors"],
                    [(w.start, w.end, w.pattern.num_colors) for w in windows])

    def table():
        lines = [f"pattern on [{sigma:g}, {tau:g}]: {interval.pattern} "
                 f"({'balanced' if interval.balanced else 'unbalanced'})"]
        lines += [f"  [{w.start:g}, {w.end:g}] {w.pattern}" for w in windows]
        if "phase_shift" in doc:
            ps = doc["phase_shift"]
            lines.append(f"theta={ps['theta']:g}: pairs {ps['pairs']}, self {ps['self_shifts']}, "
                         f"doubled pattern {'balanced' if ps['balanced'] else 'unbalanced'}")
        if "periodicity" in doc:
            lines.append(f"periodicity verdict: {doc['periodicity']['verdict']}")
        return "\n".join(lines)

    _out(args, doc, table)
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.preset:
        cfg = preset(args.preset)
    elif args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if isinstance(doc.get("base_field"), dict) and "file" in doc["base_field"]:
            base = Path(args.config).parent / doc["base_field"]["file"]
            doc["base_field"] = base.read_text(encoding="utf-8")
        cfg = ExperimentConfig.from_json(doc)
    else:
        raise CLIError("missing-config", "give --config FILE or --preset NAME", EXIT_USAGE)
    if args.seed is not None:
        cfg.seed_base = args.seed
    res = run_experiment(cfg, jobs=args.jobs)
    if args.out:
        res.write(args.out)
    if args.emit_plot_data:
        key = "breakout_time" if cfg.kind == "breakout" else "residual"
        _write_plot(Path(args.emit_plot_data), ["seed", key],
                    [(r["seed"], r.get(key)) for r in res.rows])
    _out(args, res.summary, lambda: "\n".join(f"{k}: {v}" for k, v in res.summary.items()))
    return EXIT_OK if res.success else EXIT_NEGATIVE


def cmd_check(args) -> int:
    net = _valid_net(args.net)
    field = load_field(args.field, net, _params(args.param))
    rep = check_admissibility(field, samples=args.samples, tol=args.tol, seed=args.seed or 0)
    _out(args, rep.to_dict(), lambda: f"max violation {rep.max_violation:.3g} "
         f"({'pass' if rep.passed else 'FAIL'})")
    return EXIT_OK if rep.passed else EXIT_NEGATIVE


def cmd_fixture(args) -> int:
    if args.name not in FIXTURES:
        raise CLIError("unknown-fixture", f"known fixtures: {', '.join(FIXTURES)}", EXIT_USAGE)
    print(json.dumps(network_to_json(get_fixture(args.name)), indent=2))
    return EXIT_OK


def cmd_docs(args) -> int:
    parser = build_parser()
    print(parser.format_help())
    for name, sub in _subparsers(parser).items():
        print("=" * 72)
        print(sub.format_help())
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=["json", "table"], default="table", help="output format")
    p.add_argument("--seed", type=int, default=None, help="seed for every stochastic step")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-seed work")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccn", description="Typed coupled cell networks: colorings, fields, "
                     "simulation and synchrony analysis.")
    parser.add_argument("--version", action="version", version=f"ccn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="check the type axioms of a network file")
    p.add_argument("--net", required=True, help="network JSON (or fixture:NAME)")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("isomorphisms", help="list input isomorphisms")
    p.add_argument("--net", required=True)
    p.add_argument("--cell", help="source cell (default: all pairs)")
    p.add_argument("--cell2", help="target cell (default: same as --cell)")
    _common(p)
    p.set_defaults(func=cmd_isomorphisms)

    p = sub.add_parser("colorings", help="enumerate balanced colorings")
    p.add_argument("--net", required=True)
    p.add_argument("--dot", help="write the Hasse diagram as Graphviz DOT")
    p.add_argument("--brute", action="store_true", help="use the brute-force oracle (<= 10 cells)")
    p.add_argument("--max-cells", type=int, default=16)
    _common(p)
    p.set_defaults(func=cmd_colorings)

    p = sub.add_parser("quotient", help="quotient network of a balanced coloring")
    p.add_argument("--net", required=True)
    p.add_argument("--coloring", required=True, help='coloring JSON {"colors": {cell: index}}')
    p.add_argument("--out", help="write the quotient network JSON here")
    _common(p)
    p.set_defaults(func=cmd_quotient)

    p = sub.add_parser("simulate", help="integrate a DSL field")
    p.add_argument("--net", required=True)
    p.add_argument("--field", required=True, help="DSL source file")
    p.add_argument("--x0", required=True, help="initial state JSON {cell: value}")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, required=True)
    p.add_argument("--method", choices=["dopri", "rk4"], default="dopri")
    p.add_argument("--h", type=float, default=None, help="rk4 step (initial step for dopri)")
    p.add_argument("--rtol", type=float, default=1e-9)
    p.add_argument("--atol", type=float, default=1e-12)
    p.add_argument("--max-norm", type=float, default=1e8, help="blow-up bound")
    p.add_argument("--out", help="trajectory file: .csv for CSV, anything else for the binary cache")
    p.add_argument("-P", "--param", action="append", metavar="NAME=VALUE", help="override a DSL param")
    p.add_argument("--emit-plot-data", metavar="FILE", help="write gnuplot-ready columns")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="synchrony, phase-shift and periodicity analysis")
    p.add_argument("--traj", required=True, help="trajectory CSV or binary cache")
    p.add_argument("--net", required=True)
    p.add_argument("--theta", type=float, default=None, help="phase shift to test")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--window", type=float, nargs=2, metavar=("SIGMA", "TAU"))
    p.add_argument("--field", help="DSL field used for rates and interpolation")
    p.add_argument("-P", "--param", action="append", metavar="NAME=VALUE")
    p.add_argument("--periods", action="store_true", help="estimate periods and check propagation")
    p.add_argument("--period-tol", type=float, default=1e-3)
    p.add_argument("--rate-tol", type=float, default=1e-9)
    p.add_argument("--emit-plot-data", metavar="FILE")
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("experiment", help="run a seeded perturbation experiment")
    p.add_argument("--config", help="experiment JSON")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
    p.add_argument("--out", help="directory for result.json, seeds.csv, summary.csv")
    p.add_argument("--emit-plot-data", metavar="FILE")
    _common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("check", help="sample the admissibility condition of a DSL field")
    p.add_argument("--net", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("-P", "--param", action="append", metavar="NAME=VALUE")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-12)
    _common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("fixture", help="print a built-in network as JSON")
    p.add_argument("name")
    p.set_defaults(func=cmd_fixture, format="json")

    p = sub.add_parser("docs", help="print the help of every subcommand")
    p.set_defaults(func=cmd_docs, format="table")
    return parser


def _subparsers(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return dict(action.choices)
    return {}


_RUNTIME_ERRORS = {
    FormatError: "format-error", DSLError: "dsl-error", IntegrationError: "integration-error",
    TrajectoryError: "trajectory-error", EnumerationCapError: "enumeration-cap",
    ColoringError: "coloring-error", FileNotFoundError: "file-not-found",
    json.JSONDecodeError: "invalid-json",
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        _emit_error(exc.code, str(exc))
        return exc.exit_code
    except tuple(_RUNTIME_ERRORS) as exc:
        code = next(v for k, v in _RUNTIME_ERRORS.items() if isinstance(exc, k))
        if isinstance(exc, IntegrationError):
            code = exc.code
        _emit_error(code, str(exc))
        return EXIT_RUNTIME
    except (ValueError, KeyError) as exc:
        _emit_error("bad-input", str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
