"""Seeded perturbation experiments on admissible fields.

Genericity cannot be tested directly. Each experiment draws random
admissible perturbations of size ``eps`` and counts how often a property
holds; verdicts compare that frequency with a fixed threshold. Every seed
gets its own random streams derived from ``seed_base`` by counter-mode
spawning, so results do not depend on execution order or worker count.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .bumps import build_bump_basis
from .coloring import Coloring, is_balanced, synchrony_drift
from .dsl import bounded_perturbation_source, parse_field
from .fields import AdmissibilityReport, Field, check_admissibility, symmetrize, isomorphism_table
from .fixtures import get_fixture
from .formats import network_from_json
from .analysis import pattern_at, stationary_cells
from .network import TypedNetwork, sup_norm
from .simulate import IntegrationError, Trajectory, integrate


class CertificationError(RuntimeError):
    pass


# -- perturbations --------------------------------------------------------------------

@dataclass
class Perturbation:
    field: Field
    family: str
    eps: float
    certified_sup: float
    certified_c1: float | None
    admissibility: AdmissibilityReport
    source: str | None = None


def _rng(seed_base: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed_base, spawn_key=key))


def random_admissible_perturbation(net: TypedNetwork, family: str, eps: float, seed: int,
                                   reference: Trajectory | None = None, n_bumps: int = 5,
                                   cell: str | None = None, check_samples: int = 50) -> Perturbation:
    """Random admissible field with certified sup norm at most ``eps``.

    ``family="dsl"``: random saturating coefficients in DSL form (sup norm
    certified). ``family="bump"``: disjoint bumps along ``reference`` in the
    local coordinates of ``cell`` (default: the first cell with inputs),
    symmetrized, with coefficients bounded so the C1 bound is also ``eps``.
    """
    if not eps >= 0:
        raise CertificationError("eps must be nonnegative")
    rng = np.random.default_rng(seed)
    if family == "dsl":
        src = bounded_perturbation_source(net, rng, eps)
        fld = parse_field(src, net)
        sup, c1 = eps, None
    elif family == "bump":
        if reference is None:
            raise CertificationError("the bump family needs a reference trajectory")
        fld, sup, c1 = _bump_perturbation(net, eps, rng, reference, n_bumps, cell)
        src = None
    else:
        raise CertificationError(f"unknown perturbation family {family!r}")
    if sup > eps * (1 + 1e-12) or (c1 is not None and c1 > eps * (1 + 1e-12)):
        raise CertificationError(f"certified bounds {sup}, {c1} exceed eps={eps}")
    report = check_admissibility(fld, samples=check_samples, tol=1e-12, seed=seed)
    if not report.passed:
        raise CertificationError(f"perturbation is not admissible (violation {report.max_violation})")
    return Perturbation(fld, family, eps, sup, c1, report, src)


def local_curve(traj: Trajectory, c: str) -> np.ndarray:
    """Samples of ``(x_c, x_T(I(c)))`` along a trajectory, concatenated per time."""
    net = traj.net
    cols = [traj.states[:, net.slices[c]]] + [traj.states[:, net.slices[t]] for t in net.inputs(c).tails]
    return np.concatenate(cols, axis=1)


def _bump_perturbation(net, eps, rng, reference, n_bumps, cell):
    if cell is None:
        cell = next((c for c in net.cell_ids if len(net.inputs(c)) > 0), net.cell_ids[0])
    curve = local_curve(reference, cell)
    basis = build_bump_basis(curve, n_bumps, times=reference.times)
    k = len(isomorphism_table(net)[(cell, cell)])
    z = rng.uniform(-1.0, 1.0, size=n_bumps) * eps / k
    y = np.zeros(net.dim(cell))
    y[int(rng.integers(net.dim(cell)))] = 1.0

    def phi(x_c, inputs, _basis=basis, _z=z):
        p = np.concatenate([np.atleast_1d(x_c)] + [np.atleast_1d(v) for v in inputs])
        return float(_basis.combine(_z, p))

    fld = symmetrize({cell: phi}, y, net)
    fld.basis, fld.coefficients, fld.multiplicity = basis, z, k
    sup = k * float(np.max(np.abs(z)) * np.max(basis.heights)) if n_bumps else 0.0
    c1 = k * float(np.max(np.abs(z) * basis.c1_norms()))
    return fld, sup, c1


# -- configuration --------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    kind: str                                   # breakout | equilibrium | rigidity | stationarity
    network: Any = "bipartite4"                       # fixture id or network JSON document
    base_field: str = ""
    family: str = "dsl"
    eps: float = 1e-2
    seeds: int = 100
    seed_base: int = 0
    t_end: float = 20.0
    rtol: float = 1e-9
    atol: float = 1e-12
    tol: float = 1e-9
    initial_pattern: list[list[str]] | None = None
    initial_state: dict[str, Any] | None = None
    breakout_threshold: float = 1e-3
    drift_tol: float = 1e-6
    success_threshold: float = 0.95
    rate_tol: float = 1e-6
    n_bumps: int = 5
    params: dict[str, float] = dc_field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("breakout", "equilibrium", "rigidity", "stationarity"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.eps >= 0:
            raise ValueError("eps must be nonnegative")
        if self.seeds < 1:
            raise ValueError("seeds must be positive")

    @classmethod
    def from_json(cls, doc: Mapping) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config field(s) {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict:
        return asdict(self)

    def build_network(self) -> TypedNetwork:
        if isinstance(self.network, str):
            return get_fixture(self.network)
        return network_from_json(self.network)

    def build_field(self, net: TypedNetwork) -> Field:
        return parse_field(self.base_field, net, self.params or None)

    @property
    def statistical(self) -> bool:
        return self.seeds >= 30


def _initial_state(cfg: ExperimentConfig, net: TypedNetwork, rng: np.random.Generator) -> np.ndarray:
    """Random state on the exact equality set of ``initial_pattern`` (or the given state)."""
    if cfg.initial_state is not None:
        return net.state(cfg.initial_state)
    blocks = cfg.initial_pattern or [[c] for c in net.cell_ids]
    x = np.empty(net.total_dim)
    for block in blocks:
        v = rng.uniform(-1.0, 1.0, size=net.dim(block[0]))
        for c in block:
            x[net.slices[c]] = v
    return x


def _perturbed(cfg, net, base, seed_index, reference=None) -> tuple[Field, Perturbation | None]:
    if cfg.eps == 0:
        return base, None
    seed = int(np.random.SeedSequence(cfg.seed_base, spawn_key=(seed_index, 0)).generate_state(1)[0])
    p = random_admissible_perturbation(net, cfg.family, cfg.eps, seed, reference, cfg.n_bumps)
    return base + p.field, p


# -- breakout of unbalanced synchrony ---------------------------------------------------------

def _breakout_seed(cfg: ExperimentConfig, i: int) -> dict:
    net = cfg.build_network()
    base = cfg.build_field(net)
    col = Coloring.from_blocks(net.cell_ids, cfg.initial_pattern)
    x0 = _initial_state(cfg, net, _rng(cfg.seed_base, i, 1))
    reference = None
    if cfg.family == "bump":
        reference = integrate(base, x0, (0.0, cfg.t_end), rtol=cfg.rtol, atol=cfg.atol)
    fld, _ = _perturbed(cfg, net, base, i, reference)
    try:
        traj = integrate(fld, x0, (0.0, cfg.t_end), rtol=cfg.rtol, atol=cfg.atol, seed=i)
    except IntegrationError as exc:
        return {"seed": i, "error": exc.code}
    drift = np.array([synchrony_drift(net, col, s) for s in traj.states])
    over = np.nonzero(drift > cfg.breakout_threshold)[0]
    return {"seed": i, "max_deviation": float(drift.max()),
            "breakout_time": float(traj.times[over[0]]) if len(over) else None,
            "status": traj.meta["status"]}


def _map_seeds(worker, cfg: ExperimentConfig, jobs: int) -> list[dict]:
    idx = range(cfg.seeds)
    if jobs and jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(worker, [cfg] * cfg.seeds, idx))
    else:
        rows = [worker(cfg, i) for i in idx]
    return sorted(rows, key=lambda r: r["seed"])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]
    summary: dict

    @property
    def success(self) -> bool:
        return bool(self.summary.get("success"))

    def to_json(self) -> dict:
        return {"config": self.config.to_json(), "summary": self.summary, "seeds": self.rows}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "result.json").write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
        keys = sorted({k for r in self.rows for k in r}, key=lambda k: (k != "seed", k))
        with open(out / "seeds.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in r.items()})
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "value"])
            for k, v in self.summary.items():
                w.writerow([k, json.dumps(v) if isinstance(v, (list, dict)) else v])


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"seeds": cfg.seeds, "seed_base": cfg.seed_base, "eps": cfg.eps, "family": cfg.family,
            "statistical": cfg.statistical}


def breakout_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Start exactly on ``initial_pattern`` and watch same-color gaps under perturbation.

    Unbalanced pattern: success when the breakout fraction (gap above
    ``breakout_threshold``) reaches ``success_threshold``. Balanced pattern
    (control): success when no seed drifts above ``drift_tol``.
    """
    net = cfg.build_network()
    col = Coloring.from_blocks(net.cell_ids, cfg.initial_pattern)
    balanced = is_balanced(net, col).balanced
    rows = _map_seeds(_breakout_seed, cfg, jobs)
    ok_rows = [r for r in rows if "error" not in r]
    times = [r["breakout_time"] for r in ok_rows if r["breakout_time"] is not None]
    devs = [r["max_deviation"] for r in ok_rows]
    summary = {**_provenance(cfg), "pattern": str(col), "balanced": balanced,
               "effective_seeds": len(ok_rows), "breakouts": len(times),
               "breakout_fraction": len(times) / len(ok_rows) if ok_rows else 0.0,
               "median_breakout_time": float(np.median(times)) if times else None,
               "max_deviation": max(devs) if devs else None,
               "drift_exceedances": sum(d > cfg.drift_tol for d in devs),
               "threshold": cfg.success_threshold, "breakout_threshold": cfg.breakout_threshold}
    if balanced:
        summary["mode"] = "control"
        summary["success"] = bool(ok_rows) and summary["drift_exceedances"] == 0
    else:
        summary["mode"] = "breakout"
        summary["success"] = summary["breakout_fraction"] >= cfg.success_threshold
    return ExperimentResult(cfg, rows, summary)


def unbalanced_decay_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    net = cfg.build_network()
    if is_balanced(net, Coloring.from_blocks(net.cell_ids, cfg.initial_pattern)).balanced:
        raise ValueError("unbalanced_decay_experiment needs an unbalanced initial pattern")
    return breakout_experiment(cfg, jobs)


# -- equilibria -----------------------------------------------------------------------

@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual: float


def fd_jacobian(field: Field, x: np.ndarray, step: float = 1e-7) -> np.ndarray:
    n = len(x)
    jac = np.empty((n, n))
    for j in range(n):
        h = step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (field(xp) - field(xm)) / (2 * h)
    return jac


def damped_newton(field: Field, x0, max_iter: int = 50, tol: float = 1e-12) -> NewtonResult:
    """Newton's method on ``f(x) = 0`` with a finite-difference Jacobian and step halving."""
    x = np.array(x0, dtype=float)
    fx = field(x)
    res = sup_norm(fx)
    for it in range(1, max_iter + 1):
        if res <= tol:
            return NewtonResult(x, True, it - 1, res)
        try:
            dx = np.linalg.solve(fd_jacobian(field, x), -fx)
        except np.linalg.LinAlgError:
            return NewtonResult(x, False, it, res)
        lam = 1.0
        while lam > 1e-10:
            cand = x + lam * dx
            fc = field(cand)
            if np.all(np.isfinite(fc)) and sup_norm(fc) < res:
                break
            lam *= 0.5
        else:
            return NewtonResult(x, res <= tol, it, res)
        x, fx, res = cand, fc, sup_norm(fc)
    return NewtonResult(x, res <= tol, max_iter, res)


def _equilibrium_seed(cfg: ExperimentConfig, i: int) -> dict:
    net = cfg.build_network()
    base = cfg.build_field(net)
    x_base = damped_newton(base, _initial_state(cfg, net, _rng(cfg.seed_base, 0, 1)))
    fld, _ = _perturbed(cfg, net, base, i)
    sol = damped_newton(fld, x_base.x)
    if not sol.converged:
        return {"seed": i, "converged": False, "residual": sol.residual}
    pat = pattern_at(net, sol.x, cfg.tol)
    return {"seed": i, "converged": True, "residual": sol.residual, "pattern": str(pat),
            "blocks": [list(b) for b in pat.blocks()],
            "balanced": is_balanced(net, pat).balanced, "state": sol.x.tolist()}


def equilibrium_pattern_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Locate the base equilibrium, then continue it under each perturbation."""
    net = cfg.build_network()
    base = cfg.build_field(net)
    sol = damped_newton(base, _initial_state(cfg, net, _rng(cfg.seed_base, 0, 1)))
    base_pat = pattern_at(net, sol.x, cfg.tol) if sol.converged else None
    rows = _map_seeds(_equilibrium_seed, cfg, jobs)
    conv = [r for r in rows if r["converged"]]
    n_bal = sum(r["balanced"] for r in conv)
    summary = {**_provenance(cfg), "base_converged": sol.converged,
               "base_equilibrium": sol.x.tolist(),
               "base_pattern": str(base_pat) if base_pat else None,
               "base_balanced": is_balanced(net, base_pat).balanced if base_pat else None,
               "effective_seeds": len(conv), "balanced_count": n_bal,
               "unbalanced_count": len(conv) - n_bal,
               "balanced_fraction": n_bal / len(conv) if conv else 0.0,
               "threshold": cfg.success_threshold}
    summary["base_flagged"] = summary["base_balanced"] is False
    summary["success"] = bool(conv) and summary["balanced_fraction"] >= cfg.success_threshold
    return ExperimentResult(cfg, rows, summary)


def rigidity_probe(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Continue the base equilibrium under perturbations and compare patterns.

    Rigid at resolution (eps, effective seeds) iff every continued pattern
    equals the base pattern.
    """
    res = equilibrium_pattern_experiment(cfg, jobs)
    base = res.summary["base_pattern"]
    conv = [r for r in res.rows if r["converged"]]
    changed = [r["seed"] for r in conv if r["pattern"] != base]
    rigid = base is not None and bool(conv) and not changed
    summary = {**res.summary, "rigid": rigid, "changed_seeds": changed,
               "resolution": {"eps": cfg.eps, "effective_seeds": len(conv)}}
    summary["success"] = rigid
    return ExperimentResult(cfg, res.rows, summary)


# -- stationarity -----------------------------------------------------------------------

def _stationarity_seed(cfg: ExperimentConfig, i: int) -> dict:
    net = cfg.build_network()
    base = cfg.build_field(net)
    x0 = _initial_state(cfg, net, _rng(cfg.seed_base, i, 1))
    fld, _ = _perturbed(cfg, net, base, i)
    traj = integrate(fld, x0, (0.0, cfg.t_end), rtol=cfg.rtol, atol=cfg.atol)
    rep = stationary_cells(traj, traj.t0, traj.t1, cfg.rate_tol)
    return {"seed": i, "stationary": sorted(rep.stationary), "non_generic": rep.non_generic,
            "moving_inputs": rep.moving_inputs}


def stationarity_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """How often a stationary cell with moving inputs survives perturbation."""
    net = cfg.build_network()
    base = cfg.build_field(net)
    x0 = _initial_state(cfg, net, _rng(cfg.seed_base, 0, 1))
    traj = integrate(base, x0, (0.0, cfg.t_end), rtol=cfg.rtol, atol=cfg.atol)
    base_rep = stationary_cells(traj, traj.t0, traj.t1, cfg.rate_tol)
    rows = _map_seeds(_stationarity_seed, cfg, jobs)
    persist = sum(r["non_generic"] for r in rows)
    frac = persist / len(rows)
    summary = {**_provenance(cfg), "base_stationary": sorted(base_rep.stationary),
               "base_non_generic": base_rep.non_generic, "persisting": persist,
               "persist_fraction": frac, "threshold": cfg.success_threshold,
               "success": frac <= 1.0 - cfg.success_threshold + 1e-12}
    return ExperimentResult(cfg, rows, summary)


RUNNERS = {
    "breakout": breakout_experiment,
    "equilibrium": equilibrium_pattern_experiment,
    "rigidity": rigidity_probe,
    "stationarity": stationarity_experiment,
}


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    return RUNNERS[cfg.kind](cfg, jobs)


# -- ready-made configurations --------------------------------------------------------------

# Identical decoupled cells: every pattern is invariant, which is as far from
# generic as a field gets.
DECOUPLED_BIPARTITE4 = """
class L { dx = -0.1 * self; }
class R { dx = -0.1 * self; }
"""

LINEAR_BIPARTITE4 = """
class L { dx = -self; }
class R { dx = -self; }
"""

# Bistable right cells, monotone left cells: an equilibrium with x1 = x3,
# x2 near 1 and x4 near -1 has pattern {1~3} exactly.
BISTABLE_BIPARTITE4 = """
class L { dx = -self + 0.5 * agg_mean(magenta, u -> u); }
class R { dx = self - self^3 + 0.2 * agg_mean(blue, u -> u); }
"""

# Accidental equality: left cells and cell 2 settle on the same value 0.5.
ACCIDENTAL_BIPARTITE4 = """
class L { dx = 0.5 - self; }
class R { dx = -(self - 0.5) * (self + 1); }
"""

CHAIN_FROZEN = """
class U { dx = 0; }
class D { dx = -self + tanh(agg_sum(e, u -> u)) + sin(3 * self); }
"""

# Upstream rotation keeps |x1| = 1, so the downstream forcing cancels and
# x2 stays at 0 while its input moves.
CHAIN_CANCELLATION = """
class U { dx[0] = -self[1]; dx[1] = self[0]; }
class D { dx = -self + agg_sum(e, u -> u[0]^2 + u[1]^2 - 1); }
"""

PRESETS: dict[str, dict] = {
    "breakout-bipartite4": dict(
        kind="breakout", network="bipartite4", base_field=DECOUPLED_BIPARTITE4,
        initial_pattern=[["1", "2", "3"], ["4"]], eps=1e-2, t_end=20.0),
    "control-bipartite4": dict(
        kind="breakout", network="bipartite4", base_field=DECOUPLED_BIPARTITE4,
        initial_pattern=[["1", "3"], ["2"], ["4"]], eps=1e-2, t_end=10.0),
    "equilibrium-bipartite4": dict(
        kind="equilibrium", network="bipartite4", base_field=LINEAR_BIPARTITE4,
        initial_state={"1": 0.3, "2": -0.2, "3": 0.1, "4": 0.4}, eps=1e-2),
    "rigidity-bipartite4": dict(
        kind="rigidity", network="bipartite4", base_field=BISTABLE_BIPARTITE4,
        initial_state={"1": 0.0, "2": 1.0, "3": 0.0, "4": -1.0}, eps=1e-2, seeds=30),
    "rigidity-bipartite4-accidental": dict(
        kind="rigidity", network="bipartite4", base_field=ACCIDENTAL_BIPARTITE4,
        initial_state={"1": 0.5, "2": 0.5, "3": 0.5, "4": -1.0}, eps=1e-2, seeds=30),
    "stationarity-chain": dict(
        kind="stationarity", network="chain2", base_field=CHAIN_CANCELLATION,
        initial_state={"1": [1.0, 0.0], "2": 0.0}, eps=1e-2, t_end=10.0),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    try:
        doc = dict(PRESETS[name])
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}") from None
    doc.update(overrides)
    doc.setdefault("name", name)
    return ExperimentConfig.from_json(doc)
