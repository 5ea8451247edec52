"""Synchrony, stationarity, phase-shift and periodicity analysis of trajectories.

Continuous-time statements are checked on samples: the stored grid, plus
dense-output midpoints where an interval is involved. Every verdict is
therefore "at resolution h". Findings that contradict generic behaviour are
reported as data and never raised.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .coloring import (AMBIGUITY_FACTOR, BalancednessCertificate, Coloring,
                       color_preserving_isomorphism, is_balanced, is_finer, meet)
from .fields import Field
from .network import TypedNetwork, doubled_network
from .simulate import Trajectory, dense_eval

DEFAULT_TOL = 1e-9
REPORT_SCHEMA_VERSION = 1


class AnalysisError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


# -- pairwise deviations and union-find ---------------------------------------------

def _pairs(net: TypedNetwork) -> list[tuple[str, str]]:
    ids = net.cell_ids
    return [(ids[i], ids[j]) for i in range(len(ids)) for j in range(i + 1, len(ids))]


def pair_deviations(net: TypedNetwork, states: np.ndarray) -> tuple[list[tuple[str, str]], np.ndarray]:
    """Sup-norm gaps for every cell pair; shape (samples, pairs). Infinite across dimensions."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    pairs = _pairs(net)
    out = np.empty((states.shape[0], len(pairs)))
    for k, (c, c2) in enumerate(pairs):
        if net.dim(c) != net.dim(c2):
            out[:, k] = np.inf
        else:
            out[:, k] = np.max(np.abs(states[:, net.slices[c]] - states[:, net.slices[c2]]), axis=1)
    return pairs, out


def _union_find_coloring(net: TypedNetwork, pairs, equal_mask) -> Coloring:
    parent = {c: c for c in net.cell_ids}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for (c, c2), eq in zip(pairs, equal_mask):
        if eq:
            r, r2 = find(c), find(c2)
            if r != r2:
                parent[r2] = r
    return Coloring.from_assignment(net.cell_ids, {c: find(c) for c in net.cell_ids})


def pattern_at(net: TypedNetwork, x: np.ndarray, tol: float = DEFAULT_TOL,
               with_flags: bool = False):
    """Coloring induced by ``tol``-equalities of one state (transitively closed).

    With ``with_flags`` also returns the ambiguous pairs: pairs whose direct
    gap lies in ``(tol, 10 tol]``, whether or not the closure merged them.
    """
    x = net.check_state(np.asarray(x, dtype=float))
    pairs, dev = pair_deviations(net, x)
    col = _union_find_coloring(net, pairs, dev[0] <= tol)
    if not with_flags:
        return col
    amb = [p for p, d in zip(pairs, dev[0]) if tol < d <= AMBIGUITY_FACTOR * tol]
    return col, amb


# -- interval patterns ------------------------------------------------------------------

@dataclass
class PatternReport:
    interval: tuple[float, float]
    pattern: Coloring
    samples: int
    same_color_max_deviation: dict[tuple[str, str], float]
    separation: dict[tuple[str, str], float]
    ambiguous: list[tuple[str, str]]
    certificate: BalancednessCertificate

    @property
    def balanced(self) -> bool:
        return self.certificate.balanced

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA_VERSION,
            "interval": list(self.interval),
            "pattern": self.pattern.to_json()["colors"],
            "pattern_text": str(self.pattern),
            "samples": self.samples,
            "same_color_max_deviation": {f"{a}|{b}": v for (a, b), v in self.same_color_max_deviation.items()},
            "separation": {f"{a}|{b}": v for (a, b), v in self.separation.items()},
            "ambiguous": [list(p) for p in self.ambiguous],
            "balanced": self.certificate.balanced,
            "certificate": self.certificate.to_dict(),
        }


def interval_samples(traj: Trajectory, sigma: float, tau: float, midpoints: bool = True,
                     field: Field | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample times and states on ``[sigma, tau]``: grid points, endpoints and midpoints."""
    if sigma > tau:
        raise AnalysisError("empty-interval", f"[{sigma}, {tau}] is empty")
    if sigma < traj.t0 or tau > traj.t1:
        raise AnalysisError("out-of-span", f"[{sigma}, {tau}] is outside [{traj.t0}, {traj.t1}]")
    idx = traj.window(sigma, tau)
    ts = set(traj.times[idx].tolist()) | {float(sigma), float(tau)}
    ts = np.array(sorted(ts))
    if midpoints and len(ts) > 1:
        ts = np.sort(np.concatenate([ts, 0.5 * (ts[1:] + ts[:-1])]))
    states = np.array([dense_eval(traj, t, field) for t in ts])
    return ts, states


def pattern_on_interval(traj: Trajectory, sigma: float, tau: float, tol: float = DEFAULT_TOL,
                        midpoints: bool = True, field: Field | None = None) -> PatternReport:
    """Meet of the sample patterns: a pair shares a color iff it does at every sample."""
    net = traj.net
    ts, states = interval_samples(traj, sigma, tau, midpoints, field)
    pairs, dev = pair_deviations(net, states)
    per_sample = [_union_find_coloring(net, pairs, row <= tol) for row in dev]
    pattern = meet(per_sample)
    worst = dev.max(axis=0)
    same = {p: float(w) for p, w in zip(pairs, worst) if pattern.same(*p)}
    sep = {p: float(w) for p, w in zip(pairs, worst) if not pattern.same(*p)}
    amb = [p for p, w in sep.items() if w <= AMBIGUITY_FACTOR * tol]
    amb += [p for p, w in same.items() if w > tol]
    return PatternReport((float(sigma), float(tau)), pattern, len(ts), same, sep, amb,
                         is_balanced(net, pattern))


@dataclass
class PatternWindow:
    start: float
    end: float
    first: int
    last: int
    pattern: Coloring
    semicontinuous: bool

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "samples": [self.first, self.last],
                "pattern": str(self.pattern), "semicontinuous": self.semicontinuous}


def sample_patterns(traj: Trajectory, tol: float = DEFAULT_TOL) -> list[Coloring]:
    net = traj.net
    pairs, dev = pair_deviations(net, traj.states)
    cache: dict[bytes, Coloring] = {}
    out = []
    for row in dev:
        mask = row <= tol
        key = mask.tobytes()
        if key not in cache:
            cache[key] = _union_find_coloring(net, pairs, mask)
        out.append(cache[key])
    return out


def constant_pattern_window(traj: Trajectory, tol: float = DEFAULT_TOL,
                            field: Field | None = None, probe: float = 1e-3) -> list[PatternWindow]:
    """Split the sample grid into maximal runs with one pattern.

    Each window also carries a sampled semicontinuity check: at both boundary
    samples ``t``, the patterns at ``t -/+ delta`` (dense output,
    ``delta = probe * local spacing``) must be finer than or equal to the
    pattern at ``t``. Equalities may be lost next to ``t`` but not gained.
    """
    pats = sample_patterns(traj, tol)
    windows = []
    start = 0
    for i in range(1, len(pats) + 1):
        if i == len(pats) or pats[i] != pats[start]:
            ok = all(_semicontinuous_at(traj, j, pats[j], tol, field, probe)
                     for j in {start, i - 1})
            windows.append(PatternWindow(float(traj.times[start]), float(traj.times[i - 1]),
                                         start, i - 1, pats[start], ok))
            start = i
    return windows


def _semicontinuous_at(traj, i, pat, tol, field, probe) -> bool:
    times = traj.times
    for j, sgn in ((i - 1, -1), (i + 1, 1)):
        if 0 <= j < len(times):
            t = times[i] + sgn * probe * abs(times[j] - times[i])
            near = pattern_at(traj.net, dense_eval(traj, t, field), tol)
            if not is_finer(near, pat):
                return False
    return True


# -- stationarity ---------------------------------------------------------------------

@dataclass
class StationarityReport:
    interval: tuple[float, float]
    stationary: set[str]
    max_rate: dict[str, float]
    moving_inputs: dict[str, list[str]]

    @property
    def propagation_holds(self) -> bool:
        return not self.moving_inputs

    @property
    def non_generic(self) -> bool:
        return bool(self.moving_inputs)

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA_VERSION, "interval": list(self.interval),
                "stationary": sorted(self.stationary), "max_rate": self.max_rate,
                "propagation_holds": self.propagation_holds,
                "non_generic": ({c: v for c, v in self.moving_inputs.items()}
                                if self.moving_inputs else {})}


def stationary_cells(traj: Trajectory, sigma: float, tau: float, tol_rate: float = 1e-9,
                     field: Field | None = None) -> StationarityReport:
    """Cells whose rate ``|f_c(x(t))|`` stays below ``tol_rate`` on ``[sigma, tau]``.

    Rates come from the field (``field`` or the derivatives stored by the
    integrator), not from differencing. A stationary cell with a moving input
    cell is reported as a non-generic configuration.
    """
    net = traj.net
    idx = traj.window(sigma, tau)
    if len(idx) == 0:
        raise AnalysisError("empty-interval", f"no samples in [{sigma}, {tau}]")
    if field is not None:
        rates = np.array([field(traj.states[i]) for i in idx])
    elif traj.derivs is not None:
        rates = traj.derivs[idx]
    else:
        raise AnalysisError("no-rates", "stationarity needs the field or stored derivatives")
    max_rate = {c: float(np.max(np.abs(rates[:, net.slices[c]]), initial=0.0)) for c in net.cell_ids}
    still = {c for c, r in max_rate.items() if r <= tol_rate}
    moving = {}
    for c in net.cell_ids:
        if c in still:
            bad = [c2 for c2 in dict.fromkeys(net.input_cells(c)) if c2 not in still]
            if bad:
                moving[c] = bad
    return StationarityReport((float(sigma), float(tau)), still, max_rate, moving)


# -- phase shifts ---------------------------------------------------------------------

@dataclass
class PhaseShiftReport:
    theta: float
    window: tuple[float, float]
    doubled: TypedNetwork
    pairing: dict[str, str]
    pattern: Coloring
    certificate: BalancednessCertificate
    relations: list[tuple[str, str]]       # x_c(t) = x_c2(t + theta), c != c2
    self_shifts: list[str]                 # x_c(t) = x_c(t + theta)
    violations: list[tuple[str, str]]      # related pairs without an aligning isomorphism
    periods: dict[str, float | None] | None = None

    @property
    def pairs(self) -> list[tuple[str, str]]:
        """Unordered distinct related pairs."""
        order = {c: i for i, c in enumerate(self.pairing)}
        seen = {tuple(sorted(p, key=order.get)) for p in self.relations}
        return sorted(seen, key=lambda p: (order[p[0]], order[p[1]]))

    @property
    def non_generic(self) -> bool:
        return bool(self.violations)

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA_VERSION, "theta": self.theta, "window": list(self.window),
                "pairs": [list(p) for p in self.pairs],
                "relations": [list(p) for p in self.relations],
                "self_shifts": self.self_shifts,
                "doubled_pattern": str(self.pattern), "balanced": self.certificate.balanced,
                "non_generic": [list(p) for p in self.violations], "periods": self.periods}


def _uniform_step(times: np.ndarray) -> float | None:
    if len(times) < 2:
        return None
    d = np.diff(times)
    h = (times[-1] - times[0]) / (len(times) - 1)
    return float(h) if np.max(np.abs(d - h)) <= 1e-9 * h else None


def shifted_states(traj: Trajectory, theta: float, field: Field | None = None,
                   midpoints: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample times ``t`` in ``[t0, t1 - theta]`` with ``x(t)`` and ``x(t + theta)``.

    On a uniform grid with ``theta`` a multiple of the step the shifted
    samples are read off the grid directly, with no interpolation.
    """
    if theta < 0:
        raise AnalysisError("bad-theta", "theta must be nonnegative")
    if theta > traj.t1 - traj.t0:
        raise AnalysisError("theta-exceeds-span", f"theta={theta} exceeds the span {traj.t1 - traj.t0}")
    h = _uniform_step(traj.times)
    if h is not None and not midpoints:
        m = theta / h
        if abs(m - round(m)) <= 1e-9 * max(1.0, m):
            m = int(round(m))
            n = len(traj.times) - m
            return traj.times[:n], traj.states[:n], traj.states[m:m + n]
    ts = traj.times[traj.times <= traj.t1 - theta]
    if midpoints and len(ts) > 1:
        ts = np.sort(np.concatenate([ts, 0.5 * (ts[1:] + ts[:-1])]))
    now = np.array([dense_eval(traj, t, field) for t in ts])
    later = np.array([dense_eval(traj, min(t + theta, traj.t1), field) for t in ts])
    return ts, now, later


def detect_phase_shift(traj: Trajectory, theta: float, tol: float = DEFAULT_TOL,
                       field: Field | None = None, with_periods: bool = False) -> PhaseShiftReport:
    """Pattern of ``X(t) = (x(t), x(t + theta))`` on the doubled network.

    Cross-copy colors give the relations ``x_c(t) = x_c2(t + theta)``. For
    each one the aligning condition is checked: a color-preserving input
    isomorphism from ``c`` in the first copy to ``c2`` in the second.
    """
    net = traj.net
    doubled, pair = doubled_network(net)
    ts, now, later = shifted_states(traj, theta, field)
    states = np.concatenate([now, later], axis=1)
    pairs, dev = pair_deviations(doubled, states)
    pattern = _union_find_coloring(doubled, pairs, np.all(dev <= tol, axis=0))
    relations, self_shifts, violations = [], [], []
    for c in net.cell_ids:
        for c2 in net.cell_ids:
            if pattern.same(c, pair[c2]):
                if c == c2:
                    self_shifts.append(c)
                else:
                    relations.append((c, c2))
                if color_preserving_isomorphism(doubled, pattern, c, pair[c2]) is None:
                    violations.append((c, c2))
    periods = None
    if with_periods:
        periods = periodicity_report(traj, field=field).periods
    return PhaseShiftReport(float(theta), (float(ts[0]), float(ts[-1])), doubled, pair, pattern,
                            is_balanced(doubled, pattern), relations, self_shifts, violations, periods)


# -- periodicity ----------------------------------------------------------------------

@dataclass
class PeriodEstimate:
    status: str                 # periodic | constant | aperiodic
    period: float | None
    residual: float | None      # relative RMS mismatch of x(t + period) - x(t)

    def to_dict(self) -> dict:
        return {"status": self.status, "period": self.period, "residual": self.residual}


def _uniform_resample(traj: Trajectory, field: Field | None, min_points: int):
    h = _uniform_step(traj.times)
    if h is not None and len(traj) >= min_points:
        return traj.times, traj.states
    ts = np.linspace(traj.t0, traj.t1, max(min_points, len(traj)))
    return ts, np.array([dense_eval(traj, t, field) for t in ts])


def _mismatch(ts: np.ndarray, y: np.ndarray, tau: float) -> float:
    """Mean squared gap between y(t + tau) and y(t), y linearly interpolated."""
    mask = ts <= ts[-1] - tau
    if mask.sum() < 2:
        return math.inf
    t = ts[mask]
    shifted = np.column_stack([np.interp(t + tau, ts, y[:, k]) for k in range(y.shape[1])])
    return float(np.mean((shifted - y[mask]) ** 2))


def estimate_period(ts: np.ndarray, y: np.ndarray, floor: float | None = None,
                    const_tol: float = 1e-9, residual_tol: float = 1e-2,
                    min_periods: float = 3.0) -> PeriodEstimate:
    """Autocorrelation peak, quadratic peak interpolation, then a local least-mismatch fit.

    Candidate peaks are tried by increasing lag, so the smallest period
    whose fit passes ``residual_tol`` is returned.
    """
    y = np.asarray(y, dtype=float).reshape(len(ts), -1)
    if float(np.max(np.ptp(y, axis=0))) <= const_tol:
        return PeriodEstimate("constant", None, None)
    dt = (ts[-1] - ts[0]) / (len(ts) - 1)
    floor = 10 * dt if floor is None else floor
    n = len(ts)
    kmin = max(1, int(math.ceil(floor / dt)))
    kmax = int((n - 1) / min_periods)
    if kmax <= kmin + 1:
        raise AnalysisError("insufficient-span", "trajectory too short for period estimation")
    y0 = y - y.mean(axis=0)
    spec = np.fft.rfft(y0, 2 * n, axis=0)
    acf = np.fft.irfft(np.abs(spec) ** 2, axis=0)[:n].sum(axis=1)
    acf = acf / (n - np.arange(n))
    if acf[0] <= 0:
        return PeriodEstimate("constant", None, None)
    acf = acf / acf[0]
    scale = float(np.mean(y0 ** 2))
    for k in range(kmin, kmax):
        if not (acf[k] > 0.5 and acf[k] >= acf[k - 1] and acf[k] >= acf[k + 1]):
            continue
        a, b, c = acf[k - 1], acf[k], acf[k + 1]
        denom = a - 2 * b + c
        off = 0.5 * (a - c) / denom if denom != 0 else 0.0
        p0 = (k + max(-0.5, min(0.5, off))) * dt
        res = minimize_scalar(lambda tau: _mismatch(ts, y, tau), bounds=(p0 - 2 * dt, p0 + 2 * dt),
                              method="bounded", options={"xatol": 1e-12 * p0})
        resid = math.sqrt(max(res.fun, 0.0) / scale)
        if resid <= residual_tol:
            return PeriodEstimate("periodic", float(res.x), resid)
    return PeriodEstimate("aperiodic", None, None)


@dataclass
class PropagationCheck:
    cell: str
    input_cell: str
    theta: float
    input_period: float | None
    input_status: str
    multiple: int | None
    ok: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class PeriodicityReport:
    estimates: dict[str, PeriodEstimate]
    checks: list[PropagationCheck]
    whole_state: PeriodEstimate | None
    whole_state_ok: bool | None
    rel_tol: float
    max_multiple: int

    @property
    def periods(self) -> dict[str, float | None]:
        return {c: e.period for c, e in self.estimates.items()}

    @property
    def verdict(self) -> bool:
        return all(ch.ok for ch in self.checks) and self.whole_state_ok is not False

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA_VERSION, "rel_tol": self.rel_tol,
                "max_multiple": self.max_multiple,
                "cells": {c: e.to_dict() for c, e in self.estimates.items()},
                "checks": [ch.to_dict() for ch in self.checks],
                "whole_state": None if self.whole_state is None else self.whole_state.to_dict(),
                "whole_state_ok": self.whole_state_ok, "verdict": self.verdict}


def divides_multiple(p: float, theta: float, rel_tol: float, max_multiple: int) -> int | None:
    """Smallest ``k <= max_multiple`` such that ``k * theta`` is a multiple of ``p``."""
    for k in range(1, max_multiple + 1):
        m = round(k * theta / p)
        if m >= 1 and abs(m * p - k * theta) <= rel_tol * k * theta:
            return k
    return None


def is_transitive(net: TypedNetwork) -> bool:
    cells = set(net.cell_ids)
    return all(cells <= set(net.upstream(c)) | {c} for c in net.cell_ids)


def periodicity_report(traj: Trajectory, rel_tol: float = 1e-3, max_multiple: int = 8,
                       field: Field | None = None, const_tol: float = 1e-9,
                       residual_tol: float = 1e-2, min_points: int = 4096) -> PeriodicityReport:
    """Per-cell periods and the propagation check to direct and indirect inputs.

    For a cell with period ``theta``, each upstream cell must be constant or
    periodic with some period in ``theta * N``: its minimal period ``p`` has
    to divide ``k * theta`` for a ``k <= max_multiple``, within ``rel_tol``.
    On transitive networks the whole state's period must be a multiple of
    every cell period.
    """
    net = traj.net
    ts, states = _uniform_resample(traj, field, min_points)
    est = {}
    for c in net.cell_ids:
        est[c] = estimate_period(ts, states[:, net.slices[c]], const_tol=const_tol,
                                 residual_tol=residual_tol)
    checks = []
    for c, e in est.items():
        if e.status != "periodic":
            continue
        for c2 in net.upstream(c):
            if c2 == c:
                continue
            e2 = est[c2]
            if e2.status == "constant":
                checks.append(PropagationCheck(c, c2, e.period, None, "constant", None, True))
            elif e2.status == "periodic":
                k = divides_multiple(e2.period, e.period, rel_tol, max_multiple)
                checks.append(PropagationCheck(c, c2, e.period, e2.period, "periodic", k, k is not None))
            else:
                checks.append(PropagationCheck(c, c2, e.period, None, "aperiodic", None, False))
    whole, whole_ok = None, None
    if is_transitive(net) and any(e.status == "periodic" for e in est.values()):
        whole = estimate_period(ts, states, const_tol=const_tol, residual_tol=residual_tol)
        if whole.status == "periodic":
            whole_ok = all(divides_multiple(e.period, whole.period, rel_tol, 1) is not None
                           for e in est.values() if e.status == "periodic")
        else:
            whole_ok = False
    return PeriodicityReport(est, checks, whole, whole_ok, rel_tol, max_multiple)


def windows_balanced(traj: Trajectory, tol: float = DEFAULT_TOL) -> list[tuple[PatternWindow, bool]]:
    """Each constant-pattern window with the balancedness of its pattern."""
    return [(w, is_balanced(traj.net, w.pattern).balanced) for w in constant_pattern_window(traj, tol)]
