"""Integration of dx/dt = f(x), trajectory storage and quotient/lift checks."""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np

from .coloring import Coloring, is_balanced, quotient_network
from .fields import Field, FieldEvaluationError
from .network import TypedNetwork, sup_norm

DEFAULT_RTOL = 1e-9
DEFAULT_ATOL = 1e-12
DEFAULT_MAX_NORM = 1e8


class IntegrationError(RuntimeError):
    def __init__(self, code: str, message: str, t: float | None = None):
        super().__init__(f"{code}: {message}" + (f" at t={t!r}" if t is not None else ""))
        self.code, self.t = code, t


class TrajectoryError(ValueError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray                   # (N,)
    states: np.ndarray                  # (N, n)
    net: TypedNetwork
    derivs: np.ndarray | None = None    # (N, n) field values at the samples
    dense: np.ndarray | None = None     # (N-1, 5, n) Dormand-Prince continuous extension
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise TrajectoryError("a trajectory needs at least one sample")
        if self.states.shape != (len(self.times), self.net.total_dim):
            raise TrajectoryError(f"states have shape {self.states.shape}, expected "
                                  f"{(len(self.times), self.net.total_dim)}")
        if np.any(np.diff(self.times) <= 0):
            raise TrajectoryError("time grid must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def cell_series(self, c: str) -> np.ndarray:
        return self.states[:, self.net.slices[c]]

    def window(self, sigma: float, tau: float) -> np.ndarray:
        """Indices of samples with sigma <= t <= tau."""
        return np.nonzero((self.times >= sigma) & (self.times <= tau))[0]


# -- Runge-Kutta kernels ----------------------------------------------------------------

def _finite(x) -> bool:
    return bool(np.all(np.isfinite(x)))


def _eval(field: Field, x: np.ndarray, t: float) -> np.ndarray:
    try:
        return field(x)
    except FieldEvaluationError as exc:
        raise IntegrationError("field-evaluation", str(exc), t) from None


def _integrate_rk4(field, x0, t0, t1, h, max_norm, stops):
    times, states, derivs = [t0], [x0], []
    x, t = x0, t0
    targets = sorted({s for s in stops if t0 < s < t1} | {t1})
    status = "ok"
    k1 = _eval(field, x, t)
    for target in targets:
        while t < target:
            step = min(h, target - t)
            # land exactly on the target instead of leaving a sliver step
            if target - (t + step) < 1e-9 * h:
                step = target - t
            k2 = _eval(field, x + 0.5 * step * k1, t)
            k3 = _eval(field, x + 0.5 * step * k2, t)
            k4 = _eval(field, x + step * k3, t)
            x_new = x + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t_new = target if step == target - t else t + step
            if not _finite(x_new):
                raise IntegrationError("nonfinite-state", "state became non-finite", t_new)
            if sup_norm(x_new) > max_norm:
                status = "blow-up"
                break
            derivs.append(k1)
            x, t = x_new, t_new
            times.append(t)
            states.append(x)
            k1 = _eval(field, x, t)
        if status != "ok":
            break
    derivs.append(k1)
    return times, states, derivs, None, status


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
# coefficients of the fourth-order continuous extension
_D = np.array([-12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
               -10690763975 / 1880347072, 701980252875 / 199316789632,
               -1453857185 / 822651844, 69997945 / 29380423])


def _initial_step(field, x, k1, t0, t1, rtol, atol):
    sc = atol + rtol * np.abs(x)
    d0 = np.sqrt(np.mean((x / sc) ** 2))
    d1 = np.sqrt(np.mean((k1 / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, t1 - t0)
    k2 = _eval(field, x + h0 * k1, t0)
    d2 = np.sqrt(np.mean(((k2 - k1) / sc) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t1 - t0)


def _integrate_dopri(field, x0, t0, t1, rtol, atol, max_norm, stops, h_init, max_steps):
    x, t = x0, t0
    k1 = _eval(field, x, t)
    times, states, derivs, dense = [t0], [x0], [k1], []
    targets = sorted({s for s in stops if t0 < s < t1} | {t1})
    h = h_init or _initial_step(field, x, k1, t0, t1, rtol, atol)
    status, steps = "ok", 0
    ti = 0
    while ti < len(targets):
        target = targets[ti]
        if steps >= max_steps:
            raise IntegrationError("too-many-steps", f"exceeded {max_steps} steps", t)
        if h < 1e-14 * max(abs(t), 1.0):
            raise IntegrationError("step-underflow", f"step size {h:.3g} underflowed", t)
        last = t + h >= target - 1e-12 * max(abs(target), 1.0)
        step = target - t if last else h
        ks = [k1]
        for i in range(1, 7):
            xi = x + step * sum(a * k for a, k in zip(_A[i], ks))
            ks.append(_eval(field, xi, t + _C[i] * step))
        x_new = x + step * sum(b * k for b, k in zip(_B[:6], ks[:6]))
        steps += 1
        if not _finite(x_new) or not _finite(ks[6]):
            h = 0.25 * step
            continue
        err_vec = step * sum(e * k for e, k in zip(_E, ks))
        sc = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
        err = float(np.sqrt(np.mean((err_vec / sc) ** 2))) if len(x) else 0.0
        if err <= 1.0:
            t_new = target if last else t + step
            if sup_norm(x_new) > max_norm:
                status = "blow-up"
                break
            ydiff = x_new - x
            bspl = step * ks[0] - ydiff
            dense.append(np.stack([x, ydiff, bspl, ydiff - step * ks[6] - bspl,
                                   step * sum(d * k for d, k in zip(_D, ks))]))
            x, t, k1 = x_new, t_new, ks[6]
            times.append(t)
            states.append(x)
            derivs.append(k1)
            if last:
                ti += 1
            fac = 10.0 if err == 0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
            h = step * fac if not last else max(h, step)
        else:
            h = step * max(0.2, 0.9 * err ** -0.2)
    return times, states, derivs, dense, status


def integrate(field: Field, x0, t_span: tuple[float, float], method: str = "dopri",
              h: float | None = None, rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
              max_norm: float = DEFAULT_MAX_NORM, t_stops: Sequence[float] = (),
              max_steps: int = 10_000_000, seed: int | None = None) -> Trajectory:
    """Integrate from ``t_span[0]`` to ``t_span[1]``.

    ``method`` is ``"rk4"`` (fixed step ``h``) or ``"dopri"`` (adaptive
    Dormand-Prince 5(4); ``h`` is then only the initial step). Every time in
    ``t_stops`` becomes a sample point. If the sup norm exceeds ``max_norm``
    the trajectory is cut at the last good sample and ``meta["status"]`` is
    ``"blow-up"``.
    """
    net = field.net
    x0 = net.check_state(np.array(x0, dtype=float))
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not (math.isfinite(t0) and math.isfinite(t1)) or t1 <= t0:
        raise IntegrationError("bad-span", f"need finite t0 < t1, got {t_span!r}")
    if not _finite(x0):
        raise IntegrationError("nonfinite-state", "initial state is not finite", t0)
    if method == "rk4":
        if h is None or not h > 0:
            raise IntegrationError("bad-step", "rk4 needs a fixed step h > 0")
        out = _integrate_rk4(field, x0, t0, t1, float(h), max_norm, t_stops)
        meta = {"method": "rk4", "h": float(h)}
    elif method in ("dopri", "dopri5", "dopri-adaptive"):
        out = _integrate_dopri(field, x0, t0, t1, rtol, atol, max_norm, t_stops, h, max_steps)
        meta = {"method": "dopri", "rtol": rtol, "atol": atol}
    else:
        raise IntegrationError("bad-method", f"unknown method {method!r}")
    times, states, derivs, dense, status = out
    meta.update({"status": status, "max_norm": max_norm, "seed": seed, "steps": len(times) - 1})
    return Trajectory(np.array(times), np.array(states), net, np.array(derivs),
                      np.array(dense) if dense else None, meta)


# -- dense output -----------------------------------------------------------------------

def dense_eval(traj: Trajectory, t: float, field: Field | None = None) -> np.ndarray:
    """State at time ``t`` inside the span.

    Uses the integrator's continuous extension when present, otherwise cubic
    Hermite interpolation with stored derivatives (or ``field`` evaluations,
    or finite differences as a last resort).
    """
    times = traj.times
    t = float(t)
    if not times[0] <= t <= times[-1]:
        raise TrajectoryError(f"t={t!r} outside trajectory span [{times[0]!r}, {times[-1]!r}]")
    i = int(np.searchsorted(times, t))
    if i < len(times) and times[i] == t:
        return traj.states[i].copy()
    i -= 1
    h = times[i + 1] - times[i]
    s = (t - times[i]) / h
    if traj.dense is not None:
        r = traj.dense[i]
        s1 = 1.0 - s
        return r[0] + s * (r[1] + s1 * (r[2] + s * (r[3] + s1 * r[4])))
    y0, y1 = traj.states[i], traj.states[i + 1]
    d0, d1 = _derivs_at(traj, i, field), _derivs_at(traj, i + 1, field)
    h00 = 2 * s ** 3 - 3 * s ** 2 + 1
    h10 = s ** 3 - 2 * s ** 2 + s
    h01 = -2 * s ** 3 + 3 * s ** 2
    h11 = s ** 3 - s ** 2
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


def _derivs_at(traj: Trajectory, i: int, field: Field | None) -> np.ndarray:
    if traj.derivs is not None:
        return traj.derivs[i]
    if field is not None:
        return field(traj.states[i])
    if len(traj) < 2:
        return np.zeros(traj.states.shape[1])
    fd = getattr(traj, "_fd_derivs", None)
    if fd is None:
        fd = np.gradient(traj.states, traj.times, axis=0, edge_order=2 if len(traj) > 2 else 1)
        traj._fd_derivs = fd
    return fd[i]


# -- quotient consistency -------------------------------------------------------------

@dataclass(frozen=True)
class QuotientConsistency:
    max_deviation: float
    drift_off_diagonal: float
    full: Trajectory
    reduced: Trajectory


def quotient_consistency(net: TypedNetwork, col: Coloring, field: Field, x0, t_span,
                         rtol: float = DEFAULT_RTOL, atol: float = DEFAULT_ATOL,
                         method: str = "dopri", h: float | None = None) -> QuotientConsistency:
    """Integrate the full and the quotient system and compare on the full grid.

    The deviation is the sup over samples of ``|x(t) - lift(y(t))|`` where
    ``y`` solves the quotient system from the projected initial state.
    """
    cert = is_balanced(net, col)
    if not cert.balanced:
        raise ValueError(f"coloring {col} is not balanced: {cert.reason}")
    q = quotient_network(net, col)
    x0 = net.check_state(np.array(x0, dtype=float))
    y0 = q.project(x0)
    if sup_norm(q.lift(y0) - x0) > 0:
        raise ValueError("initial state is not on the synchrony space of the coloring")
    full = integrate(field, x0, t_span, method=method, h=h, rtol=rtol, atol=atol)
    reduced = integrate(field.on(q.network), y0, t_span, method=method, h=h, rtol=rtol,
                        atol=atol, t_stops=full.times[1:-1] if method == "rk4" else ())
    dev = 0.0
    drift = 0.0
    for t, x in zip(full.times, full.states):
        dev = max(dev, sup_norm(x - q.lift(dense_eval(reduced, t))))
        drift = max(drift, sup_norm(x - q.lift(q.project(x))))
    return QuotientConsistency(dev, drift, full, reduced)


# -- file formats ---------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory, path_or_buf) -> None:
    header = ",".join(["t"] + traj.net.column_labels())
    data = np.column_stack([traj.times, traj.states])
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    finally:
        if own:
            fh.close()


def trajectory_from_csv(path_or_text, net: TypedNetwork) -> Trajectory:
    if isinstance(path_or_text, (str, Path)) and "\n" not in str(path_or_text):
        text = Path(path_or_text).read_text(encoding="utf-8")
    else:
        text = str(path_or_text)
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise TrajectoryError("empty trajectory file")
    header = [h.strip() for h in lines[0].split(",")]
    expected = ["t"] + net.column_labels()
    if header != expected:
        raise TrajectoryError(f"CSV columns {header} do not match network columns {expected}")
    data = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
    if data.shape[1] != len(expected):
        raise TrajectoryError("row length does not match header")
    return Trajectory(data[:, 0], data[:, 1:], net, meta={"source": "csv"})


BINARY_MAGIC = b"CCNT"
BINARY_VERSION = 1


def trajectory_to_bytes(traj: Trajectory) -> bytes:
    """Binary cache layout (all little-endian):

    ``magic "CCNT" | u32 version | u32 header length | header JSON (UTF-8) |
    u64 N | u64 n | f64[N] times | f64[N*n] states | f64[N*n] derivs?``

    The header lists cell ids, per-cell dimensions, ``has_derivs`` and metadata.
    """
    header = json.dumps({
        "cells": list(traj.net.cell_ids),
        "dims": [traj.net.dim(c) for c in traj.net.cell_ids],
        "has_derivs": traj.derivs is not None,
        "meta": {k: v for k, v in traj.meta.items() if isinstance(v, (str, int, float, bool, type(None)))},
    }).encode("utf-8")
    n_samples, n = traj.states.shape
    parts = [BINARY_MAGIC, struct.pack("<II", BINARY_VERSION, len(header)), header,
             struct.pack("<QQ", n_samples, n),
             traj.times.astype("<f8").tobytes(), traj.states.astype("<f8").tobytes()]
    if traj.derivs is not None:
        parts.append(traj.derivs.astype("<f8").tobytes())
    return b"".join(parts)


def trajectory_from_bytes(blob: bytes, net: TypedNetwork) -> Trajectory:
    if blob[:4] != BINARY_MAGIC:
        raise TrajectoryError("not a trajectory cache (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != BINARY_VERSION:
        raise TrajectoryError(f"unsupported trajectory cache version {version}")
    off = 12
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    if header["cells"] != list(net.cell_ids) or header["dims"] != [net.dim(c) for c in net.cell_ids]:
        raise TrajectoryError("trajectory cache does not match the network")
    n_samples, n = struct.unpack_from("<QQ", blob, off)
    off += 16

    def take(count):
        nonlocal off
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(float)
        off += 8 * count
        return arr

    times = take(n_samples)
    states = take(n_samples * n).reshape(n_samples, n)
    derivs = take(n_samples * n).reshape(n_samples, n) if header["has_derivs"] else None
    return Trajectory(times, states, net, derivs, None, dict(header.get("meta", {})))


def save_trajectory(traj: Trajectory, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        trajectory_to_csv(traj, path)
    else:
        path.write_bytes(trajectory_to_bytes(traj))


def load_trajectory(path, net: TypedNetwork) -> Trajectory:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == BINARY_MAGIC:
        return trajectory_from_bytes(path.read_bytes(), net)
    return trajectory_from_csv(path, net)
