"""Bump functions with pairwise disjoint supports placed along a sampled curve.

Centers sit at parameters ``t_n = t* + eta * 2**-n`` so they accumulate at the
curve point ``x(t*)``. Supports are Euclidean balls and the profile is the
polynomial bump ``(1 - r^2)^2``, whose support is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BumpError(ValueError):
    pass


def profile(r2: np.ndarray) -> np.ndarray:
    """``(1 - r^2)^2`` on ``r < 1`` and 0 elsewhere, as a function of ``r^2``."""
    return np.where(r2 < 1.0, (1.0 - np.minimum(r2, 1.0)) ** 2, 0.0)


def c1_bound(radius: float, dim: int) -> float:
    """Upper bound on sup|phi| + sup of the l1 norm of grad(phi) for a unit-height bump.

    The radial derivative of ``(1 - s^2)^2`` peaks at ``s = 1/sqrt(3)`` with
    value ``8 / (3 sqrt 3)``; the l1 norm of a gradient is at most ``sqrt(dim)``
    times its Euclidean norm.
    """
    return 1.0 + 8.0 * math.sqrt(dim) / (3.0 * math.sqrt(3.0) * radius)


@dataclass(frozen=True)
class BumpBasis:
    centers: np.ndarray          # (N, D)
    radii: np.ndarray            # (N,)
    heights: np.ndarray          # (N,) value of each bump at its center
    params: np.ndarray           # (N,) curve parameters t_n
    ball_center: np.ndarray
    ball_radius: float
    normalization: str

    @property
    def n(self) -> int:
        return len(self.radii)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def values(self, p: np.ndarray) -> np.ndarray:
        """All bump values at one point ``p`` (shape (D,)) or many (shape (M, D))."""
        p = np.asarray(p, dtype=float)
        diff = p[..., None, :] - self.centers
        r2 = np.sum(diff * diff, axis=-1) / self.radii ** 2
        return self.heights * profile(r2)

    def combine(self, z: np.ndarray, p: np.ndarray):
        """``sum_n z_n phi_n(p)``."""
        return self.values(p) @ np.asarray(z, dtype=float)

    def c1_norms(self) -> np.ndarray:
        return self.heights * np.array([c1_bound(r, self.dim) for r in self.radii])

    def disjoint(self) -> bool:
        """Exact pairwise check: ``|c_i - c_j| >= r_i + r_j`` in outward-rounded arithmetic."""
        for i in range(self.n):
            for j in range(i + 1, self.n):
                d = float(np.linalg.norm(self.centers[i] - self.centers[j]))
                # shrink the distance and grow the radii by a few ulps
                if math.nextafter(math.nextafter(d, 0.0), 0.0) < \
                        math.nextafter(self.radii[i] + self.radii[j], math.inf) * (1 + 4e-16):
                    return False
        return True

    def inside_ball(self) -> bool:
        for c, r in zip(self.centers, self.radii):
            if np.linalg.norm(c - self.ball_center) + r > self.ball_radius * (1 - 1e-15):
                return False
        return True


def _interp_curve(times: np.ndarray, segment: np.ndarray, t: float) -> np.ndarray:
    return np.array([np.interp(t, times, segment[:, k]) for k in range(segment.shape[1])])


def build_bump_basis(segment, n_bumps: int, seed: int | None = None, *, times=None,
                     t_star: float | None = None, eta: float | None = None,
                     normalization: str = "c1", shrink: float = 0.99) -> BumpBasis:
    """Place ``n_bumps`` disjoint bumps along a sampled curve.

    ``segment`` has shape (M, D), sampled at ``times`` (default evenly spaced
    in [0, 1]). Defaults: ``t*`` is the first sample and ``eta`` the whole
    span, so the first center is the last sample. When ``seed`` is given and
    ``t_star`` is not, ``t*`` is drawn uniformly from the first quarter.

    ``normalization="c1"`` scales each bump to unit C1 bound; ``"sup"`` keeps
    unit height so that ``max|sum z_n phi_n| = max|z_n|``.
    """
    seg = np.asarray(segment, dtype=float)
    if seg.ndim == 1:
        seg = seg[:, None]
    if n_bumps < 1:
        raise BumpError("n_bumps must be at least 1")
    if len(seg) < 2:
        raise BumpError("segment needs at least two samples")
    times = np.linspace(0.0, 1.0, len(seg)) if times is None else np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise BumpError("segment times must be strictly increasing")
    t0, t1 = float(times[0]), float(times[-1])
    if t_star is None:
        t_star = t0 if seed is None else t0 + 0.25 * (t1 - t0) * float(np.random.default_rng(seed).random())
    if eta is None:
        eta = t1 - t_star
    if not (t0 <= t_star < t_star + eta <= t1 + 1e-12 * (t1 - t0)):
        raise BumpError("t* and eta must keep every center on the segment")
    params = t_star + eta * 2.0 ** -np.arange(n_bumps)
    centers = np.array([_interp_curve(times, seg, t) for t in params])
    anchor = _interp_curve(times, seg, t_star)
    scale = max(float(np.max(np.abs(seg))), 1.0)

    radii = np.empty(n_bumps)
    for i in range(n_bumps):
        # keep clear of the accumulation point and of every other center
        limits = [0.5 * np.linalg.norm(centers[i] - anchor)]
        limits += [0.5 * np.linalg.norm(centers[i] - centers[j]) for j in range(n_bumps) if j != i]
        radii[i] = shrink * min(limits)
        if not radii[i] > 1e-12 * scale:
            raise BumpError(f"segment too short to separate {n_bumps} bump centers "
                            "at floating precision")
    ball_center = centers.mean(axis=0)
    ball_radius = float(max(np.linalg.norm(c - ball_center) + r for c, r in zip(centers, radii)))
    ball_radius *= 1.0 + 1e-9
    if normalization == "c1":
        heights = np.array([1.0 / c1_bound(r, seg.shape[1]) for r in radii])
    elif normalization == "sup":
        heights = np.ones(n_bumps)
    else:
        raise BumpError(f"unknown normalization {normalization!r}")
    basis = BumpBasis(centers, radii, heights, params, ball_center, ball_radius, normalization)
    if not basis.disjoint():
        raise BumpError("bump supports overlap at floating precision")
    return basis
