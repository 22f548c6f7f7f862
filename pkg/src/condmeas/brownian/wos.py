"""Walk-on-spheres estimates of hitting events for Brownian motion from a point.

Walkers jump to a uniform point on the largest sphere that avoids every
not-yet-hit target, are absorbed within ``eps`` of a target, and are declared
escaped beyond ``far_radius``.  A walker that returns from ``far_radius`` to
the sphere enclosing all targets is missed; the probability of that return is
at most ``(R0 / far_radius)^(d-2)`` and is reported as ``bias_bound``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInput
from ..harness import make_rng
from .paths import escape_bias_bound

MAX_JUMPS = 100_000


@dataclass
class WosResult:
    hits: np.ndarray  # (trials, targets) bool
    bias_bound: float
    far_radius: float
    eps: float

    def frequencies(self) -> np.ndarray:
        return self.hits.mean(axis=0)


def _unit(rng, n, d):
    u = rng.standard_normal((n, d))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def _check_balls(centers, radii):
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    r = np.asarray(radii, dtype=float).ravel()
    if len(c) != len(r):
        raise InvalidInput("one radius per ball is required")
    if np.any(r <= 0):
        raise InvalidInput("ball radii must be positive")
    for i in range(len(r)):
        for j in range(i + 1, len(r)):
            if np.linalg.norm(c[i] - c[j]) < r[i] + r[j]:
                raise InvalidInput("target balls must be disjoint")
    return c, r


def wos_ball_hits(rng, centers, radii, n, far_radius=1e4, eps=1e-4, start=None) -> WosResult:
    """Per-trial indicators of ``B`` meeting each of the given balls."""
    rng = make_rng(rng)
    c, r = _check_balls(centers, radii)
    d = c.shape[1]
    if d < 3:
        raise InvalidInput("walk-on-spheres hitting needs d >= 3")
    z = np.zeros((n, d)) if start is None else np.tile(np.asarray(start, dtype=float), (n, 1))
    r0 = float(np.max(np.linalg.norm(c, axis=1) + r))
    if np.linalg.norm(z[0]) >= far_radius or r0 >= far_radius:
        raise InvalidInput("far_radius must enclose the start point and every target")
    hits = np.zeros((n, len(r)), dtype=bool)
    active = np.arange(n)
    for _ in range(MAX_JUMPS):
        if active.size == 0:
            break
        za = z[active]
        gap = np.linalg.norm(za[:, None, :] - c[None, :, :], axis=2) - r[None, :]
        newly = gap < eps
        hits[active] |= newly
        gap = np.where(hits[active], np.inf, gap)
        step = gap.min(axis=1)
        alive = np.isfinite(step) & (np.einsum("ij,ij->i", za, za) <= far_radius**2)
        active, za, step = active[alive], za[alive], step[alive]
        z[active] = za + step[:, None] * _unit(rng, active.size, d)
    else:
        raise RuntimeError("walk-on-spheres exceeded its jump budget")
    return WosResult(hits, escape_bias_bound(r0, far_radius, d), far_radius, eps)


def wos_joint_ball_hit(seed, balls, d=3, far_radius=1e4, eps_shell=1e-4) -> np.ndarray:
    """One realisation: which of the balls ``[(center, radius), ...]`` are hit."""
    centers = [b[0] for b in balls]
    radii = [b[1] for b in balls]
    if any(len(cc) != d for cc in centers):
        raise InvalidInput("ball centres must lie in R^d")
    return wos_ball_hits(seed, centers, radii, 1, far_radius, eps_shell).hits[0]


def wos_nested_box_hits(rng, boxes, n, far_radius=1e4, eps=1e-5, start=None) -> WosResult:
    """Indicators of hitting each of a decreasing sequence of nested boxes.

    Hitting a box inside an earlier one forces hitting the earlier one first,
    so after the first contact with box ``j`` the walker restarts (strong
    Markov property) aiming at box ``j + 1``.
    """
    rng = make_rng(rng)
    boxes = list(boxes)
    d = boxes[0].dim
    L = len(boxes)
    lo = np.array([b.lo for b in boxes])
    hi = np.array([b.hi for b in boxes])
    for j in range(1, L):
        if np.any(lo[j] < lo[j - 1]) or np.any(hi[j] > hi[j - 1]):
            raise InvalidInput("boxes must be nested, coarsest first")
    r0 = max(b.max_norm() for b in boxes)
    if r0 >= far_radius:
        raise InvalidInput("far_radius must enclose every target")
    z = np.zeros((n, d)) if start is None else np.tile(np.asarray(start, dtype=float), (n, 1))
    reached = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    for _ in range(MAX_JUMPS):
        if active.size == 0:
            break
        za = z[active]
        lev = reached[active]
        while True:
            g = np.maximum(np.maximum(lo[lev] - za, za - hi[lev]), 0.0)
            bump = np.sqrt(np.sum(g * g, axis=1)) < eps
            if not bump.any():
                break
            lev = lev + bump
            done = lev >= L
            if done.any():
                reached[active[done]] = L
                keep = ~done
                active, za, lev = active[keep], za[keep], lev[keep]
                if active.size == 0:
                    break
        if active.size == 0:
            break
        reached[active] = lev
        g = np.maximum(np.maximum(lo[lev] - za, za - hi[lev]), 0.0)
        gap = np.sqrt(np.sum(g * g, axis=1))
        alive = np.einsum("ij,ij->i", za, za) <= far_radius**2
        active, za, gap = active[alive], za[alive], gap[alive]
        z[active] = za + gap[:, None] * _unit(rng, active.size, d)
    else:
        raise RuntimeError("walk-on-spheres exceeded its jump budget")
    hits = reached[:, None] > np.arange(L)[None, :]
    return WosResult(hits, escape_bias_bound(r0, far_radius, d), far_radius, eps)
