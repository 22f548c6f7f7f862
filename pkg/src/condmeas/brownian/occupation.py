"""Occupation measure of Brownian paths and its reconstruction from cube hits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from ..dyadic import DyadicCube, cube_indices
from ..errors import InvalidInput
from ..harness import make_rng
from ..potential import c_of_d
from ..regions import Ball, Box
from .cubes import _GL_W, _GL_X, MAX_BRIDGE_DEPTH, HitProbTable, bridge_points
from .paths import escape_bias_bound, simulate_path


def sphere_area(d) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / special.gamma(d / 2)


def residual_bound(region, d) -> float:
    """Largest expected occupation of ``region`` from any start point.

    ``c(d) int_A |x-y|^(2-d) dy`` is maximal for the ball of radius ``diam A``
    centred at ``x``, which gives ``c(d) |S^(d-1)| diam^2 / 2``.
    """
    if isinstance(region, Ball):
        diam = 2.0 * region.radius
    else:
        diam = float(np.linalg.norm(np.asarray(region.hi) - np.asarray(region.lo)))
    return c_of_d(d) * sphere_area(d) * diam**2 / 2.0


@dataclass
class OccupationResult:
    times: np.ndarray  # one entry per box
    bias_bound: np.ndarray  # escape truncation bound per box


def occupation_measure(traj, boxes) -> OccupationResult:
    """Time spent in each box, by the trapezoid rule on every Euler segment."""
    boxes = list(boxes)
    out = np.zeros(len(boxes))
    for seg in traj.segments():
        if len(seg) < 2:
            continue
        for j, b in enumerate(boxes):
            inside = b.contains(seg).astype(float)
            out[j] += traj.dt * 0.5 * float(np.sum(inside[:-1] + inside[1:]))
    bias = np.array([
        escape_bias_bound(b.max_norm(), traj.escape_radius, b.dim) * residual_bound(b, b.dim) for b in boxes
    ])
    return OccupationResult(out, bias)


def _box_nodes(box: Box, n_sub: int):
    d = box.dim
    lo, hi = np.asarray(box.lo, float), np.asarray(box.hi, float)
    h = (hi - lo) / n_sub
    cells = np.indices((n_sub,) * d).reshape(d, -1).T * h + lo
    nodes = np.stack(np.meshgrid(*([_GL_X] * d), indexing="ij"), -1).reshape(-1, d)
    wts = np.prod(np.stack(np.meshgrid(*([_GL_W] * d), indexing="ij"), -1).reshape(-1, d), axis=1)
    pts = (cells[:, None, :] + nodes[None] * h).reshape(-1, d)
    return pts, np.tile(wts, len(cells)) * float(np.prod(h))


def green_integral(region, d, n_sub=16) -> float:
    """``int_A |x|^(2-d) dx``: closed form for origin-centred balls, Gauss product rule otherwise."""
    if isinstance(region, Ball) and not np.any(np.asarray(region.center)):
        return sphere_area(d) * region.radius**2 / 2.0
    if not isinstance(region, Box):
        raise InvalidInput("green_integral supports boxes and origin-centred balls")
    pts, w = _box_nodes(region, n_sub)
    return float(np.sum(w * np.linalg.norm(pts, axis=1) ** (2.0 - d)))


def first_moment(region, d, n_sub=16) -> float:
    """``E tau(A) = c(d) int_A |x|^(2-d) dx`` for the path started at the origin."""
    return c_of_d(d) * green_integral(region, d, n_sub)


def second_moment_ball(radius, d) -> float:
    """``E tau(B(0,R))^2`` by the radial reduction of the double Green integral.

    The spherical mean of ``|x-y|^(2-d)`` over ``|y| = r2`` is
    ``max(|x|, r2)^(2-d)``, which leaves a 2-D integral.
    """
    w = sphere_area(d)

    def inner(r1):
        # int_0^R r2^(d-1) max(r1, r2)^(2-d) dr2
        return r1 ** (2 - d) * r1**d / d + (radius**2 - r1**2) / 2.0

    val, _ = integrate.quad(lambda r1: r1 ** (d - 1) * r1 ** (2 - d) * inner(r1), 0.0, radius)
    return 2.0 * c_of_d(d) ** 2 * w * w * val


def _cube_green_integrals(cubes, d):
    side = 2.0 ** -cubes[0].level
    lows = np.array([q.lower for q in cubes])
    nodes = np.stack(np.meshgrid(*([_GL_X] * d), indexing="ij"), -1).reshape(-1, d)
    wts = np.prod(np.stack(np.meshgrid(*([_GL_W] * d), indexing="ij"), -1).reshape(-1, d), axis=1)
    pts = lows[:, None, :] + side * nodes[None]
    vals = np.linalg.norm(pts, axis=2) ** (2.0 - d)
    return vals @ wts * side**d


def occupation_via_condmeasure(hits, k, A: Box, table: HitProbTable) -> float:
    """``c(d) sum_{Q hit, Q in A} int_Q |x|^(2-d) dx / p_hat(Q)``."""
    if table.level != k:
        raise InvalidInput("table level differs from k")
    lo, hi = np.asarray(A.lo, float), np.asarray(A.hi, float)
    inside = [q for q in hits if q.level == k and np.all(np.asarray(q.lower) >= lo) and np.all(np.asarray(q.upper) <= hi)]
    if not inside:
        return 0.0
    d = A.dim
    p = np.array([table.prob(q) for q in inside])
    return float(c_of_d(d) * np.sum(_cube_green_integrals(inside, d) / p))


def green_weights(table: HitProbTable, A: Box) -> np.ndarray:
    """Dense per-cube weights ``c(d) int_Q |x|^(2-d) / p_hat(Q)`` (zero outside ``A``)."""
    grid = table.grid
    d = A.dim
    corners = grid.lower_corners()
    side = 2.0**-grid.level
    lo, hi = np.asarray(A.lo, float), np.asarray(A.hi, float)
    keep = np.all(corners >= lo - 1e-15, axis=1) & np.all(corners + side <= hi + 1e-15, axis=1)
    out = np.zeros(grid.size)
    if keep.any():
        cubes = [grid.cube(f) for f in np.flatnonzero(keep)]
        out[keep] = c_of_d(d) * _cube_green_integrals(cubes, d) / table.p[keep]
    return out


# ---------------------------------------------------------------------------
# box counting


@dataclass
class BoxcountResult:
    N_values: list
    per_path: np.ndarray  # shape (paths, len(N_values))
    mean: np.ndarray
    stderr: np.ndarray

    def spread(self) -> np.ndarray:
        """Interquartile range over median of the per-path estimates, per N."""
        q1, med, q3 = np.percentile(self.per_path, [25, 50, 75], axis=0)
        return (q3 - q1) / med


def unit_cubes_hit_by(traj, N_values, rng, max_depth=MAX_BRIDGE_DEPTH) -> np.ndarray:
    """Number of distinct unit cubes met by the path up to each time ``N``."""
    pos = traj.positions
    t = traj.times
    extra, te = bridge_points(pos, 0, traj.dt, rng, max_depth, times=t)
    allp = np.concatenate([pos, extra]) if len(extra) else pos
    allt = np.concatenate([t, te]) if len(te) else t
    order = np.argsort(allt, kind="stable")
    idx = cube_indices(allp[order], 0)
    tt = allt[order]
    _, first = np.unique(idx, axis=0, return_index=True)
    first_times = np.sort(tt[first])
    return np.searchsorted(first_times, np.asarray(N_values, float), side="right")


def boxcount_scaling(seeds, N_values, d=3, dt=1e-2, max_depth=MAX_BRIDGE_DEPTH) -> BoxcountResult:
    """Per-path ``N^-1 * #(unit cubes hit by time N)``; N = 0 is skipped."""
    N_values = [float(n) for n in N_values]
    if any(b <= a for a, b in zip(N_values, N_values[1:])):
        raise InvalidInput("N values must be increasing")
    Ns = [n for n in N_values if n > 0]
    if not Ns:
        raise InvalidInput("need at least one positive N")
    rows = []
    for s in seeds:
        rng = make_rng(s)
        traj = simulate_path(rng, d=d, dt=dt, escape_radius=1e12, max_time=Ns[-1])
        counts = unit_cubes_hit_by(traj, Ns, rng, max_depth)
        rows.append(counts / np.asarray(Ns))
    per = np.array(rows)
    n = len(per)
    se = per.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.full(len(Ns), math.nan)
    return BoxcountResult(Ns, per, per.mean(axis=0), se)
