"""Cube hits along paths, hitting-probability tables and samples of C_k(nu)."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..dyadic import DyadicCube, cube_indices, index_range
from ..errors import InvalidInput, MissingCubeError
from ..harness import make_rng, trial_rng
from ..potential import DiscreteMeasure
from ..regions import Box
from .paths import default_margin, simulate_focused

MAX_BRIDGE_DEPTH = 12

# Gauss-Legendre rule of order 4 on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def bridge_points(samples, k, dt, rng, max_depth=MAX_BRIDGE_DEPTH, times=None):
    """Brownian-bridge midpoints between consecutive samples in non-adjacent level-``k`` cubes.

    Midpoints are inserted recursively until every sub-step joins cubes whose
    indices differ by at most one on each axis, or ``max_depth`` halvings.
    Returns the inserted points (and their times when ``times`` is given).
    """
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        empty = np.empty((0, x.shape[1] if x.ndim == 2 else 0))
        return (empty, np.empty(0)) if times is not None else empty
    idx = cube_indices(x, k)
    bad = np.flatnonzero(np.max(np.abs(np.diff(idx, axis=0)), axis=1) > 1)
    a, b = x[bad], x[bad + 1]
    ta = tb = None
    if times is not None:
        ta, tb = times[bad], times[bad + 1]
    h = dt
    out, out_t = [], []
    for _ in range(max_depth):
        if len(a) == 0:
            break
        mid = 0.5 * (a + b) + math.sqrt(h / 4.0) * rng.standard_normal(a.shape)
        out.append(mid)
        im, ia, ib = cube_indices(mid, k), cube_indices(a, k), cube_indices(b, k)
        left = np.max(np.abs(im - ia), axis=1) > 1
        right = np.max(np.abs(ib - im), axis=1) > 1
        if times is not None:
            tm = 0.5 * (ta + tb)
            out_t.append(tm)
            ta, tb = np.concatenate([ta[left], tm[right]]), np.concatenate([tm[left], tb[right]])
        a, b = np.concatenate([a[left], mid[right]]), np.concatenate([mid[left], b[right]])
        h *= 0.5
    pts = np.concatenate(out) if out else np.empty((0, x.shape[1]))
    if times is not None:
        return pts, (np.concatenate(out_t) if out_t else np.empty(0))
    return pts


def refined_indices(path, k, rng, max_depth=MAX_BRIDGE_DEPTH, d=None) -> np.ndarray:
    """Level-``k`` indices of every sample and bridge point of a path."""
    parts = []
    for seg in path.segments():
        seg = seg[np.any(seg != 0.0, axis=1)]  # the origin belongs to no cube
        parts.append(cube_indices(seg, k))
        extra = bridge_points(seg, k, path.dt, rng, max_depth)
        if len(extra):
            parts.append(cube_indices(extra, k))
    if not parts:
        return np.empty((0, d or 0), dtype=np.int64)
    return np.concatenate(parts)


class CubeGrid:
    """Dense indexing of the level-``k`` cubes meeting a box."""

    def __init__(self, region: Box, level: int):
        self.region = region
        self.level = int(level)
        self.lo, hi = index_range(region, level)
        self.shape = tuple(int(v) for v in hi - self.lo)
        self.size = int(np.prod(self.shape))

    def flat(self, idx: np.ndarray) -> np.ndarray:
        """Flat positions of index rows inside the grid; rows outside are dropped."""
        rel = np.asarray(idx, dtype=np.int64) - self.lo
        inside = np.all((rel >= 0) & (rel < self.shape), axis=1)
        return np.ravel_multi_index(tuple(rel[inside].T), self.shape) if inside.any() else np.empty(0, dtype=np.int64)

    def cube(self, flat: int) -> DyadicCube:
        rel = np.unravel_index(int(flat), self.shape)
        return DyadicCube(self.level, tuple(int(r + l) for r, l in zip(rel, self.lo)))

    def flat_of(self, cube: DyadicCube) -> int:
        pos = self.flat(np.array([cube.index]))
        if cube.level != self.level or pos.size == 0:
            raise MissingCubeError(str(cube))
        return int(pos[0])

    def lower_corners(self) -> np.ndarray:
        rel = np.indices(self.shape).reshape(len(self.shape), -1).T
        return (rel + self.lo) * 2.0**-self.level

    def integrate(self, func: Callable) -> np.ndarray:
        """Order-4 product Gauss integral of ``func`` over every grid cube."""
        d = len(self.shape)
        side = 2.0**-self.level
        nodes = np.stack(np.meshgrid(*([_GL_X] * d), indexing="ij"), -1).reshape(-1, d)
        wts = np.prod(np.stack(np.meshgrid(*([_GL_W] * d), indexing="ij"), -1).reshape(-1, d), axis=1)
        corners = self.lower_corners()
        out = np.empty(len(corners))
        step = max(1, 2_000_000 // len(nodes))
        for s in range(0, len(corners), step):
            pts = corners[s : s + step, None, :] + side * nodes[None, :, :]
            vals = func(pts.reshape(-1, d)).reshape(len(pts), len(nodes))
            out[s : s + step] = vals @ wts * side**d
        return out


def path_hits(path, levels, region: Box, rng, max_depth=MAX_BRIDGE_DEPTH) -> dict:
    """Flat grid positions (unique) of the cubes hit inside ``region``, per level.

    Bridge refinement is carried out at the finest requested level and the
    refined samples serve every level, so a calibration and a later sample
    that use the same ``levels`` follow the same detection rule.
    """
    levels = sorted(set(int(k) for k in levels))
    fine = levels[-1]
    parts = [seg[np.any(seg != 0.0, axis=1)] for seg in path.segments()]
    extra = [bridge_points(seg, fine, path.dt, rng, max_depth) for seg in parts]
    pts = np.concatenate(parts + [e for e in extra if len(e)]) if parts else np.empty((0, region.dim))
    hits = {}
    for k in levels:
        grid = CubeGrid(region, k)
        hits[k] = np.unique(grid.flat(cube_indices(pts, k)))
    return hits


@dataclass
class HitProbTable:
    level: int
    region: Box
    counts: np.ndarray  # flat, one per grid cube
    trials: int
    seed: object = None
    params: dict = field(default_factory=dict)
    joint_cubes: Optional[list] = None
    joint_counts: Optional[np.ndarray] = None
    trial_hits: Optional[list] = field(default=None, repr=False)  # per-trial flat positions

    def __post_init__(self):
        self.grid = CubeGrid(self.region, self.level)
        if self.counts.shape != (self.grid.size,):
            raise InvalidInput("count array does not match the table grid")
        if self.trials <= 0:
            raise InvalidInput("a table needs a positive trial count")

    @property
    def flagged(self) -> np.ndarray:
        return self.counts == 0

    @property
    def p(self) -> np.ndarray:
        """Hit frequencies; never-hit cubes get the floor ``1 / (2 trials)``."""
        return np.where(self.flagged, 0.5 / self.trials, self.counts / self.trials)

    @property
    def stderr(self) -> np.ndarray:
        p = self.p
        return np.sqrt(p * (1.0 - p) / self.trials)

    @property
    def table_id(self) -> str:
        text = f"{self.seed}|{self.level}|{self.region}|{self.trials}|{sorted(self.params.items())}"
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def prob(self, cube: DyadicCube) -> float:
        return float(self.p[self.grid.flat_of(cube)])

    def joint_prob(self, q: DyadicCube, s: DyadicCube) -> float:
        if self.joint_cubes is None:
            raise InvalidInput("table was calibrated without joint counts")
        i, j = self.joint_cubes.index(q), self.joint_cubes.index(s)
        return float(self.joint_counts[i, j] / self.trials)

    def calibration_stderr(self, masses: np.ndarray) -> float:
        """Standard error of ``sum nu(Q) p_hat(Q) / p(Q)`` induced by the table itself.

        To first order the table enters a mean of ``C_k(nu)`` through that sum,
        which is the average over calibration paths of ``C_k(nu)`` evaluated
        with ``p_hat``; its spread is estimated from the stored per-trial hits.
        """
        if self.trial_hits is None:
            raise InvalidInput("table was calibrated without per-trial hits")
        w = np.asarray(masses, dtype=float) / self.p
        vals = np.array([w[h].sum() for h in self.trial_hits])
        return float(vals.std(ddof=1) / math.sqrt(len(vals)))

    def to_csv(self, path):
        p, se = self.p, self.stderr
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["cube", "p_hat", "stderr", "trials", "hits", "flag"])
            for f in range(self.grid.size):
                wr.writerow([str(self.grid.cube(f)), repr(float(p[f])), repr(float(se[f])),
                             self.trials, int(self.counts[f]), int(self.flagged[f])])

    @classmethod
    def from_csv(cls, path, region: Box) -> "HitProbTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.DictReader(fh)]
        if not rows:
            raise InvalidInput(f"{path}: empty table")
        level = DyadicCube.parse(rows[0]["cube"]).level
        grid = CubeGrid(region, level)
        counts = np.zeros(grid.size, dtype=np.int64)
        for r in rows:
            counts[grid.flat_of(DyadicCube.parse(r["cube"]))] = int(r["hits"])
        return cls(level, region, counts, int(rows[0]["trials"]))


def _check_region(region, d):
    if not isinstance(region, Box) or region.dim != d:
        raise InvalidInput("tables are calibrated on a bounded box in R^d")
    if region.min_norm() <= 0:
        raise InvalidInput("calibration region must stay away from the origin")


def calibrate_hit_tables(seed, levels, region: Box, trials, d=3, dt=1e-4, escape_radius=50.0,
                         margin=None, joint_cubes=None, max_depth=MAX_BRIDGE_DEPTH,
                         keep_hits=False) -> dict:
    """Empirical ``P(Q hit)`` for every cube of every level, from one set of paths."""
    _check_region(region, d)
    if trials < 1000:
        raise InvalidInput("calibration needs at least 1000 trials")
    levels = sorted(set(int(k) for k in levels))
    margin = default_margin(d, dt) if margin is None else margin
    counts = {k: np.zeros(CubeGrid(region, k).size, dtype=np.int64) for k in levels}
    kept = {k: [] for k in levels} if keep_hits else None
    joint = None
    if joint_cubes:
        jgrids = [(CubeGrid(region, q.level), q) for q in joint_cubes]
        joint = np.zeros((len(joint_cubes), len(joint_cubes)), dtype=np.int64)
    for t in range(trials):
        rng = trial_rng(seed, t)
        path = simulate_focused(rng, d, dt, escape_radius, region, margin)
        hits = path_hits(path, levels, region, rng, max_depth)
        for k in levels:
            counts[k][hits[k]] += 1
            if kept is not None:
                kept[k].append(hits[k])
        if joint is not None:
            ind = np.array([np.isin(g.flat_of(q), hits.get(q.level, ())) for g, q in jgrids])
            joint += np.outer(ind, ind)
    params = {"d": d, "dt": dt, "escape_radius": escape_radius, "margin": margin, "levels": tuple(levels)}
    return {
        k: HitProbTable(k, region, counts[k], trials, seed, params,
                        list(joint_cubes) if joint_cubes else None, joint,
                        kept[k] if kept is not None else None)
        for k in levels
    }


def calibrate_hit_probs(seed, k, region, trials, **sim) -> HitProbTable:
    return calibrate_hit_tables(seed, [k], region, trials, **sim)[int(k)]


# ---------------------------------------------------------------------------
# measures on cube families


@dataclass(frozen=True)
class Density:
    """Absolutely continuous measure ``func(x) dx`` restricted to ``support``."""

    func: Callable
    support: Box

    def mass_grid(self, grid: CubeGrid) -> np.ndarray:
        def masked(x):
            return np.where(self.support.contains(x), self.func(x), 0.0)

        return grid.integrate(masked)


def cube_masses(nu, grid: CubeGrid) -> np.ndarray:
    """``nu(Q)`` for every cube of the grid."""
    if isinstance(nu, Density):
        return nu.mass_grid(grid)
    if isinstance(nu, DiscreteMeasure):
        out = np.zeros(grid.size)
        pts = nu.points
        keep = np.any(pts != 0.0, axis=1)
        idx = cube_indices(pts[keep], grid.level)
        rel = idx - grid.lo
        inside = np.all((rel >= 0) & (rel < grid.shape), axis=1)
        flat = np.ravel_multi_index(tuple(rel[inside].T), grid.shape) if inside.any() else np.empty(0, int)
        np.add.at(out, flat, nu.weights[keep][inside])
        return out
    raise InvalidInput("nu must be a DiscreteMeasure or a Density")


@dataclass
class WeightedCubeMeasure:
    level: int
    entries: dict
    prob_table_id: str
    flagged: frozenset = frozenset()

    def total(self) -> float:
        return float(sum(self.entries.values()))

    def mass(self, region) -> float:
        return float(sum(m for q, m in self.entries.items() if region.contains(q.center)))


def conditional_measure_sample(hits, nu, table: HitProbTable) -> WeightedCubeMeasure:
    """One sample of ``C_k(nu)``: ``nu(Q) / p(Q)`` on every hit cube with ``nu(Q) > 0``."""
    hits = list(hits)
    entries = {}
    flagged = set()
    if hits:
        if any(q.level != table.level for q in hits):
            raise InvalidInput("hit cubes and table are at different levels")
        flat = np.array([table.grid.flat_of(q) for q in hits])
        masses = _masses_at(nu, table.grid, hits, flat)
        p = table.p[flat]
        for q, f, m, pq in zip(hits, flat, masses, p):
            if m > 0:
                entries[q] = m / pq
                if table.flagged[f]:
                    flagged.add(q)
    return WeightedCubeMeasure(table.level, entries, table.table_id, frozenset(flagged))


def _masses_at(nu, grid, hits, flat):
    if isinstance(nu, DiscreteMeasure):
        return cube_masses(nu, grid)[flat]
    if isinstance(nu, Density):
        side = 2.0**-grid.level
        lows = np.array([q.lower for q in hits])
        d = lows.shape[1]
        nodes = np.stack(np.meshgrid(*([_GL_X] * d), indexing="ij"), -1).reshape(-1, d)
        wts = np.prod(np.stack(np.meshgrid(*([_GL_W] * d), indexing="ij"), -1).reshape(-1, d), axis=1)
        pts = (lows[:, None, :] + side * nodes[None]).reshape(-1, d)
        vals = np.where(nu.support.contains(pts), nu.func(pts), 0.0).reshape(len(hits), -1)
        return vals @ wts * side**d
    raise InvalidInput("nu must be a DiscreteMeasure or a Density")


def visited_cubes(path, k, region: Optional[Box] = None, rng=None, max_bridge_depth=MAX_BRIDGE_DEPTH) -> set:
    """Level-``k`` cubes containing a sample or bridge point of ``path``."""
    rng = trial_rng(0x5EED, k) if rng is None else make_rng(rng)
    idx = refined_indices(path, k, rng, max_bridge_depth, region.dim if region is not None else None)
    if region is not None and len(idx):
        lo, hi = index_range(region, k)
        idx = idx[np.all((idx >= lo) & (idx < hi), axis=1)]
    return {DyadicCube(k, tuple(row)) for row in np.unique(idx, axis=0).tolist()}
