"""Dyadic cube families in R^d.

A level-``k`` cube is ``2^-k * prod_j [i_j, i_j + 1)``.  By default the family
is punctured at the origin: the origin itself belongs to no cube.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .regions import Box

MAX_LEVEL = 52


def _check_level(k):
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise InvalidInput(f"level must be a non-negative integer, got {k!r}")
    if k > MAX_LEVEL:
        raise InvalidInput(f"level {k} exceeds {MAX_LEVEL}; floor(x*2^k) is no longer exact")


@dataclass(frozen=True, order=True)
class DyadicCube:
    level: int
    index: tuple

    def __post_init__(self):
        _check_level(self.level)
        object.__setattr__(self, "level", int(self.level))
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))
        if not self.index:
            raise InvalidInput("cube needs at least one coordinate")

    @property
    def dim(self) -> int:
        return len(self.index)

    @property
    def side(self) -> float:
        return 2.0**-self.level

    @property
    def diam(self) -> float:
        return math.sqrt(self.dim) * self.side

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.index, dtype=float) * self.side

    @property
    def upper(self) -> np.ndarray:
        return (np.array(self.index, dtype=float) + 1.0) * self.side

    @property
    def center(self) -> np.ndarray:
        return (np.array(self.index, dtype=float) + 0.5) * self.side

    def box(self) -> Box:
        return Box(tuple(self.lower), tuple(self.upper))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.lower) & (x < self.upper)))

    def parent(self) -> "DyadicCube":
        if self.level == 0:
            raise InvalidInput("level-0 cubes have no parent")
        return DyadicCube(self.level - 1, tuple(i >> 1 for i in self.index))

    def children(self) -> list:
        base = [2 * i for i in self.index]
        return [
            DyadicCube(self.level + 1, tuple(b + o for b, o in zip(base, offs)))
            for offs in itertools.product((0, 1), repeat=self.dim)
        ]

    def __str__(self):
        return f"{self.level}:" + ",".join(str(i) for i in self.index)

    @classmethod
    def parse(cls, text: str) -> "DyadicCube":
        try:
            level, idx = text.strip().split(":")
            return cls(int(level), tuple(int(v) for v in idx.split(",")))
        except ValueError as exc:
            raise InvalidInput(f"cannot parse cube id {text!r}") from exc


@dataclass(frozen=True)
class AnnularFamilySpec:
    """Level-``k`` cubes inside ``[-2^i, 2^i)^d`` minus ``[-2^-i, 2^-i)^d``."""

    i: int
    k: int
    dim: int

    def __post_init__(self):
        if self.i < 1:
            raise InvalidInput("annulus parameter i must be positive")
        if self.k < self.i:
            raise InvalidInput("annular family requires k >= i")
        if self.dim < 1:
            raise InvalidInput("dimension must be positive")

    def cubes(self) -> list:
        outer = Box((-(2.0**self.i),) * self.dim, (2.0**self.i,) * self.dim)
        return [q for q in covering_cubes(outer, self.k) if in_annular_family(q, self)]


def cube_indices(points, k: int) -> np.ndarray:
    """Integer indices ``floor(x * 2^k)`` for an ``(n, d)`` point array."""
    _check_level(k)
    x = np.asarray(points, dtype=float)
    return np.floor(x * 2.0**k).astype(np.int64)


def cube_of_point(x, k: int, punctured: bool = True):
    """The level-``k`` cube containing ``x``, or ``None`` for the punctured origin."""
    _check_level(k)
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise InvalidInput("point coordinates must be finite")
    if punctured and not np.any(x):
        return None
    return DyadicCube(k, tuple(int(v) for v in cube_indices(x, k)))


def cube_distance(q: DyadicCube, s: DyadicCube) -> float:
    """Euclidean distance between the closures of two cubes."""
    if q.dim != s.dim:
        raise InvalidInput("cubes live in different dimensions")
    gap = np.maximum(np.maximum(s.lower - q.upper, q.lower - s.upper), 0.0)
    return float(np.sqrt(np.sum(gap * gap)))


def in_annular_family(q: DyadicCube, spec: AnnularFamilySpec) -> bool:
    if q.level != spec.k or q.dim != spec.dim:
        raise InvalidInput("cube level/dimension does not match the annular family")
    outer = 2.0**spec.i
    inner = 2.0**-spec.i
    lo, hi = q.lower, q.upper
    if np.any(lo < -outer) or np.any(hi > outer):
        return False
    # k >= i, so the cube is either inside the hole or disjoint from it
    return bool(np.any(hi <= -inner) or np.any(lo >= inner))


def index_range(box: Box, k: int):
    """Per-axis inclusive-exclusive index bounds of cubes meeting ``box``."""
    _check_level(k)
    scale = 2.0**k
    lo = np.floor(np.asarray(box.lo) * scale).astype(np.int64)
    hi = np.ceil(np.asarray(box.hi) * scale).astype(np.int64)
    return lo, hi


def covering_cubes(box: Box, k: int) -> list:
    """All level-``k`` cubes meeting the half-open box, each once, in index order."""
    if not isinstance(box, Box):
        raise InvalidInput("covering_cubes needs a bounded Box")
    lo, hi = index_range(box, k)
    axes = [range(a, b) for a, b in zip(lo, hi)]
    return [DyadicCube(k, idx) for idx in itertools.product(*axes)]


def separation_count(dim: int, delta: float) -> int:
    """Number of same-level cubes S with ``diam >= delta * dist(Q, S)``.

    The count does not depend on the level or on Q, because the condition is
    invariant under dyadic scaling and lattice translation.
    """
    if not delta > 0:
        raise InvalidInput("delta must be positive")
    reach = int(math.ceil(math.sqrt(dim) / delta)) + 1
    offs = np.array(list(itertools.product(range(-reach, reach + 1), repeat=dim)))
    gaps = np.maximum(np.abs(offs) - 1, 0)
    dist = np.sqrt(np.sum(gaps * gaps, axis=1))
    return int(np.count_nonzero(math.sqrt(dim) >= delta * dist))
