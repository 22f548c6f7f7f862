"""Bounded regions in R^d: half-open boxes and open balls."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class Box:
    """Axis-aligned half-open box ``[lo_1, hi_1) x ... x [lo_d, hi_d)``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise InvalidInput("box corners must have equal, positive length")
        if not all(math.isfinite(v) for v in lo + hi):
            raise InvalidInput("box must be bounded")
        if any(h <= l for l, h in zip(lo, hi)):
            raise InvalidInput("box must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def parse(cls, text: str) -> "Box":
        """Parse ``"lo1:hi1,lo2:hi2,..."``."""
        try:
            pairs = [tuple(float(v) for v in part.split(":")) for part in text.split(",")]
            lo, hi = zip(*pairs)
        except ValueError as exc:
            raise InvalidInput(f"cannot parse box {text!r}") from exc
        return cls(lo, hi)

    def __str__(self):
        return ",".join(f"{l:g}:{h:g}" for l, h in zip(self.lo, self.hi))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        return np.all((x >= self.lo) & (x < self.hi), axis=-1)

    def distance(self, points) -> np.ndarray:
        """Euclidean distance to the closed box (zero inside)."""
        x = np.asarray(points, dtype=float)
        gap = np.maximum(np.maximum(np.subtract(self.lo, x), np.subtract(x, self.hi)), 0.0)
        return np.sqrt(np.sum(gap * gap, axis=-1))

    def max_norm(self) -> float:
        """Largest Euclidean norm over the closed box."""
        far = np.maximum(np.abs(self.lo), np.abs(self.hi))
        return float(np.sqrt(np.sum(far * far)))

    def min_norm(self) -> float:
        return float(self.distance(np.zeros(self.dim)))


@dataclass(frozen=True)
class Ball:
    """Open Euclidean ball."""

    center: tuple
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if not c or not all(math.isfinite(v) for v in c):
            raise InvalidInput("ball centre must be finite")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InvalidInput("ball radius must be positive and finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def volume(self) -> float:
        d = self.dim
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d

    def contains(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        return np.linalg.norm(x - self.center, axis=-1) < self.radius

    def distance(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=float)
        return np.maximum(np.linalg.norm(x - self.center, axis=-1) - self.radius, 0.0)

    def max_norm(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius

    def min_norm(self) -> float:
        return max(float(np.linalg.norm(self.center)) - self.radius, 0.0)
