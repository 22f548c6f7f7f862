"""Brownian paths in R^d (d >= 3).

Two path types are produced:

* :class:`Trajectory`: plain Euler samples from the start until the first
  sample outside ``escape_radius``.
* :class:`FocusedPath`: Euler samples only while the walker is near a focus
  region.  Away from it the walker moves by exact walk-on-spheres jumps whose
  spheres never meet the focus, so occupation times and cube hits inside the
  focus are unaffected while the cost of the long transient excursions vanishes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInput
from ..harness import make_rng

_MAGIC = b"CMTRJ1\n"
_CHUNK0 = 256
_CHUNK_MAX = 1 << 16


def _check_params(d, dt, escape_radius, start):
    if int(d) != d or d < 3:
        raise InvalidInput("Brownian paths are simulated for integer d >= 3")
    if not (dt > 0 and math.isfinite(dt)):
        raise InvalidInput("dt must be positive")
    if not (escape_radius > 0 and math.isfinite(escape_radius)):
        raise InvalidInput("escape_radius must be positive")
    z = np.zeros(d) if start is None else np.asarray(start, dtype=float).copy()
    if z.shape != (d,) or not np.all(np.isfinite(z)):
        raise InvalidInput("start must be a finite point in R^d")
    if np.linalg.norm(z) >= escape_radius:
        raise InvalidInput("escape_radius must exceed the norm of the start point")
    return int(d), z


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    dt: float
    escape_radius: float
    seed: object = None

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def segments(self):
        return [self.positions]

    def save(self, path):
        """Columnar binary dump: magic, JSON header line, row count, then t, x1..xd."""
        header = {
            "d": self.d,
            "dt": self.dt,
            "seed": self.seed if isinstance(self.seed, (int, list, type(None))) else str(self.seed),
            "escape_radius": self.escape_radius,
        }
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(json.dumps(header).encode("utf-8") + b"\n")
            fh.write(struct.pack("<Q", len(self.times)))
            fh.write(np.ascontiguousarray(self.times, dtype="<f8").tobytes())
            for j in range(self.d):
                fh.write(np.ascontiguousarray(self.positions[:, j], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Trajectory":
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise InvalidInput(f"{path}: not a trajectory dump")
            header = json.loads(fh.readline().decode("utf-8"))
            (n,) = struct.unpack("<Q", fh.read(8))
            cols = np.frombuffer(fh.read(8 * n * (header["d"] + 1)), dtype="<f8")
        cols = cols.reshape(header["d"] + 1, n)
        return cls(cols[0].copy(), cols[1:].T.copy(), header["dt"], header["escape_radius"], header["seed"])


def simulate_path(seed, d=3, dt=1e-4, escape_radius=50.0, start=None, max_time=None,
                  max_steps=50_000_000) -> Trajectory:
    """Euler path until the first sample with norm above ``escape_radius``.

    With ``max_time`` the path also stops at the first sample with ``t >= max_time``.
    """
    d, z = _check_params(d, dt, escape_radius, start)
    rng = make_rng(seed)
    sd = math.sqrt(dt)
    pieces = [z[None, :]]
    n = 1
    chunk = _CHUNK0
    limit = max_steps if max_time is None else min(max_steps, int(math.ceil(max_time / dt)))
    while n <= limit:
        m = min(chunk, limit - n + 1)
        steps = rng.standard_normal((m, d)) * sd
        path = z + np.cumsum(steps, axis=0)
        out = np.flatnonzero(np.einsum("ij,ij->i", path, path) > escape_radius**2)
        if out.size:
            pieces.append(path[: out[0] + 1])
            n += out[0] + 1
            break
        pieces.append(path)
        n += m
        z = path[-1]
        chunk = min(2 * chunk, _CHUNK_MAX)
    pos = np.concatenate(pieces)
    return Trajectory(np.arange(len(pos)) * dt, pos, dt, escape_radius, seed if not isinstance(seed, np.random.Generator) else None)


@dataclass
class FocusedPath:
    segments_: list
    dt: float
    escape_radius: float
    focus: object
    margin: float
    jumps: int = 0
    escaped: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.segments_[0].shape[1] if self.segments_ else 0

    def segments(self):
        return self.segments_

    @property
    def euler_steps(self) -> int:
        return sum(len(s) - 1 for s in self.segments_)


def default_margin(d, dt) -> float:
    return 5.0 * math.sqrt(d * dt)


def simulate_focused(rng, d, dt, escape_radius, focus, margin=None, start=None,
                     max_steps=50_000_000) -> FocusedPath:
    """Path that is Euler-resolved only within ``margin`` of ``focus``.

    A segment starts once the walker is closer than ``margin`` to the focus
    and ends at the first sample farther than ``2 * margin``.  Elsewhere the
    walker jumps to a uniform point on the largest sphere around it that
    does not enter the focus.
    """
    d, z = _check_params(d, dt, escape_radius, start)
    rng = make_rng(rng)
    margin = default_margin(d, dt) if margin is None else float(margin)
    if not margin > 0:
        raise InvalidInput("margin must be positive")
    sd = math.sqrt(dt)
    r2 = escape_radius**2
    segments = []
    jumps = 0
    steps_used = 0
    while float(z @ z) <= r2:
        dist = float(focus.distance(z))
        if dist >= margin:
            u = rng.standard_normal(d)
            z = z + dist * u / math.sqrt(float(u @ u))
            jumps += 1
            continue
        pieces = [z[None, :]]
        chunk = _CHUNK0
        while True:
            steps = rng.standard_normal((chunk, d)) * sd
            path = z + np.cumsum(steps, axis=0)
            leave = (focus.distance(path) > 2.0 * margin) | (np.einsum("ij,ij->i", path, path) > r2)
            hit = np.flatnonzero(leave)
            if hit.size:
                pieces.append(path[: hit[0] + 1])
                z = path[hit[0]]
                break
            pieces.append(path)
            z = path[-1]
            steps_used += chunk
            if steps_used > max_steps:
                raise RuntimeError("focused path exceeded its step budget")
            chunk = min(2 * chunk, _CHUNK_MAX)
        segments.append(np.concatenate(pieces))
    return FocusedPath(segments, dt, escape_radius, focus, margin, jumps=jumps)


def hit_prob_ball(x, r, d) -> float:
    """Probability that Brownian motion from the origin ever meets ``B(x, r)``."""
    if int(d) != d or d < 3:
        raise InvalidInput("hitting probabilities need d >= 3")
    if not r > 0:
        raise InvalidInput("radius must be positive")
    nx = float(np.linalg.norm(np.asarray(x, dtype=float)))
    if nx <= r:
        return 1.0
    return (r / nx) ** (d - 2)


def escape_bias_bound(inner_radius, escape_radius, d) -> float:
    """Chance of returning to the ``inner_radius`` sphere after passing ``escape_radius``."""
    if escape_radius <= inner_radius:
        return 1.0
    return (inner_radius / escape_radius) ** (d - 2)
