"""Kernels, energies and capacities of discrete measures.

Capacities are computed as ``1 / I*`` where ``I*`` is the minimum of the
diagonal-regularised quadratic energy ``w^T K w`` over the probability simplex,
found with away-step Frank-Wolfe.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gamma

from .errors import DomainError, InvalidInput, SolverError

INF = math.inf


def c_of_d(d: int) -> float:
    """Green's function constant ``Gamma(d/2 - 1) / (2 pi^(d/2))``."""
    if int(d) != d or d < 3:
        raise InvalidInput("c(d) is defined for integer d >= 3")
    return float(gamma(d / 2 - 1) / 2 * math.pi ** (-d / 2))


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric kernel on R^d or on the boundary of a tree.

    ``kind`` is one of ``riesz``, ``log``, ``green``, ``brownian_F``, ``tree``
    or ``custom``.  ``tree`` is the Riesz kernel for the ultrametric
    ``2^-|x ^ y|`` on prefix strings.
    """

    kind: str
    alpha: Optional[float] = None
    d: Optional[int] = None
    func: Optional[Callable] = field(default=None, compare=False)
    value_at_zero: float = INF

    @classmethod
    def riesz(cls, alpha: float) -> "KernelSpec":
        if not alpha > 0:
            raise InvalidInput("riesz exponent must be positive")
        return cls("riesz", alpha=float(alpha))

    @classmethod
    def log(cls) -> "KernelSpec":
        return cls("log")

    @classmethod
    def green(cls, d: int) -> "KernelSpec":
        c_of_d(d)
        return cls("green", d=int(d))

    @classmethod
    def brownian_F(cls, d: int) -> "KernelSpec":
        if d < 3:
            raise InvalidInput("brownian_F needs d >= 3")
        return cls("brownian_F", d=int(d))

    @classmethod
    def tree(cls, alpha: float) -> "KernelSpec":
        if not alpha > 0:
            raise InvalidInput("tree kernel exponent must be positive")
        return cls("tree", alpha=float(alpha))

    @classmethod
    def custom(cls, func: Callable, value_at_zero: float = INF, alpha=None) -> "KernelSpec":
        return cls("custom", alpha=alpha, func=func, value_at_zero=value_at_zero)

    @classmethod
    def parse(cls, text: str) -> "KernelSpec":
        """Parse ``riesz:1``, ``log``, ``green:3``, ``brownian_F:3`` or ``tree:0.5``."""
        name, _, arg = text.partition(":")
        try:
            if name == "riesz":
                return cls.riesz(float(arg))
            if name == "log":
                return cls.log()
            if name == "green":
                return cls.green(int(arg))
            if name == "brownian_F":
                return cls.brownian_F(int(arg))
            if name == "tree":
                return cls.tree(float(arg))
        except ValueError as exc:
            raise InvalidInput(f"bad kernel parameter in {text!r}") from exc
        raise InvalidInput(f"unknown kernel {text!r}")

    @property
    def threshold(self) -> Optional[float]:
        """Dimension above which a smooth density has finite energy."""
        if self.kind in ("riesz", "tree"):
            return self.alpha
        if self.kind in ("green", "brownian_F"):
            return float(self.d - 2)
        if self.kind == "log":
            return 0.0
        return self.alpha

    def phi(self, r) -> np.ndarray:
        """Radial profile for distance-based kernels; ``+inf`` at ``r = 0``."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            if self.kind in ("riesz", "tree"):
                out = np.where(r > 0, r ** -(self.alpha or 1.0), INF)
            elif self.kind == "green":
                out = np.where(r > 0, c_of_d(self.d) * r ** (2.0 - self.d), INF)
            elif self.kind == "log":
                out = np.where(r > 0, np.maximum(0.0, -np.log(r)), INF)
            elif self.kind == "custom":
                out = np.where(r > 0, self.func(np.where(r > 0, r, 1.0)), self.value_at_zero)
            else:
                raise DomainError(f"{self.kind} is not a function of distance alone")
        return out


def _tree_distance(u: str, v: str) -> float:
    n = 0
    for a, b in zip(u, v):
        if a != b:
            break
        n += 1
    if u == v:
        return 0.0
    return 2.0**-n


def _tree_distance_matrix(paths: Sequence[str]) -> np.ndarray:
    n = len(paths)
    width = max((len(p) for p in paths), default=0)
    codes = np.full((n, width), -1, dtype=np.int64)
    for i, p in enumerate(paths):
        codes[i, : len(p)] = [ord(c) for c in p]
    same = codes[:, None, :] == codes[None, :, :]
    common = np.cumprod(same, axis=2).sum(axis=2)
    dist = 2.0**-common
    equal = np.array([[a == b for b in paths] for a in paths])
    return np.where(equal, 0.0, dist)


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Kernel value at a pair of points (prefix strings for ``tree``)."""
    if spec.kind == "tree":
        return float(spec.phi(_tree_distance(str(x), str(y))))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInput("kernel arguments must be finite")
    r = float(np.linalg.norm(x - y))
    if spec.kind == "brownian_F":
        nx, ny = float(np.linalg.norm(x)), float(np.linalg.norm(y))
        if nx == 0 or ny == 0:
            raise DomainError("brownian_F is undefined at the origin")
        if r == 0:
            return INF
        e = spec.d - 2
        return (nx**e + ny**e) / r**e
    return float(spec.phi(r))


def kernel_matrix(spec: KernelSpec, points, h: Optional[float] = None) -> np.ndarray:
    """Pairwise kernel matrix; with ``h`` the diagonal is replaced by ``phi(h)``."""
    if spec.kind == "tree":
        dist = _tree_distance_matrix(list(points))
        K = spec.phi(dist)
    else:
        x = np.atleast_2d(np.asarray(points, dtype=float))
        dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        if spec.kind == "brownian_F":
            norms = np.linalg.norm(x, axis=1)
            if np.any(norms == 0):
                raise DomainError("brownian_F is undefined at the origin")
            e = spec.d - 2
            with np.errstate(divide="ignore"):
                K = np.where(dist > 0, (norms[:, None] ** e + norms[None, :] ** e) / dist**e, INF)
        else:
            K = spec.phi(dist)
    if h is not None:
        np.fill_diagonal(K, self_energy_value(spec, h))
    return K


def self_energy_value(spec: KernelSpec, h: float) -> float:
    if not h > 0:
        raise InvalidInput("cell size h must be positive")
    if spec.kind == "brownian_F":
        raise DomainError("brownian_F has no radial self-energy; use a distance kernel")
    return float(spec.phi(h))


# ---------------------------------------------------------------------------
# measures

ATOMIC = "atomic"
DENSITY = "density"
SINGULAR = "singular"


@dataclass(frozen=True)
class Component:
    """Declared nature of the atoms ``start:stop`` of a discrete measure."""

    start: int
    stop: int
    kind: str
    dim: Optional[float] = None

    def tag(self) -> str:
        if self.kind == DENSITY:
            return f"density:{self.dim:g}"
        return self.kind

    @staticmethod
    def parse_tag(tag: str):
        kind, _, dim = tag.partition(":")
        if kind == DENSITY:
            try:
                return kind, float(dim)
            except ValueError as exc:
                raise InvalidInput(f"density tag needs a dimension: {tag!r}") from exc
        if kind in (ATOMIC, SINGULAR):
            return kind, None
        raise InvalidInput(f"unknown component tag {tag!r}")


class DiscreteMeasure:
    """Finitely many weighted atoms; points are rows of an array or tree prefixes."""

    def __init__(self, points, weights, components=None):
        w = np.asarray(weights, dtype=float).ravel()
        if isinstance(points, (list, tuple)) and points and isinstance(points[0], str):
            pts = list(points)
            distinct = len(set(pts)) == len(pts)
        else:
            pts = np.atleast_2d(np.asarray(points, dtype=float))
            if pts.size == 0:
                pts = pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 0)
            distinct = len(np.unique(pts, axis=0)) == len(pts)
        if len(pts) != len(w):
            raise InvalidInput("points and weights differ in length")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InvalidInput("weights must be finite and non-negative")
        if not distinct:
            raise InvalidInput("atoms must sit at distinct locations")
        self.points = pts
        self.weights = w
        self.components = list(components) if components else []

    def __len__(self):
        return len(self.weights)

    @property
    def is_tree(self) -> bool:
        return isinstance(self.points, list)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def subset(self, idx) -> "DiscreteMeasure":
        idx = np.asarray(idx, dtype=int)
        pts = [self.points[i] for i in idx] if self.is_tree else self.points[idx]
        return DiscreteMeasure(pts, self.weights[idx])

    def restrict(self, region) -> "DiscreteMeasure":
        mask = region.contains(self.points)
        return self.subset(np.flatnonzero(mask))

    def save_csv(self, path):
        tags = [""] * len(self)
        for comp in self.components:
            for i in range(comp.start, comp.stop):
                tags[i] = comp.tag()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            if self.is_tree:
                wr.writerow(["vertex", "weight", "component"])
                for p, w, t in zip(self.points, self.weights, tags):
                    wr.writerow([p, repr(float(w)), t])
            else:
                d = self.points.shape[1]
                wr.writerow([f"x{j + 1}" for j in range(d)] + ["weight", "component"])
                for p, w, t in zip(self.points, self.weights, tags):
                    wr.writerow([repr(float(v)) for v in p] + [repr(float(w)), t])

    @classmethod
    def load_csv(cls, path) -> "DiscreteMeasure":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise InvalidInput(f"{path}: empty measure file")
        header, body = rows[0], [r for r in rows[1:] if r]
        try:
            wcol = header.index("weight")
        except ValueError as exc:
            raise InvalidInput(f"{path}: missing weight column") from exc
        tcol = header.index("component") if "component" in header else None
        tree = header[0] == "vertex"
        try:
            if tree:
                pts = [r[0] for r in body]
            else:
                pts = np.array([[float(v) for v in r[:wcol]] for r in body])
            weights = [float(r[wcol]) for r in body]
        except ValueError as exc:
            raise InvalidInput(f"{path}: non-numeric entry") from exc
        tags = [r[tcol] if tcol is not None and tcol < len(r) else "" for r in body]
        return cls(pts, weights, _components_from_tags(tags))


def _components_from_tags(tags):
    comps = []
    start = 0
    for i in range(1, len(tags) + 1):
        if i == len(tags) or tags[i] != tags[start]:
            if tags[start]:
                kind, dim = Component.parse_tag(tags[start])
                comps.append(Component(start, i, kind, dim))
            start = i
    return comps


# ---------------------------------------------------------------------------
# energies and capacities


def energy(measure: DiscreteMeasure, spec: KernelSpec, diagonal="include", h=None) -> float:
    """Double sum ``sum_ij w_i w_j K(x_i, x_j)``.

    ``diagonal`` selects how coincident pairs are treated: ``include`` uses
    the kernel's value at zero, ``self-energy`` uses ``phi(h)``, ``exclude``
    drops them.
    """
    w = measure.weights
    if len(w) == 0:
        return 0.0
    if diagonal == "self-energy":
        K = kernel_matrix(spec, measure.points, h=h)
    else:
        K = kernel_matrix(spec, measure.points, h=1.0 if spec.kind != "brownian_F" else None)
        if diagonal == "include":
            if spec.value_at_zero == INF and np.any(w > 0):
                return INF
            np.fill_diagonal(K, spec.value_at_zero)
        elif diagonal == "exclude":
            np.fill_diagonal(K, 0.0)
        else:
            raise InvalidInput(f"unknown diagonal mode {diagonal!r}")
    return float(w @ K @ w)


@dataclass
class CapacityResult:
    value: float
    weights: np.ndarray
    gap: float
    iterations: int
    energy: float

    def checksum(self) -> str:
        return hashlib.sha256(np.round(self.weights, 12).tobytes()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "gap": self.gap,
            "iterations": self.iterations,
            "minimizer-checksum": self.checksum(),
        }


def minimize_simplex_quadratic(K: np.ndarray, tol=1e-8, max_iter=100_000, w0=None):
    """Away-step Frank-Wolfe for ``min w^T K w`` over the probability simplex.

    Returns ``(w, f, gap, iterations)``; ``gap`` is the Frank-Wolfe duality gap
    at ``w``.  Raises :class:`SolverError` when ``max_iter`` is exhausted.
    """
    n = K.shape[0]
    w = np.full(n, 1.0 / n) if w0 is None else np.array(w0, dtype=float)
    g = K @ w
    f = float(w @ g)
    gap = INF
    for it in range(max_iter + 1):
        if it and it % 1000 == 0:
            g = K @ w
            f = float(w @ g)
        s = int(np.argmin(g))
        gap = 2.0 * (f - g[s])
        if gap <= tol:
            return w, f, max(gap, 0.0), it
        support = np.flatnonzero(w > 0)
        a = int(support[np.argmax(g[support])])
        away_gap = 2.0 * (g[a] - f)
        if gap >= away_gap:
            slope = g[s] - f
            curv = K[s, s] - 2.0 * g[s] + f
            step = 1.0 if curv <= 0 else min(1.0, -slope / curv)
            w *= 1.0 - step
            w[s] += step
            g = (1.0 - step) * g + step * K[:, s]
        else:
            slope = f - g[a]
            curv = f - 2.0 * g[a] + K[a, a]
            cap = w[a] / (1.0 - w[a]) if w[a] < 1.0 else INF
            step = cap if curv <= 0 else min(cap, -slope / curv)
            w *= 1.0 + step
            w[a] -= step
            if step == cap:
                w[a] = 0.0
            g = (1.0 + step) * g - step * K[:, a]
        np.maximum(w, 0.0, out=w)
        f = float(w @ g)
    raise SolverError("Frank-Wolfe did not reach the duality-gap tolerance", gap, max_iter)


def auto_cell_scale(points) -> float:
    """Half the median nearest-neighbour spacing of a point cloud."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if len(x) < 2:
        raise InvalidInput("automatic cell size needs at least two points")
    dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
    np.fill_diagonal(dist, INF)
    return 0.5 * float(np.median(dist.min(axis=1)))


def tree_cell_scale(depth: int, m: int, alpha: float) -> float:
    """Cell size ``h`` whose ``phi(h)`` is the exact energy of a uniform depth-``depth`` cylinder.

    The uniform probability measure on an m-ary cylinder of depth ``n`` has
    energy ``2^(alpha n) (1 - 1/m) / (1 - 2^alpha / m)``; finite iff ``2^alpha < m``.
    """
    ratio = 2.0**alpha / m
    if ratio >= 1:
        raise InvalidInput("uniform cylinder measure has infinite energy for this alpha")
    cell = 2.0 ** (alpha * depth) * (1 - 1 / m) / (1 - ratio)
    return cell ** (-1.0 / alpha)


def capacity_finite(points, spec: KernelSpec, h: float, tol=1e-8, max_iter=100_000) -> CapacityResult:
    if len(points) < 1:
        raise InvalidInput("capacity needs at least one point")
    K = kernel_matrix(spec, points, h=h)
    w, f, gap, it = minimize_simplex_quadratic(K, tol=tol, max_iter=max_iter)
    return CapacityResult(value=1.0 / f, weights=w, gap=gap, iterations=it, energy=f)


def capacity_of_measure(nu: DiscreteMeasure, spec: KernelSpec, h: float, **opts) -> CapacityResult:
    """Capacity over probability measures absolutely continuous w.r.t. ``nu``."""
    if nu.total_mass <= 0:
        raise InvalidInput("capacity of a zero measure is undefined")
    support = np.flatnonzero(nu.weights > 0)
    pts = [nu.points[i] for i in support] if nu.is_tree else nu.points[support]
    res = capacity_finite(pts, spec, h, **opts)
    full = np.zeros(len(nu))
    full[support] = res.weights
    res.weights = full
    return res


def classify_decomposition(nu: DiscreteMeasure, spec: KernelSpec):
    """Split ``nu`` into its regular and singular parts using declared components.

    Atoms and declared-singular pieces are singular; a density piece is
    regular iff its support dimension exceeds the kernel's threshold.
    """
    covered = np.zeros(len(nu), dtype=bool)
    regular = np.zeros(len(nu), dtype=bool)
    threshold = spec.threshold
    for comp in nu.components:
        covered[comp.start : comp.stop] = True
        if comp.kind == DENSITY:
            if threshold is None:
                raise InvalidInput("kernel has no dimension threshold for classification")
            regular[comp.start : comp.stop] = comp.dim > threshold
    if not np.all(covered):
        raise InvalidInput("every atom needs component metadata to be classified")
    reg_idx = np.flatnonzero(regular)
    sing_idx = np.flatnonzero(~regular)
    part_r = nu.subset(reg_idx)
    part_s = nu.subset(sing_idx)
    part_r.components = _shift_components(nu.components, reg_idx)
    part_s.components = _shift_components(nu.components, sing_idx)
    return part_r, part_s


def _shift_components(components, kept):
    kept_set = {int(i): n for n, i in enumerate(kept)}
    out = []
    for comp in components:
        idx = [kept_set[i] for i in range(comp.start, comp.stop) if i in kept_set]
        if idx:
            out.append(Component(idx[0], idx[-1] + 1, comp.kind, comp.dim))
    return out


def fibonacci_sphere(n: int, radius: float = 1.0) -> np.ndarray:
    """Near-uniform points on the 2-sphere (golden-angle spiral)."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(1.0 - z * z)
    theta = math.pi * (1.0 + math.sqrt(5.0)) * i
    return radius * np.column_stack([rho * np.cos(theta), rho * np.sin(theta), z])
