"""Percolation on regular trees and conditional measures on the boundary.

Vertices are prefix strings over ``0..m-1``; the root is ``""`` and is never
percolated.  Depth-``j`` vertices are ordered lexicographically, which is the
integer they spell in base ``m``, so per-depth data lives in flat arrays of
length ``m^j``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, InvalidInput, ResourceError
from .harness import make_rng

BRUTE_FORCE_LIMIT = 1 << 24  # configurations


def survival_prob(m: int, p: float, tol=1e-14, max_iter=10_000_000) -> float:
    """Survival probability of the Galton-Watson tree with Binomial(m, p) offspring."""
    if int(m) != m or m < 2:
        raise InvalidInput("branching number must be an integer >= 2")
    if not 0 < p <= 1:
        raise InvalidInput("p must lie in (0, 1]")
    if m * p <= 1:
        return 0.0  # (sub)critical: extinction is certain
    q = 0.0
    for _ in range(max_iter):
        nq = (1.0 - p + p * q) ** m
        if abs(nq - q) <= tol:
            return 1.0 - nq
        q = nq
    return 1.0 - q


@dataclass(frozen=True)
class TreeSpec:
    m: int
    alpha: float
    max_depth: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise InvalidInput("branching number must be an integer >= 2")
        if not self.alpha > 0:
            raise InvalidInput("alpha must be positive")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise InvalidInput("max_depth must be a positive integer")

    @property
    def p(self) -> float:
        return 2.0 ** -self.alpha

    @property
    def s(self) -> float:
        return survival_prob(self.m, self.p)

    def require_supercritical(self):
        if self.s <= 0:
            raise DomainError("percolation is (sub)critical: every cylinder has zero hit probability")

    def vertices(self, depth: int) -> list:
        return vertices(self.m, depth)


def vertices(m: int, depth: int) -> list:
    return ["".join(t) for t in itertools.product([str(i) for i in range(m)], repeat=depth)]


def vertex_index(v: str, m: int) -> int:
    return int(v, m) if v else 0


def cylinder_hit_prob(depth: int, m: int, p: float) -> float:
    """``P([v] meets the limit set) = p^|v| s``."""
    return p**depth * survival_prob(m, p)


def meet_depth(v: str, w: str) -> int:
    n = 0
    for a, b in zip(v, w):
        if a != b:
            break
        n += 1
    return n


def F_tree(v: str, w: str, m: int, p: float) -> float:
    """``P([v], [w] both hit) / (P([v] hit) P([w] hit))``."""
    j = meet_depth(v, w)
    if j == min(len(v), len(w)):  # nested
        return 1.0 / cylinder_hit_prob(j, m, p)
    return p**-j


def F_tree_matrix(m: int, p: float, k: int, n: int) -> np.ndarray:
    vk, vn = vertices(m, k), vertices(m, n)
    return np.array([[F_tree(a, b, m, p) for b in vn] for a in vk])


# ---------------------------------------------------------------------------
# measures on the boundary


class TreeMeasure:
    """Measure on the boundary given by masses of the depth-``depth`` cylinders."""

    def __init__(self, m: int, masses):
        w = np.asarray(masses, dtype=float).ravel()
        depth = round(math.log(len(w), m)) if len(w) > 1 else 0
        if m**depth != len(w):
            raise InvalidInput("mass vector length must be a power of the branching number")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidInput("masses must be finite and non-negative")
        self.m = int(m)
        self.depth = depth
        self.masses = w

    @classmethod
    def uniform(cls, m: int, depth: int, total=1.0) -> "TreeMeasure":
        return cls(m, np.full(m**depth, total / m**depth))

    def at_depth(self, k: int) -> np.ndarray:
        """Cylinder masses at depth ``k <= self.depth``."""
        if k > self.depth:
            raise InvalidInput(f"measure is only specified down to depth {self.depth}")
        return self.masses.reshape(self.m**k, -1).sum(axis=1)

    def total(self) -> float:
        return float(self.masses.sum())

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(["path", "mass"])
            for v, w in zip(vertices(self.m, self.depth), self.masses):
                wr.writerow([v, repr(float(w))])

    @classmethod
    def from_csv(cls, path, m: int) -> "TreeMeasure":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InvalidInput(f"{path}: empty tree measure")
        depth = len(rows[0]["path"])
        masses = np.zeros(m**depth)
        for r in rows:
            v = r["path"]
            if len(v) != depth or any(int(c) >= m for c in v):
                raise InvalidInput(f"{path}: bad vertex {v!r}")
            masses[vertex_index(v, m)] += float(r["mass"])
        return cls(m, masses)


@dataclass
class CylinderMeasure:
    level: int
    entries: dict  # vertex string -> mass
    prob_table_id: str = "exact"

    def total(self) -> float:
        return float(sum(self.entries.values()))


# ---------------------------------------------------------------------------
# sampling


@dataclass
class PercolationSample:
    """``n`` independent percolation configurations down to depth ``spec.max_depth``.

    ``open_bits[j-1]`` has shape ``(n, m^j)`` for ``j = 1..K``; ``survival``
    holds the eternal-survival bits of the depth-``K`` vertices (only
    meaningful where the vertex is alive).
    """

    spec: TreeSpec
    open_bits: list
    survival: np.ndarray

    @property
    def n(self) -> int:
        return self.survival.shape[0]

    def alive(self, j: int) -> np.ndarray:
        m = self.spec.m
        if j == 0:
            return np.ones((self.n, 1), dtype=bool)
        a = self.open_bits[0].copy()
        for i in range(1, j):
            a = np.repeat(a, m, axis=1) & self.open_bits[i]
        return a

    def hit(self, j: int) -> np.ndarray:
        """``[v]`` meets the limit set, for every depth-``j`` vertex."""
        K = self.spec.max_depth
        if not 0 <= j <= K:
            raise InvalidInput(f"depth {j} outside 0..{K}")
        frontier = self.alive(K) & self.survival
        return frontier.reshape(self.n, self.spec.m**j, -1).any(axis=2)

    def survives(self) -> np.ndarray:
        return self.hit(0)[:, 0]


def sample_percolation(seed, spec: TreeSpec, n: int = 1) -> PercolationSample:
    rng = make_rng(seed)
    p, s, m = spec.p, spec.s, spec.m
    bits = [rng.random((n, m**j)) < p for j in range(1, spec.max_depth + 1)]
    surv = rng.random((n, m**spec.max_depth)) < s
    return PercolationSample(spec, bits, surv)


def _nu_at(nu, k, m):
    if isinstance(nu, TreeMeasure):
        return nu.at_depth(k)
    w = np.asarray(nu, dtype=float).ravel()
    if len(w) != m**k:
        raise InvalidInput(f"expected {m**k} depth-{k} masses")
    return w


def conditional_masses(sample: PercolationSample, nu, k: int) -> np.ndarray:
    """``C_k(nu)`` cylinder masses for every configuration, shape ``(n, m^k)``."""
    spec = sample.spec
    if k > spec.max_depth:
        raise InvalidInput("k exceeds the sampled depth")
    spec.require_supercritical()
    w = _nu_at(nu, k, spec.m)
    return sample.hit(k) * (w / cylinder_hit_prob(k, spec.m, spec.p))


def conditional_measure_tree(sample: PercolationSample, nu, k: int, index: int = 0) -> CylinderMeasure:
    masses = conditional_masses(sample, nu, k)[index]
    names = vertices(sample.spec.m, k)
    return CylinderMeasure(k, {names[i]: float(masses[i]) for i in np.flatnonzero(masses > 0)})


def cascade_masses(sample: PercolationSample, nu, k: int) -> np.ndarray:
    """``mu_k = p^-k nu`` on alive depth-``k`` cylinders, shape ``(n, m^k)``."""
    spec = sample.spec
    if k > spec.max_depth:
        raise InvalidInput("k exceeds the sampled depth")
    w = _nu_at(nu, k, spec.m)
    return sample.alive(k) * (w * spec.p**-k)


def cascade_measure(sample: PercolationSample, nu, k: int, index: int = 0) -> CylinderMeasure:
    masses = cascade_masses(sample, nu, k)[index]
    names = vertices(sample.spec.m, k)
    return CylinderMeasure(k, {names[i]: float(masses[i]) for i in np.flatnonzero(masses > 0)})


def cascade_gap_formula(spec: TreeSpec, nu, k: int) -> float:
    """``E[(mu_k(boundary) - C_k(nu)(boundary))^2] = p^-k (1/s - 1) sum_Q nu(Q)^2``.

    Given ``Q`` alive at depth ``k`` the cylinder is hit with probability ``s``.
    """
    spec.require_supercritical()
    w = _nu_at(nu, k, spec.m)
    return spec.p**-k * (1.0 / spec.s - 1.0) * float(np.sum(w * w))


def martingale_step(sample: PercolationSample, nu, k: int, index: int = 0):
    """Return ``(E[mu_{k+1}(boundary) | depth-k configuration], mu_k(boundary))``.

    The conditional expectation is computed by enumerating the ``2^m`` open
    patterns of the children of every alive depth-``k`` vertex.
    """
    spec = sample.spec
    m, p = spec.m, spec.p
    if k + 1 > spec.max_depth:
        raise InvalidInput("k + 1 exceeds the sampled depth")
    wk1 = _nu_at(nu, k + 1, m).reshape(-1, m)
    alive = sample.alive(k)[index]
    cond = 0.0
    for pattern in itertools.product((0, 1), repeat=m):
        pat = np.array(pattern, dtype=float)
        prob = p ** pat.sum() * (1 - p) ** (m - pat.sum())
        cond += prob * float(np.sum(alive * (wk1 @ pat))) * p ** -(k + 1)
    mu_k = float(cascade_masses(sample, nu, k)[index].sum())
    return cond, mu_k


# ---------------------------------------------------------------------------
# brute-force enumeration


class Configurations:
    """A block of percolation configurations with exact probabilities.

    Internal vertices (depth ``1..K-1``) are open or closed; depth-``K``
    vertices are closed, open with a dying subtree, or open with a surviving
    subtree, with probabilities ``1-p``, ``p(1-s)``, ``ps``.
    """

    def __init__(self, spec: TreeSpec, open_bits: list, survival: np.ndarray, prob: np.ndarray):
        self.sample = PercolationSample(spec, open_bits, survival)
        self.prob = prob
        self.spec = spec

    def _locate(self, v: str):
        if len(v) > self.spec.max_depth or any(int(c) >= self.spec.m for c in v):
            raise InvalidInput(f"vertex {v!r} not in the truncated tree")
        return len(v), vertex_index(v, self.spec.m)

    def hit(self, v: str) -> np.ndarray:
        j, i = self._locate(v)
        return self.sample.hit(j)[:, i]

    def alive(self, v: str) -> np.ndarray:
        j, i = self._locate(v)
        return self.sample.alive(j)[:, i]

    def is_open(self, v: str) -> np.ndarray:
        j, i = self._locate(v)
        if j == 0:
            return np.ones(len(self.prob), dtype=bool)
        return self.sample.open_bits[j - 1][:, i]

    def conditional_total(self, nu, k: int) -> np.ndarray:
        return conditional_masses(self.sample, nu, k).sum(axis=1)

    def cascade_total(self, nu, k: int) -> np.ndarray:
        return cascade_masses(self.sample, nu, k).sum(axis=1)


def configuration_count(spec: TreeSpec) -> int:
    m, K = spec.m, spec.max_depth
    internal = sum(m**j for j in range(1, K))
    return 2**internal * 3 ** (m**K)


def _blocks(spec: TreeSpec, block=1 << 18):
    m, K = spec.m, spec.max_depth
    total = configuration_count(spec)
    if total > BRUTE_FORCE_LIMIT:
        raise ResourceError(f"{total} configurations exceed the enumeration limit {BRUTE_FORCE_LIMIT}")
    p, s = spec.p, spec.s
    sizes = [m**j for j in range(1, K)]
    n_int = sum(sizes)
    n_leaf = m**K
    leaf_p = np.array([1 - p, p * (1 - s), p * s])
    for start in range(0, total, block):
        code = np.arange(start, min(total, start + block), dtype=np.int64)
        leaf_digits = np.empty((len(code), n_leaf), dtype=np.int64)
        c = code.copy()
        for i in range(n_leaf):
            leaf_digits[:, i] = c % 3
            c //= 3
        int_bits = ((c[:, None] >> np.arange(n_int)[None, :]) & 1).astype(bool)
        prob = np.prod(np.where(int_bits, p, 1 - p), axis=1) * np.prod(leaf_p[leaf_digits], axis=1)
        bits, pos = [], 0
        for size in sizes:
            bits.append(int_bits[:, pos : pos + size])
            pos += size
        bits.append(leaf_digits > 0)
        yield Configurations(spec, bits, leaf_digits == 2, prob)


def brute_force_expectation(spec: TreeSpec, func: Callable[[Configurations], np.ndarray]) -> float:
    """Exact ``E[func]`` by enumerating every configuration of the truncated tree."""
    total = 0.0
    mass = 0.0
    for conf in _blocks(spec):
        total += float(np.sum(conf.prob * np.asarray(func(conf), dtype=float)))
        mass += float(conf.prob.sum())
    if abs(mass - 1.0) > 1e-9:
        raise RuntimeError(f"configuration probabilities sum to {mass}")
    return total


def brute_force_joint(spec: TreeSpec, events: Sequence[Callable[[Configurations], np.ndarray]]) -> float:
    """Exact probability that all ``events`` occur."""
    def both(conf):
        ok = np.ones(len(conf.prob), dtype=bool)
        for ev in events:
            ok &= np.asarray(ev(conf), dtype=bool)
        return ok

    return brute_force_expectation(spec, both)


def hit_event(v: str):
    return lambda conf: conf.hit(v)


def open_event(v: str):
    return lambda conf: conf.is_open(v)


def alive_event(v: str):
    return lambda conf: conf.alive(v)


def second_moment_exact(spec: TreeSpec, nu1, k: int, nu2=None, n: Optional[int] = None) -> float:
    """``E[C_k(nu1)(boundary) C_n(nu2)(boundary)]`` by enumeration."""
    nu2 = nu1 if nu2 is None else nu2
    n = k if n is None else n
    return brute_force_expectation(spec, lambda c: c.conditional_total(nu1, k) * c.conditional_total(nu2, n))


def second_moment_kernel(spec: TreeSpec, nu1, k: int, nu2=None, n: Optional[int] = None) -> float:
    """``sum_{v in T_k, w in T_n} nu1([v]) nu2([w]) F(v, w)``."""
    nu2 = nu1 if nu2 is None else nu2
    n = k if n is None else n
    w1, w2 = _nu_at(nu1, k, spec.m), _nu_at(nu2, n, spec.m)
    return float(w1 @ F_tree_matrix(spec.m, spec.p, k, n) @ w2)
