"""Monte Carlo trial runner with mergeable summaries.

Every trial draws from its own Philox stream keyed by ``(master_seed, index)``,
so results do not depend on how trials are scheduled across workers.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInput

log = logging.getLogger(__name__)


def trial_rng(master_seed, index=None) -> np.random.Generator:
    """Counter-based generator for one trial (or one batch) of an experiment."""
    key = [int(master_seed)] if index is None else [int(master_seed), int(index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return trial_rng(*seed)
    return trial_rng(seed)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("CONDMEAS_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class EstimatorSummary:
    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    min: float = math.inf
    max: float = -math.inf
    failures: int = 0
    target: Optional[float] = None
    values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_values(cls, values, target=None, failures=0, keep=False) -> "EstimatorSummary":
        v = np.asarray(values, dtype=float).ravel()
        if v.size == 0:
            return cls(failures=failures, target=target, values=v if keep else None)
        mean = float(v.mean())
        return cls(
            n=int(v.size),
            mean=mean,
            m2=float(np.sum((v - mean) ** 2)),
            min=float(v.min()),
            max=float(v.max()),
            failures=failures,
            target=target,
            values=v if keep else None,
        )

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n) if self.n else math.nan

    @property
    def z(self) -> Optional[float]:
        if self.target is None or not self.n:
            return None
        if self.stderr == 0:
            return 0.0 if self.mean == self.target else math.copysign(math.inf, self.mean - self.target)
        return (self.mean - self.target) / self.stderr

    def merge(self, other: "EstimatorSummary") -> "EstimatorSummary":
        """Pooled moments of two disjoint trial sets (Chan et al. update)."""
        n = self.n + other.n
        target = self.target if self.target is not None else other.target
        if n == 0:
            return EstimatorSummary(failures=self.failures + other.failures, target=target)
        delta = other.mean - self.mean
        mean = self.mean + delta * other.n / n
        m2 = self.m2 + other.m2 + delta * delta * self.n * other.n / n
        return EstimatorSummary(
            n=n,
            mean=mean,
            m2=m2,
            min=min(self.min, other.min),
            max=max(self.max, other.max),
            failures=self.failures + other.failures,
            target=target,
        )

    def to_json(self, experiment="", params=None) -> dict:
        return {
            "experiment": experiment,
            "params": params or {},
            "n": self.n,
            "failures": self.failures,
            "mean": self.mean,
            "stderr": self.stderr,
            "target": self.target,
            "z": self.z,
        }


def _run_chunk(experiment, master_seed, indices):
    out = []
    for i in indices:
        try:
            out.append((i, float(experiment(trial_rng(master_seed, i)))))
        except Exception as exc:  # trial failures are counted, not raised
            out.append((i, exc))
    return out


def _collect(results, n):
    values = np.full(n, np.nan)
    failed = np.zeros(n, dtype=bool)
    for i, v in results:
        if isinstance(v, Exception):
            failed[i] = True
            log.warning("trial %d failed: %r", i, v)
        else:
            values[i] = v
    return values, failed


def run_trials(
    experiment: Callable[[np.random.Generator], float],
    n: int,
    master_seed: int,
    workers: Optional[int] = None,
    target=None,
    keep_values=False,
) -> EstimatorSummary:
    """Run ``n`` independent trials of ``experiment(rng) -> float``.

    With ``workers > 1`` the experiment must be picklable.  Values are reduced
    in trial order, so the summary is identical for any worker count.
    """
    if n < 1:
        raise InvalidInput("need at least one trial")
    workers = default_workers() if workers is None else workers
    indices = list(range(n))
    if workers <= 1:
        results = _run_chunk(experiment, master_seed, indices)
    else:
        chunks = [indices[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [experiment] * workers, [master_seed] * workers, chunks)
            results = [r for part in parts for r in part]
    values, failed = _collect(results, n)
    if failed.any():
        log.warning("%d of %d trials failed and were excluded", int(failed.sum()), n)
    return EstimatorSummary.from_values(
        values[~failed], target=target, failures=int(failed.sum()), keep=keep_values
    )


def _run_batch(experiment, master_seed, batch_index, size):
    return experiment(trial_rng(master_seed, batch_index), size)


def run_batches(
    experiment: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    master_seed: int,
    batch_size: int = 100_000,
    workers: Optional[int] = None,
) -> np.ndarray:
    """Vectorised variant: ``experiment(rng, size)`` returns ``size`` trial values.

    Batch ``b`` always covers trials ``[b * batch_size, (b + 1) * batch_size)``
    and uses stream ``(master_seed, b)``.
    """
    if n < 1:
        raise InvalidInput("need at least one trial")
    sizes = [min(batch_size, n - s) for s in range(0, n, batch_size)]
    workers = default_workers() if workers is None else workers
    if workers <= 1:
        parts = [_run_batch(experiment, master_seed, b, s) for b, s in enumerate(sizes)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    _run_batch,
                    [experiment] * len(sizes),
                    [master_seed] * len(sizes),
                    range(len(sizes)),
                    sizes,
                )
            )
    return np.concatenate([np.asarray(p) for p in parts], axis=0)


@dataclass
class ConvergenceReport:
    levels: list
    eps_grid: list
    fractions: np.ndarray  # shape (levels, eps)
    medians: np.ndarray  # median |value - target| per level

    @property
    def monotone(self) -> list:
        """Per-epsilon flag: exceedance fraction non-increasing in the level."""
        return [bool(np.all(np.diff(self.fractions[:, j]) <= 0)) for j in range(len(self.eps_grid))]

    @property
    def strictly_decreasing(self) -> list:
        return [bool(np.all(np.diff(self.fractions[:, j]) < 0)) for j in range(len(self.eps_grid))]

    @property
    def median_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.medians) < 0))

    def rows(self):
        for i, k in enumerate(self.levels):
            for j, eps in enumerate(self.eps_grid):
                yield {"level": k, "eps": eps, "fraction": float(self.fractions[i, j])}


def convergence_check(values: dict, target, eps_grid: Sequence[float], relative=False) -> ConvergenceReport:
    """Exceedance fractions ``P(|Y_k - Y| > eps)`` per level.

    ``target`` is a scalar or a per-trial array (same length as each level's
    values).  With ``relative`` the gap is divided by ``|target|``.
    """
    if len(values) < 2:
        raise InvalidInput("convergence check needs at least two levels")
    levels = sorted(values)
    eps = np.asarray(list(eps_grid), dtype=float)
    fracs = np.empty((len(levels), len(eps)))
    meds = np.empty(len(levels))
    tgt = np.asarray(target, dtype=float)
    for i, k in enumerate(levels):
        v = np.asarray(values[k], dtype=float)
        gap = np.abs(v - tgt)
        if relative:
            gap = gap / np.abs(tgt)
        fracs[i] = (gap[:, None] > eps[None, :]).mean(axis=0)
        meds[i] = np.median(gap)
    return ConvergenceReport(levels, [float(e) for e in eps], fracs, meds)


def derive_seed(master_seed, tag: int) -> int:
    """Independent 63-bit master seed for a sub-experiment (e.g. a calibration run)."""
    state = np.random.SeedSequence([int(master_seed), int(tag)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1
