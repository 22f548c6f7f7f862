"""Named experiments shared by the command line and the acceptance suite.

Each function returns a plain dict of results (JSON-serialisable apart from
the optional ``values`` arrays) so callers can print, store or assert on it.
"""

from __future__ import annotations

import math
from functools import partial

import numpy as np

from .brownian.cubes import Density, calibrate_hit_tables, cube_masses, path_hits
from .brownian.occupation import (
    boxcount_scaling,
    first_moment,
    green_weights,
    occupation_measure,
    residual_bound,
    second_moment_ball,
)
from .brownian.paths import escape_bias_bound, hit_prob_ball, simulate_focused
from .brownian.wos import wos_ball_hits, wos_nested_box_hits
from .dyadic import cube_of_point
from .errors import InvalidInput
from .harness import EstimatorSummary, convergence_check, derive_seed, run_batches, run_trials, trial_rng
from .potential import DiscreteMeasure, KernelSpec, capacity_of_measure, eval_kernel, tree_cell_scale
from .regions import Ball, Box
from . import treeperc as tp

CALIBRATION_TAG = 1
WOS_BATCH = 50_000


def _summary(values, target=None, failures=0):
    s = EstimatorSummary.from_values(values, target=target, failures=failures)
    return {"n": s.n, "failures": s.failures, "mean": s.mean, "stderr": s.stderr, "target": target, "z": s.z}


# ---------------------------------------------------------------------------
# walk-on-spheres


def _ball_batch(centers, radii, far_radius, eps, rng, size):
    return wos_ball_hits(rng, centers, radii, size, far_radius, eps).hits


def hit_ball(x, r, trials, seed, far_radius=1e4, eps=1e-4, workers=None):
    x = np.asarray(x, dtype=float)
    d = len(x)
    hits = run_batches(partial(_ball_batch, [x], [r], far_radius, eps), trials, seed, WOS_BATCH, workers)[:, 0]
    out = _summary(hits.astype(float), target=hit_prob_ball(x, r, d))
    out["bias_bound"] = escape_bias_bound(np.linalg.norm(x) + r, far_radius, d)
    out["values"] = hits
    return out


def hit_joint(x, y, r, trials, seed, far_radius=1e4, eps=1e-4, workers=None):
    """Joint-to-product hit ratio for two small balls, against the kernel ``F(x, y)``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    d = len(x)
    hits = run_batches(partial(_ball_batch, [x, y], [r, r], far_radius, eps), trials, seed, WOS_BATCH, workers)
    a, b = hits[:, 0].astype(float), hits[:, 1].astype(float)
    ab = a * b
    pa, pb, pab = a.mean(), b.mean(), ab.mean()
    if min(pa, pb, pab) <= 0:
        raise RuntimeError("no joint hits observed; increase trials or radius")
    ratio = pab / (pa * pb)
    # delta method on log(ratio)
    psi = ab / pab - a / pa - b / pb
    se = ratio * float(psi.std(ddof=1)) / math.sqrt(len(a))
    target = eval_kernel(KernelSpec.brownian_F(d), x, y)
    r0 = max(np.linalg.norm(x), np.linalg.norm(y)) + r
    return {
        "n": len(a),
        "failures": 0,
        "mean": ratio,
        "stderr": se,
        "target": target,
        "z": (ratio - target) / se,
        "rel_err": abs(ratio - target) / target,
        "p_x": pa,
        "p_y": pb,
        "p_xy": pab,
        "bias_bound": escape_bias_bound(r0, far_radius, d),
    }


def _nested_batch(boxes, far_radius, eps, rng, size):
    return wos_nested_box_hits(rng, boxes, size, far_radius, eps).hits


def singular_extinction(x, levels, trials, seed, far_radius=1e4, eps=1e-5, workers=None):
    """``P(C_k(delta_x)(X) > 0) = P(Q_k(x) hit)`` for each level, from nested walks."""
    levels = sorted(int(k) for k in levels)
    cubes = [cube_of_point(x, k) for k in levels]
    boxes = [q.box() for q in cubes]
    hits = run_batches(partial(_nested_batch, boxes, far_radius, eps), trials, seed, WOS_BATCH, workers)
    freq = hits.mean(axis=0)
    ratios = freq[1:] / freq[:-1]
    return {
        "levels": levels,
        "cubes": [str(q) for q in cubes],
        "freq": freq.tolist(),
        "stderr": np.sqrt(freq * (1 - freq) / len(hits)).tolist(),
        "ratios": ratios.tolist(),
        "n": len(hits),
    }


# ---------------------------------------------------------------------------
# conditional measures along Euler paths


def _condmeasure_trial(d, dt, escape_radius, region, k, weights, rng):
    path = simulate_focused(rng, d, dt, escape_radius, region)
    h = path_hits(path, [k], region, rng)[k]
    return float(weights[h].sum())


def condmeasure(region: Box, k, trials, cal_trials, seed, nu="uniform", A=None, dt=1e-3,
                escape_radius=50.0, workers=None):
    """Mean of ``C_k(nu)(A)`` over fresh paths, with an independent calibration table.

    ``nu`` is ``"uniform"`` (Lebesgue measure on ``region``), a point (unit
    atom there), a :class:`Density` or a :class:`DiscreteMeasure`.
    """
    d = region.dim
    A = region if A is None else A
    table = calibrate_hit_tables(derive_seed(seed, CALIBRATION_TAG), [k], region, cal_trials, d=d, dt=dt,
                                 escape_radius=escape_radius, keep_hits=True)[k]
    if isinstance(nu, str) and nu == "uniform":
        measure = Density(lambda x: np.ones(len(x)), region)
    elif isinstance(nu, (Density, DiscreteMeasure)):
        measure = nu
    else:
        measure = DiscreteMeasure(np.atleast_2d(np.asarray(nu, float)), [1.0])
    masses = cube_masses(measure, table.grid)
    centers = table.grid.lower_corners() + 0.5 * 2.0**-k
    masses = np.where(A.contains(centers), masses, 0.0)
    target = float(masses.sum())
    weights = masses / table.p
    summary = run_trials(partial(_condmeasure_trial, d, dt, escape_radius, region, k, weights), trials, seed,
                         workers, target=target)
    cal_se = table.calibration_stderr(masses)
    combined = math.hypot(summary.stderr, cal_se)
    out = summary.to_json("condmeasure")
    out.update({
        "calibration_stderr": cal_se,
        "z_combined": (summary.mean - target) / combined if combined > 0 else 0.0,
        "flagged_cubes": int(table.flagged[masses > 0].sum()),
        "table_id": table.table_id,
    })
    return out


# ---------------------------------------------------------------------------
# occupation


def _occupation_trial(d, dt, escape_radius, region, rng):
    path = simulate_focused(rng, d, dt, escape_radius, region)
    return float(occupation_measure(path, [region]).times[0])


def _values_summary(values, target):
    s = EstimatorSummary.from_values(values, target=target)
    return {"n": s.n, "mean": s.mean, "stderr": s.stderr, "target": target, "z": s.z,
            "rel_err": abs(s.mean - target) / target if target else None}


def occupation(region, trials, seed, dt=1e-4, escape_radius=50.0, workers=None):
    """First and second moments of ``tau(region)`` for paths from the origin."""
    d = region.dim
    summ = run_trials(partial(_occupation_trial, d, dt, escape_radius, region), trials, seed, workers,
                      keep_values=True)
    tau = summ.values
    first = first_moment(region, d)
    second = None
    if isinstance(region, Ball) and not np.any(region.center):
        second = second_moment_ball(region.radius, d)
    return {
        "first": _values_summary(tau, first),
        "second": _values_summary(tau**2, second),
        "failures": summ.failures,
        "bias_bound": escape_bias_bound(region.max_norm(), escape_radius, d) * residual_bound(region, d),
        "values": tau,
    }


def occupation_identity(A: Box, levels, cal_trials, trials, seed, dt=1e-4, escape_radius=50.0,
                        eps_grid=(0.1, 0.25, 0.5)):
    """Per-path relative gap between the hit-based reconstruction and ``tau(A)``.

    Only paths with ``tau(A) > 0`` enter the gaps.
    """
    d = A.dim
    levels = sorted(int(k) for k in levels)
    tables = calibrate_hit_tables(derive_seed(seed, CALIBRATION_TAG), levels, A, cal_trials, d=d, dt=dt,
                                  escape_radius=escape_radius)
    W = {k: green_weights(tables[k], A) for k in levels}
    taus, est = [], {k: [] for k in levels}
    for i in range(trials):
        rng = trial_rng(seed, i)
        path = simulate_focused(rng, d, dt, escape_radius, A)
        tau = float(occupation_measure(path, [A]).times[0])
        if tau <= 0:
            continue
        hits = path_hits(path, levels, A, rng)
        taus.append(tau)
        for k in levels:
            est[k].append(float(W[k][hits[k]].sum()))
    taus = np.array(taus)
    if len(taus) == 0:
        raise RuntimeError("no path entered A")
    est = {k: np.array(v) for k, v in est.items()}
    report = convergence_check(est, taus, eps_grid, relative=True)
    return {
        "levels": levels,
        "paths": trials,
        "paths_in_A": int(len(taus)),
        "median_gap": report.medians.tolist(),
        "median_strictly_decreasing": report.median_decreasing,
        "exceedance": [list(map(float, row)) for row in report.fractions],
        "eps_grid": list(eps_grid),
        "mean_tau": float(taus.mean()),
        "target_mean_tau": first_moment(A, d),
        "mean_estimate": {k: float(v.mean()) for k, v in est.items()},
        "taus": taus,
        "estimates": est,
    }


def boxcount(N_values, paths, seed, d=3, dt=1e-2):
    res = boxcount_scaling([(seed, i) for i in range(paths)], N_values, d=d, dt=dt)
    return {
        "N": res.N_values,
        "mean": res.mean.tolist(),
        "stderr": res.stderr.tolist(),
        "spread": res.spread().tolist(),
        "per_path": res.per_path,
    }


# ---------------------------------------------------------------------------
# trees


def tree_capacity(m, alpha, depth):
    """Capacity of the boundary from the uniform depth-``depth`` cylinder measure."""
    verts = tp.vertices(m, depth)
    nu = DiscreteMeasure(verts, np.full(len(verts), 1.0 / len(verts)))
    h = tree_cell_scale(depth, m, alpha)
    return capacity_of_measure(nu, KernelSpec.tree(alpha), h)


def tree_exact(m, alpha, depth, check="second-moment"):
    spec = tp.TreeSpec(m, alpha, depth)
    spec.require_supercritical()
    nu = tp.TreeMeasure.uniform(m, depth)
    rows = []
    if check == "second-moment":
        ks = [k for k in (1, 2) if k <= depth]
        for k in ks:
            for n in ks:
                lhs = tp.second_moment_exact(spec, nu, k, nu, n)
                rhs = tp.second_moment_kernel(spec, nu, k, nu, n)
                rows.append({"k": k, "n": n, "lhs": lhs, "rhs": rhs, "abs_err": abs(lhs - rhs)})
    elif check == "unbiased":
        for k in range(1, depth + 1):
            lhs = tp.brute_force_expectation(spec, lambda c, k=k: c.conditional_total(nu, k))
            rows.append({"k": k, "lhs": lhs, "rhs": nu.total(), "abs_err": abs(lhs - nu.total())})
    elif check == "cascade-gap":
        for k in range(1, depth + 1):
            lhs = tp.brute_force_expectation(
                spec, lambda c, k=k: (c.cascade_total(nu, k) - c.conditional_total(nu, k)) ** 2)
            rhs = tp.cascade_gap_formula(spec, nu, k)
            rows.append({"k": k, "lhs": lhs, "rhs": rhs, "abs_err": abs(lhs - rhs)})
    elif check == "martingale":
        for k in range(1, depth):
            lhs = tp.brute_force_expectation(spec, lambda c, k=k: c.cascade_total(nu, k + 1))
            rhs = tp.brute_force_expectation(spec, lambda c, k=k: c.cascade_total(nu, k))
            rows.append({"k": k, "lhs": lhs, "rhs": rhs, "abs_err": abs(lhs - rhs)})
    else:
        raise InvalidInput(f"unknown check {check!r}")
    return {"check": check, "rows": rows, "max_abs_err": max(r["abs_err"] for r in rows)}


def _tree_mc_batch(spec, ks, rng, size):
    sample = tp.sample_percolation(rng, spec, size)
    nu = tp.TreeMeasure.uniform(spec.m, spec.max_depth)
    cols = []
    for k in ks:
        mu = tp.cascade_masses(sample, nu, k).sum(axis=1)
        ck = tp.conditional_masses(sample, nu, k).sum(axis=1)
        cols += [(mu - ck) ** 2, ck, mu]
    cols.append(sample.survives().astype(float))
    return np.column_stack(cols)


TREE_BATCH = 10_000


def tree_mc(m, alpha, depth, ks, trials, seed, workers=None):
    """Empirical cascade gaps, conditional-measure means and survival frequency."""
    spec = tp.TreeSpec(m, alpha, depth)
    spec.require_supercritical()
    ks = [int(k) for k in ks]
    if any(k > depth for k in ks):
        raise InvalidInput("every k must be at most the depth")
    vals = run_batches(partial(_tree_mc_batch, spec, ks), trials, seed, TREE_BATCH, workers)
    nu = tp.TreeMeasure.uniform(m, depth)
    rows = []
    for j, k in enumerate(ks):
        gap, ck, mu = vals[:, 3 * j], vals[:, 3 * j + 1], vals[:, 3 * j + 2]
        formula = tp.cascade_gap_formula(spec, nu, k)
        g = _summary(gap, target=formula)
        rows.append({"k": k, "gap_mean": g["mean"], "gap_stderr": g["stderr"], "formula": formula, "z": g["z"],
                     "C_mean": float(ck.mean()), "C_stderr": float(ck.std(ddof=1) / math.sqrt(len(ck))),
                     "mu_mean": float(mu.mean())})
    surv = vals[:, -1]
    return {"rows": rows, "survival": _summary(surv, target=spec.s), "n": len(surv)}


def nonextinction(m, alpha, depth, trials, seed, capacity_depth=8, workers=None):
    spec = tp.TreeSpec(m, alpha, depth)
    spec.require_supercritical()
    vals = run_batches(partial(_tree_mc_batch, spec, []), trials, seed, TREE_BATCH, workers)
    surv = vals[:, -1]
    freq = float(surv.mean())
    se = float(math.sqrt(freq * (1 - freq) / len(surv)))
    cap = tree_capacity(m, alpha, capacity_depth)
    C = cap.value
    lo, hi = C - 3 * se, 2 * C + 3 * se
    return {
        "n": len(surv),
        "freq": freq,
        "stderr": se,
        "capacity": C,
        "capacity_gap": cap.gap,
        "exact_survival": spec.s,
        "lower": lo,
        "upper": hi,
        "within": bool(lo <= freq <= hi),
    }
