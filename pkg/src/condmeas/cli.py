"""Command-line front end: ``condmeas <experiment> [options]``.

Every run writes ``<out-dir>/<name>.csv`` and ``<out-dir>/<name>.json`` and
prints a one-line summary.  Exit codes: 0 success, 2 invalid input, 1 runtime
failure.  ``--config FILE`` reads ``key = value`` lines named like the long
flags; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .errors import DomainError, InvalidInput, ResourceError
from .harness import default_workers
from .potential import (
    DiscreteMeasure,
    KernelSpec,
    auto_cell_scale,
    capacity_of_measure,
    classify_decomposition,
    tree_cell_scale,
)
from .regions import Ball, Box

log = logging.getLogger("condmeas")


def code_version() -> str:
    """Hash of the package sources, stamped into every output."""
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.rglob("*.py")):
        h.update(f.relative_to(Path(__file__).parent).as_posix().encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:12]


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _box(text):
    try:
        return Box.parse(text)
    except InvalidInput as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="condmeas", description="Conditional-measure experiments for Brownian paths and trees.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, trials=None, seed=True):
        p.add_argument("--config", help="key = value file; command-line flags override it")
        p.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
        p.add_argument("--out-dir", default=".", help="directory for the CSV and JSON outputs")
        p.add_argument("--name", help="output file stem (default: the experiment name)")
        p.add_argument("--workers", type=int, default=None, help="worker processes (default $CONDMEAS_WORKERS or 1)")
        if trials is not None:
            p.add_argument("--trials", type=int, default=trials)
        if seed:
            p.add_argument("--seed", type=int, default=0)
        return p

    p = common(sub.add_parser("hit-ball", help="walk-on-spheres hitting frequency of one ball"), 100_000)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--x", type=_floats, default=[2.0, 0.0, 0.0])
    p.add_argument("--r", type=float, default=0.5)
    p.add_argument("--far-radius", type=float, default=1e4)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--dump-trials", action="store_true")

    p = common(sub.add_parser("hit-joint", help="joint-to-product hit ratio of two balls"), 1_000_000)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--x", type=_floats, default=[2.0, 0.0, 0.0])
    p.add_argument("--y", type=_floats, default=[0.0, 2.0, 0.0])
    p.add_argument("--r", type=float, default=0.1)
    p.add_argument("--far-radius", type=float, default=1e4)
    p.add_argument("--eps", type=float, default=1e-4)

    p = common(sub.add_parser("condmeasure", help="mean of C_k(nu)(A) with an independent table"), 10_000)
    p.add_argument("--region", type=_box, default=Box.parse("1:2,0:1,0:1"))
    p.add_argument("--A", type=_box, default=None, help="test box (default: the region)")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--cal-trials", type=int, default=10_000)
    p.add_argument("--atom", type=_floats, default=None, help="use the unit atom at this point instead of Lebesgue")
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--escape-radius", type=float, default=50.0)

    p = common(sub.add_parser("occupation", help="moments of the occupation time of a ball or box"), 10_000)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--radius", type=float, default=1.0, help="ball at the origin (ignored with --box)")
    p.add_argument("--box", type=_box, default=None)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--escape-radius", type=float, default=50.0)
    p.add_argument("--dump-trials", action="store_true")

    p = common(sub.add_parser("occupation-identity", help="hit-based occupation vs tau(A) per path"), 1000)
    p.add_argument("--A", type=_box, default=Box.parse("1:2,1:2,1:2"))
    p.add_argument("--levels", type=_ints, default=[2, 4, 6])
    p.add_argument("--cal-trials", type=int, default=40_000)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--escape-radius", type=float, default=50.0)

    p = common(sub.add_parser("boxcount", help="unit cubes hit by time N, divided by N"))
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--N", type=_floats, default=[100.0, 400.0])
    p.add_argument("--paths", type=int, default=200)
    p.add_argument("--dt", type=float, default=1e-2)

    p = common(sub.add_parser("capacity", help="capacity of a finite point set or tree measure"), seed=False)
    p.add_argument("--input", help="measure CSV (x1..xd,weight or vertex,weight)")
    p.add_argument("--sphere", type=int, default=None, help="use N Fibonacci points on the unit sphere")
    p.add_argument("--kernel", default="riesz:1")
    p.add_argument("--h", default="auto", help="cell scale: a number, 'auto' or 'tree'")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=100_000)

    p = common(sub.add_parser("tree-exact", help="exact identities by enumeration"), seed=False)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--check", choices=["second-moment", "unbiased", "cascade-gap", "martingale"],
                   default="second-moment")

    p = common(sub.add_parser("tree-mc", help="cascade gaps and C_k means by sampling"), 100_000)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--k", type=_ints, default=[1, 2, 3])

    p = common(sub.add_parser("nonextinction", help="survival frequency against capacity bounds"), 100_000)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--depth", type=int, default=10)
    p.add_argument("--capacity-depth", type=int, default=8)

    p = common(sub.add_parser("decompose", help="split a measure into regular and singular parts"), seed=False)
    p.add_argument("--input", required=False)
    p.add_argument("--kernel", default="riesz:1")
    return parser


# ---------------------------------------------------------------------------
# config files


def read_config(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidInput(f"{path}:{n}: expected key = value")
        out[key.strip().lstrip("-")] = value.strip()
    return out


def _flag_table(sub: argparse.ArgumentParser) -> dict:
    table = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                table[opt[2:]] = action
                table[opt[2:].replace("-", "_")] = action
    return table


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        flags = _flag_table(sub)
        cfg = read_config(args.config)
        cfg_argv = []
        for key, value in cfg.items():
            action = flags.get(key)
            if action is None or key in ("config",):
                raise InvalidInput(f"unknown config key {key!r} for {args.command}")
            opt = action.option_strings[-1]
            if action.nargs == 0:
                if value.lower() in ("1", "true", "yes", "on"):
                    cfg_argv.append(opt)
            else:
                cfg_argv += [opt, value]
        # config first, then the original flags so they take precedence
        pos = argv.index(args.command)
        args = parser.parse_args(argv[: pos + 1] + cfg_argv + argv[pos + 1 :])
    if args.workers is None:
        args.workers = default_workers()
    return args


# ---------------------------------------------------------------------------
# outputs


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (Box, Ball)):
        return str(obj)
    return obj


def _params(args) -> dict:
    skip = {"command", "config", "dry_run", "out_dir", "name", "workers", "dump_trials"}
    return {k: _jsonable(v) for k, v in vars(args).items() if k not in skip}


def _write(args, doc: dict, rows: list, header: list):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.name or args.command
    with open(out / f"{stem}.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([_fmt(v) for v in r])
    with open(out / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(doc), fh, indent=2)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _doc(args, result: dict) -> dict:
    doc = {
        "experiment": args.command,
        "params": _params(args),
        "n": result.get("n"),
        "failures": result.get("failures", 0),
        "mean": result.get("mean"),
        "stderr": result.get("stderr"),
        "target": result.get("target"),
        "z": result.get("z"),
        "seed": getattr(args, "seed", None),
        "config": args.config,
        "code_version": code_version(),
    }
    doc.update({k: v for k, v in result.items() if k not in doc and k not in ("values", "taus", "estimates", "per_path")})
    return doc


def _summary_line(doc):
    parts = [doc["experiment"]]
    for key in ("n", "mean", "stderr", "target", "z"):
        v = doc.get(key)
        if v is not None:
            parts.append(f"{key}={v:.6g}" if isinstance(v, float) else f"{key}={v}")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# experiments


def _check_point(x, d, what):
    if len(x) != d:
        raise InvalidInput(f"{what} must have {d} coordinates")


def _positive(**vals):
    for name, v in vals.items():
        if v is None or not v > 0:
            raise InvalidInput(f"--{name.replace('_', '-')} must be positive")


def cmd_hit_ball(args):
    _check_point(args.x, args.d, "--x")
    _positive(r=args.r, trials=args.trials, far_radius=args.far_radius, eps=args.eps)
    if args.dry_run:
        return None
    res = ex.hit_ball(args.x, args.r, args.trials, args.seed, args.far_radius, args.eps, args.workers)
    if args.dump_trials:
        rows = [[i, int(h)] for i, h in enumerate(res["values"])]
        header = ["trial", "hit"]
    else:
        rows = [[res["n"], res["mean"], res["stderr"], res["target"], res["z"]]]
        header = ["n", "mean", "stderr", "target", "z"]
    return res, rows, header


def cmd_hit_joint(args):
    _check_point(args.x, args.d, "--x")
    _check_point(args.y, args.d, "--y")
    _positive(r=args.r, trials=args.trials)
    if args.dry_run:
        return None
    res = ex.hit_joint(args.x, args.y, args.r, args.trials, args.seed, args.far_radius, args.eps, args.workers)
    rows = [[res["n"], res["p_x"], res["p_y"], res["p_xy"], res["mean"], res["stderr"], res["target"]]]
    return res, rows, ["n", "p_x", "p_y", "p_xy", "ratio", "stderr", "target"]


def cmd_condmeasure(args):
    _positive(trials=args.trials, cal_trials=args.cal_trials, dt=args.dt)
    if args.region.min_norm() <= 0:
        raise InvalidInput("--region must avoid the origin")
    if args.cal_trials < 1000:
        raise InvalidInput("--cal-trials must be at least 1000")
    nu = "uniform"
    if args.atom is not None:
        _check_point(args.atom, args.region.dim, "--atom")
        nu = args.atom
    if args.dry_run:
        return None
    res = ex.condmeasure(args.region, args.k, args.trials, args.cal_trials, args.seed, nu=nu, A=args.A,
                         dt=args.dt, escape_radius=args.escape_radius, workers=args.workers)
    rows = [[res["n"], res["mean"], res["stderr"], res["calibration_stderr"], res["target"], res["z"],
             res["z_combined"]]]
    return res, rows, ["n", "mean", "stderr", "calibration_stderr", "target", "z", "z_combined"]


def cmd_occupation(args):
    _positive(trials=args.trials, dt=args.dt, escape_radius=args.escape_radius)
    region = args.box if args.box is not None else Ball(tuple([0.0] * args.d), args.radius)
    if region.dim != args.d:
        raise InvalidInput("--box dimension differs from --d")
    if args.dry_run:
        return None
    res = ex.occupation(region, args.trials, args.seed, args.dt, args.escape_radius, args.workers)
    first, second = res["first"], res["second"]
    out = dict(first)
    out.update({"second_moment": second, "bias_bound": res["bias_bound"], "failures": res["failures"]})
    if args.dump_trials:
        rows = [[i, float(t)] for i, t in enumerate(res["values"])]
        header = ["trial", "tau"]
    else:
        rows = [["first", first["n"], first["mean"], first["stderr"], first["target"]],
                ["second", second["n"], second["mean"], second["stderr"], second["target"]]]
        header = ["moment", "n", "mean", "stderr", "target"]
    return out, rows, header


def cmd_occupation_identity(args):
    _positive(trials=args.trials, cal_trials=args.cal_trials, dt=args.dt)
    if args.A.min_norm() <= 0:
        raise InvalidInput("--A must avoid the origin")
    if len(args.levels) < 2:
        raise InvalidInput("--levels needs at least two levels")
    if args.dry_run:
        return None
    res = ex.occupation_identity(args.A, args.levels, args.cal_trials, args.trials, args.seed, args.dt,
                                 args.escape_radius)
    rows = [[k, med] + list(fr) for k, med, fr in zip(res["levels"], res["median_gap"], res["exceedance"])]
    header = ["level", "median_rel_gap"] + [f"frac_gt_{e}" for e in res["eps_grid"]]
    res = dict(res, n=res["paths_in_A"])
    return res, rows, header


def cmd_boxcount(args):
    _positive(paths=args.paths, dt=args.dt)
    if args.d < 3:
        raise InvalidInput("--d must be at least 3")
    if args.dry_run:
        return None
    res = ex.boxcount(args.N, args.paths, args.seed, args.d, args.dt)
    rows = [[n, m, s, sp] for n, m, s, sp in zip(res["N"], res["mean"], res["stderr"], res["spread"])]
    return dict(res, n=args.paths), rows, ["N", "mean", "stderr", "iqr_over_median"]


def _load_capacity_measure(args):
    if args.sphere:
        from .potential import fibonacci_sphere

        pts = fibonacci_sphere(args.sphere)
        return DiscreteMeasure(pts, np.full(len(pts), 1.0 / len(pts)))
    if not args.input:
        raise InvalidInput("give --input or --sphere")
    return DiscreteMeasure.load_csv(args.input)


def cmd_capacity(args):
    spec = KernelSpec.parse(args.kernel)
    nu = _load_capacity_measure(args)
    if args.h == "auto":
        if nu.is_tree:
            depth = len(nu.points[0])
            m = 1 + max(int(c) for v in nu.points for c in v)
            h = tree_cell_scale(depth, max(m, 2), spec.alpha)
        else:
            h = auto_cell_scale(nu.points)
    elif args.h == "tree":
        if not nu.is_tree:
            raise InvalidInput("--h tree needs a tree measure")
        depth = len(nu.points[0])
        m = 1 + max(int(c) for v in nu.points for c in v)
        h = tree_cell_scale(depth, max(m, 2), spec.alpha)
    else:
        try:
            h = float(args.h)
        except ValueError as exc:
            raise InvalidInput(f"--h must be a number, 'auto' or 'tree', got {args.h!r}") from exc
        _positive(h=h)
    if args.dry_run:
        return None
    res = capacity_of_measure(nu, spec, h, tol=args.tol, max_iter=args.max_iter)
    out = res.to_json()
    out.update({"mean": res.value, "h": h, "n": len(nu)})
    rows = [[i, w] for i, w in enumerate(res.weights)]
    return out, rows, ["atom", "weight"]


def cmd_tree_exact(args):
    if args.dry_run:
        from .treeperc import TreeSpec

        TreeSpec(args.m, args.alpha, args.depth).require_supercritical()
        return None
    res = ex.tree_exact(args.m, args.alpha, args.depth, args.check)
    keys = list(res["rows"][0].keys())
    rows = [[r[k] for k in keys] for r in res["rows"]]
    out = dict(res, mean=res["max_abs_err"], n=len(rows))
    return out, rows, keys


def cmd_tree_mc(args):
    _positive(trials=args.trials)
    if args.dry_run:
        return None
    res = ex.tree_mc(args.m, args.alpha, args.depth, args.k, args.trials, args.seed, args.workers)
    keys = list(res["rows"][0].keys())
    rows = [[r[k] for k in keys] for r in res["rows"]]
    surv = res["survival"]
    out = dict(res, mean=surv["mean"], stderr=surv["stderr"], target=surv["target"], z=surv["z"])
    return out, rows, keys


def cmd_nonextinction(args):
    _positive(trials=args.trials)
    if args.dry_run:
        return None
    res = ex.nonextinction(args.m, args.alpha, args.depth, args.trials, args.seed, args.capacity_depth, args.workers)
    rows = [[res["n"], res["freq"], res["stderr"], res["capacity"], res["lower"], res["upper"], res["within"]]]
    out = dict(res, mean=res["freq"], target=res["exact_survival"])
    return out, rows, ["n", "freq", "stderr", "capacity", "lower", "upper", "within"]


def cmd_decompose(args):
    if not args.input:
        raise InvalidInput("--input is required")
    spec = KernelSpec.parse(args.kernel)
    nu = DiscreteMeasure.load_csv(args.input)
    if args.dry_run:
        return None
    reg, sing = classify_decomposition(nu, spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = args.name or args.command
    reg.save_csv(out_dir / f"{stem}_regular.csv")
    sing.save_csv(out_dir / f"{stem}_singular.csv")
    res = {"n": len(nu), "regular_mass": reg.total_mass, "singular_mass": sing.total_mass,
           "mean": reg.total_mass, "target": nu.total_mass}
    rows = [["regular", len(reg), reg.total_mass], ["singular", len(sing), sing.total_mass]]
    return res, rows, ["part", "atoms", "mass"]


COMMANDS = {
    "hit-ball": cmd_hit_ball,
    "hit-joint": cmd_hit_joint,
    "condmeasure": cmd_condmeasure,
    "occupation": cmd_occupation,
    "occupation-identity": cmd_occupation_identity,
    "boxcount": cmd_boxcount,
    "capacity": cmd_capacity,
    "tree-exact": cmd_tree_exact,
    "tree-mc": cmd_tree_mc,
    "nonextinction": cmd_nonextinction,
    "decompose": cmd_decompose,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        if args.workers < 1:
            raise InvalidInput("--workers must be at least 1")
        result = COMMANDS[args.command](args)
        if result is None:
            print(json.dumps({"experiment": args.command, "plan": _params(args), "workers": args.workers,
                              "code_version": code_version()}, indent=2))
            return 0
        res, rows, header = result
        doc = _doc(args, res)
        _write(args, doc, rows, header)
        print(_summary_line(doc))
        return 0
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    except (InvalidInput, DomainError) as exc:
        print(f"condmeas: invalid input: {exc}", file=sys.stderr)
        return 2
    except (ResourceError, RuntimeError, OSError) as exc:
        print(f"condmeas: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
