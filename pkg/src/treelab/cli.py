"""Command line front end: configuration, orchestration and serialization.

One experiment per invocation.  Every run writes a delimited table (CSV,
comma separator, `.` decimal, LF endings, mandatory header) plus a JSON
summary carrying the effective configuration, its hash, the generator
identity and any verdicts; with `--format json` the rows go into the JSON
artifact directly.  Outputs are deterministic for a fixed (command, options,
seed, code version) regardless of `--threads`, so published tables can be
reproduced byte for byte.  A JSON config file may supply any long option
(dashes as underscores); explicit command line flags win.

Exit codes: 0 success (verdicts live in the rows, not the exit code),
2 invalid configuration, 3 capacity/convergence/precision failures,
130 interrupted (partial rows are still flushed, flagged partial=true).
"""

import argparse
import dataclasses
import hashlib
import io
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import exact_oracle as oracle
from . import ising_engine as ising
from . import percolation_engine as perc
from . import walk_engine as walk
from .errors import (ConfigError, ConstraintViolation, GeometryError,
                     InsufficientPrecision, ResourceError)
from .ising_engine import IsingParams
from .product_graph import BallSpec, build_product_ball, dump_graph
from .rng import GENERATOR_ID
from .tree_geometry import TreeSpec

_HASH_EXCLUDED = {"config", "out", "format", "threads", "inputs", "outdir"}


# ----------------------------------------------------------------------
# Option parsing and merging
# ----------------------------------------------------------------------

def _int_list(value):
    """'3,3' or a JSON list from a config file -> tuple of ints."""
    if isinstance(value, (list, tuple)):
        value = ",".join(str(v) for v in value)
    try:
        return tuple(int(part) for part in str(value).split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {value!r}")


def _float_list(value):
    if isinstance(value, (list, tuple)):
        value = ",".join(str(v) for v in value)
    try:
        return tuple(float(part) for part in str(value).split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {value!r}")


def _radii_ladder(value):
    """Ladder of radii tuples, rungs separated by '/': e.g. 4,4/8,8."""
    if isinstance(value, (list, tuple)):
        return tuple(_int_list(rung) for rung in value)
    return tuple(_int_list(part) for part in str(value).split("/"))


def _common_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default option values")
    common.add_argument("--trees", help="factor degrees, e.g. 3,3")
    common.add_argument("--radii", help="ball radius per factor, e.g. 8,8")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads (default 1)")
    common.add_argument("--out", help="output file; stdout when omitted")
    common.add_argument("--format", choices=["csv", "json"],
                        help="delimited table or JSON rows (default csv)")
    common.add_argument("--max-vertices", type=int, dest="max_vertices",
                        help="refuse balls larger than this (default 4e6)")
    return common


def build_parser():
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="treelab",
        description="Percolation, Ising and random-walk experiments on "
                    "products of regular trees.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    q = sub.add_parser("constants", parents=[common],
                       help="explicit bound constants for a degree sequence")
    q.add_argument("--phat", type=float,
                   help="critical estimate for the uniqueness gap row")

    q = sub.add_parser("oracle", parents=[common],
                       help="run the estimator-vs-oracle self-test battery")
    q.add_argument("--suite", choices=["tiny"], help="battery name")
    q.add_argument("--replicas", type=int, help="Monte Carlo budget per check")

    pp = sub.add_parser("perc", help="bond percolation estimators")
    psub = pp.add_subparsers(dest="sub", required=True)
    q = psub.add_parser("tau", parents=[common],
                        help="two-point connection probabilities")
    q.add_argument("--p", type=float)
    q.add_argument("--n", type=int, help="max total distance (default 4)")
    q.add_argument("--replicas", type=int)
    for name in ("chi", "tilted"):
        q = psub.add_parser(name, parents=[common],
                            help="(tilted) cluster-size susceptibility")
        q.add_argument("--p", type=float)
        q.add_argument("--replicas", type=int, help="adaptive sample cap")
        q.add_argument("--target-rel", type=float, dest="target_rel",
                       help="relative stderr target (default 0.02)")
        if name == "tilted":
            q.add_argument("--lambda", type=float, dest="lam",
                           help="modular tilt exponent (default 0.5)")
    q = psub.add_parser("triangle", parents=[common],
                        help="open triangle diagram at the origin")
    q.add_argument("--p", type=float)
    q.add_argument("--replicas", type=int)
    q = psub.add_parser("pc", parents=[common],
                        help="critical point by boundary-reach flatness")
    q.add_argument("--bracket", help="p bracket lo,hi (default 0.2,0.6)")
    q.add_argument("--ladder", type=str,
                   help="radius ladder, rungs '/'-separated, e.g. 4,4/8,8")
    q.add_argument("--replicas", type=int)
    q.add_argument("--tol", type=float, help="bracket width target")
    q = psub.add_parser("check-bound", parents=[common],
                        help="tau at p-hat against the product decay bound")
    q.add_argument("--p", type=float, help="critical estimate p-hat")
    q.add_argument("--n", type=int, help="max total distance (default 4)")
    q.add_argument("--replicas", type=int)
    q.add_argument("--margin", type=int, help="boundary margin (default 2)")
    q = psub.add_parser("supermult", parents=[common],
                        help="two-point supermultiplicativity at a split point")
    q.add_argument("--p", type=float)
    q.add_argument("--n-vec", dest="n_vec", help="direction vector, e.g. 1,1")
    q.add_argument("--r", type=int, help="first leg multiplier (default 2)")
    q.add_argument("--l", type=int, help="second leg multiplier (default 1)")
    q.add_argument("--replicas", type=int)
    q = psub.add_parser("open-cond", parents=[common],
                        help="finite-volume tilted susceptibility growth bound")
    q.add_argument("--p", type=float)
    q.add_argument("--eps", type=float, help="probability increment")
    q.add_argument("--lambda", type=float, dest="lam")
    q.add_argument("--replicas", type=int, help="adaptive sample cap")

    ip = sub.add_parser("ising", help="ferromagnetic Ising estimators")
    isub = ip.add_subparsers(dest="sub", required=True)

    def ising_chain_flags(q):
        q.add_argument("--sweeps", type=int)
        q.add_argument("--burn-in", type=int, dest="burn_in")
        q.add_argument("--thinning", type=int)
        q.add_argument("--chains", type=int)

    q = isub.add_parser("twopoint", parents=[common],
                        help="spin-spin correlations at h = 0")
    q.add_argument("--beta", type=float)
    q.add_argument("--n", type=int, help="max total distance (default 4)")
    ising_chain_flags(q)
    q = isub.add_parser("bubble", parents=[common],
                        help="sum of squared correlations at the origin")
    q.add_argument("--beta", type=float)
    ising_chain_flags(q)
    q = isub.add_parser("mag", parents=[common],
                        help="origin magnetization at h > 0")
    q.add_argument("--beta", type=float)
    q.add_argument("--h", type=float)
    ising_chain_flags(q)
    q = isub.add_parser("betac", parents=[common],
                        help="critical temperature by FK reach flatness")
    q.add_argument("--bracket", help="beta bracket lo,hi (default 0.2,0.7)")
    q.add_argument("--ladder", type=str,
                   help="radius ladder, rungs '/'-separated")
    q.add_argument("--tol", type=float)
    ising_chain_flags(q)
    q = isub.add_parser("exponents", parents=[common],
                        help="log-log slope of chi vs distance to criticality, "
                             "or magnetization vs field")
    q.add_argument("--mode", choices=["chi", "mag"])
    q.add_argument("--betac", type=float, help="critical estimate (chi mode)")
    q.add_argument("--beta", help="beta grid (chi) or single beta (mag)")
    q.add_argument("--h", help="field grid for mag mode, e.g. 0.05,0.1,0.2")
    ising_chain_flags(q)

    wp = sub.add_parser("walk", help="random walk spectral and entropy bounds")
    wsub = wp.add_subparsers(dest="sub", required=True)

    def walk_kernel_flags(q):
        q.add_argument("--alpha", type=float, help="laziness (default 0)")
        q.add_argument("--weights", help="factor weights, e.g. 0.3,0.7")

    q = wsub.add_parser("dist", parents=[common],
                        help="exact n-step law summary")
    q.add_argument("--n", type=int)
    walk_kernel_flags(q)
    q = wsub.add_parser("rho", parents=[common],
                        help="spectral radius root sequences")
    q.add_argument("--n", type=int, help="max step count (default 24)")
    walk_kernel_flags(q)
    q = wsub.add_parser("entropy", parents=[common],
                        help="exact walk entropy sequence")
    q.add_argument("--n", type=int, help="max step count (default 16)")
    walk_kernel_flags(q)
    q = wsub.add_parser("schramm", parents=[common],
                        help="annealed endpoint connection vs spectral targets")
    q.add_argument("--p", type=float)
    q.add_argument("--n", type=int, help="walk length")
    q.add_argument("--m", type=int, help="reference step count (default 40)")
    q.add_argument("--replicas", type=int)
    walk_kernel_flags(q)
    q = wsub.add_parser("schramm-quenched", parents=[common],
                        help="mean log connection rate vs entropy reference")
    q.add_argument("--p", type=float)
    q.add_argument("--n", type=int, help="walk length")
    q.add_argument("--m", type=int, help="reference step count (default 40)")
    q.add_argument("--replicas", type=int, help="number of walk endpoints")
    q.add_argument("--tau-replicas", type=int, dest="tau_replicas",
                   help="initial per-endpoint tau budget (default 2000)")
    q.add_argument("--bias-tol", type=float, dest="bias_tol",
                   help="per-endpoint log bias budget (default 0.005)")
    walk_kernel_flags(q)

    gp = sub.add_parser("graph", help="geometry inspection")
    gsub = gp.add_subparsers(dest="sub", required=True)
    gsub.add_parser("dump", parents=[common],
                    help="edge list with a JSON header line")

    q = sub.add_parser("report", parents=[common],
                       help="render figures from result tables")
    q.add_argument("--inputs", nargs="+", action="append",
                   help="result CSV files (repeatable)")
    q.add_argument("--outdir", help="figure directory (default: beside input)")

    return parser


def _merge_config(args):
    """Effective options: config file values fill flags left at None."""
    cfg = dict(vars(args))
    path = cfg.pop("config", None)
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in loaded.items():
            name = key.replace("-", "_")
            if name in ("cmd", "sub", "config"):
                raise ConfigError(f"config key {key!r} cannot override the command")
            if name not in cfg:
                raise ConfigError(f"config key {key!r} unknown for this command")
            if cfg[name] is None:
                cfg[name] = value
    return cfg


def _get(cfg, key, default=None):
    value = cfg.get(key)
    return default if value is None else value


def _require(cfg, key, flag):
    value = cfg.get(key)
    if value is None:
        raise ConfigError(f"{flag} is required for this command")
    return value


def _trees(cfg):
    degrees = _int_list(_get(cfg, "trees", "3,3"))
    return tuple(TreeSpec(k) for k in degrees)


def _radii(cfg, trees):
    raw = cfg.get("radii")
    if raw is None:
        return (6,) * len(trees)
    radii = _int_list(raw)
    if len(radii) != len(trees):
        raise ConfigError(f"--radii needs one entry per factor, got {radii}")
    return radii


def _ball(cfg, trees=None, radii=None):
    trees = _trees(cfg) if trees is None else trees
    radii = _radii(cfg, trees) if radii is None else radii
    spec = BallSpec(trees=trees, radii=radii,
                    max_vertices=_get(cfg, "max_vertices", 4_000_000))
    return build_product_ball(spec)


def _kernel(cfg, trees):
    weights = cfg.get("weights")
    return walk.KernelSpec(trees=trees,
                           weights=None if weights is None else _float_list(weights),
                           alpha=float(_get(cfg, "alpha", 0.0)))


def _kernel_label(kernel):
    label = kernel.kind
    if kernel.alpha > 0.0:
        label += f"[a={kernel.alpha:g}]"
    if kernel.kind == "weighted-product":
        label += "[w=" + "|".join(f"{w:g}" for w in kernel.weights) + "]"
    return label


def _distance_pairs(ball, dmax, margin=2):
    """Distance vectors with 1 <= |d|_1 <= dmax and a straddled pair each.

    Vectors whose pair cannot keep the boundary margin are skipped, so every
    emitted estimate stays a valid lower bound of the infinite-volume value.
    """
    ranges = [range(min(dmax, r) + 1) for r in ball.spec.radii]
    kept, pairs = [], []
    for vec in itertools.product(*ranges):
        if not 1 <= sum(vec) <= dmax:
            continue
        try:
            x, _, z = perc.split_geodesic_triple(ball, vec, 1, 0, margin)
        except GeometryError:
            continue
        kept.append(vec)
        pairs.append((x, z))
    if not kept:
        raise GeometryError(
            f"no distance vector with total <= {dmax} fits radii "
            f"{ball.spec.radii} at margin {margin}")
    return kept, pairs


def _dlabel(name, vec):
    return f"{name}({'|'.join(str(d) for d in vec)})"


# ----------------------------------------------------------------------
# Run context and serialization
# ----------------------------------------------------------------------

class RunContext:
    """Accumulates rows so an interrupt can still flush a partial table."""

    def __init__(self, command, cfg):
        self.command = command
        self.experiment = {k: v for k, v in sorted(cfg.items())
                           if k not in _HASH_EXCLUDED and k not in ("cmd", "sub")
                           and v is not None}
        payload = json.dumps({"command": command, **self.experiment},
                             sort_keys=True, separators=(",", ":"), default=str)
        self.spec_hash = hashlib.sha256(payload.encode()).hexdigest()[:12]
        self.seed = _get(cfg, "seed", 0)
        self.header = None
        self.rows = []
        self.meta = {}
        self.partial = False

    def add(self, **row):
        self.rows.append(row)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v)
                for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _emit(ctx, cfg):
    """Write the table and its JSON summary; stdout when --out is absent."""
    fmt = _get(cfg, "format", "csv")
    header = ctx.header or ["quantity", "value"]
    filled = []
    for row in ctx.rows:
        row = dict(row)
        row.setdefault("spec_hash", ctx.spec_hash)
        row.setdefault("version", __version__)
        filled.append({col: row.get(col) for col in header})

    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in filled:
        buf.write(",".join(_cell(row[col]) for col in header) + "\n")
    csv_text = buf.getvalue()

    summary = {
        "command": ctx.command,
        "version": __version__,
        "generator": GENERATOR_ID,
        "spec_hash": ctx.spec_hash,
        "master_seed": ctx.seed,
        "partial": ctx.partial,
        "spec": _jsonable(ctx.experiment),
        "columns": header,
        "rows": [_jsonable(row) for row in filled],
        "meta": _jsonable(ctx.meta),
    }
    json_text = json.dumps(summary, indent=2, sort_keys=True) + "\n"

    out = cfg.get("out")
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            path.write_text(csv_text, newline="")
            sidecar = path.with_suffix(".json")
            sidecar.write_text(json_text, newline="")
            print(f"wrote {path} and {sidecar}")
        else:
            path.write_text(json_text, newline="")
            print(f"wrote {path}")
    else:
        sys.stdout.write(csv_text if fmt == "csv" else json_text)


def _perc_header(n_factors):
    return (["quantity", "p", "lambda"]
            + [f"R{i + 1}" for i in range(n_factors)]
            + ["mean", "stderr", "n", "seed", "spec_hash", "version"])


def _ising_header(n_factors):
    return (["quantity", "beta", "h"]
            + [f"R{i + 1}" for i in range(n_factors)]
            + ["mean", "stderr", "n_sweeps", "seed", "spec_hash", "version"])


_WALK_HEADER = ["quantity", "kernel", "n", "p", "value", "stderr", "reference",
                "verdict", "replicas", "seed", "spec_hash", "version"]


def _radii_cells(radii):
    return {f"R{i + 1}": r for i, r in enumerate(radii)}


# ----------------------------------------------------------------------
# constants / oracle / graph
# ----------------------------------------------------------------------

def _cmd_constants(cfg, ctx):
    trees = _trees(cfg)
    consts = perc.compute_bound_constants(trees, cfg.get("phat"))
    ctx.header = ["quantity", "value", "replicas", "seed", "spec_hash", "version"]
    base = {"replicas": 0, "seed": ctx.seed}
    ctx.add(quantity="chi_bound", value=consts.chi_bound, **base)
    ctx.add(quantity="triangle_bound", value=consts.triangle_bound, **base)
    ctx.add(quantity="bubble_bound", value=consts.bubble_bound, **base)
    if consts.uniqueness_gap is not None:
        ctx.add(quantity=f"uniqueness_gap(p={consts.p_hat:g})",
                value=consts.uniqueness_gap, **base)
    ctx.meta["degrees"] = [t.degree for t in trees]


def _cmd_oracle(cfg, ctx):
    """Monte Carlo estimators against the brute-force oracles, three sigma."""
    _get(cfg, "suite", "tiny")
    seed = ctx.seed
    threads = _get(cfg, "threads", 1)
    reps = _get(cfg, "replicas", 20_000)
    fast = IsingParams(sweeps=4000, burn_in=200, thinning=1)
    tree_ball = _ball(cfg, trees=(TreeSpec(3),), radii=(2,))

    checks = []

    def add(name, est, truth):
        checks.append((name, est, float(truth)))

    g = oracle.cycle_graph(4)
    add("perc_tau_cycle4",
        perc.estimate_tau(g, 0.45, 0, 2, reps, seed, threads),
        oracle.brute_tau(g, 0.45, 0, 2))
    g = oracle.path_graph(3)
    add("perc_chi_path3",
        perc.estimate_chi(g, 0.3, seed + 1, n_max=reps, threads=threads),
        oracle.brute_chi(g, 0.3, g.origin))
    logw = tree_ball.log_modular_from_origin(1.0)
    add("perc_tilted_chi_tree",
        perc.estimate_tilted_chi(tree_ball, 0.3, 0.5, seed + 2, n_max=reps,
                                 threads=threads),
        oracle.brute_tilted_chi(tree_ball, 0.3, tree_ball.origin, logw, 0.5))
    g = oracle.complete_graph(4)
    add("perc_triangle_complete4",
        perc.estimate_triangle(g, 0.3, reps, seed + 3, threads),
        oracle.brute_triangle(g, 0.3, g.origin))
    g = oracle.path_graph(3)
    add("ising_twopoint_path3",
        ising.estimate_two_point(g, 0.4, 0, 2, fast, seed + 4, threads=threads),
        oracle.brute_ising_two_point(g, 0.4, 0, 2))
    g = oracle.single_edge()
    add("ising_mag_edge",
        ising.estimate_magnetization(g, 0.3, 0.2, fast, seed + 5,
                                     threads=threads),
        oracle.brute_magnetization(g, 0.3, 0.2, 0))
    g = oracle.star_graph(3)
    add("ising_bubble_star3",
        ising.estimate_bubble(g, 0.35, fast, seed + 6, threads=threads),
        oracle.brute_bubble(g, 0.35, g.origin))

    ctx.header = ["quantity", "estimate", "truth", "stderr", "n", "seed",
                  "verdict", "spec_hash", "version"]
    failures = []
    for name, est, truth in checks:
        ok = abs(est.mean - truth) <= 3.0 * est.stderr
        ctx.add(quantity=name, estimate=est.mean, truth=truth,
                stderr=est.stderr, n=est.n_replicas, seed=seed,
                verdict="ok" if ok else "FAIL")
        if not ok:
            failures.append(name)

    law = walk.distance_laws(walk.KernelSpec((TreeSpec(3),)), 4)[4]
    ops_ball = _ball(cfg, trees=(TreeSpec(3),), radii=(4,))
    dist = walk.exact_distribution(ops_ball, walk.KernelSpec((TreeSpec(3),)), 4)
    by_d = {}
    for vid, prob in zip(dist.ids, dist.probs):
        d = sum(ops_ball.depth_vector(int(vid)))
        by_d[d] = by_d.get(d, 0.0) + float(prob)
    delta = max(abs(by_d.get(d, 0.0) - float(law[d])) for d in range(5))
    ok = delta <= 1e-12
    ctx.add(quantity="walk_law_vs_ball", estimate=delta, truth=0.0,
            stderr=0.0, n=0, seed=seed, verdict="ok" if ok else "FAIL")
    if not ok:
        failures.append("walk_law_vs_ball")

    ctx.meta["failures"] = failures
    if failures:
        raise InsufficientPrecision(
            f"oracle battery failed: {', '.join(failures)}")


def _cmd_graph_dump(cfg, ctx):
    ball = _ball(cfg)
    out = cfg.get("out")
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            dump_graph(ball, fh)
        print(f"wrote {path}")
    else:
        dump_graph(ball, sys.stdout)
    ctx.header = None  # the dump is the artifact; no table to emit
    ctx.rows = []


# ----------------------------------------------------------------------
# perc subcommands
# ----------------------------------------------------------------------

def _cmd_perc_tau(cfg, ctx):
    ball = _ball(cfg)
    p = _require(cfg, "p", "--p")
    dmax = _get(cfg, "n", 4)
    reps = _get(cfg, "replicas", 20_000)
    dvecs, pairs = _distance_pairs(ball, dmax)
    ests = perc.estimate_tau_many(ball, p, pairs, reps, ctx.seed,
                                  _get(cfg, "threads", 1))
    ctx.header = _perc_header(len(ball.spec.trees))
    cells = _radii_cells(ball.spec.radii)
    for vec, est in zip(dvecs, ests):
        ctx.add(quantity=_dlabel("tau", vec), p=p, **cells,
                mean=est.mean, stderr=est.stderr, n=est.n_replicas,
                seed=ctx.seed)


def _cmd_perc_chi(cfg, ctx, lam=None):
    ball = _ball(cfg)
    p = _require(cfg, "p", "--p")
    kwargs = dict(target_rel=_get(cfg, "target_rel", 0.02),
                  n_max=_get(cfg, "replicas", 200_000),
                  threads=_get(cfg, "threads", 1))
    ctx.header = _perc_header(len(ball.spec.trees))
    cells = _radii_cells(ball.spec.radii)
    if lam is None:
        est = perc.estimate_chi(ball, p, ctx.seed, **kwargs)
        ctx.add(quantity="chi", p=p, **{"lambda": 0.0}, **cells,
                mean=est.mean, stderr=est.stderr, n=est.n_replicas,
                seed=ctx.seed)
    else:
        est = perc.estimate_tilted_chi(ball, p, lam, ctx.seed, **kwargs)
        ctx.add(quantity="chi_tilted", p=p, **{"lambda": lam}, **cells,
                mean=est.mean, stderr=est.stderr, n=est.n_replicas,
                seed=ctx.seed)


def _cmd_perc_tilted(cfg, ctx):
    _cmd_perc_chi(cfg, ctx, lam=_get(cfg, "lam", 0.5))


def _cmd_perc_triangle(cfg, ctx):
    ball = _ball(cfg)
    p = _require(cfg, "p", "--p")
    est = perc.estimate_triangle(ball, p, _get(cfg, "replicas", 20_000),
                                 ctx.seed, _get(cfg, "threads", 1))
    ctx.header = _perc_header(len(ball.spec.trees))
    ctx.add(quantity="triangle", p=p, **_radii_cells(ball.spec.radii),
            mean=est.mean, stderr=est.stderr, n=est.n_replicas, seed=ctx.seed)


def _ladder_balls(cfg, trees):
    raw = cfg.get("ladder")
    if raw is None:
        top = _radii(cfg, trees)
        low = tuple(max(2, r // 2) for r in top)
        ladder = (low, top)
    else:
        ladder = _radii_ladder(raw)
    for rung in ladder:
        if len(rung) != len(trees):
            raise ConfigError(f"ladder rung {rung} needs one radius per factor")
    return [_ball(cfg, trees=trees, radii=rung) for rung in ladder], ladder


def _cmd_perc_pc(cfg, ctx):
    trees = _trees(cfg)
    balls, ladder = _ladder_balls(cfg, trees)
    bracket = tuple(_float_list(_get(cfg, "bracket", "0.2,0.6")))
    est = perc.estimate_pc(balls, ctx.seed, bracket,
                           n_replicas=_get(cfg, "replicas", 4000),
                           tol=_get(cfg, "tol", 0.005),
                           threads=_get(cfg, "threads", 1))
    ctx.header = _perc_header(len(trees))
    ctx.add(quantity="pc_hat", p=est.p_hat, **_radii_cells(ladder[-1]),
            mean=est.p_hat, stderr=0.5 * (est.bracket[1] - est.bracket[0]),
            n=est.n_used, seed=ctx.seed)
    ctx.meta.update(bracket=est.bracket, radii_ladder=est.radii_ladder,
                    history=est.history)


def _cmd_perc_check_bound(cfg, ctx):
    ball = _ball(cfg)
    p_hat = _require(cfg, "p", "--p")
    dmax = _get(cfg, "n", 4)
    margin = _get(cfg, "margin", 2)
    dvecs, pairs = _distance_pairs(ball, dmax, margin)
    rows = perc.check_pc_estimate(ball, p_hat, pairs,
                                  _get(cfg, "replicas", 20_000), ctx.seed,
                                  _get(cfg, "threads", 1), margin)
    ctx.header = _perc_header(len(ball.spec.trees))
    cells = _radii_cells(ball.spec.radii)
    verdicts = []
    for vec, row in zip(dvecs, rows):
        ctx.add(quantity=_dlabel("tau", vec), p=p_hat, **cells,
                mean=row.tau.mean, stderr=row.tau.stderr,
                n=row.tau.n_replicas, seed=ctx.seed)
        ctx.add(quantity=_dlabel("bound", vec), p=p_hat, **cells,
                mean=row.bound, stderr=0.0, n=0, seed=ctx.seed)
        verdicts.append({"distance": list(vec), "passed": row.passed})
    ctx.meta["checks"] = verdicts
    ctx.meta["all_passed"] = all(v["passed"] for v in verdicts)


def _cmd_perc_supermult(cfg, ctx):
    ball = _ball(cfg)
    p = _require(cfg, "p", "--p")
    n_vec = _int_list(_get(cfg, "n_vec", "1," * (len(ball.spec.trees) - 1) + "1"))
    report = perc.check_supermultiplicativity(
        ball, p, n_vec, _get(cfg, "r", 2), _get(cfg, "l", 1),
        _get(cfg, "replicas", 20_000), ctx.seed, _get(cfg, "threads", 1))
    ctx.header = _perc_header(len(ball.spec.trees))
    cells = _radii_cells(ball.spec.radii)
    for name, est in (("tau_xz", report.tau_xz), ("tau_xy", report.tau_xy),
                      ("tau_yz", report.tau_yz)):
        ctx.add(quantity=_dlabel(name, n_vec), p=p, **cells, mean=est.mean,
                stderr=est.stderr, n=est.n_replicas, seed=ctx.seed)
    ctx.add(quantity=_dlabel("deficit", n_vec), p=p, **cells,
            mean=report.deficit, stderr=report.deficit_stderr, n=0,
            seed=ctx.seed)
    ctx.meta.update(r=report.r, l=report.l, passed=report.passed)


def _cmd_perc_open_cond(cfg, ctx):
    ball = _ball(cfg)
    p = _require(cfg, "p", "--p")
    lam = _get(cfg, "lam", 0.5)
    eps = cfg.get("eps")
    if eps is None:
        consts = perc.compute_bound_constants(ball.spec.trees, p)
        eps = 0.5 * consts.uniqueness_gap
    report = perc.check_open_condition_bound(
        ball, p, eps, ctx.seed, lam,
        n_max=_get(cfg, "replicas", 200_000), threads=_get(cfg, "threads", 1))
    ctx.header = _perc_header(len(ball.spec.trees))
    cells = _radii_cells(ball.spec.radii)
    lamcell = {"lambda": lam}
    ctx.add(quantity="chi_tilted", p=p, **lamcell, **cells,
            mean=report.chi_p.mean, stderr=report.chi_p.stderr,
            n=report.chi_p.n_replicas, seed=ctx.seed)
    ctx.add(quantity="chi_tilted", p=p + eps, **lamcell, **cells,
            mean=report.chi_p_eps.mean, stderr=report.chi_p_eps.stderr,
            n=report.chi_p_eps.n_replicas, seed=ctx.seed)
    ctx.add(quantity="growth_bound", p=p + eps, **lamcell, **cells,
            mean=report.bound, stderr=report.bound_stderr, n=0, seed=ctx.seed)
    ctx.meta.update(eps=eps, neighbor_sum=report.neighbor_sum,
                    passed=report.passed)


# ----------------------------------------------------------------------
# ising subcommands
# ----------------------------------------------------------------------

def _ising_params(cfg, default=None):
    default = default or IsingParams()
    return IsingParams(sweeps=_get(cfg, "sweeps", default.sweeps),
                       burn_in=_get(cfg, "burn_in", default.burn_in),
                       thinning=_get(cfg, "thinning", default.thinning))


def _cmd_ising_twopoint(cfg, ctx):
    ball = _ball(cfg)
    beta = _require(cfg, "beta", "--beta")
    params = _ising_params(cfg)
    chains = _get(cfg, "chains", 2)
    threads = _get(cfg, "threads", 1)
    dvecs, pairs = _distance_pairs(ball, _get(cfg, "n", 4))
    ctx.header = _ising_header(len(ball.spec.trees))
    cells = _radii_cells(ball.spec.radii)
    for idx, (vec, (x, y)) in enumerate(zip(dvecs, pairs)):
        est = ising.estimate_two_point(ball, beta, x, y, params,
                                       ctx.seed + idx, chains, threads)
        ctx.add(quantity=_dlabel("twopoint", vec), beta=beta, h=0.0, **cells,
                mean=est.mean, stderr=est.stderr, n_sweeps=est.n_replicas,
                seed=ctx.seed + idx)


def _cmd_ising_bubble(cfg, ctx):
    ball = _ball(cfg)
    beta = _require(cfg, "beta", "--beta")
    est = ising.estimate_bubble(ball, beta, _ising_params(cfg), ctx.seed,
                                n_pairs=_get(cfg, "chains", 2),
                                threads=_get(cfg, "threads", 1))
    ctx.header = _ising_header(len(ball.spec.trees))
    ctx.add(quantity="bubble", beta=beta, h=0.0,
            **_radii_cells(ball.spec.radii), mean=est.mean, stderr=est.stderr,
            n_sweeps=est.n_replicas, seed=ctx.seed)


def _cmd_ising_mag(cfg, ctx):
    ball = _ball(cfg)
    beta = _require(cfg, "beta", "--beta")
    h = _require(cfg, "h", "--h")
    est = ising.estimate_magnetization(ball, beta, h, _ising_params(cfg),
                                       ctx.seed,
                                       n_chains=_get(cfg, "chains", 2),
                                       threads=_get(cfg, "threads", 1))
    ctx.header = _ising_header(len(ball.spec.trees))
    ctx.add(quantity="magnetization", beta=beta, h=h,
            **_radii_cells(ball.spec.radii), mean=est.mean, stderr=est.stderr,
            n_sweeps=est.n_replicas, seed=ctx.seed)


def _cmd_ising_betac(cfg, ctx):
    trees = _trees(cfg)
    balls, ladder = _ladder_balls(cfg, trees)
    bracket = tuple(_float_list(_get(cfg, "bracket", "0.2,0.7")))
    params = None
    if any(cfg.get(k) is not None for k in ("sweeps", "burn_in", "thinning")):
        params = _ising_params(cfg, IsingParams(sweeps=2000, burn_in=200,
                                                thinning=1))
    est = ising.estimate_betac(balls, ctx.seed, bracket, params=params,
                               tol=_get(cfg, "tol", 0.005),
                               threads=_get(cfg, "threads", 1))
    ctx.header = _ising_header(len(trees))
    ctx.add(quantity="betac_hat", beta=est.beta_hat, h=0.0,
            **_radii_cells(ladder[-1]), mean=est.beta_hat, stderr=est.stderr,
            n_sweeps=est.n_used, seed=ctx.seed)
    ctx.meta.update(bracket=est.bracket, radii_ladder=est.radii_ladder,
                    history=est.history)


def _cmd_ising_exponents(cfg, ctx):
    ball = _ball(cfg)
    mode = _get(cfg, "mode", "chi")
    params = _ising_params(cfg)
    chains = _get(cfg, "chains", 2)
    threads = _get(cfg, "threads", 1)
    ctx.header = _ising_header(len(ball.spec.trees))
    cells = _radii_cells(ball.spec.radii)

    if mode == "chi":
        betac = _require(cfg, "betac", "--betac")
        raw = cfg.get("beta")
        betas = (_float_list(raw) if raw is not None
                 else tuple(betac - gap for gap in (0.25, 0.2, 0.15, 0.1)))
        if any(b <= 0.0 or b >= betac for b in betas):
            raise ConfigError(f"beta grid {betas} must sit in (0, betac)")
        distances, values = [], []
        for idx, beta in enumerate(betas):
            est = ising.estimate_susceptibility(ball, beta, params,
                                                ctx.seed + idx, n_chains=chains,
                                                threads=threads)
            ctx.add(quantity="chi", beta=beta, h=0.0, **cells, mean=est.mean,
                    stderr=est.stderr, n_sweeps=est.n_replicas,
                    seed=ctx.seed + idx)
            distances.append(betac - beta)
            values.append(est.mean)
        fit = ising.fit_exponents(distances, values)
        ctx.add(quantity="chi_exponent", beta=betac, h=0.0, **cells,
                mean=fit.slope, stderr=fit.slope_stderr, n_sweeps=fit.n_points,
                seed=ctx.seed)
    elif mode == "mag":
        raw_beta = cfg.get("beta")
        beta = (_float_list(raw_beta)[0] if raw_beta is not None
                else _require(cfg, "betac", "--betac or --beta"))
        raw = cfg.get("h")
        fields = _float_list(raw) if raw is not None else (0.05, 0.1, 0.2, 0.4)
        values = []
        for idx, h in enumerate(fields):
            est = ising.estimate_magnetization(ball, beta, h, params,
                                               ctx.seed + idx, n_chains=chains,
                                               threads=threads)
            ctx.add(quantity="magnetization", beta=beta, h=h, **cells,
                    mean=est.mean, stderr=est.stderr, n_sweeps=est.n_replicas,
                    seed=ctx.seed + idx)
            values.append(est.mean)
        fit = ising.fit_exponents(fields, values)
        ctx.add(quantity="mag_exponent", beta=beta, h=0.0, **cells,
                mean=fit.slope, stderr=fit.slope_stderr, n_sweeps=fit.n_points,
                seed=ctx.seed)
    else:
        raise ConfigError(f"unknown exponents mode {mode!r}")
    ctx.meta["mode"] = mode


# ----------------------------------------------------------------------
# walk subcommands
# ----------------------------------------------------------------------

def _cmd_walk_dist(cfg, ctx):
    trees = _trees(cfg)
    kernel = _kernel(cfg, trees)
    n = _get(cfg, "n", 8)
    if n < 0:
        raise ConfigError(f"step count must be nonnegative, got {n}")
    laws = walk.distance_laws(kernel, n)
    sizes = walk._orbit_sizes(kernel, n)
    label = _kernel_label(kernel)
    ctx.header = _WALK_HEADER
    base = {"kernel": label, "n": n, "stderr": 0.0, "replicas": 0,
            "seed": ctx.seed}
    ctx.add(quantity="mass", value=float(laws[n].sum()), **base)
    ctx.add(quantity="return_probability",
            value=walk.return_probability(laws[n]), **base)
    ctx.add(quantity="sup_transition",
            value=walk.sup_transition(laws[n], sizes), **base)
    ctx.add(quantity="entropy", value=walk.entropy(laws[n], sizes), **base)


def _cmd_walk_rho(cfg, ctx):
    trees = _trees(cfg)
    kernel = _kernel(cfg, trees)
    n_max = _get(cfg, "n", 24)
    report = walk.spectral_radius_bounds(None, kernel, n_max)
    label = _kernel_label(kernel)
    rho = report.rho_target
    ctx.header = _WALK_HEADER
    base = {"kernel": label, "stderr": 0.0, "replicas": 0, "seed": ctx.seed}
    for n, root in report.return_roots:
        ctx.add(quantity="return_root", n=n, value=root, reference=rho,
                verdict="ok" if root <= rho + 1e-12 else "above_target",
                **base)
    for n, root in report.sup_roots:
        ctx.add(quantity="sup_root", n=n, value=root, reference=rho,
                verdict="ok" if root <= rho + 1e-12 else "above_target",
                **base)
    ctx.add(quantity="rho_closed_form", n=n_max, value=rho, **base)
    if n_max >= 16:  # the tail fit needs at least four even return points
        fitted = walk.extrapolated_rho(kernel, n_max)
        ctx.add(quantity="rho_extrapolated", n=n_max, value=fitted,
                reference=rho, **base)
        ctx.meta["extrapolation_gap"] = fitted - rho
    ctx.meta["rho_target"] = rho


def _cmd_walk_entropy(cfg, ctx):
    trees = _trees(cfg)
    kernel = _kernel(cfg, trees)
    n_max = _get(cfg, "n", 16)
    report = walk.entropy_sequence(None, kernel, n_max)
    label = _kernel_label(kernel)
    ctx.header = _WALK_HEADER
    base = {"kernel": label, "stderr": 0.0, "replicas": 0, "seed": ctx.seed}
    for n, value in enumerate(report.values):
        ctx.add(quantity="entropy", n=n, value=value, **base)
    for n, rate in enumerate(report.rates, start=1):
        ctx.add(quantity="entropy_rate", n=n, value=rate, **base)


def _cmd_walk_schramm(cfg, ctx):
    trees = _trees(cfg)
    kernel = _kernel(cfg, trees)
    p = _require(cfg, "p", "--p")
    n = _get(cfg, "n", 6)
    m_ref = _get(cfg, "m", 40)
    reps = _get(cfg, "replicas", 20_000)
    ball = _ball(cfg, trees=trees) if n > 0 else None
    report = walk.schramm_annealed_check(ball, kernel, p, n, m_ref, reps,
                                         ctx.seed, _get(cfg, "threads", 1))
    est = report.estimate
    label = _kernel_label(kernel)
    ctx.header = _WALK_HEADER
    ctx.add(quantity="annealed_tau", kernel=label, n=n, p=p, value=est.mean,
            stderr=est.stderr, reference=report.strict_reference,
            verdict="pass" if report.passed_strict else "fail",
            replicas=est.n_replicas, seed=ctx.seed)
    ctx.add(quantity="annealed_tau_vs_rho", kernel=label, n=n, p=p,
            value=est.mean, stderr=est.stderr,
            reference=report.rho_reference,
            verdict="pass" if report.passed_rho else "fail",
            replicas=est.n_replicas, seed=ctx.seed)
    ctx.meta["m_ref"] = m_ref


def _cmd_walk_schramm_quenched(cfg, ctx):
    trees = _trees(cfg)
    kernel = _kernel(cfg, trees)
    p = _require(cfg, "p", "--p")
    n = _get(cfg, "n", 6)
    m_ref = _get(cfg, "m", 40)
    ball = _ball(cfg, trees=trees)
    report = walk.schramm_quenched_check(
        ball, kernel, p, n, m_ref, _get(cfg, "replicas", 200), ctx.seed,
        threads=_get(cfg, "threads", 1),
        tau_replicas=_get(cfg, "tau_replicas", 2000),
        bias_tol=_get(cfg, "bias_tol", 0.005))
    est = report.estimate
    label = _kernel_label(kernel)
    ctx.header = _WALK_HEADER
    ctx.add(quantity="quenched_rate", kernel=label, n=n, p=p, value=est.mean,
            stderr=est.stderr, reference=report.reference,
            verdict="pass" if report.passed else "fail",
            replicas=est.n_replicas, seed=ctx.seed)
    ctx.add(quantity="bias_budget", kernel=label, n=n, p=p,
            value=report.bias_budget, stderr=0.0,
            replicas=report.max_tau_replicas, seed=ctx.seed)
    ctx.meta["m_ref"] = m_ref


# ----------------------------------------------------------------------
# report
# ----------------------------------------------------------------------

def _cmd_report(cfg, ctx):
    raw = _require(cfg, "inputs", "--inputs")
    if isinstance(raw, str):
        raw = [raw]
    inputs = []  # accept --inputs a b, repeated flags, and config lists
    for item in raw:
        inputs.extend(item if isinstance(item, (list, tuple)) else [item])
    from . import figures
    written = []
    for item in inputs:
        png = figures.render_csv(item, cfg.get("outdir"))
        written.append(str(png))
        print(f"wrote {png}")
    ctx.header = None
    ctx.meta["figures"] = written


_HANDLERS = {
    ("constants",): _cmd_constants,
    ("oracle",): _cmd_oracle,
    ("perc", "tau"): _cmd_perc_tau,
    ("perc", "chi"): _cmd_perc_chi,
    ("perc", "tilted"): _cmd_perc_tilted,
    ("perc", "triangle"): _cmd_perc_triangle,
    ("perc", "pc"): _cmd_perc_pc,
    ("perc", "check-bound"): _cmd_perc_check_bound,
    ("perc", "supermult"): _cmd_perc_supermult,
    ("perc", "open-cond"): _cmd_perc_open_cond,
    ("ising", "twopoint"): _cmd_ising_twopoint,
    ("ising", "bubble"): _cmd_ising_bubble,
    ("ising", "mag"): _cmd_ising_mag,
    ("ising", "betac"): _cmd_ising_betac,
    ("ising", "exponents"): _cmd_ising_exponents,
    ("walk", "dist"): _cmd_walk_dist,
    ("walk", "rho"): _cmd_walk_rho,
    ("walk", "entropy"): _cmd_walk_entropy,
    ("walk", "schramm"): _cmd_walk_schramm,
    ("walk", "schramm-quenched"): _cmd_walk_schramm_quenched,
    ("graph", "dump"): _cmd_graph_dump,
    ("report",): _cmd_report,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    key = (args.cmd,) if getattr(args, "sub", None) is None \
        else (args.cmd, args.sub)
    try:
        cfg = _merge_config(args)
        cfg["seed"] = _get(cfg, "seed", 0)  # normalise so the hash sees it
        ctx = RunContext(" ".join(key), cfg)
        code = 0
        try:
            _HANDLERS[key](cfg, ctx)
        except KeyboardInterrupt:
            ctx.partial = True
            code = 130
        if ctx.header is not None:
            _emit(ctx, cfg)
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ResourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
