"""Command-line experiments: ``odolab <command> [flags]``.

Every table is a CSV with '#' metadata lines (version, command, config
echo, seed).  Wall-clock time goes to stderr and to ``<out>.timing`` so that
reruns of the same config produce byte-identical artifacts.

Exit codes: 0 success, 1 a verified property failed, 2 non-convergence,
3 invalid mathematical request, 64 usage error, 130 interrupted.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import stats

from odolab import __version__
from odolab.field import sample_chi, sample_eta
from odolab.green import (
    ZeroMeanViolation,
    hitting_times_to,
    mass_constant_L,
    spectral_odometer,
    w_field,
)
from odolab.io import Table, write_dsod
from odolab.kernel import (
    DivergentSum,
    SingularPoint,
    kernel_d1_closed_form,
    kernel_lowdim,
    kernel_mollified,
    kernel_periodized,
    periodized_singularity,
)
from odolab.limit import (
    EpsilonTooSmall,
    TestFunction,
    empirical_moment,
    exact_pairing_variance,
    pairing_samples,
    remainder_variance,
    sobolev_norm_field,
    sobolev_norm_minus1,
)
from odolab.sandpile import (
    NonConvergence,
    SandpileConfig,
    WeightDistribution,
    draw_weights,
    init_configuration,
    stabilize,
    stabilize_many,
)
from odolab.torus import TorusLattice, eigenvalue_bounds

log = logging.getLogger("odolab")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_NONCONVERGENCE = 2
EXIT_MATH = 3
EXIT_USAGE = 64
EXIT_INTERRUPTED = 130

# excluded from the config echo: they do not change the results
_NOT_ECHOED = {"command", "out", "workers", "config", "verbose", "handler"}

DEFAULT_U = "1:0.7071067811865476,-1:0.7071067811865476"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _int_list(text: str) -> list[int]:
    items = [t for t in str(text).replace(" ", "").split(",") if t]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    try:
        return [int(t) for t in items]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _float_list(text: str) -> list[float]:
    items = [t for t in str(text).replace(" ", "").split(",") if t]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    try:
        return [float(t) for t in items]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _dist(text: str) -> WeightDistribution:
    try:
        return WeightDistribution.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


# ------------------------------------------------------------------ plumbing

class Run:
    """Per-invocation state shared between a command and the runner."""

    def __init__(self, args):
        self.args = args
        self.table: Table | None = None
        self.started = time.perf_counter()

    def new_table(self, columns, **extra) -> Table:
        args = self.args
        meta = {
            "odolab": __version__,
            "command": args.command,
            "config": config_echo(args),
        }
        if getattr(args, "seed", None) is not None:
            meta["seed"] = args.seed
        meta.update(extra)
        meta["columns"] = ",".join(columns)
        self.table = Table(columns, meta)
        return self.table


def config_echo(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in _NOT_ECHOED:
            continue
        if isinstance(value, WeightDistribution):
            value = str(value)
        elif isinstance(value, TestFunction):
            value = value.to_text()
        out[key] = value
    return out


def resolve_output(path: str | None) -> Path | None:
    if path is None or path == "-":
        return None
    p = Path(path)
    base = os.environ.get("OUTPUT_DIR")
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def emit(run: Run, path: Path | None = None) -> None:
    table = run.table
    if table is None:
        return
    elapsed = time.perf_counter() - run.started
    if path is None:
        path = resolve_output(run.args.out)
    if path is None:
        sys.stdout.write(table.render())
        sys.stdout.flush()
    else:
        table.write(path)
        Path(str(path) + ".timing").write_text(json.dumps({"wall_clock_s": elapsed}) + "\n")
    print(f"wall-clock {elapsed:.3f} s", file=sys.stderr)


def _pool_map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _lattice(args) -> TorusLattice:
    try:
        return TorusLattice(args.d, args.n)
    except (ValueError, OverflowError) as exc:
        raise UsageError(str(exc)) from None


def _need_seed(args):
    if args.seed is None:
        raise UsageError("--seed is required for stochastic commands")


# ------------------------------------------------------------------ commands

def cmd_stabilize(run: Run) -> int:
    args = run.args
    lat = _lattice(args)
    if args.mass is not None:
        if len(args.mass) != lat.size:
            raise UsageError(f"--mass needs {lat.size} values")
        s = SandpileConfig(lat, np.array(args.mass).reshape(lat.shape))
    elif args.weights is not None:
        if len(args.weights) != lat.size:
            raise UsageError(f"--weights needs {lat.size} values")
        s = init_configuration(np.array(args.weights).reshape(lat.shape), lat)
    else:
        _need_seed(args)
        s = init_configuration(draw_weights(lat, args.dist, args.seed), lat)

    code = EXIT_OK
    try:
        res = stabilize(s, tol=args.tol, max_sweeps=args.max_sweeps)
    except NonConvergence as exc:
        res = exc.result
        code = EXIT_NONCONVERGENCE
        log.error("%s", exc)
    cols = ["site"] + [f"x{i}" for i in range(lat.d)]
    cols += ["initial_mass", "final_mass", "odometer_raw", "odometer"]
    table = run.new_table(
        cols,
        sweeps=res.sweeps,
        residual=repr(float(res.residual)),
        converged=int(code == EXIT_OK),
    )
    init = s.mass.ravel()
    final = res.final.mass.ravel()
    raw = res.odometer.raw.ravel()
    e = res.odometer.e.ravel()
    for i, x in enumerate(lat.sites()):
        table.add(i, *x, init[i], final[i], raw[i], e[i])
    if args.field_out:
        path = resolve_output(args.field_out)
        write_dsod(path, res.odometer.e, lat.d, lat.n)
    return code


def _compare_block(job):
    d, n, dist_text, seed, trials, tol, max_sweeps = job
    lat = TorusLattice(d, n)
    dist = WeightDistribution.parse(dist_text)
    configs = [init_configuration(draw_weights(lat, dist, (seed, t)), lat) for t in trials]
    raw, sweeps, resid = stabilize_many(np.stack([c.mass for c in configs]), lat, tol, max_sweeps)
    rows = []
    for k, c in enumerate(configs):
        dyn = raw[k] - raw[k].min()
        spec = spectral_odometer(c).e
        rows.append((trials[k], int(sweeps[k]), float(resid[k]), float(np.max(np.abs(dyn - spec)))))
    return rows


def cmd_odometer_compare(run: Run) -> int:
    args = run.args
    _need_seed(args)
    lat = _lattice(args)
    table = run.new_table(["trial", "sweeps", "residual", "sup_diff"])
    jobs = [
        (lat.d, lat.n, str(args.dist), args.seed, [t], args.tol, args.max_sweeps)
        for t in range(args.trials)
    ]
    worst = 0.0
    for rows in _pool_map(_compare_block, jobs, args.workers):
        for row in rows:
            table.add(*row)
            worst = max(worst, row[3])
    table.meta["max_sup_diff"] = repr(worst)
    return EXIT_OK


def cmd_sample_field(run: Run) -> int:
    args = run.args
    _need_seed(args)
    lat = _lattice(args)
    path = resolve_output(args.out)
    if path is None:
        raise UsageError("sample-field writes a binary snapshot and needs --out")
    if args.kind == "chi":
        values = sample_chi(lat, args.seed).values
    elif args.kind == "eta":
        values = sample_eta(lat, args.seed).values
    else:
        values = w_field(draw_weights(lat, args.dist, args.seed), lat)
    write_dsod(path, values, lat.d, lat.n)
    table = run.new_table(["file", "d", "n", "count"])
    table.add(path.name, lat.d, lat.n, lat.size)
    # the snapshot header has no room for metadata; it goes alongside
    emit(run, Path(str(path) + ".meta"))
    run.table = None
    return EXIT_OK


def _parse_u(args) -> TestFunction:
    try:
        return TestFunction.parse(args.u, args.d)
    except ValueError as exc:
        raise UsageError(f"--u: {exc}") from None


def cmd_pair(run: Run) -> int:
    args = run.args
    _need_seed(args)
    lat = _lattice(args)
    u = _parse_u(args)
    table = run.new_table(
        ["trial", "value"],
        exact_variance=repr(exact_pairing_variance(u, lat) * args.dist.variance),
    )
    vals = pairing_samples(
        u, lat, args.trials, args.dist, args.seed, args.mode, args.workers, args.tol, args.max_sweeps
    )
    for t, v in enumerate(vals):
        table.add(t, v)
    return EXIT_OK


def _double_factorial(k: int) -> int:
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def gaussian_moment(m: int, var: float) -> float:
    """E[X^m] for X ~ N(0, var)."""
    return 0.0 if m % 2 else _double_factorial(m - 1) * var ** (m // 2)


def cmd_moments(run: Run) -> int:
    args = run.args
    _need_seed(args)
    lat = _lattice(args)
    u = _parse_u(args)
    var = exact_pairing_variance(u, lat) * args.dist.variance
    limit = sobolev_norm_minus1(u) * args.dist.variance
    table = run.new_table(
        ["m", "trials", "mean", "se", "target_exact", "target_limit", "z"],
        exact_variance=repr(var),
        limit_variance=repr(limit),
    )
    samples = pairing_samples(
        u, lat, args.trials, args.dist, args.seed, args.mode, args.workers, args.tol, args.max_sweeps
    )
    for m in args.m:
        rep = empirical_moment(u, lat, m, args.trials, samples=samples)
        target = gaussian_moment(m, var)
        z = (rep.mean - target) / rep.se if rep.se > 0 else math.nan
        table.add(m, rep.trials, rep.mean, rep.se, target, gaussian_moment(m, limit), z)
    return EXIT_OK


def cmd_sweep(run: Run) -> int:
    args = run.args
    if args.trials > 0:
        _need_seed(args)
    u = _parse_u(args)
    target = sobolev_norm_minus1(u) * args.dist.variance
    table = run.new_table(
        ["n", "exact_variance", "mc_variance", "mc_se", "remainder_variance", "target"]
    )
    for n in args.n:
        lat = TorusLattice(args.d, n)
        exact = exact_pairing_variance(u, lat) * args.dist.variance
        if args.trials > 0:
            samples = pairing_samples(
                u, lat, args.trials, args.dist, args.seed, args.mode, args.workers,
                args.tol, args.max_sweeps,
            )
            rep = empirical_moment(u, lat, 2, args.trials, samples=samples)
            mc, se = rep.mean, rep.se
        else:
            mc = se = math.nan
        table.add(n, exact, mc, se, remainder_variance(u, lat) * args.dist.variance, target)
    return EXIT_OK


def _sobolev_block(job):
    d, n, seed, trials, eps, cutoff = job
    lat = TorusLattice(d, n)
    out = []
    for t in trials:
        rep = sobolev_norm_field(sample_chi(lat, (seed, t)).values, lat, eps, cutoff)
        out.append((rep.value, rep.tail_bound, rep.cutoff))
    return out


def cmd_sobolev(run: Run) -> int:
    args = run.args
    _need_seed(args)
    table = run.new_table(["n", "trials", "mean", "se", "tail_bound", "cutoff"])
    block = 25
    ns, vals = [], []
    for n in args.n:
        # every n uses the same trial keys; samples at different n are still independent fields
        jobs = [
            (args.d, n, args.seed, list(range(s, min(s + block, args.trials))), args.eps, args.cutoff)
            for s in range(0, args.trials, block)
        ]
        res = [r for part in _pool_map(_sobolev_block, jobs, args.workers) for r in part]
        v = np.array([r[0] for r in res])
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
        table.add(n, v.size, float(v.mean()), se, max(r[1] for r in res), res[0][2])
        ns.extend([n] * v.size)
        vals.extend(v.tolist())
    if len(set(ns)) > 1:
        rho, p = stats.spearmanr(ns, vals, alternative="greater")
        table.meta["spearman_rho"] = repr(float(rho))
        table.meta["spearman_p_increasing"] = repr(float(p))
    return EXIT_OK


def _theta_grid(args) -> list[float]:
    if args.theta is not None:
        return args.theta
    if args.singular:
        return [10.0 ** -k for k in range(1, args.points + 1)]
    g = args.points
    return [0.5 * i / (g - 1) for i in range(g)] if g > 1 else [0.0]


def cmd_kernel(run: Run) -> int:
    args = run.args
    d = args.d
    grid = _theta_grid(args)
    point = lambda t: [t] + [0.0] * (d - 1)  # noqa: E731
    if args.singular:
        if d < 5:
            raise UsageError("--singular applies to d >= 5")
        table = run.new_table(["theta", "periodized", "singular", "difference", "theta_times_singular"])
        for t in grid:
            K = kernel_periodized(d, point(t))
            P = periodized_singularity(d, point(t), args.shells)
            table.add(t, K, P, K - P, abs(t) * P)
        return EXIT_OK
    kappa = args.kappa or 0.0
    if kappa > 0:
        table = run.new_table(["theta", "value", "error_bound"])
        for t in grid:
            kv = kernel_mollified(d, point(t), kappa, args.cutoff)
            table.add(t, kv.value, kv.error_bound)
        return EXIT_OK
    if d >= 4:
        raise DivergentSum(f"kernel sum diverges for d={d}; pass --kappa > 0 or --singular")
    cols = ["theta", "value", "error_bound"] + (["closed_form"] if d == 1 else [])
    table = run.new_table(cols)
    for t in grid:
        kv = kernel_lowdim(d, point(t), args.cutoff)
        extra = [kernel_d1_closed_form(t)] if d == 1 else []
        table.add(t, kv.value, kv.error_bound, *extra)
    table.meta["cutoff"] = kv.cutoff
    return EXIT_OK


def cmd_verify_bounds(run: Run) -> int:
    args = run.args
    table = run.new_table(
        ["d", "n_max", "checked", "lower_ok", "mongoose_ok", "c_empirical",
         "worst_lower_ratio", "worst_mongoose_ratio"]
    )
    ok = True
    for d in range(1, args.d_max + 1):
        r = eigenvalue_bounds(d, args.n_max)
        ok &= r.ok
        table.add(d, r.n_max, r.checked, r.lower_ok, r.mongoose_ok, r.c_empirical,
                  r.worst_lower_ratio, r.worst_mongoose_ratio)
    return EXIT_OK if ok else EXIT_FAILED


def cmd_hitting(run: Run) -> int:
    args = run.args
    lat = _lattice(args)
    if lat.size > 256:
        raise UsageError("hitting table limited to 256 sites (one solve per target)")
    target = lat.wrap(args.target if args.target is not None else [0] * lat.d)
    # L(x) = n^-2d sum_z E_x[tau_z] for every base point x at once
    total = np.zeros(lat.shape)
    h_target = None
    for z in lat.sites():
        h = hitting_times_to(lat, z)
        total += h
        if z == target:
            h_target = h
    Lx = total / lat.size**2
    table = run.new_table(
        ["site"] + [f"x{i}" for i in range(lat.d)] + ["hitting_time", "L_from_x"],
        target=";".join(map(str, target)),
        L_spectral=repr(mass_constant_L(lat, method="spectral")),
        L_spread=repr(float(Lx.max() - Lx.min())),
    )
    for i, x in enumerate(lat.sites()):
        table.add(i, *x, h_target[x], Lx[x])
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="odolab", description="Divisible sandpile odometer experiments.")
    p.add_argument("--version", action="version", version=f"odolab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, handler, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(handler=handler)
        sp.add_argument("--config", help="INI file; section [%s] (and [DEFAULT]) supplies flag values" % name)
        sp.add_argument("--out", help="output path (relative paths go under $OUTPUT_DIR); stdout if omitted")
        sp.add_argument("--workers", type=_positive_int, default=os.cpu_count() or 1)
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    def lattice_flags(sp, n_list=False):
        sp.add_argument("--d", type=_positive_int, required=True)
        if n_list:
            sp.add_argument("--n", type=_int_list, required=True, help="comma-separated sizes")
        else:
            sp.add_argument("--n", type=_positive_int, required=True)

    def mc_flags(sp, trials=1000):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--dist", type=_dist, default=WeightDistribution())
        if trials:
            sp.add_argument("--trials", type=int, default=trials)
        sp.add_argument("--tol", type=float, default=1e-10)
        sp.add_argument("--max-sweeps", type=int, default=10**7)

    def pairing_flags(sp):
        sp.add_argument("--u", default=DEFAULT_U, help='test function "nu:coeff,..." (default sqrt2 cos 2 pi x)')
        sp.add_argument("--mode", choices=("odometer", "w", "chi"), default="odometer")

    sp = command("stabilize", cmd_stabilize, "stabilize one sandpile configuration")
    lattice_flags(sp)
    mc_flags(sp, trials=0)
    sp.add_argument("--weights", type=_float_list, help="explicit weights, row-major")
    sp.add_argument("--mass", type=_float_list, help="explicit initial masses, row-major")
    sp.add_argument("--field-out", help="also write the odometer as a DSOD snapshot")

    sp = command("odometer-compare", cmd_odometer_compare, "dynamic vs spectral odometer")
    lattice_flags(sp)
    mc_flags(sp, trials=20)

    sp = command("sample-field", cmd_sample_field, "write one field sample as a DSOD snapshot")
    lattice_flags(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--kind", choices=("chi", "eta", "w"), default="chi")
    sp.add_argument("--dist", type=_dist, default=WeightDistribution())

    sp = command("pair", cmd_pair, "draw pairings <Xi_n, u>")
    lattice_flags(sp)
    mc_flags(sp, trials=1)
    pairing_flags(sp)

    sp = command("moments", cmd_moments, "Monte Carlo moments of <Xi_n, u>")
    lattice_flags(sp)
    mc_flags(sp)
    pairing_flags(sp)
    sp.add_argument("--m", type=_int_list, default=[1, 2, 3, 4])

    sp = command("sweep", cmd_sweep, "exact and Monte Carlo variance across n")
    lattice_flags(sp, n_list=True)
    mc_flags(sp)
    pairing_flags(sp)

    sp = command("sobolev", cmd_sobolev, "negative Sobolev norm of chi samples across n")
    lattice_flags(sp, n_list=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trials", type=_positive_int, default=100)
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--cutoff", type=int)

    sp = command("kernel", cmd_kernel, "continuum kernel on a theta grid")
    sp.add_argument("--d", type=_positive_int, required=True)
    sp.add_argument("--kappa", type=float)
    sp.add_argument("--cutoff", type=int)
    sp.add_argument("--points", type=_positive_int, default=11)
    sp.add_argument("--theta", type=_float_list, help="first-coordinate grid (others are 0)")
    sp.add_argument("--singular", action="store_true", help="d >= 5: periodized kernel and its singular part")
    sp.add_argument("--shells", type=_positive_int, default=1)

    sp = command("verify-bounds", cmd_verify_bounds, "exhaustive eigenvalue bound check")
    sp.add_argument("--d-max", type=_positive_int, default=3)
    sp.add_argument("--n-max", type=_positive_int, default=64)

    sp = command("hitting", cmd_hitting, "hitting-time oracle table and L")
    lattice_flags(sp)
    sp.add_argument("--target", type=_int_list)

    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load ``--config`` values as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in argv if not a.startswith("-")), None)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in sub.choices:
        return
    cp = configparser.ConfigParser(interpolation=None)
    try:
        with open(known.config) as fh:
            cp.read_file(fh)
    except OSError as exc:
        parser.error(f"cannot read config: {exc}")
    section = cp[command] if cp.has_section(command) else cp[cp.default_section]
    shared = cp.defaults()
    sp = sub.choices[command]
    by_name = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in section.items():
        dest = key.replace("-", "_")
        action = by_name.get(dest)
        if action is None or dest in ("config", "help", "handler"):
            if key in shared:
                continue  # shared [DEFAULT] keys may target other commands
            sp.error(f"unknown config key {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            value = section.getboolean(key)
        elif action.type is not None:
            try:
                value = action.type(raw)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                sp.error(f"config key {key!r}: {exc}")
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            sp.error(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        action.required = False
        defaults[dest] = value
    sp.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    run = Run(args)
    try:
        code = args.handler(run)
    except KeyboardInterrupt:
        if run.table is not None:
            run.table.truncated = True
            emit(run)
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except UsageError as exc:
        print(f"odolab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonConvergence as exc:
        print(f"odolab {args.command}: {exc}", file=sys.stderr)
        emit(run)
        return EXIT_NONCONVERGENCE
    except (DivergentSum, SingularPoint, EpsilonTooSmall, ZeroMeanViolation) as exc:
        print(f"odolab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MATH
    emit(run)
    return code


if __name__ == "__main__":
    sys.exit(main())
