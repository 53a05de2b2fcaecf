"""Command-line front end.

Units throughout: temperatures in K, times and stepsizes in s, heat
capacities in J/K, thermal resistances in K/W, sources in K/s.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
blow-up (explicit Euler above its stability limit).
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from pathlib import Path

from . import experiments as ex
from .network import LATTICE_PRESETS, NetworkError, build_random_lattice, load_network, save_network
from .reference import ReferenceError, spectrum
from .schemes import NumericalBlowup, euler_max_step, integrate, parse_scheme

UNITS = ("units: temperature K, time and stepsize s, capacity C in J/K, "
         "resistance R in K/W, source Q in K/s")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive(flag):
    def conv(text):
        try:
            val = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects a number, got {text!r}")
        if not (val > 0 and math.isfinite(val)):
            raise argparse.ArgumentTypeError(f"{flag} must be positive, got {text}")
        return val
    return conv


def _scheme(text):
    try:
        return parse_scheme(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _scheme_list(text):
    return [_scheme(tok) for tok in text.split(",") if tok.strip()]


def _float_list(text):
    try:
        vals = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if any(not (v > 0) for v in vals):
        raise argparse.ArgumentTypeError("stepsizes must be positive")
    return vals


def _value_spec(values, flag):
    if len(values) == 1:
        return values[0]
    if len(values) == 2:
        return (values[0], values[1])
    raise UsageError(f"{flag} takes one value (constant) or two (uniform range)")


def _write_text(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(args):
    network = load_network(args.network)
    try:
        state = integrate(network, args.scheme, args.h, args.t_final, workers=args.threads)
    except NumericalBlowup as exc:
        msg = f"numerical blow-up: {exc}"
        try:
            msg += f"; explicit Euler limit h_max = {euler_max_step(spectrum(network)):.6g} s"
        except ReferenceError:
            pass
        print(msg, file=sys.stderr)
        return 2
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cell", "temperature"])
    for k, val in enumerate(state.u):
        writer.writerow([k, repr(float(val))])
    _write_text(buf.getvalue(), args.out)
    return 0


def cmd_verify_sine(args):
    reference = {"ode": "exact", "pde": "pde"}[args.reference]
    config = ex.SweepConfig(
        problem=ex.SineProblem(args.n),
        schemes=args.schemes,
        h_list=args.h_list,
        t_final=args.t_final,
        reference=reference,
        workers=args.threads,
        powered=args.powered,
    )
    ref = ex.compute_reference(config)
    reports = ex.run_h_sweep(config, ref)
    plateau = ref.spatial_error if args.reference == "pde" else None
    fits = ex.order_fits(reports, plateau)
    if plateau is not None:
        print(f"spatial-error plateau (exact ODE vs PDE): {plateau:.6g} K")
    last = {}
    for r in reports:
        if r.scheme not in last or r.h < last[r.scheme].h:
            last[r.scheme] = r
    for name, slope in fits.items():
        r = last[name]
        print(f"{name}: fitted order {slope:.4f}; max_d at h={r.h:g}: {r.max_d:.6g} K")
    if args.out:
        ex.write_reports_csv(reports, args.out, config.metadata())
    return 0


def _problem_from_args(args):
    if args.network:
        return ex.FileProblem(args.network)
    if args.preset == "paper-sine":
        return ex.SineProblem(args.n)
    if args.preset in ("paper-table-1", "paper-table-2"):
        return ex.PRESETS[args.preset].problem.with_seed(args.seed)
    if args.nx and args.ny:
        return ex.LatticeProblem(args.nx, args.ny, tuple(args.exp_range),
                                 _value_spec(args.u0, "--u0"), _value_spec(args.q, "--q"),
                                 args.seed)
    raise UsageError("give --network, --preset, or --nx/--ny")


def cmd_sweep(args):
    problem = _problem_from_args(args)
    schemes = args.schemes
    h_list = args.h_list
    if args.preset == "paper-sine":
        schemes = schemes or list(ex.SINE_SCHEMES)
        h_list = h_list or list(ex.SINE_STEPSIZES)
    config = ex.SweepConfig(
        problem=problem, schemes=schemes or [], h_list=h_list or [], gitc=args.gitc,
        t_final=args.t_final, reference=args.reference, oracle_tol=args.oracle_tol,
        cross_check=not args.no_cross_check, workers=args.threads, powered=args.powered,
    )
    if args.gitc is not None:
        stages = args.stages or list(range(1, 8))
        ex.gitc_stepsizes(args.gitc, stages, args.t_final)
        reports = ex.run_gitc_sweep(config, stages)
    elif args.iterations:
        if not h_list:
            raise UsageError("--iterations needs --h-list")
        reports = ex.run_iteration_sweep(config, args.iterations)
    else:
        if not h_list or not schemes:
            raise UsageError("an h sweep needs --schemes and --h-list")
        reports = ex.run_h_sweep(config)
    text = ex.write_reports_csv(reports, None, config.metadata())
    _write_text(text, args.out)
    if args.profile:
        ex.plot_profile(reports, args.profile)
    return 0


def cmd_bench(args):
    preset = ex.PRESETS[args.preset]
    rows = []
    for seed in range(args.seed, args.seed + args.seeds):
        rows.extend(ex.run_benchmark(preset, seed, workers=args.threads))
    if args.seeds > 1:
        rows.extend(ex.summarize_benchmark(rows))
    meta = {"preset": preset.name, "problem": preset.problem.describe().rsplit(" seed=", 1)[0],
            "seeds": f"{args.seed}..{args.seed + args.seeds - 1}",
            "cost": "stage evaluations x N (oracle: rhs evaluations x N)"}
    text = ex.write_benchmark_csv(rows, None, meta, timing=args.timing)
    _write_text(text, args.out)
    return 0


def cmd_spectrum(args):
    spec = spectrum(load_network(args.network))
    print(f"lambda_max: {spec.lambda_max:.10g}")
    print(f"stiffness_ratio: {spec.stiffness_ratio:.10g}")
    print(f"euler_h_max: {euler_max_step(spec):.10g}")
    return 0


def cmd_gen_lattice(args):
    if args.preset:
        params = dict(LATTICE_PRESETS[args.preset])
    else:
        if not (args.nx and args.ny):
            raise UsageError("give --preset or both --nx and --ny")
        params = dict(nx=args.nx, ny=args.ny, exponent_range=tuple(args.exp_range),
                      u0_spec=_value_spec(args.u0, "--u0"), q_spec=_value_spec(args.q, "--q"))
    network = build_random_lattice(seed=args.seed, **params)
    save_network(network, args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads (results do not depend on this; default: cores)")

    parser = _Parser(prog="heatnet", description="Constant- and linear-neighbour heat solvers.",
                     epilog=UNITS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", parents=[common], epilog=UNITS,
                       help="integrate a network file to t_final",
                       description="Integrate a network file and write the final temperatures "
                                   "(K) per cell as CSV.")
    p.add_argument("--network", required=True, help="network JSON file")
    p.add_argument("--scheme", required=True, type=_scheme, help="euler, cnK or lnK (K=1..16)")
    p.add_argument("--h", required=True, type=_positive("--h"), help="stepsize (s)")
    p.add_argument("--t-final", required=True, type=_positive("--t-final"), help="end time (s)")
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify-sine", parents=[common], epilog=UNITS,
                       help="order study on the 1D sine problem",
                       description="Run the sine verification study on [0, pi] and print the "
                                   "fitted order of each scheme.")
    p.add_argument("--n", type=int, default=101, help="number of cells (default 101)")
    p.add_argument("--schemes", type=_scheme_list,
                   default=list(ex.SINE_SCHEMES), help="comma-separated scheme tokens")
    p.add_argument("--h-list", type=_float_list, default=list(ex.SINE_STEPSIZES),
                   help="comma-separated stepsizes (s), decreasing")
    p.add_argument("--t-final", type=_positive("--t-final"), default=1.0, help="end time (s)")
    p.add_argument("--reference", choices=("pde", "ode"), default="ode",
                   help="pde: closed-form PDE solution (shows the spatial plateau); "
                        "ode: exact solution of the discretized system")
    p.add_argument("--powered", action="store_true",
                   help="evaluate steps by powering the one-step operator (fast for tiny h)")
    p.add_argument("--out", help="sweep CSV")
    p.set_defaults(func=cmd_verify_sine)

    lattice = _Parser(add_help=False)
    lattice.add_argument("--nx", type=int, help="lattice cells in x")
    lattice.add_argument("--ny", type=int, help="lattice cells in y")
    lattice.add_argument("--exp-range", type=float, nargs=2, default=(-1.0, 1.0),
                         metavar=("LO", "HI"),
                         help="C (J/K) and R (K/W) are 10**U(LO, HI) (default -1 1)")
    lattice.add_argument("--u0", type=float, nargs="+", default=[0.0, 1000.0],
                         help="initial temperature (K): one value or a uniform range LO HI")
    lattice.add_argument("--q", type=float, nargs="+", default=[-500.0, 500.0],
                         help="source (K/s): one value or a uniform range LO HI")
    lattice.add_argument("--seed", type=int, default=0, help="PCG64 seed")

    p = sub.add_parser("sweep", parents=[common, lattice], epilog=UNITS,
                       help="error sweeps (h, iteration count or fixed GITC)",
                       description="Error sweep against a reference solution; writes CSV.")
    p.add_argument("--network", help="network JSON file")
    p.add_argument("--preset", choices=("paper-sine", "paper-table-1", "paper-table-2"))
    p.add_argument("--n", type=int, default=101, help="cells for paper-sine")
    p.add_argument("--schemes", type=_scheme_list, help="comma-separated scheme tokens")
    p.add_argument("--h-list", type=_float_list, help="comma-separated stepsizes (s)")
    p.add_argument("--iterations", type=int, help="iteration sweep: k = 1..K for CN and LN")
    p.add_argument("--gitc", type=int, help="fixed global iteration counter")
    p.add_argument("--stages", type=lambda s: [int(x) for x in s.split(",")],
                   help="stage counts for --gitc (default 1..7)")
    p.add_argument("--t-final", type=_positive("--t-final"), default=1.0, help="end time (s)")
    p.add_argument("--reference", choices=("exact", "oracle", "pde"), default="exact")
    p.add_argument("--oracle-tol", type=float, default=1e-10)
    p.add_argument("--no-cross-check", action="store_true",
                   help="skip the exact-vs-oracle agreement check")
    p.add_argument("--powered", action="store_true",
                   help="evaluate steps by powering the one-step operator")
    p.add_argument("--out", help="CSV output (default: stdout)")
    p.add_argument("--profile", help="also write the tidy plot-data CSV here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", parents=[common], epilog=UNITS,
                       help="solver comparison tables over seeds",
                       description="Solver comparison on the random-lattice presets; cost is "
                                   "stage evaluations times N.")
    p.add_argument("--preset", required=True, choices=sorted(ex.PRESETS))
    p.add_argument("--seeds", type=int, default=1, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--timing", action="store_true",
                   help="add an informational wall-clock column (not reproducible)")
    p.add_argument("--out", help="CSV output (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("spectrum", parents=[common], epilog=UNITS,
                       help="eigenvalue summary of a network",
                       description="Print the largest eigenvalue magnitude (1/s), the stiffness "
                                   "ratio and the explicit-Euler stepsize limit (s).")
    p.add_argument("--network", required=True, help="network JSON file")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("gen-lattice", parents=[common, lattice], epilog=UNITS,
                       help="write a random lattice network file",
                       description="Generate a random rectangular lattice network file.")
    p.add_argument("--preset", choices=sorted(LATTICE_PRESETS),
                   help="moderate: 50x20, exponents -1..1; stiff: 250x20, exponents -3..3, u0=0")
    p.add_argument("--out", required=True, help="network JSON file to write")
    p.set_defaults(func=cmd_gen_lattice)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    try:
        return args.func(args)
    except (UsageError, NetworkError, ex.ConfigError, ValueError, OSError,
            ReferenceError, ex.ReferenceMismatch) as exc:
        print(f"heatnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
