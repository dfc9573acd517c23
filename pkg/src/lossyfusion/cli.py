"""Command-line front end.

Exit codes: 0 success, 1 model error (bad model file, failed checks, solver
failure), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import numerics
from .config import dump_config, load_config, model_to_config, pendulum_config
from .errors import FusionError
from .fusion import assemble_sigma, solve_weights_closed_form, solve_weights_kkt, stack_bases
from .linmodel import check_collective_observability, check_feasibility, kalman_decompose
from .riccati import solve_steady_state
from .simulator import default_workers, monte_carlo

EXIT_OK, EXIT_MODEL, EXIT_USAGE = 0, 1, 2
BENCHMARKS = {"pendulum": pendulum_config}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _taus(text):
    try:
        vals = [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one holding time")
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("holding times must be non-negative")
    return vals


def _add_model_args(p):
    p.add_argument("config", nargs="?", help="model JSON file")
    p.add_argument("--bench", choices=sorted(BENCHMARKS), help="use a built-in benchmark instead of a file")


def build_parser():
    parser = _Parser(prog="lossyfusion", description="Fusion of partially observing sensors over lossy links.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", help="observability, feasibility and steady-filter report")
    _add_model_args(p)

    p = sub.add_parser("simulate", help="Monte-Carlo run, per-step means written as CSV")
    _add_model_args(p)
    p.add_argument("--trajectories", type=_positive_int, default=50)
    p.add_argument("--horizon", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=None, help="master seed (fresh one printed if omitted)")
    p.add_argument("--solver", choices=["closed", "kkt"], default="closed")
    p.add_argument("--threads", type=_positive_int, default=default_workers(), help="worker processes")
    p.add_argument("--out", default="simulation.csv", help="CSV output path ('-' for stdout)")

    p = sub.add_parser("weights", help="optimal fusion weights for given holding times")
    _add_model_args(p)
    p.add_argument("--taus", type=_taus, required=True, help="comma-separated holding times, one per sensor")

    p = sub.add_parser("export-bench", help="write a built-in benchmark as a model file")
    p.add_argument("name", choices=sorted(BENCHMARKS))
    p.add_argument("--out", default="-")
    p.add_argument("--discrete", action="store_true", help="write sampled A and Q instead of A_c, B_c")
    return parser


def _load(args, parser):
    if (args.config is None) == (args.bench is None):
        parser.error("give exactly one of a config path or --bench")
    if args.bench is not None:
        from .config import parse_config

        return parse_config(BENCHMARKS[args.bench]())
    return load_config(args.config)


def _fmt(M) -> str:
    return np.array2string(np.asarray(M), precision=6, suppress_small=False, max_line_width=120)


def cmd_check(process, sensors, out=None) -> int:
    out = out or sys.stdout
    ok = True
    print(f"state dimension n = {process.n}, sensors N = {len(sensors)}", file=out)
    decs = []
    for i, s in enumerate(sensors, 1):
        try:
            d = kalman_decompose(process, s)
        except FusionError as exc:
            print(f"sensor {i}: {exc}", file=out)
            ok = False
            continue
        decs.append(d)
        print(f"sensor {i}: n_o = {d.n_o}, lambda = {s.arrival_rate:g}", file=out)
    observable = check_collective_observability(process, sensors)
    print(f"collective observability: {'OK' if observable else 'FAIL'}", file=out)
    rho = numerics.spectral_radius(process.A)
    value, feasible = check_feasibility(process, sensors)
    print(f"spectral radius of A: {rho:.8f}", file=out)
    print(f"feasibility (1 - min lambda) * rho^2 = {value:.8f} < 1: {'OK' if feasible else 'FAIL'}", file=out)
    if not process.noise_is_positive_definite():
        print("note: process noise covariance is singular", file=out)
    ok = ok and observable and feasible
    if ok:
        steady = solve_steady_state(process, sensors)
        for i, f in enumerate(steady.filters, 1):
            print(
                f"sensor {i}: steady filter residual {f.residual:.3e} after {f.iterations} doublings,"
                f" tr P_bar = {np.trace(f.P_bar):.6g}",
                file=out,
            )
    print(f"verdict: {'OK' if ok else 'FAIL'}", file=out)
    return EXIT_OK if ok else EXIT_MODEL


def _checked_steady(process, sensors):
    if not check_collective_observability(process, sensors):
        raise FusionError("model is not collectively observable")
    value, feasible = check_feasibility(process, sensors)
    if not feasible:
        raise FusionError(f"feasibility condition fails: (1 - min lambda) * rho^2 = {value:.6g} >= 1")
    return solve_steady_state(process, sensors)


def csv_header(N: int):
    return ["k", "mean_err_norm", "mean_err_sq", "mean_trace_P"] + [
        f"sensor_{i}_subspace_err" for i in range(1, N + 1)
    ]


def write_csv(summary, fh):
    w = csv.writer(fh, lineterminator="\r\n")
    N = summary.mean_subspace_err.shape[1]
    w.writerow(csv_header(N))
    for k in range(summary.horizon):
        w.writerow(
            [k, repr(float(summary.mean_err_norm[k])), repr(float(summary.mean_err_sq[k]))]
            + [repr(float(summary.mean_trace_P[k]))]
            + [repr(float(v)) for v in summary.mean_subspace_err[k]]
        )


def cmd_simulate(process, sensors, args, out=None) -> int:
    out = out or sys.stdout
    steady = _checked_steady(process, sensors)
    seed = args.seed
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % (2**63))
    summary = monte_carlo(
        steady, args.trajectories, args.horizon, seed, solver=args.solver, workers=args.threads
    )
    if args.out == "-":
        write_csv(summary, sys.stdout)
    else:
        try:
            with open(args.out, "w", newline="", encoding="utf-8") as fh:
                write_csv(summary, fh)
        except OSError as exc:
            print(f"error: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
            return EXIT_MODEL
    start = summary.horizon - max(1, summary.horizon // 5)
    win = summary.window_mean(start)
    info = sys.stderr if args.out == "-" else out
    print(f"seed: {seed}", file=info)
    print(f"trajectories: {summary.trajectories}, horizon: {summary.horizon}, solver: {summary.solver}", file=info)
    print(f"runtime: {summary.runtime:.2f} s", file=info)
    print(f"final-window means (k >= {start}):", file=info)
    print(f"  |e|      {win['mean_err_norm']:.6g}", file=info)
    print(f"  |e|^2    {win['mean_err_sq']:.6g}", file=info)
    print(f"  tr P     {win['mean_trace_P']:.6g}", file=info)
    for i, v in enumerate(win["mean_subspace_err"], 1):
        print(f"  sensor {i} subspace |err| {v:.6g}", file=info)
    if args.out != "-":
        print(f"wrote {args.out}", file=info)
    return EXIT_OK


def cmd_weights(process, sensors, taus, out=None) -> int:
    out = out or sys.stdout
    steady = _checked_steady(process, sensors)
    prob = assemble_sigma(steady, taus)
    w_sigma = np.linalg.eigvalsh(prob.sigma)
    print(f"taus: {list(taus)}", file=out)
    print(f"Sigma: size {prob.sigma.shape[0]}, min eigenvalue {w_sigma[0]:.6e}, trace {np.trace(prob.sigma):.6e}", file=out)
    cf = solve_weights_closed_form(prob)
    kkt = solve_weights_kkt(prob)
    print("W (closed form):", file=out)
    print(_fmt(cf.W), file=out)
    print("W (KKT):", file=out)
    print(_fmt(kkt.W), file=out)
    dual = 0.5 * float(np.trace(kkt.multiplier))
    print(f"tr P (closed form): {cf.trace_P:.12e}", file=out)
    print(f"tr P (KKT):         {kkt.trace_P:.12e}", file=out)
    print(f"duality gap 1/2 tr(L1) - tr P: {dual - kkt.trace_P:.3e}", file=out)
    V = stack_bases(steady.decompositions)
    print(f"unbiasedness |W'V_o - I|_max: {np.max(np.abs(cf.W.T @ V - np.eye(process.n))):.3e}", file=out)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "export-bench":
            doc = BENCHMARKS[args.name]()
            if args.discrete:
                from .config import parse_config

                doc = model_to_config(*parse_config(doc))
            text = dump_config(doc)
            if args.out == "-":
                sys.stdout.write(text)
            else:
                dump_config(doc, args.out)
            return EXIT_OK
        process, sensors = _load(args, parser)
        if args.command == "check":
            return cmd_check(process, sensors)
        if args.command == "simulate":
            return cmd_simulate(process, sensors, args)
        if args.command == "weights":
            if len(args.taus) != len(sensors):
                parser.error(f"--taus: expected {len(sensors)} values, got {len(args.taus)}")
            return cmd_weights(process, sensors, args.taus)
    except FusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
