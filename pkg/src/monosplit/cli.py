"""``monosplit`` command line.

Exit codes: 0 success, 1 non-convergence (or a failed check), 2 usage error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import algorithms as alg
from . import bench
from . import problems as P

EXIT_OK, EXIT_NOCONV, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

RUN_KEYS = {"method", "problem", "gamma", "tol", "max_iter", "stop_rule", "unsafe_gamma",
            "trace", "epsilon", "zeta", "xi"}
BENCH_KEYS = {"methods", "problems", "out", "tol", "max_iter", "divergence_demo", "workers",
              "trace_dir", "epsilon", "zeta", "xi", "timing"}
VALIDATE_KEYS = {"problem", "pairs", "seed"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _gamma(text):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("gamma must be 'auto' or a number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("gamma must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="monosplit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one method on one problem")
    r.add_argument("--method", choices=alg.METHODS, default="rfbs")
    r.add_argument("--problem", default="lasso", help="registry name")
    r.add_argument("--gamma", type=_gamma, default="auto")
    r.add_argument("--unsafe-gamma", action="store_true",
                   help="accept a stepsize outside the method's admissible range")
    r.add_argument("--tol", type=float, default=1e-8)
    r.add_argument("--max-iter", type=int, default=100_000)
    r.add_argument("--stop-rule", choices=("natural_residual", "step_norm"), default="natural_residual")
    r.add_argument("--epsilon", type=float, default=0.01)
    r.add_argument("--zeta", type=float, default=0.25)
    r.add_argument("--xi", type=float, default=1.0)
    r.add_argument("--trace", help="write the per-iteration CSV here")
    r.add_argument("--config", help="JSON file; its keys override the flags")

    b = sub.add_parser("bench", help="run a method x problem matrix")
    b.add_argument("--methods", default=",".join(alg.METHODS))
    b.add_argument("--problems", default="all")
    b.add_argument("--out", help="report CSV path (an aligned .txt table is written next to it)")
    b.add_argument("--trace-dir", help="write one trace CSV per cell into this directory")
    b.add_argument("--tol", type=float, default=1e-8)
    b.add_argument("--max-iter", type=int, default=100_000)
    b.add_argument("--divergence-demo", action="store_true",
                   help="also run incompatible cells (e.g. fbs on a skew operator)")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--epsilon", type=float, default=0.01)
    b.add_argument("--zeta", type=float, default=0.25)
    b.add_argument("--xi", type=float, default=1.0)
    b.add_argument("--timing", action="store_true", help="include wall times in the report files")
    b.add_argument("--config", help="JSON file; its keys override the flags")

    v = sub.add_parser("validate", help="run the operator invariant checks of a problem")
    v.add_argument("--problem", default="all")
    v.add_argument("--pairs", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--config", help="JSON file; its keys override the flags")
    return parser


class _Usage(Exception):
    pass


def _apply_config(args, allowed):
    if not args.config:
        return
    text = Path(args.config).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _Usage(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise _Usage("config must be a JSON object")
    unknown = set(data) - allowed
    if unknown:
        raise _Usage(f"unknown config keys: {sorted(unknown)}")
    for key, value in data.items():
        setattr(args, key, value)


def _load_problem(problem):
    if isinstance(problem, dict):
        return P.build(P.ProblemSpec.from_dict(problem))
    try:
        return P.build(P.get(problem))
    except KeyError:
        raise _Usage(f"unknown problem {problem!r}; choose from {', '.join(P.names())}") from None


def cmd_run(args) -> int:
    _apply_config(args, RUN_KEYS)
    if args.method not in alg.METHODS:
        raise _Usage(f"unknown method {args.method!r}")
    built = _load_problem(args.problem)
    if args.gamma == "auto":
        try:
            gamma = bench.auto_gamma(args.method, built, epsilon=args.epsilon, zeta=args.zeta,
                                     xi=args.xi, divergence_demo=args.unsafe_gamma)
        except alg.IncompatibleOperatorError as exc:
            raise _Usage(f"{exc}; pass --unsafe-gamma to run it anyway") from None
    else:
        gamma = float(args.gamma)
    if not args.unsafe_gamma and not bench.compatible(args.method, built):
        raise _Usage(f"{args.method} is not applicable to {built.spec.name}; use --unsafe-gamma")
    config = alg.RunConfig(gamma=gamma, max_iter=int(args.max_iter), tol=float(args.tol),
                           stop_rule=args.stop_rule, unsafe_gamma=bool(args.unsafe_gamma),
                           record_lyapunov=built.known_solution, epsilon=args.epsilon,
                           zeta=args.zeta, xi=args.xi)
    diverged = False
    try:
        trace = bench.run_problem(args.method, built, config)
    except alg.DivergenceError as exc:
        trace, diverged = exc.trace, True
    except alg.StepsizeError as exc:
        raise _Usage(str(exc)) from None
    if args.trace:
        bench.emit_trace_csv(trace, args.trace)
    last = trace.records[-1] if trace.records else None
    status = "diverged" if diverged else ("converged" if trace.converged else "not converged")
    print(f"{args.method} on {built.spec.name}: {status} after {len(trace)} iterations, "
          f"gamma={gamma:.6g}, residual={last.natural_residual if last else float('nan'):.3e}, "
          f"forward calls={trace.forward_calls}")
    return EXIT_OK if trace.converged else EXIT_NOCONV


def cmd_bench(args) -> int:
    _apply_config(args, BENCH_KEYS)
    methods = args.methods if isinstance(args.methods, list) else [m for m in args.methods.split(",") if m]
    problems = args.problems
    if isinstance(problems, str):
        problems = "all" if problems == "all" else [p for p in problems.split(",") if p]
    try:
        report = bench.run_matrix(methods, problems, divergence_demo=bool(args.divergence_demo),
                                  tol=float(args.tol), max_iter=int(args.max_iter),
                                  workers=int(args.workers), epsilon=args.epsilon,
                                  zeta=args.zeta, xi=args.xi)
    except bench.UsageError as exc:
        raise _Usage(str(exc)) from None
    if args.out:
        bench.emit_report(report, args.out, timing=bool(args.timing))
    if args.trace_dir:
        outdir = Path(args.trace_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        for c in report.cells:
            if c.trace is not None:
                bench.emit_trace_csv(c.trace, outdir / f"{c.problem}__{c.method}.csv")
    sys.stdout.write(bench.report_table(report, timing=True))
    failed = [c for c in report.cells
              if c.status != "skipped" and not c.note and not c.converged]
    return EXIT_NOCONV if failed else EXIT_OK


def cmd_validate(args) -> int:
    _apply_config(args, VALIDATE_KEYS)
    targets = P.names() if args.problem == "all" else [args.problem]
    all_ok = True
    for name in targets:
        built = _load_problem(name)
        for check, ok, worst in bench.validate_problem(built, n_pairs=int(args.pairs), seed=int(args.seed)):
            all_ok &= ok
            print(f"{'PASS' if ok else 'FAIL'}  {built.spec.name:12s} {check:40s} worst={worst:.3e}")
    return EXIT_OK if all_ok else EXIT_NOCONV


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": cmd_run, "bench": cmd_bench, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except _Usage as exc:
        print(f"monosplit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (P.ProblemSpecError, alg.InvalidConstantError, ValueError) as exc:
        print(f"monosplit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"monosplit: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
