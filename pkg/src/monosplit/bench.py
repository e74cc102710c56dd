"""Method-by-problem benchmark runs and their CSV/text output."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import algorithms as alg
from . import composite as comp
from . import problems as P

TRACE_HEADER = ("iter", "step_norm", "natural_residual", "lyapunov_E", "lyapunov_alpha")
GAMMA_FACTOR = 0.9


class UsageError(ValueError):
    """Bad method/problem names or arguments (CLI exit code 2)."""


def fmt(value) -> str:
    """Shortest round-trip decimal; independent of locale."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def auto_gamma(method: str, built: P.BuiltProblem, *, epsilon=0.01, zeta=0.25, xi=1.0,
               divergence_demo=False) -> float:
    """``GAMMA_FACTOR`` times the method's admissible supremum.

    In divergence-demo mode an incompatible FBS cell borrows the reflected
    method's Lipschitz bound, so the two can be compared at the same stepsize.
    """
    try:
        bound = alg.stepsize_bound(method, built.ops, epsilon=epsilon, zeta=zeta, xi=xi)
    except alg.IncompatibleOperatorError:
        if not divergence_demo:
            raise
        _, fwd = alg.method_operators(method, built.ops)
        bound = alg.stepsize_rfbs_lipschitz(fwd.lipschitz_mu)
    return GAMMA_FACTOR * bound.sup


def compatible(method: str, built: P.BuiltProblem) -> bool:
    try:
        alg.stepsize_bound(method, built.ops)
    except alg.IncompatibleOperatorError:
        return False
    return True


def run_problem(method: str, built: P.BuiltProblem, config: alg.RunConfig,
                init=None) -> alg.ConvergenceTrace:
    """Run one method on one built problem.

    RFBS on a composite problem goes through the explicit primal-dual
    iteration, which is the same scheme written blockwise.
    """
    x0 = built.initial_point() if init is None else init
    if built.composite is not None and method == "rfbs":
        problem = built.composite
        n = problem.primal_dim
        z0 = np.asarray(x0, dtype=np.float64)
        v0 = _split(z0[n:], problem.dual_dims)
        state = comp.PrimalDualState.start(problem, z0[:n], v0)
        return comp.solve_composite(problem, state, config).trace
    return alg.run(method, built.ops, x0, config)


def _split(flat, dims):
    cuts = np.cumsum(dims)[:-1]
    return tuple(np.split(np.asarray(flat, dtype=np.float64), cuts))


@dataclass
class Cell:
    method: str
    problem: str
    status: str  # run | skipped | diverged
    gamma: Optional[float] = None
    iterations: int = 0
    final_residual: Optional[float] = None
    converged: bool = False
    wall_time: float = 0.0
    forward_calls: dict = field(default_factory=dict)
    solution_error: Optional[float] = None
    trace: Optional[alg.ConvergenceTrace] = None
    note: str = ""


@dataclass
class BenchmarkReport:
    cells: list
    seed: int = P.LASSO_SEED
    tol: float = 1e-8
    max_iter: int = 100_000

    def cell(self, method, problem) -> Cell:
        for c in self.cells:
            if c.method == method and c.problem == problem:
                return c
        raise KeyError((method, problem))


def _resolve_names(methods, problems):
    methods = list(methods)
    if not methods:
        raise UsageError("no methods given")
    bad = [m for m in methods if m not in alg.METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(alg.METHODS)}")
    specs = {s.name: s for s in P.registry()}
    if problems in ("all", ["all"]):
        problems = list(specs)
    problems = list(problems)
    if not problems:
        raise UsageError("no problems given")
    bad = [p for p in problems if p not in specs]
    if bad:
        raise UsageError(f"unknown problems {bad}; choose from {', '.join(specs)}")
    return methods, [specs[p] for p in problems]


def run_cell(method: str, built: P.BuiltProblem, *, tol=1e-8, max_iter=100_000,
             divergence_demo=False, gamma=None, epsilon=0.01, zeta=0.25, xi=1.0) -> Cell:
    name = built.spec.name
    ok = compatible(method, built)
    if not ok and not divergence_demo:
        return Cell(method, name, "skipped", note="incompatible operators")
    if gamma is None:
        gamma = auto_gamma(method, built, epsilon=epsilon, zeta=zeta, xi=xi,
                           divergence_demo=divergence_demo)
    config = alg.RunConfig(gamma=gamma, max_iter=max_iter, tol=tol, unsafe_gamma=not ok,
                           record_lyapunov=built.known_solution, epsilon=epsilon, zeta=zeta, xi=xi)
    start = time.perf_counter()
    try:
        trace = run_problem(method, built, config)
        status = "run"
    except alg.DivergenceError as exc:
        trace = exc.trace
        status = "diverged"
    elapsed = time.perf_counter() - start
    cell = Cell(method, name, status, gamma, len(trace),
                trace.records[-1].natural_residual if trace.records else None,
                trace.converged, elapsed, dict(trace.forward_calls), trace=trace)
    ks = built.known_solution
    if ks is not None and trace.final_x is not None and np.all(np.isfinite(trace.final_x)):
        cell.solution_error = float(np.linalg.norm(trace.final_x - ks))
    if not ok:
        cell.note = "outside theory (divergence demo)"
    return cell


def run_matrix(methods: Sequence[str], problems, *, divergence_demo=False, tol=1e-8,
               max_iter=100_000, workers: int = 1, epsilon=0.01, zeta=0.25, xi=1.0) -> BenchmarkReport:
    """Run every (method, problem) pair; cells come back in request order.

    ``problems`` is a list of registry names or ``"all"``.
    """
    methods, specs = _resolve_names(methods, problems)
    built = {s.name: P.build(s) for s in specs}
    jobs = [(m, built[s.name]) for s in specs for m in methods]

    def work(job):
        m, b = job
        return run_cell(m, b, tol=tol, max_iter=max_iter, divergence_demo=divergence_demo,
                        epsilon=epsilon, zeta=zeta, xi=xi)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(work, jobs))
    else:
        cells = [work(j) for j in jobs]
    return BenchmarkReport(cells, tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# output


def trace_rows(trace: alg.ConvergenceTrace):
    for r in trace.records:
        yield (fmt(r.iter), fmt(r.step_norm), fmt(r.natural_residual),
               fmt(r.lyapunov_E), fmt(r.lyapunov_alpha))


def trace_csv_text(trace: alg.ConvergenceTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    w.writerows(trace_rows(trace))
    return buf.getvalue()


def emit_trace_csv(trace: alg.ConvergenceTrace, path) -> None:
    Path(path).write_text(trace_csv_text(trace), encoding="utf-8")


REPORT_HEADER = ("problem", "method", "status", "converged", "iterations", "final_residual",
                 "gamma", "b_calls", "c_calls", "solution_error", "seed")


def _report_row(cell: Cell, seed: int, timing: bool):
    row = [cell.problem, cell.method, cell.status, fmt(cell.converged), fmt(cell.iterations),
           fmt(cell.final_residual), fmt(cell.gamma), fmt(cell.forward_calls.get("B")),
           fmt(cell.forward_calls.get("C")), fmt(cell.solution_error), fmt(seed)]
    if timing:
        row.append(f"{cell.wall_time:.6f}")
    return row


def report_csv_text(report: BenchmarkReport, timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER + (("wall_time",) if timing else ()))
    for c in report.cells:
        w.writerow(_report_row(c, report.seed, timing))
    return buf.getvalue()


def report_table(report: BenchmarkReport, timing: bool = False) -> str:
    """Aligned plain-text table of the report."""
    header = ["problem", "method", "status", "conv", "iters", "residual", "gamma",
              "B", "C", "err"] + (["time[s]"] if timing else [])
    rows = []
    for c in report.cells:
        row = [c.problem, c.method, c.status, "yes" if c.converged else "no", str(c.iterations),
               _short(c.final_residual), _short(c.gamma),
               str(c.forward_calls.get("B", "")), str(c.forward_calls.get("C", "")),
               _short(c.solution_error)]
        if timing:
            row.append(f"{c.wall_time:.3f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    lines.append(f"tol={fmt(report.tol)} max_iter={report.max_iter} seed={report.seed}")
    return "\n".join(lines) + "\n"


def _short(v):
    if v is None:
        return ""
    if not math.isfinite(v):
        return str(v)
    return f"{v:.3e}"


def emit_report(report: BenchmarkReport, path, timing: bool = False) -> Path:
    """Write the CSV to ``path`` and the aligned table next to it (``.txt``)."""
    path = Path(path)
    path.write_text(report_csv_text(report, timing), encoding="utf-8")
    table = path.with_suffix(".txt")
    if table == path:
        table = path.with_name(path.stem + ".table.txt")
    table.write_text(report_table(report, timing), encoding="utf-8")
    return table


# ---------------------------------------------------------------------------
# operator invariant suites


def validate_problem(built: P.BuiltProblem, n_pairs: int = 100, seed: int = 0) -> list:
    """Sampled property checks for every operator of a problem.

    Returns ``(check name, passed, worst violation)`` triples; a violation
    <= 0 means the property held on every sample.
    """
    from . import operators as ops

    results = []

    def add(name, rep):
        for prop, worst in sorted(rep.violations.items()):
            results.append((f"{name}:{prop}", worst <= 0, worst))

    o = built.ops
    add("A", ops.check_resolvent(o.A, n_pairs=n_pairs, seed=seed))
    for label, op in (("B", o.B), ("C", o.C)):
        if op is not None:
            add(label, ops.check_forward(op, n_pairs=n_pairs, seed=seed))
    problem = built.composite
    if problem is not None:
        add("A0", ops.check_resolvent(problem.A, n_pairs=n_pairs, seed=seed))
        add("B0", ops.check_forward(problem.B, n_pairs=n_pairs, seed=seed))
        for i, blk in enumerate(problem.blocks, 1):
            add(f"A{i}", ops.check_resolvent(blk.A, n_pairs=n_pairs, seed=seed))
            add(f"Binv{i}", ops.check_forward(blk.Binv, n_pairs=n_pairs, seed=seed))
            add(f"L{i}", ops.check_linear_map(blk.L, n_pairs=n_pairs, seed=seed))
    ks = built.known_solution
    if ks is not None:
        gamma = auto_gamma("fbfs", built) if o.B is not None else 1.0
        res = alg.natural_residual(ks, o.A, o.B, o.C, gamma)
        results.append(("known_solution:natural_residual", res <= 1e-10, res - 1e-10))
    return results
