"""Forward-backward type splitting schemes for ``0 in Ax + Bx (+ Cx)``.

Five methods are provided, each as a single-step function acting on an
:class:`IterateState` and driven by :func:`run`:

``fbs``
    forward-backward, ``x+ = J(x - g C x)``; needs a cocoercive operator.
``fbfs``
    forward-backward-forward; two forward calls per step.
``frbs``
    forward-reflected-backward, ``x+ = J(x - 2g B x + g B x_prev)``.
``rfbs``
    reflected forward-backward, ``x+ = J(x - g B(2x - x_prev))``.
``srfb``
    semi-reflected three-operator variant, ``x+ = J(x - g B(2x - x_prev) - g C x)``.

Stepsize validators return the admissible interval for each method, and the
``lyapunov_*`` functions evaluate the energies that the convergence analysis
shows to be nonincreasing along the iterates. They are used as executable
correctness checks.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import inner, norm
from .operators import ForwardOp, ResolventOp, sum_forward, zero_forward

METHODS = ("fbs", "fbfs", "frbs", "rfbs", "srfb")
REGIMES = ("fbs", "fbfs", "frbs", "rfbs_lipschitz", "rfbs_cocoercive", "srfb")
SQRT2 = math.sqrt(2.0)
# traces measure the residual at a fixed scale so methods with different
# stepsizes stay comparable
RESIDUAL_GAMMA = 1.0


class InvalidConstantError(ValueError):
    """A Lipschitz/cocoercivity constant or stepsize parameter is out of range."""


class StepsizeError(ValueError):
    """The requested stepsize lies outside the method's admissible interval."""


class IncompatibleOperatorError(ValueError):
    """The operators do not satisfy a method's structural requirement."""


class DivergenceError(RuntimeError):
    """An iterate became non-finite. ``trace`` holds everything recorded so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------------------
# stepsizes


@dataclass(frozen=True)
class StepsizeBound:
    sup: float
    inclusive: bool
    regime: str

    def __post_init__(self):
        if not self.sup > 0:
            raise InvalidConstantError(f"stepsize bound must be positive, got {self.sup}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    def admits(self, gamma: float) -> bool:
        if not gamma > 0:
            return False
        return gamma <= self.sup if self.inclusive else gamma < self.sup


def _positive(name, value):
    if not value > 0:
        raise InvalidConstantError(f"{name} must be > 0, got {value}")


def stepsize_fbs(beta: float) -> StepsizeBound:
    """Classical forward-backward range ``]0, 2 beta[``."""
    _positive("beta", beta)
    return StepsizeBound(2.0 * beta, False, "fbs")


def stepsize_fbfs(mu: float) -> StepsizeBound:
    _positive("mu", mu)
    return StepsizeBound(1.0 / mu, False, "fbfs")


def stepsize_frbs(mu: float) -> StepsizeBound:
    _positive("mu", mu)
    return StepsizeBound(1.0 / (2.0 * mu), False, "frbs")


def stepsize_rfbs_lipschitz(mu: float) -> StepsizeBound:
    _positive("mu", mu)
    return StepsizeBound((SQRT2 - 1.0) / mu, False, "rfbs_lipschitz")


def stepsize_rfbs_cocoercive(beta: float, epsilon: float = 0.01) -> StepsizeBound:
    """``]0, beta (1 - epsilon) / 2]`` for a ``beta``-cocoercive operator.

    The closed right end is deliberate. Letting ``epsilon -> 0`` recovers the
    open range ``]0, beta / 2[``, but only as a union over epsilon.
    """
    _positive("beta", beta)
    if not 0 < epsilon < 1:
        raise InvalidConstantError(f"epsilon must lie in ]0,1[, got {epsilon}")
    return StepsizeBound(beta * (1.0 - epsilon) / 2.0, True, "rfbs_cocoercive")


def _srfb_sup(mu, beta, zeta, xi):
    def ratio(num, den):
        return math.inf if den == 0 else num / den

    return min(
        ratio(1.0 - zeta, mu),
        4.0 * beta * zeta / (1.0 + xi),
        ratio(SQRT2 - 1.0, mu),
        (1.0 - 2.0 * zeta) / (mu * (SQRT2 + 1.0) + 2.0 / (beta * xi)),
    )


def stepsize_srfb(mu: float, beta: float, zeta: float = 0.25, xi: float = 1.0) -> StepsizeBound:
    """Minimum of the four sufficient conditions for the three-operator method.

    ``beta = math.inf`` stands for ``C = 0``.
    """
    _positive("mu", mu)
    _positive("beta", beta)
    if not 0 < zeta < 0.5:
        raise InvalidConstantError(f"zeta must lie in ]0,1/2[, got {zeta}")
    if not (xi > 0 and math.isfinite(xi)):
        raise InvalidConstantError(f"xi must be a positive real, got {xi}")
    return StepsizeBound(_srfb_sup(mu, beta, zeta, xi), False, "srfb")


# ---------------------------------------------------------------------------
# single steps


@dataclass(frozen=True)
class IterateState:
    """Two-point memory ``(x_n, x_{n-1})`` plus method-specific ``aux``.

    For FRBS ``aux`` holds ``B x_{n-1}``; the other methods leave it unset.
    """

    x_cur: np.ndarray
    x_prev: np.ndarray
    aux: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.shape(self.x_cur) != np.shape(self.x_prev):
            raise ValueError("x_cur and x_prev must share a dimension")

    @classmethod
    def start(cls, x0, x_minus1=None) -> "IterateState":
        x0 = np.array(x0, dtype=np.float64).reshape(-1)
        xm = x0.copy() if x_minus1 is None else np.array(x_minus1, dtype=np.float64).reshape(-1)
        return cls(x0, xm)


def _advance(state, x_next, aux=None):
    return IterateState(x_next, state.x_cur, aux)


def step_fbs(state: IterateState, A: ResolventOp, C: ForwardOp, gamma: float) -> IterateState:
    x = state.x_cur
    return _advance(state, A.resolve(gamma, x - gamma * C.apply(x)))


def step_fbfs(state: IterateState, A: ResolventOp, B: ForwardOp, gamma: float) -> IterateState:
    x = state.x_cur
    y = x - gamma * B.apply(x)
    z = A.resolve(gamma, y)
    r = z - gamma * B.apply(z)
    return _advance(state, x + r - y)


def step_frbs(state: IterateState, A: ResolventOp, B: ForwardOp, gamma: float) -> IterateState:
    """One FRBS step; ``state.aux`` must hold ``B x_prev`` (``B x_0`` initially)."""
    if state.aux is None:
        raise ValueError("FRBS state needs aux = B(x_prev); use init_frbs")
    x = state.x_cur
    bx = B.apply(x)
    return _advance(state, A.resolve(gamma, x - 2.0 * gamma * bx + gamma * state.aux), bx)


def init_frbs(state: IterateState, B: ForwardOp) -> IterateState:
    """Attach ``aux = B x_{-1}``; with the default ``x_{-1} = x_0`` this is ``B x_0``."""
    return dataclasses.replace(state, aux=B.apply(state.x_prev))


def _reflected_step(state, A, B, gamma):
    x = state.x_cur
    y = 2.0 * x - state.x_prev
    by = B.apply(y)
    return x - gamma * by, y, by


def step_rfbs(state: IterateState, A: ResolventOp, B: ForwardOp, gamma: float) -> IterateState:
    arg, _, _ = _reflected_step(state, A, B, gamma)
    return _advance(state, A.resolve(gamma, arg))


def step_srfb(state: IterateState, A: ResolventOp, B: ForwardOp, C: ForwardOp,
              gamma: float) -> IterateState:
    arg, _, _ = _reflected_step(state, A, B, gamma)
    return _advance(state, A.resolve(gamma, arg - gamma * C.apply(state.x_cur)))


# ---------------------------------------------------------------------------
# diagnostics


def natural_residual(x, A: ResolventOp, B: Optional[ForwardOp], C: Optional[ForwardOp] = None,
                     gamma: float = 1.0) -> float:
    """``||x - J_{gamma A}(x - gamma B x - gamma C x)||``; zero exactly at solutions."""
    x = np.asarray(x, dtype=np.float64)
    arg = x
    if B is not None:
        arg = arg - gamma * B.apply(x)
    if C is not None:
        arg = arg - gamma * C.apply(x)
    return norm(x - A.resolve(gamma, arg))


def lyapunov_E(x_n, x_prev, y_prevref, B: ForwardOp, gamma: float, x_star, *,
               By_prev=None) -> float:
    """Energy of the Lipschitz-regime analysis of the reflected method.

    With ``p_n = x_{n-1} - g B y_{n-1} - x_n``::

        E_n = |x_n - x*|^2 + |x_{n-1} - x_n|^2 + |p_n + g B x*|^2
              + mu g |x_n - y_{n-1}|^2 - g^2 |B y_{n-1} - B x*|^2

    ``y_prevref`` is the reflected point ``y_{n-1}`` used to produce ``x_n``.
    """
    x_n, x_prev, y_prev, x_star = (np.asarray(v, dtype=np.float64)
                                  for v in (x_n, x_prev, y_prevref, x_star))
    _same_dims(x_n, x_prev, y_prev, x_star)
    by = B.apply(y_prev) if By_prev is None else By_prev
    bxs = B.apply(x_star)
    p = x_prev - gamma * by - x_n
    return (_sq(x_n - x_star) + _sq(x_prev - x_n) + _sq(p + gamma * bxs)
            + B.lipschitz_mu * gamma * _sq(x_n - y_prev) - gamma ** 2 * _sq(by - bxs))


def lyapunov_cocoercive(x_n, x_prev, y_prevref, B: ForwardOp, gamma: float, x_star,
                        epsilon: float, *, By_prev=None) -> float:
    """Decreasing quantity of the cocoercive regime (stepsize ``<= beta(1-eps)/2``)::

        |x_n - x*|^2 + |p_n + g B x*|^2 + g^2 (1+eps)/(1-eps) |B y_{n-1} - B x*|^2
    """
    x_n, x_prev, y_prev, x_star = (np.asarray(v, dtype=np.float64)
                                  for v in (x_n, x_prev, y_prevref, x_star))
    _same_dims(x_n, x_prev, y_prev, x_star)
    by = B.apply(y_prev) if By_prev is None else By_prev
    bxs = B.apply(x_star)
    p = x_prev - gamma * by - x_n
    weight = gamma ** 2 * (1.0 + epsilon) / (1.0 - epsilon)
    return _sq(x_n - x_star) + _sq(p + gamma * bxs) + weight * _sq(by - bxs)


def lyapunov_alpha(x_n, x_prev, y_prevref, B: ForwardOp, gamma: float, zeta: float, x_star, *,
                   By_prev=None) -> float:
    """Energy of the three-operator analysis::

        alpha_n = |x_n - x*|^2 + t_n + g mu |x_n - y_{n-1}|^2
        t_n     = 2 (1 - zeta) |x_{n-1} - x_n|^2 + 2 g <B y_{n-1} - B x*, x_n - x_{n-1}>

    ``x_star`` must be a zero of ``A + B + C``; only ``B`` enters the formula.
    """
    x_n, x_prev, y_prev, x_star = (np.asarray(v, dtype=np.float64)
                                  for v in (x_n, x_prev, y_prevref, x_star))
    _same_dims(x_n, x_prev, y_prev, x_star)
    by = B.apply(y_prev) if By_prev is None else By_prev
    t = 2.0 * (1.0 - zeta) * _sq(x_prev - x_n) + 2.0 * gamma * inner(by - B.apply(x_star), x_n - x_prev)
    return _sq(x_n - x_star) + t + gamma * B.lipschitz_mu * _sq(x_n - y_prev)


def _sq(v):
    return inner(v, v)


def _same_dims(*vs):
    if len({v.shape for v in vs}) != 1:
        raise ValueError("dimension mismatch among iterates and solution")


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class Operators:
    """The operators of ``0 in Ax + Bx + Cx``; ``B`` or ``C`` may be absent."""

    A: ResolventOp
    B: Optional[ForwardOp] = None
    C: Optional[ForwardOp] = None

    @property
    def dim(self) -> int:
        return self.A.domain_dim


@dataclass(frozen=True)
class RunConfig:
    """Parameters of a run.

    ``record_lyapunov`` is a known solution; when given, the reflected methods
    record their energies against it. ``epsilon`` parameterizes the cocoercive
    RFBS stepsize range, ``zeta`` and ``xi`` the SRFB one.
    """

    gamma: float
    max_iter: int = 100_000
    tol: float = 1e-8
    stop_rule: str = "natural_residual"
    record_lyapunov: Optional[np.ndarray] = None
    unsafe_gamma: bool = False
    keep_iterates: bool = False
    epsilon: float = 0.01
    zeta: float = 0.25
    xi: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidConstantError("gamma must be > 0")
        if not self.tol > 0:
            raise InvalidConstantError("tol must be > 0")
        if self.max_iter < 1:
            raise InvalidConstantError("max_iter must be >= 1")
        if self.stop_rule not in ("natural_residual", "step_norm"):
            raise ValueError(f"unknown stop rule {self.stop_rule!r}")


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    step_norm: float
    natural_residual: float
    lyapunov_E: Optional[float] = None
    lyapunov_alpha: Optional[float] = None


@dataclass
class ConvergenceTrace:
    method: str
    gamma: float
    records: list = field(default_factory=list)
    final_x: Optional[np.ndarray] = None
    converged: bool = False
    forward_calls: dict = field(default_factory=dict)
    iterates: Optional[list] = None

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]


class _Counter:
    def __init__(self, op: ForwardOp):
        self.op = op
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.op.apply(x)


def counted(op: ForwardOp):
    """Copy of op whose evaluations are tallied in the returned counter."""
    counter = _Counter(op)
    return dataclasses.replace(op, apply=counter), counter


def _combine(*ops):
    ops = [op for op in ops if op is not None]
    if not ops:
        return None
    return ops[0] if len(ops) == 1 else sum_forward(*ops)


def method_operators(method: str, ops: Operators):
    """The ``(B, C)`` slots a method consumes, built from the problem's operators.

    Two-operator methods take the sum of whatever forward operators are given.
    FBS puts it in the ``C`` slot. SRFB substitutes the zero map for an absent
    slot.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method == "srfb":
        return (ops.B or zero_forward(ops.dim)), (ops.C or zero_forward(ops.dim))
    fwd = _combine(ops.B, ops.C)
    if fwd is None:
        raise IncompatibleOperatorError(f"{method} needs a forward operator")
    return (None, fwd) if method == "fbs" else (fwd, None)


def stepsize_bound(method: str, ops: Operators, *, epsilon=0.01, zeta=0.25, xi=1.0) -> StepsizeBound:
    """Admissible stepsize interval of ``method`` for the given operators.

    For RFBS with a cocoercive operator, the wider of the two available ranges
    is returned.
    """
    B, C = method_operators(method, ops)
    if method == "fbs":
        if not C.is_cocoercive:
            raise IncompatibleOperatorError("fbs needs a cocoercive forward operator")
        return stepsize_fbs(C.cocoercive_beta)
    if method == "srfb":
        beta = C.cocoercive_beta
        if beta is None:
            raise IncompatibleOperatorError("srfb needs a cocoercive C")
        if B.lipschitz_mu > 0:
            return stepsize_srfb(B.lipschitz_mu, beta, zeta, xi)
        stepsize_srfb(1.0, beta, zeta, xi)  # validates zeta, xi
        return StepsizeBound(_srfb_sup(0.0, beta, zeta, xi), False, "srfb")
    mu = B.lipschitz_mu
    if method == "fbfs":
        return stepsize_fbfs(mu)
    if method == "frbs":
        return stepsize_frbs(mu)
    lip = stepsize_rfbs_lipschitz(mu) if mu > 0 else None
    coco = (stepsize_rfbs_cocoercive(B.cocoercive_beta, epsilon)
            if B.is_cocoercive and math.isfinite(B.cocoercive_beta) else None)
    candidates = [b for b in (lip, coco) if b is not None]
    if not candidates:
        raise InvalidConstantError("rfbs needs a positive Lipschitz constant")
    return max(candidates, key=lambda b: b.sup)


def run(method: str, ops: Operators, init, config: RunConfig) -> ConvergenceTrace:
    """Iterate ``method`` from ``init = x0`` or ``(x0, x_minus1)`` until the stop rule fires.

    Raises :class:`StepsizeError` if ``config.gamma`` is outside the method's
    range and ``config.unsafe_gamma`` is not set, and :class:`DivergenceError`
    (carrying the partial trace) if an iterate becomes non-finite.
    """
    B, C = method_operators(method, ops)
    gamma = config.gamma
    if not config.unsafe_gamma:
        bound = stepsize_bound(method, ops, epsilon=config.epsilon, zeta=config.zeta, xi=config.xi)
        if not bound.admits(gamma):
            bracket = "]" if bound.inclusive else "["
            raise StepsizeError(
                f"gamma={gamma:g} outside ]0, {bound.sup:.12g}{bracket} ({bound.regime}); "
                "set unsafe_gamma to override")

    state = _initial_state(init)
    A = ops.A
    if state.x_cur.size != A.domain_dim:
        raise ValueError(f"initial point has dimension {state.x_cur.size}, expected {A.domain_dim}")

    counters = {}
    Bc = Cc = None
    if B is not None:
        Bc, counters["B"] = counted(B)
    if C is not None:
        Cc, counters["C"] = counted(C)

    x_star = None if config.record_lyapunov is None else np.asarray(config.record_lyapunov, float)
    trace = ConvergenceTrace(method, gamma, iterates=[] if config.keep_iterates else None)
    if config.keep_iterates:
        trace.iterates.extend([state.x_prev.copy(), state.x_cur.copy()])

    if method == "frbs":
        state = init_frbs(state, Bc)

    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, config.max_iter + 1):
            y = 2.0 * state.x_cur - state.x_prev if method in ("rfbs", "srfb") else None
            if method == "fbs":
                new = step_fbs(state, A, Cc, gamma)
            elif method == "fbfs":
                new = step_fbfs(state, A, Bc, gamma)
            elif method == "frbs":
                new = step_frbs(state, A, Bc, gamma)
            elif method == "rfbs":
                new = step_rfbs(state, A, Bc, gamma)
            else:
                new = step_srfb(state, A, Bc, Cc, gamma)
            x = new.x_cur
            if not np.all(np.isfinite(x)):
                trace.final_x = state.x_cur
                _finish(trace, counters)
                raise DivergenceError(f"{method}: non-finite iterate at iteration {k}", trace)

            step = norm(x - state.x_cur)
            res = natural_residual(x, A, B, C, RESIDUAL_GAMMA)
            e_val = a_val = None
            if x_star is not None and y is not None:
                if method == "rfbs":
                    e_val = lyapunov_E(x, state.x_cur, y, B, gamma, x_star)
                else:
                    a_val = lyapunov_alpha(x, state.x_cur, y, B, gamma, config.zeta, x_star)
            trace.records.append(TraceRecord(k, step, res, e_val, a_val))
            if config.keep_iterates:
                trace.iterates.append(x.copy())
            state = new
            metric = res if config.stop_rule == "natural_residual" else step
            if not math.isfinite(res) or not math.isfinite(step):
                trace.final_x = x
                _finish(trace, counters)
                raise DivergenceError(f"{method}: residual overflow at iteration {k}", trace)
            if metric < config.tol:
                trace.converged = True
                break

    trace.final_x = state.x_cur
    _finish(trace, counters)
    return trace


def _finish(trace, counters):
    trace.forward_calls = {k: c.calls for k, c in counters.items()}


def _initial_state(init) -> IterateState:
    if isinstance(init, IterateState):
        return IterateState(np.asarray(init.x_cur, float), np.asarray(init.x_prev, float))
    if isinstance(init, tuple) and len(init) == 2:
        return IterateState.start(init[0], init[1])
    return IterateState.start(init)
