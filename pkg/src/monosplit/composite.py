"""Primal-dual solver for composite inclusions with parallel sums.

The problem is to find ``x`` with::

    0 in A x + sum_i L_i^T (A_i [] B_i) L_i x + B x

together with dual variables ``v_i``. The point ``(x, v_1, ..., v_m)`` is a
zero of ``AA + BB`` on the direct sum ``H + G_1 + ... + G_m``, where::

    AA(x, v) = A x  x  A_1^{-1} v_1  x ... x  A_m^{-1} v_m
    BB(x, v) = (B x + sum_i L_i^T v_i,  -L_1 x + B_1^{-1} v_1, ...)

:func:`step_pridu` is the explicit blockwise form of the reflected method on
that space. :func:`product_operators` builds ``AA`` and ``BB`` so that the
generic :func:`monosplit.algorithms.run` can be used as a cross-check. The
parallel sums themselves are never formed.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import algorithms as alg
from .linalg import BlockVector, norm
from .operators import (ForwardOp, InvalidOperatorError, LinearMap, ResolventOp,
                        moreau_inverse_resolvent, power_method_norm)


class InvalidProblemError(ValueError):
    pass


@dataclass(frozen=True)
class DualBlock:
    """One term ``L_i^T (A_i [] B_i) L_i``.

    ``A`` is the resolvent of ``A_i``; ``Binv`` is the single-valued,
    Lipschitz operator ``B_i^{-1}``. Supplying ``A_inv`` (the resolvent of
    ``A_i^{-1}``) bypasses the Moreau identity.
    """

    A: ResolventOp
    Binv: ForwardOp
    L: LinearMap
    A_inv: Optional[ResolventOp] = None

    def dual_resolve(self, gamma, v):
        if self.A_inv is not None:
            return self.A_inv.resolve(gamma, v)
        return moreau_inverse_resolvent(self.A, gamma, v)


@dataclass(frozen=True)
class CompositeProblem:
    A: ResolventOp
    B: ForwardOp
    blocks: tuple
    norm_iters: int = 10000
    norm_tol: float = 1e-8
    L_norms: tuple = field(init=False, repr=False)

    def __post_init__(self):
        blocks = tuple(self.blocks)
        object.__setattr__(self, "blocks", blocks)
        if not blocks:
            raise InvalidProblemError("a composite problem needs at least one dual block")
        n = self.A.domain_dim
        if self.B.domain_dim != n:
            raise InvalidProblemError("B does not act on the primal space")
        for i, blk in enumerate(blocks, 1):
            rows, cols = blk.L.shape
            if cols != n:
                raise InvalidProblemError(f"L_{i} has {cols} columns, primal dimension is {n}")
            if blk.A.domain_dim != rows or blk.Binv.domain_dim != rows:
                raise InvalidProblemError(f"block {i} operators do not act on R^{rows}")
            if not blk.Binv.lipschitz_mu > 0:
                raise InvalidOperatorError(f"B_{i}^-1 needs a Lipschitz constant > 0")
        if not self.B.lipschitz_mu > 0:
            raise InvalidOperatorError("B needs a Lipschitz constant > 0")
        norms = tuple(power_method_norm(b.L, self.norm_iters, self.norm_tol) for b in blocks)
        if sum(s * s for s in norms) == 0:
            raise InvalidProblemError("at least one L_i must be nonzero")
        object.__setattr__(self, "L_norms", norms)

    @property
    def primal_dim(self) -> int:
        return self.A.domain_dim

    @property
    def dual_dims(self) -> tuple:
        return tuple(b.L.shape[0] for b in self.blocks)

    @property
    def block_dims(self) -> tuple:
        return (self.primal_dim,) + self.dual_dims


def aggregate_mu(problem: CompositeProblem) -> float:
    """``max(mu_0, ..., mu_m) + sqrt(sum_i ||L_i||^2)``."""
    mus = [problem.B.lipschitz_mu] + [b.Binv.lipschitz_mu for b in problem.blocks]
    return max(mus) + math.sqrt(sum(s * s for s in problem.L_norms))


def _cuts(problem):
    return np.cumsum(problem.block_dims)[:-1]


def build_product_forward(problem: CompositeProblem) -> ForwardOp:
    """``BB`` acting on flat vectors of the product space."""
    cuts = _cuts(problem)
    blocks = problem.blocks

    def apply(z):
        x, *vs = np.split(np.asarray(z, dtype=np.float64), cuts)
        top = problem.B.apply(x)
        for blk, v in zip(blocks, vs):
            top = top + blk.L.adjoint(v)
        rest = [-blk.L(x) + blk.Binv.apply(v) for blk, v in zip(blocks, vs)]
        return np.concatenate([top] + rest)

    return ForwardOp(apply, aggregate_mu(problem), sum(problem.block_dims), None, "product-B")


def build_product_resolvent(problem: CompositeProblem) -> ResolventOp:
    """``J_{gamma AA}``: the primal resolvent and the dual ones blockwise."""
    cuts = _cuts(problem)

    def resolve(gamma, z):
        x, *vs = np.split(np.asarray(z, dtype=np.float64), cuts)
        parts = [problem.A.resolve(gamma, x)]
        parts += [blk.dual_resolve(gamma, v) for blk, v in zip(problem.blocks, vs)]
        return np.concatenate(parts)

    return ResolventOp(resolve, sum(problem.block_dims), "product-A")


def product_operators(problem: CompositeProblem) -> alg.Operators:
    return alg.Operators(build_product_resolvent(problem), build_product_forward(problem))


def pridu_stepsize_bound(problem: CompositeProblem) -> alg.StepsizeBound:
    return alg.stepsize_rfbs_lipschitz(aggregate_mu(problem))


def default_gamma(problem: CompositeProblem, safety: float = 0.99) -> float:
    """Largest admissible stepsize shrunk by ``safety``; the norms are estimates."""
    return safety * pridu_stepsize_bound(problem).sup


@dataclass(frozen=True)
class PrimalDualState:
    x_cur: np.ndarray
    x_prev: np.ndarray
    v_cur: tuple
    v_prev: tuple

    @classmethod
    def start(cls, problem: CompositeProblem, x0=None, v0=None, x_minus1=None, v_minus1=None):
        x0 = np.zeros(problem.primal_dim) if x0 is None else np.array(x0, dtype=np.float64)
        v0 = (tuple(np.zeros(d) for d in problem.dual_dims) if v0 is None
              else tuple(np.array(v, dtype=np.float64) for v in v0))
        xm = x0.copy() if x_minus1 is None else np.array(x_minus1, dtype=np.float64)
        vm = (tuple(v.copy() for v in v0) if v_minus1 is None
              else tuple(np.array(v, dtype=np.float64) for v in v_minus1))
        state = cls(x0, xm, v0, vm)
        state.check(problem)
        return state

    def check(self, problem: CompositeProblem):
        if self.x_cur.shape != (problem.primal_dim,) or self.x_prev.shape != (problem.primal_dim,):
            raise InvalidProblemError("primal iterate has the wrong dimension")
        for vs in (self.v_cur, self.v_prev):
            if tuple(v.size for v in vs) != problem.dual_dims:
                raise InvalidProblemError("dual iterates do not match the block dimensions")

    def flat(self) -> np.ndarray:
        return np.concatenate((self.x_cur,) + tuple(self.v_cur))

    def flat_prev(self) -> np.ndarray:
        return np.concatenate((self.x_prev,) + tuple(self.v_prev))


def step_pridu(state: PrimalDualState, problem: CompositeProblem, gamma: float) -> PrimalDualState:
    """One primal-dual step; the reflected points are formed once and reused."""
    x, xp = state.x_cur, state.x_prev
    xr = 2.0 * x - xp
    vr = [2.0 * v - vp for v, vp in zip(state.v_cur, state.v_prev)]

    coupling = problem.B.apply(xr)
    for blk, w in zip(problem.blocks, vr):
        coupling = coupling + blk.L.adjoint(w)
    x_next = problem.A.resolve(gamma, x - gamma * coupling)

    v_next = tuple(
        blk.dual_resolve(gamma, v - gamma * (-blk.L(xr) + blk.Binv.apply(w)))
        for blk, v, w in zip(problem.blocks, state.v_cur, vr)
    )
    return PrimalDualState(x_next, x, v_next, state.v_cur)


def product_residual(problem: CompositeProblem, x, vs, gamma: float = 1.0) -> float:
    """Natural residual of ``AA + BB`` at ``(x, v_1, ..., v_m)``."""
    z = np.concatenate([np.asarray(x, dtype=np.float64)] + [np.asarray(v, dtype=np.float64) for v in vs])
    bb = build_product_forward(problem)
    aa = build_product_resolvent(problem)
    return alg.natural_residual(z, aa, bb, None, gamma)


@dataclass
class CompositeResult:
    """Outcome of :func:`solve_composite`.

    ``primal`` and ``dual`` hold the iterates; ``dual[k]`` is the tuple of dual
    blocks. ``trace`` records step norms and product-space residuals.
    """

    trace: alg.ConvergenceTrace
    primal: list
    dual: list
    x: np.ndarray
    v: tuple

    @property
    def converged(self) -> bool:
        return self.trace.converged


def solve_composite(problem: CompositeProblem, init: Optional[PrimalDualState] = None,
                    config: Optional[alg.RunConfig] = None) -> CompositeResult:
    """Iterate :func:`step_pridu` until the product-space residual drops below ``tol``."""
    if config is None:
        config = alg.RunConfig(gamma=default_gamma(problem))
    gamma = config.gamma
    bound = pridu_stepsize_bound(problem)
    if not config.unsafe_gamma and not bound.admits(gamma):
        raise alg.StepsizeError(f"gamma={gamma:g} outside ]0, {bound.sup:.12g}[")
    state = init if init is not None else PrimalDualState.start(problem)
    state.check(problem)

    aa = build_product_resolvent(problem)
    bb = build_product_forward(problem)
    counted_B, counter = alg.counted(problem.B)
    stepping = dataclasses.replace(problem, B=counted_B)
    x_star = config.record_lyapunov
    trace = alg.ConvergenceTrace("pridu", gamma)
    primal, dual = [state.x_cur], [state.v_cur]
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, config.max_iter + 1):
            new = step_pridu(state, stepping, gamma)
            z_new, z_old = new.flat(), state.flat()
            if not np.all(np.isfinite(z_new)):
                trace.final_x = z_old
                trace.forward_calls = {"B": counter.calls}
                raise alg.DivergenceError(f"pridu: non-finite iterate at iteration {k}", trace)
            step = norm(z_new - z_old)
            res = alg.natural_residual(z_new, aa, bb, None, alg.RESIDUAL_GAMMA)
            e_val = None
            if x_star is not None:
                y = 2.0 * z_old - state.flat_prev()
                e_val = alg.lyapunov_E(z_new, z_old, y, bb, gamma, x_star)
            trace.records.append(alg.TraceRecord(k, step, res, e_val))
            primal.append(new.x_cur)
            dual.append(new.v_cur)
            state = new
            if not math.isfinite(res):
                trace.final_x = z_new
                trace.forward_calls = {"B": counter.calls}
                raise alg.DivergenceError(f"pridu: residual overflow at iteration {k}", trace)
            metric = res if config.stop_rule == "natural_residual" else step
            if metric < config.tol:
                trace.converged = True
                break
    trace.final_x = state.flat()
    trace.forward_calls = {"B": counter.calls}
    return CompositeResult(trace, primal, dual, state.x_cur, state.v_cur)


def verify_inclusion(problem: CompositeProblem, x_bar, v_bar: Sequence, tol: float,
                     gamma: float = 1.0) -> bool:
    """Certify ``(x_bar, v_bar)`` as a primal-dual solution.

    A zero of ``AA + BB`` yields a primal solution and a dual solution, so
    it is enough to check the product-space natural residual against ``tol``.
    """
    return product_residual(problem, x_bar, v_bar, gamma) <= tol


def split_blocks(problem: CompositeProblem, z) -> BlockVector:
    return BlockVector.from_flat(z, problem.block_dims)
