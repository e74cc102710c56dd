"""Resolvents, forward operators and linear maps.

A set-valued maximally monotone operator ``A`` is only ever used through its
resolvent ``J_{gamma A} = (Id + gamma A)^{-1}``, so it is represented by that
map alone (:class:`ResolventOp`). Single-valued operators that are evaluated
explicitly carry their Lipschitz constant and, when known, their
cocoercivity constant (:class:`ForwardOp`).

The property checks at the bottom of the module are sampling-based: they can
refute a claimed property but never prove it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .linalg import as_vector, inner, norm


class InvalidOperatorError(ValueError):
    """Operator data violates a structural requirement (symmetry, bounds, ...)."""


class InvalidSetError(InvalidOperatorError):
    """A box with some lower bound above its upper bound."""


@dataclass(frozen=True)
class ResolventOp:
    """Maximally monotone operator given by ``(gamma, x) -> J_{gamma A} x``."""

    resolve: Callable[[float, np.ndarray], np.ndarray]
    domain_dim: int
    label: str = "A"

    def __call__(self, gamma: float, x) -> np.ndarray:
        return self.resolve(gamma, x)


@dataclass(frozen=True)
class ForwardOp:
    """Single-valued monotone operator with a declared Lipschitz constant.

    ``cocoercive_beta`` may be ``math.inf`` for the zero map.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    lipschitz_mu: float
    domain_dim: int
    cocoercive_beta: Optional[float] = None
    label: str = "B"

    def __post_init__(self):
        if not self.lipschitz_mu >= 0:
            raise InvalidOperatorError(f"Lipschitz constant must be >= 0, got {self.lipschitz_mu}")
        if self.cocoercive_beta is not None and not self.cocoercive_beta > 0:
            raise InvalidOperatorError(f"cocoercivity constant must be > 0, got {self.cocoercive_beta}")

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    @property
    def is_cocoercive(self) -> bool:
        return self.cocoercive_beta is not None


@dataclass(frozen=True)
class LinearMap:
    """Dense matrix ``L`` acting from R^cols to R^rows; the adjoint is ``L.T``."""

    matrix: np.ndarray
    label: str = "L"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, ndmin=2)
        if m.ndim != 2:
            raise InvalidOperatorError("a linear map needs a 2-D matrix")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape

    def __call__(self, x) -> np.ndarray:
        return self.matrix @ x

    def adjoint(self, y) -> np.ndarray:
        return self.matrix.T @ y


# ---------------------------------------------------------------------------
# proximity operators (functional form)


def prox_zero(gamma: float, x) -> np.ndarray:
    """Resolvent of the zero operator: the identity."""
    return np.array(x, dtype=np.float64)


def prox_l1(gamma: float, lam: float, x) -> np.ndarray:
    """Soft thresholding, the prox of ``gamma * lam * ||.||_1``."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - gamma * lam, 0.0)


def proj_box(lo, hi, x) -> np.ndarray:
    """Projection onto ``[lo, hi]``; equals ``J_{gamma N_box}`` for every gamma."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(lo > hi):
        raise InvalidSetError("box has lo > hi in some coordinate")
    return np.clip(np.asarray(x, dtype=np.float64), lo, hi)


def _check_symmetric(Q: np.ndarray) -> np.ndarray:
    Q = np.array(Q, dtype=np.float64, ndmin=2)
    if Q.shape[0] != Q.shape[1] or not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise InvalidOperatorError("quadratic term must be a symmetric square matrix")
    return Q


def prox_quadratic(Q, c, gamma: float, x) -> np.ndarray:
    """Prox of ``y -> 1/2 <y, Q y> + <c, y>``: solves ``(I + gamma Q) y = x - gamma c``."""
    Q = _check_symmetric(Q)
    rhs = np.asarray(x, dtype=np.float64) - gamma * np.asarray(c, dtype=np.float64)
    return scipy.linalg.solve(np.eye(Q.shape[0]) + gamma * Q, rhs, assume_a="pos")


def moreau_inverse_resolvent(inner_op: ResolventOp, gamma: float, x) -> np.ndarray:
    """``J_{gamma A^{-1}} x`` computed from the resolvent of ``A``.

    Uses ``J_{gamma A^{-1}} x = x - gamma J_{A/gamma}(x / gamma)``.
    """
    x = np.asarray(x, dtype=np.float64)
    return x - gamma * inner_op.resolve(1.0 / gamma, x / gamma)


# ---------------------------------------------------------------------------
# resolvent catalog


def zero_resolvent(dim: int) -> ResolventOp:
    return ResolventOp(prox_zero, dim, "zero")


def l1_resolvent(lam: float, dim: int) -> ResolventOp:
    if lam <= 0:
        raise InvalidOperatorError("l1 weight must be positive")
    return ResolventOp(lambda g, x: prox_l1(g, lam, x), dim, f"l1({lam:g})")


def box_resolvent(lo, hi) -> ResolventOp:
    lo = as_vector(lo)
    hi = as_vector(hi)
    if lo.shape != hi.shape:
        raise InvalidSetError("box bounds differ in dimension")
    if np.any(lo > hi):
        raise InvalidSetError("box has lo > hi in some coordinate")
    return ResolventOp(lambda g, x: proj_box(lo, hi, x), lo.size, "box")


class _QuadraticProx:
    """Cached Cholesky factors of ``I + gamma Q`` for a fixed set of gammas.

    Factorizations are built eagerly for the gammas given at construction so
    that calls stay read-only; other gammas are factorized on the fly and not
    stored.
    """

    def __init__(self, Q, c, gammas=()):
        self.Q = _check_symmetric(Q)
        self.c = np.asarray(c, dtype=np.float64).reshape(-1)
        if self.c.size != self.Q.shape[0]:
            raise InvalidOperatorError("linear term does not match Q")
        if np.linalg.eigvalsh(self.Q).min() < -1e-10 * max(1.0, np.abs(self.Q).max()):
            raise InvalidOperatorError("quadratic term must be positive semidefinite")
        self._factors = {float(g): self._factor(g) for g in gammas}

    def _factor(self, gamma):
        return scipy.linalg.cho_factor(np.eye(self.Q.shape[0]) + gamma * self.Q)

    def __call__(self, gamma, x):
        fac = self._factors.get(float(gamma))
        if fac is None:
            fac = self._factor(gamma)
        return scipy.linalg.cho_solve(fac, np.asarray(x, dtype=np.float64) - gamma * self.c)


def quadratic_resolvent(Q, c, gammas=()) -> ResolventOp:
    """Resolvent of ``y -> Q y + c`` (the gradient of a convex quadratic).

    ``gammas`` lists stepsizes whose factorization is prepared up front.
    """
    prox = _QuadraticProx(Q, c, gammas)
    return ResolventOp(prox, prox.Q.shape[0], "quadratic")


def inverse_resolvent(op: ResolventOp) -> ResolventOp:
    """Resolvent of ``A^{-1}`` via the Moreau identity."""
    return ResolventOp(
        lambda g, x: moreau_inverse_resolvent(op, g, x), op.domain_dim, f"inv({op.label})"
    )


def product_resolvent(ops) -> ResolventOp:
    """Blockwise resolvent on the direct sum of the ops' domains (flat vectors)."""
    ops = tuple(ops)
    dims = [op.domain_dim for op in ops]
    cuts = np.cumsum(dims)[:-1]

    def resolve(gamma, x):
        parts = np.split(np.asarray(x, dtype=np.float64), cuts)
        return np.concatenate([op.resolve(gamma, p) for op, p in zip(ops, parts)])

    return ResolventOp(resolve, sum(dims), " x ".join(op.label for op in ops))


# ---------------------------------------------------------------------------
# forward operators


def power_method_norm(L: LinearMap, iters: int = 10000, tol: float = 1e-8) -> float:
    """Largest singular value of ``L`` by power iteration on ``L^T L``.

    Starts from the normalized all-ones vector; if that lies in the null space
    of ``L`` the standard basis vectors are tried in turn.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    M = L.matrix
    n = M.shape[1]
    if not np.any(M):
        return 0.0
    seeds = [np.ones(n) / math.sqrt(n)] + list(np.eye(n))
    for x in seeds:
        if np.any(M @ x):
            break
    est = 0.0
    for _ in range(iters):
        w = M.T @ (M @ x)
        wn = np.linalg.norm(w)
        if wn == 0.0:
            break
        x = w / wn
        new = float(np.linalg.norm(M @ x))
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


def linear_forward(matrix, shift=None, *, cocoercive: bool = False, label: str = "linear") -> ForwardOp:
    """Affine monotone operator ``x -> P x + shift``.

    ``P`` must have a positive semidefinite symmetric part. When
    ``cocoercive`` is set, ``P`` must be symmetric and the constant is
    ``1 / ||P||``, since P is then the gradient of a convex quadratic.
    """
    P = np.array(matrix, dtype=np.float64, ndmin=2)
    P.setflags(write=False)
    sym = 0.5 * (P + P.T)
    if np.linalg.eigvalsh(sym).min() < -1e-10 * max(1.0, np.abs(P).max()):
        raise InvalidOperatorError("linear operator is not monotone")
    mu = float(np.linalg.norm(P, 2))
    beta = None
    if cocoercive:
        _check_symmetric(P)
        beta = math.inf if mu == 0 else 1.0 / mu
    if shift is None:
        apply = lambda x: P @ x
    else:
        s = as_vector(shift)
        apply = lambda x: P @ x + s
    return ForwardOp(apply, mu, P.shape[1], beta, label)


def zero_forward(dim: int) -> ForwardOp:
    return ForwardOp(lambda x: np.zeros(dim), 0.0, dim, math.inf, "zero")


def identity_forward(dim: int) -> ForwardOp:
    return ForwardOp(lambda x: np.array(x, dtype=np.float64), 1.0, dim, 1.0, "identity")


def sum_forward(*ops: ForwardOp) -> ForwardOp:
    """Pointwise sum; Lipschitz constants add and cocoercivity is dropped."""
    def apply(x):
        out = ops[0].apply(x)
        for op in ops[1:]:
            out = out + op.apply(x)
        return out

    return ForwardOp(apply, sum(op.lipschitz_mu for op in ops), ops[0].domain_dim, None,
                     "+".join(op.label for op in ops))


def make_skew_pair(L: LinearMap) -> ForwardOp:
    """The skew operator ``(x, v) -> (L^T v, -L x)`` on the flat product space."""
    rows, cols = L.shape
    M = L.matrix

    def apply(z):
        z = np.asarray(z, dtype=np.float64)
        x, v = z[:cols], z[cols:]
        return np.concatenate([M.T @ v, -(M @ x)])

    return ForwardOp(apply, power_method_norm(L), rows + cols, None, f"skew({L.label})")


# ---------------------------------------------------------------------------
# sampling checks


def _pairs(dim, n_pairs, rng, scale):
    for _ in range(n_pairs):
        yield scale * rng.standard_normal(dim), scale * rng.standard_normal(dim)


@dataclass
class CheckReport:
    """Worst violation seen for each sampled property (<= 0 means satisfied)."""

    violations: dict = field(default_factory=dict)
    tol: float = 1e-10

    @property
    def ok(self) -> bool:
        return all(v <= 0 for v in self.violations.values())

    def record(self, name, value):
        self.violations[name] = max(self.violations.get(name, -math.inf), value)


def check_resolvent(op: ResolventOp, gammas=(0.1, 1.0, 10.0), n_pairs=100, seed=0,
                    scale=3.0, tol=1e-10) -> CheckReport:
    """Firm nonexpansiveness and the membership certificate of ``op``."""
    rng = np.random.default_rng(seed)
    rep = CheckReport(tol=tol)
    for g in gammas:
        for x, y in _pairs(op.domain_dim, n_pairs, rng, scale):
            jx, jy = op.resolve(g, x), op.resolve(g, y)
            d = jx - jy
            rep.record("firm_nonexpansive", inner(d, d) - inner(x - y, d) - tol)
            u = (x - jx) / g
            back = op.resolve(g, jx + g * u)
            rep.record("certificate", norm(back - jx) - tol * (1 + norm(jx)))
    return rep


def check_forward(op: ForwardOp, n_pairs=100, seed=0, scale=3.0, tol=1e-10) -> CheckReport:
    """Monotonicity, Lipschitz bound and (if declared) cocoercivity of ``op``."""
    rng = np.random.default_rng(seed)
    rep = CheckReport(tol=tol)
    for x, y in _pairs(op.domain_dim, n_pairs, rng, scale):
        d = op.apply(x) - op.apply(y)
        dx = x - y
        rep.record("monotone", -inner(d, dx) - tol)
        rep.record("lipschitz", norm(d) - op.lipschitz_mu * norm(dx) * (1 + tol))
        if op.cocoercive_beta is not None and math.isfinite(op.cocoercive_beta):
            rep.record("cocoercive", op.cocoercive_beta * inner(d, d) - inner(dx, d) - tol)
    return rep


def check_linear_map(L: LinearMap, n_pairs=100, seed=0, tol=1e-12) -> CheckReport:
    """Adjoint identity ``<L x, y> = <x, L^T y>`` on random pairs."""
    rng = np.random.default_rng(seed)
    rep = CheckReport(tol=tol)
    rows, cols = L.shape
    for _ in range(n_pairs):
        x, y = rng.standard_normal(cols), rng.standard_normal(rows)
        lhs, rhs = inner(L(x), y), inner(x, L.adjoint(y))
        rep.record("adjoint", abs(lhs - rhs) - tol * (1 + abs(lhs)))
    return rep
