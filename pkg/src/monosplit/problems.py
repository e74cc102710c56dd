"""Declarative benchmark problems and the built-in registry.

A :class:`ProblemSpec` is plain JSON-compatible data. Operators are given by
descriptors such as ``{"type": "box", "lo": [...], "hi": [...]}`` and turned
into live objects by :func:`build`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import algorithms as alg
from . import composite as comp
from . import operators as ops

KINDS = ("two_op", "three_op", "composite")
LASSO_SEED = 20190417

RESOLVENT_TYPES = ("zero", "l1", "box", "quadratic")
FORWARD_TYPES = ("zero", "identity", "linear", "skew", "least_squares")


class ProblemSpecError(ValueError):
    pass


@dataclass
class ProblemSpec:
    name: str
    kind: str
    operators: dict
    known_solution: Optional[list] = None
    seed: Optional[int] = None
    description: str = ""
    x0: Optional[list] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        allowed = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - allowed
        if unknown:
            raise ProblemSpecError(f"unknown problem keys: {sorted(unknown)}")
        missing = {"name", "kind", "operators"} - set(data)
        if missing:
            raise ProblemSpecError(f"missing problem keys: {sorted(missing)}")
        return cls(**data)

    def validate(self) -> None:
        build(self)


@dataclass(frozen=True)
class BuiltProblem:
    """Live operators for a spec.

    Composite problems also expose their product-space operators via ``ops``,
    so every method can run on them.
    """

    spec: ProblemSpec
    ops: alg.Operators
    composite: Optional[comp.CompositeProblem] = None

    @property
    def known_solution(self):
        ks = self.spec.known_solution
        return None if ks is None else np.asarray(ks, dtype=np.float64)

    def initial_point(self) -> np.ndarray:
        """``spec.x0`` if given, else the constant vector 0.5."""
        if self.spec.x0 is not None:
            return np.asarray(self.spec.x0, dtype=np.float64)
        return np.full(self.ops.dim, 0.5)


def _mat(d, key):
    try:
        return np.array(d[key], dtype=np.float64, ndmin=2)
    except KeyError:
        raise ProblemSpecError(f"descriptor {d.get('type')!r} needs {key!r}") from None


def _vec(d, key, default=None):
    if key not in d:
        if default is None:
            raise ProblemSpecError(f"descriptor {d.get('type')!r} needs {key!r}")
        return default
    return np.array(d[key], dtype=np.float64).reshape(-1)


def _check_keys(d, allowed):
    unknown = set(d) - set(allowed) - {"type"}
    if unknown:
        raise ProblemSpecError(f"unknown keys {sorted(unknown)} in {d.get('type')!r} descriptor")


def build_resolvent(d: dict) -> ops.ResolventOp:
    kind = d.get("type")
    if kind not in RESOLVENT_TYPES:
        raise ProblemSpecError(f"unknown resolvent {kind!r}; catalog: {', '.join(RESOLVENT_TYPES)}")
    if kind == "zero":
        _check_keys(d, ("dim",))
        return ops.zero_resolvent(int(d["dim"]))
    if kind == "l1":
        _check_keys(d, ("lam", "dim"))
        return ops.l1_resolvent(float(d["lam"]), int(d["dim"]))
    if kind == "box":
        _check_keys(d, ("lo", "hi"))
        return ops.box_resolvent(_vec(d, "lo"), _vec(d, "hi"))
    _check_keys(d, ("Q", "c"))
    Q = _mat(d, "Q")
    return ops.quadratic_resolvent(Q, _vec(d, "c", np.zeros(Q.shape[0])))


def build_forward(d: dict) -> ops.ForwardOp:
    kind = d.get("type")
    if kind not in FORWARD_TYPES:
        raise ProblemSpecError(f"unknown forward operator {kind!r}; catalog: {', '.join(FORWARD_TYPES)}")
    if kind == "zero":
        _check_keys(d, ("dim", "lipschitz"))
        dim = int(d["dim"])
        mu = float(d.get("lipschitz", 0.0))
        return ops.ForwardOp(lambda x: np.zeros(dim), mu, dim, math.inf, "zero")
    if kind == "identity":
        _check_keys(d, ("dim",))
        return ops.identity_forward(int(d["dim"]))
    if kind == "linear":
        _check_keys(d, ("matrix", "shift", "cocoercive"))
        shift = d.get("shift")
        return ops.linear_forward(_mat(d, "matrix"), shift, cocoercive=bool(d.get("cocoercive", False)))
    if kind == "skew":
        _check_keys(d, ("L",))
        return ops.make_skew_pair(ops.LinearMap(_mat(d, "L")))
    # gradient of 1/2 |M x - b|^2
    _check_keys(d, ("M", "b"))
    M, b = _mat(d, "M"), _vec(d, "b")
    H = M.T @ M
    Mtb = M.T @ b
    mu = float(np.linalg.norm(H, 2))
    return ops.ForwardOp(lambda x: H @ x - Mtb, mu, M.shape[1], 1.0 / mu, "grad-lsq")


def build(spec: ProblemSpec) -> BuiltProblem:
    if spec.kind not in KINDS:
        raise ProblemSpecError(f"unknown problem kind {spec.kind!r}")
    d = spec.operators
    if spec.kind == "composite":
        _check_keys(d, ("A", "B", "blocks"))
        blocks = []
        for blk in d["blocks"]:
            _check_keys(blk, ("A", "Binv", "L"))
            blocks.append(comp.DualBlock(build_resolvent(blk["A"]), build_forward(blk["Binv"]),
                                         ops.LinearMap(_mat(blk, "L"))))
        problem = comp.CompositeProblem(build_resolvent(d["A"]), build_forward(d["B"]), tuple(blocks))
        built = BuiltProblem(spec, comp.product_operators(problem), problem)
    else:
        keys = ("A", "B") if spec.kind == "two_op" else ("A", "B", "C")
        _check_keys(d, keys)
        missing = [k for k in keys if k not in d]
        if missing:
            raise ProblemSpecError(f"{spec.kind} problem needs operators {missing}")
        A = build_resolvent(d["A"])
        B = build_forward(d["B"])
        C = build_forward(d["C"]) if spec.kind == "three_op" else None
        if spec.kind == "three_op" and not C.is_cocoercive:
            raise ProblemSpecError("C must be cocoercive")
        for op in (B, C):
            if op is not None and op.domain_dim != A.domain_dim:
                raise ProblemSpecError("operator dimensions disagree")
        built = BuiltProblem(spec, alg.Operators(A, B, C))
    for key in ("known_solution", "x0"):
        val = getattr(spec, key)
        if val is not None and np.size(val) != built.ops.dim:
            raise ProblemSpecError(f"{key} has the wrong dimension")
    return built


# ---------------------------------------------------------------------------
# registry


def lasso_spec(n: int = 20, m: int = 30, seed: int = LASSO_SEED, lam_ratio: float = 0.1) -> ProblemSpec:
    """``min lam |x|_1 + 1/2 |M x - b|^2`` with Gaussian data from ``seed``.

    ``lam = lam_ratio * |M^T b|_inf``; a ratio >= 1 makes ``x = 0`` optimal.
    """
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((m, n)) / math.sqrt(m)
    b = rng.standard_normal(m)
    lam = lam_ratio * float(np.abs(M.T @ b).max())
    known = [0.0] * n if lam_ratio >= 1 else None
    return ProblemSpec(
        "lasso", "two_op",
        {"A": {"type": "l1", "lam": lam, "dim": n},
         "B": {"type": "least_squares", "M": M.tolist(), "b": b.tolist()}},
        known, seed, "l1-regularized least squares; B is a cocoercive gradient",
    )


def skew_box_spec() -> ProblemSpec:
    return ProblemSpec(
        "skew-box", "two_op",
        {"A": {"type": "box", "lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
         "B": {"type": "skew", "L": [[1.0]]}},
        [0.0, 0.0], None, "bilinear saddle on [-1,1]^2; B is a rotation (monotone, not cocoercive)",
        x0=[0.9, -0.6],
    )


def three_op_spec() -> ProblemSpec:
    # Solution z* = (1, -0.2) sits on the face x = 1 with normal (0.5, 0);
    # c is chosen so that 0 = (0.5, 0) + B z* + Q z* + c.
    z = np.array([1.0, -0.2])
    Q = np.diag([2.0, 1.0])
    Bz = np.array([z[1], -z[0]])
    c = -(np.array([0.5, 0.0]) + Bz + Q @ z)
    return ProblemSpec(
        "three-op", "three_op",
        {"A": {"type": "box", "lo": [-1.0, -1.0], "hi": [1.0, 1.0]},
         "B": {"type": "skew", "L": [[1.0]]},
         "C": {"type": "linear", "matrix": Q.tolist(), "shift": c.tolist(), "cocoercive": True}},
        z.tolist(), None, "box + rotation + strongly convex quadratic gradient",
    )


def composite_1_spec() -> ProblemSpec:
    """Affine instance with m = 2 dual blocks of dimensions 2 and 1.

    Every operator is affine, so the zero of the product-space inclusion is
    the solution of a linear system, solved here directly.
    """
    Q0 = np.diag([0.5, 0.2, 0.4])
    c0 = np.array([0.3, -0.1, 0.2])
    P = np.array([[1.0, 0.5, 0.0], [-0.5, 1.0, 0.2], [0.0, -0.2, 0.6]])
    p = np.array([-1.0, 0.5, 0.25])
    L1 = np.array([[1.0, -1.0, 0.5], [0.0, 2.0, 1.0]])
    L2 = np.array([[0.5, 0.5, -1.0]])
    a1, r1, D1 = 2.0, np.array([0.4, -0.6]), np.diag([0.5, 0.3])
    a2, r2, D2 = 1.0, np.array([0.2]), np.array([[0.8]])

    # A_i w = a_i w + r_i, so A_i^{-1} v = (v - r_i) / a_i.
    n = 3
    K = np.zeros((6, 6))
    rhs = np.zeros(6)
    K[:n, :n] = Q0 + P
    K[:n, 3:5] = L1.T
    K[:n, 5:6] = L2.T
    rhs[:n] = -c0 - p
    K[3:5, :n] = -L1
    K[3:5, 3:5] = np.eye(2) / a1 + D1
    rhs[3:5] = r1 / a1
    K[5:6, :n] = -L2
    K[5:6, 5:6] = np.eye(1) / a2 + D2
    rhs[5:6] = r2 / a2
    z = np.linalg.solve(K, rhs)

    return ProblemSpec(
        "composite-1", "composite",
        {"A": {"type": "quadratic", "Q": Q0.tolist(), "c": c0.tolist()},
         "B": {"type": "linear", "matrix": P.tolist(), "shift": p.tolist()},
         "blocks": [
             {"A": {"type": "quadratic", "Q": (a1 * np.eye(2)).tolist(), "c": r1.tolist()},
              "Binv": {"type": "linear", "matrix": D1.tolist()},
              "L": L1.tolist()},
             {"A": {"type": "quadratic", "Q": (a2 * np.eye(1)).tolist(), "c": r2.tolist()},
              "Binv": {"type": "linear", "matrix": D2.tolist()},
              "L": L2.tolist()},
         ]},
        z.tolist(), None, "affine primal-dual instance with two dual blocks",
    )


def registry() -> list:
    return [lasso_spec(), skew_box_spec(), three_op_spec(), composite_1_spec()]


def get(name: str) -> ProblemSpec:
    for spec in registry():
        if spec.name == name:
            return spec
    raise KeyError(name)


def names() -> list:
    return [s.name for s in registry()]
