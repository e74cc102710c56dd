import math

import numpy as np
import pytest

from monosplit import algorithms as alg
from monosplit import composite as comp
from monosplit import operators as ops
from monosplit import problems as P


def zero_map(dim, mu=1.0):
    # the zero map is mu-Lipschitz for any mu; a positive constant is required here
    return ops.ForwardOp(lambda x: np.zeros(dim), mu, dim, math.inf, "zero")


def scaled(dim, s):
    return ops.linear_forward(s * np.eye(dim))


def simple_problem(L=((1.0,),), B=None, Binv=None):
    L = np.array(L)
    m, n = L.shape
    blk = comp.DualBlock(ops.zero_resolvent(m), Binv or zero_map(m), ops.LinearMap(L))
    return comp.CompositeProblem(ops.zero_resolvent(n), B or zero_map(n), (blk,))


def affine_problem(scale):
    """Affine instance with coupling ``scale * L`` and its zero from a linear solve."""
    Q0, c0 = np.diag([1.0, 2.0]), np.array([0.5, -1.0])
    Pm, p = np.array([[1.0, 0.3], [-0.3, 1.0]]), np.array([0.2, 0.1])
    L = scale * np.array([[1.0, -1.0]])
    a, r, D = 2.0, np.array([0.4]), np.array([[0.5]])
    blk = comp.DualBlock(ops.quadratic_resolvent(a * np.eye(1), r), ops.linear_forward(D), ops.LinearMap(L))
    problem = comp.CompositeProblem(ops.quadratic_resolvent(Q0, c0), ops.linear_forward(Pm, p), (blk,))
    K = np.block([[Q0 + Pm, L.T], [-L, np.eye(1) / a + D]])
    z = np.linalg.solve(K, np.concatenate([-c0 - p, r / a]))
    return problem, z


def test_aggregate_mu_examples():
    blk = comp.DualBlock(ops.zero_resolvent(1), scaled(1, 2.0), ops.LinearMap([[1.0]]))
    p = comp.CompositeProblem(ops.zero_resolvent(1), scaled(1, 2.0), (blk,))
    assert comp.aggregate_mu(p) == pytest.approx(3.0, abs=1e-9)
    blocks = tuple(comp.DualBlock(ops.zero_resolvent(1), scaled(1, 1.0), ops.LinearMap([[1.0]]))
                   for _ in range(2))
    p = comp.CompositeProblem(ops.zero_resolvent(1), scaled(1, 1.0), blocks)
    assert comp.aggregate_mu(p) == pytest.approx(1 + math.sqrt(2), abs=1e-9)


def test_problem_validation():
    with pytest.raises(comp.InvalidProblemError):
        comp.CompositeProblem(ops.zero_resolvent(1), scaled(1, 1.0), ())
    with pytest.raises(comp.InvalidProblemError):
        simple_problem(L=((0.0,),))
    with pytest.raises(ops.InvalidOperatorError):
        simple_problem(B=zero_map(1, 0.0))
    blk = comp.DualBlock(ops.zero_resolvent(1), zero_map(1), ops.LinearMap([[1.0, 1.0]]))
    with pytest.raises(comp.InvalidProblemError):
        comp.CompositeProblem(ops.zero_resolvent(3), zero_map(3), (blk,))


def test_product_forward_examples():
    p = simple_problem()
    bb = comp.build_product_forward(p)
    np.testing.assert_array_equal(bb([1.0, 1.0]), [1.0, -1.0])
    p = simple_problem(B=scaled(1, 1.0))
    np.testing.assert_array_equal(comp.build_product_forward(p)([0.0, 0.0]), [0.0, 0.0])


def test_product_forward_is_monotone_with_declared_constant():
    built = P.build(P.get("composite-1"))
    assert ops.check_forward(comp.build_product_forward(built.composite)).ok


def test_product_resolvent_examples():
    p = simple_problem()
    aa = comp.build_product_resolvent(p)
    np.testing.assert_array_equal(aa(0.7, [3.0, 5.0]), [3.0, 0.0])
    built = P.build(P.get("composite-1"))
    aa = comp.build_product_resolvent(built.composite)
    assert built.composite.block_dims == (3, 2, 1)
    assert aa(0.5, np.ones(6)).shape == (6,)
    assert ops.check_resolvent(aa).ok


def test_pridu_hand_step():
    p = simple_problem()
    s0 = comp.PrimalDualState.start(p, [1.0], [[0.0]])
    s1 = comp.step_pridu(s0, p, 0.2)
    np.testing.assert_array_equal(s1.x_cur, [1.0])
    np.testing.assert_array_equal(s1.v_cur[0], [0.0])


def test_pridu_fixed_point():
    problem, z = affine_problem(1.0)
    s = comp.PrimalDualState.start(problem, z[:2], [z[2:]])
    s1 = comp.step_pridu(s, problem, comp.default_gamma(problem))
    np.testing.assert_allclose(s1.flat(), z, atol=1e-14)


def test_pridu_matches_product_rfbs():
    built = P.build(P.get("composite-1"))
    problem = built.composite
    gamma = comp.default_gamma(problem)
    z0 = np.linspace(-1, 1, 6)
    cfg = alg.RunConfig(gamma=gamma, max_iter=50, tol=1e-300, keep_iterates=True)
    flat = alg.run("rfbs", comp.product_operators(problem), z0, cfg)
    res = comp.solve_composite(problem, comp.PrimalDualState.start(problem, z0[:3], (z0[3:5], z0[5:])), cfg)
    for k, (x, v) in enumerate(zip(res.primal, res.dual)):
        z = np.concatenate([x, *v])
        assert np.max(np.abs(z - flat.iterates[k + 1])) <= 1e-12


@pytest.mark.parametrize("scale", [1e-3, 1.0])
def test_solve_composite_reaches_linear_solution(scale):
    problem, z = affine_problem(scale)
    res = comp.solve_composite(problem, config=alg.RunConfig(gamma=comp.default_gamma(problem), tol=1e-11))
    assert res.converged
    np.testing.assert_allclose(np.concatenate([res.x, *res.v]), z, atol=1e-8)
    assert res.trace.forward_calls["B"] == len(res.trace)


def test_solve_composite_from_solution():
    problem, z = affine_problem(1.0)
    res = comp.solve_composite(problem, comp.PrimalDualState.start(problem, z[:2], [z[2:]]))
    assert res.converged and len(res.trace) == 1


def test_solve_composite_rejects_large_gamma():
    problem, _ = affine_problem(1.0)
    with pytest.raises(alg.StepsizeError):
        comp.solve_composite(problem, config=alg.RunConfig(gamma=1.0))


def test_verify_inclusion_examples():
    built = P.build(P.get("composite-1"))
    z = built.known_solution
    problem = built.composite
    assert comp.verify_inclusion(problem, z[:3], (z[3:5], z[5:]), 1e-8)
    bump = np.full(6, 0.1 / math.sqrt(6))
    zp = z + bump
    assert not comp.verify_inclusion(problem, zp[:3], (zp[3:5], zp[5:]), 1e-8)
    zero = simple_problem()
    assert comp.verify_inclusion(zero, [0.0], [[0.0]], 1e-12)


def test_state_dimension_checks():
    problem, _ = affine_problem(1.0)
    with pytest.raises(comp.InvalidProblemError):
        comp.PrimalDualState.start(problem, [0.0], [[0.0]])
    with pytest.raises(comp.InvalidProblemError):
        comp.PrimalDualState.start(problem, [0.0, 0.0], [[0.0, 1.0]])


def test_explicit_dual_resolvent_is_used():
    p = simple_problem()
    blk = p.blocks[0]
    calls = []
    dual = ops.ResolventOp(lambda g, v: calls.append(g) or np.zeros_like(v), 1, "dual")
    blk2 = comp.DualBlock(blk.A, blk.Binv, blk.L, A_inv=dual)
    blk2.dual_resolve(0.5, np.array([1.0]))
    assert calls == [0.5]
