import math

import numpy as np
import pytest

from monosplit import algorithms as alg
from monosplit import operators as ops

SQ2 = math.sqrt(2.0)
ID1 = ops.identity_forward(1)
ZERO1 = ops.zero_resolvent(1)


def state(cur, prev=None):
    return alg.IterateState.start(cur, prev)


# -- stepsizes -----------------------------------------------------------------

@pytest.mark.parametrize("fn, arg, sup", [
    (alg.stepsize_fbfs, 1.0, 1.0),
    (alg.stepsize_fbfs, 2.0, 0.5),
    (alg.stepsize_fbfs, 0.5, 2.0),
    (alg.stepsize_frbs, 1.0, 0.5),
    (alg.stepsize_frbs, 0.5, 1.0),
    (alg.stepsize_frbs, 10.0, 0.05),
    (alg.stepsize_rfbs_lipschitz, 1.0, SQ2 - 1),
    (alg.stepsize_rfbs_lipschitz, SQ2 - 1, 1.0),
    (alg.stepsize_rfbs_lipschitz, 2.0, (SQ2 - 1) / 2),
])
def test_lipschitz_bounds(fn, arg, sup):
    b = fn(arg)
    assert abs(b.sup - sup) <= 1e-12
    assert not b.inclusive and not b.admits(b.sup)


@pytest.mark.parametrize("beta, eps, sup", [(1, 0.5, 0.25), (2, 0.01, 0.99), (1, 0.999, 0.0005)])
def test_cocoercive_bound(beta, eps, sup):
    b = alg.stepsize_rfbs_cocoercive(beta, eps)
    assert abs(b.sup - sup) <= 1e-12
    assert b.inclusive and b.admits(b.sup)


def test_srfb_bound_examples():
    b = alg.stepsize_srfb(1.0, 1.0, 0.25, 1.0)
    assert abs(b.sup - 0.5 / (SQ2 + 3)) <= 1e-12
    b = alg.stepsize_srfb(2.0, 0.5, 0.4, 2.0)
    assert abs(b.sup - 0.2 / (2 * (SQ2 + 1) + 2)) <= 1e-12
    assert abs(b.sup - 0.029289321881345) <= 1e-12
    # C = 0 with zeta -> 0 recovers the reflected bound
    b = alg.stepsize_srfb(1.0, math.inf, 1e-15, 3.0)
    assert abs(b.sup - (SQ2 - 1)) <= 1e-12


@pytest.mark.parametrize("call", [
    lambda: alg.stepsize_fbfs(0.0),
    lambda: alg.stepsize_frbs(-1.0),
    lambda: alg.stepsize_rfbs_lipschitz(0.0),
    lambda: alg.stepsize_rfbs_cocoercive(1.0, 0.0),
    lambda: alg.stepsize_rfbs_cocoercive(1.0, 1.0),
    lambda: alg.stepsize_srfb(1.0, 1.0, 0.5, 1.0),
    lambda: alg.stepsize_srfb(1.0, 1.0, 0.25, 0.0),
    lambda: alg.stepsize_srfb(1.0, 1.0, 0.25, math.inf),
])
def test_invalid_constants(call):
    with pytest.raises(alg.InvalidConstantError):
        call()


# -- single steps ------------------------------------------------------------------

def test_step_fbs_examples():
    assert alg.step_fbs(state([2.0]), ZERO1, ID1, 0.5).x_cur == pytest.approx([1.0])
    assert alg.step_fbs(state([0.0]), ZERO1, ID1, 0.5).x_cur == pytest.approx([0.0])
    box = ops.box_resolvent([0.0], [1.0])
    assert alg.step_fbs(state([0.5]), box, ID1, 1.0).x_cur == pytest.approx([0.0])


def test_step_fbfs_examples():
    assert alg.step_fbfs(state([0.0]), ZERO1, ID1, 0.5).x_cur == pytest.approx([0.0])
    assert alg.step_fbfs(state([1.0]), ZERO1, ID1, 0.5).x_cur == pytest.approx([0.75])
    rot = ops.linear_forward([[0.0, 1.0], [-1.0, 0.0]])
    out = alg.step_fbfs(state([1.0, 0.0]), ops.zero_resolvent(2), rot, 0.1).x_cur
    np.testing.assert_allclose(out, [0.99, 0.1], atol=1e-15)


def test_step_frbs_examples():
    s = alg.init_frbs(state([0.0]), ID1)
    assert alg.step_frbs(s, ZERO1, ID1, 0.25).x_cur == pytest.approx([0.0])
    s = alg.init_frbs(state([1.0]), ID1)
    s1 = alg.step_frbs(s, ZERO1, ID1, 0.25)
    assert s1.x_cur == pytest.approx([0.75])
    s2 = alg.step_frbs(alg.IterateState(np.array([0.75]), np.array([1.0]), np.array([1.0])), ZERO1, ID1, 0.25)
    assert s2.x_cur == pytest.approx([0.625])
    with pytest.raises(ValueError):
        alg.step_frbs(state([1.0]), ZERO1, ID1, 0.25)


def test_step_rfbs_examples():
    assert alg.step_rfbs(state([0.0]), ZERO1, ID1, 0.25).x_cur == pytest.approx([0.0])
    s1 = alg.step_rfbs(state([1.0]), ZERO1, ID1, 0.25)
    assert s1.x_cur == pytest.approx([0.75])
    assert alg.step_rfbs(s1, ZERO1, ID1, 0.25).x_cur == pytest.approx([0.625])


def test_step_srfb_example():
    zero_b = ops.zero_forward(1)
    assert alg.step_srfb(state([2.0]), ZERO1, zero_b, ID1, 0.5).x_cur == pytest.approx([1.0])


# -- diagnostics -----------------------------------------------------------------------

def test_natural_residual_examples():
    assert alg.natural_residual([0.0], ZERO1, ID1) == 0.0
    assert alg.natural_residual([3.0], ZERO1, ID1, None, 1.0) == 3.0
    shifted = ops.linear_forward([[1.0]], [-2.0])
    assert alg.natural_residual([1.0], ops.box_resolvent([0.0], [1.0]), shifted, None, 1.0) == 0.0


def test_lyapunov_E_examples():
    z = np.zeros(1)
    assert alg.lyapunov_E(z, z, z, ID1, 0.25, z) == 0.0
    # x_{-1} = x_0 = 1, one RFBS step to 0.75 with y_0 = 1
    assert alg.lyapunov_E([0.75], [1.0], [1.0], ID1, 0.25, z) == pytest.approx(0.578125, abs=1e-15)


def test_lyapunov_alpha_examples():
    z = np.zeros(1)
    assert alg.lyapunov_alpha(z, z, z, ID1, 0.1, 0.25, z) == 0.0
    # 0.81 + 0.015 + 2 * 0.1 * (1 * -0.1) + 0.001
    assert alg.lyapunov_alpha([0.9], [1.0], [1.0], ID1, 0.1, 0.25, z) == pytest.approx(0.806, abs=1e-15)


def test_lyapunov_dimension_mismatch():
    with pytest.raises(ValueError):
        alg.lyapunov_E([1.0], [1.0], [1.0, 2.0], ID1, 0.1, [0.0])


def test_lyapunov_cocoercive_at_solution():
    z = np.zeros(2)
    assert alg.lyapunov_cocoercive(z, z, z, ops.identity_forward(2), 0.2, z, 0.1) == 0.0


# -- driver ---------------------------------------------------------------------------------

def test_run_rfbs_contraction():
    tr = alg.run("rfbs", alg.Operators(ZERO1, ID1), ([1.0], [1.0]), alg.RunConfig(gamma=0.25, tol=1e-8))
    assert tr.converged
    assert abs(tr.final_x[0]) <= 1e-8


@pytest.mark.parametrize("method", alg.METHODS)
def test_run_from_solution_stops_at_once(method):
    shifted = ops.linear_forward([[1.0]], [-0.3], cocoercive=True)
    o = alg.Operators(ZERO1, shifted, None) if method != "srfb" else alg.Operators(ZERO1, None, shifted)
    tr = alg.run(method, o, [0.3], alg.RunConfig(gamma=0.2))
    assert tr.converged and len(tr) <= 1


def test_run_rejects_bad_gamma_unless_unsafe():
    o = alg.Operators(ZERO1, ID1)
    with pytest.raises(alg.StepsizeError):
        alg.run("rfbs", o, [1.0], alg.RunConfig(gamma=1.0))
    alg.run("rfbs", o, [1.0], alg.RunConfig(gamma=1.0, unsafe_gamma=True, max_iter=5))


def test_fbs_refuses_non_cocoercive():
    rot = ops.linear_forward([[0.0, 1.0], [-1.0, 0.0]])
    with pytest.raises(alg.IncompatibleOperatorError):
        alg.stepsize_bound("fbs", alg.Operators(ops.zero_resolvent(2), rot))


def test_divergence_error_carries_trace():
    o = alg.Operators(ZERO1, ID1)
    with pytest.raises(alg.DivergenceError) as info:
        alg.run("fbs", o, [1.0], alg.RunConfig(gamma=1e3, unsafe_gamma=True, max_iter=10_000))
    assert len(info.value.trace) > 10


def test_fbs_on_rotation_grows():
    rot = ops.linear_forward([[0.0, 1.0], [-1.0, 0.0]])
    o = alg.Operators(ops.zero_resolvent(2), rot)
    tr = alg.run("fbs", o, [1.0, 0.0], alg.RunConfig(gamma=0.3, unsafe_gamma=True, max_iter=50))
    assert not tr.converged
    res = tr.column("natural_residual")
    assert all(b > a for a, b in zip(res, res[1:]))


def test_rfbs_picks_wider_range_for_cocoercive_operator():
    B = ops.linear_forward([[1.0]], cocoercive=True)
    bound = alg.stepsize_bound("rfbs", alg.Operators(ZERO1, B), epsilon=0.01)
    assert bound.regime == "rfbs_cocoercive"
    assert bound.sup == pytest.approx(0.495)


def test_step_norm_stop_rule_and_iterates():
    cfg = alg.RunConfig(gamma=0.25, stop_rule="step_norm", tol=1e-6, keep_iterates=True)
    tr = alg.run("frbs", alg.Operators(ZERO1, ID1), [1.0], cfg)
    assert tr.converged and tr.records[-1].step_norm < 1e-6
    assert len(tr.iterates) == len(tr) + 2


def test_run_config_validation():
    with pytest.raises(alg.InvalidConstantError):
        alg.RunConfig(gamma=0.0)
    with pytest.raises(ValueError):
        alg.RunConfig(gamma=1.0, stop_rule="other")
    with pytest.raises(ValueError):
        alg.run("nope", alg.Operators(ZERO1, ID1), [1.0], alg.RunConfig(gamma=0.1))
