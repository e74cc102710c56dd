"""Reflected forward-backward splitting for monotone inclusions."""

from .algorithms import (ConvergenceTrace, DivergenceError, IterateState, Operators, RunConfig,
                         StepsizeBound, run, stepsize_fbfs, stepsize_frbs, stepsize_rfbs_cocoercive,
                         stepsize_rfbs_lipschitz, stepsize_srfb)
from .composite import CompositeProblem, DualBlock, solve_composite, step_pridu, verify_inclusion
from .linalg import BlockVector, axpy, inner, norm, reflect
from .operators import ForwardOp, LinearMap, ResolventOp

__version__ = "0.1.0"
