import dataclasses
import math

import numpy as np
import pytest

from seqgrad.expr import parse_function
from seqgrad.lojasiewicz import (EstimationError, LojaEstimate, NoQualifyingStep,
                                 angle_condition, estimate_exponent, length_bound_check,
                                 verify_inequality)
from seqgrad.process import CyclicBlocks, StoppingCriteria, run_process
from seqgrad.scenarios import builtin, sample_starts
from seqgrad.sliceflow import integrate_slice

LAM = 3.0
RADIAL = parse_function(f"{LAM}*(x**2 + y**2)", ["x", "y"])
QUAD = builtin("quadratic_ab")
ZIG = builtin("zigzag3d")


def test_radial_quadratic_estimate():
    est = estimate_exponent(RADIAL, [0.0, 0.0], 0.5, seed=1)
    # |grad f| = 2 sqrt(lam) f^(1/2) exactly
    assert 0.45 <= est.mu <= 0.55
    assert est.c <= 2 * math.sqrt(LAM)
    assert abs(est.c - 2 * math.sqrt(LAM)) <= 0.2 * 2 * math.sqrt(LAM)
    assert verify_inequality(RADIAL, est, 10_000, seed=2)


def test_doubled_constant_fails():
    est = estimate_exponent(RADIAL, [0.0, 0.0], 0.5, seed=1)
    assert not verify_inequality(RADIAL, dataclasses.replace(est, c=2 * est.c), 10_000, seed=2)


def test_constant_lower_bound_case():
    # mu = 0: |grad f| >= 2 lam |x| and |f| >= 1e-14 forces |x| >= 5e-8
    est = LojaEstimate((0.0, 0.0), 0.5, 1e-7, 0.0, 0.0)
    assert verify_inequality(RADIAL, est, 10_000, seed=3)


def test_zigzag_saddle_exponent():
    est = estimate_exponent(ZIG.f, [0.0, 0.0, 0.0], 0.5, seed=4)
    assert 0.45 <= est.mu <= 0.55
    assert verify_inequality(ZIG.f, est, 10_000, seed=5)


def test_quadratic_ab_constant_matches_smallest_eigenvalue():
    # phi = x^T A x with eig(A) = {2, 4}; the sharp constant is 2 sqrt(2)
    est = estimate_exponent(QUAD.f, [0.0, 0.0], 0.5, seed=6)
    assert 0.45 <= est.mu <= 0.55
    assert abs(est.c - 2 * math.sqrt(2)) <= 0.2 * 2 * math.sqrt(2)
    assert verify_inequality(QUAD.f, est, 10_000, seed=7)


def test_estimate_errors():
    with pytest.raises(ValueError):
        estimate_exponent(QUAD.f, [1.0, 0.0], 0.5)
    with pytest.raises(EstimationError):
        estimate_exponent(RADIAL, [0.0, 0.0], 0.5, nsamples=50)
    with pytest.raises(ValueError):
        LojaEstimate((0.0,), 1.0, 1.0, 1.0, 0.0)


def test_angle_condition_examples():
    tr = integrate_slice(QUAD.f, QUAD.domain, [1.0, 1.0], [0])
    rep = angle_condition(QUAD.f, tr)
    # grad phi(1, 1) = (8, 8)
    assert rep.deltas[0] == pytest.approx(8 / math.sqrt(128), rel=1e-15)
    assert rep.deltas[-1] <= 1e-9
    assert np.all((rep.deltas >= 0) & (rep.deltas <= 1))
    full = integrate_slice(QUAD.f, QUAD.domain, [1.0, 0.5], [0, 1])
    rep = angle_condition(QUAD.f, full)
    assert np.allclose(rep.deltas[:-1], 1.0)


def oracle_estimate():
    return LojaEstimate((0.0, 0.0), 0.5, 0.9 * 2 * math.sqrt(2), 0.5, 0.0)


def test_length_bound_holds_on_quadratic():
    est = oracle_estimate()
    for q0 in sample_starts(QUAD, 5, seed=8):
        run = run_process(QUAD.f, QUAD.domain, q0, QUAD.schedule_default)
        rep = length_bound_check(run, est, 1.05)
        assert rep.hypothesis_holds and rep.bound_holds
        assert rep.total_length <= 0.5 * (1 + 1e-3)


def test_length_bound_no_qualifying_step():
    run = run_process(QUAD.f, QUAD.domain, [2.0, 2.0], QUAD.schedule_default,
                      stop=StoppingCriteria(max_steps=2))
    with pytest.raises(NoQualifyingStep):
        length_bound_check(run, oracle_estimate())


def test_length_bound_empty_tail():
    run = run_process(QUAD.f, QUAD.domain, [1.0, 1.0], CyclicBlocks(1, 2, first_block=1),
                      stop=StoppingCriteria(max_steps=1))
    q1 = run.points[-1]
    est = LojaEstimate(tuple(q1), 1e-3, 1.0, 0.5, run.phis[-1] - 1e-8)
    rep = length_bound_check(run, est)
    assert rep.l == 1 and rep.n == 1 and rep.total_length == 0.0 and rep.bound_holds


def test_quartic_exponent():
    # both |grad f| and f^(3/4) are homogeneous of degree 3, so mu = 3/4
    quartic = parse_function("x**4 + y**4", ["x", "y"])
    est = estimate_exponent(quartic, [0.0, 0.0], 0.5, seed=9)
    assert abs(est.mu - 0.75) <= 0.05
    assert verify_inequality(quartic, est, 10_000, seed=10)
