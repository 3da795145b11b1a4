import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqgrad.domain import Ball
from seqgrad.expr import parse_function
from seqgrad.process import (CyclicBlocks, ExplicitSets, RandomFair, StoppingCriteria,
                             classify_point, component_zero_locus_sample, fairness_check,
                             next_block, run_process)
from seqgrad.scenarios import builtin, list_scenarios, sample_starts

QUAD = builtin("quadratic_ab")
ZIG = builtin("zigzag3d")


def test_cyclic_block_formula():
    s = CyclicBlocks(2, 3)
    assert next_block(s, 1) == (2, 3)  # m_1 = 2, 1-based block {3, 4}
    assert next_block(s, 3) == (0, 1)  # m_3 = 1
    assert next_block(s, 2) == (4, 5)


def test_first_block_offset():
    for m in (1, 2, 3):
        s = CyclicBlocks(1, 3, first_block=m)
        assert s.block(1) == (m - 1,)
        assert [s.block(k)[0] for k in range(1, 7)] == [(m - 1 + i) % 3 for i in range(6)]


def test_explicit_sets_cycle():
    s = ExplicitSets(((0,), (1, 2)), 3)
    assert next_block(s, 3) == (0,)
    with pytest.raises(ValueError):
        ExplicitSets(((),), 2)
    with pytest.raises(ValueError):
        ExplicitSets(((0, 3),), 3)


def test_fairness_examples():
    rep = fairness_check(CyclicBlocks(1, 3), horizon=30)
    assert rep.passed and rep.max_gap == (3, 3, 3)
    rep = fairness_check(ExplicitSets(((0,), (0, 1)), 3))
    assert not rep.passed and rep.missing == (2,)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5), st.integers(0, 6))
def test_random_fair_gap_never_exceeds_window(seed, dim, extra):
    W = dim + extra
    s = RandomFair(tuple((j,) for j in range(dim)), dim, seed, W)
    rep = fairness_check(s, horizon=400)
    assert rep.passed
    assert all(g <= W for g in rep.max_gap)


def test_random_fair_is_reproducible():
    a = RandomFair(((0,), (1,), (0, 1)), 2, 5, 6)
    b = RandomFair(((0,), (1,), (0, 1)), 2, 5, 6)
    assert [a.block(k) for k in range(1, 50)] == [b.block(k) for k in range(1, 50)]


def test_quadratic_iterates_closed_form():
    run = run_process(QUAD.f, QUAD.domain, [1.0, 1.0], CyclicBlocks(1, 2, first_block=1))
    assert run.converged and run.verdict.info.classification == "minimum"
    P = run.points
    x, y = 1.0, 1.0
    for k in range(1, 15):
        if k % 2:
            x = -y / 3
        else:
            y = -x / 3
        assert np.allclose(P[k], [x, y], atol=1e-8)
    assert np.linalg.norm(run.verdict.point) <= 1e-8


def test_critical_start_converges_at_once():
    run = run_process(QUAD.f, QUAD.domain, [0.0, 0.0], QUAD.schedule_default)
    assert run.converged
    assert run.verdict.point == (0.0, 0.0)
    assert all(s.arc_length == 0.0 for s in run.steps)
    assert len(run.steps) == QUAD.schedule_default.period


def test_run_rejects_unfair_schedule_and_outside_start():
    with pytest.raises(ValueError):
        run_process(ZIG.f, ZIG.domain, [0, 0.5, 0.5], ExplicitSets(((0,), (1,)), 3))
    with pytest.raises(ValueError):
        run_process(QUAD.f, QUAD.domain, [5.0, 0.0], QUAD.schedule_default)


def test_max_steps_verdict():
    run = run_process(QUAD.f, QUAD.domain, [1.0, 1.0], QUAD.schedule_default,
                      stop=StoppingCriteria(max_steps=3))
    assert run.verdict.status == "max_steps_reached" and len(run.steps) == 3


def test_slice_error_becomes_error_verdict():
    run = run_process(ZIG.f, ZIG.domain, [0.0, 0.5, 0.5], ZIG.schedule_default)
    assert run.verdict.status == "error" and run.verdict.step == 1
    assert "left_domain" in run.verdict.message


@pytest.mark.parametrize("name", [n for n, _, _ in list_scenarios() if n != "zigzag3d"])
def test_process_invariants(name):
    sc = builtin(name)
    for q0 in sample_starts(sc, 4, seed=2):
        run = run_process(sc.f, sc.domain, q0, sc.schedule_default)
        phis = run.phis
        assert np.all(np.diff(phis) <= 1e-10)
        prev = run.initial
        for s in run.steps:
            frozen = [j for j in range(sc.dim) if j not in s.block]
            assert np.array_equal(s.point[frozen], prev[frozen])
            if s.arc_length > 1e-10:
                assert s.phi < (phis[s.k - 1])
            prev = s.point
        assert run.converged
        assert np.linalg.norm(sc.f.gradient(run.verdict.point)) <= 1e-7


def test_runs_are_deterministic():
    sc = builtin("navfn_demo")
    q0 = sample_starts(sc, 1, 7)[0]
    a = run_process(sc.f, sc.domain, q0, sc.schedule_default)
    b = run_process(sc.f, sc.domain, q0, sc.schedule_default)
    assert np.array_equal(a.points, b.points)
    for s, t in zip(a.steps, b.steps):
        assert np.array_equal(s.trajectory.x, t.trajectory.x)


def test_classify_examples():
    info = classify_point(QUAD.f, [0.0, 0.0])
    assert info.classification == "minimum" and info.morse_index == 0
    assert np.allclose(info.eigenvalues, [4.0, 8.0])
    info = classify_point(ZIG.f, [0.0, 0.0, 0.0])
    oracle = np.linalg.eigvals(np.array([[6, -6, 2], [-6, 0, -2], [2, -2, 6]], float))
    assert info.classification == "saddle" and info.morse_index == int(np.sum(oracle < 0)) == 1
    neg = parse_function("-(x**2 + y**2 + z**2)", ["x", "y", "z"])
    info = classify_point(neg, [0, 0, 0])
    assert info.classification == "maximum" and info.morse_index == 3
    assert classify_point(QUAD.f, [1.0, 0.0]).classification == "not_critical"
    flat = parse_function("x**4 + y**2", ["x", "y"])
    assert classify_point(flat, [0, 0]).classification == "degenerate"


def test_zero_locus_quadratic_line():
    pts = component_zero_locus_sample(QUAD.f, 0, ([-1, -1], [1, 1]), 9)
    assert pts
    for x, y in pts:
        assert abs(3 * x + y) <= 1e-6


def test_zero_locus_zigzag_plane():
    pts = component_zero_locus_sample(ZIG.f, 1, ([-1, -1, -1], [1, 1, 1]), 6)
    assert len(pts) > 10
    for x, _, z in pts:
        assert abs(6 * x + 2 * z) <= 1e-6


def test_zero_locus_empty():
    f = parse_function("x + y**2", ["x", "y"])
    assert component_zero_locus_sample(f, 0, ([-1, -1], [1, 1]), 5) == []
    with pytest.raises(ValueError):
        component_zero_locus_sample(f, 0, ([-1, -1], [1, 1]), 1)


def test_stopping_validation():
    with pytest.raises(ValueError):
        StoppingCriteria(eps_crit=0.0)
    with pytest.raises(ValueError):
        StoppingCriteria(window=0)


def test_schedule_dimension_mismatch():
    with pytest.raises(ValueError):
        run_process(QUAD.f, Ball([0, 0], 4.0), [1.0, 1.0], CyclicBlocks(1, 3))
