"""One test per acceptance criterion, each at its stated tolerance.

Each test records a PASS/FAIL line that the terminal summary prints.
"""
import math
from functools import lru_cache

import numpy as np
import pytest

from seqgrad.cli import main
from seqgrad.domain import Ball, check_condition_ii_prime
from seqgrad.expr import parse_function
from seqgrad.lojasiewicz import (LojaEstimate, estimate_exponent, length_bound_check,
                                 verify_inequality)
from seqgrad.perturb import RadialPerturbation, perturb_function, saddle_escape_test
from seqgrad.process import (CyclicBlocks, ExplicitSets, RandomFair, StoppingCriteria,
                             fairness_check, run_process)
from seqgrad.scenarios import builtin, list_scenarios, sample_starts

NAMES = [n for n, _, _ in list_scenarios()]
SLACK = 1e-10
RHO = 1.0 / 3.0


def default_blocks(sc):
    sched = sc.schedule_default
    return [sched.block(k) for k in range(1, sched.period + 1)]


@lru_cache(maxsize=None)
def criterion1_run():
    sc = builtin("quadratic_ab")
    return run_process(sc.f, sc.domain, [1.0, 1.0], CyclicBlocks(1, 2, first_block=1),
                       stop=StoppingCriteria(max_steps=40))


@lru_cache(maxsize=None)
def default_runs(name):
    sc = builtin(name)
    return tuple(run_process(sc.f, sc.domain, q0, sc.schedule_default,
                             stop=StoppingCriteria(max_steps=10_000))
                 for q0 in sample_starts(sc, 20, seed=100))


@lru_cache(maxsize=None)
def random_fair_runs(name):
    sc = builtin(name)
    out = []
    for s in range(5):
        sched = RandomFair(default_blocks(sc), sc.dim, seed=s, window=3 * sc.dim)
        out.extend(run_process(sc.f, sc.domain, q0, sched, stop=StoppingCriteria(max_steps=10_000))
                   for q0 in sample_starts(sc, 20, seed=200 + s))
    return tuple(out)


def converged_critical(runs):
    bad = [r.verdict for r in runs
           if not (r.converged and r.verdict.info.grad_norm <= 1e-6 and len(r.steps) <= 10_000)]
    return not bad, bad


def test_criterion_1_quadratic_recursion(record):
    run = criterion1_run()
    expected = [np.array([1.0, 1.0])]
    for k in range(1, 21):
        x, y = expected[-1]
        expected.append(np.array([-RHO * y, y]) if k % 2 == 1 else np.array([x, -RHO * x]))
    pts = run.points[1:21]
    err = float(np.max(np.abs(pts - np.array(expected[1:]))))
    ok = len(run.steps) >= 20 and err <= 1e-8
    record("1a", ok, f"20 stationary points within {err:.2e} of the recursion")
    assert ok


def test_criterion_1_steps_nontrivial(record):
    arcs = [s.arc_length for s in criterion1_run().steps[:20]]
    short = [k + 1 for k, a in enumerate(arcs) if a <= 1e-6]
    ok = len(arcs) == 20 and not short
    record("1c", ok, f"steps with arc length <= 1e-6: {short}")
    assert ok


def test_arc_length_oracle():
    # [DERIVED] step 1 moves x from 1 to -1/3; step k >= 2 moves one coordinate
    # from s to -s/3 with |s| = 3^-(k-2) * 2/3, so its length is (8/9) 3^-(k-2)
    arcs = np.array([s.arc_length for s in criterion1_run().steps[:20]])
    expected = np.array([4 / 3] + [8 / 9 * 3.0 ** -(k - 2) for k in range(2, 21)])
    assert np.allclose(arcs, expected, rtol=1e-6, atol=1e-12)
    assert np.all(arcs > 0)


def test_criterion_1_phi_ratio_one_third(record):
    phis = criterion1_run().phis[:21]
    ratios = phis[1:] / phis[:-1]
    dev = np.abs(ratios - 1.0 / 3.0)
    ok = bool(np.all(dev <= 1e-6))
    record("1b", ok, f"phi(q_k+1)/phi(q_k) - 1/3: first {dev[0]:.1e}, worst {dev.max():.3f} "
                     f"(later ratios are {ratios[-1]:.6f})")
    assert ok


def test_phi_ratio_oracle():
    # [DERIVED] phi is 8 s^2 / 3 at a stationary point whose free coordinate is s,
    # and s shrinks by 1/3 each step, so every ratio after the first is 1/9
    ratios = criterion1_run().phis[1:21] / criterion1_run().phis[:20]
    assert ratios[0] == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert np.allclose(ratios[1:], 1.0 / 9.0, atol=1e-9)


@pytest.mark.parametrize("name", NAMES)
def test_criterion_2_converges_to_critical_point(name, record):
    ok, bad = converged_critical(default_runs(name))
    record(f"2.{name}", ok, "20/20 converged" if ok else
           f"{len(bad)}/20 failed, e.g. {bad[0].status}: {bad[0].message}")
    assert ok


@pytest.mark.parametrize("name", NAMES)
def test_criterion_3_random_fair_schedules(name, record):
    ok, bad = converged_critical(random_fair_runs(name))
    record(f"3.{name}", ok, "100/100 converged under 5 random fair schedules" if ok else
           f"{len(bad)}/100 failed, e.g. {bad[0].status}: {bad[0].message}")
    assert ok


def test_criterion_3_unfair_schedule_rejected(record):
    unfair = ExplicitSets(((0,), (1,)), dim=3)
    rep = fairness_check(unfair)
    ok = not rep.passed and 2 in rep.missing
    sc = builtin("zigzag3d")
    with pytest.raises(ValueError):
        run_process(sc.f, sc.domain, [0.0, 0.5, 0.5], unfair)
    record("3.unfair", ok, f"missing indices {list(rep.missing)}")
    assert ok


def descent_violations(run):
    v = int(np.sum(np.diff(run.phis) > SLACK))
    for s in run.steps:
        if s.trajectory is not None:
            v += int(np.sum(np.diff(s.trajectory.phi) > SLACK))
    return v


def test_criterion_4_monotone_descent(record):
    runs = [criterion1_run()]
    for name in NAMES:
        runs.extend(default_runs(name))
        runs.extend(random_fair_runs(name))
    total = sum(descent_violations(r) for r in runs)
    record("4", total == 0, f"{total} violations over {len(runs)} runs")
    assert total == 0


def test_criterion_5_lojasiewicz_exponent(record):
    quad, zig = builtin("quadratic_ab"), builtin("zigzag3d")
    ests = [(quad.f, estimate_exponent(quad.f, [0.0, 0.0], 0.5, seed=0)),
            (zig.f, estimate_exponent(zig.f, [0.0, 0.0, 0.0], 0.5, seed=0))]
    mus_ok = all(0.45 <= e.mu <= 0.55 for _, e in ests)
    verified = all(verify_inequality(f, e, 10_000, seed=1) for f, e in ests)
    lam = 3.0
    radial = parse_function(f"{lam!r}*(x**2 + y**2)", ["x", "y"])
    c = estimate_exponent(radial, [0.0, 0.0], 0.5, seed=0).c
    c_ok = abs(c - 2 * math.sqrt(lam)) <= 0.2 * 2 * math.sqrt(lam)
    ok = mus_ok and verified and c_ok
    record("5", ok, f"mu = {ests[0][1].mu:.4f}, {ests[1][1].mu:.4f}; "
                    f"c = {c:.4f} vs {2 * math.sqrt(lam):.4f}")
    assert ok


def test_criterion_6_length_bound(record):
    sc = builtin("quadratic_ab")
    # [DERIVED] |grad phi| >= 2 sqrt(lam_min) phi^(1/2) with lam_min = 2
    est = LojaEstimate((0.0, 0.0), 0.5, 0.9 * 2 * math.sqrt(2), 0.5, 0.0)
    worst = 0.0
    ok = True
    for q0 in sample_starts(sc, 20, seed=300):
        rep = length_bound_check(run_process(sc.f, sc.domain, q0, sc.schedule_default), est, 1.05)
        worst = max(worst, rep.total_length)
        ok &= rep.hypothesis_holds and rep.total_length <= 0.5 * (1 + 1e-3)
    record("6", ok, f"longest in-ball tail {worst:.4f} <= {0.5 * (1 + 1e-3):.4f}")
    assert ok


def test_criterion_7_saddle_escape(record):
    sc = builtin("saddle_basin2d")
    pert = RadialPerturbation(**sc.extras["perturbation"])
    assert pert.b <= 1e-3 and pert.b < pert.injectivity_bound
    kw = dict(schedule=sc.schedule_default, seed=7, along=sc.extras["trapping_slice"], offset=0.5)
    plain = saddle_escape_test(sc.f, None, sc.domain, [0.0, 0.0], 200, **kw)
    moved = saddle_escape_test(sc.f, pert, sc.domain, [0.0, 0.0], 200, **kw)
    ok = (plain.saddle_fraction >= 0.3 and moved.saddle_fraction <= 0.05
          and moved.minimum_fraction >= 0.95)
    record("7", ok, f"to saddle {plain.saddle_fraction:.0%} unperturbed, "
                    f"{moved.saddle_fraction:.0%} perturbed; perturbed to minimum "
                    f"{moved.minimum_fraction:.0%}")
    assert ok


def test_criterion_8_zigzag_nontrivial(record):
    sc = builtin("zigzag3d")
    run = run_process(sc.f, sc.domain, [0.0, 0.5, 0.5], sc.schedule_default,
                      stop=StoppingCriteria(max_steps=200))
    steps = run.steps[:50]
    moved = len(steps) == 50 and all(s.arc_length > 1e-9 for s in steps)
    phis = run.phis[:51]
    strict = len(phis) == 51 and bool(np.all(np.diff(phis) < 0))
    dists = np.linalg.norm(run.points[:201], axis=1)
    close = bool(np.any(dists < 1e-4))
    ok = moved and strict and close
    record("8", ok, f"{len(run.steps)} steps completed, verdict {run.verdict.status}: "
                    f"{run.verdict.message}")
    assert ok


def fd_gradient(f, x, h=1e-6):
    return np.array([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(len(x))])


def test_criterion_9_gradient_fidelity(record):
    worst = 0.0
    for name in NAMES:
        sc = builtin(name)
        mins = [p for p, kind in sc.known_critical_points if kind == "minimum"]
        p = np.array(mins[0]) if mins else np.zeros(sc.dim)
        pert = RadialPerturbation(p + 0.3 * np.linspace(1.0, -0.5, sc.dim), p, 1, 1e-3)
        X = sc.domain.sample_interior(100, seed=400)
        for f in (sc.f, perturb_function(sc.f, pert)):
            for x in X:
                g = f.gradient(x)
                worst = max(worst, float(np.linalg.norm(g - fd_gradient(f, x))
                                         / np.linalg.norm(g)))
    ok = worst <= 1e-6
    record("9", ok, f"worst relative error {worst:.2e}")
    assert ok


def test_criterion_10_boundary_condition(record):
    ball = Ball([0.0, 0.0], 1.0)
    samples = ball.sample_boundary(10_000, seed=500)
    good = check_condition_ii_prime(parse_function("x**2 + y**2", ["x", "y"]), ball, samples)
    # -grad points toward (2, 0), so the x-partial has the wrong sign near (1, 0)
    bad = check_condition_ii_prime(parse_function("(x - 2)**2 + y**2", ["x", "y"]), ball, samples)
    ok = (good.passed and good.samples_checked == 10_000 and not bad.passed
          and all(v.component == 0 for v in bad.violations))
    record("10", ok, f"radial: {len(good.violations)} violations; "
                     f"shifted: {len(bad.violations)} violations in component 1")
    assert ok


DETERMINISM_COMMANDS = [
    ["run", "quadratic_ab", "--start", "1,1", "--first-block", "1", "--max-steps", "40"],
    ["run", "saddle_basin2d", "--start", "random(100,20)", "--angle", "--lojasiewicz",
     "--length-bound"],
    ["run", "navfn_demo", "--start", "random(200,5)", "--schedule", "random",
     "--sets", "1,2;3,4", "--schedule-seed", "3", "--jobs", "2"],
    ["estimate", "quadratic_ab", "--seed", "0"],
    ["perturb", "saddle_basin2d", "--o", "0.4,0.3", "--p", "1,0", "--b", "1e-3"],
]


def test_criterion_11_determinism(tmp_path, record):
    mismatched = []
    for i, cmd in enumerate(DETERMINISM_COMMANDS):
        dirs = [tmp_path / f"{i}_{rep}" for rep in ("a", "b")]
        for d in dirs:
            main(cmd + ["--out", str(d)])
        names = sorted(p.name for p in dirs[0].iterdir())
        assert names
        mismatched += [f"{cmd[1]}/{n}" for n in names
                       if (dirs[0] / n).read_bytes() != (dirs[1] / n).read_bytes()]
    record("11", not mismatched, "all artifacts byte-identical" if not mismatched
           else f"differ: {mismatched}")
    assert not mismatched
