import numpy as np
import pytest

from seqgrad.domain import check_condition_ii_prime
from seqgrad.io import load_scenario, save_scenario, scenario_from_dict, scenario_to_dict
from seqgrad.perturb import newton_critical_point
from seqgrad.process import classify_point, run_process
from seqgrad.scenarios import builtin, list_scenarios, sample_starts

NAMES = [n for n, _, _ in list_scenarios()]


def test_list_contents():
    listed = {n: m for n, m, _ in list_scenarios()}
    assert len(listed) >= 5
    assert listed["quadratic_ab"] == 2 and listed["zigzag3d"] == 3


def test_unknown_name():
    with pytest.raises(KeyError):
        builtin("nonexistent")


def test_known_points():
    assert builtin("quadratic_ab").known_critical_points == (((0.0, 0.0), "minimum"),)
    assert builtin("zigzag3d").known_critical_points == (((0.0, 0.0, 0.0), "saddle"),)


@pytest.mark.parametrize("name", NAMES)
def test_known_critical_points_classify(name):
    sc = builtin(name)
    for p, kind in sc.known_critical_points:
        x, ok = newton_critical_point(sc.f, p)
        assert ok and np.linalg.norm(sc.f.gradient(x)) <= 1e-8
        assert classify_point(sc.f, x).classification == kind
    assert classify_point(builtin("zigzag3d").f, [0, 0, 0]).morse_index == 1


@pytest.mark.parametrize("name", NAMES)
def test_sign_condition_or_documented(name):
    sc = builtin(name)
    rep = check_condition_ii_prime(sc.f, sc.domain, sc.domain.sample_boundary(10_000, seed=0))
    if not rep.passed:
        assert "sign condition fails" in sc.notes


@pytest.mark.parametrize("name", NAMES)
def test_starts_inside_and_reproducible(name):
    sc = builtin(name)
    a = sample_starts(sc, 20, 4)
    assert np.array_equal(a, sample_starts(sc, 20, 4))
    assert all(sc.domain.contains(x) for x in a)
    if sc.start_level is not None:
        assert np.all(sc.f.batch_values(a) < sc.start_level)


@pytest.mark.parametrize("name", NAMES)
def test_scenario_file_round_trip(name, tmp_path):
    sc = builtin(name)
    save_scenario(sc, tmp_path / "s.json")
    back = load_scenario(tmp_path / "s.json")
    assert scenario_to_dict(back) == scenario_to_dict(sc)
    X = sc.domain.sample_interior(30, 1)
    for x in X:
        assert back.f(x) == sc.f(x)
        assert np.array_equal(back.f.gradient(x), sc.f.gradient(x))
    assert (tmp_path / "s.json").read_text() == (
        save_scenario(back, tmp_path / "t.json") or (tmp_path / "t.json").read_text())


def test_scenario_format_errors():
    d = scenario_to_dict(builtin("quadratic_ab"))
    with pytest.raises(ValueError, match="format"):
        scenario_from_dict({**d, "format": "other"})
    with pytest.raises(ValueError, match="domain"):
        scenario_from_dict({**d, "domain": {"kind": "cube"}})
    with pytest.raises(ValueError, match="scenario"):
        scenario_from_dict({**d, "f": "x +"})


def test_quadratic_two_step_ratio():
    sc = builtin("quadratic_ab")
    a, b = sc.extras["a"], sc.extras["b"]
    rho2 = ((a - b) / (a + b)) ** 2
    run = run_process(sc.f, sc.domain, [1.0, 1.0], sc.schedule_default)
    P = run.points[1:23]
    ratios = [np.linalg.norm(P[k + 2]) / np.linalg.norm(P[k]) for k in range(20)]
    assert np.allclose(ratios, rho2, atol=1e-6)


def test_zigzag_type2_stationary_points_on_plane():
    # y-steps are never stationary here (phi is linear in y), so the check is
    # over whatever stationary type-2 points the runs produce
    sc = builtin("zigzag3d")
    for q0 in [(0.0, 0.5, 0.5)] + list(sample_starts(sc, 5, 0)):
        run = run_process(sc.f, sc.domain, q0, sc.schedule_default)
        for s in run.steps:
            if s.block == (1,) and s.termination_reason == "stationary":
                x, _, z = s.point
                assert abs(6 * x + 2 * z) <= 1e-8


def test_finite_hit_from_axis_start():
    sc = builtin("finite_hit2d")
    run = run_process(sc.f, sc.domain, [0.0, 1.0], sc.schedule_default)
    assert np.linalg.norm(run.steps[0].point) <= 1e-12
    assert all(s.arc_length == 0.0 for s in run.steps[1:])
    generic = run_process(sc.f, sc.domain, [0.6, 0.4], sc.schedule_default)
    assert all(s.arc_length > 1e-6 for s in generic.steps[:20])
    assert generic.converged and len(generic.steps) > 20


def test_saddle_basin_trapping_line():
    sc = builtin("saddle_basin2d")
    for y in (-0.7, 0.2, 0.9):
        run = run_process(sc.f, sc.domain, [0.0, y], sc.schedule_default)
        assert run.verdict.info.classification == "saddle"
    run = run_process(sc.f, sc.domain, [0.05, 0.9], sc.schedule_default)
    assert run.verdict.info.classification == "minimum"


def test_navfn_minimum_is_target():
    sc = builtin("navfn_demo", kappa=6)
    assert sc.extras["kappa"] == 6
    t = sc.extras["targets"]
    assert sc.f(t) == 0.0
    assert classify_point(sc.f, t).classification == "minimum"
