"""Command-line front end.

Exit codes: 0 success, 1 usage, configuration or file errors, 2 a run that
did not converge or an invariant that failed.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .domain import check_condition_ii_prime
from .expr import EvaluationError, default_names
from .io import (FormatError, dump_json, load_scenario, read_trajectory_csv, run_summary,
                 save_scenario, write_trajectory_csv)
from .lojasiewicz import (EstimationError, NoQualifyingStep, angle_condition, estimate_exponent,
                          inequality_margin, length_bound_check)
from .perturb import (RadialPerturbation, max_displacement, minimum_persistence,
                      perturb_function)
from .process import (CyclicBlocks, ExplicitSets, RandomFair, StoppingCriteria, fairness_check,
                      run_process)
from .scenarios import Scenario, builtin, list_scenarios, sample_starts
from .sliceflow import FlowSettings

OUT_ENV = "SEQGRAD_OUT"
EXIT_OK, EXIT_USAGE, EXIT_MATH = 0, 1, 2


class ConfigError(ValueError):
    """A bad option; the message names it."""


def _floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(c) for c in text.replace(" ", "").split(",") if c]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise ConfigError(f"{what}: expected finite numbers, got {text!r}")
    return vals


def resolve_scenario(text: str) -> Scenario:
    names = {n for n, _, _ in list_scenarios()}
    if text in names:
        return builtin(text)
    path = Path(text)
    if not path.exists():
        raise ConfigError(f"scenario: {text!r} is neither a builtin name nor a file")
    return load_scenario(path)


def resolve_starts(sc: Scenario, texts: Sequence[str] | None) -> list[np.ndarray]:
    if not texts:
        if not sc.suggested_starts:
            raise ConfigError("start: the scenario suggests no start; pass --start")
        return [np.array(sc.suggested_starts[0])]
    out: list[np.ndarray] = []
    for text in texts:
        m = re.fullmatch(r"\s*random\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*", text)
        if m:
            out.extend(sample_starts(sc, int(m.group(2)), int(m.group(1))))
            continue
        p = _floats(text, "start")
        if len(p) != sc.dim:
            raise ConfigError(f"start: {text!r} has {len(p)} coordinates, scenario needs {sc.dim}")
        out.append(np.array(p))
    return out


def _index_sets(text: str, what: str) -> list[list[int]]:
    try:
        sets = [[int(j) - 1 for j in part.split(",") if j.strip()] for part in text.split(";")]
    except ValueError:
        raise ConfigError(f"{what}: expected sets like '1,2;3'") from None
    return sets


def resolve_schedule(sc: Scenario, args):
    try:
        if args.schedule == "default":
            s = sc.schedule_default
            if args.first_block is not None:
                if not isinstance(s, CyclicBlocks):
                    raise ConfigError("first-block: only applies to cyclic schedules")
                s = replace(s, first_block=args.first_block)
        elif args.schedule == "cyclic":
            d = args.d or 1
            s = CyclicBlocks(d, sc.dim // d, args.first_block)
            if s.dim != sc.dim:
                raise ConfigError(f"d: {d} does not divide the dimension {sc.dim}")
        elif args.schedule == "explicit":
            if not args.sets:
                raise ConfigError("sets: required for an explicit schedule")
            s = ExplicitSets(tuple(map(tuple, _index_sets(args.sets, "sets"))), sc.dim)
        else:
            blocks = (_index_sets(args.sets, "sets") if args.sets
                      else [[j] for j in range(sc.dim)])
            s = RandomFair(tuple(map(tuple, blocks)), sc.dim, args.schedule_seed,
                           args.window or 3 * sc.dim)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    report = fairness_check(s)
    if not report.passed:
        raise ConfigError(f"schedule: not fair, indices {[j + 1 for j in report.missing]} "
                          f"are never visited within one period")
    return s


def resolve_settings(args) -> tuple[FlowSettings, StoppingCriteria]:
    flow_kw = {k: getattr(args, k) for k in ("eps_stat", "rtol", "atol", "t_max", "h_max")
               if getattr(args, k) is not None}
    if args.no_polish:
        flow_kw["newton_polish"] = False
    stop_kw = {k: getattr(args, k) for k in ("eps_crit", "eps_move", "window_steps",
                                             "max_steps", "eps_eig")
               if getattr(args, k) is not None}
    if "window_steps" in stop_kw:
        stop_kw["window"] = stop_kw.pop("window_steps")
    try:
        return FlowSettings(**flow_kw), StoppingCriteria(**stop_kw)
    except ValueError as exc:
        raise ConfigError(f"settings: {exc}") from exc


def out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or "seqgrad_out")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"out: cannot create {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise ConfigError(f"out: {path} is not writable")
    return path


# ---------------------------------------------------------------- run

_WORKER: dict = {}


def _init_worker(payload: dict) -> None:
    _WORKER.clear()
    _WORKER.update(payload)


def _run_one(i: int) -> int:
    """Run start i and write its files; returns the exit code for that run."""
    w = _WORKER
    sc: Scenario = w["scenario"]
    names = list(sc.variables or default_names(sc.dim))
    schedule = w["schedule_factory"]()
    run = run_process(sc.f, sc.domain, w["starts"][i], schedule, w["flow"], w["stop"])
    summary = run_summary(run, sc.f, names, sc.name, w["flow"], w["stop"], schedule)
    analyses = w["analyses"]
    if "angle" in analyses:
        summary["angle"] = [
            {"k": s.k, "delta_min": angle_condition(sc.f, s.trajectory).delta_min}
            for s in run.steps]
    if run.converged and ({"lojasiewicz", "length_bound"} & analyses):
        try:
            est = estimate_exponent(sc.f, run.verdict.point, w["radius"], seed=i)
            summary["lojasiewicz"] = {
                "center": list(est.center), "radius": est.radius, "c": est.c, "mu": est.mu,
                "phi_at_center": est.phi_at_center,
                "margin": inequality_margin(sc.f, est, 10_000, seed=i + 1)}
            if "length_bound" in analyses:
                rep = length_bound_check(run, est)
                summary["length_bound"] = asdict(rep)
        except NoQualifyingStep as exc:
            summary["length_bound"] = {"error": str(exc)}
        except (EstimationError, ValueError) as exc:
            summary["lojasiewicz"] = {"error": str(exc)}
    if "boundary_check" in analyses:
        samples = sc.domain.sample_boundary(10_000, seed=i)
        rep = check_condition_ii_prime(sc.f, sc.domain, samples)
        summary["boundary_check"] = {
            "samples_checked": rep.samples_checked, "violations": len(rep.violations),
            "first_violations": [
                {"point": list(v.point), "component": None if v.component is None else v.component + 1,
                 "phi_partial": v.phi_partial, "boundary_partial": v.boundary_partial}
                for v in rep.violations[:5]]}
    out = Path(w["out"])
    write_trajectory_csv(run, out / f"trajectory_{i}.csv")
    dump_json(summary, out / f"run_{i}.json")
    return EXIT_OK if run.converged else EXIT_MATH


class _ScheduleFactory:
    """Fresh schedule per run, so random schedules restart from their seed."""

    def __init__(self, schedule):
        self.schedule = schedule

    def __call__(self):
        return replace(self.schedule)


def cmd_run(args) -> int:
    sc = resolve_scenario(args.scenario)
    starts = resolve_starts(sc, args.start)
    schedule = resolve_schedule(sc, args)
    flow, stop = resolve_settings(args)
    out = out_dir(args)
    for i, q in enumerate(starts):
        if not sc.domain.contains(q):
            raise ConfigError(f"start: point {i} {q.tolist()} is outside the domain")
    analyses = {a for a in ("lojasiewicz", "length_bound", "angle", "boundary_check")
                if getattr(args, a)}
    payload = {"scenario": sc, "starts": starts, "schedule_factory": _ScheduleFactory(schedule),
               "flow": flow, "stop": stop, "out": str(out), "analyses": analyses,
               "radius": args.radius}
    jobs = max(1, args.jobs)
    if jobs == 1 or len(starts) == 1:
        _init_worker(payload)
        codes = [_run_one(i) for i in range(len(starts))]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(payload,)) as pool:
            codes = list(pool.map(_run_one, range(len(starts))))
    converged = codes.count(EXIT_OK)
    print(f"{converged}/{len(codes)} runs converged; files in {out}")
    return EXIT_OK if converged == len(codes) else EXIT_MATH


# ---------------------------------------------------------------- verify

def _verify_run(path: Path, csv_path: Path | None) -> list[str]:
    """Names of the invariants violated by one run file."""
    from .expr import parse_function

    data = json.loads(path.read_text())
    if data.get("format") != "seqgrad-run/1":
        raise FormatError(f"{path}: not a run summary")
    bad: list[str] = []
    slack = 1e-10
    phis = [data["initial_phi"]] + [s["phi"] for s in data["steps"]]
    if any(b > a + slack for a, b in zip(phis, phis[1:])):
        bad.append("monotone descent of phi(q_k)")
    prev = data["initial"]
    for s in data["steps"]:
        free = {j - 1 for j in s["block"]}
        if any(s["point"][j] != prev[j] for j in range(len(prev)) if j not in free):
            bad.append(f"slice consistency at step {s['k']}")
            break
        prev = s["point"]
    v = data["verdict"]
    if v["status"] == "converged":
        sc = data["scenario"]
        f = parse_function(sc["f"], sc["variables"])
        gn = float(np.linalg.norm(f.gradient(v["point"])))
        if gn > data["stopping"]["eps_crit"]:
            bad.append("limit criticality")
    lb = data.get("length_bound")
    if lb and "error" not in lb and lb["hypothesis_holds"]:
        total = sum(s["arc_length"] for s in data["steps"][lb["l"]:lb["n"]])
        if total > lb["r"] * (1 + lb["slack"]):
            bad.append("length bound")
    if csv_path is not None:
        _, rows = read_trajectory_csv(csv_path)
        phi_col = rows[:, -3]
        steps = rows[:, 0]
        same = steps[1:] == steps[:-1]
        if np.any(same & (phi_col[1:] > phi_col[:-1] + slack)):
            bad.append("monotone descent along trajectories")
    return bad


def cmd_verify(args) -> int:
    files: list[Path] = []
    for p in map(Path, args.paths):
        if p.is_dir():
            files.extend(sorted(p.glob("run_*.json")))
        elif p.exists():
            files.append(p)
        else:
            raise ConfigError(f"paths: {p} does not exist")
    if not files:
        raise ConfigError("paths: no run files found")
    failed = 0
    for f in files:
        csv_path = f.with_name(f.name.replace("run_", "trajectory_").replace(".json", ".csv"))
        try:
            bad = _verify_run(f, csv_path if csv_path.exists() else None)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{f}: corrupt run file ({exc})") from exc
        if bad:
            failed += 1
            print(f"{f}: FAIL {'; '.join(bad)}")
        else:
            print(f"{f}: ok")
    return EXIT_MATH if failed else EXIT_OK


# ---------------------------------------------------------------- others

def cmd_estimate(args) -> int:
    sc = resolve_scenario(args.scenario)
    if args.point:
        q = _floats(args.point, "point")
    elif sc.known_critical_points:
        q = list(sc.known_critical_points[0][0])
    else:
        raise ConfigError("point: the scenario lists no critical point; pass --point")
    if len(q) != sc.dim:
        raise ConfigError(f"point: needs {sc.dim} coordinates")
    try:
        est = estimate_exponent(sc.f, q, args.radius, args.samples, args.seed)
    except EstimationError as exc:
        print(f"estimate failed: {exc}", file=sys.stderr)
        return EXIT_MATH
    except ValueError as exc:
        raise ConfigError(f"point: {exc}") from exc
    margin = inequality_margin(sc.f, est, args.verify_samples, args.seed + 1)
    report = {"format": "seqgrad-estimate/1", "scenario": sc.name, "center": list(est.center),
              "radius": est.radius, "c": est.c, "mu": est.mu, "phi_at_center": est.phi_at_center,
              "verify_samples": args.verify_samples, "verified": margin > 0, "margin": margin}
    dump_json(report, out_dir(args) / "estimate.json")
    print(json.dumps(report, indent=2))
    return EXIT_OK if margin > 0 else EXIT_MATH


def cmd_perturb(args) -> int:
    sc = resolve_scenario(args.scenario)
    o = _floats(args.o, "o")
    if args.p:
        p = _floats(args.p, "p")
    else:
        mins = [pt for pt, kind in sc.known_critical_points if kind == "minimum"]
        if not mins:
            raise ConfigError("p: the scenario lists no minimum; pass --p")
        p = list(mins[0])
    if len(o) != sc.dim or len(p) != sc.dim:
        raise ConfigError(f"o/p: both need {sc.dim} coordinates")
    try:
        pert = RadialPerturbation(o, p, args.k, args.b)
    except ValueError as exc:
        raise ConfigError(f"b: {exc}") from exc
    psi = perturb_function(sc.f, pert)
    pers = minimum_persistence(sc.f, pert)
    X = sc.domain.sample_interior(1000, args.seed)
    perturbed = replace(sc, name=f"{sc.name}_perturbed", f=psi,
                        notes=f"{sc.name} composed with a radial perturbation "
                              f"(o={o}, p={p}, k={args.k}, b={args.b!r}).",
                        extras={**sc.extras, "perturbation": {"o": o, "p": p, "k": args.k, "b": args.b}})
    out = out_dir(args)
    save_scenario(perturbed, out / f"{perturbed.name}.json")
    report = {"format": "seqgrad-perturb/1", "scenario": sc.name, "o": o, "p": p, "k": args.k,
              "a": pert.a, "b": args.b, "injectivity_bound": pert.injectivity_bound,
              "max_displacement": max_displacement(pert, X),
              "persistence": {"point": list(pers.point), "distance": pers.distance,
                              "converged": pers.converged,
                              "classification": pers.info.classification,
                              "eigenvalues": None if pers.info.eigenvalues is None
                              else list(pers.info.eigenvalues)},
              "scenario_file": f"{perturbed.name}.json"}
    dump_json(report, out / "perturb.json")
    print(json.dumps(report, indent=2))
    return EXIT_OK if pers.is_minimum else EXIT_MATH


def cmd_list(args) -> int:
    print(json.dumps([{"name": n, "dim": m, "description": d} for n, m, d in list_scenarios()],
                     indent=2))
    return EXIT_OK


def cmd_export(args) -> int:
    sc = resolve_scenario(args.scenario)
    path = Path(args.file or f"{sc.name}.json")
    save_scenario(sc, path)
    print(path)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqgrad", description=(
        "Sequential slice-by-slice gradient flows: run, verify and analyse."))
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario_arg(p):
        p.add_argument("scenario", help="builtin scenario name or scenario file path")

    def out_arg(p):
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./seqgrad_out)")

    p = sub.add_parser("run", help="run the process from one or more starts")
    scenario_arg(p)
    out_arg(p)
    p.add_argument("--start", action="append",
                   help="start point 'x1,x2,...' or 'random(SEED,COUNT)'; repeatable")
    p.add_argument("--schedule", choices=("default", "cyclic", "explicit", "random"),
                   default="default")
    p.add_argument("--d", type=int, help="block size for --schedule cyclic")
    p.add_argument("--first-block", type=int, help="1-based block used at step 1 (cyclic)")
    p.add_argument("--sets", help="1-based index sets 'i,j;k' for explicit or random schedules")
    p.add_argument("--window", type=int, help="fairness window of a random schedule (default 3M)")
    p.add_argument("--schedule-seed", type=int, default=0)
    for name, kind in (("eps-stat", float), ("rtol", float), ("atol", float), ("t-max", float),
                       ("h-max", float), ("eps-crit", float), ("eps-move", float),
                       ("max-steps", int), ("eps-eig", float)):
        p.add_argument(f"--{name}", type=kind)
    p.add_argument("--window-steps", type=int, help="steps over which movement must stay small")
    p.add_argument("--no-polish", action="store_true", help="skip the Newton polish of each step")
    p.add_argument("--lojasiewicz", action="store_true", help="estimate (c, mu) at the limit")
    p.add_argument("--length-bound", action="store_true", help="check the step-length bound")
    p.add_argument("--angle", action="store_true", help="report the angle constant per step")
    p.add_argument("--boundary-check", action="store_true",
                   help="check the component-wise sign condition on 10000 boundary samples")
    p.add_argument("--radius", type=float, default=0.5, help="ball radius for --lojasiewicz")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for several starts")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="re-check invariants of run files")
    p.add_argument("paths", nargs="+", help="run_*.json files or directories holding them")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("estimate", help="estimate (c, mu) at a critical point")
    scenario_arg(p)
    out_arg(p)
    p.add_argument("--point", help="critical point (default: first known one)")
    p.add_argument("--radius", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=20_000)
    p.add_argument("--verify-samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("perturb", help="compose a scenario with a radial perturbation")
    scenario_arg(p)
    out_arg(p)
    p.add_argument("--o", required=True, help="perturbation center")
    p.add_argument("--p", help="fixed minimum (default: first known minimum)")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--b", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("list", help="list builtin scenarios")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("export", help="write a scenario file")
    scenario_arg(p)
    p.add_argument("--file", help="output path (default NAME.json)")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
