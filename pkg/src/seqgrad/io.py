"""Files: trajectory CSV, run summaries, scenario files.

Coordinates and index sets are 1-based in every file.  Floats are written
so that reading them back gives the same 64-bit values: CSV cells use 17
significant digits and JSON uses Python's shortest round-trip repr.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import Ball, Domain, LevelSet
from .expr import AnalyticFunction, default_names, parse_function
from .process import (CriticalPointInfo, CyclicBlocks, ExplicitSets, ProcessRun, RandomFair,
                      Schedule, StoppingCriteria)
from .scenarios import Scenario
from .sliceflow import FlowSettings

SCENARIO_FORMAT = "seqgrad-scenario/1"
RUN_FORMAT = "seqgrad-run/1"


class FormatError(ValueError):
    """A file does not follow the expected layout; the message names the field."""


def fmt(x: float) -> str:
    return "%.17g" % x


# ---------------------------------------------------------------- schedules

def schedule_to_dict(s: Schedule) -> dict:
    if isinstance(s, CyclicBlocks):
        return {"kind": "cyclic", "d": s.d, "N": s.N, "first_block": s.first_block}
    if isinstance(s, ExplicitSets):
        return {"kind": "explicit", "sets": [[j + 1 for j in b] for b in s.sets]}
    return {"kind": "random_fair", "blocks": [[j + 1 for j in b] for b in s.blocks],
            "seed": s.seed, "window": s.window}


def schedule_from_dict(d: dict, dim: int) -> Schedule:
    kind = _field(d, "kind", str, "schedule")
    if kind == "cyclic":
        s = CyclicBlocks(_field(d, "d", int, "schedule"), _field(d, "N", int, "schedule"),
                         d.get("first_block"))
        if s.dim != dim:
            raise FormatError(f"schedule: d*N = {s.dim} but the function has {dim} variables")
        return s
    if kind == "explicit":
        return ExplicitSets(tuple(tuple(j - 1 for j in b) for b in _field(d, "sets", list, "schedule")), dim)
    if kind == "random_fair":
        return RandomFair(tuple(tuple(j - 1 for j in b) for b in _field(d, "blocks", list, "schedule")),
                          dim, _field(d, "seed", int, "schedule"), _field(d, "window", int, "schedule"))
    raise FormatError(f"schedule.kind: unknown schedule kind {kind!r}")


def _field(d: dict, key: str, kind, where: str):
    if not isinstance(d, dict) or key not in d:
        raise FormatError(f"{where}.{key}: missing")
    v = d[key]
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, kind) or isinstance(v, bool) and kind is not bool:
        raise FormatError(f"{where}.{key}: expected {kind.__name__}")
    return v


# ---------------------------------------------------------------- scenarios

def domain_to_dict(dom: Domain, names: Sequence[str]) -> dict:
    if isinstance(dom, Ball):
        return {"kind": "ball", "center": dom.center.tolist(), "radius": float(dom.radius)}
    return {"kind": "level_set", "boundary": [g.to_infix(names) for g in dom.boundary],
            "interior_point": dom.interior_point.tolist(),
            "bounds": [dom.bounds[0].tolist(), dom.bounds[1].tolist()]}


def domain_from_dict(d: dict, names: Sequence[str]) -> Domain:
    kind = _field(d, "kind", str, "domain")
    if kind == "ball":
        return Ball(_field(d, "center", list, "domain"), _field(d, "radius", float, "domain"))
    if kind == "level_set":
        bd = tuple(parse_function(t, names) for t in _field(d, "boundary", list, "domain"))
        lo, hi = _field(d, "bounds", list, "domain")
        return LevelSet(bd, _field(d, "interior_point", list, "domain"), (lo, hi))
    raise FormatError(f"domain.kind: unknown domain kind {kind!r}")


def scenario_to_dict(sc: Scenario) -> dict:
    names = list(sc.variables or default_names(sc.dim))
    return {
        "format": SCENARIO_FORMAT,
        "name": sc.name,
        "variables": names,
        "f": sc.f.to_infix(names),
        "domain": domain_to_dict(sc.domain, names),
        "starts": [list(p) for p in sc.suggested_starts],
        "start_level": sc.start_level,
        "critical_points": [{"point": list(p), "classification": c}
                            for p, c in sc.known_critical_points],
        "schedule": schedule_to_dict(sc.schedule_default),
        "notes": sc.notes,
        "extras": sc.extras,
    }


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict) or d.get("format") != SCENARIO_FORMAT:
        raise FormatError(f"format: expected {SCENARIO_FORMAT!r}")
    names = _field(d, "variables", list, "scenario")
    try:
        f = parse_function(_field(d, "f", str, "scenario"), names)
        dom = domain_from_dict(_field(d, "domain", dict, "scenario"), names)
        sched = schedule_from_dict(_field(d, "schedule", dict, "scenario"), len(names))
    except FormatError:
        raise
    except (ValueError, SyntaxError, TypeError) as exc:
        raise FormatError(f"scenario: {exc}") from exc
    level = d.get("start_level")
    return Scenario(
        _field(d, "name", str, "scenario"), f, dom,
        tuple(tuple(float(c) for c in p) for p in d.get("starts", [])),
        tuple((tuple(float(c) for c in cp["point"]), str(cp["classification"]))
              for cp in d.get("critical_points", [])),
        sched, d.get("notes", ""), tuple(names),
        None if level is None else float(level), dict(d.get("extras", {})))


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(data)


# ---------------------------------------------------------------- runs

def write_trajectory_csv(run: ProcessRun, path) -> None:
    """All steps of a run: step, t, y_1..y_M, phi, grad_norm, slice_grad_norm."""
    M = run.initial.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t"] + [f"y_{j + 1}" for j in range(M)]
                   + ["phi", "grad_norm", "slice_grad_norm"])
        for s in run.steps:
            tr = s.trajectory
            if tr is None:
                raise ValueError("run was made without trajectories")
            for i in range(len(tr)):
                w.writerow([str(s.k), fmt(tr.t[i])] + [fmt(c) for c in tr.x[i]]
                           + [fmt(tr.phi[i]), fmt(tr.grad_norm[i]), fmt(tr.slice_grad_norm[i])])


def read_trajectory_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    if header[:2] != ["step", "t"] or header[-3:] != ["phi", "grad_norm", "slice_grad_norm"]:
        raise FormatError(f"{path}: unexpected header")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return header, data.reshape(-1, len(header))


def info_to_dict(info: CriticalPointInfo | None) -> dict | None:
    if info is None:
        return None
    d = asdict(info)
    d["point"] = list(info.point)
    d["eigenvalues"] = None if info.eigenvalues is None else list(info.eigenvalues)
    return d


def run_summary(run: ProcessRun, f: AnalyticFunction, names: Sequence[str], scenario_name: str,
                flow: FlowSettings, stop: StoppingCriteria, schedule: Schedule) -> dict:
    v = run.verdict
    return {
        "format": RUN_FORMAT,
        "scenario": {"name": scenario_name, "variables": list(names), "f": f.to_infix(names)},
        "initial": run.initial.tolist(),
        "initial_phi": run.initial_phi,
        "schedule": schedule_to_dict(schedule),
        "flow": asdict(flow),
        "stopping": asdict(stop),
        "steps": [{
            "k": s.k,
            "block": [j + 1 for j in s.block],
            "point": s.point.tolist(),
            "phi": s.phi,
            "grad_norm": s.grad_norm,
            "arc_length": s.arc_length,
            "termination_reason": s.termination_reason,
            "polish": s.polish,
        } for s in run.steps],
        "verdict": {"status": v.status, "point": None if v.point is None else list(v.point),
                    "step": v.step, "message": v.message,
                    "classification": info_to_dict(v.info)},
        "total_arc_length": run.total_arc_length,
    }


def dump_json(data, path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, allow_nan=False) + "\n")


def load_schema(name: str) -> dict:
    """One of the JSON schemas shipped with the package (``run``, ``scenario``, ...)."""
    text = resources.files("seqgrad").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


__all__: Sequence[str] = [
    "FormatError", "RUN_FORMAT", "SCENARIO_FORMAT", "domain_from_dict", "domain_to_dict",
    "dump_json", "fmt", "info_to_dict", "load_scenario", "load_schema", "read_trajectory_csv",
    "run_summary", "save_scenario", "scenario_from_dict", "scenario_to_dict",
    "schedule_from_dict", "schedule_to_dict", "write_trajectory_csv",
]
