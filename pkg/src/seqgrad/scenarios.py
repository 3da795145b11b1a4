"""Named example systems with their domains, schedules and known critical points."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .domain import Ball, Domain, LevelSet
from .expr import AnalyticFunction, parse_function, rpow, var
from .process import CyclicBlocks, Schedule


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    f: AnalyticFunction
    domain: Domain
    suggested_starts: tuple[tuple[float, ...], ...]
    known_critical_points: tuple[tuple[tuple[float, ...], str], ...]
    schedule_default: Schedule
    notes: str = ""
    variables: tuple[str, ...] = ()
    # random starts are drawn from {phi <= start_level} (or the domain shrunk
    # by half when None); descent keeps every step inside that sublevel set
    start_level: float | None = None
    extras: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.f.arity


def sample_starts(scenario: Scenario, n: int, seed: int) -> np.ndarray:
    """n random interior starts (reproducible for a given seed)."""
    dom = scenario.domain
    if scenario.start_level is None:
        return dom.sample_interior(n, seed, shrink=0.5)
    rng_seed = seed
    out: list[np.ndarray] = []
    while len(out) < n:
        cand = dom.sample_interior(max(4 * n, 64), rng_seed)
        keep = scenario.f.batch_values(cand) < scenario.start_level
        out.extend(cand[keep][: n - len(out)])
        rng_seed += 1_000_003
    return np.array(out)


def _quadratic_ab(a: float = 2.0, b: float = 1.0) -> Scenario:
    names = ("x", "y")
    f = parse_function(f"{a!r}*(x + y)**2 + {b!r}*(x - y)**2", names)
    lam_min = 2 * min(a, b)
    return Scenario(
        "quadratic_ab", f, Ball([0.0, 0.0], 4.0),
        ((1.0, 1.0),), (((0.0, 0.0), "minimum"),), CyclicBlocks(1, 2),
        notes=("Axis steps contract by (a-b)/(a+b) each.  The component-wise sign "
               "condition fails on parts of the boundary circle; starts are drawn from "
               f"phi < {lam_min * 4.0 ** 2 / 2:g}, a sublevel set inside the disk."),
        variables=names, start_level=lam_min * 4.0 ** 2 / 2,
        extras={"a": a, "b": b})


def _zigzag3d() -> Scenario:
    names = ("x", "y", "z")
    f = parse_function("(x - z)**2 + 2*(x + z)**2 - 2*y*(3*x + z)", names)
    return Scenario(
        "zigzag3d", f, Ball([0.0, 0.0, 0.0], 2.0),
        ((0.0, 0.5, 0.5),), (((0.0, 0.0, 0.0), "saddle"),), CyclicBlocks(1, 3),
        notes=("Unique critical point at the origin, a saddle of index 1.  phi is linear "
               "in y, so a y-step is bounded only where 3x + z = 0; elsewhere it runs to "
               "the boundary.  The sign condition fails on the sphere."),
        variables=names)


def _saddle_basin2d() -> Scenario:
    names = ("x", "y")
    f = parse_function("x**4/4 - x**2/2 + y**2", names)
    dom = LevelSet((f - 2.0,), [0.0, 0.0], ([-2.0, -2.0], [2.0, 2.0]))
    return Scenario(
        "saddle_basin2d", f, dom,
        ((0.0, 0.5), (0.5, 0.5), (-0.7, -0.4)),
        (((-1.0, 0.0), "minimum"), ((1.0, 0.0), "minimum"), ((0.0, 0.0), "saddle")),
        CyclicBlocks(1, 2),
        notes=("Minima at (+-1, 0) and a saddle at 0.  Every start on the line x = 0 "
               "reaches the saddle: the y-step lands on it and the x-step is trivial.  "
               "The domain is {phi <= 2}, whose defining gradient equals grad phi."),
        variables=names, start_level=1.5,
        extras={"trapping_slice": [1],
                "perturbation": {"o": [0.4, 0.3], "p": [1.0, 0.0], "k": 1, "b": 1e-3}})


def _finite_hit2d() -> Scenario:
    names = ("x", "y")
    f = parse_function("x**2 + (y - x**2 - x)**2", names)
    dom = LevelSet((f - 2.0,), [0.0, 0.0], ([-1.5, -1.7], [1.5, 5.2]))
    return Scenario(
        "finite_hit2d", f, dom,
        ((0.0, 1.0), (0.6, 0.4)), (((0.0, 0.0), "minimum"),), CyclicBlocks(1, 2),
        notes=("Unique minimum at 0.  A y-step from a point with x = 0 lands exactly on "
               "the minimum, so such starts finish after one nontrivial step.  From any "
               "other start an x-step ends at x = 0 only if y = 0 already, so the process "
               "needs infinitely many steps.  The domain is {phi <= 2}."),
        variables=names, start_level=1.5)


def _navfn_demo(kappa: int = 4, rho: float = 0.1, radius: float = 1.0,
                targets: Sequence[float] = (0.4, 0.3, -0.4, -0.2)) -> Scenario:
    names = ("y1", "y2", "y3", "y4")
    x1, y1, x2, y2 = (var(j) for j in range(4))
    t = [float(c) for c in targets]
    gamma = (x1 - t[0]) ** 2 + (y1 - t[1]) ** 2 + (x2 - t[2]) ** 2 + (y2 - t[3]) ** 2
    room = (radius - rho) ** 2
    b1 = room - x1 ** 2 - y1 ** 2
    b2 = room - x2 ** 2 - y2 ** 2
    b3 = (x1 - x2) ** 2 + (y1 - y2) ** 2 - (2 * rho) ** 2
    phi = gamma / rpow(gamma ** int(kappa) + b1 * b2 * b3, 1.0 / kappa)
    f = AnalyticFunction(phi, 4)
    lim = radius - rho
    dom = LevelSet(tuple(AnalyticFunction(-b, 4) for b in (b1, b2, b3)), t,
                   ([-lim] * 4, [lim] * 4))
    return Scenario(
        "navfn_demo", f, dom,
        ((-0.3, -0.3, 0.3, 0.3), (0.0, 0.6, 0.0, -0.6)),
        ((tuple(t), "minimum"),), CyclicBlocks(2, 2),
        notes=("Two disk robots of radius rho in a disk workspace; block 1 moves robot 1 "
               "and block 2 moves robot 2.  phi = gamma / (gamma^kappa + beta)^(1/kappa) "
               "with gamma the squared distance to the targets and beta the product of "
               "clearances.  phi = 1 on the boundary, where grad phi is a positive multiple "
               "of the active defining gradient."),
        variables=names, start_level=0.6,
        extras={"kappa": kappa, "rho": rho, "radius": radius, "targets": t})


_BUILDERS: dict[str, tuple[Callable[..., Scenario], int, str]] = {
    "quadratic_ab": (_quadratic_ab, 2, "a(x+y)^2 + b(x-y)^2; axis steps never reach 0"),
    "zigzag3d": (_zigzag3d, 3, "3-D quadratic with an index-1 saddle at 0"),
    "saddle_basin2d": (_saddle_basin2d, 2, "double well whose x = 0 line is trapped by the saddle"),
    "finite_hit2d": (_finite_hit2d, 2, "x^2 + (y - x^2 - x)^2; starts on x = 0 hit 0 in one step"),
    "navfn_demo": (_navfn_demo, 4, "navigation potential for two disk robots"),
}


def builtin(name: str, **params) -> Scenario:
    """The named example; keyword parameters reach its constructor."""
    try:
        build = _BUILDERS[name][0]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(_BUILDERS)}") from None
    return build(**params)


def list_scenarios() -> list[tuple[str, int, str]]:
    return [(name, dim, text) for name, (_, dim, text) in _BUILDERS.items()]


__all__: Sequence[str] = ["Scenario", "builtin", "list_scenarios", "sample_starts"]
