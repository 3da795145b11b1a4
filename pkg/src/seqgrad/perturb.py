"""Radial analytic perturbations that keep a chosen minimum fixed.

h(x) = x + b (x - o) a sinc(a |x - o|^2) with a = 2 pi k / |o - p|^2 moves
points radially about o, fixes o, and fixes p because sin(a |o - p|^2) = 0.
Composing f with h keeps p a critical point of the same kind while bending
the slices relative to f's stable sets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .domain import Domain
from .expr import AnalyticFunction, AnalyticMap, Expr, compose, const, sinc, var
from .process import (CriticalPointInfo, Schedule, StoppingCriteria, classify_point,
                      run_process)
from .sliceflow import FlowSettings


@lru_cache(maxsize=1)
def radial_stretch_sup() -> float:
    """sup over s >= 0 of |2 cos s - sinc s|.

    The radial profile of h has derivative 1 + b a (2 cos s - sinc s) at
    s = a r^2, so h is a diffeomorphism whenever b a times this number is
    below 1.  For large s the term is at most 2 + 1/s, so a scan of [0, 60]
    followed by a local refinement finds the supremum.
    """
    def neg(s):
        return -abs(2.0 * math.cos(s) - (math.sin(s) / s if s else 1.0))

    grid = np.linspace(0.0, 60.0, 600_001)
    with np.errstate(invalid="ignore"):
        vals = np.abs(2 * np.cos(grid) - np.sinc(grid / np.pi))
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return max(float(vals[i]), -float(res.fun))


@dataclass(frozen=True, eq=False)
class RadialPerturbation:
    o: np.ndarray
    p: np.ndarray
    k: int
    b: float

    def __post_init__(self):
        object.__setattr__(self, "o", np.asarray(self.o, dtype=float))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        if self.o.shape != self.p.shape or self.o.ndim != 1:
            raise ValueError("o and p must be points of the same dimension")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if not self.b >= 0:
            raise ValueError("b must be nonnegative")
        if float(np.sum((self.p - self.o) ** 2)) == 0.0:
            raise ValueError("o and p must differ")
        bound = self.injectivity_bound
        if self.b >= bound:
            raise ValueError(f"b = {self.b:g} breaks injectivity; it must be below {bound:.6g}")

    @property
    def dim(self) -> int:
        return self.o.shape[0]

    @property
    def a(self) -> float:
        return 2.0 * math.pi * self.k / float(np.sum((self.p - self.o) ** 2))

    @property
    def injectivity_bound(self) -> float:
        """Largest b (exclusive) for which h is a diffeomorphism."""
        return 1.0 / (self.a * radial_stretch_sup())


def make_h(pert: RadialPerturbation) -> AnalyticMap:
    """The map x -> x + b (x - o) a sinc(a |x - o|^2) as an analytic map."""
    o = [float(c) for c in pert.o]
    shifted = [var(j) - o[j] for j in range(pert.dim)]
    r2: Expr = shifted[0] * shifted[0]
    for s in shifted[1:]:
        r2 = r2 + s * s
    a = pert.a
    w = const(pert.b * a) * sinc(const(a) * r2)
    return AnalyticMap(tuple(var(j) + shifted[j] * w for j in range(pert.dim)), pert.dim)


def perturb_function(f: AnalyticFunction, pert: RadialPerturbation) -> AnalyticFunction:
    """psi = f o h."""
    if f.arity != pert.dim:
        raise ValueError(f"function arity {f.arity} does not match perturbation dimension {pert.dim}")
    return compose(f, make_h(pert))


def newton_critical_point(f: AnalyticFunction, x0, tol: float = 1e-12,
                          max_iter: int = 50) -> tuple[np.ndarray, bool]:
    """Newton iteration on grad f = 0 with step halving on the gradient norm."""
    x = np.asarray(x0, dtype=float).copy()
    _, g, H = f.value_gradient_hessian(x)
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= tol:
            return x, True
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            return x, False
        lam = 1.0
        while lam > 1e-6:
            cand = x + lam * step
            _, gc, Hc = f.value_gradient_hessian(cand)
            if np.linalg.norm(gc) < gn:
                break
            lam *= 0.5
        else:
            return x, False
        x, g, H = cand, gc, Hc
    return x, bool(np.linalg.norm(g) <= tol)


@dataclass(frozen=True)
class PersistenceReport:
    point: tuple[float, ...]
    distance: float
    converged: bool
    info: CriticalPointInfo

    @property
    def is_minimum(self) -> bool:
        return self.converged and self.info.classification == "minimum"


def minimum_persistence(f: AnalyticFunction, pert: RadialPerturbation,
                        eps_crit: float = 1e-8) -> PersistenceReport:
    """Polish a critical point of f o h starting from p and classify it."""
    psi = perturb_function(f, pert)
    x, ok = newton_critical_point(psi, pert.p)
    info = classify_point(psi, x, eps_crit)
    return PersistenceReport(tuple(x.tolist()), float(np.linalg.norm(x - pert.p)), ok, info)


def max_displacement(pert: RadialPerturbation, X) -> float:
    """max |h(x) - x| over the rows of X."""
    h = make_h(pert)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = [h.component(j).batch_values(X) for j in range(pert.dim)]
    return float(np.max(np.linalg.norm(np.stack(cols, axis=1) - X, axis=1)))


def max_function_change(f: AnalyticFunction, pert: RadialPerturbation, X) -> float:
    """max |f(h(x)) - f(x)| over the rows of X."""
    psi = perturb_function(f, pert)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return float(np.max(np.abs(psi.batch_values(X) - f.batch_values(X))))


@dataclass(frozen=True)
class EscapeReport:
    trials: int
    to_minimum: int
    to_saddle: int
    unresolved: int
    limits: tuple[tuple[float, ...] | None, ...]

    def fraction(self, count: int) -> float:
        return count / self.trials if self.trials else 0.0

    @property
    def saddle_fraction(self) -> float:
        return self.fraction(self.to_saddle)

    @property
    def minimum_fraction(self) -> float:
        return self.fraction(self.to_minimum)


def escape_starts(saddle, trials: int, offset: float, seed: int,
                  along: Sequence[int] | None = None) -> np.ndarray:
    """Random points within ``offset`` of the saddle, never the saddle itself.

    With ``along`` the displacement is confined to those coordinates, so the
    starts lie on the slice of that type through the saddle.
    """
    saddle = np.asarray(saddle, dtype=float)
    idx = list(range(saddle.shape[0])) if along is None else sorted(set(along))
    rng = np.random.default_rng(seed)
    out = np.repeat(saddle[None, :], trials, axis=0)
    for i in range(trials):
        while True:
            u = rng.standard_normal(len(idx))
            u *= offset * rng.random() ** (1.0 / len(idx)) / np.linalg.norm(u)
            if np.any(u != 0):
                break
        out[i, idx] += u
    return out


def saddle_escape_test(f: AnalyticFunction, pert: RadialPerturbation | None, domain: Domain,
                       saddle, trials: int, offset: float = 1e-3,
                       schedule: Schedule | None = None, flow: FlowSettings = FlowSettings(),
                       stop: StoppingCriteria = StoppingCriteria(), seed: int = 0,
                       along: Sequence[int] | None = None) -> EscapeReport:
    """Run the process from starts near a saddle of f and tally the limits.

    The process runs on f o h (or on f itself when ``pert`` is None).  A run
    counts toward a minimum or a saddle by the classification of its limit;
    runs that end in an error, hit the step limit, or stop at a degenerate
    point are unresolved.
    """
    if schedule is None:
        raise ValueError("a schedule is required")
    psi = f if pert is None else perturb_function(f, pert)
    if trials == 0:
        return EscapeReport(0, 0, 0, 0, ())
    counts = {"minimum": 0, "saddle": 0}
    limits = []
    unresolved = 0
    for q0 in escape_starts(saddle, trials, offset, seed, along):
        run = run_process(psi, domain, q0, schedule, flow, stop, keep_trajectories=False)
        v = run.verdict
        kind = v.info.classification if v.status == "converged" else None
        if kind in counts:
            counts[kind] += 1
        else:
            unresolved += 1
        limits.append(v.point if v.status == "converged" else None)
    return EscapeReport(trials, counts["minimum"], counts["saddle"], unresolved, tuple(limits))


__all__: Sequence[str] = [
    "EscapeReport", "PersistenceReport", "RadialPerturbation", "escape_starts", "make_h",
    "max_displacement", "max_function_change", "minimum_persistence", "newton_critical_point",
    "perturb_function", "radial_stretch_sup", "saddle_escape_test",
]
