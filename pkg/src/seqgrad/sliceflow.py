"""Projected gradient flow on one slice.

A slice of type ``free`` through a point ``a`` keeps every coordinate outside
``free`` equal to ``a``'s.  On it, the projected field is minus the gradient
with the frozen components removed.  :func:`integrate_slice` follows that
field from a start point until it is stationary, using an adaptive
Dormand-Prince 5(4) pair whose accepted steps must not increase the function,
and then polishes the end point with a damped Newton iteration on the
restricted first-order conditions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import Domain
from .expr import AnalyticFunction, EvaluationError

STATIONARY = "stationary"
TIME_BUDGET = "time_budget"
LEFT_DOMAIN = "left_domain"

# bound on h * (spectral radius of the restricted Hessian); the DOPRI5
# stability polynomial is in (0.17, 1) on [-2.5, 0], so steps contract
STABLE_H_LAMBDA = 2.5

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


@dataclass(frozen=True)
class FlowSettings:
    eps_stat: float = 1e-9
    h_init: float = 1e-3
    h_min: float = 1e-14
    h_max: float = 10.0
    rtol: float = 1e-8
    atol: float = 1e-12
    t_max: float = 1e4
    newton_polish: bool = True
    newton_tol: float = 1e-12
    max_polish_iters: int = 20
    polish_radius: float = 1e-4
    domain_tol: float = 1e-8
    descent_slack: float = 1e-10
    max_integrator_steps: int = 200_000

    def __post_init__(self):
        if not 0 < self.h_min <= self.h_init <= self.h_max:
            raise ValueError("need 0 < h_min <= h_init <= h_max")
        if min(self.eps_stat, self.rtol, self.atol, self.t_max, self.newton_tol,
               self.polish_radius) <= 0:
            raise ValueError("tolerances and budgets must be positive")


@dataclass(eq=False)
class Trajectory:
    """Samples of one slice flow; ``x`` has one row per sample."""

    free: tuple[int, ...]
    t: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    grad_norm: np.ndarray
    slice_grad_norm: np.ndarray
    termination_reason: str
    polish: str = "skipped"

    @property
    def terminal(self) -> np.ndarray:
        return self.x[-1]

    @property
    def arc_length(self) -> float:
        return arc_length(self)

    def __len__(self) -> int:
        return len(self.t)


def arc_length(traj: Trajectory) -> float:
    """Sum of chord lengths between consecutive samples."""
    if len(traj.x) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(traj.x, axis=0), axis=1)))


def project_gradient(f: AnalyticFunction, x, free: Sequence[int]) -> np.ndarray:
    """-grad f(x) with the components outside ``free`` set to zero."""
    g = f.gradient(x)
    out = np.zeros_like(g)
    idx = list(free)
    out[idx] = -g[idx]
    return out


def _norm(v) -> float:
    return math.sqrt(sum(c * c for c in v))


def integrate_slice(f: AnalyticFunction, domain: Domain, start, free: Sequence[int],
                    settings: FlowSettings = FlowSettings()) -> Trajectory:
    """Follow the projected field from ``start`` on the slice of type ``free``.

    The returned trajectory always ends at the last accepted point; its
    ``termination_reason`` says whether that point is stationary or whether
    the flow ran out of time or tried to leave the domain.
    """
    free = tuple(sorted(set(int(j) for j in free)))
    if not free:
        raise ValueError("a slice needs at least one free coordinate")
    if free[0] < 0 or free[-1] >= f.arity:
        raise ValueError(f"free indices {free} out of range")
    x0 = np.asarray(start, dtype=float)
    if x0.shape != (f.arity,) or not np.all(np.isfinite(x0)):
        raise ValueError("start must be a finite point of matching dimension")

    slice_fn = f._compiled(1, free, False)
    curv_fn = f._compiled(2, free, False)
    full_fn = f._compiled(1, tuple(range(f.arity)), False)
    buf = x0.tolist()
    k = len(free)
    s = settings

    def field(y):
        for a, j in enumerate(free):
            buf[j] = y[a]
        try:
            v, g = slice_fn(buf)
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise EvaluationError(str(exc)) from exc
        if not math.isfinite(v):
            raise EvaluationError("non-finite value during slice flow")
        return v, [-c for c in g]

    def h_cap(y):
        # explicit steps must stay inside the stability region of the linearised flow
        for a, j in enumerate(free):
            buf[j] = y[a]
        H = curv_fn(buf)[2]
        rho = max(sum(abs(c) for c in row) for row in H)
        return s.h_max if rho <= 0 else min(s.h_max, STABLE_H_LAMBDA / rho)

    ts, xs, phis, gns, sgns = [], [], [], [], []

    def record(t, y, v, sg):
        for a, j in enumerate(free):
            buf[j] = y[a]
        _, g = full_fn(buf)
        ts.append(t)
        xs.append(list(buf))
        phis.append(v)
        gns.append(_norm(g))
        sgns.append(sg)

    y = [buf[j] for j in free]
    v, k1 = field(y)
    record(0.0, y, v, _norm(k1))
    if _norm(k1) <= s.eps_stat:
        return _finish(free, ts, xs, phis, gns, sgns, STATIONARY, "skipped")

    t = 0.0
    cap = h_cap(y)
    h = min(s.h_init, cap)
    reason = None
    steps = 0
    while reason is None:
        if t >= s.t_max or steps >= s.max_integrator_steps:
            reason = TIME_BUDGET
            break
        steps += 1
        h = min(h, cap, s.t_max - t)
        stages = [k1]
        for i in range(1, 6):
            yi = [y[a] + h * sum(_A[i][m] * stages[m][a] for m in range(i)) for a in range(k)]
            stages.append(field(yi)[1])
        y5 = [y[a] + h * sum(_B[m] * stages[m][a] for m in range(6)) for a in range(k)]
        v5, k7 = field(y5)
        stages.append(k7)
        err = 0.0
        for a in range(k):
            e = h * sum(_E[m] * stages[m][a] for m in range(7))
            sc = s.atol + s.rtol * max(abs(y[a]), abs(y5[a]))
            err += (e / sc) ** 2
        err = math.sqrt(err / k)
        if err > 1.0:
            h *= max(0.2, 0.9 * err ** -0.2)
            if h < s.h_min:
                reason = TIME_BUDGET
            continue
        if v5 > v + s.descent_slack:
            h *= 0.5
            if h < s.h_min:
                reason = TIME_BUDGET
            continue
        for a, j in enumerate(free):
            buf[j] = y5[a]
        if not domain.contains(np.array(buf), s.domain_tol):
            h *= 0.5
            if h < s.h_min:
                reason = LEFT_DOMAIN
            continue
        t += h
        y, v, k1 = y5, v5, k7
        sg = _norm(k7)
        record(t, y, v, sg)
        cap = h_cap(y)
        h = min(cap, h * (5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))))
        if sg <= s.eps_stat:
            reason = STATIONARY

    polish = "off"
    if reason == STATIONARY and s.newton_polish:
        polish = _polish(f, domain, free, xs, ts, phis, gns, sgns, s)
    return _finish(free, ts, xs, phis, gns, sgns, reason, polish)


def _finish(free, ts, xs, phis, gns, sgns, reason, polish) -> Trajectory:
    return Trajectory(free, np.array(ts), np.array(xs), np.array(phis), np.array(gns),
                      np.array(sgns), reason, polish)


def _polish(f, domain, free, xs, ts, phis, gns, sgns, s: FlowSettings) -> str:
    """Damped Newton on the restricted gradient, appended as a final sample.

    Iterates must stay within ``polish_radius`` of the flow's end point and
    inside the domain, and may not raise f by more than 1e-12.
    """
    idx = list(free)
    x_end = np.array(xs[-1])
    f_end = phis[-1]
    x = x_end.copy()
    v, g, H = f.value_gradient_hessian(x, free)
    status = "stalled"
    for _ in range(s.max_polish_iters):
        if np.linalg.norm(g) <= s.newton_tol:
            status = "converged"
            break
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            status = "degenerate"
            break
        if np.linalg.cond(H) > 1e13:
            status = "degenerate"
            break
        lam = 1.0
        for _ in range(12):
            cand = x.copy()
            cand[idx] += lam * delta
            if (np.linalg.norm(cand - x_end) <= s.polish_radius
                    and domain.contains(cand, s.domain_tol)):
                vc, gc, Hc = f.value_gradient_hessian(cand, free)
                if vc <= f_end + 1e-12 and np.linalg.norm(gc) < np.linalg.norm(g):
                    break
            lam *= 0.5
        else:
            break
        x, v, g, H = cand, vc, gc, Hc
    else:
        if np.linalg.norm(g) <= s.newton_tol:
            status = "converged"
    if np.array_equal(x, x_end):
        return status
    _, gfull = f.value_and_gradient(x)
    ts.append(ts[-1])
    xs.append(x.tolist())
    phis.append(v)
    gns.append(float(np.linalg.norm(gfull)))
    sgns.append(float(np.linalg.norm(g)))
    return status
