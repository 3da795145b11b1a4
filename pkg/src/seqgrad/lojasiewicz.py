"""Gradient-inequality constants near a critical point, and what they imply.

Near a critical point q of an analytic f there are c > 0 and mu in [0, 1)
with |grad f(x)| > c |f(x) - f(q)|^mu.  :func:`estimate_exponent` recovers a
valid pair from samples, :func:`angle_condition` measures how well a slice
flow follows the full descent direction, and :func:`length_bound_check`
tests the resulting bound on the total length of process steps near q.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import AnalyticFunction
from .process import ProcessRun
from .sliceflow import Trajectory

MIN_GAP = 1e-14


@dataclass(frozen=True)
class LojaEstimate:
    center: tuple[float, ...]
    radius: float
    c: float
    mu: float
    phi_at_center: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not 0 <= self.mu < 1:
            raise ValueError("mu must lie in [0, 1)")


class EstimationError(ValueError):
    """Too few usable samples, or a fitted exponent outside [0, 1)."""


def sample_ball(center, r: float, n: int, seed: int) -> np.ndarray:
    """n points uniform in the ball of radius r about center."""
    center = np.asarray(center, dtype=float)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, center.shape[0]))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = r * rng.random(n) ** (1.0 / center.shape[0])
    return center + g * rad[:, None]


def _gaps_and_slopes(f: AnalyticFunction, q, X, fq):
    v, G = f.batch_value_and_gradient(X)
    return np.abs(v - fq), np.linalg.norm(G, axis=1)


def estimate_exponent(f: AnalyticFunction, q, r: float, nsamples: int = 20_000,
                      seed: int = 0, eps_crit: float = 1e-6, bins: int = 16,
                      percentile: float = 5.0, safety: float = 0.9) -> LojaEstimate:
    """Fit (c, mu) on the lower envelope of log|grad f| against log|f - f(q)|.

    Samples are grouped into bins of log distance from q.  Inside a bin the
    envelope point is the mean of the samples whose residual against the
    current line is at or below the ``percentile``; the line is refit by
    least squares on those points until the slope settles.  The returned c
    is ``safety`` times the smaller of the fitted constant and the smallest
    ratio |grad f| / |f - f(q)|^mu over all retained samples.
    """
    q = np.asarray(q, dtype=float)
    if not r > 0:
        raise ValueError("radius must be positive")
    fq, gq = f.value_and_gradient(q)
    if np.linalg.norm(gq) > eps_crit:
        raise ValueError(f"|grad f(q)| = {np.linalg.norm(gq):.3g} exceeds {eps_crit:g}; "
                         f"q is not a critical point")
    X = sample_ball(q, r, nsamples, seed)
    d, g = _gaps_and_slopes(f, q, X, fq)
    keep = (d >= MIN_GAP) & (g > 0)
    if keep.sum() < 10 * bins:
        raise EstimationError(f"only {int(keep.sum())} usable samples")
    ld, lg = np.log(d[keep]), np.log(g[keep])
    lr = np.log(np.linalg.norm(X[keep] - q, axis=1))
    edges = np.linspace(lr.min(), lr.max(), bins + 1)
    which = np.clip(np.digitize(lr, edges) - 1, 0, bins - 1)

    mu, b = np.polyfit(ld, lg, 1)
    for _ in range(20):
        res = lg - mu * ld
        px, py = [], []
        for i in range(bins):
            m = which == i
            if m.sum() < 10:
                continue
            low = m & (res <= np.percentile(res[m], percentile))
            px.append(ld[low].mean())
            py.append(lg[low].mean())
        if len(px) < 3:
            raise EstimationError("too few populated bins for an envelope fit")
        new_mu, b = np.polyfit(px, py, 1)
        done = abs(new_mu - mu) < 1e-10
        mu = new_mu
        if done:
            break
    if not 0 <= mu < 1:
        raise EstimationError(f"fitted exponent {mu:.4g} is outside [0, 1); "
                              f"the critical point looks degenerate")
    ratio = float(np.min(np.exp(lg - mu * ld)))
    c = safety * min(float(np.exp(b)), ratio)
    return LojaEstimate(tuple(q.tolist()), float(r), c, float(mu), fq)


def verify_inequality(f: AnalyticFunction, est: LojaEstimate, nsamples: int = 10_000,
                      seed: int = 1) -> bool:
    """|grad f| > c |f - f(q)|^mu at fresh samples with |f - f(q)| >= 1e-14."""
    return bool(inequality_margin(f, est, nsamples, seed) > 0)


def inequality_margin(f: AnalyticFunction, est: LojaEstimate, nsamples: int = 10_000,
                      seed: int = 1) -> float:
    """Smallest |grad f| - c |f - f(q)|^mu over fresh samples (inf if none count)."""
    X = sample_ball(est.center, est.radius, nsamples, seed)
    d, g = _gaps_and_slopes(f, est.center, X, est.phi_at_center)
    m = d >= MIN_GAP
    if not m.any():
        return float("inf")
    return float(np.min(g[m] - est.c * d[m] ** est.mu))


@dataclass(frozen=True)
class AngleReport:
    delta_min: float
    deltas: np.ndarray
    free: tuple[int, ...]


def angle_condition(f: AnalyticFunction, traj: Trajectory,
                    free: Sequence[int] | None = None) -> AngleReport:
    """delta = |restricted gradient| / |gradient| at each trajectory sample.

    Along a slice flow the velocity is the restricted field, so delta is the
    sharpest constant in <grad f, velocity> <= -delta |grad f| |velocity|.
    delta is 0 where the gradient vanishes.
    """
    free = tuple(traj.free if free is None else free)
    _, G = f.batch_value_and_gradient(traj.x)
    full = np.linalg.norm(G, axis=1)
    part = np.linalg.norm(G[:, list(free)], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        deltas = np.where(full > 0, part / np.where(full > 0, full, 1.0), 0.0)
    deltas = np.minimum(deltas, 1.0)
    return AngleReport(float(deltas.min()), deltas, free)


class NoQualifyingStep(ValueError):
    """No stationary point in the ball satisfies the length-bound hypothesis."""


@dataclass(frozen=True)
class LengthBoundReport:
    l: int
    r: float
    c_prime: float
    hypothesis_value: float
    hypothesis_holds: bool
    total_length: float
    bound_holds: bool
    n: int
    slack: float


def length_bound_check(run: ProcessRun, est: LojaEstimate, safety: float = 1.05,
                       slack: float = 1e-3) -> LengthBoundReport:
    """Total length of the steps after the first qualifying q_l, inside the ball.

    With c' = safety / (c (1 - mu)), q_l qualifies when it lies in the ball
    of radius r about the estimate's center, phi(q_l) > phi(q), and
    c' (phi(q_l) - phi(q))^(1 - mu) < r.  Steps l+1..n are summed while
    q_l..q_n stay in the ball; the bound holds when the sum is at most
    r (1 + slack).
    """
    if not safety > 1:
        raise ValueError("safety factor must exceed 1")
    q = np.asarray(est.center)
    r = est.radius
    c_prime = safety / (est.c * (1.0 - est.mu))
    pts = run.points
    gaps = run.phis - est.phi_at_center
    inside = np.linalg.norm(pts - q, axis=1) < r
    for l in range(len(pts)):
        if inside[l] and gaps[l] > 0:
            hv = c_prime * gaps[l] ** (1.0 - est.mu)
            if hv < r:
                break
    else:
        raise NoQualifyingStep(f"no stationary point within radius {r:g} satisfies the "
                               f"length-bound hypothesis")
    n = l
    while n + 1 < len(pts) and inside[n + 1]:
        n += 1
    total = float(sum(s.arc_length for s in run.steps[l:n]))
    return LengthBoundReport(l, r, c_prime, float(hv), True, total,
                             total <= r * (1.0 + slack), n, slack)


__all__: Sequence[str] = [
    "AngleReport", "EstimationError", "LengthBoundReport", "LojaEstimate", "NoQualifyingStep",
    "angle_condition", "estimate_exponent", "inequality_margin", "length_bound_check",
    "sample_ball", "verify_inequality",
]
