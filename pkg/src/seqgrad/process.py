"""The sequential gradient process: schedules, the step loop, classification.

Step k integrates the projected flow on the slice of type ``block(k)``
through the previous stationary point q_{k-1}; its limit is q_k.  Index sets
are 0-based tuples here; files written by the command line use 1-based
coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .domain import Domain
from .expr import AnalyticFunction, EvaluationError
from .sliceflow import STATIONARY, FlowSettings, Trajectory, integrate_slice


def _index_set(block, dim: int) -> tuple[int, ...]:
    out = tuple(sorted(set(int(j) for j in block)))
    if not out:
        raise ValueError("index sets must be nonempty")
    if out[0] < 0 or out[-1] >= dim:
        raise ValueError(f"index set {out} is not inside 0..{dim - 1}")
    return out


@dataclass(frozen=True)
class CyclicBlocks:
    """Consecutive blocks of ``d`` coordinates, visited as m_k = (k mod N) + 1.

    With the plain formula the first step uses block 2 whenever N >= 2;
    ``first_block`` (1-based) shifts the cycle so step 1 uses that block.
    """

    d: int
    N: int
    first_block: int | None = None

    def __post_init__(self):
        if self.d < 1 or self.N < 1:
            raise ValueError("d and N must be positive")
        if self.first_block is not None and not 1 <= self.first_block <= self.N:
            raise ValueError(f"first_block must be in 1..{self.N}")

    @property
    def dim(self) -> int:
        return self.d * self.N

    @property
    def period(self) -> int:
        return self.N

    def block_number(self, k: int) -> int:
        shift = 0 if self.first_block is None else (self.first_block - 2) % self.N
        return (k + shift) % self.N + 1

    def block(self, k: int) -> tuple[int, ...]:
        if k < 1:
            raise ValueError("steps are numbered from 1")
        m = self.block_number(k)
        return tuple(range(self.d * (m - 1), self.d * m))

    def describe(self) -> dict:
        return {"kind": "cyclic", "d": self.d, "N": self.N, "first_block": self.first_block}


@dataclass(frozen=True)
class ExplicitSets:
    """A finite list of index sets repeated cyclically."""

    sets: tuple[tuple[int, ...], ...]
    dim: int

    def __post_init__(self):
        if not self.sets:
            raise ValueError("need at least one index set")
        object.__setattr__(self, "sets", tuple(_index_set(s, self.dim) for s in self.sets))

    @property
    def period(self) -> int:
        return len(self.sets)

    def block(self, k: int) -> tuple[int, ...]:
        if k < 1:
            raise ValueError("steps are numbered from 1")
        return self.sets[(k - 1) % len(self.sets)]

    def describe(self) -> dict:
        return {"kind": "explicit", "sets": [list(s) for s in self.sets], "dim": self.dim}


@dataclass(frozen=True)
class RandomFair:
    """Blocks drawn at random, with every index revisited within ``window`` steps.

    Draws are uniform over ``blocks`` except when some index has gone
    ``window - dim + 1`` steps unvisited; then a block containing the most
    overdue index is drawn instead.  At most ``dim`` indices can be overdue at
    once, so no gap exceeds ``window``.
    """

    blocks: tuple[tuple[int, ...], ...]
    dim: int
    seed: int
    window: int
    _drawn: list = field(default_factory=list, init=False, repr=False, compare=False)
    _state: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("need at least one block")
        object.__setattr__(self, "blocks", tuple(_index_set(b, self.dim) for b in self.blocks))
        covered = set().union(*self.blocks)
        if len(covered) != self.dim:
            missing = sorted(set(range(self.dim)) - covered)
            raise ValueError(f"blocks never cover indices {missing}")
        if self.window < self.dim:
            raise ValueError("window must be at least the dimension")

    @property
    def period(self) -> int:
        return self.window

    def block(self, k: int) -> tuple[int, ...]:
        if k < 1:
            raise ValueError("steps are numbered from 1")
        if not self._state:
            self._state["rng"] = np.random.default_rng(self.seed)
            self._state["last"] = [0] * self.dim
        rng, last = self._state["rng"], self._state["last"]
        while len(self._drawn) < k:
            step = len(self._drawn) + 1
            gaps = [step - t for t in last]
            j = int(np.argmax(gaps))
            if gaps[j] >= self.window - self.dim + 1:
                choices = [b for b in self.blocks if j in b]
            else:
                choices = list(self.blocks)
            b = choices[int(rng.integers(len(choices)))]
            for i in b:
                last[i] = step
            self._drawn.append(b)
        return self._drawn[k - 1]

    def describe(self) -> dict:
        return {"kind": "random_fair", "blocks": [list(b) for b in self.blocks],
                "dim": self.dim, "seed": self.seed, "window": self.window}


Schedule = CyclicBlocks | ExplicitSets | RandomFair


def next_block(schedule: Schedule, k: int) -> tuple[int, ...]:
    return schedule.block(k)


@dataclass(frozen=True)
class FairnessReport:
    passed: bool
    horizon: int
    max_gap: tuple[int | None, ...]
    missing: tuple[int, ...]


def fairness_check(schedule: Schedule, horizon: int | None = None,
                   dim: int | None = None) -> FairnessReport:
    """Gaps between visits of each index over ``horizon`` steps.

    Passes when every index is visited within the first period and no gap
    between consecutive visits exceeds the period.  ``dim`` overrides the
    schedule's own dimension (to test a schedule against a larger problem).
    """
    dim = schedule.dim if dim is None else dim
    period = schedule.period
    horizon = 3 * period if horizon is None else horizon
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    visits: list[list[int]] = [[] for _ in range(dim)]
    for k in range(1, horizon + 1):
        for j in schedule.block(k):
            if j < dim:
                visits[j].append(k)
    missing = tuple(j for j in range(dim) if not visits[j] or visits[j][0] > period)
    max_gap = tuple(max(np.diff(v), default=None) if len(v) > 1 else None for v in visits)
    max_gap = tuple(None if g is None else int(g) for g in max_gap)
    too_long = any(g is not None and g > period for g in max_gap)
    return FairnessReport(not missing and not too_long, horizon, max_gap, missing)


@dataclass(frozen=True)
class StoppingCriteria:
    eps_crit: float = 1e-7
    eps_move: float = 1e-10
    window: int | None = None
    max_steps: int = 10_000
    eps_eig: float = 1e-6

    def __post_init__(self):
        if self.eps_crit <= 0 or self.eps_move <= 0 or self.eps_eig <= 0:
            raise ValueError("stopping thresholds must be positive")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be at least 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")


@dataclass(frozen=True)
class CriticalPointInfo:
    point: tuple[float, ...]
    grad_norm: float
    eigenvalues: tuple[float, ...] | None
    morse_index: int | None
    nondegenerate: bool
    classification: str


def classify_point(f: AnalyticFunction, q, eps_crit: float = 1e-7,
                   eps_eig: float = 1e-6) -> CriticalPointInfo:
    """Morse data at q when |grad f(q)| <= eps_crit, else ``not_critical``.

    An eigenvalue counts as zero when its magnitude is at most ``eps_eig``
    times the largest magnitude.
    """
    q = np.asarray(q, dtype=float)
    _, g, H = f.value_gradient_hessian(q)
    gn = float(np.linalg.norm(g))
    if gn > eps_crit:
        return CriticalPointInfo(tuple(q.tolist()), gn, None, None, False, "not_critical")
    lam = np.linalg.eigvalsh(0.5 * (H + H.T))
    scale = float(np.max(np.abs(lam)))
    nondeg = scale > 0 and float(np.min(np.abs(lam))) > eps_eig * scale
    s = int(np.sum(lam < 0))
    if not nondeg:
        kind = "degenerate"
    elif s == 0:
        kind = "minimum"
    elif s == f.arity:
        kind = "maximum"
    else:
        kind = "saddle"
    return CriticalPointInfo(tuple(q.tolist()), gn, tuple(lam.tolist()), s, nondeg, kind)


@dataclass(eq=False)
class StepRecord:
    k: int
    block: tuple[int, ...]
    point: np.ndarray
    phi: float
    grad_norm: float
    arc_length: float
    termination_reason: str
    polish: str
    trajectory: Trajectory | None


@dataclass(frozen=True)
class Verdict:
    status: str  # "converged", "max_steps_reached" or "error"
    point: tuple[float, ...] | None = None
    info: CriticalPointInfo | None = None
    step: int | None = None
    message: str = ""


@dataclass(eq=False)
class ProcessRun:
    initial: np.ndarray
    schedule: dict
    steps: list[StepRecord]
    verdict: Verdict
    initial_phi: float = float("nan")

    @property
    def points(self) -> np.ndarray:
        """q_0, q_1, ... as rows."""
        return np.array([self.initial] + [s.point for s in self.steps])

    @property
    def phis(self) -> np.ndarray:
        """phi(q_0), phi(q_1), ..."""
        return np.array([self.initial_phi] + [s.phi for s in self.steps])

    @property
    def total_arc_length(self) -> float:
        return float(sum(s.arc_length for s in self.steps))

    @property
    def converged(self) -> bool:
        return self.verdict.status == "converged"


def run_process(f: AnalyticFunction, domain: Domain, q0, schedule: Schedule,
                flow: FlowSettings = FlowSettings(),
                stop: StoppingCriteria = StoppingCriteria(),
                keep_trajectories: bool = True) -> ProcessRun:
    """Run steps until the joint stopping rule holds or ``max_steps`` is hit.

    The run counts as converged at q_k when |grad f(q_k)| <= eps_crit and no
    step in the last ``window`` steps moved farther than eps_move along its
    trajectory.  A slice flow that ends for any reason other than
    stationarity stops the run with an error verdict naming the step.
    """
    q = np.asarray(q0, dtype=float)
    if q.shape != (f.arity,):
        raise ValueError(f"start point must have {f.arity} coordinates")
    if schedule.dim != f.arity:
        raise ValueError(f"schedule is for dimension {schedule.dim}, function has {f.arity}")
    if not domain.contains(q):
        raise ValueError("start point is outside the domain")
    report = fairness_check(schedule)
    if not report.passed:
        raise ValueError(f"schedule is not fair: indices {list(report.missing)} are not "
                         f"visited within one period")
    window = stop.window or schedule.period
    steps: list[StepRecord] = []
    moves: list[float] = []
    initial = q.copy()
    verdict = None
    for k in range(1, stop.max_steps + 1):
        block = schedule.block(k)
        try:
            traj = integrate_slice(f, domain, q, block, flow)
            phi, g = f.value_and_gradient(traj.terminal)
        except EvaluationError as exc:
            verdict = Verdict("error", tuple(q.tolist()), step=k, message=f"evaluation failed: {exc}")
            break
        q = traj.terminal.copy()
        gn = float(np.linalg.norm(g))
        steps.append(StepRecord(k, block, q, phi, gn, traj.arc_length,
                                traj.termination_reason, traj.polish,
                                traj if keep_trajectories else None))
        if traj.termination_reason != STATIONARY:
            verdict = Verdict("error", tuple(q.tolist()), step=k,
                              message=f"slice flow ended with {traj.termination_reason}")
            break
        moves.append(traj.arc_length)
        if k >= window and gn <= stop.eps_crit and max(moves[-window:]) <= stop.eps_move:
            info = classify_point(f, q, stop.eps_crit, stop.eps_eig)
            verdict = Verdict("converged", tuple(q.tolist()), info, k)
            break
    if verdict is None:
        verdict = Verdict("max_steps_reached", tuple(q.tolist()), step=stop.max_steps)
    return ProcessRun(initial, schedule.describe(), steps, verdict, f(initial))


def component_zero_locus_sample(f: AnalyticFunction, j: int, region, grid: int) -> list[np.ndarray]:
    """Points where the j-th partial derivative of f vanishes.

    Scans the grid lines of ``region`` (a pair of corner arrays) along every
    axis for sign changes of that partial and refines each with a bracketed
    root finder.
    """
    if grid < 2:
        raise ValueError("grid must be at least 2")
    lo, hi = (np.asarray(c, dtype=float) for c in region)
    M = f.arity
    axes = [np.linspace(lo[i], hi[i], grid) for i in range(M)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    _, G = f.batch_value_and_gradient(mesh.reshape(-1, M))
    D = G[:, j].reshape(mesh.shape[:-1])

    def partial(x):
        return float(f.value_and_gradient(x, (j,))[1][0])

    found: dict[tuple, np.ndarray] = {}
    for idx in zip(*np.nonzero(D == 0.0)):
        p = mesh[idx]
        found[tuple(p)] = p
    for axis in range(M):
        a = np.moveaxis(D, axis, -1)
        pts = np.moveaxis(mesh, axis, -2)
        change = np.nonzero(a[..., :-1] * a[..., 1:] < 0)
        for idx in zip(*change):
            left, right = pts[idx[:-1] + (idx[-1],)], pts[idx[:-1] + (idx[-1] + 1,)]

            def along(t, left=left, right=right):
                return partial(left + t * (right - left))

            t = brentq(along, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            p = left + t * (right - left)
            found.setdefault(tuple(p), p)
    return [found[key] for key in sorted(found)]


__all__: Sequence[str] = [
    "CriticalPointInfo", "CyclicBlocks", "ExplicitSets", "FairnessReport", "ProcessRun",
    "RandomFair", "Schedule", "StepRecord", "StoppingCriteria", "Verdict", "classify_point",
    "component_zero_locus_sample", "fairness_check", "next_block", "run_process",
]
