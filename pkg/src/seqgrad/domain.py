"""Compact domains and the boundary conditions on -grad(phi).

Two kinds of domain are supported: a closed ball, and the common sublevel set
``{x : f_a(x) <= 0 for all a}`` of a few analytic defining functions whose
gradients point outward.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .expr import AnalyticFunction, Expr, const, var

EPS_SIGN = 1e-10


class ProjectionError(RuntimeError):
    """Newton projection of a ray onto the boundary did not converge."""


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def defining_function(self) -> AnalyticFunction:
        """|x - center|^2 - radius^2."""
        e: Expr = const(-float(self.radius) ** 2)
        for j, c in enumerate(self.center):
            e = e + (var(j) - float(c)) ** 2
        return AnalyticFunction(e, self.dim)

    def contains(self, x, tol: float = 0.0) -> bool:
        x = _check_dim(x, self.dim)
        return bool(np.linalg.norm(x - self.center) <= self.radius + tol)

    def sample_boundary(self, n: int, seed: int) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one boundary sample")
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n, self.dim))
        return self.center + self.radius * g / np.linalg.norm(g, axis=1, keepdims=True)

    def sample_interior(self, n: int, seed: int, shrink: float = 1.0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = shrink * self.radius * rng.random(n) ** (1.0 / self.dim)
        return self.center + g * r[:, None]

    def boundary_gradients(self, X) -> np.ndarray:
        return 2.0 * (np.atleast_2d(X) - self.center)

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius


@dataclass(frozen=True, eq=False)
class LevelSet:
    """Common sublevel set of the defining functions ``boundary``.

    ``interior_point`` anchors the rays used for boundary sampling and
    ``bounds`` is a box containing the domain (used for interior sampling).
    Every defining function applies on the whole box.
    """

    boundary: tuple[AnalyticFunction, ...]
    interior_point: np.ndarray
    bounds: tuple[np.ndarray, np.ndarray]
    max_newton_iters: int = 60

    def __post_init__(self):
        if not self.boundary:
            raise ValueError("need at least one defining function")
        object.__setattr__(self, "boundary", tuple(self.boundary))
        object.__setattr__(self, "interior_point", np.asarray(self.interior_point, dtype=float))
        lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
        object.__setattr__(self, "bounds", (lo, hi))
        arities = {f.arity for f in self.boundary}
        if len(arities) != 1 or self.dim not in arities:
            raise ValueError("defining functions and interior point disagree on dimension")
        if not self.contains(self.interior_point, 0.0):
            raise ValueError("interior_point is not inside the domain")

    @property
    def dim(self) -> int:
        return self.interior_point.shape[0]

    def values(self, x) -> np.ndarray:
        return np.array([f(x) for f in self.boundary])

    def contains(self, x, tol: float = 0.0) -> bool:
        x = _check_dim(x, self.dim)
        return all(f(x) <= tol for f in self.boundary)

    def _ray_value(self, t, u):
        return max(f(self.interior_point + t * u) for f in self.boundary)

    def _project(self, u) -> np.ndarray:
        lo, hi = self.bounds
        step = 0.02 * float(np.linalg.norm(hi - lo))
        t_in, t_out = 0.0, step
        while self._ray_value(t_out, u) <= 0.0:
            t_in, t_out = t_out, t_out + step
            if t_out > 100 * step:
                raise ProjectionError("ray never leaves the domain")
        # bracket, then Newton along the ray on the active defining function
        for _ in range(30):
            mid = 0.5 * (t_in + t_out)
            if self._ray_value(mid, u) <= 0.0:
                t_in = mid
            else:
                t_out = mid
        t = 0.5 * (t_in + t_out)
        x = self.interior_point + t * u
        active = self.boundary[int(np.argmax(self.values(x)))]
        for _ in range(self.max_newton_iters):
            x = self.interior_point + t * u
            v, g = active.value_and_gradient(x)
            slope = float(g @ u)
            if abs(v) <= 1e-14 * max(1.0, abs(slope)):
                return x
            if slope == 0.0:
                break
            t -= v / slope
        raise ProjectionError("Newton projection onto the boundary did not converge")

    def sample_boundary(self, n: int, seed: int) -> np.ndarray:
        if n < 1:
            raise ValueError("need at least one boundary sample")
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        return np.array([self._project(u) for u in g])

    def sample_interior(self, n: int, seed: int, shrink: float = 1.0) -> np.ndarray:
        """Uniform points of the domain by rejection from ``bounds``."""
        rng = np.random.default_rng(seed)
        lo, hi = self.bounds
        out: list[np.ndarray] = []
        while len(out) < n:
            cand = lo + (hi - lo) * rng.random((max(64, 4 * n), self.dim))
            if shrink != 1.0:
                cand = self.interior_point + shrink * (cand - self.interior_point)
            keep = np.ones(len(cand), dtype=bool)
            for f in self.boundary:
                keep &= f.batch_values(cand) < 0.0
            out.extend(cand[keep][: n - len(out)])
        return np.array(out)

    def boundary_gradients(self, X) -> np.ndarray:
        """Gradient of the active (largest) defining function at each row."""
        X = np.atleast_2d(X)
        vals, grads = zip(*(f.batch_value_and_gradient(X) for f in self.boundary))
        active = np.argmax(np.stack(vals, axis=1), axis=1)
        G = np.stack(grads, axis=0)
        return G[active, np.arange(len(X))]

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        return self.bounds


Domain = Ball | LevelSet


def _check_dim(x, dim) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"point of shape {x.shape} does not match domain dimension {dim}")
    return x


def contains(domain: Domain, x, tol: float = 0.0) -> bool:
    return domain.contains(x, tol)


def sample_boundary(domain: Domain, n: int, seed: int) -> np.ndarray:
    return domain.sample_boundary(n, seed)


@dataclass(frozen=True)
class Violation:
    point: tuple[float, ...]
    component: int | None
    phi_partial: float
    boundary_partial: float


@dataclass(frozen=True)
class BoundaryReport:
    samples_checked: int
    violations: tuple[Violation, ...]

    @property
    def passed(self) -> bool:
        return not self.violations


def check_inward(phi: AnalyticFunction, domain: Domain, samples) -> BoundaryReport:
    """Flags samples where -grad(phi) has a positive outward component.

    The recorded ``phi_partial`` is <grad phi, n> and ``boundary_partial`` is
    |grad f_a| for the outward normal n = grad f_a / |grad f_a|.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    _, G = phi.batch_value_and_gradient(X)
    F = domain.boundary_gradients(X)
    norms = np.linalg.norm(F, axis=1)
    if np.any(norms == 0):
        raise ValueError("boundary is singular at a sample")
    inner = np.einsum("ij,ij->i", G, F) / norms
    bad = np.nonzero(-inner > 0)[0]
    return BoundaryReport(len(X), tuple(
        Violation(tuple(X[i]), None, float(inner[i]), float(norms[i])) for i in bad))


def check_condition_ii_prime(phi: AnalyticFunction, domain: Domain, samples,
                             eps_sign: float = EPS_SIGN) -> BoundaryReport:
    """Component-wise sign agreement of grad(phi) and grad(f_a) on the boundary.

    A component passes when both partials have the same sign or either one
    is zero to within ``eps_sign``.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    _, G = phi.batch_value_and_gradient(X)
    F = domain.boundary_gradients(X)
    zero = (np.abs(G) <= eps_sign) | (np.abs(F) <= eps_sign)
    bad = ~zero & (np.sign(G) != np.sign(F))
    rows, cols = np.nonzero(bad)
    return BoundaryReport(len(X), tuple(
        Violation(tuple(X[i]), int(j), float(G[i, j]), float(F[i, j]))
        for i, j in zip(rows, cols)))


__all__: Sequence[str] = [
    "Ball", "BoundaryReport", "Domain", "LevelSet", "ProjectionError", "Violation",
    "check_condition_ii_prime", "check_inward", "contains", "sample_boundary",
]
