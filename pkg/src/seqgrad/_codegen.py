"""Straight-line code generation for forward-mode differentiation.

An expression DAG is flattened into a tape and then emitted as Python source
that carries, for every node, its value, its tangent components (first-order
dual part) and optionally the upper triangle of its second-order dual part.
Structurally zero tangents are dropped at generation time, so a function
restricted to one free coordinate costs little more than a plain evaluation.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

SINC_SERIES_CUTOFF = 1e-4
SINC_DERIV_SERIES_CUTOFF = 1e-1


class EvaluationError(ArithmeticError):
    """Raised when an expression cannot be evaluated to a finite number."""


# ---------------------------------------------------------------- helpers

def _sinc(u):
    if abs(u) < SINC_SERIES_CUTOFF:
        u2 = u * u
        return 1.0 - u2 / 6.0 * (1.0 - u2 / 20.0 * (1.0 - u2 / 42.0 * (1.0 - u2 / 72.0)))
    return math.sin(u) / u


def _dsinc_series(u):
    u2 = u * u
    return u * (-1.0 / 3.0 + u2 * (1.0 / 30.0 + u2 * (-1.0 / 840.0 + u2 * (
        1.0 / 45360.0 + u2 * (-1.0 / 3991680.0 + u2 / 518918400.0)))))


def _d2sinc_series(u):
    u2 = u * u
    return -1.0 / 3.0 + u2 * (1.0 / 10.0 + u2 * (-1.0 / 168.0 + u2 * (
        1.0 / 6480.0 + u2 * (-1.0 / 443520.0 + u2 / 47174400.0))))


def _dsinc(u):
    if abs(u) < SINC_DERIV_SERIES_CUTOFF:
        return _dsinc_series(u)
    return (u * math.cos(u) - math.sin(u)) / (u * u)


def _d2sinc(u):
    if abs(u) < SINC_DERIV_SERIES_CUTOFF:
        return _d2sinc_series(u)
    s, c = math.sin(u), math.cos(u)
    return ((2.0 - u * u) * s - 2.0 * u * c) / (u * u * u)


def _rpow(u, p):
    if not u > 0.0:
        raise EvaluationError(f"real power of non-positive base {u!r}")
    return u ** p


def _np_sinc(u):
    small = np.abs(u) < SINC_SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    u2 = u * u
    series = 1.0 - u2 / 6.0 * (1.0 - u2 / 20.0 * (1.0 - u2 / 42.0 * (1.0 - u2 / 72.0)))
    return np.where(small, series, np.sin(safe) / safe)


def _np_dsinc(u):
    small = np.abs(u) < SINC_DERIV_SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    return np.where(small, _dsinc_series(u),
                    (safe * np.cos(safe) - np.sin(safe)) / (safe * safe))


def _np_d2sinc(u):
    small = np.abs(u) < SINC_DERIV_SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    full = ((2.0 - safe * safe) * np.sin(safe) - 2.0 * safe * np.cos(safe)) / safe ** 3
    return np.where(small, _d2sinc_series(u), full)


def _np_rpow(u, p):
    u = np.asarray(u)
    if np.any(~(u > 0.0)):
        raise EvaluationError("real power of non-positive base")
    return u ** p


SCALAR_NAMESPACE = {
    "_sin": math.sin, "_cos": math.cos, "_exp": math.exp,
    "_sinc": _sinc, "_dsinc": _dsinc, "_d2sinc": _d2sinc, "_rpow": _rpow,
}
BATCH_NAMESPACE = {
    "_sin": np.sin, "_cos": np.cos, "_exp": np.exp,
    "_sinc": _np_sinc, "_dsinc": _np_dsinc, "_d2sinc": _np_d2sinc, "_rpow": _np_rpow,
}

UNARY_FUNCS = ("sin", "cos", "exp", "sinc")


# ------------------------------------------------------------------ tape

def build_tape(root) -> list:
    """Topologically ordered unique nodes of the DAG rooted at ``root``.

    Node identity (not structural equality) decides sharing.
    """
    order: list = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
            continue
        stack.append((node, True))
        for child in reversed(node.args):
            if id(child) not in seen:
                stack.append((child, False))
    return order


# ------------------------------------------------------------ emission

def _prod(*factors):
    kept = []
    for f in factors:
        if f is None:
            return None
        if f != "1.0":
            kept.append(f)
    return "*".join(kept) if kept else "1.0"


def _sum(*terms):
    """Terms are (sign, expr) pairs; ``None`` exprs are dropped."""
    parts = []
    for sign, expr in terms:
        if expr is None:
            continue
        if not parts:
            parts.append(expr if sign > 0 else f"-({expr})")
        else:
            parts.append(f" + {expr}" if sign > 0 else f" - ({expr})")
    return "".join(parts) if parts else None


class _Emitter:
    def __init__(self, k: int, order: int):
        self.k = k
        self.order = order
        self.lines: list[str] = []
        self.count = 0

    def assign(self, expr):
        if expr is None:
            return None
        if expr.isidentifier() or expr == "1.0":
            return expr
        name = f"t{self.count}"
        self.count += 1
        self.lines.append(f"    {name} = {expr}")
        return name

    def pairs(self):
        return [(a, b) for a in range(self.k) for b in range(a, self.k)]

    def unary(self, du, hu, g1, g2):
        """Chain rule for a scalar function of one active argument."""
        D = [self.assign(_prod(g1, d)) for d in du]
        H = {}
        if self.order >= 2:
            for a, b in self.pairs():
                H[a, b] = self.assign(_sum((1, _prod(g2, du[a], du[b])),
                                           (1, _prod(g1, hu.get((a, b))))))
        return D, H


def generate(tape: Sequence, free: Sequence[int], order: int, batch: bool) -> Callable:
    """Compile the tape into ``fn(x)`` returning value (and derivatives).

    ``free`` lists the 0-based variable indices that carry tangents; the
    returned gradient/Hessian are restricted to these, in the given order.
    """
    k = len(free) if order >= 1 else 0
    pos = {j: a for a, j in enumerate(free)} if k else {}
    em = _Emitter(k, order)
    val: dict[int, str] = {}
    D: dict[int, list] = {}
    H: dict[int, dict] = {}
    zero_t = [None] * k

    for i, node in enumerate(tape):
        op = node.op
        v = f"v{i}"
        val[id(node)] = v
        args = [id(a) for a in node.args]
        dargs = [D[a] for a in args]
        hargs = [H[a] for a in args]
        active = any(any(d is not None for d in dd) for dd in dargs)
        if op == "const":
            em.lines.append(f"    {v} = {float(node.data)!r}")
            D[id(node)], H[id(node)] = zero_t, {}
            continue
        if op == "var":
            em.lines.append(f"    {v} = x[{node.data}]")
            t = [None] * k
            if node.data in pos:
                t[pos[node.data]] = "1.0"
            D[id(node)], H[id(node)] = t, {}
            continue
        a = val[args[0]]
        if op in ("add", "sub"):
            b = val[args[1]]
            sym = "+" if op == "add" else "-"
            em.lines.append(f"    {v} = {a} {sym} {b}")
            sgn = 1 if op == "add" else -1
            D[id(node)] = [em.assign(_sum((1, dargs[0][c]), (sgn, dargs[1][c]))) for c in range(k)]
            H[id(node)] = {p: em.assign(_sum((1, hargs[0].get(p)), (sgn, hargs[1].get(p))))
                           for p in em.pairs()} if order >= 2 else {}
            continue
        if op == "neg":
            em.lines.append(f"    {v} = -{a}")
            D[id(node)] = [em.assign(_sum((-1, d))) for d in dargs[0]]
            H[id(node)] = {p: em.assign(_sum((-1, hargs[0].get(p)))) for p in em.pairs()} \
                if order >= 2 else {}
            continue
        if op == "mul":
            b = val[args[1]]
            em.lines.append(f"    {v} = {a}*{b}")
            D[id(node)], H[id(node)] = _mul_rule(em, a, b, dargs[0], dargs[1],
                                                 hargs[0], hargs[1])
            continue
        if op == "div":
            b = val[args[1]]
            em.lines.append(f"    {v} = {a}/{b}")
            if not any(d is not None for d in dargs[1]):
                D[id(node)] = [em.assign(_prod(d, f"(1.0/{b})") if d else None)
                               for d in dargs[0]]
                H[id(node)] = {p: em.assign(_prod(hargs[0].get(p), f"(1.0/{b})")
                                            if hargs[0].get(p) else None)
                               for p in em.pairs()} if order >= 2 else {}
                continue
            r = f"r{i}"
            em.lines.append(f"    {r} = 1.0/{b}")
            g1 = em.assign(f"-{r}*{r}")
            g2 = em.assign(f"2.0*{r}*{r}*{r}") if order >= 2 else None
            dr, hr = em.unary(dargs[1], hargs[1], g1, g2)
            D[id(node)], H[id(node)] = _mul_rule(em, a, r, dargs[0], dr, hargs[0], hr)
            continue
        if op == "pow":
            n = int(node.data)
            em.lines.append(f"    {v} = {a} ** {n}")
            if not active:
                D[id(node)], H[id(node)] = zero_t, {}
                continue
            if n == 0:
                D[id(node)], H[id(node)] = zero_t, {}
                continue
            g1 = em.assign(f"{float(n)!r}*{a} ** {n - 1}" if n != 1 else "1.0")
            g2 = None
            if order >= 2 and n not in (0, 1):
                g2 = em.assign(f"{float(n * (n - 1))!r}*{a} ** {n - 2}" if n != 2 else "2.0")
            D[id(node)], H[id(node)] = em.unary(dargs[0], hargs[0], g1, g2)
            continue
        if op == "rpow":
            p = float(node.data)
            em.lines.append(f"    {v} = _rpow({a}, {p!r})")
            if not active:
                D[id(node)], H[id(node)] = zero_t, {}
                continue
            g1 = em.assign(f"{p!r}*_rpow({a}, {p - 1.0!r})")
            g2 = em.assign(f"{p * (p - 1.0)!r}*_rpow({a}, {p - 2.0!r})") if order >= 2 else None
            D[id(node)], H[id(node)] = em.unary(dargs[0], hargs[0], g1, g2)
            continue
        if op in UNARY_FUNCS:
            if op == "sin":
                em.lines.append(f"    {v} = _sin({a})")
                g1 = f"_cos({a})" if active else None
                g2 = f"-{v}"
            elif op == "cos":
                em.lines.append(f"    {v} = _cos({a})")
                g1 = f"-_sin({a})" if active else None
                g2 = f"-{v}"
            elif op == "exp":
                em.lines.append(f"    {v} = _exp({a})")
                g1 = g2 = v
            else:
                em.lines.append(f"    {v} = _sinc({a})")
                g1 = f"_dsinc({a})" if active else None
                g2 = f"_d2sinc({a})"
            if not active:
                D[id(node)], H[id(node)] = zero_t, {}
                continue
            g1 = em.assign(g1)
            g2 = em.assign(g2) if order >= 2 else None
            D[id(node)], H[id(node)] = em.unary(dargs[0], hargs[0], g1, g2)
            continue
        raise ValueError(f"unknown node type {op!r}")

    root = tape[-1]
    out = val[id(root)]
    if order == 0:
        ret = out
    else:
        grad = ", ".join(d or "0.0" for d in D[id(root)])
        ret = f"{out}, ({grad}{',' if k == 1 else ''})"
        if order >= 2:
            h = H[id(root)]
            rows = []
            for a in range(k):
                row = [h.get((min(a, b), max(a, b))) or "0.0" for b in range(k)]
                rows.append("(" + ", ".join(row) + ("," if k == 1 else "") + ")")
            ret += ", (" + ", ".join(rows) + ("," if k == 1 else "") + ")"
    src = "def _fn(x):\n" + "\n".join(em.lines) + f"\n    return {ret}\n"
    namespace = dict(BATCH_NAMESPACE if batch else SCALAR_NAMESPACE)
    exec(compile(src, "<seqgrad-expr>", "exec"), namespace)
    fn = namespace["_fn"]
    fn.source = src
    return fn


def _mul_rule(em, a, b, da, db, ha, hb):
    k = em.k
    D = [em.assign(_sum((1, _prod(da[c], b)), (1, _prod(a, db[c])))) for c in range(k)]
    H = {}
    if em.order >= 2:
        for p, q in em.pairs():
            H[p, q] = em.assign(_sum((1, _prod(ha.get((p, q)), b)),
                                     (1, _prod(da[p], db[q])),
                                     (1, _prod(da[q], db[p])),
                                     (1, _prod(a, hb.get((p, q))))))
    return D, H
