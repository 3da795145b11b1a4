"""Real analytic functions as immutable expression DAGs.

Values, gradients and Hessians are exact for the expression (up to floating
point rounding) and come from forward-mode dual arithmetic, see
:mod:`seqgrad._codegen`.

Expressions are also readable and writable as infix text::

    >>> f = parse_function("2*(x + y)**2 + (x - y)**2", ["x", "y"])
    >>> f([1.0, 1.0])
    8.0
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, field
from numbers import Integral, Real
from typing import Sequence

import numpy as np

from ._codegen import EvaluationError, build_tape, generate

__all__ = [
    "AnalyticFunction",
    "AnalyticMap",
    "EvaluationError",
    "Expr",
    "compose",
    "const",
    "cos",
    "evaluate",
    "exp",
    "gradient",
    "hessian",
    "parse_expr",
    "parse_function",
    "rpow",
    "sin",
    "sinc",
    "to_infix",
    "var",
]

_BINARY = ("add", "sub", "mul", "div")
_FUNCS = ("sin", "cos", "exp", "sinc")


@dataclass(frozen=True, eq=False)
class Expr:
    """A node of an expression DAG.

    ``op`` is one of ``const``, ``var``, ``add``, ``sub``, ``mul``, ``div``,
    ``neg``, ``pow`` (integer exponent in ``data``), ``rpow`` (real exponent,
    positive base only), ``sin``, ``cos``, ``exp`` or ``sinc``.  Variables
    carry their 0-based index in ``data``.
    """

    op: str
    args: tuple["Expr", ...] = ()
    data: float | int | None = None

    def __add__(self, other):
        return Expr("add", (self, _lift(other)))

    def __radd__(self, other):
        return Expr("add", (_lift(other), self))

    def __sub__(self, other):
        return Expr("sub", (self, _lift(other)))

    def __rsub__(self, other):
        return Expr("sub", (_lift(other), self))

    def __mul__(self, other):
        return Expr("mul", (self, _lift(other)))

    def __rmul__(self, other):
        return Expr("mul", (_lift(other), self))

    def __truediv__(self, other):
        return Expr("div", (self, _lift(other)))

    def __rtruediv__(self, other):
        return Expr("div", (_lift(other), self))

    def __neg__(self):
        if self.op == "const":
            return const(-self.data)
        return Expr("neg", (self,))

    def __pow__(self, n):
        if isinstance(n, Integral) or (isinstance(n, Real) and float(n).is_integer()):
            return Expr("pow", (self,), int(n))
        raise TypeError("only integer powers are allowed with **; use rpow() for real exponents")


def _lift(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, Real):
        return const(x)
    raise TypeError(f"cannot use {type(x).__name__} in an expression")


def const(c: float) -> Expr:
    c = float(c)
    if not math.isfinite(c):
        raise ValueError("constants must be finite")
    return Expr("const", (), c)


def var(j: int) -> Expr:
    """The 0-based coordinate ``y_{j+1}``."""
    if j < 0:
        raise ValueError("variable index must be non-negative")
    return Expr("var", (), int(j))


def sin(u) -> Expr:
    return Expr("sin", (_lift(u),))


def cos(u) -> Expr:
    return Expr("cos", (_lift(u),))


def exp(u) -> Expr:
    return Expr("exp", (_lift(u),))


def sinc(u) -> Expr:
    """sin(u)/u, continued by 1 at u = 0."""
    return Expr("sinc", (_lift(u),))


def rpow(u, p: float) -> Expr:
    """u**p for real p; evaluation fails unless u > 0."""
    return Expr("rpow", (_lift(u),), float(p))


def _max_var(expr: Expr) -> int:
    return max((n.data for n in build_tape(expr) if n.op == "var"), default=-1)


@dataclass(frozen=True)
class AnalyticFunction:
    """A real analytic function of ``arity`` variables.

    Compiled evaluators are cached per (derivative order, free coordinates);
    the expression itself is never modified.
    """

    expr: Expr
    arity: int
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.arity < 1:
            raise ValueError("arity must be positive")
        if _max_var(self.expr) >= self.arity:
            raise ValueError(f"expression uses variable {_max_var(self.expr) + 1} "
                             f"but arity is {self.arity}")

    # compiled evaluators are closures; pickles carry only the expression
    def __getstate__(self):
        return {"expr": self.expr, "arity": self.arity}

    def __setstate__(self, state):
        object.__setattr__(self, "expr", state["expr"])
        object.__setattr__(self, "arity", state["arity"])
        object.__setattr__(self, "_cache", {})

    def _compiled(self, order: int, free: tuple[int, ...], batch: bool):
        key = (order, free, batch)
        fn = self._cache.get(key)
        if fn is None:
            tape = self._cache.get("tape")
            if tape is None:
                tape = self._cache["tape"] = build_tape(self.expr)
            fn = self._cache[key] = generate(tape, free, order, batch)
        return fn

    def _point(self, x) -> list:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.arity,):
            raise ValueError(f"expected a point with {self.arity} coordinates, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("point has non-finite coordinates")
        return x.tolist()

    def _call(self, order, free, x):
        fn = self._compiled(order, free, False)
        point = self._point(x)
        try:
            out = fn(point)
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise EvaluationError(str(exc)) from exc
        value = out if order == 0 else out[0]
        if not math.isfinite(value):
            raise EvaluationError("non-finite value")
        return out

    def __call__(self, x) -> float:
        return float(self._call(0, (), x))

    def _free(self, free) -> tuple[int, ...]:
        if free is None:
            return tuple(range(self.arity))
        free = tuple(int(j) for j in free)
        if any(j < 0 or j >= self.arity for j in free):
            raise ValueError(f"free indices {free} out of range for arity {self.arity}")
        return free

    def value_and_gradient(self, x, free: Sequence[int] | None = None):
        """Value and the partial derivatives with respect to ``free``."""
        v, g = self._call(1, self._free(free), x)
        g = np.array(g, dtype=float)
        if not np.all(np.isfinite(g)):
            raise EvaluationError("non-finite gradient")
        return float(v), g

    def gradient(self, x) -> np.ndarray:
        return self.value_and_gradient(x)[1]

    def value_gradient_hessian(self, x, free: Sequence[int] | None = None):
        v, g, h = self._call(2, self._free(free), x)
        g = np.array(g, dtype=float)
        h = np.array(h, dtype=float)
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise EvaluationError("non-finite derivatives")
        return float(v), g, h

    def hessian(self, x) -> np.ndarray:
        return self.value_gradient_hessian(x)[2]

    # batched evaluation over rows of an (n, arity) array

    def _batch(self, order, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.arity:
            raise ValueError(f"expected an (n, {self.arity}) array")
        fn = self._compiled(order, tuple(range(self.arity)) if order else (), True)
        with np.errstate(all="ignore"):
            out = fn(tuple(X.T))
        return X.shape[0], out

    def batch_values(self, X) -> np.ndarray:
        n, out = self._batch(0, X)
        v = np.broadcast_to(np.asarray(out, dtype=float), (n,)).copy()
        if not np.all(np.isfinite(v)):
            raise EvaluationError("non-finite value in batch")
        return v

    def batch_value_and_gradient(self, X):
        n, (v, g) = self._batch(1, X)
        v = np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
        G = np.stack([np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in g], axis=1)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(G))):
            raise EvaluationError("non-finite value in batch")
        return v, G

    # algebra on functions of the same arity

    def _other(self, other):
        if isinstance(other, AnalyticFunction):
            if other.arity != self.arity:
                raise ValueError("arity mismatch")
            return other.expr
        return _lift(other)

    def __add__(self, other):
        return AnalyticFunction(self.expr + self._other(other), self.arity)

    __radd__ = __add__

    def __sub__(self, other):
        return AnalyticFunction(self.expr - self._other(other), self.arity)

    def __mul__(self, other):
        return AnalyticFunction(self.expr * self._other(other), self.arity)

    __rmul__ = __mul__

    def __neg__(self):
        return AnalyticFunction(-self.expr, self.arity)

    def to_infix(self, variables: Sequence[str] | None = None) -> str:
        return to_infix(self.expr, variables or default_names(self.arity))


@dataclass(frozen=True)
class AnalyticMap:
    """An analytic map R^M -> R^M given by M component expressions."""

    components: tuple[Expr, ...]
    arity: int

    def __post_init__(self):
        if len(self.components) != self.arity:
            raise ValueError("component count must equal arity")
        for c in self.components:
            if _max_var(c) >= self.arity:
                raise ValueError("component uses a variable beyond the arity")

    def component(self, i: int) -> AnalyticFunction:
        return AnalyticFunction(self.components[i], self.arity)

    def __call__(self, x) -> np.ndarray:
        return np.array([self.component(i)(x) for i in range(self.arity)])

    @classmethod
    def identity(cls, arity: int) -> "AnalyticMap":
        return cls(tuple(var(j) for j in range(arity)), arity)


def compose(f: AnalyticFunction, h: AnalyticMap) -> AnalyticFunction:
    """The function x -> f(h(x)), built as a new DAG sharing h's subtrees."""
    if f.arity != h.arity:
        raise ValueError(f"cannot compose arity {f.arity} with a map of arity {h.arity}")
    memo: dict[int, Expr] = {}
    for node in build_tape(f.expr):
        if node.op == "var":
            new = h.components[node.data]
        elif node.args:
            new = Expr(node.op, tuple(memo[id(a)] for a in node.args), node.data)
        else:
            new = node
        memo[id(node)] = new
    return AnalyticFunction(memo[id(f.expr)], f.arity)


def evaluate(f: AnalyticFunction, x) -> float:
    return f(x)


def gradient(f: AnalyticFunction, x) -> np.ndarray:
    return f.gradient(x)


def hessian(f: AnalyticFunction, x) -> np.ndarray:
    return f.hessian(x)


# ------------------------------------------------------------ text format

def default_names(arity: int) -> list[str]:
    return [f"y{j + 1}" for j in range(arity)]


def to_infix(expr: Expr, variables: Sequence[str]) -> str:
    """Fully parenthesised infix text; :func:`parse_expr` inverts it exactly."""
    text: dict[int, str] = {}
    for node in build_tape(expr):
        a = [text[id(c)] for c in node.args]
        op = node.op
        if op == "const":
            s = repr(node.data)
            s = f"({s})" if node.data < 0 or s.startswith("-") else s
        elif op == "var":
            s = variables[node.data]
        elif op in _BINARY:
            sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[op]
            s = f"({a[0]} {sym} {a[1]})"
        elif op == "neg":
            s = f"(-{a[0]})"
        elif op == "pow":
            s = f"({a[0]} ** {node.data})"
        elif op == "rpow":
            s = f"pow({a[0]}, {node.data!r})"
        else:
            s = f"{op}({a[0]})"
        text[id(node)] = s
    return text[id(expr)]


_CONSTANTS = {"pi": math.pi, "e": math.e}


def parse_expr(text: str, variables: Sequence[str]) -> Expr:
    """Parse infix text.

    Grammar (Python expression syntax): numbers, the names in ``variables``,
    ``pi``, ``e``, binary ``+ - * /``, unary ``-``, ``u ** n`` with an integer
    literal ``n``, and calls ``sin``, ``cos``, ``exp``, ``sinc``,
    ``pow(u, p)`` (real ``p``, requires ``u > 0`` at evaluation).
    """
    names = {name: j for j, name in enumerate(variables)}
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression: {exc.msg}") from exc

    def number(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return node.value
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = number(node.operand)
            if inner is not None:
                return -inner if isinstance(node.op, ast.USub) else inner
        return None

    def walk(node) -> Expr:
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ValueError(f"unsupported literal {node.value!r}")
            return const(node.value)
        if isinstance(node, ast.Name):
            if node.id in names:
                return var(names[node.id])
            if node.id in _CONSTANTS:
                return const(_CONSTANTS[node.id])
            raise ValueError(f"unknown name {node.id!r}")
        if isinstance(node, ast.UnaryOp):
            c = number(node)
            if c is not None:
                return const(c)
            if isinstance(node.op, ast.USub):
                return Expr("neg", (walk(node.operand),))
            if isinstance(node.op, ast.UAdd):
                return walk(node.operand)
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                n = number(node.right)
                if n is None or not float(n).is_integer():
                    raise ValueError("exponent of ** must be an integer literal; use pow(u, p)")
                return Expr("pow", (walk(node.left),), int(n))
            ops = {ast.Add: "add", ast.Sub: "sub", ast.Mult: "mul", ast.Div: "div"}
            if type(node.op) in ops:
                return Expr(ops[type(node.op)], (walk(node.left), walk(node.right)))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            fname = node.func.id
            if fname in _FUNCS and len(node.args) == 1:
                return Expr(fname, (walk(node.args[0]),))
            if fname == "pow" and len(node.args) == 2:
                p = number(node.args[1])
                if p is None:
                    raise ValueError("pow exponent must be a numeric literal")
                return rpow(walk(node.args[0]), p)
        raise ValueError(f"unsupported syntax: {ast.dump(node)[:60]}")

    return walk(tree.body)


def parse_function(text: str, variables: Sequence[str] | int) -> AnalyticFunction:
    if isinstance(variables, int):
        variables = default_names(variables)
    variables = list(variables)
    if len(set(variables)) != len(variables):
        raise ValueError("duplicate variable names")
    return AnalyticFunction(parse_expr(text, variables), len(variables))


def variables_of(arity: int) -> list[Expr]:
    """The coordinate expressions y_1..y_M."""
    return [var(j) for j in range(arity)]
