"""Closed-form coefficient expressions and node tables.

Expressions are written in x, y (space), t (time) or s (edge arclength) with
pi, sin, cos, exp, sqrt, log, abs, I and E; ``phiK`` stands for the K-th
Dirichlet eigenfunction of −Δ+q_ref on the grid where the expression is
evaluated.
"""

import math
import re
from dataclasses import dataclass
from tokenize import TokenError
from typing import Callable

import numpy as np
import sympy as sp
from scipy.interpolate import RegularGridInterpolator
from sympy.core.function import AppliedUndef
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from obslab.errors import DomainError
from obslab.grid import Field, Grid

X, Y, T, S = sp.symbols("x y t s", real=True)
VARIABLES = {"x": X, "y": Y, "t": T, "s": S}
MODE_SYMBOL = re.compile(r"^phi(\d+)$")

NAMESPACE = {
    **VARIABLES,
    "pi": sp.pi,
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "sqrt": sp.sqrt,
    "log": sp.log,
    "abs": sp.Abs,
    "I": sp.I,
    "E": sp.E,
}

# the names the parser's own transformations emit
PARSER_GLOBALS = {
    "Integer": sp.Integer,
    "Float": sp.Float,
    "Rational": sp.Rational,
    "Symbol": sp.Symbol,
    "Function": sp.Function,
}

EigenfunctionLookup = Callable[[int], Field]


@dataclass(frozen=True, eq=False)
class Expression:
    text: str
    expr: sp.Expr

    @property
    def variables(self) -> set[str]:
        return {str(v) for v in self.expr.free_symbols if str(v) in VARIABLES}

    @property
    def modes(self) -> list[int]:
        found = (MODE_SYMBOL.match(str(v)) for v in self.expr.free_symbols)
        return sorted(int(m.group(1)) for m in found if m)

    def _require(self, allowed: set[str], where: str):
        extra = self.variables - allowed
        if extra:
            raise DomainError(f"'{self.text}' uses {', '.join(sorted(extra))}, not allowed {where}")

    def _evaluate(self, values: dict, shape) -> np.ndarray:
        symbols = list(values)
        fn = sp.lambdify(symbols, self.expr, "numpy")
        with np.errstate(all="ignore"):
            out = np.asarray(fn(*values.values()))
        out = np.array(np.broadcast_to(out, shape))
        if not np.iscomplexobj(out):
            out = out.astype(float)
        if not np.all(np.isfinite(out)):
            raise DomainError(f"'{self.text}' is not finite everywhere")
        return out

    def on_grid(self, grid: Grid, eigenfunction: EigenfunctionLookup | None = None) -> Field:
        self._require({"x", "y"} if grid.dimension == 2 else {"x"}, "in space")
        mesh = grid.mesh()
        values = {X: mesh[0]}
        if grid.dimension == 2:
            values[Y] = mesh[1]
        for k in self.modes:
            if eigenfunction is None:
                raise DomainError(f"'{self.text}' references phi{k} but no eigenbasis is available")
            values[sp.Symbol(f"phi{k}")] = eigenfunction(k).values
        return Field(grid, self._evaluate(values, grid.shape))

    def in_time(self, times: np.ndarray) -> np.ndarray:
        self._require({"t"}, "in time")
        if self.modes:
            raise DomainError(f"'{self.text}' cannot use eigenfunctions as a time profile")
        times = np.asarray(times, dtype=float)
        return self._evaluate({T: times}, times.shape)

    def on_edge(self, s: np.ndarray) -> np.ndarray:
        self._require({"s"}, "on an edge")
        if self.modes:
            raise DomainError(f"'{self.text}' cannot use eigenfunctions on an edge")
        s = np.asarray(s, dtype=float)
        return self._evaluate({S: s}, s.shape)


@dataclass(frozen=True, eq=False)
class NodeTable:
    """Values at equispaced nodes, row-major [i, j] on the square.

    Evaluated where the nodes differ (a finer forward grid, another time
    step), the table is interpolated piecewise linearly.
    """

    values: tuple[float, ...]

    @property
    def table(self) -> np.ndarray:
        table = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(table)):
            raise DomainError("node table values must be finite")
        return table

    def _line(self, points: np.ndarray, start: float, stop: float) -> np.ndarray:
        table = self.table
        if table.size == np.size(points):
            return table.reshape(np.shape(points))
        if table.size < 2:
            raise DomainError(f"node table has {table.size} value(s), {np.size(points)} needed")
        return np.interp(points, np.linspace(start, stop, table.size), table)

    def on_grid(self, grid: Grid, eigenfunction: EigenfunctionLookup | None = None) -> Field:
        table = self.table
        if table.size == grid.size:
            return Field(grid, table.reshape(grid.shape))
        if grid.dimension == 1:
            return Field(grid, self._line(grid.axes[0], 0.0, 1.0))
        n = math.isqrt(table.size)
        if n < 2 or n * n != table.size:
            raise DomainError(f"node table has {table.size} values, not a square array of nodes")
        axis = np.linspace(0.0, 1.0, n)
        interpolant = RegularGridInterpolator((axis, axis), table.reshape(n, n), bounds_error=False, fill_value=None)
        return Field(grid, interpolant(np.stack(grid.mesh(), axis=-1)))

    def in_time(self, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        return self._line(times, float(times[0]), float(times[-1]))

    def on_edge(self, s: np.ndarray) -> np.ndarray:
        return self._line(np.asarray(s, dtype=float), 0.0, 1.0)


def parse_expression(text: str) -> Expression:
    try:
        expr = parse_expr(
            text,
            local_dict=dict(NAMESPACE),
            global_dict=dict(PARSER_GLOBALS),
            transformations=standard_transformations,
            evaluate=True,
        )
    except (SyntaxError, TypeError, TokenError, ValueError, AttributeError) as exc:
        raise DomainError(f"cannot parse expression '{text}': {exc}") from None
    if not isinstance(expr, sp.Expr):
        raise DomainError(f"'{text}' is not an arithmetic expression")
    calls = expr.atoms(AppliedUndef)
    if calls:
        raise DomainError(f"unknown function(s) in '{text}': {', '.join(sorted(str(c.func) for c in calls))}")
    for symbol in expr.free_symbols:
        name = str(symbol)
        if name not in VARIABLES and not MODE_SYMBOL.match(name):
            raise DomainError(f"unknown name '{name}' in '{text}'")
    return Expression(text, expr)


def parse_coefficient(value: str | list[float] | tuple[float, ...]) -> Expression | NodeTable:
    """An expression string or a list of node values."""
    if isinstance(value, (list, tuple)):
        return NodeTable(tuple(float(v) for v in value))
    return parse_expression(value)
