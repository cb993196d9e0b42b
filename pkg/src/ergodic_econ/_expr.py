"""Safe parsing of scalar wealth expressions such as ``0.05*x`` or ``x^0.5 + 0.25``.

Expressions may reference the single variable ``x``, numeric constants and a
small whitelist of elementary functions.  A parsed expression compiles to a
numpy-vectorised callable and, on demand, to a numba-jitted scalar function
inlined into the simulation kernel.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_FUNCS = {
    "exp": "np.exp",
    "log": "np.log",
    "ln": "np.log",
    "sqrt": "np.sqrt",
    "abs": "np.abs",
    "sin": "np.sin",
    "cos": "np.cos",
    "tanh": "np.tanh",
}
_CONSTS = {"pi": repr(float(np.pi)), "e": repr(float(np.e))}
_BINOPS = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/", ast.Pow: "**"}
_UNARY = {ast.USub: "-", ast.UAdd: "+"}


class ExpressionError(ValueError):
    """Raised when an expression cannot be parsed or uses forbidden syntax."""


def _emit(node: ast.AST, text: str) -> str:
    if isinstance(node, ast.Expression):
        return _emit(node.body, text)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return repr(float(node.value))
    if isinstance(node, ast.Name):
        if node.id == "x":
            return "x"
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ExpressionError(f"unknown name {node.id!r} in {text!r}; only 'x' is allowed")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return f"({_emit(node.left, text)} {_BINOPS[type(node.op)]} {_emit(node.right, text)})"
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return f"({_UNARY[type(node.op)]}{_emit(node.operand, text)})"
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id}() takes exactly one argument in {text!r}")
        return f"{_FUNCS[node.func.id]}({_emit(node.args[0], text)})"
    raise ExpressionError(f"unsupported syntax {ast.dump(node)[:40]}... in {text!r}")


@dataclass(frozen=True)
class Expression:
    """A parsed scalar expression in ``x``.

    ``text`` is the user's original string; ``source`` the normalised Python
    source that both the numpy and the numba compilers consume.
    """

    text: str
    source: str
    _fn: Callable = field(repr=False, compare=False)

    def __call__(self, x):
        with np.errstate(all="ignore"):
            out = self._fn(np.asarray(x, dtype=float))
        if np.ndim(out) == 0:
            out = np.full(np.shape(x), float(out)) if np.ndim(x) else float(out)
        return out


def parse_expression(text: str) -> Expression:
    """Parse ``text`` into an :class:`Expression`.

    ``^`` is accepted as exponentiation and ``·`` as multiplication.

    >>> parse_expression("0.05*x")(2.0)
    0.1
    """
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression")
    norm = text.strip().replace("^", "**").replace("·", "*")
    try:
        tree = ast.parse(norm, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    source = _emit(tree, text)
    fn = eval(f"lambda x: {source}", {"np": np, "__builtins__": {}})  # noqa: S307 - whitelisted AST
    return Expression(text=text.strip(), source=source, _fn=fn)


def constant(value: float) -> Expression:
    return parse_expression(repr(float(value)))

