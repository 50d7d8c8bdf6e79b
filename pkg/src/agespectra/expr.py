"""Small arithmetic language for rate expressions in ``a`` (age) and ``x`` (space).

Grammar: numeric constants, ``pi``, the variables ``a`` and ``x``, the binary
operators ``+ - * / ^`` (``^`` is power), unary minus, and the functions
``exp``, ``sqrt``, ``abs``, ``min``, ``max``.
"""

from __future__ import annotations

import ast
import functools
import math

import numpy as np

_FUNCTIONS = {
    "exp": (np.exp, 1),
    "sqrt": (np.sqrt, 1),
    "abs": (np.abs, 1),
    "min": (lambda *args: functools.reduce(np.minimum, args), None),
    "max": (lambda *args: functools.reduce(np.maximum, args), None),
}
_CONSTANTS = {"pi": math.pi}
_VARIABLES = ("a", "x")

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class ExpressionError(ValueError):
    pass


class Expression:
    """Compiled rate expression, vectorised over broadcastable ``a`` and ``x``."""

    def __init__(self, text: str):
        if not isinstance(text, str) or not text.strip():
            raise ExpressionError("empty expression")
        self.text = text.strip()
        try:
            tree = ast.parse(self.text.replace("^", "**"), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body
        self.variables = frozenset(
            n.id for n in ast.walk(tree.body) if isinstance(n, ast.Name) and n.id in _VARIABLES
        )

    def _check(self, node):
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
                raise ExpressionError(f"unsupported literal {node.value!r} in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in _VARIABLES and node.id not in _CONSTANTS:
                raise ExpressionError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExpressionError(f"unsupported operator in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"unsupported unary operator in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
                raise ExpressionError(f"unknown function in {self.text!r}")
            if node.keywords:
                raise ExpressionError(f"keyword arguments not allowed in {self.text!r}")
            arity = _FUNCTIONS[node.func.id][1]
            n = len(node.args)
            if (arity is not None and n != arity) or (arity is None and n < 1):
                raise ExpressionError(f"wrong number of arguments to {node.func.id} in {self.text!r}")
            for arg in node.args:
                self._check(arg)
        else:
            raise ExpressionError(f"unsupported syntax {type(node).__name__} in {self.text!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTANTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            return -val if isinstance(node.op, ast.USub) else val
        func = _FUNCTIONS[node.func.id][0]
        return func(*(self._eval(arg, env) for arg in node.args))

    def __call__(self, a, x):
        a = np.asarray(a, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(a.shape, x.shape)
        with np.errstate(all="ignore"):
            out = self._eval(self._tree, {"a": a, "x": x})
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def __repr__(self):
        return f"Expression({self.text!r})"
