"""Restricted expression grammar for metric, Higgs-field and bundle-metric entries.

Entries are strings such as ``"1 + 0.1*cos(2*pi*x0)"``. Allowed: numeric literals
(complex ``1j`` included), the names ``pi`` and ``x0 .. x{2n-1}``, the operators
``+ - * / **``, unary signs, and the functions ``sin``, ``cos`` and ``exp``.
"""

import ast
import re
from typing import Sequence, Union

import numpy as np

FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

_BINARY = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}
_UNARY = {ast.USub: np.negative, ast.UAdd: np.positive}
_COORDINATE = re.compile(r"^x(\d+)$")

Entry = Union[str, int, float, complex]


class FormulaError(ValueError):
    """Raised when an entry formula falls outside the grammar."""


def parse_formula(expr: Entry, real_dim: int) -> ast.AST:
    """Parse and validate an entry; numbers are accepted as constant formulas."""
    if isinstance(expr, bool):
        raise FormulaError(f"boolean is not a formula: {expr!r}")
    if isinstance(expr, (int, float, complex)):
        return ast.Expression(body=ast.Constant(value=expr))
    if not isinstance(expr, str):
        raise FormulaError(f"formula must be a string or number, got {type(expr).__name__}")
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as e:
        raise FormulaError(f"cannot parse {expr!r}: {e.msg}")
    _validate(tree.body, expr, real_dim)
    return tree


def _validate(node: ast.AST, expr: str, real_dim: int) -> None:
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float, complex)):
            raise FormulaError(f"unsupported literal {node.value!r} in {expr!r}")
    elif isinstance(node, ast.Name):
        match = _COORDINATE.match(node.id)
        if node.id == "pi":
            return
        if match is None:
            raise FormulaError(f"unknown name {node.id!r} in {expr!r}")
        if int(match.group(1)) >= real_dim:
            raise FormulaError(f"coordinate {node.id} out of range in {expr!r}")
    elif isinstance(node, ast.BinOp):
        if type(node.op) not in _BINARY:
            raise FormulaError(f"unsupported operator in {expr!r}")
        _validate(node.left, expr, real_dim)
        _validate(node.right, expr, real_dim)
    elif isinstance(node, ast.UnaryOp):
        if type(node.op) not in _UNARY:
            raise FormulaError(f"unsupported unary operator in {expr!r}")
        _validate(node.operand, expr, real_dim)
    elif isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
            raise FormulaError(f"only sin, cos and exp may be called in {expr!r}")
        if len(node.args) != 1 or node.keywords:
            raise FormulaError(f"functions take exactly one argument in {expr!r}")
        _validate(node.args[0], expr, real_dim)
    else:
        raise FormulaError(f"unsupported syntax {type(node).__name__} in {expr!r}")


def _evaluate(node: ast.AST, coords: Sequence[np.ndarray]):
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return np.pi
        return coords[int(node.id[1:])]
    if isinstance(node, ast.BinOp):
        return _BINARY[type(node.op)](_evaluate(node.left, coords), _evaluate(node.right, coords))
    if isinstance(node, ast.UnaryOp):
        return _UNARY[type(node.op)](_evaluate(node.operand, coords))
    return FUNCTIONS[node.func.id](_evaluate(node.args[0], coords))


def evaluate_formula(expr: Entry, coords: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate an entry on lattice coordinates as a complex field."""
    tree = parse_formula(expr, len(coords))
    value = _evaluate(tree.body, coords)
    return np.broadcast_to(np.asarray(value, dtype=complex), coords[0].shape).copy()


def evaluate_matrix(entries: Sequence[Sequence[Entry]], coords: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate a square matrix of entries into a field of matrices."""
    rows = len(entries)
    if any(len(row) != rows for row in entries):
        raise FormulaError("entry matrix must be square")
    out = np.empty(coords[0].shape + (rows, rows), dtype=complex)
    for a, row in enumerate(entries):
        for b, expr in enumerate(row):
            out[..., a, b] = evaluate_formula(expr, coords)
    return out


def is_constant(expr: Entry) -> bool:
    """True when the entry does not reference any coordinate."""
    if not isinstance(expr, str):
        return True
    return not any(
        isinstance(node, ast.Name) and node.id != "pi" for node in ast.walk(ast.parse(expr, mode="eval"))
    )
