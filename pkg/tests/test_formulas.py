import numpy as np
import pytest

from src.formulas import FormulaError, evaluate_formula, evaluate_matrix, is_constant, parse_formula
from src.lattice import LatticeGrid


@pytest.fixture
def coords():
    return LatticeGrid(complex_dim=1, points_per_axis=8).coordinates()


def test_evaluates_on_coordinates(coords):
    value = evaluate_formula("1 + 0.1*cos(2*pi*x0)", coords)
    assert np.allclose(value, 1 + 0.1 * np.cos(2 * np.pi * coords[0]))


def test_numbers_are_constant_formulas(coords):
    value = evaluate_formula(0.5, coords)
    assert value.shape == coords[0].shape
    assert np.all(value == 0.5)
    assert is_constant(0.5)
    assert is_constant("2*pi")
    assert not is_constant("sin(x1)")


def test_complex_literals(coords):
    assert np.allclose(evaluate_formula("1j*x1", coords), 1j * coords[1])


@pytest.mark.parametrize(
    "expr",
    ["__import__('os')", "x2", "tan(x0)", "x0 if x1 else 1", "a.b", "sin(x0, x1)", "x0 // 2"],
)
def test_rejects_outside_grammar(expr):
    with pytest.raises(FormulaError):
        parse_formula(expr, 2)


def test_rejects_booleans():
    with pytest.raises(FormulaError):
        parse_formula(True, 2)


def test_matrix_must_be_square(coords):
    with pytest.raises(FormulaError):
        evaluate_matrix([[1, 0], [0]], coords)
    m = evaluate_matrix([[1, "x0"], ["x0", 2]], coords)
    assert m.shape == coords[0].shape + (2, 2)
