import numpy as np
import pytest

from hktgeom.exceptions import ArityError, ScenarioSyntaxError, UnknownIdentifierError
from hktgeom.expressions import (Binary, Call, Name, compile_expression, evaluate_at, parse_expression,
                                 quaternionic_groups, tokenize)
from hktgeom.jets import Jet

COORDINATES = ('x0', 'x1', 'x2', 'x3')
GROUPS = quaternionic_groups(4)


def test_precedence():
    node = parse_expression('x0 + x1 * x2')
    assert isinstance(node, Binary) and node.op == '+'
    assert isinstance(node.right, Binary) and node.right.op == '*'


def test_call_arguments():
    node = parse_expression('pow(x0, 2)')
    assert isinstance(node, Call)
    assert node.function == 'pow'
    assert isinstance(node.args[0], Name)


def test_token_columns_are_one_based_and_offset():
    tokens = tokenize('x0 + 1', offset=10)
    assert [t.column for t in tokens[:3]] == [11, 14, 16]


def test_unexpected_character_reports_column():
    with pytest.raises(ScenarioSyntaxError) as info:
        parse_expression('x0 + $', line=3)
    assert (info.value.line, info.value.column) == (3, 6)


def test_unbalanced_parenthesis():
    with pytest.raises(ScenarioSyntaxError) as info:
        parse_expression('(x0 + 1')
    assert 'end of input' in str(info.value)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError, match="'y7'"):
        compile_expression('x0 + y7', COORDINATES, GROUPS)


def test_unknown_function():
    with pytest.raises(UnknownIdentifierError, match='sinh'):
        compile_expression('sinh(x0)', COORDINATES, GROUPS)


def test_wrong_arity():
    with pytest.raises(ArityError):
        compile_expression('exp(x0, x1)', COORDINATES, GROUPS)


def test_pow_needs_constant_exponent():
    with pytest.raises(ArityError):
        compile_expression('pow(x0, x1)', COORDINATES, GROUPS)
    compile_expression('pow(x0, -1/2)', COORDINATES, GROUPS)


def test_norm2_needs_a_group():
    with pytest.raises(UnknownIdentifierError):
        compile_expression('norm2(x0)', COORDINATES, GROUPS)


def test_quaternionic_groups():
    assert quaternionic_groups(8) == {'q1': (0, 1, 2, 3), 'q2': (4, 5, 6, 7)}


def test_evaluate():
    point = [0.5, -1.0, 2.0, 0.25]
    assert evaluate_at(compile_expression('norm2(q1) / 2', COORDINATES, GROUPS), point) == pytest.approx(2.65625)
    assert evaluate_at(compile_expression('-x1 * exp(0)', COORDINATES, GROUPS), point) == pytest.approx(1.0)
    assert evaluate_at(compile_expression('pow(x2, 3) - sqrt(x3)', COORDINATES, GROUPS), point) == pytest.approx(7.5)
    assert evaluate_at(compile_expression('3', COORDINATES, GROUPS), point) == pytest.approx(3.0)


def test_macros_expand():
    r2 = compile_expression('norm2(q1)', COORDINATES, GROUPS)
    mu = compile_expression('r2 * r2', COORDINATES, GROUPS, {'r2': r2})
    assert evaluate_at(mu, [1.0, 1.0, 0.0, 0.0]) == pytest.approx(4.0)


def test_evaluation_carries_derivatives():
    expression = compile_expression('x0 * x1 + log(x2)', COORDINATES, GROUPS)
    jet = expression.evaluate(Jet.variables(np.array([2.0, 3.0, 1.0, 0.0]), 1))
    np.testing.assert_allclose(jet.grad().value, [3.0, 2.0, 1.0, 0.0])
