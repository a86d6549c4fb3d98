from pathlib import Path

import numpy as np
import pytest

from hktgeom.exceptions import ScenarioError, ScenarioSyntaxError, SuiteDependencyError, UnknownIdentifierError
from hktgeom.scenarios import BUILTINS, ScenarioModel, builtin_names, load_scenario, parse_scenario

SCENARIO_DIR = Path(__file__).resolve().parent.parent / 'scenarios'

MINIMAL = """\
name = minimal

[chart]
dim = 4
box = -1 1

[fields]
metric = potential
mu = pow(norm2(q1), 2)
X = dilation

[suites]
run = hkt-verify homothety

[numeric]
points = 5
"""


@pytest.mark.parametrize('name', builtin_names())
def test_builtins_parse(name):
    scenario = load_scenario(name)
    assert scenario.name == name
    assert scenario.suites


@pytest.mark.parametrize('name', builtin_names())
def test_scenario_files_match_builtins(name):
    assert (SCENARIO_DIR / f"{name}.scn").read_text(encoding='utf-8') == BUILTINS[name]


def test_minimal_scenario():
    scenario = parse_scenario(MINIMAL)
    assert scenario.chart.dim == 4
    assert scenario.metric_kind == 'potential'
    assert scenario.numeric.points == 5
    assert scenario.suites == ['hkt-verify', 'homothety']
    model = ScenarioModel(scenario)
    point = np.array([0.5, 0.1, -0.2, 0.3])
    assert float(model.scalar('mu').value(point)) == pytest.approx((point @ point) ** 2)


def test_load_from_path(tmp_path):
    path = tmp_path / 'minimal.scn'
    path.write_text(MINIMAL, encoding='utf-8')
    assert load_scenario(str(path)).name == 'minimal'


def test_missing_scenario():
    with pytest.raises(ScenarioError):
        load_scenario('no-such-scenario')


def test_missing_dependency():
    text = MINIMAL.replace('run = hkt-verify homothety', 'run = quotient')
    with pytest.raises(SuiteDependencyError, match='homothety'):
        parse_scenario(text)


def test_potential_metric_needs_mu():
    text = MINIMAL.replace('mu = pow(norm2(q1), 2)\n', '')
    with pytest.raises(SuiteDependencyError):
        parse_scenario(text)


def test_unknown_suite_column():
    text = MINIMAL.replace('run = hkt-verify homothety', 'run = hkt-verify holonomy')
    with pytest.raises(UnknownIdentifierError, match='line 13, column 18'):
        parse_scenario(text)


def test_expression_error_reports_line_and_column():
    text = MINIMAL.replace('mu = pow(norm2(q1), 2)', 'mu = norm2(q1) * * 2')
    with pytest.raises(ScenarioSyntaxError) as info:
        parse_scenario(text)
    assert (info.value.line, info.value.column) == (9, 18)


def test_dimension_must_be_quaternionic():
    with pytest.raises(ScenarioSyntaxError, match='multiple of 4'):
        parse_scenario(MINIMAL.replace('dim = 4', 'dim = 6'))


def test_bad_keyword_value():
    with pytest.raises(ScenarioSyntaxError, match='triple must be one of'):
        parse_scenario(MINIMAL.replace('X = dilation', 'X = dilation\ntriple = octonionic'))


def test_unknown_section():
    with pytest.raises(ScenarioSyntaxError, match=r'unknown section \[output\]'):
        parse_scenario(MINIMAL + '\n[output]\n')


def test_invalid_numeric_value():
    with pytest.raises(ScenarioSyntaxError, match='invalid'):
        parse_scenario(MINIMAL.replace('points = 5', 'points = many'))
