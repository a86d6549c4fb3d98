import json

import pytest

from hktgeom.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main
from hktgeom.scenarios import builtin_names, load_scenario
from hktgeom.schemas import NumericConfig
from hktgeom.suites import execution_order, render, run_suites


def test_list_builtins(capsys):
    assert main(['list-builtins']) == EXIT_PASS
    output = capsys.readouterr().out
    for name in builtin_names():
        assert name in output


def test_unknown_scenario_is_a_usage_error(capsys):
    assert main(['verify', 'no-such-scenario']) == EXIT_USAGE
    assert 'error' in capsys.readouterr().err


def test_invalid_numeric_option_is_a_usage_error(capsys):
    assert main(['verify', 'negative-control-broken-triple', '--points', '0']) == EXIT_USAGE


def test_missing_command_exits_with_usage():
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 2


def test_broken_triple_fails(capsys, tmp_path):
    report = tmp_path / 'out' / 'report.txt'
    code = main(['verify', 'negative-control-broken-triple', '--points', '3', '--report', str(report)])
    assert code == EXIT_FAIL
    output = capsys.readouterr().out
    assert 'FAIL' in output
    assert output.splitlines()[-1].startswith('summary:')
    assert report.read_text(encoding='utf-8') == output


def test_structured_report(capsys):
    main(['verify', 'negative-control-broken-triple', '--points', '3', '--format', 'structured'])
    body = json.loads(capsys.readouterr().out)
    assert body['scenario'] == 'negative-control-broken-triple'
    assert body['environment']['points'] == 3
    assert any(not check['passed'] for check in body['checks'])


def test_reports_are_deterministic(numeric):
    scenario = load_scenario('negative-control-broken-triple')
    assert render(run_suites(scenario, numeric)) == render(run_suites(scenario, numeric))


def test_dependencies_run_first():
    scenario = load_scenario('flat-h2-dilation')
    order = execution_order(['roundtrip', 'bundle', 'quotient', 'homothety'], scenario)
    assert order.index('homothety') < order.index('quotient') < order.index('bundle') < order.index('roundtrip')


@pytest.mark.slow
@pytest.mark.parametrize('name', builtin_names())
def test_builtin_scenarios(name, capsys):
    expected = EXIT_FAIL if name.startswith('negative-control') else EXIT_PASS
    assert main(['verify', name, '--points', '4']) == expected, capsys.readouterr().out


@pytest.mark.slow
def test_listed_degenerate_power_is_an_expected_rejection(capsys):
    assert main(['verify', 'flat-h2-dilation', '--points', '4', '--format', 'structured']) == EXIT_PASS
    checks = {check['check_id']: check for check in json.loads(capsys.readouterr().out)['checks']}
    assert checks['parameter-change.|mu|^-1 rejected']['passed']
    assert checks['quotient.instanton']['passed']
    assert checks['quotient.trace identity']['passed']


@pytest.mark.slow
def test_flat_dilation_reports_alpha(capsys):
    scenario = load_scenario('flat-h2-dilation')
    scenario.suites = ['hkt-verify', 'homothety']
    report = run_suites(scenario, NumericConfig(points=4))
    assert report.measured['alpha'] == pytest.approx(-2.0, abs=1e-6)


@pytest.mark.slow
def test_failed_instanton_verdict_fails_the_quotient(monkeypatch):
    monkeypatch.setattr('hktgeom.suites.instanton_check', lambda *args, **kwargs: (False, 1.0))
    report = run_suites(load_scenario('flat-h2-power2'), NumericConfig(points=4))
    checks = {check.check_id: check for check in report.checks}
    assert not checks['quotient.instanton'].passed
    assert not report.passed
