"""
Scenario files.

    # comment
    name = flat-h2-dilation

    [chart]
    dim = 8
    box = -1 1
    guard = norm2(q1) + norm2(q2) - 0.25     (points with guard > 0 are sampled)

    [fields]
    metric = euclidean | potential | entries
    mu = <expr>            g(i,j) = <expr>        triple = standard | broken
    X = dilation | components                   X(i) = <expr>
    u = <expr>             base = hp1 | hh1 | flat | quotient
    <name> = <expr>        (reusable sub-expression)

    [suites]
    run = hkt-verify homothety ...
    <suite option> = <value>

    [numeric]
    order = 4
    points = 32
"""

import logging
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from . import config
from .bundle import BASES, QKTChartData, flat_base
from .exceptions import ScenarioError, ScenarioSyntaxError, SuiteDependencyError, UnknownIdentifierError
from .expressions import Expression, compile_expression, quaternionic_groups
from .homothety import hkt_from_potential
from .jetcalc import Chart, TensorField, constant_field, dilation_field, function_field
from .jets import Jet
from .quatgeom import HKTStructure, QuaternionTriple, standard_triple
from .schemas import NumericConfig

logger = logging.getLogger(__name__)

SECTIONS = ('chart', 'fields', 'suites', 'numeric')
SUITES = ('hkt-verify', 'homothety', 'parameter-change', 'quotient', 'bundle', 'roundtrip', 'conformal',
          'local-positive', 'local-potential')
REQUIRES = {
    'parameter-change': ('homothety',),
    'quotient': ('homothety',),
    'roundtrip': ('quotient', 'bundle'),
    'local-potential': ('homothety',),
}
KEYWORDS = {
    'metric': ('euclidean', 'potential', 'entries'),
    'triple': ('standard', 'broken'),
    'X': ('dilation', 'components'),
    'base': ('hp1', 'hh1', 'flat', 'quotient'),
}
SUITE_OPTIONS = ('run', 'transforms', 'grid', 'k', 'flat', 'center', 'fiber')

_LINE = re.compile(r"^(?P<key>[A-Za-z_][A-Za-z_0-9-]*(?:\(\s*\d+\s*(?:,\s*\d+\s*)?\))?)\s*=\s*(?P<value>.*)$")
_INDEXED = re.compile(r"^(?P<name>g|X)\(\s*(?P<i>\d+)\s*(?:,\s*(?P<j>\d+)\s*)?\)$")


@dataclass
class Setting:
    value: str
    line: int
    column: int

    def numbers(self) -> List[float]:
        try:
            return [float(v) for v in self.value.split()]
        except ValueError:
            raise ScenarioSyntaxError(f"expected numbers, found {self.value!r}", self.line, self.column)


@dataclass
class Scenario:
    name: str
    chart: Chart
    groups: Dict[str, Tuple[int, ...]]
    keywords: Dict[str, Setting] = field(default_factory=dict)
    expressions: Dict[str, Expression] = field(default_factory=OrderedDict)
    suites: List[str] = field(default_factory=list)
    options: Dict[str, Setting] = field(default_factory=dict)
    numeric: NumericConfig = field(default_factory=NumericConfig)
    description: str = ''

    @property
    def metric_kind(self) -> str:
        return self.keywords['metric'].value if 'metric' in self.keywords else 'euclidean'

    def keyword(self, key: str, default: str) -> str:
        return self.keywords[key].value if key in self.keywords else default

    def option(self, key: str) -> Optional[Setting]:
        return self.options.get(key)


# === PARSING ===

class _SectionReader:
    """Collects `key = value` settings per section with their positions."""

    def __init__(self, text: str):
        self.header: Dict[str, Setting] = OrderedDict()
        self.sections: Dict[str, Dict[str, Setting]] = {name: OrderedDict() for name in SECTIONS}
        current = self.header
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].rstrip()
            if not line.strip():
                continue
            stripped = line.strip()
            indent = len(line) - len(line.lstrip())
            if stripped.startswith('['):
                if not stripped.endswith(']'):
                    raise ScenarioSyntaxError("unterminated section header", number, indent + len(stripped) + 1)
                section = stripped[1:-1].strip()
                if section not in self.sections:
                    raise ScenarioSyntaxError(f"unknown section [{section}]", number, indent + 2)
                current = self.sections[section]
                continue
            match = _LINE.match(stripped)
            if match is None:
                raise ScenarioSyntaxError("expected 'key = value'", number, indent + 1)
            key = re.sub(r"\s+", '', match.group('key'))
            if key in current:
                raise ScenarioSyntaxError(f"duplicate key {key!r}", number, indent + 1)
            column = indent + match.start('value') + 1
            current[key] = Setting(match.group('value').strip(), number, column)


def _parse_chart(settings: Dict[str, Setting]) -> Tuple[int, Tuple[str, ...], Tuple[float, float], Optional[Setting]]:
    if 'dim' not in settings:
        raise ScenarioSyntaxError("[chart] needs dim", 0, 0)
    dim_setting = settings['dim']
    try:
        dim = int(dim_setting.value)
    except ValueError:
        raise ScenarioSyntaxError(f"dim must be an integer, found {dim_setting.value!r}", dim_setting.line,
                                  dim_setting.column)
    if dim < 4 or dim % 4:
        raise ScenarioSyntaxError(f"dim must be a positive multiple of 4, found {dim}", dim_setting.line,
                                  dim_setting.column)
    coordinates = tuple(f"x{i}" for i in range(dim))
    if 'coordinates' in settings:
        coordinates = tuple(settings['coordinates'].value.split())
        if len(coordinates) != dim or len(set(coordinates)) != dim:
            setting = settings['coordinates']
            raise ScenarioSyntaxError(f"expected {dim} distinct coordinate names", setting.line, setting.column)
    box = config.DEFAULT_BOX
    if 'box' in settings:
        values = settings['box'].numbers()
        if len(values) != 2 or values[0] >= values[1]:
            raise ScenarioSyntaxError("box needs 'low high' with low < high", settings['box'].line,
                                      settings['box'].column)
        box = (values[0], values[1])
    for key, setting in settings.items():
        if key not in ('dim', 'coordinates', 'box', 'guard'):
            raise ScenarioSyntaxError(f"unknown [chart] key {key!r}", setting.line, 1)
    return dim, coordinates, box, settings.get('guard')


def _guard_function(expression: Optional[Expression]):
    if expression is None:
        return None

    def guard(point: np.ndarray) -> bool:
        value = expression.evaluate(Jet.variables(point, 0))
        return bool(float(value.value) > 0)

    return guard


def parse_scenario(text: str, name: Optional[str] = None) -> Scenario:
    reader = _SectionReader(text)
    dim, coordinates, box, guard_setting = _parse_chart(reader.sections['chart'])
    groups = quaternionic_groups(dim)
    reserved = set(coordinates) | set(groups)

    def compile_setting(setting: Setting, macros) -> Expression:
        return compile_expression(setting.value, coordinates, groups, macros, setting.line, setting.column - 1)

    guard = compile_setting(guard_setting, {}) if guard_setting else None
    scenario_name = name or (reader.header['name'].value if 'name' in reader.header else 'scenario')
    chart = Chart(dim, coordinates, (box[0],) * dim, (box[1],) * dim, _guard_function(guard), scenario_name)
    description = reader.header['description'].value if 'description' in reader.header else ''
    for key, setting in reader.header.items():
        if key not in ('name', 'description'):
            raise ScenarioSyntaxError(f"unknown top-level key {key!r}", setting.line, 1)
    scenario = Scenario(scenario_name, chart, groups, description=description)

    macros: Dict[str, Expression] = OrderedDict()
    for key, setting in reader.sections['fields'].items():
        indexed = _INDEXED.match(key)
        if key in KEYWORDS:
            if setting.value not in KEYWORDS[key]:
                raise ScenarioSyntaxError(f"{key} must be one of {', '.join(KEYWORDS[key])}", setting.line,
                                          setting.column)
            scenario.keywords[key] = setting
        elif indexed:
            indices = [int(indexed.group('i'))] + ([int(indexed.group('j'))] if indexed.group('j') else [])
            if any(i >= dim for i in indices) or (indexed.group('name') == 'g') != (len(indices) == 2):
                raise ScenarioSyntaxError(f"bad index in {key}", setting.line, 1)
            scenario.expressions[key] = compile_setting(setting, macros)
        else:
            if key in reserved:
                raise ScenarioSyntaxError(f"{key!r} shadows a coordinate or group", setting.line, 1)
            expression = compile_setting(setting, macros)
            scenario.expressions[key] = expression
            if key not in ('mu', 'u'):
                macros[key] = expression

    options = reader.sections['suites']
    if 'run' not in options:
        raise ScenarioSyntaxError("[suites] needs run", 0, 0)
    for key, setting in options.items():
        if key not in SUITE_OPTIONS:
            raise ScenarioSyntaxError(f"unknown [suites] key {key!r}", setting.line, 1)
    suites = options['run'].value.split()
    for suite in suites:
        if suite not in SUITES:
            run = options['run']
            raise UnknownIdentifierError(f"line {run.line}, column {run.column + run.value.index(suite)}: "
                                         f"unknown suite {suite!r}")
    scenario.suites = suites
    scenario.options = dict(options)

    numeric = {}
    for key, setting in reader.sections['numeric'].items():
        if key not in NumericConfig.model_fields:
            raise ScenarioSyntaxError(f"unknown [numeric] key {key!r}", setting.line, 1)
        numeric[key] = setting.value
    try:
        scenario.numeric = NumericConfig(**numeric)
    except ValidationError as error:
        raise ScenarioSyntaxError(f"invalid [numeric] values: {error.errors()[0]['msg']}", 0, 0) from error

    validate(scenario)
    return scenario


def validate(scenario: Scenario):
    """Suite dependencies and the fields each suite needs."""
    selected = set(scenario.suites)
    for suite in scenario.suites:
        missing = [r for r in REQUIRES.get(suite, ()) if r not in selected]
        if missing:
            raise SuiteDependencyError(f"suite {suite!r} requires {', '.join(missing)}")
    base = scenario.keyword('base', '')
    if base == 'quotient' and 'quotient' not in selected:
        raise SuiteDependencyError("base = quotient requires the quotient suite")
    needs = {
        'homothety': ('X',), 'bundle': ('base',), 'conformal': ('base', 'u'), 'local-positive': ('base',),
    }
    for suite, keys in needs.items():
        if suite in selected:
            for key in keys:
                if key not in scenario.keywords and key not in scenario.expressions:
                    raise SuiteDependencyError(f"suite {suite!r} needs a {key!r} field")
    if scenario.metric_kind == 'potential' and 'mu' not in scenario.expressions:
        raise SuiteDependencyError("metric = potential needs mu")
    if scenario.keyword('X', '') == 'components' and not any(k.startswith('X(') for k in scenario.expressions):
        raise SuiteDependencyError("X = components needs X(i) entries")


# === BUILT-INS ===

BUILTINS: Dict[str, str] = OrderedDict()

BUILTINS['flat-h2-dilation'] = """\
# Flat H^2 with the dilation field: type (2,-2), alpha = -2.
name = flat-h2-dilation

[chart]
dim = 8
box = -1 1
guard = norm2(q1) + norm2(q2) - 0.25

[fields]
metric = euclidean
X = dilation
base = quotient

[suites]
run = hkt-verify homothety parameter-change quotient bundle roundtrip
transforms = power:0.5 power:2 power:3 log power:-1
grid = -3 -2 -1.5 -1 -0.5

[numeric]
order = 4
points = 32
seed = 0
"""

BUILTINS['negative-control-broken-triple'] = """\
# K replaced by -K: the quaternion identities must fail.
name = negative-control-broken-triple

[chart]
dim = 8

[fields]
metric = euclidean
triple = broken

[suites]
run = hkt-verify
"""

BUILTINS['hp1-bundle'] = """\
# U(HP(1)) is flat H^2 in disguise.
name = hp1-bundle

[chart]
dim = 4
box = -1 1

[fields]
base = hp1

[suites]
run = bundle
flat = true

[numeric]
points = 16
"""

BUILTINS['potential-h1-quartic'] = """\
# mu = |q|^4 away from the origin: an HKT structure with torsion.
name = potential-h1-quartic

[chart]
dim = 4
box = -1 1
guard = norm2(q1) - 0.09

[fields]
metric = potential
mu = pow(norm2(q1), 2)
X = dilation

[suites]
run = hkt-verify homothety parameter-change
transforms = power:0.5 power:2 log
"""

BUILTINS['flat-h2-power2'] = """\
# |mu|^2 transform of flat H^2: type (4,-2) and a QKT quotient with torsion.
name = flat-h2-power2

[chart]
dim = 8
box = -1 1
guard = norm2(q1) + norm2(q2) - 0.25

[fields]
r = (norm2(q1) + norm2(q2)) / 4
metric = potential
mu = pow(r, 2)
X = dilation

[suites]
run = hkt-verify homothety quotient

[numeric]
level = 1.0
"""

BUILTINS['flat-h11-indefinite'] = """\
# H^(1,1): signature (4,4) and signature flips under parameter change.
name = flat-h11-indefinite

[chart]
dim = 8
box = -1 1
guard = norm2(q1) - norm2(q2) - 0.1

[fields]
metric = potential
mu = (norm2(q1) - norm2(q2)) / 4
X = dilation

[suites]
run = hkt-verify homothety parameter-change
transforms = power:0.5 power:2 power:-1 log
"""

BUILTINS['hh1-bundle'] = """\
# U(HH(1)) has signature (4,4); the alpha = 1 transform is definite.
name = hh1-bundle

[chart]
dim = 4
box = -0.5 0.5
guard = 0.81 - norm2(q1)

[fields]
base = hh1

[suites]
run = bundle
k = -2

[numeric]
points = 16
"""

BUILTINS['flat-h1-local-positive'] = """\
# Positive QKT data near the origin of flat H via the quadratic heuristic, and a conformal change by u.
name = flat-h1-local-positive

[chart]
dim = 4
box = -0.2 0.2

[fields]
base = flat
u = norm2(q1) / 2

[suites]
run = conformal local-positive
center = 0 0 0 0

[numeric]
points = 16
"""

BUILTINS['flat-h1-log-potential'] = """\
# log|mu| transform to a = 0 and the local potential with dmu = mu X♭.
name = flat-h1-log-potential

[chart]
dim = 4
box = -1 1
guard = norm2(q1) - 0.09

[fields]
metric = euclidean
X = dilation

[suites]
run = homothety local-potential
center = 0.6 0.1 0.1 0.1

[numeric]
points = 16
"""


def builtin_names() -> List[str]:
    return list(BUILTINS)


def load_scenario(source: str) -> Scenario:
    """A built-in name or a path to a scenario file."""
    if source in BUILTINS:
        return parse_scenario(BUILTINS[source], source)
    path = Path(source)
    if not path.is_file():
        raise ScenarioError(f"{source!r} is neither a built-in scenario nor a readable file")
    return parse_scenario(path.read_text(encoding='utf-8'))


# === STRUCTURES ===

class ScenarioModel:
    """The geometric objects a scenario declares, built lazily."""

    def __init__(self, scenario: Scenario, numeric: Optional[NumericConfig] = None):
        self.scenario = scenario
        self.numeric = numeric or scenario.numeric
        self.chart = scenario.chart

    @property
    def order(self) -> int:
        return self.numeric.order

    def scalar(self, key: str) -> TensorField:
        expression = self.scenario.expressions[key]
        return function_field(self.chart, '', expression.evaluate, key,
                              max_order=self.order + config.POTENTIAL_HEADROOM)

    def sample(self, count: Optional[int] = None, seed: Optional[int] = None) -> np.ndarray:
        return self.chart.sample(count or self.numeric.points, self.numeric.seed if seed is None else seed)

    @cached_property
    def points(self) -> np.ndarray:
        return self.sample()

    @cached_property
    def triple(self) -> QuaternionTriple:
        triple = standard_triple(self.chart, self.order)
        if self.scenario.keyword('triple', 'standard') == 'broken':
            broken = triple.K.scaled(-1.0)
            broken.name = 'K'
            logger.info("triple with K -> -K")
            return QuaternionTriple(triple.I, triple.J, broken)
        return triple

    @cached_property
    def hkt(self) -> HKTStructure:
        kind = self.scenario.metric_kind
        if kind == 'potential':
            return hkt_from_potential(self.scalar('mu'), self.triple, self.points, name=self.scenario.name)
        if kind == 'entries':
            return HKTStructure(self._metric_entries(), self.triple, self.scenario.name)
        metric = constant_field(self.chart, np.eye(self.chart.dim), 'll', 'g', 'symmetric', self.order)
        return HKTStructure(metric, self.triple, self.scenario.name)

    def _metric_entries(self) -> TensorField:
        dim = self.chart.dim
        entries = {}
        for key, expression in self.scenario.expressions.items():
            match = _INDEXED.match(key)
            if match and match.group('name') == 'g':
                i, j = int(match.group('i')), int(match.group('j'))
                entries[(min(i, j), max(i, j))] = expression

        def metric(v: Jet) -> Jet:
            zero = v[0] * 0.0
            rows = []
            for i in range(dim):
                row = []
                for j in range(dim):
                    expression = entries.get((min(i, j), max(i, j)))
                    row.append(expression.evaluate(v) if expression is not None else zero)
                rows.append(Jet.stack(row))
            return Jet.stack(rows)

        return function_field(self.chart, 'll', metric, 'g', 'symmetric', self.order)

    @cached_property
    def X(self) -> TensorField:
        if self.scenario.keyword('X', 'dilation') == 'dilation':
            return dilation_field(self.chart)
        components = {}
        for key, expression in self.scenario.expressions.items():
            match = _INDEXED.match(key)
            if match and match.group('name') == 'X':
                components[int(match.group('i'))] = expression

        def vector(v: Jet) -> Jet:
            zero = v[0] * 0.0
            return Jet.stack([components[i].evaluate(v) if i in components else zero
                              for i in range(self.chart.dim)])

        return function_field(self.chart, 'u', vector, 'X', max_order=self.order)

    @cached_property
    def u(self) -> TensorField:
        return self.scalar('u')

    @cached_property
    def base(self) -> QKTChartData:
        kind = self.scenario.keyword('base', 'flat')
        if kind == 'quotient':
            raise ScenarioError("base = quotient is provided by the quotient suite")
        if kind == 'flat':
            return flat_base(self.chart, self.order)
        return BASES[kind](self.chart, self.order)

    def center(self) -> np.ndarray:
        setting = self.scenario.option('center')
        if setting is None:
            return 0.5 * (np.asarray(self.chart.lower) + np.asarray(self.chart.upper))
        values = setting.numbers()
        if len(values) != self.chart.dim:
            raise ScenarioSyntaxError(f"center needs {self.chart.dim} numbers", setting.line, setting.column)
        return np.asarray(values)
