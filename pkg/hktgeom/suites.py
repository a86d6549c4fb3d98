"""
Verification suites, check records and report rendering.

Every check is a CheckRecord with an id `<suite>.<name>`, the formula it
tests, the worst residual, and the tolerance (already multiplied by the
sample scale). Negative controls pass when the residual exceeds
NEGATIVE_CONTROL_FACTOR times their tolerance.
"""

import logging
from collections import OrderedDict
from contextlib import contextmanager
from datetime import datetime, timezone
from itertools import permutations
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__, config
from .bundle import (BundleChart, ConformalChange, expected_bundle_signature, bundle_identity_residuals,
                     bundle_parameter_change, hkt_on_UN, horizontal_scaling_residual, instanton_residual,
                     local_positive_qkt, rotated_chart_data, roundtrip, sigma_sum_formula, slice_chart_data,
                     volume_density)
from .exceptions import GeometryError, ScenarioError
from .homothety import (TransformSpec, bracket_check, alpha_grid, exactness_and_interior, hkt_from_potential,
                        is_definite, ixc_identity, ixc_residual, measure_type, non_homothetic_field, parameter_change,
                        potential_from_homothety, potential_roundtrip_residual, random_constant_field,
                        local_potential)
from .jetcalc import TensorField, constant_field, levi_civita, metric_norm, riemann_curvature, sample_scale
from .quatgeom import (HKTStructure, obata_connection, parallel_residual, type_30_residual, verify_hkt,
                       xi_antisymmetry_residual, xi_commutator_residual)
from .quotient import (QuotientBuilder, dtau_type_check, instanton_check, invariance_check, sigma_proportionality,
                       signature_bookkeeping, trace_identity, weyl_minus)
from .scenarios import REQUIRES, Scenario, ScenarioModel
from .schemas import CheckRecord, Environment, NumericConfig, Report
from .utils import least_squares_ratio, max_abs, random_rotation, random_vectors, signature

logger = logging.getLogger(__name__)

# residual name -> (anchor, tolerance name)
HKT_CHECKS = OrderedDict([
    ('quaternion_identities', ('I² = J² = K² = IJK = -1', 'identity')),
    ('hermitian', ('g(A·, A·) = g', 'tight')),
    ('torsion_agreement', ('-c = d_I F_I = d_J F_J = d_K F_K', 'torsion')),
    ('torsion_skew', ('c totally skew', 'tight')),
    ('nabla_g', ('∇g = 0', 'base')),
    ('nabla_I', ('∇I = 0', 'base')),
    ('nabla_J', ('∇J = 0', 'base')),
    ('nabla_K', ('∇K = 0', 'base')),
    ('type_I', ('c ∈ Λ^{2,1}+Λ^{1,2} for I', 'tight')),
    ('type_J', ('c ∈ Λ^{2,1}+Λ^{1,2} for J', 'tight')),
    ('type_K', ('c ∈ Λ^{2,1}+Λ^{1,2} for K', 'tight')),
    ('nijenhuis_I', ('N_I = 0', 'base')),
    ('nijenhuis_J', ('N_J = 0', 'base')),
    ('nijenhuis_K', ('N_K = 0', 'base')),
])

QUOTIENT_CHECKS = OrderedDict([
    ('level', ('mu = level', 'tight')),
    ('regularity', ('dmu = 2 X♭/(a-b)', 'base')),
    ('H in ker dmu', ('H ⊂ ker dmu', 'base')),
    ('quaternion_identities', ('I_N² = -1, I_N J_N = K_N = -J_N I_N', 'base')),
    ('c_N type', ('c^N ∈ Λ^{2,1}+Λ^{1,2}', 'base')),
    ('tau I-independence', ('τ_I = τ_J = τ_K', 'base')),
    ('beta type', ('β_A ∈ Λ^{1,1}_A', 'base')),
    ('sigma symmetry', ('σ^q symmetric', 'base')),
    ('sigma type', ('σ^q ∈ S^{1,1}', 'base')),
])

DEFAULT_TRANSFORMS = 'power:0.5 power:2 power:3 log'


class SuiteContext:
    """Collects check records and shares results between suites."""

    def __init__(self, scenario: Scenario, numeric: NumericConfig):
        self.scenario = scenario
        self.numeric = numeric
        self.model = ScenarioModel(scenario, numeric)
        self.records: List[CheckRecord] = []
        self.measured: Dict[str, object] = OrderedDict()
        self.state: Dict[str, object] = {}
        self.suite = ''

    def tolerance(self, name: str = 'base') -> float:
        return self.numeric.tolerance(name)

    def _add(self, name: str, **fields) -> CheckRecord:
        record = CheckRecord(check_id=f"{self.suite}.{name}", **fields)
        self.records.append(record)
        level = logging.DEBUG if record.passed else logging.WARNING
        logger.log(level, f"{record.check_id}: residual={record.residual} tolerance={record.tolerance} "
                          f"{'PASS' if record.passed else 'FAIL'}")
        return record

    def check(self, name: str, anchor: str, residual: float, tolerance: str = 'base', scale: float = 1.0,
              points: int = 0, message: str = '') -> CheckRecord:
        limit = self.tolerance(tolerance) * scale
        residual = float(residual)
        passed = bool(np.isfinite(residual) and residual <= limit)
        return self._add(name, anchor=anchor, residual=residual, tolerance=limit, passed=passed, points=points,
                         message=message)

    def control(self, name: str, anchor: str, residual: float, tolerance: str = 'base', scale: float = 1.0,
                points: int = 0) -> CheckRecord:
        """Negative control: passes when the defect is detected."""
        limit = self.tolerance(tolerance) * scale
        residual = float(residual)
        passed = bool(residual > config.NEGATIVE_CONTROL_FACTOR * limit)
        return self._add(name, anchor=anchor, residual=residual, tolerance=limit, passed=passed, points=points,
                         message='negative control: residual must exceed the tolerance')

    def verdict(self, name: str, anchor: str, passed: bool, message: str = '', points: int = 0) -> CheckRecord:
        return self._add(name, anchor=anchor, passed=bool(passed), points=points, message=message)

    def skip(self, name: str, anchor: str, message: str) -> CheckRecord:
        return self._add(name, anchor=anchor, passed=True, skipped=True, message=message)

    def measure(self, name: str, value):
        if isinstance(value, (np.floating, np.integer)):
            value = value.item()
        elif isinstance(value, tuple):
            value = list(value)
        self.measured[name] = value

    @contextmanager
    def guarded(self, name: str, anchor: str = ''):
        """Turn operation failures into failed checks."""
        try:
            yield
        except GeometryError as error:
            logger.error(f"{self.suite}.{name}: {error}")
            self._add(name, anchor=anchor, passed=False, residual=error.residual, message=str(error))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as error:
            logger.exception(f"{self.suite}.{name}: unexpected failure")
            self._add(name, anchor=anchor, passed=False, message=f"{type(error).__name__}: {error}")

    def require(self, key: str):
        if key not in self.state:
            raise ScenarioError(f"{self.suite} needs the result of an earlier suite ({key}) which failed")
        return self.state[key]


# === HKT ===

def three_zero_form(dim: int) -> np.ndarray:
    """Re(θ1∧θ2∧θ3) with θ1 = dx0 - i dx1, θ2 = dx2 + i dx3, θ3 = dx4 - i dx5."""
    thetas = np.zeros((3, dim), dtype=complex)
    thetas[0, 0], thetas[0, 1] = 1, -1j
    thetas[1, 2], thetas[1, 3] = 1, 1j
    thetas[2, 4], thetas[2, 5] = 1, -1j
    form = np.zeros((dim, dim, dim), dtype=complex)
    for perm in permutations(range(3)):
        sign = np.linalg.det(np.eye(3)[list(perm)])
        form += sign * np.einsum('a,b,c->abc', thetas[perm[0]], thetas[perm[1]], thetas[perm[2]])
    return form.real


def record_hkt_residuals(ctx: SuiteContext, hkt: HKTStructure, points: np.ndarray, prefix: str = ''):
    scale = sample_scale([hkt.metric], points)
    residuals = verify_hkt(hkt, points)
    for key, (anchor, tolerance) in HKT_CHECKS.items():
        ctx.check(prefix + key, anchor, residuals[key], tolerance, scale, len(points))
    ctx.measure(f"{prefix}|c|", residuals['torsion_norm'])
    return residuals, scale


def run_hkt_verify(ctx: SuiteContext):
    points = ctx.model.points
    with ctx.guarded('structure', 'HKT structure'):
        hkt = ctx.model.hkt
        ctx.state['hkt'] = hkt
    if 'hkt' not in ctx.state:
        return
    with ctx.guarded('verifier', 'HKT axioms'):
        residuals, scale = record_hkt_residuals(ctx, hkt, points)
        if residuals['quaternion_identities'] > ctx.tolerance('identity') * scale:
            ctx.skip('xi', 'ξ_Y Z - ξ_Z Y + T(Y,Z) = 0', 'triple is not quaternionic')
            return
    with ctx.guarded('xi', 'ξ_Y Z - ξ_Z Y + T(Y,Z) = 0'):
        xi = hkt.xi
        ctx.check('xi antisymmetrization', 'ξ_Y Z - ξ_Z Y + T(Y,Z) = 0',
                  max(xi_antisymmetry_residual(xi, hkt.torsion_tensor, p) for p in points), 'tight', scale,
                  len(points))
        ctx.check('xi commutes with triple', '[ξ_Y, A] = 0',
                  max(xi_commutator_residual(xi, hkt.triple, p) for p in points), 'tight', scale, len(points))
    with ctx.guarded('obata', '∇^Ob = ∇ + ξ'):
        obata = obata_connection(hkt)
        torsion = obata.torsion()
        ctx.check('obata torsion-free', 'T(∇ + ξ) = 0', max(max_abs(torsion.value(p)) for p in points),
                  'torsion', scale, len(points))
        ctx.check('obata preserves triple', '(∇ + ξ)A = 0',
                  max(parallel_residual(obata, A, p) for A in hkt.triple.members() for p in points),
                  'torsion', scale, len(points))
        metric_defect = max(parallel_residual(obata, hkt.metric, p) for p in points)
        ctx.measure('|∇^Ob g|', metric_defect)
        if metric_defect > ctx.tolerance('torsion') * scale:
            logger.warning(f"Obata connection does not preserve g (|∇^Ob g| = {metric_defect:.3e})")
    if hkt.chart.dim < 8:
        ctx.skip('(3,0) contamination', 'c + ε Re(θ1∧θ2∧θ3)', 'no (3,0)-forms below real dimension 8')
        return
    with ctx.guarded('(3,0) contamination', 'c + ε Re(θ1∧θ2∧θ3)'):
        contamination = 1e-3 * scale * three_zero_form(hkt.chart.dim)
        I = hkt.triple.I
        ctx.control('(3,0) contamination', 'c + ε Re(θ1∧θ2∧θ3)',
                    max(type_30_residual(hkt.torsion_form.value(p) + contamination, I.value(p)) for p in points),
                    'tight', scale, len(points))


# === HOMOTHETY ===

def run_homothety(ctx: SuiteContext):
    hkt = ctx.state.get('hkt') or ctx.model.hkt
    ctx.state['hkt'] = hkt
    X = ctx.model.X
    points = ctx.model.points
    with ctx.guarded('type', 'L_X g = a g, L_IX J = b K'):
        measured = measure_type(X, hkt, points)
        if measured.degenerate:
            ctx.verdict('type', 'L_X g = a g', False, 'X vanishes on the sample set: type (0, 0)')
            return
        ctx.state['homothety'] = measured
        a, b = measured.type
        ctx.measure('a', a)
        ctx.measure('b', b)
        ctx.measure('alpha', measured.alpha)
        scale = measured.scale * max(1.0, abs(a), abs(b))
        for label, residual in measured.residuals.items():
            tolerance = 'tight' if label.startswith('∇X') else 'base'
            ctx.check(label, label, residual, tolerance, scale, len(points))
    if 'homothety' not in ctx.state:
        return
    with ctx.guarded('exactness', 'd g(X,X) = a X♭'):
        residual_d, residual_c = exactness_and_interior(X, hkt, a, points)
        ctx.check('exactness', 'd g(X,X) = a X♭', residual_d, 'base', scale, len(points))
        ctx.check('X⌟c = 0', 'X⌟c = 0', residual_c, 'base', scale, len(points))
    with ctx.guarded('IX⌟c', 'IX⌟c - J(IX⌟c) = -(a+b) F_I'):
        for label, residual in ixc_identity(X, hkt, a, b, points).items():
            ctx.check(label, 'IX⌟c - J(IX⌟c) = -(a+b) F_I', residual, 'base', scale, len(points))
        torsion_free = max(max_abs(hkt.torsion_form.value(p)) for p in points) <= ctx.tolerance('torsion') * scale
        if torsion_free and abs(a + b) <= ctx.tolerance('fit') * scale:
            ctx.skip('random V in IXc', 'V⌟c - J(V⌟c) = -(a+b) F_I', 'c = 0 and a + b = 0: identity holds for any V')
        else:
            V = random_constant_field(hkt, ctx.numeric.seed)
            ctx.control('random V in IXc', 'V⌟c - J(V⌟c) = -(a+b) F_I', ixc_residual(V, hkt, a, b, points),
                        'base', scale, len(points))
    with ctx.guarded('brackets', '[IX, JX] = b KX'):
        for label, residual in bracket_check(X, hkt, b, points).items():
            tolerance = 'tight' if label.startswith('[X,') else 'base'
            ctx.check(label, label, residual, tolerance, scale, len(points))
    if abs(a) > ctx.tolerance('fit') and abs(a - b) > ctx.tolerance('fit'):
        with ctx.guarded('potential', 'mu = 2/(a(a-b)) g(X,X)'):
            mu = potential_from_homothety(X, hkt, a, b)
            ctx.check('potential', 'F_I = ½(d d_I + d_J d_K) mu', potential_roundtrip_residual(hkt, mu.field, points),
                      'base', scale, len(points))
    subset = points[:8]
    with ctx.guarded('rescaling', 'λX has type (λa, λb)'):
        worst = 0.0
        for factor in (-1.0, 0.5, 3.0):
            rescaled = measure_type(X.scaled(factor), hkt, subset)
            worst = max(worst, abs(rescaled.a - factor * a), abs(rescaled.b - factor * b))
            if measured.alpha is not None and rescaled.alpha is not None:
                worst = max(worst, abs(rescaled.alpha - measured.alpha))
        ctx.check('rescaling', 'λX has type (λa, λb), α unchanged', worst, 'fit', 1.0, len(subset))
    with ctx.guarded('non-homothetic X', 'X + εY'):
        perturbed = X + non_homothetic_field(hkt).scaled(0.1)
        _, worst = measure_type(perturbed, hkt, subset).worst()
        ctx.control('non-homothetic X', 'X + ε x0 x is not a special homothety', worst, 'base', scale, len(subset))


# === PARAMETER CHANGE ===

def parse_transforms(text: str) -> List[TransformSpec]:
    specs = []
    for item in text.split():
        if item == 'log':
            specs.append(TransformSpec.log())
        elif item.startswith('power:'):
            specs.append(TransformSpec.power(float(item.split(':', 1)[1])))
        else:
            raise ScenarioError(f"unknown transform {item!r} (use power:<k> or log)")
    return specs


def _predicted_signature(hkt: HKTStructure, X: TensorField, spec: TransformSpec, a: float, b: float,
                         mu_value: float, point) -> tuple:
    g = hkt.metric.value(point)
    positive, negative = signature(g, config.SINGULAR_FLOOR)
    norm = float(X.value(point) @ g @ X.value(point))
    along, across = spec.signature_factors(a, b, mu_value)
    vertical = (4, 0) if norm > 0 else (0, 4)
    rest = (positive - vertical[0], negative - vertical[1])
    vertical = vertical if along > 0 else vertical[::-1]
    rest = rest if across > 0 else rest[::-1]
    return vertical[0] + rest[0], vertical[1] + rest[1]


def _rejected(hkt: HKTStructure, X: TensorField, spec: TransformSpec, points: np.ndarray, homothety) -> bool:
    try:
        parameter_change(hkt, X, spec, points, homothety)
    except GeometryError as error:
        logger.info(f"{spec} rejected: {error}")
        return True
    return False


def run_parameter_change(ctx: SuiteContext):
    hkt = ctx.require('hkt')
    homothety = ctx.require('homothety')
    X = ctx.model.X
    points = ctx.model.points
    a, b = homothety.type
    option = ctx.scenario.option('transforms')
    specs = parse_transforms(option.value if option else DEFAULT_TRANSFORMS)
    mu = potential_from_homothety(X, hkt, a, b).field
    p0 = points[0]
    original = signature(hkt.metric.value(p0), config.SINGULAR_FLOOR)
    ctx.measure('signature', original)
    for spec in specs:
        if spec.kind == 'power' and abs(spec.k * a - b) <= ctx.tolerance('fit') * max(abs(a), abs(b), 1.0):
            ctx.verdict(f"{spec} rejected", 'ka - b ≠ 0', _rejected(hkt, X, spec, points[:4], homothety),
                        f"k = b/a = {spec.k:g} must be rejected")
            continue
        with ctx.guarded(f"{spec}", f"g_f, f = {spec}"):
            transformed, measured = parameter_change(hkt, X, spec, points, homothety)
            predicted = spec.predicted_type(a, b)
            ctx.measure(f"type after {spec}", [measured.a, measured.b])
            ctx.check(f"{spec} type", f"g_f has type {predicted}",
                      max(abs(measured.a - predicted[0]), abs(measured.b - predicted[1])), 'fit', 1.0, len(points))
            observed = signature(transformed.metric.value(p0), config.SINGULAR_FLOOR)
            expected = _predicted_signature(hkt, X, spec, a, b, float(mu.value(p0)), p0)
            ctx.measure(f"signature after {spec}", observed)
            ctx.verdict(f"{spec} signature", 'signature flips iff (ka-b)(a-b) < 0', observed == expected,
                        f"observed {observed}, expected {expected}", 1)
    if abs(a) > ctx.tolerance('fit') and abs(b) > ctx.tolerance('fit'):
        rejected = _rejected(hkt, X, TransformSpec.power(b / a), points[:4], homothety)
        ctx.verdict('degenerate k = b/a', 'ka - b ≠ 0', rejected, 'k = b/a must be rejected')
    grid = ctx.scenario.option('grid')
    if grid is None:
        return
    alpha = homothety.alpha
    if alpha is None or alpha >= 0 or abs(alpha + 1) < 1e-12 or not is_definite(hkt.metric, points):
        ctx.skip('grid', 'definite metric for every α\' < 0', 'needs a definite start with α < 0, α ≠ -1')
        return
    with ctx.guarded('grid', 'definite metric for every α\' < 0'):
        for row in alpha_grid(hkt, X, points, grid.numbers(), homothety):
            target = row['alpha_target']
            measured = row['alpha_measured']
            residual = float('inf') if measured is None else abs(measured - target)
            ctx.check(f"grid α'={target:g}", f"α' = {target:g} via {row['transform']}", residual, 'fit', 1.0,
                      len(points))
            ctx.verdict(f"grid α'={target:g} definite", 'g_f definite', row['definite'], points=len(points))


# === QUOTIENT ===

def run_quotient(ctx: SuiteContext):
    hkt = ctx.require('hkt')
    homothety = ctx.require('homothety')
    numeric = ctx.numeric
    builder = QuotientBuilder(hkt, homothety, numeric.level, numeric.beta_normalization)
    count = min(numeric.points, config.QUOTIENT_SAMPLES)
    with ctx.guarded('samples', 'mu^-1(level)/<X, IX, JX, KX>'):
        samples = builder.samples(count, numeric.seed)
        ctx.state['quotient'] = builder
    if 'quotient' not in ctx.state:
        return
    scale = sample_scale([hkt.metric], np.array([s.point for s in samples]))
    for key, (anchor, tolerance) in QUOTIENT_CHECKS.items():
        ctx.check(key, anchor, max(s.residuals[key] for s in samples), tolerance, scale, len(samples))
    ctx.measure('|c_N|', max(max_abs(s.c_n) for s in samples))
    ctx.measure('|tau|', max(max_abs(s.tau[0]) for s in samples))
    anchor = f"Σ ε_i g(ξ_Y e_i, e_i) = {config.TRACE_KAPPA:g} τ(Y)"
    with ctx.guarded('trace identity', anchor):
        kappa, residual = trace_identity(samples)
        ctx.measure('kappa', kappa)
        ctx.check('trace identity', anchor, residual, 'fit', scale, len(samples))
    with ctx.guarded('sigma proportionality', 'σ^q = λ g_N'):
        directions = random_vectors(numeric.directions, samples[0].dim, numeric.seed)
        ratio, spread = sigma_proportionality(samples, directions)
        ctx.measure('lambda', ratio)
        if max_abs(samples[0].c_n) <= ctx.tolerance('torsion') * scale:
            ctx.check('sigma proportionality', 'σ^q = λ g_N', spread, 'fit', 1.0, len(samples))
        else:
            ctx.measure('sigma spread', spread)
    with ctx.guarded('invariance', 'L_AX c = 0'):
        points = np.array([s.point for s in samples])
        ctx.check('invariance', 'L_AX c = 0', invariance_check(hkt, homothety.X, points), 'base', scale, len(points))
        dim = hkt.chart.dim
        bump = np.zeros((dim, dim, dim))
        for perm in permutations(range(3)):
            bump[perm] = np.linalg.det(np.eye(3)[list(perm)])
        spoiled = hkt.torsion_form + constant_field(hkt.chart, 1e-3 * scale * bump, 'lll', 'dx0∧dx1∧dx2',
                                                    'alternating')
        ctx.control('non-invariant c', 'L_AX (c + ε dx0∧dx1∧dx2) ≠ 0',
                    invariance_check(hkt, homothety.X, points, torsion=spoiled), 'base', scale, len(points))
    with ctx.guarded('signatures', 'signature of g_N'):
        bookkeeping = signature_bookkeeping(hkt, samples, homothety.X)
        ctx.measure('signature g_N', bookkeeping['observed'][0])
        ctx.verdict('signatures', 'signature of g_N', bookkeeping['consistent'],
                    f"expected {bookkeeping['expected']}, observed {bookkeeping['observed']}", len(samples))
    with ctx.guarded('slice', 'transversal slice of the level set'):
        quotient_slice = builder.slice(samples[0].point)
        slice_points = quotient_slice.chart.sample(min(numeric.points, config.BUNDLE_POINTS), numeric.seed)
        ctx.state['slice'] = quotient_slice
        ctx.state['slice_points'] = slice_points
        ctx.check('slice level', 'mu(φ(y)) = level',
                  max(abs(float(builder.mu.value(quotient_slice.ambient_point(y))) - numeric.level)
                      for y in slice_points), 'tight', max(1.0, abs(numeric.level)), len(slice_points))
    if 'slice' not in ctx.state:
        return
    with ctx.guarded('instanton', 'β_A ∈ Λ^{1,1}_A'):
        weyl = None
        if samples[0].dim == 4:
            weyl = weyl_minus(quotient_slice.metric, quotient_slice.fundamental_forms, slice_points)
            ctx.check('W_- vanishes', 'W_- = 0 in dimension four', weyl, 'loose', scale, len(slice_points))
        verdicts = [instanton_check(s, ctx.tolerance('base') * scale, weyl, ctx.tolerance('loose') * scale)
                    for s in samples]
        instanton = all(passed for passed, _ in verdicts)
        ctx.measure('instanton', instanton)
        ctx.verdict('instanton', 'β_A ∈ Λ^{1,1}_A', instanton,
                    f"worst residual {max(worst for _, worst in verdicts):.3e}", len(samples))
        dtau = dtau_type_check(quotient_slice, slice_points)
        dtau_type = max(dtau.values()) <= ctx.tolerance('loose') * scale
        ctx.measure('dtau (1,1)', dtau_type)
        ctx.verdict('dtau criterion', 'instanton ⇔ dτ ∈ Λ^{1,1}', dtau_type == instanton,
                    f"β verdict {instanton}, dτ verdict {dtau_type}", len(slice_points))


# === BUNDLE ===

def _base_data(ctx: SuiteContext):
    if ctx.scenario.keyword('base', 'flat') == 'quotient':
        return slice_chart_data(ctx.require('slice')), ctx.require('slice_points')
    data = ctx.model.base
    return data, ctx.model.sample(min(ctx.numeric.points, config.BUNDLE_POINTS))


def run_bundle(ctx: SuiteContext):
    data, base_points = _base_data(ctx)
    seed = ctx.numeric.seed
    base_scale = sample_scale([data.metric], base_points)
    with ctx.guarded('omega', '∇I = 2(ω_j K - ω_k J)'):
        omega = data.omega
        ctx.check('omega', '∇I = 2(ω_j K - ω_k J) and cyclic', max(omega.extraction_residual(y) for y in base_points),
                  'base', base_scale, len(base_points))
        rotation = random_rotation(seed)
        rotated = rotated_chart_data(data, rotation).omega
        ctx.check('omega equivariance', "ω' = R ω for R ∈ SO(3)",
                  max(max_abs(rotated.value(y)[1:] - rotation @ omega.value(y)[1:]) for y in base_points),
                  'base', base_scale, len(base_points))
    with ctx.guarded('base instanton', 'β_A ∈ Λ^{1,1}_A on the base'):
        ctx.measure('base instanton residual', instanton_residual(data, base_points))
    count = min(ctx.numeric.points, config.BUNDLE_POINTS)
    points = BundleChart(data).sample(count, seed)
    with ctx.guarded('U(N)', 'HKT structure on U(N)'):
        result = hkt_on_UN(data, points, base_points)
        ctx.state['bundle'] = result
    if 'bundle' not in ctx.state:
        return
    ctx.measure('sigma signature', result.sigma_signature)
    ctx.measure('U(N) signature', result.signature)
    with ctx.guarded('verifier', 'HKT axioms on U(N)'):
        _, scale = record_hkt_residuals(ctx, result.hkt, points, 'U(N) ')
    scale = sample_scale([result.hkt.metric], points)
    homothety = result.homothety
    ctx.measure('U(N) a', homothety.a)
    ctx.measure('U(N) b', homothety.b)
    ctx.check('type (2,-2)', 'x∂_x has type (2, -2)', max(abs(homothety.a - 2.0), abs(homothety.b + 2.0)), 'fit',
              1.0, len(points))
    for label, residual in homothety.residuals.items():
        ctx.check(f"U(N) {label}", label, residual, 'base', scale * 2.0, len(points))
    with ctx.guarded('identities', 'dIdmu'):
        for label, residual in bundle_identity_residuals(result.bundle, points).items():
            ctx.check(label, label, residual, 'base', scale, len(points))
        ctx.check('horizontal part', 'g|_H = |x|² σ^q', horizontal_scaling_residual(result.bundle, points), 'base',
                  1.0, len(points))
    alpha = homothety.alpha
    if alpha is not None:
        expected = expected_bundle_signature(result.sigma_signature, alpha)
        ctx.verdict('signature', 'α < 0: (4p+4, 4q)', result.signature == expected,
                    f"observed {result.signature}, expected {expected}", 1)
    if ctx.scenario.option('flat') is not None and ctx.scenario.option('flat').value == 'true':
        with ctx.guarded('flat', 'R(g_U) = 0'):
            curvature = riemann_curvature(levi_civita(result.hkt.metric))
            ctx.check('flat', 'R(g_U) = 0', max(max_abs(curvature.value(p)) for p in points), 'loose', scale,
                      len(points))
    if data.connection.torsion_free:
        with ctx.guarded('sigma sum formula', 'σ^q ∝ Σ ε_i R(X, IY, e_i, Ie_i) + R(JX, KY, e_i, Ie_i)'):
            sums = [sigma_sum_formula(data, y) for y in base_points]
            sigmas = [data.curvature_metric.value(y) for y in base_points]
            ratio = least_squares_ratio(sums, sigmas)
            ctx.measure('sigma sum ratio', ratio)
            spread = max(max_abs(s - ratio * t) for s, t in zip(sums, sigmas)) / max(max_abs(s) for s in sums)
            ctx.check('sigma sum formula', 'σ^q ∝ Σ ε_i R(X, IY, e_i, Ie_i) + R(JX, KY, e_i, Ie_i)', spread, 'fit', 1.0,
                      len(base_points))
    k = ctx.scenario.option('k')
    if k is not None:
        with ctx.guarded('parameter change', 'g_f on U(N)'):
            spec = TransformSpec.power(k.numbers()[0])
            transformed, measured = bundle_parameter_change(result, spec, points)
            ctx.measure(f"U(N) alpha after {spec}", measured.alpha)
            observed = signature(transformed.metric.value(points[0]), config.SINGULAR_FLOOR)
            ctx.measure(f"U(N) signature after {spec}", observed)
            if measured.alpha is not None and measured.alpha > 0:
                expected = expected_bundle_signature(result.sigma_signature, measured.alpha)
                ctx.verdict('signature α > 0', 'α > 0: (4q+4, 4p)', observed == expected,
                            f"observed {observed}, expected {expected}", 1)
            ctx.verdict('definite', 'g_f definite', is_definite(transformed.metric, points), points=len(points))


def run_roundtrip(ctx: SuiteContext):
    quotient_slice = ctx.require('slice')
    slice_points = ctx.require('slice_points')
    with ctx.guarded('roundtrip', 'U(N)/H* = N'):
        result = roundtrip(quotient_slice, slice_points)
        ctx.measure('roundtrip lambda', result['lambda'])
        ctx.check('metric', "g_N' = λ g_N", result['metric'], 'fit', 1.0, len(slice_points))
        ctx.check('torsion', "c_N' = λ c_N", result['torsion'], 'fit', 1.0, len(slice_points))


# === CONFORMAL CHANGE ===

def run_conformal(ctx: SuiteContext):
    data = ctx.model.base
    points = ctx.model.sample(min(ctx.numeric.points, config.BUNDLE_POINTS))
    with ctx.guarded('conformal', "g' = e^u g"):
        change = ConformalChange(data, ctx.model.u)
        scale = sample_scale([data.metric, change.metric], points)
        anchors = {
            "tau' = tau - (2n+1) du": ('torsion', "τ' = τ - (2n+1) du"),
            "omega' = omega - ½ sum du(A.) e_A": ('base', "ω' = ω + Σ θ(A_a·) e_a, θ = -½ du"),
            'sp(1) extraction': ('base', "∇'A ∈ sp(1)"),
            "sigma' two paths": ('fit', "σ' = σ + ½(1+I+J+K)∇^q du - ½(d^H u)²"),
            "beta' formula": ('fit', "β'_I = β_I + ∇du(I·,·) - ∇du(I·,·)ᵀ - Jdu∧Kdu"),
            "c' type": ('tight', "c' ∈ Λ^{2,1}+Λ^{1,2}"),
            "d tau' = d tau": ('loose', "dτ' = dτ"),
        }
        for label, residual in change.residuals(points).items():
            tolerance, anchor = anchors[label]
            ctx.check(label, anchor, residual, tolerance, scale, len(points))
        limit = ctx.tolerance('base') * scale
        before = instanton_residual(data, points) <= limit
        after = instanton_residual(change.changed, points) <= limit
        ctx.measure('instanton before', before)
        ctx.measure('instanton after', after)
        ctx.verdict('instanton invariance', 'instanton type is conformally invariant', before == after,
                    f"before {before}, after {after}", len(points))


# === LOCAL POSITIVE QKT ===

def run_local_positive(ctx: SuiteContext):
    base = ctx.model.base
    points = ctx.model.sample(min(ctx.numeric.points, config.BUNDLE_POINTS))
    center = ctx.model.center()
    with ctx.guarded('positive', 'σ^q > 0 near the center'):
        result = local_positive_qkt(base, volume_density(base.metric), center, points)
        ctx.measure('u', result.u.name)
        ctx.measure('attempts', result.attempts)
        ctx.verdict('positive', 'σ^q > 0 near the center', True, f"{result.u.name} after {result.attempts} attempt(s)",
                    len(points))
        ctx.check('volume', '∇ e^{-2(n+1)u} vol_0 = 0', result.volume_residual, 'base',
                  sample_scale([base.metric], points), len(points))
        ctx.state['local'] = result
    if 'local' not in ctx.state:
        return
    with ctx.guarded('U(N)', 'definite HKT structure on U(N)'):
        bundle_points = BundleChart(result.data).sample(min(ctx.numeric.points, config.BUNDLE_POINTS),
                                                        ctx.numeric.seed)
        bundle = hkt_on_UN(result.data, bundle_points, points)
        residuals = verify_hkt(bundle.hkt, bundle_points)
        scale = sample_scale([bundle.hkt.metric], bundle_points)
        for key in ('quaternion_identities', 'torsion_agreement', 'nabla_I', 'nabla_J', 'nabla_K'):
            anchor, tolerance = HKT_CHECKS[key]
            ctx.check(f"U(N) {key}", anchor, residuals[key], tolerance, scale, len(bundle_points))
        ctx.measure('U(N) signature', bundle.signature)
        ctx.verdict('U(N) definite', 'g on U(N) definite', is_definite(bundle.hkt.metric, bundle_points),
                    points=len(bundle_points))


# === a = 0 ===

def run_local_potential(ctx: SuiteContext):
    hkt = ctx.require('hkt')
    homothety = ctx.require('homothety')
    X = ctx.model.X
    points = ctx.model.points[:8]
    structure, measured = hkt, homothety
    if abs(homothety.a) > ctx.tolerance('fit'):
        with ctx.guarded('log transform', 'g_log has a = 0'):
            structure, measured = parameter_change(hkt, X, TransformSpec.log(), points, homothety)
            ctx.check('log transform', 'g_log has a = 0', abs(measured.a), 'fit', 1.0, len(points))
    if abs(measured.a) > ctx.tolerance('fit'):
        return
    with ctx.guarded('potential', 'dmu = mu X♭'):
        mu = local_potential(X, structure, ctx.model.center(), points)
        norms = [float(metric_norm(structure.metric, X).value(p)) for p in points]
        norm = float(np.mean(norms))
        ctx.measure('g(X,X)', norm)
        ctx.check('constant g(X,X)', 'g(X,X) constant when a = 0', max(abs(n - norm) for n in norms), 'fit',
                  max(1.0, abs(norm)), len(points))
        recovered = hkt_from_potential(mu, structure.triple, points, name='g_mu')
        typed = measure_type(X, recovered, points)
        ctx.measure('type of g_mu', [typed.a, typed.b])
        ctx.check('type (g(X,X), b)', 'X has type (g(X,X), b) for the potential mu',
                  max(abs(typed.a - norm) / max(abs(norm), 1.0), abs(typed.b - measured.b)), 'fit', 1.0, len(points))


# === ORCHESTRATION ===

SUITE_FUNCTIONS: Dict[str, Callable[[SuiteContext], None]] = OrderedDict([
    ('hkt-verify', run_hkt_verify),
    ('homothety', run_homothety),
    ('parameter-change', run_parameter_change),
    ('quotient', run_quotient),
    ('bundle', run_bundle),
    ('roundtrip', run_roundtrip),
    ('conformal', run_conformal),
    ('local-positive', run_local_positive),
    ('local-potential', run_local_potential),
])


def execution_order(suites: List[str], scenario: Optional[Scenario] = None) -> List[str]:
    """Declared order with every dependency moved ahead of its dependents."""
    order: List[str] = []

    def visit(suite: str):
        if suite in order:
            return
        for dependency in REQUIRES.get(suite, ()):
            if dependency in suites:
                visit(dependency)
        if suite == 'bundle' and scenario is not None and scenario.keyword('base', '') == 'quotient':
            visit('quotient')
        order.append(suite)

    for suite in suites:
        visit(suite)
    return order


def run_suites(scenario: Scenario, numeric: Optional[NumericConfig] = None) -> Report:
    numeric = numeric or scenario.numeric
    ctx = SuiteContext(scenario, numeric)
    for suite in execution_order(scenario.suites, scenario):
        ctx.suite = suite
        logger.info(f"running suite {suite} on {scenario.name}")
        try:
            SUITE_FUNCTIONS[suite](ctx)
        except (GeometryError, ScenarioError) as error:
            logger.error(f"suite {suite} aborted: {error}")
            ctx.verdict('aborted', suite, False, str(error))
        except Exception as error:
            logger.exception(f"suite {suite} failed unexpectedly")
            ctx.verdict('aborted', suite, False, f"{type(error).__name__}: {error}")
    environment = Environment(jet_order=numeric.order, seed=numeric.seed, points=numeric.points,
                              tolerance_scale=numeric.tolerance_scale, version=__version__)
    report = Report(scenario=scenario.name, environment=environment, checks=ctx.records, measured=ctx.measured,
                    generated_at=datetime.now(timezone.utc))
    logger.info(f"{scenario.name}: {len(report.checks)} checks, {len(report.failures)} failed")
    return report


# === RENDERING ===

def _format_number(value: Optional[float]) -> str:
    return '-' if value is None else f"{value:.6e}"


def _format_measured(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    if isinstance(value, list):
        return '(' + ', '.join(_format_measured(v) for v in value) + ')'
    return str(value)


def render_text(report: Report) -> str:
    env = report.environment
    lines = [f"scenario: {report.scenario}",
             f"environment: jet_order={env.jet_order} seed={env.seed} points={env.points} "
             f"tolerance_scale={env.tolerance_scale:g} version={env.version}"]
    for check in report.checks:
        status = 'SKIP' if check.skipped else ('PASS' if check.passed else 'FAIL')
        line = (f"check {check.check_id} | {check.anchor} | residual={_format_number(check.residual)} | "
                f"tolerance={_format_number(check.tolerance)} | {status} | points={check.points}")
        if check.message:
            line += f" | {check.message}"
        lines.append(line)
    for name, value in report.measured.items():
        lines.append(f"measured {name} = {_format_measured(value)}")
    lines.append(f"summary: {len(report.checks)} checks, {len(report.failures)} failed")
    return '\n'.join(lines) + '\n'


def render_structured(report: Report) -> str:
    return report.model_dump_json(indent=2, exclude={'generated_at'}) + '\n'


def render(report: Report, fmt: str = config.REPORT_FORMAT) -> str:
    if fmt == 'structured':
        return render_structured(report)
    return render_text(report)
