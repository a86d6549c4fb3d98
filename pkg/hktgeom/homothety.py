"""
Special homotheties, HKT potentials and the g_f parameter-change engine.

A special homothety of type (a, b) satisfies L_X g = a g, L_{AX} g = 0,
L_{AX} A = 0 and L_{IX} J = b K (cyclically). Its D(2,1;alpha) parameter is
alpha = -1 + a/b.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .exceptions import (DefinitenessError, DegenerateTransformError, NotPotentialError, NotSpecialHomothetyError,
                         PreconditionError, SingularMetricError)
from .jetcalc import (TensorField, apply_endomorphism, constant_field, exterior_derivative, function_field, interior,
                      lie_bracket, lie_derivative, lower_index, metric_norm, sample_scale)
from .jets import Jet, antiderivative, contract, get_space
from .quatgeom import HKTStructure, QuaternionTriple, act_on_form, d_A
from .utils import least_squares_ratio, max_abs, random_vectors, signature

logger = logging.getLogger(__name__)


# === TYPES ===

@dataclass(frozen=True)
class TransformSpec:
    """f(mu) = |mu|^k (kind 'power') or log|mu| (kind 'log')."""

    kind: str
    k: float = 1.0

    def __post_init__(self):
        if self.kind not in ('power', 'log'):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == 'power' and self.k == 0:
            raise DegenerateTransformError("power transform needs k != 0")

    @classmethod
    def power(cls, k: float) -> 'TransformSpec':
        return cls('power', float(k))

    @classmethod
    def log(cls) -> 'TransformSpec':
        return cls('log')

    def __str__(self):
        return 'log|mu|' if self.kind == 'log' else f"|mu|^{self.k:g}"

    def validate(self, a: float, b: float, tolerance: float = 1e-12):
        if self.kind == 'power' and abs(self.k * a - b) <= tolerance * max(abs(a), abs(b), 1.0):
            raise DegenerateTransformError(f"k = b/a = {self.k:g}: (ka-b) needs to be non-zero")

    def derivatives(self, mu: Jet) -> Tuple[Jet, Jet, Jet]:
        """(f(mu), f'(mu), f''(mu)) as jets."""
        sign = float(np.sign(mu.value))
        magnitude = mu.abs()
        if self.kind == 'log':
            inverse = mu.reciprocal()
            return magnitude.log(), inverse, -(inverse * inverse)
        k = self.k
        f = magnitude.power(k)
        f1 = magnitude.power(k - 1) * (k * sign)
        f2 = magnitude.power(k - 2) * (k * (k - 1))
        return f, f1, f2

    def predicted_type(self, a: float, b: float) -> Tuple[float, float]:
        return (0.0, b) if self.kind == 'log' else (self.k * a, b)

    def signature_factors(self, a: float, b: float, mu_value: float) -> Tuple[float, float]:
        """(g_f(X,X)/g(X,X), g_f(Y,Y)/g(Y,Y)) for Y orthogonal to the H-span of X."""
        if self.kind == 'log':
            return b / ((b - a) * mu_value), 1.0 / mu_value
        k = self.k
        base = k * np.sign(mu_value) * abs(mu_value) ** (k - 1)
        return base * (k * a - b) / (a - b), base


@dataclass
class PotentialField:
    field: TensorField
    provenance: str = 'user-supplied'


@dataclass
class SpecialHomothety:
    X: TensorField
    a: float
    b: float
    residuals: Dict[str, float] = field(default_factory=OrderedDict)
    scale: float = 1.0
    degenerate: bool = False

    @property
    def alpha(self) -> Optional[float]:
        """alpha = -1 + a/b; None stands for infinite (b = 0)."""
        if self.degenerate or abs(self.b) < 1e-12:
            return None
        return -1.0 + self.a / self.b

    @property
    def type(self) -> Tuple[float, float]:
        return self.a, self.b

    def worst(self) -> Tuple[str, float]:
        if not self.residuals:
            return '', 0.0
        name = max(self.residuals, key=self.residuals.get)
        return name, self.residuals[name]


# === HOMOTHETY DETECTION ===

def _rotated_fields(X: TensorField, triple: QuaternionTriple) -> List[TensorField]:
    return [apply_endomorphism(A, X, f"{A.name}X") for A in triple.members()]


def measure_type(X: TensorField, hkt: HKTStructure, points: np.ndarray) -> SpecialHomothety:
    """Least-squares (a, b) and the residual of every defining equation, without acceptance."""
    I, J, K = hkt.triple.members()
    g = hkt.metric
    scale = sample_scale([g], points)
    if max(max_abs(X.value(p)) for p in points) < config.SINGULAR_FLOOR:
        logger.info("X vanishes on the sample set; type (0, 0) flagged degenerate")
        return SpecialHomothety(X, 0.0, 0.0, OrderedDict(), scale, degenerate=True)
    IX, JX, KX = _rotated_fields(X, hkt.triple)
    lx_g = lie_derivative(X, g)
    cyclic = [(lie_derivative(IX, J), K), (lie_derivative(JX, K), I), (lie_derivative(KX, I), J)]

    lx_values = [lx_g.value(p) for p in points]
    g_values = [g.value(p) for p in points]
    a = least_squares_ratio(lx_values, g_values)
    b = least_squares_ratio([lie.value(p) for lie, _ in cyclic for p in points],
                            [target.value(p) for _, target in cyclic for p in points])

    residuals = OrderedDict()
    residuals['L_X g = a g'] = max(max_abs(s - a * r) for s, r in zip(lx_values, g_values))
    for AX, A in zip((IX, JX, KX), (I, J, K)):
        residuals[f"L_{AX.name} g = 0"] = max(max_abs(lie_derivative(AX, g).value(p)) for p in points)
        residuals[f"L_{AX.name} {A.name} = 0"] = max(max_abs(lie_derivative(AX, A).value(p)) for p in points)
    for (lie, target), label in zip(cyclic, ('L_IX J = b K', 'L_JX K = b I', 'L_KX I = b J')):
        residuals[label] = max(max_abs(lie.value(p) - b * target.value(p)) for p in points)
    residuals['∇X = ½a Id'] = check_nabla_X(X, hkt, a, points)
    measured = SpecialHomothety(X, a, b, residuals, scale)
    logger.info(f"measured type (a, b) = ({a:.6g}, {b:.6g}) for {X.name}")
    return measured


def detect_type(X: TensorField, hkt: HKTStructure, points: np.ndarray,
                tolerance: float = config.FIT_ACCEPTANCE) -> SpecialHomothety:
    measured = measure_type(X, hkt, points)
    equation, residual = measured.worst()
    if residual > tolerance * measured.scale * max(1.0, abs(measured.a), abs(measured.b)):
        raise NotSpecialHomothetyError(f"{X.name} is not a special homothety; worst equation {equation}",
                                       equation=equation, residual=residual)
    return measured


def check_nabla_X(X: TensorField, hkt: HKTStructure, a: float, points: np.ndarray) -> float:
    """max |nabla_Y X - ½ a Y| with nabla the torsion connection."""
    nabla_x = hkt.connection.covariant_derivative(X)  # [y, k] = nabla_y X^k
    target = 0.5 * a * np.eye(hkt.chart.dim)
    return max(max_abs(nabla_x.value(p) - target) for p in points)


def exactness_and_interior(X: TensorField, hkt: HKTStructure, a: float,
                           points: np.ndarray) -> Tuple[float, float]:
    """(|d g(X,X) - a X♭|, |X⌟c|)."""
    flat = lower_index(hkt.metric, X)
    differential = exterior_derivative(metric_norm(hkt.metric, X))
    contraction = interior(X, hkt.torsion_form)
    residual_d = max(max_abs(differential.value(p) - a * flat.value(p)) for p in points)
    residual_c = max(max_abs(contraction.value(p)) for p in points)
    return residual_d, residual_c


def ixc_residual(vector: TensorField, hkt: HKTStructure, a: float, b: float, points: np.ndarray,
                 cycle: int = 0) -> float:
    """V⌟c - B(V⌟c) + (a+b) F_A for (A, B) = (I, J), (J, K) or (K, I)."""
    members = hkt.triple.members()
    A, B = members[cycle], members[(cycle + 1) % 3]
    contracted = interior(vector, hkt.torsion_form)
    rotated = act_on_form(B, contracted)
    form = hkt.fundamental_forms[cycle]
    return max(max_abs(contracted.value(p) - rotated.value(p) + (a + b) * form.value(p)) for p in points)


def ixc_identity(X: TensorField, hkt: HKTStructure, a: float, b: float, points: np.ndarray) -> Dict[str, float]:
    """IX⌟c - J(IX⌟c) = -(a+b) F_I and its cyclic versions."""
    rotated = _rotated_fields(X, hkt.triple)
    return OrderedDict((f"{rotated[n].name}⌟c", ixc_residual(rotated[n], hkt, a, b, points, n)) for n in range(3))


def random_constant_field(hkt: HKTStructure, seed: int = 0) -> TensorField:
    return constant_field(hkt.chart, random_vectors(1, hkt.chart.dim, seed)[0], 'u', 'V')


def non_homothetic_field(hkt: HKTStructure) -> TensorField:
    """x0 times the dilation field; L_Y g is not proportional to g."""
    return function_field(hkt.chart, 'u', lambda x: x * x[0], 'x0 x')


def bracket_check(X: TensorField, hkt: HKTStructure, b: float, points: np.ndarray) -> Dict[str, float]:
    """[X, AX] = 0 and [IX, JX] = b KX cyclically."""
    IX, JX, KX = _rotated_fields(X, hkt.triple)
    residuals = OrderedDict()
    for AX in (IX, JX, KX):
        bracket = lie_bracket(X, AX)
        residuals[f"[X,{AX.name}] = 0"] = max(max_abs(bracket.value(p)) for p in points)
    for left, right, target in ((IX, JX, KX), (JX, KX, IX), (KX, IX, JX)):
        bracket = lie_bracket(left, right)
        residuals[f"[{left.name},{right.name}] = b {target.name}"] = max(
            max_abs(bracket.value(p) - b * target.value(p)) for p in points)
    return residuals


# === POTENTIALS ===

def potential_from_homothety(X: TensorField, hkt: HKTStructure, a: float, b: float) -> PotentialField:
    """mu = 2/(a(a-b)) g(X,X)."""
    if abs(a) < 1e-12 or abs(a - b) < 1e-12:
        raise PreconditionError(f"potential needs a special homothety with a != 0, b (got a={a:g}, b={b:g})")
    mu = metric_norm(hkt.metric, X).scaled(2.0 / (a * (a - b)))
    mu.name = 'mu'
    return PotentialField(mu, 'from-homothety')


def potential_forms(mu: TensorField, triple: QuaternionTriple) -> Tuple[TensorField, TensorField, TensorField]:
    """F_A = ½(d d_A + d_B d_C) mu for the cyclic triples (A, B, C)."""
    I, J, K = triple.members()
    forms = []
    for A, B, C in ((I, J, K), (J, K, I), (K, I, J)):
        total = exterior_derivative(d_A(mu, A)) + d_A(d_A(mu, C), B)
        form = total.scaled(0.5)
        form.name = f"F_{A.name}"
        forms.append(form)
    return tuple(forms)


def metric_from_form(form: TensorField, endo: TensorField) -> TensorField:
    """g = -F_A(A., .)."""
    return TensorField(form.chart, 'll', lambda p, n: contract('ay,ax->xy', form.jet(p, n), endo.jet(p, n)) * -1.0,
                       None, f"g({form.name})")


def hkt_from_potential(mu, triple: QuaternionTriple, points: Optional[np.ndarray] = None,
                       tolerance: float = config.TOLERANCES['torsion'], name: str = 'potential') -> HKTStructure:
    potential = mu.field if isinstance(mu, PotentialField) else mu
    forms = potential_forms(potential, triple)
    recovered = [metric_from_form(F, A) for F, A in zip(forms, triple.members())]
    g_i = recovered[0]
    metric = TensorField(potential.chart, 'll',
                         lambda p, n: (g_i.jet(p, n) + g_i.jet(p, n).transpose(1, 0)) * 0.5,
                         'symmetric', f"g[{potential.name}]")
    if points is not None:
        if max(max_abs(g_i.value(p)) for p in points) <= config.SINGULAR_FLOOR:
            raise SingularMetricError(f"potential {potential.name} yields a vanishing metric")
        scale = sample_scale([g_i], points)
        for p in points:
            values = [g.value(p) for g in recovered]
            residual = max(max_abs(values[0] - values[0].T), max_abs(values[0] - values[1]),
                           max_abs(values[0] - values[2]))
            if residual > tolerance * scale:
                raise NotPotentialError(f"{potential.name} is not an HKT potential: recovered metrics disagree",
                                        point=p, residual=residual)
            signature(values[0], config.SINGULAR_FLOOR)
    return HKTStructure(metric, triple, name, potential=potential)


def potential_roundtrip_residual(hkt: HKTStructure, mu: TensorField, points: np.ndarray) -> float:
    forms = potential_forms(mu, hkt.triple)
    return max(max_abs(F.value(p) - G.value(p)) for F, G in zip(forms, hkt.fundamental_forms) for p in points)


# === g_f TRANSFORMS ===

def quaternionic_square(mu: TensorField, triple: QuaternionTriple) -> TensorField:
    """(d^H mu)^2 = dmu^2 + (I dmu)^2 + (J dmu)^2 + (K dmu)^2."""

    def evaluate(point, order):
        dm = mu.jet(point, order + 1).grad()
        total = contract('a,b->ab', dm, dm)
        for A in triple.jets(point, order):
            rotated = contract('ka,k->a', A, dm)
            total = total + contract('a,b->ab', rotated, rotated)
        return total

    return TensorField(mu.chart, 'll', evaluate, 'symmetric', f"(d^H {mu.name})²")


def transformed_potential(mu: TensorField, spec: TransformSpec) -> TensorField:
    return TensorField(mu.chart, '', lambda p, n: spec.derivatives(mu.jet(p, n))[0], None, f"f({mu.name})")


def gf_transform(hkt: HKTStructure, mu, spec: TransformSpec, points: Optional[np.ndarray] = None,
                 a: Optional[float] = None, b: Optional[float] = None) -> HKTStructure:
    """g_f = f'(mu) g + ½ f''(mu) (d^H mu)^2, with potential f(mu)."""
    potential = mu.field if isinstance(mu, PotentialField) else mu
    square = quaternionic_square(potential, hkt.triple)

    def evaluate(point, order):
        _, f1, f2 = spec.derivatives(potential.jet(point, order))
        return hkt.metric.jet(point, order) * f1 + square.jet(point, order) * (f2 * 0.5)

    metric = TensorField(hkt.chart, 'll', evaluate, 'symmetric', f"g_{{{spec}}}")
    if points is not None:
        for p in points:
            values = metric.value(p)
            det_scale = max(max_abs(values), 1e-300)
            if abs(np.linalg.det(values / det_scale)) < config.SINGULAR_FLOOR:
                sign = '' if a is None or b is None or spec.kind == 'log' else \
                    f"; sign of ka-b is {np.sign(spec.k * a - b):+g}"
                raise DegenerateTransformError(f"g_f is degenerate{sign}", point=p)
    return HKTStructure(metric, hkt.triple, f"{hkt.name}->{spec}", potential=transformed_potential(potential, spec))


def parameter_change(hkt: HKTStructure, X: TensorField, spec: TransformSpec, points: np.ndarray,
                     homothety: Optional[SpecialHomothety] = None) -> Tuple[HKTStructure, SpecialHomothety]:
    homothety = homothety or detect_type(X, hkt, points)
    a, b = homothety.type
    if abs(a) < 1e-12 or abs(b) < 1e-12 or abs(a - b) < 1e-12:
        raise PreconditionError(f"parameter change needs a, b != 0 and a != b (got a={a:g}, b={b:g})")
    spec.validate(a, b, config.FIT_ACCEPTANCE)
    mu = potential_from_homothety(X, hkt, a, b)
    transformed = gf_transform(hkt, mu, spec, points, a, b)
    measured = measure_type(X, transformed, points)
    logger.info(f"{spec}: ({a:.4g}, {b:.4g}) -> ({measured.a:.6g}, {measured.b:.6g}), alpha'={measured.alpha}")
    return transformed, measured


def is_definite(metric: TensorField, points: np.ndarray) -> bool:
    signs = set()
    for p in points:
        positive, negative = signature(metric.value(p), config.SINGULAR_FLOOR)
        if positive and negative:
            return False
        signs.add(positive > 0)
    return len(signs) == 1


def exponent_for_alpha(alpha_target: float, a: float, b: float) -> Optional[float]:
    """k with -1 + ka/b = alpha'; None selects the log transform (alpha' = -1)."""
    if abs(alpha_target + 1.0) < 1e-12:
        return None
    return (alpha_target + 1.0) * b / a


def alpha_grid(hkt: HKTStructure, X: TensorField, points: np.ndarray, targets: Sequence[float],
                   homothety: Optional[SpecialHomothety] = None) -> List[Dict]:
    """Reach every requested alpha' < 0 from a definite start, checking definiteness."""
    homothety = homothety or detect_type(X, hkt, points)
    if homothety.alpha is None or homothety.alpha >= 0 or abs(homothety.alpha + 1) < 1e-12:
        raise PreconditionError("grid needs a start with alpha < 0, alpha != -1")
    if not is_definite(hkt.metric, points):
        raise DefinitenessError("grid needs a definite starting metric")
    rows = []
    for target in targets:
        k = exponent_for_alpha(target, homothety.a, homothety.b)
        spec = TransformSpec.log() if k is None else TransformSpec.power(k)
        transformed, measured = parameter_change(hkt, X, spec, points, homothety)
        rows.append({'alpha_target': target, 'transform': str(spec), 'alpha_measured': measured.alpha,
                     'a': measured.a, 'b': measured.b, 'definite': is_definite(transformed.metric, points)})
    return rows


# === a = 0 ===

def _rk4_along_segment(one_form: TensorField, start: np.ndarray, end: np.ndarray, value: float,
                       steps: int) -> float:
    """Integrate dmu = mu * one_form along the segment start -> end."""
    direction = end - start

    def rate(t, m):
        return m * float(one_form.value(start + t * direction) @ direction)

    h = 1.0 / steps
    m = value
    for step in range(steps):
        t = step * h
        k1 = rate(t, m)
        k2 = rate(t + h / 2, m + h * k1 / 2)
        k3 = rate(t + h / 2, m + h * k2 / 2)
        k4 = rate(t + h, m + h * k3)
        m += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return m


def local_potential(X: TensorField, hkt: HKTStructure, base_point, points: np.ndarray, base_value: float = 1.0,
                     tolerance: float = config.BASE_TOLERANCE,
                     steps: int = config.POTENTIAL_RK4_STEPS) -> PotentialField:
    """Local solution of dmu = mu X♭ for a type (0, b) homothety with X⌟c = 0."""
    scale = sample_scale([hkt.metric], points)
    _, residual_c = exactness_and_interior(X, hkt, 0.0, points)
    if residual_c > tolerance * scale:
        raise PreconditionError("potential for a = 0 exists only if X⌟c = 0", residual=residual_c)
    flat = lower_index(hkt.metric, X)
    closed = exterior_derivative(flat)
    for point in points:
        residual = max_abs(closed.value(point))
        if residual > tolerance * scale:
            raise PreconditionError("dmu = mu X♭ is solvable only if X♭ is closed", point=point, residual=residual)
    base_point = np.asarray(base_point, dtype=float)

    def evaluate(point, order):
        value = _rk4_along_segment(flat, base_point, point, base_value, steps)
        if order == 0:
            return Jet.constant(value, get_space(hkt.chart.dim, 0))
        log_mu = antiderivative(flat.jet(point, order - 1), float(np.log(value)))
        return log_mu.exp()

    mu = TensorField(hkt.chart, '', evaluate, None, 'mu_0')
    logger.info(f"local potential from {base_point} over {len(points)} points")
    return PotentialField(mu, 'from-homothety')
