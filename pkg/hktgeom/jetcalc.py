"""
Charts, tensor fields and connections on top of jet arithmetic.

Every geometric object is a TensorField: a pure evaluator from (point, order)
to a Jet of its components. Derived fields request higher-order jets from their
inputs, so the jet order needed at the leaves grows with the number of
derivatives taken. Leaves can cap their order; asking for more raises
OrderExhaustionError.

Index conventions:
    Christoffel Gamma[k, i, j]  with  nabla_{d_i} d_j = Gamma^k_ij d_k
    Riemann R[l, i, j, k]       =  (R(d_i, d_j) d_k)^l
    covariant / partial derivative index comes first
    forms use the determinant convention, d = (k+1) Alt(partial)
"""

import itertools
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from . import config
from .exceptions import OrderExhaustionError, SingularMetricError, ValenceMismatchError
from .jets import Jet, contract, get_space, inverse
from .utils import halton_points, pseudo_orthonormalize

logger = logging.getLogger(__name__)

_INDEX = 'abcdefghijklmnopqrstuvw'


# === CHARTS ===

@dataclass(frozen=True)
class Chart:
    """A coordinate patch with a sampling box and a domain guard."""

    dim: int
    coord_names: Tuple[str, ...]
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    guard: Optional[Callable[[np.ndarray], bool]] = field(default=None, compare=False)
    name: str = 'chart'

    def __post_init__(self):
        if self.dim < 4:
            raise ValueError(f"chart dimension must be at least 4, got {self.dim}")
        if len(self.coord_names) != self.dim or len(set(self.coord_names)) != self.dim:
            raise ValueError("coordinate names must be distinct and match the dimension")
        if len(self.lower) != self.dim or len(self.upper) != self.dim:
            raise ValueError("sampling box does not match the dimension")

    @classmethod
    def euclidean(cls, dim: int, box: Tuple[float, float] = config.DEFAULT_BOX,
                  guard=None, name: str = 'chart', prefix: str = 'x') -> 'Chart':
        return cls(dim, tuple(f"{prefix}{i}" for i in range(dim)), (box[0],) * dim, (box[1],) * dim,
                   guard, name)

    @property
    def quaternionic(self) -> bool:
        return self.dim % 4 == 0

    @property
    def groups(self) -> int:
        return self.dim // 4

    def contains(self, point) -> bool:
        return self.guard is None or bool(self.guard(np.asarray(point, dtype=float)))

    def sample(self, count: int, seed: int = 0) -> np.ndarray:
        return halton_points(self.lower, self.upper, count, seed, self.guard)


# === FIELDS ===

Evaluator = Callable[[np.ndarray, int], Jet]


class TensorField:
    """Components of a tensor field as jets.

    valence is a string of 'u' (contravariant) and 'l' (covariant) slots;
    symmetry is None, 'symmetric' or 'alternating' (over all slots).
    """

    def __init__(self, chart: Chart, valence: str, evaluator: Evaluator,
                 symmetry: Optional[str] = None, name: str = '', max_order: Optional[int] = None):
        if any(v not in 'ul' for v in valence):
            raise ValueError(f"invalid valence {valence!r}")
        self.chart = chart
        self.valence = valence
        self.symmetry = symmetry
        self.name = name or 'field'
        self.max_order = max_order
        self._evaluator = evaluator
        self._cache: OrderedDict = OrderedDict()

    def __repr__(self):
        return f"TensorField({self.name!r}, valence={self.valence!r})"

    @property
    def rank(self) -> int:
        return len(self.valence)

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.chart.dim,) * self.rank

    def jet(self, point, order: int) -> Jet:
        if self.max_order is not None and order > self.max_order:
            raise OrderExhaustionError(
                f"{self.name} supplies jets up to order {self.max_order}, order {order} requested")
        point = np.asarray(point, dtype=float)
        key = point.tobytes()
        cached = self._cache.get(key)
        if cached is not None and cached.order >= order:
            self._cache.move_to_end(key)
            return cached.truncate(order)
        result = self._evaluator(point, order)
        if result.order != order:
            result = result.truncate(order)
        if result.shape != self.shape:
            raise ValenceMismatchError(f"{self.name} evaluator returned shape {result.shape}, expected {self.shape}")
        self._cache[key] = result
        if len(self._cache) > config.FIELD_CACHE_SIZE:
            self._cache.popitem(last=False)
        return result

    def value(self, point) -> np.ndarray:
        return self.jet(point, 0).value

    def symmetry_residual(self, point) -> float:
        if self.symmetry is None or self.rank < 2:
            return 0.0
        v = self.value(point)
        worst = 0.0
        for a in range(self.rank - 1):
            swapped = np.swapaxes(v, a, a + 1)
            target = v if self.symmetry == 'symmetric' else -v
            worst = max(worst, float(np.max(np.abs(swapped - target))))
        return worst

    # -- algebra ------------------------------------------------------------

    def _check_compatible(self, other: 'TensorField'):
        if other.chart != self.chart or other.valence != self.valence:
            raise ValenceMismatchError(f"cannot combine {self} with {other}")

    def __add__(self, other: 'TensorField') -> 'TensorField':
        self._check_compatible(other)
        symmetry = self.symmetry if self.symmetry == other.symmetry else None
        return TensorField(self.chart, self.valence, lambda p, n: self.jet(p, n) + other.jet(p, n),
                           symmetry, f"({self.name}+{other.name})")

    def __sub__(self, other: 'TensorField') -> 'TensorField':
        self._check_compatible(other)
        symmetry = self.symmetry if self.symmetry == other.symmetry else None
        return TensorField(self.chart, self.valence, lambda p, n: self.jet(p, n) - other.jet(p, n),
                           symmetry, f"({self.name}-{other.name})")

    def __neg__(self) -> 'TensorField':
        return self.scaled(-1.0)

    def scaled(self, factor: float) -> 'TensorField':
        return TensorField(self.chart, self.valence, lambda p, n: self.jet(p, n) * factor,
                           self.symmetry, f"{factor:g}*{self.name}")

    def times(self, function: 'TensorField') -> 'TensorField':
        """Product with a scalar field."""
        if function.rank != 0:
            raise ValenceMismatchError("times() expects a scalar field")
        return TensorField(self.chart, self.valence, lambda p, n: self.jet(p, n) * function.jet(p, n),
                           self.symmetry, f"{function.name}*{self.name}")

    def map(self, valence: str, fn: Callable[[Jet], Jet], name: str, symmetry: Optional[str] = None,
            extra_order: int = 0) -> 'TensorField':
        """Pointwise transformation of this field's jets."""
        return TensorField(self.chart, valence, lambda p, n: fn(self.jet(p, n + extra_order)),
                           symmetry, name)


def constant_field(chart: Chart, values, valence: str, name: str = 'constant',
                   symmetry: Optional[str] = None, max_order: Optional[int] = None) -> TensorField:
    values = np.asarray(values, dtype=float)
    return TensorField(chart, valence, lambda p, n: Jet.constant(values, get_space(chart.dim, n)),
                       symmetry, name, max_order)


def function_field(chart: Chart, valence: str, fn: Callable[[Jet], Jet], name: str,
                   symmetry: Optional[str] = None, max_order: Optional[int] = None) -> TensorField:
    """Field given by a jet function of the coordinate jets."""

    def evaluate(point, order):
        result = fn(Jet.variables(point, order))
        if not isinstance(result, Jet):
            result = Jet.constant(result, get_space(chart.dim, order))
        return result

    return TensorField(chart, valence, evaluate, symmetry, name, max_order)


def dilation_field(chart: Chart) -> TensorField:
    return function_field(chart, 'u', lambda x: x, 'dilation')


# === PURE JET HELPERS ===

def alternate(tensor: Jet, count: int) -> Jet:
    """Alt over the first `count` axes (1/count! sum of signed permutations)."""
    if count < 2:
        return tensor
    rest = tuple(range(count, len(tensor.shape)))
    total = None
    for perm in itertools.permutations(range(count)):
        term = tensor.transpose(perm + rest) * _parity(perm)
        total = term if total is None else total + term
    return total * (1.0 / factorial(count))


def _parity(perm) -> float:
    sign = 1.0
    perm = list(perm)
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def wedge_jets(alpha: Jet, p: int, beta: Jet, q: int) -> Jet:
    """Determinant-convention wedge of a p-form and a q-form given as jets or arrays."""
    if p == 0 or q == 0:
        return alpha * beta
    left = _INDEX[:p]
    right = _INDEX[p:p + q]
    product = contract(f'{left},{right}->{left}{right}', alpha, beta)
    return alternate(product, p + q) * (factorial(p + q) / (factorial(p) * factorial(q)))


def wedge_arrays(alpha: np.ndarray, p: int, beta: np.ndarray, q: int) -> np.ndarray:
    if p == 0 or q == 0:
        return alpha * beta
    product = np.multiply.outer(alpha, beta)
    total = np.zeros_like(product)
    for perm in itertools.permutations(range(p + q)):
        total += _parity(perm) * np.transpose(product, perm)
    return total / (factorial(p) * factorial(q))


def _check_singular(values: np.ndarray, point) -> None:
    scale = float(np.max(np.abs(values)))
    if scale == 0.0:
        raise SingularMetricError("metric vanishes", point=point, residual=0.0)
    det = np.linalg.det(values / scale) * scale ** values.shape[0]
    if abs(det) < config.SINGULAR_FLOOR * scale ** values.shape[0]:
        raise SingularMetricError("metric is singular", point=point, residual=abs(det))


def inverse_jet(metric: Jet, point=None) -> Jet:
    _check_singular(metric.value, point)
    return inverse(metric)


# === EXTERIOR CALCULUS ===

def _require_form(omega: TensorField):
    if any(v != 'l' for v in omega.valence):
        raise ValenceMismatchError(f"{omega.name} is not a differential form")
    if omega.rank > 1 and omega.symmetry != 'alternating':
        raise ValenceMismatchError(f"{omega.name} is not declared alternating")


def exterior_derivative(omega: TensorField) -> TensorField:
    _require_form(omega)
    k = omega.rank
    if k >= omega.chart.dim:
        raise ValenceMismatchError("exterior derivative of a top-degree form")

    def evaluate(point, order):
        gradient = omega.jet(point, order + 1).grad()
        return alternate(gradient, k + 1) * float(k + 1)

    return TensorField(omega.chart, 'l' * (k + 1), evaluate, 'alternating', f"d({omega.name})")


def wedge(alpha: TensorField, beta: TensorField) -> TensorField:
    _require_form(alpha)
    _require_form(beta)
    p, q = alpha.rank, beta.rank
    return TensorField(alpha.chart, 'l' * (p + q),
                       lambda pt, n: wedge_jets(alpha.jet(pt, n), p, beta.jet(pt, n), q),
                       'alternating', f"{alpha.name}^{beta.name}")


def interior(vector: TensorField, omega: TensorField) -> TensorField:
    """X ⌟ omega, contracting the first slot."""
    if vector.valence != 'u':
        raise ValenceMismatchError(f"{vector.name} is not a vector field")
    rest = _INDEX[1:omega.rank]
    return TensorField(omega.chart, omega.valence[1:],
                       lambda p, n: contract(f'a,a{rest}->{rest}', vector.jet(p, n), omega.jet(p, n)),
                       omega.symmetry if omega.rank > 2 else None, f"{vector.name}⌟{omega.name}")


def lie_derivative(vector: TensorField, tensor: TensorField) -> TensorField:
    if vector.valence != 'u':
        raise ValenceMismatchError(f"{vector.name} is not a vector field")
    if vector.chart != tensor.chart:
        raise ValenceMismatchError("Lie derivative across different charts")
    rank = tensor.rank
    slots = _INDEX[:rank]

    def evaluate(point, order):
        t = tensor.jet(point, order + 1)
        x = vector.jet(point, order + 1)
        dt = t.grad()
        dx = x.grad()  # dx[c, a] = d_c X^a
        x = x.truncate(order)
        t = t.truncate(order)
        result = contract(f'z,z{slots}->{slots}', x, dt) if rank else contract('z,z->', x, dt)
        for s, kind in enumerate(tensor.valence):
            moved = slots[:s] + 'z' + slots[s + 1:]
            if kind == 'u':
                result = result - contract(f'z{slots[s]},{moved}->{slots}', dx, t)
            else:
                result = result + contract(f'{slots[s]}z,{moved}->{slots}', dx, t)
        return result

    return TensorField(tensor.chart, tensor.valence, evaluate, tensor.symmetry,
                       f"L_{vector.name}({tensor.name})")


def lie_bracket(x: TensorField, y: TensorField) -> TensorField:
    return lie_derivative(x, y)


def apply_endomorphism(endo: TensorField, vector: TensorField, name: str = '') -> TensorField:
    if endo.valence != 'ul' or vector.valence != 'u':
        raise ValenceMismatchError("expected a (1,1)-tensor and a vector field")
    return TensorField(endo.chart, 'u', lambda p, n: contract('ab,b->a', endo.jet(p, n), vector.jet(p, n)),
                       None, name or f"{endo.name}{vector.name}")


def lower_index(metric: TensorField, vector: TensorField) -> TensorField:
    return TensorField(metric.chart, 'l', lambda p, n: contract('ab,b->a', metric.jet(p, n), vector.jet(p, n)),
                       None, f"{vector.name}♭")


# === CONNECTIONS ===

class ConnectionField:
    """A linear connection given by Christoffel symbols Gamma[k, i, j]."""

    def __init__(self, chart: Chart, evaluator: Evaluator, name: str = 'connection',
                 torsion_free: bool = False):
        self.chart = chart
        self.name = name
        self.torsion_free = torsion_free
        self.christoffel = TensorField(chart, 'ull', evaluator, None, f"Γ({name})")

    def __repr__(self):
        return f"ConnectionField({self.name!r})"

    def coefficients(self, point, order: int) -> Jet:
        return self.christoffel.jet(point, order)

    def shifted(self, difference: TensorField, name: str, torsion_free: bool = False) -> 'ConnectionField':
        """nabla + S with S[k, i, j] = (S_{d_i} d_j)^k."""
        if difference.valence != 'ull':
            raise ValenceMismatchError("connection difference must be a (1,2)-tensor")
        return ConnectionField(self.chart, lambda p, n: self.coefficients(p, n) + difference.jet(p, n),
                               name, torsion_free)

    def covariant_derivative(self, tensor: TensorField) -> TensorField:
        """nabla T with the derivative slot first."""
        rank = tensor.rank
        slots = _INDEX[:rank]

        def evaluate(point, order):
            t = tensor.jet(point, order + 1)
            result = t.grad()
            t = t.truncate(order)
            gamma = self.coefficients(point, order)
            for s, kind in enumerate(tensor.valence):
                moved = slots[:s] + 'z' + slots[s + 1:]
                if kind == 'u':
                    result = result + contract(f'{slots[s]}yz,{moved}->y{slots}', gamma, t)
                else:
                    result = result - contract(f'zy{slots[s]},{moved}->y{slots}', gamma, t)
            return result

        return TensorField(tensor.chart, 'l' + tensor.valence, evaluate, None,
                           f"∇({tensor.name})")

    def torsion(self) -> TensorField:
        return TensorField(self.chart, 'ull',
                           lambda p, n: self.coefficients(p, n) - self.coefficients(p, n).swapaxes(1, 2),
                           None, f"T({self.name})")


def levi_civita(metric: TensorField) -> ConnectionField:
    if metric.valence != 'll':
        raise ValenceMismatchError(f"{metric.name} is not a metric")

    def evaluate(point, order):
        g = metric.jet(point, order + 1)
        dg = g.grad()  # dg[a, b, c] = d_a g_bc
        ginv = inverse_jet(g.truncate(order), point)
        lowered = dg.transpose(1, 0, 2) + dg.transpose(1, 2, 0) - dg  # [l, i, j]
        return contract('kl,lij->kij', ginv, lowered) * 0.5

    return ConnectionField(metric.chart, evaluate, f"LC({metric.name})", torsion_free=True)


def metric_connection_with_torsion(metric: TensorField, torsion_form: TensorField,
                                   name: str) -> ConnectionField:
    """nabla^LC + 1/2 g^-1 c, the index raised on the first slot of c."""
    base = levi_civita(metric)

    def evaluate(point, order):
        ginv = inverse_jet(metric.jet(point, order), point)
        return base.coefficients(point, order) + contract('ka,aij->kij', ginv, torsion_form.jet(point, order)) * 0.5

    return ConnectionField(metric.chart, evaluate, name)


def riemann_curvature(connection: ConnectionField) -> TensorField:
    def evaluate(point, order):
        gamma = connection.coefficients(point, order + 1)
        dgamma = gamma.grad()  # dgamma[a, l, j, k] = d_a Gamma^l_jk
        gamma = gamma.truncate(order)
        linear = dgamma.transpose(1, 0, 2, 3) - dgamma.transpose(1, 2, 0, 3)
        quadratic = contract('lim,mjk->lijk', gamma, gamma)
        return linear + quadratic - quadratic.swapaxes(1, 2)

    return TensorField(connection.chart, 'ulll', evaluate, None, f"R({connection.name})")


def ricci(curvature: TensorField) -> TensorField:
    return TensorField(curvature.chart, 'll', lambda p, n: contract('iijk->jk', curvature.jet(p, n)),
                       None, f"Ric({curvature.name})")


def sample_scale(fields: Sequence[TensorField], points: np.ndarray) -> float:
    """Max absolute component over the sample set; tolerances are relative to it."""
    scale = 0.0
    for f in fields:
        for point in points:
            scale = max(scale, float(np.max(np.abs(f.value(point)))))
    return scale if scale > 0 else 1.0


def metric_norm(metric: TensorField, vector: TensorField) -> TensorField:
    """The function g(X, X)."""
    return TensorField(metric.chart, '',
                       lambda p, n: contract('ab,a,b->', metric.jet(p, n), vector.jet(p, n), vector.jet(p, n)),
                       None, f"|{vector.name}|²")


def pseudo_orthonormal_frame(metric: TensorField, point) -> Tuple[np.ndarray, np.ndarray]:
    """Columns e_i with g(e_i, e_j) = eps_i delta_ij, +1 signs first."""
    g = metric.value(point)
    _check_singular(g, point)
    return pseudo_orthonormalize(g)


def sectional_curvature(curvature: np.ndarray, g: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    numerator = np.einsum('lijk,i,j,k,lm,m->', curvature, x, y, y, g, x)
    denominator = (x @ g @ x) * (y @ g @ y) - (x @ g @ y) ** 2
    return float(numerator / denominator)


def weyl_tensor(curvature: np.ndarray, g: np.ndarray) -> np.ndarray:
    """W_abcd for Rm_abcd = g(R(d_a, d_b) d_c, d_d), pointwise values."""
    n = g.shape[0]
    rm = np.einsum('lijk,ld->ijkd', curvature, g)
    ric = np.einsum('iijk->jk', curvature)
    scalar = np.einsum('jk,jk->', np.linalg.inv(g), ric)
    kulkarni = (np.einsum('bc,ad->abcd', ric, g) - np.einsum('ac,bd->abcd', ric, g)
                + np.einsum('ad,bc->abcd', ric, g) - np.einsum('bd,ac->abcd', ric, g))
    metric_part = np.einsum('bc,ad->abcd', g, g) - np.einsum('ac,bd->abcd', g, g)
    return rm - kulkarni / (n - 2) + scalar * metric_part / ((n - 1) * (n - 2))
