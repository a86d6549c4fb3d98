"""
The bundle construction over quaternionic Kähler charts with torsion.

Given QKT data (g_N, I_N, J_N, K_N, nabla^N) on a chart U, the sp(1) part of
nabla^N is read off from its action on the triple:

    nabla I = 2(w_j K - w_k J),  nabla J = 2(w_k I - w_i K),  nabla K = 2(w_i J - w_j I)

U(N) is modelled on H* x U with fiber coordinate x. With w = w_i i + w_j j + w_k k,

    psi = dx - w x,   mu = conj(x) x,   Omega = dw - w ^ w,   beta_a = 2 Omega_a
    d A d mu = -2 (conj(psi) ^ psi)_a + 2 (conj(x) Omega x)_a      (a-th imaginary part)

and F_A = ½(dAdmu - B dAdmu) for the cyclic pairs (A, B). The triple on U(N)
acts on psi by negated right multiplication and horizontally by
sum_b r_b A_b with r = x u x^-1. This is a reconstruction of the horizontal
structures accepted by matching Idmu and passing the HKT verifier.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from . import config
from .exceptions import (DefinitenessError, DomainError, PreconditionError, QuaternionicExtractionError, RoundTripError,
                         SingularMetricError)
from .homothety import SpecialHomothety, TransformSpec, measure_type, parameter_change
from .jetcalc import (Chart, ConnectionField, TensorField, exterior_derivative, function_field, inverse_jet,
                      levi_civita, metric_connection_with_torsion, riemann_curvature, sample_scale, wedge_jets)
from .jets import Jet, compose_at, contract, get_space
from .quatgeom import (HKTStructure, QuaternionTriple, act_on_form, nabla_q, standard_triple,
                       type_11_residual, type_30_residual)
from .quotient import QuotientSlice, horizontal_split, quotient_metric_and_torsion
from .utils import QUATERNION_TABLE, UNITS, least_squares_ratio, max_abs, qconj, right_multiplication, signature

logger = logging.getLogger(__name__)

_CONJUGATE = np.array([1.0, -1.0, -1.0, -1.0])


# === QKT CHART DATA ===

class QKTChartData:
    """(g_N, I_N, J_N, K_N, nabla^N) on a chart of dimension 4n."""

    def __init__(self, chart: Chart, metric: TensorField, triple: QuaternionTriple, connection: ConnectionField,
                 name: str = 'N'):
        self.chart = chart
        self.metric = metric
        self.triple = triple
        self.connection = connection
        self.name = name

    def __repr__(self):
        return f"QKTChartData({self.name!r}, dim={self.chart.dim})"

    @property
    def quaternionic_dim(self) -> int:
        return self.chart.dim // 4

    @cached_property
    def torsion_form(self) -> TensorField:
        """c = 2 g(nabla - nabla^LC), first slot lowered."""
        base = levi_civita(self.metric)

        def evaluate(point, order):
            difference = self.connection.coefficients(point, order) - base.coefficients(point, order)
            return contract('ak,kij->aij', self.metric.jet(point, order), difference) * 2.0

        return TensorField(self.chart, 'lll', evaluate, 'alternating', f"c_{self.name}")

    @cached_property
    def omega(self) -> 'OmegaMinus':
        return extract_omega_minus(self)

    @cached_property
    def tau(self) -> TensorField:
        def evaluate(point, order):
            g_inv = inverse_jet(self.metric.jet(point, order), point)
            I = self.triple.I.jet(point, order)
            return contract('abc,ay,bd,cd->y', self.torsion_form.jet(point, order), I, g_inv, I) * 0.5

        return TensorField(self.chart, 'l', evaluate, None, f"tau_{self.name}")

    @cached_property
    def curvature_metric(self) -> TensorField:
        """sigma^q = ½(beta_I - J beta_I)(., I.) with beta = 2 Omega."""
        omega = self.omega

        def evaluate(point, order):
            beta_i = omega.curvature_jet(point, order)[1] * 2.0
            I, J, _ = self.triple.jets(point, order)
            rotated = contract('ab,au,bv->uv', beta_i, J, J)
            return contract('uc,cv->uv', beta_i - rotated, I) * 0.5

        return TensorField(self.chart, 'll', evaluate, None, f"sigma_{self.name}")

    def beta(self, point) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        curvature = self.omega.curvature_jet(point, 0).value
        return tuple(2.0 * curvature[a] for a in (1, 2, 3))

    def with_connection(self, connection: ConnectionField, name: str) -> 'QKTChartData':
        return QKTChartData(self.chart, self.metric, self.triple, connection, name)


# === sp(1) CONNECTION FORM ===

class OmegaMinus:
    """Im H valued one-form w with rows (0, w_i, w_j, w_k)."""

    def __init__(self, data: QKTChartData):
        self.data = data
        self.chart = data.chart
        self._derivatives = [data.connection.covariant_derivative(A) for A in data.triple.members()]

    def _pairs(self, point, order):
        dI, dJ, dK = (d.jet(point, order) for d in self._derivatives)
        I, J, K = self.data.triple.jets(point, order)
        size = 8.0 * self.data.quaternionic_dim

        def trace(derivative, A):
            return contract('ykx,xk->y', derivative, A) * (1.0 / size)

        w_i = (trace(dJ, K), trace(dK, J) * -1.0)
        w_j = (trace(dK, I), trace(dI, K) * -1.0)
        w_k = (trace(dI, J), trace(dJ, I) * -1.0)
        return (w_i, w_j, w_k), (dI, dJ, dK), (I, J, K)

    def jet(self, point, order: int) -> Jet:
        """Shape (4, dim); row 0 is zero."""
        pairs, _, _ = self._pairs(point, order)
        rows = [(first + second) * 0.5 for first, second in pairs]
        zero = rows[0] * 0.0
        return Jet.stack([zero] + rows)

    def extraction_residual(self, point) -> float:
        """Disagreement between the two trace formulas plus the reconstruction error of nabla A."""
        pairs, derivatives, triple = self._pairs(point, 0)
        w = [((a + b) * 0.5).value for a, b in pairs]
        worst = max(max_abs(a.value - b.value) for a, b in pairs)
        I, J, K = (A.value for A in triple)
        dI, dJ, dK = (d.value for d in derivatives)
        predicted = (2 * (np.einsum('y,kx->ykx', w[1], K) - np.einsum('y,kx->ykx', w[2], J)),
                     2 * (np.einsum('y,kx->ykx', w[2], I) - np.einsum('y,kx->ykx', w[0], K)),
                     2 * (np.einsum('y,kx->ykx', w[0], J) - np.einsum('y,kx->ykx', w[1], I)))
        return max(worst, *(max_abs(d - p) for d, p in zip((dI, dJ, dK), predicted)))

    def curvature_jet(self, point, order: int) -> Jet:
        """Omega = dw - w ^ w, shape (4, dim, dim)."""
        w = self.jet(point, order + 1)
        gradient = w.grad().transpose(1, 0, 2)  # [c, a, b] = d_a w_c(b)
        w = w.truncate(order)
        product = contract('cab,ad,be->cde', QUATERNION_TABLE, w, w)
        return (gradient - gradient.swapaxes(1, 2)) - (product - product.swapaxes(1, 2))

    def value(self, point) -> np.ndarray:
        return self.jet(point, 0).value


def extract_omega_minus(data: QKTChartData, points: Optional[np.ndarray] = None,
                        tolerance: float = config.TOLERANCES['torsion'], scale: float = 1.0) -> OmegaMinus:
    omega = OmegaMinus(data)
    if points is not None:
        for p in points:
            residual = omega.extraction_residual(p)
            if residual > tolerance * scale:
                raise QuaternionicExtractionError("connection does not act on the triple through sp(1)",
                                                  point=p, residual=residual)
    return omega


def rotated_chart_data(data: QKTChartData, rotation: np.ndarray) -> QKTChartData:
    return QKTChartData(data.chart, data.metric, data.triple.rotated(rotation), data.connection,
                        f"{data.name}'")


def instanton_residual(data: QKTChartData, points: np.ndarray) -> float:
    """Type (1,1)_A residual of beta_A over the triple."""
    worst = 0.0
    for p in points:
        for beta, A in zip(data.beta(p), data.triple.values(p)):
            worst = max(worst, type_11_residual(beta, A))
    return worst


def sigma_sum_formula(data: QKTChartData, point) -> np.ndarray:
    """(1/4n) sum_i eps_i Rm(X, IY, e_i, I e_i) + Rm(JX, KY, e_i, I e_i)."""
    curvature = riemann_curvature(data.connection).value(point)
    g = data.metric.value(point)
    rm = np.einsum('lijk,ld->ijkd', curvature, g)
    I, J, K = data.triple.values(point)
    g_inv = np.linalg.inv(g)
    contracted = np.einsum('abcd,ce,de->ab', rm, g_inv, I)  # sum_i eps_i Rm(a, b, e_i, I e_i)
    first = contracted @ I
    second = J.T @ contracted @ K
    return (first + second) / (4.0 * data.quaternionic_dim)


# === U(N) ===

def fiber_names(taken: Tuple[str, ...]) -> Tuple[str, ...]:
    """Names h0..h3 for the fiber coordinate, primed until none is taken by the base."""
    prefix = 'h'
    while any(f"{prefix}{i}" in taken for i in range(4)):
        prefix += "'"
    return tuple(f"{prefix}{i}" for i in range(4))


def _qproduct(subscripts: str, *operands):
    return contract(subscripts, QUATERNION_TABLE, *operands)


class BundleChart:
    """H* x U with fiber coordinate x (first four coordinates) over QKT chart data."""

    def __init__(self, data: QKTChartData, annulus: Tuple[float, float] = config.FIBER_ANNULUS,
                 omega: Optional[OmegaMinus] = None):
        self.data = data
        self.omega = omega or data.omega
        base = data.chart
        low, high = annulus
        self.annulus = annulus

        def guard(point):
            radius = float(np.linalg.norm(point[:4]))
            return low <= radius <= high and base.contains(point[4:])

        self.chart = Chart(base.dim + 4, fiber_names(base.coord_names) + base.coord_names,
                           (-high,) * 4 + tuple(base.lower), (high,) * 4 + tuple(base.upper), guard,
                           f"U({data.name})")
        self._cache: "OrderedDict[tuple, Dict[str, Jet]]" = OrderedDict()

    @property
    def dim(self) -> int:
        return self.chart.dim

    @staticmethod
    def _lift(base_jet: Jet, y: Jet) -> Jet:
        return compose_at(base_jet, y)

    def _pad_forms(self, jet: Jet, rank: int) -> Jet:
        """Extend base covariant slots (trailing axes) by zero fiber slots."""
        lead = jet.shape[:len(jet.shape) - rank]
        coeffs = np.zeros(lead + (self.dim,) * rank + (jet.space.size,))
        index = tuple(slice(None) for _ in lead) + (slice(4, None),) * rank
        coeffs[index] = jet.coeffs
        return Jet(coeffs, jet.space)

    def assemble(self, point, order: int) -> Dict[str, Jet]:
        point = np.asarray(point, dtype=float)
        key = (point.tobytes(), order)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        variables = Jet.variables(point, order)
        space = variables.space
        x, y = variables[:4], variables[4:]
        y0 = point[4:]
        n_base = self.data.chart.dim

        w = self._pad_forms(self._lift(self.omega.jet(y0, order), y), 1)  # (4, D)
        big_omega = self._pad_forms(self._lift(self.omega.curvature_jet(y0, order), y), 2)  # (4, D, D)
        triple = [self._lift(A, y) for A in self.data.triple.jets(y0, order)]

        wx = _qproduct('cab,ad,b->cd', w, x)
        psi = Jet.constant(np.eye(4, self.dim), space) - wx
        psi_bar = psi * _CONJUGATE[:, None]
        x_bar = x * _CONJUGATE
        product = _qproduct('cab,ad,be->cde', psi_bar, psi)
        psi_wedge = product - product.swapaxes(1, 2)
        conjugated = _qproduct('cab,ade,b->cde', _qproduct('cab,a,bde->cde', x_bar, big_omega), x)
        d_a_dmu = [psi_wedge[a] * -2.0 + conjugated[a] * 2.0 for a in (1, 2, 3)]

        q = wx[:, 4:]  # (4, n_base)
        upper = np.zeros((self.dim, self.dim, space.size))
        upper[..., 0] = np.eye(self.dim)
        coframe = Jet(upper.copy(), space)
        coframe.coeffs[:4, 4:] = -q.coeffs
        inverse_frame = Jet(upper, space)
        inverse_frame.coeffs[:4, 4:] = q.coeffs

        norm = (x * x).sum()
        x_inv = x_bar * norm.reciprocal()
        structures = []
        for u in (1, 2, 3):
            r = _qproduct('cab,a,b->c', _qproduct('cab,a,b->c', x, Jet.constant(UNITS[u], space)), x_inv)
            block = np.zeros((self.dim, self.dim, space.size))
            block[:4, :4, 0] = -right_multiplication(UNITS[u])
            horizontal = triple[0] * r[1] + triple[1] * r[2] + triple[2] * r[3]
            block[4:, 4:] = horizontal.coeffs
            middle = Jet(block, space)
            structures.append(contract('ab,bc,cd->ad', inverse_frame, middle, coframe))

        forms = []
        for a in range(3):
            B = structures[(a + 1) % 3]
            rotated = contract('ab,au,bv->uv', d_a_dmu[a], B, B)
            forms.append((d_a_dmu[a] - rotated) * 0.5)
        metric = contract('ay,ax->xy', forms[0], structures[0]) * -1.0
        metric = (metric + metric.transpose(1, 0)) * 0.5

        result = {'psi': psi, 'x': x, 'omega': w, 'Omega': big_omega, 'dIdmu': d_a_dmu[0], 'dJdmu': d_a_dmu[1],
                  'dKdmu': d_a_dmu[2], 'I': structures[0], 'J': structures[1], 'K': structures[2],
                  'F_I': forms[0], 'F_J': forms[1], 'F_K': forms[2], 'g': metric, 'horizontal': inverse_frame[:, 4:]}
        self._cache[key] = result
        if len(self._cache) > config.FIELD_CACHE_SIZE:
            self._cache.popitem(last=False)
        return result

    def field(self, key: str, valence: str, symmetry: Optional[str] = None) -> TensorField:
        return TensorField(self.chart, valence, lambda p, n: self.assemble(p, n)[key], symmetry, f"{key}[U]")

    @cached_property
    def triple(self) -> QuaternionTriple:
        return QuaternionTriple(*(self.field(k, 'ul') for k in ('I', 'J', 'K')))

    @cached_property
    def metric(self) -> TensorField:
        return self.field('g', 'll', 'symmetric')

    @cached_property
    def potential(self) -> TensorField:
        return function_field(self.chart, '', lambda v: (v[:4] * v[:4]).sum(), 'mu_U')

    @cached_property
    def dilation(self) -> TensorField:
        def fiber(v):
            zero = v[4:] * 0.0
            return Jet.stack([v[0], v[1], v[2], v[3]] + [zero[i] for i in range(self.data.chart.dim)])

        return function_field(self.chart, 'u', fiber, 'X')

    def sample(self, count: int, seed: int = 0) -> np.ndarray:
        return self.chart.sample(count, seed)


def build_UN(data: QKTChartData, omega: Optional[OmegaMinus] = None) -> BundleChart:
    return BundleChart(data, omega=omega)


def bundle_identity_residuals(bundle: BundleChart, points: np.ndarray) -> Dict[str, float]:
    """dmu, Idmu and dIdmu against their closed forms."""
    mu = bundle.potential
    dmu = exterior_derivative(mu)
    i_dmu = act_on_form(bundle.triple.I, dmu)
    d_i_dmu = exterior_derivative(i_dmu)
    residuals = OrderedDict((name, 0.0) for name in ('dmu = Re(conj(psi) x + conj(x) psi)',
                                                   'Idmu = conj(x) psi i - i conj(psi) x',
                                                   'dIdmu = -2(conj(psi)^psi)_i + 2(conj(x) Omega x)_i'))
    for p in points:
        parts = bundle.assemble(p, 0)
        x = parts['x'].value
        psi = parts['psi'].value
        psi_bar = psi * _CONJUGATE[:, None]
        x_bar = qconj(x)
        first = np.einsum('cab,ad,b->cd', QUATERNION_TABLE, psi_bar, x) + \
            np.einsum('cab,a,bd->cd', QUATERNION_TABLE, x_bar, psi)
        unit = UNITS[1]
        second = np.einsum('cab,ad,b->cd', QUATERNION_TABLE, np.einsum('cab,a,bd->cd', QUATERNION_TABLE, x_bar, psi),
                           unit) - np.einsum('cab,a,bd->cd', QUATERNION_TABLE, unit,
                                             np.einsum('cab,ad,b->cd', QUATERNION_TABLE, psi_bar, x))
        keys = list(residuals)
        residuals[keys[0]] = max(residuals[keys[0]], max_abs(first[0] - dmu.value(p)), max_abs(first[1:]))
        residuals[keys[1]] = max(residuals[keys[1]], max_abs(second[0] - i_dmu.value(p)))
        residuals[keys[2]] = max(residuals[keys[2]], max_abs(parts['dIdmu'].value - d_i_dmu.value(p)))
    return residuals


def horizontal_scaling_residual(bundle: BundleChart, points: np.ndarray) -> float:
    """|g restricted to horizontal lifts - |x|^2 sigma^q|, relative to |sigma^q|."""
    worst = 0.0
    sigma = bundle.data.curvature_metric
    for p in points:
        parts = bundle.assemble(p, 0)
        lift = parts['horizontal'].value
        restricted = lift.T @ parts['g'].value @ lift
        expected = float(p[:4] @ p[:4]) * sigma.value(p[4:])
        worst = max(worst, max_abs(restricted - expected) / max(max_abs(expected), 1e-300))
    return worst


@dataclass
class BundleResult:
    bundle: BundleChart
    hkt: HKTStructure
    homothety: SpecialHomothety
    sigma_signature: Tuple[int, int]
    signature: Tuple[int, int]


def hkt_on_UN(data: QKTChartData, points: np.ndarray, base_points: Optional[np.ndarray] = None,
              tolerance: float = config.BASE_TOLERANCE) -> BundleResult:
    """HKT structure with potential conj(x) x on U(N) and its fiber dilation."""
    bundle = build_UN(data)
    base_points = base_points if base_points is not None else points[:, 4:]
    sigma = data.curvature_metric
    sigma_signatures = set()
    for y in base_points:
        try:
            sigma_signatures.add(signature(sigma.value(y), config.SINGULAR_FLOOR))
        except SingularMetricError as error:
            raise PreconditionError("curvature metric is degenerate", point=y) from error
    if len(sigma_signatures) != 1:
        raise PreconditionError(f"curvature metric changes signature: {sorted(sigma_signatures)}")
    hkt = HKTStructure(bundle.metric, bundle.triple, f"U({data.name})", potential=bundle.potential,
                       scale=sample_scale([bundle.metric], points))
    homothety = measure_type(bundle.dilation, hkt, points)
    bundle_signature = signature(hkt.metric.value(points[0]), config.SINGULAR_FLOOR)
    logger.info(f"U({data.name}): type ({homothety.a:.6g}, {homothety.b:.6g}), signature {bundle_signature}")
    return BundleResult(bundle, hkt, homothety, sigma_signatures.pop(), bundle_signature)


def expected_bundle_signature(sigma_signature: Tuple[int, int], alpha: float) -> Tuple[int, int]:
    p, q = sigma_signature
    return (p + 4, q) if alpha < 0 else (q + 4, p)


def bundle_parameter_change(result: BundleResult, spec: TransformSpec,
                            points: np.ndarray) -> Tuple[HKTStructure, SpecialHomothety]:
    """g_f transform of the bundle structure along its fiber dilation."""
    return parameter_change(result.hkt, result.bundle.dilation, spec, points, result.homothety)


# === BASE CHARTS ===

def conformally_flat_base(chart: Chart, factor: Callable[[Jet], Jet], name: str,
                          max_order: Optional[int] = None) -> QKTChartData:
    """g = factor(|z|^2) delta with the standard triple and the Levi-Civita connection."""
    dim = chart.dim
    metric = function_field(chart, 'll', lambda z: factor((z * z).sum()) * np.eye(dim), f"g_{name}", 'symmetric',
                            max_order)
    triple = standard_triple(chart, max_order)
    return QKTChartData(chart, metric, triple, levi_civita(metric), name)


def quaternionic_projective_line(chart: Optional[Chart] = None, max_order: Optional[int] = None) -> QKTChartData:
    """HP(1) in a stereographic chart: |dz|^2 / (1 + |z|^2)^2."""
    chart = chart or Chart.euclidean(4, (-1.0, 1.0), name='HP1', prefix='z')
    return conformally_flat_base(chart, lambda r: (r + 1.0).power(-2), 'HP1', max_order)


def _inside_unit_ball(z: np.ndarray) -> bool:
    return float(z @ z) < 0.81


def quaternionic_hyperbolic_line(chart: Optional[Chart] = None, max_order: Optional[int] = None) -> QKTChartData:
    """HH(1) in the ball model: |dz|^2 / (1 - |z|^2)^2, |z| < 1."""
    if chart is None:
        chart = Chart.euclidean(4, (-0.5, 0.5), _inside_unit_ball, 'HH1', 'z')
    elif not all(_inside_unit_ball(p) for p in chart.sample(8)):
        raise DomainError("HH(1) charts must stay inside the unit ball")
    return conformally_flat_base(chart, lambda r: (1.0 - r).power(-2), 'HH1', max_order)


def flat_base(chart: Chart, max_order: Optional[int] = None) -> QKTChartData:
    return conformally_flat_base(chart, lambda r: r * 0.0 + 1.0, 'flat', max_order)


BASES = {'hp1': quaternionic_projective_line, 'hh1': quaternionic_hyperbolic_line, 'flat': flat_base}


def slice_chart_data(quotient_slice: QuotientSlice, name: str = 'N') -> QKTChartData:
    return QKTChartData(quotient_slice.chart, quotient_slice.metric, quotient_slice.triple,
                        quotient_slice.connection, name)


# === ROUND TRIP ===

def roundtrip(quotient_slice: QuotientSlice, slice_points: np.ndarray,
              fiber: Sequence[float] = (1.0, 0.0, 0.0, 0.0)) -> Dict[str, float]:
    """Quotient of U(N) over the slice compared with the slice data up to one constant."""
    data = slice_chart_data(quotient_slice)
    bundle = build_UN(data)
    hkt = HKTStructure(bundle.metric, bundle.triple, 'U(N)', potential=bundle.potential)
    fiber = np.asarray(fiber, dtype=float)
    metrics, references, torsions, torsion_references = [], [], [], []
    for y in slice_points:
        point = np.concatenate([fiber, y])
        split = horizontal_split(hkt, bundle.dilation, point)
        g_h, c_h = quotient_metric_and_torsion(hkt, split)
        base = np.linalg.inv(split.horizontal[4:, :])  # base coordinates -> H basis
        metrics.append(base.T @ g_h @ base)
        torsions.append(np.einsum('abc,ai,bj,ck->ijk', c_h, base, base, base))
        references.append(data.metric.value(y))
        torsion_references.append(data.torsion_form.value(y))
    ratio = least_squares_ratio(metrics, references)
    if ratio == 0:
        raise RoundTripError("bundle quotient metric vanishes")
    metric_deviation = max(max_abs(m - ratio * r) for m, r in zip(metrics, references)) / \
        max(max_abs(ratio * r) for r in references)
    torsion_scale = max(max(max_abs(t) for t in torsion_references), 1.0)
    torsion_deviation = max(max_abs(t - ratio * r) for t, r in zip(torsions, torsion_references)) / torsion_scale
    logger.info(f"round trip: lambda = {ratio:.6g}, metric deviation {metric_deviation:.3e}")
    return OrderedDict([('lambda', ratio), ('metric', metric_deviation), ('torsion', torsion_deviation)])


# === CONFORMAL CHANGE ===

def quaternionic_hessian_terms(data: QKTChartData, u: TensorField) -> Tuple[TensorField, TensorField]:
    """(∇^q du, (d^H u)^2)."""
    du = exterior_derivative(u)
    hessian = nabla_q(data.connection, data.triple).covariant_derivative(du)

    def square(point, order):
        d = du.jet(point, order)
        total = contract('a,b->ab', d, d)
        for A in data.triple.jets(point, order):
            rotated = contract('ka,k->a', A, d)
            total = total + contract('a,b->ab', rotated, rotated)
        return total

    return hessian, TensorField(data.chart, 'll', square, 'symmetric', f"(d^H {u.name})²")


def quaternionic_average(h: np.ndarray, triple: Sequence[np.ndarray]) -> np.ndarray:
    """(1 + I + J + K) h = h + h(I., I.) + h(J., J.) + h(K., K.)."""
    return h + sum(A.T @ h @ A for A in triple)


class ConformalChange:
    """g' = e^u g_N with torsion e^u (c + sum_A (du o A) ^ F_A)."""

    def __init__(self, data: QKTChartData, u: TensorField):
        self.data = data
        self.u = u
        self.du = exterior_derivative(u)
        chart = data.chart

        def metric(point, order):
            return data.metric.jet(point, order) * self.u.jet(point, order).exp()

        self.metric = TensorField(chart, 'll', metric, 'symmetric', f"e^u g_{data.name}")
        self.torsion_form = TensorField(chart, 'lll', self._torsion, 'alternating', f"c'_{data.name}")
        connection = metric_connection_with_torsion(self.metric, self.torsion_form, f"nabla'_{data.name}")
        self.changed = QKTChartData(chart, self.metric, data.triple, connection, f"{data.name}'")

    def _torsion(self, point, order):
        d = self.du.jet(point, order)
        g = self.data.metric.jet(point, order)
        total = self.data.torsion_form.jet(point, order)
        for A in self.data.triple.jets(point, order):
            rotated = contract('ka,k->a', A, d)  # du(A .)
            form = contract('ki,kj->ij', A, g)
            total = total + wedge_jets(rotated, 1, (form - form.transpose(1, 0)) * 0.5, 2)
        return total * self.u.jet(point, order).exp()

    def residuals(self, points: np.ndarray) -> Dict[str, float]:
        data, changed = self.data, self.changed
        n = data.quaternionic_dim
        hessian, square = quaternionic_hessian_terms(data, self.u)
        omega, omega_changed = data.omega, changed.omega
        residuals = OrderedDict((name, 0.0) for name in (
            'tau\' = tau - (2n+1) du', 'omega\' = omega - ½ sum du(A.) e_A', 'sp(1) extraction',
            'sigma\' two paths', 'beta\' formula', 'c\' type', 'd tau\' = d tau'))
        dtau = exterior_derivative(data.tau)
        dtau_changed = exterior_derivative(changed.tau)
        for p in points:
            du = self.du.value(p)
            triple = data.triple.values(p)
            residuals["tau' = tau - (2n+1) du"] = max(residuals["tau' = tau - (2n+1) du"], max_abs(
                changed.tau.value(p) - data.tau.value(p) + (2 * n + 1) * du))
            shift = np.zeros((4, len(du)))
            for a, A in enumerate(triple, start=1):
                shift[a] = -0.5 * (A.T @ du)
            key = "omega' = omega - ½ sum du(A.) e_A"
            residuals[key] = max(residuals[key], max_abs(omega_changed.value(p) - omega.value(p) - shift))
            residuals['sp(1) extraction'] = max(residuals['sp(1) extraction'], omega_changed.extraction_residual(p))
            sigma_direct = changed.curvature_metric.value(p)
            sigma_formula = (data.curvature_metric.value(p) + 0.5 * quaternionic_average(hessian.value(p), triple)
                             - 0.5 * square.value(p))
            residuals["sigma' two paths"] = max(residuals["sigma' two paths"], max_abs(sigma_direct - sigma_formula))
            I, J, K = triple
            h = hessian.value(p)
            j_du, k_du = -(J.T @ du), -(K.T @ du)
            beta_formula = (data.beta(p)[0] + I.T @ h - (I.T @ h).T
                            - (np.outer(j_du, k_du) - np.outer(k_du, j_du)))
            residuals["beta' formula"] = max(residuals["beta' formula"], max_abs(changed.beta(p)[0] - beta_formula))
            residuals["c' type"] = max(residuals["c' type"], max(type_30_residual(self.torsion_form.value(p), A)
                                                                 for A in triple))
            residuals["d tau' = d tau"] = max(residuals["d tau' = d tau"],
                                              max_abs(dtau_changed.value(p) - dtau.value(p)))
        return residuals


def conformal_change(data: QKTChartData, u: TensorField) -> QKTChartData:
    return ConformalChange(data, u).changed


# === LOCAL POSITIVE QKT ===

def quaternionic_shift(triple: QuaternionTriple, theta: TensorField) -> TensorField:
    """S_theta(X)Y = theta(X)Y + theta(Y)X - sum_A theta(AX)AY + theta(AY)AX."""
    chart = theta.chart
    identity = np.eye(chart.dim)

    def evaluate(point, order):
        t = theta.jet(point, order)
        total = contract('i,kj->kij', t, identity) + contract('j,ki->kij', t, identity)
        for A in triple.jets(point, order):
            rotated = contract('m,mi->i', t, A)
            total = total - contract('i,kj->kij', rotated, A) - contract('j,ki->kij', rotated, A)
        return total

    return TensorField(chart, 'ull', evaluate, None, f"S({theta.name})")


def volume_density(metric: TensorField) -> TensorField:
    """sqrt|det g| as a first-order jet: d rho = ½ rho tr(g^-1 dg)."""

    def evaluate(point, order):
        g = metric.jet(point, order + 1 if order else 0)
        rho = float(np.sqrt(abs(np.linalg.det(g.value))))
        space = get_space(metric.chart.dim, order)
        coeffs = np.zeros(space.size)
        coeffs[0] = rho
        if order:
            derivative = g.grad().value  # [a, i, j]
            coeffs[1:1 + metric.chart.dim] = 0.5 * rho * np.einsum('ij,aji->a', np.linalg.inv(g.value), derivative)
        return Jet(coeffs, space)

    return TensorField(metric.chart, '', evaluate, None, f"vol({metric.name})", max_order=1)


def volume_residual(connection: ConnectionField, density: TensorField, points: np.ndarray) -> float:
    """|d_i rho - Gamma^k_ik rho| for a volume density rho."""
    worst = 0.0
    for p in points:
        rho = density.jet(p, 1)
        gamma = connection.christoffel.value(p)
        worst = max(worst, max_abs(rho.grad().value - np.einsum('kik->i', gamma) * float(rho.value)))
    return worst


@dataclass
class LocalPositiveResult:
    data: QKTChartData
    u: TensorField
    coefficient: float
    attempts: int
    volume_residual: float


def adjusted_chart_data(base: QKTChartData, u: TensorField) -> QKTChartData:
    """nabla^0 + S_theta with theta = -½ du and g_N its curvature metric."""
    theta = exterior_derivative(u).scaled(-0.5)
    theta.name = 'theta'
    connection = base.connection.shifted(quaternionic_shift(base.triple, theta), f"nabla^{u.name}",
                                         torsion_free=True)
    adjusted = base.with_connection(connection, f"{base.name}^{u.name}")
    return QKTChartData(base.chart, adjusted.curvature_metric, base.triple, connection, adjusted.name)


def quadratic_potential(chart: Chart, center: np.ndarray, coefficient: float) -> TensorField:
    center = np.asarray(center, dtype=float)
    return function_field(chart, '', lambda z: ((z - center) * (z - center)).sum() * (0.5 * coefficient),
                          f"u[{coefficient:g}]")


def local_positive_qkt(base: QKTChartData, density: TensorField, center, points: np.ndarray,
                       u: Optional[TensorField] = None, tolerance: float = config.BASE_TOLERANCE,
                       attempts: int = config.HEURISTIC_ATTEMPTS,
                       initial: float = config.HEURISTIC_INITIAL_COEFFICIENT) -> LocalPositiveResult:
    """Positive definite QKT data near `center` from a torsion-free quaternionic connection."""
    if not base.connection.torsion_free:
        raise PreconditionError("local positive QKT needs a torsion-free connection")
    scale = sample_scale([base.metric], points)
    volume = volume_residual(base.connection, density, points)
    if volume > tolerance * scale:
        raise PreconditionError("connection does not preserve the volume form", residual=volume)
    extract_omega_minus(base, points, scale=scale)
    candidates = [(u, None)] if u is not None else \
        [(None, 0.0)] + [(None, sign * initial * 2.0 ** k) for k in range(attempts) for sign in (1.0, -1.0)]
    for attempt, (candidate, coefficient) in enumerate(candidates, start=1):
        if candidate is None:
            candidate = quadratic_potential(base.chart, center, coefficient)
        adjusted = adjusted_chart_data(base, candidate)
        try:
            positive = all(signature(adjusted.metric.value(p), config.SINGULAR_FLOOR)[1] == 0 for p in points)
        except SingularMetricError:
            positive = False
        if positive:
            shifted = volume_residual(adjusted.connection, _scaled_density(density, candidate, base.quaternionic_dim),
                                      points)
            logger.info(f"positive curvature metric with {candidate.name} after {attempt} attempt(s)")
            return LocalPositiveResult(adjusted, candidate, coefficient if coefficient is not None else float('nan'),
                                       attempt, shifted)
        logger.debug(f"{candidate.name}: curvature metric not positive definite")
    raise DefinitenessError("no candidate u makes the curvature metric positive definite near the center",
                            point=center)


def _scaled_density(density: TensorField, u: TensorField, n: int) -> TensorField:
    """e^{-2(n+1)u} rho."""
    return TensorField(density.chart, '', lambda p, k: density.jet(p, k) * (u.jet(p, k) * (-2.0 * (n + 1))).exp(),
                       None, f"e^(-2(n+1)u){density.name}")
