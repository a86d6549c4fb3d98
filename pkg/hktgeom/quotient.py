"""
Quaternionic Kähler quotients of HKT structures with a special homothety.

The quotient of a level set of mu by the local H* action is never built as a
manifold. Pointwise data (QKTSample) live on the horizontal space H at a level
set point; field-level data (QuotientSlice) live on a transversal slice of the
level set, where the quotient metric, torsion and triple are the horizontal
parts of the ambient ones pulled back along the slice embedding.
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from . import config
from .exceptions import DimensionDefectError, DomainError, NullVectorError
from .homothety import SpecialHomothety, potential_from_homothety
from .jetcalc import (Chart, ConnectionField, TensorField, apply_endomorphism, exterior_derivative, inverse_jet,
                      levi_civita, lie_derivative, metric_connection_with_torsion, riemann_curvature, weyl_tensor)
from .jets import Jet, compose_at, contract
from .quatgeom import (HKTStructure, QuaternionTriple, act_on_form, type_11_residual, type_30_residual, xi_jet)
from .utils import least_squares_ratio, max_abs, pseudo_orthonormalize, signature

logger = logging.getLogger(__name__)


# === LEVEL SETS ===

def project_to_level(mu: TensorField, X: TensorField, start, level: float,
                     tolerance: float = 1e-13, max_iterations: int = config.NEWTON_MAX_ITERATIONS) -> np.ndarray:
    """Newton steps along X until mu = level."""
    p = np.array(start, dtype=float)
    for _ in range(max_iterations):
        jet = mu.jet(p, 1)
        miss = level - float(jet.value)
        if abs(miss) < tolerance * max(1.0, abs(level)):
            return p
        direction = X.value(p)
        slope = float(jet.grad().value @ direction)
        if abs(slope) < config.SINGULAR_FLOOR:
            raise DomainError("dmu(X) vanishes along the Newton path", point=p)
        p = p + (miss / slope) * direction
    raise DomainError(f"no convergence to the level set mu = {level:g}", point=p)


def level_set_points(mu: TensorField, X: TensorField, chart: Chart, level: float, count: int,
                     seed: int = 0) -> np.ndarray:
    candidates = chart.sample(4 * count, seed)
    accepted = []
    for start in candidates:
        if float(mu.value(start)) * level <= 0:
            continue
        try:
            p = project_to_level(mu, X, start, level)
        except DomainError:
            continue
        if chart.contains(p):
            accepted.append(p)
            if len(accepted) == count:
                return np.array(accepted)
    raise DomainError(f"only {len(accepted)} of {count} level set points found for mu = {level:g}")


@dataclass
class LevelSetPoint:
    point: np.ndarray
    level: float
    vertical: np.ndarray  # columns X, IX, JX, KX
    horizontal: np.ndarray  # columns spanning H
    norm: float  # g(X, X)


def horizontal_split(hkt: HKTStructure, X: TensorField, point, level: float = 0.0,
                     tolerance: float = config.TOLERANCES['tight']) -> LevelSetPoint:
    """Vertical frame and H = span{X, IX, JX, KX}^⊥ at a level set point."""
    g = hkt.metric.value(point)
    x = X.value(point)
    vertical = np.column_stack([x] + [A @ x for A in hkt.triple.values(point)])
    norm = float(x @ g @ x)
    scale = max(max_abs(g), 1.0) * max(float(x @ x), 1e-300)
    if abs(norm) < config.SINGULAR_FLOOR * scale:
        raise NullVectorError("X is null on the level set", point=point, residual=abs(norm))
    constraints = vertical.T @ g
    if np.linalg.matrix_rank(constraints) != 4:
        raise DimensionDefectError("vertical span does not have rank 4", point=point)
    horizontal = null_space(constraints)
    if horizontal.shape[1] != hkt.chart.dim - 4:
        raise DimensionDefectError(f"horizontal space has dimension {horizontal.shape[1]}", point=point)
    closure = max(max_abs(vertical.T @ g @ A @ horizontal) for A in hkt.triple.values(point))
    if closure > tolerance * max(max_abs(g), 1.0) * max(max_abs(x), 1.0):
        raise DimensionDefectError("H is not preserved by the triple", point=point, residual=closure)
    return LevelSetPoint(np.asarray(point, dtype=float), level, vertical, horizontal, norm)


def restrict_to_horizontal(H: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    result = tensor
    for axis in range(tensor.ndim):
        result = np.moveaxis(np.tensordot(result, H, axes=([axis], [0])), -1, axis)
    return result


def quotient_metric_and_torsion(hkt: HKTStructure, split: LevelSetPoint) -> Tuple[np.ndarray, np.ndarray]:
    """(g_N, c^N) as the restrictions of g and c to H."""
    H = split.horizontal
    g_n = restrict_to_horizontal(H, hkt.metric.value(split.point))
    c_n = restrict_to_horizontal(H, hkt.torsion_form.value(split.point))
    return g_n, c_n


def induced_triple(hkt: HKTStructure, split: LevelSetPoint, g_n: np.ndarray) -> Tuple[np.ndarray, ...]:
    """Matrices of I_N, J_N, K_N in the H basis: -g_N^-1 F^N."""
    H = split.horizontal
    g_inv = np.linalg.inv(g_n)
    return tuple(-g_inv @ restrict_to_horizontal(H, F.value(split.point)) for F in hkt.fundamental_forms)


def invariance_check(hkt: HKTStructure, X: TensorField, points: np.ndarray,
                     torsion: Optional[TensorField] = None) -> float:
    """max |L_{AX} c| over the triple."""
    c = torsion if torsion is not None else hkt.torsion_form
    worst = 0.0
    for A in hkt.triple.members():
        lie = lie_derivative(apply_endomorphism(A, X), c)
        worst = max(worst, max(max_abs(lie.value(p)) for p in points))
    return worst


# === POINTWISE QUOTIENT DATA ===

def torsion_one_form(c_n: np.ndarray, g_n: np.ndarray, A: np.ndarray) -> np.ndarray:
    """tau(Y) = ½ sum_i eps_i c^N(AY, e_i, A e_i)."""
    frame, signs = pseudo_orthonormalize(g_n)
    rotated = A @ frame
    return 0.5 * np.einsum('abc,ay,bi,ci,i->y', c_n, A, frame, rotated, signs)


def xi_trace(c_n: np.ndarray, g_n: np.ndarray, triple: Sequence[np.ndarray]) -> np.ndarray:
    """S(Y) = sum_i eps_i g_N(xi_Y e_i, e_i)."""
    T = np.einsum('ka,aij->kij', np.linalg.inv(g_n), c_n)
    xi = xi_jet(T, *triple)
    frame, signs = pseudo_orthonormalize(g_n)
    return np.einsum('kyz,km,zi,mi,i->y', xi, g_n, frame, frame, signs)


def curvature_metric(beta_i: np.ndarray, I: np.ndarray, J: np.ndarray) -> np.ndarray:
    """sigma^q = ½(beta_I - J beta_I)(., I.)."""
    rotated = J.T @ beta_i @ J
    return 0.5 * (beta_i - rotated) @ I


@dataclass
class QKTSample:
    point: np.ndarray
    horizontal: np.ndarray
    g_n: np.ndarray
    c_n: np.ndarray
    triple: Tuple[np.ndarray, np.ndarray, np.ndarray]
    tau: Tuple[np.ndarray, np.ndarray, np.ndarray]
    beta: Tuple[np.ndarray, np.ndarray, np.ndarray]
    sigma: np.ndarray
    xi_trace: np.ndarray
    residuals: Dict[str, float] = field(default_factory=OrderedDict)
    instanton_type: Optional[bool] = None
    selfdual_checked: bool = False

    @property
    def dim(self) -> int:
        return self.g_n.shape[0]


class QuotientBuilder:
    """Level set geometry of (hkt, X) at mu = level, with mu = 2/(a(a-b)) g(X,X)."""

    def __init__(self, hkt: HKTStructure, homothety: SpecialHomothety, level: float = config.DEFAULT_LEVEL,
                 beta_normalization: float = config.BETA_NORMALIZATION):
        self.hkt = hkt
        self.homothety = homothety
        self.X = homothety.X
        self.a, self.b = homothety.type
        self.level = level
        self.kappa = beta_normalization
        self.mu = potential_from_homothety(self.X, hkt, self.a, self.b).field

    @cached_property
    def differential(self) -> TensorField:
        return exterior_derivative(self.mu)

    @cached_property
    def beta_ambient(self) -> Tuple[TensorField, TensorField, TensorField]:
        """kappa ((b-a)/2) d(A dmu) for A = I, J, K."""
        factor = self.kappa * (self.b - self.a) / 2.0
        return tuple(exterior_derivative(act_on_form(A, self.differential)).scaled(factor)
                     for A in self.hkt.triple.members())

    def points(self, count: int, seed: int = 0) -> np.ndarray:
        return level_set_points(self.mu, self.X, self.hkt.chart, self.level, count, seed)

    def regularity_residual(self, point) -> float:
        """|dmu - 2 X♭/(a-b)|."""
        flat = self.hkt.metric.value(point) @ self.X.value(point)
        return max_abs(self.differential.value(point) - 2.0 * flat / (self.a - self.b))

    def sample(self, point) -> QKTSample:
        split = horizontal_split(self.hkt, self.X, point, self.level)
        g_n, c_n = quotient_metric_and_torsion(self.hkt, split)
        triple = induced_triple(self.hkt, split, g_n)
        H = split.horizontal
        tau = tuple(torsion_one_form(c_n, g_n, A) for A in triple)
        beta = tuple(restrict_to_horizontal(H, form.value(point)) for form in self.beta_ambient)
        sigma = curvature_metric(beta[0], triple[0], triple[1])
        residuals = OrderedDict()
        residuals['level'] = abs(float(self.mu.value(point)) - self.level)
        residuals['regularity'] = self.regularity_residual(point)
        residuals['H in ker dmu'] = max_abs(self.differential.value(point) @ H)
        residuals['quaternion_identities'] = max(
            max_abs(A @ A + np.eye(len(g_n))) for A in triple)
        residuals['quaternion_identities'] = max(residuals['quaternion_identities'],
                                                 max_abs(triple[0] @ triple[1] - triple[2]),
                                                 max_abs(triple[1] @ triple[0] + triple[2]))
        residuals['c_N type'] = max(type_30_residual(c_n, A) for A in triple)
        residuals['tau I-independence'] = max(max_abs(tau[0] - tau[1]), max_abs(tau[0] - tau[2]))
        residuals['beta type'] = max(type_11_residual(b, A) for b, A in zip(beta, triple))
        residuals['sigma symmetry'] = max_abs(sigma - sigma.T)
        residuals['sigma type'] = max(type_11_residual(sigma, A) for A in triple)
        return QKTSample(np.asarray(point, dtype=float), H, g_n, c_n, triple, tau, beta, sigma,
                         xi_trace(c_n, g_n, triple), residuals)

    def samples(self, count: int, seed: int = 0) -> List[QKTSample]:
        samples = [self.sample(p) for p in self.points(count, seed)]
        logger.info(f"built {len(samples)} quotient samples at mu = {self.level:g}")
        return samples

    def slice(self, base_point, radius: float = config.SLICE_RADIUS) -> 'QuotientSlice':
        return QuotientSlice(self.hkt, self.X, self.mu, base_point, self.level, radius)


def quotient_samples(hkt: HKTStructure, homothety: SpecialHomothety, count: int, level: float = config.DEFAULT_LEVEL,
                     seed: int = 0) -> List[QKTSample]:
    return QuotientBuilder(hkt, homothety, level).samples(count, seed)


def beta_forms(hkt: HKTStructure, homothety: SpecialHomothety, point, level: float = config.DEFAULT_LEVEL):
    return QuotientBuilder(hkt, homothety, level).sample(point).beta


def trace_identity(samples: Sequence[QKTSample], kappa: float = config.TRACE_KAPPA) -> Tuple[float, float]:
    """(fitted kappa, residual of sum_i eps_i g(xi_A e_i, e_i) = kappa tau(A) at the given kappa)."""
    traces = [s.xi_trace for s in samples]
    taus = [s.tau[0] for s in samples]
    fitted = least_squares_ratio(traces, taus)
    residual = max(max_abs(t - kappa * u) for t, u in zip(traces, taus))
    return fitted, residual


def sigma_proportionality(samples: Sequence[QKTSample], directions: np.ndarray) -> Tuple[float, float]:
    """(lambda, relative spread) for sigma^q(v, v) = lambda g_N(v, v) over samples and directions."""
    ratios = []
    for s in samples:
        for v in directions:
            v = v[:s.dim]
            ratios.append(float(v @ s.sigma @ v) / float(v @ s.g_n @ v))
    ratios = np.asarray(ratios)
    mean = float(np.mean(ratios))
    spread = float((ratios.max() - ratios.min()) / abs(mean)) if mean else float('inf')
    return mean, spread


def instanton_check(sample: QKTSample, tolerance: float, weyl_residual: Optional[float] = None,
                    weyl_tolerance: Optional[float] = None) -> Tuple[bool, float]:
    """beta_A of type (1,1)_A for every A; in dimension four W_- must vanish too."""
    worst = sample.residuals['beta type']
    passed = worst <= tolerance
    if sample.dim == 4:
        if weyl_residual is None:
            sample.instanton_type = None
            return False, worst
        sample.selfdual_checked = True
        passed = passed and weyl_residual <= (tolerance if weyl_tolerance is None else weyl_tolerance)
        worst = max(worst, weyl_residual)
    sample.instanton_type = passed
    return sample.instanton_type, worst


def signature_bookkeeping(hkt: HKTStructure, samples: Sequence[QKTSample], X: TensorField) -> Dict[str, object]:
    """Observed and predicted signatures of g_N."""
    p0 = samples[0].point
    positive, negative = signature(hkt.metric.value(p0), config.SINGULAR_FLOOR)
    norm = float(X.value(p0) @ hkt.metric.value(p0) @ X.value(p0))
    expected = (positive - 4, negative) if norm > 0 else (positive, negative - 4)
    observed = {signature(s.g_n, config.SINGULAR_FLOOR) for s in samples}
    return {'ambient': (positive, negative), 'expected': expected, 'observed': sorted(observed),
            'consistent': observed == {expected}}


# === SLICES ===

def horizontal_projector(hkt: HKTStructure, X: TensorField) -> TensorField:
    """P v = v - sum_{A in 1,I,J,K} g(v, AX) AX / g(X,X)."""
    dim = hkt.chart.dim

    def evaluate(point, order):
        g = hkt.metric.jet(point, order)
        x = X.jet(point, order)
        columns = [x] + [contract('ab,b->a', A, x) for A in hkt.triple.jets(point, order)]
        norm = contract('ab,a,b->', g, x, x)
        total = None
        for v in columns:
            flat = contract('ab,b->a', g, v)
            term = contract('i,a->ia', v, flat)
            total = term if total is None else total + term
        return (total / norm) * -1.0 + np.eye(dim)

    return TensorField(hkt.chart, 'ul', evaluate, None, 'P_H')


def horizontal_part(tensor: TensorField, projector: TensorField) -> TensorField:
    """T(P., ..., P.) for a covariant tensor."""
    rank = tensor.rank
    letters = 'abcdefgh'[:rank]

    def evaluate(point, order):
        result = tensor.jet(point, order)
        P = projector.jet(point, order)
        for slot in range(rank):
            moved = letters[:slot] + 'z' + letters[slot + 1:]
            result = contract(f'z{letters[slot]},{moved}->{letters}', P, result)
        return result

    return TensorField(tensor.chart, tensor.valence, evaluate, tensor.symmetry, f"{tensor.name}^H")


class QuotientSlice:
    """A transversal slice y -> phi(y) of the level set through a base point.

    phi(y) = l(y) + s(y) X(l(y)) with l(y) = p0 + H y and s solving
    mu(phi(y)) = level order by order.
    """

    def __init__(self, hkt: HKTStructure, X: TensorField, mu: TensorField, base_point, level: float,
                 radius: float = config.SLICE_RADIUS):
        self.hkt = hkt
        self.X = X
        self.mu = mu
        self.level = level
        self.base_point = np.asarray(base_point, dtype=float)
        self.frame = horizontal_split(hkt, X, self.base_point, level).horizontal
        dim = self.frame.shape[1]
        self.chart = Chart.euclidean(dim, (-radius, radius), name='slice', prefix='y')
        self.projector = horizontal_projector(hkt, X)
        self._embeddings: "OrderedDict[tuple, Jet]" = OrderedDict()

    def __repr__(self):
        return f"QuotientSlice(dim={self.chart.dim}, level={self.level:g})"

    def _line_solve(self, origin: np.ndarray, direction: np.ndarray) -> float:
        s = 0.0
        for _ in range(config.NEWTON_MAX_ITERATIONS):
            p = origin + s * direction
            jet = self.mu.jet(p, 1)
            miss = self.level - float(jet.value)
            if abs(miss) < 1e-14 * max(1.0, abs(self.level)):
                return s
            s += miss / float(jet.grad().value @ direction)
        raise DomainError("slice does not meet the level set", point=origin)

    def embedding(self, y, order: int) -> Jet:
        """phi as a jet in the slice variables; shape (ambient dim,)."""
        y = np.asarray(y, dtype=float)
        key = (y.tobytes(), order)
        cached = self._embeddings.get(key)
        if cached is not None:
            return cached
        ell = contract('ia,a->i', self.frame, Jet.variables(y, order)) + self.base_point
        origin = ell.value
        direction = self.X.value(origin)
        s0 = self._line_solve(origin, direction)
        along = compose_at(self.X.jet(origin, order), ell) if order else Jet.constant(direction, ell.space)
        phi = ell + along * s0
        if order:
            anchor = phi.value
            mu_jet = self.mu.jet(anchor, order)
            slope = float(mu_jet.truncate(1).grad().value @ direction)
            s = Jet.constant(s0, ell.space)
            for _ in range(order + 3):
                phi = ell + along * s
                miss = compose_at(mu_jet, phi) - self.level
                s = s - (miss - miss.value) * (1.0 / slope)
            phi = ell + along * s
        self._embeddings[key] = phi
        if len(self._embeddings) > config.FIELD_CACHE_SIZE:
            self._embeddings.popitem(last=False)
        return phi

    def pull(self, tensor: TensorField, name: str) -> TensorField:
        """Pullback of a covariant ambient tensor along phi."""
        rank = tensor.rank
        letters = 'abcdefgh'[:rank]
        upper = 'ijklmnop'[:rank]

        def evaluate(y, order):
            phi = self.embedding(y, order + 1)
            dphi = phi.grad()  # [a, i] = d_a phi^i
            phi = phi.truncate(order)
            values = compose_at(tensor.jet(phi.value, order), phi) if order else \
                Jet.constant(tensor.value(phi.value), phi.space)
            operands = [values] + [dphi] * rank
            subscripts = upper + ',' + ','.join(f'{a}{i}' for a, i in zip(letters, upper)) + '->' + letters
            return contract(subscripts, *operands)

        return TensorField(self.chart, tensor.valence, evaluate, tensor.symmetry, name)

    def ambient_point(self, y) -> np.ndarray:
        return self.embedding(y, 0).value

    # -- quotient data ---------------------------------------------------------

    @cached_property
    def metric(self) -> TensorField:
        return self.pull(horizontal_part(self.hkt.metric, self.projector), 'g_N')

    @cached_property
    def torsion_form(self) -> TensorField:
        return self.pull(horizontal_part(self.hkt.torsion_form, self.projector), 'c_N')

    @cached_property
    def fundamental_forms(self) -> Tuple[TensorField, TensorField, TensorField]:
        return tuple(self.pull(horizontal_part(F, self.projector), f"{F.name}_N") for F in self.hkt.fundamental_forms)

    @cached_property
    def triple(self) -> QuaternionTriple:
        def endomorphism(form: TensorField, name: str) -> TensorField:
            def evaluate(y, order):
                g_inv = inverse_jet(self.metric.jet(y, order), y)
                return contract('ka,ax->kx', g_inv, form.jet(y, order)) * -1.0

            return TensorField(self.chart, 'ul', evaluate, None, name)

        return QuaternionTriple(*(endomorphism(F, name) for F, name in zip(self.fundamental_forms,
                                                                             ('I_N', 'J_N', 'K_N'))))

    @cached_property
    def connection(self) -> ConnectionField:
        return metric_connection_with_torsion(self.metric, self.torsion_form, 'nabla^N')

    @cached_property
    def tau(self) -> TensorField:
        """tau(Y) = ½ c^N(I Y, e_i, I e_i) as a field on the slice."""

        def evaluate(y, order):
            g_inv = inverse_jet(self.metric.jet(y, order), y)
            I = self.triple.I.jet(y, order)
            return contract('abc,ay,bd,cd->y', self.torsion_form.jet(y, order), I, g_inv, I) * 0.5

        return TensorField(self.chart, 'l', evaluate, None, 'tau')


def dtau_type_check(quotient_slice: QuotientSlice, points: np.ndarray) -> Dict[str, float]:
    """(1,1)-type residual of d tau for each of I_N, J_N, K_N."""
    dtau = exterior_derivative(quotient_slice.tau)
    residuals = OrderedDict()
    for A in quotient_slice.triple.members():
        residuals[A.name] = max(type_11_residual(dtau.value(y), A.value(y)) for y in points)
    return residuals


def weyl_minus_residual(weyl: np.ndarray, g: np.ndarray, forms: Sequence[np.ndarray]) -> float:
    """Norm of W restricted to the complement of span{F_I, F_J, F_K} in two-forms."""
    frame, signs = pseudo_orthonormalize(g)
    w = np.einsum('ijkl,ia,jb,kc,ld->abcd', weyl, frame, frame, frame, frame)
    pairs = [(a, b) for a in range(4) for b in range(a + 1, 4)]
    operator = np.array([[w[a, b, c, d] for (c, d) in pairs] for (a, b) in pairs])
    weights = np.array([signs[a] * signs[b] for a, b in pairs])
    spanned = np.array([[(frame.T @ F @ frame)[a, b] * weights[n] for n, (a, b) in enumerate(pairs)]
                        for F in forms])
    complement = null_space(spanned)
    raised = weights[:, None] * operator * weights[None, :]
    return max_abs(complement.T @ raised @ complement)


def weyl_minus(metric: TensorField, forms: Sequence[TensorField], points: np.ndarray) -> float:
    if metric.chart.dim != 4:
        raise DimensionDefectError(f"anti-self-dual Weyl curvature needs dimension 4, got {metric.chart.dim}")
    curvature = riemann_curvature(levi_civita(metric))
    worst = 0.0
    for p in points:
        g = metric.value(p)
        weyl = weyl_tensor(curvature.value(p), g)
        worst = max(worst, weyl_minus_residual(weyl, g, [F.value(p) for F in forms]))
    return worst
