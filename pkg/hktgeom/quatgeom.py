"""
Quaternionic-Hermitian structures and their connections.

Conventions: the triple acts on every quaternion coordinate group by negated
right multiplication (Iv = -v i), F_A(X, Y) = g(AX, Y), and A acts on r-forms by
(A beta)(X1, ..., Xr) = beta(-A X1, ..., -A Xr). The torsion three-form is
c = -d_I F_I and c(X, Y, Z) = g(X, T(Y, Z)).
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from . import config
from .exceptions import NonHermitianError, NotHKTCompatibleError, TypeConditionError, ValenceMismatchError
from .jetcalc import (Chart, ConnectionField, TensorField, constant_field, exterior_derivative, inverse_jet,
                      levi_civita, metric_connection_with_torsion)
from .jets import Jet, contract
from .utils import max_abs, standard_triple_matrices

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuaternionTriple:
    I: TensorField
    J: TensorField
    K: TensorField

    @property
    def chart(self) -> Chart:
        return self.I.chart

    def members(self) -> Tuple[TensorField, TensorField, TensorField]:
        return self.I, self.J, self.K

    def cyclic(self) -> 'QuaternionTriple':
        return QuaternionTriple(self.J, self.K, self.I)

    def rotated(self, rotation: np.ndarray) -> 'QuaternionTriple':
        """A'_a = sum_b R[a, b] A_b for a constant rotation R in SO(3)."""
        rotation = np.asarray(rotation, dtype=float)
        members = self.members()

        def combine(row, name):
            return TensorField(self.chart, 'ul',
                               lambda p, n: sum(members[b].jet(p, n) * row[b] for b in range(3)),
                               None, name)

        return QuaternionTriple(*(combine(rotation[a], f"R{a}") for a in range(3)))

    def jets(self, point, order: int) -> Tuple[Jet, Jet, Jet]:
        return tuple(A.jet(point, order) for A in self.members())

    def values(self, point) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(A.value(point) for A in self.members())


def triple_from_matrices(chart: Chart, matrices: Sequence[np.ndarray], max_order: Optional[int] = None,
                         names: Sequence[str] = ('I', 'J', 'K')) -> QuaternionTriple:
    return QuaternionTriple(*(constant_field(chart, m, 'ul', name, max_order=max_order)
                              for m, name in zip(matrices, names)))


def standard_triple(chart: Chart, max_order: Optional[int] = None) -> QuaternionTriple:
    if not chart.quaternionic:
        raise ValenceMismatchError(f"chart of dimension {chart.dim} is not quaternionic")
    return triple_from_matrices(chart, standard_triple_matrices(chart.groups), max_order)


def quaternion_identity_residual(triple: QuaternionTriple, point) -> float:
    I, J, K = triple.values(point)
    one = np.eye(I.shape[0])
    return max(max_abs(I @ I + one), max_abs(J @ J + one), max_abs(K @ K + one),
               max_abs(I @ J - K), max_abs(J @ I + K))


# === FORMS ===

def fundamental_form(metric: TensorField, endo: TensorField, tolerance: float = config.HERMITIAN_TOLERANCE,
                     scale: float = 1.0) -> TensorField:
    """F_A(X, Y) = g(AX, Y); raises NonHermitianError where F_A is not alternating."""

    def evaluate(point, order):
        form = contract('ki,kj->ij', endo.jet(point, order), metric.jet(point, order))
        symmetric = 0.5 * (form.value + form.value.T)
        if max_abs(symmetric) > tolerance * scale:
            raise NonHermitianError(f"{endo.name} is not Hermitian for {metric.name}", point=point,
                                    residual=max_abs(symmetric))
        return (form - form.transpose(1, 0)) * 0.5

    return TensorField(metric.chart, 'll', evaluate, 'alternating', f"F_{endo.name}")


def act_on_form_jet(endo: Jet, beta: Jet, rank: int) -> Jet:
    result = beta
    for slot in range(rank):
        letters = 'abcdefgh'[:rank]
        moved = letters[:slot] + 'z' + letters[slot + 1:]
        result = contract(f'z{letters[slot]},{moved}->{letters}', endo, result) * -1.0
    return result


def act_on_form(endo: TensorField, beta: TensorField) -> TensorField:
    """(A beta)(X1, ..., Xr) = beta(-A X1, ..., -A Xr)."""
    rank = beta.rank
    if rank == 0:
        return beta
    return TensorField(beta.chart, beta.valence,
                       lambda p, n: act_on_form_jet(endo.jet(p, n), beta.jet(p, n), rank),
                       beta.symmetry, f"{endo.name}({beta.name})")


def d_A(beta: TensorField, endo: TensorField) -> TensorField:
    """d_A beta = (-1)^r A d A beta on r-forms."""
    result = act_on_form(endo, exterior_derivative(act_on_form(endo, beta)))
    if beta.rank % 2:
        result = result.scaled(-1.0)
    result.name = f"d_{endo.name}({beta.name})"
    return result


def pull_form_jet(form: Jet, endo: Jet, slots: Iterable[int]) -> Jet:
    """form with A inserted (without sign) into the given slots: form(.., A X, ..)."""
    rank = len(form.shape)
    letters = 'abcdefgh'[:rank]
    result = form
    for slot in slots:
        moved = letters[:slot] + 'z' + letters[slot + 1:]
        result = contract(f'z{letters[slot]},{moved}->{letters}', endo, result)
    return result


# === TORSION ===

def torsion_forms(metric: TensorField, triple: QuaternionTriple, scale: float = 1.0):
    """(-d_I F_I, -d_J F_J, -d_K F_K)."""
    return tuple(d_A(fundamental_form(metric, A, scale=scale), A).scaled(-1.0) for A in triple.members())


def torsion_agreement_residual(forms, point) -> float:
    c_i, c_j, c_k = (c.value(point) for c in forms)
    return max(max_abs(c_i - c_j), max_abs(c_i - c_k))


def torsion_three_form(metric: TensorField, triple: QuaternionTriple, points: Optional[np.ndarray] = None,
                       tolerance: float = config.TOLERANCES['torsion'], scale: float = 1.0) -> TensorField:
    forms = torsion_forms(metric, triple, scale)
    if points is not None:
        for point in points:
            residual = torsion_agreement_residual(forms, point)
            if residual > tolerance * scale:
                raise NotHKTCompatibleError("-d_A F_A differ between I, J, K", point=point, residual=residual)
    c = forms[0]
    c.name = 'c'
    return c


def type_30_residual(c: np.ndarray, A: np.ndarray) -> float:
    """c(AX,AY,Z) + c(AX,Y,AZ) + c(X,AY,AZ) - c(X,Y,Z); vanishes iff no (3,0)+(0,3) part."""
    projected = (np.einsum('abz,ax,by->xyz', c, A, A) + np.einsum('ayb,ax,bz->xyz', c, A, A)
                 + np.einsum('xab,ay,bz->xyz', c, A, A))
    return max_abs(projected - c)


def type_21_12_residual(torsion: TensorField, endo: TensorField, point) -> float:
    return type_30_residual(torsion.value(point), endo.value(point))


def type_11_residual(form: np.ndarray, A: np.ndarray) -> float:
    """|beta(A., A.) - beta| for a bilinear form given as a matrix."""
    return max_abs(A.T @ form @ A - form)


def skew_residual(torsion: TensorField, point) -> float:
    c = torsion.value(point)
    return max(max_abs(c + np.swapaxes(c, 0, 1)), max_abs(c + np.swapaxes(c, 1, 2)))


def nijenhuis(endo: TensorField) -> TensorField:
    """N[k, i, j] = (N_A(d_i, d_j))^k."""

    def evaluate(point, order):
        a = endo.jet(point, order + 1)
        da = a.grad()  # da[l, k, j] = d_l A^k_j
        a = a.truncate(order)
        first = contract('li,lkj->kij', a, da)
        mixed = contract('kl,ilj->kij', a, da) - contract('kl,jli->kij', a, da)
        return first - first.swapaxes(1, 2) - mixed

    return TensorField(endo.chart, 'ull', evaluate, None, f"N({endo.name})")


def t_i_residual(torsion_tensor: TensorField, endo: TensorField, point) -> float:
    """T(AX,AY) - A T(AX,Y) - A T(X,AY) - T(X,Y)."""
    T = torsion_tensor.value(point)
    A = endo.value(point)
    residual = (np.einsum('kab,ax,by->kxy', T, A, A) - np.einsum('km,may,ax->kxy', A, T, A)
                - np.einsum('km,mxb,by->kxy', A, T, A) - T)
    return max_abs(residual)


# === XI AND QUATERNIONIC CONNECTIONS ===

def xi_jet(T: Jet, I: Jet, J: Jet, K: Jet) -> Jet:
    """xi[k, y, z] = (xi_Y Z)^k built from the torsion tensor and a quaternion basis."""
    sixth = None
    for A in (I, J, K):
        term = contract('km,myn,nz->kyz', A, T, A) - contract('km,mnz,ny->kyz', A, T, A)
        sixth = term if sixth is None else sixth + term
    twelfth = (contract('km,mab,ay,bz->kyz', I, T, J, K) + contract('km,mab,ay,bz->kyz', J, T, K, I)
               + contract('km,mab,ay,bz->kyz', K, T, I, J) - contract('km,mab,ay,bz->kyz', I, T, K, J)
               - contract('km,mab,ay,bz->kyz', J, T, I, K) - contract('km,mab,ay,bz->kyz', K, T, J, I))
    return T * -0.5 + sixth * (1.0 / 6.0) - twelfth * (1.0 / 12.0)


def xi_tensor(torsion_tensor: TensorField, triple: QuaternionTriple, points: Optional[np.ndarray] = None,
              tolerance: float = config.TOLERANCES['torsion'], scale: float = 1.0) -> TensorField:
    if points is not None:
        for point in points:
            for A in triple.members():
                residual = t_i_residual(torsion_tensor, A, point)
                if residual > tolerance * scale:
                    raise TypeConditionError(f"torsion violates the integrability identity for {A.name}",
                                             point=point, residual=residual)
    return TensorField(torsion_tensor.chart, 'ull',
                       lambda p, n: xi_jet(torsion_tensor.jet(p, n), *triple.jets(p, n)),
                       None, 'xi')


def xi_antisymmetry_residual(xi: TensorField, torsion_tensor: TensorField, point) -> float:
    """xi_Y Z - xi_Z Y + T(Y, Z): the torsion of nabla + xi."""
    x = xi.value(point)
    return max_abs(x - np.swapaxes(x, 1, 2) + torsion_tensor.value(point))


def xi_commutator_residual(xi: TensorField, triple: QuaternionTriple, point) -> float:
    """max |[xi_Y, A]| over the triple."""
    x = xi.value(point)
    worst = 0.0
    for A in triple.values(point):
        worst = max(worst, max_abs(np.einsum('kym,mz->kyz', x, A) - np.einsum('km,myz->kyz', A, x)))
    return worst


def nabla_q(connection: ConnectionField, triple: QuaternionTriple) -> ConnectionField:
    """nabla + xi(T_nabla), a torsion-free connection preserving the span of the triple."""
    xi = xi_tensor(connection.torsion(), triple)
    return connection.shifted(xi, f"q({connection.name})", torsion_free=True)


def parallel_residual(connection: ConnectionField, tensor: TensorField, point) -> float:
    return max_abs(connection.covariant_derivative(tensor).value(point))


# === HKT STRUCTURES ===

class HKTStructure:
    """(g, I, J, K) with its Bismut connection and torsion three-form."""

    def __init__(self, metric: TensorField, triple: QuaternionTriple, name: str = 'hkt',
                 torsion: Optional[TensorField] = None, scale: float = 1.0,
                 potential: Optional[TensorField] = None):
        if metric.chart != triple.chart:
            raise ValenceMismatchError("metric and triple live on different charts")
        self.chart = metric.chart
        self.metric = metric
        self.triple = triple
        self.name = name
        self.scale = scale
        self._torsion_override = torsion
        self.potential = potential

    def __repr__(self):
        return f"HKTStructure({self.name!r}, dim={self.chart.dim})"

    @cached_property
    def fundamental_forms(self) -> Tuple[TensorField, TensorField, TensorField]:
        return tuple(fundamental_form(self.metric, A, scale=self.scale) for A in self.triple.members())

    @cached_property
    def torsion_candidates(self):
        return torsion_forms(self.metric, self.triple, self.scale)

    @cached_property
    def torsion_form(self) -> TensorField:
        if self._torsion_override is not None:
            return self._torsion_override
        c = self.torsion_candidates[0]
        c.name = 'c'
        return c

    @cached_property
    def torsion_tensor(self) -> TensorField:
        def evaluate(point, order):
            ginv = inverse_jet(self.metric.jet(point, order), point)
            return contract('ka,aij->kij', ginv, self.torsion_form.jet(point, order))

        return TensorField(self.chart, 'ull', evaluate, None, 'T')

    @cached_property
    def connection(self) -> ConnectionField:
        return metric_connection_with_torsion(self.metric, self.torsion_form, f"Bismut({self.name})")

    @cached_property
    def levi_civita(self) -> ConnectionField:
        return levi_civita(self.metric)

    @cached_property
    def xi(self) -> TensorField:
        return xi_tensor(self.torsion_tensor, self.triple)

    def with_torsion(self, torsion: TensorField, name: str) -> 'HKTStructure':
        return HKTStructure(self.metric, self.triple, name, torsion, self.scale, self.potential)

    def with_triple(self, triple: QuaternionTriple, name: str) -> 'HKTStructure':
        return HKTStructure(self.metric, triple, name, self._torsion_override, self.scale, self.potential)


def bismut_connection(metric: TensorField, triple: QuaternionTriple) -> ConnectionField:
    return HKTStructure(metric, triple).connection


def obata_connection(hkt: HKTStructure) -> ConnectionField:
    return hkt.connection.shifted(hkt.xi, f"Obata({hkt.name})", torsion_free=True)


def verify_hkt(hkt: HKTStructure, points: np.ndarray) -> Dict[str, float]:
    """Maximum residual of every HKT axiom over `points`."""
    residuals: Dict[str, float] = OrderedDict(
        (name, 0.0) for name in ('quaternion_identities', 'hermitian', 'torsion_agreement', 'torsion_skew',
                                 'nabla_g', 'nabla_I', 'nabla_J', 'nabla_K', 'type_I', 'type_J', 'type_K',
                                 'nijenhuis_I', 'nijenhuis_J', 'nijenhuis_K', 'torsion_norm'))
    nabla = hkt.connection
    parallel = [nabla.covariant_derivative(hkt.metric)] + [nabla.covariant_derivative(A) for A in hkt.triple.members()]
    integrability = [nijenhuis(A) for A in hkt.triple.members()]
    for point in points:
        g = hkt.metric.value(point)
        residuals['quaternion_identities'] = max(residuals['quaternion_identities'],
                                                 quaternion_identity_residual(hkt.triple, point))
        for A in hkt.triple.values(point):
            form = A.T @ g
            residuals['hermitian'] = max(residuals['hermitian'], max_abs(form + form.T) / 2)
        residuals['torsion_agreement'] = max(residuals['torsion_agreement'],
                                             torsion_agreement_residual(hkt.torsion_candidates, point))
        residuals['torsion_skew'] = max(residuals['torsion_skew'], skew_residual(hkt.torsion_form, point))
        for key, field in zip(('nabla_g', 'nabla_I', 'nabla_J', 'nabla_K'), parallel):
            residuals[key] = max(residuals[key], max_abs(field.value(point)))
        for key, A in zip(('type_I', 'type_J', 'type_K'), hkt.triple.members()):
            residuals[key] = max(residuals[key], type_21_12_residual(hkt.torsion_form, A, point))
        for key, N in zip(('nijenhuis_I', 'nijenhuis_J', 'nijenhuis_K'), integrability):
            residuals[key] = max(residuals[key], max_abs(N.value(point)))
        residuals['torsion_norm'] = max(residuals['torsion_norm'], max_abs(hkt.torsion_form.value(point)))
    logger.debug(f"HKT residuals for {hkt.name}: {dict(residuals)}")
    return residuals
