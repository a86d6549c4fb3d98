import numpy as np
import pytest

from hktgeom.exceptions import NonHermitianError, ValenceMismatchError
from hktgeom.homothety import hkt_from_potential
from hktgeom.jetcalc import Chart, constant_field, sample_scale
from hktgeom.quatgeom import (HKTStructure, QuaternionTriple, fundamental_form, nabla_q, obata_connection,
                              parallel_residual, quaternion_identity_residual, standard_triple, type_30_residual,
                              verify_hkt, xi_antisymmetry_residual, xi_commutator_residual)
from hktgeom.utils import max_abs, random_rotation


def test_standard_triple_is_quaternionic(chart8):
    triple = standard_triple(chart8)
    assert quaternion_identity_residual(triple, np.zeros(8)) < 1e-15


def test_standard_triple_needs_quaternionic_dimension():
    with pytest.raises(ValenceMismatchError):
        standard_triple(Chart.euclidean(6))


def test_rotated_triple_stays_quaternionic(chart4):
    triple = standard_triple(chart4).rotated(random_rotation(5))
    assert quaternion_identity_residual(triple, np.zeros(4)) < 1e-12


def test_broken_triple_is_detected(chart4):
    I, J, K = standard_triple(chart4).members()
    broken = QuaternionTriple(I, J, K.scaled(-1.0))
    assert quaternion_identity_residual(broken, np.zeros(4)) > 1.0


def test_flat_structure_passes_verifier(flat_hkt8, chart8):
    residuals = verify_hkt(flat_hkt8, chart8.sample(4))
    for key, value in residuals.items():
        assert value < 1e-12, key


def test_fundamental_form_rejects_non_hermitian_metric(chart4):
    metric = constant_field(chart4, np.diag([1.0, 2.0, 1.0, 1.0]), 'll', 'g', 'symmetric')
    form = fundamental_form(metric, standard_triple(chart4).I)
    with pytest.raises(NonHermitianError):
        form.value(np.zeros(4))


def test_quartic_potential_has_genuine_torsion(quartic_potential, punctured_chart4):
    points = punctured_chart4.sample(4)
    hkt = hkt_from_potential(quartic_potential, standard_triple(punctured_chart4), points)
    scale = sample_scale([hkt.metric], points)
    residuals = verify_hkt(hkt, points)
    assert residuals['torsion_agreement'] < 1e-8 * scale
    assert residuals['torsion_norm'] > 1e-3 * scale
    for key in ('quaternion_identities', 'torsion_skew', 'nabla_g', 'nabla_I', 'nabla_J', 'nabla_K', 'type_I',
                'nijenhuis_I', 'nijenhuis_J', 'nijenhuis_K'):
        assert residuals[key] < 1e-7 * scale, key


def test_xi_and_obata_connection(quartic_potential, punctured_chart4):
    points = punctured_chart4.sample(3)
    hkt = hkt_from_potential(quartic_potential, standard_triple(punctured_chart4), points)
    scale = sample_scale([hkt.metric], points)
    for p in points:
        assert xi_antisymmetry_residual(hkt.xi, hkt.torsion_tensor, p) < 1e-9 * scale
        assert xi_commutator_residual(hkt.xi, hkt.triple, p) < 1e-9 * scale
    obata = obata_connection(hkt)
    p = points[0]
    assert max_abs(obata.torsion().value(p)) < 1e-8 * scale
    for A in hkt.triple.members():
        assert parallel_residual(obata, A, p) < 1e-8 * scale


def test_nabla_q_is_torsion_free(quartic_potential, punctured_chart4):
    points = punctured_chart4.sample(2)
    hkt = hkt_from_potential(quartic_potential, standard_triple(punctured_chart4), points)
    connection = nabla_q(hkt.connection, hkt.triple)
    assert max_abs(connection.torsion().value(points[0])) < 1e-8 * sample_scale([hkt.metric], points)


def test_type_30_residual_detects_contamination():
    I = standard_triple(Chart.euclidean(8)).I.value(np.zeros(8))
    thetas = np.zeros((3, 8), dtype=complex)
    thetas[0, :2] = 1, -1j
    thetas[1, 2:4] = 1, 1j
    thetas[2, 4:6] = 1, -1j
    form = np.zeros((8, 8, 8), dtype=complex)
    for perm, sign in (((0, 1, 2), 1), ((1, 2, 0), 1), ((2, 0, 1), 1), ((1, 0, 2), -1), ((0, 2, 1), -1),
                       ((2, 1, 0), -1)):
        form += sign * np.einsum('a,b,c->abc', *(thetas[k] for k in perm))
    assert type_30_residual(np.zeros((8, 8, 8)), I) == 0.0
    assert type_30_residual(form.real, I) > 0.1


def test_structure_rejects_mismatched_charts(chart4, chart8):
    metric = constant_field(chart4, np.eye(4), 'll', 'g', 'symmetric')
    with pytest.raises(ValenceMismatchError):
        HKTStructure(metric, standard_triple(chart8))
