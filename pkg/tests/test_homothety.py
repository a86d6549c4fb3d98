import numpy as np
import pytest

from hktgeom.exceptions import DegenerateTransformError, NotSpecialHomothetyError, PreconditionError
from hktgeom.homothety import (TransformSpec, bracket_check, exponent_for_alpha, detect_type, exactness_and_interior,
                               hkt_from_potential, ixc_identity, is_definite, measure_type, non_homothetic_field,
                               parameter_change, potential_from_homothety, potential_roundtrip_residual,
                               local_potential)
from hktgeom.jetcalc import constant_field, dilation_field, function_field, metric_norm
from hktgeom.quatgeom import HKTStructure, standard_triple
from hktgeom.utils import signature


def test_flat_dilation_has_type_two_minus_two(flat_hkt8, dilation8, chart8):
    measured = measure_type(dilation8, flat_hkt8, chart8.sample(6))
    assert measured.a == pytest.approx(2.0, abs=1e-9)
    assert measured.b == pytest.approx(-2.0, abs=1e-9)
    assert measured.alpha == pytest.approx(-2.0, abs=1e-9)
    _, worst = measured.worst()
    assert worst < 1e-7


def test_rescaled_field_keeps_alpha(flat_hkt4, dilation4, chart4):
    measured = measure_type(dilation4.scaled(3.0), flat_hkt4, chart4.sample(4))
    assert (measured.a, measured.b) == pytest.approx((6.0, -6.0), abs=1e-9)
    assert measured.alpha == pytest.approx(-2.0, abs=1e-9)


def test_vanishing_field_is_degenerate(flat_hkt4, chart4):
    zero = function_field(chart4, 'u', lambda x: x * 0.0, 'zero')
    measured = measure_type(zero, flat_hkt4, chart4.sample(3))
    assert measured.degenerate
    assert measured.alpha is None


def test_non_homothetic_field_is_rejected(flat_hkt4, dilation4, chart4):
    perturbed = dilation4 + non_homothetic_field(flat_hkt4).scaled(0.1)
    with pytest.raises(NotSpecialHomothetyError):
        detect_type(perturbed, flat_hkt4, chart4.sample(4))


def test_brackets_and_identities_on_flat_space(flat_hkt4, dilation4, chart4):
    points = chart4.sample(4)
    for label, residual in bracket_check(dilation4, flat_hkt4, -2.0, points).items():
        assert residual < 1e-9, label
    for label, residual in ixc_identity(dilation4, flat_hkt4, 2.0, -2.0, points).items():
        assert residual < 1e-9, label
    exact, interior = exactness_and_interior(dilation4, flat_hkt4, 2.0, points)
    assert exact < 1e-9 and interior < 1e-12


def test_flat_potential_is_quarter_square_norm(flat_hkt4, dilation4, chart4):
    mu = potential_from_homothety(dilation4, flat_hkt4, 2.0, -2.0)
    points = chart4.sample(4)
    for p in points:
        assert float(mu.field.value(p)) == pytest.approx(p @ p / 4.0)
    assert potential_roundtrip_residual(flat_hkt4, mu.field, points) < 1e-9


def test_square_norm_potential_gives_scaled_euclidean_metric(chart4):
    mu = function_field(chart4, '', lambda x: (x * x).sum(), 'r2')
    hkt = hkt_from_potential(mu, standard_triple(chart4), chart4.sample(3))
    np.testing.assert_allclose(hkt.metric.value(np.array([0.1, 0.2, 0.3, 0.4])), 4.0 * np.eye(4), atol=1e-12)


def test_potential_needs_a_and_a_minus_b_nonzero(flat_hkt4, dilation4):
    with pytest.raises(PreconditionError):
        potential_from_homothety(dilation4, flat_hkt4, 0.0, -2.0)


@pytest.mark.parametrize('spec, expected', [
    (TransformSpec.power(0.5), (1.0, -2.0)),
    (TransformSpec.power(2.0), (4.0, -2.0)),
    (TransformSpec.power(3.0), (6.0, -2.0)),
    (TransformSpec.log(), (0.0, -2.0)),
])
def test_parameter_change_types(punctured_chart4, spec, expected):
    points = punctured_chart4.sample(4)
    metric = constant_field(punctured_chart4, np.eye(4), 'll', 'g0', 'symmetric')
    hkt = HKTStructure(metric, standard_triple(punctured_chart4), 'flat')
    X = dilation_field(punctured_chart4)
    transformed, measured = parameter_change(hkt, X, spec, points)
    assert (measured.a, measured.b) == pytest.approx(expected, abs=1e-6)
    assert spec.predicted_type(2.0, -2.0) == pytest.approx(expected)


def test_degenerate_exponent_is_rejected():
    with pytest.raises(DegenerateTransformError):
        TransformSpec.power(-1.0).validate(2.0, -2.0)
    with pytest.raises(DegenerateTransformError):
        TransformSpec.power(0.0)


def test_signature_flip_follows_sign_rule(punctured_chart4):
    chart = punctured_chart4
    mu = function_field(chart, '', lambda x: (x * x).sum() * 0.25, 'mu')
    hkt = hkt_from_potential(mu, standard_triple(chart))
    X = dilation_field(chart)
    points = chart.sample(3)
    # in real dimension four the H-span of X is everything, so only g_f(X, X) decides
    for k, expected in ((0.5, (4, 0)), (2.0, (4, 0)), (-0.5, (0, 4)), (-2.0, (4, 0))):
        transformed, _ = parameter_change(hkt, X, TransformSpec.power(k), points)
        along, _ = TransformSpec.power(k).signature_factors(2.0, -2.0, float(mu.value(points[0])))
        assert (along > 0) == (expected == (4, 0))
        assert signature(transformed.metric.value(points[0])) == expected


def test_exponent_for_alpha():
    assert exponent_for_alpha(-2.0, 2.0, -2.0) == pytest.approx(1.0)
    assert exponent_for_alpha(-3.0, 2.0, -2.0) == pytest.approx(2.0)
    assert exponent_for_alpha(-1.0, 2.0, -2.0) is None


def test_euclidean_metric_is_definite(flat_hkt4, chart4):
    assert is_definite(flat_hkt4.metric, chart4.sample(3))


def test_local_potential_after_log_transform(punctured_chart4):
    chart = punctured_chart4
    mu = function_field(chart, '', lambda x: (x * x).sum() * 0.25, 'mu')
    hkt = hkt_from_potential(mu, standard_triple(chart))
    X = dilation_field(chart)
    points = np.array([[0.6, 0.1, 0.1, 0.1], [0.5, 0.2, 0.0, 0.1], [0.6, 0.0, 0.2, 0.1]])
    structure, measured = parameter_change(hkt, X, TransformSpec.log(), points)
    assert abs(measured.a) < 1e-6
    potential = local_potential(X, structure, points[0], points)
    norm = float(metric_norm(structure.metric, X).value(points[0]))
    recovered = hkt_from_potential(potential, structure.triple, points, name='g_mu')
    typed = measure_type(X, recovered, points)
    assert typed.a == pytest.approx(norm, rel=1e-5)
    assert typed.b == pytest.approx(measured.b, abs=1e-5)


def test_local_potential_needs_a_closed_one_form(flat_hkt4):
    X = non_homothetic_field(flat_hkt4)
    points = np.array([[0.5, 0.2, -0.1, 0.3], [0.1, 0.4, 0.2, -0.2]])
    with pytest.raises(PreconditionError, match='closed') as info:
        local_potential(X, flat_hkt4, points[0], points)
    assert info.value.residual > 0.1
    assert info.value.point == pytest.approx(tuple(points[0]))
