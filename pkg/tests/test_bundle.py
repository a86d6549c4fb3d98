import numpy as np
import pytest

from hktgeom.bundle import (BundleChart, ConformalChange, bundle_identity_residuals, bundle_parameter_change,
                            expected_bundle_signature, fiber_names, flat_base, hkt_on_UN, horizontal_scaling_residual,
                            instanton_residual, local_positive_qkt, quaternionic_hyperbolic_line,
                            quaternionic_projective_line, rotated_chart_data, sigma_sum_formula, volume_density,
                            volume_residual)
from hktgeom.exceptions import DefinitenessError, DomainError, PreconditionError
from hktgeom.homothety import TransformSpec, is_definite
from hktgeom.jetcalc import Chart, function_field, levi_civita, riemann_curvature, sample_scale
from hktgeom.quatgeom import verify_hkt
from hktgeom.utils import least_squares_ratio, max_abs, random_rotation, signature

pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def hp1():
    return quaternionic_projective_line()


@pytest.fixture(scope='module')
def hp1_bundle(hp1):
    points = BundleChart(hp1).sample(4, seed=0)
    return hkt_on_UN(hp1, points, hp1.chart.sample(4)), points


def test_omega_extraction_and_equivariance(hp1):
    points = hp1.chart.sample(4)
    omega = hp1.omega
    rotation = random_rotation(2)
    rotated = rotated_chart_data(hp1, rotation).omega
    for y in points:
        assert omega.extraction_residual(y) < 1e-10
        np.testing.assert_allclose(rotated.value(y)[1:], rotation @ omega.value(y)[1:], atol=1e-10)


def test_projective_line_curvature_metric(hp1):
    for y in hp1.chart.sample(3):
        np.testing.assert_allclose(hp1.curvature_metric.value(y), 4.0 * hp1.metric.value(y), atol=1e-9)
    assert instanton_residual(hp1, hp1.chart.sample(3)) < 1e-9


def test_sigma_sum_formula_is_proportional(hp1):
    points = hp1.chart.sample(3)
    sums = [sigma_sum_formula(hp1, y) for y in points]
    sigmas = [hp1.curvature_metric.value(y) for y in points]
    ratio = least_squares_ratio(sums, sigmas)
    assert ratio != 0
    assert max(max_abs(s - ratio * t) for s, t in zip(sums, sigmas)) < 1e-6 * max(max_abs(s) for s in sums)


def test_bundle_over_projective_line(hp1_bundle):
    result, points = hp1_bundle
    scale = sample_scale([result.hkt.metric], points)
    assert (result.homothety.a, result.homothety.b) == pytest.approx((2.0, -2.0), abs=1e-6)
    assert result.sigma_signature == (4, 0)
    assert result.signature == (8, 0)
    assert expected_bundle_signature(result.sigma_signature, result.homothety.alpha) == (8, 0)
    residuals = verify_hkt(result.hkt, points)
    for key in ('quaternion_identities', 'torsion_agreement', 'nabla_I', 'nabla_J', 'nabla_K'):
        assert residuals[key] < 1e-7 * scale, key


def test_bundle_over_projective_line_is_flat(hp1_bundle):
    result, points = hp1_bundle
    curvature = riemann_curvature(levi_civita(result.hkt.metric))
    scale = sample_scale([result.hkt.metric], points)
    assert max_abs(curvature.value(points[0])) < 1e-5 * scale


def test_bundle_identities(hp1_bundle):
    result, points = hp1_bundle
    scale = sample_scale([result.hkt.metric], points)
    for label, residual in bundle_identity_residuals(result.bundle, points).items():
        assert residual < 1e-7 * scale, label
    assert horizontal_scaling_residual(result.bundle, points) < 1e-7


def test_hyperbolic_line_becomes_definite_after_power_change():
    hh1 = quaternionic_hyperbolic_line()
    points = BundleChart(hh1).sample(4, seed=0)
    result = hkt_on_UN(hh1, points, hh1.chart.sample(4))
    assert result.sigma_signature == (0, 4)
    assert result.signature == (4, 4)
    transformed, measured = bundle_parameter_change(result, TransformSpec.power(-2.0), points)
    assert measured.alpha == pytest.approx(1.0, abs=1e-5)
    assert signature(transformed.metric.value(points[0])) == expected_bundle_signature((0, 4), measured.alpha)
    assert is_definite(transformed.metric, points)


def test_hyperbolic_chart_must_stay_in_the_ball():
    with pytest.raises(DomainError):
        quaternionic_hyperbolic_line(Chart.euclidean(4, (-1.0, 1.0), prefix='z'))


def test_degenerate_curvature_metric_is_rejected():
    flat = flat_base(Chart.euclidean(4, (-0.5, 0.5), prefix='z'))
    with pytest.raises(PreconditionError):
        hkt_on_UN(flat, BundleChart(flat).sample(2), flat.chart.sample(2))


def test_conformal_change_residuals(hp1):
    u = function_field(hp1.chart, '', lambda z: z[0] * 0.3 + z[1] * z[2] * 0.2, 'u')
    change = ConformalChange(hp1, u)
    points = hp1.chart.sample(3)
    scale = sample_scale([hp1.metric, change.metric], points)
    for label, residual in change.residuals(points).items():
        assert residual < 1e-6 * scale, label
    assert instanton_residual(change.changed, points) < 1e-7 * scale


def test_volume_density_is_parallel_for_levi_civita(hp1):
    points = hp1.chart.sample(3)
    density = volume_density(hp1.metric)
    for y in points:
        assert float(density.value(y)) == pytest.approx((1.0 + y @ y) ** -4)
    assert volume_residual(hp1.connection, density, points) < 1e-10


def test_local_positive_structure_on_flat_chart():
    base = flat_base(Chart.euclidean(4, (-0.2, 0.2), prefix='z'))
    points = base.chart.sample(6)
    result = local_positive_qkt(base, volume_density(base.metric), np.zeros(4), points)
    assert result.attempts > 1
    assert result.coefficient != 0
    for y in points:
        assert signature(result.data.metric.value(y)) == (4, 0)
    assert result.volume_residual < 1e-9


def test_zero_potential_on_flat_chart_is_not_positive():
    base = flat_base(Chart.euclidean(4, (-0.2, 0.2), prefix='z'))
    zero = function_field(base.chart, '', lambda z: z[0] * 0.0, 'zero')
    with pytest.raises(DefinitenessError):
        local_positive_qkt(base, volume_density(base.metric), np.zeros(4), base.chart.sample(3), zero)


def test_fiber_coordinates_avoid_base_names():
    base = quaternionic_projective_line(Chart.euclidean(4, (-1.0, 1.0), name='HP1'))
    chart = BundleChart(base).chart
    assert chart.coord_names == ('h0', 'h1', 'h2', 'h3', 'x0', 'x1', 'x2', 'x3')
    assert fiber_names(('h0', 'h1', 'y0', 'y1')) == ("h'0", "h'1", "h'2", "h'3")
