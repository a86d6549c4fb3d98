import numpy as np
import pytest

from hktgeom.exceptions import DimensionDefectError, DomainError
from hktgeom.homothety import hkt_from_potential, measure_type
from hktgeom.jetcalc import Chart, dilation_field, function_field, sample_scale
from hktgeom.quatgeom import standard_triple
from hktgeom.quotient import (QuotientBuilder, dtau_type_check, instanton_check, invariance_check,
                              sigma_proportionality, signature_bookkeeping, trace_identity, weyl_minus)
from hktgeom.utils import max_abs, random_vectors, signature

pytestmark = pytest.mark.slow


@pytest.fixture
def builder(flat_hkt8, dilation8, chart8):
    homothety = measure_type(dilation8, flat_hkt8, chart8.sample(4))
    return QuotientBuilder(flat_hkt8, homothety)


@pytest.fixture
def samples(builder):
    return builder.samples(4, seed=1)


def _quartic(x):
    r = (x * x).sum() * 0.25
    return r * r


@pytest.fixture(scope='module')
def squared_quotient():
    chart = Chart.euclidean(8, (-1.0, 1.0), lambda p: float(p @ p) > 0.25, name='H2')
    points = chart.sample(4)
    hkt = hkt_from_potential(function_field(chart, '', _quartic, 'mu'), standard_triple(chart), points)
    homothety = measure_type(dilation_field(chart), hkt, points)
    builder = QuotientBuilder(hkt, homothety)
    return hkt, homothety, builder, builder.samples(4, seed=1)


def test_samples_sit_on_the_level_set(builder, samples):
    for sample in samples:
        assert float(builder.mu.value(sample.point)) == pytest.approx(1.0, abs=1e-12)
        for key, residual in sample.residuals.items():
            assert residual < 1e-8, key


def test_flat_quotient_is_torsion_free_and_definite(samples):
    for sample in samples:
        assert sample.dim == 4
        assert max_abs(sample.c_n) < 1e-10
        assert signature(sample.g_n) == (4, 0)


def test_curvature_metric_is_proportional(samples):
    ratio, spread = sigma_proportionality(samples, random_vectors(6, 4, 0))
    assert ratio == pytest.approx(-2.0, rel=1e-6)
    assert spread < 1e-6


def test_invariance_and_signature_bookkeeping(flat_hkt8, builder, samples):
    points = np.array([s.point for s in samples])
    assert invariance_check(flat_hkt8, builder.X, points) < 1e-9
    bookkeeping = signature_bookkeeping(flat_hkt8, samples, builder.X)
    assert bookkeeping['expected'] == (4, 0)
    assert bookkeeping['consistent']


def test_slice_is_a_self_dual_quotient(builder, samples):
    quotient_slice = builder.slice(samples[0].point)
    assert quotient_slice.chart.dim == 4
    points = quotient_slice.chart.sample(3, seed=2)
    for y in points:
        assert float(builder.mu.value(quotient_slice.ambient_point(y))) == pytest.approx(1.0, abs=1e-9)
        assert signature(quotient_slice.metric.value(y)) == (4, 0)
    assert weyl_minus(quotient_slice.metric, quotient_slice.fundamental_forms, points) < 1e-6


def test_unreachable_level_raises(flat_hkt8, dilation8, chart8):
    homothety = measure_type(dilation8, flat_hkt8, chart8.sample(4))
    with pytest.raises(DomainError):
        QuotientBuilder(flat_hkt8, homothety, level=-1.0).points(2)


def test_weyl_minus_needs_dimension_four(flat_hkt8, chart8):
    with pytest.raises(DimensionDefectError):
        weyl_minus(flat_hkt8.metric, [], chart8.sample(1))


def test_quotient_triple_anticommutes(samples):
    for sample in samples:
        I, J, K = sample.triple
        assert max_abs(J @ I + K) < 1e-8
        assert max_abs(K @ J + I) < 1e-8


def test_squared_potential_has_type_four_minus_two(squared_quotient):
    _, homothety, _, _ = squared_quotient
    assert homothety.a == pytest.approx(4.0, abs=1e-6)
    assert homothety.b == pytest.approx(-2.0, abs=1e-6)


def test_squared_quotient_carries_torsion(squared_quotient):
    hkt, _, _, samples = squared_quotient
    scale = sample_scale([hkt.metric], np.array([s.point for s in samples]))
    for sample in samples:
        assert max_abs(sample.c_n) > 1e-6
        assert max_abs(sample.tau[0]) > 1e-6
        assert sample.residuals['c_N type'] < 1e-7 * scale
        assert sample.residuals['tau I-independence'] < 1e-7 * scale
    kappa, residual = trace_identity(samples)
    assert kappa == pytest.approx(2.0, rel=1e-6)
    assert residual < 1e-6 * scale


def test_squared_quotient_is_an_instanton(squared_quotient):
    hkt, _, builder, samples = squared_quotient
    scale = sample_scale([hkt.metric], np.array([s.point for s in samples]))
    quotient_slice = builder.slice(samples[0].point)
    points = quotient_slice.chart.sample(3, seed=2)
    weyl = weyl_minus(quotient_slice.metric, quotient_slice.fundamental_forms, points)
    assert weyl < 1e-5 * scale
    for sample in samples:
        passed, _ = instanton_check(sample, 1e-7 * scale, weyl, 1e-5 * scale)
        assert passed
    assert max(dtau_type_check(quotient_slice, points).values()) < 1e-5 * scale
