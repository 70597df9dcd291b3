import numpy as np
import pytest

from oracles import TrigScalar, conformal_connection, conformal_metric, conformal_ricci, fourier_mode
from riccilab.difference import (
    MetricPair,
    adjointness,
    bian,
    bianchi_one_form,
    connection_difference,
    operator_L,
    reformulation_triple,
    ricci_difference_residual,
)
from riccilab.errors import NonpositiveTime
from riccilab.geometry import MetricField
from riccilab.grid import Chart
from riccilab.verify import reformulation_fit, ricci_remainder_fit, sample_pair


def sampled(metric, N):
    chart = Chart.uniform(metric.dim, N)
    return MetricField(chart, metric.sample(chart))


def random_pair(seed, index, dim, N=32):
    m, mt = sample_pair(seed, index, dim)
    return MetricPair(sampled(m, N), sampled(mt, N))


def conformal_over_flat(dim, N, seed=0):
    u = TrigScalar.draw(np.random.default_rng(seed), dim)
    chart = Chart.uniform(dim, N)
    x = chart.coordinates()
    g = MetricField(chart, conformal_metric(u, x, dim))
    flat = MetricField(chart, np.broadcast_to(np.eye(dim), chart.shape + (dim, dim)))
    return MetricPair(g, flat), u, x


def flat_metric(dim, N):
    chart = Chart.uniform(dim, N)
    return MetricField(chart, np.broadcast_to(np.eye(dim), chart.shape + (dim, dim)))


# -- A and B ------------------------------------------------------------------------------


@pytest.mark.parametrize("c", [1.0, 3.0])
def test_constant_multiple_has_no_connection_difference(c):
    gt = sampled(sample_pair(1, 0, 3)[1], 16)
    pair = MetricPair(gt.with_components(c * gt.components), gt)
    scale = np.abs(gt.christoffel).max()
    assert np.abs(pair.A).max() <= 1e-13 * scale
    assert np.abs(pair.B).max() <= 1e-13 * c * scale
    if c == 1.0:
        assert np.all(pair.h == 0.0) and np.all(pair.B_from_h == 0.0)
        assert np.all(pair.L_h == 0.0)


@pytest.mark.parametrize("dim", [2, 3])
def test_conformal_connection_difference_converges(dim):
    errs = []
    for N in (32, 64):
        pair, u, x = conformal_over_flat(dim, N)
        errs.append(np.abs(pair.A - conformal_connection(u.grad(x))).max())
    assert 12.0 <= errs[0] / errs[1] <= 20.0


def test_conformal_bianchi_one_form():
    pair, u, x = conformal_over_flat(2, 32)
    assert np.abs(pair.B).max() <= 1e-13
    errs = []
    for N in (32, 64):
        pair, u, x = conformal_over_flat(3, N)
        # B = (2 - n) du for e^{2u} delta against the flat metric
        errs.append(np.abs(pair.B + u.grad(x)).max())
    assert 12.0 <= errs[0] / errs[1] <= 20.0


@pytest.mark.parametrize("dim", [2, 3])
def test_dual_routes_agree(dim):
    pair = random_pair(3, 0, dim)
    assert connection_difference(pair) is pair.A
    assert bianchi_one_form(pair) is pair.B


def test_bian_is_linear_and_vanishes_on_metric():
    g = sampled(sample_pair(2, 0, 2)[0], 32)
    rng = np.random.default_rng(0)
    V = rng.normal(size=g.components.shape)
    V = V + np.swapaxes(V, -1, -2)
    W = g.ricci
    G = g.christoffel
    assert np.allclose(bian(g, G, V - 2.5 * W), bian(g, G, V) - 2.5 * bian(g, G, W), atol=1e-9)
    assert np.abs(bian(g, G, g.components, g.dg)).max() <= 1e-13
    # contracted Bianchi identity up to the stencil error
    errs = [np.abs(bian(h, h.christoffel, h.ricci)).max()
            for h in (sampled(sample_pair(2, 0, 2)[0], N) for N in (32, 64))]
    assert errs[0] / errs[1] >= 12.0


# -- the operator L -------------------------------------------------------------------------


def test_L_on_fourier_mode_is_minus_wavenumber_squared():
    g = flat_metric(2, 64)
    pair = MetricPair(g, g)
    V, lam = fourier_mode(g.chart, (1, 2), [[1.0, 0.5], [0.5, -2.0]])
    out = operator_L(pair, V)
    assert np.abs(out - lam * V).max() <= 1e-4 * abs(lam) * np.abs(V).max()


def test_L_annihilates_reference_metric_and_is_linear():
    pair = random_pair(4, 0, 2)
    gt = pair.gt
    assert np.abs(pair.L(gt.components, gt.dg)).max() <= 1e-11
    rng = np.random.default_rng(1)
    V, W = (rng.normal(size=gt.components.shape) for _ in range(2))
    assert np.allclose(pair.L(V + 3 * W), pair.L(V) + 3 * pair.L(W), atol=1e-8)


def test_divergence_adjointness():
    pair = random_pair(5, 0, 2)
    x = pair.chart.coordinates()
    V = np.zeros(pair.h.shape)
    V[..., 0, 0] = np.cos(x[0] + x[1])
    V[..., 0, 1] = V[..., 1, 0] = np.sin(2 * x[1])
    W = np.stack([np.sin(x[0]), np.cos(x[0] - x[1])], axis=-1)
    assert adjointness(pair.gt, V, W).passed


# -- Ricci difference and the reformulation --------------------------------------------------


def test_ricci_difference_against_conformal_reference():
    pair, u, x = conformal_over_flat(3, 32, seed=2)
    ref = conformal_ricci(u.grad(x), u.hessian(x))
    rd = ricci_difference_residual(pair, reference=ref)
    assert rd.check.passed


def test_reformulation_of_identical_pair_is_zero():
    g = sampled(sample_pair(6, 0, 2)[0], 16)
    tri = reformulation_triple(MetricPair(g, g), 0.5, 0.5, 1.0)
    assert not tri.X.any() and not tri.nabla_X.any()
    # U and Y carry B = Bian(g, nabla~, g), which vanishes to roundoff
    assert np.abs(tri.U).max() <= 1e-14 and np.abs(tri.Y).max() <= 1e-14


def test_reformulation_scales_with_weight():
    pair = random_pair(6, 1, 2, N=16)
    one = reformulation_triple(pair, 0.3, 0.5, 1.0)
    two = reformulation_triple(pair, 0.3, 0.5, 4.0)
    assert np.allclose(two.Y, 4.0 * one.Y)
    assert np.array_equal(two.X, one.X) and np.array_equal(two.U, one.U)


def test_reformulation_rejects_nonpositive_time():
    pair = random_pair(6, 1, 2, N=16)
    with pytest.raises(NonpositiveTime):
        reformulation_triple(pair, 0.0, 0.5, 1.0)


def batches_of_pairs(seed, batches=5, per_batch=4):
    return [[random_pair(seed, b * per_batch + j, 2) for j in range(per_batch)] for b in range(batches)]


def test_fitted_constants_are_stable_across_batches():
    batches = batches_of_pairs(11)
    for fit in (ricci_remainder_fit(batches), reformulation_fit(batches)):
        assert fit.fitted > 0
        assert fit.stable, fit.to_dict()
