import math

import numpy as np
import pytest

from oracles import dirichlet_energy_of_mode
from riccilab.difference import MetricPair
from riccilab.errors import ToleranceExceeded, UnstableConstant
from riccilab.flow import WarpedProfile, bumpy_cylinder
from riccilab.geometry import MetricField
from riccilab.grid import Chart
from riccilab.verify import (
    ConstantFit,
    VerificationReport,
    b_evolution_negative_control,
    check_identities,
    fit_constant,
    ibp_residual,
    observed_order,
    perturbed_cylinder_batches,
    run_verification,
    sample_pair,
    sample_pairs,
    verify_bev,
    verify_gamma_dot,
    verify_ibp,
    verify_norm_evolution_bounds,
    verify_rc_difference,
    warped_b_evolution,
    warped_gamma_evolution,
)


# -- warped oracles ----------------------------------------------------------------------------


def test_proportional_cylinders_have_static_gauge():
    g, gt = WarpedProfile.cylinder(3, 32, 1.2), WarpedProfile.cylinder(3, 32, 1.0)
    lhs, terms = warped_b_evolution(g, gt)
    assert np.all(lhs == 0.0) and all(np.all(t == 0.0) for t in terms)
    lhs, rhs = warped_gamma_evolution(gt)
    assert np.all(lhs == 0.0) and np.all(rhs == 0.0)


def test_bumpy_pair_b_evolution_balances():
    gaps = []
    for N in (64, 128):
        lhs, terms = warped_b_evolution(bumpy_cylinder(3, N, amplitude=0.12), bumpy_cylinder(3, N))
        gaps.append(np.abs(lhs - sum(terms)).max())
    assert gaps[0] / gaps[1] >= 12.0


# -- identities on random pairs -------------------------------------------------------------------


def test_identical_pair_residuals_are_roundoff():
    m = sample_pair(21, 0, 2)[0]
    idents = ["connection-difference", "ricci-difference", "b-evolution"]
    for ident, res in check_identities(idents, m, m, 32).items():
        assert res.residual <= 1e-13, ident


def test_single_pair_verifiers():
    m, mt = sample_pair(22, 0, 2)
    assert verify_bev(m, mt, (32,)).passed
    assert verify_gamma_dot(mt, (32,)).passed
    assert verify_ibp(m, mt, (32,)).passed
    rep = verify_rc_difference(m, mt)
    assert rep.order >= 3.5 and rep.passed


def test_verifier_raises_when_tolerance_is_exceeded():
    m, mt = sample_pair(22, 1, 2)
    with pytest.raises(ToleranceExceeded):
        verify_bev(m, mt, (32,), corrupt=(0, 0.5))


def test_order_estimate_recovers_power_law():
    res = [(2 * math.pi / n) ** 4 * 3.0 for n in (32, 64, 128)]
    assert observed_order((32, 64, 128), res) == pytest.approx(4.0)
    assert observed_order((32, 64), res[:2]) is None


def test_report_requires_tolerance_and_order():
    rep = VerificationReport("bian-metric", 2, 1, [32, 64, 128],
                             {32: [1.0], 64: [0.5], 128: [0.25]},
                             {32: [2.0], 64: [2.0], 128: [2.0]}, {32: [1.0], 64: [1.0], 128: [1.0]})
    rep.order = observed_order(rep.resolutions, [1.0, 0.5, 0.25])
    assert rep.within_tolerance and not rep.passed
    rep.order = 4.0
    assert rep.passed
    rep.residuals[64] = [3.0]
    assert not rep.passed


def test_worker_count_does_not_change_results():
    pairs = sample_pairs(23, 3, 2)
    one = run_verification(["connection-difference", "integration-by-parts"], pairs, [32], threads=1)
    two = run_verification(["connection-difference", "integration-by-parts"], pairs, [32], threads=2)
    assert {k: v.to_dict() for k, v in one.items()} == {k: v.to_dict() for k, v in two.items()}


def test_negative_control_trips():
    m, mt = sample_pair(24, 0, 2)
    nc = b_evolution_negative_control(m, mt, 256)
    assert nc.clean.passed
    assert nc.tripped, nc.sensitivities


# -- integration by parts --------------------------------------------------------------------------


def linearized_flat_pair(h):
    """Flat g = g~ with a hand-set symmetric perturbation h whose Bianchi form vanishes."""
    chart = Chart.uniform(2, 64)
    flat = MetricField(chart, np.broadcast_to(np.eye(2), chart.shape + (2, 2)))
    pair = MetricPair(flat, flat)
    dh = chart.grad(h)
    pair.__dict__.update(h=h, dh=dh, nabla_t_h=dh, B=np.zeros(chart.shape + (2,)))
    pair.__dict__["L_h"] = pair.L(h, dh)
    return pair


def test_integration_by_parts_gives_dirichlet_energy():
    chart = Chart.uniform(2, 64)
    x = chart.coordinates()
    h = np.cos(x[0])[..., None, None] * np.eye(2)
    pair = linearized_flat_pair(h)
    one, zero = np.ones(chart.shape), np.zeros(chart.shape)
    grad0 = np.zeros(chart.shape + (2,))
    L, R, scale = ibp_residual(pair, one, zero, grad0, grad0)
    want = -dirichlet_energy_of_mode(chart, (1, 0), np.eye(2))
    assert want == pytest.approx(-4 * math.pi**2)
    assert L == pytest.approx(want, rel=1e-4)
    assert R == pytest.approx(L, rel=1e-12)


def test_integration_by_parts_of_zero_perturbation():
    m = sample_pair(25, 0, 2)[0]
    chart = Chart.uniform(2, 32)
    g = MetricField(chart, m.sample(chart))
    one, zero = np.ones(chart.shape), np.zeros(chart.shape)
    grad0 = np.zeros(chart.shape + (2,))
    assert ibp_residual(MetricPair(g, g), one, zero, grad0, grad0)[:2] == (0.0, 0.0)


# -- fitted constants --------------------------------------------------------------------------------


def batch(c):
    bound = np.linspace(0.1, 1.0, 10)
    return [(c * bound, bound)]


def test_fit_semantics():
    assert fit_constant("x", [batch(1.0), batch(1.1), batch(1.9)]).stable
    # batch B needs more than the 1.2x slack
    assert not fit_constant("x", [batch(1.0), batch(1.3), batch(1.0)]).stable
    # later batch drifts upward beyond 2x
    assert not fit_constant("x", [batch(1.0), batch(1.0), batch(2.5)]).stable
    # needing a smaller constant is consistent with the bound
    assert fit_constant("x", [batch(1.0), batch(0.2), batch(0.01)]).stable
    with pytest.raises(ValueError):
        fit_constant("x", [batch(1.0)])


def test_fit_ignores_insignificant_bound_points():
    bound = np.array([1.0, 1e-6])
    fit = fit_constant("x", [[(np.array([1.0, 1.0]), bound)]] * 2)
    assert fit.fitted == pytest.approx(1.0)


def test_fit_of_identical_trajectories_is_zero():
    p = bumpy_cylinder(2, 32)
    rows = [(0.1, p, p), (0.2, p, p)]
    rep = verify_norm_evolution_bounds([rows, rows], 0.5)
    assert rep.passed and rep.N0 == 0.0 and rep.C0 == 0.0
    assert isinstance(rep.fits["h-norm"], ConstantFit)


@pytest.fixture(scope="module")
def cylinder_batches():
    return perturbed_cylinder_batches(2, 64, seed=1)


def test_norm_evolution_constants_are_stable(cylinder_batches):
    rep = verify_norm_evolution_bounds(cylinder_batches, 0.5)
    assert rep.N0 > 0 and rep.C0 > 0


def test_dropping_the_gauge_term_destabilizes_the_fit(cylinder_batches):
    with pytest.raises(UnstableConstant):
        verify_norm_evolution_bounds(cylinder_batches, 0.5, drop_adjoint=True)
