import math

import numpy as np
import pytest

from oracles import einstein_ricci_norm
from riccilab.difference import MetricPair
from riccilab.errors import ExtinctionReached
from riccilab.flow import (
    ExactFamily,
    FlowState,
    WarpedProfile,
    bumpy_cylinder,
    curvature_norms,
    curvature_rate_monitor,
    equivalence_ratio,
    euler_family_derivative,
    flow_rhs_check,
    integrate,
    profile_rhs,
    sphere_radius_rhs,
)
from riccilab.geometry import MetricField
from riccilab.grid import Chart
from riccilab.tensors import TensorField, load, save
from riccilab.tolerances import tolerance
from riccilab.verify import sample_pair


def radius_error(kind, dt, scheme="rk4", n=3, T=0.2):
    fam = ExactFamily(kind, 1.0, n)
    final = integrate(fam.initial_state(32), T, dt, scheme, round(T / dt)).final()
    p = final.payload
    r2 = p.r**2 if kind == "shrinking-sphere" else float(np.mean(p.psi)) ** 2
    return abs(r2 - fam.radius_squared(T))


# -- right-hand side -----------------------------------------------------------------------


def test_flat_cylinder_is_static():
    dphi, dpsi = profile_rhs(WarpedProfile.cylinder(2, 32, 1.3))
    assert np.all(dphi == 0.0) and np.all(dpsi == 0.0)


def test_round_cylinder_shrinks_by_fiber_curvature():
    dphi, dpsi = profile_rhs(WarpedProfile.cylinder(3, 32, 0.8))
    assert np.allclose(dphi, 0.0, atol=1e-13)
    assert np.allclose(dpsi, -1.0 / 0.8, rtol=1e-13)


@pytest.mark.parametrize("n", [2, 3])
def test_sphere_radius_rate(n):
    assert sphere_radius_rhs(0.5, n) == pytest.approx(-(n - 1) / 0.5)


@pytest.mark.parametrize("n", [2, 3])
def test_bumpy_profile_matches_warped_formulas(n):
    assert flow_rhs_check(bumpy_cylinder(n, 64)).passed


def volume_rate(metric):
    d = euler_family_derivative((metric,), lambda m: m.volume())
    return d, -metric.chart.integrate(metric.scalar * metric.volume_density)


def test_volume_rate_is_minus_total_scalar_curvature():
    m = sample_pair(8, 0, 2)[0]
    chart = Chart.uniform(2, 64)
    d, ref = volume_rate(MetricField(chart, m.sample(chart)))
    assert d == pytest.approx(ref, rel=1e-6, abs=1e-9)
    d, ref = volume_rate(WarpedProfile.cylinder(3, 32).metric())
    # Vol = 2 pi * 4 pi psi^2 and dVol/dt = -16 pi^2
    assert ref == pytest.approx(-16 * math.pi**2, rel=1e-12)
    assert d == pytest.approx(ref, rel=1e-9)


def test_euler_family_of_constant_functional_is_zero():
    g = bumpy_cylinder(3, 32).metric()
    assert euler_family_derivative((g,), lambda m: 2.0) == 0.0


def test_euler_family_error_is_second_order_in_eps():
    m, mt = sample_pair(5, 0, 2)
    chart = Chart.uniform(2, 64)
    fields = (MetricField(chart, m.sample(chart)), MetricField(chart, mt.sample(chart)))
    vals = [euler_family_derivative(fields, lambda a, b: MetricPair(a, b).B, eps)
            for eps in (0.16, 0.08, 0.04, 0.02)]
    diffs = [np.abs(a - b).max() for a, b in zip(vals, vals[1:])]
    for coarse, fine in zip(diffs, diffs[1:]):
        assert coarse / fine == pytest.approx(4.0, rel=0.05)


# -- exact families ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["shrinking-sphere", "shrinking-cylinder"])
def test_radius_law_and_rk4_order(kind):
    assert radius_error(kind, 1e-3) <= 1e-6
    errs = [radius_error(kind, dt) for dt in (0.02, 0.01, 0.005)]
    for coarse, fine in zip(errs, errs[1:]):
        assert 12.0 <= coarse / fine <= 20.0


def test_euler_is_first_order():
    errs = [radius_error("shrinking-sphere", dt, "euler") for dt in (0.02, 0.01, 0.005)]
    for coarse, fine in zip(errs, errs[1:]):
        assert 1.6 <= coarse / fine <= 2.4


def test_flat_family_stays_put():
    fam = ExactFamily("flat-static", n=2)
    traj = integrate(fam.initial_state(8), 0.1, 0.01)
    assert np.array_equal(traj.final().payload.components, traj[0].payload.components)


def test_extinction_is_reported_with_last_time():
    fam = ExactFamily("shrinking-sphere", 1.0, 3)
    with pytest.raises(ExtinctionReached) as info:
        integrate(fam.initial_state(), 0.3, 1e-3)
    assert 0.24 < info.value.last_time <= fam.extinction_time + 1e-3


@pytest.mark.parametrize("kind", ["shrinking-sphere", "shrinking-cylinder"])
def test_closed_forms_solve_the_flow(kind):
    fam = ExactFamily(kind, 1.0, 3)
    for t in np.linspace(0.0, 0.2, 10):
        res, scale, dx = fam.consistency(float(t))
        assert res <= tolerance("flow-rhs", dx, scale)


# -- monitor --------------------------------------------------------------------------------------


def test_monitor_on_flat_metric_is_zero():
    traj = integrate(ExactFamily("flat-static", n=2).initial_state(8), 0.1, 0.01)
    assert curvature_rate_monitor(traj, 0.5).K == 0.0


def test_monitor_matches_sphere_closed_form():
    fam = ExactFamily("shrinking-sphere", 1.0, 3)
    traj = integrate(fam.initial_state(), 0.2, 1e-3, output_every=10)
    mon = curvature_rate_monitor(traj, 0.5)
    t = np.linspace(0, 0.2, 20001)
    want = np.max(np.sqrt(t) * einstein_ricci_norm(3, 1.0) / (1 - 4 * t))
    assert mon.K_ricci == pytest.approx(want, rel=0.01)
    rc, rm = curvature_norms(traj[0])
    assert rc == pytest.approx(einstein_ricci_norm(3, 1.0), rel=1e-5)
    assert rm == pytest.approx(math.sqrt(12.0), rel=1e-5)


def test_monitor_grows_toward_extinction():
    fam = ExactFamily("shrinking-sphere", 1.0, 3)
    traj = integrate(fam.initial_state(), 0.24, 1e-3, output_every=40)
    rate = curvature_rate_monitor(traj, 0.5).ricci_rate
    assert np.all(np.diff(rate) > 0)
    assert rate[-1] > 10 * rate[1]


def test_monitor_rejects_sigma_outside_unit_interval():
    traj = integrate(ExactFamily("flat-static", n=2).initial_state(8), 0.01, 0.01)
    with pytest.raises(ValueError):
        curvature_rate_monitor(traj, 1.0)


def test_uniform_equivalence_bound():
    traj = integrate(FlowState(0.0, bumpy_cylinder(3, 32)), 0.2, 1e-3, output_every=20)
    mon = curvature_rate_monitor(traj, 0.5)
    ratio = equivalence_ratio(traj)
    assert 1.0 < ratio <= math.exp(2 * mon.K_ricci * 0.2**0.5 / 0.5)


def test_checkpoint_carries_time(tmp_path):
    traj = integrate(FlowState(0.0, bumpy_cylinder(2, 16)), 0.01, 1e-3, output_every=5)
    state = traj.final()
    g = state.metric()
    path = tmp_path / "state.rltf"
    save(path, TensorField(g.chart, g.components, "ll"), time=state.t)
    back, t = load(path)
    assert t == pytest.approx(0.01)
    assert np.array_equal(back.components, g.components)
