"""Scenario drivers: each turns a :class:`ScenarioConfig` into a :class:`Report`."""
from __future__ import annotations

import math

import numpy as np

from . import plotting
from .config import ScenarioConfig
from .difference import MetricPair
from .energy import (
    build_cutoff_weight,
    combined_energy,
    combined_energy_direct,
    default_weight,
    ellipticity,
    energies,
    energy_series,
    gronwall_certificate,
    refinement_verdict,
    volume_growth_check,
)
from .errors import ConfigError
from .flow import (
    ExactFamily,
    FlowState,
    RoundSphere,
    WarpedProfile,
    bumpy_cylinder,
    curvature_rate_monitor,
    equivalence_ratio,
    flow_rhs_check,
    integrate,
    perturbed,
)
from .report import ENERGY_HEADER, Report
from .tolerances import tolerance
from .verify import (
    b_evolution_negative_control,
    perturbed_cylinder_batches,
    run_verification,
    sample_pairs,
    verify_norm_evolution_bounds,
)

# (resolution, sub-box fraction) at which a 1% term corruption is resolvable
NEGATIVE_CONTROL = {2: (256, None), 3: (256, 0.125)}
NEGATIVE_CONTROL_PAIRS = 3
COARSE_STEPS = (0.02, 0.01, 0.005)
ORDER_RATIO = {"rk4": (12.0, 20.0), "euler": (1.6, 2.4)}
RADIUS_LAW_TOL = 1e-6
MONITOR_RTOL = 0.01
C_AGREEMENT = 0.2
DELTA_SCALING = 0.1
SPECTRAL_TAIL_LIMIT = 1e-6
CONSISTENCY_TIMES = 10
# (points, dt) levels of the simultaneous space-time refinement; dt ~ dx^2 keeps rk4 stable
SPACE_TIME_LEVELS = ((32, 0.01), (64, 0.0025), (128, 0.000625))
MIN_SPACE_TIME_ORDER = 3.5
CERTIFICATE_START_STEPS = 4
MAX_ROWS = 100
# the norm-evolution fit protocol: grid points, horizon, time step, output stride
FIT_PROTOCOL = (64, 0.2, 1e-3, 20)


def _steps(span, dt, field="dt"):
    k = round(span / dt)
    if k < 1 or abs(k * dt - span) > 1e-9 * span:
        raise ConfigError(field, f"{dt} does not divide the time span {span}")
    return k


def _every(span, dt, rows=MAX_ROWS):
    """Output stride: the largest divisor of the step count giving at least ``rows`` samples."""
    k = _steps(span, dt)
    return max(d for d in range(1, max(1, k // rows) + 1) if k % d == 0)


# -- identity verification ------------------------------------------------------------


def _verification(cfg, rep, resolutions, samples, region, prefix):
    rows, labels, ratios = [], [], []
    curves = []
    for dim in cfg.dims:
        pairs = sample_pairs(cfg.seed, samples, dim)
        reports = run_verification(cfg.identities, pairs, resolutions, region)
        for ident, vr in reports.items():
            key = f"{ident}/n{dim}"
            worst = max(r / t for n in resolutions for r, t in zip(vr.residuals[n], vr.tolerances[n]))
            rep.check(key, vr.passed, worst_ratio=worst, order=vr.order, samples=vr.samples)
            rep.summary.setdefault("reports", {})[key] = vr.to_dict()
            for n in resolutions:
                for i, (res, tol, sc) in enumerate(zip(vr.residuals[n], vr.tolerances[n], vr.scales[n])):
                    rows.append((ident, dim, i, n, res, tol, sc))
            labels.append(key)
            ratios.append(worst)
            if len(resolutions) >= 3:
                dx = [2 * math.pi / n for n in resolutions]
                rel = [vr.worst(n) / max(max(vr.scales[n]), 1e-300) for n in resolutions]
                rep.series[f"order_{ident}_n{dim}"] = (dx, [vr.worst(n) for n in resolutions], ("dx", "worst_residual"))
                curves.append((dx, rel, key))
            else:
                n = resolutions[0]
                rep.series[f"residual_{ident}_n{dim}"] = (
                    list(range(samples)), vr.residuals[n], ("sample", "residual"))
    rep.tables[f"{prefix}"] = (("identity", "n", "sample", "N", "residual", "tolerance", "scale"), rows)
    rep.figures.append(plotting.bar_figure(
        f"{prefix}_ratios", labels, ratios, "worst residual / tolerance", reference=1.0))
    if curves:
        dx = curves[0][0]
        ref = [(d / dx[-1]) ** 4 * min(c[1][-1] for c in curves) for d in dx]
        rep.figures.append(plotting.line_figure(
            f"{prefix}_orders", curves + [(dx, ref, "dx^4")], "dx", "worst residual / scale",
            logx=True, logy=True))


def _negative_controls(cfg, rep):
    rows = []
    for dim in cfg.dims:
        N, region = NEGATIVE_CONTROL[dim]
        for i, (m, mt) in enumerate(sample_pairs(cfg.seed, min(NEGATIVE_CONTROL_PAIRS, cfg.samples), dim)):
            nc = b_evolution_negative_control(m, mt, N, region=region)
            sens = nc.sensitivities
            rep.check(f"negative-control/n{dim}/sample{i}", nc.clean.passed and nc.tripped,
                      N=N, region=region, clean_ratio=nc.clean.residual / nc.clean.tolerance,
                      sensitivities=sens)
            rows += [(dim, i, N, k + 1, s) for k, s in enumerate(sens)]
    rep.tables["negative_controls"] = (("n", "sample", "N", "term", "residual_over_tolerance"), rows)


def verify_identities(cfg: ScenarioConfig):
    rep = Report(cfg.scenario)
    _verification(cfg, rep, [cfg.points], cfg.samples, None, "verification")
    if cfg.negative_controls:
        _negative_controls(cfg, rep)
    return rep


def convergence_study(cfg: ScenarioConfig):
    rep = Report(cfg.scenario)
    samples = cfg.order_samples or cfg.samples
    _verification(cfg, rep, sorted(set(cfg.resolutions)), samples, cfg.order_region, "convergence")
    return rep


# -- flow -------------------------------------------------------------------------------


def _radius_squared(state):
    p = state.payload
    if isinstance(p, RoundSphere):
        return p.r**2
    return float(np.mean(p.psi)) ** 2


def _family(cfg):
    fam = ExactFamily(cfg.flow_family, cfg.r0, cfg.n)
    if cfg.horizon >= fam.extinction_time:
        raise ConfigError("t_end", f"must precede extinction at t = {fam.extinction_time:g}")
    return fam


def _equivalence(rep, traj, monitor):
    """g(t) stays within exp(2 int |Rc|) <= exp(2 K T^sigma / sigma) of g(0)."""
    ratio = equivalence_ratio(traj)
    T = float(traj.times[-1])
    bound = math.exp(2 * monitor.K_ricci * T**monitor.sigma / monitor.sigma)
    rep.check("uniform-equivalence", ratio <= bound * (1 + 1e-9), ratio=ratio, bound=bound)


def _flow_exact(cfg, rep):
    fam = _family(cfg)
    T = cfg.horizon
    points = 8 if fam.kind == "flat-static" else cfg.points
    traj = integrate(fam.initial_state(points), T, cfg.dt, cfg.scheme, _every(T, cfg.dt))
    if fam.kind == "flat-static":
        g0 = traj[0].payload.components
        drift = [float(np.abs(s.payload.components - g0).max()) for s in traj.states]
        rep.check("static-trajectory", max(drift) <= 1e-14, drift=max(drift))
        rep.tables["flow"] = (("t", "drift"), list(zip(traj.times.tolist(), drift)))
    else:
        num = [_radius_squared(s) for s in traj.states]
        exact = [fam.radius_squared(t) for t in traj.times]
        err = [abs(a - b) for a, b in zip(num, exact)]
        if cfg.scheme == "rk4":
            rep.check("radius-law", err[-1] <= RADIUS_LAW_TOL, error=err[-1], t=T, limit=RADIUS_LAW_TOL)
        rep.tables["flow"] = (("t", "r2_numeric", "r2_exact", "error"),
                              list(zip(traj.times.tolist(), num, exact, err)))
        coarse = []
        for dt in COARSE_STEPS:
            final = integrate(fam.initial_state(points), T, dt, cfg.scheme, _steps(T, dt)).final()
            coarse.append(abs(_radius_squared(final) - fam.radius_squared(T)))
        ratios = [a / b for a, b in zip(coarse, coarse[1:])]
        lo, hi = ORDER_RATIO[cfg.scheme]
        rep.check("scheme-order", all(lo <= q <= hi for q in ratios), steps=list(COARSE_STEPS),
                  errors=coarse, ratios=ratios, window=[lo, hi])
        rep.series["radius_error"] = (traj.times.tolist(), err, ("t", "abs_error"))
        rep.figures.append(plotting.line_figure(
            "flow_radius", [(traj.times, num, "rk4" if cfg.scheme == "rk4" else cfg.scheme),
                            (traj.times, exact, "closed form")], "t", "r^2"))
    rng = np.random.default_rng(cfg.seed or 0)
    worst = 0.0
    for t in np.sort(rng.uniform(0.0, T, CONSISTENCY_TIMES)):
        res, scale, dx = fam.consistency(float(t), points=points)
        worst = max(worst, res / tolerance("flow-rhs", dx, max(scale, 1e-300)))
    rep.check("exact-family-consistency", worst <= 1.0, worst_ratio=worst, times=CONSISTENCY_TIMES)
    _equivalence(rep, traj, curvature_rate_monitor(traj, cfg.sigma))


def _flow_profile(cfg, rep):
    T = cfg.horizon
    base = bumpy_cylinder(cfg.n, cfg.points)
    traj = integrate(FlowState(0.0, base), T, cfg.dt, cfg.scheme, _every(T, cfg.dt))
    for label, state in (("initial", traj[0]), ("final", traj.final())):
        chk = flow_rhs_check(state.payload, raise_on_fail=False)
        rep.check(f"flow-rhs/{label}", chk.passed, residual=chk.residual, tolerance=chk.tolerance)
    tails = [s.payload.spectral_tail() for s in traj.states]
    rep.check("spectral-decay", max(tails) <= SPECTRAL_TAIL_LIMIT, worst_tail=max(tails),
              limit=SPECTRAL_TAIL_LIMIT)
    rows = [(s.t, float(s.payload.psi.min()), float(s.payload.psi.max()), tail)
            for s, tail in zip(traj.states, tails)]
    rep.tables["flow"] = (("t", "psi_min", "psi_max", "spectral_tail"), rows)
    rep.figures.append(plotting.line_figure(
        "flow_profile", [(traj[0].payload.x, traj[0].payload.psi, "t = 0"),
                         (traj.final().payload.x, traj.final().payload.psi, f"t = {T:g}")],
        "x", "psi"))
    _equivalence(rep, traj, curvature_rate_monitor(traj, cfg.sigma))


def flow(cfg: ScenarioConfig):
    rep = Report(cfg.scenario)
    if cfg.flow_family == "bumpy-cylinder":
        _flow_profile(cfg, rep)
    else:
        _flow_exact(cfg, rep)
    return rep


# -- curvature-rate monitor ----------------------------------------------------------------


def closed_form_norms(fam: ExactFamily, t):
    """(|Rc|_g, |Rm|_g) of the exact family at time t."""
    n, r2 = fam.n, fam.radius_squared(t)
    if fam.kind == "shrinking-sphere":
        return (n - 1) * math.sqrt(n) / r2, math.sqrt(2 * n * (n - 1)) / r2
    if fam.kind == "shrinking-cylinder":
        k = n - 1
        return (k - 1) * math.sqrt(k) / r2, math.sqrt(2 * k * (k - 1)) / r2
    return 0.0, 0.0


def blowup_monitor(cfg: ScenarioConfig):
    rep = Report(cfg.scenario)
    T, sigma = cfg.horizon, cfg.sigma
    if cfg.flow_family == "bumpy-cylinder":
        traj = integrate(FlowState(0.0, bumpy_cylinder(cfg.n, cfg.points)), T, cfg.dt, cfg.scheme,
                         _every(T, cfg.dt))
        mon = curvature_rate_monitor(traj, sigma)
        rep.check("finite-rate", math.isfinite(mon.K), K=mon.K)
        closed = [math.nan] * len(mon.times)
    else:
        fam = _family(cfg)
        points = 8 if fam.kind == "flat-static" else cfg.points
        traj = integrate(fam.initial_state(points), T, cfg.dt, cfg.scheme, _every(T, cfg.dt))
        mon = curvature_rate_monitor(traj, sigma)
        dense = np.linspace(0.0, T, 20001)
        norms = np.array([closed_form_norms(fam, t) for t in dense])
        w = dense ** (1 - sigma)
        K_rc, K_rm = float(np.max(w * norms[:, 0])), float(np.max(w * norms[:, 1]))
        for name, got, want in (("K-ricci", mon.K_ricci, K_rc), ("K-riemann", mon.K_riemann, K_rm)):
            ok = abs(got - want) <= MONITOR_RTOL * want if want > 0 else got == 0.0
            rep.check(name, ok, monitor=got, closed_form=want, rtol=MONITOR_RTOL)
        closed = [t ** (1 - sigma) * closed_form_norms(fam, t)[0] for t in mon.times]
    rep.summary.update({"K": mon.K, "K_ricci": mon.K_ricci, "K_riemann": mon.K_riemann, "sigma": sigma})
    rep.tables["monitor"] = (("t", "ricci_rate", "riemann_rate", "ricci_rate_closed_form"),
                             list(zip(mon.times.tolist(), mon.ricci_rate.tolist(),
                                      mon.riemann_rate.tolist(), closed)))
    rep.series["ricci_rate"] = (mon.times.tolist(), mon.ricci_rate.tolist(), ("t", "ricci_rate"))
    rep.figures.append(plotting.line_figure(
        "monitor", [(mon.times, mon.ricci_rate, "t^(1-s) sup|Rc|"),
                    (mon.times, mon.riemann_rate, "t^(1-s) sup|Rm|")], "t", "rate"))
    _equivalence(rep, traj, mon)
    return rep


# -- energies ---------------------------------------------------------------------------------


def _base_profile(cfg, points=None):
    points = points or cfg.points
    if cfg.flow_family == "bumpy-cylinder":
        return bumpy_cylinder(cfg.n, points)
    return WarpedProfile.cylinder(cfg.n, points, cfg.r0)


def _energy_weight(cfg, rep):
    """The coefficient a: configured, or 8 N0 / sigma from the norm-evolution fit."""
    if cfg.a is not None:
        return cfg.a
    points, T, dt, every = FIT_PROTOCOL
    batches = perturbed_cylinder_batches(cfg.n, points, per_batch=cfg.fit_batch_size, dt=dt,
                                         t_end=T, every=every, seed=cfg.seed or 0)
    fit = verify_norm_evolution_bounds(batches, cfg.sigma, raise_on_fail=False)
    rep.check("norm-evolution-stable", fit.passed,
              drift={k: f.drift for k, f in fit.fits.items()}, N0=fit.N0, C0=fit.C0)
    rep.summary["norm_evolution"] = fit.to_dict()
    return default_weight(fit.N0, cfg.sigma) if fit.N0 > 0 else 1.0


def _cutoff(cfg, rep, base, ref):
    if cfg.r is None:
        return None, 0.0
    gbar = base.metric()
    x0 = (0,)
    samples = [s.payload.metric() for s in ref.states[:: max(1, len(ref) // 10)]]
    cw = build_cutoff_weight(gbar.chart, gbar, x0, cfg.r, cfg.l1, cfg.l2, cfg.gamma, gt_samples=samples)
    if cfg.horizon > cw.tau * (1 + 1e-12):
        raise ConfigError("t_end", f"{cfg.horizon} exceeds the weight's validity window {cw.tau:.6g}")
    rep.check("cutoff-invariants", True, **{k: v for k, v in cw.violations().items()},
              beta=cw.beta, tau=cw.tau, T_prime=cw.T_prime)
    vg = volume_growth_check(gbar, x0, cfg.r)
    rep.check("volume-growth", vg.passed, vbar=vg.vbar, N=vg.N, radii=vg.radii, volumes=vg.volumes)
    return cw, vg.vbar


def _pairs(traj_g, traj_gt):
    return [MetricPair(a.payload.metric(), b.payload.metric()) for a, b in zip(traj_g.states, traj_gt.states)]


def energy(cfg: ScenarioConfig):
    rep = Report(cfg.scenario)
    T, dt, sigma = cfg.horizon, cfg.dt, cfg.sigma
    _steps(T, CERTIFICATE_START_STEPS * dt)
    base = _base_profile(cfg)
    a = _energy_weight(cfg, rep)
    ref = integrate(FlowState(0.0, base), T, dt, cfg.scheme, CERTIFICATE_START_STEPS)
    cw, vbar = _cutoff(cfg, rep, base, ref)
    t0 = CERTIFICATE_START_STEPS * dt
    results = {}
    curves = []
    for delta in cfg.deltas:
        label = f"{delta:g}"
        start = perturbed(base, delta, np.random.default_rng(cfg.seed))
        traj = integrate(FlowState(0.0, start), T, dt, cfg.scheme, CERTIFICATE_START_STEPS)
        pairs = _pairs(traj, ref)
        er = energy_series(pairs, traj.times, sigma, a, cw, cfg.r)
        cert = gronwall_certificate(er, dt, ellipticity(pairs), cfg.r, vbar, t0=t0)
        er.certificate = cert
        E = er.E
        nonneg = bool(np.all(er.B >= 0) and np.all(er.H >= 0) and np.all(er.K >= 0))
        rep.check(f"nonnegative/delta={label}", nonneg)
        gap = 0.0
        for p, t, e in zip(pairs, er.times, E):
            if t > 0:
                direct = combined_energy_direct(p, cw, t, sigma, a)
                gap = max(gap, abs(e - direct) / max(abs(direct), 1e-300))
        rep.check(f"additivity/delta={label}", gap <= 1e-12, relative_gap=gap)
        rep.check(f"gronwall/delta={label}", cert.passed, **cert.summary())
        rows = [r for r in er.rows() if r[0] > 0]
        rep.tables[f"energy_delta_{label}"] = (ENERGY_HEADER, rows)
        i0 = int(np.argmin(np.abs(er.times - t0)))
        results[delta] = {"C": cert.C, "E_t0": float(E[i0]), "t0": float(er.times[i0]),
                          "certificate": cert.summary()}
        rep.series[f"energy_delta_{label}"] = ([r[0] for r in rows], [r[4] for r in rows], ("t", "E_r"))
        if any(r[4] > 0 for r in rows):
            curves.append(([r[0] for r in rows], [r[4] for r in rows], f"delta = {label}"))
    rep.summary.update({"a": a, "sigma": sigma, "r": cfg.r, "deltas": {f"{d:g}": v for d, v in results.items()}})
    live = [d for d in cfg.deltas if d > 0]
    for d1, d2 in zip(live, live[1:]):
        c1, c2 = results[d1]["C"], results[d2]["C"]
        rel = abs(c1 - c2) / max(abs(c1), abs(c2), 1e-300)
        rep.check(f"C-agreement/{d1:g}-{d2:g}", rel <= C_AGREEMENT, C=[c1, c2], relative=rel)
        ratio = (results[d1]["E_t0"] / results[d2]["E_t0"]) / (d1 / d2) ** 2
        rep.check(f"delta-squared/{d1:g}-{d2:g}", abs(ratio - 1) <= DELTA_SCALING, normalized_ratio=ratio)
    if curves:
        rep.figures.append(plotting.line_figure("energy", curves, "t", "E_r", logy=True))
    return rep


# -- uniqueness ------------------------------------------------------------------------------


def _final_energy(cfg, a, coarse, fine):
    B, H, _ = energies(MetricPair(coarse.metric(), fine.metric()))
    return combined_energy(B, H, cfg.horizon, cfg.sigma, a)


def uniqueness(cfg: ScenarioConfig):
    rep = Report(cfg.scenario)
    T = cfg.horizon
    base = _base_profile(cfg)
    a = _energy_weight(cfg, rep)

    values = []
    for dt in cfg.steps:
        k = _steps(T, dt, "steps")
        coarse = integrate(FlowState(0.0, base), T, dt, cfg.scheme, k).final().payload
        fine = integrate(FlowState(0.0, base), T, dt / 2, cfg.scheme, 2 * k).final().payload
        values.append(_final_energy(cfg, a, coarse, fine))
    verdict = refinement_verdict(cfg.steps, values)
    rep.check("time-refinement", verdict.passed, ratios=verdict.ratios, order=verdict.order,
              extrapolated=verdict.extrapolated, min_ratio=verdict.min_ratio, min_order=verdict.min_order,
              sqrt_order=verdict.order / 2)
    rep.tables["uniqueness"] = (("dt", "E_r"), list(zip(cfg.steps, values)))
    rep.series["uniqueness"] = (list(cfg.steps), values, ("dt", "E_r"))

    # space-time refinement: the coarse solution against the fine one sampled on the coarse grid
    st = []
    for points, dt in SPACE_TIME_LEVELS:
        coarse = integrate(FlowState(0.0, _base_profile(cfg, points)), T, dt, cfg.scheme,
                           _steps(T, dt)).final().payload
        fine = integrate(FlowState(0.0, _base_profile(cfg, 2 * points)), T, dt / 4, cfg.scheme,
                         _steps(T, dt / 4)).final().payload
        sub = WarpedProfile(fine.n, fine.phi[::2], fine.psi[::2], fine.period)
        st.append(_final_energy(cfg, a, coarse, sub))
    dx = [base.period / p for p, _ in SPACE_TIME_LEVELS]
    pos = [(x, v) for x, v in zip(dx, st) if v > 0]
    order = (float(np.polyfit(np.log([x for x, _ in pos]), 0.5 * np.log([v for _, v in pos]), 1)[0])
             if len(pos) >= 2 else math.inf)
    rep.check("space-time-refinement", order >= MIN_SPACE_TIME_ORDER, dx=dx, values=st,
              sqrt_E_order=order, minimum=MIN_SPACE_TIME_ORDER)

    # identical initial data integrated identically gives E_r = 0 at every sample
    dt = cfg.steps[0]
    one = integrate(FlowState(0.0, base), T, dt, cfg.scheme)
    two = integrate(FlowState(0.0, base), T, dt, cfg.scheme)
    er = energy_series(_pairs(one, two), one.times, cfg.sigma, a)
    zero = bool(np.all(er.B == 0) and np.all(er.H == 0) and np.all(er.K == 0))
    rep.check("identical-pair", zero, samples=len(one))

    rep.summary.update({"a": a, "sigma": cfg.sigma, "t_end": T, "values": values,
                        "space_time_values": st})
    rep.figures.append(plotting.line_figure(
        "uniqueness", [(list(cfg.steps), values, "E_r(t_end)")], "dt", "E_r", logx=True, logy=True))
    return rep


SCENARIO_RUNNERS = {
    "verify-identities": verify_identities,
    "convergence-study": convergence_study,
    "flow": flow,
    "blowup-monitor": blowup_monitor,
    "energy": energy,
    "uniqueness": uniqueness,
}


def run_scenario(cfg: ScenarioConfig):
    """Run one scenario and return its :class:`Report`."""
    return SCENARIO_RUNNERS[cfg.scenario](cfg)
