"""Randomized, convergence-tracked verification of the exact identities.

Every identity is checked with two independent routes wherever the purely
finite-difference evaluation would be exact to roundoff (the stencil is
linear, so many identities hold algebraically on the grid).  The reference
side then uses closed-form derivatives of a :class:`TrigMetric`, which makes
the residual a genuine O(dx^4) discretization error whose order can be
measured under refinement.

Identity ids:

``connection-difference``  A from the nabla~-formula vs Gamma - Gamma~
``bian-metric``            Bian(g, nabla, g) = 0
``bian-ricci``             Bian(g, nabla, Rc) = 0
``ricci-difference``       Rc - Rc~ as derivatives of A
``b-evolution``            time derivative of the Bianchi one-form
``gamma-evolution``        time derivative of Gamma~
``integration-by-parts``   the weighted integration-by-parts display
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .analytic import ExactGeometry, TrigMetric, random_pair
from .contract import contract
from .difference import MetricPair, adjoint_divergence, bian, divergence
from .errors import ToleranceExceeded, UnstableConstant
from .flow import (
    FlowState,
    bumpy_cylinder,
    embedded_row,
    euler_family_derivative,
    integrate,
    perturbed,
)
from .geometry import MetricField, covariant_derivative, inner, norm, norm2
from .grid import Chart, blocks
from .tolerances import tolerance

IDENTITIES = (
    "connection-difference",
    "bian-metric",
    "bian-ricci",
    "ricci-difference",
    "b-evolution",
    "gamma-evolution",
    "integration-by-parts",
)
HALO = {
    "connection-difference": 2,
    "bian-metric": 2,
    "bian-ricci": 6,
    "ricci-difference": 4,
    "b-evolution": 2,
    "gamma-evolution": 2,
    "integration-by-parts": 4,
}
JET_ORDER = {"b-evolution": 3, "gamma-evolution": 3}
MAX_BLOCK_POINTS = 1 << 17
MIN_ORDER = 3.5
HOLDOUT_SLACK = 1.2
STABILITY_FACTOR = 2.0
# points where a bound is below this fraction of its sample maximum do not constrain a fit
SIGNIFICANCE_FLOOR = 1e-3


# -- right-hand sides with explicit terms ----------------------------------------------


def nabla_ricci(geom, gamma=None):
    """nabla_a Rc_ij of ``geom`` (w.r.t. ``gamma``, default its own connection)."""
    gamma = geom.christoffel if gamma is None else gamma
    return covariant_derivative(geom.chart, gamma, geom.ricci, "ll", geom.dricci)


def b_evolution_terms(pair: MetricPair, drc_t=None):
    """The three terms of the evolution law of B (free index k last)."""
    g, gt = pair.g, pair.gt
    gi, gti = g.inverse, gt.inverse
    B, Dh = pair.B, pair.nabla_t_h
    drc_t = nabla_ricci(gt) if drc_t is None else drc_t
    t1 = -2.0 * contract("...kp,...pq,...q->...k", g.ricci, gi, B)
    inner_h = Dh - 0.5 * contract("...kml->...mlk", Dh)
    t2 = 2.0 * contract("...ma,...lb,...ab,...mlk->...k", gi, gi, g.ricci, inner_h)
    inner_rc = drc_t - 0.5 * contract("...slm->...mls", drc_t)
    t3 = -2.0 * contract(
        "...pk,...mc,...ld,...ps,...cd,...mls->...k", g.components, gi, gti, gti, pair.h, inner_rc
    )
    return t1, t2, t3


def gamma_evolution_rhs(gt, drc_t=None):
    """gt^{pq} (nabla_q Rc_ml - nabla_m Rc_lq - nabla_l Rc_mq), layout [p, m, l]."""
    D = nabla_ricci(gt) if drc_t is None else drc_t
    comb = D - contract("...mlq->...qml", D) - contract("...lmq->...qml", D)
    return contract("...pq,...qml->...pml", gt.inverse, comb)


def ibp_terms(pair: MetricPair, theta, eta, dtheta, deta):
    """Integrand densities (without the volume element) of both sides.

    Returns ``(lhs, [rhs terms])`` where the rhs terms already carry their
    signs and weights.
    """
    gt = pair.gt
    h, B, Dh = pair.h, pair.B, pair.nabla_t_h
    w = theta * np.exp(-eta)
    e = np.exp(-eta)
    gi = pair.g.inverse
    lhs = inner(gt, pair.L_h - 2.0 * adjoint_divergence(gt, B), h, "ll") * w

    def grad_pairing(df):
        # g^{ij} d_i f <nabla~_j h, h>
        Dh_h = contract("...jab,...ac,...bd,...cd->...j", Dh, gt.inverse, gt.inverse, h)
        return contract("...ij,...i,...j->...", gi, df, Dh_h)

    def h_vec(df):
        # h(nabla~ f, B#) = h_ab gt^{ai} d_i f gt^{bj} B_j
        return contract("...ab,...ai,...i,...bj,...j->...", h, gt.inverse, df, gt.inverse, B)

    dirichlet = contract("...ij,...iab,...jcd,...ac,...bd->...", gi, Dh, Dh, gt.inverse, gt.inverse)
    rhs = [
        -dirichlet * w,
        -2.0 * inner(gt, divergence(gt, h, pair.dh), B, "l") * w,
        grad_pairing(deta) * w,
        -2.0 * h_vec(deta) * w,
        -grad_pairing(dtheta) * e,
        2.0 * h_vec(dtheta) * e,
    ]
    return lhs, rhs


BUMP_POWER = 8


def _bump(s, lo, hi):
    """cos^p bump supported on (lo, hi) and its derivative."""
    u = (2.0 * s - lo - hi) / (hi - lo)
    inside = np.abs(u) < 1
    c = np.where(inside, np.cos(0.5 * np.pi * u), 0.0)
    sn = np.where(inside, np.sin(0.5 * np.pi * u), 0.0)
    val = c**BUMP_POWER
    der = -BUMP_POWER * c ** (BUMP_POWER - 1) * sn * (np.pi / (hi - lo))
    return val, der


@dataclass(frozen=True)
class SmoothWeights:
    """Analytic cutoff-like and weight-like fields for the randomized IBP check.

    With ``box = (lo, hi)`` the cutoff is multiplied by a compactly supported
    bump in each of the two leading coordinates, so the identity also holds
    on the corresponding sub-box of the torus.
    """

    theta_amp: float = 0.3
    eta_amp: float = 0.4
    box: tuple | None = None

    def fields(self, chart):
        x = chart.coordinates()
        n = chart.dim
        s = sum(x[a] for a in range(n))
        c = sum(np.cos(x[a]) for a in range(n))
        theta = 0.6 + self.theta_amp * np.sin(s)
        eta = 0.5 + self.eta_amp * c
        dtheta = np.stack([self.theta_amp * np.cos(s)] * n, axis=-1)
        deta = np.stack([-self.eta_amp * np.sin(x[a]) for a in range(n)], axis=-1)
        if self.box is not None:
            lo, hi = self.box
            axes = range(min(2, n))
            bumps = [_bump(x[a], lo, hi) for a in axes]
            cut = np.prod([b[0] for b in bumps], axis=0)
            dcut = np.zeros_like(dtheta)
            for a in axes:
                others = np.prod([bumps[b][0] for b in axes if b != a], axis=0)
                dcut[..., a] = bumps[a][1] * others
            dtheta = dtheta * cut[..., None] + theta[..., None] * dcut
            theta = theta * cut
        return theta, eta, dtheta, deta


# -- per-window evaluation ------------------------------------------------------------


class WindowContext:
    """Closed-form and stencil geometry of one pair on one chart window, built lazily."""

    def __init__(self, metric, metric_t, chart, jet_order=2):
        self.metric, self.metric_t, self.chart = metric, metric_t, chart
        self.jet_order = jet_order

    @cached_property
    def ex(self):
        return ExactGeometry(self.chart, self.metric, self.jet_order)

    @cached_property
    def ext(self):
        return ExactGeometry(self.chart, self.metric_t, self.jet_order)

    @cached_property
    def g(self):
        return MetricField(self.chart, self.ex.components)

    @cached_property
    def gt(self):
        return MetricField(self.chart, self.ext.components)

    @cached_property
    def fd_pair(self):
        return MetricPair(self.g, self.gt)

    @cached_property
    def exact_pair(self):
        return MetricPair(self.ex, self.ext)


def evaluate_window(identity, ctx: WindowContext, eps=None, weights=SmoothWeights(), corrupt=None):
    """Residual field and term fields of one identity on a chart window.

    For ``integration-by-parts`` the return value holds integrand densities.
    ``corrupt`` = (term index, relative factor) perturbs one right-hand term
    of the B-evolution law (negative control).
    """
    chart = ctx.chart
    if identity == "connection-difference":
        A = ctx.fd_pair.A
        ref = ctx.ex.christoffel - ctx.ext.christoffel
        return A - ref, [A, ref]
    if identity == "bian-metric":
        g = ctx.g
        return bian(g, ctx.ex.christoffel, g.components), [g.dg]
    if identity == "bian-ricci":
        g = ctx.g
        D = covariant_derivative(chart, g.christoffel, g.ricci, "ll")
        a = contract("...ij,...ijk->...k", g.inverse, D)
        b = 0.5 * contract("...ij,...kij->...k", g.inverse, D)
        return a - b, [a, b]
    if identity == "ricci-difference":
        terms = ctx.fd_pair.ricci_difference_terms()
        ref = ctx.ex.ricci - ctx.ext.ricci
        return ref - sum(terms), [ref, *terms]
    if identity == "b-evolution":
        eps = chart.min_spacing**2 if eps is None else eps
        fields = _perturbable(ctx.ex, ctx.ext)
        lhs = euler_family_derivative(fields, lambda a, b: MetricPair(a, b).B, eps)
        terms = list(b_evolution_terms(ctx.exact_pair))
        if corrupt is not None:
            k, factor = corrupt
            terms[k] = terms[k] * (1.0 + factor)
        return lhs - sum(terms), [lhs, *terms]
    if identity == "gamma-evolution":
        eps = chart.min_spacing**2 if eps is None else eps
        lhs = euler_family_derivative(_perturbable(ctx.ext), lambda a: a.christoffel, eps)
        rhs = gamma_evolution_rhs(ctx.ext)
        return lhs - rhs, [lhs, rhs]
    if identity == "integration-by-parts":
        fd = ctx.fd_pair
        theta, eta, dtheta, deta = weights.fields(chart)
        lhs, rhs = ibp_terms(fd, theta, eta, dtheta, deta)
        vol = fd.gt.volume_density
        return lhs * vol, [r * vol for r in rhs]
    raise ValueError(f"unknown identity {identity!r}")


class _ExactCurvatureField(MetricField):
    """Sampled metric whose Ricci tensor is taken from closed forms."""

    def __init__(self, geom):
        super().__init__(geom.chart, geom.components)
        self.__dict__["ricci"] = geom.ricci


def _perturbable(*geoms):
    return tuple(_ExactCurvatureField(g) for g in geoms)


@dataclass
class SampleResult:
    residual: float
    scale: float
    tolerance: float

    @property
    def passed(self):
        return self.residual <= self.tolerance


def _accumulate(a, ident, ctx, win, interior, kw):
    if ident == "integration-by-parts":
        lhs, rhs = evaluate_window(ident, ctx, **kw)
        a["lhs"].append(win.integrate(lhs, interior))
        a["rhs"].append([win.integrate(r, interior) for r in rhs])
        a["abs"].append([win.integrate(np.abs(t), interior) for t in [lhs, *rhs]])
    else:
        res, terms = evaluate_window(ident, ctx, **kw)
        a["res"] = max(a["res"], float(np.abs(res[interior]).max()))
        a["scale"] = max([a["scale"]] + [float(np.abs(t[interior]).max()) for t in terms])


def check_identities(identities, metric, metric_t, N, max_points=MAX_BLOCK_POINTS, region=None,
                     **kw):
    """Blockwise residuals of several identities sharing one pass over the grid.

    Pointwise identities report the max-norm residual; the integral identity
    reports the absolute difference of the two integrals.  ``region`` (a
    fraction of the period) restricts the check to the sub-box
    ``[0, region * period)`` in the two leading coordinates, with a cutoff
    supported inside it for the integral identity.
    """
    identities = list(identities)
    chart = Chart.uniform(metric.dim, N, metric.period)
    extent = None
    if region is not None:
        m = round(region * N)
        extent = (m,) * min(2, chart.grid_ndim)
        kw.setdefault("weights", SmoothWeights(box=(0.0, m * chart.min_spacing)))
    acc = {i: {"res": 0.0, "scale": 0.0, "lhs": [], "rhs": [], "abs": []} for i in identities}
    for halo in sorted({HALO[i] for i in identities}):
        group = [i for i in identities if HALO[i] == halo]
        jet_order = max(JET_ORDER.get(i, 2) for i in group)
        for win, interior in blocks(chart, max_points, halo, extent):
            ctx = WindowContext(metric, metric_t, win, jet_order)
            for ident in group:
                _accumulate(acc[ident], ident, ctx, win, interior, kw)
            del ctx
    out = {}
    for ident, a in acc.items():
        if ident == "integration-by-parts":
            L = math.fsum(a["lhs"])
            R = math.fsum(v for row in a["rhs"] for v in row)
            a["res"] = abs(L - R)
            a["scale"] = float(np.max(np.sum(a["abs"], axis=0)))
        out[ident] = SampleResult(a["res"], a["scale"], tolerance(ident, chart.min_spacing, a["scale"]))
    return out


def check_pair(identity, metric, metric_t, N, max_points=MAX_BLOCK_POINTS, region=None, **kw):
    return check_identities([identity], metric, metric_t, N, max_points, region, **kw)[identity]


def observed_order(resolutions, residuals):
    """Least-squares slope of log residual against log dx (None below 3 levels)."""
    pts = [(2 * math.pi / n, r) for n, r in zip(resolutions, residuals) if r > 0]
    if len(pts) < 3:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class VerificationReport:
    identity: str
    dim: int
    samples: int
    resolutions: list
    residuals: dict
    tolerances: dict
    scales: dict
    order: float | None = None
    sample_orders: list = field(default_factory=list)
    notes: str = ""

    @property
    def within_tolerance(self):
        return all(r <= t for n in self.residuals
                   for r, t in zip(self.residuals[n], self.tolerances[n]))

    @property
    def passed(self):
        ok = self.within_tolerance
        if self.order is not None:
            ok = ok and self.order >= MIN_ORDER
        return ok

    def worst(self, n):
        return max(self.residuals[n]) if self.residuals[n] else 0.0

    def to_dict(self):
        d = asdict(self)
        d["residuals"] = {str(k): v for k, v in self.residuals.items()}
        d["tolerances"] = {str(k): v for k, v in self.tolerances.items()}
        d["scales"] = {str(k): v for k, v in self.scales.items()}
        d["passed"] = self.passed
        return d


def sample_pair(seed, index, dim):
    """Deterministic random pair number ``index`` of stream ``seed``."""
    return random_pair(np.random.default_rng([seed, index]), dim)


def worker_count():
    try:
        return max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        return 1


def run_verification(identities, pairs, resolutions, region=None, threads=None):
    """Check every identity on every pair at every resolution.

    Jobs run on ``threads`` workers (``LAB_THREADS`` by default); reports
    are assembled by sorted (resolution, sample) ids, so the worker count
    never changes the result.
    """
    identities = list(identities)
    resolutions = list(resolutions)
    threads = threads or worker_count()
    jobs = [(n, i) for n in resolutions for i in range(len(pairs))]

    def run(job):
        n, i = job
        m, mt = pairs[i]
        return job, check_identities(identities, m, mt, n, region=region)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = dict(pool.map(run, jobs))
    else:
        results = dict(map(run, jobs))
    reports = {}
    for ident in identities:
        def column(attr):
            return {n: [getattr(results[(n, i)][ident], attr) for i in range(len(pairs))]
                    for n in resolutions}

        rep = VerificationReport(ident, pairs[0][0].dim, len(pairs), resolutions,
                                 column("residual"), column("tolerance"), column("scale"))
        if region is not None:
            rep.notes = f"sub-box [0, {region:g} P)^2 of the leading coordinates"
        if len(resolutions) >= 3:
            rep.order = observed_order(resolutions, [rep.worst(n) for n in resolutions])
            rep.sample_orders = [
                observed_order(resolutions, [rep.residuals[n][i] for n in resolutions])
                for i in range(len(pairs))
            ]
        reports[ident] = rep
    return reports


def verify_identity(identity, pairs, resolutions, region=None, threads=None):
    return run_verification([identity], pairs, resolutions, region, threads)[identity]


def sample_pairs(seed, count, dim):
    return [sample_pair(seed, i, dim) for i in range(count)]


# -- named single-pair verifiers --------------------------------------------------------


def _single(identity, metric, metric_t, resolutions, raise_on_fail, **kw):
    results = {n: check_pair(identity, metric, metric_t, n, **kw) for n in resolutions}
    rep = VerificationReport(
        identity, metric.dim, 1, list(resolutions),
        {n: [r.residual] for n, r in results.items()},
        {n: [r.tolerance] for n, r in results.items()},
        {n: [r.scale] for n, r in results.items()},
    )
    if len(resolutions) >= 3:
        rep.order = observed_order(resolutions, [results[n].residual for n in resolutions])
    if raise_on_fail:
        for n, r in results.items():
            if not r.passed:
                raise ToleranceExceeded(identity, r.residual, r.tolerance)
    return rep


def verify_bev(metric: TrigMetric, metric_t: TrigMetric, resolutions=(64,), raise_on_fail=True, **kw):
    return _single("b-evolution", metric, metric_t, list(resolutions), raise_on_fail, **kw)


def verify_gamma_dot(metric_t: TrigMetric, resolutions=(64,), raise_on_fail=True, **kw):
    return _single("gamma-evolution", metric_t, metric_t, list(resolutions), raise_on_fail, **kw)


def verify_rc_difference(metric, metric_t, resolutions=(32, 64, 128), raise_on_fail=True):
    return _single("ricci-difference", metric, metric_t, list(resolutions), raise_on_fail)


def verify_ibp(metric, metric_t, resolutions=(64,), weights=SmoothWeights(), raise_on_fail=True):
    return _single("integration-by-parts", metric, metric_t, list(resolutions), raise_on_fail,
                   weights=weights)


def ibp_residual(pair: MetricPair, theta, eta, dtheta, deta):
    """(lhs, rhs, scale) of the weighted integration by parts for an arbitrary pair."""
    lhs, rhs = ibp_terms(pair, theta, eta, dtheta, deta)
    vol = pair.gt.volume_density
    chart = pair.chart
    L = chart.integrate(lhs * vol)
    R = math.fsum(chart.integrate(r * vol) for r in rhs)
    scale = max(chart.integrate(np.abs(t) * vol) for t in [lhs, *rhs])
    return L, R, scale


def warped_b_evolution(g_profile, gt_profile, eps=None):
    """(lhs, [terms]) of the B-evolution law on a reduced warped chart."""
    g, gt = g_profile.metric(), gt_profile.metric()
    lhs = euler_family_derivative((g, gt), lambda a, b: MetricPair(a, b).B, eps)
    terms = b_evolution_terms(MetricPair(g, gt))
    return lhs, list(terms)


def warped_gamma_evolution(gt_profile, eps=None):
    gt = gt_profile.metric()
    lhs = euler_family_derivative((gt,), lambda a: a.christoffel, eps)
    return lhs, gamma_evolution_rhs(gt)


# -- inequalities with fitted constants -----------------------------------------------


@dataclass
class ConstantFit:
    """A constant fitted on batch A and checked on the held-out batches.

    Batch B must be covered with ``HOLDOUT_SLACK``; across every held-out
    batch the constant may not drift upward by more than ``STABILITY_FACTOR``.
    A batch needing a *smaller* constant is consistent with the inequality,
    so downward drift is not penalized.
    """

    name: str
    batch_constants: list
    fitted: float

    @property
    def holdout_worst(self):
        return max(self.batch_constants[1:], default=0.0)

    def _relative(self, c):
        if self.fitted > 0:
            return c / self.fitted
        return 1.0 if c == 0 else math.inf

    @property
    def spread(self):
        nz = [c for c in self.batch_constants if c > 0]
        return max(nz) / min(nz) if nz else 1.0

    @property
    def holdout_ratio(self):
        """Batch B's constant relative to the fitted one."""
        return self._relative(self.batch_constants[1])

    @property
    def drift(self):
        """Largest held-out constant relative to the fitted one."""
        return self._relative(self.holdout_worst)

    @property
    def stable(self):
        return self.holdout_ratio <= HOLDOUT_SLACK and self.drift <= STABILITY_FACTOR

    def to_dict(self):
        return {"name": self.name, "batch_constants": self.batch_constants, "fitted": self.fitted,
                "holdout_ratio": self.holdout_ratio, "holdout_worst": self.holdout_worst,
                "spread": self.spread, "drift": self.drift, "stable": self.stable}


def _ratio_max(excess, bound, rel_floor=SIGNIFICANCE_FLOOR):
    excess = np.asarray(excess, dtype=float)
    bound = np.asarray(bound, dtype=float)
    floor = rel_floor * max(float(bound.max(initial=0.0)), 1e-300)
    mask = bound > floor
    if not mask.any():
        return 0.0
    return float(max(0.0, np.max(excess[mask] / bound[mask])))


def fit_constant(name, batches):
    """Fit on the first batch, hold out on the rest.

    ``batches`` is a list of lists of ``(excess, bound)`` array pairs; the
    constant of a batch is the smallest c with excess <= c * bound at every
    point of the batch.
    """
    if len(batches) < 2:
        raise ValueError("a fit needs a fitting batch and at least one held-out batch")
    per_batch = [max((_ratio_max(e, b) for e, b in batch), default=0.0) for batch in batches]
    return ConstantFit(name, per_batch, per_batch[0])


def norm_evolution_densities(g_profile, gt_profile, t, sigma, eps=None, drop_adjoint=False):
    """Pointwise (excess, bound) pairs for the four norm-evolution inequalities.

    Keys: ``h-norm`` and ``B-norm`` (time-free forms with C0) and
    ``h-weighted`` and ``B-weighted`` (time-weighted forms with N0).
    """
    g, gt = g_profile.metric(), gt_profile.metric()
    pair = MetricPair(g, gt)
    n = g_profile.n
    # B from h vanishes exactly for identical metrics, so empty excesses fit to zero
    h, B, Dh = pair.h, pair.B_from_h, pair.nabla_t_h
    dh2 = euler_family_derivative((g, gt), lambda a, b: norm2(b, a.components - b.components, "ll"), eps)
    dB2 = euler_family_derivative((g, gt), lambda a, b: norm2(b, MetricPair(a, b).B_from_h, "l"), eps)
    if n == 3:
        emb = MetricPair(g_profile.embedded(), gt_profile.embedded())
        Lh = embedded_row(emb.L_h, n)
    else:
        Lh = pair.L_h
    principal = Lh if drop_adjoint else Lh - 2.0 * adjoint_divergence(gt, B)
    lead = 2.0 * inner(gt, principal, h, "ll")
    h_n, B_n, Dh_n = norm(gt, h, "ll"), norm(gt, B, "l"), norm(gt, Dh, "lll")
    ginv = norm(gt, g.inverse, "uu")
    gnorm = norm(gt, g.components, "ll")
    rc_t, rm_t = norm(gt, gt.ricci, "ll"), norm(gt, gt.riemann, "lllu")
    rc = norm(gt, g.ricci, "ll")
    drc_t = norm(gt, nabla_ricci(gt), "lll")
    out = {
        "h-norm": (dh2 - lead, (rc_t + ginv * rm_t) * h_n**2 + ginv**2 * h_n * Dh_n**2),
        "B-norm": (dB2, (rc_t + ginv * rc) * B_n**2 + gnorm * ginv * drc_t * h_n * B_n
                   + ginv**2 * rc * Dh_n * B_n),
        "h-weighted": ((dh2 - lead) / t ** (1 + sigma),
                       (1 + sigma) * h_n**2 / t**2 + Dh_n**2 / t),
        "B-weighted": (dB2 / t**sigma - sigma * B_n**2 / (2 * t ** (1 + sigma)),
                       sigma * B_n**2 / (2 * t) + h_n**2 / t ** (2 - sigma) + Dh_n**2 / t),
    }
    return out


def perturbed_cylinder_batches(n, points=64, modes=(1, 2, 3, 4, 5), per_batch=6, delta=1e-2,
                               dt=1e-3, t_end=0.2, every=20, seed=0):
    """Batches of ``(t, g, g~)`` samples: g~ a bumpy cylinder, g a perturbation of it.

    Batch ``b`` perturbs with Fourier mode ``modes[b]`` and random phases.
    """
    base = bumpy_cylinder(n, points)
    ref = integrate(FlowState(0.0, base), t_end, dt, "rk4", every)
    batches = []
    for b, mode in enumerate(modes):
        rows = []
        for j in range(per_batch):
            rng = np.random.default_rng([seed, b, j])
            traj = integrate(FlowState(0.0, perturbed(base, delta, rng, mode)), t_end, dt, "rk4", every)
            rows += [(s.t, s.payload, q.payload) for s, q in zip(traj.states, ref.states) if s.t > 0]
        batches.append(rows)
    return batches


@dataclass
class NormEvolutionReport:
    fits: dict
    sigma: float

    @property
    def passed(self):
        return all(f.stable for f in self.fits.values())

    @property
    def N0(self):
        return max(self.fits["h-weighted"].fitted, self.fits["B-weighted"].fitted)

    @property
    def C0(self):
        return max(self.fits["h-norm"].fitted, self.fits["B-norm"].fitted)

    def to_dict(self):
        return {"sigma": self.sigma, "passed": self.passed,
                "fits": {k: f.to_dict() for k, f in self.fits.items()}}


def verify_norm_evolution_bounds(batches, sigma, eps=None, drop_adjoint=False, raise_on_fail=True):
    """Fit C0 and N0 over batches of ``(t, g_profile, gt_profile)`` samples.

    Raises :class:`UnstableConstant` when batch B needs more than 1.2x the
    constant fitted on batch A, or any held-out batch more than 2x.
    """
    collected = {k: [] for k in ("h-norm", "B-norm", "h-weighted", "B-weighted")}
    for batch in batches:
        per = {k: [] for k in collected}
        for t, gp, gtp in batch:
            for k, v in norm_evolution_densities(gp, gtp, t, sigma, eps, drop_adjoint).items():
                per[k].append(v)
        for k in collected:
            collected[k].append(per[k])
    fits = {k: fit_constant(k, v) for k, v in collected.items()}
    report = NormEvolutionReport(fits, sigma)
    if raise_on_fail:
        for k, f in fits.items():
            if not f.stable:
                raise UnstableConstant(
                    f"{k}: batch constants {['%.3g' % c for c in f.batch_constants]}"
                )
    return report


def ricci_remainder_fit(pairs_batches):
    """Fit c(n) in the structural Ricci-difference bound over batches of MetricPairs."""
    from .difference import ricci_difference_residual

    batches = []
    for batch in pairs_batches:
        rows = []
        for pair in batch:
            rd = ricci_difference_residual(pair, raise_on_fail=False)
            rows.append((rd.remainder, rd.bound_density))
        batches.append(rows)
    return fit_constant("ricci-remainder", batches)


def reformulation_fit(pairs_batches, t=0.5, sigma=0.5, a=1.0):
    from .difference import reformulation_triple

    batches = []
    for batch in pairs_batches:
        rows = []
        for pair in batch:
            tri = reformulation_triple(pair, t, sigma, a)
            u, dx, y = tri.bound_terms(pair.gt)
            rows.append((u, dx + y))
        batches.append(rows)
    return fit_constant("reformulation-U", batches)


@dataclass
class NegativeControl:
    """Residuals of the B-evolution check with each right-hand term scaled by 1 + factor."""

    factor: float
    clean: SampleResult
    corrupted: list

    @property
    def sensitivities(self):
        """Corrupted residuals in units of the passing tolerance."""
        return [r / self.clean.tolerance for r in self.corrupted]

    @property
    def tripped(self):
        return all(s >= 10.0 for s in self.sensitivities)


def b_evolution_negative_control(metric, metric_t, N, factor=0.01, region=None,
                                 max_points=MAX_BLOCK_POINTS):
    """Run the B-evolution check once clean and once per corrupted term."""
    chart = Chart.uniform(metric.dim, N, metric.period)
    extent = None if region is None else (round(region * N),) * min(2, chart.grid_ndim)
    res, scale, bad = 0.0, 0.0, [0.0, 0.0, 0.0]
    for win, interior in blocks(chart, max_points, HALO["b-evolution"], extent):
        ctx = WindowContext(metric, metric_t, win, JET_ORDER["b-evolution"])
        r, terms = evaluate_window("b-evolution", ctx)
        res = max(res, float(np.abs(r[interior]).max()))
        scale = max([scale] + [float(np.abs(t[interior]).max()) for t in terms])
        for k in range(3):
            corrupted = r - factor * terms[k + 1]
            bad[k] = max(bad[k], float(np.abs(corrupted[interior]).max()))
    clean = SampleResult(res, scale, tolerance("b-evolution", chart.min_spacing, scale))
    return NegativeControl(factor, clean, bad)
