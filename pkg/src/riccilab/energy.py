"""Localized weighted energies and their decay certificate.

The smoothed distance ``rho`` is the graph-geodesic distance on the grid
(neighbour edges weighted by the metric length) mollified with a periodic
Gaussian and shifted so that ``rbar <= rho <= rbar + 1``.  The cutoff is
``theta_r = phi(rho / r)`` for a fixed C^2 profile ``phi`` and the weight is
``eta = beta rho^2 / (4 (2 tau - t))``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .difference import MetricPair
from .errors import (
    InvariantViolation,
    NonpositiveTime,
    OutsideValidityWindow,
    WindowEmpty,
)
from .geometry import norm2

RAMP = 0.25
PROFILE_SLOPE = 1.0 / (1.0 - RAMP)
SMOOTHING_LENGTH = 0.25
BOUND_SLACK = 1e-12


# -- cutoff profile -------------------------------------------------------------


def _smoothstep(v):
    v = np.clip(v, 0.0, 1.0)
    return v * v * (3.0 - 2.0 * v)


def _smoothstep_integral(v):
    v = np.clip(v, 0.0, 1.0)
    return v**3 - 0.5 * v**4


def _plateau_integral(u, w=RAMP):
    """Integral over [0, u] of the C^1 plateau that ramps up on [0, w] and down on [1-w, 1]."""
    u = np.clip(u, 0.0, 1.0)
    up = w * _smoothstep_integral(u / w)
    flat = np.clip(u - w, 0.0, 1.0 - 2 * w)
    down_v = np.clip((u - (1 - w)) / w, 0.0, 1.0)
    down = w * (down_v - _smoothstep_integral(down_v))
    return up + flat + down


def _plateau(u, w=RAMP):
    u = np.asarray(u, dtype=float)
    return np.where(u < 0.5, _smoothstep(u / w), _smoothstep((1 - u) / w)) * ((u > 0) & (u < 1))


def profile(s):
    """Monotone C^2 cutoff profile: 1 on (-inf, 2], 0 on [3, inf), (phi')^2 <= 64/9 phi."""
    q = 1.0 - PROFILE_SLOPE * _plateau_integral(np.asarray(s, dtype=float) - 2.0)
    return np.clip(q, 0.0, 1.0) ** 2


def profile_derivative(s):
    s = np.asarray(s, dtype=float)
    q = np.clip(1.0 - PROFILE_SLOPE * _plateau_integral(s - 2.0), 0.0, 1.0)
    return -2.0 * q * PROFILE_SLOPE * _plateau(s - 2.0)


# -- distance -------------------------------------------------------------------


def graph_distance(chart, gbar, x0):
    """Shortest-path distance to grid index ``x0`` on the periodic neighbour graph.

    Only the sampled coordinate block of ``gbar`` enters the edge lengths.
    """
    d = chart.grid_ndim
    shape = chart.counts
    size = math.prod(shape)
    g = np.asarray(gbar)[..., :d, :d]
    h = np.asarray(chart.spacing)
    idx = np.arange(size).reshape(shape)
    rows, cols, vals = [], [], []
    for step in itertools.product((-1, 0, 1), repeat=d):
        if step <= (0,) * d:
            continue
        v = np.array(step) * h
        nbr = np.roll(idx, [-s for s in step], axis=tuple(range(d)))
        gmid = 0.5 * (g + np.roll(g, [-s for s in step], axis=tuple(range(d))))
        length = np.sqrt(np.einsum("...ij,i,j->...", gmid, v, v))
        rows.append(idx.ravel())
        cols.append(nbr.ravel())
        vals.append(length.ravel())
    graph = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsr()
    source = int(np.ravel_multi_index(tuple(x0), shape))
    return dijkstra(graph, directed=False, indices=source).reshape(shape)


def smoothed_distance(chart, rbar, length=SMOOTHING_LENGTH):
    """Periodic Gaussian mollification of ``rbar`` shifted to satisfy rbar <= rho."""
    sigma = [length / h for h in chart.spacing]
    rho = ndimage.gaussian_filter(rbar, sigma, mode="wrap")
    return rho + max(0.0, float(np.max(rbar - rho)))


# -- cutoff and weight ------------------------------------------------------------


def admissible_time(beta, L2):
    """Largest tau for which eta(., 0) >= L2 rbar^2 is guaranteed."""
    x = beta / (8.0 * L2)
    return min(math.sqrt(x), x)


@dataclass
class CutoffWeight:
    chart: object
    gbar: object
    x0: tuple
    rbar: np.ndarray
    rho: np.ndarray
    grad_rho: np.ndarray
    r: float
    beta: float
    tau: float
    L1: float
    L2: float
    gamma: float
    T_prime: float
    gt_samples: list = field(default_factory=list)

    @property
    def theta(self):
        return profile(self.rho / self.r)

    @property
    def grad_theta(self):
        return (profile_derivative(self.rho / self.r) / self.r)[..., None] * self.grad_rho

    @property
    def leakage_set(self):
        """Points where the cutoff gradient is nonzero."""
        s = self.rho / self.r
        return (s > 2.0) & (s < 3.0)

    def _check_time(self, t):
        if not 0.0 <= t <= self.tau * (1 + 1e-12):
            raise OutsideValidityWindow(f"t = {t} outside [0, {self.tau}]")

    def eta(self, t):
        self._check_time(t)
        return self.beta * self.rho**2 / (4.0 * (2 * self.tau - t))

    def eta_dot(self, t):
        self._check_time(t)
        return self.beta * self.rho**2 / (4.0 * (2 * self.tau - t) ** 2)

    def grad_eta(self, t):
        self._check_time(t)
        return (self.beta * self.rho / (2.0 * (2 * self.tau - t)))[..., None] * self.grad_rho

    def violations(self, times=5):
        """Worst relative excess of each pointwise bound (<= 0 means satisfied)."""
        gbar = self.gbar
        s = self.rho / self.r
        phi, dphi = profile(s), profile_derivative(s)
        grad_rho2 = norm2(gbar, self.grad_rho, "l")
        grad_theta2 = norm2(gbar, self.grad_theta, "l")
        theta = self.theta
        out = {
            "rho-lower": float(np.max(self.rbar - self.rho)),
            "rho-upper": float(np.max(self.rho - self.rbar - 1.0)),
            "grad-rho": float(np.max(grad_rho2 - 4.0)),
            "profile-slope": float(np.max(dphi**2 - 10.0 * phi)),
            "profile-monotone": float(np.max(np.diff(profile(np.linspace(0, 4, 4001))))),
            "theta-plateau": float(np.max(np.where(self.rbar <= self.r, 1.0 - theta, 0.0))),
            "grad-theta": float(np.max(grad_theta2 - 40.0 * theta / self.r**2)),
        }
        worst_lower = -np.inf
        worst_sub = -np.inf
        for t in np.linspace(0.0, self.tau, times):
            eta = self.eta(t)
            worst_lower = max(worst_lower, float(np.max(self.L2 * self.rbar**2 - eta)))
            for gt in self.gt_samples or [self.gbar]:
                grad2 = norm2(gt, self.grad_eta(t), "l")
                worst_sub = max(worst_sub, float(np.max(-self.eta_dot(t) + self.L1 * grad2)))
        out["eta-lower"] = worst_lower
        out["eta-subsolution"] = worst_sub
        return out

    def validate(self):
        scale = max(1.0, float(np.max(self.rho)) ** 2)
        for bound, excess in self.violations().items():
            if excess > BOUND_SLACK * scale:
                raise InvariantViolation(bound, excess)
        return self


def comparison_constant(gbar, gt_samples):
    """Smallest gamma with gbar <= gamma * gt for every sample."""
    worst = 0.0
    for gt in gt_samples:
        linv = np.linalg.inv(np.linalg.cholesky(gt.components))
        m = linv @ gbar.components @ np.swapaxes(linv, -1, -2)
        lam = np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, -1, -2)))
        worst = max(worst, float(lam.max()))
    return worst


def build_cutoff_weight(chart, gbar, x0, r, L1, L2, gamma=None, beta=None, tau=None,
                        gt_samples=None, validate=True):
    """Certified cutoff/weight pair about grid index ``x0``.

    ``beta`` defaults to the largest admissible value ``1 / (4 L1 gamma)`` and
    ``tau`` to the achieved ``T'``.  ``gt_samples`` are the metrics g~(t) the
    weight must serve; ``gbar`` itself is used when omitted.
    """
    gt_samples = list(gt_samples or [gbar])
    needed = comparison_constant(gbar, gt_samples)
    if gamma is None:
        gamma = needed
    elif gamma < needed * (1 - 1e-12):
        raise InvariantViolation("metric-comparison", needed - gamma)
    if beta is None:
        beta = 1.0 / (4.0 * L1 * gamma)
    if not 0 < beta <= 1.0 / (4.0 * L1 * gamma) * (1 + 1e-12):
        raise ValueError("beta must lie in (0, 1/(4 L1 gamma)]")
    T_prime = admissible_time(beta, L2)
    tau = T_prime if tau is None else tau
    if not 0 < tau <= T_prime * (1 + 1e-12):
        raise ValueError("tau must lie in (0, T']")
    rbar = graph_distance(chart, gbar.components, x0)
    rho = smoothed_distance(chart, rbar)
    grad_rho = chart.grad(rho)
    cw = CutoffWeight(chart, gbar, tuple(x0), rbar, rho, grad_rho, r, beta, tau,
                      L1, L2, gamma, T_prime, gt_samples)
    return cw.validate() if validate else cw


# -- energies -----------------------------------------------------------------------


def weight_density(pair: MetricPair, cw=None, t=None):
    """theta * exp(-eta) * dmu_gt (compact mode when ``cw`` is None)."""
    dens = pair.gt.volume_density
    if cw is None:
        return dens
    return cw.theta * np.exp(-cw.eta(t)) * dens


def energies(pair: MetricPair, cw=None, t=0.0):
    """(B_r, H_r, K_r) by deterministic quadrature.

    B is taken as Bian(g, nabla~, h), equal to Bian(g, nabla~, g) up to
    roundoff and exactly zero for identical metrics.
    """
    gt = pair.gt
    w = weight_density(pair, cw, t)
    chart = pair.chart
    B = chart.integrate(norm2(gt, pair.B_from_h, "l") * w)
    H = chart.integrate(norm2(gt, pair.h, "ll") * w)
    K = chart.integrate(norm2(gt, pair.nabla_t_h, "lll") * w)
    return B, H, K


def combined_energy(B, H, t, sigma, a):
    if t <= 0:
        raise NonpositiveTime(f"t = {t} must be positive")
    return a * B / t**sigma + H / t ** (1 + sigma)


def default_weight(N2, sigma):
    """The coefficient a = 8 N2 / sigma (so that a sigma / 4 > N2)."""
    return 8.0 * N2 / sigma


def combined_energy_direct(pair, cw, t, sigma, a):
    """E_r as a single weighted integral of the combined density."""
    gt = pair.gt
    dens = (a * norm2(gt, pair.B_from_h, "l") / t**sigma + norm2(gt, pair.h, "ll") / t ** (1 + sigma))
    return pair.chart.integrate(dens * weight_density(pair, cw, t))


@dataclass
class EnergyReport:
    times: np.ndarray
    B: np.ndarray
    H: np.ndarray
    K: np.ndarray
    sigma: float
    a: float
    r: float | None = None
    certificate: object = None

    @property
    def E(self):
        return np.array([combined_energy(b, h, t, self.sigma, self.a) if t > 0 else np.nan
                         for t, b, h in zip(self.times, self.B, self.H)])

    def rows(self):
        return [(float(t), float(b), float(h), float(k), float(e))
                for t, b, h, k, e in zip(self.times, self.B, self.H, self.K, self.E)]


def energy_series(pairs, times, sigma, a, cw=None, r=None):
    """EnergyReport over matched pair snapshots; ``cw`` times are measured from 0."""
    B, H, K = zip(*(energies(p, cw, t) for p, t in zip(pairs, times)))
    return EnergyReport(np.asarray(times, float), np.array(B), np.array(H), np.array(K), sigma, a, r)


# -- decay certificate ---------------------------------------------------------------


def damping(B, H, K, t, sigma, a, alpha0):
    return (a * sigma / 4) * B / t ** (1 + sigma) + (1 + sigma) * H / t ** (2 + sigma) + alpha0 * K / t ** (1 + sigma)


@dataclass
class GronwallWindow:
    t0: float
    t1: float
    C: float
    leakage: float
    E0: float
    E1: float

    @property
    def holds(self):
        if self.E0 == 0.0 and self.E1 == 0.0:
            return True
        bound = self.E0 * math.exp(self.C * (self.t1 - self.t0)) + self.leakage
        return self.E1 <= bound * (1 + 1e-12)


@dataclass
class GronwallCertificate:
    N3: float
    window_end: float
    alpha0: float
    windows: list
    leak_factor: float

    @property
    def C(self):
        return max((w.C for w in self.windows), default=0.0)

    @property
    def leakage(self):
        return sum(w.leakage for w in self.windows)

    @property
    def passed(self):
        return all(w.holds for w in self.windows)

    def summary(self):
        return {
            "C": self.C,
            "N3": self.N3,
            "window_end": self.window_end,
            "alpha0": self.alpha0,
            "leakage": self.leakage,
            "windows": [[w.t0, w.t1] for w in self.windows],
            "passed": self.passed,
        }


def ellipticity(pairs):
    """alpha0 with alpha0 |nabla~h|^2 <= g^{ij} <nabla~_i h, nabla~_j h> (from g^{-1} vs gt^{-1})."""
    worst = math.inf
    for p in pairs:
        linv = np.linalg.inv(np.linalg.cholesky(p.g.components))
        # eigenvalues of gt g^{-1}: g^{-1} >= lambda_min gt^{-1}
        m = linv @ p.gt.components @ np.swapaxes(linv, -1, -2)
        lam = np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, -1, -2)))
        worst = min(worst, float(lam.min()))
    return worst


def gronwall_certificate(report: EnergyReport, dt, alpha0, r=None, vbar=0.0, t0=None,
                         t_end=None):
    """Fit N3 and the Gronwall constant on abutting windows starting at ``t0 = 4 dt``.

    The leakage factor is ``exp(-r^2 + vbar r)`` (zero when ``r`` is None,
    i.e. in compact mode).
    """
    t = report.times
    sigma, a = report.sigma, report.a
    t0 = 4 * dt if t0 is None else t0
    t_end = t[-1] if t_end is None else t_end
    use = (t >= t0 - 1e-12) & (t <= t_end + 1e-12)
    t, B, H, K = t[use], report.B[use], report.H[use], report.K[use]
    if t.size < 2:
        raise WindowEmpty("fewer than two samples after t0")
    E = np.array([combined_energy(b, h, s, sigma, a) for s, b, h in zip(t, B, H)])
    leak = 0.0 if r is None else math.exp(-r * r + vbar * r)
    D = damping(B, H, K, t, sigma, a, alpha0)
    dE = np.gradient(E, t)
    excess = dE + D
    denom = t**sigma * D + t ** (sigma - 1) * leak
    mask = (excess > 0) & (denom > 0)
    N3 = float(np.max(excess[mask] / denom[mask])) if mask.any() else 0.0
    span = N3 ** (-1.0 / sigma) if N3 > 0 else math.inf
    if span <= t0 or not np.any((t > t0) & (t <= t0 + span)):
        raise WindowEmpty(f"decay window N3^(-1/sigma) = {span:.3g} holds no samples after t0")
    windows = []
    start = 0
    while start < t.size - 1:
        limit = t[start] + span
        stop = start + 1
        while stop + 1 < t.size and t[stop + 1] <= limit + 1e-12:
            stop += 1
        seg_E = E[start:stop + 1]
        seg_t = t[start:stop + 1]
        if np.all(seg_E > 0):
            # signed: a negative C certifies decay
            C = float(np.max(np.diff(np.log(seg_E)) / np.diff(seg_t)))
        else:
            C = 0.0
        leakage = (N3 / sigma) * (seg_t[-1] ** sigma - seg_t[0] ** sigma) * leak
        windows.append(GronwallWindow(float(seg_t[0]), float(seg_t[-1]), C, leakage,
                                      float(seg_E[0]), float(seg_E[-1])))
        start = stop
    return GronwallCertificate(N3, float(min(span, t_end)), alpha0, windows, leak)


def log_growth_rate(report: EnergyReport, t0, t1):
    """Largest slope of log E between consecutive samples in [t0, t1]."""
    E = report.E
    t = report.times
    sel = (t >= t0 - 1e-12) & (t <= t1 + 1e-12) & (E > 0)
    if sel.sum() < 2:
        return 0.0
    return float(np.max(np.diff(np.log(E[sel])) / np.diff(t[sel])))


@dataclass
class RefinementVerdict:
    steps: list
    values: list
    ratios: list
    order: float
    extrapolated: float
    min_ratio: float = 8.0
    min_order: float = 2.5

    @property
    def passed(self):
        ok_ratio = all(q >= self.min_ratio for q in self.ratios)
        return ok_ratio and self.order >= self.min_order and abs(self.extrapolated) <= self.values[-1]


def refinement_verdict(steps, values):
    """Convergence of E(t) toward 0 as the time step is refined."""
    steps = [float(s) for s in steps]
    values = [float(v) for v in values]
    ratios = [a / b if b > 0 else math.inf for a, b in zip(values, values[1:])]
    pos = [(s, v) for s, v in zip(steps, values) if v > 0]
    if len(pos) >= 2:
        order = float(np.polyfit(np.log([s for s, _ in pos]), np.log([v for _, v in pos]), 1)[0])
    else:
        order = math.inf
    if len(values) >= 2 and math.isfinite(order):
        q = (steps[-2] / steps[-1]) ** order
        extrap = values[-1] - (values[-2] - values[-1]) / (q - 1)
    else:
        extrap = values[-1]
    return RefinementVerdict(steps, values, ratios, order, extrap)


# -- volume growth -----------------------------------------------------------------


@dataclass
class VolumeGrowth:
    radii: list
    volumes: list
    vbar: float
    N: float
    total: float

    @property
    def passed(self):
        return all(v <= self.N * math.exp(self.vbar * s) * (1 + 1e-12)
                   for s, v in zip(self.radii, self.volumes)) and math.isfinite(self.vbar)


def volume_growth_check(gbar, x0, r):
    """Ball volumes at radii r, 2r, 3r and the fitted exponential envelope."""
    chart = gbar.chart
    rbar = graph_distance(chart, gbar.components, x0)
    dens = gbar.volume_density
    radii = [r, 2 * r, 3 * r]
    vols = [chart.integrate(np.where(rbar <= s, dens, 0.0)) for s in radii]
    total = chart.integrate(dens)
    slope, icpt = np.polyfit(radii, np.log(vols), 1)
    vbar = max(float(slope), 0.0)
    N = max(v / math.exp(vbar * s) for s, v in zip(radii, vols))
    return VolumeGrowth(radii, vols, vbar, float(N), total)
