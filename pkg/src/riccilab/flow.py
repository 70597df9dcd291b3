"""Ricci-flow solution data.

Warped products ``phi(x)^2 dx^2 + psi(x)^2 g_round`` are represented on a
*reduced chart*: one sampled periodic axis ``x`` plus ``n - 1`` symmetry
directions standing for the fiber in coordinates that are normal at the
equator.  There every invariant tensor and all first covariant derivatives
are exact; the curvature picks up the fiber's own curvature through
``MetricField.fiber_curvature``.  Operators with second covariant
derivatives (e.g. ``L``) are evaluated on an *embedded chart* that also
samples the polar angle of the fiber in a thin band around the equator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ExtinctionReached, SingularMetric, StepRejected
from .difference import consistency_check
from .geometry import MetricField, norm
from .grid import Chart

EXTINCTION_FRACTION = 1e-3
THETA_POINTS = 1024
EMBED_HALO = 8


def sphere_area(k):
    """Volume of the unit k-sphere."""
    return 2 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


@dataclass
class WarpedProfile:
    n: int
    phi: np.ndarray
    psi: np.ndarray
    period: float = 2 * math.pi

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.psi = np.asarray(self.psi, dtype=float)
        if self.n not in (2, 3):
            raise ValueError("warped profiles are supported for n = 2, 3")
        if self.phi.shape != self.psi.shape or self.phi.ndim != 1:
            raise ValueError("phi and psi must be 1-d arrays of equal length")
        if not (np.all(self.phi > 0) and np.all(self.psi > 0)):
            raise SingularMetric("warped profile must stay positive")

    @classmethod
    def cylinder(cls, n, points, radius=1.0, period=2 * math.pi):
        one = np.ones(points)
        return cls(n, one, radius * one, period)

    @property
    def points(self):
        return self.phi.size

    @property
    def chart(self):
        return Chart((self.points,), (self.period,), self.n, sphere_area(self.n - 1))

    @property
    def x(self):
        return np.arange(self.points) * self.period / self.points

    @property
    def kappa(self):
        return 1.0 if self.n >= 3 else 0.0

    def components(self):
        diag = np.stack([self.phi**2] + [self.psi**2] * (self.n - 1), axis=-1)
        return diag[..., None] * np.eye(self.n)

    def metric(self):
        return MetricField(self.chart, self.components(), self.kappa)

    def as_vector(self):
        return np.concatenate([self.phi, self.psi])

    def from_vector(self, y):
        m = self.points
        return replace(self, phi=y[:m], psi=y[m:])

    def spectral_tail(self):
        """Largest Fourier magnitude in the upper half band, relative to the peak."""
        worst = 0.0
        for f in (self.phi, self.psi):
            c = np.abs(np.fft.rfft(f))
            tail = c[c.size // 2:]
            worst = max(worst, float(tail.max() / c.max()))
        return worst

    def embedded(self, theta_points=THETA_POINTS, halo=EMBED_HALO):
        """Metric on the (polar angle, x) band; see :func:`embedded_row`."""
        if self.n == 2:
            return self.metric()
        chart = Chart((theta_points, self.points), (2 * math.pi, self.period), self.n)
        mid = theta_points // 4
        band = chart.window(mid, mid + 1, halo)
        theta = band.coordinates()[0]
        sin2 = np.sin(theta) ** 2
        phi2 = np.broadcast_to(self.phi**2, theta.shape)
        psi2 = np.broadcast_to(self.psi**2, theta.shape)
        diag = np.stack([psi2, phi2, psi2 * sin2], axis=-1)
        return MetricField(band, diag[..., None] * np.eye(3))


def bumpy_cylinder(n, points, amplitude=0.1, radius=1.0, period=2 * math.pi):
    """Cylinder whose radius carries a smooth two-mode bump."""
    x = np.arange(points) * period / points
    k = 2 * math.pi / period
    psi = radius * (1.0 + amplitude * (np.cos(k * x) + 0.5 * np.sin(2 * k * x)))
    phi = 1.0 + 0.5 * amplitude * np.cos(k * x + 0.3)
    return WarpedProfile(n, phi, psi, period)


def perturbed(profile: WarpedProfile, delta, rng=None, mode=1):
    """``profile`` with relative perturbations of size ``delta`` in phi and psi.

    The perturbation uses Fourier modes ``mode`` and ``mode + 1``; with
    ``rng`` their phases are drawn at random.
    """
    x = profile.x
    k = 2 * math.pi / profile.period
    a, b = (0.7, 1.9) if rng is None else rng.uniform(0, 2 * math.pi, size=2)
    phi = profile.phi * (1.0 + delta * np.sin(mode * k * x + a))
    psi = profile.psi * (1.0 + delta * np.cos((mode + 1) * k * x + b))
    return replace(profile, phi=phi, psi=psi)


def embedded_row(field, n, halo=EMBED_HALO):
    """Equator row of an embedded-chart field, reordered to reduced-chart slots."""
    if n == 2:
        return field
    row = field[halo]
    k = row.ndim - 1
    perm = [1, 0, 2]
    for axis in range(1, k + 1):
        row = np.take(row, perm, axis=axis)
    return row


def warped_ricci_closed_form(profile: WarpedProfile):
    """Coordinate Ricci components (xx, fiber) from the classical warped formulas."""
    chart = profile.chart
    n, phi, psi = profile.n, profile.phi, profile.psi
    psi_s = chart.partial(psi, 0) / phi
    psi_ss = chart.partial(psi_s, 0) / phi
    rc_x = -(n - 1) * phi**2 * psi_ss / psi
    rc_f = -psi * psi_ss + (n - 2) * (1 - psi_s**2)
    return rc_x, rc_f


def profile_rhs(profile: WarpedProfile):
    """(d phi/dt, d psi/dt) from -2 Rc evaluated on the reduced chart."""
    rc = profile.metric().ricci
    return -rc[:, 0, 0] / profile.phi, -rc[:, 1, 1] / profile.psi


def profile_rhs_closed_form(profile: WarpedProfile):
    rc_x, rc_f = warped_ricci_closed_form(profile)
    return -rc_x / profile.phi, -rc_f / profile.psi


def flow_rhs_check(profile: WarpedProfile, raise_on_fail=True):
    """Reduced-chart right-hand side against the classical warped formulas."""
    fd = np.stack(profile_rhs(profile))
    ref = np.stack(profile_rhs_closed_form(profile))
    return consistency_check("flow-rhs", profile.chart, fd, ref, raise_on_fail=raise_on_fail)


@dataclass(frozen=True)
class RoundSphere:
    """The round n-sphere of radius ``r``."""

    r: float
    n: int = 3

    def equatorial_profile(self, points=256, halo=EMBED_HALO):
        """Reduced chart window around the equator of ``r^2 (dx^2 + sin^2 x g_round)``."""
        chart = Chart((points,), (2 * math.pi,), self.n, sphere_area(self.n - 1))
        band = chart.window(points // 4, points // 4 + 1, halo)
        x = band.coordinates()[0]
        diag = np.stack([np.full_like(x, self.r**2)] + [(self.r * np.sin(x)) ** 2] * (self.n - 1), -1)
        return MetricField(band, diag[..., None] * np.eye(self.n), 1.0)


def sphere_radius_rhs(r, n):
    """dr/dt for the round sphere from the warped curvature at the equator."""
    # phi = r, psi = r sin x at x = pi/2: psi_s = 0, psi_ss = -1/r
    psi_ss = -1.0 / r
    rc_x = -(n - 1) * r**2 * psi_ss / r
    return -rc_x / r


FAMILIES = ("flat-static", "shrinking-sphere", "shrinking-cylinder")


@dataclass(frozen=True)
class ExactFamily:
    kind: str
    r0: float = 1.0
    n: int = 3

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown family {self.kind!r}")

    @property
    def rate(self):
        return {"flat-static": 0, "shrinking-sphere": self.n - 1, "shrinking-cylinder": self.n - 2}[self.kind]

    @property
    def extinction_time(self):
        return math.inf if self.rate == 0 else self.r0**2 / (2 * self.rate)

    def radius_squared(self, t):
        return self.r0**2 - 2 * self.rate * t

    def radius(self, t):
        return math.sqrt(self.radius_squared(t))

    def payload(self, t, points=64):
        if self.kind == "shrinking-sphere":
            return RoundSphere(self.radius(t), self.n)
        if self.kind == "shrinking-cylinder":
            return WarpedProfile.cylinder(self.n, points, self.radius(t))
        chart = Chart.uniform(self.n, max(points, 8))
        return MetricField(chart, np.broadcast_to(np.eye(self.n), chart.shape + (self.n, self.n)))

    def initial_state(self, points=64):
        return FlowState(0.0, self.payload(0.0, points), family=self)

    def consistency(self, t, dt=1e-5, points=64):
        """(max |dg/dt + 2 Rc|, max |2 Rc|, grid spacing) with dg/dt by central difference."""
        if self.kind == "flat-static":
            g = self.payload(t, points)
            rc2 = 2 * g.ricci
            return float(np.abs(rc2).max()), float(np.abs(rc2).max()), g.chart.min_spacing
        if self.kind == "shrinking-sphere":
            dr2 = (self.radius_squared(t + dt) - self.radius_squared(t - dt)) / (2 * dt)
            g = RoundSphere(self.radius(t), self.n).equatorial_profile()
            comps = g.components[EMBED_HALO] / self.radius_squared(t)
            rc2 = 2 * g.ricci[EMBED_HALO]
            return float(np.abs(dr2 * comps + rc2).max()), float(np.abs(rc2).max()), g.chart.min_spacing
        up, down = self.payload(t + dt, points), self.payload(t - dt, points)
        dg = (up.components() - down.components()) / (2 * dt)
        g = self.payload(t, points).metric()
        rc2 = 2 * g.ricci
        return float(np.abs(dg + rc2).max()), float(np.abs(rc2).max()), g.chart.min_spacing

    def consistency_residual(self, t, dt=1e-5, points=64):
        """max |dg/dt + 2 Rc| with dg/dt from the closed form by central difference."""
        return self.consistency(t, dt, points)[0]


@dataclass
class FlowState:
    t: float
    payload: object
    dt: float | None = None
    steps: int = 0
    scheme: str | None = None
    family: ExactFamily | None = None

    def metric(self):
        p = self.payload
        if isinstance(p, WarpedProfile):
            return p.metric()
        if isinstance(p, RoundSphere):
            return p.equatorial_profile()
        return p

    def size(self):
        """Smallest length scale, watched for extinction."""
        p = self.payload
        if isinstance(p, WarpedProfile):
            return float(min(p.psi.min(), p.phi.min()))
        if isinstance(p, RoundSphere):
            return p.r
        return p.min_eigenvalue


@dataclass
class Trajectory:
    states: list = field(default_factory=list)

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def final(self):
        return self.states[-1]


def _vector_system(state):
    p = state.payload
    if isinstance(p, WarpedProfile):
        def rhs(y):
            dphi, dpsi = profile_rhs(p.from_vector(y))
            return np.concatenate([dphi, dpsi])
        return p.as_vector(), rhs, p.from_vector, lambda y: float(y.min())
    if isinstance(p, RoundSphere):
        return (np.array([p.r]), lambda y: np.array([sphere_radius_rhs(y[0], p.n)]),
                lambda y: RoundSphere(float(y[0]), p.n), lambda y: float(y[0]))
    if isinstance(p, MetricField):
        if state.family is None or state.family.kind != "flat-static":
            raise ValueError("full-chart metrics are only integrated for the flat static family")
        chart, fc = p.chart, p.fiber_curvature
        def rhs(y):
            return -2.0 * MetricField(chart, y, fc).ricci
        def size(y):
            return float(np.linalg.eigvalsh(y)[..., 0].min())
        return p.components.copy(), rhs, lambda y: MetricField(chart, y, fc), size
    raise TypeError(f"cannot integrate {type(p).__name__}")


def _step(y, rhs, dt, scheme):
    if scheme == "euler":
        return y + dt * rhs(y)
    if scheme == "rk4":
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    raise ValueError(f"unknown scheme {scheme!r}")


def integrate(state: FlowState, t_end, dt, scheme="rk4", output_every=1):
    """Advance ``state`` to ``t_end`` with fixed steps; returns a :class:`Trajectory`.

    Raises :class:`ExtinctionReached` (carrying the last accepted time) once
    the watched length scale drops below ``1e-3`` of its initial value, and
    :class:`StepRejected` when a step produces non-finite values.
    """
    steps = int(round((t_end - state.t) / dt))
    if steps < 0 or abs(state.t + steps * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError("t_end - t must be a nonnegative multiple of dt")
    y, rhs, build, size = _vector_system(state)
    floor = EXTINCTION_FRACTION * size(y)

    def guarded(v):
        if not np.all(np.isfinite(v)):
            raise StepRejected("non-finite stage value")
        if size(v) < floor:
            raise _Extinct
        return rhs(v)

    traj = Trajectory([replace(state, dt=dt, scheme=scheme)])
    t = state.t
    for k in range(1, steps + 1):
        try:
            y_new = _step(y, guarded, dt, scheme)
        except (_Extinct, SingularMetric, FloatingPointError) as exc:
            raise ExtinctionReached(t) from exc
        if not np.all(np.isfinite(y_new)):
            raise StepRejected(f"non-finite state after t = {t:.6g}")
        if size(y_new) < floor:
            raise ExtinctionReached(t)
        y, t = y_new, state.t + k * dt
        if k % output_every == 0 or k == steps:
            traj.states.append(FlowState(t, build(y), dt, state.steps + k, scheme, state.family))
    return traj


class _Extinct(Exception):
    pass


def euler_family_derivative(metrics, F, eps=None):
    """d/dt of ``F(*metrics)`` along the Ricci flow via the Euler family.

    Each metric is replaced by ``g -/+ 2 eps Rc(g)`` (for ``+/-eps``) and ``F``
    is central-differenced in ``eps``; the default ``eps`` is ``dx**2``.
    ``F`` receives :class:`MetricField` objects.
    """
    metrics = tuple(metrics)
    if eps is None:
        eps = metrics[0].chart.min_spacing ** 2

    def shifted(s):
        return [
            MetricField(m.chart, m.components - 2.0 * s * m.ricci, m.fiber_curvature)
            for m in metrics
        ]

    return (F(*shifted(eps)) - F(*shifted(-eps))) / (2.0 * eps)


@dataclass
class MonitorSeries:
    times: np.ndarray
    ricci_rate: np.ndarray
    riemann_rate: np.ndarray
    sigma: float

    @property
    def K_ricci(self):
        return float(self.ricci_rate.max())

    @property
    def K_riemann(self):
        return float(self.riemann_rate.max())

    @property
    def K(self):
        """Smallest K satisfying both curvature-rate bounds on the sampled window."""
        return max(self.K_ricci, self.K_riemann)


def curvature_norms(state: FlowState):
    """(sup |Rc|_g, sup |Rm|_g) for a flow state."""
    g = state.metric()
    rc = norm(g, g.ricci, "ll")
    rm = norm(g, g.riemann, "lllu")
    if isinstance(state.payload, RoundSphere):
        rc, rm = rc[EMBED_HALO], rm[EMBED_HALO]
    return float(rc.max()), float(rm.max())


def curvature_rate_monitor(trajectory: Trajectory, sigma):
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    t = trajectory.times
    norms = np.array([curvature_norms(s) for s in trajectory.states])
    w = t ** (1 - sigma)
    return MonitorSeries(t, w * norms[:, 0], w * norms[:, 1], sigma)


def equivalence_ratio(trajectory: Trajectory):
    """max over t of the two-sided eigenvalue ratio between g(t) and g(0)."""
    g0 = trajectory[0].metric()
    linv = np.linalg.inv(np.linalg.cholesky(g0.components))
    worst = 1.0
    for s in trajectory.states[1:]:
        m = linv @ s.metric().components @ np.swapaxes(linv, -1, -2)
        lam = np.linalg.eigvalsh(0.5 * (m + np.swapaxes(m, -1, -2)))
        worst = max(worst, float(lam.max()), float(1.0 / lam.min()))
    return worst
