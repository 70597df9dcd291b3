"""Trigonometric test metrics with closed-form derivatives.

A :class:`TrigMetric` is ``g(x) = base + sum_m C_m cos(k_m . x + phi_m)``.
Its derivatives of every order are available in closed form, so
:class:`ExactGeometry` can evaluate connections and curvature without any
finite differencing.  This gives an independent reference route for
measuring the convergence order of the stencil-based geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .contract import contract
from .geometry import invert_spd, riemann_from, ricci_from

AMPLITUDE = 0.15
MAX_WAVENUMBER = 2
MIN_EIGENVALUE = 0.3
CHECK_POINTS = 32


@dataclass(frozen=True)
class TrigMetric:
    base: np.ndarray
    wavevectors: np.ndarray
    phases: np.ndarray
    coeffs: np.ndarray
    period: float = 2 * math.pi

    @property
    def dim(self):
        return self.base.shape[0]

    @classmethod
    def constant(cls, base):
        base = np.asarray(base, dtype=float)
        n = base.shape[0]
        return cls(base, np.zeros((0, n)), np.zeros(0), np.zeros((0, n, n)))

    def scaled(self, c):
        return TrigMetric(c * self.base, self.wavevectors, self.phases, c * self.coeffs, self.period)

    def plus(self, other, weight=1.0):
        """``self + weight * other`` (modes are concatenated)."""
        return TrigMetric(
            self.base + weight * other.base,
            np.concatenate([self.wavevectors, other.wavevectors]),
            np.concatenate([self.phases, other.phases]),
            np.concatenate([self.coeffs, weight * other.coeffs]),
            self.period,
        )

    def jets(self, coords, order):
        """``[g, dg, d2g, ...]`` up to ``order`` derivatives at the given points.

        Derivative indices come first among the component axes, e.g.
        ``d2g[..., a, b, i, j] = d_a d_b g_ij``.
        """
        n = self.dim
        shape = np.shape(coords[0])
        scale = 2 * math.pi / self.period
        base = np.broadcast_to(self.base, shape + (n, n))
        if len(self.phases) == 0:
            return [base.copy()] + [np.zeros(shape + (n,) * (q + 2)) for q in range(1, order + 1)]
        kk = scale * np.asarray(self.wavevectors, dtype=float)
        arg = sum(np.multiply.outer(coords[a], kk[:, a]) for a in range(n)) + self.phases
        cos, sin = np.cos(arg), np.sin(arg)
        out = []
        tensor = np.asarray(self.coeffs, dtype=float)
        for q in range(order + 1):
            # d^q cos(arg) = (cos, -sin, -cos, sin)[q % 4] times k^{(q)}
            wave = (cos, -sin, -cos, sin)[q % 4]
            flat = wave.reshape(-1, wave.shape[-1]) @ tensor.reshape(tensor.shape[0], -1)
            out.append(flat.reshape(shape + tensor.shape[1:]))
            tensor = kk.reshape(kk.shape + (1,) * (tensor.ndim - 1)) * tensor[:, None]
        out[0] = out[0] + base
        return out

    def sample(self, chart):
        return self.jets(chart.coordinates(), 0)[0]

    def min_eigenvalue(self, points=CHECK_POINTS):
        axes = [np.arange(points) * self.period / points] * self.dim
        coords = np.meshgrid(*axes, indexing="ij")
        g = self.jets(coords, 0)[0]
        return float(np.linalg.eigvalsh(g)[..., 0].min())


def random_metric(rng, dim, modes=3, amplitude=AMPLITUDE, kmax=MAX_WAVENUMBER,
                  min_eig=MIN_EIGENVALUE, base=None):
    """Draw ``base + sum of modes`` with entries in [-amplitude, amplitude].

    Draws are rejected until the minimum eigenvalue is at least ``min_eig``.
    A crude spectral-norm bound skips the sampled check whenever it already
    guarantees the floor.
    """
    base = np.eye(dim) if base is None else np.asarray(base, dtype=float)
    floor = float(np.linalg.eigvalsh(base)[0])
    while True:
        ks = rng.integers(-kmax, kmax + 1, size=(modes, dim))
        for row in ks:
            while not row.any():
                row[:] = rng.integers(-kmax, kmax + 1, size=dim)
        phases = rng.uniform(0, 2 * math.pi, size=modes)
        upper = rng.uniform(-amplitude, amplitude, size=(modes, dim, dim))
        coeffs = np.triu(upper) + np.swapaxes(np.triu(upper, 1), -1, -2)
        metric = TrigMetric(base, ks.astype(float), phases, coeffs)
        bound = sum(np.linalg.norm(c, 2) for c in coeffs)
        if floor - bound >= min_eig or metric.min_eigenvalue() >= min_eig:
            return metric


def random_pair(rng, dim, **kw):
    return random_metric(rng, dim, **kw), random_metric(rng, dim, **kw)


def _lowered(d):
    # d_i g_jm + d_j g_im - d_m g_ij on the last three axes
    return d + np.swapaxes(d, -3, -2) - np.moveaxis(d, -3, -1)


class ExactGeometry:
    """Closed-form geometry of a :class:`TrigMetric` sampled on ``chart``.

    Exposes the same attribute names as :class:`~riccilab.geometry.MetricField`
    so either can be handed to the pair formulas.
    """

    fiber_curvature = 0.0

    def __init__(self, chart, metric: TrigMetric, order=3):
        if chart.grid_ndim != metric.dim or chart.dim != metric.dim:
            raise ValueError("closed-form geometry needs a fully sampled chart")
        self.chart = chart
        self.metric = metric
        jets = metric.jets(chart.coordinates(), order)
        self.components = jets[0]
        self.dg = jets[1] if order >= 1 else None
        self.d2g = jets[2] if order >= 2 else None
        self.d3g = jets[3] if order >= 3 else None
        self.inverse, self._lam = invert_spd(self.components)

    @property
    def dim(self):
        return self.metric.dim

    @cached_property
    def min_eigenvalue(self):
        return float(self._lam.min())

    @cached_property
    def volume_density(self):
        return np.sqrt(np.linalg.det(self.components))

    @cached_property
    def dinverse(self):
        return -contract("...kp,...apq,...qm->...akm", self.inverse, self.dg, self.inverse)

    @cached_property
    def d2inverse(self):
        gi, dgi = self.inverse, self.dinverse
        return -(
            contract("...bkp,...apq,...qm->...abkm", dgi, self.dg, gi)
            + contract("...kp,...abpq,...qm->...abkm", gi, self.d2g, gi)
            + contract("...kp,...apq,...bqm->...abkm", gi, self.dg, dgi)
        )

    @cached_property
    def christoffel(self):
        low = _lowered(self.dg)
        return 0.5 * contract("...km,...ijm->...kij", self.inverse, low)

    @cached_property
    def dchristoffel(self):
        low = _lowered(self.dg)
        dlow = _lowered(self.d2g)
        return 0.5 * (
            contract("...akm,...ijm->...akij", self.dinverse, low)
            + contract("...km,...aijm->...akij", self.inverse, dlow)
        )

    @cached_property
    def ddchristoffel(self):
        low = _lowered(self.dg)
        dlow = _lowered(self.d2g)
        ddlow = _lowered(self.d3g)
        return 0.5 * (
            contract("...abkm,...ijm->...abkij", self.d2inverse, low)
            + contract("...bkm,...aijm->...abkij", self.dinverse, dlow)
            + contract("...akm,...bijm->...abkij", self.dinverse, dlow)
            + contract("...km,...abijm->...abkij", self.inverse, ddlow)
        )

    @cached_property
    def riemann(self):
        return riemann_from(self.christoffel, self.dchristoffel)

    @cached_property
    def ricci(self):
        return ricci_from(self.riemann)

    @cached_property
    def scalar(self):
        return contract("...jk,...jk->...", self.inverse, self.ricci)

    @cached_property
    def dricci(self):
        """d_c Rc_jk using only the two traces of the second derivative of Gamma."""
        G, dG = self.christoffel, self.dchristoffel
        gi, dgi, d2gi = self.inverse, self.dinverse, self.d2inverse
        d3 = self.d3g
        low, dlow = _lowered(self.dg), _lowered(self.d2g)
        # sum_i d_c d_i Gamma^i_jk
        trace_up = 0.5 * (
            contract("...ciim,...jkm->...cjk", d2gi, low)
            + contract("...iim,...cjkm->...cjk", dgi, dlow)
            + contract("...cim,...ijkm->...cjk", dgi, dlow)
            + contract("...im,...cijkm->...cjk", gi, d3)
            + contract("...im,...cikjm->...cjk", gi, d3)
            - contract("...im,...cimjk->...cjk", gi, d3)
        )
        # sum_i d_c d_j Gamma^i_ik = d_c d_j (g^im d_k g_im) / 2
        trace_low = 0.5 * (
            contract("...cjim,...kim->...cjk", d2gi, self.dg)
            + contract("...jim,...ckim->...cjk", dgi, self.d2g)
            + contract("...cim,...jkim->...cjk", dgi, self.d2g)
            + contract("...im,...cjkim->...cjk", gi, d3)
        )
        return (
            trace_up
            - trace_low
            + contract("...cpjk,...iip->...cjk", dG, G)
            + contract("...pjk,...ciip->...cjk", G, dG)
            - contract("...cpik,...ijp->...cjk", dG, G)
            - contract("...pik,...cijp->...cjk", G, dG)
        )

    @cached_property
    def dricci_full(self):
        """Same as :attr:`dricci` but through the full second derivative of Gamma."""
        G, dG, ddG = self.christoffel, self.dchristoffel, self.ddchristoffel
        return (
            contract("...ciijk->...cjk", ddG)
            - contract("...cjiik->...cjk", ddG)
            + contract("...cpjk,...iip->...cjk", dG, G)
            + contract("...pjk,...ciip->...cjk", G, dG)
            - contract("...cpik,...ijp->...cjk", dG, G)
            - contract("...pik,...cijp->...cjk", G, dG)
        )
