"""Metrics, connections and curvature on a periodic chart.

Index conventions (fixed by the round-sphere sign check in the tests):

* ``gamma[..., k, i, j]``      = Gamma^k_{ij}
* ``riemann[..., i, j, k, l]`` = R_{ijk}^l with
  R_{ijk}^l = d_i Gamma^l_{jk} - d_j Gamma^l_{ik} + Gamma^p_{jk} Gamma^l_{ip} - Gamma^p_{ik} Gamma^l_{jp}
  so that (nabla_i nabla_j - nabla_j nabla_i) W_k = -R_{ijk}^p W_p
* ``ricci[..., j, k]``         = R_{ijk}^i
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .contract import contract
from .errors import SingularMetric, ValenceMismatch
from .grid import Chart

EIGENVALUE_FLOOR = 1e-6
INVERSE_TOL = 1e-12
_LETTERS = "bcdefghmnopqrs"


@dataclass(frozen=True)
class CurvatureBundle:
    gamma: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray


def _extreme_eigenvalues(g):
    """(smallest, largest) eigenvalue per point; closed forms for n <= 3."""
    n = g.shape[-1]
    if n == 1:
        return g[..., 0, 0], g[..., 0, 0]
    if n == 2:
        mean = 0.5 * (g[..., 0, 0] + g[..., 1, 1])
        rad = np.hypot(0.5 * (g[..., 0, 0] - g[..., 1, 1]), g[..., 0, 1])
        return mean - rad, mean + rad
    if n == 3:
        # trigonometric solution of the characteristic cubic
        q = np.trace(g, axis1=-2, axis2=-1) / 3.0
        off = g[..., 0, 1] ** 2 + g[..., 0, 2] ** 2 + g[..., 1, 2] ** 2
        diag = sum((g[..., i, i] - q) ** 2 for i in range(3))
        p = np.sqrt((diag + 2.0 * off) / 6.0)
        safe = np.where(p > 0, p, 1.0)
        shifted = (g - q[..., None, None] * np.eye(3)) / safe[..., None, None]
        r = np.clip(np.linalg.det(shifted) / 2.0, -1.0, 1.0)
        phi = np.arccos(r) / 3.0
        return q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0), q + 2.0 * p * np.cos(phi)
    lam = np.linalg.eigvalsh(g)
    return lam[..., 0], lam[..., -1]


def _adjugate_inverse(g):
    n = g.shape[-1]
    if n == 1:
        return 1.0 / g
    if n == 2:
        a, b, d = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
        det = a * d - b * b
        return np.stack([np.stack([d, -b], -1), np.stack([-b, a], -1)], -2) / det[..., None, None]
    cof = np.empty_like(g)
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != i]
            c = [k for k in range(3) if k != j]
            cof[..., j, i] = (-1) ** (i + j) * (
                g[..., r[0], c[0]] * g[..., r[1], c[1]] - g[..., r[0], c[1]] * g[..., r[1], c[0]]
            )
    det = contract("...i,...i->...", g[..., 0, :], cof[..., :, 0])
    return cof / det[..., None, None]


def invert_spd(g, floor=EIGENVALUE_FLOOR):
    """Pointwise inverse of a symmetric positive-definite field.

    Returns ``(inverse, min_eigenvalue)``; raises :class:`SingularMetric` if any
    point has an eigenvalue at or below ``floor``.  Small matrices use the
    adjugate, larger ones a Cholesky factorization; the result is checked
    against the identity with a condition-scaled threshold.
    """
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        raise SingularMetric("empty metric")
    lam_min, lam_max = _extreme_eigenvalues(g)
    worst = float(lam_min.min())
    if not np.isfinite(worst) or worst <= floor:
        raise SingularMetric(f"minimum eigenvalue {worst:.3e} at or below {floor:.1e}")
    n = g.shape[-1]
    if n <= 3:
        inv = _adjugate_inverse(g)
    else:
        linv = np.linalg.inv(np.linalg.cholesky(g))
        inv = contract("...ki,...kj->...ij", linv, linv)
    inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
    err = np.max(np.abs(contract("...ik,...kj->...ij", inv, g) - np.eye(n)))
    cond = float(np.max(lam_max / lam_min))
    if err > INVERSE_TOL * max(1.0, cond):
        raise SingularMetric(f"inverse check failed (residual {err:.2e}, condition {cond:.1e})")
    return inv, lam_min


def christoffel_from(ginv, dg):
    """Gamma^k_{ij} from the inverse metric and ``dg[..., a, i, j] = d_a g_ij``."""
    lowered = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    # lowered[..., i, j, m] = d_i g_jm + d_j g_im - d_m g_ij
    return 0.5 * contract("...km,...ijm->...kij", ginv, lowered)


def riemann_from(gamma, dgamma):
    """R_{ijk}^l from Gamma and ``dgamma[..., a, l, j, k] = d_a Gamma^l_{jk}``."""
    d = contract("...iljk->...ijkl", dgamma)
    quad = contract("...pjk,...lip->...ijkl", gamma, gamma)
    return d - np.swapaxes(d, -4, -3) + quad - np.swapaxes(quad, -4, -3)


def ricci_from(riemann):
    return contract("...ijki->...jk", riemann)


def fiber_correction(dim, fiber_axes, kappa):
    """(3,1) curvature of a round fiber of sectional curvature ``kappa``.

    Written in coordinates where the fiber metric is ``psi^2 * identity`` (the
    equatorial frame), in which the correction is independent of ``psi``.
    """
    corr = np.zeros((dim,) * 4)
    for a in fiber_axes:
        for b in fiber_axes:
            if a == b:
                continue
            # R_{ab b}^a = kappa, R_{ab a}^b = -kappa
            corr[a, b, b, a] += kappa
            corr[a, b, a, b] -= kappa
    return corr


class MetricField:
    """A symmetric positive-definite (0,2) field with lazily cached geometry.

    ``fiber_curvature`` is nonzero only for warped-product charts whose
    symmetry directions model a round sphere fiber; see
    :func:`fiber_correction`.
    """

    def __init__(self, chart: Chart, components, fiber_curvature=0.0):
        g = np.asarray(components, dtype=float)
        n = chart.dim
        if g.shape != tuple(chart.shape) + (n, n):
            raise ValenceMismatch(f"metric array has shape {g.shape}")
        if np.max(np.abs(g - np.swapaxes(g, -1, -2)), initial=0.0) > 0.0:
            g = 0.5 * (g + np.swapaxes(g, -1, -2))
        self.chart = chart
        self.components = g
        self.fiber_curvature = float(fiber_curvature)
        self.inverse, self._lam = invert_spd(g)
        if self.fiber_curvature and chart.dim - chart.grid_ndim < 2:
            raise ValueError("a curved fiber needs at least two symmetry directions")

    @property
    def dim(self):
        return self.chart.dim

    @cached_property
    def min_eigenvalue(self):
        return float(self._lam.min())

    @cached_property
    def volume_density(self):
        return np.sqrt(np.linalg.det(self.components))

    @cached_property
    def dg(self):
        return self.chart.grad(self.components)

    @cached_property
    def christoffel(self):
        return christoffel_from(self.inverse, self.dg)

    @cached_property
    def dchristoffel(self):
        return self.chart.grad(self.christoffel)

    @cached_property
    def riemann(self):
        rm = riemann_from(self.christoffel, self.dchristoffel)
        if self.fiber_curvature:
            fiber = range(self.chart.grid_ndim, self.dim)
            rm = rm + fiber_correction(self.dim, fiber, self.fiber_curvature)
        return rm

    @cached_property
    def ricci(self):
        return ricci_from(self.riemann)

    @cached_property
    def scalar(self):
        return contract("...jk,...jk->...", self.inverse, self.ricci)

    @cached_property
    def dricci(self):
        return self.chart.grad(self.ricci)

    @property
    def curvature(self):
        return CurvatureBundle(self.christoffel, self.riemann, self.ricci, self.scalar)

    def with_components(self, components):
        return MetricField(self.chart, components, self.fiber_curvature)

    def volume(self):
        return self.chart.integrate(self.volume_density)


def christoffel(g: MetricField):
    return g.christoffel


def curvature(g: MetricField) -> CurvatureBundle:
    return g.curvature


def covariant_derivative(chart, gamma, V, slots, dV=None):
    """Covariant derivative with the derivative index prepended.

    ``gamma`` are the connection coefficients, ``slots`` the slot string of
    ``V``.  ``dV`` may supply exact partial derivatives (same layout as
    ``chart.grad(V)``); otherwise the stencil is applied.
    """
    V = np.asarray(V, dtype=float)
    if dV is None:
        dV = chart.grad(V)
    out = np.array(dV, dtype=float, copy=True)
    letters = _LETTERS[: len(slots)]
    for p, kind in enumerate(slots):
        inner = letters[:p] + "z" + letters[p + 1 :]
        if kind == "l":
            spec = f"...za{letters[p]},...{inner}->...a{letters}"
            out -= contract(spec, gamma, V)
        else:
            spec = f"...{letters[p]}az,...{inner}->...a{letters}"
            out += contract(spec, gamma, V)
    return out


def raise_all(ginv, g, V, slots):
    """Flip every slot of ``V`` using ``ginv`` (lower slots) or ``g`` (upper)."""
    letters = _LETTERS[: len(slots)]
    out = np.asarray(V, dtype=float)
    for p, kind in enumerate(slots):
        src = letters[:p] + "z" + letters[p + 1 :]
        mat = ginv if kind == "l" else g
        out = contract(f"...{letters[p]}z,...{src}->...{letters}", mat, out)
    return out


def inner(metric, V, W, slots, slots_w=None):
    """Pointwise <V, W> induced by ``metric`` on the bundle described by ``slots``."""
    if slots_w is not None and slots_w != slots:
        raise ValenceMismatch(f"slots {slots!r} vs {slots_w!r}")
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if V.shape != W.shape:
        raise ValenceMismatch(f"shapes {V.shape} vs {W.shape}")
    k = len(slots)
    Vr = raise_all(metric.inverse, metric.components, V, slots)
    axes = tuple(range(V.ndim - k, V.ndim))
    return np.sum(Vr * W, axis=axes)


def norm2(metric, V, slots):
    return np.maximum(inner(metric, V, V, slots), 0.0)


def norm(metric, V, slots):
    return np.sqrt(norm2(metric, V, slots))
