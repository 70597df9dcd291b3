"""Objects built from a pair of metrics (g, g~) on a shared chart.

``g`` and ``gt`` may be any geometry object exposing ``components``,
``inverse``, ``dg``, ``christoffel``, ``riemann``, ``ricci`` and ``dricci``
(a stencil-based :class:`~riccilab.geometry.MetricField` or a closed-form
:class:`~riccilab.analytic.ExactGeometry`).  Derivative slots are prepended,
so ``nabla_t_h[..., a, i, j]`` is the covariant derivative of h along a.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .contract import contract
from .errors import NonpositiveTime, ToleranceExceeded, ValenceMismatch
from .geometry import christoffel_from, covariant_derivative, inner, norm
from .tolerances import tolerance


def bian_from_derivative(ghat_inv, DV):
    """ghat^{ij} (D_i V_jk - 1/2 D_k V_ij) given ``DV[..., a, i, j] = D_a V_ij``."""
    return contract("...ij,...ijk->...k", ghat_inv, DV) - 0.5 * contract(
        "...ij,...kij->...k", ghat_inv, DV
    )


def bian(ghat, gamma, V, dV=None):
    """Bian(ghat, D, V) for the connection with coefficients ``gamma``."""
    V = np.asarray(V, dtype=float)
    if V.shape[-2:] != (ghat.dim, ghat.dim):
        raise ValenceMismatch("Bian needs a symmetric 2-tensor")
    DV = covariant_derivative(ghat.chart, gamma, V, "ll", dV)
    return bian_from_derivative(ghat.inverse, DV)


def divergence(gt, V, dV=None):
    """delta_gt(V)_k = -gt^{ij} nabla~_i V_jk."""
    DV = covariant_derivative(gt.chart, gt.christoffel, V, "ll", dV)
    return -contract("...ij,...ijk->...k", gt.inverse, DV)


def adjoint_divergence(gt, W, dW=None):
    """delta*_gt(W)_ij = (nabla~_i W_j + nabla~_j W_i) / 2."""
    DW = covariant_derivative(gt.chart, gt.christoffel, W, "l", dW)
    return 0.5 * (DW + np.swapaxes(DW, -1, -2))


@dataclass
class ConsistencyCheck:
    identity: str
    residual: float
    scale: float
    tolerance: float

    @property
    def passed(self):
        return self.residual <= self.tolerance


def consistency_check(identity, chart, lhs, rhs, *terms, raise_on_fail=True):
    residual = float(np.max(np.abs(lhs - rhs), initial=0.0))
    scale = max([float(np.max(np.abs(t), initial=0.0)) for t in (lhs, rhs) + terms])
    tol = tolerance(identity, chart.min_spacing, scale)
    check = ConsistencyCheck(identity, residual, scale, tol)
    if raise_on_fail and not check.passed:
        raise ToleranceExceeded(identity, residual, tol)
    return check


class MetricPair:
    """A pair (g, g~) with h = g - g~ and the derived one- and two-tensors."""

    def __init__(self, g, gt):
        if g.chart.shape != gt.chart.shape or g.dim != gt.dim:
            raise ValenceMismatch("metrics of a pair must share a chart")
        self.g = g
        self.gt = gt
        self.chart = gt.chart

    @property
    def dim(self):
        return self.gt.dim

    @cached_property
    def h(self):
        return self.g.components - self.gt.components

    @cached_property
    def dh(self):
        return self.g.dg - self.gt.dg

    @cached_property
    def nabla_t_g(self):
        return covariant_derivative(self.chart, self.gt.christoffel, self.g.components, "ll", self.g.dg)

    @cached_property
    def nabla_t_h(self):
        return covariant_derivative(self.chart, self.gt.christoffel, self.h, "ll", self.dh)

    @cached_property
    def connection_gap(self):
        """Gamma - Gamma~ by direct subtraction."""
        return self.g.christoffel - self.gt.christoffel

    @cached_property
    def A(self):
        """Connection difference from the nabla~-formula."""
        return christoffel_from(self.g.inverse, self.nabla_t_g)

    @cached_property
    def B(self):
        """Bianchi one-form, computed directly as Bian(g, nabla~, g)."""
        return bian_from_derivative(self.g.inverse, self.nabla_t_g)

    @cached_property
    def B_contracted(self):
        """g_pk g^ij A^p_ij."""
        return contract("...pk,...ij,...pij->...k", self.g.components, self.g.inverse, self.A)

    @cached_property
    def B_from_h(self):
        return bian_from_derivative(self.g.inverse, self.nabla_t_h)

    # -- second-order operators -------------------------------------------

    def L(self, V, dV=None):
        """nabla~_p (g^{pq} nabla~_q V_ij), divergence form."""
        DV = covariant_derivative(self.chart, self.gt.christoffel, V, "ll", dV)
        flux = contract("...pq,...qij->...pij", self.g.inverse, DV)
        Dflux = covariant_derivative(self.chart, self.gt.christoffel, flux, "ull")
        return contract("...ppij->...ij", Dflux)

    def L_expanded(self, V, dV=None):
        """g^{pq} nabla~_p nabla~_q V - g^{pr} g^{qs} (nabla~_p g_rs) nabla~_q V."""
        gamma = self.gt.christoffel
        DV = covariant_derivative(self.chart, gamma, V, "ll", dV)
        DDV = covariant_derivative(self.chart, gamma, DV, "lll")
        gi = self.g.inverse
        return contract("...pq,...pqij->...ij", gi, DDV) - contract(
            "...pr,...qs,...prs,...qij->...ij", gi, gi, self.nabla_t_g, DV
        )

    @cached_property
    def L_h(self):
        return self.L(self.h, self.dh)

    @cached_property
    def nabla_t_A(self):
        return covariant_derivative(self.chart, self.gt.christoffel, self.A, "ull")

    def ricci_difference_terms(self):
        """The four terms whose sum equals Rc - Rc~ (indices j, k free)."""
        A, DA = self.A, self.nabla_t_A
        return (
            contract("...lljk->...jk", DA),
            -contract("...jlkl->...jk", DA),
            contract("...lpl,...pjk->...jk", A, A),
            -contract("...ljp,...pkl->...jk", A, A),
        )

    @cached_property
    def ricci_gap(self):
        return self.g.ricci - self.gt.ricci


def connection_difference(pair: MetricPair, check=True):
    """A from the nabla~-formula, cross-checked against Gamma - Gamma~."""
    if check:
        consistency_check("connection-difference", pair.chart, pair.A, pair.connection_gap)
    return pair.A


def bianchi_one_form(pair: MetricPair, check=True):
    if check:
        consistency_check("bianchi-one-form", pair.chart, pair.B, pair.B_contracted)
        consistency_check("bianchi-one-form", pair.chart, pair.B, pair.B_from_h)
    return pair.B


def operator_L(pair: MetricPair, V, dV=None, check=True):
    out = pair.L(V, dV)
    if check:
        consistency_check("operator-L", pair.chart, out, pair.L_expanded(V, dV))
    return out


def adjointness(gt, V, W, raise_on_fail=True):
    """Integral check that delta* is the L2(gt) adjoint of delta.

    Compares the integrals of <delta*W, V> and <W, delta V> for a symmetric
    2-tensor ``V`` and a one-form ``W``.
    """
    chart = gt.chart
    vol = gt.volume_density
    lhs = inner(gt, adjoint_divergence(gt, W), V, "ll") * vol
    rhs = inner(gt, W, divergence(gt, V), "l") * vol
    a, b = chart.integrate(lhs), chart.integrate(rhs)
    scale = max(chart.integrate(np.abs(lhs)), chart.integrate(np.abs(rhs)))
    tol = tolerance("adjointness", chart.min_spacing, scale)
    check = ConsistencyCheck("adjointness", abs(a - b), scale, tol)
    if raise_on_fail and not check.passed:
        raise ToleranceExceeded("adjointness", check.residual, tol)
    return check


def ricci_identity(g, W, raise_on_fail=True):
    """[nabla_i, nabla_j] W_k = -R_ijk^l W_l for a one-form ``W``."""
    chart = g.chart
    D = covariant_derivative(chart, g.christoffel, W, "l")
    DD = covariant_derivative(chart, g.christoffel, D, "ll")
    lhs = DD - np.swapaxes(DD, -3, -2)
    rhs = -contract("...ijkl,...l->...ijk", g.riemann, W)
    return consistency_check("ricci-identity", chart, lhs, rhs, raise_on_fail=raise_on_fail)


@dataclass
class RicciDifference:
    residual: np.ndarray
    check: ConsistencyCheck
    remainder: np.ndarray
    bound_density: np.ndarray

    def fitted_constant(self, floor=1e-12):
        """Smallest c with |remainder| <= c * bound_density pointwise."""
        mask = self.bound_density > floor * max(1.0, float(self.bound_density.max()))
        if not mask.any():
            return 0.0
        return float(np.max(self.remainder[mask] / self.bound_density[mask]))


def ricci_difference_residual(pair: MetricPair, reference=None, raise_on_fail=True):
    """Exact-identity residual for Rc - Rc~ and the structural remainder.

    ``reference`` optionally supplies an independently computed Rc - Rc~
    (e.g. from closed forms); by default the pair's own curvature is used.
    """
    terms = pair.ricci_difference_terms()
    rhs = sum(terms)
    lhs = pair.ricci_gap if reference is None else reference
    check = consistency_check("ricci-difference", pair.chart, lhs, rhs, *terms, raise_on_fail=raise_on_fail)
    gt = pair.gt
    rem = -2.0 * pair.ricci_gap - pair.L_h + 2.0 * adjoint_divergence(gt, pair.B)
    rem_norm = norm(gt, rem, "ll")
    ginv = norm(gt, pair.g.inverse, "uu")
    bound = ginv**2 * norm(gt, pair.nabla_t_h, "lll") ** 2 + ginv * norm(
        gt, gt.riemann, "lllu"
    ) * norm(gt, pair.h, "ll")
    return RicciDifference(lhs - rhs, check, rem_norm, bound)


@dataclass
class ReformulationTriple:
    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    t: float
    sigma: float
    a: float
    nabla_X: np.ndarray

    def bound_terms(self, gt):
        """Pointwise (|U|, t^sigma |nabla~X|, |Y| / (a t^(1/2)))."""
        return (
            norm(gt, self.U, "ull"),
            self.t**self.sigma * norm(gt, self.nabla_X, "lll"),
            norm(gt, self.Y, "l") / (self.a * np.sqrt(self.t)),
        )

    def fitted_constant(self, gt, floor=1e-12):
        u, dx, y = self.bound_terms(gt)
        den = dx + y
        mask = den > floor * max(1.0, float(den.max()))
        if not mask.any():
            return 0.0
        return float(np.max(u[mask] / den[mask]))


def reformulation_triple(pair: MetricPair, t, sigma, a):
    if t <= 0:
        raise NonpositiveTime(f"t = {t} must be positive")
    if not 0 < sigma < 1 or a <= 0:
        raise ValueError("need 0 < sigma < 1 and a > 0")
    c = t ** (-(1 + sigma) / 2)
    n = pair.dim
    eye = np.eye(n)
    B = pair.B
    dginv = pair.g.inverse - pair.gt.inverse
    U = c * (
        contract("...kp,...pij->...kij", dginv, pair.nabla_t_h)
        - contract("ki,...j->...kij", eye, B)
        - contract("kj,...i->...kij", eye, B)
    )
    return ReformulationTriple(c * pair.h, a * t ** (-sigma / 2) * B, U, t, sigma, a, c * pair.nabla_t_h)
