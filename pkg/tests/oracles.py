"""Closed-form reference values used by the tests (independent of the stencil code)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrigScalar:
    """u(x) = sum_m a_m cos(k_m . x + p_m) with exact derivatives."""

    amps: np.ndarray
    waves: np.ndarray
    phases: np.ndarray

    @classmethod
    def draw(cls, rng, dim, modes=2, amplitude=0.2, kmax=2):
        waves = rng.integers(-kmax, kmax + 1, size=(modes, dim))
        waves[np.all(waves == 0, axis=1), 0] = 1
        return cls(rng.uniform(-amplitude, amplitude, modes), waves.astype(float),
                   rng.uniform(0, 2 * math.pi, modes))

    def _arg(self, coords):
        return sum(np.multiply.outer(c, self.waves[:, a]) for a, c in enumerate(coords)) + self.phases

    def value(self, coords):
        return np.cos(self._arg(coords)) @ self.amps

    def grad(self, coords):
        s = -np.sin(self._arg(coords)) * self.amps
        return s @ self.waves

    def hessian(self, coords):
        c = -np.cos(self._arg(coords)) * self.amps
        return np.einsum("...m,ma,mb->...ab", c, self.waves, self.waves)


def conformal_metric(u, coords, dim):
    return np.exp(2 * u.value(coords))[..., None, None] * np.eye(dim)


def conformal_connection(du):
    """Gamma^k_ij of e^{2u} delta (layout [k, i, j]), linear in du."""
    n = du.shape[-1]
    eye = np.eye(n)
    return (np.einsum("ki,...j->...kij", eye, du) + np.einsum("kj,...i->...kij", eye, du)
            - np.einsum("ij,...k->...kij", eye, du))


def conformal_ricci(du, hess):
    """Rc of e^{2u} delta in dimension n."""
    n = du.shape[-1]
    lap = np.trace(hess, axis1=-2, axis2=-1)
    grad2 = np.sum(du * du, axis=-1)
    return (-(n - 2) * (hess - np.einsum("...i,...j->...ij", du, du))
            - (lap + (n - 2) * grad2)[..., None, None] * np.eye(n))


def einstein_ricci_norm(n, r):
    """|Rc|_g of a round n-sphere of radius r."""
    return (n - 1) * math.sqrt(n) / r**2


def fourier_mode(chart, wave, matrix):
    """V(x) = cos(k . x) * matrix and its Laplacian eigenvalue -|k|^2."""
    x = chart.coordinates()
    arg = sum(k * c for k, c in zip(wave, x))
    return np.cos(arg)[..., None, None] * np.asarray(matrix, float), -float(np.dot(wave, wave))


def dirichlet_energy_of_mode(chart, wave, matrix):
    """Integral of |d(cos(k.x) M)|^2 over the flat torus: |k|^2 |M|^2 Vol / 2."""
    vol = math.prod(chart.periods)
    return float(np.dot(wave, wave)) * float(np.sum(np.square(matrix))) * vol / 2
