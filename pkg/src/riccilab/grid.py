"""Periodic rectangular coordinate charts and the finite-difference stencil.

Array layout used throughout the package: the leading axes of every field are
the sampled grid axes, followed by the tensor component slots.  A chart may
have fewer sampled axes than the manifold dimension; the remaining coordinate
directions are symmetry directions along which every field is constant (used
for warped products, where the fiber coordinates are never sampled).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MIN_POINTS = 8


@dataclass(frozen=True)
class Chart:
    """A periodic box ``prod_a [0, periods[a])`` sampled with ``counts[a]`` points.

    ``offset``/``extent`` describe a window of the full periodic grid (used for
    blockwise evaluation); by default the chart stores the whole grid.
    """

    counts: tuple[int, ...]
    periods: tuple[float, ...] = ()
    dim: int = 0
    fiber_volume: float = 1.0
    offset: tuple[int, ...] = ()
    extent: tuple[int, ...] = ()
    spacing: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        periods = tuple(float(p) for p in self.periods) or (2 * math.pi,) * len(counts)
        if len(periods) != len(counts):
            raise ValueError("one period per sampled axis is required")
        if any(c < MIN_POINTS for c in counts):
            raise ValueError(f"every sampled axis needs at least {MIN_POINTS} points")
        if any(p <= 0 for p in periods):
            raise ValueError("periods must be positive")
        dim = int(self.dim) or len(counts)
        if dim < len(counts):
            raise ValueError("manifold dimension smaller than the number of sampled axes")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "offset", tuple(self.offset) or (0,) * len(counts))
        object.__setattr__(self, "extent", tuple(self.extent) or counts)
        object.__setattr__(self, "spacing", tuple(p / c for p, c in zip(periods, counts)))

    @classmethod
    def uniform(cls, dim, n_points, period=2 * math.pi):
        return cls((n_points,) * dim, (period,) * dim)

    @property
    def grid_ndim(self):
        return len(self.counts)

    @property
    def shape(self):
        return self.extent

    @property
    def is_window(self):
        return self.extent != self.counts or any(self.offset)

    @property
    def min_spacing(self):
        return min(self.spacing)

    @property
    def cell_volume(self):
        return math.prod(self.spacing)

    def coordinates(self):
        """Coordinate arrays (one per sampled axis) broadcast to the grid shape."""
        axes = [
            (np.arange(e) + o) * h
            for e, o, h in zip(self.extent, self.offset, self.spacing)
        ]
        return np.meshgrid(*axes, indexing="ij")

    def window(self, start, stop, halo):
        """Box ``[start, stop)`` on the leading axes, padded by ``halo`` points.

        ``start``/``stop`` are ints (axis 0 only) or tuples covering the
        leading axes; the padding wraps periodically.
        """
        start = (start,) if np.isscalar(start) else tuple(start)
        stop = (stop,) if np.isscalar(stop) else tuple(stop)
        k = len(start)
        offset = tuple(a - halo for a in start) + self.offset[k:]
        extent = tuple(b - a + 2 * halo for a, b in zip(start, stop)) + self.extent[k:]
        return Chart(
            self.counts, self.periods, self.dim, self.fiber_volume, offset, extent
        )

    # -- differentiation ----------------------------------------------------

    def partial(self, f, axis):
        """Fourth-order central difference of ``f`` along coordinate ``axis``.

        Symmetry directions (``axis >= grid_ndim``) differentiate to zero.
        """
        f = np.asarray(f, dtype=float)
        if axis >= self.grid_ndim:
            return np.zeros_like(f)
        p = np.concatenate(
            [_take(f, axis, slice(-2, None)), f, _take(f, axis, slice(0, 2))], axis=axis
        )
        n = f.shape[axis]

        def shifted(k):
            return _take(p, axis, slice(k, k + n))

        out = (shifted(0) - shifted(4)) + 8.0 * (shifted(3) - shifted(1))
        out /= 12.0 * self.spacing[axis]
        return out

    def grad(self, f):
        """All coordinate derivatives, inserted as the first component slot."""
        f = np.asarray(f, dtype=float)
        g = self.grid_ndim
        return np.stack([self.partial(f, a) for a in range(self.dim)], axis=g)

    # -- quadrature ---------------------------------------------------------

    def integrate(self, density, interior=None):
        """Riemann sum of ``density`` against coordinate measure.

        Uses exactly rounded summation over the C-ordered samples, so the
        result does not depend on worker count or memory layout.  ``interior``
        restricts a window to its non-halo slab.
        """
        density = np.asarray(density, dtype=float)
        if interior is not None:
            density = density[interior]
        return math.fsum(density.ravel()) * self.cell_volume * self.fiber_volume


def _take(a, axis, sl):
    index = [slice(None)] * a.ndim
    index[axis] = sl
    return a[tuple(index)]


def blocks(chart, max_points, halo, extent=None):
    """Yield ``(window_chart, interior_slice)`` pairs covering ``chart``.

    A single block covering the full periodic grid (no halo) is produced when
    the chart is small enough; otherwise slabs along axis 0 are used, or
    square pencils over the two leading axes when slabs would be mostly halo.
    ``extent`` restricts the covered index range of the leading axes to
    ``range(extent[a])`` (always windowed, with halo).
    """
    total = math.prod(chart.counts)
    if extent is None:
        if total <= max_points or chart.grid_ndim == 0:
            yield chart, (slice(None),)
            return
        extent = ()
    extent = tuple(extent) + tuple(chart.counts[len(extent):])
    n0 = extent[0]
    if chart.grid_ndim == 1:
        for start, stop in _balanced(n0, max(1, max_points - 2 * halo)):
            yield chart.window(start, stop, halo), (slice(halo, halo + stop - start),)
        return
    n1 = extent[1]
    per_line = math.prod(chart.counts[2:])
    if len(extent) > 2 and extent[1] == chart.counts[1]:
        thickness = max_points // (per_line * n1) - 2 * halo
        if thickness >= 2 * halo:
            for start, stop in _balanced(n0, thickness):
                yield chart.window(start, stop, halo), (slice(halo, halo + stop - start),)
            return
    side = max(1, int(math.isqrt(max_points // per_line)) - 2 * halo)
    for s0, e0 in _balanced(n0, side):
        for s1, e1 in _balanced(n1, side):
            interior = (slice(halo, halo + e0 - s0), slice(halo, halo + e1 - s1))
            yield chart.window((s0, s1), (e0, e1), halo), interior


def _balanced(n, most):
    """Split range(n) into the fewest near-equal pieces of length <= most."""
    pieces = -(-n // most)
    edges = [round(i * n / pieces) for i in range(pieces + 1)]
    return list(zip(edges[:-1], edges[1:]))
