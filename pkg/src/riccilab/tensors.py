"""Tensor fields on a chart and their flat binary layout.

Component slots are described by a string of ``'u'`` (contravariant) and
``'l'`` (covariant) characters, one per slot, in storage order.  Christoffel
symbols and connection differences use ``'ull'`` (``T[..., k, i, j]`` is
``T^k_{ij}``); the (3,1) curvature tensor uses ``'lllu'``.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValenceMismatch
from .grid import Chart

MAGIC = b"RLTF"
VERSION = 1


@dataclass
class TensorField:
    chart: Chart
    components: np.ndarray
    slots: str = ""
    symmetric: tuple[int, int] | None = None

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float)
        expected = tuple(self.chart.shape) + (self.chart.dim,) * len(self.slots)
        if self.components.shape != expected:
            raise ValenceMismatch(
                f"component array {self.components.shape} does not match {expected}"
            )
        if set(self.slots) - {"u", "l"}:
            raise ValueError(f"bad slot string {self.slots!r}")

    @property
    def valence(self):
        """(contravariant, covariant) slot counts."""
        return self.slots.count("u"), self.slots.count("l")

    def check_symmetry(self, atol=0.0):
        if self.symmetric is None:
            return True
        i, j = (self.chart.grid_ndim + s for s in self.symmetric)
        swapped = np.swapaxes(self.components, i, j)
        return bool(np.max(np.abs(swapped - self.components), initial=0.0) <= atol)

    def __add__(self, other):
        _same_valence(self, other)
        return TensorField(self.chart, self.components + other.components, self.slots)

    def __mul__(self, c):
        return TensorField(self.chart, self.components * c, self.slots, self.symmetric)

    __rmul__ = __mul__


def _same_valence(a, b):
    if a.slots != b.slots:
        raise ValenceMismatch(f"slots {a.slots!r} vs {b.slots!r}")


# -- binary layout -------------------------------------------------------------
#
# header: magic, version, n (manifold dim), grid ndim, N per axis (int32 each),
#         period per axis (float64 each), fiber volume, slot count, slot string (ascii),
#         optional time stamp flag + float64 time
# body:   row-major float64 components, little endian


def dumps(field, time=None):
    buf = io.BytesIO()
    chart = field.chart
    buf.write(MAGIC)
    buf.write(struct.pack("<ii", VERSION, chart.dim))
    buf.write(struct.pack("<i", chart.grid_ndim))
    buf.write(struct.pack(f"<{chart.grid_ndim}i", *chart.counts))
    buf.write(struct.pack(f"<{chart.grid_ndim}d", *chart.periods))
    buf.write(struct.pack("<d", chart.fiber_volume))
    buf.write(struct.pack("<i", len(field.slots)))
    buf.write(field.slots.encode("ascii"))
    if time is None:
        buf.write(struct.pack("<i", 0))
    else:
        buf.write(struct.pack("<id", 1, float(time)))
    buf.write(np.ascontiguousarray(field.components, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data):
    """Inverse of :func:`dumps`; returns ``(field, time)``."""
    view = memoryview(data)
    if bytes(view[:4]) != MAGIC:
        raise ValueError("not a tensor-field file")
    pos = 4
    version, dim, ndim = struct.unpack_from("<iii", view, pos)
    pos += 12
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    counts = struct.unpack_from(f"<{ndim}i", view, pos)
    pos += 4 * ndim
    periods = struct.unpack_from(f"<{ndim}d", view, pos)
    pos += 8 * ndim
    (fiber_volume,) = struct.unpack_from("<d", view, pos)
    pos += 8
    (nslots,) = struct.unpack_from("<i", view, pos)
    pos += 4
    slots = bytes(view[pos : pos + nslots]).decode("ascii")
    pos += nslots
    (has_time,) = struct.unpack_from("<i", view, pos)
    pos += 4
    time = None
    if has_time:
        (time,) = struct.unpack_from("<d", view, pos)
        pos += 8
    chart = Chart(counts, periods, dim, fiber_volume)
    shape = tuple(counts) + (dim,) * nslots
    comps = np.frombuffer(bytes(view[pos:]), dtype="<f8").reshape(shape).astype(float)
    return TensorField(chart, comps, slots), time


def save(path, field, time=None):
    with open(path, "wb") as fh:
        fh.write(dumps(field, time))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
