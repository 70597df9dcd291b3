import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from riccilab.config import parse_config
from riccilab.contract import contract
from riccilab.difference import MetricPair, bian, connection_difference
from riccilab.energy import combined_energy, profile, profile_derivative
from riccilab.geometry import MetricField, inner, invert_spd
from riccilab.grid import Chart, blocks
from riccilab.tensors import TensorField, dumps, loads
from riccilab.verify import sample_pair

seeds = st.integers(0, 2**32 - 1)

SPECS = [
    "...ij,...jk->...ik",
    "...kp,...pij->...kij",
    "...ij,...ijk->...k",
    "...pk,...ij,...pij->...k",
    "...ma,...lb,...ab,...mlk->...k",
    "...ijkl,...l->...ijk",
    "...iljk->...ijkl",
    "...ijki->...jk",
    "ki,...j->...kij",
]


def operand_shapes(spec, grid, n):
    lhs = spec.split("->")[0].split(",")
    return [(grid if s.startswith("...") else ()) + (n,) * len(s.replace("...", "")) for s in lhs]


@given(seeds, st.sampled_from(SPECS), st.integers(2, 3))
def test_contract_matches_einsum(seed, spec, n):
    rng = np.random.default_rng(seed)
    ops = [rng.normal(size=s) for s in operand_shapes(spec, (4, 3), n)]
    assert np.allclose(contract(spec, *ops), np.einsum(spec, *ops), rtol=1e-12, atol=1e-12)


@given(seeds, st.integers(1, 2), st.integers(2, 3), st.text("ul", max_size=3),
       st.one_of(st.none(), st.floats(-1e6, 1e6)))
def test_serialization_round_trip(seed, ndim, dim, slots, time):
    rng = np.random.default_rng(seed)
    counts = tuple(int(c) for c in rng.integers(8, 12, size=ndim))
    chart = Chart(counts, tuple(rng.uniform(1, 7, size=ndim)), max(dim, ndim))
    field = TensorField(chart, rng.normal(size=counts + (chart.dim,) * len(slots)), slots)
    back, t = loads(dumps(field, time))
    assert t == time
    assert back.chart == chart and back.slots == slots
    assert np.array_equal(back.components, field.components)


@given(seeds, st.integers(2, 3))
def test_inverse_and_extreme_eigenvalue(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(20, n, n))
    g = a @ np.swapaxes(a, -1, -2) + 0.1 * np.eye(n)
    inv, lam = invert_spd(g)
    assert np.allclose(inv @ g, np.eye(n), atol=1e-9)
    assert np.allclose(lam, np.linalg.eigvalsh(g)[:, 0], rtol=1e-8, atol=1e-10)


@given(st.lists(st.integers(8, 24), min_size=1, max_size=3), st.integers(20, 600), st.integers(1, 4))
def test_blocks_cover_grid_once(counts, max_points, halo):
    chart = Chart(tuple(counts))
    hits = np.zeros(chart.counts, dtype=int)
    for win, interior in blocks(chart, max_points, halo):
        local = [np.arange(e) for e in win.extent]
        idx = np.ix_(*[(o + ax) % c for o, ax, c in zip(win.offset, local, chart.counts)])
        mark = np.zeros(win.extent, dtype=int)
        mark[interior] = 1
        np.add.at(hits, idx, mark)
    assert np.all(hits == 1)


@given(seeds, st.floats(-5, 5), st.integers(0, 1))
def test_partial_is_linear(seed, c, axis):
    rng = np.random.default_rng(seed)
    chart = Chart.uniform(2, 8)
    f, g = rng.normal(size=(2,) + chart.shape)
    assert np.allclose(chart.partial(f + c * g, axis), chart.partial(f, axis) + c * chart.partial(g, axis),
                       atol=1e-10)


@given(seeds)
def test_inner_product_properties(seed):
    rng = np.random.default_rng(seed)
    chart = Chart.uniform(2, 8)
    a = rng.normal(size=chart.shape + (2, 2))
    g = MetricField(chart, a @ np.swapaxes(a, -1, -2) + 0.5 * np.eye(2))
    U, V, W = rng.normal(size=(3,) + chart.shape + (2, 2))
    assert np.allclose(inner(g, V, W, "lu"), inner(g, W, V, "lu"))
    assert np.allclose(inner(g, U + 2 * V, W, "ll"), inner(g, U, W, "ll") + 2 * inner(g, V, W, "ll"))
    assert np.all(inner(g, V, V, "ul") >= 0)


@given(st.floats(-10, 10))
def test_profile_bounds(s):
    phi, dphi = float(profile(s)), float(profile_derivative(s))
    assert 0.0 <= phi <= 1.0 and dphi <= 0.0
    assert dphi**2 <= 10.0 * phi + 1e-15


@given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3), st.floats(0, 1e3),
       st.floats(1e-3, 1), st.floats(0.05, 0.95), st.floats(0.1, 10))
def test_combined_energy_is_linear(B1, H1, B2, H2, t, sigma, a):
    both = combined_energy(B1 + B2, H1 + H2, t, sigma, a)
    parts = combined_energy(B1, H1, t, sigma, a) + combined_energy(B2, H2, t, sigma, a)
    assert math.isclose(both, parts, rel_tol=1e-12, abs_tol=1e-9)


@given(seeds, st.floats(-3, 3))
def test_bian_is_linear(seed, c):
    m = sample_pair(seed % 1000, 0, 2)[0]
    chart = Chart.uniform(2, 8)
    g = MetricField(chart, m.sample(chart))
    rng = np.random.default_rng(seed)
    V, W = rng.normal(size=(2,) + g.components.shape)
    G = g.christoffel
    assert np.allclose(bian(g, G, V + c * W), bian(g, G, V) + c * bian(g, G, W), atol=1e-9)


@given(seeds, st.integers(2, 3))
def test_dual_connection_difference_on_random_pairs(seed, dim):
    m, mt = sample_pair(seed, 0, dim)
    chart = Chart.uniform(dim, 8 if dim == 3 else 16)
    pair = MetricPair(MetricField(chart, m.sample(chart)), MetricField(chart, mt.sample(chart)))
    connection_difference(pair)


@given(st.integers(0, 10**6), st.floats(0.05, 0.95), st.lists(st.sampled_from([2, 3]), min_size=1, max_size=2),
       st.sampled_from([32, 64, 128]), st.booleans())
def test_config_round_trip(seed, sigma, dims, resolution, controls):
    text = (f"scenario = verify-identities\nseed = {seed}\nsigma = {sigma!r}\n"
            f"dims = {', '.join(map(str, dims))}\nresolution = {resolution}\n"
            f"negative_controls = {'yes' if controls else 'no'}\n")
    cfg = parse_config(text)
    assert (cfg.seed, cfg.sigma, cfg.dims, cfg.resolution, cfg.negative_controls) == (
        seed, sigma, dims, resolution, controls)
