import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from isoblock.lattice import (
    Field, LatticeShape, PointCloud, block_mean, block_sum, build_compressed_grid, build_prefix,
    is_monotone, read_field_csv, read_point_cloud_csv, write_field_csv, write_point_cloud_csv,
)
from isoblock.simulation import ExperimentSpec, gen_mean_field

dims_st = st.lists(st.integers(1, 4), min_size=1, max_size=3).map(tuple)


def direct_sum(values, u, v):
    # 1-based inclusive box by plain iteration
    total = 0.0
    for x in itertools.product(*[range(a - 1, b) for a, b in zip(u, v)]):
        total += values[x]
    return total


def test_shape_basics():
    s = LatticeShape((3, 2))
    assert s.n == 6 and s.d == 2 and str(s) == "3x2"
    assert LatticeShape.parse("3x2") == s
    # dimension 1 runs fastest
    assert [s.multi_index(i) for i in range(3)] == [(1, 1), (2, 1), (3, 1)]
    assert s.coordinates().shape == (6, 2)


@pytest.mark.parametrize("bad", [(), (0, 2), (3, -1)])
def test_shape_rejects(bad):
    with pytest.raises(ValueError):
        LatticeShape(bad)


@given(dims_st, st.data())
def test_flat_multi_bijection(dims, data):
    s = LatticeShape(dims)
    seen = {s.multi_index(i) for i in range(s.n)}
    assert len(seen) == s.n
    k = data.draw(st.integers(0, s.n - 1))
    assert s.flat_index(s.multi_index(k)) == k


def test_index_bounds():
    s = LatticeShape((2, 2))
    with pytest.raises(ValueError):
        s.to_internal((0, 1))
    with pytest.raises(ValueError):
        s.to_internal((1, 3))
    with pytest.raises(ValueError):
        s.multi_index(4)


def test_field_is_readonly_and_finite():
    f = Field((2, 2), np.arange(4.0))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        Field((2,), [1.0, np.nan])
    with pytest.raises(ValueError):
        Field((2, 2), [1.0, 2.0, 3.0])
    assert f[(2, 1)] == 1.0  # site order: second site is (2, 1)


def test_prefix_1d():
    t = build_prefix(Field((3,), [1.0, 2.0, 3.0]))
    assert t.cums.tolist() == [0.0, 1.0, 3.0, 6.0]


def test_prefix_zero():
    t = build_prefix(Field((2, 2), np.zeros((2, 2))))
    assert not t.cums.any()


def test_prefix_random_boxes(rng):
    vals = rng.normal(size=(3, 4, 2))
    t = build_prefix(Field((3, 4, 2), vals))
    for _ in range(50):
        u = [int(rng.integers(1, n + 1)) for n in vals.shape]
        v = [int(rng.integers(a, n + 1)) for a, n in zip(u, vals.shape)]
        assert block_sum(t, u, v) == pytest.approx(direct_sum(vals, u, v), rel=1e-12, abs=1e-12)


def test_prefix_recovers_sites(rng):
    vals = rng.normal(size=(4, 3))
    t = build_prefix(Field((4, 3), vals))
    for x in itertools.product(range(1, 5), range(1, 4)):
        assert block_sum(t, x, x) == pytest.approx(vals[x[0] - 1, x[1] - 1], abs=1e-14)


def test_experiment_field_block():
    f = gen_mean_field(ExperimentSpec.default("I"))
    t = build_prefix(f)
    expect = sum(f[(i, j)] for i in (1, 2, 3) for j in (1, 2))
    assert block_sum(t, (1, 1), (3, 2)) == pytest.approx(expect, rel=1e-14)
    assert block_mean(t, (1, 1), (3, 2)) == pytest.approx(expect / 6, rel=1e-14)


def test_block_sum_rejects_unordered():
    t = build_prefix(Field((3, 3), np.ones((3, 3))))
    with pytest.raises(ValueError):
        block_sum(t, (2, 2), (1, 3))
    with pytest.raises(ValueError):
        block_sum(t, (1, 1), (4, 1))


@given(hnp.arrays(np.int64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=5),
                  elements=st.integers(-1000, 1000)), st.data())
def test_block_sum_exact_and_additive(vals, data):
    t = build_prefix(Field(vals.shape, vals.astype(float)))
    u = [data.draw(st.integers(1, n)) for n in vals.shape]
    v = [data.draw(st.integers(a, n)) for a, n in zip(u, vals.shape)]
    whole = block_sum(t, u, v)
    assert whole == direct_sum(vals, u, v)  # integers: exact
    ax = data.draw(st.integers(0, vals.ndim - 1))
    if v[ax] > u[ax]:
        cut = data.draw(st.integers(u[ax], v[ax] - 1))
        left_v = list(v)
        left_v[ax] = cut
        right_u = list(u)
        right_u[ax] = cut + 1
        assert block_sum(t, u, left_v) + block_sum(t, right_u, v) == whole


def test_is_monotone():
    assert is_monotone(np.array([[1, 2], [2, 3]]))
    assert not is_monotone(np.array([[1, 0], [2, 3]]))
    assert is_monotone(np.array([1.0, 1.0 - 1e-12]), atol=1e-9)


def test_compressed_grid_empty():
    g = build_compressed_grid(PointCloud(np.empty((0, 2)), [], d=2))
    assert g.n == 0 and g.box_count([0, 0], [1, 1]) == 0


def test_compressed_grid_single():
    g = build_compressed_grid(PointCloud([[0.3, 0.6]], [5.0]))
    assert (g.box_count([0.3, 0.1], [0.9, 0.6]), g.box_sum([0.3, 0.1], [0.9, 0.6])) == (1, 5.0)
    assert g.box_count([0.31, 0.0], [1, 1]) == 0


def test_compressed_grid_matches_enumeration(rng):
    pts = rng.random((200, 2))
    y = rng.normal(size=200)
    g = build_compressed_grid(PointCloud(pts, y))
    assert g.box_count([0, 0], [1, 1]) == 200
    for _ in range(100):
        a, b = np.sort(rng.random((2, 2)), axis=0)
        inside = np.all((pts >= a) & (pts <= b), axis=1)
        assert g.box_count(a, b) == inside.sum()
        assert g.box_sum(a, b) == pytest.approx(y[inside].sum(), abs=1e-12)


@given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 1.0]),
                          st.sampled_from([0.0, 0.5, 1.0])), max_size=12))
def test_compressed_grid_counts_nonnegative(points):
    cloud = PointCloud(np.array(points, dtype=float).reshape(-1, 2), np.ones(len(points)), d=2)
    g = build_compressed_grid(cloud)
    assert np.all(g.counts >= 0)
    assert g.box_count([0, 0], [1, 1]) == len(points)


def test_point_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud([[1.5]], [0.0])
    with pytest.raises(ValueError):
        PointCloud([[0.5]], [0.0, 1.0])
    with pytest.raises(ValueError):
        PointCloud(np.empty((0,)), [])


def test_field_csv_roundtrip(tmp_path, rng):
    f = Field((50, 20), rng.normal(size=(50, 20)))
    write_field_csv(tmp_path / "f.csv", f)
    g = read_field_csv(tmp_path / "f.csv")
    assert g.dims == f.dims and np.array_equal(g.values, f.values)
    assert (tmp_path / "f.csv").read_text().startswith("dims=50x20\n")


def test_field_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1\n2\n")
    with pytest.raises(ValueError):
        read_field_csv(p)
    p.write_text("dims=3\n1\n2\n")
    with pytest.raises(ValueError):
        read_field_csv(p)


def test_point_cloud_csv_roundtrip(tmp_path, rng):
    c = PointCloud(rng.random((30, 3)), rng.normal(size=30))
    write_point_cloud_csv(tmp_path / "p.csv", c)
    back = read_point_cloud_csv(tmp_path / "p.csv")
    assert np.array_equal(back.points, c.points) and np.array_equal(back.responses, c.responses)
