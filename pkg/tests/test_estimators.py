import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from isoblock.estimators import (
    EstimatorKind, block_estimate, block_mid_lattice, block_witness, evaluate_at, evaluator,
    max_min_lattice, min_max_lattice, noiseless_targets,
)
from isoblock.lattice import Field, PointCloud, build_compressed_grid, is_monotone
from isoblock.lse import random_monotone_lattice

KINDS = ["maxmin", "minmax", "mid"]

fields = hnp.arrays(
    np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
    elements=st.floats(-5, 5, allow_nan=False, width=32),
)


def point_oracle(points, y, x):
    """Max-min and min-max at ``x`` over every candidate corner pair, with block
    membership decided by direct coordinate comparison."""
    points = np.asarray(points, dtype=float)
    d = points.shape[1]
    lows = [sorted({0.0, float(x[j])} | {p for p in points[:, j] if p <= x[j]}) for j in range(d)]
    highs = [sorted({1.0, float(x[j])} | {p for p in points[:, j] if p >= x[j]}) for j in range(d)]
    us = np.array(np.meshgrid(*lows, indexing="ij")).reshape(d, -1).T
    vs = np.array(np.meshgrid(*highs, indexing="ij")).reshape(d, -1).T
    above = np.all(points[None, :, :] >= us[:, None, :], axis=2).astype(float)  # (U, n)
    below = np.all(points[None, :, :] <= vs[:, None, :], axis=2).astype(float)  # (V, n)
    cnt = above @ below.T
    tot = (above * y) @ below.T
    has = cnt > 0
    mean = np.where(has, tot / np.where(has, cnt, 1), np.nan)
    u_ok = above.sum(axis=1) > 0
    v_ok = below.sum(axis=1) > 0
    maxmin = np.max(np.where(has, mean, np.inf).min(axis=1)[u_ok])
    minmax = np.min(np.where(has, mean, -np.inf).max(axis=0)[v_ok])
    return maxmin, minmax


@pytest.mark.parametrize("kind", KINDS)
def test_constant_field(kind, backend):
    y = Field((4, 3), np.full((4, 3), 2.5))
    assert np.array_equal(block_estimate(y, kind, backend=backend).values, y.values)


@pytest.mark.parametrize("kind", KINDS)
def test_decreasing_pair(kind, backend):
    out = block_estimate(Field((2,), [2.0, 1.0]), kind, backend=backend)
    assert out.values.tolist() == [1.5, 1.5]


@pytest.mark.parametrize("shape", [(4, 3), (3, 2, 2), (6,)])
def test_dp_matches_naive(shape, backend, rng):
    for _ in range(5):
        y = Field(shape, rng.normal(size=shape))
        for fn in (max_min_lattice, min_max_lattice, block_mid_lattice):
            fast = fn(y, backend=backend).values
            slow = fn(y, method="naive").values
            np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-12)


def test_unknown_method():
    with pytest.raises(ValueError):
        max_min_lattice(Field((2,), [1.0, 2.0]), method="fast")


@given(fields)
def test_sandwich_and_monotone(vals):
    y = Field(vals.shape, vals)
    mm, xm, mid = (block_estimate(y, k).values for k in KINDS)
    assert np.all(mm <= mid + 1e-12) and np.all(mid <= xm + 1e-12)
    for out in (mm, xm, mid):
        assert is_monotone(out, atol=1e-12)


@given(fields, st.floats(0.1, 10), st.floats(-10, 10))
def test_affine_equivariance(vals, a, b):
    y = Field(vals.shape, vals)
    z = Field(vals.shape, a * vals + b)
    for k in KINDS:
        np.testing.assert_allclose(
            block_estimate(z, k).values, a * block_estimate(y, k).values + b, atol=1e-9 * (1 + a)
        )


@given(fields, st.data())
def test_axis_permutation_equivariance(vals, data):
    perm = data.draw(st.permutations(range(vals.ndim)))
    y = Field(vals.shape, vals)
    yp = Field(tuple(vals.shape[p] for p in perm), np.transpose(vals, perm))
    for k in KINDS:
        np.testing.assert_allclose(
            block_estimate(yp, k).values, np.transpose(block_estimate(y, k).values, perm), atol=1e-12
        )


@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.integers(0, 2**32 - 1))
def test_noiseless_recovery_random_monotone(dims, seed):
    f = random_monotone_lattice(tuple(dims), np.random.default_rng(seed))
    for k in KINDS:
        np.testing.assert_allclose(noiseless_targets(Field(f.shape, f), k).values, f, atol=1e-12)


def test_noiseless_checkerboard():
    f = Field((2, 2), [[1.0, 0.0], [0.0, 1.0]])
    for k in KINDS:
        np.testing.assert_allclose(
            noiseless_targets(f, k).values, block_estimate(f, k, method="naive").values, atol=1e-15
        )


def test_mid_strictly_between_on_4x2():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        y = Field((4, 2), rng.normal(size=(4, 2)))
        mm, xm = max_min_lattice(y).values, min_max_lattice(y).values
        mid = block_mid_lattice(y).values
        hit = (mid > mm + 1e-9) & (mid < xm - 1e-9)
        if hit.any():
            site = tuple(np.argwhere(hit)[0])
            w = block_witness(y, site)
            assert w["maxmin"] == pytest.approx(mm[site], abs=1e-12)
            assert w["minmax"] == pytest.approx(xm[site], abs=1e-12)
            return
    pytest.fail("no 4x2 field separating the branches in 1000 draws")


def test_kind_parse():
    assert EstimatorKind.parse("block") is EstimatorKind.MaxMin
    assert EstimatorKind.parse("Block-Mid") is EstimatorKind.Mid
    assert EstimatorKind.parse("LSE") is EstimatorKind.Lse
    with pytest.raises(ValueError):
        EstimatorKind.parse("median")
    with pytest.raises(ValueError):
        block_estimate(Field((2,), [1.0, 2.0]), "lse")


# -- random design -------------------------------------------------------------------


def test_two_point_example(backend):
    grid = build_compressed_grid(PointCloud([[0.0], [1.0]], [1.0, 2.0]))
    assert evaluate_at([0.5], grid, "maxmin", backend=backend) == 2.0
    assert evaluate_at([0.5], grid, "minmax", backend=backend) == 1.0
    assert evaluate_at([0.5], grid, "mid", backend=backend) == 1.5


@pytest.mark.parametrize("kind", KINDS)
def test_single_point_everywhere(kind, backend, rng):
    grid = build_compressed_grid(PointCloud([[0.4, 0.7]], [3.25]))
    for x in rng.random((10, 2)):
        assert evaluate_at(x, grid, kind, backend=backend) == 3.25


@pytest.mark.parametrize("d,n", [(1, 12), (2, 50), (3, 15)])
def test_point_evaluation_matches_oracle(d, n, backend):
    rng = np.random.default_rng(100 + d)
    pts = rng.random((n, d))
    y = rng.normal(size=n)
    grid = build_compressed_grid(PointCloud(pts, y))
    queries = np.vstack([rng.random((15, d)), pts[:5]])
    for x in queries:
        got = evaluate_at(x, grid, "maxmin", backend), evaluate_at(x, grid, "minmax", backend)
        want = point_oracle(pts, y, x)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_point_evaluation_with_ties(backend):
    rng = np.random.default_rng(3)
    pts = np.round(rng.random((30, 2)) * 4) / 4
    y = rng.normal(size=30)
    grid = build_compressed_grid(PointCloud(pts, y))
    for x in np.vstack([pts[:10], rng.random((10, 2))]):
        got = evaluate_at(x, grid, "maxmin", backend), evaluate_at(x, grid, "minmax", backend)
        np.testing.assert_allclose(got, point_oracle(pts, y, x), atol=1e-12)


def test_design_points_sandwich(rng):
    pts = rng.random((40, 2))
    grid = build_compressed_grid(PointCloud(pts, rng.normal(size=40)))
    lo = evaluator(grid, "maxmin")(pts)
    hi = evaluator(grid, "minmax")(pts)
    assert np.all(lo <= hi + 1e-12)


def test_random_design_errors():
    empty = build_compressed_grid(PointCloud(np.empty((0, 1)), [], d=1))
    with pytest.raises(ValueError):
        evaluate_at([0.5], empty, "maxmin")
    grid = build_compressed_grid(PointCloud([[0.5]], [1.0]))
    with pytest.raises(ValueError):
        evaluate_at([1.5], grid, "maxmin")
    with pytest.raises(ValueError):
        evaluate_at([0.5], grid, "lse")
