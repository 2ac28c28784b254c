"""Block max-min, min-max and mid estimators on lattices and random designs."""
from __future__ import annotations

import enum
from bisect import bisect_left, bisect_right
from itertools import product
from typing import Sequence

import numpy as np

from . import kernels
from .lattice import CompressedGrid, Field


class EstimatorKind(str, enum.Enum):
    MaxMin = "maxmin"
    MinMax = "minmax"
    Mid = "mid"
    Lse = "lse"

    @classmethod
    def parse(cls, text) -> "EstimatorKind":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "").replace("_", "")
        aliases = {"block": cls.MaxMin, "blockmid": cls.Mid}
        if key in aliases:
            return aliases[key]
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown estimator kind {text!r}")


BLOCK_KINDS = (EstimatorKind.MaxMin, EstimatorKind.MinMax, EstimatorKind.Mid)


def _naive_branches(values: np.ndarray):
    """Direct O(n^3)-ish enumeration without prefix sums; the testing oracle."""
    dims = values.shape
    sites = list(product(*[range(k) for k in dims]))
    maxmin = np.empty(dims)
    minmax = np.empty(dims)

    def mean(u, v):
        box = values[tuple(slice(a, b + 1) for a, b in zip(u, v))]
        return float(np.sum(box)) / box.size

    for x in sites:
        lowers = [u for u in sites if all(a <= b for a, b in zip(u, x))]
        uppers = [v for v in sites if all(a <= b for a, b in zip(x, v))]
        maxmin[x] = max(min(mean(u, v) for v in uppers) for u in lowers)
        minmax[x] = min(max(mean(u, v) for u in lowers) for v in uppers)
    return maxmin, minmax


def _branches(y: Field, which: str, method: str, backend):
    if method == "naive":
        mm, xm = _naive_branches(np.asarray(y.values))
        return (mm if which != "minmax" else None), (xm if which != "maxmin" else None)
    if method != "dp":
        raise ValueError(f"unknown method {method!r}; use 'dp' or 'naive'")
    return kernels.lattice_branches(np.asarray(y.values), which=which, backend=backend)


def max_min_lattice(y: Field, method: str = "dp", backend=None) -> Field:
    """max over ``u <= x`` of min over ``v >= x`` of the block mean of ``y`` on ``[u, v]``."""
    return Field(y.shape, _branches(y, "maxmin", method, backend)[0])


def min_max_lattice(y: Field, method: str = "dp", backend=None) -> Field:
    return Field(y.shape, _branches(y, "minmax", method, backend)[1])


def block_mid_lattice(y: Field, method: str = "dp", backend=None) -> Field:
    mm, xm = _branches(y, "both", method, backend)
    return Field(y.shape, 0.5 * (mm + xm))


def block_estimate(y: Field, kind, method: str = "dp", backend=None) -> Field:
    kind = EstimatorKind.parse(kind)
    if kind is EstimatorKind.MaxMin:
        return max_min_lattice(y, method, backend)
    if kind is EstimatorKind.MinMax:
        return min_max_lattice(y, method, backend)
    if kind is EstimatorKind.Mid:
        return block_mid_lattice(y, method, backend)
    raise ValueError(f"{kind.value} is not a block estimator")


def block_witness(y: Field, site) -> dict:
    """Maximin and minimax values at a 0-based ``site`` with the corner pairs
    that attain them, found by direct enumeration (meant for small lattices)."""
    values = np.asarray(y.values, dtype=float)
    x = tuple(int(i) for i in site)
    sites = list(product(*[range(k) for k in values.shape]))
    lowers = [u for u in sites if all(a <= b for a, b in zip(u, x))]
    uppers = [v for v in sites if all(a <= b for a, b in zip(x, v))]

    def mean(u, v):
        return float(np.mean(values[tuple(slice(a, b + 1) for a, b in zip(u, v))]))

    table = {(u, v): mean(u, v) for u in lowers for v in uppers}
    inner_min = {u: min(uppers, key=lambda v: table[u, v]) for u in lowers}
    u1 = max(lowers, key=lambda u: table[u, inner_min[u]])
    inner_max = {v: max(lowers, key=lambda u: table[u, v]) for v in uppers}
    v2 = min(uppers, key=lambda v: table[inner_max[v], v])
    return dict(
        maxmin=table[u1, inner_min[u1]], maxmin_block=(u1, inner_min[u1]),
        minmax=table[inner_max[v2], v2], minmax_block=(inner_max[v2], v2),
    )


def noiseless_targets(f: Field, kind) -> Field:
    """The chosen block estimator applied to the mean field itself.

    For a non-decreasing ``f`` this returns ``f`` (up to rounding in the block
    means); otherwise it is the estimation target under misspecification.
    """
    return block_estimate(f, kind)


def _candidate_bounds(grid: CompressedGrid, x: Sequence[float]):
    # lower-corner index choices 0..lo_max, upper exclusive-index choices hi_min..K
    lo_max = [bisect_left(grid.coords[j], float(x[j])) for j in range(grid.d)]
    hi_min = [bisect_right(grid.coords[j], float(x[j])) for j in range(grid.d)]
    return lo_max, hi_min


def branch_values_at(x: Sequence[float], grid: CompressedGrid, backend=None):
    """``(maxmin, minmax)`` at an arbitrary point of ``[0, 1]^d``.

    A lower corner ``u <= x`` only matters through which points satisfy
    ``p >= u``; one representative per class is a design coordinate ``<= x_j``
    or ``x_j`` itself.  Upper corners are handled symmetrically.
    """
    if grid.n == 0:
        raise ValueError("cannot evaluate a block estimator on an empty cloud")
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != grid.d or np.any(x < 0) or np.any(x > 1):
        raise ValueError(f"query point must lie in [0, 1]^{grid.d}")
    lo_max, hi_min = _candidate_bounds(grid, x)
    maxmin, minmax = kernels.point_branches(grid.counts, grid.sums, lo_max, hi_min, backend=backend)
    if not (np.isfinite(maxmin) and np.isfinite(minmax)):
        raise RuntimeError("no admissible block pair; compressed grid is inconsistent")
    return float(maxmin), float(minmax)


def evaluate_at(x: Sequence[float], grid: CompressedGrid, kind, backend=None) -> float:
    kind = EstimatorKind.parse(kind)
    if kind not in BLOCK_KINDS:
        raise ValueError(f"{kind.value} cannot be evaluated off the design")
    maxmin, minmax = branch_values_at(x, grid, backend)
    if kind is EstimatorKind.MaxMin:
        return maxmin
    if kind is EstimatorKind.MinMax:
        return minmax
    return 0.5 * (maxmin + minmax)


def evaluator(grid: CompressedGrid, kind, backend=None):
    """Vectorised ``points (m, d) -> estimates (m,)`` closure over a grid."""
    kind = EstimatorKind.parse(kind)

    def fn(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([evaluate_at(p, grid, kind, backend) for p in pts])

    return fn

