"""Lattice arithmetic, prefix-sum tables and compressed grids for point clouds.

Multi-indices are 1-based at the public surface (site ``(1, ..., 1)`` is the
minimum corner) and 0-based inside arrays.  Flat site order runs with
dimension 1 fastest, i.e. numpy ``order="F"``.
"""
from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

SITE_ORDER = "F"


@dataclass(frozen=True)
class LatticeShape:
    dims: tuple

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 1:
            raise ValueError("a lattice needs at least one dimension")
        if any(n < 1 for n in dims):
            raise ValueError(f"lattice sides must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    def to_internal(self, index: Sequence[int]) -> tuple:
        """Convert a 1-based multi-index to a 0-based tuple, checking bounds."""
        index = tuple(int(i) for i in index)
        if len(index) != self.d:
            raise ValueError(f"expected a {self.d}-dimensional index, got {index}")
        for i, n in zip(index, self.dims):
            if not 1 <= i <= n:
                raise ValueError(f"index {index} outside lattice {self.dims}")
        return tuple(i - 1 for i in index)

    def to_external(self, index: Sequence[int]) -> tuple:
        return tuple(int(i) + 1 for i in index)

    def flat_index(self, index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(self.to_internal(index), self.dims, order=SITE_ORDER))

    def multi_index(self, flat: int) -> tuple:
        if not 0 <= flat < self.n:
            raise ValueError(f"flat index {flat} outside [0, {self.n})")
        return self.to_external(np.unravel_index(flat, self.dims, order=SITE_ORDER))

    def coordinates(self) -> np.ndarray:
        """``(n, d)`` array of 1-based site coordinates in site order."""
        grids = np.meshgrid(*[np.arange(1, k + 1) for k in self.dims], indexing="ij")
        return np.stack([g.ravel(order=SITE_ORDER) for g in grids], axis=1)

    def __str__(self):
        return "x".join(str(n) for n in self.dims)

    @classmethod
    def parse(cls, text: str) -> "LatticeShape":
        return cls(tuple(int(t) for t in text.lower().replace("×", "x").split("x")))


@dataclass(frozen=True)
class Field:
    """Real values on every site of a lattice, stored as an array of shape ``dims``."""

    shape: LatticeShape
    values: np.ndarray

    def __post_init__(self):
        shape = self.shape if isinstance(self.shape, LatticeShape) else LatticeShape(self.shape)
        values = np.array(self.values, dtype=float)
        if values.shape != shape.dims:
            if values.size != shape.n:
                raise ValueError(f"{values.size} values do not fit lattice {shape.dims}")
            values = values.reshape(shape.dims, order=SITE_ORDER)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_flat(cls, dims, flat) -> "Field":
        shape = dims if isinstance(dims, LatticeShape) else LatticeShape(tuple(dims))
        flat = np.asarray(flat, dtype=float).ravel()
        if flat.size != shape.n:
            raise ValueError(f"{flat.size} values do not fit lattice {shape.dims}")
        return cls(shape, flat.reshape(shape.dims, order=SITE_ORDER))

    def flat(self) -> np.ndarray:
        return self.values.ravel(order=SITE_ORDER)

    def __getitem__(self, index) -> float:
        return float(self.values[self.shape.to_internal(index)])

    @property
    def dims(self):
        return self.shape.dims


def is_monotone(values: np.ndarray, atol: float = 0.0) -> bool:
    """True when ``values`` is non-decreasing along every axis (up to ``atol``)."""
    values = np.asarray(values)
    return all(np.all(np.diff(values, axis=ax) >= -atol) for ax in range(values.ndim))


@dataclass(frozen=True)
class PrefixTable:
    shape: LatticeShape
    cums: np.ndarray


def build_prefix(fld: Field) -> PrefixTable:
    """Padded d-dimensional cumulative sums of ``fld``.

    Accumulation runs in extended precision before rounding back to float64,
    which keeps block sums accurate on fields of up to ~10^6 sites.
    """
    acc = np.zeros(tuple(n + 1 for n in fld.dims), dtype=np.longdouble)
    acc[tuple(slice(1, None) for _ in fld.dims)] = fld.values
    for ax in range(fld.shape.d):
        np.cumsum(acc, axis=ax, out=acc)
    cums = acc.astype(float)
    cums.setflags(write=False)
    return PrefixTable(fld.shape, cums)


def _corner_signs(d: int):
    # (upper-corner mask, sign) pairs for inclusion-exclusion over 2^d corners
    return [(bits, (-1) ** (d - sum(bits))) for bits in product((0, 1), repeat=d)]


def block_sum(table: PrefixTable, u: Sequence[int], v: Sequence[int]) -> float:
    """Sum of field values over the 1-based inclusive box ``[u, v]``."""
    lo = table.shape.to_internal(u)
    hi = table.shape.to_internal(v)
    if any(a > b for a, b in zip(lo, hi)):
        raise ValueError(f"block corners must satisfy u <= v, got u={tuple(u)}, v={tuple(v)}")
    total = 0.0
    for bits, sign in _corner_signs(table.shape.d):
        corner = tuple(h + 1 if b else l for b, l, h in zip(bits, lo, hi))
        total += sign * table.cums[corner]
    return float(total)


def block_mean(table: PrefixTable, u: Sequence[int], v: Sequence[int]) -> float:
    count = int(np.prod([b - a + 1 for a, b in zip(u, v)]))
    return block_sum(table, u, v) / count


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    responses: np.ndarray
    d: int = field(default=0)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        d = int(self.d) if self.d else (pts.shape[1] if pts.ndim == 2 and pts.size else 0)
        if pts.size == 0:
            if d < 1:
                raise ValueError("an empty cloud needs an explicit dimension d")
            pts = pts.reshape(0, d)
        if pts.ndim != 2 or pts.shape[1] != d:
            raise ValueError("points must be an (n, d) array")
        y = np.array(self.responses, dtype=float).ravel()
        if y.shape[0] != pts.shape[0]:
            raise ValueError("points and responses differ in length")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError("point coordinates must lie in [0, 1]")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(y))):
            raise ValueError("points and responses must be finite")
        pts.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "d", d)

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CompressedGrid:
    """Count and response-sum prefix tables on the grid of distinct coordinates.

    ``counts[i_1, ..., i_d]`` is the number of points whose coordinate index is
    ``< i_j`` on every axis; ``sums`` is the matching response total.  Tables are
    dense, so memory grows like the product of distinct-coordinate counts.
    """

    d: int
    coords: tuple
    counts: np.ndarray
    sums: np.ndarray
    n: int

    def index_box(self, lo: Sequence[int], hi: Sequence[int]):
        """(count, sum) over points with coordinate index in ``[lo_j, hi_j)``."""
        if any(a >= b for a, b in zip(lo, hi)):
            return 0, 0.0
        c = 0
        s = 0.0
        for bits, sign in _corner_signs(self.d):
            corner = tuple(h if b else l for b, l, h in zip(bits, lo, hi))
            c += sign * int(self.counts[corner])
            s += sign * self.sums[corner]
        return c, float(s)

    def box_bounds(self, u: Sequence[float], v: Sequence[float]):
        lo = [bisect_left(self.coords[j], float(u[j])) for j in range(self.d)]
        hi = [bisect_right(self.coords[j], float(v[j])) for j in range(self.d)]
        return lo, hi

    def box_count(self, u, v) -> int:
        return self.index_box(*self.box_bounds(u, v))[0]

    def box_sum(self, u, v) -> float:
        return self.index_box(*self.box_bounds(u, v))[1]


def build_compressed_grid(cloud: PointCloud) -> CompressedGrid:
    d = cloud.d
    coords = tuple(tuple(np.unique(cloud.points[:, j]).tolist()) for j in range(d))
    shape = tuple(len(c) + 1 for c in coords)
    counts = np.zeros(shape, dtype=np.int64)
    sums = np.zeros(shape, dtype=np.longdouble)
    if cloud.n:
        idx = tuple(
            np.searchsorted(np.asarray(coords[j]), cloud.points[:, j]) + 1 for j in range(d)
        )
        np.add.at(counts, idx, 1)
        np.add.at(sums, idx, cloud.responses)
        for ax in range(d):
            np.cumsum(counts, axis=ax, out=counts)
            np.cumsum(sums, axis=ax, out=sums)
    sums = sums.astype(float)
    counts.setflags(write=False)
    sums.setflags(write=False)
    return CompressedGrid(d, coords, counts, sums, cloud.n)


# -- file formats ---------------------------------------------------------------


def write_field_csv(path, fld: Field, fmt=repr) -> None:
    """Header ``dims=n1xn2x...`` then one value per line in site order."""
    lines = [f"dims={fld.shape}"]
    lines.extend(fmt(float(x)) for x in fld.flat())
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path) -> Field:
    text = Path(path).read_text().split()
    if not text or not text[0].startswith("dims="):
        raise ValueError(f"{path}: missing 'dims=' header")
    shape = LatticeShape.parse(text[0][len("dims="):])
    try:
        values = [float(t) for t in text[1:]]
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    return Field.from_flat(shape, values)


def write_point_cloud_csv(path, cloud: PointCloud) -> None:
    rows = np.column_stack([cloud.points, cloud.responses])
    Path(path).write_text("".join(",".join(repr(float(x)) for x in r) + "\n" for r in rows))


def read_point_cloud_csv(path, d: int | None = None) -> PointCloud:
    text = Path(path).read_text().strip()
    if not text:
        if d is None:
            raise ValueError(f"{path}: empty point cloud needs an explicit dimension")
        return PointCloud(np.empty((0, d)), np.empty(0), d=d)
    rows = np.loadtxt(path, delimiter=",", ndmin=2)
    if rows.shape[1] < 2:
        raise ValueError(f"{path}: need at least one coordinate column and a response")
    return PointCloud(rows[:, :-1], rows[:, -1])
