"""Isotonic regression on DAGs: reachability, upper/lower sets, brute-force
max-min/min-max over set classes and the graph amendment that turns level sets
into blocks.

An edge ``a -> b`` means ``a <= b`` in the induced partial order, so a chain
``0 -> 1 -> 2`` orders its vertices increasingly.  Vertex ids are 0-based in
code and 1-based in the text format.  Sets of vertices are Python ints used as
bitmasks.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CapacityError, ConsistencyError, InvalidGraphError
from .lattice import Field, LatticeShape, SITE_ORDER

DEFAULT_MAX_V = 20


def max_vertices() -> int:
    """Enumeration guard, overridable through ``ISOBLOCK_MAX_V``."""
    raw = os.environ.get("ISOBLOCK_MAX_V", "").strip()
    return int(raw) if raw else DEFAULT_MAX_V


@dataclass(frozen=True)
class Dag:
    n_vertices: int
    edges: tuple = ()
    observations: Mapping[int, tuple] = field(default_factory=dict)

    def __post_init__(self):
        nv = int(self.n_vertices)
        if nv < 1:
            raise InvalidGraphError("a graph needs at least one vertex")
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        for a, b in edges:
            if not (0 <= a < nv and 0 <= b < nv):
                raise InvalidGraphError(f"edge ({a}, {b}) refers to a missing vertex")
            if a == b:
                raise InvalidGraphError(f"self-loop at vertex {a}")
        obs = {}
        for v, ys in dict(self.observations).items():
            v = int(v)
            if not 0 <= v < nv:
                raise InvalidGraphError(f"observation on missing vertex {v}")
            ys = tuple(float(y) for y in np.atleast_1d(ys))
            if not all(np.isfinite(ys)):
                raise ValueError("responses must be finite")
            if ys:
                obs[v] = ys
        object.__setattr__(self, "n_vertices", nv)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "observations", obs)

    def counts(self) -> np.ndarray:
        c = np.zeros(self.n_vertices)
        for v, ys in self.observations.items():
            c[v] = len(ys)
        return c

    def sums(self) -> np.ndarray:
        s = np.zeros(self.n_vertices)
        for v, ys in self.observations.items():
            s[v] = sum(ys)
        return s

    def design_vertices(self) -> list:
        return sorted(self.observations)

    @property
    def n_observations(self) -> int:
        return sum(len(ys) for ys in self.observations.values())

    def with_observations(self, observations) -> "Dag":
        return Dag(self.n_vertices, self.edges, observations)


def topological_order(dag: Dag) -> list:
    """Kahn's algorithm; raises :class:`InvalidGraphError` on a cycle."""
    indeg = [0] * dag.n_vertices
    succ = [[] for _ in range(dag.n_vertices)]
    for a, b in dag.edges:
        succ[a].append(b)
        indeg[b] += 1
    ready = [v for v in range(dag.n_vertices) if indeg[v] == 0]
    order = []
    while ready:
        v = ready.pop()
        order.append(v)
        for b in succ[v]:
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    if len(order) != dag.n_vertices:
        raise InvalidGraphError("graph contains a directed cycle")
    return order


def descendant_masks(dag: Dag) -> list:
    """``masks[v]`` has bit ``b`` set iff ``v <= b`` (reflexive)."""
    order = topological_order(dag)
    succ = [[] for _ in range(dag.n_vertices)]
    for a, b in dag.edges:
        succ[a].append(b)
    masks = [0] * dag.n_vertices
    for v in reversed(order):
        m = 1 << v
        for b in succ[v]:
            m |= masks[b]
        masks[v] = m
    return masks


def ancestor_masks(dag: Dag) -> list:
    desc = descendant_masks(dag)
    anc = [0] * dag.n_vertices
    for a, m in enumerate(desc):
        for b in iter_bits(m):
            anc[b] |= 1 << a
    return anc


def iter_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def mask_to_bool(masks: Sequence[int], n: int) -> np.ndarray:
    """``(len(masks), n)`` membership matrix; works for any ``n``."""
    if n <= 62:
        m = np.asarray([int(x) for x in masks], dtype=np.int64).reshape(-1)
        return ((m[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(bool)
    return np.array([[(int(x) >> j) & 1 for j in range(n)] for x in masks], dtype=bool).reshape(
        len(masks), n
    )


def reachability(dag: Dag) -> np.ndarray:
    """Boolean matrix ``R[a, b] = a <= b``."""
    return mask_to_bool(descendant_masks(dag), dag.n_vertices)


def is_upper_set(dag: Dag, mask: int, desc=None) -> bool:
    desc = descendant_masks(dag) if desc is None else desc
    return all(desc[v] & ~mask == 0 for v in iter_bits(mask))


def is_lower_set(dag: Dag, mask: int, anc=None) -> bool:
    anc = ancestor_masks(dag) if anc is None else anc
    return all(anc[v] & ~mask == 0 for v in iter_bits(mask))


def _check_capacity(dag: Dag):
    limit = max_vertices()
    if dag.n_vertices > limit:
        raise CapacityError(
            f"{dag.n_vertices} vertices exceed the enumeration limit {limit} (ISOBLOCK_MAX_V)"
        )


def enumerate_upper_sets(dag: Dag) -> list:
    """All upper sets as bitmasks, including the empty set and ``V``.

    Vertices are decided in reverse topological order; a vertex may join only
    once all its direct successors have, so every branch ends in a valid set
    and the work is linear in the output size.
    """
    _check_capacity(dag)
    order = list(reversed(topological_order(dag)))
    succ = [0] * dag.n_vertices
    for a, b in dag.edges:
        succ[a] |= 1 << b
    out = []
    stack = [(0, 0)]
    while stack:
        i, mask = stack.pop()
        if i == len(order):
            out.append(mask)
            continue
        v = order[i]
        stack.append((i + 1, mask))
        if succ[v] & ~mask == 0:
            stack.append((i + 1, mask | (1 << v)))
    return sorted(out)


def enumerate_lower_sets(dag: Dag) -> list:
    full = (1 << dag.n_vertices) - 1
    return sorted(full ^ u for u in enumerate_upper_sets(dag))


def upper_sets_by_filter(dag: Dag) -> list:
    """Check every subset; exponential, kept as a reference for small graphs."""
    desc = descendant_masks(dag)
    return [m for m in range(1 << dag.n_vertices) if is_upper_set(dag, m, desc)]


def _max_min_over_classes(counts, sums, n, upper, lower, chunk=512):
    """Core of the generalized estimator.

    ``upper[x]`` / ``lower[x]`` are lists of bitmasks.  Returns ``(maxmin, minmax)``
    with NaN where no admissible pair exists.
    """
    maxmin = np.full(n, np.nan)
    minmax = np.full(n, np.nan)
    for x in range(n):
        if not upper[x] or not lower[x]:
            continue
        U = mask_to_bool(upper[x], n)
        L = mask_to_bool(lower[x], n)
        nU = U @ counts
        nL = L @ counts
        best_mm = -np.inf
        col_max = np.full(len(L), -np.inf)
        for start in range(0, len(U), chunk):
            Ub = U[start:start + chunk].astype(float)
            cnt = (Ub * counts) @ L.T
            tot = (Ub * sums) @ L.T
            ok = cnt > 0.5
            mean = np.where(ok, tot / np.where(ok, cnt, 1.0), np.nan)
            inner = np.where(ok, mean, np.inf).min(axis=1)
            rows = (nU[start:start + chunk] > 0.5) & np.isfinite(inner)
            if rows.any():
                best_mm = max(best_mm, float(inner[rows].max()))
            col_max = np.maximum(col_max, np.where(ok, mean, -np.inf).max(axis=0))
        cols = (nL > 0.5) & np.isfinite(col_max)
        if np.isfinite(best_mm):
            maxmin[x] = best_mm
        if cols.any():
            minmax[x] = float(col_max[cols].min())
    return maxmin, minmax


def _normalize_classes(dag, classes, kind, desc, anc):
    if len(classes) != dag.n_vertices:
        raise ValueError(f"need one {kind} class per vertex")
    out = []
    for x, cls in enumerate(classes):
        cls = [int(m) for m in cls]
        for m in cls:
            if not (m >> x) & 1:
                raise InvalidGraphError(f"{kind} set {m:#x} in the class of vertex {x} misses it")
            ok = is_upper_set(dag, m, desc) if kind == "upper" else is_lower_set(dag, m, anc)
            if not ok:
                raise InvalidGraphError(f"set {m:#x} is not a {kind} set")
        out.append(cls)
    return out


def generalized_max_min(dag: Dag, upper_classes, lower_classes, validate: bool = True):
    """Max-min and min-max of ``ybar`` over ``U cap L`` for per-vertex set classes.

    ``upper_classes[x]`` lists upper sets containing ``x``, ``lower_classes[x]``
    lower sets containing ``x``.  The outer max runs over ``U`` with ``n_U > 0``,
    the inner min over ``L`` with ``n_{U cap L} > 0`` (and symmetrically for
    min-max).  An outer candidate with no admissible inner partner is dropped;
    a vertex left with no candidate gets NaN.
    """
    if validate:
        desc, anc = descendant_masks(dag), ancestor_masks(dag)
        upper_classes = _normalize_classes(dag, upper_classes, "upper", desc, anc)
        lower_classes = _normalize_classes(dag, lower_classes, "lower", desc, anc)
    return _max_min_over_classes(
        dag.counts(), dag.sums(), dag.n_vertices, upper_classes, lower_classes
    )


def all_set_classes(dag: Dag):
    """The largest classes: every upper / lower set containing each vertex."""
    uppers = enumerate_upper_sets(dag)
    full = (1 << dag.n_vertices) - 1
    lowers = [full ^ u for u in uppers]
    up = [[m for m in uppers if (m >> x) & 1] for x in range(dag.n_vertices)]
    lo = [[m for m in lowers if (m >> x) & 1] for x in range(dag.n_vertices)]
    return up, lo


def block_classes(dag: Dag):
    """Classes ``{[u, *]: u <= x}`` and ``{[*, v]: x <= v}`` generated by vertices."""
    desc, anc = descendant_masks(dag), ancestor_masks(dag)
    up = [[desc[u] for u in iter_bits(anc[x])] for x in range(dag.n_vertices)]
    lo = [[anc[v] for v in iter_bits(desc[x])] for x in range(dag.n_vertices)]
    return up, lo


def lse_minimax_bruteforce(dag: Dag, atol: float = 1e-9) -> np.ndarray:
    """Least-squares fit from the max-min/min-max formula over all level sets.

    Returns an array over vertices, NaN away from design vertices.  Raises
    :class:`ConsistencyError` if the two orders of optimisation disagree by
    more than ``atol`` at a design vertex.
    """
    if not dag.observations:
        raise ValueError("graph carries no observations")
    _check_capacity(dag)
    up, lo = all_set_classes(dag)
    maxmin, minmax = _max_min_over_classes(dag.counts(), dag.sums(), dag.n_vertices, up, lo)
    out = np.full(dag.n_vertices, np.nan)
    for x in dag.design_vertices():
        if abs(maxmin[x] - minmax[x]) > atol * max(1.0, abs(maxmin[x])):
            raise ConsistencyError(
                f"max-min {maxmin[x]!r} and min-max {minmax[x]!r} differ at vertex {x}"
            )
        out[x] = 0.5 * (maxmin[x] + minmax[x])
    return out


@dataclass(frozen=True)
class AmendedGraph:
    dag: Dag
    upper_nodes: tuple
    lower_nodes: tuple


def amend_graph(dag: Dag, upper_sets: Iterable[int], lower_sets: Iterable[int]) -> AmendedGraph:
    """Add a node below each upper set and a node above each lower set.

    The node for ``U`` gets an edge into every member of ``U`` and the node for
    ``L`` an edge from every member of ``L``, so the block between them holds
    exactly the original vertices of ``U cap L``.  New nodes carry no data.
    """
    upper_sets = [int(m) for m in upper_sets]
    lower_sets = [int(m) for m in lower_sets]
    desc, anc = descendant_masks(dag), ancestor_masks(dag)
    for m in upper_sets:
        if not is_upper_set(dag, m, desc):
            raise InvalidGraphError(f"set {m:#x} is not an upper set")
    for m in lower_sets:
        if not is_lower_set(dag, m, anc):
            raise InvalidGraphError(f"set {m:#x} is not a lower set")
    edges = list(dag.edges)
    nv = dag.n_vertices
    upper_nodes = []
    for m in upper_sets:
        edges.extend((nv, u) for u in iter_bits(m))
        upper_nodes.append(nv)
        nv += 1
    lower_nodes = []
    for m in lower_sets:
        edges.extend((v, nv) for v in iter_bits(m))
        lower_nodes.append(nv)
        nv += 1
    new = Dag(nv, tuple(edges), dag.observations)
    return AmendedGraph(new, tuple(upper_nodes), tuple(lower_nodes))


def block_members(dag: Dag, u: int, v: int) -> int:
    """Bitmask of ``{x: u <= x <= v}``."""
    return descendant_masks(dag)[u] & ancestor_masks(dag)[v]


def lattice_dag(dims, y: Field | None = None) -> Dag:
    """The lattice as a DAG with unit steps along each axis; vertices in site order."""
    shape = dims if isinstance(dims, LatticeShape) else LatticeShape(tuple(dims))
    ids = np.arange(shape.n).reshape(shape.dims, order=SITE_ORDER)
    edges = []
    for ax in range(shape.d):
        lo = np.take(ids, np.arange(shape.dims[ax] - 1), axis=ax).ravel()
        hi = np.take(ids, np.arange(1, shape.dims[ax]), axis=ax).ravel()
        edges.extend(zip(lo.tolist(), hi.tolist()))
    obs = {}
    if y is not None:
        obs = {i: (float(val),) for i, val in enumerate(y.flat())}
    return Dag(shape.n, tuple(edges), obs)


def random_dag(n_vertices: int, rng, edge_prob: float = 0.3, max_obs: int = 2,
               design_prob: float = 0.8) -> Dag:
    """Random DAG over a shuffled vertex order with Gaussian responses.

    Each vertex is a design vertex with probability ``design_prob`` and then
    gets between 1 and ``max_obs`` responses; at least one vertex has data.
    """
    perm = rng.permutation(n_vertices)
    edges = [
        (int(perm[i]), int(perm[j]))
        for i in range(n_vertices)
        for j in range(i + 1, n_vertices)
        if rng.random() < edge_prob
    ]
    obs = {}
    for v in range(n_vertices):
        if rng.random() < design_prob:
            obs[v] = tuple(rng.normal(size=int(rng.integers(1, max_obs + 1))).tolist())
    if not obs:
        obs[int(rng.integers(n_vertices))] = (float(rng.normal()),)
    return Dag(n_vertices, tuple(edges), obs)


def point_cloud_dag(points, responses):
    """Distinct points as vertices, an edge wherever one point is coordinatewise
    below another; repeated points pool their responses.

    Returns the DAG and, for every input row, its vertex id.
    """
    pts = np.asarray(points, dtype=float)
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    below = np.all(uniq[:, None, :] <= uniq[None, :, :], axis=2)
    np.fill_diagonal(below, False)
    edges = tuple(zip(*(ix.tolist() for ix in np.nonzero(below))))
    obs: dict = {}
    for v, y in zip(inverse.tolist(), np.asarray(responses, dtype=float).tolist()):
        obs.setdefault(v, []).append(y)
    return Dag(len(uniq), edges, obs), inverse


# -- text format ------------------------------------------------------------------


def parse_dag(text: str) -> Dag:
    """First line ``|V|``; then ``a b`` edges (1-based); then ``obs v y`` lines."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise InvalidGraphError("empty graph description")
    try:
        nv = int(lines[0])
    except ValueError:
        raise InvalidGraphError(f"first line must be the vertex count, got {lines[0]!r}") from None
    edges = []
    obs: dict = {}
    for no, ln in enumerate(lines[1:], start=2):
        tok = ln.split()
        try:
            if tok[0] == "obs":
                if len(tok) != 3:
                    raise ValueError
                obs.setdefault(int(tok[1]) - 1, []).append(float(tok[2]))
            else:
                if len(tok) != 2:
                    raise ValueError
                edges.append((int(tok[0]) - 1, int(tok[1]) - 1))
        except ValueError:
            raise InvalidGraphError(f"line {no}: cannot parse {ln!r}") from None
    dag = Dag(nv, tuple(edges), obs)
    topological_order(dag)
    return dag


def format_dag(dag: Dag) -> str:
    lines = [str(dag.n_vertices)]
    lines.extend(f"{a + 1} {b + 1}" for a, b in dag.edges)
    for v in sorted(dag.observations):
        lines.extend(f"obs {v + 1} {y!r}" for y in dag.observations[v])
    return "\n".join(lines) + "\n"


def read_dag(path) -> Dag:
    return parse_dag(Path(path).read_text())


def write_dag(path, dag: Dag) -> None:
    Path(path).write_text(format_dag(dag))
