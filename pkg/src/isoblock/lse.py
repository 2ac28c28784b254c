"""Least-squares isotonic fits on lattices and DAGs.

The projection onto the monotone cone is computed with Dykstra's cyclic
projections over families of chains; each chain projection is an exact
weighted PAVA.  Lattice families are the axis lines, DAG families come from a
greedy path cover of the edge set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .graph import Dag, descendant_masks, iter_bits, topological_order
from .lattice import Field, SITE_ORDER


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_sweeps: int | None = None  # None: 100 * (families + 1) * longest chain
    certificate_check: bool = False
    backend: str | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_sweeps is not None and int(self.max_sweeps) < 1:
            raise ValueError("max_sweeps must be at least 1")


class Certificate(NamedTuple):
    monotone: bool
    mean_gap: float
    orth_gap: float
    variational_gap: float


@dataclass
class LseResult:
    fit: object  # Field for lattices, ndarray over vertices for DAGs
    converged: bool
    sweeps: int
    change: float
    certificate: Certificate | None = None


def pava_1d(y, w=None, backend=None) -> np.ndarray:
    """Weighted non-decreasing least-squares fit of a sequence."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size == 0:
        return y.copy()
    if w is not None:
        w = np.asarray(w, dtype=float).ravel()
        if w.shape != y.shape:
            raise ValueError("y and w differ in length")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
    return kernels.pava(y, w, backend=backend)


def _default_sweeps(groups):
    longest = max((len(c) for fam in groups for c in fam), default=1)
    return 100 * (len(groups) + 1) * max(longest, 1)


def lse_lattice(y: Field, opts: SolveOptions | None = None) -> LseResult:
    opts = opts or SolveOptions()
    values = np.ascontiguousarray(y.values, dtype=float)
    groups = kernels.lattice_line_groups(values.shape)
    sweeps = opts.max_sweeps or 100 * (y.shape.d + 1) * max(y.dims)
    flat, nsweep, conv, change = kernels.dykstra_chains(
        values.ravel(), np.ones(values.size), groups, opts.tol, sweeps, backend=opts.backend
    )
    fit = Field(y.shape, flat.reshape(values.shape))
    res = LseResult(fit, conv, nsweep, change)
    if opts.certificate_check:
        res.certificate = projection_certificate(y, fit)
    return res


# -- DAGs ---------------------------------------------------------------------------


def _design_problem(dag: Dag):
    """Weighted targets on design vertices and the order they inherit."""
    design = dag.design_vertices()
    if not design:
        raise ValueError("graph carries no observations")
    counts = dag.counts()
    means = dag.sums() / np.where(counts > 0, counts, 1.0)
    desc = descendant_masks(dag)
    pos = {v: i for i, v in enumerate(design)}
    dmask = sum(1 << v for v in design)
    # keep a -> b only when no third design vertex sits strictly between them
    edges = []
    for a in design:
        above = (desc[a] & dmask) & ~(1 << a)
        for b in iter_bits(above):
            between = above & ~(1 << b)
            if not any((desc[c] >> b) & 1 for c in iter_bits(between)):
                edges.append((pos[a], pos[b]))
    return design, means[design], counts[design], edges


def chain_cover(n: int, edges) -> list:
    """Greedy cover of ``edges`` by directed paths, grouped into families of
    vertex-disjoint paths."""
    out = [[] for _ in range(n)]
    for a, b in edges:
        out[a].append(b)
    remaining = {v: list(bs) for v, bs in enumerate(out) if bs}
    order = topological_order(Dag(max(n, 1), tuple(edges)))
    paths = []
    for start in order:
        while remaining.get(start):
            path = [start]
            v = start
            while remaining.get(v):
                nxt = remaining[v].pop()
                path.append(nxt)
                v = nxt
            paths.append(path)
    families = []
    used = []
    for path in sorted(paths, key=len, reverse=True):
        verts = set(path)
        for fam, seen in zip(families, used):
            if not seen & verts:
                fam.append(path)
                seen |= verts
                break
        else:
            families.append([path])
            used.append(verts)
    return families


def _extend(dag: Dag, design, fit_design):
    """Monotone extension to every vertex: max over design ancestors, else the
    smallest fitted value."""
    value = dict(zip(design, fit_design))
    floor = float(np.min(fit_design))
    desc = descendant_masks(dag)
    out = np.full(dag.n_vertices, floor)
    for a in design:
        for v in iter_bits(desc[a]):
            out[v] = max(out[v], value[a])
    return out


def lse_dag(dag: Dag, opts: SolveOptions | None = None) -> LseResult:
    """Weighted projection on the design vertices, extended monotonically."""
    opts = opts or SolveOptions()
    design, target, weight, edges = _design_problem(dag)
    groups = chain_cover(len(design), edges)
    sweeps = opts.max_sweeps or _default_sweeps(groups)
    fit_d, nsweep, conv, change = kernels.dykstra_chains(
        target, weight, groups, opts.tol, sweeps, backend=opts.backend
    )
    res = LseResult(_extend(dag, design, fit_d), conv, nsweep, change)
    if opts.certificate_check:
        res.certificate = projection_certificate(dag, res.fit)
    return res


# -- certificates -------------------------------------------------------------------


def _lattice_edges(dims):
    ids = np.arange(int(np.prod(dims))).reshape(dims)
    pairs = []
    for ax in range(len(dims)):
        lo = np.take(ids, np.arange(dims[ax] - 1), axis=ax).ravel()
        hi = np.take(ids, np.arange(1, dims[ax]), axis=ax).ravel()
        pairs.append(np.stack([lo, hi], axis=1))
    return np.concatenate(pairs) if pairs else np.empty((0, 2), dtype=int)


def random_monotone_lattice(dims, rng) -> np.ndarray:
    """Random field made monotone by running maxima along every axis."""
    g = rng.normal(size=dims)
    for ax in range(len(dims)):
        g = np.maximum.accumulate(g, axis=ax)
    return g


def _certificate(r, fit, edges, probes, tol):
    """``r`` is the weighted residual ``w * (y - fit)``; probes are cone elements."""
    viol = fit[edges[:, 0]] - fit[edges[:, 1]] if len(edges) else np.zeros(0)
    monotone = bool(np.all(viol <= tol))
    mean_gap = abs(float(np.sum(r)))
    orth_gap = abs(float(r @ fit))
    var_gap = max((float(r @ (g - fit)) for g in probes), default=-np.inf)
    return Certificate(monotone, mean_gap, orth_gap, var_gap)


def projection_certificate(y, fit, n_probes: int = 50, rng=None, tol: float = 1e-9) -> Certificate:
    """Optimality checks for a cone projection.

    ``mean_gap`` and ``orth_gap`` should vanish; ``variational_gap`` is the
    largest ``<y - fit, g - fit>`` over monotone probes ``g`` and should not be
    positive.  Half of the probes are ``fit`` plus a unit-scale cone element,
    the rest are independent monotone fields.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if isinstance(y, Dag):
        design, target, weight, edges = _design_problem(y)
        f = np.asarray(fit, dtype=float)[design]
        r = weight * (target - f)
        edges = np.asarray(edges, dtype=int).reshape(-1, 2)
        desc = descendant_masks(y)

        def probe():
            z = rng.normal(size=y.n_vertices)
            # max over ancestors is monotone on the graph
            return np.array([max(z[a] for a in range(y.n_vertices) if (desc[a] >> v) & 1)
                             for v in design])
    else:
        dims = y.dims
        target = np.asarray(y.values, dtype=float).ravel()
        fv = fit.values if isinstance(fit, Field) else np.asarray(fit).reshape(dims, order=SITE_ORDER)
        f = np.asarray(fv, dtype=float).ravel()
        r = target - f
        edges = _lattice_edges(dims)

        def probe():
            return random_monotone_lattice(dims, rng).ravel()

    probes = []
    for k in range(n_probes):
        h = probe()
        if k % 2 == 0:
            h = h - h.min()
            scale = np.linalg.norm(h)
            probes.append(f + h / scale if scale > 0 else f + 1.0)
        else:
            probes.append(h)
    return _certificate(r, f, edges, probes, tol)
