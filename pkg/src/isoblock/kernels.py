"""Hot numeric kernels with numba and numpy implementations.

Every public entry point takes ``backend=None|"numba"|"numpy"``; ``None`` defers
to :func:`isoblock._accel.default_backend`.  Both paths compute the same
quantities; they may differ in the last few ulps because summation order
differs.
"""
from __future__ import annotations

from itertools import product

import numpy as np
from scipy.optimize import isotonic_regression

from ._accel import NUMBA, njit, resolve_backend

# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _corner_table(d):
    bits = np.array(list(product((0, 1), repeat=d)), dtype=np.int64).reshape(-1, d)
    signs = np.array([(-1) ** (d - int(b.sum())) for b in bits], dtype=np.float64)
    return bits, signs


def _c_strides(dims):
    strides = np.ones(len(dims), dtype=np.int64)
    for j in range(len(dims) - 2, -1, -1):
        strides[j] = strides[j + 1] * dims[j + 1]
    return strides


def padded_prefix(values):
    """Zero-padded cumulative sums of an nd array (C layout, float64)."""
    acc = np.zeros(tuple(n + 1 for n in values.shape), dtype=np.longdouble)
    acc[tuple(slice(1, None) for _ in values.shape)] = values
    for ax in range(values.ndim):
        np.cumsum(acc, axis=ax, out=acc)
    return np.ascontiguousarray(acc, dtype=np.float64)


# ---------------------------------------------------------------------------
# block max-min / min-max on a full lattice
# ---------------------------------------------------------------------------


@njit
def _block_mean(P, pstrides, bits, signs, lo, hi):
    # mean over the 0-based inclusive box [lo, hi]
    d = lo.shape[0]
    s = 0.0
    for c in range(bits.shape[0]):
        idx = 0
        for j in range(d):
            if bits[c, j]:
                idx += (hi[j] + 1) * pstrides[j]
            else:
                idx += lo[j] * pstrides[j]
        s += signs[c] * P[idx]
    cnt = 1
    for j in range(d):
        cnt *= hi[j] - lo[j] + 1
    return s / cnt


@njit
def _maxmin_lattice_nb(P, pstrides, dims, strides, coords, bits, signs):
    n = coords.shape[0]
    d = dims.shape[0]
    out = np.full(n, -np.inf)
    M = np.empty(n)
    for u in range(n):
        lo = coords[u]
        for x in range(n - 1, u - 1, -1):
            ok = True
            for j in range(d):
                if coords[x, j] < lo[j]:
                    ok = False
                    break
            if not ok:
                continue
            m = _block_mean(P, pstrides, bits, signs, lo, coords[x])
            for j in range(d):
                if coords[x, j] + 1 < dims[j]:
                    nb = M[x + strides[j]]
                    if nb < m:
                        m = nb
            M[x] = m
            if m > out[x]:
                out[x] = m
    return out


@njit
def _minmax_lattice_nb(P, pstrides, dims, strides, coords, bits, signs):
    n = coords.shape[0]
    d = dims.shape[0]
    out = np.full(n, np.inf)
    M = np.empty(n)
    for v in range(n):
        hi = coords[v]
        for x in range(v + 1):
            ok = True
            for j in range(d):
                if coords[x, j] > hi[j]:
                    ok = False
                    break
            if not ok:
                continue
            m = _block_mean(P, pstrides, bits, signs, coords[x], hi)
            for j in range(d):
                if coords[x, j] > 0:
                    nb = M[x - strides[j]]
                    if nb > m:
                        m = nb
            M[x] = m
            if m < out[x]:
                out[x] = m
    return out


def _all_block_means(values):
    """Array ``A[u..., v...]`` of block means, NaN where ``u <= v`` fails."""
    dims = values.shape
    d = len(dims)
    P = padded_prefix(values)
    total = np.zeros(dims + dims)
    for bits in product((0, 1), repeat=d):
        idx = []
        for j in range(d):
            shp = [1] * (2 * d)
            if bits[j]:
                shp[d + j] = dims[j]
                idx.append(np.arange(1, dims[j] + 1).reshape(shp))
            else:
                shp[j] = dims[j]
                idx.append(np.arange(dims[j]).reshape(shp))
        sign = (-1) ** (d - sum(bits))
        total = total + sign * P[tuple(idx)]
    count = np.ones(dims + dims)
    for j in range(d):
        shp_u = [1] * (2 * d)
        shp_v = [1] * (2 * d)
        shp_u[j] = dims[j]
        shp_v[d + j] = dims[j]
        count = count * (np.arange(dims[j]).reshape(shp_v) - np.arange(dims[j]).reshape(shp_u) + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(count > 0, total / np.where(count > 0, count, 1), np.nan)
    return means


def _order_mask(dims, first, second):
    """Boolean mask over ``dims + dims`` that is True where index ``first <= second``."""
    d = len(dims)
    mask = np.ones(dims + dims, dtype=bool)
    for j in range(d):
        shp_a = [1] * (2 * d)
        shp_b = [1] * (2 * d)
        shp_a[first * d + j] = dims[j]
        shp_b[second * d + j] = dims[j]
        mask &= np.arange(dims[j]).reshape(shp_a) <= np.arange(dims[j]).reshape(shp_b)
    return mask


def _maxmin_lattice_np(values):
    dims = values.shape
    d = len(dims)
    A = _all_block_means(values)
    A = np.where(np.isnan(A), np.inf, A)
    # min over v >= x: reverse cumulative min over every v axis
    for ax in range(d, 2 * d):
        A = np.flip(np.minimum.accumulate(np.flip(A, axis=ax), axis=ax), axis=ax)
    A = np.where(_order_mask(dims, 0, 1), A, -np.inf)
    return A.max(axis=tuple(range(d)))


def _minmax_lattice_np(values):
    dims = values.shape
    d = len(dims)
    A = _all_block_means(values)
    A = np.where(np.isnan(A), -np.inf, A)
    # max over u <= x: cumulative max over every u axis
    for ax in range(d):
        A = np.maximum.accumulate(A, axis=ax)
    # A[x, v] now holds max_{u<=x} mean[u, v]; keep x <= v only
    A = np.where(_order_mask(dims, 0, 1), A, np.inf)
    return A.min(axis=tuple(range(d, 2 * d)))


def lattice_branches(values, which="both", backend=None):
    """Block max-min and/or min-max at every site of a fully observed lattice.

    ``values`` is an nd array (one response per site).  Returns a tuple
    ``(maxmin, minmax)``; a branch that was not requested is ``None``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if which not in ("both", "maxmin", "minmax"):
        raise ValueError(f"unknown branch selection {which!r}")
    backend = resolve_backend(backend)
    want_max = which in ("both", "maxmin")
    want_min = which in ("both", "minmax")
    if backend == NUMBA:
        dims = np.array(values.shape, dtype=np.int64)
        P = padded_prefix(values)
        pstrides = _c_strides(tuple(int(k) + 1 for k in dims))
        strides = _c_strides(values.shape)
        coords = np.ascontiguousarray(
            np.stack(np.unravel_index(np.arange(values.size), values.shape), axis=1).astype(np.int64)
        )
        bits, signs = _corner_table(values.ndim)
        Pf = P.ravel()
        mm = _maxmin_lattice_nb(Pf, pstrides, dims, strides, coords, bits, signs) if want_max else None
        xm = _minmax_lattice_nb(Pf, pstrides, dims, strides, coords, bits, signs) if want_min else None
        return (
            None if mm is None else mm.reshape(values.shape),
            None if xm is None else xm.reshape(values.shape),
        )
    return (
        _maxmin_lattice_np(values) if want_max else None,
        _minmax_lattice_np(values) if want_min else None,
    )


# ---------------------------------------------------------------------------
# random design: one query point over a compressed grid
# ---------------------------------------------------------------------------


@njit
def _advance(counter, first, last):
    # mixed-radix increment of ``counter`` within [first, last]; False when done
    for j in range(counter.shape[0] - 1, -1, -1):
        if counter[j] < last[j]:
            counter[j] += 1
            return True
        counter[j] = first[j]
    return False


@njit
def _corner_offsets(first, last, tstrides, bits, use_hi):
    # flat-offset contribution of every corner in [first, last] for each box corner
    n = 1
    for j in range(first.shape[0]):
        n *= last[j] - first[j] + 1
    out = np.zeros((n, bits.shape[0]), dtype=np.int64)
    cur = first.copy()
    for a in range(n):
        for c in range(bits.shape[0]):
            off = 0
            for j in range(first.shape[0]):
                if bits[c, j] == use_hi:
                    off += cur[j] * tstrides[j]
            out[a, c] = off
        _advance(cur, first, last)
    return out


@njit
def _point_branches_nb(C, S, tstrides, bits, signs, lo_max, hi_min, top):
    d = lo_max.shape[0]
    zero = np.zeros(d, dtype=np.int64)
    low = _corner_offsets(zero, lo_max, tstrides, bits, 0)
    high = _corner_offsets(hi_min, top, tstrides, bits, 1)
    nL, nU, nc = low.shape[0], high.shape[0], bits.shape[0]
    row_min = np.full(nL, np.inf)
    col_max = np.full(nU, -np.inf)
    row_ok = np.zeros(nL, dtype=np.bool_)
    col_ok = np.zeros(nU, dtype=np.bool_)
    for a in range(nL):
        for b in range(nU):
            cnt = 0.0
            tot = 0.0
            for c in range(nc):
                idx = low[a, c] + high[b, c]
                cnt += signs[c] * C[idx]
                tot += signs[c] * S[idx]
            if cnt > 0.5:
                m = tot / cnt
                if m < row_min[a]:
                    row_min[a] = m
                if m > col_max[b]:
                    col_max[b] = m
                # [L, top) and [0, E) decide whether a corner may be an outer candidate
                if b == nU - 1:
                    row_ok[a] = True
                if a == 0:
                    col_ok[b] = True
    maxmin = -np.inf
    for a in range(nL):
        if row_ok[a] and row_min[a] > maxmin:
            maxmin = row_min[a]
    minmax = np.inf
    for b in range(nU):
        if col_ok[b] and col_max[b] < minmax:
            minmax = col_max[b]
    return maxmin, minmax


def _point_branches_np(C, S, lo_max, hi_min, top):
    d = len(lo_max)
    cnt = np.zeros(tuple(l + 1 for l in lo_max) + tuple(t - h + 1 for h, t in zip(hi_min, top)))
    tot = np.zeros_like(cnt)
    for bits in product((0, 1), repeat=d):
        idx = []
        for j in range(d):
            shp = [1] * (2 * d)
            if bits[j]:
                shp[d + j] = top[j] - hi_min[j] + 1
                idx.append(np.arange(hi_min[j], top[j] + 1).reshape(shp))
            else:
                shp[j] = lo_max[j] + 1
                idx.append(np.arange(lo_max[j] + 1).reshape(shp))
        sign = (-1) ** (d - sum(bits))
        cnt = cnt + sign * C[tuple(idx)]
        tot = tot + sign * S[tuple(idx)]
    has = cnt > 0.5
    mean = np.where(has, tot / np.where(has, cnt, 1.0), np.nan)
    u_axes = tuple(range(d))
    v_axes = tuple(range(d, 2 * d))
    last = tuple([slice(None)] * d + [-1] * d)
    first = tuple([0] * d + [slice(None)] * d)
    # rows: u with n_{u,*} > 0 ; inner min over admissible v
    inner_min = np.where(has, mean, np.inf).min(axis=v_axes)
    u_ok = cnt[last] > 0.5
    maxmin = inner_min[u_ok].max() if u_ok.any() else -np.inf
    inner_max = np.where(has, mean, -np.inf).max(axis=u_axes)
    v_ok = cnt[first] > 0.5
    minmax = inner_max[v_ok].min() if v_ok.any() else np.inf
    return float(maxmin), float(minmax)


def point_branches(counts, sums, lo_max, hi_min, backend=None):
    """Max-min and min-max at one query over compressed prefix tables.

    Candidate lower corners have index ``L_j in [0, lo_max_j]`` and candidate
    upper (exclusive) corners ``E_j in [hi_min_j, K_j]`` where ``K_j + 1`` is the
    table extent.  Blocks are the index boxes ``[L, E)``.
    """
    C = np.ascontiguousarray(counts, dtype=np.float64)
    S = np.ascontiguousarray(sums, dtype=np.float64)
    lo_max = np.asarray(lo_max, dtype=np.int64)
    hi_min = np.asarray(hi_min, dtype=np.int64)
    top = np.array(C.shape, dtype=np.int64) - 1
    if resolve_backend(backend) == NUMBA:
        bits, signs = _corner_table(C.ndim)
        return _point_branches_nb(
            C.ravel(), S.ravel(), _c_strides(C.shape), bits, signs, lo_max, hi_min, top
        )
    return _point_branches_np(C, S, lo_max.tolist(), hi_min.tolist(), top.tolist())


# ---------------------------------------------------------------------------
# weighted PAVA and Dykstra over chain families
# ---------------------------------------------------------------------------


@njit
def _pava_nb(y, w, out):
    n = y.shape[0]
    if n == 0:
        return
    level = np.empty(n)
    weight = np.empty(n)
    start = np.empty(n, dtype=np.int64)
    top = -1
    for i in range(n):
        top += 1
        level[top] = y[i]
        weight[top] = w[i]
        start[top] = i
        while top > 0 and level[top - 1] > level[top]:
            wt = weight[top - 1] + weight[top]
            level[top - 1] = (weight[top - 1] * level[top - 1] + weight[top] * level[top]) / wt
            weight[top - 1] = wt
            top -= 1
    for b in range(top + 1):
        stop = start[b + 1] if b < top else n
        for i in range(start[b], stop):
            out[i] = level[b]


def pava(y, w=None, backend=None):
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ones_like(y) if w is None else np.ascontiguousarray(w, dtype=np.float64)
    if y.size == 0:
        return y.copy()
    if resolve_backend(backend) == NUMBA:
        out = np.empty_like(y)
        _pava_nb(y, w, out)
        return out
    return _pava_np(y, w)


def _pava_np(y, w):
    # scipy pools ties, which can shift an already sorted input by an ulp
    if np.all(y[1:] >= y[:-1]):
        return np.array(y, dtype=np.float64)
    return np.asarray(isotonic_regression(y, weights=w).x, dtype=np.float64)


@njit
def _dykstra_nb(y, w, group_ptr, chain_ptr, chain_vertices, tol, max_sweeps):
    n = y.shape[0]
    G = group_ptr.shape[0] - 1
    x = y.copy()
    incr = np.zeros((G, n))
    buf_y = np.empty(n)
    buf_w = np.empty(n)
    buf_o = np.empty(n)
    prev = x.copy()
    change = np.inf
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        for g in range(G):
            for c in range(group_ptr[g], group_ptr[g + 1]):
                a = chain_ptr[c]
                b = chain_ptr[c + 1]
                m = b - a
                for k in range(m):
                    v = chain_vertices[a + k]
                    buf_y[k] = x[v] + incr[g, v]
                    buf_w[k] = w[v]
                _pava_nb(buf_y[:m], buf_w[:m], buf_o[:m])
                for k in range(m):
                    v = chain_vertices[a + k]
                    incr[g, v] = buf_y[k] - buf_o[k]
                    x[v] = buf_o[k]
        change = 0.0
        for i in range(n):
            dlt = abs(x[i] - prev[i])
            if dlt > change:
                change = dlt
            prev[i] = x[i]
        if change <= tol:
            converged = True
            break
    return x, sweeps, converged, change


def _dykstra_np(y, w, group_ptr, chain_ptr, chain_vertices, tol, max_sweeps):
    n = y.shape[0]
    G = len(group_ptr) - 1
    x = y.copy()
    incr = np.zeros((G, n))
    chains = [
        [chain_vertices[chain_ptr[c]:chain_ptr[c + 1]] for c in range(group_ptr[g], group_ptr[g + 1])]
        for g in range(G)
    ]
    change = np.inf
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        prev = x.copy()
        for g in range(G):
            for idx in chains[g]:
                z = x[idx] + incr[g, idx]
                proj = _pava_np(z, w[idx])
                incr[g, idx] = z - proj
                x[idx] = proj
        change = float(np.max(np.abs(x - prev))) if n else 0.0
        if change <= tol:
            converged = True
            break
    return x, sweeps, converged, change


def dykstra_chains(y, w, groups, tol, max_sweeps, backend=None):
    """Project ``y`` (weights ``w``) onto the intersection of chain-order cones.

    ``groups`` is a list of chain families; chains inside one family are
    vertex-disjoint, so each family is projected in one pass of PAVA calls and
    carries a single Dykstra correction vector.  Returns
    ``(fit, sweeps, converged, last_change)``.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    group_ptr = [0]
    chain_ptr = [0]
    verts = []
    for fam in groups:
        for chain in fam:
            verts.extend(int(v) for v in chain)
            chain_ptr.append(len(verts))
        group_ptr.append(len(chain_ptr) - 1)
    group_ptr = np.array(group_ptr, dtype=np.int64)
    chain_ptr = np.array(chain_ptr, dtype=np.int64)
    verts = np.array(verts, dtype=np.int64)
    if len(groups) == 0:
        return y.copy(), 0, True, 0.0
    if resolve_backend(backend) == NUMBA:
        x, sweeps, conv, change = _dykstra_nb(
            y, w, group_ptr, chain_ptr, verts, float(tol), int(max_sweeps)
        )
        return x, int(sweeps), bool(conv), float(change)
    return _dykstra_np(y, w, group_ptr, chain_ptr, verts, float(tol), int(max_sweeps))


def lattice_line_groups(dims):
    """One chain family per axis: every line of the (C-ordered) lattice along it."""
    flat = np.arange(int(np.prod(dims))).reshape(dims)
    groups = []
    for ax in range(len(dims)):
        if dims[ax] < 2:
            continue
        lines = np.moveaxis(flat, ax, -1).reshape(-1, dims[ax])
        groups.append(list(lines))
    return groups
