"""Rate expressions for block estimators on lattices and random designs.

Every unspecified multiplicative constant is set to 1, so values are rate
shapes, not risk levels.  ``log_plus(x) = max(1, log x)``.  Lattice sides are
sorted so that ``n_1 >= ... >= n_d`` and ``n_{d+1} = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Field

_EPS = 1e-9


def log_plus(x: float) -> float:
    return 1.0 if x <= math.e else math.log(x)


def _is_int(x: float) -> bool:
    return abs(x - round(x)) < _EPS


def _indicator(flag: bool) -> int:
    return 1 if flag else 0


def _is_q2(q: float) -> bool:
    return abs(q - 2.0) < _EPS


def _ratio_hits(q: float, s: int) -> bool:
    """``2 / (q - 1) == s`` up to rounding."""
    return q > 1 and abs(2.0 / (q - 1.0) - s) < _EPS


@dataclass(frozen=True)
class RateQuery:
    q: float
    dims: tuple
    delta_star: float
    sigma: float = 1.0

    def __post_init__(self):
        if not self.q >= 1:
            raise ValueError("q must be at least 1")
        dims = tuple(sorted((int(n) for n in self.dims), reverse=True))
        if not dims or dims[-1] < 1:
            raise ValueError("lattice sides must be positive")
        if not self.delta_star >= 0:
            raise ValueError("delta_star must be non-negative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "delta_star", float(self.delta_star))
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def n(self) -> int:
        return int(np.prod(self.dims))

    def side(self, s: int) -> int:
        """``n_s`` (1-based) with ``n_{d+1} = 1``."""
        return self.dims[s - 1] if s <= self.d else 1

    def nstar(self, s: int) -> int:
        return int(np.prod(self.dims[: min(s, self.d)]))

    def t(self, s: int) -> float:
        return thresholds(self.dims)[s - 1]


@dataclass(frozen=True)
class RateValue:
    value: float
    regime: str
    s: int | None = None
    log_factor: float = 1.0


def critical_index(q: float, d: int) -> int:
    """``s_q = ceil(2 / (q - 1))`` capped at ``d + 1``; ``q = 1`` gives ``d + 1``."""
    if q < 1 or d < 1:
        raise ValueError("need q >= 1 and d >= 1")
    if q == 1:
        return d + 1
    r = 2.0 / (q - 1.0)
    c = int(round(r)) if _is_int(r) else math.ceil(r)
    return min(c, d + 1)


def thresholds(dims) -> list:
    """``t_1, ..., t_{d+1}`` with ``t_s = n*_s / n_s^s`` and ``t_{d+1} = n``."""
    dims = sorted((int(n) for n in dims), reverse=True)
    out = []
    prod = 1.0
    for s, ns in enumerate(dims, start=1):
        prod *= ns
        out.append(prod / float(ns) ** s)
    out.append(float(np.prod(dims)))
    return out


def _segment(t: float, ts: list) -> int:
    # s with t in [t_s, t_{s+1}]; the last segment is unbounded
    s = 1
    while s < len(ts) and t >= ts[s]:
        s += 1
    return s


def _h_piece(t: float, rq: RateQuery, s: int) -> float:
    d = rq.d
    return rq.delta_star * math.sqrt(t) * (t / rq.nstar(s)) ** (1.0 / min(s, d))


def H_lower(t: float, rq: RateQuery) -> float:
    """``min{1, Delta sqrt(t) (t / n*_s)^{1/(s ^ d)}}`` on ``[t_s, t_{s+1}]``."""
    if t < 1:
        raise ValueError("H is defined for t >= 1")
    ts = thresholds(rq.dims)
    s = _segment(t, ts)
    return min(1.0, _h_piece(t, rq, s))


def H_tilde(t: float, dims, delta_star: float) -> float:
    """The block-restricted analogue on ``[1, n]`` for a sub-block with sides ``dims``."""
    rq = RateQuery(2.0, tuple(dims), delta_star)
    if not 1 <= t <= rq.n * (1 + _EPS):
        raise ValueError(f"t must lie in [1, {rq.n}]")
    return H_lower(min(t, float(rq.n)), rq)


def minimax_lower_rate(rq: RateQuery) -> RateValue:
    """Piecewise lower rate in ``Delta*`` with constants 1, scaled by ``sigma^q``."""
    q, d, D = rq.q, rq.d, rq.delta_star
    sq = critical_index(q, d)
    sc = rq.sigma ** q
    ts = thresholds(rq.dims)
    t = lambda s: ts[s - 1]  # noqa: E731
    if D >= rq.side(1):
        return RateValue(sc, "s=0", 0)
    for s in range(1, min(sq - 1, d) + 1):
        if D >= rq.side(s + 1) / math.sqrt(t(s + 1)):
            v = (D / rq.nstar(s) ** (1.0 / s)) ** (q * s / (2.0 + s))
            return RateValue(sc * v, "1<=s<s_q", s)
    if sq <= d:
        s = sq
        if D >= t(s) ** -0.5:
            v = D / (rq.side(s) * t(s) ** ((q - 1) / 2.0))
            return RateValue(sc * v, "s=s_q", s)
        for s in range(sq, d + 1):
            if D >= t(s + 1) ** -0.5:
                v = D ** (q - 2.0 / s) / rq.nstar(s) ** (1.0 / s)
                return RateValue(sc * v, "s_q<=s<=d", s)
    return RateValue(sc * rq.n ** (-q / 2.0), "s=d+1", d + 1)


def lower_rate_breakpoints(rq: RateQuery) -> list:
    """Increasing ``Delta*`` values where the lower-rate regime may change."""
    d = rq.d
    sq = critical_index(rq.q, d)
    ts = thresholds(rq.dims)
    pts = [rq.n ** -0.5]
    pts += [ts[s - 1] ** -0.5 for s in range(d, sq - 1, -1)] if sq <= d else []
    pts += [rq.side(s) / math.sqrt(ts[s - 1]) for s in range(min(sq, d), 0, -1)]
    return sorted(set(pts))


def _lambda_s(rq: RateQuery, s: int) -> float:
    q, D = rq.q, rq.delta_star
    if not _ratio_hits(q, s):
        return 1.0
    ns = rq.side(s)
    first = ns / rq.side(s + 1)
    second = math.inf if D == 0 else ns / rq.nstar(s) ** (1.0 / (s + 2)) / D ** (2.0 / (s + 2))
    return log_plus(min(first, second))


def edge_term(rq: RateQuery) -> float:
    """``[n^{1-q/2} + (prod log_plus n_j)^{I(q=2)}] / n`` (times ``sigma^q``)."""
    n = rq.n
    logs = float(np.prod([log_plus(nj) for nj in rq.dims])) if _is_q2(rq.q) else 1.0
    return rq.sigma ** rq.q * (n ** (1 - rq.q / 2.0) + logs) / n


def block_upper_rate(rq: RateQuery) -> RateValue:
    """Three-case upper rate plus the edge term, constants 1.

    When ``s_q = d + 1`` the case list stops at ``Delta* = n^{-1/2}``; below it
    the ``s = d`` expression is continued.
    """
    q, d, D = rq.q, rq.d, rq.delta_star
    sq = critical_index(q, d)
    sc = rq.sigma ** q
    ts = thresholds(rq.dims)
    edge = edge_term(rq)
    if D >= rq.side(1):
        return RateValue(sc + edge, "s=0", 0)
    for s in range(1, min(sq - 1, d) + 1):
        last = s == min(sq - 1, d) and sq == d + 1
        if last or D >= rq.side(s + 1) / math.sqrt(ts[s]):
            v = (D / rq.nstar(s) ** (1.0 / s)) ** (q * s / (2.0 + s))
            return RateValue(sc * v + edge, "1<=s<s_q", s)
    s = sq
    lam = _lambda_s(rq, s)
    v = D / (rq.side(s) * ts[s - 1] ** ((q - 1) / 2.0)) * lam
    return RateValue(sc * v + edge, "s=s_q", s, lam)


def match_factor(rq: RateQuery) -> float:
    sq = critical_index(rq.q, rq.d)
    if sq > rq.d or rq.delta_star > rq.side(sq) / math.sqrt(rq.t(sq)):
        return 1.0
    return _lambda_s(rq, sq)


def adaptation_rate(q: float, d_K: int, n: int, K: int) -> float:
    """``min{1, (K/n)^{min(1, q/2)} log_plus(n/K)^{d_K I(q=2)}}``."""
    if not 1 <= K <= n:
        raise ValueError("need 1 <= K <= n")
    if d_K < 0:
        raise ValueError("d_K must be non-negative")
    base = (K / n) ** min(1.0, q / 2.0)
    if _is_q2(q):
        base *= log_plus(n / K) ** d_K
    return min(1.0, base)


def selection_rate(q: float, d: int, s: int, n: int, delta_nS: float, sigma: float = 1.0) -> RateValue:
    """Rate when ``f`` depends on ``s`` of the ``d`` coordinates of a near-cubic lattice."""
    if not 1 <= s <= d:
        raise ValueError("need 1 <= s <= d")
    if delta_nS < 0:
        raise ValueError("delta_nS must be non-negative")
    logn = math.log(n)
    root = n ** (1.0 / d)
    if _is_q2(q):
        scale = sigma ** 2 * n ** (s / d - 1.0)
        if s >= 2:
            inner = min(
                logn ** (d - s),
                delta_nS / root * logn ** _indicator(s == 2) + n ** (-s / d) * logn ** d,
            )
        else:
            inner = min(logn ** (d - 1), (delta_nS / root) ** (2.0 / 3.0) + logn ** d / root)
        return RateValue(scale * inner, "q=2", s)
    m = max(1, int(round(root)))
    j = np.arange(1, m + 1, dtype=float)
    lam1 = (np.sum(j ** (-q / 2.0)) / m ** (1 - q / 2.0)) ** (d - s)
    e = min((1 - q) / 2.0, -q / (s + 2.0))
    lam2 = (np.sum(j ** e) / m ** (e + 1)) ** (d - s)
    lam2 *= logn ** _indicator(abs(q * s / (s + 2.0) - 1) < _EPS)
    sigma_s = sigma * n ** ((s / d - 1) / 2.0)
    inner = min(
        lam1,
        lam2 * (delta_nS / root) ** min(1.0, q * s / (s + 2.0))
        + lam1 * (n ** (s / d)) ** (-min(1.0, q / 2.0)),
    )
    return RateValue(float(sigma_s ** q * inner), "general", s, float(lam1))


def random_design_rate(q: float, d: int, n: int, delta01: float, sigma: float = 1.0) -> RateValue:
    if d < 1 or n < 1 or delta01 < 0:
        raise ValueError("need d >= 1, n >= 1, delta01 >= 0")
    logn = math.log(n) if n > 1 else 0.0
    expo = q * d / (d + 2.0)
    main = (delta01 / n ** (1.0 / d)) ** min(1.0, expo)
    if abs(expo - 1) < _EPS:
        main *= logn
    log_pow = d if _is_q2(q) else (d - 1 if q > 2 else 0)
    edge = n ** (-min(q / 2.0, 1.0)) * logn ** log_pow
    return RateValue(sigma ** q * (main + edge), "random", d)


# -- worst-case construction -------------------------------------------------------


def default_k_star(K1: int, d: int) -> int:
    return d if K1 < 2 * d else K1 // 2


def free_blocks(K, m, delta_star: float, k_star: int) -> np.ndarray:
    """Blocks whose bit can be flipped without breaking monotonicity or hitting
    the cap: ``1 <= sum(k) - k* + 1 <= sqrt(m*) Delta*``, corner block excluded."""
    ks = np.indices(tuple(K)).sum(axis=0) + len(K)  # sum of 1-based block indices
    level = ks - k_star + 1
    mask = (level >= 1) & (level <= math.sqrt(float(np.prod(m))) * delta_star)
    mask[(0,) * len(K)] = False
    return mask


def worst_case_instance(dims, delta_star: float, m, theta=None, k_star: int | None = None,
                        sigma: float = 1.0) -> Field:
    """Piecewise-constant monotone field from the lower-bound construction.

    The lattice ``[1, n']`` with ``n'_j = K_j m_j``, ``K_j = floor(n_j / m_j)``, is
    cut into blocks of size ``m``; block ``k`` carries
    ``sigma * min{Delta*, (m*)^{-1/2} [theta(k) + (sum(k) - k*)_+]}`` and the
    rest of the lattice carries ``sigma * Delta*``.  Bits of ``theta`` outside
    :func:`free_blocks` are ignored, which keeps every draw monotone.
    """
    dims = tuple(int(n) for n in dims)
    m = tuple(int(x) for x in m)
    if len(m) != len(dims) or any(not 1 <= mj <= nj for mj, nj in zip(m, dims)):
        raise ValueError("block sides must satisfy 1 <= m_j <= n_j")
    mstar = float(np.prod(m))
    if math.sqrt(mstar) * delta_star < 1:
        raise ValueError("need sqrt(m*) * delta_star >= 1")
    K = tuple(nj // mj for nj, mj in zip(dims, m))
    d = len(dims)
    k_star = default_k_star(K[0], d) if k_star is None else int(k_star)
    bits = np.zeros(K) if theta is None else np.asarray(theta, dtype=float).reshape(K)
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("theta must be 0/1")
    bits = np.where(free_blocks(K, m, delta_star, k_star), bits, 0.0)
    ks = np.indices(K).sum(axis=0) + d
    g = sigma * np.minimum(delta_star, (bits + np.maximum(ks - k_star, 0)) / math.sqrt(mstar))
    full = np.full(dims, sigma * delta_star)
    blockwise = g
    for ax, mj in enumerate(m):
        blockwise = np.repeat(blockwise, mj, axis=ax)
    full[tuple(slice(0, K[j] * m[j]) for j in range(d))] = blockwise
    return Field(dims, full)
