"""Monte Carlo harness: experiment fields, noisy replications, paired risk
comparison and Table-1-style summaries."""
from __future__ import annotations

import functools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .estimators import EstimatorKind, block_estimate
from .lattice import Field, LatticeShape, PointCloud, SITE_ORDER, is_monotone
from .lse import SolveOptions, lse_lattice

EXPERIMENTS = ("I", "II", "III", "IV", "V", "VI", "VII", "VIIb")

_DEFAULT_DIMS = {
    "I": (50, 20), "II": (50, 20), "III": (50, 20), "VII": (50, 20), "VIIb": (50, 20),
    "IV": (10, 10, 10), "V": (10, 10, 10), "VI": (10, 10, 10),
}
_BLOCK_SHAPE = {"II": (10, 4), "V": (5, 5, 2)}

# Published means, sds and p-values (LSE vs block max-min, diff = LSE - block).
TABLE1 = {
    "I": dict(lse_mean=0.0822, lse_sd=0.0096, block_mean=0.0807, block_sd=0.0095,
              diff_mean=0.0016, diff_sd=0.0031, p=0.6190),
    "II": dict(lse_mean=0.1029, lse_sd=0.0156, block_mean=0.0918, block_sd=0.0149,
               diff_mean=0.0111, diff_sd=0.0041, p=0.0062),
    "III": dict(lse_mean=0.0713, lse_sd=0.0115, block_mean=0.0603, block_sd=0.0109,
                diff_mean=0.0110, diff_sd=0.0033, p=0.0007),
    "IV": dict(lse_mean=0.1412, lse_sd=0.0119, block_mean=0.1353, block_sd=0.0117,
               diff_mean=0.0059, diff_sd=0.0042, p=0.1600),
    "V": dict(lse_mean=0.1316, lse_sd=0.0178, block_mean=0.1096, block_sd=0.0169,
              diff_mean=0.0220, diff_sd=0.0059, p=0.0002),
    "VI": dict(lse_mean=0.0917, lse_sd=0.0160, block_mean=0.0746, block_sd=0.0147,
               diff_mean=0.0170, diff_sd=0.0045, p=0.0002),
    "VII": dict(lse_mean=0.0420, lse_sd=0.0090, block_mean=0.0440, block_sd=0.0087,
                diff_mean=-0.0020, diff_sd=0.0040, p=0.6163),
    "VIIb": dict(lse_mean=0.0298, lse_sd=math.nan, block_mean=0.0280, block_sd=math.nan,
                 diff_mean=0.0298 - 0.0280, diff_sd=math.nan, p=0.5568),
}


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    dims: LatticeShape
    block_shape: tuple | None = None
    levels: tuple = tuple(range(1, 11))
    range_target: float = 10.0
    step: float = 1.0
    gibbs_sweeps: int = 50
    sampler: str = "exact"
    anchor: str = "range"  # "range": f(1) = 0 and f(n) = range_target; "scale": f = c * g only

    def __post_init__(self):
        if self.id not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.id!r}; choose from {EXPERIMENTS}")
        if self.anchor not in ("range", "scale"):
            raise ValueError("anchor must be 'range' or 'scale'")
        if not isinstance(self.dims, LatticeShape):
            object.__setattr__(self, "dims", LatticeShape(tuple(self.dims)))

    @classmethod
    def default(cls, exp_id: str) -> "ExperimentSpec":
        if exp_id not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {exp_id!r}; choose from {EXPERIMENTS}")
        return cls(
            exp_id,
            LatticeShape(_DEFAULT_DIMS[exp_id]),
            block_shape=_BLOCK_SHAPE.get(exp_id),
            step=0.5 if exp_id == "VIIb" else 1.0,
        )


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 1.0
    kind: str = "gaussian"

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.kind != "gaussian":
            raise ValueError("only Gaussian noise is supported")

    def draw(self, dims, rng) -> np.ndarray:
        return self.sigma * rng.standard_normal(dims)


def _coords(dims):
    return np.meshgrid(*[np.arange(1, n + 1, dtype=float) for n in dims], indexing="ij")


def _monotone_slices(shape, nlev):
    """All monotone integer arrays of ``shape`` with entries in ``[0, nlev)``,
    one per row, cells in C order."""
    cells = list(np.ndindex(*shape)) if shape else [()]
    pos = {c: i for i, c in enumerate(cells)}
    rows = np.zeros((1, 0), dtype=np.int8)
    for c in cells:
        preds = [pos[c[:j] + (c[j] - 1,) + c[j + 1:]] for j in range(len(c)) if c[j] > 0]
        lo = rows[:, preds].max(axis=1) if preds else np.zeros(len(rows), dtype=np.int8)
        reps = nlev - lo
        base = np.repeat(rows, reps, axis=0)
        start = np.repeat(np.cumsum(reps) - reps, reps)
        new = (np.arange(base.shape[0]) - start + np.repeat(lo, reps)).astype(np.int8)
        rows = np.column_stack([base, new])
    return rows


@functools.lru_cache(maxsize=16)
def _transfer_tables(rest, nlev, L, max_states):
    states = _monotone_slices(rest, nlev)
    if len(states) > max_states:
        return None
    dom = np.all(states[:, None, :] <= states[None, :, :], axis=2).astype(float)
    back = [None] * L
    back[L - 1] = np.ones(len(states))
    for i in range(L - 2, -1, -1):
        b = dom @ back[i + 1]
        back[i] = b / b.max()
    return states, dom, back


def _exact_monotone_levels(grid, nlev, rng, max_states):
    """Uniform draw from monotone ``grid`` arrays over ``nlev`` levels, or None
    when the slice state space exceeds ``max_states``."""
    grid = tuple(grid)
    axis = int(np.argmax(grid))
    rest = grid[:axis] + grid[axis + 1:]
    if int(np.prod(rest)) > 8:  # enumeration alone would blow up
        return None
    L = grid[axis]
    tables = _transfer_tables(rest, nlev, L, max_states)
    if tables is None:
        return None
    states, dom, back = tables
    picks = []
    w = back[0]
    for i in range(L):
        if i > 0:
            w = dom[picks[-1]] * back[i]
        picks.append(int(rng.choice(len(states), p=w / w.sum())))
    out = np.stack([states[k].reshape(rest) for k in picks], axis=0)
    return np.moveaxis(out, 0, axis)


def gen_piecewise_monotone(dims, block_shape, levels, rng, gibbs_sweeps: int = 50,
                           sampler: str = "exact", max_states: int = 6000) -> Field:
    """Block-constant monotone field, block values uniform over monotone
    assignments from ``levels``.

    ``sampler="exact"`` draws slice by slice along the longest block axis with
    a transfer matrix over all monotone slices; when that state space exceeds
    ``max_states`` (or with ``sampler="gibbs"``) blocks are initialised in site
    order from ``[max lower neighbour, top level]`` and refined with
    ``gibbs_sweeps`` single-block Gibbs updates, an approximation.
    """
    dims = tuple(int(n) for n in dims)
    block_shape = tuple(int(b) for b in block_shape)
    if len(block_shape) != len(dims) or any(b < 1 or n % b for n, b in zip(dims, block_shape)):
        raise ValueError(f"block shape {block_shape} does not tile lattice {dims}")
    if sampler not in ("exact", "gibbs"):
        raise ValueError("sampler must be 'exact' or 'gibbs'")
    levels = np.array(sorted(set(float(v) for v in levels)))
    if levels.size == 0:
        raise ValueError("need at least one level")
    grid = tuple(n // b for n, b in zip(dims, block_shape))
    idx = None
    if sampler == "exact":
        idx = _exact_monotone_levels(grid, levels.size, rng, max_states)
    if idx is None:
        idx = _gibbs_monotone_levels(grid, levels.size, rng, gibbs_sweeps)
    values = levels[np.asarray(idx, dtype=int)]
    for ax, b in enumerate(block_shape):
        values = np.repeat(values, b, axis=ax)
    return Field(dims, values)


def _gibbs_monotone_levels(grid, nlev, rng, sweeps):
    d = len(grid)
    idx = np.zeros(grid, dtype=int)
    order = [np.unravel_index(i, grid, order=SITE_ORDER) for i in range(int(np.prod(grid)))]
    top = nlev - 1

    def bounds(k):
        lo, hi = 0, top
        for j in range(d):
            if k[j] > 0:
                lo = max(lo, idx[k[:j] + (k[j] - 1,) + k[j + 1:]])
            if k[j] < grid[j] - 1:
                hi = min(hi, idx[k[:j] + (k[j] + 1,) + k[j + 1:]])
        return lo, hi

    for k in order:
        lo, _ = bounds(k)
        idx[k] = rng.integers(lo, top + 1)
    for _ in range(sweeps):
        for k in order:
            lo, hi = bounds(k)
            idx[k] = rng.integers(lo, hi + 1)
    return idx


def gen_mean_field(spec: ExperimentSpec, rng=None) -> Field:
    dims = spec.dims.dims
    x = _coords(dims)
    R = spec.range_target
    eid = spec.id
    if eid in ("I", "IV"):
        g = sum(x) ** (2 / 3)
    elif eid in ("III", "VI"):
        g = np.log(x[0])
    elif eid in ("VII", "VIIb"):
        return Field(dims, spec.step * ((x[0] / dims[0] + x[1] / dims[1]) >= 1).astype(float))
    else:
        if rng is None:
            raise ValueError(f"experiment {eid} draws a random field; pass rng")
        return gen_piecewise_monotone(dims, spec.block_shape, spec.levels, rng,
                                      spec.gibbs_sweeps, sampler=spec.sampler)
    # corners taken from g itself so that f(1) = 0 and f(n) = range_target exactly
    top, bottom = float(g.flat[-1]), float(g.flat[0])
    if top == bottom:
        return Field(dims, np.zeros(dims))
    if spec.anchor == "range":
        values = R * ((g - bottom) / (top - bottom))
    else:
        values = R * g / top
    return Field(dims, values)


def lq_loss(fhat, f, q: float = 2.0) -> float:
    a = fhat.values if isinstance(fhat, Field) else np.asarray(fhat)
    b = f.values if isinstance(f, Field) else np.asarray(f)
    if a.shape != b.shape:
        raise ValueError("shapes differ")
    if q < 1:
        raise ValueError("q must be at least 1")
    return float(np.mean(np.abs(a - b) ** q))


def integrated_lq_loss(fhat: Callable, f: Callable, q: float, grid_per_dim: int, d: int) -> float:
    """Midpoint-rule approximation of the integral of ``|fhat - f|^q`` over ``[0, 1]^d``.

    Both callables take an ``(m, d)`` array of points and return ``m`` values.
    """
    if grid_per_dim < 2:
        raise ValueError("grid_per_dim must be at least 2")
    mids = (np.arange(grid_per_dim) + 0.5) / grid_per_dim
    pts = np.stack([g.ravel() for g in np.meshgrid(*([mids] * d), indexing="ij")], axis=1)
    gap = np.abs(np.asarray(fhat(pts), dtype=float) - np.asarray(f(pts), dtype=float))
    return float(np.mean(gap ** q))


def sample_random_design(n: int, d: int, rng, f: Callable | None = None,
                         noise: NoiseModel | None = None) -> PointCloud:
    """``n`` uniform points in ``[0, 1]^d``; responses ``f(x) + noise`` (zero by default)."""
    if n < 0 or d < 1:
        raise ValueError("need n >= 0 and d >= 1")
    pts = rng.random((n, d))
    y = np.zeros(n) if f is None else np.asarray(f(pts), dtype=float)
    if noise is not None:
        y = y + noise.sigma * rng.standard_normal(n)
    return PointCloud(pts, y, d=d)


@dataclass
class Replication:
    losses: list
    converged: bool


def run_replication(f: Field, noise: NoiseModel, kinds: Sequence, rng,
                    solve: SolveOptions | None = None, backend=None) -> Replication:
    """One noisy draw ``y = f + eps`` and the squared loss of each estimator on it."""
    kinds = [EstimatorKind.parse(k) for k in kinds]
    if not kinds:
        raise ValueError("need at least one estimator")
    solve = solve or SolveOptions(backend=backend)
    y = Field(f.shape, f.values + noise.draw(f.dims, rng))
    losses = []
    converged = True
    cache = {}
    for kind in kinds:
        if kind not in cache:
            if kind is EstimatorKind.Lse:
                res = lse_lattice(y, solve)
                converged &= res.converged
                cache[kind] = res.fit
            else:
                cache[kind] = block_estimate(y, kind, backend=backend)
        losses.append(lq_loss(cache[kind], f, 2.0))
    return Replication(losses, bool(converged))


class PairedTest:
    """Summary of paired differences.

    ``p`` is the two-sided t-test on ``mean / (sd / sqrt(R))`` with ``R - 1``
    degrees of freedom.  ``p_table`` is ``2 * (1 - Phi(|mean| / sd))``, which is
    the convention the published table follows.
    """

    def __init__(self, diffs):
        diffs = np.asarray(diffs, dtype=float)
        if diffs.size < 2:
            raise ValueError("need at least two differences")
        self.R = diffs.size
        self.mean = float(np.mean(diffs))
        self.sd = float(np.std(diffs, ddof=1))
        self.se = self.sd / math.sqrt(self.R)
        if self.sd == 0 or self.sd < 1e-15 * abs(self.mean):
            self.t = 0.0 if self.mean == 0 else math.copysign(math.inf, self.mean)
            self.p = self.p_table = 1.0 if self.mean == 0 else 0.0
        else:
            self.t = self.mean / self.se
            self.p = float(2 * stats.t.sf(abs(self.t), df=self.R - 1))
            self.p_table = float(2 * stats.norm.sf(abs(self.mean) / self.sd))

    def as_dict(self):
        return dict(R=self.R, mean=self.mean, sd=self.sd, se=self.se, t=self.t, p=self.p,
                    p_table=self.p_table)


def paired_test(diffs) -> PairedTest:
    return PairedTest(diffs)


@dataclass
class RiskReport:
    experiment: str
    kinds: list
    losses: np.ndarray  # (len(kinds), R)
    converged: np.ndarray
    seed: int
    sigma: float
    runtime: float
    dims: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def R(self) -> int:
        return self.losses.shape[1]

    @property
    def means(self) -> np.ndarray:
        return self.losses.mean(axis=1)

    @property
    def sds(self) -> np.ndarray:
        return self.losses.std(axis=1, ddof=1)

    @property
    def diff(self) -> np.ndarray:
        """First estimator's loss minus the second's, per replication."""
        if len(self.kinds) < 2:
            raise ValueError("a paired difference needs two estimators")
        return self.losses[0] - self.losses[1]

    def test(self) -> PairedTest:
        return paired_test(self.diff)

    def to_dict(self, include_losses: bool = True) -> dict:
        out = dict(
            experiment=self.experiment,
            dims=list(self.dims),
            kinds=list(self.kinds),
            R=self.R,
            seed=self.seed,
            sigma=self.sigma,
            runtime_s=self.runtime,
            means=self.means.tolist(),
            sds=self.sds.tolist(),
            unconverged=int(np.sum(~self.converged)),
            meta=self.meta,
        )
        if len(self.kinds) >= 2:
            out["paired"] = self.test().as_dict()
        if include_losses:
            out["losses"] = self.losses.tolist()
        return out


def replication_rng(seed: int, rep: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, rep)))


def field_rng(seed: int):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))


def _run_chunk(args):
    f, noise, kinds, seed, reps, solve, backend = args
    out = []
    for rep in reps:
        out.append(run_replication(f, noise, kinds, replication_rng(seed, rep), solve, backend))
    return out


def monte_carlo(spec: ExperimentSpec, noise: NoiseModel | None = None, kinds=("lse", "maxmin"),
                R: int = 500, seed: int = 0, jobs: int = 1, solve: SolveOptions | None = None,
                backend=None, f: Field | None = None) -> RiskReport:
    """``R`` paired replications on one mean field (drawn once per run)."""
    if R < 2:
        raise ValueError("need R >= 2")
    noise = noise or NoiseModel()
    kinds = [EstimatorKind.parse(k).value for k in kinds]
    f = gen_mean_field(spec, field_rng(seed)) if f is None else f
    start = time.perf_counter()
    reps = list(range(R))
    if jobs > 1:
        size = math.ceil(R / (4 * jobs))
        chunks = [reps[i:i + size] for i in range(0, R, size)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_run_chunk, [(f, noise, kinds, seed, c, solve, backend) for c in chunks])
            results = [r for part in parts for r in part]
    else:
        results = _run_chunk((f, noise, kinds, seed, reps, solve, backend))
    runtime = time.perf_counter() - start
    losses = np.array([r.losses for r in results]).T
    converged = np.array([r.converged for r in results])
    return RiskReport(
        spec.id, kinds, losses, converged, seed, noise.sigma, runtime, spec.dims.dims,
        meta=dict(field_monotone=is_monotone(f.values)),
    )


def table_row(report: RiskReport) -> dict:
    """Summary row (means, sds, paired test) for a two-estimator report."""
    test = report.test()
    return dict(
        experiment=report.experiment,
        est=f"{report.kinds[0]}-{report.kinds[1]}",
        mean_1=report.means[0], sd_1=report.sds[0],
        mean_2=report.means[1], sd_2=report.sds[1],
        diff_mean=test.mean, diff_sd=test.sd, diff_se=test.se, p=test.p, p_table=test.p_table,
    )


def with_dims(spec: ExperimentSpec, dims) -> ExperimentSpec:
    return replace(spec, dims=LatticeShape(tuple(dims)))
