"""Blocks decomposition of exceedance and scaled point processes.

Two modes share one interface:

``"exceedance"``  points ``j/n`` for ``xi_j > u_n`` on ``(0, 1]``; the block
                  maximum ``Y_i`` is the time of the last exceedance in block i.
``"scaled"``      points ``xi_j / a_n`` on the punctured line; ``Y_i`` is the
                  largest modulus in block i.

Replicated experiments never materialise whole paths as point measures.  A
:class:`BlockSample` keeps only the points above a recording floor, grouped
by replicate and block, which is all any statistic here depends on.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import models
from ._mc import Estimate, Z, mean_ci, run_jobs, stream, wilson
from .measure_core import REAL_LINE, UNIT_TIME, PointMeasure, TestFunction, normalize_by_max

MODES = ("exceedance", "scaled")
#: replicates per random stream for the sparse samplers
CHUNK = 4096
#: default relative floor below which cluster-shape atoms are dropped
SHAPE_FLOOR = 0.05


@dataclass(frozen=True)
class BlockPlan:
    n: int
    r: int

    def __post_init__(self):
        if self.n < 1 or self.r < 1:
            raise ValueError("n and r must be positive")
        if self.r > self.n:
            raise ValueError(f"block length {self.r} exceeds path length {self.n}")

    @property
    def k(self) -> int:
        return self.n // self.r

    @property
    def used(self) -> int:
        """Indices ``1..k r`` covered by blocks; the rest are discarded."""
        return self.k * self.r

    def block_of(self, j):
        """1-based block index of time index ``j`` (``0`` when discarded)."""
        j = np.asarray(j)
        return np.where(j <= self.used, (j - 1) // self.r + 1, 0)


def block_plan(n: int, rule="sqrt") -> BlockPlan:
    """Block plan from a rule: ``"sqrt"`` (default), ``"two_thirds"`` or an int."""
    if isinstance(rule, (int, np.integer)) and not isinstance(rule, bool):
        return BlockPlan(n, int(rule))
    if rule == "sqrt":
        return BlockPlan(n, math.ceil(math.sqrt(n)))
    if rule == "two_thirds":
        return BlockPlan(n, math.ceil(n ** (2 / 3)))
    raise ValueError(f"unknown block rule {rule!r}")


@dataclass(frozen=True)
class BlockSummary:
    index: int
    sub_process: PointMeasure
    block_max: float | None
    exceedance_count: int


def exceedance_process(path, u: float) -> PointMeasure:
    """Time-normalised exceedance process ``sum_j delta_{j/n} 1{xi_j > u}``."""
    path = np.asarray(path, dtype=float)
    n = path.size
    if n < 1:
        raise ValueError("empty path")
    j = np.flatnonzero(path > u) + 1
    return PointMeasure(j / n, None, UNIT_TIME)


def scaled_process(path, a: float) -> PointMeasure:
    """``sum_j delta_{xi_j / a}`` on the punctured line."""
    if not a > 0:
        raise ValueError("scaling must be positive")
    path = np.asarray(path, dtype=float)
    if np.any(path == 0):
        raise ValueError("scaled process undefined for exact zeros")
    return PointMeasure(path / a, None, REAL_LINE)


def split_blocks(path, plan: BlockPlan, *, u: float | None = None, a: float | None = None) -> list[BlockSummary]:
    """Per-block sub-processes of the exceedance (``u``) or scaled (``a``) process."""
    path = np.asarray(path, dtype=float)
    if (u is None) == (a is None):
        raise ValueError("give exactly one of u (exceedance mode) or a (scaled mode)")
    if plan.r > path.size:
        raise ValueError(f"block length {plan.r} exceeds path length {path.size}")
    if plan.n != path.size:
        raise ValueError("plan length differs from path length")
    n = path.size
    out = []
    for i in range(1, plan.k + 1):
        seg = path[(i - 1) * plan.r:i * plan.r]
        if u is not None:
            j = (i - 1) * plan.r + np.flatnonzero(seg > u) + 1
            sub = PointMeasure(j / n, None, UNIT_TIME)
            ymax = float(j.max() / n) if j.size else None
            cnt = int(j.size)
        else:
            sub = scaled_process(seg, a)
            ymax = float(np.abs(seg).max() / a)
            cnt = int(np.sum(np.abs(seg) > a))
        out.append(BlockSummary(i, sub, ymax, cnt))
    return out


# -- replicated block samples ---------------------------------------------

def _level(model, n, mode):
    if mode == "exceedance":
        return models.level_u(model, n)
    if mode == "scaled":
        return models.scale_a(model, n)
    raise ValueError(f"unknown mode {mode!r}")


def _sparse_job(args):
    model, n, t, start, size, seed, two_sided = args
    rng = stream(seed, "sparse", start // CHUNK)
    got = model.sparse_exceedances(n, t, size, rng, two_sided)
    rid, j, val = got
    return rid + start, j, val


def _path_job(args):
    model, n, t, start, size, seed, two_sided = args
    rids, js, vals = [], [], []
    for r in range(start, start + size):
        xi = models.sample_path(model, n, (seed, r))
        keep = np.flatnonzero(np.abs(xi) > t if two_sided else xi > t)
        rids.append(np.full(keep.size, r))
        js.append(keep + 1)
        vals.append(xi[keep])
    return np.concatenate(rids), np.concatenate(js), np.concatenate(vals)


def simulate_points(model, n: int, t: float, reps: int, seed, two_sided: bool, workers: int = 1):
    """Points ``(replicate, j, xi_j)`` with ``xi_j > t`` (or ``|xi_j| > t``).

    Uses the model's exact sparse sampler when it has one for this ``t``,
    otherwise thresholds full paths, one stream per replicate.
    """
    probe = model.sparse_exceedances(1, t, 1, stream(0), two_sided) is not None
    jobs = [(model, n, t, s, min(CHUNK, reps - s), seed, two_sided) for s in range(0, reps, CHUNK)]
    parts = run_jobs(_sparse_job if probe else _path_job, jobs, workers)
    rid = np.concatenate([p[0] for p in parts]).astype(np.int64)
    j = np.concatenate([p[1] for p in parts]).astype(np.int64)
    val = np.concatenate([p[2] for p in parts]).astype(float)
    order = np.lexsort((j, rid))
    return rid[order], j[order], val[order]


@dataclass
class BlockSample:
    """Points above a floor from ``reps`` replicate paths, split into blocks.

    ``loc`` holds ``j/n`` (exceedance mode) or ``xi_j / a_n`` (scaled mode);
    in scaled mode only ``|loc| > floor`` is recorded.
    """

    model: object
    plan: BlockPlan
    mode: str
    level: float
    floor: float | None
    reps: int
    rep: np.ndarray
    j: np.ndarray
    loc: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def k(self) -> int:
        return self.plan.k

    @cached_property
    def block(self) -> np.ndarray:
        return self.plan.block_of(self.j)

    @cached_property
    def _groups(self):
        inb = self.block > 0
        key = self.rep[inb] * (self.k + 1) + self.block[inb]
        uniq, gid = np.unique(key, return_inverse=True)
        return inb, uniq, gid

    @property
    def group_rep(self) -> np.ndarray:
        return self._groups[1] // (self.k + 1)

    @property
    def group_block(self) -> np.ndarray:
        return self._groups[1] % (self.k + 1)

    @property
    def group_id(self) -> np.ndarray:
        """Group index of every in-block point (aligned with ``block_locs``)."""
        return self._groups[2]

    @property
    def block_locs(self) -> np.ndarray:
        return self.loc[self._groups[0]]

    @property
    def n_groups(self) -> int:
        return self._groups[1].size

    @cached_property
    def group_max(self) -> np.ndarray:
        """``Y`` of every nonempty block."""
        vals = self.block_locs if self.mode == "exceedance" else np.abs(self.block_locs)
        out = np.full(self.n_groups, -np.inf)
        np.maximum.at(out, self.group_id, vals)
        return out

    @cached_property
    def group_count(self) -> np.ndarray:
        return np.bincount(self.group_id, minlength=self.n_groups)

    def group_count_above(self, level: float) -> np.ndarray:
        w = (np.abs(self.block_locs) > level).astype(float)
        return np.bincount(self.group_id, weights=w, minlength=self.n_groups).astype(np.int64)

    def group_measure(self, g: int) -> PointMeasure:
        sel = self.group_id == g
        space = UNIT_TIME if self.mode == "exceedance" else REAL_LINE
        return PointMeasure(self.block_locs[sel], None, space)

    def per_rep(self, group_values) -> np.ndarray:
        """Sum a per-group quantity within each replicate."""
        return np.bincount(self.group_rep, weights=group_values, minlength=self.reps)

    def summaries_csv(self) -> str:
        """CSV rows ``replicate,i,block_max,exceedance_count`` for every block."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["replicate", "i", "block_max", "exceedance_count"])
        counts = self.group_count if self.mode == "exceedance" else self.group_count_above(1.0)
        lookup = {(int(r), int(b)): g for g, (r, b) in enumerate(zip(self.group_rep, self.group_block))}
        for r in range(self.reps):
            for i in range(1, self.k + 1):
                g = lookup.get((r, i))
                if g is None:
                    w.writerow([r, i, "", 0])
                else:
                    w.writerow([r, i, repr(float(self.group_max[g])), int(counts[g])])
        return buf.getvalue()


def simulate_blocks(model, plan: BlockPlan, mode: str, reps: int, seed, floor: float | None = None,
                    workers: int = 1) -> BlockSample:
    """Replicated block sample for ``model`` under ``plan``.

    In scaled mode ``floor`` (in units of ``a_n``) sets the recording level and
    is required; in exceedance mode the level ``u_n`` is the threshold.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    n = plan.n
    level = _level(model, n, mode)
    if mode == "exceedance":
        rid, j, val = simulate_points(model, n, level, reps, seed, two_sided=False, workers=workers)
        loc = j / n
        floor = None
    else:
        if floor is None or not floor > 0:
            raise ValueError("scaled mode needs a positive recording floor")
        rid, j, val = simulate_points(model, n, floor * level, reps, seed, two_sided=True, workers=workers)
        loc = val / level
    return BlockSample(model, plan, mode, level, floor, reps, rid, j, loc,
                       meta={"seed": seed, "burn_in": model.burn_in})


# -- estimators --------------------------------------------------------------

@dataclass(frozen=True)
class ConditionARow:
    n: int
    r: int
    k: int
    x: float
    estimate: Estimate


def _check_reps(reps):
    if reps < 100:
        raise ValueError("need at least 100 replicates")


def block_exceed_stat(bs: BlockSample, x: float, group_mask=None) -> Estimate:
    """``sum_i P(Y_i > x [, N_i in M])`` estimated from a block sample.

    Scaled mode uses stationarity (``k P(Y_1 > x)``, Wilson interval over all
    blocks); exceedance mode averages per-replicate block counts, since the
    time-valued ``Y_i`` are not identically distributed across blocks.
    """
    if bs.mode == "scaled" and not x > bs.floor:
        raise ValueError("x must exceed the recording floor")
    hit = bs.group_max > x
    if group_mask is not None:
        hit &= group_mask
    if bs.mode == "scaled":
        return wilson(int(hit.sum()), bs.k * bs.reps).scaled(bs.k)
    return mean_ci(bs.per_rep(hit.astype(float)))


def condition_a_stat(model, schedule, x, reps: int, seed, mode: str = "scaled", rule="sqrt",
                     workers: int = 1):
    """Condition (a) statistic for every ``n`` in ``schedule`` and every ``x``.

    ``schedule`` holds path lengths or :class:`BlockPlan` objects.  Returns
    ``(rows, sup)`` where ``sup[x]`` is the largest estimate over the schedule
    (the boundedness diagnostic).
    """
    _check_reps(reps)
    xs = [float(v) for v in np.atleast_1d(x)]
    if any(v <= 0 for v in xs):
        raise ValueError("x must be positive")
    rows = []
    for item in schedule:
        plan = item if isinstance(item, BlockPlan) else block_plan(int(item), rule)
        floor = 0.5 * min(xs) if mode == "scaled" else None
        bs = simulate_blocks(model, plan, mode, reps, seed, floor, workers)
        for v in xs:
            rows.append(ConditionARow(plan.n, plan.r, plan.k, v, block_exceed_stat(bs, v)))
    sup = {v: max(r.estimate.value for r in rows if r.x == v) for v in xs}
    return rows, sup


@dataclass(frozen=True)
class ClusterSizes:
    probs: dict
    blocks: int
    n: int
    r: int

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "r": self.r, "qualifying_blocks": self.blocks,
                           "pi": {str(k): v for k, v in sorted(self.probs.items())}}, sort_keys=True)


def size_distribution(bs: BlockSample) -> ClusterSizes:
    sizes = bs.group_count if bs.mode == "exceedance" else bs.group_count_above(1.0)
    sizes = sizes[sizes > 0]
    if sizes.size == 0:
        raise ValueError("no exceeding blocks")
    ks, cnt = np.unique(sizes, return_counts=True)
    probs = {int(k): float(c) / sizes.size for k, c in zip(ks, cnt)}
    return ClusterSizes(probs, int(sizes.size), bs.n, bs.plan.r)


def cluster_sizes(model, plan: BlockPlan, reps: int, seed, workers: int = 1) -> ClusterSizes:
    """Pooled conditional distribution of the exceedance count per block."""
    bs = simulate_blocks(model, plan, "exceedance", reps, seed, workers=workers)
    return size_distribution(bs)


def shapes_from_sample(bs: BlockSample, x: float, floor: float = SHAPE_FLOOR) -> list[PointMeasure]:
    if bs.mode != "scaled":
        raise ValueError("cluster shapes need scaled mode")
    if floor * x < bs.floor:
        raise ValueError("recording floor too high for the requested shapes")
    ymax = bs.group_max
    qual = np.flatnonzero(ymax > x)
    if qual.size == 0:
        raise ValueError("no qualifying blocks")
    locs = bs.block_locs
    gid = bs.group_id
    keep = np.abs(locs) > floor * ymax[gid]
    order = np.argsort(gid, kind="stable")
    bounds = np.searchsorted(gid[order], np.arange(bs.n_groups + 1))
    out = []
    for g in qual:
        idx = order[bounds[g]:bounds[g + 1]]
        idx = idx[keep[idx]]
        out.append(normalize_by_max(PointMeasure(locs[idx], None, REAL_LINE)))
    return out


def cluster_shapes(model, plan: BlockPlan, x: float, reps: int, seed, floor: float = SHAPE_FLOOR,
                   workers: int = 1) -> list[PointMeasure]:
    """Normalised shapes of blocks whose maximum modulus exceeds ``x a_n``.

    Atoms below ``floor`` times the block maximum are dropped: they vanish
    in the vague limit and would otherwise swamp every shape with ``r_n``
    near-zero atoms.
    """
    bs = simulate_blocks(model, plan, "scaled", reps, seed, floor * x, workers)
    return shapes_from_sample(bs, x, floor)


@dataclass(frozen=True)
class ThetaRow:
    n: int
    r: int
    estimate: Estimate
    known: float | None


def extremal_index(model, schedule, reps: int, seed, rule="sqrt", workers: int = 1) -> list[ThetaRow]:
    """``k_n P(max_{j <= r_n} |xi_j| > a_n)`` for each ``n``."""
    rows, _ = condition_a_stat(model, schedule, 1.0, reps, seed, "scaled", rule, workers)
    return [ThetaRow(r.n, r.r, r.estimate, model.known_theta) for r in rows]


def _abs_interval(value, half):
    lo, hi = value - half, value + half
    if lo <= 0 <= hi:
        return Estimate(abs(value), 0.0, max(-lo, hi))
    return Estimate(abs(value), min(abs(lo), abs(hi)), max(abs(lo), abs(hi)))


@dataclass(frozen=True)
class LaplaceTerms:
    """Per-replicate ``exp(-N_n(f))`` and per-block ``exp(-N_{i,n}(f))`` summaries."""

    full: np.ndarray          # exp(-N_n(f)) per replicate
    block_mean: np.ndarray    # mean over blocks of exp(-N_i(f)) per replicate
    block_loss: np.ndarray    # sum over blocks of 1 - exp(-N_i(f)) per replicate
    per_block_loss: np.ndarray  # (reps is summed) sum over replicates of 1 - exp(-N_i f), per block i
    group_rep: np.ndarray
    group_block: np.ndarray
    group_loss: np.ndarray


def laplace_terms(bs: BlockSample, f: TestFunction) -> LaplaceTerms:
    if bs.mode == "scaled" and f.inner_gap < bs.floor:
        raise ValueError("test function reaches below the recording floor")
    fv = f(bs.loc)
    full = np.exp(-np.bincount(bs.rep, weights=fv, minlength=bs.reps))
    inb = bs._groups[0]
    gsum = np.bincount(bs.group_id, weights=fv[inb], minlength=bs.n_groups)
    gloss = -np.expm1(-gsum)
    loss = bs.per_rep(gloss)
    per_block = np.bincount(bs.group_block, weights=gloss, minlength=bs.k + 1)[1:]
    return LaplaceTerms(full, 1.0 - loss / bs.k, loss, per_block, bs.group_rep, bs.group_block, gloss)


def gap_from_sample(bs: BlockSample, f: TestFunction) -> Estimate:
    R, k = bs.reps, bs.k
    if f.is_zero:
        return Estimate(0.0, 0.0, 0.0)
    lt = laplace_terms(bs, f)
    A = lt.full.mean()
    if bs.mode == "scaled":
        m = lt.block_mean.mean()
        prod = m ** k
        psi = (lt.full - A) - k * m ** (k - 1) * (lt.block_mean - m)
    else:
        mi = 1.0 - lt.per_block_loss / R
        prod = float(np.prod(mi))
        # sum_i (B_ri - m_i) / m_i, with B_ri = 1 for empty blocks
        base = np.sum(1.0 / mi) - k
        adj = np.bincount(lt.group_rep, weights=lt.group_loss / mi[lt.group_block - 1], minlength=R)
        psi = (lt.full - A) - prod * (base - adj)
    gap = A - prod
    half = Z * float(psi.std(ddof=1)) / math.sqrt(R)
    return _abs_interval(gap, half)


def ai_gap(model, plan: BlockPlan, f: TestFunction, reps: int, seed, mode: str = "scaled",
           workers: int = 1) -> Estimate:
    """Factorisation gap ``|E e^{-N_n(f)} - prod_i E e^{-N_{i,n}(f)}|`` with a delta-method CI.

    In scaled mode the blocks are identically distributed and the product is
    ``(E e^{-N_{1,n}(f)})^{k_n}`` with the expectation pooled over blocks.
    """
    if f.is_zero:
        return Estimate(0.0, 0.0, 0.0)
    floor = f.inner_gap if mode == "scaled" else None
    bs = simulate_blocks(model, plan, mode, reps, seed, floor, workers)
    return gap_from_sample(bs, f)
