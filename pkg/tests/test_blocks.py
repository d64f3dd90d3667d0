import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cluster_limit import blocks
from cluster_limit.blocks import (BlockPlan, ai_gap, block_plan, cluster_shapes, cluster_sizes, condition_a_stat,
                                  exceedance_process, extremal_index, scaled_process, simulate_blocks, split_blocks)
from cluster_limit.measure_core import (PointMeasure, TestFunction, count, in_M_tilde, modulus_above, restrict,
                                        superpose, trapezoid, UNIT_TIME, interval)
from cluster_limit.models import IidPareto, MovingMax, sample_path, scale_a, tail

import oracles


def test_exceedance_process_examples():
    assert exceedance_process([0, 5, 0, 7], 1.0) == PointMeasure([0.5, 1.0], space=UNIT_TIME)
    assert exceedance_process([0, 5, 0, 7], 10.0).is_null
    assert exceedance_process([2, 3, 4], 0.0).total == 3


def test_scaled_process_examples():
    assert scaled_process([2.0, -4.0], 2.0) == PointMeasure([1.0, -2.0])
    assert scaled_process([1.5, -0.25], 1.0) == PointMeasure([1.5, -0.25])
    with pytest.raises(ValueError):
        scaled_process([1.0, 0.0], 1.0)


def test_split_blocks_layout():
    path = np.array([3.0, 0.5, 2.0, 4.0])
    b = split_blocks(path, BlockPlan(4, 2), u=1.0)
    assert [s.index for s in b] == [1, 2]
    assert b[0].sub_process == PointMeasure([0.25], space=UNIT_TIME)
    assert b[1].sub_process == PointMeasure([0.75, 1.0], space=UNIT_TIME)
    five = split_blocks(np.array([3.0, 0.5, 2.0, 4.0, 9.0]), BlockPlan(5, 2), u=1.0)
    assert sum(s.exceedance_count for s in five) == 3
    with pytest.raises(ValueError):
        BlockPlan(4, 5)


def test_block_plan_rules():
    assert block_plan(10 ** 6).r == 1000 and block_plan(10 ** 6).k == 1000
    assert block_plan(1000, "two_thirds").r == 100
    assert block_plan(100, 7).used == 98


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 200), st.integers(1, 50), st.integers(0, 10 ** 6))
def test_split_superpose_equals_restrict(n, r, seed):
    r = min(r, n)
    path = sample_path(IidPareto(1.0, 0.5), n, seed)
    plan = BlockPlan(n, r)
    a = 0.2 * n
    parts = split_blocks(path, plan, a=a)
    whole = scaled_process(path[:plan.used], a)
    sup = PointMeasure.null()
    for p in parts:
        sup = superpose(sup, p.sub_process)
        has_max = p.block_max is not None
        assert has_max
        # block max above 1 iff at least one exceedance of a
        assert (p.block_max > 1.0) == (p.exceedance_count >= 1)
    assert sup == whole
    u = 0.3 * n
    ex = split_blocks(path, plan, u=u)
    for p in ex:
        assert (p.block_max is not None) == (p.exceedance_count >= 1) == (not p.sub_process.is_null)
    merged = PointMeasure.null(UNIT_TIME)
    for p in ex:
        merged = superpose(merged, p.sub_process)
    full = exceedance_process(path, u)
    assert merged == restrict(full, interval(0.0, plan.used / n))


def test_condition_a_at_r1_matches_tail():
    m = IidPareto(1.0, 1.0)
    n, reps = 10 ** 5, 4000
    rows, sup = condition_a_stat(m, [BlockPlan(n, 1)], [1.0, 2.0], reps, 3)
    for row in rows:
        target = n * tail(m, row.x * scale_a(m, n))[0]
        se = math.sqrt(target / reps)
        assert abs(row.estimate.value - target) < 3 * se
    assert sup[1.0] == rows[0].estimate.value


def test_condition_a_monotone_in_x():
    rows, _ = condition_a_stat(MovingMax(2, 1.0), [10 ** 4], [0.5, 1.0, 2.0, 4.0], 300, 5)
    vals = [r.estimate.value for r in rows]
    assert vals == sorted(vals, reverse=True)
    with pytest.raises(ValueError):
        condition_a_stat(MovingMax(), [10 ** 4], 1.0, 50, 5)


def test_moving_max_condition_a_half():
    rows, _ = condition_a_stat(MovingMax(2, 1.0), [10 ** 6], 1.0, 2000, 12)
    e = rows[0].estimate
    assert e.lo - 0.02 <= 0.5 <= e.hi + 0.02


def test_cluster_sizes_iid_against_binomial():
    n = 10 ** 6
    plan = block_plan(n)
    cs = cluster_sizes(IidPareto(1.0, 1.0), plan, 3000, 21)
    assert sum(cs.probs.values()) == pytest.approx(1.0)
    exact = oracles.iid_block_sizes(n, plan.r, 1.0 / n)
    assert abs(cs.probs.get(1, 0.0) - exact[1]) < 4 * math.sqrt(exact[1] * (1 - exact[1]) / cs.blocks)


def test_cluster_sizes_moving_max():
    cs = cluster_sizes(MovingMax(2, 1.0), block_plan(10 ** 6), 500, 22)
    assert cs.probs.get(2, 0.0) > 0.95


def test_cluster_sizes_no_blocks():
    with pytest.raises(ValueError, match="no exceeding blocks"):
        blocks.size_distribution(_empty_sample())


def _empty_sample():
    bs = simulate_blocks(IidPareto(1.0, 1.0), BlockPlan(10, 5), "exceedance", 100, 1)
    keep = np.zeros(bs.rep.size, dtype=bool)
    return blocks.BlockSample(bs.model, bs.plan, bs.mode, bs.level, bs.floor, bs.reps,
                              bs.rep[keep], bs.j[keep], bs.loc[keep])


def test_cluster_shapes_in_M_tilde():
    shapes = cluster_shapes(MovingMax(2, 1.0), block_plan(10 ** 5), 1.0, 2000, 4)
    assert shapes and all(in_M_tilde(s) for s in shapes)
    modal = max(set(shapes), key=shapes.count)
    assert modal == PointMeasure([1.0], [2])
    iid = cluster_shapes(IidPareto(1.0, 1.0), block_plan(10 ** 5), 1.0, 2000, 4)
    single = np.mean([s.total == 1 for s in iid])
    assert single > 0.9


def test_extremal_index_iid_against_identity():
    n = 10 ** 5
    plan = block_plan(n)
    row = extremal_index(IidPareto(1.0, 1.0), [plan], 2000, 30)[0]
    target = oracles.iid_theta(n, plan.r, 1.0 / n)
    assert row.estimate.lo <= target <= row.estimate.hi
    assert row.known == 1.0


def test_ai_gap_zero_function():
    g = ai_gap(MovingMax(), block_plan(10 ** 4), TestFunction.zero(), 100, 1)
    assert g.value == 0.0 and g.hi == 0.0


def test_ai_gap_iid_contains_zero():
    f = trapezoid(0.5, math.inf, 2.0, 0.25, side="both")
    g = ai_gap(IidPareto(1.0, 0.5), BlockPlan(10 ** 4, 100), f, 20000, 9)
    assert g.lo == 0.0


def test_workers_do_not_change_results():
    plan = block_plan(10 ** 4)
    one = simulate_blocks(MovingMax(2, 1.0), plan, "scaled", 9000, 17, 0.5, workers=1)
    many = simulate_blocks(MovingMax(2, 1.0), plan, "scaled", 9000, 17, 0.5, workers=3)
    assert np.array_equal(one.loc, many.loc) and np.array_equal(one.rep, many.rep)


def test_summaries_csv_shape():
    bs = simulate_blocks(IidPareto(1.0, 1.0), BlockPlan(100, 10), "exceedance", 3, 2)
    lines = bs.summaries_csv().strip().split("\r\n")
    assert lines[0] == "replicate,i,block_max,exceedance_count"
    assert len(lines) == 1 + 3 * 10
