import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cluster_limit import limits
from cluster_limit.limits import (AllOf, Always, AnyOf, CountAtLeast, TotalCount, canonical_from_dict,
                                  cluster_mass, compound_poisson_uniform, laplace, regvar_cluster, sample,
                                  sample_many, shape_law, tail_mass, void_probability)
from cluster_limit.measure_core import (REAL_LINE, UNIT_TIME, DomainError, PointMeasure, TestFunction, interval,
                                        near_indicator, superpose, pair, trapezoid)

CP1 = compound_poisson_uniform(1.0, {2: 1.0})
RV = regvar_cluster(0.5, 1.0, shape_law("double"))


def test_tail_mass_examples():
    assert tail_mass(compound_poisson_uniform(1.0, [1.0]), 0.5) == 0.5
    assert tail_mass(CP1, 1.0) == 0.0 and tail_mass(CP1, 3.0) == 0.0
    quad, _ = integrate.quad(lambda y: 0.5 * y ** -2, 2, np.inf)
    assert tail_mass(regvar_cluster(0.5, 1.0, shape_law("single")), 2.0) == pytest.approx(quad, rel=1e-10)


def test_cluster_mass_examples():
    c = compound_poisson_uniform(2.0, [0.3, 0.7])
    assert cluster_mass(c, 0.5, TotalCount(2)) == pytest.approx(0.7)
    assert cluster_mass(c, 0.5, Always()) == pytest.approx(tail_mass(c, 0.5))
    m1, m2 = TotalCount(1), TotalCount(2)
    assert cluster_mass(c, 0.2, m1 | m2) == pytest.approx(cluster_mass(c, 0.2, m1) + cluster_mass(c, 0.2, m2))


def test_cluster_mass_rejects_non_event():
    with pytest.raises(TypeError):
        cluster_mass(CP1, 0.5, lambda mu: True)


def test_cluster_mass_interval_event():
    # clusters at y in (0.5, 0.8] count on (0.5, 0.8]; rate 1 so mass 0.3
    assert cluster_mass(CP1, 0.2, CountAtLeast(interval(0.5, 0.8), 1)) == pytest.approx(0.3)
    both = AllOf((TotalCount(2), CountAtLeast(interval(0.5, 0.8), 1)))
    assert cluster_mass(CP1, 0.2, both) == pytest.approx(0.3)


def test_laplace_examples():
    assert laplace(CP1, TestFunction.zero(UNIT_TIME)) == 1.0
    f = trapezoid(0.5, 1.0, math.log(2), 1e-9, UNIT_TIME)
    assert laplace(CP1, f) == pytest.approx(math.exp(-0.375), abs=1e-8)


def test_laplace_against_independent_quadrature():
    f = trapezoid(0.3, 0.7, 1.2, 0.1, UNIT_TIME)
    # compound Poisson with pi_2 = 1 and rate a: -log L = a int (1 - e^{-2 f(y)}) dy
    ref, _ = integrate.quad(lambda y: 1 - math.exp(-2 * f(y)), 0, 1, points=[0.2, 0.3, 0.7, 0.8],
                            epsabs=1e-13, limit=200)
    assert -math.log(laplace(CP1, f)) == pytest.approx(ref, abs=1e-9)


def test_void_probability_examples():
    assert void_probability(CP1, 1.0) == 1.0
    assert void_probability(compound_poisson_uniform(1.0, [1.0]), 0.5) == pytest.approx(math.exp(-0.5))
    assert void_probability(regvar_cluster(1.0, 1.0, shape_law("single")), 1.0) == pytest.approx(math.exp(-1))
    c = canonical_from_dict({"variant": "compound_poisson_uniform", "a": 1.0, "pi": [1.0], "D": [0.5]})
    with pytest.raises(DomainError, match="fixed atom at boundary"):
        void_probability(c, 0.5)


def test_void_matches_near_indicator():
    ramp = 1e-7
    for c, x in ((CP1, 0.4), (RV, 1.5)):
        f = near_indicator(x, c.space, ramp=ramp, height=60.0)
        assert abs(void_probability(c, x) - laplace(c, f)) <= 10 * ramp * max(c.params.get("a", 1.0), 1.0) + 1e-9


def test_serialisation_round_trip():
    for c in (CP1, RV, compound_poisson_uniform(1.0, limits.geometric_pi(0.5)),
              regvar_cluster(1.0, 2.0, shape_law("signed_single", p=0.3))):
        back = canonical_from_dict(json.loads(c.to_json()))
        assert back.to_json() == c.to_json()


def test_tail_mass_zero_measure():
    zero = compound_poisson_uniform(0.0, [1.0])
    assert tail_mass(zero, 0.1) == 0.0 and void_probability(zero, 0.1) == 1.0


def test_sample_restriction_and_errors():
    mu = sample(RV, 0.5, 3)
    assert all(abs(x) > 0.5 for x in mu.locations)
    with pytest.raises(ValueError):
        sample(RV, 0.0, 1)
    with pytest.raises(ValueError):
        sample(CP1, 1.5, 1)


def test_sample_deterministic():
    assert sample(RV, 0.3, 9) == sample(RV, 0.3, 9)


def test_superposition_doubles_rate():
    f = trapezoid(0.2, 0.9, 0.8, 0.1, UNIT_TIME)
    c = compound_poisson_uniform(0.7, limits.geometric_pi(0.5))
    s1 = sample_many(c, 0.1, 40000, 1)
    s2 = sample_many(c, 0.1, 40000, 2)
    v = np.exp(-(s1.pair(f) + s2.pair(f)))
    doubled = laplace(compound_poisson_uniform(1.4, limits.geometric_pi(0.5)), f)
    assert abs(v.mean() - doubled) < 3 * v.std(ddof=1) / math.sqrt(v.size)
    # spot check of the flat representation against PointMeasure arithmetic
    mu = superpose(s1.measure(0), s2.measure(0))
    assert pair(mu, f) == pytest.approx(s1.pair(f)[0] + s2.pair(f)[0])


# -- properties ---------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0))
def test_tail_mass_monotone(x, y):
    lo, hi = sorted((x, y))
    for c in (CP1, RV):
        assert tail_mass(c, hi) <= tail_mass(c, lo)
        assert cluster_mass(c, lo, TotalCount(2)) <= tail_mass(c, lo) + 1e-15


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 0.6), st.floats(0.05, 0.3), st.floats(0.1, 3.0), st.floats(1.0, 3.0))
def test_laplace_monotone(lo, width, h, scale):
    f = trapezoid(lo, lo + width, h, 0.05, UNIT_TIME)
    g = trapezoid(lo, lo + width, h * scale, 0.05, UNIT_TIME)
    assert laplace(CP1, f) >= laplace(CP1, g)


@settings(max_examples=15, deadline=None)
@given(st.floats(1.5, 4.0))
def test_neg_log_laplace_additive_over_positions(split):
    # split nu at an interior point of the position axis
    f_all = trapezoid(1.0, math.inf, 1.0, 0.5, side="both")
    c = regvar_cluster(0.8, 1.5, shape_law("signed_single", p=0.4))
    total = -math.log(laplace(c, f_all))
    # nu restricted to (0, split] and (split, inf) via truncated position measures
    lower = _restricted(c, upper=split)
    upper = _restricted(c, lower_cut=split)
    assert total == pytest.approx(-math.log(laplace(lower, f_all)) - math.log(laplace(upper, f_all)), rel=1e-7)


class _Truncated:
    def __init__(self, base, lo, hi):
        self.base, self.lo, self.upper = base, lo, hi

    def mass_above(self, x):
        x = max(x, self.lo)
        if x >= self.upper:
            return 0.0
        return self.base.mass_above(x) - (self.base.mass_above(self.upper) if math.isfinite(self.upper) else 0.0)

    def density(self, y):
        y = np.asarray(y, dtype=float)
        return np.where((y > self.lo) & (y <= self.upper), self.base.density(y), 0.0)


def _restricted(c, lower_cut=0.0, upper=math.inf):
    return limits.CanonicalMeasure(c.variant, _Truncated(c.nu, lower_cut, upper), c.Q, c.space, dict(c.params))


def test_cluster_event_combinators():
    mu = PointMeasure([0.3, 0.9], [1, 2], UNIT_TIME)
    assert TotalCount(3)(mu) and not TotalCount(2)(mu)
    assert (TotalCount(3) & CountAtLeast(interval(0.5, 1.0), 2))(mu)
    assert (TotalCount(1) | Always())(mu)
    assert not AnyOf((TotalCount(1), TotalCount(2)))(mu)
