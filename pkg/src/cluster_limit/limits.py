"""Infinitely divisible limit processes given by a position measure and a shape law.

A canonical measure is stored through its disintegration: a measure ``nu`` on
``(0, inf)`` for the cluster's largest modulus and a law ``Q`` of normalised
shapes, with ``K(y, .)`` the image of ``Q`` under rescaling by ``y``.

Built-in variants
-----------------
compound Poisson on (0, 1]
    ``nu = a Leb`` on ``(0, 1]``, ``Q = sum_k pi_k delta_{k delta_1}``.
regularly varying clusters
    ``nu(dy) = theta alpha y^{-alpha-1} dy``, ``Q`` a law on normalised shapes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._mc import Estimate, Z, stream
from .measure_core import (REAL_LINE, UNIT_TIME, DomainError, IntervalSet, PointMeasure, SpaceSpec,
                           TestFunction, in_M_tilde)

QUAD_TOL = 1e-10


class QuadratureError(RuntimeError):
    pass


# -- position measures ---------------------------------------------------------

@dataclass(frozen=True)
class UniformRate:
    """``a`` times Lebesgue measure on ``(0, upper]``."""

    a: float
    upper: float = 1.0

    def mass_above(self, x: float) -> float:
        return self.a * max(0.0, self.upper - max(x, 0.0))

    def density(self, y):
        y = np.asarray(y, dtype=float)
        return np.where((y > 0) & (y <= self.upper), self.a, 0.0)

    def draw(self, rng, eps: float, size: int):
        return rng.uniform(eps, self.upper, size)


@dataclass(frozen=True)
class PowerLaw:
    """``theta alpha y^{-alpha-1} dy`` on ``(0, inf)``."""

    theta: float
    alpha: float
    upper: float = math.inf

    def mass_above(self, x: float) -> float:
        if x <= 0:
            return math.inf
        return self.theta * x ** -self.alpha

    def density(self, y):
        y = np.asarray(y, dtype=float)
        return self.theta * self.alpha * y ** (-self.alpha - 1.0)

    def draw(self, rng, eps: float, size: int):
        return eps * (rng.random(size) + 2.0 ** -54) ** (-1.0 / self.alpha)


# -- shape laws ------------------------------------------------------------------

@dataclass
class ShapeLaw:
    """Finite law over normalised shapes (point measures with max modulus one).

    ``empirical`` marks a law built from simulated shapes; its functionals
    carry a sampling interval across shapes.
    """

    shapes: list
    weights: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    empirical: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.shapes) != self.weights.size or self.weights.size == 0:
            raise ValueError("one weight per shape required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("shape weights must be a probability vector")

    def draw(self, rng, size: int) -> np.ndarray:
        return rng.choice(len(self.shapes), size=size, p=self.weights / self.weights.sum())

    def to_dict(self) -> dict:
        if self.kind == "empirical" or self.kind == "points":
            return {"kind": self.kind, "shapes": [s.to_dict() for s in self.shapes],
                    "weights": self.weights.tolist()}
        return {"kind": self.kind, **self.params}


def _shape(locs, mults=None):
    return PointMeasure(locs, mults, REAL_LINE)


def _truncated_geometric(p: float, tol: float = 1e-16) -> np.ndarray:
    if not 0 < p <= 1:
        raise ValueError("geometric parameter must lie in (0, 1]")
    kmax = 1 if p == 1 else max(1, math.ceil(math.log(tol) / math.log(1 - p)))
    pi = p * (1 - p) ** np.arange(kmax)
    return pi / pi.sum()


def shape_law(kind: str, **params) -> ShapeLaw:
    """Named shape laws: ``single``, ``signed_single(p)``, ``double``, ``geometric(p)``."""
    if kind == "single":
        return ShapeLaw([_shape([1.0])], [1.0], kind)
    if kind == "double":
        return ShapeLaw([_shape([1.0], [2])], [1.0], kind)
    if kind == "signed_single":
        p = float(params.get("p", 0.5))
        shapes, w = [], []
        if p > 0:
            shapes.append(_shape([1.0]))
            w.append(p)
        if p < 1:
            shapes.append(_shape([-1.0]))
            w.append(1 - p)
        return ShapeLaw(shapes, w, kind, {"p": p})
    if kind == "geometric":
        p = float(params.get("p", 0.5))
        pi = _truncated_geometric(p)
        return ShapeLaw([_shape([1.0], [k + 1]) for k in range(pi.size)], pi, kind, {"p": p})
    raise ValueError(f"unknown shape law {kind!r}")


def empirical_shape_law(shapes) -> ShapeLaw:
    shapes = list(shapes)
    if not shapes:
        raise ValueError("no shapes")
    if not all(in_M_tilde(s) for s in shapes):
        raise ValueError("every shape must have max modulus exactly one")
    return ShapeLaw(shapes, np.full(len(shapes), 1.0 / len(shapes)), "empirical", empirical=True)


# -- canonical measures -------------------------------------------------------------

@dataclass
class CanonicalMeasure:
    variant: str
    nu: object
    Q: ShapeLaw
    space: SpaceSpec
    params: dict
    fixed_atoms: tuple = ()

    @property
    def D_prime(self) -> set:
        return {abs(x) for x in self.fixed_atoms}

    def to_dict(self) -> dict:
        d = {"variant": self.variant, **self.params}
        if self.variant == "regvar_cluster":
            d["Q"] = self.Q.to_dict()
        if self.fixed_atoms:
            d["D"] = list(self.fixed_atoms)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def compound_poisson_uniform(a: float, pi) -> CanonicalMeasure:
    """Compound Poisson on ``(0, 1]`` with rate ``a`` and multiplicity law ``pi``.

    ``pi`` is a sequence ``(pi_1, pi_2, ...)`` or a dict ``{k: pi_k}``.
    """
    if not a >= 0:
        raise ValueError("rate must be nonnegative")
    if isinstance(pi, dict):
        kmax = max(int(k) for k in pi)
        vec = np.zeros(kmax)
        for k, v in pi.items():
            if int(k) < 1:
                raise ValueError("multiplicities start at 1")
            vec[int(k) - 1] = float(v)
    else:
        vec = np.asarray(pi, dtype=float)
    if np.any(vec < 0) or abs(vec.sum() - 1.0) > 1e-9:
        raise ValueError("pi must be a probability distribution on {1, 2, ...}")
    ks = np.flatnonzero(vec > 0) + 1
    shapes = [PointMeasure([1.0], [int(k)], UNIT_TIME) for k in ks]
    law = ShapeLaw(shapes, vec[ks - 1] / vec.sum(), "multiplicity")
    return CanonicalMeasure("compound_poisson_uniform", UniformRate(float(a)), law, UNIT_TIME,
                            {"a": float(a), "pi": vec.tolist()})


def regvar_cluster(theta: float, alpha: float, Q: ShapeLaw) -> CanonicalMeasure:
    if not theta >= 0 or not alpha > 0:
        raise ValueError("need theta >= 0 and alpha > 0")
    return CanonicalMeasure("regvar_cluster", PowerLaw(float(theta), float(alpha)), Q, REAL_LINE,
                            {"theta": float(theta), "alpha": float(alpha)})


def geometric_pi(p: float = 0.5) -> list:
    return _truncated_geometric(p).tolist()


def canonical_from_dict(d: dict) -> CanonicalMeasure:
    variant = d.get("variant")
    if variant == "compound_poisson_uniform":
        pi = d["pi"]
        if isinstance(pi, dict) and "geometric" in pi:
            pi = geometric_pi(float(pi["geometric"]))
        c = compound_poisson_uniform(float(d["a"]), pi)
    elif variant == "regvar_cluster":
        q = dict(d.get("Q", {"kind": "single"}))
        kind = q.pop("kind")
        if kind in ("empirical", "points"):
            shapes = [PointMeasure.from_dict(s) for s in q["shapes"]]
            law = ShapeLaw(shapes, q["weights"], kind, empirical=kind == "empirical")
        else:
            law = shape_law(kind, **q)
        c = regvar_cluster(float(d["theta"]), float(d["alpha"]), law)
    else:
        raise ValueError(f"unknown canonical variant {variant!r}")
    if d.get("D"):
        c.fixed_atoms = tuple(float(x) for x in d["D"])
    return c


# -- cluster events ---------------------------------------------------------------------

class ClusterEvent:
    """Decidable predicate on point measures, evaluated group-wise on flat arrays."""

    def holds(self, locs, mults, gid, ngroups) -> np.ndarray:
        raise NotImplementedError

    def endpoints(self) -> list:
        return []

    def __call__(self, mu: PointMeasure) -> bool:
        gid = np.zeros(len(mu), dtype=np.int64)
        return bool(self.holds(mu.locations, mu.multiplicities, gid, 1)[0])

    def __and__(self, other):
        return AllOf((self, other))

    def __or__(self, other):
        return AnyOf((self, other))


@dataclass(frozen=True)
class Always(ClusterEvent):
    def holds(self, locs, mults, gid, ngroups):
        return np.ones(ngroups, dtype=bool)

    def __repr__(self):
        return "always"


@dataclass(frozen=True)
class TotalCount(ClusterEvent):
    k: int

    def holds(self, locs, mults, gid, ngroups):
        return np.bincount(gid, weights=mults, minlength=ngroups) == self.k

    def __repr__(self):
        return f"count={self.k}"


@dataclass(frozen=True)
class CountAtLeast(ClusterEvent):
    B: IntervalSet
    c: int = 1

    def holds(self, locs, mults, gid, ngroups):
        w = np.where(self.B.indicator(locs), mults, 0)
        return np.bincount(gid, weights=w, minlength=ngroups) >= self.c

    def endpoints(self):
        return self.B.endpoints()

    def __repr__(self):
        parts = ",".join(f"{'[' if lc else '('}{lo:g},{hi:g}{']' if hc else ')'}"
                         for lo, hi, lc, hc in self.B.parts)
        return f"count{parts}>={self.c}"


@dataclass(frozen=True)
class AllOf(ClusterEvent):
    events: tuple

    def holds(self, locs, mults, gid, ngroups):
        out = np.ones(ngroups, dtype=bool)
        for e in self.events:
            out &= e.holds(locs, mults, gid, ngroups)
        return out

    def endpoints(self):
        return [x for e in self.events for x in e.endpoints()]

    def __repr__(self):
        return " & ".join(map(repr, self.events))


@dataclass(frozen=True)
class AnyOf(ClusterEvent):
    events: tuple

    def holds(self, locs, mults, gid, ngroups):
        out = np.zeros(ngroups, dtype=bool)
        for e in self.events:
            out |= e.holds(locs, mults, gid, ngroups)
        return out

    def endpoints(self):
        return [x for e in self.events for x in e.endpoints()]

    def __repr__(self):
        return " | ".join(map(repr, self.events))


def _check_event(c: CanonicalMeasure, M: ClusterEvent):
    if not isinstance(M, ClusterEvent):
        raise TypeError("M must be a ClusterEvent")
    bad = [e for e in M.endpoints() if abs(e) in c.D_prime]
    if bad:
        raise DomainError(f"event endpoints {bad} hit fixed atoms")


# -- queries ------------------------------------------------------------------------------

def tail_mass(c: CanonicalMeasure, x: float) -> float:
    """``lambda(M_x) = nu(x, inf)``."""
    if not x > 0:
        raise ValueError("x must be positive")
    return c.nu.mass_above(x)


def _shape_mass(c, shape, x, M) -> float:
    """``nu``-mass of ``{y > x : rescale(shape, y) in M}`` by exact segment sums."""
    locs = shape.locations
    cuts = {x}
    for e in M.endpoints():
        for t in locs:
            if t != 0 and e / t > x:
                cuts.add(e / t)
    upper = c.nu.upper
    cuts = sorted(v for v in cuts if v < upper) + [upper]
    total = 0.0
    mults = shape.multiplicities
    gid = np.zeros(locs.size, dtype=np.int64)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 2.0 * lo if math.isinf(hi) else 0.5 * (lo + hi)
        if M.holds(locs * mid, mults, gid, 1)[0]:
            total += c.nu.mass_above(lo) - (c.nu.mass_above(hi) if math.isfinite(hi) else 0.0)
    return total


def cluster_mass_ci(c: CanonicalMeasure, x: float, M: ClusterEvent) -> Estimate:
    """``lambda(M ∩ M_x) = int_x^inf K(y, M) nu(dy)`` with an interval for empirical ``Q``."""
    if not x > 0:
        raise ValueError("x must be positive")
    _check_event(c, M)
    masses = np.array([_shape_mass(c, s, x, M) for s in c.Q.shapes])
    value = float(np.dot(c.Q.weights, masses))
    if c.Q.empirical and masses.size > 1:
        half = Z * float(masses.std(ddof=1)) / math.sqrt(masses.size)
        return Estimate(value, value - half, value + half)
    return Estimate(value, value, value)


def cluster_mass(c: CanonicalMeasure, x: float, M: ClusterEvent) -> float:
    return cluster_mass_ci(c, x, M).value


def _group_shapes(Q: ShapeLaw):
    groups: dict = {}
    for s, w in zip(Q.shapes, Q.weights):
        key = tuple(s.locations.tolist())
        groups.setdefault(key, []).append((s, w))
    return groups


def _group_integral(c, f: TestFunction, locs, mults, weights) -> float:
    """``int (sum_s w_s (1 - exp(-sum_k m_sk f(y t_k)))) nu(dy)`` over ``y > inner_gap``."""
    lower = f.inner_gap
    upper = c.nu.upper
    if lower >= upper:
        return 0.0
    kn = f.knots
    cuts = [kk / t for t in locs for kk in kn if t != 0 and kk / t > 0]
    ystar = max(cuts, default=0.0)

    def inner(y):
        fy = f(y * locs)
        return float(np.dot(weights, -np.expm1(-(mults @ fy))))

    total = 0.0
    hi = min(ystar, upper)
    if hi > lower:
        pts = sorted({v for v in cuts if lower < v < hi})
        val, err, *rest = integrate.quad(lambda y: inner(y) * float(c.nu.density(y)), lower, hi,
                                         points=pts or None, epsabs=QUAD_TOL, epsrel=QUAD_TOL,
                                         limit=500, full_output=1)
        if len(rest) > 1 and rest[0] != 0 and err > 1e3 * QUAD_TOL:
            raise QuadratureError(f"quadrature did not converge on [{lower}, {hi}]: "
                                  f"estimate {val}, error {err}, {rest[1]}")
        total += val
    start = max(ystar, lower)
    if start < upper:
        # beyond the last knot every rescaled atom sees a constant value
        probe = start * 2.0 if math.isinf(upper) else 0.5 * (start + upper)
        total += inner(probe) * c.nu.mass_above(start)
    return total


def _shape_terms(c: CanonicalMeasure, f: TestFunction):
    terms = []
    for key, items in _group_shapes(c.Q).items():
        locs = np.array(key)
        mults = np.array([s.multiplicities for s, _ in items], dtype=float)
        weights = np.array([w for _, w in items])
        if c.Q.empirical:
            for row, w in zip(mults, weights):
                terms.append((w, _group_integral(c, f, locs, row[None, :], np.ones(1))))
        else:
            terms.append((1.0, _group_integral(c, f, locs, mults, weights)))
    return terms


def laplace_ci(c: CanonicalMeasure, f: TestFunction) -> Estimate:
    """Laplace functional ``exp(-int int (1 - e^{-mu(f(y .))}) Q(dmu) nu(dy))``."""
    if f.is_zero:
        return Estimate(1.0, 1.0, 1.0)
    terms = _shape_terms(c, f)
    if c.Q.empirical:
        w = np.array([t[0] for t in terms])
        v = np.array([t[1] for t in terms])
        neg = float(np.dot(w, v))
        if v.size > 1:
            half = Z * float(v.std(ddof=1)) / math.sqrt(v.size)
        else:
            half = 0.0
        return Estimate(math.exp(-neg), math.exp(-neg - half), math.exp(-max(neg - half, 0.0)))
    neg = sum(t[1] for t in terms)
    val = math.exp(-neg)
    return Estimate(val, val, val)


def laplace(c: CanonicalMeasure, f: TestFunction) -> float:
    return laplace_ci(c, f).value


def void_probability(c: CanonicalMeasure, x: float) -> float:
    """``P(N{|y| > x} = 0) = exp(-lambda(M_x))``."""
    if x in c.D_prime:
        raise DomainError("fixed atom at boundary")
    return math.exp(-tail_mass(c, x))


@dataclass(frozen=True)
class LimitSample:
    """Flat representation of many samples: atom ``i`` belongs to sample ``sample_id[i]``."""

    sample_id: np.ndarray
    loc: np.ndarray
    mult: np.ndarray
    clusters: np.ndarray
    size: int
    eps: float
    space: SpaceSpec

    def measure(self, i: int) -> PointMeasure:
        sel = self.sample_id == i
        return PointMeasure(self.loc[sel], self.mult[sel], self.space)

    def pair(self, f: TestFunction) -> np.ndarray:
        return np.bincount(self.sample_id, weights=self.mult * f(self.loc), minlength=self.size)

    def count_above(self, x: float) -> np.ndarray:
        w = np.where(np.abs(self.loc) > x, self.mult, 0)
        return np.bincount(self.sample_id, weights=w, minlength=self.size).astype(np.int64)


def sample_many(c: CanonicalMeasure, eps: float, size: int, seed) -> LimitSample:
    """``size`` independent draws of the limit restricted to clusters with max modulus above ``eps``."""
    if not eps > 0:
        raise ValueError("restriction radius must be positive")
    if eps >= c.nu.upper:
        raise ValueError("restriction radius beyond the support of nu")
    rng = stream(seed, "limit-sample")
    lam = tail_mass(c, eps)
    clusters = rng.poisson(lam, size)
    total = int(clusters.sum())
    owner = np.repeat(np.arange(size), clusters)
    y = c.nu.draw(rng, eps, total)
    idx = c.Q.draw(rng, total)
    natoms = np.array([len(s) for s in c.Q.shapes])
    reps = natoms[idx]
    sid = np.repeat(owner, reps)
    ys = np.repeat(y, reps)
    flat_locs = [s.locations for s in c.Q.shapes]
    flat_mult = [s.multiplicities for s in c.Q.shapes]
    locs = np.concatenate([flat_locs[i] for i in idx]) if total else np.zeros(0)
    mult = np.concatenate([flat_mult[i] for i in idx]) if total else np.zeros(0, dtype=np.int64)
    return LimitSample(sid, locs * ys, mult, clusters, size, eps, c.space)


def sample(c: CanonicalMeasure, eps: float, seed) -> PointMeasure:
    """One draw of the limit restricted to clusters with max modulus above ``eps``."""
    return sample_many(c, eps, 1, seed).measure(0)
