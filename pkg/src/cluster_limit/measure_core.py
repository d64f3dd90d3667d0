"""Finite point measures on punctured real spaces.

A space ``E`` is one of the punctured families

* two-sided:  ``[-b, -a) U (a, b]``
* positive:   ``(a, b]``
* negative:   ``[-b, -a)``

with ``0 <= a < b <= inf``.  When ``b`` is infinite the space is the
compactified line, but atoms at the infinite endpoints are rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

INF = math.inf

_KINDS = ("two_sided", "positive", "negative")


class DomainError(ValueError):
    """Raised when a location or interval falls outside the space."""


@dataclass(frozen=True)
class SpaceSpec:
    kind: str = "two_sided"
    a: float = 0.0
    b: float = INF

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown space kind {self.kind!r}")
        if not (0.0 <= self.a < self.b):
            raise ValueError("space requires 0 <= a < b")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.b)

    def contains(self, x):
        """Vectorised membership test; infinite locations are never members."""
        x = np.asarray(x, dtype=float)
        mod = np.abs(x)
        ok = np.isfinite(x) & (mod > self.a) & (mod <= self.b)
        if self.kind == "positive":
            ok &= x > 0
        elif self.kind == "negative":
            ok &= x < 0
        return ok

    def in_closure(self, x: float) -> bool:
        if math.isinf(x):
            return True
        lo = -self.b if self.kind != "positive" else self.a
        hi = self.b if self.kind != "negative" else -self.a
        return lo <= x <= hi

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": None if math.isinf(self.b) else self.b}

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceSpec":
        b = d.get("b")
        return cls(kind=d.get("kind", "two_sided"), a=float(d.get("a", 0.0)),
                   b=INF if b is None else float(b))


#: the compactified punctured line used for scaled processes
REAL_LINE = SpaceSpec("two_sided", 0.0, INF)
#: the time axis (0, 1] used for exceedance processes
UNIT_TIME = SpaceSpec("positive", 0.0, 1.0)


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of intervals ``(lo, hi, lo_closed, hi_closed)``."""

    parts: tuple

    def indicator(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for lo, hi, lc, hc in self.parts:
            left = x >= lo if lc else x > lo
            right = x <= hi if hc else x < hi
            out |= left & right
        return out

    def endpoints(self) -> list[float]:
        return [e for lo, hi, _, _ in self.parts for e in (lo, hi) if math.isfinite(e)]


def interval(lo: float, hi: float, lo_closed: bool = False, hi_closed: bool = True) -> IntervalSet:
    """Single interval, half-open ``(lo, hi]`` by default."""
    if not lo < hi:
        raise ValueError("interval requires lo < hi")
    return IntervalSet(((float(lo), float(hi), lo_closed, hi_closed),))


def modulus_above(x: float) -> IntervalSet:
    """The set ``{y : |y| > x}``."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    return IntervalSet(((-INF, -float(x), False, False), (float(x), INF, False, False)))


def union(*sets: IntervalSet) -> IntervalSet:
    return IntervalSet(tuple(p for s in sets for p in s.parts))


def _check_set(B: IntervalSet, space: SpaceSpec):
    for e in B.endpoints():
        if not space.in_closure(e):
            raise DomainError(f"interval endpoint {e} outside the closure of E")


class PointMeasure:
    """Finite integer-valued point measure in canonical form.

    Locations are strictly increasing and multiplicities are positive.
    Equal locations are merged by exact equality.  The empty measure is the
    null measure ``o``.
    """

    __slots__ = ("_locs", "_mults", "space")

    def __init__(self, locations: Iterable[float] = (), multiplicities: Iterable[int] | None = None,
                 space: SpaceSpec = REAL_LINE):
        locs = np.asarray(list(locations) if not isinstance(locations, np.ndarray) else locations,
                          dtype=float).ravel()
        if multiplicities is None:
            mults = np.ones(locs.shape, dtype=np.int64)
        else:
            mults = np.asarray(list(multiplicities) if not isinstance(multiplicities, np.ndarray)
                               else multiplicities, dtype=np.int64).ravel()
        if mults.shape != locs.shape:
            raise ValueError("locations and multiplicities differ in length")
        if np.any(np.isinf(locs)):
            raise DomainError("atoms at +-inf are not allowed")
        if locs.size and not np.all(space.contains(locs)):
            bad = locs[~space.contains(locs)][0]
            raise DomainError(f"location {bad} is not in E")
        if np.any(mults < 1):
            raise ValueError("multiplicities must be positive")
        if locs.size:
            uniq, inv = np.unique(locs, return_inverse=True)
            mults = np.bincount(inv, weights=mults, minlength=uniq.size).astype(np.int64)
            locs = uniq
        locs.setflags(write=False)
        mults.setflags(write=False)
        self._locs = locs
        self._mults = mults
        self.space = space

    @classmethod
    def from_atoms(cls, atoms: Iterable[Sequence], space: SpaceSpec = REAL_LINE) -> "PointMeasure":
        atoms = list(atoms)
        if not atoms:
            return cls((), (), space)
        locs, mults = zip(*atoms)
        return cls(locs, mults, space)

    @classmethod
    def null(cls, space: SpaceSpec = REAL_LINE) -> "PointMeasure":
        return cls((), (), space)

    @property
    def locations(self) -> np.ndarray:
        return self._locs

    @property
    def multiplicities(self) -> np.ndarray:
        return self._mults

    @property
    def is_null(self) -> bool:
        return self._locs.size == 0

    @property
    def total(self) -> int:
        return int(self._mults.sum())

    def atoms(self) -> list[tuple[float, int]]:
        return [(float(l), int(m)) for l, m in zip(self._locs, self._mults)]

    def __len__(self):
        return self._locs.size

    def __eq__(self, other):
        if not isinstance(other, PointMeasure):
            return NotImplemented
        return (self.space == other.space and np.array_equal(self._locs, other._locs)
                and np.array_equal(self._mults, other._mults))

    def __hash__(self):
        return hash((self.space, self._locs.tobytes(), self._mults.tobytes()))

    def __repr__(self):
        if self.is_null:
            return "PointMeasure(o)"
        body = " + ".join(f"{m}*d({l:g})" if m > 1 else f"d({l:g})" for l, m in self.atoms())
        return f"PointMeasure({body})"

    def to_dict(self) -> dict:
        return {"space": self.space.to_dict(), "atoms": [[l, m] for l, m in self.atoms()]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PointMeasure":
        return cls.from_atoms(d["atoms"], SpaceSpec.from_dict(d["space"]))

    @classmethod
    def from_json(cls, s: str) -> "PointMeasure":
        return cls.from_dict(json.loads(s))


def count(mu: PointMeasure, B: IntervalSet) -> int:
    """Total multiplicity of ``mu`` on ``B``."""
    _check_set(B, mu.space)
    if mu.is_null:
        return 0
    return int(mu.multiplicities[B.indicator(mu.locations)].sum())


def sup_modulus(mu: PointMeasure) -> float:
    """Largest atom modulus ``x_mu``; undefined on the null measure."""
    if mu.is_null:
        raise DomainError("Phi undefined on null measure")
    return float(np.abs(mu.locations).max())


def in_Mx(mu: PointMeasure, x: float) -> bool:
    """Membership in ``M_x``: at least one atom of modulus strictly above ``x``."""
    if x <= 0:
        raise ValueError("x must be positive")
    return (not mu.is_null) and sup_modulus(mu) > x


def rescale(mu: PointMeasure, y: float, space: SpaceSpec | None = None) -> PointMeasure:
    """Multiply every location by ``y > 0``."""
    if y <= 0:
        raise ValueError("scale must be positive")
    if mu.is_null:
        raise DomainError("cannot rescale the null measure")
    return PointMeasure(mu.locations * y, mu.multiplicities, space or mu.space)


def normalize_by_max(mu: PointMeasure) -> PointMeasure:
    """Scale ``mu`` so its largest modulus is exactly one."""
    x = sup_modulus(mu)
    locs = mu.locations / x
    # division can land one ulp off +-1 for the maximal atom
    top = np.abs(mu.locations) == x
    locs = np.where(top, np.sign(locs), locs)
    return PointMeasure(locs, mu.multiplicities, REAL_LINE)


def in_M_tilde(mu: PointMeasure) -> bool:
    """True iff no atom lies beyond modulus 1 and some atom sits at +1 or -1."""
    if mu.is_null:
        return False
    mod = np.abs(mu.locations)
    return bool(np.all(mod <= 1.0) and np.any(mod == 1.0))


def superpose(mu1: PointMeasure, mu2: PointMeasure) -> PointMeasure:
    if mu1.space != mu2.space:
        raise DomainError("cannot superpose measures on different spaces")
    return PointMeasure(np.concatenate([mu1.locations, mu2.locations]),
                        np.concatenate([mu1.multiplicities, mu2.multiplicities]), mu1.space)


def restrict(mu: PointMeasure, B: IntervalSet) -> PointMeasure:
    if mu.is_null:
        return mu
    keep = B.indicator(mu.locations)
    return PointMeasure(mu.locations[keep], mu.multiplicities[keep], mu.space)


class TestFunction:
    """Nonnegative continuous piecewise-linear function vanishing near zero.

    Values are linear between knots and constant beyond the outermost knots.
    ``inner_gap`` is the largest ``s`` with ``f = 0`` on ``E ∩ (-s, s)``;
    ``inf`` for the zero function.
    """

    __test__ = False  # not a pytest class

    def __init__(self, knots: Sequence[float], values: Sequence[float], space: SpaceSpec = REAL_LINE,
                 inner_gap: float | None = None):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.size == 0 or knots.shape != values.shape:
            raise ValueError("knots and values must be equal-length 1-d arrays")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if not np.all(np.isfinite(knots)) or not np.all(np.isfinite(values)):
            raise ValueError("knots and values must be finite")
        if np.any(values < 0):
            raise ValueError("test functions are nonnegative")
        knots.setflags(write=False)
        values.setflags(write=False)
        self.knots = knots
        self.values = values
        self.space = space
        gap = self._support_gap()
        if inner_gap is not None:
            if inner_gap > gap:
                raise ValueError(f"f is not zero on (-{inner_gap}, {inner_gap})")
            gap = float(inner_gap)
        if not gap > 0:
            raise ValueError("f must vanish on a neighbourhood of 0")
        self.inner_gap = gap

    @classmethod
    def zero(cls, space: SpaceSpec = REAL_LINE) -> "TestFunction":
        return cls([1.0], [0.0], space)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values > 0)

    def __call__(self, x):
        return np.interp(x, self.knots, self.values)

    @property
    def outer_values(self) -> tuple[float, float]:
        """Values carried to ``-inf`` and ``+inf``."""
        return float(self.values[0]), float(self.values[-1])

    def _support_gap(self) -> float:
        k, v = self.knots, self.values
        segs = [(-INF, k[0], v[0], v[0])]
        segs += [(k[i], k[i + 1], v[i], v[i + 1]) for i in range(k.size - 1)]
        segs.append((k[-1], INF, v[-1], v[-1]))
        best = INF
        sides = []
        if self.space.kind != "negative":
            sides.append((0.0, INF))
        if self.space.kind != "positive":
            sides.append((-INF, 0.0))
        for l, r, vl, vr in segs:
            if max(vl, vr) <= 0:
                continue
            for sl, sr in sides:
                lo, hi = max(l, sl), min(r, sr)
                if lo >= hi:
                    continue
                if lo <= 0 <= hi:
                    # a linear piece that is positive somewhere and touches 0
                    # is positive arbitrarily close to 0
                    best = 0.0
                else:
                    best = min(best, min(abs(lo), abs(hi)))
        return best

    def to_dict(self) -> dict:
        return {"knots": self.knots.tolist(), "values": self.values.tolist(),
                "space": self.space.to_dict(), "inner_gap": self.inner_gap}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunction":
        return cls(d["knots"], d["values"], SpaceSpec.from_dict(d.get("space", {})))

    def __repr__(self):
        return f"TestFunction(knots={self.knots.tolist()}, values={self.values.tolist()})"


def trapezoid(lo: float, hi: float, height: float, ramp: float, space: SpaceSpec = REAL_LINE,
              side: str = "positive") -> TestFunction:
    """Plateau ``height`` on ``lo <= |y| <= hi`` with linear ramps of width ``ramp``.

    ``hi = inf`` (or ``hi`` at the end of a bounded space) keeps the plateau
    to the end.  ``side`` is ``"positive"``, ``"negative"`` or ``"both"``.
    """
    if not (0 < ramp < lo < hi):
        raise ValueError("need 0 < ramp < lo < hi")
    if side not in ("positive", "negative", "both"):
        raise ValueError(f"unknown side {side!r}")
    knots = [lo - ramp, lo]
    vals = [0.0, height]
    if math.isfinite(hi) and hi < space.b:
        knots += [hi, hi + ramp]
        vals += [height, 0.0]
    mirrored = [-t for t in reversed(knots)], list(reversed(vals))
    if side == "negative":
        knots, vals = mirrored
    elif side == "both":
        knots, vals = mirrored[0] + knots, mirrored[1] + vals
    return TestFunction(knots, vals, space)


def near_indicator(x: float, space: SpaceSpec = REAL_LINE, ramp: float | None = None,
                   height: float = 50.0) -> TestFunction:
    """Approximation of ``inf * 1{|y| > x}`` by a steep ramp starting at ``x``.

    The ramp occupies ``[x, x + ramp]``; ``ramp`` defaults to ``1e-6`` times
    the span of the space above ``x``.  ``exp(-height)`` is the residual
    weight of a covered atom.
    """
    span = (space.b - x) if space.bounded else max(x, 1.0)
    ramp = 1e-6 * span if ramp is None else ramp
    knots = [x, x + ramp]
    vals = [0.0, height]
    if space.kind == "two_sided":
        knots = [-x - ramp, -x] + knots
        vals = [height, 0.0] + vals
    elif space.kind == "negative":
        knots, vals = [-x - ramp, -x], [height, 0.0]
    return TestFunction(knots, vals, space, inner_gap=x)


def pair(mu: PointMeasure, f: TestFunction) -> float:
    """``mu(f) = sum of multiplicity * f(location)``."""
    if mu.is_null:
        return 0.0
    return float(np.dot(mu.multiplicities, f(mu.locations)))
