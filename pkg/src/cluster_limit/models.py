"""Stationary sequences with known tails, levels ``u_n`` and scalings ``a_n``.

Four families are provided:

``IidPareto``        i.i.d. with ``|xi|`` Pareto(alpha) on [1, inf), positive w.p. ``p``
``MovingMax``        ``xi_j = max(Z_j, ..., Z_{j-m+1})`` with ``Z`` i.i.d. Pareto(alpha)
``AR1RegVar``        ``xi_j = phi xi_{j-1} + eps_j``, ``eps`` symmetric, ``P(|eps| > x) = x^-alpha``
``AssociatedLinear`` ``xi_j = sum_{i <= depth} 2^-i eps_{j-i}``, ``eps`` Bernoulli(1/2)
"""
from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from ._mc import Estimate, Z, open_uniform, stream, wilson

BRACKET = (1.0, 1e12)
MAX_BISECT = 200
RESIDUAL_TOL = 1e-9


class SequenceModel:
    """Base class; subclasses are frozen dataclasses."""

    known_theta: float | None = None
    burn_in: int = 0
    #: whether values can be negative (affects one- vs two-sided tails)
    signed: bool = True

    def _path(self, rng: np.random.Generator, n: int, keep: bool):
        raise NotImplementedError

    def tail(self, x: float) -> tuple[float, float, float]:
        raise NotImplementedError

    def sparse_exceedances(self, n: int, t: float, reps: int, rng, two_sided: bool):
        """Exact joint law of the points above ``t`` for ``reps`` paths, or None."""
        return None

    @property
    def is_iid(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


def _pareto(rng, size, alpha):
    return open_uniform(rng, size) ** (-1.0 / alpha)


def _sym_pareto(rng, size, alpha):
    mag = _pareto(rng, size, alpha)
    return np.where(rng.random(size) < 0.5, mag, -mag)


def _pareto_tail(x, alpha):
    return 1.0 if x <= 1.0 else x ** -alpha


def _distinct_positions(rng, counts, n):
    """Uniform random subsets of {1..n} of sizes ``counts`` (one per replicate).

    Drawn as i.i.d. uniform tuples; replicates with a repeated position are
    redrawn, which leaves the accepted subsets exactly uniform.
    """
    reps = np.repeat(np.arange(counts.size), counts)
    pos = rng.integers(1, n + 1, size=reps.size)
    while True:
        order = np.lexsort((pos, reps))
        reps, pos = reps[order], pos[order]
        dup = (reps[1:] == reps[:-1]) & (pos[1:] == pos[:-1])
        if not dup.any():
            return reps, pos
        bad = np.unique(reps[1:][dup])
        redo = np.isin(reps, bad)
        pos[redo] = rng.integers(1, n + 1, size=int(redo.sum()))


@dataclass(frozen=True)
class IidPareto(SequenceModel):
    alpha: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0 or not 0 <= self.p <= 1:
            raise ValueError("IidPareto needs alpha > 0 and p in [0, 1]")

    @property
    def known_theta(self):
        return 1.0

    @property
    def is_iid(self):
        return True

    @property
    def q(self):
        return 1.0 - self.p

    def _path(self, rng, n, keep):
        mag = _pareto(rng, n, self.alpha)
        sign = np.where(rng.random(n) < self.p, 1.0, -1.0)
        return mag * sign, None

    def tail(self, x):
        t = _pareto_tail(x, self.alpha)
        return t, self.p * t, self.q * t

    def sparse_exceedances(self, n, t, reps, rng, two_sided):
        if t < 1.0:
            return None
        prob = t ** -self.alpha * (1.0 if two_sided else self.p)
        counts = rng.binomial(n, prob, size=reps)
        rid, pos = _distinct_positions(rng, counts, n)
        mag = t * open_uniform(rng, rid.size) ** (-1.0 / self.alpha)
        if two_sided:
            sign = np.where(rng.random(rid.size) < self.p, 1.0, -1.0)
        else:
            sign = np.ones(rid.size)
        return rid, pos, mag * sign

    def to_dict(self):
        return {"kind": "iid_pareto", "alpha": self.alpha, "p": self.p}


@dataclass(frozen=True)
class MovingMax(SequenceModel):
    m: int = 2
    alpha: float = 1.0
    signed = False

    def __post_init__(self):
        if self.m < 1 or not self.alpha > 0:
            raise ValueError("MovingMax needs m >= 1 and alpha > 0")

    @property
    def known_theta(self):
        return 1.0 / self.m

    @property
    def burn_in(self):
        return self.m - 1

    def _path(self, rng, n, keep):
        z = _pareto(rng, n + self.m - 1, self.alpha)
        if self.m == 1:
            xi = z.copy()
        else:
            xi = np.lib.stride_tricks.sliding_window_view(z, self.m).max(axis=1)
        return xi, (z if keep else None)

    def tail(self, x):
        t = 1.0 - (1.0 - _pareto_tail(x, self.alpha)) ** self.m if x > 1.0 else 1.0
        return t, t, 0.0

    def sparse_exceedances(self, n, t, reps, rng, two_sided):
        if t < 1.0:
            return None
        # Z index k = 1..n+m-1 feeds xi_j for j = k-m+1..k
        nz = n + self.m - 1
        counts = rng.binomial(nz, t ** -self.alpha, size=reps)
        rid, kz = _distinct_positions(rng, counts, nz)
        zval = t * open_uniform(rng, rid.size) ** (-1.0 / self.alpha)
        rid = np.repeat(rid, self.m)
        j = np.repeat(kz, self.m) - (self.m - 1) + np.tile(np.arange(self.m), kz.size)
        zval = np.repeat(zval, self.m)
        ok = (j >= 1) & (j <= n)
        rid, j, zval = rid[ok], j[ok], zval[ok]
        key = rid.astype(np.int64) * (n + 1) + j
        order = np.lexsort((-zval, key))
        key, zval = key[order], zval[order]
        first = np.r_[key[:1] == key[:1], key[1:] != key[:-1]]
        key, zval = key[first], zval[first]
        return key // (n + 1), key % (n + 1), zval

    def to_dict(self):
        return {"kind": "moving_max", "m": self.m, "alpha": self.alpha}


@dataclass(frozen=True)
class AR1RegVar(SequenceModel):
    phi: float = 0.5
    alpha: float = 1.0
    burn_in: int = 1000

    def __post_init__(self):
        if not 0 < self.phi < 1 or not self.alpha > 0:
            raise ValueError("AR1RegVar needs phi in (0, 1) and alpha > 0")

    @property
    def known_theta(self):
        return 1.0 - self.phi ** self.alpha

    def _path(self, rng, n, keep):
        eps = _sym_pareto(rng, n + self.burn_in, self.alpha)
        xi = lfilter([1.0], [1.0, -self.phi], eps)
        return xi[self.burn_in:], (eps if keep else None)

    def tail(self, x):
        t = ar1_tail_oracle(self.phi, self.alpha).tail(x)
        return t, 0.5 * t, 0.5 * t

    def to_dict(self):
        return {"kind": "ar1", "phi": self.phi, "alpha": self.alpha, "burn_in": self.burn_in}


@dataclass(frozen=True)
class AssociatedLinear(SequenceModel):
    depth: int = 60
    signed = False

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")

    @property
    def burn_in(self):
        return self.depth

    def _path(self, rng, n, keep):
        eps = rng.integers(0, 2, size=n + self.depth).astype(float)
        w = 0.5 ** np.arange(self.depth + 1)
        xi = lfilter(w, [1.0], eps)[self.depth:]
        return xi, (eps if keep else None)

    def tail(self, x):
        # xi = K 2^-depth with K uniform on {0, ..., 2^(depth+1) - 1}
        top = 2 ** (self.depth + 1)
        if x < 0:
            t = 1.0
        elif x >= 2.0:
            t = 0.0
        else:
            k = math.floor(x * 2.0 ** self.depth)
            t = (top - 1 - k) / top
        return t, t, 0.0

    def to_dict(self):
        return {"kind": "associated_linear", "depth": self.depth}


def model_from_dict(d: dict) -> SequenceModel:
    d = dict(d)
    kind = d.pop("kind", None)
    classes = {"iid_pareto": IidPareto, "moving_max": MovingMax, "ar1": AR1RegVar,
               "associated_linear": AssociatedLinear}
    if kind not in classes:
        raise ValueError(f"unknown model kind {kind!r}")
    return classes[kind](**d)


def sample_path(model: SequenceModel, n: int, seed, return_innovations: bool = False):
    """Stationary sample ``xi_1..xi_n``; a pure function of ``(model, n, seed)``.

    With ``return_innovations`` the driving noise (including the burn-in
    prefix) is returned as well.
    """
    if n < 1:
        raise ValueError("path length must be at least 1")
    xi, innov = model._path(stream(seed), int(n), return_innovations)
    return (xi, innov) if return_innovations else xi


def tail(model: SequenceModel, x: float) -> tuple[float, float, float]:
    """``(P(|xi| > x), P(xi > x), P(xi < -x))``."""
    if not x > 0:
        raise ValueError("x must be positive")
    return model.tail(x)


def _invert(fn, n: int, what: str) -> float:
    target = 1.0 / n
    lo, hi = BRACKET
    while fn(lo) < target and lo > 1e-300:
        lo /= 2.0
    while fn(hi) > target:
        hi *= 2.0
    for _ in range(MAX_BISECT):
        mid = math.sqrt(lo * hi)
        if not lo < mid < hi:
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
        if fn(mid) > target:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda u: abs(n * fn(u) - 1.0))
    resid = abs(n * fn(best) - 1.0)
    if resid > RESIDUAL_TOL:
        warnings.warn(f"{what}: tail not invertible at level 1/{n}; nearest achievable "
                      f"residual {resid:.3g}", RuntimeWarning, stacklevel=3)
    return best


def level_u(model: SequenceModel, n: int) -> float:
    """Level with ``n P(xi_1 > u_n) = 1``."""
    if n < 1:
        raise ValueError("n must be positive")
    if model.tail(BRACKET[1] * 1e6)[1] <= 0 and model.tail(0.5)[1] <= 0:
        raise ValueError("model has no right tail")
    return _invert(lambda u: model.tail(u)[1], n, "level_u")


def scale_a(model: SequenceModel, n: int) -> float:
    """Scaling with ``n P(|xi_1| > a_n) = 1``."""
    if n < 1:
        raise ValueError("n must be positive")
    return _invert(lambda u: model.tail(u)[0], n, "scale_a")


# -- AR(1) marginal tail -------------------------------------------------

ORACLE_SEED = 20240611
_ORACLE_GRID = np.logspace(-3, 13, 129)


def _cache_dir() -> Path:
    return Path(os.environ.get("CLUSTER_LIMIT_CACHE", Path.home() / ".cache" / "cluster-limit"))


@dataclass
class TailOracle:
    """Tabulated ``P(|xi| > x)`` with confidence half-widths."""

    x: np.ndarray
    values: np.ndarray
    halfwidth: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    def tail(self, x: float) -> float:
        lx = math.log(x)
        gx = np.log(self.x)
        lv = np.log(self.values)
        if lx <= gx[0]:
            return float(self.values[0])
        if lx >= gx[-1]:
            slope = (lv[-1] - lv[-2]) / (gx[-1] - gx[-2])
            return float(math.exp(lv[-1] + slope * (lx - gx[-1])))
        return float(np.exp(np.interp(lx, gx, lv)))

    def to_dict(self) -> dict:
        return {"x_grid": self.x.tolist(), "tail": self.values.tolist(),
                "ci_halfwidth": self.halfwidth.tolist(), "oracle_seed": self.seed, **self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "TailOracle":
        meta = {k: v for k, v in d.items() if k not in ("x_grid", "tail", "ci_halfwidth", "oracle_seed")}
        return cls(np.asarray(d["x_grid"]), np.asarray(d["tail"]), np.asarray(d["ci_halfwidth"]),
                   int(d["oracle_seed"]), meta)


def _sym_pareto_sf(s, alpha):
    """P(eps > s) for symmetric eps with P(|eps| > x) = x^-alpha, x >= 1."""
    s = np.asarray(s, dtype=float)
    out = np.full(s.shape, 0.5)
    big = s > 1.0
    out[big] = 0.5 * s[big] ** -alpha
    small = s < -1.0
    out[small] = 1.0 - 0.5 * (-s[small]) ** -alpha
    return out


def ar1_tail_conditional(phi: float, alpha: float, xs, samples: int, seed: int, terms: int | None = None):
    """Conditional Monte Carlo for ``P(|sum_i phi^i eps_i| > x)``.

    Each summand is in turn taken to be the largest in modulus and integrated
    out analytically given the others.  The estimator has bounded relative
    error in the tail, which plain counting does not.
    """
    if terms is None:
        terms = min(400, int(math.ceil(math.log(1e-13) / math.log(phi))) + 1)
    rng = stream(seed, "ar1-tail")
    c = phi ** np.arange(terms)
    X = _sym_pareto(rng, (samples, terms), alpha) * c
    S = X.sum(axis=1, keepdims=True)
    A = np.abs(X)
    order = np.argsort(-A, axis=1)
    top1 = np.take_along_axis(A, order[:, :1], axis=1)
    top2 = np.take_along_axis(A, order[:, 1:2], axis=1)
    M = np.where(np.arange(terms) == order[:, :1], top2, top1)
    rest = S - X
    vals, hws = [], []
    for x in np.atleast_1d(xs):
        lo = x - rest
        t1 = _sym_pareto_sf(np.maximum(lo, M) / c, alpha)
        t2 = np.where(lo < -M, _sym_pareto_sf(lo / c, alpha) - _sym_pareto_sf(-M / c, alpha), 0.0)
        est = 2.0 * (t1 + t2).sum(axis=1)
        vals.append(float(est.mean()))
        hws.append(float(Z * est.std(ddof=1) / math.sqrt(samples)))
    return np.array(vals), np.array(hws)


@lru_cache(maxsize=None)
def ar1_tail_oracle(phi: float, alpha: float, samples: int = 40_000) -> TailOracle:
    """Cached tail table for the AR(1) marginal, persisted as JSON."""
    path = _cache_dir() / f"ar1_tail_phi{phi!r}_alpha{alpha!r}_n{samples}_s{ORACLE_SEED}.json"
    if path.exists():
        try:
            return TailOracle.from_dict(json.loads(path.read_text()))
        except (ValueError, KeyError):
            pass
    vals, hws = ar1_tail_conditional(phi, alpha, _ORACLE_GRID, samples, ORACLE_SEED)
    oracle = TailOracle(_ORACLE_GRID.copy(), vals, hws, ORACLE_SEED,
                        {"phi": phi, "alpha": alpha, "samples": samples})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(oracle.to_dict()))
    except OSError:
        pass
    return oracle


# -- association diagnostic ------------------------------------------------

@dataclass
class AssocEstimate:
    """Estimate of ``n sum_{j>m} Cov(1{xi_1 > u}, 1{xi_j > u})`` with per-lag detail."""

    estimate: Estimate
    lags: np.ndarray
    cov: np.ndarray
    cov_halfwidth: np.ndarray
    u: float
    max_lag: int


def assoc_covariance_bound(model: SequenceModel, n: int, m: int, reps: int, seed,
                           max_lag: int | None = None) -> AssocEstimate:
    """Monte Carlo estimate of the association sum over lags ``m..max_lag``.

    The marginal exceedance probability is taken from ``model.tail`` so only
    the joint exceedance frequencies are estimated.  ``max_lag`` defaults to
    ``depth + 1`` for ``AssociatedLinear`` (covariances vanish beyond it) and
    to ``min(n - 1, 4 ceil(sqrt n))`` otherwise.
    """
    if reps < 100:
        raise ValueError("need at least 100 replicates for a confidence interval")
    if not 1 <= m < n:
        raise ValueError("need 1 <= m < n")
    if max_lag is None:
        if isinstance(model, AssociatedLinear):
            max_lag = model.depth + 1
        else:
            max_lag = 4 * math.ceil(math.sqrt(n))
    max_lag = min(max_lag, n - 1)
    u = level_u(model, n)
    p = model.tail(u)[1]
    lag_hits = np.zeros(max_lag + 1)
    lag_sq = np.zeros(max_lag + 1)
    per_rep = np.zeros(reps)
    for r in range(reps):
        idx = np.flatnonzero(sample_path(model, n, (seed, r)) > u)
        if idx.size < 2:
            continue
        d = (idx[None, :] - idx[:, None])[np.triu_indices(idx.size, 1)]
        d = d[(d >= m) & (d <= max_lag)]
        if d.size == 0:
            continue
        c = np.bincount(d, minlength=max_lag + 1)
        lag_hits += c
        lag_sq += c.astype(float) ** 2
        per_rep[r] = float(np.sum(n / (n - d)))
    lags = np.arange(m, max_lag + 1)
    w = 1.0 / (n - lags)
    mean_pair = lag_hits[lags] * w / reps
    cov = mean_pair - p * p
    var = (lag_sq[lags] * w * w / reps - mean_pair ** 2) * reps / (reps - 1)
    cov_hw = Z * np.sqrt(np.maximum(var, 0.0) / reps)
    # the normal interval collapses on lags with no observed pairs
    trials = reps * (n - lags)
    cov_hw = np.maximum(cov_hw, [wilson(int(h), int(t)).halfwidth for h, t in zip(lag_hits[lags], trials)])
    per_rep -= n * p * p * lags.size
    mean = float(per_rep.mean())
    half = Z * float(per_rep.std(ddof=1)) / math.sqrt(reps)
    return AssocEstimate(Estimate(mean, mean - half, mean + half), lags, cov, cov_hw, u, max_lag)
