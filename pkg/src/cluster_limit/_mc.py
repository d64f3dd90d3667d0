"""Seed streams, confidence intervals and the replicate scheduler."""
from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

#: confidence level used for every interval in the package
LEVEL = 0.99
Z = float(stats.norm.ppf(0.5 + LEVEL / 2))


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    k = int(k)
    if k < 0:
        raise ValueError("seed components must be nonnegative")
    return k


def _flatten(items):
    for k in items:
        if isinstance(k, (tuple, list)):
            yield from _flatten(k)
        else:
            yield k


def stream(seed, *keys) -> np.random.Generator:
    """Independent generator for the counter ``(seed, *keys)``.

    ``seed`` and keys may be nested tuples; only the flattened sequence
    matters, so ``stream((s, r))`` and ``stream(s, r)`` coincide.
    """
    parts = list(_flatten((seed,) + keys))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([_key(p) for p in parts])))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1)."""
    return rng.random(size) + 2.0 ** -54


@dataclass(frozen=True)
class Estimate:
    value: float
    lo: float
    hi: float

    @property
    def halfwidth(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, target: float, slack: float = 0.0) -> bool:
        return self.lo - slack <= target <= self.hi + slack

    def scaled(self, c: float) -> "Estimate":
        lo, hi = sorted((self.lo * c, self.hi * c))
        return Estimate(self.value * c, lo, hi)

    def to_dict(self) -> dict:
        return {"value": self.value, "lo": self.lo, "hi": self.hi}


def wilson(successes: int, trials: int, z: float = Z) -> Estimate:
    if trials <= 0:
        raise ValueError("no trials")
    p = successes / trials
    den = 1 + z * z / trials
    mid = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    return Estimate(p, max(0.0, mid - half), min(1.0, mid + half))


def mean_ci(x, z: float = Z) -> Estimate:
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
    return Estimate(m, m - z * se, m + z * se)


def default_workers() -> int:
    return os.cpu_count() or 1


def run_jobs(fn, jobs, workers: int | None = None) -> list:
    """Apply ``fn`` to each job, in order.  Results do not depend on ``workers``."""
    jobs = list(jobs)
    workers = 1 if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))
