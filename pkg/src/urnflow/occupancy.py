"""Occupancy statistics of a ball sequence.

Two engines compute the same numbers.  :class:`OccupancyState` is the
incremental reference: one dictionary update per ball.  :class:`Snapshots`
reads statistics off a whole sequence at once after ranking every ball
within its urn, which is what the simulator uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_KMAX = 8


def _neumaier_add(s: float, c: float, v: float) -> tuple[float, float]:
    t = s + v
    if abs(s) >= abs(v):
        c += (s - t) + v
    else:
        c += (v - t) + s
    return t, c


class OccupancyState:
    """Sparse urn -> count table with the derived statistics kept current.

    ``kspectrum[k]`` for ``1 <= k <= kmax`` is the number of urns holding
    exactly ``k`` balls; urns with more balls sit in an overflow bucket.
    """

    def __init__(self, model=None, kmax: int = DEFAULT_KMAX, reserve: int = 0):
        if kmax < 1:
            raise ValueError("kmax must be >= 1")
        self.model = model
        self.kmax = kmax
        self.counts: dict[int, int] = {}
        self.total_balls = 0
        self.parity_count = 0
        self.kspectrum = [0] * (kmax + 1)
        self.overflow_urns = 0
        self.overflow_balls = 0
        self._mass = 0.0
        self._mass_c = 0.0
        self.reserve = reserve  # advisory only: dicts grow on their own

    def insert_ball(self, urn: int, p: float | None = None) -> "OccupancyState":
        if urn == 0:
            raise ValueError("urn index must be nonzero")
        k = self.counts.get(urn, 0)
        self.counts[urn] = k + 1
        self.total_balls += 1
        self.parity_count += 1 if k % 2 == 0 else -1
        if k == 0:
            if p is None:
                p = self.model.prob(urn)
            self._mass, self._mass_c = _neumaier_add(self._mass, self._mass_c, p)
        if k >= 1:
            if k <= self.kmax:
                self.kspectrum[k] -= 1
            else:
                self.overflow_balls -= k
                self.overflow_urns -= 1
        if k + 1 <= self.kmax:
            self.kspectrum[k + 1] += 1
        else:
            self.overflow_urns += 1
            self.overflow_balls += k + 1
        return self

    @property
    def occupied_mass(self) -> float:
        return self._mass + self._mass_c

    @property
    def odd(self) -> int:
        return self.parity_count

    def r(self, k: int) -> int:
        """Urns with exactly ``k`` balls."""
        if 1 <= k <= self.kmax:
            return self.kspectrum[k]
        return sum(1 for v in self.counts.values() if v == k)

    def rstar(self, k: int) -> int:
        """Urns with at least ``k`` balls."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if k <= self.kmax + 1:
            return sum(self.kspectrum[k:]) + self.overflow_urns
        return sum(1 for v in self.counts.values() if v >= k)

    def missing_mass(self, mode: str, clock: float) -> float:
        return missing_mass(self, mode, clock)

    def check_invariants(self) -> None:
        balls = sum(k * self.kspectrum[k] for k in range(1, self.kmax + 1)) + self.overflow_balls
        assert balls == self.total_balls, "ball count mismatch"
        assert self.rstar(1) == len(self.counts), "occupied count mismatch"
        assert self.parity_count == sum(self.kspectrum[k] for k in range(1, self.kmax + 1, 2)) + sum(
            1 for v in self.counts.values() if v > self.kmax and v % 2), "parity mismatch"
        assert -1e-12 <= self.occupied_mass <= 1.0 + 1e-12, "occupied mass out of range"


MODES = ("discrete", "poissonized", "tilde")


def missing_mass(state, mode: str, clock: float) -> float:
    """``clock * (1 - occupied mass)``.

    ``clock`` is the ball count ``n`` (discrete), the time ``s``
    (poissonized) or the arrival count ``Pi(s)`` (tilde).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if clock == 0:
        return 0.0
    return clock * (1.0 - state.occupied_mass)


class Snapshots:
    """Statistics of prefixes of one ball sequence.

    ``keys`` identify urns (any distinct integers), ``probs`` give each
    ball's urn weight.
    """

    def __init__(self, keys: np.ndarray, probs: np.ndarray, kmax: int = DEFAULT_KMAX):
        keys = np.asarray(keys)
        n = len(keys)
        self.n = n
        self.kmax = kmax
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        pos = np.arange(n)
        new = np.ones(n, dtype=bool)
        new[1:] = sk[1:] != sk[:-1]
        start = np.maximum.accumulate(np.where(new, pos, 0)) if n else pos
        rank = np.empty(n, dtype=np.int64)
        rank[order] = pos - start + 1
        self._rank_pos = [np.flatnonzero(rank == k) for k in range(1, kmax + 1)]
        sign = np.where(rank % 2 == 1, 1, -1)
        self._odd = np.concatenate([[0], np.cumsum(sign)])
        first = self._rank_pos[0]
        self._first_p = np.asarray(probs, dtype=float)[first]

    def at(self, cutoffs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(rstar, odd, occupied_mass)`` after each prefix length in ``cutoffs``."""
        cutoffs = np.asarray(cutoffs, dtype=np.int64)
        if np.any(np.diff(cutoffs) < 0) or (len(cutoffs) and (cutoffs[0] < 0 or cutoffs[-1] > self.n)):
            raise ValueError("cutoffs must be ascending within the sequence length")
        rstar = np.stack([np.searchsorted(p, cutoffs, side="left") for p in self._rank_pos], axis=1)
        odd = self._odd[cutoffs]
        idx = rstar[:, 0]
        mass = np.empty(len(cutoffs))
        s = c = 0.0
        prev = 0
        for j, hi in enumerate(idx):
            if hi > prev:
                s, c = _neumaier_add(s, c, math.fsum(self._first_p[prev:hi].tolist()))
                prev = hi
            mass[j] = s + c
        return rstar, odd, mass


@dataclass
class PathSample:
    """One replicate's raw statistics on a time grid."""

    mode: str
    stream_id: int
    t: np.ndarray
    balls: np.ndarray
    rstar: np.ndarray  # shape (len(t), kmax)
    odd: np.ndarray
    missing: np.ndarray
    clock: np.ndarray
    mtilde: np.ndarray | None = None
    occupied_mass: np.ndarray = field(default=None, repr=False)

    @property
    def kmax(self) -> int:
        return self.rstar.shape[1]

    @property
    def occupied(self) -> np.ndarray:
        return self.rstar[:, 0]

    def rows(self):
        for j in range(len(self.t)):
            yield [self.mode, self.stream_id, float(self.t[j]), int(self.balls[j]),
                   *(int(v) for v in self.rstar[j]), int(self.odd[j]), float(self.missing[j])]

    @staticmethod
    def header(kmax: int) -> list[str]:
        return ["mode", "stream_id", "t", "balls", *(f"Rstar{k}" for k in range(1, kmax + 1)), "U", "M"]
