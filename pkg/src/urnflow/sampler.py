"""Exact sampling of urn indices and generation of ball streams.

Urns ``1..H`` are drawn by inversion of a cumulative table.  A uniform that
lands beyond the table's total mass selects the tail ``i > H``, which is
sampled exactly by rejection from a continuous envelope ``g`` with
``g(x) >= p(ceil(x))`` on ``(H, inf)``: accepting ``ceil(X)`` with
probability ``p(ceil(X)) / g(X)`` returns ``i`` with probability
proportional to ``p_i``.

Envelope variates are handled through ``log X`` so that arbitrarily deep
tail draws never overflow.  Indices beyond ``2**52`` are not representable
exactly in a double, so such a ball receives the unique negative key
``-(position + 1)`` (a fresh urn) and its weight from the closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from functools import lru_cache

import numpy as np

from .occupancy import DEFAULT_KMAX, PathSample, Snapshots
from .weights import HEAD_SIZE, LogPowerLaw, PowerLaw, ThetaOneLog, WeightModel

EXACT_INDEX_LIMIT = 2.0**52
_BLOCK = 1024


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream keyed by ``(seed, stream_id)``."""

    seed: int
    stream_id: int

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= v < 2**64):
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=(self.seed << 64) | self.stream_id))


class _Rekeyer:
    """One Philox generator rekeyed in place; same streams as :meth:`RngStream.generator`."""

    def __init__(self, seed: int):
        self.seed = seed
        self.bitgen = np.random.Philox(key=seed << 64)
        self.gen = np.random.Generator(self.bitgen)
        self.state = self.bitgen.state

    def __call__(self, stream_id: int) -> np.random.Generator:
        st = self.state
        st["state"] = {"counter": np.zeros(4, dtype=np.uint64),
                       "key": np.array([stream_id, self.seed], dtype=np.uint64)}
        st["buffer"] = np.zeros(4, dtype=np.uint64)
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self.bitgen.state = st
        return self.gen


def compensated_prefix(values: np.ndarray) -> np.ndarray:
    """Prefix sums accurate to a few ulps: exact block offsets, short float runs inside."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    offset = 0.0
    comp = 0.0
    for lo in range(0, len(values), _BLOCK):
        block = values[lo:lo + _BLOCK]
        out[lo:lo + len(block)] = np.cumsum(block) + (offset + comp)
        # Neumaier update of the running offset with the exact block sum
        s = math.fsum(block.tolist())
        t = offset + s
        comp += (offset - t) + s if abs(offset) >= abs(s) else (s - t) + offset
        offset = t
    return out


class _Tail:
    """Rejection sampler for ``i > H`` of a regularly varying family."""

    def __init__(self, model: WeightModel, head: int):
        self.model = model
        self.log_h = math.log(head)
        if isinstance(model, ThetaOneLog):
            self.kind = "log"
            self.gamma = model.gamma
        elif isinstance(model, (PowerLaw, LogPowerLaw)):
            self.kind = "pareto"
            self.inv_theta = 1.0 / model.theta
            self.shape_exp = model.theta / (1.0 - model.theta)
            self.log_gamma = getattr(model, "gamma", 0.0) / model.theta
            self.loglog_h = math.log(math.log(head + math.e))
        else:
            raise TypeError(f"no tail envelope for {type(model).__name__}")
        self.proposed = 0
        self.accepted = 0

    def _log_accept(self, logx: np.ndarray, ci: np.ndarray) -> np.ndarray:
        exact = logx < math.log(EXACT_INDEX_LIMIT)
        out = np.zeros_like(logx)
        if self.kind == "pareto":
            if self.log_gamma:
                llx = np.log(logx)
                llx[exact] = np.log(np.log(ci[exact] + math.e))
                out -= self.log_gamma * (llx - self.loglog_h)
            out[exact] -= self.inv_theta * (np.log(ci[exact]) - logx[exact])
        else:
            # envelope 1 / (x log(x)^gamma) against 1 / (i log(i + e)^gamma)
            llx = np.log(logx)
            lli = llx.copy()
            lli[exact] = np.log(np.log(ci[exact] + math.e))
            out += self.gamma * (llx - lli)
            out[exact] += logx[exact] - np.log(ci[exact])
        return out

    def draw(self, rng: np.random.Generator, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``k`` accepted tail draws as ``(log X, ceil(X))``.

        The second array is only meaningful where ``X < 2**52``.
        """
        result = np.empty(k)
        index = np.empty(k)
        filled = 0
        while filled < k:
            need = k - filled
            v = 1.0 - rng.random(need)  # in (0, 1]
            w = rng.random(need)
            if self.kind == "pareto":
                logx = self.log_h - self.shape_exp * np.log(v)
            else:
                logx = self.log_h * v ** (-1.0 / (self.gamma - 1.0))
            exact = logx < math.log(EXACT_INDEX_LIMIT)
            x = np.exp(np.minimum(logx, 700.0))
            ci = np.where(exact, np.maximum(np.ceil(x), math.exp(self.log_h) + 1.0), x)
            ok = np.log(w) < self._log_accept(logx, ci)
            self.proposed += need
            self.accepted += int(ok.sum())
            got = int(ok.sum())
            result[filled:filled + got] = logx[ok]
            index[filled:filled + got] = ci[ok]
            filled += got
        return result, index

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


class UrnSampler:
    """Draws urn indices with law exactly ``(p_i)``."""

    def __init__(self, model: WeightModel, head: int = HEAD_SIZE):
        self.model = model
        if model.is_finite:
            probs = np.asarray(model.head)
            self.head = len(probs)
            self.tail = None
        else:
            if head > HEAD_SIZE:
                raise ValueError(f"head table is limited to {HEAD_SIZE} entries")
            probs = np.asarray(model.head[:head])
            self.head = head
            self.tail = _Tail(model, head)
        self.cdf = compensated_prefix(probs)
        self.head_mass = float(self.cdf[-1])

    def draw(self, rng: np.random.Generator, size: int, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """``size`` balls as ``(keys, probs)``.

        ``keys`` are urn indices, except for balls deeper than ``2**52``,
        which get ``-(offset + position + 1)``.
        """
        u = rng.random(size)
        idx = np.searchsorted(self.cdf, u, side="right")
        in_tail = idx >= self.head
        keys = (idx + 1).astype(np.int64)
        if self.tail is None:
            # rounding can leave the table total a hair below 1
            keys[in_tail] = self.head
            probs = np.asarray(self.model.head)[keys - 1]
            return keys, probs
        probs = np.empty(size)
        probs[~in_tail] = self.model.head[idx[~in_tail]]
        k = int(in_tail.sum())
        if k:
            logx, ci = self.tail.draw(rng, k)
            pos = np.flatnonzero(in_tail)
            exact = logx < math.log(EXACT_INDEX_LIMIT)
            keys[pos[exact]] = ci[exact].astype(np.int64)
            probs[pos[exact]] = self.model.weight(ci[exact])
            keys[pos[~exact]] = -(offset + pos[~exact] + 1)
            probs[pos[~exact]] = [math.exp(self.model.log_weight(v)) for v in logx[~exact]]
        return keys, probs

    def sample_urn(self, rng: np.random.Generator) -> int:
        """One urn index as a Python integer, of arbitrary size."""
        u = rng.random()
        i = int(np.searchsorted(self.cdf, u, side="right"))
        if i < self.head:
            return i + 1
        if self.tail is None:
            return self.head
        logx, ci = self.tail.draw(rng, 1)
        logx = float(logx[0])
        if logx < math.log(EXACT_INDEX_LIMIT):
            return int(ci[0])
        with localcontext() as ctx:
            ctx.prec = 80
            return int(Decimal(logx).exp().to_integral_value(rounding="ROUND_CEILING"))

    @property
    def acceptance_rate(self) -> float:
        return self.tail.acceptance_rate if self.tail else float("nan")


@lru_cache(maxsize=16)
def sampler_for(model: WeightModel) -> UrnSampler:
    """Shared sampler per model; building the table costs a few milliseconds."""
    return UrnSampler(model)


def sample_urn(model: WeightModel, rng: np.random.Generator) -> int:
    return sampler_for(model).sample_urn(rng)


class CapacityError(MemoryError):
    """The requested ball count exceeds the configured cap."""


STREAM_MODES = ("discrete", "poissonized", "coupled")
DEFAULT_BALL_CAP = 2 * 10**8


@dataclass(frozen=True)
class BallStream:
    """Which clock drives the balls and where the path is read off.

    ``n`` is the ball count for the discrete clock and the horizon of the
    unit-rate Poisson clock; statistics are recorded at ``n * t`` for each
    ``t`` in ``grid``.
    """

    mode: str
    n: int
    grid: tuple[float, ...]

    def __post_init__(self):
        if self.mode not in STREAM_MODES:
            raise ValueError(f"mode must be one of {STREAM_MODES}")
        if self.n < 0:
            raise ValueError("n must be >= 0")
        g = tuple(float(x) for x in self.grid)
        if not g or any(b <= a for a, b in zip(g, g[1:])) or g[0] <= 0 or g[-1] > 1:
            raise ValueError("grid must be strictly increasing inside (0, 1]")
        object.__setattr__(self, "grid", g)

    @property
    def discrete_cutoffs(self) -> np.ndarray:
        """``[n t]``, rounded first so that ``n * 0.3`` lands on the intended integer."""
        return np.floor(np.round(self.n * np.asarray(self.grid), 9)).astype(np.int64)


@dataclass
class CoupledSample:
    """Both clocks read off one shared urn sequence."""

    discrete: PathSample
    poissonized: PathSample


def _path(mode, stream_id, grid, cutoffs, mass_clock, snaps, kmax, tilde=False) -> PathSample:
    if snaps is None:
        g = len(grid)
        zeros = np.zeros(g)
        return PathSample(mode, stream_id, np.asarray(grid), cutoffs, np.zeros((g, kmax), dtype=np.int64),
                          np.zeros(g, dtype=np.int64), zeros, np.asarray(mass_clock, dtype=float),
                          zeros.copy() if tilde else None, zeros.copy())
    rstar, odd, mass = snaps.at(cutoffs)
    empty = 1.0 - mass
    clock = np.asarray(mass_clock, dtype=float)
    missing = np.where(clock == 0, 0.0, clock * empty)
    mtilde = np.where(cutoffs == 0, 0.0, cutoffs * empty) if tilde else None
    return PathSample(mode, stream_id, np.asarray(grid), cutoffs, rstar, odd, missing, clock, mtilde, mass)


def simulate(model: WeightModel, stream: BallStream, rng: RngStream, *, kmax: int = DEFAULT_KMAX,
             cap: int = DEFAULT_BALL_CAP, sampler: UrnSampler | None = None):
    """Simulate one replicate.

    Returns a :class:`PathSample`, or a :class:`CoupledSample` in coupled mode.
    The generator is consumed in a fixed order (Poisson increments first,
    then urn draws) so the result depends only on ``(seed, stream_id)``.
    """
    gen = rng.generator()
    sampler = sampler or sampler_for(model)
    grid = np.asarray(stream.grid)
    n = stream.n
    discrete = stream.discrete_cutoffs
    arrivals = None
    if stream.mode in ("poissonized", "coupled"):
        inc = np.diff(np.concatenate([[0.0], n * grid]))
        arrivals = np.cumsum(gen.poisson(inc)).astype(np.int64)
    need = {
        "discrete": int(discrete[-1]),
        "poissonized": int(arrivals[-1]) if arrivals is not None else 0,
        "coupled": max(int(discrete[-1]), int(arrivals[-1]) if arrivals is not None else 0),
    }[stream.mode]
    if need > cap:
        raise CapacityError(f"stream {rng.stream_id} needs {need} balls, above the cap of {cap}")
    snaps = None
    if need:
        keys, probs = sampler.draw(gen, need)
        snaps = Snapshots(keys, probs, kmax)
    sid = rng.stream_id
    if stream.mode == "discrete":
        return _path("discrete", sid, grid, discrete, discrete, snaps, kmax)
    if stream.mode == "poissonized":
        return _path("poissonized", sid, grid, arrivals, n * grid, snaps, kmax, tilde=True)
    return CoupledSample(
        _path("coupled-discrete", sid, grid, discrete, discrete, snaps, kmax),
        _path("coupled-poissonized", sid, grid, arrivals, n * grid, snaps, kmax, tilde=True),
    )


BATCH_MAX_BALLS = 256


def simulate_batch(model: WeightModel, stream: BallStream, seed: int, stream_ids, *,
                   kmax: int = DEFAULT_KMAX, sampler: UrnSampler | None = None) -> list:
    """Simulate many replicates; same random streams as :func:`simulate`.

    Short discrete sequences are ranked for all replicates at once, which
    removes most per-replicate overhead.  Occupied mass is then summed in
    ball order with plain floating point, so ``M`` may differ from
    :func:`simulate` in the last few bits.  Other inputs fall back to one
    :func:`simulate` call per replicate.
    """
    sampler = sampler or sampler_for(model)
    ids = [int(s) for s in stream_ids]
    cutoffs = stream.discrete_cutoffs
    n_balls = int(cutoffs[-1])
    if stream.mode != "discrete" or n_balls == 0 or n_balls > BATCH_MAX_BALLS:
        return [simulate(model, stream, RngStream(seed, s), kmax=kmax, sampler=sampler) for s in ids]
    m = len(ids)
    keys = np.empty((m, n_balls), dtype=np.int64)
    probs = np.empty((m, n_balls))
    rekey = _Rekeyer(RngStream(seed, 0).seed)
    for r, s in enumerate(ids):
        keys[r], probs[r] = sampler.draw(rekey(RngStream(seed, s).stream_id), n_balls)
    order = np.argsort(keys, axis=1, kind="stable")
    sk = np.take_along_axis(keys, order, axis=1)
    pos = np.broadcast_to(np.arange(n_balls), (m, n_balls))
    new = np.ones((m, n_balls), dtype=bool)
    new[:, 1:] = sk[:, 1:] != sk[:, :-1]
    start = np.maximum.accumulate(np.where(new, pos, 0), axis=1)
    rank = np.empty((m, n_balls), dtype=np.int64)
    np.put_along_axis(rank, order, pos - start + 1, axis=1)

    def prefix(a):
        return np.concatenate([np.zeros((m, 1), dtype=a.dtype), np.cumsum(a, axis=1)], axis=1)[:, cutoffs]

    rstar = np.stack([prefix((rank == k).astype(np.int64)) for k in range(1, kmax + 1)], axis=2)
    odd = prefix(np.where(rank % 2 == 1, 1, -1))
    mass = prefix(np.where(rank == 1, probs, 0.0))
    grid = np.asarray(stream.grid)
    clock = cutoffs.astype(float)
    out = []
    for r, s in enumerate(ids):
        missing = np.where(cutoffs == 0, 0.0, clock * (1.0 - mass[r]))
        out.append(PathSample("discrete", s, grid, cutoffs, rstar[r], odd[r], missing, clock, None, mass[r]))
    return out
