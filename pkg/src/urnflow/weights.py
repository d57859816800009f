"""Weight sequences for the infinite urn scheme.

Four families are available.  ``PowerLaw`` has a constant slowly varying
part, ``LogPowerLaw`` perturbs it by a logarithmic factor, ``ThetaOneLog``
sits at index ``theta = 1`` and ``FiniteVector`` is a finite probability
vector used to feed brute-force oracles.

Every regularly varying family exposes an analytic continuation
``weight(z)`` of ``i -> p_i`` to the right half plane, which is what the
series engine needs for its tail certificates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Callable

import numpy as np

from .series import DEFAULT_ATOL, DEFAULT_RTOL, SeriesResult, ToleranceError, em_sum

HEAD_SIZE = 2**20
_E = math.e


class WeightModel:
    """Common interface.  Subclasses are frozen dataclasses."""

    theta: float | None

    # -- to be provided by subclasses -------------------------------------
    def shape(self, x):
        """Unnormalised weight, analytic in ``x``."""
        raise NotImplementedError

    @property
    def rho(self) -> float:
        """Relative radius of the Cauchy disks used by the series engine."""
        raise NotImplementedError

    @property
    def is_finite(self) -> bool:
        return False

    # -- shared machinery --------------------------------------------------
    @cached_property
    def c(self) -> float:
        def density(logx: float) -> float:
            if logx <= 700.0:
                x = math.exp(logx)
                return x * float(self.shape(np.array([x]))[0])
            return math.exp(logx + self.log_shape(logx))

        try:
            total = em_sum(self.shape, 1, rho=self.rho, density=density, atol=1e-16, rtol=1e-13)
        except ToleranceError as exc:
            # slowly decaying tails (gamma near 1) still certify to a useful level
            if exc.best.tail_bound > 1e-10 * abs(exc.best.value):
                raise
            total = exc.best
        return 1.0 / total.value

    def log_shape(self, logx: float) -> float:
        raise NotImplementedError

    def log_weight(self, logx: float) -> float:
        return math.log(self.c) + self.log_shape(logx)

    def weight(self, x):
        return self.c * self.shape(x)

    @cached_property
    def head(self) -> np.ndarray:
        """``p_1 .. p_H`` as a read-only array."""
        arr = self.weight(np.arange(1, HEAD_SIZE + 1, dtype=float))
        arr.setflags(write=False)
        return arr

    def prob(self, i: int) -> float:
        if i < 1:
            raise ValueError("urn index must be >= 1")
        if i <= HEAD_SIZE:
            return float(self.head[i - 1])
        return float(self.weight(np.array([float(i)]))[0])

    def probs(self, idx) -> np.ndarray:
        """Vectorised :meth:`prob` for an integer array of indices."""
        idx = np.asarray(idx, dtype=np.int64)
        out = np.empty(idx.shape, dtype=float)
        small = idx <= HEAD_SIZE
        out[small] = self.head[idx[small] - 1]
        if not small.all():
            out[~small] = self.weight(idx[~small].astype(float))
        return out

    def series(self, term: Callable, *, start: int = 1, horizon: float = 1.0,
               atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> SeriesResult:
        """Certified value of ``sum_{i >= start} term(p_i)``.

        ``horizon`` is the largest time scale inside ``term``; the tail
        quadrature is split where ``horizon * p(x) = 1``.
        """
        knot = None
        if horizon > 0:
            knot = float(self.alpha(horizon)) if 1.0 / horizon <= self.prob(1) else None
            knot = min(knot, 1e300) if knot else None
        head = self.head

        def head_values(lo: int, hi: int) -> np.ndarray:
            if hi - 1 <= HEAD_SIZE:
                return np.real(term(head[lo - 1:hi - 1]))
            return np.real(term(self.weight(np.arange(lo, hi, dtype=float))))

        def g(x):
            return term(self.weight(x))

        eps = 1e-300
        slope = float(np.real(term(np.array([eps]))[0])) / eps

        def density(logx: float) -> float:
            if logx <= 700.0:
                x = math.exp(logx)
                return x * float(np.real(term(self.weight(np.array([x])))[0]))
            # far tail: term is linear in p and x p(x) is evaluated in logs
            return slope * math.exp(logx + self.log_weight(logx))

        return em_sum(g, start, rho=self.rho, head_values=head_values, knot=knot,
                      density=density, atol=atol, rtol=rtol)

    def tail_mass(self, i: int) -> float:
        """``T(i) = sum_{j > i} p_j``."""
        if i < 0:
            raise ValueError("index must be >= 0")
        if i == 0:
            return 1.0
        return self.series(lambda p: p, start=i + 1, horizon=0.0, atol=1e-15, rtol=1e-14).value

    def alpha(self, x: float) -> int:
        """``max{i : p_i >= 1/x}``, zero if no weight reaches ``1/x``."""
        if x <= 0:
            return 0
        thr = 1.0 / x
        if self.prob(1) < thr:
            return 0
        if self.head[-1] >= thr:
            lo, hi = HEAD_SIZE, 2
            while self.weight(np.array([float(hi * HEAD_SIZE)]))[0] >= thr:
                hi *= 2
                if hi * HEAD_SIZE > 2**62:
                    raise OverflowError("alpha exceeds the 64-bit index range")
            hi = hi * HEAD_SIZE
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if self.weight(np.array([float(mid)]))[0] >= thr:
                    lo = mid
                else:
                    hi = mid
            return lo
        # p is non-increasing: count head entries >= thr
        return int(np.searchsorted(self._neg_head, -thr, side="right"))

    @cached_property
    def _neg_head(self) -> np.ndarray:
        return -self.head

    def alpha_many(self, xs) -> np.ndarray:
        return np.array([self.alpha(float(x)) for x in np.ravel(xs)], dtype=np.int64).reshape(np.shape(xs))

    def slowly_varying(self, x: float) -> float:
        """``L(x) = alpha(x) / x**theta``."""
        return self.alpha(x) / x**self.theta

    def lstar(self, x: float) -> float:
        """Exponentially smoothed slowly varying part for ``theta = 1``.

        ``L*(x) = int_0^inf L(x/s) e^{-s} s^{-1} ds``; integrating the
        counting function ``alpha`` term by term gives exactly
        ``E R(x) / x = sum_i (1 - exp(-x p_i)) / x``.
        """
        if self.theta != 1.0:
            raise ValueError("L* is only defined for theta = 1 models")
        if x <= 0:
            raise ValueError("x must be positive")
        res = self.series(lambda p: -np.expm1(-x * p), horizon=x)
        return res.value / x

    def delta(self, n: float) -> float:
        """``L(n) / L*(n)`` for ``theta = 1`` models."""
        return self.slowly_varying(n) / self.lstar(n)

    def beta(self, n: float) -> float:
        if n < 1:
            raise ValueError("n must be >= 1")
        if self.theta is None:
            raise ValueError("beta is undefined for a finite weight vector")
        if self.theta < 1.0:
            return float(self.alpha(n))
        return n * self.lstar(n)

    def describe(self) -> dict:
        raise NotImplementedError

    def __getstate__(self):
        # ship only the parameters; cached tables are rebuilt on demand
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_theta(theta: float, upper_open: bool = True):
    if not (0.0 < theta < 1.0):
        raise ValueError(f"theta must lie in (0, 1), got {theta}")


@dataclass(frozen=True, eq=True)
class PowerLaw(WeightModel):
    """``p_i = c i^{-1/theta}``."""

    theta: float

    def __post_init__(self):
        _check_theta(self.theta)

    def shape(self, x):
        return x ** (-1.0 / self.theta)

    def log_shape(self, logx: float) -> float:
        return -logx / self.theta

    @property
    def rho(self) -> float:
        return math.sin(0.5 * self.theta)

    def alpha_closed_form(self, x: float) -> int:
        return int(math.floor((self.c * x) ** self.theta)) if x > 0 else 0

    def describe(self) -> dict:
        return {"family": "PowerLaw", "theta": self.theta}


@dataclass(frozen=True, eq=True)
class LogPowerLaw(WeightModel):
    """``p_i = c i^{-1/theta} log(i + e)^{-gamma/theta}``."""

    theta: float
    gamma: float = 1.0

    def __post_init__(self):
        _check_theta(self.theta)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    def shape(self, x):
        return x ** (-1.0 / self.theta) * np.log(x + _E) ** (-self.gamma / self.theta)

    def log_shape(self, logx: float) -> float:
        return -logx / self.theta - self.gamma / self.theta * math.log(logx)

    @property
    def rho(self) -> float:
        return math.sin(0.5 * self.theta / (1.0 + self.gamma / 10.0))

    def describe(self) -> dict:
        return {"family": "LogPowerLaw", "theta": self.theta, "gamma": self.gamma}


@dataclass(frozen=True, eq=True)
class ThetaOneLog(WeightModel):
    """``p_i = c i^{-1} log(i + e)^{-gamma}`` with ``gamma > 1``."""

    gamma: float = 2.0
    theta: float = field(default=1.0, init=False)

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")

    def shape(self, x):
        return 1.0 / (x * np.log(x + _E) ** self.gamma)

    def log_shape(self, logx: float) -> float:
        return -logx - self.gamma * math.log(logx)

    @property
    def rho(self) -> float:
        return math.sin(0.5 / (1.0 + self.gamma / 10.0))

    def describe(self) -> dict:
        return {"family": "ThetaOneLog", "gamma": self.gamma}


@dataclass(frozen=True, eq=True)
class FiniteVector(WeightModel):
    """A finite, non-increasing probability vector."""

    values: tuple[float, ...]
    theta: None = field(default=None, init=False)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("probability vector is empty")
        if any(v <= 0 for v in vals):
            raise ValueError("probabilities must be positive")
        if any(b > a for a, b in zip(vals, vals[1:])):
            raise ValueError("probabilities must be non-increasing")
        if abs(math.fsum(vals) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        object.__setattr__(self, "values", vals)

    @property
    def is_finite(self) -> bool:
        return True

    @property
    def rho(self) -> float:
        return 0.0

    @cached_property
    def c(self) -> float:
        return 1.0

    @cached_property
    def head(self) -> np.ndarray:
        arr = np.array(self.values, dtype=float)
        arr.setflags(write=False)
        return arr

    def prob(self, i: int) -> float:
        if i < 1:
            raise ValueError("urn index must be >= 1")
        return self.values[i - 1] if i <= len(self.values) else 0.0

    def probs(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        padded = np.append(self.head, 0.0)
        return padded[np.minimum(idx, len(self.values) + 1) - 1]

    def series(self, term, *, start=1, horizon=1.0, atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL):
        vals = np.real(term(self.head[start - 1:]))
        return SeriesResult(math.fsum(vals.tolist()), 0.0, len(vals))

    def tail_mass(self, i: int) -> float:
        if i < 0:
            raise ValueError("index must be >= 0")
        return math.fsum(self.values[i:]) if i else 1.0

    def alpha(self, x: float) -> int:
        if x <= 0:
            return 0
        return sum(1 for v in self.values if v >= 1.0 / x)

    def describe(self) -> dict:
        return {"family": "FiniteVector", "probs": list(self.values)}


FAMILIES = {
    "PowerLaw": PowerLaw,
    "LogPowerLaw": LogPowerLaw,
    "ThetaOneLog": ThetaOneLog,
    "FiniteVector": FiniteVector,
}


def model_from_dict(data: dict) -> WeightModel:
    """Build a model from a config block such as ``{"family": "PowerLaw", "theta": 0.5}``."""
    family = data.get("family")
    if family == "PowerLaw":
        return PowerLaw(float(data["theta"]))
    if family == "LogPowerLaw":
        return LogPowerLaw(float(data["theta"]), float(data.get("gamma", 1.0)))
    if family == "ThetaOneLog":
        return ThetaOneLog(float(data.get("gamma", 2.0)))
    if family == "FiniteVector":
        return FiniteVector(tuple(data["probs"]))
    raise ValueError(f"unknown weight family {family!r}")
