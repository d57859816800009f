"""Exact finite-time means and covariances of the occupancy processes.

Poissonized quantities are sums over urns of simple functions of ``p_i``
because the per-urn counts are independent.  Every pair covariance has two
implementations: the direct per-urn series and a reduction to a few
expectations, which serve as cross-checks of each other.

Pair names read left to right: ``"RU"`` at ``(tau, t)`` is
``cov(R(tau), U(t))`` with ``tau <= t``, so ``"UR"`` is the reversed
ordering ``cov(U(tau), R(t))``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from .series import DEFAULT_ATOL, DEFAULT_RTOL, SeriesResult
from .weights import WeightModel

PAIRS = ("RR", "UU", "MM", "RU", "UR", "MU", "UM", "RM", "MR")
POISSON_COMPONENTS = ("R", "U", "M", "Mtilde", "R_k", "Rstar_k")
DISCRETE_COMPONENTS = ("R", "U", "M")

_ZERO = SeriesResult(0.0, 0.0, 0)


def _em1(x):
    """``1 - exp(-x)`` without cancellation."""
    return -np.expm1(-x)


def _poisson_upper(k: int, y):
    """``P(Poisson(y) >= k)``, also for complex ``y`` of moderate size."""
    if not np.iscomplexobj(y):
        return special.gammainc(k, y)
    y = np.asarray(y)
    out = np.empty(y.shape, dtype=complex)
    big = np.abs(y) > 30.0
    if big.any():
        yb = y[big]
        acc = np.zeros(yb.shape, dtype=complex)
        term = np.ones(yb.shape, dtype=complex)
        for j in range(k):
            acc += term
            term = term * yb / (j + 1)
        out[big] = 1.0 - np.exp(-yb) * acc
    if (~big).any():
        ys = y[~big]
        term = np.exp(-ys) * ys**k / math.factorial(k)
        acc = np.zeros(ys.shape, dtype=complex)
        for j in range(k, k + 120):
            acc += term
            term = term * ys / (j + 1)
        out[~big] = acc
    return out


def _check_s(s: float):
    if not s >= 0 or not math.isfinite(s):
        raise ValueError(f"time must be a finite nonnegative number, got {s}")


def poisson_mean(model: WeightModel, component: str, s: float, k: int | None = None, *,
                 atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> SeriesResult:
    """Mean of ``R``, ``U``, ``M``, ``Mtilde``, ``R_k`` or ``Rstar_k`` at time ``s``."""
    _check_s(s)
    if component in ("R_k", "Rstar_k"):
        if k is None or k < 1:
            raise ValueError(f"{component} needs k >= 1")
    elif component not in POISSON_COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    if s == 0:
        return _ZERO
    if component == "R":
        term = lambda p: _em1(s * p)
    elif component == "U":
        term = lambda p: 0.5 * _em1(2.0 * s * p)
    elif component == "M":
        term = lambda p: s * p * np.exp(-s * p)
    elif component == "Mtilde":
        term = lambda p: s * p * (1.0 - p) * np.exp(-s * p)
    elif component == "R_k":
        lf = math.lgamma(k + 1.0)

        def term(p):
            # p underflows to 0 far out in the tail; log(0) = -inf gives the right 0
            with np.errstate(divide="ignore"):
                return np.exp(k * np.log(s * p) - s * p - lf)
    else:
        term = lambda p: _poisson_upper(k, s * p)
    return model.series(term, horizon=s, atol=atol, rtol=rtol)


def _discrete_odd(m: int):
    def term(p):
        if np.iscomplexobj(p):
            return -0.5 * np.expm1(m * np.log1p(-2.0 * p))
        p = np.asarray(p, dtype=float)
        out = np.empty(p.shape)
        low = p < 0.5
        out[low] = -0.5 * np.expm1(m * np.log1p(-2.0 * p[low]))
        # base 1 - 2p is nonpositive here; the parity identity still holds
        out[~low] = 0.5 * (1.0 - (1.0 - 2.0 * p[~low]) ** m)
        return out
    return term


def discrete_mean(model: WeightModel, component: str, n: int, *,
                  atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> SeriesResult:
    """Mean of ``R_n``, ``U_n`` or ``M_n`` after exactly ``n`` balls."""
    if component not in DISCRETE_COMPONENTS:
        raise ValueError(f"unknown component {component!r}")
    n = int(n)
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return _ZERO
    if component == "R":
        term = lambda p: -np.expm1(n * np.log1p(-p))
    elif component == "U":
        term = _discrete_odd(n)
    else:
        term = lambda p: n * p * np.exp(n * np.log1p(-p))
    return model.series(term, horizon=float(n), atol=atol, rtol=rtol)


def _check_pair(pair: str, tau: float, t: float):
    if pair not in PAIRS:
        raise ValueError(f"unknown pair {pair!r}; expected one of {', '.join(PAIRS)}")
    _check_s(tau)
    _check_s(t)
    if tau > t:
        raise ValueError(f"tau={tau} exceeds t={t}; pass the reversed pair instead")


def _direct_term(pair: str, tau: float, t: float):
    if pair == "RR":
        return lambda p: np.exp(-p * t) * _em1(p * tau)
    if pair == "UU":
        return lambda p: 0.25 * np.exp(-2.0 * p * (t - tau)) * _em1(4.0 * p * tau)
    if pair == "MM":
        return lambda p: t * tau * p * p * np.exp(-t * p) * _em1(tau * p)
    if pair == "RU":
        return lambda p: 0.5 * np.exp(-p * (2.0 * t - tau)) * _em1(2.0 * p * tau)
    if pair == "UR":
        return lambda p: 0.5 * np.exp(-p * t) * _em1(2.0 * p * tau)
    if pair == "MU":
        return lambda p: -0.5 * tau * p * np.exp(-p * (2.0 * t - tau)) * _em1(2.0 * p * tau)
    if pair == "UM":
        return lambda p: -0.5 * t * p * np.exp(-p * t) * _em1(2.0 * p * tau)
    if pair == "RM":
        return lambda p: -t * p * np.exp(-p * t) * _em1(p * tau)
    return lambda p: -tau * p * np.exp(-p * t) * _em1(p * tau)  # MR


def poisson_cov(model: WeightModel, pair: str, tau: float, t: float, *,
                atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> SeriesResult:
    """Covariance of the poissonized processes by the direct per-urn series."""
    _check_pair(pair, tau, t)
    if t == 0 or tau == 0:
        return _ZERO
    return model.series(_direct_term(pair, tau, t), horizon=2.0 * t + tau, atol=atol, rtol=rtol)


def poisson_cov_identity(model: WeightModel, pair: str, tau: float, t: float, *,
                         atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> SeriesResult:
    """Same covariance, reduced to differences of poissonized means."""
    _check_pair(pair, tau, t)
    if t == 0 or tau == 0:
        return _ZERO

    def mean(component, s, k=None):
        return poisson_mean(model, component, s, k, atol=atol, rtol=rtol)

    if pair == "RR":
        return mean("R", t + tau) - mean("R", t)
    if pair == "UU":
        return (mean("U", t + tau) - mean("U", t - tau)).scaled(0.5)
    if pair == "MM":
        return (mean("R_k", t, 2).scaled(2.0 * tau / t)
                - mean("R_k", t + tau, 2).scaled(2.0 * t * tau / (t + tau) ** 2))
    if pair == "RU":
        return (mean("R", 2.0 * t + tau) - mean("R", 2.0 * t - tau)).scaled(0.5)
    if pair == "UR":
        return (mean("R", t + 2.0 * tau) - mean("R", t)).scaled(0.5)
    if pair == "MU":
        hi = mean("M", 2.0 * t + tau).scaled(tau / (2.0 * (2.0 * t + tau)))
        return hi - mean("M", 2.0 * t - tau).scaled(tau / (2.0 * (2.0 * t - tau)))
    if pair == "UM":
        return mean("M", 2.0 * tau + t).scaled(t / (2.0 * (2.0 * tau + t))) - mean("M", t).scaled(0.5)
    if pair == "RM":
        return mean("M", tau + t).scaled(t / (tau + t)) - mean("M", t)
    return mean("M", tau + t).scaled(tau / (tau + t)) - mean("M", t).scaled(tau / t)  # MR


def poisson_var(model: WeightModel, component: str, s: float, **kw) -> SeriesResult:
    pair = {"R": "RR", "U": "UU", "M": "MM"}[component]
    return poisson_cov(model, pair, s, s, **kw)


def var_M_increment(model: WeightModel, t1: float, t2: float, *,
                    atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> SeriesResult:
    """``Var(M(t2) - M(t1))`` for ``0 <= t1 <= t2``.

    Summed per urn in a form without cancellation; the textbook composition
    ``Var M(t2) + Var M(t1) - 2 cov`` loses all digits when ``t2 - t1`` is small.
    """
    _check_s(t1)
    _check_s(t2)
    if t1 > t2:
        raise ValueError("t1 must not exceed t2")
    d = t2 - t1
    if d == 0:
        return _ZERO
    if t1 == 0:
        return poisson_var(model, "M", t2, atol=atol, rtol=rtol)

    def term(p):
        e2 = np.exp(-t2 * p)
        e1 = np.exp(-t1 * p)
        q = _em1(d * p)
        # 1 - e1 q = (1 - e1) + e2
        return p * p * (d * d * e2 * _em1(t2 * p)
                        + t1 * t1 * e1 * q * (_em1(t1 * p) + e2)
                        + 2.0 * d * t1 * e1 * e2 * q)

    return model.series(term, horizon=t2, atol=atol, rtol=rtol)


def poisson_shape(model: WeightModel, component: str, s: float, *,
                  atol: float = 1e-14, rtol: float = 1e-10) -> tuple[float, float]:
    """Exact skewness and excess kurtosis of ``R(s)``, ``U(s)`` or ``M(s)``.

    Each is a sum of independent scaled Bernoulli variables, so the
    cumulants add up urn by urn.
    """
    _check_s(s)
    if s == 0:
        return math.nan, math.nan
    if component == "R":
        w = lambda p: 1.0
        hit, miss = (lambda p: _em1(s * p)), (lambda p: np.exp(-s * p))
    elif component == "U":
        w = lambda p: 1.0
        hit, miss = (lambda p: 0.5 * _em1(2.0 * s * p)), (lambda p: 0.5 * (1.0 + np.exp(-2.0 * s * p)))
    elif component == "M":
        w = lambda p: s * p
        hit, miss = (lambda p: np.exp(-s * p)), (lambda p: _em1(s * p))
    else:
        raise ValueError(f"unknown component {component!r}")

    def k(order):
        def term(p):
            q, e = hit(p), miss(p)
            base = w(p) ** order * q * e
            if order == 3:
                return base * (e - q)
            if order == 4:
                return base * (1.0 - 6.0 * q * e)
            return base
        return model.series(term, horizon=2.0 * s, atol=atol, rtol=rtol).value

    k2 = k(2)
    return k(3) / k2**1.5, k(4) / k2**2
