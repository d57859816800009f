"""Truncation-certified summation of smooth positive-index series.

A series ``sum_{i >= start} g(i)`` is split into an explicit head, summed
with :func:`math.fsum`, and a tail handled by the Euler-Maclaurin formula
with three correction terms.  The tail integral is evaluated by adaptive
quadrature in a logarithmic variable; the derivatives at the cut come from
Cauchy's integral formula on a circle, which needs ``g`` to accept complex
arguments.  The same circles give the remainder certificate: with
``M`` an envelope of ``|g|`` on the disks ``|z - x| <= rho x`` (x >= a),

    |R| <= (1/720) int_a^inf |g''''| <= M / (90 rho^4 a^3).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

DEFAULT_ATOL = 1e-10
DEFAULT_RTOL = 1e-12
TERM_BUDGET = 10**8
DEFAULT_HEAD = 2**16
MAX_HEAD = 2**22

_CAUCHY_POINTS = 64


@dataclass(frozen=True)
class SeriesResult:
    value: float
    tail_bound: float
    terms_used: int

    def __float__(self) -> float:
        return self.value

    def scaled(self, factor: float) -> "SeriesResult":
        return SeriesResult(self.value * factor, self.tail_bound * abs(factor), self.terms_used)

    def __add__(self, other: "SeriesResult") -> "SeriesResult":
        return SeriesResult(self.value + other.value, self.tail_bound + other.tail_bound,
                            max(self.terms_used, other.terms_used))

    def __sub__(self, other: "SeriesResult") -> "SeriesResult":
        return SeriesResult(self.value - other.value, self.tail_bound + other.tail_bound,
                            max(self.terms_used, other.terms_used))


class ToleranceError(ArithmeticError):
    """The requested accuracy could not be certified within the term budget."""

    def __init__(self, message: str, best: SeriesResult):
        super().__init__(message)
        self.best = best


def _cauchy_derivatives(g, a: float, r: float, orders=(1, 3)) -> dict[int, float]:
    j = np.arange(_CAUCHY_POINTS)
    w = np.exp(2j * np.pi * j / _CAUCHY_POINTS)
    vals = np.asarray(g(a + r * w), dtype=complex)
    out = {}
    for k in orders:
        coef = np.mean(vals * w ** (-k))
        out[k] = float(coef.real) * math.factorial(k) / r**k
    return out


def _envelope(g, a: float, rho: float) -> float:
    xs = a * np.logspace(0.0, 30.0, 121)
    ang = np.exp(2j * np.pi * np.arange(16) / 16)
    z = (xs[:, None] * (1.0 + rho * ang[None, :])).ravel()
    vals = np.abs(np.asarray(g(z), dtype=complex))
    vals = vals[np.isfinite(vals)]
    return 2.0 * float(vals.max()) if vals.size else 0.0


def _default_density(g):
    def density(logx: float) -> float:
        if logx > 700.0:
            return 0.0
        x = math.exp(logx)
        return x * float(np.real(g(np.array([x]))[0]))
    return density


def _tail_integral(density, a: float, knot: float | None, epsabs: float) -> tuple[float, float]:
    loga = math.log(a)

    def f(u):
        return density(loga + u)

    edges = [0.0]
    if knot is not None and knot > a:
        edges.append(math.log(knot / a))
    edges.append(edges[-1] + 6.0)
    total, err = 0.0, 0.0
    opts = dict(epsabs=epsabs, epsrel=1e-14, limit=400)
    pieces = list(zip(edges[:-1], edges[1:])) + [(edges[-1], np.inf)]
    with warnings.catch_warnings():
        # roundoff warnings only mean the error estimate is pessimistic
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in pieces:
            v, e = integrate.quad(f, lo, hi, **opts)
            total += v
            err += e
    return total, err


def em_sum(
    g: Callable[[np.ndarray], np.ndarray],
    start: int = 1,
    *,
    rho: float,
    head: int = DEFAULT_HEAD,
    head_values: Callable[[int, int], np.ndarray] | None = None,
    knot: float | None = None,
    density: Callable[[float], float] | None = None,
    atol: float = DEFAULT_ATOL,
    rtol: float = DEFAULT_RTOL,
    budget: int = TERM_BUDGET,
) -> SeriesResult:
    """Sum ``g(i)`` over ``i >= start``.

    ``g`` must be vectorised and analytic on ``Re z > 0`` near the real
    axis.  ``head_values(lo, hi)`` may supply precomputed real terms
    ``g(lo..hi-1)``.  ``knot`` marks where the tail changes regime (for
    example where ``s * p(x) = 1``) and helps the quadrature.
    ``density(log x)`` must return ``x * g(x)``; the default evaluates ``g``
    directly and treats ``x > e^700`` as negligible.
    """
    if density is None:
        density = _default_density(g)
    if start < 1:
        raise ValueError("start must be >= 1")
    best = None
    while True:
        a = max(start, head)
        if a > start:
            if head_values is not None:
                terms = head_values(start, a)
            else:
                terms = np.real(g(np.arange(start, a, dtype=float)))
            head_sum = math.fsum(terms.tolist())
        else:
            head_sum = 0.0
        a = float(a)
        integral, qerr = _tail_integral(density, a, knot, epsabs=atol / 8)
        r = rho * a
        d = _cauchy_derivatives(g, a, r)
        ga = float(np.real(g(np.array([a]))[0]))
        tail = integral + ga / 2 - d[1] / 12 + d[3] / 720
        remainder = _envelope(g, a, rho) / (90.0 * rho**4 * a**3)
        value = head_sum + tail
        bound = remainder + qerr
        res = SeriesResult(value, bound, int(a) - start + 1)
        best = res if best is None or res.tail_bound < best.tail_bound else best
        if bound <= max(atol, rtol * abs(value)):
            return res
        if head >= min(MAX_HEAD, budget):
            raise ToleranceError(
                f"series tail bound {best.tail_bound:.3g} above tolerance "
                f"{max(atol, rtol * abs(value)):.3g} within term budget", best)
        head *= 4


def neumaier_sum(values) -> float:
    """Compensated running sum, kept for symmetry with the incremental state."""
    s = 0.0
    c = 0.0
    for v in values:
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        s = t
    return s + c
