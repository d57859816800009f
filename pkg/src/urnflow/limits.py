"""Limiting covariance of the normalized triple (rho, upsilon, mu).

``limit_cov(theta, pair, tau, t)`` with ``tau <= t`` follows the same pair
convention as :mod:`urnflow.moments`: ``"UR"`` is ``cov(upsilon(tau), rho(t))``.
The ``theta < 1`` and ``theta = 1`` branches are separate closed forms; no
continuity between them is implied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .moments import PAIRS

_ALIASES = {"rho": "R", "upsilon": "U", "mu": "M", "R": "R", "U": "U", "M": "M"}
COMPONENTS = ("R", "U", "M")


def canonical_pair(pair: str) -> str:
    """Accept ``"RU"`` as well as ``"rho_upsilon"`` style names."""
    if pair in PAIRS:
        return pair
    parts = pair.split("_")
    if len(parts) == 2 and all(p in _ALIASES for p in parts):
        return _ALIASES[parts[0]] + _ALIASES[parts[1]]
    raise ValueError(f"unknown pair {pair!r}")


def _check(theta: float, tau: float, t: float):
    if not (0.0 < theta <= 1.0):
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    if tau < 0 or t < 0:
        raise ValueError("times must be nonnegative")
    if tau > t:
        raise ValueError(f"tau={tau} exceeds t={t}; use the reversed pair")


def _theta_one(pair: str, tau: float) -> float:
    if pair in ("RR", "UU", "RU", "UR"):
        return tau
    if pair == "MM":
        return tau * tau
    return 0.0


def limit_cov(theta: float, pair: str, tau: float, t: float) -> float:
    pair = canonical_pair(pair)
    _check(theta, tau, t)
    if t == 0.0:
        return 0.0
    if theta == 1.0:
        return _theta_one(pair, tau)
    th = theta
    g1 = math.gamma(1.0 - th)
    if pair == "RR":
        return g1 * ((tau + t) ** th - t**th)
    if pair == "UU":
        return g1 * 2.0 ** (th - 2.0) * ((t + tau) ** th - (t - tau) ** th)
    if pair == "MM":
        return th * math.gamma(2.0 - th) * (tau * t ** (th - 1.0) - t * tau * (t + tau) ** (th - 2.0))
    if pair == "RU":
        return 0.5 * g1 * ((2.0 * t + tau) ** th - (2.0 * t - tau) ** th)
    if pair == "UR":
        return 0.5 * g1 * ((t + 2.0 * tau) ** th - t**th)
    if pair == "RM":
        return th * g1 * (t * (t + tau) ** (th - 1.0) - t**th)
    if pair == "MR":
        return th * g1 * tau * ((t + tau) ** (th - 1.0) - t ** (th - 1.0))
    if pair == "MU":
        return 0.5 * th * g1 * tau * ((2.0 * t + tau) ** (th - 1.0) - (2.0 * t - tau) ** (th - 1.0))
    # UM
    return 0.5 * th * g1 * (t * (2.0 * tau + t) ** (th - 1.0) - t**th)


def cov_between(theta: float, x: str, a: float, y: str, b: float) -> float:
    """``cov(x(a), y(b))`` for components ``x, y`` in ``R, U, M`` and any order of times."""
    if a <= b:
        return limit_cov(theta, x + y, a, b)
    return limit_cov(theta, y + x, b, a)


@dataclass(frozen=True)
class LimitMatrix:
    matrix: np.ndarray
    min_eigenvalue: float
    trace: float
    psd_tolerance: float = 1e-8

    @property
    def is_psd(self) -> bool:
        return self.min_eigenvalue >= -self.psd_tolerance * self.trace


def limit_matrix(theta: float, grid) -> LimitMatrix:
    """Covariance of ``(rho(t_1), upsilon(t_1), mu(t_1), rho(t_2), ...)``."""
    grid = [float(g) for g in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    if grid and (grid[0] <= 0 or grid[-1] > 1):
        raise ValueError("grid must lie in (0, 1]")
    m = 3 * len(grid)
    mat = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            mat[i, j] = cov_between(theta, COMPONENTS[i % 3], grid[i // 3],
                                    COMPONENTS[j % 3], grid[j // 3])
    if m == 0:
        return LimitMatrix(mat, 0.0, 0.0)
    # symmetric by construction up to rounding
    sym = 0.5 * (mat + mat.T)
    eig = np.linalg.eigvalsh(sym)
    return LimitMatrix(mat, float(eig[0]), float(np.trace(mat)))


def scaling_exponent(theta: float, pair: str) -> float:
    pair = canonical_pair(pair)
    if theta == 1.0 and pair == "MM":
        return 2.0
    return theta


def self_similarity_residual(theta: float, pair: str, a: float, tau: float, t: float) -> float:
    """``|c(a tau, a t) - a^h c(tau, t)|`` with the exponent of :func:`scaling_exponent`."""
    if a <= 0:
        raise ValueError("a must be positive")
    h = scaling_exponent(theta, pair)
    return abs(limit_cov(theta, pair, a * tau, a * t) - a**h * limit_cov(theta, pair, tau, t))
