"""Monte Carlo checks of the functional limit theorem.

Replicates are independent tasks keyed by ``stream_id``; results are always
gathered and reduced in ascending ``stream_id`` order, so reports do not
depend on how many worker processes ran them.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import stats

from .limits import limit_cov
from .moments import PAIRS, discrete_mean, poisson_cov, poisson_mean, var_M_increment
from .occupancy import DEFAULT_KMAX, PathSample
from .sampler import STREAM_MODES, BallStream, CoupledSample, simulate_batch
from .weights import WeightModel, model_from_dict

DEFAULT_GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))
# sup ratios measured for PowerLaw(0.5) over n in 1e3..1e7, delta in 1e-4..1
# were 1.80 (L21) and 0.31 (L23); the bounds leave a little headroom
LEMMA_BOUNDS = {"L21": 2.0, "L23": 0.5}


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ReplicateError(RuntimeError):
    def __init__(self, stream_id: int, cause: BaseException):
        super().__init__(f"replicate with stream_id {stream_id} failed: {cause!r}")
        self.stream_id = stream_id


@dataclass
class ExperimentConfig:
    model: dict
    n_values: list
    grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    replicates: int = 1000
    seed: int = 20240601
    mode: str = "poissonized"
    kmax: int = DEFAULT_KMAX
    atol: float = 1e-10
    rtol: float = 1e-12
    out_dir: str | None = None
    dump_paths: int = 4

    def __post_init__(self):
        if not isinstance(self.model, dict) or "family" not in self.model:
            raise ConfigError("model.family", "missing weight family")
        try:
            self.weight_model = model_from_dict(self.model)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("model", str(exc)) from None
        if not self.n_values or any(int(n) != n or n < 0 for n in self.n_values):
            raise ConfigError("n_values", "need a non-empty list of nonnegative integers")
        self.n_values = [int(n) for n in self.n_values]
        if any(b <= a for a, b in zip(self.n_values, self.n_values[1:])):
            raise ConfigError("n_values", "must be strictly ascending")
        g = [float(x) for x in self.grid]
        if not g or g[0] <= 0 or g[-1] > 1 or any(b <= a for a, b in zip(g, g[1:])):
            raise ConfigError("grid", "must be strictly increasing inside (0, 1]")
        self.grid = g
        if int(self.replicates) < 2:
            raise ConfigError("replicates", "need at least 2 replicates")
        self.replicates = int(self.replicates)
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        self.seed = int(self.seed)
        if self.mode not in STREAM_MODES:
            raise ConfigError("mode", f"must be one of {', '.join(STREAM_MODES)}")
        if int(self.kmax) < 1:
            raise ConfigError("kmax", "must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(extra[0], "unknown field")
        for key in ("model", "n_values"):
            if key not in data:
                raise ConfigError(key, "required field missing")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("weight_model", None)
        return d


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("URNFLOW_THREADS", "1") or 1)
    return max(1, int(threads))


def _run_chunk(model, stream, seed, ids, kmax):
    try:
        return simulate_batch(model, stream, seed, ids, kmax=kmax)
    except Exception:
        # locate the first failing replicate for the error message
        from .sampler import RngStream, simulate
        for s in ids:
            try:
                simulate(model, stream, RngStream(seed, s), kmax=kmax)
            except Exception as exc:
                raise ReplicateError(s, exc) from exc
        raise


def run_replicates(model: WeightModel, stream: BallStream, seed: int, replicates: int, *,
                   threads: int | None = 1, kmax: int = DEFAULT_KMAX, first_id: int = 0) -> list:
    """Samples for stream ids ``first_id .. first_id + replicates - 1``, in that order."""
    threads = resolve_threads(threads)
    ids = list(range(first_id, first_id + replicates))
    if threads == 1:
        return _run_chunk(model, stream, seed, ids, kmax)
    size = max(1, math.ceil(len(ids) / (4 * threads)))
    chunks = [ids[i:i + size] for i in range(0, len(ids), size)]
    out = []
    with ProcessPoolExecutor(max_workers=threads) as ex:
        futures = [ex.submit(_run_chunk, model, stream, seed, c, kmax) for c in chunks]
        for fut in futures:
            out.extend(fut.result())
    return out


# -- normalization ----------------------------------------------------------

@lru_cache(maxsize=256)
def _means(model: WeightModel, clock: str, n: int, grid: tuple, components: tuple) -> dict:
    out = {}
    for comp in components:
        vals = []
        for t in grid:
            if clock == "discrete":
                m = int(math.floor(round(n * t, 9)))
                vals.append(discrete_mean(model, comp, m).value)
            else:
                vals.append(poisson_mean(model, comp, n * t).value)
        out[comp] = np.array(vals)
    return out


def exact_means(model: WeightModel, clock: str, n: int, grid, components=("R", "U", "M")) -> dict:
    """Exact means used for centering; ``clock`` is ``discrete`` or ``poissonized``."""
    return _means(model, clock, int(n), tuple(float(t) for t in grid), tuple(components))


@dataclass
class NormalizedPaths:
    t: np.ndarray
    n: int
    clock: str
    R: np.ndarray
    U: np.ndarray
    M: np.ndarray
    Mtilde: np.ndarray | None
    scale_R: float
    scale_M: float

    def component(self, name: str) -> np.ndarray:
        return {"R": self.R, "U": self.U, "M": self.M, "Mtilde": self.Mtilde}[name]

    @property
    def replicates(self) -> int:
        return self.R.shape[0]


def scales(model: WeightModel, n: int) -> tuple[float, float]:
    """Divisors ``(sqrt(beta(n)), sqrt(alpha(n)))`` for ``R, U`` and ``M``."""
    if model.is_finite:
        raise ValueError("a finite weight vector has no normalization; pass scale=1")
    b = model.beta(n) if n >= 1 else 0.0
    a = model.alpha(n)
    if b <= 0 or a <= 0:
        raise ValueError(f"normalizer vanishes at n={n}")
    return math.sqrt(b), math.sqrt(a)


def pair_scale(model: WeightModel, pair: str, n: int) -> float:
    """Divisor that turns ``cov(X(n tau), Y(n t))`` into the normalized covariance."""
    s_r, s_m = scales(model, n)
    return (s_m if pair[0] == "M" else s_r) * (s_m if pair[1] == "M" else s_r)


def normalize_paths(samples: list, model: WeightModel, n: int, *, scale: float | None = None) -> NormalizedPaths:
    """Center by exact means and scale R, U by sqrt(beta(n)) and M by sqrt(alpha(n))."""
    if not samples:
        raise ValueError("no samples")
    first = samples[0]
    clock = "discrete" if first.mode in ("discrete", "coupled-discrete") else "poissonized"
    grid = first.t
    comps = ("R", "U", "M", "Mtilde") if first.mtilde is not None else ("R", "U", "M")
    means = exact_means(model, clock, n, grid, comps)
    if scale is None:
        s_r, s_m = scales(model, n)
    else:
        s_r = s_m = float(scale)
    R = (np.stack([s.occupied for s in samples]).astype(float) - means["R"]) / s_r
    U = (np.stack([s.odd for s in samples]).astype(float) - means["U"]) / s_r
    M = (np.stack([s.missing for s in samples]) - means["M"]) / s_m
    Mt = None
    if first.mtilde is not None:
        Mt = (np.stack([s.mtilde for s in samples]) - means["Mtilde"]) / s_m
    return NormalizedPaths(np.asarray(grid), int(n), clock, R, U, M, Mt, s_r, s_m)


# -- covariance estimates ---------------------------------------------------

@dataclass(frozen=True)
class CovEstimate:
    estimate: float
    se: float
    degenerate: bool


def empirical_cov(x: np.ndarray, y: np.ndarray) -> CovEstimate:
    """Sample covariance with a standard error from the spread of centered products."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = len(x)
    if m < 2:
        raise ValueError("need at least 2 replicates")
    prod = (x - x.mean()) * (y - y.mean())
    est = float(prod.sum() / (m - 1))
    se = float(prod.std(ddof=1) / math.sqrt(m))
    return CovEstimate(est, se, se == 0.0)


@dataclass(frozen=True)
class CovRow:
    pair: str
    tau: float
    t: float
    n: int
    empirical: float
    se: float
    exact: float
    limit: float
    z: float
    gap: float

    HEADER = ("pair", "tau", "t", "n", "empirical", "se", "exact", "limit", "z", "gap")

    def row(self):
        return [self.pair, self.tau, self.t, self.n, self.empirical, self.se,
                self.exact, self.limit, self.z, self.gap]


def cov_report(norm: NormalizedPaths, model: WeightModel, *, pairs=PAIRS, with_exact: bool | None = None) -> list[CovRow]:
    """All pairs at all grid cells ``tau <= t``.

    ``exact`` is the poissonized series; it is reported for poissonized
    paths only, since it is not the finite-n covariance of the discrete clock.
    """
    if with_exact is None:
        with_exact = norm.clock == "poissonized"
    n = norm.n
    scale = {"R": norm.scale_R, "U": norm.scale_R, "M": norm.scale_M}
    theta = model.theta
    rows = []
    for pair in pairs:
        x, y = pair[0], pair[1]
        for i, tau in enumerate(norm.t):
            for j in range(i, len(norm.t)):
                t = norm.t[j]
                est = empirical_cov(norm.component(x)[:, i], norm.component(y)[:, j])
                exact = math.nan
                if with_exact:
                    exact = poisson_cov(model, pair, n * tau, n * t).value / (scale[x] * scale[y])
                lim = limit_cov(theta, pair, float(tau), float(t)) if theta is not None else math.nan
                z = (est.estimate - exact) / est.se if est.se > 0 else math.nan
                rows.append(CovRow(pair, float(tau), float(t), n, est.estimate, est.se, exact, lim, z,
                                   abs(est.estimate - lim)))
    return rows


@dataclass(frozen=True)
class TrendResult:
    n_values: tuple
    max_gaps: tuple
    slack: tuple
    passed: bool


def trend_check(reports: dict) -> TrendResult:
    """``max gap`` must not grow with ``n`` by more than twice the largest cell SE."""
    ns = tuple(sorted(reports))
    gaps = tuple(max(r.gap for r in reports[n]) for n in ns)
    slack = tuple(2.0 * max(r.se for r in reports[n]) for n in ns)
    ok = all(gaps[k + 1] <= gaps[k] + slack[k + 1] for k in range(len(ns) - 1))
    return TrendResult(ns, gaps, slack, ok)


# -- Gaussianity ------------------------------------------------------------

@dataclass(frozen=True)
class MarginalStats:
    component: str
    t: float
    m: int
    skewness: float
    excess_kurtosis: float
    skew_limit: float
    kurt_limit: float

    @property
    def passed(self) -> bool:
        return abs(self.skewness) < self.skew_limit and abs(self.excess_kurtosis) < self.kurt_limit


def moment_check(x: np.ndarray, component: str = "", t: float = math.nan) -> MarginalStats:
    x = np.asarray(x, dtype=float)
    m = len(x)
    if m < 100:
        raise ValueError("need at least 100 replicates")
    return MarginalStats(component, t, m, float(stats.skew(x)), float(stats.kurtosis(x)),
                         5.0 * math.sqrt(6.0 / m), 5.0 * math.sqrt(24.0 / m))


def gaussianity_stats(norm: NormalizedPaths, t: float) -> list[MarginalStats]:
    j = int(np.argmin(np.abs(norm.t - t)))
    if abs(norm.t[j] - t) > 1e-12:
        raise ValueError(f"t={t} is not on the grid")
    return [moment_check(norm.component(c)[:, j], c, float(norm.t[j])) for c in ("R", "U", "M")]


# -- lemma bounds -----------------------------------------------------------

@dataclass(frozen=True)
class LemmaRow:
    n: int
    delta: float
    t1: float
    value: float
    ratio: float


@dataclass
class LemmaReport:
    which: str
    rows: list
    bound: float

    @property
    def sup(self) -> float:
        return max(r.ratio for r in self.rows)

    @property
    def passed(self) -> bool:
        return math.isfinite(self.sup) and self.sup <= self.bound


def lemma_checks(model: WeightModel, which: str, n_values, deltas, *, bound: float | None = None) -> LemmaReport:
    """``E R(n delta) / beta(n)`` (L21) or ``Var(M(n t2) - M(n t1)) / alpha(n)`` (L23), over ``delta^(theta/2)``.

    For L23 the increment ``[t1, t1 + delta]`` is placed at the start, the
    middle and the end of ``[0, 1]``.
    """
    if which not in LEMMA_BOUNDS:
        raise ValueError("which must be 'L21' or 'L23'")
    if model.theta is None:
        raise ValueError("lemma checks need a regularly varying model")
    h = model.theta / 2.0
    rows = []
    for n in n_values:
        beta, alpha = model.beta(n), model.alpha(n)
        for d in deltas:
            d = float(d)
            if d == 0.0:
                rows.append(LemmaRow(int(n), 0.0, 0.0, 0.0, 0.0))
                continue
            if which == "L21":
                v = poisson_mean(model, "R", n * d).value / beta
                rows.append(LemmaRow(int(n), d, 0.0, v, v / d**h))
                continue
            for t1 in sorted({0.0, max(0.0, 0.5 - d / 2.0), 1.0 - d}):
                v = var_M_increment(model, n * t1, n * (t1 + d)).value / alpha
                rows.append(LemmaRow(int(n), d, t1, v, v / d**h))
    return LemmaReport(which, rows, LEMMA_BOUNDS[which] if bound is None else bound)


# -- coupling ---------------------------------------------------------------

COUPLING_STATS = ("R", "U", "M", "M*-Mtilde")


@dataclass(frozen=True)
class CouplingRow:
    n: int
    statistic: str
    q90: float
    se: float


def quantile_with_se(x: np.ndarray, q: float = 0.9) -> tuple[float, float]:
    """Sample quantile and a standard error from the order-statistic band."""
    x = np.sort(np.asarray(x, dtype=float))
    m = len(x)
    est = float(np.quantile(x, q))
    half = math.sqrt(m * q * (1.0 - q))
    lo = int(max(0, math.floor(m * q - half)))
    hi = int(min(m - 1, math.ceil(m * q + half)))
    return est, float(x[hi] - x[lo]) / 2.0


def coupling_distances(samples: list, model: WeightModel, n: int) -> dict:
    """Per-replicate sup distances between the two clocks."""
    disc = normalize_paths([s.discrete for s in samples], model, n)
    pois = normalize_paths([s.poissonized for s in samples], model, n)
    out = {c: np.abs(disc.component(c) - pois.component(c)).max(axis=1) for c in ("R", "U", "M")}
    out["M*-Mtilde"] = np.abs(pois.M - pois.Mtilde).max(axis=1)
    return out


@dataclass
class CouplingReport:
    rows: list

    def sequence(self, statistic: str) -> list:
        return [r for r in sorted(self.rows, key=lambda r: r.n) if r.statistic == statistic]

    def decreasing(self, statistic: str, slack: float = 0.0) -> bool:
        seq = self.sequence(statistic)
        return all(b.q90 < a.q90 + slack * b.se for a, b in zip(seq, seq[1:]))


def coupling_check(model: WeightModel, n_values, replicates: int, *, seed: int,
                   grid=None, threads: int | None = 1) -> CouplingReport:
    grid = tuple(grid) if grid is not None else tuple(round(k / 100, 10) for k in range(1, 101))
    rows = []
    for n in n_values:
        stream = BallStream("coupled", int(n), grid)
        samples = run_replicates(model, stream, seed, replicates, threads=threads)
        dist = coupling_distances(samples, model, int(n))
        for stat in COUPLING_STATS:
            q, se = quantile_with_se(dist[stat])
            rows.append(CouplingRow(int(n), stat, q, se))
    return CouplingReport(rows)


# -- full experiment --------------------------------------------------------

@dataclass
class FcltResult:
    config: ExperimentConfig
    reports: dict                    # n -> list[CovRow]
    trend: TrendResult
    gaussianity: dict                # n -> list[MarginalStats] at t = last grid point
    dumps: dict = field(repr=False)  # n -> list[PathSample]
    files: list = field(default_factory=list)


def run_fclt_experiment(config: ExperimentConfig, *, threads: int | None = None) -> FcltResult:
    model = config.weight_model
    reports, gauss, dumps = {}, {}, {}
    for n in config.n_values:
        stream = BallStream(config.mode, n, tuple(config.grid))
        samples = run_replicates(model, stream, config.seed, config.replicates,
                                 threads=threads, kmax=config.kmax)
        if config.mode == "coupled":
            samples = [s.poissonized for s in samples]
        scale = 1.0 if model.is_finite else None
        norm = normalize_paths(samples, model, n, scale=scale)
        reports[n] = cov_report(norm, model)
        if config.replicates >= 100:
            gauss[n] = gaussianity_stats(norm, config.grid[-1])
        dumps[n] = samples[: config.dump_paths]
    result = FcltResult(config, reports, trend_check(reports), gauss, dumps)
    if config.out_dir:
        result.files = write_fclt_outputs(result, Path(config.out_dir))
    return result


def write_fclt_outputs(result: FcltResult, out: Path) -> list:
    from .plotting import plot_gap_vs_n
    from .reporting import write_csv

    files = []
    rows = [r.row() for n in sorted(result.reports) for r in result.reports[n]]
    files.append(write_csv(out / "cov_report.csv", CovRow.HEADER, rows))
    kmax = result.config.kmax
    paths = [row for n in sorted(result.dumps) for s in result.dumps[n] for row in s.rows()]
    files.append(write_csv(out / "paths.csv", PathSample.header(kmax), paths))
    tr = result.trend
    files.append(write_csv(out / "trend.csv", ("n", "max_gap", "slack"),
                           zip(tr.n_values, tr.max_gaps, tr.slack)))
    if result.gaussianity:
        g = [(n, s.component, s.t, s.m, s.skewness, s.excess_kurtosis, s.passed)
             for n in sorted(result.gaussianity) for s in result.gaussianity[n]]
        files.append(write_csv(out / "gaussianity.csv",
                               ("n", "component", "t", "m", "skewness", "excess_kurtosis", "passed"), g))
    if len(tr.n_values) > 1:
        files.append(plot_gap_vs_n(tr.n_values, tr.max_gaps, tr.slack, out / "gap_vs_n.svg"))
    return files
