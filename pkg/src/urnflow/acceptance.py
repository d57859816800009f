"""The acceptance suite behind ``urnflow verify``.

Each ``criterion_k`` function runs one check at its full size and returns a
:class:`CriterionResult`; CSV artefacts go to the output directory when one
is given.  :func:`run_verify` runs all ten and, for the last one, repeats the
file producing checks with a different worker count and compares bytes.
"""
from __future__ import annotations

import filecmp
import itertools
import math
import time
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np

from .harness import (LemmaReport, coupling_check, cov_report, gaussianity_stats, lemma_checks,
                      normalize_paths, pair_scale, run_replicates, trend_check)
from .limits import limit_cov, limit_matrix, self_similarity_residual
from .moments import PAIRS, poisson_cov, poisson_cov_identity
from .plotting import plot_coupling, plot_gap_vs_n, plot_lemma_ratios
from .reporting import write_csv
from .sampler import BallStream, simulate_batch
from .weights import FiniteVector, PowerLaw, ThetaOneLog

M_PAIRS = ("RM", "MR", "UM", "MU")


@dataclass
class VerifyPlan:
    """Sizes of the acceptance checks; the defaults are the full sizes."""

    seed: int = 20240601
    c1_replicates: int = 100_000
    c2_cases: int = 50
    c3_n_values: tuple = (10**2, 10**4, 10**6, 10**8)
    c4_n: int = 10**4
    c4_replicates: int = 10**4
    c5_n_values: tuple = (10**3, 10**4, 10**5)
    c5_replicates: int = 5000
    c6_n: int = 10**5
    c6_replicates: int = 5000
    c7_n_values: tuple = (10**3, 10**4, 10**5, 10**6, 10**7)
    c7_deltas: tuple = tuple(float(d) for d in np.logspace(-4, 0, 9))
    c8_cases: int = 100
    c9_n_values: tuple = (10**3, 10**4, 10**5)
    c9_replicates: int = 500
    rerun: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "VerifyPlan":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise KeyError(f"verify.{unknown[0]}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0
    files: list = field(default_factory=list)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] criterion {self.number:2d}: {self.title} -- {self.detail} ({self.seconds:.1f}s)"


def _out(out_dir, name):
    return None if out_dir is None else Path(out_dir) / name


class _Cache:
    """Normalized paths shared between checks that use identical runs."""

    def __init__(self):
        self.store = {}

    def paths(self, model, mode, n, replicates, seed, threads, grid):
        key = (model, mode, n, replicates, seed, tuple(grid))
        if key not in self.store:
            stream = BallStream(mode, n, tuple(grid))
            samples = run_replicates(model, stream, seed, replicates, threads=threads)
            self.store[key] = normalize_paths(samples, model, n)
        return self.store[key]


GRID = tuple(round(0.1 * k, 10) for k in range(1, 11))


# -- 1 ----------------------------------------------------------------------

def enumerate_joint_law(probs, n: int) -> dict:
    """Exact law of ``(R_n, U_n, M_n)`` by listing every ball sequence."""
    probs = [Fraction(p) for p in probs]
    law: dict = {}
    for seq in itertools.product(range(len(probs)), repeat=n):
        counts = [seq.count(i) for i in range(len(probs))]
        r = sum(1 for c in counts if c)
        u = sum(1 for c in counts if c % 2)
        m = n * sum((p for p, c in zip(probs, counts) if c == 0), Fraction(0))
        w = Fraction(1)
        for i in seq:
            w *= probs[i]
        law[(r, u, m)] = law.get((r, u, m), Fraction(0)) + w
    return law


def criterion_1(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    probs = (Fraction(1, 2), Fraction(1, 4), Fraction(1, 4))
    n = 4
    law = enumerate_joint_law(probs, n)
    model = FiniteVector(tuple(float(p) for p in probs))
    samples = simulate_batch(model, BallStream("discrete", n, (1.0,)), plan.seed, range(plan.c1_replicates))
    m = len(samples)
    atoms = {}
    for s in samples:
        key = (int(s.occupied[0]), int(s.odd[0]), Fraction(s.missing[0]).limit_denominator(64))
        atoms[key] = atoms.get(key, 0) + 1
    rows, ok = [], True
    for key in sorted(set(law) | set(atoms)):
        p = float(law.get(key, 0))
        freq = atoms.get(key, 0) / m
        se = math.sqrt(p * (1 - p) / m)
        good = p > 0 and abs(freq - p) <= 4 * se
        ok &= good
        rows.append((key[0], key[1], float(key[2]), p, freq, se, good))
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        files.append(write_csv(_out(out_dir, "c01_small_instance.csv"),
                               ("R", "U", "M", "exact", "empirical", "se", "within_4se"), rows))
    passed = ok and seconds < 5.0
    detail = f"{len(law)} atoms, {m} replicates, all within 4 SE: {ok}, runtime limit 5s"
    return CriterionResult(1, "small-instance enumeration oracle", passed, detail, seconds, files)


# -- 2 ----------------------------------------------------------------------

def criterion_2(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(plan.seed)
    models = (PowerLaw(0.3), PowerLaw(0.5), PowerLaw(0.8), ThetaOneLog(2.0))
    rows, worst = [], 0.0
    for case in range(plan.c2_cases):
        model = models[int(rng.integers(len(models)))]
        t = float(10 ** rng.uniform(-2, 4))
        tau = float(t * (1.0 - rng.random()))
        for pair in ("UU", "RU", "UR", "MM"):
            a = poisson_cov(model, pair, tau, t).value
            b = poisson_cov_identity(model, pair, tau, t).value
            rel = abs(a - b) / max(abs(a), abs(b))
            worst = max(worst, rel)
            rows.append((case, repr(model), pair, tau, t, a, b, rel))
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        files.append(write_csv(_out(out_dir, "c02_identities.csv"),
                               ("case", "model", "pair", "tau", "t", "direct", "identity", "rel_diff"), rows))
    passed = worst <= 1e-8 and seconds < 30.0
    detail = f"{plan.c2_cases} cases x 4 pairs, worst relative difference {worst:.2e} (limit 1e-8)"
    return CriterionResult(2, "direct series vs expectation identities", passed, detail, seconds, files)


# -- 3 ----------------------------------------------------------------------

CELLS = ((0.2, 0.5), (0.5, 1.0), (1.0, 1.0))


def criterion_3(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    ns = plan.c3_n_values
    rows, bad = [], []
    for theta in (0.3, 0.5, 0.8):
        model = PowerLaw(theta)
        for pair in PAIRS:
            for tau, t in CELLS:
                lim = limit_cov(theta, pair, tau, t)
                gaps = []
                for n in ns:
                    v = poisson_cov(model, pair, n * tau, n * t).value / pair_scale(model, pair, n)
                    gap = abs(v - lim) / abs(lim)
                    gaps.append(gap)
                    rows.append((f"PowerLaw({theta})", pair, tau, t, n, v, lim, gap))
                if not (gaps[-1] < gaps[0] and gaps[-1] < 0.05):
                    bad.append(f"theta={theta} {pair} ({tau},{t})")
    model = ThetaOneLog(2.0)
    mono_bad = []
    for pair in M_PAIRS:
        for tau, t in CELLS:
            vals = []
            for n in ns:
                v = poisson_cov(model, pair, n * tau, n * t).value / pair_scale(model, pair, n)
                vals.append(abs(v))
                rows.append(("ThetaOneLog(2.0)", pair, tau, t, n, v, 0.0, abs(v)))
            if not all(b < a for a, b in zip(vals, vals[1:])):
                mono_bad.append(f"{pair} ({tau},{t})")
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        files.append(write_csv(_out(out_dir, "c03_convergence.csv"),
                               ("model", "pair", "tau", "t", "n", "normalized_cov", "limit", "gap"), rows))
    passed = not bad and not mono_bad and seconds < 300
    detail = (f"81 theta<1 cells, failing: {bad or 'none'}; theta=1 cross terms non-monotone: "
              f"{mono_bad or 'none'}")
    return CriterionResult(3, "convergence of exact covariances to the limit", passed, detail, seconds, files)


# -- 4 ----------------------------------------------------------------------

def criterion_4(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    cache = cache or _Cache()
    model = PowerLaw(0.5)
    norm = cache.paths(model, "poissonized", plan.c4_n, plan.c4_replicates, plan.seed, threads, GRID)
    rows = cov_report(norm, model)
    inside = sum(1 for r in rows if abs(r.z) <= 4.0)
    frac = inside / len(rows)
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        files.append(write_csv(_out(out_dir, "c04_poissonized_vs_exact.csv"), rows[0].HEADER, [r.row() for r in rows]))
    detail = f"{inside}/{len(rows)} cells within 4 SE ({frac:.1%}, need 95%)"
    return CriterionResult(4, "Monte Carlo vs exact series (poissonized)", frac >= 0.95, detail, seconds, files)


# -- 5 ----------------------------------------------------------------------

def criterion_5(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    cache = cache or _Cache()
    model = PowerLaw(0.5)
    reports = {}
    for n in plan.c5_n_values:
        norm = cache.paths(model, "discrete", n, plan.c5_replicates, plan.seed, threads, GRID)
        reports[n] = cov_report(norm, model)
    trend = trend_check(reports)
    zero_model = ThetaOneLog(2.0)
    zero_rows = []
    for n in plan.c5_n_values:
        norm = cache.paths(zero_model, "discrete", n, plan.c5_replicates, plan.seed, threads, GRID)
        zero_rows.extend(cov_report(norm, zero_model, pairs=M_PAIRS))
    zeros_in = sum(1 for r in zero_rows if abs(r.empirical) <= 4.0 * r.se)
    worst = max(zero_rows, key=lambda r: abs(r.empirical) / r.se)
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        rows = [r.row() for n in sorted(reports) for r in reports[n]]
        files.append(write_csv(_out(out_dir, "c05_discrete_vs_limit.csv"), worst.HEADER, rows))
        files.append(write_csv(_out(out_dir, "c05_trend.csv"), ("n", "max_gap", "slack"),
                               zip(trend.n_values, trend.max_gaps, trend.slack)))
        files.append(write_csv(_out(out_dir, "c05_theta_one_cross.csv"), worst.HEADER, [r.row() for r in zero_rows]))
        files.append(plot_gap_vs_n(trend.n_values, trend.max_gaps, trend.slack, _out(out_dir, "c05_gap_vs_n.svg")))
    gaps = ", ".join(f"{g:.4f}" for g in trend.max_gaps)
    detail = (f"max gaps {gaps} (trend ok: {trend.passed}); theta=1 cross cells within 4 SE of 0: "
              f"{zeros_in}/{len(zero_rows)}, worst {worst.pair}({worst.tau},{worst.t}) n={worst.n} "
              f"z={worst.empirical / worst.se:.1f}")
    passed = trend.passed and zeros_in == len(zero_rows)
    res = CriterionResult(5, "Monte Carlo vs limit (discrete trend)", passed, detail, seconds, files)
    res.trend_passed = trend.passed
    res.zeros_passed = zeros_in == len(zero_rows)
    return res


# -- 6 ----------------------------------------------------------------------

def criterion_6(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    cache = cache or _Cache()
    model = PowerLaw(0.5)
    norm = cache.paths(model, "discrete", plan.c6_n, plan.c6_replicates, plan.seed, threads, GRID)
    stats_ = [s for t in (0.5, 1.0) for s in gaussianity_stats(norm, t)]
    failing = [f"{s.component}(t={s.t}) skew={s.skewness:.3f}" for s in stats_ if not s.passed]
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        files.append(write_csv(
            _out(out_dir, "c06_gaussianity.csv"),
            ("component", "t", "m", "skewness", "excess_kurtosis", "skew_limit", "kurt_limit", "passed"),
            [(s.component, s.t, s.m, s.skewness, s.excess_kurtosis, s.skew_limit, s.kurt_limit, s.passed)
             for s in stats_]))
    detail = f"6 marginals, failing: {', '.join(failing) if failing else 'none'}"
    return CriterionResult(6, "Gaussianity of normalized marginals", not failing, detail, seconds, files)


# -- 7 ----------------------------------------------------------------------

def criterion_7(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    model = PowerLaw(0.5)
    deltas = (0.0,) + tuple(plan.c7_deltas)
    reps: list[LemmaReport] = [lemma_checks(model, w, plan.c7_n_values, deltas) for w in ("L21", "L23")]
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        rows = [(r.which, x.n, x.delta, x.t1, x.value, x.ratio) for r in reps for x in r.rows]
        files.append(write_csv(_out(out_dir, "c07_lemma_bounds.csv"), ("lemma", "n", "delta", "t1", "value", "ratio"), rows))
        for r in reps:
            files.append(plot_lemma_ratios(r, _out(out_dir, f"c07_{r.which}.svg")))
    detail = "; ".join(f"{r.which} sup ratio {r.sup:.3f} (bound {r.bound})" for r in reps)
    return CriterionResult(7, "lemma bounds", all(r.passed for r in reps), detail, seconds, files)


# -- 8 ----------------------------------------------------------------------

def criterion_8(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(plan.seed + 8)
    worst = 0.0
    rows = []
    per_theta = {th: PAIRS for th in (0.3, 0.5, 0.8)}
    per_theta[1.0] = ("RR", "UU", "RU", "UR", "MM")
    for _ in range(plan.c8_cases):
        a = float(10 ** rng.uniform(-1, 1))
        t = float(1.0 - rng.random())
        tau = float(t * (1.0 - rng.random()))
        for theta, pairs in per_theta.items():
            for pair in pairs:
                r = self_similarity_residual(theta, pair, a, tau, t)
                worst = max(worst, r)
                rows.append(("scaling", theta, pair, a, tau, t, r))
    psd = {}
    for theta in (0.3, 0.5, 0.8, 1.0):
        lm = limit_matrix(theta, GRID)
        psd[theta] = lm
        rows.append(("psd", theta, "", math.nan, math.nan, math.nan, lm.min_eigenvalue / lm.trace))
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        files.append(write_csv(_out(out_dir, "c08_self_similarity_psd.csv"),
                               ("check", "theta", "pair", "a", "tau", "t", "value"), rows))
    ok = worst <= 1e-12 and all(lm.is_psd for lm in psd.values())
    eig = ", ".join(f"{th}: {lm.min_eigenvalue / lm.trace:.1e}" for th, lm in psd.items())
    detail = f"worst scaling residual {worst:.1e} (limit 1e-12); min eigenvalue / trace {eig}"
    return CriterionResult(8, "self-similarity and positive semidefiniteness", ok, detail, seconds, files)


# -- 9 ----------------------------------------------------------------------

def criterion_9(plan: VerifyPlan, out_dir=None, threads=1, cache=None) -> CriterionResult:
    t0 = time.perf_counter()
    rep = coupling_check(PowerLaw(0.5), plan.c9_n_values, plan.c9_replicates, seed=plan.seed, threads=threads)
    stats_ = sorted({r.statistic for r in rep.rows})
    verdict = {s: rep.decreasing(s, slack=2.0) for s in stats_}
    seconds = time.perf_counter() - t0
    files = []
    if out_dir is not None:
        files.append(write_csv(_out(out_dir, "c09_coupling.csv"), ("n", "statistic", "q90", "se"),
                               [(r.n, r.statistic, r.q90, r.se) for r in rep.rows]))
        files.append(plot_coupling(rep, _out(out_dir, "c09_coupling.svg")))
    detail = "; ".join(
        f"{s}: " + " > ".join(f"{r.q90:.3f}" for r in rep.sequence(s)) for s in stats_)
    return CriterionResult(9, "coupling of discrete and poissonized clocks", all(verdict.values()),
                           detail, seconds, files)


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9)


def run_checks(plan: VerifyPlan, out_dir, threads: int = 1, only=None, report=None) -> list[CriterionResult]:
    cache = _Cache()
    results = []
    for fn in CRITERIA:
        number = int(fn.__name__.split("_")[1])
        if only is not None and number not in only:
            continue
        res = fn(plan, out_dir, threads, cache)
        results.append(res)
        if report:
            report(res)
    return results


def compare_output_dirs(a: Path, b: Path) -> tuple[list, list]:
    """Names of CSV and SVG files that are identical and that differ (or are missing) between two runs."""
    names = set()
    for d in (a, b):
        for pattern in ("*.csv", "*.svg"):
            names |= {p.name for p in Path(d).glob(pattern)}
    names = sorted(names - {"acceptance.csv"})
    same, diff = [], []
    for name in names:
        pa, pb = Path(a) / name, Path(b) / name
        if pa.exists() and pb.exists() and filecmp.cmp(pa, pb, shallow=False):
            same.append(name)
        else:
            diff.append(name)
    return same, diff


def criterion_10(plan: VerifyPlan, out_dir, threads: int = 1, report=None) -> CriterionResult:
    """Repeat every file producing check with another worker count and compare bytes."""
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    other = 2 if threads == 1 else 1
    rerun_dir = out_dir / "rerun"
    run_checks(plan, rerun_dir, other)
    same, diff = compare_output_dirs(out_dir, rerun_dir)
    seconds = time.perf_counter() - t0
    detail = (f"{len(same)} CSV/SVG files byte-identical between {threads} and {other} workers; "
              f"differing: {diff or 'none'}")
    return CriterionResult(10, "determinism across worker counts", not diff and bool(same), detail, seconds)


def run_verify(plan: VerifyPlan, out_dir, threads: int = 1, report=None) -> list[CriterionResult]:
    out_dir = Path(out_dir)
    results = run_checks(plan, out_dir, threads, report=report)
    if plan.rerun:
        res = criterion_10(plan, out_dir, threads)
        results.append(res)
        if report:
            report(res)
    rows = [(r.number, r.title, r.passed, r.detail) for r in results if r.number != 10]
    write_csv(out_dir / "acceptance.csv", ("criterion", "title", "passed", "detail"), rows)
    return results
