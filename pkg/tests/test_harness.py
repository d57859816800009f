import math

import numpy as np
import pytest

from urnflow import harness
from urnflow.harness import (ConfigError, CouplingReport, CouplingRow, ExperimentConfig, ReplicateError,
                             coupling_check, coupling_distances, cov_report, empirical_cov,
                             gaussianity_stats, lemma_checks, moment_check, normalize_paths, pair_scale,
                             quantile_with_se, run_fclt_experiment, run_replicates, scales, trend_check)
from urnflow.moments import discrete_mean, poisson_cov
from urnflow.sampler import BallStream
from urnflow.weights import FiniteVector, PowerLaw, ThetaOneLog


def _cfg(**kw):
    base = {"model": {"family": "PowerLaw", "theta": 0.5}, "n_values": [100], "replicates": 20}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


@pytest.mark.parametrize("data,path", [
    ({"n_values": [10]}, "model"),
    ({"model": {"theta": 0.5}, "n_values": [10]}, "model.family"),
    ({"model": {"family": "PowerLaw", "theta": 0.5}, "n_values": [10, 5]}, "n_values"),
    ({"model": {"family": "PowerLaw", "theta": 0.5}, "n_values": [10], "grid": [0.5, 1.5]}, "grid"),
    ({"model": {"family": "PowerLaw", "theta": 0.5}, "n_values": [10], "mode": "batch"}, "mode"),
    ({"model": {"family": "PowerLaw", "theta": 0.5}, "n_values": [10], "colour": 1}, "colour"),
])
def test_config_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_dict(data)
    assert info.value.path == path


def test_config_round_trip():
    cfg = _cfg(grid=[0.5, 1.0])
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_divisor_for_power_law():
    assert scales(PowerLaw(0.5), 10**4)[0] == pytest.approx(math.sqrt(77))
    assert pair_scale(PowerLaw(0.5), "RM", 10**4) == pytest.approx(77.0)
    m = ThetaOneLog(2.0)
    assert pair_scale(m, "RM", 10**6) == pytest.approx(math.sqrt(m.beta(10**6) * m.alpha(10**6)))


def test_finite_vector_needs_explicit_scale():
    m = FiniteVector((0.5, 0.25, 0.25))
    stream = BallStream("discrete", 4, (1.0,))
    samples = run_replicates(m, stream, 1, 50)
    with pytest.raises(ValueError):
        normalize_paths(samples, m, 4)
    norm = normalize_paths(samples, m, 4, scale=1.0)
    raw = np.array([s.occupied[0] for s in samples], dtype=float)
    np.testing.assert_allclose(norm.R[:, 0], raw - discrete_mean(m, "R", 4).value)


def test_empirical_cov_basics():
    x = np.ones(10)
    assert empirical_cov(x, x).degenerate
    rng = np.random.default_rng(0)
    y = rng.normal(size=500)
    assert empirical_cov(y, y).estimate == pytest.approx(np.var(y, ddof=1))
    with pytest.raises(ValueError):
        empirical_cov(y[:1], y[:1])


def test_single_cell_against_exact_series():
    m = PowerLaw(0.5)
    n = 10**4
    samples = run_replicates(m, BallStream("poissonized", n, (0.5, 1.0)), 20240601, 4000)
    norm = normalize_paths(samples, m, n)
    est = empirical_cov(norm.R[:, 0], norm.R[:, 1])
    exact = poisson_cov(m, "RR", 5e3, 1e4).value / m.alpha(n)
    assert abs(est.estimate - exact) < 4 * est.se


def test_exact_centering():
    m = PowerLaw(0.5)
    samples = run_replicates(m, BallStream("poissonized", 1000, (0.25, 0.5, 1.0)), 3, 2000)
    norm = normalize_paths(samples, m, 1000)
    for comp in ("R", "U", "M"):
        x = norm.component(comp)
        se = x.std(axis=0, ddof=1) / math.sqrt(len(x))
        assert np.all(np.abs(x.mean(axis=0)) < 4 * se)


def test_cov_report_layout():
    m = PowerLaw(0.5)
    samples = run_replicates(m, BallStream("discrete", 100, (0.5, 1.0)), 3, 30)
    rows = cov_report(normalize_paths(samples, m, 100), m)
    assert len(rows) == 9 * 3
    assert all(math.isnan(r.exact) for r in rows)
    assert rows[0].HEADER == ("pair", "tau", "t", "n", "empirical", "se", "exact", "limit", "z", "gap")


def test_trend_check_slack():
    class R:
        def __init__(self, gap, se):
            self.gap, self.se = gap, se
    ok = trend_check({10: [R(0.5, 0.01)], 100: [R(0.51, 0.01)]})
    assert ok.passed
    bad = trend_check({10: [R(0.5, 0.01)], 100: [R(0.6, 0.01)]})
    assert not bad.passed


def test_gaussianity_self_test():
    rng = np.random.default_rng(1)
    assert moment_check(rng.normal(size=5000)).passed
    assert not moment_check(rng.exponential(size=5000)).passed
    with pytest.raises(ValueError):
        moment_check(rng.normal(size=50))


def test_gaussianity_far_from_limit_still_reports():
    m = PowerLaw(0.5)
    samples = run_replicates(m, BallStream("discrete", 10, (0.5, 1.0)), 1, 200)
    stats = gaussianity_stats(normalize_paths(samples, m, 10), 1.0)
    assert [s.component for s in stats] == ["R", "U", "M"]
    with pytest.raises(ValueError):
        gaussianity_stats(normalize_paths(samples, m, 10), 0.7)


def test_lemma_rows():
    m = PowerLaw(0.5)
    rep = lemma_checks(m, "L21", [10**3, 10**4], [0.0, 1e-3, 1.0])
    assert rep.rows[0].ratio == 0.0
    assert rep.passed and rep.sup <= 20
    rep = lemma_checks(m, "L23", [10**3], [0.0, 0.1, 1.0])
    assert {r.t1 for r in rep.rows if r.delta == 0.1} == {0.0, 0.45, 0.9}
    assert rep.passed
    with pytest.raises(ValueError):
        lemma_checks(m, "L22", [10], [1.0])


def test_coupled_distance_zero_where_clocks_coincide():
    m = PowerLaw(0.5)
    stream = BallStream("coupled", 50, tuple(k / 50 for k in range(1, 51)))
    samples = run_replicates(m, stream, 9, 20)
    found = 0
    for s in samples:
        d, p = s.discrete, s.poissonized
        for j in range(len(d.t)):
            if d.balls[j] == p.balls[j]:
                found += 1
                assert d.occupied[j] == p.occupied[j] and d.odd[j] == p.odd[j]
    assert found > 0
    dist = coupling_distances(samples, m, 50)
    assert set(dist) == {"R", "U", "M", "M*-Mtilde"}


def test_quantile_se_and_decreasing():
    x = np.arange(1000, dtype=float)
    q, se = quantile_with_se(x)
    assert q == pytest.approx(899.1) and se > 0
    rep = CouplingReport([CouplingRow(10, "R", 1.0, 0.1), CouplingRow(100, "R", 1.1, 0.1)])
    assert not rep.decreasing("R")
    assert rep.decreasing("R", slack=2.0)


def test_coupling_quantiles_shrink():
    rep = coupling_check(PowerLaw(0.5), [100, 10000], 100, seed=5, grid=[k / 20 for k in range(1, 21)])
    for stat in ("R", "M", "M*-Mtilde"):
        assert rep.decreasing(stat)


def test_fclt_smoke(tmp_path):
    cfg = _cfg(n_values=[10], replicates=2, grid=[1.0], out_dir=str(tmp_path))
    res = run_fclt_experiment(cfg)
    rows = res.reports[10]
    assert len(rows) == 9
    assert all(math.isfinite(r.se) for r in rows)
    assert (tmp_path / "cov_report.csv").exists() and (tmp_path / "paths.csv").exists()


def test_fclt_identical_across_worker_counts(tmp_path):
    outs = []
    for k, threads in enumerate((1, 2)):
        cfg = _cfg(n_values=[100, 1000], replicates=64, mode="coupled", out_dir=str(tmp_path / str(k)))
        run_fclt_experiment(cfg, threads=threads)
        outs.append(tmp_path / str(k))
    for name in ("cov_report.csv", "paths.csv", "trend.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert (outs[0] / "gap_vs_n.svg").read_bytes() == (outs[1] / "gap_vs_n.svg").read_bytes()


def test_failing_replicate_is_named(monkeypatch):
    from urnflow import sampler

    def boom_batch(*a, **k):
        raise RuntimeError("batch failed")

    real = sampler.simulate

    def boom(model, stream, rng, **kw):
        if rng.stream_id == 3:
            raise RuntimeError("bad draw")
        return real(model, stream, rng, **kw)

    monkeypatch.setattr(harness, "simulate_batch", boom_batch)
    monkeypatch.setattr(sampler, "simulate", boom)
    with pytest.raises(ReplicateError) as info:
        run_replicates(PowerLaw(0.5), BallStream("discrete", 10, (1.0,)), 1, 6)
    assert info.value.stream_id == 3


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("URNFLOW_THREADS", "3")
    assert harness.resolve_threads(None) == 3
    assert harness.resolve_threads(2) == 2
