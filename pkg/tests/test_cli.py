import json

import pytest

from urnflow import cli


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_single_limit_value(capsys):
    code, out, _ = run(capsys, "limits", "--theta", "1", "--pair", "rho_rho", "--tau", "0.3", "--t", "0.7")
    assert code == 0
    assert out.strip() == "0.3"


def test_single_limit_needs_all_arguments(capsys):
    code, _, err = run(capsys, "limits", "--theta", "1", "--pair", "RR")
    assert code == 1
    assert "--tau" in err


def test_missing_family_exit_one(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"model": {"theta": 0.5}, "n_values": [10]}))
    code, _, err = run(capsys, "weights", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 1
    assert "model.family" in err


@pytest.mark.parametrize("override,path", [
    ("model.theta=1.5", "model.theta"),
    ("replicates=1", "replicates"),
    ("colour=3", "colour"),
    ("verify.unknown=3", "verify.unknown"),
])
def test_invalid_overrides(override, path, tmp_path, capsys):
    sub = "verify" if override.startswith("verify") else "weights"
    code, _, err = run(capsys, sub, "--override", override, "--out", str(tmp_path))
    assert code == 1
    assert path in err


def test_unreadable_config(tmp_path, capsys):
    code, _, err = run(capsys, "weights", "--config", str(tmp_path / "none.json"))
    assert code == 1 and "--config" in err


def test_tolerance_failure_exit_two(tmp_path, capsys):
    code, _, err = run(capsys, "moments", "--override", "n_values=[1000]", "--override", "grid=[1.0]",
                       "--override", "atol=1e-300", "--override", "rtol=0", "--out", str(tmp_path))
    assert code == 2
    assert "tolerance" in err


def test_config_hash_ignores_key_order():
    a = {"model": {"family": "PowerLaw", "theta": 0.5}, "n_values": [1, 2]}
    b = {"n_values": [1, 2], "model": {"theta": 0.5, "family": "PowerLaw"}}
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash({**a, "seed": 1})


def test_override_parsing():
    cfg = {"model": {"family": "PowerLaw"}}
    cli.apply_override(cfg, "model.theta=0.25")
    cli.apply_override(cfg, "grid=[0.5, 1.0]")
    cli.apply_override(cfg, "model.family=LogPowerLaw")
    assert cfg == {"model": {"family": "LogPowerLaw", "theta": 0.25}, "grid": [0.5, 1.0]}


def test_weights_tables(tmp_path, capsys):
    code, out, _ = run(capsys, "weights", "--out", str(tmp_path))
    assert code == 0
    lines = (tmp_path / "weights_x.csv").read_text().splitlines()
    assert lines[0] == "x,alpha,beta,lstar"
    assert "10000.0,77,77.0,nan" in lines
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["files"] == ["weights_index.csv", "weights_x.csv"]
    assert manifest["config_hash"] == cli.config_hash(manifest["config"])
    assert manifest["seed"] == 20240601


def test_moments_and_limits_tables(tmp_path, capsys):
    code, _, _ = run(capsys, "moments", "--override", "n_values=[100]", "--override", "grid=[0.5,1.0]",
                     "--out", str(tmp_path / "m"))
    assert code == 0
    rows = (tmp_path / "m" / "moments_cov.csv").read_text().splitlines()
    assert rows[0] == "n,pair,tau,t,direct,identity,tail_bound"
    assert len(rows) == 1 + 3 * 9
    code, out, _ = run(capsys, "limits", "--out", str(tmp_path / "l"))
    assert code == 0 and "psd True" in out
    assert (tmp_path / "l" / "limits_checks.csv").exists()


def test_manifest_round_trip(tmp_path, capsys):
    args = ["simulate", "--override", "n_values=[50,100]", "--override", "replicates=4", "--seed", "77",
            "--override", "mode=coupled"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(["simulate", "--config", str(tmp_path / "a" / "manifest.json"),
                     "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    capsys.readouterr()
    assert (tmp_path / "a" / "paths.csv").read_bytes() == (tmp_path / "b" / "paths.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"] and ma["seed"] == 77


def test_fclt_command(tmp_path, capsys):
    code, out, _ = run(capsys, "fclt", "--override", "n_values=[100,1000]", "--override", "replicates=50",
                       "--out", str(tmp_path))
    assert code == 0 and "trend check" in out
    for name in ("cov_report.csv", "paths.csv", "trend.csv", "gap_vs_n.svg", "manifest.json"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "cov_report.csv").read_text().splitlines()[0]
    assert header == "pair,tau,t,n,empirical,se,exact,limit,z,gap"


def test_verify_exit_code_follows_results(tmp_path, capsys):
    small = {"c1_replicates": 2000, "c2_cases": 2, "c3_n_values": [100, 10000], "c4_n": 100,
             "c4_replicates": 200, "c5_n_values": [100, 200], "c5_replicates": 200, "c6_n": 100,
             "c6_replicates": 200, "c7_n_values": [1000], "c7_deltas": [0.1, 1.0], "c8_cases": 3,
             "c9_n_values": [100, 1000], "c9_replicates": 50, "rerun": False}
    args = ["verify", "--out", str(tmp_path)]
    for k, v in small.items():
        args += ["--override", f"verify.{k}={json.dumps(v)}"]
    code, out, _ = run(capsys, *args)
    lines = (tmp_path / "acceptance.csv").read_text().splitlines()
    failed = [ln for ln in lines[1:] if ",false," in ln]
    assert len(lines) == 10
    assert code == (3 if failed else 0)
    assert out.count("criterion") == 9
