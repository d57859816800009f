"""Command-line front end: ``urnflow <subcommand> [--config FILE] [options]``.

Every run writes its tables to ``--out`` together with ``manifest.json``.
The manifest embeds the effective config, so passing it back as
``--config`` repeats the run.

Exit codes: 0 success, 1 invalid config, 2 numerical tolerance not met,
3 acceptance failure.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from .harness import ConfigError, ExperimentConfig, resolve_threads, run_fclt_experiment, run_replicates
from .limits import canonical_pair, limit_cov, limit_matrix, self_similarity_residual
from .moments import PAIRS, poisson_cov, poisson_cov_identity, poisson_mean
from .occupancy import PathSample
from .reporting import write_csv
from .sampler import BallStream
from .series import ToleranceError

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_ACCEPTANCE = 0, 1, 2, 3
SUBCOMMANDS = ("weights", "moments", "limits", "simulate", "fclt", "verify")
# sections of the config file read by the CLI itself rather than the harness
CLI_SECTIONS = ("probe", "limits", "verify")


def _data_file(name: str) -> str:
    return resources.files("urnflow").joinpath("data", name).read_text(encoding="utf-8")


def default_config() -> dict:
    return json.loads(_data_file("default.json"))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str
    seed: int
    version: str
    started: str
    finished: str = ""
    files: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def write(self, out: Path) -> Path:
        path = Path(out) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# -- config -----------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(config: dict, item: str) -> None:
    """Set a dotted ``key=value`` in place; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(item, "override must look like key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(key, "empty key in override")
    node = config
    for i, part in enumerate(parts[:-1]):
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(".".join(parts[: i + 1]), "is not an object")
        node = nxt
    node[parts[-1]] = _parse_value(value)


def _error_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = [r for r in err.validator_value if r not in err.instance]
        parts.extend(missing[:1])
    elif err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(set(err.instance) - allowed)
        parts.extend(extra[:1])
    return ".".join(parts) or "<root>"


def validate_config(config: dict) -> None:
    schema = json.loads(_data_file("config.schema.json"))
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(config), key=lambda e: (len(e.absolute_path), _error_path(e)))
    if errors:
        err = errors[0]
        raise ConfigError(_error_path(err), err.message)


def load_config(path: str | None, overrides=(), seed: int | None = None) -> dict:
    if path is None:
        config = default_config()
    else:
        try:
            config = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"{path} is not valid JSON: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        # a manifest from an earlier run carries its config
        if "config_hash" in config and isinstance(config.get("config"), dict):
            config = config["config"]
    config = copy.deepcopy(config)
    for item in overrides:
        apply_override(config, item)
    if seed is not None:
        config["seed"] = seed
    validate_config(config)
    return config


def experiment(config: dict, out_dir=None) -> ExperimentConfig:
    data = {k: v for k, v in config.items() if k not in CLI_SECTIONS}
    for key in ("n_values",):
        if key not in data:
            raise ConfigError(key, "required field missing")
    data["out_dir"] = None if out_dir is None else str(out_dir)
    return ExperimentConfig.from_dict(data)


# -- subcommands ------------------------------------------------------------

def cmd_weights(config: dict, out: Path, args) -> list:
    cfg = experiment(config)
    model = cfg.weight_model
    probe = config.get("probe", {})
    indices = probe.get("indices", [1, 2, 5, 10, 100, 1000, 10**4, 10**6])
    xs = probe.get("x", [float(n) for n in cfg.n_values])
    rows = [(i, model.prob(i), model.tail_mass(i)) for i in indices]
    files = [write_csv(out / "weights_index.csv", ("i", "p_i", "tail_mass"), rows)]
    rows = []
    for x in xs:
        x = float(x)
        a = model.alpha(x)
        if model.is_finite:
            rows.append((x, a, float("nan"), float("nan")))
            continue
        theta_one = model.theta == 1.0
        rows.append((x, a, model.beta(x) if x >= 1 else float("nan"),
                     model.lstar(x) if theta_one else float("nan")))
    files.append(write_csv(out / "weights_x.csv", ("x", "alpha", "beta", "lstar"), rows))
    print(f"{model!r}: c = {model.c!r}")
    for x, a, b, ls in rows:
        print(f"x={x:g} alpha={a} beta={b!r} lstar={ls!r}")
    return files


def cmd_moments(config: dict, out: Path, args) -> list:
    cfg = experiment(config)
    model = cfg.weight_model
    tol = {"atol": cfg.atol, "rtol": cfg.rtol}
    means, covs = [], []
    for n in cfg.n_values:
        for t in cfg.grid:
            for comp in ("R", "U", "M", "Mtilde"):
                r = poisson_mean(model, comp, n * t, **tol)
                means.append((n, comp, t, r.value, r.tail_bound))
        for i, t in enumerate(cfg.grid):
            for tau in cfg.grid[: i + 1]:
                for pair in PAIRS:
                    d = poisson_cov(model, pair, n * tau, n * t, **tol)
                    e = poisson_cov_identity(model, pair, n * tau, n * t, **tol)
                    covs.append((n, pair, tau, t, d.value, e.value, d.tail_bound))
    print(f"{len(means)} means and {len(covs)} covariances for {model!r}")
    return [write_csv(out / "moments_means.csv", ("n", "component", "t", "mean", "tail_bound"), means),
            write_csv(out / "moments_cov.csv",
                      ("n", "pair", "tau", "t", "direct", "identity", "tail_bound"), covs)]


def cmd_limits(config: dict, out: Path, args) -> list:
    if args.theta is not None or args.pair is not None:
        missing = [f"--{k}" for k in ("theta", "pair", "tau", "t") if getattr(args, k) is None]
        if missing:
            raise ConfigError(missing[0], "required for a single limit value")
        print(repr(limit_cov(args.theta, canonical_pair(args.pair), args.tau, args.t)))
        return []
    grid = [float(g) for g in config.get("grid", [0.1 * k for k in range(1, 11)])]
    thetas = config.get("limits", {}).get("thetas", [0.3, 0.5, 0.8, 1.0])
    table, checks = [], []
    for theta in thetas:
        for i, t in enumerate(grid):
            for tau in grid[: i + 1]:
                for pair in PAIRS:
                    table.append((theta, pair, tau, t, limit_cov(theta, pair, tau, t)))
        lm = limit_matrix(theta, grid)
        worst = max(self_similarity_residual(theta, p, a, grid[0], grid[-1])
                    for p in PAIRS for a in (0.5, 2.0, 10.0))
        checks.append((theta, lm.min_eigenvalue, lm.trace, lm.is_psd, worst))
        print(f"theta={theta}: min eigenvalue {lm.min_eigenvalue:.3e}, psd {lm.is_psd}, "
              f"self-similarity residual {worst:.1e}")
    return [write_csv(out / "limits_table.csv", ("theta", "pair", "tau", "t", "limit"), table),
            write_csv(out / "limits_checks.csv",
                      ("theta", "min_eigenvalue", "trace", "psd", "self_similarity_residual"), checks)]


def cmd_simulate(config: dict, out: Path, args) -> list:
    cfg = experiment(config)
    model = cfg.weight_model
    rows = []
    for n in cfg.n_values:
        stream = BallStream(cfg.mode, n, tuple(cfg.grid))
        samples = run_replicates(model, stream, cfg.seed, cfg.replicates, threads=args.threads, kmax=cfg.kmax)
        for s in samples:
            parts = (s.discrete, s.poissonized) if cfg.mode == "coupled" else (s,)
            for p in parts:
                rows.extend((n,) + tuple(r) for r in p.rows())
    print(f"{len(rows)} path rows for {model!r}")
    return [write_csv(out / "paths.csv", ("n",) + tuple(PathSample.header(cfg.kmax)), rows)]


def cmd_fclt(config: dict, out: Path, args) -> list:
    cfg = experiment(config, out)
    res = run_fclt_experiment(cfg, threads=args.threads)
    tr = res.trend
    for n, g, s in zip(tr.n_values, tr.max_gaps, tr.slack):
        print(f"n={n}: max gap {g:.4f} (slack {s:.4f})")
    print(f"trend check: {'PASS' if tr.passed else 'FAIL'}")
    return res.files


def cmd_verify(config: dict, out: Path, args) -> list:
    from .acceptance import VerifyPlan, run_verify

    try:
        plan = VerifyPlan.from_dict(config.get("verify", {}))
    except (KeyError, TypeError) as exc:
        raise ConfigError(str(exc).strip("'"), "unknown verify setting") from None
    if "seed" in config:
        plan.seed = int(config["seed"])
    results = run_verify(plan, out, threads=args.threads, report=lambda r: print(r.line(), flush=True))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failing: {', '.join(map(str, failed))}" if failed else ""))
    args.acceptance_failed = bool(failed)
    return sorted(str(p) for p in Path(out).glob("*") if p.is_file() and p.name != "manifest.json")


COMMANDS = {"weights": cmd_weights, "moments": cmd_moments, "limits": cmd_limits,
            "simulate": cmd_simulate, "fclt": cmd_fclt, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urnflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"urnflow {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file or an earlier manifest.json")
        p.add_argument("--out", help="output directory (default out/<subcommand>)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--threads", type=int, help="worker processes (default $URNFLOW_THREADS or 1)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a dotted config key; VALUE is parsed as JSON")
        if name == "limits":
            p.add_argument("--theta", type=float)
            p.add_argument("--pair", help="e.g. RU or rho_upsilon")
            p.add_argument("--tau", type=float)
            p.add_argument("--t", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.threads = resolve_threads(args.threads)
    args.acceptance_failed = False
    out = Path(args.out or Path("out") / args.subcommand)
    single_limit = args.subcommand == "limits" and (args.theta is not None or args.pair is not None)
    try:
        if args.seed is not None and not (0 <= args.seed < 2**64):
            raise ConfigError("--seed", "must be an unsigned 64-bit integer")
        config = load_config(args.config, args.override, args.seed)
        manifest = RunManifest(args.subcommand, config_hash(config), int(config.get("seed", 20240601)),
                               __version__, _now(), config=config)
        files = COMMANDS[args.subcommand](config, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ToleranceError as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    if not single_limit:
        manifest.finished = _now()
        manifest.files = sorted(Path(f).name if Path(f).parent == out else str(f) for f in files)
        manifest.write(out)
    return EXIT_ACCEPTANCE if args.acceptance_failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
