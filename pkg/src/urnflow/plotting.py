"""Static SVG line charts."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata and ids keep the SVG bytes reproducible
plt.rcParams["svg.hashsalt"] = "urnflow"
_META = {"Date": None, "Creator": "urnflow"}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_gap_vs_n(ns, gaps, slack, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.errorbar(ns, gaps, yerr=slack, marker="o", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("max |empirical - limit|")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_lemma_ratios(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    by_n: dict = {}
    for r in report.rows:
        if r.delta > 0:
            by_n.setdefault(r.n, {}).setdefault(r.delta, []).append(r.ratio)
    for n, d in sorted(by_n.items()):
        xs = sorted(d)
        ax.plot(xs, [max(d[x]) for x in xs], marker=".", label=f"n={n:g}")
    ax.axhline(report.bound, color="k", linestyle="--", linewidth=1, label="bound")
    ax.set_xscale("log")
    ax.set_xlabel("delta")
    ax.set_ylabel(f"{report.which} ratio")
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_coupling(report, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    stats = sorted({r.statistic for r in report.rows})
    for s in stats:
        seq = report.sequence(s)
        ax.errorbar([r.n for r in seq], [r.q90 for r in seq], yerr=[r.se for r in seq],
                    marker="o", capsize=3, label=s)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("90% quantile of sup distance")
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
