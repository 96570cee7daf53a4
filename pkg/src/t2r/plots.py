"""Render report figures next to the delimited outputs.

Every CSV the CLI writes can be paired with a PNG of the same stem; all
figures go through matplotlib's Agg backend so they work headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_bench_speed(rows: list[dict], path: str) -> str:
    """Median tokens/sec vs decode length, one line per (model, mode)."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    series: dict[tuple[str, str], dict[int, list[float]]] = {}
    for row in rows:
        key = (str(row["model"]), str(row["mode"]))
        series.setdefault(key, {}).setdefault(int(row["length"]), []).append(float(row["tokens_per_sec"]))
    for (name, mode), pts in sorted(series.items()):
        lengths = sorted(pts)
        med = [float(np.median(pts[n])) for n in lengths]
        ax.plot(lengths, med, marker="o", label=f"{name} ({mode})")
    ax.set_xlabel("sequence length")
    ax.set_ylabel("tokens / second")
    ax.set_xscale("log", base=2)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_bench_memory(rows: list[dict], path: str) -> str:
    """Attention-state elements vs decode length (log-log)."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    series: dict[tuple[str, str], dict[int, float]] = {}
    for row in rows:
        key = (str(row["model"]), str(row["mode"]))
        series.setdefault(key, {})[int(row["length"])] = float(row["attn_state_elements"])
    for (name, mode), pts in sorted(series.items()):
        lengths = sorted(pts)
        ax.plot(lengths, [pts[n] for n in lengths], marker="s", label=f"{name} ({mode})")
    ax.set_xlabel("sequence length")
    ax.set_ylabel("attention state elements")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_matrix(rows: list[dict], path: str) -> str:
    """Eval metric vs feature size, one line per (feature_map, init)."""
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    series: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        key = (str(row["feature_map"]), str(row["init"]))
        series.setdefault(key, []).append((int(row["k_causal"]), float(row["eval_metric"])))
    for (fm, init), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{fm} + {init}")
    diverged = [row for row in rows if row["status"] != "ok"]
    title = "experiment matrix" + (f" ({len(diverged)} diverged)" if diverged else "")
    ax.set_title(title, fontsize=9)
    ax.set_xlabel("feature size k")
    ax.set_ylabel("eval loss")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_analysis(rows: list[dict], path: str) -> str:
    """Distance / entropy vs feature size, one panel per metric."""
    metrics = sorted({row["metric"] for row in rows})
    fig, axes = plt.subplots(1, max(len(metrics), 1), figsize=(5.0 * max(len(metrics), 1), 3.8), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        series: dict[str, list[tuple[int, float]]] = {}
        for row in rows:
            if row["metric"] != metric:
                continue
            label = str(row["model_b"]) or str(row["model_a"])
            series.setdefault(label, []).append((int(row["k"]), float(row["value"])))
        for label, pts in sorted(series.items()):
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
        ax.set_xlabel("feature size k")
        ax.set_ylabel(metric)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    return _finish(fig, path)
