"""Generation throughput and attention-state memory versus sequence length.

Timing wraps the generation loop only (prompt prefill excluded), single
threaded, with one discarded warm-up rep and the GC paused. Memory is the
analytic live element count of the instrumented attention structures, never
process RSS.
"""

from __future__ import annotations

import gc
import time

import numpy as np
from scipy import stats as sstats

from .errors import ContractError
from .model import Model
from .recurrent import generate, state_footprint

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

BENCH_CSV_HEADER = ["model", "mode", "length", "batch", "rep", "tokens_per_sec", "attn_state_elements"]


def _single_thread():
    if threadpool_limits is not None:
        return threadpool_limits(limits=1)
    import contextlib

    return contextlib.nullcontext()


def _one_decode(model: Model, length: int, batch: int, mode: str, seed: int):
    rng = np.random.default_rng(seed)
    prompt = rng.integers(0, model.config.vocab, size=(batch, length))
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        _, run_stats = generate(model, prompt, length, mode=mode, collect_stats=True)
    finally:
        if gc_was_enabled:
            gc.enable()
    elapsed = sum(run_stats.step_seconds)
    return batch * length / elapsed, run_stats


def bench_speed(model: Model, lengths: list[int], batch: int, reps: int,
                mode: str = "recurrent", model_name: str = "model") -> list[dict]:
    """Raw per-rep rows; prompt length equals output length at every point."""
    if reps < 3:
        raise ContractError(f"reps must be >= 3, got {reps}")
    rows = []
    with _single_thread():
        for length in lengths:
            _one_decode(model, length, batch, mode, seed=0)  # warm-up rep, excluded
            for rep in range(reps):
                tps, run_stats = _one_decode(model, length, batch, mode, seed=rep + 1)
                rows.append({
                    "model": model_name,
                    "mode": mode,
                    "length": length,
                    "batch": batch,
                    "rep": rep,
                    "tokens_per_sec": f"{tps:.3f}",
                    "attn_state_elements": max(run_stats.state_elements, default=0),
                })
    return rows


def median_tokens_per_sec(rows: list[dict]) -> dict[int, float]:
    by_length: dict[int, list[float]] = {}
    for row in rows:
        by_length.setdefault(int(row["length"]), []).append(float(row["tokens_per_sec"]))
    return {length: float(np.median(vals)) for length, vals in by_length.items()}


def bench_memory(model: Model, lengths: list[int], batch: int = 1,
                 mode: str = "recurrent", model_name: str = "model") -> list[dict]:
    """Peak live attention-state elements per decode length (single rep)."""
    rows = []
    with _single_thread():
        for length in lengths:
            tps, run_stats = _one_decode(model, length, batch, mode, seed=0)
            rows.append({
                "model": model_name,
                "mode": mode,
                "length": length,
                "batch": batch,
                "rep": 0,
                "tokens_per_sec": f"{tps:.3f}",
                "attn_state_elements": max(run_stats.state_elements, default=0),
            })
    return rows


def per_step_state_elements(model: Model, length: int, batch: int = 1) -> list[int]:
    """Live element counts after every generated step of one decode."""
    _, run_stats = _one_decode(model, length, batch, "recurrent", seed=0)
    return run_stats.state_elements


def decode_time_slope(model: Model, length: int, batch: int = 1, skip: int = 64,
                      n_bins: int = 32, warmups: int = 2) -> tuple[float, float, float]:
    """Slope of per-step decode time vs step index, with its 95% CI.

    Warm-up decodes run first (clock/cache ramp-up would otherwise masquerade
    as a trend), then ``skip`` leading steps are dropped. Per-step times are
    sequentially correlated, so the CI comes from a batch-means regression:
    OLS on bin means over ``n_bins`` equal bins, which keeps the error model
    honest for drifting environments.
    """
    with _single_thread():
        for _ in range(warmups):
            _one_decode(model, length, batch, "recurrent", seed=0)
        _, run_stats = _one_decode(model, length, batch, "recurrent", seed=0)
    times = np.array(run_stats.step_seconds[skip:])
    bin_size = times.size // n_bins
    if bin_size < 2:
        raise ContractError(f"decode of {length} steps is too short for {n_bins} bins")
    means = times[: n_bins * bin_size].reshape(n_bins, bin_size).mean(axis=1)
    centers = (np.arange(n_bins) + 0.5) * bin_size + skip
    fit = sstats.linregress(centers, means)
    tcrit = sstats.t.ppf(0.975, n_bins - 2)
    half = tcrit * fit.stderr
    return float(fit.slope), float(fit.slope - half), float(fit.slope + half)


def expected_linear_footprint(model: Model) -> int:
    return state_footprint(model.config)
