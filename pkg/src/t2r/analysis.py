"""Perplexity evaluation and attention-fidelity measurement.

Distances compare two models' attention rows at identical (sample, layer,
head, position) coordinates, so both traces must come from the same inputs
and a shared architecture lineage; per-row Euclidean distances are averaged
across all coordinates.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .attention import AttentionTrace
from .errors import ContractError, InputError
from .model import Model, lm_forward

ANALYSIS_CSV_HEADER = ["model_a", "model_b", "k", "metric", "value", "n_samples"]


def eval_perplexity(model: Model, corpus_ids, window: int, predict_last: int,
                    max_windows: int | None = None, chunk: int = 32) -> float:
    """Perplexity over the last ``predict_last`` targets of non-overlapping windows.

    Each window of ``window`` tokens predicts its next-token targets; scoring
    only the window tail avoids charging the model for window-initial tokens
    with no context. predict_last == window scores every position.
    """
    if predict_last < 1 or predict_last > window:
        raise ContractError(f"predict_last must be in 1..window, got {predict_last} for window {window}")
    ids = np.asarray(corpus_ids, dtype=np.int64)
    n_windows = (ids.size - 1) // window
    if n_windows < 1:
        raise InputError(f"corpus of {ids.size} tokens is shorter than one window of {window}")
    if max_windows is not None:
        n_windows = min(n_windows, max_windows)
    total_nll = 0.0
    total_tokens = 0
    with T.suspend_tape():
        for start in range(0, n_windows, chunk):
            rows = np.arange(start, min(start + chunk, n_windows))
            idx = rows[:, None] * window + np.arange(window + 1)
            block = ids[idx]
            inputs, targets = block[:, :-1], block[:, 1:]
            logits = lm_forward(model, inputs).data
            tail = slice(window - predict_last, window)
            lt = logits[:, tail, :]
            tt = targets[:, tail]
            m = lt.max(axis=-1, keepdims=True)
            lse = np.log(np.exp(lt - m).sum(axis=-1)) + m[..., 0]
            token_logp = np.take_along_axis(lt, tt[..., None], axis=-1)[..., 0] - lse
            total_nll -= token_logp.sum()
            total_tokens += tt.size
    return float(np.exp(total_nll / total_tokens))


def model_trace(model: Model, token_batch: np.ndarray, layers: list[int] | None = None) -> AttentionTrace:
    """Attention rows for a batch of sequences, optionally restricted to layers."""
    with T.suspend_tape():
        _, trace = lm_forward(model, np.asarray(token_batch, dtype=np.int64), record_trace=True)
    if layers is not None:
        trace = AttentionTrace([trace.layers[i] for i in layers], trace.model_id, trace.input_id)
    return trace


def valid_row_mask(trace: AttentionTrace, tol: float = 1e-4) -> list[np.ndarray]:
    """True where a row is normalized.

    Relu features can zero every similarity of a row; the guarded denominator
    then leaves a near-zero row, which analysis averages must exclude.
    """
    return [np.abs(rows.sum(axis=-1) - 1.0) <= tol for rows in trace.layers]


def attention_distance(trace_a: AttentionTrace, trace_b: AttentionTrace,
                       mask: list[np.ndarray] | None = None) -> float:
    """Mean per-row Euclidean distance between corresponding attention rows."""
    if len(trace_a.layers) != len(trace_b.layers):
        raise ContractError(f"traces span {len(trace_a.layers)} vs {len(trace_b.layers)} layers")
    dists = []
    for li, (a, b) in enumerate(zip(trace_a.layers, trace_b.layers)):
        if a.shape != b.shape:
            bad_head = 0 if a.ndim < 2 else min(a.shape[1], b.shape[1])
            raise ContractError(f"trace shape mismatch at (layer {li}, head {bad_head}): {a.shape} vs {b.shape}")
        diff = a - b
        d = np.sqrt((diff * diff).sum(axis=-1))
        dists.append(d[mask[li]].reshape(-1) if mask is not None else d.reshape(-1))
    return float(np.concatenate(dists).mean())


def attention_entropy(trace: AttentionTrace, mask: list[np.ndarray] | None = None) -> float:
    """Mean Shannon entropy (nats) of the attention rows, with 0 ln 0 = 0.

    Rows not excluded by ``mask`` must be normalized.
    """
    entropies = []
    for li, rows in enumerate(trace.layers):
        if mask is not None:
            rows = rows[mask[li]].reshape(-1, rows.shape[-1])
        sums = rows.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-4):
            raise ContractError(f"layer {li}: unnormalized trace row (sum deviates by {np.abs(sums - 1.0).max():.2e})")
        safe = np.where(rows > 0.0, rows, 1.0)
        entropies.append(-(rows * np.log(safe)).sum(axis=-1).reshape(-1))
    return float(np.concatenate(entropies).mean())


def joint_valid_mask(trace_a: AttentionTrace, trace_b: AttentionTrace) -> list[np.ndarray]:
    return [a & b for a, b in zip(valid_row_mask(trace_a), valid_row_mask(trace_b))]


def converted_layer_indices(model: Model) -> list[int]:
    """Layers whose causal attention is linear (the ones compared for hybrids)."""
    return [i for i, kind in enumerate(model.config.causal_kinds) if kind == "linear"]
