"""Shared builders for test models."""

import numpy as np

from t2r.model import Model, ModelConfig


def lm_config(
    n_layers=2,
    heads=2,
    head_dim=4,
    ffn_dim=16,
    vocab=11,
    max_positions=64,
    kinds=None,
    feature_kind="mlp",
    k_causal=0,
    **extra,
):
    return ModelConfig(
        n_layers=n_layers,
        heads=heads,
        head_dim=head_dim,
        ffn_dim=ffn_dim,
        vocab=vocab,
        max_positions=max_positions,
        causal_kinds=kinds or (),
        feature_kind=feature_kind,
        k_causal=k_causal,
        **extra,
    )


def tiny_lm(seed=0, **kwargs) -> Model:
    return Model.init(lm_config(**kwargs), seed)


def tiny_linear_lm(seed=0, feature_kind="mlp", k=3, n_layers=2, **kwargs) -> Model:
    head_dim = kwargs.pop("head_dim", 4)
    if feature_kind == "elu":
        k = head_dim
    cfg = lm_config(
        n_layers=n_layers,
        head_dim=head_dim,
        kinds=("linear",) * n_layers,
        feature_kind=feature_kind,
        k_causal=k,
        **kwargs,
    )
    return Model.init(cfg, seed)


def seq2seq_config(n_layers=2, heads=2, head_dim=4, ffn_dim=16, vocab=13, max_positions=32, **extra):
    return ModelConfig(
        n_layers=n_layers,
        heads=heads,
        head_dim=head_dim,
        ffn_dim=ffn_dim,
        vocab=vocab,
        max_positions=max_positions,
        seq2seq=True,
        **extra,
    )


def random_tokens(rng: np.random.Generator, n: int, vocab: int) -> np.ndarray:
    return rng.integers(0, vocab, size=n)
