"""Session-scoped trained models shared across test modules."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from t2r.model import ModelConfig
from t2r.tasks import SyntheticTask, synthetic_text
from t2r.training import TrainConfig, pretrain


@pytest.fixture(scope="session")
def copy_task():
    return SyntheticTask("copy", 8, 16)


@pytest.fixture(scope="session")
def copy_model_config():
    return ModelConfig(n_layers=2, heads=4, head_dim=16, ffn_dim=128, vocab=16, max_positions=32)


@pytest.fixture(scope="session")
def copy_teacher(copy_task, copy_model_config):
    cfg = TrainConfig(steps=300, batch_tokens=512, lr=1e-3, warmup=50, seed=0)
    return pretrain(copy_model_config, cfg, copy_task)


@pytest.fixture(scope="session")
def small_corpus_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "pilot.txt"
    path.write_bytes(synthetic_text(120_000, seed=3))
    return str(path)


@pytest.fixture(scope="session")
def small_corpus_ids(small_corpus_path):
    from t2r.io import load_corpus

    return load_corpus(small_corpus_path)


@pytest.fixture(scope="session")
def char_task(small_corpus_ids):
    return SyntheticTask("char-lm", 48, 256, corpus=small_corpus_ids)


@pytest.fixture(scope="session")
def char_teacher(char_task):
    cfg = ModelConfig(n_layers=2, heads=2, head_dim=12, ffn_dim=96, vocab=256, max_positions=64)
    tc = TrainConfig(steps=350, batch_tokens=768, lr=1.5e-3, warmup=40, seed=0, eval_samples=48)
    return pretrain(cfg, tc, char_task)
