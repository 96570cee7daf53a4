"""Teacher training, swap-then-finetune, and the experiment matrix."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DivergenceError
from .model import Checkpoint, Model, lm_forward, seq2seq_forward, swap_attention
from .recurrent import generate, generate_seq2seq
from .tasks import SyntheticTask
from .tensor import AdamState, Tape, Tensor, adam_step, backward

MATRIX_CSV_HEADER = ["cell_id", "feature_map", "init", "k_causal", "k_cross",
                     "steps", "eval_metric", "train_seconds", "param_count", "status"]


@dataclass
class TrainConfig:
    """Optimization settings; batching is counted in tokens, fairseq-style."""

    steps: int
    batch_tokens: int = 512
    lr: float = 1e-3
    warmup: int = 50
    schedule: str = "inverse-sqrt"  # inverse-sqrt | cosine | constant
    seed: int = 0
    objective: str = "lm"  # lm | seq2seq
    label_smoothing: float = 0.0
    freeze_feature_maps: bool = False
    eval_samples: int = 64
    eval_every: int = 0  # 0: eval only at the end

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.warmup > self.steps and self.steps > 0:
            self.warmup = self.steps
        if self.schedule not in ("inverse-sqrt", "cosine", "constant"):
            raise ConfigError(f"unknown schedule '{self.schedule}'")
        if self.objective not in ("lm", "seq2seq"):
            raise ConfigError(f"unknown objective '{self.objective}'")


def lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.warmup > 0 and step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    if cfg.schedule == "constant":
        return cfg.lr
    if cfg.schedule == "inverse-sqrt":
        return cfg.lr * (max(cfg.warmup, 1) / (step + 1)) ** 0.5
    span = max(cfg.steps - cfg.warmup, 1)
    progress = min((step - cfg.warmup) / span, 1.0)
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def loss(logits: Tensor, targets: np.ndarray, label_smoothing: float = 0.0,
         weights: np.ndarray | None = None) -> Tensor:
    """Label-smoothed cross entropy averaged over (weighted) positions."""
    if logits.ndim == 3:
        b, n, v = logits.shape
        logits = T.reshape(logits, (b * n, v))
        targets = np.asarray(targets).reshape(-1)
        weights = None if weights is None else np.asarray(weights).reshape(-1)
    return T.cross_entropy_rows(logits, targets, label_smoothing, weights)


def _batch_sequences(cfg: TrainConfig, task: SyntheticTask) -> int:
    return max(1, cfg.batch_tokens // task.sample_length)


def _forward_loss(model: Model, task: SyntheticTask, cfg: TrainConfig,
                  rng: np.random.Generator | None, eval_mode: bool,
                  dropout_rng: np.random.Generator | None = None) -> Tensor:
    n = cfg.eval_samples if eval_mode else _batch_sequences(cfg, task)
    smoothing = 0.0 if eval_mode else cfg.label_smoothing
    if cfg.objective == "seq2seq":
        src, tgt_in, tgt_out = task.eval_seq2seq(n) if eval_mode else task.sample_seq2seq(rng, n)
        logits = seq2seq_forward(model, src, tgt_in, dropout_rng=dropout_rng)
        return loss(logits, tgt_out, smoothing)
    batch = task.eval_batch(n) if eval_mode else task.sample_batch(rng, n)
    logits = lm_forward(model, batch.inputs, dropout_rng=dropout_rng)
    return loss(logits, batch.targets, smoothing, batch.weights)


def eval_loss(model: Model, task: SyntheticTask, cfg: TrainConfig) -> float:
    """Plain cross entropy on the frozen eval set (no smoothing)."""
    with T.suspend_tape():
        return _forward_loss(model, task, cfg, None, eval_mode=True).item()


def exact_match(model: Model, task: SyntheticTask, n_samples: int = 64, seed: int = 777) -> float:
    """Fraction of eval prompts whose greedy continuation equals the known answer."""
    rng = np.random.default_rng(seed)
    if model.config.seq2seq:
        src, _, out = task.eval_seq2seq(n_samples)
        from .tasks import SEP

        got = generate_seq2seq(model, src, np.full((src.shape[0], 1), SEP), out.shape[1])
        return float(np.all(got == out, axis=1).mean())
    prompts, answers = task.prompt_and_answer(rng, n_samples)
    got = generate(model, prompts, answers.shape[1], mode="recurrent")
    return float(np.all(got == answers, axis=1).mean())


def _train_loop(model: Model, task: SyntheticTask, cfg: TrainConfig) -> dict[str, str]:
    """Optimize in place; returns metadata. Raises DivergenceError on blow-up."""
    rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 0x5EED) if model.config.dropout > 0 else None
    params = model.trainable_params(cfg.freeze_feature_maps)
    state = AdamState()
    initial = None
    high_streak = 0
    trajectory: list[str] = []
    final_train = float("nan")
    for step in range(cfg.steps):
        with Tape():
            step_loss = _forward_loss(model, task, cfg, rng, eval_mode=False, dropout_rng=dropout_rng)
            value = step_loss.item()
            if not np.isfinite(value):
                raise DivergenceError(step, "training loss is not finite")
            backward(step_loss)
        if initial is None:
            initial = value
        high_streak = high_streak + 1 if value > 10.0 * initial else 0
        if high_streak >= 100:
            raise DivergenceError(step, f"loss stuck above 10x initial ({value:.4g} vs {initial:.4g})")
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
        adam_step(params, grads, state, lr_at(cfg, step))
        model.zero_grads()
        final_train = value
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            trajectory.append(f"{step + 1}:{eval_loss(model, task, cfg):.6f}")
    meta = {
        "step": str(cfg.steps),
        "seed": str(cfg.seed),
        "objective": cfg.objective,
        "task": task.kind,
        "initial_train_loss": f"{initial if initial is not None else float('nan'):.6f}",
        "final_train_loss": f"{final_train:.6f}",
        "eval_loss": f"{eval_loss(model, task, cfg):.6f}",
    }
    if trajectory:
        meta["eval_trajectory"] = ";".join(trajectory)
    return meta


def pretrain(model_cfg, train_cfg: TrainConfig, task: SyntheticTask) -> Checkpoint:
    """Train a softmax-attention teacher from scratch, deterministically."""
    if "linear" in model_cfg.causal_kinds + model_cfg.cross_kinds:
        raise ContractError("pretraining expects softmax attention everywhere")
    if train_cfg.steps < 1:
        raise ConfigError("pretraining needs at least one step")
    model = Model.init(model_cfg, train_cfg.seed)
    meta = _train_loop(model, task, train_cfg)
    if task.kind != "char-lm":
        meta["exact_match"] = f"{exact_match(model, task):.4f}"
    return model.to_checkpoint(meta)


def train_scratch(model_cfg, train_cfg: TrainConfig, task: SyntheticTask) -> Checkpoint:
    """Random-initialization baseline: train the given architecture as-is."""
    model = Model.init(model_cfg, train_cfg.seed)
    meta = _train_loop(model, task, train_cfg)
    return model.to_checkpoint(meta)


def finetune(ckpt: Checkpoint, train_cfg: TrainConfig, task: SyntheticTask) -> Checkpoint:
    """Tune all parameters of a converted checkpoint; the input is not mutated.

    With freeze_feature_maps=True the feature-map parameters keep their
    initial values (the ablation from the attention-distance analysis).
    """
    kinds = ckpt.config.causal_kinds + ckpt.config.cross_kinds
    if "linear" not in kinds:
        raise ContractError("finetune expects at least one linear attention site")
    model = Model.from_checkpoint(ckpt)
    if train_cfg.steps == 0:
        return model.to_checkpoint(dict(ckpt.meta))
    meta = _train_loop(model, task, train_cfg)
    meta["initialized_from"] = ckpt.meta.get("task", "")
    return model.to_checkpoint(meta)


# --- experiment matrix -------------------------------------------------------------


@dataclass(frozen=True)
class MatrixCell:
    feature_map: str
    init: str  # "pretrain" | "random"
    k_causal: int
    k_cross: int = 0

    def cell_id(self) -> str:
        tag = f"{self.feature_map}-{self.init}-kc{self.k_causal}"
        return tag + (f"-kx{self.k_cross}" if self.k_cross else "")


def run_matrix(
    model_cfg,
    train_cfg: TrainConfig,
    task: SyntheticTask,
    plan: list[MatrixCell],
    teacher: Checkpoint | None = None,
) -> list[dict]:
    """Run every cell; divergence is recorded in the row, never fatal."""
    rows = []
    sites = ("causal", "cross") if model_cfg.seq2seq else ("causal",)
    for cell in plan:
        if cell.init not in ("pretrain", "random"):
            raise ConfigError(f"unknown init '{cell.init}'")
        if cell.init == "pretrain" and teacher is None:
            raise ConfigError("matrix plan has pretrain cells but no teacher checkpoint")
        t0 = time.perf_counter()
        status = "ok"
        metric = float("nan")
        param_count = 0
        try:
            if cell.init == "pretrain":
                converted = swap_attention(
                    teacher, cell.feature_map, sites=sites,
                    k_causal=cell.k_causal, k_cross=cell.k_cross or None,
                    seed=train_cfg.seed,
                )
                result = finetune(converted, train_cfg, task)
            else:
                k_causal = cell.k_causal
                k_cross = cell.k_cross
                if cell.feature_map == "elu":
                    k_causal = model_cfg.head_dim
                    k_cross = model_cfg.head_dim if model_cfg.seq2seq else 0
                cfg = replace(
                    model_cfg,
                    causal_kinds=("linear",) * model_cfg.n_layers,
                    cross_kinds=("linear",) * model_cfg.n_layers if model_cfg.seq2seq else (),
                    feature_kind=cell.feature_map,
                    k_causal=k_causal,
                    k_cross=k_cross,
                )
                result = train_scratch(cfg, train_cfg, task)
            metric = float(result.meta["eval_loss"])
            param_count = Model.from_checkpoint(result).param_count()
        except DivergenceError:
            status = "diverged"
        rows.append({
            "cell_id": cell.cell_id(),
            "feature_map": cell.feature_map,
            "init": cell.init,
            "k_causal": cell.k_causal,
            "k_cross": cell.k_cross,
            "steps": train_cfg.steps,
            "eval_metric": f"{metric:.6f}" if status == "ok" else "nan",
            "train_seconds": f"{time.perf_counter() - t0:.3f}",
            "param_count": param_count,
            "status": status,
        })
    return rows


def write_matrix_csv(rows: list[dict], path: str) -> None:
    from .io import write_csv

    write_csv(path, MATRIX_CSV_HEADER, rows)
