"""Command-line surface: train, convert, finetune, generate, eval, bench, analyze, matrix.

Flags are long-form only. A key=value config file can supply any flag
(--config); explicit flags win. T2R_SEED overrides the default seed. Exit
codes: 0 success, 1 runtime failure, 2 usage errors. Report commands write a
CSV and, unless --no-plot is given, matching PNG figures next to it.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import plots
from .analysis import (
    ANALYSIS_CSV_HEADER,
    attention_distance,
    attention_entropy,
    converted_layer_indices,
    eval_perplexity,
    joint_valid_mask,
    model_trace,
)
from .bench import BENCH_CSV_HEADER, bench_speed, median_tokens_per_sec
from .errors import ConfigError, InputError, T2RError
from .io import detokenize, load_checkpoint, load_corpus, save_checkpoint, write_csv
from .model import Model, ModelConfig, swap_attention
from .recurrent import generate, generate_seq2seq
from .tasks import SyntheticTask
from .training import (
    MATRIX_CSV_HEADER,
    MatrixCell,
    TrainConfig,
    finetune,
    pretrain,
    run_matrix,
)


def _default_seed() -> int:
    return int(os.environ.get("T2R_SEED", "0"))


def _read_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    out: dict[str, str] = {}
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"malformed config line: {line!r}")
            key, _, val = line.partition("=")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


# types for flags whose hard default is None
_CASTERS = {
    "seed": int, "seq_len": int, "task_vocab": int, "k_causal": int, "k_cross": int,
    "keep_every_nth": int, "max_positions": int, "max_windows": int, "steps": int,
    "batch_tokens": int, "warmup": int, "batch": int, "reps": int, "samples": int,
    "lr": float, "label_smoothing": float, "dropout": float,
}


def _merge_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill None-valued flags from --config, then from hard defaults."""
    file_vals = _read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, hard in defaults.items():
        if getattr(args, key, None) is not None:
            continue
        if key in file_vals:
            raw = file_vals[key]
            caster = _CASTERS.get(key, type(hard) if hard is not None else str)
            if caster is bool:
                setattr(args, key, raw.lower() in ("1", "true", "yes"))
            else:
                setattr(args, key, caster(raw))
        else:
            setattr(args, key, hard)
    return args


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=("copy", "reverse", "lookup", "char-lm"))
    p.add_argument("--corpus", help="path to a text file (char-lm)")
    p.add_argument("--seq-len", type=int, dest="seq_len",
                   help="payload length (symbolic) or window (char-lm)")
    p.add_argument("--task-vocab", type=int, dest="task_vocab")


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-tokens", type=int, dest="batch_tokens")
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup", type=int)
    p.add_argument("--schedule", choices=("inverse-sqrt", "cosine", "constant"))
    p.add_argument("--label-smoothing", type=float, dest="label_smoothing")
    p.add_argument("--seed", type=int)


TASK_DEFAULTS = {"task": "copy", "corpus": None, "seq_len": None, "task_vocab": None}
TRAIN_DEFAULTS = {"steps": 500, "batch_tokens": 512, "lr": 1e-3, "warmup": 50,
                  "schedule": "inverse-sqrt", "label_smoothing": 0.0, "seed": None}


def _build_task(args) -> SyntheticTask:
    if args.task == "char-lm":
        if not args.corpus:
            raise ConfigError("char-lm needs --corpus")
        window = args.seq_len or 64
        return SyntheticTask("char-lm", window, 256, corpus=load_corpus(args.corpus))
    seq_len = args.seq_len or 8
    vocab = args.task_vocab or (2 * seq_len + 1 if args.task == "lookup" else 16)
    return SyntheticTask(args.task, seq_len, vocab)


def _train_config(args, objective: str = "lm", freeze: bool = False) -> TrainConfig:
    return TrainConfig(
        steps=args.steps,
        batch_tokens=args.batch_tokens,
        lr=args.lr,
        warmup=args.warmup,
        schedule=args.schedule,
        seed=args.seed if args.seed is not None else _default_seed(),
        objective=objective,
        label_smoothing=args.label_smoothing,
        freeze_feature_maps=freeze,
    )


def _figure_path(csv_path: str, suffix: str = "") -> str:
    stem, _ = os.path.splitext(csv_path)
    return f"{stem}{suffix}.png"


# --- subcommands -------------------------------------------------------------------


def cmd_train(args) -> int:
    _merge_config(args, {**TASK_DEFAULTS, **TRAIN_DEFAULTS,
                         "layers": 2, "heads": 4, "head_dim": 16, "ffn_dim": 128,
                         "max_positions": None, "objective": "lm", "dropout": 0.0})
    task = _build_task(args)
    vocab = 256 if args.task == "char-lm" else task.vocab
    max_pos = args.max_positions or max(task.sample_length + 1, 32)
    cfg = ModelConfig(
        n_layers=args.layers, heads=args.heads, head_dim=args.head_dim,
        ffn_dim=args.ffn_dim, vocab=vocab, max_positions=max_pos,
        seq2seq=args.objective == "seq2seq", dropout=args.dropout,
        label_smoothing=args.label_smoothing,
    )
    ckpt = pretrain(cfg, _train_config(args, args.objective), task)
    save_checkpoint(ckpt, args.out)
    print(f"trained {args.task} teacher: eval_loss={ckpt.meta['eval_loss']}"
          + (f" exact_match={ckpt.meta['exact_match']}" if "exact_match" in ckpt.meta else ""))
    print(f"saved {args.out}")
    return 0


def cmd_convert(args) -> int:
    _merge_config(args, {"k_causal": None, "k_cross": None, "sites": "causal",
                         "keep_every_nth": None, "seed": None})
    ckpt = load_checkpoint(args.ckpt)
    sites = tuple(s.strip() for s in args.sites.split(",") if s.strip())
    out = swap_attention(
        ckpt, args.feature_map, sites=sites,
        k_causal=args.k_causal, k_cross=args.k_cross,
        keep_every_nth_from_top=args.keep_every_nth,
        seed=args.seed if args.seed is not None else _default_seed(),
    )
    save_checkpoint(out, args.out)
    n_linear = sum(k == "linear" for k in out.config.causal_kinds + out.config.cross_kinds)
    print(f"converted {n_linear} attention sites to linear ({args.feature_map}); saved {args.out}")
    return 0


def cmd_finetune(args) -> int:
    _merge_config(args, {**TASK_DEFAULTS, **TRAIN_DEFAULTS, "freeze_feature_maps": False})
    ckpt = load_checkpoint(args.ckpt)
    task = _build_task(args)
    objective = "seq2seq" if ckpt.config.seq2seq else "lm"
    out = finetune(ckpt, _train_config(args, objective, args.freeze_feature_maps), task)
    save_checkpoint(out, args.out)
    print(f"finetuned: eval_loss={out.meta['eval_loss']}; saved {args.out}")
    return 0


def cmd_generate(args) -> int:
    _merge_config(args, {"prompt": None, "prompt_ids": None, "steps": 32,
                         "mode": "recurrent", "src_ids": None})
    ckpt = load_checkpoint(args.ckpt)
    model = Model.from_checkpoint(ckpt)
    if args.prompt_ids:
        prompt = np.array(_ints(args.prompt_ids))
    elif args.prompt is not None:
        prompt = np.frombuffer(args.prompt.encode("utf-8"), dtype=np.uint8).astype(np.int64)
    else:
        raise ConfigError("generate needs --prompt or --prompt-ids")
    if ckpt.config.seq2seq:
        if not args.src_ids:
            raise ConfigError("seq2seq generation needs --src-ids")
        src = np.array(_ints(args.src_ids))
        tokens = generate_seq2seq(model, src, prompt, args.steps, mode=args.mode)
    else:
        tokens = generate(model, prompt, args.steps, mode=args.mode)
    print("tokens:", ",".join(str(t) for t in tokens))
    if ckpt.config.vocab == 256:
        print("text:", detokenize(tokens).decode("utf-8", errors="replace"))
    return 0


def cmd_eval(args) -> int:
    _merge_config(args, {"window": 128, "predict_last": 64, "max_windows": None})
    model = Model.from_checkpoint(load_checkpoint(args.ckpt))
    ids = load_corpus(args.corpus)
    ppl = eval_perplexity(model, ids, args.window, args.predict_last, max_windows=args.max_windows)
    print(f"perplexity={ppl:.4f} (window={args.window}, predict_last={args.predict_last})")
    return 0


def cmd_bench(args) -> int:
    _merge_config(args, {"mode": "recurrent", "lengths": "256,1024", "batch": 4,
                         "reps": 3, "no_plot": False, "model_name": None})
    model = Model.from_checkpoint(load_checkpoint(args.ckpt))
    name = args.model_name or os.path.basename(args.ckpt)
    lengths = _ints(args.lengths)
    rows = bench_speed(model, lengths, args.batch, args.reps, mode=args.mode, model_name=name)
    write_csv(args.out, BENCH_CSV_HEADER, rows)
    med = median_tokens_per_sec(rows)
    for length in lengths:
        print(f"length {length}: median {med[length]:.1f} tokens/sec")
    print(f"wrote {args.out}")
    if not args.no_plot:
        print(f"wrote {plots.plot_bench_speed(rows, _figure_path(args.out))}")
        print(f"wrote {plots.plot_bench_memory(rows, _figure_path(args.out, '_memory'))}")
    return 0


def cmd_analyze(args) -> int:
    _merge_config(args, {**TASK_DEFAULTS, "samples": 8, "no_plot": False})
    teacher_ckpt = load_checkpoint(args.teacher)
    teacher = Model.from_checkpoint(teacher_ckpt)
    task = _build_task(args)
    batch = task.eval_batch(args.samples)
    rows = []
    teacher_name = os.path.basename(args.teacher)
    for student_path in args.student:
        student_ckpt = load_checkpoint(student_path)
        student = Model.from_checkpoint(student_ckpt)
        layers = converted_layer_indices(student)
        t_trace = model_trace(teacher, batch.inputs, layers=layers)
        s_trace = model_trace(student, batch.inputs, layers=layers)
        mask = joint_valid_mask(t_trace, s_trace)  # drop relu-dead rows from both
        k = student.config.k_causal
        student_name = os.path.basename(student_path)
        n = batch.inputs.shape[0]
        rows.append({"model_a": teacher_name, "model_b": student_name, "k": k,
                     "metric": "distance", "value": f"{attention_distance(t_trace, s_trace, mask):.6f}",
                     "n_samples": n})
        rows.append({"model_a": student_name, "model_b": "", "k": k,
                     "metric": "entropy", "value": f"{attention_entropy(s_trace, mask):.6f}",
                     "n_samples": n})
    full_teacher_trace = model_trace(teacher, batch.inputs)
    rows.append({"model_a": teacher_name, "model_b": "", "k": 0,
                 "metric": "entropy", "value": f"{attention_entropy(full_teacher_trace):.6f}",
                 "n_samples": batch.inputs.shape[0]})
    write_csv(args.out, ANALYSIS_CSV_HEADER, rows)
    for row in rows:
        print(f"{row['metric']:>8} k={row['k']:>3} {row['model_a']} vs {row['model_b'] or '-'}: {row['value']}")
    print(f"wrote {args.out}")
    if not args.no_plot:
        print(f"wrote {plots.plot_analysis(rows, _figure_path(args.out))}")
    return 0


def cmd_matrix(args) -> int:
    _merge_config(args, {**TASK_DEFAULTS, **TRAIN_DEFAULTS,
                         "feature_maps": "mlp,elu,rfa", "inits": "pretrain,random",
                         "ks": "8,16,32", "k_cross": 0, "no_plot": False})
    teacher = load_checkpoint(args.teacher) if args.teacher else None
    if teacher is None:
        raise ConfigError("matrix needs --teacher (source architecture and pretrain cells)")
    task = _build_task(args)
    plan = []
    for fm in args.feature_maps.split(","):
        for init in args.inits.split(","):
            for k in _ints(args.ks):
                if fm == "elu" and k != teacher.config.head_dim:
                    continue  # elu is pinned to k == d; skip other sizes
                plan.append(MatrixCell(fm, init, k, args.k_cross))
    objective = "seq2seq" if teacher.config.seq2seq else "lm"
    rows = run_matrix(teacher.config, _train_config(args, objective), task, plan, teacher=teacher)
    write_csv(args.out, MATRIX_CSV_HEADER, rows)
    for row in rows:
        print(f"{row['cell_id']:>24}: {row['eval_metric']} ({row['status']})")
    print(f"wrote {args.out}")
    if not args.no_plot:
        print(f"wrote {plots.plot_matrix(rows, _figure_path(args.out))}")
    return 0


# --- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="t2r",
        description="Train toy transformers, swap attention for linear feature maps, "
                    "finetune, and serve constant-memory generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="pretrain a softmax-attention teacher")
    p.add_argument("--config")
    _task_flags(p)
    _train_flags(p)
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--head-dim", type=int, dest="head_dim")
    p.add_argument("--ffn-dim", type=int, dest="ffn_dim")
    p.add_argument("--max-positions", type=int, dest="max_positions")
    p.add_argument("--objective", choices=("lm", "seq2seq"))
    p.add_argument("--dropout", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="swap softmax attention for a linear feature map")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--feature-map", required=True, choices=("mlp", "elu", "rfa"), dest="feature_map")
    p.add_argument("--k-causal", type=int, dest="k_causal")
    p.add_argument("--k-cross", type=int, dest="k_cross")
    p.add_argument("--sites")
    p.add_argument("--keep-every-nth", type=int, dest="keep_every_nth")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("finetune", help="finetune a converted checkpoint")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    _task_flags(p)
    _train_flags(p)
    p.add_argument("--freeze-feature-maps", action="store_const", const=True,
                   dest="freeze_feature_maps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="greedy decoding from a checkpoint")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt")
    p.add_argument("--prompt-ids", dest="prompt_ids")
    p.add_argument("--src-ids", dest="src_ids")
    p.add_argument("--steps", type=int)
    p.add_argument("--mode", choices=("recurrent", "parallel"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="windowed perplexity on a corpus")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--predict-last", type=int, dest="predict_last")
    p.add_argument("--max-windows", type=int, dest="max_windows")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="tokens/sec and attention-state memory vs length")
    p.add_argument("--config")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", choices=("recurrent", "parallel"))
    p.add_argument("--lengths")
    p.add_argument("--batch", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--model-name", dest="model_name")
    p.add_argument("--no-plot", action="store_const", const=True, dest="no_plot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="attention distance/entropy against a teacher")
    p.add_argument("--config")
    p.add_argument("--teacher", required=True)
    p.add_argument("--student", required=True, nargs="+")
    _task_flags(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--no-plot", action="store_const", const=True, dest="no_plot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("matrix", help="feature-map x init x k experiment grid")
    p.add_argument("--config")
    p.add_argument("--teacher")
    _task_flags(p)
    _train_flags(p)
    p.add_argument("--feature-maps", dest="feature_maps")
    p.add_argument("--inits")
    p.add_argument("--ks")
    p.add_argument("--k-cross", type=int, dest="k_cross")
    p.add_argument("--no-plot", action="store_const", const=True, dest="no_plot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_matrix)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except T2RError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
