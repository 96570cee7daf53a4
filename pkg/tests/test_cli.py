"""CLI surface: exit codes, end-to-end pipeline, schemas, figures."""

import csv
import os

import numpy as np
import pytest

from t2r.bench import BENCH_CSV_HEADER
from t2r.cli import main
from t2r.io import load_checkpoint, save_checkpoint
from t2r.training import MATRIX_CSV_HEADER


def run(argv):
    return main(argv)


def test_eval_missing_checkpoint_exit_1_names_path(capsys):
    code = run(["eval", "--ckpt", "missing.t2r", "--corpus", "also-missing.txt"])
    assert code == 1
    assert "missing.t2r" in capsys.readouterr().err


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        run(["train", "--does-not-exist", "1", "--out", "x.t2r"])
    assert e.value.code == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        run(["frobnicate"])
    assert e.value.code == 2


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, copy_teacher):
    """A directory with teacher, converted, and finetuned checkpoints on disk."""
    d = tmp_path_factory.mktemp("cli")
    save_checkpoint(copy_teacher, str(d / "teacher.t2r"))
    assert run(["convert", "--ckpt", f"{d}/teacher.t2r", "--feature-map", "mlp",
                "--k-causal", "8", "--out", f"{d}/converted.t2r"]) == 0
    assert run(["finetune", "--ckpt", f"{d}/converted.t2r", "--task", "copy",
                "--seq-len", "8", "--task-vocab", "16", "--steps", "30",
                "--batch-tokens", "256", "--lr", "0.0005", "--warmup", "5",
                "--seed", "1", "--out", f"{d}/student.t2r"]) == 0
    return d


def test_convert_then_finetune_end_to_end(workdir, capsys):
    d = str(workdir)
    code = run(["finetune", "--ckpt", f"{d}/converted.t2r", "--task", "copy",
                "--seq-len", "8", "--task-vocab", "16", "--steps", "5",
                "--batch-tokens", "256", "--lr", "0.0005", "--warmup", "2",
                "--seed", "1", "--out", f"{d}/student2.t2r"])
    assert code == 0
    out = capsys.readouterr().out
    assert "eval_loss" in out
    student = load_checkpoint(f"{d}/student2.t2r")
    assert "linear" in student.config.causal_kinds
    assert student.meta["step"] == "5"


def test_generate_command_prompt_ids(workdir, capsys):
    d = str(workdir)
    code = run(["generate", "--ckpt", f"{d}/teacher.t2r",
                "--prompt-ids", "3,5,7,9,11,13,2,4,0", "--steps", "8", "--mode", "recurrent"])
    assert code == 0
    out = capsys.readouterr().out
    # the copy teacher reproduces the payload after the separator
    assert "3,5,7,9,11,13,2,4" in out


def test_generate_modes_agree_via_cli(workdir, capsys):
    d = str(workdir)
    run(["generate", "--ckpt", f"{d}/teacher.t2r", "--prompt-ids", "1,2,3,0", "--steps", "6",
         "--mode", "recurrent"])
    rec = capsys.readouterr().out
    run(["generate", "--ckpt", f"{d}/teacher.t2r", "--prompt-ids", "1,2,3,0", "--steps", "6",
         "--mode", "parallel"])
    par = capsys.readouterr().out
    assert rec == par


def test_bench_csv_schema_and_figures(workdir):
    d = str(workdir)
    run(["convert", "--ckpt", f"{d}/teacher.t2r", "--feature-map", "mlp",
         "--k-causal", "4", "--out", f"{d}/b.t2r"])
    code = run(["bench", "--ckpt", f"{d}/b.t2r", "--mode", "recurrent",
                "--lengths", "8,16", "--batch", "1", "--reps", "3",
                "--out", f"{d}/bench.csv"])
    assert code == 0
    with open(f"{d}/bench.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == BENCH_CSV_HEADER
    assert len(rows) == 1 + 2 * 3  # two lengths, three kept reps each
    assert os.path.exists(f"{d}/bench.png")
    assert os.path.exists(f"{d}/bench_memory.png")


def test_bench_no_plot_skips_figures(workdir):
    d = str(workdir)
    code = run(["bench", "--ckpt", f"{d}/b.t2r", "--mode", "recurrent",
                "--lengths", "8", "--batch", "1", "--reps", "3", "--no-plot",
                "--out", f"{d}/bench2.csv"])
    assert code == 0
    assert os.path.exists(f"{d}/bench2.csv")
    assert not os.path.exists(f"{d}/bench2.png")


def test_analyze_csv_schema(workdir):
    d = str(workdir)
    code = run(["analyze", "--teacher", f"{d}/teacher.t2r", "--student", f"{d}/student.t2r",
                "--task", "copy", "--seq-len", "8", "--task-vocab", "16",
                "--samples", "4", "--out", f"{d}/analysis.csv"])
    assert code == 0
    with open(f"{d}/analysis.csv") as f:
        rows = list(csv.DictReader(f))
    metrics = {r["metric"] for r in rows}
    assert metrics == {"distance", "entropy"}
    assert all(np.isfinite(float(r["value"])) for r in rows)
    assert os.path.exists(f"{d}/analysis.png")


def test_matrix_cli_one_cell(workdir):
    d = str(workdir)
    code = run(["matrix", "--teacher", f"{d}/teacher.t2r", "--task", "copy",
                "--seq-len", "8", "--task-vocab", "16", "--feature-maps", "mlp",
                "--inits", "random", "--ks", "4", "--steps", "8",
                "--batch-tokens", "256", "--lr", "0.001", "--warmup", "2",
                "--seed", "0", "--out", f"{d}/matrix.csv"])
    assert code == 0
    with open(f"{d}/matrix.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == MATRIX_CSV_HEADER
    assert len(rows) == 2
    assert os.path.exists(f"{d}/matrix.png")


def test_config_file_supplies_flags_explicit_wins(workdir, tmp_path):
    d = str(workdir)
    cfg = tmp_path / "ft.cfg"
    cfg.write_text("steps=4\nbatch-tokens=256\nlr=0.0005\nwarmup=1\nseed=3\n")
    code = run(["finetune", "--ckpt", f"{d}/converted.t2r", "--task", "copy",
                "--seq-len", "8", "--task-vocab", "16", "--config", str(cfg),
                "--out", f"{d}/ft_a.t2r"])
    assert code == 0
    assert load_checkpoint(f"{d}/ft_a.t2r").meta["step"] == "4"
    code = run(["finetune", "--ckpt", f"{d}/converted.t2r", "--task", "copy",
                "--seq-len", "8", "--task-vocab", "16", "--config", str(cfg),
                "--steps", "6", "--out", f"{d}/ft_b.t2r"])
    assert code == 0
    assert load_checkpoint(f"{d}/ft_b.t2r").meta["step"] == "6"


def test_seed_env_override(workdir, monkeypatch, tmp_path):
    d = str(workdir)
    monkeypatch.setenv("T2R_SEED", "41")
    out = str(tmp_path / "env.t2r")
    code = run(["finetune", "--ckpt", f"{d}/converted.t2r", "--task", "copy",
                "--seq-len", "8", "--task-vocab", "16", "--steps", "3",
                "--batch-tokens", "256", "--lr", "0.0005", "--warmup", "1",
                "--out", out])
    assert code == 0
    assert load_checkpoint(out).meta["seed"] == "41"


def test_cli_reproducible_checkpoints(workdir, tmp_path):
    d = str(workdir)
    args = ["finetune", "--ckpt", f"{d}/converted.t2r", "--task", "copy",
            "--seq-len", "8", "--task-vocab", "16", "--steps", "5",
            "--batch-tokens", "256", "--lr", "0.0005", "--warmup", "1", "--seed", "2"]
    a, b = str(tmp_path / "a.t2r"), str(tmp_path / "b.t2r")
    assert run(args + ["--out", a]) == 0
    assert run(args + ["--out", b]) == 0
    ca, cb = load_checkpoint(a), load_checkpoint(b)
    for name in ca.params:
        assert np.array_equal(ca.params[name], cb.params[name])


def test_train_char_lm_and_eval(tmp_path, small_corpus_path):
    out = str(tmp_path / "char.t2r")
    code = run(["train", "--task", "char-lm", "--corpus", small_corpus_path,
                "--seq-len", "32", "--layers", "1", "--heads", "2", "--head-dim", "8",
                "--ffn-dim", "32", "--steps", "30", "--batch-tokens", "256",
                "--lr", "0.002", "--warmup", "5", "--seed", "0", "--out", out])
    assert code == 0
    code = run(["eval", "--ckpt", out, "--corpus", small_corpus_path,
                "--window", "32", "--predict-last", "16", "--max-windows", "20"])
    assert code == 0
