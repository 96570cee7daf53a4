"""Checkpoint persistence: bit-exact round trips and fail-closed loading."""

import os

import numpy as np
import pytest
from helpers import tiny_linear_lm, tiny_lm

from t2r.errors import CorruptionError, InputError, ValidationError
from t2r.io import detokenize, load_checkpoint, load_corpus, save_checkpoint
from t2r.model import Model


@pytest.fixture()
def ckpt_path(tmp_path):
    return str(tmp_path / "model.t2r")


def test_roundtrip_bitwise(ckpt_path):
    model = tiny_linear_lm(seed=1, feature_kind="rfa", k=4)
    ckpt = model.to_checkpoint({"step": "12", "seed": "1", "objective": "lm"})
    save_checkpoint(ckpt, ckpt_path)
    loaded = load_checkpoint(ckpt_path)
    assert loaded.config == ckpt.config
    assert loaded.meta == ckpt.meta
    assert set(loaded.params) == set(ckpt.params)
    for name, arr in ckpt.params.items():
        assert np.array_equal(arr, loaded.params[name]), name
    # save the loaded copy again: byte-identical files
    second = str(ckpt_path) + ".2"
    save_checkpoint(loaded, second)
    with open(ckpt_path, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()


def test_missing_file_names_path():
    with pytest.raises(InputError, match="missing.t2r"):
        load_checkpoint("missing.t2r")


def test_bad_magic_rejected(ckpt_path):
    model = tiny_lm(seed=2)
    save_checkpoint(model.to_checkpoint(), ckpt_path)
    with open(ckpt_path, "r+b") as f:
        f.write(b"XXXX")
    with pytest.raises(ValidationError, match="magic"):
        load_checkpoint(ckpt_path)


def test_unknown_version_rejected(ckpt_path):
    model = tiny_lm(seed=2)
    save_checkpoint(model.to_checkpoint(), ckpt_path)
    with open(ckpt_path, "r+b") as f:
        f.seek(4)
        f.write((99).to_bytes(4, "little"))
    with pytest.raises(ValidationError, match="version"):
        load_checkpoint(ckpt_path)


def test_truncated_file_corruption_with_offset(ckpt_path):
    model = tiny_lm(seed=3)
    save_checkpoint(model.to_checkpoint(), ckpt_path)
    size = os.path.getsize(ckpt_path)
    with open(ckpt_path, "r+b") as f:
        f.truncate(size - 17)
    with pytest.raises(CorruptionError, match="byte offset"):
        load_checkpoint(ckpt_path)


def test_flipped_directory_byte_fails_closed(ckpt_path):
    model = tiny_lm(seed=4)
    save_checkpoint(model.to_checkpoint(), ckpt_path)
    with open(ckpt_path, "rb") as f:
        blob = bytearray(f.read())
    # flip one byte inside a tensor name in the directory
    idx = blob.find(b"dec.0.attn.w_q")
    assert idx > 0
    blob[idx] = ord("X")
    with open(ckpt_path, "wb") as f:
        f.write(blob)
    with pytest.raises((ValidationError, CorruptionError)):
        load_checkpoint(ckpt_path)


def test_trailing_garbage_rejected(ckpt_path):
    model = tiny_lm(seed=5)
    save_checkpoint(model.to_checkpoint(), ckpt_path)
    with open(ckpt_path, "ab") as f:
        f.write(b"\x00\x01")
    with pytest.raises(CorruptionError, match="trailing"):
        load_checkpoint(ckpt_path)


def test_non_finite_tensor_rejected(ckpt_path):
    model = tiny_lm(seed=6)
    ckpt = model.to_checkpoint()
    ckpt.params["ln_f.g"][0] = np.nan
    save_checkpoint(ckpt, ckpt_path)
    with pytest.raises(ValidationError, match="non-finite"):
        load_checkpoint(ckpt_path)


def test_no_temp_files_left_behind(tmp_path):
    model = tiny_lm(seed=7)
    path = tmp_path / "a.t2r"
    save_checkpoint(model.to_checkpoint(), str(path))
    leftovers = [p for p in os.listdir(tmp_path) if p.startswith(".t2r-tmp")]
    assert leftovers == []
    assert Model.from_checkpoint(load_checkpoint(str(path))) is not None


# --- corpus --------------------------------------------------------------------


def test_corpus_byte_identity(tmp_path):
    path = tmp_path / "c.txt"
    path.write_bytes(b"abc")
    assert load_corpus(str(path)).tolist() == [97, 98, 99]


def test_corpus_length(tmp_path):
    path = tmp_path / "c.bin"
    payload = bytes(range(256)) * 3
    path.write_bytes(payload)
    assert load_corpus(str(path)).size == len(payload)


def test_corpus_roundtrip(tmp_path):
    path = tmp_path / "c.bin"
    payload = bytes([0, 255, 10, 13, 127]) * 7
    path.write_bytes(payload)
    assert detokenize(load_corpus(str(path))) == payload


def test_empty_corpus_rejected(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_bytes(b"")
    with pytest.raises(InputError, match="empty"):
        load_corpus(str(path))


def test_missing_corpus_names_path():
    with pytest.raises(InputError, match="nowhere.txt"):
        load_corpus("nowhere.txt")
