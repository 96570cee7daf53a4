"""Synthetic training tasks and the character-level corpus task.

All sampling is deterministic given a Generator; evaluation sets are frozen at
task construction so eval losses are comparable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

SEP = 0  # separator/query marker shared by the symbolic tasks

TASK_KINDS = ("copy", "reverse", "lookup", "char-lm")


@dataclass
class Batch:
    """Teacher-forcing inputs/targets plus per-position loss weights."""

    inputs: np.ndarray  # (B, N) int64
    targets: np.ndarray  # (B, N) int64
    weights: np.ndarray | None = None  # (B, N) float64, 1.0 where the loss counts


class SyntheticTask:
    """Deterministic data source for one task kind.

    copy/reverse: [payload, SEP, payload-or-reversed]; loss on the second half.
    lookup: key/value pairs, then SEP and a query key; loss on the answer.
    char-lm: byte windows from a corpus, 90/10 train/eval split.
    """

    def __init__(self, kind: str, seq_len: int, vocab: int,
                 corpus: np.ndarray | None = None, eval_seed: int = 20_2020):
        if kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind '{kind}'")
        if seq_len < 1:
            raise ConfigError("sequence length must be >= 1")
        self.kind = kind
        self.seq_len = seq_len
        self.vocab = vocab
        self.eval_seed = eval_seed
        if kind == "lookup":
            n_keys = (vocab - 1) // 2
            if n_keys < seq_len:
                raise ConfigError(f"lookup needs vocab >= 2*pairs+1, got vocab={vocab} for {seq_len} pairs")
            self.n_keys = n_keys
        if kind == "char-lm":
            if corpus is None:
                raise ConfigError("char-lm task needs a corpus")
            if vocab != 256:
                raise ConfigError("char-lm uses the byte vocabulary (256)")
            corpus = np.asarray(corpus, dtype=np.int64)
            if corpus.size < 4 * (seq_len + 1):
                raise InputError(f"corpus of {corpus.size} tokens is too small for window {seq_len}")
            split = int(corpus.size * 0.9)
            self.train_ids = corpus[:split]
            self.eval_ids = corpus[split:]
        else:
            if vocab < 3:
                raise ConfigError("symbolic tasks need vocab >= 3")

    # -- geometry --

    @property
    def sample_length(self) -> int:
        """Input positions per training sample."""
        if self.kind in ("copy", "reverse"):
            return 2 * self.seq_len  # sequence has 2P+1 tokens -> 2P input positions
        if self.kind == "lookup":
            return 2 * self.seq_len + 2  # pairs, SEP, query -> predicts the answer
        return self.seq_len

    # -- sampling --

    def _symbolic_sequences(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind in ("copy", "reverse"):
            p = self.seq_len
            payload = rng.integers(1, self.vocab, size=(n, p))
            second = payload[:, ::-1] if self.kind == "reverse" else payload
            sep = np.full((n, 1), SEP)
            return np.concatenate([payload, sep, second], axis=1)
        # lookup: per-sample random key->value map, distinct keys
        p = self.seq_len
        seqs = np.zeros((n, 2 * p + 3), dtype=np.int64)
        for row in range(n):
            keys = rng.choice(np.arange(1, self.n_keys + 1), size=p, replace=False)
            values = rng.integers(self.n_keys + 1, 2 * self.n_keys + 1, size=p)
            qi = rng.integers(0, p)
            seqs[row, 0 : 2 * p : 2] = keys
            seqs[row, 1 : 2 * p + 1 : 2] = values
            seqs[row, 2 * p] = SEP
            seqs[row, 2 * p + 1] = keys[qi]
            seqs[row, 2 * p + 2] = values[qi]
        return seqs

    def _loss_weights(self, n: int) -> np.ndarray:
        length = self.sample_length
        w = np.zeros((n, length))
        if self.kind in ("copy", "reverse"):
            w[:, self.seq_len :] = 1.0  # positions predicting the second half
        else:
            w[:, -1] = 1.0  # only the answer position
        return w

    def sample_batch(self, rng: np.random.Generator, n: int) -> Batch:
        if self.kind == "char-lm":
            starts = rng.integers(0, self.train_ids.size - self.seq_len - 1, size=n)
            idx = starts[:, None] + np.arange(self.seq_len + 1)
            windows = self.train_ids[idx]
            return Batch(windows[:, :-1], windows[:, 1:])
        seqs = self._symbolic_sequences(rng, n)
        return Batch(seqs[:, :-1], seqs[:, 1:], self._loss_weights(n))

    def eval_batch(self, n: int) -> Batch:
        """Frozen evaluation data, identical across calls."""
        if self.kind == "char-lm":
            stride = self.seq_len + 1
            max_windows = (self.eval_ids.size - 1) // stride
            n = min(n, max_windows)
            idx = (np.arange(n) * stride)[:, None] + np.arange(stride)
            windows = self.eval_ids[idx]
            return Batch(windows[:, :-1], windows[:, 1:])
        return self.sample_batch(np.random.default_rng(self.eval_seed), n)

    def prompt_and_answer(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Prompts whose greedy continuation has an exact expected answer."""
        if self.kind == "char-lm":
            raise ConfigError("char-lm has no exact-match protocol")
        seqs = self._symbolic_sequences(rng, n)
        if self.kind in ("copy", "reverse"):
            cut = self.seq_len + 1  # payload plus separator
        else:
            cut = 2 * self.seq_len + 2  # pairs, SEP, query key
        return seqs[:, :cut], seqs[:, cut:]

    # -- sequence-to-sequence views (copy/reverse only) --

    def _as_seq2seq(self, seqs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.kind not in ("copy", "reverse"):
            raise ConfigError(f"task '{self.kind}' has no seq2seq form")
        p = self.seq_len
        src = seqs[:, :p]
        out = seqs[:, p + 1 :]
        tgt_in = np.concatenate([np.full((seqs.shape[0], 1), SEP), out[:, :-1]], axis=1)
        return src, tgt_in, out

    def sample_seq2seq(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._as_seq2seq(self._symbolic_sequences(rng, n))

    def eval_seq2seq(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._as_seq2seq(self._symbolic_sequences(np.random.default_rng(self.eval_seed), n))


def load_corpus_task(path: str, window: int) -> SyntheticTask:
    from .io import load_corpus

    return SyntheticTask("char-lm", window, 256, corpus=load_corpus(path))


# --- synthetic corpus ------------------------------------------------------------

_CONSONANTS = list("bcdfghjklmnprstvwz")
_VOWELS = list("aeiou")


def _word_list(rng: np.random.Generator, n_words: int) -> list[str]:
    words = set()
    while len(words) < n_words:
        syllables = rng.integers(1, 4)
        word = ""
        for _ in range(syllables):
            word += rng.choice(_CONSONANTS) + rng.choice(_VOWELS)
            if rng.random() < 0.3:
                word += rng.choice(_CONSONANTS)
        words.add(word)
    return sorted(words)


def synthetic_text(n_bytes: int, seed: int = 0) -> bytes:
    """Deterministic pseudo-prose with word, sentence, and paragraph structure.

    Each paragraph reuses a couple of topic words, so context beyond the
    current word helps prediction.
    """
    rng = np.random.default_rng(seed)
    words = _word_list(rng, 1200)
    ranks = np.arange(1, len(words) + 1, dtype=np.float64)
    zipf = (1.0 / ranks) / (1.0 / ranks).sum()
    chunks: list[str] = []
    total = 0
    while total < n_bytes:
        topics = rng.choice(len(words), size=2, replace=False, p=zipf)
        sentences = []
        for _ in range(int(rng.integers(3, 9))):
            n_w = int(rng.integers(4, 13))
            toks = []
            for _ in range(n_w):
                if rng.random() < 0.25:
                    toks.append(words[int(rng.choice(topics))])
                else:
                    toks.append(words[int(rng.choice(len(words), p=zipf))])
            sentence = " ".join(toks)
            sentences.append(sentence[0].upper() + sentence[1:] + ".")
        para = " ".join(sentences) + "\n\n"
        chunks.append(para)
        total += len(para)
    return "".join(chunks).encode("ascii")[:n_bytes]
