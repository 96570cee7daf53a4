"""Decoder-only language models and encoder-decoder sequence models.

Blocks are pre-norm residual: x + attn(norm(x)), then x + ffn(norm(x)).
Position embeddings are learned; the output head is the tied token embedding
unless configured otherwise. Encoders always use softmax self-attention; the
attention swap never touches them.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .attention import (
    AttentionKind,
    AttentionTrace,
    AttentionWeights,
    FeatureMapSpec,
    apply_feature_map,
    linear_attention_parallel,
    softmax_attention,
)
from .errors import ConfigError, ContractError, DimensionError, InputError
from .tensor import Tensor

VALID_KINDS = ("softmax", "linear")
VALID_FEATURE_KINDS = ("mlp", "elu", "rfa")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; model_dim is heads * head_dim."""

    n_layers: int
    heads: int
    head_dim: int
    ffn_dim: int
    vocab: int
    max_positions: int
    seq2seq: bool = False
    causal_kinds: tuple[str, ...] = ()
    cross_kinds: tuple[str, ...] = ()
    feature_kind: str = "mlp"
    k_causal: int = 0
    k_cross: int = 0
    dropout: float = 0.0
    label_smoothing: float = 0.0
    tie_embeddings: bool = True

    def __post_init__(self):
        if not self.causal_kinds:
            self.causal_kinds = ("softmax",) * self.n_layers
        if self.seq2seq and not self.cross_kinds:
            self.cross_kinds = ("softmax",) * self.n_layers
        self.causal_kinds = tuple(self.causal_kinds)
        self.cross_kinds = tuple(self.cross_kinds)
        if min(self.n_layers, self.heads, self.head_dim, self.ffn_dim, self.vocab, self.max_positions) < 1:
            raise ConfigError("all architecture dimensions must be >= 1")
        if len(self.causal_kinds) != self.n_layers:
            raise ConfigError(f"causal_kinds has {len(self.causal_kinds)} entries for {self.n_layers} layers")
        if self.seq2seq and len(self.cross_kinds) != self.n_layers:
            raise ConfigError(f"cross_kinds has {len(self.cross_kinds)} entries for {self.n_layers} layers")
        if not self.seq2seq and self.cross_kinds:
            raise ConfigError("cross_kinds given for a decoder-only model")
        for kind in self.causal_kinds + self.cross_kinds:
            if kind not in VALID_KINDS:
                raise ConfigError(f"unknown attention kind '{kind}'")
        if self.feature_kind not in VALID_FEATURE_KINDS:
            raise ConfigError(f"unknown feature map kind '{self.feature_kind}'")
        if "linear" in self.causal_kinds and self.k_causal < 1:
            raise ConfigError("k_causal must be >= 1 when causal attention is linear")
        if "linear" in self.cross_kinds and self.k_cross < 1:
            raise ConfigError("k_cross must be >= 1 when cross attention is linear")
        if self.feature_kind == "elu":
            if "linear" in self.causal_kinds and self.k_causal != self.head_dim:
                raise ConfigError("elu feature size is always the head dimension")
            if "linear" in self.cross_kinds and self.k_cross != self.head_dim:
                raise ConfigError("elu feature size is always the head dimension")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim

    def site_k(self, site: str) -> int:
        return self.k_causal if site == "causal" else self.k_cross

    # -- key=value serialization (checkpoint config block) --

    def to_lines(self) -> list[str]:
        out = []
        for key in ("n_layers", "heads", "head_dim", "ffn_dim", "vocab", "max_positions",
                    "seq2seq", "feature_kind", "k_causal", "k_cross", "dropout",
                    "label_smoothing", "tie_embeddings"):
            out.append(f"{key}={getattr(self, key)}")
        out.append("causal_kinds=" + ",".join(self.causal_kinds))
        if self.seq2seq:
            out.append("cross_kinds=" + ",".join(self.cross_kinds))
        return out

    @classmethod
    def from_lines(cls, lines: list[str]) -> "ModelConfig":
        kv: dict[str, str] = {}
        for line in lines:
            if not line.strip():
                continue
            if "=" not in line:
                raise ConfigError(f"malformed config line: {line!r}")
            key, _, val = line.partition("=")
            kv[key.strip()] = val.strip()
        try:
            return cls(
                n_layers=int(kv["n_layers"]),
                heads=int(kv["heads"]),
                head_dim=int(kv["head_dim"]),
                ffn_dim=int(kv["ffn_dim"]),
                vocab=int(kv["vocab"]),
                max_positions=int(kv["max_positions"]),
                seq2seq=kv.get("seq2seq", "False") == "True",
                causal_kinds=tuple(kv["causal_kinds"].split(",")) if kv.get("causal_kinds") else (),
                cross_kinds=tuple(kv["cross_kinds"].split(",")) if kv.get("cross_kinds") else (),
                feature_kind=kv.get("feature_kind", "mlp"),
                k_causal=int(kv.get("k_causal", 0)),
                k_cross=int(kv.get("k_cross", 0)),
                dropout=float(kv.get("dropout", 0.0)),
                label_smoothing=float(kv.get("label_smoothing", 0.0)),
                tie_embeddings=kv.get("tie_embeddings", "True") == "True",
            )
        except KeyError as e:
            raise ConfigError(f"config block missing key {e.args[0]!r}") from e


@dataclass
class Checkpoint:
    """A config, named float64 parameter arrays, and training metadata."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    meta: dict[str, str] = field(default_factory=dict)

    def clone(self) -> "Checkpoint":
        return Checkpoint(copy.deepcopy(self.config), {k: v.copy() for k, v in self.params.items()}, dict(self.meta))


# --- parameter registry ---------------------------------------------------------


def _attention_shapes(prefix: str, r: int, d: int, h: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.w_q": (r, d, h), f"{prefix}.w_k": (r, d, h), f"{prefix}.w_v": (r, d, h),
        f"{prefix}.b_q": (r, d), f"{prefix}.b_k": (r, d), f"{prefix}.b_v": (r, d),
        f"{prefix}.w_o": (h, h), f"{prefix}.b_o": (h,),
    }


def _feature_shapes(prefix: str, kind: str, r: int, k: int, d: int) -> dict[str, tuple[int, ...]]:
    if kind == "mlp":
        return {f"{prefix}.feat_w": (r, k, d), f"{prefix}.feat_b": (r, k)}
    if kind == "rfa":
        return {f"{prefix}.feat_proj": (r, k, d), f"{prefix}.feat_sigma": (r,)}
    return {}  # elu has no parameters


def expected_param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every named parameter the architecture owns, in persistence order."""
    r, d, h = cfg.heads, cfg.head_dim, cfg.model_dim
    shapes: dict[str, tuple[int, ...]] = {"embed": (cfg.vocab, h), "pos": (cfg.max_positions, h)}
    if cfg.seq2seq:
        shapes["pos_enc"] = (cfg.max_positions, h)
        for i in range(cfg.n_layers):
            p = f"enc.{i}"
            shapes.update({f"{p}.ln1.g": (h,), f"{p}.ln1.b": (h,)})
            shapes.update(_attention_shapes(f"{p}.attn", r, d, h))
            shapes.update({f"{p}.ln2.g": (h,), f"{p}.ln2.b": (h,),
                           f"{p}.ffn.w1": (cfg.ffn_dim, h), f"{p}.ffn.b1": (cfg.ffn_dim,),
                           f"{p}.ffn.w2": (h, cfg.ffn_dim), f"{p}.ffn.b2": (h,)})
        shapes.update({"enc_ln_f.g": (h,), "enc_ln_f.b": (h,)})
    for i in range(cfg.n_layers):
        p = f"dec.{i}"
        shapes.update({f"{p}.ln1.g": (h,), f"{p}.ln1.b": (h,)})
        shapes.update(_attention_shapes(f"{p}.attn", r, d, h))
        if cfg.causal_kinds[i] == "linear":
            shapes.update(_feature_shapes(f"{p}.attn", cfg.feature_kind, r, cfg.k_causal, d))
        if cfg.seq2seq:
            shapes.update({f"{p}.lnx.g": (h,), f"{p}.lnx.b": (h,)})
            shapes.update(_attention_shapes(f"{p}.xattn", r, d, h))
            if cfg.cross_kinds[i] == "linear":
                shapes.update(_feature_shapes(f"{p}.xattn", cfg.feature_kind, r, cfg.k_cross, d))
        shapes.update({f"{p}.ln2.g": (h,), f"{p}.ln2.b": (h,),
                       f"{p}.ffn.w1": (cfg.ffn_dim, h), f"{p}.ffn.b1": (cfg.ffn_dim,),
                       f"{p}.ffn.w2": (h, cfg.ffn_dim), f"{p}.ffn.b2": (h,)})
    shapes.update({"ln_f.g": (h,), "ln_f.b": (h,)})
    if not cfg.tie_embeddings:
        shapes["head"] = (cfg.vocab, h)
    return shapes


def is_buffer(name: str) -> bool:
    """Persisted but not trainable (fixed random projections)."""
    return name.endswith(".feat_proj")


def is_feature_param(name: str) -> bool:
    return ".feat_" in name


class Model:
    """A config plus named parameter tensors, shared by all forward paths."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = expected_param_shapes(config)
        missing = expected.keys() - params.keys()
        extra = params.keys() - expected.keys()
        if missing or extra:
            raise ConfigError(f"parameter set mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise DimensionError(f"parameter '{name}' has shape {params[name].shape}, expected {shape}")
        self.config = config
        self.params = params

    # -- construction --

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "Model":
        rng = np.random.default_rng(seed)
        h = config.model_dim
        params: dict[str, Tensor] = {}
        for name, shape in expected_param_shapes(config).items():
            if name.endswith((".g",)):
                data = np.ones(shape)
            elif name.endswith((".b", ".b1", ".b2", ".b_q", ".b_k", ".b_v", ".b_o", ".feat_b")):
                data = np.zeros(shape)
            elif name.endswith(".feat_w"):
                data = rng.standard_normal(shape) * config.head_dim ** -0.5
            elif name.endswith(".feat_proj"):
                data = rng.standard_normal(shape)
            elif name.endswith(".feat_sigma"):
                data = np.full(shape, config.head_dim ** 0.25)
            else:
                data = rng.standard_normal(shape) * h ** -0.5
            params[name] = Tensor(data, requires_grad=not is_buffer(name))
        return cls(config, params)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Model":
        params = {name: Tensor(arr.copy(), requires_grad=not is_buffer(name)) for name, arr in ckpt.params.items()}
        return cls(copy.deepcopy(ckpt.config), params)

    def to_checkpoint(self, meta: dict[str, str] | None = None) -> Checkpoint:
        return Checkpoint(copy.deepcopy(self.config), {k: v.data.copy() for k, v in self.params.items()}, dict(meta or {}))

    # -- views --

    def attention_weights(self, prefix: str) -> AttentionWeights:
        p = self.params
        return AttentionWeights(
            w_q=p[f"{prefix}.w_q"], w_k=p[f"{prefix}.w_k"], w_v=p[f"{prefix}.w_v"],
            b_q=p[f"{prefix}.b_q"], b_k=p[f"{prefix}.b_k"], b_v=p[f"{prefix}.b_v"],
            w_o=p[f"{prefix}.w_o"], b_o=p[f"{prefix}.b_o"],
        )

    def feature_spec(self, prefix: str, site: str) -> FeatureMapSpec:
        cfg = self.config
        k = cfg.site_k(site)
        names = _feature_shapes(prefix, cfg.feature_kind, cfg.heads, k, cfg.head_dim)
        tensors = {name.rsplit(".", 1)[-1]: self.params[name] for name in names}
        return FeatureMapSpec(cfg.feature_kind, k, cfg.head_dim, cfg.heads, tensors)

    def attention_kind(self, layer: int, site: str) -> AttentionKind:
        kinds = self.config.causal_kinds if site == "causal" else self.config.cross_kinds
        if kinds[layer] == "softmax":
            return AttentionKind("softmax")
        prefix = f"dec.{layer}." + ("attn" if site == "causal" else "xattn")
        return AttentionKind("linear", self.feature_spec(prefix, site))

    def trainable_params(self, freeze_feature_maps: bool = False) -> dict[str, Tensor]:
        out = {}
        for name, p in self.params.items():
            if not p.requires_grad:
                continue
            if freeze_feature_maps and is_feature_param(name):
                continue
            out[name] = p
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values() if p.requires_grad)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()


# --- forward passes ----------------------------------------------------------------


def _embed(model: Model, tokens: np.ndarray, pos_name: str, dropout_rng) -> Tensor:
    cfg = model.config
    b, n = tokens.shape
    if n > cfg.max_positions:
        raise InputError(f"sequence length {n} exceeds max positions {cfg.max_positions}")
    x = T.gather_rows(model.params["embed"], tokens.reshape(-1))
    x = T.reshape(x, (b, n, cfg.model_dim))
    pos = T.gather_rows(model.params[pos_name], np.arange(n))
    x = T.badd(x, pos)
    return _maybe_dropout(model, x, dropout_rng)


def _maybe_dropout(model: Model, x: Tensor, dropout_rng) -> Tensor:
    if dropout_rng is not None and model.config.dropout > 0.0:
        return T.dropout(x, model.config.dropout, dropout_rng)
    return x


def _ffn(model: Model, prefix: str, x: Tensor, dropout_rng) -> Tensor:
    b, n, h = x.shape
    p = model.params
    y = T.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"])
    flat = T.reshape(y, (b * n, h))
    hid = T.relu(T.add_bias(T.matmul(flat, T.transpose(p[f"{prefix}.ffn.w1"], (1, 0))), p[f"{prefix}.ffn.b1"]))
    out = T.add_bias(T.matmul(hid, T.transpose(p[f"{prefix}.ffn.w2"], (1, 0))), p[f"{prefix}.ffn.b2"])
    return T.add(x, _maybe_dropout(model, T.reshape(out, (b, n, h)), dropout_rng))


def _attention_sublayer(
    model: Model,
    prefix: str,
    kind: str,
    site: str,
    x_tgt: Tensor,
    x_src: Tensor,
    causal: bool,
    record_trace: bool,
) -> tuple[Tensor, AttentionTrace | None]:
    from .attention import project_qkv  # local import keeps module top small

    w = model.attention_weights(prefix)
    q, k, v = project_qkv(x_tgt, x_src, w)
    if kind == "softmax":
        return softmax_attention(q, k, v, causal=causal, w=w, record_trace=record_trace)
    spec = model.feature_spec(prefix, site)
    return linear_attention_parallel(
        apply_feature_map(spec, q), apply_feature_map(spec, k), v, causal=causal, w=w, record_trace=record_trace
    )


def _norm_tokens(tokens) -> tuple[np.ndarray, bool]:
    arr = np.asarray(tokens)
    if not np.issubdtype(arr.dtype, np.integer):
        raise InputError("tokens must be integers")
    if arr.ndim == 1:
        return arr[None, :], True
    if arr.ndim != 2:
        raise InputError(f"tokens must be 1-D or 2-D, got shape {arr.shape}")
    return arr, False


def lm_forward(model: Model, tokens, record_trace: bool = False, dropout_rng=None):
    """Causal logits for a token sequence; (N,) -> (N, V) or batched (B, N, V).

    With record_trace=True also returns the per-layer attention rows.
    """
    cfg = model.config
    if cfg.seq2seq:
        raise ContractError("lm_forward called on a seq2seq model")
    tokens2d, squeezed = _norm_tokens(tokens)
    x = _embed(model, tokens2d, "pos", dropout_rng)
    traces: list[AttentionTrace] = []
    for i in range(cfg.n_layers):
        p = f"dec.{i}"
        a_in = T.layer_norm(x, model.params[f"{p}.ln1.g"], model.params[f"{p}.ln1.b"])
        out, tr = _attention_sublayer(model, f"{p}.attn", cfg.causal_kinds[i], "causal",
                                      a_in, a_in, causal=True, record_trace=record_trace)
        if tr is not None:
            traces.append(tr.layers[0])
        x = T.add(x, _maybe_dropout(model, out, dropout_rng))
        x = _ffn(model, p, x, dropout_rng)
    x = T.layer_norm(x, model.params["ln_f.g"], model.params["ln_f.b"])
    logits = _output_logits(model, x)
    if squeezed:
        logits = T.reshape(logits, logits.shape[1:])
    if record_trace:
        return logits, AttentionTrace(traces)
    return logits


def _output_logits(model: Model, x: Tensor) -> Tensor:
    b, n, h = x.shape
    table = model.params["embed"] if model.config.tie_embeddings else model.params["head"]
    flat = T.matmul(T.reshape(x, (b * n, h)), T.transpose(table, (1, 0)))
    return T.reshape(flat, (b, n, model.config.vocab))


def encode(model: Model, src, record_trace: bool = False, dropout_rng=None):
    """Encoder stack: bidirectional softmax self-attention over source tokens."""
    cfg = model.config
    src2d, squeezed = _norm_tokens(src)
    if src2d.shape[1] == 0:
        raise InputError("source sequence is empty")
    x = _embed(model, src2d, "pos_enc", dropout_rng)
    traces: list[AttentionTrace] = []
    for i in range(cfg.n_layers):
        p = f"enc.{i}"
        a_in = T.layer_norm(x, model.params[f"{p}.ln1.g"], model.params[f"{p}.ln1.b"])
        out, tr = _attention_sublayer(model, f"{p}.attn", "softmax", "causal",
                                      a_in, a_in, causal=False, record_trace=record_trace)
        if tr is not None:
            traces.append(tr.layers[0])
        x = T.add(x, _maybe_dropout(model, out, dropout_rng))
        x = _ffn(model, p, x, dropout_rng)
    x = T.layer_norm(x, model.params["enc_ln_f.g"], model.params["enc_ln_f.b"])
    return (T.reshape(x, x.shape[1:]) if squeezed else x), AttentionTrace(traces)


def seq2seq_forward(model: Model, src, tgt, record_trace: bool = False, dropout_rng=None):
    """Decoder logits over target positions given source tokens.

    The encoder always runs softmax attention; decoder causal and cross sites
    follow the configured kinds. Traces, when requested, hold the decoder
    causal rows followed by the cross rows, per layer.
    """
    cfg = model.config
    if not cfg.seq2seq:
        raise ContractError("seq2seq_forward called on a decoder-only model")
    tgt2d, squeezed = _norm_tokens(tgt)
    memory, _ = encode(model, src, dropout_rng=dropout_rng)
    if memory.ndim == 2:
        memory = T.reshape(memory, (1,) + memory.shape)
    if memory.shape[0] == 1 and tgt2d.shape[0] > 1:
        raise ContractError("batched targets need batched sources")
    x = _embed(model, tgt2d, "pos", dropout_rng)
    causal_rows: list[np.ndarray] = []
    cross_rows: list[np.ndarray] = []
    for i in range(cfg.n_layers):
        p = f"dec.{i}"
        a_in = T.layer_norm(x, model.params[f"{p}.ln1.g"], model.params[f"{p}.ln1.b"])
        out, tr = _attention_sublayer(model, f"{p}.attn", cfg.causal_kinds[i], "causal",
                                      a_in, a_in, causal=True, record_trace=record_trace)
        if tr is not None:
            causal_rows.append(tr.layers[0])
        x = T.add(x, _maybe_dropout(model, out, dropout_rng))
        x_in = T.layer_norm(x, model.params[f"{p}.lnx.g"], model.params[f"{p}.lnx.b"])
        out, tr = _attention_sublayer(model, f"{p}.xattn", cfg.cross_kinds[i], "cross",
                                      x_in, memory, causal=False, record_trace=record_trace)
        if tr is not None:
            cross_rows.append(tr.layers[0])
        x = T.add(x, _maybe_dropout(model, out, dropout_rng))
        x = _ffn(model, p, x, dropout_rng)
    x = T.layer_norm(x, model.params["ln_f.g"], model.params["ln_f.b"])
    logits = _output_logits(model, x)
    if squeezed:
        logits = T.reshape(logits, logits.shape[1:])
    if record_trace:
        return logits, AttentionTrace(causal_rows), AttentionTrace(cross_rows)
    return logits


# --- conversion -----------------------------------------------------------------


def kept_layers_from_top(n_layers: int, keep_every_nth: int | None) -> set[int]:
    """Bottom-indexed layers kept as softmax; counts 0-based from the top layer."""
    if keep_every_nth is None:
        return set()
    if keep_every_nth <= 0:
        raise ConfigError(f"keep_every_nth must be positive, got {keep_every_nth}")
    return {n_layers - 1 - t for t in range(0, n_layers, keep_every_nth)}


def swap_attention(
    ckpt: Checkpoint,
    feature_kind: str,
    sites: tuple[str, ...] = ("causal",),
    k_causal: int | None = None,
    k_cross: int | None = None,
    keep_every_nth_from_top: int | None = None,
    seed: int = 0,
) -> Checkpoint:
    """Replace softmax attention at the selected sites with linear attention.

    All existing parameters are copied verbatim; only fresh feature-map
    parameters are added. Returns a new checkpoint; the input is not mutated.
    """
    cfg = ckpt.config
    for site in sites:
        if site not in ("causal", "cross"):
            raise ConfigError(f"unknown swap site '{site}'")
        if site == "cross" and not cfg.seq2seq:
            raise ConfigError("cross-attention swap requested for a decoder-only model")
    if "linear" in cfg.causal_kinds + cfg.cross_kinds:
        raise ContractError("checkpoint already contains linear attention sites")
    if feature_kind not in VALID_FEATURE_KINDS:
        raise ConfigError(f"unknown feature map kind '{feature_kind}'")
    kept = kept_layers_from_top(cfg.n_layers, keep_every_nth_from_top)
    new_causal = tuple(
        "linear" if ("causal" in sites and i not in kept) else "softmax" for i in range(cfg.n_layers)
    )
    new_cross = tuple(
        "linear" if ("cross" in sites and i not in kept) else "softmax" for i in range(cfg.n_layers)
    ) if cfg.seq2seq else ()
    if feature_kind == "elu":
        k_causal = cfg.head_dim if "causal" in sites else k_causal
        k_cross = cfg.head_dim if "cross" in sites else k_cross
    new_cfg = replace(
        ckpt.config,
        causal_kinds=new_causal,
        cross_kinds=new_cross,
        feature_kind=feature_kind,
        k_causal=int(k_causal or 0),
        k_cross=int(k_cross or 0),
    )
    rng = np.random.default_rng(seed)
    params = {k: v.copy() for k, v in ckpt.params.items()}
    for i in range(cfg.n_layers):
        for site, kinds in (("causal", new_cfg.causal_kinds), ("cross", new_cfg.cross_kinds)):
            if not kinds or kinds[i] != "linear":
                continue
            prefix = f"dec.{i}." + ("attn" if site == "causal" else "xattn")
            k = new_cfg.site_k(site)
            if feature_kind == "mlp":
                params[f"{prefix}.feat_w"] = rng.standard_normal((cfg.heads, k, cfg.head_dim)) * cfg.head_dim ** -0.5
                params[f"{prefix}.feat_b"] = np.zeros((cfg.heads, k))
            elif feature_kind == "rfa":
                params[f"{prefix}.feat_proj"] = rng.standard_normal((cfg.heads, k, cfg.head_dim))
                params[f"{prefix}.feat_sigma"] = np.full(cfg.heads, cfg.head_dim ** 0.25)
    meta = dict(ckpt.meta)
    meta["converted_from"] = meta.get("objective", "")
    meta["swap_seed"] = str(seed)
    out = Checkpoint(new_cfg, params, meta)
    Model.from_checkpoint(out)  # shape-validate eagerly
    return out


def feature_param_delta(cfg: ModelConfig, feature_kind: str, k: int) -> int:
    """Learnable parameters added per converted attention site."""
    if feature_kind == "mlp":
        return cfg.heads * k * (cfg.head_dim + 1)
    if feature_kind == "rfa":
        return cfg.heads  # only the temperatures learn; the projection is fixed
    return 0
