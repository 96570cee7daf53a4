"""Constant-memory autoregressive decoding.

Linear-attention sites keep a running (k x d, k) state per head; softmax sites
(the teacher, or kept layers in hybrid models) keep a growing key/value cache.
For mlp feature maps the projection is merged once per decode so q/k are never
materialized. The decode step math mirrors the parallel forward pass exactly;
the equivalence suite pins the two paths to 1e-10.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attention import EPS_DENOM, AttentionWeights, FeatureMapSpec
from .errors import ConfigError, ContractError, DimensionError, InputError
from .model import Model, lm_forward, seq2seq_forward, encode
from . import tensor as T

LN_EPS = 1e-5


@dataclass
class RecurrentState:
    """Running sums of feature/value outer products (s) and features (z)."""

    s: np.ndarray  # (B, heads, k, d)
    z: np.ndarray  # (B, heads, k)
    step: int = 0

    @classmethod
    def zeros(cls, batch: int, heads: int, feature_size: int, head_dim: int) -> "RecurrentState":
        return cls(np.zeros((batch, heads, feature_size, head_dim)), np.zeros((batch, heads, feature_size)))

    def element_count(self) -> int:
        return self.s.size + self.z.size

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.s.copy(), self.z.copy(), self.step)


def _norm_heads(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, None, :]
    if x.ndim == 2:
        return x[None, :, :]
    if x.ndim == 3:
        return x
    raise DimensionError(f"{what} must have rank 1..3, got shape {x.shape}")


def state_update(st: RecurrentState, phi_k: np.ndarray, v: np.ndarray) -> RecurrentState:
    """Accumulate one position: s += phi_k outer v, z += phi_k. In place."""
    pk = _norm_heads(phi_k, "phi_k")
    vv = _norm_heads(v, "v")
    if pk.shape[:2] != st.z.shape[:2] or pk.shape[-1] != st.z.shape[-1]:
        raise DimensionError(f"phi_k {phi_k.shape} does not match state {st.z.shape}")
    if vv.shape[-1] != st.s.shape[-1]:
        raise DimensionError(f"v {v.shape} does not match state {st.s.shape}")
    st.s += pk[..., :, None] * vv[..., None, :]
    st.z += pk
    st.step += 1
    return st


def readout(st: RecurrentState, phi_q: np.ndarray) -> np.ndarray:
    """Attention output for one query against the accumulated state.

    Returns (B, heads, d); collapses to the input's rank. The denominator is
    guarded by max(., EPS_DENOM), matching the parallel path.
    """
    if st.step < 1:
        raise ContractError("readout from an empty context (state step is 0)")
    pq = _norm_heads(phi_q, "phi_q")
    num = (pq[..., :, None] * st.s).sum(axis=2)
    den = np.maximum((pq * st.z).sum(axis=-1), EPS_DENOM)
    out = num / den[..., None]
    if np.asarray(phi_q).ndim == 1:
        return out[0, 0]
    if np.asarray(phi_q).ndim == 2:
        return out[0]
    return out


def precompute_cross_state(phi_k_src: np.ndarray, v_src: np.ndarray) -> RecurrentState:
    """Sum source-side features once; the state is then shared for the decode."""
    pk = np.asarray(phi_k_src, dtype=np.float64)
    vv = np.asarray(v_src, dtype=np.float64)
    if pk.ndim == 3:
        pk, vv = pk[None], vv[None]
    if pk.ndim != 4 or vv.ndim != 4:
        raise DimensionError(f"expected (B, heads, M, k)/(B, heads, M, d), got {phi_k_src.shape}/{v_src.shape}")
    m = pk.shape[2]
    if m == 0:
        raise ContractError("cross-attention state over an empty source")
    s = np.einsum("brmk,brmd->brkd", pk, vv)
    z = pk.sum(axis=2)
    return RecurrentState(s, z, step=m)


@dataclass
class MergedProjection:
    """Feature map folded into the q/k projections: one affine map per head."""

    w_q: np.ndarray  # (heads, k, h)
    b_q: np.ndarray  # (heads, k)
    w_k: np.ndarray
    b_k: np.ndarray


def merge_feature_map(w: AttentionWeights, spec: FeatureMapSpec) -> MergedProjection:
    """Fold an mlp feature map into the query/key projections (computed once)."""
    if spec.kind != "mlp":
        raise ConfigError(f"weight merging applies to the mlp feature map, not '{spec.kind}'")
    fw = spec.params["feat_w"].data  # (r, k, d)
    fb = spec.params["feat_b"].data  # (r, k)
    return MergedProjection(
        w_q=np.matmul(fw, w.w_q.data),
        b_q=fb + np.einsum("rkd,rd->rk", fw, w.b_q.data),
        w_k=np.matmul(fw, w.w_k.data),
        b_k=fb + np.einsum("rkd,rd->rk", fw, w.b_k.data),
    )


def state_footprint(config) -> int:
    """Recurrent-state elements per batch element: heads * k * (d+1) per linear site."""
    per = config.heads * (config.head_dim + 1)
    count = sum(per * config.k_causal for kind in config.causal_kinds if kind == "linear")
    if config.seq2seq:
        count += sum(per * config.k_cross for kind in config.cross_kinds if kind == "linear")
    return count


# --- decode-step numerics (mirrors the tensor-op forward exactly) ---------------


def _ln(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    return xc * inv * g + b


def _elu_plus_one(x: np.ndarray) -> np.ndarray:
    return np.where(x < 0.0, np.exp(np.minimum(x, 0.0)), x + 1.0)


def _project_heads(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(B, h) through per-head (r, out, h) affine maps -> (B, r, out)."""
    r, out_dim, h = w.shape
    y = x @ w.reshape(r * out_dim, h).T + b.reshape(r * out_dim)
    return y.reshape(x.shape[0], r, out_dim)


class _FeatureApplier:
    """Per-site feature computation for decode steps."""

    def __init__(self, model: Model, prefix: str, site: str):
        cfg = model.config
        self.kind = cfg.feature_kind
        self.w = model.attention_weights(prefix)
        self.spec = model.feature_spec(prefix, site)
        self.merged = merge_feature_map(self.w, self.spec) if self.kind == "mlp" else None

    def features(self, a_in: np.ndarray, which: str) -> np.ndarray:
        """phi(q) or phi(k) for one position, straight from the sublayer input."""
        if self.merged is not None:
            m = self.merged
            w, b = (m.w_q, m.b_q) if which == "q" else (m.w_k, m.b_k)
            return np.maximum(_project_heads(a_in, w, b), 0.0)
        w, b = (self.w.w_q, self.w.b_q) if which == "q" else (self.w.w_k, self.w.b_k)
        x = _project_heads(a_in, w.data, b.data)
        if self.kind == "elu":
            return _elu_plus_one(x)
        d = self.spec.head_dim
        sigma = self.spec.params["feat_sigma"].data
        proj = self.spec.params["feat_proj"].data
        norm = np.maximum(np.sqrt((x * x).sum(axis=-1, keepdims=True)), 1e-12)
        xhat = x / (norm * d ** -0.5)
        scaled = np.einsum("brd,rkd->brk", xhat, proj) / sigma[:, None]
        half = (d / 2.0) / (sigma * sigma)
        return np.exp(scaled + (-half)[:, None]) * self.spec.feature_size ** -0.5

    def values(self, a_in: np.ndarray) -> np.ndarray:
        return _project_heads(a_in, self.w.w_v.data, self.w.b_v.data)


class _KVCache:
    """Preallocated growing key/value store for a softmax site."""

    def __init__(self, batch: int, heads: int, head_dim: int, capacity: int):
        self.k = np.zeros((batch, heads, capacity, head_dim))
        self.v = np.zeros((batch, heads, capacity, head_dim))
        self.length = 0

    def append(self, k: np.ndarray, v: np.ndarray) -> None:
        self.k[:, :, self.length] = k
        self.v[:, :, self.length] = v
        self.length += 1

    def element_count(self) -> int:
        # logical live elements: only the filled positions count
        b, r, _, d = self.k.shape
        return 2 * b * r * d * self.length


def _softmax_step(q: np.ndarray, keys: np.ndarray, values: np.ndarray) -> np.ndarray:
    d = q.shape[-1]
    scores = np.einsum("brtd,brd->brt", keys, q) * d ** -0.5
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    w = e / e.sum(axis=-1, keepdims=True)
    return np.einsum("brt,brtd->brd", w, values)


class DecodeSession:
    """Incremental greedy decoding with per-layer attention state.

    Owns mutable state for one decode; distinct sessions are independent.
    """

    def __init__(self, model: Model, batch: int, total_len: int, memory: np.ndarray | None = None):
        cfg = model.config
        if total_len > cfg.max_positions:
            raise InputError(f"decode needs {total_len} positions, model allows {cfg.max_positions}")
        self.model = model
        self.cfg = cfg
        self.batch = batch
        self.position = 0
        self.causal: list[dict] = []
        self.cross: list[dict] = []
        if cfg.seq2seq != (memory is not None):
            raise ContractError("memory must be given exactly for seq2seq models")
        for i in range(cfg.n_layers):
            prefix = f"dec.{i}.attn"
            if cfg.causal_kinds[i] == "linear":
                fa = _FeatureApplier(model, prefix, "causal")
                st = RecurrentState.zeros(batch, cfg.heads, cfg.k_causal, cfg.head_dim)
                self.causal.append({"kind": "linear", "fa": fa, "state": st})
            else:
                w = model.attention_weights(prefix)
                cache = _KVCache(batch, cfg.heads, cfg.head_dim, total_len)
                self.causal.append({"kind": "softmax", "w": w, "cache": cache})
            if cfg.seq2seq:
                xprefix = f"dec.{i}.xattn"
                if cfg.cross_kinds[i] == "linear":
                    fa = _FeatureApplier(model, xprefix, "cross")
                    m_in = memory  # (B, M, h) encoder output
                    phi_k = np.stack([fa.features(m_in[:, j], "k") for j in range(m_in.shape[1])], axis=2)
                    vals = np.stack([fa.values(m_in[:, j]) for j in range(m_in.shape[1])], axis=2)
                    st = precompute_cross_state(phi_k, vals)
                    self.cross.append({"kind": "linear", "fa": fa, "state": st})
                else:
                    w = model.attention_weights(xprefix)
                    m_in = memory
                    mm = m_in.shape[1]
                    keys = np.stack([_project_heads(m_in[:, j], w.w_k.data, w.b_k.data) for j in range(mm)], axis=2)
                    vals = np.stack([_project_heads(m_in[:, j], w.w_v.data, w.b_v.data) for j in range(mm)], axis=2)
                    self.cross.append({"kind": "softmax", "w": w, "k": keys, "v": vals})

    def attn_state_elements(self) -> int:
        """Live attention-state elements across all layers (whole batch)."""
        total = 0
        for layer in self.causal:
            total += layer["state"].element_count() if layer["kind"] == "linear" else layer["cache"].element_count()
        for layer in self.cross:
            total += layer["state"].element_count() if layer["kind"] == "linear" else layer["k"].size + layer["v"].size
        return total

    def step(self, tokens: np.ndarray) -> np.ndarray:
        """Advance one position; returns next-token logits (B, V)."""
        cfg = self.cfg
        p = self.model.params
        if self.position >= cfg.max_positions:
            raise InputError(f"position {self.position} exceeds max positions {cfg.max_positions}")
        x = p["embed"].data[tokens] + p["pos"].data[self.position]
        for i in range(cfg.n_layers):
            lp = f"dec.{i}"
            a_in = _ln(x, p[f"{lp}.ln1.g"].data, p[f"{lp}.ln1.b"].data)
            layer = self.causal[i]
            if layer["kind"] == "linear":
                fa = layer["fa"]
                state_update(layer["state"], fa.features(a_in, "k"), fa.values(a_in))
                out = readout(layer["state"], fa.features(a_in, "q"))
                w = fa.w
            else:
                w = layer["w"]
                q = _project_heads(a_in, w.w_q.data, w.b_q.data)
                layer["cache"].append(_project_heads(a_in, w.w_k.data, w.b_k.data),
                                      _project_heads(a_in, w.w_v.data, w.b_v.data))
                t = layer["cache"].length
                out = _softmax_step(q, layer["cache"].k[:, :, :t], layer["cache"].v[:, :, :t])
            x = x + out.reshape(self.batch, -1) @ w.w_o.data.T + w.b_o.data
            if self.cross:
                xlayer = self.cross[i]
                x_in = _ln(x, p[f"{lp}.lnx.g"].data, p[f"{lp}.lnx.b"].data)
                if xlayer["kind"] == "linear":
                    fa = xlayer["fa"]
                    out = readout(xlayer["state"], fa.features(x_in, "q"))
                    w = fa.w
                else:
                    w = xlayer["w"]
                    q = _project_heads(x_in, w.w_q.data, w.b_q.data)
                    out = _softmax_step(q, xlayer["k"], xlayer["v"])
                x = x + out.reshape(self.batch, -1) @ w.w_o.data.T + w.b_o.data
            h_in = _ln(x, p[f"{lp}.ln2.g"].data, p[f"{lp}.ln2.b"].data)
            hid = np.maximum(h_in @ p[f"{lp}.ffn.w1"].data.T + p[f"{lp}.ffn.b1"].data, 0.0)
            x = x + hid @ p[f"{lp}.ffn.w2"].data.T + p[f"{lp}.ffn.b2"].data
        xf = _ln(x, p["ln_f.g"].data, p["ln_f.b"].data)
        table = p["embed"].data if cfg.tie_embeddings else p["head"].data
        self.position += 1
        return xf @ table.T


@dataclass
class GenerateStats:
    """Per-generated-step instrumentation from a recurrent decode."""

    step_seconds: list[float] = field(default_factory=list)
    state_elements: list[int] = field(default_factory=list)
    batch: int = 1

    def per_batch_elements(self) -> list[int]:
        return [c // self.batch for c in self.state_elements]


def _norm_prompt(prompt) -> tuple[np.ndarray, bool]:
    arr = np.asarray(prompt)
    if arr.ndim == 1:
        arr = arr[None, :]
        squeezed = True
    elif arr.ndim == 2:
        squeezed = False
    else:
        raise InputError(f"prompt must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ContractError("prompt must contain at least one token")
    return arr.astype(np.int64), squeezed


def generate(model: Model, prompt, n_steps: int, mode: str = "recurrent",
             collect_stats: bool = False):
    """Greedy continuation of ``n_steps`` tokens after the prompt.

    mode="recurrent" decodes incrementally with per-layer state;
    mode="parallel" re-runs the full forward pass each step. Both produce
    identical token sequences. Returns the generated tokens, plus stats when
    requested.
    """
    if n_steps <= 0:
        raise ContractError(f"n_steps must be positive, got {n_steps}")
    if mode not in ("recurrent", "parallel"):
        raise ConfigError(f"unknown decode mode '{mode}'")
    prompt2d, squeezed = _norm_prompt(prompt)
    b, plen = prompt2d.shape
    stats = GenerateStats(batch=b)
    if mode == "parallel":
        seq = prompt2d.copy()
        out = np.zeros((b, n_steps), dtype=np.int64)
        with T.suspend_tape():
            for s in range(n_steps):
                t0 = time.perf_counter()
                logits = lm_forward(model, seq)
                nxt = np.argmax(logits.data[:, -1, :], axis=-1)
                out[:, s] = nxt
                seq = np.concatenate([seq, nxt[:, None]], axis=1)
                stats.step_seconds.append(time.perf_counter() - t0)
                stats.state_elements.append(0)
    else:
        session = DecodeSession(model, b, plen + n_steps)
        logits = None
        for t in range(plen):
            logits = session.step(prompt2d[:, t])
        out = np.zeros((b, n_steps), dtype=np.int64)
        candidate = np.argmax(logits, axis=-1)
        # each timed step absorbs the token it emits, so the state ends up
        # covering the whole decoded sequence
        for s in range(n_steps):
            t0 = time.perf_counter()
            out[:, s] = candidate
            logits = session.step(candidate)
            candidate = np.argmax(logits, axis=-1)
            stats.step_seconds.append(time.perf_counter() - t0)
            stats.state_elements.append(session.attn_state_elements())
    result = out[0] if squeezed else out
    return (result, stats) if collect_stats else result


def stepwise_logits(model: Model, tokens) -> np.ndarray:
    """Teacher-forced per-position logits via the recurrent path (oracle bridge)."""
    tokens2d, squeezed = _norm_prompt(tokens)
    b, n = tokens2d.shape
    session = DecodeSession(model, b, n)
    rows = [session.step(tokens2d[:, t]) for t in range(n)]
    out = np.stack(rows, axis=1)
    return out[0] if squeezed else out


def generate_seq2seq(model: Model, src, tgt_prompt, n_steps: int, mode: str = "recurrent"):
    """Greedy target continuation conditioned on source tokens."""
    if n_steps <= 0:
        raise ContractError(f"n_steps must be positive, got {n_steps}")
    if mode not in ("recurrent", "parallel"):
        raise ConfigError(f"unknown decode mode '{mode}'")
    src2d, _ = _norm_prompt(src)
    tgt2d, squeezed = _norm_prompt(tgt_prompt)
    b, plen = tgt2d.shape
    if src2d.shape[0] != b:
        raise DimensionError(f"source batch {src2d.shape[0]} != target batch {b}")
    if mode == "parallel":
        seq = tgt2d.copy()
        out = np.zeros((b, n_steps), dtype=np.int64)
        with T.suspend_tape():
            for s in range(n_steps):
                logits = seq2seq_forward(model, src2d, seq)
                nxt = np.argmax(logits.data[:, -1, :], axis=-1)
                out[:, s] = nxt
                seq = np.concatenate([seq, nxt[:, None]], axis=1)
    else:
        with T.suspend_tape():
            memory, _ = encode(model, src2d)
        session = DecodeSession(model, b, plen + n_steps, memory=memory.data)
        logits = None
        for t in range(plen):
            logits = session.step(tgt2d[:, t])
        out = np.zeros((b, n_steps), dtype=np.int64)
        candidate = np.argmax(logits, axis=-1)
        for s in range(n_steps):
            out[:, s] = candidate
            logits = session.step(candidate)
            candidate = np.argmax(logits, axis=-1)
    return out[0] if squeezed else out
