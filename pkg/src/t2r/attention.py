"""Multihead attention kernels: the softmax teacher and the linearized student.

Both kinds share the q/k/v projection code and operate on head-stacked tensors
of shape (batch, heads, positions, dim). Public entry points also accept
unbatched (heads, positions, dim) stacks and return unbatched outputs.

The guarded denominator ``max(sum phi(q) . phi(k), EPS_DENOM)`` is shared with
the recurrent decode path so the two modes agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor

# Shared guard for linear-attention denominators; relu features can zero an
# entire row early in finetuning.
EPS_DENOM = 1e-6


@dataclass
class AttentionWeights:
    """Per-head q/k/v projections plus the output projection.

    w_q, w_k, w_v have shape (heads, head_dim, model_dim); biases
    (heads, head_dim). w_o is (model_dim, model_dim), b_o (model_dim,).
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    b_q: Tensor
    b_k: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor

    def __post_init__(self):
        r, d, h = self.w_q.shape
        if d * r != h:
            raise ConfigError(f"head_dim*heads = {d * r} must equal model_dim {h}")
        for name in ("w_k", "w_v"):
            if getattr(self, name).shape != (r, d, h):
                raise DimensionError(f"{name} shape {getattr(self, name).shape} != {(r, d, h)}")

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.w_q.shape[1]

    @property
    def model_dim(self) -> int:
        return self.w_q.shape[2]


def init_attention_weights(rng: np.random.Generator, heads: int, head_dim: int) -> AttentionWeights:
    h = heads * head_dim
    s = h ** -0.5

    def w():
        return Tensor(rng.standard_normal((heads, head_dim, h)) * s, requires_grad=True)

    return AttentionWeights(
        w_q=w(), w_k=w(), w_v=w(),
        b_q=Tensor(np.zeros((heads, head_dim)), requires_grad=True),
        b_k=Tensor(np.zeros((heads, head_dim)), requires_grad=True),
        b_v=Tensor(np.zeros((heads, head_dim)), requires_grad=True),
        w_o=Tensor(rng.standard_normal((h, h)) * s, requires_grad=True),
        b_o=Tensor(np.zeros(h), requires_grad=True),
    )


@dataclass
class FeatureMapSpec:
    """A similarity feature map family plus its (possibly learnable) parameters.

    kinds:
      mlp -- relu(feat_w x + feat_b), feat_w (heads, k, d), feat_b (heads, k)
      elu -- elu(x)+1, requires k == d, no parameters
      rfa -- positive random features of norm-rescaled inputs with a learnable
             per-head temperature; projection drawn once from a stored seed
    """

    kind: str
    feature_size: int
    head_dim: int
    heads: int
    params: dict[str, Tensor] = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("mlp", "elu", "rfa"):
            raise ConfigError(f"unknown feature map kind '{self.kind}'")
        if self.feature_size < 1:
            raise ConfigError(f"feature size must be >= 1, got {self.feature_size}")
        if self.kind == "elu" and self.feature_size != self.head_dim:
            raise ConfigError(
                f"elu feature size is always the head dimension: k={self.feature_size}, d={self.head_dim}"
            )

    @classmethod
    def mlp_relu(cls, rng: np.random.Generator, heads: int, feature_size: int, head_dim: int) -> "FeatureMapSpec":
        # weight scale 1/sqrt(d) keeps feature magnitudes near q/k magnitudes
        w = Tensor(rng.standard_normal((heads, feature_size, head_dim)) * head_dim ** -0.5, requires_grad=True)
        b = Tensor(np.zeros((heads, feature_size)), requires_grad=True)
        return cls("mlp", feature_size, head_dim, heads, {"feat_w": w, "feat_b": b})

    @classmethod
    def elu(cls, heads: int, head_dim: int) -> "FeatureMapSpec":
        return cls("elu", head_dim, head_dim, heads)

    @classmethod
    def rfa(cls, heads: int, feature_size: int, head_dim: int, seed: int) -> "FeatureMapSpec":
        rng = np.random.default_rng(seed)
        proj = Tensor(rng.standard_normal((heads, feature_size, head_dim)))  # fixed draw
        sigma = Tensor(np.full(heads, head_dim ** 0.25), requires_grad=True)
        return cls("rfa", feature_size, head_dim, heads, {"feat_proj": proj, "feat_sigma": sigma}, seed=seed)

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if v.requires_grad}


@dataclass(frozen=True)
class AttentionKind:
    """Which similarity an attention site uses: softmax or a linear feature map."""

    kind: str  # "softmax" | "linear"
    feature_map: FeatureMapSpec | None = None

    def __post_init__(self):
        if self.kind not in ("softmax", "linear"):
            raise ConfigError(f"unknown attention kind '{self.kind}'")
        if self.kind == "linear":
            if self.feature_map is None:
                raise ConfigError("linear attention needs a feature map spec")
            if self.feature_map.feature_size < 1:
                raise ConfigError("feature size must be >= 1")


@dataclass
class AttentionTrace:
    """Normalized attention rows for analysis: one (B, heads, N, M) array per layer."""

    layers: list[np.ndarray]
    model_id: str = ""
    input_id: str = ""

    def validate(self, tol: float = 1e-4) -> None:
        for li, w in enumerate(self.layers):
            sums = w.sum(axis=-1)
            if np.any(np.abs(sums - 1.0) > tol):
                raise ContractError(f"trace layer {li}: row sums deviate from 1 by up to {np.abs(sums - 1.0).max():.2e}")

    def merged(self, other: "AttentionTrace") -> "AttentionTrace":
        return AttentionTrace(self.layers + other.layers, self.model_id, self.input_id)


# --- projections --------------------------------------------------------------


def _as_batched(x: Tensor, want: int) -> tuple[Tensor, bool]:
    if x.ndim == want - 1:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim != want:
        raise DimensionError(f"expected rank {want - 1} or {want}, got shape {x.shape}")
    return x, False


def project_qkv(x_tgt: Tensor, x_src: Tensor, w: AttentionWeights) -> tuple[Tensor, Tensor, Tensor]:
    """Affine-map target vectors to queries and source vectors to keys/values.

    Inputs are (N, h) / (M, h) or batched (B, N, h) / (B, M, h); outputs are
    head-stacked (heads, len, d), batched when the inputs were.
    """
    r, d, h = w.w_q.shape

    def proj(x: Tensor, wt: Tensor, bt: Tensor) -> Tensor:
        x, squeezed = _as_batched(x, 3)
        if x.shape[-1] != h:
            raise DimensionError(f"input dim {x.shape[-1]} != model dim {h}")
        b_, n, _ = x.shape
        flat = T.reshape(x, (b_ * n, h))
        y = T.add_bias(T.matmul(flat, T.transpose(T.reshape(wt, (r * d, h)), (1, 0))), T.reshape(bt, (r * d,)))
        y = T.transpose(T.reshape(y, (b_, n, r, d)), (0, 2, 1, 3))
        return T.reshape(y, (r, n, d)) if squeezed else y

    q = proj(x_tgt, w.w_q, w.b_q)
    k = proj(x_src, w.w_k, w.b_k)
    v = proj(x_src, w.w_v, w.b_v)
    return q, k, v


def _concat_heads(out: Tensor, w: AttentionWeights | None) -> Tensor:
    b_, r, n, d = out.shape
    y = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b_, n, r * d))
    if w is not None:
        flat = T.reshape(y, (b_ * n, r * d))
        y = T.reshape(T.add_bias(T.matmul(flat, T.transpose(w.w_o, (1, 0))), w.b_o), (b_, n, r * d))
    return y


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


# --- softmax attention ----------------------------------------------------------


def softmax_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    causal: bool,
    w: AttentionWeights | None = None,
    record_trace: bool = False,
) -> tuple[Tensor, AttentionTrace | None]:
    """Scaled dot-product attention with exponential similarity.

    Returns the concatenated-head output (N, h), output-projected when ``w``
    is given, plus the normalized coefficient rows when tracing is on.
    """
    q, squeezed = _as_batched(q, 4)
    k, _ = _as_batched(k, 4)
    v, _ = _as_batched(v, 4)
    d = q.shape[-1]
    n, m = q.shape[2], k.shape[2]
    if causal and m != n:
        raise ContractError(f"causal attention needs matching lengths, got N={n}, M={m}")
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), d ** -0.5)
    attn = T.softmax_rows(scores, mask=causal_mask(n) if causal else None)
    out = T.matmul(attn, v)
    trace = AttentionTrace([attn.data.copy()]) if record_trace else None
    y = _concat_heads(out, w)
    return (T.reshape(y, y.shape[1:]) if squeezed else y), trace


# --- feature maps ----------------------------------------------------------------


def apply_feature_map(spec: FeatureMapSpec, x: Tensor) -> Tensor:
    """Map head-stacked vectors (.., heads, len, d) into the k-dim feature space."""
    x, squeezed = _as_batched(x, 4)
    if x.shape[1] != spec.heads or x.shape[-1] != spec.head_dim:
        raise DimensionError(f"input {x.shape} does not match spec (heads={spec.heads}, d={spec.head_dim})")
    if spec.kind == "mlp":
        wt = T.transpose(spec.params["feat_w"], (0, 2, 1))  # (r, d, k)
        b = T.reshape(spec.params["feat_b"], (spec.heads, 1, spec.feature_size))
        phi = T.relu(T.badd(T.matmul(x, wt), b))
    elif spec.kind == "elu":
        phi = T.elu_plus_one(x)
    else:  # rfa
        d = spec.head_dim
        norm = T.clamp_min(T.sqrt(T.sum_axis(T.mul(x, x), -1, keepdims=True)), 1e-12)
        xhat = T.row_div(x, T.scale(norm, d ** -0.5))  # rescaled to norm sqrt(d)
        sigma = T.reshape(spec.params["feat_sigma"], (spec.heads, 1, 1))
        proj = T.bdiv(T.matmul(xhat, T.transpose(spec.params["feat_proj"], (0, 2, 1))), sigma)
        # subtract |xhat|^2 / (2 sigma^2) = d / (2 sigma^2) so the expected
        # feature dot product is the exponential of the rescaled similarity
        half = T.bdiv(Tensor(np.full((spec.heads, 1, 1), d / 2.0)), T.mul(sigma, sigma))
        phi = T.scale(T.exp(T.badd(proj, T.scale(half, -1.0))), spec.feature_size ** -0.5)
    return T.reshape(phi, phi.shape[1:]) if squeezed else phi


# --- linear attention -------------------------------------------------------------


def linear_attention_parallel(
    phi_q: Tensor,
    phi_k: Tensor,
    v: Tensor,
    causal: bool,
    w: AttentionWeights | None = None,
    record_trace: bool = False,
) -> tuple[Tensor, AttentionTrace | None]:
    """Feature-map attention computed in parallel over positions.

    The denominator is guarded by max(., EPS_DENOM); rows never raise on a
    zeroed feature vector.
    """
    phi_q, squeezed = _as_batched(phi_q, 4)
    phi_k, _ = _as_batched(phi_k, 4)
    v, _ = _as_batched(v, 4)
    b_, r, n, kf = phi_q.shape
    m = phi_k.shape[2]
    if phi_k.shape[-1] != kf:
        raise DimensionError(f"feature dims disagree: {phi_q.shape} vs {phi_k.shape}")
    if causal:
        if m != n:
            raise ContractError(f"causal attention needs matching lengths, got N={n}, M={m}")
        outer = T.bmul(T.reshape(phi_k, (b_, r, m, kf, 1)), T.reshape(v, (b_, r, m, 1, v.shape[-1])))
        s_prefix = T.cumsum_axis(outer, 2)  # running sum of feature/value outer products
        num = T.sum_axis(T.bmul(T.reshape(phi_q, (b_, r, n, kf, 1)), s_prefix), 3)
        z_prefix = T.cumsum_axis(phi_k, 2)
        den = T.sum_axis(T.mul(phi_q, z_prefix), -1, keepdims=True)
    else:
        s_all = T.matmul(T.transpose(phi_k, (0, 1, 3, 2)), v)  # (B, r, k, d)
        num = T.matmul(phi_q, s_all)
        z_all = T.sum_axis(phi_k, 2)  # (B, r, k)
        den = T.matmul(phi_q, T.reshape(z_all, (b_, r, kf, 1)))
    out = T.row_div(num, T.clamp_min(den, EPS_DENOM))
    trace = None
    if record_trace:
        sims = np.matmul(phi_q.data, np.swapaxes(phi_k.data, -1, -2))
        if causal:
            sims = sims * causal_mask(n)
        rows = sims / np.maximum(sims.sum(axis=-1, keepdims=True), EPS_DENOM)
        trace = AttentionTrace([rows])
    y = _concat_heads(out, w)
    return (T.reshape(y, y.shape[1:]) if squeezed else y), trace
