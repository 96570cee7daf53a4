"""Dense float64 tensors with a reverse-mode autodiff tape.

Everything is a contiguous row-major numpy array of 64-bit floats. Operations
record themselves on the currently active ``Tape`` (a Wengert list) whenever
an input requires gradients; without an active tape they are pure forward
computations, which is how all inference and benchmarking code runs.

Tensors are immutable after construction by contract, except for in-place
parameter updates performed by ``adam_step``.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, InputError, TrainingError

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "finite_diff_grad",
    "AdamState",
    "adam_step",
    "elementwise",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "relu",
    "elu_plus_one",
    "exp",
    "sqrt",
    "add_bias",
    "row_div",
    "clamp_min",
    "softmax_rows",
    "layer_norm",
    "cross_entropy_rows",
    "gather_rows",
    "reshape",
    "transpose",
    "sum_all",
    "mean_all",
    "sum_axis",
    "cumsum_axis",
    "dropout",
    "suspend_tape",
]


class Tensor:
    """A dense float64 array plus optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_on_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keeps 0-d scalars 0-d
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._on_tape = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


# --- tape ------------------------------------------------------------------

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed operations, replayed in reverse by backward()."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._nodes)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


@contextlib.contextmanager
def suspend_tape():
    """Temporarily disable recording (used by oracles and eval paths)."""
    saved = list(_TAPE_STACK)
    _TAPE_STACK.clear()
    try:
        yield
    finally:
        _TAPE_STACK.extend(saved)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if out.requires_grad and tape is not None:
        out._on_tape = True
        tape._nodes.append((out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from the loss.

    The active tape is replayed in reverse and then consumed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = _active_tape()
    if tape is None or not loss._on_tape:
        raise ContractError("loss was not produced through taped operations")
    loss.grad = np.ones_like(loss.data)
    for out, fn in reversed(tape._nodes):
        if out.grad is not None:
            fn(out.grad)
    tape._nodes.clear()


# --- shape helpers ----------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_strict_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # Only scalar-with-tensor and same-shape combinations are public API.
    if a.ndim != 0 and b.ndim != 0 and a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (only scalar or same-shape broadcasting is supported)")


# --- arithmetic -------------------------------------------------------------


def _add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), bwd)


def _mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), bwd)


def _div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def bwd(g):
        _accum(a, _unbroadcast(g / b.data, a.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), bwd)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_strict_shapes(a, b, "add")
    return _add(a, b)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_strict_shapes(a, b, "sub")
    return _add(a, scale(b, -1.0))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_strict_shapes(a, b, "mul")
    return _mul(a, b)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_strict_shapes(a, b, "div")
    return _div(a, b)


# Broadcasting variants for internal use where shapes are explicit.
badd = _add
bmul = _mul
bdiv = _div


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * c

    def bwd(g):
        _accum(x, g * c)

    return _make(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        _accum(x, g * (x.data > 0.0))  # subgradient 0 at the kink

    return _make(out, (x,), bwd)


def elu_plus_one(x: Tensor) -> Tensor:
    # x+1 for x >= 0, exp(x) below; strictly positive everywhere.
    neg = x.data < 0.0
    out = np.where(neg, np.exp(np.minimum(x.data, 0.0)), x.data + 1.0)

    def bwd(g):
        _accum(x, g * np.where(neg, out, 1.0))

    return _make(out, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def bwd(g):
        _accum(x, g * out)

    return _make(out, (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    # caller guarantees strictly positive input
    out = np.sqrt(x.data)

    def bwd(g):
        _accum(x, g / (2.0 * out))

    return _make(out, (x,), bwd)


_ELEMENTWISE = {"relu": 1, "elu_plus_one": 1, "exp": 1, "add": 2, "mul": 2, "scale": 2}


def elementwise(op: str, *inputs) -> Tensor:
    """Dispatch the named elementwise operation.

    Supported: relu, elu_plus_one, exp (unary); add, mul (binary,
    scalar-or-same-shape); scale (tensor, python float).
    """
    if op not in _ELEMENTWISE:
        raise ConfigError(f"unknown elementwise op '{op}'")
    if len(inputs) != _ELEMENTWISE[op]:
        raise ContractError(f"elementwise '{op}' takes {_ELEMENTWISE[op]} inputs, got {len(inputs)}")
    if op == "relu":
        return relu(_as_tensor(inputs[0]))
    if op == "elu_plus_one":
        return elu_plus_one(_as_tensor(inputs[0]))
    if op == "exp":
        return exp(_as_tensor(inputs[0]))
    if op == "add":
        return add(inputs[0], inputs[1])
    if op == "mul":
        return mul(inputs[0], inputs[1])
    return scale(_as_tensor(inputs[0]), inputs[1])


# --- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; stacked leading dims broadcast numpy-style."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions disagree: {a.shape} vs {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as e:
        raise DimensionError(f"matmul: incompatible batch dims: {a.shape} vs {b.shape}") from e

    def bwd(g):
        _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), bwd)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b where b spans the last axis of x."""
    if b.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise DimensionError(f"add_bias: bias {b.shape} does not span last axis of {x.shape}")
    out = x.data + b.data

    def bwd(g):
        _accum(x, g)
        _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _make(out, (x, b), bwd)


def row_div(x: Tensor, den: Tensor) -> Tensor:
    """Divide each length-n row of x by a per-row denominator of shape (..., 1)."""
    if den.shape != x.shape[:-1] + (1,):
        raise DimensionError(f"row_div: denominator {den.shape} does not match rows of {x.shape}")
    out = x.data / den.data

    def bwd(g):
        _accum(x, g / den.data)
        _accum(den, -(g * x.data).sum(axis=-1, keepdims=True) / (den.data * den.data))

    return _make(out, (x, den), bwd)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    lo = float(lo)
    out = np.maximum(x.data, lo)

    def bwd(g):
        _accum(x, g * (x.data > lo))

    return _make(out, (x,), bwd)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis, computed with max-subtraction.

    ``mask`` is a constant boolean array (True = keep); masked entries come out
    exactly 0 and every row must keep at least one entry.
    """
    if x.ndim < 1 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_rows: empty last dimension in shape {x.shape}")
    if mask is None:
        z = x.data
    else:
        z = np.where(mask, x.data, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=-1, keepdims=True)
    y = e / s

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accum(x, y * (g - dot))

    return _make(y, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    h = x.shape[-1]
    if gain.shape != (h,) or bias.shape != (h,):
        raise DimensionError(f"layer_norm: gain/bias must have shape ({h},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bwd(g):
        _accum(bias, g.reshape(-1, h).sum(axis=0))
        _accum(gain, (g * xhat).reshape(-1, h).sum(axis=0))
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _make(out, (x, gain, bias), bwd)


def cross_entropy_rows(
    logits: Tensor,
    targets: np.ndarray,
    label_smoothing: float = 0.0,
    weights: np.ndarray | None = None,
) -> Tensor:
    """Label-smoothed cross entropy averaged over rows.

    The target distribution is (1-eps) * one_hot + eps * uniform. Optional
    per-row weights reweight the average (used to mask filler positions).
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy_rows: logits must be 2-D, got {logits.shape}")
    n, v = logits.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise DimensionError(f"cross_entropy_rows: targets {targets.shape} do not match logits rows {n}")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= v:
        bad = int(targets[(targets < 0) | (targets >= v)][0])
        raise InputError(f"target id {bad} outside vocabulary of size {v}")
    eps = float(label_smoothing)
    if not 0.0 <= eps < 1.0:
        raise ConfigError(f"label smoothing must be in [0, 1), got {eps}")
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise DimensionError(f"cross_entropy_rows: weights {w.shape} do not match rows {n}")
    wsum = w.sum()
    if wsum <= 0:
        raise ContractError("cross_entropy_rows: weights sum to zero")

    m = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    nll = -logp[rows, targets]
    smooth = -logp.mean(axis=-1)
    rowloss = (1.0 - eps) * nll + eps * smooth
    out = np.asarray((w * rowloss).sum() / wsum)

    def bwd(g):
        gs = float(g)
        p = np.exp(logp)
        q = np.full((n, v), eps / v)
        q[rows, targets] += 1.0 - eps
        _accum(logits, gs * (w / wsum)[:, None] * (p - q))

    return _make(out, (logits,), bwd)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Select rows of a (V, h) table by integer id (embedding lookup)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError("gather_rows: ids must be integers")
    v = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = int(ids[(ids < 0) | (ids >= v)].flat[0])
        raise InputError(f"token id {bad} outside table of size {v}")
    out = table.data[ids]

    def bwd(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _make(out, (table,), bwd)


def reshape(x: Tensor, shape: Iterable[int]) -> Tensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def bwd(g):
        _accum(x, g.reshape(x.shape))

    return _make(out, (x,), bwd)


def transpose(x: Tensor, axes: Iterable[int]) -> Tensor:
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = np.transpose(x.data, axes)

    def bwd(g):
        _accum(x, np.transpose(g, inv))

    return _make(out, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.shape).copy())

    return _make(out, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def sum_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.shape).copy())

    return _make(out, (x,), bwd)


def cumsum_axis(x: Tensor, axis: int) -> Tensor:
    out = np.cumsum(x.data, axis=axis)

    def bwd(g):
        gf = np.flip(g, axis=axis)
        _accum(x, np.flip(np.cumsum(gf, axis=axis), axis=axis))

    return _make(out, (x,), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = x.data * keep

    def bwd(g):
        _accum(x, g * keep)

    return _make(out, (x,), bwd)


# --- oracles and optimization ------------------------------------------------


def finite_diff_grad(f: Callable[[Tensor], "Tensor | float"], x: Tensor, eps: float) -> Tensor:
    """Central-difference gradient of a scalar function, per coordinate."""
    if eps <= 0:
        raise ContractError(f"finite_diff_grad: eps must be positive, got {eps}")

    def evaluate() -> float:
        out = f(x)
        return out.item() if isinstance(out, Tensor) else float(out)

    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with suspend_tape():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = evaluate()
            flat[i] = orig - eps
            lo = evaluate()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
    return Tensor(g)


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps_adam: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on params and state."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad {g.shape} vs param {p.shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter '{name}'")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        vv = state.v.get(name)
        if vv is None:
            vv = state.v[name] = np.zeros_like(p.data)
        m *= beta1
        m += (1.0 - beta1) * g
        vv *= beta2
        vv += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(vv / bc2) + eps_adam)
