"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is dynamic: every primitive executed while gradients are enabled
appends an :class:`OpRecord` to the output tensor, and ``backward`` replays
the records in reverse topological order. The record is rebuilt on every
forward pass, so sequence lengths may change freely between calls.

All arithmetic is 64-bit. Primitives optionally report their cost to an
active :class:`FlopCounter` using fixed conventions (a ``p x q`` by ``q x r``
matmul is ``2*p*q*r`` operations, layer norm 8 ops/element, softmax 5,
GELU 10, elementwise add/multiply 1).
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, DataError, ShapeError, UsageError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Per-element cost conventions used by the FLOP counter.
MATMUL_OPS_PER_MAC = 2
LAYER_NORM_OPS_PER_ELEMENT = 8
SOFTMAX_OPS_PER_ELEMENT = 5
GELU_OPS_PER_ELEMENT = 10
ELEMENTWISE_OPS_PER_ELEMENT = 1

_grad_enabled = True
_active_counter: "FlopCounter | None" = None


class FlopCounter:
    """Accumulates per-operation floating-point op counts."""

    def __init__(self) -> None:
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, count: int) -> None:
        self.total += count
        self.by_op[op] = self.by_op.get(op, 0) + count


@contextmanager
def flop_counter() -> Iterator[FlopCounter]:
    """Count the cost of every primitive executed inside the block."""
    global _active_counter
    prev = _active_counter
    counter = FlopCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = prev


def _count(op: str, n: int) -> None:
    if _active_counter is not None:
        _active_counter.add(op, n)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (evaluation, finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class OpRecord:
    """One primitive in the computation record.

    ``backward`` maps the output gradient to one gradient array per input
    (``None`` for inputs that do not require gradients).
    """

    __slots__ = ("name", "inputs", "output", "backward")

    def __init__(self, name, inputs, output, backward):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tensor:
    """N-dimensional float64 array participating in autodiff.

    ``grad`` is populated by :func:`backward` and accumulates across paths;
    reset it to ``None`` before reusing a leaf in a new graph.
    """

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op: OpRecord | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def backward(self) -> list[OpRecord]:
        return backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(name: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
          backward_fn: Callable) -> Tensor:
    requires = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires:
        out.op = OpRecord(name, inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data
    _count("add", out_data.size * ELEMENTWISE_OPS_PER_ELEMENT)

    def bwd(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return _make("add", out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data
    _count("mul", out_data.size * ELEMENTWISE_OPS_PER_ELEMENT)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return _make("mul", out_data, (a, b), bwd)


def scale(x: Tensor, factor: float) -> Tensor:
    out_data = x.data * factor
    _count("scale", out_data.size * ELEMENTWISE_OPS_PER_ELEMENT)

    def bwd(g):
        return (g * factor,)

    return _make("scale", out_data, (x,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} x {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out_data = a.data @ b.data
    m, k = a.data.shape[-2], a.data.shape[-1]
    n = b.data.shape[-1]
    batch = int(np.prod(out_data.shape[:-2], dtype=np.int64)) if out_data.ndim > 2 else 1
    _count("matmul", MATMUL_OPS_PER_MAC * batch * m * k * n)

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            bt = np.swapaxes(b.data, -1, -2)
            if bt.ndim > 2:
                bt = np.ascontiguousarray(bt)
            ga = _unbroadcast(g @ bt, a.data.shape)
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                # stacked activations against a shared weight: collapse the
                # batch into one GEMM instead of materializing per-batch outers
                cols = g.shape[-1]
                gb = np.ascontiguousarray(a.data).reshape(-1, k).T \
                    @ np.ascontiguousarray(g).reshape(-1, cols)
            else:
                at = np.swapaxes(a.data, -1, -2)
                if at.ndim > 2:
                    at = np.ascontiguousarray(at)
                gb = _unbroadcast(at @ g, b.data.shape)
        return ga, gb

    return _make("matmul", out_data, (a, b), bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out_data = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return _make("reshape", out_data, (x,), bwd)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    # materialized copy: downstream matmuls are far faster on contiguous data
    out_data = np.ascontiguousarray(np.transpose(x.data, axes))
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _make("transpose", out_data, (x,), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries from ``start`` along ``axis``."""
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out_data = x.data[index]

    def bwd(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make("narrow", out_data, (x,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        grads = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, stop)
                grads.append(g[tuple(index)])
            else:
                grads.append(None)
        return tuple(grads)

    return _make("concat", out_data, tuple(tensors), bwd)


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out_data = np.broadcast_to(x.data, shape)

    def bwd(g):
        return (_unbroadcast(g, x.data.shape),)

    return _make("broadcast_to", out_data, (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum())
    _count("sum", x.data.size * ELEMENTWISE_OPS_PER_ELEMENT)

    def bwd(g):
        return (np.broadcast_to(g, x.data.shape),)

    return _make("sum", out_data, (x,), bwd)


def mean(x: Tensor, axis: int) -> Tensor:
    out_data = x.data.mean(axis=axis)
    n = x.data.shape[axis]
    _count("mean", x.data.size * ELEMENTWISE_OPS_PER_ELEMENT)

    def bwd(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _make("mean", out_data, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance, then
    apply the affine gain and bias."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data
    _count("layer_norm", x.data.size * LAYER_NORM_OPS_PER_ELEMENT)

    def bwd(g):
        gx = ggain = gbias = None
        reduce_axes = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=reduce_axes)
        if bias.requires_grad:
            gbias = g.sum(axis=reduce_axes)
        if x.requires_grad:
            dxhat = g * gain.data
            gx = inv * (dxhat
                        - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _make("layer_norm", out_data, (x, gain, bias), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)
    _count("softmax", x.data.size * SOFTMAX_OPS_PER_ELEMENT)

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return _make("softmax", out_data, (x,), bwd)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-form) GELU."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = x.data * phi
    _count("gelu", x.data.size * GELU_OPS_PER_ELEMENT)

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (phi + x.data * pdf),)

    return _make("gelu", out_data, (x,), bwd)


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales survivors by 1/(1-rate) so eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise UsageError("training-mode dropout requires a random generator")
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) >= rate) / keep
    out_data = x.data * mask

    def bwd(g):
        return (g * mask,)

    return _make("dropout", out_data, (x,), bwd)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax logits.

    Fused with log-sum-exp so saturated logits do not overflow.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    n, c = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    bad = (labels < 0) | (labels >= c)
    if bad.any():
        i = int(np.argmax(bad))
        raise DataError(f"label out of range [0,{c}) at sample {i}: {labels[i]}")
    m = logits.data.max(axis=1, keepdims=True)
    shifted = logits.data - m
    e = np.exp(shifted)
    denom = e.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    out_data = np.asarray(-log_probs[np.arange(n), labels].mean())
    probs = e / denom

    def bwd(g):
        grad = probs.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return _make("cross_entropy", out_data, (logits,), bwd)


# ---------------------------------------------------------------------------
# backward pass


def record_of(loss: Tensor) -> list[OpRecord]:
    """Topologically ordered computation record reachable from ``loss``."""
    order: list[OpRecord] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        tensor, expanded = stack.pop()
        rec = tensor.op
        if rec is None or id(rec) in seen:
            continue
        if expanded:
            seen.add(id(rec))
            order.append(rec)
        else:
            stack.append((tensor, True))
            for parent in rec.inputs:
                if parent.op is not None and id(parent.op) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> list[OpRecord]:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients accumulate: a tensor consumed by several operations receives
    the sum of all path gradients. Returns the replayed record. The graph is
    consumed as it is replayed (saved intermediates and non-leaf gradients
    are released), so only leaf gradients survive and a second backward over
    the same graph is not possible.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar, got shape {loss.shape}")
    record = record_of(loss)
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(record):
        gout = rec.output.grad
        if gout is None:
            rec.backward = None
            continue
        for parent, g in zip(rec.inputs, rec.backward(gout)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
        # every consumer of this output has already contributed, so its
        # gradient and the saved forward state are dead weight from here on
        rec.output.grad = None
        rec.output.op = None
        rec.backward = None
    return record


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckResult:
    """Worst-case disagreement between autodiff and central differences."""

    max_rel_error: float
    input_index: int
    element_index: int
    analytic: float
    numeric: float

    def __str__(self) -> str:
        return (f"max rel err {self.max_rel_error:.3e} at input {self.input_index} "
                f"element {self.element_index} (analytic {self.analytic:.6e}, "
                f"numeric {self.numeric:.6e})")


_ABS_ERR_FLOOR = 1e-8
_SCALE_FRACTION = 1e-3


def check_gradients(f: Callable[..., Tensor], inputs: Sequence[Tensor],
                    eps: float = 1e-5) -> GradCheckResult:
    """Compare autodiff gradients of ``f(*inputs)`` against central differences.

    Each element of each input is perturbed by +/-eps in place. The per-element
    relative error is ``|a - n| / max(|a|, |n|, 1e-3 * ginf, 1e-8)`` where
    ``ginf`` is the infinity norm of that input's analytic gradient: elements
    far below the gradient's own scale are compared absolutely, so finite-
    difference roundoff on negligible entries cannot dominate the verdict.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise UsageError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    for t in inputs:
        if not t.requires_grad:
            raise UsageError("all checked inputs must have requires_grad=True")
        t.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise UsageError(f"check_gradients requires a scalar function, got shape {out.shape}")
    backward(out)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = GradCheckResult(0.0, -1, -1, 0.0, 0.0)
    with no_grad():
        for i, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            a_flat = analytic[i].reshape(-1)
            scale_floor = _SCALE_FRACTION * float(np.abs(a_flat).max(initial=0.0))
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                f_plus = f(*inputs).item()
                flat[j] = orig - eps
                f_minus = f(*inputs).item()
                flat[j] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(a_flat[j])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), scale_floor, _ABS_ERR_FLOOR)
                if rel > worst.max_rel_error:
                    worst = GradCheckResult(rel, i, j, a, numeric)
    return worst
