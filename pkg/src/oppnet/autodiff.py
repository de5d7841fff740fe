"""Dense float64 tensors with reverse-mode automatic differentiation and Adam.

A Tape records operations executed while it is active (innermost tape wins);
``backward`` replays the records in reverse, accumulating gradients into each
tensor's ``.grad``. Ops run tape-free when no tape is active, which is the
fast path for inference. Every op checks its output for NaN/Inf and raises
NumericHealthError on failure, so bad values surface at the op that produced
them instead of corrupting a whole rollout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericHealthError

_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array plus gradient slot. Leaf parameters set requires_grad."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered op records for one differentiable computation.

    Also collects each relu activation's sign pattern, which the finite
    difference checker uses to spot evaluations that straddle a kink.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self.relu_masks: list[np.ndarray] = []
        self.relu_min_abs: float = math.inf

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(op: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NumericHealthError(f"op '{op}' produced a non-finite value")
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.records.append((out, inputs, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result("add", out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _result("sub", out, (a, b), vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (-g,)

    return _result("neg", -a.data, (a,), vjp)


def mul(a, b) -> Tensor:
    """Hadamard product; also covers scalar multiplication via broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    a_data, b_data = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * b_data, a_data.shape),
                _unbroadcast(g * a_data, b_data.shape))

    return _result("mul", out, (a, b), vjp)


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    a_data = a.data

    def vjp(g):
        return (g / a_data,)

    return _result("log", out, (a,), vjp)


def relu(a) -> Tensor:
    """Projection onto the non-negative orthant; subgradient 0 at the kink."""
    a = as_tensor(a)
    mask = a.data > 0
    tape = _active_tape()
    if tape is not None:
        tape.relu_masks.append(mask)
        if a.data.size:
            tape.relu_min_abs = min(tape.relu_min_abs, float(np.abs(a.data).min()))

    def vjp(g):
        return (g * mask,)

    return _result("relu", a.data * mask, (a,), vjp)


# ---------------------------------------------------------------------------
# shape ops

def transpose(a, axes: tuple[int, ...] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _result("transpose", np.transpose(a.data, axes), (a,), vjp)


def transpose_last2(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim < 2:
        raise ContractError("transpose_last2 requires ndim >= 2")
    axes = tuple(range(a.data.ndim - 2)) + (a.data.ndim - 1, a.data.ndim - 2)
    return transpose(a, axes)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old_shape = a.data.shape

    def vjp(g):
        return (g.reshape(old_shape),)

    return _result("reshape", a.data.reshape(shape), (a,), vjp)


def select_index(a, index: int) -> Tensor:
    """Slice one entry off the leading axis; the gradient scatters back."""
    a = as_tensor(a)
    if not (0 <= index < a.data.shape[0]):
        raise ContractError(f"index {index} out of range for axis of size {a.data.shape[0]}")
    shape = a.data.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _result("select_index", a.data[index], (a,), vjp)


# ---------------------------------------------------------------------------
# contractions and reductions

def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading axes.

    Operands must have ndim >= 2; reshape vectors to column matrices first.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ContractError("matmul operands must have ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ContractError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}")
    out = np.matmul(a.data, b.data)
    a_data, b_data = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b_data, -1, -2))
        gb = np.matmul(np.swapaxes(a_data, -1, -2), g)
        return _unbroadcast(ga, a_data.shape), _unbroadcast(gb, b_data.shape)

    return _result("matmul", out, (a, b), vjp)


def tensor_sum(a) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape

    def vjp(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.asarray(a.data.sum()), (a,), vjp)


def tensor_mean(a) -> Tensor:
    a = as_tensor(a)
    shape = a.data.shape
    count = a.data.size

    def vjp(g):
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result("mean", np.asarray(a.data.mean()), (a,), vjp)


def squared_norm(a) -> Tensor:
    """Sum of squared entries."""
    a = as_tensor(a)
    a_data = a.data

    def vjp(g):
        return (2.0 * a_data * g,)

    return _result("squared_norm", np.asarray((a.data ** 2).sum()), (a,), vjp)


# ---------------------------------------------------------------------------
# softmax heads

def masked_softmax(logits, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to a boolean support mask.

    Rows with empty support come out all-zero rather than raising; masked
    entries receive zero probability and zero gradient.
    """
    a = as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    any_support = mask.any(axis=-1, keepdims=True)
    safe = np.where(mask, a.data, -np.inf)
    rowmax = np.where(any_support, safe.max(axis=-1, keepdims=True), 0.0)
    # Shift before exponentiating only on the support; off-support logits may
    # exceed the support max arbitrarily and would overflow.
    shifted = np.where(mask, a.data - rowmax, 0.0)
    expo = np.where(mask, np.exp(shifted), 0.0)
    denom = expo.sum(axis=-1, keepdims=True)
    out = np.divide(expo, denom, out=np.zeros_like(expo), where=denom > 0)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _result("masked_softmax", out, (a,), vjp)


def idle_softmax(logits) -> Tensor:
    """Softmax over the last axis against an implicit extra zero logit.

    The implicit slot keeps the returned probabilities summing to strictly
    less than one per row.
    """
    a = as_tensor(logits)
    rowmax = np.maximum(a.data.max(axis=-1, keepdims=True), 0.0)
    expo = np.exp(a.data - rowmax)
    denom = np.exp(-rowmax) + expo.sum(axis=-1, keepdims=True)
    out = expo / denom
    # Saturated rows can round to a sum one ulp above 1; shave them back so
    # the below-one guarantee holds exactly, not just to rounding error.
    for _ in range(4):
        over = out.sum(axis=-1, keepdims=True) > 1.0
        if not over.any():
            break
        out = np.where(over, out * (1.0 - 2.0 ** -50), out)

    def vjp(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _result("idle_softmax", out, (a,), vjp)


# ---------------------------------------------------------------------------
# backward

def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse-mode gradient accumulation into ``.grad`` of every tensor reached.

    The loss must be a scalar recorded on the given tape. Each record is
    visited exactly once, in reverse execution order.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, vjp in reversed(tape.records):
        if out.grad is None:
            continue
        grads = vjp(out.grad)
        for tensor, grad in zip(inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            # No in-place accumulation: vjp outputs may alias upstream buffers.
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    """Adam moment accumulators; one slot per parameter, allocated lazily."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: list[Tensor],
              grads: list[np.ndarray] | None = None,
              maximize: bool = False) -> list[Tensor]:
    """One bias-corrected Adam update, in place. maximize negates the gradients."""
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ContractError("one gradient per parameter is required")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
        if m.shape != p.data.shape:
            raise ContractError("Adam state was initialized for different parameter shapes")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if maximize:
            g = -g
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# finite-difference checking

@dataclass
class GradCheckEntry:
    param: int
    index: int
    analytic: float
    numeric: float
    rel_err: float
    kink: bool
    skipped: bool


def _rel_err(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale < 1e-6 or abs(a - b) < 1e-9:
        return 0.0
    return abs(a - b) / scale


def gradcheck(fn, params: list[Tensor], h: float = 1e-5,
              rtol: float = 1e-5, kink_rtol: float = 1e-3,
              skip_eps: float = 1e-6) -> list[GradCheckEntry]:
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    Coordinates whose perturbed evaluations land a relu pre-activation within
    ``skip_eps`` of zero are skipped (the derivative is ill-defined there);
    coordinates whose +h/-h evaluations disagree on a relu sign pattern are
    held to the looser ``kink_rtol``. Raises AssertionError on failure and
    returns the full per-coordinate report on success.
    """
    zero_grads(params)
    with Tape() as tape:
        loss = fn()
    if loss.size != 1:
        raise ContractError("gradcheck requires a scalar loss")
    backward(tape, loss)
    base_min_abs = tape.relu_min_abs
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for p in params]

    def eval_at() -> tuple[float, list[np.ndarray], float]:
        with Tape() as t:
            value = fn()
        return value.item(), t.relu_masks, t.relu_min_abs

    entries: list[GradCheckEntry] = []
    failures: list[str] = []
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus, masks_plus, min_plus = eval_at()
            flat[idx] = orig - h
            f_minus, masks_minus, min_minus = eval_at()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            ana = float(analytic[pi].reshape(-1)[idx])
            kink = len(masks_plus) != len(masks_minus) or any(
                mp.shape != mm.shape or not np.array_equal(mp, mm)
                for mp, mm in zip(masks_plus, masks_minus))
            # Excluded: a perturbed run sits within skip_eps of a relu kink, or
            # the base point itself does and this coordinate straddles it.
            skipped = (min(min_plus, min_minus) < skip_eps
                       or (kink and base_min_abs < skip_eps))
            err = _rel_err(ana, numeric)
            entries.append(GradCheckEntry(pi, idx, ana, numeric, err, kink, skipped))
            if skipped:
                continue
            tol = kink_rtol if kink else rtol
            if err >= tol:
                failures.append(
                    f"param {pi} index {idx}: analytic {ana:.10g} vs numeric "
                    f"{numeric:.10g} (rel err {err:.3g}, tol {tol:g}, kink={kink})")
    if failures:
        raise AssertionError("gradient check failed:\n" + "\n".join(failures[:20]))
    return entries
