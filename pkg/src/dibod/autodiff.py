"""Dense float64 tensors with reverse-mode automatic differentiation.

Every tensor op executed while a Tape is active appends one node to it.
Creation order is topological order, so the backward pass is a single
reversed sweep over the node list.  Without an active tape, ops run as
plain numpy (evaluation mode).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericDomainError(ValueError):
    """Input left the op's numeric domain (e.g. log of a non-positive value)."""


class ContractError(RuntimeError):
    """An operation precondition was violated."""


_EPS = 1e-12

_state = threading.local()


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Append-only record of tensor ops; independent tapes never share state."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def append(self, node: "_Node") -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1


class _Node:
    __slots__ = ("inputs", "backward_fn", "out")

    def __init__(self, inputs: tuple["Tensor", ...], backward_fn: Callable, out: "Tensor"):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.out = out


class Tensor:
    """Row-major float64 array plus an optional slot on the active tape."""

    __slots__ = ("data", "grad", "requires_grad", "tape_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.tape_id: int | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; constants are wrapped on the fly
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, Tensor(np.array(-1.0)))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    tape = active_tape()
    needs = any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if tape is not None and needs:
        out._tape = tape
        out.tape_id = tape.append(_Node(inputs, backward_fn, out))
    return out


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NumericDomainError(f"{op} produced non-finite values")


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def backward(g):
        _accum(a, _unbroadcast(g * bd, ad.shape))
        _accum(b, _unbroadcast(g * ad, bd.shape))

    return _record(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)
    _check_finite(out.data, "div")
    ad, bd = a.data, b.data

    def backward(g):
        _accum(a, _unbroadcast(g / bd, ad.shape))
        _accum(b, _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _record(out, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def backward(g):
        _accum(a, g @ bd.T)
        _accum(b, ad.T @ g)

    return _record(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T)

    def backward(g):
        _accum(a, g.T)

    return _record(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _record(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    _check_finite(out.data, "exp")
    od = out.data

    def backward(g):
        _accum(a, g * od)

    return _record(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericDomainError("log requires strictly positive input")
    out = Tensor(np.log(a.data))
    ad = a.data

    def backward(g):
        _accum(a, g / ad)

    return _record(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericDomainError("sqrt requires non-negative input")
    out = Tensor(np.sqrt(a.data))
    od = out.data

    def backward(g):
        _accum(a, g * 0.5 / np.maximum(od, _EPS))

    return _record(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s)

    def backward(g):
        _accum(a, g * s * (1.0 - s))

    return _record(out, (a,), backward)


def clip_min(a: Tensor, low: float) -> Tensor:
    """Elementwise max(a, low); gradient is zero where the clip engaged."""
    out = Tensor(np.maximum(a.data, low))
    mask = a.data > low

    def backward(g):
        _accum(a, g * mask)

    return _record(out, (a,), backward)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def backward(g):
        if axis is None:
            _accum(a, np.full(shape, float(g.reshape(-1)[0])))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, shape).copy())

    return _record(out, (a,), backward)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return div(tsum(a, axis=axis, keepdims=keepdims), Tensor(np.array(float(n))))


def softmax_rows(a: Tensor) -> Tensor:
    """Row-stochastic softmax with log-sum-exp stabilization."""
    x = a.data
    if x.ndim == 1:
        x = x.reshape(1, -1)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    squeeze = a.data.ndim == 1
    out = Tensor(s[0] if squeeze else s)

    def backward(g):
        gg = g.reshape(s.shape)
        dot = (gg * s).sum(axis=1, keepdims=True)
        ga = s * (gg - dot)
        _accum(a, ga[0] if squeeze else ga)

    return _record(out, (a,), backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = Tensor(shifted - lse)
    s = np.exp(out.data)

    def backward(g):
        _accum(a, g - s * g.sum(axis=1, keepdims=True))

    return _record(out, (a,), backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(a.data[idx])
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return _record(out, (a,), backward)


def scatter_rows(a: Tensor, idx: np.ndarray, num_rows: int) -> Tensor:
    """Place row i of `a` at row idx[i] of a zero matrix with num_rows rows."""
    idx = np.asarray(idx, dtype=np.intp)
    data = np.zeros((num_rows,) + a.data.shape[1:])
    data[idx] = a.data
    out = Tensor(data)

    def backward(g):
        _accum(a, g[idx])

    return _record(out, (a,), backward)


def take_cols(a: Tensor, col_idx: np.ndarray) -> Tensor:
    """out[i] = a[i, col_idx[i]] as a column vector."""
    col_idx = np.asarray(col_idx, dtype=np.intp)
    rows = np.arange(a.data.shape[0])
    out = Tensor(a.data[rows, col_idx].reshape(-1, 1))
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape)
        ga[rows, col_idx] = g.reshape(-1)
        _accum(a, ga)

    return _record(out, (a,), backward)


def segment_max(a: Tensor, segments: Sequence[tuple[int, int]]) -> Tensor:
    """Per-segment column-wise max over row ranges [lo, hi); gradient flows
    to the first argmax row of each segment."""
    data = np.stack([a.data[lo:hi].max(axis=0) for lo, hi in segments])
    argmaxes = [lo + a.data[lo:hi].argmax(axis=0) for lo, hi in segments]
    out = Tensor(data)
    shape = a.data.shape
    cols = np.arange(shape[1])

    def backward(g):
        ga = np.zeros(shape)
        for s, rows in enumerate(argmaxes):
            np.add.at(ga, (rows, cols), g[s])
        _accum(a, ga)

    return _record(out, (a,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.data.shape[0] for p in parts]

    def backward(g):
        ofs = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[ofs:ofs + n])
            ofs += n

    return _record(out, tuple(parts), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all entries."""
    d = sub(a, b)
    return tmean(mul(d, d))


def cross_entropy_rows(probs: Tensor, onehot: Tensor) -> Tensor:
    """Mean over rows of -sum(onehot * log probs); probs clamped at 1e-12."""
    logp = log(clip_min(probs, _EPS))
    return -tmean(tsum(mul(logp, onehot), axis=1))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Fused stable cross-entropy of row logits against integer labels."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.data.shape[0] != labels.shape[0]:
        raise DimensionError("logits/labels row mismatch")
    return -tmean(take_cols(log_softmax_rows(logits), labels))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into .grad of every trainable leaf.

    Repeated calls without zero_grad accumulate.  The loss must be a scalar
    recorded on a tape.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    if tape is None:
        if loss.requires_grad:
            raise ContractError("loss was computed outside any tape")
        return  # constant loss: all gradients are zero
    grads: dict[int, np.ndarray] = {loss.tape_id: np.ones_like(loss.data)}
    for node_id in range(loss.tape_id, -1, -1):
        g = grads.pop(node_id, None)
        if g is None:
            continue
        node = tape.nodes[node_id]
        # route: inputs that are tape nodes stash into `grads`; leaves into .grad
        saved = []
        for t in node.inputs:
            if t._tape is tape and t.tape_id is not None:
                saved.append((t, t.grad))
        node.backward_fn(g)
        for t, prev in saved:
            got = t.grad
            t.grad = prev
            if got is not None:
                delta = got if prev is None else got - prev
                if t.tape_id in grads:
                    grads[t.tape_id] = grads[t.tape_id] + delta
                else:
                    grads[t.tape_id] = delta


# ---------------------------------------------------------------------------
# parameters and optimizer
# ---------------------------------------------------------------------------

def parameter(data, rng: np.random.Generator | None = None,
              scale: float | None = None) -> Tensor:
    """Trainable leaf tensor; optionally filled ~U(-scale, scale) by rng."""
    if rng is not None:
        shape = tuple(data)
        s = scale if scale is not None else float(np.sqrt(6.0 / sum(shape)))
        data = rng.uniform(-s, s, size=shape)
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


class Adam:
    """Adam with bias correction; moment state persists across steps."""

    def __init__(self, params: Iterable[Tensor], lr: float = 0.001,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError("adam step with missing gradient")
            g = p.grad
            self.m[i] = self.b1 * self.m[i] + (1 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1 - self.b2) * g * g
            mhat = self.m[i] / (1 - self.b1 ** self.t)
            vhat = self.v[i] / (1 - self.b2 ** self.t)
            # rebind rather than mutate: backward closures hold the old array
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
