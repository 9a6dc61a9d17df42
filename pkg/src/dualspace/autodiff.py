"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Only the handful of ops the MLP/GAN/autoencoder graphs need are provided.
Ops record onto the innermost active :class:`Tape` (a thread-local stack)
whenever one of their inputs requires a gradient; outside a tape they are
plain value computations.

    with Tape() as tape:
        loss = mse_loss(matmul(x, w), y)
    backward(loss, tape)
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

BCE_EPS = 1e-7


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


class TapeError(AutodiffError, RuntimeError):
    pass


class Tensor:
    """Dense float64 array with an accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


class Tape:
    """Records operations in execution order; rebuilt for every forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, inputs, output: Tensor, backward_fn) -> None:
        if self.consumed:
            raise TapeError("cannot record onto a consumed tape")
        output.node_id = len(self.nodes)
        self.nodes.append(_Node(inputs, output, backward_fn))


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _check_finite(values: np.ndarray, op: str) -> None:
    # NaN/Inf always propagate into the sum; only |values| ~ 1e308 trips it falsely
    if not math.isfinite(values.sum()):
        raise NonFiniteError(f"{op} produced non-finite values")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, values: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(values, op)
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = values
    out.name = None
    out.node_id = None
    out.requires_grad = needs_grad
    out.grad = None
    tape = active_tape()
    if needs_grad and tape is not None:
        tape.record(tuple(inputs), out, backward_fn)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data

    def back(g):
        return g @ bv.T, av.T @ g

    return _make("matmul", av @ bv, (a, b), back)


def add_row_broadcast(a: Tensor, bias: Tensor) -> Tensor:
    a, bias = _as_tensor(a), _as_tensor(bias)
    if a.data.ndim != 2 or bias.data.ndim != 1 or a.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_row_broadcast shape mismatch: {a.shape} + {bias.shape}")

    def back(g):
        return g, g.sum(axis=0)

    return _make("add_row_broadcast", a.data + bias.data, (a, bias), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    av = a.data
    return _make("square", av * av, (a,), lambda g: (2.0 * av * g,))


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _make("sum_all", np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    a = _as_tensor(a)
    av = a.data
    # slope < 1, so the max picks x for x > 0 and slope*x otherwise

    def back(g):
        # subgradient at exactly 0 is `slope`; arithmetic mask avoids branchy np.where
        d = (av > 0).astype(np.float64)
        d *= 1.0 - slope
        d += slope
        d *= g
        return (d,)

    return _make("leaky_relu", np.maximum(av, slope * av), (a,), back)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = _stable_sigmoid(a.data)
    return _make("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _make("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def identity(a: Tensor) -> Tensor:
    return _as_tensor(a)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def back(g):
        gp = (2.0 / n) * float(g) * diff
        return gp, -gp

    return _make("mse_loss", np.array(np.mean(diff * diff)), (pred, target), back)


def bce_loss(prob: Tensor, target: Tensor, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy on probabilities clamped to [eps, 1 - eps].

    The target is treated as a constant.
    """
    prob, target = _as_tensor(prob), _as_tensor(target)
    if prob.shape != target.shape:
        raise ShapeError(f"bce_loss shape mismatch: {prob.shape} vs {target.shape}")
    raw = prob.data
    p = np.clip(raw, eps, 1.0 - eps)
    y = target.data
    n = p.size
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    inside = (raw >= eps) & (raw <= 1.0 - eps)

    def back(g):
        gp = float(g) / n * (-(y / p) + (1.0 - y) / (1.0 - p))
        return gp * inside, None

    return _make("bce_loss", np.array(value), (prob, target), back)


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on ``tape``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("tape already consumed by an earlier backward()")
    if loss.node_id is None or loss.node_id >= len(tape.nodes) or tape.nodes[loss.node_id].output is not loss:
        raise TapeError("loss was not produced on this tape")
    tape.consumed = True

    # adjoints of intermediates live here; leaves accumulate into .grad
    adjoint: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node_id in range(loss.node_id, -1, -1):
        g = adjoint.pop(node_id, None)
        if g is None:
            continue
        node = tape.nodes[node_id]
        grads = node.backward_fn(g)
        for inp, gi in zip(node.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node_id is not None and inp.node_id < node_id and tape.nodes[inp.node_id].output is inp:
                prev = adjoint.get(inp.node_id)
                adjoint[inp.node_id] = gi if prev is None else prev + gi
            else:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += gi


def value_and_grad(fn: Callable[[], Tensor], params: Iterable[Tensor]) -> float:
    """Zero the grads of ``params``, evaluate ``fn`` on a fresh tape, backprop."""
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    return loss.item()


def finite_diff_check(f, params, h: float = 1e-5) -> float:
    """Max of |analytic - central difference| / max(1, |analytic|) over all entries.

    ``f`` maps the parameter collection to a scalar Tensor. ``params`` is a
    ParamSet or any mapping / iterable of Tensors; values are perturbed in
    place and restored.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-7, 1e-3], got {h}")
    tensors = list(params.values()) if hasattr(params, "values") else list(params)

    value_and_grad(lambda: f(params), tensors)
    analytic = [t.grad.copy() for t in tensors]

    def evaluate() -> float:
        v = f(params).item()
        if not math.isfinite(v):
            raise NonFiniteError("f evaluated to a non-finite value")
        return v

    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            worst = max(worst, err)
    return worst
