"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Just enough to express the bag encoder / text decoder and train it: 2-D
matmuls, row softmax, layer norm, embedding lookup, slicing/concat, and a
PAD-aware NLL loss. The graph is rebuilt on every forward pass
(define-by-run); ``backward`` walks the recorded nodes in reverse
topological order and accumulates gradients into ``requires_grad`` leaves.

Backward rules are pure functions from the incoming gradient to per-parent
gradients, so calling ``backward`` twice on freshly built graphs simply
accumulates leaf gradients additively.

Training code runs the engine in float32; the gradient-check harness in the
test suite runs the identical ops in float64.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NotScalar(AutodiffError):
    pass


class NonFiniteValue(AutodiffError):
    pass


class IndexOutOfRange(AutodiffError):
    pass


# Forward outputs are checked for NaN/Inf unless this is switched off.
# Cheap at desk scale and turns silent numeric blowups into hard errors.
CHECK_FINITE = True

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense real tensor plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _node(out_data: np.ndarray, parents, backward_fn) -> Tensor:
    """Wrap an op result, recording parents + backward rule when tracking."""
    if CHECK_FINITE and not np.all(np.isfinite(out_data)):
        raise NonFiniteValue("op produced NaN/Inf on finite inputs")
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Populate ``grad`` of every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar (shape ``()``). Gradients accumulate at
    fan-out, and across repeated calls, until ``zero_grad``.
    """
    if loss.shape != ():
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")

    # Iterative post-order DFS; graphs are deep for long sequences.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
        elif node.requires_grad:
            node.accumulate_grad(g)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), back)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeMismatch(f"transpose needs a 2-D operand, got {x.shape}")

    def back(g):
        return (g.T,)

    return _node(x.data.T.copy(), (x,), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a 1-D bias broadcast over the rows of ``a``."""
    if a.shape == b.shape:
        def back(g):
            return g, g
    elif a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        def back(g):
            return g, g.sum(axis=0)
    else:
        raise ShapeMismatch(f"add shapes incompatible: {a.shape} + {b.shape}")
    return _node(a.data + b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul shapes differ: {a.shape} * {b.shape}")

    def back(g):
        return g * b.data, g * a.data

    return _node(a.data * b.data, (a, b), back)


def add_constant(x: Tensor, c: np.ndarray) -> Tensor:
    """Add a constant array (no gradient through ``c``); used for attention masks."""
    c = np.asarray(c, dtype=x.dtype)
    if c.shape != x.shape:
        raise ShapeMismatch(f"add_constant shapes differ: {x.shape} + {c.shape}")

    def back(g):
        return (g,)

    return _node(x.data + c, (x,), back)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        return (g * c,)

    return _node(x.data * c, (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return _node(np.where(mask, x.data, 0.0), (x,), back)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction; rows sum to 1."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"softmax_rows needs a 2-D operand, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)

    def back(g):
        # J^T g per row: s * (g - <g, s>)
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _node(s, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization with learned gain/bias."""
    if x.data.ndim != 2:
        raise ShapeMismatch(f"layer_norm needs a 2-D operand, got {x.shape}")
    n = x.shape[1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeMismatch("layer_norm gain/bias must match the row width")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def back(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _node(xhat * gamma.data + beta.data, (x, gamma, beta), back)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; backward scatter-adds into the table gradient."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeMismatch("embedding_lookup takes a flat id list")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexOutOfRange(f"id outside [0, {table.shape[0]})")

    def back(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, idx, g)
        return (dt,)

    return _node(table.data[idx].copy(), (table,), back)


def concat_rows(parts: list[Tensor]) -> Tensor:
    return _concat(parts, axis=0)


def concat_cols(parts: list[Tensor]) -> Tensor:
    return _concat(parts, axis=1)


def _concat(parts: list[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeMismatch("concat of zero tensors")
    sizes = [p.shape[axis] for p in parts]

    def back(g):
        out, at = [], 0
        for s in sizes:
            sl = (slice(at, at + s),) if axis == 0 else (slice(None), slice(at, at + s))
            out.append(g[sl])
            at += s
        return tuple(out)

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def slice_rows(x: Tensor, i0: int, i1: int) -> Tensor:
    return _slice(x, i0, i1, axis=0)


def slice_cols(x: Tensor, i0: int, i1: int) -> Tensor:
    return _slice(x, i0, i1, axis=1)


def _slice(x: Tensor, i0: int, i1: int, axis: int) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeMismatch(f"slice needs a 2-D operand, got {x.shape}")
    if not (0 <= i0 <= i1 <= x.shape[axis]):
        raise ShapeMismatch(f"slice [{i0}:{i1}] outside axis of size {x.shape[axis]}")
    sl = (slice(i0, i1),) if axis == 0 else (slice(None), slice(i0, i1))

    def back(g):
        dx = np.zeros_like(x.data)
        dx[sl] = g
        return (dx,)

    return _node(x.data[sl].copy(), (x,), back)


def sum_all(x: Tensor) -> Tensor:
    def back(g):
        return (np.full_like(x.data, g),)

    return _node(np.asarray(x.data.sum(), dtype=x.dtype), (x,), back)


def nll_loss(logits: Tensor, targets, ignore_id: int) -> Tensor:
    """Mean negative log-likelihood over non-ignored positions.

    ``targets[t] == ignore_id`` contributes neither loss nor gradient; if
    every position is ignored the loss is exactly 0 with zero gradient.
    """
    if logits.data.ndim != 2:
        raise ShapeMismatch(f"nll_loss needs N x V logits, got {logits.shape}")
    tgt = np.asarray(targets, dtype=np.int64)
    if tgt.shape != (logits.shape[0],):
        raise ShapeMismatch("one target per logits row required")
    n, v = logits.shape
    valid = tgt != ignore_id
    checked = tgt[valid]
    if checked.size and (checked.min() < 0 or checked.max() >= v):
        raise IndexOutOfRange(f"target id outside [0, {v})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    n_valid = int(valid.sum())
    if n_valid == 0:
        loss = np.asarray(0.0, dtype=logits.dtype)
    else:
        loss = np.asarray(-logp[valid, tgt[valid]].mean(), dtype=logits.dtype)

    def back(g):
        if n_valid == 0:
            return (np.zeros_like(logits.data),)
        soft = np.exp(logp)
        d = np.zeros_like(logits.data)
        d[valid] = soft[valid]
        d[valid, tgt[valid]] -= 1.0
        return (d * (g / n_valid),)

    return _node(loss, (logits,), back)


def log_softmax_last_row(logits_row: np.ndarray) -> np.ndarray:
    """Plain-numpy log softmax of a 1-D logits vector (decoding helper)."""
    shifted = logits_row - logits_row.max()
    return shifted - math.log(np.exp(shifted).sum())
