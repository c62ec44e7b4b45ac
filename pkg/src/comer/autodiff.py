"""Dense tensors with reverse-mode automatic differentiation.

Define-by-run tape: each operation records its parent tensors and a backward
closure on the tensor it produces; ``Tensor.backward`` walks the graph once in
reverse topological order and accumulates gradients into the leaves.

Only the operations the model actually needs are provided.  Arithmetic is
float64 throughout; gradient checks assume it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], tuple] | None = None,
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every reachable leaf.

        ``self`` must be scalar-valued.  Visits each node exactly once, in
        reverse topological order.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # Convenience operator sugar; the module-level functions do the work.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _result(data, parents: tuple[Tensor, ...], backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (),
                  _backward=backward if req else None)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for (m,k)@(k,n) and matrix-vector (m,k)@(k,)."""
    if a.data.ndim == 2 and b.data.ndim == 2:
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {a.data.shape} vs {b.data.shape}")
        out = a.data @ b.data

        def backward(g):
            return g @ b.data.T, a.data.T @ g

    elif a.data.ndim == 2 and b.data.ndim == 1:
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {a.data.shape} vs {b.data.shape}")
        out = a.data @ b.data

        def backward(g):
            return np.outer(g, b.data), a.data.T @ g

    else:
        raise ShapeError(f"matmul: unsupported ranks {a.data.shape} vs {b.data.shape}")
    return _result(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes differ, {a.data.shape} vs {b.data.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes differ, {a.data.shape} vs {b.data.shape}")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def smul(a: Tensor, s: float) -> Tensor:
    """Multiply by a python constant (no gradient to the constant)."""
    return _result(a.data * s, (a,), lambda g: (g * s,))


def linear(W: Tensor, b: Tensor, x: Tensor) -> Tensor:
    """Affine map W @ x + b for a (m,n) weight and (n,) input, as one node."""
    if W.data.ndim != 2 or x.data.ndim != 1 or W.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {W.data.shape} and {x.data.shape}")
    if b.data.shape != (W.data.shape[0],):
        raise ShapeError(f"linear: bias shape {b.data.shape} vs {W.data.shape[0]} outputs")
    out = W.data @ x.data + b.data

    def backward(g):
        return np.outer(g, x.data), g, W.data.T @ g

    return _result(out, (W, b, x), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


# When set (by grad_check), every relu appends its activation sign pattern so
# kink crossings between probe points can be detected and excluded.
_relu_sign_trace: list[bytes] | None = None


def relu(x: Tensor) -> Tensor:
    # relu'(0) = 0 by convention.
    mask = x.data > 0.0
    if _relu_sign_trace is not None:
        _relu_sign_trace.append(mask.tobytes())
    out = np.maximum(x.data, 0.0)
    return _result(out, (x,), lambda g: (g * mask,))


def softmax(v: Tensor) -> Tensor:
    """Stable softmax over a 1-D tensor (max subtraction)."""
    if v.data.ndim != 1 or v.data.size == 0:
        raise ShapeError(f"softmax expects a non-empty vector, got shape {v.data.shape}")
    z = v.data - v.data.max()
    e = np.exp(z)
    out = e / e.sum()

    def backward(g):
        return (out * (g - np.dot(g, out)),)

    return _result(out, (v,), backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise ShapeError("concat of zero tensors")
    for x in xs[1:]:
        if x.data.ndim != xs[0].data.ndim:
            raise ShapeError("concat: rank mismatch")
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(xs))
        )

    return _result(out, tuple(xs), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; gradient routes back into place."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = x.data[idx]

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _result(out, (x,), backward)


def row(x: Tensor, i: int) -> Tensor:
    """Row i of a 2-D tensor as a vector."""
    out = x.data[i]

    def backward(g):
        full = np.zeros_like(x.data)
        full[i] = g
        return (full,)

    return _result(out, (x,), backward)


def stack_rows(xs: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a (len, d) matrix."""
    out = np.stack([x.data for x in xs])

    def backward(g):
        return tuple(g[i] for i in range(len(xs)))

    return _result(out, tuple(xs), backward)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return _result(x.data.T, (x,), lambda g: (g.T,))


def sum_(x: Tensor) -> Tensor:
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.data.shape).copy(),))


def stop_gradient(x: Tensor) -> Tensor:
    """Forward identity; contributes exactly zero gradient upstream."""
    return Tensor(x.data, requires_grad=False)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode scales survivors by 1/(1-p); eval is identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if mode == "eval" or p == 0.0:
        return _result(x.data, (x,), lambda g: (g,))
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], fused for stability."""
    n = logits.data.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} logits")
    m = logits.data.max()
    lse = m + np.log(np.exp(logits.data - m).sum())
    loss = lse - logits.data[target]

    def backward(g):
        p = np.exp(logits.data - lse)
        p[target] -= 1.0
        return (g * p,)

    return _result(np.asarray(loss), (logits,), backward)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(1, |a|, |b|) over all coordinates."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _eval_with_relu_trace(f, inputs) -> tuple[float, bytes]:
    global _relu_sign_trace
    _relu_sign_trace = []
    try:
        value = f(*inputs).item()
        trace = b"".join(_relu_sign_trace)
    finally:
        _relu_sign_trace = None
    return value, trace


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    exclude_relu_kinks: bool = False,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` rebuilds its graph from ``inputs`` on every call and must return a
    scalar Tensor.  With ``exclude_relu_kinks``, coordinates whose +-eps probes
    land on different sides of a relu kink are skipped: the central difference
    straddles a non-differentiable point there and checks nothing.
    """
    for x in inputs:
        x.zero_grad()
    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

    worst = 0.0
    for x, ana in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        ana_flat = ana.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp, trace_p = _eval_with_relu_trace(f, inputs)
            flat[i] = orig - eps
            fm, trace_m = _eval_with_relu_trace(f, inputs)
            flat[i] = orig
            if exclude_relu_kinks and trace_p != trace_m:
                continue
            num = (fp - fm) / (2.0 * eps)
            worst = max(worst, rel_error(ana_flat[i], num))
    return worst
