"""Reverse-mode automatic differentiation on float64 numpy arrays.

A Tensor wraps an ndarray and, when gradients are enabled, records the
primitive that produced it as a closure over its parents. Calling
``backward()`` on a scalar loss walks the recorded graph once in reverse
topological order and accumulates gradients additively into every leaf
with ``requires_grad=True``.

Broadcasting is deliberately restricted: elementwise ops accept equal
shapes, a scalar on either side, or a trailing row vector against a 2-D
matrix. Anything else must be reshaped explicitly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    # row-vector broadcast against a matrix is the only other allowed form
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise ValueError(f"incompatible shapes for elementwise op: {a.shape} vs {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` by summing the broadcast axes."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return grad.sum()
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if grad.shape[ax] != n:  # n == 1 case
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._parents = ()
        out._backward = None
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        """Accumulate a gradient the caller may still reference (copied)."""
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def _accum_owned(self, g: np.ndarray) -> None:
        """Accumulate a freshly allocated gradient (adopted, no copy)."""
        if self.grad is None:
            self.grad = g
        else:
            self.grad += g

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        _check_broadcast(self.data, other.data)
        out = Tensor._from_op(self.data + other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        out._backward = backward
        return out

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        _check_broadcast(self.data, other.data)
        out = Tensor._from_op(self.data - other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum_owned(_unbroadcast(-g, other.data.shape))

        out._backward = backward
        return out

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        _check_broadcast(self.data, other.data)
        out = Tensor._from_op(self.data * other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum_owned(_unbroadcast(g * self.data, other.data.shape))

        out._backward = backward
        return out

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        _check_broadcast(self.data, other.data)
        out = Tensor._from_op(self.data / other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum_owned(_unbroadcast(-g * self.data / other.data**2, other.data.shape))

        out._backward = backward
        return out

    def __neg__(self):
        out = Tensor._from_op(-self.data, (self,), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(-g)

        out._backward = backward
        return out

    def __radd__(self, other):
        return Tensor(other) + self

    def __rsub__(self, other):
        return Tensor(other) - self

    def __rmul__(self, other):
        return Tensor(other) * self

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, exponent):
        return self.pow(exponent)

    def pow(self, exponent: float) -> "Tensor":
        """Elementwise power with a constant exponent."""
        p = float(exponent)
        if p != int(p) and np.any(self.data < 0):
            raise ValueError("fractional power of negative base")
        out = Tensor._from_op(self.data**p, (self,), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(g * p * self.data ** (p - 1))

        out._backward = backward
        return out

    # -- matrix ops ------------------------------------------------------------

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul requires 2-D operands; reshape first")
        out = Tensor._from_op(self.data @ other.data, (self, other), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(g @ other.data.T)
            if other.requires_grad:
                other._accum_owned(self.data.T @ g)

        out._backward = backward
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out = Tensor._from_op(self.data.reshape(shape), (self,), None)

        def backward(g):
            if self.requires_grad:
                self._accum(g.reshape(old))

        out._backward = backward
        return out

    # -- reductions --------------------------------------------------------------

    def sum(self, axis: int | None = None) -> "Tensor":
        out = Tensor._from_op(np.asarray(self.data.sum(axis=axis)), (self,), None)

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accum_owned(np.broadcast_to(g, self.data.shape).copy())
            else:
                self._accum_owned(np.broadcast_to(np.expand_dims(g, axis), self.data.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis: int | None = None) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # -- nonlinearities ------------------------------------------------------------

    def relu(self) -> "Tensor":
        # gradient defined as 0 at exactly 0
        mask = self.data > 0
        out = Tensor._from_op(np.where(mask, self.data, 0.0), (self,), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(g * mask)

        out._backward = backward
        return out

    def abs(self) -> "Tensor":
        out = Tensor._from_op(np.abs(self.data), (self,), None)
        sign = np.sign(self.data)  # 0 at exactly 0, matching the relu convention

        def backward(g):
            if self.requires_grad:
                self._accum_owned(g * sign)

        out._backward = backward
        return out

    def sigmoid(self) -> "Tensor":
        x = self.data
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        out = Tensor._from_op(s, (self,), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(g * s * (1.0 - s))

        out._backward = backward
        return out

    def exp(self) -> "Tensor":
        e = np.exp(self.data)
        out = Tensor._from_op(e, (self,), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(g * e)

        out._backward = backward
        return out

    def log(self) -> "Tensor":
        if np.any(self.data <= 0):
            raise ValueError("log of non-positive value")
        out = Tensor._from_op(np.log(self.data), (self,), None)

        def backward(g):
            if self.requires_grad:
                self._accum_owned(g / self.data)

        out._backward = backward
        return out

    # -- autodiff driver ---------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar; leaf gradients accumulate additively."""
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


# -- free-function primitives ----------------------------------------------------


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._from_op(s, (t,), None)

    def backward(g):
        if t.requires_grad:
            dot = (g * s).sum(axis=axis, keepdims=True)
            t._accum_owned(s * (g - dot))

    out._backward = backward
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor._from_op(np.concatenate(datas, axis=axis), tuple(tensors), None)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    out._backward = backward
    return out


def index_select(t: Tensor, indices) -> Tensor:
    """Gather rows of ``t`` (axis 0) at ``indices``."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor._from_op(t.data[idx], (t,), None)

    def backward(g):
        if t.requires_grad:
            acc = np.zeros_like(t.data)
            np.add.at(acc, idx, g)
            t._accum_owned(acc)

    out._backward = backward
    return out


def scatter_add(t: Tensor, indices, num_targets: int) -> Tensor:
    """Sum rows of ``t`` into ``num_targets`` output slots along axis 0."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape[0] != t.data.shape[0]:
        raise ValueError("one target index per input row required")
    shape = (num_targets,) + t.data.shape[1:]
    acc = np.zeros(shape)
    np.add.at(acc, idx, t.data)
    out = Tensor._from_op(acc, (t,), None)

    def backward(g):
        if t.requires_grad:
            t._accum_owned(g[idx])

    out._backward = backward
    return out


# -- weight container ---------------------------------------------------------------

WEIGHT_FORMAT_VERSION = 1


def save_weights(path: str | Path, tensors: dict[str, Tensor]) -> None:
    """Write named tensors as JSON with deterministic ordering."""
    doc = {
        "format_version": WEIGHT_FORMAT_VERSION,
        "tensors": [
            {
                "name": name,
                "shape": list(tensors[name].data.shape),
                "data": tensors[name].data.ravel().tolist(),
            }
            for name in sorted(tensors)
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_weights(path: str | Path) -> dict[str, Tensor]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != WEIGHT_FORMAT_VERSION:
        raise ValueError(f"unsupported weight format: {doc.get('format_version')}")
    out = {}
    for entry in doc["tensors"]:
        arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[entry["name"]] = Tensor(arr, requires_grad=True)
    return out
