"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array and records, for every operation whose
inputs require gradients, a closure that propagates the output adjoint
back to the inputs. ``Tensor.backward`` topologically sorts the recorded
graph and runs the closures in reverse, accumulating into ``.grad``.

Everything is float64: the finite-difference checks used throughout the
test suite need the precision headroom.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NumericError

Axis = int | tuple[int, ...] | None


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev: tuple[Tensor, ...] = ()

    # -- graph plumbing ------------------------------------------------

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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # copy: g may alias another node's grad buffer or a view
            self.grad = np.array(g, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(self.grad, self.data.shape).copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse accumulation from a scalar output.

        Populates ``.grad`` on every ``requires_grad`` tensor reachable
        from this one. Raises on non-scalar outputs and on non-finite
        loss values so divergence is caught at the source.
        """
        if self.data.size != 1:
            raise ContractViolation(
                f"backward() needs a scalar loss, got shape {self.shape}"
            )
        if not np.isfinite(self.data).all():
            raise NumericError(f"non-finite loss: {float(self.data.reshape(-1)[0])}")
        # Iterative topological sort; graphs from recurrent nets exceed
        # the default recursion limit.
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if callable(node._backward) and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            out = _op(self.data + other, (self,))
            if out._backward is not _NOOP:

                def _backward_scalar(g):
                    self._accumulate(g)

                out._backward = _backward_scalar
            return out
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _op(np.add(self.data, other.data), (self, other))
        if out._backward is not _NOOP:

            def _backward(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g, other.shape))

            out._backward = _backward
        return out

    def __radd__(self, other):
        return self + other

    def __neg__(self):
        out = _op(-self.data, (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(-g)

            out._backward = _backward
        return out

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _op(np.subtract(self.data, other.data), (self, other))
        if out._backward is not _NOOP:

            def _backward(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(-g, other.shape))

            out._backward = _backward
        return out

    def __rsub__(self, other):
        return Tensor(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _op(np.multiply(self.data, other.data), (self, other))
        if out._backward is not _NOOP:

            def _backward(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g * other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(_unbroadcast(g * self.data, other.shape))

            out._backward = _backward
        return out

    def __rmul__(self, other):
        return self * other

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = _op(np.divide(self.data, other.data), (self, other))
        if out._backward is not _NOOP:

            def _backward(g):
                if self.requires_grad:
                    self._accumulate(_unbroadcast(g / other.data, self.shape))
                if other.requires_grad:
                    other._accumulate(
                        _unbroadcast(-g * self.data / (other.data**2), other.shape)
                    )

            out._backward = _backward
        return out

    def __rtruediv__(self, other):
        return Tensor(other) / self

    def __pow__(self, exponent: float):
        if not isinstance(exponent, (int, float)):
            raise ContractViolation("only scalar exponents are supported")
        out = _op(self.data**exponent, (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g * exponent * self.data ** (exponent - 1))

            out._backward = _backward
        return out

    def __matmul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ContractViolation(
                f"matmul expects 2-d operands, got {self.shape} @ {other.shape}"
            )
        if self.shape[1] != other.shape[0]:
            raise ContractViolation(
                f"matmul inner dimensions differ: {self.shape} @ {other.shape}"
            )
        out = _op(self.data @ other.data, (self, other))
        if out._backward is not _NOOP:

            def _backward(g):
                if self.requires_grad:
                    self._accumulate(g @ other.data.T)
                if other.requires_grad:
                    other._accumulate(self.data.T @ g)

            out._backward = _backward
        return out

    # -- elementwise functions ------------------------------------------

    def exp(self):
        out = _op(np.exp(self.data), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g * out.data)

            out._backward = _backward
        return out

    def log(self):
        out = _op(np.log(self.data), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g / self.data)

            out._backward = _backward
        return out

    def sqrt(self):
        out = _op(np.sqrt(self.data), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g * 0.5 / out.data)

            out._backward = _backward
        return out

    def tanh(self):
        out = _op(np.tanh(self.data), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g * (1.0 - out.data**2))

            out._backward = _backward
        return out

    def sigmoid(self):
        # tanh form avoids overflow for large negative inputs
        out = _op(0.5 * (1.0 + np.tanh(0.5 * self.data)), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g * out.data * (1.0 - out.data))

            out._backward = _backward
        return out

    def softplus(self):
        # log(1 + e^x), computed stably for large |x|
        out = _op(np.logaddexp(0.0, self.data), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g * 0.5 * (1.0 + np.tanh(0.5 * self.data)))

            out._backward = _backward
        return out

    def abs(self):
        out = _op(np.abs(self.data), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g * np.sign(self.data))

            out._backward = _backward
        return out

    def clamp_min(self, floor: float):
        """Elementwise max(x, floor); gradient passes only where x > floor."""
        out = _op(np.maximum(self.data, floor), (self,))
        if out._backward is not _NOOP:
            mask = (self.data > floor).astype(np.float64)

            def _backward(g):
                self._accumulate(g * mask)

            out._backward = _backward
        return out

    # -- reductions ------------------------------------------------------

    def sum(self, axis: Axis = None, keepdims: bool = False):
        out = _op(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                if axis is None:
                    self._accumulate(np.broadcast_to(g, self.shape).copy())
                    return
                gg = g
                if not keepdims:
                    gg = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(gg, self.shape).copy())

            out._backward = _backward
        return out

    def mean(self, axis: Axis = None, keepdims: bool = False):
        n = self.size if axis is None else np.prod(
            [self.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def max(self, axis: int | None = None, keepdims: bool = False):
        """Max reduction; the gradient routes to the first argmax."""
        if axis is None:
            flat = self.reshape((self.size,))
            return flat.max(axis=0)
        out = _op(self.data.max(axis=axis, keepdims=keepdims), (self,))
        if out._backward is not _NOOP:
            idx = np.expand_dims(self.data.argmax(axis=axis), axis)

            def _backward(g):
                gg = g if keepdims else np.expand_dims(g, axis)
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                np.put_along_axis(
                    self.grad, idx,
                    np.take_along_axis(self.grad, idx, axis) + gg, axis)

            out._backward = _backward
        return out

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        out = _op(y, (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                dot = (g * y).sum(axis=axis, keepdims=True)
                self._accumulate(y * (g - dot))

            out._backward = _backward
        return out

    def log_softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        y = shifted - lse
        out = _op(y, (self,))
        if out._backward is not _NOOP:
            sm = np.exp(y)

            def _backward(g):
                self._accumulate(g - sm * g.sum(axis=axis, keepdims=True))

            out._backward = _backward
        return out

    # -- shape manipulation ----------------------------------------------

    def reshape(self, shape):
        out = _op(self.data.reshape(shape), (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                self._accumulate(g.reshape(self.shape))

            out._backward = _backward
        return out

    def transpose(self, axes=None):
        out = _op(self.data.transpose(axes), (self,))
        if out._backward is not _NOOP:
            inv = None if axes is None else np.argsort(axes)

            def _backward(g):
                self._accumulate(g.transpose(inv))

            out._backward = _backward
        return out

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, key):
        out = _op(self.data[key], (self,))
        if out._backward is not _NOOP:
            fancy = _is_fancy(key)

            def _backward(g):
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                if fancy:
                    np.add.at(self.grad, key, g)
                else:
                    self.grad[key] += g

            out._backward = _backward
        return out

    def take_rows_per_column(self, idx: np.ndarray):
        """Gather ``out[r, c] = x[idx[r, c], c]`` for a 2-d tensor.

        ``idx`` is a constant integer array; used for order-statistic
        pooling where row selection per channel comes from argsort.
        """
        if self.ndim != 2:
            raise ContractViolation("take_rows_per_column expects a 2-d tensor")
        cols = np.broadcast_to(np.arange(self.shape[1]), idx.shape)
        out = _op(self.data[idx, cols], (self,))
        if out._backward is not _NOOP:

            def _backward(g):
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                np.add.at(self.grad, (idx, cols), g)

            out._backward = _backward
        return out


def _is_fancy(key) -> bool:
    if isinstance(key, (np.ndarray, list)):
        return True
    if isinstance(key, tuple):
        return any(isinstance(k, (np.ndarray, list)) for k in key)
    return False


_NOOP = object()


def _op(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents
        out._backward = None
    else:
        out._backward = _NOOP  # sentinel: skip closure construction
    return out


# -- free functions ------------------------------------------------------


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractViolation("concat of an empty list")
    out = _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._backward is not _NOOP:
        sizes = [t.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)

        def _backward(g):
            for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(a, b)
                    t._accumulate(g[tuple(sl)])

        out._backward = _backward
    return out


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractViolation("stack of an empty list")
    out = _op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._backward is not _NOOP:

        def _backward(g):
            slices = np.moveaxis(g, axis, 0)
            for t, gi in zip(tensors, slices):
                if t.requires_grad:
                    t._accumulate(gi)

        out._backward = _backward
    return out


def backward(loss: Tensor, parameters: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Run reverse-mode from ``loss`` and return the full gradient map.

    Parameters not reachable from ``loss`` get an explicit zero gradient,
    so callers can hand the result straight to an optimizer.
    """
    loss.backward()
    grads: dict[str, np.ndarray] = {}
    for name, p in parameters.items():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        grads[name] = p.grad
    return grads
