"""Parameter management and the small neural building blocks.

Parameters are registered once in a ``ParameterStore`` under unique
dotted names; initialization draws from the store's own generator in
registration order, so a (seed, architecture) pair fully determines the
starting weights.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import ConfigError, ContractViolation
from .tensor import Tensor, concat


class ParameterStore:
    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}

    def param(self, name: str, shape: tuple[int, ...], init: str = "auto",
              scale: float | None = None) -> Tensor:
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if init == "zeros":
            data = np.zeros(shape)
        elif init == "auto":
            std = scale if scale is not None else 1.0 / math.sqrt(max(shape[0], 1))
            data = self._rng.normal(0.0, std, size=shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def n_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        missing = set(self.params) - set(state)
        if strict and missing:
            raise ConfigError(f"checkpoint missing parameters: {sorted(missing)[:5]} ...")
        for name, value in state.items():
            if name not in self.params:
                if strict:
                    raise ConfigError(f"unexpected parameter {name!r} in checkpoint")
                continue
            p = self.params[name]
            if p.data.shape != value.shape:
                raise ConfigError(
                    f"shape mismatch for {name!r}: {p.data.shape} vs {value.shape}"
                )
            p.data = np.asarray(value, dtype=np.float64).copy()


@contextmanager
def frozen(store: ParameterStore):
    """Temporarily drop requires_grad on all parameters.

    Inference paths run inside this context so forward passes skip
    closure construction entirely; values are unchanged.
    """
    flags = [(p, p.requires_grad) for p in store.params.values()]
    for p, _ in flags:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in flags:
            p.requires_grad = flag


class Linear:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int,
                 scale: float | None = None):
        self.w = store.param(f"{name}.w", (d_in, d_out), scale=scale)
        self.b = store.param(f"{name}.b", (d_out,), init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class MLP:
    """Linear -> tanh -> Linear."""

    def __init__(self, store: ParameterStore, name: str, d_in: int, d_hidden: int,
                 d_out: int):
        self.lin1 = Linear(store, f"{name}.lin1", d_in, d_hidden)
        self.lin2 = Linear(store, f"{name}.lin2", d_hidden, d_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x).tanh())


class LSTMCell:
    """Standard LSTM cell; gates sigmoid-squashed, candidate tanh-squashed.

    One cell backs every recurrent block in the pipeline. A single step
    from a zero state is also how per-edge features are summarized, since
    an edge carries no sequence of its own.
    """

    def __init__(self, store: ParameterStore, name: str, d_in: int, d_hidden: int):
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.w_x = store.param(f"{name}.w_x", (d_in, 4 * d_hidden))
        self.w_h = store.param(f"{name}.w_h", (d_hidden, 4 * d_hidden))
        self.b = store.param(f"{name}.b", (4 * d_hidden,), init="zeros")

    def step(self, x: Tensor, state: tuple[Tensor, Tensor] | None = None):
        """One update. ``x`` is (B, d_in); returns (h, c), each (B, d_hidden)."""
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ContractViolation(
                f"expected input (B, {self.d_in}), got {x.shape}"
            )
        B, H = x.shape[0], self.d_hidden
        if state is None:
            h = Tensor(np.zeros((B, H)))
            c = Tensor(np.zeros((B, H)))
        else:
            h, c = state
            if h.shape != (B, H) or c.shape != (B, H):
                raise ContractViolation(
                    f"state shapes {h.shape}/{c.shape} do not match (B={B}, H={H})"
                )
        z = x @ self.w_x + h @ self.w_h + self.b
        i = z[:, 0:H].sigmoid()
        f = z[:, H:2 * H].sigmoid()
        o = z[:, 2 * H:3 * H].sigmoid()
        g = z[:, 3 * H:4 * H].tanh()
        c_next = f * c + i * g
        h_next = o * c_next.tanh()
        return h_next, c_next

    def run(self, sequence: Tensor) -> Tensor:
        """Process a (T, d_in) sequence; returns the (T, d_hidden) hidden stack."""
        hiddens = []
        state = None
        for t in range(sequence.shape[0]):
            h, c = self.step(sequence[t:t + 1, :], state)
            state = (h, c)
            hiddens.append(h)
        return concat(hiddens, axis=0)

    def run_steps(self, steps: list[Tensor]) -> list[Tensor]:
        """Process a sequence of (B, d_in) inputs; returns hiddens per step.

        Equivalent to running B independent sequences in lockstep, which
        keeps the per-step Python overhead independent of B.
        """
        hiddens = []
        state = None
        for x in steps:
            h, c = self.step(x, state)
            state = (h, c)
            hiddens.append(h)
        return hiddens


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Row-stochastic weights softmax(q k^T / sqrt(d))."""
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise ContractViolation(f"incompatible attention shapes {q.shape} x {k.shape}")
    scale = 1.0 / math.sqrt(q.shape[1])
    return ((q @ k.T) * scale).softmax(axis=1)


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention; rows are convex combinations of v rows."""
    if k.shape[0] != v.shape[0]:
        raise ContractViolation(f"key/value row counts differ: {k.shape} vs {v.shape}")
    return attention_weights(q, k) @ v


class SelfAttention:
    def __init__(self, store: ParameterStore, name: str, d_in: int, d_out: int):
        self.wq = store.param(f"{name}.wq", (d_in, d_out))
        self.wk = store.param(f"{name}.wk", (d_in, d_out))
        self.wv = store.param(f"{name}.wv", (d_in, d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return attention(x @ self.wq, x @ self.wk, x @ self.wv)


class CrossAttention:
    def __init__(self, store: ParameterStore, name: str, d_q: int, d_kv: int, d_out: int):
        self.wq = store.param(f"{name}.wq", (d_q, d_out))
        self.wk = store.param(f"{name}.wk", (d_kv, d_out))
        self.wv = store.param(f"{name}.wv", (d_kv, d_out))

    def __call__(self, queries: Tensor, context: Tensor) -> Tensor:
        return attention(queries @ self.wq, context @ self.wk, context @ self.wv)
