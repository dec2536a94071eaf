"""Finite-difference verification of reverse-mode gradients.

``check_gradients`` evaluates a scalar-valued function twice per
parameter element (central differences) and compares against one
reverse-mode sweep. The function under test must be deterministic:
freeze any noise source before checking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .nn import ParameterStore
from .tensor import Tensor


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float

    def passed(self, tol: float) -> bool:
        return self.max_rel_err <= tol


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float
    step: float

    @property
    def passed(self) -> bool:
        return all(e.passed(self.tol) for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def format(self) -> str:
        width = max([len(e.name) for e in self.entries] + [9])
        lines = [
            f"{'parameter':<{width}}  {'max rel err':>12}  {'status':>6}",
            "-" * (width + 24),
        ]
        for e in self.entries:
            status = "ok" if e.passed(self.tol) else "FAIL"
            lines.append(f"{e.name:<{width}}  {e.max_rel_err:>12.3e}  {status:>6}")
        lines.append(
            f"overall: {'PASS' if self.passed else 'FAIL'} "
            f"(tol {self.tol:g}, step {self.step:g})"
        )
        return "\n".join(lines)


def relative_error(a: float, b: float, floor: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(
    f: Callable[[], Tensor],
    store: ParameterStore,
    names: Sequence[str] | None = None,
    tol: float = 1e-5,
    step: float = 1e-6,
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` with central differences.

    ``floor`` bounds the relative-error denominator from below so that
    near-zero gradient components are judged on an absolute scale of
    ``tol * floor`` instead of blowing up the ratio.
    """
    selected = list(names) if names is not None else list(store.params)
    store.zero_grad()
    loss = f()
    loss.backward()
    analytic = {
        name: (store[name].grad.copy() if store[name].grad is not None
               else np.zeros_like(store[name].data))
        for name in selected
    }

    entries = []
    for name in selected:
        p = store[name]
        flat = p.data.reshape(-1)
        worst = (0.0, (0,), 0.0, 0.0)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = float(f().data)
            flat[i] = keep - step
            down = float(f().data)
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            err = relative_error(a, numeric, floor)
            if err >= worst[0]:
                worst = (err, np.unravel_index(i, p.data.shape), a, numeric)
        entries.append(GradCheckEntry(name, worst[0], worst[1], worst[2], worst[3]))
    return GradCheckReport(entries, tol=tol, step=step)
