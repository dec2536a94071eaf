"""Gradient fidelity audit: every primitive and both full losses.

Primitives are checked on random inputs in [-2, 2] (shifted positive
where required) at 1e-5 relative error; the complete coarse and fine
losses run on a frozen micro-batch (2 pairs, 3 instances, 2 sentences,
width 8) at 1e-3. Noise for the reparameterized latents is recorded
once and replayed, so the checked function is deterministic.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .fine import uncertainty_loss
from .gradcheck import GradCheckReport, check_gradients
from .models import CoarseModel, FineModel
from .nn import ParameterStore
from .scenes import GenerationConfig, generate_city
from .tensor import Tensor, concat, stack


class ReplayNoise:
    """Record-then-replay wrapper so noise draws repeat across evaluations."""

    def __init__(self, rng: np.random.Generator):
        self._rng = rng
        self._draws: list[np.ndarray] = []
        self._i = 0

    def rewind(self) -> None:
        self._i = 0

    def standard_normal(self, shape):
        if self._i == len(self._draws):
            self._draws.append(self._rng.standard_normal(shape))
        draw = self._draws[self._i]
        if draw.shape != tuple(shape):
            raise AssertionError("replayed draw shape mismatch")
        self._i += 1
        return draw


def _primitive_cases(rng: np.random.Generator):
    """(name, input array, op) triples covering every differentiable primitive."""
    a = rng.uniform(-2, 2, (3, 4))
    pos = rng.uniform(0.5, 2, (3, 4))
    other = Tensor(rng.uniform(-2, 2, (3, 4)))
    mat = Tensor(rng.uniform(-2, 2, (4, 2)))
    idx = np.array([[0, 1, 2, 0], [2, 0, 1, 1]])
    return [
        ("add", a, lambda t: t + other),
        ("sub", a, lambda t: t - other),
        ("mul", a, lambda t: t * other),
        ("div", pos, lambda t: other / t),
        ("neg", a, lambda t: -t),
        ("pow", pos, lambda t: t**2.5),
        ("sqrt", pos, lambda t: t.sqrt()),
        ("matmul", a, lambda t: t @ mat),
        ("exp", a, lambda t: t.exp()),
        ("log", pos, lambda t: t.log()),
        ("tanh", a, lambda t: t.tanh()),
        ("sigmoid", a, lambda t: t.sigmoid()),
        ("softplus", a, lambda t: t.softplus()),
        ("abs", a, lambda t: t.abs()),
        ("clamp_min", a, lambda t: t.clamp_min(0.25)),
        ("sum", a, lambda t: t.sum(axis=1)),
        ("mean", a, lambda t: t.mean(axis=0)),
        ("max", a, lambda t: t.max(axis=1)),
        ("softmax", a, lambda t: t.softmax(axis=1)),
        ("log_softmax", a, lambda t: t.log_softmax(axis=0)),
        ("reshape", a, lambda t: t.reshape((2, 6))),
        ("transpose", a, lambda t: t.T),
        ("getitem", a, lambda t: t[1:, ::2]),
        ("gather", a, lambda t: t[np.array([2, 0, 2])]),
        ("take_rows", a, lambda t: t.take_rows_per_column(idx)),
        ("concat", a, lambda t: concat([t, other], axis=0)),
        ("stack", a, lambda t: stack([t, other], axis=1)),
    ]


def check_primitives(tol: float = 1e-5) -> GradCheckReport:
    rng = np.random.default_rng(0xC17)
    entries = []
    for name, x0, op in _primitive_cases(rng):
        store = ParameterStore(seed=1)
        p = store.param(f"op.{name}", x0.shape)
        p.data = x0.copy()
        w = Tensor(rng.normal(size=op(Tensor(x0)).shape))
        report = check_gradients(lambda op=op, p=p, w=w: (op(p) * w).sum(),
                                 store, tol=tol)
        entries.extend(report.entries)
    return GradCheckReport(entries, tol=tol, step=1e-6)


# ns_max drives the spectrum length; 5 keeps one high-pass bin alive
# (a length-3 spectrum has an empty mask, deadening the third branch),
# while the generated micro submaps still hold exactly 3 instances.
MICRO_CONFIG = dict(
    feat_dim=8, edge_dim=8, geo_dim=4, branch_dim=8, global_dim=8,
    proj_dim=8, fuse_dim=8, head_hidden=4,
    n_submaps=2, n_queries=2, ns_min=3, ns_max=5, nq_min=2, nq_max=2,
)


def _micro_batch(config: RunConfig):
    gen = GenerationConfig(n_submaps=2, n_queries=2, ns_min=3, ns_max=3,
                           nq_min=2, nq_max=2, extent=config.extent)
    submaps, queries = generate_city(7, gen)
    index = {s.id: s for s in submaps}
    return [(index[q.gt_submap_id], q) for q in queries]


def check_coarse_loss(tol: float = 1e-3) -> GradCheckReport:
    config = RunConfig(**MICRO_CONFIG)
    model = CoarseModel(config)
    pairs = _micro_batch(config)
    noise = ReplayNoise(np.random.default_rng(0xA0))

    def loss():
        noise.rewind()
        value, _ = model.batch_loss(pairs, noise_rng=noise)
        return value

    return check_gradients(loss, model.store, tol=tol, step=1e-6)


def check_fine_loss(tol: float = 1e-3) -> GradCheckReport:
    config = RunConfig(**MICRO_CONFIG)
    model = FineModel(config)
    pairs = _micro_batch(config)

    def loss():
        return stack([model.loss(s, q) for s, q in pairs]).mean()

    return check_gradients(loss, model.store, tol=tol, step=1e-6)


def check_uncertainty_loss(tol: float = 1e-5) -> GradCheckReport:
    store = ParameterStore(seed=3)
    pos = store.param("position", (2,))
    pos.data = np.array([1.3, -0.7])
    lam_raw = store.param("lam_raw", (1,))
    lam_raw.data = np.array([0.4])

    def loss():
        lam = lam_raw.reshape(()).softplus() + 1e-3
        return uncertainty_loss(pos, lam, (0.25, 0.5))

    return check_gradients(loss, store, tol=tol, step=1e-6)


def gradient_fidelity_report(tol_ops: float = 1e-5,
                             tol_losses: float = 1e-3) -> tuple[str, bool]:
    """Run the full audit; returns (formatted text, everything passed)."""
    sections = [
        ("primitive operations", check_primitives(tol_ops)),
        ("uncertainty loss", check_uncertainty_loss(tol_ops)),
        ("coarse loss micro-batch", check_coarse_loss(tol_losses)),
        ("fine loss micro-batch", check_fine_loss(tol_losses)),
    ]
    blocks = []
    passed = True
    for title, report in sections:
        passed &= report.passed
        blocks.append(f"== {title} (tol {report.tol:g}) ==\n{report.format()}")
    return "\n\n".join(blocks), passed
