"""Central finite-difference checks for the autodiff engine.

Relative error for one input tensor is ``max|analytic - numeric|`` divided by
``max(max|analytic|, max|numeric|, floor)``. Normalising by the largest
gradient in the tensor keeps exact zeros (dead ReLUs, frozen paths) from
producing spurious 0/0 ratios, while still flagging any entry that is wrong
relative to the tensor's own gradient scale. The floor is the larger of
``FLOOR`` and ``RELATIVE_FLOOR`` times the largest gradient entry of the whole
case, so a tensor whose true gradient is exactly zero (a bias feeding a batch
normalization) is judged against the case's scale rather than against
finite-difference round-off.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

STEP = 1e-5
TOLERANCE = 1e-4
FLOOR = 1e-10
RELATIVE_FLOOR = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    h: float = STEP,
    coords: Sequence[int] | None = None,
) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensor``.

    ``tensor.data`` is perturbed in place and restored. With ``coords`` only
    those flat indices are evaluated; the rest are returned as NaN.
    """
    flat = tensor.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    for i in range(flat.size) if coords is None else coords:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fn().item()
        flat[i] = orig - h
        f_minus = fn().item()
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2 * h)
    return out.reshape(tensor.shape)


def check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = STEP,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    reference: Callable[[], Tensor] | None = None,
) -> float:
    """Max relative error of reverse-mode vs finite differences over ``inputs``.

    ``max_coords`` caps the number of finite-difference evaluations per input
    tensor; coordinates are then sampled with ``rng``. ``reference``, when
    given, is differenced instead of ``fn``; it must agree with ``fn`` in value
    and hold stop-gradient targets fixed as constants.
    """
    inputs = list(inputs)
    analytic = ad.grad(fn(), inputs)
    fn = reference or fn
    scale = max((float(np.abs(a).max()) for a in analytic if a.size), default=0.0)
    floor = max(FLOOR, RELATIVE_FLOOR * scale)
    worst = 0.0
    for t, a in zip(inputs, analytic):
        n = t.data.size
        if max_coords is not None and n > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
            num = numeric_grad(fn, t, h, coords).reshape(-1)[coords]
            worst = max(worst, relative_error(a.reshape(-1)[coords], num, floor))
        else:
            worst = max(worst, relative_error(a, numeric_grad(fn, t, h), floor))
    return worst


@dataclass
class OpCheck:
    name: str
    cases: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _fixed_projection(make_out, rng):
    """Reduce a tensor-valued op to a scalar via a random (then frozen) weighting."""
    proj = {}

    def fn():
        out = make_out()
        if "w" not in proj:
            proj["w"] = rng.normal(size=out.shape)
        return ad.tsum(ad.mul(out, proj["w"]))

    return fn


def _case_conv1d(rng):
    b, cin, cout = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.integers(1, 6))
    stride = int(rng.integers(1, 4))
    padding = int(rng.integers(0, 3))
    length = int(rng.integers(max(1, k - 2 * padding), 12))
    x = _param(rng, b, cin, length)
    w = _param(rng, cout, cin, k)
    bias = _param(rng, cout) if rng.random() < 0.5 else None
    fn = _fixed_projection(lambda: ad.conv1d(x, w, bias, stride=stride, padding=padding), rng)
    return fn, [x, w] + ([bias] if bias is not None else [])


def _case_relu(rng):
    # finite differences are invalid within h of the kink
    x = rng.normal(size=(3, 5))
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    x = Tensor(x, requires_grad=True)
    return _fixed_projection(lambda: ad.relu(x), rng), [x]


def _case_channel_norm(rng):
    if rng.random() < 0.5:
        x = _param(rng, 2, 3, 6)
        c = 3
    else:
        x = _param(rng, 3, 5)
        c = 5
    gamma = _param(rng, c)
    beta = _param(rng, c)
    return _fixed_projection(lambda: ad.channel_norm(x, gamma, beta), rng), [x, gamma, beta]


def _case_pool(rng):
    x = _param(rng, 2, 3, int(rng.integers(1, 8)))
    return _fixed_projection(lambda: ad.global_avg_pool(x), rng), [x]


def _case_linear(rng):
    x = _param(rng, 3, 4)
    w = _param(rng, 2, 4)
    b = _param(rng, 2)
    return _fixed_projection(lambda: ad.linear(x, w, b), rng), [x, w, b]


def _case_matmul(rng):
    a = _param(rng, 3, 4)
    b = _param(rng, 4, 2)
    return _fixed_projection(lambda: ad.matmul(a, b), rng), [a, b]


def _case_residual_add(rng):
    a = _param(rng, 2, 3, 4)
    b = _param(rng, 2, 3, 4)
    return _fixed_projection(lambda: ad.add(a, b), rng), [a, b]


def _case_mul(rng):
    a = _param(rng, 2, 3)
    b = _param(rng, 3)
    return _fixed_projection(lambda: ad.mul(a, b), rng), [a, b]


def _case_cosine(rng):
    a = _param(rng, 4, 6)
    b = _param(rng, 4, 6)
    return _fixed_projection(lambda: ad.cosine_similarity(a, b), rng), [a, b]


def _case_softmax_ce(rng):
    logits = _param(rng, 5, 3)
    labels = rng.integers(0, 3, size=5)
    return (lambda: ad.softmax_cross_entropy(logits, labels)), [logits]


def _case_mse(rng):
    pred = _param(rng, 6, 1)
    target = rng.normal(size=(6, 1))
    return (lambda: ad.mean_squared_error(pred, target)), [pred]


def _case_composite(rng):
    # three chained ops: linear -> relu -> cosine against a second branch
    x = _param(rng, 3, 4)
    w = _param(rng, 5, 4)
    v = _param(rng, 3, 5)

    def fn():
        h = ad.relu(ad.linear(x, w))
        h = ad.add(h, 0.1)
        return ad.tsum(ad.cosine_similarity(h, v))

    return fn, [x, w, v]


def _case_batch_norm(rng):
    x = _param(rng, 5, 4)
    g = _param(rng, 4)
    b = _param(rng, 4)
    return _fixed_projection(lambda: ad.batch_norm(x, g, b), rng), [x, g, b]


def _case_pair_loss(rng):
    # the z arguments sit behind stop-gradient, so only p is differentiated
    p1, p2 = _param(rng, 3, 6), _param(rng, 3, 6)
    z1, z2 = Tensor(rng.normal(size=(3, 6))), Tensor(rng.normal(size=(3, 6)))
    from .train import pair_loss

    return (lambda: pair_loss(p1, z1, p2, z2)), [p1, p2]


GRAPH_COORDS = 3
GRAPH_ROWS = 4


def _case_pair_loss_graph(rng):
    """Full two-view graph x -> E -> P -> D -> loss on a tiny float64 model.

    Finite differences run on a copy of the graph whose projector targets are
    frozen at their current values, which is what stop-gradient promises.
    """
    from .model import EncoderConfig, ModelBundle
    from .train import pair_loss, siamese_loss

    cfg = EncoderConfig(n_blocks=2, base_channels=2, embedding_dim=8, input_length=24, z_dim=16)
    bundle = ModelBundle.initialize(cfg, int(rng.integers(2**31)), dtype=np.float64)
    for name, t in bundle.params.items():
        # nonzero offsets keep every relu row alive and exercise bias gradients
        if name.endswith((".bias", ".beta")):
            t.data[...] = rng.normal(0.0, 0.5, t.shape)
    # four rows per view: with two, each batch-norm column is close to a sign
    # function and central differences at h=1e-5 see its curvature
    n = GRAPH_ROWS
    x1, x2 = rng.uniform(size=(n, 24)), rng.uniform(size=(n, 24))
    x = np.concatenate([x1, x2])[:, None, :]

    def views():
        h = bundle.encode(x)
        return bundle.project(h[:n]), bundle.project(h[n:])

    z1_fixed, z2_fixed = (z.data.copy() for z in views())

    def frozen():
        z1, z2 = views()
        return pair_loss(bundle.predict(z1), Tensor(z1_fixed), bundle.predict(z2), Tensor(z2_fixed))

    return (lambda: siamese_loss(bundle, x1, x2)), list(bundle.params.values()), frozen


OP_CASES = {
    "conv1d": _case_conv1d,
    "relu": _case_relu,
    "channel_norm": _case_channel_norm,
    "global_avg_pool": _case_pool,
    "linear": _case_linear,
    "matmul": _case_matmul,
    "residual_add": _case_residual_add,
    "mul": _case_mul,
    "cosine_similarity": _case_cosine,
    "softmax_cross_entropy": _case_softmax_ce,
    "mean_squared_error": _case_mse,
    "composite": _case_composite,
    "batch_norm": _case_batch_norm,
    "pair_loss": _case_pair_loss,
    "pair_loss_graph": _case_pair_loss_graph,
}


def check_op(name: str, cases: int = 100, seed: int = 0) -> OpCheck:
    make = OP_CASES[name]
    worst = 0.0
    for i in range(cases):
        rng = np.random.default_rng([seed, i])
        fn, inputs, *reference = make(rng)
        if reference:
            worst = max(worst, check(fn, inputs, max_coords=GRAPH_COORDS, rng=rng, reference=reference[0]))
        else:
            worst = max(worst, check(fn, inputs))
    return OpCheck(name, cases, worst)


def run_suite(cases: int = 100, seed: int = 0, ops: Sequence[str] | None = None) -> list[OpCheck]:
    return [check_op(name, cases, seed) for name in (ops or OP_CASES)]
