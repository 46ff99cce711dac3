"""Contrastive pretraining over a curriculum, and downstream fine-tuning."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import seeding
from .autodiff import Tensor
from .errors import DataError, NumericError
from .model import HEAD_KINDS, ModelBundle
from .pairing import CurriculumSchedule, QualityPair

log = logging.getLogger(__name__)

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs_per_stage: int = 1
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.epochs_per_stage < 0:
            raise ValueError("weight_decay and epochs_per_stage must be non-negative")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


class FineTuneMode(str, Enum):
    ALL = "all"
    LAST = "last"
    INDOMAIN_THEN_LAST = "indomain"


# ---------------------------------------------------------------- objective

def pair_loss(p1: Tensor, z1: Tensor, p2: Tensor, z2: Tensor) -> Tensor:
    """Symmetrized negative cosine with stop-gradient on the projections.

    ``-(cos(p1, sg(z2)) + cos(p2, sg(z1))) / 2``, averaged over rows for
    batched input. Lies in [-1, 1]; -1 when each prediction points along the
    other view's projection.
    """
    a = ad.cosine_similarity(p1, ad.stop_gradient(z2))
    b = ad.cosine_similarity(p2, ad.stop_gradient(z1))
    return ad.mul(ad.tmean(ad.add(a, b)), -0.5)


def siamese_loss(bundle: ModelBundle, x1: np.ndarray, x2: np.ndarray) -> Tensor:
    """Run both views through the shared E, P, D and score them.

    The encoder sees both views in one batch (it has no batch coupling), but
    each view is projected on its own so the projector's batch statistics
    never mix clean and noisy inputs. Shared statistics would let the
    network separate the two views by quality alone and align every
    prediction with the opposite group's mean.
    """
    n = x1.shape[0]
    h = bundle.encode(np.concatenate([x1, x2])[:, None, :])
    z1, z2 = bundle.project(h[:n]), bundle.project(h[n:])
    p1, p2 = bundle.predict(z1), bundle.predict(z2)
    return pair_loss(p1, z1, p2, z2)


# ---------------------------------------------------------------- optimizer

class SGD:
    """SGD with momentum and L2 weight decay (decay folded into the gradient)."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        for p, v, g in zip(self.params, self.velocity, grads):
            dt = p.data.dtype
            d = g + dt.type(self.weight_decay) * p.data if self.weight_decay else g
            v *= dt.type(self.momentum)
            v += d
            p.data -= dt.type(self.lr) * v


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    """Consecutive chunks of ``order``; a trailing single row joins the chunk
    before it, since the projector's batch statistics need two rows."""
    chunks = [order[i : i + size] for i in range(0, order.shape[0], size)]
    if len(chunks) > 1 and chunks[-1].shape[0] == 1:
        chunks[-2:] = [np.concatenate(chunks[-2:])]
    return chunks


def _check_finite(value: float, where: str) -> None:
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value} at {where}")


# ---------------------------------------------------------------- pretraining

@dataclass
class PretrainResult:
    bundle: ModelBundle
    loss_log: list[tuple[int, int, float]] = field(default_factory=list)  # (stage, epoch, mean_loss)


def pretrain(
    bundle: ModelBundle,
    pairs: Sequence[QualityPair],
    schedule: CurriculumSchedule,
    signals: Mapping[str, np.ndarray],
    config: TrainConfig,
) -> PretrainResult:
    """Train E, P, D on quality pairs stage by stage.

    ``pairs`` must be in curriculum order; ``schedule`` indexes into it.
    ``signals`` maps segment_id to a normalized 1-D sample array. Pairs are
    reshuffled every epoch from the config seed. With the batch-statistics
    projector a batch whose anchors (or partners) are all one segment is
    skipped. The input bundle is not modified.
    """
    length = bundle.config.input_length
    needed = {sid for p in pairs for sid in (p.anchor_id, p.partner_id)}
    missing = sorted(needed - set(signals))
    if missing:
        raise DataError(f"unresolvable segment ids: {missing[:5]}{' ...' if len(missing) > 5 else ''}")
    for s in schedule.stages:
        if s and (min(s) < 0 or max(s) >= len(pairs)):
            raise DataError("schedule refers to pair rows that do not exist")
    # the batch-statistics projector maps a view made of one repeated
    # segment to zero, so such batches cannot be scored
    batch_stats = bundle.config.projector_norm == "batch" and schedule.epochs_per_stage > 0
    codes = {sid: i for i, sid in enumerate(sorted(needed))}
    a_code = np.array([codes[p.anchor_id] for p in pairs], dtype=np.int64)
    p_code = np.array([codes[p.partner_id] for p in pairs], dtype=np.int64)
    if batch_stats:
        if config.batch_size < 2:
            raise DataError("the batch-statistics projector needs batch_size >= 2")
        for i, s in enumerate(schedule.stages):
            if len(set(a_code[list(s)])) < 2 or len(set(p_code[list(s)])) < 2:
                raise DataError(f"stage {i} needs at least two distinct anchors and two distinct partners")
    for sid in needed:
        if np.shape(signals[sid]) != (length,):
            raise DataError(f"segment {sid} has shape {np.shape(signals[sid])}, expected ({length},)")

    bundle = bundle.copy(config.dtype)
    params = list(bundle.params.values())
    opt = SGD(params, config.learning_rate, config.momentum, config.weight_decay)
    rng = seeding.rng(config.seed, "shuffle")
    anchors = np.stack([np.asarray(signals[p.anchor_id], dtype=config.dtype) for p in pairs]) if pairs else None
    partners = np.stack([np.asarray(signals[p.partner_id], dtype=config.dtype) for p in pairs]) if pairs else None

    result = PretrainResult(bundle)
    for stage, rows in enumerate(schedule.stages):
        rows = np.asarray(rows, dtype=np.int64)
        for epoch in range(schedule.epochs_per_stage):
            order = rows[rng.permutation(rows.shape[0])]
            total, seen, skipped = 0.0, 0, 0
            for k, b in enumerate(_batches(order, config.batch_size)):
                if batch_stats and (np.unique(a_code[b]).shape[0] < 2 or np.unique(p_code[b]).shape[0] < 2):
                    skipped += 1
                    continue
                loss = siamese_loss(bundle, anchors[b], partners[b])
                value = loss.item()
                _check_finite(value, f"stage {stage} epoch {epoch} batch {k}")
                opt.step(ad.grad(loss, params))
                total += value * b.shape[0]
                seen += b.shape[0]
            if skipped:
                log.warning("stage %d epoch %d: skipped %d batch(es) with a single distinct segment per view",
                            stage, epoch, skipped)
            mean = total / seen if seen else float("nan")
            result.loss_log.append((stage, epoch, mean))
            log.info("stage %d epoch %d mean_loss %.6f", stage, epoch, mean)
    return result


def write_loss_log(path, loss_log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "mean_loss"])
        for stage, epoch, loss in loss_log:
            w.writerow([stage, epoch, repr(float(loss))])


# ---------------------------------------------------------------- fine-tuning

@dataclass
class InDomainData:
    """Unlabelled pairs from the target dataset for in-domain pretraining."""

    pairs: Sequence[QualityPair]
    schedule: CurriculumSchedule
    signals: Mapping[str, np.ndarray]


@dataclass
class FinetuneResult:
    bundle: ModelBundle
    metric_log: list[tuple[int, str, str, float]] = field(default_factory=list)  # (epoch, split, metric, value)
    pretrain_log: list[tuple[int, int, float]] = field(default_factory=list)


def _check_labels(y: np.ndarray, task: str) -> np.ndarray:
    if task == "regression":
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(y)):
            raise DataError("regression targets must be finite")
        return y
    y = np.asarray(y)
    if not np.all(np.isin(y, (0, 1))):
        raise DataError("binary_classification labels must be 0 or 1")
    return y.astype(np.int64)


def _task_loss(out: Tensor, target: np.ndarray, task: str) -> Tensor:
    if task == "regression":
        return ad.mean_squared_error(out, target.astype(out.dtype))
    return ad.softmax_cross_entropy(out, target)


def finetune(
    bundle: ModelBundle,
    x: np.ndarray,
    y: np.ndarray,
    mode: FineTuneMode | str,
    task: str,
    config: TrainConfig,
    epochs: int,
    indomain: InDomainData | None = None,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> FinetuneResult:
    """Attach a fresh head and train it (and, for ``ALL``, everything else).

    ``x`` is [N, input_length] normalized signal, ``y`` the task labels.
    Regression targets are standardized internally; the shift and scale are
    stored on the returned bundle so ``predict_targets`` reports label units.
    The head initialization and batch order come from seed sub-streams that
    do not depend on any in-domain pretraining.
    """
    mode = FineTuneMode(mode)
    if task not in HEAD_KINDS:
        raise ValueError(f"task must be one of {HEAD_KINDS}")
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("empty dataset")
    if x.shape[1] != bundle.config.input_length:
        raise DataError(f"segments have length {x.shape[1]}, model expects {bundle.config.input_length}")
    y = _check_labels(y, task)
    if y.shape != (x.shape[0],):
        raise DataError("one label per example required")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")

    result = FinetuneResult(bundle)
    if mode is FineTuneMode.INDOMAIN_THEN_LAST:
        if indomain is None:
            raise ValueError("in-domain pretraining needs unlabelled pairs")
        pre = pretrain(bundle, indomain.pairs, indomain.schedule, indomain.signals, config)
        bundle = pre.bundle
        result.pretrain_log = pre.loss_log

    shift, scale = 0.0, 1.0
    if task == "regression":
        shift = float(y.mean())
        scale = float(y.std()) or 1.0
    tuned = bundle.with_head(task, seed=seeding.sub_seed(config.seed, "head"), target_shift=shift,
                             target_scale=scale).copy(config.dtype)
    target = (y - shift) / scale if task == "regression" else y
    xs = x.astype(config.dtype)

    train_all = mode is FineTuneMode.ALL
    params = list(tuned.params.values()) if train_all else tuned.named("head.")
    opt = SGD(params, config.learning_rate, config.momentum, config.weight_decay)
    rng = seeding.rng(config.seed, "finetune")
    # frozen encoder: embed once, train the head on fixed features
    features = None if train_all else tuned.embed(xs[:, None, :])

    for epoch in range(epochs):
        order = rng.permutation(x.shape[0])
        total = 0.0
        for start in range(0, order.shape[0], config.batch_size):
            b = order[start : start + config.batch_size]
            h = tuned.encode(xs[b][:, None, :]) if train_all else Tensor(features[b])
            loss = _task_loss(tuned.head_forward(h, task), target[b], task)
            value = loss.item()
            _check_finite(value, f"fine-tune epoch {epoch}")
            opt.step(ad.grad(loss, params))
            total += value * b.shape[0]
        result.metric_log.append((epoch, "train", "loss", total / x.shape[0]))
        if validation is not None:
            name, value = evaluate_task(tuned, validation[0], validation[1], task)
            result.metric_log.append((epoch, "validation", name, value))
    result.bundle = tuned
    return result


def evaluate_task(bundle: ModelBundle, x: np.ndarray, y: np.ndarray, task: str) -> tuple[str, float]:
    from .evaluate import f1_score, mean_absolute_error

    pred = bundle.predict_targets(np.asarray(x, dtype=bundle.dtype)[:, None, :])
    if task == "regression":
        return "mae", mean_absolute_error(pred, y)
    return "f1", f1_score(pred, np.asarray(y, dtype=np.int64))


def write_metric_log(path, metric_log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "metric", "value"])
        for epoch, split, metric, value in metric_log:
            w.writerow([epoch, split, metric, repr(float(value))])
