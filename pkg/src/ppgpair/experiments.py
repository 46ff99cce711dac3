"""End-to-end synthetic experiments behind the directional acceptance checks.

Each protocol is a plain function of a root seed so the acceptance suite can
run it over several seeds and count wins.

* :func:`clustering_experiment` pretrains on quality pairs from a synthetic
  corpus, then compares leave-one-out 1-NN heart-rate accuracy in h-space
  against a random-init encoder on a grid of heart rates x noise levels.
* :func:`finetune_experiment` fine-tunes both encoders (FineTuneAll) for
  heart-rate regression on a small labelled set and scores MAE on a held-out
  noisy test set.
* :func:`model_size_table` repeats the clustering protocol across depths.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .evaluate import mean_absolute_error, nn1_accuracy
from .model import EncoderConfig, ModelBundle
from .pairing import SegmentIndexEntry, build_pairs, make_schedule, sort_curriculum
from .signals import minmax
from .synth import NoiseSpec, PpgSimParams, inject_noise, simulate_clean, simulate_corpus
from .train import TrainConfig, finetune, pretrain

GRID_HEART_RATES = (60.0, 80.0, 100.0, 120.0, 140.0)
GRID_LEVELS = tuple(round(0.1 * i, 1) for i in range(8))


@dataclass(frozen=True)
class ExperimentConfig:
    n_patients: int = 40
    segments_per_patient: int = 280
    n_stages: int = 4
    epochs_per_stage: int = 1
    learning_rate: float = 0.05
    batch_size: int = 64
    n_blocks: int = 4
    grid_replicates: int = 8
    # downstream heart-rate regression
    finetune_patients: int = 10
    finetune_segments: int = 40
    test_patients: int = 10
    test_segments: int = 20
    finetune_epochs: int = 10
    finetune_learning_rate: float = 0.002


@dataclass
class Pretrained:
    seed: int
    n_pairs: int
    random_init: ModelBundle
    pretrained: ModelBundle
    loss_log: list
    seconds: float


@dataclass
class ClusteringResult:
    seed: int
    n_blocks: int
    n_pairs: int
    accuracy_pretrained: float
    accuracy_random: float
    per_level_pretrained: tuple[float, ...]
    per_level_random: tuple[float, ...]
    min_embedding_std: float
    pretrain_seconds: float
    loss_log: list = field(default_factory=list)

    @property
    def pretrained_wins(self) -> bool:
        return self.accuracy_pretrained > self.accuracy_random


@dataclass
class FinetuneComparison:
    seed: int
    mae_pretrained: float
    mae_random: float

    @property
    def pretrained_wins(self) -> bool:
        return self.mae_pretrained < self.mae_random


def _normalized(segments) -> np.ndarray:
    return np.stack([minmax(s.samples) for s in segments]).astype(np.float32)


def pretrain_on_synthetic(seed: int, cfg: ExperimentConfig = ExperimentConfig()) -> Pretrained:
    """Corpus -> pairs -> curriculum -> pretraining, all from one root seed."""
    corpus = simulate_corpus(cfg.n_patients, cfg.segments_per_patient, seed=seeding.sub_seed(seed, "corpus"))
    signals = {s.segment_id: minmax(s.samples).astype(np.float32) for s in corpus.segments}
    index = [SegmentIndexEntry(s.segment_id, s.patient_id, s.t_start_s, s.quality_y) for s in corpus.segments]
    pairs = sort_curriculum(build_pairs(index))
    schedule = make_schedule(pairs, cfg.n_stages, cfg.epochs_per_stage)
    init = ModelBundle.initialize(EncoderConfig(n_blocks=cfg.n_blocks), seeding.sub_seed(seed, "init"))
    train_cfg = TrainConfig(batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                            epochs_per_stage=cfg.epochs_per_stage, seed=seed)
    start = time.perf_counter()
    result = pretrain(init, pairs, schedule, signals, train_cfg)
    return Pretrained(seed, len(pairs), init, result.bundle, result.loss_log, time.perf_counter() - start)


def heart_rate_grid(seed: int, replicates: int = 8, heart_rates=GRID_HEART_RATES, levels=GRID_LEVELS):
    """Simulated segments at each heart rate and uniform noise level.

    Returns normalized inputs [N, L], heart-rate labels and noise levels.
    """
    rng = seeding.rng(seed, "grid")
    xs, hrs, lvs = [], [], []
    for hr in heart_rates:
        for level in levels:
            for _ in range(replicates):
                clean = simulate_clean(PpgSimParams(hr, seed=int(rng.integers(2**63))))
                noisy, _ = inject_noise(clean, NoiseSpec.uniform(level, int(rng.integers(2**63))))
                xs.append(minmax(noisy.samples))
                hrs.append(hr)
                lvs.append(level)
    return np.array(xs, dtype=np.float32), np.array(hrs), np.array(lvs)


def _per_level(emb, labels, levels) -> tuple[float, ...]:
    return tuple(nn1_accuracy(emb[levels == lv], labels[levels == lv]) for lv in np.unique(levels))


def clustering_experiment(seed: int, cfg: ExperimentConfig = ExperimentConfig(),
                          pre: Pretrained | None = None) -> ClusteringResult:
    pre = pre or pretrain_on_synthetic(seed, cfg)
    x, labels, levels = heart_rate_grid(seed, cfg.grid_replicates)
    emb_pre = pre.pretrained.embed(x[:, None, :])
    emb_rand = pre.random_init.embed(x[:, None, :])
    return ClusteringResult(
        seed=seed,
        n_blocks=cfg.n_blocks,
        n_pairs=pre.n_pairs,
        accuracy_pretrained=nn1_accuracy(emb_pre, labels),
        accuracy_random=nn1_accuracy(emb_rand, labels),
        per_level_pretrained=_per_level(emb_pre, labels, levels),
        per_level_random=_per_level(emb_rand, labels, levels),
        min_embedding_std=float(emb_pre.std(axis=0).min()),
        pretrain_seconds=pre.seconds,
        loss_log=pre.loss_log,
    )


def finetune_experiment(seed: int, cfg: ExperimentConfig = ExperimentConfig(),
                        pre: Pretrained | None = None) -> FinetuneComparison:
    """FineTuneAll heart-rate regression from pretrained vs random init."""
    pre = pre or pretrain_on_synthetic(seed, cfg)
    train = simulate_corpus(cfg.finetune_patients, cfg.finetune_segments, seed=seeding.sub_seed(seed, "finetune-data"),
                            patient_prefix="f")
    test = simulate_corpus(cfg.test_patients, cfg.test_segments, noise_policy="noisy",
                           seed=seeding.sub_seed(seed, "test-data"), patient_prefix="t")
    x, y = _normalized(train.segments), np.array([train.hr_bpm[s.segment_id] for s in train.segments])
    xt, yt = _normalized(test.segments), np.array([test.hr_bpm[s.segment_id] for s in test.segments])
    train_cfg = TrainConfig(batch_size=cfg.batch_size, learning_rate=cfg.finetune_learning_rate, seed=seed)
    maes = []
    for start in (pre.pretrained, pre.random_init):
        tuned = finetune(start, x, y, "all", "regression", train_cfg, cfg.finetune_epochs).bundle
        maes.append(mean_absolute_error(tuned.predict_targets(xt[:, None, :]), yt))
    return FinetuneComparison(seed, maes[0], maes[1])


def model_size_table(seeds=(0,), depths=(2, 4, 6), cfg: ExperimentConfig = ExperimentConfig(),
                     known: dict | None = None) -> list[dict]:
    """Clustering protocol per depth; one row per depth with mean accuracies.

    ``known`` maps (n_blocks, seed) to an already computed ClusteringResult.
    """
    known = known or {}
    rows = []
    for depth in depths:
        run_cfg = dataclasses.replace(cfg, n_blocks=depth)
        results = [known.get((depth, s)) or clustering_experiment(s, run_cfg) for s in seeds]
        rows.append({
            "n_blocks": depth,
            "parameters": ModelBundle.initialize(EncoderConfig(n_blocks=depth), 0).num_parameters(),
            "accuracy_pretrained": float(np.mean([r.accuracy_pretrained for r in results])),
            "accuracy_random": float(np.mean([r.accuracy_random for r in results])),
            "pretrain_seconds": float(np.mean([r.pretrain_seconds for r in results])),
        })
    return rows


def format_table(rows: list[dict]) -> str:
    head = f"{'n_blocks':>8} {'params':>8} {'1-NN pretrained':>16} {'1-NN random':>12} {'seconds':>8}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['n_blocks']:>8} {r['parameters']:>8} {r['accuracy_pretrained']:>16.3f} "
                     f"{r['accuracy_random']:>12.3f} {r['pretrain_seconds']:>8.1f}")
    return "\n".join(lines)
