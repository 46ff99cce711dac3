"""Simulated PPG with drift, motion, and powerline artifacts.

The clean waveform is a train of beats, each a systolic Gaussian bump followed
by a smaller dicrotic bump, with widths proportional to the beat period and a
seeded +/-2 % period jitter. Noise levels map directly onto amplitudes
(drift, powerline) or onto the corrupted-time fraction (motion).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .formats import ManifestRow, write_labels, write_manifest, write_ppgs
from .signals import SEGMENT_SECONDS, MODEL_RATE_HZ, SampleSeries, Segment

MAX_LEVEL = 0.7
POWERLINE_HZ = 50.0
POWERLINE_FLAG_AMPLITUDE = 0.05
MOTION_AMPLITUDE = 1.0
MOTION_BURST_S = 2.0
PERIOD_JITTER = 0.02


@dataclass(frozen=True)
class PpgSimParams:
    hr_bpm: float
    duration_s: float = SEGMENT_SECONDS
    sample_rate_hz: int = MODEL_RATE_HZ
    seed: int = 0
    # beat morphology, as fractions of the beat period
    systolic_delay: float = 0.22
    systolic_width: float = 0.08
    dicrotic_delay: float = 0.55
    dicrotic_width: float = 0.10
    dicrotic_ratio: float = 0.4

    def __post_init__(self):
        if not 30.0 <= self.hr_bpm <= 220.0:
            raise ValueError(f"hr_bpm must lie in [30, 220], got {self.hr_bpm}")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.sample_rate_hz < 1:
            raise ValueError("sample_rate_hz must be positive")
        if self.beat_period_samples <= 4:
            raise ValueError("beat period must exceed 4 samples")

    @property
    def beat_period_samples(self) -> float:
        return 60.0 * self.sample_rate_hz / self.hr_bpm


@dataclass(frozen=True)
class NoiseSpec:
    drift_level: float = 0.0
    motion_level: float = 0.0
    powerline_level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("drift_level", "motion_level", "powerline_level"):
            v = getattr(self, name)
            if not 0.0 <= v <= MAX_LEVEL:
                raise ValueError(f"{name} must lie in [0, {MAX_LEVEL}], got {v}")

    @classmethod
    def uniform(cls, level: float, seed: int = 0) -> "NoiseSpec":
        return cls(level, level, level, seed)


def simulate_clean(params: PpgSimParams) -> SampleSeries:
    rng = np.random.default_rng(params.seed)
    fs = params.sample_rate_hz
    n = int(round(params.duration_s * fs))
    period = 60.0 / params.hr_bpm
    t = np.arange(n) / fs

    # start one to two beats before t=0 so the window opens mid-rhythm
    onset = -period * (1.0 + rng.uniform())
    onsets, periods = [], []
    while onset < params.duration_s + period:
        p = period * (1.0 + rng.uniform(-PERIOD_JITTER, PERIOD_JITTER))
        onsets.append(onset)
        periods.append(p)
        onset += p

    x = np.zeros(n)
    bumps = (
        (params.systolic_delay, params.systolic_width, 1.0),
        (params.dicrotic_delay, params.dicrotic_width, params.dicrotic_ratio),
    )
    for o, p in zip(onsets, periods):
        for delay, width, amp in bumps:
            centre, sigma = o + delay * p, width * p
            lo = max(0, int(np.floor((centre - 5 * sigma) * fs)))
            hi = min(n, int(np.ceil((centre + 5 * sigma) * fs)) + 1)
            if lo < hi:
                tt = t[lo:hi]
                x[lo:hi] += amp * np.exp(-0.5 * ((tt - centre) / sigma) ** 2)
    peak = x.max()
    if peak > 0:
        x /= peak
    return SampleSeries(x, fs)


def _motion_mask(n: int, level: float, fs: int, rng: np.random.Generator) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    n_bad = int(round(level * n))
    if n_bad == 0:
        return mask
    n_good = n - n_bad
    n_bursts = int(np.clip(round(n_bad / (MOTION_BURST_S * fs)), 1, min(n_bad, n_good + 1)))
    cuts = np.sort(rng.choice(np.arange(1, n_bad), size=n_bursts - 1, replace=False)) if n_bursts > 1 else []
    bursts = np.diff(np.concatenate([[0], cuts, [n_bad]])).astype(int)
    slots = np.sort(rng.integers(0, n_good + 1, size=n_bursts))
    gaps = np.diff(np.concatenate([[0], slots])).astype(int)
    pos = 0
    for gap, length in zip(gaps, bursts):
        pos += gap
        mask[pos : pos + length] = True
        pos += length
    return mask


def inject_noise(series: SampleSeries, spec: NoiseSpec) -> tuple[SampleSeries, np.ndarray]:
    """Add artifacts; returns the noisy series and the per-sample artifact mask.

    Drift is never flagged. Powerline hum is flagged everywhere once its
    amplitude exceeds 0.05. Motion bursts replace the signal with AR(1)
    noise and cover ``round(motion_level * n)`` samples exactly.
    """
    x = series.samples.copy()
    n = x.shape[0]
    fs = series.sample_rate_hz
    t = np.arange(n) / fs
    mask = np.zeros(n, dtype=bool)
    drift_ss, motion_ss, power_ss = np.random.SeedSequence(spec.seed).spawn(3)

    if spec.motion_level > 0:
        rng = np.random.default_rng(motion_ss)
        burst = _motion_mask(n, spec.motion_level, fs, rng)
        noise = lfilter([1.0], [1.0, -0.95], rng.normal(size=n))
        noise = (noise - noise.mean()) / (noise.std() + 1e-12)
        x[burst] = x.mean() + MOTION_AMPLITUDE * noise[burst]
        mask |= burst
    if spec.drift_level > 0:
        rng = np.random.default_rng(drift_ss)
        period = rng.uniform(10.0, 30.0)
        x += spec.drift_level * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
    if spec.powerline_level > 0:
        rng = np.random.default_rng(power_ss)
        # sampled at fs the 50 Hz tone aliases naturally
        x += spec.powerline_level * np.sin(2 * np.pi * POWERLINE_HZ * t + rng.uniform(0, 2 * np.pi))
        if spec.powerline_level > POWERLINE_FLAG_AMPLITUDE:
            mask[:] = True
    return SampleSeries(x, fs), mask


# ---------------------------------------------------------------- corpus

NOISE_POLICIES = ("default", "clean", "noisy")


@dataclass
class SyntheticCorpus:
    segments: list[Segment]
    hr_bpm: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.segments)


def _noisy_spec(rng: np.random.Generator, seed: int) -> NoiseSpec:
    powerline = rng.uniform(0.06, MAX_LEVEL) if rng.random() < 0.3 else 0.0
    return NoiseSpec(
        drift_level=rng.uniform(0.0, MAX_LEVEL),
        motion_level=rng.uniform(0.25, MAX_LEVEL),
        powerline_level=powerline,
        seed=seed,
    )


def _morphology(rng: np.random.Generator) -> dict[str, float]:
    # drawn per segment so heart rate, not pulse shape, is what nearby segments share
    return dict(
        systolic_delay=rng.uniform(0.18, 0.26),
        systolic_width=rng.uniform(0.06, 0.10),
        dicrotic_delay=rng.uniform(0.5, 0.6),
        dicrotic_width=rng.uniform(0.08, 0.12),
        dicrotic_ratio=rng.uniform(0.2, 0.6),
    )


def _stretch_pattern(n: int, rng: np.random.Generator) -> np.ndarray:
    """Alternating clean/noisy runs of 1-4 segments; True marks noisy."""
    noisy = np.zeros(n, dtype=bool)
    state = bool(rng.integers(2))
    pos = 0
    while pos < n:
        run = int(rng.integers(1, 5))
        noisy[pos : pos + run] = state
        pos += run
        state = not state
    if n >= 2 and not noisy.any():
        noisy[-1] = True
    return noisy


def simulate_corpus(
    n_patients: int,
    segments_per_patient: int,
    hr_range: tuple[float, float] = (50.0, 150.0),
    noise_policy: str = "default",
    seed: int = 0,
    sample_rate_hz: int = MODEL_RATE_HZ,
    duration_s: float = SEGMENT_SECONDS,
    patient_prefix: str = "p",
) -> SyntheticCorpus:
    """Per-patient timelines of consecutive segments with ground-truth masks.

    Under the default policy clean and noisy stretches alternate in runs of at
    most four segments, so every clean segment has a noisy neighbour (y > 0.2)
    well inside five minutes. Heart rate follows a slow random walk per patient.
    """
    if n_patients < 1 or segments_per_patient < 1:
        raise ValueError("counts must be positive")
    if noise_policy not in NOISE_POLICIES:
        raise ValueError(f"noise_policy must be one of {NOISE_POLICIES}")
    lo, hi = hr_range
    corpus = SyntheticCorpus([])
    for p_idx, p_seq in enumerate(np.random.SeedSequence(seed).spawn(n_patients)):
        rng = np.random.default_rng(p_seq)
        pid = f"{patient_prefix}{p_idx:04d}"
        hr = rng.uniform(lo, hi)
        if noise_policy == "default":
            noisy = _stretch_pattern(segments_per_patient, rng)
        else:
            noisy = np.full(segments_per_patient, noise_policy == "noisy")
        for k in range(segments_per_patient):
            hr = float(np.clip(hr + rng.normal(0.0, 0.5), lo, hi))
            seg_seed = int(rng.integers(2**63))
            shape = _morphology(rng)
            clean = simulate_clean(PpgSimParams(hr, duration_s, sample_rate_hz, seg_seed, **shape))
            spec = _noisy_spec(rng, seg_seed + 1) if noisy[k] else NoiseSpec(seed=seg_seed + 1)
            series, mask = inject_noise(clean, spec)
            sid = f"{pid}-{k:05d}"
            corpus.segments.append(
                Segment(sid, pid, k * duration_s, series.samples, sample_rate_hz, float(mask.mean()), mask)
            )
            corpus.hr_bpm[sid] = hr
    return corpus


def write_corpus(out_dir, corpus: SyntheticCorpus) -> list[ManifestRow]:
    """Write one PPGS file per patient plus ``manifest.csv`` and ``labels.csv``."""
    out_dir = Path(out_dir)
    (out_dir / "signals").mkdir(parents=True, exist_ok=True)
    by_patient: dict[str, list[Segment]] = {}
    for seg in corpus.segments:
        by_patient.setdefault(seg.patient_id, []).append(seg)
    rows = []
    for pid, segs in by_patient.items():
        fname = f"signals/{pid}.ppgs"
        rate = segs[0].sample_rate_hz
        write_ppgs(out_dir / fname, np.concatenate([s.samples for s in segs]), rate)
        offset = 0
        for s in segs:
            rows.append(ManifestRow(s.segment_id, pid, s.t_start_s, s.quality_y, fname, offset, len(s)))
            offset += len(s)
    write_manifest(out_dir / "manifest.csv", rows)
    write_labels(out_dir / "labels.csv", {s.segment_id: corpus.hr_bpm[s.segment_id] for s in corpus.segments})
    return rows


def build_synthetic_corpus(out_dir, n_patients: int, segments_per_patient: int,
                           hr_range=(50.0, 150.0), noise_policy: str = "default", seed: int = 0,
                           **kwargs) -> list[ManifestRow]:
    corpus = simulate_corpus(n_patients, segments_per_patient, hr_range, noise_policy, seed, **kwargs)
    return write_corpus(out_dir, corpus)
