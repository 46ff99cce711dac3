"""Signal containers and the segment -> downsample -> normalize pipeline."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DataError

SEGMENT_SECONDS = 30.0
MODEL_RATE_HZ = 40


@dataclass(frozen=True, eq=False)
class SampleSeries:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz < 1:
            raise ValueError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz}")
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class Segment:
    """One fixed-length window of a recording plus its artifact label."""

    segment_id: str
    patient_id: str
    t_start_s: float
    samples: np.ndarray
    sample_rate_hz: int
    quality_y: float = 0.0
    artifact_mask: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.t_start_s < 0:
            raise ValueError("t_start_s must be non-negative")
        if not 0.0 <= self.quality_y <= 1.0:
            raise ValueError(f"quality_y must lie in [0, 1], got {self.quality_y}")
        if self.artifact_mask is not None:
            mask = np.asarray(self.artifact_mask, dtype=bool)
            if mask.shape != self.samples.shape:
                raise ValueError("artifact_mask must match samples in length")
            if abs(mask.mean() - self.quality_y) > 1e-9:
                raise ValueError("quality_y disagrees with artifact_mask")
            object.__setattr__(self, "artifact_mask", mask)

    def __len__(self) -> int:
        return self.samples.shape[0]


def segment_recording(
    series: SampleSeries,
    patient_id: str,
    duration_s: float = SEGMENT_SECONDS,
    mask: np.ndarray | None = None,
) -> list[Segment]:
    """Cut ``series`` into consecutive non-overlapping windows.

    A trailing partial window is dropped. If an artifact ``mask`` aligned with
    the series is given, each segment carries its slice and
    ``quality_y`` is the flagged fraction.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    window = int(round(duration_s * series.sample_rate_hz))
    if window < 1:
        raise ValueError("window shorter than one sample")
    n_windows = len(series) // window
    if n_windows == 0:
        raise DataError("recording too short")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != series.samples.shape:
            raise ValueError("mask must align with the series")
    segments = []
    for k in range(n_windows):
        sl = slice(k * window, (k + 1) * window)
        seg_mask = None if mask is None else mask[sl].copy()
        segments.append(
            Segment(
                segment_id=f"{patient_id}-{k:05d}",
                patient_id=patient_id,
                t_start_s=k * duration_s,
                samples=series.samples[sl].copy(),
                sample_rate_hz=series.sample_rate_hz,
                quality_y=0.0 if seg_mask is None else float(seg_mask.mean()),
                artifact_mask=seg_mask,
            )
        )
    return segments


def downsample(series: SampleSeries, target_hz: int = MODEL_RATE_HZ) -> SampleSeries:
    """Block-mean decimation by the integer factor ``rate / target_hz``."""
    if target_hz < 1 or series.sample_rate_hz % target_hz:
        raise DataError("unsupported resample ratio")
    factor = series.sample_rate_hz // target_hz
    if factor == 1:
        return SampleSeries(series.samples.copy(), target_hz)
    n = len(series) // factor
    blocks = series.samples[: n * factor].reshape(n, factor)
    return SampleSeries(blocks.mean(axis=1), target_hz)


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """A decimated sample is flagged if any sample in its block was."""
    mask = np.asarray(mask, dtype=bool)
    n = mask.shape[0] // factor
    return mask[: n * factor].reshape(n, factor).any(axis=1)


def minmax(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    lo, hi = samples.min(), samples.max()
    if hi == lo:
        return np.zeros_like(samples)
    return (samples - lo) / (hi - lo)


def minmax_normalize(segment: Segment) -> Segment:
    """Rescale samples to [0, 1]; a constant segment becomes all zeros."""
    return dataclasses.replace(segment, samples=minmax(segment.samples))


def preprocess(series: SampleSeries, patient_id: str, target_hz: int = MODEL_RATE_HZ,
               duration_s: float = SEGMENT_SECONDS) -> list[Segment]:
    """Segment a raw recording, downsample each window, then min-max normalize."""
    out = []
    for seg in segment_recording(series, patient_id, duration_s):
        low = downsample(SampleSeries(seg.samples, seg.sample_rate_hz), target_hz)
        out.append(minmax_normalize(dataclasses.replace(
            seg, samples=low.samples, sample_rate_hz=target_hz)))
    return out
