"""On-disk formats: PPGS v1 signal files and the segment manifest CSV.

PPGS v1 layout (all little-endian)::

    b"PPGS" | u16 version=1 | u32 sample_rate_hz | u64 n_samples | f32 * n_samples
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .signals import SampleSeries

PPGS_MAGIC = b"PPGS"
PPGS_VERSION = 1
_HEADER = struct.Struct("<4sHIQ")

MANIFEST_FIELDS = ["segment_id", "patient_id", "t_start_s", "quality_y", "file", "offset_samples", "n_samples"]


def write_ppgs(path, samples, sample_rate_hz: int) -> None:
    data = np.asarray(samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PPGS_MAGIC, PPGS_VERSION, int(sample_rate_hz), data.shape[0]))
        fh.write(data.tobytes())


def read_ppgs_header(path) -> tuple[int, int]:
    """Return (sample_rate_hz, n_samples) after validating the header and size."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise DataError(f"{path}: truncated PPGS header")
    magic, version, rate, n = _HEADER.unpack(head)
    if magic != PPGS_MAGIC:
        raise DataError(f"{path}: not a PPGS file")
    if version != PPGS_VERSION:
        raise DataError(f"{path}: unsupported PPGS version {version}")
    if rate < 1:
        raise DataError(f"{path}: sample rate must be positive")
    if path.stat().st_size != _HEADER.size + 4 * n:
        raise DataError(f"{path}: payload size does not match n_samples={n}")
    return rate, n


def read_ppgs(path, offset: int = 0, count: int | None = None) -> SampleSeries:
    rate, n = read_ppgs_header(path)
    if count is None:
        count = n - offset
    if offset < 0 or count < 0 or offset + count > n:
        raise DataError(f"{path}: range [{offset}, {offset + count}) outside 0..{n}")
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size + 4 * offset)
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
    return SampleSeries(data.astype(np.float64), rate)


@dataclass(frozen=True)
class ManifestRow:
    segment_id: str
    patient_id: str
    t_start_s: float
    quality_y: float
    file: str
    offset_samples: int
    n_samples: int


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in rows:
            w.writerow([r.segment_id, r.patient_id, repr(float(r.t_start_s)), repr(float(r.quality_y)),
                        r.file, r.offset_samples, r.n_samples])


def read_manifest(path) -> list[ManifestRow]:
    """Parse and validate a manifest; raises :class:`DataError` on any defect."""
    rows = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_FIELDS:
            raise DataError(f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(MANIFEST_FIELDS):
                raise DataError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields")
            try:
                row = ManifestRow(rec[0], rec[1], float(rec[2]), float(rec[3]), rec[4], int(rec[5]), int(rec[6]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if row.segment_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate segment_id {row.segment_id}")
            if not math.isfinite(row.t_start_s) or row.t_start_s < 0:
                raise DataError(f"{path}:{lineno}: bad t_start_s")
            if not 0.0 <= row.quality_y <= 1.0:
                raise DataError(f"{path}:{lineno}: quality_y outside [0, 1]")
            if row.offset_samples < 0 or row.n_samples < 1:
                raise DataError(f"{path}:{lineno}: bad sample range")
            seen.add(row.segment_id)
            rows.append(row)
    return rows


def load_segment_samples(manifest_path, rows) -> dict[str, tuple[np.ndarray, int]]:
    """Map segment_id -> (samples, sample_rate_hz), reading each file once."""
    base = Path(manifest_path).parent
    by_file: dict[str, list[ManifestRow]] = {}
    for r in rows:
        by_file.setdefault(r.file, []).append(r)
    out = {}
    for fname, file_rows in by_file.items():
        series = read_ppgs(base / fname)
        for r in file_rows:
            if r.offset_samples + r.n_samples > len(series):
                raise DataError(f"{fname}: segment {r.segment_id} runs past end of file")
            out[r.segment_id] = (series.samples[r.offset_samples : r.offset_samples + r.n_samples],
                                 series.sample_rate_hz)
    return out


def write_labels(path, labels: dict[str, float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "label"])
        for sid, v in labels.items():
            w.writerow([sid, repr(float(v))])


def read_labels(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["segment_id", "label"]:
            raise DataError(f"{path}: labels header must be segment_id,label")
        out = {}
        for rec in reader:
            if not rec:
                continue
            try:
                out[rec[0]] = float(rec[1])
            except (IndexError, ValueError):
                raise DataError(f"{path}: bad label row {rec}") from None
    return out
