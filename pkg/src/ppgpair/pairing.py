"""Quality pairing of clean anchors with noisy temporal neighbours, and the curriculum.

Each clean anchor (y <= eps_good) is paired with the same-patient segment
that has y > bad_threshold, lies strictly within ``window_s`` seconds, and is
furthest away in time. Ties go to the later timestamp, then to the smaller
segment_id. Both directions in time are searched.
"""
from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

WINDOW_S = 300.0
BAD_THRESHOLD = 0.2
EPS_GOOD = 0.0


@dataclass(frozen=True)
class SegmentIndexEntry:
    segment_id: str
    patient_id: str
    t_start_s: float
    y: float


@dataclass(frozen=True)
class QualityPair:
    anchor_id: str
    partner_id: str
    c: float


@dataclass(frozen=True)
class CurriculumSchedule:
    stages: tuple[tuple[int, ...], ...]  # cumulative row indices into the sorted pair list
    epochs_per_stage: int = 1

    def __len__(self) -> int:
        return len(self.stages)


def difficulty(y_a: float, y_b: float) -> float:
    return abs(y_a - y_b)


def build_pairs(
    index: Iterable[SegmentIndexEntry],
    window_s: float = WINDOW_S,
    bad_threshold: float = BAD_THRESHOLD,
    eps_good: float = EPS_GOOD,
) -> list[QualityPair]:
    """Pair every clean anchor with its furthest eligible noisy neighbour.

    Output is sorted by anchor_id, so it does not depend on input order.
    """
    if eps_good > bad_threshold:
        raise ValueError("eps_good must not exceed bad_threshold")
    index = list(index)
    ids = [e.segment_id for e in index]
    if len(set(ids)) != len(ids):
        raise DataError("corrupt index")

    by_patient: dict[str, list[SegmentIndexEntry]] = {}
    for e in index:
        if not np.isfinite(e.t_start_s):
            raise DataError(f"corrupt index: non-finite timestamp for {e.segment_id}")
        by_patient.setdefault(e.patient_id, []).append(e)

    pairs = []
    for entries in by_patient.values():
        bad = sorted((e for e in entries if e.y > bad_threshold), key=lambda e: (e.t_start_s, e.segment_id))
        if not bad:
            continue
        times = [e.t_start_s for e in bad]
        for anchor in entries:
            if anchor.y > eps_good:
                continue
            ta = anchor.t_start_s
            # slack-widened bisection slice, then the exact strict-window test
            slack = 1e-9 * (abs(ta) + window_s + 1.0)
            lo = bisect.bisect_left(times, ta - window_s - slack)
            hi = bisect.bisect_right(times, ta + window_s + slack)
            best = None
            for cand in bad[lo:hi]:
                dt = abs(cand.t_start_s - ta)
                if dt < window_s and (best is None or _beats(cand, dt, best, abs(best.t_start_s - ta))):
                    best = cand
            if best is not None:
                pairs.append(QualityPair(anchor.segment_id, best.segment_id, best.y - anchor.y))
    pairs.sort(key=lambda p: p.anchor_id)
    return pairs


def _beats(cand, dt, best, best_dt) -> bool:
    if dt != best_dt:
        return dt > best_dt
    if cand.t_start_s != best.t_start_s:
        return cand.t_start_s > best.t_start_s
    return cand.segment_id < best.segment_id


def sort_curriculum(pairs: Sequence[QualityPair]) -> list[QualityPair]:
    """Easy pairs first: ascending c, ties broken by anchor_id."""
    return sorted(pairs, key=lambda p: (p.c, p.anchor_id))


def make_schedule(sorted_pairs: Sequence[QualityPair], n_stages: int = 4, epochs_per_stage: int = 1) -> CurriculumSchedule:
    """Split the sorted pairs into contiguous blocks; stage s trains on blocks 1..s.

    Non-divisible counts put the extra pairs in the earliest blocks.
    """
    if n_stages < 1:
        raise ValueError("n_stages must be >= 1")
    if epochs_per_stage < 0:
        raise ValueError("epochs_per_stage must be >= 0")
    n = len(sorted_pairs)
    if n_stages > n:
        raise ValueError(f"cannot split {n} pairs into {n_stages} stages")
    bounds = np.cumsum([len(b) for b in np.array_split(np.arange(n), n_stages)])
    return CurriculumSchedule(tuple(tuple(range(int(b))) for b in bounds), epochs_per_stage)


def index_from_manifest(rows) -> list[SegmentIndexEntry]:
    return [SegmentIndexEntry(r.segment_id, r.patient_id, r.t_start_s, r.quality_y) for r in rows]


def write_pairs(path, pairs: Sequence[QualityPair]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["anchor_id", "partner_id", "c"])
        for p in pairs:
            w.writerow([p.anchor_id, p.partner_id, repr(float(p.c))])


def read_pairs(path) -> list[QualityPair]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["anchor_id", "partner_id", "c"]:
            raise DataError(f"{path}: pair manifest header must be anchor_id,partner_id,c")
        try:
            return [QualityPair(r[0], r[1], float(r[2])) for r in reader if r]
        except (IndexError, ValueError):
            raise DataError(f"{path}: malformed pair row") from None


def write_schedule(path, schedule: CurriculumSchedule) -> None:
    """One row per (stage, pair) membership; stages are listed cumulatively."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "pair_row_index"])
        for s, rows in enumerate(schedule.stages):
            for r in rows:
                w.writerow([s, r])


def read_schedule(path, epochs_per_stage: int = 1) -> CurriculumSchedule:
    stages: dict[int, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["stage", "pair_row_index"]:
            raise DataError(f"{path}: schedule header must be stage,pair_row_index")
        try:
            for r in reader:
                if r:
                    stages.setdefault(int(r[0]), []).append(int(r[1]))
        except (IndexError, ValueError):
            raise DataError(f"{path}: malformed schedule row") from None
    if sorted(stages) != list(range(len(stages))):
        raise DataError(f"{path}: stage numbers must be consecutive from 0")
    ordered = tuple(tuple(stages[s]) for s in range(len(stages)))
    for prev, cur in zip(ordered, ordered[1:]):
        if not set(prev) <= set(cur):
            raise DataError(f"{path}: stages are not cumulative")
    return CurriculumSchedule(ordered, epochs_per_stage)
