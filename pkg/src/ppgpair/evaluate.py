"""Task metrics, the artifact-tolerance curve, and embedding export.

The AT-curve places bin upper limits at u_b = b / n_bins. Bar counts are
per-interval: a record falls in the first bin whose limit is >= its
quality_y, so y = 0 lands in bin 1. The metric line is cumulative:
m(u_b) is computed over every record with quality_y <= u_b, in the
original record order, so m(1.0) is the whole-test-set metric.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .model import ModelBundle

METRIC_KINDS = ("mae", "f1")


@dataclass(frozen=True)
class EvalRecord:
    segment_id: str
    quality_y: float
    target: float
    prediction: float

    def __post_init__(self):
        if not 0.0 <= self.quality_y <= 1.0:
            raise ValueError(f"quality_y must lie in [0, 1], got {self.quality_y}")


def mean_absolute_error(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size == 0:
        raise ValueError("MAE of an empty set")
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.abs(pred - target).mean())


def f1_score(pred, target, positive=1) -> float:
    """2PR/(P+R); 0 when there are no true positives (covers P+R = 0)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.size == 0:
        raise ValueError("F1 of an empty set")
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    tp = int(np.sum((pred == positive) & (target == positive)))
    fp = int(np.sum((pred == positive) & (target != positive)))
    fn = int(np.sum((pred != positive) & (target == positive)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def mae(records: Sequence[EvalRecord]) -> float:
    return mean_absolute_error([r.prediction for r in records], [r.target for r in records])


def f1(records: Sequence[EvalRecord], positive_class=1) -> float:
    return f1_score([r.prediction for r in records], [r.target for r in records], positive_class)


def metric(records: Sequence[EvalRecord], kind: str) -> float:
    if kind == "mae":
        return mae(records)
    if kind == "f1":
        return f1(records)
    raise ValueError(f"metric_kind must be one of {METRIC_KINDS}")


# ---------------------------------------------------------------- AT-curve

@dataclass(frozen=True)
class ATCurve:
    upper_limits: tuple[float, ...]
    counts: tuple[int, ...]
    cumulative_counts: tuple[int, ...]
    values: tuple[float | None, ...]  # None where the cumulative subgroup is empty
    metric_kind: str


def at_curve(records: Sequence[EvalRecord], n_bins: int = 10, metric_kind: str = "mae") -> ATCurve:
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if metric_kind not in METRIC_KINDS:
        raise ValueError(f"metric_kind must be one of {METRIC_KINDS}")
    records = list(records)
    upper = np.array([b / n_bins for b in range(1, n_bins + 1)])
    ys = np.array([r.quality_y for r in records], dtype=np.float64)
    bins = np.searchsorted(upper, ys, side="left")
    counts = np.bincount(bins, minlength=n_bins)[:n_bins]
    values = []
    cumulative = []
    for u in upper:
        subgroup = [r for r in records if r.quality_y <= u]
        cumulative.append(len(subgroup))
        values.append(metric(subgroup, metric_kind) if subgroup else None)
    return ATCurve(tuple(float(u) for u in upper), tuple(int(c) for c in counts),
                   tuple(cumulative), tuple(values), metric_kind)


def write_report_csv(curve: ATCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u", "count", "cumulative_count", "metric"])
        for u, c, cc, v in zip(curve.upper_limits, curve.counts, curve.cumulative_counts, curve.values):
            w.writerow([repr(u), c, cc, "" if v is None else repr(float(v))])


def read_report_csv(path, metric_kind: str = "mae") -> ATCurve:
    us, counts, cum, vals = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            us.append(float(row["u"]))
            counts.append(int(row["count"]))
            cum.append(int(row["cumulative_count"]))
            vals.append(float(row["metric"]) if row["metric"] else None)
    return ATCurve(tuple(us), tuple(counts), tuple(cum), tuple(vals), metric_kind)


def render_svg(curve: ATCurve, width: int = 640, height: int = 360) -> str:
    """Bars for per-bin counts, a polyline for the cumulative metric."""
    left, right, top, bottom = 60, 60, 20, 40
    pw, ph = width - left - right, height - top - bottom
    n = len(curve.upper_limits)
    bar_w = pw / n
    max_count = max(max(curve.counts), 1)
    present = [v for v in curve.values if v is not None]
    vmin, vmax = (min(present), max(present)) if present else (0.0, 1.0)
    if vmax == vmin:
        vmin, vmax = vmin - 0.5, vmax + 0.5

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for i, (u, c) in enumerate(zip(curve.upper_limits, curve.counts)):
        bh = ph * c / max_count
        x = left + i * bar_w
        out.append(f'<rect x="{x + 2:.2f}" y="{top + ph - bh:.2f}" width="{bar_w - 4:.2f}" height="{bh:.2f}" '
                   f'fill="#9ecae1"><title>u={u:g} count={c}</title></rect>')
        out.append(f'<text x="{x + bar_w / 2:.2f}" y="{top + ph + 16}" font-size="11" text-anchor="middle">{u:g}</text>')
    points = []
    for i, v in enumerate(curve.values):
        if v is None:
            continue
        x = left + (i + 0.5) * bar_w
        y = top + ph - ph * (v - vmin) / (vmax - vmin)
        points.append(f"{x:.2f},{y:.2f}")
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="#d62728"/>')
    if points:
        out.append(f'<polyline points="{" ".join(points)}" fill="none" stroke="#d62728" stroke-width="2"/>')
    label = escape(f"{curve.metric_kind.upper()} (cumulative subgroup quality_y <= u)")
    out.append(f'<text x="{left + pw / 2}" y="{height - 6}" font-size="12" text-anchor="middle">{label}</text>')
    out.append(f'<text x="{width - right + 8}" y="{top + 10}" font-size="11">{vmax:.3g}</text>')
    out.append(f'<text x="{width - right + 8}" y="{top + ph}" font-size="11">{vmin:.3g}</text>')
    out.append(f'<text x="8" y="{top + 10}" font-size="11">{max_count}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_report(curve: ATCurve, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` and ``<path>.svg``; returns both paths."""
    path = Path(path)
    csv_path, svg_path = path.with_suffix(".csv"), path.with_suffix(".svg")
    write_report_csv(curve, csv_path)
    svg_path.write_text(render_svg(curve))
    return csv_path, svg_path


# ---------------------------------------------------------------- predictions on disk

def write_predictions(path, records: Sequence[EvalRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "quality_y", "target", "prediction"])
        for r in records:
            w.writerow([r.segment_id, repr(float(r.quality_y)), repr(float(r.target)), repr(float(r.prediction))])


def read_predictions(path) -> list[EvalRecord]:
    with open(path, newline="") as fh:
        return [EvalRecord(r["segment_id"], float(r["quality_y"]), float(r["target"]), float(r["prediction"]))
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------- embeddings

def export_embeddings(bundle: ModelBundle, segments, path=None) -> list[list]:
    """One row per segment: id, patient, start time, quality, then h = E(x).

    ``segments`` yields objects with ``segment_id``, ``patient_id``,
    ``t_start_s``, ``quality_y`` and normalized ``samples``.
    """
    segments = list(segments)
    x = np.stack([np.asarray(s.samples, dtype=bundle.dtype) for s in segments])[:, None, :]
    h = bundle.embed(x)
    rows = [[s.segment_id, s.patient_id, s.t_start_s, s.quality_y, *vec.tolist()] for s, vec in zip(segments, h)]
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment_id", "patient_id", "t_start_s", "quality_y"] +
                       [f"h{i}" for i in range(h.shape[1])])
            for r in rows:
                w.writerow(r[:2] + [repr(float(v)) for v in r[2:]])
    return rows


def nn1_accuracy(embeddings: np.ndarray, labels, metric: str = "cosine") -> float:
    """Leave-one-out 1-nearest-neighbour label accuracy."""
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if metric == "cosine":
        e = e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
        d = -(e @ e.T)
    elif metric == "euclidean":
        sq = (e * e).sum(axis=1)
        d = sq[:, None] + sq[None, :] - 2 * e @ e.T
    else:
        raise ValueError("metric must be cosine or euclidean")
    np.fill_diagonal(d, np.inf)
    return float(np.mean(labels[d.argmin(axis=1)] == labels))
