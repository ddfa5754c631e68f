"""Evaluation protocol.

Event detection is scored two ways: segment-based (fixed 1 s cells
treated as multi-label classification) and intersection-based (DTC/GTC
interval criteria at one operating point). Scene classification is
single-label micro/macro F. Multi-run results aggregate as mean plus
sample standard deviation.

Conventions pinned here: segment macro-F skips classes with
TP+FP+FN = 0, scene macro-F keeps every class; intersections use exact
interval endpoints, never frame grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import EventInterval
from .errors import ConfigError


@dataclass(frozen=True)
class SegmentConfig:
    segment_length: float = 1.0

    def __post_init__(self):
        if self.segment_length <= 0:
            raise ConfigError("segment_length must be > 0")


@dataclass(frozen=True)
class IntersectionConfig:
    rho_dtc: float = 0.1
    rho_gtc: float = 0.1

    def __post_init__(self):
        for name in ("rho_dtc", "rho_gtc"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {value}")


def fscore(tp: float, fp: float, fn: float) -> float:
    denom = 2.0 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


@dataclass
class CountsReport:
    """Per-class TP/FP/FN tallies; real values allowed for run averages."""

    counts: dict[str, list[float]] = field(default_factory=dict)

    def add(self, label: str, tp: float = 0, fp: float = 0, fn: float = 0) -> None:
        cell = self.counts.setdefault(label, [0.0, 0.0, 0.0])
        cell[0] += tp
        cell[1] += fp
        cell[2] += fn

    def touch(self, label: str) -> None:
        self.counts.setdefault(label, [0.0, 0.0, 0.0])

    def per_class_f(self) -> dict[str, float]:
        return {label: fscore(*cell) for label, cell in sorted(self.counts.items())}

    def micro_f(self) -> float:
        tp = sum(c[0] for c in self.counts.values())
        fp = sum(c[1] for c in self.counts.values())
        fn = sum(c[2] for c in self.counts.values())
        return fscore(tp, fp, fn)

    def macro_f(self, include_empty: bool = False) -> float:
        scores = []
        for cell in self.counts.values():
            if include_empty or sum(cell) > 0:
                scores.append(fscore(*cell))
        return sum(scores) / len(scores) if scores else 0.0

    def to_json(self) -> dict:
        return {label: {"tp": c[0], "fp": c[1], "fn": c[2]}
                for label, c in sorted(self.counts.items())}

    @classmethod
    def averaged(cls, reports: Sequence["CountsReport"]) -> "CountsReport":
        """Mean counts across runs, per class."""
        out = cls()
        labels = sorted({label for r in reports for label in r.counts})
        for label in labels:
            cells = [r.counts.get(label, [0.0, 0.0, 0.0]) for r in reports]
            n = len(reports)
            out.counts[label] = [sum(c[i] for c in cells) / n for i in range(3)]
        return out


# ---------------------------------------------------------------------------
# Segment-based scoring
# ---------------------------------------------------------------------------


def segment_scores(
    refs: Mapping[str, Sequence[EventInterval]],
    preds: Mapping[str, Sequence[EventInterval]],
    config: SegmentConfig = SegmentConfig(),
    clip_length: float | Mapping[str, float] = 10.0,
    labels: Sequence[str] | None = None,
) -> tuple[float, float, CountsReport]:
    """(micro-F, macro-F, per-class counts) over fixed time cells.

    ``refs`` and ``preds`` map clip id -> intervals; every clip id in
    either mapping is scored (a clip missing from one side counts as
    empty there). A cell is active for a class when some interval of the
    class overlaps it with positive measure.
    """
    report = CountsReport()
    if labels is not None:
        for label in labels:
            report.touch(label)
    seg = config.segment_length
    for clip_id in sorted(set(refs) | set(preds)):
        length = (
            clip_length[clip_id] if isinstance(clip_length, Mapping) else clip_length
        )
        n_seg = max(1, int(math.ceil(length / seg - 1e-9)))
        ref_cells = _cells(refs.get(clip_id, ()), n_seg, seg)
        pred_cells = _cells(preds.get(clip_id, ()), n_seg, seg)
        for label in set(ref_cells) | set(pred_cells):
            r = ref_cells.get(label, set())
            p = pred_cells.get(label, set())
            report.add(label, tp=len(r & p), fp=len(p - r), fn=len(r - p))
    return report.micro_f(), report.macro_f(), report


def _cells(
    intervals: Iterable[EventInterval], n_seg: int, seg: float
) -> dict[str, set[int]]:
    out: dict[str, set[int]] = {}
    for iv in intervals:
        lo = max(0, int(math.floor(iv.onset / seg + 1e-9)))
        hi = min(n_seg, int(math.ceil(iv.offset / seg - 1e-9)))
        if hi > lo:
            out.setdefault(iv.label, set()).update(range(lo, hi))
    return out


# ---------------------------------------------------------------------------
# Intersection-based scoring (DTC / GTC)
# ---------------------------------------------------------------------------


def _merge(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def _overlap(lo: float, hi: float, merged: list[tuple[float, float]]) -> float:
    total = 0.0
    for mlo, mhi in merged:
        total += max(0.0, min(hi, mhi) - max(lo, mlo))
    return total


def intersection_scores(
    refs: Mapping[str, Sequence[EventInterval]],
    preds: Mapping[str, Sequence[EventInterval]],
    config: IntersectionConfig = IntersectionConfig(),
    labels: Sequence[str] | None = None,
) -> tuple[float, float, CountsReport]:
    """(micro-F, macro-F, counts) under the DTC/GTC interval criteria.

    A detection passes DTC when at least rho_dtc of its span intersects
    same-class references; otherwise it is a false positive. A reference
    is a true positive when at least rho_gtc of its span intersects
    DTC-passing detections, else a false negative.
    """
    report = CountsReport()
    if labels is not None:
        for label in labels:
            report.touch(label)
    for clip_id in sorted(set(refs) | set(preds)):
        ref_by: dict[str, list[tuple[float, float]]] = {}
        for iv in refs.get(clip_id, ()):
            ref_by.setdefault(iv.label, []).append((iv.onset, iv.offset))
        pred_by: dict[str, list[tuple[float, float]]] = {}
        for iv in preds.get(clip_id, ()):
            pred_by.setdefault(iv.label, []).append((iv.onset, iv.offset))
        for label in set(ref_by) | set(pred_by):
            ref_merged = _merge(ref_by.get(label, []))
            passing: list[tuple[float, float]] = []
            fp = 0
            for lo, hi in pred_by.get(label, []):
                ratio = _overlap(lo, hi, ref_merged) / (hi - lo)
                if ratio >= config.rho_dtc:
                    passing.append((lo, hi))
                else:
                    fp += 1
            passing_merged = _merge(passing)
            tp = fn = 0
            for lo, hi in ref_by.get(label, []):
                ratio = _overlap(lo, hi, passing_merged) / (hi - lo)
                if ratio >= config.rho_gtc:
                    tp += 1
                else:
                    fn += 1
            report.add(label, tp=tp, fp=fp, fn=fn)
    return report.micro_f(), report.macro_f(), report


# ---------------------------------------------------------------------------
# Scene classification scoring
# ---------------------------------------------------------------------------


def scene_scores(
    refs: Sequence[str],
    preds: Sequence[str],
    scenes: Sequence[str] | None = None,
) -> tuple[float, float, dict[str, float]]:
    """(micro-F, macro-F, per-class F) for single-label classification.

    Micro-F reduces to accuracy. Macro-F averages over every class in
    ``scenes`` (default: all labels seen on either side).
    """
    if len(refs) != len(preds):
        raise ConfigError(f"{len(refs)} references vs {len(preds)} predictions")
    if scenes is None:
        scenes = sorted(set(refs) | set(preds))
    per_class: dict[str, float] = {}
    for scene in scenes:
        tp = sum(1 for r, p in zip(refs, preds) if r == scene and p == scene)
        fp = sum(1 for r, p in zip(refs, preds) if r != scene and p == scene)
        fn = sum(1 for r, p in zip(refs, preds) if r == scene and p != scene)
        per_class[scene] = fscore(tp, fp, fn)
    micro = (
        sum(1 for r, p in zip(refs, preds) if r == p) / len(refs) if refs else 0.0
    )
    macro = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return micro, macro, per_class


# ---------------------------------------------------------------------------
# Multi-run aggregation and the report file
# ---------------------------------------------------------------------------


def aggregate_runs(values: Sequence[float]) -> tuple[float, float | None]:
    """Mean and (n-1) standard deviation; std is None for a single run."""
    if not values:
        raise ConfigError("no runs to aggregate")
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, None
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def format_aggregate(values: Sequence[float], percent: bool = True) -> str:
    """Render fractions as ``xx.xx% ± y.yy`` (std omitted for one run)."""
    scale = 100.0 if percent else 1.0
    mean, std = aggregate_runs(values)
    suffix = "%" if percent else ""
    if std is None:
        return f"{mean * scale:.2f}{suffix}"
    return f"{mean * scale:.2f}{suffix} ± {std * scale:.2f}"


def write_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")


def evaluation_report(
    scene_refs: Sequence[str],
    scene_preds: Sequence[str],
    event_refs: Mapping[str, Sequence[EventInterval]],
    event_preds: Mapping[str, Sequence[EventInterval]],
    scenes: Sequence[str],
    events: Sequence[str],
    segment_config: SegmentConfig = SegmentConfig(),
    intersection_config: IntersectionConfig = IntersectionConfig(),
    clip_length: float | Mapping[str, float] = 10.0,
) -> dict:
    """All tasks scored into one JSON-ready structure."""
    seg_micro, seg_macro, seg_counts = segment_scores(
        event_refs, event_preds, segment_config, clip_length, labels=events
    )
    is_micro, is_macro, is_counts = intersection_scores(
        event_refs, event_preds, intersection_config, labels=events
    )
    sc_micro, sc_macro, sc_per_class = scene_scores(scene_refs, scene_preds, scenes)
    return {
        "scene": {
            "micro_f": sc_micro,
            "macro_f": sc_macro,
            "per_class_f": sc_per_class,
        },
        "event_segment": {
            "micro_f": seg_micro,
            "macro_f": seg_macro,
            "per_class_f": seg_counts.per_class_f(),
            "counts": seg_counts.to_json(),
        },
        "event_intersection": {
            "micro_f": is_micro,
            "macro_f": is_macro,
            "per_class_f": is_counts.per_class_f(),
            "counts": is_counts.to_json(),
        },
    }
