"""Clip-level corpus handling.

Recordings carry scene labels and strongly annotated event intervals.
From there, clips are cut to a fixed length and the supervision can be
degraded (strong -> weak -> partial) or split into mixed regimes for
semi-supervised training.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import AnnotationError, ConfigError, ContractError, DataError
from .vocab import Vocabulary

STRONG = "strong"
WEAK = "weak"
PARTIAL = "partial"
SUPERVISION_KINDS = (STRONG, WEAK, PARTIAL)

DEFAULT_CLIP_LENGTH = 10.0


@dataclass(frozen=True)
class EventInterval:
    """A sound event occurrence: (onset, offset) in seconds plus its label."""

    onset: float
    offset: float
    label: str

    def __post_init__(self):
        if self.onset < 0:
            raise ContractError(f"onset must be >= 0, got {self.onset}")
        if self.offset <= self.onset:
            raise ContractError(
                f"offset must exceed onset, got ({self.onset}, {self.offset})"
            )

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class Recording:
    """A scene-labeled recording with strong event annotations.

    ``audio_source`` is either a path to a mono PCM file or a synthetic
    descriptor that renders directly to a feature matrix.
    """

    id: str
    scene: str
    duration: float
    events: tuple[EventInterval, ...] = ()
    audio_source: object = None

    def __post_init__(self):
        for ev in self.events:
            if ev.onset < 0 or ev.offset > self.duration + 1e-9:
                raise ContractError(
                    f"event {ev} lies outside recording {self.id!r} "
                    f"of duration {self.duration}"
                )


@dataclass(frozen=True)
class Clip:
    """A fixed-length segment with exactly one kind of event supervision.

    Exactly the field matching ``supervision`` is populated:
    ``events`` for strong, ``weak`` for weak, ``partial`` for partial.
    Event times are clip-relative.
    """

    id: str
    recording_id: str
    start: float
    length: float
    scene: str
    supervision: str
    events: tuple[EventInterval, ...] | None = None
    weak: tuple[int, ...] | None = None
    partial: frozenset[str] | None = None

    def __post_init__(self):
        if self.supervision not in SUPERVISION_KINDS:
            raise ContractError(f"unknown supervision kind {self.supervision!r}")
        populated = {
            STRONG: self.events is not None,
            WEAK: self.weak is not None,
            PARTIAL: self.partial is not None,
        }
        if not populated[self.supervision] or sum(populated.values()) != 1:
            raise ContractError(
                f"clip {self.id!r} with supervision={self.supervision!r} must "
                "populate exactly the matching label field"
            )
        if self.supervision == STRONG:
            for ev in self.events:
                if ev.offset > self.length + 1e-9:
                    raise ContractError(
                        f"event {ev} exceeds clip length {self.length}"
                    )


@dataclass(frozen=True)
class SplitSpec:
    """How much strong supervision to keep and what to degrade the rest to."""

    strong_fraction: float
    degrade_to: str = WEAK
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.strong_fraction <= 1.0:
            raise ContractError(
                f"strong_fraction must be in [0, 1], got {self.strong_fraction}"
            )
        if self.degrade_to not in (WEAK, PARTIAL):
            raise ContractError(f"degrade_to must be weak or partial, got {self.degrade_to!r}")


def parse_annotation(text: str, vocabulary: Vocabulary | None = None) -> list[EventInterval]:
    """Parse TUT-style annotation text into sorted event intervals.

    Accepts both the 3-column layout ``onset offset label`` and the
    5-column layout ``file scene onset offset label``. Columns are split
    on tabs when present, otherwise on whitespace (labels may contain
    spaces, so numeric columns anchor the split).
    """
    intervals = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        onset, offset, label = _parse_line(line, lineno)
        label = label.strip().lower()
        if not label:
            raise AnnotationError(f"missing event label at line {lineno}")
        if offset <= onset:
            raise AnnotationError(f"offset <= onset at line {lineno}: {raw!r}")
        if onset < 0:
            raise AnnotationError(f"negative onset at line {lineno}: {raw!r}")
        if vocabulary is not None and label not in vocabulary:
            raise AnnotationError(
                f"unknown label {label!r} at line {lineno}; "
                f"vocabulary is {vocabulary.names}"
            )
        intervals.append(EventInterval(onset, offset, label))
    intervals.sort(key=lambda ev: (ev.onset, ev.offset, ev.label))
    return intervals


def _parse_line(line: str, lineno: int) -> tuple[float, float, str]:
    fields = line.split("\t") if "\t" in line else line.split()
    fields = [f.strip() for f in fields if f.strip()]
    if len(fields) < 3:
        raise AnnotationError(f"expected at least 3 columns at line {lineno}: {line!r}")
    if _is_number(fields[0]):
        # onset offset label...
        num_at = 0
    elif len(fields) >= 5 and _is_number(fields[2]):
        # file scene onset offset label...
        num_at = 2
    else:
        raise AnnotationError(
            f"cannot locate numeric onset/offset columns at line {lineno}: {line!r}"
        )
    try:
        onset = float(fields[num_at])
        offset = float(fields[num_at + 1])
    except (ValueError, IndexError):
        raise AnnotationError(
            f"non-numeric onset/offset at line {lineno}: {line!r}"
        ) from None
    label = " ".join(fields[num_at + 2 :])
    return onset, offset, label


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def clipify(recording: Recording, clip_length: float = DEFAULT_CLIP_LENGTH) -> list[Clip]:
    """Cut a recording into consecutive non-overlapping strong clips.

    Events intersecting a clip are clipped to its boundaries; a short
    final remainder is kept (zero-padded later at the feature stage).
    """
    if clip_length <= 0:
        raise ContractError(f"clip_length must be positive, got {clip_length}")
    n_clips = max(1, math.ceil(recording.duration / clip_length - 1e-9))
    clips = []
    for k in range(n_clips):
        cs = k * clip_length
        ce = min(cs + clip_length, recording.duration)
        events = []
        for ev in recording.events:
            if ev.onset < ce and ev.offset > cs:
                events.append(
                    EventInterval(max(ev.onset, cs) - cs, min(ev.offset, ce) - cs, ev.label)
                )
        clips.append(
            Clip(
                id=f"{recording.id}_{k:03d}",
                recording_id=recording.id,
                start=cs,
                length=clip_length,
                scene=recording.scene,
                supervision=STRONG,
                events=tuple(events),
            )
        )
    return clips


def strip_to_weak(clip: Clip, events_vocab: Vocabulary) -> Clip:
    """Collapse strong events to a clip-level presence vector."""
    if clip.supervision != STRONG:
        raise ContractError(f"strip_to_weak needs a strong clip, got {clip.supervision!r}")
    weak = [0] * len(events_vocab)
    for ev in clip.events:
        weak[events_vocab.index(ev.label)] = 1
    return replace(clip, supervision=WEAK, events=None, weak=tuple(weak))


def assign_partial(clip: Clip, candidate_table) -> Clip:
    """Replace the clip's labels by the scene's candidate event set."""
    mapping = getattr(candidate_table, "mapping", candidate_table)
    if clip.scene not in mapping:
        raise ConfigError(
            f"scene {clip.scene!r} missing from candidate table "
            f"(has {sorted(mapping)})"
        )
    candidates = frozenset(mapping[clip.scene])
    return replace(
        clip, supervision=PARTIAL, events=None, weak=None, partial=candidates
    )


def split_semi(
    clips: Sequence[Clip],
    spec: SplitSpec,
    events_vocab: Vocabulary,
    candidate_table=None,
) -> tuple[list[Clip], list[Clip]]:
    """Keep a seed-deterministic fraction strong, degrade the rest.

    Returns (strong subset, degraded subset); their union is the input.
    The strong count is floor(fraction * K + 0.5).
    """
    for clip in clips:
        if clip.supervision != STRONG:
            raise ContractError("split_semi expects all clips strong-labeled")
    if spec.degrade_to == PARTIAL and candidate_table is None:
        raise ConfigError("degrade_to=partial requires a candidate table")
    k = len(clips)
    n_strong = int(math.floor(spec.strong_fraction * k + 0.5))
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(k)
    strong_idx = sorted(perm[:n_strong].tolist())
    degraded_idx = sorted(perm[n_strong:].tolist())
    strong_subset = [clips[i] for i in strong_idx]
    if spec.degrade_to == WEAK:
        degraded = [strip_to_weak(clips[i], events_vocab) for i in degraded_idx]
    else:
        degraded = [assign_partial(clips[i], candidate_table) for i in degraded_idx]
    return strong_subset, degraded


# ---------------------------------------------------------------------------
# Corpus manifest (one JSON record per clip, fixed field names)
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ("id", "scene", "supervision", "events", "weak", "partial")


def clip_to_record(clip: Clip) -> dict:
    return {
        "id": clip.id,
        "scene": clip.scene,
        "supervision": clip.supervision,
        "events": [[ev.onset, ev.offset, ev.label] for ev in clip.events]
        if clip.events is not None
        else None,
        "weak": list(clip.weak) if clip.weak is not None else None,
        "partial": sorted(clip.partial) if clip.partial is not None else None,
    }


def record_to_clip(record: Mapping, clip_length: float = DEFAULT_CLIP_LENGTH) -> Clip:
    missing = [f for f in MANIFEST_FIELDS if f not in record]
    if missing:
        raise DataError(f"manifest record missing fields {missing}: {record}")
    events = record["events"]
    weak = record["weak"]
    partial = record["partial"]
    return Clip(
        id=record["id"],
        recording_id=record["id"],
        start=0.0,
        length=clip_length,
        scene=record["scene"],
        supervision=record["supervision"],
        events=tuple(EventInterval(o, f, lb) for o, f, lb in events)
        if events is not None
        else None,
        weak=tuple(int(v) for v in weak) if weak is not None else None,
        partial=frozenset(partial) if partial is not None else None,
    )


def write_manifest(clips: Iterable[Clip], path: str | Path) -> None:
    path = Path(path)
    seen = set()
    lines = []
    for clip in clips:
        if clip.id in seen:
            raise DataError(f"duplicate clip id {clip.id!r}")
        seen.add(clip.id)
        lines.append(json.dumps(clip_to_record(clip), sort_keys=True))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path: str | Path, clip_length: float = DEFAULT_CLIP_LENGTH) -> list[Clip]:
    path = Path(path)
    clips = []
    seen = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"bad manifest line {lineno} in {path}: {exc}") from None
        clip = record_to_clip(record, clip_length=clip_length)
        if clip.id in seen:
            raise DataError(f"duplicate clip id {clip.id!r} at line {lineno}")
        seen.add(clip.id)
        clips.append(clip)
    return clips
