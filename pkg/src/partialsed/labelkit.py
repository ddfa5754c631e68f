"""Label representations and transformations.

Strong labels live as T x M binary frame matrices, weak labels as M-dim
multi-hot vectors, partial labels as candidate sets per scene. This module
converts between them, renders the candidate-generation prompt, talks to
the language-model endpoint, and thresholds posteriors for distillation.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np
import requests

from .corpus import Clip, EventInterval, Recording, STRONG
from .errors import AnnotationError, ConfigError, ContractError, LlmError

CANDIDATE_PROVENANCES = ("llm", "file", "cooccurrence")

PROMPT_HEADER = "Here is the list of {count} possible sound events:"
PROMPT_OBJECT_NOTE = (
    'Here, "object" refers to an unknown sound source, although we can '
    "understand how the sound is produced. We can include these ambiguous "
    "object sounds in the list."
)
PROMPT_QUESTION = (
    "If we are in a {scene} scene, which sound events are likely to be heard?\n"
    "Please list all the sound events one by one (without merging) in CSV "
    "format, and provide your reasoning process in a two-column CSV format."
)


def _event_index(events: Sequence[str]) -> dict[str, int]:
    return {name: m for m, name in enumerate(events)}


def rasterize(clip: Clip, frames: int, hop: float, events: Sequence[str]) -> np.ndarray:
    """Frame-level targets for a strong clip: (frames, M) in {0, 1}.

    Frame t covers [t*hop, (t+1)*hop); a frame is active for a label when
    some interval of that label overlaps it with positive measure.
    """
    if clip.supervision != STRONG:
        raise ContractError(
            f"rasterize needs a strong clip, got supervision={clip.supervision!r}"
        )
    index = _event_index(events)
    out = np.zeros((frames, len(events)), dtype=np.float32)
    for ev in clip.events:
        if ev.label not in index:
            raise ConfigError(f"event label {ev.label!r} not in vocabulary")
        lo = max(0, int(np.floor(ev.onset / hop + 1e-9)))
        hi = min(frames, int(np.ceil(ev.offset / hop - 1e-9)))
        if hi > lo:
            out[lo:hi, index[ev.label]] = 1.0
    return out


def weak_target(labels: Iterable[str], events: Sequence[str]) -> np.ndarray:
    """Multi-hot M-dim vector from a set of event names."""
    index = _event_index(events)
    out = np.zeros(len(events), dtype=np.float32)
    for name in labels:
        if name not in index:
            raise ConfigError(f"event label {name!r} not in vocabulary")
        out[index[name]] = 1.0
    return out


def partial_to_weak_target(partial: Iterable[str], events: Sequence[str]) -> np.ndarray:
    """Candidate set as a weak vector; the candidates are trained as if present."""
    partial = frozenset(partial)
    if not partial:
        warnings.warn("empty partial candidate set: clip contributes all-zero targets")
    return weak_target(partial, events)


def expand_pseudo_strong(weak: np.ndarray, frames: int) -> np.ndarray:
    """Broadcast a weak vector over every frame."""
    if frames < 1:
        raise ContractError("frames must be >= 1")
    weak = np.asarray(weak, dtype=np.float32)
    if weak.ndim != 1:
        raise ContractError(f"weak vector must be 1-D, got shape {weak.shape}")
    return np.tile(weak, (frames, 1))


def scene_target(scene: str, scenes: Sequence[str]) -> np.ndarray:
    out = np.zeros(len(scenes), dtype=np.float32)
    try:
        out[list(scenes).index(scene)] = 1.0
    except ValueError:
        raise ConfigError(f"scene {scene!r} not in vocabulary {list(scenes)}") from None
    return out


# ---------------------------------------------------------------------------
# Candidate tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CandidateTable:
    """Scene name -> candidate event set, with a provenance tag."""

    mapping: Mapping[str, frozenset[str]]
    provenance: str = "file"

    def __post_init__(self):
        if self.provenance not in CANDIDATE_PROVENANCES:
            raise ConfigError(
                f"provenance must be one of {CANDIDATE_PROVENANCES}, "
                f"got {self.provenance!r}"
            )
        object.__setattr__(
            self,
            "mapping",
            {scene: frozenset(evs) for scene, evs in dict(self.mapping).items()},
        )

    def candidates(self, scene: str) -> frozenset[str]:
        if scene not in self.mapping:
            raise ConfigError(f"no candidate set for scene {scene!r}")
        return self.mapping[scene]

    def validate(self, events: Sequence[str], scenes: Sequence[str]) -> None:
        known = set(events)
        for scene, evs in self.mapping.items():
            bad = sorted(evs - known)
            if bad:
                raise ConfigError(f"scene {scene!r} lists unknown events {bad}")
        missing = sorted(set(scenes) - set(self.mapping))
        if missing:
            raise ConfigError(f"candidate table misses scenes {missing}")

    def to_csv(self, path: str | Path) -> None:
        lines = ["scene,event"]
        for scene in sorted(self.mapping):
            for ev in sorted(self.mapping[scene]):
                lines.append(f"{scene},{ev}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path, provenance: str = "file") -> "CandidateTable":
        mapping: dict[str, set[str]] = {}
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip().lower() != "scene,event":
            raise AnnotationError(f"{path}: expected 'scene,event' header")
        for ln, line in enumerate(lines[1:], start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",", 1)
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise AnnotationError(f"{path}:{ln}: malformed row {line!r}")
            mapping.setdefault(parts[0].strip(), set()).add(parts[1].strip())
        return cls({s: frozenset(e) for s, e in mapping.items()}, provenance)

    @classmethod
    def from_cooccurrence(cls, recordings: Iterable[Recording]) -> "CandidateTable":
        """Observed scene/event co-occurrences in strongly annotated data."""
        mapping: dict[str, set[str]] = {}
        for rec in recordings:
            seen = mapping.setdefault(rec.scene, set())
            for ev in rec.events:
                seen.add(ev.label)
        return cls({s: frozenset(e) for s, e in mapping.items()}, "cooccurrence")


# ---------------------------------------------------------------------------
# Prompting and the language-model endpoint
# ---------------------------------------------------------------------------


def render_prompt(scene: str, events: Sequence[str]) -> str:
    """Candidate-generation prompt for one scene. Byte-stable per vocabulary.

    The explanatory note about "object" classes is emitted only when the
    vocabulary actually contains such names.
    """
    parts = [
        PROMPT_HEADER.format(count=len(events)),
        ", ".join(events) + ".",
    ]
    if any(name.startswith("object") for name in events):
        parts.append("")
        parts.append(PROMPT_OBJECT_NOTE)
    parts.append("")
    parts.append(PROMPT_QUESTION.format(scene=scene))
    return "\n".join(parts)


class LlmClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class HttpLlmClient:
    """Chat-completion client over HTTP; key comes from the environment."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            resp = requests.post(
                self.endpoint, json=body, headers=headers, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise LlmError(f"request failed: {exc}", retryable=True) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise LlmError(
                f"endpoint returned {resp.status_code}", retryable=True,
                raw_reply=resp.text,
            )
        if resp.status_code != 200:
            raise LlmError(
                f"endpoint returned {resp.status_code}", raw_reply=resp.text
            )
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LlmError(
                f"unexpected reply shape: {exc}", raw_reply=resp.text
            ) from exc


def parse_candidate_reply(
    text: str, events: Sequence[str]
) -> tuple[frozenset[str], list[tuple[str, str]]]:
    """Extract (candidates, (event, reason) rows) from a CSV-ish reply.

    Rows whose first cell is not a vocabulary event are dropped with a
    warning; an entirely unusable reply raises and carries the raw text.
    """
    known = set(events)
    found: set[str] = set()
    reasons: list[tuple[str, str]] = []
    for line in text.splitlines():
        line = line.strip().strip("`")
        if not line:
            continue
        cells = [c.strip().strip('"').strip("'") for c in line.split(",", 1)]
        name = cells[0].lstrip("-*0123456789. ").strip('"').strip("'").lower()
        reason = cells[1] if len(cells) > 1 else ""
        if name in known:
            found.add(name)
            reasons.append((name, reason))
        elif name and name not in {"event", "sound event"}:
            warnings.warn(f"dropping out-of-vocabulary reply line {line!r}")
    if not found:
        raise LlmError("no vocabulary events found in reply", raw_reply=text)
    return frozenset(found), reasons


def fetch_candidates(
    scene: str,
    client: LlmClient,
    events: Sequence[str],
    archive_dir: str | Path | None = None,
) -> tuple[frozenset[str], list[tuple[str, str]]]:
    """One scene's candidate set from the endpoint, with the raw reply archived."""
    prompt = render_prompt(scene, events)
    reply = client.complete(prompt)
    if archive_dir is not None:
        archive_dir = Path(archive_dir)
        archive_dir.mkdir(parents=True, exist_ok=True)
        stamp = time.strftime("%Y%m%dT%H%M%S")
        record = {"scene": scene, "prompt": prompt, "reply": reply, "time": stamp}
        safe = scene.replace(" ", "_").replace("/", "_")
        (archive_dir / f"{safe}_{stamp}.json").write_text(
            json.dumps(record, indent=2) + "\n", encoding="utf-8"
        )
    return parse_candidate_reply(reply, events)


def build_candidate_table(
    scenes: Sequence[str],
    client: LlmClient,
    events: Sequence[str],
    archive_dir: str | Path | None = None,
) -> CandidateTable:
    mapping = {}
    for scene in scenes:
        mapping[scene], _ = fetch_candidates(scene, client, events, archive_dir)
    return CandidateTable(mapping, provenance="llm")


# ---------------------------------------------------------------------------
# Self-distillation thresholding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DistillConfig:
    threshold: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")


def distill_labels(posteriors: np.ndarray, config: DistillConfig) -> np.ndarray:
    """Binary frame matrix from posteriors; ties at the threshold count as 1."""
    posteriors = np.asarray(posteriors)
    if posteriors.min() < 0.0 or posteriors.max() > 1.0:
        raise ContractError("posteriors must lie in [0, 1]")
    return (posteriors >= config.threshold).astype(np.float32)


def restrict_distilled(
    matrix: np.ndarray,
    partial: Iterable[str],
    events: Sequence[str],
    enabled: bool = True,
) -> np.ndarray:
    """Zero the rows of events outside the clip's candidate set."""
    if not enabled:
        return matrix
    keep = weak_target(frozenset(partial), events)
    return (np.asarray(matrix) * keep[np.newaxis, :]).astype(np.float32)


def matrix_to_events(
    matrix: np.ndarray, hop: float, events: Sequence[str]
) -> list[EventInterval]:
    """Maximal runs of active frames, as intervals. Inverse of rasterize."""
    matrix = np.asarray(matrix)
    out: list[EventInterval] = []
    for m, name in enumerate(events):
        col = matrix[:, m] > 0.5
        if not col.any():
            continue
        padded = np.concatenate([[False], col, [False]])
        edges = np.flatnonzero(padded[1:] != padded[:-1])
        for lo, hi in zip(edges[::2], edges[1::2]):
            out.append(EventInterval(lo * hop, hi * hop, name))
    return sorted(out, key=lambda ev: (ev.onset, ev.offset, ev.label))
