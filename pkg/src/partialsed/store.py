"""Corpus directories: manifest + vocabulary + cached features + sources.

Layout:
    manifest.jsonl        one clip per line
    vocab.json            event and scene vocabularies
    feature_config.json   extraction settings the cache was built with
    sources.json          clip id -> audio provenance (wav path or synthetic
                          descriptor), enough to rebuild the cache
    features/             header.json + <clip-id>.f32 matrices
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Clip, Recording, clipify, read_manifest, write_manifest
from .errors import ConfigError, DataError, IntegrityError
from .features import FeatureCache, FeatureConfig, clip_features
from .synth import SynthConfig, SynthDescriptor, synth_generate
from .vocab import Vocabulary, load_vocab, save_vocab

MANIFEST_NAME = "manifest.jsonl"
VOCAB_NAME = "vocab.json"
FEATURE_CONFIG_NAME = "feature_config.json"
SOURCES_NAME = "sources.json"
FEATURES_DIR = "features"


@dataclass
class Corpus:
    """An in-memory corpus: clips plus their feature matrices, aligned."""

    clips: list[Clip]
    events: list[str]
    scenes: list[str]
    feature_config: FeatureConfig
    features: np.ndarray

    def __len__(self) -> int:
        return len(self.clips)

    def __post_init__(self):
        if self.features.shape[0] != len(self.clips):
            raise DataError(
                f"{self.features.shape[0]} feature matrices for "
                f"{len(self.clips)} clips"
            )

    def with_clips(self, clips: Sequence[Clip]) -> "Corpus":
        """Same features under relabeled clips (ids must match in order)."""
        if [c.id for c in clips] != [c.id for c in self.clips]:
            raise DataError("relabeled clips must keep ids and order")
        return Corpus(list(clips), self.events, self.scenes,
                      self.feature_config, self.features)

    def subset(self, ids: Iterable[str]) -> "Corpus":
        wanted = set(ids)
        idx = [i for i, c in enumerate(self.clips) if c.id in wanted]
        return Corpus([self.clips[i] for i in idx], self.events, self.scenes,
                      self.feature_config, self.features[idx])


def synth_feature_config(config: SynthConfig) -> FeatureConfig:
    """Extraction geometry implied by a synthetic corpus (features are
    rendered directly, so window and rate fields are nominal)."""
    return FeatureConfig(
        sample_rate=16000,
        frame_length=config.hop,
        hop=config.hop,
        mel_bins=config.mel_bins,
        clip_length=config.clip_length,
    )


def _source_record(clip: Clip, recording: Recording) -> dict:
    src = recording.audio_source
    if isinstance(src, SynthDescriptor):
        return {"kind": "synth", "descriptor": src.to_json(), "start": clip.start,
                "length": clip.length}
    return {"kind": "wav", "path": str(src), "start": clip.start,
            "length": clip.length}


def _clip_from_source(clip: Clip, source: Mapping) -> tuple[Clip, Recording]:
    """Rehydrate enough of the recording to re-extract one clip."""
    start = float(source.get("start", 0.0))
    length = float(source.get("length", clip.length))
    clip = replace(clip, start=start, length=length)
    if source["kind"] == "synth":
        desc = SynthDescriptor.from_json(source["descriptor"])
        rec = Recording(id=clip.recording_id, scene=clip.scene,
                        duration=desc.clip_length, audio_source=desc)
    elif source["kind"] == "wav":
        rec = Recording(id=clip.recording_id, scene=clip.scene,
                        duration=start + length, audio_source=source["path"])
    else:
        raise DataError(f"unknown source kind {source['kind']!r}")
    return clip, rec


def write_corpus(
    directory: str | Path,
    clips: Sequence[Clip],
    recordings: Mapping[str, Recording],
    events: Sequence[str],
    scenes: Sequence[str],
    feature_config: FeatureConfig,
    overwrite: bool = False,
) -> None:
    """Write manifest, vocabulary, sources, and the rendered feature cache."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.exists() and not overwrite:
        raise ConfigError(f"{manifest_path} exists; pass overwrite to replace it")
    directory.mkdir(parents=True, exist_ok=True)
    write_manifest(clips, manifest_path)
    save_vocab(directory / VOCAB_NAME, Vocabulary(events), Vocabulary(scenes))
    (directory / FEATURE_CONFIG_NAME).write_text(
        json.dumps(feature_config.to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    sources = {}
    cache = FeatureCache.create(directory / FEATURES_DIR, feature_config)
    for clip in clips:
        rec = recordings[clip.recording_id]
        sources[clip.id] = _source_record(clip, rec)
        cache.write(clip.id, clip_features(clip, rec, feature_config))
    (directory / SOURCES_NAME).write_text(
        json.dumps(sources, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def build_synth_corpus(
    directory: str | Path,
    config: SynthConfig,
    seed: int,
    overwrite: bool = False,
) -> None:
    """Generate a synthetic corpus and persist it. Deterministic per seed."""
    recordings = synth_generate(config, seed)
    clips = []
    for rec in recordings:
        clips.extend(clipify(rec, config.clip_length))
    feature_config = synth_feature_config(config)
    write_corpus(
        directory,
        clips,
        {rec.id: rec for rec in recordings},
        list(config.events),
        list(config.scenes),
        feature_config,
        overwrite=overwrite,
    )


def load_corpus(directory: str | Path) -> Corpus:
    """Read a corpus directory; rebuilds missing features from sources."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataError(f"no corpus manifest at {manifest_path}")
    config_path = directory / FEATURE_CONFIG_NAME
    if not config_path.is_file():
        raise DataError(f"no feature config at {config_path}")
    feature_config = FeatureConfig.from_json(
        json.loads(config_path.read_text(encoding="utf-8"))
    )
    events, scenes = load_vocab(directory / VOCAB_NAME)
    clips = read_manifest(manifest_path, clip_length=feature_config.clip_length)
    if not clips:
        raise DataError(f"empty manifest at {manifest_path}")

    cache_dir = directory / FEATURES_DIR
    try:
        cache = FeatureCache.open(cache_dir, feature_config)
    except IntegrityError:
        cache = None
    if cache is not None:
        missing = set(c.id for c in clips) - set(cache.ids())
    else:
        missing = set(c.id for c in clips)
    if missing:
        cache = _rebuild_features(directory, clips, feature_config, missing, cache)

    features = np.stack([cache.read(clip.id) for clip in clips])
    return Corpus(clips, list(events), list(scenes), feature_config, features)


def _rebuild_features(
    directory: Path,
    clips: Sequence[Clip],
    feature_config: FeatureConfig,
    missing: set[str],
    cache: FeatureCache | None,
) -> FeatureCache:
    sources_path = directory / SOURCES_NAME
    if not sources_path.is_file():
        raise DataError(
            f"features missing for {len(missing)} clips and no sources file "
            f"to rebuild from ({sources_path})"
        )
    sources = json.loads(sources_path.read_text(encoding="utf-8"))
    if cache is None:
        cache = FeatureCache.create(directory / FEATURES_DIR, feature_config)
    for clip in clips:
        if clip.id not in missing:
            continue
        if clip.id not in sources:
            raise DataError(f"clip {clip.id!r} has neither features nor a source")
        shifted, rec = _clip_from_source(clip, sources[clip.id])
        cache.write(clip.id, clip_features(shifted, rec, feature_config))
    return cache


def rewrite_manifest(directory: str | Path, clips: Sequence[Clip]) -> None:
    """Replace the manifest (label transformations keep features intact)."""
    write_manifest(clips, Path(directory) / MANIFEST_NAME)


def reference_labels(
    clips: Sequence[Clip],
) -> tuple[dict[str, str], dict[str, list], dict[str, float]]:
    """(scene refs, event refs, clip lengths) keyed by clip id, for scoring.

    Requires strong clips; weak or partial clips cannot serve as event
    ground truth.
    """
    scene_refs: dict[str, str] = {}
    event_refs: dict[str, list] = {}
    lengths: dict[str, float] = {}
    for clip in clips:
        if clip.events is None:
            raise DataError(
                f"clip {clip.id!r} has supervision={clip.supervision!r}; "
                "evaluation needs strong reference labels"
            )
        scene_refs[clip.id] = clip.scene
        event_refs[clip.id] = list(clip.events)
        lengths[clip.id] = clip.length
    return scene_refs, event_refs, lengths
