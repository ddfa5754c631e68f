"""Command-line surface.

Subcommands: ingest, synth, labels (to-weak / to-partial / prompt), train,
distill, eval, sweep. Exit codes: 0 success, 1 usage or configuration
error, 2 data error, 3 runtime failure. Commands refuse to clobber
existing outputs unless --overwrite is given, and drop a config snapshot
into every run directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import store
from .corpus import (
    PARTIAL,
    STRONG,
    WEAK,
    Recording,
    SplitSpec,
    clipify,
    parse_annotation,
    read_manifest,
    split_semi,
    strip_to_weak,
    write_manifest,
)
from .defaults import default_candidate_table, default_vocab
from .errors import (
    AnnotationError,
    ConfigError,
    DataError,
    IntegrityError,
    PartialSedError,
)
from .features import FeatureConfig
from .labelkit import CandidateTable, HttpLlmClient, build_candidate_table, render_prompt
from .metrics import (
    IntersectionConfig,
    SegmentConfig,
    aggregate_runs,
    format_aggregate,
    write_report,
)
from .network import ModelConfig
from .synth import SynthConfig, config_candidate_table, default_config
from .trainer import (
    TrainConfig,
    evaluate,
    load_result,
    self_distill,
    train,
)
from .vocab import Vocabulary, load_vocab

LLM_KEY_ENV = "PARTIALSED_LLM_API_KEY"

CLI_MODES = {
    "strong": "strong-mtl",
    "weak": "weak-mtl",
    "semi-weak": "semi-weak",
    "semi-partial": "semi-partial",
}


# ---------------------------------------------------------------------------
# Run configuration file
# ---------------------------------------------------------------------------

_RUN_SECTIONS = (
    "train", "model", "feature", "segment", "intersection", "split",
    "distill", "llm", "candidate_table",
)


@dataclass
class RunConfig:
    """Every tunable in one file; unknown keys are rejected."""

    train: TrainConfig = field(default_factory=TrainConfig)
    model: dict = field(default_factory=dict)
    feature: dict = field(default_factory=dict)
    segment: SegmentConfig = field(default_factory=SegmentConfig)
    intersection: IntersectionConfig = field(default_factory=IntersectionConfig)
    split: dict = field(default_factory=dict)
    llm: dict = field(default_factory=dict)
    candidate_table: str | None = None

    @classmethod
    def from_json(cls, payload: dict) -> "RunConfig":
        unknown = set(payload) - set(_RUN_SECTIONS)
        if unknown:
            raise ConfigError(
                f"unknown config sections: {sorted(unknown)} "
                f"(known: {list(_RUN_SECTIONS)})"
            )
        train_payload = dict(payload.get("train", {}))
        distill = payload.get("distill", {})
        unknown_distill = set(distill) - {"threshold", "restrict_to_candidates",
                                          "fine_tune"}
        if unknown_distill:
            raise ConfigError(f"unknown distill keys: {sorted(unknown_distill)}")
        if "threshold" in distill:
            train_payload.setdefault("phi", distill["threshold"])
        for key in ("restrict_to_candidates", "fine_tune"):
            if key in distill:
                train_payload.setdefault(key, distill[key])
        try:
            config = cls(
                train=TrainConfig.from_json(train_payload),
                model=dict(payload.get("model", {})),
                feature=dict(payload.get("feature", {})),
                segment=SegmentConfig(**payload.get("segment", {})),
                intersection=IntersectionConfig(**payload.get("intersection", {})),
                split=dict(payload.get("split", {})),
                llm=dict(payload.get("llm", {})),
                candidate_table=payload.get("candidate_table"),
            )
        except TypeError as exc:
            raise ConfigError(f"bad config field: {exc}") from exc
        _check_keys(config.model, ModelConfig, "model")
        _check_keys(config.feature, FeatureConfig, "feature")
        _check_keys(
            config.split,
            None,
            "split",
            allowed={"strong_fraction", "degrade_to", "seed"},
        )
        _check_keys(config.llm, None, "llm", allowed={"endpoint", "model"})
        return config

    def to_json(self) -> dict:
        return {
            "train": self.train.to_json(),
            "model": self.model,
            "feature": self.feature,
            "segment": {"segment_length": self.segment.segment_length},
            "intersection": {
                "rho_dtc": self.intersection.rho_dtc,
                "rho_gtc": self.intersection.rho_gtc,
            },
            "split": self.split,
            "llm": self.llm,
            "candidate_table": self.candidate_table,
        }

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"no config file at {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_json(payload)


def _check_keys(payload: dict, config_cls, section: str, allowed=None) -> None:
    if allowed is None:
        allowed = set(config_cls.__dataclass_fields__)
    unknown = set(payload) - set(allowed)
    if unknown:
        raise ConfigError(
            f"unknown keys in config section {section!r}: {sorted(unknown)}"
        )


def _apply_sets(payload: dict, assignments: list[str]) -> dict:
    """Apply `--set dotted.path=value` overrides to a raw config dict."""
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set needs section.key=value, got {item!r}")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        if len(keys) < 2:
            raise ConfigError(f"--set path must be section.key, got {path!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = payload
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {path!r} crosses a scalar")
        node[keys[-1]] = value
    return payload


def _load_run_config(args) -> RunConfig:
    payload = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            payload = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"no config file at {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from None
        if not isinstance(payload, dict):
            raise ConfigError(f"config {config_path} must hold a JSON object")
    payload = _apply_sets(payload, getattr(args, "set", None) or [])
    return RunConfig.from_json(payload)


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _prepare_out_dir(path: str | Path, overwrite: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise ConfigError(f"output directory {out} is not empty; pass --overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out: Path, config: RunConfig, invocation: dict) -> None:
    (out / "config.json").write_text(
        json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (out / "invocation.json").write_text(
        json.dumps(invocation, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _print_corpus_summary(clips) -> None:
    scenes = Counter(c.scene for c in clips)
    events: Counter = Counter()
    for clip in clips:
        if clip.events:
            events.update(ev.label for ev in clip.events)
    print(f"clips: {len(clips)}")
    for scene, count in sorted(scenes.items()):
        print(f"  scene {scene}: {count} clips")
    for label, count in sorted(events.items()):
        print(f"  event {label}: {count} intervals")


def _resolve_candidate_table(args, config: RunConfig, corpus_dir: Path | None,
                             clips=None) -> CandidateTable:
    table_path = getattr(args, "table", None) or config.candidate_table
    if table_path:
        return CandidateTable.from_csv(table_path)
    if corpus_dir is not None:
        shipped = corpus_dir / "candidates.csv"
        if shipped.is_file():
            return CandidateTable.from_csv(shipped)
    if clips is not None and any(c.supervision == STRONG for c in clips):
        mapping: dict[str, set[str]] = {}
        for clip in clips:
            if clip.supervision == STRONG:
                mapping.setdefault(clip.scene, set()).update(
                    ev.label for ev in clip.events
                )
        print("note: no candidate table given; using scene/event co-occurrence")
        return CandidateTable({s: frozenset(e) for s, e in mapping.items()},
                              provenance="cooccurrence")
    raise ConfigError(
        "semi-partial needs a candidate table: pass --table, set "
        "candidate_table in the config, or ship candidates.csv in the corpus"
    )


def _split_for_mode(corpus: store.Corpus, mode: str, fraction: float,
                    seed: int, table: CandidateTable | None):
    degrade_to = WEAK if mode == "semi-weak" else PARTIAL
    spec = SplitSpec(strong_fraction=fraction, degrade_to=degrade_to, seed=seed)
    strong_subset, degraded = split_semi(
        corpus.clips, spec, Vocabulary(corpus.events), table
    )
    by_id = {c.id: c for c in strong_subset}
    by_id.update({c.id: c for c in degraded})
    relabeled = [by_id[c.id] for c in corpus.clips]
    print(
        f"split: {len(strong_subset)} strong / {len(degraded)} {degrade_to} "
        f"(fraction {fraction:.2f}, seed {seed})"
    )
    return corpus.with_clips(relabeled)


def _training_corpus(args, config: RunConfig, corpus_dir: Path) -> store.Corpus:
    """Load the corpus and shape its supervision for the requested mode."""
    corpus = store.load_corpus(corpus_dir)
    mode = config.train.mode
    kinds = {c.supervision for c in corpus.clips}

    if mode == "weak-mtl" and kinds == {STRONG}:
        vocab = Vocabulary(corpus.events)
        corpus = corpus.with_clips(
            [strip_to_weak(c, vocab) for c in corpus.clips]
        )
        print("collapsed strong labels to weak clip-level labels")
        return corpus

    if mode in ("semi-weak", "semi-partial") and kinds == {STRONG}:
        fraction = args.strong_fraction
        if fraction is None:
            fraction = config.split.get("strong_fraction")
        if fraction is None:
            raise ConfigError(
                f"mode {mode} on an all-strong corpus needs --strong-fraction"
            )
        seed = config.split.get("seed")
        if seed is None:
            seed = config.train.seed
        table = None
        if mode == "semi-partial":
            table = _resolve_candidate_table(args, config, corpus_dir, corpus.clips)
            table.validate(corpus.events, corpus.scenes)
        return _split_for_mode(corpus, mode, float(fraction), int(seed), table)

    return corpus


def _model_config(config: RunConfig, corpus: store.Corpus) -> ModelConfig:
    base = {
        "frames": corpus.feature_config.frames,
        "mel_bins": corpus.feature_config.mel_bins,
        "events": len(corpus.events),
        "scenes": len(corpus.scenes),
        "seed": config.train.seed,
    }
    base.update(config.model)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    config = _load_run_config(args)
    out = _prepare_out_dir(args.out, args.overwrite)
    annotations = Path(args.annotations)
    if not annotations.is_dir():
        raise DataError(f"annotation directory {annotations} does not exist")
    files = sorted(
        p for p in annotations.iterdir() if p.suffix in (".ann", ".txt", ".csv")
    )
    if not files:
        raise DataError(f"no annotations found in {annotations}")

    meta = _read_meta(Path(args.meta))
    feature_config = FeatureConfig(**config.feature)
    recordings = []
    for path in files:
        rec_id = path.stem
        if rec_id not in meta:
            raise DataError(f"annotation {path.name} has no row in {args.meta}")
        scene, duration, audio = meta[rec_id]
        if audio is None:
            raise DataError(
                f"recording {rec_id!r} has no audio path in {args.meta}; "
                "features cannot be extracted"
            )
        events = parse_annotation(path.read_text(encoding="utf-8"))
        if duration is None:
            duration = max((ev.offset for ev in events), default=0.0)
            duration = max(duration, feature_config.clip_length)
        recordings.append(
            Recording(id=rec_id, scene=scene, duration=duration,
                      events=tuple(events), audio_source=audio)
        )
    clips = []
    for rec in recordings:
        clips.extend(clipify(rec, feature_config.clip_length))
    events_vocab = sorted({ev.label for rec in recordings for ev in rec.events})
    scenes_vocab = sorted({rec.scene for rec in recordings})
    store.write_corpus(
        out, clips, {r.id: r for r in recordings}, events_vocab, scenes_vocab,
        feature_config, overwrite=True,
    )
    _snapshot(out, config, {"command": "ingest", "annotations": str(annotations),
                            "meta": str(args.meta)})
    _print_corpus_summary(clips)
    return 0


def _read_meta(path: Path):
    """Rows: recording id (or wav path), scene, optional duration, optional wav."""
    if not path.is_file():
        raise DataError(f"no meta file at {path}")
    meta = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t") if "\t" in line else line.split()
        if len(fields) < 2:
            raise AnnotationError(f"{path}:{lineno}: need at least id and scene")
        first, scene = fields[0], fields[1]
        audio = None
        if first.endswith(".wav"):
            audio = str((path.parent / first).resolve())
            rec_id = Path(first).stem
        else:
            rec_id = first
        duration = None
        if len(fields) > 2:
            try:
                duration = float(fields[2])
            except ValueError:
                raise AnnotationError(
                    f"{path}:{lineno}: duration {fields[2]!r} is not a number"
                ) from None
        if len(fields) > 3:
            audio = str((path.parent / fields[3]).resolve())
        meta[rec_id] = (scene, duration, audio)
    return meta


def cmd_synth(args) -> int:
    out = Path(args.out)
    if (out / store.MANIFEST_NAME).exists() and not args.overwrite:
        raise ConfigError(f"{out} already holds a corpus; pass --overwrite")
    if args.config:
        config = SynthConfig.load(args.config)
        if args.clips_per_scene is not None:
            config = SynthConfig.from_json(
                {**config.to_json(), "clips_per_scene": args.clips_per_scene}
            )
    else:
        config = default_config(args.clips_per_scene or 50)
    store.build_synth_corpus(out, config, seed=args.seed, overwrite=True)
    config.save(out / "synth_config.json")
    table = CandidateTable(config_candidate_table(config), provenance="file")
    table.to_csv(out / "candidates.csv")
    clips = read_manifest(out / store.MANIFEST_NAME,
                          clip_length=config.clip_length)
    _print_corpus_summary(clips)
    print(f"wrote corpus to {out} (seed {args.seed})")
    return 0


def cmd_labels(args) -> int:
    if args.label_command == "prompt":
        events, scenes = _vocab_for_labels(args)
        if args.scene not in scenes:
            raise ConfigError(f"scene {args.scene!r} not in {scenes}")
        print(render_prompt(args.scene, events))
        return 0

    corpus_dir = Path(args.corpus)
    manifest_path = corpus_dir / store.MANIFEST_NAME
    if not manifest_path.is_file():
        raise DataError(f"no corpus manifest at {manifest_path}")
    events, scenes = load_vocab(corpus_dir / store.VOCAB_NAME)
    vocab = Vocabulary(events)
    clips = read_manifest(manifest_path, clip_length=_clip_length(corpus_dir))

    if args.label_command == "to-weak":
        bad = [c.id for c in clips if c.supervision == PARTIAL]
        if bad:
            raise DataError(
                f"cannot weaken partial clips (no event info): {bad[:5]}..."
                if len(bad) > 5 else
                f"cannot weaken partial clips (no event info): {bad}"
            )
        rewritten = [
            strip_to_weak(c, vocab) if c.supervision == STRONG else c
            for c in clips
        ]
        write_manifest(rewritten, manifest_path)
        print(f"rewrote {manifest_path}: {len(rewritten)} clips now weak")
        return 0

    # to-partial
    config = _load_run_config(args)
    if args.llm:
        table = _llm_table(args, config, scenes, events, corpus_dir)
    else:
        table = _resolve_candidate_table(args, config, corpus_dir, clips)
    table.validate(events, scenes)
    table.to_csv(corpus_dir / "candidates.csv")
    from .corpus import assign_partial

    rewritten = [assign_partial(c, table) for c in clips]
    write_manifest(rewritten, manifest_path)
    print(
        f"rewrote {manifest_path}: {len(rewritten)} clips now partial "
        f"(table provenance: {table.provenance})"
    )
    return 0


def _clip_length(corpus_dir: Path) -> float:
    config_path = corpus_dir / store.FEATURE_CONFIG_NAME
    if config_path.is_file():
        payload = json.loads(config_path.read_text(encoding="utf-8"))
        return float(payload.get("clip_length", 10.0))
    return 10.0


def _vocab_for_labels(args):
    if getattr(args, "corpus", None):
        return load_vocab(Path(args.corpus) / store.VOCAB_NAME)
    if getattr(args, "vocab", None):
        return load_vocab(args.vocab)
    return default_vocab()


def _llm_table(args, config: RunConfig, scenes, events, corpus_dir: Path):
    key = os.environ.get(LLM_KEY_ENV)
    if not key:
        raise ConfigError(
            f"--llm needs credentials: set the {LLM_KEY_ENV} environment variable"
        )
    endpoint = args.endpoint or config.llm.get("endpoint")
    model_name = args.model_name or config.llm.get("model")
    if not endpoint or not model_name:
        raise ConfigError(
            "--llm needs an endpoint and model name (flags --endpoint/"
            "--model-name or config section llm)"
        )
    client = HttpLlmClient(endpoint, model_name, api_key=key)
    return build_candidate_table(
        scenes, client, events, archive_dir=corpus_dir / "llm_archive"
    )


def cmd_train(args) -> int:
    config = _load_run_config(args)
    config = _fold_train_flags(args, config)
    out = _prepare_out_dir(args.out, args.overwrite)
    corpus = _training_corpus(args, config, Path(args.corpus))
    model_config = _model_config(config, corpus)

    result = train(corpus, config.train, model_config)
    result.save(out / "model.pt")
    result.log.save(out / "runlog.json")
    write_manifest(corpus.clips, out / "train_manifest.jsonl")
    _snapshot(out, config, {
        "command": "train",
        "corpus": str(args.corpus),
        "strong_fraction": args.strong_fraction,
        "model_config": model_config.to_json(),
    })
    if result.log.records:
        last = result.log.records[-1]
        print(
            f"trained {config.train.mode} for {config.train.epochs} epochs: "
            f"final total loss {last['total_loss']:.6f}"
        )
    print(f"run directory: {out}")
    return 0


def _fold_train_flags(args, config: RunConfig) -> RunConfig:
    train_cfg = config.train
    if getattr(args, "mode", None):
        train_cfg = replace(train_cfg, mode=CLI_MODES[args.mode])
    if getattr(args, "seed", None) is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    if getattr(args, "phi", None) is not None:
        train_cfg = replace(train_cfg, phi=args.phi)
    if getattr(args, "threshold", None) is not None:
        train_cfg = replace(train_cfg, detection_threshold=args.threshold)
    config.train = train_cfg
    return config


def cmd_distill(args) -> int:
    config = _load_run_config(args)
    config = _fold_train_flags(args, config)
    if config.train.mode not in ("semi-partial",):
        config.train = replace(config.train, mode="semi-partial")
    out = _prepare_out_dir(args.out, args.overwrite)
    corpus = _training_corpus(args, config, Path(args.corpus))
    model_config = _model_config(config, corpus)

    result = self_distill(corpus, config.train, model_config)
    result.stage3.save(out / "model.pt")
    result.stage1.save(out / "model_stage1.pt")
    result.stage1.log.save(out / "runlog_stage1.json")
    result.stage3.log.save(out / "runlog_stage3.json")
    write_manifest(result.distilled_clips, out / "distilled.jsonl")
    _snapshot(out, config, {
        "command": "distill",
        "corpus": str(args.corpus),
        "strong_fraction": args.strong_fraction,
        "phi": config.train.phi,
        "model_config": model_config.to_json(),
    })
    print(
        f"distilled {len(result.distilled_clips)} clips at phi={config.train.phi}; "
        f"run directory: {out}"
    )
    return 0


def cmd_eval(args) -> int:
    config = _load_run_config(args)
    report_dir = _prepare_out_dir(args.report, args.overwrite)

    if args.predictions:
        report = _eval_manifests(args, config)
        predictions = None
    else:
        if not args.model or not args.corpus:
            raise ConfigError("eval needs either --predictions or --model with --corpus")
        result = load_result(args.model)
        corpus = store.load_corpus(args.corpus)
        threshold = (
            args.threshold
            if args.threshold is not None
            else config.train.detection_threshold
        )
        report, predictions = evaluate(
            result, corpus, threshold,
            segment_config=config.segment,
            intersection_config=config.intersection,
        )

    write_report(report_dir / "report.json", report)
    _snapshot(report_dir, config, {
        "command": "eval",
        "model": args.model,
        "corpus": args.corpus,
        "predictions": args.predictions,
    })
    _print_report(report)

    if args.per_clip:
        if predictions is None:
            raise ConfigError("--per-clip needs --model/--corpus evaluation")
        wanted = set(args.clips.split(",")) if args.clips else None
        _dump_per_clip(report_dir / "per_clip", predictions, corpus, wanted)
    return 0


def _eval_manifests(args, config: RunConfig) -> dict:
    from .metrics import evaluation_report

    if not args.manifest:
        raise ConfigError("--predictions needs --manifest with the references")
    ref_clips = read_manifest(args.manifest, clip_length=args.clip_length)
    pred_clips = read_manifest(args.predictions, clip_length=args.clip_length)
    refs = {c.id: c for c in ref_clips}
    preds = {c.id: c for c in pred_clips}
    if set(refs) != set(preds):
        raise DataError("prediction and reference manifests cover different clips")
    for c in list(refs.values()) + list(preds.values()):
        if c.supervision != STRONG:
            raise DataError(f"clip {c.id!r} is not strong-labeled")
    ids = sorted(refs)
    events = sorted({ev.label for c in ref_clips for ev in c.events}
                    | {ev.label for c in pred_clips for ev in c.events})
    scenes = sorted({c.scene for c in ref_clips} | {c.scene for c in pred_clips})
    return evaluation_report(
        scene_refs=[refs[i].scene for i in ids],
        scene_preds=[preds[i].scene for i in ids],
        event_refs={i: list(refs[i].events) for i in ids},
        event_preds={i: list(preds[i].events) for i in ids},
        scenes=scenes,
        events=events,
        segment_config=config.segment,
        intersection_config=config.intersection,
        clip_length={i: refs[i].length for i in ids},
    )


def _print_report(report: dict) -> None:
    scene = report["scene"]
    seg = report["event_segment"]
    isb = report["event_intersection"]
    print(f"scene micro-F {scene['micro_f'] * 100:.2f}%  "
          f"macro-F {scene['macro_f'] * 100:.2f}%")
    print(f"event segment micro-F {seg['micro_f'] * 100:.2f}%  "
          f"macro-F {seg['macro_f'] * 100:.2f}%")
    print(f"event intersection micro-F {isb['micro_f'] * 100:.2f}%  "
          f"macro-F {isb['macro_f'] * 100:.2f}%")


def _dump_per_clip(out: Path, predictions, corpus: store.Corpus, wanted) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out.mkdir(parents=True, exist_ok=True)
    by_id = {c.id: c for c in corpus.clips}
    hop = corpus.feature_config.hop
    for pred in predictions:
        if wanted is not None and pred.clip_id not in wanted:
            continue
        clip = by_id[pred.clip_id]
        np.save(out / f"{pred.clip_id}_posteriors.npy", pred.posteriors)
        payload = {
            "clip": pred.clip_id,
            "scene_ref": clip.scene,
            "scene_pred": pred.scene,
            "events_ref": [[e.onset, e.offset, e.label] for e in (clip.events or ())],
            "events_pred": [[e.onset, e.offset, e.label] for e in pred.events],
        }
        (out / f"{pred.clip_id}.json").write_text(
            json.dumps(payload, indent=2) + "\n", encoding="utf-8"
        )

        fig, (ax_post, ax_ev) = plt.subplots(
            2, 1, figsize=(10, 6), sharex=True,
            gridspec_kw={"height_ratios": [1, 2]},
        )
        t_max = pred.posteriors.shape[0] * hop
        ax_post.imshow(
            pred.posteriors.T, aspect="auto", origin="lower",
            extent=(0, t_max, -0.5, len(corpus.events) - 0.5),
            vmin=0.0, vmax=1.0, cmap="viridis",
        )
        ax_post.set_ylabel("event posteriors")
        for m, label in enumerate(corpus.events):
            for e in (clip.events or ()):
                if e.label == label:
                    ax_ev.broken_barh([(e.onset, e.offset - e.onset)],
                                      (m + 0.1, 0.35), color="tab:green")
            for e in pred.events:
                if e.label == label:
                    ax_ev.broken_barh([(e.onset, e.offset - e.onset)],
                                      (m - 0.45, 0.35), color="tab:red")
        ax_ev.set_yticks(range(len(corpus.events)))
        ax_ev.set_yticklabels(corpus.events, fontsize=7)
        ax_ev.set_xlabel("time (s)")
        ax_ev.set_title(
            f"{pred.clip_id}: scene {clip.scene} -> {pred.scene} "
            "(green: reference, red: detection)", fontsize=9,
        )
        fig.tight_layout()
        fig.savefig(out / f"{pred.clip_id}.png", dpi=110)
        plt.close(fig)


def cmd_sweep(args) -> int:
    config = _load_run_config(args)
    config = _fold_train_flags(args, config)
    out = _prepare_out_dir(args.out, args.overwrite)
    mode = CLI_MODES[args.mode] if args.mode else "semi-partial"
    if mode not in ("semi-weak", "semi-partial"):
        raise ConfigError("sweep varies the strong fraction; mode must be semi-*")
    config.train = replace(config.train, mode=mode)
    try:
        fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
    except ValueError:
        raise ConfigError(f"bad --fractions list {args.fractions!r}") from None
    if not fractions:
        raise ConfigError("--fractions is empty")

    base_corpus = store.load_corpus(args.corpus)
    if {c.supervision for c in base_corpus.clips} != {STRONG}:
        raise DataError("sweep needs an all-strong corpus to split per cell")
    eval_corpus = (
        store.load_corpus(args.eval_corpus) if args.eval_corpus else base_corpus
    )
    table = None
    if mode == "semi-partial":
        table = _resolve_candidate_table(args, config, Path(args.corpus),
                                         base_corpus.clips)
        table.validate(base_corpus.events, base_corpus.scenes)

    rows = []
    base_seed = config.train.seed
    for fraction in fractions:
        for rep in range(args.repeats):
            seed = base_seed + rep
            cell_cfg = replace(config.train, seed=seed)
            cell_corpus = _split_for_mode(base_corpus, mode, fraction, seed, table)
            model_config = _model_config(
                RunConfig(train=cell_cfg, model=config.model), cell_corpus
            )
            result = train(cell_corpus, cell_cfg, model_config)
            report, _ = evaluate(
                result, eval_corpus, cell_cfg.detection_threshold,
                config.segment, config.intersection,
            )
            cell_dir = out / "cells" / f"f{fraction:g}_r{rep}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            result.save(cell_dir / "model.pt")
            result.log.final_metrics = {
                "scene_micro_f": report["scene"]["micro_f"],
                "segment_micro_f": report["event_segment"]["micro_f"],
            }
            result.log.save(cell_dir / "runlog.json")
            write_report(cell_dir / "report.json", report)
            rows.append({
                "fraction": fraction,
                "seed": seed,
                "scene_micro_f": report["scene"]["micro_f"],
                "scene_macro_f": report["scene"]["macro_f"],
                "segment_micro_f": report["event_segment"]["micro_f"],
                "segment_macro_f": report["event_segment"]["macro_f"],
                "intersection_micro_f": report["event_intersection"]["micro_f"],
                "intersection_macro_f": report["event_intersection"]["macro_f"],
            })
            print(
                f"fraction {fraction:g} rep {rep}: scene "
                f"{report['scene']['micro_f'] * 100:.2f}%, segment "
                f"{report['event_segment']['micro_f'] * 100:.2f}%"
            )

    _write_sweep_outputs(out, rows, fractions)
    _snapshot(out, config, {
        "command": "sweep",
        "corpus": str(args.corpus),
        "fractions": fractions,
        "repeats": args.repeats,
    })
    print(f"sweep outputs in {out}")
    return 0


_SWEEP_METRICS = (
    "scene_micro_f", "scene_macro_f", "segment_micro_f", "segment_macro_f",
    "intersection_micro_f", "intersection_macro_f",
)


def _write_sweep_outputs(out: Path, rows: list[dict], fractions: list[float]) -> None:
    header = ["fraction", "seed", *_SWEEP_METRICS]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row[h]) for h in header))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    summary_lines = ["fraction," + ",".join(_SWEEP_METRICS)]
    summary = {}
    for fraction in fractions:
        cells = [r for r in rows if r["fraction"] == fraction]
        formatted = []
        for metric in _SWEEP_METRICS:
            values = [c[metric] for c in cells]
            formatted.append(format_aggregate(values))
            summary.setdefault(metric, []).append(aggregate_runs(values))
        summary_lines.append(f"{fraction:g}," + ",".join(
            f'"{v}"' for v in formatted
        ))
    (out / "sweep_summary.csv").write_text(
        "\n".join(summary_lines) + "\n", encoding="utf-8"
    )

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for metric in ("scene_micro_f", "segment_micro_f", "intersection_micro_f"):
        means = [m * 100 for m, _ in summary[metric]]
        stds = [0.0 if s is None else s * 100 for _, s in summary[metric]]
        ax.errorbar(fractions, means, yerr=stds, marker="o", capsize=3,
                    label=metric.replace("_", " "))
    ax.set_xlabel("strong-label fraction")
    ax.set_ylabel("F-score (%)")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "sweep.png", dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser) -> None:
    parser.add_argument("--config", help="run config JSON file")
    parser.add_argument(
        "--set", action="append", metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )


def build_parser() -> CliParser:
    parser = CliParser(
        prog="partialsed",
        description="Joint scene classification and event detection with "
                    "strong, weak and partial labels.",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("ingest", help="build a corpus from annotation files")
    p.add_argument("--annotations", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="synthetic corpus config JSON")
    p.add_argument("--clips-per-scene", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("labels", help="label transformations")
    lsub = p.add_subparsers(dest="label_command", required=True,
                            parser_class=CliParser)

    lp = lsub.add_parser("to-weak", help="collapse strong labels to weak")
    lp.add_argument("--corpus", required=True)
    _add_config_flags(lp)
    lp.set_defaults(func=cmd_labels)

    lp = lsub.add_parser("to-partial", help="replace labels by candidate sets")
    lp.add_argument("--corpus", required=True)
    lp.add_argument("--table", help="candidate table CSV")
    lp.add_argument("--llm", action="store_true",
                    help="query the configured language model endpoint")
    lp.add_argument("--endpoint")
    lp.add_argument("--model-name")
    _add_config_flags(lp)
    lp.set_defaults(func=cmd_labels)

    lp = lsub.add_parser("prompt", help="print the candidate-generation prompt")
    lp.add_argument("--scene", required=True)
    lp.add_argument("--corpus", help="take the vocabulary from this corpus")
    lp.add_argument("--vocab", help="take the vocabulary from this JSON file")
    lp.set_defaults(func=cmd_labels)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=sorted(CLI_MODES))
    p.add_argument("--strong-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--table", help="candidate table CSV (semi-partial)")
    p.add_argument("--overwrite", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="three-stage self-distillation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--phi", type=float)
    p.add_argument("--strong-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--table", help="candidate table CSV")
    p.add_argument("--overwrite", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="score a model or a prediction manifest")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--manifest", help="reference manifest (with --predictions)")
    p.add_argument("--predictions", help="prediction manifest instead of a model")
    p.add_argument("--clip-length", type=float, default=10.0,
                   help="clip length in seconds for manifest-only scoring")
    p.add_argument("--threshold", type=float)
    p.add_argument("--report", required=True)
    p.add_argument("--per-clip", action="store_true",
                   help="dump per-clip posteriors, decoded events and plots")
    p.add_argument("--clips", help="comma-separated clip ids for --per-clip")
    p.add_argument("--overwrite", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train/evaluate across strong fractions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--eval-corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--fractions", required=True, help="comma list, e.g. 0,0.3,1.0")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--mode", choices=("semi-weak", "semi-partial"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--table", help="candidate table CSV (semi-partial)")
    p.add_argument("--overwrite", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, AnnotationError, IntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PartialSedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception:
        traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
