"""Training regimes, the self-distillation pipeline, and inference.

Four regimes: strong-mtl (frame targets), weak-mtl (clip targets plus the
weak vector broadcast as pseudo frame targets), and the two semi regimes
(semi-weak, semi-partial) where each clip contributes either the frame
term or the clip term, never both.

Self-distillation runs in three stages: train semi-partial, freeze and
threshold the frame posteriors of the partially labeled clips at phi,
then re-train from scratch on true plus distilled strong labels.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .corpus import Clip, PARTIAL, STRONG, WEAK
from .errors import ConfigError, ContractError, DataError
from .features import FeatureNormalizer
from .labelkit import (
    DistillConfig,
    distill_labels,
    matrix_to_events,
    partial_to_weak_target,
    rasterize,
    restrict_distilled,
)
from .losses import (
    LossWeights,
    MODE_SEMI,
    MODE_STRONG,
    MODE_WEAK,
    batch_event_loss,
    scene_loss,
    total_loss,
)
from .metrics import IntersectionConfig, SegmentConfig, evaluation_report
from .network import ModelConfig, MultitaskNetwork, build
from .network import load as load_model
from .network import save as save_model
from .store import Corpus, reference_labels

TRAIN_MODES = ("strong-mtl", "weak-mtl", "semi-weak", "semi-partial")

_ALLOWED_KINDS = {
    "strong-mtl": {STRONG},
    "weak-mtl": {WEAK, PARTIAL},
    "semi-weak": {STRONG, WEAK},
    "semi-partial": {STRONG, PARTIAL},
}

_LOSS_MODE = {
    "strong-mtl": MODE_STRONG,
    "weak-mtl": MODE_WEAK,
    "semi-weak": MODE_SEMI,
    "semi-partial": MODE_SEMI,
}

OPTIMIZERS = {
    "radam": torch.optim.RAdam,
    "adam": torch.optim.Adam,
    "sgd": torch.optim.SGD,
}


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "strong-mtl"
    optimizer: str = "radam"
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    weights: LossWeights = LossWeights()
    detection_threshold: float = 0.5
    phi: float = 0.2
    mean_frame_loss: bool = False
    restrict_to_candidates: bool = False
    fine_tune: bool = False

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(
                f"optimizer must be one of {tuple(OPTIMIZERS)}, got {self.optimizer!r}"
            )
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("need epochs >= 0, batch_size >= 1, learning_rate > 0")
        if not 0.0 < self.detection_threshold < 1.0:
            raise ConfigError("detection_threshold must be in (0, 1)")
        DistillConfig(self.phi)

    def to_json(self) -> dict:
        payload = asdict(self)
        payload["weights"] = self.weights.to_json()
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "TrainConfig":
        payload = dict(payload)
        if "weights" in payload and isinstance(payload["weights"], dict):
            payload["weights"] = LossWeights.from_json(payload["weights"])
        return cls(**payload)

    def hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunLog:
    """Per-epoch loss record for one training run."""

    mode: str
    seed: int
    config_hash: str
    stage: str = "train"
    records: list[dict] = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)

    def append(self, epoch: int, scene: float, event: float, total: float,
               seconds: float) -> None:
        self.records.append({
            "epoch": epoch,
            "scene_loss": scene,
            "event_loss": event,
            "total_loss": total,
            "seconds": seconds,
        })

    def losses(self, key: str = "total_loss") -> list[float]:
        return [r[key] for r in self.records]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "stage": self.stage,
            "records": self.records,
            "final_metrics": self.final_metrics,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "RunLog":
        return cls(**payload)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8"
        )


@dataclass
class TrainResult:
    model: MultitaskNetwork
    log: RunLog
    normalizer: FeatureNormalizer | None
    events: list[str]
    scenes: list[str]

    def save(self, path: str | Path) -> None:
        extra = {
            "normalizer": self.normalizer.state() if self.normalizer else None,
            "log": self.log.to_json(),
        }
        save_model(self.model, path, self.events, self.scenes, extra=extra)


def load_result(path: str | Path) -> TrainResult:
    model, payload = load_model(path)
    extra = payload.get("extra", {})
    normalizer = (
        FeatureNormalizer.from_state(extra["normalizer"])
        if extra.get("normalizer")
        else None
    )
    log = (
        RunLog.from_json(extra["log"])
        if extra.get("log")
        else RunLog(mode="unknown", seed=-1, config_hash="")
    )
    return TrainResult(model, log, normalizer, payload["events"], payload["scenes"])


# ---------------------------------------------------------------------------
# Target assembly
# ---------------------------------------------------------------------------


def _check_kinds(corpus: Corpus, mode: str) -> None:
    if not corpus.clips:
        raise DataError("empty corpus")
    kinds = {c.supervision for c in corpus.clips}
    extra = kinds - _ALLOWED_KINDS[mode]
    if extra:
        raise ContractError(
            f"mode {mode} cannot train on supervision kinds {sorted(extra)} "
            f"(allowed: {sorted(_ALLOWED_KINDS[mode])})"
        )


def _assemble_targets(corpus: Corpus):
    """Per-clip tensors: scene one-hots, strong matrices, weak vectors, mask."""
    frames = corpus.feature_config.frames
    hop = corpus.feature_config.hop
    events, scenes = corpus.events, corpus.scenes
    k, m, n = len(corpus.clips), len(events), len(scenes)
    scene_onehot = np.zeros((k, n), dtype=np.float32)
    strong_t = np.zeros((k, frames, m), dtype=np.float32)
    weak_t = np.zeros((k, m), dtype=np.float32)
    mask = np.zeros(k, dtype=bool)
    for i, clip in enumerate(corpus.clips):
        scene_onehot[i, scenes.index(clip.scene)] = 1.0
        if clip.supervision == STRONG:
            strong_t[i] = rasterize(clip, frames, hop, events)
            mask[i] = True
        elif clip.supervision == WEAK:
            weak_t[i] = np.asarray(clip.weak, dtype=np.float32)
        else:
            weak_t[i] = partial_to_weak_target(clip.partial, events)
    return (
        torch.from_numpy(scene_onehot),
        torch.from_numpy(strong_t),
        torch.from_numpy(weak_t),
        torch.from_numpy(mask),
    )


def _normalized_features(corpus: Corpus):
    if corpus.feature_config.normalization == "per-corpus-zscore":
        normalizer = FeatureNormalizer().fit(corpus.features)
        return torch.from_numpy(normalizer.transform(corpus.features)), normalizer
    return torch.from_numpy(np.ascontiguousarray(corpus.features, np.float32)), None


def default_model_config(corpus: Corpus, seed: int = 0) -> ModelConfig:
    return ModelConfig(
        frames=corpus.feature_config.frames,
        mel_bins=corpus.feature_config.mel_bins,
        events=len(corpus.events),
        scenes=len(corpus.scenes),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(
    corpus: Corpus,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    initial_state: dict | None = None,
) -> TrainResult:
    """Minimize the multitask objective; deterministic per seed."""
    _check_kinds(corpus, config.mode)
    if model_config is None:
        model_config = default_model_config(corpus, seed=config.seed)
    model = build(model_config)
    if initial_state is not None:
        model.load_state_dict(initial_state)
    log = RunLog(mode=config.mode, seed=config.seed, config_hash=config.hash())

    x, normalizer = _normalized_features(corpus)
    result = TrainResult(model, log, normalizer, list(corpus.events), list(corpus.scenes))
    if config.epochs == 0:
        model.eval()
        return result

    scene_onehot, strong_t, weak_t, mask = _assemble_targets(corpus)
    loss_mode = _LOSS_MODE[config.mode]
    weights = config.weights
    optimizer = OPTIMIZERS[config.optimizer](
        model.parameters(), lr=config.learning_rate
    )
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    k = len(corpus.clips)

    for epoch in range(config.epochs):
        started = time.perf_counter()
        model.train()
        perm = rng.permutation(k)
        scene_sum = event_sum = total_sum = 0.0
        for lo in range(0, k, config.batch_size):
            idx = torch.from_numpy(perm[lo : lo + config.batch_size])
            outputs = model(x[idx])
            try:
                scene_term = scene_loss(outputs.scene_logits, scene_onehot[idx])
                event_term = batch_event_loss(
                    loss_mode,
                    outputs.frame_logits,
                    outputs.clip_probs,
                    strong_t[idx],
                    weak_t[idx],
                    mask[idx],
                    weights,
                    mean=config.mean_frame_loss,
                )
                loss = total_loss(scene_term, event_term, weights) / len(idx)
            except ContractError as exc:
                raise ContractError(
                    f"aborting at epoch {epoch}, clip batch starting {lo}: {exc}"
                ) from exc
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scene_sum += float(scene_term.detach())
            event_sum += float(event_term.detach())
            total_sum += float(loss.detach()) * len(idx)
        log.append(
            epoch=epoch,
            scene=scene_sum / k,
            event=event_sum / k,
            total=total_sum / k,
            seconds=time.perf_counter() - started,
        )
    model.eval()
    return result


def corpus_loss(
    result: TrainResult, corpus: Corpus, config: TrainConfig
) -> dict[str, float]:
    """Loss sums over a whole corpus without updates (model in eval mode)."""
    model = result.model
    model.eval()
    if result.normalizer is not None:
        x = torch.from_numpy(result.normalizer.transform(corpus.features))
    else:
        x = torch.from_numpy(np.ascontiguousarray(corpus.features, np.float32))
    scene_onehot, strong_t, weak_t, mask = _assemble_targets(corpus)
    loss_mode = _LOSS_MODE[config.mode]
    scene_sum = event_sum = 0.0
    with torch.no_grad():
        for lo in range(0, len(corpus.clips), config.batch_size):
            sl = slice(lo, lo + config.batch_size)
            outputs = model(x[sl])
            scene_sum += float(scene_loss(outputs.scene_logits, scene_onehot[sl]))
            event_sum += float(
                batch_event_loss(
                    loss_mode,
                    outputs.frame_logits,
                    outputs.clip_probs,
                    strong_t[sl],
                    weak_t[sl],
                    mask[sl],
                    config.weights,
                    mean=config.mean_frame_loss,
                )
            )
    total = config.weights.alpha * scene_sum + config.weights.beta * event_sum
    return {"scene": scene_sum, "event": event_sum, "total": total}


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


@dataclass
class ClipPrediction:
    clip_id: str
    scene: str
    scene_logits: np.ndarray
    posteriors: np.ndarray
    events: list


def decode_events(
    posteriors: np.ndarray, threshold: float, hop: float, events: Sequence[str]
):
    """Maximal runs of frames with posterior >= threshold, in seconds."""
    active = (np.asarray(posteriors) >= threshold).astype(np.float32)
    return matrix_to_events(active, hop, events)


def infer(
    model: MultitaskNetwork,
    corpus: Corpus,
    threshold: float = 0.5,
    normalizer: FeatureNormalizer | None = None,
    batch_size: int = 64,
) -> list[ClipPrediction]:
    model.eval()
    if normalizer is not None:
        x = torch.from_numpy(normalizer.transform(corpus.features))
    else:
        x = torch.from_numpy(np.ascontiguousarray(corpus.features, np.float32))
    hop = corpus.feature_config.hop
    predictions = []
    with torch.no_grad():
        for lo in range(0, len(corpus.clips), batch_size):
            batch_clips = corpus.clips[lo : lo + batch_size]
            outputs = model(x[lo : lo + len(batch_clips)])
            scene_logits = outputs.scene_logits.numpy()
            posteriors = torch.sigmoid(outputs.frame_logits).numpy()
            for j, clip in enumerate(batch_clips):
                predictions.append(
                    ClipPrediction(
                        clip_id=clip.id,
                        scene=corpus.scenes[int(scene_logits[j].argmax())],
                        scene_logits=scene_logits[j],
                        posteriors=posteriors[j],
                        events=decode_events(posteriors[j], threshold, hop,
                                             corpus.events),
                    )
                )
    return predictions


def evaluate(
    result: TrainResult,
    corpus: Corpus,
    threshold: float = 0.5,
    segment_config=None,
    intersection_config=None,
) -> tuple[dict, list[ClipPrediction]]:
    """Score a model on a strongly labeled corpus."""
    predictions = infer(result.model, corpus, threshold, result.normalizer)
    scene_refs, event_refs, lengths = reference_labels(corpus.clips)
    report = evaluation_report(
        scene_refs=[scene_refs[p.clip_id] for p in predictions],
        scene_preds=[p.scene for p in predictions],
        event_refs=event_refs,
        event_preds={p.clip_id: p.events for p in predictions},
        scenes=corpus.scenes,
        events=corpus.events,
        segment_config=segment_config or SegmentConfig(),
        intersection_config=intersection_config or IntersectionConfig(),
        clip_length=lengths,
    )
    return report, predictions


# ---------------------------------------------------------------------------
# Self-distillation
# ---------------------------------------------------------------------------


@dataclass
class DistillResult:
    stage1: TrainResult
    stage3: TrainResult
    distilled_clips: list[Clip]

    @property
    def model(self) -> MultitaskNetwork:
        return self.stage3.model

    @property
    def logs(self) -> list[RunLog]:
        return [self.stage1.log, self.stage3.log]


def self_distill(
    corpus: Corpus,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
) -> DistillResult:
    """Three stages: semi-partial training, frozen posterior thresholding,
    strong re-training on true plus distilled labels."""
    kinds = {c.supervision for c in corpus.clips}
    if kinds != {STRONG, PARTIAL}:
        raise ContractError(
            f"self-distillation needs a strong+partial corpus, got kinds {sorted(kinds)}"
        )
    stage1 = train(corpus, replace(config, mode="semi-partial"), model_config)
    stage1.log.stage = "stage1"

    model = stage1.model
    model.eval()
    if stage1.normalizer is not None:
        x = torch.from_numpy(stage1.normalizer.transform(corpus.features))
    else:
        x = torch.from_numpy(np.ascontiguousarray(corpus.features, np.float32))
    hop = corpus.feature_config.hop
    dconfig = DistillConfig(config.phi)
    distilled: list[Clip] = []
    relabeled: list[Clip] = []
    with torch.no_grad():
        for i, clip in enumerate(corpus.clips):
            if clip.supervision != PARTIAL:
                relabeled.append(clip)
                continue
            outputs = model(x[i])
            posteriors = torch.sigmoid(outputs.frame_logits).numpy()
            matrix = distill_labels(posteriors, dconfig)
            if config.restrict_to_candidates:
                matrix = restrict_distilled(matrix, clip.partial, corpus.events)
            intervals = matrix_to_events(matrix, hop, corpus.events)
            strong_clip = Clip(
                id=clip.id,
                recording_id=clip.recording_id,
                start=clip.start,
                length=clip.length,
                scene=clip.scene,
                supervision=STRONG,
                events=tuple(intervals),
            )
            distilled.append(strong_clip)
            relabeled.append(strong_clip)

    stage3_corpus = corpus.with_clips(relabeled)
    initial = model.state_dict() if config.fine_tune else None
    stage3 = train(
        stage3_corpus, replace(config, mode="strong-mtl"), model_config,
        initial_state=initial,
    )
    stage3.log.stage = "stage3"
    return DistillResult(stage1=stage1, stage3=stage3, distilled_clips=distilled)


# ---------------------------------------------------------------------------
# Estimator front door
# ---------------------------------------------------------------------------


class MultitaskSedAsc(BaseEstimator):
    """Scikit-learn style wrapper around the training pipeline.

    ``fit`` consumes a :class:`Corpus` (clips plus features) rather than a
    feature matrix, since supervision kind and timing live on the clips.
    """

    def __init__(
        self,
        mode: str = "strong-mtl",
        epochs: int = 100,
        batch_size: int = 32,
        learning_rate: float = 1e-3,
        optimizer: str = "radam",
        seed: int = 0,
        alpha: float = 0.001,
        beta: float = 1.0,
        gamma: float = 1.0,
        zeta: float = 0.01,
        detection_threshold: float = 0.5,
        phi: float = 0.2,
    ):
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.seed = seed
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.zeta = zeta
        self.detection_threshold = detection_threshold
        self.phi = phi

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed,
            weights=LossWeights(self.alpha, self.beta, self.gamma, self.zeta),
            detection_threshold=self.detection_threshold,
            phi=self.phi,
        )

    def fit(self, corpus: Corpus, model_config: ModelConfig | None = None):
        self.result_ = train(corpus, self._train_config(), model_config)
        return self

    def distill(self, corpus: Corpus, model_config: ModelConfig | None = None):
        """Fit via the three-stage self-distillation pipeline."""
        distill_result = self_distill(corpus, self._train_config(), model_config)
        self.result_ = distill_result.stage3
        self.distill_result_ = distill_result
        return self

    def _require_fitted(self) -> TrainResult:
        if not hasattr(self, "result_"):
            raise ContractError("estimator used before fit")
        return self.result_

    def predict(self, corpus: Corpus) -> list[ClipPrediction]:
        result = self._require_fitted()
        return infer(
            result.model, corpus, self.detection_threshold, result.normalizer
        )

    def predict_scenes(self, corpus: Corpus) -> list[str]:
        return [p.scene for p in self.predict(corpus)]

    def score(self, corpus: Corpus) -> float:
        """Scene classification accuracy (micro-F)."""
        predictions = self.predict(corpus)
        correct = sum(
            1 for p, c in zip(predictions, corpus.clips) if p.scene == c.scene
        )
        return correct / len(corpus.clips)
