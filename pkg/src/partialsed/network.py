"""Shared-trunk multitask model: scene head plus two-branch event head.

The trunk stacks three 3x3 conv blocks that pool frequency only
(64 -> 8 -> 4 -> 2), keeping every time frame. The scene head pools time
down and classifies the clip; the event head runs a small transformer
encoder over the frame sequence and emits per-frame event logits. Clip
event probabilities come from max pooling those logits over time
(multiple-instance reading), with the alternative per-class dense stack
available behind ``clip_branch="table"``.

With the default geometry (500x64 input, 25 events, 4 scenes) the model
has about 1.33M trainable parameters.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ContractError, IntegrityError

MODEL_FORMAT_VERSION = 1

ENCODER_KINDS = ("transformer", "identity")
CLIP_BRANCHES = ("max_pool", "table")


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 500
    mel_bins: int = 64
    events: int = 25
    scenes: int = 4
    trunk_channels: int = 128
    time_kernel: int = 3
    scene_channels: int = 256
    scene_pool: int = 25
    scene_hidden: int = 32
    d_model: int = 80
    attention_heads: int = 4
    ff_width: int = 512
    encoder_layers: int = 1
    dropout: float = 0.1
    event_hidden: int = 48
    encoder: str = "transformer"
    clip_branch: str = "max_pool"
    table_units: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.mel_bins % 32 != 0:
            raise ConfigError(
                f"trunk frequency pooling (1x8, 1x2, 1x2) needs mel_bins "
                f"divisible by 32, got {self.mel_bins}"
            )
        if self.frames % self.scene_pool != 0:
            raise ConfigError(
                f"scene head time pooling ({self.scene_pool}x1) needs frames "
                f"divisible by {self.scene_pool}, got {self.frames}"
            )
        if self.time_kernel not in (1, 3):
            raise ConfigError(f"time_kernel must be 1 or 3, got {self.time_kernel}")
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"encoder must be one of {ENCODER_KINDS}")
        if self.clip_branch not in CLIP_BRANCHES:
            raise ConfigError(f"clip_branch must be one of {CLIP_BRANCHES}")
        if self.d_model % self.attention_heads != 0:
            raise ConfigError(
                f"encoder width {self.d_model} not divisible by "
                f"{self.attention_heads} attention heads"
            )

    @property
    def freq_out(self) -> int:
        return self.mel_bins // 32

    @property
    def step_features(self) -> int:
        return self.trunk_channels * self.freq_out

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


@dataclass
class ModelOutputs:
    scene_logits: torch.Tensor
    frame_logits: torch.Tensor
    clip_probs: torch.Tensor


def _conv_block(cin: int, cout: int, time_kernel: int, pool: tuple[int, int]) -> nn.Sequential:
    kernel = (time_kernel, 3)
    padding = (time_kernel // 2, 1)
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, padding=padding),
        nn.BatchNorm2d(cout),
        nn.LeakyReLU(0.01),
        nn.MaxPool2d(pool),
    )


class PositionalEncoding(nn.Module):
    def __init__(self, d_model: int, max_len: int):
        super().__init__()
        pos = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
        div = torch.exp(
            torch.arange(0, d_model, 2, dtype=torch.float64)
            * (-math.log(10000.0) / d_model)
        )
        pe = torch.zeros(max_len, d_model, dtype=torch.float64)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        self.register_buffer("pe", pe.to(torch.float32))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.pe[: x.shape[1]].unsqueeze(0)


class MultitaskNetwork(nn.Module):
    """See module docstring. Build via :func:`build` for seeded init."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.trunk_channels
        self.trunk = nn.Sequential(
            _conv_block(1, c, config.time_kernel, (1, 8)),
            _conv_block(c, c, config.time_kernel, (1, 2)),
            _conv_block(c, c, config.time_kernel, (1, 2)),
        )

        sc = config.scene_channels
        self.scene_conv1 = nn.Sequential(
            nn.Conv2d(c, sc, (config.time_kernel, 3), padding=(config.time_kernel // 2, 1)),
            nn.BatchNorm2d(sc),
            nn.LeakyReLU(0.01),
            nn.MaxPool2d((config.scene_pool, 1)),
        )
        self.scene_conv2 = nn.Sequential(
            nn.Conv2d(sc, sc, (config.time_kernel, 3), padding=(config.time_kernel // 2, 1)),
            nn.BatchNorm2d(sc),
            nn.LeakyReLU(0.01),
        )
        self.scene_fc = nn.Sequential(
            nn.Linear(sc, config.scene_hidden),
            nn.LeakyReLU(0.01),
            nn.Linear(config.scene_hidden, config.scenes),
        )

        self.event_proj = nn.Linear(config.step_features, config.d_model)
        if config.encoder == "transformer":
            self.positional = PositionalEncoding(config.d_model, config.frames)
            layer = nn.TransformerEncoderLayer(
                d_model=config.d_model,
                nhead=config.attention_heads,
                dim_feedforward=config.ff_width,
                dropout=config.dropout,
                batch_first=True,
            )
            self.encoder = nn.TransformerEncoder(layer, config.encoder_layers)
        else:
            self.positional = None
            self.encoder = nn.Identity()
        self.event_fc = nn.Sequential(
            nn.Linear(config.d_model, config.event_hidden),
            nn.LeakyReLU(0.01),
            nn.Linear(config.event_hidden, config.events),
        )
        if config.clip_branch == "table":
            self.clip_table = nn.Sequential(
                nn.Linear(config.frames, config.table_units),
                nn.LeakyReLU(0.01),
            )

    def trunk_features(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, D) -> (B, C, T, D/32)."""
        return self.trunk(x.unsqueeze(1))

    def scene_head(self, trunk: torch.Tensor) -> torch.Tensor:
        h = self.scene_conv2(self.scene_conv1(trunk))
        h = h.amax(dim=(2, 3))
        return self.scene_fc(h)

    def event_frame_logits(self, trunk: torch.Tensor) -> torch.Tensor:
        b, c, t, f = trunk.shape
        steps = trunk.permute(0, 2, 1, 3).reshape(b, t, c * f)
        h = self.event_proj(steps)
        if self.positional is not None:
            h = self.positional(h)
        h = self.encoder(h)
        return self.event_fc(h)

    def clip_pool(self, frame_logits: torch.Tensor) -> torch.Tensor:
        if self.config.clip_branch == "table":
            h = self.clip_table(frame_logits.transpose(1, 2))
            return torch.sigmoid(h.amax(dim=2))
        return torch.sigmoid(frame_logits.amax(dim=1))

    def forward(self, x) -> ModelOutputs:
        if isinstance(x, np.ndarray):
            x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.dim() != 3 or x.shape[1] != self.config.frames or x.shape[2] != self.config.mel_bins:
            raise ContractError(
                f"expected input (batch, {self.config.frames}, "
                f"{self.config.mel_bins}), got {tuple(x.shape)}"
            )
        trunk = self.trunk_features(x.float())
        scene_logits = self.scene_head(trunk)
        frame_logits = self.event_frame_logits(trunk)
        clip_probs = self.clip_pool(frame_logits)
        if squeeze:
            return ModelOutputs(scene_logits[0], frame_logits[0], clip_probs[0])
        return ModelOutputs(scene_logits, frame_logits, clip_probs)


def build(config: ModelConfig) -> MultitaskNetwork:
    torch.manual_seed(config.seed)
    return MultitaskNetwork(config)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save(
    model: MultitaskNetwork,
    path: str | Path,
    events: Sequence[str],
    scenes: Sequence[str],
    extra: dict | None = None,
) -> None:
    """Single-file container: weights, config + hash, vocabulary."""
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "config": model.config.to_json(),
        "config_hash": model.config.hash(),
        "events": list(events),
        "scenes": list(scenes),
        "state_dict": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load(
    path: str | Path,
    events: Sequence[str] | None = None,
    scenes: Sequence[str] | None = None,
) -> tuple[MultitaskNetwork, dict]:
    """Load a model file; refuses hash mismatches and altered vocabularies.

    Returns (model, payload) where payload keeps the stored vocabulary and
    any extra state (normalizer statistics, training provenance).
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise IntegrityError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(payload, dict) or "config" not in payload:
        raise IntegrityError(f"{path} is not a model file")
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise IntegrityError(
            f"{path}: format version {payload.get('format_version')} "
            f"!= {MODEL_FORMAT_VERSION}"
        )
    config = ModelConfig.from_json(payload["config"])
    if config.hash() != payload.get("config_hash"):
        raise IntegrityError(
            f"{path}: stored config hash {payload.get('config_hash')} does not "
            f"match the embedded config ({config.hash()}); file was altered"
        )
    if events is not None and list(events) != payload["events"]:
        raise IntegrityError(
            f"{path}: event vocabulary differs from the one the model was "
            "trained with; refusing to load"
        )
    if scenes is not None and list(scenes) != payload["scenes"]:
        raise IntegrityError(
            f"{path}: scene vocabulary differs from the one the model was "
            "trained with; refusing to load"
        )
    model = MultitaskNetwork(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
