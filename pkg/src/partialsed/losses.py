"""Training objectives.

The clip objective is alpha * scene_loss + beta * event_loss. The event
term depends on the regime: strong clips get a frame-level BCE, weak and
partial clips get a clip-level BCE (and, in the pure weak regime, the
weak vector broadcast over frames as a pseudo frame target). In the semi
regimes each clip contributes exactly one of the two event terms.

All reductions are sums over frames/classes; pass ``mean=True`` to the
frame BCE to divide by T*M (this rescales the useful weight ranges).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .corpus import STRONG, SUPERVISION_KINDS
from .errors import ConfigError, ContractError

MODE_STRONG = "strong-mtl"
MODE_WEAK = "weak-mtl"
MODE_SEMI = "semi-mtl"
EVENT_LOSS_MODES = (MODE_STRONG, MODE_WEAK, MODE_SEMI)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.001
    beta: float = 1.0
    gamma: float = 1.0
    zeta: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "zeta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta,
                "gamma": self.gamma, "zeta": self.zeta}

    @classmethod
    def from_json(cls, payload: dict) -> "LossWeights":
        return cls(**payload)


def _tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=torch.float32)


def scene_loss(logits, target) -> torch.Tensor:
    """Categorical cross-entropy against a one-hot target (or class index).

    Batched inputs sum over the batch.
    """
    logits = _tensor(logits)
    if isinstance(target, (int, np.integer)):
        index = torch.as_tensor([int(target)])
    else:
        target = _tensor(target)
        if target.shape != logits.shape:
            raise ContractError(
                f"scene target shape {tuple(target.shape)} != logits "
                f"{tuple(logits.shape)}"
            )
        flat = target.reshape(-1, target.shape[-1])
        ok = ((flat == 0) | (flat == 1)).all() and (flat.sum(dim=1) == 1).all()
        if not ok:
            raise ContractError("scene target must be one-hot")
        index = flat.argmax(dim=1)
    shifted = logits.reshape(index.shape[0], -1)
    shifted = shifted - shifted.max(dim=1, keepdim=True).values
    log_probs = shifted - shifted.exp().sum(dim=1, keepdim=True).log()
    return -log_probs[torch.arange(index.shape[0]), index].sum()


def strong_event_loss(frame_logits, strong, mean: bool = False) -> torch.Tensor:
    """Frame-level BCE in logit space, summed over frames and classes."""
    frame_logits = _tensor(frame_logits)
    strong = _tensor(strong)
    if frame_logits.shape != strong.shape:
        raise ContractError(
            f"frame logits {tuple(frame_logits.shape)} != strong matrix "
            f"{tuple(strong.shape)}"
        )
    # max(y,0) - y*z + log(1+exp(-|y|)) is the stable form of BCE-with-logits
    y = frame_logits
    loss = (y.clamp(min=0) - y * strong + torch.log1p(torch.exp(-y.abs()))).sum()
    if mean:
        per_clip = frame_logits.shape[-1] * frame_logits.shape[-2]
        loss = loss / per_clip
    return loss


def weak_event_loss(clip_probs, weak) -> torch.Tensor:
    """Clip-level BCE on probabilities, clamped away from {0, 1}."""
    clip_probs = _tensor(clip_probs)
    weak = _tensor(weak)
    if clip_probs.shape != weak.shape:
        raise ContractError(
            f"clip probs {tuple(clip_probs.shape)} != weak vector "
            f"{tuple(weak.shape)}"
        )
    p = clip_probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return -(weak * p.log() + (1.0 - weak) * (1.0 - p).log()).sum()


def event_loss(
    frame_logits,
    clip_probs,
    target,
    weights: LossWeights,
    supervision: str,
    mode: str,
) -> torch.Tensor:
    """One clip's event term under the given regime.

    ``target`` is a (T, M) strong matrix for strong clips and an M-dim
    weak/candidate vector otherwise.
    """
    if mode not in EVENT_LOSS_MODES:
        raise ConfigError(f"mode must be one of {EVENT_LOSS_MODES}, got {mode!r}")
    if supervision not in SUPERVISION_KINDS:
        raise ContractError(f"unknown supervision kind {supervision!r}")
    target = _tensor(target)
    strong_target = target.dim() == 2

    if mode == MODE_STRONG:
        if supervision != STRONG or not strong_target:
            raise ContractError("strong-mtl needs strong clips with frame matrices")
        return weights.gamma * strong_event_loss(frame_logits, target)

    if mode == MODE_WEAK:
        if strong_target:
            raise ContractError(
                "weak-mtl needs clip-level vectors (collapse strong labels first)"
            )
        pseudo = target.unsqueeze(0).expand(_tensor(frame_logits).shape[0], -1)
        return (
            weights.gamma * strong_event_loss(frame_logits, pseudo)
            + weights.zeta * weak_event_loss(clip_probs, target)
        )

    if supervision == STRONG:
        if not strong_target:
            raise ContractError("semi-mtl strong clip needs a frame matrix")
        return weights.gamma * strong_event_loss(frame_logits, target)
    if strong_target:
        raise ContractError("semi-mtl weak/partial clip needs a clip-level vector")
    return weights.zeta * weak_event_loss(clip_probs, target)


def batch_event_loss(
    mode: str,
    frame_logits: torch.Tensor,
    clip_probs: torch.Tensor,
    strong_targets: torch.Tensor,
    weak_targets: torch.Tensor,
    strong_mask: torch.Tensor,
    weights: LossWeights,
    mean: bool = False,
) -> torch.Tensor:
    """Event term summed over a batch.

    ``strong_targets`` rows are meaningful where ``strong_mask`` is set,
    ``weak_targets`` rows elsewhere (everywhere in weak-mtl). The semi
    regime selects rows by index, so the inactive branch of each clip
    never enters the graph: perturbing it cannot move the loss.
    """
    if mode == MODE_STRONG:
        return weights.gamma * strong_event_loss(frame_logits, strong_targets, mean)
    if mode == MODE_WEAK:
        pseudo = weak_targets.unsqueeze(1).expand_as(frame_logits)
        return (
            weights.gamma * strong_event_loss(frame_logits, pseudo, mean)
            + weights.zeta * weak_event_loss(clip_probs, weak_targets)
        )
    if mode != MODE_SEMI:
        raise ConfigError(f"mode must be one of {EVENT_LOSS_MODES}, got {mode!r}")
    if bool(strong_mask.all()):
        return weights.gamma * strong_event_loss(frame_logits, strong_targets, mean)
    if not bool(strong_mask.any()):
        return weights.zeta * weak_event_loss(clip_probs, weak_targets)
    strong_part = weights.gamma * strong_event_loss(
        frame_logits[strong_mask], strong_targets[strong_mask], mean
    )
    weak_part = weights.zeta * weak_event_loss(
        clip_probs[~strong_mask], weak_targets[~strong_mask]
    )
    return strong_part + weak_part


def total_loss(scene_term, event_term, weights: LossWeights) -> torch.Tensor:
    scene_term = _tensor(scene_term)
    event_term = _tensor(event_term)
    if not (torch.isfinite(scene_term).all() and torch.isfinite(event_term).all()):
        raise ContractError(
            f"non-finite loss (scene={float(scene_term)}, event={float(event_term)})"
        )
    return weights.alpha * scene_term + weights.beta * event_term
