"""Joint acoustic scene classification and sound event detection under
strong, weak and partial supervision, with self-distillation label
refinement and a matching evaluation protocol.
"""

from .corpus import (
    PARTIAL,
    STRONG,
    WEAK,
    Clip,
    EventInterval,
    Recording,
    SplitSpec,
    clipify,
    parse_annotation,
    read_manifest,
    split_semi,
    strip_to_weak,
    write_manifest,
)
from .errors import (
    AnnotationError,
    ConfigError,
    ContractError,
    DataError,
    IntegrityError,
    LlmError,
    PartialSedError,
)
from .features import FeatureConfig, FeatureNormalizer, logmel
from .labelkit import (
    CandidateTable,
    DistillConfig,
    HttpLlmClient,
    build_candidate_table,
    distill_labels,
    expand_pseudo_strong,
    rasterize,
    render_prompt,
    weak_target,
)
from .losses import LossWeights, batch_event_loss, scene_loss, total_loss
from .metrics import (
    IntersectionConfig,
    SegmentConfig,
    aggregate_runs,
    format_aggregate,
    intersection_scores,
    scene_scores,
    segment_scores,
)
from .network import ModelConfig, MultitaskNetwork, build, count_parameters
from .store import Corpus, build_synth_corpus, load_corpus, write_corpus
from .synth import SynthConfig, default_config
from .trainer import (
    MultitaskSedAsc,
    TrainConfig,
    TrainResult,
    evaluate,
    infer,
    load_result,
    self_distill,
    train,
)
from .vocab import Vocabulary, load_vocab, save_vocab

__version__ = "0.1.0"

__all__ = [
    "AnnotationError",
    "CandidateTable",
    "Clip",
    "ConfigError",
    "ContractError",
    "Corpus",
    "DataError",
    "DistillConfig",
    "EventInterval",
    "FeatureConfig",
    "FeatureNormalizer",
    "HttpLlmClient",
    "IntegrityError",
    "IntersectionConfig",
    "LlmError",
    "LossWeights",
    "ModelConfig",
    "MultitaskNetwork",
    "MultitaskSedAsc",
    "PARTIAL",
    "PartialSedError",
    "Recording",
    "STRONG",
    "SegmentConfig",
    "SplitSpec",
    "SynthConfig",
    "TrainConfig",
    "TrainResult",
    "Vocabulary",
    "WEAK",
    "aggregate_runs",
    "batch_event_loss",
    "build",
    "build_candidate_table",
    "build_synth_corpus",
    "clipify",
    "count_parameters",
    "default_config",
    "distill_labels",
    "evaluate",
    "expand_pseudo_strong",
    "format_aggregate",
    "infer",
    "intersection_scores",
    "load_corpus",
    "load_result",
    "load_vocab",
    "logmel",
    "parse_annotation",
    "rasterize",
    "read_manifest",
    "render_prompt",
    "save_vocab",
    "scene_loss",
    "scene_scores",
    "segment_scores",
    "self_distill",
    "split_semi",
    "strip_to_weak",
    "total_loss",
    "train",
    "weak_target",
    "write_corpus",
    "write_manifest",
]
