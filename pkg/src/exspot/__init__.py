"""Macro- and micro-expression interval spotting on snippet features."""

from .autodiff import Tape, Tensor, backward
from .config import RunConfig, build_config
from .labels import GroundTruth, TimestampLabels, encode_targets, foreground_ratio
from .losses import LossConfig, dice_loss, focal_loss, total_loss
from .network import (
    SpotterConfig,
    SpotterParams,
    count_params,
    forward,
    init_params,
)
from .optim import Adam
from .proposals import DecodeConfig, Proposal, decode_video
from .scoring import EvalReport, aggregate, interval_iou, match, score
from .snippets import (
    FeatureSequence,
    SnippetPlan,
    concat_streams,
    pad_to_fixed,
    plan_snippets,
    pool_snippets,
    timestamp_to_frames,
)
from .synthetic import SynthSpec, generate, linear_probe_accuracy, split_loso

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "DecodeConfig",
    "EvalReport",
    "FeatureSequence",
    "GroundTruth",
    "LossConfig",
    "Proposal",
    "RunConfig",
    "SnippetPlan",
    "SpotterConfig",
    "SpotterParams",
    "SynthSpec",
    "Tape",
    "Tensor",
    "TimestampLabels",
    "aggregate",
    "backward",
    "build_config",
    "concat_streams",
    "count_params",
    "decode_video",
    "dice_loss",
    "encode_targets",
    "focal_loss",
    "foreground_ratio",
    "forward",
    "generate",
    "init_params",
    "interval_iou",
    "linear_probe_accuracy",
    "match",
    "pad_to_fixed",
    "plan_snippets",
    "pool_snippets",
    "score",
    "split_loso",
    "timestamp_to_frames",
    "total_loss",
]
