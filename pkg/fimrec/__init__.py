"""fimrec: Frequency-aware multi-view interest modeling for periodic behavior."""

from .config import (
    FpemConfig,
    MmoeConfig,
    MssConfig,
    RunConfig,
    SyntheticConfig,
    config_hash,
    load_config,
)
from .data import generate_synthetic, load_dataset, load_jsonl, split_temporal
from .embeddings import Encoder, embed_sequence, embed_side_info
from .errors import ConfigError, DataError, FimError, NumericError
from .fpem import (
    band_masks_butter,
    band_masks_trunc,
    fpem_forward,
    gate_beta,
    split_bands,
    stop_gradient_slices,
)
from .metrics import auc, gauc
from .model import FimModel
from .mss import (
    multi_view_forward,
    score_hard,
    score_soft,
    target_attention,
    topk_select,
)
from .numerics import (
    AdamState,
    GradTape,
    adam_step,
    grad_check,
    irfft,
    layer_norm,
    rfft,
    stop_gradient,
)
from .prediction import bce_loss, fuse, mean_pool, mmoe_forward, project_h
from .registry import register_filter
from .training import evaluate, train_model

__all__ = [
    "AdamState",
    "ConfigError",
    "DataError",
    "Encoder",
    "FimError",
    "FimModel",
    "FpemConfig",
    "GradTape",
    "MmoeConfig",
    "MssConfig",
    "NumericError",
    "RunConfig",
    "SyntheticConfig",
    "adam_step",
    "auc",
    "band_masks_butter",
    "band_masks_trunc",
    "bce_loss",
    "config_hash",
    "embed_sequence",
    "embed_side_info",
    "evaluate",
    "fpem_forward",
    "fuse",
    "gate_beta",
    "gauc",
    "generate_synthetic",
    "grad_check",
    "irfft",
    "layer_norm",
    "load_config",
    "load_dataset",
    "load_jsonl",
    "mean_pool",
    "mmoe_forward",
    "multi_view_forward",
    "project_h",
    "register_filter",
    "rfft",
    "score_hard",
    "score_soft",
    "split_bands",
    "split_temporal",
    "stop_gradient",
    "stop_gradient_slices",
    "target_attention",
    "topk_select",
    "train_model",
]
