"""Toy-scale transformer to linear-attention RNN conversion toolkit.

Train a softmax-attention teacher, swap its similarity function for a learned
feature map, finetune, and decode with linear time and constant memory. The
tensor core is a small float64 reverse-mode autodiff tape over numpy.
"""

from .attention import (
    AttentionKind,
    AttentionTrace,
    AttentionWeights,
    FeatureMapSpec,
    apply_feature_map,
    linear_attention_parallel,
    project_qkv,
    softmax_attention,
)
from .model import Checkpoint, Model, ModelConfig, lm_forward, seq2seq_forward, swap_attention
from .recurrent import (
    DecodeSession,
    MergedProjection,
    RecurrentState,
    generate,
    generate_seq2seq,
    merge_feature_map,
    precompute_cross_state,
    readout,
    state_footprint,
    state_update,
    stepwise_logits,
)
from .tasks import SyntheticTask, synthetic_text
from .tensor import AdamState, Tape, Tensor, adam_step, backward, elementwise, finite_diff_grad
from .training import MatrixCell, TrainConfig, finetune, loss, pretrain, run_matrix, train_scratch

__all__ = [
    "AdamState", "AttentionKind", "AttentionTrace", "AttentionWeights", "Checkpoint",
    "DecodeSession", "FeatureMapSpec", "MatrixCell", "MergedProjection", "Model",
    "ModelConfig", "RecurrentState", "SyntheticTask", "Tape", "Tensor", "TrainConfig",
    "adam_step", "apply_feature_map", "backward", "elementwise", "finetune",
    "finite_diff_grad", "generate", "generate_seq2seq", "linear_attention_parallel",
    "lm_forward", "loss", "merge_feature_map", "precompute_cross_state", "pretrain",
    "project_qkv", "readout", "run_matrix", "seq2seq_forward", "softmax_attention",
    "state_footprint", "state_update", "stepwise_logits", "swap_attention",
    "synthetic_text", "train_scratch",
]
__version__ = "0.1.0"
