"""xvit: softmax-free linear attention with a measurable complexity story.

The pieces: a small tracked tensor engine (:mod:`xvit.tensor`,
:mod:`xvit.ops`), the XNorm linear attention op next to its quadratic
softmax baseline (:mod:`xvit.attention`), a toy vision-transformer stack
with parameter/FLOP counters (:mod:`xvit.model`), tape-based reverse-mode
gradients with a finite-difference audit (:mod:`xvit.tape`,
:mod:`xvit.gradcheck`), and a benchmark harness that fits log-log scaling
exponents (:mod:`xvit.bench`).
"""

__version__ = "0.1.0"

from .attention import (AttentionOutput, AttentionParams, assoc_check,
                        class_attention, init_attention_params,
                        softmax_attention, xnorm, xnorm_attention,
                        xnorm_attention_core)
from .bench import BenchRecord, ScalingFit, fit_scaling, run_bench, write_csv
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_model, gradcheck
from .model import (CONFIGS, BlockParams, ClassBlockParams, ModelConfig,
                    ModelParams, block_forward, count_flops, count_params,
                    get_config, init_model, model_forward, stem_forward)
from .optim import SGD, sgd_step
from .tape import Tape
from .tensor import AllocStats, Tensor, alloc_stats, no_tracking, reset_peak, tensor, zeros
from .train import TrainResult, evaluate, train_toy

__all__ = [
    "__version__",
    # tensor engine
    "Tensor", "tensor", "zeros", "AllocStats", "alloc_stats", "reset_peak", "no_tracking",
    # attention
    "AttentionParams", "AttentionOutput", "init_attention_params", "xnorm",
    "xnorm_attention", "xnorm_attention_core", "softmax_attention",
    "class_attention", "assoc_check",
    # model
    "ModelConfig", "ModelParams", "BlockParams", "ClassBlockParams", "CONFIGS",
    "get_config", "init_model", "stem_forward", "block_forward", "model_forward",
    "count_params", "count_flops",
    # gradients / training
    "Tape", "grad_model", "gradcheck", "GradCheckReport", "SGD", "sgd_step",
    "train_toy", "evaluate", "TrainResult",
    # persistence / bench
    "save_checkpoint", "load_checkpoint",
    "BenchRecord", "ScalingFit", "run_bench", "fit_scaling", "write_csv",
]
