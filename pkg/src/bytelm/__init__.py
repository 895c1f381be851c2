"""Byte-level language models with word-aligned multiscale attention,
fixed-patch and subword baselines, and compute-matched benchmarking."""

from .accounting import (
    FlopsBreakdown,
    ParamCounts,
    ParetoPoint,
    bits_per_byte,
    count_params,
    flops_per_byte,
    grid_configs,
    layers_for_dim,
    pareto_frontier,
    svg_scatter,
    training_flops_per_byte,
)
from .bpe import Vocab, bpe_train, bytes_per_token, decode, encode, load_vocab, save_vocab
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    Corpus,
    Sample,
    build_corpus,
    eval_windows,
    load_corpus,
    load_documents,
    sample_batch,
    sample_context,
    split_corpus,
    token_corpus,
)
from .errors import ByteLMError, ConfigError, DataError, NumericError, ShapeError
from .models import ForwardOutput, Model, ModelConfig, SlotStats, build_model, generate
from .segment import (
    BOS,
    RESERVED,
    PatchBoundaries,
    PatchStats,
    insertion_mask,
    is_spacelike,
    patch_stats,
    spacelike_mask,
    split_patches,
)
from .tensor import Tensor
from .textgen import synth_corpus
from .train import AdamW, EvalResult, TrainConfig, TrainResult, eval_bpb, lr_at_step, train_loop

__version__ = "0.1.0"
