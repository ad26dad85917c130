"""modnmt: a desk-scale laboratory for modular multilingual translation.

Six parameter-sharing architectures (fully shared, fully modular, shared
encoder, shared decoder, Transformer-layer bridge, fixed-size attention
bridge) built on a small reverse-mode autodiff engine, plus synthetic
multilingual corpora, a budget-controlled trainer, BLEU evaluation over
seen/unseen and in/out-of-distribution conditions, and an OLS layer for the
resulting score grid.
"""

from .corpus import (
    CorpusSizes,
    CorpusSplits,
    DirectionSet,
    DomainProfile,
    LanguageSpec,
    SentencePair,
    build_direction_set,
    default_domains,
    default_language_specs,
    generate_corpus,
    ingest_aligned_text,
    split_with_closure,
)
from .evaluation import (
    EvalCell,
    RunHandle,
    corpus_bleu,
    decode_batch,
    evaluate_grid,
    evaluate_run,
    format_summary,
    greedy_decode,
    read_cells_tsv,
    write_cells_tsv,
)
from .layers import (
    FsabParams,
    TransformerLayerParams,
    decoder_layer_forward,
    encoder_layer_forward,
    fsab_forward,
    sinusoidal_positions,
)
from .model import (
    ARCHITECTURE_KINDS,
    ModelDims,
    ModularModel,
    ModuleKey,
    Vocab,
    build_model,
    checkpoint_load,
    checkpoint_save,
    count_parameters,
    total_parameter_count,
)
from .stats import (
    DesignMatrix,
    OlsFit,
    build_design,
    fit_cells,
    ols_fit,
    report_table,
    t_two_sided_p,
)
from .tensor import Tape, Tensor, backward, cross_entropy, layer_norm, matmul, no_grad, relu, softmax
from .trainer import (
    AdamConfig,
    OptimizerState,
    SamplingPolicy,
    TrainBudget,
    TrainingDiverged,
    adam_step,
    noam_lr,
    sample_direction,
    train,
)

__version__ = "0.1.0"
