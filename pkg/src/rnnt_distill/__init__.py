"""Transducer lattice losses, soft-target distillation, and NST pipeline."""

from .augment import (
    AugmentConfig,
    derive_rng,
    freq_aug,
    freq_noise,
    freq_warp,
    make_rng,
    spec_augment,
    warp_frequency_axis,
)
from .data import SyntheticTaskConfig, gen_synthetic_dataset, load_split, synth_utterance, token_prototypes
from .distill import (
    DistillConfig,
    coarsen_distribution,
    coarsened_kl_loss,
    combined_loss,
    consistency_loss,
    kl_lattice_loss,
    node_kl_divergence,
    temperature_scale,
)
from .errors import (
    CapacityError,
    ConfigError,
    IncompatibleModelError,
    IncompatibleShapeError,
    InvalidInputError,
    InvalidLabelError,
    InvalidParameterError,
    RnntDistillError,
    TensorFormatError,
    TrainingFailureError,
)
from .lattice import (
    LatticePosteriors,
    LossResult,
    brute_force_rnnt_loss,
    forward_backward,
    log_softmax_lattice,
    rnnt_loss,
    softmax_lattice,
)
from .metrics import MetricsRecord, edit_distance, token_error_rate, write_metrics
from .model import (
    OptimizerState,
    ParamGradients,
    ToyTransducerParams,
    backprop,
    encode,
    greedy_decode,
    init_params,
    joint_logits,
    lattice_for,
    load_params,
    optimizer_step,
    predict,
    save_params,
    squared_relu,
    swish,
)
from .pipeline import (
    ExperimentConfig,
    augment_features,
    build_experiment_config,
    distill_run,
    evaluate,
    load_experiment_config,
    nst_loop,
    parse_config_file,
    train_supervised,
)
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"
