"""Experiment orchestration: supervised training, distillation, NST loop.

Runs are driven by an ExperimentConfig assembled from defaults, an optional
key=value config file, and flag overrides. Every source of randomness derives
from the experiment seed through fixed stream tags, so a full run is
reproducible byte for byte, metrics files included.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, derive_rng, freq_aug, spec_augment
from .data import SyntheticTaskConfig, load_split
from .distill import DistillConfig, combined_loss, consistency_loss, coarsened_kl_loss, kl_lattice_loss
from .errors import ConfigError, IncompatibleModelError, InvalidParameterError, TrainingFailureError
from .lattice import rnnt_loss
from .metrics import MetricsRecord, token_error_rate
from .model import (
    ACTIVATIONS,
    OptimizerState,
    ParamGradients,
    ToyTransducerParams,
    backprop,
    encode,
    greedy_decode,
    init_params,
    lattice_for,
    optimizer_step,
    save_params,
)

AUGMENT_KINDS = ("none", "freqaug", "specaug")

# Augmentation sized for the default synthetic task. The full-scale warp and
# mask settings in AugmentConfig assume ~80 mel bins and hundreds of frames;
# at 8 bins and ~10 frames they wipe out the signal.
TOY_AUGMENT = dict(gamma_f=0.1, sigma_noise=0.14, freq_masks=2, freq_mask_max=2,
                   time_masks=2, time_mask_max=3)

# Stream tags for deriving run-local generators from the experiment seed.
_INIT_STREAM = 10
_SHUFFLE_STREAM = 11
_AUG_STREAM = 12


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one training or distillation run needs."""

    task: SyntheticTaskConfig = SyntheticTaskConfig()
    distill: DistillConfig = DistillConfig()
    augment: AugmentConfig = AugmentConfig(**TOY_AUGMENT)
    seed: int = 0
    teacher_hidden: int = 16
    student_hidden: int = 8
    activation: str = "squared_relu"
    learning_rate: float = 0.02
    epochs: int = 3
    batch_size: int = 32
    generations: int = 3
    augment_kind: str = "freqaug"
    noisy_teacher: bool = False
    decode_u_max: int = 12
    data_dir: str = "data"
    out_dir: str = "runs"

    def __post_init__(self):
        if self.augment_kind not in AUGMENT_KINDS:
            raise ConfigError(
                f"augment_kind must be one of {AUGMENT_KINDS}, got {self.augment_kind!r}"
            )
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if min(self.teacher_hidden, self.student_hidden, self.batch_size,
               self.decode_u_max) < 1 or self.epochs < 0 or self.generations < 1:
            raise ConfigError("model/training sizes out of range")
        if self.learning_rate < 0.0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------

_SCHEMA = {
    # synthetic task
    "vocab": ("task", int), "feature_dim": ("task", int),
    "frames_per_token_min": ("task", int), "frames_per_token_max": ("task", int),
    "noise_std": ("task", float),
    "utterance_tokens_min": ("task", int), "utterance_tokens_max": ("task", int),
    "labeled_size": ("task", int), "unlabeled_size": ("task", int),
    "eval_size": ("task", int),
    # distillation loss
    "mode": ("distill", str), "alpha": ("distill", float),
    "tau_teacher": ("distill", float), "tau_student": ("distill", float),
    "chunk_frames": ("distill", int), "consistency_weight": ("distill", float),
    # augmentation
    "gamma_f": ("augment", float), "sigma_noise": ("augment", float),
    "freq_masks": ("augment", int), "freq_mask_max": ("augment", int),
    "time_masks": ("augment", int), "time_mask_max": ("augment", int),
    # experiment-level
    "seed": ("experiment", int),
    "teacher_hidden": ("experiment", int), "student_hidden": ("experiment", int),
    "activation": ("experiment", str), "learning_rate": ("experiment", float),
    "epochs": ("experiment", int), "batch_size": ("experiment", int),
    "generations": ("experiment", int), "augment_kind": ("experiment", str),
    "noisy_teacher": ("experiment", bool), "decode_u_max": ("experiment", int),
    "data_dir": ("experiment", str), "out_dir": ("experiment", str),
}


def parse_config_file(path) -> dict:
    """Reads key=value lines; blank lines and lines starting with # are skipped."""
    mapping = {}
    for lineno, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def _convert(key: str, value, kind):
    if isinstance(value, str):
        try:
            if kind is bool:
                lowered = value.lower()
                if lowered in ("true", "1", "yes"):
                    return True
                if lowered in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return kind(value)
        except ValueError as exc:
            raise ConfigError(f"config key {key}: cannot parse {value!r}") from exc
    return kind(value)


def build_experiment_config(mapping: dict) -> ExperimentConfig:
    """Turns a flat key->value mapping into an ExperimentConfig.

    Unknown keys are errors. The single `seed` key feeds the experiment, the
    synthetic task, and the augmentation config alike.
    """
    groups = {"task": {}, "distill": {}, "augment": {}, "experiment": {}}
    for key, value in mapping.items():
        if value is None:
            continue
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        group, kind = _SCHEMA[key]
        groups[group][key] = _convert(key, value, kind)

    seed = groups["experiment"].get("seed", ExperimentConfig.seed)
    try:
        return ExperimentConfig(
            task=SyntheticTaskConfig(seed=seed, **groups["task"]),
            distill=DistillConfig(**groups["distill"]),
            augment=AugmentConfig(seed=seed, **{**TOY_AUGMENT, **groups["augment"]}),
            **groups["experiment"],
        )
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from exc


def load_experiment_config(config_path=None, overrides=None) -> ExperimentConfig:
    """Config file values first, then overrides (e.g. parsed CLI flags)."""
    mapping = parse_config_file(config_path) if config_path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            mapping[key] = value
    return build_experiment_config(mapping)


# ---------------------------------------------------------------------------
# Training internals
# ---------------------------------------------------------------------------

_dataset_cache = {}


def _load(data_dir, split):
    key = (str(Path(data_dir).resolve()), split)
    if key not in _dataset_cache:
        if len(_dataset_cache) > 8:
            _dataset_cache.clear()
        _dataset_cache[key] = load_split(data_dir, split)
    return _dataset_cache[key]


def _derived_seed(seed: int, *tags) -> int:
    ss = np.random.SeedSequence([seed & (2**64 - 1)] + [int(t) for t in tags])
    return int(ss.generate_state(1, np.uint64)[0])


def _zero_grads(params: ToyTransducerParams) -> ParamGradients:
    return ParamGradients(**{k: np.zeros_like(v) for k, v in params.arrays().items()})


def _accumulate(total: ParamGradients, grads: ParamGradients, scale: float):
    for name, arr in total.arrays().items():
        arr += scale * getattr(grads, name)


def evaluate(params: ToyTransducerParams, data_dir, split: str, u_max: int) -> float:
    """Aggregate token error rate of greedy decodes against references."""
    pairs = _load(data_dir, split)
    refs = [labels for _, labels in pairs]
    if any(r is None for r in refs):
        raise InvalidParameterError(f"split {split!r} has no reference transcripts")
    hyps = [greedy_decode(params, features, u_max) for features, _ in pairs]
    return token_error_rate(refs, hyps)


def augment_features(x, cfg: ExperimentConfig, rng):
    """Applies the configured augmentation kind (none, freqaug, specaug)."""
    if cfg.augment_kind == "none":
        return x
    if cfg.augment_kind == "freqaug":
        return freq_aug(x, cfg.augment, rng)
    return spec_augment(x, cfg.augment, rng)


def _run_epochs(cfg, run_id, run_seed, examples, step_fn, params, state):
    """Shared batch loop: shuffle, accumulate grads, update, track the curve."""
    curve = []
    step = 0
    for epoch in range(cfg.epochs):
        order = derive_rng(run_seed, _SHUFFLE_STREAM, epoch).permutation(len(examples))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            total = _zero_grads(params)
            batch_loss = 0.0
            for idx in batch:
                loss, grads = step_fn(params, int(idx), epoch)
                batch_loss += loss
                _accumulate(total, grads, 1.0 / len(batch))
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                raise TrainingFailureError(
                    f"run {run_id}: non-finite loss at step {step}"
                )
            params, state = optimizer_step(params, total, state)
            curve.append((step, float(batch_loss)))
            step += 1
    return params, curve


def _finalize(cfg, params, curve, run_id, role, generation, data_dir, out_dir):
    ter = evaluate(params, data_dir, "eval", cfg.decode_u_max)
    record = MetricsRecord(
        run_id=run_id, role=role, generation=generation, ter=ter,
        final_loss=curve[-1][1] if curve else float("nan"), loss_curve=curve,
    )
    if out_dir is not None:
        save_params(params, Path(out_dir) / "models" / run_id)
    return record


def train_supervised(cfg: ExperimentConfig, data_dir=None, *, hidden=None,
                     run_id="supervised", role="teacher", generation=0,
                     seed_tag=0, out_dir=None):
    """Trains a fresh model on the labeled split by minimizing the lattice loss.

    Returns (params, MetricsRecord); with out_dir set the params are saved
    under <out_dir>/models/<run_id>.
    """
    data_dir = cfg.data_dir if data_dir is None else data_dir
    examples = _load(data_dir, "labeled")
    run_seed = _derived_seed(cfg.seed, 1, seed_tag)
    params = init_params(
        cfg.task.feature_dim, hidden or cfg.teacher_hidden, cfg.task.vocab,
        activation=cfg.activation, seed=_derived_seed(run_seed, _INIT_STREAM),
    )
    state = OptimizerState.for_params(params, cfg.learning_rate)

    def step_fn(current, idx, epoch):
        features, labels = examples[idx]
        result = rnnt_loss(lattice_for(current, features, labels), labels)
        return result.loss, backprop(current, features, labels, result.grad)

    params, curve = _run_epochs(cfg, run_id, run_seed, examples, step_fn, params, state)
    return params, _finalize(cfg, params, curve, run_id, role, generation,
                             data_dir, out_dir)


def distill_run(teacher: ToyTransducerParams, cfg: ExperimentConfig, data_dir=None, *,
                hidden=None, run_id="distill", role="student", generation=1,
                seed_tag=0, out_dir=None):
    """Distills the teacher into a fresh student over the unlabeled split.

    The teacher greedy-decodes a pseudo label per utterance, which fixes the
    lattice height for both models. The student sees augmented features per
    cfg.augment_kind while the teacher stays on clean input unless
    cfg.noisy_teacher is set. Modes: hard trains on the transducer loss
    against the pseudo label, soft on the full lattice KL, mixed on their
    alpha blend, efficient on the coarsened KL.
    """
    data_dir = cfg.data_dir if data_dir is None else data_dir
    if teacher.vocab_size != cfg.task.vocab:
        raise IncompatibleModelError(
            f"teacher vocab {teacher.vocab_size} != task vocab {cfg.task.vocab}"
        )
    examples = _load(data_dir, "unlabeled")
    run_seed = _derived_seed(cfg.seed, 2, seed_tag)
    student = init_params(
        cfg.task.feature_dim, hidden or cfg.student_hidden, cfg.task.vocab,
        activation=cfg.activation, seed=_derived_seed(run_seed, _INIT_STREAM),
    )
    state = OptimizerState.for_params(student, cfg.learning_rate)
    mode = cfg.distill.mode

    # Pseudo labels off clean input are fixed for the whole run.
    clean_pseudo = None
    if not cfg.noisy_teacher or cfg.augment_kind == "none":
        clean_pseudo = [greedy_decode(teacher, features, cfg.decode_u_max)
                        for features, _ in examples]

    def step_fn(current, idx, epoch):
        features, _ = examples[idx]
        aug_rng = derive_rng(run_seed, _AUG_STREAM, epoch, idx)
        student_input = augment_features(features, cfg, aug_rng)
        teacher_input = student_input if cfg.noisy_teacher else features
        if clean_pseudo is not None:
            pseudo = clean_pseudo[idx]
        else:
            pseudo = greedy_decode(teacher, teacher_input, cfg.decode_u_max)

        student_lattice = lattice_for(current, student_input, pseudo)
        if mode == "hard":
            result = rnnt_loss(student_lattice, pseudo)
        else:
            teacher_lattice = lattice_for(teacher, teacher_input, pseudo)
            if mode == "soft":
                result = kl_lattice_loss(teacher_lattice, student_lattice, cfg.distill)
            elif mode == "efficient":
                result = coarsened_kl_loss(
                    teacher_lattice, student_lattice, pseudo, cfg.distill
                )
            else:
                result = combined_loss(
                    rnnt_loss(student_lattice, pseudo),
                    kl_lattice_loss(teacher_lattice, student_lattice, cfg.distill),
                    cfg.distill,
                )

        loss = result.loss
        enc_grad = None
        if cfg.distill.consistency_weight > 0.0:
            aux = consistency_loss(encode(teacher, teacher_input),
                                   encode(current, student_input))
            loss += cfg.distill.consistency_weight * aux.loss
            enc_grad = cfg.distill.consistency_weight * aux.grad
        return loss, backprop(current, student_input, pseudo, result.grad,
                              enc_state_grad=enc_grad)

    student, curve = _run_epochs(cfg, run_id, run_seed, examples, step_fn,
                                 student, state)
    return student, _finalize(cfg, student, curve, run_id, role, generation,
                              data_dir, out_dir)


def nst_loop(cfg: ExperimentConfig, data_dir=None, *, out_dir=None):
    """Iterative self-training: supervised generation 0, then repeated
    distillation of each generation into a fresh same-architecture student.

    Returns (final params, [MetricsRecord per generation]).
    """
    if cfg.generations < 1:
        raise InvalidParameterError(
            f"generations must be >= 1, got {cfg.generations}"
        )
    data_dir = cfg.data_dir if data_dir is None else data_dir
    records = []
    params, record = train_supervised(
        cfg, data_dir, hidden=cfg.teacher_hidden, run_id="nst-g0", role="teacher",
        generation=0, seed_tag=0, out_dir=out_dir,
    )
    records.append(record)
    for gen in range(1, cfg.generations):
        params, record = distill_run(
            params, cfg, data_dir, hidden=cfg.teacher_hidden,
            run_id=f"nst-g{gen}", role="student", generation=gen, seed_tag=gen,
            out_dir=out_dir,
        )
        records.append(record)
    return params, records
