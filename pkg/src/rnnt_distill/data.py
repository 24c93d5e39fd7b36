"""Synthetic token-to-frames dataset generation and loading.

Each token id owns a fixed prototype feature vector drawn once from the task
seed. An utterance samples a token sequence, emits 1-3 noisy copies of each
token's prototype as consecutive frames, and stores the result as an (F, T)
tensor file. The labeled and eval splits keep their transcripts in labels.txt;
the unlabeled split omits the file. Everything derives from the seed, so
regeneration is byte-identical.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import derive_rng
from .errors import InvalidParameterError
from .tensorio import read_tensor, write_tensor

SPLITS = ("labeled", "unlabeled", "eval")

# Stream tags for per-purpose generators derived from the task seed.
_PROTO_STREAM = 0
_SPLIT_STREAMS = {"labeled": 1, "unlabeled": 2, "eval": 3}


@dataclass(frozen=True)
class SyntheticTaskConfig:
    """Shape and sizes of the synthetic recognition task."""

    vocab: int = 6
    feature_dim: int = 8
    frames_per_token_min: int = 1
    frames_per_token_max: int = 3
    noise_std: float = 0.7
    utterance_tokens_min: int = 2
    utterance_tokens_max: int = 6
    labeled_size: int = 2000
    unlabeled_size: int = 8000
    eval_size: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.vocab < 3:
            raise InvalidParameterError(f"vocab must be >= 3, got {self.vocab}")
        if self.feature_dim < 2:
            raise InvalidParameterError(
                f"feature_dim must be >= 2, got {self.feature_dim}"
            )
        if not 1 <= self.frames_per_token_min <= self.frames_per_token_max:
            raise InvalidParameterError("frames-per-token range is empty")
        if not 1 <= self.utterance_tokens_min <= self.utterance_tokens_max:
            raise InvalidParameterError("utterance token range is empty")
        if self.noise_std < 0.0:
            raise InvalidParameterError(f"noise_std must be >= 0, got {self.noise_std}")
        if min(self.labeled_size, self.unlabeled_size, self.eval_size) < 0:
            raise InvalidParameterError("split sizes must be >= 0")

    def split_size(self, split: str) -> int:
        return {"labeled": self.labeled_size, "unlabeled": self.unlabeled_size,
                "eval": self.eval_size}[split]


def token_prototypes(cfg: SyntheticTaskConfig) -> np.ndarray:
    """Fixed (K, F) prototype vectors; row 0 (blank) is never emitted."""
    rng = derive_rng(cfg.seed, _PROTO_STREAM)
    return rng.normal(0.0, 1.0, size=(cfg.vocab, cfg.feature_dim))


def synth_utterance(cfg: SyntheticTaskConfig, prototypes, rng):
    """One (features, tokens) pair: noisy prototype frames per sampled token.

    Adjacent tokens never repeat; with variable frames per token, a repeated
    token would be indistinguishable from one longer token.
    """
    n_tokens = int(rng.integers(cfg.utterance_tokens_min, cfg.utterance_tokens_max + 1))
    tokens = np.empty(n_tokens, dtype=np.int64)
    prev = None
    for i in range(n_tokens):
        if prev is None:
            tok = int(rng.integers(1, cfg.vocab))
        else:
            tok = int(rng.integers(1, cfg.vocab - 1))
            if tok >= prev:
                tok += 1
        tokens[i] = tok
        prev = tok
    columns = []
    for tok in tokens:
        repeats = int(rng.integers(cfg.frames_per_token_min, cfg.frames_per_token_max + 1))
        base = np.tile(prototypes[tok][:, None], (1, repeats))
        columns.append(base + rng.normal(0.0, cfg.noise_std, size=base.shape))
    return np.concatenate(columns, axis=1), tokens


def gen_synthetic_dataset(cfg: SyntheticTaskConfig, out_dir) -> Path:
    """Writes the labeled / unlabeled / eval splits under out_dir.

    Layout per split: <out_dir>/<split>/features/NNNNNN.rntd plus labels.txt
    for transcript-bearing splits. A manifest.txt at the root echoes sizes,
    seed, and config. Per-utterance generators derive from
    (seed, split stream, index) so any split regenerates independently.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    prototypes = token_prototypes(cfg)
    for split in SPLITS:
        split_dir = root / split
        (split_dir / "features").mkdir(parents=True, exist_ok=True)
        transcripts = []
        for idx in range(cfg.split_size(split)):
            rng = derive_rng(cfg.seed, _SPLIT_STREAMS[split], idx)
            features, tokens = synth_utterance(cfg, prototypes, rng)
            write_tensor(split_dir / "features" / f"{idx:06d}.rntd", features)
            transcripts.append(" ".join(str(t) for t in tokens))
        if split != "unlabeled":
            (split_dir / "labels.txt").write_text(
                "\n".join(transcripts) + ("\n" if transcripts else ""),
                encoding="utf-8",
            )
    manifest = [f"{split}={cfg.split_size(split)}" for split in SPLITS]
    manifest.append(f"seed={cfg.seed}")
    manifest += [
        f"vocab={cfg.vocab}",
        f"feature_dim={cfg.feature_dim}",
        f"frames_per_token={cfg.frames_per_token_min}..{cfg.frames_per_token_max}",
        f"utterance_tokens={cfg.utterance_tokens_min}..{cfg.utterance_tokens_max}",
        f"noise_std={cfg.noise_std!r}",
    ]
    (root / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return root


def load_split(dataset_dir, split: str):
    """Reads one split back as a list of (features, labels-or-None)."""
    split_dir = Path(dataset_dir) / split
    feature_files = sorted((split_dir / "features").glob("*.rntd"))
    labels_path = split_dir / "labels.txt"
    labels = None
    if labels_path.exists():
        lines = labels_path.read_text(encoding="utf-8").splitlines()
        labels = [np.array([int(t) for t in line.split()], dtype=np.int64)
                  for line in lines]
        if len(labels) != len(feature_files):
            raise InvalidParameterError(
                f"{split}: {len(labels)} transcripts for {len(feature_files)} utterances"
            )
    out = []
    for i, path in enumerate(feature_files):
        out.append((read_tensor(path), labels[i] if labels is not None else None))
    return out
