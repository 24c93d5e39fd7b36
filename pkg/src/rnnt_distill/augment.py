"""Seeded spectrogram augmentations: frequency warping, frequency noise, masking.

All operations act on a feature matrix of shape (F, T), frequency bins by
frames, and return a new array of the same shape. Randomness comes from an
explicit numpy Generator so identical seed, config, and input reproduce the
output bit for bit. Use make_rng / derive_rng to build generators; both are
PCG64 behind numpy's Generator, seeded through SeedSequence, so streams are
stable across runs and platforms.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidParameterError


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation strengths. Defaults follow the full-scale recipe:
    warp ratio 0.75, noise stddev 0.14, two frequency masks up to 27 bins,
    ten time masks up to 40 frames. Mask sizes must be scaled down before
    applying to small feature matrices.
    """

    gamma_f: float = 0.75
    sigma_noise: float = 0.14
    freq_masks: int = 2
    freq_mask_max: int = 27
    time_masks: int = 10
    time_mask_max: int = 40
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma_f <= 1.0:
            raise InvalidParameterError(f"gamma_f must lie in [0, 1], got {self.gamma_f}")
        if self.sigma_noise < 0.0:
            raise InvalidParameterError(
                f"sigma_noise must be >= 0, got {self.sigma_noise}"
            )
        for name in ("freq_masks", "freq_mask_max", "time_masks", "time_mask_max"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for one utterance or one run."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed & (2**64 - 1))))


def derive_rng(seed: int, *stream) -> np.random.Generator:
    """Independent per-item generator keyed by (seed, *stream) integers.

    Augmenting a batch in parallel needs one generator per utterance; deriving
    them from the utterance index keeps results schedule-independent.
    """
    entropy = [seed & (2**64 - 1)] + [int(s) & (2**64 - 1) for s in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _as_features(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 1:
        raise InvalidInputError(
            f"feature matrix must be (F>=2, T>=1), got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("feature matrix contains non-finite entries")
    return arr


def warp_frequency_axis(x, anchor: float, target: float) -> np.ndarray:
    """Piecewise-linear remap of the frequency axis moving anchor to target.

    Row f of the output samples the input at the source position given by the
    linear segments (0, 0) -> (target, anchor) -> (F, F) in (destination,
    source) coordinates, with linear interpolation between bins. A target
    clipped onto an edge collapses the degenerate segment.
    """
    arr = _as_features(x)
    f_dim = arr.shape[0]
    if 0.0 < target < f_dim:
        xp, fp = [0.0, target, float(f_dim)], [0.0, anchor, float(f_dim)]
    elif target <= 0.0:
        xp, fp = [0.0, float(f_dim)], [anchor, float(f_dim)]
    else:
        xp, fp = [0.0, float(f_dim)], [0.0, anchor]
    src = np.interp(np.arange(f_dim, dtype=np.float64), xp, fp)

    lo = np.clip(np.floor(src).astype(np.int64), 0, f_dim - 1)
    hi = np.minimum(lo + 1, f_dim - 1)
    w = np.clip(src - lo, 0.0, 1.0)
    return (1.0 - w)[:, None] * arr[lo, :] + w[:, None] * arr[hi, :]


def freq_warp(x, gamma_f: float, rng: np.random.Generator) -> np.ndarray:
    """Warps the frequency axis by a random anchor shift shared by all frames.

    Draws an anchor y ~ U(0, F) and an offset dy ~ U(-F*gamma_f, F*gamma_f),
    then remaps so the content at y lands at clip(y + dy, 0, F). gamma_f = 0
    returns the input unchanged.
    """
    arr = _as_features(x)
    if not 0.0 <= gamma_f <= 1.0:
        raise InvalidParameterError(f"gamma_f must lie in [0, 1], got {gamma_f}")
    f_dim = arr.shape[0]
    anchor = rng.uniform(0.0, f_dim)
    delta = f_dim * gamma_f
    offset = rng.uniform(-delta, delta)
    target = float(np.clip(anchor + offset, 0.0, f_dim))
    if target == anchor:
        return arr.copy()
    return warp_frequency_axis(arr, anchor, target)


def freq_noise(x, sigma_noise: float, rng: np.random.Generator) -> np.ndarray:
    """Multiplies each frequency bin by a Gaussian factor centered at 1.

    Draws sigma_f ~ U(0, sigma_noise), then one factor ~ N(1, sigma_f) per
    bin, applied across all frames. sigma_noise = 0 is the exact identity.
    """
    arr = _as_features(x)
    if sigma_noise < 0.0:
        raise InvalidParameterError(f"sigma_noise must be >= 0, got {sigma_noise}")
    sigma_f = rng.uniform(0.0, sigma_noise)
    factors = rng.normal(1.0, sigma_f, size=arr.shape[0])
    return factors[:, None] * arr


def spec_augment(x, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Zeroes random frequency bands and time spans, SpecAugment style.

    Per frequency mask, a width w ~ U{0..freq_mask_max} and a start
    ~ U{0..F-w} are drawn and rows [start, start+w) zeroed; time masks act the
    same way on columns. Masks may overlap. Frequency masks consume draws
    before time masks.
    """
    arr = _as_features(x)
    f_dim, t_dim = arr.shape
    if cfg.freq_mask_max > f_dim:
        raise InvalidParameterError(
            f"freq_mask_max {cfg.freq_mask_max} exceeds F={f_dim}"
        )
    if cfg.time_mask_max > t_dim:
        raise InvalidParameterError(
            f"time_mask_max {cfg.time_mask_max} exceeds T={t_dim}"
        )
    out = arr.copy()
    for _ in range(cfg.freq_masks):
        width = int(rng.integers(0, cfg.freq_mask_max + 1))
        start = int(rng.integers(0, f_dim - width + 1))
        out[start : start + width, :] = 0.0
    for _ in range(cfg.time_masks):
        width = int(rng.integers(0, cfg.time_mask_max + 1))
        start = int(rng.integers(0, t_dim - width + 1))
        out[:, start : start + width] = 0.0
    return out


def freq_aug(x, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Frequency warp followed by frequency noise, one shared draw stream."""
    return freq_noise(freq_warp(x, cfg.gamma_f, rng), cfg.sigma_noise, rng)
