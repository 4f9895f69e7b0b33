"""Augmented time-series views and their spectrograms."""

import zlib
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from .epoching import EPOCH_SAMPLES


@dataclass(frozen=True)
class AugmentConfig:
    """Magnitudes of the T1 (jitter + mask) and T2 (flip + scale) families."""

    jitter_amplitude: float = 0.1
    mask_segments: int = 3
    mask_total_fraction: float = 0.125
    flip_probability: float = 0.5
    scale_sigma: float = 0.1
    scale_mode: Literal["scalar", "elementwise"] = "scalar"
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("mask_total_fraction", "flip_probability"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if self.jitter_amplitude < 0:
            raise ValueError("jitter_amplitude must be >= 0")
        if self.scale_sigma < 0:
            raise ValueError("scale_sigma must be >= 0")
        if self.mask_segments < 0:
            raise ValueError("mask_segments must be >= 0")
        if self.scale_mode not in ("scalar", "elementwise"):
            raise ValueError(f"Unknown scale_mode '{self.scale_mode}'")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        """A configuration under which both families leave the epoch unchanged."""
        return cls(
            jitter_amplitude=0.0,
            mask_total_fraction=0.0,
            flip_probability=0.0,
            scale_sigma=0.0,
        )


@dataclass(frozen=True)
class StftConfig:
    """Frame layout of the spectrogram transform."""

    window_len: int = 256
    hop: int = 64
    window: str = "hann"

    def __post_init__(self) -> None:
        if not 0 < self.hop <= self.window_len <= EPOCH_SAMPLES:
            raise ValueError(
                f"Need 0 < hop <= window_len <= {EPOCH_SAMPLES}, "
                f"got hop={self.hop}, window_len={self.window_len}"
            )

    @property
    def num_bins(self) -> int:
        return self.window_len // 2 + 1

    def num_frames(self, length: int = EPOCH_SAMPLES) -> int:
        return (length - self.window_len) // self.hop + 1

    def shape(self, length: int = EPOCH_SAMPLES) -> tuple[int, int]:
        return (self.num_bins, self.num_frames(length))


@dataclass(frozen=True)
class ViewBundle:
    """The four views of one epoch."""

    t1: np.ndarray
    t2: np.ndarray
    s1: np.ndarray
    s2: np.ndarray


def _check_epoch(epoch: np.ndarray) -> np.ndarray:
    values = np.asarray(epoch)
    if values.shape != (EPOCH_SAMPLES,):
        raise ValueError(
            f"Epoch must have shape ({EPOCH_SAMPLES},), got {values.shape}"
        )
    return values


def epoch_rng(seed: int, train_epoch: int, subject_id: str, index: int) -> np.random.Generator:
    """Per-epoch generator derived from (seed, training epoch, subject, epoch index)."""
    subject_key = zlib.crc32(subject_id.encode("utf-8"))
    return np.random.default_rng([seed, train_epoch, subject_key, index])


def _mask_runs(
    length: int, segments: int, total: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Disjoint [start, stop) runs of combined length `total`."""
    if segments == 0 or total == 0:
        return []
    sizes = np.full(segments, total // segments)
    sizes[: total % segments] += 1
    # Sorted gaps in the unmasked remainder keep the runs ordered and disjoint
    gaps = np.sort(rng.integers(0, length - total + 1, size=segments))
    runs = []
    consumed = 0
    for gap, size in zip(gaps, sizes):
        start = int(gap) + consumed
        runs.append((start, start + int(size)))
        consumed += int(size)
    return runs


def augment_t1(
    epoch: np.ndarray, config: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Uniform jitter scaled by the epoch's std, then zero-masking of random runs."""
    values = _check_epoch(epoch).astype(np.float64)
    amplitude = config.jitter_amplitude * float(np.std(values))
    out = values + rng.uniform(-amplitude, amplitude, size=values.shape)
    total = int(np.floor(config.mask_total_fraction * len(values)))
    for start, stop in _mask_runs(len(values), config.mask_segments, total, rng):
        out[start:stop] = 0.0
    return out


def augment_t2(
    epoch: np.ndarray,
    config: AugmentConfig,
    rng: np.random.Generator,
    force_flip: bool | None = None,
) -> np.ndarray:
    """
    Random time reversal, then multiplicative Gaussian scaling around 1.

    Args:
        force_flip: Overrides the flip draw when not None.
    """
    values = _check_epoch(epoch).astype(np.float64)
    flip = rng.random() < config.flip_probability
    if force_flip is not None:
        flip = force_flip
    if flip:
        values = values[::-1].copy()
    if config.scale_mode == "elementwise":
        factor = rng.normal(1.0, config.scale_sigma, size=values.shape)
    else:
        factor = rng.normal(1.0, config.scale_sigma)
    return values * factor


def stft_complex(series: np.ndarray, config: StftConfig) -> np.ndarray:
    """One-sided windowed DFT, shape (window_len // 2 + 1, num_frames)."""
    values = np.asarray(series, dtype=np.float64)
    if values.ndim != 1 or len(values) < config.window_len:
        raise ValueError(
            f"Series of length {values.shape} is shorter than window {config.window_len}"
        )
    frames = sliding_window_view(values, config.window_len)[:: config.hop]
    window = get_window(config.window, config.window_len)
    return np.fft.rfft(frames * window, axis=1).T


def stft(series: np.ndarray, config: StftConfig) -> np.ndarray:
    """Log-magnitude spectrogram log(1 + |X|)."""
    return np.log1p(np.abs(stft_complex(series, config)))


def make_views(
    epoch: np.ndarray,
    augment: AugmentConfig,
    stft_config: StftConfig,
    rng: np.random.Generator,
) -> ViewBundle:
    t1 = augment_t1(epoch, augment, rng)
    t2 = augment_t2(epoch, augment, rng)
    return ViewBundle(t1=t1, t2=t2, s1=stft(t1, stft_config), s2=stft(t2, stft_config))


def make_view_batch(
    values: np.ndarray,
    subject_ids: np.ndarray,
    indices: np.ndarray,
    augment: AugmentConfig,
    stft_config: StftConfig,
    train_epoch: int = 0,
) -> ViewBundle:
    """
    Stack the views of a batch of epochs.

    Row i uses the generator of (augment.seed, train_epoch, subject_ids[i], indices[i]).

    Returns:
        A ViewBundle whose fields carry a leading batch axis, float32.
    """
    bundles = [
        make_views(
            values[i],
            augment,
            stft_config,
            epoch_rng(augment.seed, train_epoch, str(subject_ids[i]), int(indices[i])),
        )
        for i in range(len(values))
    ]
    return ViewBundle(
        t1=np.stack([b.t1 for b in bundles]).astype(np.float32),
        t2=np.stack([b.t2 for b in bundles]).astype(np.float32),
        s1=np.stack([b.s1 for b in bundles]).astype(np.float32),
        s2=np.stack([b.s2 for b in bundles]).astype(np.float32),
    )
