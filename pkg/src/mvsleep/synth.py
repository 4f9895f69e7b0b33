"""Synthetic five-class EEG-like epochs for desk-scale runs."""

import numpy as np

from .epoching import EPOCH_SAMPLES, NUM_CLASSES, SAMPLE_RATE_HZ, SleepEpoch

# Center frequency per class, loosely alpha / theta / spindle / delta / low theta
CLASS_FREQUENCIES_HZ: tuple[float, ...] = (10.0, 6.0, 14.0, 1.5, 4.0)


def synthesize(
    classes: int = NUM_CLASSES,
    per_class: int = 40,
    subjects: int = 10,
    seed: int = 0,
    noise: float = 0.5,
    bandwidth_hz: float = 1.0,
) -> list[SleepEpoch]:
    """
    Generate `classes * per_class` labeled epochs.

    Each epoch is a sinusoid whose frequency is drawn uniformly within
    `bandwidth_hz` of its class's center frequency, with a random phase and
    a per-subject gain, plus Gaussian noise. Epochs are dealt to subjects
    round-robin after shuffling, so subjects partition the set.
    """
    if classes < 1 or per_class < 1 or subjects < 1:
        raise ValueError(
            f"classes, per_class and subjects must be positive, "
            f"got {classes}, {per_class}, {subjects}"
        )
    if classes > NUM_CLASSES:
        raise ValueError(f"At most {NUM_CLASSES} classes, got {classes}")
    if noise < 0 or bandwidth_hz < 0:
        raise ValueError("noise and bandwidth_hz must be >= 0")

    rng = np.random.default_rng(seed)
    t = np.arange(EPOCH_SAMPLES) / SAMPLE_RATE_HZ
    gains = rng.uniform(0.8, 1.2, size=subjects)
    labels = np.repeat(np.arange(classes), per_class)
    owners = rng.permutation(len(labels)) % subjects

    epochs = []
    for i, label in enumerate(labels):
        freq = CLASS_FREQUENCIES_HZ[label] + rng.uniform(-bandwidth_hz / 2, bandwidth_hz / 2)
        phase = rng.uniform(0, 2 * np.pi)
        signal = gains[owners[i]] * np.sin(2 * np.pi * freq * t + phase)
        signal += rng.normal(0.0, noise, size=EPOCH_SAMPLES)
        epochs.append(
            SleepEpoch(
                subject_id=f"synth{owners[i]:03d}",
                values=signal.astype(np.float32),
                label=int(label),
                source="synthetic",
            )
        )
    return sorted(epochs, key=lambda e: e.subject_id)
