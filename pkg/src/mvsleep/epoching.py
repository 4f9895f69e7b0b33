"""Epoch segmentation, subject splits, pretext subsampling, folds and feature normalization."""

import struct
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TypeVar

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from .artifacts import read_artifact, write_artifact
from .edf import DEFAULT_CHANNEL, Recording, StageInterval, map_stage

EPOCH_SECONDS = 30
SAMPLE_RATE_HZ = 100.0
EPOCH_SAMPLES = 3000
NUM_CLASSES = 5
UNLABELED = 255

STORE_MAGIC = b"SSEP"

T = TypeVar("T")


@dataclass(frozen=True)
class DataConfig:
    """Corpus handling: channel choice, split counts, folds, wake trimming."""

    channel: str = DEFAULT_CHANNEL
    n_pretext: int = 58
    n_eval: int = 20
    folds: int = 5
    trim_wake_minutes: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_pretext < 0 or self.n_eval < 1:
            raise ValueError("n_pretext must be >= 0 and n_eval >= 1")
        if self.folds < 1:
            raise ValueError(f"folds must be >= 1, got {self.folds}")
        if self.trim_wake_minutes is not None and self.trim_wake_minutes < 0:
            raise ValueError("trim_wake_minutes must be >= 0")


@dataclass(frozen=True)
class SleepEpoch:
    """One 30 s, 3000-sample EEG segment."""

    subject_id: str
    values: np.ndarray
    label: int | None = None
    source: str = ""

    def __post_init__(self) -> None:
        if len(self.values) != EPOCH_SAMPLES:
            raise ValueError(
                f"Epoch must have {EPOCH_SAMPLES} values, got {len(self.values)}"
            )
        if self.label is not None and not 0 <= self.label < NUM_CLASSES:
            raise ValueError(f"Label must be in 0..{NUM_CLASSES - 1}, got {self.label}")


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint pretext and evaluation subject groups."""

    pretext_subjects: tuple[str, ...]
    eval_subjects: tuple[str, ...]
    pretext_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if set(self.pretext_subjects) & set(self.eval_subjects):
            raise ValueError("Pretext and eval subjects must be disjoint")
        if not 0 < self.pretext_fraction <= 1:
            raise ValueError(
                f"pretext_fraction must be in (0, 1], got {self.pretext_fraction}"
            )


@dataclass(frozen=True)
class FoldAssignment:
    """Subject-level partition of the evaluation group into k folds."""

    k: int
    fold_of_subject: dict[str, int] = field(default_factory=dict)

    @property
    def folds(self) -> list[list[str]]:
        members: list[list[str]] = [[] for _ in range(self.k)]
        for subject, fold in sorted(self.fold_of_subject.items()):
            members[fold].append(subject)
        return members

    def splits(
        self, subject_ids: Sequence[str] | np.ndarray
    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (train_rows, test_rows) index arrays, one pair per fold."""
        subjects = np.asarray(subject_ids)
        unknown = set(subjects.tolist()) - set(self.fold_of_subject)
        if unknown:
            raise ValueError(f"Subjects without a fold: {sorted(unknown)}")
        row_fold = np.array([self.fold_of_subject[s] for s in subjects.tolist()])
        for fold in range(self.k):
            yield np.flatnonzero(row_fold != fold), np.flatnonzero(row_fold == fold)


@dataclass(frozen=True)
class ZScore:
    """Per-dimension standardization fitted on a training matrix."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.mean):
            raise ValueError(
                f"Dimension mismatch: expected {len(self.mean)} columns, "
                f"got shape {matrix.shape}"
            )
        return (matrix - self.mean) / self.std


def segment_epochs(
    recording: Recording, intervals: Sequence[StageInterval]
) -> list[SleepEpoch]:
    """
    Cut a recording into labeled 30 s epochs aligned to hypnogram intervals.

    Epochs whose stage maps to no class (M, ?) are dropped, as is any
    trailing window shorter than 30 s.
    """
    if recording.sample_rate_hz != SAMPLE_RATE_HZ:
        raise ValueError(
            f"Expected {SAMPLE_RATE_HZ:g} Hz recording, got "
            f"{recording.sample_rate_hz:g} Hz (resampling is not supported)"
        )

    scored = [(iv, map_stage(iv.raw_label)) for iv in intervals]
    scored_end = max(
        (iv.onset_s + iv.duration_s for iv, cls in scored if cls is not None),
        default=0.0,
    )
    if scored_end > recording.duration_s + EPOCH_SECONDS:
        raise ValueError(
            f"Hypnogram extends to {scored_end:g} s but recording lasts "
            f"{recording.duration_s:g} s"
        )

    n_total = len(recording.samples)
    epochs: list[SleepEpoch] = []
    for interval, label in scored:
        if label is None:
            continue
        start = int(round(interval.onset_s * SAMPLE_RATE_HZ))
        for i in range(int(interval.duration_s // EPOCH_SECONDS)):
            begin = start + i * EPOCH_SAMPLES
            end = begin + EPOCH_SAMPLES
            if end > n_total:
                break
            epochs.append(
                SleepEpoch(
                    subject_id=recording.subject_id,
                    values=recording.samples[begin:end].astype(np.float32),
                    label=label,
                )
            )
    return epochs


def trim_wake(epochs: Sequence[SleepEpoch], minutes: int) -> list[SleepEpoch]:
    """
    Keep only `minutes` of wake before the first and after the last sleep epoch.

    Expects the epochs of one recording in time order. Recordings without any
    sleep epoch are returned unchanged.
    """
    sleep = [i for i, e in enumerate(epochs) if e.label not in (None, 0)]
    if not sleep:
        return list(epochs)
    margin = minutes * 60 // EPOCH_SECONDS
    first = max(0, sleep[0] - margin)
    last = min(len(epochs), sleep[-1] + margin + 1)
    return list(epochs[first:last])


def make_split(
    subject_ids: Sequence[str],
    seed: int,
    n_pretext: int = 58,
    n_eval: int = 20,
    pretext_fraction: float = 1.0,
) -> SplitPlan:
    """Shuffle subjects under `seed`; the first n_pretext go to pretext, the next n_eval to eval."""
    unique = sorted(set(subject_ids))
    if len(unique) < n_pretext + n_eval:
        raise ValueError(
            f"Need {n_pretext + n_eval} subjects ({n_pretext} pretext + {n_eval} eval), "
            f"found {len(unique)}"
        )
    order = np.random.default_rng(seed).permutation(len(unique))
    shuffled = [unique[i] for i in order]
    return SplitPlan(
        pretext_subjects=tuple(shuffled[:n_pretext]),
        eval_subjects=tuple(shuffled[n_pretext : n_pretext + n_eval]),
        pretext_fraction=pretext_fraction,
        seed=seed,
    )


def subsample_indices(n: int, fraction: float, seed: int) -> np.ndarray:
    """Sorted indices of round(fraction * n) items drawn without replacement."""
    if n == 0:
        raise ValueError("Cannot subsample an empty pretext set")
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return np.arange(n)
    keep = int(np.floor(fraction * n + 0.5))
    chosen = np.random.default_rng(seed).choice(n, size=keep, replace=False)
    return np.sort(chosen)


def subsample_pretext(epochs: Sequence[T], fraction: float, seed: int) -> list[T]:
    """Seed-deterministic random subset of the pretext epochs, in original order."""
    return [epochs[i] for i in subsample_indices(len(epochs), fraction, seed)]


def kfold(eval_subjects: Sequence[str], k: int = 5, seed: int = 0) -> FoldAssignment:
    """Assign evaluation subjects to k folds whose sizes differ by at most one."""
    unique = sorted(set(eval_subjects))
    if k < 1 or k > len(unique):
        raise ValueError(f"Cannot build {k} folds from {len(unique)} subjects")
    order = np.random.default_rng(seed).permutation(len(unique))
    return FoldAssignment(
        k=k,
        fold_of_subject={unique[idx]: pos % k for pos, idx in enumerate(order)},
    )


def zscore_fit_apply(
    train_matrix: np.ndarray, *other_matrices: np.ndarray
) -> tuple[list[np.ndarray], ZScore]:
    """
    Standardize columns with training-fold statistics.

    Zero-variance columns keep a unit scale, so they come out centered.

    Returns:
        The normalized training matrix followed by the normalized held-out
        matrices, and the fitted transform.
    """
    train = np.asarray(train_matrix, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] == 0:
        raise ValueError("Training matrix must be a nonempty 2-D array")
    for other in other_matrices:
        other = np.asarray(other)
        if other.ndim != 2 or other.shape[1] != train.shape[1]:
            raise ValueError(
                f"Dimension mismatch: training has {train.shape[1]} columns, "
                f"held-out matrix has shape {other.shape}"
            )
    scaler = StandardScaler().fit(train)
    transform = ZScore(mean=scaler.mean_.copy(), std=scaler.scale_.copy())
    return [transform.apply(m) for m in (train, *other_matrices)], transform


def stack_epochs(
    epochs: Sequence[SleepEpoch],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (values [n, 3000] float32, labels [n] int64 with -1 unlabeled, subject ids [n])."""
    values = np.stack([e.values for e in epochs]).astype(np.float32, copy=False)
    labels = np.array(
        [-1 if e.label is None else e.label for e in epochs], dtype=np.int64
    )
    subjects = np.array([e.subject_id for e in epochs], dtype=object)
    return values, labels, subjects


def write_epoch_store(
    path: str | Path,
    epochs: Sequence[SleepEpoch],
    config_hash: str = "",
    seed: int | None = None,
) -> Path:
    """Write the binary epoch store and its CSV manifest next to it."""
    body = bytearray(struct.pack("<I", len(epochs)))
    for epoch in epochs:
        subject = epoch.subject_id.encode("utf-8")
        body += struct.pack("<H", len(subject)) + subject
        body += struct.pack("<B", UNLABELED if epoch.label is None else epoch.label)
        body += np.asarray(epoch.values, dtype="<f4").tobytes()

    output = write_artifact(
        path,
        STORE_MAGIC,
        {"config_hash": config_hash, "epoch_samples": EPOCH_SAMPLES, "seed": seed},
        bytes(body),
    )
    manifest_path(output).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        {
            "subject_id": [e.subject_id for e in epochs],
            "file": [e.source for e in epochs],
            "epoch_index": range(len(epochs)),
            "label": [UNLABELED if e.label is None else e.label for e in epochs],
        }
    ).to_csv(manifest_path(output), index=False)
    return output


def read_epoch_store(path: str | Path) -> tuple[list[SleepEpoch], dict]:
    """Read an epoch store; returns the epochs and the embedded metadata."""
    metadata, body = read_artifact(path, STORE_MAGIC)
    if metadata.get("epoch_samples") != EPOCH_SAMPLES:
        raise ValueError(
            f"Store holds {metadata.get('epoch_samples')}-sample epochs, "
            f"expected {EPOCH_SAMPLES}"
        )
    (count,) = struct.unpack_from("<I", body, 0)
    offset = 4
    epochs: list[SleepEpoch] = []
    try:
        for _ in range(count):
            (length,) = struct.unpack_from("<H", body, offset)
            offset += 2
            subject = bytes(body[offset : offset + length]).decode("utf-8")
            offset += length
            (label,) = struct.unpack_from("<B", body, offset)
            offset += 1
            values = np.frombuffer(body, dtype="<f4", count=EPOCH_SAMPLES, offset=offset)
            offset += EPOCH_SAMPLES * 4
            epochs.append(
                SleepEpoch(
                    subject_id=subject,
                    values=values.astype(np.float32),
                    label=None if label == UNLABELED else int(label),
                )
            )
    except (struct.error, ValueError) as e:
        raise ValueError(f"Truncated epoch store {path}: {e}") from e
    return epochs, metadata


def manifest_path(store_path: str | Path) -> Path:
    store = Path(store_path)
    return store.with_name(store.stem + "_manifest.csv")
