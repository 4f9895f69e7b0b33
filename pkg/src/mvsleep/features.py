"""Feature matrices and the SSFT feature file."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import read_artifact, write_artifact
from .epoching import UNLABELED

FEATURE_MAGIC = b"SSFT"

VIEW_TAGS: dict[str, int] = {"time": 0, "spec": 1, "concat": 2, "raw": 3}
_TAG_VIEWS = {tag: view for view, tag in VIEW_TAGS.items()}


@dataclass(frozen=True)
class FeatureMatrix:
    """One feature row per epoch with its stage label (-1 when unlabeled) and subject."""

    values: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    view: str

    def __post_init__(self) -> None:
        if self.view not in VIEW_TAGS:
            raise ValueError(
                f"Unknown view '{self.view}'; expected one of {sorted(VIEW_TAGS)}"
            )
        if self.values.ndim != 2:
            raise ValueError(f"Features must be 2-D, got shape {self.values.shape}")
        rows = self.values.shape[0]
        if len(self.labels) != rows or len(self.subjects) != rows:
            raise ValueError(
                f"Row count mismatch: {rows} feature rows, {len(self.labels)} labels, "
                f"{len(self.subjects)} subjects"
            )

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def labeled(self) -> "FeatureMatrix":
        keep = self.labels >= 0
        return FeatureMatrix(
            self.values[keep], self.labels[keep], self.subjects[keep], self.view
        )

    def __len__(self) -> int:
        return self.values.shape[0]


def write_features(
    path: str | Path, features: FeatureMatrix, metadata: dict | None = None
) -> Path:
    """
    Body: rows u32, dim u32, view tag u8, then per row a label u8
    (255 unlabeled), a u16-prefixed subject id and dim float32 values.
    """
    meta = {"config_hash": "", **(metadata or {}), "dim": features.dim, "view": features.view}
    rows, dim = features.values.shape
    body = bytearray(struct.pack("<IIB", rows, dim, VIEW_TAGS[features.view]))
    values = np.asarray(features.values, dtype="<f4")
    for i in range(rows):
        label = int(features.labels[i])
        subject = str(features.subjects[i]).encode("utf-8")
        body += struct.pack("<B", UNLABELED if label < 0 else label)
        body += struct.pack("<H", len(subject)) + subject
        body += values[i].tobytes()
    return write_artifact(path, FEATURE_MAGIC, meta, bytes(body))


def read_features(path: str | Path) -> tuple[FeatureMatrix, dict]:
    metadata, body = read_artifact(path, FEATURE_MAGIC)
    try:
        rows, dim, tag = struct.unpack_from("<IIB", body, 0)
        if tag not in _TAG_VIEWS:
            raise ValueError(f"Unknown view tag {tag}")
        if metadata.get("dim", dim) != dim:
            raise ValueError(
                f"Metadata dim {metadata['dim']} disagrees with body dim {dim}"
            )
        offset = 9
        values = np.empty((rows, dim), dtype=np.float32)
        labels = np.empty(rows, dtype=np.int64)
        subjects = np.empty(rows, dtype=object)
        for i in range(rows):
            (label,) = struct.unpack_from("<B", body, offset)
            (length,) = struct.unpack_from("<H", body, offset + 1)
            offset += 3
            subjects[i] = bytes(body[offset : offset + length]).decode("utf-8")
            offset += length
            values[i] = np.frombuffer(body, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            labels[i] = -1 if label == UNLABELED else label
    except struct.error as e:
        raise ValueError(f"Truncated feature file {path}: {e}") from e
    return FeatureMatrix(values, labels, subjects, _TAG_VIEWS[tag]), metadata
