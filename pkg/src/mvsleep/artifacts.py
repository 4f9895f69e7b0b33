"""Shared framing for binary artifacts: magic, version, JSON metadata, body."""

import json
import struct
from pathlib import Path
from typing import Any

FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")


def pack_artifact(magic: bytes, metadata: dict[str, Any], body: bytes) -> bytes:
    """Frame a body with its magic bytes and sorted-key JSON metadata."""
    if len(magic) != 4:
        raise ValueError(f"Magic must be 4 bytes, got {magic!r}")
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(magic, FORMAT_VERSION, len(meta)) + meta + body


def unpack_artifact(data: bytes, magic: bytes) -> tuple[dict[str, Any], memoryview]:
    """Validate the prefix and return (metadata, body)."""
    if len(data) < _PREFIX.size:
        raise ValueError("Artifact too small to hold a header")
    found, version, meta_len = _PREFIX.unpack_from(data, 0)
    if found != magic:
        raise ValueError(f"Bad magic: expected {magic!r}, found {found!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"Unsupported {magic.decode()} version {version}")
    start = _PREFIX.size
    if len(data) < start + meta_len:
        raise ValueError("Truncated artifact metadata")
    metadata = json.loads(bytes(data[start : start + meta_len]).decode("utf-8"))
    return metadata, memoryview(data)[start + meta_len :]


def write_artifact(
    path: str | Path, magic: bytes, metadata: dict[str, Any], body: bytes
) -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_bytes(pack_artifact(magic, metadata, body))
    return output


def read_artifact(path: str | Path, magic: bytes) -> tuple[dict[str, Any], memoryview]:
    source = Path(path)
    if not source.exists():
        raise FileNotFoundError(f"Artifact not found: {source}")
    return unpack_artifact(source.read_bytes(), magic)
