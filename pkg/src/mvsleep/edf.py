"""EDF/EDF+ parsing for polysomnography recordings and hypnogram annotations."""

import re
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

HEADER_SIZE = 256
DEFAULT_CHANNEL = "EEG Fpz-Cz"
ANNOTATION_LABEL = "EDF Annotations"

# Per-signal header arrays, in file order: (name, width in bytes)
_SIGNAL_FIELDS: tuple[tuple[str, int], ...] = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dim", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)

RAW_LABELS: tuple[str, ...] = ("W", "R", "1", "2", "3", "4", "M", "?")

# W, N1, N2, N3, REM; raw '3' and '4' merge into N3
_STAGE_TO_CLASS: dict[str, int | None] = {
    "W": 0,
    "1": 1,
    "2": 2,
    "3": 3,
    "4": 3,
    "R": 4,
    "M": None,
    "?": None,
}

CLASS_NAMES: tuple[str, ...] = ("W", "N1", "N2", "N3", "REM")

_ANNOTATION_TEXT_TO_LABEL: dict[str, str] = {
    "Sleep stage W": "W",
    "Sleep stage 1": "1",
    "Sleep stage 2": "2",
    "Sleep stage 3": "3",
    "Sleep stage 4": "4",
    "Sleep stage R": "R",
    "Sleep stage ?": "?",
    "Movement time": "M",
}

_ONSET_PATTERN = re.compile(r"^[+-]\d+(\.\d*)?$")
_DURATION_PATTERN = re.compile(r"^-?\d+(\.\d*)?$")


class EdfFormatError(ValueError):
    """Raised when EDF bytes or annotation TALs are malformed."""


@dataclass(frozen=True)
class EdfHeader:
    """Main 256-byte EDF header."""

    version: str
    patient_id: str
    recording_id: str
    start_date: str
    start_time: str
    header_bytes: int
    reserved: str
    num_records: int
    record_duration_s: float
    num_signals: int

    @property
    def is_edf_plus(self) -> bool:
        return self.reserved.startswith("EDF+")


@dataclass(frozen=True)
class SignalSpec:
    """Per-signal header entry."""

    label: str
    physical_dim: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int

    def validate(self) -> None:
        """Check the calibration invariants for this signal."""
        if self.digital_min >= self.digital_max:
            raise EdfFormatError(
                f"Signal '{self.label}': digital_min ({self.digital_min}) must be "
                f"less than digital_max ({self.digital_max})"
            )
        if self.physical_min == self.physical_max:
            raise EdfFormatError(
                f"Signal '{self.label}': physical_min equals physical_max"
            )
        if self.samples_per_record < 1:
            raise EdfFormatError(
                f"Signal '{self.label}': samples_per_record must be >= 1"
            )

    @property
    def gain(self) -> float:
        """Physical units per digital step."""
        return (self.physical_max - self.physical_min) / (
            self.digital_max - self.digital_min
        )

    def calibrate(self, digital: np.ndarray) -> np.ndarray:
        """Map digital samples to physical units."""
        offset = digital.astype(np.float64) - self.digital_min
        return self.physical_min + offset * self.gain


@dataclass(frozen=True)
class Recording:
    """One calibrated EEG channel of a PSG file."""

    subject_id: str
    channel: str
    sample_rate_hz: float
    samples: np.ndarray
    start_epoch_time: float

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class StageInterval:
    """A hypnogram interval with its raw stage label."""

    onset_s: float
    duration_s: float
    raw_label: str


def _text(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").strip()


def _int(raw: bytes, name: str) -> int:
    text = _text(raw)
    try:
        return int(text)
    except ValueError:
        # Some writers emit integral fields as "100.0"
        try:
            value = float(text)
        except ValueError as e:
            raise EdfFormatError(
                f"Non-numeric header field '{name}': {text!r}"
            ) from e
        if not value.is_integer():
            raise EdfFormatError(f"Non-integer header field '{name}': {text!r}")
        return int(value)


def _float(raw: bytes, name: str) -> float:
    text = _text(raw)
    try:
        return float(text)
    except ValueError as e:
        raise EdfFormatError(f"Non-numeric header field '{name}': {text!r}") from e


def read_edf_header(data: bytes) -> tuple[EdfHeader, list[SignalSpec]]:
    """
    Parse the main header and per-signal headers of an EDF/EDF+ file.

    Args:
        data: Raw file bytes (at least the full header section).

    Returns:
        The main header and one SignalSpec per signal, in file order.
    """
    if len(data) < HEADER_SIZE:
        raise EdfFormatError(
            f"File too small for an EDF header ({len(data)} < {HEADER_SIZE} bytes)"
        )

    header = EdfHeader(
        version=_text(data[0:8]),
        patient_id=_text(data[8:88]),
        recording_id=_text(data[88:168]),
        start_date=_text(data[168:176]),
        start_time=_text(data[176:184]),
        header_bytes=_int(data[184:192], "header_bytes"),
        reserved=_text(data[192:236]),
        num_records=_int(data[236:244], "num_records"),
        record_duration_s=_float(data[244:252], "record_duration_s"),
        num_signals=_int(data[252:256], "num_signals"),
    )

    ns = header.num_signals
    if ns < 1:
        raise EdfFormatError(f"num_signals must be >= 1, got {ns}")
    if header.header_bytes != HEADER_SIZE * (1 + ns):
        raise EdfFormatError(
            f"header_bytes ({header.header_bytes}) does not match "
            f"256 + 256 * num_signals ({HEADER_SIZE * (1 + ns)})"
        )
    if header.record_duration_s <= 0:
        raise EdfFormatError(
            f"record_duration_s must be positive, got {header.record_duration_s}"
        )
    if len(data) < header.header_bytes:
        raise EdfFormatError("Truncated signal header section")

    columns: dict[str, list[bytes]] = {}
    offset = HEADER_SIZE
    for name, width in _SIGNAL_FIELDS:
        columns[name] = [
            data[offset + i * width : offset + (i + 1) * width] for i in range(ns)
        ]
        offset += width * ns

    signals = [
        SignalSpec(
            label=_text(columns["label"][i]),
            physical_dim=_text(columns["physical_dim"][i]),
            physical_min=_float(columns["physical_min"][i], "physical_min"),
            physical_max=_float(columns["physical_max"][i], "physical_max"),
            digital_min=_int(columns["digital_min"][i], "digital_min"),
            digital_max=_int(columns["digital_max"][i], "digital_max"),
            samples_per_record=_int(
                columns["samples_per_record"][i], "samples_per_record"
            ),
        )
        for i in range(ns)
    ]
    return header, signals


def list_channels(data: bytes) -> list[str]:
    """Return the signal labels of an EDF file."""
    _header, signals = read_edf_header(data)
    return [s.label for s in signals]


def _data_records(
    data: bytes, header: EdfHeader, signals: list[SignalSpec]
) -> np.ndarray:
    """Return the data section as an int16 array of shape (num_records, samples per record)."""
    record_samples = sum(s.samples_per_record for s in signals)
    available = len(data) - header.header_bytes
    num_records = header.num_records
    if num_records < 0:
        # -1 is written while recording is in progress
        num_records = available // (2 * record_samples)
    if available < num_records * record_samples * 2:
        raise EdfFormatError(
            f"truncated data section: header promises {num_records} records "
            f"({num_records * record_samples * 2} bytes), found {available} bytes"
        )
    flat = np.frombuffer(
        data,
        dtype="<i2",
        count=num_records * record_samples,
        offset=header.header_bytes,
    )
    return flat.reshape(num_records, record_samples)


def _signal_offset(signals: list[SignalSpec], index: int) -> int:
    return sum(s.samples_per_record for s in signals[:index])


def _start_epoch_time(header: EdfHeader) -> float:
    try:
        day, month, yy = (int(part) for part in header.start_date.split("."))
        hour, minute, second = (int(part) for part in header.start_time.split("."))
        # EDF clipping date: 85-99 are 1900s, 00-84 are 2000s
        year = 1900 + yy if yy >= 85 else 2000 + yy
        start = datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)
    except ValueError as e:
        raise EdfFormatError(
            f"Unparseable start date/time: {header.start_date!r} {header.start_time!r}"
        ) from e
    return start.timestamp()


def parse_edf(
    data: bytes, channel: str = DEFAULT_CHANNEL, subject_id: str | None = None
) -> Recording:
    """
    Decode one channel of an EDF file into calibrated physical samples.

    Args:
        data: Raw EDF bytes.
        channel: Signal label to extract.
        subject_id: Identifier to attach; defaults to the first token of the
            patient field.

    Returns:
        The selected channel as a Recording.
    """
    header, signals = read_edf_header(data)
    labels = [s.label for s in signals]
    if channel not in labels:
        raise EdfFormatError(
            f"Unknown channel label '{channel}'. Available channels: {labels}"
        )
    index = labels.index(channel)
    spec = signals[index]
    spec.validate()

    records = _data_records(data, header, signals)
    start = _signal_offset(signals, index)
    digital = records[:, start : start + spec.samples_per_record].ravel()

    if subject_id is None:
        subject_id = header.patient_id.split(" ")[0] if header.patient_id else ""

    return Recording(
        subject_id=subject_id,
        channel=channel,
        sample_rate_hz=spec.samples_per_record / header.record_duration_s,
        samples=spec.calibrate(digital),
        start_epoch_time=_start_epoch_time(header),
    )


def parse_tals(raw: bytes) -> list[StageInterval]:
    """
    Parse the TAL byte stream of one annotation record into stage intervals.

    Each TAL reads ``onset[0x15 duration]0x14 text 0x14 ... 0x00``. Texts that
    are not sleep-stage or movement annotations are skipped, as is the empty
    timekeeping text.
    """
    intervals: list[StageInterval] = []
    for chunk in raw.rstrip(b"\x00").split(b"\x00"):
        if not chunk:
            continue
        if not chunk.endswith(b"\x14"):
            raise EdfFormatError(f"malformed annotation: {chunk!r}")
        timing, *texts = chunk[:-1].split(b"\x14")
        onset_raw, _, duration_raw = timing.partition(b"\x15")
        onset_text = onset_raw.decode("ascii", errors="replace")
        if not _ONSET_PATTERN.match(onset_text):
            raise EdfFormatError(f"Unparseable annotation onset: {onset_text!r}")
        onset = float(onset_text)

        duration = 0.0
        if duration_raw:
            duration_text = duration_raw.decode("ascii", errors="replace")
            if not _DURATION_PATTERN.match(duration_text):
                raise EdfFormatError(
                    f"malformed annotation duration: {duration_text!r}"
                )
            duration = float(duration_text)
            if duration < 0:
                raise EdfFormatError(f"Negative annotation duration: {duration}")

        for text in texts:
            label = _ANNOTATION_TEXT_TO_LABEL.get(
                text.decode("utf-8", errors="replace").strip()
            )
            if label is not None:
                intervals.append(StageInterval(onset, duration, label))
    return intervals


def parse_hypnogram(data: bytes) -> list[StageInterval]:
    """
    Extract stage intervals from an EDF+ hypnogram file.

    Returns:
        Intervals sorted by onset (stable for equal onsets).
    """
    header, signals = read_edf_header(data)
    annotation_indices = [
        i for i, s in enumerate(signals) if s.label == ANNOTATION_LABEL
    ]
    if not annotation_indices:
        raise EdfFormatError(f"No '{ANNOTATION_LABEL}' signal in hypnogram file")

    records = _data_records(data, header, signals)
    intervals: list[StageInterval] = []
    for record in records:
        for index in annotation_indices:
            start = _signal_offset(signals, index)
            raw = record[start : start + signals[index].samples_per_record]
            intervals.extend(parse_tals(raw.astype("<i2").tobytes()))
    return sorted(intervals, key=lambda interval: interval.onset_s)


def map_stage(raw_label: str) -> int | None:
    """
    Map a raw hypnogram label to a class id.

    Returns:
        0..4 for W, N1, N2, N3, REM; None for excluded labels (M, ?).
    """
    try:
        return _STAGE_TO_CLASS[raw_label]
    except KeyError as e:
        raise ValueError(
            f"Unknown stage label {raw_label!r}; expected one of {list(RAW_LABELS)}"
        ) from e
