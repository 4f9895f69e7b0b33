import numpy as np
import pytest

from mvsleep.epoching import write_epoch_store
from mvsleep.synth import synthesize


def _field(value, width: int) -> bytes:
    return str(value).ljust(width)[:width].encode("ascii")


def build_edf(
    signals: list[dict],
    num_records: int,
    record_duration_s: float = 1.0,
    reserved: str = "",
    patient_id: str = "S001 X X X",
    header_records: int | None = None,
) -> bytes:
    """
    Assemble EDF bytes.

    Each signal dict holds `label`, `samples_per_record`, `digital` (all
    records, concatenated) and optional `physical_min/max`, `digital_min/max`.
    """
    ns = len(signals)
    header = b"".join(
        [
            _field("0", 8),
            _field(patient_id, 80),
            _field("Startdate X", 80),
            _field("01.02.89", 8),
            _field("22.30.00", 8),
            _field(256 * (1 + ns), 8),
            _field(reserved, 44),
            _field(num_records if header_records is None else header_records, 8),
            _field(f"{record_duration_s:g}", 8),
            _field(ns, 4),
        ]
    )
    columns = [
        ("label", 16, "X"),
        ("transducer", 80, ""),
        ("physical_dim", 8, "uV"),
        ("physical_min", 8, -100),
        ("physical_max", 8, 100),
        ("digital_min", 8, -100),
        ("digital_max", 8, 100),
        ("prefiltering", 80, ""),
        ("samples_per_record", 8, 1),
        ("reserved", 32, ""),
    ]
    for name, width, default in columns:
        header += b"".join(_field(s.get(name, default), width) for s in signals)

    body = bytearray()
    for r in range(num_records):
        for s in signals:
            n = s["samples_per_record"]
            chunk = np.asarray(s["digital"][r * n : (r + 1) * n], dtype="<i2")
            body += chunk.tobytes()
    return header + bytes(body)


def build_psg(
    seconds: int,
    rate: int = 100,
    channels: tuple[str, ...] = ("EEG Fpz-Cz", "EEG Pz-Oz"),
    seed: int = 0,
) -> tuple[bytes, dict[str, np.ndarray]]:
    """A PSG file with 1 s records; returns the bytes and the digital samples per channel."""
    rng = np.random.default_rng(seed)
    digital = {c: rng.integers(-100, 101, size=seconds * rate) for c in channels}
    signals = [
        {"label": c, "samples_per_record": rate, "digital": digital[c]} for c in channels
    ]
    return build_edf(signals, num_records=seconds), digital


def tal(onset: float, duration: float | None, *texts: str) -> bytes:
    timing = f"+{onset:g}" + ("" if duration is None else f"\x15{duration:g}")
    return (timing + "\x14" + "".join(t + "\x14" for t in texts) + "\x00").encode("ascii")


def build_hypnogram(stages: list[tuple[float, float, str]]) -> bytes:
    """EDF+ file holding one annotation record with the given (onset, duration, text) TALs."""
    payload = tal(0, None, "") + b"".join(tal(o, d, t) for o, d, t in stages)
    if len(payload) % 2:
        payload += b"\x00"
    samples = len(payload) // 2
    digital = np.frombuffer(payload, dtype="<i2")
    return build_edf(
        [
            {
                "label": "EDF Annotations",
                "samples_per_record": samples,
                "digital": digital,
                "physical_min": -1,
                "physical_max": 1,
                "digital_min": -32768,
                "digital_max": 32767,
            }
        ],
        num_records=1,
        record_duration_s=30,
        reserved="EDF+C",
    )


@pytest.fixture
def output_dir(tmp_path):
    out = tmp_path / "output"
    out.mkdir()
    return out


@pytest.fixture
def edf_pair():
    """A 5-minute PSG and a hypnogram scoring W, N1, N2, N3 (raw 4) and REM."""
    psg, digital = build_psg(seconds=300)
    hypnogram = build_hypnogram(
        [
            (0, 60, "Sleep stage W"),
            (60, 60, "Sleep stage 1"),
            (120, 30, "Sleep stage 2"),
            (150, 30, "Movement time"),
            (180, 60, "Sleep stage 4"),
            (240, 60, "Sleep stage R"),
        ]
    )
    return psg, hypnogram, digital


@pytest.fixture
def synthetic_epochs():
    return synthesize(classes=5, per_class=8, subjects=5, seed=3)


@pytest.fixture
def tiny_store(output_dir, synthetic_epochs):
    return write_epoch_store(output_dir / "tiny.ssep", synthetic_epochs, "abc123", seed=3)
