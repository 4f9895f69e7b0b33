import numpy as np
import pytest

from conftest import build_edf, build_hypnogram, build_psg, tal
from mvsleep.edf import (
    EdfFormatError,
    StageInterval,
    list_channels,
    map_stage,
    parse_edf,
    parse_hypnogram,
    parse_tals,
    read_edf_header,
)


def test_list_channels():
    psg, _ = build_psg(seconds=2)
    assert list_channels(psg) == ["EEG Fpz-Cz", "EEG Pz-Oz"]


def test_parse_edf_selects_and_calibrates_channel():
    """With matching physical and digital ranges the calibration is the identity."""
    psg, digital = build_psg(seconds=3)
    recording = parse_edf(psg, "EEG Pz-Oz")

    assert recording.sample_rate_hz == 100.0
    assert recording.duration_s == 3.0
    assert recording.subject_id == "S001"
    np.testing.assert_allclose(recording.samples, digital["EEG Pz-Oz"])


def test_parse_edf_gain_and_offset():
    data = build_edf(
        [
            {
                "label": "EEG Fpz-Cz",
                "samples_per_record": 2,
                "digital": [-2048, 2047],
                "physical_min": -10,
                "physical_max": 10,
                "digital_min": -2048,
                "digital_max": 2047,
            }
        ],
        num_records=1,
    )
    recording = parse_edf(data, subject_id="subject-7")
    np.testing.assert_allclose(recording.samples, [-10.0, 10.0])
    assert recording.subject_id == "subject-7"


def test_parse_edf_unknown_channel():
    psg, _ = build_psg(seconds=1)
    with pytest.raises(EdfFormatError, match="Unknown channel label"):
        parse_edf(psg, "EEG C3-A2")


def test_parse_edf_truncated_data():
    psg, _ = build_psg(seconds=4)
    with pytest.raises(EdfFormatError, match="truncated data section"):
        parse_edf(psg[:-10])


def test_header_size_mismatch():
    psg, _ = build_psg(seconds=1)
    corrupted = psg[:184] + b"999     " + psg[192:]
    with pytest.raises(EdfFormatError, match="header_bytes"):
        read_edf_header(corrupted)


def test_too_small_for_header():
    with pytest.raises(EdfFormatError, match="too small"):
        read_edf_header(b"0" * 100)


def test_unknown_record_count_is_inferred():
    """A record count of -1 is resolved from the file size."""
    rng = np.random.default_rng(1)
    digital = rng.integers(-100, 101, size=300)
    data = build_edf(
        [{"label": "EEG Fpz-Cz", "samples_per_record": 100, "digital": digital}],
        num_records=3,
        header_records=-1,
    )
    assert len(parse_edf(data).samples) == 300


def test_edf_plus_header():
    header, signals = read_edf_header(build_hypnogram([(0, 30, "Sleep stage W")]))
    assert header.is_edf_plus
    assert signals[0].label == "EDF Annotations"


def test_parse_tals():
    raw = tal(0, None, "") + tal(0, 30, "Sleep stage W") + tal(30, 60, "Sleep stage 3")
    assert parse_tals(raw) == [
        StageInterval(0.0, 30.0, "W"),
        StageInterval(30.0, 60.0, "3"),
    ]


def test_parse_tals_skips_other_annotations():
    raw = tal(10, 5, "Lights off") + tal(15, 30, "Sleep stage ?")
    assert parse_tals(raw) == [StageInterval(15.0, 30.0, "?")]


def test_parse_tals_missing_terminator():
    with pytest.raises(EdfFormatError, match="malformed annotation"):
        parse_tals(b"+0\x1530\x14Sleep stage W\x00")


def test_parse_tals_bad_onset():
    with pytest.raises(EdfFormatError, match="onset"):
        parse_tals(b"0\x1530\x14Sleep stage W\x14\x00")


def test_parse_hypnogram_sorts_by_onset():
    data = build_hypnogram(
        [(60, 30, "Sleep stage 2"), (0, 60, "Sleep stage W"), (90, 30, "Sleep stage R")]
    )
    intervals = parse_hypnogram(data)
    assert [iv.onset_s for iv in intervals] == [0.0, 60.0, 90.0]
    assert [iv.raw_label for iv in intervals] == ["W", "2", "R"]


def test_parse_hypnogram_requires_annotation_signal():
    psg, _ = build_psg(seconds=1)
    with pytest.raises(EdfFormatError, match="EDF Annotations"):
        parse_hypnogram(psg)


@pytest.mark.parametrize(
    "raw, expected",
    [("W", 0), ("1", 1), ("2", 2), ("3", 3), ("4", 3), ("R", 4), ("M", None), ("?", None)],
)
def test_map_stage(raw, expected):
    assert map_stage(raw) == expected


def test_map_stage_unknown():
    with pytest.raises(ValueError, match="Unknown stage label"):
        map_stage("N5")


def _single_channel(digital, **ranges):
    signal = {"label": "EEG Fpz-Cz", "samples_per_record": len(digital), "digital": digital}
    return build_edf([{**signal, **ranges}], num_records=1)


SLEEP_EDF_RANGES = {
    "physical_min": -200,
    "physical_max": 200,
    "digital_min": -2048,
    "digital_max": 2047,
}


def test_calibration_of_zero_and_one_step():
    recording = parse_edf(_single_channel([0, 1], **SLEEP_EDF_RANGES))

    assert recording.samples[0] == pytest.approx(-200 + 2048 * 400 / 4095, abs=1e-12)
    assert recording.samples[1] - recording.samples[0] == pytest.approx(400 / 4095, abs=1e-12)


def test_equal_digital_range_is_rejected():
    data = _single_channel([5, 5], digital_min=5, digital_max=5)
    with pytest.raises(EdfFormatError, match="digital_min"):
        parse_edf(data)


def test_write_then_parse_round_trip():
    """Physical samples survive digitization up to half a digital step."""
    gain = 400 / 4095
    physical = np.random.default_rng(4).uniform(-200, 200, size=300)
    digital = np.rint((physical + 200) / gain - 2048).astype(int)

    parsed = parse_edf(_single_channel(digital.tolist(), **SLEEP_EDF_RANGES)).samples
    assert np.abs(parsed - physical).max() <= gain / 2 + 1e-9

    redigitized = np.rint((parsed + 200) / gain - 2048).astype(int)
    np.testing.assert_array_equal(redigitized, digital)
    again = parse_edf(_single_channel(redigitized.tolist(), **SLEEP_EDF_RANGES)).samples
    np.testing.assert_array_equal(again, parsed)
