from collections import Counter

import numpy as np
import pytest

from mvsleep.epoching import EPOCH_SAMPLES, SAMPLE_RATE_HZ
from mvsleep.synth import CLASS_FREQUENCIES_HZ, synthesize


def test_counts_and_subjects():
    epochs = synthesize(classes=5, per_class=8, subjects=5, seed=3)

    assert len(epochs) == 40
    assert Counter(e.label for e in epochs) == {c: 8 for c in range(5)}
    assert set(Counter(e.subject_id for e in epochs).values()) == {8}
    assert [e.subject_id for e in epochs] == sorted(e.subject_id for e in epochs)
    assert {e.source for e in epochs} == {"synthetic"}
    assert epochs[0].values.shape == (EPOCH_SAMPLES,)


def test_same_seed_same_data():
    a, b = synthesize(per_class=3, subjects=3, seed=9), synthesize(per_class=3, subjects=3, seed=9)
    for x, y in zip(a, b):
        assert x.subject_id == y.subject_id and x.label == y.label
        np.testing.assert_array_equal(x.values, y.values)
    c = synthesize(per_class=3, subjects=3, seed=10)
    assert not np.array_equal(a[0].values, c[0].values)


def test_class_mean_spectrum_peaks_near_center():
    epochs = synthesize(per_class=10, subjects=4, seed=0)
    freqs = np.fft.rfftfreq(EPOCH_SAMPLES, d=1 / SAMPLE_RATE_HZ)
    for label, center in enumerate(CLASS_FREQUENCIES_HZ):
        spectra = [np.abs(np.fft.rfft(e.values)) for e in epochs if e.label == label]
        peak = freqs[np.argmax(np.mean(spectra, axis=0))]
        assert abs(peak - center) <= 0.55


def test_fewer_classes():
    assert {e.label for e in synthesize(classes=2, per_class=2, subjects=1)} == {0, 1}


@pytest.mark.parametrize(
    "kwargs, match",
    [({"classes": 6}, "At most 5"), ({"per_class": 0}, "positive"), ({"noise": -1.0}, "noise")],
)
def test_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        synthesize(**kwargs)
