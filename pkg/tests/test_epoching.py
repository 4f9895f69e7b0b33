import numpy as np
import pandas as pd
import pytest

from mvsleep.edf import Recording, StageInterval, parse_edf, parse_hypnogram
from mvsleep.epoching import (
    EPOCH_SAMPLES,
    DataConfig,
    SleepEpoch,
    kfold,
    make_split,
    manifest_path,
    read_epoch_store,
    segment_epochs,
    stack_epochs,
    subsample_indices,
    subsample_pretext,
    trim_wake,
    write_epoch_store,
    zscore_fit_apply,
)


def _recording(seconds: float, rate: float = 100.0) -> Recording:
    samples = np.arange(int(seconds * rate), dtype=np.float64)
    return Recording("S1", "EEG Fpz-Cz", rate, samples, 0.0)


def _epoch(label, subject="S1", value=0.0):
    return SleepEpoch(subject, np.full(EPOCH_SAMPLES, value, dtype=np.float32), label)


def test_segment_epochs_from_edf(edf_pair):
    psg, hypnogram, digital = edf_pair
    epochs = segment_epochs(parse_edf(psg), parse_hypnogram(hypnogram))

    assert [e.label for e in epochs] == [0, 0, 1, 1, 2, 3, 3, 4, 4]
    np.testing.assert_allclose(epochs[0].values, digital["EEG Fpz-Cz"][:EPOCH_SAMPLES])
    # The N3 interval starts at 180 s, after the dropped movement epoch
    np.testing.assert_allclose(
        epochs[5].values, digital["EEG Fpz-Cz"][18000 : 18000 + EPOCH_SAMPLES]
    )


def test_segment_drops_trailing_partial_window():
    epochs = segment_epochs(_recording(120), [StageInterval(0, 75, "W")])
    assert len(epochs) == 2
    assert epochs[1].values[0] == EPOCH_SAMPLES


def test_segment_rejects_other_sample_rates():
    with pytest.raises(ValueError, match="resampling"):
        segment_epochs(_recording(60, rate=200.0), [StageInterval(0, 30, "W")])


def test_segment_hypnogram_longer_than_recording():
    with pytest.raises(ValueError, match="Hypnogram extends"):
        segment_epochs(_recording(300), [StageInterval(0, 400, "2")])


def test_segment_ignores_unscored_tail():
    """Unscored '?' intervals beyond the recording do not trigger the length check."""
    epochs = segment_epochs(
        _recording(60), [StageInterval(0, 60, "W"), StageInterval(60, 600, "?")]
    )
    assert [e.label for e in epochs] == [0, 0]


def test_sleep_epoch_validation():
    with pytest.raises(ValueError, match="3000 values"):
        SleepEpoch("S1", np.zeros(10), 0)
    with pytest.raises(ValueError, match="Label"):
        SleepEpoch("S1", np.zeros(EPOCH_SAMPLES), 5)


def test_trim_wake():
    labels = [0] * 10 + [2, 2, 3] + [0] * 10
    epochs = [_epoch(label) for label in labels]

    trimmed = trim_wake(epochs, minutes=1)

    assert [e.label for e in trimmed] == [0, 0, 2, 2, 3, 0, 0]


def test_trim_wake_without_sleep_keeps_recording():
    epochs = [_epoch(0) for _ in range(4)]
    assert len(trim_wake(epochs, minutes=0)) == 4


def test_make_split_is_disjoint_and_deterministic():
    subjects = [f"S{i:02d}" for i in range(80)]
    split = make_split(subjects, seed=4)

    assert len(split.pretext_subjects) == 58
    assert len(split.eval_subjects) == 20
    assert not set(split.pretext_subjects) & set(split.eval_subjects)
    assert make_split(subjects, seed=4) == split
    assert make_split(subjects, seed=5) != split


def test_make_split_needs_enough_subjects():
    with pytest.raises(ValueError, match="Need 78 subjects"):
        make_split([f"S{i}" for i in range(10)], seed=0)


@pytest.mark.parametrize("fraction, expected", [(0.01, 1), (0.05, 5), (0.2, 20), (1.0, 100)])
def test_subsample_indices_sizes(fraction, expected):
    indices = subsample_indices(100, fraction, seed=0)
    assert len(indices) == expected
    assert np.all(np.diff(indices) > 0)


def test_subsample_is_seed_deterministic():
    a = subsample_indices(1000, 0.1, seed=7)
    np.testing.assert_array_equal(a, subsample_indices(1000, 0.1, seed=7))
    assert not np.array_equal(a, subsample_indices(1000, 0.1, seed=8))


def test_subsample_rejects_bad_input():
    with pytest.raises(ValueError, match="empty"):
        subsample_indices(0, 0.5, seed=0)
    with pytest.raises(ValueError, match="fraction"):
        subsample_pretext([1, 2, 3], 0.0, seed=0)


def test_kfold_balanced_partition():
    subjects = [f"S{i:02d}" for i in range(20)]
    folds = kfold(subjects, k=5, seed=1)

    assert [len(members) for members in folds.folds] == [4, 4, 4, 4, 4]
    assert sorted(s for members in folds.folds for s in members) == subjects


def test_kfold_uneven_sizes_differ_by_one():
    folds = kfold([f"S{i}" for i in range(7)], k=3, seed=0)
    sizes = sorted(len(m) for m in folds.folds)
    assert sizes == [2, 2, 3]


def test_fold_splits_are_subject_level():
    subjects = np.array(["a", "a", "b", "c", "c", "d"])
    folds = kfold(["a", "b", "c", "d"], k=2, seed=0)

    for train, test in folds.splits(subjects):
        assert not set(subjects[train]) & set(subjects[test])
        assert len(train) + len(test) == len(subjects)


def test_kfold_too_many_folds():
    with pytest.raises(ValueError, match="Cannot build 5 folds"):
        kfold(["a", "b"], k=5)


def test_zscore_uses_training_statistics():
    train = np.array([[1.0, 5.0], [3.0, 5.0]])
    test = np.array([[2.0, 7.0]])

    (train_z, test_z), transform = zscore_fit_apply(train, test)

    np.testing.assert_allclose(train_z[:, 0], [-1.0, 1.0])
    # Zero-variance column stays at unit scale
    np.testing.assert_allclose(train_z[:, 1], [0.0, 0.0])
    np.testing.assert_allclose(test_z, [[0.0, 2.0]])
    np.testing.assert_allclose(transform.mean, [2.0, 5.0])


def test_zscore_dimension_mismatch():
    with pytest.raises(ValueError, match="Dimension mismatch"):
        zscore_fit_apply(np.ones((3, 2)), np.ones((1, 3)))


def test_stack_epochs():
    values, labels, subjects = stack_epochs([_epoch(2, "A", 1.0), _epoch(None, "B")])
    assert values.shape == (2, EPOCH_SAMPLES)
    assert values.dtype == np.float32
    assert labels.tolist() == [2, -1]
    assert subjects.tolist() == ["A", "B"]


def test_epoch_store_round_trip(output_dir, synthetic_epochs):
    epochs = synthetic_epochs + [_epoch(None, "unlabeled")]
    path = write_epoch_store(output_dir / "store.ssep", epochs, "hash0", seed=1)

    restored, metadata = read_epoch_store(path)

    assert metadata["config_hash"] == "hash0"
    assert metadata["seed"] == 1
    assert len(restored) == len(epochs)
    assert [e.label for e in restored] == [e.label for e in epochs]
    assert [e.subject_id for e in restored] == [e.subject_id for e in epochs]
    np.testing.assert_array_equal(restored[3].values, epochs[3].values)

    manifest = pd.read_csv(manifest_path(path))
    assert list(manifest.columns) == ["subject_id", "file", "epoch_index", "label"]
    assert manifest["label"].iloc[-1] == 255


def test_epoch_store_bad_magic(output_dir):
    path = output_dir / "bogus.ssep"
    path.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(ValueError, match="Bad magic"):
        read_epoch_store(path)


def test_epoch_store_missing(output_dir):
    with pytest.raises(FileNotFoundError):
        read_epoch_store(output_dir / "absent.ssep")


def test_data_config_validation():
    with pytest.raises(ValueError, match="folds"):
        DataConfig(folds=0)
