"""Synthetic data, CSV loading and stream builders."""

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import train_test_split

from continual.exceptions import DatasetParseError, DatasetValidationError, InputError
from continual.schemas import FileSource, StreamParams, SyntheticSpec
from continual.services.streams import (
    Dataset,
    build_dataset,
    build_stream,
    generate_synthetic,
    load_dataset,
    make_nc_stream,
    make_repetition_stream,
    read_samples,
)


@pytest.fixture
def reference_dataset():
    return generate_synthetic(SyntheticSpec(n_classes=10, samples_per_class=200, input_dim=20, seed=0))


def row_set(x):
    return {tuple(row) for row in np.round(x, 12)}


# --- synthetic data ---
def test_split_arithmetic(reference_dataset):
    assert reference_dataset.x_train.shape == (1600, 20)
    assert reference_dataset.x_test.shape == (400, 20)
    assert np.bincount(reference_dataset.y_test).tolist() == [40] * 10


def test_same_seed_same_dataset():
    spec = SyntheticSpec(n_classes=4, samples_per_class=30, input_dim=5, seed=12)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    np.testing.assert_array_equal(a.x_train, b.x_train)
    np.testing.assert_array_equal(a.y_test, b.y_test)


def test_low_noise_is_linearly_separable():
    data = generate_synthetic(SyntheticSpec(n_classes=5, samples_per_class=50, input_dim=10, noise_std=1e-3, seed=1))
    model = LogisticRegression(max_iter=2000).fit(data.x_train, data.y_train)
    assert model.score(data.x_test, data.y_test) == 1.0


def test_no_test_leakage(reference_dataset):
    assert not row_set(reference_dataset.x_train) & row_set(reference_dataset.x_test)


# --- class-incremental ---
def test_nc_stream_partitions_classes(reference_dataset):
    stream = make_nc_stream(reference_dataset, classes_per_experience=2, seed=0)
    assert len(stream) == 5
    classes = [set(e.classes) for e in stream]
    assert set().union(*classes) == set(range(10))
    assert sum(len(c) for c in classes) == 10
    for experience in stream:
        assert set(np.unique(experience.y_train)) == set(experience.classes)
        assert set(np.unique(experience.y_test)) == set(experience.classes)
        assert experience.task_label is None


def test_nc_stream_conserves_samples(reference_dataset):
    stream = make_nc_stream(reference_dataset, classes_per_experience=3, seed=1)
    assert [len(e.classes) for e in stream] == [3, 3, 3, 1]
    union = np.concatenate([e.x_train for e in stream])
    assert union.shape[0] == reference_dataset.x_train.shape[0]
    assert row_set(union) == row_set(reference_dataset.x_train)


def test_single_experience_stream(reference_dataset):
    stream = make_nc_stream(reference_dataset, classes_per_experience=10, seed=0)
    assert len(stream) == 1
    assert stream.experiences[0].classes == tuple(range(10))


def test_ten_per_experience_over_hundred_classes():
    data = generate_synthetic(SyntheticSpec(n_classes=100, samples_per_class=5, input_dim=3, seed=0))
    assert len(make_nc_stream(data, classes_per_experience=10, seed=0)) == 10


def test_nc_stream_rejects_oversized_groups(reference_dataset):
    with pytest.raises(InputError):
        make_nc_stream(reference_dataset, classes_per_experience=11, seed=0)


def test_stream_is_deterministic(reference_dataset):
    a = make_nc_stream(reference_dataset, 2, seed=5)
    b = make_nc_stream(reference_dataset, 2, seed=5)
    assert [e.classes for e in a] == [e.classes for e in b]
    np.testing.assert_array_equal(a.experiences[2].x_train, b.experiences[2].x_train)


# --- repetition ---
def test_full_new_fraction_is_class_incremental(reference_dataset):
    stream = make_repetition_stream(reference_dataset, n_experiences=5, new_class_fraction=1.0, seed=0)
    classes = [set(e.classes) for e in stream]
    assert sum(len(c) for c in classes) == 10
    assert set().union(*classes) == set(range(10))


def test_repetition_revisits_classes(reference_dataset):
    stream = make_repetition_stream(reference_dataset, n_experiences=8, new_class_fraction=0.5, seed=0)
    appearances = np.bincount(np.concatenate([e.classes for e in stream]), minlength=10)
    assert appearances.max() >= 2
    assert stream.protocol == "repetition"


def test_repetition_conserves_samples(reference_dataset):
    stream = make_repetition_stream(reference_dataset, n_experiences=5, new_class_fraction=0.5, seed=3)
    union = np.concatenate([e.x_train for e in stream])
    assert union.shape[0] == reference_dataset.x_train.shape[0]
    assert row_set(union) == row_set(reference_dataset.x_train)


def test_later_experiences_mix_old_and_new(reference_dataset):
    stream = make_repetition_stream(reference_dataset, n_experiences=5, new_class_fraction=0.5, seed=3)
    seen = set(stream.experiences[0].classes)
    for experience in stream.experiences[1:]:
        classes = set(experience.classes)
        assert classes & seen and classes - seen
        seen |= classes


def test_repetition_needs_two_experiences(reference_dataset):
    with pytest.raises(InputError):
        make_repetition_stream(reference_dataset, n_experiences=1, new_class_fraction=0.5, seed=0)


def test_repetition_needs_enough_samples():
    tiny = Dataset(
        x_train=np.array([[0.0], [1.0]]),
        y_train=np.array([0, 1]),
        x_test=np.array([[0.5], [0.6]]),
        y_test=np.array([0, 1]),
        n_classes=2,
    )
    with pytest.raises(InputError):
        make_repetition_stream(tiny, n_experiences=2, new_class_fraction=0.5, seed=0)


def test_build_stream_dispatches_on_protocol(reference_dataset):
    stream = build_stream(reference_dataset, StreamParams(protocol="repetition", n_experiences=4), seed=0)
    assert len(stream) == 4
    manifest = stream.manifest()
    assert manifest["protocol"] == "repetition"
    assert sum(e["train_samples"] for e in manifest["experiences"]) == 1600


# --- CSV ---
def write(path, text):
    path.write_text(text)
    return path


def test_csv_rows_become_samples(tmp_path):
    path = write(tmp_path / "data.csv", "f0,f1,label\n1.0,10,0\n2.0,20,1\n3.0,40,2\n")
    x, y = read_samples(path, n_classes=3)
    assert x.shape == (3, 2)
    assert y.tolist() == [0, 1, 2]
    np.testing.assert_array_equal(x[:, 1], [10.0, 20.0, 40.0])


def test_empty_file_is_a_parse_error(tmp_path):
    with pytest.raises(DatasetParseError, match="line 1"):
        read_samples(write(tmp_path / "empty.csv", ""))


def test_header_only_is_a_parse_error(tmp_path):
    with pytest.raises(DatasetParseError):
        read_samples(write(tmp_path / "header.csv", "f0,label\n"))


def test_bad_value_reports_its_line(tmp_path):
    path = write(tmp_path / "bad.csv", "f0,f1,label\n1,2,0\n1,oops,1\n")
    with pytest.raises(DatasetParseError, match="line 3") as info:
        read_samples(path)
    assert info.value.line == 3


def test_label_outside_class_count_is_rejected(tmp_path):
    path = write(tmp_path / "labels.csv", "f0,label\n0.1,0\n0.2,5\n")
    with pytest.raises(DatasetValidationError):
        read_samples(path, n_classes=3)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_samples(tmp_path / "nope.csv")


def test_file_source_builds_split_dataset(tmp_path):
    rows = "\n".join(f"{i * 0.1},{(i * 7) % 5},{i % 2}" for i in range(40))
    path = write(tmp_path / "data.csv", "a,b,label\n" + rows + "\n")
    dataset = build_dataset(FileSource(path=path, n_classes=2, test_fraction=0.25, seed=1))
    assert dataset.x_train.shape == (30, 2) and dataset.x_test.shape == (10, 2)
    assert dataset.n_classes == 2
    inferred = load_dataset(path)
    assert inferred.n_classes == 2


def test_scaler_bounds_come_from_train_split(tmp_path):
    rows = "\n".join(f"{i * 0.1},{(i * 7) % 5},{i % 2}" for i in range(40))
    path = write(tmp_path / "data.csv", "a,b,label\n" + rows + "\n")
    dataset = load_dataset(path, n_classes=2, test_fraction=0.25, seed=1)
    x, y = read_samples(path, n_classes=2)
    x_train, x_test, _, _ = train_test_split(x, y, test_size=0.25, random_state=1, stratify=y)
    low, high = x_train.min(axis=0), x_train.max(axis=0)
    np.testing.assert_allclose(dataset.x_train.min(axis=0), 0.0)
    np.testing.assert_allclose(dataset.x_train.max(axis=0), 1.0)
    np.testing.assert_allclose(dataset.x_test, (x_test - low) / (high - low))
