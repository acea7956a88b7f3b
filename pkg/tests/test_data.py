import numpy as np
import pytest

from hashguard.data import SyntheticDataset, generate_dataset, nearest_template_accuracy
from hashguard.errors import ConfigError, UsageError


def test_same_seed_bitwise_identical():
    a = generate_dataset(10, 600, seed=4)
    b = generate_dataset(10, 600, seed=4)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
    for name in a.splits:
        assert np.array_equal(a.splits[name], b.splits[name])


def test_different_seed_differs():
    a = generate_dataset(10, 600, seed=4)
    b = generate_dataset(10, 600, seed=5)
    assert not np.array_equal(a.images, b.images)


def test_splits_disjoint_and_cover(dataset):
    all_idx = np.concatenate(list(dataset.splits.values()))
    assert len(all_idx) == len(np.unique(all_idx)) == len(dataset.images)


def test_splits_cover_every_class(dataset):
    for name, idx in dataset.splits.items():
        assert set(dataset.labels[idx]) == set(range(dataset.num_classes))


def test_nearest_template_accuracy(dataset):
    assert nearest_template_accuracy(dataset) >= 0.99


def test_template_separation_exceeds_noise(dataset):
    temps = dataset.templates.reshape(dataset.num_classes, -1)
    d = np.sqrt(((temps[:, None] - temps[None, :]) ** 2).sum(-1))
    iu = np.triu_indices(dataset.num_classes, 1)
    noise_3sigma = 3.0 * dataset.noise_sigma * np.sqrt(dataset.input_dim)
    assert d[iu].min() > noise_3sigma


def test_values_in_unit_interval(dataset):
    assert dataset.images.min() >= 0.0
    assert dataset.images.max() <= 1.0


def test_too_few_samples_rejected():
    with pytest.raises(ConfigError):
        generate_dataset(10, 499, seed=0)
    with pytest.raises(ConfigError):
        generate_dataset(1, 1000, seed=0)


def test_unknown_split_rejected(dataset):
    with pytest.raises(UsageError):
        dataset.flat("nope")


def test_save_load_roundtrip(tmp_path, dataset):
    path = tmp_path / "ds.npz"
    dataset.save(path)
    loaded = SyntheticDataset.load(path)
    assert np.allclose(loaded.images, dataset.images, atol=1e-6)
    assert np.array_equal(loaded.labels, dataset.labels)
    assert loaded.seed == dataset.seed
    for name in dataset.splits:
        assert np.array_equal(loaded.splits[name], dataset.splits[name])
