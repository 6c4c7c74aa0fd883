import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedodkd.data import (
    Dataset,
    build_public_pool,
    dirichlet_partition,
    export_columnar,
    generate_synthetic,
    max_class_share,
    read_columnar,
    split_labeled_unlabeled,
)


def nearest_centroid_accuracy(train, test):
    cents = np.stack([train.inputs[train.labels == c].mean(0) for c in range(train.num_classes)])
    d = ((test.inputs[:, None, :] - cents[None]) ** 2).sum(-1)
    return float(np.mean(d.argmin(1) == test.labels))


def test_synthetic_shapes_and_balance():
    split = generate_synthetic(4, 6, 25, 3.0, seed=0, test_per_class=7)
    assert split.train.inputs.shape == (100, 6)
    assert split.test.inputs.shape == (28, 6)
    assert np.array_equal(np.bincount(split.train.labels), [25] * 4)
    assert np.array_equal(np.bincount(split.test.labels), [7] * 4)


@pytest.mark.parametrize("modes", [1, 3])
def test_synthetic_minimum_mean_distance(modes):
    means = generate_synthetic(5, 8, 10, 4.0, seed=3, modes_per_class=modes).means
    d = np.sqrt(((means[:, None] - means[None]) ** 2).sum(-1))
    assert means.shape == (5 * modes, 8)
    assert d[np.triu_indices(len(means), 1)].min() == pytest.approx(4.0, rel=1e-12)


def test_well_separated_blobs_are_easy():
    split = generate_synthetic(10, 10, 100, 10.0, seed=1)
    assert nearest_centroid_accuracy(split.train, split.test) > 0.95


def test_synthetic_deterministic():
    a = generate_synthetic(3, 4, 10, 2.0, seed=11)
    b = generate_synthetic(3, 4, 10, 2.0, seed=11)
    assert a.train.inputs.tobytes() == b.train.inputs.tobytes()
    assert a.test.inputs.tobytes() == b.test.inputs.tobytes()
    c = generate_synthetic(3, 4, 10, 2.0, seed=12)
    assert not np.array_equal(a.train.inputs, c.train.inputs)


def test_synthetic_rejects_bad_arguments():
    with pytest.raises(ValueError):
        generate_synthetic(0, 4, 10, 2.0, seed=0)
    with pytest.raises(ValueError):
        generate_synthetic(3, 4, 10, 0.0, seed=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.floats(0.05, 50.0), st.integers(0, 10_000))
def test_partition_conserves_samples(n_clients, alpha, seed):
    ds = generate_synthetic(4, 2, 15, 2.0, seed=0).train
    plan = dirichlet_partition(ds, n_clients, alpha, seed)
    assert sum(plan.sizes) == len(ds)
    joined = np.sort(np.concatenate(plan.assignments))
    assert np.array_equal(joined, np.arange(len(ds)))


def test_partition_single_client_gets_everything():
    ds = generate_synthetic(3, 2, 10, 2.0, seed=0).train
    plan = dirichlet_partition(ds, 1, 0.1, seed=4)
    assert np.array_equal(plan.assignments[0], np.arange(len(ds)))


def test_partition_respects_index_subset():
    ds = generate_synthetic(3, 2, 10, 2.0, seed=0).train
    keep = np.arange(0, len(ds), 2)
    plan = dirichlet_partition(ds, 5, 1.0, seed=0, indices=keep)
    assert np.array_equal(np.sort(np.concatenate(plan.assignments)), keep)


def test_partition_skew_grows_as_alpha_shrinks():
    ds = generate_synthetic(10, 2, 60, 2.0, seed=0).train
    skewed = [max_class_share(ds, dirichlet_partition(ds, 20, 0.1, s)).mean() for s in range(30)]
    flat = [max_class_share(ds, dirichlet_partition(ds, 20, 100.0, s)).mean() for s in range(30)]
    assert np.mean(skewed) > np.mean(flat)
    assert np.mean(skewed) > 0.6


def test_partition_deterministic_and_validated():
    ds = generate_synthetic(3, 2, 10, 2.0, seed=0).train
    a = dirichlet_partition(ds, 4, 0.5, seed=9)
    b = dirichlet_partition(ds, 4, 0.5, seed=9)
    assert all(np.array_equal(x, y) for x, y in zip(a.assignments, b.assignments))
    with pytest.raises(ValueError):
        dirichlet_partition(ds, 0, 0.5, seed=0)
    with pytest.raises(ValueError):
        dirichlet_partition(ds, 3, -1.0, seed=0)


@pytest.mark.parametrize("n, frac, n_unl", [(10, 0.5, 5), (7, 0.5, 4), (5, 0.0, 0), (5, 1.0, 5), (1, 0.5, 1), (0, 0.5, 0)])
def test_labeled_unlabeled_split_counts(n, frac, n_unl):
    ds = generate_synthetic(2, 3, 10, 2.0, seed=0).train
    cd = split_labeled_unlabeled(ds, np.arange(n), frac, seed=1)
    assert len(cd.unlabeled) == n_unl
    assert len(cd.labeled) == n - n_unl
    assert cd.total == n
    assert not hasattr(cd.unlabeled, "labels")


def test_split_is_disjoint_and_exhaustive():
    ds = generate_synthetic(2, 3, 20, 2.0, seed=0).train
    idx = np.arange(3, 33)
    cd = split_labeled_unlabeled(ds, idx, 0.5, seed=2)
    rows = np.vstack([cd.labeled.inputs, cd.unlabeled.inputs])
    assert len({r.tobytes() for r in rows}) == idx.size
    assert {r.tobytes() for r in rows} == {r.tobytes() for r in ds.inputs[idx]}


def test_public_pool_is_disjoint_from_exclusions():
    ds = generate_synthetic(3, 2, 20, 2.0, seed=0).train
    exclude = np.arange(0, 30)
    pool, chosen = build_public_pool(ds, 15, labeled=False, seed=5, exclude=exclude)
    assert len(pool) == 15
    assert not set(chosen) & set(exclude)
    assert not hasattr(pool, "labels")
    labeled, _ = build_public_pool(ds, 15, labeled=True, seed=5, exclude=exclude)
    assert isinstance(labeled, Dataset)
    with pytest.raises(ValueError):
        build_public_pool(ds, 31, labeled=False, seed=0, exclude=exclude)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.array([0, 2]), 2)


def test_columnar_round_trip(tmp_path):
    ds = generate_synthetic(3, 4, 5, 2.0, seed=0).train
    export_columnar(tmp_path / "lab.csv", ds.inputs, ds.labels)
    inputs, labels = read_columnar(tmp_path / "lab.csv")
    assert inputs.tobytes() == ds.inputs.tobytes()
    assert labels == ds.labels.tolist()
    export_columnar(tmp_path / "unl.csv", ds.inputs[:4])
    _, labels = read_columnar(tmp_path / "unl.csv")
    assert labels == [None] * 4
    assert (tmp_path / "unl.csv").read_text().splitlines()[0].endswith(",?")
