import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pslsim.data import LabeledDataset, SyntheticSpec, make_gaussian_mixture
from pslsim.partition import (PartitionSpec, assign_classes, class_distribution,
                              extended_dirichlet_partition, iid_partition, largest_remainder,
                              partition_from_dict, partition_to_dict)


def labelled(labels, num_classes):
    labels = np.asarray(labels)
    return LabeledDataset(np.zeros((labels.size, 1)), labels, num_classes)


@pytest.mark.parametrize("labels, M, expected", [
    ([0, 0, 1, 1], 2, [0.5, 0.5]),
    ([2, 2, 2], 3, [0.0, 0.0, 1.0]),
    # counts 1, 2, 5 out of 8
    ([0, 1, 1, 2, 2, 2, 2, 2], 3, [0.125, 0.25, 0.625]),
])
def test_class_distribution_examples(labels, M, expected):
    np.testing.assert_allclose(class_distribution(labels, M), expected, atol=1e-15)


def test_class_distribution_errors():
    with pytest.raises(ValueError, match="empty distribution"):
        class_distribution([], 3)
    with pytest.raises(ValueError):
        class_distribution([0, 3], 3)
    with pytest.raises(ValueError):
        class_distribution([-1], 3)


def test_dataset_rejects_bad_labels():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 1)), [0, 5], 3)
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((3, 1)), [0, 1], 3)


def test_iid_even_and_remainder_split():
    ds = labelled(np.arange(10) % 2, 2)
    two = iid_partition(ds, 2, seed=0)
    assert two.client_sizes.tolist() == [5, 5]
    three = iid_partition(ds, 3, seed=0)
    assert three.client_sizes.tolist() == [4, 3, 3]
    three.check(10)


def test_iid_is_deterministic_and_seed_sensitive():
    ds = labelled(np.arange(50) % 5, 5)
    a, b = iid_partition(ds, 4, seed=7), iid_partition(ds, 4, seed=7)
    c = iid_partition(ds, 4, seed=8)
    assert all(np.array_equal(x, y) for x, y in zip(a.client_indices, b.client_indices))
    assert any(not np.array_equal(x, y) for x, y in zip(a.client_indices, c.client_indices))


def test_iid_rejects_too_many_clients():
    with pytest.raises(ValueError):
        iid_partition(labelled([0, 1, 0], 2), 4, seed=0)


@pytest.mark.parametrize("C", [2, 5])
def test_dirichlet_exact_class_count_cifar_shape(mixture, C):
    train, _ = mixture
    part = extended_dirichlet_partition(train, PartitionSpec(K=16, C=C, alpha=3.0, seed=0))
    assert part.classes_per_client().tolist() == [C] * 16
    part.check(train.size)
    assert part.warnings == []


def test_dirichlet_mixture_recovers_pool(mixture):
    train, _ = mixture
    part = extended_dirichlet_partition(train, PartitionSpec(K=64, C=2, alpha=3.0, seed=3))
    beta0 = class_distribution(train.labels, train.num_classes)
    np.testing.assert_allclose(part.pool_distribution(), beta0, atol=1e-9)
    for k, ix in enumerate(part.client_indices):
        np.testing.assert_allclose(part.client_distributions[k],
                                   class_distribution(train.labels[ix], 10), atol=0)


def test_dirichlet_large_alpha_shares_evenly():
    ds = labelled(np.repeat([0, 1], 1000), 2)
    part = extended_dirichlet_partition(ds, PartitionSpec(K=2, C=2, alpha=1e9, seed=1))
    counts = part.class_counts(ds.labels)
    assert np.abs(counts - 500).max() <= 1


def test_dirichlet_determinism(mixture):
    train, _ = mixture
    spec = PartitionSpec(K=16, C=2, alpha=3.0, seed=11)
    a = extended_dirichlet_partition(train, spec)
    b = extended_dirichlet_partition(train, spec)
    assert all(np.array_equal(x, y) for x, y in zip(a.client_indices, b.client_indices))


def test_dirichlet_errors(small_mixture):
    train, _ = small_mixture
    with pytest.raises(ValueError, match="class uncovered"):
        extended_dirichlet_partition(train, PartitionSpec(K=2, C=2, alpha=1.0, seed=0))
    with pytest.raises(ValueError):
        extended_dirichlet_partition(train, PartitionSpec(K=4, C=2, alpha=0.0, seed=0))
    with pytest.raises(ValueError):
        extended_dirichlet_partition(train, PartitionSpec(K=4, C=6, alpha=1.0, seed=0))


def test_reallocation_and_budget_warnings():
    # tiny alpha concentrates each class on one client; sizes force the nonzero fix-up
    ds = labelled(np.repeat(np.arange(4), 6), 4)
    part = extended_dirichlet_partition(ds, PartitionSpec(K=6, C=2, alpha=0.01, seed=2))
    assert part.classes_per_client().tolist() == [2] * 6
    assert any("moved" in w for w in part.warnings)
    # a class with fewer samples than assignees cannot reach every client
    ds = labelled(np.array([0, 1, 1, 1, 1, 1, 1]), 2)
    part = extended_dirichlet_partition(ds, PartitionSpec(K=3, C=2, alpha=1.0, seed=0))
    assert any("get none" in w for w in part.warnings)
    part.check(7)


def test_assign_classes_is_balanced():
    rng = np.random.default_rng(0)
    assignment = assign_classes(10, 16, 2, rng)
    load = np.bincount(np.concatenate(assignment), minlength=10)
    assert load.max() - load.min() <= 1
    assert all(len(set(a)) == 2 for a in assignment)


@given(total=st.integers(0, 10_000),
       weights=st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=20))
def test_largest_remainder_conserves(total, weights):
    counts = largest_remainder(total, weights)
    assert counts.sum() == total
    exact = total * np.asarray(weights) / np.sum(weights)
    assert np.all(np.abs(counts - exact) < 1 + 1e-9)


@settings(max_examples=40, deadline=None)
@given(M=st.integers(2, 6), K=st.integers(1, 12), C=st.integers(1, 6),
       alpha=st.floats(0.05, 50.0), seed=st.integers(0, 2**32 - 1))
def test_dirichlet_partition_invariants(M, K, C, alpha, seed):
    C = min(C, M)
    if K * C < M:
        return
    ds = make_gaussian_mixture(SyntheticSpec(classes=M, per_class_count=30, feature_dim=2,
                                             test_per_class=0))[0]
    part = extended_dirichlet_partition(ds, PartitionSpec(K=K, C=C, alpha=alpha, seed=seed))
    part.check(ds.size)
    np.testing.assert_allclose(part.pool_distribution(),
                               class_distribution(ds.labels, M), atol=1e-9)
    # 30 samples per class always cover at most 12 assignees
    assert part.classes_per_client().tolist() == [C] * K
    np.testing.assert_allclose(part.client_distributions.sum(axis=1), 1.0, atol=1e-9)


def test_json_round_trip(small_mixture, tmp_path):
    train, _ = small_mixture
    part = extended_dirichlet_partition(train, PartitionSpec(K=6, C=2, alpha=0.5, seed=9))
    text = json.dumps(partition_to_dict(part))
    back = partition_from_dict(json.loads(text), train.labels)
    assert back.spec == part.spec
    assert all(np.array_equal(x, y) for x, y in zip(back.client_indices, part.client_indices))
    np.testing.assert_array_equal(back.client_distributions, part.client_distributions)
    assert partition_to_dict(back) == partition_to_dict(part)
