import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pslsim.data import LabeledDataset, SyntheticSpec, make_gaussian_mixture
from pslsim.deviation import (BoundInputs, batch_deviations, ema, empirical_deviation_tail,
                              exact_composition_distribution, first_step_class_counts,
                              first_step_deviations, l1_deviation, rounding_bias,
                              serfling_log_bound, serfling_union_bound)
from pslsim.partition import PartitionSpec, extended_dirichlet_partition, iid_partition
from pslsim.sampling import make_schedule, materialize_batches


def reference_bound(eps, B, D0, M):
    mpmath.mp.dps = 50
    eps = mpmath.mpf(eps)
    return 2 * M * mpmath.exp(-2 * eps**2 * B / (1 - mpmath.mpf(B - 1) / D0))


def test_l1_examples():
    assert l1_deviation([0, 1, 1, 2, 2, 2, 2, 2], [0.125, 0.25, 0.625]) == 0.0
    assert l1_deviation([0, 0, 0, 0], [0.5, 0.5]) == 1.0
    batch = [0] * 6 + [1] * 3 + [2]
    assert l1_deviation(batch, [0.5, 0.3, 0.2]) == pytest.approx(0.2, abs=1e-12)
    with pytest.raises(ValueError):
        l1_deviation([], [0.5, 0.5])


@settings(max_examples=200)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=50),
       st.lists(st.floats(0.0, 1.0), min_size=5, max_size=5).filter(lambda w: sum(w) > 0))
def test_l1_range(labels, weights):
    beta0 = np.array(weights) / sum(weights)
    assert 0.0 <= l1_deviation(labels, beta0) <= 2.0 + 1e-12


@pytest.mark.parametrize("eps, B, D0, M", [(0.1, 1024, 50_000, 10), (0.05, 100, 1000, 5),
                                           (0.2, 100, 1000, 5), (0.3, 7, 9, 3)])
def test_bound_matches_high_precision(eps, B, D0, M):
    value = serfling_union_bound(BoundInputs(eps, B, D0, M), clip=False)
    assert value == pytest.approx(float(reference_bound(eps, B, D0, M)), rel=1e-12)


def test_bound_examples():
    assert serfling_union_bound(BoundInputs(0.1, 1024, 50_000, 10)) == pytest.approx(1.66e-8, rel=3e-3)
    unclipped = serfling_union_bound(BoundInputs(0.1, 128, 50_000, 10), clip=False)
    assert unclipped == pytest.approx(1.54, rel=3e-3)
    assert serfling_union_bound(BoundInputs(0.1, 128, 50_000, 10)) == 1.0


def test_full_pool_bound_and_deviation():
    inputs = BoundInputs(0.1, 1000, 1000, 5)
    assert serfling_union_bound(inputs) < 1e-300
    # log space keeps the exponent finite even though the value underflows
    assert serfling_log_bound(inputs) == pytest.approx(math.log(10) - 0.02 * 1000 * 1000)
    ds = LabeledDataset(np.zeros((1000, 1)), np.arange(1000) % 5, 5)
    part = iid_partition(ds, 4, seed=0)
    tail = empirical_deviation_tail("cl", part, ds.labels, 1000, 0.01, 500, seed=1)
    assert tail.probability == 0.0


@pytest.mark.parametrize("kwargs", [dict(epsilon=0.0, B=10, D0=100, M=2),
                                    dict(epsilon=0.995, B=10, D0=100, M=2),
                                    dict(epsilon=0.1, B=101, D0=100, M=2),
                                    dict(epsilon=0.1, B=10, D0=100, M=0)])
def test_bound_input_validation(kwargs):
    with pytest.raises(ValueError):
        BoundInputs(**kwargs)


def test_rounding_bias_examples():
    iid = rounding_bias([10, 10, 10, 10], np.full((4, 3), 1 / 3), 8)
    np.testing.assert_allclose(iid.per_class_bias, 0.0, atol=1e-15)
    assert iid.total_bias == 0.0

    onehot = rounding_bias([10, 10, 10], np.eye(3), 4)
    assert onehot.local_sizes.tolist() == [2, 2, 2]
    np.testing.assert_allclose(onehot.per_class_bias, 1 / 6, atol=1e-15)
    assert onehot.total_bias == pytest.approx(0.5)
    assert onehot.kb_ratio == 0.75
    with pytest.raises(ValueError):
        rounding_bias([1], np.eye(1), 0)


def test_doubling_batch_never_raises_size_mismatch():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        K = int(rng.integers(1, 40))
        sizes = rng.integers(1, 500, size=K)
        dists = rng.dirichlet(np.ones(4), size=K)
        B = int(rng.integers(1, 200))
        assert rounding_bias(sizes, dists, 2 * B).total_bias <= rounding_bias(sizes, dists, B).total_bias + 1e-12


@settings(max_examples=1000, deadline=None)
@given(st.data())
def test_rounding_bias_bounded_by_size_mismatch(data):
    K = data.draw(st.integers(1, 20))
    M = data.draw(st.integers(1, 6))
    sizes = data.draw(st.lists(st.integers(1, 300), min_size=K, max_size=K))
    raw = data.draw(st.lists(st.lists(st.floats(0.0, 1.0), min_size=M, max_size=M)
                             .filter(lambda r: sum(r) > 0), min_size=K, max_size=K))
    dists = np.array(raw) / np.array(raw).sum(axis=1, keepdims=True)
    B = data.draw(st.integers(1, 400))
    result = rounding_bias(sizes, dists, B)
    assert (result.per_class_bias <= result.total_bias + 1e-12).all()


def test_exact_composition_examples():
    law = exact_composition_distribution([2, 3, 1], 3)
    assert law[(1, 1, 1)] == pytest.approx(0.3)
    assert sum(law.values()) == pytest.approx(1.0)
    assert exact_composition_distribution([3, 2], 5) == {(3, 2): 1.0}
    assert exact_composition_distribution([1, 1], 1) == {(0, 1): 0.5, (1, 0): 0.5}
    with pytest.raises(ValueError, match="oracle scale exceeded"):
        exact_composition_distribution([30, 30], 30)


def test_exact_composition_is_multivariate_hypergeometric():
    sizes = [1, 2, 3, 4]
    for comp, p in exact_composition_distribution(sizes, 5).items():
        assert p == pytest.approx(stats.multivariate_hypergeom.pmf(comp, sizes, 5), rel=1e-12)


@pytest.fixture(scope="module")
def severe_small():
    train, _ = make_gaussian_mixture(SyntheticSpec(classes=5, per_class_count=200, feature_dim=2))
    part = extended_dirichlet_partition(train, PartitionSpec(K=10, C=2, alpha=3.0, seed=0))
    return train, part


def test_gpsl_class_marginals_are_hypergeometric(severe_small):
    train, part = severe_small
    counts = part.class_counts(train.labels)
    B, n = 100, 100_000
    batch = first_step_class_counts("gpsl", counts, B, n, np.random.default_rng(3))
    D0 = counts.sum()
    beta0 = counts.sum(axis=0) / D0
    var = B * beta0 * (1 - beta0) * (D0 - B) / (D0 - 1)
    mean = batch.mean(axis=0)
    assert (np.abs(mean - B * beta0) <= 3 * np.sqrt(var / n)).all()
    np.testing.assert_allclose(batch.var(axis=0), var, rtol=0.10)


def test_gpsl_tail_respects_bound_small(severe_small):
    train, part = severe_small
    for tail in empirical_deviation_tail("gpsl", part, train.labels, 100, [0.05, 0.1, 0.2],
                                         20_000, seed=2):
        bound = serfling_union_bound(BoundInputs(tail.epsilon, 100, 1000, 5))
        assert tail.probability <= bound + 3 * tail.stderr


def test_tail_estimates_are_reproducible(severe_small):
    train, part = severe_small
    a = first_step_deviations("fpls", part, train.labels, 64, 30_000, seed=5, chunk=7_000)
    b = first_step_deviations("fpls", part, train.labels, 64, 30_000, seed=5, chunk=7_000)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (30_000,)


def test_fixed_first_steps_are_stratified_not_worse(mixture):
    # each client contributes a fixed share, so the first step is a stratified sample:
    # with balanced class coverage it deviates less than a uniform draw
    train, _ = mixture
    part = extended_dirichlet_partition(train, PartitionSpec(K=64, C=1, alpha=3.0, seed=0))
    gpsl = first_step_deviations("gpsl", part, train.labels, 128, 20_000, seed=1).mean()
    fpls = first_step_deviations("fpls", part, train.labels, 128, 20_000, seed=1).mean()
    assert fpls < gpsl


def test_depletion_tail_hurts_fixed_schedules(mixture):
    train, _ = mixture
    part = extended_dirichlet_partition(train, PartitionSpec(K=64, C=1, alpha=3.0, seed=0))
    beta0 = part.pool_distribution()
    devs = {}
    for strategy in ("gpsl", "fpls", "fls"):
        sched = make_schedule(strategy, part.client_sizes, 128, seed=4)
        devs[strategy] = batch_deviations(materialize_batches(part, sched, 4), train.labels, beta0)
    assert devs["fls"].mean() > devs["gpsl"].mean()
    for strategy in ("fpls", "fls"):
        assert devs[strategy].std() > devs["gpsl"].std()
        assert devs[strategy][-5:].mean() > devs["gpsl"].max()


def test_ema():
    np.testing.assert_allclose(ema([1.0, 0.0, 0.0], 0.5), [1.0, 0.5, 0.25])
    np.testing.assert_allclose(ema([2.0, 2.0, 2.0]), [2.0, 2.0, 2.0])
