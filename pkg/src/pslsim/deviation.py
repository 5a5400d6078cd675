"""Batch-vs-pool label deviation: closed-form tail bounds, rounding bias, Monte Carlo tails."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .sampling import FLS, FPLS, GPSL, fls_local_sizes, fpls_local_sizes, gpsl_first_steps

CL = "cl"
ORACLE_LIMIT = 10**7
EMA_FACTOR = 0.1


def l1_deviation(batch_labels, beta0) -> float:
    beta0 = np.asarray(beta0, dtype=np.float64)
    batch_labels = np.asarray(batch_labels, dtype=np.int64)
    if batch_labels.size == 0:
        raise ValueError("empty batch")
    hist = np.bincount(batch_labels, minlength=beta0.size)
    if hist.size != beta0.size:
        raise ValueError("batch label outside the class range of beta0")
    return float(np.abs(hist / batch_labels.size - beta0).sum())


def l1_deviation_counts(counts, beta0) -> np.ndarray:
    """Row-wise deviation for an (..., M) array of class counts."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum(axis=-1, keepdims=True)
    return np.abs(counts / n - np.asarray(beta0)).sum(axis=-1)


@dataclass(frozen=True)
class BoundInputs:
    epsilon: float
    B: int
    D0: int
    M: int

    def __post_init__(self):
        if not (1 <= self.B <= self.D0):
            raise ValueError(f"need 1 <= B <= D0, got B={self.B}, D0={self.D0}")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if not (0 < self.epsilon <= 1 - 1 / self.D0):
            raise ValueError(f"epsilon must lie in (0, 1 - 1/D0], got {self.epsilon}")


def serfling_log_bound(inputs: BoundInputs) -> float:
    """Natural log of the unclipped union bound 2M exp(-2 eps^2 B / (1 - (B-1)/D0))."""
    correction = 1.0 - (inputs.B - 1) / inputs.D0
    return math.log(2 * inputs.M) - 2.0 * inputs.epsilon**2 * inputs.B / correction


def serfling_union_bound(inputs: BoundInputs, clip: bool = True) -> float:
    """Upper bound on Pr(deviation >= M*eps) for a uniform without-replacement batch."""
    log_value = serfling_log_bound(inputs)
    if clip and log_value >= 0.0:
        return 1.0
    return math.exp(log_value)


class RoundingBias(NamedTuple):
    per_class_bias: np.ndarray
    total_bias: float  # sum_k |ceil(B D_k/D_0)/B - D_k/D_0|, bounds every per-class entry
    kb_ratio: float
    local_sizes: np.ndarray


def rounding_bias(client_sizes, client_distributions, B: int) -> RoundingBias:
    """Per-class bias of the expected composition under proportional ceil-rounded local batches."""
    if B < 1:
        raise ValueError("B must be >= 1")
    sizes = np.asarray(client_sizes, dtype=np.int64)
    dists = np.asarray(client_distributions, dtype=np.float64)
    if dists.ndim != 2 or dists.shape[0] != sizes.size:
        raise ValueError("need one distribution row per client")
    D0 = sizes.sum()
    local = fpls_local_sizes(sizes, B)
    beta0 = (sizes[:, None] * dists).sum(axis=0) / D0
    p_tilde = (local[:, None] / B * dists).sum(axis=0)
    per_class = np.abs(p_tilde - beta0)
    mismatch = float(np.abs(local / B - sizes / D0).sum())
    if (per_class > mismatch + 1e-12).any():
        raise AssertionError("rounding bias exceeds the size-mismatch bound")
    return RoundingBias(per_class, mismatch, sizes.size / B, local)


def exact_composition_distribution(client_sizes, B: int, exact: bool = False) -> dict:
    """Law of per-owner counts in a uniform B-subset, by enumerating every subset.

    Owners can be clients (sizes = D_k) or classes (sizes = class counts).
    Only usable on tiny pools; refuses more than ``ORACLE_LIMIT`` subsets.
    """
    sizes = [int(s) for s in client_sizes]
    D0 = sum(sizes)
    if not 0 <= B <= D0:
        raise ValueError("need 0 <= B <= pool size")
    n_subsets = math.comb(D0, B)
    if n_subsets > ORACLE_LIMIT:
        raise ValueError(f"oracle scale exceeded: C({D0}, {B}) = {n_subsets}")
    owners = [k for k, s in enumerate(sizes) for _ in range(s)]
    tally = Counter()
    for subset in itertools.combinations(owners, B):
        comp = [0] * len(sizes)
        for k in subset:
            comp[k] += 1
        tally[tuple(comp)] += 1
    if exact:
        return {comp: Fraction(c, n_subsets) for comp, c in sorted(tally.items())}
    return {comp: c / n_subsets for comp, c in sorted(tally.items())}


def _multivariate_hypergeometric(colors: np.ndarray, nsample: np.ndarray, rng) -> np.ndarray:
    """Class counts for ``nsample[i]`` draws without replacement from urn ``colors``.

    Chains univariate hypergeometric draws class by class; vectorised over
    the entries of ``nsample``.
    """
    nsample = np.asarray(nsample, dtype=np.int64)
    out = np.zeros(nsample.shape + (colors.size,), dtype=np.int64)
    left = nsample.copy()
    rest = int(colors.sum())
    for m, good in enumerate(colors.tolist()):
        rest -= good
        if good == 0:
            continue
        if rest == 0:
            out[..., m] = left
            break
        got = rng.hypergeometric(good, rest, left)
        out[..., m] = got
        left = left - got
    return out


def first_step_class_counts(strategy, class_counts, B: int, trials: int, rng) -> np.ndarray:
    """(trials, M) class counts of independently drawn first-step global batches.

    ``class_counts`` is the (K, M) matrix of per-client class counts. Clients
    draw their local batch uniformly without replacement from their own
    data, so each client's class counts are multivariate hypergeometric.
    """
    class_counts = np.asarray(class_counts, dtype=np.int64)
    sizes = class_counts.sum(axis=1)
    if strategy == CL:
        pool = class_counts.sum(axis=0)
        return _multivariate_hypergeometric(pool, np.full(trials, min(B, int(pool.sum()))), rng)
    if strategy == GPSL:
        local = gpsl_first_steps(sizes, min(B, int(sizes.sum())), trials, int(rng.integers(2**63)))
    elif strategy == FLS:
        local = np.tile(np.minimum(fls_local_sizes(sizes, B), sizes), (trials, 1))
    elif strategy == FPLS:
        local = np.tile(np.minimum(fpls_local_sizes(sizes, B), sizes), (trials, 1))
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    total = np.zeros((trials, class_counts.shape[1]), dtype=np.int64)
    for k in range(class_counts.shape[0]):
        if sizes[k]:
            total += _multivariate_hypergeometric(class_counts[k], local[:, k], rng)
    return total


class TailEstimate(NamedTuple):
    epsilon: float
    probability: float
    stderr: float
    exceed: int
    trials: int


def first_step_deviations(strategy, partition, labels, B: int, trials: int, seed: int,
                          chunk: int = 20_000) -> np.ndarray:
    """Deviation of ``trials`` independent first-step batches.

    Trials are split into fixed-size chunks, each on its own spawned stream,
    so the result does not depend on how chunks are scheduled.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    counts = partition.class_counts(labels)
    beta0 = counts.sum(axis=0) / counts.sum()
    n_chunks = -(-trials // chunk)
    streams = np.random.SeedSequence(int(seed)).spawn(n_chunks)
    out = []
    for i, ss in enumerate(streams):
        n = min(chunk, trials - i * chunk)
        batch_counts = first_step_class_counts(strategy, counts, B, n, np.random.default_rng(ss))
        out.append(l1_deviation_counts(batch_counts, beta0))
    return np.concatenate(out)


def tail_from_deviations(deviations, epsilon: float, M: int) -> TailEstimate:
    deviations = np.asarray(deviations)
    # tolerance absorbs float noise when the deviation sits exactly on the threshold
    exceed = int((deviations >= M * epsilon - 1e-12).sum())
    n = deviations.size
    p = exceed / n
    return TailEstimate(float(epsilon), p, math.sqrt(p * (1 - p) / n), exceed, n)


def empirical_deviation_tail(strategy, partition, labels, B: int, epsilon, trials: int,
                             seed: int):
    """Monte Carlo estimate of Pr(deviation >= M*eps); one TailEstimate per epsilon."""
    devs = first_step_deviations(strategy, partition, labels, B, trials, seed)
    if np.ndim(epsilon) == 0:
        return tail_from_deviations(devs, float(epsilon), partition.num_classes)
    return [tail_from_deviations(devs, float(e), partition.num_classes) for e in epsilon]


def ema(values, factor: float = EMA_FACTOR) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    acc = None
    for i, v in enumerate(values):
        acc = v if acc is None else (1 - factor) * acc + factor * v
        out[i] = acc
    return out


def batch_deviations(batches, labels, beta0) -> np.ndarray:
    """Per-step deviation for materialised batches (lists of per-client index arrays)."""
    labels = np.asarray(labels)
    return np.array([
        l1_deviation(labels[np.concatenate(step)], beta0) for step in batches
    ])


@dataclass
class DeviationReport:
    strategy: str
    per_step_delta: np.ndarray
    epsilons: list = field(default_factory=list)
    tails: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    smoothing: float = EMA_FACTOR

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_step_delta))

    @property
    def std(self) -> float:
        return float(np.std(self.per_step_delta))

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "steps": int(len(self.per_step_delta)),
            "mean": self.mean,
            "std": self.std,
            "smoothing": self.smoothing,
            "per_step_delta": [float(x) for x in self.per_step_delta],
            "smoothed_delta": [float(x) for x in ema(self.per_step_delta, self.smoothing)],
            "tail": [
                {"epsilon": t.epsilon, "probability": t.probability, "stderr": t.stderr,
                 "trials": t.trials, "bound": b}
                for t, b in zip(self.tails, self.bounds)
            ],
        }
