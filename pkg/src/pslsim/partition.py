"""IID and extended-Dirichlet client partitions over a pooled dataset."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import LabeledDataset

IID = "iid"
EXTENDED_DIRICHLET = "dirichlet"


def class_distribution(labels, num_classes: int) -> np.ndarray:
    """Fraction of each class in ``labels`` (length ``num_classes``)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("empty distribution")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"label out of range [0, {num_classes})")
    return np.bincount(labels, minlength=num_classes) / labels.size


@dataclass(frozen=True)
class PartitionSpec:
    kind: str = EXTENDED_DIRICHLET
    K: int = 16
    C: int = 2
    alpha: float = 3.0
    seed: int = 0

    def validate(self, num_classes: Optional[int] = None):
        if self.kind not in (IID, EXTENDED_DIRICHLET):
            raise ValueError(f"unknown partition kind {self.kind!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.kind == EXTENDED_DIRICHLET:
            if not self.alpha > 0:
                raise ValueError("alpha must be positive")
            if self.C < 1 or (num_classes is not None and self.C > num_classes):
                raise ValueError(f"C must lie in [1, {num_classes}]")


@dataclass
class Partition:
    """Disjoint per-client index sets plus their class distributions."""

    client_indices: list
    client_distributions: np.ndarray
    num_classes: int
    spec: Optional[PartitionSpec] = None
    warnings: list = field(default_factory=list)

    @classmethod
    def from_indices(cls, client_indices, labels, num_classes, spec=None, warnings=None):
        labels = np.asarray(labels, dtype=np.int64)
        idx = [np.sort(np.asarray(ix, dtype=np.int64)) for ix in client_indices]
        dists = np.zeros((len(idx), num_classes))
        for k, ix in enumerate(idx):
            if ix.size:
                dists[k] = class_distribution(labels[ix], num_classes)
        return cls(idx, dists, num_classes, spec, list(warnings or []))

    @property
    def K(self) -> int:
        return len(self.client_indices)

    @property
    def client_sizes(self) -> np.ndarray:
        return np.array([ix.size for ix in self.client_indices], dtype=np.int64)

    @property
    def pool_size(self) -> int:
        return int(self.client_sizes.sum())

    def pool_distribution(self) -> np.ndarray:
        sizes = self.client_sizes
        return (sizes[:, None] * self.client_distributions).sum(axis=0) / sizes.sum()

    def class_counts(self, labels) -> np.ndarray:
        """(K, M) matrix of per-client class counts."""
        labels = np.asarray(labels, dtype=np.int64)
        return np.stack(
            [np.bincount(labels[ix], minlength=self.num_classes) for ix in self.client_indices]
        )

    def classes_per_client(self) -> np.ndarray:
        return (self.client_distributions > 0).sum(axis=1)

    def check(self, pool_size: int):
        everything = np.concatenate(self.client_indices) if self.client_indices else np.empty(0)
        if everything.size != pool_size or np.unique(everything).size != pool_size:
            raise AssertionError("client index sets are not a disjoint cover of the pool")
        if everything.size and (everything.min() != 0 or everything.max() != pool_size - 1):
            raise AssertionError("client index sets are not a disjoint cover of the pool")


def iid_partition(dataset: LabeledDataset, K: int, seed: int) -> Partition:
    """Uniform shuffle, then K contiguous chunks with sizes differing by at most one."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > dataset.size:
        raise ValueError(f"cannot split {dataset.size} samples among {K} clients")
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset.size)
    chunks = np.array_split(order, K)
    spec = PartitionSpec(kind=IID, K=K, C=dataset.num_classes, alpha=0.0, seed=seed)
    return Partition.from_indices(chunks, dataset.labels, dataset.num_classes, spec)


def assign_classes(num_classes: int, K: int, C: int, rng: np.random.Generator) -> list:
    """Give each client C distinct classes, always picking among the least-assigned ones.

    Ties are broken uniformly at random, so with ``K*C >= num_classes`` every
    class ends up with at least one client and assignment counts differ by at
    most one.
    """
    load = np.zeros(num_classes, dtype=np.int64)
    assignment = []
    for _ in range(K):
        mine = []
        for _ in range(C):
            candidates = np.setdiff1d(np.arange(num_classes), mine)
            lowest = load[candidates].min()
            tied = candidates[load[candidates] == lowest]
            pick = int(tied[rng.integers(tied.size)])
            mine.append(pick)
            load[pick] += 1
        assignment.append(sorted(mine))
    return assignment


def largest_remainder(total: int, weights) -> np.ndarray:
    """Integer split of ``total`` proportional to ``weights``, conserving the sum exactly."""
    weights = np.asarray(weights, dtype=np.float64)
    raw = total * weights / weights.sum()
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps the lowest position first among equal remainders
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def extended_dirichlet_partition(dataset: LabeledDataset, spec: PartitionSpec) -> Partition:
    """Non-IID split where every client holds samples from exactly C classes."""
    M = dataset.num_classes
    spec.validate(M)
    if spec.kind != EXTENDED_DIRICHLET:
        raise ValueError("spec.kind must be 'dirichlet'")
    if spec.K * spec.C < M:
        raise ValueError(f"class uncovered: K*C = {spec.K * spec.C} < M = {M}")
    per_class = np.bincount(dataset.labels, minlength=M)
    if (per_class == 0).any():
        raise ValueError(f"classes without samples: {np.flatnonzero(per_class == 0).tolist()}")

    rng = np.random.default_rng(spec.seed)
    assignment = assign_classes(M, spec.K, spec.C, rng)
    holders = [[k for k in range(spec.K) if m in assignment[k]] for m in range(M)]

    buckets = [[] for _ in range(spec.K)]
    warnings = []
    for m in range(M):
        members = holders[m]
        pool = rng.permutation(np.flatnonzero(dataset.labels == m))
        weights = rng.dirichlet(np.full(len(members), float(spec.alpha)))
        counts = largest_remainder(pool.size, weights)
        if pool.size >= len(members):
            moved = 0
            while (counts == 0).any():
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[int(np.flatnonzero(counts == 0)[0])] += 1
                moved += 1
            if moved:
                warnings.append(f"class {m}: moved {moved} sample(s) to empty assignees")
        else:
            warnings.append(
                f"class {m}: {pool.size} sample(s) for {len(members)} clients, some get none"
            )
        for k, piece in zip(members, np.split(pool, np.cumsum(counts)[:-1])):
            buckets[k].append(piece)

    client_indices = [np.concatenate(b) if b else np.empty(0, np.int64) for b in buckets]
    return Partition.from_indices(client_indices, dataset.labels, M, spec, warnings)


def make_partition(dataset: LabeledDataset, spec: PartitionSpec) -> Partition:
    if spec.kind == IID:
        return iid_partition(dataset, spec.K, spec.seed)
    return extended_dirichlet_partition(dataset, spec)


def partition_to_dict(partition: Partition) -> dict:
    spec = partition.spec or PartitionSpec(kind=IID, K=partition.K, C=0, alpha=0.0, seed=0)
    return {
        "kind": spec.kind,
        "K": partition.K,
        "C": spec.C,
        "alpha": spec.alpha,
        "seed": spec.seed,
        "num_classes": partition.num_classes,
        "warnings": list(partition.warnings),
        "client_indices": [ix.tolist() for ix in partition.client_indices],
    }


def partition_from_dict(payload: dict, labels) -> Partition:
    spec = PartitionSpec(
        kind=payload["kind"],
        K=int(payload["K"]),
        C=int(payload["C"]),
        alpha=float(payload["alpha"]),
        seed=int(payload["seed"]),
    )
    if len(payload["client_indices"]) != spec.K:
        raise ValueError("K does not match the number of index lists")
    return Partition.from_indices(
        payload["client_indices"], labels, int(payload["num_classes"]), spec,
        payload.get("warnings", []),
    )


def save_partition(partition: Partition, path, extra: Optional[dict] = None):
    payload = partition_to_dict(partition)
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"))
        fh.write("\n")


def load_partition_payload(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
