"""Local batch-size schedules (global, fixed-equal, fixed-proportional) and sample draws.

A schedule fixes, for one epoch, how many samples every client contributes
at every step. Global sampling (GPSL) picks the sizes by drawing clients one
sample at a time with probability proportional to their remaining data, which
makes the global batch a uniform draw without replacement from the pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

GPSL = "gpsl"
FLS = "fls"
FPLS = "fpls"
STRATEGIES = (GPSL, FLS, FPLS)


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of integers (numpy SeedSequence hash)."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def client_rng(seed: int, client: int) -> np.random.Generator:
    """RNG stream for one client: SeedSequence(entropy=seed, spawn_key=(client,)).

    Streams for different clients are independent, and a client's stream does
    not depend on how many other clients exist or in which order they run.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(client),)))


@dataclass
class BatchSchedule:
    strategy: str
    global_target: int
    steps: np.ndarray  # (T, K) local batch sizes
    seed: int = 0

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64)
        if steps.ndim != 2:
            raise ValueError("steps must be a (T, K) matrix")
        if (steps < 0).any():
            raise ValueError("negative local batch size")
        self.steps = steps

    @property
    def K(self) -> int:
        return int(self.steps.shape[1])

    @property
    def T(self) -> int:
        return steps_per_epoch(self)

    def global_sizes(self) -> np.ndarray:
        return self.steps.sum(axis=1)

    def client_totals(self) -> np.ndarray:
        return self.steps.sum(axis=0)

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "B": int(self.global_target),
            "seed": int(self.seed),
            "steps": self.steps.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "BatchSchedule":
        steps = payload["steps"]
        return cls(payload["strategy"], int(payload["B"]), np.array(steps, dtype=np.int64).reshape(len(steps), -1), int(payload.get("seed", 0)))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BatchSchedule":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def steps_per_epoch(schedule: BatchSchedule) -> int:
    return int((schedule.steps.sum(axis=1) >= 1).sum())


def _as_sizes(client_sizes) -> np.ndarray:
    sizes = np.asarray(client_sizes, dtype=np.int64).reshape(-1)
    if sizes.size == 0:
        raise ValueError("need at least one client")
    if (sizes < 0).any():
        raise ValueError("client sizes must be non-negative")
    return sizes


def _draw_owners(rem: list, targets: list) -> list:
    """Client picked by each integer variate; ``rem`` is decremented in place."""
    owners = []
    for target in targets:
        acc = 0
        for k, r in enumerate(rem):
            acc += r
            if acc > target:
                break
        rem[k] -= 1
        owners.append(k)
    return owners


def categorical_draws(remaining: np.ndarray, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Run ``n_draws`` depletion-weighted client draws on every row of ``remaining``.

    ``remaining`` is an (R, K) integer matrix of per-client counts and is
    decremented in place. Each draw uses one uniform integer variate
    ``r in [0, total)`` per row and inverts the cumulative counts, which is the
    inverse CDF of the weights ``remaining / total`` without float rounding; a
    client with nothing left has zero weight and cannot be selected. Returns
    the (R, K) matrix of draw counts.
    """
    n_rows, K = remaining.shape
    counts = np.zeros_like(remaining)
    if n_draws == 0:
        return counts
    totals = remaining.sum(axis=1)
    if (totals < n_draws).any():
        raise ValueError("more draws requested than samples remain")
    # the pool shrinks by exactly one per draw, so all variates can be drawn up front
    r = rng.integers(0, totals[None, :] - np.arange(n_draws)[:, None])
    if n_rows == 1:
        rem = remaining[0].tolist()
        counts[0] = np.bincount(_draw_owners(rem, r[:, 0].tolist()), minlength=K)
        remaining[0] = rem
        return counts
    rows = np.arange(n_rows)
    for i in range(n_draws):
        cum = np.cumsum(remaining, axis=1)
        z = np.argmax(cum > r[i][:, None], axis=1)
        remaining[rows, z] -= 1
        counts[rows, z] += 1
    return counts


def gpsl_schedule(client_sizes, B: int, seed: int) -> BatchSchedule:
    """Whole-epoch GPSL schedule; remaining counts carry over between steps."""
    sizes = _as_sizes(client_sizes)
    total = int(sizes.sum())
    if B < 1:
        raise ValueError("global batch size must be >= 1")
    if total == 0:
        raise ValueError("pool is empty")
    rng = np.random.default_rng(seed)
    # one draw per pooled sample; draw i sees total - i samples left
    targets = rng.integers(0, total - np.arange(total))
    owners = _draw_owners(sizes.tolist(), targets.tolist())
    steps = np.zeros((-(-total // B), sizes.size), dtype=np.int64)
    np.add.at(steps, (np.arange(total) // B, owners), 1)
    return BatchSchedule(GPSL, B, steps, seed)


def gpsl_first_steps(client_sizes, B: int, n: int, seed: int) -> np.ndarray:
    """(n, K) first-step compositions from n independent GPSL epochs."""
    sizes = _as_sizes(client_sizes)
    if B < 1 or B > sizes.sum():
        raise ValueError("need 1 <= B <= pool size")
    rng = np.random.default_rng(seed)
    remaining = np.tile(sizes, (n, 1))
    return categorical_draws(remaining, B, rng)


def _fixed_schedule(strategy, sizes, per_step, B, seed=0) -> BatchSchedule:
    remaining = sizes.copy()
    steps = []
    while remaining.sum() > 0:
        take = np.minimum(per_step, remaining)
        if take.sum() == 0:
            raise ValueError("fixed local batch sizes are zero for clients with data left")
        steps.append(take)
        remaining = remaining - take
    return BatchSchedule(strategy, B, np.array(steps).reshape(len(steps), sizes.size), seed)


def fls_local_sizes(client_sizes, B: int, K: int | None = None) -> np.ndarray:
    sizes = _as_sizes(client_sizes)
    K = sizes.size if K is None else K
    if B < 1 or K < 1:
        raise ValueError("B and K must be >= 1")
    return np.full(sizes.size, -(-B // K), dtype=np.int64)


def fpls_local_sizes(client_sizes, B: int) -> np.ndarray:
    sizes = _as_sizes(client_sizes)
    total = int(sizes.sum())
    if B < 1 or total < 1:
        raise ValueError("B and the pool size must be >= 1")
    return -(-B * sizes // total)


def fls_schedule(client_sizes, B: int, K: int | None = None, seed: int = 0) -> BatchSchedule:
    """Every client contributes ceil(B/K) samples per step until it runs dry."""
    sizes = _as_sizes(client_sizes)
    return _fixed_schedule(FLS, sizes, fls_local_sizes(sizes, B, K), B, seed)


def fpls_schedule(client_sizes, B: int, seed: int = 0) -> BatchSchedule:
    """Client k contributes ceil(B*D_k/D_0) per step, proportions frozen at epoch start."""
    sizes = _as_sizes(client_sizes)
    return _fixed_schedule(FPLS, sizes, fpls_local_sizes(sizes, B), B, seed)


def make_schedule(strategy: str, client_sizes, B: int, seed: int) -> BatchSchedule:
    if strategy == GPSL:
        return gpsl_schedule(client_sizes, B, seed)
    if strategy == FLS:
        return fls_schedule(client_sizes, B, seed=seed)
    if strategy == FPLS:
        return fpls_schedule(client_sizes, B, seed=seed)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


class ClientDepleted(ValueError):
    pass


@dataclass
class DepletionState:
    remaining_indices: list

    @classmethod
    def from_partition(cls, partition) -> "DepletionState":
        return cls([np.array(ix, dtype=np.int64) for ix in partition.client_indices])

    @property
    def remaining(self) -> np.ndarray:
        return np.array([ix.size for ix in self.remaining_indices], dtype=np.int64)


def draw_local_batch(state: DepletionState, k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n of client k's unused indices uniformly without replacement and consume them."""
    pool = state.remaining_indices[k]
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > pool.size:
        raise ClientDepleted(f"client depleted: client {k} has {pool.size} left, asked for {n}")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    picked = rng.choice(pool.size, size=n, replace=False)
    out = pool[picked]
    state.remaining_indices[k] = np.delete(pool, picked)
    return out


def materialize_batches(partition, schedule: BatchSchedule, seed: int) -> list:
    """Turn a size schedule into per-step lists of per-client index arrays."""
    if schedule.K != partition.K:
        raise ValueError(f"schedule has {schedule.K} clients, partition has {partition.K}")
    if (schedule.client_totals() > partition.client_sizes).any():
        raise ValueError("schedule asks for more samples than some client holds")
    state = DepletionState.from_partition(partition)
    rngs = [client_rng(seed, k) for k in range(partition.K)]
    return [
        [draw_local_batch(state, k, int(n), rngs[k]) for k, n in enumerate(row)]
        for row in schedule.steps
    ]
