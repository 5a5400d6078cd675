"""Experiment configs, multi-seed runs, and report files."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SyntheticSpec, make_gaussian_mixture
from .engine import (SIZE_WEIGHTING, ModelConfig, OptimizerConfig, SplitModel,
                     centralized_train_epoch, evaluate, train_epoch)
from .partition import PartitionSpec, make_partition
from .sampling import STRATEGIES, derive_seed, make_schedule

CL = "cl"
ALL_STRATEGIES = STRATEGIES + (CL,)


@dataclass
class ExperimentConfig:
    dataset: SyntheticSpec = field(default_factory=SyntheticSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    strategy: str = "gpsl"
    global_batch: int = 128
    epochs: int = 50
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    seeds: tuple = (0, 1, 2, 3, 4)
    weighting: str = SIZE_WEIGHTING
    output_dir: str | None = None
    record_timing: bool = False

    def validate(self):
        self.dataset.validate()
        self.partition.validate(self.dataset.classes)
        if self.strategy not in ALL_STRATEGIES:
            raise ValueError(f"strategy must be one of {ALL_STRATEGIES}, got {self.strategy!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        pool = self.dataset.classes * self.dataset.per_class_count
        if not 1 <= self.global_batch <= pool:
            raise ValueError(f"global batch must lie in [1, {pool}]")
        if self.partition.K > pool:
            raise ValueError("more clients than samples")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["seeds"] = list(self.seeds)
        out["model"]["client_hidden"] = list(self.model.client_hidden)
        out["model"]["server_hidden"] = list(self.model.server_hidden)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        payload = dict(payload)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        nested = {"dataset": SyntheticSpec, "partition": PartitionSpec,
                  "optimizer": OptimizerConfig, "model": ModelConfig}
        for key, kind in nested.items():
            if key in payload:
                payload[key] = kind(**payload[key])
        if "model" in payload:
            payload["model"] = dataclasses.replace(
                payload["model"], client_hidden=tuple(payload["model"].client_hidden),
                server_hidden=tuple(payload["model"].server_hidden))
        if "seeds" in payload:
            payload["seeds"] = tuple(int(s) for s in payload["seeds"])
        return cls(**payload)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SeedResult:
    seed: int
    accuracy: list  # one entry per epoch
    steps_per_epoch: list
    first_step_batch: int
    rows: list  # (epoch, step, loss, deviation, accuracy or None)
    wall_time: float

    @property
    def final_accuracy(self) -> float:
        return self.accuracy[-1]

    @property
    def mean_deviation(self) -> float:
        return float(np.mean([r[3] for r in self.rows]))


@dataclass
class RunReport:
    config: ExperimentConfig
    seeds: list

    @property
    def final_accuracies(self) -> np.ndarray:
        return np.array([s.final_accuracy for s in self.seeds])

    @property
    def accuracy_mean(self) -> float:
        return float(self.final_accuracies.mean())

    @property
    def accuracy_std(self):
        acc = self.final_accuracies
        return float(acc.std()) if acc.size >= 2 else None

    @property
    def mean_deviation(self) -> float:
        return float(np.mean([s.mean_deviation for s in self.seeds]))

    @property
    def steps_per_epoch(self) -> float:
        return float(np.mean([np.mean(s.steps_per_epoch) for s in self.seeds]))

    @property
    def total_steps(self) -> int:
        return int(sum(sum(s.steps_per_epoch) for s in self.seeds))

    @property
    def wall_time(self) -> float:
        return float(sum(s.wall_time for s in self.seeds))

    def summary(self) -> dict:
        cfg = self.config
        out = {
            "strategy": cfg.strategy,
            "K": cfg.partition.K,
            "B": cfg.global_batch,
            "epochs": cfg.epochs,
            "seed_count": len(self.seeds),
            "final_accuracy": {str(s.seed): s.final_accuracy for s in self.seeds},
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "accuracy_curve_mean": np.mean([s.accuracy for s in self.seeds], axis=0).tolist(),
            "mean_deviation": self.mean_deviation,
            "steps_per_epoch": self.steps_per_epoch,
            "total_steps": self.total_steps,
            "effective_batch": max(s.first_step_batch for s in self.seeds),
        }
        if cfg.record_timing:
            out["wall_time_seconds"] = self.wall_time
        return out


def _client_count(config):
    return 1 if config.strategy == CL else config.partition.K


def run_seed(config: ExperimentConfig, seed: int, train=None, test=None) -> SeedResult:
    if train is None:
        train, test = make_gaussian_mixture(config.dataset)
    model = SplitModel.build(train.features.shape[1], train.num_classes, _client_count(config),
                             derive_seed(seed, 1), config.model)
    optimizers = config.optimizer.make()
    partition = None
    if config.strategy != CL:
        spec = dataclasses.replace(config.partition, seed=derive_seed(config.partition.seed, seed))
        partition = make_partition(train, spec)

    accuracy, steps, rows = [], [], []
    first = None
    elapsed = 0.0
    for epoch in range(config.epochs):
        start = time.perf_counter()
        if partition is None:
            traces = centralized_train_epoch(model, train, config.global_batch, optimizers,
                                             derive_seed(seed, 3, epoch))
        else:
            schedule = make_schedule(config.strategy, partition.client_sizes,
                                     config.global_batch, derive_seed(seed, 2, epoch))
            traces = train_epoch(model, train, partition, schedule, optimizers,
                                 derive_seed(seed, 3, epoch), weighting=config.weighting)
        elapsed += time.perf_counter() - start
        if first is None:
            first = traces[0].global_size
        acc = evaluate(model, test)
        accuracy.append(acc)
        steps.append(len(traces))
        for i, tr in enumerate(traces):
            rows.append((epoch, tr.step, tr.loss, tr.deviation,
                         acc if i == len(traces) - 1 else None))
    return SeedResult(seed, accuracy, steps, first, rows, elapsed)


def run_experiment(config: ExperimentConfig, write: bool = True) -> RunReport:
    """Train every seed of ``config``; writes report files when an output dir is set."""
    config.validate()
    train, test = make_gaussian_mixture(config.dataset)
    report = RunReport(config, [run_seed(config, s, train, test) for s in config.seeds])
    if write and config.output_dir:
        write_report(report, config.output_dir)
    return report


def _dump_json(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def write_report(report: RunReport, out_dir):
    out = Path(out_dir)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    _dump_json(report.config.to_dict(), out / "config.json")
    _dump_json(report.summary(), out / "summary.json")
    for s in report.seeds:
        write_curve(s, out / "curves" / f"{report.config.strategy}_seed{s.seed}.csv")


def write_curve(result: SeedResult, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss", "deviation", "accuracy"])
        for epoch, step, loss, dev, acc in result.rows:
            w.writerow([epoch, step, repr(loss), repr(dev), "" if acc is None else repr(acc)])


COMPARE_COLUMNS = ["strategy", "K", "B", "seed_count", "accuracy_mean", "accuracy_std",
                   "mean_deviation", "steps_per_epoch", "effective_batch", "total_steps"]


def compare_strategies(configs, out_dir=None, record_timing=False):
    """Run every config and tabulate one row per (strategy, K, B) cell."""
    configs = list(configs)
    if not configs:
        raise ValueError("nothing to compare")
    reference = configs[0].dataset
    for cfg in configs:
        if cfg.dataset != reference:
            raise ValueError("all configs must share the same dataset spec")
        if cfg.partition.seed != configs[0].partition.seed:
            raise ValueError("all configs must share the same partition seed")
    rows = []
    reports = []
    for cfg in configs:
        report = run_experiment(cfg, write=False)
        reports.append(report)
        summary = report.summary()
        row = {key: summary[key] for key in COMPARE_COLUMNS}
        if record_timing:
            row["wall_time_seconds"] = report.wall_time
        rows.append(row)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json({"rows": rows, "configs": [c.to_dict() for c in configs]},
                   out / "comparison.json")
        columns = COMPARE_COLUMNS + (["wall_time_seconds"] if record_timing else [])
        with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=columns)
            w.writeheader()
            for row in rows:
                w.writerow({k: ("" if row[k] is None else row[k]) for k in columns})
    return rows, reports


def default_output_dir():
    return os.environ.get("PSLSIM_OUTPUT_DIR", "report")
