import csv
import dataclasses
import json
import math

import pytest

from pslsim.data import SyntheticSpec
from pslsim.harness import COMPARE_COLUMNS, ExperimentConfig, compare_strategies, run_experiment
from pslsim.engine import ModelConfig
from pslsim.partition import PartitionSpec


def tiny(strategy="gpsl", **kw):
    base = dict(
        dataset=SyntheticSpec(classes=4, per_class_count=50, feature_dim=4, test_per_class=20),
        partition=PartitionSpec(K=4, C=2, alpha=1.0, seed=0),
        strategy=strategy, global_batch=16, epochs=2, seeds=(0, 1),
        model=ModelConfig(client_hidden=(8,), server_hidden=(8,)))
    base.update(kw)
    return ExperimentConfig(**base)


def test_cl_report_shape(tmp_path):
    report = run_experiment(tiny("cl", epochs=3, output_dir=str(tmp_path)))
    assert [len(s.accuracy) for s in report.seeds] == [3, 3]
    assert all(s.steps_per_epoch == [13, 13, 13] for s in report.seeds)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["seed_count"] == 2 and len(summary["accuracy_curve_mean"]) == 3
    assert "wall_time_seconds" not in summary
    with open(tmp_path / "curves" / "cl_seed0.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "step", "loss", "deviation", "accuracy"]
    assert len(rows) == 1 + 3 * 13
    # accuracy is filled once per epoch, on its last step
    assert sum(bool(r[4]) for r in rows[1:]) == 3


def test_single_seed_has_no_std():
    report = run_experiment(tiny(seeds=(3,), epochs=1), write=False)
    assert report.accuracy_std is None
    assert report.summary()["accuracy_std"] is None


def snapshot(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_reports_are_byte_identical(tmp_path):
    run_experiment(tiny("fpls", output_dir=str(tmp_path)))
    first = snapshot(tmp_path)
    run_experiment(tiny("fpls", output_dir=str(tmp_path)))
    assert len(first) == 4 and snapshot(tmp_path) == first


def test_persisted_config_reproduces_the_run(tmp_path):
    first = run_experiment(tiny("fls", output_dir=str(tmp_path / "a")))
    again = ExperimentConfig.load(tmp_path / "a" / "config.json")
    assert again == first.config
    assert run_experiment(again, write=False).summary() == first.summary()


def test_record_timing_is_opt_in():
    summary = run_experiment(tiny(epochs=1, seeds=(0,), record_timing=True), write=False).summary()
    assert summary["wall_time_seconds"] >= 0


def test_config_validation():
    for bad in (dict(epochs=0), dict(seeds=()), dict(strategy="sgd"), dict(global_batch=0),
                dict(global_batch=10_000)):
        with pytest.raises(ValueError):
            tiny(**bad).validate()
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"batch": 3})


def test_config_round_trip_through_json():
    cfg = tiny("cl", seeds=(4, 2), weighting="batch")
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_compare_table(tmp_path):
    configs = [tiny(s, global_batch=B, seeds=(0,), epochs=1,
                    partition=PartitionSpec(K=K, C=2, alpha=0.3, seed=0))
               for K in (4, 8) for B in (16, 32) for s in ("gpsl", "fls", "fpls")]
    rows, _ = compare_strategies(configs, tmp_path)
    assert len(rows) == 12 and all(set(r) == set(COMPARE_COLUMNS) for r in rows)
    for row in rows:
        if row["strategy"] == "gpsl":
            assert row["steps_per_epoch"] == math.ceil(200 / row["B"])
    by_cell = {(r["strategy"], r["K"], r["B"]): r for r in rows}
    for K in (4, 8):
        for B in (16, 32):
            gpsl = by_cell["gpsl", K, B]["steps_per_epoch"]
            assert by_cell["fls", K, B]["steps_per_epoch"] > gpsl
            # ceil-inflated proportional batches drain every client no later than GPSL
            assert by_cell["fpls", K, B]["steps_per_epoch"] <= gpsl
    payload = json.loads((tmp_path / "comparison.json").read_text())
    assert payload["rows"] == rows
    assert (tmp_path / "comparison.csv").read_text().splitlines()[0] == ",".join(COMPARE_COLUMNS)


def test_effective_batch_inflates_with_many_clients():
    data = SyntheticSpec(classes=4, per_class_count=100, feature_dim=4, test_per_class=5)
    configs = [tiny(s, dataset=data, global_batch=128, seeds=(0,), epochs=1,
                    partition=PartitionSpec(kind="iid", K=256, seed=0))
               for s in ("fpls", "fls", "gpsl")]
    rows, _ = compare_strategies(configs)
    eff = {r["strategy"]: r["effective_batch"] for r in rows}
    assert eff["fpls"] >= 256 and eff["fls"] >= 256
    assert eff["gpsl"] == 128


def test_compare_rejects_mismatched_datasets():
    other = tiny(dataset=SyntheticSpec(classes=4, per_class_count=60, feature_dim=4))
    with pytest.raises(ValueError, match="same dataset"):
        compare_strategies([tiny(), other])
    shifted = tiny(partition=dataclasses.replace(tiny().partition, seed=5))
    with pytest.raises(ValueError, match="partition seed"):
        compare_strategies([tiny(), shifted])
