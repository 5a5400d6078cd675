"""Command-line entry point: ``pslsim {partition,schedule,bound,analyze,train,compare}``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import re
import sys
from pathlib import Path


from . import deviation
from .data import SyntheticSpec, make_gaussian_mixture
from .harness import (ALL_STRATEGIES, ExperimentConfig, compare_strategies,
                      default_output_dir, run_experiment)
from .partition import (EXTENDED_DIRICHLET, IID, PartitionSpec, load_partition_payload,
                        make_partition, partition_from_dict, save_partition)
from .sampling import STRATEGIES, BatchSchedule, make_schedule, materialize_batches


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_help()}")


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def format_number(value: float) -> str:
    text = f"{value:.3g}"
    return re.sub(r"e([+-])0*(\d)", r"e\1\2", text).replace("e+", "e")


def _add_dataset_flags(p):
    d = SyntheticSpec()
    g = p.add_argument_group("synthetic dataset (flags override --config)")
    g.add_argument("--num-classes", type=int, help=f"classes M (default {d.classes})")
    g.add_argument("--per-class", type=int, help=f"training samples per class (default {d.per_class_count})")
    g.add_argument("--feature-dim", type=int, help=f"feature dimension (default {d.feature_dim})")
    g.add_argument("--class-separation", type=float, help=f"radius of class means (default {d.class_separation})")
    g.add_argument("--noise-sigma", type=float, help=f"per-feature noise scale (default {d.noise_sigma})")
    g.add_argument("--data-seed", type=int, help=f"dataset seed (default {d.seed})")


def _add_partition_flags(p, seed_required=False):
    d = PartitionSpec()
    g = p.add_argument_group("partition (flags override --config)")
    g.add_argument("--kind", choices=[IID, EXTENDED_DIRICHLET], help=f"partition kind (default {d.kind})")
    g.add_argument("--clients", type=int, help=f"client count K (default {d.K})")
    g.add_argument("--classes-per-client", type=int, help=f"classes per client C (default {d.C})")
    g.add_argument("--alpha", type=float, help=f"Dirichlet concentration (default {d.alpha})")
    if seed_required:
        g.add_argument("--seed", type=int, required=True, help="partition seed (required)")
    else:
        g.add_argument("--partition-seed", type=int, help=f"partition seed (default {d.seed})")


def _add_train_flags(p):
    d = ExperimentConfig()
    p.add_argument("--config", help="experiment config JSON; flags override its fields")
    p.add_argument("--epochs", type=int, help=f"epochs E (default {d.epochs})")
    p.add_argument("--seeds", type=_ints, help="comma-separated run seeds (required unless in --config)")
    p.add_argument("--lr", type=float, help=f"learning rate (default {d.optimizer.lr})")
    p.add_argument("--momentum", type=float, help=f"momentum (default {d.optimizer.momentum})")
    p.add_argument("--weight-decay", type=float, help=f"L2 weight decay (default {d.optimizer.weight_decay})")
    p.add_argument("--weighting", choices=["size", "batch"], help=f"client gradient weights (default {d.weighting})")
    p.add_argument("--out-dir", help="output directory (default $PSLSIM_OUTPUT_DIR or ./report)")
    p.add_argument("--record-timing", action="store_true", help="add wall-clock seconds to the reports (makes them run-dependent)")
    _add_dataset_flags(p)
    _add_partition_flags(p)


def build_parser() -> Parser:
    parser = Parser(prog="pslsim", description="Parallel split learning batch-sampling simulator")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("partition", help="split a synthetic dataset among clients",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--config", help="experiment config JSON providing dataset/partition fields")
    _add_dataset_flags(p)
    _add_partition_flags(p, seed_required=True)
    p.add_argument("--out", help="output JSON (default <output dir>/partition.json)")
    p.add_argument("--json", action="store_true", help="print a JSON summary")

    p = sub.add_parser("schedule", help="local batch-size schedule for one epoch",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--global-batch", type=int, required=True, help="global batch size B")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--partition", help="partition JSON written by `partition`")
    src.add_argument("--sizes", type=_ints, help="comma-separated client dataset sizes")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="write the schedule JSON here instead of stdout")
    p.add_argument("--json", action="store_true", help="print the schedule as JSON")

    p = sub.add_parser("bound", help="closed-form deviation tail bound",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--eps", type=float, required=True, help="per-class deviation epsilon")
    p.add_argument("--batch", type=int, required=True, help="batch size B")
    p.add_argument("--pool", type=int, required=True, help="pool size D0")
    p.add_argument("--classes", type=int, required=True, help="class count M")
    p.add_argument("--unclipped", action="store_true", help="do not clip the bound at 1")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("analyze", help="deviation report for a schedule and partition",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--schedule", required=True, help="schedule JSON")
    p.add_argument("--partition", required=True, help="partition JSON")
    p.add_argument("--trials", type=int, required=True, help="Monte Carlo first-step batches")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--eps", type=_floats, default=[0.05, 0.1, 0.2], help="comma-separated epsilons")
    p.add_argument("--smoothing", type=float, default=deviation.EMA_FACTOR, help="EMA factor for the smoothed curve")
    p.add_argument("--out", required=True, help="report JSON; a per-step CSV is written next to it")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("train", help="run one experiment config end to end")
    p.add_argument("--strategy", choices=ALL_STRATEGIES, help="sampling strategy (default gpsl)")
    p.add_argument("--global-batch", type=int, help="global batch size B (default 128)")
    _add_train_flags(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("compare", help="run a strategy x K x B grid and tabulate it")
    p.add_argument("--strategies", type=lambda s: s.split(","), default=list(ALL_STRATEGIES),
                   help="comma-separated strategies (default all)")
    p.add_argument("--clients-grid", type=_ints, help="comma-separated K values (default: config K)")
    p.add_argument("--batch-grid", type=_ints, help="comma-separated B values (default: config B)")
    _add_train_flags(p)
    p.add_argument("--json", action="store_true")
    parser.subcommands = sub.choices
    return parser


def _override(obj, **fields):
    given = {k: v for k, v in fields.items() if v is not None}
    return dataclasses.replace(obj, **given) if given else obj


def resolve_config(args, need_seeds=True) -> ExperimentConfig:
    raw = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    config = ExperimentConfig.from_dict(raw)
    dataset = _override(config.dataset, classes=args.num_classes, per_class_count=args.per_class,
                        feature_dim=args.feature_dim, class_separation=args.class_separation,
                        noise_sigma=args.noise_sigma, seed=args.data_seed)
    pseed = args.seed if args.command == "partition" else args.partition_seed
    partition = _override(config.partition, kind=args.kind, K=args.clients,
                          C=args.classes_per_client, alpha=args.alpha, seed=pseed)
    config = dataclasses.replace(config, dataset=dataset, partition=partition)
    if not need_seeds:
        return config
    if args.seeds is None and "seeds" not in raw:
        raise UsageError("--seeds is required (or a config file that lists seeds)")
    optimizer = _override(config.optimizer, lr=args.lr, momentum=args.momentum,
                          weight_decay=args.weight_decay)
    config = dataclasses.replace(config, optimizer=optimizer)
    config = _override(config, seeds=tuple(args.seeds) if args.seeds else None,
                       epochs=args.epochs, weighting=args.weighting,
                       strategy=getattr(args, "strategy", None),
                       global_batch=getattr(args, "global_batch", None))
    out_dir = args.out_dir or config.output_dir or default_output_dir()
    return dataclasses.replace(config, output_dir=out_dir,
                               record_timing=config.record_timing or args.record_timing)


def _emit(payload, as_json, text):
    if as_json:
        print(json.dumps(payload, indent=2))
    else:
        print(text)


def _dataset_from_payload(payload):
    if "dataset" not in payload:
        raise ValueError("partition file carries no dataset spec; write it with `pslsim partition`")
    train, _ = make_gaussian_mixture(SyntheticSpec(**payload["dataset"]))
    return train


def cmd_partition(args):
    config = resolve_config(args, need_seeds=False)
    config.dataset.validate()
    train, _ = make_gaussian_mixture(config.dataset)
    part = make_partition(train, config.partition)
    out = Path(args.out or Path(default_output_dir()) / "partition.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_partition(part, out, {"dataset": dataclasses.asdict(config.dataset)})
    summary = {
        "out": str(out),
        "K": part.K,
        "client_sizes": part.client_sizes.tolist(),
        "classes_per_client": part.classes_per_client().tolist(),
        "warnings": part.warnings,
    }
    for w in part.warnings:
        print(f"warning: {w}", file=sys.stderr)
    _emit(summary, args.json,
          f"wrote {out}: K={part.K}, sizes={summary['client_sizes']}")


def cmd_schedule(args):
    if args.partition:
        payload = load_partition_payload(args.partition)
        sizes = [len(ix) for ix in payload["client_indices"]]
    else:
        sizes = args.sizes
    schedule = make_schedule(args.strategy, sizes, args.global_batch, args.seed)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        schedule.save(args.out)
    payload = schedule.to_dict()
    payload["T"] = schedule.T
    text = "\n".join([f"strategy={schedule.strategy} B={schedule.global_target} T={schedule.T}"]
                     + [f"step {t + 1}: {row.tolist()} (global {int(row.sum())})"
                        for t, row in enumerate(schedule.steps)])
    _emit(payload, args.json, text)


def cmd_bound(args):
    inputs = deviation.BoundInputs(args.eps, args.batch, args.pool, args.classes)
    value = deviation.serfling_union_bound(inputs, clip=not args.unclipped)
    _emit({"bound": value, "log_bound": deviation.serfling_log_bound(inputs),
           "clipped": not args.unclipped}, args.json, format_number(value))


def cmd_analyze(args):
    schedule = BatchSchedule.load(args.schedule)
    payload = load_partition_payload(args.partition)
    train = _dataset_from_payload(payload)
    part = partition_from_dict(payload, train.labels)
    beta0 = part.pool_distribution()
    batches = materialize_batches(part, schedule, args.seed)
    per_step = deviation.batch_deviations(batches, train.labels, beta0)
    tails, bounds = [], []
    if args.trials > 0:
        tails = deviation.empirical_deviation_tail(schedule.strategy, part, train.labels,
                                                   schedule.global_target, args.eps,
                                                   args.trials, args.seed)
        B = min(schedule.global_target, part.pool_size)
        for e in args.eps:
            try:
                bounds.append(deviation.serfling_union_bound(
                    deviation.BoundInputs(e, B, part.pool_size, part.num_classes)))
            except ValueError:
                bounds.append(None)
    report = deviation.DeviationReport(schedule.strategy, per_step, list(args.eps), tails,
                                       bounds, args.smoothing)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    body = report.to_dict()
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2)
        fh.write("\n")
    smoothed = deviation.ema(per_step, args.smoothing)
    with open(out.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "global_size", "deviation", "smoothed"])
        for t, (row, d, s) in enumerate(zip(schedule.steps, per_step, smoothed)):
            w.writerow([t, int(row.sum()), repr(float(d)), repr(float(s))])
    _emit(body, args.json,
          f"wrote {out}: {len(per_step)} steps, mean deviation {report.mean:.4f}")


def _summary_text(s):
    std = "n/a" if s["accuracy_std"] is None else f"{100 * s['accuracy_std']:.2f}"
    return (f"{s['strategy']:>5} K={s['K']:<4} B={s['B']:<4} acc={100 * s['accuracy_mean']:.2f}"
            f" +- {std}  dev={s['mean_deviation']:.3f}  T/epoch={s['steps_per_epoch']:.1f}")


def cmd_train(args):
    config = resolve_config(args)
    config.validate()
    report = run_experiment(config)
    summary = report.summary()
    print(f"reports written to {config.output_dir}", file=sys.stderr)
    _emit(summary, args.json, _summary_text(summary))


def cmd_compare(args):
    base = resolve_config(args)
    for s in args.strategies:
        if s not in ALL_STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}; choose from {ALL_STRATEGIES}")
    configs = []
    for K in args.clients_grid or [base.partition.K]:
        for B in args.batch_grid or [base.global_batch]:
            for s in args.strategies:
                cfg = dataclasses.replace(base, strategy=s, global_batch=B,
                                          partition=dataclasses.replace(base.partition, K=K))
                cfg.validate()
                configs.append(cfg)
    rows, _ = compare_strategies(configs, base.output_dir, base.record_timing)
    print(f"comparison written to {base.output_dir}", file=sys.stderr)
    _emit(rows, args.json, "\n".join(_summary_text(r) for r in rows))


COMMANDS = {"partition": cmd_partition, "schedule": cmd_schedule, "bound": cmd_bound,
            "analyze": cmd_analyze, "train": cmd_train, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        print(parser.format_help(), file=sys.stderr)
        return 1
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        if extra:
            # report stray flags against the subcommand so its help is shown
            parser.subcommands[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError, RuntimeError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
