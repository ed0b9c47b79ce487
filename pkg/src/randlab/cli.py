"""Command line entry points: run, sweep, rademacher, report.

Exit codes: 0 success, 2 configuration error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import BlobSpec, gen_blobs
from .errors import ConfigError, RandlabError
from .rademacher import (
    ConstantClass,
    SingletonClass,
    ThresholdClass,
    TrainedModelClass,
    bound_eval,
    rademacher_binary,
)
from .runner import RunConfig, fit_binary_model, report, run, sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parse_values(raw: str) -> list:
    values = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "full":
            values.append("full")
        else:
            number = float(token)
            values.append(int(number) if number.is_integer() else number)
    if not values:
        raise ConfigError("no sweep values given", field="values")
    return values


def _cmd_run(args) -> int:
    config = RunConfig.from_json(args.config)
    result = run(config, out_dir=args.out, on_epoch=None if args.quiet else _print_epoch)
    print(f"run {result.status}: {len(result.records)} epochs -> {result.out_dir}")
    if result.final is not None:
        print(
            f"final train acc {result.final.train_class_acc:.3f}, "
            f"test acc {result.final.test_class_acc:.3f}, "
            f"rnd acc {result.final.rnd_label_acc if result.final.rnd_label_acc is not None else 'n/a'}"
        )
    return EXIT_OK if result.status == "ok" else EXIT_DIVERGED


def _print_epoch(record) -> None:
    rnd = f" rnd {record.rnd_label_acc:.3f}" if record.rnd_label_acc is not None else ""
    print(f"epoch {record.epoch:4d} train {record.train_class_acc:.3f} test {record.test_class_acc:.3f}{rnd}")


def _cmd_sweep(args) -> int:
    config = RunConfig.from_json(args.config)
    axes = [(args.axis, _parse_values(args.values))]
    if args.axis2:
        if not args.values2:
            raise ConfigError("--axis2 needs --values2", field="values2")
        axes.append((args.axis2, _parse_values(args.values2)))
    out_dir = args.out or (config.out_dir or "sweep_out")
    result = sweep(config, axes, out_dir)
    bad = [row for row in result.rows if row["status"] != "ok"]
    print(f"sweep wrote {len(result.rows)} runs to {result.out_dir} ({len(bad)} failed)")
    return EXIT_OK if not bad else EXIT_DIVERGED


_CLASSES = {
    "constants": lambda cfg: ConstantClass(),
    "singleton": lambda cfg: SingletonClass(),
    "thresholds": lambda cfg: ThresholdClass(),
}


def _cmd_rademacher(args) -> int:
    with open(args.config) as fh:
        cfg = json.load(fh)
    name = cfg.get("class", "constants")
    mode = cfg.get("mode", "auto")
    trials = int(cfg.get("trials", 10_000))
    seed = int(cfg.get("seed", 0))
    confidence = float(cfg.get("confidence", 0.05))
    stream = np.random.default_rng(seed)

    if name in _CLASSES:
        m = int(cfg.get("points", 2))
        inputs = np.linspace(0.0, 1.0, m)
        estimate = rademacher_binary(_CLASSES[name](cfg), inputs, trials=trials, stream=stream, mode=mode)
        print(f"class={name} m={m} mode={estimate.mode}")
        print(f"capacity estimate {estimate.value:.6f} (std err {estimate.std_err:.6f}, {estimate.trials} draws)")
        return EXIT_OK

    if name != "model":
        raise ConfigError(f"unknown hypothesis class {name!r}", field="class")

    data = cfg.get("data", {})
    blob = BlobSpec(
        n_classes=2,
        train_per_class=int(data.get("train_per_class", 8)),
        test_per_class=int(data.get("test_per_class", 64)),
        shape=data.get("shape", 4),
        std=float(data.get("std", 0.5)),
        spacing=float(data.get("spacing", 1.0)),
        seed=int(data.get("seed", 0)),
    )
    train, test = gen_blobs(blob)
    fit_cfg = cfg.get("model", {})
    hidden = tuple(fit_cfg.get("hidden", [16, 8]))
    epochs = int(fit_cfg.get("epochs", 30))
    lr = float(fit_cfg.get("lr", 0.1))
    batch = int(fit_cfg.get("batch", 8))

    fit_seeds = iter(range(10_000_000))

    def fit(inputs, labels, _stream):
        predict, _ = fit_binary_model(inputs, labels, seed=next(fit_seeds) + seed, hidden=hidden, epochs=epochs, lr=lr, batch=batch)
        return predict

    predict, train_error = fit_binary_model(train.inputs, train.labels, seed=seed, hidden=hidden, epochs=epochs, lr=lr, batch=batch)
    test_error = float((predict(test.inputs) != test.labels).mean())
    estimate = rademacher_binary(TrainedModelClass(fit), train.inputs, trials=trials, stream=stream, mode="sample")
    bound = bound_eval(train_error, estimate.value, len(train), confidence)
    print(f"class=model m={len(train)} trials={estimate.trials}")
    print(f"capacity estimate {estimate.value:.4f} (std err {estimate.std_err:.4f})")
    print(f"train error {train_error:.4f}, test error {test_error:.4f}")
    print(f"upper bound at confidence {confidence}: {bound:.4f} ({'holds' if bound >= test_error else 'VIOLATED'})")
    return EXIT_OK


def _cmd_report(args) -> int:
    summary = report(args.run_dir)
    for key, value in summary.items():
        print(f"{key}: {value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one run config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=None, help="override the run directory")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid of runs over one or two axes")
    p_sweep.add_argument("config", type=Path)
    p_sweep.add_argument("--axis", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated values; 'full' allowed for copy_depth")
    p_sweep.add_argument("--axis2", default=None)
    p_sweep.add_argument("--values2", default=None)
    p_sweep.add_argument("--out", type=Path, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_rad = sub.add_parser("rademacher", help="empirical capacity estimate and bound")
    p_rad.add_argument("config", type=Path)
    p_rad.set_defaults(func=_cmd_rademacher)

    p_rep = sub.add_parser("report", help="summarize a finished run directory")
    p_rep.add_argument("run_dir", type=Path)
    p_rep.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RandlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
