"""Command line entry point.

    wscl run --config exp.json [--seed N] [--out DIR] [--set key=value ...]
    wscl report RUN_DIR [--no-figures]
    wscl gen-data --config exp.json --seed N --out DIR

Exit codes: 0 success, 1 runtime failure (partial artifacts preserved with a
failure marker), 2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import build_stream, load_config
from .datasets import LabeledDataset, save_dataset
from .errors import ConfigError, WsclError
from .runner import emit_report, run_experiment

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wscl",
                                     description="wake-sleep continual learning runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("--config", required=True, help="path to the experiment JSON")
    run.add_argument("--seed", type=int, default=None,
                     help="run only this seed (replaces the config's seed list)")
    run.add_argument("--out", default=None, help="output directory override")
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="dotted-path config override")
    run.add_argument("--no-report", action="store_true",
                     help="skip report emission after the runs")

    report = sub.add_parser("report", help="emit tables and figures for a run directory")
    report.add_argument("run_dir", help="directory holding run-*.json records")
    report.add_argument("--no-figures", action="store_true", help="tables only")

    gen = sub.add_parser("gen-data", help="write the config's synthetic data as binary files")
    gen.add_argument("--config", required=True, help="path to the experiment JSON")
    gen.add_argument("--seed", type=int, default=0, help="generation seed")
    gen.add_argument("--out", required=True, help="target directory")
    return parser


def _cmd_run(args) -> int:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seeds=[{args.seed}]")
    if args.out is not None:
        overrides.append(f"output_dir={json.dumps(args.out)}")
    exp = load_config(args.config, overrides)
    code = run_experiment(exp)
    if code == 0 and not args.no_report:
        emit_report(Path(exp.output_dir))
    return code


def _cmd_report(args) -> int:
    emit_report(args.run_dir, figures=not args.no_figures)
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    exp = load_config(args.config)
    stream, dream = build_stream(exp.data, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feats = np.concatenate([np.concatenate([tr.features, te.features])
                            for tr, te in stream.tasks])
    labels = np.concatenate([np.concatenate([tr.labels, te.labels])
                             for tr, te in stream.tasks])
    save_dataset(LabeledDataset(feats, labels, stream.num_classes, "stream"),
                 out / "stream.bin")
    written = [out / "stream.bin"]
    if dream is not None:
        save_dataset(dream.dataset, out / "dream.bin")
        written.append(out / "dream.bin")
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_gen_data(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WsclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
