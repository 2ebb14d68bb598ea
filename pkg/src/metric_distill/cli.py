"""Command-line entry point: ``metric-distill <command> --config run.json``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .fixture import fixture_training_config, make_fixture
from .pipeline import STAGES, PipelineConfig, PipelineError, ablation_hard_negatives, run_pipeline, write_fixture

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _override(values: list[str]) -> dict:
    out = {}
    for item in values:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        out[key] = _parse_value(value)
    return out


def load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.load(args.config)
    overrides = _override(args.set or [])
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if overrides:
        merged = config.to_dict()
        merged.update(overrides)
        config = PipelineConfig.from_dict(merged)
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metric-distill", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="flat JSON pipeline config")
    common.add_argument("--seed", type=int, help="override the training seed")
    common.add_argument("--output-dir", help="override the artifact directory")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)"
    )

    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    sub.add_parser("run-all", parents=[common], help="run every stage in order")
    sub.add_parser("ablate-negatives", parents=[common], help="compare tfidf and concept_match hard negatives")

    fx = sub.add_parser("make-fixture", help="write the synthetic fixture and a matching config")
    fx.add_argument("--out", required=True, help="directory to create")
    fx.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.command == "make-fixture":
            write_fixture(make_fixture(args.seed), args.out, fixture_training_config(args.seed))
            print(f"wrote fixture to {args.out}; config at {args.out}/config.json")
            return 0
        config = load_config(args)
        if args.command == "ablate-negatives":
            for name, report in ablation_hard_negatives(config).items():
                print(name, json.dumps(report.to_dict(), sort_keys=True))
            return 0
        stages = STAGES if args.command == "run-all" else (args.command,)
        out = run_pipeline(replace(config, stages=stages))
        if "eval" in stages:
            with open(out / "report.json", encoding="utf-8") as fh:
                for name, report in json.load(fh)["reports"].items():
                    print(name, json.dumps(report, sort_keys=True))
        return 0
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: stage '{getattr(args, 'command', 'setup')}': {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
