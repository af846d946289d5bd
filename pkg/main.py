"""Command-line entry point.

Subcommands: train, eval, analyze {jaccard|prototypes|routing}, sweep,
flops and schema. Exit codes: 0 success, 1 usage error, 2 data or
configuration error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config import settings
from hicl import HiclError, load_checkpoint, load_run_config
from hicl.analysis import jaccard_analysis, prototype_similarity_matrix, routing_matrix
from hicl.data import build_stream
from hicl.flops import count_flops
from hicl.models import run_config_schema
from hicl.reporting import csv_text
from hicl.trainer import evaluate_model, run_stream, sweep_buffer_sizes
from models import (AnalysisKind, AnalyzeRequest, EvalRequest, EvalResponse, FlopsRequest, SweepRequest, SweepRow,
                    TrainRequest)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    """Raised instead of argparse's own exit so usage problems map to exit code 1"""


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> CliParser:
    parser = CliParser(prog="hicl", description="HiCL continual-learning engine and benchmark harness")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train on a task stream")
    train.add_argument("--config", required=True)
    train.add_argument("--output-dir", default=None, help="Defaults to $HICL_OUTPUT_DIR/<run name>")
    train.add_argument("--ablate", action="store_true", help="Naive fine-tuning baseline")

    evaluate = commands.add_parser("eval", help="Re-evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", required=True)

    analyze = commands.add_parser("analyze", help="Diagnostics as CSV")
    analyze.add_argument("kind", choices=[k.value for k in AnalysisKind])
    analyze.add_argument("--checkpoint", required=True)
    analyze.add_argument("--output", default=None)
    analyze.add_argument("--pairs", type=int, default=200)
    analyze.add_argument("--normalized", action="store_true")

    sweep = commands.add_parser("sweep", help="Replay memory sweep")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--buffer-sizes", default=",".join(str(s) for s in settings.SWEEP_BUFFER_SIZES))
    sweep.add_argument("--output-dir", default=None)
    sweep.add_argument("--output", default=None)
    sweep.add_argument("--ablate", action="store_true")

    flops = commands.add_parser("flops", help="Analytic FLOPs report")
    flops.add_argument("--config", required=True)

    commands.add_parser("schema", help="Print the run-config JSON schema")
    return parser


def _emit(text: str, output: Optional[str]) -> None:
    if output is None:
        sys.stdout.write(text)
        return
    target = Path(output)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text, encoding="utf-8")
    logger.info(f"✅ Wrote {target}")


def cmd_train(args) -> int:
    config_path = args.config
    config = load_run_config(config_path)
    if args.ablate:
        config = config.ablated()
    request = TrainRequest(config=config_path, ablate=args.ablate,
                           output_dir=args.output_dir or str(Path(settings.OUTPUT_DIR) / config.name))
    report = run_stream(config, request.output_dir, settings.DATA_DIR)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_eval(args) -> int:
    request = EvalRequest(checkpoint=args.checkpoint)
    model, config, _ = load_checkpoint(request.checkpoint)
    stream = build_stream(config.data, config.seed, settings.DATA_DIR)
    result = evaluate_model(model, stream, len(model.task_classes) - 1)
    seen = sorted(result.task_il)
    response = EvalResponse(
        tasks_seen=len(model.task_classes),
        task_il=[result.task_il[t] for t in seen],
        class_il=[result.class_il[t] for t in seen],
        task_il_mean=sum(result.task_il.values()) / len(seen) if seen else 0.0,
        class_il_overall=result.class_il_overall,
    )
    print(response.model_dump_json(indent=2))
    return EXIT_OK


def cmd_analyze(args) -> int:
    request = AnalyzeRequest(kind=args.kind, checkpoint=args.checkpoint, output=args.output, pairs=args.pairs,
                             normalized=args.normalized)
    model, config, _ = load_checkpoint(request.checkpoint)
    if request.kind == AnalysisKind.PROTOTYPES:
        text = prototype_similarity_matrix(model).to_csv()
    else:
        stream = build_stream(config.data, config.seed, settings.DATA_DIR)
        if request.kind == AnalysisKind.JACCARD:
            report = jaccard_analysis(model, stream, config.seed, request.pairs)
            logger.info(f"Intra-task {report.intra:.4f}, inter-task {report.inter:.4f}")
            text = report.to_csv()
        else:
            text = routing_matrix(model, stream).to_csv(normalized=request.normalized)
    _emit(text, request.output)
    return EXIT_OK


def cmd_sweep(args) -> int:
    request = SweepRequest(config=args.config, buffer_sizes=args.buffer_sizes, output_dir=args.output_dir,
                           output=args.output, ablate=args.ablate)
    config = load_run_config(request.config)
    if request.ablate:
        config = config.ablated()
    reports = sweep_buffer_sizes(config, request.buffer_sizes, request.output_dir, settings.DATA_DIR)
    rows = [
        SweepRow(buffer_size=size, task_il=r.task_il_accuracy, class_il=r.class_il_accuracy,
                 routing_accuracy=r.routing_accuracy, mean_forgetting=r.mean_forgetting).model_dump()
        for size, r in zip(request.buffer_sizes, reports)
    ]
    _emit(csv_text(list(SweepRow.model_fields), rows), request.output)
    return EXIT_OK


def cmd_flops(args) -> int:
    request = FlopsRequest(config=args.config)
    report = count_flops(load_run_config(request.config).model)
    print(report.model_dump_json(indent=2))
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(run_config_schema(), indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "flops": cmd_flops,
    "schema": cmd_schema,
}


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        logger.error(f"❌ {e}")
        return EXIT_USAGE

    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        logger.error(f"❌ Invalid arguments: {e}")
        return EXIT_USAGE
    except (HiclError, OSError) as e:
        logger.error(f"❌ {args.command} failed: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
