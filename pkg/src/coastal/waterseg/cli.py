"""
Command-line entry point: `synth`, `train`, `eval`, `ablate` and
`gradcheck`. Every command writes its outputs plus one `run.json` manifest
into `--out`; `--from-manifest` replays a recorded run.
"""
import argparse
import csv
import io
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import logging as log

from . import __version__
from .common import Recorder
from .config import RunConfig, format_config, from_snapshot, load_config, snapshot
from .losses import TERMS
from .messages import GradcheckReport, RunManifest, ablation_csv
from .model import ToySegmenter, predict
from .morphology import binarize
from .netpbm import read_prob_mask, write_prob_mask
from .postprocess import count_false_components, refine
from .synth import make_benchmark, read_benchmark, write_benchmark
from .trainer import Comparison, ablate, ce_only, evaluate, find_stable_learning_rate
from .trainer import format_mean_std, gradcheck, gradcheck_model, random_instance, summarize
from .trainer import train
from .utils import ConfigError, DatasetError, GradcheckFailure, InvalidGrid, InvalidParameter
from .utils import NetpbmError, NumericalDivergence, atomic_write_text, deserialize, serialize


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

RUN_MANIFEST = "run.json"
PATH_FLAGS = ("--out", "--data", "--model", "--masks", "--config")
METRIC_COLUMNS = ("scene", "iou", "f1", "accuracy", "false_components")

Outputs = Dict[str, str]


def _write(out: Path, name: str, text: str, outputs: Outputs):
    atomic_write_text(out / name, text)
    outputs[name] = name


def cmd_synth(args, config: RunConfig, out: Path, inputs: Outputs) -> Outputs:
    synth = config.synth
    benchmark = make_benchmark(synth.count, synth.split, synth.seed, synth.height, synth.width)
    written = write_benchmark(benchmark, out)
    log.info(
        f"{len(benchmark.train)} training and {len(benchmark.validation)} validation scenes"
    )
    return {p.relative_to(out).as_posix(): p.relative_to(out).as_posix() for p in written}


def cmd_train(args, config: RunConfig, out: Path, inputs: Outputs) -> Outputs:
    benchmark = read_benchmark(args.data, config.train.seed)
    inputs["data"] = str(args.data)
    train_config = config.train
    if args.find_lr:
        rate = find_stable_learning_rate(benchmark, train_config)
        log.info(f"stable learning rate {rate:g}")
        train_config = replace(train_config, learning_rate=rate)
    if args.ce_only:
        train_config = ce_only(train_config)

    outputs: Outputs = {}
    _write(out, "config.txt", format_config(replace(config, train=train_config)), outputs)
    with Recorder(out) as recorder:
        model, report = train(benchmark, train_config, recorder)
    outputs["events.jsonl"] = "events.jsonl"
    _write(out, "model.json", model.to_json() + "\n", outputs)
    _write(out, "report.csv", report.to_csv(), outputs)
    _write(out, "summary.txt", report.summary_text(), outputs)

    if args.compare_baseline:
        _, baseline = train(benchmark, ce_only(train_config))
        comparison = Comparison(report, baseline)
        _write(out, "baseline_report.csv", baseline.to_csv(), outputs)
        _write(out, "baseline_summary.txt", baseline.summary_text(), outputs)
        _write(out, "comparison.txt", "\n".join(comparison.lines()) + "\n", outputs)
        log.info(
            f"late IoU variance {report.summary.late_iou_variance:.3e} vs CE-only "
            f"{baseline.summary.late_iou_variance:.3e}"
        )
    print(report.summary_text(), end="")
    return outputs


def _metrics_csv(rows: List[Dict[str, object]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        writer.writerow(
            [row["scene"]] + [repr(row[c]) for c in ("iou", "f1", "accuracy")] + [row["false_components"]]
        )
    aggregate = ["mean ± std"]
    for column in METRIC_COLUMNS[1:]:
        aggregate.append(format_mean_std(*summarize(float(row[column]) for row in rows)))
    writer.writerow(aggregate)
    return out.getvalue()


def cmd_eval(args, config: RunConfig, out: Path, inputs: Outputs) -> Outputs:
    benchmark = read_benchmark(args.data)
    inputs["data"] = str(args.data)
    scenes = {
        "train": benchmark.train,
        "validation": benchmark.validation,
        "all": benchmark.scenes,
    }[args.split]
    if not scenes:
        raise DatasetError(f"dataset {args.data} has no `{args.split}` scenes")

    model = None
    if args.model:
        inputs["model"] = str(args.model)
        try:
            model = ToySegmenter.from_json(Path(args.model).read_text())
        except OSError as e:
            raise DatasetError(f"cannot read model {args.model}: {e}") from e
    else:
        inputs["masks"] = str(args.masks)

    outputs: Outputs = {}
    rows = []
    threshold = config.postproc.threshold
    for scene in scenes:
        if model is not None:
            mask = predict(model, scene.image)
        else:
            mask = read_prob_mask(Path(args.masks) / f"{scene.name}.pgm")
        if args.postprocess:
            mask = refine(mask, config.postproc)
        metrics = evaluate(mask, scene.labels, threshold)
        rows.append(
            {
                "scene": scene.name,
                "iou": metrics.iou,
                "f1": metrics.f1,
                "accuracy": metrics.accuracy,
                "false_components": count_false_components(
                    binarize(mask, threshold), scene.labels, config.postproc.connectivity
                ),
            }
        )
        if args.write_masks:
            name = f"masks/{scene.name}.pgm"
            write_prob_mask(out / name, mask)
            outputs[name] = name

    text = _metrics_csv(rows)
    _write(out, "metrics.csv", text, outputs)
    print(text.splitlines()[-1])
    return outputs


def cmd_ablate(args, config: RunConfig, out: Path, inputs: Outputs) -> Outputs:
    benchmark = read_benchmark(args.data, config.train.seed)
    inputs["data"] = str(args.data)
    outputs: Outputs = {}
    with Recorder(out) as recorder:
        rows = ablate(
            benchmark, config.train, config.postproc if args.postprocess else None, recorder
        )
    outputs["events.jsonl"] = "events.jsonl"
    text = ablation_csv(rows)
    _write(out, "ablation.csv", text, outputs)
    print(text, end="")
    return outputs


def cmd_gradcheck(args, config: RunConfig, out: Path, inputs: Outputs) -> Outputs:
    tolerance = float(args.tolerance)
    combined = GradcheckReport(tolerance=tolerance)
    for i in range(args.instances):
        seed = config.train.seed + i
        report = gradcheck(
            gradcheck_model(seed),
            random_instance(args.size, seed),
            tolerance,
            config.train.loss,
            args.term,
            raise_on_failure=False,
        )
        for name, error in report.mask_errors.items():
            combined.mask_errors[name] = max(error, combined.mask_errors.get(name, 0.0))
        for name, error in report.theta_errors.items():
            combined.theta_errors[name] = max(error, combined.theta_errors.get(name, 0.0))

    lines = combined.lines()
    lines.append(f"{'PASS' if combined.passed else 'FAIL'} at tolerance {tolerance:g}")
    outputs: Outputs = {}
    _write(out, "gradcheck.txt", "\n".join(lines) + "\n", outputs)
    print("\n".join(lines))
    if not combined.passed:
        # outputs stay on disk; the manifest is written by the caller
        raise GradcheckFailure(combined)
    return outputs


COMMANDS: Dict[str, Callable] = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--out", required=True, type=Path, help="run directory")
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key; repeatable, applied after --config",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coastal-waterseg", description="Robust coastal water segmentation toolkit"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    parser.add_argument("--from-manifest", type=Path, help="replay the run recorded in a run.json")
    parser.add_argument("--replay-out", type=Path, help="write the replayed run here instead")
    commands = parser.add_subparsers(dest="command")

    synth = commands.add_parser("synth", help="generate a synthetic coastline benchmark")
    _common(synth)
    synth.add_argument("--count", dest="synth.count")
    synth.add_argument("--split", dest="synth.split", help="training fraction")
    synth.add_argument("--height", dest="synth.height")
    synth.add_argument("--width", dest="synth.width")
    synth.add_argument("--seed", dest="synth.seed")

    train = commands.add_parser("train", help="train the segmenter on a dataset")
    _common(train)
    train.add_argument("--data", required=True, type=Path)
    train.add_argument("--seed", dest="train.seed")
    train.add_argument("--epochs", dest="train.epochs")
    train.add_argument("--lr", dest="train.learning_rate")
    train.add_argument("--batch-size", dest="train.batch_size")
    train.add_argument("--find-lr", action="store_true", help="halve --lr until descent is stable")
    baseline = train.add_mutually_exclusive_group()
    baseline.add_argument("--ce-only", action="store_true", help="train the cross-entropy baseline")
    baseline.add_argument(
        "--compare-baseline", action="store_true", help="also train the CE-only baseline"
    )

    evaluate_ = commands.add_parser("eval", help="score predicted masks against labels")
    _common(evaluate_)
    evaluate_.add_argument("--threshold", dest="postproc.threshold")
    evaluate_.add_argument("--data", required=True, type=Path)
    source = evaluate_.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", type=Path, help="model.json written by train")
    source.add_argument("--masks", type=Path, help="directory of <scene>.pgm probability masks")
    evaluate_.add_argument("--split", choices=("train", "validation", "all"), default="validation")
    evaluate_.add_argument("--postprocess", action="store_true", help="refine masks first")
    evaluate_.add_argument("--write-masks", action="store_true")

    ablation = commands.add_parser("ablate", help="leave-one-term-out ablation table")
    _common(ablation)
    ablation.add_argument("--data", required=True, type=Path)
    ablation.add_argument("--seed", dest="train.seed")
    ablation.add_argument("--epochs", dest="train.epochs")
    ablation.add_argument("--postprocess", action="store_true", help="add refined IoU column")

    check = commands.add_parser("gradcheck", help="compare analytic and numeric gradients")
    _common(check)
    check.add_argument("--term", action="append", choices=TERMS + ("composite",))
    check.add_argument("--seed", dest="train.seed")
    check.add_argument("--tolerance", default="1e-5")
    check.add_argument("--size", type=int, default=8)
    check.add_argument("--instances", type=int, default=3)
    return parser


def flag_overrides(args: argparse.Namespace) -> List[str]:
    """`section.key=value` for every dotted flag given on the command line."""
    overrides = []
    for key, value in sorted(vars(args).items()):
        if "." in key and value is not None:
            overrides.append(f"{key}={value}")
    return overrides


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = log.DEBUG if verbose else log.WARNING if quiet else log.INFO
    log.basicConfig(
        level=level, format="%(levelname)s: %(message)s", stream=sys.stderr, force=True
    )


def _absolute_argv(argv: Sequence[str]) -> List[str]:
    absolute = []
    expect_path = False
    for token in argv:
        if expect_path:
            absolute.append(str(Path(token).resolve()))
            expect_path = False
            continue
        flag, sep, value = token.partition("=")
        if flag in PATH_FLAGS and sep:
            absolute.append(f"{flag}={Path(value).resolve()}")
        else:
            absolute.append(token)
            expect_path = token in PATH_FLAGS
    return absolute


def run(args: argparse.Namespace, argv: Sequence[str], config: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()
    inputs: Outputs = {}
    manifest = RunManifest(
        command=args.command,
        argv=_absolute_argv(argv),
        seed=config.synth.seed if args.command == "synth" else config.train.seed,
        config=snapshot(config),
        inputs=inputs,
        version=__version__,
    )
    try:
        manifest.outputs = COMMANDS[args.command](args, config, out, inputs)
    finally:
        manifest.duration_seconds = time.monotonic() - started
        atomic_write_text(out / RUN_MANIFEST, serialize(manifest) + "\n")
    return EXIT_OK


def replay(path: Path, replay_out: Optional[Path]) -> int:
    try:
        manifest = deserialize(Path(path).read_text(), RunManifest)
    except OSError as e:
        raise DatasetError(f"cannot read run manifest {path}: {e}") from e
    argv = list(manifest.argv)
    if replay_out is not None:
        argv = [
            str(replay_out.resolve()) if i > 0 and argv[i - 1] == "--out" else token
            for i, token in enumerate(argv)
        ]
        argv = [f"--out={replay_out.resolve()}" if t.startswith("--out=") else t for t in argv]
    args = build_parser().parse_args(argv)
    log.info(f"replaying `{manifest.command}` from {path}")
    return run(args, argv, from_snapshot(manifest.config))


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        if args.from_manifest is not None:
            return replay(args.from_manifest, args.replay_out)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_CONFIG
        config = load_config(args.config, list(args.set) + flag_overrides(args))
        return run(args, argv, config)
    except (ConfigError, InvalidParameter, InvalidGrid) as e:
        log.error(str(e))
        return EXIT_CONFIG
    except (DatasetError, NetpbmError, OSError) as e:
        log.error(str(e))
        return EXIT_IO
    except NumericalDivergence as e:
        log.error(f"{e}; rerun with a smaller --lr or --find-lr")
        return EXIT_NUMERICAL
    except GradcheckFailure as e:
        log.error(str(e))
        return EXIT_NUMERICAL
