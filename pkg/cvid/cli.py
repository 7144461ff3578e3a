#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
CVID CLI: synthesis, training, Monte-Carlo deraining and evaluation

Exit codes: 0 success, 1 runtime failure, 2 usage error.

License: MIT
"""

import argparse
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

# Lazy imports for fast startup: numpy/torch load inside the handlers.

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

OUTPUT_CHOICES = ["rich", "json", "markdown"]


class UsageError(Exception):
    """Flag combination that argparse cannot reject on its own."""


def positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}")
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {number}")
    return number


def non_negative_int(value: str) -> int:
    number = int(value)
    if number < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {number}")
    return number


def non_negative_float(value: str) -> float:
    number = float(value)
    if number < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {number}")
    return number


def sample_counts(value: str) -> List[int]:
    try:
        counts = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")
    if not counts or min(counts) < 1:
        raise argparse.ArgumentTypeError("sample counts must be positive integers")
    return counts


def metric_list(value: str) -> List[str]:
    from .metrics.quality import METRIC_NAMES

    names = [part.strip() for part in value.split(",") if part.strip()]
    unknown = sorted(set(names) - set(METRIC_NAMES))
    if not names or unknown:
        raise argparse.ArgumentTypeError(
            f"unknown metric(s) {', '.join(unknown) or '(none given)'} "
            f"(choices: {', '.join(METRIC_NAMES)})"
        )
    return names


def build_parser() -> argparse.ArgumentParser:
    from . import __version__

    parser = argparse.ArgumentParser(
        prog="cvid",
        description="CVID - channel-wise conditional variational image deraining",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  cvid synth --clean-dir scenes --generate-scenes 8 --out-dir data --count 200 --patch-size 32
  cvid train --manifest data --out run --epochs 4 --batch-size 32
  cvid derain --checkpoint run/checkpoint.pt --input rainy.png --out derained --samples 100
  cvid eval --pairs derained data/clean --metrics psnr,ssim,ced,bcp --out report.json
  cvid check
        """,
    )
    parser.add_argument("--version", action="version", version=f"CVID {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log progress (INFO)")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only log errors")
    parser.add_argument(
        "--threads",
        type=non_negative_int,
        default=1,
        help="Torch CPU threads; 1 keeps runs bit-reproducible, 0 leaves torch's default (default: 1)",
    )
    sub = parser.add_subparsers(dest="command", metavar="{synth,train,derain,eval,check}")
    sub.required = True

    synth = sub.add_parser("synth", help="Synthesize paired clean/rainy/density patches")
    synth.add_argument("--clean-dir", required=True, type=Path, help="Directory of clean images")
    synth.add_argument("--out-dir", required=True, type=Path, help="Dataset output directory")
    synth.add_argument("--count", type=positive_int, default=200, help="Pairs (default: 200)")
    synth.add_argument("--patch-size", type=positive_int, default=32, help="Patch side (default: 32)")
    synth.add_argument("--seed", type=non_negative_int, default=0)
    synth.add_argument("--streaks", type=non_negative_int, default=60, help="Streaks per patch")
    synth.add_argument("--length", type=float, nargs=2, metavar=("MIN", "MAX"), default=(8.0, 24.0))
    synth.add_argument("--angle", type=float, nargs=2, metavar=("MIN", "MAX"), default=(-20.0, 20.0))
    for channel, default in zip("rgb", ((0.55, 0.85), (0.4, 0.7), (0.25, 0.55))):
        synth.add_argument(
            f"--intensity-{channel}",
            type=float,
            nargs=2,
            metavar=("MIN", "MAX"),
            default=default,
            help=f"{channel.upper()} streak intensity range (default: {default[0]} {default[1]})",
        )
    synth.add_argument("--thickness", type=float, default=1.0)
    synth.add_argument("--blur", type=non_negative_float, default=0.0, help="Gaussian blur σ")
    synth.add_argument("--workers", type=positive_int, default=1)
    synth.add_argument(
        "--generate-scenes",
        type=non_negative_int,
        default=0,
        metavar="N",
        help="Write N procedural clean scenes into --clean-dir first",
    )
    synth.add_argument("--scene-size", type=positive_int, default=96)

    train = sub.add_parser("train", help="Train a channel-wise CVID network")
    train.add_argument("--manifest", required=True, type=Path, help="Manifest file or dataset dir")
    train.add_argument("--out", required=True, type=Path, help="Run directory")
    train.add_argument("--validation", type=Path, help="Validation manifest")
    train.add_argument("--beta", type=non_negative_float, default=0.1, help="KL weight (default: 0.1)")
    train.add_argument(
        "--lambda", dest="lam", type=non_negative_float, default=1.0, help="SDE weight (default: 1)"
    )
    train.add_argument("--lr", type=float, default=0.01, help="Initial learning rate (default: 0.01)")
    train.add_argument(
        "--lr-decay", type=float, default=0.1, help="Per-epoch lr multiplier (default: 0.1)"
    )
    train.add_argument("--epochs", type=positive_int, default=4)
    train.add_argument("--batch-size", type=positive_int, default=32)
    train.add_argument("--patch-size", type=positive_int, help="Default: the manifest's")
    train.add_argument("--weight-decay", type=non_negative_float, default=1e-10)
    train.add_argument("--max-steps", type=positive_int)
    train.add_argument("--log-every", type=positive_int, default=10)
    train.add_argument("--seed", type=non_negative_int, default=0)
    train.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    train.add_argument("--depth", type=positive_int, default=7)
    train.add_argument("--filters", type=positive_int, default=16)
    train.add_argument("--no-sde", action="store_true", help="Ablate the density module")
    train.add_argument(
        "--no-cw", action="store_true", help="One joint RGB branch instead of per-channel branches"
    )
    train.add_argument("-o", "--output", choices=OUTPUT_CHOICES, default="rich")

    derain = sub.add_parser("derain", help="Monte-Carlo deraining with a trained checkpoint")
    derain.add_argument("--checkpoint", required=True, type=Path)
    derain.add_argument(
        "--input", required=True, type=Path, help="Image, directory of images, or manifest"
    )
    derain.add_argument("--out", required=True, type=Path, help="Output directory")
    derain.add_argument("--samples", type=positive_int, default=100, help="n (default: 100)")
    derain.add_argument("--seed", type=non_negative_int, default=0)
    derain.add_argument("--emit-intermediates", action="store_true")
    derain.add_argument("--sigma-scale", type=non_negative_float, default=1.0)
    derain.add_argument(
        "--sweep", type=sample_counts, help="Comma-separated n values, e.g. 1,10,100"
    )
    derain.add_argument("-o", "--output", choices=OUTPUT_CHOICES, default="rich")

    evaluate = sub.add_parser("eval", help="Score restored images against ground truth")
    evaluate.add_argument(
        "--pairs",
        required=True,
        type=Path,
        nargs="+",
        metavar="PATH",
        help="A manifest (scores rainy vs clean) or ESTIMATE_DIR CLEAN_DIR",
    )
    evaluate.add_argument("--metrics", type=metric_list, default=["psnr", "ssim", "ced", "bcp"])
    evaluate.add_argument("--out", required=True, type=Path, help="Report JSON path")
    evaluate.add_argument("--ced-dir", type=Path, help="Export CED curves here")
    evaluate.add_argument("--psnr-cap", type=float, default=100.0)
    evaluate.add_argument("--bright-radius", type=non_negative_int, default=2)
    evaluate.add_argument("--bright-tolerance", type=non_negative_float, default=1.0 / 255.0)
    evaluate.add_argument("-o", "--output", choices=OUTPUT_CHOICES, default="rich")

    check = sub.add_parser("check", help="Run the fast invariant suite")
    check.add_argument("--only", nargs="+", metavar="NAME", help="Subset of checks to run")
    check.add_argument("--out", type=Path, help="Also write the results as JSON")
    check.add_argument("-o", "--output", choices=OUTPUT_CHOICES, default="rich")
    return parser


def emit(payload: Dict, output: str) -> None:
    from .output.formatters import JSONFormatter, MarkdownFormatter, RichFormatter
    from .utils.console import console

    if output == "json":
        console.print(JSONFormatter.format_output(payload), markup=False, emoji=False, soft_wrap=True)
    elif output == "markdown":
        console.print(MarkdownFormatter.format_output(payload), markup=False, emoji=False, soft_wrap=True)
    else:
        RichFormatter(console).format_output(payload)


def cmd_synth(args: argparse.Namespace) -> int:
    from .core.dataset import MANIFEST_NAME, build_dataset
    from .core.errors import ConfigurationError
    from .core.rain import RainParams
    from .core.scenes import write_scenes
    from .utils.console import console

    try:
        params = RainParams(
            streak_count=args.streaks,
            length_range=tuple(args.length),
            angle_range=tuple(args.angle),
            intensity_ranges=(
                tuple(args.intensity_r),
                tuple(args.intensity_g),
                tuple(args.intensity_b),
            ),
            thickness=args.thickness,
            blur_radius=args.blur,
            seed=args.seed,
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc

    if args.generate_scenes:
        write_scenes(args.clean_dir, args.generate_scenes, args.scene_size, args.seed)
    manifest = build_dataset(
        args.clean_dir, params, args.count, args.patch_size, args.out_dir, workers=args.workers
    )
    console.print(str(manifest.root / MANIFEST_NAME), markup=False, emoji=False, soft_wrap=True)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from rich.status import Status

    from .core.dataset import DatasetManifest
    from .core.errors import ConfigurationError
    from .execution.trainer import TrainConfig, train
    from .ml.networks import NetworkConfig
    from .utils.console import err_console

    manifest = DatasetManifest.load(args.manifest)
    validation = DatasetManifest.load(args.validation) if args.validation else None
    try:
        config = TrainConfig(
            beta=args.beta,
            lam=args.lam,
            lr=args.lr,
            lr_decay=args.lr_decay,
            epochs=args.epochs,
            batch_size=args.batch_size,
            patch_size=args.patch_size or manifest.patch_size,
            weight_decay=args.weight_decay,
            seed=args.seed,
            max_steps=args.max_steps,
            log_every=args.log_every,
            dtype=args.dtype,
            network=NetworkConfig(
                depth=args.depth,
                filters=args.filters,
                use_sde=not args.no_sde,
                channel_wise=not args.no_cw,
            ),
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.out)
    status = None
    if not args.quiet:
        status = Status(
            f"[bold blue]→[/bold blue] training on [bold white]{manifest.count}[/bold white] pairs",
            console=err_console,
        )
        status.start()

    def progress(record) -> None:
        status.update(
            f"[bold blue]→[/bold blue] [cyan]step {record.step}[/cyan] epoch {record.epoch} "
            f"[dim]│[/dim] total [yellow]{record.total:.4f}[/yellow]"
        )

    try:
        checkpoint, log = train(
            manifest,
            config,
            validation=validation,
            checkpoint_dir=out,
            on_step=progress if status else None,
        )
    finally:
        if status:
            status.stop()
    checkpoint_path = checkpoint.save(out / "checkpoint.pt")
    log_path = log.write(out / "train_log.jsonl")

    last = log.steps[-1] if log.steps else None
    emit(
        {
            "kind": "training",
            "checkpoint": str(checkpoint_path),
            "log": str(log_path),
            "steps": last.step if last else 0,
            "epochs": len(log.epochs),
            "beta": config.beta,
            "lambda": config.lam,
            "seed": config.seed,
            "final_loss": {k: getattr(last, k) for k in ("kl", "rec", "sde", "total")} if last else {},
            "epoch_records": [asdict(record) for record in log.epochs],
        },
        args.output,
    )
    return EXIT_OK


def cmd_derain(args: argparse.Namespace) -> int:
    from .execution.inference import InferenceConfig, derain_batch, derain_sweep_batch
    from .ml.checkpoint import ModelCheckpoint
    from .utils.records import dump_json

    if args.sweep and args.emit_intermediates:
        raise UsageError("--emit-intermediates cannot be combined with --sweep")
    model = ModelCheckpoint.load(args.checkpoint).to_model()
    config = InferenceConfig(
        n_samples=args.samples,
        seed=args.seed,
        emit_intermediates=args.emit_intermediates,
        sigma_scale=args.sigma_scale,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(
        {
            "checkpoint": str(args.checkpoint),
            "input": str(args.input),
            "inference": config.to_dict(),
            "sweep": args.sweep,
        },
        out / "derain_config.json",
    )

    if args.sweep:
        batch = derain_sweep_batch(args.input, model, config, args.sweep, out)
    else:
        batch = derain_batch(args.input, model, config, out)
    payload = {
        "kind": "derain",
        "outputs": [str(p) for p in batch.outputs],
        "failures": batch.failures,
        "report": batch.report.to_dict() if batch.report else None,
    }
    if batch.report is not None:
        batch.report.save(out / "report.json")
    emit(payload, args.output)
    return EXIT_FAILURE if payload["failures"] and not payload["outputs"] else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .core.dataset import DatasetManifest, manifest_from_dirs
    from .core.imaging import load_image
    from .metrics.bright import BrightChannelConfig
    from .metrics.quality import MetricSettings, build_report, evaluate_pair

    if len(args.pairs) == 1:
        manifest = DatasetManifest.load(args.pairs[0])
    elif len(args.pairs) == 2:
        manifest = manifest_from_dirs(args.pairs[0], args.pairs[1])
    else:
        raise UsageError("--pairs takes a manifest or exactly two directories")
    if manifest.count == 0:
        raise UsageError(f"no image pairs found in {' '.join(str(p) for p in args.pairs)}")

    settings = MetricSettings(
        metrics=tuple(args.metrics),
        psnr_cap=args.psnr_cap,
        bright=BrightChannelConfig(args.bright_radius, args.bright_tolerance),
    )
    rows = []
    for entry in manifest.entries:
        estimate = load_image(manifest.resolve(entry.rainy))
        truth = load_image(manifest.resolve(entry.clean))
        rows.append(evaluate_pair(Path(entry.rainy).stem, estimate, truth, settings, args.ced_dir))
    report = build_report(rows, settings)
    report.save(args.out)
    emit({"kind": "report", **report.to_dict()}, args.output)
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    from .checks import run_checks
    from .core.errors import ConfigurationError
    from .utils.records import dump_json

    try:
        results = run_checks(args.only)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    payload = {"kind": "checks", "checks": [r.to_dict() for r in results]}
    if args.out:
        dump_json(payload, args.out)
    emit(payload, args.output)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "derain": cmd_derain,
    "eval": cmd_eval,
    "check": cmd_check,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags and 0 on --help/--version.
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    from rich.markup import escape

    from .utils.console import err_console, resolve_level, setup_logging

    setup_logging(resolve_level(args.verbose, args.quiet))
    if args.threads:
        import torch

        torch.set_num_threads(args.threads)

    from .core.errors import CvidError

    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        err_console.print(f"[red]Error: {escape(str(exc))}[/red]", highlight=False)
        return EXIT_USAGE
    except (CvidError, OSError) as exc:
        err_console.print(f"[red]Error: {escape(str(exc))}[/red]", highlight=False)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
