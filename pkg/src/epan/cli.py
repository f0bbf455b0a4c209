"""Command-line entry point: ``epan <subcommand> ...``.

Subcommands: detect-edges, make-dataset, train, infer, eval. Exit codes are
0 on success, 1 when inputs or configuration fail validation, 2 when a run
fails after validation. Every command validates before writing anything.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint
from .config import RunConfig, load_run_config
from .data import (
    DatasetManifest,
    ManifestRecord,
    align_pair,
    blur_by_averaging,
    blur_with_kernel,
    crop,
    importance_filter,
    make_linear_kernel,
    nms,
    random_train_scenarios,
    read_boxes,
    split_by_scenario,
)
from .edges import canny
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    DataError,
    EPANError,
    GeometryError,
    ParameterError,
)
from .inference import deblur
from .io import append_jsonl, list_images, read_image, write_image
from .metrics import EvalReport, evaluate, format_table, write_reports
from .model import build_model
from .trainer import Trainer, make_sample

log = logging.getLogger("epan")

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2
VALIDATION_ERRORS = (ConfigurationError, ParameterError, DataError, GeometryError, CheckpointError, FileNotFoundError)


class ValidationFailure(Exception):
    """Raised by command bodies for problems found before any output is written."""


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _require_dir(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise ValidationFailure(f"{what} {path} is not a directory")
    return path


def _require_file(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ValidationFailure(f"{what} {path} does not exist")
    return path


def _run_config(args) -> RunConfig:
    overrides = {
        "seed": getattr(args, "seed", None),
        "canny.gaussian_sigma": getattr(args, "canny_sigma", None),
        "canny.low_threshold": getattr(args, "canny_low", None),
        "canny.high_threshold": getattr(args, "canny_high", None),
        "canny.soften_sigma": getattr(args, "soft_edges", None),
        "model.variant": getattr(args, "variant", None),
        "model.levels": getattr(args, "levels", None),
        "model.cdn_base_channels": getattr(args, "base_channels", None),
        "train.epochs": getattr(args, "epochs", None),
        "train.max_steps": getattr(args, "max_steps", None),
        "train.batch_size": getattr(args, "batch_size", None),
        "train.lr_start": getattr(args, "lr_start", None),
        "train.lr_end": getattr(args, "lr_end", None),
        "train.schedule": getattr(args, "schedule", None),
        "train.checkpoint_every": getattr(args, "checkpoint_every", None),
        "train.lambda_c": getattr(args, "lambda_c", None),
        "train.lambda_e": getattr(args, "lambda_e", None),
    }
    crop_size = getattr(args, "crop", None)
    if crop_size is not None:
        overrides["train.crop_h"] = overrides["train.crop_w"] = crop_size
    if getattr(args, "no_augment", False):
        overrides["train.flip_prob"] = overrides["train.rotate_prob"] = 0.0
    return load_run_config(getattr(args, "config", None), overrides)


def _scenario_of(rel: Path) -> str:
    """First directory component for nested inputs, else the file stem."""
    return rel.parts[0] if len(rel.parts) > 1 else rel.stem


def _assign_splits(records: list[ManifestRecord], args, seed: int) -> DatasetManifest:
    manifest = DatasetManifest(records)
    scenarios = manifest.scenarios
    if args.train_scenarios:
        train = [s.strip() for s in args.train_scenarios.split(",") if s.strip()]
    else:
        if len(scenarios) < 2:
            raise DataError(f"need at least 2 scenarios for a scenario-disjoint split, found {len(scenarios)}")
        n_train = args.n_train if args.n_train is not None else round(len(scenarios) * 10 / 16)
        n_train = min(max(n_train, 1), len(scenarios) - 1)
        train = random_train_scenarios(scenarios, n_train, seed)
    return split_by_scenario(manifest, train)


# ---------------------------------------------------------------------------
# detect-edges
# ---------------------------------------------------------------------------


def cmd_detect_edges(args) -> int:
    cfg = _run_config(args)
    in_dir = _require_dir(args.in_dir, "input directory")
    images = list_images(in_dir)
    if not images:
        log.warning("no PNG images found in %s", in_dir)
        return EXIT_OK
    out_dir = Path(args.out_dir)
    failures = 0
    for path in images:
        rel = path.relative_to(in_dir)
        try:
            edges = canny(read_image(path), cfg.canny)
        except DataError as exc:
            log.error("%s", exc)
            failures += 1
            continue
        target = out_dir / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        write_image(target, edges)
    log.info("wrote %d edge maps to %s", len(images) - failures, out_dir)
    return EXIT_FAILED if failures else EXIT_OK


# ---------------------------------------------------------------------------
# make-dataset
# ---------------------------------------------------------------------------


@dataclass
class _Pair:
    rel: Path
    sharp: np.ndarray
    blurry: np.ndarray
    scenario: str
    meta: dict


def _kernel_pairs(args, cfg: RunConfig) -> list[_Pair]:
    sharp_dir = _require_dir(args.sharp_dir, "sharp directory")
    images = list_images(sharp_dir)
    if not images:
        raise ValidationFailure(f"no PNG images found in {sharp_dir}")
    make_linear_kernel(args.kernel_length, 0.0, args.kernel_size)  # parameter check
    rng = np.random.default_rng(cfg.seed)
    pairs = []
    for path in images:
        rel = path.relative_to(sharp_dir)
        angle = args.angle if args.angle is not None else float(rng.uniform(0.0, math.pi))
        kernel = make_linear_kernel(args.kernel_length, angle, args.kernel_size)
        sharp = read_image(path)
        pairs.append(_Pair(rel, sharp, blur_with_kernel(sharp, kernel), _scenario_of(rel),
                           {"kernel_length": args.kernel_length, "angle": angle}))
    return pairs


def _average_pairs(args, cfg: RunConfig) -> list[_Pair]:
    frames_dir = _require_dir(args.frames_dir, "frames directory")
    clips = sorted({p.parent for p in list_images(frames_dir)})
    if not clips:
        raise ValidationFailure(f"no frame clips found under {frames_dir}")
    pairs = []
    for clip in clips:
        frames = sorted(p for p in clip.iterdir() if p.suffix.lower() == ".png")
        stack = [read_image(p) for p in frames]
        rel_clip = clip.relative_to(frames_dir)
        rel = rel_clip.with_suffix(".png") if rel_clip.parts else Path(frames_dir.name + ".png")
        # the middle frame is the sharp reference for the averaged exposure
        pairs.append(_Pair(rel, stack[len(stack) // 2], blur_by_averaging(stack), _scenario_of(rel),
                           {"frames": len(frames)}))
    return pairs


def _align_pairs(args, cfg: RunConfig) -> list[_Pair]:
    sharp_dir = _require_dir(args.sharp_dir, "sharp directory")
    blurry_dir = _require_dir(args.blurry_dir, "blurry directory")
    boxes = read_boxes(args.boxes)
    pairs = []
    for path in list_images(sharp_dir):
        rel = path.relative_to(sharp_dir)
        candidates = boxes.get(rel.as_posix(), [])
        if not candidates:
            continue
        blurry_path = blurry_dir / rel
        if not blurry_path.is_file():
            raise DataError(f"no blurry counterpart for {rel} in {blurry_dir}")
        sharp, blurry = read_image(path), read_image(blurry_path)
        _, h, w = sharp.shape
        kept = importance_filter(nms([b.clamp(w, h) for b in candidates], args.iou_threshold), w, h,
                                 args.min_importance)
        for k, box in enumerate(kept):
            template = crop(sharp, box)
            res = align_pair(template, blurry, box)
            meta = {"image": rel.as_posix(), "box": k, "offset_x": res.offset_x, "offset_y": res.offset_y,
                    "psnr": res.psnr}
            pairs.append(_Pair(rel.with_name(f"{rel.stem}_{k}.png"), template, crop(blurry, res.window(box)),
                               _scenario_of(rel), meta))
    if not pairs:
        raise DataError("alignment produced no pairs (no boxes survived filtering)")
    return pairs


def cmd_make_dataset(args) -> int:
    cfg = _run_config(args)
    if args.mode in ("kernel", "align") and args.sharp_dir is None:
        raise ValidationFailure(f"{args.mode} mode needs --sharp-dir")
    if args.mode == "average" and args.frames_dir is None:
        raise ValidationFailure("average mode needs --frames-dir")
    if args.mode == "align":
        if args.blurry_dir is None:
            raise ValidationFailure("align mode needs --blurry-dir")
        if args.boxes is None or not Path(args.boxes).is_file():
            raise DataError(f"boxes sidecar not found: {args.boxes}")
    builders = {"kernel": _kernel_pairs, "average": _average_pairs, "align": _align_pairs}
    pairs = builders[args.mode](args, cfg)

    # paths are deterministic, so the split can be settled before anything is written
    out_dir = Path(args.out_dir)
    records = [ManifestRecord(str(out_dir / "sharp" / p.rel), str(out_dir / "blurry" / p.rel), p.scenario,
                              meta=p.meta) for p in pairs]
    manifest = _assign_splits(records, args, cfg.seed)

    for pair, rec in zip(pairs, manifest.records):
        for target, img in ((rec.sharp_path, pair.sharp), (rec.blurry_path, pair.blurry)):
            Path(target).parent.mkdir(parents=True, exist_ok=True)
            write_image(target, img)
    if args.mode == "align":
        log_path = out_dir / "align_log.jsonl"
        log_path.unlink(missing_ok=True)
        for pair in pairs:
            append_jsonl(log_path, pair.meta)
    manifest.write(out_dir / "manifest.jsonl")
    log.info("wrote %d pairs (%d train / %d test) to %s", len(manifest), len(manifest.split("train")),
             len(manifest.split("test")), out_dir / "manifest.jsonl")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _run_config(args)
    manifest = DatasetManifest.read(_require_file(args.manifest, "manifest"))
    manifest.verify()
    records = manifest.split(args.split)
    if not records:
        raise DataError(f"manifest {args.manifest} has no {args.split!r} records")
    missing = [p for r in records for p in (r.sharp_path, r.blurry_path) if not Path(p).is_file()]
    if missing:
        raise FileNotFoundError("missing image files: " + ", ".join(missing))
    resume = _require_file(args.resume, "resume checkpoint") if args.resume else None

    samples = [make_sample(read_image(r.blurry_path), read_image(r.sharp_path), cfg.canny) for r in records]
    small = [s for s in samples if s.blurry.shape[1] < cfg.train.crop_h or s.blurry.shape[2] < cfg.train.crop_w]
    if small:
        raise DataError(f"{len(small)} training images are smaller than the "
                        f"{cfg.train.crop_h}x{cfg.train.crop_w} crop")
    if resume is not None:
        trainer = Trainer.resume(resume, cfg.train)
    else:
        trainer = Trainer(build_model(cfg.model, seed=cfg.seed), cfg.train)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    if resume is None:
        log_path.unlink(missing_ok=True)
    counts = trainer.network.parameter_counts()
    append_jsonl(log_path, {"event": "header", "parameter_counts": counts, "run_config": cfg.to_dict(),
                            "train_records": len(records), "start_epoch": trainer.epoch})
    log.info("variant %s: %d CDN / %d EEN / %d fusion parameters", cfg.model.variant, counts["cdn"],
             counts["een"], counts["fusion"])

    every = cfg.train.checkpoint_every
    for stats in trainer.iter_epochs(samples):
        append_jsonl(log_path, {"event": "epoch", **stats.to_dict()})
        log.info("epoch %d  lr %.3g  loss %.5f (content %.5f, edge %.5f)", stats.epoch, stats.lr, stats.loss,
                 stats.content_loss, stats.edge_loss)
        if every and trainer.epoch % every == 0:
            trainer.save(out.with_name(f"{out.stem}.epoch{trainer.epoch}{out.suffix}"))
    trainer.save(out)
    append_jsonl(log_path, {"event": "done", "epochs": trainer.epoch, "steps": trainer.steps})
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer / eval
# ---------------------------------------------------------------------------


def cmd_infer(args) -> int:
    cfg = _run_config(args)
    in_dir = _require_dir(args.in_dir, "input directory")
    network = load_checkpoint(args.checkpoint).network
    images = list_images(in_dir)
    if not images:
        log.warning("no PNG images found in %s", in_dir)
        return EXIT_OK
    out_dir = Path(args.out_dir)
    failures = 0
    for path in images:
        try:
            blurry = read_image(path, channels=network.config.in_channels)
        except DataError as exc:
            log.error("%s", exc)
            failures += 1
            continue
        target = out_dir / path.relative_to(in_dir)
        target.parent.mkdir(parents=True, exist_ok=True)
        write_image(target, deblur(network, blurry, cfg.canny))
    return EXIT_FAILED if failures else EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    manifest = DatasetManifest.read(_require_file(args.manifest, "manifest"))
    records = manifest.split(args.split)
    if not records:
        raise DataError(f"manifest {args.manifest} has no {args.split!r} records to evaluate")
    missing = [p for r in records for p in (r.sharp_path, r.blurry_path) if not Path(p).is_file()]
    if missing:
        raise FileNotFoundError("missing image files: " + ", ".join(missing))
    loaded = [(Path(p), load_checkpoint(p)) for p in args.checkpoint]
    reports: list[EvalReport] = []
    if args.baselines:
        reports.append(evaluate(None, records, cfg.canny, label="blurry input", prediction="blurry"))
    for path, ck in loaded:
        label = f"{path.stem} ({ck.config.variant})"
        reports.append(evaluate(ck.network, records, cfg.canny, label=label))
    if args.baselines:
        reports.append(evaluate(None, records, cfg.canny, label="ground truth", prediction="sharp"))
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    write_reports(reports, args.report)
    sys.stdout.write(format_table(reports))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration JSON (sections: model, train, canny)")
    p.add_argument("--seed", type=int, help="seed for every random choice")
    p.add_argument("--canny-sigma", type=float, help="Gaussian sigma before gradients")
    p.add_argument("--canny-low", type=float, help="hysteresis low threshold (normalised magnitude)")
    p.add_argument("--canny-high", type=float, help="hysteresis high threshold (normalised magnitude)")
    p.add_argument("--soft-edges", type=float, metavar="SIGMA", help="blur binary edges into soft masks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epan", description="Edge-guided deblurring toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-q", "--quiet", action="store_true", help="only report warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect-edges", help="write a Canny edge map PNG for every input image")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    _add_common(p)
    p.set_defaults(func=cmd_detect_edges)

    p = sub.add_parser("make-dataset", help="synthesise or align blurry/sharp pairs and write a manifest")
    p.add_argument("--mode", choices=("kernel", "average", "align"), required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sharp-dir")
    p.add_argument("--blurry-dir")
    p.add_argument("--frames-dir", help="average mode: one subdirectory of frames per clip")
    p.add_argument("--boxes", help="align mode: line-delimited JSON detections")
    p.add_argument("--kernel-length", type=float, default=9.0)
    p.add_argument("--kernel-size", type=int, default=9)
    p.add_argument("--angle", type=float, help="motion angle in radians (random per image if omitted)")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--min-importance", type=float, default=0.1)
    p.add_argument("--train-scenarios", help="comma-separated scenario ids for the training split")
    p.add_argument("--n-train", type=int, help="number of random training scenarios (default 10/16 of them)")
    _add_common(p)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train a variant on the manifest's training split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="final checkpoint path")
    p.add_argument("--log", help="line-delimited JSON log (default: OUT with suffix .log.jsonl); appended to on --resume")
    p.add_argument("--split", default="train")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--variant", help="phi, phi_cat, phi_add, phi_att, phi_eal or epan")
    p.add_argument("--levels", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--crop", type=int, help="square crop size")
    p.add_argument("--lr-start", type=float)
    p.add_argument("--lr-end", type=float)
    p.add_argument("--schedule", choices=("warped_log", "polynomial"))
    p.add_argument("--lambda-c", type=float)
    p.add_argument("--lambda-e", type=float)
    p.add_argument("--checkpoint-every", type=int, help="also save every N epochs")
    p.add_argument("--no-augment", action="store_true", help="disable flips and rotations")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="deblur every image in a directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM of one or more checkpoints on the test split")
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="JSON report path; a .txt table is written beside it")
    p.add_argument("--split", default="test")
    p.add_argument("--baselines", action="store_true", help="add blurry-input and ground-truth rows")
    _add_common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def _configure_logging(quiet: bool) -> None:
    """Human-readable summary on stderr; repeated calls replace the previous handler."""
    for h in [h for h in log.handlers if getattr(h, "_epan_cli", False)]:
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("epan %(levelname)s: %(message)s"))
    handler._epan_cli = True
    log.addHandler(handler)
    log.setLevel(logging.WARNING if quiet else logging.INFO)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.quiet)
    try:
        return args.func(args)
    except (ValidationFailure, *VALIDATION_ERRORS) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (EPANError, OSError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
