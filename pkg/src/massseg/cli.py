"""Command-line interface.

    massseg synth    --count N [--test M] --seed S --out DIR
    massseg train    --manifest M [--config C] --out MODEL
    massseg segment  --model MODEL --center X,Y --scale S --out MASK IMAGE
    massseg evaluate --model MODEL --manifest M --out REPORT

Exit status: 0 success, 1 usage error, 2 data error, 3 SSVM non-convergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import maxflow
from .config import ConfigError, load_config
from .core import LatticeMismatch
from .evaluation import evaluate_dataset
from .manifest import ManifestError, read_manifest
from .model import ModelFormatError, load_model, save_model
from .pgm import PgmError, read_pgm, write_pgm
from .pipeline import load_record, roi_from_raw, segment, train_model
from .preprocess import RawImage, RoiAnnotation
from .synth import generate_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3

DATA_ERRORS = (OSError, ManifestError, ModelFormatError, PgmError, ConfigError, LatticeMismatch, ValueError)

log = logging.getLogger("massseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _center(text):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected X,Y") from None
    return x, y


def _load_split(records, split, config):
    chosen = [r for r in records if r.split == split]
    pairs = [load_record(r, config) for r in chosen]
    return chosen, [p[0] for p in pairs], [p[1] for p in pairs]


def cmd_synth(args):
    path = generate_dataset(args.count, args.seed, args.out, n_test=args.test)
    print(f"wrote {args.count} samples and {path}")
    return EXIT_OK


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    records = read_manifest(args.manifest)
    chosen, images, masks = _load_split(records, "train", config)
    if not chosen:
        raise ManifestError(f"{args.manifest} has no train records")
    t0 = time.perf_counter()
    model, result = train_model(images, masks, config)
    save_model(model, args.out)
    report = evaluate_dataset(model, zip(images, masks))
    print(f"trained on {len(chosen)} images in {time.perf_counter() - t0:.1f}s; "
          f"ssvm passes {result.iterations}, converged {result.converged}")
    print(f"weights unary {np.array2string(model.weights.unary, precision=6)} "
          f"pairwise {np.array2string(model.weights.pairwise, precision=6)}")
    print(f"train mean dice {report.mean_dice:.4f}")
    if not result.converged:
        print("error: SSVM reached the iteration cap before convergence", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_segment(args):
    model = load_model(args.model)
    raw = read_pgm(args.image)
    ann = RoiAnnotation(args.center[0], args.center[1], args.scale)
    roi = roi_from_raw(raw, ann, model.config)
    maxflow.warmup()
    t0 = time.perf_counter()
    mask = segment(model, roi)
    elapsed = time.perf_counter() - t0
    write_pgm(args.out, RawImage(np.where(mask.positive, 255, 0).astype(np.uint8), 8))
    print(f"segmentation seconds {elapsed:.6f}")
    return EXIT_OK


def cmd_evaluate(args):
    model = load_model(args.model)
    records = read_manifest(args.manifest)
    chosen, images, masks = _load_split(records, "test", model.config)
    if not chosen:
        raise ManifestError(f"{args.manifest} has no test records")
    maxflow.warmup()
    base = os.path.dirname(os.path.abspath(args.manifest))
    names = [os.path.relpath(r.image, base) for r in chosen]
    report = evaluate_dataset(model, zip(images, masks), names=names)
    if args.target_dice is not None:
        report.extra["target_dice"] = args.target_dice
        report.extra["within_advisory_tolerance"] = bool(abs(report.mean_dice - args.target_dice) <= 0.05)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_text())
    with open(args.out + ".json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    with open(args.out + ".timing.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.timing_json())
    print(f"test mean dice {report.mean_dice:.4f} over {len(chosen)} images; "
          f"mean segmentation seconds {report.mean_seconds:.4f}")
    if args.target_dice is not None:
        verdict = "within" if report.extra["within_advisory_tolerance"] else "outside"
        print(f"target dice {args.target_dice:.2f}: {verdict} the advisory +-0.05 band (informative only)")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="massseg", description="CRF mass segmentation with SSVM-learned weights.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--test", type=int, default=None, help="test split size (default count // 3)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from the manifest's train split")
    t.add_argument("--manifest", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--out", required=True, help="model file to write")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("segment", help="segment one image around an annotated mass")
    g.add_argument("image")
    g.add_argument("--model", required=True)
    g.add_argument("--center", type=_center, required=True, help="mass center X,Y in pixels")
    g.add_argument("--scale", type=float, required=True)
    g.add_argument("--out", required=True, help="mask PGM to write (0/255)")
    g.set_defaults(func=cmd_segment)

    e = sub.add_parser("evaluate", help="score a model on the manifest's test split")
    e.add_argument("--model", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True, help="text report; .json and .timing.json are written alongside")
    e.add_argument("--target-dice", type=float, default=None,
                   help="reference Dice to compare against (advisory +-0.05)")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
