"""Command-line interface: one `extract` command."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__
from .extract import CROP_SIZE, POOLING_MODES, ExtractionJob, run_extraction

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff")


def collect_images(spec: str) -> list[tuple[str, Path]]:
    """Resolve --images: a directory of images, or a text file of paths.

    Ids are file stems; directory listings are sorted for a stable order.
    """
    root = Path(spec)
    if root.is_dir():
        paths = sorted(
            p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES
        )
    elif root.is_file():
        paths = [
            Path(line.strip())
            for line in root.read_text().splitlines()
            if line.strip() and not line.strip().startswith("#")
        ]
    else:
        raise FileNotFoundError(f"--images {spec}: no such file or directory")
    if not paths:
        raise ValueError(f"--images {spec}: no images found")
    images = [(path.stem, path) for path in paths]
    stems = [stem for stem, _ in images]
    if len(set(stems)) != len(stems):
        dupes = sorted({s for s in stems if stems.count(s) > 1})
        raise ValueError(f"duplicate image stems, ids would collide: {dupes[:5]}")
    return images


def read_scores(path: str) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["id", "score"]:
            raise ValueError(f"{path}: expected header 'id,score', got {header}")
        scores: dict[str, float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 fields, got {len(row)}")
            if row[0] in scores:
                raise ValueError(f"{path}:{lineno}: duplicate id {row[0]!r}")
            scores[row[0]] = float(row[1])
    if not scores:
        raise ValueError(f"{path}: no score rows")
    return scores


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vgg16lpff",
        description="Extract frozen-VGG16 features from images into LPFF "
        "dataset files for the lpfiqa engine.",
    )
    parser.add_argument("--version", action="version", version=f"vgg16lpff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract features for a set of images")
    p.add_argument(
        "--images",
        required=True,
        help="directory of images, or a text file with one image path per line",
    )
    p.add_argument(
        "--scores",
        default=None,
        help="CSV of id,score rows; enables manifest + descriptor output",
    )
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--crop-seed", type=int, default=0, help="seed of the random crops")
    p.add_argument(
        "--crop-size", type=int, default=CROP_SIZE, help="square crop side in pixels"
    )
    p.add_argument(
        "--weights",
        default="imagenet",
        help="'imagenet', a state-dict path, or 'random:SEED' (smoke tests only)",
    )
    p.add_argument("--pooling", choices=POOLING_MODES, default="avg")
    p.add_argument(
        "--polarity",
        choices=("higher", "lower"),
        default="higher",
        help="whether higher scores mean better quality",
    )
    p.add_argument("--name", default=None, help="dataset display name")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        job = ExtractionJob(
            images=collect_images(args.images),
            crop_seed=args.crop_seed,
            crop_size=args.crop_size,
            weights=args.weights,
            pooling=args.pooling,
            scores=read_scores(args.scores) if args.scores is not None else None,
            polarity=args.polarity,
            name=args.name,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        written = run_extraction(job, args.out)
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"wrote {written}")
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())
