"""`aan-extract`: movie clips -> dataset files the training package loads."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from aan import dataio as D
from aan.errors import AanError

from .config import PROFILES, get_profile
from .frames import ExtractionError
from .records import ClipFeatureExtractor, emit_records


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aan-extract",
        description="Extract per-clip appearance, motion, and audio features.",
    )
    parser.add_argument("--clips", type=Path, required=True, help="directory of <clip_id>.mp4/.wav files")
    parser.add_argument("--manifest", type=Path, required=True, help="input manifest JSON")
    parser.add_argument("--out", type=Path, required=True, help="output dataset directory")
    parser.add_argument("--profile", choices=sorted(PROFILES), default="eimt16")
    parser.add_argument("--weights", type=Path, help="directory of pinned checkpoints (<name>.pth)")
    parser.add_argument("--format", choices=("binary", "text", "both"), default="both")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = D.load_manifest(args.manifest)
        if not manifest:
            print("error: manifest is empty", file=sys.stderr)
            return 2
        extractor = ClipFeatureExtractor(get_profile(args.profile), args.weights)
        rows, records = extractor.process_manifest(args.clips, manifest)
        emit_records(args.out, rows, records, fmt=args.format)
    except (ExtractionError, AanError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"extracted {len(records)} records -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
