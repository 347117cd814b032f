"""Command line entry point for the exporter."""

from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportJob, export
from .models import ModelError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segxai-export", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("export", help="run a model over a directory of images")
    p.add_argument("--model", required=True, help="model reference (e.g. stub)")
    p.add_argument("--data", required=True, help="directory of input PNG images")
    p.add_argument("--xai", default="gradcam", choices=["gradcam", "shap"])
    p.add_argument("--seg", default="stub", help="segmentation model reference")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--thresholds", default="",
                   help="comma-separated per-class thresholds (default 0.5 each)")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    thresholds = [float(t) for t in args.thresholds.split(",") if t.strip()]
    try:
        job = ExportJob(
            model_ref=args.model,
            data_dir=args.data,
            out_dir=args.out,
            xai=args.xai,
            seg_ref=args.seg,
            thresholds=thresholds,
        )
        manifest = export(job)
    except (ExportError, ModelError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"exported manifest -> {manifest}")
    return 0


def main() -> None:
    sys.exit(run())
