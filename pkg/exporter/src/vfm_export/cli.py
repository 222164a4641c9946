"""CLI: ``vfm-export export --backbone {clip,dinov2} --images <glob>
[--prompts <file>] --out <dir> [--random-init] [--seed N]``."""

import argparse
import glob
import sys

from .backbones import ExportError
from .export import ExportJob, export_features


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vfm-export", description="export CLIP/DINOv2 features as VFMT tensors"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run a backbone over images/prompts")
    p.add_argument("--backbone", required=True, choices=("clip", "dinov2"))
    p.add_argument("--images", default=None, help="glob of input images")
    p.add_argument("--prompts", default=None, help="text file, one prompt per line")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--random-init",
        action="store_true",
        help="seeded random weights instead of pretrained (offline validation)",
    )
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    images = tuple(sorted(glob.glob(args.images))) if args.images else ()
    if args.images and not images:
        print(f"error: --images matched no files: {args.images!r}", file=sys.stderr)
        return 1
    prompts = ()
    if args.prompts:
        try:
            with open(args.prompts, "r", encoding="utf-8") as fh:
                prompts = tuple(line.strip() for line in fh if line.strip())
        except OSError as exc:
            print(f"error: cannot read prompts: {exc}", file=sys.stderr)
            return 1
    try:
        job = ExportJob(
            backbone=args.backbone,
            images=images,
            prompts=prompts,
            out_dir=args.out,
            pretrained=not args.random_init,
            seed=args.seed,
        )
        written = export_features(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
