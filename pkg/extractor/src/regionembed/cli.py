import argparse
import logging
import sys

from .extractor import ExtractJob, ModelUnavailable, RegionFileMissing, extract


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="regionembed",
        description="Extract per-region speech embeddings into the auditor's "
                    "interchange format.")
    sub = parser.add_subparsers(dest="command", required=True)
    ex = sub.add_parser("extract", help="run a batch extraction job")
    ex.add_argument("--manifest", required=True, help="dataset manifest CSV")
    ex.add_argument("--regions-dir", required=True,
                    help="directory of <stem>.regions.csv exports")
    ex.add_argument("--model", required=True,
                    help="model identifier (hub id or local directory)")
    ex.add_argument("--out", required=True, help="output directory")
    ex.add_argument("--layer", type=int, default=None,
                    help="encoder layer to read (default: final output)")
    ex.add_argument("--verbose", action="count", default=0)
    args = parser.parse_args(argv)

    logging.basicConfig(stream=sys.stderr,
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    job = ExtractJob(manifest=args.manifest, regions_dir=args.regions_dir,
                     model=args.model, out_dir=args.out, layer=args.layer)
    try:
        written = extract(job)
    except (ModelUnavailable, RegionFileMissing, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(written)} interchange files to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
