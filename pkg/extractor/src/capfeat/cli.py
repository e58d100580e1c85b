"""Command-line interface.

Subcommands: extract, params.
Exit codes: 0 ok, 2 usage, 3 data problem, 4 internal failure.
"""

from __future__ import annotations

import argparse
import sys

from caplab.exceptions import DataError as StoreDataError

from .encoders import count_parameters, encoder_names, encoder_spec
from .exceptions import CapfeatError, DataError, UsageError
from .extraction import discover_images, extract_features, parse_grid, save_features

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def cmd_extract(args) -> int:
    grid = parse_grid(args.grid)
    spec = encoder_spec(args.cnn)
    paths = discover_images(args.images)
    store, skipped = extract_features(
        paths, args.cnn, grid=grid, weights=args.weights, seed=args.seed,
        batch_size=args.batch_size)
    save_features(store, args.out, skipped=skipped, truncation=spec.truncation)
    note = f", skipped {len(skipped)} unreadable" if skipped else ""
    print(f"wrote {args.out}: {len(store)} images, {grid[0]}x{grid[1]} grid "
          f"({store.regions} regions x {store.dim} dims), {args.cnn}{note}")
    return EXIT_OK


def cmd_params(args) -> int:
    thousands = count_parameters(args.cnn)
    print(f"{args.cnn}: {thousands} thousand parameters")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capfeat",
        description="Extract CNN region-grid features from images into CAPF files.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract features for every image in a directory")
    p.add_argument("--images", required=True, help="directory of images")
    p.add_argument("--cnn", required=True, choices=encoder_names(),
                   help="encoder architecture")
    p.add_argument("--grid", default="7x7", help="pooled region grid, RxC (default 7x7)")
    p.add_argument("--weights", default="pretrained", choices=("pretrained", "random"),
                   help="ImageNet checkpoint or seeded random init (default pretrained)")
    p.add_argument("--seed", type=int, default=0,
                   help="init seed when --weights random (default 0)")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--out", required=True, help="output .capf path")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("params", help="print a model's full parameter count")
    p.add_argument("--cnn", required=True, choices=encoder_names())
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, StoreDataError, FileNotFoundError, IsADirectoryError,
            PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CapfeatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
