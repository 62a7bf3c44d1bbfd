"""plotgen command line: render one figure from a metrics CSV."""

from __future__ import annotations

import argparse
import sys

from .render import FIGURES, InputError, PlotSpec, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plotgen",
        description="Render MSE-vs-missingness figures from a metrics CSV.",
    )
    parser.add_argument("--input", required=True, help="metrics CSV path")
    parser.add_argument("--figure", required=True, choices=FIGURES)
    parser.add_argument("--output", required=True, help="image file to write")
    parser.add_argument("--span", type=float, default=0.5,
                        help="LOESS smoothing fraction (default 0.5)")
    args = parser.parse_args(argv)
    try:
        spec = PlotSpec(input_csv=args.input, figure=args.figure,
                        output=args.output, span=args.span)
        result = render(spec)
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.path}: {result.n_panels} panel(s), "
          f"procedures {list(result.procedures)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
