"""Six-variant ablation grid on one dataset, shared seed.

Variants: full, sa (dense softmax attention), la (kernelized linear
attention), no_ro (rotation off), no_gate, no_skip. Thin wrapper over
`waverora ablate`; model/training overrides pass through as --set pairs.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from waverora.cli import main as cli_main


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dataset", help="registered dataset name or CSV path")
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="config override, forwarded to the ablate command",
    )
    args = parser.parse_args(argv)

    cli_args = [
        "ablate",
        "--dataset", args.dataset,
        "--out", args.out,
        "--seed", str(args.seed),
    ]
    for item in args.set:
        cli_args += ["--set", item]
    return cli_main(cli_args)


if __name__ == "__main__":
    sys.exit(main())
