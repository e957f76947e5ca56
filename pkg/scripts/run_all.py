"""Run every experiment with its default config and write outputs under runs/."""

import argparse
import sys

from ddlab import cli
from ddlab.config import EXPERIMENTS


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs")
    args = p.parse_args()
    status = 0
    for name in [*EXPERIMENTS, "selftest"]:
        print(f"== {name}", flush=True)
        code = cli.main([name, "--seed", str(args.seed), "--out", f"{args.out}/{name}"])
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
