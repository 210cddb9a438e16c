"""SGD vs renormalized orthogonal updates on two-moons over 20 seeds.

    python scripts/run_comparison.py [--out runs/compare] [--workers 1]
"""
import argparse
import sys
from pathlib import Path

from perpgrad.cli import main

ROOT = Path(__file__).resolve().parents[1]


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="runs/compare")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    sys.exit(main(["compare", "-c", str(ROOT / "configs" / "two_moons_compare.yaml"),
                   "--out", args.out, "--workers", str(args.workers)]))
