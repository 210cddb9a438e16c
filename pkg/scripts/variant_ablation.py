"""Three-way comparison: sgd, plain orthogonal and renormalized orthogonal updates.

Each pair is compared seed-by-seed; the per-epoch weight-norm trajectories
are printed too: without weight decay the plain variant can only grow the
norm, so any shrinkage comes from the decay term.
"""
import argparse
from pathlib import Path

import numpy as np

from perpgrad.experiment import load_config, run_experiment
from perpgrad.report import compare_runs, write_comparison

ROOT = Path(__file__).resolve().parents[1]
VARIANTS = ("sgd", "perp_plain", "perp_renorm")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-c", "--config", default=str(ROOT / "configs" / "two_moons_compare.yaml"))
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    cfg = load_config(args.config, [f"seeds={args.seeds}"])
    runs = {v: run_experiment(cfg.with_variant(v), args.out) for v in VARIANTS}
    for v, recs in runs.items():
        norms = np.mean([r.theta_norms for r in recs], axis=0)
        print(f"{v:>12} |theta| epoch 0 -> {len(norms) - 1}: {norms[0]:.3f} -> {norms[-1]:.3f}")
    for a, b in (("sgd", "perp_plain"), ("perp_plain", "perp_renorm")):
        rep = compare_runs(runs[a], runs[b])
        write_comparison(rep, Path(args.out) / f"compare_{a}_vs_{b}")
        print(rep.markdown())


if __name__ == "__main__":
    main()
