"""Train both optimizers, then sweep every corruption operator over severities 1-5.

Writes per-severity curve CSVs (accuracy, loss, ECE, entropy) under --out.
"""
import argparse
from pathlib import Path

from perpgrad.experiment import load_config, run_experiment
from perpgrad.report import emit_plotdata

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-c", "--config", default=str(ROOT / "configs" / "two_moons_compare.yaml"))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="runs/corruption_sweep")
    args = ap.parse_args()

    cfg = load_config(args.config, [f"seeds={args.seeds}",
                                    "corruption.operators=[gaussian_noise, impulse_noise, contrast_reduce]"])
    records = []
    for variant in ("sgd", "perp_renorm"):
        records += run_experiment(cfg.with_variant(variant), args.out)
    written = emit_plotdata(records, "corruption", Path(args.out) / "plots")
    for p in written:
        print(p)


if __name__ == "__main__":
    main()
