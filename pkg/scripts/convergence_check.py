"""Plain and renormalized orthogonal descent on analytic losses.

Plain runs are checked against the stationarity target and the per-step
descent bound; renormalized runs are only classified and logged.
"""
import argparse
import json

import numpy as np

from perpgrad.convergence import random_spd_quadratic, run_plain_perp, run_renorm_perp, two_blob_logistic
from perpgrad.rng import stream


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=20)
    ap.add_argument("--max-dim", type=int, default=50)
    ap.add_argument("--renorm-steps", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = stream(args.seed, "scripts/convergence")
    outcomes: dict[str, int] = {}
    fails = 0
    print(f"{'kind':>18} {'dim':>4} {'steps':>7} {'gap':>9} {'viol':>5} {'renorm outcome':>20}")
    for i in range(args.instances):
        if i % 4 == 3:
            loss = two_blob_logistic(rng)
        else:
            loss = random_spd_quadratic(rng, int(rng.integers(2, args.max_dim + 1)))
        theta0 = rng.standard_normal(loss.dim)
        eta = 0.9 / loss.lipschitz_k
        plain = run_plain_perp(loss, theta0, eta)
        renorm = run_renorm_perp(loss, theta0, 0.1 * eta, max_steps=args.renorm_steps)
        outcomes[renorm.outcome] = outcomes.get(renorm.outcome, 0) + 1
        bad = plain.stationary_gap > 1e-6 or plain.descent_violations > 0
        fails += bad
        print(f"{loss.kind:>18} {loss.dim:>4} {plain.steps_taken:>7} {plain.stationary_gap:>9.1e} "
              f"{plain.descent_violations:>5} {renorm.outcome:>20}{'  FAIL' if bad else ''}")
    print(json.dumps({"plain_failures": fails, "renorm_outcomes": outcomes}, sort_keys=True))
    return 1 if fails else 0


if __name__ == "__main__":
    raise SystemExit(main())
