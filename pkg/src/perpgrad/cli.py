"""Command-line entry point: ``perpgrad <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import calibration as cal
from .convergence import (
    random_spd_quadratic,
    run_plain_perp,
    run_renorm_perp,
    two_blob_logistic,
)
from .corruption import CorruptionSpec, corrupt, perturbation_magnitude
from .data import make_dataset
from .errors import ConfigurationError, IngestionError, SchemaError
from .experiment import (
    ExperimentConfig,
    load_config,
    load_records,
    run_experiment,
    write_json,
)
from .netcore import PredictionBatch, load_weights
from .report import compare_runs, emit_plotdata, write_comparison
from .rng import stream
from .stats import SeedMetricSet, aggregate

log = logging.getLogger("perpgrad")


def _config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    for flag, key in (("variant", "optim.variant"), ("epochs", "epochs"), ("out", "output_dir"),
                      ("workers", "workers"), ("label_fraction", "label_fraction")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides.append(f"{key}={v}")
    if getattr(args, "seeds", None):
        overrides.append(f"seeds=[{','.join(str(s) for s in args.seeds)}]")
    if getattr(args, "trace", False):
        overrides.append("trace=true")
    return load_config(args.config, overrides)


def _add_config_args(p, variant=True):
    p.add_argument("--config", "-c", help="YAML experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (dotted path)")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--epochs", type=int)
    p.add_argument("--label-fraction", dest="label_fraction", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    if variant:
        p.add_argument("--variant", choices=["sgd", "perp_renorm", "perp_plain"])
        p.add_argument("--trace", action="store_true", help="write per-step diagnostics as JSON lines")


def cmd_train(args) -> int:
    cfg = _config(args)
    records = run_experiment(cfg, cfg.output_dir)
    failed = [r.seed for r in records if not r.ok]
    for r in records:
        if r.ok:
            print(f"seed {r.seed}: top1={r.clean['top1_acc']:.4f} nll={r.clean['nll']:.4f} ece={r.clean['ece']:.4f}")
        else:
            print(f"seed {r.seed}: FAILED ({r.error})")
    return 1 if failed else 0


def cmd_compare(args) -> int:
    if args.runs:
        a, b = (load_records(d) for d in args.runs)
        out = Path(args.out or Path(args.runs[0]).parent / "comparison")
    else:
        cfg = _config(args)
        out = Path(cfg.output_dir)
        a = run_experiment(cfg.with_variant(args.variants[0]), out)
        b = run_experiment(cfg.with_variant(args.variants[1]), out)
        if any(not r.ok for r in a + b):
            print("some seeds failed; see failure dumps", file=sys.stderr)
            return 1
        out = out / "comparison"
    report = compare_runs(a, b)
    write_comparison(report, out)
    emit_plotdata(a + b, "corruption", out / "plots")
    emit_plotdata(a + b, "reliability", out / "plots")
    print(report.markdown())
    return 0


def cmd_converge_check(args) -> int:
    rng = stream(args.seed, f"converge-check/{args.loss}")
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    ok_all = True
    for i in range(args.instances):
        if args.loss == "quadratic":
            loss = random_spd_quadratic(rng, args.dim)
        else:
            loss = two_blob_logistic(rng)
        theta0 = rng.standard_normal(loss.dim)
        eta = args.eta_frac / loss.lipschitz_k
        if args.variant == "plain":
            rep = run_plain_perp(loss, theta0, eta, args.max_steps)
            passed = rep.stationary_gap <= 1e-6 and rep.descent_violations == 0 and rep.summability_bound_satisfied
            d = rep.to_dict()
            row = (i, loss.dim, rep.steps_taken, f"{rep.stationary_gap:.2e}", rep.descent_violations,
                   "pass" if passed else "FAIL")
        else:
            rep = run_renorm_perp(loss, theta0, eta, max_steps=args.max_steps)
            passed = True  # no convergence claim for the renormalized variant
            d = rep.to_dict()
            row = (i, loss.dim, rep.steps_taken, rep.outcome, f"{rep.final_grad_norm:.2e}", "logged")
        d.update(instance=i, loss=args.loss, passed=passed)
        ok_all &= passed
        if out:
            write_json(out / f"instance_{i:03d}.json", d)
        else:
            print(json.dumps({k: v for k, v in d.items() if k != "final_theta"}, sort_keys=True))
        rows.append(row)
    head = ("inst", "dim", "steps", "gap", "viol", "result") if args.variant == "plain" else \
        ("inst", "dim", "steps", "outcome", "|grad|", "result")
    print(" ".join(f"{h:>12}" for h in head))
    for r in rows:
        print(" ".join(f"{str(c):>12}" for c in r))
    return 0 if ok_all else 1


def _read_logits_csv(path) -> PredictionBatch:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: file not found")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return PredictionBatch.from_logits(data[:, :-1], data[:, -1].astype(np.int64))


def cmd_calibrate(args) -> int:
    val = _read_logits_csv(args.val)
    temp = cal.fit_temperature(val, n_bins=args.bins)
    result = {"temperature": asdict(temp)}
    if args.test:
        test = _read_logits_csv(args.test)
        result["test_before"] = cal.evaluate(test, args.bins).to_dict()
        result["test_after"] = cal.evaluate(test.scaled(temp.t_star), args.bins).to_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "calibration.json", result)
        if args.test:
            (out / "reliability_before.csv").write_text(
                cal.bins_to_csv([cal.ReliabilityBin(**b) for b in result["test_before"]["bins"]]))
            (out / "reliability_after.csv").write_text(
                cal.bins_to_csv([cal.ReliabilityBin(**b) for b in result["test_after"]["bins"]]))
    print(json.dumps(asdict(temp), sort_keys=True, indent=1))
    return 0


def cmd_corrupt_eval(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = load_config(run_dir / "config.yaml", args.set)
    ops = args.operators or cfg.corruption.operators
    sevs = args.severities or cfg.corruption.severities
    out = Path(args.out or run_dir / "corrupt_eval")
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for seed in cfg.seeds:
        wpath = run_dir / f"seed_{seed}.ogw"
        if not wpath.exists():
            continue
        net = load_weights(wpath)
        splits = make_dataset(cfg.dataset, seed, cfg.label_fraction)
        X, y = splits.test.X, splits.test.y
        per_op = {}
        for op in ops:
            per_sev = {}
            for s in [0] + list(sevs):
                Xc = corrupt(X, CorruptionSpec(op, s), stream(seed, f"corrupt/{op}"), splits.value_range, splits.grid)
                rep = cal.evaluate(net.forward(Xc, y), cfg.n_bins).metrics()
                rep["perturbation"] = perturbation_magnitude(X, Xc)
                per_sev[str(s)] = rep
            mags = [per_sev[str(s)]["perturbation"] for s in sevs]
            per_sev["perturbation_monotone"] = all(b > a for a, b in zip(mags, mags[1:]))
            per_op[op] = per_sev
        results[str(seed)] = per_op
    if not results:
        print(f"no weights found in {run_dir}", file=sys.stderr)
        return 1
    write_json(out / "corrupt_eval.json", results)
    lines = ["seed,operator,severity,perturbation,top1_acc,nll,ece,mean_entropy"]
    for seed, per_op in results.items():
        for op, per_sev in per_op.items():
            for s, m in per_sev.items():
                if s == "perturbation_monotone":
                    continue
                lines.append(",".join([seed, op, s] + [repr(m[k]) for k in
                                                        ("perturbation", "top1_acc", "nll", "ece", "mean_entropy")]))
    (out / "corrupt_eval.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_report(args) -> int:
    records = []
    for d in args.runs:
        records.extend(load_records(d))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = emit_plotdata(records, "corruption", out) + emit_plotdata(records, "reliability", out)
    lines = []
    for variant in sorted({r.variant for r in records}):
        recs = [r for r in records if r.variant == variant and r.ok]
        sets = [SeedMetricSet(r.seed, {k: v for k, v in r.metrics().items() if v is not None}) for r in recs]
        keys = set.intersection(*(set(s.metrics) for s in sets))
        sets = [SeedMetricSet(s.seed, {k: s.metrics[k] for k in keys}) for s in sets]
        lines.append(f"## {variant} ({len(recs)} seeds)\n\n| metric | mean | sd |\n|---|---|---|")
        for m in aggregate(sets):
            sd = "n/a" if m.sd is None else f"{m.sd:.4g}"
            lines.append(f"| {m.metric} | {m.mean:.4g} | {sd} |")
        lines.append("")
    (out / "summary.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"wrote {len(written) + 1} files to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perpgrad", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every seed of one config")
    _add_config_args(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="train two optimizer variants and compare them seed-by-seed")
    _add_config_args(c, variant=False)
    c.add_argument("--variants", nargs=2, default=["sgd", "perp_renorm"], metavar=("A", "B"))
    c.add_argument("--runs", nargs=2, metavar=("DIR_A", "DIR_B"), help="compare existing run directories")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("converge-check", help="numerical convergence checks on analytic losses")
    v.add_argument("--loss", choices=["quadratic", "logistic"], default="quadratic")
    v.add_argument("--dim", type=int, default=10)
    v.add_argument("--instances", type=int, default=20)
    v.add_argument("--eta-frac", type=float, default=0.9, help="step size as a fraction of 1/k")
    v.add_argument("--max-steps", type=int, default=200_000)
    v.add_argument("--variant", choices=["plain", "renorm"], default="plain")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_converge_check)

    k = sub.add_parser("calibrate", help="fit a temperature on validation logits")
    k.add_argument("--val", required=True, help="CSV: logit_0..logit_{k-1},label")
    k.add_argument("--test")
    k.add_argument("--bins", type=int, default=15)
    k.add_argument("--out")
    k.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("corrupt-eval", help="evaluate saved weights under corruption sweeps")
    e.add_argument("--run-dir", required=True, help="directory with config.yaml and seed_*.ogw")
    e.add_argument("--operators", nargs="+")
    e.add_argument("--severities", type=int, nargs="+")
    e.add_argument("--set", action="append", metavar="KEY=VALUE")
    e.add_argument("--out")
    e.set_defaults(func=cmd_corrupt_eval)

    r = sub.add_parser("report", help="plot-data CSVs and seed summaries for run directories")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigurationError, IngestionError, SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
