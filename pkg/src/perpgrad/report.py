"""Seed-paired comparisons between two optimizers and plot-data emission."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stats
from .calibration import METRIC_ROWS
from .errors import SchemaError
from .experiment import RunRecord, write_json

EXTRA_ROWS = (
    ("conf_acc_corr", "Conf-Acc Corr."),
    ("final_theta_norm", "Final ||theta||"),
    ("t_star", "Optimal Temperature"),
    ("ece_after_temp", "ECE after T"),
    ("brier_after_temp", "Brier after T"),
)
# +1: larger is better, -1: smaller is better (which side a report marks as better)
DIRECTION = {
    "top1_acc": 1, "top5_acc": 1, "nll": -1, "ece": -1, "brier": -1, "mean_entropy": 1,
    "mean_max_softmax": -1, "mean_max_logit": -1, "mean_logit_variance": -1, "conf_acc_corr": 1,
}
CONFIDENCE_METRICS = ("nll", "ece", "brier", "mean_entropy", "mean_max_softmax", "mean_max_logit",
                      "mean_logit_variance", "conf_acc_corr")
CORRUPTION_TABLE = (("top1_acc", "Accuracy"), ("nll", "Loss"), ("ece", "ECE"), ("conf_acc_corr", "Conf-Acc Corr."))
CURVE_METRICS = ("top1_acc", "nll", "ece", "mean_entropy")


@dataclass
class ComparisonReport:
    label_a: str
    label_b: str
    seeds: list[int]
    rows: list[stats.ComparisonStats]
    extra_rows: list[stats.ComparisonStats]
    corruption: dict[str, dict[str, list[stats.ComparisonStats]]] = field(default_factory=dict)
    winners: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(r):
            d = r.to_dict()
            return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}

        return {
            "label_a": self.label_a,
            "label_b": self.label_b,
            "seeds": self.seeds,
            "rows": [clean(r) for r in self.rows],
            "extra_rows": [clean(r) for r in self.extra_rows],
            "corruption": {op: {s: [clean(r) for r in rows] for s, rows in lv.items()}
                           for op, lv in self.corruption.items()},
            "winners": self.winners,
        }

    def markdown(self) -> str:
        out = [f"## {self.label_a} vs {self.label_b} ({len(self.seeds)} seeds)\n",
               stats.to_markdown(self.rows, self.label_a, self.label_b)]
        out.append("\n### Supplementary\n")
        out.append(stats.to_markdown(self.extra_rows, self.label_a, self.label_b, dict(EXTRA_ROWS)))
        if self.winners:
            out.append("\n### Direction (better mean per metric)\n")
            out.extend(f"- {m}: {w}\n" for m, w in self.winners.items())
        for op, levels in self.corruption.items():
            out.append(f"\n### Corruption: {op}\n")
            out.append(corruption_markdown(levels, self.label_a, self.label_b))
        return "".join(out)


def corruption_markdown(levels: dict[str, list[stats.ComparisonStats]], label_a: str, label_b: str) -> str:
    names = dict(CORRUPTION_TABLE)
    head = "| Level | " + " | ".join(f"{names[m]} {label_a} | {names[m]} {label_b}" for m, _ in CORRUPTION_TABLE)
    lines = [head + " |", "|" + "---|" * (1 + 2 * len(CORRUPTION_TABLE))]
    for s, rows in levels.items():
        by = {r.metric: r for r in rows}
        cells = []
        for m, _ in CORRUPTION_TABLE:
            r = by.get(m)
            cells += [stats._fmt(r.mean_a), stats._fmt(r.mean_b)] if r else ["n/a", "n/a"]
        lines.append(f"| {s} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _check_pairing(a: Sequence[RunRecord], b: Sequence[RunRecord]) -> list[int]:
    for rec in list(a) + list(b):
        if not rec.ok:
            raise SchemaError(f"seed {rec.seed} ({rec.variant}) failed; cannot compare")
    seeds_a = sorted(r.seed for r in a)
    seeds_b = sorted(r.seed for r in b)
    if seeds_a != seeds_b:
        raise ValueError(f"seed lists differ: {seeds_a} vs {seeds_b}")
    if len(seeds_a) < 2:
        raise ValueError("need at least two seeds per side")
    if len({r.base_hash for r in list(a) + list(b)}) != 1:
        raise ValueError("records come from configs that differ beyond the optimizer variant")
    return seeds_a


def _values(records: Sequence[RunRecord], getter, metric: str) -> list[float]:
    vals = []
    for r in sorted(records, key=lambda r: r.seed):
        v = getter(r)
        if metric not in v:
            raise SchemaError(f"seed {r.seed}: metric {metric!r} missing")
        vals.append(v[metric])
    return vals


def compare_runs(records_a: Sequence[RunRecord], records_b: Sequence[RunRecord],
                 label_a: str | None = None, label_b: str | None = None) -> ComparisonReport:
    seeds = _check_pairing(records_a, records_b)
    label_a = label_a or records_a[0].variant
    label_b = label_b or records_b[0].variant

    def rows_for(keys, getter):
        out = []
        for key in keys:
            va, vb = _values(records_a, getter, key), _values(records_b, getter, key)
            if any(v is None for v in va + vb):
                continue
            out.append(stats.compare(va, vb, key))
        return out

    main = rows_for([k for k, _ in METRIC_ROWS], RunRecord.metrics)
    extra = rows_for([k for k, _ in EXTRA_ROWS], RunRecord.metrics)
    corruption: dict[str, dict[str, list[stats.ComparisonStats]]] = {}
    for op in records_a[0].corrupted:
        corruption[op] = {}
        for s in records_a[0].corrupted[op]:
            corruption[op][s] = rows_for([k for k, _ in METRIC_ROWS] + ["conf_acc_corr"],
                                         lambda r, op=op, s=s: r.corrupted[op][s])
    winners = {}
    for r in main + extra:
        if r.metric in CONFIDENCE_METRICS:
            sign = DIRECTION[r.metric]
            if r.mean_a == r.mean_b:
                winners[r.metric] = "tie"
            else:
                winners[r.metric] = label_a if sign * (r.mean_a - r.mean_b) > 0 else label_b
    return ComparisonReport(label_a, label_b, seeds, main, extra, corruption, winners)


def write_comparison(report: ComparisonReport, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "markdown": out / "comparison.md",
        "csv": out / "comparison.csv",
        "json": out / "comparison.json",
    }
    paths["markdown"].write_text(report.markdown())
    paths["csv"].write_text(stats.to_csv(report.rows + report.extra_rows))
    write_json(paths["json"], report.to_dict())
    for op, levels in report.corruption.items():
        p = out / f"corruption_{op}.csv"
        rows = []
        for s, rs in levels.items():
            for r in rs:
                rows.append((s, r))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["severity"] + stats.CSV_FIELDS)
        for s, r in rows:
            d = r.to_dict()
            w.writerow([s] + [repr(d[k]) if isinstance(d[k], float) else d[k] for k in stats.CSV_FIELDS])
        p.write_text(buf.getvalue())
        paths[f"corruption_{op}"] = p
    return paths


def _mean_sd(vals: list[float]) -> tuple[float, float | None]:
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), (float(arr.std(ddof=1)) if arr.size > 1 else None)


def _fmt_sd(sd):
    return "" if sd is None else repr(sd)


def corruption_curves(records: Sequence[RunRecord], op: str, metric: str) -> list[dict]:
    """Rows (variant, severity, mean, sd, n) for one metric under one operator."""
    by_variant: dict[str, list[RunRecord]] = {}
    for r in records:
        if r.ok:
            by_variant.setdefault(r.variant, []).append(r)
    rows = []
    for variant in sorted(by_variant):
        recs = by_variant[variant]
        levels = sorted(recs[0].corrupted.get(op, {}), key=int)
        for s in levels:
            vals = [r.corrupted[op][s][metric] for r in recs]
            if any(v is None for v in vals):
                continue
            mean, sd = _mean_sd(vals)
            rows.append({"variant": variant, "severity": int(s), "mean": mean, "sd": sd, "n": len(vals)})
    return rows


def pooled_bins(records: Sequence[RunRecord], condition: str = "clean") -> list[dict]:
    """Reliability bins pooled over seeds (count-weighted means)."""
    acc: dict[int, dict] = {}
    for r in records:
        report = r.clean if condition == "clean" else r.corrupted[condition.split(":")[0]][condition.split(":")[1]]
        for i, b in enumerate(report["bins"]):
            e = acc.setdefault(i, {"bin_lo": b["lo"], "bin_hi": b["hi"], "count": 0, "conf": 0.0, "acc": 0.0})
            e["count"] += b["count"]
            e["conf"] += b["count"] * b["mean_confidence"]
            e["acc"] += b["count"] * b["mean_accuracy"]
    rows = []
    for i in sorted(acc):
        e = acc[i]
        c = e["count"]
        rows.append({"bin_lo": e["bin_lo"], "bin_hi": e["bin_hi"], "count": c,
                     "mean_conf": e["conf"] / c if c else 0.0, "mean_acc": e["acc"] / c if c else 0.0})
    return rows


def _write_rows(path: Path, fields: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        out = []
        for f in fields:
            v = row[f]
            out.append(_fmt_sd(v) if f == "sd" else (repr(v) if isinstance(v, float) else v))
        w.writerow(out)
    path.write_text(buf.getvalue())


def emit_plotdata(records: Sequence[RunRecord], kind: str, out_dir) -> list[Path]:
    """Write figure-ready CSVs.

    ``kind="corruption"``: one file per (operator, metric) with mean/sd across
    seeds per variant and severity.  ``kind="reliability"``: pooled bins per
    variant, clean and per corruption level.
    """
    records = [r for r in records if r.ok]
    if not records:
        raise ValueError("no successful records")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if kind == "corruption":
        ops = sorted({op for r in records for op in r.corrupted})
        for op in ops:
            for metric in CURVE_METRICS:
                p = out / f"curve_{op}_{metric}.csv"
                _write_rows(p, ["variant", "severity", "mean", "sd", "n"], corruption_curves(records, op, metric))
                written.append(p)
            p = out / f"perturbation_{op}.csv"
            rows = []
            for variant in sorted({r.variant for r in records}):
                recs = [r for r in records if r.variant == variant]
                for s in sorted(recs[0].perturbation.get(op, {}), key=int):
                    mean, sd = _mean_sd([r.perturbation[op][s] for r in recs])
                    rows.append({"variant": variant, "severity": int(s), "mean": mean, "sd": sd, "n": len(recs)})
            _write_rows(p, ["variant", "severity", "mean", "sd", "n"], rows)
            written.append(p)
    elif kind == "reliability":
        for variant in sorted({r.variant for r in records}):
            recs = [r for r in records if r.variant == variant]
            conditions = ["clean"] + [f"{op}:{s}" for op in sorted(recs[0].corrupted) for s in
                                      sorted(recs[0].corrupted[op], key=int)]
            for cond in conditions:
                p = out / f"reliability_{variant}_{cond.replace(':', '_s')}.csv"
                _write_rows(p, ["bin_lo", "bin_hi", "count", "mean_conf", "mean_acc"], pooled_bins(recs, cond))
                written.append(p)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    return written


def read_curve_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["severity"] = int(r["severity"])
        r["mean"] = float(r["mean"])
        r["sd"] = float(r["sd"]) if r["sd"] else None
        r["n"] = int(r["n"])
    return rows
