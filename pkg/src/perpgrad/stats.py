"""Seed aggregation, Cohen's d and Welch's t-test."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .calibration import METRIC_ROWS


def _betacf(a: float, b: float, x: float, max_iter: int = 100000, eps: float = 1e-16) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta failed to converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float, one_minus_x: float | None = None) -> float:
    """Regularized incomplete beta I_x(a, b).

    ``one_minus_x`` may be passed when it is known more accurately than ``1 - x``.
    """
    if one_minus_x is None:
        one_minus_x = 1.0 - x
    if x <= 0.0:
        return 0.0
    if one_minus_x <= 0.0:
        return 1.0
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log(one_minus_x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, one_minus_x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if not df > 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))


def students_t_cdf(t: float, df: float) -> float:
    if not df > 0:
        raise ValueError("df must be positive")
    if t == 0.0:
        return 0.5
    tail = 0.5 * t_two_sided_p(t, df)
    return 1.0 - tail if t > 0 else tail


@dataclass
class ComparisonStats:
    metric: str
    mean_a: float
    mean_b: float
    sd_a: float
    sd_b: float
    n_a: int
    n_b: int
    effect_size: float
    ci_lo: float
    ci_hi: float
    p_value: float
    t_stat: float
    df: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def compare(metric_a: Sequence[float], metric_b: Sequence[float], metric: str = "") -> ComparisonStats:
    """Cohen's d (pooled SD, a minus b), its 95% CI and Welch's two-sided p."""
    a = np.asarray(metric_a, dtype=np.float64)
    b = np.asarray(metric_b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two values")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    diff = ma - mb
    pooled = math.sqrt(((na - 1) * va + (nb - 1) * vb) / (na + nb - 2))
    common = dict(metric=metric, mean_a=ma, mean_b=mb, sd_a=math.sqrt(va), sd_b=math.sqrt(vb), n_a=na, n_b=nb)
    if pooled == 0.0:
        if diff == 0.0:
            return ComparisonStats(**common, effect_size=0.0, ci_lo=0.0, ci_hi=0.0, p_value=1.0, t_stat=0.0,
                                   df=float(na + nb - 2))
        d = math.copysign(math.inf, diff)
        return ComparisonStats(**common, effect_size=d, ci_lo=d, ci_hi=d, p_value=math.nan, t_stat=d,
                               df=math.nan, degenerate=True)
    d = diff / pooled
    se_d = math.sqrt((na + nb) / (na * nb) + d * d / (2.0 * (na + nb)))
    sa, sb = va / na, vb / nb
    se = math.sqrt(sa + sb)
    t = diff / se
    df = (sa + sb) ** 2 / (sa * sa / (na - 1) + sb * sb / (nb - 1))
    p = max(t_two_sided_p(t, df), math.ulp(0.0))
    return ComparisonStats(**common, effect_size=d, ci_lo=d - 1.96 * se_d, ci_hi=d + 1.96 * se_d,
                           p_value=min(p, 1.0), t_stat=t, df=df)


@dataclass
class SeedMetricSet:
    seed: int
    metrics: dict[str, float]


@dataclass
class MetricSummary:
    metric: str
    mean: float
    sd: float | None
    n: int

    @property
    def sd_undefined(self) -> bool:
        return self.sd is None


def metric_order(names) -> list[str]:
    known = [k for k, _ in METRIC_ROWS if k in names]
    return known + sorted(n for n in names if n not in known)


def aggregate(seed_sets: Sequence[SeedMetricSet]) -> list[MetricSummary]:
    """Mean and sample SD per metric, table row order first."""
    if not seed_sets:
        raise ValueError("need at least one seed set")
    keys = set(seed_sets[0].metrics)
    for s in seed_sets[1:]:
        if set(s.metrics) != keys:
            raise ValueError(f"seed {s.seed} has metric keys {sorted(s.metrics)}, expected {sorted(keys)}")
    out = []
    for name in metric_order(keys):
        vals = np.array([s.metrics[name] for s in seed_sets], dtype=np.float64)
        sd = float(vals.std(ddof=1)) if vals.size > 1 else None
        out.append(MetricSummary(name, float(vals.mean()), sd, int(vals.size)))
    return out


def _fmt(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x != 0 and (abs(x) < 1e-3 or abs(x) >= 1e5):
        return f"{x:.2e}"
    return f"{x:.4g}"


def to_markdown(rows: Sequence[ComparisonStats], label_a: str = "SGD", label_b: str = "PerpGrad",
                labels: dict[str, str] | None = None) -> str:
    labels = labels or dict(METRIC_ROWS)
    lines = [
        f"| | {label_a} | {label_b} | Effect Size | 95% Confidence Interval | p value |",
        "|---|---|---|---|---|---|",
    ]
    for r in rows:
        flag = " (degenerate)" if r.degenerate else ""
        lines.append(
            f"| {labels.get(r.metric, r.metric)} | {_fmt(r.mean_a)} | {_fmt(r.mean_b)} | {_fmt(r.effect_size)}{flag} "
            f"| ({_fmt(r.ci_lo)}, {_fmt(r.ci_hi)}) | {_fmt(r.p_value)} |"
        )
    return "\n".join(lines) + "\n"


CSV_FIELDS = ["metric", "mean_a", "mean_b", "sd_a", "sd_b", "n_a", "n_b", "effect_size", "ci_lo", "ci_hi",
              "p_value", "t_stat", "df", "degenerate"]


def to_csv(rows: Sequence[ComparisonStats]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        d = r.to_dict()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in d.items()})
    return buf.getvalue()
