"""Uncertainty metrics, reliability bins and temperature scaling."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .netcore import PredictionBatch, log_softmax

# Row order of the comparison table.
METRIC_ROWS = (
    ("top1_acc", "Top1 Accuracy"),
    ("top5_acc", "Top5 Accuracy"),
    ("nll", "Loss"),
    ("ece", "ECE"),
    ("brier", "Brier Score"),
    ("mean_entropy", "Entropy"),
    ("mean_max_softmax", "Max Softmax"),
    ("mean_max_logit", "Max Logit"),
    ("mean_logit_variance", "Logit Variance"),
)


@dataclass
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    mean_confidence: float
    mean_accuracy: float


@dataclass
class CalibrationReport:
    top1_acc: float
    top5_acc: float
    nll: float
    ece: float
    brier: float
    mean_entropy: float
    mean_max_softmax: float
    mean_max_logit: float
    mean_logit_variance: float
    conf_acc_corr: float | None
    bins: list[ReliabilityBin] = field(default_factory=list)

    def metrics(self) -> dict[str, float | None]:
        d = asdict(self)
        d.pop("bins")
        return d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationReport":
        d = dict(d)
        d["bins"] = [ReliabilityBin(**b) for b in d.get("bins", [])]
        return cls(**d)


@dataclass
class TemperatureResult:
    t_star: float
    nll_before: float
    nll_after: float
    ece_before: float
    ece_after: float
    brier_before: float
    brier_after: float
    degenerate: bool = False


def topn_correct(batch: PredictionBatch, topn: int) -> np.ndarray:
    """Boolean per sample: label among the ``topn`` largest logits (ties -> lower index)."""
    if not 1 <= topn <= batch.k:
        raise ValueError(f"topn must lie in [1, {batch.k}]")
    # stable sort on -logits keeps lower class index first among ties
    order = np.argsort(-batch.logits, axis=1, kind="stable")[:, :topn]
    return (order == batch.labels[:, None]).any(axis=1)


def accuracy(batch: PredictionBatch, topn: int = 1) -> float:
    return float(topn_correct(batch, topn).mean())


def predictions(batch: PredictionBatch) -> np.ndarray:
    return np.argmax(batch.logits, axis=1)


def nll(batch: PredictionBatch) -> float:
    logp = log_softmax(batch.logits)
    return float(-logp[np.arange(batch.n), batch.labels].mean())


def reliability_bins(batch: PredictionBatch, n_bins: int = 15) -> list[ReliabilityBin]:
    """Equal-width bins over max-softmax confidence.

    A confidence exactly on an interior edge lands in the upper bin; 1.0 stays
    in the top bin.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if batch.n == 0:
        raise ValueError("empty batch")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    conf = batch.probs.max(axis=1)
    correct = (np.argmax(batch.logits, axis=1) == batch.labels).astype(np.float64)
    idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, n_bins - 1)
    bins = []
    for b in range(n_bins):
        mask = idx == b
        cnt = int(mask.sum())
        bins.append(
            ReliabilityBin(
                lo=float(edges[b]),
                hi=float(edges[b + 1]),
                count=cnt,
                mean_confidence=float(conf[mask].mean()) if cnt else 0.0,
                mean_accuracy=float(correct[mask].mean()) if cnt else 0.0,
            )
        )
    return bins


def ece_from_bins(bins: list[ReliabilityBin]) -> float:
    n = sum(b.count for b in bins)
    return float(sum(b.count / n * abs(b.mean_accuracy - b.mean_confidence) for b in bins if b.count))


def ece(batch: PredictionBatch, n_bins: int = 15) -> float:
    return ece_from_bins(reliability_bins(batch, n_bins))


def brier(batch: PredictionBatch) -> float:
    onehot = np.zeros_like(batch.probs)
    onehot[np.arange(batch.n), batch.labels] = 1.0
    return float(((batch.probs - onehot) ** 2).sum(axis=1).mean())


def entropy_stats(batch: PredictionBatch) -> float:
    p = batch.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return float(-terms.sum(axis=1).mean())


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson correlation; None below two samples, 0 if either side is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def confidence_stats(batch: PredictionBatch) -> tuple[float, float, float, float | None]:
    """(mean max softmax, mean max logit, mean logit variance, conf-acc correlation)."""
    conf = batch.probs.max(axis=1)
    correct = (np.argmax(batch.logits, axis=1) == batch.labels).astype(np.float64)
    return (
        float(conf.mean()),
        float(batch.logits.max(axis=1).mean()),
        float(batch.logits.var(axis=1).mean()),
        pearson(conf, correct),
    )


def evaluate(batch: PredictionBatch, n_bins: int = 15) -> CalibrationReport:
    bins = reliability_bins(batch, n_bins)
    max_sm, max_logit, logit_var, corr = confidence_stats(batch)
    return CalibrationReport(
        top1_acc=accuracy(batch, 1),
        top5_acc=accuracy(batch, min(5, batch.k)),
        nll=nll(batch),
        ece=ece_from_bins(bins),
        brier=brier(batch),
        mean_entropy=entropy_stats(batch),
        mean_max_softmax=max_sm,
        mean_max_logit=max_logit,
        mean_logit_variance=logit_var,
        conf_acc_corr=corr,
        bins=bins,
    )


def bins_to_csv(bins: list[ReliabilityBin]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "count", "mean_conf", "mean_acc"])
    for b in bins:
        w.writerow([repr(b.lo), repr(b.hi), b.count, repr(b.mean_confidence), repr(b.mean_accuracy)])
    return buf.getvalue()


def _nll_at(logits: np.ndarray, labels: np.ndarray, t: float) -> float:
    logp = log_softmax(logits / t)
    return float(-logp[np.arange(len(labels)), labels].mean())


def fit_temperature(
    validation: PredictionBatch,
    lo: float = 0.05,
    hi: float = 20.0,
    tol: float = 1e-6,
    n_bins: int = 15,
) -> TemperatureResult:
    """Golden-section search for the NLL-minimizing temperature on log T."""
    if validation.n == 0:
        raise ValueError("empty validation batch")
    logits, labels = validation.logits, validation.labels
    degenerate = bool(np.all(logits == logits[:, :1]))
    before = (nll(validation), ece(validation, n_bins), brier(validation))
    if degenerate:
        t_star = 1.0
    else:
        f = lambda u: _nll_at(logits, labels, math.exp(u))  # noqa: E731
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        a, b = math.log(lo), math.log(hi)
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = f(c), f(d)
        while b - a > tol:
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = f(d)
        u = (a + b) / 2.0
        t_star = math.exp(u)
        # never report a temperature worse than leaving the logits alone
        if f(u) > before[0]:
            t_star = 1.0
    after = validation.scaled(t_star)
    return TemperatureResult(
        t_star=t_star,
        nll_before=before[0],
        nll_after=nll(after),
        ece_before=before[1],
        ece_after=ece(after, n_bins),
        brier_before=before[2],
        brier_after=brier(after),
        degenerate=degenerate,
    )


def apply_temperature(batch: PredictionBatch, t: float) -> PredictionBatch:
    if not t > 0:
        raise ValueError("temperature must be positive")
    return batch.scaled(t)
