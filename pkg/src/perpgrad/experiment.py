"""Experiment configuration, multi-seed training/evaluation and run records."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import calibration as cal
from .corruption import OPERATORS, CorruptionSpec, corrupt, perturbation_magnitude
from .data import DatasetSpec, Splits, make_dataset
from .errors import ConfigurationError, NonFiniteGradientError
from .netcore import Network, PredictionBatch, save_weights
from .optim import Optimizer, OptimConfig, RunLog
from .rng import stream

SCHEMA_VERSION = 1


@dataclass
class NetworkSpec:
    hidden: list[int] = field(default_factory=lambda: [32, 32])
    has_bias: bool = False

    def dims(self, n_in: int, n_out: int) -> list[int]:
        return [n_in, *self.hidden, n_out]


@dataclass
class CorruptionPlan:
    operators: list[str] = field(default_factory=lambda: ["gaussian_noise"])
    severities: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])

    def __post_init__(self):
        for op in self.operators:
            if op not in OPERATORS:
                raise ConfigurationError(f"unknown corruption {op!r}")
        for s in self.severities:
            CorruptionSpec(self.operators[0] if self.operators else "gaussian_noise", s)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    optim: OptimConfig = field(default_factory=OptimConfig)
    epochs: int = 10
    batch_size: int = 64
    seeds: list[int] = field(default_factory=lambda: [0])
    label_fraction: float = 1.0
    corruption: CorruptionPlan = field(default_factory=CorruptionPlan)
    n_bins: int = 15
    output_dir: str = "runs/experiment"
    workers: int = 1
    trace: bool = False

    def __post_init__(self):
        if not 0 < self.label_fraction <= 1:
            raise ConfigurationError("label_fraction must lie in (0, 1]")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = copy.deepcopy(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        nested = {"dataset": DatasetSpec, "network": NetworkSpec, "optim": OptimConfig, "corruption": CorruptionPlan}
        for key, typ in nested.items():
            if key in d:
                sub = d[key] or {}
                names = {f.name for f in dataclasses.fields(typ)}
                bad = set(sub) - names
                if bad:
                    raise ConfigurationError(f"unknown keys in {key}: {sorted(bad)}")
                d[key] = typ(**sub)
        if isinstance(d.get("seeds"), int):
            d["seeds"] = list(range(d["seeds"]))
        return cls(**d)

    def canonical(self, include_variant: bool = True) -> dict:
        d = self.to_dict()
        for k in ("seeds", "output_dir", "workers", "trace", "name"):
            d.pop(k)
        if not include_variant:
            d["optim"].pop("variant")
        return d

    def config_hash(self, include_variant: bool = True) -> str:
        blob = json.dumps(self.canonical(include_variant), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_variant(self, variant: str) -> "ExperimentConfig":
        d = self.to_dict()
        d["optim"]["variant"] = variant
        return ExperimentConfig.from_dict(d)


def load_config(path, overrides: list[str] | None = None) -> ExperimentConfig:
    raw = yaml.safe_load(Path(path).read_text()) if path else {}
    raw = raw or {}
    for item in overrides or []:
        apply_override(raw, item)
    return ExperimentConfig.from_dict(raw)


def apply_override(raw: dict, item: str) -> None:
    """``a.b.c=value`` with the value parsed as YAML."""
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override {item!r} descends into a scalar")
    node[parts[-1]] = yaml.safe_load(value)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


# -- run records ----------------------------------------------------------------

@dataclass
class RunRecord:
    config_hash: str
    base_hash: str
    seed: int
    variant: str
    status: str
    train_loss: list[float]
    theta_norms: list[float]
    final_theta_norm: float | None
    clean: dict | None
    clean_temp_scaled: dict | None
    temperature: dict | None
    corrupted: dict[str, dict[str, dict]]
    perturbation: dict[str, dict[str, float]]
    skipped_steps: int = 0
    passthrough_steps: int = 0
    error: str | None = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        validate_record(d)
        return cls(**d)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def metrics(self) -> dict[str, float]:
        """Scalar metrics used for seed comparisons."""
        m = {k: v for k, v in self.clean.items() if k != "bins"}
        m["final_theta_norm"] = self.final_theta_norm
        m["t_star"] = self.temperature["t_star"]
        m["ece_after_temp"] = self.clean_temp_scaled["ece"]
        m["brier_after_temp"] = self.clean_temp_scaled["brier"]
        return m


_BIN = {
    "type": "object",
    "required": ["lo", "hi", "count", "mean_confidence", "mean_accuracy"],
    "properties": {
        "lo": {"type": "number"}, "hi": {"type": "number"}, "count": {"type": "integer", "minimum": 0},
        "mean_confidence": {"type": "number"}, "mean_accuracy": {"type": "number"},
    },
}
_REPORT = {
    "type": "object",
    "required": [k for k, _ in cal.METRIC_ROWS] + ["conf_acc_corr", "bins"],
    "properties": {
        **{k: {"type": "number"} for k, _ in cal.METRIC_ROWS},
        "conf_acc_corr": {"type": ["number", "null"]},
        "bins": {"type": "array", "items": _BIN},
    },
}
RUN_RECORD_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "config_hash", "base_hash", "seed", "variant", "status", "train_loss",
                 "theta_norms", "final_theta_norm", "clean", "clean_temp_scaled", "temperature", "corrupted",
                 "perturbation", "skipped_steps", "passthrough_steps", "error"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "base_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "seed": {"type": "integer"},
        "variant": {"enum": ["sgd", "perp_renorm", "perp_plain"]},
        "status": {"enum": ["ok", "failed"]},
        "train_loss": {"type": "array", "items": {"type": "number"}},
        "theta_norms": {"type": "array", "items": {"type": "number"}},
        "final_theta_norm": {"type": ["number", "null"]},
        "clean": {"type": ["object", "null"]},
        "clean_temp_scaled": {"type": ["object", "null"]},
        "corrupted": {"type": "object"},
        "skipped_steps": {"type": "integer"},
        "passthrough_steps": {"type": "integer"},
        "error": {"type": ["string", "null"]},
        "temperature": {
            "type": ["object", "null"],
            "required": ["t_star", "nll_before", "nll_after", "ece_before", "ece_after", "brier_before",
                         "brier_after", "degenerate"],
        },
        "perturbation": {"type": "object", "additionalProperties": {"type": "object",
                                                                    "additionalProperties": {"type": "number"}}},
    },
    "allOf": [
        {
            "if": {"properties": {"status": {"const": "ok"}}},
            "then": {
                "properties": {
                    "clean": _REPORT,
                    "clean_temp_scaled": _REPORT,
                    "temperature": {"type": "object"},
                    "final_theta_norm": {"type": "number"},
                    "corrupted": {"type": "object", "additionalProperties": {
                        "type": "object", "additionalProperties": _REPORT}},
                }
            },
        }
    ],
}


def validate_record(d: dict) -> None:
    import jsonschema

    from .errors import SchemaError

    try:
        jsonschema.validate(d, RUN_RECORD_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise SchemaError(f"run record invalid at '{path}': {exc.message}") from None


# -- training -------------------------------------------------------------------

def build_network(cfg: ExperimentConfig, splits: Splits, seed: int) -> Network:
    dims = cfg.network.dims(splits.train.X.shape[1], splits.n_classes)
    return Network.mlp(dims, cfg.network.has_bias, stream(seed, "init"))


def train(net: Network, X: np.ndarray, y: np.ndarray, opt: Optimizer, epochs: int, batch_size: int,
          rng: np.random.Generator) -> RunLog:
    log = RunLog(theta_norms=[net.theta_norm()])
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, groups = net.loss_and_grad(X[idx], y[idx])
            if not math.isfinite(loss):
                raise NonFiniteGradientError(f"non-finite loss at step {opt.n_steps}", {"step": opt.n_steps})
            new_groups, diags = opt.step(groups)
            net.load_groups(new_groups)
            log.skipped_steps += sum(d.skipped for d in diags)
            log.passthrough_steps += sum(d.passthrough for d in diags)
            total += loss * len(idx)
        log.train_loss.append(total / n)
        log.theta_norms.append(net.theta_norm())
    return log


def _predictions_csv(batch: PredictionBatch) -> str:
    k = batch.k
    lines = [",".join([f"logit_{i}" for i in range(k)] + ["label"])]
    for row, lab in zip(batch.logits, batch.labels):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(lab))]))
    return "\n".join(lines) + "\n"


def evaluate_corruptions(net: Network, splits: Splits, plan: CorruptionPlan, seed: int, n_bins: int):
    corrupted: dict[str, dict[str, dict]] = {}
    perturb: dict[str, dict[str, float]] = {}
    X, y = splits.test.X, splits.test.y
    for op in plan.operators:
        corrupted[op], perturb[op] = {}, {}
        for s in plan.severities:
            # same stream for every severity: common random numbers across levels
            Xc = corrupt(X, CorruptionSpec(op, s), stream(seed, f"corrupt/{op}"), splits.value_range, splits.grid)
            corrupted[op][str(s)] = cal.evaluate(net.forward(Xc, y), n_bins).to_dict()
            perturb[op][str(s)] = perturbation_magnitude(X, Xc)
    return corrupted, perturb


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Path | None = None) -> tuple[RunRecord, float]:
    t0 = time.perf_counter()
    variant = cfg.optim.variant
    base = dict(config_hash=cfg.config_hash(), base_hash=cfg.config_hash(False), seed=int(seed), variant=variant)
    splits = make_dataset(cfg.dataset, seed, cfg.label_fraction)
    if "box_blur" in cfg.corruption.operators and splits.grid is None:
        raise ConfigurationError("box_blur requested on a dataset without a grid")
    net = build_network(cfg, splits, seed)
    trace_fh = None
    if cfg.trace and out_dir is not None:
        trace_fh = (out_dir / f"seed_{seed}.trace.jsonl").open("w")
    opt = Optimizer(cfg.optim, trace=trace_fh)
    try:
        log = train(net, splits.train.X, splits.train.y, opt, cfg.epochs, cfg.batch_size, stream(seed, "shuffle"))
    except NonFiniteGradientError as exc:
        if out_dir is not None:
            (out_dir / f"seed_{seed}.failure.json").write_text(json.dumps(exc.dump, sort_keys=True, indent=1))
        rec = RunRecord(**base, status="failed", train_loss=[], theta_norms=[], final_theta_norm=None, clean=None,
                        clean_temp_scaled=None, temperature=None, corrupted={}, perturbation={}, error=str(exc))
        return rec, time.perf_counter() - t0
    finally:
        if trace_fh is not None:
            trace_fh.close()
    test = net.forward(splits.test.X, splits.test.y)
    val = net.forward(splits.val.X, splits.val.y)
    temp = cal.fit_temperature(val, n_bins=cfg.n_bins)  # validation split only
    corrupted, perturb = evaluate_corruptions(net, splits, cfg.corruption, seed, cfg.n_bins)
    rec = RunRecord(
        **base,
        status="ok",
        train_loss=log.train_loss,
        theta_norms=log.theta_norms,
        final_theta_norm=log.theta_norms[-1],
        clean=cal.evaluate(test, cfg.n_bins).to_dict(),
        clean_temp_scaled=cal.evaluate(test.scaled(temp.t_star), cfg.n_bins).to_dict(),
        temperature=dataclasses.asdict(temp),
        corrupted=corrupted,
        perturbation=perturb,
        skipped_steps=log.skipped_steps,
        passthrough_steps=log.passthrough_steps,
    )
    if out_dir is not None:
        save_weights(net, out_dir / f"seed_{seed}.ogw")
        (out_dir / f"seed_{seed}.val_logits.csv").write_text(_predictions_csv(val))
        (out_dir / f"seed_{seed}.test_logits.csv").write_text(_predictions_csv(test))
    return rec, time.perf_counter() - t0


def _run_seed_job(args):
    cfg_dict, seed, out = args
    return run_seed(ExperimentConfig.from_dict(cfg_dict), seed, Path(out) if out else None)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> list[RunRecord]:
    """Train and evaluate every seed; records are written under ``out_dir/<variant>/``."""
    vdir = None
    if out_dir is not None:
        vdir = Path(out_dir) / cfg.optim.variant
        vdir.mkdir(parents=True, exist_ok=True)
        (vdir / "config.yaml").write_text(dump_config(cfg))
    jobs = [(cfg.to_dict(), s, str(vdir) if vdir else None) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(j) for j in jobs]
    records = [r for r, _ in results]
    if vdir is not None:
        for rec in records:
            (vdir / f"seed_{rec.seed}.json").write_text(rec.to_json() + "\n")
        # wall time is kept out of every JSON artifact so those stay byte-stable
        rows = "".join(f"{r.seed}\t{t:.3f}\n" for r, t in results)
        (vdir / "timings.tsv").write_text("seed\twall_seconds\n" + rows)
    return records


def load_records(run_dir) -> list[RunRecord]:
    run_dir = Path(run_dir)
    files = sorted(run_dir.glob("seed_*.json"), key=lambda p: int(p.stem.split("_")[1].split(".")[0]))
    files = [f for f in files if f.name.count(".") == 1]
    if not files:
        raise FileNotFoundError(f"no run records in {run_dir}")
    return [RunRecord.from_dict(json.loads(f.read_text())) for f in files]


def write_json(path, obj: Any) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1, allow_nan=False) + "\n")
