"""Dense feed-forward networks with exact reverse-mode gradients.

Parameters live in an ordered mapping ``name -> ndarray`` where every linear
layer ``i`` contributes ``fc{i}.weight`` (shape ``out x in``) and, when the
layer has a bias, ``fc{i}.bias``.  Each entry is one :class:`ParamGroup`, the
unit the optimizers orthogonalize over.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError

WEIGHT_MAGIC = b"OGW1"


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "linear" or "relu"
    in_dim: int
    out_dim: int
    has_bias: bool = False

    def __post_init__(self):
        if self.kind not in ("linear", "relu"):
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ConfigurationError("layer dimensions must be positive")
        if self.kind == "relu" and (self.in_dim != self.out_dim or self.has_bias):
            raise ConfigurationError("relu layers are bias-free and dimension-preserving")


def mlp_specs(dims: Sequence[int], has_bias: bool = False) -> list[LayerSpec]:
    """Linear layers joined by ReLUs, no activation after the last layer."""
    if len(dims) < 2:
        raise ConfigurationError("an MLP needs at least input and output dims")
    specs: list[LayerSpec] = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        specs.append(LayerSpec("linear", int(a), int(b), has_bias))
        if i < len(dims) - 2:
            specs.append(LayerSpec("relu", int(b), int(b)))
    return specs


@dataclass
class ParamGroup:
    group_id: str
    theta: np.ndarray
    grad: np.ndarray
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).ravel()
        self.grad = np.asarray(self.grad, dtype=np.float64).ravel()
        if self.theta.shape != self.grad.shape:
            raise ValueError(f"group {self.group_id}: theta and grad lengths differ")
        if not self.shape:
            self.shape = (self.theta.size,)

    @property
    def ndim(self) -> int:
        return len(self.shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class PredictionBatch:
    logits: np.ndarray
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.logits = np.atleast_2d(np.asarray(self.logits, dtype=np.float64))
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        n, k = self.logits.shape
        if self.probs.shape != (n, k) or self.labels.shape != (n,):
            raise ValueError("logits, probs and labels disagree in shape")
        if n and (self.labels.min() < 0 or self.labels.max() >= k):
            raise ValueError("labels out of range")

    @classmethod
    def from_logits(cls, logits, labels) -> "PredictionBatch":
        logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        return cls(logits, softmax(logits), labels)

    @classmethod
    def from_probs(cls, probs, labels) -> "PredictionBatch":
        """Batch whose logits are log-probabilities (zero probs become -inf-safe -745)."""
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        with np.errstate(divide="ignore"):
            logits = np.maximum(np.log(probs), -745.0)
        return cls(logits, probs, labels)

    @property
    def n(self) -> int:
        return self.logits.shape[0]

    @property
    def k(self) -> int:
        return self.logits.shape[1]

    def scaled(self, temperature: float) -> "PredictionBatch":
        return PredictionBatch.from_logits(self.logits / temperature, self.labels)


class Network:
    """Stack of linear/ReLU layers over float64 parameters."""

    def __init__(self, specs: Sequence[LayerSpec], params: dict[str, np.ndarray] | None = None):
        specs = list(specs)
        if not specs or specs[0].kind != "linear" or specs[-1].kind != "linear":
            raise ConfigurationError("network must start and end with a linear layer")
        for a, b in zip(specs[:-1], specs[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigurationError(f"layer dims incompatible: {a.out_dim} -> {b.in_dim}")
        self.specs = specs
        self.params: dict[str, np.ndarray] = {}
        expected = self._param_shapes()
        if params is None:
            params = {name: np.zeros(shape) for name, shape in expected.items()}
        if set(params) != set(expected):
            raise ConfigurationError("parameter names do not match layer specs")
        for name, shape in expected.items():
            arr = np.array(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = arr

    def _linear_layers(self):
        i = 0
        for spec in self.specs:
            if spec.kind == "linear":
                yield i, spec
                i += 1

    def _param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for i, spec in self._linear_layers():
            shapes[f"fc{i}.weight"] = (spec.out_dim, spec.in_dim)
            if spec.has_bias:
                shapes[f"fc{i}.bias"] = (spec.out_dim,)
        return shapes

    @classmethod
    def mlp(cls, dims: Sequence[int], has_bias: bool = False, rng: np.random.Generator | None = None):
        net = cls(mlp_specs(dims, has_bias))
        if rng is not None:
            net.init_he(rng)
        return net

    @property
    def homogeneous(self) -> bool:
        return not any(s.has_bias for s in self.specs)

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    @property
    def group_ids(self) -> list[str]:
        return list(self.params)

    def init_he(self, rng: np.random.Generator) -> None:
        for i, spec in self._linear_layers():
            self.params[f"fc{i}.weight"] = rng.standard_normal((spec.out_dim, spec.in_dim)) * np.sqrt(
                2.0 / spec.in_dim
            )
            if spec.has_bias:
                self.params[f"fc{i}.bias"] = np.zeros(spec.out_dim)

    def copy(self) -> "Network":
        return Network(self.specs, {k: v.copy() for k, v in self.params.items()})

    def flat_params(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()])

    def theta_norm(self) -> float:
        return float(np.sqrt(sum(float(np.dot(v.ravel(), v.ravel())) for v in self.params.values())))

    def groups(self, grads: dict[str, np.ndarray] | None = None) -> list[ParamGroup]:
        out = []
        for name, value in self.params.items():
            g = grads[name] if grads is not None else np.zeros_like(value)
            out.append(ParamGroup(name, value.ravel().copy(), np.asarray(g).ravel().copy(), value.shape))
        return out

    def load_groups(self, groups: Iterable[ParamGroup]) -> None:
        for g in groups:
            shape = self.params[g.group_id].shape
            self.params[g.group_id] = g.theta.reshape(shape).copy()

    # -- forward / backward -------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigurationError(f"input has shape {x.shape}, network expects (N, {self.in_dim})")
        return x

    def _forward_cache(self, x: np.ndarray):
        acts = [x]
        h = x
        li = 0
        for spec in self.specs:
            if spec.kind == "linear":
                h = h @ self.params[f"fc{li}.weight"].T
                if spec.has_bias:
                    h = h + self.params[f"fc{li}.bias"]
                li += 1
            else:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def logits(self, x) -> np.ndarray:
        return self._forward_cache(self._check_input(x))[-1]

    def forward(self, x, labels=None) -> PredictionBatch:
        z = self.logits(x)
        if labels is None:
            labels = np.zeros(z.shape[0], dtype=np.int64)
        return PredictionBatch.from_logits(z, labels)

    def loss_and_grad(self, x, labels) -> tuple[float, list[ParamGroup]]:
        """Mean cross-entropy (nats) and its exact gradient for every group."""
        x = self._check_input(x)
        labels = np.asarray(labels, dtype=np.int64).ravel()
        n = x.shape[0]
        if n == 0:
            raise ValueError("empty batch")
        if labels.shape != (n,):
            raise ValueError("labels length does not match batch")
        if labels.min() < 0 or labels.max() >= self.out_dim:
            raise ValueError("labels out of range")
        acts = self._forward_cache(x)
        logp = log_softmax(acts[-1])
        loss = float(-logp[np.arange(n), labels].mean())

        delta = np.exp(logp)
        delta[np.arange(n), labels] -= 1.0
        delta /= n
        grads: dict[str, np.ndarray] = {}
        li = sum(1 for s in self.specs if s.kind == "linear")
        for idx in range(len(self.specs) - 1, -1, -1):
            spec = self.specs[idx]
            inp = acts[idx]
            if spec.kind == "linear":
                li -= 1
                grads[f"fc{li}.weight"] = delta.T @ inp
                if spec.has_bias:
                    grads[f"fc{li}.bias"] = delta.sum(axis=0)
                if idx > 0:
                    delta = delta @ self.params[f"fc{li}.weight"]
            else:
                # subgradient of relu at 0 is 0
                delta = delta * (inp > 0.0)
        return loss, self.groups(grads)

    def loss(self, x, labels) -> float:
        x = self._check_input(x)
        labels = np.asarray(labels, dtype=np.int64).ravel()
        logp = log_softmax(self.logits(x))
        return float(-logp[np.arange(x.shape[0]), labels].mean())


def forward(network: Network, batch, labels=None) -> PredictionBatch:
    return network.forward(batch, labels)


def loss_and_grad(network: Network, batch, labels):
    return network.loss_and_grad(batch, labels)


def scale_group(network: Network, group_id: str, c: float) -> Network:
    """Copy of ``network`` with one parameter group multiplied by ``c > 0``."""
    if not c > 0:
        raise ValueError(f"scale factor must be positive, got {c}")
    if group_id not in network.params:
        raise KeyError(group_id)
    out = network.copy()
    if c != 1.0:
        out.params[group_id] = out.params[group_id] * c
    return out


@dataclass
class HomogeneityEntry:
    group_id: str
    c: float
    alpha: float
    residual: float


@dataclass
class HomogeneityReport:
    entries: list[HomogeneityEntry] = field(default_factory=list)
    tol: float = 1e-8

    @property
    def max_residual(self) -> float:
        return max((e.residual for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return all(e.alpha > 0 for e in self.entries) and self.max_residual < self.tol

    def alpha(self, group_id: str, c: float) -> float:
        for e in self.entries:
            if e.group_id == group_id and e.c == c:
                return e.alpha
        raise KeyError((group_id, c))


def homogeneity_check(network: Network, samples, c_list: Sequence[float], tol: float = 1e-8) -> HomogeneityReport:
    """Check logits' = alpha * logits for every (group, c) by least squares.

    ``residual`` is ``||z' - alpha z|| / ||z'||`` over all samples.
    """
    base = network.logits(samples).ravel()
    denom = float(np.dot(base, base))
    report = HomogeneityReport(tol=tol)
    for gid in network.group_ids:
        for c in c_list:
            scaled = scale_group(network, gid, c).logits(samples).ravel()
            alpha = float(np.dot(scaled, base) / denom) if denom > 0 else 0.0
            resid = scaled - alpha * base
            norm = float(np.linalg.norm(scaled))
            rel = float(np.linalg.norm(resid) / norm) if norm > 0 else 0.0
            report.entries.append(HomogeneityEntry(gid, float(c), alpha, rel))
    return report


def save_weights(network: Network, path) -> None:
    """Header ``OGW1``, u32 layer count, per-layer (in, out, has_bias) then LE float64 data."""
    linear = [s for s in network.specs if s.kind == "linear"]
    parts = [WEIGHT_MAGIC, struct.pack("<I", len(linear))]
    for s in linear:
        parts.append(struct.pack("<III", s.in_dim, s.out_dim, int(s.has_bias)))
    for i, s in enumerate(linear):
        parts.append(network.params[f"fc{i}.weight"].astype("<f8").tobytes(order="C"))
        if s.has_bias:
            parts.append(network.params[f"fc{i}.bias"].astype("<f8").tobytes(order="C"))
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> Network:
    raw = Path(path).read_bytes()
    if raw[:4] != WEIGHT_MAGIC:
        raise ConfigurationError(f"{path}: bad magic {raw[:4]!r}")
    (count,) = struct.unpack_from("<I", raw, 4)
    off = 8
    dims = []
    for _ in range(count):
        dims.append(struct.unpack_from("<III", raw, off))
        off += 12
    has_bias = {bool(b) for _, _, b in dims}
    if len(has_bias) > 1:
        raise ConfigurationError("mixed bias flags are not supported")
    specs = mlp_specs([dims[0][0]] + [o for _, o, _ in dims], has_bias.pop())
    params = {}
    for i, (din, dout, b) in enumerate(dims):
        n = din * dout
        params[f"fc{i}.weight"] = np.frombuffer(raw, "<f8", n, off).reshape(dout, din).astype(np.float64)
        off += 8 * n
        if b:
            params[f"fc{i}.bias"] = np.frombuffer(raw, "<f8", dout, off).astype(np.float64)
            off += 8 * dout
    if off != len(raw):
        raise ConfigurationError(f"{path}: {len(raw) - off} trailing bytes")
    return Network(specs, params)
