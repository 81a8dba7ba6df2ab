"""MLP regressor/classifier kernels, hard-constraint layers and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .schema import (N_PAIRED, PAIR_OFFSET, SCHEMA, SPECIES_INDICES,
                     SchemaError, Species)
from .transforms import NormStats, LogTransformConfig

CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid")
LEAKY_SLOPE = 0.01
DEFAULT_ARCH = (32, 128, 128, 128, 28)
CONSTRAINT_MODES = ("none", "correct", "complete", "correct_then_complete")


class CheckpointError(ValueError):
    pass


@dataclass
class MlpParams:
    arch: tuple
    activation: str
    weights: list  # weights[l] has shape (fan_in, fan_out)
    biases: list
    schema_hash: str = SCHEMA.hash
    transform: str = "standard"

    def __post_init__(self):
        self.arch = tuple(int(a) for a in self.arch)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.arch) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("layer count does not match architecture")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.arch[l], self.arch[l + 1]) or b.shape != (self.arch[l + 1],):
                raise ValueError(f"layer {l} shape {w.shape}/{b.shape} disagrees with arch {self.arch}")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list:
        """Parameter arrays in a fixed order: W0, b0, W1, b1, ..."""
        return [a for wb in zip(self.weights, self.biases) for a in wb]

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, self.activation, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.schema_hash, self.transform)

    def astype(self, dtype) -> "MlpParams":
        p = self.copy()
        p.weights = [w.astype(dtype) for w in p.weights]
        p.biases = [b.astype(dtype) for b in p.biases]
        return p


def _check_arch(arch):
    arch = tuple(int(a) for a in arch)
    if len(arch) < 2:
        raise ValueError("architecture needs at least input and output widths")
    if any(a <= 0 for a in arch):
        raise ValueError(f"layer widths must be positive, got {arch}")
    return arch


def init(arch=DEFAULT_ARCH, activation="relu", seed=0, transform="standard") -> MlpParams:
    """He-normal weights (variance 2/fan_in) and zero biases."""
    arch = _check_arch(arch)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(fan_out))
    return MlpParams(arch, activation, weights, biases, transform=transform)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    if name == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    if name == "tanh":
        return np.tanh(z)
    return 0.5 * (1.0 + np.tanh(0.5 * z))  # sigmoid without overflow


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE).astype(z.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def _forward_cached(params: MlpParams, x):
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != params.arch[0]:
        raise ValueError(f"batch shape {x.shape} does not match input width {params.arch[0]}")
    zs, acts = [], [x]
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w
        z += b
        if l < last:
            zs.append(z)
            h = _act(params.activation, z)
            acts.append(h)
        else:
            h = z
    return h, (zs, acts)


def forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network on an (n, arch[0]) batch; the output layer is linear."""
    return _forward_cached(params, x)[0]


def _act_inplace(name, z):
    if name == "relu":
        np.maximum(z, 0, out=z)
    elif name == "leaky_relu":
        np.maximum(z, LEAKY_SLOPE * z, out=z)
    elif name == "tanh":
        np.tanh(z, out=z)
    else:
        z[...] = _act(name, z)


def forward_blocked(params: MlpParams, x, chunk: int = 4096) -> np.ndarray:
    """Inference-only :func:`forward` over row blocks with in-place activations.

    Blocks of a few thousand rows keep the hidden activations cache-resident, which
    roughly halves the memory traffic of the elementwise passes on large batches.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != params.arch[0]:
        raise ValueError(f"batch shape {x.shape} does not match input width {params.arch[0]}")
    out = np.empty((len(x), params.arch[-1]), dtype=np.result_type(x, params.weights[0]))
    last = len(params.weights) - 1
    for start in range(0, len(x), chunk):
        h = x[start:start + chunk]
        for l, (w, b) in enumerate(zip(params.weights, params.biases)):
            z = h @ w
            z += b
            if l < last:
                _act_inplace(params.activation, z)
            h = z
        out[start:start + chunk] = h
    return out


def forward_sharded(params: MlpParams, x, threads: int = 1) -> np.ndarray:
    """:func:`forward` split over row shards on `threads` worker threads.

    Rows are independent, so the result does not depend on the shard count.
    """
    if threads <= 1 or len(x) < 2 * threads:
        return forward(params, x)
    from concurrent.futures import ThreadPoolExecutor

    bounds = np.linspace(0, len(x), threads + 1).astype(int)
    out = np.empty((len(x), params.arch[-1]), dtype=np.result_type(x, params.weights[0]))
    def run(i):
        out[bounds[i]:bounds[i + 1]] = forward(params, x[bounds[i]:bounds[i + 1]])
    with ThreadPoolExecutor(threads) as pool:
        list(pool.map(run, range(threads)))
    return out


@dataclass
class Gradients:
    weights: list
    biases: list
    inputs: np.ndarray

    def arrays(self) -> list:
        return [a for wb in zip(self.weights, self.biases) for a in wb]


def backward(params: MlpParams, x, grad_out, cache=None) -> Gradients:
    """Reverse-mode gradients of ``sum(forward(x) * grad_out)``."""
    if cache is None:
        _, cache = _forward_cached(params, x)
    zs, acts = cache
    grad_out = np.asarray(grad_out)
    n_out = params.arch[-1]
    if grad_out.shape != (acts[0].shape[0], n_out):
        raise ValueError(f"output gradient shape {grad_out.shape} != {(acts[0].shape[0], n_out)}")
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    delta = grad_out
    for l in range(len(params.weights) - 1, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l].T
        if l > 0:
            delta = delta * _act_grad(params.activation, zs[l - 1], acts[l])
    return Gradients(gw, gb, delta)


# ---------------------------------------------------------------- constraints

@dataclass
class ConstraintConfig:
    mode: str = "none"
    completion_indices: dict = field(default_factory=lambda: {s.value: SPECIES_INDICES[s][-1]
                                                              for s in Species})

    def __post_init__(self):
        if self.mode not in CONSTRAINT_MODES:
            raise ValueError(f"unknown constraint mode {self.mode!r}; choose from {CONSTRAINT_MODES}")
        idx = {Species(k).value: int(v) for k, v in self.completion_indices.items()}
        for s in Species:
            j = idx.get(s.value)
            if j is None or j not in SCHEMA.species_groups[s]:
                raise ValueError(f"completion index for {s.value} must lie in {sorted(SCHEMA.species_groups[s])}")
        self.completion_indices = {s.value: idx[s.value] for s in Species}

    def with_mode(self, mode) -> "ConstraintConfig":
        return ConstraintConfig(mode, dict(self.completion_indices))

    def to_dict(self):
        return {"mode": self.mode, "completion_indices": dict(self.completion_indices)}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("mode", "none"), d.get("completion_indices") or ConstraintConfig().completion_indices)


def correct_orig(y, x):
    """Clamp reconstructed full values at zero, in original units.

    Tendency columns whose full value ``y + x_paired`` is negative become ``-x_paired``;
    water columns (full values) are clamped at 0.  Other entries are returned untouched.
    """
    y = np.array(y, dtype=np.float64, copy=True)
    x = np.asarray(x, dtype=np.float64)
    xp = x[:, PAIR_OFFSET:PAIR_OFFSET + N_PAIRED]
    t = y[:, :N_PAIRED]
    neg = t + xp < 0
    t[neg] = -xp[neg]
    np.maximum(y[:, N_PAIRED:], 0.0, out=y[:, N_PAIRED:])
    return y


def complete_orig(y, cfg: ConstraintConfig):
    """Replace one tendency per species by minus the sum of the others (original units)."""
    y = np.array(y, dtype=np.float64, copy=True)
    for s in Species:
        j = cfg.completion_indices[s.value]
        others = [i for i in SPECIES_INDICES[s] if i != j]
        y[:, j] = -y[:, others].sum(axis=1)
    return y


def constrain_orig(y, x, cfg: ConstraintConfig):
    if cfg.mode in ("correct", "correct_then_complete"):
        y = correct_orig(y, x)
    if cfg.mode in ("complete", "correct_then_complete"):
        y = complete_orig(y, cfg)
    return y


def apply_correction(y_std, x_std, stats: NormStats):
    """Correction layer on standardised arrays.

    Entries whose reconstructed full value is negative are moved to the value whose
    reconstruction is exactly zero (nudged up by ulps if round-off leaves it below).
    """
    y_std = np.asarray(y_std, dtype=np.float64)
    mu, sd = stats.mu_y, stats.sigma_y
    hx = np.asarray(x_std, dtype=np.float64) * stats.sigma_x + stats.mu_x
    base = np.zeros_like(y_std)
    base[:, :N_PAIRED] = hx[:, PAIR_OFFSET:PAIR_OFFSET + N_PAIRED]
    full = (y_std * sd + mu) + base
    neg = full < 0
    if not neg.any():
        return y_std.copy()
    out = y_std.copy()
    target = np.broadcast_to((-base - mu) / sd, y_std.shape)
    out[neg] = target[neg]
    while True:
        bad = neg & ((out * sd + mu) + base < 0)
        if not bad.any():
            return out
        out[bad] = np.nextafter(out[bad], np.inf)


def apply_completion(y_std, stats: NormStats, cfg: ConstraintConfig):
    """Completion layer on standardised arrays."""
    y_std = np.asarray(y_std, dtype=np.float64)
    out = y_std.copy()
    gy = y_std * stats.sigma_y + stats.mu_y
    for s in Species:
        j = cfg.completion_indices[s.value]
        others = [i for i in SPECIES_INDICES[s] if i != j]
        out[:, j] = (-gy[:, others].sum(axis=1) - stats.mu_y[j]) / stats.sigma_y[j]
    return out


def constrain_std(y_std, x_std, stats: NormStats, cfg: ConstraintConfig):
    """Apply the configured layers and return ``(y, vjp)`` where vjp maps output grads back."""
    masks = []
    y = y_std
    if cfg.mode in ("correct", "correct_then_complete"):
        y = apply_correction(y, x_std, stats)
        masks.append(("correct", y != y_std))
    if cfg.mode in ("complete", "correct_then_complete"):
        masks.append(("complete", None))
        y = apply_completion(y, stats, cfg)

    def vjp(grad):
        grad = np.array(grad, copy=True)
        for kind, mask in reversed(masks):
            if kind == "complete":
                for s in Species:
                    j = cfg.completion_indices[s.value]
                    for i in SPECIES_INDICES[s]:
                        if i != j:
                            grad[:, i] -= grad[:, j] * stats.sigma_y[i] / stats.sigma_y[j]
                    grad[:, j] = 0.0
            else:
                grad[mask] = 0.0
        return grad

    return y, vjp


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    params: MlpParams
    stats: NormStats
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    kind: str = "regressor"  # or "classifier"
    meta: dict = field(default_factory=dict)
    log_config: Optional[LogTransformConfig] = None

    def to_dict(self) -> dict:
        p = self.params
        return {
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "schema_hash": p.schema_hash,
            "arch": list(p.arch),
            "activation": p.activation,
            "transform": p.transform,
            "weights": [w.tolist() for w in p.weights],
            "biases": [b.tolist() for b in p.biases],
            "norm_stats": self.stats.to_dict(),
            "constraint_config": {"mode": self.constraint.mode},
            "completion_indices": dict(self.constraint.completion_indices),
            "log_config": self.log_config.to_dict() if self.log_config else None,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, d) -> "Checkpoint":
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
        try:
            SCHEMA.check_hash(d.get("schema_hash"), "checkpoint")
        except SchemaError as e:
            raise CheckpointError(str(e)) from None
        weights = [np.array(w, dtype=np.float64) for w in d["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
        params = MlpParams(tuple(d["arch"]), d["activation"], weights, biases,
                           d["schema_hash"], d["transform"])
        cfg = ConstraintConfig(d["constraint_config"]["mode"], d["completion_indices"])
        log_cfg = LogTransformConfig.from_dict(d["log_config"]) if d.get("log_config") else None
        return cls(params, NormStats.from_dict(d["norm_stats"]), cfg, d.get("kind", "regressor"),
                   d.get("meta", {}), log_cfg)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise CheckpointError(f"{path}: not a valid checkpoint ({e})") from None
        return cls.from_dict(doc)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    ckpt.save(path)


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.load(path)
