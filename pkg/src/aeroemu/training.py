"""Losses, the Adam optimiser, the training loop and the linear baseline.

All losses return ``(value, gradient)`` with the gradient taken w.r.t. the
network output; the value is a numpy scalar in the dtype of the inputs.  Means are over rows (and elements for MSE/BCE) so the loss
weights do not depend on batch size.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import model as M
from .data import Dataset
from .schema import (GROUP_INDEX, N_OUTPUTS, N_PAIRED, PAIR_OFFSET, SCHEMA,
                     SPECIES_INDICES, Species)
from .transforms import (DEFAULT_EPS, LogTransformConfig, NormStats, fit_arrays, fit_stats,
                         log_encode_inputs, log_transform, standardize)

log = logging.getLogger(__name__)

# regulariser weights reported for the standard pipeline: species SO4, BC, OC, DU
PAPER_ALPHA = (1e-7, 2e4, 2e3, 1e-1)
# groups SO4, BC, OC, DU, NUM, WAT
PAPER_BETA = (1e-11, 1e7, 1e7, 1e3, 1e-8, 1e1)
PAPER_ALPHA_LOG = (1e-8, 1e3, 1e4, 1e5)

_SPECIES_LIST = [SPECIES_INDICES[s] for s in Species]
_GROUP_INDEX = np.array(GROUP_INDEX)


class NumericalError(RuntimeError):
    """Loss became NaN/inf during training."""


# ---------------------------------------------------------------- losses

def mse_loss(pred, target):
    pred, target = np.asarray(pred), np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return np.mean(diff * diff), 2.0 * diff / diff.size


def _species_sums(y):
    return np.stack([y[:, idx].sum(axis=1) for idx in _SPECIES_LIST], axis=1)


def mass_loss(pred_std, stats: NormStats, alpha):
    """Mean over rows of sum_s alpha_s * |sum_{i in I_s} g(pred)_i|."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (4,):
        raise ValueError("alpha needs one weight per species (4)")
    pred_std = np.asarray(pred_std)
    n = pred_std.shape[0]
    gy = pred_std * stats.sigma_y + stats.mu_y
    sums = _species_sums(gy)
    value = np.mean(np.abs(sums) @ alpha)
    grad = np.zeros_like(pred_std)
    sgn = np.sign(sums) * alpha / n
    for s, idx in enumerate(_SPECIES_LIST):
        grad[:, idx] = sgn[:, s:s + 1] * stats.sigma_y[idx]
    return value, grad


def mass_loss_log(pred_std, signs, stats: NormStats, alpha):
    """Mass loss for the log pipeline: tendencies decoded as ``sign * exp(g(pred))``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (4,):
        raise ValueError("alpha needs one weight per species (4)")
    n = pred_std.shape[0]
    y = signs * np.exp(pred_std * stats.sigma_y + stats.mu_y)
    sums = _species_sums(y)
    value = np.mean(np.abs(sums) @ alpha)
    grad = np.zeros_like(pred_std)
    sgn = np.sign(sums) * alpha / n
    for s, idx in enumerate(_SPECIES_LIST):
        grad[:, idx] = sgn[:, s:s + 1] * y[:, idx] * stats.sigma_y[idx]
    return value, grad


def _full_values(pred_std, x_std, stats):
    gy = pred_std * stats.sigma_y + stats.mu_y
    hx = x_std[:, PAIR_OFFSET:PAIR_OFFSET + N_PAIRED] * stats.sigma_x[PAIR_OFFSET:PAIR_OFFSET + N_PAIRED] \
        + stats.mu_x[PAIR_OFFSET:PAIR_OFFSET + N_PAIRED]
    gy[:, :N_PAIRED] += hx
    return gy


def pos_loss(pred_std, x_std, stats: NormStats, beta):
    """Mean over rows of sum_k beta_group(k) * ReLU(-(g(pred)_k + h(x)_paired(k)))^2."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (6,):
        raise ValueError("beta needs one weight per group (6)")
    pred_std = np.asarray(pred_std)
    n = pred_std.shape[0]
    w = beta[_GROUP_INDEX]
    neg = np.maximum(-_full_values(pred_std, x_std, stats), 0.0)
    value = np.sum(neg * neg * w) / n
    grad = -2.0 * neg * w * stats.sigma_y / n
    return value, grad


def bce_loss(logits, classes):
    """Softmax cross-entropy over the 3 sign classes, averaged over all elements.

    `classes` holds signs in {-1, 0, +1}; logits have shape (..., 3) ordered (-, 0, +).
    """
    logits = np.asarray(logits)
    logits = logits.astype(np.result_type(logits, np.float64), copy=False)
    classes = np.asarray(classes)
    if logits.shape[-1] != 3 or logits.shape[:-1] != classes.shape:
        raise ValueError(f"logits {logits.shape} do not match classes {classes.shape} x 3")
    if np.any((classes < -1) | (classes > 1)):
        raise ValueError("class out of range")
    idx = (classes + 1).astype(np.intp)
    shift = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shift).sum(axis=-1, keepdims=True))
    logp = shift - lse
    picked = np.take_along_axis(logp, idx[..., None], axis=-1)[..., 0]
    value = -picked.mean()
    grad = np.exp(logp)
    np.put_along_axis(grad, idx[..., None], np.take_along_axis(grad, idx[..., None], -1) - 1.0, -1)
    return value, grad / classes.size


# ---------------------------------------------------------------- optimiser

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(params, grads, state: AdamState, t=None, lr=1e-3, beta1=0.9, beta2=0.999,
              eps=1e-8, weight_decay=0.0, decoupled=False):
    """One in-place Adam update of the arrays in `params`.

    Weight decay is added to the gradient (L2, coupled) unless `decoupled`, in which
    case parameters shrink by ``lr * weight_decay`` directly.
    """
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("t must be >= 1")
    state.t = t
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay and not decoupled:
            g = g + weight_decay * p
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay and decoupled:
            p -= lr * weight_decay * p
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
    return params, state


# ---------------------------------------------------------------- config and logs

@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-9
    decoupled_weight_decay: bool = False
    batch_size: int = 256
    lam: int = 0
    mu: int = 0
    alpha: tuple = PAPER_ALPHA
    beta: tuple = PAPER_BETA
    transform: str = "standard"
    activation: str = "relu"
    arch: tuple = M.DEFAULT_ARCH
    constraint_mode: str = "none"
    train_with_constraints: bool = False
    val_fraction: float = 0.1
    log_eps: float = DEFAULT_EPS

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        self.beta = tuple(float(b) for b in self.beta)
        self.arch = tuple(int(a) for a in self.arch)
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("need epochs >= 1, batch_size >= 1 and lr > 0")
        if self.lam not in (0, 1) or self.mu not in (0, 1):
            raise ValueError("lam and mu switch regularisers on or off and must be 0 or 1")
        if len(self.alpha) != 4 or len(self.beta) != 6:
            raise ValueError("alpha has 4 species weights, beta 6 group weights")
        if min(self.alpha) < 0 or min(self.beta) < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.transform not in ("standard", "log"):
            raise ValueError(f"unknown transform {self.transform!r}")
        if self.activation not in M.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.constraint_mode not in M.CONSTRAINT_MODES:
            raise ValueError(f"unknown constraint mode {self.constraint_mode!r}")

    def to_dict(self):
        d = asdict(self)
        d["alpha"], d["beta"], d["arch"] = list(self.alpha), list(self.beta), list(self.arch)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EpochLog:
    columns: tuple = ("epoch", "mse", "r2", "mass_violation", "neg_fraction")
    rows: list = field(default_factory=list)

    def append(self, **rec):
        self.rows.append({c: rec.get(c, float("nan")) for c in self.columns})

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.columns))
            w.writeheader()
            for r in self.rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------- training loop

def _fit_network(params, x_enc, n_rows, loss_fn, config: TrainConfig, on_epoch, label="train"):
    """Mini-batch Adam over shuffled rows; `loss_fn(out, rows, x_batch)` -> (value, grad)."""
    arrays = params.arrays()
    state = AdamState.zeros_like(arrays)
    order_rng = np.random.default_rng([config.seed, 1])
    bs = config.batch_size
    for epoch in range(1, config.epochs + 1):
        perm = order_rng.permutation(n_rows)
        for b, start in enumerate(range(0, n_rows, bs)):
            rows = perm[start:start + bs]
            xb = x_enc[rows]
            out, cache = M._forward_cached(params, xb)
            value, grad = loss_fn(out, rows, xb)
            if not np.isfinite(value):
                raise NumericalError(f"{label}: non-finite loss at epoch {epoch}, batch {b}")
            grads = M.backward(params, xb, grad, cache)
            adam_step(arrays, grads.arrays(), state, lr=config.lr,
                      weight_decay=config.weight_decay, decoupled=config.decoupled_weight_decay)
        on_epoch(epoch)


def _check_datasets(train, val):
    if train is None or len(train) == 0:
        raise ValueError("training dataset is empty")
    if val is not None and len(val) == 0:
        raise ValueError("validation dataset is empty")
    SCHEMA.check_hash(train.meta.get("schema_hash", SCHEMA.hash), "training data")


def train(config: TrainConfig, train: Dataset, val: Dataset | None = None):
    """Train a regressor; returns ``(Checkpoint, EpochLog)``.

    Without `val`, the last ``config.val_fraction`` of `train` is held out.
    """
    from . import evaluation as E

    _check_datasets(train, val)
    if val is None:
        train, val = train.split(config.val_fraction)
    if config.transform == "log":
        return _train_log_regressor(config, train, val)

    stats = fit_stats(train)
    x_std = standardize(train.x, stats.mu_x, stats.sigma_x)
    y_std = standardize(train.y, stats.mu_y, stats.sigma_y)
    params = M.init(config.arch, config.activation, config.seed)
    cfg = M.ConstraintConfig(config.constraint_mode)
    train_cfg = cfg if config.train_with_constraints else cfg.with_mode("none")

    def loss_fn(out, rows, xb):
        out, vjp = M.constrain_std(out, xb, stats, train_cfg) if train_cfg.mode != "none" else (out, None)
        value, grad = mse_loss(out, y_std[rows])
        if config.lam:
            v, gr = mass_loss(out, stats, config.alpha)
            value, grad = value + v, grad + gr
        if config.mu:
            v, gr = pos_loss(out, xb, stats, config.beta)
            value, grad = value + v, grad + gr
        return value, (vjp(grad) if vjp else grad)

    log_ = EpochLog()
    ckpt = M.Checkpoint(params, stats, cfg, meta={"train_config": config.to_dict()})

    def on_epoch(epoch):
        rep = E.evaluate(ckpt, val, constraint="none")
        log_.append(epoch=epoch, mse=rep.mse, r2=rep.r2, mass_violation=rep.mass_violation,
                    neg_fraction=rep.neg_fraction)
        log.info("epoch %d val mse %.4g r2 %.4f", epoch, rep.mse, rep.r2)
        ckpt.meta["val_r2"] = list(rep.r2_per_variable)

    _fit_network(params, x_std, len(train), loss_fn, config, on_epoch)
    ckpt.constraint = M.ConstraintConfig(config.constraint_mode,
                                         worst_completion_indices(ckpt.meta["val_r2"]))
    return ckpt, log_


def worst_completion_indices(r2_per_variable) -> dict:
    """For each species, the output column with the lowest R²."""
    r2 = np.asarray(r2_per_variable, dtype=float)
    return {s.value: int(SPECIES_INDICES[s][int(np.nanargmin(r2[SPECIES_INDICES[s]]))])
            for s in Species}


def log_targets(y, eps):
    return log_transform(y, eps)


def _train_log_regressor(config, train, val):
    from . import evaluation as E

    log_cfg = LogTransformConfig(np.full(N_OUTPUTS, config.log_eps))
    cls_tr, mag_tr = log_transform(train.y, log_cfg.eps)
    x_enc = log_encode_inputs(train.x)
    stats = fit_arrays(x_enc, mag_tr, source=train.digest())
    x_std = standardize(x_enc, stats.mu_x, stats.sigma_x)
    t_std = standardize(mag_tr, stats.mu_y, stats.sigma_y)
    signs = cls_tr.astype(np.float64)
    params = M.init(config.arch, config.activation, config.seed, transform="log")

    def loss_fn(out, rows, xb):
        value, grad = mse_loss(out, t_std[rows])
        if config.lam:
            v, gr = mass_loss_log(out, signs[rows], stats, config.alpha)
            value, grad = value + v, grad + gr
        return value, grad

    log_ = EpochLog()
    ckpt = M.Checkpoint(params, stats, M.ConstraintConfig(config.constraint_mode), meta={
        "train_config": config.to_dict()}, log_config=log_cfg)

    def on_epoch(epoch):
        mse, r2_vars = E.log_scale_scores(ckpt, val)
        log_.append(epoch=epoch, mse=mse, r2=float(np.mean(r2_vars)))
        ckpt.meta["val_r2"] = list(r2_vars)

    _fit_network(params, x_std, len(train), loss_fn, config, on_epoch, label="log-regressor")
    ckpt.constraint = M.ConstraintConfig(config.constraint_mode,
                                         worst_completion_indices(ckpt.meta["val_r2"]))
    return ckpt, log_


# ---------------------------------------------------------------- linear baseline

RIDGE = 1e-10


@dataclass
class LinearBaseline:
    """Affine least-squares map from standardised inputs to original-unit outputs."""

    coef: np.ndarray  # (33, 28); row 0 is the intercept
    stats: NormStats

    def predict(self, x) -> np.ndarray:
        xs = standardize(x, self.stats.mu_x, self.stats.sigma_x)
        return self.coef[0] + xs @ self.coef[1:]


def fit_linear_baseline(train: Dataset, stats: NormStats | None = None) -> LinearBaseline:
    stats = stats or fit_stats(train)
    xs = standardize(train.x, stats.mu_x, stats.sigma_x)
    design = np.hstack([np.ones((len(train), 1)), xs])
    gram = design.T @ design
    gram[np.diag_indices_from(gram)] += RIDGE
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("normal matrix is singular even with ridge") from None
    rhs = design.T @ train.y
    coef = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    return LinearBaseline(coef, stats)
