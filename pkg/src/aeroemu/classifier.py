"""Log-magnitude pipeline: sign classifier + magnitude regressor.

The regressor predicts standardised ``ln|tendency|``; the classifier predicts the
sign class of every output (3 logits per output, ordered -, 0, +).  Decoding is
``sign * exp(magnitude)``; any constraint layers run afterwards in original units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import model as M
from .data import Dataset
from .schema import N_OUTPUTS, N_PAIRED, SCHEMA
from .training import (EpochLog, TrainConfig, _check_datasets, _fit_network, _train_log_regressor,
                       bce_loss)
from .transforms import (LogTransformConfig, fit_arrays, inverse_log, log_encode_inputs,
                         log_transform, standardize)

N_CLASSES = 3
MANIFEST = "manifest.json"


class BundleError(ValueError):
    pass


def _encode(ckpt, x):
    stats = ckpt.stats
    stats.require_train()
    return standardize(log_encode_inputs(x), stats.mu_x, stats.sigma_x)


def classify(ckpt: M.Checkpoint, x) -> np.ndarray:
    """Logits of shape (n, 28, 3) for original-unit inputs `x`."""
    out = M.forward(ckpt.params, _encode(ckpt, x))
    return out.reshape(len(out), N_OUTPUTS, N_CLASSES)


def train_classifier(config: TrainConfig, train: Dataset, val: Dataset | None = None):
    """Train the sign classifier; returns ``(Checkpoint, EpochLog)`` with per-epoch accuracy."""
    _check_datasets(train, val)
    if val is None:
        train, val = train.split(config.val_fraction)
    log_cfg = LogTransformConfig(np.full(N_OUTPUTS, config.log_eps))
    cls_tr, mag_tr = log_transform(train.y, log_cfg.eps)
    x_enc = log_encode_inputs(train.x)
    stats = fit_arrays(x_enc, mag_tr, source=train.digest())
    x_std = standardize(x_enc, stats.mu_x, stats.sigma_x)
    arch = tuple(config.arch[:-1]) + (N_OUTPUTS * N_CLASSES,)
    params = M.init(arch, config.activation, config.seed, transform="log")
    ckpt = M.Checkpoint(params, stats, M.ConstraintConfig(), kind="classifier",
                        meta={"train_config": config.to_dict()}, log_config=log_cfg)
    val_cls, _ = log_transform(val.y, log_cfg.eps)

    def loss_fn(out, rows, xb):
        logits = out.reshape(len(out), N_OUTPUTS, N_CLASSES)
        value, grad = bce_loss(logits, cls_tr[rows])
        return value, grad.reshape(out.shape)

    log_ = EpochLog(columns=("epoch", "loss", "accuracy"))

    def on_epoch(epoch):
        logits = classify(ckpt, val.x)
        loss, _ = bce_loss(logits, val_cls)
        pred = logits.argmax(axis=-1) - 1
        acc = float(np.mean(pred[:, :N_PAIRED] == val_cls[:, :N_PAIRED]))
        log_.append(epoch=epoch, loss=loss, accuracy=acc)

    _fit_network(params, x_std, len(train), loss_fn, config, on_epoch, label="classifier")
    return ckpt, log_


@dataclass
class LogPipelineBundle:
    regressor: M.Checkpoint
    classifier: M.Checkpoint

    def __post_init__(self):
        r, c = self.regressor, self.classifier
        if r.params.transform != "log" or r.kind != "regressor":
            raise BundleError("bundle regressor must be a log-transform regressor")
        if c.kind != "classifier" or c.params.arch[-1] != N_OUTPUTS * N_CLASSES:
            raise BundleError("bundle classifier must output 28 x 3 logits")
        if r.params.schema_hash != c.params.schema_hash:
            raise BundleError("regressor and classifier schema hashes differ")
        if not (np.array_equal(r.stats.mu_x, c.stats.mu_x)
                and np.array_equal(r.stats.sigma_x, c.stats.sigma_x)):
            raise BundleError("regressor and classifier use different input statistics")

    @property
    def log_config(self) -> LogTransformConfig:
        return self.regressor.log_config

    @property
    def stats(self):
        return self.regressor.stats

    @property
    def constraint(self):
        return self.regressor.constraint

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.regressor.save(d / "regressor.json")
        self.classifier.save(d / "classifier.json")
        manifest = {"version": M.CHECKPOINT_VERSION, "kind": "log_pipeline",
                    "schema_hash": SCHEMA.hash, "regressor": "regressor.json",
                    "classifier": "classifier.json", "log_config": self.log_config.to_dict()}
        (d / MANIFEST).write_text(json.dumps(manifest, indent=1))

    @classmethod
    def load(cls, directory) -> "LogPipelineBundle":
        d = Path(directory)
        manifest = json.loads((d / MANIFEST).read_text())
        SCHEMA.check_hash(manifest.get("schema_hash"), "bundle")
        return cls(M.Checkpoint.load(d / manifest["regressor"]),
                   M.Checkpoint.load(d / manifest["classifier"]))


def train_log_pipeline(config: TrainConfig, train: Dataset, val: Dataset | None = None):
    """Train regressor and classifier on the same split; returns (bundle, reg_log, clf_log)."""
    _check_datasets(train, val)
    if val is None:
        train, val = train.split(config.val_fraction)
    reg_cfg = TrainConfig.from_dict({**config.to_dict(), "transform": "log"})
    reg, reg_log = _train_log_regressor(reg_cfg, train, val)
    clf, clf_log = train_classifier(reg_cfg, train, val)
    return LogPipelineBundle(reg, clf), reg_log, clf_log


def decode(classes, magnitudes_std, bundle: LogPipelineBundle) -> np.ndarray:
    stats = bundle.stats
    mag = magnitudes_std * stats.sigma_y + stats.mu_y
    classes = np.array(classes, copy=True)
    classes[:, N_PAIRED:] = 1  # water is a non-negative full value
    return inverse_log(classes, mag)


def predict_classes(bundle: LogPipelineBundle, x) -> np.ndarray:
    cls = classify(bundle.classifier, x).argmax(axis=-1) - 1
    cls[:, N_PAIRED:] = 1
    return cls


def predict_tendencies(bundle: LogPipelineBundle, x, constraint=None) -> np.ndarray:
    """Original-unit tendencies (and water values) for original-unit inputs `x`."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cls = predict_classes(bundle, x)
    mag_std = M.forward(bundle.regressor.params, _encode(bundle.regressor, x))
    y = decode(cls, mag_std, bundle)
    cfg = bundle.constraint if constraint is None else bundle.constraint.with_mode(constraint)
    return M.constrain_orig(y, x, cfg)


def evaluate_bundle(bundle: LogPipelineBundle, dataset, constraint=None):
    """MetricsReport for the log pipeline; accuracy scores are on the log scale."""
    from . import evaluation as E

    E._check_inputs(dataset)
    pred = predict_tendencies(bundle, dataset.x, constraint)
    eps = bundle.log_config.eps
    stats = bundle.stats
    true_cls, true_mag = log_transform(dataset.y, eps)
    _, pred_mag = log_transform(pred, eps)
    p_std = standardize(pred_mag, stats.mu_y, stats.sigma_y)
    t_std = standardize(true_mag, stats.mu_y, stats.sigma_y)
    diff = p_std - t_std
    mse = float(np.mean(diff * diff))
    r2s = E.r2_columns(p_std, t_std)
    bias, viol = E.mass_metrics(pred, dataset.x)
    frac, depth = E.positivity_metrics(pred, dataset.x, E.full_value_scale(dataset.x, dataset.y))
    acc, prec, rec = E.class_metrics(predict_classes(bundle, dataset.x), true_cls)
    mode = bundle.constraint.mode if constraint is None else constraint
    return E.MetricsReport(
        r2=float(np.mean(r2s)), mse=mse, rmse=float(np.sqrt(mse)),
        mass_bias={k: float(b) for k, b in zip(("SO4", "BC", "OC", "DU"), bias)},
        mass_violation=viol, neg_fraction=frac, neg_mean=depth,
        r2_per_variable=[float(v) for v in r2s],
        class_accuracy=acc.tolist(), class_precision=prec.tolist(), class_recall=rec.tolist(),
        meta={"dataset": dataset.digest(), "constraint_mode": mode, "transform": "log"})
