"""Accuracy, mass-conservation and positivity metrics in original units."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import model as M
from .schema import N_PAIRED, PAIR_OFFSET, SCHEMA, SPECIES_INDICES, Species
from .transforms import log_encode_inputs, log_transform, standardize


class MetricError(ValueError):
    pass


def r2(pred, truth) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape or truth.size < 2:
        raise MetricError("r2 needs two equal-length vectors of length >= 2")
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        raise MetricError("R² undefined for constant truth")
    return float(1.0 - np.sum((pred - truth) ** 2) / ss_tot)


def r2_columns(pred, truth) -> np.ndarray:
    return np.array([r2(pred[:, k], truth[:, k]) for k in range(truth.shape[1])])


def species_mass_scale(x) -> np.ndarray:
    """Dataset mean of total species mass (sum of the paired inputs), one per species."""
    x = np.atleast_2d(x)
    scale = np.array([x[:, [i + PAIR_OFFSET for i in SPECIES_INDICES[s]]].sum(axis=1).mean()
                      for s in Species])
    if np.any(scale == 0):
        raise MetricError("species mass scale is zero; cannot normalise")
    return scale


def full_value_scale(x, y_true) -> np.ndarray:
    """Dataset mean of each output's reference full value (input + tendency, water as is)."""
    x, y_true = np.atleast_2d(x), np.atleast_2d(y_true)
    full = y_true.copy()
    full[:, :N_PAIRED] += x[:, PAIR_OFFSET:PAIR_OFFSET + N_PAIRED]
    scale = full.mean(axis=0)
    if np.any(scale == 0):
        raise MetricError("full-value scale is zero for some variable; cannot normalise")
    return scale


def mass_metrics(pred_orig, x):
    """Per-species mass bias and overall violation, normalised by mean species mass.

    Returns ``(bias[4], violation)`` with species ordered SO4, BC, OC, DU.
    """
    pred_orig = np.atleast_2d(pred_orig)
    scale = species_mass_scale(x)
    sums = np.stack([pred_orig[:, SPECIES_INDICES[s]].sum(axis=1) for s in Species], axis=1)
    bias = sums.mean(axis=0) / scale
    violation = float(np.mean(np.abs(sums).mean(axis=0) / scale))
    return bias, violation


def positivity_metrics(pred_orig, x, scale):
    """Fraction of negative reconstructed full values and their mean normalised depth."""
    pred_orig, x = np.atleast_2d(pred_orig), np.atleast_2d(x)
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(scale == 0):
        raise MetricError("full-value scale is zero for some variable; cannot normalise")
    full = pred_orig.copy()
    full[:, :N_PAIRED] += x[:, PAIR_OFFSET:PAIR_OFFSET + N_PAIRED]
    frac = float(np.mean(full < 0))
    depth = float(np.mean(np.maximum(-full, 0.0) / scale))
    return frac, depth


def class_metrics(pred, true):
    """Per-variable accuracy, and precision/recall of the positive class (NaN when undefined)."""
    pred, true = np.atleast_2d(pred), np.atleast_2d(true)
    if pred.shape != true.shape:
        raise MetricError("class arrays differ in shape")
    acc = (pred == true).mean(axis=0)
    tp = ((pred == 1) & (true == 1)).sum(axis=0)
    fp = ((pred == 1) & (true != 1)).sum(axis=0)
    fn = ((pred != 1) & (true == 1)).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), np.nan)
        rec = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), np.nan)
    return acc, prec, rec


@dataclass
class MetricsReport:
    r2: float
    mse: float
    rmse: float
    mass_bias: dict
    mass_violation: float
    neg_fraction: float
    neg_mean: float
    r2_per_variable: list
    class_accuracy: Optional[list] = None
    class_precision: Optional[list] = None
    class_recall: Optional[list] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not np.isfinite(v):
                return None
            if isinstance(v, list):
                return [clean(a) for a in v]
            if isinstance(v, dict):
                return {k: clean(a) for k, a in v.items()}
            return v
        return json.dumps(clean(self.to_dict()), indent=1)

    def csv_row(self) -> dict:
        row = {"r2": self.r2, "mse": self.mse, "rmse": self.rmse}
        row.update({f"mass_bias_{k}": v for k, v in self.mass_bias.items()})
        row.update(mass_violation=self.mass_violation, neg_fraction=self.neg_fraction,
                   neg_mean=self.neg_mean)
        return row

    def to_csv(self) -> str:
        out = io.StringIO()
        row = self.csv_row()
        w = csv.DictWriter(out, fieldnames=list(row))
        w.writeheader()
        w.writerow({k: repr(v) for k, v in row.items()})
        return out.getvalue()

    def per_variable_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        header = ["variable", "r2"]
        if self.class_accuracy is not None:
            header += ["accuracy", "precision", "recall"]
        w.writerow(header)
        for k, name in enumerate(SCHEMA.output_names):
            row = [name, repr(self.r2_per_variable[k])]
            if self.class_accuracy is not None:
                row += [repr(self.class_accuracy[k]), repr(self.class_precision[k]),
                        repr(self.class_recall[k])]
            w.writerow(row)
        return out.getvalue()


def _check_inputs(dataset):
    if dataset is None or len(dataset) == 0:
        raise MetricError("evaluation dataset is empty")
    SCHEMA.check_hash(dataset.meta.get("schema_hash", SCHEMA.hash), "evaluation data")


def report_from_predictions(pred_orig, dataset, stats, meta=None) -> MetricsReport:
    """Score original-unit predictions; accuracy scores on the standardised scale of `stats`."""
    _check_inputs(dataset)
    pred_std = standardize(pred_orig, stats.mu_y, stats.sigma_y)
    truth_std = standardize(dataset.y, stats.mu_y, stats.sigma_y)
    diff = pred_std - truth_std
    mse = float(np.mean(diff * diff))
    r2s = r2_columns(pred_std, truth_std)
    bias, viol = mass_metrics(pred_orig, dataset.x)
    frac, depth = positivity_metrics(pred_orig, dataset.x, full_value_scale(dataset.x, dataset.y))
    return MetricsReport(
        r2=float(np.mean(r2s)), mse=mse, rmse=float(np.sqrt(mse)),
        mass_bias={s.value: float(b) for s, b in zip(Species, bias)},
        mass_violation=viol, neg_fraction=frac, neg_mean=depth,
        r2_per_variable=[float(v) for v in r2s], meta=dict(meta or {}))


def predict(ckpt: M.Checkpoint, x, constraint=None) -> np.ndarray:
    """Original-unit predictions of a standard-pipeline checkpoint."""
    stats = ckpt.stats
    stats.require_train()
    if ckpt.params.transform != "standard" or ckpt.kind != "regressor":
        raise ValueError("predict() needs a standard-pipeline regressor checkpoint")
    cfg = ckpt.constraint if constraint is None else ckpt.constraint.with_mode(constraint)
    x_std = standardize(x, stats.mu_x, stats.sigma_x)
    pred = M.forward(ckpt.params, x_std) * stats.sigma_y + stats.mu_y
    return M.constrain_orig(pred, x, cfg)


def evaluate(model, dataset, constraint=None) -> MetricsReport:
    """Run the model (checkpoint or log-pipeline bundle) on `dataset` and score it.

    `constraint` overrides the model's configured constraint mode.
    """
    from .classifier import LogPipelineBundle, evaluate_bundle

    if isinstance(model, LogPipelineBundle):
        return evaluate_bundle(model, dataset, constraint)
    _check_inputs(dataset)
    SCHEMA.check_hash(model.params.schema_hash, "checkpoint")
    pred = predict(model, dataset.x, constraint)
    mode = model.constraint.mode if constraint is None else constraint
    meta = {"checkpoint": model.meta.get("id", ""), "dataset": dataset.digest(),
            "constraint_mode": mode, "transform": "standard"}
    return report_from_predictions(pred, dataset, model.stats, meta)


def log_scale_scores(ckpt: M.Checkpoint, dataset):
    """MSE (standardised log scale) and per-variable R² of a log-magnitude regressor."""
    stats = ckpt.stats
    stats.require_train()
    x_std = standardize(log_encode_inputs(dataset.x), stats.mu_x, stats.sigma_x)
    pred = M.forward(ckpt.params, x_std)
    _, mag = log_transform(dataset.y, ckpt.log_config.eps)
    truth = standardize(mag, stats.mu_y, stats.sigma_y)
    diff = pred - truth
    return float(np.mean(diff * diff)), r2_columns(pred, truth)
