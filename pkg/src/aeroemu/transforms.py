"""Standardisation and the log-magnitude/sign transform.

``g`` and ``h`` are the output and input back-transforms: ``g(y) = y*sigma_y + mu_y``
and ``h(x) = x*sigma_x + mu_x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .schema import N_INPUTS, N_OUTPUTS

# relative humidity (enters as r and r²) and the strictly positive masses, numbers and
# rates; log-encoded in the log pipeline
LOG_INPUT_COLUMNS = np.concatenate([[2], np.arange(7, N_INPUTS)])
LOG_INPUT_FLOOR = 1e-30
DEFAULT_EPS = 1e-20


class DegenerateColumnError(ValueError):
    pass


class ProvenanceError(RuntimeError):
    """Statistics used on a path that requires training-split statistics."""


@dataclass(frozen=True)
class NormStats:
    mu_x: np.ndarray
    sigma_x: np.ndarray
    mu_y: np.ndarray
    sigma_y: np.ndarray
    n_rows: int
    fitted_on: str = "train"  # provenance tag; evaluation refuses anything else
    source: str = ""          # digest of the dataset the stats came from

    def __post_init__(self):
        for name in ("mu_x", "sigma_x", "mu_y", "sigma_y"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.sigma_x <= 0) or np.any(self.sigma_y <= 0):
            raise DegenerateColumnError("all standard deviations must be positive")

    def require_train(self):
        if self.fitted_on != "train":
            raise ProvenanceError(f"statistics were fitted on {self.fitted_on!r}, not the training split")

    def to_dict(self) -> dict:
        return {"mu_x": self.mu_x.tolist(), "sigma_x": self.sigma_x.tolist(),
                "mu_y": self.mu_y.tolist(), "sigma_y": self.sigma_y.tolist(),
                "n_rows": self.n_rows, "fitted_on": self.fitted_on, "source": self.source}

    @classmethod
    def from_dict(cls, d) -> "NormStats":
        return cls(np.array(d["mu_x"]), np.array(d["sigma_x"]), np.array(d["mu_y"]),
                   np.array(d["sigma_y"]), int(d["n_rows"]), d.get("fitted_on", "train"),
                   d.get("source", ""))


def _col_stats(a, names=None, what="column"):
    a = np.asarray(a, dtype=np.float64)
    mu = a.mean(axis=0)
    sd = a.std(axis=0)  # population std (ddof=0)
    # a constant column can leave a round-off std of ~1e-17, so test the range instead
    bad = np.flatnonzero(~(np.ptp(a, axis=0) > 0) | ~(sd > 0))
    if bad.size:
        label = names[bad[0]] if names is not None else f"{what} {bad[0]}"
        raise DegenerateColumnError(f"zero variance in {label}")
    return mu, sd


def fit_arrays(x, y, source: str = "", fitted_on: str = "train") -> NormStats:
    """Per-column mean and population std of already-encoded arrays."""
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if x.shape[0] < 2:
        raise ValueError("need at least 2 rows to fit statistics")
    from .schema import SCHEMA

    in_names = SCHEMA.input_names if x.shape[1] == N_INPUTS else None
    out_names = SCHEMA.output_names if y.shape[1] == N_OUTPUTS else None
    mu_x, sd_x = _col_stats(x, in_names, "input")
    mu_y, sd_y = _col_stats(y, out_names, "output")
    return NormStats(mu_x, sd_x, mu_y, sd_y, x.shape[0], fitted_on, source)


def fit_stats(train) -> NormStats:
    """Standard-pipeline statistics of a training :class:`~aeroemu.data.Dataset`."""
    return fit_arrays(train.x, train.y, source=train.digest())


def standardize(v, mu, sigma):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != np.shape(mu)[-1] or np.shape(mu) != np.shape(sigma):
        raise ValueError(f"size mismatch: {v.shape} vs {np.shape(mu)}")
    return (v - mu) / sigma


def unstandardize(v, mu, sigma):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != np.shape(mu)[-1] or np.shape(mu) != np.shape(sigma):
        raise ValueError(f"size mismatch: {v.shape} vs {np.shape(mu)}")
    return v * sigma + mu


def g(y, stats: NormStats):
    """Output back-transform to original units."""
    return unstandardize(y, stats.mu_y, stats.sigma_y)


def h(x, stats: NormStats):
    """Input back-transform to original units."""
    return unstandardize(x, stats.mu_x, stats.sigma_x)


def log_encode_inputs(x):
    """Natural log of the strictly positive input columns; other columns pass through."""
    x = np.array(x, dtype=np.float64, copy=True)
    x[..., LOG_INPUT_COLUMNS] = np.log(np.maximum(x[..., LOG_INPUT_COLUMNS], LOG_INPUT_FLOOR))
    return x


def log_transform(y, eps=DEFAULT_EPS):
    """Split tendencies into sign class {-1, 0, +1} and log magnitude.

    Values with ``|y| < eps`` get class 0 and magnitude ``ln(eps)``.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if np.any(eps <= 0):
        raise ValueError("eps must be positive")
    y = np.asarray(y, dtype=np.float64)
    small = np.abs(y) < eps
    cls = np.where(small, 0, np.sign(y)).astype(np.int8)
    with np.errstate(divide="ignore"):
        mag = np.where(small, np.log(eps), np.log(np.abs(y)))
    return cls, mag


def inverse_log(cls, magnitude):
    cls = np.asarray(cls)
    if np.any((cls != -1) & (cls != 0) & (cls != 1)):
        raise ValueError("classes must be in {-1, 0, +1}")
    return np.where(cls == 0, 0.0, cls * np.exp(magnitude))


@dataclass(frozen=True)
class LogTransformConfig:
    eps: np.ndarray = field(default_factory=lambda: np.full(N_OUTPUTS, DEFAULT_EPS))

    def __post_init__(self):
        eps = np.broadcast_to(np.asarray(self.eps, dtype=np.float64), (N_OUTPUTS,)).copy()
        if np.any(eps <= 0):
            raise ValueError("eps must be positive")
        eps.setflags(write=False)
        object.__setattr__(self, "eps", eps)

    def to_dict(self):
        return {"eps": self.eps.tolist(), "base": "e"}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["eps"]))
