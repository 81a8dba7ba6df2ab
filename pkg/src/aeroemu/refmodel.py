"""Synthetic mass-conserving aerosol box model ("toy M7").

One call to :func:`step` advances a box by one timestep through condensation,
nucleation, intra-species coagulation, self-coagulation and water uptake.
Every transfer moves a fraction in [0, 1) of a donor pool into a recipient of
the same species, so per-species mass is conserved and nothing goes negative.

The model works on plain arrays laid out per :mod:`aeroemu.schema`; a single
state is a 32-vector and a batch is an (n, 32) matrix.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import rng as _rng
from .schema import N_INPUTS, N_OUTPUTS, SCHEMA


class ConfigError(ValueError):
    pass


def _idx(name):
    return SCHEMA.input_names.index(name)


P, T, RH = _idx("pressure"), _idx("temperature"), _idx("rel_humidity")
H2SO4 = _idx("h2so4_mass")
MODES = ("ns", "ks", "as", "cs", "ki", "ai", "ci")
SOLUBLE = ("ns", "ks", "as", "cs")
NUM = {m: _idx("num_" + m) for m in MODES}

# coagulation edges per species, applied in this order
COAG_CHAINS = {
    "so4": (("ns", "ks"), ("ks", "as"), ("as", "cs")),
    "bc": (("ki", "ks"), ("ks", "as"), ("as", "cs")),
    "oc": (("ki", "ks"), ("ks", "as"), ("as", "cs")),
    "du": (("ai", "as"), ("ci", "cs"), ("as", "cs")),
}

_UNIFORM = {
    "pressure": (1.0e4, 1.05e5),
    "temperature": (190.0, 310.0),
    "rel_humidity": (0.0, 1.0),
    "ionization_rate": (0.0, 1.0),
    "cloud_cover": (0.0, 1.0),
    "boundary_layer": (0.0, 1.0),
    "forest_fraction": (0.0, 1.0),
}
# upper end of the log-uniform range; the range spans `decades` below it
_CAPS = {
    "h2so4_prod_rate": 1.0e2,
    "h2so4_mass": 1.0,
    "so4_ns": 1.0, "so4_ks": 1.0, "so4_as": 1.0, "so4_cs": 1.0,
    # carbon species live on smaller scales, like a real mixed-unit state
    "bc_ks": 1.0e-2, "bc_as": 1.0e-2, "bc_cs": 1.0e-2, "bc_ki": 1.0e-2,
    "oc_ks": 1.0e-1, "oc_as": 1.0e-1, "oc_cs": 1.0e-1, "oc_ki": 1.0e-1,
    "du_as": 1.0, "du_cs": 1.0, "du_ai": 1.0, "du_ci": 1.0,
    "num_ns": 1.0e4, "num_ks": 1.0e4, "num_as": 1.0e3, "num_cs": 1.0e1,
    "num_ki": 1.0e3, "num_ai": 1.0e1, "num_ci": 1.0,
}


def default_ranges(decades: float = 4.0) -> dict:
    out = {k: ("uniform", lo, hi) for k, lo, hi in ((k, *v) for k, v in _UNIFORM.items())}
    for k, cap in _CAPS.items():
        out[k] = ("log", cap * 10.0 ** -decades, cap)
    return {name: out[name] for name in SCHEMA.input_names}


@dataclass(frozen=True, eq=True)
class GeneratorParams:
    dt: float = 450.0
    k_cond: float = 1e-6
    k_nuc: float = 1e-4
    nuc_mass: float = 1e-3
    k_coag: float = 1e-9
    k_self: float = 1e-7
    water_factor: float = 0.5
    surface_weights: tuple = (0.01, 0.1, 1.0, 10.0)
    # name -> (kind, lo, hi) with kind "uniform" or "log"
    ranges: Mapping = field(default_factory=default_ranges)

    def __post_init__(self):
        object.__setattr__(self, "surface_weights", tuple(float(a) for a in self.surface_weights))
        object.__setattr__(self, "ranges", {k: tuple(v) for k, v in self.ranges.items()})
        self.validate()

    def validate(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        rates = (self.k_cond, self.k_nuc, self.nuc_mass, self.k_coag, self.k_self, self.water_factor)
        if any(r < 0 for r in rates) or any(a < 0 for a in self.surface_weights):
            raise ConfigError("rates and weights must be non-negative")
        if not self.nuc_mass > 0:
            raise ConfigError("nuc_mass must be positive")
        if len(self.surface_weights) != 4:
            raise ConfigError("surface_weights needs one entry per soluble mode")
        if set(self.ranges) != set(SCHEMA.input_names):
            missing = set(SCHEMA.input_names) ^ set(self.ranges)
            raise ConfigError(f"ranges must cover every input exactly; mismatch: {sorted(missing)}")
        for name, (kind, lo, hi) in self.ranges.items():
            if kind not in ("uniform", "log"):
                raise ConfigError(f"{name}: unknown sampling kind {kind!r}")
            if not lo < hi:
                raise ConfigError(f"{name}: degenerate range lo={lo} >= hi={hi}")
            if kind == "log" and lo <= 0:
                raise ConfigError(f"{name}: log-uniform range needs lo > 0")
            if kind == "uniform" and lo < 0:
                raise ConfigError(f"{name}: ranges must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["surface_weights"] = list(self.surface_weights)
        d["ranges"] = {k: list(v) for k, v in self.ranges.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorParams":
        d = dict(d)
        if "ranges" in d:
            base = default_ranges()
            base.update({k: tuple(v) for k, v in d["ranges"].items()})
            d["ranges"] = base
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown generator parameters: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def _bounds(params: GeneratorParams):
    kinds = np.array([params.ranges[n][0] == "log" for n in SCHEMA.input_names])
    lo = np.array([params.ranges[n][1] for n in SCHEMA.input_names], dtype=float)
    hi = np.array([params.ranges[n][2] for n in SCHEMA.input_names], dtype=float)
    return kinds, lo, hi


def _from_unit(u, params):
    is_log, lo, hi = _bounds(params)
    lin = lo + u * (hi - lo)
    with np.errstate(divide="ignore"):
        llo, lhi = np.log(np.where(is_log, lo, 1.0)), np.log(np.where(is_log, hi, 1.0))
    logv = np.exp(llo + u * (lhi - llo))
    return np.where(is_log, logv, lin)


def sample_state(stream: _rng.RowStream, params: GeneratorParams | None = None) -> np.ndarray:
    """Draw one box state (32-vector) from `stream`."""
    params = params or GeneratorParams()
    return _from_unit(stream.uniform(N_INPUTS), params)


def sample_states(seed: int, rows, params: GeneratorParams | None = None) -> np.ndarray:
    """Vectorised :func:`sample_state` for the row streams ``(seed, r)``, r in `rows`."""
    params = params or GeneratorParams()
    return _from_unit(_rng.uniform_block(seed, rows, N_INPUTS), params)


def validate_states(x, params: GeneratorParams | None = None) -> None:
    """Raise ValueError unless every row of `x` is a physically valid state."""
    x = np.atleast_2d(x)
    if x.shape[1] != N_INPUTS:
        raise ValueError(f"state width {x.shape[1]} != {N_INPUTS}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state values")
    if np.any(x < 0):
        raise ValueError("negative state values")
    frac = [_idx(n) for n in ("rel_humidity", "cloud_cover", "boundary_layer", "forest_fraction")]
    if np.any(x[:, frac] > 1):
        raise ValueError("fractional variables must lie in [0, 1]")
    if np.any((x[:, T] < 190) | (x[:, T] > 310)):
        raise ValueError("temperature outside [190, 310] K")


def step(state, params: GeneratorParams | None = None) -> np.ndarray:
    """Advance one timestep; returns 24 tendencies followed by 4 water values.

    Accepts a single 32-vector or an (n, 32) batch.
    """
    params = params or GeneratorParams()
    x = np.asarray(state, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != N_INPUTS:
        raise ValueError(f"state width {x.shape[1]} != {N_INPUTS}")
    dt = params.dt
    temp, rh = x[:, T], x[:, RH]

    mass = {(sp, m): x[:, _idx(f"{sp}_{m}")].copy()
            for sp, chain in COAG_CHAINS.items() for e in chain for m in e}
    num = {m: x[:, NUM[m]].copy() for m in MODES}
    gas = x[:, H2SO4]

    # condensation onto soluble modes, weighted by a surface proxy
    wn = [a * num[m] for a, m in zip(params.surface_weights, SOLUBLE)]
    area = wn[0] + wn[1] + wn[2] + wn[3]
    phi = -np.expm1(-params.k_cond * area * dt)
    cond = phi * gas
    safe = np.where(area > 0, area, 1.0)
    for w, m in zip(wn, SOLUBLE):
        mass[("so4", m)] += np.where(area > 0, cond * w / safe, 0.0)
    gas_left = gas - cond

    # nucleation of new particles from the remaining gas
    nuc = np.minimum(gas_left, params.k_nuc * gas * gas * rh * dt)
    gas_post = gas_left - nuc
    mass[("so4", "ns")] += nuc
    num["ns"] += nuc / params.nuc_mass

    # coagulation: transfer rates from the recipient number, fixed for the stage
    rate = params.k_coag * (1.0 + (temp - 190.0) / 120.0) * dt
    psi = {}
    for chain in COAG_CHAINS.values():
        for u, v in chain:
            psi.setdefault((u, v), -np.expm1(-rate * num[v]))
    for sp, chain in COAG_CHAINS.items():
        for u, v in chain:
            moved = mass[(sp, u)] * psi[(u, v)]
            mass[(sp, u)] -= moved
            mass[(sp, v)] += moved
    donor_psi = {}
    for chain in COAG_CHAINS.values():
        for u, v in chain:
            donor_psi.setdefault(u, psi[(u, v)])
    for u, p in donor_psi.items():
        num[u] -= num[u] * p

    # self-coagulation within every mode
    for m in MODES:
        kn = params.k_self * num[m] * dt
        num[m] -= kn * num[m] / (1.0 + kn)

    out = np.empty((x.shape[0], N_OUTPUTS))
    out[:, 0] = gas_post - gas
    for k in range(1, 24):
        name = SCHEMA.input_names[k + 8]
        j = k + 8
        if name.startswith("num_"):
            out[:, k] = num[name[4:]] - x[:, j]
        else:
            sp, m = name.split("_")
            out[:, k] = mass[(sp, m)] - x[:, j]

    # water uptake on the post-step soluble mass of each soluble mode
    wf = params.water_factor * rh * rh
    for i, m in enumerate(SOLUBLE):
        soluble = sum(mass[(sp, mm)] for (sp, mm) in mass if mm == m)
        out[:, 24 + i] = wf * soluble
    return out[0] if single else out


def generate_dataset(n: int, seed: int = 0, params: GeneratorParams | None = None):
    """Sample `n` states from row streams ``(seed, 0..n-1)`` and step each once."""
    from .data import Dataset

    if int(n) < 1:
        raise ConfigError("n must be at least 1")
    params = params or GeneratorParams()
    x = sample_states(seed, np.arange(int(n)), params)
    y = step(x, params)
    meta = {"generator": "refmodel", "seed": int(seed), "n": int(n),
            "params": params.to_dict(), "schema_hash": SCHEMA.hash}
    return Dataset(x, y, meta)


def conservation_residuals(x, y) -> np.ndarray:
    """Per-row, per-species |sum of tendencies| divided by the mean species mass, (n, 4)."""
    from .schema import SPECIES_INDICES

    x, y = np.atleast_2d(x), np.atleast_2d(y)
    cols = []
    for idx in SPECIES_INDICES.values():
        total = x[:, [i + 8 for i in idx]].sum(axis=1).mean()
        cols.append(np.abs(y[:, idx].sum(axis=1)) / total)
    return np.stack(cols, axis=1)


def check_dataset(ds, tol: float = 1e-12) -> None:
    """Full scan: conservation within `tol` and non-negative post-step values."""
    res = conservation_residuals(ds.x, ds.y)
    if res.max(initial=0.0) > tol:
        row, sp = np.unravel_index(np.argmax(res), res.shape)
        raise ValueError(f"row {row}: species {sp} conservation residual {res[row, sp]:.3e}")
    full = ds.x[:, 8:32] + ds.y[:, :24]
    if np.any(full < 0) or np.any(ds.y[:, 24:] < 0):
        raise ValueError("negative post-step value in dataset")
