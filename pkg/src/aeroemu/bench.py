"""Throughput benchmark: one global timestep through the box model vs the emulator."""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import model as M
from . import refmodel
from .transforms import fit_stats

GLOBAL_STEP_ROWS = 571_392
BENCH_KINDS = ("refmodel", "nn-standard", "nn-constrained", "linear")


@dataclass
class BenchReport:
    model_kind: str
    rows: int
    wall_time: float  # median over repeats, seconds
    rows_per_s: float
    threads: int
    float_width: int
    repeats: int = 5
    times: list = field(default_factory=list)

    def __post_init__(self):
        if self.model_kind not in BENCH_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if not self.wall_time > 0:
            raise ValueError("wall time must be positive")

    def to_dict(self):
        return asdict(self)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["model_kind", "rows", "wall_time", "rows_per_s", "threads", "float_width"],
    "properties": {
        "model_kind": {"enum": list(BENCH_KINDS)},
        "rows": {"type": "integer", "minimum": 1},
        "wall_time": {"type": "number", "exclusiveMinimum": 0},
        "rows_per_s": {"type": "number", "exclusiveMinimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "float_width": {"enum": [32, 64]},
        "repeats": {"type": "integer", "minimum": 1},
        "times": {"type": "array", "items": {"type": "number"}},
    },
}


def _sharded(fn, x, threads):
    """Run `fn` on `threads` contiguous row shards concurrently and stack the results."""
    if threads <= 1:
        return fn(x)
    parts = np.array_split(x, threads)
    with ThreadPoolExecutor(threads) as pool:
        return np.concatenate(list(pool.map(fn, parts)))


def _time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), times


def nn_pipeline(ckpt: M.Checkpoint, float32=False, constrained=False, chunk=4096):
    """Inputs in original units -> predictions in original units, transforms included.

    Rows go through in cache-sized blocks; each block is standardised, run through the
    network, back-transformed and (optionally) constrained before the next one.
    """
    dtype = np.float32 if float32 else np.float64
    params = ckpt.params.astype(dtype)
    st = ckpt.stats
    mu_x, inv_sx = st.mu_x.astype(dtype), (1.0 / st.sigma_x).astype(dtype)
    mu_y, sy = st.mu_y.astype(dtype), st.sigma_y.astype(dtype)
    cfg = ckpt.constraint if ckpt.constraint.mode != "none" else ckpt.constraint.with_mode("correct")

    def run(x):
        out = np.empty((len(x), params.arch[-1]), dtype=dtype)
        for start in range(0, len(x), chunk):
            xb = x[start:start + chunk]
            xs = xb.astype(dtype)
            xs -= mu_x
            xs *= inv_sx
            y = M.forward_blocked(params, xs, chunk)
            y *= sy
            y += mu_y
            if constrained:
                y = M.constrain_orig(y, xb, cfg)
            out[start:start + chunk] = y
        return out
    return run


def run_bench(ckpt: M.Checkpoint | None = None, n: int = GLOBAL_STEP_ROWS, threads: int = 1,
              float32: bool = False, repeats: int = 5, seed: int = 0,
              kinds=("refmodel", "nn-standard"), linear=None) -> list:
    """Time each model kind over the same `n` sampled states; one report per kind."""
    if n < 1 or threads < 1 or repeats < 1:
        raise ValueError("n, threads and repeats must be >= 1")
    params = refmodel.GeneratorParams()
    x = refmodel.sample_states(seed, np.arange(n), params)
    if ckpt is None:
        ref = refmodel.generate_dataset(10_000, seed + 1, params)
        ckpt = M.Checkpoint(M.init(seed=seed), fit_stats(ref))
    width = 32 if float32 else 64
    fns = {
        "refmodel": lambda a: refmodel.step(a, params),
        "nn-standard": nn_pipeline(ckpt, float32),
        "nn-constrained": nn_pipeline(ckpt, float32, constrained=True),
    }
    if linear is not None:
        fns["linear"] = linear.predict
    reports = []
    with threadpool_limits(limits=1):
        for kind in kinds:
            fn = fns[kind]
            med, times = _time(lambda: _sharded(fn, x, threads), repeats)
            reports.append(BenchReport(kind, n, med, n / med, threads,
                                       64 if kind in ("refmodel", "linear") else width,
                                       repeats, times))
    return reports


def reports_to_json(reports) -> str:
    return json.dumps({"cpu_count": os.cpu_count(), "reports": [r.to_dict() for r in reports]},
                      indent=1)
