"""
Throughput of one global step
=============================

Time the box model and the emulator over the same batch.  The emulator runs in
row blocks so its hidden activations stay in cache; single precision is the
usual choice for inference.
"""

from aeroemu import bench

reports = bench.run_bench(n=100_000, repeats=3, float32=True,
                          kinds=("refmodel", "nn-standard", "nn-constrained"))
for r in reports:
    print(f"{r.model_kind:<15}{r.wall_time:8.3f} s {r.rows_per_s:14,.0f} rows/s  fp{r.float_width}")
