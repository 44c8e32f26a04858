"""Timing both solvers on random QPs and on the ring MPC.

Per-iteration cost of the dense linear solve grows with ``(n l)^2`` while
the modal solve grows with ``n l^2`` plus the transforms, so the circulant
solver pulls ahead as the order grows.  The same sweeps are available from
the command line as ``circadmm bench-qp`` and ``circadmm bench-ring``.
"""
import numpy as np

from circadmm import flop_model
from circadmm.bench import bench_qp, bench_ring, summarize

print("operation model, N=1, n_z=10 (baseline / circulant total per iteration)")
for n in (2, 4, 16, 64, 128):
    f = flop_model(n, 1, 10)
    print(f"  n={n:3d}: {f['baseline']['total']:9.0f} / {f['circulant']['total']:9.0f}")

print("\nrandom QPs, N=1, l=10 (median ms per solve)")
rows = {(s["n"], s["alg"]): s for s in summarize(bench_qp([8, 32, 64], repeats=2))}
for n in (8, 32, 64):
    b, c = rows[(n, "baseline")], rows[(n, "circulant")]
    print(f"  n={n:3d}: sp1 {b['t_sp1_ms']:8.2f} / {c['t_sp1_ms']:8.2f}   "
          f"total {b['t_total_ms']:8.2f} / {c['t_total_ms']:8.2f}")

recs, disc = bench_ring([4, 8, 16], repeats=3)
print(f"\nring MPC: mean {np.mean([r.iters for r in recs]):.1f} iterations per problem, "
      f"inputs agree to {max(disc.values()):.1e}")
