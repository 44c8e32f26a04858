"""The two ADMM solvers produce the same iterates.

The baseline solver works on the dense problem.  The circulant solver does
its linear solve on the modal slices and projects in the original domain,
paying one inverse and one forward transform per iteration.  Run in lockstep
from the same start, the two agree to rounding at every iteration.
"""
import numpy as np

from circadmm import SolverConfig, lockstep, solve_baseline, solve_circulant
from circadmm.qp import random_cbcqp

for n in (1, 4, 7, 16):
    p = random_cbcqp(n, n, (3, 2))
    a, b, disc = lockstep(p)
    print(f"n={n:2d}: {a.iterations:4d} iterations, largest iterate gap {disc.max():.1e}")

p = random_cbcqp(3, 32, (10,))
cfg = SolverConfig()
base, circ = solve_baseline(p, cfg), solve_circulant(p, cfg)
print(f"\nn=32: converged {base.converged}/{circ.converged} after {circ.iterations} iterations")
print(f"|z_base - z_circ| = {np.max(np.abs(base.z - circ.z)):.1e}")
for key in ("sp1", "sp2", "sp3"):
    print(f"  {key}: baseline {1e3 * base.timings[key]:8.2f} ms, "
          f"circulant {1e3 * circ.timings[key]:8.2f} ms")

# ADMM stops on small iterate changes, so KKT residuals sit near sqrt(eps)
for eps in (1e-10, 1e-14, 1e-18):
    r = solve_circulant(p, SolverConfig(eps=eps, i_max=100000))
    print(f"eps={eps:.0e}: {r.iterations:5d} iterations, largest KKT residual {r.kkt.max():.1e}")
