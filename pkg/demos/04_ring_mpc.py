"""Receding-horizon control of a ring of coupled masses.

Each mass is tied to its two neighbours by springs and dampers.  The ring
is invariant under rotation, so the dynamics, weights and terminal cost are
block circulant and the condensed MPC problem is a constrained block
circulant QP.
"""
import numpy as np

from circadmm import SolverConfig, condense, ring_of_masses, solve_circulant, solve_dare_modal
from circadmm.mpc import lqr_gain, simulate_closed_loop

n = 8
mpc = ring_of_masses(n, torque_bound=0.2)
dare = solve_dare_modal(mpc)
print(f"terminal cost from {dare.modal.shape[0]} modal Riccati equations, "
      f"defect {dare.residual:.1e}")

x0 = np.random.default_rng(1).uniform(-0.3, 0.3, 2 * n)
qp = condense(mpc, x0)
print(f"condensed QP: {qp.nz} inputs over T={mpc.T}, {qp.nv} constraints")
res = solve_circulant(qp)
u_lqr = -lqr_gain(mpc) @ x0
print(f"first input with bounds     {np.round(res.z[:n], 3)}")
print(f"unconstrained LQR input       {np.round(u_lqr, 3)}")

cfg = SolverConfig(warm_start=True)
print("\n t  iters  |x|      max|u|  active")
for rec in simulate_closed_loop(mpc, x0, 25, cfg=cfg):
    if rec["t"] % 3 == 0:
        print(f"{rec['t']:2d}  {rec['iterations']:5d}  {np.linalg.norm(rec['x']):.4f}  "
              f"{np.max(np.abs(rec['u'])):.4f}  {int(rec['active'].sum())}")
