"""Block circulant matrices and their modal blocks.

A block circulant matrix is fixed by its first block row.  Conjugating it
with ``F_n (x) I`` leaves only the diagonal blocks ``nu_j``, and for real data
``nu_{n-j} = conj(nu_j)``, so only ``n//2 + 1`` of them need to be stored.
"""
import numpy as np

from circadmm import (BlockCirculant, SegmentedVector, augment, forward_transform, fourier_matrix,
                      inverse_transform, modal_blocks, truncate)

rng = np.random.default_rng(0)
n, p = 6, 2
B = BlockCirculant(rng.standard_normal((n, p, p)))
print(f"{B!r}: dense shape {B.to_dense().shape}")

# block diagonalization by the Fourier matrix
Fp = np.kron(fourier_matrix(n), np.eye(p))
D = Fp.conj().T @ B.to_dense() @ Fp
nu = modal_blocks(B)
off = D.copy()
for j in range(n):
    off[j * p:(j + 1) * p, j * p:(j + 1) * p] = 0
print(f"largest off-diagonal entry after conjugation: {np.max(np.abs(off)):.1e}")
print(f"kept modal blocks: {nu.blocks.shape[0]} of {n}")
full = nu.full()
print("nu_5 == conj(nu_1):", np.allclose(full[5], full[1].conj()))

# products and sums stay in the class and act modal block by modal block
C = B @ B.T + B
err = np.max(np.abs(modal_blocks(C).blocks - (nu.blocks @ nu.blocks.conj().transpose(0, 2, 1)
                                              + nu.blocks)))
print(f"modal blocks of B B' + B vs nu nu^H + nu: {err:.1e}")

# vectors: forward transform, drop the redundant half, rebuild, invert
x = SegmentedVector(rng.standard_normal(n * 3), n, (2, 1))
xh = forward_transform(x)
xt = truncate(xh)
back = inverse_transform(augment(xt))
print(f"truncated length {xt.data.size} of {xh.data.size}, round trip error "
      f"{np.max(np.abs(back.data - x.data)):.1e}")
print(f"norm kept: {x.norm():.6f} vs {xh.norm():.6f}")
