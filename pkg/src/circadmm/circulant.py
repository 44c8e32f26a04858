"""Block circulant matrices and their unitary Fourier block-diagonalization.

Conventions
-----------
The Fourier matrix uses the positive exponent, ``F_n[k, j] = rho_j**k / sqrt(n)``
with ``rho_j = exp(2j*pi*j/n)``.  With this choice ``F_n^H x`` is exactly the
orthonormal forward FFT of numpy, and ``F_n x`` the orthonormal inverse FFT.

A block circulant matrix is stored by its first block *row* ``(b_0, ..., b_{n-1})``;
block ``(i, j)`` of the dense expansion is ``b_{(j - i) mod n}``.

Vectors partitioned into segments are stored segment-major: segment ``s`` of
block length ``l_s`` occupies ``n * l_s`` consecutive entries, arranged as ``n``
blocks of ``l_s`` entries.  In the modal domain block ``j`` of a segment holds
modal index ``j``.  Truncated modal vectors keep indices ``0 .. n//2`` only.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TOL_FFT = 1e-12
TOL_SYM = 1e-10
TOL_DIAG = 1e-10

ORIGINAL = "original"
MODAL_FULL = "modal-full"
MODAL_TRUNCATED = "modal-truncated"
_DOMAINS = (ORIGINAL, MODAL_FULL, MODAL_TRUNCATED)


class SymmetryError(ValueError):
    """Modal data violates the conjugate symmetry of a real object."""


class LayoutError(ValueError):
    """Vector length or segment layout does not match what an operation expects."""


def n_kept(n: int) -> int:
    """Number of modal indices kept by truncation, ``n//2 + 1``."""
    return n // 2 + 1


def mode_weights(n: int) -> np.ndarray:
    """Multiplicity of each kept modal index in the full spectrum.

    Index 0 and (for even ``n``) index ``n/2`` are self-conjugate and count
    once; every other kept index stands for itself and its conjugate partner.
    """
    w = np.full(n_kept(n), 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def fourier_matrix(n: int) -> np.ndarray:
    """Dense unitary Fourier matrix of order ``n`` (positive exponent).

    Meant for oracles and small problems; the transforms below never form it.
    """
    if n < 1:
        raise ValueError(f"order must be >= 1, got {n}")
    k = np.arange(n)
    return np.exp(2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


# --------------------------------------------------------------------------
# Block circulant matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BlockCirculant:
    """Real block circulant matrix in BC(n, p, m), stored as its first block row.

    Parameters
    ----------
    blocks : array_like, shape (n, p, m)
        ``blocks[k]`` is ``b_k``.  A 1-d array is read as a scalar circulant
        (``p = m = 1``).
    """

    blocks: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=float)
        if b.ndim == 1:
            b = b[:, None, None]
        if b.ndim != 3 or min(b.shape) < 1:
            raise ValueError(f"blocks must have shape (n, p, m) with n, p, m >= 1, got {b.shape}")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @property
    def n(self) -> int:
        return self.blocks.shape[0]

    @property
    def p(self) -> int:
        return self.blocks.shape[1]

    @property
    def m(self) -> int:
        return self.blocks.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n * self.p, self.n * self.m)

    def __repr__(self):
        return f"BlockCirculant(n={self.n}, p={self.p}, m={self.m})"

    # construction ---------------------------------------------------------

    @classmethod
    def identity(cls, n: int, m: int) -> "BlockCirculant":
        b = np.zeros((n, m, m))
        b[0] = np.eye(m)
        return cls(b)

    @classmethod
    def zeros(cls, n: int, p: int, m: int) -> "BlockCirculant":
        return cls(np.zeros((n, p, m)))

    @classmethod
    def from_dense(cls, M, n: int, p: int, m: int, tol: float | None = TOL_DIAG) -> "BlockCirculant":
        """Read the first block row of ``M`` and check the rest is its cyclic shift.

        ``tol`` is relative to the largest entry of ``M``; ``None`` skips the check.
        """
        M = np.asarray(M, dtype=float)
        if M.shape != (n * p, n * m):
            raise ValueError(f"expected a {(n * p, n * m)} matrix, got {M.shape}")
        out = cls(M[:p].reshape(p, n, m).transpose(1, 0, 2))
        if tol is not None:
            err = np.max(np.abs(out.to_dense() - M), initial=0.0)
            scale = max(np.max(np.abs(M), initial=0.0), 1.0)
            if err > tol * scale:
                raise ValueError(f"matrix is not block circulant (deviation {err:.3e})")
        return out

    @classmethod
    def from_modal(cls, mb: "ModalBlocks") -> "BlockCirculant":
        """Inverse of :func:`modal_blocks`."""
        full = mb.full()
        b = np.fft.fft(full, axis=0) / mb.n
        scale = max(np.max(np.abs(full), initial=0.0), 1.0)
        if np.max(np.abs(b.imag), initial=0.0) > TOL_SYM * scale:
            raise SymmetryError("modal blocks do not describe a real block circulant matrix")
        return cls(b.real)

    # algebra --------------------------------------------------------------

    def to_dense(self) -> np.ndarray:
        n, p, m = self.blocks.shape
        idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
        return self.blocks[idx].transpose(0, 2, 1, 3).reshape(n * p, n * m)

    @property
    def T(self) -> "BlockCirculant":
        idx = (-np.arange(self.n)) % self.n
        return BlockCirculant(self.blocks[idx].transpose(0, 2, 1))

    def _check_order(self, other: "BlockCirculant"):
        if other.n != self.n:
            raise ValueError(f"order mismatch: {self.n} vs {other.n}")

    def __add__(self, other):
        if not isinstance(other, BlockCirculant):
            return NotImplemented
        self._check_order(other)
        return BlockCirculant(self.blocks + other.blocks)

    def __sub__(self, other):
        if not isinstance(other, BlockCirculant):
            return NotImplemented
        self._check_order(other)
        return BlockCirculant(self.blocks - other.blocks)

    def __neg__(self):
        return BlockCirculant(-self.blocks)

    def __mul__(self, alpha):
        if not np.isscalar(alpha):
            return NotImplemented
        return BlockCirculant(alpha * self.blocks)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, BlockCirculant):
            self._check_order(other)
            if other.p != self.m:
                raise ValueError(f"inner block dims differ: {self.m} vs {other.p}")
            n = self.n
            # c_k = sum_i a_i b_{k-i}
            idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
            return BlockCirculant(np.einsum("ipm,kimr->kpr", self.blocks, other.blocks[idx]))
        x = np.asarray(other, dtype=float)
        if x.ndim != 1 or x.size != self.n * self.m:
            raise ValueError(f"expected a vector of length {self.n * self.m}")
        # y_i = sum_k b_k x_{i+k}
        xb = x.reshape(self.n, self.m)
        idx = (np.arange(self.n)[:, None] + np.arange(self.n)[None, :]) % self.n
        return np.einsum("kpm,ikm->ip", self.blocks, xb[idx]).ravel()

    def power(self, k: int) -> "BlockCirculant":
        if self.p != self.m:
            raise ValueError("power of a non-square block circulant")
        out = BlockCirculant.identity(self.n, self.m)
        for _ in range(k):
            out = out @ self
        return out


# --------------------------------------------------------------------------
# Modal blocks
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModalBlocks:
    """Truncated diagonal blocks ``nu_0 .. nu_{n//2}`` of a block diagonalized matrix."""

    n: int
    blocks: np.ndarray  # (n//2 + 1, p, m), complex

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=complex)
        if b.ndim != 3 or b.shape[0] != n_kept(self.n):
            raise LayoutError(f"expected {n_kept(self.n)} modal blocks for n={self.n}, got shape {b.shape}")
        object.__setattr__(self, "blocks", b)

    @property
    def p(self) -> int:
        return self.blocks.shape[1]

    @property
    def m(self) -> int:
        return self.blocks.shape[2]

    def full(self) -> np.ndarray:
        """All ``n`` diagonal blocks, with the discarded ones rebuilt by conjugation."""
        return _augment_axis0(self.blocks, self.n)


def modal_blocks(B: BlockCirculant) -> ModalBlocks:
    """Diagonal blocks ``nu_j = sum_k b_k rho_j**k`` for the kept modal indices.

    ``(F_n (x) I_p)^H B (F_n (x) I_m) = diag(nu_0, ..., nu_{n-1})``.
    """
    # rfft uses exp(-i...), so conjugate to get the positive-exponent sum
    return ModalBlocks(B.n, np.conj(np.fft.rfft(B.blocks, axis=0)))


def _augment_axis0(x: np.ndarray, n: int) -> np.ndarray:
    h = n_kept(n)
    tail = np.conj(x[1:n - h + 1][::-1])
    return np.concatenate([x, tail], axis=0)


# --------------------------------------------------------------------------
# Segmented vectors and transforms
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SegmentedVector:
    """Vector partitioned into segments of block lengths ``layout`` and order ``n``.

    ``data`` is real for the original domain and complex in the modal domains.
    """

    data: np.ndarray
    n: int
    layout: tuple[int, ...]
    domain: str = ORIGINAL

    def __post_init__(self):
        layout = tuple(int(l) for l in self.layout)
        if self.n < 1 or not layout or min(layout) < 1:
            raise LayoutError(f"invalid layout {layout} for order {self.n}")
        if self.domain not in _DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        dtype = float if self.domain == ORIGINAL else complex
        data = np.asarray(self.data, dtype=dtype).ravel()
        nb = n_kept(self.n) if self.domain == MODAL_TRUNCATED else self.n
        if data.size != nb * sum(layout):
            raise LayoutError(f"{self.domain} vector for layout {layout}, n={self.n} "
                              f"needs {nb * sum(layout)} entries, got {data.size}")
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "data", data)

    def segments(self) -> list[np.ndarray]:
        """Views of each segment reshaped to ``(blocks, l_s)``."""
        nb = n_kept(self.n) if self.domain == MODAL_TRUNCATED else self.n
        out, start = [], 0
        for l in self.layout:
            out.append(self.data[start:start + nb * l].reshape(nb, l))
            start += nb * l
        return out

    def norm(self) -> float:
        """Euclidean norm of the represented full vector.

        For truncated data this applies the multiplicity of each kept index,
        so it equals the norm of the augmented vector without forming it.
        """
        if self.domain != MODAL_TRUNCATED:
            return float(np.linalg.norm(self.data))
        w = mode_weights(self.n)
        return float(np.sqrt(sum(w @ np.sum(np.abs(s) ** 2, axis=1) for s in self.segments())))

    def _with(self, segs, domain):
        data = np.concatenate([s.ravel() for s in segs]) if segs else np.zeros(0)
        return SegmentedVector(data, self.n, self.layout, domain)


@dataclass(frozen=True)
class TransformPlan:
    """Applies ``F_n (x) I_m`` through the shuffle permutation and ``m`` length-``n`` FFTs.

    ``shuffle`` maps the block-major vector ``(x_0, ..., x_{n-1})``, ``x_k in R^m``,
    to component-major order, so that ``(F_n (x) I_m) = shuffle^T (I_m (x) F_n) shuffle``.
    """

    n: int
    m: int
    shuffle: np.ndarray = field(init=False, repr=False)
    unshuffle: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"invalid plan dims n={self.n}, m={self.m}")
        perm = np.arange(self.n * self.m).reshape(self.n, self.m).T.ravel()
        perm.setflags(write=False)
        inv = np.argsort(perm)
        inv.setflags(write=False)
        object.__setattr__(self, "shuffle", perm)
        object.__setattr__(self, "unshuffle", inv)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """``(F_n (x) I_m)^H x``."""
        y = np.fft.fft(np.asarray(x)[self.shuffle].reshape(self.m, self.n), axis=1, norm="ortho")
        return y.ravel()[self.unshuffle]

    def inverse(self, x: np.ndarray) -> np.ndarray:
        """``(F_n (x) I_m) x``."""
        y = np.fft.ifft(np.asarray(x)[self.shuffle].reshape(self.m, self.n), axis=1, norm="ortho")
        return y.ravel()[self.unshuffle]


def make_plans(n: int, layout: Sequence[int]) -> tuple[TransformPlan, ...]:
    return tuple(TransformPlan(n, l) for l in layout)


def _check_plans(x: SegmentedVector, plans):
    if plans is None:
        return make_plans(x.n, x.layout)
    plans = tuple(plans)
    if len(plans) != len(x.layout) or any(
            pl.n != x.n or pl.m != l for pl, l in zip(plans, x.layout)):
        raise LayoutError(f"plans do not match layout {x.layout} with n={x.n}")
    return plans


def forward_transform(x: SegmentedVector, plans=None) -> SegmentedVector:
    """Map a real segmented vector to the modal domain, ``psi^H x``."""
    if x.domain != ORIGINAL:
        raise LayoutError(f"forward_transform expects an original-domain vector, got {x.domain}")
    plans = _check_plans(x, plans)
    start, segs = 0, []
    for pl in plans:
        size = pl.n * pl.m
        segs.append(pl.forward(x.data[start:start + size]))
        start += size
    return x._with(segs, MODAL_FULL)


def check_symmetry(x: SegmentedVector, tol: float = TOL_SYM) -> float:
    """Largest violation of ``x_{n-j} = conj(x_j)`` over all segments.

    Raises :class:`SymmetryError` when it exceeds ``tol`` times the largest
    magnitude in ``x``.
    """
    if x.domain != MODAL_FULL:
        raise LayoutError("symmetry is checked on full modal vectors")
    n = x.n
    rev = (-np.arange(n)) % n
    err = max(np.max(np.abs(s - np.conj(s[rev])), initial=0.0) for s in x.segments())
    scale = max(np.max(np.abs(x.data), initial=0.0), 1.0)
    if err > tol * scale:
        raise SymmetryError(f"conjugate symmetry violated by {err:.3e}")
    return float(err)


def inverse_transform(x: SegmentedVector, plans=None) -> SegmentedVector:
    """Map a conjugate-symmetric modal vector back to a real vector, ``psi x``."""
    if x.domain != MODAL_FULL:
        raise LayoutError(f"inverse_transform expects a modal-full vector, got {x.domain}")
    check_symmetry(x)
    plans = _check_plans(x, plans)
    start, segs = 0, []
    for pl in plans:
        size = pl.n * pl.m
        y = pl.inverse(x.data[start:start + size])
        segs.append(y.real)
        start += size
    return x._with(segs, ORIGINAL)


@functools.singledispatch
def truncate(x):
    """Drop the modal indices ``n//2 + 1 .. n-1`` that are conjugates of kept ones."""
    raise TypeError(f"cannot truncate {type(x).__name__}")


@truncate.register
def _(x: SegmentedVector) -> SegmentedVector:
    if x.domain != MODAL_FULL:
        raise LayoutError(f"truncate expects a modal-full vector, got {x.domain}")
    h = n_kept(x.n)
    return x._with([s[:h] for s in x.segments()], MODAL_TRUNCATED)


@truncate.register
def _(x: np.ndarray, n: int | None = None) -> ModalBlocks:
    # full stack of n diagonal blocks, shape (n, p, m)
    n = x.shape[0] if n is None else n
    return ModalBlocks(n, x[:n_kept(n)])


@functools.singledispatch
def augment(x):
    """Rebuild the discarded modal indices from conjugate symmetry."""
    raise TypeError(f"cannot augment {type(x).__name__}")


@augment.register
def _(x: SegmentedVector) -> SegmentedVector:
    if x.domain != MODAL_TRUNCATED:
        raise LayoutError(f"augment expects a modal-truncated vector, got {x.domain}")
    return x._with([_augment_axis0(s, x.n) for s in x.segments()], MODAL_FULL)


@augment.register
def _(x: ModalBlocks) -> np.ndarray:
    return x.full()


def to_dense(B: BlockCirculant) -> np.ndarray:
    return B.to_dense()


def truncated_sqnorm(xhat: np.ndarray, n: int) -> float:
    """Squared norm of the full vector represented by modal-major truncated data.

    ``xhat`` has the kept modal index on axis 0.  Equals
    ``2||xhat||^2 - ||xhat_0||^2 - [n even] ||xhat_{n/2}||^2``.
    """
    s = np.sum(np.abs(xhat.reshape(xhat.shape[0], -1)) ** 2, axis=1)
    return float(mode_weights(n) @ s)


def real_to_truncated(x: np.ndarray, n: int) -> np.ndarray:
    """Fused ``truncate . forward`` on a block-major real array of shape ``(n, L)``."""
    return np.fft.rfft(x, axis=0, norm="ortho")


def truncated_to_real(xhat: np.ndarray, n: int) -> np.ndarray:
    """Fused ``inverse . augment`` on modal-major data of shape ``(n//2 + 1, L)``.

    The imaginary parts of the self-conjugate indices are discarded, which is
    the projection onto conjugate-symmetric spectra.
    """
    return np.fft.irfft(xhat, n=n, axis=0, norm="ortho")
