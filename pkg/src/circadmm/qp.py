"""Constrained block circulant QPs: data model, modal transform, KKT audit, generator.

A CBCQP is::

    min  1/2 z'Jz + q'z   s.t.  Kz - v = 0,  v_lo <= v <= v_hi

where ``J`` is an ``N_z x N_z`` grid and ``K`` an ``N_v x N_z`` grid of block
circulant matrices of a common order ``n``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .circulant import (TOL_SYM, BlockCirculant, mode_weights, modal_blocks,
                        n_kept, real_to_truncated)

SCHEMA_VERSION = 1


class ProblemError(ValueError):
    """Raised for structurally invalid or ill-posed problem data."""


def _offsets(layout: Sequence[int], n: int) -> np.ndarray:
    return np.concatenate([[0], np.cumsum([n * l for l in layout])])


def to_block_major(x: np.ndarray, n: int, layout: Sequence[int]) -> np.ndarray:
    """Segment-major vector -> ``(n, sum(layout))`` array, row ``k`` = block ``k`` of every segment."""
    off = _offsets(layout, n)
    return np.concatenate([x[off[i]:off[i + 1]].reshape(n, l) for i, l in enumerate(layout)], axis=1)


def from_block_major(X: np.ndarray, layout: Sequence[int]) -> np.ndarray:
    cols = np.concatenate([[0], np.cumsum(layout)])
    return np.concatenate([X[:, cols[i]:cols[i + 1]].ravel() for i in range(len(layout))])


def _as_bc(block, n, p, m, where) -> BlockCirculant:
    if isinstance(block, BlockCirculant):
        bc = block
    else:
        arr = np.asarray(block, dtype=float)
        try:
            if arr.ndim == 2:
                bc = BlockCirculant.from_dense(arr, n, p, m)
            else:
                bc = BlockCirculant(arr.reshape(-1) if arr.ndim == 0 else arr)
        except ValueError as exc:
            raise ProblemError(f"{where}: {exc}") from None
    if (bc.n, bc.p, bc.m) != (n, p, m):
        raise ProblemError(f"{where}: expected BC({n},{p},{m}), got BC({bc.n},{bc.p},{bc.m})")
    return bc


def _assemble(grid, n) -> np.ndarray:
    return np.block([[b.to_dense() for b in row] for row in grid])


@dataclass(frozen=True, eq=False)
class Cbcqp:
    """Validated constrained block circulant QP.  Build with :func:`validate_cbcqp`."""

    n: int
    z_layout: tuple[int, ...]
    v_layout: tuple[int, ...]
    J: tuple[tuple[BlockCirculant, ...], ...]
    K: tuple[tuple[BlockCirculant, ...], ...]
    q: np.ndarray
    v_lo: np.ndarray
    v_hi: np.ndarray
    witness: np.ndarray | None = field(default=None, repr=False)

    @property
    def nz(self) -> int:
        return self.n * sum(self.z_layout)

    @property
    def nv(self) -> int:
        return self.n * sum(self.v_layout)

    @cached_property
    def J_dense(self) -> np.ndarray:
        return _assemble(self.J, self.n)

    @cached_property
    def K_dense(self) -> np.ndarray:
        return _assemble(self.K, self.n)


def validate_cbcqp(J, K, q, v_lo, v_hi, z_layout, v_layout, n: int, witness=None) -> Cbcqp:
    """Check the structure of raw problem data and return a :class:`Cbcqp`.

    Grid entries may be :class:`BlockCirculant` objects, ``(n, p, m)`` block
    arrays, or dense matrices (which are tested for block circulant structure).
    ``J`` must expand to a symmetric positive definite matrix.
    """
    z_layout = tuple(int(l) for l in z_layout)
    v_layout = tuple(int(l) for l in v_layout)
    if n < 1 or not z_layout or not v_layout or min(z_layout + v_layout) < 1:
        raise ProblemError("order and segment lengths must be positive and layouts nonempty")
    Nz, Nv = len(z_layout), len(v_layout)
    if len(J) != Nz or any(len(row) != Nz for row in J):
        raise ProblemError(f"J must be a {Nz}x{Nz} grid")
    if len(K) != Nv or any(len(row) != Nz for row in K):
        raise ProblemError(f"K must be a {Nv}x{Nz} grid")
    Jg = tuple(tuple(_as_bc(J[k][j], n, z_layout[k], z_layout[j], f"J[{k}][{j}]")
                     for j in range(Nz)) for k in range(Nz))
    Kg = tuple(tuple(_as_bc(K[w][j], n, v_layout[w], z_layout[j], f"K[{w}][{j}]")
                     for j in range(Nz)) for w in range(Nv))
    nz, nv = n * sum(z_layout), n * sum(v_layout)
    q = np.asarray(q, dtype=float).ravel()
    v_lo = np.asarray(v_lo, dtype=float).ravel()
    v_hi = np.asarray(v_hi, dtype=float).ravel()
    if q.size != nz:
        raise ProblemError(f"q has length {q.size}, expected {nz}")
    if v_lo.size != nv or v_hi.size != nv:
        raise ProblemError(f"bounds must have length {nv}")
    if np.any(np.isnan(v_lo)) or np.any(np.isnan(v_hi)) or np.any(v_lo > v_hi):
        raise ProblemError("bounds are inverted or NaN")
    p = Cbcqp(n, z_layout, v_layout, Jg, Kg, q, v_lo, v_hi,
              None if witness is None else np.asarray(witness, dtype=float))
    Jd = p.J_dense
    if np.max(np.abs(Jd - Jd.T)) > TOL_SYM * max(np.max(np.abs(Jd)), 1.0):
        raise ProblemError("J is not symmetric")
    try:
        np.linalg.cholesky(Jd)
    except np.linalg.LinAlgError:
        raise ProblemError("J is not positive definite") from None
    return p


def with_vectors(p: Cbcqp, q, v_lo, v_hi) -> Cbcqp:
    """Copy of ``p`` with new linear term and bounds; ``J`` and ``K`` are reused unchecked."""
    q = np.asarray(q, dtype=float).ravel()
    v_lo = np.asarray(v_lo, dtype=float).ravel()
    v_hi = np.asarray(v_hi, dtype=float).ravel()
    if q.size != p.nz or v_lo.size != p.nv or v_hi.size != p.nv:
        raise ProblemError("vector dimensions do not match the problem")
    if np.any(v_lo > v_hi):
        raise ProblemError("bounds are inverted")
    out = Cbcqp(p.n, p.z_layout, p.v_layout, p.J, p.K, q, v_lo, v_hi)
    for key in ("J_dense", "K_dense"):
        if key in p.__dict__:
            out.__dict__[key] = p.__dict__[key]
    return out


# --------------------------------------------------------------------------
# Modal form
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModalQp:
    """Transformed and truncated QP stored modal-major.

    ``J_hat[j]``, ``K_hat[j]``, ``q_hat[j]`` are the dense slices for kept modal
    index ``j``; within a slice, columns follow the segment order.  Bounds stay
    in the original domain.
    """

    n: int
    z_layout: tuple[int, ...]
    v_layout: tuple[int, ...]
    J_hat: np.ndarray  # (h, Lz, Lz)
    K_hat: np.ndarray  # (h, Lv, Lz)
    q_hat: np.ndarray  # (h, Lz)
    v_lo: np.ndarray
    v_hi: np.ndarray


def _modal_grid(grid, rows, cols) -> np.ndarray:
    # stack each grid block's modal blocks into (h, sum(rows), sum(cols))
    r = np.concatenate([[0], np.cumsum(rows)])
    c = np.concatenate([[0], np.cumsum(cols)])
    h = n_kept(grid[0][0].n)
    out = np.zeros((h, r[-1], c[-1]), dtype=complex)
    for a, row in enumerate(grid):
        for b, blk in enumerate(row):
            out[:, r[a]:r[a + 1], c[b]:c[b + 1]] = modal_blocks(blk).blocks
    return out


def transform_qp(p: Cbcqp) -> ModalQp:
    """Block-diagonalize and truncate a CBCQP."""
    J_hat = _modal_grid(p.J, p.z_layout, p.z_layout)
    K_hat = _modal_grid(p.K, p.v_layout, p.z_layout)
    q_hat = real_to_truncated(to_block_major(p.q, p.n, p.z_layout), p.n)
    return ModalQp(p.n, p.z_layout, p.v_layout, J_hat, K_hat, q_hat, p.v_lo, p.v_hi)


def modal_to_segmented(xhat: np.ndarray, layout: Sequence[int]) -> np.ndarray:
    """Modal-major ``(h, L)`` array -> segment-major truncated modal vector."""
    return from_block_major(xhat, layout)


def segmented_to_modal(x: np.ndarray, n: int, layout: Sequence[int]) -> np.ndarray:
    """Segment-major truncated modal vector -> modal-major ``(h, L)`` array."""
    return to_block_major(x, n_kept(n), layout)


# --------------------------------------------------------------------------
# Objective and KKT audit
# --------------------------------------------------------------------------

def objective_value(p: Cbcqp, z) -> float:
    z = np.asarray(z, dtype=float).ravel()
    if z.size != p.nz:
        raise ProblemError(f"z has length {z.size}, expected {p.nz}")
    return float(0.5 * z @ (p.J_dense @ z) + p.q @ z)


def objective_value_modal(mq: ModalQp, zhat: np.ndarray) -> float:
    """Objective from modal-major truncated ``zhat`` of shape ``(h, Lz)``.

    Each kept index is weighted by how many full-spectrum indices it stands for.
    """
    zhat = np.asarray(zhat)
    quad = np.einsum("ja,jab,jb->j", zhat.conj(), mq.J_hat, zhat).real
    lin = np.einsum("ja,ja->j", mq.q_hat.conj(), zhat).real
    return float(mode_weights(mq.n) @ (0.5 * quad + lin))


@dataclass(frozen=True)
class KktResiduals:
    """KKT residuals of a candidate primal/dual point (all infinity norms).

    ``stationarity`` is the larger of the z-row ``Jz + q + K'gamma`` and the
    v-row ``gamma - (lam_hi - lam_lo)``.  ``stationarity_aug`` is the full
    penalty-augmented residual, present when a penalty was supplied.
    """

    primal_eq: float
    bound_viol: float
    stationarity: float
    comp_slack: float
    dual_feas: float
    stationarity_z: float = 0.0
    stationarity_v: float = 0.0
    stationarity_aug: float | None = None

    def max(self) -> float:
        return max(self.primal_eq, self.bound_viol, self.stationarity, self.comp_slack,
                   self.dual_feas)


def split_dual(gamma):
    """Bound multipliers implied by an equality dual: ``lam_hi = gamma+``, ``lam_lo = gamma-``."""
    gamma = np.asarray(gamma, dtype=float)
    return np.maximum(gamma, 0.0), np.maximum(-gamma, 0.0)


def kkt_residuals(p: Cbcqp, z, v, gamma, lam_hi=None, lam_lo=None, rho=None) -> KktResiduals:
    z = np.asarray(z, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    gamma = np.asarray(gamma, dtype=float).ravel()
    if lam_hi is None or lam_lo is None:
        lh, ll = split_dual(gamma)
        lam_hi = lh if lam_hi is None else lam_hi
        lam_lo = ll if lam_lo is None else lam_lo
    lam_hi = np.asarray(lam_hi, dtype=float).ravel()
    lam_lo = np.asarray(lam_lo, dtype=float).ravel()
    if z.size != p.nz or any(a.size != p.nv for a in (v, gamma, lam_hi, lam_lo)):
        raise ProblemError("vector dimensions do not match the problem")

    J, K = p.J_dense, p.K_dense
    Kz = K @ z
    r_eq = Kz - v
    primal_eq = float(np.max(np.abs(r_eq), initial=0.0))
    bound_viol = float(max(np.max(v - p.v_hi, initial=0.0), np.max(p.v_lo - v, initial=0.0), 0.0))
    dual_feas = float(max(np.max(-lam_hi, initial=0.0), np.max(-lam_lo, initial=0.0), 0.0)) + 0.0
    # an infinite bound can never be active, so its multiplier itself is the residual
    with np.errstate(invalid="ignore"):
        cs_hi = np.where(np.isinf(p.v_hi), lam_hi,
                         np.where(lam_hi == 0.0, 0.0, lam_hi * (v - p.v_hi)))
        cs_lo = np.where(np.isinf(p.v_lo), lam_lo,
                         np.where(lam_lo == 0.0, 0.0, lam_lo * (p.v_lo - v)))
    comp_slack = float(max(np.max(np.abs(cs_hi), initial=0.0), np.max(np.abs(cs_lo), initial=0.0)))
    st_z = J @ z + p.q + K.T @ gamma
    st_v = -gamma + lam_hi - lam_lo
    sz = float(np.max(np.abs(st_z), initial=0.0))
    sv = float(np.max(np.abs(st_v), initial=0.0))
    aug = None
    if rho is not None:
        top = 0.5 * (J + J.T) @ z + rho * K.T @ r_eq + K.T @ gamma + p.q
        bot = -rho * r_eq + st_v
        aug = float(max(np.max(np.abs(top), initial=0.0), np.max(np.abs(bot), initial=0.0)))
    return KktResiduals(primal_eq, bound_viol, max(sz, sv), comp_slack, dual_feas, sz, sv, aug)


# --------------------------------------------------------------------------
# Random instances
# --------------------------------------------------------------------------

def _random_grid(rng, n, rows, cols, scale=1.0):
    return [[BlockCirculant(scale * rng.standard_normal((n, r, c))) for c in cols] for r in rows]


def random_cbcqp(seed, n: int, z_layout: Sequence[int], v_layout: Sequence[int] | None = None,
                 delta: float = 1e-2) -> Cbcqp:
    """Seeded random CBCQP with a strictly feasible witness.

    ``J = M'M + delta*I`` for a random block circulant grid ``M`` scaled by
    ``1/sqrt(n*sum(z_layout))``; ``K`` has standard normal blocks.  Bounds are
    placed around ``K z_feas`` with slack ``|N(0,1) + 0.1|``.
    """
    z_layout = tuple(z_layout)
    v_layout = z_layout if v_layout is None else tuple(v_layout)
    if n < 1 or not z_layout or not v_layout:
        raise ProblemError("order must be positive and layouts nonempty")
    rng = np.random.default_rng(seed)
    nz = n * sum(z_layout)
    M = _random_grid(rng, n, z_layout, z_layout, 1.0 / np.sqrt(nz))
    Nz = len(z_layout)
    J = []
    for k in range(Nz):
        row = []
        for j in range(Nz):
            acc = BlockCirculant.zeros(n, z_layout[k], z_layout[j])
            for r in range(Nz):
                acc = acc + M[r][k].T @ M[r][j]
            if k == j:
                acc = acc + delta * BlockCirculant.identity(n, z_layout[k])
            row.append(acc)
        J.append(row)
    # exact symmetry of the diagonal grid blocks' dense expansion
    for k in range(Nz):
        for j in range(k + 1, Nz):
            J[j][k] = J[k][j].T
        J[k][k] = 0.5 * (J[k][k] + J[k][k].T)
    K = _random_grid(rng, n, v_layout, z_layout)
    q = rng.standard_normal(nz)
    z_feas = rng.standard_normal(nz)
    v0 = np.block([[b.to_dense() for b in row] for row in K]) @ z_feas
    slack = np.abs(rng.standard_normal(v0.size) + 0.1)
    return validate_cbcqp(J, K, q, v0 - slack, v0 + slack, z_layout, v_layout, n, witness=z_feas)


# --------------------------------------------------------------------------
# JSON problem files
# --------------------------------------------------------------------------

def _bound_list(x, inf_sign):
    return [None if np.isinf(a) and np.sign(a) == inf_sign else float(a) for a in x]


def _bound_array(x, inf_sign):
    return np.array([inf_sign * np.inf if a is None else a for a in x], dtype=float)


def cbcqp_to_dict(p: Cbcqp) -> dict:
    """Serializable form.  Infinite bounds are written as ``null``."""
    grid = lambda g: [[{"blocks": b.blocks.tolist()} for b in row] for row in g]  # noqa: E731
    return {
        "version": SCHEMA_VERSION,
        "n": p.n,
        "z_layout": list(p.z_layout),
        "v_layout": list(p.v_layout),
        "J": grid(p.J),
        "K": grid(p.K),
        "q": p.q.tolist(),
        "v_lo": _bound_list(p.v_lo, -1),
        "v_hi": _bound_list(p.v_hi, 1),
    }


def cbcqp_from_dict(d: dict) -> Cbcqp:
    try:
        if d["version"] != SCHEMA_VERSION:
            raise ProblemError(f"unsupported schema version {d['version']!r}")
        grid = lambda g: [[np.asarray(b["blocks"], dtype=float) for b in row] for row in g]  # noqa: E731
        return validate_cbcqp(grid(d["J"]), grid(d["K"]), d["q"],
                              _bound_array(d["v_lo"], -1), _bound_array(d["v_hi"], 1),
                              d["z_layout"], d["v_layout"], int(d["n"]))
    except (KeyError, TypeError) as exc:
        raise ProblemError(f"malformed problem: {exc!r}") from None


def save_cbcqp(p: Cbcqp, path) -> None:
    with open(path, "w") as fh:
        json.dump(cbcqp_to_dict(p), fh, allow_nan=False)
        fh.write("\n")


def load_cbcqp(path) -> Cbcqp:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProblemError(f"{path}: invalid JSON ({exc})") from None
    return cbcqp_from_dict(d)
