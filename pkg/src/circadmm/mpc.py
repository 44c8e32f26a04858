"""Block circulant MPC: modal decomposition, Riccati terminal cost, condensing.

The MPC problem is::

    min  sum_{k<T} x_k'Qx_k + u_k'Ru_k + x_T'Px_T
    s.t. x_{k+1} = Ax_k + Bu_k,  y_k = Cx_k + Du_k,  y_lo <= y_k <= y_hi

with every matrix block circulant of order ``n``.  ``C`` and ``D`` are split
into ``p`` constraint sets stacked vertically; set ``i`` has ``n_y[i]``
outputs per subsystem.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .circulant import BlockCirculant, ModalBlocks, modal_blocks
from .qp import Cbcqp, validate_cbcqp, with_vectors

DARE_TOL = 1e-10
DARE_MAX_ITER = 10000
SCHEMA_VERSION = 1


class DareError(RuntimeError):
    """The modal Riccati iteration failed; ``mode`` names the offending modal index."""

    def __init__(self, msg, mode=None):
        super().__init__(msg)
        self.mode = mode


class ConvergenceError(RuntimeError):
    """ADMM hit its iteration cap inside a closed-loop step.  ``result`` has the trace."""

    def __init__(self, msg, result):
        super().__init__(msg)
        self.result = result


def _bc(x, n, p, m, name) -> BlockCirculant:
    bc = x if isinstance(x, BlockCirculant) else BlockCirculant(np.asarray(x, dtype=float))
    if (bc.n, bc.p, bc.m) != (n, p, m):
        raise ValueError(f"{name}: expected BC({n},{p},{m}), got BC({bc.n},{bc.p},{bc.m})")
    return bc


@dataclass(frozen=True, eq=False)
class MpcProblem:
    n: int
    n_x: int
    n_u: int
    A: BlockCirculant
    B: BlockCirculant
    Q: BlockCirculant
    R: BlockCirculant
    C: tuple[BlockCirculant, ...]
    D: tuple[BlockCirculant, ...]
    y_lo: np.ndarray
    y_hi: np.ndarray
    T: int
    discretization: str | None = None
    dt: float | None = None

    def __post_init__(self):
        n, nx, nu = self.n, self.n_x, self.n_u
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        if len(self.C) != len(self.D) or not self.C:
            raise ValueError("C and D need the same, nonzero number of constraint sets")
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("A", _bc(self.A, n, nx, nx, "A"))
        set_("B", _bc(self.B, n, nx, nu, "B"))
        set_("Q", _bc(self.Q, n, nx, nx, "Q"))
        set_("R", _bc(self.R, n, nu, nu, "R"))
        C = tuple(c if isinstance(c, BlockCirculant) else BlockCirculant(np.asarray(c, dtype=float))
                  for c in self.C)
        C = tuple(_bc(c, n, c.p, nx, f"C[{i}]") for i, c in enumerate(C))
        D = tuple(_bc(d, n, c.p, nu, f"D[{i}]") for i, (c, d) in enumerate(zip(C, self.D)))
        set_("C", C)
        set_("D", D)
        ny = n * sum(c.p for c in C)
        for name in ("y_lo", "y_hi"):
            y = np.asarray(getattr(self, name), dtype=float).ravel()
            if y.size != ny:
                raise ValueError(f"{name} has length {y.size}, expected {ny}")
            set_(name, y)
        if np.any(self.y_lo > self.y_hi):
            raise ValueError("output bounds are inverted")
        Qd, Rd = self.Q.to_dense(), self.R.to_dense()
        if np.max(np.abs(Qd - Qd.T)) > 1e-12 or np.min(np.linalg.eigvalsh(Qd)) < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if np.max(np.abs(Rd - Rd.T)) > 1e-12 or np.min(np.linalg.eigvalsh(Rd)) <= 0:
            raise ValueError("R must be symmetric positive definite")

    @property
    def p(self) -> int:
        return len(self.C)

    @property
    def n_y(self) -> tuple[int, ...]:
        return tuple(c.p for c in self.C)

    @cached_property
    def dare(self) -> "DareSolution":
        return solve_dare_modal(self)


# --------------------------------------------------------------------------
# Modal decomposition and Riccati equation
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModalMpc:
    """Kept modal blocks of every MPC matrix, each of shape ``(n//2 + 1, rows, cols)``."""

    n: int
    a: np.ndarray
    b: np.ndarray
    q: np.ndarray
    r: np.ndarray
    c: tuple[np.ndarray, ...]
    d: tuple[np.ndarray, ...]
    p: np.ndarray | None = None


def _modal_system(mpc: MpcProblem) -> ModalMpc:
    mb = lambda B: modal_blocks(B).blocks  # noqa: E731
    return ModalMpc(mpc.n, mb(mpc.A), mb(mpc.B), mb(mpc.Q), mb(mpc.R),
                    tuple(mb(c) for c in mpc.C), tuple(mb(d) for d in mpc.D))


def decompose_mpc(mpc: MpcProblem) -> ModalMpc:
    """Modal blocks of A, B, Q, R, C_i, D_i and of the Riccati terminal cost."""
    m = _modal_system(mpc)
    return ModalMpc(m.n, m.a, m.b, m.q, m.r, m.c, m.d, mpc.dare.modal)


@dataclass(frozen=True, eq=False)
class DareSolution:
    P: BlockCirculant
    modal: np.ndarray  # (h, n_x, n_x) Hermitian blocks
    residual: float  # infinity norm of the defect in the original domain
    iterations: int


def riccati_map(A, B, Q, R, P):
    """``A^H P A - A^H P B (B^H P B + R)^-1 B^H P A + Q``, batched over leading axes."""
    AH = np.conj(np.swapaxes(A, -1, -2))
    BH = np.conj(np.swapaxes(B, -1, -2))
    PA, PB = P @ A, P @ B
    S = BH @ PB + R
    return AH @ PA - AH @ PB @ np.linalg.solve(S, BH @ PA) + Q


def dare_defect(A, B, Q, R, P) -> float:
    return float(np.max(np.abs(riccati_map(A, B, Q, R, P) - P)))


def solve_dare_modal(mpc: MpcProblem, tol: float = DARE_TOL,
                     max_iter: int = DARE_MAX_ITER) -> DareSolution:
    """Solve the DARE independently per kept modal subsystem by Riccati iteration.

    Starts from ``P = Q`` and iterates until the defect of every modal block is
    below ``tol / 100``; the assembled real ``P`` is then checked against ``tol``
    in the original domain.
    """
    m = _modal_system(mpc)
    for j, rj in enumerate(m.r):
        try:
            np.linalg.cholesky(0.5 * (rj + rj.conj().T))
        except np.linalg.LinAlgError:
            raise DareError(f"modal R block {j} is not positive definite", mode=j) from None
    P = m.q.copy()
    target = tol * 1e-2
    defect = np.full(len(P), np.inf)
    it = 0
    while it < max_iter:
        Pn = riccati_map(m.a, m.b, m.q, m.r, P)
        Pn = 0.5 * (Pn + np.conj(np.swapaxes(Pn, 1, 2)))
        defect = np.max(np.abs(Pn - P), axis=(1, 2))
        P = Pn
        it += 1
        if np.all(defect < target):
            break
    if not np.all(defect < tol):
        j = int(np.argmax(defect))
        raise DareError(f"Riccati iteration did not converge for modal subsystem {j} "
                        f"(defect {defect[j]:.3e} after {it} iterations)", mode=j)
    Pbc = BlockCirculant.from_modal(ModalBlocks(mpc.n, P))
    Pbc = 0.5 * (Pbc + Pbc.T)
    Ad, Bd, Qd, Rd = (X.to_dense() for X in (mpc.A, mpc.B, mpc.Q, mpc.R))
    res = dare_defect(Ad, Bd, Qd, Rd, Pbc.to_dense())
    if res > tol:
        raise DareError(f"assembled terminal cost has DARE defect {res:.3e}")
    return DareSolution(Pbc, P, res, it)


def lqr_gain(mpc: MpcProblem, P: BlockCirculant | None = None) -> np.ndarray:
    """Dense infinite-horizon gain ``(B'PB + R)^-1 B'PA``; the control is ``u = -Kx``."""
    P = mpc.dare.P if P is None else P
    A, B, R, Pd = (X.to_dense() for X in (mpc.A, mpc.B, mpc.R, P))
    return np.linalg.solve(B.T @ Pd @ B + R, B.T @ Pd @ A)


# --------------------------------------------------------------------------
# Condensing
# --------------------------------------------------------------------------

class Condenser:
    """Eliminates the states of an MPC problem, caching everything independent of ``x0``.

    ``condenser(x0)`` returns the CBCQP for initial state ``x0``: ``N_z = T``
    input segments and ``N_v = T*p`` output segments ordered ``(k, set)``.
    """

    def __init__(self, mpc: MpcProblem, P: BlockCirculant | None = None):
        self.mpc = mpc
        P = mpc.dare.P if P is None else P
        self.P = P
        n, T = mpc.n, mpc.T
        A, B = mpc.A, mpc.B
        Apow = [BlockCirculant.identity(n, mpc.n_x)]
        for _ in range(T):
            Apow.append(Apow[-1] @ A)
        self.Apow = Apow
        AB = [Ak @ B for Ak in Apow[:T]]
        W = [mpc.Q] * T + [P]  # weights of x_0 .. x_T
        # G[k][j] = A^{k-1-j} B for j < k
        G = lambda k, j: AB[k - 1 - j] if j < k else None  # noqa: E731
        WG = {(k, j): W[k] @ AB[k - 1 - j] for k in range(1, T + 1) for j in range(k)}
        J = [[None] * T for _ in range(T)]
        for i in range(T):
            for j in range(i, T):
                acc = mpc.R if i == j else BlockCirculant.zeros(n, mpc.n_u, mpc.n_u)
                for k in range(j + 1, T + 1):
                    acc = acc + G(k, i).T @ WG[(k, j)]
                J[i][j] = acc
        for i in range(T):
            J[i][i] = 0.5 * (J[i][i] + J[i][i].T)
            for j in range(i + 1, T):
                J[j][i] = J[i][j].T
        K = []
        for k in range(T):
            for Ci, Di in zip(mpc.C, mpc.D):
                row = []
                for j in range(T):
                    blk = Ci @ G(k, j) if j < k else BlockCirculant.zeros(n, Ci.p, mpc.n_u)
                    if j == k:
                        blk = blk + Di
                    row.append(blk)
                K.append(row)
        # q_j = sum_{k>j} (A^{k-1-j}B)' W_k A^k x0
        self._qmaps = [[(AB[k - 1 - j].T @ W[k]) @ Apow[k] for k in range(j + 1, T + 1)]
                       for j in range(T)]
        self.z_layout = (mpc.n_u,) * T
        self.v_layout = mpc.n_y * T
        zeros_v = np.zeros(n * sum(self.v_layout))
        self.base = validate_cbcqp(J, K, np.zeros(n * mpc.n_u * T), zeros_v, zeros_v,
                                   self.z_layout, self.v_layout, n)

    def q(self, x0) -> np.ndarray:
        return np.concatenate([sum(M @ x0 for M in maps) for maps in self._qmaps])

    def bounds(self, x0):
        mpc = self.mpc
        lo, hi = [], []
        for k in range(mpc.T):
            Akx = self.Apow[k] @ x0
            Cx = np.concatenate([Ci @ Akx for Ci in mpc.C])
            lo.append(mpc.y_lo - Cx)
            hi.append(mpc.y_hi - Cx)
        return np.concatenate(lo), np.concatenate(hi)

    def __call__(self, x0) -> Cbcqp:
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != self.mpc.n * self.mpc.n_x:
            raise ValueError(f"x0 has length {x0.size}, expected {self.mpc.n * self.mpc.n_x}")
        lo, hi = self.bounds(x0)
        return with_vectors(self.base, self.q(x0), lo, hi)


def condense(mpc: MpcProblem, x0, P: BlockCirculant | None = None) -> Cbcqp:
    """Condensed CBCQP of ``mpc`` at initial state ``x0``.

    The linear term is ``G'((I_T (x) Q) (+) P) H x0``, i.e. weighted by the
    stage and terminal costs.
    """
    return Condenser(mpc, P)(x0)


def dense_prediction(mpc: MpcProblem):
    """Dense ``G`` and ``H`` with ``X = G z + H x0`` for ``X = (x_0, ..., x_T)``."""
    n, T = mpc.n, mpc.T
    A, B = mpc.A.to_dense(), mpc.B.to_dense()
    nx, nu = n * mpc.n_x, n * mpc.n_u
    G = np.zeros(((T + 1) * nx, T * nu))
    H = np.zeros(((T + 1) * nx, nx))
    Ak = np.eye(nx)
    for k in range(T + 1):
        H[k * nx:(k + 1) * nx] = Ak
        Ak = A @ Ak
    for k in range(1, T + 1):
        for j in range(k):
            G[k * nx:(k + 1) * nx, j * nu:(j + 1) * nu] = np.linalg.matrix_power(A, k - 1 - j) @ B
    return G, H


# --------------------------------------------------------------------------
# Ring of masses
# --------------------------------------------------------------------------

def ring_continuous(n: int, mass: float = 1.0, spring: float = 1.0, damper: float = 0.1):
    """Continuous-time ``(A_c, B_c)`` of ``n`` masses on a ring coupled by springs and dampers.

    State per mass is (angle deviation, angular rate); input is a torque.
    """
    if n < 3:
        raise ValueError(f"a ring needs at least 3 masses, got {n}")
    if mass <= 0:
        raise ValueError("mass must be positive")
    k, d = spring / mass, damper / mass
    a = np.zeros((n, 2, 2))
    a[0] = [[0.0, 1.0], [-2 * k, -2 * d]]
    a[1] = a[n - 1] = [[0.0, 0.0], [k, d]]
    b = np.zeros((n, 2, 1))
    b[0] = [[0.0], [1.0 / mass]]
    return BlockCirculant(a), BlockCirculant(b)


def discretize(Ac: BlockCirculant, Bc: BlockCirculant, dt: float, method: str = "zoh"):
    """Discretize a block circulant system.

    ``"zoh"`` takes the exact zero-order-hold of each modal subsystem and
    maps back; ``"euler"`` is ``(I + dt*A_c, dt*B_c)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if method == "euler":
        return BlockCirculant.identity(Ac.n, Ac.m) + dt * Ac, dt * Bc
    if method != "zoh":
        raise ValueError(f"unknown discretization {method!r}")
    a, b = modal_blocks(Ac).blocks, modal_blocks(Bc).blocks
    nx, nu = Ac.p, Bc.m
    ad = np.empty_like(a)
    bd = np.empty_like(b)
    for j in range(len(a)):
        M = np.zeros((nx + nu, nx + nu), dtype=complex)
        M[:nx, :nx] = a[j]
        M[:nx, nx:] = b[j]
        E = sla.expm(dt * M)
        ad[j], bd[j] = E[:nx, :nx], E[:nx, nx:]
    n = Ac.n
    return (BlockCirculant.from_modal(ModalBlocks(n, ad)),
            BlockCirculant.from_modal(ModalBlocks(n, bd)))


def ring_of_masses(n: int, mass: float = 1.0, spring: float = 1.0, damper: float = 0.1,
                   dt: float = 0.1, angle_bound: float = 0.5, torque_bound: float = 1.0,
                   rate_bound: float = np.inf, T: int = 10,
                   discretization: str = "zoh") -> MpcProblem:
    """Ring-of-masses MPC with ``Q = R = I`` and separate state and input constraints.

    Constraint set 1 is ``C_1 = I, D_1 = 0`` (angle and rate), set 2 is
    ``C_2 = 0, D_2 = I`` (torque).
    """
    Ac, Bc = ring_continuous(n, mass, spring, damper)
    A, B = discretize(Ac, Bc, dt, discretization)
    y_lo = np.concatenate([np.tile([-angle_bound, -rate_bound], n), np.full(n, -torque_bound)])
    return MpcProblem(
        n=n, n_x=2, n_u=1, A=A, B=B,
        Q=BlockCirculant.identity(n, 2), R=BlockCirculant.identity(n, 1),
        C=(BlockCirculant.identity(n, 2), BlockCirculant.zeros(n, 1, 2)),
        D=(BlockCirculant.zeros(n, 2, 1), BlockCirculant.identity(n, 1)),
        y_lo=y_lo, y_hi=-y_lo, T=T, discretization=discretization, dt=dt)


# --------------------------------------------------------------------------
# Receding horizon
# --------------------------------------------------------------------------

def closed_loop_step(mpc: MpcProblem, x_t, solver="circulant", cfg=None, condenser=None,
                     start=None):
    """Condense at ``x_t``, solve, apply the first input.

    ``solver`` is ``"baseline"``, ``"circulant"`` or a callable with the
    signature of :func:`circadmm.admm.solve_baseline`.  Returns
    ``(u_t, x_next, result)``; raises :class:`ConvergenceError` if ADMM hits
    its iteration cap.
    """
    from .admm import SOLVERS

    solve = SOLVERS[solver] if isinstance(solver, str) else solver
    condenser = condenser or Condenser(mpc)
    x_t = np.asarray(x_t, dtype=float).ravel()
    qp = condenser(x_t)
    res = solve(qp, cfg, start=start) if start is not None else solve(qp, cfg)
    if not res.converged:
        raise ConvergenceError(f"ADMM did not converge within {res.iterations} iterations", res)
    u = res.z[:mpc.n * mpc.n_u]
    return u, mpc.A @ x_t + mpc.B @ u, res


def simulate_closed_loop(mpc: MpcProblem, x0, steps: int, solver="circulant", cfg=None):
    """Run the receding-horizon loop; yields one record per step.

    Iteration stops early (after yielding nothing further) if a solve fails;
    the :class:`ConvergenceError` propagates to the caller.
    """
    condenser = Condenser(mpc)
    x = np.asarray(x0, dtype=float).ravel()
    start = None
    for t in range(steps):
        u, x_next, res = closed_loop_step(mpc, x, solver, cfg, condenser, start=start)
        if cfg is not None and cfg.warm_start:
            start = (res.v, res.gamma)
        y = np.concatenate([Ci @ x + Di @ u for Ci, Di in zip(mpc.C, mpc.D)])
        tol = 1e-6
        active = (y <= mpc.y_lo + tol) | (y >= mpc.y_hi - tol)
        yield {"t": t, "x": x, "u": u, "iterations": res.iterations, "active": active,
               "result": res}
        x = x_next


# --------------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------------

def _bounds_out(y, sign):
    return [None if np.isinf(a) and np.sign(a) == sign else float(a) for a in y]


def _bounds_in(y, sign):
    return np.array([sign * np.inf if a is None else a for a in y], dtype=float)


def mpc_to_dict(mpc: MpcProblem) -> dict:
    blk = lambda B: {"blocks": B.blocks.tolist()}  # noqa: E731
    return {
        "version": SCHEMA_VERSION, "n": mpc.n, "n_x": mpc.n_x, "n_u": mpc.n_u,
        "n_y": list(mpc.n_y), "p": mpc.p, "T": mpc.T,
        "A": blk(mpc.A), "B": blk(mpc.B), "Q": blk(mpc.Q), "R": blk(mpc.R),
        "C": [blk(c) for c in mpc.C], "D": [blk(d) for d in mpc.D],
        "y_lo": _bounds_out(mpc.y_lo, -1), "y_hi": _bounds_out(mpc.y_hi, 1),
        "discretization": mpc.discretization, "dt": mpc.dt,
    }


def mpc_from_dict(d: dict) -> MpcProblem:
    try:
        if d["version"] != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {d['version']!r}")
        arr = lambda x: np.asarray(x["blocks"], dtype=float)  # noqa: E731
        mpc = MpcProblem(
            n=int(d["n"]), n_x=int(d["n_x"]), n_u=int(d["n_u"]),
            A=arr(d["A"]), B=arr(d["B"]), Q=arr(d["Q"]), R=arr(d["R"]),
            C=tuple(arr(c) for c in d["C"]), D=tuple(arr(x) for x in d["D"]),
            y_lo=_bounds_in(d["y_lo"], -1), y_hi=_bounds_in(d["y_hi"], 1), T=int(d["T"]),
            discretization=d.get("discretization"), dt=d.get("dt"))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed MPC problem: {exc!r}") from None
    ny = d.get("n_y")
    if ny is not None:
        ny = [ny] * mpc.p if isinstance(ny, int) else list(ny)
        if tuple(ny) != mpc.n_y or d.get("p", mpc.p) != mpc.p:
            raise ValueError("n_y / p disagree with the C blocks")
    return mpc


def save_mpc(mpc: MpcProblem, path) -> None:
    with open(path, "w") as fh:
        json.dump(mpc_to_dict(mpc), fh, allow_nan=False)
        fh.write("\n")


def load_mpc(path) -> MpcProblem:
    with open(path) as fh:
        return mpc_from_dict(json.load(fh))
