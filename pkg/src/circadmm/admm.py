"""ADMM for constrained block circulant QPs.

Two interchangeable solvers share one iteration scheme:

* :class:`BaselineAdmm` works on the dense real problem.
* :class:`CirculantAdmm` works on the Fourier block-diagonalized and truncated
  problem, solving ``n//2 + 1`` small complex systems per iteration and
  projecting onto the bounds in the original domain.

Both start from ``v = gamma = 0`` unless warm started, and stop once the
squared 2-norms of the changes in ``v`` and ``gamma`` both drop below ``eps``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .circulant import (SegmentedVector, MODAL_TRUNCATED, augment, n_kept, real_to_truncated,
                        truncated_sqnorm, truncated_to_real)
from .qp import (Cbcqp, KktResiduals, ModalQp, from_block_major, kkt_residuals, objective_value,
                 to_block_major, transform_qp)

TRACE_LEVELS = ("none", "residuals", "full")


class FactorizationError(np.linalg.LinAlgError):
    """The ADMM system matrix lost positive definiteness."""

    def __init__(self, msg, mode=None):
        super().__init__(msg)
        self.mode = mode


@dataclass(frozen=True)
class SolverConfig:
    """ADMM settings.

    rho : penalty parameter
    eps : threshold on the squared norms of the iterate changes
    i_max : iteration cap
    warm_start : use caller supplied ``(v0, gamma0)`` instead of zeros
    trace_level : ``"none"``, ``"residuals"`` or ``"full"`` (iterates too)
    relative : scale ``eps`` by ``max(1, ||v||^2)`` and ``max(1, ||gamma||^2)``
    """

    rho: float = 1.0
    eps: float = 1e-10
    i_max: int = 4000
    warm_start: bool = False
    trace_level: str = "none"
    relative: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.i_max < 1:
            raise ValueError(f"i_max must be >= 1, got {self.i_max}")
        if self.trace_level not in TRACE_LEVELS:
            raise ValueError(f"trace_level must be one of {TRACE_LEVELS}")


@dataclass
class SolveResult:
    """Outcome of one ADMM solve.  ``timings`` holds seconds per subproblem."""

    z: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    converged: bool
    iterations: int
    objective: float
    kkt: KktResiduals
    timings: dict
    algorithm: str
    trace: dict | None = field(default=None, repr=False)

    @property
    def total_time(self) -> float:
        return sum(self.timings.values())


# --------------------------------------------------------------------------
# Factorizations
# --------------------------------------------------------------------------

class BaselineFactorization:
    """Cholesky factor of ``J + rho K'K``."""

    def __init__(self, p: Cbcqp, rho: float):
        self.rho = rho
        self.matrix = p.J_dense + rho * p.K_dense.T @ p.K_dense
        try:
            self._cf = sla.cho_factor(self.matrix, lower=True)
        except np.linalg.LinAlgError:
            raise FactorizationError("J + rho K'K is not positive definite") from None

    def solve(self, b: np.ndarray) -> np.ndarray:
        return sla.cho_solve(self._cf, b)


def prefactor_baseline(p: Cbcqp, rho: float) -> BaselineFactorization:
    return BaselineFactorization(p, rho)


class ModalFactorization:
    """One Hermitian Cholesky factor of ``J_j + rho K_j^H K_j`` per kept modal index.

    Solves are vectorized across modal slices: a forward and a backward
    substitution, each looping over rows only.
    """

    def __init__(self, mq: ModalQp, rho: float):
        self.rho = rho
        KH = np.conj(np.swapaxes(mq.K_hat, 1, 2))
        self.matrix = mq.J_hat + rho * KH @ mq.K_hat
        L = np.empty_like(self.matrix)
        for j, Mj in enumerate(self.matrix):
            try:
                L[j] = np.linalg.cholesky(0.5 * (Mj + Mj.conj().T))
            except np.linalg.LinAlgError:
                raise FactorizationError(f"modal slice {j} is not positive definite", mode=j) from None
        self.L = L
        self.U = np.ascontiguousarray(np.conj(np.swapaxes(L, 1, 2)))
        self._inv_diag = 1.0 / np.diagonal(L, axis1=1, axis2=2)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve every slice; ``b`` has shape ``(h, k)``."""
        L, U, d = self.L, self.U, self._inv_diag
        k = b.shape[1]
        y = np.empty_like(b, dtype=complex)
        for i in range(k):
            y[:, i] = (b[:, i] - np.einsum("hj,hj->h", L[:, i, :i], y[:, :i])) * d[:, i]
        x = np.empty_like(y)
        dc = np.conj(d)
        for i in range(k - 1, -1, -1):
            x[:, i] = (y[:, i] - np.einsum("hj,hj->h", U[:, i, i + 1:], x[:, i + 1:])) * dc[:, i]
        return x


def prefactor_modal(mq: ModalQp, rho: float) -> ModalFactorization:
    return ModalFactorization(mq, rho)


# --------------------------------------------------------------------------
# Iterations
# --------------------------------------------------------------------------

class _Admm:
    algorithm = ""

    def __init__(self, p: Cbcqp, cfg: SolverConfig):
        self.p = p
        self.cfg = cfg
        self.iteration = 0
        self.converged = False
        self.timings = {"sp1": 0.0, "sp2": 0.0, "sp3": 0.0}
        self.last_deltas = (math.inf, math.inf)
        self.trace = None
        if cfg.trace_level != "none":
            self.trace = {"dv2": [], "dg2": []}
            if cfg.trace_level == "full":
                self.trace.update(z=[], v=[], gamma=[])

    def _start(self, start):
        p = self.p
        if self.cfg.warm_start and start is not None:
            v0, g0 = (np.asarray(a, dtype=float).ravel() for a in start)
            if v0.size != p.nv or g0.size != p.nv:
                raise ValueError("warm start vectors have the wrong length")
            return v0, g0
        return np.zeros(p.nv), np.zeros(p.nv)

    def _converged(self, dv2, dg2):
        eps = self.cfg.eps
        if self.cfg.relative:
            vv, gg = self._sqnorms()
            return dv2 < eps * max(1.0, vv) and dg2 < eps * max(1.0, gg)
        return dv2 < eps and dg2 < eps

    def step(self):
        """Run one ADMM iteration; returns the squared deltas ``(dv2, dg2)``."""
        dv2, dg2 = self._step()
        self.iteration += 1
        self.last_deltas = (dv2, dg2)
        if self.trace is not None:
            self.trace["dv2"].append(dv2)
            self.trace["dg2"].append(dg2)
            if self.cfg.trace_level == "full":
                self._trace_iterates()
        if self._converged(dv2, dg2):
            self.converged = True
        return dv2, dg2

    def run(self) -> SolveResult:
        while not self.converged and self.iteration < self.cfg.i_max:
            self.step()
        return self.result()

    def result(self) -> SolveResult:
        z, v, g = self.iterates()
        trace = None
        if self.trace is not None:
            trace = {k: np.asarray(a) for k, a in self.trace.items()}
        return SolveResult(z=z, v=v, gamma=g, converged=self.converged,
                           iterations=self.iteration, objective=objective_value(self.p, z),
                           kkt=kkt_residuals(self.p, z, v, g, rho=self.cfg.rho),
                           timings=dict(self.timings), algorithm=self.algorithm, trace=trace)

    def _trace_iterates(self):
        z, v, g = self.iterates()
        self.trace["z"].append(z)
        self.trace["v"].append(v)
        self.trace["gamma"].append(g)


class BaselineAdmm(_Admm):
    """ADMM on the dense real problem."""

    algorithm = "baseline"

    def __init__(self, p: Cbcqp, cfg: SolverConfig | None = None, start=None,
                 factor: BaselineFactorization | None = None):
        cfg = cfg or SolverConfig()
        super().__init__(p, cfg)
        if factor is None:
            factor = prefactor_baseline(p, cfg.rho)
        elif factor.rho != cfg.rho:
            raise ValueError("factorization was built for a different rho")
        self.factor = factor
        self.K = p.K_dense
        self.KT = np.ascontiguousarray(self.K.T)
        self.z = np.zeros(p.nz)
        self.v, self.gamma = self._start(start)

    def _step(self):
        rho = self.cfg.rho
        p = self.p
        t0 = time.perf_counter()
        self.z = self.factor.solve(self.KT @ (rho * self.v - self.gamma) - p.q)
        t1 = time.perf_counter()
        Kz = self.K @ self.z
        v = np.clip(Kz + self.gamma / rho, p.v_lo, p.v_hi)
        t2 = time.perf_counter()
        gamma = self.gamma + rho * (Kz - v)
        t3 = time.perf_counter()
        self.timings["sp1"] += t1 - t0
        self.timings["sp2"] += t2 - t1
        self.timings["sp3"] += t3 - t2
        dv, dg = v - self.v, gamma - self.gamma
        self.v, self.gamma = v, gamma
        return float(dv @ dv), float(dg @ dg)

    def _sqnorms(self):
        return float(self.v @ self.v), float(self.gamma @ self.gamma)

    def iterates(self):
        return self.z.copy(), self.v.copy(), self.gamma.copy()


class CirculantAdmm(_Admm):
    """ADMM on the truncated modal problem.

    Modal vectors are kept modal-major, shape ``(n//2 + 1, L)``; the bounds are
    kept block-major, shape ``(n, L)``, so the projection needs no reordering.
    """

    algorithm = "circulant"

    def __init__(self, p: Cbcqp, cfg: SolverConfig | None = None, start=None,
                 mq: ModalQp | None = None, factor: ModalFactorization | None = None):
        cfg = cfg or SolverConfig()
        super().__init__(p, cfg)
        self.mq = mq if mq is not None else transform_qp(p)
        if factor is None:
            factor = prefactor_modal(self.mq, cfg.rho)
        elif factor.rho != cfg.rho:
            raise ValueError("factorization was built for a different rho")
        self.factor = factor
        n = p.n
        self.n = n
        self.Kh = self.mq.K_hat
        self.KhH = np.ascontiguousarray(np.conj(np.swapaxes(self.Kh, 1, 2)))
        self.lo = to_block_major(p.v_lo, n, p.v_layout)
        self.hi = to_block_major(p.v_hi, n, p.v_layout)
        v0, g0 = self._start(start)
        self.zh = np.zeros((n_kept(n), sum(p.z_layout)), dtype=complex)
        self.vh = self._fwd_v(v0)
        self.gh = self._fwd_v(g0)
        if self.trace is not None and cfg.trace_level == "full":
            self.trace.update(dv2_full=[], dg2_full=[])
            self._prev_full = (self.vh, self.gh)

    def _fwd_v(self, x):
        return real_to_truncated(to_block_major(x, self.n, self.p.v_layout), self.n)

    def _inv(self, xh, layout):
        return from_block_major(truncated_to_real(xh, self.n), layout)

    def _step(self):
        rho = self.cfg.rho
        n = self.n
        t0 = time.perf_counter()
        rhs = (self.KhH @ (rho * self.vh - self.gh)[:, :, None])[:, :, 0] - self.mq.q_hat
        self.zh = self.factor.solve(rhs)
        t1 = time.perf_counter()
        Kz = (self.Kh @ self.zh[:, :, None])[:, :, 0]
        w = truncated_to_real(Kz + self.gh / rho, n)
        vh = real_to_truncated(np.clip(w, self.lo, self.hi), n)
        t2 = time.perf_counter()
        gh = self.gh + rho * (Kz - vh)
        t3 = time.perf_counter()
        self.timings["sp1"] += t1 - t0
        self.timings["sp2"] += t2 - t1
        self.timings["sp3"] += t3 - t2
        dv2 = truncated_sqnorm(vh - self.vh, n)
        dg2 = truncated_sqnorm(gh - self.gh, n)
        self.vh, self.gh = vh, gh
        return dv2, dg2

    def _sqnorms(self):
        return truncated_sqnorm(self.vh, self.n), truncated_sqnorm(self.gh, self.n)

    def _trace_iterates(self):
        super()._trace_iterates()
        # full-domain deltas through explicit augmentation, for auditing the norm relation
        layout, n = self.p.v_layout, self.n
        for key, new, old in (("dv2_full", self.vh, self._prev_full[0]),
                              ("dg2_full", self.gh, self._prev_full[1])):
            d = SegmentedVector(from_block_major(new - old, layout), n, layout, MODAL_TRUNCATED)
            self.trace[key].append(float(np.linalg.norm(augment(d).data) ** 2))
        self._prev_full = (self.vh, self.gh)

    def iterates(self):
        p = self.p
        return (self._inv(self.zh, p.z_layout), self._inv(self.vh, p.v_layout),
                self._inv(self.gh, p.v_layout))

    def modal_iterates(self):
        """Current ``(zhat, vhat, gammahat)`` in modal-major truncated form."""
        return self.zh.copy(), self.vh.copy(), self.gh.copy()


def solve_baseline(p: Cbcqp, cfg: SolverConfig | None = None, start=None,
                   factor: BaselineFactorization | None = None) -> SolveResult:
    """Dense ADMM.  ``start = (v0, gamma0)`` is used when ``cfg.warm_start`` is set."""
    return BaselineAdmm(p, cfg, start=start, factor=factor).run()


def solve_circulant(p: Cbcqp, cfg: SolverConfig | None = None, start=None,
                    mq: ModalQp | None = None,
                    factor: ModalFactorization | None = None) -> SolveResult:
    """Fourier-decomposed ADMM; same interface and stopping rule as :func:`solve_baseline`."""
    return CirculantAdmm(p, cfg, start=start, mq=mq, factor=factor).run()


SOLVERS = {"baseline": solve_baseline, "circulant": solve_circulant}


def lockstep(p: Cbcqp, cfg: SolverConfig | None = None, start=None):
    """Run both solvers iteration by iteration from the same start.

    Returns ``(baseline_result, circulant_result, discrepancy)`` where
    ``discrepancy[i]`` is the largest entrywise difference between the two
    ``(z, v, gamma)`` iterates after iteration ``i + 1``.  Stepping stops when
    either solver stops.
    """
    cfg = cfg or SolverConfig()
    a = BaselineAdmm(p, cfg, start=start)
    b = CirculantAdmm(p, cfg, start=start)
    disc = []
    while not (a.converged or b.converged) and a.iteration < cfg.i_max:
        a.step()
        b.step()
        disc.append(max(float(np.max(np.abs(x - y), initial=0.0))
                        for x, y in zip(a.iterates(), b.iterates())))
    return a.result(), b.result(), np.asarray(disc)


# --------------------------------------------------------------------------
# Operation counts
# --------------------------------------------------------------------------

def flop_model(n, N, n_z, log=math.log2) -> dict:
    """Per-iteration operation counts of both solvers (dense inverse, ``n_v = n_z``).

    Works with sympy symbols when ``log`` is a symbolic logarithm.
    """
    base = {
        "sp1": (N * n * n_z) ** 2,
        "sp2": (N * n * n_z) ** 2,
        "sp3": N * n * n_z,
    }
    circ = {
        "sp1": 2 * n * (N * n_z) ** 2,
        "sp2": 2 * n * (N * n_z) ** 2 + 2 * N * n_z * n * log(n),
        "sp3": N * n * n_z,
    }
    base["total"] = base["sp1"] + base["sp2"] + base["sp3"]
    circ["total"] = circ["sp1"] + circ["sp2"] + circ["sp3"]
    return {"baseline": base, "circulant": circ}
