"""Benchmark records and sweeps over problem order for both ADMM solvers."""
from __future__ import annotations

import csv
import dataclasses
import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .admm import SOLVERS, SolverConfig, flop_model
from .mpc import Condenser, ring_of_masses
from .qp import random_cbcqp

COLUMNS = ("experiment", "n", "N", "lz", "alg", "iters", "converged", "t_sp1_ms", "t_sp2_ms",
           "t_sp3_ms", "t_total_ms", "objective", "kkt_max", "seed")
FLOP_COLUMNS = ("flops_sp1", "flops_sp2", "flops_sp3", "flops_total")


@dataclass
class BenchRecord:
    experiment: str
    n: int
    N: int
    lz: int
    alg: str
    iters: int
    converged: bool
    t_sp1_ms: float
    t_sp2_ms: float
    t_sp3_ms: float
    t_total_ms: float
    objective: float
    kkt_max: float
    seed: int
    flops_sp1: float = math.nan
    flops_sp2: float = math.nan
    flops_sp3: float = math.nan
    flops_total: float = math.nan

    def __post_init__(self):
        times = (self.t_sp1_ms, self.t_sp2_ms, self.t_sp3_ms, self.t_total_ms)
        if any(t < 0 for t in times if not math.isnan(t)):
            raise ValueError("timings must be non-negative")

    def to_row(self) -> dict:
        row = dataclasses.asdict(self)
        row["converged"] = int(self.converged)
        for k, v in row.items():
            if isinstance(v, float):
                row[k] = repr(v)
        return row

    @classmethod
    def from_row(cls, row: dict) -> "BenchRecord":
        kw = {}
        for f in dataclasses.fields(cls):
            raw = row[f.name]
            if f.name == "converged":
                kw[f.name] = bool(int(raw))
            elif f.type in ("int", int):
                kw[f.name] = int(raw)
            elif f.type in ("float", float):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = raw
        return cls(**kw)


def write_csv(records: Iterable[BenchRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS + FLOP_COLUMNS)
        w.writeheader()
        for r in records:
            w.writerow(r.to_row())


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        return [BenchRecord.from_row(row) for row in csv.DictReader(fh)]


def _flops(flops) -> list[float]:
    return [float(flops[k]) for k in ("sp1", "sp2", "sp3", "total")]


def _record(experiment, n, N, lz, alg, res, seed, flops) -> BenchRecord:
    t = {k: 1e3 * v for k, v in res.timings.items()}
    return BenchRecord(experiment, n, N, lz, alg, res.iterations, res.converged, t["sp1"],
                       t["sp2"], t["sp3"], t["sp1"] + t["sp2"] + t["sp3"], res.objective,
                       res.kkt.max(), seed, *_flops(flops))


def _failed(experiment, n, N, lz, alg, seed, flops) -> BenchRecord:
    nan = math.nan
    return BenchRecord(experiment, n, N, lz, alg, 0, False, nan, nan, nan, nan, nan, nan, seed,
                       *_flops(flops))


def bench_qp(orders: Sequence[int], segments: Sequence[int] = (10,), repeats: int = 3,
             seed: int = 0, cfg: SolverConfig | None = None,
             algorithms: Sequence[str] = ("baseline", "circulant")) -> list[BenchRecord]:
    """Random CBCQPs of each order; one record per (order, algorithm, repeat).

    Repeat ``r`` uses instance seed ``seed + r``.  Each algorithm gets one
    untimed warm-up solve per order.
    """
    if not orders:
        raise ValueError("orders must be nonempty")
    cfg = cfg or SolverConfig()
    segments = tuple(segments)
    N, lz = len(segments), max(segments)
    records = []
    for n in orders:
        flops = flop_model(n, N, lz)
        warm = random_cbcqp(seed, n, segments)
        for alg in algorithms:
            SOLVERS[alg](warm, dataclasses.replace(cfg, i_max=min(cfg.i_max, 5)))
        for r in range(repeats):
            s = seed + r
            try:
                p = random_cbcqp(s, n, segments)
            except Exception:
                records.extend(_failed("qp", n, N, lz, a, s, flops[a]) for a in algorithms)
                continue
            for alg in algorithms:
                try:
                    res = SOLVERS[alg](p, cfg)
                except Exception:
                    records.append(_failed("qp", n, N, lz, alg, s, flops[alg]))
                    continue
                records.append(_record("qp", n, N, lz, alg, res, s, flops[alg]))
    return records


def random_ring_state(rng: np.random.Generator, n: int, scale: float = 0.3) -> np.ndarray:
    """Angles and rates drawn uniformly from ``[-scale, scale]``."""
    return rng.uniform(-scale, scale, 2 * n)


def bench_ring(orders: Sequence[int], horizon: int = 10, repeats: int = 3, seed: int = 0,
               cfg: SolverConfig | None = None, x0_scale: float = 0.3, ring_kw: dict | None = None,
               algorithms: Sequence[str] = ("baseline", "circulant")):
    """Ring-of-masses MPC at random initial states.

    Returns ``(records, u_discrepancy)`` where ``u_discrepancy[(n, r)]`` is the
    largest difference in the applied input between the algorithms.
    """
    if not orders or min(orders) < 3:
        raise ValueError("ring orders must all be >= 3")
    cfg = cfg or SolverConfig()
    ring_kw = ring_kw or {}
    records, disc = [], {}
    for n in orders:
        mpc = ring_of_masses(n, T=horizon, **ring_kw)
        cond = Condenser(mpc)
        flops = flop_model(n, horizon, mpc.n_u)
        rng = np.random.default_rng([seed, n])
        warm = cond(np.zeros(2 * n))
        for alg in algorithms:
            SOLVERS[alg](warm, dataclasses.replace(cfg, i_max=min(cfg.i_max, 5)))
        for r in range(repeats):
            qp = cond(random_ring_state(rng, n, x0_scale))
            us = []
            for alg in algorithms:
                try:
                    res = SOLVERS[alg](qp, cfg)
                except Exception:
                    records.append(_failed("ring", n, horizon, mpc.n_u, alg, seed, flops[alg]))
                    continue
                records.append(_record("ring", n, horizon, mpc.n_u, alg, res, seed, flops[alg]))
                us.append(res.z[:n * mpc.n_u])
            if len(us) > 1:
                disc[(n, r)] = max(float(np.max(np.abs(u - us[0]))) for u in us[1:])
    return records, disc


def summarize(records: Sequence[BenchRecord]) -> list[dict]:
    """Median timings per (experiment, n, algorithm)."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.experiment, r.n, r.alg), []).append(r)
    out = []
    for (exp, n, alg), rs in sorted(groups.items()):
        ok = [r for r in rs if r.converged] or rs
        med = lambda key: statistics.median(getattr(r, key) for r in ok)  # noqa: E731
        out.append({"experiment": exp, "n": n, "alg": alg, "runs": len(rs),
                    "converged": sum(r.converged for r in rs), "iters": med("iters"),
                    "t_sp1_ms": med("t_sp1_ms"), "t_sp2_ms": med("t_sp2_ms"),
                    "t_sp3_ms": med("t_sp3_ms"), "t_total_ms": med("t_total_ms")})
    return out
