import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circadmm import bench
from circadmm.admm import SOLVERS, SolverConfig
from circadmm.bench import COLUMNS, FLOP_COLUMNS, BenchRecord, read_csv, write_csv
from circadmm.cli import main
from circadmm.mpc import lqr_gain, ring_of_masses
from circadmm.qp import load_cbcqp, save_cbcqp, validate_cbcqp

TIMING = {"t_sp1_ms", "t_sp2_ms", "t_sp3_ms", "t_total_ms"}


def rows_without_timing(path):
    with open(path, newline="") as fh:
        return [{k: v for k, v in r.items() if k not in TIMING} for r in csv.DictReader(fh)]


# --- records --------------------------------------------------------------

def test_negative_timing_rejected():
    with pytest.raises(ValueError):
        BenchRecord("qp", 4, 1, 10, "baseline", 3, True, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)


finite = st.floats(allow_nan=False, allow_infinity=False)
times = st.floats(min_value=0, max_value=1e6) | st.just(math.nan)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 1000), iters=st.integers(0, 4000), conv=st.booleans(), t=times,
       obj=finite | st.just(math.nan), kkt=st.floats(min_value=0) | st.just(math.nan),
       alg=st.sampled_from(["baseline", "circulant"]), seed=st.integers(0, 2 ** 31))
def test_csv_round_trip_lossless(tmp_path_factory, n, iters, conv, t, obj, kkt, alg, seed):
    rec = BenchRecord("qp", n, 1, 10, alg, iters, conv, t, t, t, t, obj, kkt, seed, 1.0, 2.5,
                      3.0, 6.5)
    path = tmp_path_factory.mktemp("csv") / "r.csv"
    write_csv([rec], path)
    back = read_csv(path)[0]
    for f in BenchRecord.__dataclass_fields__:
        a, b = getattr(rec, f), getattr(back, f)
        assert (isinstance(a, float) and math.isnan(a) and math.isnan(b)) or a == b
        assert type(a) is type(b)


def test_csv_columns(tmp_path):
    path = tmp_path / "r.csv"
    write_csv(bench.bench_qp([2], repeats=1), path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    assert tuple(header) == COLUMNS + FLOP_COLUMNS
    assert COLUMNS == ("experiment", "n", "N", "lz", "alg", "iters", "converged", "t_sp1_ms",
                       "t_sp2_ms", "t_sp3_ms", "t_total_ms", "objective", "kkt_max", "seed")


# --- sweeps ---------------------------------------------------------------

def test_bench_qp_defaults_and_determinism(tmp_path):
    a = bench.bench_qp([3, 4], repeats=2, seed=5)
    b = bench.bench_qp([3, 4], repeats=2, seed=5)
    assert len(a) == 2 * 2 * 2
    assert all(r.N == 1 and r.lz == 10 for r in a)
    write_csv(a, tmp_path / "a.csv")
    write_csv(b, tmp_path / "b.csv")
    assert rows_without_timing(tmp_path / "a.csv") == rows_without_timing(tmp_path / "b.csv")
    assert {r.seed for r in a} == {5, 6}


def test_bench_qp_records_failures(monkeypatch):
    def broken(p, cfg):
        raise np.linalg.LinAlgError("boom")

    monkeypatch.setitem(SOLVERS, "circulant", broken)
    with pytest.raises(np.linalg.LinAlgError):
        bench.bench_qp([3], repeats=1)  # the warm-up is not guarded

    calls = {"n": 0}

    def flaky(p, cfg):
        calls["n"] += 1
        if calls["n"] > 1:
            raise np.linalg.LinAlgError("boom")
        return SOLVERS["baseline"](p, cfg)

    monkeypatch.setitem(SOLVERS, "circulant", flaky)
    recs = bench.bench_qp([3], repeats=2)
    bad = [r for r in recs if r.alg == "circulant"]
    assert len(bad) == 2 and not any(r.converged for r in bad)
    assert all(math.isnan(r.t_total_ms) for r in bad)
    assert all(r.converged for r in recs if r.alg == "baseline")


def test_bench_qp_rejects_empty():
    with pytest.raises(ValueError):
        bench.bench_qp([])


def test_bench_ring():
    recs, disc = bench.bench_ring([3, 5], repeats=2, seed=1)
    assert len(recs) == 8 and all(r.converged for r in recs)
    assert all(r.N == 10 and r.lz == 1 for r in recs)
    assert 5 <= np.mean([r.iters for r in recs]) <= 100
    assert max(disc.values()) < 1e-6
    with pytest.raises(ValueError):
        bench.bench_ring([2])


def test_summarize_medians():
    mk = lambda t: BenchRecord("qp", 4, 1, 10, "baseline", 10, True, t, t, t, 3 * t, 0.0, 0.0, 0)  # noqa: E731
    (s,) = bench.summarize([mk(1.0), mk(5.0), mk(2.0)])
    assert s["t_sp1_ms"] == 2.0 and s["t_total_ms"] == 6.0 and s["runs"] == 3


# --- CLI: gen and solve ---------------------------------------------------

def test_gen_three_by_four_layout_and_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["gen", "--seed", "7", "--n", "4", "--segments", "3x4", "--out", str(a)]) == 0
    assert main(["gen", "--seed", "7", "--n", "4", "--segments", "3x4", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    d = json.loads(a.read_text())
    assert d["z_layout"] == d["v_layout"] == [4, 4, 4] and d["n"] == 4


def test_gen_rejects_zero_order(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--seed", "7", "--n", "0", "--out", str(tmp_path / "x.json")])
    assert exc.value.code != 0
    assert "positive" in capsys.readouterr().err


def test_gen_unwritable_path(tmp_path, capsys):
    assert main(["gen", "--n", "2", "--out", str(tmp_path / "missing" / "x.json")]) == 1
    assert "missing" in capsys.readouterr().err


def test_solve_scalar_toy(tmp_path):
    p = validate_cbcqp([[[2.0]]], [[[1.0]]], [-2.0], [-10.0], [10.0], (1,), (1,), 1)
    save_cbcqp(p, tmp_path / "p.json")
    out = tmp_path / "r.json"
    assert main(["solve", str(tmp_path / "p.json"), "--algorithm", "baseline", "--out",
                 str(out)]) == 0
    r = json.loads(out.read_text())
    assert r["converged"] and abs(r["z"][0] - 1.0) < 1e-4
    assert set(r) >= {"z", "v", "gamma", "iterations", "objective", "kkt", "timings_ms"}


def test_solve_both_reports_discrepancy(tmp_path):
    main(["gen", "--seed", "3", "--n", "5", "--segments", "2x3", "--out",
          str(tmp_path / "p.json")])
    out = tmp_path / "r.json"
    assert main(["solve", str(tmp_path / "p.json"), "--algorithm", "both", "--out",
                 str(out)]) == 0
    r = json.loads(out.read_text())
    assert r["max_discrepancy"] < 1e-8
    assert r["results"]["baseline"]["iterations"] == r["results"]["circulant"]["iterations"]


def test_solve_iteration_cap_exit_code(tmp_path, capsys):
    main(["gen", "--n", "3", "--out", str(tmp_path / "p.json")])
    assert main(["solve", str(tmp_path / "p.json"), "--imax", "2"]) == 2
    assert json.loads(capsys.readouterr().out)["converged"] is False


def test_solve_bad_inputs(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{oops")
    assert main(["solve", str(bad)]) == 1
    assert "invalid JSON" in capsys.readouterr().err
    bad.write_text(json.dumps({"version": 1, "n": 1}))
    assert main(["solve", str(bad)]) == 1
    assert main(["solve", str(tmp_path / "nope.json")]) == 1
    # structurally valid JSON but an indefinite J
    p = {"version": 1, "n": 1, "z_layout": [1], "v_layout": [1], "J": [[{"blocks": [[[-1.0]]]}]],
         "K": [[{"blocks": [[[1.0]]]}]], "q": [0.0], "v_lo": [-1.0], "v_hi": [1.0]}
    bad.write_text(json.dumps(p))
    assert main(["solve", str(bad)]) == 1
    assert "positive definite" in capsys.readouterr().err


def test_solve_preserves_infinite_bounds(tmp_path):
    p = validate_cbcqp([[[2.0]]], [[[1.0]]], [-2.0], [-np.inf], [np.inf], (1,), (1,), 1)
    save_cbcqp(p, tmp_path / "p.json")
    assert np.isinf(load_cbcqp(tmp_path / "p.json").v_hi[0])
    assert main(["solve", str(tmp_path / "p.json"), "--out", str(tmp_path / "r.json")]) == 0


# --- CLI: benchmarks ------------------------------------------------------

def test_cli_bench_qp(tmp_path, capsys):
    out = tmp_path / "q.csv"
    assert main(["bench-qp", "--orders", "2,3", "--repeats", "1", "--out", str(out)]) == 0
    recs = read_csv(out)
    assert {(r.n, r.alg) for r in recs} == {(2, "baseline"), (2, "circulant"), (3, "baseline"),
                                            (3, "circulant")}
    assert "total_ms" in capsys.readouterr().out


def test_cli_bench_ring(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["bench-ring", "--orders", "3,4", "--repeats", "1", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "mean iterations per problem" in text
    assert "max input discrepancy" in text
    assert main(["bench-ring", "--orders", "2", "--out", str(out)]) == 1


def test_cli_same_flags_same_non_timing_columns(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        main(["bench-ring", "--orders", "3", "--repeats", "2", "--seed", "4", "--out", str(path)])
    assert rows_without_timing(a) == rows_without_timing(b)


# --- CLI: closed loop -----------------------------------------------------

def read_loop(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_closed_loop_zero_state(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["closed-loop", "--n", "4", "--steps", "5", "--x0-scale", "0", "--out",
                 str(out)]) == 0
    rows = read_loop(out)
    assert len(rows) == 5
    for r in rows:
        assert all(float(r[k]) == 0.0 for k in r if k[0] in "xu")


def test_closed_loop_matches_lqr_rollout(tmp_path):
    out = tmp_path / "c.csv"
    n = 4
    assert main(["closed-loop", "--n", str(n), "--steps", "10", "--x0-scale", "0.05",
                 "--angle-bound", "1e6", "--torque-bound", "1e6", "--eps", "1e-14", "--seed", "2",
                 "--out", str(out)]) == 0
    rows = read_loop(out)
    mpc = ring_of_masses(n)
    K = lqr_gain(mpc)
    x = np.array([float(rows[0][f"x{i}"]) for i in range(2 * n)])
    for r in rows:
        u = np.array([float(r[f"u{i}"]) for i in range(n)])
        xr = np.array([float(r[f"x{i}"]) for i in range(2 * n)])
        assert np.max(np.abs(xr - x)) < 1e-6
        assert np.max(np.abs(u + K @ x)) < 1e-6
        assert not any(int(r[f"active{i}"]) for i in range(3 * n))
        x = mpc.A @ x + mpc.B @ (-K @ x)


def test_closed_loop_tight_inputs(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["closed-loop", "--n", "5", "--steps", "6", "--torque-bound", "0.02", "--out",
                 str(out)]) == 0
    rows = read_loop(out)
    slack = math.sqrt(SolverConfig().eps) / SolverConfig().rho
    for r in rows:
        assert all(abs(float(r[f"u{i}"])) <= 0.02 + slack for i in range(5))
    assert any(int(r[f"active{2 * 5 + i}"]) for r in rows for i in range(5))


def test_closed_loop_failure_keeps_partial_log(tmp_path, capsys):
    out = tmp_path / "c.csv"
    code = main(["closed-loop", "--n", "4", "--steps", "5", "--imax", "3", "--out", str(out)])
    assert code != 0
    assert "did not converge" in capsys.readouterr().err
    assert out.read_text().startswith("t,iterations,x0")


def test_closed_loop_small_ring_rejected(tmp_path):
    assert main(["closed-loop", "--n", "2", "--out", str(tmp_path / "c.csv")]) == 1


def test_module_entry_point(tmp_path):
    out = tmp_path / "p.json"
    r = subprocess.run([sys.executable, "-m", "circadmm", "gen", "--n", "2", "--out", str(out)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and out.exists()
