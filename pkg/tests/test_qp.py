import json

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from circadmm.circulant import BlockCirculant, ModalBlocks, n_kept, real_to_truncated
from circadmm.qp import (ProblemError, cbcqp_from_dict, cbcqp_to_dict, from_block_major,
                         kkt_residuals, load_cbcqp, modal_to_segmented, objective_value,
                         objective_value_modal, random_cbcqp, save_cbcqp, segmented_to_modal,
                         split_dual, to_block_major, transform_qp, validate_cbcqp)

from oracles import active_set_qp, diagonal_blocks, off_block_max, psi

THREE_BY_FOUR = (4, 4, 4)


def scalar_qp(J=2.0, K=1.0, q=0.0, lo=-1.0, hi=1.0):
    return validate_cbcqp([[[J]]], [[[K]]], [q], [lo], [hi], (1,), (1,), 1)


def modal_major_perm(n, layout):
    """Row order that groups modal index ``j`` of every segment together."""
    off = np.concatenate([[0], np.cumsum([n * l for l in layout])])
    return np.array([off[s] + j * l + i for j in range(n) for s, l in enumerate(layout)
                     for i in range(l)])


# --- validation -----------------------------------------------------------

def test_scalar_problem_valid():
    p = scalar_qp()
    assert (p.n, p.nz, p.nv) == (1, 1, 1)
    assert p.J_dense.tolist() == [[2.0]]


def test_three_by_four_layout_accepted():
    p = random_cbcqp(3, 4, (4, 4, 4))
    assert p.z_layout == p.v_layout == THREE_BY_FOUR
    assert p.nz == p.nv == 48
    assert len(p.J) == len(p.K) == 3


def test_nonsymmetric_J_rejected():
    J = [[BlockCirculant([2.0, 1.0, 0.0])]]
    with pytest.raises(ProblemError, match="symmetric"):
        validate_cbcqp(J, [[np.eye(3)]], np.zeros(3), -np.ones(3), np.ones(3), (1,), (1,), 3)


def test_indefinite_J_rejected():
    with pytest.raises(ProblemError, match="positive definite"):
        scalar_qp(J=-1.0)


def test_inverted_bounds_rejected():
    with pytest.raises(ProblemError):
        scalar_qp(lo=1.0, hi=-1.0)
    with pytest.raises(ProblemError):
        scalar_qp(lo=np.nan)


def test_dimension_mismatch_rejected():
    with pytest.raises(ProblemError):
        validate_cbcqp([[np.ones((2, 1, 1))]], [[[1.0]]], [0.0], [-1.0], [1.0], (1,), (1,), 1)
    with pytest.raises(ProblemError):
        validate_cbcqp([[[2.0]]], [[[1.0]]], [0.0, 1.0], [-1.0], [1.0], (1,), (1,), 1)
    with pytest.raises(ProblemError):
        validate_cbcqp([[[2.0]]], [[[1.0]], [[1.0]]], [0.0], [-1.0], [1.0], (1,), (1,), 1)


def test_dense_non_circulant_block_rejected():
    M = np.diag([2.0, 3.0])
    with pytest.raises(ProblemError, match="block circulant"):
        validate_cbcqp([[M]], [[np.eye(2)]], np.zeros(2), -np.ones(2), np.ones(2), (1,), (1,), 2)


# --- generator ------------------------------------------------------------

def test_generator_deterministic():
    a, b = random_cbcqp(7, 4, THREE_BY_FOUR), random_cbcqp(7, 4, THREE_BY_FOUR)
    for x, y in ((a.J_dense, b.J_dense), (a.K_dense, b.K_dense), (a.q, b.q), (a.v_lo, b.v_lo),
                 (a.v_hi, b.v_hi)):
        assert np.array_equal(x, y)
    assert not np.array_equal(a.q, random_cbcqp(8, 4, THREE_BY_FOUR).q)


@pytest.mark.parametrize("seed", range(10))
def test_generator_witness_feasible(seed):
    p = random_cbcqp(seed, 1 + seed % 6, (2, 3), (1, 2, 2))
    Kz = p.K_dense @ p.witness
    assert np.all(p.v_lo < Kz) and np.all(Kz < p.v_hi)


def test_generator_empty_layout():
    with pytest.raises(ProblemError):
        random_cbcqp(0, 3, ())


# --- layout helpers -------------------------------------------------------

def test_block_major_round_trip():
    x = np.arange(15.0)
    X = to_block_major(x, 3, (2, 3))
    assert X.shape == (3, 5)
    assert X[1].tolist() == [2, 3, 9, 10, 11]
    assert np.array_equal(from_block_major(X, (2, 3)), x)


def test_modal_layout_round_trip():
    rng = np.random.default_rng(0)
    xh = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    assert np.array_equal(segmented_to_modal(modal_to_segmented(xh, (2, 3)), 5, (2, 3)), xh)


# --- transformed problem --------------------------------------------------

def test_transform_n1_identical():
    p = random_cbcqp(1, 1, (2, 3), (2,))
    mq = transform_qp(p)
    np.testing.assert_allclose(mq.J_hat[0], p.J_dense, atol=1e-15)
    np.testing.assert_allclose(mq.K_hat[0], p.K_dense, atol=1e-15)
    np.testing.assert_allclose(mq.q_hat[0], p.q, atol=1e-15)


def test_flat_spectrum_slices_identical():
    rng = np.random.default_rng(2)
    n = 5
    b0 = rng.standard_normal((3, 3))
    b0 = b0 @ b0.T + np.eye(3)
    blocks = np.zeros((n, 3, 3))
    blocks[0] = b0
    K = np.zeros((n, 2, 3))
    K[0] = rng.standard_normal((2, 3))
    p = validate_cbcqp([[blocks]], [[K]], rng.standard_normal(3 * n), -np.ones(2 * n),
                       np.ones(2 * n), (3,), (2,), n)
    mq = transform_qp(p)
    for j in range(n_kept(n)):
        np.testing.assert_allclose(mq.J_hat[j], b0, atol=1e-14)
        np.testing.assert_allclose(mq.K_hat[j], K[0], atol=1e-14)


@pytest.mark.parametrize("n", [2, 5, 6, 8])
def test_transform_matches_dense_congruence(n):
    z_layout, v_layout = (2, 1, 3), (1, 2)
    p = random_cbcqp(n, n, z_layout, v_layout)
    mq = transform_qp(p)
    Pz, Pv = psi(n, z_layout), psi(n, v_layout)
    Jt = Pz.conj().T @ p.J_dense @ Pz
    Kt = Pv.conj().T @ p.K_dense @ Pz
    # regroup modal-major; the result is block diagonal with blocks J_j, K_j
    pz, pv = modal_major_perm(n, z_layout), modal_major_perm(n, v_layout)
    Jm, Km = Jt[np.ix_(pz, pz)], Kt[np.ix_(pv, pz)]
    Lz, Lv = sum(z_layout), sum(v_layout)
    assert off_block_max(Jm, n, Lz, Lz) < 1e-10
    assert off_block_max(Km, n, Lv, Lz) < 1e-10
    Jd, Kd = diagonal_blocks(Jm, n, Lz, Lz), diagonal_blocks(Km, n, Lv, Lz)
    h = n_kept(n)
    np.testing.assert_allclose(mq.J_hat, Jd[:h], atol=1e-10)
    np.testing.assert_allclose(mq.K_hat, Kd[:h], atol=1e-10)
    qt = (Pz.conj().T @ p.q)[pz].reshape(n, Lz)
    np.testing.assert_allclose(mq.q_hat, qt[:h], atol=1e-12)


@pytest.mark.parametrize("n", [3, 4, 7])
def test_modal_slices_hermitian_pd_and_real_self_conjugate(n):
    mq = transform_qp(random_cbcqp(0, n, (2, 2)))
    for j, Jj in enumerate(mq.J_hat):
        np.testing.assert_allclose(Jj, Jj.conj().T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(Jj)) > 0
    assert np.max(np.abs(mq.J_hat[0].imag)) < 1e-10
    if n % 2 == 0:
        assert np.max(np.abs(mq.J_hat[n // 2].imag)) < 1e-10


def test_data_level_round_trip():
    # augmenting the modal slices and undoing the congruence recovers J, K, q
    n, z_layout, v_layout = 5, (2, 1), (3,)
    p = random_cbcqp(4, n, z_layout, v_layout)
    mq = transform_qp(p)
    Pz, Pv = psi(n, z_layout), psi(n, v_layout)
    pz, pv = modal_major_perm(n, z_layout), modal_major_perm(n, v_layout)
    Jfull = ModalBlocks(n, mq.J_hat).full()
    Kfull = ModalBlocks(n, mq.K_hat).full()
    Jm, Km = sla.block_diag(*Jfull), sla.block_diag(*Kfull)
    Jt = np.empty_like(Jm)
    Jt[np.ix_(pz, pz)] = Jm
    Kt = np.empty_like(Km)
    Kt[np.ix_(pv, pz)] = Km
    np.testing.assert_allclose(Pz @ Jt @ Pz.conj().T, p.J_dense, atol=1e-10)
    np.testing.assert_allclose(Pv @ Kt @ Pz.conj().T, p.K_dense, atol=1e-10)


def test_indefinite_transport():
    # J is PD iff every modal slice is Hermitian PD: perturb one mode to break it
    n = 5
    blocks = np.zeros((n, 1, 1))
    blocks[0], blocks[1], blocks[4] = 1.0, 0.7, 0.7  # nu_j = 1 + 1.4 cos(2 pi j / 5)
    nu = 1 + 1.4 * np.cos(2 * np.pi * np.arange(3) / 5)
    assert nu.min() < 0
    with pytest.raises(ProblemError):
        validate_cbcqp([[blocks]], [[np.eye(n)]], np.zeros(n), -np.ones(n), np.ones(n),
                       (1,), (1,), n)


# --- objective ------------------------------------------------------------

def test_objective_zero():
    p = random_cbcqp(0, 3, (2,))
    assert objective_value(p, np.zeros(p.nz)) == 0.0


def test_objective_scalar():
    assert objective_value(scalar_qp(J=2.0, q=3.0), [1.0]) == 4.0


@pytest.mark.parametrize("n", [1, 4, 5])
def test_objective_modal_agrees(n):
    p = random_cbcqp(n, n, (2, 3))
    mq = transform_qp(p)
    z = np.random.default_rng(n).standard_normal(p.nz)
    zh = real_to_truncated(to_block_major(z, n, p.z_layout), n)
    assert abs(objective_value(p, z) - objective_value_modal(mq, zh)) < 1e-10


# --- KKT residuals --------------------------------------------------------

def test_kkt_unconstrained_interior():
    p = random_cbcqp(5, 4, (2,))
    z = -np.linalg.solve(p.J_dense, p.q)
    v = p.K_dense @ z
    wide = validate_cbcqp(p.J, p.K, p.q, v - 1, v + 1, p.z_layout, p.v_layout, p.n)
    r = kkt_residuals(wide, z, v, np.zeros(p.nv))
    assert r.max() < 1e-10


def test_kkt_zero_point_reports_q():
    p = random_cbcqp(6, 3, (2,), (2,))
    wide = validate_cbcqp(p.J, p.K, p.q, -np.ones(p.nv), np.ones(p.nv), p.z_layout,
                          p.v_layout, p.n)
    r = kkt_residuals(wide, np.zeros(p.nz), np.zeros(p.nv), np.zeros(p.nv))
    assert r.stationarity == pytest.approx(np.max(np.abs(p.q)), abs=0)
    assert r.primal_eq == r.bound_viol == r.comp_slack == r.dual_feas == 0.0


def test_kkt_fields_nonnegative_and_detect_errors():
    p = scalar_qp(J=2.0, q=-2.0, lo=-10.0, hi=0.25)
    r = kkt_residuals(p, [0.25], [0.25], [1.5])
    assert r.max() < 1e-15
    r = kkt_residuals(p, [0.5], [0.5], [0.0], lam_hi=[0.0], lam_lo=[-1.0])
    assert r.bound_viol == 0.25 and r.dual_feas == 1.0 and r.stationarity > 0
    assert all(getattr(r, f) >= 0 for f in ("primal_eq", "bound_viol", "stationarity",
                                            "comp_slack", "dual_feas"))
    assert str(r.dual_feas) != "-0.0"


def test_kkt_infinite_bounds():
    p = scalar_qp(J=2.0, q=-2.0, lo=-np.inf, hi=np.inf)
    assert kkt_residuals(p, [1.0], [1.0], [0.0]).max() == 0.0
    # a multiplier on a bound that can never be active is itself the residual
    assert kkt_residuals(p, [1.0], [1.0], [1e-3]).comp_slack == pytest.approx(1e-3)


def test_kkt_dimension_mismatch():
    with pytest.raises(ProblemError):
        kkt_residuals(scalar_qp(), [0.0, 1.0], [0.0], [0.0])


def test_split_dual():
    hi, lo = split_dual(np.array([1.5, -2.0, 0.0]))
    assert hi.tolist() == [1.5, 0.0, 0.0] and lo.tolist() == [0.0, 2.0, 0.0]


@pytest.mark.parametrize("seed", range(4))
def test_active_set_oracle_satisfies_kkt(seed):
    p = random_cbcqp(100 + seed, 2, (1,), (1,))
    # shrink the box so some bounds bind
    mid = 0.5 * (p.v_lo + p.v_hi)
    tight = validate_cbcqp(p.J, p.K, 3 * p.q, mid - 0.05, mid + 0.05, p.z_layout,
                           p.v_layout, p.n)
    z, v, g = active_set_qp(tight.J_dense, tight.K_dense, tight.q, tight.v_lo, tight.v_hi)
    assert kkt_residuals(tight, z, v, g).max() < 1e-8


# --- JSON -----------------------------------------------------------------

def test_json_round_trip(tmp_path):
    p = random_cbcqp(2, 3, (2, 1), (1,))
    lo = p.v_lo.copy()
    lo[0] = -np.inf
    p = validate_cbcqp(p.J, p.K, p.q, lo, p.v_hi, p.z_layout, p.v_layout, p.n)
    path = tmp_path / "p.json"
    save_cbcqp(p, path)
    d = json.loads(path.read_text())
    assert d["v_lo"][0] is None
    assert set(d) == {"version", "n", "z_layout", "v_layout", "J", "K", "q", "v_lo", "v_hi"}
    back = load_cbcqp(path)
    for a, b in ((p.J_dense, back.J_dense), (p.K_dense, back.K_dense), (p.q, back.q),
                 (p.v_lo, back.v_lo), (p.v_hi, back.v_hi)):
        assert np.array_equal(a, b)


def test_json_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ProblemError, match="invalid JSON"):
        load_cbcqp(bad)
    d = cbcqp_to_dict(scalar_qp())
    del d["K"]
    with pytest.raises(ProblemError):
        cbcqp_from_dict(d)
    d = cbcqp_to_dict(scalar_qp())
    d["version"] = 99
    with pytest.raises(ProblemError, match="version"):
        cbcqp_from_dict(d)


# --- properties -----------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(1, 9),
       layout=st.lists(st.integers(1, 3), min_size=1, max_size=3))
def test_pd_transport_on_random_instances(seed, n, layout):
    p = random_cbcqp(seed, n, layout)
    mq = transform_qp(p)
    lam = min(np.min(np.linalg.eigvalsh(0.5 * (Jj + Jj.conj().T))) for Jj in mq.J_hat)
    assert lam > 0
    assert abs(lam - np.min(np.linalg.eigvalsh(p.J_dense))) < 1e-10 * np.abs(p.J_dense).max()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), n=st.integers(1, 9))
def test_objective_cross_domain(seed, n):
    p = random_cbcqp(seed, n, (2, 1))
    z = np.random.default_rng(seed).standard_normal(p.nz)
    zh = real_to_truncated(to_block_major(z, n, p.z_layout), n)
    f = objective_value(p, z)
    assert abs(f - objective_value_modal(transform_qp(p), zh)) < 1e-10 * max(1.0, abs(f))
