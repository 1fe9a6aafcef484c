import numpy as np
import pytest
from scipy.optimize import minimize

from pass_isac import (ChannelSet, DegenerateBeam, Infeasible, Scenario, SingularFim,
                       SolverFailure, SystemConfig, effective_channels, fim_crb, optimize_beamforming)
from pass_isac.fim import trace_crb_from_channels
from pass_isac.conic import VariableBlock, decode_matrix, encode_matrix, read_sdpa, symmetric_basis, write_sdpa
from pass_isac.experiments import sample_scenario
from pass_isac.geometry import uniform_layout
from pass_isac.sdr import RawSdrSolution, build_sdr, extract_rank_one, solve_sdr

from helpers import random_layout, random_psd


def _setup(seed=1, **kw):
    cfg = SystemConfig(**kw)
    sc = sample_scenario(cfg, seed)
    lay = random_layout(cfg, np.random.default_rng(seed))
    return cfg, sc, effective_channels(lay, sc, cfg)


def _min_power(ch, cfg):
    """Minimum total power meeting every SINR target (uplink-downlink
    duality fixed point; R_s = 0 is optimal for power)."""
    H = ch.h_users / np.sqrt(cfg.sigma0_sq)
    gam = np.asarray(cfg.gamma)
    lam = np.ones(len(gam))
    for _ in range(2000):
        Sigma = np.eye(H.shape[1]) + (H.T * lam) @ H.conj()
        Si = np.linalg.inv(Sigma)
        q = np.real(np.einsum("kn,nm,km->k", H.conj(), Si, H))
        new = 1.0 / ((1 + 1 / gam) * q)
        if np.max(np.abs(new - lam) / lam) < 1e-13:
            lam = new
            break
        lam = new
    return float(lam.sum())


def test_symmetric_basis_roundtrip():
    rng = np.random.default_rng(0)
    for herm in (True, False):
        X = random_psd(rng, 3)
        if not herm:
            X = X.real
        ent = VariableBlock("X", 0, 3, herm)
        assert np.allclose(decode_matrix(encode_matrix(X, herm), ent), X, atol=1e-15)
        assert symmetric_basis(3, herm).shape[0] == ent.n_params


def test_sdpa_roundtrip(tmp_path):
    cfg, sc, ch = _setup()
    prob = build_sdr(ch, sc, cfg).check()
    path = tmp_path / "p.dat-s"
    write_sdpa(prob, path)
    back = read_sdpa(path)
    assert back.n_vars == prob.n_vars and np.array_equal(back.c, prob.c)
    for a, b in zip(prob.blocks, back.blocks):
        assert a.linear == b.linear and a.size == b.size
        assert np.array_equal(a.const, b.const) and np.array_equal(a.coef, b.coef)


def test_single_user_single_feed_has_one_sinr_row():
    cfg, sc, ch = _setup(N=1, K=1)
    prob = build_sdr(ch, sc, cfg)
    assert prob.meta["n_sinr_rows"] == 1
    assert prob.block("linear").size == 2     # one SINR row plus the power row


def test_crb_lmi_is_linear_in_covariance():
    cfg, sc, ch = _setup()
    prob = build_sdr(ch, sc, cfg)
    blk = prob.block("crb_lmi")
    R = random_psd(np.random.default_rng(3), cfg.N)

    def at(Rmat):
        x = np.zeros(prob.n_vars)
        e = prob.entities["Rs"]
        x[e.offset:e.offset + e.n_params] = encode_matrix(Rmat, True)
        return blk.value(x)

    assert np.allclose(at(2 * R) - at(R), at(R), rtol=0, atol=1e-12 * np.abs(at(R)).max())
    # scaled block matches the FIM itself: D J(R P) D
    d = np.array([prob.meta["d1"]] * 2 + [prob.meta["d2"]] * 2)
    J = fim_crb(ch, R * cfg.P, sc.beta, cfg.T, cfg.sigmas_sq).J
    assert np.allclose(at(R), J * np.outer(d, d), rtol=1e-10, atol=1e-12)


def test_epigraph_is_tight_and_solution_is_feasible():
    for seed in range(3):
        cfg, sc, ch = _setup(seed)
        raw = solve_sdr(build_sdr(ch, sc, cfg))
        assert raw.tr_V == pytest.approx(raw.tr_U_inv, rel=1e-6)
        sol = extract_rank_one(raw, ch, sc, cfg)
        assert sol.check(ch, cfg)
        assert sol.objective == pytest.approx(raw.tr_V, rel=1e-5)


def test_extraction_preserves_sinr_covariance_and_objective():
    cfg, sc, ch = _setup(4)
    raw = solve_sdr(build_sdr(ch, sc, cfg))
    sol = extract_rank_one(raw, ch, sc, cfg)
    for k in range(cfg.K):
        h = ch.h_users[k]
        before = np.real(h.conj() @ raw.W_hat[k] @ h)
        after = abs(h.conj() @ sol.W[:, k]) ** 2
        assert after == pytest.approx(before, rel=1e-10)
    assert np.linalg.norm(sol.R - raw.R) <= 1e-10 * np.linalg.norm(raw.R)
    ref = fim_crb(ch, raw.R, sc.beta, cfg.T, cfg.sigmas_sq).trace_crb
    assert sol.objective == pytest.approx(ref, rel=1e-10)


def test_extraction_on_synthetic_relaxed_solution():
    rng = np.random.default_rng(5)
    cfg, sc, ch = _setup(5)
    W_hat = np.array([random_psd(rng, cfg.N, 0.2) for _ in range(cfg.K)])
    raw = RawSdrSolution(U=np.eye(2), V=np.eye(2), W_hat=W_hat, R_s_hat=random_psd(rng, cfg.N, 0.1),
                         tr_V=2.0, gap=0.0, status="optimal")
    sol = extract_rank_one(raw, ch, sc, cfg)
    assert np.linalg.norm(sol.R - raw.R) <= 1e-12 * np.linalg.norm(raw.R)
    assert np.linalg.eigvalsh(sol.R_s).min() >= -1e-12


def test_rank_one_input_is_returned_unchanged():
    rng = np.random.default_rng(6)
    cfg, sc, ch = _setup(6)
    ws = rng.standard_normal((cfg.K, cfg.N)) + 1j * rng.standard_normal((cfg.K, cfg.N))
    W_hat = np.array([np.outer(w, w.conj()) for w in ws])
    raw = RawSdrSolution(U=np.eye(2), V=np.eye(2), W_hat=W_hat, R_s_hat=np.zeros((cfg.N, cfg.N)),
                         tr_V=2.0, gap=0.0, status="optimal")
    sol = extract_rank_one(raw, ch, sc, cfg)
    for k in range(cfg.K):
        ph = sol.W[:, k] @ ws[k].conj() / np.vdot(ws[k], ws[k])
        assert abs(ph) == pytest.approx(1.0, rel=1e-12)
        assert np.allclose(sol.W[:, k], ph * ws[k], rtol=1e-12)
    assert np.allclose(sol.R_s, 0, atol=1e-12 * np.abs(W_hat).max())


def test_beam_orthogonal_to_user_is_degenerate():
    cfg, sc, ch = _setup(7)
    h = ch.h_users[0]
    v = np.zeros(cfg.N, complex)
    v[0], v[1] = h[1].conj(), -h[0].conj()      # v^H h = 0
    W_hat = np.array([np.outer(v, v.conj())] + [np.eye(cfg.N)] * (cfg.K - 1))
    raw = RawSdrSolution(U=np.eye(2), V=np.eye(2), W_hat=W_hat, R_s_hat=np.zeros((cfg.N, cfg.N)),
                         tr_V=2.0, gap=0.0, status="optimal")
    with pytest.raises(DegenerateBeam):
        extract_rank_one(raw, ch, sc, cfg)


@pytest.mark.parametrize("seed", [1, 2])
def test_infeasible_just_below_minimum_power(seed):
    cfg, sc, ch = _setup(seed)
    p_min = _min_power(ch, cfg)
    with pytest.raises(Infeasible):
        optimize_beamforming(ch, sc, cfg.replace(P=0.9 * p_min))
    sol = optimize_beamforming(ch, sc, cfg.replace(P=1.1 * p_min))
    assert sol.check(ch, cfg.replace(P=1.1 * p_min))


def test_single_feed_cannot_localise():
    # one feed: the scalar channel is absorbed by beta, only the angle is seen
    cfg, sc, ch = _setup(8, N=1, K=0)
    f = fim_crb(ch, np.array([[cfg.P]]), sc.beta, cfg.T, cfg.sigmas_sq)
    ev = np.linalg.eigvalsh(np.linalg.inv(f.crb))
    assert ev[0] <= 1e-8 * ev[1]
    with pytest.raises((SingularFim, SolverFailure)):
        optimize_beamforming(ch, sc, cfg)


def _direct_sensing_optimum(ch, sc, cfg, starts=8):
    """min tr(CRB) over R = P G G^H / tr(G G^H) by quasi-Newton search."""
    N = cfg.N
    rng = np.random.default_rng(0)

    def f(v):
        G = (v[:N * N] + 1j * v[N * N:]).reshape(N, N)
        R = G @ G.conj().T
        R = cfg.P * R / np.real(np.trace(R))
        return np.log(trace_crb_from_channels(ch, R, sc.beta, cfg.T, cfg.sigmas_sq))

    best = min((minimize(f, rng.standard_normal(2 * N * N), method="BFGS",
                         options={"gtol": 1e-10}) for _ in range(starts)), key=lambda r: r.fun)
    return float(np.exp(best.fun))


def test_sensing_only_matches_direct_search_and_uses_full_power():
    cfg, sc, ch = _setup(8, N=2, K=0)
    sol = optimize_beamforming(ch, sc, cfg)
    ref = _direct_sensing_optimum(ch, sc, cfg)
    assert sol.objective == pytest.approx(ref, rel=1e-5)
    assert sol.power == pytest.approx(cfg.P, rel=1e-6)
    assert sol.W.shape == (2, 0)


def test_vanishing_sinr_targets_recover_sensing_only_value():
    cfg, sc, _ = _setup(9)
    lay = uniform_layout(cfg)
    free = cfg.replace(K=0)
    sc0 = Scenario(np.zeros((0, 2)), sc.target, sc.beta)
    a = optimize_beamforming(effective_channels(lay, sc0, free), sc0, free).objective
    weak = cfg.replace(gamma=(1e-7,) * cfg.K)
    b = optimize_beamforming(effective_channels(lay, sc, weak), sc, weak).objective
    assert b == pytest.approx(a, rel=1e-4)


def test_objective_non_increasing_in_power():
    cfg, sc, ch = _setup(10)
    vals = [optimize_beamforming(ch, sc, cfg.replace(P=p)).objective for p in (0.25, 0.5, 1.0, 2.0)]
    assert all(b <= a * (1 + 1e-8) for a, b in zip(vals, vals[1:]))


def test_real_instance_same_value_with_and_without_embedding():
    rng = np.random.default_rng(11)
    cfg = SystemConfig(N=3, K=2, M_r=4, gamma=(2.0, 2.0))
    N, s = cfg.N, 3e-4
    real = lambda *shape: s * rng.standard_normal(shape)
    ch = ChannelSet(h_users=real(2, N), h_target=real(N), H_per_pa=np.zeros((1, N, 2)),
                    steer=np.ones(cfg.M_r), theta=0.0, dtheta=np.zeros(2),
                    dh_target_dx=real(N) * 30, dh_target_dy=real(N) * 30,
                    dsteer_dx=np.linspace(0, 1, cfg.M_r), dsteer_dy=np.linspace(1, 0, cfg.M_r))
    sc = Scenario(np.zeros((2, 2)), np.array([10.0, 0.0]), 1e-3)
    a = solve_sdr(build_sdr(ch, sc, cfg, embed=True)).tr_V
    b = solve_sdr(build_sdr(ch, sc, cfg, embed=False)).tr_V
    assert a == pytest.approx(b, rel=1e-6)
