"""Digital beamforming: SDR of the CRB-minimisation subproblem.

For fixed PA positions the design variables are the relaxed beamformer
covariances ``W_k`` and the sensing covariance ``R_s``. ``tr(CRB)`` is
bounded through an auxiliary ``U`` with the LMI

    [[J11(R) - U, J12(R)], [J12(R)^T, J22(R)]] >= 0,   R = sum_k W_k + R_s

and ``tr(U^{-1})`` is replaced by ``tr(V)`` under ``[[V, I], [I, U]] >= 0``.
Internally the program is scaled: covariances by the power budget, the
positional FIM rows by ``d1`` and the nuisance rows by ``d2`` (a congruence
that keeps the LMI equivalent but well conditioned).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .conic import (ConicProblem, LmiBlock, VariableBlock, decode_matrix, real_embedding,
                    solve_conic, symmetric_basis)
from .errors import DegenerateBeam, SingularFim, SolverFailure
from .fim import fim_crb, fim_functionals
from .geometry import ChannelSet, Scenario, sinr

# SINR rows are built at gamma * (1 + margin): interior-point iterates may
# violate a normalised row by ~1e-6 relative, which the re-check would reject
SINR_MARGIN = 1e-5


@dataclass
class RawSdrSolution:
    U: np.ndarray
    V: np.ndarray
    W_hat: np.ndarray       # (K, N, N)
    R_s_hat: np.ndarray     # (N, N)
    tr_V: float
    gap: float
    status: str

    @property
    def R(self) -> np.ndarray:
        return self.W_hat.sum(axis=0) + self.R_s_hat

    @property
    def tr_U_inv(self) -> float:
        return float(np.trace(np.linalg.inv(self.U)))


@dataclass
class BeamformingSolution:
    W: np.ndarray           # (N, K) beamformers as columns
    R_s: np.ndarray         # (N, N)
    objective: float        # tr(CRB) at R, m^2
    sinr: np.ndarray = field(default=None)
    power: float = None

    @property
    def R(self) -> np.ndarray:
        return self.W @ self.W.conj().T + self.R_s

    def check(self, ch: ChannelSet, cfg: SystemConfig, rtol: float = 1e-6) -> bool:
        """Re-derive SINR and power from scratch and test the constraints."""
        s = sinr(ch.H, self.W, self.R_s, cfg.sigma0_sq)
        gam = np.asarray(cfg.gamma)
        power = float(np.real(np.trace(self.R)))
        ev = np.linalg.eigvalsh(self.R_s)
        psd_ok = ev.min() >= -1e-8 * max(np.trace(self.R_s).real, 0.0) - 1e-12
        return bool(np.all(s >= gam * (1 - rtol)) and power <= cfg.P * (1 + rtol) and psd_ok)


def _coeffs(M: np.ndarray, E: np.ndarray) -> np.ndarray:
    """``Re tr(M E_p)`` for every basis matrix ``E_p``."""
    return np.real(np.einsum("ij,pji->p", M, E))


def build_sdr(ch: ChannelSet, scenario: Scenario, cfg: SystemConfig, embed: bool = True) -> ConicProblem:
    """Assemble the relaxed beamforming program as a :class:`ConicProblem`.

    With ``embed=False`` covariances are restricted to real symmetric
    matrices, which is exact only when every channel quantity is real.
    """
    N, K = ch.h_target.shape[0], ch.h_users.shape[0]
    P, s0 = cfg.P, cfg.sigma0_sq
    gam = np.asarray(cfg.gamma, dtype=float) * (1 + SINR_MARGIN)
    E = symmetric_basis(N, embed)
    p = E.shape[0]
    Es = symmetric_basis(2, False)

    ents = {"V": VariableBlock("V", 0, 2, False), "U": VariableBlock("U", 3, 2, False)}
    off = 6
    for k in range(K):
        ents[f"W{k}"] = VariableBlock(f"W{k}", off, N, embed)
        off += p
    ents["Rs"] = VariableBlock("Rs", off, N, embed)
    m = off + p
    cov_names = [f"W{k}" for k in range(K)] + ["Rs"]

    # FIM entries as functionals of the scaled covariance R / P
    funcs = fim_functionals(ch, scenario.beta, cfg.T, cfg.sigmas_sq)
    jfull = {key: P * _coeffs(Mx, E) for key, Mx in funcs.items()}
    ref = np.zeros(p)
    ref[:N] = 1.0 / N          # R / P = I / N
    j11_ref = 0.5 * (jfull[(0, 0)] @ ref + jfull[(1, 1)] @ ref)
    j22_ref = jfull[(2, 2)] @ ref
    if not (j11_ref > 0 and j22_ref > 0):
        raise SingularFim("target is not illuminated at the reference covariance")
    # J(R) is Loewner-monotone in R, so a singular bound at R = P I / N is
    # singular for every feasible R (e.g. a single feed: only the angle is seen)
    fim_crb(ch, P * np.eye(N) / N, scenario.beta, cfg.T, cfg.sigmas_sq)
    d = np.array([1 / np.sqrt(j11_ref)] * 2 + [1 / np.sqrt(j22_ref)] * 2)

    blocks = []
    # epigraph [[V, I], [I, U]] >= 0
    const = np.zeros((4, 4))
    const[:2, 2:] = const[2:, :2] = np.eye(2)
    coef = np.zeros((m, 4, 4))
    coef[0:3, :2, :2] = Es
    coef[3:6, 2:, 2:] = Es
    blocks.append(LmiBlock("epigraph", 4, False, const, coef))

    # CRB LMI (scaled): D J(R) D - blkdiag(U~, 0) >= 0
    coef = np.zeros((m, 4, 4))
    for (i, j), cj in jfull.items():
        col = cj * d[i] * d[j]
        for name in cov_names:
            e = ents[name]
            coef[e.offset:e.offset + p, i, j] = col
            coef[e.offset:e.offset + p, j, i] = col
    coef[3:6, :2, :2] -= Es
    blocks.append(LmiBlock("crb_lmi", 4, False, np.zeros((4, 4)), coef))

    # covariance PSD blocks
    Eb = np.array([real_embedding(Ei) for Ei in E]) if embed else E
    for name in cov_names:
        e = ents[name]
        coef = np.zeros((m,) + Eb.shape[1:])
        coef[e.offset:e.offset + p] = Eb
        blocks.append(LmiBlock(name, Eb.shape[1], False, np.zeros(Eb.shape[1:]), coef))

    # SINR rows (divided by the user noise power) and the power budget
    rows = K + 1
    const = np.zeros(rows)
    coef = np.zeros((m, rows))
    for k in range(K):
        hk = ch.h_users[k]
        qk = (P / s0) * _coeffs(np.outer(hk, hk.conj()), E)
        for name in cov_names:
            e = ents[name]
            coef[e.offset:e.offset + p, k] -= qk
        e = ents[f"W{k}"]
        coef[e.offset:e.offset + p, k] += (1 + gam[k]) / gam[k] * qk
        const[k] = -1.0
        # unit-scale rows; raw coefficients reach P|h|^2/sigma0^2 ~ 1e5
        row_scale = np.abs(coef[:, k]).max()
        coef[:, k] /= row_scale
        const[k] /= row_scale
    const[K] = 1.0
    tr_coef = _coeffs(np.eye(N), E)
    for name in cov_names:
        e = ents[name]
        coef[e.offset:e.offset + p, K] = -tr_coef
    blocks.append(LmiBlock("linear", rows, True, const, coef))

    c = np.zeros(m)
    c[0:2] = 1.0               # tr(V~): diagonal parameters of V
    meta = {"P": P, "d1": float(d[0]), "d2": float(d[2]), "K": K, "N": N, "embed": embed,
            "n_sinr_rows": K}
    return ConicProblem(n_vars=m, c=c, blocks=blocks, entities=ents, meta=meta)


def solve_sdr(prob: ConicProblem, tol: float = 1e-7) -> RawSdrSolution:
    sol = solve_conic(prob, tol=tol)
    x = sol.x
    P, d1 = prob.meta["P"], prob.meta["d1"]
    herm = lambda X: 0.5 * (X + X.conj().T)

    def psd(X):
        # interior-point iterates can sit ~1e-10 outside the cone after decoding
        ev, vec = np.linalg.eigh(herm(X))
        return (vec * np.maximum(ev, 0.0)) @ vec.conj().T

    V = herm(decode_matrix(x, prob.entities["V"])) * d1**2
    U = herm(decode_matrix(x, prob.entities["U"])) / d1**2
    K, N = prob.meta["K"], prob.meta["N"]
    W = np.array([psd(decode_matrix(x, prob.entities[f"W{k}"])) * P
                  for k in range(K)]).reshape(K, N, N)
    Rs = psd(decode_matrix(x, prob.entities["Rs"])) * P
    return RawSdrSolution(U=U, V=V, W_hat=W.astype(complex), R_s_hat=Rs.astype(complex),
                          tr_V=float(np.trace(V)), gap=sol.gap, status=sol.status)


def extract_rank_one(raw: RawSdrSolution, ch: ChannelSet, scenario: Scenario,
                     cfg: SystemConfig) -> BeamformingSolution:
    """Rank-one beamformers with the same per-user SINR and the same ``R``.

    ``w_k = W_k h_k / sqrt(h_k^H W_k h_k)`` keeps ``|h_k^H w_k|^2`` and the
    remainder ``W_k - w_k w_k^H`` (PSD by Cauchy-Schwarz) moves to ``R_s``.
    """
    K, N = raw.W_hat.shape[0], raw.R_s_hat.shape[0]
    W = np.zeros((N, K), dtype=complex)
    Rs = raw.R_s_hat.astype(complex)
    for k in range(K):
        Wk, hk = raw.W_hat[k], ch.h_users[k]
        g = np.real(hk.conj() @ Wk @ hk)
        if not g > 1e-12 * max(np.real(np.trace(Wk)), 1e-300):
            raise DegenerateBeam(f"user {k} receives no power from its relaxed beamformer")
        w = Wk @ hk / np.sqrt(g)
        W[:, k] = w
        Rs += Wk - np.outer(w, w.conj())
    Rs = 0.5 * (Rs + Rs.conj().T)
    ev, vec = np.linalg.eigh(Rs)
    tr = float(np.real(np.trace(raw.R)))
    if ev.min() < 0:
        if ev.min() < -1e-8 * tr - 1e-12:
            raise SolverFailure(f"sensing covariance is indefinite (min eigenvalue {ev.min():.3e})")
        Rs = (vec * np.maximum(ev, 0.0)) @ vec.conj().T
    R = W @ W.conj().T + Rs
    obj = fim_crb(ch, R, scenario.beta, cfg.T, cfg.sigmas_sq).trace_crb
    return BeamformingSolution(W=W, R_s=Rs, objective=obj,
                               sinr=sinr(ch.H, W, Rs, cfg.sigma0_sq),
                               power=float(np.real(np.trace(R))))


def optimize_beamforming(ch: ChannelSet, scenario: Scenario, cfg: SystemConfig,
                         tol: float = 1e-7) -> BeamformingSolution:
    """Build, solve and extract in one call; retries once with looser
    tolerance on a numerical solver failure."""
    prob = build_sdr(ch, scenario, cfg)
    try:
        raw = solve_sdr(prob, tol)
    except SolverFailure:
        raw = solve_sdr(prob, tol * 100)
    return extract_rank_one(raw, ch, scenario, cfg)
