"""Fisher information and Cramér–Rao bound for target position.

The unknowns are ``eta = [x_t, y_t, Re(beta), Im(beta)]``. With
``A = a(theta) h_t^H`` and transmit covariance ``R`` the FIM blocks are

    J11[i, j] = 2|beta|^2 T / s2 * Re tr(Adot_j R Adot_i^H)
    J12[i, :] = 2 T / s2 * Re(conj(beta) tr(A R Adot_i^H) * [1, j])
    J22       = 2 T / s2 * Re tr(A R A^H) * I2

and ``CRB = (J11 - J12 J22^{-1} J12^T)^{-1}``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import SingularFim
from .geometry import ChannelSet

COND_LIMIT = 1e12


@dataclass(frozen=True)
class FimCrb:
    J11: np.ndarray
    J12: np.ndarray
    J22: np.ndarray
    J: np.ndarray
    crb: Optional[np.ndarray] = None
    trace_crb: Optional[float] = None
    rcrb: Optional[float] = None


def a_matrix_and_derivatives(ch: ChannelSet):
    """``A = a h_t^H`` and its partial derivatives over x_t, y_t (M_r x N)."""
    a, h = ch.steer, ch.h_target
    A = np.outer(a, h.conj())
    Ax = np.outer(ch.dsteer_dx, h.conj()) + np.outer(a, ch.dh_target_dx.conj())
    Ay = np.outer(ch.dsteer_dy, h.conj()) + np.outer(a, ch.dh_target_dy.conj())
    return A, Ax, Ay


def fim_blocks(A, Adot_x, Adot_y, R, beta, T, sigmas_sq) -> FimCrb:
    c = 2.0 * T / sigmas_sq
    beta = complex(beta)
    Ad = (Adot_x, Adot_y)
    J11 = np.empty((2, 2))
    for i in range(2):
        for j in range(2):
            J11[i, j] = np.real(np.trace(Ad[j] @ R @ Ad[i].conj().T))
    J11 *= c * abs(beta) ** 2
    t = np.array([np.trace(A @ R @ Ad[i].conj().T) for i in range(2)])
    z = np.conj(beta) * t
    J12 = c * np.column_stack([z.real, -z.imag])
    J22 = c * np.real(np.trace(A @ R @ A.conj().T)) * np.eye(2)
    J11 = 0.5 * (J11 + J11.T)
    J = np.block([[J11, J12], [J12.T, J22]])
    return FimCrb(J11=J11, J12=J12, J22=J22, J=J)


def _inv2(S: np.ndarray) -> np.ndarray:
    a, b, c, d = S[0, 0], S[0, 1], S[1, 0], S[1, 1]
    det = a * d - b * c
    return np.array([[d, -b], [-c, a]]) / det


def _sym2_eigs(S: np.ndarray):
    a, b, d = S[0, 0], 0.5 * (S[0, 1] + S[1, 0]), S[1, 1]
    mean = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), b)
    return mean - rad, mean + rad


def crb_from_fim(blocks: FimCrb) -> FimCrb:
    j22 = blocks.J22[0, 0]
    if not j22 > 0:
        raise SingularFim("nuisance block J22 is not positive (beta or target illumination is zero)")
    J22_inv = _inv2(blocks.J22)
    S = blocks.J11 - blocks.J12 @ J22_inv @ blocks.J12.T
    S = 0.5 * (S + S.T)
    lo, hi = _sym2_eigs(S)
    if not lo > 0 or hi / lo > COND_LIMIT:
        raise SingularFim(f"positional Schur complement is singular (eigenvalues {lo:.3e}, {hi:.3e})")
    crb = _inv2(S)
    crb = 0.5 * (crb + crb.T)
    tr = float(crb[0, 0] + crb[1, 1])
    return replace(blocks, crb=crb, trace_crb=tr, rcrb=float(np.sqrt(tr)))


def fim_crb(ch: ChannelSet, R: np.ndarray, beta: complex, T: int, sigmas_sq: float) -> FimCrb:
    """Completed FIM / CRB for channels ``ch`` and covariance ``R``."""
    A, Ax, Ay = a_matrix_and_derivatives(ch)
    return crb_from_fim(fim_blocks(A, Ax, Ay, R, beta, T, sigmas_sq))


def fim_functionals(ch: ChannelSet, beta: complex, T: int, sigmas_sq: float) -> dict:
    """Matrices ``M`` with ``J[i, j] = Re tr(M R)`` for the upper triangle of J.

    Keys are ``(i, j)`` index pairs into the 4x4 FIM. Every FIM entry is
    linear in ``R``, which is what makes the CRB LMI affine in the
    beamforming variables.
    """
    A, Ax, Ay = a_matrix_and_derivatives(ch)
    c = 2.0 * T / sigmas_sq
    beta = complex(beta)
    Ad = (Ax, Ay)
    out = {}
    for i in range(2):
        for j in range(i, 2):
            out[(i, j)] = c * abs(beta) ** 2 * (Ad[i].conj().T @ Ad[j])
        G = np.conj(beta) * (Ad[i].conj().T @ A)
        out[(i, 2)] = c * G
        out[(i, 3)] = c * 1j * G
    AA = c * (A.conj().T @ A)
    out[(2, 2)] = AA
    out[(3, 3)] = AA
    out[(2, 3)] = np.zeros_like(AA)
    return out


def trace_crb_batch(steer, dsteer_x, dsteer_y, qf, beta, T, sigmas_sq):
    """Vectorised tr(CRB) from quadratic forms of the target channel.

    ``qf`` maps ``'hh', 'hx', 'hy', 'xx', 'xy', 'yy'`` to arrays of
    ``u^H R v`` over any common batch shape, where ``h`` is the target
    channel and ``x``/``y`` its derivatives. Singular candidates return inf.
    """
    a, ax, ay = steer, dsteer_x, dsteer_y
    aa = np.real(np.vdot(a, a))
    ad = (ax, ay)
    # <a_i, a_j>, <a, a_j>
    aiaj = [[np.vdot(ad[i], ad[j]) for j in range(2)] for i in range(2)]
    aaj = [np.vdot(a, ad[j]) for j in range(2)]
    qhh = np.real(qf["hh"])
    qh = (qf["hx"], qf["hy"])                       # h^H R h_i
    qd = [[qf["xx"], qf["xy"]], [np.conj(qf["xy"]), qf["yy"]]]   # h_i^H R h_j

    def T_ij(i, j):
        # tr(Adot_j R Adot_i^H)
        return (aiaj[i][j] * qhh + aaj[j] * qh[i] + np.conj(aaj[i]) * np.conj(qh[j])
                + aa * qd[j][i])

    t = [np.conj(aaj[i]) * qhh + aa * qh[i] for i in range(2)]     # tr(A R Adot_i^H)
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = aa * qhh
        s00 = np.real(T_ij(0, 0)) - np.abs(t[0]) ** 2 / denom
        s11 = np.real(T_ij(1, 1)) - np.abs(t[1]) ** 2 / denom
        s01 = np.real(T_ij(0, 1)) - np.real(t[0] * np.conj(t[1])) / denom
        det = s00 * s11 - s01 * s01
        scale = 2.0 * T * abs(beta) ** 2 / sigmas_sq
        tr = (s00 + s11) / det / scale
        mean = 0.5 * (s00 + s11)
        rad = np.hypot(0.5 * (s00 - s11), s01)
        lo = mean - rad
        bad = ~(lo > 0) | ~((mean + rad) / lo <= COND_LIMIT) | ~(qhh > 0)
    return np.where(bad, np.inf, tr)


def quadratic_forms(R, h, hx, hy) -> dict:
    """``u^H R v`` for the target channel and its derivatives (batched on
    leading axes)."""
    Rh, Rx, Ry = h @ R.T, hx @ R.T, hy @ R.T
    dot = lambda u, Rv: np.sum(u.conj() * Rv, axis=-1)
    return {"hh": dot(h, Rh), "hx": dot(h, Rx), "hy": dot(h, Ry),
            "xx": dot(hx, Rx), "xy": dot(hx, Ry), "yy": dot(hy, Ry)}


def trace_crb_from_channels(ch: ChannelSet, R, beta, T, sigmas_sq) -> float:
    qf = quadratic_forms(R, ch.h_target, ch.dh_target_dx, ch.dh_target_dy)
    return float(trace_crb_batch(ch.steer, ch.dsteer_dx, ch.dsteer_dy, qf, beta, T, sigmas_sq))
