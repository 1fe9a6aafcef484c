"""Pinching beamforming: PA placement for fixed digital beamformers.

The placement problem is decoupled with auxiliary channel copies ``Q`` and
``Q_m`` and a penalty ``(1/rho)(||Q - sum Q_m||^2 + sum ||Q_m - H_m||^2)``.
Each inner round updates ``Q`` (SINR-constrained projection, convexified by
SCA), then ``Q_m`` (closed form), then every PA position by a 1-D search.

The two objective terms are made dimensionless before they are added:
tr(CRB) is divided by its value at the input layout and channel mismatches
by the mean per-PA channel energy, so that the rho schedule means the same
thing at every power level and geometry.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .config import SystemConfig
from .errors import EmptyFeasibleInterval, SurrogateInfeasible
from .fim import trace_crb_batch, trace_crb_from_channels
from .geometry import (PassLayout, Scenario, effective_channels, pa_terms, sinr,
                       steering_derivatives, steering_vector, target_angle)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlacementGrid:
    """Candidate positions for the element-wise search.

    Either a lattice ``D + j * coarse_step`` followed by one refinement pass
    at ``fine_step`` around the coarse winner, or a fixed set of ``points``.
    """
    coarse_step: Optional[float] = None
    fine_step: Optional[float] = None
    points: Optional[np.ndarray] = None

    @classmethod
    def continuous(cls, cfg: SystemConfig) -> "PlacementGrid":
        return cls(coarse_step=cfg.wavelength / 4, fine_step=cfg.wavelength / 40)

    @classmethod
    def discrete(cls, cfg: SystemConfig, Z: int) -> "PlacementGrid":
        if Z < 1:
            raise ValueError("Z must be >= 1")
        return cls(points=cfg.D + np.arange(Z + 1) * cfg.L / Z)


@dataclass
class PenaltyState:
    Q: np.ndarray              # (N, K)
    Q_m: np.ndarray            # (M, N, K)
    rho: float
    crb_scale: float = 1.0
    chan_scale: float = 1.0
    violation: tuple = (0.0, 0.0)
    history: list = field(default_factory=list)


def sinr_feasible(H, W, R_s, cfg: SystemConfig, rtol: float = 1e-6) -> bool:
    if W.shape[1] == 0:
        return True
    return bool(np.all(sinr(H, W, R_s, cfg.sigma0_sq) >= np.asarray(cfg.gamma) * (1 - rtol)))


# ---------------------------------------------------------------------------
# Q step


def _sinr_gap(q, A, w, gamma, s0):
    """Left side of the SINR constraint written as ``<= 0``."""
    return np.real(q.conj() @ A @ q) - abs(np.vdot(w, q)) ** 2 / gamma + s0


def _project_surrogate(q0, q_t, A, w, gamma, s0):
    """argmin ||q - q0||^2 over the SCA surrogate linearised at ``q_t``.

    The surrogate ``q^H A q - 2 Re(c^H q) + d <= 0`` is a single convex
    quadratic, so the KKT point is ``q(mu) = (I + mu A)^{-1}(q0 + mu c)``
    with ``mu`` the root of a decreasing scalar function.
    """
    s = max(np.linalg.norm(q_t), np.linalg.norm(q0))
    q0s, qts = q0 / s, q_t / s
    c = w * np.vdot(w, qts) / gamma
    d = abs(np.vdot(w, qts)) ** 2 / gamma + s0 / s**2
    lam, V = np.linalg.eigh(A)
    lam = np.maximum(lam, 0.0)
    b0, bc = V.conj().T @ q0s, V.conj().T @ c

    def q_of(mu):
        return V @ ((b0 + mu * bc) / (1.0 + mu * lam))

    def g(mu):
        q = q_of(mu)
        return np.real(q.conj() @ A @ q) - 2 * np.real(np.vdot(c, q)) + d

    if g(0.0) <= 0:
        return q0.copy()
    hi = 1.0
    for _ in range(400):
        if g(hi) < 0:
            break
        hi *= 2.0
    else:
        raise SurrogateInfeasible("SCA surrogate set is empty")
    mu = brentq(g, 0.0, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500)
    while g(mu) > 0:
        mu = mu * (1 + 1e-12) + 1e-300
    return q_of(mu) * s


def _feasible_start(q_candidates, A, w, gamma, s0):
    for q in q_candidates:
        if _sinr_gap(q, A, w, gamma, s0) <= 0:
            return q
    # scaling a point with positive SIR margin eventually beats the noise
    for q in q_candidates:
        sir = np.real(q.conj() @ A @ q) - abs(np.vdot(w, q)) ** 2 / gamma
        if sir < 0:
            t = np.sqrt(2 * s0 / -sir)
            return q * max(t, 1.0)
    raise SurrogateInfeasible("no SINR-feasible expansion point")


def update_Q(state: PenaltyState, W, R_s, cfg: SystemConfig, H, sca_iters: int = 20,
             trace: Optional[list] = None) -> np.ndarray:
    """SINR-constrained projection of ``sum_m Q_m`` by successive convex
    approximation; columns are independent users.

    The expansion point starts at the previous ``Q`` column (feasible by
    construction), falling back to the true channel ``H``. ``trace``, if
    given, receives each user's sequence of surrogate objective values.
    """
    N, K = W.shape
    target = state.Q_m.sum(axis=0)
    Q = np.empty((N, K), dtype=complex)
    s0 = cfg.sigma0_sq
    for k in range(K):
        w = W[:, k]
        A = W @ W.conj().T - np.outer(w, w.conj()) + R_s
        A = 0.5 * (A + A.conj().T)
        gam = cfg.gamma[k]
        q0 = target[:, k]
        if _sinr_gap(q0, A, w, gam, s0) <= 0:
            Q[:, k] = q0
            if trace is not None:
                trace.append([0.0])
            continue
        q_t = _feasible_start([state.Q[:, k], H[:, k]], A, w, gam, s0)
        objs = [float(np.linalg.norm(q_t - q0) ** 2)]
        for _ in range(sca_iters):
            try:
                q = _project_surrogate(q0, q_t, A, w, gam, s0)
            except SurrogateInfeasible:
                q_t = _feasible_start([H[:, k]], A, w, gam, s0)
                q = _project_surrogate(q0, q_t, A, w, gam, s0)
            objs.append(float(np.linalg.norm(q - q0) ** 2))
            done = np.linalg.norm(q - q_t) <= 1e-6 * np.linalg.norm(q_t)
            q_t = q
            if done:
                break
        Q[:, k] = q_t
        if trace is not None:
            trace.append(objs)
    return Q


# ---------------------------------------------------------------------------
# Q_m step


def update_Qm(state: PenaltyState, H_m: np.ndarray) -> np.ndarray:
    """Exact minimiser of ``||Q - sum Q_m||^2 + sum ||Q_m - H_m||^2``."""
    M = H_m.shape[0]
    B = (state.Q - H_m.sum(axis=0)) / (M + 1)
    return H_m + B[None]


def qm_objective(Q, Q_m, H_m) -> float:
    return float(np.linalg.norm(Q - Q_m.sum(axis=0)) ** 2 + np.sum(np.abs(Q_m - H_m) ** 2))


# ---------------------------------------------------------------------------
# X step


def _qf_update(R, u0, v0, n, du, dv, Ru0, Rv0):
    """``(u0 + e_n du)^H R (v0 + e_n dv)`` for vectors of scalar updates."""
    base = np.vdot(u0, Rv0)
    return base + np.conj(du) * Rv0[n] + np.conj(Ru0[n]) * dv + np.conj(du) * R[n, n] * dv


class PlacementObjective:
    """Evaluates the per-PA search objective for many candidate positions.

    Wireless terms on the coarse lattice do not depend on the layout, so they
    are computed once per (scenario, waveguide) and reused by every sweep.
    """

    def __init__(self, scenario: Scenario, cfg: SystemConfig, grid: PlacementGrid, R: np.ndarray,
                 wg_y: np.ndarray):
        self.scenario, self.cfg, self.grid = scenario, cfg, grid
        self.R = np.asarray(R, dtype=complex)
        self.wg_y = np.asarray(wg_y, dtype=float)
        if grid.points is not None:
            xs = np.sort(np.asarray(grid.points, dtype=float))
        else:
            n_pts = int(np.floor(cfg.L / grid.coarse_step + 1e-9)) + 1
            xs = cfg.D + np.arange(n_pts) * grid.coarse_step
        self.lattice = xs
        self._terms = [pa_terms(xs, y, scenario, cfg) for y in self.wg_y]
        theta, _, _ = target_angle(scenario.target)
        self.steer = steering_vector(theta, cfg.M_r)
        self.dsteer = steering_derivatives(scenario.target, cfg.M_r)

    def lattice_range(self, lo: float, hi: float):
        """Index range of lattice points inside ``[lo, hi]``."""
        i0 = np.searchsorted(self.lattice, lo - 1e-12, side="left")
        i1 = np.searchsorted(self.lattice, hi + 1e-12, side="right")
        return i0, i1

    def evaluate(self, n, terms, base, Q_mn, rho, state):
        """Objective values for candidate PA terms on waveguide ``n``.

        ``base`` holds the target channel vectors with the moving PA removed.
        """
        cfg = self.cfg
        f, g_t, dgx, dgy, g_u = terms
        h0, hx0, hy0 = base
        R = self.R
        Rh, Rx, Ry = R @ h0, R @ hx0, R @ hy0
        dh, dx, dy = f * g_t, f * dgx, f * dgy
        qf = {
            "hh": _qf_update(R, h0, h0, n, dh, dh, Rh, Rh),
            "hx": _qf_update(R, h0, hx0, n, dh, dx, Rh, Rx),
            "hy": _qf_update(R, h0, hy0, n, dh, dy, Rh, Ry),
            "xx": _qf_update(R, hx0, hx0, n, dx, dx, Rx, Rx),
            "xy": _qf_update(R, hx0, hy0, n, dx, dy, Rx, Ry),
            "yy": _qf_update(R, hy0, hy0, n, dy, dy, Ry, Ry),
        }
        tr = trace_crb_batch(self.steer, *self.dsteer, qf, self.scenario.beta, cfg.T, cfg.sigmas_sq)
        obj = tr / state.crb_scale
        if Q_mn.size:
            mis = np.sum(np.abs(Q_mn[None, :] - f[:, None] * g_u) ** 2, axis=1)
            obj = obj + mis / (rho * state.chan_scale)
        return obj

    def terms_at(self, x, n):
        return pa_terms(np.asarray(x, dtype=float), self.wg_y[n], self.scenario, self.cfg)


def feasible_interval(x_col: np.ndarray, m: int, cfg: SystemConfig):
    M = x_col.shape[0]
    lo = cfg.D if m == 0 else x_col[m - 1] + cfg.delta
    hi = cfg.D + cfg.L if m == M - 1 else x_col[m + 1] - cfg.delta
    lo, hi = max(lo, cfg.D), min(hi, cfg.D + cfg.L)
    if lo > hi + 1e-12:
        raise EmptyFeasibleInterval(f"PA {m}: feasible interval [{lo}, {hi}] is empty")
    return lo, min(max(hi, lo), cfg.D + cfg.L)


def _cat_terms(a, b):
    return tuple(np.concatenate([u, v], axis=0) for u, v in zip(a, b))


def _take(terms, idx):
    return tuple(t[idx] for t in terms)


def update_X(state: PenaltyState, layout: PassLayout, W, R_s, scenario: Scenario, cfg: SystemConfig,
             grid: Optional[PlacementGrid] = None, objective: Optional[PlacementObjective] = None,
             record: Optional[list] = None) -> PassLayout:
    """One element-wise sweep over all PAs (waveguide-major).

    Each PA moves to the candidate minimising
    ``tr(CRB)/crb_scale + sum_k |[Q_m]_nk - [H_m]_nk|^2 / (rho chan_scale)``
    inside its feasible interval; the current position is always a
    candidate, so no single move increases the objective. ``record``
    receives ``(m, n, before, after)`` tuples.
    """
    grid = grid or PlacementGrid.continuous(cfg)
    R = W @ W.conj().T + R_s
    if objective is None:
        objective = PlacementObjective(scenario, cfg, grid, R, layout.wg_y)
    M, N = layout.M, layout.N
    x = layout.x_pos.copy()
    f, g_t, dgx, dgy, g_u = pa_terms(x, layout.wg_y[None, :], scenario, cfg)
    h = (f * g_t).sum(axis=0)
    hx = (f * dgx).sum(axis=0)
    hy = (f * dgy).sum(axis=0)
    for n in range(N):
        lat = objective._terms[n]
        for m in range(M):
            lo, hi = feasible_interval(x[:, n], m, cfg)
            e = np.zeros(N)
            e[n] = 1.0
            base = (h - e * f[m, n] * g_t[m, n], hx - e * f[m, n] * dgx[m, n],
                    hy - e * f[m, n] * dgy[m, n])
            Q_mn = state.Q_m[m, n, :]
            # a discrete grid admits only its own points (plus staying put)
            extra = np.array([x[m, n]] if grid.points is not None else [lo, hi, x[m, n]])
            i0, i1 = objective.lattice_range(lo, hi)
            xs = np.concatenate([objective.lattice[i0:i1], extra])
            terms = _cat_terms(_take(lat, slice(i0, i1)), objective.terms_at(extra, n))
            order = np.argsort(xs, kind="stable")
            xs, terms = xs[order], _take(terms, order)
            vals = objective.evaluate(n, terms, base, Q_mn, state.rho, state)
            before = float(vals[np.flatnonzero(xs == x[m, n])[0]])
            j = int(np.argmin(vals))
            best_x, best_v = xs[j], vals[j]
            if grid.points is None and grid.fine_step:
                k = int(round(grid.coarse_step / grid.fine_step))
                fx = best_x + np.arange(-k, k + 1) * grid.fine_step
                fx = np.clip(fx, lo, hi)
                fx[k] = best_x
                fx = np.unique(fx)
                fv = objective.evaluate(n, objective.terms_at(fx, n), base, Q_mn, state.rho, state)
                jf = int(np.argmin(fv))
                if fv[jf] < best_v:
                    best_x, best_v = fx[jf], fv[jf]
            if record is not None:
                record.append((m, n, before, float(best_v)))
            if best_x != x[m, n]:
                x[m, n] = best_x
                ft, gt, gx, gy, gu = objective.terms_at(best_x, n)
                h[n] = base[0][n] + ft * gt
                hx[n] = base[1][n] + ft * gx
                hy[n] = base[2][n] + ft * gy
                f[m, n], g_t[m, n], dgx[m, n], dgy[m, n] = ft, gt, gx, gy
                g_u[m, n] = gu
    new = PassLayout(x, layout.wg_y, layout.feed_x, layout.d_h)
    return new.validate(cfg)


# ---------------------------------------------------------------------------
# penalty loop


@dataclass
class PlacementInfo:
    status: str                # "improved", "unchanged", "no_feasible_iterate"
    iterations: int
    stages: int
    crb_in: float
    crb_out: float
    history: list = field(default_factory=list)
    candidate: Optional[PassLayout] = None   # lowest tr(CRB) iterate, SINR-feasible or not
    candidate_crb: float = np.inf

    def visited(self) -> list:
        """Distinct layouts of all iterates, in visiting order."""
        out = []
        for h in self.history:
            if not any(np.array_equal(h["layout"].x_pos, L.x_pos) for L in out):
                out.append(h["layout"])
        return out


def penalty_loop(layout: PassLayout, W, R_s, scenario: Scenario, cfg: SystemConfig,
                 grid: Optional[PlacementGrid] = None, rho0: float = 1e3, rho_factor: float = 0.3,
                 rho_min: float = 1e-8, inner_tol: float = 1e-4, outer_tol: float = 1e-6,
                 max_inner: int = 30, sca_iters: int = 20, return_info: bool = False):
    """Penalty-based placement for fixed ``W``, ``R_s``.

    Returns the layout with the smallest true tr(CRB) among the iterates that
    meet every SINR target on the true channels. The input layout competes
    too, so the result never has a larger tr(CRB) than the input when the
    input itself is SINR-feasible.
    """
    grid = grid or PlacementGrid.continuous(cfg)
    layout.validate(cfg)
    R = W @ W.conj().T + R_s
    ch = effective_channels(layout, scenario, cfg)
    crb_in = trace_crb_from_channels(ch, R, scenario.beta, cfg.T, cfg.sigmas_sq)
    H, H_m = ch.H, ch.H_per_pa
    K = H.shape[1]
    energy = np.sum(np.abs(H_m) ** 2, axis=2).mean() if K else 1.0
    state = PenaltyState(Q=H.copy(), Q_m=H_m.copy(), rho=rho0,
                         crb_scale=crb_in if np.isfinite(crb_in) and crb_in > 0 else 1.0,
                         chan_scale=energy if energy > 0 else 1.0)
    objective = PlacementObjective(scenario, cfg, grid, R, layout.wg_y)
    norm_H = np.linalg.norm(H) if K else 1.0

    best, best_tr = None, np.inf
    if sinr_feasible(H, W, R_s, cfg):
        best, best_tr = layout, crb_in
    cand, cand_tr = layout, crb_in
    current = layout
    n_iter, stages = 0, 0
    while True:
        stages += 1
        for _ in range(max_inner):
            n_iter += 1
            state.Q = update_Q(state, W, R_s, cfg, H, sca_iters=sca_iters)
            state.Q_m = update_Qm(state, H_m)
            prev = current
            current = update_X(state, current, W, R_s, scenario, cfg, grid, objective=objective)
            ch = effective_channels(current, scenario, cfg)
            H, H_m = ch.H, ch.H_per_pa
            v1 = float(np.linalg.norm(state.Q - state.Q_m.sum(axis=0)))
            v2 = float(sum(np.linalg.norm(state.Q_m[m] - H_m[m]) for m in range(H_m.shape[0])))
            state.violation = (v1, v2)
            tr = trace_crb_from_channels(ch, R, scenario.beta, cfg.T, cfg.sigmas_sq)
            feas = sinr_feasible(H, W, R_s, cfg)
            state.history.append({"rho": state.rho, "trace_crb": tr, "feasible": feas,
                                  "residual": v1 + v2, "layout": current})
            if feas and tr < best_tr:
                best, best_tr = current, tr
            if tr < cand_tr:
                cand, cand_tr = current, tr
            if v1 + v2 < inner_tol * norm_H:
                break
            # with X frozen the Q / Q_m updates only crawl; let rho move on
            if np.array_equal(prev.x_pos, current.x_pos):
                break
        if v1 + v2 < outer_tol * norm_H:
            break
        state.rho *= rho_factor
        if state.rho < rho_min:
            break

    if best is None:
        log.warning("placement: no SINR-feasible iterate; keeping the input layout")
        status, best, best_tr = "no_feasible_iterate", layout, crb_in
    elif best is layout:
        status = "unchanged"
    else:
        status = "improved"
    best.validate(cfg)
    info = PlacementInfo(status, n_iter, stages, crb_in, best_tr, state.history, cand, cand_tr)
    return (best, info) if return_info else best
