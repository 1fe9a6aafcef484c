"""PASS geometry, wireless / in-waveguide channels and target derivatives.

Coordinates: the BS (and its receive ULA) sits at the origin, waveguides run
along +x at height ``d_h`` starting from the feed point ``x = D``, and the
service rectangle spans ``x in [D, D + D_x]``, ``y in [-D_y/2, D_y/2]``.
Wireless coefficients are ordered waveguide-major: all M PAs of waveguide 0,
then waveguide 1, and so on.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import SystemConfig
from .errors import DegenerateGeometry, InfeasibleLayout

_SPACING_SLACK = 1e-12


@dataclass(frozen=True)
class PassLayout:
    x_pos: np.ndarray   # (M, N) PA x-coordinates; entry (m, n) is PA m on waveguide n
    wg_y: np.ndarray    # (N,) waveguide y-coordinates
    feed_x: float
    d_h: float

    @property
    def M(self) -> int:
        return self.x_pos.shape[0]

    @property
    def N(self) -> int:
        return self.x_pos.shape[1]

    def validate(self, cfg: SystemConfig) -> "PassLayout":
        """Raise :class:`InfeasibleLayout` unless every PA respects the
        waveguide range and the minimum spacing."""
        x = np.asarray(self.x_pos, dtype=float)
        if x.shape != (cfg.M, cfg.N) or self.wg_y.shape != (cfg.N,):
            raise InfeasibleLayout(f"layout shape {x.shape} does not match M={cfg.M}, N={cfg.N}")
        tol = _SPACING_SLACK * max(1.0, cfg.D + cfg.L)
        if not np.all(np.isfinite(x)):
            raise InfeasibleLayout("non-finite PA position")
        if x.min() < cfg.D - tol or x.max() > cfg.D + cfg.L + tol:
            raise InfeasibleLayout("PA outside the attachable waveguide range")
        if cfg.M > 1 and np.min(np.diff(x, axis=0)) < cfg.delta - tol:
            raise InfeasibleLayout("adjacent PAs closer than the minimum spacing")
        return self

    def moved(self, m: int, n: int, x: float) -> "PassLayout":
        xp = self.x_pos.copy()
        xp[m, n] = x
        return replace(self, x_pos=xp)

    def pa_coordinates(self) -> np.ndarray:
        """(N*M, 3) PA coordinates in waveguide-major order."""
        N, M = self.N, self.M
        xs = self.x_pos.T.reshape(-1)
        ys = np.repeat(self.wg_y, M)
        return np.column_stack([xs, ys, np.full(N * M, self.d_h)])


@dataclass(frozen=True)
class Scenario:
    users: np.ndarray    # (K, 2) user (x, y); all ground nodes sit at z = 0
    target: np.ndarray   # (2,) target (x, y)
    beta: complex        # reflection coefficient incl. two-hop loss

    @property
    def K(self) -> int:
        return self.users.shape[0]


@dataclass(frozen=True)
class ChannelSet:
    h_users: np.ndarray      # (K, N) effective channels h_k
    h_target: np.ndarray     # (N,)
    H_per_pa: np.ndarray     # (M, N, K); sum over axis 0 gives H = h_users.T
    steer: np.ndarray        # (M_r,)
    theta: float
    dtheta: np.ndarray       # (2,) d theta / d(x_t, y_t)
    dh_target_dx: np.ndarray
    dh_target_dy: np.ndarray
    dsteer_dx: np.ndarray
    dsteer_dy: np.ndarray

    @property
    def H(self) -> np.ndarray:
        """(N, K) stacked user channels."""
        return self.h_users.T


def waveguide_y(cfg: SystemConfig) -> np.ndarray:
    n = np.arange(cfg.N)
    return -cfg.D_y / 2.0 + (n + 0.5) * cfg.D_y / cfg.N


def uniform_layout(cfg: SystemConfig) -> PassLayout:
    """PAs spread evenly over the attachable length of every waveguide."""
    if cfg.L < (cfg.M - 1) * cfg.delta:
        raise InfeasibleLayout(
            f"L={cfg.L} m cannot hold {cfg.M} PAs spaced {cfg.delta} m apart")
    if cfg.M == 1:
        col = np.array([cfg.D + cfg.L / 2.0])
    else:
        col = cfg.D + np.arange(cfg.M) * cfg.L / (cfg.M - 1)
    x = np.repeat(col[:, None], cfg.N, axis=1)
    return PassLayout(x, waveguide_y(cfg), float(cfg.D), float(cfg.d_h)).validate(cfg)


def _as_point(point) -> np.ndarray:
    p = np.asarray(point, dtype=float)
    if p.shape[-1] == 2:
        p = np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)
    return p


def spherical_coeff(r, kappa_c: float):
    """Free-space coefficient ``exp(-j k r) / (2 k r)``."""
    return np.exp(-1j * kappa_c * r) / (2.0 * kappa_c * r)


def wireless_vector(layout: PassLayout, point, cfg: SystemConfig) -> np.ndarray:
    """(M*N,) wireless channel from every PA to ``point``; waveguide-major."""
    pa = layout.pa_coordinates()
    r = np.linalg.norm(pa - _as_point(point), axis=-1)
    return spherical_coeff(r, cfg.kappa_c)


def waveguide_phases(layout: PassLayout, cfg: SystemConfig) -> np.ndarray:
    """(M, N) in-waveguide response of each PA, 1/sqrt(M) exp(-j k_g d)."""
    d = layout.x_pos - layout.feed_x
    return np.exp(-1j * cfg.kappa_g * d) / np.sqrt(layout.M)


def inwaveguide_matrix(layout: PassLayout, cfg: SystemConfig) -> np.ndarray:
    """Block-diagonal (N, M*N) in-waveguide channel F."""
    N, M = layout.N, layout.M
    f = waveguide_phases(layout, cfg)
    F = np.zeros((N, M * N), dtype=complex)
    for n in range(N):
        F[n, n * M:(n + 1) * M] = f[:, n]
    return F


def target_angle(target, cfg: SystemConfig | None = None):
    """Angle of the target seen from the ULA at the origin (array along y).

    Returns ``(theta, dtheta_dx, dtheta_dy)``.
    """
    x, y = float(target[0]), float(target[1])
    rho = np.hypot(x, y)
    if rho < 1e-9:
        raise DegenerateGeometry("target coincides with the receive array")
    theta = float(np.arcsin(np.clip(y / rho, -1.0, 1.0)))
    dtheta_dx = -y * np.sign(x) / rho**2
    dtheta_dy = abs(x) / rho**2
    return theta, dtheta_dx, dtheta_dy


def steering_vector(theta: float, M_r: int) -> np.ndarray:
    """Half-wavelength ULA response ``exp(-j pi i sin(theta))``."""
    i = np.arange(M_r)
    return np.exp(-1j * np.pi * i * np.sin(theta))


def steering_derivatives(target, M_r: int):
    """d a / d x_t and d a / d y_t through sin(theta) = y / |(x, y)|."""
    x, y = float(target[0]), float(target[1])
    rho = np.hypot(x, y)
    if rho < 1e-9:
        raise DegenerateGeometry("target coincides with the receive array")
    s = y / rho
    ds_dx = -x * y / rho**3
    ds_dy = x * x / rho**3
    i = np.arange(M_r)
    a = np.exp(-1j * np.pi * i * s)
    g = -1j * np.pi * i * a
    return g * ds_dx, g * ds_dy


def pa_terms(x, wg_y: float, scenario: Scenario, cfg: SystemConfig):
    """Per-PA quantities for a PA at abscissa ``x`` (scalar or array) on the
    waveguide at ``wg_y``.

    Returns ``(f, g_t, dg_dx, dg_dy, g_u)``: waveguide phase, wireless
    coefficient to the target and its target-position derivatives, and the
    wireless coefficients to the users with shape ``x.shape + (K,)``. The
    1/sqrt(M) factor is folded into ``f``.
    """
    x = np.asarray(x, dtype=float)
    k = cfg.kappa_c
    f = np.exp(-1j * cfg.kappa_g * (x - cfg.D)) / np.sqrt(cfg.M)

    tx, ty = scenario.target
    dx = tx - x
    dy = ty - wg_y
    r = np.sqrt(dx * dx + dy * dy + cfg.d_h**2)
    g_t = spherical_coeff(r, k)
    # d/dr [e^{-jkr}/(2kr)] = e^{-jkr}(-jkr - 1) / (2k r^2)
    dg_dr = g_t * (-1j * k * r - 1.0) / r
    dg_dx = dg_dr * dx / r
    dg_dy = dg_dr * dy / r

    u = scenario.users
    wy = np.asarray(wg_y, dtype=float)[..., None]
    ru = np.sqrt((u[:, 0] - x[..., None]) ** 2 + (u[:, 1] - wy) ** 2 + cfg.d_h**2)
    g_u = spherical_coeff(ru, k)
    return f, g_t, dg_dx, dg_dy, g_u


def target_channel_derivatives(layout: PassLayout, scenario: Scenario, cfg: SystemConfig):
    """Analytic d h_t / d x_t and d h_t / d y_t, each (N,)."""
    f = waveguide_phases(layout, cfg)
    _, _, dgx, dgy, _ = pa_terms(layout.x_pos, layout.wg_y[None, :], scenario, cfg)
    return (f * dgx).sum(axis=0), (f * dgy).sum(axis=0)


def effective_channels(layout: PassLayout, scenario: Scenario, cfg: SystemConfig) -> ChannelSet:
    f, g_t, dgx, dgy, g_u = pa_terms(layout.x_pos, layout.wg_y[None, :], scenario, cfg)
    # (M, N) and (M, N, K)
    H_per_pa = f[..., None] * g_u
    h_users = H_per_pa.sum(axis=0).T
    h_target = (f * g_t).sum(axis=0)
    theta, dth_dx, dth_dy = target_angle(scenario.target)
    steer = steering_vector(theta, cfg.M_r)
    ds_dx, ds_dy = steering_derivatives(scenario.target, cfg.M_r)
    return ChannelSet(
        h_users=h_users,
        h_target=h_target,
        H_per_pa=H_per_pa,
        steer=steer,
        theta=theta,
        dtheta=np.array([dth_dx, dth_dy]),
        dh_target_dx=(f * dgx).sum(axis=0),
        dh_target_dy=(f * dgy).sum(axis=0),
        dsteer_dx=ds_dx,
        dsteer_dy=ds_dy,
    )


def sinr(H: np.ndarray, W: np.ndarray, R_s: np.ndarray, sigma0_sq: float) -> np.ndarray:
    """Per-user SINR with the dedicated sensing signal treated as interference.

    ``H`` is (N, K), ``W`` is (N, K).
    """
    G = np.abs(H.conj().T @ W) ** 2          # G[k, i] = |h_k^H w_i|^2
    signal = np.diag(G)
    interf = G.sum(axis=1) - signal
    sens = np.real(np.einsum("nk,nm,mk->k", H.conj(), R_s, H))
    return signal / (interf + sens + sigma0_sq)
