"""Shared helpers and independent oracles for the test suite."""
import numpy as np

from pass_isac.geometry import PassLayout, waveguide_y


def random_layout(cfg, rng):
    """Feasible random layout: sorted positions with the minimum spacing."""
    span = cfg.L - (cfg.M - 1) * cfg.delta
    x = np.sort(rng.uniform(0, span, (cfg.M, cfg.N)), axis=0)
    x = cfg.D + x + np.arange(cfg.M)[:, None] * cfg.delta
    return PassLayout(x, waveguide_y(cfg), cfg.D, cfg.d_h).validate(cfg)


def random_psd(rng, n, scale=1.0):
    G = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    R = G @ G.conj().T
    return scale * R / np.real(np.trace(R))


def brute_target_channel(x_pos, wg_y, d_h, target, cfg):
    """Target channel and its target-position derivatives from raw
    coordinates, one PA at a time (no vectorised library code)."""
    M, N = x_pos.shape
    k = 2 * np.pi * cfg.f_c / cfg.c
    kg = k * cfg.n_e
    h = np.zeros(N, complex)
    hx = np.zeros(N, complex)
    hy = np.zeros(N, complex)
    for n in range(N):
        for m in range(M):
            px, py = x_pos[m, n], wg_y[n]
            r = np.sqrt((target[0] - px) ** 2 + (target[1] - py) ** 2 + d_h**2)
            phase = np.exp(-1j * kg * (px - cfg.D)) / np.sqrt(M)
            g = np.exp(-1j * k * r) / (2 * k * r)
            # d/dr (e^{-jkr} / r) = -(jk + 1/r) e^{-jkr} / r
            dg = -(1j * k + 1 / r) * g
            h[n] += phase * g
            hx[n] += phase * dg * (target[0] - px) / r
            hy[n] += phase * dg * (target[1] - py) / r
    return h, hx, hy


def brute_steering(target, M_r):
    """Steering vector and derivatives, written out independently."""
    x, y = target
    rho = np.hypot(x, y)
    s = y / rho
    i = np.arange(M_r)
    a = np.exp(-1j * np.pi * i * s)
    ds_dx = -x * y / rho**3
    ds_dy = x**2 / rho**3
    return a, -1j * np.pi * i * ds_dx * a, -1j * np.pi * i * ds_dy * a


def brute_fim(A, Ax, Ay, S, beta, sigmas_sq):
    """FIM of the complex Gaussian model vec(Y) = beta vec(A S) + noise,
    (2/s2) Re(du_i^H du_j) with the parameter derivatives written out."""
    d = [beta * (Ax @ S).ravel(), beta * (Ay @ S).ravel(), (A @ S).ravel(), 1j * (A @ S).ravel()]
    J = np.empty((4, 4))
    for i in range(4):
        for j in range(4):
            J[i, j] = 2.0 / sigmas_sq * np.real(np.vdot(d[i], d[j]))
    return J


def brute_a_matrices(layout, target, cfg):
    """A = a h^H and its target derivatives built from the brute-force pieces."""
    h, hx, hy = brute_target_channel(layout.x_pos, layout.wg_y, cfg.d_h, target, cfg)
    a, ax, ay = brute_steering(target, cfg.M_r)
    A = np.outer(a, h.conj())
    return A, np.outer(ax, h.conj()) + np.outer(a, hx.conj()), np.outer(ay, h.conj()) + np.outer(a, hy.conj())


def random_target(cfg, rng):
    return np.array([rng.uniform(cfg.D, cfg.D + cfg.D_x), rng.uniform(-cfg.D_y / 2, cfg.D_y / 2)])


def random_beta(rng, mag=1e-3):
    return mag * np.exp(1j * rng.uniform(0, 2 * np.pi))
