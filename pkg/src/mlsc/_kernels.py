"""Compiled inner loops of the l1 solvers."""
import numpy as np
from numba import njit


@njit(cache=True)
def _soft(v, t):
    out = np.empty_like(v)
    for i in range(v.size):
        a = abs(v[i]) - t
        out[i] = np.sign(v[i]) * a if a > 0 else 0.0
    return out


@njit(cache=True)
def admm_loop(K, KT, H, b, DK, y, rho, eta, alpha, u, tol_primal, tol_dual, max_iters, track):
    Ka = K @ alpha
    g = Ka.copy()
    thr = eta / rho
    hist = np.zeros((max_iters if track else 0, 2))
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        g_old = g
        g = _soft(Ka + u, thr)
        alpha = H @ (b + rho * (KT @ (g - u)))
        Ka = K @ alpha
        r = Ka - g
        u = u + r
        if track:
            res = y - DK @ alpha
            hist[it - 1, 0] = 0.5 * (res @ res) + eta * np.sum(np.abs(Ka))
            hist[it - 1, 1] = np.sqrt(r @ r)
        dg = KT @ (g - g_old)
        if np.sqrt(r @ r) <= tol_primal and rho * np.sqrt(dg @ dg) <= tol_dual:
            converged = True
            break
    return alpha, g, u, it, converged, hist[:it]


@njit(cache=True)
def fista_loop(G, b, L, eta, x, tol, max_iters):
    z = x.copy()
    t = 1.0
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        x_new = _soft(z - (G @ z - b) / L, eta / L)
        step = x_new - x
        if (z - x_new) @ step > 0:
            # momentum points uphill: restart
            t = 1.0
            z = x_new
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = x_new + ((t - 1.0) / t_new) * step
            t = t_new
        x = x_new
        if np.sqrt(step @ step) <= tol * max(1.0, np.sqrt(x @ x)):
            converged = True
            break
    return x, it, converged
