"""Brute-force optimality oracles for the l1 problems (enumerate supports and signs)."""
import itertools

import numpy as np


def lasso_kkt(D, y, eta, tol=1e-9):
    """Unique minimiser of 0.5||Dx - y||^2 + eta ||x||_1 by support/sign enumeration."""
    m = D.shape[1]
    G, b = D.T @ D, D.T @ y
    if np.max(np.abs(b)) <= eta:
        return np.zeros(m)
    for size in range(1, m + 1):
        for A in itertools.combinations(range(m), size):
            A = list(A)
            GA = G[np.ix_(A, A)]
            for signs in itertools.product((-1.0, 1.0), repeat=size):
                s = np.array(signs)
                xa = np.linalg.solve(GA, b[A] - eta * s)
                if np.any(np.sign(xa) != s):
                    continue
                x = np.zeros(m)
                x[A] = xa
                if np.max(np.abs(b - G @ x)) <= eta * (1 + tol) + tol:
                    return x
    raise RuntimeError("no KKT point found")


def _null(M, c):
    if M.shape[0] == 0:
        return np.eye(c)
    _, sv, Vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(sv > 1e-10 * sv[0])) if sv.size else 0
    return Vt[r:].T


def constrained_lasso_kkt(D, y, K, eta, tol=1e-8):
    """Minimiser of 0.5||y - D K a||^2 + eta ||K a||_1 (generic K, nonzero solution).

    For each zero set Z of g = K a with |Z| < cols(K) and each sign pattern
    on the rest, solve the stationarity system on null(K_Z) and keep the
    candidate whose signs agree and whose multipliers on Z lie in
    [-eta, eta].  Returns (alpha, gamma).
    """
    A = D @ K
    d, c = K.shape
    AtA, Aty = A.T @ A, A.T @ y
    found = []
    for z in range(c):
        for Z in itertools.combinations(range(d), z):
            Z = list(Z)
            P = [i for i in range(d) if i not in Z]
            N = _null(K[Z], c)
            if N.shape[1] == 0:
                continue
            KP = K[P]
            M = N.T @ AtA @ N
            S = np.array(list(itertools.product((-1.0, 1.0), repeat=len(P))))
            rhs = (N.T @ Aty)[None, :] - eta * S @ (KP @ N)
            beta = np.linalg.solve(M, rhs.T).T
            alpha = beta @ N.T
            vals = alpha @ KP.T
            ok = np.all(np.sign(vals) == S, axis=1) & np.all(np.abs(vals) > 1e-12, axis=1)
            for idx in np.flatnonzero(ok):
                a, s = alpha[idx], S[idx]
                grad = AtA @ a - Aty + eta * KP.T @ s
                if Z:
                    nu, *_ = np.linalg.lstsq(K[Z].T, -grad, rcond=None)
                    if np.linalg.norm(K[Z].T @ nu + grad) > tol * max(1.0, np.linalg.norm(grad)):
                        continue
                    if np.max(np.abs(nu)) > eta * (1 + 1e-7):
                        continue
                elif np.linalg.norm(grad) > tol:
                    continue
                found.append(a)
    if not found:
        raise RuntimeError("no KKT point found")
    a = found[0]
    return a, K @ a


def constrained_instance(rng, d=None, c=None, n=10):
    """Random constrained problem: D (n x d), orthonormal K (d x c), y and a penalty that keeps the solution nonzero."""
    d = d or int(rng.integers(6, 13))
    c = c or int(rng.integers(2, 5))
    D = rng.standard_normal((n, d)) / np.sqrt(n)
    Phi = rng.standard_normal((d - c, d))
    _, _, Vt = np.linalg.svd(Phi)
    K = Vt[d - c:].T
    y = rng.standard_normal(n)
    eta = float(rng.uniform(0.1, 0.5)) * np.linalg.norm(K.T @ D.T @ y) / np.sqrt(d)
    return D, y, K, eta
