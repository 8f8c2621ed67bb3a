"""Independent reference computations used by the tests.

Each oracle deliberately avoids the code path it checks: plain loops
instead of vectorised reductions, dense stacked least squares instead of
Riccati recursion, finite differences instead of analytic Jacobians.
"""

import numpy as np


def naive_projection(d, sys, s):
    """Double-loop weighted sums for every raw projection entry."""
    N, m = d.N, sys.m
    M = np.zeros((N, N))
    AJ = np.zeros((N, N))
    AR = np.zeros((N, N))
    AC = np.zeros((N, N))
    AU = np.zeros((N, m))
    for x, w in zip(s.points, s.weights):
        psi = d.eval(x)
        D = d.jac(x)
        g = sys.gradH(x)
        Jx, Rx, Gx = sys.J(x), sys.R(x), np.reshape(sys.G(x), (sys.n, m))
        for i in range(N):
            kJi = sum(D[i, a] * sum(Jx[a, b] * g[b] for b in range(sys.n)) for a in range(sys.n))
            kRi = sum(D[i, a] * sum(Rx[a, b] * g[b] for b in range(sys.n)) for a in range(sys.n))
            for j in range(N):
                M[i, j] += w * psi[i] * psi[j]
                AJ[i, j] += w * kJi * psi[j]
                AC[i, j] += w * kRi * psi[j]
                AR[i, j] += w * sum(D[i, a] * Rx[a, b] * D[j, b]
                                    for a in range(sys.n) for b in range(sys.n))
            for c in range(m):
                AU[i, c] += w * sum(D[i, a] * Gx[a, c] for a in range(sys.n))
    return {"M": M, "A_J": AJ, "A_R": AR, "A_R_cross": AC, "A_u": AU}


def central_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def batch_mpc(prob, psi0):
    """Stacked dense least squares over all inputs of the horizon.

    Cost = sum_k dt(|e_k|^2_S + |u_k|^2_U) + e_n^T P e_n with
    e_{k+1} = A_d e_k + B_d u_k + (A_d - I) psi_ref.
    """
    A, B, n = prob.A_d, prob.B_d, prob.steps
    N, m = B.shape
    c = (A - np.eye(N)) @ prob.psi_ref
    e0 = np.asarray(psi0, dtype=float) - prob.psi_ref
    Phi, Gam, off = [np.eye(N)], [np.zeros((N, n * m))], [np.zeros(N)]
    for k in range(n):
        G = A @ Gam[-1]
        G[:, k * m:(k + 1) * m] += B
        Phi.append(A @ Phi[-1])
        Gam.append(G)
        off.append(A @ off[-1] + c)

    def sqrt_psd(W):
        lam, V = np.linalg.eigh(0.5 * (W + W.T))
        return (V * np.sqrt(np.clip(lam, 0, None))).T

    Ls, Lu, Lp = sqrt_psd(prob.dt * prob.state_cost), sqrt_psd(prob.dt * prob.input_cost), sqrt_psd(prob.P)
    rows, rhs = [], []
    for k in range(n):
        rows.append(Ls @ Gam[k])
        rhs.append(-Ls @ (Phi[k] @ e0 + off[k]))
        sel = np.zeros((m, n * m))
        sel[:, k * m:(k + 1) * m] = Lu
        rows.append(sel)
        rhs.append(np.zeros(m))
    rows.append(Lp @ Gam[n])
    rhs.append(-Lp @ (Phi[n] @ e0 + off[n]))
    Amat, b = np.vstack(rows), np.concatenate(rhs)
    U = np.linalg.lstsq(Amat, b, rcond=None)[0]
    states = np.array([Phi[k] @ e0 + Gam[k] @ U + off[k] + prob.psi_ref for k in range(n + 1)])
    return {"inputs": U.reshape(n, m), "states": states, "cost": float(np.sum((Amat @ U - b) ** 2))}


def random_structured(rng, N, m, rank_R=None):
    """Random (K_J, K_R, K_u) with K_J skew and K_R PSD of the given rank."""
    A = rng.standard_normal((N, N))
    r = N if rank_R is None else rank_R
    B = rng.standard_normal((N, r))
    return A - A.T, B @ B.T / max(r, 1), rng.standard_normal((N, m))
