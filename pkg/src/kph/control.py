"""Lifted-space control: damping injection, PBH detectability, Lyapunov
solvers and finite-horizon MPC by Riccati recursion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (CertificateError, ConfigError, DimensionError, EigenvalueFailure,
                     NotHurwitzError, NotSchurError, SolveError, StructureError)
from .galerkin import KpHModel
from .lifted import storage_value

MARGINAL_TOL = 1e-8
RANK_RTOL = 1e-9
LYAP_RTOL = 1e-9


def _gain(K_d, m):
    K = np.atleast_2d(np.asarray(K_d, dtype=float))
    if K.shape == (1, 1) and m != 1:
        K = K[0, 0] * np.eye(m)
    if K.shape != (m, m):
        raise DimensionError(f"gain is {K.shape}, expected ({m}, {m})")
    return K


# -- damping injection -------------------------------------------------------

@dataclass(frozen=True)
class DampingController:
    """``u = -K_d y + v_ext(t)`` with ``K_d`` symmetric PSD."""

    K_d: np.ndarray
    v_ext: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K_d, dtype=float))
        if K.shape[0] != K.shape[1] or np.max(np.abs(K - K.T)) > 1e-12:
            raise StructureError("K_d must be square and symmetric")
        if np.linalg.eigvalsh(K)[0] < 0:
            raise StructureError("K_d must be positive semidefinite")
        object.__setattr__(self, "K_d", K)


def damping_input(c: DampingController, y, t: float = 0.0):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if c.K_d.shape != (y.size, y.size):
        raise DimensionError(f"K_d is {c.K_d.shape} but y has {y.size} channels")
    v = np.zeros_like(y) if c.v_ext is None else np.atleast_1d(c.v_ext(t))
    return -c.K_d @ y + v


def closed_loop_matrix(m: KpHModel, K_d):
    """``A_cl = K_J - K_R - K_u K_d K_u^T``."""
    K = _gain(K_d, m.m)
    if np.linalg.eigvalsh(0.5 * (K + K.T))[0] < -1e-12:
        raise StructureError("K_d must be positive semidefinite")
    return m.K - m.K_u @ K @ m.K_u.T


# -- spectra -----------------------------------------------------------------

def eigenvalues(A):
    try:
        return np.linalg.eigvals(np.asarray(A, dtype=float))
    except np.linalg.LinAlgError as e:
        raise EigenvalueFailure(str(e)) from e


def check_detectability(A, C, tol: float = MARGINAL_TOL, rank_rtol: float = RANK_RTOL) -> dict:
    """PBH test: every eigenvalue with ``Re >= -tol`` must be observable through C.

    Rank of ``[lambda I - A; C]`` is counted from singular values above
    ``rank_rtol * sigma_max``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    N = A.shape[0]
    if A.shape != (N, N) or C.shape[1] != N:
        raise DimensionError("A must be N x N and C must have N columns")
    offending = []
    for lam in eigenvalues(A):
        if lam.real < -tol:
            continue
        stack = np.vstack([lam * np.eye(N) - A, C.astype(complex)])
        s = np.linalg.svd(stack, compute_uv=False)
        rank = int(np.sum(s > rank_rtol * s[0])) if s[0] > 0 else 0
        if rank < N:
            offending.append(complex(lam))
    return {"detectable": not offending, "offending_modes": offending}


# -- Lyapunov ----------------------------------------------------------------

def _check_q(Q, N):
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape != (N, N):
        raise DimensionError(f"Q is {Q.shape}, expected ({N}, {N})")
    return Q


def _symmetric_solution(L, Q, N):
    try:
        vecP = np.linalg.solve(L, -Q.reshape(-1))
    except np.linalg.LinAlgError as e:
        raise SolveError(f"vectorized Lyapunov system is singular: {e}") from e
    P = vecP.reshape(N, N)
    return 0.5 * (P + P.T)


def solve_lyapunov_ct(A, Q):
    """Solve ``A^T P + P A + Q = 0`` for Hurwitz A via the Kronecker system.

    With row-major vectorisation ``vec(A^T P) = (A^T kron I) vec P`` and
    ``vec(P A) = (I kron A^T) vec P``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    N = A.shape[0]
    Q = _check_q(Q, N)
    worst = float(np.max(eigenvalues(A).real))
    if worst >= 0:
        raise NotHurwitzError(f"A has an eigenvalue with real part {worst:.3e} >= 0")
    I = np.eye(N)
    P = _symmetric_solution(np.kron(A.T, I) + np.kron(I, A.T), Q, N)
    res = lyapunov_residual_ct(A, P, Q)
    if res > LYAP_RTOL * max(np.linalg.norm(Q), 1e-300):
        raise SolveError(f"Lyapunov residual {res:.3e} too large")
    return P


def solve_lyapunov_dt(A_d, Q):
    """Solve ``A_d^T P A_d - P + Q = 0`` for Schur-stable ``A_d``."""
    A = np.atleast_2d(np.asarray(A_d, dtype=float))
    N = A.shape[0]
    Q = _check_q(Q, N)
    rho = float(np.max(np.abs(eigenvalues(A)))) if N else 0.0
    if rho >= 1:
        raise NotSchurError(f"spectral radius {rho:.6g} >= 1")
    P = _symmetric_solution(np.kron(A.T, A.T) - np.eye(N * N), Q, N)
    res = lyapunov_residual_dt(A, P, Q)
    if res > LYAP_RTOL * max(np.linalg.norm(Q), 1e-300):
        raise SolveError(f"discrete Lyapunov residual {res:.3e} too large")
    return P


def lyapunov_residual_ct(A, P, Q) -> float:
    return float(np.linalg.norm(A.T @ P + P @ A + Q))


def lyapunov_residual_dt(A, P, Q) -> float:
    return float(np.linalg.norm(A.T @ P @ A - P + Q))


def lyapunov_slack_dt(A, P, Q) -> float:
    """Largest eigenvalue of ``A^T P A - P + Q`` (<= 0 when the inequality holds)."""
    S = A.T @ P @ A - P + Q
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


def lyapunov_slack_ct(A, P, Q) -> float:
    S = A.T @ P + P @ A + Q
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])


# -- MPC ---------------------------------------------------------------------

@dataclass(frozen=True)
class MPCProblem:
    """Finite-horizon tracking problem on the forward-Euler lifted model.

    Stage cost ``dt (|psi - psi_ref|^2_S + |u|^2_U)`` for ``steps`` stages,
    terminal cost ``(psi_T - psi_ref)^T P (psi_T - psi_ref)``.
    """

    model: KpHModel
    psi_ref: np.ndarray
    T: float
    dt: float
    P: np.ndarray
    Q_lyap: Optional[np.ndarray] = None
    state_cost: Optional[np.ndarray] = None
    input_cost: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        N, m = self.model.N, self.model.m
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.dt > self.T:
            raise ConfigError(f"dt={self.dt} exceeds the horizon T={self.T}")
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.shape != (N, N) or np.max(np.abs(P - P.T)) > 1e-9 * max(1.0, np.abs(P).max()):
            raise ConfigError("terminal weight must be a symmetric N x N matrix")
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P)[0] < -1e-12:
            raise ConfigError("terminal weight must be positive semidefinite")
        defaults = {"Q_lyap": np.eye(N), "state_cost": np.eye(N), "input_cost": np.eye(m)}
        for name, default in defaults.items():
            val = getattr(self, name)
            val = default if val is None else np.atleast_2d(np.asarray(val, dtype=float))
            if val.shape != default.shape:
                raise DimensionError(f"{name} must be {default.shape}")
            object.__setattr__(self, name, val)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "psi_ref", np.asarray(self.psi_ref, dtype=float).reshape(N))

    @property
    def steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    @property
    def A_d(self):
        return np.eye(self.model.N) + self.dt * self.model.K

    @property
    def B_d(self):
        return self.dt * self.model.K_u


def mpc_solve(prob: MPCProblem, psi0) -> dict:
    """Unconstrained finite-horizon optimum via backward Riccati recursion.

    Works in error coordinates ``e = psi - psi_ref`` with the affine drift
    ``c = (A_d - I) psi_ref`` (zero when the reference is an equilibrium).
    The value function is ``e^T S_k e + 2 s_k^T e + r_k``.
    """
    A, B, n_steps = prob.A_d, prob.B_d, prob.steps
    Qs, Ru = prob.dt * prob.state_cost, prob.dt * prob.input_cost
    c = (A - np.eye(A.shape[0])) @ prob.psi_ref
    S, s, r = prob.P.copy(), np.zeros(A.shape[0]), 0.0
    gains = [None] * n_steps
    for k in reversed(range(n_steps)):
        H = Ru + B.T @ S @ B
        try:
            Kfb = np.linalg.solve(H, B.T @ S @ A)
            kff = np.linalg.solve(H, B.T @ (S @ c + s))
        except np.linalg.LinAlgError as e:
            raise SolveError(f"Riccati step {k} is singular: {e}") from e
        gains[k] = (Kfb, kff)
        Acl = A - B @ Kfb
        ccl = c - B @ kff
        r = r + float(kff @ Ru @ kff + ccl @ S @ ccl + 2 * s @ ccl)
        s_new = Kfb.T @ Ru @ kff + Acl.T @ (S @ ccl + s)
        S = Qs + Kfb.T @ Ru @ Kfb + Acl.T @ S @ Acl
        S, s = 0.5 * (S + S.T), s_new
    e = np.asarray(psi0, dtype=float) - prob.psi_ref
    states, inputs, cost = [e + prob.psi_ref], [], 0.0
    for Kfb, kff in gains:
        u = -Kfb @ e - kff
        cost += float(e @ Qs @ e + u @ Ru @ u)
        e = A @ e + B @ u + c
        inputs.append(u)
        states.append(e + prob.psi_ref)
    cost += float(e @ prob.P @ e)
    return {"inputs": np.array(inputs), "states": np.array(states), "cost": cost}


def mpc_closed_loop(prob: MPCProblem, psi0, n_steps: int, rtol: float = 1e-9) -> dict:
    """Receding-horizon rollout on the forward-Euler model with certificates.

    Requires the terminal weight to satisfy ``A_d^T P A_d - P + Q_lyap <= 1e-9``
    and ``Q_lyap >= dt * state_cost`` (which makes the shifted candidate
    sequence a valid upper bound).  Raises CertificateError if the optimal
    cost ever increases by more than ``rtol`` relative.
    """
    A = prob.A_d
    slack = lyapunov_slack_dt(A, prob.P, prob.Q_lyap)
    if slack > 1e-9:
        raise ConfigError(f"terminal weight violates the discrete Lyapunov inequality (slack {slack:.3e})")
    gap = np.linalg.eigvalsh(prob.Q_lyap - prob.dt * prob.state_cost)[0]
    if gap < -1e-12:
        raise ConfigError("Q_lyap must dominate dt * state_cost for the cost certificate")
    psi = np.asarray(psi0, dtype=float).copy()
    states, inputs, costs, V = [psi.copy()], [], [], []
    for _ in range(n_steps):
        sol = mpc_solve(prob, psi)
        e = psi - prob.psi_ref
        costs.append(sol["cost"])
        V.append(float(e @ prob.P @ e))
        u = sol["inputs"][0]
        psi = A @ psi + prob.B_d @ u
        inputs.append(u)
        states.append(psi.copy())
    costs = np.array(costs)
    inc = np.diff(costs)
    allowed = rtol * np.maximum(np.abs(costs[:-1]), 1e-300)
    worst = float(np.max(inc - allowed, initial=-np.inf))
    monotone = bool(np.all(inc <= allowed))
    cert = {
        "lyapunov_slack": slack,
        "cost_nonincreasing": monotone,
        "worst_cost_increase": float(np.max(inc, initial=0.0)),
        "V": np.array(V),
        "costs": costs,
    }
    if not monotone:
        raise CertificateError(f"optimal cost increased by {worst:.3e} beyond tolerance")
    return {"states": np.array(states), "inputs": np.array(inputs), "certificate": cert}


def lyapunov_decrease(traj_psi, storage=None) -> float:
    """Largest step-to-step increase of the storage along a sampled rollout."""
    H = np.array([storage_value(p) if storage is None else storage_value(p, storage) for p in traj_psi])
    return float(np.max(np.diff(H), initial=-np.inf))
