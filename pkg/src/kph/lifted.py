"""Lifted surrogate dynamics, quadratic storage functions and passivity checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError, StructureError
from .galerkin import KpHModel
from .ph_model import Trajectory, _as_signal, rk4

PASSIVITY_TOL = 1e-9


@dataclass(frozen=True)
class LiftedState:
    psi: np.ndarray
    t: float = 0.0


@dataclass(frozen=True)
class StorageSpec:
    """Quadratic storage ``psi^T P psi / 2`` with ``P`` symmetric positive definite."""

    P: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.P is None:
            return
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise DimensionError("storage weight must be square")
        if np.max(np.abs(P - P.T)) > 1e-12:
            raise StructureError("storage weight must be symmetric")
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P)[0] <= 0:
            raise StructureError("storage weight must be positive definite")
        object.__setattr__(self, "P", P)

    def matrix(self, N: int) -> np.ndarray:
        if self.P is None:
            return np.eye(N)
        if self.P.shape != (N, N):
            raise DimensionError(f"storage weight is {self.P.shape}, model has N={N}")
        return self.P


IDENTITY_STORAGE = StorageSpec()


def _vec(v, size, what):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (size,):
        raise DimensionError(f"{what} has shape {v.shape}, expected ({size},)")
    return v


def lifted_drift(m: KpHModel, psi, u=None):
    psi = _vec(psi, m.N, "psi")
    u = np.zeros(m.m) if u is None else _vec(u, m.m, "u")
    return m.K @ psi + m.K_u @ u


def lifted_output(m: KpHModel, psi, storage: StorageSpec = IDENTITY_STORAGE):
    """Lifted port output ``K_u^T P psi``."""
    psi = _vec(psi, m.N, "psi")
    return m.K_u.T @ (storage.matrix(m.N) @ psi)


def storage_value(psi, storage: StorageSpec = IDENTITY_STORAGE) -> float:
    psi = np.atleast_1d(np.asarray(psi, dtype=float))
    return 0.5 * float(psi @ storage.matrix(len(psi)) @ psi)


def check_passivity_conditions(m: KpHModel, storage: StorageSpec = IDENTITY_STORAGE,
                               tol: float = PASSIVITY_TOL) -> dict:
    """Check ``P K_J + K_J^T P = 0`` and ``P K_R + K_R^T P >= 0``."""
    P = storage.matrix(m.N)
    skew = P @ m.K_J + m.K_J.T @ P
    S = P @ m.K_R + m.K_R.T @ P
    skew_res = float(np.linalg.norm(skew))
    lam = float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])
    return {
        "skew_residual": skew_res,
        "psd_min_eig": lam,
        "skew_ok": skew_res <= tol,
        "psd_ok": lam >= -tol,
        "passed": skew_res <= tol and lam >= -tol,
    }


def require_passive(m: KpHModel, storage: StorageSpec):
    rep = check_passivity_conditions(m, storage)
    if not rep["passed"]:
        raise StructureError(
            f"storage weight does not certify passivity: skew residual "
            f"{rep['skew_residual']:.3e}, PSD min eig {rep['psd_min_eig']:.3e}")
    return rep


def lifted_energy_rate(m: KpHModel, psi, u=None, storage: StorageSpec = IDENTITY_STORAGE) -> float:
    """``d/dt`` of the storage: ``psi^T P (K_J - K_R) psi + psi^T P K_u u``."""
    psi = _vec(psi, m.N, "psi")
    u = np.zeros(m.m) if u is None else _vec(u, m.m, "u")
    P = storage.matrix(m.N)
    return float(psi @ P @ (m.K @ psi) + psi @ P @ (m.K_u @ u))


def supply_rate(m: KpHModel, psi, u, storage: StorageSpec = IDENTITY_STORAGE) -> float:
    return float(lifted_output(m, psi, storage) @ _vec(u, m.m, "u"))


def euler_step(m: KpHModel, psi, u, dt: float, storage: StorageSpec = IDENTITY_STORAGE):
    """One forward-Euler step and its energy-balance residual.

    The residual is ``[H(psi+) - H(psi)] - dt (-psi^T K_R psi + y^T u)``,
    which is ``O(dt^2)`` under the structure constraints.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive")
    psi = _vec(psi, m.N, "psi")
    u = np.zeros(m.m) if u is None else _vec(u, m.m, "u")
    P = storage.matrix(m.N)
    nxt = psi + dt * (m.K @ psi + m.K_u @ u)
    dH = storage_value(nxt, storage) - storage_value(psi, storage)
    predicted = dt * (-float(psi @ P @ m.K_R @ psi) + supply_rate(m, psi, u, storage))
    return nxt, dH - predicted


def simulate_lifted(m: KpHModel, psi0, u=None, t_end=1.0, dt=1e-3,
                    storage: StorageSpec = IDENTITY_STORAGE, feedback=None) -> Trajectory:
    """RK4 rollout of the lifted model.

    ``u`` is an open-loop signal of time; ``feedback(t, psi)`` (if given)
    overrides it with a state feedback.  Returns a Trajectory whose
    ``states`` and ``psi`` columns both hold the lifted state.
    """
    sig = _as_signal(u, m.m)
    law = feedback if feedback is not None else (lambda t, p: sig(t))

    def f(t, p):
        return m.K @ p + m.K_u @ law(t, p)

    times, Psi = rk4(f, _vec(psi0, m.N, "psi0"), t_end, dt)
    U = np.array([np.atleast_1d(law(t, p)) for t, p in zip(times, Psi)]).reshape(len(times), m.m)
    Y = np.array([lifted_output(m, p, storage) for p in Psi]).reshape(len(times), m.m)
    E = np.array([storage_value(p, storage) for p in Psi])
    return Trajectory(times, Psi, U, Y, E, psi=Psi, Hlift=E)


def passivity_gap(traj: Trajectory) -> float:
    """``H(T) - H(0) - int y^T u dt`` with trapezoid quadrature; <= 0 when passive."""
    supply = np.einsum("ij,ij->i", traj.outputs, traj.inputs)
    return float(traj.Hlift[-1] - traj.Hlift[0] - np.trapezoid(supply, traj.times))


def largest_passive_dt(m: KpHModel, psi0, u_of_t, t_end=1.0,
                       dts=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5),
                       storage: StorageSpec = IDENTITY_STORAGE, tol=0.0):
    """Largest ``dt`` in the sweep for which every Euler step satisfies
    ``H(psi+) - H(psi) <= dt y^T u + tol`` along the test trajectory.

    Returns None if no step size in the sweep passes.  Forward Euler adds
    ``dt^2 |psi'|^2 / 2`` to every step, so with a singular ``K_R`` the
    strict inequality can fail for every ``dt`` unless ``tol > 0``.
    """
    sig = _as_signal(u_of_t, m.m)
    for dt in sorted(dts, reverse=True):
        psi = _vec(psi0, m.N, "psi0")
        ok = True
        for k in range(int(round(t_end / dt))):
            u = sig(k * dt)
            nxt, _ = euler_step(m, psi, u, dt, storage)
            if storage_value(nxt, storage) - storage_value(psi, storage) > dt * supply_rate(m, psi, u, storage) + tol:
                ok = False
                break
            psi = nxt
        if ok:
            return dt
    return None
