"""Port-Hamiltonian systems: vector fields, energy balance and RK4 simulation.

A system is ``x' = (J(x) - R(x)) grad H(x) + G(x) u`` with physical output
``y = G(x)^T grad H(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, NumericalError, StructureError

STRUCTURE_TOL = 1e-10
BLOWUP_NORM = 1e12

Signal = Callable[[float], np.ndarray]


def _finite(v, what):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite {what}: {v}")
    return v


@dataclass(frozen=True)
class PHSystem:
    """A (possibly nonlinear) port-Hamiltonian system.

    ``J``, ``R``, ``G``, ``H`` and ``gradH`` are callables of the state.
    ``hessH`` is optional and only used by diagnostics.
    """

    n: int
    m: int
    J: Callable[[np.ndarray], np.ndarray]
    R: Callable[[np.ndarray], np.ndarray]
    G: Callable[[np.ndarray], np.ndarray]
    H: Callable[[np.ndarray], float]
    gradH: Callable[[np.ndarray], np.ndarray]
    hessH: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "ph"
    params: dict = field(default_factory=dict, compare=False)

    def structure(self, x, check: bool = True):
        """Return ``(J(x), R(x), G(x))`` after the lazy structure checks."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionError(f"state has shape {x.shape}, expected ({self.n},)")
        Jx = np.asarray(self.J(x), dtype=float)
        Rx = np.asarray(self.R(x), dtype=float)
        Gx = np.asarray(self.G(x), dtype=float).reshape(self.n, self.m)
        if check:
            check_structure(Jx, Rx)
        return Jx, Rx, Gx


def check_structure(Jx, Rx, tol=STRUCTURE_TOL):
    """Raise StructureError unless ``Jx`` is skew and ``Rx`` symmetric PSD."""
    skew = np.max(np.abs(Jx + Jx.T), initial=0.0)
    if skew > tol:
        raise StructureError(f"J + J^T has max entry {skew:.3e} > {tol:g}")
    asym = np.max(np.abs(Rx - Rx.T), initial=0.0)
    if asym > tol:
        raise StructureError(f"R - R^T has max entry {asym:.3e} > {tol:g}")
    if Rx.size:
        lam = np.linalg.eigvalsh(0.5 * (Rx + Rx.T))[0]
        if lam < -tol:
            raise StructureError(f"R has eigenvalue {lam:.3e} < -{tol:g}")


def sub_fields(sys: PHSystem, x, check: bool = True):
    """Conservative and dissipative sub-fields ``(J grad H, R grad H)``."""
    x = _finite(x, "state")
    Jx, Rx, _ = sys.structure(x, check)
    g = _finite(sys.gradH(x), "gradH")
    return _finite(Jx @ g, "v_J"), _finite(Rx @ g, "v_R")


def drift(sys: PHSystem, x, check: bool = True):
    """Autonomous drift ``(J(x) - R(x)) grad H(x)``."""
    vJ, vR = sub_fields(sys, x, check)
    return vJ - vR


def vector_field(sys: PHSystem, x, u, check: bool = True):
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (sys.m,):
        raise DimensionError(f"input has shape {u.shape}, expected ({sys.m},)")
    _, _, Gx = sys.structure(x, check=False)
    return _finite(drift(sys, x, check) + Gx @ u, "vector field")


def output(sys: PHSystem, x, check: bool = False):
    """Physical port output ``G(x)^T grad H(x)``."""
    x = _finite(x, "state")
    _, _, Gx = sys.structure(x, check)
    return _finite(Gx.T @ sys.gradH(x), "output")


def energy_rate(sys: PHSystem, x, u, check: bool = True) -> float:
    """Time derivative of H along the flow: ``y^T u - grad H^T R grad H``.

    Never exceeds the supplied power ``y^T u`` when R is PSD.
    """
    x = _finite(x, "state")
    u = _finite(np.atleast_1d(u), "input")
    _, Rx, Gx = sys.structure(x, check)
    g = np.asarray(sys.gradH(x), dtype=float)
    supply = float((Gx.T @ g) @ u)
    dissipation = float(g @ Rx @ g)
    return float(_finite(supply - dissipation, "energy rate"))


@dataclass(frozen=True)
class Trajectory:
    """Sampled trajectory. Lifted runs additionally carry ``psi`` and ``Hlift``."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    energies: np.ndarray
    psi: Optional[np.ndarray] = None
    Hlift: Optional[np.ndarray] = None

    def __post_init__(self):
        k = len(self.times)
        cols = [self.states, self.inputs, self.outputs, self.energies]
        if self.psi is not None:
            cols += [self.psi, self.Hlift]
        if any(len(c) != k for c in cols):
            raise DimensionError("trajectory columns have unequal lengths")
        if k > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)


def _as_signal(u, m) -> Signal:
    if u is None:
        zero = np.zeros(m)
        return lambda t: zero
    if callable(u):
        return lambda t: np.atleast_1d(np.asarray(u(t), dtype=float))
    const = np.atleast_1d(np.asarray(u, dtype=float))
    return lambda t: const


def rk4_step(f, t, x, h):
    """One classical RK4 step of size ``h`` (negative ``h`` integrates backwards)."""
    k1 = f(t, x)
    k2 = f(t + h / 2, x + h / 2 * k1)
    k3 = f(t + h / 2, x + h / 2 * k2)
    k4 = f(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4(f, x0, t_end, dt, blowup=BLOWUP_NORM):
    """Fixed-step classical RK4 for ``x' = f(t, x)``.

    The final step is shortened so the grid ends exactly at ``t_end``.
    Returns ``(times, states)``.
    """
    if not dt > 0 or not t_end > 0:
        raise ValueError("dt and t_end must be positive")
    steps = int(np.ceil(t_end / dt - 1e-9))
    times = np.minimum(np.arange(steps + 1) * dt, t_end)
    x = np.array(x0, dtype=float)
    out = np.empty((steps + 1, x.size))
    out[0] = x
    for k in range(steps):
        x = rk4_step(f, times[k], x, times[k + 1] - times[k])
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > blowup:
            raise NumericalError(f"integration blew up at t={times[k + 1]:g}")
        out[k + 1] = x
    return times, out


def simulate(sys: PHSystem, x0, u=None, t_end=1.0, dt=1e-3, check=False) -> Trajectory:
    """Integrate the system from ``x0`` under the input signal ``u(t)``.

    ``u`` may be None (zero input), a constant vector, or a callable of time.
    Structure checks are off by default inside the integrator loop.
    """
    sig = _as_signal(u, sys.m)
    times, X = rk4(lambda t, x: vector_field(sys, x, sig(t), check), x0, t_end, dt)
    U = np.array([sig(t) for t in times]).reshape(len(times), sys.m)
    Y = np.array([output(sys, x) for x in X]).reshape(len(times), sys.m)
    E = np.array([sys.H(x) for x in X], dtype=float)
    return Trajectory(times, X, U, Y, E)


# -- builtin systems ---------------------------------------------------------

def pendulum(b: float = 0.3) -> PHSystem:
    """Damped pendulum, state (theta, p), H = p^2/2 + 1 - cos(theta)."""
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    R = np.array([[0.0, 0.0], [0.0, float(b)]])
    G = np.array([[0.0], [1.0]])
    return PHSystem(
        n=2,
        m=1,
        J=lambda x: J,
        R=lambda x: R,
        G=lambda x: G,
        H=lambda x: 0.5 * x[1] ** 2 + 1.0 - np.cos(x[0]),
        gradH=lambda x: np.array([np.sin(x[0]), x[1]]),
        hessH=lambda x: np.array([[np.cos(x[0]), 0.0], [0.0, 1.0]]),
        name="pendulum",
        params={"b": float(b)},
    )


@dataclass(frozen=True)
class LinearPHSystem:
    """Constant-matrix system ``x' = (J - R) Q x + G u``, ``H = x^T Q x / 2``."""

    J: np.ndarray
    R: np.ndarray
    G: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        n = self.J.shape[0]
        for name in ("J", "R", "Q"):
            if getattr(self, name).shape != (n, n):
                raise DimensionError(f"{name} must be {n}x{n}")
        if self.G.ndim != 2 or self.G.shape[0] != n:
            raise DimensionError(f"G must have {n} rows")
        check_structure(self.J, self.R)
        if np.max(np.abs(self.Q - self.Q.T)) > STRUCTURE_TOL:
            raise StructureError("Q must be symmetric")
        if np.linalg.eigvalsh(self.Q)[0] <= 0:
            raise StructureError("Q must be positive definite")

    @property
    def n(self):
        return self.J.shape[0]

    @property
    def m(self):
        return self.G.shape[1]

    @property
    def A(self):
        """Drift matrix ``(J - R) Q``."""
        return (self.J - self.R) @ self.Q

    def as_ph(self) -> PHSystem:
        J, R, G, Q = self.J, self.R, self.G, self.Q
        return PHSystem(
            n=self.n,
            m=self.m,
            J=lambda x: J,
            R=lambda x: R,
            G=lambda x: G,
            H=lambda x: 0.5 * float(x @ Q @ x),
            gradH=lambda x: Q @ x,
            hessH=lambda x: Q,
            name="linear_ph",
            params={"J": J, "R": R, "G": G, "Q": Q},
        )


def linear_ph(J, R, G, Q=None) -> PHSystem:
    """Build the nonlinear-interface view of a linear pH system."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G.reshape(-1, 1)
    Q = np.eye(J.shape[0]) if Q is None else np.atleast_2d(np.asarray(Q, dtype=float))
    return LinearPHSystem(J, R, G, Q).as_ph()


def random_linear_ph(rng, n, m=1, rank_R=None, Q=False) -> LinearPHSystem:
    """Random skew J, PSD R (optionally rank deficient), Gaussian G."""
    A = rng.standard_normal((n, n))
    J = A - A.T
    k = n if rank_R is None else rank_R
    B = rng.standard_normal((n, k))
    R = B @ B.T / max(k, 1)
    G = rng.standard_normal((n, m))
    if Q:
        C = rng.standard_normal((n, n))
        Qm = C @ C.T + n * np.eye(n)
        Qm = 0.5 * (Qm + Qm.T)
    else:
        Qm = np.eye(n)
    return LinearPHSystem(J, 0.5 * (R + R.T), G, Qm)
