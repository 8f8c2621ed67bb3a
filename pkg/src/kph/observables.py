"""Observable dictionaries with analytic Jacobians and pointwise generator action."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError
from .ph_model import PHSystem, sub_fields


@dataclass(frozen=True)
class Dictionary:
    """N observables ``Psi: R^n -> R^N`` with Jacobian ``jac: R^n -> R^{N x n}``.

    ``domain`` is an optional ``(lower, upper)`` bounding box; evaluations
    outside it are allowed and only flagged by :meth:`in_domain`.
    """

    n: int
    N: int
    eval: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    labels: tuple
    domain: Optional[tuple] = None

    def __post_init__(self):
        if self.N < 1:
            raise ConfigError("a dictionary needs at least one observable")
        if len(self.labels) != self.N:
            raise ConfigError("one label per observable required")

    def __call__(self, x):
        return eval_dictionary(self, x)

    def in_domain(self, x) -> bool:
        if self.domain is None:
            return True
        lo, hi = self.domain
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= lo) and np.all(x <= hi))


@dataclass(frozen=True)
class GeneratorAction:
    """Pointwise generator components applied to every observable.

    ``kJ[i] = grad psi_i . v_J``, ``kR[i] = grad psi_i . v_R`` and
    ``kU[i, j] = grad psi_i . g_j``.
    """

    kJ: np.ndarray
    kR: np.ndarray
    kU: np.ndarray


def eval_dictionary(d: Dictionary, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d.n,):
        raise DimensionError(f"state has shape {x.shape}, expected ({d.n},)")
    psi = np.asarray(d.eval(x), dtype=float).reshape(d.N)
    if not np.all(np.isfinite(psi)):
        raise NumericalError(f"non-finite observable value at x={x}")
    return psi


def eval_jacobian(d: Dictionary, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    D = np.asarray(d.jac(x), dtype=float).reshape(d.N, d.n)
    if not np.all(np.isfinite(D)):
        raise NumericalError(f"non-finite dictionary Jacobian at x={x}")
    return D


def generator_action(d: Dictionary, sys: PHSystem, x, check: bool = True) -> GeneratorAction:
    """Apply the conservative, dissipative and input generators to ``Psi`` at ``x``."""
    if d.n != sys.n:
        raise DimensionError(f"dictionary acts on R^{d.n}, system state is R^{sys.n}")
    x = np.asarray(x, dtype=float)
    D = eval_jacobian(d, x)
    vJ, vR = sub_fields(sys, x, check)
    _, _, Gx = sys.structure(x, check=False)
    out = GeneratorAction(D @ vJ, D @ vR, D @ Gx)
    if not (np.all(np.isfinite(out.kJ)) and np.all(np.isfinite(out.kR))):
        raise NumericalError(f"non-finite generator action at x={x}")
    return out


# -- builtins ----------------------------------------------------------------

def identity(n: int) -> Dictionary:
    eye = np.eye(n)
    return Dictionary(n, n, lambda x: np.array(x, dtype=float), lambda x: eye,
                      tuple(f"x{i + 1}" for i in range(n)))


def q_scaled(Q) -> Dictionary:
    """``Psi(x) = Q x``, which equals grad H for a linear pH system with storage Q."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Q.shape[0]
    if Q.shape != (n, n):
        raise ConfigError("Q must be square")
    return Dictionary(n, n, lambda x: Q @ x, lambda x: Q,
                      tuple(f"(Qx){i + 1}" for i in range(n)))


def pendulum_dictionary() -> Dictionary:
    """``[sin(theta), p, cos(theta), H]`` for the pendulum state ``(theta, p)``."""

    def ev(x):
        th, p = x
        return np.array([np.sin(th), p, np.cos(th), 0.5 * p * p + 1.0 - np.cos(th)])

    def jac(x):
        th, p = x
        s, c = np.sin(th), np.cos(th)
        return np.array([[c, 0.0], [0.0, 1.0], [-s, 0.0], [s, p]])

    return Dictionary(2, 4, ev, jac, ("sin(theta)", "p", "cos(theta)", "H"))


def polynomial(n: int, degree: int, include_constant: bool = False) -> Dictionary:
    """All monomials of total degree 1..degree (and optionally the constant).

    Ordered by degree, then lexicographically by variable index, e.g.
    ``x1, x2, x1^2, x1 x2, x2^2`` for ``n=2, degree=2``.
    """
    if degree < 1 or n < 1:
        raise ConfigError("polynomial dictionary needs n >= 1 and degree >= 1")
    exps = [np.zeros(n, dtype=int)] if include_constant else []
    for deg in range(1, degree + 1):
        for combo in combinations_with_replacement(range(n), deg):
            e = np.zeros(n, dtype=int)
            for i in combo:
                e[i] += 1
            exps.append(e)
    E = np.array(exps)

    def ev(x):
        return np.prod(x[None, :] ** E, axis=1)

    def jac(x):
        D = np.zeros((len(E), n))
        for j in range(n):
            Ej = E.copy()
            coef = Ej[:, j].astype(float)
            Ej[:, j] = np.maximum(Ej[:, j] - 1, 0)
            D[:, j] = coef * np.prod(x[None, :] ** Ej, axis=1)
        return D

    labels = tuple(
        "1" if not e.any() else "*".join(
            f"x{i + 1}" + (f"^{k}" if k > 1 else "") for i, k in enumerate(e) if k)
        for e in E)
    return Dictionary(n, len(E), ev, jac, labels)


def gaussian_rbf(centers, width: float) -> Dictionary:
    """Gaussian bumps ``exp(-|x - c|^2 / (2 width^2))``."""
    C = np.atleast_2d(np.asarray(centers, dtype=float))
    if C.shape[0] < 1 or C.size == 0:
        raise ConfigError("at least one RBF center required")
    if not width > 0:
        raise ConfigError("RBF width must be positive")
    s2 = float(width) ** 2

    def ev(x):
        r = x[None, :] - C
        return np.exp(-np.sum(r * r, axis=1) / (2 * s2))

    def jac(x):
        r = x[None, :] - C
        return -(ev(x)[:, None] * r) / s2

    return Dictionary(C.shape[1], C.shape[0], ev, jac,
                      tuple(f"rbf{i + 1}" for i in range(C.shape[0])))


def constant(n: int) -> Dictionary:
    return Dictionary(n, 1, lambda x: np.ones(1), lambda x: np.zeros((1, n)), ("1",))


def stack(*dicts: Sequence[Dictionary]) -> Dictionary:
    """Concatenate dictionaries acting on the same state space."""
    n = dicts[0].n
    if any(d.n != n for d in dicts):
        raise ConfigError("stacked dictionaries must share the state dimension")
    return Dictionary(
        n,
        sum(d.N for d in dicts),
        lambda x: np.concatenate([d.eval(x) for d in dicts]),
        lambda x: np.vstack([np.asarray(d.jac(x)).reshape(d.N, n) for d in dicts]),
        tuple(lab for d in dicts for lab in d.labels),
    )


def builtin_dictionary(kind: str, n: int = 2, **params) -> Dictionary:
    """Construct a builtin dictionary by name.

    ``kind`` is one of ``identity``, ``q_scaled`` (needs ``Q``), ``pendulum``,
    ``polynomial`` (needs ``degree``), ``gaussian_rbf`` (needs ``centers``
    and ``width``).
    """
    try:
        if kind == "identity":
            return identity(n)
        if kind == "q_scaled":
            return q_scaled(params["Q"])
        if kind == "pendulum":
            return pendulum_dictionary()
        if kind == "polynomial":
            return polynomial(n, int(params["degree"]),
                              bool(params.get("include_constant", False)))
        if kind == "gaussian_rbf":
            return gaussian_rbf(params["centers"], float(params["width"]))
    except KeyError as e:
        raise ConfigError(f"dictionary {kind!r} missing parameter {e}") from None
    raise ConfigError(f"unknown dictionary kind {kind!r}")
