"""Galerkin projection of the generator split onto a dictionary.

Conventions: row ``i`` of every projected matrix describes the time
derivative of observable ``psi_i``, so the lifted surrogate reads
``Psi' = (K_J - K_R) Psi + K_u u``.  With sample weights ``w_k``:

* Gram matrix           ``M[i, j]    = sum_k w_k psi_i psi_j``
* conservative block    ``A_J[i, j]  = sum_k w_k (K_J psi_i) psi_j``
* dissipative block     ``A_R[i, j]  = sum_k w_k grad psi_i^T R grad psi_j``
* input block           ``A_u[i, c]  = sum_k w_k grad psi_i^T g_c``

``A_R`` uses the Dirichlet-form integrand, which is PSD point by point for
any nonnegative weights.  The plain cross moment ``(K_R psi_i) psi_j`` is
kept as ``A_R_cross`` for diagnostics and for the unstructured baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DimensionError, NotDissipativeError, SingularGramError
from .observables import Dictionary, eval_dictionary, eval_jacobian, generator_action
from .ph_model import PHSystem, Trajectory

GRAM_COND_MAX = 1e12
WEIGHT_SUM_TOL = 1e-12


# -- sample sets -------------------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    """Weighted points standing in for the sampling measure.

    Zero-weight points are pruned and duplicate points merged (weights add).
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if X.shape[0] != w.shape[0]:
            raise DimensionError("one weight per point required")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ConfigError("sample weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ConfigError(f"sample weights sum to {w.sum()!r}, expected 1")
        keep = w > 0
        X, w = X[keep], w[keep]
        uniq, inv = np.unique(X, axis=0, return_inverse=True)
        if len(uniq) < len(X):
            inv = inv.reshape(-1)
            first = np.full(len(uniq), len(X))
            np.minimum.at(first, inv, np.arange(len(X)))
            order = np.argsort(first)
            merged = np.zeros(len(uniq))
            np.add.at(merged, inv, w)
            X, w = uniq[order], merged[order]
        object.__setattr__(self, "points", X)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    @classmethod
    def uniform(cls, points):
        X = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(X, np.full(len(X), 1.0 / len(X)))


def uniform_box(lower, upper, count: int, seed: int) -> SampleSet:
    """Seeded Monte Carlo samples, uniform on a box."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    if count < 1 or lower.shape != upper.shape or np.any(upper < lower):
        raise ConfigError("invalid Monte Carlo sample specification")
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ConfigError("box bounds must be finite")
    rng = np.random.default_rng(seed)
    return SampleSet.uniform(lower + (upper - lower) * rng.random((count, lower.size)))


def grid(lower, upper, counts) -> SampleSet:
    """Tensor grid including both box ends along each axis."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    counts = np.broadcast_to(np.asarray(counts, dtype=int), lower.shape)
    if np.any(counts < 1) or not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ConfigError("invalid grid specification")
    axes = [np.linspace(lo, hi, c) if c > 1 else np.array([0.5 * (lo + hi)])
            for lo, hi, c in zip(lower, upper, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return SampleSet.uniform(np.stack([g.reshape(-1) for g in mesh], axis=1))


def trajectory_subsample(traj: Trajectory, stride: int, include_first: bool = False) -> SampleSet:
    """Every ``stride``-th state of a trajectory (steps ``stride, 2 stride, ...``).

    A run with K steps therefore yields ``K // stride`` points.
    """
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    start = 0 if include_first else stride
    return SampleSet.uniform(traj.states[start::stride])


def axis_cross(n: int, scale: Optional[float] = None) -> SampleSet:
    """The 2n points ``+-scale e_i``; the default scale sqrt(n) gives second moment I."""
    s = np.sqrt(n) if scale is None else float(scale)
    X = np.vstack([s * np.eye(n), -s * np.eye(n)])
    return SampleSet.uniform(X)


# -- projection --------------------------------------------------------------

def pairwise_sum(stack: np.ndarray) -> np.ndarray:
    """Sum along axis 0 with a fixed recursive halving order."""
    k = stack.shape[0]
    if k == 0:
        return np.zeros(stack.shape[1:])
    if k <= 8:
        out = stack[0].copy()
        for i in range(1, k):
            out += stack[i]
        return out
    h = k // 2
    return pairwise_sum(stack[:h]) + pairwise_sum(stack[h:])


@dataclass(frozen=True)
class RawProjection:
    """Unprojected Galerkin blocks; see the module docstring for definitions."""

    M: np.ndarray
    A_J: np.ndarray
    A_R: np.ndarray
    A_u: np.ndarray
    A_R_cross: Optional[np.ndarray] = None

    @property
    def gram_cond(self) -> float:
        return float(np.linalg.cond(self.M))

    def residuals(self) -> dict:
        sym_R = 0.5 * (self.A_R + self.A_R.T)
        out = {
            "A_J_skew_residual": float(np.linalg.norm(self.A_J + self.A_J.T)),
            "A_R_asym": float(np.linalg.norm(self.A_R - self.A_R.T)),
            "A_R_min_eig": float(np.linalg.eigvalsh(sym_R)[0]),
            "gram_cond": self.gram_cond,
        }
        if self.A_R_cross is not None:
            C = 0.5 * (self.A_R_cross + self.A_R_cross.T)
            out["A_R_cross_min_eig"] = float(np.linalg.eigvalsh(C)[0])
        return out


def _point_terms(d: Dictionary, sys: PHSystem, x, check):
    psi = eval_dictionary(d, x)
    D = eval_jacobian(d, x)
    ga = generator_action(d, sys, x, check)
    Rx = np.asarray(sys.R(x), dtype=float)
    return psi, D, ga, Rx


def raw_projection(d: Dictionary, sys: PHSystem, s: SampleSet, check: bool = True) -> RawProjection:
    """Weighted Galerkin sums over the sample set.

    Raises SingularGramError if the Gram matrix condition number exceeds 1e12.
    """
    if len(s) < d.N:
        raise SingularGramError(f"{len(s)} samples cannot support {d.N} observables")
    if s.points.shape[1] != d.n:
        raise DimensionError("sample points do not match the dictionary state dimension")
    K = len(s)
    Mk = np.empty((K, d.N, d.N))
    AJk = np.empty((K, d.N, d.N))
    ARk = np.empty((K, d.N, d.N))
    ACk = np.empty((K, d.N, d.N))
    AUk = np.empty((K, d.N, sys.m))
    for k, (x, w) in enumerate(zip(s.points, s.weights)):
        psi, D, ga, Rx = _point_terms(d, sys, x, check)
        Mk[k] = w * np.outer(psi, psi)
        AJk[k] = w * np.outer(ga.kJ, psi)
        ARk[k] = w * (D @ Rx @ D.T)
        ACk[k] = w * np.outer(ga.kR, psi)
        AUk[k] = w * ga.kU
    M = pairwise_sum(Mk)
    M = 0.5 * (M + M.T)
    A_R = pairwise_sum(ARk)
    rp = RawProjection(M, pairwise_sum(AJk), 0.5 * (A_R + A_R.T),
                       pairwise_sum(AUk), pairwise_sum(ACk))
    cond = rp.gram_cond
    if not cond <= GRAM_COND_MAX:
        raise SingularGramError(f"Gram matrix condition number {cond:.3e} exceeds {GRAM_COND_MAX:g}")
    return rp


def whiten(rp: RawProjection):
    """Change to an M-orthonormal basis with ``T = M^{-1/2}``.

    Square blocks transform by congruence ``T A T^T`` (which preserves the
    signs of quadratic forms); the input block becomes ``T A_u``.
    Returns ``(T, rp_whitened)``.
    """
    lam, V = np.linalg.eigh(rp.M)
    if lam[0] <= 0 or lam[-1] / lam[0] > GRAM_COND_MAX:
        raise SingularGramError("Gram matrix is singular or too ill-conditioned to whiten")
    T = (V / np.sqrt(lam)) @ V.T
    T = 0.5 * (T + T.T)

    def cong(A):
        return None if A is None else T @ A @ T.T

    A_R = cong(rp.A_R)
    return T, RawProjection(np.eye(len(lam)), cong(rp.A_J), 0.5 * (A_R + A_R.T),
                            T @ rp.A_u, cong(rp.A_R_cross))


def skew_part(A):
    """``(A - A^T)/2``; IEEE subtraction makes the result exactly antisymmetric."""
    A = np.asarray(A, dtype=float)
    return (A - A.T) / 2


def psd_project(A):
    """Nearest symmetric PSD matrix (Frobenius) by eigenvalue clipping.

    The result is exactly symmetric and its computed spectrum is nonnegative.
    """
    S = 0.5 * (np.asarray(A, dtype=float) + np.asarray(A, dtype=float).T)
    lam, V = np.linalg.eigh(S)
    P = (V * np.maximum(lam, 0.0)) @ V.T
    P = 0.5 * (P + P.T)
    # roundoff in the reconstruction can leave eigenvalues at -1e-17
    for _ in range(4):
        low = np.linalg.eigvalsh(P)[0]
        if low >= 0:
            break
        P = P + (2 * -low + np.finfo(float).tiny) * np.eye(len(P))
    return P


def enforce_structure(A_J, A_R):
    """Project onto the structured set: skew ``K_J`` and PSD ``K_R``.

    Returns ``(K_J, K_R, moved)`` where ``moved`` holds the Frobenius
    distances ``(|K_J - A_J|, |K_R - A_R|)``.
    """
    A_J = np.asarray(A_J, dtype=float)
    A_R = np.asarray(A_R, dtype=float)
    K_J = skew_part(A_J)
    K_R = psd_project(A_R)
    moved = (float(np.linalg.norm(K_J - A_J)), float(np.linalg.norm(K_R - A_R)))
    return K_J, K_R, moved


def split_skew_psd(K, tol: float = 1e-10):
    """Write ``K = K_J - K_R`` with ``K_J`` skew and ``K_R`` symmetric PSD.

    Raises NotDissipativeError when the symmetric part of ``K`` has an
    eigenvalue above ``tol``.
    """
    K = np.asarray(K, dtype=float)
    K_J = skew_part(K)
    K_R = -(K + K.T) / 2
    lam, V = np.linalg.eigh(K_R)
    if lam[0] < -tol:
        raise NotDissipativeError(
            f"symmetric part of K has eigenvalue {-lam[0]:.3e} > {tol:g}")
    if lam[0] < 0:
        K_R = psd_project(K_R)
    return K_J, K_R


# -- identified model --------------------------------------------------------

@dataclass(frozen=True)
class KpHModel:
    """Lifted surrogate ``Psi' = (K_J - K_R) Psi + K_u u``.

    ``T`` maps raw dictionary values to model coordinates (``M^{-1/2}`` after
    whitening, identity otherwise).  When ``structured`` is true, skewness
    of ``K_J`` and PSD-ness of ``K_R`` hold by construction and are checked
    here; the unstructured baseline carries whatever was fitted.
    """

    K_J: np.ndarray
    K_R: np.ndarray
    K_u: np.ndarray
    dictionary: Optional[Dictionary] = None
    T: Optional[np.ndarray] = None
    structured: bool = True
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        K_J = np.atleast_2d(np.asarray(self.K_J, dtype=float))
        K_R = np.atleast_2d(np.asarray(self.K_R, dtype=float))
        K_u = np.asarray(self.K_u, dtype=float)
        if K_u.ndim == 1:
            K_u = K_u.reshape(-1, 1)
        N = K_J.shape[0]
        if K_J.shape != (N, N) or K_R.shape != (N, N) or K_u.shape[0] != N:
            raise DimensionError("K_J, K_R must be N x N and K_u N x m")
        if self.structured:
            if np.any(K_J + K_J.T != 0):
                K_J = skew_part(K_J)
            if np.any(K_R != K_R.T) or np.linalg.eigvalsh(K_R)[0] < 0:
                K_R = psd_project(K_R)
        object.__setattr__(self, "K_J", K_J)
        object.__setattr__(self, "K_R", K_R)
        object.__setattr__(self, "K_u", K_u)

    @property
    def N(self):
        return self.K_J.shape[0]

    @property
    def m(self):
        return self.K_u.shape[1]

    @property
    def K(self):
        """Autonomous generator matrix ``K_J - K_R``."""
        return self.K_J - self.K_R

    def lift(self, x):
        """Model coordinates of state ``x``: ``T Psi(x)``."""
        if self.dictionary is None:
            raise ConfigError("model has no dictionary to lift with")
        psi = eval_dictionary(self.dictionary, x)
        return psi if self.T is None else self.T @ psi

    def structure_report(self) -> dict:
        rep = {
            "skew_residual": float(np.linalg.norm(self.K_J + self.K_J.T)),
            "K_R_asym": float(np.linalg.norm(self.K_R - self.K_R.T)),
            "psd_min_eig": float(np.linalg.eigvalsh(0.5 * (self.K_R + self.K_R.T))[0]),
            "dissipation_violation": max(0.0, float(np.linalg.eigvalsh(self.K + self.K.T)[-1] / 2)),
        }
        rep.update(self.diagnostics)
        return rep


def identify_from_data(d: Dictionary, sys: PHSystem, s: SampleSet,
                       mode: str = "structured", check: bool = True) -> KpHModel:
    """Fit a lifted model from the generator action at the sample points.

    ``structured``: raw projection, whitening, structure enforcement; the
    model lives in the whitened basis and records ``T``.
    ``unstructured``: plain least squares of the conservative and
    dissipative blocks against ``Psi`` (no constraints), in the raw basis.
    """
    rp = raw_projection(d, sys, s, check)
    diag = {"gram_cond": rp.gram_cond, **{f"raw_{k}": v for k, v in rp.residuals().items()
                                          if k != "gram_cond"}}
    if mode == "structured":
        T, rpw = whiten(rp)
        K_J, K_R, moved = enforce_structure(rpw.A_J, rpw.A_R)
        diag.update(moved_J=moved[0], moved_R=moved[1])
        return KpHModel(K_J, K_R, rpw.A_u, d, T, True, diag)
    if mode == "unstructured":
        # K = C M^{-1}  <=>  M K^T = C^T
        K_J = np.linalg.solve(rp.M, rp.A_J.T).T
        K_R = np.linalg.solve(rp.M, rp.A_R_cross.T).T
        return KpHModel(K_J, K_R, rp.A_u, d, None, False, diag)
    raise ConfigError(f"unknown identification mode {mode!r}")
