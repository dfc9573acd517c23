"""Process/sensor models and the per-sensor observability split.

Each sensor only sees part of the state. ``kalman_decompose`` finds an
orthonormal basis ``V_o`` of the observable subspace of ``(A, C_i)`` and the
reduced model the sensor's local filter runs on::

    chi_{k+1} = A_o chi_k + V_o' w_k,    y_k = C_tilde chi_k + v_k

with ``chi_k = V_o' x_k``, ``A_o = V_o' A V_o`` and ``C_tilde = C V_o``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import DegenerateSensorError, InvalidInputError
from .numerics import DEFAULT_TOL, as_matrix


@dataclass(frozen=True, eq=False)
class ProcessModel:
    """Discrete-time plant ``x_{k+1} = A x_k + w_k`` with ``w_k ~ N(0, Q)``.

    ``Q`` must be symmetric PSD. Strict positive definiteness is reported by
    :meth:`noise_is_positive_definite` rather than enforced, because the
    pendulum benchmark drives the plant through a single input channel and so
    has a rank-one ``Q``.
    """

    A: np.ndarray
    Q: np.ndarray
    x0_mean: np.ndarray | None = None
    Pi0: np.ndarray | None = None

    def __post_init__(self):
        A = as_matrix(self.A, "A", square=True)
        n = A.shape[0]
        Q = as_matrix(self.Q, "Q", square=True)
        if Q.shape != (n, n):
            raise InvalidInputError(f"Q: expected shape {(n, n)}, got {Q.shape}")
        _check_psd(Q, "Q")
        if self.x0_mean is None:
            x0 = np.zeros(n)
        else:
            x0 = np.asarray(self.x0_mean, dtype=float).reshape(-1)
            if x0.shape != (n,) or not np.all(np.isfinite(x0)):
                raise InvalidInputError(f"x0_mean: expected {n} finite entries")
        if self.Pi0 is None:
            Pi0 = np.zeros((n, n))
        else:
            Pi0 = as_matrix(self.Pi0, "Pi0", square=True)
            if Pi0.shape != (n, n):
                raise InvalidInputError(f"Pi0: expected shape {(n, n)}, got {Pi0.shape}")
            _check_psd(Pi0, "Pi0")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", numerics.symmetrize(Q))
        object.__setattr__(self, "x0_mean", x0)
        object.__setattr__(self, "Pi0", numerics.symmetrize(Pi0))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def noise_is_positive_definite(self, tol: float = DEFAULT_TOL) -> bool:
        w = np.linalg.eigvalsh(self.Q)
        return bool(w[0] > tol * max(w[-1], np.finfo(float).tiny))


@dataclass(frozen=True, eq=False)
class SensorModel:
    """Sensor ``y = C x + v``, ``v ~ N(0, R)``, packets arrive w.p. ``arrival_rate``."""

    C: np.ndarray
    R: np.ndarray
    arrival_rate: float = 1.0

    def __post_init__(self):
        C = as_matrix(self.C, "C")
        m = C.shape[0]
        R = as_matrix(self.R, "R", square=True)
        if R.shape != (m, m):
            raise InvalidInputError(f"R: expected shape {(m, m)}, got {R.shape}")
        if not numerics.is_symmetric(R):
            raise InvalidInputError("R: not symmetric")
        if np.linalg.eigvalsh(numerics.symmetrize(R))[0] <= 0.0:
            raise InvalidInputError("R: not positive definite")
        lam = float(self.arrival_rate)
        if not (0.0 < lam <= 1.0):
            raise InvalidInputError(f"arrival_rate: must lie in (0, 1], got {lam}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", numerics.symmetrize(R))
        object.__setattr__(self, "arrival_rate", lam)

    @property
    def m(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class ObservableDecomposition:
    V_o: np.ndarray
    V_obar: np.ndarray
    A_o: np.ndarray
    C_tilde: np.ndarray
    Q_tilde: np.ndarray

    @property
    def n_o(self) -> int:
        return self.V_o.shape[1]

    @property
    def T(self) -> np.ndarray:
        """Orthogonal change of basis ``[V_obar V_o]'``."""
        return np.hstack([self.V_obar, self.V_o]).T


def _check_psd(M, name, rel=1e-10):
    if not numerics.is_symmetric(M):
        raise InvalidInputError(f"{name}: not symmetric")
    w = np.linalg.eigvalsh(numerics.symmetrize(M))
    if w[0] < -rel * max(abs(w[-1]), 1.0):
        raise InvalidInputError(f"{name}: not positive semi-definite (min eigenvalue {w[0]:.3g})")


def observability_matrix(A, C) -> np.ndarray:
    """Stack ``[C; CA; ...; CA^{n-1}]``."""
    A = as_matrix(A, "A", square=True)
    C = as_matrix(C, "C")
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def observable_basis(A, C, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal basis of the observable subspace of ``(A, C)``.

    The subspace is the smallest ``A'``-invariant subspace containing the row
    space of ``C``. It is grown one Krylov block at a time, each new block
    orthogonalised against the basis so far, instead of taking the SVD of
    the raw observability matrix: when ``A`` is close to the identity (fast
    sampling) the rows ``C A^k`` are nearly parallel and the raw matrix loses
    directions that are structurally observable.
    """
    A = as_matrix(A, "A", square=True)
    C = as_matrix(C, "C")
    n = A.shape[0]
    if C.shape[1] != n:
        raise InvalidInputError(f"C: expected {n} columns, got {C.shape[1]}")
    _, s, Vt = np.linalg.svd(C, full_matrices=False)
    if s[0] == 0.0:
        return np.zeros((n, 0))
    basis = Vt[s > tol * s[0]].T
    new = basis
    a_scale = np.linalg.norm(A, 2)
    while new.shape[1] and basis.shape[1] < n:
        Z = A.T @ new
        # two passes of classical Gram-Schmidt keep the basis orthonormal to eps
        Z -= basis @ (basis.T @ Z)
        Z -= basis @ (basis.T @ Z)
        U, s, _ = np.linalg.svd(Z, full_matrices=False)
        new = U[:, s > tol * a_scale]
        basis = np.hstack([basis, new])
    return basis[:, :n]


def orthogonal_complement(V: np.ndarray) -> np.ndarray:
    n, r = V.shape
    if r == 0:
        return np.eye(n)
    U, _, _ = np.linalg.svd(V, full_matrices=True)
    return U[:, r:]


def kalman_decompose(proc: ProcessModel, sensor: SensorModel, tol: float = DEFAULT_TOL) -> ObservableDecomposition:
    if sensor.C.shape[1] != proc.n:
        raise InvalidInputError(f"C: expected {proc.n} columns, got {sensor.C.shape[1]}")
    V_o = observable_basis(proc.A, sensor.C, tol)
    if V_o.shape[1] == 0:
        raise DegenerateSensorError("sensor observes nothing (observable subspace has dimension 0)")
    V_obar = orthogonal_complement(V_o)
    A_o = V_o.T @ proc.A @ V_o
    C_tilde = sensor.C @ V_o
    Q_tilde = numerics.symmetrize(V_o.T @ proc.Q @ V_o)
    return ObservableDecomposition(V_o=V_o, V_obar=V_obar, A_o=A_o, C_tilde=C_tilde, Q_tilde=Q_tilde)


def zoh_discretize(A_c, B_c, Ts: float):
    """Zero-order-hold sampling via the exponential of ``[[A_c, B_c], [0, 0]] * Ts``."""
    A_c = as_matrix(A_c, "A_c", square=True)
    B_c = np.asarray(B_c, dtype=float)
    if B_c.ndim == 1:
        B_c = B_c.reshape(-1, 1)
    B_c = as_matrix(B_c, "B_c")
    n, k = A_c.shape[0], B_c.shape[1]
    if B_c.shape[0] != n:
        raise InvalidInputError(f"B_c: expected {n} rows, got {B_c.shape[0]}")
    if not (np.isfinite(Ts) and Ts > 0):
        raise InvalidInputError(f"Ts: must be positive, got {Ts}")
    aug = np.zeros((n + k, n + k))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    E = numerics.expm(aug * Ts)
    return E[:n, :n], E[:n, n:]


def check_collective_observability(proc: ProcessModel, sensors, tol: float = DEFAULT_TOL) -> bool:
    if not sensors:
        return False
    C_all = np.vstack([s.C for s in sensors])
    return observable_basis(proc.A, C_all, tol).shape[1] == proc.n


def check_feasibility(proc: ProcessModel, sensors) -> tuple[float, bool]:
    """Left-hand side of ``(1 - min lambda) * rho(A)^2 < 1`` and whether it holds."""
    if not sensors:
        raise InvalidInputError("at least one sensor is required")
    lam_min = min(s.arrival_rate for s in sensors)
    value = (1.0 - lam_min) * numerics.spectral_radius(proc.A) ** 2
    return value, value < 1.0
