"""Steady-state local Kalman filters and their pairwise error cross-covariances.

Both quantities are fixed points of maps that are iterated from a cheap start:

* the filter Riccati map ``X -> A_o g(X) A_o' + Q_tilde`` where
  ``g(X) = X - X C'(C X C' + R)^{-1} C X`` is the measurement update, and
* the cross map ``X -> F_i (A_i X A_j' + V_i' Q V_j) F_j'`` with
  ``F = I - K C_tilde``.

With fast sampling the closed-loop filter poles sit very close to the unit
circle (about 0.99996 for the pendulum benchmark), so the plain iteration
needs hundreds of thousands of steps. The default ``method="doubling"``
produces the same sequence of iterates at indices 1, 2, 4, 8, ... (the
structure-preserving doubling recursion for the Riccati map, Smith's
recursion for the linear cross map) and converges in a few dozen steps.
``method="fixed_point"`` runs the plain iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import numerics
from .errors import InvalidInputError, NonConvergenceError
from .linmodel import ObservableDecomposition, ProcessModel, SensorModel, kalman_decompose
from .numerics import DEFAULT_TOL

RICCATI_TOL = 1e-12
MAX_ITER = 100_000


@dataclass(frozen=True, eq=False)
class SteadyFilter:
    """Steady prediction covariance, update covariance and gain of one sensor."""

    P_star: np.ndarray
    P_bar: np.ndarray
    K_star: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    def closed_loop(self, dec: ObservableDecomposition) -> np.ndarray:
        """Error transition ``A_o - K C_tilde A_o``."""
        return dec.A_o - self.K_star @ dec.C_tilde @ dec.A_o


def predict_cov(dec: ObservableDecomposition, X) -> np.ndarray:
    """Time update ``A_o X A_o' + Q_tilde``."""
    return dec.A_o @ X @ dec.A_o.T + dec.Q_tilde


def update_cov(dec: ObservableDecomposition, sensor: SensorModel, X) -> np.ndarray:
    """Measurement update ``X - X C'(C X C' + R)^{-1} C X``."""
    C = dec.C_tilde
    S = C @ X @ C.T + sensor.R
    try:
        gain_t = np.linalg.solve(S, C @ X)
    except np.linalg.LinAlgError:
        raise NonConvergenceError("innovation covariance is singular") from None
    return numerics.symmetrize(X - X @ C.T @ gain_t)


def steady_gain(dec: ObservableDecomposition, sensor: SensorModel, P) -> np.ndarray:
    C = dec.C_tilde
    S = C @ P @ C.T + sensor.R
    return np.linalg.solve(S, C @ P).T


def riccati_map(dec: ObservableDecomposition, sensor: SensorModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (dec.n_o, dec.n_o):
        raise InvalidInputError(f"X: expected shape {(dec.n_o, dec.n_o)}, got {X.shape}")
    return numerics.symmetrize(predict_cov(dec, update_cov(dec, sensor, X)))


def _rel_change(new, old) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), np.finfo(float).tiny))


def _riccati_doubling(dec, sensor, tol, max_iter):
    # X_{2^k} of the iteration started at X_1 = Q_tilde
    n = dec.n_o
    Ak = dec.A_o.T.copy()
    Gk = dec.C_tilde.T @ np.linalg.solve(sensor.R, dec.C_tilde)
    Hk = dec.Q_tilde.copy()
    eye = np.eye(n)
    for it in range(1, max_iter + 1):
        W = eye + Gk @ Hk
        WA = np.linalg.solve(W, Ak)
        WG = np.linalg.solve(W, Gk)
        H_next = numerics.symmetrize(Hk + Ak.T @ Hk @ WA)
        Gk = numerics.symmetrize(Gk + Ak @ WG @ Ak.T)
        Ak = Ak @ WA
        if not np.all(np.isfinite(H_next)):
            raise NonConvergenceError("Riccati doubling diverged")
        if _rel_change(H_next, Hk) < tol:
            return H_next, it
        Hk = H_next
    raise NonConvergenceError(f"Riccati doubling did not converge in {max_iter} steps")


def _riccati_fixed_point(dec, sensor, tol, max_iter):
    X = dec.Q_tilde.copy()
    for it in range(1, max_iter + 1):
        X_next = riccati_map(dec, sensor, X)
        if _rel_change(X_next, X) < tol:
            return X_next, it
        X = X_next
    raise NonConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")


def solve_steady_filter(
    dec: ObservableDecomposition,
    sensor: SensorModel,
    tol: float = RICCATI_TOL,
    max_iter: int = MAX_ITER,
    method: str = "doubling",
) -> SteadyFilter:
    if method == "doubling":
        P, iters = _riccati_doubling(dec, sensor, tol, max_iter)
    elif method == "fixed_point":
        P, iters = _riccati_fixed_point(dec, sensor, tol, max_iter)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    K = steady_gain(dec, sensor, P)
    P_bar = update_cov(dec, sensor, P)
    residual = _rel_change(riccati_map(dec, sensor, P), P)
    return SteadyFilter(P_star=P, P_bar=P_bar, K_star=K, residual=residual, iterations=iters)


def noise_cross(dec_i: ObservableDecomposition, dec_j: ObservableDecomposition, Q) -> np.ndarray:
    """Cross-covariance ``V_i' Q V_j`` of the projected process noises."""
    return dec_i.V_o.T @ Q @ dec_j.V_o


def cross_map(dec_i, dec_j, kf_i: SteadyFilter, kf_j: SteadyFilter, Q, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (dec_i.n_o, dec_j.n_o):
        raise InvalidInputError(f"X: expected shape {(dec_i.n_o, dec_j.n_o)}, got {X.shape}")
    F_i = np.eye(dec_i.n_o) - kf_i.K_star @ dec_i.C_tilde
    F_j = np.eye(dec_j.n_o) - kf_j.K_star @ dec_j.C_tilde
    h = dec_i.A_o @ X @ dec_j.A_o.T + noise_cross(dec_i, dec_j, Q)
    return F_i @ h @ F_j.T


def solve_cross_covariance(
    dec_i,
    dec_j,
    kf_i: SteadyFilter,
    kf_j: SteadyFilter,
    Q,
    tol: float = RICCATI_TOL,
    max_iter: int = MAX_ITER,
    method: str = "doubling",
) -> np.ndarray:
    """Fixed point of :func:`cross_map`, iterated from zero."""
    if method == "fixed_point":
        X = np.zeros((dec_i.n_o, dec_j.n_o))
        for _ in range(max_iter):
            X_next = cross_map(dec_i, dec_j, kf_i, kf_j, Q, X)
            if np.linalg.norm(X_next - X) <= tol * max(np.linalg.norm(X_next), np.finfo(float).tiny):
                return X_next
            X = X_next
        raise NonConvergenceError(f"cross-covariance iteration did not converge in {max_iter} steps")
    if method != "doubling":
        raise InvalidInputError(f"unknown method {method!r}")

    # Smith: with Y_m the m-th iterate, Y_{2m} = Y_m + Phi_i^m Y_m Phi_j'^m
    Phi_i = kf_i.closed_loop(dec_i)
    Phi_j = kf_j.closed_loop(dec_j)
    Y = cross_map(dec_i, dec_j, kf_i, kf_j, Q, np.zeros((dec_i.n_o, dec_j.n_o)))
    for _ in range(max_iter):
        step = Phi_i @ Y @ Phi_j.T
        Y = Y + step
        if np.linalg.norm(step) <= tol * max(np.linalg.norm(Y), np.finfo(float).tiny):
            return Y
        if not np.all(np.isfinite(Y)):
            break
        Phi_i = Phi_i @ Phi_i
        Phi_j = Phi_j @ Phi_j
    raise NonConvergenceError("cross-covariance doubling did not converge")


@dataclass(frozen=True, eq=False)
class SteadyState:
    """Everything the remote estimator precomputes once per model.

    ``cross[(i, j)]`` holds the steady cross-covariance for every ordered pair
    ``i != j``.
    """

    process: ProcessModel
    sensors: tuple
    decompositions: tuple
    filters: tuple
    cross: dict

    @property
    def N(self) -> int:
        return len(self.sensors)

    @property
    def n(self) -> int:
        return self.process.n

    @cached_property
    def offsets(self) -> np.ndarray:
        dims = [d.n_o for d in self.decompositions]
        return np.concatenate([[0], np.cumsum(dims)]).astype(int)

    def joint_error_cov(self) -> np.ndarray:
        """Covariance of all stacked local filter errors (``P_bar`` on the diagonal)."""
        off = self.offsets
        G = np.zeros((off[-1], off[-1]))
        for i in range(self.N):
            for j in range(self.N):
                block = self.filters[i].P_bar if i == j else self.cross[(i, j)]
                G[off[i] : off[i + 1], off[j] : off[j + 1]] = block
        return numerics.symmetrize(G)


def solve_steady_state(
    process: ProcessModel,
    sensors,
    tol: float = DEFAULT_TOL,
    riccati_tol: float = RICCATI_TOL,
    max_iter: int = MAX_ITER,
    method: str = "doubling",
) -> SteadyState:
    sensors = tuple(sensors)
    decs = tuple(kalman_decompose(process, s, tol) for s in sensors)
    filters = tuple(
        solve_steady_filter(d, s, riccati_tol, max_iter, method) for d, s in zip(decs, sensors)
    )
    cross = {}
    for i in range(len(sensors)):
        for j in range(i + 1, len(sensors)):
            G = solve_cross_covariance(
                decs[i], decs[j], filters[i], filters[j], process.Q, riccati_tol, max_iter, method
            )
            cross[(i, j)] = G
            cross[(j, i)] = G.T
    return SteadyState(process=process, sensors=sensors, decompositions=decs, filters=filters, cross=cross)
