"""Holding-time dependent error covariance and optimal unbiased fusion weights.

Sensor ``i`` contributes the zero-padded estimate ``V_i chi_i``; the remote
estimate is ``x_hat = W' z`` with ``z`` the stacked padded estimates and
``W`` (``nN x n``) constrained by ``W' V_o = I`` where
``V_o = [V_1 V_1'; ...; V_N V_N']``. The fused error covariance is
``W' Sigma W`` and the weights minimise its trace.

Two independent solvers are provided: the stationarity system
``2 Sigma W = V_o L'``, ``W' V_o = I`` solved by a rank-revealing least
squares (:func:`solve_weights_kkt`), and the Gauss-Markov closed form for a
possibly singular covariance (:func:`solve_weights_closed_form`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics
from .errors import InfeasibleError, InvalidInputError, ModelInconsistencyError
from .numerics import DEFAULT_TOL
from .riccati import SteadyFilter, SteadyState, noise_cross, predict_cov

PSD_TOL = 1e-8
# Applied after diagonal equilibration. Sigma spans ~16 decades on
# fast-sampled plants and the optimum lives in its low-variance directions.
FUSION_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class FusionProblem:
    """``basis`` (optional) is ``blkdiag(V_1, ..., V_N)``; when given, ``sigma``
    is taken to live in its range and the solvers work in those coordinates."""

    V_o_stacked: np.ndarray
    sigma: np.ndarray
    taus: tuple = ()
    basis: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.V_o_stacked.shape[1]

    @property
    def N(self) -> int:
        return self.V_o_stacked.shape[0] // self.V_o_stacked.shape[1]


@dataclass(frozen=True, eq=False)
class FusionWeights:
    """Stacked weights ``W`` (``nN x n``) and the trace they achieve.

    ``multiplier`` is the Lagrange multiplier of the unbiasedness constraint
    when the KKT solver produced the weights, else ``None``.
    """

    W: np.ndarray
    trace_P: float
    multiplier: np.ndarray | None = None

    def block(self, i: int) -> np.ndarray:
        """Weight ``W^(i)`` applied to sensor ``i``'s padded estimate (``n x n``)."""
        n = self.W.shape[1]
        return self.W[i * n : (i + 1) * n].T


# -- covariance assembly ------------------------------------------------------


def individual_cov(kf: SteadyFilter, dec, tau: int) -> np.ndarray:
    """Error covariance of a remote estimate held for ``tau`` steps."""
    if tau < 0:
        raise InvalidInputError(f"tau must be non-negative, got {tau}")
    P = kf.P_bar
    for _ in range(int(tau)):
        P = predict_cov(dec, P)
    return P


def pairwise_cov(dec_i, dec_j, gamma_bar, tau_i: int, tau_j: int, Q) -> np.ndarray:
    """Cross-covariance of two remote estimates held for ``tau_i`` and ``tau_j`` steps."""
    if tau_i < 0 or tau_j < 0:
        raise InvalidInputError("holding times must be non-negative")
    Ai, Aj = dec_i.A_o, dec_j.A_o
    out = np.linalg.matrix_power(Ai, tau_i) @ gamma_bar @ np.linalg.matrix_power(Aj, tau_j).T
    S = noise_cross(dec_i, dec_j, Q)
    Pi = np.eye(Ai.shape[0])
    Pj = np.eye(Aj.shape[0])
    for _ in range(min(tau_i, tau_j)):
        out = out + Pi @ S @ Pj.T
        Pi = Pi @ Ai
        Pj = Pj @ Aj
    return out


def stack_bases(decompositions) -> np.ndarray:
    """``[V_1 V_1'; ...; V_N V_N']``."""
    return np.vstack([d.V_o @ d.V_o.T for d in decompositions])


def _check_taus(taus, N):
    taus = np.asarray(taus)
    if taus.shape[-1] != N:
        raise InvalidInputError(f"expected {N} holding times, got {taus.shape[-1]}")
    if np.any(taus < 0):
        raise InvalidInputError("holding times must be non-negative")
    if not np.issubdtype(taus.dtype, np.integer):
        if np.any(taus != np.round(taus)):
            raise InvalidInputError("holding times must be integers")
        taus = taus.astype(int)
    return taus


def enforce_psd(sigma: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Symmetrise; clip eigenvalues in ``[-tol*|Sigma|, 0)``; raise below that."""
    sigma = numerics.symmetrize(sigma)
    w, U = np.linalg.eigh(sigma)
    scale = max(abs(w[0]), abs(w[-1]))
    if w[0] < -tol * scale:
        raise ModelInconsistencyError(
            f"Sigma is indefinite (min eigenvalue {w[0]:.3e}, norm {scale:.3e})"
        )
    if w[0] < 0.0:
        sigma = numerics.symmetrize((U * np.clip(w, 0.0, None)) @ U.T)
    return sigma


def assemble_sigma(steady: SteadyState, taus, psd_tol: float = PSD_TOL) -> FusionProblem:
    """Build ``Sigma`` block by block for one vector of holding times."""
    taus = _check_taus(taus, steady.N)
    decs = steady.decompositions
    n, N = steady.n, steady.N
    sigma = np.zeros((n * N, n * N))
    for i in range(N):
        for j in range(N):
            if i == j:
                P = individual_cov(steady.filters[i], decs[i], int(taus[i]))
            else:
                P = pairwise_cov(
                    decs[i], decs[j], steady.cross[(i, j)], int(taus[i]), int(taus[j]), steady.process.Q
                )
            sigma[i * n : (i + 1) * n, j * n : (j + 1) * n] = decs[i].V_o @ P @ decs[j].V_o.T
    sigma = enforce_psd(sigma, psd_tol)
    return FusionProblem(
        V_o_stacked=stack_bases(decs),
        sigma=sigma,
        taus=tuple(int(t) for t in taus),
        basis=numerics.block_diag(*[d.V_o for d in decs]),
    )


class SigmaAssembler:
    """Vectorised ``Sigma`` for a batch of holding-time vectors.

    Writes ``Sigma = F G F' + S`` where ``F = blkdiag(V_i A_i^tau_i)``, ``G`` is
    the joint steady error covariance and ``S`` accumulates the process noise
    injected while estimates are held. Matrix powers are tabulated on demand.
    Used by the simulator; :func:`assemble_sigma` is the reference.
    """

    def __init__(self, steady: SteadyState):
        self.steady = steady
        self.n = steady.n
        self.N = steady.N
        self.G = steady.joint_error_cov()
        self.Q = steady.process.Q
        self.offsets = steady.offsets
        self._cap = 0
        self._VA = []  # per sensor: (cap, n, n_i) table of V_i A_i^t
        self._D = np.zeros((0, self.N, self.n, self.n))  # (cap, N, n, n) table of V_i A_i^t V_i'
        self._grow(16)

    def _grow(self, cap):
        decs = self.steady.decompositions
        VA, D = [], []
        for d in decs:
            P = np.eye(d.n_o)
            rows = []
            for _ in range(cap):
                rows.append(d.V_o @ P)
                P = P @ d.A_o
            VA.append(np.stack(rows))
        for i, d in enumerate(decs):
            D.append(VA[i] @ d.V_o.T)
        self._VA = VA
        self._D = np.stack(D, axis=1)
        self._cap = cap

    def __call__(self, taus) -> np.ndarray:
        taus = np.atleast_2d(np.asarray(taus, dtype=int))
        B = taus.shape[0]
        t_max = int(taus.max())
        if t_max >= self._cap:
            self._grow(max(2 * self._cap, t_max + 1))
        n, N, off = self.n, self.N, self.offsets
        F = np.zeros((B, n * N, off[-1]))
        for i in range(N):
            F[:, i * n : (i + 1) * n, off[i] : off[i + 1]] = self._VA[i][taus[:, i]]
        sigma = F @ self.G @ F.transpose(0, 2, 1)
        for t in range(t_max):
            active = taus > t
            rows = np.nonzero(active.any(axis=1))[0]
            Z = self._D[t][None, :, :, :] * active[rows, :, None, None]
            Z = Z.reshape(len(rows), n * N, n)
            sigma[rows] += Z @ self.Q @ Z.transpose(0, 2, 1)
        return numerics.symmetrize(sigma)


# -- weight solvers -----------------------------------------------------------


def _require_full_column_rank(V, tol, what="V_o"):
    if numerics.rank_tol(V, tol) < V.shape[1]:
        raise InfeasibleError(f"{what} is column-rank deficient; the unbiasedness constraint is infeasible")


def fused_trace(W, sigma) -> float:
    return float(np.trace(W.T @ sigma @ W))


class _Reduction:
    """Coordinates shared by both solvers.

    ``Sigma`` is restricted to the range of ``basis`` (when known) and then
    scaled symmetrically to a unit diagonal. The scaling is an exact change of
    variables but lets the solvers resolve variance directions many decades
    below the largest one. :meth:`lift` maps weights back and removes the
    residual of ``W' V_o = I`` left by rounding.
    """

    def __init__(self, V_o_stacked, basis=None):
        V = numerics.as_matrix(V_o_stacked, "V_o")
        _require_full_column_rank(V, DEFAULT_TOL)
        if basis is not None:
            basis = numerics.as_matrix(basis, "basis")
            if basis.shape[0] != V.shape[0]:
                raise InvalidInputError(f"basis: expected {V.shape[0]} rows, got {basis.shape[0]}")
        self.V = V
        self.basis = basis
        self.U = V if basis is None else basis.T @ V
        self.V_pinv_T = np.linalg.pinv(V).T

    def scaled(self, sigma):
        P = sigma if self.basis is None else self.basis.T @ sigma @ self.basis
        P = numerics.symmetrize(P)
        dg = np.diagonal(P, axis1=-2, axis2=-1)
        top = dg.max(axis=-1, keepdims=True)
        d = 1.0 / np.sqrt(np.where(dg > 0, dg, np.where(top > 0, top, 1.0)))
        S = d[..., :, None] * P * d[..., None, :]
        H = d[..., :, None] * self.U
        return S, H, d

    def lift(self, Wt, d):
        W = d[..., :, None] * Wt
        if self.basis is not None:
            W = self.basis @ W
        n = self.V.shape[1]
        resid = np.eye(n) - np.swapaxes(W, -1, -2) @ self.V
        return W + self.V_pinv_T @ np.swapaxes(resid, -1, -2)


def solve_weights_kkt(prob: FusionProblem, tol: float = FUSION_TOL) -> FusionWeights:
    """Solve ``[2 Sigma, -V_o; V_o', 0] [W; L'] = [0; I]`` by least squares.

    The system is set up in the scaled coordinates of :class:`_Reduction`,
    with both blocks normalised to unit 2-norm; ``W`` and the multiplier are
    mapped back afterwards.
    """
    red = _Reduction(prob.V_o_stacked, prob.basis)
    S, H, d = red.scaled(prob.sigma)
    r, n = H.shape
    s_scale = float(np.linalg.norm(S, 2)) or 1.0
    h_scale = float(np.linalg.norm(H, 2))
    K = np.block([[2.0 * S / s_scale, -H / h_scale], [H.T / h_scale, np.zeros((n, n))]])
    rhs = np.vstack([np.zeros((r, n)), np.eye(n)])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=tol)
    W = red.lift(sol[:r] / h_scale, d)
    multiplier = (sol[r:] * (s_scale / h_scale**2)).T
    return FusionWeights(W=W, trace_P=fused_trace(W, prob.sigma), multiplier=multiplier)


def gauss_markov_mvue(H, V, tol: float = FUSION_TOL) -> np.ndarray:
    """Minimum-variance unbiased gain for ``z = H x + v``, ``cov(v) = V`` (may be singular).

    Returns ``K = H^+ [I - (L V L)^+ L V]'`` with ``L = I - H H^+``, which
    satisfies ``K H = I`` and minimises ``tr(K V K')``.
    """
    H = numerics.as_matrix(H, "H")
    V = numerics.as_matrix(V, "V", square=True)
    if V.shape[0] != H.shape[0]:
        raise InvalidInputError(f"V: expected shape {(H.shape[0],) * 2}, got {V.shape}")
    _require_full_column_rank(H, DEFAULT_TOL, "H")
    Hp = numerics.pinv(H, tol)
    # With L = N N' (N an orthonormal basis of null(H')), (L V L)^+ = N (N'VN)^+ N'
    # and K = H^+ - H^+ V N (N'VN)^+ N'. Multiplying left to right keeps the
    # rounding in N'H from being amplified by the small eigenvalues of N'VN.
    U, _, _ = np.linalg.svd(H, full_matrices=True)
    N = U[:, H.shape[1] :]
    if N.shape[1] == 0:
        return Hp
    M = numerics.pinv(numerics.symmetrize(N.T @ V @ N), tol, hermitian=True)
    return Hp - ((Hp @ V @ N) @ M) @ N.T


class ClosedFormSolver:
    """Closed-form optimal weights for a fixed ``V_o`` and many ``Sigma``.

    In the scaled coordinates of :class:`_Reduction` (weights ``Wt``,
    constraint matrix ``H``) evaluates ``Wt = [I - (M S M)^+ M S] H'^+`` with
    the projector ``M = I - H H^+`` factored as ``N N'`` (``N`` an
    orthonormal basis of the null space of ``H'``), so that
    ``(M S M)^+ = N (N' S N)^+ N'``. Accepts stacks of ``Sigma``.
    """

    def __init__(self, V_o_stacked, tol: float = FUSION_TOL, basis=None):
        self.red = _Reduction(V_o_stacked, basis)
        self.V = self.red.V
        self.tol = tol

    def __call__(self, sigma) -> np.ndarray:
        S, H, d = self.red.scaled(sigma)
        n = H.shape[-1]
        Uh, s, Vt = np.linalg.svd(H, full_matrices=True)
        W0 = (Uh[..., :, :n] / s[..., None, :]) @ Vt  # H'^+
        N = Uh[..., :, n:]
        if N.shape[-1] == 0:
            return self.red.lift(W0, d)
        Nt = np.swapaxes(N, -1, -2)
        reduced = numerics.symmetrize(Nt @ S @ N)
        Y = numerics.pinv(reduced, self.tol, hermitian=True) @ (Nt @ (S @ W0))
        return self.red.lift(W0 - N @ Y, d)


def solve_weights_closed_form(prob: FusionProblem, tol: float = FUSION_TOL) -> FusionWeights:
    W = ClosedFormSolver(prob.V_o_stacked, tol, prob.basis)(prob.sigma)
    return FusionWeights(W=W, trace_P=fused_trace(W, prob.sigma))


def solve_weights(prob: FusionProblem, solver: str = "closed", tol: float = FUSION_TOL) -> FusionWeights:
    if solver == "closed":
        return solve_weights_closed_form(prob, tol)
    if solver == "kkt":
        return solve_weights_kkt(prob, tol)
    raise InvalidInputError(f"unknown solver {solver!r} (expected 'closed' or 'kkt')")


def fuse(weights: FusionWeights, remote_estimates, decompositions) -> np.ndarray:
    """``sum_i W^(i) V_i chi_i`` for the propagated remote estimates ``chi_i``."""
    decompositions = list(decompositions)
    remote_estimates = list(remote_estimates)
    if len(remote_estimates) != len(decompositions):
        raise InvalidInputError("one remote estimate per sensor is required")
    padded = []
    for chi, d in zip(remote_estimates, decompositions):
        chi = np.asarray(chi, dtype=float).reshape(-1)
        if chi.shape != (d.n_o,):
            raise InvalidInputError(f"remote estimate: expected {d.n_o} entries, got {chi.shape[0]}")
        padded.append(d.V_o @ chi)
    z = np.concatenate(padded)
    if z.shape[0] != weights.W.shape[0]:
        raise InvalidInputError("weights and estimates disagree on n*N")
    return weights.W.T @ z
