"""End-to-end Monte-Carlo runs of plant, local filters, lossy links and fusion.

Trajectories are simulated in lock-step batches so that every per-step
operation is a batched array operation. Each trajectory nevertheless owns its
random streams, derived from ``(master_seed, trajectory index)``, so a
trajectory's record does not depend on which batch or worker ran it.

Time convention: ``k = 0`` is the first recorded step. The plant starts at
``x_0 ~ N(x0_mean, Pi0)``, each local filter's error is drawn from the joint
steady-state error covariance (the filters are already in steady state) and
every packet of step 0 is delivered. Each later step advances the plant,
measures, updates the local filters, draws the channel and fuses.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numerics
from .benchmark import BenchmarkSpec, pendulum_benchmark, pendulum_matrices, pendulum_spec  # noqa: F401
from .channel import expected_tau_weight, update_holding_times
from .errors import InvalidInputError
from .fusion import ClosedFormSolver, FusionProblem, SigmaAssembler, solve_weights_kkt, stack_bases
from .riccati import SteadyState

CHUNK = 512  # steps of noise drawn per generator call
N_STREAMS = 4  # init, process noise, measurement noise, channel


def trajectory_generators(master_seed: int, index: int):
    """Independent generators ``(init, process, measurement, channel)`` for one trajectory."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(int(index),))
    return [np.random.default_rng(s) for s in ss.spawn(N_STREAMS)]


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Per-step history of one trajectory (first axis is the step ``k``).

    ``subspace_err[k, i]`` is ``|V_i' x_k - chi_i|``, the error of the
    estimator's copy of sensor ``i``'s estimate within that sensor's
    observable subspace.
    """

    x: np.ndarray
    arrivals: np.ndarray
    tau: np.ndarray
    x_hat: np.ndarray
    error: np.ndarray
    trace_P: np.ndarray
    subspace_err: np.ndarray

    @property
    def horizon(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    """Per-step means over all trajectories."""

    mean_err_norm: np.ndarray
    mean_err_sq: np.ndarray
    mean_trace_P: np.ndarray
    mean_subspace_err: np.ndarray  # (horizon, N)
    trajectories: int
    master_seed: int
    solver: str
    runtime: float = 0.0

    @property
    def horizon(self) -> int:
        return self.mean_err_norm.shape[0]

    def window_mean(self, start: int, stop: int | None = None) -> dict:
        sl = slice(start, stop)
        return {
            "mean_err_norm": float(np.mean(self.mean_err_norm[sl])),
            "mean_err_sq": float(np.mean(self.mean_err_sq[sl])),
            "mean_trace_P": float(np.mean(self.mean_trace_P[sl])),
            "mean_subspace_err": np.mean(self.mean_subspace_err[sl], axis=0),
        }


class _Model:
    """Block-diagonal batched form of the steady local filters."""

    def __init__(self, steady: SteadyState, solver: str):
        if solver not in ("closed", "kkt"):
            raise InvalidInputError(f"unknown solver {solver!r} (expected 'closed' or 'kkt')")
        self.steady = steady
        self.solver = solver
        proc = steady.process
        decs = steady.decompositions
        self.n, self.N = steady.n, steady.N
        self.offsets = steady.offsets
        self.A = proc.A
        self.Q_half = numerics.psd_sqrt(proc.Q)
        self.x0_mean = proc.x0_mean
        self.Pi0_half = numerics.psd_sqrt(proc.Pi0)
        self.G_half = numerics.psd_sqrt(steady.joint_error_cov())
        self.C = np.vstack([s.C for s in steady.sensors])
        self.R_chol = np.linalg.cholesky(numerics.block_diag(*[s.R for s in steady.sensors]))
        self.V_big = numerics.block_diag(*[d.V_o for d in decs])  # (nN, sum n_o)
        self.Vt_all = np.vstack([d.V_o.T for d in decs])  # (sum n_o, n)
        self.A_o = numerics.block_diag(*[d.A_o for d in decs])
        self.C_t = numerics.block_diag(*[d.C_tilde for d in decs])
        self.K = numerics.block_diag(*[f.K_star for f in steady.filters])
        self.lambdas = np.array([s.arrival_rate for s in steady.sensors])
        self.block_id = np.repeat(np.arange(self.N), np.diff(self.offsets))
        self.V_stacked = stack_bases(decs)
        self.sigma_of = SigmaAssembler(steady)
        self.closed = ClosedFormSolver(self.V_stacked, basis=self.V_big)
        self.m_tot = self.C.shape[0]

    def weights(self, sigma):
        if self.solver == "closed":
            return self.closed(sigma)
        return np.stack([solve_weights_kkt(FusionProblem(self.V_stacked, s, basis=self.V_big)).W for s in sigma])


def _draw_chunk(gens, steps, model):
    """Stack one chunk of pre-drawn noise for every trajectory in the batch."""
    zw = np.stack([g[1].standard_normal((steps, model.n)) for g in gens], axis=1)
    zv = np.stack([g[2].standard_normal((steps, model.m_tot)) for g in gens], axis=1)
    u = np.stack([g[3].random((steps, model.N)) for g in gens], axis=1)
    return zw, zv, u


def _simulate_batch(model: _Model, horizon: int, master_seed: int, indices, keep_records: bool, schedule=None):
    """Run the trajectories ``indices`` side by side.

    Returns ``(sums, records)`` where ``sums`` holds per-step sums over the
    batch of ``|e|``, ``|e|^2``, ``tr P`` and the per-sensor subspace errors.
    A boolean ``schedule`` of shape ``(horizon, N)`` overrides the channel
    draws (row 0 is ignored: step 0 always delivers).
    """
    B = len(indices)
    n, N = model.n, model.N
    gens = [trajectory_generators(master_seed, i) for i in indices]

    init = np.stack([g[0].standard_normal(n + model.offsets[-1]) for g in gens])
    x = model.x0_mean + init[:, :n] @ model.Pi0_half.T
    local = x @ model.Vt_all.T - init[:, n:] @ model.G_half.T
    remote = local.copy()
    tau = np.zeros((B, N), dtype=np.int64)
    arrivals = np.ones((B, N), dtype=bool)

    sums = {
        "err_norm": np.zeros(horizon),
        "err_sq": np.zeros(horizon),
        "trace_P": np.zeros(horizon),
        "subspace_err": np.zeros((horizon, N)),
    }
    rec = None
    if keep_records:
        rec = {
            "x": np.zeros((B, horizon, n)),
            "arrivals": np.zeros((B, horizon, N), dtype=bool),
            "tau": np.zeros((B, horizon, N), dtype=np.int64),
            "x_hat": np.zeros((B, horizon, n)),
            "error": np.zeros((B, horizon, n)),
            "trace_P": np.zeros((B, horizon)),
            "subspace_err": np.zeros((B, horizon, N)),
        }

    chunk_pos = CHUNK
    zw = zv = u = None
    for k in range(horizon):
        if k > 0:
            if chunk_pos == CHUNK:
                zw, zv, u = _draw_chunk(gens, min(CHUNK, horizon - k), model)
                chunk_pos = 0
            x = x @ model.A.T + zw[chunk_pos] @ model.Q_half.T
            y = x @ model.C.T + zv[chunk_pos] @ model.R_chol.T
            pred = local @ model.A_o.T
            local = pred + (y - pred @ model.C_t.T) @ model.K.T
            arrivals = u[chunk_pos] < model.lambdas if schedule is None else np.broadcast_to(schedule[k], (B, N))
            chunk_pos += 1
            tau = update_holding_times(tau, arrivals)
            held = remote @ model.A_o.T
            remote = np.where(arrivals[:, model.block_id], local, held)

        sigma = model.sigma_of(tau)
        W = model.weights(sigma)
        z = remote @ model.V_big.T
        x_hat = np.einsum("bij,bi->bj", W, z)
        err = x - x_hat
        trP = np.einsum("bij,bik,bkj->b", W, sigma, W)
        sub = (x @ model.Vt_all.T - remote) ** 2
        sub_err = np.sqrt(np.stack([sub[:, model.block_id == i].sum(axis=1) for i in range(N)], axis=1))
        e_sq = np.sum(err**2, axis=1)

        sums["err_norm"][k] = np.sum(np.sqrt(e_sq))
        sums["err_sq"][k] = np.sum(e_sq)
        sums["trace_P"][k] = np.sum(trP)
        sums["subspace_err"][k] = np.sum(sub_err, axis=0)
        if keep_records:
            rec["x"][:, k] = x
            rec["arrivals"][:, k] = arrivals
            rec["tau"][:, k] = tau
            rec["x_hat"][:, k] = x_hat
            rec["error"][:, k] = err
            rec["trace_P"][:, k] = trP
            rec["subspace_err"][:, k] = sub_err

    records = None
    if keep_records:
        records = [TrajectoryRecord(**{key: val[b] for key, val in rec.items()}) for b in range(B)]
    return sums, records


def _check_run_args(horizon, trajectories=1):
    if int(horizon) != horizon or horizon < 1:
        raise InvalidInputError(f"horizon must be a positive integer, got {horizon}")
    if int(trajectories) != trajectories or trajectories < 1:
        raise InvalidInputError(f"trajectories must be a positive integer, got {trajectories}")


def run_trajectory(steady: SteadyState, horizon: int, seed: int, index: int = 0, solver: str = "closed"):
    """Simulate trajectory ``index`` of the ensemble seeded with ``seed``.

    Repeated calls are bit-identical. Running the same trajectory inside a
    larger batch draws the same noise and arrivals; floating-point results
    then agree up to reassociation in the batched matrix products.
    """
    _check_run_args(horizon)
    model = _Model(steady, solver)
    _, records = _simulate_batch(model, int(horizon), seed, [index], keep_records=True)
    return records[0]


def run_batch(steady: SteadyState, horizon: int, master_seed: int, indices, solver: str = "closed", schedule=None):
    """Records for several trajectories simulated together.

    ``schedule`` optionally forces the packet arrivals, a ``(horizon, N)``
    boolean array shared by all trajectories.
    """
    _check_run_args(horizon)
    model = _Model(steady, solver)
    if schedule is not None:
        schedule = np.asarray(schedule, dtype=bool)
        if schedule.shape != (int(horizon), model.N):
            raise InvalidInputError(f"schedule: expected shape {(int(horizon), model.N)}, got {schedule.shape}")
    _, records = _simulate_batch(model, int(horizon), master_seed, list(indices), True, schedule)
    return records


def _worker(args):
    steady, horizon, master_seed, indices, solver = args
    sums, _ = _simulate_batch(_Model(steady, solver), horizon, master_seed, indices, False)
    return sums


def default_workers() -> int:
    return os.cpu_count() or 1


def monte_carlo(
    steady: SteadyState,
    trajectories: int,
    horizon: int,
    master_seed: int,
    solver: str = "closed",
    batch_size: int = 64,
    workers: int = 1,
) -> EnsembleSummary:
    """Average ``trajectories`` independent runs step by step.

    Trajectories ``0 .. trajectories-1`` are split into consecutive batches of
    ``batch_size``. Batch partial sums are combined in batch order, so the
    result does not depend on ``workers``.
    """
    _check_run_args(horizon, trajectories)
    if batch_size < 1 or workers < 1:
        raise InvalidInputError("batch_size and workers must be positive")
    horizon, trajectories = int(horizon), int(trajectories)
    t0 = time.perf_counter()
    batches = [
        list(range(s, min(s + batch_size, trajectories))) for s in range(0, trajectories, batch_size)
    ]
    jobs = [(steady, horizon, master_seed, b, solver) for b in batches]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            partial = list(pool.map(_worker, jobs))
    else:
        model = _Model(steady, solver)
        partial = [_simulate_batch(model, horizon, master_seed, b, False)[0] for b in batches]

    def total(key):
        return np.sum(np.stack([p[key] for p in partial]), axis=0) / trajectories

    return EnsembleSummary(
        mean_err_norm=total("err_norm"),
        mean_err_sq=total("err_sq"),
        mean_trace_P=total("trace_P"),
        mean_subspace_err=total("subspace_err"),
        trajectories=trajectories,
        master_seed=master_seed,
        solver=solver,
        runtime=time.perf_counter() - t0,
    )


def bound_multiplier(steady: SteadyState) -> float:
    """``sigma_max(W0)^2 + 1`` for the fixed feasible weight ``W0 = pinv(V_o')``."""
    W0 = numerics.pinv(stack_bases(steady.decompositions).T)
    return float(np.linalg.norm(W0, 2) ** 2 + 1.0)


def sensor_bound_terms(steady: SteadyState) -> np.ndarray:
    """Per-sensor bound on the expected trace of its held-estimate covariance.

    With ``r = rho(A_o)^2``, ``w = E[r^tau]`` and noise trace ``q``, the term
    is ``n_o (w tr P_bar + q (w - 1)/(r - 1))``; the last factor simplifies to
    ``(1 - lambda) / (1 - (1 - lambda) r)`` which stays finite at ``r = 1``.
    """
    out = []
    for s, d, f in zip(steady.sensors, steady.decompositions, steady.filters):
        lam = s.arrival_rate
        r = numerics.spectral_radius(d.A_o) ** 2
        w = expected_tau_weight(lam, r)
        noise_factor = (1.0 - lam) / (1.0 - (1.0 - lam) * r)
        out.append(d.n_o * (w * np.trace(f.P_bar) + np.trace(d.Q_tilde) * noise_factor))
    return np.array(out)


def covariance_bound(steady: SteadyState) -> float:
    """Upper bound on the expected trace of the optimally fused error covariance."""
    return bound_multiplier(steady) * float(np.sum(sensor_bound_terms(steady)))
