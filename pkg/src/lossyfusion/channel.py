"""Independent Bernoulli erasure channels between the sensors and the estimator.

Each channel delivers its packet with probability ``lambda_i``. The holding
time ``tau_i`` counts steps since the last delivery: it resets to 0 when a
packet arrives and grows by one on every drop. Every channel starts as if it
had just delivered (``tau = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, InvalidInputError


def check_rates(lambdas) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    if lam.size == 0:
        raise InvalidInputError("at least one channel is required")
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0) or np.any(lam > 1.0):
        raise InvalidInputError("arrival rates must lie in (0, 1]")
    return lam


def update_holding_times(tau, arrivals) -> np.ndarray:
    """Reset on arrival, increment on drop. Works elementwise on any shape."""
    tau = np.asarray(tau)
    arrivals = np.asarray(arrivals, dtype=bool)
    return np.where(arrivals, 0, tau + 1)


def holding_times_from_arrivals(arrivals, tau0: int = 0) -> np.ndarray:
    """Replay a ``(K, N)`` (or length-``K``) arrival record into holding times."""
    arr = np.asarray(arrivals, dtype=bool)
    squeeze = arr.ndim == 1
    arr = arr.reshape(arr.shape[0], -1)
    out = np.empty(arr.shape, dtype=np.int64)
    tau = np.full(arr.shape[1], tau0, dtype=np.int64)
    for k in range(arr.shape[0]):
        tau = update_holding_times(tau, arr[k])
        out[k] = tau
    return out[:, 0] if squeeze else out


@dataclass(frozen=True, eq=False)
class ChannelState:
    """Arrival rates, current holding times, the step counter and the stream.

    ``rng_seed`` seeds the generator when ``rng`` is not given. The generator
    is shared by successive states returned from :func:`step`, so a state
    should be advanced only once.
    """

    lambdas: np.ndarray
    tau: np.ndarray | None = None
    rng_seed: int | None = None
    k: int = 0
    rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        lam = check_rates(self.lambdas)
        if self.tau is None:
            tau = np.zeros(lam.size, dtype=np.int64)
        else:
            tau = np.asarray(self.tau)
            if tau.shape != lam.shape or np.any(tau < 0):
                raise InvalidInputError("tau: expected one non-negative holding time per channel")
            tau = tau.astype(np.int64)
        rng = self.rng if self.rng is not None else np.random.default_rng(self.rng_seed)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "rng", rng)

    @property
    def N(self) -> int:
        return self.lambdas.size


def step(state: ChannelState):
    """Draw one arrival per channel and return ``(arrivals, next_state)``."""
    arrivals = state.rng.random(state.N) < state.lambdas
    nxt = ChannelState(
        lambdas=state.lambdas,
        tau=update_holding_times(state.tau, arrivals),
        rng_seed=state.rng_seed,
        k=state.k + 1,
        rng=state.rng,
    )
    return arrivals, nxt


def expected_tau_weight(lam: float, rho2: float) -> float:
    """``E[rho2 ** tau]`` for a geometric holding time: ``lam / (1 - (1 - lam) rho2)``."""
    lam = float(lam)
    rho2 = float(rho2)
    if not (0.0 < lam <= 1.0):
        raise InvalidInputError(f"arrival rate must lie in (0, 1], got {lam}")
    if rho2 < 0.0:
        raise InvalidInputError(f"rho2 must be non-negative, got {rho2}")
    q = (1.0 - lam) * rho2
    if q >= 1.0:
        raise InfeasibleError(f"(1 - lambda) * rho2 = {q:.6g} >= 1: the expected weight diverges")
    return lam / (1.0 - q)
