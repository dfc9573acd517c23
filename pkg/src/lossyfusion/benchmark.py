"""Linearised cart-pendulum benchmark with a bank of ten partial sensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linmodel import ProcessModel, SensorModel, zoh_discretize

GRAVITY = 9.8


@dataclass(frozen=True, eq=False)
class BenchmarkSpec:
    A_c: np.ndarray
    B_c: np.ndarray
    Ts: float
    sigma2: float
    sensors: tuple  # (C, R, arrival_rate) triples

    def build(self, x0_mean=None, Pi0=None):
        A_d, B_d = zoh_discretize(self.A_c, self.B_c, self.Ts)
        proc = ProcessModel(A=A_d, Q=self.sigma2 * B_d @ B_d.T, x0_mean=x0_mean, Pi0=Pi0)
        sensors = [SensorModel(C=C, R=R, arrival_rate=lam) for C, R, lam in self.sensors]
        return proc, sensors


def pendulum_matrices(M=0.5, m=0.2, b=0.1, l=0.1, J=1.0, g=GRAVITY):
    """Continuous-time ``(A_c, B_c)`` for state ``[x, x_dot, phi, phi_dot]``."""
    p = J * (M + m) + M * m * l**2
    A_c = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [0.0, -(J + m * l**2) * b / p, m**2 * g * l**2 / (J * p), 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, -m * l * b / p, m * g * l * (M + m) / p, 0.0],
        ]
    )
    B_c = np.array([[0.0], [(J + m * l**2) / p], [0.0], [m * l / p]])
    return A_c, B_c


PENDULUM_SENSORS = (
    ([[0, 0.2, 0, 0]], [[0.04]], 0.5),
    ([[1, 0.5, 0, 0], [0.5, 1, 0, 0]], [[0.02, 0], [0, 0.01]], 0.6),
    ([[1, 0, 0, 0]], [[0.16]], 0.7),
    ([[0, 0, 0.5, 0]], [[0.01]], 0.6),
    ([[1, 0, 0, 0.4], [0.2, 0, 0, 1]], [[0.04, 0], [0, 0.01]], 0.7),
    ([[0, 0, 0, 1]], [[0.35]], 0.5),
    ([[0, 0, 1, 0]], [[0.02]], 0.8),
    ([[0, 0, 1, 0]], [[0.25]], 0.5),
    ([[0, 1, 0, 0.4], [0, 0.5, 0, 1]], [[0.01, 0], [0, 0.03]], 0.7),
    ([[0, 0, 0, 1]], [[0.09]], 0.6),
)


def pendulum_spec() -> BenchmarkSpec:
    A_c, B_c = pendulum_matrices()
    sensors = tuple(
        (np.array(C, dtype=float), np.array(R, dtype=float), lam) for C, R, lam in PENDULUM_SENSORS
    )
    return BenchmarkSpec(A_c=A_c, B_c=B_c, Ts=0.001, sigma2=10.0, sensors=sensors)


def pendulum_benchmark():
    """``(ProcessModel, [SensorModel] * 10)`` for the sampled pendulum."""
    return pendulum_spec().build()
