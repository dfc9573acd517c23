"""JSON model files.

A model file is one JSON object::

    {
      "process": {"A": [[...]], "Q": [[...]], "x0_mean": [...], "Pi0": [[...]]},
      "sensors": [{"C": [[...]], "R": [[...]], "lambda": 0.7}, ...]
    }

Matrices are nested row-major arrays. Instead of ``A`` and ``Q`` the process
may be given in continuous time as ``A_c``, ``B_c``, ``Ts`` and ``sigma2``;
it is then sampled with a zero-order hold and ``Q = sigma2 * B_d B_d'``.
``x0_mean`` and ``Pi0`` are optional and default to zero.
"""

from __future__ import annotations

import json

import numpy as np

from .benchmark import pendulum_spec
from .errors import ConfigError, FusionError
from .linmodel import ProcessModel, SensorModel, zoh_discretize

_PROCESS_KEYS = {"A", "Q", "x0_mean", "Pi0", "A_c", "B_c", "Ts", "sigma2"}
_SENSOR_KEYS = {"C", "R", "lambda"}


def _matrix(obj, where):
    try:
        arr = np.array(obj, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a numeric matrix") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ConfigError(f"{where}: expected a matrix (nested list of rows)")
    return arr


def _require(d, key, where):
    if key not in d:
        raise ConfigError(f"{where}: missing field '{key}'")
    return d[key]


def _wrap(fn, where):
    try:
        return fn()
    except ConfigError:
        raise
    except FusionError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(doc: dict):
    """Turn a decoded JSON document into ``(ProcessModel, [SensorModel])``."""
    if not isinstance(doc, dict):
        raise ConfigError("top level: expected a JSON object")
    proc_d = _require(doc, "process", "top level")
    if not isinstance(proc_d, dict):
        raise ConfigError("process: expected an object")
    unknown = set(proc_d) - _PROCESS_KEYS
    if unknown:
        raise ConfigError(f"process: unknown field(s) {sorted(unknown)}")

    if "A_c" in proc_d:
        A_c = _matrix(proc_d["A_c"], "process.A_c")
        B_c = _matrix(_require(proc_d, "B_c", "process"), "process.B_c")
        Ts = _require(proc_d, "Ts", "process")
        sigma2 = _require(proc_d, "sigma2", "process")
        if not isinstance(Ts, (int, float)) or isinstance(Ts, bool):
            raise ConfigError("process.Ts: expected a number")
        if not isinstance(sigma2, (int, float)) or isinstance(sigma2, bool) or sigma2 < 0:
            raise ConfigError("process.sigma2: expected a non-negative number")
        A, B = _wrap(lambda: zoh_discretize(A_c, B_c, float(Ts)), "process")
        Q = float(sigma2) * B @ B.T
    else:
        A = _matrix(_require(proc_d, "A", "process"), "process.A")
        Q = _matrix(_require(proc_d, "Q", "process"), "process.Q")
    x0 = proc_d.get("x0_mean")
    Pi0 = proc_d.get("Pi0")
    if Pi0 is not None:
        Pi0 = _matrix(Pi0, "process.Pi0")
    if x0 is not None:
        try:
            x0 = np.array(x0, dtype=float).reshape(-1)
        except (TypeError, ValueError):
            raise ConfigError("process.x0_mean: expected a numeric vector") from None
    process = _wrap(lambda: ProcessModel(A=A, Q=Q, x0_mean=x0, Pi0=Pi0), "process")

    sens_l = _require(doc, "sensors", "top level")
    if not isinstance(sens_l, list) or not sens_l:
        raise ConfigError("sensors: expected a non-empty list")
    sensors = []
    for i, s in enumerate(sens_l):
        where = f"sensors[{i}]"
        if not isinstance(s, dict):
            raise ConfigError(f"{where}: expected an object")
        unknown = set(s) - _SENSOR_KEYS
        if unknown:
            raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
        C = _matrix(_require(s, "C", where), f"{where}.C")
        R = _matrix(_require(s, "R", where), f"{where}.R")
        lam = _require(s, "lambda", where)
        if not isinstance(lam, (int, float)) or isinstance(lam, bool):
            raise ConfigError(f"{where}.lambda: expected a number")
        if C.shape[1] != process.n:
            raise ConfigError(f"{where}.C: expected {process.n} columns, got {C.shape[1]}")
        sensors.append(_wrap(lambda: SensorModel(C=C, R=R, arrival_rate=lam), where))
    return process, sensors


def load_config(path):
    """Read and parse a model file; JSON syntax errors report line and column."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(doc)


def pendulum_config() -> dict:
    """The pendulum benchmark as a model document (continuous-time form)."""
    spec = pendulum_spec()
    return {
        "process": {
            "A_c": spec.A_c.tolist(),
            "B_c": spec.B_c.tolist(),
            "Ts": spec.Ts,
            "sigma2": spec.sigma2,
        },
        "sensors": [{"C": C.tolist(), "R": R.tolist(), "lambda": lam} for C, R, lam in spec.sensors],
    }


def model_to_config(process: ProcessModel, sensors) -> dict:
    """Discrete-time document that parses back to the same matrices."""
    return {
        "process": {
            "A": process.A.tolist(),
            "Q": process.Q.tolist(),
            "x0_mean": process.x0_mean.tolist(),
            "Pi0": process.Pi0.tolist(),
        },
        "sensors": [{"C": s.C.tolist(), "R": s.R.tolist(), "lambda": s.arrival_rate} for s in sensors],
    }


def dump_config(doc: dict, path=None) -> str:
    text = json.dumps(doc, indent=2) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
