"""Optimal linear fusion of partially observing sensors over lossy links."""

from .channel import ChannelState, expected_tau_weight, step, update_holding_times
from .errors import (
    ConfigError,
    DegenerateSensorError,
    FusionError,
    InfeasibleError,
    InvalidInputError,
    ModelInconsistencyError,
    NonConvergenceError,
)
from .fusion import (
    ClosedFormSolver,
    FusionProblem,
    FusionWeights,
    SigmaAssembler,
    assemble_sigma,
    fuse,
    gauss_markov_mvue,
    solve_weights,
    solve_weights_closed_form,
    solve_weights_kkt,
)
from .linmodel import (
    ObservableDecomposition,
    ProcessModel,
    SensorModel,
    check_collective_observability,
    check_feasibility,
    kalman_decompose,
    zoh_discretize,
)
from .riccati import SteadyFilter, SteadyState, solve_steady_filter, solve_steady_state
from .simulator import (
    BenchmarkSpec,
    EnsembleSummary,
    TrajectoryRecord,
    covariance_bound,
    monte_carlo,
    pendulum_benchmark,
    run_trajectory,
)

__version__ = "0.1.0"
