"""Distributed Kalman filtering on simulated consensus networks.

Centralized information-form oracle, three distributed filters (decoupled
local filters with on-demand fusion, per-step information consensus, and
estimate consensus with a mismatch penalty), consensus network and
availability models, and numerical evaluation of the stability threshold
and accuracy bounds.
"""

from .analysis import (
    BoundInputs,
    BoundReport,
    bound_report,
    compute_bound_inputs,
    delta_bar,
    error_bound,
    gamma_bar,
    lambert_beta,
    mismatch_metric,
    sigma_bar,
    stability_threshold,
    upsilon_bar,
    y_frak_bar,
)
from .filters import (
    CentralizedRun,
    DecoupledLocalFilterBank,
    DivergenceError,
    EstimateConsensusFilterBank,
    InfoConsensusFilterBank,
    kalman_gain,
    kf_predict,
    kf_update,
    run_centralized,
    run_centralized_covariances,
    run_filter,
)
from .harness import ExperimentConfig
from .linalg import (
    frobenius_norm,
    invert_spd,
    riemannian_distance,
    spectral_norm,
    spectral_radius,
    symmetric_eigenvalues,
)
from .model import (
    NodeSensor,
    SensorSuite,
    SystemModel,
    Trajectory,
    generate_random_system,
    load_bundle,
    local_info_terms,
    save_bundle,
    simulate,
)
from .network import (
    GilbertElliott,
    WeightSchedule,
    algebraic_connectivity,
    availability_series,
    consensus_round,
    dynamic_consensus_step,
    ge_step,
    ring_schedule,
    ring_weights,
)
from .rng import Rng

__all__ = [name for name in dir() if not name.startswith("_")]
