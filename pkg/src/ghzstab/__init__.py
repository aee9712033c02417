"""Toolkit for simulating and verifying measurement-driven stabilization of
multi-qubit GHZ states under continuous-time monitoring and feedback."""

__version__ = "0.1.0"

from .analysis import (
    LyapunovKind,
    RateBounds,
    bures_distance,
    bures_to_set,
    classify_limit,
    estimate_exponent,
    fidelity_to,
    ghz_populations,
    lyapunov,
    operator_variance,
    pair_population,
    pair_populations,
    rate_bounds,
    x_mean,
    x_variance,
)
from .control import FeedbackLaw, check_A2, check_condition_A, evaluate, smoothstep
from .dynamics import (
    DensityMatrix,
    IntegrationAbort,
    IntegratorConfig,
    em_step,
    deterministic_step,
    simulate_trajectory,
)
from .model import (
    GhzBasis,
    MeasurementChannel,
    SystemModel,
    build_x_operator,
    build_z_operator,
    check_assumptions,
    ghz_basis,
    ghz_vector,
    spectral_data,
)
from .qmat import commutator, eig_hermitian, kron, trace_product
from .tolerances import DEFAULT_TOLS, Tolerances

__all__ = [name for name in dir() if not name.startswith("_")]
