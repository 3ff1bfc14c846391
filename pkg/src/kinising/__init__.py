"""Kinetic Ising inference of lead-lag trader networks.

Infers sparse lead-lag networks among traders from binary trade-sign panels
with missing observations (mean-field EM + decimation), reconstructs hidden
opinions, and provides the downstream analytics: influence ranking, network
persistence, prediction benchmarks, herding / liquidity causality, and the
synthetic benchmark suite.
"""

from .model import (
    ModelParams,
    ObservationPanel,
    SpinTrajectory,
    complete_log_likelihood,
    log2cosh,
    mask_panel,
    simulate,
    transition_probability,
)
from .inference import (
    FitConfig,
    FitReport,
    InferenceState,
    analytic_gradients,
    approx_log_likelihood,
    effective_fields,
    fit,
    hidden_sign_estimate,
    self_consistency_step,
    solve_self_consistency,
)

__version__ = "0.1.0"
