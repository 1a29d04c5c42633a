"""Path-integral toolkit for stealthy attack synthesis, saddle-point
mitigation, and detectability analysis on control-affine SDE systems."""

from .engine import (
    AssumptionViolatedError,
    ControlAffineDynamics,
    CostModel,
    IntegrationDivergedError,
    NumericsWarning,
    SeedSpec,
    TimeGrid,
    TrajectoryEnsemble,
    em_step,
    normal_increments,
    path_cost,
    rollout_batch,
)
from .attack import (
    AttackConfig,
    AttackRecord,
    BiasEstimate,
    estimate_bias,
    estimate_value,
    kl_cost,
    synthesize_attack,
)
from .mitigation import (
    GainCertificate,
    GameRunRecord,
    SaddlePointEstimate,
    certify,
    estimate_game_value,
    estimate_saddle_point,
    gamma_from_xi,
    risk_sensitive_value,
    run_closed_loop_game,
    solve_alpha,
    solve_xi,
)
from .detection import (
    DetectionPoint,
    DetectorSpec,
    StealthReport,
    bh_bound,
    empirical_np_test,
    kl_bound_report,
    np_alpha,
    np_beta,
    pinsker_bound,
    regularized_gamma,
    tradeoff_curve,
)

__version__ = "0.1.0"
