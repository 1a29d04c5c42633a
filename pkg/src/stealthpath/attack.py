"""Worst-case stealthy attack synthesis by path-integral estimation.

The attacker faces a fixed, known control policy and chooses a bias theta
on the disturbance channel, trading damage against the Girsanov KL cost
D(P||Q) = 0.5 E^P int ||theta||^2 dt.  The soft-max value of the attacked
system solves a linear backward PDE, so it has the Monte Carlo
representation over bias-free (Q-measure) rollouts

    V_t(x) = lam * log E^Q[ exp(S / lam) ],        S = int_t^T c ds,

and the optimal bias is the exponentially tilted average of the very
first noise push of each rollout:

    theta*_t dt = H_t(x) E^Q[e^{S/lam} h_t dw_t] / E^Q[e^{S/lam}],
    H_t = h_t^T (h_t h_t^T)^+.

Both estimators share max-shifted weights, so they are invariant to
adding a constant to the running cost and never overflow.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .engine import (
    MEASURE_P,
    MEASURE_Q,
    MEASURE_Z,
    ControlAffineDynamics,
    CostModel,
    NumericsWarning,
    SeedSpec,
    TimeGrid,
    TrajectoryEnsemble,
    apply_gain,
    em_step,
    normal_increments,
    rollout_batch,
)

__all__ = [
    "AttackConfig",
    "BiasEstimate",
    "AttackRecord",
    "estimate_value",
    "estimate_bias",
    "synthesize_attack",
    "kl_cost",
    "write_attack_csv",
]

# ESS below this is a one-sample estimate in disguise.
ESS_FLOOR = 2.0

# Relative singular value cutoff; equals an absolute cutoff of
# 1e-10 * ||h h^T||_2 because rcond scales the largest singular value.
PINV_RCOND = 1e-10


@dataclass(frozen=True)
class AttackConfig:
    """Attack synthesis knobs: stealthiness weight and rollout budget.

    lookahead_steps caps the rollout horizon of each replanning ensemble
    (None = plan to the end of the grid).  Short lookaheads keep the
    exponential weights well conditioned when S varies strongly over the
    full horizon, at the cost of solving a truncated problem.
    """

    lam: float
    rollouts_per_decision: int = 2000
    replan_every: int = 1
    lookahead_steps: Optional[int] = None

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ValueError("lam must be positive")
        if self.rollouts_per_decision < 2:
            raise ValueError("rollouts_per_decision must be at least 2")
        if self.replan_every < 1:
            raise ValueError("replan_every must be a positive integer")
        if self.lookahead_steps is not None and self.lookahead_steps < 1:
            raise ValueError("lookahead_steps must be a positive integer or None")


@dataclass(frozen=True)
class BiasEstimate:
    """One decision-point estimate: bias per unit time, value, and ESS."""

    theta: np.ndarray
    value: float
    effective_sample_size: float


@dataclass(frozen=True)
class AttackRecord:
    """A closed-loop attacked run.

    trajectory: (K+1, n) states over the grid; bias_history: (K, m)
    applied theta; kl_cost: 0.5 sum_k ||theta_k||^2 dt.  ess_history holds
    (step, ESS, value) per replanning event for diagnostics.
    """

    times: np.ndarray
    trajectory: np.ndarray
    bias_history: np.ndarray
    kl_cost: float
    ess_history: tuple = field(default_factory=tuple)


def shifted_exponential_weights(scores):
    """Normalized weights w_i = exp(s_i - max s) / sum, plus ESS and log-mean-exp.

    scores is the exponent sequence (S_i / lam for the attacker,
    -S_i / alpha for the game side).  Returns (weights, ess, lme) where
    lme = log( (1/N) sum exp(s_i) ) evaluated stably.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.shape[0] < 2:
        raise ValueError("scores must be a vector of at least 2 entries")
    shift = scores.max()
    if not np.isfinite(shift):
        raise ValueError("scores contain non-finite entries")
    raw = np.exp(scores - shift)
    total = raw.sum()
    w = raw / total
    ess = 1.0 / float(np.sum(w * w))
    lme = shift + float(np.log(total / scores.shape[0]))
    return w, ess, lme


def _require_bias_free(ens: TrajectoryEnsemble):
    # Z is the zero-control special case of Q; both are bias-free.
    if ens.measure_tag not in (MEASURE_Q, MEASURE_Z):
        raise ValueError(f"estimator needs a bias-free ensemble, got {ens.measure_tag}")


def estimate_value(ensemble: TrajectoryEnsemble, lam: float) -> float:
    """lam * log( (1/N) sum_i exp(S_i / lam) ), max-shifted."""
    _require_bias_free(ensemble)
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if ensemble.count < 2:
        raise ValueError("need at least 2 trajectories")
    _, ess, lme = shifted_exponential_weights(ensemble.path_costs / lam)
    if ess < ESS_FLOOR:
        warnings.warn(
            f"exponential weights are degenerate (ESS={ess:.2f} of N={ensemble.count})",
            NumericsWarning,
            stacklevel=2,
        )
    return lam * lme


def estimate_bias(
    ensemble: TrajectoryEnsemble,
    lam: float,
    dyn: ControlAffineDynamics,
    x,
    t: float,
) -> BiasEstimate:
    """Tilted-average bias estimate at the query point (t, x).

    theta_hat = H(x) ( sum_i w_i h(x) dw_i ) / dt with normalized
    max-shifted weights w_i = exp(S_i/lam)/sum.  H = h^T (h h^T)^+ with
    singular values below 1e-10 * ||h h^T|| treated as zero.
    """
    _require_bias_free(ensemble)
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if ensemble.count < 2:
        raise ValueError("need at least 2 trajectories")
    x = np.asarray(x, dtype=float)
    w, ess, lme = shifted_exponential_weights(ensemble.path_costs / lam)
    if ess < ESS_FLOOR:
        warnings.warn(
            f"exponential weights are degenerate (ESS={ess:.2f} of N={ensemble.count})",
            NumericsWarning,
            stacklevel=2,
        )
    h = np.asarray(dyn.noise_gain(t, x), dtype=float)
    if h.shape != (dyn.state_dim, dyn.noise_dim):
        raise ValueError("noise_gain at the query point must be a single (n, m) matrix")
    pushed = ensemble.first_increments @ h.T  # (N, n) realized noise pushes
    avg = w @ pushed
    hhT = h @ h.T
    H = h.T @ np.linalg.pinv(hhT, rcond=PINV_RCOND)
    rank = np.linalg.matrix_rank(hhT, tol=PINV_RCOND * np.linalg.norm(hhT, 2))
    if rank < min(dyn.noise_dim, dyn.state_dim):
        warnings.warn(
            f"h h^T is rank deficient (rank {rank}); bias restricted to its row space",
            NumericsWarning,
            stacklevel=2,
        )
    theta = (H @ avg) / ensemble.dt
    return BiasEstimate(theta=theta, value=lam * lme, effective_sample_size=ess)


def synthesize_attack(
    dyn: ControlAffineDynamics,
    cost: CostModel,
    grid: TimeGrid,
    x0,
    fixed_control_policy: Optional[Callable],
    config: AttackConfig,
    seed: SeedSpec,
) -> AttackRecord:
    """Receding-horizon attacked closed loop against a fixed control policy.

    Every replan_every steps a fresh Q-measure ensemble is rolled out from
    the current state, the bias is re-estimated, and theta is held constant
    until the next replan.  Child seed streams: child(0) drives the closed
    loop's own noise, child(1 + k) the ensemble replanned at step k.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dyn.state_dim,):
        raise ValueError(f"x0 must have shape ({dyn.state_dim},)")
    K, m, n = grid.steps, dyn.noise_dim, dyn.state_dim
    dt = grid.dt
    times = grid.times()
    outer_dw = normal_increments(seed.child(0), 0, 1, K, m)[0] * np.sqrt(dt)

    traj = np.empty((K + 1, n))
    traj[0] = x0
    bias = np.empty((K, m))
    ess_hist = []
    x = x0
    theta_hold = np.zeros(m)
    for k in range(K):
        t = float(times[k])
        if k % config.replan_every == 0:
            steps = K - k
            if config.lookahead_steps is not None:
                steps = min(steps, config.lookahead_steps)
            sub = TimeGrid(t0=t, dt=dt, steps=steps)
            ens = rollout_batch(
                dyn, cost, sub, x, fixed_control_policy, None,
                config.rollouts_per_decision, seed.child(1 + k),
            )
            est = estimate_bias(ens, config.lam, dyn, x, t)
            theta_hold = est.theta
            ess_hist.append((k, est.effective_sample_size, est.value))
        u = None if fixed_control_policy is None else np.asarray(fixed_control_policy(t, x), dtype=float)
        x = em_step(x, t, u, theta_hold, outer_dw[k], dyn, dt)
        traj[k + 1] = x
        bias[k] = theta_hold
    return AttackRecord(
        times=times,
        trajectory=traj,
        bias_history=bias,
        kl_cost=kl_cost(bias, grid),
        ess_history=tuple(ess_hist),
    )


def kl_cost(bias_history, grid: TimeGrid) -> float:
    """0.5 sum_k ||theta_k||^2 dt per realization; mean over leading axes for batches.

    Summation order is fixed: per-step squared norms first, then a single
    pairwise sum over the step axis, then the dt and 1/2 factors.
    """
    th = np.asarray(bias_history, dtype=float)
    if th.ndim < 2 or th.shape[-2] != grid.steps:
        raise ValueError(f"bias_history must have {grid.steps} step rows")
    row_norms = np.sum(th * th, axis=-1)
    per_run = 0.5 * np.sum(row_norms, axis=-1) * grid.dt
    return float(np.mean(per_run))


def write_attack_csv(record: AttackRecord, path) -> None:
    """CSV with one row per step: step, t, x[0..n), theta[0..m), running_kl."""
    K, m = record.bias_history.shape
    n = record.trajectory.shape[1]
    dt = float(record.times[1] - record.times[0])
    header = (
        ["step", "t"]
        + [f"x{i}" for i in range(n)]
        + [f"theta{j}" for j in range(m)]
        + ["running_kl"]
    )
    running = 0.5 * np.cumsum(np.sum(record.bias_history ** 2, axis=-1)) * dt
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(K):
            row = (
                [str(k), repr(float(record.times[k]))]
                + [repr(float(v)) for v in record.trajectory[k]]
                + [repr(float(v)) for v in record.bias_history[k]]
                + [repr(float(running[k]))]
            )
            fh.write(",".join(row) + "\n")
