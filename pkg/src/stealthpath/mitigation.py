"""Saddle-point mitigation: gain certification and game-side estimators.

The controller's minimax problem against a KL-constrained attacker is
solvable by path integrals when the noise gain is proportional to the
control authority.  Two proportionality certificates are checked on
user-supplied sample points:

    h h^T = xi  g R^-1 g^T            (0 < xi < lam, risk-sensitive route)
    h h^T = alpha (g R^-1 g^T - (1/lam) h h^T)          (game route)

with gamma = xi lam / (lam - xi); the two routes coincide (alpha = gamma),
which is verified rather than assumed.  The game value over uncontrolled
(Z-measure) rollouts carrying state cost only is

    V_t(x) = -alpha log E^Z[ exp(-S_l / alpha) ],

and both saddle policies are linear images of one tilted first-increment
average W:

    u* = R^-1 g^T B^+ W,   theta* = -(1/lam) h^T B^+ W,
    B = g R^-1 g^T - (1/lam) h h^T.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .attack import AttackConfig, ESS_FLOOR, PINV_RCOND, kl_cost, shifted_exponential_weights
from .engine import (
    MEASURE_Z,
    AssumptionViolatedError,
    ControlAffineDynamics,
    CostModel,
    NumericsWarning,
    SeedSpec,
    TimeGrid,
    TrajectoryEnsemble,
    em_step,
    normal_increments,
    rollout_batch,
)

__all__ = [
    "GainCertificate",
    "SaddlePointEstimate",
    "GameRunRecord",
    "solve_xi",
    "gamma_from_xi",
    "solve_alpha",
    "certify",
    "estimate_game_value",
    "risk_sensitive_value",
    "estimate_saddle_point",
    "run_closed_loop_game",
    "certificate_report",
    "write_game_csv",
]

RESIDUAL_RTOL = 1e-8
GAME_MODES = ("both_play", "controller_only", "attacker_only")


@dataclass(frozen=True)
class GainCertificate:
    """(lam, xi, gamma, alpha) with verification residuals.

    valid requires both proportionality fits to pass their residual gates,
    0 < xi < lam, alpha > 0, and |alpha - gamma| <= 1e-9 max(1, gamma).
    Failed quantities are NaN and explained in notes.
    """

    lam: float
    xi: float
    gamma: float
    alpha: float
    residual_xi: float
    residual_alpha: float
    valid: bool
    notes: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class SaddlePointEstimate:
    """Saddle policies at one decision point, from one Z ensemble.

    bracket_rank is the numerical rank of B = g R^-1 g^T - (1/lam) h h^T
    at the query point; a rank below n means the pseudo-inverse restricted
    the policies to the actuated subspace.
    """

    u_star: np.ndarray
    theta_star: np.ndarray
    value: float
    effective_sample_size: float
    bracket_rank: int = 0


@dataclass(frozen=True)
class GameRunRecord:
    """A closed-loop game run: states, both players' inputs, running cost."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    bias_history: np.ndarray
    cumulative_cost: np.ndarray
    kl_cost: float
    mode: str
    ess_history: tuple = field(default_factory=tuple)


def _control_weight_matrix(cost: CostModel, t, x, l: int) -> np.ndarray:
    R = np.asarray(cost.control_weight(t, x), dtype=float)
    if R.shape != (l, l):
        raise ValueError(f"control_weight must be ({l}, {l}) at a single point")
    if np.max(np.abs(R - R.T)) > 1e-10 * max(1.0, np.max(np.abs(R))):
        raise ValueError("control_weight must be symmetric within 1e-10")
    return R


def _gain_matrices(dyn: ControlAffineDynamics, cost: CostModel, t, x):
    x = np.asarray(x, dtype=float)
    g = np.asarray(dyn.control_gain(t, x), dtype=float)
    h = np.asarray(dyn.noise_gain(t, x), dtype=float)
    if g.shape != (dyn.state_dim, dyn.control_dim) or h.shape != (dyn.state_dim, dyn.noise_dim):
        raise ValueError("gains at a single point must be (n, l) and (n, m) matrices")
    R = _control_weight_matrix(cost, t, x, dyn.control_dim)
    M = g @ np.linalg.solve(R, g.T)  # g R^-1 g^T
    return g, h, R, M


def _scalar_proportionality_fit(targets, bases, sample_points, what):
    """Least-squares scalar c with targets_i ~ c * bases_i; max-norm residual gate."""
    denom = sum(float(np.sum(b * b)) for b in bases)
    if denom <= 0.0:
        raise AssumptionViolatedError(
            f"{what}: basis matrices vanish on every sample point", worst_point=sample_points[0]
        )
    numer = sum(float(np.sum(b * a)) for a, b in zip(targets, bases))
    c = numer / denom
    per_point = [float(np.max(np.abs(a - c * b))) for a, b in zip(targets, bases)]
    worst = int(np.argmax(per_point))
    residual = per_point[worst]
    scale = max(float(np.max(np.abs(a))) for a in targets)
    tol = RESIDUAL_RTOL * max(scale, 1e-300)
    if residual > tol:
        t_w, x_w = sample_points[worst]
        raise AssumptionViolatedError(
            f"{what}: no scalar fits; worst residual {residual:.3e} > {tol:.3e} "
            f"at sample point #{worst} (t={t_w}, x={np.asarray(x_w)})",
            worst_point=sample_points[worst],
            residual=residual,
        )
    return c, residual


def solve_xi(dyn, cost, sample_points: Sequence, lam: float):
    """Fit h h^T = xi g R^-1 g^T over sample points; xi must land in (0, lam)."""
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if not sample_points:
        raise ValueError("sample_points must be nonempty")
    targets, bases = [], []
    for (t, x) in sample_points:
        _, h, _, M = _gain_matrices(dyn, cost, t, x)
        targets.append(h @ h.T)
        bases.append(M)
    xi, residual = _scalar_proportionality_fit(
        targets, bases, sample_points, "noise/control proportionality"
    )
    if not (0.0 < xi < lam):
        raise AssumptionViolatedError(
            f"fitted xi={xi:.6g} outside (0, lam={lam})", residual=residual
        )
    return xi, residual


def gamma_from_xi(xi: float, lam: float) -> float:
    """gamma = xi lam / (lam - xi)."""
    if not (0.0 < xi < lam):
        raise ValueError(f"need 0 < xi < lam, got xi={xi}, lam={lam}")
    return xi * lam / (lam - xi)


def solve_alpha(dyn, cost, sample_points: Sequence, lam: float):
    """Fit h h^T = alpha (g R^-1 g^T - (1/lam) h h^T); alpha must be positive."""
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if not sample_points:
        raise ValueError("sample_points must be nonempty")
    targets, bases = [], []
    for (t, x) in sample_points:
        _, h, _, M = _gain_matrices(dyn, cost, t, x)
        hhT = h @ h.T
        targets.append(hhT)
        bases.append(M - hhT / lam)
    alpha, residual = _scalar_proportionality_fit(
        targets, bases, sample_points, "game-bracket proportionality"
    )
    if alpha <= 0.0:
        raise AssumptionViolatedError(
            f"fitted alpha={alpha:.6g} is not positive (bracket has the wrong sign)",
            residual=residual,
        )
    return alpha, residual


def certify(dyn, cost, sample_points: Sequence, lam: float) -> GainCertificate:
    """Bundle xi, gamma, alpha with residuals; encodes failures, never raises."""
    notes = []
    xi = gamma = alpha = float("nan")
    res_xi = res_alpha = float("nan")
    try:
        xi, res_xi = solve_xi(dyn, cost, sample_points, lam)
        gamma = gamma_from_xi(xi, lam)
    except (AssumptionViolatedError, ValueError) as err:
        notes.append(f"xi: {err}")
    try:
        alpha, res_alpha = solve_alpha(dyn, cost, sample_points, lam)
    except (AssumptionViolatedError, ValueError) as err:
        notes.append(f"alpha: {err}")
    valid = not notes
    if valid and not (abs(alpha - gamma) <= 1e-9 * max(1.0, gamma)):
        notes.append(f"alpha={alpha!r} and gamma={gamma!r} disagree beyond 1e-9")
        valid = False
    return GainCertificate(
        lam=lam, xi=xi, gamma=gamma, alpha=alpha,
        residual_xi=res_xi, residual_alpha=res_alpha,
        valid=valid, notes=tuple(notes),
    )


def estimate_game_value(ensemble: TrajectoryEnsemble, alpha: float) -> float:
    """-alpha log( (1/N) sum_i exp(-S_i / alpha) ), min-shifted.

    Requires an uncontrolled (Z-measure) ensemble, whose path costs reduce
    to the state cost alone.  The same formula evaluated at gamma is the
    risk-sensitive value; see risk_sensitive_value.
    """
    if ensemble.measure_tag != MEASURE_Z:
        raise ValueError(f"game value needs a Z_uncontrolled ensemble, got {ensemble.measure_tag}")
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if ensemble.count < 2:
        raise ValueError("need at least 2 trajectories")
    _, ess, lme = shifted_exponential_weights(-ensemble.path_costs / alpha)
    if ess < ESS_FLOOR:
        warnings.warn(
            f"exponential weights are degenerate (ESS={ess:.2f} of N={ensemble.count})",
            NumericsWarning,
            stacklevel=2,
        )
    return -alpha * lme


# One implementation serves both the risk-sensitive and the game route;
# the certificate's alpha = gamma identity is what licenses the sharing.
risk_sensitive_value = estimate_game_value


def estimate_saddle_point(
    ensemble: TrajectoryEnsemble,
    certificate: GainCertificate,
    dyn: ControlAffineDynamics,
    cost: CostModel,
    x,
    t: float,
) -> SaddlePointEstimate:
    """Both saddle policies from one Z ensemble at the query point (t, x).

    W = (sum_i w_i h dw_i) / dt with min-shifted weights w_i ~ exp(-S_i/alpha);
    u* = R^-1 g^T B^+ W and theta* = -(1/lam) h^T B^+ W share it.  The cost
    model supplies R at the query point.
    """
    if not certificate.valid:
        raise AssumptionViolatedError(
            "cannot estimate a saddle point from an invalid certificate: "
            + ("; ".join(certificate.notes) or "no diagnostic recorded")
        )
    if ensemble.measure_tag != MEASURE_Z:
        raise ValueError(f"saddle point needs a Z_uncontrolled ensemble, got {ensemble.measure_tag}")
    if ensemble.count < 2:
        raise ValueError("need at least 2 trajectories")
    x = np.asarray(x, dtype=float)
    w, ess, lme = shifted_exponential_weights(-ensemble.path_costs / certificate.alpha)
    if ess < ESS_FLOOR:
        warnings.warn(
            f"exponential weights are degenerate (ESS={ess:.2f} of N={ensemble.count})",
            NumericsWarning,
            stacklevel=2,
        )
    g, h, R, M = _gain_matrices(dyn, cost, t, x)
    pushed = ensemble.first_increments @ h.T  # (N, n)
    W = (w @ pushed) / ensemble.dt
    B = M - (h @ h.T) / certificate.lam
    B_pinv = np.linalg.pinv(B, rcond=PINV_RCOND)
    rank = int(np.linalg.matrix_rank(B, tol=PINV_RCOND * max(np.linalg.norm(B, 2), 1e-300)))
    u_star = np.linalg.solve(R, g.T @ (B_pinv @ W))
    theta_star = -(h.T @ (B_pinv @ W)) / certificate.lam
    return SaddlePointEstimate(
        u_star=u_star,
        theta_star=theta_star,
        value=-certificate.alpha * lme,
        effective_sample_size=ess,
        bracket_rank=rank,
    )


def run_closed_loop_game(
    dyn: ControlAffineDynamics,
    cost: CostModel,
    grid: TimeGrid,
    x0,
    certificate: GainCertificate,
    config: AttackConfig,
    seed: SeedSpec,
    mode: str = "both_play",
) -> GameRunRecord:
    """Receding-horizon application of the estimated saddle policies.

    mode selects which player applies her estimate; the other plays zero.
    Replanning draws a fresh Z ensemble from the current state every
    config.replan_every steps; child seed streams as in synthesize_attack.
    """
    if mode not in GAME_MODES:
        raise ValueError(f"mode must be one of {GAME_MODES}")
    if abs(config.lam - certificate.lam) > 1e-12 * max(1.0, abs(certificate.lam)):
        raise ValueError("config.lam and certificate.lam disagree")
    if not certificate.valid:
        raise AssumptionViolatedError(
            "closed-loop game needs a valid certificate: "
            + ("; ".join(certificate.notes) or "no diagnostic recorded")
        )
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dyn.state_dim,):
        raise ValueError(f"x0 must have shape ({dyn.state_dim},)")
    K, m, n, l = grid.steps, dyn.noise_dim, dyn.state_dim, dyn.control_dim
    dt = grid.dt
    times = grid.times()
    outer_dw = normal_increments(seed.child(0), 0, 1, K, m)[0] * np.sqrt(dt)

    states = np.empty((K + 1, n))
    states[0] = x0
    controls = np.zeros((K, l))
    bias = np.zeros((K, m))
    cumulative = np.empty(K)
    ess_hist = []
    x = x0
    u_hold = np.zeros(l)
    th_hold = np.zeros(m)
    running = 0.0
    for k in range(K):
        t = float(times[k])
        if k % config.replan_every == 0:
            steps = K - k
            if config.lookahead_steps is not None:
                steps = min(steps, config.lookahead_steps)
            sub = TimeGrid(t0=t, dt=dt, steps=steps)
            ens = rollout_batch(
                dyn, cost, sub, x, None, None,
                config.rollouts_per_decision, seed.child(1 + k),
            )
            est = estimate_saddle_point(ens, certificate, dyn, cost, x, t)
            u_hold = est.u_star if mode in ("both_play", "controller_only") else np.zeros(l)
            th_hold = est.theta_star if mode in ("both_play", "attacker_only") else np.zeros(m)
            ess_hist.append((k, est.effective_sample_size, est.value))
        running += float(cost.running(t, x, u_hold)) * dt
        cumulative[k] = running
        x = em_step(x, t, u_hold, th_hold, outer_dw[k], dyn, dt)
        states[k + 1] = x
        controls[k] = u_hold
        bias[k] = th_hold
    return GameRunRecord(
        times=times,
        states=states,
        controls=controls,
        bias_history=bias,
        cumulative_cost=cumulative,
        kl_cost=kl_cost(bias, grid),
        mode=mode,
        ess_history=tuple(ess_hist),
    )


def certificate_report(cert: GainCertificate) -> str:
    """key=value text form of a certificate."""
    lines = [
        f"lambda={cert.lam!r}",
        f"xi={cert.xi!r}",
        f"gamma={cert.gamma!r}",
        f"alpha={cert.alpha!r}",
        f"residual_xi={cert.residual_xi!r}",
        f"residual_alpha={cert.residual_alpha!r}",
        f"valid={str(cert.valid).lower()}",
    ]
    for i, note in enumerate(cert.notes):
        lines.append(f"note{i}={note}")
    return "\n".join(lines) + "\n"


def write_game_csv(record: GameRunRecord, path, unsafe=None) -> None:
    """CSV rows: step, t, state, u, theta, cumulative cost, crash flag.

    unsafe is an optional vectorized predicate over states defining the
    crash flag; without it the flag column is all zeros.
    """
    K, m = record.bias_history.shape
    n = record.states.shape[1]
    l = record.controls.shape[1]
    flags = np.zeros(K + 1, dtype=int)
    if unsafe is not None:
        flags = np.asarray(unsafe(record.states), dtype=bool).astype(int)
    header = (
        ["step", "t"]
        + [f"x{i}" for i in range(n)]
        + [f"u{j}" for j in range(l)]
        + [f"theta{j}" for j in range(m)]
        + ["cumulative_cost", "crash_flag"]
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(K):
            row = (
                [str(k), repr(float(record.times[k]))]
                + [repr(float(v)) for v in record.states[k]]
                + [repr(float(v)) for v in record.controls[k]]
                + [repr(float(v)) for v in record.bias_history[k]]
                + [repr(float(record.cumulative_cost[k])), str(int(flags[k]))]
            )
            fh.write(",".join(row) + "\n")
