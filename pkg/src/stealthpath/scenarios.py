"""Benchmark systems: unicycle navigation and cruise lane-keeping.

Both are control-affine with additive actuated-channel noise, so the
noise/control proportionality holds by construction: h = g diag(sigma,
nu) gives h h^T = sigma^2 g R^-1 g^T whenever R is a matching scalar
multiple of the identity.  The unsafe set defines the crash statistic;
entering it is recorded, not absorbing.

Also houses the closed-form 1D problems used as estimator oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import (
    ControlAffineDynamics,
    CostModel,
    IntegrationDivergedError,
)

__all__ = [
    "UnicycleScenario",
    "CruiseScenario",
    "CrashReport",
    "AnalyticBenchmark",
    "unicycle_dynamics",
    "unicycle_cost",
    "unicycle_nominal_policy",
    "cruise_dynamics",
    "cruise_cost",
    "cruise_nominal_policy",
    "crash_probability",
    "analytic_1d_suite",
]

_PHI_GUARD = math.pi / 2.0 - 1e-3


@dataclass(frozen=True)
class UnicycleScenario:
    """Planar unicycle steering to a goal past an unsafe box.

    State (px, py, s, phi); controls and noise act on (s, phi).
    """

    goal: tuple = (4.0, -1.0)
    unsafe_box: tuple = (2.5, 4.0, 0.5, 1.5)  # x_lo, x_hi, y_lo, y_hi
    b: float = 0.1
    eta: float = 0.1
    sigma: float = 0.1
    nu: float = 0.1
    T: float = 5.0
    dt: float = 0.01
    x0: tuple = (0.0, 0.0, 1.0, 0.0)

    def __post_init__(self):
        for name in ("b", "eta", "sigma", "nu", "T", "dt"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        x_lo, x_hi, y_lo, y_hi = self.unsafe_box
        if not (x_lo < x_hi and y_lo < y_hi):
            raise ValueError("unsafe_box is degenerate")
        if len(self.x0) != 4:
            raise ValueError("x0 must have 4 components")

    def unsafe_mask(self, states) -> np.ndarray:
        """Boolean per state row: inside the unsafe box."""
        X = np.asarray(states, dtype=float)
        x_lo, x_hi, y_lo, y_hi = self.unsafe_box
        px, py = X[..., 0], X[..., 1]
        return (px >= x_lo) & (px <= x_hi) & (py >= y_lo) & (py <= y_hi)


@dataclass(frozen=True)
class CruiseScenario:
    """Kinematic car holding the center of a straight road.

    State (px, py, s, delta, phi): position, speed, heading, steering.
    Controls and noise act on (s, phi); the heading rate s tan(phi) / L
    has a singularity guard at |phi| near pi/2.  Crash = leaving the
    track |py| > half_width; crossing finish_x just ends the errand.
    """

    L: float = 0.05
    half_width: float = 0.5
    center_y: float = 0.0
    finish_x: float = 4.0
    b: float = 0.02
    R: float = 4.0
    eta: float = 0.02
    sigma: float = math.sqrt(0.005)
    nu: float = math.sqrt(0.005)
    T: float = 10.0
    dt: float = 0.02
    x0: tuple = (0.0, 0.0, 0.5, 0.0, 0.0)

    def __post_init__(self):
        for name in ("L", "half_width", "b", "R", "eta", "sigma", "nu", "T", "dt"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if len(self.x0) != 5:
            raise ValueError("x0 must have 5 components")
        if abs(self.x0[4]) >= _PHI_GUARD:
            raise ValueError("initial steering angle is inside the tan guard band")

    def unsafe_mask(self, states) -> np.ndarray:
        X = np.asarray(states, dtype=float)
        return np.abs(X[..., 1] - self.center_y) > self.half_width


@dataclass(frozen=True)
class CrashReport:
    """Crash statistics over a batch of closed-loop runs."""

    total: int
    crashed: int
    p_crash: float
    crash_steps: tuple = field(default_factory=tuple)  # first unsafe step, -1 if clean

    def __post_init__(self):
        if not (0 <= self.crashed <= self.total):
            raise ValueError("crashed must lie in [0, total]")
        if not (0.0 <= self.p_crash <= 1.0):
            raise ValueError("p_crash outside [0, 1]")


def unicycle_dynamics(scn: UnicycleScenario) -> ControlAffineDynamics:
    """n=4, l=m=2; drift turns speed and heading into velocity."""

    g = np.zeros((4, 2))
    g[2, 0] = 1.0
    g[3, 1] = 1.0
    h = g @ np.diag([scn.sigma, scn.nu])

    def drift(t, x):
        s, phi = x[..., 2], x[..., 3]
        out = np.zeros_like(x)
        out[..., 0] = s * np.cos(phi)
        out[..., 1] = s * np.sin(phi)
        return out

    return ControlAffineDynamics(
        state_dim=4,
        control_dim=2,
        noise_dim=2,
        drift=drift,
        control_gain=lambda t, x: g,
        noise_gain=lambda t, x: h,
    )


def unicycle_cost(scn: UnicycleScenario) -> CostModel:
    """b * squared goal distance + quadratic control + eta inside the box."""

    gx, gy = scn.goal

    def state_cost(t, x):
        d2 = (gx - x[..., 0]) ** 2 + (gy - x[..., 1]) ** 2
        return scn.b * d2 + scn.eta * scn.unsafe_mask(x)

    return CostModel(
        state_cost=state_cost,
        control_weight=lambda t, x: np.eye(2),
        horizon=scn.T,
    )


def unicycle_nominal_policy(
    scn: UnicycleScenario,
    k_speed=1.0,
    k_turn=0.45,
    k_track=0.2,
    y_corridor=0.1,
    s_ref=1.2,
    s_max=1.5,
    x_dive=3.8,
    r_stop=0.2,
    phi_clip=0.6,
):
    """Two-phase goal seeker: hold an eastbound corridor, then dive to the goal.

    Phase one tracks the corridor at y_corridor with cross-track feedback
    on the heading; past x_dive the policy switches to bearing pursuit of
    the goal.  Inside r_stop of the goal the bearing is ill-conditioned,
    so the policy brakes and holds heading instead of chasing atan2
    jitter.  The corridor skims the south edge of the unsafe box, which
    is what makes the scenario interesting: a small sustained heading
    bias is enough to push the vehicle inside.
    """

    gx, gy = scn.goal

    def policy(t, x):
        x = np.asarray(x, dtype=float)
        px, py, s, phi = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
        dx_, dy = gx - px, gy - py
        dist = np.sqrt(dx_ * dx_ + dy * dy)
        # corridor heading: straight east, corrected toward the reference line
        phi_corr = np.clip(k_track * (y_corridor - py), -phi_clip, phi_clip)
        phi_goal = np.arctan2(dy, dx_)
        diving = px >= x_dive
        phi_des = np.where(diving, phi_goal, phi_corr)
        err = phi_des - phi
        err = (err + np.pi) % (2.0 * np.pi) - np.pi  # shortest turn
        near = dist < r_stop
        target_s = np.where(diving, np.minimum(dist, s_max), s_ref)
        u = np.empty(x.shape[:-1] + (2,))
        u[..., 0] = k_speed * (np.where(near, 0.0, target_s) - s)
        u[..., 1] = np.where(near, 0.0, k_turn * err)
        return u

    return policy


def cruise_dynamics(scn: CruiseScenario) -> ControlAffineDynamics:
    """n=5, l=m=2; bicycle steering with the tan singularity guarded."""

    g = np.zeros((5, 2))
    g[2, 0] = 1.0
    g[4, 1] = 1.0
    h = g @ np.diag([scn.sigma, scn.nu])

    def drift(t, x):
        s, delta, phi = x[..., 2], x[..., 3], x[..., 4]
        bad = np.abs(phi) >= _PHI_GUARD
        if np.any(bad):
            idx = int(np.argmax(bad)) if x.ndim > 1 else None
            raise IntegrationDivergedError(
                "steering angle reached the tan singularity guard",
                trajectory_index=idx,
            )
        out = np.zeros_like(x)
        out[..., 0] = s * np.cos(delta)
        out[..., 1] = s * np.sin(delta)
        out[..., 3] = s * np.tan(phi) / scn.L
        return out

    return ControlAffineDynamics(
        state_dim=5,
        control_dim=2,
        noise_dim=2,
        drift=drift,
        control_gain=lambda t, x: g,
        noise_gain=lambda t, x: h,
    )


def cruise_cost(scn: CruiseScenario) -> CostModel:
    """b * squared distance to (finish, center) + u^T R u / 2 + eta off-track."""

    def state_cost(t, x):
        d2 = (scn.finish_x - x[..., 0]) ** 2 + (scn.center_y - x[..., 1]) ** 2
        return scn.b * d2 + scn.eta * scn.unsafe_mask(x)

    return CostModel(
        state_cost=state_cost,
        control_weight=lambda t, x: scn.R * np.eye(2),
        horizon=scn.T,
    )


def cruise_nominal_policy(
    scn: CruiseScenario,
    k_y=0.15, k_delta=0.5, k_phi=1.6,
    y_engage=0.25, k_y_r=1.2, k_delta_r=2.5, k_phi_r=10.0, delta_max_r=0.3,
    k_speed=0.2, s_ref=0.5, delta_max=0.5, phi_max=0.35,
):
    """Two-zone lane keeper: nested loops with a hard recovery mode.

    Inside the comfort band |py| < y_engage the cascade lateral error ->
    heading -> steering runs at gentle gains and mostly lets the car
    wander.  Past the band the recovery gains track hard, but toward a
    capped heading target (delta_max_r), so the pullback is brisk rather
    than brutal.  The steering target is clipped far inside the tan
    guard.
    """

    def policy(t, x):
        x = np.asarray(x, dtype=float)
        py, s, delta, phi = x[..., 1], x[..., 2], x[..., 3], x[..., 4]
        ey = py - scn.center_y
        rec = np.abs(ey) > y_engage
        ky = np.where(rec, k_y_r, k_y)
        kd = np.where(rec, k_delta_r, k_delta)
        kp = np.where(rec, k_phi_r, k_phi)
        dmax = np.where(rec, delta_max_r, delta_max)
        delta_des = np.clip(-ky * ey, -dmax, dmax)
        phi_des = np.clip(kd * (delta_des - delta), -phi_max, phi_max)
        u = np.empty(x.shape[:-1] + (2,))
        u[..., 0] = k_speed * (s_ref - s)
        u[..., 1] = kp * (phi_des - phi)
        return u

    return policy


def crash_probability(runs, scn) -> CrashReport:
    """A run crashes when any grid state is in the scenario's unsafe set."""
    if not runs:
        raise ValueError("need at least one run")
    steps = []
    crashed = 0
    for rec in runs:
        states = getattr(rec, "states", None)
        if states is None:
            states = rec.trajectory
        mask = scn.unsafe_mask(states)
        if mask.any():
            crashed += 1
            steps.append(int(np.argmax(mask)))
        else:
            steps.append(-1)
    total = len(runs)
    return CrashReport(
        total=total, crashed=crashed, p_crash=crashed / total, crash_steps=tuple(steps)
    )


@dataclass(frozen=True)
class AnalyticBenchmark:
    """A 1D problem with closed-form value and policies.

    kind is "attack" (soft-max tilt at lam) or "game" (certified saddle
    at lam with alpha = gamma); value/theta_star/u_star are callables of
    (x, t) returning the closed forms; u_star is None on the attack side.
    """

    name: str
    kind: str
    lam: float
    dyn: ControlAffineDynamics
    cost: CostModel
    value: object
    theta_star: object
    u_star: object = None


def _scalar_dyn(with_control: bool) -> ControlAffineDynamics:
    gmat = np.array([[1.0 if with_control else 0.0]])
    return ControlAffineDynamics(
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        drift=lambda t, x: np.zeros_like(x),
        control_gain=lambda t, x: gmat,
        noise_gain=lambda t, x: np.array([[1.0]]),
    )


def analytic_1d_suite() -> list:
    """Constant-cost, linear attack, and linear game benchmarks."""
    T = 1.0

    c0 = 0.7
    const_cost = CostModel(
        state_cost=lambda t, x: np.full(np.shape(x)[:-1], c0),
        control_weight=lambda t, x: np.eye(1),
        horizon=T,
    )
    linear_cost = CostModel(
        state_cost=lambda t, x: x[..., 0],
        control_weight=lambda t, x: np.eye(1),
        horizon=T,
    )

    suite = [
        AnalyticBenchmark(
            name="constant_cost",
            kind="attack",
            lam=1.0,
            dyn=_scalar_dyn(False),
            cost=const_cost,
            value=lambda x, t: c0 * (T - t),
            theta_star=lambda x, t: 0.0,
        ),
        AnalyticBenchmark(
            name="linear_attack",
            kind="attack",
            lam=1.0,
            dyn=_scalar_dyn(False),
            cost=linear_cost,
            # V = a x (T-t) + a^2 (T-t)^3 / (6 lam), a = 1
            value=lambda x, t: x * (T - t) + (T - t) ** 3 / 6.0,
            theta_star=lambda x, t: (T - t),
        ),
        AnalyticBenchmark(
            name="linear_game",
            kind="game",
            lam=10.0,  # xi = 1 here, so any lam > 1 certifies; alpha = 10/9
            dyn=_scalar_dyn(True),
            cost=linear_cost,
            value=lambda x, t: x * (T - t) - (T - t) ** 3 * (9.0 / 10.0) / 6.0,
            theta_star=lambda x, t: (T - t) / 10.0,
            u_star=lambda x, t: -(T - t),
        ),
    ]
    return suite
