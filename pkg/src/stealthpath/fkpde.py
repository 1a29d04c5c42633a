"""Finite-difference oracle for the exponentially transformed value.

The soft-max value V = lam log E exp(S/lam) of a 1D uncontrolled problem
dx = f(x) dt + h dW with running state cost l(x) satisfies, through
Psi = exp(V / lam), the linear backward equation

    dPsi/dt + f Psi_x + (1/2) h^2 Psi_xx + (l / lam) Psi = 0,  Psi(T) = 1,

and the game-side value V = -alpha log E exp(-S/alpha) is the same
equation with the source sign flipped.  An explicit Euler march backward
from T gives an independent check of the Monte Carlo estimators; the
scheme is the validation oracle, so clarity wins over speed.

Autonomous 1D problems only.  The boundary uses zero-slope extension,
so query points must sit far from the edges relative to h * sqrt(T).
"""

from __future__ import annotations

import numpy as np

__all__ = ["solve_value_pde", "ou_benchmark_problem"]


def solve_value_pde(
    drift,
    state_cost,
    noise_scale: float,
    lam_eff: float,
    horizon: float,
    x_lo: float,
    x_hi: float,
    dx: float = 0.01,
    dt: float = None,
    sign: int = +1,
):
    """(x_grid, V at t=0) for the 1D value with tilt sign +1 or -1.

    sign=+1 is the soft-max (attack) value at temperature lam_eff;
    sign=-1 the soft-min (game/risk-sensitive) value.  drift and
    state_cost are vectorized over the grid.
    """
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    if not (noise_scale > 0.0 and lam_eff > 0.0 and horizon > 0.0 and dx > 0.0):
        raise ValueError("noise_scale, lam_eff, horizon, dx must be positive")
    x = np.arange(x_lo, x_hi + 0.5 * dx, dx)
    f = np.asarray(drift(x), dtype=float)
    l = np.asarray(state_cost(x), dtype=float)
    D = 0.5 * noise_scale**2
    if dt is None:
        # diffusion number <= 1/4 and advection CFL <= 1/2
        dt = min(0.25 * dx * dx / D, 0.5 * dx / max(np.max(np.abs(f)), 1e-12))
        dt = horizon / int(np.ceil(horizon / dt))
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * horizon:
        raise ValueError("dt must divide the horizon")

    psi = np.ones_like(x)
    src = sign * l / lam_eff
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is checked below
        for _ in range(steps):
            # zero-slope ghost cells at both edges
            pad = np.concatenate(([psi[0]], psi, [psi[-1]]))
            psi_x = (pad[2:] - pad[:-2]) / (2.0 * dx)
            psi_xx = (pad[2:] - 2.0 * pad[1:-1] + pad[:-2]) / (dx * dx)
            psi = psi + dt * (f * psi_x + D * psi_xx + src * psi)
            if not np.all(np.isfinite(psi)):
                raise RuntimeError("finite-difference march diverged; reduce dt")
    return x, sign * lam_eff * np.log(psi)


def ou_benchmark_problem():
    """Mean-reverting drift with a bounded bell cost: stable and smooth.

    Bounded cost keeps the exponential weights tame, so the Monte Carlo
    comparison at the interior query points is sharp.
    """
    return {
        "drift": lambda x: -0.3 * x,
        "state_cost": lambda x: 1.0 / (1.0 + x * x),
        "noise_scale": 1.0,
        "lam_eff": 1.0,
        "horizon": 1.0,
        "x_lo": -8.0,
        "x_hi": 8.0,
    }
