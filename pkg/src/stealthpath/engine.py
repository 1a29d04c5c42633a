"""Batched Euler-Maruyama simulation of control-affine SDEs.

The system class is

    dx_t = f(t, x_t) dt + g(t, x_t) u_t dt + h(t, x_t) dv_t,
    dv_t = theta_t dt + dw_t,

with state x in R^n, control u in R^l, disturbance channel v in R^m, and
w a standard m-dimensional Brownian motion.  The bias theta is the attack
input; theta = 0 recovers the nominal disturbance model.

Everything downstream (value / bias / saddle-point estimators) consumes
``TrajectoryEnsemble`` objects produced here.  Three sampling measures are
distinguished by tag:

    P_nominal      bias policy applied (attacked paths)
    Q_brownian     bias identically zero, control policy applied
    Z_uncontrolled bias and control both identically zero

Randomness is counter-addressed: trajectory i owns a fixed window of the
Philox stream keyed by the master seed, and step k consumes words
[k*m, (k+1)*m) of that window.  Draws are therefore a pure function of
(master_seed, i, k), so chunked or multi-threaded execution cannot reorder
them and ensembles are bitwise reproducible for any worker count.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri

__all__ = [
    "NumericsWarning",
    "IntegrationDivergedError",
    "AssumptionViolatedError",
    "SeedSpec",
    "TimeGrid",
    "ControlAffineDynamics",
    "CostModel",
    "TrajectoryEnsemble",
    "normal_increments",
    "em_step",
    "rollout_batch",
    "path_cost",
    "dump_ensemble",
    "load_ensemble",
    "resolve_workers",
]

MEASURE_P = "P_nominal"
MEASURE_Q = "Q_brownian"
MEASURE_Z = "Z_uncontrolled"

# Smallest uniform admitted to the normal quantile map; ndtri(0) = -inf.
_U_FLOOR = 2.0 ** -54

# Chunks are sized so one chunk's noise block stays around 240 MB.
_CHUNK_WORDS = 30_000_000


class NumericsWarning(UserWarning):
    """Degenerate importance weights, rank deficiency, and similar soft failures."""


class IntegrationDivergedError(RuntimeError):
    """A state left the finite domain during integration.

    Carries the trajectory index and step index when they are known;
    either may be None if the failure is not attributable to one path.
    """

    def __init__(self, message, trajectory_index=None, step_index=None):
        super().__init__(message)
        self.trajectory_index = trajectory_index
        self.step_index = step_index


class AssumptionViolatedError(ValueError):
    """A required gain proportionality does not hold on the sampled points."""

    def __init__(self, message, worst_point=None, residual=None):
        super().__init__(message)
        self.worst_point = worst_point
        self.residual = residual


@dataclass(frozen=True)
class SeedSpec:
    """Master seed for counter-addressed noise streams.

    Trajectory i, step k reads words (master_seed, i, k) of the keyed
    Philox stream; see ``normal_increments``.  ``child`` derives an
    independent sub-stream for nested uses (per evaluation run, per
    replanning event) through SeedSequence spawn keys.
    """

    master_seed: int

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < 2 ** 64):
            raise ValueError("master_seed must be a 64-bit unsigned integer")

    def child(self, *indices: int) -> "SeedSpec":
        ss = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=tuple(int(i) for i in indices))
        return SeedSpec(int(ss.generate_state(1, np.uint64)[0]))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0, t0 + dt, ..., t0 + steps*dt."""

    t0: float
    dt: float
    steps: int

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.steps < 1:
            raise ValueError("steps must be a positive integer")

    @staticmethod
    def from_horizon(t0: float, t1: float, dt: float) -> "TimeGrid":
        if dt <= 0.0 or t1 <= t0:
            raise ValueError("need dt > 0 and t1 > t0")
        steps = int(round((t1 - t0) / dt))
        if steps < 1 or abs(steps * dt - (t1 - t0)) > 1e-9:
            raise ValueError(f"horizon {t1 - t0} is not an integer multiple of dt={dt}")
        return TimeGrid(t0=float(t0), dt=float(dt), steps=steps)

    @property
    def t1(self) -> float:
        return self.t0 + self.steps * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class ControlAffineDynamics:
    """The triple (f, g, h) with dimensions.

    drift(t, x) -> (..., n); control_gain(t, x) -> (n, l) or (..., n, l);
    noise_gain(t, x) -> (n, m) or (..., n, m).  All callables must be
    vectorized over leading state dimensions and pure.
    """

    state_dim: int
    control_dim: int
    noise_dim: int
    drift: Callable
    control_gain: Callable
    noise_gain: Callable

    def __post_init__(self):
        if min(self.state_dim, self.control_dim, self.noise_dim) < 1:
            raise ValueError("dimensions must be positive integers")


@dataclass(frozen=True)
class CostModel:
    """Running cost c(t, x, u) = state_cost(t, x) + 0.5 u^T R(t, x) u over [0, T]."""

    state_cost: Callable
    control_weight: Callable
    horizon: float

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")

    def running(self, t, x, u=None):
        c = np.asarray(self.state_cost(t, x), dtype=float)
        if u is not None:
            c = c + quadratic_control_cost(self.control_weight(t, x), u)
        return c


def quadratic_control_cost(R, u):
    """0.5 u^T R u, batched over leading axes of u.

    One code path for single and batched inputs so the per-lane floating
    point sequence is identical wherever the same numbers appear.
    """
    R = np.asarray(R, dtype=float)
    u = np.asarray(u, dtype=float)
    if R.ndim == 2:
        Ru = u @ R.T
    else:
        Ru = np.einsum("...ij,...j->...i", R, u)
    return 0.5 * np.sum(Ru * u, axis=-1)


def apply_gain(G, vec):
    """Matrix-vector product G @ vec for shared (n, d) or per-state (..., n, d) gains."""
    G = np.asarray(G, dtype=float)
    vec = np.asarray(vec, dtype=float)
    if G.ndim == 2:
        return vec @ G.T
    return np.einsum("...nd,...d->...n", G, vec)


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """N simulated paths and their running costs.

    In the lean record mode (the default for large N) the per-step arrays
    states / noise_increments / controls are None and only path costs,
    first-step noise increments, and terminal states are kept; that is
    sufficient for every estimator in this package.  Full mode retains
    everything and is required for serialization.
    """

    count: int
    times: np.ndarray
    path_costs: np.ndarray
    first_increments: np.ndarray
    terminal_states: np.ndarray
    measure_tag: str
    states: Optional[np.ndarray] = None
    noise_increments: Optional[np.ndarray] = None
    controls: Optional[np.ndarray] = None

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def state_dim(self) -> int:
        return int(self.terminal_states.shape[-1])

    @property
    def noise_dim(self) -> int:
        return int(self.first_increments.shape[-1])

    @property
    def is_full(self) -> bool:
        return self.states is not None


def _freeze(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def normal_increments(seed: SeedSpec, i0: int, i1: int, steps: int, m: int) -> np.ndarray:
    """Unit normals for trajectories [i0, i1), shape (i1-i0, steps, m).

    Trajectory i's draws occupy words [i*W, (i+1)*W) of the Philox stream
    keyed by the master seed, W = steps*m rounded up to a multiple of 4 so
    every window starts on a counter-block boundary.  The slice returned
    for [i0, i1) is bitwise equal to the same rows of a [0, N) call.
    """
    if not (0 <= i0 <= i1):
        raise ValueError("need 0 <= i0 <= i1")
    if steps < 1 or m < 1:
        raise ValueError("steps and m must be positive")
    count = i1 - i0
    if count == 0:
        return np.empty((0, steps, m))
    w = steps * m
    w4 = -(-w // 4) * 4  # Philox emits 4 words per counter tick
    bg = np.random.Philox(key=int(seed.master_seed))
    if i0:
        # advance() counts 128-bit counter blocks of 4 output words; w4 % 4 == 0
        bg.advance(i0 * w4 // 4)
    u = np.random.Generator(bg).random(count * w4)
    u = u.reshape(count, w4)[:, :w]
    z = ndtri(np.maximum(u, _U_FLOOR, out=u))
    return z.reshape(count, steps, m)


def em_step(x, t, u, theta, dw, dyn: ControlAffineDynamics, dt: float):
    """One Euler-Maruyama step x + f dt + g u dt + h (theta dt + dw).

    x may be a single state (n,) or a batch (..., n); u and theta may be
    None, meaning that input is absent.  Raises IntegrationDivergedError
    if the result is not finite.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    out = x + dt * np.asarray(dyn.drift(t, x), dtype=float)
    if u is not None:
        out = out + dt * apply_gain(dyn.control_gain(t, x), u)
    dv = np.asarray(dw, dtype=float)
    if theta is not None:
        dv = dv + dt * np.asarray(theta, dtype=float)
    out = out + apply_gain(dyn.noise_gain(t, x), dv)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))
        idx = int(bad[0][0]) if out.ndim > 1 else None
        raise IntegrationDivergedError(
            f"non-finite state after Euler-Maruyama step at t={t}", trajectory_index=idx
        )
    return out


def resolve_workers(workers=None) -> int:
    """Worker count: explicit argument, else STEALTHPATH_THREADS, else 1."""
    if workers is not None:
        n = int(workers)
    else:
        env = os.environ.get("STEALTHPATH_THREADS", "")
        n = int(env) if env.strip() else 1
    if n < 1:
        raise ValueError("worker count must be >= 1")
    return n


def _chunk_plan(N: int, steps: int, m: int) -> list:
    """Fixed chunk boundaries, independent of worker count."""
    per = max(1, _CHUNK_WORDS // max(steps * m, 1))
    edges = list(range(0, N, per)) + [N]
    return list(zip(edges[:-1], edges[1:]))


def rollout_batch(
    dyn: ControlAffineDynamics,
    cost: Optional[CostModel],
    grid: TimeGrid,
    x0,
    control_policy: Optional[Callable],
    bias_policy: Optional[Callable],
    N: int,
    seed: SeedSpec,
    record: str = "costs",
    workers=None,
) -> TrajectoryEnsemble:
    """Simulate N independent paths from x0 over the grid.

    control_policy / bias_policy are (t, x)->vector callables or None for
    identically zero; the measure tag is derived from which are None.
    Path costs are the left-endpoint Riemann sum sum_k c(t_k, x_k, u_k) dt.
    record='full' keeps per-step states, noise increments, and controls;
    record='costs' keeps only what the estimators need.
    """
    if N < 1:
        raise ValueError("N must be a positive integer")
    if record not in ("costs", "full"):
        raise ValueError("record must be 'costs' or 'full'")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (dyn.state_dim,):
        raise ValueError(f"x0 must have shape ({dyn.state_dim},)")
    K, m, n, l = grid.steps, dyn.noise_dim, dyn.state_dim, dyn.control_dim
    sqrt_dt = math.sqrt(grid.dt)

    if bias_policy is not None:
        tag = MEASURE_P
    elif control_policy is not None:
        tag = MEASURE_Q
    else:
        tag = MEASURE_Z

    path_costs = np.empty(N)
    first_dw = np.empty((N, m))
    terminal = np.empty((N, n))
    full = record == "full"
    states = np.empty((N, K + 1, n)) if full else None
    noise = np.empty((N, K, m)) if full else None
    controls = np.empty((N, K, l)) if full else None

    def run_chunk(bounds):
        i0, i1 = bounds
        C = i1 - i0
        dw = normal_increments(seed, i0, i1, K, m)
        dw *= sqrt_dt
        first_dw[i0:i1] = dw[:, 0, :]
        if full:
            noise[i0:i1] = dw
        X = np.broadcast_to(x0, (C, n)).copy()
        S = np.zeros(C)
        if full:
            states[i0:i1, 0] = X
        for k in range(K):
            t = grid.t0 + k * grid.dt
            u = None if control_policy is None else np.asarray(control_policy(t, X), dtype=float)
            th = None if bias_policy is None else np.asarray(bias_policy(t, X), dtype=float)
            if cost is not None:
                S += cost.running(t, X, u) * grid.dt
            if full:
                controls[i0:i1, k] = 0.0 if u is None else u
            try:
                X = em_step(X, t, u, th, dw[:, k, :], dyn, grid.dt)
            except IntegrationDivergedError as err:
                ti = err.trajectory_index
                raise IntegrationDivergedError(
                    str(err),
                    trajectory_index=None if ti is None else i0 + ti,
                    step_index=k,
                ) from None
            if full:
                states[i0:i1, k + 1] = X
        path_costs[i0:i1] = S
        terminal[i0:i1] = X

    chunks = _chunk_plan(N, K, m)
    n_workers = resolve_workers(workers)
    if n_workers == 1 or len(chunks) == 1:
        for b in chunks:
            run_chunk(b)
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(run_chunk, b) for b in chunks]
            for f in futures:  # surface errors in chunk order
                f.result()

    return TrajectoryEnsemble(
        count=N,
        times=_freeze(grid.times()),
        path_costs=_freeze(path_costs),
        first_increments=_freeze(first_dw),
        terminal_states=_freeze(terminal),
        measure_tag=tag,
        states=None if states is None else _freeze(states),
        noise_increments=None if noise is None else _freeze(noise),
        controls=None if controls is None else _freeze(controls),
    )


def path_cost(states, controls, cost: CostModel, grid: TimeGrid):
    """Left Riemann sum of the running cost along recorded paths.

    states: (..., K+1, n); controls: (..., K, l) or None.  Accumulation
    order matches rollout_batch step order, so re-accumulating a recorded
    path reproduces its stored cost bit for bit.
    """
    states = np.asarray(states, dtype=float)
    K = grid.steps
    if states.shape[-2] != K + 1:
        raise ValueError(f"states must have K+1={K + 1} rows, got {states.shape[-2]}")
    if controls is not None:
        controls = np.asarray(controls, dtype=float)
        if controls.shape[-2] != K:
            raise ValueError(f"controls must have K={K} rows, got {controls.shape[-2]}")
        if controls.shape[:-2] != states.shape[:-2]:
            raise ValueError("states and controls have mismatched batch shapes")
    S = np.zeros(states.shape[:-2])
    for k in range(K):
        t = grid.t0 + k * grid.dt
        u = None if controls is None else controls[..., k, :]
        S = S + cost.running(t, states[..., k, :], u) * grid.dt
    return S if S.ndim else float(S)


_MAGIC = b"SPE1"
_TAG_CODES = {MEASURE_P: 0.0, MEASURE_Q: 1.0, MEASURE_Z: 2.0}


def dump_ensemble(ens: TrajectoryEnsemble, path) -> None:
    """Columnar binary dump, little-endian float64 throughout.

    Layout: magic 'SPE1'; header n, m, l, N, K, dt, measure-code as f64;
    then times, states, noise_increments, controls, path_costs in C order.
    Requires a full-record ensemble.
    """
    if not ens.is_full:
        raise ValueError("dump requires a full-record ensemble (record='full')")
    N, K = ens.count, ens.times.shape[0] - 1
    n = ens.state_dim
    m = ens.noise_dim
    l = ens.controls.shape[-1]
    header = np.array([n, m, l, N, K, ens.dt, _TAG_CODES[ens.measure_tag]], dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(header.tobytes())
        for arr in (ens.times, ens.states, ens.noise_increments, ens.controls, ens.path_costs):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ensemble(path) -> TrajectoryEnsemble:
    """Inverse of dump_ensemble."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        header = np.frombuffer(fh.read(7 * 8), dtype="<f8")
        n, m, l, N, K = (int(v) for v in header[:5])
        dt = float(header[5])
        code = float(header[6])
        tags = {v: k for k, v in _TAG_CODES.items()}
        if code not in tags:
            raise ValueError(f"unknown measure code {code}")
        def read(shape):
            size = int(np.prod(shape))
            buf = fh.read(size * 8)
            if len(buf) != size * 8:
                raise ValueError("truncated ensemble dump")
            return np.frombuffer(buf, dtype="<f8").reshape(shape)
        times = read((K + 1,))
        states = read((N, K + 1, n))
        noise = read((N, K, m))
        controls = read((N, K, l))
        costs = read((N,))
    del dt  # recoverable from times; header value kept for format stability
    return TrajectoryEnsemble(
        count=N,
        times=_freeze(times),
        path_costs=_freeze(costs),
        first_increments=_freeze(noise[:, 0, :].copy()),
        terminal_states=_freeze(states[:, -1, :].copy()),
        measure_tag=tags[code],
        states=_freeze(states),
        noise_increments=_freeze(noise),
        controls=_freeze(controls),
    )
