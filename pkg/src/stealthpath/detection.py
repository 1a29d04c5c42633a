"""Detectability of an injected bias: KL bounds and a chi-square detector.

Two complementary views of stealthiness.  The KL route lower-bounds the
sum of detection error rates of ANY detector from the divergence the
attacker spent (Pinsker and Bretagnolle-Huber).  The chi-square route is
the exact Neyman-Pearson test for the variance-scaling hypothesis pair

    H0: y_k ~ N(0, h)        (nominal increments)
    H1: y_k ~ N(0, sigma^2 h)

over K = 1/h unit-horizon samples, whose type-I/II errors have closed
forms in the regularized incomplete gamma function.  The gamma pair is
computed locally (series below x < a+1, Lentz continued fraction above)
so that P + Q = 1 holds exactly by construction; library special
functions appear only in tests as oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import SeedSpec

__all__ = [
    "DetectionPoint",
    "DetectorSpec",
    "EmpiricalTestResult",
    "StealthReport",
    "pinsker_bound",
    "bh_bound",
    "regularized_gamma",
    "np_alpha",
    "np_beta",
    "tradeoff_curve",
    "empirical_np_test",
    "simulate_error_rates",
    "kl_bound_report",
]

_GAMMA_RTOL = 1e-14
_GAMMA_MAX_ITER = 10_000
_FPMIN = 1e-300


@dataclass(frozen=True)
class DetectionPoint:
    """One threshold on the trade-off curve."""

    tau: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class DetectorSpec:
    """K unit-horizon samples at step h = 1/K, H1 diffusion sigma."""

    K: int
    sigma: float
    h_step: float

    def __post_init__(self):
        if not (isinstance(self.K, (int, np.integer)) and self.K >= 1):
            raise ValueError("K must be a positive integer")
        if not self.h_step > 0.0:
            raise ValueError("h_step must be positive")
        if abs(self.K * self.h_step - 1.0) > 1e-12:
            raise ValueError(f"K * h_step = {self.K * self.h_step!r} violates the unit horizon")
        if not self.sigma > 0.0:
            raise ValueError("sigma must be positive")
        if self.sigma == 1.0:
            raise ValueError("sigma = 1 makes the hypotheses identical")

    @classmethod
    def from_count(cls, K: int, sigma: float) -> "DetectorSpec":
        return cls(K=int(K), sigma=float(sigma), h_step=1.0 / int(K))


def pinsker_bound(kl: float) -> float:
    """alpha + beta >= 1 - sqrt(kl / 2); may be negative, caller clips."""
    if kl < 0.0:
        raise ValueError("kl must be nonnegative")
    return 1.0 - math.sqrt(kl / 2.0)


def bh_bound(kl: float) -> float:
    """alpha + beta >= (1/2) exp(-kl); always positive."""
    if kl < 0.0:
        raise ValueError("kl must be nonnegative")
    return 0.5 * math.exp(-kl)


def _gamma_series_lower(x: float, a: float) -> float:
    # P(x, a) by the ascending series; valid and fast for x < a + 1
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_RTOL:
            return total * math.exp(a * math.log(x) - x - math.lgamma(a))
    raise RuntimeError(f"incomplete-gamma series failed to converge at x={x}, a={a}")


def _gamma_cf_upper(x: float, a: float) -> float:
    # Q(x, a) by the Lentz continued fraction; valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_RTOL:
            return h * math.exp(a * math.log(x) - x - math.lgamma(a))
    raise RuntimeError(f"incomplete-gamma fraction failed to converge at x={x}, a={a}")


def regularized_gamma(x: float, a: float) -> tuple:
    """(P, Q) with P the regularized lower incomplete gamma at (x, a).

    Only the numerically favored member is computed; the other is its
    one's complement, so P + Q == 1 exactly in floating point.
    """
    if not a > 0.0:
        raise ValueError("a must be positive")
    if x < 0.0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 0.0, 1.0
    if x < a + 1.0:
        P = _gamma_series_lower(x, a)
        return P, 1.0 - P
    Q = _gamma_cf_upper(x, a)
    return 1.0 - Q, Q


def _log_threshold(spec: DetectorSpec, tau: float) -> float:
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    return spec.K * math.log(spec.sigma) + math.log(tau)


def np_alpha(spec: DetectorSpec, tau: float) -> float:
    """Type-I error of the likelihood-ratio test at threshold tau.

    sigma > 1: alpha = Q(sigma^2 A / (sigma^2 - 1), K/2) with
    A = K log sigma + log tau; a negative gamma argument means the test
    always declares H1, so alpha = 1.  sigma < 1 flips the acceptance
    direction and the roles of the gamma tails.
    """
    if spec.sigma == 1.0:
        raise ValueError("sigma = 1 makes the hypotheses identical")
    A = _log_threshold(spec, tau)
    s2 = spec.sigma ** 2
    arg = s2 * A / (s2 - 1.0)
    half_K = 0.5 * spec.K
    if spec.sigma > 1.0:
        if A < 0.0:
            return 1.0
        return regularized_gamma(arg, half_K)[1]
    if A > 0.0:
        return 0.0
    return regularized_gamma(arg, half_K)[0]


def np_beta(spec: DetectorSpec, tau: float) -> float:
    """Type-II error (H1 true, H0 kept): the complementary gamma tail."""
    if spec.sigma == 1.0:
        raise ValueError("sigma = 1 makes the hypotheses identical")
    A = _log_threshold(spec, tau)
    s2 = spec.sigma ** 2
    arg = A / (s2 - 1.0)
    half_K = 0.5 * spec.K
    if spec.sigma > 1.0:
        if A < 0.0:
            return 0.0
        return regularized_gamma(arg, half_K)[0]
    if A > 0.0:
        return 1.0
    return regularized_gamma(arg, half_K)[1]


def tradeoff_curve(spec: DetectorSpec, tau_grid) -> list:
    """DetectionPoints over the threshold grid; alpha falls, beta rises."""
    taus = np.asarray(tau_grid, dtype=float)
    if taus.ndim != 1 or taus.size == 0:
        raise ValueError("tau_grid must be a nonempty 1-D sequence")
    if np.any(taus <= 0.0):
        raise ValueError("all thresholds must be positive")
    return [
        DetectionPoint(tau=float(t), alpha=np_alpha(spec, float(t)), beta=np_beta(spec, float(t)))
        for t in taus
    ]


@dataclass(frozen=True)
class EmpiricalTestResult:
    """Per-path decisions plus the two rates the sample can estimate.

    alpha is the H1-declaration fraction (the empirical type-I error when
    the paths were drawn under H0); beta its complement (the empirical
    type-II error when they were drawn under H1).  Which one is
    meaningful depends on which hypothesis generated the paths.
    """

    decisions: np.ndarray
    alpha: float
    beta: float


def empirical_np_test(paths, spec: DetectorSpec, tau: float) -> EmpiricalTestResult:
    """Apply the chi-square test sum (y_k / sqrt(h))^2 to each path."""
    y = np.atleast_2d(np.asarray(paths, dtype=float))
    if y.shape[1] != spec.K:
        raise ValueError(f"paths have {y.shape[1]} increments, spec.K = {spec.K}")
    stat = np.sum(y * y, axis=1) / spec.h_step
    A = _log_threshold(spec, tau)
    s2 = spec.sigma ** 2
    bound = 2.0 * s2 * A / (s2 - 1.0)
    if spec.sigma > 1.0:
        accept_h1 = stat >= bound
    else:
        accept_h1 = stat <= bound
    frac = float(np.mean(accept_h1))
    return EmpiricalTestResult(decisions=accept_h1, alpha=frac, beta=1.0 - frac)


def simulate_error_rates(
    spec: DetectorSpec, tau: float, trials: int, seed: SeedSpec, chunk: int = 50_000
) -> tuple:
    """(empirical alpha, empirical beta) at `trials` paths per hypothesis.

    One standard-normal sample per increment serves both hypotheses: the
    H0 statistic is the row sum of squares and the H1 statistic is
    sigma^2 times it, which is exact because H1 only rescales the
    increments.  Chunked so K * chunk stays in memory.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    A = _log_threshold(spec, tau)
    s2 = spec.sigma ** 2
    bound = 2.0 * s2 * A / (s2 - 1.0)
    rng = np.random.Generator(np.random.Philox(seed.master_seed))
    reject_h0 = 0
    keep_h0_under_h1 = 0
    done = 0
    while done < trials:
        c = min(chunk, trials - done)
        z = rng.standard_normal((c, spec.K))
        stat = np.einsum("ij,ij->i", z, z)
        if spec.sigma > 1.0:
            reject_h0 += int(np.count_nonzero(stat >= bound))
            keep_h0_under_h1 += int(np.count_nonzero(s2 * stat < bound))
        else:
            reject_h0 += int(np.count_nonzero(stat <= bound))
            keep_h0_under_h1 += int(np.count_nonzero(s2 * stat > bound))
        done += c
    return reject_h0 / trials, keep_h0_under_h1 / trials


@dataclass(frozen=True)
class StealthReport:
    """KL spent by an attack and the induced floor on alpha + beta."""

    kl: float
    pinsker: float
    bh: float

    @property
    def error_floor(self) -> float:
        """Best (largest) provable lower bound on alpha + beta."""
        return max(self.pinsker, self.bh)

    def lines(self) -> str:
        return (
            f"kl={self.kl!r}\n"
            f"pinsker_bound={self.pinsker!r}\n"
            f"bh_bound={self.bh!r}\n"
            f"error_floor={self.error_floor!r}\n"
        )


def kl_bound_report(attack_record) -> StealthReport:
    """Stealthiness floor from a recorded attack (or a bare KL value)."""
    kl = float(getattr(attack_record, "kl_cost", attack_record))
    return StealthReport(kl=kl, pinsker=pinsker_bound(kl), bh=bh_bound(kl))
