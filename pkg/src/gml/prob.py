"""Probability math for listener-score distributions.

The model emits a mean and a log scale for either a gaussian or a logistic
density over MUSHRA scores. This module owns the negative log-likelihood
losses and their analytic gradients, score sampling, the logistic
scale-to-standard-deviation conversion, and Student-t confidence intervals
(with a self-contained t quantile so there is no statistics dependency).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientListenersError,
    InvalidDofError,
    NonpositiveScaleError,
    OutOfRangeScoreError,
    TooFewScoresError,
)

FAMILIES = ("gaussian", "logistic")

# Clamp on the log scale inside the losses: keeps the NLL finite when a
# residual is exactly zero, and spans any plausible spread on a 0..100 scale
# (roughly 0.018 .. 110 points).
LOG_SCALE_MIN = -4.0
LOG_SCALE_MAX = 4.7

_HALF_LOG_TWO_PI = 0.5 * math.log(2.0 * math.pi)
_SQRT3 = math.sqrt(3.0)


def clamp_log_scale(log_scale):
    """Clip a log scale into the supported range; rejects NaN."""
    arr = np.asarray(log_scale, dtype=np.float64)
    if np.isnan(arr).any():
        raise ValueError("log scale is NaN")
    return np.clip(arr, LOG_SCALE_MIN, LOG_SCALE_MAX)


@dataclass(frozen=True)
class ScoreDistribution:
    """Model output: a (mu, log_scale) pair tagged with its family.

    log_scale is ln(sigma) for the gaussian family and ln(a) for the
    logistic one. Out-of-range values (including -inf/+inf) are clamped
    into the supported range at construction.
    """

    family: str
    mu: float
    log_scale: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not math.isfinite(self.mu):
            raise ValueError("mu must be finite")
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "log_scale", float(clamp_log_scale(self.log_scale)))

    @property
    def scale(self) -> float:
        return math.exp(self.log_scale)

    @property
    def std(self) -> float:
        """Standard deviation in score units."""
        if self.family == "gaussian":
            return self.scale
        return logistic_std(self.scale)


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float
    dof: int

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError("interval bounds out of order")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must be in (0, 1)")
        if self.dof < 1:
            raise ValueError("dof must be >= 1")

    @property
    def half_width(self) -> float:
        return 0.5 * (self.hi - self.lo)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


def nll_gaussian(score, mu, log_sigma):
    """log(sqrt(2 pi) sigma) + (s - mu)^2 / (2 sigma^2), sigma = e^log_sigma."""
    ls = clamp_log_scale(log_sigma)
    z = (np.asarray(score, dtype=np.float64) - mu) * np.exp(-ls)
    return _HALF_LOG_TWO_PI + ls + 0.5 * z * z


def nll_logistic(score, mu, log_a):
    """Negative log of the logistic density (1/4a) sech^2((s-mu)/2a).

    Evaluated as log(a) + |z| + 2 log1p(e^-|z|) with z = (s-mu)/a, which is
    exact and cannot overflow; the direct sech form dies around |z| ~ 1400.
    """
    la = clamp_log_scale(log_a)
    z = (np.asarray(score, dtype=np.float64) - mu) * np.exp(-la)
    az = np.abs(z)
    return la + az + 2.0 * np.log1p(np.exp(-az))


def smooth_l1(score, mu):
    """0.5 (s-mu)^2 below unit residual, |s-mu| - 0.5 above."""
    d = np.abs(np.asarray(score, dtype=np.float64) - mu)
    return np.where(d < 1.0, 0.5 * d * d, d - 0.5)


def nll_gaussian_grad(score, mu, log_sigma):
    """(dL/dmu, dL/dlog_sigma); zero scale-gradient where the clamp binds."""
    ls = clamp_log_scale(log_sigma)
    raw = np.asarray(log_sigma, dtype=np.float64)
    inside = (raw >= LOG_SCALE_MIN) & (raw <= LOG_SCALE_MAX)
    inv = np.exp(-ls)
    z = (np.asarray(score, dtype=np.float64) - mu) * inv
    dmu = -z * inv
    dls = (1.0 - z * z) * inside
    return dmu, dls


def nll_logistic_grad(score, mu, log_a):
    """(dL/dmu, dL/dlog_a) for the stable logistic NLL."""
    la = clamp_log_scale(log_a)
    raw = np.asarray(log_a, dtype=np.float64)
    inside = (raw >= LOG_SCALE_MIN) & (raw <= LOG_SCALE_MAX)
    inv = np.exp(-la)
    z = (np.asarray(score, dtype=np.float64) - mu) * inv
    t = np.tanh(0.5 * z)
    dmu = -t * inv
    dla = (1.0 - z * t) * inside
    return dmu, dla


def logistic_std(a) -> float:
    """Standard deviation pi a / sqrt(3) of a logistic with scale a."""
    if not a > 0:
        raise NonpositiveScaleError(f"logistic scale must be positive, got {a}")
    return math.pi * a / _SQRT3


def sample_scores(dist: ScoreDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws from the distribution; deterministic for a given rng.

    Logistic draws use the inverse CDF s = mu + a ln(u / (1-u)); gaussian
    draws transform standard normals. Output is NOT clipped to [0, 100];
    clipping is a formatting concern for simulated panels only.
    """
    if n < 1:
        raise ValueError("need at least one draw")
    if dist.family == "gaussian":
        return dist.mu + dist.scale * rng.standard_normal(n)
    u = rng.random(n)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return dist.mu + dist.scale * np.log(u / (1.0 - u))


# ---------------------------------------------------------------------------
# Student-t machinery (regularized incomplete beta + bracketed root finding)
# ---------------------------------------------------------------------------

_BETACF_MAX_ITER = 500
_BETACF_EPS = 1e-15
_BETACF_FPMIN = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_FPMIN:
        d = _BETACF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    return h


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def t_cdf(t: float, dof: int) -> float:
    """CDF of Student's t with `dof` degrees of freedom."""
    if dof < 1:
        raise InvalidDofError(f"dof must be >= 1, got {dof}")
    if t == 0.0:
        return 0.5
    x = dof / (dof + t * t)
    tail = 0.5 * _betainc(0.5 * dof, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def t_quantile(p: float, dof: int) -> float:
    """Inverse CDF of Student's t, bisected on the incomplete-beta CDF."""
    if dof < 1 or int(dof) != dof:
        raise InvalidDofError(f"dof must be a positive integer, got {dof}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_quantile(1.0 - p, dof)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, dof) < p:
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("t quantile bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def confidence_interval(std: float, n_listeners: int, mu: float, level: float = 0.95) -> ConfidenceInterval:
    """Two-sided t interval: half-width t((1+level)/2, N-1) * std / sqrt(N)."""
    if n_listeners < 2:
        raise InsufficientListenersError(
            f"need at least 2 listeners, got {n_listeners}"
        )
    if std < 0:
        raise ValueError("std must be nonnegative")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    dof = n_listeners - 1
    half = t_quantile(0.5 * (1.0 + level), dof) * std / math.sqrt(n_listeners)
    return ConfidenceInterval(mu - half, mu + half, level, dof)


def mushra_stats(scores) -> tuple[float, ConfidenceInterval]:
    """Sample mean and t-based 95% CI of per-listener MUSHRA scores."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise TooFewScoresError(f"need >= 2 scores, got {arr.size}")
    if np.any((arr < 0.0) | (arr > 100.0)) or not np.all(np.isfinite(arr)):
        raise OutOfRangeScoreError("scores must lie in [0, 100]")
    mean = float(np.mean(arr))
    std = float(np.std(arr, ddof=1))
    return mean, confidence_interval(std, arr.size, mean, 0.95)
