"""Finite-range sampling primitives.

The ASA generating density on [-1, 1] with temperature ``q``, the two-sided
asymmetric law built from it (binary side choice, then an ASA magnitude on the
chosen side), and a truncated Weibull for task durations.

All randomness enters as uniform variates supplied by the caller, so every
function here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a distribution function."""


def _check_q(q) -> None:
    if np.any(np.asarray(q) <= 0) or not np.all(np.isfinite(q)):
        raise DomainError(f"temperature q must be positive and finite, got {q!r}")


def _scalar_or_array(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def asa_density(y, q):
    """g_q(y) = 1 / (2 (|y| + q) ln(1 + 1/q)) on [-1, 1]."""
    y = np.asarray(y, dtype=float)
    _check_q(q)
    if np.any(np.abs(y) > 1.0):
        raise DomainError("asa_density is supported on [-1, 1]")
    q = np.asarray(q, dtype=float)
    return _scalar_or_array(1.0 / (2.0 * (np.abs(y) + q) * np.log1p(1.0 / q)))


def asa_cdf(y, q):
    y = np.asarray(y, dtype=float)
    _check_q(q)
    if np.any(np.abs(y) > 1.0):
        raise DomainError("asa_cdf is supported on [-1, 1]")
    q = np.asarray(q, dtype=float)
    half = np.log1p(np.abs(y) / q) / (2.0 * np.log1p(1.0 / q))
    return _scalar_or_array(0.5 + np.sign(y) * half)


def asa_inverse(u, q):
    """Map a uniform ``u`` in [0, 1] to an ASA variate in [-1, 1].

    ``y = sgn(u - 1/2) * q * ((1 + 1/q)**|2u - 1| - 1)``, evaluated with
    ``expm1``/``log1p`` so tiny and huge temperatures stay accurate.
    """
    u = np.asarray(u, dtype=float)
    _check_q(q)
    if np.any((u < 0.0) | (u > 1.0)) or np.any(np.isnan(u)):
        raise DomainError("asa_inverse needs u in [0, 1]")
    q = np.asarray(q, dtype=float)
    a = np.abs(2.0 * u - 1.0)
    y = np.sign(u - 0.5) * q * np.expm1(a * np.log1p(1.0 / q))
    return _scalar_or_array(np.clip(y, -1.0, 1.0))


def asa_abs_moments(q: float) -> tuple[float, float]:
    """E|y| and E[y^2] under the ASA density with temperature q."""
    _check_q(q)
    log_term = np.log1p(1.0 / q)
    m1 = (1.0 - q * log_term) / log_term
    m2 = (0.5 - q + q * q * log_term) / log_term
    return float(m1), float(m2)


@dataclass(frozen=True)
class TwoSidedAsaSpec:
    """Asymmetric finite-range law around ``mean``.

    A draw picks the low side with probability ``p_low``, then places the value
    at ``mean - |y| (mean - lower)`` (or ``mean + |y| (upper - mean)``) with
    ``y`` an ASA variate at that side's temperature.
    """

    mean: float
    lower: float
    upper: float
    q_low: float = 0.1
    q_high: float = 0.1
    p_low: float = 0.5

    def problems(self) -> list[str]:
        out = []
        vals = (self.mean, self.lower, self.upper, self.q_low, self.q_high, self.p_low)
        if not all(np.isfinite(v) for v in vals):
            return ["non-finite field"]
        if not self.lower <= self.mean <= self.upper:
            out.append(f"need lower <= mean <= upper, got {self.lower}, {self.mean}, {self.upper}")
        if not 0.0 <= self.p_low <= 1.0:
            out.append(f"p_low must be in [0, 1], got {self.p_low}")
        if self.q_low <= 0 or self.q_high <= 0:
            out.append("temperatures must be positive")
        degenerate = self.lower == self.mean == self.upper
        if not degenerate and not out:
            if self.lower == self.mean and self.p_low != 0.0:
                out.append("lower == mean requires p_low = 0")
            if self.upper == self.mean and self.p_low != 1.0:
                out.append("upper == mean requires p_low = 1")
        return out

    def validate(self) -> TwoSidedAsaSpec:
        issues = self.problems()
        if issues:
            raise DomainError("invalid TwoSidedAsaSpec: " + "; ".join(issues))
        return self

    @property
    def is_degenerate(self) -> bool:
        return self.lower == self.mean == self.upper

    def scaled(self, factor: float) -> TwoSidedAsaSpec:
        """Same shape, every location multiplied by ``factor``."""
        return replace(self, mean=self.mean * factor, lower=self.lower * factor, upper=self.upper * factor)

    def widened(self, factor: float) -> TwoSidedAsaSpec:
        """Spread about the mean multiplied by ``factor``."""
        return replace(
            self,
            lower=self.mean - factor * (self.mean - self.lower),
            upper=self.mean + factor * (self.upper - self.mean),
        )

    def moments(self) -> tuple[float, float]:
        """Analytic mean and variance."""
        lo_m1, lo_m2 = asa_abs_moments(self.q_low)
        hi_m1, hi_m2 = asa_abs_moments(self.q_high)
        a = self.mean - self.lower
        b = self.upper - self.mean
        p = self.p_low
        ex = p * (self.mean - lo_m1 * a) + (1 - p) * (self.mean + hi_m1 * b)
        ex2 = p * (self.mean**2 - 2 * self.mean * a * lo_m1 + a * a * lo_m2) + (1 - p) * (
            self.mean**2 + 2 * self.mean * b * hi_m1 + b * b * hi_m2
        )
        return ex, max(ex2 - ex * ex, 0.0)


def two_sided_arrays(mean, lower, upper, q_low, q_high, p_low, u_side, u_mag):
    """Broadcasting core of :func:`two_sided_sample`; no spec validation."""
    u_side = np.asarray(u_side, dtype=float)
    u_mag = np.asarray(u_mag, dtype=float)
    low = u_side < p_low
    q = np.where(low, q_low, q_high)
    mag = np.abs(asa_inverse(u_mag, q))
    value = np.where(low, mean - mag * (mean - lower), mean + mag * (upper - mean))
    return np.clip(value, lower, upper)


def two_sided_sample(spec: TwoSidedAsaSpec, u_side, u_mag):
    spec.validate()
    u_side = np.asarray(u_side, dtype=float)
    if np.any((u_side < 0) | (u_side > 1)):
        raise DomainError("u_side must be in [0, 1]")
    value = two_sided_arrays(
        spec.mean, spec.lower, spec.upper, spec.q_low, spec.q_high, spec.p_low, u_side, u_mag
    )
    return _scalar_or_array(value)


def weibull_cdf(x, shape: float, scale: float):
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return -np.expm1(-((x / scale) ** shape))


def truncated_weibull_inverse(u, shape: float, scale: float, lo: float, hi: float):
    """Inverse CDF of Weibull(shape, scale) conditioned on [lo, hi]."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise DomainError("u must be in [0, 1]")
    if hi == lo:
        return _scalar_or_array(np.full_like(u, lo))
    # work with survival values so the upper tail keeps its precision
    s_lo = np.exp(-((lo / scale) ** shape))
    s_hi = np.exp(-((hi / scale) ** shape))
    surv = s_lo - u * (s_lo - s_hi)
    with np.errstate(divide="ignore"):
        x = scale * (-np.log(surv)) ** (1.0 / shape)
    return _scalar_or_array(np.clip(x, lo, hi))


@dataclass(frozen=True)
class DurationSpec:
    """Duration law of one task: ``two_sided_asa`` or ``truncated_weibull``."""

    kind: Literal["two_sided_asa", "truncated_weibull"]
    two_sided: TwoSidedAsaSpec | None = None
    shape: float | None = None
    scale: float | None = None
    lo: float | None = None
    hi: float | None = None

    @classmethod
    def asa(cls, mean, lower, upper, q_low=0.1, q_high=0.1, p_low=0.5) -> DurationSpec:
        return cls("two_sided_asa", two_sided=TwoSidedAsaSpec(mean, lower, upper, q_low, q_high, p_low))

    @classmethod
    def weibull(cls, shape, scale, lo, hi) -> DurationSpec:
        return cls("truncated_weibull", shape=shape, scale=scale, lo=lo, hi=hi)

    def problems(self) -> list[str]:
        if self.kind == "two_sided_asa":
            if self.two_sided is None:
                return ["two_sided_asa duration needs its parameters"]
            out = self.two_sided.problems()
            if self.two_sided.lower <= 0:
                out.append("duration range must have a positive lower bound")
            return out
        if self.kind == "truncated_weibull":
            vals = (self.shape, self.scale, self.lo, self.hi)
            if any(v is None or not np.isfinite(v) for v in vals):
                return ["truncated_weibull needs finite shape, scale, lo, hi"]
            out = []
            if self.shape <= 0 or self.scale <= 0:
                out.append("weibull shape and scale must be positive")
            if not 0 < self.lo <= self.hi:
                out.append(f"weibull truncation needs 0 < lo <= hi, got [{self.lo}, {self.hi}]")
            return out
        return [f"unknown duration kind {self.kind!r}"]

    def validate(self) -> DurationSpec:
        issues = self.problems()
        if issues:
            raise DomainError("invalid DurationSpec: " + "; ".join(issues))
        return self

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "two_sided_asa":
            return self.two_sided.lower, self.two_sided.upper
        return self.lo, self.hi

    def scaled(self, factor: float) -> DurationSpec:
        if self.kind == "two_sided_asa":
            return replace(self, two_sided=self.two_sided.scaled(factor))
        return replace(self, scale=self.scale * factor, lo=self.lo * factor, hi=self.hi * factor)

    def widened(self, factor: float) -> DurationSpec:
        if self.kind == "two_sided_asa":
            return replace(self, two_sided=self.two_sided.widened(factor))
        raise DomainError("spread scaling applies to two_sided_asa durations only")


def duration_sample(spec: DurationSpec, u_mag, u_side=None):
    """Draw a duration. ``u_side`` is required for two-sided specs, ignored for Weibull."""
    spec.validate()
    if spec.kind == "two_sided_asa":
        if u_side is None:
            raise DomainError("two_sided_asa duration needs a side uniform")
        return two_sided_sample(spec.two_sided, u_side, u_mag)
    return truncated_weibull_inverse(u_mag, spec.shape, spec.scale, spec.lo, spec.hi)
