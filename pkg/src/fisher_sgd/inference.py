"""Asymptotic confidence regions from an estimate and its whole-sample Fisher information.

The joint region on ``theta`` (chart space) is the Wald ellipsoid

    (theta - theta_hat)^T F (theta - theta_hat) <= chi2_{d; level}

and each original-space scalar ``eta_j = reparam(theta)_j`` gets a delta-method
interval ``eta_hat_j +- z * sqrt(g^T F^{-1} g)`` with ``g`` the ``j``-th row of
the chart Jacobian at ``theta_hat``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .numerics import chisq_quantile, cholesky, normal_quantile, spd_inverse, symmetrize

__all__ = [
    "DegenerateGradientWarning",
    "Interval",
    "ConfidenceReport",
    "ellipsoid_statistic",
    "ellipsoid_contains",
    "delta_ci",
    "confidence_report",
]


class DegenerateGradientWarning(RuntimeWarning):
    """The chart gradient of a parameter vanishes, so its interval has zero width."""


@dataclass(frozen=True)
class Interval:
    name: str
    estimate: float
    lower: float
    upper: float
    se: float


@dataclass
class ConfidenceReport:
    """Joint ellipsoid summary plus one delta-method interval per original parameter.

    ``ellipsoid_statistic`` is only filled when a reference value is given.
    """

    level: float
    dim: int
    ellipsoid_threshold: float
    ellipsoid_statistic: float | None = None
    intervals: list[Interval] = field(default_factory=list)

    def covers(self, eta_ref: ArrayLike) -> list[bool]:
        """Per-interval containment of a reference vector in original space."""
        eta_ref = np.asarray(eta_ref, dtype=float).reshape(-1)
        return [iv.lower <= e <= iv.upper for iv, e in zip(self.intervals, eta_ref)]

    @property
    def ellipsoid_covers(self) -> bool | None:
        if self.ellipsoid_statistic is None:
            return None
        return self.ellipsoid_statistic <= self.ellipsoid_threshold

    def to_dict(self) -> dict:
        out = asdict(self)
        out["intervals"] = [asdict(iv) for iv in self.intervals]
        return out


def ellipsoid_statistic(theta_ref: ArrayLike, theta_hat: ArrayLike, fim_whole: ArrayLike) -> float:
    """Quadratic form ``(theta_ref - theta_hat)^T F (theta_ref - theta_hat)``.

    ``F`` must be positive definite; the form is evaluated as ``||L^T r||^2``
    through its Cholesky factor, which raises ``NotPositiveDefinite`` otherwise.
    """
    r = np.asarray(theta_ref, dtype=float).reshape(-1) - np.asarray(theta_hat, dtype=float).reshape(-1)
    low = cholesky(symmetrize(fim_whole))
    if low.shape[0] != r.size:
        raise ValueError("dimension mismatch between theta and fim_whole")
    w = low.T @ r
    return float(w @ w)


def ellipsoid_contains(theta_ref, theta_hat, fim_whole, level: float = 0.95) -> bool:
    stat = ellipsoid_statistic(theta_ref, theta_hat, fim_whole)
    return stat <= chisq_quantile(level, len(np.atleast_1d(theta_hat)))


def _covariance(fim_whole) -> NDArray[np.float64]:
    return spd_inverse(symmetrize(fim_whole))


def delta_ci(index: int, theta_hat, fim_whole, reparam, level: float = 0.95) -> tuple[float, float, float]:
    """Delta-method interval for original-space coordinate ``index``.

    Returns ``(lower, upper, se)``. A vanishing chart gradient yields a
    zero-width interval and a :class:`DegenerateGradientWarning`.
    """
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    cov = _covariance(fim_whole)
    eta = reparam.forward(theta_hat)
    g = reparam.jacobian(theta_hat)[index]
    return _interval(float(eta[index]), g, cov, level, reparam.names[index])[1:4]


def _interval(estimate, g, cov, level, name):
    if not np.any(g):
        warnings.warn(f"zero chart gradient for {name}; interval has zero width", DegenerateGradientWarning)
    se = math.sqrt(max(float(g @ cov @ g), 0.0))
    half = normal_quantile(0.5 + level / 2.0) * se
    return estimate, estimate - half, estimate + half, se


def confidence_report(
    theta_hat: ArrayLike,
    fim_whole: ArrayLike,
    reparam,
    level: float = 0.95,
    theta_ref: ArrayLike | None = None,
) -> ConfidenceReport:
    """Intervals for every original-space scalar, plus the ellipsoid statistic of ``theta_ref``."""
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    d = theta_hat.size
    cov = _covariance(fim_whole)
    eta = reparam.forward(theta_hat)
    jac = reparam.jacobian(theta_hat)
    intervals = []
    for j, name in enumerate(reparam.names):
        est, lo, hi, se = _interval(float(eta[j]), jac[j], cov, level, name)
        intervals.append(Interval(name, est, lo, hi, se))
    stat = None if theta_ref is None else ellipsoid_statistic(theta_ref, theta_hat, fim_whole)
    return ConfidenceReport(
        level=level,
        dim=d,
        ellipsoid_threshold=chisq_quantile(level, d),
        ellipsoid_statistic=stat,
        intervals=intervals,
    )
