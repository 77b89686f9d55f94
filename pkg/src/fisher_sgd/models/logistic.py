"""Logistic growth nonlinear mixed-effects model.

    z_i ~ N(beta, Gamma)
    y_ij = z_i1 / (1 + exp(-(x_ij - z_i2) / alpha)) + eps_ij,   eps_ij ~ N(0, sigma2)

Parameters in original space, in order: beta1 > 0, beta2, alpha > 0,
Gamma (2x2 SPD, packed Gamma11, Gamma12, Gamma22), sigma2 > 0.
Observations may be ragged: each unit can have its own number of time points.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import NDArray

from ..model import IndependentModel
from ..numerics import sym_eigen
from ..reparam import Positive, Real, Spd, compose, sigmoid

__all__ = ["LogisticGrowthNlme", "BENCHMARK_DESIGN", "logistic_chart", "logistic_pilot", "PARAMETER_NAMES"]

_LOG_2PI = math.log(2.0 * math.pi)

PARAMETER_NAMES = ["beta1", "beta2", "alpha", "Gamma11", "Gamma12", "Gamma22", "sigma2"]

BENCHMARK_DESIGN = {
    "n_units": 1000,
    "times": np.linspace(100.0, 1500.0, 20),
    "beta": (200.0, 500.0),
    "alpha": 150.0,
    "gamma": ((40.0, 0.0), (0.0, 100.0)),
    "sigma2": 100.0,
}


def logistic_chart(scales=None, beta2_loc: float = 0.0):
    """``compose(positive, real, positive, spd(2), positive)``.

    ``scales`` optionally rescales each block, in the order
    ``(beta1, beta2, alpha, Gamma, sigma2)``; defaults to unit scales.
    ``beta2_loc`` shifts the real block, so that ``beta2 = loc + scale * x``.
    """
    s = [1.0] * 5 if scales is None else [float(v) for v in scales]
    if len(s) != 5:
        raise ValueError("logistic chart takes five block scales")
    if min(s) <= 0:
        raise ValueError("chart scales must be positive")
    return compose(
        Positive(scale=s[0], names=["beta1"]),
        Real(loc=beta2_loc, scale=s[1], names=["beta2"]),
        Positive(scale=s[2], names=["alpha"]),
        Spd(2, scale=s[3], names=["Gamma11", "Gamma12", "Gamma22"]),
        Positive(scale=s[4], names=["sigma2"]),
    )


def _crossing(t, m, level):
    """First time at which the piecewise-linear curve ``m(t)`` reaches ``level``."""
    above = np.flatnonzero(m >= level)
    if above.size == 0:
        return float(t[-1])
    j = int(above[0])
    if j == 0:
        return float(t[0])
    w = (level - m[j - 1]) / (m[j] - m[j - 1])
    return float(t[j - 1] + w * (t[j] - t[j - 1]))


def logistic_pilot(time, y, n_bins: int = 20) -> dict:
    """Rough moment-based magnitudes used to centre and scale the chart.

    The pooled data are binned by time (one bin per distinct time when there
    are few); the binned mean curve gives the asymptote, the half-height time
    and the 25-75% rise time, and the median within-bin variance gives a
    common scale for ``Gamma`` and ``sigma2``. Returns keyword arguments for
    :class:`LogisticGrowthNlme`.
    """
    time = np.asarray(time, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    grid = np.unique(time)
    if grid.size > n_bins:
        edges = np.quantile(time, np.linspace(0.0, 1.0, n_bins + 1))
        label = np.clip(np.searchsorted(edges, time, side="right") - 1, 0, n_bins - 1)
    else:
        label = np.searchsorted(grid, time)
    size = np.bincount(label)
    keep = size > 0
    t = np.bincount(label, weights=time)[keep] / size[keep]
    m = np.bincount(label, weights=y)[keep] / size[keep]
    var = np.bincount(label, weights=y**2)[keep] / size[keep] - m**2
    top = max(float(m.max()), 1e-8)
    t25, t50, t75 = (_crossing(t, m, q * top) for q in (0.25, 0.5, 0.75))
    span = max(float(t[-1] - t[0]), 1e-8)
    alpha = max((t75 - t25) / (2.0 * math.log(3.0)), span / 100.0)
    spread = max(float(np.median(var)), 1e-8)
    return {"chart_scales": (top, alpha, alpha, spread, spread), "beta2_loc": t50}


def _sqrt_psd(m):
    w, v = sym_eigen(m)
    return v * np.sqrt(np.clip(w, 0.0, None))


class LogisticGrowthNlme(IndependentModel):
    latent_dim = 2

    def __init__(self, unit, time, y, n_units: int | None = None, chart_scales=None, beta2_loc: float = 0.0):
        unit = np.asarray(unit, dtype=np.int64).reshape(-1)
        order = np.argsort(unit, kind="stable")
        self.unit = unit[order]
        self.time = np.asarray(time, dtype=float).reshape(-1)[order]
        self.y = np.asarray(y, dtype=float).reshape(-1)[order]
        if not (self.unit.size == self.time.size == self.y.size):
            raise ValueError("unit, time and y must have the same length")
        self.n_units = int(n_units if n_units is not None else self.unit.max() + 1)
        if self.unit.min() < 0 or self.unit.max() >= self.n_units:
            raise ValueError("unit indices must lie in [0, n_units)")
        self.n_obs = np.bincount(self.unit, minlength=self.n_units)
        if np.any(self.n_obs == 0):
            raise ValueError("every unit needs at least one observation")
        self.offsets = np.concatenate([[0], np.cumsum(self.n_obs)])
        self.reparam = logistic_chart(chart_scales, beta2_loc)

    # -- parameter handling -------------------------------------------------

    @staticmethod
    def unpack(eta) -> dict:
        eta = np.asarray(eta, dtype=float)
        gamma = np.array([[eta[3], eta[4]], [eta[4], eta[5]]])
        return {"beta": eta[0:2].copy(), "alpha": float(eta[2]), "gamma": gamma, "sigma2": float(eta[6])}

    @staticmethod
    def pack(beta, alpha, gamma, sigma2) -> NDArray[np.float64]:
        gamma = np.asarray(gamma, dtype=float)
        return np.array([beta[0], beta[1], alpha, gamma[0, 0], gamma[1, 0], gamma[1, 1], sigma2])

    def _obs(self, units):
        """Observation indices and their position within ``units``."""
        if units is None:
            return slice(None), self.unit, self.n_units, self.n_obs
        units = np.asarray(units, dtype=np.int64).reshape(-1)
        counts = self.n_obs[units]
        idx = np.concatenate([np.arange(self.offsets[u], self.offsets[u + 1]) for u in units])
        local = np.repeat(np.arange(units.size), counts)
        return idx, local, units.size, counts

    def _pieces(self, z, theta, units):
        eta = self.reparam.forward(theta)
        p = self.unpack(eta)
        idx, local, n_sel, counts = self._obs(units)
        z = np.asarray(z, dtype=float)
        t, y = self.time[idx], self.y[idx]
        s = sigmoid((t - z[local, 1]) / p["alpha"])
        h = z[local, 0] * s
        return p, z, t, y, s, h, local, n_sel, counts

    # -- densities ----------------------------------------------------------

    def log_prior(self, z, theta):
        p = self.unpack(self.reparam.forward(theta))
        return self._log_prior(np.asarray(z, dtype=float), p["beta"], p["gamma"])

    @staticmethod
    def _log_prior(z, beta, gamma):
        det = gamma[0, 0] * gamma[1, 1] - gamma[0, 1] ** 2
        q = z - beta
        quad = (gamma[1, 1] * q[:, 0] ** 2 - 2.0 * gamma[0, 1] * q[:, 0] * q[:, 1] + gamma[0, 0] * q[:, 1] ** 2) / det
        return -_LOG_2PI - 0.5 * math.log(det) - 0.5 * quad

    def log_likelihood_terms(self, z, theta, units=None):
        """Per-observation ``log N(y_ij; h_ij, sigma2)``, in storage order."""
        p, z, t, y, s, h, local, n_sel, counts = self._pieces(z, theta, units)
        return -0.5 * (_LOG_2PI + math.log(p["sigma2"])) - 0.5 * (y - h) ** 2 / p["sigma2"]

    def log_complete(self, z, theta, units=None):
        p, z, t, y, s, h, local, n_sel, counts = self._pieces(z, theta, units)
        sigma2 = p["sigma2"]
        rss = np.bincount(local, weights=(y - h) ** 2, minlength=n_sel)
        lik = -0.5 * counts * (_LOG_2PI + math.log(sigma2)) - 0.5 * rss / sigma2
        return self._log_prior(z, p["beta"], p["gamma"]) + lik

    def grad_log_complete(self, z, theta, units=None):
        p, z, t, y, s, h, local, n_sel, counts = self._pieces(z, theta, units)
        beta, gamma, alpha, sigma2 = p["beta"], p["gamma"], p["alpha"], p["sigma2"]
        det = gamma[0, 0] * gamma[1, 1] - gamma[0, 1] ** 2
        prec = np.array([[gamma[1, 1], -gamma[0, 1]], [-gamma[0, 1], gamma[0, 0]]]) / det
        q = z - beta
        w = q @ prec  # rows: Gamma^-1 (z_i - beta)
        grad = np.empty((n_sel, 7))
        grad[:, 0:2] = w
        resid = y - h
        dh_dalpha = -z[local, 0] * s * (1.0 - s) * (t - z[local, 1]) / alpha**2
        grad[:, 2] = np.bincount(local, weights=resid * dh_dalpha, minlength=n_sel) / sigma2
        # d/dGamma of log N = (Gamma^-1 q q^T Gamma^-1 - Gamma^-1) / 2, off-diagonal counted twice
        grad[:, 3] = 0.5 * (w[:, 0] ** 2 - prec[0, 0])
        grad[:, 4] = w[:, 0] * w[:, 1] - prec[0, 1]
        grad[:, 5] = 0.5 * (w[:, 1] ** 2 - prec[1, 1])
        rss = np.bincount(local, weights=resid**2, minlength=n_sel)
        grad[:, 6] = -0.5 * counts / sigma2 + 0.5 * rss / sigma2**2
        return grad @ self.reparam.jacobian(theta)

    def initial_latent(self, theta, rng):
        p = self.unpack(self.reparam.forward(theta))
        root = _sqrt_psd(p["gamma"])
        return p["beta"] + rng.standard_normal((self.n_units, 2)) @ root.T

    def mean_curve(self, z_i, times, alpha):
        z_i = np.asarray(z_i, dtype=float)
        return z_i[0] * sigmoid((np.asarray(times, dtype=float) - z_i[1]) / alpha)

    # -- simulation ---------------------------------------------------------

    @classmethod
    def simulate(cls, n_units, times, beta, alpha, gamma, sigma2, rng, **chart):
        """Simulate a balanced design; returns ``(model, z)``."""
        times = np.asarray(times, dtype=float)
        gamma = np.asarray(gamma, dtype=float)
        if alpha <= 0 or sigma2 < 0:
            raise ValueError("alpha must be positive and sigma2 non-negative")
        w, _ = sym_eigen(gamma)
        if w[0] < -1e-12:
            raise ValueError("Gamma must be positive semi-definite")
        z = np.asarray(beta, dtype=float) + rng.standard_normal((n_units, 2)) @ _sqrt_psd(gamma).T
        unit = np.repeat(np.arange(n_units), times.size)
        t = np.tile(times, n_units)
        h = z[unit, 0] * sigmoid((t - z[unit, 1]) / alpha)
        y = h + math.sqrt(sigma2) * rng.standard_normal(h.size)
        return cls(unit, t, y, n_units=n_units, **chart), z
