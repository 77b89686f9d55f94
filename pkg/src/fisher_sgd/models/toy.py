"""Gaussian random-intercept model with closed-form posterior, marginal and MLE.

    z_i ~ N(mu, omega2),   y_i | z_i ~ N(z_i, sigma2)   with sigma2 known.

Used as an oracle: the posterior, the marginal likelihood, its maximiser and
its Fisher information are all available analytically.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from ..model import IndependentModel
from ..reparam import Positive, Real, compose

__all__ = ["ToyGaussian", "toy_mle_oracle", "toy_fim_oracle"]

_LOG_2PI = math.log(2.0 * math.pi)
OMEGA2_FLOOR = 1e-8


def _chart():
    return compose(Real(names=["mu"]), Positive(names=["omega2"]))


class ToyGaussian(IndependentModel):
    latent_dim = 1
    has_exact_posterior = True

    def __init__(self, y, sigma2_noise: float = 1.0):
        self.y = np.asarray(y, dtype=float).reshape(-1)
        if sigma2_noise < 0:
            raise ValueError("sigma2_noise must be non-negative")
        self.sigma2 = float(sigma2_noise)
        self.n_units = self.y.size
        self.reparam = _chart()

    def _params(self, theta):
        mu, omega2 = self.reparam.forward(theta)
        return mu, omega2

    def _y(self, units):
        return self.y if units is None else self.y[np.asarray(units)]

    def log_complete(self, z, theta, units=None):
        mu, omega2 = self._params(theta)
        z = np.asarray(z, dtype=float)[:, 0]
        y = self._y(units)
        return (
            -0.5 * (_LOG_2PI + math.log(omega2)) - 0.5 * (z - mu) ** 2 / omega2
            - 0.5 * (_LOG_2PI + math.log(self.sigma2)) - 0.5 * (y - z) ** 2 / self.sigma2
        )

    def grad_log_complete(self, z, theta, units=None):
        mu, omega2 = self._params(theta)
        z = np.asarray(z, dtype=float)[:, 0]
        resid = z - mu
        d_mu = resid / omega2
        # omega2 = exp(x) so d/dx = omega2 * d/d(omega2)
        d_x = -0.5 + 0.5 * resid**2 / omega2
        return np.column_stack([d_mu, d_x])

    def posterior_moments(self, theta, units=None):
        """Mean and variance of ``z_i | y_i``; the variance is shared by all units."""
        mu, omega2 = self._params(theta)
        y = self._y(units)
        total = omega2 + self.sigma2
        var = omega2 * self.sigma2 / total
        mean = (mu * self.sigma2 + y * omega2) / total
        return mean, var

    def exact_posterior_draw(self, theta, rng):
        mean, var = self.posterior_moments(theta)
        return (mean + math.sqrt(var) * rng.standard_normal(mean.shape))[:, None]

    def initial_latent(self, theta, rng):
        return self.exact_posterior_draw(theta, rng)

    def marginal_loglik(self, theta) -> float:
        mu, omega2 = self._params(theta)
        s = omega2 + self.sigma2
        return float(np.sum(-0.5 * (_LOG_2PI + math.log(s)) - 0.5 * (self.y - mu) ** 2 / s))

    def marginal_score(self, theta, units=None):
        """Per-unit ``grad_theta log g(y_i; theta)`` in chart coordinates."""
        mu, omega2 = self._params(theta)
        s = omega2 + self.sigma2
        resid = self._y(units) - mu
        d_mu = resid / s
        d_x = omega2 * (-0.5 / s + 0.5 * resid**2 / s**2)
        return np.column_stack([d_mu, d_x])

    @classmethod
    def simulate(cls, n: int, mu: float, omega2: float, sigma2: float, rng):
        """Draw ``(y, z)`` through the hierarchy."""
        if omega2 < 0 or sigma2 < 0:
            raise ValueError("variances must be non-negative")
        z = mu + math.sqrt(omega2) * rng.standard_normal(n)
        y = z + math.sqrt(sigma2) * rng.standard_normal(n)
        return y, z


def toy_mle_oracle(y, sigma2_noise: float) -> tuple[float, float]:
    """Closed-form marginal MLE ``(mu_hat, omega2_hat)``.

    ``omega2_hat`` is clamped to ``1e-8`` (with a warning) when the sample
    variance does not exceed the known noise variance.
    """
    y = np.asarray(y, dtype=float)
    mu = float(y.mean())
    omega2 = float(np.mean((y - mu) ** 2)) - sigma2_noise
    if omega2 <= OMEGA2_FLOOR:
        warnings.warn("sample variance below noise variance; omega2 clamped", RuntimeWarning)
        omega2 = OMEGA2_FLOOR
    return mu, omega2


def toy_fim_oracle(theta, n: int, sigma2_noise: float):
    """Whole-sample Fisher information of ``n`` observations, in chart coordinates."""
    mu, omega2 = _chart().forward(theta)
    s = omega2 + sigma2_noise
    per_obs = np.diag([1.0 / s, 1.0 / (2.0 * s * s)])
    jac = np.diag([1.0, omega2])
    return n * jac.T @ per_obs @ jac
