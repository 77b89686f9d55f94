"""Contracts implemented by latent variable models.

Two flavours exist. :class:`IndependentModel` covers data made of ``N``
independent units ``(y_i, z_i)``; its densities are evaluated for all units at
once and return one value (or one gradient row) per unit.
:class:`GlobalModel` covers models whose complete log-density does not split
over units, such as the stochastic block model.

Gradients are always taken with respect to the unconstrained vector ``theta``;
models apply the chain rule through their ``reparam`` themselves.
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np
from numpy.typing import NDArray

from .reparam import Tuple

__all__ = [
    "CapabilityMissing",
    "IndependentModel",
    "GlobalModel",
    "fd_gradient",
    "fd_jacobian",
    "relative_error",
]


class CapabilityMissing(NotImplementedError):
    """The model does not provide an optional capability (e.g. exact posterior draws)."""


class IndependentModel(ABC):
    """``N`` independent units with per-unit latent vectors of length ``latent_dim``.

    Latent states are arrays of shape ``(n_units, latent_dim)``. The optional
    ``units`` argument restricts evaluation to a subset of units, in which case
    ``z`` holds one row per selected unit.
    """

    reparam: Tuple
    n_units: int
    latent_dim: int
    has_exact_posterior: bool = False

    @property
    def theta_dim(self) -> int:
        return self.reparam.free_dim

    @property
    def parameter_names(self) -> list[str]:
        return self.reparam.names

    def original(self, theta) -> NDArray[np.float64]:
        return self.reparam.forward(theta)

    @abstractmethod
    def log_complete(self, z, theta, units=None) -> NDArray[np.float64]:
        """``log f(y_i, z_i; theta)`` for each selected unit."""

    @abstractmethod
    def grad_log_complete(self, z, theta, units=None) -> NDArray[np.float64]:
        """Per-unit gradients, shape ``(n_selected, theta_dim)``."""

    def log_complete_unit(self, i: int, z_i, theta) -> float:
        z_i = np.asarray(z_i, dtype=float).reshape(1, self.latent_dim)
        return float(self.log_complete(z_i, theta, units=np.array([i]))[0])

    def grad_log_complete_unit(self, i: int, z_i, theta) -> NDArray[np.float64]:
        z_i = np.asarray(z_i, dtype=float).reshape(1, self.latent_dim)
        return self.grad_log_complete(z_i, theta, units=np.array([i]))[0]

    def exact_posterior_draw(self, theta, rng: np.random.Generator) -> NDArray[np.float64]:
        raise CapabilityMissing(f"{type(self).__name__} has no exact posterior sampler")

    @abstractmethod
    def initial_latent(self, theta, rng: np.random.Generator) -> NDArray[np.float64]:
        """A starting latent state for the Markov kernel."""


class GlobalModel(ABC):
    """A model whose complete log-density is only available for the whole sample.

    ``score_terms`` returns the structured decomposition of the complete-data
    score: the rows sum to ``grad_log_complete`` and the outer products of their
    stochastic-approximation averages form the preconditioner.
    """

    reparam: Tuple

    @property
    def theta_dim(self) -> int:
        return self.reparam.free_dim

    @property
    def parameter_names(self) -> list[str]:
        return self.reparam.names

    def original(self, theta) -> NDArray[np.float64]:
        return self.reparam.forward(theta)

    @abstractmethod
    def log_complete(self, z, theta) -> float: ...

    @abstractmethod
    def grad_log_complete(self, z, theta) -> NDArray[np.float64]: ...

    @abstractmethod
    def score_terms(self, z, theta) -> NDArray[np.float64]:
        """Score contributions, shape ``(n_terms, theta_dim)``; rows sum to the gradient."""

    @abstractmethod
    def sample_latent(self, z, theta, rng: np.random.Generator):
        """One application of a Markov kernel leaving the posterior invariant."""

    @abstractmethod
    def initial_latent(self, theta, rng: np.random.Generator): ...

    def hessian_log_complete(self, z, theta) -> NDArray[np.float64]:
        """Central differences of the analytic gradient, step ``1e-5 * (1 + |theta_j|)``."""
        theta = np.asarray(theta, dtype=float)
        h = fd_jacobian(lambda t: self.grad_log_complete(z, t), theta, rel_step=1e-5)
        return 0.5 * (h + h.T)

    def needs_restart(self, z) -> bool:
        """True when the latent state is degenerate and the run must start over."""
        return False


def fd_gradient(f, x, rel_step: float = 1e-6) -> NDArray[np.float64]:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for n in range(x.size):
        h = rel_step * (1.0 + abs(x[n]))
        xp, xm = x.copy(), x.copy()
        xp[n] += h
        xm[n] -= h
        g[n] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_jacobian(f, x, rel_step: float = 1e-6) -> NDArray[np.float64]:
    """Central finite-difference Jacobian; column ``n`` is ``d f / d x_n``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for n in range(x.size):
        h = rel_step * (1.0 + abs(x[n]))
        xp, xm = x.copy(), x.copy()
        xp[n] += h
        xm[n] -= h
        cols.append((np.asarray(f(xp), dtype=float) - np.asarray(f(xm), dtype=float)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def relative_error(a, b) -> float:
    """``max|a - b| / max(1, max|b|)``: relative for large entries, absolute near zero."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))
