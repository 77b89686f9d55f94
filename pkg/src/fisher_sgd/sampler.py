"""Latent-variable simulation: exact posterior draws, Metropolis-within-Gibbs, SBM Gibbs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .model import CapabilityMissing, IndependentModel

__all__ = [
    "SamplerDiverged",
    "MwgState",
    "mwg_sweep",
    "adapt_proposal",
    "exact_posterior_draw",
    "sbm_conditional_logits",
    "sbm_full_conditional",
    "gibbs_sweep_sbm",
    "TARGET_ACCEPTANCE",
    "ADAPT_RATE",
    "ADAPT_EVERY",
]

TARGET_ACCEPTANCE = 0.44
ADAPT_RATE = 0.05
ADAPT_EVERY = 50


class SamplerDiverged(FloatingPointError):
    """The complete log-density is not finite at the current latent state."""


@dataclass
class MwgState:
    """Per-unit, per-coordinate random-walk scales and acceptance bookkeeping."""

    log_scale: NDArray[np.float64]
    accepted: NDArray[np.int64]
    window_accepted: NDArray[np.int64]
    iterations: int = 0
    window_iterations: int = 0
    adaptation_enabled: bool = True

    @classmethod
    def create(cls, n_units: int, latent_dim: int, scale: float = 1.0, adapt: bool = True):
        if scale <= 0:
            raise ValueError("proposal scale must be positive")
        shape = (n_units, latent_dim)
        return cls(
            log_scale=np.full(shape, np.log(scale)),
            accepted=np.zeros(shape, dtype=np.int64),
            window_accepted=np.zeros(shape, dtype=np.int64),
            adaptation_enabled=adapt,
        )

    @property
    def scale(self) -> NDArray[np.float64]:
        return np.exp(self.log_scale)

    def acceptance_rate(self) -> float:
        if self.iterations == 0:
            return float("nan")
        return float(self.accepted.mean() / self.iterations)


def mwg_sweep(
    model: IndependentModel,
    z: NDArray[np.float64],
    theta: NDArray[np.float64],
    state: MwgState,
    rng: np.random.Generator,
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """One coordinate-wise random-walk Metropolis sweep for every unit.

    Units are independent given ``theta``, so all of them are moved at once;
    coordinate ``c`` of unit ``i`` proposes ``z[i, c] + scale[i, c] * eps`` and
    accepts with probability ``min(1, exp(log f(z') - log f(z)))``. The complete
    log-density differs from the log-posterior only by a latent-free constant,
    so the posterior is invariant.

    Returns the new state and the ``(n_units, latent_dim)`` accept flags.
    ``state`` counters are updated in place; adaptation is left to the caller.
    """
    z = np.array(z, dtype=float, copy=True)
    current = model.log_complete(z, theta)
    if not np.all(np.isfinite(current)):
        bad = np.flatnonzero(~np.isfinite(current))
        raise SamplerDiverged(f"non-finite complete log-density for units {bad[:10].tolist()}")
    flags = np.zeros(z.shape, dtype=bool)
    scale = state.scale
    for c in range(z.shape[1]):
        proposal = z.copy()
        proposal[:, c] += scale[:, c] * rng.standard_normal(z.shape[0])
        candidate = model.log_complete(proposal, theta)
        log_ratio = candidate - current
        log_u = np.log(rng.random(z.shape[0]))
        # NaN/-inf log ratios compare False and are rejected
        accept = log_u < log_ratio
        z[accept, c] = proposal[accept, c]
        current = np.where(accept, candidate, current)
        flags[:, c] = accept
    state.accepted += flags
    state.window_accepted += flags
    state.iterations += 1
    state.window_iterations += 1
    return z, flags


def adapt_proposal(state: MwgState, rate=None, kappa: float = ADAPT_RATE) -> MwgState:
    """Robbins-Monro nudge of the log-scales toward 0.44 acceptance.

    ``rate`` defaults to the acceptance rate accumulated in the current window,
    which is then reset. Does nothing once adaptation has been disabled.
    """
    if not state.adaptation_enabled:
        return state
    if rate is None:
        if state.window_iterations == 0:
            return state
        rate = state.window_accepted / state.window_iterations
    state.log_scale = state.log_scale + kappa * (np.asarray(rate, dtype=float) - TARGET_ACCEPTANCE)
    state.window_accepted = np.zeros_like(state.window_accepted)
    state.window_iterations = 0
    return state


def exact_posterior_draw(model, theta, rng: np.random.Generator):
    if not getattr(model, "has_exact_posterior", False):
        raise CapabilityMissing(f"{type(model).__name__} cannot draw from its posterior exactly")
    return model.exact_posterior_draw(theta, rng)


# ---------------------------------------------------------------------------
# stochastic block model


def sbm_conditional_logits(
    y: NDArray, onehot: NDArray, z: NDArray, i: int, log_alpha, log_p, log_q
) -> NDArray[np.float64]:
    """Unnormalised log full conditional of node ``i`` over the ``K`` classes.

    ``onehot`` is the current label indicator matrix, ``log_q = log(1 - p)``.
    The diagonal of ``y`` is assumed zero.
    """
    counts = onehot.sum(axis=0) - onehot[i]
    out_edges = y[i] @ onehot - y[i, i] * onehot[i]
    in_edges = y[:, i] @ onehot - y[i, i] * onehot[i]
    out_term = log_p @ out_edges + log_q @ (counts - out_edges)
    in_term = log_p.T @ in_edges + log_q.T @ (counts - in_edges)
    return log_alpha + out_term + in_term


def sbm_full_conditional(y, z, i, alpha, p) -> NDArray[np.float64]:
    """Normalised ``P(z_i = k | z_-i, y)``, computed in log space."""
    k = len(alpha)
    onehot = np.eye(k)[z]
    logits = sbm_conditional_logits(
        np.asarray(y, dtype=float), onehot, z, i, np.log(alpha), np.log(p), np.log1p(-p)
    )
    w = np.exp(logits - logits.max())
    return w / w.sum()


def gibbs_sweep_sbm(y, z, alpha, p, rng: np.random.Generator) -> NDArray[np.int64]:
    """Resample every node label from its exact full conditional.

    Nodes are visited in a fresh uniform random permutation. Class sizes and
    per-node edge counts towards each class are kept up to date as labels
    move, so each conditional costs ``O(K^2)`` plus an ``O(N)`` update on change.
    """
    y = np.asarray(y, dtype=float)
    z = np.array(z, dtype=np.int64, copy=True)
    k = len(alpha)
    if k == 1:
        return z
    y = y - np.diag(np.diag(y))
    log_alpha = np.log(alpha)
    log_q = np.log1p(-p)
    ratio = np.log(p) - log_q
    # [i, :k] counts edges i -> class l, [i, k:] edges class l -> i
    weights = np.hstack([ratio, ratio.T])
    pair_q = log_q + log_q.T
    onehot = np.eye(k)[z]
    sizes = onehot.sum(axis=0)
    edges = np.hstack([y @ onehot, y.T @ onehot])
    order = rng.permutation(len(z))
    uniforms = rng.random(len(z))
    for u, i in zip(uniforms, order):
        old = z[i]
        sizes[old] -= 1.0
        logits = log_alpha + weights @ edges[i] + pair_q @ sizes
        w = np.exp(logits - logits.max())
        cdf = np.cumsum(w)
        new = min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), k - 1)
        sizes[new] += 1.0
        if new != old:
            z[i] = new
            edges[:, old] -= y[:, i]
            edges[:, new] += y[:, i]
            edges[:, k + old] -= y[i]
            edges[:, k + new] += y[i]
    return z
