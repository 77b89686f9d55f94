"""Directed stochastic block model with ``K`` classes.

    z_i ~ Multinomial(1; alpha),   y_ij | z ~ Bernoulli(p[z_i, z_j])   for i != j

Labels are stored 0-based. The diagonal of the adjacency matrix is ignored.
The chart is ``compose(simplex(K), interval01 x K^2)`` with ``p`` flattened
row-major, so ``theta`` has ``K - 1 + K^2`` coordinates.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.typing import NDArray

from ..model import GlobalModel
from ..reparam import Interval01, Simplex, compose
from ..sampler import gibbs_sweep_sbm

__all__ = ["Sbm", "BENCHMARK_ALPHA", "BENCHMARK_P", "sbm_align_labels", "sbm_chart"]

BENCHMARK_ALPHA = np.full(4, 0.25)
BENCHMARK_P = np.array(
    [
        [2, 2, 1, 2],
        [2, 2, 2, 1],
        [1, 2, 2, 2],
        [2, 1, 2, 2],
    ],
    dtype=float,
) / 3.0

MAX_ALIGN_K = 8


def sbm_chart(k: int):
    return compose(
        Simplex(k, names=[f"alpha{a + 1}" for a in range(k)]),
        Interval01(k * k, names=[f"p{a + 1}{b + 1}" for a in range(k) for b in range(k)]),
    )


class Sbm(GlobalModel):
    def __init__(self, adjacency, k: int):
        y = np.array(adjacency, dtype=float)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("adjacency must be binary")
        np.fill_diagonal(y, 0.0)
        self.y = y
        self.n = y.shape[0]
        self.k = int(k)
        self.reparam = sbm_chart(self.k)
        self._alpha_slice = self.reparam.free_slice(0)
        self._p_slice = self.reparam.free_slice(1)
        off = ~np.eye(self.n, dtype=bool)
        self._rows, self._cols = np.nonzero(off)
        self._y_pairs = y[self._rows, self._cols]

    def params(self, theta) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        eta = self.reparam.forward(theta)
        return eta[: self.k], eta[self.k :].reshape(self.k, self.k)

    def counts(self, z):
        """Class sizes ``c``, edge counts ``e[k, l]`` and ordered pair counts ``n[k, l]``."""
        onehot = np.eye(self.k)[np.asarray(z)]
        c = onehot.sum(axis=0)
        e = onehot.T @ self.y @ onehot
        pairs = np.outer(c, c) - np.diag(c)
        return c, e, pairs

    def log_complete(self, z, theta) -> float:
        alpha, p = self.params(theta)
        c, e, pairs = self.counts(z)
        return float(c @ np.log(alpha) + np.sum(e * np.log(p) + (pairs - e) * np.log1p(-p)))

    def log_complete_direct(self, z, theta) -> float:
        """Same quantity by an explicit double loop over node pairs (slow, for checks)."""
        alpha, p = self.params(theta)
        total = sum(math.log(alpha[zi]) for zi in z)
        for i in range(self.n):
            for j in range(self.n):
                if i == j:
                    continue
                pij = p[z[i], z[j]]
                total += math.log(pij) if self.y[i, j] else math.log1p(-pij)
        return total

    def grad_log_complete(self, z, theta):
        c, e, pairs = self.counts(z)
        alpha_block = self.reparam.blocks[0]
        _, p = self.params(theta)
        grad = np.empty(self.theta_dim)
        grad[self._alpha_slice] = c @ alpha_block.log_jacobian(theta[self._alpha_slice])
        grad[self._p_slice] = (e - pairs * p).reshape(-1)
        return grad

    def hessian_log_complete(self, z, theta):
        """Analytic Hessian; both blocks are diagonal in this chart."""
        theta = np.asarray(theta, dtype=float)
        c, e, pairs = self.counts(z)
        _, p = self.params(theta)
        v = self.reparam.blocks[0].fractions(theta[self._alpha_slice])
        tail = np.cumsum(c[::-1])[::-1][: self.k - 1]
        diag = np.concatenate([-v * (1.0 - v) * tail, -(pairs * p * (1.0 - p)).reshape(-1)])
        return np.diag(diag)

    def score_terms(self, z, theta):
        """Per-pair edge scores followed by per-node label scores.

        Row ``(i, j)`` for ``i != j`` holds ``y_ij - p[z_i, z_j]`` in the
        coordinate of ``p[z_i, z_j]``; row ``i`` of the node block holds
        ``grad log alpha[z_i]``.
        """
        z = np.asarray(z)
        theta = np.asarray(theta, dtype=float)
        _, p = self.params(theta)
        n_pairs = self._rows.size
        terms = np.zeros((n_pairs + self.n, self.theta_dim))
        zi, zj = z[self._rows], z[self._cols]
        col = self._p_slice.start + zi * self.k + zj
        terms[np.arange(n_pairs), col] = self._y_pairs - p[zi, zj]
        log_jac = self.reparam.blocks[0].log_jacobian(theta[self._alpha_slice])
        terms[n_pairs:, self._alpha_slice] = log_jac[z]
        return terms

    def sample_latent(self, z, theta, rng):
        alpha, p = self.params(theta)
        return gibbs_sweep_sbm(self.y, z, alpha, p, rng)

    def initial_latent(self, theta, rng):
        return rng.integers(self.k, size=self.n)

    def needs_restart(self, z) -> bool:
        return bool(np.any(np.bincount(np.asarray(z), minlength=self.k) == 0))

    def edge_density(self) -> float:
        return float(self.y.sum() / (self.n * (self.n - 1)))

    @classmethod
    def simulate(cls, n: int, alpha, p, rng):
        """Returns ``(model, z)`` for a directed graph without self loops."""
        alpha = np.asarray(alpha, dtype=float)
        p = np.asarray(p, dtype=float)
        if np.any(alpha <= 0) or abs(alpha.sum() - 1.0) > 1e-9:
            raise ValueError("alpha must lie in the open simplex")
        if np.any(p < 0) or np.any(p > 1) or p.shape != (alpha.size, alpha.size):
            raise ValueError("p must be a K x K matrix of probabilities")
        z = rng.choice(alpha.size, size=n, p=alpha)
        y = (rng.random((n, n)) < p[z][:, z]).astype(float)
        np.fill_diagonal(y, 0.0)
        return cls(y, alpha.size), z


def sbm_align_labels(z_ref, z_est, k: int) -> NDArray[np.int64]:
    """Permutation ``perm`` maximising ``#{i : z_est[i] == perm[z_ref[i]]}``.

    ``perm[a]`` is the estimated class matched to reference class ``a``. Ties
    are broken by the lexicographically first permutation.
    """
    if k > MAX_ALIGN_K:
        raise ValueError(f"exhaustive alignment limited to K <= {MAX_ALIGN_K}")
    z_ref = np.asarray(z_ref)
    z_est = np.asarray(z_est)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (z_ref, z_est), 1)
    best, best_score = None, -1
    for perm in itertools.permutations(range(k)):
        score = int(confusion[np.arange(k), perm].sum())
        if score > best_score:
            best, best_score = perm, score
    return np.array(best, dtype=np.int64)
