"""Small dense linear algebra, cascaded mean filters and distribution quantiles.

Everything here works on matrices of dimension at most a few dozen, so the
routines favour robustness and exact error signalling over raw speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "NotPositiveDefinite",
    "EigenNotConverged",
    "symmetrize",
    "cholesky",
    "solve_lower",
    "solve_upper",
    "spd_solve",
    "spd_inverse",
    "sym_eigen",
    "CascadedFilter",
    "normal_cdf",
    "normal_quantile",
    "chisq_cdf",
    "chisq_quantile",
    "regularized_gamma_p",
]


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot is not strictly positive."""


class EigenNotConverged(RuntimeError):
    """Raised when cyclic Jacobi fails to converge within the sweep budget."""


def symmetrize(a: ArrayLike) -> NDArray[np.float64]:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def cholesky(a: ArrayLike) -> NDArray[np.float64]:
    """Lower-triangular ``L`` with ``a = L @ L.T``.

    Only the lower triangle of ``a`` is read. Raises
    :class:`NotPositiveDefinite` as soon as a pivot is ``<= 0`` or not finite,
    so callers can decide on a jitter policy.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        row = low[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > 0.0 or not math.isfinite(pivot):
            raise NotPositiveDefinite(f"non-positive pivot {pivot!r} at column {j}")
        d = math.sqrt(pivot)
        low[j, j] = d
        if j + 1 < n:
            low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ row) / d
    return low


def solve_lower(low: NDArray[np.float64], b: ArrayLike) -> NDArray[np.float64]:
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    for i in range(low.shape[0]):
        x[i] = (b[i] - low[i, :i] @ x[:i]) / low[i, i]
    return x


def solve_upper(up: NDArray[np.float64], b: ArrayLike) -> NDArray[np.float64]:
    b = np.asarray(b, dtype=float)
    n = up.shape[0]
    x = np.zeros_like(b)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - up[i, i + 1 :] @ x[i + 1 :]) / up[i, i]
    return x


def spd_solve(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    Propagates :class:`NotPositiveDefinite` from the factorisation.
    """
    low = cholesky(a)
    return solve_upper(low.T, solve_lower(low, b))


def spd_inverse(a: ArrayLike) -> NDArray[np.float64]:
    a = np.asarray(a, dtype=float)
    return symmetrize(spd_solve(a, np.eye(a.shape[0])))


def sym_eigen(
    a: ArrayLike, tol: float = 1e-15, max_sweeps: int = 100
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns
    -------
    eigenvalues : ndarray, shape (n,)
        In ascending order.
    eigenvectors : ndarray, shape (n, n)
        Orthonormal columns, ``a @ v[:, k] == w[k] * v[:, k]``.
    """
    m = symmetrize(a).copy()
    n = m.shape[0]
    v = np.eye(n)
    scale = max(float(np.abs(m).max()) if n else 0.0, np.finfo(float).tiny)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(m, -1) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = m[p, q]
                if apq == 0.0:
                    continue
                theta = (m[q, q] - m[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                mp, mq = m[:, p].copy(), m[:, q].copy()
                m[:, p] = c * mp - s * mq
                m[:, q] = s * mp + c * mq
                mp, mq = m[p, :].copy(), m[q, :].copy()
                m[p, :] = c * mp - s * mq
                m[q, :] = s * mp + c * mq
                m[p, q] = m[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = math.sqrt(float(np.sum(np.tril(m, -1) ** 2)))
        if off > tol * scale:
            raise EigenNotConverged(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.diag(m).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


@dataclass(frozen=True)
class CascadedFilter:
    """Third-order cascaded exponential mean filter.

    Each stage is an exponential moving average of the previous one. The first
    observed vector initialises all three stages, which avoids the start-up
    rise a zero-initialised filter would show.
    """

    c: float
    m1: NDArray[np.float64] | None = None
    m2: NDArray[np.float64] | None = None
    m3: NDArray[np.float64] | None = None
    update_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.c <= 1.0:
            raise ValueError(f"filter constant must lie in (0, 1], got {self.c}")

    def update(self, v: ArrayLike) -> "CascadedFilter":
        v = np.asarray(v, dtype=float)
        if self.update_count == 0:
            return CascadedFilter(self.c, v.copy(), v.copy(), v.copy(), 1)
        if v.shape != self.m1.shape:
            raise ValueError(f"dimension mismatch: {v.shape} vs {self.m1.shape}")
        c = self.c
        m1 = (1.0 - c) * self.m1 + c * v
        m2 = (1.0 - c) * self.m2 + c * m1
        m3 = (1.0 - c) * self.m3 + c * m2
        return CascadedFilter(c, m1, m2, m3, self.update_count + 1)

    @property
    def norm(self) -> float:
        if self.m3 is None:
            return math.nan
        return float(np.linalg.norm(self.m3))


# ---------------------------------------------------------------------------
# distributions


def _check_prob(p: float) -> float:
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie strictly in (0, 1), got {p}")
    return p


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


# Acklam's rational approximation to the inverse normal CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)


def _acklam(p: float) -> float:
    lo = 0.02425
    if p < lo:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if p > 1.0 - lo:
        return -_acklam(1.0 - p)
    q = p - 0.5
    r = q * q
    return (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
        ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    )


def normal_quantile(p: float) -> float:
    """Standard normal quantile, refined by Newton steps on the exact CDF."""
    p = _check_prob(p)
    if p == 0.5:
        return 0.0
    x = _acklam(p)
    for _ in range(3):
        step = (normal_cdf(x) - p) / _normal_pdf(x)
        x -= step
        if abs(step) < 1e-15 * (1.0 + abs(x)):
            break
    return x


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularised incomplete gamma ``P(a, x)``.

    Power series below ``x < a + 1``, Lentz continued fraction for the upper
    tail otherwise.
    """
    if x <= 0.0:
        return 0.0
    log_prefix = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        ap = a
        for _ in range(10_000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return min(1.0, total * math.exp(log_prefix))
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return max(0.0, 1.0 - math.exp(log_prefix) * h)


def chisq_cdf(x: float, dof: int) -> float:
    return regularized_gamma_p(0.5 * dof, 0.5 * x)


def _chisq_pdf(x: float, dof: int) -> float:
    k = 0.5 * dof
    return math.exp((k - 1.0) * math.log(x) - 0.5 * x - k * math.log(2.0) - math.lgamma(k))


def chisq_quantile(p: float, dof: int) -> float:
    """Chi-square quantile by safeguarded Newton iteration on the exact CDF."""
    p = _check_prob(p)
    if int(dof) != dof or dof < 1:
        raise ValueError(f"degrees of freedom must be a positive integer, got {dof}")
    dof = int(dof)
    # Wilson-Hilferty starting point
    z = normal_quantile(p)
    h = 2.0 / (9.0 * dof)
    x = dof * max(1.0 - h + z * math.sqrt(h), 1e-3) ** 3
    lo, hi = 0.0, max(2.0 * x, 1.0)
    while chisq_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        f = chisq_cdf(x, dof) - p
        if f < 0.0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        if abs(f) < 1e-15:
            break
        nxt = x - f / _chisq_pdf(x, dof)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= 1e-15 * x:
            x = nxt
            break
        x = nxt
    return x
