"""Bijections between the unconstrained estimation space and constrained parameters.

Every chart maps a free vector ``x`` (length ``free_dim``) to a flattened
constrained value ``y`` (length ``original_dim``) and provides the analytic
Jacobian ``dy/dx`` used by the gradient chain rule and the delta method.

Matrix-valued blocks are flattened as their lower triangle in row-major order,
so an ``Spd(2)`` block yields ``(S11, S21, S22)``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .numerics import NotPositiveDefinite, cholesky

__all__ = [
    "ConstraintViolation",
    "Bijection",
    "Real",
    "Positive",
    "Interval01",
    "Simplex",
    "Spd",
    "Tuple",
    "compose",
    "sigmoid",
    "logit",
]

EXP_CLAMP = 700.0
_EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny


class ConstraintViolation(ValueError):
    """Raised when a value handed to ``inverse`` is on or outside the constraint set."""


def _exp(x):
    return np.exp(np.clip(x, -EXP_CLAMP, EXP_CLAMP))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(out, _TINY, 1.0 - _EPS / 2)


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


class Bijection:
    """Base class. Subclasses set ``free_dim``/``original_dim`` and the three maps."""

    free_dim: int
    original_dim: int
    kind: str

    def __init__(self, names: Sequence[str] | None = None):
        if names is not None and len(names) != self.original_dim:
            raise ValueError(f"{self.kind}: expected {self.original_dim} names, got {len(names)}")
        self.names = list(names) if names is not None else [
            f"{self.kind}[{i}]" for i in range(self.original_dim)
        ]

    def _x(self, x: ArrayLike) -> NDArray[np.float64]:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.free_dim:
            raise ValueError(f"{self.kind}: expected {self.free_dim} free values, got {x.shape[0]}")
        return x

    def _y(self, y: ArrayLike) -> NDArray[np.float64]:
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.shape[0] != self.original_dim:
            raise ValueError(f"{self.kind}: expected {self.original_dim} values, got {y.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise ConstraintViolation(f"{self.kind}: non-finite value {y}")
        return y

    def forward(self, x: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def inverse(self, y: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def jacobian(self, x: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind, "free_dim": self.free_dim, "names": self.names}

    def __repr__(self):
        return f"{type(self).__name__}({self.kind!r}, free_dim={self.free_dim})"


class Real(Bijection):
    """Affine chart ``y = loc + scale * x`` on the real line (``dim`` copies)."""

    def __init__(self, dim: int = 1, loc: float = 0.0, scale: float = 1.0, names=None):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.free_dim = self.original_dim = int(dim)
        self.loc, self.scale = float(loc), float(scale)
        self.kind = "real"
        super().__init__(names)

    def forward(self, x):
        return self.loc + self.scale * self._x(x)

    def inverse(self, y):
        return (self._y(y) - self.loc) / self.scale

    def jacobian(self, x):
        self._x(x)
        return self.scale * np.eye(self.free_dim)


class Positive(Bijection):
    """``y = scale * exp(x)``."""

    def __init__(self, dim: int = 1, scale: float = 1.0, names=None):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.free_dim = self.original_dim = int(dim)
        self.scale = float(scale)
        self.kind = "positive"
        super().__init__(names)

    def forward(self, x):
        return self.scale * _exp(self._x(x))

    def inverse(self, y):
        y = self._y(y)
        if np.any(y <= 0):
            raise ConstraintViolation(f"positive: non-positive value in {y}")
        return np.log(y / self.scale)

    def jacobian(self, x):
        return np.diag(self.forward(x))


class Interval01(Bijection):
    """Logistic sigmoid onto the open unit interval (``dim`` copies)."""

    def __init__(self, dim: int = 1, names=None):
        self.free_dim = self.original_dim = int(dim)
        self.kind = "interval01"
        super().__init__(names)

    def forward(self, x):
        return sigmoid(self._x(x))

    def inverse(self, y):
        y = self._y(y)
        if np.any(y <= 0) or np.any(y >= 1):
            raise ConstraintViolation(f"interval01: value outside (0, 1) in {y}")
        return logit(y)

    def jacobian(self, x):
        s = self.forward(x)
        return np.diag(s * (1.0 - s))


class Simplex(Bijection):
    """Stick-breaking chart onto the open simplex of ``k`` components.

    Offsets ``log(k - i)`` make the origin map to the uniform vector.
    """

    def __init__(self, k: int, names=None):
        if k < 1:
            raise ValueError("simplex needs at least one component")
        self.k = int(k)
        self.free_dim = self.k - 1
        self.original_dim = self.k
        self.kind = f"simplex({self.k})"
        self._offset = np.log(self.k - 1 - np.arange(self.free_dim, dtype=float))
        super().__init__(names)

    def fractions(self, x) -> NDArray[np.float64]:
        """Stick fractions ``v_i = sigmoid(x_i - log(k - i))`` with ``i`` counted from one."""
        return sigmoid(self._x(x) - self._offset)

    def forward(self, x):
        v = self.fractions(x)
        remaining = np.concatenate([[1.0], np.cumprod(1.0 - v)])
        return np.concatenate([v, [1.0]]) * remaining

    def inverse(self, y):
        y = self._y(y)
        if np.any(y <= 0):
            raise ConstraintViolation(f"simplex: non-positive entry in {y}")
        if abs(y.sum() - 1.0) > 1e-9:
            raise ConstraintViolation(f"simplex: entries sum to {y.sum()!r}")
        tails = np.cumsum(y[::-1])[::-1]
        v = y[:-1] / tails[:-1]
        return logit(v) + self._offset

    def jacobian(self, x):
        v = self.fractions(x)
        p = self.forward(x)
        k = self.k
        jac = np.zeros((k, k - 1))
        for i in range(k):
            for n in range(min(i, k - 1)):
                jac[i, n] = -p[i] * v[n]
            if i < k - 1:
                jac[i, i] = p[i] * (1.0 - v[i])
        return jac

    def log_jacobian(self, x) -> NDArray[np.float64]:
        """``d log y_i / d x_n`` as a ``(k, k - 1)`` matrix."""
        v = self.fractions(x)
        k = self.k
        out = np.zeros((k, k - 1))
        for i in range(k):
            out[i, : min(i, k - 1)] = -v[: min(i, k - 1)]
            if i < k - 1:
                out[i, i] = 1.0 - v[i]
        return out


def _tril_indices(p: int):
    return [(i, j) for i in range(p) for j in range(i + 1)]


class Spd(Bijection):
    """Log-Cholesky chart onto symmetric positive definite ``p x p`` matrices.

    The free vector fills the lower triangle of ``L`` row by row, with diagonal
    entries exponentiated; the value is ``scale * L @ L.T``.
    """

    def __init__(self, p: int, scale: float = 1.0, names=None):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.p = int(p)
        self.scale = float(scale)
        self.free_dim = self.original_dim = self.p * (self.p + 1) // 2
        self.kind = f"spd({self.p})"
        self._idx = _tril_indices(self.p)
        super().__init__(names)

    def factor(self, x) -> NDArray[np.float64]:
        x = self._x(x)
        low = np.zeros((self.p, self.p))
        for n, (i, j) in enumerate(self._idx):
            low[i, j] = _exp(x[n]) if i == j else x[n]
        return low

    def pack(self, m: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.array([m[i, j] for i, j in self._idx])

    def unpack(self, y: ArrayLike) -> NDArray[np.float64]:
        y = np.asarray(y, dtype=float).reshape(-1)
        m = np.zeros((self.p, self.p))
        for n, (i, j) in enumerate(self._idx):
            m[i, j] = m[j, i] = y[n]
        return m

    def forward(self, x):
        low = self.factor(x)
        return self.scale * self.pack(low @ low.T)

    def inverse(self, y):
        m = self.unpack(self._y(y)) / self.scale
        try:
            low = cholesky(m)
        except NotPositiveDefinite as exc:
            raise ConstraintViolation(f"spd: matrix is not positive definite ({exc})") from exc
        return np.array([math.log(low[i, j]) if i == j else low[i, j] for i, j in self._idx])

    def jacobian(self, x):
        low = self.factor(x)
        jac = np.zeros((self.original_dim, self.free_dim))
        for n, (a, b) in enumerate(self._idx):
            dlow = np.zeros_like(low)
            dlow[a, b] = low[a, b] if a == b else 1.0
            dm = dlow @ low.T + low @ dlow.T
            jac[:, n] = self.scale * self.pack(dm)
        return jac


class Tuple(Bijection):
    """Block-wise concatenation of charts with a block-diagonal Jacobian."""

    def __init__(self, blocks: Sequence[Bijection]):
        if not blocks:
            raise ValueError("compose needs at least one block")
        self.blocks = list(blocks)
        self.free_dim = sum(b.free_dim for b in self.blocks)
        self.original_dim = sum(b.original_dim for b in self.blocks)
        self.kind = "tuple(" + ", ".join(b.kind for b in self.blocks) + ")"
        self._free_slices, self._orig_slices = [], []
        fo = oo = 0
        for b in self.blocks:
            self._free_slices.append(slice(fo, fo + b.free_dim))
            self._orig_slices.append(slice(oo, oo + b.original_dim))
            fo += b.free_dim
            oo += b.original_dim
        super().__init__([n for b in self.blocks for n in b.names])

    def free_slice(self, i: int) -> slice:
        return self._free_slices[i]

    def original_slice(self, i: int) -> slice:
        return self._orig_slices[i]

    def forward(self, x):
        x = self._x(x)
        return np.concatenate([b.forward(x[s]) for b, s in zip(self.blocks, self._free_slices)])

    def inverse(self, y):
        y = self._y(y)
        return np.concatenate([b.inverse(y[s]) for b, s in zip(self.blocks, self._orig_slices)])

    def jacobian(self, x):
        x = self._x(x)
        jac = np.zeros((self.original_dim, self.free_dim))
        for b, fs, os in zip(self.blocks, self._free_slices, self._orig_slices):
            jac[os, fs] = b.jacobian(x[fs])
        return jac

    def describe(self) -> dict:
        return {
            "kind": "tuple",
            "free_dim": self.free_dim,
            "blocks": [b.describe() for b in self.blocks],
        }


def compose(*blocks: Bijection) -> Tuple:
    return Tuple(blocks)
