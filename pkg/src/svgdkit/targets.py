"""Target distributions pi ∝ exp(-V) given through their score grad log pi.

Each target exposes a vectorised ``score`` on ``(N, d)`` arrays, an
unnormalised log-density, an operator-norm bound ``hessian_bound`` on
``H_V`` and a bound ``score_bound`` on ``||grad log pi||``. One-dimensional
targets also carry a normalised ``density`` used by the grid KL estimator.

``score_bound`` plays the role of the constant C_V in the particle
Lipschitz constant ``L = C_V (D + 1) + B M``. The assumption that
introduces C_V bounds ``V`` itself, but the Lipschitz argument only ever
uses it to bound the score, so that is what is exposed here. For targets
with an unbounded score (any Gaussian) the value is an estimate over a
finite interval, never a true supremum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1 and (arr.size == dim)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if single else arr.reshape(-1, 1)
    if arr.shape[-1] != dim:
        raise ValueError(f"dimension mismatch: target has d={dim}, got points with {arr.shape[-1]} columns")
    return arr, single


class Target:
    """Base class; subclasses implement the ``_score`` / ``_log_density`` pair on 2-D arrays."""

    dim: int
    hessian_bound: float
    score_bound: float

    def score(self, x) -> np.ndarray:
        """grad log pi at each row of ``x``; a single point returns shape ``(d,)``."""
        X, single = _as_points(x, self.dim)
        out = self._score(X)
        return out[0] if single else out

    def log_density(self, x) -> np.ndarray | float:
        """Unnormalised log pi."""
        X, single = _as_points(x, self.dim)
        out = self._log_density(X)
        return float(out[0]) if single else out

    @property
    def has_density(self) -> bool:
        return False

    def density(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no exact density")

    def _score(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _log_density(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass
class GaussianTarget(Target):
    mean: np.ndarray
    cov: np.ndarray
    dim: int = field(init=False)
    hessian_bound: float = field(init=False)
    score_bound: float = field(init=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {self.cov.shape}")
        if not np.allclose(self.cov, self.cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.cov).max())):
            raise ValueError("covariance is not symmetric")
        try:
            chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite") from None
        self.dim = d
        self.precision = np.linalg.inv(self.cov)
        self.precision = 0.5 * (self.precision + self.precision.T)
        self.hessian_bound = float(np.linalg.eigvalsh(self.precision).max())
        self._log_norm = 0.5 * d * math.log(2 * math.pi) + float(np.log(np.diag(chol)).sum())
        # score grows linearly; report its size over a +-6 sd box around the mean
        self.score_bound = 6.0 * math.sqrt(d) * math.sqrt(self.hessian_bound * float(np.linalg.eigvalsh(self.cov).max()))

    def _score(self, X):
        return -(X - self.mean) @ self.precision

    def _log_density(self, X):
        r = X - self.mean
        return -0.5 * np.einsum("na,ab,nb->n", r, self.precision, r)

    @property
    def has_density(self) -> bool:
        return True

    def density(self, x):
        X, single = _as_points(x, self.dim)
        out = np.exp(self._log_density(X) - self._log_norm)
        return float(out[0]) if single else out


@dataclass(frozen=True)
class GaussianMixture1D:
    """Weights, means and standard deviations of a 1-D Gaussian mixture."""

    weights: tuple[float, ...]
    means: tuple[float, ...]
    sds: tuple[float, ...]

    def __post_init__(self):
        w, m, s = (np.asarray(v, dtype=float) for v in (self.weights, self.means, self.sds))
        if not (w.ndim == m.ndim == s.ndim == 1 and w.size == m.size == s.size and w.size > 0):
            raise ValueError("mixture weights, means and sds must be non-empty vectors of equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must be nonnegative and sum to 1, got sum {w.sum()!r}")
        if np.any(s <= 0):
            raise ValueError("mixture standard deviations must be positive")
        object.__setattr__(self, "weights", tuple(w.tolist()))
        object.__setattr__(self, "means", tuple(m.tolist()))
        object.__setattr__(self, "sds", tuple(s.tolist()))


class MixtureTarget(Target):
    """1-D Gaussian mixture with grid-estimated smoothness constants.

    ``hessian_bound`` is ``(1 + margin) * max |V''|`` over ``grid_points``
    points on ``[min(m) - 6 max(s), max(m) + 6 max(s)]``; ``score_bound`` is
    the same for ``|V'|``. Both are estimates, not certified bounds.
    """

    dim = 1

    def __init__(self, mix: GaussianMixture1D, grid_points: int = 10_000, margin: float = 0.1):
        self.mix = mix
        self._w = np.asarray(mix.weights)
        self._m = np.asarray(mix.means)
        self._s = np.asarray(mix.sds)
        with np.errstate(divide="ignore"):
            self._logw = np.log(self._w)
        self.grid_points = int(grid_points)
        self.margin = float(margin)
        lo = self._m.min() - 6 * self._s.max()
        hi = self._m.max() + 6 * self._s.max()
        self.interval = (float(lo), float(hi))
        g = np.linspace(lo, hi, self.grid_points)
        self.hessian_bound = (1 + self.margin) * float(np.abs(self.v_second(g)).max())
        self.score_bound = (1 + self.margin) * float(np.abs(self._score(g[:, None])).max())

    def _components(self, x):
        z = (x[:, None] - self._m) / self._s
        logc = self._logw - 0.5 * z**2 - np.log(self._s) - 0.5 * math.log(2 * math.pi)
        return z, logc

    def _responsibilities(self, x):
        z, logc = self._components(x)
        r = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
        return r, -z / self._s

    def _score(self, X):
        r, a = self._responsibilities(X[:, 0])
        return (r * a).sum(axis=1)[:, None]

    def v_second(self, x) -> np.ndarray:
        """V''(x) = sum_j r_j / s_j^2 - Var_r(a) with a_j = -(x - m_j) / s_j^2."""
        r, a = self._responsibilities(np.asarray(x, dtype=float).reshape(-1))
        mean_a = (r * a).sum(axis=1)
        return (r / self._s**2).sum(axis=1) - ((r * a * a).sum(axis=1) - mean_a**2)

    def _log_density(self, X):
        _, logc = self._components(X[:, 0])
        return logsumexp(logc, axis=1)

    @property
    def has_density(self) -> bool:
        return True

    def density(self, x):
        X, single = _as_points(x, 1)
        out = np.exp(self._log_density(X))
        return float(out[0]) if single else out

    def __repr__(self):
        return f"MixtureTarget({self.mix!r})"


def gaussian_target(mean, covariance) -> GaussianTarget:
    return GaussianTarget(np.asarray(mean, dtype=float), np.asarray(covariance, dtype=float))


def mixture_target(mix: GaussianMixture1D, grid_points: int = 10_000, margin: float = 0.1) -> MixtureTarget:
    return MixtureTarget(mix, grid_points=grid_points, margin=margin)
