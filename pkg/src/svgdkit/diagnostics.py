"""Convergence diagnostics: squared KSD, grid KL, exact Wasserstein-2, rate fits, descent checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp, ndtr

from .core import (
    Trace,
    _check_dims,
    _checked_score,
    _direction_from_terms,
    _ksd_from_stein,
    as_ensemble,
    stein_matrix,
)
from .kernels import Kernel

KL_FLOOR = 1e-12
W2_ASSIGNMENT_MAX = 256


def stein_kernel(target, kernel: Kernel, x, y) -> float:
    """Stein kernel u(x, y) for a single pair of points."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if not (x.shape[0] == y.shape[0] == kernel.dim == target.dim):
        raise ValueError(f"dimension mismatch: x{x.shape}, y{y.shape}, kernel d={kernel.dim}, target d={target.dim}")
    sx = np.asarray(target.score(x), dtype=float).reshape(-1)
    sy = np.asarray(target.score(y), dtype=float).reshape(-1)
    return (
        kernel.trace_grad12(x, y)
        + float(sy @ kernel.grad1(x, y))
        + float(sx @ kernel.grad1(y, x))
        + float(sx @ sy) * kernel.eval(x, y)
    )


def ksd_squared(ensemble, target, kernel: Kernel, mode: str = "V") -> float:
    """Squared kernel Stein discrepancy of the empirical measure.

    ``mode="V"`` averages the Stein kernel over all N^2 pairs, which is the
    squared RKHS norm of the Stein-projected gradient and hence >= 0.
    ``mode="U"`` drops the diagonal; it is unbiased but may be negative.
    """
    if mode not in ("V", "U"):
        raise ValueError(f"mode must be 'V' or 'U', got {mode!r}")
    X = as_ensemble(ensemble)
    _check_dims(X, target, kernel)
    if mode == "U" and X.shape[0] < 2:
        raise ValueError("U-statistic needs at least two particles")
    S = _checked_score(target, X)
    return _ksd_from_stein(stein_matrix(kernel.pair_terms(X), S, X.shape[1]), mode)


def field_divergence(ensemble, target, kernel: Kernel, at=None) -> np.ndarray:
    """Divergence of the SVGD direction field at the query points."""
    X = as_ensemble(ensemble)
    _check_dims(X, target, kernel)
    Z = X if at is None else as_ensemble(at, X.shape[1])
    S = _checked_score(target, X)
    pt = kernel.pair_terms(X, Z)
    d = X.shape[1]
    # sum_a d/dz_a [s_{j,a} k(x_j, z) + d_{1,a} k(x_j, z)]
    score_part = -2.0 * np.einsum("jq,ja,jqa->q", pt.dphi, S, pt.diff)
    trace_part = (-2.0 * d * pt.dphi - 4.0 * pt.sqdist * pt.d2phi).sum(axis=0)
    return (score_part + trace_part) / X.shape[0]


def ksd_squared_rkhs(ensemble, target, kernel: Kernel) -> float:
    """Squared RKHS norm of the direction field, via the reproducing property.

    ``||g||_H^2 = (1/N) sum_i [ <score(X^i), g(X^i)> + div g(X^i) ]``; an
    independent route to the V-statistic that goes through the field itself.
    """
    X = as_ensemble(ensemble)
    _check_dims(X, target, kernel)
    S = _checked_score(target, X)
    g = _direction_from_terms(kernel.pair_terms(X), S)
    div = field_divergence(X, target, kernel)
    return float(np.mean(np.einsum("qa,qa->q", S, g) + div))


# -- KL on a grid -------------------------------------------------------------


def silverman_bandwidth(x: np.ndarray) -> float:
    """``0.9 min(sd, IQR / 1.34) n^(-1/5)``; falls back to sd when the IQR vanishes."""
    x = np.asarray(x, dtype=float).reshape(-1)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.size ** (-0.2)


@dataclass(frozen=True)
class KLEstimate:
    value: float
    grid_mass: float
    truncated: bool
    bandwidth: float


class GridKL:
    """Reusable 1-D KL(KDE of particles | target) estimator on a fixed grid.

    The KDE bandwidth is Silverman's rule unless ``bandwidth`` is given, and is
    never allowed below the grid spacing.
    """

    def __init__(self, target, lo: float, hi: float, points: int = 2000, bandwidth: float | None = None,
                 mass_threshold: float = 0.999):
        if target.dim != 1:
            raise ValueError("grid KL estimation is only supported for d = 1")
        if not target.has_density:
            raise ValueError("grid KL estimation needs a target with an exact density")
        if points < 100:
            raise ValueError(f"KL grid needs at least 100 points, got {points}")
        if not hi > lo:
            raise ValueError(f"empty KL grid [{lo}, {hi}]")
        if bandwidth is not None and not bandwidth > 0:
            raise ValueError(f"KDE bandwidth must be positive, got {bandwidth}")
        self.grid = np.linspace(lo, hi, int(points))
        self.dx = float(self.grid[1] - self.grid[0])
        self.lo, self.hi = float(lo), float(hi)
        self.bandwidth = bandwidth
        self.mass_threshold = mass_threshold
        logp = np.asarray(target.log_density(self.grid[:, None]), dtype=float)
        self.log_pi = logp - _log_trapezoid(logp, self.dx)
        self._buf: np.ndarray | None = None

    def _kde_bandwidth(self, x):
        bw = self.bandwidth if self.bandwidth is not None else silverman_bandwidth(x)
        return max(bw, self.dx)

    def estimate(self, particles) -> KLEstimate:
        x = np.asarray(particles, dtype=float).reshape(-1)
        bw = self._kde_bandwidth(x)
        log_q = self._log_kde(x, bw)
        log_q -= _log_trapezoid(log_q, self.dx)
        q = np.exp(log_q)
        keep = q > KL_FLOOR
        value = float(np.sum(q[keep] * (log_q[keep] - self.log_pi[keep])) * self.dx)
        mass = float(np.mean(ndtr((self.hi - x) / bw) - ndtr((self.lo - x) / bw)))
        return KLEstimate(value, mass, mass < self.mass_threshold, bw)

    def __call__(self, particles) -> tuple[float, bool]:
        est = self.estimate(particles)
        return est.value, est.truncated

    def _log_kde(self, x, bw):
        n = x.size
        if self._buf is None or self._buf.shape != (self.grid.size, n):
            self._buf = np.empty((self.grid.size, n))
        buf = self._buf
        inv = 1.0 / bw
        np.subtract.outer(self.grid * inv, x * inv, out=buf)
        np.square(buf, out=buf)
        np.multiply(buf, -0.5, out=buf)
        np.exp(buf, out=buf)
        dens = buf.sum(axis=1)
        if np.all(dens > 0):
            return np.log(dens)
        # particles far from the grid: redo in log space so nothing underflows to zero
        z = np.subtract.outer(self.grid * inv, x * inv)
        return logsumexp(-0.5 * z * z, axis=1)


def _log_trapezoid(logf: np.ndarray, dx: float) -> float:
    w = np.full(logf.shape, math.log(dx))
    w[0] = w[-1] = math.log(dx / 2)
    return float(logsumexp(logf + w))


def kl_estimate_1d(ensemble, target, grid=(-10.0, 10.0, 2000), kde_bandwidth: float | None = None) -> KLEstimate:
    """KL(q_hat | pi) with q_hat a Gaussian KDE of the particles, both normalised on the grid.

    Returns a :class:`KLEstimate`; ``truncated`` is set when less than 99.9% of
    the KDE mass falls inside the grid.
    """
    X = as_ensemble(ensemble)
    if X.shape[1] != 1:
        raise ValueError("kl_estimate_1d only supports one-dimensional ensembles")
    lo, hi, m = grid
    return GridKL(target, lo, hi, int(m), kde_bandwidth).estimate(X[:, 0])


# -- Wasserstein-2 ------------------------------------------------------------


def _paired(a, b):
    A, B = as_ensemble(a), as_ensemble(b)
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"ensembles must have equal size, got {A.shape[0]} and {B.shape[0]}; resample first")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return A, B


def wasserstein2_1d(a, b) -> float:
    """Squared W2 between equal-size 1-D empirical measures (sorted coupling)."""
    A, B = _paired(a, b)
    if A.shape[1] != 1:
        raise ValueError("wasserstein2_1d needs d = 1; use wasserstein2_small for d > 1")
    return float(np.mean((np.sort(A[:, 0]) - np.sort(B[:, 0])) ** 2))


def wasserstein2_small(a, b) -> float:
    """Squared W2 between equal-size empirical measures by optimal assignment (N <= 256)."""
    A, B = _paired(a, b)
    n = A.shape[0]
    if n > W2_ASSIGNMENT_MAX:
        raise ValueError(
            f"N={n} exceeds {W2_ASSIGNMENT_MAX} for exact assignment; use wasserstein2_1d in 1-D or subsample"
        )
    cost = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / n)


def wasserstein2(a, b) -> float:
    A, _ = _paired(a, b)
    return wasserstein2_1d(a, b) if A.shape[1] == 1 else wasserstein2_small(a, b)


# -- rate and descent checks ---------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    window: tuple[int, int]

    def as_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def fit_rate(trace: Trace, window: tuple[int, int] | None = None) -> RateFit:
    """Least-squares slope of ``log avg_ksd2`` against ``log iter`` over an inclusive window."""
    iters = np.asarray(trace.iter)
    if len(iters) == 0:
        raise ValueError("cannot fit a rate to an empty trace")
    lo, hi = window if window is not None else (int(iters[0]), int(iters[-1]))
    if lo < iters[0] or hi > iters[-1] or hi < lo:
        raise ValueError(f"window [{lo}, {hi}] is outside the trace range [{iters[0]}, {iters[-1]}]")
    sel = (iters >= lo) & (iters <= hi)
    if sel.sum() < 10:
        raise ValueError("rate window must span at least 10 iterations")
    y = np.asarray(trace.avg_ksd2)[sel]
    if not np.all(y > 0):
        raise ValueError("running-average KSD^2 must be positive inside the rate window")
    lx, ly = np.log(iters[sel].astype(float)), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, (int(lo), int(hi)))


@dataclass(frozen=True)
class DescentReport:
    violations: int
    worst_margin: float
    tolerance: float
    steps: int

    def as_dict(self) -> dict:
        return asdict(self)


def verify_descent(trace: Trace, plan, kl_series=None, tolerance: float = 0.02) -> DescentReport:
    """Count steps where ``KL_{n+1} - KL_n > -c_gamma KSD^2_n + tolerance``.

    ``worst_margin`` is the largest ``(KL_{n+1} - KL_n) + c_gamma KSD^2_n``;
    a value above ``tolerance`` means at least one violation.
    """
    kl = np.asarray(trace.kl_est if kl_series is None else kl_series, dtype=float)
    ksd = np.asarray(trace.ksd2, dtype=float)
    if kl.shape != ksd.shape:
        raise ValueError(f"KL series of length {kl.shape} is not aligned with a trace of length {ksd.shape}")
    if kl.size < 2:
        return DescentReport(0, float("nan"), tolerance, 0)
    lhs = np.diff(kl)
    rhs = -plan.c_gamma * ksd[:-1]
    margin = lhs - rhs
    if np.isnan(margin).any():
        raise ValueError("KL series contains NaN; enable KL estimation for descent checks")
    return DescentReport(int(np.sum(margin > tolerance)), float(margin.max()), tolerance, int(margin.size))


def windowed_means(values, width: int = 50) -> np.ndarray:
    """Means over consecutive, non-overlapping windows (a trailing partial window is dropped)."""
    v = np.asarray(values, dtype=float)
    k = v.size // width
    return v[: k * width].reshape(k, width).mean(axis=1)
