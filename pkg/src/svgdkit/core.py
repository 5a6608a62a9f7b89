"""Finite-particle SVGD: direction field, synchronous update, step-size planner, run loop.

An ensemble is a plain ``(N, d)`` float array. The direction stored for
particle i is

    g(X^i) = (1/N) sum_j [ score(X^j) k(X^j, X^i) + grad_1 k(X^j, X^i) ]

and one step moves every particle to ``X^i + gamma * g(X^i)`` using
directions computed from the pre-step ensemble.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel, PairTerms, median_bandwidth

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "ksd2", "avg_ksd2", "kl_est", "max_dir_norm", "time_ms")


class NonFiniteError(FloatingPointError):
    """A score value or particle coordinate became NaN/inf."""

    def __init__(self, message: str, index: int | None = None, iteration: int | None = None):
        super().__init__(message)
        self.index = index
        self.iteration = iteration


def as_ensemble(points, dim: int | None = None) -> np.ndarray:
    """Validate and copy ``points`` into a float ``(N, d)`` array.

    A 1-D input is read as N scalar particles.
    """
    X = np.array(points, dtype=float, copy=True)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError(f"ensemble must be a non-empty (N, d) array, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected d={dim}, ensemble has d={X.shape[1]}")
    bad = np.flatnonzero(~np.isfinite(X).all(axis=1))
    if bad.size:
        raise NonFiniteError(f"particle {bad[0]} has non-finite coordinates", index=int(bad[0]))
    return X


def _checked_score(target, X: np.ndarray) -> np.ndarray:
    S = np.asarray(target.score(X), dtype=float).reshape(X.shape)
    bad = np.flatnonzero(~np.isfinite(S).all(axis=1))
    if bad.size:
        raise NonFiniteError(f"score is non-finite at particle {bad[0]}", index=int(bad[0]))
    return S


def _check_dims(X, target, kernel):
    d = X.shape[1]
    if target.dim != d or kernel.dim != d:
        raise ValueError(f"dimension mismatch: ensemble d={d}, target d={target.dim}, kernel d={kernel.dim}")


def _direction_from_terms(pt: PairTerms, S: np.ndarray) -> np.ndarray:
    n = pt.phi.shape[0]
    drift = pt.phi.T @ S
    repulsion = 2.0 * np.einsum("jq,jqa->qa", pt.dphi, pt.diff)
    return (drift + repulsion) / n


def stein_matrix(pt: PairTerms, S: np.ndarray, dim: int) -> np.ndarray:
    """Stein kernel ``u(X^i, X^j)`` for all pairs of a self-interaction ``pt``.

    ``u = tr d1 d2 k + <s_j, grad_1 k(x_i, x_j)> + <s_i, grad_1 k(x_j, x_i)> + <s_i, s_j> k``
    with ``grad_1 k(x_i, x_j) = 2 phi' (x_i - x_j)``.
    """
    trace12 = -2.0 * dim * pt.dphi - 4.0 * pt.sqdist * pt.d2phi
    cross = 2.0 * pt.dphi * np.einsum("ija,ija->ij", S[None, :, :] - S[:, None, :], pt.diff)
    return trace12 + cross + pt.phi * (S @ S.T)


def svgd_direction(ensemble, target, kernel: Kernel, at=None) -> np.ndarray:
    """Empirical SVGD direction field of ``ensemble``.

    Args:
        ensemble: ``(N, d)`` particles defining the empirical measure.
        target: Target with a vectorised ``score``.
        kernel: Kernel on R^d.
        at: Optional ``(Q, d)`` query points; defaults to the particles themselves.

    Returns:
        ``(Q, d)`` array; row q is ``g(at_q)``.
    """
    X = as_ensemble(ensemble)
    _check_dims(X, target, kernel)
    Z = X if at is None else as_ensemble(at, X.shape[1])
    S = _checked_score(target, X)
    return _direction_from_terms(kernel.pair_terms(X, Z), S)


def svgd_step(ensemble, target, kernel: Kernel, gamma: float) -> np.ndarray:
    """One synchronous update ``X + gamma * g(X)``; the input is not modified."""
    if not gamma >= 0:
        raise ValueError(f"step size must be nonnegative, got {gamma}")
    X = as_ensemble(ensemble)
    return X + gamma * svgd_direction(X, target, kernel)


# -- step-size planning -------------------------------------------------------


@dataclass(frozen=True)
class StepSizePlan:
    alpha: float
    B: float
    M: float
    C: float
    gamma: float
    c_gamma: float

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "B": self.B, "M": self.M, "C": self.C,
                "gamma": self.gamma, "c_gamma": self.c_gamma}


def descent_constant(gamma: float, alpha: float, B: float, M: float) -> float:
    return gamma * (1.0 - gamma * (alpha**2 + M) * B**2 / 2.0)


def step_size_bounds(alpha: float, B: float, M: float, C: float) -> tuple[float, float]:
    """The two upper bounds on gamma: diffeomorphism and positive descent constant."""
    return (alpha - 1.0) / (alpha * B * math.sqrt(C)), 2.0 / ((alpha**2 + M) * B**2)


def plan_step_size(alpha: float, B: float, M: float, C: float, safety: float = 0.5) -> StepSizePlan:
    """Largest admissible step size scaled by ``safety``, with its descent constant.

    Raises:
        ValueError: invalid constants, or a nonpositive descent constant.
    """
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    if not (B > 0 and C > 0 and M >= 0):
        raise ValueError(f"need B > 0, C > 0, M >= 0; got B={B}, C={C}, M={M}")
    if not 0 < safety <= 1:
        raise ValueError(f"safety must lie in (0, 1], got {safety}")
    gamma = safety * min(step_size_bounds(alpha, B, M, C))
    c_gamma = descent_constant(gamma, alpha, B, M)
    if not c_gamma > 0:
        raise ValueError(f"descent constant c_gamma={c_gamma!r} is not positive for gamma={gamma!r}; lower safety")
    return StepSizePlan(float(alpha), float(B), float(M), float(C), float(gamma), float(c_gamma))


# -- run loop -----------------------------------------------------------------


@dataclass
class SvgdConfig:
    """Run settings.

    ``gamma`` is used when ``plan`` is None. ``check_every`` sets the cadence
    of the pointwise RKHS bound checks (0 disables them). ``adaptive_bandwidth``
    re-selects the median bandwidth at every iteration, which leaves the plan's
    constants only heuristically valid.
    """

    n_max: int
    plan: StepSizePlan | None = None
    gamma: float | None = None
    seed: int = 0
    check_every: int = 10
    ksd_mode: str = "V"
    adaptive_bandwidth: bool = False
    record_timing: bool = False
    check_tol: float = 1e-9

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError("n_max must be nonnegative")
        if self.step_size <= 0 and self.n_max > 0:
            raise ValueError("step size must be positive")
        if self.ksd_mode not in ("V", "U"):
            raise ValueError(f"ksd_mode must be 'V' or 'U', got {self.ksd_mode!r}")

    @property
    def step_size(self) -> float:
        if self.plan is not None:
            return self.plan.gamma
        if self.gamma is None:
            raise ValueError("either a StepSizePlan or a fixed gamma is required")
        return float(self.gamma)


@dataclass
class InvariantLog:
    checks: int = 0
    direction_violations: int = 0
    jacobian_violations: int = 0
    worst_direction_ratio: float = 0.0
    worst_jacobian_ratio: float = 0.0
    c_exceeded: int = 0
    first_c_exceeded: int | None = None
    kl_truncated: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Trace:
    """Column-oriented per-iteration record; row n describes the ensemble after n steps."""

    iter: np.ndarray
    ksd2: np.ndarray
    avg_ksd2: np.ndarray
    kl_est: np.ndarray
    max_dir_norm: np.ndarray
    time_ms: np.ndarray
    initial_ksd2: float = float("nan")
    initial_kl: float = float("nan")
    invariants: InvariantLog = field(default_factory=InvariantLog)

    @classmethod
    def empty(cls, n: int) -> "Trace":
        nan = np.full(n, np.nan)
        return cls(np.arange(1, n + 1), nan.copy(), nan.copy(), nan.copy(), nan.copy(), nan.copy())

    @classmethod
    def from_arrays(cls, ksd2, kl_est=None, max_dir_norm=None) -> "Trace":
        """Build a trace from a KSD^2 series (used for synthetic traces)."""
        ksd2 = np.asarray(ksd2, dtype=float)
        tr = cls.empty(ksd2.shape[0])
        tr.ksd2[:] = ksd2
        tr.avg_ksd2[:] = np.cumsum(ksd2) / tr.iter
        if kl_est is not None:
            tr.kl_est[:] = kl_est
        if max_dir_norm is not None:
            tr.max_dir_norm[:] = max_dir_norm
        return tr

    def __len__(self) -> int:
        return int(self.iter.shape[0])

    def truncate(self, n: int) -> None:
        for name in TRACE_COLUMNS:
            setattr(self, name, getattr(self, name)[:n])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(self.iter, self.ksd2, self.avg_ksd2, self.kl_est, self.max_dir_norm, self.time_ms):
            w.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def _ksd_from_stein(U: np.ndarray, mode: str) -> float:
    n = U.shape[0]
    if mode == "V":
        return float(U.sum()) / n**2
    if n < 2:
        raise ValueError("U-statistic needs at least two particles")
    return float(U.sum() - np.trace(U)) / (n * (n - 1))


def _jacobian_hs_norms(pt: PairTerms, S: np.ndarray) -> np.ndarray:
    """``||J g(X^i)||_HS`` for all i, J g_a / dz_b = (1/N) sum_j [s_{j,a} d2_b k + d1_a d2_b k]."""
    n, _, d = pt.diff.shape
    # d/dz_b k(x_j, z) = -2 phi' (x_j - z)_b ;  d1_a d2_b k = -2 phi' delta_ab - 4 phi'' r_a r_b
    grad2 = -2.0 * pt.dphi[..., None] * pt.diff
    J = np.einsum("ja,jqb->qab", S, grad2)
    J -= 2.0 * np.einsum("jq->q", pt.dphi)[:, None, None] * np.eye(d)[None]
    J -= 4.0 * np.einsum("jq,jqa,jqb->qab", pt.d2phi, pt.diff, pt.diff)
    J /= n
    return np.sqrt(np.einsum("qab,qab->q", J, J))


def run(config: SvgdConfig, ensemble0, target, kernel: Kernel, kl_estimator=None):
    """Iterate the SVGD update and record diagnostics.

    Args:
        config: Run settings.
        ensemble0: Initial ``(N, d)`` particles.
        target: Target distribution.
        kernel: Kernel; kept fixed unless ``config.adaptive_bandwidth``.
        kl_estimator: Optional callable ``particles -> (kl, truncated)``.

    Returns:
        ``(trace, final_ensemble)``.

    Raises:
        NonFiniteError: a particle or score became non-finite; ``.iteration`` is set.
    """
    X = as_ensemble(ensemble0)
    _check_dims(X, target, kernel)
    n_max = config.n_max
    trace = Trace.empty(n_max)
    inv = trace.invariants
    gamma = config.step_size if n_max > 0 else 0.0
    C = config.plan.C if config.plan is not None else math.inf

    def analyse(X, kernel, iteration):
        try:
            S = _checked_score(target, X)
        except NonFiniteError as err:
            err.iteration = iteration
            raise
        pt = kernel.pair_terms(X)
        g = _direction_from_terms(pt, S)
        U = stein_matrix(pt, S, X.shape[1])
        ksd_v = _ksd_from_stein(U, "V")
        return pt, S, g, U, ksd_v

    # overflow is caught explicitly below and reported as NonFiniteError
    with np.errstate(over="ignore", invalid="ignore"):
        pt, S, g, U, ksd_v = analyse(X, kernel, 0)
        trace.initial_ksd2 = _ksd_from_stein(U, config.ksd_mode)
        if kl_estimator is not None:
            trace.initial_kl, _ = kl_estimator(X)

        t0 = time.perf_counter()
        running = 0.0
        for n in range(1, n_max + 1):
            X = X + gamma * g
            if not np.isfinite(X).all():
                bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
                raise NonFiniteError(f"particle {bad} became non-finite at iteration {n}", index=bad, iteration=n)
            if config.adaptive_bandwidth and kernel.family == "rbf":
                kernel = kernel.with_bandwidth(median_bandwidth(X))
            pt, S, g, U, ksd_v = analyse(X, kernel, n)
            ksd = ksd_v if config.ksd_mode == "V" else _ksd_from_stein(U, "U")
            running += ksd
            i = n - 1
            trace.ksd2[i] = ksd
            trace.avg_ksd2[i] = running / n
            dir_norms = np.sqrt(np.einsum("qa,qa->q", g, g))
            trace.max_dir_norm[i] = float(dir_norms.max())
            if kl_estimator is not None:
                kl, truncated = kl_estimator(X)
                trace.kl_est[i] = kl
                inv.kl_truncated += int(truncated)
            if ksd_v >= C:
                inv.c_exceeded += 1
                if inv.first_c_exceeded is None:
                    inv.first_c_exceeded = n
                    logger.warning("KSD^2=%.4g exceeds the planning constant C=%.4g at iteration %d", ksd_v, C, n)
            if config.check_every and n % config.check_every == 0:
                _check_rkhs_bounds(pt, S, dir_norms, ksd_v, kernel, config.check_tol, inv)
            if config.record_timing:
                trace.time_ms[i] = (time.perf_counter() - t0) * 1e3
        return trace, X


def _check_rkhs_bounds(pt, S, dir_norms, ksd_v, kernel, tol, inv: InvariantLog) -> None:
    B = kernel.bound()
    limit = B * math.sqrt(max(ksd_v, 0.0))
    inv.checks += 1
    worst = float(dir_norms.max())
    if worst > limit + tol:
        inv.direction_violations += 1
    jac = float(_jacobian_hs_norms(pt, S).max())
    if jac > limit + tol:
        inv.jacobian_violations += 1
    if limit > 0:
        inv.worst_direction_ratio = max(inv.worst_direction_ratio, worst / limit)
        inv.worst_jacobian_ratio = max(inv.worst_jacobian_ratio, jac / limit)


def rkhs_bound_gap(ensemble, target, kernel: Kernel) -> tuple[float, float, float]:
    """Return ``(max ||g||, max ||J g||_HS, B sqrt(KSD^2_V))`` for one ensemble."""
    X = as_ensemble(ensemble)
    _check_dims(X, target, kernel)
    S = _checked_score(target, X)
    pt = kernel.pair_terms(X)
    g = _direction_from_terms(pt, S)
    ksd_v = _ksd_from_stein(stein_matrix(pt, S, X.shape[1]), "V")
    norms = np.sqrt(np.einsum("qa,qa->q", g, g))
    return float(norms.max()), float(_jacobian_hs_norms(pt, S).max()), kernel.bound() * math.sqrt(max(ksd_v, 0.0))
