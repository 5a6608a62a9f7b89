"""Finite-particle vs population SVGD: coupled simulation and the chaos bound.

Each repetition evolves three systems from shared initial draws:

* a reference ensemble of ``M_ref`` particles whose empirical measure
  stands in for the population law mu_n;
* the interacting N-particle system (the practical SVGD update);
* N "independent" particles started at the same points as the interacting
  ones and moved by the reference ensemble's direction field.

The recorded quantity is the squared W2 distance between the interacting
ensemble and its coupled independent copy, which is exactly 0 at n = 0.
Repetitions are seeded by splitting the master seed and are merged by
repetition index, so the result does not depend on scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import _direction_from_terms, _checked_score, as_ensemble
from .diagnostics import wasserstein2
from .kernels import Kernel
from .rng import make_rng

# seed-stream identifiers (see rng.make_rng)
STREAM_REFERENCE = 1
STREAM_PARTICLES = 2


def lipschitz_constant(C_V: float, D: float, B: float, M: float) -> float:
    """``L = C_V (D + 1) + B M``, the Lipschitz constant of the population direction field."""
    for name, v in (("C_V", C_V), ("D", D), ("B", B), ("M", M)):
        if not v >= 0:
            raise ValueError(f"{name} must be nonnegative, got {v}")
    return C_V * (D + 1.0) + B * M


def chaos_bound(L: float, var0: float, T: float, N: int) -> float:
    """``0.5 * (sqrt(var0) e^{LT} / sqrt(N)) * (e^{2LT} - 1)``; ``inf`` on overflow."""
    if var0 == 0 or T == 0:
        return 0.0
    try:
        growth = math.exp(L * T)
        return 0.5 * (math.sqrt(var0) * growth / math.sqrt(N)) * math.expm1(2.0 * L * T)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class InitialLaw:
    """Initial distribution mu_0: isotropic Gaussian, or a fixed pool of points sampled with replacement."""

    mean: tuple[float, ...] = (0.0,)
    sd: float = 1.0
    points: np.ndarray | None = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1] if self.points is not None else len(self.mean)

    @property
    def variance(self) -> float:
        """Total variance ``E||X - EX||^2``."""
        if self.points is not None:
            return float(np.sum(np.var(self.points, axis=0)))
        return self.dim * self.sd**2

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.points is not None:
            return self.points[rng.integers(0, self.points.shape[0], size=n)]
        return np.asarray(self.mean) + self.sd * rng.standard_normal((n, self.dim))


@dataclass(frozen=True)
class CoupledRun:
    """Settings of one propagation-of-chaos sweep.

    Attributes:
        sizes: Interacting particle counts N to sweep.
        M_ref: Reference ensemble size.
        T: Horizon; the run makes ``floor(T / gamma)`` steps.
        gamma: Step size.
        repetitions: Independent repetitions R.
        seed: Master seed.
        record_every: Record cadence in steps (the final step is always recorded).
        nested_reference: Start the reference ensemble from the interacting
            particles' initial points (plus fresh draws) instead of fresh draws only.
        min_ref_ratio: Required ``M_ref / max(sizes)``.
    """

    sizes: tuple[int, ...] = (25, 50, 100, 200)
    M_ref: int = 2000
    T: float = 2.0
    gamma: float = 0.05
    repetitions: int = 32
    seed: int = 0
    record_every: int = 10
    nested_reference: bool = False
    min_ref_ratio: float = 10.0

    def __post_init__(self):
        if not self.sizes or min(self.sizes) < 1:
            raise ValueError("sizes must be a non-empty list of positive integers")
        if self.M_ref < self.min_ref_ratio * max(self.sizes):
            raise ValueError(
                f"M_ref={self.M_ref} is below {self.min_ref_ratio:g} x max(N)={max(self.sizes)}"
            )
        if self.nested_reference and self.M_ref < max(self.sizes):
            raise ValueError("nested_reference needs M_ref >= max(sizes)")
        if self.repetitions < 1 or self.record_every < 1:
            raise ValueError("repetitions and record_every must be >= 1")
        if self.gamma < 0 or self.T < 0:
            raise ValueError("gamma and T must be nonnegative")

    @property
    def n_steps(self) -> int:
        if self.gamma == 0:
            return max(1, self.record_every)
        return int(math.floor(self.T / self.gamma + 1e-9))

    @property
    def recorded_steps(self) -> list[int]:
        steps = list(range(0, self.n_steps + 1, self.record_every))
        if steps[-1] != self.n_steps:
            steps.append(self.n_steps)
        return steps


def _field(source: np.ndarray, at: np.ndarray, target, kernel: Kernel) -> np.ndarray:
    S = _checked_score(target, source)
    return _direction_from_terms(kernel.pair_terms(source, at), S)


def simulate_repetition(config: CoupledRun, target, kernel: Kernel, law: InitialLaw, rep: int, M_ref: int | None = None):
    """One repetition; returns ``(w2sq[step, size], std[step, size])`` on the recorded steps.

    ``std`` is the root total variance of the interacting ensemble.
    """
    M_ref = config.M_ref if M_ref is None else M_ref
    sizes = list(config.sizes)
    n_max = max(sizes)
    particles = law.sample(make_rng(config.seed, STREAM_PARTICLES, rep), n_max)
    if config.nested_reference:
        extra = law.sample(make_rng(config.seed, STREAM_REFERENCE, rep), M_ref - n_max)
        reference = np.concatenate([particles, extra])
    else:
        reference = law.sample(make_rng(config.seed, STREAM_REFERENCE, rep), M_ref)
    inter = {N: particles[:N].copy() for N in sizes}
    indep = {N: particles[:N].copy() for N in sizes}
    record = set(config.recorded_steps)
    rows = len(config.recorded_steps)
    w2 = np.empty((rows, len(sizes)))
    std = np.empty((rows, len(sizes)))
    r = 0
    for n in range(config.n_steps + 1):
        if n in record:
            for c, N in enumerate(sizes):
                w2[r, c] = wasserstein2(inter[N], indep[N])
                std[r, c] = math.sqrt(float(np.sum(np.var(inter[N], axis=0))))
            r += 1
        if n == config.n_steps:
            break
        g = config.gamma
        for N in sizes:
            inter[N] = inter[N] + g * _field(inter[N], inter[N], target, kernel)
            indep[N] = indep[N] + g * _field(reference, indep[N], target, kernel)
        reference = reference + g * _field(reference, reference, target, kernel)
        if not np.isfinite(reference).all():
            raise FloatingPointError(f"reference ensemble became non-finite at step {n + 1} (repetition {rep})")
    return w2, std


def _rep_job(args):
    return simulate_repetition(*args)


@dataclass
class ChaosResult:
    config: CoupledRun
    steps: list[int]
    w2sq: np.ndarray  # (R, steps, sizes)
    std: np.ndarray  # (R, steps, sizes)
    bound: np.ndarray  # (steps, sizes)

    @property
    def mean(self) -> np.ndarray:
        return self.w2sq.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        R = self.w2sq.shape[0]
        if R < 2:
            return np.zeros(self.w2sq.shape[1:])
        return self.w2sq.std(axis=0, ddof=1) / math.sqrt(R)

    def rows(self):
        """Rows ``(n, N, w2sq_mean, w2sq_stderr, bound)``."""
        mean, se = self.mean, self.stderr
        for r, n in enumerate(self.steps):
            for c, N in enumerate(self.config.sizes):
                yield n, N, float(mean[r, c]), float(se[r, c]), float(self.bound[r, c])

    def to_csv(self) -> str:
        lines = ["n,N,w2sq_mean,w2sq_stderr,bound"]
        for n, N, m, s, b in self.rows():
            lines.append(f"{n},{N},{m!r},{s!r},{b!r}")
        return "\n".join(lines) + "\n"


def run_coupled(config: CoupledRun, target, kernel: Kernel, law: InitialLaw, L: float = math.inf,
                workers: int = 1, M_ref: int | None = None) -> ChaosResult:
    """Monte-Carlo estimate of E[W2^2] between interacting and coupled independent particles.

    Args:
        config: Sweep settings.
        target: Target distribution.
        kernel: Kernel shared by all systems.
        law: Initial distribution mu_0.
        L: Lipschitz constant used for the theoretical bound column.
        workers: Processes for the repetitions (1 runs inline).
        M_ref: Override of the reference size (used by the proxy-sensitivity check).
    """
    if law.dim != target.dim or kernel.dim != target.dim:
        raise ValueError("dimension mismatch between initial law, target and kernel")
    jobs = [(config, target, kernel, law, rep, M_ref) for rep in range(config.repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_rep_job, jobs))
    else:
        out = [_rep_job(j) for j in jobs]
    steps = config.recorded_steps
    w2 = np.stack([o[0] for o in out])
    std = np.stack([o[1] for o in out])
    bound = np.array([[chaos_bound(L, law.variance, n * config.gamma, N) for N in config.sizes] for n in steps])
    return ChaosResult(config, steps, w2, std, bound)


@dataclass
class ChaosChecks:
    """Summary of a sweep at the final recorded step."""

    slope: float
    monotone: bool
    within_bound: bool
    exact_coupling: bool
    variance_growth_ok: bool
    final_means: list[float]
    final_stderr: list[float]

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(result: ChaosResult, L: float, var0: float, variance_tol: float = 0.05) -> ChaosChecks:
    sizes = np.asarray(result.config.sizes, dtype=float)
    mean, se = result.mean, result.stderr
    final_m, final_s = mean[-1], se[-1]
    if np.all(final_m > 0) and sizes.size >= 2:
        slope = float(np.polyfit(np.log(sizes), np.log(final_m), 1)[0])
    else:
        slope = float("nan")
    order = np.argsort(sizes)
    m_o, s_o = final_m[order], final_s[order]
    monotone = bool(np.all(m_o[1:] <= m_o[:-1] + 2.0 * np.sqrt(s_o[1:] ** 2 + s_o[:-1] ** 2)))
    within = bool(np.all(mean <= result.bound + 2.0 * se))
    exact = bool(np.all(result.w2sq[:, 0, :] == 0.0)) if result.steps[0] == 0 else False
    T = result.config.T
    with np.errstate(over="ignore"):
        limit = math.sqrt(var0) * math.exp(min(T * L, 700.0)) * (1 + variance_tol)
    growth_ok = bool(np.all(result.std <= limit))
    return ChaosChecks(slope, monotone, within, exact, growth_ok, final_m.tolist(), final_s.tolist())
