"""Deterministic invariant suite behind ``svgdkit selftest``.

Every check uses fixed seeds and prints errors with fixed precision, so two
runs produce identical output bytes.
"""

from __future__ import annotations

import math
from typing import NamedTuple, TextIO

import numpy as np

from .core import rkhs_bound_gap, svgd_step
from .diagnostics import ksd_squared, ksd_squared_rkhs, stein_kernel, wasserstein2_1d, wasserstein2_small
from .kernels import Kernel
from .rng import make_rng
from .targets import GaussianMixture1D, gaussian_target, mixture_target

SELFTEST_SEED = 20240101
FD_STEP = 1e-5


class CheckResult(NamedTuple):
    name: str
    passed: bool
    worst: float
    tolerance: float


def default_kernels() -> list[Kernel]:
    return [
        Kernel("rbf", 1, bandwidth=0.7),
        Kernel("rbf", 3, bandwidth=1.3),
        Kernel("imq", 2, offset=1.0, exponent=-0.5),
        Kernel("imq", 3, offset=0.5, exponent=-1.0),
    ]


def _rel(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))


def _fd_grad(f, x, h=FD_STEP):
    g = np.empty_like(x)
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = h
        g[a] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def check_kernel_derivatives(kernels, rng) -> list[CheckResult]:
    worst_g1, worst_tr = 0.0, 0.0
    for k in kernels:
        for _ in range(25):
            x, y = rng.standard_normal(k.dim), rng.standard_normal(k.dim)
            worst_g1 = max(worst_g1, _rel(k.grad1(x, y), _fd_grad(lambda z: k.eval(z, y), x)))
            # d1_a d2_a k by central differences of grad1 in its second argument
            fd = 0.0
            for a in range(k.dim):
                e = np.zeros(k.dim)
                e[a] = FD_STEP
                fd += (k.grad1(x, y + e)[a] - k.grad1(x, y - e)[a]) / (2 * FD_STEP)
            worst_tr = max(worst_tr, _rel(k.trace_grad12(x, y), fd))
    return [
        CheckResult("kernel grad1 vs finite differences", worst_g1 <= 1e-5, worst_g1, 1e-5),
        CheckResult("kernel trace_grad12 vs finite differences", worst_tr <= 1e-5, worst_tr, 1e-5),
    ]


def _targets():
    return [
        gaussian_target([0.5, -1.0], [[2.0, 0.3], [0.3, 0.5]]),
        mixture_target(GaussianMixture1D((1 / 3, 2 / 3), (-2.0, 2.0), (1.0, 1.0)), grid_points=2000),
    ]


def check_target_scores(rng) -> CheckResult:
    worst = 0.0
    for t in _targets():
        for _ in range(25):
            x = 2.0 * rng.standard_normal(t.dim)
            worst = max(worst, _rel(t.score(x), _fd_grad(lambda z: float(t.log_density(z)), x)))
    return CheckResult("target score vs finite differences", worst <= 1e-4, worst, 1e-4)


def _target_for(dim: int):
    return gaussian_target(np.linspace(-0.5, 0.5, dim), np.eye(dim) * 1.5)


def check_ksd(kernels, rng) -> list[CheckResult]:
    worst_loop, worst_rkhs, worst_bound = 0.0, 0.0, -math.inf
    for k in kernels:
        t = _target_for(k.dim)
        for n in (1, 5, 12):
            X = rng.standard_normal((n, k.dim))
            v = ksd_squared(X, t, k, "V")
            loop = sum(stein_kernel(t, k, X[i], X[j]) for i in range(n) for j in range(n)) / n**2
            worst_loop = max(worst_loop, abs(v - loop) / max(abs(loop), 1e-300))
            worst_rkhs = max(worst_rkhs, abs(v - ksd_squared_rkhs(X, t, k)) / max(abs(v), 1e-300))
            g_max, _, limit = rkhs_bound_gap(X, t, k)
            worst_bound = max(worst_bound, g_max - limit)
    return [
        CheckResult("KSD^2 V-statistic vs double loop", worst_loop <= 1e-10, worst_loop, 1e-10),
        CheckResult("KSD^2 V-statistic vs RKHS-norm route", worst_rkhs <= 1e-10, worst_rkhs, 1e-10),
        CheckResult("max ||g|| <= B sqrt(KSD^2)", worst_bound <= 1e-9, worst_bound, 1e-9),
    ]


def check_wasserstein(rng) -> list[CheckResult]:
    a, b, c = (rng.standard_normal((40, 1)) + s for s in (0.0, 0.5, -1.0))
    ident = max(wasserstein2_1d(a, a), wasserstein2_1d(a, rng.permutation(a)))
    sym = abs(wasserstein2_1d(a, b) - wasserstein2_1d(b, a))
    w = lambda p, q: math.sqrt(wasserstein2_1d(p, q))  # noqa: E731
    tri = w(a, c) - (w(a, b) + w(b, c))
    agree = abs(wasserstein2_1d(a, b) - wasserstein2_small(a, b))
    shift = abs(wasserstein2_1d(a, a + 0.3) - 0.09)
    return [
        CheckResult("W2 identity of indiscernibles", ident == 0.0, ident, 0.0),
        CheckResult("W2 symmetry", sym <= 1e-14, sym, 1e-14),
        CheckResult("W2 triangle inequality", tri <= 1e-12, tri, 1e-12),
        CheckResult("W2 sorted coupling vs optimal assignment", agree <= 1e-12, agree, 1e-12),
        CheckResult("W2 of a translate equals shift^2", shift <= 1e-12, shift, 1e-12),
    ]


def check_fixed_point(kernels) -> CheckResult:
    worst = 0.0
    for k in kernels:
        t = _target_for(k.dim)
        x0 = t.mean[None, :]
        for gamma in (0.01, 0.1, 1.0):
            worst = max(worst, float(np.max(np.abs(svgd_step(x0, t, k, gamma) - x0))))
    return CheckResult("single particle at Gaussian mode is fixed", worst <= 1e-15, worst, 1e-15)


def run_selftest(kernels: list | None = None) -> list[CheckResult]:
    """Run every check; ``kernels`` replaces the default kernel set (used to inject faults)."""
    kernels = default_kernels() if kernels is None else list(kernels)
    rng = make_rng(SELFTEST_SEED)
    rows = check_kernel_derivatives(kernels, rng)
    rows.append(check_target_scores(rng))
    rows += check_ksd(kernels, rng)
    rows += check_wasserstein(rng)
    rows.append(check_fixed_point(kernels))
    return rows


def print_table(rows: list[CheckResult], stream: TextIO) -> None:
    width = max(len(r.name) for r in rows)
    stream.write(f"{'check':<{width}}  result  {'worst':>10}  {'tol':>8}\n")
    for r in rows:
        stream.write(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.worst:>10.3e}  {r.tolerance:>8.1e}\n")
    failed = sum(not r.passed for r in rows)
    stream.write(f"{len(rows) - failed}/{len(rows)} checks passed\n")
