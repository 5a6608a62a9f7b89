"""Radial positive-definite kernels with the derivatives SVGD needs.

Both families are written through their radial profile ``phi(s)`` of the
squared distance ``s = ||x - y||^2``, so that

    k(x, y)                 = phi(s)
    grad_x k(x, y)          = 2 phi'(s) (x - y)
    d^2 k / dx_a dy_b       = -2 phi'(s) delta_ab - 4 phi''(s) (x - y)_a (x - y)_b
    sum_a d^2 k / dx_a dy_a = -2 d phi'(s) - 4 s phi''(s)

All derivatives are analytic. Finite differences only appear in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

FAMILIES = ("rbf", "imq")


class PairTerms(NamedTuple):
    """Pairwise quantities between a source set ``X`` (rows j) and queries ``Z`` (cols q)."""

    diff: np.ndarray  # (N, Q, d), X_j - Z_q
    sqdist: np.ndarray  # (N, Q)
    phi: np.ndarray  # k(X_j, Z_q)
    dphi: np.ndarray  # phi'(s)
    d2phi: np.ndarray  # phi''(s)


@dataclass(frozen=True)
class Kernel:
    """A radial kernel on R^d.

    Attributes:
        family: ``"rbf"`` (Gaussian) or ``"imq"`` (inverse multi-quadric).
        dim: Dimension of the inputs.
        bandwidth: RBF length scale ``h`` in ``exp(-||x-y||^2 / (2 h^2))``.
        offset: IMQ offset ``c`` in ``(c^2 + ||x-y||^2)^beta``.
        exponent: IMQ exponent ``beta`` in ``[-1, 0)``.
    """

    family: str = "rbf"
    dim: int = 1
    bandwidth: float = 1.0
    offset: float = 1.0
    exponent: float = -0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"kernel dimension must be a positive integer, got {self.dim}")
        if self.family == "rbf" and not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError(f"RBF bandwidth must be positive and finite, got {self.bandwidth}")
        if self.family == "imq":
            if not self.offset > 0:
                raise ValueError(f"IMQ offset must be positive, got {self.offset}")
            if not -1.0 <= self.exponent < 0.0:
                raise ValueError(f"IMQ exponent must lie in [-1, 0), got {self.exponent}")

    # -- radial profile -------------------------------------------------

    def profile(self, s):
        """Return ``(phi, phi', phi'')`` at squared distance(s) ``s``."""
        s = np.asarray(s, dtype=float)
        if self.family == "rbf":
            inv = 1.0 / (2.0 * self.bandwidth**2)
            phi = np.exp(-s * inv)
            return phi, -inv * phi, inv * inv * phi
        beta = self.exponent
        base = self.offset**2 + s
        phi = base**beta
        dphi = beta * phi / base
        d2phi = (beta - 1.0) * dphi / base
        return phi, dphi, d2phi

    # -- single-pair API -----------------------------------------------

    def _pair(self, x, y):
        x = np.asarray(x, dtype=float).reshape(-1)
        y = np.asarray(y, dtype=float).reshape(-1)
        if x.shape[0] != self.dim or y.shape[0] != self.dim:
            raise ValueError(
                f"dimension mismatch: kernel has d={self.dim}, got points of size {x.shape[0]} and {y.shape[0]}"
            )
        r = x - y
        return r, float(r @ r)

    def eval(self, x, y) -> float:
        """k(x, y)."""
        _, s = self._pair(x, y)
        return float(self.profile(s)[0])

    def grad1(self, x, y) -> np.ndarray:
        """Gradient of k with respect to its first argument, shape ``(d,)``."""
        r, s = self._pair(x, y)
        return 2.0 * float(self.profile(s)[1]) * r

    def grad2(self, x, y) -> np.ndarray:
        """Gradient of k with respect to its second argument."""
        return -self.grad1(x, y)

    def grad12(self, x, y) -> np.ndarray:
        """Mixed second derivatives ``d^2 k / dx_a dy_b`` as a ``(d, d)`` matrix."""
        r, s = self._pair(x, y)
        _, dphi, d2phi = self.profile(s)
        return -2.0 * float(dphi) * np.eye(self.dim) - 4.0 * float(d2phi) * np.outer(r, r)

    def trace_grad12(self, x, y) -> float:
        """``sum_a d^2 k / dx_a dy_a``."""
        _, s = self._pair(x, y)
        _, dphi, d2phi = self.profile(s)
        return float(-2.0 * self.dim * dphi - 4.0 * s * d2phi)

    # -- vectorised ------------------------------------------------------

    def pair_terms(self, X: np.ndarray, Z: np.ndarray | None = None) -> PairTerms:
        """Pairwise terms between rows of ``X`` and rows of ``Z`` (defaults to ``X``)."""
        Z = X if Z is None else Z
        diff = X[:, None, :] - Z[None, :, :]
        sqdist = np.einsum("jqa,jqa->jq", diff, diff) if self.dim > 1 else diff[..., 0] ** 2
        phi, dphi, d2phi = self.profile(sqdist)
        return PairTerms(diff, sqdist, phi, dphi, d2phi)

    def gram(self, X: np.ndarray, Z: np.ndarray | None = None) -> np.ndarray:
        return self.pair_terms(X, Z).phi

    # -- constants -------------------------------------------------------

    def bound(self) -> float:
        """Constant B with ``sqrt(k(x,x)) <= B`` and ``sqrt(tr d1 d2 k(x,x)) <= B``."""
        return kernel_bound(self)

    def lipschitz(self) -> float:
        """Constant D such that k and grad k are D-Lipschitz in each argument.

        ``D = max(sup ||grad k||, sup ||Hess k||_op)``, the two suprema taken
        over the radial profile. RBF uses closed forms; IMQ a dense scan in
        ``r = ||x - y||`` (both suprema are attained at finite r).
        """
        if self.family == "rbf":
            h = self.bandwidth
            return max(math.exp(-0.5) / h, 1.0 / h**2)
        c = self.offset
        r = np.linspace(0.0, 20.0 * c, 200_001)
        s = r * r
        _, dphi, d2phi = self.profile(s)
        grad_norm = np.abs(2.0 * dphi * r)
        # Hessian eigenvalues of a radial function: 2 phi' (multiplicity d-1) and 2 phi' + 4 s phi''
        hess = np.maximum(np.abs(2.0 * dphi), np.abs(2.0 * dphi + 4.0 * s * d2phi))
        return float(max(grad_norm.max(), hess.max()))

    def with_bandwidth(self, h: float) -> "Kernel":
        return Kernel(self.family, self.dim, float(h), self.offset, self.exponent)


def rbf(bandwidth: float, dim: int = 1) -> Kernel:
    return Kernel("rbf", dim, bandwidth=float(bandwidth))


def imq(offset: float = 1.0, exponent: float = -0.5, dim: int = 1) -> Kernel:
    return Kernel("imq", dim, offset=float(offset), exponent=float(exponent))


def kernel_bound(kernel: Kernel) -> float:
    """Bound B on the RKHS norms of ``k(x, .)`` and ``grad_x k(x, .)``.

    For radial kernels both norms are constant in x:
    ``||k(x,.)||^2 = phi(0)`` and ``||grad_x k(x,.)||^2 = -2 d phi'(0)``.
    """
    d = kernel.dim
    if kernel.family == "rbf":
        return max(1.0, math.sqrt(d) / kernel.bandwidth)
    c2, beta = kernel.offset**2, kernel.exponent
    # same arithmetic as eval/trace_grad12 at s = 0, so the bound holds in floating point too
    return max(math.sqrt(c2**beta), math.sqrt(-2.0 * beta * d * c2 ** (beta - 1.0)))


def median_bandwidth(points) -> float:
    """Median-heuristic RBF bandwidth.

    ``h^2 = med / (2 log(N + 1))`` where ``med`` is the lower median of the
    squared distances over the ``N (N - 1) / 2`` distinct pairs.

    Raises:
        ValueError: fewer than two points, or a zero median (degenerate ensemble).
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 2:
        raise ValueError("median bandwidth needs at least two points")
    iu, ju = np.triu_indices(n, k=1)
    sq = np.zeros(iu.shape[0])
    for a in range(X.shape[1]):
        col = X[:, a]
        sq += (col[iu] - col[ju]) ** 2
    k = (sq.shape[0] - 1) // 2
    med = float(np.partition(sq, k)[k])
    if not med > 0.0:
        raise ValueError("median squared pairwise distance is zero (degenerate ensemble); bandwidth would be 0")
    return math.sqrt(med / (2.0 * math.log(n + 1.0)))
