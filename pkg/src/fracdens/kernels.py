"""Compactly supported polynomial kernels of prescribed order.

The order-M Legendre kernel is the L2 projection of the point evaluation at
0 onto polynomials of degree <= M on [-1, 1]:

    K(u) = sum_{m=0}^{M} (2m+1)/2 * P_m(0) * P_m(u),   |u| <= 1,

which reproduces polynomials of degree <= M, i.e. int u^j K(u) du = delta_{j0}
for j <= M.  Values for M >= 2 are partly negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L


@dataclass(frozen=True, eq=False)
class Kernel1D:
    """Polynomial kernel on [-1, 1] stored as a Legendre series."""

    order: int
    coeffs: np.ndarray

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = L.legval(u, self.coeffs)
        return np.where(np.abs(u) <= 1.0, out, 0.0)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def sup_norm(self) -> float:
        """Exact sup of |K| on [-1, 1] from the critical points."""
        crit = L.legroots(L.legder(self.coeffs)) if self.degree >= 1 else np.array([])
        crit = np.real(crit[np.abs(np.imag(crit)) < 1e-12]) if crit.size else crit
        crit = crit[np.abs(crit) <= 1.0]
        pts = np.concatenate([crit, [-1.0, 0.0, 1.0]])
        return float(np.max(np.abs(L.legval(pts, self.coeffs))))

    def combine(self, other: "Kernel1D", a: float) -> "Kernel1D":
        """The kernel ``a*self + (1-a)*other``."""
        n = max(len(self.coeffs), len(other.coeffs))
        c1 = np.pad(self.coeffs, (0, n - len(self.coeffs)))
        c2 = np.pad(other.coeffs, (0, n - len(other.coeffs)))
        return Kernel1D(min(self.order, other.order), a * c1 + (1.0 - a) * c2)


def legendre_kernel(M: int) -> Kernel1D:
    if M < 0 or int(M) != M:
        raise ValueError("order M must be a non-negative integer")
    M = int(M)
    p0 = L.legval(0.0, np.eye(M + 1))  # P_m(0), m = 0..M
    coeffs = (2.0 * np.arange(M + 1) + 1.0) / 2.0 * p0
    coeffs.setflags(write=False)
    return Kernel1D(M, coeffs)


def kernel_from_config(cfg) -> Kernel1D:
    if isinstance(cfg, int):
        return legendre_kernel(cfg)
    family = cfg.get("family", "legendre")
    if family != "legendre":
        raise ValueError(f"unknown kernel family {family!r}")
    return legendre_kernel(int(cfg["M"]))


@lru_cache(maxsize=16)
def gauss_legendre(nodes: int):
    x, w = L.leggauss(nodes)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def kernel_moment(K: Kernel1D, i: int, nodes: int = 64) -> float:
    """``int_{-1}^{1} u^i K(u) du`` by Gauss-Legendre quadrature.

    Exact up to rounding when ``2*nodes - 1 >= degree(K) + i``.
    """
    x, w = gauss_legendre(nodes)
    return float(np.sum(w * x**i * K(x)))


def product_kernel_eval(K: Kernel1D, h: float, z) -> np.ndarray | float:
    """``h^{-d} prod_i K(z_i / h)`` for points ``z`` of shape ``(..., d)``."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z.reshape(1)
    d = z.shape[-1]
    val = np.prod(K(z / h), axis=-1) * float(h) ** (-d)
    return float(val) if np.ndim(val) == 0 else val


def tensor_quadrature(f, d: int, center, halfwidth: float, nodes: int = 64) -> float:
    """Tensor Gauss-Legendre integral of ``f`` over the cube ``center +- halfwidth``.

    ``f`` takes an array of points ``(N, d)`` and returns ``(N,)``.
    """
    x, w = gauss_legendre(nodes)
    center = np.broadcast_to(np.asarray(center, dtype=float), (d,))
    grids = np.meshgrid(*([x] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1) * halfwidth + center
    wts = np.ones(1)
    for _ in range(d):
        wts = np.multiply.outer(wts, w)
    wts = wts.ravel() * halfwidth**d
    return float(np.sum(wts * f(pts)))
