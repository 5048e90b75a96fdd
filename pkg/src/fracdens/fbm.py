"""Exact-in-law sampling of fractional Brownian motion on uniform grids.

Two generators are provided for fractional Gaussian noise (fGn): the
circulant embedding (Davies-Harte) method, O(n log n), and a dense
Cholesky factorization, O(n^3) once plus O(n^2) per sample, which serves as
an independent oracle.  Paths are cumulative sums of fGn.

Also here: the Mandelbrot-van Ness normalising constant and a quadrature
for the Liouville (Riemann-Liouville) process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import NegativeEigenvalue, NotPositiveDefinite
from .seeding import DOMAIN_COMPONENT, derive_seed

EIG_RTOL = 1e-10


def check_hurst(H: float) -> float:
    H = float(H)
    if not 0.0 < H < 1.0:
        raise ValueError(f"Hurst parameter must lie in (0, 1), got {H}")
    return H


@dataclass(frozen=True)
class UniformGrid:
    """Grid points ``t0 + k*dt`` for ``k = 0..n``."""

    t0: float
    dt: float
    n: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n + 1)

    @property
    def horizon(self) -> float:
        return self.n * self.dt


@dataclass(frozen=True, eq=False)
class FbmPath:
    hurst: float
    grid: UniformGrid
    values: np.ndarray  # shape (n + 1, d), values[0] == 0
    increments: np.ndarray  # shape (n, d); values are their running sums

    @property
    def d(self) -> int:
        return self.values.shape[1]


def fgn_autocov(H: float, k, dt: float = 1.0):
    """Autocovariance of fGn with step ``dt`` at integer lag(s) ``k``.

    gamma(k) = dt^{2H}/2 (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H})
    """
    H = check_hurst(H)
    if not dt > 0:
        raise ValueError("dt must be positive")
    k = np.abs(np.asarray(k, dtype=float))
    two_h = 2.0 * H
    g = 0.5 * dt**two_h * (
        np.abs(k + 1) ** two_h - 2.0 * k**two_h + np.abs(k - 1) ** two_h
    )
    return float(g) if g.ndim == 0 else g


@lru_cache(maxsize=32)
def _circulant_sqrt_eigs(H: float, n: int, dt: float) -> np.ndarray:
    gamma = fgn_autocov(H, np.arange(n + 1), dt)
    # first row of the 2n circulant: gamma(0..n), gamma(n-1..1)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eigs = np.fft.fft(row).real
    min_eig = eigs.min()
    if min_eig < -EIG_RTOL * eigs.max():
        raise NegativeEigenvalue(float(min_eig))
    np.clip(eigs, 0.0, None, out=eigs)
    out = np.sqrt(eigs / row.size)
    out.setflags(write=False)
    return out


def sample_fgn_circulant(H: float, n: int, dt: float = 1.0, seed: int = 0) -> np.ndarray:
    """Sample ``n`` fGn increments by circulant embedding of size ``2n``.

    Raises
    ------
    NegativeEigenvalue
        If an embedding eigenvalue is below ``-1e-10 * max_eig``.
    """
    H = check_hurst(H)
    if n < 1:
        raise ValueError("n must be >= 1")
    lam = _circulant_sqrt_eigs(H, int(n), float(dt))
    rng = np.random.default_rng(seed)
    m = lam.size
    xi = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return np.fft.fft(lam * xi).real[:n].copy()


@lru_cache(maxsize=16)
def _cholesky_factor(H: float, n: int, dt: float) -> np.ndarray:
    gamma = fgn_autocov(H, np.arange(n), dt)
    idx = np.arange(n)
    cov = gamma[np.abs(idx[:, None] - idx[None, :])]
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    L.setflags(write=False)
    return L


def fgn_cholesky_factor(H: float, n: int, dt: float = 1.0) -> np.ndarray:
    """Lower Cholesky factor of the fGn covariance matrix (read-only)."""
    return _cholesky_factor(check_hurst(H), int(n), float(dt))


def sample_fgn_cholesky(H: float, n: int, dt: float = 1.0, seed: int = 0) -> np.ndarray:
    """Sample ``n`` fGn increments as ``L @ z`` with a dense Cholesky factor."""
    if n < 1:
        raise ValueError("n must be >= 1")
    L = fgn_cholesky_factor(H, n, dt)
    z = np.random.default_rng(seed).standard_normal(n)
    return L @ z


def sample_fgn(H: float, n: int, dt: float = 1.0, seed: int = 0) -> np.ndarray:
    """Circulant sampling, falling back to Cholesky on embedding failure."""
    try:
        return sample_fgn_circulant(H, n, dt, seed)
    except NegativeEigenvalue:
        if n > 4096:
            raise
        return sample_fgn_cholesky(H, n, dt, seed)


def sample_fbm_path(H: float, grid: UniformGrid, d: int = 1, seed: int = 0) -> FbmPath:
    """d independent fBm components on ``grid``, each starting at 0.

    Component ``i`` uses the sub-seed ``derive_seed(DOMAIN_COMPONENT, seed, i)``.
    """
    H = check_hurst(H)
    if d < 1:
        raise ValueError("d must be >= 1")
    inc = np.empty((grid.n, d))
    for i in range(d):
        inc[:, i] = sample_fgn(H, grid.n, grid.dt, derive_seed(DOMAIN_COMPONENT, seed, i))
    values = np.zeros((grid.n + 1, d))
    np.cumsum(inc, axis=0, out=values[1:])
    values.setflags(write=False)
    inc.setflags(write=False)
    return FbmPath(H, grid, values, inc)


def mvn_constant(H: float) -> float:
    """Mandelbrot-van Ness constant c1(H).

    c1(H) = sqrt(2H sin(pi H) Gamma(2H)) / Gamma(H + 1/2)
    """
    H = check_hurst(H)
    return math.sqrt(2.0 * H * math.sin(math.pi * H) * math.gamma(2.0 * H)) / math.gamma(H + 0.5)


def liouville_path(
    H: float,
    grid: UniformGrid,
    brownian_increments=None,
    seed: int = 0,
    last_cell: str = "analytic",
) -> np.ndarray:
    """Riemann-sum approximation of the Liouville process on ``grid``.

    Approximates ``int_0^t (t-u)^{H-1/2} dW_u`` at each grid time by a
    left-point sum.  With ``last_cell="analytic"`` the cell adjacent to the
    singular endpoint uses the exact cell average of the kernel,
    ``dt^{H-1/2}/(H+1/2)``; ``last_cell="left"`` keeps the plain left-point
    weight ``dt^{H-1/2}``.  Discretization bias is of order
    ``dt^{min(H, 1/2)}``; intended for tests.

    Returns an array of shape ``(n + 1,)`` or ``(n + 1, d)`` matching the
    increments, with the first entry 0.
    """
    H = check_hurst(H)
    if last_cell not in ("analytic", "left"):
        raise ValueError("last_cell must be 'analytic' or 'left'")
    n, dt = grid.n, grid.dt
    if brownian_increments is None:
        rng = np.random.default_rng(seed)
        dw = rng.standard_normal(n) * math.sqrt(dt)
    else:
        dw = np.asarray(brownian_increments, dtype=float)
    if dw.shape[0] != n:
        raise ValueError("need one Brownian increment per grid step")
    squeeze = dw.ndim == 1
    dw2 = dw.reshape(n, -1)
    expo = H - 0.5
    # weight for lag m >= 1 cells back: (m dt)^{H-1/2}
    w = (dt * np.arange(1, n + 1)) ** expo
    if last_cell == "analytic":
        w[0] = dt**expo / (H + 0.5)
    out = np.zeros((n + 1, dw2.shape[1]))
    if expo == 0.0:
        np.cumsum(dw2, axis=0, out=out[1:])
    else:
        for c in range(dw2.shape[1]):
            # out[k] = sum_{j<k} w[k-1-j] dw[j]
            full = _causal_convolve(w, dw2[:, c])
            out[1:, c] = full[:n]
    return out[:, 0] if squeeze else out


def _causal_convolve(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    m = w.size + x.size - 1
    nfft = 1 << (m - 1).bit_length()
    return np.fft.irfft(np.fft.rfft(w, nfft) * np.fft.rfft(x, nfft), nfft)[:m]
