"""Kernel estimator of the stationary density from a discretized path.

The time integral ``(1/T) int_0^T K_h(x - X_u) du`` is discretized with the
trapezoid rule on the trajectory grid.  Estimates are signed: kernels of
order >= 2 take negative values and nothing is clipped.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrajectory
from .kernels import Kernel1D, product_kernel_eval, tensor_quadrature
from .sde import Trajectory


@dataclass(frozen=True)
class KdeQuery:
    x: tuple
    h: float
    kernel: Kernel1D

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("bandwidth must be positive")
        if self.h >= 1:
            warnings.warn(f"bandwidth h={self.h} is not below 1", stacklevel=3)


def _trap_weights(n_states: int) -> np.ndarray:
    w = np.ones(n_states)
    w[0] = w[-1] = 0.5
    return w


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != d:
        raise ValueError(f"query point must have dimension {d}")
    return x


def _check(states: np.ndarray, h: float):
    if states.shape[0] < 2:
        raise EmptyTrajectory("trajectory needs at least two states")
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    if h >= 1:
        warnings.warn(f"bandwidth h={h} is not below 1", stacklevel=3)


def _window_sum(states, weights, idx, x, h, kernel) -> float:
    # idx must be in time order so that every caller sums identically
    if idx.size == 0:
        return 0.0
    vals = product_kernel_eval(kernel, h, x - states[idx])
    return float(np.sum(np.atleast_1d(vals) * weights[idx]))


def _in_window(states, x, h):
    return np.flatnonzero(np.all(np.abs(x - states) <= h, axis=1))


def kde_states(states: np.ndarray, x, h: float, kernel: Kernel1D) -> float:
    """Trapezoid estimate at ``x`` from states ``(n+1, d)`` on a uniform grid."""
    states = np.asarray(states, dtype=float)
    _check(states, h)
    x = _as_points(x, states.shape[1])
    w = _trap_weights(states.shape[0])
    n = states.shape[0] - 1
    return _window_sum(states, w, _in_window(states, x, h), x, h, kernel) / n


def kde_at_point(traj: Trajectory, x, h: float | None = None, kernel: Kernel1D | None = None) -> float:
    """Estimate the stationary density at one point.

    ``x`` may be a :class:`KdeQuery`, in which case ``h`` and ``kernel``
    are taken from it.
    """
    if isinstance(x, KdeQuery):
        x, h, kernel = x.x, x.h, x.kernel
    return kde_states(traj.states, x, h, kernel)


def kde_grid_states(states: np.ndarray, xs, h: float, kernel: Kernel1D) -> np.ndarray:
    """Estimates at many points; agrees bitwise with :func:`kde_states`.

    States are sorted once by their first coordinate so each query only
    touches samples near its window.
    """
    states = np.asarray(states, dtype=float)
    _check(states, h)
    d = states.shape[1]
    xs = _as_points(xs, d).reshape(-1, d)
    w = _trap_weights(states.shape[0])
    n = states.shape[0] - 1
    order = np.argsort(states[:, 0], kind="stable")
    first = states[order, 0]
    pad = 1e-9 * max(1.0, h)
    out = np.empty(xs.shape[0])
    for j, x in enumerate(xs):
        lo = np.searchsorted(first, x[0] - h - pad, side="left")
        hi = np.searchsorted(first, x[0] + h + pad, side="right")
        cand = np.sort(order[lo:hi])
        keep = np.all(np.abs(x - states[cand]) <= h, axis=1)
        out[j] = _window_sum(states, w, cand[keep], x, h, kernel) / n
    return out


def kde_on_grid(traj: Trajectory, x_grid, h: float, kernel: Kernel1D) -> np.ndarray:
    return kde_grid_states(traj.states, x_grid, h, kernel)


def bias_convolution_oracle(target_density, kernel: Kernel1D, h: float, x, nodes: int = 64) -> float:
    """``(K_h * pi)(x) - pi(x)`` by tensor Gauss-Legendre quadrature.

    Under stationarity this is the bias of the estimator at ``x``.
    ``target_density`` maps points ``(N, d)`` to densities ``(N,)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size

    def integrand(u):
        return np.prod(kernel(u), axis=-1) * target_density(x - h * u)

    conv = tensor_quadrature(integrand, d, np.zeros(d), 1.0, nodes)
    return conv - float(np.asarray(target_density(x[None, :])).ravel()[0])
