"""Additive fractional SDEs ``dX = b(X) dt + sigma dB`` with semi-contractive drift.

Drifts carry the constants of the one-sided condition

    <b(x) - b(y), x - y> <= -kappa |x - y|^2   if |x|, |y| >= R
                          <=  lam  |x - y|^2   otherwise

together with a global Lipschitz constant.  Integration is explicit
Euler-Maruyama on the grid of the driving fBm path; the stationary regime is
approximated by discarding a burn-in segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFinite, UnknownDrift
from .fbm import FbmPath, UniformGrid, check_hurst, sample_fbm_path

RADIAL_STEP = 1e-3
DEFAULT_DW_CAP = 3.0


@dataclass(frozen=True, eq=False)
class DriftSpec:
    """Vector field ``b`` on R^d with declared semi-contractivity constants.

    ``func`` maps an array of shape ``(..., d)`` to the same shape.
    """

    name: str
    d: int
    func: Callable[[np.ndarray], np.ndarray]
    kappa: float
    R: float
    lam: float
    lip: float
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        return self.func(np.asarray(x, dtype=float))

    def describe(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            **self.params,
            "kappa": self.kappa,
            "R": self.R,
            "lambda": self.lam,
            "lip": self.lip,
        }


def _sq_norm(x: np.ndarray) -> np.ndarray:
    # explicit component loop keeps results independent of batch layout
    s = x[..., 0] * x[..., 0]
    for i in range(1, x.shape[-1]):
        s = s + x[..., i] * x[..., i]
    return s


def double_well_profile(r, a: float, b: float, cap: float):
    """Radial factor ``phi`` and radial curvature ``U''`` of the capped double well.

    The drift is ``-phi(|x|) x`` with ``phi(r) = a (min(r, cap)^2 - b)``.
    """
    r = np.asarray(r, dtype=float)
    inside = r < cap
    phi = a * (np.minimum(r, cap) ** 2 - b)
    curv = np.where(inside, a * (3.0 * r**2 - b), a * (cap**2 - b))
    return phi, curv


def double_well_constants(a: float, b: float, cap: float = DEFAULT_DW_CAP, step: float = RADIAL_STEP):
    """(kappa, R, lam, lip) for the capped double well by radial grid search.

    For a radial gradient field the one-sided bound between two points is
    governed by ``min(phi, U'')`` along radii, so ``lam`` is the largest
    negative part of that profile, ``R`` the first radius beyond which the
    profile stays at least ``max(lam, step)``, and ``kappa`` its minimum there.
    """
    r = np.arange(0.0, cap + 1.0 + step, step)
    phi, curv = double_well_profile(r, a, b, cap)
    prof = np.minimum(phi, curv)
    lam = max(0.0, float(-prof.min()))
    target = max(lam, step)
    ok = prof >= target
    # first index from which the profile stays above target
    bad = np.nonzero(~ok)[0]
    i0 = 0 if bad.size == 0 else bad[-1] + 1
    if i0 >= r.size:
        raise ValueError("double well is not contractive at infinity")
    R = float(r[i0])
    kappa = float(prof[i0:].min())
    lip = float(np.max(np.maximum(np.abs(phi), np.abs(curv))))
    return kappa, R, lam, lip


def builtin_drift(name: str, d: int = 1, **params) -> DriftSpec:
    """Construct a named drift.

    ``fou``: ``b(x) = -kappa x``.
    ``double_well``: ``b(x) = -a (|x|^2 - b) x`` for ``|x| < cap`` and the
    linear continuation ``-a (cap^2 - b) x`` outside, which keeps ``b``
    globally Lipschitz.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if name == "fou":
        kappa = float(params.get("kappa", 1.0))
        if not kappa > 0:
            raise ValueError("fou requires kappa > 0")

        def func(x, _k=kappa):
            return -_k * x

        return DriftSpec("fou", d, func, kappa, 0.0, 0.0, kappa, {"kappa": kappa})
    if name == "double_well":
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 1.0))
        cap = float(params.get("cap", DEFAULT_DW_CAP))
        if not (a > 0 and b > 0):
            raise ValueError("double_well requires a, b > 0")
        if cap * cap <= b:
            raise ValueError("cap must exceed sqrt(b)")
        kappa, R, lam, lip = double_well_constants(a, b, cap)
        cap2 = cap * cap

        def func(x, _a=a, _b=b, _c2=cap2):
            r2 = np.minimum(_sq_norm(x), _c2)
            return -(_a * (r2 - _b))[..., None] * x

        return DriftSpec("double_well", d, func, kappa, R, lam, lip, {"a": a, "b": b, "cap": cap})
    raise UnknownDrift(name)


def drift_from_config(cfg: dict, d: int) -> DriftSpec:
    cfg = dict(cfg)
    name = cfg.pop("name")
    return builtin_drift(name, d, **cfg)


@dataclass
class SemiContractiveReport:
    violations: int
    worst_margin: float
    lip_violations: int
    n_pairs: int

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.lip_violations == 0


def check_semi_contractive(drift: DriftSpec, n_pairs: int = 100_000, radius: float = 5.0, seed: int = 0,
                           rtol: float = 1e-9) -> SemiContractiveReport:
    """Test the declared constants of ``drift`` on random pairs in a box.

    The margin of a pair is ``bound - <b(x)-b(y), x-y>`` where ``bound`` is the
    applicable branch; it is negative for a violation.  A tolerance of
    ``rtol * scale * |x-y|^2`` absorbs rounding.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    d = drift.d
    x = rng.uniform(-radius, radius, size=(n_pairs, d))
    y = rng.uniform(-radius, radius, size=(n_pairs, d))
    bx, by = drift(x), drift(y)
    diff = x - y
    dist2 = np.sum(diff * diff, axis=1)
    inner = np.sum((bx - by) * diff, axis=1)
    outside = (np.sqrt(_sq_norm(x)) >= drift.R) & (np.sqrt(_sq_norm(y)) >= drift.R)
    bound = np.where(outside, -drift.kappa * dist2, drift.lam * dist2)
    margin = bound - inner
    scale = max(1.0, drift.kappa, drift.lam, drift.lip)
    viol = margin < -rtol * scale * dist2
    lip_gap = np.sqrt(np.sum((bx - by) ** 2, axis=1)) - drift.lip * np.sqrt(dist2)
    lip_viol = lip_gap > rtol * scale * np.sqrt(dist2)
    return SemiContractiveReport(int(viol.sum()), float(margin.min()), int(lip_viol.sum()), n_pairs)


def as_sigma(sigma, d: int) -> np.ndarray:
    """Validate a diffusion matrix; scalars mean ``sigma * I``."""
    if sigma is None:
        s = np.eye(d)
    else:
        s = np.asarray(sigma, dtype=float)
        if s.ndim == 0:
            s = float(s) * np.eye(d)
    if s.shape != (d, d):
        raise ValueError(f"sigma must be {d}x{d}")
    if abs(np.linalg.det(s)) <= 1e-12:
        raise ValueError("sigma is degenerate")
    return s


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Discretized SDE path on ``[0, T]`` after burn-in."""

    grid: UniformGrid
    states: np.ndarray  # (n + 1, d)
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> float:
        return self.grid.horizon

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def d(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times


def _scaled_noise(sigma: np.ndarray, inc: np.ndarray) -> np.ndarray:
    """``sigma @ inc`` along the last axis, summed in a fixed order."""
    d = sigma.shape[0]
    out = np.empty_like(inc)
    for i in range(d):
        acc = sigma[i, 0] * inc[..., 0]
        for j in range(1, d):
            acc = acc + sigma[i, j] * inc[..., j]
        out[..., i] = acc
    return out


CHECK_EVERY = 1024


def euler_batch(drift: DriftSpec, sigma: np.ndarray, increments: np.ndarray, x0: np.ndarray,
                dt: float) -> np.ndarray:
    """Euler-Maruyama over a batch of noise paths.

    ``increments`` has shape ``(n, B, d)``; returns states ``(n + 1, B, d)``.
    Each batch member is advanced with elementwise arithmetic only, so its
    trajectory does not depend on which other members share the batch.
    """
    n = increments.shape[0]
    noise = _scaled_noise(sigma, increments)
    states = np.empty((n + 1,) + increments.shape[1:])
    x = np.array(x0, dtype=float, copy=True).reshape(increments.shape[1:])
    states[0] = x
    f = drift.func
    with np.errstate(over="ignore", invalid="ignore"):
        _euler_loop(f, x, noise, states, dt, n)
    return states


def _euler_loop(f, x, noise, states, dt, n):
    for k in range(n):
        x = x + f(x) * dt + noise[k]
        states[k + 1] = x
        if (k + 1) % CHECK_EVERY == 0 or k + 1 == n:
            if not np.isfinite(x).all():
                block = states[max(0, k + 1 - CHECK_EVERY): k + 2]
                bad = np.nonzero(~np.isfinite(block).all(axis=tuple(range(1, block.ndim))))[0][0]
                raise NonFinite(max(0, k + 1 - CHECK_EVERY) + int(bad))


def euler_maruyama(drift: DriftSpec, sigma, noise: FbmPath, x0=None) -> Trajectory:
    """Integrate ``X_{k+1} = X_k + b(X_k) dt + sigma (B_{k+1} - B_k)``."""
    d = noise.d
    if drift.d != d:
        raise ValueError("noise dimension does not match drift")
    sig = as_sigma(sigma, d)
    dt = noise.grid.dt
    if dt * drift.lip >= 1.0:
        import warnings

        warnings.warn(f"dt*lip = {dt * drift.lip:.3g} >= 1; Euler scheme may be unstable")
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).reshape(d)
    inc = noise.increments[:, None, :]
    states = euler_batch(drift, sig, inc, x0[None, :], dt)[:, 0, :]
    grid = UniformGrid(0.0, dt, noise.grid.n)
    return Trajectory(grid, states, {"H": noise.hurst, "drift": drift.describe(), "sigma": sig.tolist()})


def default_burn_in(drift: DriftSpec) -> float:
    return max(50.0, 10.0 / drift.kappa)


def resolve_steps(T: float, dt: float) -> tuple[int, float]:
    """Step count ``n`` and adjusted step ``T/n`` with ``T/n <= dt``."""
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    n = max(1, math.ceil(T / dt - 1e-9))
    return n, T / n


def simulate_stationary_batch(drift: DriftSpec, sigma, H: float, T: float, dt: float,
                              burn_in: float | None, seeds) -> tuple[UniformGrid, np.ndarray]:
    """Simulate one path per seed; returns the post-burn-in grid and states ``(B, n+1, d)``.

    Paths start from 0 at ``-burn_in``; the burn-in segment is discarded.
    """
    H = check_hurst(H)
    d = drift.d
    sig = as_sigma(sigma, d)
    if burn_in is None:
        burn_in = default_burn_in(drift)
    if burn_in < 0:
        raise ValueError("burn_in must be >= 0")
    n, dt = resolve_steps(T, dt)
    nb = int(round(burn_in / dt))
    full = UniformGrid(-nb * dt, dt, n + nb)
    seeds = list(seeds)
    inc = np.empty((n + nb, len(seeds), d))
    for r, s in enumerate(seeds):
        inc[:, r, :] = sample_fbm_path(H, full, d, s).increments
    states = euler_batch(drift, sig, inc, np.zeros((len(seeds), d)), dt)
    del inc
    out = np.ascontiguousarray(np.swapaxes(states[nb:], 0, 1))
    return UniformGrid(0.0, dt, n), out


def simulate_stationary(drift: DriftSpec, sigma, H: float, T: float, dt: float = 0.01,
                        burn_in: float | None = None, seed: int = 0) -> Trajectory:
    """Approximate stationary path on ``[0, T]`` after a burn-in from ``x0 = 0``.

    The default burn-in is ``max(50, 10/kappa)``.  The zero fBm past at the
    start of the burn-in is a truncation of the true stationary regime.
    """
    if burn_in is None:
        burn_in = default_burn_in(drift)
    grid, states = simulate_stationary_batch(drift, sigma, H, T, dt, burn_in, [seed])
    meta = {
        "H": H,
        "drift": drift.describe(),
        "sigma": as_sigma(sigma, drift.d).tolist(),
        "burn_in": burn_in,
        "seed": seed,
    }
    return Trajectory(grid, states[0], meta)



def fou_stationary_variance(H: float, kappa: float = 1.0, sigma: float = 1.0) -> float:
    """Stationary variance ``sigma^2 H Gamma(2H) kappa^{-2H}`` of the scalar fOU process."""
    H = check_hurst(H)
    return sigma * sigma * H * math.gamma(2.0 * H) * kappa ** (-2.0 * H)
