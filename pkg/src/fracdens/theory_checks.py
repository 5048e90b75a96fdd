"""Standalone numerical checks of two constructions used in the analysis.

* :func:`control_ode_run` integrates the finite-time control ODE
  ``rho' = b(x + rho) - b(x) - w |rho|^{-1/2} rho - lam rho`` with
  ``w = 2 |rho_0|^{1/2}``, which must bring ``rho`` to zero by ``t = 1``
  while ``|rho_t|^{1/2}`` stays under ``max(|rho_0|^{1/2} - w t / 2, 0)``.
* :func:`innovation_decomposition_check` splits a Mandelbrot-van Ness
  increment ``B_{t+lag} - B_t`` into its past-driven part and its
  innovation part and measures how well quadratures of the two parts
  reconstruct the exactly sampled increment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import Nonconvergence
from .fbm import check_hurst, mvn_constant
from .kernels import gauss_legendre
from .sde import DriftSpec, builtin_drift
from .seeding import DOMAIN_CHECK, derive_seed

FREEZE_TOL = 1e-12
TERMINAL_TOL = 1e-6
MAX_HALVINGS = 20
PATH_BLOCK = 64


# --------------------------------------------------------------------------
# control ODE

@dataclass
class ControlOdeRun:
    """Inputs of one control-ODE integration on the uniform grid of ``[0, 1]``.

    ``x_path`` and ``sdot`` are grid functions of shape ``(n_steps + 1, d)``
    (or vectorized callables of a column of times); ``sdot`` is the derivative of the perturbation.
    ``varpi`` defaults to ``2 |rho0|^{1/2}``.
    """

    drift: DriftSpec
    rho0: np.ndarray
    x_path: object = None
    sdot: object = None
    n_steps: int = 10_000
    varpi: float | None = None

    def __post_init__(self):
        self.rho0 = np.atleast_1d(np.asarray(self.rho0, dtype=float))
        if self.rho0.shape != (self.drift.d,):
            raise ValueError("rho0 must have the drift dimension")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.varpi is None:
            self.varpi = 2.0 * math.sqrt(float(np.linalg.norm(self.rho0)))

    def grid_function(self, f) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.n_steps + 1)
        d = self.drift.d
        if f is None:
            return np.zeros((t.size, d))
        if callable(f):
            # callables are evaluated on the column of grid times
            return np.broadcast_to(np.asarray(f(t[:, None]), dtype=float), (t.size, d)).copy()
        arr = np.asarray(f, dtype=float).reshape(t.size, -1)
        return np.broadcast_to(arr, (t.size, d)).copy()


@dataclass
class ControlOdeResult:
    rho_final: float
    sup_phi: float
    sup_phi_dot: float
    times: np.ndarray
    rho: np.ndarray
    phi: np.ndarray
    envelope_excess: float
    envelope_ok: bool
    monotone: bool
    meta: dict = field(default_factory=dict)


def _control_field(drift, lam, varpi, x, bx, rho):
    r = math.sqrt(float(rho @ rho))
    if r == 0.0:
        return np.zeros_like(rho)
    db = drift((x + rho)[None, :])[0] - bx
    return db - (varpi / math.sqrt(r) + lam) * rho


def control_ode_run(run: ControlOdeRun, raise_on_fail: bool = True) -> ControlOdeResult:
    """Integrate the control ODE with explicit Euler and local step halving.

    A proposed step that would flip the sign of ``rho`` along its current
    direction is halved, up to 20 times, after which ``rho`` is frozen at 0;
    ``rho`` is also frozen once ``|rho| < 1e-12``.  The control is
    ``phi = w |rho|^{-1/2} rho + lam rho + sdot`` with the singular term read
    as 0 at ``rho = 0``.
    """
    drift, n = run.drift, run.n_steps
    dt = 1.0 / n
    lam, varpi = float(drift.lam), float(run.varpi)
    xs = run.grid_function(run.x_path)
    sd = run.grid_function(run.sdot)
    bxs = drift(xs)
    times = np.linspace(0.0, 1.0, n + 1)
    rho = np.empty((n + 1, drift.d))
    rho[0] = run.rho0
    cur = run.rho0.copy()
    if float(np.linalg.norm(cur)) < FREEZE_TOL:
        cur[:] = 0.0
    halvings = 0
    for k in range(n):
        remaining = dt
        while remaining > 0.0 and cur.any():
            step = remaining
            for _ in range(MAX_HALVINGS + 1):
                prop = cur + step * _control_field(drift, lam, varpi, xs[k], bxs[k], cur)
                if float(prop @ cur) > 0.0:
                    break
                step *= 0.5
                halvings += 1
            else:
                prop = np.zeros_like(cur)
                step = remaining
            cur = prop
            remaining -= step
            if float(np.linalg.norm(cur)) < FREEZE_TOL:
                cur[:] = 0.0
        rho[k + 1] = cur
    norms = np.linalg.norm(rho, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    ctrl = np.where(norms[:, None] > 0.0, varpi / np.sqrt(safe)[:, None] * rho, 0.0)
    phi = ctrl + lam * rho + sd
    phi_norm = np.linalg.norm(phi, axis=1)
    phi_dot = np.linalg.norm(np.diff(phi, axis=0), axis=1) / dt
    r0h = math.sqrt(float(np.linalg.norm(run.rho0)))
    envelope = np.maximum(r0h - varpi * times / 2.0, 0.0)
    excess = float(np.max(np.sqrt(norms) - envelope))
    res = ControlOdeResult(
        rho_final=float(norms[-1]),
        sup_phi=float(phi_norm.max()),
        sup_phi_dot=float(phi_dot.max()) if phi_dot.size else 0.0,
        times=times,
        rho=rho,
        phi=phi,
        envelope_excess=excess,
        envelope_ok=excess <= 10.0 * dt,
        monotone=bool(np.all(np.diff(norms) <= 1e-12 * max(1.0, norms[0]))),
        meta={"varpi": varpi, "lam": lam, "halvings": halvings, "n_steps": n},
    )
    if raise_on_fail and res.rho_final >= TERMINAL_TOL:
        raise Nonconvergence(f"|rho_1| = {res.rho_final:.3e} >= {TERMINAL_TOL}")
    return res


@dataclass
class ControlSuiteReport:
    results: list
    rho0_norms: np.ndarray
    sdot_sups: np.ndarray
    ratios: np.ndarray
    fitted_C: float
    half_C: tuple

    @property
    def all_terminal(self) -> bool:
        return all(r.rho_final < TERMINAL_TOL for r in self.results)

    @property
    def all_envelope(self) -> bool:
        return all(r.envelope_ok for r in self.results)

    @property
    def C_stable(self) -> bool:
        """Constants fitted on the two interleaved halves agree within a factor 2."""
        lo, hi = sorted(self.half_C)
        return hi <= 2.0 * lo


def random_control_run(seed: int, n_steps: int = 10_000) -> ControlOdeRun:
    """One randomized run: builtin Lipschitz drift, ``|rho0|`` in ``[0.1, 10]``, ``|sdot| <= 1``."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 3))
    if rng.random() < 0.5:
        drift = builtin_drift("fou", d, kappa=float(rng.uniform(0.5, 2.0)))
    else:
        drift = builtin_drift("double_well", d, a=float(rng.uniform(0.5, 1.2)), b=float(rng.uniform(0.5, 1.2)))
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    rho0 = direction * math.exp(rng.uniform(math.log(0.1), math.log(10.0)))
    amp = rng.uniform(0.0, 1.0, size=d) / math.sqrt(d)
    freq = rng.uniform(0.5, 3.0, size=d)
    phase = rng.uniform(0, 2 * math.pi, size=d)
    x0 = rng.uniform(-2.0, 2.0, size=d)
    xa = rng.uniform(0.0, 1.5, size=d)
    return ControlOdeRun(
        drift=drift,
        rho0=rho0,
        x_path=lambda t: x0 + xa * np.sin(2 * math.pi * t + phase),
        sdot=lambda t: amp * np.cos(2 * math.pi * freq * t + phase),
        n_steps=n_steps,
    )


def control_ode_suite(n_runs: int = 100, seed: int = 0, n_steps: int = 10_000) -> ControlSuiteReport:
    """Randomized suite; fits ``C`` in ``sup|phi| <= C (|rho0| + sup|sdot|)``.

    ``C`` is the smallest constant valid for every run; it is also fitted on
    the even- and odd-indexed runs separately to judge its stability.
    """
    results, r0, ss = [], [], []
    for i in range(n_runs):
        run = random_control_run(derive_seed(DOMAIN_CHECK, seed, i), n_steps)
        results.append(control_ode_run(run, raise_on_fail=False))
        r0.append(float(np.linalg.norm(run.rho0)))
        ss.append(float(np.max(np.linalg.norm(run.grid_function(run.sdot), axis=1))))
    r0, ss = np.array(r0), np.array(ss)
    ratios = np.array([r.sup_phi for r in results]) / (r0 + ss)
    return ControlSuiteReport(results, r0, ss, ratios, float(ratios.max()),
                              (float(ratios[0::2].max()), float(ratios[1::2].max())))


# --------------------------------------------------------------------------
# innovation decomposition

@dataclass
class InnovationCheck:
    max_gap: float
    max_gap_halved: float
    ratio: float
    increment_sd: float
    rel_max_gap: float
    truncation_sd: float
    n_steps: int
    n_paths: int
    gap_sd: float = 0.0
    gap_sd_halved: float = 0.0

    @property
    def sd_ratio(self) -> float:
        """Exact standard-deviation ratio of the gaps at the two levels."""
        return self.gap_sd / self.gap_sd_halved if self.gap_sd_halved > 0 else float("nan")


def _graded_nodes(L: float, N: int, q: float) -> np.ndarray:
    """Distances ``L (j/N)^q`` from a singular endpoint, ``j = 0..N``."""
    return L * (np.arange(N + 1) / N) ** q


def _power_int(a, b, p):
    """``int_a^b s^{p-1} ds`` for ``p > 0``."""
    return (b**p - a**p) / p


def _within_cell_var(kern, a, b, mean, j0=64):
    """``int_a^b (kern - mean)^2`` per cell; adaptive quadrature near the singular end."""
    x, w = gauss_legendre(24)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    pts = mid[:, None] + half[:, None] * x[None, :]
    v = half * np.sum(w[None, :] * (kern(pts) - mean[:, None]) ** 2, axis=1)
    for j in range(min(j0, a.size)):
        if b[j] > a[j]:
            v[j] = integrate.quad(lambda s: (kern(s) - mean[j]) ** 2, a[j], b[j], limit=200,
                                  epsabs=0.0, epsrel=1e-10)[0]
    return v


def innovation_decomposition_check(H: float, t: float = 1.0, lag: float = 1.0, past_horizon: float | None = None,
                                   n_steps: int = 20_000, seed: int = 0, n_paths: int = 1024) -> InnovationCheck:
    """Reconstruction gap of the past/innovation split of an fBm increment.

    The Brownian driver lives on two meshes graded toward the kernel
    singularities: ``s = t - u`` over ``[0, past_horizon + t]`` for the
    past-driven term and ``s = t + lag - u`` over ``[0, lag]`` for the
    innovation term.  The coarse level has ``n_steps`` cells in total and
    the fine level halves every cell.  On the fine level the truncated
    increment ``B_{t+lag} - B_t`` is evaluated from the two Mandelbrot-van
    Ness kernels directly and completed by exact Gaussian conditioning, so
    it has the exact law and is coupled to the Brownian cells.  Each level
    reconstructs it as the sum of the cell-averaged quadratures of the two
    terms; ``max_gap`` is the largest absolute difference at the coarse
    level over ``n_paths`` paths and ``max_gap_halved`` the same at the fine
    level.  ``gap_sd`` and ``gap_sd_halved`` are the exact standard
    deviations of the two gaps (within-cell residual variances).
    """
    check_hurst(H)
    if lag < 0 or t < 0:
        raise ValueError("t and lag must be nonnegative")
    P = 200.0 * (t + lag) if past_horizon is None else float(past_horizon)
    alpha = mvn_constant(H)
    g = H - 0.5
    p = H + 0.5
    if lag == 0.0 or g == 0.0:
        # both kernels collapse: the innovation term is a plain Brownian increment
        rng = np.random.default_rng(derive_seed(DOMAIN_CHECK, seed, 0x1A))
        dw = rng.standard_normal((n_paths, 2)) * math.sqrt(lag / 2.0) if lag > 0 else np.zeros((n_paths, 2))
        direct = alpha * (dw[:, 0] + dw[:, 1])
        gap0 = float(np.max(np.abs(direct - alpha * dw.sum(axis=1))))
        sd = alpha * math.sqrt(lag)
        return InnovationCheck(gap0, gap0, float("nan"), sd, gap0 / sd if sd > 0 else 0.0, 0.0, n_steps, n_paths)

    q = max(1.0, 1.5 / H)
    n_tilde = max(2, n_steps // 2)
    n_bar = max(2, n_steps - n_tilde)
    Lb = P + t
    # fine meshes (coarse nodes are every other fine node)
    sb = _graded_nodes(Lb, 2 * n_bar, q)
    st = _graded_nodes(lag, 2 * n_tilde, q)
    hb, ht = np.diff(sb), np.diff(st)
    ab, bb = sb[:-1], sb[1:]
    at, bt = st[:-1], st[1:]

    def kbar(s):
        return (s + lag) ** g - s**g

    def ktil(s):
        return s**g

    # decomposition weights: cell integrals of each term's kernel
    A_bar = _power_int(ab + lag, bb + lag, p) - _power_int(ab, bb, p)
    A_til = _power_int(at, bt, p)

    # direct weights: B_{t+lag} and B_t as separate MvN integrals, with the
    # (-u)_+ normalizing term, in local coordinates u = t - s (past) and
    # u = t + lag - s (innovation window)
    def neg_part(u_hi, u_lo):
        # int over [u_lo, u_hi] of (-u)_+^g du
        lo = np.minimum(u_lo, 0.0)
        hi = np.minimum(u_hi, 0.0)
        return _power_int(-hi, -lo, p)

    norm_past = neg_part(t - ab, t - bb)
    D_past = (_power_int(ab + lag, bb + lag, p) - norm_past) - (_power_int(ab, bb, p) - norm_past)
    norm_win = neg_part(t + lag - at, t + lag - bt)
    D_win = (_power_int(at, bt, p) - norm_win) - (0.0 - norm_win)

    resid_var = float(np.sum(_within_cell_var(kbar, ab, bb, A_bar / hb)) +
                      np.sum(_within_cell_var(ktil, at, bt, A_til / ht)))
    resid_var = max(resid_var, 0.0)

    def coarse(A):
        return A[0::2] + A[1::2]

    cb, ct = coarse(A_bar), coarse(A_til)
    hcb, hct = coarse(hb), coarse(ht)
    resid_var_c = float(np.sum(_within_cell_var(kbar, ab[0::2], bb[1::2], cb / hcb)) +
                        np.sum(_within_cell_var(ktil, at[0::2], bt[1::2], ct / hct)))
    full_var = integrate.quad(lambda s: kbar(s) ** 2, 0.0, 1.0, limit=400)[0] + \
        integrate.quad(lambda s: kbar(s) ** 2, 1.0, Lb, limit=400)[0] + lag ** (2 * H) / (2 * H)
    tail_var = integrate.quad(lambda s: kbar(s) ** 2, Lb, np.inf, limit=400)[0]

    gaps_c, gaps_f = np.empty(n_paths), np.empty(n_paths)
    wd_past, wd_win = D_past / hb, D_win / ht
    wf_bar, wf_til = A_bar / hb, A_til / ht
    wc_bar, wc_til = cb / hcb, ct / hct
    for start in range(0, n_paths, PATH_BLOCK):
        # one generator per block keeps the draws independent of n_paths
        rng = np.random.default_rng(derive_seed(DOMAIN_CHECK, seed, 0x1B, start // PATH_BLOCK))
        m = min(PATH_BLOCK, n_paths - start)
        dwb = rng.standard_normal((m, hb.size)) * np.sqrt(hb)
        dwt = rng.standard_normal((m, ht.size)) * np.sqrt(ht)
        r = rng.standard_normal(m) * math.sqrt(resid_var)
        direct = alpha * (dwb @ wd_past + dwt @ wd_win + r)
        fine = alpha * (dwb @ wf_bar + dwt @ wf_til)
        crs = alpha * (coarse(dwb.T).T @ wc_bar + coarse(dwt.T).T @ wc_til)
        gaps_c[start:start + m] = np.abs(direct - crs)
        gaps_f[start:start + m] = np.abs(direct - fine)
    sd = alpha * math.sqrt(full_var)
    mg, mgh = float(gaps_c.max()), float(gaps_f.max())
    return InnovationCheck(mg, mgh, mg / mgh if mgh > 0 else float("inf"), sd, mg / sd,
                           alpha * math.sqrt(tail_var), n_steps, n_paths,
                           alpha * math.sqrt(max(resid_var_c, 0.0)), alpha * math.sqrt(resid_var))
