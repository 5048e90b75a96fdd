"""Bandwidth exponents and mean-squared-error exponents.

Conventions: bandwidths are ``h(T) = T^{-a}``; an MSE exponent ``r`` means
``MSE <= c T^{-r}``.  The slack ``eps`` is subtracted from the bandwidth
exponent in the long-memory basic rule and from the rate exponents.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

from .errors import InvalidRegime
from .fbm import check_hurst


@dataclass(frozen=True)
class RateRegime:
    variant: str  # "basic" | "improved"
    H: float
    beta: float
    d: int
    eps: float = 0.01

    def __post_init__(self):
        check_hurst(self.H)
        if self.variant not in ("basic", "improved"):
            raise InvalidRegime(f"unknown variant {self.variant!r}")
        if self.H == 0.5:
            raise InvalidRegime("H = 1/2 lies outside both rate regimes")
        if self.variant == "improved" and self.H >= 0.5:
            raise InvalidRegime("the improved rate requires H < 1/2")
        if self.beta < 1:
            raise InvalidRegime("beta must be >= 1")
        if self.d < 1:
            raise InvalidRegime("d must be >= 1")
        if not self.eps > 0:
            raise InvalidRegime("eps must be positive")


def alpha_dH(d: int, H: float) -> float:
    """``max(2d - 1/H, 4d/(5 - 2H))`` for ``0 < H < 1/2``."""
    H = check_hurst(H)
    if H >= 0.5:
        raise InvalidRegime("alpha_{d,H} is defined for H < 1/2")
    return max(2.0 * d - 1.0 / H, 4.0 * d / (5.0 - 2.0 * H))


def optimal_exponent(regime: RateRegime) -> float:
    H, beta, d, eps = regime.H, regime.beta, regime.d, regime.eps
    if regime.variant == "improved":
        return min(1.0 / (2.0 * beta + alpha_dH(d, H)), (1.0 - H - eps) / (beta + d))
    if H < 0.5:
        return 1.0 / (2.0 * beta + 2.0 * d)
    return (1.0 - H) / (beta + d) - eps


def mse_exponent_before_eps(regime: RateRegime) -> float:
    """Rate exponent with the ``eps`` slack dropped."""
    H, beta, d = regime.H, regime.beta, regime.d
    if regime.variant == "improved":
        return min(2.0 * beta / (2.0 * beta + alpha_dH(d, H)), 2.0 * beta * (1.0 - H) / (beta + d))
    if H < 0.5:
        return beta / (beta + d)
    return 2.0 * (1.0 - H) * beta / (beta + d)


def theoretical_mse_exponent(regime: RateRegime) -> float:
    """Exponent ``r`` of the MSE upper bound ``c T^{-r}``."""
    r = mse_exponent_before_eps(regime)
    if regime.variant == "basic" and regime.H < 0.5:
        return r
    return r - regime.eps


def bandwidth(T: float, a: float) -> float:
    if not a > 0:
        raise ValueError("exponent a must be positive")
    h = float(T) ** (-a)
    if h >= 1.0:
        warnings.warn(f"h(T) = {h:.4g} is not below 1 (T = {T})", stacklevel=2)
    return h


@dataclass(frozen=True)
class VarianceBound:
    """Exponents of the variance bounds ``c T^{t_exp} h^{h_exp}``.

    ``improved_h_exps`` and ``improved_t_exp`` describe the bracket
    ``max(h^{e1}, h^{e2}, T^{t})`` multiplying ``h^{-2d}/T`` (H < 1/2 only).
    """

    basic_t_exp: float
    basic_h_exp: float
    improved_h_exps: tuple | None
    improved_t_exp: float | None

    def improved_bracket(self, h: float, T: float) -> float:
        if self.improved_h_exps is None:
            raise InvalidRegime("no refined bound for H > 1/2")
        e1, e2 = self.improved_h_exps
        return max(h**e1, h**e2, T**self.improved_t_exp)

    def binding_h_exponent(self) -> float:
        if self.improved_h_exps is None:
            raise InvalidRegime("no refined bound for H > 1/2")
        return min(self.improved_h_exps)


def variance_bound_exponents(H: float, d: int, h: float | None = None, eps: float = 0.01) -> VarianceBound:
    H = check_hurst(H)
    if h is not None and not 0 < h < 1:
        raise ValueError("h must lie in (0, 1)")
    if H == 0.5:
        raise InvalidRegime("H = 1/2 is excluded")
    if H < 0.5:
        return VarianceBound(
            -1.0,
            -2.0 * d,
            (1.0 / H, 2.0 * d * (3.0 - 2.0 * H) / (5.0 - 2.0 * H)),
            2.0 * H - 1.0 + eps,
        )
    return VarianceBound(2.0 * H - 2.0 + eps, -2.0 * d, None, None)


def rates_record(regime: RateRegime, T_grid=(2.0**k for k in range(6, 12))) -> dict:
    """JSON-ready summary of the exponents and ``h(T)`` over ``T_grid``."""
    a = optimal_exponent(regime)
    rec = {
        "variant": regime.variant,
        "H": regime.H,
        "beta": regime.beta,
        "d": regime.d,
        "eps": regime.eps,
        "a": a,
        "mse_exponent": mse_exponent_before_eps(regime),
        "mse_exponent_with_eps": theoretical_mse_exponent(regime),
    }
    if regime.H < 0.5:
        rec["alpha_dH"] = alpha_dH(regime.d, regime.H)
    vb = variance_bound_exponents(regime.H, regime.d, eps=regime.eps)
    rec["variance_T_exponent"] = vb.basic_t_exp
    rec["variance_h_exponent"] = vb.basic_h_exp
    rec["bandwidths"] = [{"T": float(T), "h": float(T) ** (-a)} for T in T_grid]
    return rec
