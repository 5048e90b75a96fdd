import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracdens.errors import InvalidRegime
from fracdens.rates import (
    RateRegime,
    alpha_dH,
    bandwidth,
    mse_exponent_before_eps,
    optimal_exponent,
    rates_record,
    theoretical_mse_exponent,
    variance_bound_exponents,
)


@pytest.mark.parametrize("d,H,expected", [(1, 0.25, 8 / 9), (3, 0.4, 3.5)])
def test_alpha_examples(d, H, expected):
    assert alpha_dH(d, H) == pytest.approx(expected)


def test_alpha_near_half():
    assert alpha_dH(1, 0.5 - 1e-12) == pytest.approx(1.0, abs=1e-9)
    # then 2 beta / (2 beta + alpha) = beta / (beta + d - 1/2)... at d=1 equals 2 beta / (2 beta + 1)
    beta = 2.0
    assert 2 * beta / (2 * beta + alpha_dH(1, 0.5 - 1e-12)) == pytest.approx(2 * beta / (2 * beta + 1), abs=1e-9)


def test_alpha_rejects_long_memory():
    with pytest.raises(InvalidRegime):
        alpha_dH(1, 0.7)


@pytest.mark.parametrize("variant,H,expected", [
    ("basic", 0.25, 1 / 6),
    ("basic", 0.75, 0.25 / 3 - 0.01),
    ("improved", 0.25, 9 / 44),
])
def test_optimal_exponent_examples(variant, H, expected):
    assert optimal_exponent(RateRegime(variant, H, 2.0, 1, 0.01)) == pytest.approx(expected, abs=1e-12)


def test_mse_exponent_examples():
    assert theoretical_mse_exponent(RateRegime("basic", 0.25, 2.0, 1)) == pytest.approx(2 / 3)
    assert theoretical_mse_exponent(RateRegime("basic", 0.75, 2.0, 1, 0.01)) == pytest.approx(2 * 0.25 * 2 / 3 - 0.01)
    assert mse_exponent_before_eps(RateRegime("improved", 0.25, 2.0, 1)) == pytest.approx(4 / (4 + 8 / 9))


@pytest.mark.parametrize("beta,d", [(1.0, 1), (2.0, 2), (3.5, 3)])
def test_improved_near_zero_hurst(beta, d):
    H, eps = 1e-9, 0.01
    got = theoretical_mse_exponent(RateRegime("improved", H, beta, d, eps))
    assert got == pytest.approx(min(5 * beta / (5 * beta + 2 * d), 2 * beta / (beta + d)) - eps, abs=1e-6)


def test_bandwidth_examples():
    assert bandwidth(64.0, 1 / 6) == pytest.approx(0.5)
    with pytest.warns(UserWarning):
        assert bandwidth(1.0, 0.3) == 1.0
    assert bandwidth(1e6, 9 / 44) == pytest.approx(10 ** (-54 / 44))


def test_variance_exponents():
    vb = variance_bound_exponents(0.25, 1)
    assert (vb.basic_t_exp, vb.basic_h_exp) == (-1.0, -2.0)
    assert vb.improved_h_exps == pytest.approx((4.0, 5 / 4.5))
    assert vb.binding_h_exponent() == pytest.approx(5 / 4.5)
    assert variance_bound_exponents(0.75, 1, eps=0.01).basic_t_exp == pytest.approx(-0.49)
    assert variance_bound_exponents(0.1, 1).binding_h_exponent() == pytest.approx(7 / 6)
    bracket = vb.improved_bracket(0.1, 1e4)
    assert bracket == pytest.approx(max(0.1**4, 0.1 ** (5 / 4.5), 1e4 ** (-0.5 + 0.01)))


def dominance_grid():
    Hs = (np.arange(34) + 0.5) / 68
    betas = np.linspace(1.0, 4.0, 10)
    return list(itertools.product(Hs, betas, (1, 2, 3)))


def test_improved_dominates_without_slack():
    grid = dominance_grid()
    assert len(grid) >= 1000
    for H, beta, d in grid:
        imp = mse_exponent_before_eps(RateRegime("improved", H, beta, d, 0.01))
        bas = mse_exponent_before_eps(RateRegime("basic", H, beta, d, 0.01))
        assert imp >= bas - 1e-12


def test_slack_reverses_dominance_only_near_half():
    # improved minus basic equals min(gap_alpha, (1-2H) beta/(beta+d)) - eps
    eps = 0.01
    for H, beta, d in dominance_grid():
        imp = theoretical_mse_exponent(RateRegime("improved", H, beta, d, eps))
        bas = theoretical_mse_exponent(RateRegime("basic", H, beta, d, eps))
        gap_alpha = 2 * beta / (2 * beta + alpha_dH(d, H)) - beta / (beta + d)
        gap_h = (1 - 2 * H) * beta / (beta + d)
        assert imp - bas == pytest.approx(min(gap_alpha, gap_h) - eps, abs=1e-12)
        if H <= 0.5 - eps * (beta + d) / (2 * beta) - 1e-9 and gap_alpha >= eps:
            assert imp >= bas


def test_continuity_at_half():
    for beta, d in [(1.0, 1), (2.0, 2), (4.0, 3)]:
        left = mse_exponent_before_eps(RateRegime("basic", 0.5 - 1e-9, beta, d))
        right = mse_exponent_before_eps(RateRegime("basic", 0.5 + 1e-9, beta, d))
        assert left == pytest.approx(right, abs=1e-8)


@given(st.integers(1, 10), st.floats(1e-6, 0.5 - 1e-6, exclude_max=True))
def test_alpha_positive(d, H):
    assert alpha_dH(d, H) > 0


@given(st.sampled_from(["basic", "improved"]), st.floats(0.01, 0.99), st.floats(1.0, 6.0), st.integers(1, 4))
def test_exponents_positive_and_pure(variant, H, beta, d):
    if H == 0.5 or (variant == "improved" and H >= 0.5):
        with pytest.raises(InvalidRegime):
            RateRegime(variant, H, beta, d)
        return
    r = RateRegime(variant, H, beta, d, 0.01)
    assert optimal_exponent(r) == optimal_exponent(r)
    assert theoretical_mse_exponent(r) <= mse_exponent_before_eps(r)


@pytest.mark.parametrize("kwargs", [
    {"variant": "basic", "H": 0.5, "beta": 2, "d": 1},
    {"variant": "improved", "H": 0.6, "beta": 2, "d": 1},
    {"variant": "basic", "H": 0.3, "beta": 0.5, "d": 1},
    {"variant": "fancy", "H": 0.3, "beta": 2, "d": 1},
])
def test_invalid_regimes(kwargs):
    with pytest.raises(InvalidRegime):
        RateRegime(**kwargs)


def test_record_is_json_ready():
    rec = rates_record(RateRegime("improved", 0.25, 2.0, 1, 0.01), [64.0, 1e6])
    assert rec["a"] == pytest.approx(9 / 44)
    assert rec["mse_exponent"] == pytest.approx(0.8181818, abs=1e-6)
    assert rec["bandwidths"][0]["h"] == pytest.approx(64 ** (-9 / 44))
    assert math.isfinite(rec["alpha_dH"])
