import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracdens.errors import BudgetTooSmall, ConfigError, InsufficientPoints, NonPositiveValue
from fracdens.harness import (
    BandwidthSpec,
    ExperimentConfig,
    OracleBudget,
    OracleDensity,
    build_oracle,
    closed_form_oracle,
    fit_loglog_slope,
    gaussian_density,
    mc_mse,
    mc_variance_scaling,
    variance_h_scaling,
    variance_target,
    write_result,
)
from fracdens.seeding import DOMAIN_EXPERIMENT, DOMAIN_ORACLE


def small_cfg(**kw):
    base = dict(H=0.3, T_grid=[8.0, 16.0, 32.0], replicates=4, dt=0.05, burn_in=5.0, seed=5, chunk=2,
                query_points=[[0.0], [0.5]], bandwidth=0.4)
    base.update(kw)
    return ExperimentConfig(**base)


def normal_half():
    return closed_form_oracle(gaussian_density([0.0], [[0.5]]), [[0.0], [0.5]], 1)


# slope fitting

def test_fit_exact_power_law():
    fit = fit_loglog_slope([(T, T ** (-2 / 3)) for T in (10.0, 100.0, 1000.0)])
    assert abs(fit.slope + 2 / 3) < 1e-12
    assert fit.stderr < 1e-12


def test_fit_constant():
    assert abs(fit_loglog_slope([(1.0, 3.0), (2.0, 3.0), (4.0, 3.0)]).slope) < 1e-15


def test_fit_noisy_synthetic():
    rng = np.random.default_rng(0)
    Ts = 2.0 ** np.arange(4, 14)
    vals = 5.0 / Ts * (1 + 0.01 * rng.standard_normal(Ts.size))
    assert -1.05 <= fit_loglog_slope(zip(Ts, vals)).slope <= -0.95


@given(st.floats(-3, 3), st.floats(0.1, 10))
@settings(max_examples=50)
def test_fit_recovers_any_power(p, c):
    Ts = [2.0, 8.0, 32.0, 128.0]
    fit = fit_loglog_slope([(T, c * T**p) for T in Ts])
    assert fit.slope == pytest.approx(p, abs=1e-9)


def test_fit_errors():
    with pytest.raises(InsufficientPoints):
        fit_loglog_slope([(1.0, 1.0), (2.0, 0.5)])
    with pytest.raises(NonPositiveValue):
        fit_loglog_slope([(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)])


# configuration

def test_config_validation():
    with pytest.raises(ConfigError):
        small_cfg(kernel_order=1, beta_assumed=2).validate()
    with pytest.raises(ConfigError):
        small_cfg(T_grid=[16.0, 8.0]).validate()
    with pytest.raises(ConfigError):
        small_cfg(replicates=1).validate()
    with pytest.raises(ConfigError):
        small_cfg(query_points=[[0.0, 1.0]]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        BandwidthSpec.from_dict({"rule": "magic"})


def test_config_round_trip_and_hash():
    cfg = small_cfg()
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.config_hash() == cfg.config_hash()
    assert small_cfg(seed=6).config_hash() != cfg.config_hash()
    assert ExperimentConfig.from_dict({"kernel": {"family": "legendre", "M": 4}}).kernel_order == 4


def test_bandwidth_rules():
    assert BandwidthSpec.from_dict({"rule": "basic"}).h_for(64.0, 0, 0.25, 2.0, 1) == pytest.approx(0.5)
    assert BandwidthSpec.from_dict([0.3, 0.2]).h_for(1.0, 1, 0.25, 2.0, 1) == 0.2
    assert BandwidthSpec.from_dict(0.3).h_for(1e6, 0, 0.25, 2.0, 1) == 0.3


def test_dt_rule():
    assert ExperimentConfig().dt_for([0.3]) == 0.01
    assert ExperimentConfig().dt_for([0.05]) == pytest.approx(0.005)
    assert ExperimentConfig(dt=0.02).dt_for([0.05]) == 0.02


# experiments

def test_same_seed_gives_zero_variance():
    res = mc_mse(small_cfg(replicates=2), normal_half(), same_seed=True)
    assert np.all(res.var == 0.0)
    np.testing.assert_array_equal(res.values[:, 0], res.values[:, 1])


def test_replicates_distinct_and_seeded():
    a = mc_mse(small_cfg(), normal_half())
    b = mc_mse(small_cfg(), normal_half())
    assert np.array_equal(a.values, b.values)
    assert np.all(a.var > 0)
    c = mc_mse(small_cfg(seed=6), normal_half())
    assert not np.array_equal(a.values, c.values)


def test_threads_bitwise_identical(tmp_path):
    cfg = small_cfg()
    serial = mc_mse(cfg, normal_half(), workers=1)
    parallel = mc_mse(cfg, normal_half(), workers=2)
    assert np.array_equal(serial.values, parallel.values)
    write_result(serial, tmp_path / "a", "r")
    write_result(parallel, tmp_path / "b", "r")
    assert (tmp_path / "a" / "r.csv").read_bytes() == (tmp_path / "b" / "r.csv").read_bytes()


def test_chunking_does_not_change_values():
    a = mc_mse(small_cfg(chunk=1), normal_half())
    b = mc_mse(small_cfg(chunk=4), normal_half())
    assert np.array_equal(a.values, b.values)


def test_csv_layout(tmp_path):
    res = mc_mse(small_cfg(), normal_half())
    csv_path, json_path = write_result(res, tmp_path, "mse")
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["T", "h", "x_1", "replicate", "pi_hat"]
    assert len(rows) == 1 + 3 * 4 * 2
    first = rows[1]
    assert float(first[0]) == 8.0 and float(first[1]) == 0.4 and int(first[3]) == 0
    assert float(first[4]) == res.values[0, 0, 0]
    assert b"\r\n" not in open(csv_path, "rb").read()


def test_result_invariants():
    res = mc_mse(small_cfg(), normal_half())
    assert np.all(res.var >= 0)
    assert res.values.shape == (3, 4, 2)
    R = res.values.shape[1]
    recon = res.var * (R - 1) / R + res.bias**2
    np.testing.assert_allclose(res.mse, recon, rtol=1e-10)
    assert res.meta["config_hash"] == small_cfg().config_hash()
    assert res.meta["seed_domain"] == DOMAIN_EXPERIMENT


def test_oracle_from_experiment_domain_rejected():
    orc = normal_half()
    orc.meta["seed_domain"] = DOMAIN_EXPERIMENT
    with pytest.raises(ValueError):
        mc_mse(small_cfg(), orc)


def test_failed_cell_is_flagged_not_fatal():
    # explicit Euler on a unit-rate linear drift diverges for dt > 2
    cfg = small_cfg(T_grid=[6000.0, 12000.0, 24000.0], dt=3.0, burn_in=0.0, replicates=2, bandwidth=0.5)
    with np.errstate(all="ignore"):
        res = mc_mse(cfg, normal_half())
    assert all(res.failed)
    assert np.all(np.isnan(res.values))
    assert res.fits["mse_slope_x0"] == "InsufficientPoints"


def test_variance_scaling_needs_fixed_h_and_flags_short_grid():
    with pytest.raises(ConfigError):
        mc_variance_scaling(small_cfg(bandwidth={"rule": "basic"}))
    res = mc_variance_scaling(small_cfg(T_grid=[8.0]))
    assert res.fits["var_slope_x0"] == "InsufficientPoints"
    assert res.checks["var_slope_x0"] is False


@pytest.mark.parametrize("H,expected", [(0.25, (-1.0, -1.25, -0.75)), (0.75, (-0.5, -0.75, -0.25))])
def test_variance_targets(H, expected):
    assert variance_target(H) == pytest.approx(expected)


@pytest.mark.parametrize("H,expected", [(0.25, 5 / 4.5), (0.1, 7 / 6)])
def test_variance_h_predicted_exponent(H, expected):
    res = variance_h_scaling(small_cfg(H=H, h_grid=[0.6, 0.4, 0.3], T_grid=[16.0]))
    assert res.meta["predicted_exponent"] == pytest.approx(expected)
    assert isinstance(res.meta["h_regime_visible"], bool)


def test_variance_h_degenerate_and_regime():
    res = variance_h_scaling(small_cfg(h_grid=[0.4, 0.4, 0.4], T_grid=[16.0]))
    assert res.fits["scaled_var_slope_x0"] == "Degenerate"
    assert res.checks["scaled_var_slope_x0"] is False
    with pytest.raises(ConfigError):
        variance_h_scaling(small_cfg(H=0.7, h_grid=[0.4, 0.3, 0.2], T_grid=[16.0]))


# oracle

def test_oracle_precondition_and_budget():
    with pytest.raises(ValueError):
        build_oracle({"name": "fou"}, 1.0, 0.5, OracleBudget(T_oracle=100.0), seed=0, max_T=10.0)
    with pytest.raises(BudgetTooSmall):
        build_oracle({"name": "fou"}, 1.0, 0.5, OracleBudget(T_oracle=20.0, split_tol=1e-6, burn_in=5.0), seed=0)


def test_oracle_classical_ou_matches_normal():
    orc = build_oracle({"name": "fou", "kappa": 1.0}, 1.0, 0.5, OracleBudget(T_oracle=10000.0, lo=-2.5, hi=2.5),
                       seed=1)
    xs = np.linspace(-2.0, 2.0, 81)[:, None]
    ref = gaussian_density([0.0], [[0.5]])(xs)
    assert np.max(np.abs(orc.at(xs) - ref)) <= 0.02 * ref.max()
    assert orc.provenance == "long_run_empirical"
    assert orc.meta["seed_domain"] == DOMAIN_ORACLE
    assert orc.meta["gaussian_fit"]["var"] == pytest.approx(0.5, rel=0.05)
    assert abs(orc.meta["mass"] - 1.0) < 0.01


def test_oracle_symmetric_at_rough_hurst():
    orc = build_oracle({"name": "fou", "kappa": 1.0}, 1.0, 0.25, OracleBudget(T_oracle=5000.0, lo=-2.5, hi=2.5),
                       seed=2)
    pos = orc.points[orc.points[:, 0] > 0]
    band = 4 * np.hypot(orc.stderr_at(pos), orc.stderr_at(-pos))
    assert np.all(np.abs(orc.at(pos) - orc.at(-pos)) < band)
    assert orc.meta["gaussian_fit"]["var"] == pytest.approx(0.25 * math.gamma(0.5), rel=0.05)


def test_oracle_double_well_bimodal():
    orc = build_oracle({"name": "double_well"}, 0.7, 0.5, OracleBudget(T_oracle=5000.0, lo=-3.0, hi=3.0), seed=2)
    x, v = orc.points[:, 0], orc.values
    keep = (x >= -0.3) & (v > 0.05 * v.max())
    order = np.argsort(x[keep])
    coarse = v[keep][order][::2]
    changes = np.sum(np.diff(np.sign(np.diff(coarse))) != 0)
    assert changes == 2
    assert orc.at([[1.0]])[0] > orc.at([[0.0]])[0]


def test_oracle_round_trip_and_interpolation():
    orc = build_oracle({"name": "fou"}, 1.0, 0.5, OracleBudget(T_oracle=200.0, burn_in=5.0, split_tol=1.0), seed=4,
                       extra_points=[[0.0], [0.123]])
    again = OracleDensity.from_dict(orc.to_dict())
    np.testing.assert_array_equal(again.values, orc.values)
    assert again.at([[0.123]])[0] == orc.at([[0.123]])[0]
    mid = orc.at([[0.025]])[0]
    lo, hi = sorted(orc.at([[0.0], [0.05]]))
    assert lo - 0.05 <= mid <= hi + 0.05
    assert orc.at([[10.0]])[0] == 0.0


def test_closed_form_oracle():
    orc = normal_half()
    assert orc.provenance == "closed_form_reference"
    assert orc.at([[0.0]])[0] == pytest.approx(1 / math.sqrt(math.pi))
