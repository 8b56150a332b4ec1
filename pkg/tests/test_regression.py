import math

import numpy as np
import pytest

from hybridlink.noise import NoiseSpec, TemperatureProfile, gen_powerlaw, gen_temperature
from hybridlink.regression import (
    CollinearityError,
    estimate_lag,
    fit_mismatch,
    lag_scan,
    to_grid,
)
from hybridlink.timeseries import GridError, PhaseSeries, SampleGrid, TemperatureSeries

RAD_PER_K_M = 2 * math.pi * 194.4e12 * 37e-15


def _temps(n=20_000, dt=5.0, seed=1):
    g = SampleGrid(dt, n)
    loc, _ = gen_temperature(TemperatureProfile(sines=((0.3, 86400.0, 0.0),), random_walk=1e-6, seed=seed), g)
    rem, _ = gen_temperature(TemperatureProfile(sines=((0.05, 2000.0, 0.4),), random_walk=1e-6, seed=seed + 1), g)
    return loc, rem


def _lagged(T, lag):
    k = T.grid.samples(lag)
    v = np.asarray(T.values)
    return np.concatenate((np.full(k, v[0]), v[: v.size - k]))


def _synthetic(dL_loc=0.15, dL_rem=0.35, lags=(2300.0, 105.0), noise=0.0, seed=3, n=20_000):
    loc, rem = _temps(n)
    phi = RAD_PER_K_M * (dL_loc * (_lagged(loc, lags[0]) - loc.values[0])
                         + dL_rem * (_lagged(rem, lags[1]) - rem.values[0]))
    if noise:
        phi = phi + np.random.default_rng(seed).normal(scale=noise, size=phi.size)
    return PhaseSeries(loc.grid, phi), loc, rem


# -- lag estimation ----------------------------------------------------------------------

def test_lag_105_recovered_exactly():
    phi, _, rem = _synthetic(dL_loc=0.0)
    assert estimate_lag(phi, rem, 500.0) == 105.0


def test_zero_lag_construction():
    phi, _, rem = _synthetic(dL_loc=0.0, lags=(0.0, 0.0))
    assert estimate_lag(phi, rem, 500.0) == 0.0


def test_independent_phase_gives_no_lag():
    _, _, rem = _synthetic()
    found = 0
    for seed in range(20):
        noise = gen_powerlaw(NoiseSpec(white_fm=1e-3, seed=seed), rem.grid)
        found += estimate_lag(noise, rem, 500.0) is not None
    assert found <= 1


def test_flat_temperature_rejected():
    g = SampleGrid(5.0, 1000)
    with pytest.raises(ValueError, match="flat"):
        lag_scan(PhaseSeries(g, np.arange(1000.0)), TemperatureSeries(g, np.full(1000, 293.0)), 100.0)


def test_short_overlap_rejected():
    loc, _ = _temps(100)
    with pytest.raises(ValueError, match="4 \\* max_lag"):
        lag_scan(PhaseSeries(loc.grid, np.zeros(100)), loc, 200.0)


def test_off_grid_max_lag_rejected():
    loc, _ = _temps(1000)
    with pytest.raises(GridError):
        lag_scan(PhaseSeries(loc.grid, np.zeros(1000)), loc, 102.0)


def test_scan_runs_on_finer_phase_grid():
    phi, _, rem = _synthetic(dL_loc=0.0, n=4000)
    fine = PhaseSeries(SampleGrid(1.0, 20_000), np.repeat(phi.values, 5))
    assert estimate_lag(fine, rem, 500.0) == 105.0


def test_to_grid_rejects_misaligned_grids():
    with pytest.raises(GridError):
        to_grid(PhaseSeries(SampleGrid(2.0, 10), np.zeros(10)), SampleGrid(5.0, 4))
    with pytest.raises(GridError):
        to_grid(PhaseSeries(SampleGrid(1.0, 10, 0.5), np.zeros(10)), SampleGrid(5.0, 2))


# -- regression --------------------------------------------------------------------------

def test_noiseless_recovery_is_exact():
    phi, loc, rem = _synthetic()
    r = fit_mismatch(phi, loc, rem, (2300.0, 105.0))
    assert r.dL_local == pytest.approx(0.15, rel=1e-9)
    assert r.dL_remote == pytest.approx(0.35, rel=1e-9)
    assert r.r_squared == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(r.residual.valid)) < 1e-9


def test_inverse_crime_with_noise():
    phi, loc, rem = _synthetic(noise=0.05)
    lag_l = estimate_lag(phi, loc, 3000.0)
    lag_r = estimate_lag(phi, rem, 500.0)
    assert (lag_l, lag_r) == (2300.0, 105.0)
    r = fit_mismatch(phi, loc, rem, (lag_l, lag_r))
    assert r.dL_local == pytest.approx(0.15, rel=0.05)
    assert r.dL_remote == pytest.approx(0.35, rel=0.05)
    assert np.std(r.residual.valid) == pytest.approx(0.05, rel=0.05)


def test_zero_remote_mismatch_is_consistent_with_zero():
    phi, loc, rem = _synthetic(dL_rem=0.0, noise=0.05)
    r = fit_mismatch(phi, loc, rem, (2300.0, 105.0))
    assert abs(r.dL_remote) < 3 * r.dL_std_errors[1]


def test_error_scales_with_noise():
    errs = []
    for eps in (0.02, 0.2):
        e = []
        for seed in range(10):
            phi, loc, rem = _synthetic(noise=eps, seed=seed)
            r = fit_mismatch(phi, loc, rem, (2300.0, 105.0))
            e.append(np.hypot(r.dL_local - 0.15, r.dL_remote - 0.35))
        errs.append(np.sqrt(np.mean(np.square(e))))
    assert errs[1] / errs[0] == pytest.approx(10.0, rel=0.4)


def test_residual_is_orthogonal_to_regressors():
    phi, loc, rem = _synthetic(noise=0.1)
    r = fit_mismatch(phi, loc, rem, (2300.0, 105.0))
    res = r.residual.valid
    n = res.size
    for term in (r.local_term, r.remote_term):
        x = term.valid
        assert abs(np.corrcoef(res, x)[0, 1]) < 3 / math.sqrt(n)


def test_skipping_drift_subtraction_increases_residual():
    phi, loc, rem = _synthetic(noise=0.05)
    t = phi.grid.times
    drift = PhaseSeries(phi.grid, -2 * math.pi * 2.1e-4 * 1e-3 * t**1.5 / 100)
    total = PhaseSeries(phi.grid, phi.values + drift.values)
    good = fit_mismatch(total, loc, rem, (2300.0, 105.0), drift_term=drift)
    bad = fit_mismatch(total, loc, rem, (2300.0, 105.0))
    assert np.var(bad.residual.valid) > np.var(good.residual.valid)
    assert good.drift_term is not None


def test_collinear_temperatures_rejected():
    loc, _ = _temps(2000)
    phi = PhaseSeries(loc.grid, np.zeros(2000))
    twin = TemperatureSeries(loc.grid, 2 * np.asarray(loc.values) + 1)
    with pytest.raises(CollinearityError, match="correlation"):
        fit_mismatch(phi, loc, twin, (0.0, 0.0))


def test_phase_is_block_averaged_onto_temperature_grid():
    phi, loc, rem = _synthetic(n=2000, lags=(50.0, 10.0))
    fine = PhaseSeries(SampleGrid(1.0, 10_000), np.repeat(phi.values, 5))
    r = fit_mismatch(fine, loc, rem, (50.0, 10.0))
    assert r.residual.grid.dt == 5.0
    assert r.dL_local == pytest.approx(0.15, rel=1e-9)


def test_report_and_save(tmp_path):
    phi, loc, rem = _synthetic(noise=0.05, n=2000, lags=(50.0, 10.0))
    r = fit_mismatch(phi, loc, rem, (50.0, 10.0))
    rep = r.report()
    assert rep["lag_local_s"] == 50.0 and rep["points"] == r.residual.valid.size
    assert "intercept" in rep["note_0"]
    r.save(tmp_path)
    text = (tmp_path / "decomposition.txt").read_text()
    assert "dL_remote_m = " in text
    assert (tmp_path / "decomposition_residual.csv").exists()


def test_off_grid_lag_rejected():
    phi, loc, rem = _synthetic(n=2000, lags=(50.0, 10.0))
    with pytest.raises(GridError):
        fit_mismatch(phi, loc, rem, (52.0, 10.0))
