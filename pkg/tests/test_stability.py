import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridlink.counters import lambda_counter, pi_counter
from hybridlink.noise import NoiseSpec, gen_powerlaw
from hybridlink.stability import (
    Estimator,
    StabilityCurve,
    deviation,
    mdev,
    mean_offset,
    oadev,
    psd,
    tau_ladder,
)
from hybridlink.timeseries import FreqKind, FrequencySeries, GridError, PhaseSeries, SampleGrid

import oracles


def _y(v, gate=1.0, kind=FreqKind.PI):
    v = np.asarray(v, dtype=float)
    return FrequencySeries(SampleGrid(gate, v.size), v, kind, fractional=True)


def _white_pm_y(n, seed, gate=1.0, kind=FreqKind.PI):
    g = SampleGrid(gate, n + 2)
    phi = gen_powerlaw(NoiseSpec(white_pm=1.0, seed=seed), g)
    f = (pi_counter if kind is FreqKind.PI else lambda_counter)(phi, gate)
    return f.to_fractional(194.4e12)


# -- oracle equivalence ----------------------------------------------------------------

@pytest.mark.parametrize("m", [1, 2, 7, 50])
def test_oadev_matches_brute_force(rng, m):
    y = rng.normal(size=2000)
    c = oadev(_y(y, 0.5), [m * 0.5])
    s, n = oracles.oadev(y, 0.5, m)
    assert c.sigmas[0] == pytest.approx(s, rel=1e-12)
    assert c.counts[0] == n


@pytest.mark.parametrize("m", [1, 3, 20])
def test_mdev_matches_brute_force(rng, m):
    y = rng.normal(size=1000)
    c = mdev(_y(y, 2.0), [m * 2.0])
    s, n = oracles.mdev(y, 2.0, m)
    assert c.sigmas[0] == pytest.approx(s, rel=1e-12)
    assert c.counts[0] == n


def test_constant_data_gives_zero(rng):
    y = _y(np.full(500, 3e-15))
    assert np.all(oadev(y).sigmas == 0)
    assert np.all(mdev(y).sigmas == 0)


def test_linear_drift_oadev():
    d = 1e-16
    y = _y(d * np.arange(10_000.0))
    c = oadev(y, [1.0, 10.0, 100.0, 1000.0])
    assert np.allclose(c.sigmas, d * c.taus / math.sqrt(2), rtol=0.01)


def test_white_pm_slopes():
    y = _white_pm_y(100_000, 1)
    assert oadev(y).slope(1, 100) == pytest.approx(-1.0, abs=0.1)
    assert mdev(y).slope(1, 100) == pytest.approx(-1.5, abs=0.1)


@given(st.floats(1e-3, 1e3), st.integers(0, 2**31 - 1))
def test_scale_equivariance(alpha, seed):
    y = np.random.default_rng(seed).normal(size=200)
    a = oadev(_y(alpha * y)).sigmas
    b = alpha * oadev(_y(y)).sigmas
    assert np.allclose(a, b, rtol=1e-10)
    assert np.allclose(mdev(_y(alpha * y)).sigmas, alpha * mdev(_y(y)).sigmas, rtol=1e-10)


def test_mdev_not_above_oadev_for_white_pm():
    ratios = []
    for seed in range(5):
        y = _white_pm_y(20_000, seed)
        taus = [2.0, 5.0, 10.0, 50.0]
        ratios.append(mdev(y, taus).sigmas / oadev(y, taus).sigmas)
    assert np.all(np.mean(ratios, axis=0) < 1.0)


def test_pi_and_lambda_mdev_converge_at_long_tau():
    g = SampleGrid(0.1, 1_000_003)
    phi = gen_powerlaw(NoiseSpec(white_pm=1e-2, white_fm=1e-3, seed=9), g)
    p = mdev(pi_counter(phi, 1.0).to_fractional(194.4e12), [100.0, 1000.0])
    q = mdev(lambda_counter(phi, 1.0).to_fractional(194.4e12), [100.0, 1000.0])
    err = np.hypot(p.error_bars(), q.error_bars())
    assert np.all(np.abs(p.sigmas - q.sigmas) < 3 * err)


def test_non_fractional_input_uses_carrier():
    y = FrequencySeries(SampleGrid(1.0, 100), np.arange(100.0), FreqKind.PI)
    a = oadev(y, [1.0]).sigmas[0]
    b = oadev(y, [1.0], carrier=1.0).sigmas[0]
    assert a == pytest.approx(b / 194.4e12)


def test_long_tau_omitted_with_note():
    c = oadev(_y(np.zeros(10)), [1.0, 4.0, 6.0])
    assert list(c.taus) == [1.0, 4.0]
    assert "omitted" in c.notes[0]
    m = mdev(_y(np.zeros(10)), [1.0, 4.0])
    assert list(m.taus) == [1.0] and m.notes


def test_off_gate_tau_rejected():
    with pytest.raises(GridError):
        oadev(_y(np.zeros(10)), [1.5])


def test_tau_ladder():
    assert list(tau_ladder(1.0, 1000.0)) == [1, 2, 5, 10, 20, 50, 100, 200]
    assert list(tau_ladder(5.0, 1000.0)) == [5, 10, 25, 50, 100]


def test_curve_labels_and_csv_round_trip(tmp_path, rng):
    c = oadev(_y(rng.normal(size=100), kind=FreqKind.LAMBDA))
    assert c.label == "OADEV(Lambda)"
    c.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "tau_s,sigma,count,estimator,source_kind"
    back = StabilityCurve.from_csv(tmp_path / "c.csv")
    assert back.source_kind is FreqKind.LAMBDA and back.estimator is Estimator.OADEV
    assert np.array_equal(back.sigmas, c.sigmas) and np.array_equal(back.counts, c.counts)
    assert deviation(_y(rng.normal(size=100)), "MDEV").estimator is Estimator.MDEV


def test_curve_invariants():
    with pytest.raises(ValueError):
        StabilityCurve([2.0, 1.0], [1, 1], [1, 1], Estimator.OADEV, FreqKind.PI)
    with pytest.raises(ValueError):
        StabilityCurve([1.0], [-1.0], [1], Estimator.OADEV, FreqKind.PI)
    with pytest.raises(ValueError):
        StabilityCurve([1.0], [1.0], [0], Estimator.OADEV, FreqKind.PI)


# -- PSD --------------------------------------------------------------------------------

def test_psd_sine_parseval():
    dt, A, f0 = 1e-3, 0.7, 50.0
    g = SampleGrid(dt, 2**16)
    f, p = psd(PhaseSeries(g, A * np.sin(2 * np.pi * f0 * g.times)), 8)
    df = f[1] - f[0]
    k = int(np.argmax(p))
    power = np.sum(p[k - 3:k + 4]) * df
    assert f[k] == pytest.approx(f0, abs=df)
    assert power == pytest.approx(A**2 / 2, rel=0.05)


def test_psd_white_level(rng):
    dt, s2 = 0.01, 0.3
    g = SampleGrid(dt, 2**17)
    _, p = psd(PhaseSeries(g, rng.normal(scale=math.sqrt(s2), size=g.n)), 16)
    assert np.mean(p[1:]) == pytest.approx(oracles.welch_white_level(s2, dt), rel=0.1)


def test_psd_zero_and_short():
    g = SampleGrid(1.0, 100)
    _, p = psd(PhaseSeries(g, np.zeros(100)))
    assert np.all(p == 0)
    with pytest.raises(ValueError):
        psd(PhaseSeries(SampleGrid(1.0, 10), np.zeros(10)), 8)
    with pytest.raises(ValueError):
        psd(PhaseSeries(g, np.zeros(100)), 0)


# -- mean offset --------------------------------------------------------------------------

def test_mean_offset_constant():
    for method in ("LambdaLongTermADEV", "PiSegmentStd"):
        est = mean_offset(_y(np.full(1000, 4e-19)), method)
        assert est.mean == pytest.approx(4e-19)
        assert est.uncertainty == pytest.approx(0.0, abs=1e-30)


def test_lambda_method_uses_longest_feasible_tau():
    est = mean_offset(_y(np.zeros(10_000), kind=FreqKind.LAMBDA), "LambdaLongTermADEV", min_intervals=5)
    assert est.tau == 2000.0
    assert est.notes == []


def test_insufficient_data_suggests_tau():
    with pytest.raises(ValueError, match="largest feasible tau is 2 s"):
        mean_offset(_y(np.zeros(10)), "LambdaLongTermADEV", min_intervals=5, tau=5.0)
    with pytest.raises(ValueError, match="shorter"):
        mean_offset(_y(np.zeros(4)), "LambdaLongTermADEV", min_intervals=5)
    assert mean_offset(_y(np.zeros(10)), "LambdaLongTermADEV", min_intervals=5, tau=2.0).tau == 2.0
    with pytest.raises(ValueError):
        mean_offset(_y(np.zeros(1)), "PiSegmentStd")
    with pytest.raises(ValueError):
        mean_offset(_y(np.zeros(10)), "median")


def test_pi_normalization_flag(rng):
    y = _y(rng.normal(size=400))
    a = mean_offset(y, "PiSegmentStd")
    b = mean_offset(y, "PiSegmentStd", normalization="sqrt")
    assert b.uncertainty == pytest.approx(a.uncertainty * 20)
    with pytest.raises(ValueError):
        mean_offset(y, "PiSegmentStd", normalization="none")


def test_lambda_method_coverage():
    hits = 0
    for seed in range(200):
        y = _white_pm_y(2000, 1000 + seed, kind=FreqKind.LAMBDA)
        est = mean_offset(y, "LambdaLongTermADEV")
        hits += abs(est.mean) <= 2 * est.uncertainty
    assert hits >= 190


def test_lambda_and_pi_means_agree():
    g = SampleGrid(1.0, 20_003)
    phi = gen_powerlaw(NoiseSpec(white_pm=1.0, seed=77), g)
    lam = mean_offset(lambda_counter(phi, 1.0).to_fractional(194.4e12), "LambdaLongTermADEV")
    pi = mean_offset(pi_counter(phi, 1.0).to_fractional(194.4e12), "PiSegmentStd")
    assert abs(lam.mean - pi.mean) <= math.hypot(lam.uncertainty, pi.uncertainty)
