import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import least_squares

from homdip import optics
from homdip.analysis import (DipNotCapturedError, NormalizedPoints, bootstrap_uncertainty,
                             dip_halfwidth, fit_dip, normalize_dip, read_points_csv, scan_points,
                             synthetic_scan, visibility_point_estimate, write_plot_csv)
from homdip.montecarlo import DipScan, ScanPoint

TP = optics.tp_from_fwhm(120e-12)
GRID = np.linspace(-60e-12, 60e-12, 41)
LAM = 1550e-9


def noiseless(v=0.465, baseline=1.0, t_p=TP, center=0.0, grid=GRID):
    s = synthetic_scan(grid, baseline=baseline, visibility=v, t_p=t_p, center=center)
    y = s.coincidences
    return NormalizedPoints(grid, y, np.full(y.shape, 0.01 * baseline))


def test_dip_halfwidth_value():
    assert dip_halfwidth(TP, LAM) == pytest.approx(17.70e-12, rel=2e-3)


@pytest.mark.parametrize("v,t_p,center", [(0.465, TP, 0.0), (0.5, TP, 5e-12), (0.2, 0.8 * TP, -8e-12),
                                          (0.05, 1.3 * TP, 2e-12)])
def test_noiseless_recovery(v, t_p, center):
    f = fit_dip(noiseless(v, t_p=t_p, center=center))
    assert f.visibility == pytest.approx(v, abs=1e-6)
    assert f.t_p == pytest.approx(t_p, rel=1e-6)
    assert f.center == pytest.approx(center, abs=1e-18)
    assert f.baseline == pytest.approx(1.0, rel=1e-6)
    assert f.chi2 <= 1e-9
    assert np.max(np.abs(f.model(GRID) - noiseless(v, t_p=t_p, center=center).value)) <= 1e-9


def test_flat_data_flags_zero_visibility():
    pts = NormalizedPoints(GRID, np.ones(GRID.size), np.full(GRID.size, 0.01))
    f = fit_dip(pts)
    assert f.visibility == pytest.approx(0.0, abs=1e-9)
    assert "visibility_at_bound" in f.flags


def test_too_few_points():
    with pytest.raises(ValueError):
        fit_dip(NormalizedPoints(GRID[:4], np.ones(4), np.ones(4)))
    with pytest.raises(ValueError):
        fit_dip(NormalizedPoints(GRID, np.ones(41), np.zeros(41)))


def test_scale_equivariance():
    rng = np.random.default_rng(1)
    base = noiseless()
    noisy = NormalizedPoints(GRID, base.value + rng.normal(0, 0.01, GRID.size), base.sigma)
    f1 = fit_dip(noisy)
    f2 = fit_dip(NormalizedPoints(GRID, noisy.value * 250.0, noisy.sigma * 250.0))
    assert f2.baseline == pytest.approx(250 * f1.baseline, rel=1e-7)
    assert f2.visibility == pytest.approx(f1.visibility, abs=1e-8)
    assert f2.sigma_visibility == pytest.approx(f1.sigma_visibility, rel=1e-6)


def test_reflection_invariance():
    rng = np.random.default_rng(2)
    base = noiseless()
    y = base.value + rng.normal(0, 0.01, GRID.size)
    f1 = fit_dip(NormalizedPoints(GRID, y, base.sigma))
    f2 = fit_dip(NormalizedPoints(-GRID[::-1], y[::-1], base.sigma))
    assert f2.visibility == pytest.approx(f1.visibility, abs=1e-8)
    assert f2.center == pytest.approx(-f1.center, abs=1e-18)
    assert abs(f2.t_p) == pytest.approx(abs(f1.t_p), rel=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.55), st.floats(0.7, 1.4), st.floats(-10e-12, 10e-12), st.integers(0, 2 ** 32))
def test_fit_matches_scipy(v, tscale, center, seed):
    rng = np.random.default_rng(seed)
    base = noiseless(v, t_p=TP * tscale, center=center)
    y = base.value + rng.normal(0, 0.01, GRID.size)
    pts = NormalizedPoints(GRID, y, base.sigma)
    f = fit_dip(pts)
    k = 2 * math.pi * optics.C / LAM ** 2 * 1e-24

    def resid(p):
        return (p[0] * (1 - p[1] * np.exp(-(p[2] * k * (GRID * 1e12 - p[3])) ** 2)) - y) / 0.01

    ref = least_squares(resid, [f.baseline, 0.3, 72.0, 0.0], bounds=([0, 0, 1, -60], [10, 0.6, 500, 60]),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14)
    chi_ref = float(np.sum(ref.fun ** 2))
    assert f.chi2 <= chi_ref * (1 + 1e-6) + 1e-9
    if abs(f.chi2 - chi_ref) < 1e-6 * chi_ref:
        assert f.visibility == pytest.approx(ref.x[1], abs=1e-5)


def test_covariance_matches_monte_carlo_spread():
    rng = np.random.default_rng(3)
    vs, sig = [], []
    for _ in range(200):
        s = synthetic_scan(GRID, baseline=2000.0, visibility=0.465, t_p=TP, rng=rng)
        f = fit_dip(scan_points(s))
        vs.append(f.visibility)
        sig.append(f.sigma_visibility)
    pull = (np.array(vs) - 0.465) / np.array(sig)
    assert abs(pull.mean()) < 0.25
    assert 0.8 < pull.std() < 1.2


# --- normalization ----------------------------------------------------------

def big_scan(rng=None, baseline=1e5, grid=GRID):
    return synthetic_scan(grid, baseline=baseline, visibility=0.465, t_p=TP,
                          rng=rng or np.random.default_rng(4))


def test_strategies_agree():
    scan = big_scan()
    fa = fit_dip(normalize_dip(scan, "fit-baseline"))
    fb = fit_dip(normalize_dip(scan, "wings"))
    assert fb.visibility == pytest.approx(fa.visibility, rel=0.01)
    assert fa.baseline == pytest.approx(1.0, abs=1e-6)


def test_accidentals_strategy():
    pts = [ScanPoint(x, 500, (0, 0), 1000.0, 1, 16) for x in (-1e-12, 0.0, 1e-12)]
    n = normalize_dip(DipScan(pts), "accidentals")
    assert np.allclose(n.value, 0.5)
    assert np.allclose(n.sigma, math.sqrt(500 / 1e6 + 500 ** 2 / (1e9 * 16)))
    with pytest.raises(ValueError):
        normalize_dip(DipScan([ScanPoint(0.0, 1, (0, 0), 0.0, 1)]), "accidentals")
    with pytest.raises(ValueError):
        normalize_dip(DipScan(pts), "median")


def test_integration_rescaling():
    pts = [ScanPoint(0.0, 100, (0, 0), 0.0, 10), ScanPoint(1e-12, 100, (0, 0), 0.0, 20)]
    r = scan_points(DipScan(pts))
    assert list(r.value) == [200.0, 100.0]


# --- point estimate ---------------------------------------------------------

def test_point_estimate_noiseless():
    pe = visibility_point_estimate(noiseless())
    assert pe.visibility == pytest.approx(0.465, abs=1e-4)
    assert pe.minimum_index == 20


def test_point_estimate_edge_minimum():
    pts = noiseless(center=70e-12)
    with pytest.raises(DipNotCapturedError):
        visibility_point_estimate(pts)


def test_point_estimate_agrees_with_fit():
    scan = big_scan(baseline=4000.0)
    pts = normalize_dip(scan, "wings")
    pe = visibility_point_estimate(pts)
    f = fit_dip(pts)
    assert abs(pe.visibility - f.visibility) <= 2 * math.hypot(pe.sigma, f.sigma_visibility)


# --- bootstrap --------------------------------------------------------------

def test_bootstrap_near_zero_for_huge_counts():
    b = bootstrap_uncertainty(big_scan(baseline=1e12), 100, seed=1)
    assert b.sigma < 1e-5
    assert b.n_failed == 0


def test_bootstrap_matches_covariance():
    scan = big_scan(baseline=4000.0)
    f = fit_dip(normalize_dip(scan))
    b = bootstrap_uncertainty(scan, 300, seed=2)
    assert b.sigma == pytest.approx(f.sigma_visibility, rel=0.3)


def test_bootstrap_scales_with_statistics():
    rng = np.random.default_rng(5)
    s1 = bootstrap_uncertainty(big_scan(rng, 2000.0), 300, seed=3).sigma
    s2 = bootstrap_uncertainty(big_scan(rng, 4000.0), 300, seed=3).sigma
    assert s2 / s1 == pytest.approx(1 / math.sqrt(2), rel=0.15)


def test_bootstrap_deterministic_and_min_resamples():
    scan = big_scan(baseline=1000.0)
    a = bootstrap_uncertainty(scan, 100, seed=9)
    assert np.array_equal(a.values, bootstrap_uncertainty(scan, 100, seed=9).values)
    with pytest.raises(ValueError):
        bootstrap_uncertainty(scan, 50)


# --- files ------------------------------------------------------------------

def test_plot_csv_round_trip(tmp_path):
    scan = big_scan(baseline=1000.0)
    raw = scan_points(scan)
    f = fit_dip(raw)
    write_plot_csv(tmp_path / "p.csv", raw, f)
    back = read_points_csv(tmp_path / "p.csv")
    assert np.allclose(back.value, raw.value / f.baseline, rtol=1e-9)
    assert fit_dip(back).visibility == pytest.approx(f.visibility, abs=1e-7)


def test_scan_json_round_trip_keeps_fractional_counts():
    s = synthetic_scan(GRID, baseline=1.0, visibility=0.465, t_p=TP)
    back = DipScan.from_dict(s.to_dict())
    assert np.array_equal(back.coincidences, s.coincidences)
