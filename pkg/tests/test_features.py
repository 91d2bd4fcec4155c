import math

import numpy as np
import pytest

from ctclass.errors import ValidationError
from ctclass.features import (
    FeatureUnavailable,
    SvmType,
    WindowConfig,
    add_slopes,
    detrend,
    feature_track,
    feature_vector_at,
    gaussian_variance,
    lag1_autocorr,
    log10_gv_of_ac,
    slope,
    tsp_tracks,
)
from ctclass.model import Trajectory

DT = 0.001


def traj(x, t0=0.0, dt=DT):
    return Trajectory(t0, dt, np.asarray(x, dtype=float))


class TestDetrend:
    def test_constant_maps_to_zero(self):
        tr = traj(np.full(5000, 3.7))
        out = detrend(tr, 30)
        assert np.max(np.abs(out.x)) < 1e-12

    def test_linear_ramp_interior(self):
        n = 5000
        a = 2.5
        tr = traj(a * np.arange(n) * DT)
        out = detrend(tr, 30)
        interior = out.x[150:-150]  # beyond the 4-sigma kernel radius
        assert np.max(np.abs(interior)) < 1e-6 * np.max(np.abs(tr.x))

    def test_frequency_response_against_kernel_transform(self):
        # oracle: the attenuation of each tone follows the discrete
        # transform of the truncated kernel
        bw = 30
        radius = 4 * bw
        i = np.arange(-radius, radius + 1)
        kernel = np.exp(-0.5 * (i / bw) ** 2)
        kernel /= kernel.sum()

        def response(f_hz):
            return float(np.sum(kernel * np.cos(2 * math.pi * f_hz * i * DT)))

        f_slow, f_fast = 0.5, 40.0
        n = 40000
        t = np.arange(n) * DT
        tr = traj(np.sin(2 * math.pi * f_slow * t) + 0.5 * np.sin(2 * math.pi * f_fast * t))
        out = detrend(tr, bw)

        def amplitude(x, f_hz):
            c = np.cos(2 * math.pi * f_hz * t[300:-300])
            s = np.sin(2 * math.pi * f_hz * t[300:-300])
            seg = x[300:-300]
            return math.hypot(2 * np.mean(seg * c), 2 * np.mean(seg * s))

        want_fast = 0.5 * (1.0 - response(f_fast))
        want_slow = 1.0 * (1.0 - response(f_slow))
        assert response(f_fast) < 0.05  # fast component survives detrending
        assert amplitude(out.x, f_fast) == pytest.approx(want_fast, rel=0.05)
        assert amplitude(out.x, f_slow) == pytest.approx(want_slow, rel=0.05, abs=0.01)
        assert amplitude(out.x, f_fast) > 0.95 * 0.5
        assert amplitude(out.x, f_slow) < 0.5 * want_fast


class TestGaussianVariance:
    def test_zero_window(self):
        tr = traj(np.zeros(3000))
        assert gaussian_variance(tr, 2.0, 1.0) == 0.0

    def test_constant_window_gives_square(self):
        tr = traj(np.full(3000, -0.7))
        assert gaussian_variance(tr, 2.0, 1.0) == pytest.approx(0.49, rel=1e-12)

    def test_unit_sine_near_half(self):
        # oracle: the same weighted mean evaluated on a 20x finer grid
        w = 40.0
        n = 3001
        t = np.arange(n) * DT
        tr = traj(np.sin(w * t))
        got = gaussian_variance(tr, 3.0, 1.0)

        tf = np.linspace(2.0, 3.0, 20001)
        wts = np.exp(-0.5 * ((tf - 2.5) / (1.0 / 6.0)) ** 2)
        oracle = float(np.sum(wts * np.sin(w * tf) ** 2) / np.sum(wts))
        assert got == pytest.approx(0.5, abs=0.01)
        assert got == pytest.approx(oracle, abs=1e-3)

    def test_out_of_range(self):
        tr = traj(np.zeros(500))
        with pytest.raises(ValidationError):
            gaussian_variance(tr, 0.3, 1.0)


class TestLag1Autocorr:
    def test_linear_series_is_one(self):
        tr = traj(np.arange(3000, dtype=float))
        assert lag1_autocorr(tr, 2.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_alternating_is_minus_one(self):
        tr = traj(np.where(np.arange(3000) % 2 == 0, 1.0, -1.0))
        assert lag1_autocorr(tr, 2.0, 1.0) == pytest.approx(-1.0, abs=1e-12)

    def test_white_noise_small(self):
        # Pearson r of independent samples is ~ Normal(0, 1/sqrt(n)); with
        # n = 1000 the bound 0.1 is a 3.2-sigma event per draw
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            tr = traj(rng.standard_normal(3000))
            if abs(lag1_autocorr(tr, 2.0, 1.0)) < 0.1:
                hits += 1
        assert hits >= 19

    def test_zero_variance_is_nan(self):
        tr = traj(np.ones(3000))
        assert math.isnan(lag1_autocorr(tr, 2.0, 1.0))

    def test_affine_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(3000)
        a = lag1_autocorr(traj(x), 2.0, 1.0)
        b = lag1_autocorr(traj(4.2 * x + 11.0), 2.0, 1.0)
        assert a == pytest.approx(b, abs=1e-12)


class TestLogGvOfAc:
    def test_constant_one(self):
        ac = np.ones(2000)
        assert log10_gv_of_ac(0.0, DT, ac, 1.5, 1.0) == pytest.approx(0.0, abs=1e-12)

    def test_constant_half(self):
        ac = np.full(2000, 0.5)
        got = log10_gv_of_ac(0.0, DT, ac, 1.5, 1.0)
        assert got == pytest.approx(math.log10(0.25), abs=1e-12)

    def test_small_noise_track(self):
        rng = np.random.default_rng(12)
        ac = 1e-2 * rng.standard_normal(2000)
        got = log10_gv_of_ac(0.0, DT, ac, 1.5, 1.0)
        assert got == pytest.approx(-4.0, abs=0.5)

    def test_nan_in_window_poisons(self):
        ac = np.ones(2000)
        ac[900] = np.nan
        assert math.isnan(log10_gv_of_ac(0.0, DT, ac, 1.5, 1.0))


class TestSlope:
    def test_exact_line(self):
        t = np.arange(100) * 0.1
        assert slope(2.0 * t, t) == pytest.approx(2.0, rel=1e-12)

    def test_constant_is_zero(self):
        t = np.arange(100) * 0.1
        assert slope(np.full(100, 3.3), t) == pytest.approx(0.0, abs=1e-12)

    def test_noisy_line_within_standard_error(self):
        # OLS sampling oracle: se(m) = sigma / sqrt(sum (t - tbar)^2)
        rng = np.random.default_rng(8)
        t = np.arange(80) * 0.1
        misses = 0
        for _ in range(25):
            v = 2.0 * t + rng.standard_normal(80)
            se = 1.0 / math.sqrt(np.sum((t - t.mean()) ** 2))
            if abs(slope(v, t) - 2.0) > 3 * se:
                misses += 1
        assert misses <= 1

    def test_nan_points_dropped(self):
        t = np.arange(10, dtype=float)
        v = 2.0 * t
        v[3] = np.nan
        assert slope(v, t) == pytest.approx(2.0, rel=1e-12)

    def test_too_few_points(self):
        assert math.isnan(slope(np.array([1.0]), np.array([0.0])))
        assert math.isnan(slope(np.array([np.nan, np.nan]), np.array([0.0, 1.0])))


def _noisy_traj(n=50001, seed=5):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * DT
    return traj(0.3 * np.sin(7.0 * t) + 0.1 * rng.standard_normal(n))


class TestFeatureTrack:
    def test_definition_offsets_default(self):
        ft = feature_track(_noisy_traj(), 35.0, -30.0, 10.0, WindowConfig(slope_len=8.0))
        assert ft.value_times()[0] == pytest.approx(-29.0, abs=1e-9)
        assert ft.slope_times()[0] == pytest.approx(-21.0, abs=1e-9)
        first_lgvac = ft.value_times()[np.flatnonzero(~np.isnan(ft.log10gv_ac))[0]]
        assert first_lgvac == pytest.approx(-28.0, abs=1e-9)
        first_mlgvac = ft.slope_times()[np.flatnonzero(~np.isnan(ft.m_log10gv_ac))[0]]
        assert first_mlgvac == pytest.approx(-20.0, abs=1e-9)

    @pytest.mark.parametrize("win_len,slope_len", [(0.5, 2.0), (1.0, 4.0),
                                                   (2.0, 6.0), (1.0, 12.0)])
    def test_definition_offsets_general(self, win_len, slope_len):
        cfg = WindowConfig(win_len=win_len, slope_len=slope_len)
        ft = feature_track(_noisy_traj(), 30.0, -20.0, 5.0, cfg)
        assert ft.value_times()[0] == pytest.approx(-20.0 + win_len, abs=1e-9)
        assert ft.slope_times()[0] == pytest.approx(-20.0 + win_len + slope_len, abs=1e-9)
        fl = ft.value_times()[np.flatnonzero(~np.isnan(ft.log10gv_ac))[0]]
        assert fl == pytest.approx(-20.0 + 2 * win_len, abs=1e-9)
        fml = ft.slope_times()[np.flatnonzero(~np.isnan(ft.m_log10gv_ac))[0]]
        assert fml == pytest.approx(-20.0 + 2 * win_len + slope_len, abs=1e-9)

    def test_single_evaluable_point(self):
        # with a pre-window of 8, win 1, slope 8, the full vector exists
        # only at T = 2
        ft = feature_track(_noisy_traj(), 35.0, -8.0, 2.0, WindowConfig(slope_len=8.0))
        vec = feature_vector_at(ft, 2.0, SvmType.ALL)
        assert vec.shape == (8,)
        with pytest.raises(FeatureUnavailable):
            feature_vector_at(ft, 1.9, SvmType.ALL)

    def test_shift_invariance(self):
        tr = _noisy_traj()
        cfg = WindowConfig(slope_len=4.0)
        a = feature_track(tr, 30.0, -20.0, 5.0, cfg)
        shifted = Trajectory(tr.t0 + 7.0, tr.dt, tr.x)
        b = feature_track(shifted, 37.0, -20.0, 5.0, cfg)
        for name in ("gv", "log10gv", "ac", "log10gv_ac", "m_gv", "m_log10gv_ac"):
            ga, gb = getattr(a, name), getattr(b, name)
            assert np.array_equal(ga, gb, equal_nan=True), name

    def test_sign_flip_invariance(self):
        tr = _noisy_traj()
        flipped = Trajectory(tr.t0, tr.dt, -tr.x)
        cfg = WindowConfig(slope_len=4.0)
        a = tsp_tracks(tr, 30.0, -15.0, 5.0, cfg)
        b = tsp_tracks(flipped, 30.0, -15.0, 5.0, cfg)
        assert np.array_equal(a.gv, b.gv)
        assert np.array_equal(a.ac, b.ac, equal_nan=True)

    def test_sliding_matches_direct(self):
        tr = _noisy_traj()
        ft = feature_track(tr, 30.0, -10.0, 5.0, WindowConfig(slope_len=4.0))
        vt = ft.value_times()
        for T in (-9.0, -3.217, 0.0, 4.8):
            k = int(round((T - vt[0]) / ft.step))
            assert ft.gv[k] == pytest.approx(gaussian_variance(tr, 30.0 + T, 1.0), rel=1e-9)
            assert ft.ac[k] == pytest.approx(lag1_autocorr(tr, 30.0 + T, 1.0), abs=1e-9)

    def test_slope_windows_match_standalone_fit(self):
        tr = _noisy_traj()
        ft = feature_track(tr, 30.0, -10.0, 5.0, WindowConfig(slope_len=4.0))
        st = ft.slope_times()
        vt = ft.value_times()
        q = 7
        t_fit = st[q]
        lo = int(round((t_fit - 4.0 - vt[0]) / ft.step))
        hi = int(round((t_fit - vt[0]) / ft.step))
        want = slope(ft.gv[lo:hi + 1], vt[lo:hi + 1])
        assert ft.m_gv[q] == pytest.approx(want, rel=1e-9)

    def test_nan_stretch_propagates_and_is_skipped(self):
        # a constant stretch kills the AC variance: AC goes NaN there,
        # the log-variance of AC goes NaN where its window touches it,
        # and slope fits drop those points instead of zero-filling
        n = 40001
        rng = np.random.default_rng(9)
        x = 0.2 * rng.standard_normal(n)
        x[12000:13500] = 0.55  # constant stretch inside the pre-window
        tr = traj(x)
        ft = feature_track(tr, 20.0, -10.0, 5.0, WindowConfig(slope_len=4.0))
        assert np.isnan(ft.ac).any()
        assert np.isnan(ft.log10gv_ac).any()
        st = ft.slope_times()
        # slopes spanning the stretch still defined from remaining points
        q = int(np.argmin(np.abs(st - (-4.0))))
        assert not math.isnan(ft.m_ac[q])

    def test_vector_lengths_and_errors(self):
        ft = feature_track(_noisy_traj(), 30.0, -20.0, 5.0, WindowConfig(slope_len=8.0))
        assert feature_vector_at(ft, 2.0, SvmType.VALUES).shape == (4,)
        assert feature_vector_at(ft, 2.0, SvmType.SLOPES).shape == (4,)
        assert feature_vector_at(ft, 2.0, SvmType.ALL).shape == (8,)
        with pytest.raises(FeatureUnavailable):
            feature_vector_at(ft, -12.0, SvmType.SLOPES)  # below slope offset
        with pytest.raises(FeatureUnavailable):
            feature_vector_at(ft, 6.0, SvmType.VALUES)  # past the window

    def test_out_of_range_request(self):
        with pytest.raises(ValidationError):
            feature_track(_noisy_traj(), 10.0, -30.0, 10.0, WindowConfig(slope_len=8.0))

    def test_add_slopes_reuses_value_arrays(self):
        tr = _noisy_traj()
        base = tsp_tracks(tr, 30.0, -20.0, 5.0, WindowConfig())
        f8 = add_slopes(base, 8.0, 0.1)
        f4 = add_slopes(base, 4.0, 0.1)
        assert f8.gv is base.gv and f4.gv is base.gv
        assert f8.slope_times()[0] == pytest.approx(-11.0)
        assert f4.slope_times()[0] == pytest.approx(-15.0)


class TestWindowConfigValidation:
    def test_bad_configs(self):
        with pytest.raises(ValidationError):
            WindowConfig(win_len=0.0)
        with pytest.raises(ValidationError):
            WindowConfig(slope_len=0.5)  # must exceed win_len
        with pytest.raises(ValidationError):
            WindowConfig(bandwidth=0)
