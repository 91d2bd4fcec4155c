"""Rolling time-series properties around a detected transition.

Four properties are computed on sliding windows of length ``win_len``:

* GV -- Gaussian-weighted second moment about zero.  Weights come from a
  normal density centred at the window midpoint with standard deviation
  win_len/6, evaluated at the sample times.
* log10(GV).
* AC -- lag-1 autocorrelation: the Pearson correlation between the
  window shifted by one lag and the window truncated by one lag.
* log10(GV(AC)) -- the log Gaussian variance applied to the AC series,
  which measures how strongly the autocorrelation itself fluctuates.

Each property also gets an ordinary-least-squares slope over the
trailing ``slope_len`` seconds, evaluated every ``slope_step``.

All tracks live on a shifted clock T = t - t1 where t1 is the detected
transition.  With a window [t1 + t_minus, t1 + t_plus], GV, log10GV and
AC are defined from T = t_minus + win_len, log10GV(AC) from
t_minus + 2*win_len, the first three slopes from t_minus + win_len +
slope_len, and the slope of log10GV(AC) from t_minus + 2*win_len +
slope_len.

Undefined values (zero-variance correlations, log of zero) are carried
as NaN and dropped -- not zero-filled -- by the slope fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ValidationError
from .model import Trajectory

__all__ = [
    "WindowConfig",
    "FeatureTrack",
    "SvmType",
    "FEATURE_NAMES",
    "detrend",
    "gaussian_variance",
    "lag1_autocorr",
    "log10_gv_of_ac",
    "slope",
    "feature_track",
    "feature_vector_at",
    "FeatureUnavailable",
]


class FeatureUnavailable(ValidationError):
    """Requested feature is undefined at the requested time."""


class SvmType(IntEnum):
    """Which feature set a classifier consumes."""

    VALUES = 1  # the four rolling properties
    SLOPES = 2  # their four slopes
    ALL = 3  # all eight


FEATURE_NAMES = (
    "gv", "log10gv", "ac", "log10gv_ac",
    "m_gv", "m_log10gv", "m_ac", "m_log10gv_ac",
)


@dataclass(frozen=True)
class WindowConfig:
    """Window geometry for property and slope computation.

    win_len : rolling-property window length (s).
    win_step : spacing of property samples (s).
    slope_len : trailing interval for the least-squares slopes (s).
    slope_step : spacing of slope samples (s).
    lag : autocorrelation lag (s); None means one sample.
    bandwidth : detrending kernel standard deviation, in samples.
    """

    win_len: float = 1.0
    win_step: float = 0.001
    slope_len: float = 8.0
    slope_step: float = 0.1
    lag: float | None = None
    bandwidth: int = 30

    def __post_init__(self):
        if not self.win_len > 0:
            raise ValidationError("win_len must be positive")
        if not self.slope_len > self.win_len:
            raise ValidationError("slope_len must exceed win_len")
        if not 0 < self.win_step <= self.win_len:
            raise ValidationError("need 0 < win_step <= win_len")
        if not 0 < self.slope_step:
            raise ValidationError("slope_step must be positive")
        if self.lag is not None and not self.lag > 0:
            raise ValidationError("lag must be positive")
        if self.bandwidth < 1:
            raise ValidationError("bandwidth must be at least one sample")


def _window_indices(tr: Trajectory, t: float, length: float) -> tuple[int, int]:
    lo = (t - length - tr.t0) / tr.dt
    hi = (t - tr.t0) / tr.dt
    k0 = int(math.ceil(lo - 1e-9))
    k1 = int(math.floor(hi + 1e-9))
    if k0 < 0 or k1 >= len(tr) or k1 <= k0:
        raise ValidationError(f"window [{t - length}, {t}] is out of range")
    return k0, k1


def _gauss_weights(times: np.ndarray, center: float, std: float) -> np.ndarray:
    z = (times - center) / std
    return np.exp(-0.5 * z * z)


def detrend(tr: Trajectory, bandwidth: int = 30) -> Trajectory:
    """Subtract a Gaussian-kernel smooth of the series.

    The kernel has standard deviation ``bandwidth`` samples and is
    truncated at four standard deviations; near the edges the truncated
    kernel is renormalised so constants are preserved everywhere.
    """
    if bandwidth < 1:
        raise ValidationError("bandwidth must be at least one sample")
    radius = int(math.ceil(4 * bandwidth))
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (i / bandwidth) ** 2)
    num = np.convolve(tr.x, kernel, mode="same")
    den = np.convolve(np.ones_like(tr.x), kernel, mode="same")
    smooth = num / den
    return Trajectory(tr.t0, tr.dt, tr.x - smooth, None)


def gaussian_variance(tr: Trajectory, t: float, win_len: float) -> float:
    """Weighted second moment about zero over [t - win_len, t]."""
    k0, k1 = _window_indices(tr, t, win_len)
    times = tr.t0 + np.arange(k0, k1 + 1) * tr.dt
    w = _gauss_weights(times, t - win_len / 2.0, win_len / 6.0)
    xs = tr.x[k0 : k1 + 1]
    return float(np.sum(w * xs * xs) / np.sum(w))


def lag1_autocorr(tr: Trajectory, t: float, win_len: float, lag: float | None = None) -> float:
    """Pearson correlation of the window against itself shifted by one lag.

    Returns NaN when either shifted vector has zero variance.
    """
    if lag is None:
        lag = tr.dt
    a = int(round(lag / tr.dt))
    if a < 1:
        raise ValidationError("lag must be at least one sample")
    k0, k1 = _window_indices(tr, t, win_len)
    if k1 - k0 + 1 - a < 3:
        raise ValidationError("window too short for the requested lag")
    u = tr.x[k0 : k1 + 1 - a]
    v = tr.x[k0 + a : k1 + 1]
    du = u - u.mean()
    dv = v - v.mean()
    su = float(np.sqrt(np.sum(du * du)))
    sv = float(np.sqrt(np.sum(dv * dv)))
    if su == 0.0 or sv == 0.0:
        return math.nan
    return float(np.sum(du * dv) / (su * sv))


def log10_gv_of_ac(ac_t0: float, ac_dt: float, ac: np.ndarray, t: float, win_len: float) -> float:
    """log10 of the Gaussian variance of an autocorrelation series.

    The AC series is given by its own grid (ac_t0, ac_dt); NaN inputs in
    the window or a zero variance yield NaN.
    """
    track = Trajectory(ac_t0, ac_dt, np.nan_to_num(ac, nan=0.0))
    k0, k1 = _window_indices(track, t, win_len)
    window = ac[k0 : k1 + 1]
    if np.any(np.isnan(window)):
        return math.nan
    times = ac_t0 + np.arange(k0, k1 + 1) * ac_dt
    w = _gauss_weights(times, t - win_len / 2.0, win_len / 6.0)
    gv = float(np.sum(w * window * window) / np.sum(w))
    if gv <= 0.0:
        return math.nan
    return math.log10(gv)


def slope(values: np.ndarray, times: np.ndarray) -> float:
    """Ordinary least-squares slope through (times, values).

    Closed-form normal equations; NaN values are dropped.  Returns NaN
    when fewer than two distinct points remain.
    """
    values = np.asarray(values, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    keep = ~np.isnan(values)
    v = values[keep]
    tt = times[keep]
    if v.size < 2 or np.ptp(tt) == 0.0:
        return math.nan
    tm = tt.mean()
    vm = v.mean()
    dt_ = tt - tm
    return float(np.sum(dt_ * (v - vm)) / np.sum(dt_ * dt_))


def slope_track(values: np.ndarray, step: float, n_fit: int, stride: int) -> np.ndarray:
    """Slopes of a uniformly sampled series over trailing windows.

    values[i] sits at time i*step.  For each output position the fit
    covers indices [i - n_fit, i]; positions advance by ``stride``.  The
    first output is at i = n_fit.
    """
    n = values.size
    if n <= n_fit:
        return np.empty(0, dtype=np.float64)
    out_idx = np.arange(n_fit, n, stride)
    rel_t = np.arange(n_fit + 1) * step
    out = np.empty(out_idx.size, dtype=np.float64)
    for q, i in enumerate(out_idx):
        out[q] = slope(values[i - n_fit : i + 1], rel_t)
    return out


# -- vectorised track computation ------------------------------------------

def _gv_kernel(n_w: int, dt: float, win_len: float) -> np.ndarray:
    # relative sample times across one window, newest sample at offset 0
    rel = np.arange(n_w + 1) * dt
    return _gauss_weights(rel, rel[-1] - win_len / 2.0, win_len / 6.0)


def _gv_series(x: np.ndarray, n_w: int, kernel: np.ndarray) -> np.ndarray:
    """GV at every index >= n_w (aligned: out[0] is the value at index n_w)."""
    return np.correlate(x * x, kernel, mode="valid") / kernel.sum()


def _ac_series(x: np.ndarray, n_w: int, a: int) -> np.ndarray:
    """Sliding lag-a Pearson correlation, aligned like :func:`_gv_series`.

    Uses running sums; near-constant windows are flagged NaN before the
    cancellation-prone variance terms can misbehave.
    """
    ones = np.ones(n_w + 1 - a, dtype=np.float64)
    length = float(ones.size)
    s_lead = np.correlate(x, ones, mode="valid")  # sums of x[m .. m+L-1]
    s_sq = np.correlate(x * x, ones, mode="valid")
    z = x[:-a] * x[a:]
    s_cross = np.correlate(z, ones, mode="valid")

    n_out = x.size - n_w
    # window ending at index i = n_w + q: lead vector starts at q + a, lag at q
    sa = s_lead[a : a + n_out]
    sb = s_lead[:n_out]
    saa = s_sq[a : a + n_out]
    sbb = s_sq[:n_out]
    sab = s_cross[:n_out]

    var_a = length * saa - sa * sa
    var_b = length * sbb - sb * sb
    cov = length * sab - sa * sb
    scale = length * np.maximum(saa, sbb) + 1e-300
    bad = (var_a <= 1e-12 * scale) | (var_b <= 1e-12 * scale)
    var_a = np.where(bad, 1.0, var_a)
    var_b = np.where(bad, 1.0, var_b)
    ac = cov / np.sqrt(var_a * var_b)
    ac[bad] = np.nan
    return np.clip(ac, -1.0, 1.0, out=ac)


def _gv_of_nan_series(v: np.ndarray, n_w: int, kernel: np.ndarray) -> np.ndarray:
    """GV over a series that may contain NaN; NaN in a window poisons it."""
    has_nan = np.isnan(v)
    clean = np.where(has_nan, 0.0, v)
    gv = np.correlate(clean * clean, kernel, mode="valid") / kernel.sum()
    if has_nan.any():
        hits = np.correlate(has_nan.astype(np.float64), np.ones(n_w + 1), mode="valid")
        gv[hits > 0] = np.nan
    return gv


@dataclass
class FeatureTrack:
    """The eight feature series around one transition, on T = t - t1.

    Property arrays share the grid T0 + k*step; slope arrays share the
    grid slope_t0 + k*slope_step.  log10gv_ac and m_log10gv_ac carry NaN
    ahead of their later definition offsets.
    """

    t_minus: float
    t_plus: float
    win_len: float
    slope_len: float
    t0: float
    step: float
    gv: np.ndarray
    log10gv: np.ndarray
    ac: np.ndarray
    log10gv_ac: np.ndarray
    slope_t0: float
    slope_step: float
    m_gv: np.ndarray
    m_log10gv: np.ndarray
    m_ac: np.ndarray
    m_log10gv_ac: np.ndarray

    _VALUE_ARRAYS = ("gv", "log10gv", "ac", "log10gv_ac")
    _SLOPE_ARRAYS = ("m_gv", "m_log10gv", "m_ac", "m_log10gv_ac")

    def value_times(self) -> np.ndarray:
        return self.t0 + np.arange(self.gv.size) * self.step

    def slope_times(self) -> np.ndarray:
        return self.slope_t0 + np.arange(self.m_gv.size) * self.slope_step

    def value_at(self, name: str, t_shifted: float) -> float:
        if name in self._VALUE_ARRAYS:
            grid_t0, grid_dt = self.t0, self.step
        elif name in self._SLOPE_ARRAYS:
            grid_t0, grid_dt = self.slope_t0, self.slope_step
        else:
            raise ValidationError(f"unknown feature {name!r}")
        arr = getattr(self, name)
        k = (t_shifted - grid_t0) / grid_dt
        ki = int(round(k))
        if abs(k - ki) > 1e-6 or not 0 <= ki < arr.size:
            raise FeatureUnavailable(f"{name} is not defined at T={t_shifted}")
        v = float(arr[ki])
        if math.isnan(v):
            raise FeatureUnavailable(f"{name} is NaN at T={t_shifted}")
        return v


def tsp_tracks(tr: Trajectory, t1: float, t_minus: float, t_plus: float,
               cfg: WindowConfig) -> FeatureTrack:
    """Rolling properties only; slope arrays are left empty.

    Useful when several slope lengths will be derived from one set of
    property tracks (see :func:`add_slopes`).
    """
    if t_minus >= 0 or t_plus <= 0:
        raise ValidationError("need t_minus < 0 < t_plus")
    i_lo = tr.index_of(t1 + t_minus)
    i_hi = tr.index_of(t1 + t_plus)
    xs = tr.x[i_lo : i_hi + 1]

    n_w = int(round(cfg.win_len / tr.dt))
    if n_w < 2 or abs(n_w * tr.dt - cfg.win_len) > 1e-9:
        raise ValidationError("win_len must be a multiple of the sample spacing")
    stride = int(round(cfg.win_step / tr.dt))
    if stride != 1 or abs(cfg.win_step - tr.dt) > 1e-12:
        raise ValidationError("win_step must equal the sample spacing")
    lag = cfg.lag if cfg.lag is not None else tr.dt
    a = int(round(lag / tr.dt))
    if a < 1:
        raise ValidationError("lag must be at least one sample")

    kernel = _gv_kernel(n_w, tr.dt, cfg.win_len)
    gv = _gv_series(xs, n_w, kernel)
    with np.errstate(divide="ignore"):
        lgv = np.where(gv > 0, np.log10(np.maximum(gv, 1e-300)), np.nan)
    ac = _ac_series(xs, n_w, a)

    # GV of the AC series: same window geometry on the property grid
    lgvac_full = _gv_of_nan_series(ac, n_w, kernel)
    with np.errstate(divide="ignore", invalid="ignore"):
        lgvac_full = np.where(lgvac_full > 0, np.log10(np.maximum(lgvac_full, 1e-300)), np.nan)
    # align: gv[k] sits at T = t_minus + win_len + k*dt; the first
    # GV(AC) value needs a full AC window and lands at t_minus + 2*win_len
    pad = np.full(n_w, np.nan)
    lgvac = np.concatenate([pad, lgvac_full])

    return FeatureTrack(
        t_minus=t_minus, t_plus=t_plus,
        win_len=cfg.win_len, slope_len=cfg.slope_len,
        t0=t_minus + cfg.win_len, step=tr.dt,
        gv=gv, log10gv=lgv, ac=ac, log10gv_ac=lgvac,
        slope_t0=t_minus + cfg.win_len + cfg.slope_len, slope_step=cfg.slope_step,
        m_gv=np.empty(0), m_log10gv=np.empty(0), m_ac=np.empty(0), m_log10gv_ac=np.empty(0),
    )


def add_slopes(ft: FeatureTrack, slope_len: float, slope_step: float) -> FeatureTrack:
    """Fill the slope arrays of a property-only track for one slope length."""
    n_fit = int(round(slope_len / ft.step))
    stride = int(round(slope_step / ft.step))
    if abs(n_fit * ft.step - slope_len) > 1e-9:
        raise ValidationError("slope_len must be a multiple of the property spacing")
    if stride < 1 or abs(stride * ft.step - slope_step) > 1e-9:
        raise ValidationError("slope_step must be a positive multiple of the property spacing")
    n_head = int(round(ft.win_len / ft.step))  # leading NaN pad of log10gv_ac
    if n_head % stride != 0:
        raise ValidationError("win_len must be a multiple of slope_step")

    m_gv = slope_track(ft.gv, ft.step, n_fit, stride)
    m_lgv = slope_track(ft.log10gv, ft.step, n_fit, stride)
    m_ac = slope_track(ft.ac, ft.step, n_fit, stride)
    # the slope of log10gv_ac is only defined once a full fitting window
    # of defined values exists, i.e. from t_minus + 2*win_len + slope_len;
    # fitting across the definition boundary would silently use a partial
    # window, so slide over the compact defined region and pad instead
    m_lgvac_tail = slope_track(ft.log10gv_ac[n_head:], ft.step, n_fit, stride)
    m_lgvac = np.concatenate([np.full(n_head // stride, np.nan), m_lgvac_tail])

    return FeatureTrack(
        t_minus=ft.t_minus, t_plus=ft.t_plus,
        win_len=ft.win_len, slope_len=slope_len,
        t0=ft.t0, step=ft.step,
        gv=ft.gv, log10gv=ft.log10gv, ac=ft.ac, log10gv_ac=ft.log10gv_ac,
        slope_t0=ft.t_minus + ft.win_len + slope_len, slope_step=slope_step,
        m_gv=m_gv, m_log10gv=m_lgv, m_ac=m_ac, m_log10gv_ac=m_lgvac,
    )


def feature_track(tr: Trajectory, t1: float, t_minus: float, t_plus: float,
                  cfg: WindowConfig) -> FeatureTrack:
    """All eight feature series for the window [t1 + t_minus, t1 + t_plus]."""
    ft = tsp_tracks(tr, t1, t_minus, t_plus, cfg)
    return add_slopes(ft, cfg.slope_len, cfg.slope_step)


def feature_vector_at(ft: FeatureTrack, t_shifted: float, svm_type: SvmType) -> np.ndarray:
    """Feature vector at shifted time T, in the documented fixed order.

    Type 1: (gv, log10gv, ac, log10gv_ac).
    Type 2: (m_gv, m_log10gv, m_ac, m_log10gv_ac).
    Type 3: type 1 followed by type 2.
    Raises FeatureUnavailable when any requested entry is undefined.
    """
    svm_type = SvmType(svm_type)
    if svm_type == SvmType.VALUES:
        names = FEATURE_NAMES[:4]
    elif svm_type == SvmType.SLOPES:
        names = FEATURE_NAMES[4:]
    else:
        names = FEATURE_NAMES
    return np.array([ft.value_at(nm, t_shifted) for nm in names], dtype=np.float64)
