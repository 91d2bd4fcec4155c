"""Two-threshold relay detection of transitions in noisy series.

A transition from the low-amplitude state to the high-amplitude state is
declared at the first sample whose magnitude exceeds the on-threshold
``alpha``, provided every confirmation window of length ``window``
(advanced by ``step`` across the following ``min_high`` seconds)
contains a sample above the off-threshold ``beta``.  The reverse
transition is declared at the first sample falling below ``beta``,
provided no sample reaches ``alpha`` in any confirmation window across
the following ``min_low`` seconds.  Crossings whose confirmation fails
are logged as almost-occurring transitions; the relay state does not
change for them.

Recordings can contain measurement artefacts that jump by large amounts
between consecutive samples.  When ``max_jump`` is finite, an on-crossing
followed within one window by a sample-to-sample jump of at least
``max_jump`` opens an artefact interval instead of a candidate onset;
the interval closes at the first sample below ``alpha`` with a jump-free
window ahead of it.  The next on-crossing after the close is evaluated
as a fresh candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ValidationError
from .model import Trajectory

__all__ = [
    "DetectorParams",
    "EventLog",
    "Annotations",
    "OverlapReport",
    "detect",
    "residence_times",
    "overlap_score",
    "tune_alpha",
]

_REL_TOL = 1e-6


def _as_count(value: float, unit: float, name: str) -> int:
    k = value / unit
    ki = int(round(k))
    if ki < 1 or abs(k - ki) > _REL_TOL * max(1.0, abs(k)):
        raise ValidationError(f"{name} = {value} is not an integer multiple of {unit}")
    return ki


@dataclass(frozen=True)
class DetectorParams:
    """Relay thresholds and window geometry.

    alpha, beta : on / off thresholds, 0 < beta < alpha.
    window : confirmation window length (s).
    step : shift between consecutive window positions (s).
    min_high : minimum duration of the high state (s); confirmation
        windows for an onset start throughout [t1, t1 + min_high).
    min_low : minimum duration of the low state (s), >= min_high.
    max_jump : artefact threshold on |x(t+dt) - x(t)|; inf disables
        artefact handling (appropriate for model output).
    dt : sample spacing of the series the detector will run on.
    """

    alpha: float = 0.55
    beta: float = 0.45
    window: float = 1.0
    step: float = 0.001
    min_high: float = 2.0
    min_low: float = 5.0
    max_jump: float = math.inf
    dt: float = 0.001

    def __post_init__(self):
        if not 0 < self.beta < self.alpha:
            raise ValidationError(
                f"thresholds must satisfy 0 < beta < alpha, got beta={self.beta} alpha={self.alpha}"
            )
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not (self.dt <= self.step + 1e-15 and self.step <= self.window + 1e-15):
            raise ValidationError("need dt <= step <= window")
        if not self.min_high > self.window:
            raise ValidationError("min_high must exceed the window length")
        if not self.min_low >= self.min_high:
            raise ValidationError("min_low must be >= min_high")
        if not self.max_jump > 0:
            raise ValidationError("max_jump must be positive (use inf to disable)")
        # integrality of the derived counts, checked up front so a bad
        # configuration fails here rather than mid-run
        _as_count(self.window, self.dt, "window/dt")
        _as_count(self.step, self.dt, "step/dt")
        _as_count(self.min_high - self.window, self.step, "(min_high - window)/step")
        _as_count(self.min_low - self.window, self.step, "(min_low - window)/step")

    # sample/window counts used by the scan kernel
    @property
    def n_window(self) -> int:
        return _as_count(self.window, self.dt, "window/dt")

    @property
    def n_step(self) -> int:
        return _as_count(self.step, self.dt, "step/dt")

    @property
    def n_confirm_high(self) -> int:
        """Window positions confirming an onset: starts cover [0, min_high)."""
        return _as_count(self.min_high, self.step, "min_high/step")

    @property
    def n_confirm_low(self) -> int:
        return _as_count(self.min_low, self.step, "min_low/step")

    @property
    def n_min_high(self) -> int:
        return _as_count(self.min_high, self.dt, "min_high/dt")

    @property
    def n_min_low(self) -> int:
        return _as_count(self.min_low, self.dt, "min_low/dt")

    def with_thresholds(self, alpha: float, beta: float) -> "DetectorParams":
        return DetectorParams(alpha, beta, self.window, self.step,
                              self.min_high, self.min_low, self.max_jump, self.dt)


RECORDING_DEFAULTS = DetectorParams(
    alpha=0.055, beta=0.045, window=1.0, step=0.001,
    min_high=2.0, min_low=3.0, max_jump=0.2, dt=0.001,
)


@dataclass
class EventLog:
    """Detected transitions on one series.

    onsets/offsets hold confirmed low->high / high->low times and
    strictly interleave starting with an onset.  almost_onsets and
    almost_offsets hold crossings whose confirmation failed.  artefacts
    hold (start, end) intervals.  end_state is the relay state at the
    end of the data; analysis_start is where detection began (the first
    stretch of min_low below beta).
    """

    onsets: np.ndarray
    offsets: np.ndarray
    almost_onsets: np.ndarray
    almost_offsets: np.ndarray
    artefacts: np.ndarray  # shape (k, 2)
    end_state: str = "NS"
    analysis_start: float = 0.0
    min_high: float = field(default=0.0, repr=False)
    min_low: float = field(default=0.0, repr=False)

    def __post_init__(self):
        self.onsets = np.asarray(self.onsets, dtype=np.float64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.almost_onsets = np.asarray(self.almost_onsets, dtype=np.float64)
        self.almost_offsets = np.asarray(self.almost_offsets, dtype=np.float64)
        self.artefacts = np.asarray(self.artefacts, dtype=np.float64).reshape(-1, 2)
        if self.end_state not in ("NS", "S"):
            raise ValidationError("end_state must be 'NS' or 'S'")
        n_on, n_off = self.onsets.size, self.offsets.size
        if n_off not in (n_on, n_on - 1):
            raise ValidationError("onsets and offsets must interleave starting with an onset")
        for i in range(n_off):
            if not self.offsets[i] > self.onsets[i]:
                raise ValidationError("each offset must follow its onset")
            if i + 1 < n_on and not self.onsets[i + 1] > self.offsets[i]:
                raise ValidationError("onsets and offsets must strictly interleave")
        if self.min_high > 0:
            for i in range(n_off):
                if self.offsets[i] - self.onsets[i] < self.min_high - 1e-9:
                    raise ValidationError("closed pair shorter than min_high")
        if self.min_low > 0:
            for i in range(n_off):
                if i + 1 < n_on and self.onsets[i + 1] - self.offsets[i] < self.min_low - 1e-9:
                    raise ValidationError("offset->onset gap shorter than min_low")
        for k in range(self.artefacts.shape[0]):
            a, b = self.artefacts[k]
            if not b > a:
                raise ValidationError("artefact interval must have positive length")
            if k + 1 < self.artefacts.shape[0] and not self.artefacts[k + 1, 0] >= b:
                raise ValidationError("artefact intervals must be disjoint and ordered")
            for i in range(n_off):
                if max(a, self.onsets[i]) < min(b, self.offsets[i]):
                    raise ValidationError("artefact interval overlaps a transition pair")

    @property
    def pairs(self) -> np.ndarray:
        """Closed (onset, offset) pairs, shape (k, 2)."""
        k = self.offsets.size
        return np.column_stack([self.onsets[:k], self.offsets[:k]])


@dataclass
class Annotations:
    """Expert-provided (onset, offset) intervals, in seconds."""

    intervals: np.ndarray  # shape (k, 2)

    def __post_init__(self):
        self.intervals = np.asarray(self.intervals, dtype=np.float64).reshape(-1, 2)
        iv = self.intervals
        for k in range(iv.shape[0]):
            if not iv[k, 1] > iv[k, 0]:
                raise ValidationError("annotation intervals must have positive length")
            if k + 1 < iv.shape[0] and not iv[k + 1, 0] >= iv[k, 1]:
                raise ValidationError("annotation intervals must be increasing and non-overlapping")

    def __len__(self) -> int:
        return self.intervals.shape[0]


# kernel status codes
_OK = 0
_NO_QUIET_START = 1
_OVERFLOW = 2


@njit(cache=True)
def _scan(x, alpha, beta, xi, n_w, n_step, n_conf_hi, n_conf_lo,
          n_min_hi, n_min_lo,
          onsets, offsets, almost_on, almost_off, art_start, art_end):
    """Single-pass relay scan over sample magnitudes.

    Returns (status, n_on, n_off, n_aon, n_aoff, n_art, end_state, start_idx).
    Event arrays receive sample indices; the wrapper converts to times.
    """
    n = x.shape[0]
    # locate the initial quiet stretch: n_min_lo+1 consecutive samples < beta
    run = 0
    i0 = -1
    for k in range(n):
        if abs(x[k]) < beta:
            run += 1
        else:
            run = 0
        if run >= n_min_lo + 1:
            i0 = k - n_min_lo
            break
    if i0 < 0:
        return _NO_QUIET_START, 0, 0, 0, 0, 0, 0, 0

    n_on = 0
    n_off = 0
    n_aon = 0
    n_aoff = 0
    n_art = 0
    state = 0  # 0 = low/NS, 1 = high/S
    i = i0  # next crossing pair (k, k+1) to examine has k >= i

    while i < n - 1:
        if state == 0:
            # next on-crossing
            k = i
            while k < n - 1 and not (abs(x[k]) <= alpha and abs(x[k + 1]) > alpha):
                k += 1
            if k >= n - 1:
                break
            j = k + 1

            # artefact branch: any jump >= xi among pairs within one window
            # of the crossing; the window starts at the last sample at or
            # below alpha, so the crossing jump itself is covered
            jump_at = -1
            if xi != np.inf:
                m_hi = j - 1 + n_w
                if m_hi > n - 2:
                    m_hi = n - 2
                for m in range(j - 1, m_hi + 1):
                    if abs(x[m + 1] - x[m]) >= xi:
                        jump_at = m
                        break
            if jump_at >= 0:
                # find the close: first e with |x[e]| < alpha and no jump
                # within the window ahead of e
                e = j
                nxt = -1  # first jump index >= e (n means none)
                closed = -1
                while e < n:
                    if nxt < e:
                        nxt = e
                        while nxt <= n - 2 and abs(x[nxt + 1] - x[nxt]) < xi:
                            nxt += 1
                        if nxt > n - 2:
                            nxt = n
                    if abs(x[e]) < alpha:
                        w_hi = e + n_w
                        if w_hi > n - 2:
                            w_hi = n - 2
                        if nxt > w_hi:
                            closed = e
                            break
                    e += 1
                if closed < 0:
                    closed = n - 1
                if n_art >= art_start.shape[0]:
                    return _OVERFLOW, n_on, n_off, n_aon, n_aoff, n_art, state, i0
                art_start[n_art] = j
                art_end[n_art] = closed
                n_art += 1
                i = closed
                continue

            # onset confirmation: every window starting at j + m*n_step,
            # m in [0, n_conf_hi), must contain a sample above beta
            last_end = j + (n_conf_hi - 1) * n_step + n_w
            if last_end > n - 1:
                # data ends mid-confirmation: record as almost-occurring
                if n_aon >= almost_on.shape[0]:
                    return _OVERFLOW, n_on, n_off, n_aon, n_aoff, n_art, state, i0
                almost_on[n_aon] = j
                n_aon += 1
                i = j + 1
                continue
            confirmed = True
            last_exceed = -1
            p = j
            for m in range(n_conf_hi):
                ws = j + m * n_step
                we = ws + n_w
                while p <= we:
                    if abs(x[p]) > beta:
                        last_exceed = p
                    p += 1
                if last_exceed < ws:
                    confirmed = False
                    break
            if confirmed:
                if n_on >= onsets.shape[0]:
                    return _OVERFLOW, n_on, n_off, n_aon, n_aoff, n_art, state, i0
                onsets[n_on] = j
                n_on += 1
                state = 1
                i = j + n_min_hi - 1  # earliest offset lands at t1 + min_high
            else:
                if n_aon >= almost_on.shape[0]:
                    return _OVERFLOW, n_on, n_off, n_aon, n_aoff, n_art, state, i0
                almost_on[n_aon] = j
                n_aon += 1
                i = j + 1
        else:
            # next off-crossing
            k = i
            while k < n - 1 and not (abs(x[k]) >= beta and abs(x[k + 1]) < beta):
                k += 1
            if k >= n - 1:
                break
            j = k + 1
            last_end = j + (n_conf_lo - 1) * n_step + n_w
            if last_end > n - 1:
                if n_aoff >= almost_off.shape[0]:
                    return _OVERFLOW, n_on, n_off, n_aon, n_aoff, n_art, state, i0
                almost_off[n_aoff] = j
                n_aoff += 1
                i = j + 1
                continue
            # offset confirmation: no sample at/above alpha in any window
            ok = True
            last_alpha = -1
            p = j
            for m in range(n_conf_lo):
                ws = j + m * n_step
                we = ws + n_w
                if last_alpha >= ws:
                    ok = False
                    break
                while p <= we:
                    if abs(x[p]) >= alpha:
                        last_alpha = p
                        if p >= ws:
                            break
                    p += 1
                if last_alpha >= ws:
                    ok = False
                    break
            if ok:
                if n_off >= offsets.shape[0]:
                    return _OVERFLOW, n_on, n_off, n_aon, n_aoff, n_art, state, i0
                offsets[n_off] = j
                n_off += 1
                state = 0
                i = j + n_min_lo - 1  # earliest next onset at t2 + min_low
            else:
                if n_aoff >= almost_off.shape[0]:
                    return _OVERFLOW, n_on, n_off, n_aon, n_aoff, n_art, state, i0
                almost_off[n_aoff] = j
                n_aoff += 1
                i = j + 1

    return _OK, n_on, n_off, n_aon, n_aoff, n_art, state, i0


def detect(tr: Trajectory, p: DetectorParams) -> EventLog:
    """Run the relay over a trajectory's x channel.

    Deterministic and single-pass: the result depends only on the
    samples and the parameters.
    """
    if abs(tr.dt - p.dt) > 1e-9 * max(tr.dt, p.dt):
        raise ValidationError(
            f"trajectory sample spacing {tr.dt} does not match detector dt {p.dt}"
        )
    n = len(tr)
    if (n - 1) * tr.dt < p.min_low:
        raise ValidationError(
            f"trajectory of duration {(n - 1) * tr.dt:.6g} is shorter than min_low={p.min_low}"
        )

    n_pairs = n // (p.n_min_high + p.n_min_low) + 8
    cap_almost = max(4096, n // 64)
    cap_art = max(256, n // 4096)
    while True:
        onsets = np.empty(n_pairs, dtype=np.int64)
        offsets = np.empty(n_pairs, dtype=np.int64)
        almost_on = np.empty(cap_almost, dtype=np.int64)
        almost_off = np.empty(cap_almost, dtype=np.int64)
        art_s = np.empty(cap_art, dtype=np.int64)
        art_e = np.empty(cap_art, dtype=np.int64)
        status, n_on, n_off, n_aon, n_aoff, n_art, end_state, i0 = _scan(
            tr.x, p.alpha, p.beta, p.max_jump,
            p.n_window, p.n_step, p.n_confirm_high, p.n_confirm_low,
            p.n_min_high, p.n_min_low,
            onsets, offsets, almost_on, almost_off, art_s, art_e,
        )
        if status == _OVERFLOW:
            cap_almost *= 4
            cap_art *= 4
            n_pairs *= 4
            continue
        break
    if status == _NO_QUIET_START:
        raise ValidationError(
            "trajectory never settles below beta for min_low; cannot fix a starting state"
        )

    def t_of(idx):
        return tr.t0 + idx * tr.dt

    arte = np.column_stack([t_of(art_s[:n_art].astype(float)),
                            t_of(art_e[:n_art].astype(float))])
    return EventLog(
        onsets=t_of(onsets[:n_on].astype(float)),
        offsets=t_of(offsets[:n_off].astype(float)),
        almost_onsets=t_of(almost_on[:n_aon].astype(float)),
        almost_offsets=t_of(almost_off[:n_aoff].astype(float)),
        artefacts=arte,
        end_state="S" if end_state == 1 else "NS",
        analysis_start=t_of(float(i0)),
        min_high=p.min_high,
        min_low=p.min_low,
    )


def residence_times(log: EventLog) -> tuple[np.ndarray, np.ndarray]:
    """Durations spent in the high and low states.

    High durations are offset - onset per closed pair; low durations are
    the gaps between an offset and the next onset.  Open intervals at
    either end of the data are excluded.
    """
    k = log.offsets.size
    s_dur = log.offsets - log.onsets[:k]
    ns = [log.onsets[i + 1] - log.offsets[i] for i in range(k) if i + 1 < log.onsets.size]
    return s_dur, np.asarray(ns, dtype=np.float64)


@dataclass
class OverlapReport:
    """Agreement between detected pairs and annotated intervals."""

    n_correct: int
    n_false: int
    flags: list[str]  # per closed pair: "correct" | "false"

    @property
    def score(self) -> int:
        return self.n_correct - self.n_false


def overlap_score(log: EventLog, ann: Annotations, min_overlap_frac: float = 0.0) -> OverlapReport:
    """Score detected pairs against annotations.

    A pair counts as correct when it is contained in, contains, or
    partially overlaps an annotated interval (total overlap at least
    ``min_overlap_frac`` of the pair's duration; the default accepts any
    positive overlap).  Pairs lying entirely in annotated gaps count as
    false.  Several pairs may match one annotation; each still counts
    once.
    """
    if not 0.0 <= min_overlap_frac <= 1.0:
        raise ValidationError("min_overlap_frac must lie in [0, 1]")
    flags = []
    n_correct = 0
    for t1, t2 in log.pairs:
        total = 0.0
        for a, b in ann.intervals:
            total += max(0.0, min(t2, b) - max(t1, a))
        needed = min_overlap_frac * (t2 - t1)
        if total > 0.0 and total >= needed:
            flags.append("correct")
            n_correct += 1
        else:
            flags.append("false")
    return OverlapReport(n_correct, len(flags) - n_correct, flags)


def tune_alpha(tr: Trajectory, ann: Annotations, base: DetectorParams,
               grid: list[float]) -> float:
    """Pick the on-threshold maximising n_correct - n_false.

    beta follows alpha as alpha - 0.01 during the sweep.  Ties go to the
    smaller alpha.
    """
    if len(grid) == 0:
        raise ValidationError("alpha grid must be non-empty")
    best_alpha = None
    best_score = None
    for alpha in sorted(grid):
        beta = alpha - 0.01
        if beta <= 0:
            raise ValidationError(f"alpha={alpha} gives non-positive beta under beta = alpha - 0.01")
        log = detect(tr, base.with_thresholds(alpha, beta))
        score = overlap_score(log, ann).score
        if best_score is None or score > best_score:
            best_score = score
            best_alpha = alpha
    return float(best_alpha)
