"""End-to-end orchestration: corpus, filtering, classification, reports.

The workflow is: harvest labelled transitions from the model (the
parameter regimes fix the mechanism, so labels are known), train the
classifier on their rolling-window features, then detect transitions in
an ingested recording, filter them so each one is classifiable, and
tally the predicted mechanisms.

Filtering applies five conditions to each detected onset, with the
pre-transition window W = [t1 + t_minus, t1):

  C1  the relay is in the low state throughout W,
  C2  the relay is in the high state throughout [t1, t1 + t_plus],
  C3  the detected interval overlaps an annotated one,
  C4  no artefact interval intersects W,
  C5  the on-threshold is not crossed inside W (no almost-onsets).

Excluded onsets are attributed to the first failing condition in the
order C1..C5, so counts always reconcile with the number detected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .classifier import CTType, SvmModel, predict
from .detector import Annotations, DetectorParams, EventLog, detect, overlap_score, residence_times
from .errors import ValidationError
from .features import (
    FeatureTrack,
    FeatureUnavailable,
    WindowConfig,
    add_slopes,
    detrend,
    feature_vector_at,
    tsp_tracks,
)
from .model import ModelParams, ParameterPath, SimConfig, Trajectory, regime_setup, simulate_x
from .rng import derive_seed

logger = logging.getLogger(__name__)

__all__ = [
    "SelectionCriteria",
    "Recording",
    "CorpusEntry",
    "FilteredCT",
    "FilterResult",
    "ClassifiedCT",
    "ClassificationReport",
    "FitReport",
    "generate_corpus",
    "corpus_tracks",
    "ramp_onset_times",
    "filter_cts",
    "classify_filtered",
    "sweep_tminus",
    "mffe",
    "t1_statistics",
    "residence_shear_study",
    "assemble_recording",
]

# seed-stream offsets so the harvesters never reuse a child seed
_SEED_NCT = 0
_SEED_BCT = 10_000_000
_SEED_BNCT = 20_000_000
_SEED_SHEAR = 30_000_000


@dataclass(frozen=True)
class SelectionCriteria:
    """Window around each onset that must be in a clean state.

    t_minus < 0 is the start of the pre-transition window, t_plus > 0
    the end of the post-transition window, both relative to the onset.
    require_no_almost additionally bans almost-onsets from the
    pre-window (always on for the training corpus).
    """

    t_minus: float = -30.0
    t_plus: float = 10.0
    require_no_almost: bool = True

    def __post_init__(self):
        if not self.t_minus < 0:
            raise ValidationError("t_minus must be negative")
        if not self.t_plus > 0:
            raise ValidationError("t_plus must be positive")


@dataclass
class Recording:
    """A trajectory plus provenance and optional expert annotations.

    source is "model" or "external"; only external recordings are
    detrended before feature extraction.
    """

    trajectory: Trajectory
    source: str = "external"
    annotations: Annotations | None = None

    def __post_init__(self):
        if self.source not in ("model", "external"):
            raise ValidationError("recording source must be 'model' or 'external'")


@dataclass
class CorpusEntry:
    """One harvested transition: property tracks plus provenance."""

    label: CTType
    t1: float
    source_id: str
    seed: int
    track: FeatureTrack  # property arrays filled; slope arrays empty
    segment: np.ndarray | None = None  # raw x over the window, when kept


def _valid_onsets(log: EventLog, crit: SelectionCriteria, data_end: float):
    """Indices of onsets satisfying the selection criteria.

    The high state must persist to t1 + t_plus (a closed offset beyond
    it, or the data ending in the high state); the low state must reach
    back to t1 + t_minus with, optionally, no almost-onsets inside.
    """
    out = []
    n_off = log.offsets.size
    for i, t1 in enumerate(log.onsets):
        w0 = t1 + crit.t_minus
        if w0 < log.analysis_start:
            continue
        if i > 0 and log.offsets[i - 1] > w0:
            continue
        if i < n_off:
            t2_eff = log.offsets[i]
        elif log.end_state == "S":
            t2_eff = data_end
        else:  # unconfirmed trailing onset
            continue
        if t2_eff < t1 + crit.t_plus or t1 + crit.t_plus > data_end:
            continue
        if crit.require_no_almost and np.any(
            (log.almost_onsets >= w0) & (log.almost_onsets < t1)
        ):
            continue
        out.append(i)
    return out


def _harvest_ramp(regime: str, n_wanted: int, base_seed: int, seed_offset: int,
                  crit: SelectionCriteria, det: DetectorParams, wcfg: WindowConfig,
                  keep_segments: bool, max_runs: int):
    setup = regime_setup(regime)
    label = CTType.parse(setup.label)
    cfg0 = SimConfig(dt=det.dt, t_end=setup.path.t_end)
    entries: list[CorpusEntry] = []
    for run in range(max_runs):
        if len(entries) >= n_wanted:
            break
        seed = derive_seed(base_seed, seed_offset + run)
        cfg = SimConfig(dt=cfg0.dt, t_end=cfg0.t_end, x0=cfg0.x0, y0=cfg0.y0, seed=seed)
        x, _ = simulate_x(setup.params, setup.path, cfg)
        tr = Trajectory(0.0, cfg.dt, x)
        log = detect(tr, det)
        # a ramp run contributes at most one transition: only its first
        # detected onset is ever eligible
        idx = _valid_onsets(log, crit, tr.t_end)
        if not idx or idx[0] != 0:
            continue
        t1 = float(log.onsets[0])
        track = tsp_tracks(tr, t1, crit.t_minus, crit.t_plus, wcfg)
        seg = tr.x[tr.index_of(t1 + crit.t_minus): tr.index_of(t1 + crit.t_plus) + 1].copy() \
            if keep_segments else None
        entries.append(CorpusEntry(label, t1, f"{regime}-run{run}", seed, track, seg))
    if len(entries) < n_wanted:
        raise ValidationError(
            f"harvested only {len(entries)}/{n_wanted} {regime.upper()} transitions "
            f"within the {max_runs}-run budget"
        )
    return entries


def _harvest_nct(n_wanted: int, base_seed: int, crit: SelectionCriteria,
                 det: DetectorParams, wcfg: WindowConfig, keep_segments: bool,
                 chunk_t: float, max_chunks: int, params: ModelParams | None = None,
                 seed_offset: int = _SEED_NCT, collect_durations: bool = False):
    """Chunked harvest at the bistable operating point.

    Each chunk continues from the previous chunk's final state with a
    fresh derived seed; transitions whose windows touch a chunk edge are
    dropped, which only costs a couple of events per boundary.
    """
    setup = regime_setup("nct")
    if params is None:
        params = setup.params
    state = (0.1, 0.1)
    entries: list[CorpusEntry] = []
    s_durs: list[np.ndarray] = []
    ns_durs: list[np.ndarray] = []
    n_collected = 0
    for chunk in range(max_chunks):
        if collect_durations:
            if n_collected >= n_wanted:
                break
        elif len(entries) >= n_wanted:
            break
        seed = derive_seed(base_seed, seed_offset + chunk)
        cfg = SimConfig(dt=det.dt, t_end=chunk_t, x0=state[0], y0=state[1], seed=seed)
        x, state = simulate_x(params, ParameterPath.constant(setup.path.mu0, chunk_t), cfg)
        tr = Trajectory(0.0, cfg.dt, x)
        log = detect(tr, det)
        if collect_durations:
            s_d, ns_d = residence_times(log)
            s_durs.append(s_d)
            ns_durs.append(ns_d)
            n_collected += min(s_d.size, ns_d.size)
            continue
        for i in _valid_onsets(log, crit, tr.t_end):
            if len(entries) >= n_wanted:
                break
            t1 = float(log.onsets[i])
            track = tsp_tracks(tr, t1, crit.t_minus, crit.t_plus, wcfg)
            seg = tr.x[tr.index_of(t1 + crit.t_minus): tr.index_of(t1 + crit.t_plus) + 1].copy() \
                if keep_segments else None
            entries.append(CorpusEntry(
                CTType.NCT, chunk * chunk_t + t1, f"nct-c{chunk}-i{i}", seed, track, seg,
            ))
    if collect_durations:
        return np.concatenate(s_durs) if s_durs else np.empty(0), \
            np.concatenate(ns_durs) if ns_durs else np.empty(0)
    if len(entries) < n_wanted:
        raise ValidationError(
            f"harvested only {len(entries)}/{n_wanted} NCT transitions within the "
            f"{max_chunks}-chunk budget ({max_chunks * chunk_t:g} time units)"
        )
    return entries


def generate_corpus(n_per_type: int, base_seed: int,
                    crit: SelectionCriteria = SelectionCriteria(),
                    det: DetectorParams = DetectorParams(),
                    wcfg: WindowConfig = WindowConfig(),
                    keep_segments: bool = False,
                    chunk_t: float = 20000.0, max_chunks: int = 80,
                    max_runs_per_type: int | None = None) -> list[CorpusEntry]:
    """Labelled training corpus: n examples of each mechanism.

    Noise-induced examples come from one long (chunked) run at the
    bistable point; the two drift regimes contribute at most one
    transition per ramp run, each with a fresh derived seed.  A
    transition is accepted only when its whole selection window is in
    the required state and, for the corpus, free of almost-onsets.
    """
    if n_per_type < 1:
        raise ValidationError("n_per_type must be >= 1")
    max_runs = max_runs_per_type or max(20 * n_per_type, 50)
    entries = _harvest_ramp("bct", n_per_type, base_seed, _SEED_BCT, crit, det, wcfg,
                            keep_segments, max_runs)
    entries += _harvest_ramp("bnct", n_per_type, base_seed, _SEED_BNCT, crit, det, wcfg,
                             keep_segments, max_runs)
    entries += _harvest_nct(n_per_type, base_seed, crit, det, wcfg, keep_segments,
                            chunk_t, max_chunks)
    return entries


def corpus_tracks(corpus: list[CorpusEntry], slope_len: float, slope_step: float = 0.1):
    """Materialise slope arrays for one slope length: (track, label, id) triples."""
    return [
        (add_slopes(e.track, slope_len, slope_step), e.label, e.source_id)
        for e in corpus
    ]


def ramp_onset_times(regime: str, n_runs: int, base_seed: int,
                     det: DetectorParams = DetectorParams(),
                     sigma: float | None = None) -> np.ndarray:
    """Detected onset time of each ramp run (runs without one are skipped)."""
    setup = regime_setup(regime)
    params = setup.params
    if sigma is not None:
        params = ModelParams(params.s, sigma, params.nu, params.omega, params.gamma)
    offset = _SEED_BCT if regime == "bct" else _SEED_BNCT
    t1s = []
    for run in range(n_runs):
        seed = derive_seed(base_seed, offset + run)
        cfg = SimConfig(dt=det.dt, t_end=setup.path.t_end, seed=seed)
        x, _ = simulate_x(params, setup.path, cfg)
        log = detect(Trajectory(0.0, cfg.dt, x), det)
        if log.onsets.size:
            t1s.append(float(log.onsets[0]))
    return np.asarray(t1s)


@dataclass(frozen=True)
class FilteredCT:
    """A detected onset that passed C1-C5."""

    t1: float
    t2: float
    onset_index: int


@dataclass
class FilterResult:
    kept: list[FilteredCT]
    n_det: int
    excluded: dict[str, int]  # first failing condition -> count

    @property
    def n_filt(self) -> int:
        return len(self.kept)


def filter_cts(log: EventLog, ann: Annotations | None, crit: SelectionCriteria,
               data_end: float, min_overlap_frac: float = 0.0) -> FilterResult:
    """Apply C1-C5 to every detected onset.

    Passing requires annotations for C3; calling without annotations
    skips C3 (used for model self-tests where every onset is real).
    """
    kept: list[FilteredCT] = []
    excluded = {c: 0 for c in ("C1", "C2", "C3", "C4", "C5")}
    n_off = log.offsets.size
    for i, t1 in enumerate(log.onsets):
        w0 = t1 + crit.t_minus
        # C1: low state throughout the pre-window
        if w0 < log.analysis_start or (i > 0 and log.offsets[i - 1] > w0):
            excluded["C1"] += 1
            continue
        # C2: high state throughout the post-window
        if i < n_off:
            t2_eff = float(log.offsets[i])
        elif log.end_state == "S":
            t2_eff = data_end
        else:
            excluded["C2"] += 1
            continue
        if t2_eff < t1 + crit.t_plus or t1 + crit.t_plus > data_end:
            excluded["C2"] += 1
            continue
        # C3: overlap with an annotated interval
        if ann is not None:
            total = 0.0
            for a, b in ann.intervals:
                total += max(0.0, min(t2_eff, b) - max(t1, a))
            if total <= 0.0 or total < min_overlap_frac * (t2_eff - t1):
                excluded["C3"] += 1
                continue
        # C4: no artefacts in the pre-window
        if any(a < t1 and b > w0 for a, b in log.artefacts):
            excluded["C4"] += 1
            continue
        # C5: no on-threshold crossing in the pre-window
        if np.any((log.almost_onsets >= w0) & (log.almost_onsets < t1)):
            excluded["C5"] += 1
            continue
        kept.append(FilteredCT(float(t1), t2_eff, i))
    return FilterResult(kept, int(log.onsets.size), excluded)


@dataclass(frozen=True)
class ClassifiedCT:
    """Provenance of one classified transition."""

    recording_id: str
    t1: float
    t_eval: float
    features: np.ndarray
    predicted: CTType


@dataclass
class ClassificationReport:
    """Counts and proportions of mechanisms among filtered transitions."""

    t_eval: float
    t_minus: float
    t_plus: float
    n_det: int
    n_filt: int
    counts: dict[CTType, int]
    classified: list[ClassifiedCT]
    excluded: dict[str, int]

    @property
    def proportions(self) -> dict[CTType, float]:
        if self.n_filt == 0:
            return {k: 0.0 for k in self.counts}
        return {k: v / self.n_filt for k, v in self.counts.items()}

    @property
    def prop_filtered(self) -> float:
        return self.n_filt / self.n_det if self.n_det else 0.0


def _prepare_series(recording: Recording, wcfg: WindowConfig) -> Trajectory:
    if recording.source == "external":
        return detrend(recording.trajectory, wcfg.bandwidth)
    return recording.trajectory


def classify_filtered(filt: FilterResult, recording: Recording, model: SvmModel,
                      t_eval: float, crit: SelectionCriteria,
                      wcfg: WindowConfig = WindowConfig(),
                      recording_id: str = "recording") -> ClassificationReport:
    """Predict the mechanism of every filtered transition at shifted time t_eval.

    External recordings are detrended first.  A transition whose
    features are undefined at t_eval is dropped from the filtered count
    with a logged reason.
    """
    series = _prepare_series(recording, wcfg)
    counts = {t: 0 for t in CTType}
    classified: list[ClassifiedCT] = []
    n_dropped = 0
    for ct in filt.kept:
        try:
            ft = tsp_tracks(series, ct.t1, crit.t_minus, crit.t_plus, wcfg)
            ft = add_slopes(ft, model.slope_len, wcfg.slope_step)
            vec = feature_vector_at(ft, t_eval, model.svm_type)
        except FeatureUnavailable as exc:
            logger.warning("dropping transition at t1=%.3f: %s", ct.t1, exc)
            n_dropped += 1
            continue
        label = predict(model, vec)
        counts[label] += 1
        classified.append(ClassifiedCT(recording_id, ct.t1, t_eval, vec, label))
    return ClassificationReport(
        t_eval=t_eval, t_minus=crit.t_minus, t_plus=crit.t_plus,
        n_det=filt.n_det, n_filt=len(filt.kept) - n_dropped,
        counts=counts, classified=classified, excluded=dict(filt.excluded),
    )


def sweep_tminus(recording: Recording, model: SvmModel, det: DetectorParams,
                 t_minus_grid=(-16.0, -14.0, -12.0, -10.0, -8.0), t_plus: float = 2.0,
                 t_eval: float = 2.0, wcfg: WindowConfig = WindowConfig(),
                 min_overlap_frac: float = 0.0,
                 recording_id: str = "recording") -> list[ClassificationReport]:
    """Filter and classify at several pre-window lengths.

    Detection runs once; the filter and the per-type proportions at
    t_eval are recomputed per pre-window.
    """
    if len(t_minus_grid) == 0:
        raise ValidationError("t_minus grid must be non-empty")
    log = detect(recording.trajectory, det)
    out = []
    for t_minus in t_minus_grid:
        crit = SelectionCriteria(t_minus, t_plus, require_no_almost=False)
        filt = filter_cts(log, recording.annotations, crit,
                          recording.trajectory.t_end, min_overlap_frac)
        out.append(classify_filtered(filt, recording, model, t_eval, crit, wcfg,
                                     recording_id))
    return out


@dataclass
class FitReport:
    """Feature-curve agreement between two ensembles, per mechanism.

    rmse[type][feature] is the root-mean-square difference of the
    min-max-normalised ensemble-mean curves on their common grid up to
    the evaluation time; mffe[type] is the mean over the eight features.
    """

    t_eval: float
    rmse: dict[CTType, dict[str, float]]
    mffe: dict[CTType, float]


_FEATURES_8 = ("gv", "log10gv", "ac", "log10gv_ac",
               "m_gv", "m_log10gv", "m_ac", "m_log10gv_ac")


def _mean_curve(tracks: list[FeatureTrack], name: str) -> tuple[float, float, np.ndarray]:
    """(grid t0, grid step, ensemble mean) for one feature."""
    first = tracks[0]
    if name.startswith("m_"):
        t0, step = first.slope_t0, first.slope_step
    else:
        t0, step = first.t0, first.step
    stack = np.vstack([getattr(ft, name) for ft in tracks])
    valid = ~np.isnan(stack)
    counts = valid.sum(axis=0)
    total = np.where(valid, stack, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return t0, step, mean


def _minmax(curve: np.ndarray) -> np.ndarray:
    finite = curve[~np.isnan(curve)]
    if finite.size == 0:
        return curve
    lo, hi = float(finite.min()), float(finite.max())
    if hi == lo:
        return np.where(np.isnan(curve), np.nan, 0.0)
    return (curve - lo) / (hi - lo)


def mffe(classified_tracks: dict[CTType, list[FeatureTrack]],
         reference_tracks: dict[CTType, list[FeatureTrack]],
         t_eval: float, grid_step: float = 0.1) -> FitReport:
    """Mean feature fit error between classified and reference ensembles.

    Per feature: average the curves within each ensemble, min-max
    normalise each mean over its own defined range, then take the RMSE
    on the shared grid (step ``grid_step``) up to ``t_eval``.  Types
    with an empty ensemble on either side are absent from the report.
    """
    rmse_by_type: dict[CTType, dict[str, float]] = {}
    mffe_by_type: dict[CTType, float] = {}
    for ct_type, cls_tracks in classified_tracks.items():
        ref_tracks = reference_tracks.get(ct_type, [])
        if not cls_tracks or not ref_tracks:
            continue
        rmses = {}
        for name in _FEATURES_8:
            a_t0, a_step, a_mean = _mean_curve(cls_tracks, name)
            b_t0, b_step, b_mean = _mean_curve(ref_tracks, name)
            a_norm = _minmax(a_mean)
            b_norm = _minmax(b_mean)
            lo = max(a_t0, b_t0)
            hi = min(a_t0 + a_step * (a_mean.size - 1),
                     b_t0 + b_step * (b_mean.size - 1), t_eval)
            if hi <= lo:
                continue
            k0 = int(np.ceil(round(lo / grid_step, 9)))
            k1 = int(np.floor(round(hi / grid_step, 9)))
            grid = np.arange(k0, k1 + 1) * grid_step
            ia = np.round((grid - a_t0) / a_step).astype(int)
            ib = np.round((grid - b_t0) / b_step).astype(int)
            diff = a_norm[ia] - b_norm[ib]
            diff = diff[~np.isnan(diff)]
            if diff.size == 0:
                continue
            rmses[name] = float(np.sqrt(np.mean(diff * diff)))
        if rmses:
            rmse_by_type[ct_type] = rmses
            mffe_by_type[ct_type] = float(np.mean(list(rmses.values())))
    return FitReport(t_eval, rmse_by_type, mffe_by_type)


def t1_statistics(t1s_by_type: dict[CTType, np.ndarray]) -> dict[CTType, dict[str, float]]:
    """Mean/std/min/max of onset times per mechanism (population std)."""
    out = {}
    for ct_type, t1s in t1s_by_type.items():
        t1s = np.asarray(t1s, dtype=np.float64)
        if t1s.size == 0:
            raise ValidationError(f"no onset times for {ct_type.name}")
        out[ct_type] = {
            "mean": float(t1s.mean()),
            "std": float(t1s.std()),
            "min": float(t1s.min()),
            "max": float(t1s.max()),
            "n": float(t1s.size),
        }
    return out


def residence_shear_study(sigmas=(0.0, 1.0, 2.0), n_cts: int = 700, base_seed: int = 0,
                          det: DetectorParams = DetectorParams(),
                          chunk_t: float = 20000.0, max_chunks: int = 120
                          ) -> dict[float, tuple[np.ndarray, np.ndarray]]:
    """Residence-time samples in both states for several shear values.

    Runs the bistable point with the shear parameter swept, harvests at
    least ``n_cts`` residence times per state, and subsamples each list
    to exactly ``n_cts`` (seeded) so the distributions are comparable.
    """
    if len(sigmas) == 0:
        raise ValidationError("sigma grid must be non-empty")
    base = regime_setup("nct").params
    out = {}
    for k, sigma in enumerate(sigmas):
        params = ModelParams(base.s, float(sigma), base.nu, base.omega, base.gamma)
        crit = SelectionCriteria(-1.0, 1.0)  # unused in duration mode
        s_durs, ns_durs = _harvest_nct(
            n_cts, base_seed, crit, det, WindowConfig(), False, chunk_t, max_chunks,
            params=params, seed_offset=_SEED_SHEAR + 1_000_000 * k,
            collect_durations=True,
        )
        if s_durs.size < n_cts or ns_durs.size < n_cts:
            raise ValidationError(
                f"sigma={sigma}: only {s_durs.size} high / {ns_durs.size} low residence "
                f"times within the {max_chunks}-chunk budget"
            )
        rng = np.random.Generator(np.random.PCG64(derive_seed(base_seed, _SEED_SHEAR + k)))
        s_pick = np.sort(rng.choice(s_durs, size=n_cts, replace=False))
        ns_pick = np.sort(rng.choice(ns_durs, size=n_cts, replace=False))
        out[float(sigma)] = (s_pick, ns_pick)
    return out


def assemble_recording(corpus: list[CorpusEntry], crit: SelectionCriteria,
                       dt: float = 0.001, pad: float = 8.0
                       ) -> tuple[Recording, list[CTType], np.ndarray]:
    """Concatenate harvested segments into one long synthetic recording.

    Each corpus entry must carry its raw segment.  Segments are joined
    with ``pad`` seconds of silence so the relay settles between them,
    and annotations mark [t1, segment end] of every transition.
    Returns the recording (tagged as model output), the true labels in
    order, and the assembled onset times.
    """
    if any(e.segment is None for e in corpus):
        raise ValidationError("assemble_recording needs corpus entries with raw segments")
    n_pad = int(round(pad / dt))
    pieces = [np.zeros(n_pad)]
    labels: list[CTType] = []
    t1s = []
    intervals = []
    pos = n_pad
    for e in corpus:
        seg = e.segment
        t1_idx = pos + int(round(-crit.t_minus / dt))  # onset sits -t_minus into the segment
        t1s.append(t1_idx * dt)
        intervals.append((t1_idx * dt, (pos + seg.size - 1) * dt))
        labels.append(e.label)
        pieces.append(seg)
        pieces.append(np.zeros(n_pad))
        pos += seg.size + n_pad
    x = np.concatenate(pieces)
    rec = Recording(Trajectory(0.0, dt, x), source="model",
                    annotations=Annotations(np.asarray(intervals)))
    return rec, labels, np.asarray(t1s)
