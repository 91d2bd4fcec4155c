"""File formats, run configuration, and provenance manifests.

CSV is the only interchange format.  Floats are written with %.17g so a
write/read round trip is bit-exact.  Formats:

* trajectory:  ``t,x`` or ``t,x,y``
* event log:   ``kind,t_start,t_end`` with kind in
               {ct, almost_on, almost_off, artefact}
* annotations: ``onset_s,offset_s``
* feature track: ``T,gv,log10gv,ac,log10gv_ac,m_gv,m_log10gv,m_ac,m_log10gv_ac``
               (empty cells for undefined entries)

Every CLI command writes a manifest next to its outputs carrying the
fully resolved configuration and SHA-256 hashes of all inputs and
outputs, which makes any artifact re-derivable: feeding a manifest back
as the --config of the same command reproduces byte-identical CSVs.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np

from .detector import Annotations, DetectorParams, EventLog
from .errors import IoError, ValidationError
from .features import FEATURE_NAMES, FeatureTrack, WindowConfig, add_slopes
from .model import ModelParams, ParameterPath, SimConfig, Trajectory
from .pipeline import CorpusEntry, SelectionCriteria
from .classifier import CTType, Hyper

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
CONFIG_ENV_VAR = "CTCLASS_CONFIG"


def _fmt(v: float) -> str:
    return "%.17g" % v


def _snap_step(span: float, n_steps: int) -> float:
    """Grid spacing from a time span, snapped to 12 significant digits.

    Sample times are stored at full precision, but their differences
    carry representation noise; snapping recovers the exact spacing for
    any humanly specified step.
    """
    return float("%.12g" % (span / n_steps))


# -- trajectories ------------------------------------------------------------

def write_trajectory(path: str | Path, tr: Trajectory) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            fh.write("t,x,y\n" if tr.y is not None else "t,x\n")
            times = tr.times()
            if tr.y is not None:
                for i in range(len(tr)):
                    fh.write(f"{_fmt(times[i])},{_fmt(tr.x[i])},{_fmt(tr.y[i])}\n")
            else:
                for i in range(len(tr)):
                    fh.write(f"{_fmt(times[i])},{_fmt(tr.x[i])}\n")
    except OSError as exc:
        raise IoError(f"cannot write trajectory to {path}: {exc}") from None


def read_trajectory(path: str | Path) -> Trajectory:
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().strip()
            if header not in ("t,x", "t,x,y"):
                raise ValidationError(f"{path}:1: unexpected trajectory header {header!r}")
            has_y = header == "t,x,y"
            t, x, y = [], [], []
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != (3 if has_y else 2):
                    raise ValidationError(f"{path}:{lineno}: wrong column count")
                try:
                    t.append(float(parts[0]))
                    x.append(float(parts[1]))
                    if has_y:
                        y.append(float(parts[2]))
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: malformed number") from None
    except OSError as exc:
        raise IoError(f"cannot read trajectory from {path}: {exc}") from None
    if len(t) < 2:
        raise ValidationError(f"{path}: trajectory needs at least two samples")
    t = np.asarray(t)
    dt = _snap_step(float(t[-1] - t[0]), len(t) - 1)
    if dt <= 0:
        raise ValidationError(f"{path}: non-increasing time column")
    steps = np.diff(t)
    if np.max(np.abs(steps - dt)) > 1e-9 * max(1.0, abs(dt)):
        raise ValidationError(f"{path}: sample spacing is not uniform")
    return Trajectory(float(t[0]), dt, np.asarray(x), np.asarray(y) if has_y else None)


# -- event logs ---------------------------------------------------------------

def write_events(path: str | Path, log: EventLog) -> None:
    rows = []
    pairs = log.pairs
    for t1, t2 in pairs:
        rows.append((t1, "ct", _fmt(t1), _fmt(t2)))
    if log.onsets.size > log.offsets.size:  # trailing open transition
        t1 = log.onsets[-1]
        rows.append((t1, "ct", _fmt(t1), ""))
    for t in log.almost_onsets:
        rows.append((t, "almost_on", _fmt(t), ""))
    for t in log.almost_offsets:
        rows.append((t, "almost_off", _fmt(t), ""))
    for a, b in log.artefacts:
        rows.append((a, "artefact", _fmt(a), _fmt(b)))
    rows.sort(key=lambda r: r[0])
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            fh.write("kind,t_start,t_end\n")
            for _, kind, a, b in rows:
                fh.write(f"{kind},{a},{b}\n")
    except OSError as exc:
        raise IoError(f"cannot write event log to {path}: {exc}") from None


def read_events(path: str | Path) -> EventLog:
    path = Path(path)
    onsets, offsets = [], []
    almost_on, almost_off, arte = [], [], []
    open_onset = None
    try:
        with path.open() as fh:
            header = fh.readline().strip()
            if header != "kind,t_start,t_end":
                raise ValidationError(f"{path}:1: unexpected event header {header!r}")
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise ValidationError(f"{path}:{lineno}: wrong column count")
                kind, a, b = parts
                try:
                    ta = float(a)
                    tb = float(b) if b else None
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: malformed number") from None
                if kind == "ct":
                    if tb is None:
                        open_onset = ta
                    else:
                        onsets.append(ta)
                        offsets.append(tb)
                elif kind == "almost_on":
                    almost_on.append(ta)
                elif kind == "almost_off":
                    almost_off.append(ta)
                elif kind == "artefact":
                    if tb is None:
                        raise ValidationError(f"{path}:{lineno}: artefact needs an end time")
                    arte.append((ta, tb))
                else:
                    raise ValidationError(f"{path}:{lineno}: unknown kind {kind!r}")
    except OSError as exc:
        raise IoError(f"cannot read event log from {path}: {exc}") from None
    if open_onset is not None:
        onsets.append(open_onset)
    end_state = "S" if len(onsets) > len(offsets) else "NS"
    return EventLog(np.asarray(onsets), np.asarray(offsets), np.asarray(almost_on),
                    np.asarray(almost_off), np.asarray(arte).reshape(-1, 2), end_state)


# -- annotations --------------------------------------------------------------

def write_annotations(path: str | Path, ann: Annotations) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            fh.write("onset_s,offset_s\n")
            for a, b in ann.intervals:
                fh.write(f"{_fmt(a)},{_fmt(b)}\n")
    except OSError as exc:
        raise IoError(f"cannot write annotations to {path}: {exc}") from None


def read_annotations(path: str | Path) -> Annotations:
    path = Path(path)
    rows = []
    try:
        with path.open() as fh:
            header = fh.readline().strip()
            if header != "onset_s,offset_s":
                raise ValidationError(f"{path}:1: unexpected annotations header {header!r}")
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    raise ValidationError(f"{path}:{lineno}: wrong column count")
                try:
                    rows.append((float(parts[0]), float(parts[1])))
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: malformed number") from None
    except OSError as exc:
        raise IoError(f"cannot read annotations from {path}: {exc}") from None
    return Annotations(np.asarray(rows).reshape(-1, 2))


# -- feature tracks -----------------------------------------------------------

def write_feature_track(path: str | Path, ft: FeatureTrack) -> None:
    """One row per property-grid time; slope cells filled on their grid."""
    path = Path(path)
    vt = ft.value_times()
    slope_cells: dict[int, int] = {}
    st = ft.slope_times()
    for q, t in enumerate(st):
        k = int(round((t - ft.t0) / ft.step))
        slope_cells[k] = q

    def cell(v: float) -> str:
        return "" if math.isnan(v) else _fmt(v)

    try:
        with path.open("w", newline="") as fh:
            fh.write("T," + ",".join(FEATURE_NAMES) + "\n")
            for k in range(vt.size):
                row = [
                    _fmt(vt[k]),
                    cell(ft.gv[k]), cell(ft.log10gv[k]),
                    cell(ft.ac[k]), cell(ft.log10gv_ac[k]),
                ]
                if k in slope_cells:
                    q = slope_cells[k]
                    row += [cell(ft.m_gv[q]), cell(ft.m_log10gv[q]),
                            cell(ft.m_ac[q]), cell(ft.m_log10gv_ac[q])]
                else:
                    row += ["", "", "", ""]
                fh.write(",".join(row) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write feature track to {path}: {exc}") from None


def _read_track_values(path: Path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    cols: dict[str, list[float]] = {nm: [] for nm in FEATURE_NAMES[:4]}
    times = []
    with path.open() as fh:
        header = fh.readline().strip()
        expected = "T," + ",".join(FEATURE_NAMES)
        if header != expected:
            raise ValidationError(f"{path}:1: unexpected feature header")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 9:
                raise ValidationError(f"{path}:{lineno}: wrong column count")
            times.append(float(parts[0]))
            for j, nm in enumerate(FEATURE_NAMES[:4]):
                parts_j = parts[1 + j]
                cols[nm].append(float(parts_j) if parts_j else math.nan)
    return np.asarray(times), {nm: np.asarray(v) for nm, v in cols.items()}


# -- corpus directories -------------------------------------------------------

def write_corpus(dirpath: str | Path, corpus: list[CorpusEntry]) -> None:
    """Corpus layout: corpus_index.csv plus one track CSV per entry."""
    dirpath = Path(dirpath)
    tracks = dirpath / "tracks"
    tracks.mkdir(parents=True, exist_ok=True)
    try:
        with (dirpath / "corpus_index.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "source_id", "seed", "t1", "t_minus", "t_plus",
                             "win_len", "slope_len", "slope_step", "file"])
            for k, e in enumerate(corpus):
                fname = f"tracks/{e.label.name.lower()}_{k:04d}.csv"
                ft = e.track
                if ft.m_gv.size == 0:
                    ft = add_slopes(ft, ft.slope_len, ft.slope_step)
                write_feature_track(dirpath / fname, ft)
                writer.writerow([
                    e.label.name, e.source_id, e.seed, _fmt(e.t1),
                    _fmt(ft.t_minus), _fmt(ft.t_plus), _fmt(ft.win_len),
                    _fmt(ft.slope_len), _fmt(ft.slope_step), fname,
                ])
    except OSError as exc:
        raise IoError(f"cannot write corpus to {dirpath}: {exc}") from None


def read_corpus(dirpath: str | Path) -> list[CorpusEntry]:
    """Rebuild corpus entries; slope arrays are recomputed from the values."""
    dirpath = Path(dirpath)
    index = dirpath / "corpus_index.csv"
    if not index.exists():
        raise IoError(f"no corpus_index.csv under {dirpath}")
    entries = []
    with index.open() as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            times, cols = _read_track_values(dirpath / row["file"])
            t_minus = float(row["t_minus"])
            t_plus = float(row["t_plus"])
            win_len = float(row["win_len"])
            slope_len = float(row["slope_len"])
            slope_step = float(row["slope_step"])
            step = _snap_step(float(times[-1] - times[0]), times.size - 1)
            ft = FeatureTrack(
                t_minus=t_minus, t_plus=t_plus, win_len=win_len, slope_len=slope_len,
                t0=float(times[0]), step=step,
                gv=cols["gv"], log10gv=cols["log10gv"], ac=cols["ac"],
                log10gv_ac=cols["log10gv_ac"],
                slope_t0=t_minus + win_len + slope_len, slope_step=slope_step,
                m_gv=np.empty(0), m_log10gv=np.empty(0),
                m_ac=np.empty(0), m_log10gv_ac=np.empty(0),
            )
            entries.append(CorpusEntry(
                CTType.parse(row["label"]), float(row["t1"]), row["source_id"],
                int(row["seed"]), ft,
            ))
    return entries


# -- generic report tables ----------------------------------------------------

def write_table(path: str | Path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(
                    _fmt(v) if isinstance(v, float) else str(v) for v in row
                ) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write table to {path}: {exc}") from None


# -- manifests ----------------------------------------------------------------

def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    try:
        with Path(path).open("rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    except OSError as exc:
        raise IoError(f"cannot hash {path}: {exc}") from None
    return h.hexdigest()


def write_manifest(path: str | Path, command: str, config: dict,
                   inputs: dict[str, str | Path], outputs: dict[str, str | Path]) -> None:
    payload = {
        "format_version": MANIFEST_VERSION,
        "command": command,
        "config": config,
        "inputs": {k: {"path": str(p), "sha256": file_sha256(p)} for k, p in inputs.items()},
        "outputs": {k: {"path": str(p), "sha256": file_sha256(p)} for k, p in outputs.items()},
    }
    try:
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write manifest to {path}: {exc}") from None


def check_input_hash(path: str | Path) -> None:
    """Warn when a file no longer matches the manifest that produced it."""
    path = Path(path)
    manifest = path.with_suffix(path.suffix + ".manifest.json")
    if not manifest.exists():
        return
    try:
        payload = json.loads(manifest.read_text())
    except (OSError, json.JSONDecodeError):
        return
    for entry in payload.get("outputs", {}).values():
        if Path(entry.get("path", "")).name == path.name:
            if entry.get("sha256") != file_sha256(path):
                logger.warning("hash mismatch: %s differs from its manifest %s",
                               path, manifest)
            return


# -- run configuration ----------------------------------------------------------

DEFAULT_CONFIG: dict = {
    "model": {"s": 1.0, "sigma": 1.0, "nu": 0.18, "omega": 1.3, "gamma": 10.0},
    "path": {"kind": "constant", "mu0": -0.22, "rate": 0.0, "t_end": 200.0},
    "sim": {"dt": 0.001, "t_end": 200.0, "x0": 0.1, "y0": 0.1,
            "seed": 12345, "max_radius": 1.0e6},
    "detector": {"alpha": 0.55, "beta": 0.45, "window": 1.0, "step": 0.001,
                 "min_high": 2.0, "min_low": 5.0, "max_jump": None, "dt": 0.001},
    "window": {"win_len": 1.0, "win_step": 0.001, "slope_len": 8.0,
               "slope_step": 0.1, "lag": None, "bandwidth": 30},
    "selection": {"t_minus": -30.0, "t_plus": 10.0, "require_no_almost": True},
    "classifier": {"c": 1.0, "epochs": 200, "train_frac": 0.7,
                   "svm_type": 3, "split_seed": 7},
    "corpus": {"n_per_type": 10, "seed": 12345, "chunk_t": 20000.0, "max_chunks": 80},
    "classify": {"t_minus_grid": [-16.0, -14.0, -12.0, -10.0, -8.0],
                 "t_plus": 2.0, "t_eval": 2.0, "min_overlap_frac": 0.0},
    "report": {"n_permutations": 100, "seed": 0,
               "shear_sigmas": [0.0, 1.0, 2.0], "shear_n": 700},
}


def _check_unknown(given: dict, defaults: dict, prefix: str = "") -> None:
    for key, value in given.items():
        if key not in defaults:
            raise ValidationError(f"unknown config key {prefix + key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {prefix + key!r} must be a section")
            _check_unknown(value, defaults[key], prefix + key + ".")


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None) -> dict:
    """Defaults overlaid with a JSON config file (or a manifest)."""
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from None
    if "config" in payload and "format_version" in payload:
        payload = payload["config"]  # a manifest was passed back in
    _check_unknown(payload, DEFAULT_CONFIG)
    return _merge(DEFAULT_CONFIG, payload)


def config_model(cfg: dict) -> ModelParams:
    m = cfg["model"]
    return ModelParams(m["s"], m["sigma"], m["nu"], m["omega"], m["gamma"])


def config_path(cfg: dict) -> ParameterPath:
    p = cfg["path"]
    return ParameterPath(p["kind"], p["mu0"], p["rate"], p["t_end"])


def config_sim(cfg: dict) -> SimConfig:
    s = cfg["sim"]
    return SimConfig(s["dt"], s["t_end"], s["x0"], s["y0"], s["seed"], s["max_radius"])


def config_detector(cfg: dict) -> DetectorParams:
    d = cfg["detector"]
    jump = d["max_jump"] if d["max_jump"] is not None else math.inf
    return DetectorParams(d["alpha"], d["beta"], d["window"], d["step"],
                          d["min_high"], d["min_low"], jump, d["dt"])


def config_window(cfg: dict) -> WindowConfig:
    w = cfg["window"]
    return WindowConfig(w["win_len"], w["win_step"], w["slope_len"],
                        w["slope_step"], w["lag"], w["bandwidth"])


def config_selection(cfg: dict) -> SelectionCriteria:
    s = cfg["selection"]
    return SelectionCriteria(s["t_minus"], s["t_plus"], s["require_no_almost"])


def config_hyper(cfg: dict) -> Hyper:
    c = cfg["classifier"]
    return Hyper(c["c"], c["epochs"], c["train_frac"])
