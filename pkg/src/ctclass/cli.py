"""Command-line front end.

Subcommands: simulate, detect, features, corpus, train, classify,
report.  Every command resolves its configuration from the built-in
defaults, an optional JSON config file (--config, or the path in
$CTCLASS_CONFIG), and command-line flags, in that order of precedence;
it then writes its outputs plus a manifest with the resolved config and
SHA-256 hashes.  Passing a manifest back via --config reproduces the
run.

Exit codes: 0 success, 1 validation, 2 I/O, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from . import plots
from .classifier import (
    CTType,
    LabeledSample,
    accuracy_curve,
    model_from_json,
    model_to_json,
    permutation_importance,
    train,
)
from .detector import DetectorParams, detect, tune_alpha
from .errors import CtclassError, IoError, NumericError, ValidationError
from .features import SvmType, add_slopes, detrend, feature_track, feature_vector_at
from .model import SimConfig, Trajectory, regime_setup, simulate
from .pipeline import (
    Recording,
    SelectionCriteria,
    corpus_tracks,
    generate_corpus,
    mffe,
    residence_shear_study,
    sweep_tminus,
)

logger = logging.getLogger("ctclass")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    if not out.parent.exists():
        raise IoError(f"parent of output directory {out} does not exist")
    out.mkdir(exist_ok=True)
    return out


def _load_cfg(args) -> dict:
    path = args.config or os.environ.get(cio.CONFIG_ENV_VAR)
    return cio.load_config(path)


def _parse_grid(spec: str) -> list[float]:
    """lo:hi:step -> inclusive grid."""
    try:
        lo, hi, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ValidationError(f"grid {spec!r} must look like lo:hi:step") from None
    if step <= 0 or hi < lo:
        raise ValidationError(f"bad grid {spec!r}")
    n = int(round((hi - lo) / step))
    return [lo + k * step for k in range(n + 1)]


def _svm_label(svm_type: int, slope_len: float) -> str:
    return f"type-{svm_type}" + (f" tm={slope_len:g}" if svm_type != 1 else "")


# -- commands ------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    if args.regime:
        setup = regime_setup(args.regime)
        p = setup.params
        path = setup.path
        cfg["model"] = {"s": p.s, "sigma": p.sigma, "nu": p.nu,
                        "omega": p.omega, "gamma": p.gamma}
        cfg["path"] = {"kind": path.kind, "mu0": path.mu0,
                       "rate": path.rate, "t_end": path.t_end}
        if path.kind == "linear-ramp":
            cfg["sim"]["t_end"] = min(cfg["sim"]["t_end"], path.t_end)
        else:
            cfg["sim"]["t_end"] = setup.default_t_end
    if args.t_end is not None:
        cfg["sim"]["t_end"] = args.t_end
    if args.seed is not None:
        cfg["sim"]["seed"] = args.seed
    out = _out_dir(args)

    params = cio.config_model(cfg)
    path = cio.config_path(cfg)
    sim = cio.config_sim(cfg)
    logger.info("simulating %s for %g time units (seed %d)",
                args.regime or "configured model", sim.t_end, sim.seed)
    tr = simulate(params, path, sim)

    traj_file = out / f"{args.name}.csv"
    cio.write_trajectory(traj_file, tr)
    fig_file = out / f"{args.name}.png"
    det = cio.config_detector(cfg)
    plots.plot_trajectory(fig_file, tr, det.alpha, det.beta)
    cio.write_manifest(out / f"{args.name}.csv.manifest.json", "simulate", cfg,
                       inputs={}, outputs={"trajectory": traj_file, "figure": fig_file})
    print(traj_file)
    return 0


def cmd_detect(args) -> int:
    cfg = _load_cfg(args)
    for key in ("alpha", "beta", "min_low", "max_jump"):
        val = getattr(args, key)
        if val is not None:
            cfg["detector"][key] = val
    out = _out_dir(args)
    cio.check_input_hash(args.traj)
    tr = cio.read_trajectory(args.traj)
    det = cio.config_detector(cfg)

    inputs = {"trajectory": args.traj}
    if args.tune_alpha:
        if not args.annotations:
            raise ValidationError("--tune-alpha needs --annotations")
        ann = cio.read_annotations(args.annotations)
        inputs["annotations"] = args.annotations
        grid = _parse_grid(args.tune_alpha)
        best = tune_alpha(tr, ann, det, grid)
        logger.info("alpha sweep over %d values: best alpha = %g", len(grid), best)
        cfg["detector"]["alpha"] = best
        cfg["detector"]["beta"] = best - 0.01
        det = cio.config_detector(cfg)

    log = detect(tr, det)
    logger.info("%d transitions, %d/%d almost-onsets/offsets, %d artefacts",
                log.offsets.size, log.almost_onsets.size,
                log.almost_offsets.size, log.artefacts.shape[0])
    events_file = out / f"{args.name}.csv"
    cio.write_events(events_file, log)
    cio.write_manifest(out / f"{args.name}.csv.manifest.json", "detect", cfg,
                       inputs=inputs, outputs={"events": events_file})
    print(events_file)
    return 0


def cmd_features(args) -> int:
    cfg = _load_cfg(args)
    if args.tm is not None:
        cfg["window"]["slope_len"] = args.tm
    if args.Tminus is not None:
        cfg["selection"]["t_minus"] = args.Tminus
    if args.Tplus is not None:
        cfg["selection"]["t_plus"] = args.Tplus
    out = _out_dir(args)
    cio.check_input_hash(args.traj)
    tr = cio.read_trajectory(args.traj)
    wcfg = cio.config_window(cfg)
    crit = cio.config_selection(cfg)
    if args.detrend:
        tr = detrend(tr, wcfg.bandwidth)
    ft = feature_track(tr, args.t1, crit.t_minus, crit.t_plus, wcfg)
    track_file = out / f"{args.name}.csv"
    cio.write_feature_track(track_file, ft)
    fig_file = out / f"{args.name}.png"
    plots.plot_feature_track(fig_file, ft)
    cio.write_manifest(out / f"{args.name}.csv.manifest.json", "features", cfg,
                       inputs={"trajectory": args.traj},
                       outputs={"track": track_file, "figure": fig_file})
    print(track_file)
    return 0


def cmd_corpus(args) -> int:
    cfg = _load_cfg(args)
    if args.n is not None:
        cfg["corpus"]["n_per_type"] = args.n
    if args.seed is not None:
        cfg["corpus"]["seed"] = args.seed
    out = _out_dir(args)
    det = cio.config_detector(cfg)
    wcfg = cio.config_window(cfg)
    crit = cio.config_selection(cfg)
    c = cfg["corpus"]
    logger.info("harvesting %d transitions per mechanism (seed %d)",
                c["n_per_type"], c["seed"])
    corpus = generate_corpus(c["n_per_type"], c["seed"], crit, det, wcfg,
                             chunk_t=c["chunk_t"], max_chunks=c["max_chunks"])
    cio.write_corpus(out, corpus)
    cio.write_manifest(out / "corpus.manifest.json", "corpus", cfg,
                       inputs={}, outputs={"index": out / "corpus_index.csv"})
    print(out / "corpus_index.csv")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.svm_type is not None:
        cfg["classifier"]["svm_type"] = args.svm_type
    if args.tm is not None:
        cfg["window"]["slope_len"] = args.tm
    out = _out_dir(args)
    corpus = cio.read_corpus(args.corpus)
    svm_type = SvmType(cfg["classifier"]["svm_type"])
    slope_len = cfg["window"]["slope_len"]
    hyper = cio.config_hyper(cfg)
    split_seed = cfg["classifier"]["split_seed"]

    tracks = corpus_tracks(corpus, slope_len, cfg["window"]["slope_step"])
    t_eval = args.T
    samples = [
        LabeledSample(feature_vector_at(ft, t_eval, svm_type), label, t_eval, src)
        for ft, label, src in tracks
    ]
    model, acc = train(samples, split_seed, hyper, svm_type, slope_len)
    logger.info("held-out accuracy at T=%g: %.3f (%s)", t_eval, acc,
                _svm_label(svm_type, slope_len))

    model_file = out / f"{args.name}.json"
    model_file.write_text(model_to_json(model))
    outputs = {"model": model_file}

    if args.acc_grid:
        grid = _parse_grid(args.acc_grid)
        curve = accuracy_curve(tracks, svm_type, slope_len, grid,
                               base_seed=split_seed, hyper=hyper)
        acc_file = out / f"{args.name}_accuracy.csv"
        cio.write_table(acc_file, ["T", "accuracy"],
                        [[t, a] for t, a in curve])
        fig_file = out / f"{args.name}_accuracy.png"
        plots.plot_accuracy_curve(fig_file, {_svm_label(svm_type, slope_len): curve})
        outputs["accuracy"] = acc_file
        outputs["figure"] = fig_file

    cio.write_manifest(out / f"{args.name}.json.manifest.json", "train", cfg,
                       inputs={"corpus": Path(args.corpus) / "corpus_index.csv"},
                       outputs=outputs)
    print(model_file)
    return 0


def _load_recording(args) -> Recording:
    cio.check_input_hash(args.traj)
    tr = cio.read_trajectory(args.traj)
    ann = cio.read_annotations(args.annotations) if args.annotations else None
    return Recording(tr, source=args.source, annotations=ann)


def cmd_classify(args) -> int:
    cfg = _load_cfg(args)
    if args.Tminus is not None:
        cfg["classify"]["t_minus_grid"] = [args.Tminus]
    if args.Tplus is not None:
        cfg["classify"]["t_plus"] = args.Tplus
    if args.T is not None:
        cfg["classify"]["t_eval"] = args.T
    out = _out_dir(args)
    model = model_from_json(Path(args.model).read_text())
    recording = _load_recording(args)
    det = cio.config_detector(cfg)
    wcfg = cio.config_window(cfg)
    cc = cfg["classify"]

    reports = sweep_tminus(
        recording, model, det, tuple(cc["t_minus_grid"]), cc["t_plus"],
        cc["t_eval"], wcfg, cc["min_overlap_frac"],
        recording_id=Path(args.traj).stem,
    )
    rows = []
    for rep in reports:
        props = rep.proportions
        rows.append([rep.t_minus, rep.prop_filtered,
                     props[CTType.BCT], props[CTType.BNCT], props[CTType.NCT]])
        logger.info("Tminus=%g: detected=%d filtered=%d proportions "
                    "bct=%.3f bnct=%.3f nct=%.3f", rep.t_minus, rep.n_det,
                    rep.n_filt, props[CTType.BCT], props[CTType.BNCT],
                    props[CTType.NCT])
    table_file = out / f"{args.name}.csv"
    cio.write_table(table_file, ["Tminus", "prop_filt", "prop_bct", "prop_bnct", "prop_nct"], rows)
    fig_file = out / f"{args.name}.png"
    plots.plot_proportions(fig_file, rows)

    detail_rows = [
        [rep.t_minus, c.t1, c.t_eval, c.predicted.name]
        for rep in reports for c in rep.classified
    ]
    detail_file = out / f"{args.name}_transitions.csv"
    cio.write_table(detail_file, ["Tminus", "t1", "T", "predicted"], detail_rows)

    inputs = {"trajectory": args.traj, "model": args.model}
    if args.annotations:
        inputs["annotations"] = args.annotations
    cio.write_manifest(out / f"{args.name}.csv.manifest.json", "classify", cfg,
                       inputs=inputs,
                       outputs={"proportions": table_file, "figure": fig_file,
                                "transitions": detail_file})
    print(table_file)
    return 0


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    wrote_any = False

    if args.mpi:
        if not (args.model and args.corpus):
            raise ValidationError("--mpi needs --model and --corpus")
        model = model_from_json(Path(args.model).read_text())
        corpus = cio.read_corpus(args.corpus)
        tracks = corpus_tracks(corpus, model.slope_len, cfg["window"]["slope_step"])
        t_eval = args.T if args.T is not None else cfg["classify"]["t_eval"]
        samples = [
            LabeledSample(feature_vector_at(ft, t_eval, model.svm_type), label, t_eval, src)
            for ft, label, src in tracks
        ]
        rep = permutation_importance(model, samples,
                                     n_perms=cfg["report"]["n_permutations"],
                                     seed=cfg["report"]["seed"])
        names = _feature_names_for(model.svm_type)
        mpi_file = out / "mpi.csv"
        cio.write_table(mpi_file, ["feature", "mpi", "std"],
                        [[names[j], float(rep.mpi[j]), float(rep.std[j])]
                         for j in range(len(names))])
        plots.plot_mpi(out / "mpi.png", rep.mpi, rep.std, names)
        cio.write_manifest(out / "mpi.csv.manifest.json", "report", cfg,
                           inputs={"model": args.model,
                                   "corpus": Path(args.corpus) / "corpus_index.csv"},
                           outputs={"mpi": mpi_file, "figure": out / "mpi.png"})
        print(mpi_file)
        wrote_any = True

    if args.mffe:
        if not (args.model and args.corpus and args.traj):
            raise ValidationError("--mffe needs --model, --corpus, and --traj")
        model = model_from_json(Path(args.model).read_text())
        corpus = cio.read_corpus(args.corpus)
        recording = _load_recording(args)
        det = cio.config_detector(cfg)
        wcfg = cio.config_window(cfg)
        cc = cfg["classify"]
        t_minus = args.Tminus if args.Tminus is not None else -20.0
        t_plus = args.Tplus if args.Tplus is not None else 10.0
        rows_counts, rows_mffe = _mffe_rows(
            recording, model, det, wcfg, corpus, cfg, t_minus, t_plus)
        counts_file = out / "counts_vs_T.csv"
        cio.write_table(counts_file, ["T", "n_bct", "n_bnct", "n_nct"], rows_counts)
        mffe_file = out / "mffe_vs_T.csv"
        cio.write_table(mffe_file, ["T", "mffe_bct", "mffe_bnct", "mffe_nct"], rows_mffe)
        plots.plot_mffe(out / "mffe_vs_T.png", rows_mffe)
        inputs = {"model": args.model, "trajectory": args.traj,
                  "corpus": Path(args.corpus) / "corpus_index.csv"}
        if args.annotations:
            inputs["annotations"] = args.annotations
        cio.write_manifest(out / "mffe_vs_T.csv.manifest.json", "report", cfg,
                           inputs=inputs,
                           outputs={"counts": counts_file, "mffe": mffe_file,
                                    "figure": out / "mffe_vs_T.png"})
        print(mffe_file)
        wrote_any = True

    if args.shear:
        r = cfg["report"]
        durations = residence_shear_study(tuple(r["shear_sigmas"]), r["shear_n"],
                                          cfg["corpus"]["seed"],
                                          cio.config_detector(cfg),
                                          chunk_t=cfg["corpus"]["chunk_t"])
        rows = []
        for sigma, (s_durs, ns_durs) in sorted(durations.items()):
            rows += [[sigma, "high", float(d)] for d in s_durs]
            rows += [[sigma, "low", float(d)] for d in ns_durs]
        dur_file = out / "residence_times.csv"
        cio.write_table(dur_file, ["sigma", "state", "duration"], rows)
        plots.plot_residence_hists(out / "residence_times.png", durations)
        cio.write_manifest(out / "residence_times.csv.manifest.json", "report", cfg,
                           inputs={},
                           outputs={"durations": dur_file,
                                    "figure": out / "residence_times.png"})
        print(dur_file)
        wrote_any = True

    if not wrote_any:
        raise ValidationError("report: pick at least one of --mpi, --mffe, --shear")
    return 0


def _feature_names_for(svm_type: SvmType) -> list[str]:
    from .features import FEATURE_NAMES

    if svm_type == SvmType.VALUES:
        return list(FEATURE_NAMES[:4])
    if svm_type == SvmType.SLOPES:
        return list(FEATURE_NAMES[4:])
    return list(FEATURE_NAMES)


def _mffe_rows(recording, model, det, wcfg, corpus, cfg, t_minus, t_plus):
    """Classify at every admissible T and compare feature curves per type."""
    from .features import tsp_tracks
    from .pipeline import classify_filtered, filter_cts
    from .detector import detect as _detect

    crit = SelectionCriteria(t_minus, t_plus, require_no_almost=False)
    log = _detect(recording.trajectory, det)
    filt = filter_cts(log, recording.annotations, crit,
                      recording.trajectory.t_end,
                      cfg["classify"]["min_overlap_frac"])
    t_lo = t_minus + 2 * wcfg.win_len + model.slope_len
    n = int(round(t_plus - t_lo))
    if n < 0:
        raise ValidationError(
            f"no admissible T: features start at {t_lo:g} but the window ends at {t_plus:g}"
        )
    t_grid = [t_lo + k for k in range(n + 1)]
    reference = {}
    for e in corpus:
        reference.setdefault(e.label, []).append(
            add_slopes(e.track, model.slope_len, wcfg.slope_step))
    series = recording.trajectory if recording.source == "model" \
        else detrend(recording.trajectory, wcfg.bandwidth)
    rows_counts, rows_mffe = [], []
    for t_eval in t_grid:
        rep = classify_filtered(filt, recording, model, t_eval, crit, wcfg)
        rows_counts.append([t_eval, rep.counts[CTType.BCT],
                            rep.counts[CTType.BNCT], rep.counts[CTType.NCT]])
        by_type: dict[CTType, list] = {}
        for c in rep.classified:
            ft = tsp_tracks(series, c.t1, crit.t_minus, crit.t_plus, wcfg)
            by_type.setdefault(c.predicted, []).append(
                add_slopes(ft, model.slope_len, wcfg.slope_step))
        fit = mffe(by_type, reference, t_eval, wcfg.slope_step)
        rows_mffe.append([
            t_eval,
            fit.mffe.get(CTType.BCT, math.nan),
            fit.mffe.get(CTType.BNCT, math.nan),
            fit.mffe.get(CTType.NCT, math.nan),
        ])
    return rows_counts, rows_mffe


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctclass",
                     description="Simulate, detect, and classify critical transitions "
                                 "between low- and high-amplitude states.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, name="out"):
        p.add_argument("--config", help="JSON config file (or a manifest to replay)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--name", default=name, help="output file stem")

    p = sub.add_parser("simulate", help="integrate the model and write a trajectory CSV")
    common(p, "trajectory")
    p.add_argument("--regime", choices=["bct", "bnct", "nct"],
                   help="parameter preset for one transition mechanism")
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="run the relay detector over a trajectory")
    common(p, "events")
    p.add_argument("--traj", required=True)
    p.add_argument("--annotations")
    p.add_argument("--tune-alpha", dest="tune_alpha", metavar="LO:HI:STEP",
                   help="sweep the on-threshold against the annotations")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--min-low", type=float, dest="min_low")
    p.add_argument("--max-jump", type=float, dest="max_jump")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("features", help="feature track around one transition")
    common(p, "features")
    p.add_argument("--traj", required=True)
    p.add_argument("--t1", type=float, required=True, help="transition time (s)")
    p.add_argument("--Tminus", type=float)
    p.add_argument("--Tplus", type=float)
    p.add_argument("--tm", type=float, help="slope length (s)")
    p.add_argument("--detrend", action="store_true")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("corpus", help="harvest a labelled training corpus from the model")
    common(p, "corpus")
    p.add_argument("--n", type=int, help="examples per mechanism")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="fit the max-margin classifier on a corpus")
    common(p, "model")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--svm-type", type=int, choices=[1, 2, 3], dest="svm_type")
    p.add_argument("--tm", type=float, help="slope length (s)")
    p.add_argument("--T", type=float, default=2.0, help="shifted time of the training features")
    p.add_argument("--acc-grid", dest="acc_grid", metavar="LO:HI:STEP",
                   help="also evaluate accuracy over this T grid")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="filter and classify transitions in a recording")
    common(p, "classification")
    p.add_argument("--traj", required=True)
    p.add_argument("--annotations")
    p.add_argument("--model", required=True)
    p.add_argument("--source", choices=["external", "model"], default="external")
    p.add_argument("--Tminus", type=float, help="single pre-window start (overrides the grid)")
    p.add_argument("--Tplus", type=float)
    p.add_argument("--T", type=float, help="shifted classification time")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", help="feature-importance, model-fit, and shear reports")
    common(p, "report")
    p.add_argument("--mpi", action="store_true", help="permutation importance table")
    p.add_argument("--mffe", action="store_true", help="feature fit error vs T")
    p.add_argument("--shear", action="store_true", help="residence-time shear study")
    p.add_argument("--model")
    p.add_argument("--corpus")
    p.add_argument("--traj")
    p.add_argument("--annotations")
    p.add_argument("--source", choices=["external", "model"], default="external")
    p.add_argument("--T", type=float)
    p.add_argument("--Tminus", type=float)
    p.add_argument("--Tplus", type=float)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        logger.error("%s", exc)
        return 1
    except IoError as exc:
        logger.error("%s", exc)
        return 2
    except NumericError as exc:
        logger.error("%s", exc)
        return 3
    except OSError as exc:
        logger.error("%s", exc)
        return 2
    except CtclassError as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
