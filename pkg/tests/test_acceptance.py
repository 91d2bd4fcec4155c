"""Acceptance gate: one test per criterion, each printing a verdict line.

Run with `pytest tests/test_acceptance.py -v -s`.  The long-running
criteria share the session-scoped 300-transition corpus fixture.
"""

import json
import math
import time
import warnings

import numpy as np
import pytest

from ctclass.classifier import (
    CTType,
    LabeledSample,
    accuracy_curve,
    permutation_importance,
    train,
)
from ctclass.detector import DetectorParams, detect
from ctclass.features import FEATURE_NAMES, SvmType, feature_vector_at
from ctclass.model import (
    ModelParams,
    ParameterPath,
    SimConfig,
    Trajectory,
    limit_cycle_radii,
    simulate,
    simulate_x,
)
from ctclass.pipeline import (
    SelectionCriteria,
    assemble_recording,
    classify_filtered,
    corpus_tracks,
    filter_cts,
    generate_corpus,
    ramp_onset_times,
    residence_shear_study,
)

from conftest import CORPUS_BUILD_SECONDS, CORPUS_SEED
from oracles import ks_statistic


def _verdict(num, title, start):
    print(f"\nACCEPTANCE {num} ({title}): PASS [{time.time() - start:.1f}s]")


def test_criterion_1_analytic_radii():
    start = time.time()
    rng = np.random.default_rng(101)
    n_checked = 0
    while n_checked < 10_000:
        s = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 3.0)
        if s > 0:
            mu = rng.uniform(-s * s / 4.0, 3.0)
        else:
            mu = rng.uniform(1e-6, 3.0)
        radii = limit_cycle_radii(mu, s)
        assert radii is not None
        for r in radii:
            if r is None:
                continue
            resid = mu + s * r * r - r**4
            scale = max(abs(mu), abs(s) * r * r, r**4, 1e-30)
            assert abs(resid) <= 1e-12 * scale
        n_checked += 1
    assert time.time() - start < 1.0
    _verdict(1, "analytic limit-cycle radii", start)


def test_criterion_2_noise_free_attractors():
    start = time.time()
    rng = np.random.default_rng(202)
    # radial dynamics are independent of rotation and shear, so the
    # draws run without them; that keeps the fixed-step scheme's
    # attractor radius exactly on the analytic circle
    gamma = 2.0
    cfg_proto = dict(dt=0.001, t_end=100.0, seed=0)

    def converges_to(r_target, x0):
        cfg = SimConfig(x0=x0, y0=0.0, **cfg_proto)
        p = ModelParams(s=s, sigma=0.0, nu=0.0, omega=0.0, gamma=gamma)
        tr = simulate(p, ParameterPath.constant(mu, 200.0), cfg)
        r_end = math.hypot(tr.x[-1], tr.y[-1])
        return abs(r_end - r_target) < 1e-6

    n_bistable = 0
    while n_bistable < 10:
        s = rng.uniform(1.0, 2.0)
        mu = -rng.uniform(0.45, 0.85) * s * s / 4.0
        r_plus, r_minus = limit_cycle_radii(mu, s)
        origin_rate = gamma * abs(mu)
        outer_rate = 2 * gamma * r_plus**2 * math.sqrt(s * s + 4 * mu)
        if origin_rate < 0.25 or outer_rate < 0.25:
            continue
        for _ in range(10):
            assert converges_to(0.0, rng.uniform(0.1, 0.6) * r_minus)
        for _ in range(10):
            assert converges_to(r_plus, rng.uniform(1.3 * r_minus, 1.8 * r_plus))
        n_bistable += 1

    n_mono = 0
    while n_mono < 10:
        if n_mono % 2 == 0:  # low-amplitude state only
            s = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
            mu = -rng.uniform(0.2, 1.0) if s < 0 else -rng.uniform(1.1, 2.0) * s * s / 4.0
            if gamma * abs(mu) < 0.25:
                continue
            for _ in range(20):
                assert converges_to(0.0, rng.uniform(0.05, 1.2))
        else:  # high-amplitude state only
            s = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0)
            mu = rng.uniform(0.3, 1.5)
            r_plus = limit_cycle_radii(mu, s)[0]
            if 2 * gamma * r_plus**2 * math.sqrt(s * s + 4 * mu) < 0.25:
                continue
            for _ in range(20):
                assert converges_to(r_plus, rng.uniform(0.05, 1.8 * r_plus))
        n_mono += 1

    assert time.time() - start < 30.0
    _verdict(2, "noise-free attractor selection", start)


def test_criterion_3_detector_oracle():
    start = time.time()
    dt = 0.001
    det = DetectorParams()

    # closed-form burst (see test_detector for the derivation)
    t = np.arange(0.0, 32.0 + dt / 2, dt)
    x = np.where((t >= 10) & (t < 25), 0.9 * np.sin(40 * t), 0.0)
    log = detect(Trajectory(0.0, dt, x), det)
    assert log.onsets.size == 1 and log.offsets.size == 1
    assert abs(log.onsets[0] - 10.0) <= dt
    assert abs(log.offsets[0] - 25.0) <= dt

    # sub-minimum pulse: exactly one almost-onset and nothing else
    xp = np.where((t >= 8.0) & (t < 9.5), 0.9, 0.0)
    logp = detect(Trajectory(0.0, dt, xp), det)
    assert logp.pairs.shape[0] == 0
    assert logp.almost_onsets.tolist() == [pytest.approx(8.0)]
    assert logp.almost_offsets.size == 0 and logp.artefacts.shape[0] == 0

    # artefact jump: exactly one artefact interval and nothing else
    det_x = DetectorParams(max_jump=0.2)
    xa = np.where((t >= 8.0) & (t < 10.5), 0.9, 0.0)
    loga = detect(Trajectory(0.0, dt, xa), det_x)
    assert loga.pairs.shape[0] == 0 and loga.almost_onsets.size == 0
    assert loga.artefacts.shape[0] == 1
    assert loga.artefacts[0][0] == pytest.approx(8.0)
    assert loga.artefacts[0][1] == pytest.approx(10.5)
    _verdict(3, "detector closed-form oracle", start)


def test_criterion_4_transition_harvest_rate():
    start = time.time()
    p = ModelParams(s=1.0, sigma=1.0, nu=0.18, omega=1.3, gamma=10.0)
    cfg = SimConfig(dt=0.001, t_end=200_000.0, seed=CORPUS_SEED)
    x, _ = simulate_x(p, ParameterPath.constant(-0.22, 1.0e9), cfg)
    tr = Trajectory(0.0, cfg.dt, x)
    log = detect(tr, DetectorParams())
    n_pairs = int(log.offsets.size)
    del x, tr
    assert 100 <= n_pairs <= 300, f"got {n_pairs} transition pairs"
    assert time.time() - start < 600.0
    print(f"\n  criterion 4 detail: {n_pairs} pairs in 2e5 time units")
    _verdict(4, "noise-induced transition rate", start)


def test_criterion_5_onset_time_separation():
    start = time.time()
    bct = ramp_onset_times("bct", 500, CORPUS_SEED + 1)
    bnct = ramp_onset_times("bnct", 500, CORPUS_SEED + 1)
    assert bct.size >= 490 and bnct.size >= 490  # nearly every run transitions
    assert bct.min() >= 35.0 and bnct.min() >= 35.0
    assert 37.0 <= bnct.mean() <= 43.0
    assert bct.mean() > 45.0
    assert bnct.max() < bct.min()  # disjoint supports
    assert time.time() - start < 900.0
    print(f"\n  criterion 5 detail: BCT mean {bct.mean():.2f} "
          f"[{bct.min():.2f},{bct.max():.2f}]  BNCT mean {bnct.mean():.2f} "
          f"[{bnct.min():.2f},{bnct.max():.2f}]")
    _verdict(5, "onset-time separation of drift regimes", start)


def test_criterion_6_shear_residence_study():
    start = time.time()
    out = residence_shear_study(sigmas=(0.0, 1.0, 2.0), n_cts=700,
                                base_seed=CORPUS_SEED + 2)
    s0, ns0 = out[0.0]
    s1, ns1 = out[1.0]
    s2, ns2 = out[2.0]
    assert s2.max() >= 3.0 * s0.max(), (s0.max(), s2.max())
    for a, b in ((ns0, ns1), (ns0, ns2), (ns1, ns2)):
        assert ks_statistic(a, b) < 0.1
    print(f"\n  criterion 6 detail: max high-state residence "
          f"{s0.max():.0f}s (shear 0) vs {s2.max():.0f}s (shear 2); "
          f"low-state KS {ks_statistic(ns0, ns2):.3f}")
    _verdict(6, "shear residence-time study", start)


@pytest.fixture(scope="session")
def trained_t2(corpus100):
    tracks = corpus_tracks(corpus100, 8.0)
    samples = [LabeledSample(feature_vector_at(ft, 2.0, SvmType.ALL), lb, 2.0, src)
               for ft, lb, src in tracks]
    model, acc = train(samples, split_seed=7)
    return model, acc, samples, tracks


def test_criterion_7_accuracy_structure(corpus100, trained_t2):
    start = time.time()
    model, acc_t2, _, _ = trained_t2
    assert acc_t2 >= 0.95, f"type-3 accuracy at T=2 is {acc_t2}"

    # accuracy holds across the post-transition window
    tracks8 = corpus_tracks(corpus100, 8.0)
    late = accuracy_curve(tracks8, SvmType.ALL, 8.0, [2.0, 4.0, 6.0, 8.0, 10.0],
                          base_seed=7)
    assert all(a >= 0.95 for _, a in late), late

    # type-3 never trails type-2 by more than 0.02 on a shared grid
    for slope_len in (4.0, 8.0, 12.0):
        tr_sl = corpus_tracks(corpus100, slope_len)
        t_lo = -30.0 + 2.0 + slope_len  # first T where all slopes exist
        grid = [t for t in (-12.0, -5.0, -2.0, 0.0, 2.0, 5.0, 10.0) if t >= t_lo]
        curve2 = dict(accuracy_curve(tr_sl, SvmType.SLOPES, slope_len, grid, base_seed=7))
        curve3 = dict(accuracy_curve(tr_sl, SvmType.ALL, slope_len, grid, base_seed=7))
        for t_eval in grid:
            assert curve3[t_eval] >= curve2[t_eval] - 0.02, (slope_len, t_eval)

    # raw properties alone classify poorly before the transition
    t1_curve = dict(accuracy_curve(tracks8, SvmType.VALUES, 8.0, [-5.0], base_seed=7))
    assert t1_curve[-5.0] < 0.8, t1_curve
    # budget covers corpus generation plus every sweep above
    assert time.time() - start + CORPUS_BUILD_SECONDS["value"] < 1200.0
    print(f"\n  criterion 7 detail: acc(T=2)={acc_t2:.3f}, "
          f"type-1 acc(T=-5)={t1_curve[-5.0]:.3f}, "
          f"corpus build {CORPUS_BUILD_SECONDS['value']:.0f}s")
    _verdict(7, "classifier accuracy structure", start)


def test_criterion_8_permutation_importance(trained_t2):
    start = time.time()
    model, _, samples, _ = trained_t2

    # a feature with its weights zeroed contributes nothing
    import copy

    broken = copy.deepcopy(model)
    broken.weights[:, 2] = 0.0
    rep0 = permutation_importance(broken, samples, n_perms=100, seed=11)
    assert abs(rep0.mpi[2]) <= 2 * rep0.std[2] + 1e-12

    rep = permutation_importance(model, samples, n_perms=100, seed=11)
    order = np.argsort(rep.mpi)[::-1]
    idx_lgvac = FEATURE_NAMES.index("log10gv_ac")
    top = int(order[0])
    if top != idx_lgvac:
        runner = rep.mpi[top]
        if rep.mpi[idx_lgvac] >= runner - rep.std[top]:
            warnings.warn(
                f"log10gv_ac MPI {rep.mpi[idx_lgvac]:.3f} within one std of the "
                f"top feature {FEATURE_NAMES[top]} ({runner:.3f}); soft pass"
            )
        else:
            raise AssertionError(
                f"log10gv_ac is not the most important feature at T=2: "
                f"{dict(zip(FEATURE_NAMES, rep.mpi.round(3)))}"
            )
    print("\n  criterion 8 detail: MPI "
          + ", ".join(f"{n}={v:.3f}" for n, v in zip(FEATURE_NAMES, rep.mpi)))
    _verdict(8, "permutation importance sanity", start)


def test_criterion_9_end_to_end_self_classification(trained_t2):
    start = time.time()
    model, _, _, _ = trained_t2

    harvest = SelectionCriteria(-12.0, 4.0)
    fresh = generate_corpus(20, CORPUS_SEED + 3, harvest, keep_segments=True)
    rec, labels, t1s = assemble_recording(fresh, harvest)

    crit = SelectionCriteria(-8.0, 2.0)
    log = detect(rec.trajectory, DetectorParams())
    filt = filter_cts(log, rec.annotations, crit, rec.trajectory.t_end)
    rep = classify_filtered(filt, rec, model, 2.0, crit)

    # match predictions back to the planted transitions by onset time
    t1_to_label = {round(t, 6): lb for t, lb in zip(t1s, labels)}
    per_class = {ct: [0, 0] for ct in CTType}  # correct, total
    for c in rep.classified:
        truth = t1_to_label.get(round(c.t1, 6))
        assert truth is not None, f"unexpected onset at {c.t1}"
        per_class[truth][1] += 1
        if c.predicted == truth:
            per_class[truth][0] += 1
    recalls = {}
    for ct, (good, tot) in per_class.items():
        assert tot >= 18, f"{ct.name}: only {tot}/20 planted transitions classified"
        recalls[ct.name] = good / tot
        assert good / tot >= 0.9, f"{ct.name} recall {good}/{tot}"
    print(f"\n  criterion 9 detail: per-class recall {recalls}")
    _verdict(9, "end-to-end self-classification", start)


def test_criterion_10_manifest_determinism(tmp_path):
    start = time.time()
    from ctclass.cli import main

    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({"sim": {"t_end": 60.0, "seed": 4242}}))

    def run(out):
        out.mkdir(exist_ok=True)
        assert main(["simulate", "--regime", "bnct", "--out", str(out / "sim"),
                     "--config", str(cfg)]) == 0
        assert main(["detect", "--traj", str(out / "sim" / "trajectory.csv"),
                     "--out", str(out / "det"),
                     "--config", str(out / "sim" / "trajectory.csv.manifest.json")]) == 0

    run(tmp_path / "a")
    # second run replays the first run's manifest
    manifest = tmp_path / "a" / "sim" / "trajectory.csv.manifest.json"
    out_b = tmp_path / "b"
    out_b.mkdir()
    assert main(["simulate", "--out", str(out_b / "sim"), "--config", str(manifest)]) == 0
    assert main(["detect", "--traj", str(out_b / "sim" / "trajectory.csv"),
                 "--out", str(out_b / "det"), "--config", str(manifest)]) == 0

    for rel in ("sim/trajectory.csv", "det/events.csv"):
        a = (tmp_path / "a" / rel).read_bytes()
        b = (tmp_path / "b" / rel).read_bytes()
        assert a == b, f"{rel} differs between runs"
    _verdict(10, "manifest-level determinism", start)
