import copy

import numpy as np
import pytest

from ctclass.classifier import (
    CTType,
    Hyper,
    LabeledSample,
    MpiReport,
    SvmModel,
    Scaler,
    accuracy,
    model_from_json,
    model_to_json,
    permutation_importance,
    predict,
    scale_apply,
    scale_fit,
    stratified_split,
    train,
)
from ctclass.errors import ValidationError
from ctclass.features import SvmType


def blobs(rng, centers, n_each, spread=0.3):
    xs, ys = [], []
    for c, ct in zip(centers, CTType):
        xs.append(np.asarray(c) + spread * rng.standard_normal((n_each, len(c))))
        ys += [ct] * n_each
    x = np.vstack(xs)
    return [LabeledSample(x[i], ys[i], 0.0, f"s{i}") for i in range(len(ys))]


class TestScaler:
    def test_population_convention(self):
        s = scale_fit(np.array([[1.0], [2.0], [3.0]]))
        z = scale_apply(s, np.array([[1.0], [2.0], [3.0]]))
        assert z.mean() == pytest.approx(0.0, abs=1e-15)
        assert z.std() == pytest.approx(1.0, rel=1e-12)  # divisor S

    def test_refit_on_scaled_data_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((50, 3)) * [2.0, 5.0, 0.1] + [1.0, -3.0, 0.0]
        s1 = scale_fit(x)
        z = scale_apply(s1, x)
        s2 = scale_fit(z)
        assert np.allclose(s2.mean, 0.0, atol=1e-12)
        assert np.allclose(s2.std, 1.0, atol=1e-12)

    def test_zero_variance_column_named(self):
        x = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        with pytest.raises(ValidationError, match=r"\[1\]"):
            scale_fit(x)


class TestTrain:
    def test_separable_blobs_perfect(self, rng):
        samples = blobs(rng, [(0, 0), (5, 0), (0, 5)], 60)
        model, acc = train(samples, split_seed=3)
        assert acc == 1.0
        assert accuracy(model, samples) == 1.0

    def test_shuffled_labels_near_chance(self):
        rng = np.random.default_rng(17)
        base = blobs(rng, [(0, 0), (5, 0), (0, 5)], 60)
        accs = []
        for seed in range(20):
            rs = np.random.default_rng(seed)
            labels = rs.permutation([int(s.label) for s in base])
            shuffled = [LabeledSample(s.features, CTType(int(l)), 0.0, s.source_id)
                        for s, l in zip(base, labels)]
            _, a = train(shuffled, split_seed=seed)
            accs.append(a)
        assert abs(np.mean(accs) - 1.0 / 3.0) < 0.1

    def test_objective_monotone_per_epoch(self, rng):
        samples = blobs(rng, [(0, 0), (2, 0), (0, 2)], 40, spread=0.8)
        model, _ = train(samples, split_seed=1)
        for c in range(model.objective_trace.shape[0]):
            diffs = np.diff(model.objective_trace[c])
            assert np.all(diffs <= 1e-9)

    def test_deterministic(self, rng):
        samples = blobs(rng, [(0, 0), (3, 0), (0, 3)], 30)
        m1, a1 = train(samples, split_seed=9)
        m2, a2 = train(samples, split_seed=9)
        assert np.array_equal(m1.weights, m2.weights)
        assert np.array_equal(m1.biases, m2.biases)
        assert a1 == a2

    def test_column_scaling_leaves_predictions_unchanged(self, rng):
        samples = blobs(rng, [(0, 0), (3, 0), (0, 3)], 30)
        scaled = [LabeledSample(s.features * np.array([50.0, 1.0]), s.label, 0.0,
                                s.source_id) for s in samples]
        m1, _ = train(samples, split_seed=2)
        m2, _ = train(scaled, split_seed=2)
        for s, sc in zip(samples, scaled):
            assert predict(m1, s.features) == predict(m2, sc.features)

    def test_class_absent_raises(self, rng):
        samples = blobs(rng, [(0, 0), (3, 0), (0, 3)], 30)
        thin = [s for s in samples if s.label != CTType.NCT][:40]
        thin.append(LabeledSample(np.array([9.0, 9.0]), CTType.NCT, 0.0, "lone"))
        with pytest.raises(ValidationError):
            train(thin, split_seed=0)

    def test_split_stratified_within_one(self):
        labels = np.array([0] * 10 + [1] * 13 + [2] * 7)
        tr, te = stratified_split(labels, 0.7, seed=4)
        assert set(tr).isdisjoint(te)
        assert len(tr) + len(te) == labels.size
        for cls, n in ((0, 10), (1, 13), (2, 7)):
            n_tr = int(np.sum(labels[tr] == cls))
            assert abs(n_tr - 0.7 * n) <= 1.0


class TestPredict:
    def _toy_model(self, weights, biases):
        scaler = Scaler(np.zeros(weights.shape[1]), np.ones(weights.shape[1]))
        return SvmModel(scaler, weights, biases, Hyper(), SvmType.ALL, 8.0, 0)

    def test_clear_winner(self):
        m = self._toy_model(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]),
                            np.zeros(3))
        assert predict(m, np.array([5.0, 0.1])) is CTType.BCT
        assert predict(m, np.array([0.1, 5.0])) is CTType.BNCT

    def test_degenerate_scores_pick_lowest_index(self):
        m = self._toy_model(np.zeros((3, 2)), np.zeros(3))
        assert predict(m, np.array([1.0, 2.0])) is CTType.BCT

    def test_length_mismatch(self):
        m = self._toy_model(np.zeros((3, 2)), np.zeros(3))
        with pytest.raises(ValidationError):
            predict(m, np.array([1.0, 2.0, 3.0]))

    def test_external_prescaling_equivalent(self, rng):
        samples = blobs(rng, [(0, 0), (3, 0), (0, 3)], 30)
        model, _ = train(samples, split_seed=2)
        ident = SvmModel(Scaler(np.zeros(2), np.ones(2)), model.weights,
                         model.biases, model.hyper, model.svm_type,
                         model.slope_len, model.split_seed)
        for s in samples[:20]:
            pre = scale_apply(model.scaler, s.features)
            assert predict(model, s.features) == predict(ident, pre)


class TestPermutationImportance:
    def test_zero_weight_feature_near_zero(self, rng):
        samples = blobs(rng, [(0, 0), (5, 0), (0, 5)], 60)
        model, _ = train(samples, split_seed=3)
        broken = copy.deepcopy(model)
        broken.weights[:, 1] = 0.0
        rep = permutation_importance(broken, samples, n_perms=100, seed=1)
        assert abs(rep.mpi[1]) <= 2 * rep.std[1] + 1e-12

    def test_single_decisive_feature(self, rng):
        # one informative feature, three balanced classes: permuting it
        # drops accuracy to chance, so MPI ~ baseline - 1/3 ~ 2/3 (the
        # middle class is only nearly separable one-vs-rest in 1-d)
        n = 90
        x = np.concatenate([rng.normal(0, 0.2, n), rng.normal(5, 0.2, n),
                            rng.normal(10, 0.2, n)])[:, None]
        labels = [CTType.BCT] * n + [CTType.BNCT] * n + [CTType.NCT] * n
        samples = [LabeledSample(x[i], labels[i], 0.0, str(i)) for i in range(3 * n)]
        model, acc = train(samples, split_seed=0)
        assert acc >= 0.95
        rep = permutation_importance(model, samples, n_perms=100, seed=2)
        assert rep.mpi[0] == pytest.approx(rep.baseline_accuracy - 1.0 / 3.0, abs=0.05)
        assert rep.mpi[0] == pytest.approx(2.0 / 3.0, abs=0.12)

    def test_duplicated_feature_importance_splits(self, rng):
        # rerun-training oracle: duplicating the decisive column lets the
        # weights share the work; the two columns' importances stay
        # non-negative (within noise) and sum to something positive
        n = 60
        base = np.concatenate([rng.normal(0, 0.2, n), rng.normal(5, 0.2, n),
                               rng.normal(10, 0.2, n)])
        noise = rng.standard_normal(3 * n)
        labels = [CTType.BCT] * n + [CTType.BNCT] * n + [CTType.NCT] * n
        x_dup = np.column_stack([base, base, noise])
        samples = [LabeledSample(x_dup[i], labels[i], 0.0, str(i))
                   for i in range(3 * n)]
        model, _ = train(samples, split_seed=1)
        rep = permutation_importance(model, samples, n_perms=100, seed=3)
        assert rep.mpi[0] + rep.mpi[1] > 0
        assert rep.mpi[0] >= -2 * rep.std[0]
        assert rep.mpi[1] >= -2 * rep.std[1]

    def test_bounds_and_determinism(self, rng):
        samples = blobs(rng, [(0, 0), (5, 0), (0, 5)], 40)
        model, _ = train(samples, split_seed=3)
        r1 = permutation_importance(model, samples, n_perms=30, seed=7)
        r2 = permutation_importance(model, samples, n_perms=30, seed=7)
        assert np.array_equal(r1.mpi, r2.mpi)
        assert np.all(r1.mpi >= -1.0) and np.all(r1.mpi <= 1.0)

    def test_empty_test_set_rejected(self, rng):
        samples = blobs(rng, [(0, 0), (5, 0), (0, 5)], 10)
        model, _ = train(samples, split_seed=0)
        with pytest.raises(ValidationError):
            permutation_importance(model, [], n_perms=5, seed=0)


class TestSerialization:
    def test_round_trip_exact(self, rng):
        samples = blobs(rng, [(0, 0), (3, 0), (0, 3)], 30)
        model, _ = train(samples, split_seed=11)
        clone = model_from_json(model_to_json(model))
        assert np.array_equal(clone.weights, model.weights)
        assert np.array_equal(clone.biases, model.biases)
        assert np.array_equal(clone.scaler.mean, model.scaler.mean)
        assert np.array_equal(clone.scaler.std, model.scaler.std)
        assert clone.svm_type == model.svm_type
        assert clone.hyper == model.hyper
        # predictions carry over bit-exactly
        for s in samples[:10]:
            assert predict(clone, s.features) == predict(model, s.features)

    def test_malformed_and_versioned(self):
        with pytest.raises(ValidationError, match="malformed"):
            model_from_json("{not json")
        with pytest.raises(ValidationError, match="version"):
            model_from_json('{"format_version": 99}')
