"""Linear max-margin classification of transition mechanisms.

Three classes (BCT, BNCT, NCT) are separated in feature space by
one-vs-rest linear classifiers trained on an L2-regularised hinge loss.
Training is deterministic full-batch subgradient descent: the trial step
at epoch t follows the 1/(lambda*t) schedule and is halved until the
objective does not increase, which makes the per-epoch objective
monotonically non-increasing by construction.  Features are
standardised column-wise to zero mean and unit variance (population
convention) before training, and the fitted scaler travels with the
model.

Evaluation follows a stratified 70/30 split, accuracy is the fraction
of correctly classified test samples, and feature relevance is measured
by mean permutation importance: the average accuracy drop over 100
random permutations of one feature column of the test set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ValidationError
from .features import SvmType, feature_vector_at

__all__ = [
    "CTType",
    "LabeledSample",
    "Scaler",
    "SvmModel",
    "MpiReport",
    "Hyper",
    "scale_fit",
    "scale_apply",
    "stratified_split",
    "train",
    "predict",
    "accuracy",
    "permutation_importance",
    "accuracy_curve",
    "model_to_json",
    "model_from_json",
]


class CTType(IntEnum):
    """Transition mechanism labels, in fixed class order."""

    BCT = 0
    BNCT = 1
    NCT = 2

    @staticmethod
    def parse(name: str) -> "CTType":
        try:
            return CTType[name.upper()]
        except KeyError:
            raise ValidationError(f"unknown transition type {name!r}") from None


@dataclass(frozen=True)
class LabeledSample:
    """One feature vector with its known mechanism and provenance."""

    features: np.ndarray
    label: CTType
    t_shifted: float
    source_id: str

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        if not np.all(np.isfinite(self.features)):
            raise ValidationError(f"non-finite features in sample {self.source_id!r}")


@dataclass(frozen=True)
class Scaler:
    """Column-wise standardisation: (x - mean) / std, population std."""

    mean: np.ndarray
    std: np.ndarray


def scale_fit(x: np.ndarray) -> Scaler:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("scaler needs at least two samples")
    mean = x.mean(axis=0)
    std = x.std(axis=0)  # divisor S
    bad = np.flatnonzero(std == 0.0)
    if bad.size:
        raise ValidationError(f"zero-variance feature column(s): {bad.tolist()}")
    return Scaler(mean, std)


def scale_apply(scaler: Scaler, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return (x - scaler.mean) / scaler.std


@dataclass(frozen=True)
class Hyper:
    """Training hyperparameters; c is the inverse regularisation strength."""

    c: float = 1.0
    epochs: int = 200
    train_frac: float = 0.7

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError("c must be positive")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if not 0 < self.train_frac < 1:
            raise ValidationError("train_frac must lie in (0, 1)")


@dataclass
class SvmModel:
    """Fitted scaler plus one-vs-rest weights; argmax decision rule."""

    scaler: Scaler
    weights: np.ndarray  # (n_classes, n_features)
    biases: np.ndarray  # (n_classes,)
    hyper: Hyper
    svm_type: SvmType
    slope_len: float
    split_seed: int
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty((0, 0)), repr=False)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]


def _objective(w, b, x, y, lam):
    margins = 1.0 - y * (x @ w + b)
    hinge = np.maximum(margins, 0.0).mean()
    return 0.5 * lam * float(w @ w) + float(hinge)


def _train_binary(x: np.ndarray, y: np.ndarray, hyper: Hyper) -> tuple[np.ndarray, float, np.ndarray]:
    """One-vs-rest component: y in {-1, +1}; returns (w, b, objective trace)."""
    n, f = x.shape
    lam = 1.0 / (hyper.c * n)
    w = np.zeros(f)
    b = 0.0
    obj = _objective(w, b, x, y, lam)
    trace = np.empty(hyper.epochs + 1)
    trace[0] = obj
    for t in range(1, hyper.epochs + 1):
        margins = y * (x @ w + b)
        viol = margins < 1.0
        gw = lam * w - (y[viol] @ x[viol]) / n
        gb = -float(y[viol].sum()) / n
        eta = 1.0 / (lam * t)
        accepted = False
        for _ in range(80):
            w2 = w - eta * gw
            b2 = b - eta * gb
            obj2 = _objective(w2, b2, x, y, lam)
            if obj2 <= obj + 1e-12:
                accepted = True
                break
            eta *= 0.5
        if accepted:
            w, b, obj = w2, b2, obj2
        trace[t] = obj
    return w, b, trace


def stratified_split(labels: np.ndarray, train_frac: float, seed: int
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic per-class shuffle-and-cut; returns (train_idx, test_idx)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        n_train = int(round(train_frac * idx.size))
        n_train = min(max(n_train, 1), idx.size - 1)
        train_idx.extend(idx[:n_train])
        test_idx.extend(idx[n_train:])
    return np.sort(np.asarray(train_idx)), np.sort(np.asarray(test_idx))


def _as_matrix(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise ValidationError("no samples")
    f = samples[0].features.size
    x = np.empty((len(samples), f))
    y = np.empty(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        if s.features.size != f:
            raise ValidationError("inconsistent feature vector lengths")
        x[i] = s.features
        y[i] = int(s.label)
    return x, y


def train(samples: list[LabeledSample], split_seed: int, hyper: Hyper = Hyper(),
          svm_type: SvmType = SvmType.ALL, slope_len: float = 8.0
          ) -> tuple[SvmModel, float]:
    """Fit on a stratified 70/30 split; returns the model and test accuracy."""
    x, y = _as_matrix(samples)
    classes = np.unique(y)
    if classes.size < 2:
        raise ValidationError("need at least two classes to train")
    counts = {int(c): int((y == c).sum()) for c in classes}
    thin = [c for c, n in counts.items() if n < 2]
    if thin:
        raise ValidationError(f"class(es) {thin} have fewer than two samples")
    tr_idx, te_idx = stratified_split(y, hyper.train_frac, split_seed)
    if np.unique(y[tr_idx]).size != classes.size:
        raise ValidationError("a class is absent from the training split")

    scaler = scale_fit(x[tr_idx])
    xs_tr = scale_apply(scaler, x[tr_idx])
    xs_te = scale_apply(scaler, x[te_idx])

    n_classes = int(classes.max()) + 1
    f = x.shape[1]
    weights = np.zeros((n_classes, f))
    biases = np.zeros(n_classes)
    traces = np.zeros((n_classes, hyper.epochs + 1))
    for c in classes:
        yc = np.where(y[tr_idx] == c, 1.0, -1.0)
        w, b, trace = _train_binary(xs_tr, yc, hyper)
        weights[int(c)] = w
        biases[int(c)] = b
        traces[int(c)] = trace

    model = SvmModel(scaler, weights, biases, hyper, SvmType(svm_type),
                     slope_len, split_seed, traces)
    scores = xs_te @ weights.T + biases
    pred = np.argmax(scores, axis=1)
    acc = float((pred == y[te_idx]).mean())
    return model, acc


def predict(model: SvmModel, vector: np.ndarray) -> CTType:
    """Class with the highest score; ties break toward the lowest index."""
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (model.n_features,):
        raise ValidationError(
            f"feature vector of length {vector.size} does not match model ({model.n_features})"
        )
    z = scale_apply(model.scaler, vector)
    scores = model.weights @ z + model.biases
    return CTType(int(np.argmax(scores)))


def accuracy(model: SvmModel, samples: list[LabeledSample]) -> float:
    x, y = _as_matrix(samples)
    scores = scale_apply(model.scaler, x) @ model.weights.T + model.biases
    return float((np.argmax(scores, axis=1) == y).mean())


@dataclass
class MpiReport:
    """Mean permutation importance per feature, with spread."""

    mpi: np.ndarray
    std: np.ndarray
    baseline_accuracy: float
    n_permutations: int


def permutation_importance(model: SvmModel, test_samples: list[LabeledSample],
                           n_perms: int = 100, seed: int = 0) -> MpiReport:
    """Accuracy drop when one feature column of the test set is shuffled.

    MPI for a feature is the mean of (baseline - permuted accuracy) over
    ``n_perms`` independent shuffles, so it lies in [-1, 1].
    """
    if not test_samples:
        raise ValidationError("permutation importance needs a non-empty test set")
    x, y = _as_matrix(test_samples)
    xs = scale_apply(model.scaler, x)
    base_scores = xs @ model.weights.T + model.biases
    base = float((np.argmax(base_scores, axis=1) == y).mean())
    rng = np.random.Generator(np.random.PCG64(seed))
    f = x.shape[1]
    mpi = np.empty(f)
    std = np.empty(f)
    for j in range(f):
        drops = np.empty(n_perms)
        for r in range(n_perms):
            perm = rng.permutation(x.shape[0])
            xp = xs.copy()
            xp[:, j] = xs[perm, j]
            acc = float((np.argmax(xp @ model.weights.T + model.biases, axis=1) == y).mean())
            drops[r] = base - acc
        mpi[j] = drops.mean()
        std[j] = drops.std()
    return MpiReport(mpi, std, base, n_perms)


def accuracy_curve(tracks, svm_type: SvmType, slope_len: float,
                   t_grid, base_seed: int = 0, hyper: Hyper = Hyper()
                   ) -> list[tuple[float, float]]:
    """Held-out accuracy at each shifted time in ``t_grid``.

    ``tracks`` is a sequence of (FeatureTrack, CTType, source_id).  A
    fresh deterministic split (base_seed + grid index) is drawn at every
    T and a new model trained on the features taken there.
    """
    out = []
    for k, t_eval in enumerate(t_grid):
        samples = [
            LabeledSample(feature_vector_at(ft, t_eval, svm_type), label, t_eval, src)
            for ft, label, src in tracks
        ]
        _, acc = train(samples, base_seed + k, hyper, svm_type, slope_len)
        out.append((float(t_eval), acc))
    return out


_FORMAT_VERSION = 1


def model_to_json(model: SvmModel) -> str:
    payload = {
        "format_version": _FORMAT_VERSION,
        "svm_type": int(model.svm_type),
        "slope_len": model.slope_len,
        "split_seed": model.split_seed,
        "hyper": {"c": model.hyper.c, "epochs": model.hyper.epochs,
                  "train_frac": model.hyper.train_frac},
        "scaler": {"mean": model.scaler.mean.tolist(), "std": model.scaler.std.tolist()},
        "weights": model.weights.tolist(),
        "biases": model.biases.tolist(),
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def model_from_json(text: str) -> SvmModel:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed model file: {exc}") from None
    if payload.get("format_version") != _FORMAT_VERSION:
        raise ValidationError(
            f"unsupported model format version {payload.get('format_version')!r}"
        )
    hyper = Hyper(**payload["hyper"])
    scaler = Scaler(np.asarray(payload["scaler"]["mean"]), np.asarray(payload["scaler"]["std"]))
    return SvmModel(
        scaler=scaler,
        weights=np.asarray(payload["weights"], dtype=np.float64),
        biases=np.asarray(payload["biases"], dtype=np.float64),
        hyper=hyper,
        svm_type=SvmType(payload["svm_type"]),
        slope_len=float(payload["slope_len"]),
        split_seed=int(payload["split_seed"]),
    )
