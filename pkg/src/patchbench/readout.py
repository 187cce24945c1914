"""Two-layer MLP readout: same/different classification, RT regression with
cross-validation and seed ensembling, Spearman scoring, and split-half
noise-ceiling normalization.

The MLP is plain numpy (float64) with analytic gradients so that every
gradient can be checked against central finite differences.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .affinity import pixel_to_patch
from .tensorio import FeatureMap, TrialSpec


class DegenerateLabelError(ValueError):
    """Training data contains fewer than two classes."""


class ConstantInputError(ValueError):
    """Correlation undefined: an input has fewer than two distinct values."""


@dataclass
class ReadoutModel:
    """Weights of a two-layer MLP (ReLU hidden, single output unit)."""

    W1: np.ndarray  # (hidden, n_in)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (1, hidden)
    b2: np.ndarray  # (1,)

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_in(self) -> int:
        return self.W1.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one MLP training run."""

    hidden: int = 256
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-4
    rng_seed: int = 0


@dataclass(frozen=True)
class CVConfig:
    """Cross-validation setup for RT prediction."""

    folds: int = 10
    seeds: int = 10
    train: TrainConfig = field(default_factory=TrainConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError(f"folds must be >= 2, got {self.folds}")
        if self.seeds < 1:
            raise ValueError(f"seeds must be >= 1, got {self.seeds}")


def build_trial_feature(fmap: FeatureMap, trial: TrialSpec, patch_size: int) -> np.ndarray:
    """Concatenate the center-patch token then the peripheral-patch token."""
    parts = []
    for px in (trial.center_px, trial.peripheral_px):
        row, col = pixel_to_patch(px, patch_size)
        if not (0 <= row < fmap.h and 0 <= col < fmap.w):
            raise ValueError(
                f"trial {trial.trial_id}: dot {px} maps to patch {(row, col)} "
                f"outside the {fmap.h}x{fmap.w} grid"
            )
        parts.append(fmap.data[row, col].astype(np.float64))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# MLP core
# ---------------------------------------------------------------------------

def init_model(n_in: int, hidden: int, rng: np.random.Generator) -> ReadoutModel:
    """He-style init for the ReLU hidden layer, small output layer."""
    W1 = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(hidden, n_in))
    W2 = rng.normal(0.0, math.sqrt(1.0 / hidden), size=(1, hidden))
    return ReadoutModel(W1=W1, b1=np.zeros(hidden), W2=W2, b2=np.zeros(1))


def _forward(model: ReadoutModel, X: np.ndarray):
    z1 = X @ model.W1.T + model.b1
    h = np.maximum(z1, 0.0)
    out = h @ model.W2.T + model.b2
    return z1, h, out[:, 0]


def predict_logits(model: ReadoutModel, X: np.ndarray) -> np.ndarray:
    return _forward(model, X)[2]


def predict_proba(model: ReadoutModel, X: np.ndarray) -> np.ndarray:
    z = predict_logits(model, X)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)),
                    np.exp(z) / (1.0 + np.exp(z)))


def classifier_loss_and_grads(model: ReadoutModel, X: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy of the sigmoid output and its gradients."""
    z1, h, logits = _forward(model, X)
    # log(1 + exp(z)) - y*z, stably
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    p = np.where(logits >= 0, 1.0 / (1.0 + np.exp(-logits)),
                 np.exp(logits) / (1.0 + np.exp(logits)))
    dout = (p - y) / len(y)
    return loss, _backward(model, X, z1, h, dout)


def regressor_loss_and_grads(model: ReadoutModel, X: np.ndarray, y: np.ndarray):
    """Mean squared error of the linear output and its gradients."""
    z1, h, out = _forward(model, X)
    err = out - y
    loss = float(np.mean(err ** 2))
    dout = 2.0 * err / len(y)
    return loss, _backward(model, X, z1, h, dout)


def classifier_loss_grads_input(model: ReadoutModel, X: np.ndarray, y: np.ndarray):
    """Like classifier_loss_and_grads, but also returns dLoss/dX (needed when
    the features themselves are trainable, e.g. behind an adapter)."""
    z1, h, logits = _forward(model, X)
    loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    p = np.where(logits >= 0, 1.0 / (1.0 + np.exp(-logits)),
                 np.exp(logits) / (1.0 + np.exp(logits)))
    dout = (p - y) / len(y)
    grads = _backward(model, X, z1, h, dout)
    dh = dout[:, None] * model.W2
    dh[z1 <= 0] = 0.0
    return loss, grads, dh @ model.W1


def _backward(model: ReadoutModel, X, z1, h, dout):
    dW2 = dout[None, :] @ h
    db2 = np.array([dout.sum()])
    dh = dout[:, None] * model.W2
    dh[z1 <= 0] = 0.0
    dW1 = dh.T @ X
    db1 = dh.sum(axis=0)
    return dW1, db1, dW2, db2


def _train(X: np.ndarray, y: np.ndarray, cfg: TrainConfig, loss_and_grads) -> ReadoutModel:
    rng = np.random.default_rng(cfg.rng_seed)
    # Standardize inputs for conditioning; the scaler is folded back into the
    # first layer afterwards so the returned model applies to raw features.
    mu = X.mean(axis=0)
    sd = np.maximum(X.std(axis=0), 1e-8)
    X = (X - mu) / sd
    model = init_model(X.shape[1], cfg.hidden, rng)
    vel = [np.zeros_like(p) for p in (model.W1, model.b1, model.W2, model.b2)]
    n = len(X)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, grads = loss_and_grads(model, X[idx], y[idx])
            params = (model.W1, model.b1, model.W2, model.b2)
            for v, p, g in zip(vel, params, grads):
                v *= cfg.momentum
                v += g + cfg.weight_decay * p
                p -= cfg.learning_rate * v
    model.b1 = model.b1 - model.W1 @ (mu / sd)
    model.W1 = model.W1 / sd
    return model


def train_classifier(features: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> ReadoutModel:
    """Train the same/different classifier. Labels are 0/1 (1 = different)."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise DegenerateLabelError(
            "need at least two examples of each class to train a classifier"
        )
    return _train(X, y, cfg, classifier_loss_and_grads)


def train_regressor(features: np.ndarray, targets: np.ndarray, cfg: TrainConfig) -> ReadoutModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return _train(X, y, cfg, regressor_loss_and_grads)


def evaluate_accuracy(model: ReadoutModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction correct at a 0.5 sigmoid threshold."""
    if len(features) == 0:
        raise ValueError("cannot evaluate on an empty set")
    pred = predict_proba(model, np.asarray(features, dtype=np.float64)) >= 0.5
    return float(np.mean(pred == (np.asarray(labels) >= 0.5)))


# ---------------------------------------------------------------------------
# RT cross-validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RTPredictions:
    """Out-of-fold RT predictions (ms) plus across-seed spread per trial."""

    predicted_ms: np.ndarray
    seed_std_ms: np.ndarray
    fold_of_trial: np.ndarray


def _stratified_folds(n: int, folds: int, conditions, rng: np.random.Generator) -> np.ndarray:
    """Fold index per trial; trials shuffled within each condition stratum."""
    fold_of = np.empty(n, dtype=int)
    if conditions is None:
        groups = {None: np.arange(n)}
    else:
        groups = defaultdict(list)
        for i, c in enumerate(conditions):
            groups[c].append(i)
        groups = {c: np.asarray(ix) for c, ix in sorted(groups.items())}
    offset = 0
    for _, idx in groups.items():
        perm = rng.permutation(len(idx))
        fold_of[idx[perm]] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return fold_of


def cv_predict_rt(
    features: np.ndarray,
    mean_rts: np.ndarray,
    cfg: CVConfig,
    conditions=None,
) -> RTPredictions:
    """K-fold out-of-fold RT prediction with a seed-ensembled MLP regressor.

    The regression target is z-scored log RT (fit on the training folds);
    predictions are mapped back to milliseconds. Every trial receives exactly
    one out-of-fold prediction.
    """
    X = np.asarray(features, dtype=np.float64)
    rts = np.asarray(mean_rts, dtype=np.float64)
    n = len(X)
    if n < cfg.folds:
        raise ValueError(f"need at least {cfg.folds} trials, got {n}")
    rng = np.random.default_rng(cfg.rng_seed)
    fold_of = _stratified_folds(n, cfg.folds, conditions, rng)
    log_rts = np.log(rts)
    preds = np.empty(n)
    stds = np.empty(n)
    for k in range(cfg.folds):
        test = fold_of == k
        train = ~test
        mu, sd = log_rts[train].mean(), log_rts[train].std()
        if sd == 0.0:
            # Degenerate target: every prediction is the constant itself.
            preds[test] = rts[train][0]
            stds[test] = 0.0
            continue
        y = (log_rts[train] - mu) / sd
        seed_preds = []
        for s in range(cfg.seeds):
            run_cfg = replace(cfg.train, rng_seed=cfg.train.rng_seed * 1000 + k * cfg.seeds + s)
            model = train_regressor(X[train], y, run_cfg)
            seed_preds.append(predict_logits(model, X[test]))
        seed_preds = np.asarray(seed_preds)
        z = seed_preds.mean(axis=0)
        preds[test] = np.exp(z * sd + mu)
        stds[test] = np.exp(seed_preds * sd + mu).std(axis=0)
    return RTPredictions(predicted_ms=preds, seed_std_ms=stds, fold_of_trial=fold_of)


# ---------------------------------------------------------------------------
# Spearman and noise ceiling
# ---------------------------------------------------------------------------

def spearman(a, b) -> float:
    """Pearson correlation of average ranks; ties get their mean rank."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("inputs must be equal-length 1-D sequences of length >= 2")
    if len(np.unique(a)) < 2 or len(np.unique(b)) < 2:
        raise ConstantInputError("correlation undefined for a constant input")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    return float(np.corrcoef(ra, rb)[0, 1])


def _half_splits(subjects: list[str], n_splits: int, rng_seed: int) -> list[tuple[list[str], list[str]]]:
    """Deterministic sequence of subject half-splits shared by ceiling and score."""
    rng = np.random.default_rng(rng_seed)
    subjects = sorted(subjects)
    half = len(subjects) // 2
    splits = []
    for _ in range(n_splits):
        perm = rng.permutation(len(subjects))
        first = [subjects[i] for i in perm[:half]]
        second = [subjects[i] for i in perm[half:]]
        splits.append((first, second))
    return splits


def _rt_by_subject(records, correct_only: bool):
    """subject -> {trial_id -> mean rt} over the kept records."""
    table: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in records:
        if correct_only and not r.correct:
            continue
        table[r.subject_id][r.trial_id].append(r.rt_ms)
    return {
        subj: {t: float(np.mean(v)) for t, v in trials.items()}
        for subj, trials in table.items()
    }


def _half_means(by_subject, halves, trial_ids):
    """Per-trial mean RT for each half; trials missing in a half are NaN."""
    out = []
    for half in halves:
        sums = np.zeros(len(trial_ids))
        counts = np.zeros(len(trial_ids))
        index = {t: i for i, t in enumerate(trial_ids)}
        for subj in half:
            for t, rt in by_subject.get(subj, {}).items():
                if t in index:
                    sums[index[t]] += rt
                    counts[index[t]] += 1
        with np.errstate(invalid="ignore"):
            out.append(np.where(counts > 0, sums / np.maximum(counts, 1), np.nan))
    return out


@dataclass(frozen=True)
class CeilingResult:
    ceiling: float
    per_split: np.ndarray
    dropped_per_split: np.ndarray


def noise_ceiling(records, n_splits: int = 20, rng_seed: int = 0,
                  correct_only: bool = True) -> CeilingResult:
    """Split-half consistency of mean RTs: mean Spearman between half-wise
    per-trial mean RTs over random equal subject splits."""
    by_subject = _rt_by_subject(records, correct_only)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        raise ValueError("noise ceiling needs at least 2 subjects")
    trial_ids = sorted({t for trials in by_subject.values() for t in trials})
    splits = _half_splits(subjects, n_splits, rng_seed)
    corrs, dropped = [], []
    for first, second in splits:
        m1, m2 = _half_means(by_subject, (first, second), trial_ids)
        keep = ~np.isnan(m1) & ~np.isnan(m2)
        dropped.append(int((~keep).sum()))
        corrs.append(spearman(m1[keep], m2[keep]))
    return CeilingResult(
        ceiling=float(np.mean(corrs)),
        per_split=np.asarray(corrs),
        dropped_per_split=np.asarray(dropped),
    )


@dataclass(frozen=True)
class NormalizedScore:
    raw: float
    ceiling: float
    normalized: float


def normalized_score(predictions: np.ndarray, trial_ids: list[str], records,
                     n_splits: int = 20, rng_seed: int = 0,
                     correct_only: bool = True) -> NormalizedScore:
    """Mean model-vs-half-mean Spearman over the same subject splits used for
    the noise ceiling, divided by that ceiling."""
    predictions = np.asarray(predictions, dtype=np.float64)
    by_subject = _rt_by_subject(records, correct_only)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        raise ValueError("need at least 2 subjects")
    splits = _half_splits(subjects, n_splits, rng_seed)
    num_corrs, ceil_corrs = [], []
    for first, second in splits:
        m1, m2 = _half_means(by_subject, (first, second), trial_ids)
        keep = ~np.isnan(m1) & ~np.isnan(m2)
        ceil_corrs.append(spearman(m1[keep], m2[keep]))
        num_corrs.append(0.5 * (spearman(predictions[keep], m1[keep])
                                + spearman(predictions[keep], m2[keep])))
    ceiling = float(np.mean(ceil_corrs))
    if ceiling <= 0:
        raise ValueError(f"noise ceiling {ceiling:.4f} <= 0; score not normalizable")
    raw = float(np.mean(num_corrs))
    return NormalizedScore(raw=raw, ceiling=ceiling, normalized=raw / ceiling)
