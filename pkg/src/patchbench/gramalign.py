"""Gram-matrix alignment at desk scale: the Gram distillation loss, its exact
gradient through the cosine normalization, and training of a per-token linear
adapter on frozen student features to match a teacher's Gram structure while
preserving grouping performance.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import readout, roc
from .affinity import affinity_from_patch, pixel_to_patch
from .readout import CVConfig, TrainConfig
from .tensorio import FeatureMap, FormatError, PatchMask, TrialSpec

PBAD_MAGIC = b"PBAD"
PBAD_VERSION = 1


@dataclass
class Adapter:
    """Per-token linear map from student feature space to adapted space."""

    W: np.ndarray  # (d_out, d_in)
    b: np.ndarray | None = None  # (d_out,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[0] < 1:
            raise ValueError(f"W must be (d_out >= 1, d_in), got {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("adapter weights must be finite")
        if self.b is not None:
            self.b = np.asarray(self.b, dtype=np.float64)

    def apply_tokens(self, tokens: np.ndarray) -> np.ndarray:
        out = tokens @ self.W.T
        if self.b is not None:
            out = out + self.b
        return out

    def apply(self, fmap: FeatureMap) -> FeatureMap:
        adapted = self.apply_tokens(fmap.tokens().astype(np.float64))
        return FeatureMap(
            image_id=fmap.image_id,
            data=adapted.reshape(fmap.h, fmap.w, -1).astype(np.float32),
        )


@dataclass(frozen=True)
class AlignConfig:
    """Weights and optimizer settings for adapter training."""

    lambda_gram: float = 1.0
    task_weight: float = 1.0
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    hidden: int = 64
    rng_seed: int = 0

    def __post_init__(self):
        if self.lambda_gram < 0:
            raise ValueError("lambda_gram must be >= 0")


def _cosine_gram(tokens: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gram of the row-normalized token matrix, plus the normalized rows."""
    norms = np.linalg.norm(tokens, axis=1)
    normed = tokens / np.where(norms == 0.0, 1.0, norms)[:, None]
    return normed @ normed.T, normed


def gram_loss_tokens(student: np.ndarray, teacher: np.ndarray) -> float:
    n = len(student)
    gs, _ = _cosine_gram(student)
    gt, _ = _cosine_gram(teacher)
    return float(np.sum((gs - gt) ** 2) / (n * n))


def gram_loss(student: FeatureMap, teacher: FeatureMap) -> float:
    """Mean squared difference of the two cosine Gram matrices."""
    if (student.h, student.w) != (teacher.h, teacher.w):
        raise ValueError(
            f"grid mismatch: student {(student.h, student.w)} "
            f"vs teacher {(teacher.h, teacher.w)}"
        )
    return gram_loss_tokens(student.tokens().astype(np.float64),
                            teacher.tokens().astype(np.float64))


def gram_loss_grad_tokens(student: np.ndarray, teacher: np.ndarray):
    """Analytic gradient of gram_loss wrt the raw student tokens.

    Chain: dL/dN = (4/n^2) (G_s - G_t) N, then per token the cosine
    normalization Jacobian (I - n n^T) / |x|. Zero-norm tokens get zero
    gradient and are flagged.
    """
    n = len(student)
    gs, normed = _cosine_gram(student)
    gt, _ = _cosine_gram(teacher)
    dN = (4.0 / (n * n)) * (gs - gt) @ normed
    norms = np.linalg.norm(student, axis=1)
    zero = norms == 0.0
    # (I - n n^T) g / |x| per token, vectorized.
    radial = np.sum(dN * normed, axis=1, keepdims=True)
    grad = (dN - radial * normed) / np.where(zero, 1.0, norms)[:, None]
    grad[zero] = 0.0
    return grad, zero


def gram_loss_grad(student: FeatureMap, teacher: FeatureMap):
    """Gradient tensor (h, w, d) of gram_loss wrt raw student tokens, plus a
    boolean (h, w) flag grid of zero-norm tokens."""
    if (student.h, student.w) != (teacher.h, teacher.w):
        raise ValueError("grid mismatch")
    grad, zero = gram_loss_grad_tokens(student.tokens().astype(np.float64),
                                       teacher.tokens().astype(np.float64))
    return grad.reshape(student.h, student.w, student.d), zero.reshape(student.h, student.w)


# ---------------------------------------------------------------------------
# Adapter training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialIndex:
    """One grouping trial expressed in patch-grid indices: which image, which
    center patch, which peripheral patch."""

    image_idx: int
    center: tuple[int, int]
    peripheral: tuple[int, int]


@dataclass
class TrainHistory:
    total: list[float] = field(default_factory=list)
    task: list[float] = field(default_factory=list)
    gram: list[float] = field(default_factory=list)


def _trial_features(adapted: list[np.ndarray], trials: list[TrialIndex], w: int) -> np.ndarray:
    feats = []
    for t in trials:
        tok = adapted[t.image_idx]
        feats.append(np.concatenate([
            tok[t.center[0] * w + t.center[1]],
            tok[t.peripheral[0] * w + t.peripheral[1]],
        ]))
    return np.asarray(feats)


def train_adapter(student_maps: list[FeatureMap], teacher_maps: list[FeatureMap],
                  trials: list[TrialIndex], labels: np.ndarray,
                  cfg: AlignConfig) -> tuple[Adapter, TrainHistory]:
    """Jointly train a linear adapter and a small grouping readout to minimize
    task_weight * BCE + lambda_gram * mean gram_loss(adapted, teacher).

    Full-batch gradient descent with momentum; deterministic given rng_seed.
    """
    if not student_maps or len(student_maps) != len(teacher_maps):
        raise ValueError("need matched, nonempty student/teacher map lists")
    for s, t in zip(student_maps, teacher_maps):
        if (s.h, s.w) != (t.h, t.w):
            raise ValueError(f"grid mismatch for image {s.image_id}")
    d_in = student_maps[0].d
    d_out = teacher_maps[0].d
    w = student_maps[0].w
    student_tok = [m.tokens().astype(np.float64) for m in student_maps]
    teacher_tok = [m.tokens().astype(np.float64) for m in teacher_maps]

    # Whiten the (frozen) student tokens so optimization is well conditioned
    # even for badly scaled inputs; the whitener is folded back into the
    # returned weights, so the adapter applies to raw student features.
    all_tok = np.concatenate(student_tok)
    cov = all_tok.T @ all_tok / len(all_tok)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.maximum(evals, 1e-10 * evals.max())
    whitener = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
    student_tok = [x @ whitener for x in student_tok]
    labels = np.asarray(labels, dtype=np.float64)

    rng = np.random.default_rng(cfg.rng_seed)
    adapter = Adapter(
        W=np.eye(d_out, d_in) + 0.01 * rng.normal(size=(d_out, d_in)),
        b=np.zeros(d_out),
    )
    head = readout.init_model(2 * d_out, cfg.hidden, rng)

    params = [adapter.W, adapter.b, head.W1, head.b1, head.W2, head.b2]
    vel = [np.zeros_like(p) for p in params]
    history = TrainHistory()
    n_img = len(student_tok)
    for _ in range(cfg.epochs):
        adapted = [adapter.apply_tokens(x) for x in student_tok]
        dY = [np.zeros_like(y) for y in adapted]

        gram_total = 0.0
        if cfg.lambda_gram > 0:
            for i, (y_tok, t_tok) in enumerate(zip(adapted, teacher_tok)):
                gram_total += gram_loss_tokens(y_tok, t_tok)
                g, _ = gram_loss_grad_tokens(y_tok, t_tok)
                dY[i] += (cfg.lambda_gram / n_img) * g
            gram_total /= n_img

        X = _trial_features(adapted, trials, w)
        task_loss, head_grads, dX = readout.classifier_loss_grads_input(head, X, labels)
        for t, dx in zip(trials, dX):
            tok = dY[t.image_idx]
            tok[t.center[0] * w + t.center[1]] += cfg.task_weight * dx[:d_out]
            tok[t.peripheral[0] * w + t.peripheral[1]] += cfg.task_weight * dx[d_out:]

        dW = sum(dy.T @ x for dy, x in zip(dY, student_tok))
        db = sum(dy.sum(axis=0) for dy in dY)
        grads = [dW, db] + [cfg.task_weight * g for g in head_grads]
        for v, p, g in zip(vel, params, grads):
            v *= cfg.momentum
            v += g
            p -= cfg.learning_rate * v

        total = cfg.task_weight * task_loss + cfg.lambda_gram * gram_total
        history.total.append(float(total))
        history.task.append(float(task_loss))
        history.gram.append(float(gram_total))
    adapter.W = adapter.W @ whitener
    return adapter, history


# ---------------------------------------------------------------------------
# Before/after comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricDelta:
    base: float
    aligned: float

    @property
    def delta(self) -> float:
        return self.aligned - self.base


@dataclass(frozen=True)
class AlignmentReport:
    grouping_accuracy: MetricDelta
    object_auc: MetricDelta
    behavioral_score: MetricDelta


def _grouping_accuracy(maps, trials, patch_size, train_cfg, eval_mask):
    X = np.asarray([
        readout.build_trial_feature(maps[t.image_id], t, patch_size) for t in trials
    ])
    y = np.asarray([1.0 if t.label == "different" else 0.0 for t in trials])
    model = readout.train_classifier(X[~eval_mask], y[~eval_mask], train_cfg)
    return readout.evaluate_accuracy(model, X[eval_mask], y[eval_mask])


def _object_auc(maps, trials, masks, patch_size, grid=None):
    grid = grid or roc.default_grid()
    sweeps = []
    for t in trials:
        aff = affinity_from_patch(maps[t.image_id],
                                  pixel_to_patch(t.center_px, patch_size))
        sweeps.append(roc.sweep(aff, masks[t.image_id], grid))
    return roc.average_curves(sweeps).auc


def _behavioral(maps, trials, records, patch_size, cv_cfg):
    X = np.asarray([
        readout.build_trial_feature(maps[t.image_id], t, patch_size) for t in trials
    ])
    trial_ids = [t.trial_id for t in trials]
    by_trial = {}
    for r in records:
        if r.correct:
            by_trial.setdefault(r.trial_id, []).append(r.rt_ms)
    mean_rts = np.asarray([float(np.mean(by_trial[t])) for t in trial_ids])
    conditions = [t.condition for t in trials]
    preds = readout.cv_predict_rt(X, mean_rts, cv_cfg, conditions=conditions)
    score = readout.normalized_score(preds.predicted_ms, trial_ids, records,
                                     rng_seed=cv_cfg.rng_seed)
    return score.normalized


def before_after_report(base_maps: dict[str, FeatureMap],
                        aligned_maps: dict[str, FeatureMap],
                        trials: list[TrialSpec],
                        masks: dict[str, PatchMask],
                        records,
                        patch_size: int,
                        train_cfg: TrainConfig | None = None,
                        cv_cfg: CVConfig | None = None,
                        eval_fraction: float = 0.3) -> AlignmentReport:
    """Grouping accuracy, object-centric AUC, and normalized behavioral score
    for base vs aligned features over the same trials."""
    if set(base_maps) != set(aligned_maps):
        raise ValueError("base and aligned feature sets must cover the same images")
    missing = {t.image_id for t in trials} - set(base_maps)
    if missing:
        raise ValueError(f"trials reference images without features: {sorted(missing)[:3]}")
    train_cfg = train_cfg or TrainConfig()
    cv_cfg = cv_cfg or CVConfig()

    # Deterministic held-out split for the accuracy metric, shared by both sides.
    rng = np.random.default_rng(train_cfg.rng_seed)
    eval_mask = np.zeros(len(trials), dtype=bool)
    n_eval = max(1, int(round(eval_fraction * len(trials))))
    eval_mask[rng.permutation(len(trials))[:n_eval]] = True

    results = {}
    for name, maps in (("base", base_maps), ("aligned", aligned_maps)):
        results[name] = (
            _grouping_accuracy(maps, trials, patch_size, train_cfg, eval_mask),
            _object_auc(maps, trials, masks, patch_size),
            _behavioral(maps, trials, records, patch_size, cv_cfg),
        )
    return AlignmentReport(
        grouping_accuracy=MetricDelta(results["base"][0], results["aligned"][0]),
        object_auc=MetricDelta(results["base"][1], results["aligned"][1]),
        behavioral_score=MetricDelta(results["base"][2], results["aligned"][2]),
    )


# ---------------------------------------------------------------------------
# Adapter persistence (.pbad)
# ---------------------------------------------------------------------------

def write_adapter(adapter: Adapter, sink) -> int:
    d_out, d_in = adapter.W.shape
    has_bias = adapter.b is not None
    head = PBAD_MAGIC + struct.pack("<IIIB", PBAD_VERSION, d_out, d_in, int(has_bias))
    sink.write(head)
    body = np.ascontiguousarray(adapter.W, dtype="<f8").tobytes()
    sink.write(body)
    n = len(head) + len(body)
    if has_bias:
        bias = np.ascontiguousarray(adapter.b, dtype="<f8").tobytes()
        sink.write(bias)
        n += len(bias)
    return n


def read_adapter(source) -> Adapter:
    magic = source.read(4)
    if magic != PBAD_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {PBAD_MAGIC!r}")
    version, d_out, d_in, has_bias = struct.unpack("<IIIB", source.read(13))
    if version != PBAD_VERSION:
        raise FormatError(f"unsupported version {version}")
    W = np.frombuffer(source.read(d_out * d_in * 8), dtype="<f8").reshape(d_out, d_in)
    b = None
    if has_bias:
        b = np.frombuffer(source.read(d_out * 8), dtype="<f8").copy()
    return Adapter(W=W.copy(), b=b)
