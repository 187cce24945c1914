"""Command-line pipeline: trial generation, affinity export, ROC/AUC, readout
training, RT prediction, noise ceiling, Gram alignment, and report rendering.

Every run writes a sidecar RunManifest (<out>.manifest.json) with the resolved
configuration, input digests, and seeds; re-running an identical manifest
reproduces outputs bit-exactly. Exit codes: 0 success, 1 usage error, 2 data
error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, affinity, gramalign, readout, roc, tensorio, trialgen

log = logging.getLogger("patchbench")


class UsageError(Exception):
    pass


class DataInputError(Exception):
    pass


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataInputError(f"missing input file: {p}")
    return p


def write_manifest(out_path: Path, command: str, config: dict, inputs: list[Path]) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": {k: v for k, v in sorted(config.items())
                   if isinstance(v, (str, int, float, bool, list, type(None)))},
        "inputs": {str(p): _sha256(p) for p in inputs if p.is_file()},
    }
    manifest_path = out_path.with_name(out_path.name + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_config_file(path: str) -> dict:
    """TOML-style key=value lines; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(_require(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = val.strip("\"'")
    return values


def _read_mask_index(index_path: Path, mask_root: Path):
    """Per-image object index: JSONL rows {image_id, object_id, mask, ...}."""
    by_image: dict[str, list[dict]] = {}
    for line in index_path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        row = json.loads(line)
        by_image.setdefault(row["image_id"], []).append(row)
    masks: dict[str, list[tuple[int, np.ndarray]]] = {}
    for image_id, rows in by_image.items():
        loaded = []
        for row in rows:
            with open(mask_root / row["mask"], "rb") as f:
                loaded.append((int(row["object_id"]), tensorio.read_pgm(f)))
        masks[image_id] = loaded
    return masks


def _load_feature_dir(path: Path) -> dict[str, tensorio.FeatureMap]:
    maps = {}
    for f in sorted(path.glob("*.pbft")):
        with open(f, "rb") as fh:
            fmap = tensorio.read_feature_map(fh)
        maps[fmap.image_id] = fmap
    if not maps:
        raise DataInputError(f"no .pbft files found in {path}")
    return maps


def _load_trials(path: str) -> list[tensorio.TrialSpec]:
    with open(_require(path)) as f:
        return tensorio.read_trial_manifest(f)


def _load_records(path: str) -> list[tensorio.BehavioralRecord]:
    with open(_require(path)) as f:
        return tensorio.read_behavioral_records(f)


def _train_cfg(args) -> readout.TrainConfig:
    return readout.TrainConfig(
        hidden=args.hidden, epochs=args.epochs, batch_size=args.batch_size,
        learning_rate=args.learning_rate, momentum=args.momentum,
        weight_decay=args.weight_decay, rng_seed=args.seed,
    )


def _patch_masks(trials, mask_index, patch_size):
    """Center-object PatchMask per image for the trials' images."""
    out = {}
    for t in trials:
        if t.image_id in out:
            continue
        rows = mask_index.get(t.image_id)
        if rows is None:
            raise DataInputError(f"no masks for image {t.image_id}")
        by_id = dict(rows)
        if t.center_object_id not in by_id:
            raise DataInputError(
                f"no mask for object {t.center_object_id} of image {t.image_id}"
            )
        out[t.image_id] = tensorio.rasterize_mask_to_patches(
            by_id[t.center_object_id], patch_size,
            image_id=t.image_id, object_id=t.center_object_id,
        )
    return out


def _mean_rts(trials, records, correct_only=True):
    by_trial: dict[str, list[float]] = {}
    for r in records:
        if correct_only and not r.correct:
            continue
        by_trial.setdefault(r.trial_id, []).append(r.rt_ms)
    missing = [t.trial_id for t in trials if t.trial_id not in by_trial]
    if missing:
        raise DataInputError(f"no behavioral records for trials: {missing[:3]} ...")
    return np.asarray([float(np.mean(by_trial[t.trial_id])) for t in trials])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_trials(args) -> None:
    mask_root = _require(args.masks)
    index = _require(args.index)
    mask_index = _read_mask_index(index, mask_root)
    cfg = trialgen.PlacementConfig(
        px_per_degree=args.px_per_degree, close_deg=args.close_deg,
        far_deg=args.far_deg, distance_tol_px=args.distance_tol,
        boundary_margin_px=args.boundary_margin, max_attempts=args.max_attempts,
        rng_seed=args.seed,
    )

    def one(image_id):
        masks = mask_index[image_id]
        H, W = masks[0][1].shape
        try:
            return image_id, trialgen.generate_quad(image_id, masks, (W, H), cfg)
        except trialgen.PlacementError as exc:
            return image_id, exc.reason

    image_ids = sorted(mask_index)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(one, image_ids))
    else:
        results = [one(i) for i in image_ids]

    out = Path(args.out)
    skipped = {}
    with open(out, "w") as f:
        for image_id, result in results:
            if isinstance(result, str):
                skipped[image_id] = result
                log.info("skipping %s: %s", image_id, result)
            else:
                tensorio.write_trial_manifest(result.trials, f)
    if skipped:
        out.with_suffix(".skipped.json").write_text(
            json.dumps(skipped, indent=2, sort_keys=True) + "\n")
    write_manifest(out, "gen-trials", vars(args), [index])
    log.info("wrote trials for %d/%d images", len(image_ids) - len(skipped), len(image_ids))


def cmd_affinity(args) -> None:
    with open(_require(args.features), "rb") as f:
        fmap = tensorio.read_feature_map(f)
    try:
        row, col = (int(v) for v in args.seed_patch.split(","))
    except ValueError:
        raise UsageError("--seed-patch must be ROW,COL")
    amap = affinity.affinity_from_patch(fmap, (row, col))
    out = Path(args.out)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["row", "col", "affinity"])
        for r in range(amap.h):
            for c in range(amap.w):
                writer.writerow([r, c, f"{amap.values[r, c]:.9g}"])
    if args.out_pgm:
        # Display scaling only: [-1, 1] -> [0, 255].
        gray = np.clip((amap.values + 1.0) * 127.5, 0, 255).astype(np.uint8)
        with open(args.out_pgm, "wb") as f:
            f.write(f"P5\n{amap.w} {amap.h}\n255\n".encode())
            f.write(gray.tobytes())
    write_manifest(out, "affinity", vars(args), [Path(args.features)])


def cmd_roc(args) -> None:
    maps = _load_feature_dir(_require(args.features))
    trials = _load_trials(args.trials)
    mask_index = _read_mask_index(_require(args.index), _require(args.masks))
    patch_masks = _patch_masks(trials, mask_index, args.patch_size)
    grid = roc.default_grid(args.grid_points)
    sweeps = []
    per_trial_auc = []
    for t in trials:
        if t.image_id not in maps:
            raise DataInputError(f"no features for image {t.image_id}")
        seed = affinity.pixel_to_patch(t.center_px, args.patch_size)
        amap = affinity.affinity_from_patch(maps[t.image_id], seed)
        sweeps.append(roc.sweep(amap, patch_masks[t.image_id], grid))
        per_trial_auc.append(roc.auc_rank_oracle(amap, patch_masks[t.image_id]))
    curve = roc.average_curves(sweeps)
    out = Path(args.out)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["threshold", "fpr", "tpr"])
        mean = np.asarray(sweeps).mean(axis=0)
        for theta, (fpr, tpr) in zip(grid.thresholds, mean):
            writer.writerow([f"{theta:.9g}", f"{fpr:.9g}", f"{tpr:.9g}"])
    summary = {
        "trial_averaged_auc": curve.auc,
        "mean_per_trial_auc": float(np.mean(per_trial_auc)),
        "n_trials": len(trials),
    }
    out.with_suffix(".auc.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, "roc", vars(args),
                   [Path(args.trials), Path(args.index)])
    log.info("trial-averaged AUC %.4f over %d trials", curve.auc, len(trials))


def cmd_train_readout(args) -> None:
    maps = _load_feature_dir(_require(args.features))
    train_trials = _load_trials(args.train_trials)
    eval_trials = _load_trials(args.eval_trials)

    def featurize(trials):
        X = np.asarray([
            readout.build_trial_feature(maps[t.image_id], t, args.patch_size)
            for t in trials
        ])
        y = np.asarray([1.0 if t.label == "different" else 0.0 for t in trials])
        return X, y

    X_train, y_train = featurize(train_trials)
    X_eval, y_eval = featurize(eval_trials)
    model = readout.train_classifier(X_train, y_train, _train_cfg(args))
    summary = {
        "train_accuracy": readout.evaluate_accuracy(model, X_train, y_train),
        "eval_accuracy": readout.evaluate_accuracy(model, X_eval, y_eval),
        "n_train": len(train_trials),
        "n_eval": len(eval_trials),
    }
    out = Path(args.out)
    out.write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, "train-readout", vars(args),
                   [Path(args.train_trials), Path(args.eval_trials)])
    log.info("grouping accuracy %.4f", summary["eval_accuracy"])


def cmd_predict_rt(args) -> None:
    maps = _load_feature_dir(_require(args.features))
    trials = _load_trials(args.trials)
    records = _load_records(args.records)
    X = np.asarray([
        readout.build_trial_feature(maps[t.image_id], t, args.patch_size)
        for t in trials
    ])
    mean_rts = _mean_rts(trials, records)
    cfg = readout.CVConfig(folds=args.folds, seeds=args.seeds,
                           train=_train_cfg(args), rng_seed=args.seed)
    preds = readout.cv_predict_rt(X, mean_rts, cfg,
                                  conditions=[t.condition for t in trials])
    out = Path(args.out)
    with open(out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["trial_id", "condition", "predicted_ms", "seed_std_ms", "fold"])
        for t, p, s, k in zip(trials, preds.predicted_ms, preds.seed_std_ms,
                              preds.fold_of_trial):
            writer.writerow([t.trial_id, t.condition, f"{p:.6f}", f"{s:.6f}", k])
    by_cond: dict[str, list[float]] = {}
    for t, p in zip(trials, preds.predicted_ms):
        by_cond.setdefault(t.condition, []).append(p)
    means_path = out.with_suffix(".condition_means.csv")
    with open(means_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["condition", "mean_predicted_ms"])
        for cond in tensorio.CONDITIONS:
            if cond in by_cond:
                writer.writerow([cond, f"{np.mean(by_cond[cond]):.6f}"])
    score = readout.normalized_score(preds.predicted_ms, [t.trial_id for t in trials],
                                     records, n_splits=args.splits, rng_seed=args.seed)
    summary = {
        "raw_spearman": score.raw,
        "noise_ceiling": score.ceiling,
        "normalized_score": score.normalized,
        "n_trials": len(trials),
    }
    out.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, "predict-rt", vars(args),
                   [Path(args.trials), Path(args.records)])
    log.info("normalized behavioral score %.4f", score.normalized)


def cmd_noise_ceiling(args) -> None:
    records = _load_records(args.records)
    result = readout.noise_ceiling(records, n_splits=args.splits, rng_seed=args.seed)
    out = Path(args.out)
    out.write_text(json.dumps({
        "ceiling": result.ceiling,
        "per_split": result.per_split.tolist(),
        "dropped_per_split": result.dropped_per_split.tolist(),
    }, indent=2) + "\n")
    write_manifest(out, "noise-ceiling", vars(args), [Path(args.records)])
    log.info("noise ceiling %.4f", result.ceiling)


def cmd_gram_loss(args) -> None:
    with open(_require(args.student), "rb") as f:
        student = tensorio.read_feature_map(f)
    with open(_require(args.teacher), "rb") as f:
        teacher = tensorio.read_feature_map(f)
    loss = gramalign.gram_loss(student, teacher)
    out = Path(args.out)
    out.write_text(json.dumps({"gram_loss": loss}, indent=2) + "\n")
    write_manifest(out, "gram-loss", vars(args),
                   [Path(args.student), Path(args.teacher)])
    print(f"gram_loss {loss:.9g}")


def _trial_indices(trials, image_order, patch_size):
    pos = {image_id: i for i, image_id in enumerate(image_order)}
    out = []
    for t in trials:
        out.append(gramalign.TrialIndex(
            image_idx=pos[t.image_id],
            center=affinity.pixel_to_patch(t.center_px, patch_size),
            peripheral=affinity.pixel_to_patch(t.peripheral_px, patch_size),
        ))
    return out


def cmd_align_train(args) -> None:
    student = _load_feature_dir(_require(args.student_dir))
    teacher = _load_feature_dir(_require(args.teacher_dir))
    trials = _load_trials(args.trials)
    ids = sorted(set(student) & set(teacher))
    if not ids:
        raise DataInputError("student and teacher share no image ids")
    cfg = gramalign.AlignConfig(
        lambda_gram=args.lambda_gram, learning_rate=args.learning_rate,
        momentum=args.momentum, epochs=args.epochs, hidden=args.hidden,
        rng_seed=args.seed,
    )
    trial_ix = _trial_indices(trials, ids, args.patch_size)
    labels = np.asarray([1.0 if t.label == "different" else 0.0 for t in trials])
    adapter, history = gramalign.train_adapter(
        [student[i] for i in ids], [teacher[i] for i in ids], trial_ix, labels, cfg)
    out = Path(args.out)
    with open(out, "wb") as f:
        gramalign.write_adapter(adapter, f)
    out.with_suffix(".history.json").write_text(json.dumps({
        "total": history.total, "task": history.task, "gram": history.gram,
    }) + "\n")
    write_manifest(out, "align-train", vars(args), [Path(args.trials)])
    log.info("gram loss %.6g -> %.6g", history.gram[0], history.gram[-1])


def cmd_align_report(args) -> None:
    base = _load_feature_dir(_require(args.base_dir))
    with open(_require(args.adapter), "rb") as f:
        adapter = gramalign.read_adapter(f)
    aligned = {i: adapter.apply(m) for i, m in base.items()}
    trials = _load_trials(args.trials)
    records = _load_records(args.records)
    mask_index = _read_mask_index(_require(args.index), _require(args.masks))
    patch_masks = _patch_masks(trials, mask_index, args.patch_size)
    cv = readout.CVConfig(folds=args.folds, seeds=args.seeds,
                          train=_train_cfg(args), rng_seed=args.seed)
    report = gramalign.before_after_report(
        base, aligned, trials, patch_masks, records, args.patch_size,
        train_cfg=_train_cfg(args), cv_cfg=cv)
    out = Path(args.out)
    out.write_text(json.dumps({
        metric: {"base": m.base, "aligned": m.aligned, "delta": m.delta}
        for metric, m in (("grouping_accuracy", report.grouping_accuracy),
                          ("object_auc", report.object_auc),
                          ("behavioral_score", report.behavioral_score))
    }, indent=2) + "\n")
    write_manifest(out, "align-report", vars(args),
                   [Path(args.trials), Path(args.records), Path(args.adapter)])


def _svg_polyline(points, color, width=2):
    path = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return (f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
            f'points="{path}"/>')


def cmd_report(args) -> None:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = []
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

    if args.roc_csv:
        size, margin = 400, 45
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
                 f'<rect width="{size}" height="{size}" fill="white"/>']
        span = size - 2 * margin

        def to_xy(fpr, tpr):
            return margin + fpr * span, size - margin - tpr * span

        parts.append(_svg_polyline([to_xy(0, 0), to_xy(1, 1)], "#999999", 1))
        for k, path in enumerate(args.roc_csv):
            rows = list(csv.DictReader(open(_require(path))))
            inputs.append(Path(path))
            pts = [to_xy(float(r["fpr"]), float(r["tpr"])) for r in rows]
            pts = [to_xy(0, 0)] + pts[::-1] + [to_xy(1, 1)]
            color = palette[k % len(palette)]
            parts.append(_svg_polyline(pts, color))
            parts.append(f'<text x="{margin + 5}" y="{margin + 15 + 15 * k}" '
                         f'fill="{color}" font-size="12">{Path(path).stem}</text>')
        parts.append(f'<text x="{size // 2 - 10}" y="{size - 8}" font-size="12">FPR</text>')
        parts.append(f'<text x="8" y="{size // 2}" font-size="12">TPR</text>')
        parts.append("</svg>")
        (out_dir / "roc_overlay.svg").write_text("\n".join(parts) + "\n")

    if args.condition_means:
        rows = list(csv.DictReader(open(_require(args.condition_means))))
        inputs.append(Path(args.condition_means))
        width, height, margin = 420, 300, 50
        peak = max(float(list(r.values())[1]) for r in rows)
        bar_w = (width - 2 * margin) / max(len(rows), 1)
        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
                 f'<rect width="{width}" height="{height}" fill="white"/>']
        for k, r in enumerate(rows):
            value = float(list(r.values())[1])
            bar_h = (height - 2 * margin) * value / peak
            x = margin + k * bar_w
            parts.append(f'<rect x="{x + 4:.1f}" y="{height - margin - bar_h:.1f}" '
                         f'width="{bar_w - 8:.1f}" height="{bar_h:.1f}" '
                         f'fill="{palette[k % len(palette)]}"/>')
            parts.append(f'<text x="{x + 4:.1f}" y="{height - margin + 14}" '
                         f'font-size="9">{list(r.values())[0]}</text>')
            parts.append(f'<text x="{x + 4:.1f}" y="{height - margin - bar_h - 4:.1f}" '
                         f'font-size="10">{value:.0f}</text>')
        parts.append("</svg>")
        (out_dir / "condition_means.svg").write_text("\n".join(parts) + "\n")

    if not inputs:
        raise UsageError("report needs --roc-csv and/or --condition-means")
    write_manifest(out_dir / "report", "report", vars(args), inputs)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=1e-4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchbench",
        description="Object-centricity and behavioral-alignment benchmarking "
                    "for patch-level vision representations.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--seed", type=int, default=0, help="master RNG seed")
    common.add_argument("--jobs", type=int, default=1,
                        help="worker count for image-parallel stages")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name, **kwargs):
        return sub.add_parser(name, parents=[common], **kwargs)

    p = add_parser("gen-trials", help="generate two-dot trials from masks")
    p.add_argument("--masks", required=True, help="directory of .pgm masks")
    p.add_argument("--index", required=True, help="object index JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--px-per-degree", type=float, default=34.0)
    p.add_argument("--close-deg", type=float, default=3.0)
    p.add_argument("--far-deg", type=float, default=6.0)
    p.add_argument("--distance-tol", type=float, default=8.0)
    p.add_argument("--boundary-margin", type=float, default=6.0)
    p.add_argument("--max-attempts", type=int, default=2000)
    p.set_defaults(func=cmd_gen_trials)

    p = add_parser("affinity", help="export a seed-patch affinity map")
    p.add_argument("--features", required=True)
    p.add_argument("--seed-patch", required=True, metavar="ROW,COL")
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--out-pgm", help="optional grayscale PGM rendering")
    p.set_defaults(func=cmd_affinity)

    p = add_parser("roc", help="trial-averaged ROC and AUC")
    p.add_argument("--features", required=True, help="directory of .pbft files")
    p.add_argument("--trials", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--grid-points", type=int, default=201)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_roc)

    p = add_parser("train-readout", help="train/evaluate the grouping classifier")
    p.add_argument("--features", required=True)
    p.add_argument("--train-trials", required=True)
    p.add_argument("--eval-trials", required=True)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_readout)

    p = add_parser("predict-rt", help="cross-validated RT prediction")
    p.add_argument("--features", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--splits", type=int, default=20)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_predict_rt)

    p = add_parser("noise-ceiling", help="split-half noise ceiling")
    p.add_argument("--records", required=True)
    p.add_argument("--splits", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_ceiling)

    p = add_parser("gram-loss", help="Gram loss between two feature maps")
    p.add_argument("--student", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gram_loss)

    p = add_parser("align-train", help="train a Gram-alignment adapter")
    p.add_argument("--student-dir", required=True)
    p.add_argument("--teacher-dir", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--lambda-gram", type=float, default=1.0)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--out", required=True, help=".pbad adapter output")
    p.set_defaults(func=cmd_align_train)

    p = add_parser("align-report", help="base vs aligned three-metric report")
    p.add_argument("--base-dir", required=True)
    p.add_argument("--adapter", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_align_report)

    p = add_parser("report", help="render precomputed artifacts as CSV+SVG")
    p.add_argument("--roc-csv", action="append", default=[])
    p.add_argument("--condition-means")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def _apply_config_defaults(parser, argv, overrides):
    """Install config-file values as parser defaults (flags still override).

    Defaults must be set on the invoked subparser too, since its own defaults
    would otherwise take precedence; values are converted with each option's
    declared type because argparse only converts command-line strings.
    """
    targets = [parser]
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for token in argv:
                if token in action.choices:
                    targets.append(action.choices[token])
                    break
    for p in targets:
        by_dest = {a.dest: a for a in p._actions}
        converted = {}
        for key, val in overrides.items():
            a = by_dest.get(key)
            if a is None:
                continue
            if a.type is not None and isinstance(val, str):
                try:
                    val = a.type(val)
                except ValueError:
                    raise UsageError(f"config value for {key!r}: cannot parse {val!r}")
            converted[key] = val
        p.set_defaults(**converted)


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    # Pre-scan for --config so file values become defaults that flags override.
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if "--config" in argv:
            cfg_path = argv[argv.index("--config") + 1]
            _apply_config_defaults(parser, argv, _load_config_file(cfg_path))
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    except (DataInputError, tensorio.FormatError, tensorio.DataError,
            tensorio.ManifestError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
