"""Dataset-level evaluation: prediction records, breast-level reduction,
test-time augmentation, checkpoint ensembling, DSC scoring and report
assembly. Score tables are written as CSV with columns
id, view, label_benign, label_malignant, score_benign, score_malignant.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import augment, standardize
from .data import Split
from .errors import MetricError
from .metrics import auc, dsc, prauc
from .saliency import upsample_nearest
from .seeding import rng_for

HEADS = ("global", "local", "fusion")

SCORES_COLUMNS = ("id", "view", "label_benign", "label_malignant", "score_benign", "score_malignant")

DSC_THRESHOLD_GRID = tuple(np.round(np.arange(0.05, 1.0, 0.05), 2))


@dataclass
class ImageRecord:
    breast_id: str
    view: str
    y_benign: int
    y_malignant: int
    scores: dict[str, np.ndarray]  # head -> [2] (benign, malignant)
    saliency: np.ndarray | None = None  # [2,h,w] from the un-augmented pass
    alpha: np.ndarray | None = None
    windows: list = field(default_factory=list)


def _forward_scores(model, images: np.ndarray, variant: dict) -> dict[str, np.ndarray]:
    with T.no_grad():
        out = model.forward(images, training=False, **variant)
    return {
        "global": out.y_global.data.copy(),
        "local": out.y_local.data.copy(),
        "fusion": out.y_fusion.data.copy(),
        "_saliency": out.saliency.data.copy(),
        "_alpha": out.alpha.data.copy(),
        "_windows": out.windows,
    }


def predict_split(
    model,
    split: Split,
    tta_runs: int = 0,
    seed: int = 0,
    batch_size: int = 16,
    aug_translate: float = 0.06,
    aug_scale: float = 0.05,
    attention_mode: str = "gated",
    patch_mode: str = "roi",
    num_patches: int | None = None,
) -> list[ImageRecord]:
    """Per-image predictions for a split.

    ``model`` may be a single model or a list (scores and saliency are
    then arithmetic means across members). With tta_runs > 0, head
    scores average that many random translate+scale augmentations;
    saliency always comes from the un-augmented pass so it stays aligned
    with the image. When all augmented passes agree bitwise (e.g. zero
    magnitudes), their mean is returned as that exact value.
    """
    models = model if isinstance(model, (list, tuple)) else [model]
    units = [(ei, vi) for ei, exam in enumerate(split.exams) for vi in range(len(exam.views))]
    records: list[ImageRecord] = []
    for lo in range(0, len(units), batch_size):
        chunk = units[lo : lo + batch_size]
        base = np.stack(
            [standardize(split.exams[ei].views[vi].image) for ei, vi in chunk]
        )[:, None, :, :]
        variant = {"attention_mode": attention_mode, "patch_mode": patch_mode, "num_patches": num_patches}
        if patch_mode == "random":
            variant["patch_rng"] = rng_for(seed, "random-patches", lo)
        member_outputs = [_forward_scores(m, base, variant) for m in models]
        plain = {
            head: np.mean([mo[head] for mo in member_outputs], axis=0) if len(member_outputs) > 1
            else member_outputs[0][head]
            for head in HEADS
        }
        saliency = (
            np.mean([mo["_saliency"] for mo in member_outputs], axis=0)
            if len(member_outputs) > 1 else member_outputs[0]["_saliency"]
        )
        if tta_runs > 0:
            rep_scores = []
            for rep in range(tta_runs):
                imgs = []
                for ei, vi in chunk:
                    rng = rng_for(seed, "tta", ei, vi, rep)
                    imgs.append(standardize(augment(
                        split.exams[ei].views[vi].image, None, rng, aug_translate, aug_scale)))
                x = np.stack(imgs)[:, None, :, :]
                reps = [_forward_scores(m, x, variant) for m in models]
                rep_scores.append({
                    head: np.mean([mo[head] for mo in reps], axis=0) if len(reps) > 1 else reps[0][head]
                    for head in HEADS
                })
            scores = {}
            for head in HEADS:
                stack = np.stack([rs[head] for rs in rep_scores])
                scores[head] = stack[0] if (stack == stack[0]).all() else stack.mean(axis=0)
        else:
            scores = plain
        for row, (ei, vi) in enumerate(chunk):
            exam = split.exams[ei]
            records.append(ImageRecord(
                breast_id=exam.breast_id,
                view=exam.views[vi].view_name,
                y_benign=exam.y_benign,
                y_malignant=exam.y_malignant,
                scores={head: scores[head][row] for head in HEADS},
                saliency=saliency[row],
                alpha=member_outputs[0]["_alpha"][row],
                windows=member_outputs[0]["_windows"][row],
            ))
    return records


def head_scores(record: ImageRecord, head: str) -> np.ndarray:
    """Per-image [2] scores; 'global_local_avg' is the evaluation-time
    mean of the global and local heads."""
    if head == "global_local_avg":
        return 0.5 * (record.scores["global"] + record.scores["local"])
    return record.scores[head]


def breast_level_scores(records: list[ImageRecord], head: str = "fusion"):
    """Average the two view-level predictions per breast.

    Returns (ids, labels [n,2], scores [n,2]); raises on unpaired
    breasts."""
    grouped: dict[str, list[ImageRecord]] = {}
    for rec in records:
        grouped.setdefault(rec.breast_id, []).append(rec)
    ids, labels, scores = [], [], []
    for breast_id in sorted(grouped):
        group = grouped[breast_id]
        if len(group) != 2:
            raise MetricError(f"breast {breast_id} has {len(group)} views; exactly 2 required")
        ids.append(breast_id)
        labels.append((group[0].y_benign, group[0].y_malignant))
        scores.append(np.mean([head_scores(r, head) for r in group], axis=0))
    return ids, np.asarray(labels, dtype=np.int64), np.asarray(scores, dtype=np.float64)


# -- DSC over saliency maps ------------------------------------------------------


def _upsampled_map(record: ImageRecord, cls_index: int, image_hw) -> np.ndarray:
    return upsample_nearest(np.asarray(record.saliency[cls_index], dtype=np.float64), image_hw)


def dsc_for_records(records: list[ImageRecord], split: Split, cls: str,
                    mode: str = "hard", threshold: float = 0.5) -> float:
    """Mean DSC over images whose ground-truth mask for ``cls`` is
    nonempty (others are excluded, not scored zero)."""
    cls_index = {"benign": 0, "malignant": 1}[cls]
    by_key = {(rec.breast_id, rec.view): rec for rec in records}
    values = []
    for exam in split.exams:
        for view in exam.views:
            mask = view.mask_benign if cls == "benign" else view.mask_malignant
            if mask is None or not mask.any():
                continue
            rec = by_key[(exam.breast_id, view.view_name)]
            pred = _upsampled_map(rec, cls_index, mask.shape)
            values.append(dsc(pred, mask, mode=mode, threshold=threshold))
    if not values:
        raise MetricError(f"no images with nonempty {cls} masks in this split")
    return float(np.mean(values))


def select_dsc_threshold(records: list[ImageRecord], split: Split, cls: str,
                         grid=DSC_THRESHOLD_GRID) -> float:
    """Binarization threshold maximizing mean hard DSC on ``split``
    (intended for the validation split)."""
    best_t, best_v = grid[0], -1.0
    for t in grid:
        try:
            v = dsc_for_records(records, split, cls, mode="hard", threshold=float(t))
        except MetricError:
            raise
        if v > best_v:
            best_v, best_t = v, float(t)
    return best_t


# -- report -------------------------------------------------------------------------


def evaluate_report(
    model,
    split: Split,
    tta_runs: int = 0,
    seed: int = 0,
    dsc_thresholds: dict[str, float] | None = None,
    aug_translate: float = 0.06,
    aug_scale: float = 0.05,
) -> tuple[dict, list[ImageRecord]]:
    """Breast-level metric report for every head, with optional DSC."""
    records = predict_split(model, split, tta_runs=tta_runs, seed=seed,
                            aug_translate=aug_translate, aug_scale=aug_scale)
    report: dict = {
        "n_images": len(records),
        "tta_runs": tta_runs,
        "heads": {},
    }
    for head in ("global", "local", "fusion", "global_local_avg"):
        _, labels, scores = breast_level_scores(records, head=head)
        report["heads"][head] = {
            "auc_benign": auc(scores[:, 0], labels[:, 0]),
            "auc_malignant": auc(scores[:, 1], labels[:, 1]),
            "prauc_benign": prauc(scores[:, 0], labels[:, 0]),
            "prauc_malignant": prauc(scores[:, 1], labels[:, 1]),
        }
    report["n_breasts"] = len(labels)
    report["auc"] = {
        "benign": report["heads"]["fusion"]["auc_benign"],
        "malignant": report["heads"]["fusion"]["auc_malignant"],
    }
    report["prauc"] = {
        "benign": report["heads"]["fusion"]["prauc_benign"],
        "malignant": report["heads"]["fusion"]["prauc_malignant"],
    }
    if dsc_thresholds is not None:
        report["dsc"] = {}
        for cls in ("benign", "malignant"):
            try:
                threshold = dsc_thresholds[cls]
                report["dsc"][cls] = {
                    "hard": dsc_for_records(records, split, cls, "hard", threshold),
                    "soft": dsc_for_records(records, split, cls, "soft"),
                    "threshold": threshold,
                }
            except MetricError:
                report["dsc"][cls] = None
    return report, records


# -- evaluation-time ablations -----------------------------------------------------


def ablation_battery(model, split: Split, seed: int = 0, k_values=(1, 2, 3, 4, 6)) -> dict:
    """Evaluation-time ablation comparisons on one trained model.

    Replaces gated attention with uniform weights, ROI retrieval with
    random windows, and sweeps the patch count; reports breast-level
    local-head and fusion-head malignant AUC for each variant."""
    def aucs(records):
        out = {}
        for head in ("local", "fusion"):
            _, labels, scores = breast_level_scores(records, head=head)
            out[head] = {
                "auc_malignant": auc(scores[:, 1], labels[:, 1]),
                "auc_benign": auc(scores[:, 0], labels[:, 0]),
            }
        return out

    full = aucs(predict_split(model, split, seed=seed))
    uniform = aucs(predict_split(model, split, seed=seed, attention_mode="uniform"))
    random_patches = aucs(predict_split(model, split, seed=seed, patch_mode="random"))
    k_sweep = {}
    for k in k_values:
        k_sweep[int(k)] = aucs(predict_split(model, split, seed=seed, num_patches=int(k)))
    return {
        "full": full,
        "uniform_attention": uniform,
        "random_patches": random_patches,
        "k_sweep": k_sweep,
    }


# -- score tables ----------------------------------------------------------------------


def write_scores_csv(path, records: list[ImageRecord], head: str = "fusion") -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SCORES_COLUMNS)
        for rec in records:
            s = head_scores(rec, head)
            writer.writerow([rec.breast_id, rec.view, rec.y_benign, rec.y_malignant,
                             f"{s[0]:.10g}", f"{s[1]:.10g}"])


def read_scores_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows.append({
                "id": row["id"],
                "view": row["view"],
                "y_benign": int(row["label_benign"]),
                "y_malignant": int(row["label_malignant"]),
                "score_benign": float(row["score_benign"]),
                "score_malignant": float(row["score_malignant"]),
            })
    return rows


def breast_table_from_rows(rows: list[dict]):
    """Breast-level (ids, labels [n,2], scores [n,2]) from score-CSV rows."""
    grouped: dict[str, list[dict]] = {}
    for row in rows:
        grouped.setdefault(row["id"], []).append(row)
    ids, labels, scores = [], [], []
    for breast_id in sorted(grouped):
        group = grouped[breast_id]
        ids.append(breast_id)
        labels.append((group[0]["y_benign"], group[0]["y_malignant"]))
        scores.append((
            float(np.mean([g["score_benign"] for g in group])),
            float(np.mean([g["score_malignant"] for g in group])),
        ))
    return ids, np.asarray(labels, dtype=np.int64), np.asarray(scores, dtype=np.float64)
