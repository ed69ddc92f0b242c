"""Threshold-free classification metrics, overlap scoring and score
combiners.

AUC is the Mann-Whitney statistic (ties counted half), PR AUC uses
step-wise interpolation over descending-score thresholds, ROC-style
sweeps are exhaustive over distinct scores. All functions are pure and
operate on plain numpy arrays in float64.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, MetricError


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError(f"scores/labels must be equal-length vectors, got {s.shape} and {y.shape}")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be binary")
    return s, y.astype(np.int64)


def auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via average ranks."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC undefined: both classes must be present")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    avg_ranks = starts + (counts + 1) / 2.0
    ranks = avg_ranks[inverse]
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def prauc(scores, labels) -> float:
    """Area under the precision-recall curve, step interpolation:
    sum over thresholds of (R_i - R_{i-1}) * P_i."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("PR AUC undefined without positives")
    order = np.argsort(-s, kind="mergesort")
    ys = y[order]
    ss = s[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(1 - ys)
    last_of_block = np.flatnonzero(np.diff(ss) != 0)
    idx = np.concatenate([last_of_block, [len(ss) - 1]])
    precision = tp[idx] / (tp[idx] + fp[idx])
    recall = tp[idx] / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def dsc(predicted, mask, mode: str = "hard", threshold: float = 0.5) -> float:
    """Dice similarity 2|P.M| / (|P|+|M|) at image resolution.

    ``soft`` uses the [0,1] prediction as-is; ``hard`` binarizes it at
    the threshold first. The ground-truth mask must be nonempty."""
    m = np.asarray(mask).astype(bool)
    p = np.asarray(predicted, dtype=np.float64)
    if p.shape != m.shape:
        raise MetricError(f"prediction shape {p.shape} != mask shape {m.shape}")
    if not m.any():
        raise MetricError("DSC requires a nonempty ground-truth mask")
    if mode == "hard":
        p = (p >= threshold).astype(np.float64)
    elif mode != "soft":
        raise ConfigError(f"unknown DSC mode {mode!r}; expected 'hard' or 'soft'")
    inter = float((p * m).sum())
    return 2.0 * inter / float(p.sum() + m.sum())


def sensitivity_matched_specificity(scores, labels, target_sensitivity: float) -> float:
    """Specificity at the largest threshold whose sensitivity >= target."""
    if not 0.0 < target_sensitivity <= 1.0:
        raise MetricError(f"target sensitivity must lie in (0, 1], got {target_sensitivity}")
    s, y = _scores_labels(scores, labels)
    pos = s[y == 1]
    neg = s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("sensitivity/specificity undefined: both classes must be present")
    for threshold in np.unique(s)[::-1]:  # descending; sensitivity grows as threshold drops
        sensitivity = float((pos >= threshold).mean())
        if sensitivity >= target_sensitivity:
            return float((neg < threshold).mean())
    raise MetricError(f"no threshold reaches sensitivity {target_sensitivity}")


def breast_level(score_first_view: float, score_second_view: float) -> float:
    """Breast score = mean of the two view-level scores."""
    return 0.5 * (float(score_first_view) + float(score_second_view))


# -- combiners ---------------------------------------------------------------


def hybrid(reader_scores, model_scores, lam: float) -> np.ndarray:
    """Convex combination lam * reader + (1 - lam) * model."""
    if not 0.0 <= lam <= 1.0:
        raise MetricError(f"lambda must lie in [0, 1], got {lam}")
    r = np.asarray(reader_scores, dtype=np.float64)
    m = np.asarray(model_scores, dtype=np.float64)
    if r.shape != m.shape:
        raise MetricError(f"misaligned score vectors: {r.shape} vs {m.shape}")
    if lam == 0.0:
        return m.copy()
    if lam == 1.0:
        return r.copy()
    return lam * r + (1.0 - lam) * m


def hybrid_sweep(reader_scores, model_scores, labels, step: float = 0.01):
    """(lambda, AUC, PRAUC) curve over a lambda grid including both
    endpoints, and the argmax-AUC lambda (ties to the smaller lambda)."""
    lams = np.round(np.arange(0.0, 1.0 + step / 2.0, step), 12)
    rows = []
    best = None
    for lam in lams:
        combined = hybrid(reader_scores, model_scores, float(lam))
        row = {"lam": float(lam), "auc": auc(combined, labels), "prauc": prauc(combined, labels)}
        rows.append(row)
        if best is None or row["auc"] > best["auc"]:
            best = row
    return rows, best["lam"]


def simplex_ensemble(score_sets, weights) -> np.ndarray:
    """Weighted mean of >= 2 aligned score vectors, weights on the simplex."""
    if len(score_sets) < 2:
        raise MetricError("simplex ensemble needs at least two score sets")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(score_sets),):
        raise MetricError(f"{len(score_sets)} score sets but {w.shape} weights")
    if (w < 0).any() or abs(float(w.sum()) - 1.0) > 1e-9:
        raise MetricError(f"weights must be nonnegative and sum to 1, got {w.tolist()}")
    mats = np.stack([np.asarray(s, dtype=np.float64) for s in score_sets])
    if mats.ndim != 2:
        raise MetricError("score sets must be aligned 1-d vectors")
    return w @ mats


def simplex_grid_search(score_sets, labels, step: float = 0.01):
    """Exhaustive AUC search over the 3-member weight simplex at the given
    grid step; returns (best weights, best AUC). First maximum wins, so
    the result is deterministic."""
    if len(score_sets) != 3:
        raise MetricError(f"grid search is defined over 3 score sets, got {len(score_sets)}")
    mats = np.stack([np.asarray(s, dtype=np.float64) for s in score_sets])
    n_steps = int(round(1.0 / step))
    best_weights = None
    best_auc = -np.inf
    for i in range(n_steps + 1):
        l1 = i / n_steps
        for j in range(n_steps + 1 - i):
            l2 = j / n_steps
            l3 = 1.0 - l1 - l2
            combined = l1 * mats[0] + l2 * mats[1] + l3 * mats[2]
            value = auc(combined, labels)
            if value > best_auc:
                best_auc = value
                best_weights = (l1, l2, max(l3, 0.0))
    return best_weights, float(best_auc)
