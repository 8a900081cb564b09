"""Segmentation metrics and mask post-selection utilities."""

from __future__ import annotations

import numpy as np

from layerseg.errors import ValidationError


def select_foreground_slot(alphas: np.ndarray, region_mask: np.ndarray) -> int:
    """Pick the slot whose alpha best concentrates inside the region mask.

    Score per slot: mean alpha inside the mask minus mean alpha outside.
    Ties break toward the lower index (np.argmax semantics).
    """
    if region_mask.sum() == 0:
        raise ValidationError("region mask has no foreground pixel")
    inside = region_mask > 0.5
    outside = ~inside
    scores = []
    for k in range(alphas.shape[0]):
        mean_in = alphas[k][inside].mean()
        mean_out = alphas[k][outside].mean() if outside.any() else 0.0
        scores.append(mean_in - mean_out)
    return int(np.argmax(scores))


def binarize(alpha_fg: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold an alpha map; values exactly at the threshold count as
    foreground."""
    return (np.asarray(alpha_fg) >= threshold).astype(np.float32)


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"mask shape mismatch: {pred.shape} vs {gt.shape}")
    return pred > 0.5, gt > 0.5


def fg_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Foreground intersection-over-union; 1.0 when both masks are empty."""
    p, g = _check_pair(pred, gt)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def pixel_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    """(true positives, predicted positives, actual positives)."""
    p, g = _check_pair(pred, gt)
    return int(np.logical_and(p, g).sum()), int(p.sum()), int(g.sum())


def f1_from_counts(tp: int, pred_pos: int, gt_pos: int) -> float:
    precision = tp / pred_pos if pred_pos else 0.0
    recall = tp / gt_pos if gt_pos else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f1(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pixel-level F1 of a single mask pair."""
    return f1_from_counts(*pixel_counts(pred, gt))


def pooled_scores(
    pairs: list[tuple[np.ndarray, np.ndarray]]
) -> tuple[float, float]:
    """Dataset-level (fgIoU, F1) from pooled pixel counts (micro-average)."""
    tp = pp = gp = union = 0
    for pred, gt in pairs:
        p, g = _check_pair(pred, gt)
        tp += int(np.logical_and(p, g).sum())
        pp += int(p.sum())
        gp += int(g.sum())
        union += int(np.logical_or(p, g).sum())
    iou = tp / union if union else 1.0
    return float(iou), f1_from_counts(tp, pp, gp)
