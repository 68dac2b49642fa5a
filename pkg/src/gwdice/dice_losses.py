"""Dice-family scores, the generalised Wasserstein Dice score and its loss.

Probability maps carry labels on the last axis, shape ``(*grid, L)``; crisp
segmentations are integer label maps of shape ``grid``. Every ratio is
smoothed as ``(num + EPS) / (den + EPS)`` so that two empty segmentations
agree perfectly and gradients stay finite.

Functions taking ``validate=False`` skip the simplex check. Gradients are
taken with respect to unconstrained probabilities, so finite-difference
probes and upstream softmax layers call them that way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .label_metric import GroundMetric
from .wasserstein import (
    ShapeError,
    as_crisp_segmentation,
    as_prob_segmentation,
    emd_map_crisp,
)

EPS = 1e-8


@dataclass(frozen=True)
class DiceCounts:
    tp: float
    fp: float
    fn: float
    ae: float


@dataclass(frozen=True)
class WassersteinDiceBreakdown:
    theta_ae: float
    theta_tp_per_class: np.ndarray
    alpha: np.ndarray
    theta_tp: float
    score: float


def _prepare(p, g, n_labels=None, validate=True):
    if validate:
        p = as_prob_segmentation(p, n_labels)
    else:
        p = np.asarray(p, dtype=np.float64)
        if n_labels is not None and p.shape[-1] != n_labels:
            raise ShapeError(f"probability map has {p.shape[-1]} labels, expected {n_labels}")
    n = p.shape[-1]
    g = as_crisp_segmentation(g, n)
    if p.shape[:-1] != g.shape:
        raise ShapeError(f"prediction grid {p.shape[:-1]} does not match ground truth {g.shape}")
    return p.reshape(-1, n), g.reshape(-1)


def _ratio(num, den):
    return (num + EPS) / (den + EPS)


# --- binary ------------------------------------------------------------------


def crisp_counts(s, g) -> DiceCounts:
    """True positive / error counts for two binary masks."""
    s = np.asarray(s, dtype=bool)
    g = np.asarray(g, dtype=bool)
    if s.shape != g.shape:
        raise ShapeError(f"mask shapes differ: {s.shape} vs {g.shape}")
    tp = float(np.sum(s & g))
    fp = float(np.sum(s & ~g))
    fn = float(np.sum(~s & g))
    return DiceCounts(tp, fp, fn, fp + fn)


def soft_counts(p_fg, g) -> DiceCounts:
    """Soft counts for foreground probabilities against a crisp binary mask.

    ``ae`` is the summed absolute disagreement and ``tp`` the agreement on
    ground-truth foreground.
    """
    p = np.asarray(p_fg, dtype=np.float64).reshape(-1)
    gg = np.asarray(g, dtype=np.float64).reshape(-1)
    diff = np.abs(p - gg)
    fp = float(np.sum((1 - gg) * p))
    fn = float(np.sum(gg * (1 - p)))
    return DiceCounts(float(np.sum(gg * (1 - diff))), fp, fn, float(np.sum(diff)))


def dice_from_counts(c: DiceCounts) -> float:
    return float(_ratio(2 * c.tp, 2 * c.tp + c.ae))


def crisp_dice_binary(s, g) -> float:
    return dice_from_counts(crisp_counts(s, g))


def _binary_dice(p_fg: np.ndarray, g_fg: np.ndarray) -> float:
    return float(_ratio(2 * np.sum(g_fg * p_fg), np.sum(g_fg) + np.sum(p_fg)))


def soft_dice_binary(p, g, validate: bool = True) -> float:
    """Soft Dice of the foreground (label 1) of a two-label probability map."""
    p, g = _prepare(p, g, 2, validate)
    return _binary_dice(p[:, 1], (g == 1).astype(np.float64))


def soft_dice_binary_grad(p, g) -> np.ndarray:
    """Gradient of ``1 - soft_dice_binary`` with respect to ``p``."""
    shape = np.shape(p)
    p, g = _prepare(p, g, 2, validate=False)
    gf = (g == 1).astype(np.float64)
    num = 2 * np.sum(gf * p[:, 1]) + EPS
    den = np.sum(gf) + np.sum(p[:, 1]) + EPS
    grad = np.zeros_like(p)
    grad[:, 1] = -(2 * gf * den - num) / den**2
    return grad.reshape(shape)


# --- multi-class ---------------------------------------------------------------


def per_class_dice(p, g, validate: bool = True) -> np.ndarray:
    p, g = _prepare(p, g, None, validate)
    gh = np.eye(p.shape[1])[g]
    inter = np.sum(gh * p, axis=0)
    return _ratio(2 * inter, np.sum(gh, axis=0) + np.sum(p, axis=0))


def mean_dice(p, g, validate: bool = True) -> float:
    return float(np.mean(per_class_dice(p, g, validate)))


def mean_dice_loss(p, g, validate: bool = True) -> float:
    return 1.0 - mean_dice(p, g, validate)


def mean_dice_grad(p, g) -> np.ndarray:
    """Gradient of ``1 - mean_dice`` with respect to every ``p[..., l]``."""
    shape = np.shape(p)
    p, g = _prepare(p, g, None, validate=False)
    n = p.shape[1]
    gh = np.eye(n)[g]
    num = 2 * np.sum(gh * p, axis=0) + EPS
    den = np.sum(gh, axis=0) + np.sum(p, axis=0) + EPS
    grad = -(2 * gh * den - num) / den**2 / n
    return grad.reshape(shape)


def generalized_dice_fm(p, g, alpha, validate: bool = True) -> float:
    """Class-weighted Dice built on ``min(p, g)`` overlaps."""
    p, g = _prepare(p, g, None, validate)
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (p.shape[1],):
        raise ShapeError(f"need {p.shape[1]} class weights, got shape {alpha.shape}")
    if np.any(alpha < 0):
        raise ValueError("class weights must be nonnegative")
    if not np.any(alpha > 0):
        raise ValueError("class weights must not all be zero")
    gh = np.eye(p.shape[1])[g]
    num = 2 * np.sum(alpha * np.sum(np.minimum(p, gh), axis=0))
    den = np.sum(alpha * np.sum(p + gh, axis=0))
    return float(_ratio(num, den))


# --- Wasserstein Dice ------------------------------------------------------------


def _check_metric(p: np.ndarray, metric: GroundMetric):
    if np.shape(p)[-1] != len(metric):
        raise ShapeError(f"probability map has {np.shape(p)[-1]} labels but metric has {len(metric)}")


def wasserstein_dice(
    p, g, metric: GroundMetric, validate: bool = True, threads: int = 1
) -> WassersteinDiceBreakdown:
    """Generalised Wasserstein Dice score of ``p`` against crisp ``g``.

    Class weights are the label-to-background distances, so background
    voxels never add true positives. The error mass is the same total that
    :func:`emd_map_crisp` returns.
    """
    _check_metric(p, metric)
    fp, fg = _prepare(p, g, len(metric), validate)
    per_voxel, theta_ae = emd_map_crisp(fp, fg, metric, threads=threads, validate=False)
    alpha = np.array(metric.to_background)
    gh = np.eye(len(metric))[fg]
    tp_per_class = np.sum(gh * (alpha[None, :] - per_voxel[:, None]), axis=0)
    theta_tp = float(np.sum(alpha * tp_per_class))
    score = float(_ratio(2 * theta_tp, 2 * theta_tp + theta_ae))
    return WassersteinDiceBreakdown(theta_ae, tp_per_class, alpha, theta_tp, score)


def wasserstein_dice_loss(p, g, metric: GroundMetric, validate: bool = True) -> float:
    return 1.0 - wasserstein_dice(p, g, metric, validate).score


def wasserstein_dice_grad(p, g, metric: GroundMetric) -> np.ndarray:
    """Gradient of the Wasserstein Dice loss with respect to ``p``.

    With a crisp target the per-voxel distance is linear in ``p``, so the
    score is a ratio of affine functions and the gradient is closed form.
    """
    _check_metric(p, metric)
    shape = np.shape(p)
    fp, fg = _prepare(p, g, len(metric), validate=False)
    per_voxel, theta_ae = emd_map_crisp(fp, fg, metric, validate=False)
    alpha = metric.to_background
    a_g = alpha[fg]
    theta_tp = float(np.sum(a_g * (a_g - per_voxel)))
    num = 2 * theta_tp + EPS
    den = 2 * theta_tp + theta_ae + EPS
    # d(per_voxel_i)/d(p_il) = M[l, g_i]
    dw = metric.m[:, fg].T
    dtp = -a_g[:, None] * dw
    dnum = 2 * dtp
    dden = 2 * dtp + dw
    grad = -(dnum * den - num * dden) / den**2
    return grad.reshape(shape)
