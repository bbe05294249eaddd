"""Training objectives.

Reconstruction, adjustment and forecasting errors are means over the cells
they score, so levels of different sizes weigh comparably in the total.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .multiscale import pooling_matrix
from .tensor import Tensor

TASKS = ("classify", "interpolate", "forecast", "none")


class EmptyMaskWarning(UserWarning):
    """A masked loss had no cell to score."""


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be nonnegative")


def recon_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean squared error over the held-out cells ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        warnings.warn("reconstruction mask selects no cell; loss is 0", EmptyMaskWarning, stacklevel=2)
    return T.masked_mse(pred, target, mask)


interp_loss = recon_loss


def adjust_loss(fine: Tensor, coarse: Tensor, coarse_mask=None, pool=None, fine_mask=None) -> Tensor:
    """Disagreement between the pooled finer reconstruction and the coarser one.

    ``fine`` is (..., Tf, D) and ``coarse`` (..., Tc, D). Without ``pool``
    the finer grid must be exactly twice as long and adjacent pairs are
    averaged. ``pool`` is a 0/1 (..., Tc, Tf) membership matrix; with
    ``fine_mask`` only observed finer cells enter each window mean.
    Scored over cells where ``coarse_mask`` holds (default: all).
    """
    Tf, Tc = fine.shape[-2], coarse.shape[-2]
    if pool is None:
        if Tf != 2 * Tc:
            raise ValueError(f"adjust_loss: finer length {Tf} is not twice coarser length {Tc}")
        pool = pooling_matrix(Tc, Tf)
    pool = np.asarray(pool, dtype=np.float64)
    if pool.shape[-2:] != (Tc, Tf):
        raise ValueError(f"adjust_loss: pooling matrix {pool.shape} does not map {Tf} -> {Tc}")
    if coarse_mask is None:
        coarse_mask = np.ones(coarse.shape, dtype=bool)
    if fine_mask is None:
        pooled = T.mean_pool(fine, pool)
    else:
        m = np.asarray(fine_mask, dtype=np.float64)
        den = pool @ m
        num = T.matmul(Tensor(pool), fine * m)
        pooled = num * Tensor(np.divide(1.0, den, out=np.zeros_like(den), where=den > 0))
    return T.masked_mse(pooled - coarse, 0.0, coarse_mask)


def l2_normalize(h: Tensor, eps: float = 1e-12) -> Tensor:
    return h / ((h * h).sum(axis=-1, keepdims=True) + eps).sqrt()


def contrastive_loss(h_fine: Tensor, h_coarse: Tensor, normalize: bool = True) -> Tensor:
    """Cross-scale contrastive loss, averaged over the batch.

    For row i the positive is ``h_coarse[i]``; negatives are every other
    ``h_coarse[j]`` and every other ``h_fine[j]``. Rows are L2-normalized
    first unless ``normalize`` is False.
    """
    B = h_fine.shape[0]
    if B < 2:
        raise ValueError(f"contrastive_loss: batch of {B} has no negatives")
    if h_coarse.shape != h_fine.shape:
        raise ValueError(f"contrastive_loss: shapes {h_fine.shape} and {h_coarse.shape} differ")
    a = l2_normalize(h_fine) if normalize else h_fine
    b = l2_normalize(h_coarse) if normalize else h_coarse
    cross = a @ b.T
    self_sim = T.where_const(~np.eye(B, dtype=bool), a @ a.T, -np.inf)
    lse = T.logsumexp(T.concat([cross, self_sim], axis=1), axis=1)
    positive = (cross * np.eye(B)).sum(axis=1)
    return (lse - positive).mean()


def cls_loss(logits: Tensor, labels) -> Tensor:
    """Class-balanced cross-entropy: mean over present classes of the
    per-class mean cross-entropy."""
    labels = np.asarray(labels, dtype=np.int64)
    B, C = logits.shape
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"labels must lie in [0, {C})")
    counts = np.bincount(labels, minlength=C)
    present = int((counts > 0).sum())
    weights = 1.0 / (present * counts[labels])
    onehot = np.eye(C)[labels]
    ce = T.logsumexp(logits, axis=1) - (logits * onehot).sum(axis=1)
    return (ce * weights).sum()


def forecast_loss(pred: Tensor, target, mask) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("forecast_loss: no valid ground-truth cell in the horizon")
    return T.masked_mse(pred, target, mask)


def total_loss(
    recon_sum,
    adj_sum,
    cons_sum,
    task_loss,
    weights: LossWeights,
    L: int,
    task: str,
):
    """Scale-averaged combination of the summed per-level losses.

    ``recon/L + lambda1 * adj/(L-1) + lambda2 * cons/(L-1) + lambda3 * task``;
    the task term is dropped for ``interpolate`` and ``none``.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    total = recon_sum * (1.0 / L) + adj_sum * (weights.lambda1 / (L - 1)) + cons_sum * (
        weights.lambda2 / (L - 1)
    )
    if task in ("classify", "forecast") and task_loss is not None:
        total = total + task_loss * weights.lambda3
    return total
