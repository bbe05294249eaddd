"""Coarse-to-fine scale hierarchy built by window average pooling.

Level ``l`` (1-based, ``l < L``) splits the normalized span [0, 1] into
``BASE_WINDOWS * 2**(l-1)`` equal windows; level ``L`` is the raw aligned
series. Pooled values are obs-mask-aware window means placed at window
centers; windows with no observation hold 0 and are unobserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import AlignedInstance

BASE_WINDOWS = 4
MIN_SCALES = 2
MAX_SCALES = 8
MIN_REFS = 4


@dataclass(frozen=True)
class MaskingConfig:
    ratio: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio < 1.0:
            raise ValueError(f"mask ratio must lie in [0, 1), got {self.ratio}")


@dataclass(frozen=True)
class ScaleLevel:
    times: np.ndarray
    values: np.ndarray
    obs_mask: np.ndarray
    random_mask: np.ndarray

    @property
    def input_mask(self) -> np.ndarray:
        """Cells the encoder may see: observed and not held out."""
        return self.obs_mask & ~self.random_mask


@dataclass(frozen=True)
class ScaleHierarchy:
    levels: list[ScaleLevel]
    ref_counts: list[int] = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level(self, l: int) -> ScaleLevel:
        """1-based access; level 1 is the coarsest."""
        return self.levels[l - 1]


def n_windows(l: int) -> int:
    return BASE_WINDOWS * 2 ** (l - 1)


def window_index(t: np.ndarray, n: int) -> np.ndarray:
    """Window of each normalized time among ``n`` equal windows over [0, 1]."""
    idx = np.floor(np.asarray(t, dtype=np.float64) * n).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def window_centers(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def _occupied_fraction(t: np.ndarray, n: int) -> float:
    return np.unique(window_index(t, n)).size / n


def raw_num_scales(inst: AlignedInstance, limit: int = 24) -> int:
    """Scale count before clamping.

    The first window width (a quarter of the span) is always accepted; the
    width is halved while, at the next halving, at most half of the windows
    would be empty. A window is occupied if any channel observes in it.
    """
    t = inst.normalized_grid()[inst.obs_mask.any(axis=1)]
    if t.size == 0:
        return MIN_SCALES
    accepted = 1
    n = BASE_WINDOWS
    while accepted < limit:
        nxt = 2 * n
        if 1.0 - _occupied_fraction(t, nxt) > 0.5:
            break
        accepted += 1
        n = nxt
    return accepted + 1


def choose_num_scales(inst: AlignedInstance) -> int:
    return int(np.clip(raw_num_scales(inst), MIN_SCALES, MAX_SCALES))


def dataset_num_scales(instances: Sequence[AlignedInstance]) -> int:
    """Median of per-instance scale counts (half rounded up), clamped."""
    counts = [raw_num_scales(inst) for inst in instances]
    med = float(np.median(counts))
    return int(np.clip(int(np.floor(med + 0.5)), MIN_SCALES, MAX_SCALES))


def pool_window_means(
    t: np.ndarray, values: np.ndarray, obs_mask: np.ndarray, n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Obs-mask-aware mean of ``values`` (T x D) inside ``n`` windows."""
    idx = window_index(t, n)
    D = values.shape[1]
    sums = np.zeros((n, D))
    counts = np.zeros((n, D))
    m = obs_mask.astype(np.float64)
    np.add.at(sums, idx, np.where(obs_mask, values, 0.0))
    np.add.at(counts, idx, m)
    pooled = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return pooled, counts > 0


def draw_random_mask(obs_mask: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    if ratio <= 0:
        return np.zeros_like(obs_mask, dtype=bool)
    return obs_mask & (rng.random(obs_mask.shape) < ratio)


def build_hierarchy(
    inst: AlignedInstance,
    L: int,
    mask_cfg: MaskingConfig | None = None,
    rng: np.random.Generator | None = None,
    max_refs: int | None = None,
) -> ScaleHierarchy:
    """Pool ``inst`` into ``L`` levels and draw the per-level random masks.

    ``mask_cfg=None`` (evaluation) draws no masks. Masks are drawn
    independently per level from ``rng`` (default: seeded by ``mask_cfg``).
    """
    if L < MIN_SCALES:
        raise ValueError(f"need at least {MIN_SCALES} scales, got {L}")
    if mask_cfg is not None and rng is None:
        rng = np.random.default_rng(mask_cfg.seed)
    t = inst.normalized_grid()
    levels = []
    for l in range(1, L):
        n = n_windows(l)
        pooled, occ = pool_window_means(t, inst.values, inst.obs_mask, n)
        rm = draw_random_mask(occ, mask_cfg.ratio, rng) if mask_cfg else np.zeros_like(occ)
        levels.append(ScaleLevel(window_centers(n), pooled, occ, rm))
    rm = (
        draw_random_mask(inst.obs_mask, mask_cfg.ratio, rng)
        if mask_cfg
        else np.zeros_like(inst.obs_mask)
    )
    levels.append(ScaleLevel(t, inst.values.copy(), inst.obs_mask.copy(), rm))
    refs = [ref_count(l, L, max_refs) for l in range(1, L + 1)] if max_refs else []
    return ScaleHierarchy(levels, refs)


def ref_count(l: int, L: int, max_refs: int) -> int:
    return max(MIN_REFS, max_refs // 2 ** (L - l))


def ref_points(l: int, L: int, max_refs: int) -> np.ndarray:
    """Equally spaced reference times over [0, 1] for level ``l``."""
    return np.linspace(0.0, 1.0, ref_count(l, L, max_refs))


def pooling_matrix(n_coarse: int, n_fine: int) -> np.ndarray:
    """0/1 membership of fine windows (columns) in coarse windows (rows)."""
    fine_idx = window_index(window_centers(n_fine), n_coarse)
    P = np.zeros((n_coarse, n_fine))
    P[fine_idx, np.arange(n_fine)] = 1.0
    return P


def raw_pooling_matrix(t: np.ndarray, n_coarse: int) -> np.ndarray:
    idx = window_index(t, n_coarse)
    P = np.zeros((n_coarse, t.size))
    P[idx, np.arange(t.size)] = 1.0
    return P
