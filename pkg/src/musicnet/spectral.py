"""Channel correlation from Lomb-Scargle periodograms compared with DTW.

Each channel's periodogram is averaged over the training instances, the
averaged spectra are compared pairwise with dynamic time warping, and the
distances are mapped to similarity weights ``exp(-d / median(d))``.
The interpolate-then-DTW comparator works on time-domain signals instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ChannelSeries, IsmtsInstance

MAX_BINS = 512
OVERSAMPLING = 5.0
IDTW_POINTS = 128
TINY = float(np.finfo(np.float64).tiny)


@dataclass(frozen=True)
class FrequencyGrid:
    f_min: float
    f_max: float
    n: int
    oversampling: float = OVERSAMPLING

    def __post_init__(self):
        if not self.f_min > 0:
            raise ValueError(f"f_min must be positive, got {self.f_min}")
        if self.f_max < self.f_min or self.n < 1:
            raise ValueError(f"invalid grid f_min={self.f_min}, f_max={self.f_max}, n={self.n}")

    @property
    def frequencies(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.n)

    @property
    def spacing(self) -> float:
        return (self.f_max - self.f_min) / (self.n - 1) if self.n > 1 else 0.0


@dataclass(frozen=True)
class Periodogram:
    grid: FrequencyGrid
    power: np.ndarray

    @property
    def peak_frequency(self) -> float:
        return float(self.grid.frequencies[np.argmax(self.power)])


@dataclass(frozen=True)
class CorrelationMatrix:
    weights: np.ndarray
    raw_distances: np.ndarray
    method: str = "lsp-dtw"

    @property
    def n_channels(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def identity(cls, D: int) -> "CorrelationMatrix":
        return cls(np.eye(D), np.zeros((D, D)), "identity")

    @classmethod
    def ones(cls, D: int) -> "CorrelationMatrix":
        return cls(np.ones((D, D)), np.zeros((D, D)), "ones")


def lomb_scargle(series: ChannelSeries, grid: FrequencyGrid) -> Periodogram | None:
    """Scargle-normalized periodogram of a mean-subtracted channel.

    Power is divided by the sample variance, so it is dimensionless. Returns
    ``None`` for channels with fewer than two points or zero variance.
    """
    t, x = series.times, series.values
    if t.size < 2:
        return None
    var = x.var(ddof=1)
    if not var > 0:
        return None
    xc = x - x.mean()
    w = 2 * np.pi * grid.frequencies[:, None]
    tau = np.arctan2(np.sin(2 * w * t).sum(axis=1), np.cos(2 * w * t).sum(axis=1))[:, None] / (2 * w)
    arg = w * (t - tau)
    c, s = np.cos(arg), np.sin(arg)
    power = 0.5 * ((xc @ c.T) ** 2 / (c * c).sum(axis=1) + (xc @ s.T) ** 2 / (s * s).sum(axis=1))
    return Periodogram(grid, power / var)


def default_grid(dataset: Sequence[IsmtsInstance]) -> FrequencyGrid:
    """Grid from the median instance span and the median over channels of
    each channel's mean sampling rate.

    ``f_min = 1/span``, ``f_max = rate/2`` (at least ``2 * f_min``) and
    ``oversampling * span * f_max`` bins, capped at ``MAX_BINS``.
    """
    if not dataset:
        raise ValueError("default_grid: empty dataset")
    spans, rates = [], []
    for inst in dataset:
        t0, t1 = inst.time_window()
        width = t1 - t0
        if width <= 0:
            continue
        spans.append(width)
        rates.append([len(c) / width for c in inst.channels])
    if not spans:
        raise ValueError("default_grid: every instance has zero span")
    span = float(np.median(spans))
    # per-channel mean rate over instances, then the median over channels
    rate = float(np.median(np.mean(rates, axis=0)))
    f_min = 1.0 / span
    f_max = max(0.5 * rate, 2.0 * f_min)
    n = int(min(MAX_BINS, max(2, round(OVERSAMPLING * span * f_max))))
    return FrequencyGrid(f_min, f_max, n)


def dtw(a, b) -> float:
    """Dynamic time warping cost with squared differences, no window.

    Cells are filled one anti-diagonal at a time; each accumulated cost is
    ``min(predecessors) + cost``, so the result equals the left-to-right sum
    along the best path.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw: sequences must be nonempty")
    n, m = a.size, b.size
    diff = a[:, None] - b[None, :]
    cost = diff * diff
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for s in range(2, n + m + 1):
        i = np.arange(max(1, s - m), min(n, s - 1) + 1)
        j = s - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = best + cost[i - 1, j - 1]
    return float(acc[n, m])


def _distances_to_weights(raw: np.ndarray, live: np.ndarray) -> np.ndarray:
    D = raw.shape[0]
    idx = np.flatnonzero(live)
    iu = np.triu_indices(idx.size, k=1)
    off = raw[np.ix_(idx, idx)][iu]
    sigma = float(np.median(off)) if off.size else 0.0
    w = np.eye(D)
    for a in range(idx.size):
        for b in range(a + 1, idx.size):
            i, j = idx[a], idx[b]
            if sigma > 0:
                # floor keeps weights strictly positive when exp underflows
                v = max(float(np.exp(-raw[i, j] / sigma)), TINY)
            else:
                v = 1.0 if raw[i, j] == 0 else 0.0
            w[i, j] = w[j, i] = v
    return w


def mean_periodograms(train: Sequence[IsmtsInstance], grid: FrequencyGrid) -> list[np.ndarray | None]:
    D = train[0].n_channels
    sums: list[np.ndarray | None] = [None] * D
    counts = [0] * D
    for inst in train:
        for d, ch in enumerate(inst.channels):
            p = lomb_scargle(ch, grid)
            if p is None:
                continue
            sums[d] = p.power.copy() if sums[d] is None else sums[d] + p.power
            counts[d] += 1
    return [None if s is None else s / c for s, c in zip(sums, counts)]


def correlation_matrix(train: Sequence[IsmtsInstance], grid: FrequencyGrid | None = None) -> CorrelationMatrix:
    """LSP-DTW channel weights from the training instances.

    Channels never having a usable periodogram keep an identity row and
    column and an infinite raw distance to every other channel.
    """
    if not train:
        raise ValueError("correlation_matrix: empty training set")
    D = train[0].n_channels
    if D < 2:
        raise ValueError(f"correlation_matrix: need at least 2 channels, got {D}")
    grid = grid or default_grid(train)
    spectra = mean_periodograms(train, grid)
    live = np.array([s is not None for s in spectra])
    raw = np.full((D, D), np.inf)
    np.fill_diagonal(raw, 0.0)
    for i in range(D):
        for j in range(i + 1, D):
            if live[i] and live[j]:
                raw[i, j] = raw[j, i] = dtw(spectra[i], spectra[j])
    return CorrelationMatrix(_distances_to_weights(raw, live), raw, "lsp-dtw")


def interpolate_channel(ch: ChannelSeries, grid: np.ndarray) -> np.ndarray | None:
    if len(ch) == 0:
        return None
    return np.interp(grid, ch.times, ch.values)


def idtw_matrix(train: Sequence[IsmtsInstance], n_points: int = IDTW_POINTS) -> CorrelationMatrix:
    """Interpolate-then-DTW comparator.

    Every channel is linearly interpolated (constant beyond its first and last
    observation) onto ``n_points`` equally spaced times over the instance
    window; pairwise DTW distances are averaged over the instances where
    both channels have data.
    """
    if not train:
        raise ValueError("idtw_matrix: empty training set")
    D = train[0].n_channels
    if D < 2:
        raise ValueError(f"idtw_matrix: need at least 2 channels, got {D}")
    sums = np.zeros((D, D))
    counts = np.zeros((D, D))
    for inst in train:
        t0, t1 = inst.time_window()
        grid = np.linspace(t0, t1, n_points)
        sig = [interpolate_channel(ch, grid) for ch in inst.channels]
        for i in range(D):
            if sig[i] is None:
                continue
            for j in range(i + 1, D):
                if sig[j] is None:
                    continue
                sums[i, j] += dtw(sig[i], sig[j])
                counts[i, j] += 1
    live = np.array([any(len(inst.channels[d]) for inst in train) for d in range(D)])
    raw = np.full((D, D), np.inf)
    np.fill_diagonal(raw, 0.0)
    for i in range(D):
        for j in range(i + 1, D):
            if counts[i, j] > 0:
                raw[i, j] = raw[j, i] = sums[i, j] / counts[i, j]
    pair_live = live & np.array([np.isfinite(np.delete(raw[d], d)).any() for d in range(D)])
    return CorrelationMatrix(_distances_to_weights(raw, pair_live), raw, "i-dtw")
