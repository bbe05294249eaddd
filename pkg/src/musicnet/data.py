"""Irregularly sampled multivariate series: containers, CSV I/O, alignment,
synthetic generation and dataset splitting.

An instance is a list of channels, each an independent (times, values) pair.
Alignment puts every channel on the union of the instance's timestamps with
a boolean observation mask; cells without an observation hold 0.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "ChannelSeries",
    "IsmtsInstance",
    "AlignedInstance",
    "DatasetSplit",
    "ParseError",
    "ConfigError",
    "SynthSpec",
    "ClassSpec",
    "load_csv",
    "write_csv",
    "load_labels",
    "write_labels",
    "align",
    "synth_generate",
    "split",
    "NormStats",
    "fit_normalization",
    "normalize",
    "substream",
    "spectrum_features",
    "nearest_centroid_accuracy",
]


class ParseError(ValueError):
    """Malformed observation or label file."""


class ConfigError(ValueError):
    """Invalid generator or run configuration."""


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, extra)])


@dataclass(frozen=True)
class ChannelSeries:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64).reshape(-1)
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if t.shape != v.shape:
            raise ValueError(f"times and values differ in length: {t.size} vs {v.size}")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("channel times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.times.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChannelSeries):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class IsmtsInstance:
    """One sample. ``span`` optionally fixes the time window used for
    normalization; by default the observed min/max times are used."""

    channels: tuple[ChannelSeries, ...]
    label: int | None = None
    id: str = ""
    span: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if len(self.channels) < 1:
            raise ValueError("an instance needs at least one channel")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_obs(self) -> int:
        return sum(len(c) for c in self.channels)

    def time_window(self) -> tuple[float, float]:
        if self.span is not None:
            return self.span
        ts = [c.times for c in self.channels if len(c)]
        if not ts:
            raise ValueError(f"instance {self.id!r} has no observations")
        allt = np.concatenate(ts)
        return float(allt.min()), float(allt.max())


@dataclass(frozen=True)
class AlignedInstance:
    grid: np.ndarray
    values: np.ndarray
    obs_mask: np.ndarray
    label: int | None = None
    id: str = ""
    span: tuple[float, float] = (0.0, 1.0)

    @property
    def n_times(self) -> int:
        return self.grid.size

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def normalized_grid(self) -> np.ndarray:
        """Grid times mapped affinely so that ``span`` becomes [0, 1]."""
        t0, t1 = self.span
        width = t1 - t0
        if width <= 0:
            return np.zeros_like(self.grid)
        return (self.grid - t0) / width


@dataclass(frozen=True)
class DatasetSplit:
    train: list[int]
    validation: list[int]
    test: list[int]
    seed: int


# --- CSV --------------------------------------------------------------------

OBS_HEADER = ["instance_id", "channel", "time", "value"]
LABEL_HEADER = ["instance_id", "label"]


def load_csv(path, labels=None) -> list[IsmtsInstance]:
    """Read an observation file (``instance_id,channel,time,value``).

    Instances keep first-appearance order. ``labels`` may be a mapping from
    instance id to class or a path to a label file.
    """
    path = Path(path)
    rows: dict[str, dict[int, list[tuple[float, float]]]] = {}
    seen: set[tuple[str, int, float]] = set()
    max_channel = -1
    first_line: dict[int, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}:1: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in OBS_HEADER if c not in header]
        if missing:
            raise ParseError(f"{path}:1: missing column(s) {', '.join(missing)}")
        col = {name: header.index(name) for name in OBS_HEADER}
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) < len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            iid = rec[col["instance_id"]].strip()
            try:
                ch = int(rec[col["channel"]])
                t = float(rec[col["time"]])
                v = float(rec[col["value"]])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric channel, time or value") from None
            if ch < 0:
                raise ParseError(f"{path}:{lineno}: negative channel index {ch}")
            if not (math.isfinite(t) and math.isfinite(v)):
                raise ParseError(f"{path}:{lineno}: non-finite time or value")
            key = (iid, ch, t)
            if key in seen:
                raise ParseError(f"{path}:{lineno}: duplicate observation {key}")
            seen.add(key)
            rows.setdefault(iid, {}).setdefault(ch, []).append((t, v))
            first_line.setdefault(ch, lineno)
            max_channel = max(max_channel, ch)
    if not rows:
        raise ParseError(f"{path}: no observations")
    gaps = sorted(set(range(max_channel + 1)) - set(first_line))
    if gaps:
        after = min(c for c in first_line if c > gaps[0])
        raise ParseError(
            f"{path}:{first_line[after]}: non-contiguous channel indices "
            f"{sorted(first_line)} (missing {gaps})"
        )
    if labels is not None and not isinstance(labels, dict):
        labels = load_labels(labels)
    out = []
    for iid, chans in rows.items():
        series = []
        for d in range(max_channel + 1):
            obs = sorted(chans.get(d, []))
            t = np.array([o[0] for o in obs])
            v = np.array([o[1] for o in obs])
            series.append(ChannelSeries(t, v))
        label = None if labels is None else labels.get(iid)
        out.append(IsmtsInstance(tuple(series), label=label, id=iid))
    return out


def write_csv(dataset: Sequence[IsmtsInstance], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(OBS_HEADER)
        for inst in dataset:
            for d, ch in enumerate(inst.channels):
                for t, v in zip(ch.times, ch.values):
                    w.writerow([inst.id, d, repr(float(t)), repr(float(v))])


def load_labels(path) -> dict[str, int]:
    path = Path(path)
    out: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        missing = [c for c in LABEL_HEADER if c not in header]
        if missing:
            raise ParseError(f"{path}:1: missing column(s) {', '.join(missing)}")
        ci, cl = header.index("instance_id"), header.index("label")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                out[rec[ci].strip()] = int(rec[cl])
            except (ValueError, IndexError):
                raise ParseError(f"{path}:{lineno}: bad label row") from None
    return out


def write_labels(dataset: Sequence[IsmtsInstance], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_HEADER)
        for inst in dataset:
            if inst.label is not None:
                w.writerow([inst.id, inst.label])


# --- alignment ----------------------------------------------------------------


def align(inst: IsmtsInstance) -> AlignedInstance:
    """Place all channels on the sorted union of their timestamps."""
    nonempty = [c.times for c in inst.channels if len(c)]
    if not nonempty:
        raise ValueError(f"empty instance {inst.id!r}: no observations to align")
    grid = np.unique(np.concatenate(nonempty))
    D = inst.n_channels
    values = np.zeros((grid.size, D))
    mask = np.zeros((grid.size, D), dtype=bool)
    for d, ch in enumerate(inst.channels):
        if len(ch):
            rows = np.searchsorted(grid, ch.times)
            values[rows, d] = ch.values
            mask[rows, d] = True
    return AlignedInstance(grid, values, mask, inst.label, inst.id, inst.time_window())


# --- normalization ------------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def fit_normalization(dataset: Sequence[IsmtsInstance]) -> NormStats:
    """Per-channel mean and standard deviation over observed values only."""
    D = dataset[0].n_channels
    mean = np.zeros(D)
    std = np.ones(D)
    for d in range(D):
        vals = np.concatenate([inst.channels[d].values for inst in dataset])
        if vals.size:
            mean[d] = vals.mean()
            s = vals.std()
            std[d] = s if s > 1e-12 else 1.0
    return NormStats(mean, std)


def normalize(inst: IsmtsInstance, stats: NormStats) -> IsmtsInstance:
    chans = tuple(
        ChannelSeries(c.times, (c.values - stats.mean[d]) / stats.std[d])
        for d, c in enumerate(inst.channels)
    )
    return IsmtsInstance(chans, inst.label, inst.id, inst.span)


# --- synthetic data -------------------------------------------------------------


@dataclass
class ClassSpec:
    """Latent signal of one class: per channel a list of
    ``(amplitude, frequency, phase)`` sinusoids. A phase of ``None`` draws a
    uniform random phase per instance."""

    channels: list[list[tuple[float, float, float | None]]]
    weight: float = 1.0


@dataclass
class SynthSpec:
    classes: list[ClassSpec]
    n_instances: int = 64
    span: float = 100.0
    rate_range: list[tuple[float, float]] | tuple[float, float] = (0.5, 1.0)
    dropout: float | list[float] = 0.0
    noise: float = 0.05
    shared_phase: bool = False

    @property
    def n_channels(self) -> int:
        return len(self.classes[0].channels)

    def channel_rate_range(self, d: int) -> tuple[float, float]:
        rr = self.rate_range
        if isinstance(rr[0], (tuple, list)):
            return tuple(rr[d])  # type: ignore[return-value]
        return tuple(rr)  # type: ignore[return-value]

    def channel_dropout(self, d: int) -> float:
        return self.dropout[d] if isinstance(self.dropout, (list, tuple)) else self.dropout

    def validate(self) -> None:
        if not self.classes:
            raise ConfigError("generator needs at least one class")
        D = self.n_channels
        if D < 1:
            raise ConfigError("generator needs at least one channel")
        for c in self.classes:
            if len(c.channels) != D:
                raise ConfigError("all classes must define the same number of channels")
        for d in range(D):
            lo, hi = self.channel_rate_range(d)
            if lo <= 0 or hi < lo:
                raise ConfigError(f"channel {d}: sampling rate range must be positive, got {(lo, hi)}")
            p = self.channel_dropout(d)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"channel {d}: dropout must lie in [0, 1], got {p}")
        if self.noise < 0:
            raise ConfigError(f"noise sigma must be nonnegative, got {self.noise}")
        if self.span <= 0:
            raise ConfigError("span must be positive")
        if self.n_instances < 1:
            raise ConfigError("n_instances must be positive")

    def to_dict(self) -> dict:
        return {
            "classes": [{"channels": c.channels, "weight": c.weight} for c in self.classes],
            "n_instances": self.n_instances,
            "span": self.span,
            "rate_range": self.rate_range,
            "dropout": self.dropout,
            "noise": self.noise,
            "shared_phase": self.shared_phase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        classes = [
            ClassSpec(
                [[tuple(s) for s in ch] for ch in c["channels"]],
                c.get("weight", 1.0),
            )
            for c in d["classes"]
        ]
        rr = d.get("rate_range", (0.5, 1.0))
        if rr and isinstance(rr[0], (list, tuple)):
            rr = [tuple(x) for x in rr]
        else:
            rr = tuple(rr)
        return cls(
            classes=classes,
            n_instances=d.get("n_instances", 64),
            span=d.get("span", 100.0),
            rate_range=rr,
            dropout=d.get("dropout", 0.0),
            noise=d.get("noise", 0.05),
            shared_phase=d.get("shared_phase", False),
        )


def _poisson_times(rng: np.random.Generator, rate: float, span: float) -> np.ndarray:
    n = rng.poisson(rate * span)
    t = np.sort(rng.uniform(0.0, span, size=n))
    return np.unique(t)


def synth_generate(spec: SynthSpec, seed: int) -> list[IsmtsInstance]:
    """Draw a labelled dataset of noisy sinusoid mixtures.

    Each channel is observed at homogeneous Poisson times with a rate drawn
    per (instance, channel) from its range; every observation is then kept
    with probability ``1 - dropout``. Labels cycle through classes in
    proportion to their weights.
    """
    spec.validate()
    rng = substream(seed, "synth")
    weights = np.array([c.weight for c in spec.classes], dtype=np.float64)
    weights = weights / weights.sum()
    counts = np.floor(weights * spec.n_instances).astype(int)
    for i in np.argsort(-(weights * spec.n_instances - counts))[: spec.n_instances - counts.sum()]:
        counts[i] += 1
    labels = np.repeat(np.arange(len(spec.classes)), counts)
    rng.shuffle(labels)
    out = []
    for n, y in enumerate(labels):
        cls = spec.classes[int(y)]
        shared = rng.uniform(0.0, 2 * np.pi, size=max(len(ch) for ch in cls.channels) or 1)
        chans = []
        for d, comps in enumerate(cls.channels):
            lo, hi = spec.channel_rate_range(d)
            rate = rng.uniform(lo, hi)
            t = _poisson_times(rng, rate, spec.span)
            keep = rng.random(t.size) >= spec.channel_dropout(d)
            t = t[keep]
            x = np.zeros_like(t)
            for k, (amp, freq, phase) in enumerate(comps):
                if phase is None:
                    phase = shared[k] if spec.shared_phase else rng.uniform(0.0, 2 * np.pi)
                x = x + amp * np.sin(2 * np.pi * freq * t + phase)
            if spec.noise > 0:
                x = x + rng.normal(0.0, spec.noise, size=t.size)
            chans.append(ChannelSeries(t, x))
        inst = IsmtsInstance(tuple(chans), label=int(y), id=f"s{n:05d}", span=(0.0, spec.span))
        if inst.n_obs == 0:
            raise ConfigError(f"empty instance {inst.id}: every channel lost all observations")
        out.append(inst)
    return out


def spectrum_features(inst: IsmtsInstance, n_points: int = 256) -> np.ndarray:
    """Per-channel FFT magnitudes of the series linearly resampled onto
    ``n_points`` evenly spaced times across the instance window."""
    t0, t1 = inst.time_window()
    g = np.linspace(t0, t1, n_points)
    feats = []
    for ch in inst.channels:
        x = np.interp(g, ch.times, ch.values) if len(ch) else np.zeros(n_points)
        feats.append(np.abs(np.fft.rfft(x - x.mean())))
    return np.concatenate(feats)


def nearest_centroid_accuracy(
    train: Sequence[IsmtsInstance], test: Sequence[IsmtsInstance], n_points: int = 256
) -> float:
    """Test accuracy of a nearest-class-mean rule on :func:`spectrum_features`.

    A model-free check that the labels are recoverable from the samples.
    """
    xtr = np.array([spectrum_features(i, n_points) for i in train])
    ytr = np.array([i.label for i in train])
    xte = np.array([spectrum_features(i, n_points) for i in test])
    yte = np.array([i.label for i in test])
    classes = np.unique(ytr)
    cents = np.array([xtr[ytr == c].mean(axis=0) for c in classes])
    d2 = ((xte[:, None, :] - cents[None]) ** 2).sum(axis=-1)
    pred = classes[np.argmin(d2, axis=1)]
    return float((pred == yte).mean())


# --- splitting ------------------------------------------------------------------


def _alloc(n: int, ratios: Sequence[float]) -> list[int]:
    raw = [r * n for r in ratios]
    sizes = [int(math.floor(x)) for x in raw]
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def _controlled_rounding(counts: list[int], ratios: Sequence[float], totals: list[int]) -> list[list[int]]:
    """Integer table with row sums ``counts`` and column sums ``totals``,
    each cell within one of ``count * ratio``."""
    target = [[n * r for r in ratios] for n in counts]
    q = [[int(math.floor(x)) for x in row] for row in target]
    row_def = [n - sum(row) for n, row in zip(counts, q)]
    col_def = [t - sum(q[i][j] for i in range(len(q))) for j, t in enumerate(totals)]
    cells = sorted(
        ((target[i][j] - q[i][j], i, j) for i in range(len(q)) for j in range(len(ratios))),
        key=lambda c: (-c[0], c[1], c[2]),
    )
    for frac, i, j in cells:
        if frac > 0 and row_def[i] > 0 and col_def[j] > 0:
            q[i][j] += 1
            row_def[i] -= 1
            col_def[j] -= 1
    for i in range(len(q)):
        for j in range(len(ratios)):
            while row_def[i] > 0 and col_def[j] > 0:
                q[i][j] += 1
                row_def[i] -= 1
                col_def[j] -= 1
    return q


def split(
    dataset: Sequence[IsmtsInstance],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    stratify: bool | None = None,
) -> DatasetSplit:
    """Shuffle indices by ``seed`` and cut them into train/validation/test.

    Stratifies by label whenever every instance carries one, unless
    ``stratify`` is False.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    rng = substream(seed, "split")
    n = len(dataset)
    labelled = all(inst.label is not None for inst in dataset)
    if stratify is None:
        stratify = labelled
    if stratify and not labelled:
        raise ConfigError("stratified split requires labels on every instance")
    parts: list[list[int]] = [[], [], []]
    if not stratify:
        idx = rng.permutation(n)
        sizes = _alloc(n, ratios)
        a, b = sizes[0], sizes[0] + sizes[1]
        parts = [idx[:a].tolist(), idx[a:b].tolist(), idx[b:].tolist()]
    else:
        labels = np.array([inst.label for inst in dataset])
        nonzero = sum(1 for r in ratios if r > 0)
        sizes_total = _alloc(n, ratios)
        classes = np.unique(labels)
        for c in classes:
            members = np.flatnonzero(labels == c)
            if members.size < nonzero:
                raise ConfigError(
                    f"stratification: class {c} has {members.size} samples, fewer than {nonzero} splits"
                )
        quotas = _controlled_rounding([int((labels == c).sum()) for c in classes], ratios, sizes_total)
        for c, q in zip(classes, quotas):
            members = np.flatnonzero(labels == c)
            members = members[rng.permutation(members.size)]
            parts[0] += members[: q[0]].tolist()
            parts[1] += members[q[0] : q[0] + q[1]].tolist()
            parts[2] += members[q[0] + q[1] :].tolist()
    return DatasetSplit(parts[0], parts[1], parts[2], seed)
