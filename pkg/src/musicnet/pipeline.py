"""Training and evaluation.

:func:`train` runs the multi-scale loop: the correlation matrix is computed
once from the training split, then every batch is pooled into ``L`` levels
with fresh random masks, encoded, summarized, decoded and scored with the
reconstruction, adjustment, contrastive and task losses.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import corrnet, losses, multiscale
from . import tensor as T
from .data import (
    AlignedInstance,
    ChannelSeries,
    ConfigError,
    DatasetSplit,
    IsmtsInstance,
    NormStats,
    SynthSpec,
    align,
    fit_normalization,
    load_csv,
    normalize,
    split,
    substream,
    synth_generate,
)
from .metrics import classification_report
from .optim import NonFiniteGradientError, OptimizerState, adamw_step, cosine_lr
from .spectral import CorrelationMatrix, correlation_matrix, idtw_matrix
from .tensor import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CORRELATIONS = ("lsp-dtw", "i-dtw", "identity", "ones")
CORR_FILES = {"lsp-dtw": "corr_lspdtw", "i-dtw": "corr_idtw"}


class DivergenceError(FloatingPointError):
    pass


class DataError(ValueError):
    pass


@dataclass
class RunConfig:
    task: str = "classify"
    observations: str | None = None
    labels: str | None = None
    synth: dict | None = None
    seed: int = 0
    # generator and split seed; defaults to ``seed``
    data_seed: int | None = None
    epochs: int = 300
    batch_size: int = 50
    base_lr: float = 1e-3
    weight_decay: float = 0.0
    mask_ratio: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    max_refs: int = 128
    n_scales: int | None = None
    observed_fraction: float = 0.5
    forecast_horizon: int = 3
    forecast_split: float = 0.75
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    correlation: str = "lsp-dtw"
    heads: int = 4
    embed_dim: int = 16
    d_model: int = 256
    gru_hidden: int = 50
    init: str = "kernel"
    max_cycles: float = 4.0

    def validate(self) -> None:
        if self.task not in losses.TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {losses.TASKS}")
        if (self.observations is None) == (self.synth is None):
            raise ConfigError("give exactly one of 'observations' (CSV path) or 'synth' (generator spec)")
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 1 and batch_size >= 2")
        if self.base_lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be nonnegative")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ConfigError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.max_refs < multiscale.MIN_REFS:
            raise ConfigError(f"max_refs must be at least {multiscale.MIN_REFS}")
        if self.n_scales is not None and not multiscale.MIN_SCALES <= self.n_scales <= multiscale.MAX_SCALES:
            raise ConfigError(f"n_scales must lie in [{multiscale.MIN_SCALES}, {multiscale.MAX_SCALES}]")
        if not 0.0 < self.observed_fraction <= 1.0:
            raise ConfigError("observed_fraction must lie in (0, 1]")
        if self.forecast_horizon < 1 or not 0.0 < self.forecast_split < 1.0:
            raise ConfigError("forecast_horizon must be >= 1 and forecast_split in (0, 1)")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("split_ratios must be three numbers summing to 1")
        if self.correlation not in CORRELATIONS:
            raise ConfigError(f"unknown correlation {self.correlation!r}; expected one of {CORRELATIONS}")
        if self.task == "classify" and self.observations is not None and self.labels is None:
            raise ConfigError("classification needs a label file")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if "split_ratios" in d:
            d["split_ratios"] = tuple(d["split_ratios"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw)

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def model_config(self, n_channels: int, n_classes: int) -> corrnet.ModelConfig:
        return corrnet.ModelConfig(
            n_channels=n_channels,
            n_classes=n_classes,
            heads=self.heads,
            embed_dim=self.embed_dim,
            d_model=self.d_model,
            gru_hidden=self.gru_hidden,
            init=self.init,
            max_cycles=self.max_cycles,
        )


# --- data preparation ----------------------------------------------------------


@dataclass
class PreparedData:
    raw: list[IsmtsInstance]
    data: list[IsmtsInstance]
    split: DatasetSplit
    stats: NormStats

    def subset(self, which: str) -> list[IsmtsInstance]:
        return [self.data[i] for i in getattr(self.split, which)]

    @property
    def n_channels(self) -> int:
        return self.data[0].n_channels

    @property
    def n_classes(self) -> int:
        labels = [inst.label for inst in self.data if inst.label is not None]
        return int(max(labels)) + 1 if labels else 0


def load_dataset(config: RunConfig) -> list[IsmtsInstance]:
    if config.synth is not None:
        try:
            spec = SynthSpec.from_dict(config.synth)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad generator spec: {exc}") from None
        return synth_generate(spec, config.effective_data_seed)
    return load_csv(config.observations, labels=config.labels)


def prepare_data(config: RunConfig, dataset: Sequence[IsmtsInstance] | None = None) -> PreparedData:
    raw = list(dataset) if dataset is not None else load_dataset(config)
    if not raw:
        raise DataError("dataset is empty")
    if config.task == "classify" and any(inst.label is None for inst in raw):
        raise DataError("classification needs a label for every instance")
    stratify = config.task == "classify"
    sp = split(raw, config.split_ratios, config.effective_data_seed, stratify=stratify)
    stats = fit_normalization([raw[i] for i in sp.train])
    data = [normalize(inst, stats) for inst in raw]
    return PreparedData(raw, data, sp, stats)


def build_correlation(kind: str, train: Sequence[IsmtsInstance]) -> CorrelationMatrix:
    D = train[0].n_channels
    if kind == "identity" or D < 2:
        return CorrelationMatrix.identity(D)
    if kind == "ones":
        return CorrelationMatrix.ones(D)
    if kind == "i-dtw":
        return idtw_matrix(train)
    return correlation_matrix(train)


def corr_hash(corr: CorrelationMatrix) -> str:
    return hashlib.sha256(corr.weights.tobytes()).hexdigest()[:16]


# --- forecasting views -----------------------------------------------------------


@dataclass(frozen=True)
class ForecastView:
    history: AlignedInstance
    target_times: np.ndarray  # normalized with the history's span
    target_values: np.ndarray  # horizon x D
    target_mask: np.ndarray


def forecast_view(inst: IsmtsInstance, split_frac: float, horizon: int) -> ForecastView | None:
    """History before the split time and the next ``horizon`` grid times.

    Returns ``None`` when the history is empty or no target cell exists.
    """
    t0, t1 = inst.time_window()
    cut = t0 + split_frac * (t1 - t0)
    hist = []
    for ch in inst.channels:
        keep = ch.times < cut
        hist.append(ChannelSeries(ch.times[keep], ch.values[keep]))
    past = IsmtsInstance(tuple(hist), inst.label, inst.id, (t0, cut))
    if past.n_obs == 0:
        return None
    full = align(inst)
    rows = np.flatnonzero(full.grid >= cut)[:horizon]
    if rows.size == 0:
        return None
    tt = (full.grid[rows] - t0) / (cut - t0)
    return ForecastView(align(past), tt, full.values[rows], full.obs_mask[rows])


# --- batching ----------------------------------------------------------------------


@dataclass
class LevelBatch:
    times: np.ndarray  # B x T, or T when shared by the whole batch (normalized)
    values: np.ndarray  # B x T x D
    obs_mask: np.ndarray
    random_mask: np.ndarray


@dataclass
class HierarchyBatch:
    levels: list[LevelBatch]
    # pools[l] maps level l+1 (finer) onto level l (coarser), 0-based l
    pools: list[np.ndarray]
    fine_masks: list[np.ndarray | None]


def _pad_level(grids, values, obs, rmask) -> LevelBatch:
    B = len(grids)
    Tm = max(g.size for g in grids)
    D = values[0].shape[1]
    times = np.zeros((B, Tm))
    vals = np.zeros((B, Tm, D))
    om = np.zeros((B, Tm, D), dtype=bool)
    rm = np.zeros((B, Tm, D), dtype=bool)
    for b in range(B):
        n = grids[b].size
        times[b, :n] = grids[b]
        times[b, n:] = grids[b][-1] if n else 0.0
        vals[b, :n] = values[b]
        om[b, :n] = obs[b]
        rm[b, :n] = rmask[b]
    return LevelBatch(times, vals, om, rm)


def raw_level_batch(insts: Sequence[AlignedInstance], input_masks=None) -> LevelBatch:
    """Level ``L`` only; ``input_masks`` replaces each observation mask."""
    masks = input_masks if input_masks is not None else [a.obs_mask for a in insts]
    return _pad_level(
        [a.normalized_grid() for a in insts],
        [a.values for a in insts],
        masks,
        [np.zeros_like(m) for m in masks],
    )


def hierarchy_batch(
    insts: Sequence[AlignedInstance],
    L: int,
    mask_ratio: float,
    rngs: Sequence[np.random.Generator] | None,
) -> HierarchyBatch:
    cfg = multiscale.MaskingConfig(mask_ratio) if mask_ratio > 0 and rngs is not None else None
    hs = [
        multiscale.build_hierarchy(a, L, cfg, rngs[i] if cfg else None) for i, a in enumerate(insts)
    ]
    levels = []
    for l in range(1, L + 1):
        lv = [h.level(l) for h in hs]
        if l < L:
            levels.append(
                LevelBatch(
                    lv[0].times,
                    np.stack([x.values for x in lv]),
                    np.stack([x.obs_mask for x in lv]),
                    np.stack([x.random_mask for x in lv]),
                )
            )
        else:
            levels.append(
                _pad_level(
                    [x.times for x in lv],
                    [x.values for x in lv],
                    [x.obs_mask for x in lv],
                    [x.random_mask for x in lv],
                )
            )
    pools: list[np.ndarray] = []
    fine_masks: list[np.ndarray | None] = []
    for l in range(1, L):
        n_c = multiscale.n_windows(l)
        if l + 1 < L:
            pools.append(multiscale.pooling_matrix(n_c, multiscale.n_windows(l + 1)))
            fine_masks.append(None)
        else:
            raw = levels[-1]
            B, Tm = raw.times.shape
            P = np.zeros((B, n_c, Tm))
            for b, a in enumerate(insts):
                n = a.n_times
                P[b, :, :n] = multiscale.raw_pooling_matrix(raw.times[b, :n], n_c)
            pools.append(P)
            fine_masks.append(raw.obs_mask)
    return HierarchyBatch(levels, pools, fine_masks)


# --- model --------------------------------------------------------------------------


class MuSiCNet:
    """Parameters plus the fixed correlation matrix, scale count and
    reference-point budget."""

    def __init__(
        self,
        cfg: corrnet.ModelConfig,
        corr: CorrelationMatrix,
        n_scales: int,
        max_refs: int,
        params: corrnet.Params | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.cfg = cfg
        self.corr = corr
        self.L = n_scales
        self.max_refs = max_refs
        if params is None:
            params = corrnet.init_params(cfg, rng if rng is not None else np.random.default_rng(0))
        self.params = params

    def ref_times(self, l: int) -> np.ndarray:
        return multiscale.ref_points(l, self.L, self.max_refs)

    @property
    def mixing(self) -> np.ndarray | None:
        return None if self.corr.method == "identity" else self.corr.weights

    def encode_level(self, level: LevelBatch, l: int, use_random_mask: bool = True) -> Tensor:
        return corrnet.encode(level, self.ref_times(l), self.mixing, self.params, use_random_mask=use_random_mask)

    def forward(self, batch: HierarchyBatch):
        """Per level: latent, GRU summary and reconstruction at the level grid."""
        out = []
        for l, level in enumerate(batch.levels, start=1):
            r = self.encode_level(level, l)
            h = corrnet.gru_summarize(r, self.params)
            xhat = corrnet.decode(r, self.ref_times(l), level.times, self.params)
            out.append((r, h, xhat))
        return out

    def losses(
        self,
        batch: HierarchyBatch,
        weights: losses.LossWeights,
        task: str,
        labels=None,
        forecast: tuple | None = None,
    ):
        """Total loss and its parts for one batch.

        ``forecast`` is ``(target_times, target_values, target_mask)``,
        batched and padded.
        """
        outs = self.forward(batch)
        L = self.L
        zero = Tensor(0.0)
        recon = zero
        for level, (_, _, xhat) in zip(batch.levels, outs):
            if level.random_mask.any():
                recon = recon + T.masked_mse(xhat, level.values, level.random_mask)
        adj, cons = zero, zero
        B = batch.levels[0].values.shape[0]
        for l in range(1, L):
            coarse, fine = outs[l - 1], outs[l]
            cmask = batch.levels[l - 1].obs_mask
            if weights.lambda1 and cmask.any():
                adj = adj + losses.adjust_loss(
                    fine[2], coarse[2], cmask, batch.pools[l - 1], batch.fine_masks[l - 1]
                )
            if weights.lambda2 and B >= 2:
                cons = cons + losses.contrastive_loss(fine[1], coarse[1])
        task_loss = None
        if task == "classify":
            task_loss = losses.cls_loss(corrnet.classify_logits(outs[-1][1], self.params), labels)
        elif task == "forecast":
            tt, tv, tm = forecast
            pred = corrnet.decode(outs[-1][0], self.ref_times(L), tt, self.params)
            task_loss = losses.forecast_loss(pred, tv, tm)
        total = losses.total_loss(recon, adj, cons, task_loss, weights, L, task)
        parts = {
            "recon": recon.item(),
            "adj": adj.item(),
            "cons": cons.item(),
            "task": task_loss.item() if task_loss is not None else 0.0,
        }
        return total, parts

    # inference helpers

    def latent(self, insts: Sequence[AlignedInstance], input_masks=None) -> Tensor:
        return self.encode_level(raw_level_batch(insts, input_masks), self.L, use_random_mask=False)

    def predict_proba(self, insts: Sequence[AlignedInstance], batch_size: int = 64) -> np.ndarray:
        out = []
        for s in range(0, len(insts), batch_size):
            chunk = insts[s : s + batch_size]
            h = corrnet.gru_summarize(self.latent(chunk), self.params)
            logits = corrnet.classify_logits(h, self.params).data
            e = np.exp(logits - logits.max(axis=1, keepdims=True))
            out.append(e / e.sum(axis=1, keepdims=True))
        return np.concatenate(out)

    def reconstruct(self, insts: Sequence[AlignedInstance], input_masks, query_times) -> list[np.ndarray]:
        """Decoded values at each instance's ``query_times`` (normalized)."""
        r = self.latent(insts, input_masks)
        n = [q.size for q in query_times]
        Q = np.zeros((len(insts), max(n)))
        for b, q in enumerate(query_times):
            Q[b, : q.size] = q
            Q[b, q.size :] = q[-1] if q.size else 0.0
        pred = corrnet.decode(r, self.ref_times(self.L), Q, self.params).data
        return [pred[b, : n[b]] for b in range(len(insts))]

    # persistence

    def save(self, path, meta: dict | None = None) -> None:
        header = {
            "version": CHECKPOINT_VERSION,
            "model": self.cfg.to_dict(),
            "n_scales": self.L,
            "max_refs": self.max_refs,
            "corr_method": self.corr.method,
            "meta": meta or {},
        }
        arrays = {f"param/{k}": v.data for k, v in self.params.items()}
        arrays["corr/weights"] = self.corr.weights
        arrays["corr/raw_distances"] = self.corr.raw_distances
        arrays["header"] = np.array(json.dumps(header, sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> tuple["MuSiCNet", dict]:
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {header.get('version')}")
            params = {
                k[len("param/") :]: Tensor(z[k], requires_grad=True, name=k[len("param/") :])
                for k in z.files
                if k.startswith("param/")
            }
            corr = CorrelationMatrix(z["corr/weights"], z["corr/raw_distances"], header["corr_method"])
        cfg = corrnet.ModelConfig(**header["model"])
        return cls(cfg, corr, header["n_scales"], header["max_refs"], params), header["meta"]


# --- training ------------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    n_scales: int = 0
    corr_method: str = ""
    corr_hash: str = ""
    corr_path: str | None = None
    normalization: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i : i + size] for i in range(0, order.size, size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def _forecast_arrays(views: Sequence[ForecastView]):
    B = len(views)
    H = max(v.target_times.size for v in views)
    D = views[0].target_values.shape[1]
    tt = np.zeros((B, H))
    tv = np.zeros((B, H, D))
    tm = np.zeros((B, H, D), dtype=bool)
    for b, v in enumerate(views):
        n = v.target_times.size
        tt[b, :n] = v.target_times
        tt[b, n:] = v.target_times[-1]
        tv[b, :n] = v.target_values
        tm[b, :n] = v.target_mask
    return tt, tv, tm


@dataclass
class TrainState:
    model: MuSiCNet
    prepared: PreparedData
    report: RunReport


def train(
    config: RunConfig,
    out_dir=None,
    dataset: Sequence[IsmtsInstance] | None = None,
    corr: CorrelationMatrix | None = None,
    evaluate: bool = True,
) -> TrainState:
    """Fit a model per ``config``; optionally write artifacts to ``out_dir``."""
    config.validate()
    started = time.perf_counter()
    prepared = prepare_data(config, dataset)
    train_set = prepared.subset("train")
    if not train_set:
        raise DataError("training split is empty")

    if config.task == "forecast":
        views = [forecast_view(inst, config.forecast_split, config.forecast_horizon) for inst in train_set]
        keep = [i for i, v in enumerate(views) if v is not None]
        if not keep:
            raise DataError("no training instance has both history and forecast targets")
        views = [views[i] for i in keep]
        train_aligned = [v.history for v in views]
        labels = None
    else:
        views = None
        empty = [inst.id for inst in train_set if inst.n_obs == 0]
        if empty:
            raise DataError(f"empty training instance(s): {empty[:5]}")
        train_aligned = [align(inst) for inst in train_set]
        labels = np.array([inst.label for inst in train_set]) if config.task == "classify" else None

    if corr is None:
        corr = build_correlation(config.correlation, train_set)
    c_hash = corr_hash(corr)
    L = config.n_scales or multiscale.dataset_num_scales(train_aligned)
    n_classes = prepared.n_classes if config.task == "classify" else 0
    if config.task == "classify" and n_classes < 2:
        raise DataError("classification needs at least two classes")
    mcfg = config.model_config(prepared.n_channels, n_classes)
    model = MuSiCNet(mcfg, corr, L, config.max_refs, rng=substream(config.seed, "init"))
    weights = losses.LossWeights(config.lambda1, config.lambda2, config.lambda3)
    state = OptimizerState(base_lr=config.base_lr, total_epochs=config.epochs)
    report = RunReport(
        config=config.to_dict(),
        n_scales=L,
        corr_method=corr.method,
        corr_hash=c_hash,
        normalization=prepared.stats.to_dict(),
    )
    log.info("training: %d instances, L=%d, correlation=%s", len(train_aligned), L, corr.method)

    n = len(train_aligned)
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.base_lr)
        order = substream(config.seed, "order", epoch).permutation(n)
        sums = {"total": 0.0, "recon": 0.0, "adj": 0.0, "cons": 0.0, "task": 0.0}
        for step, idx in enumerate(_batches(order, config.batch_size)):
            insts = [train_aligned[i] for i in idx]
            rngs = [substream(config.seed, "masks", epoch, int(i)) for i in idx]
            batch = hierarchy_batch(insts, L, config.mask_ratio, rngs)
            fc = _forecast_arrays([views[i] for i in idx]) if views is not None else None
            with T.Tape() as tape:
                total, parts = model.losses(
                    batch, weights, config.task, labels[idx] if labels is not None else None, fc
                )
            if not math.isfinite(total.item()):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}, step {step}")
            recomputed = losses.total_loss(
                parts["recon"], parts["adj"], parts["cons"], parts["task"], weights, L, config.task
            )
            if not math.isclose(recomputed, total.item(), rel_tol=1e-9, abs_tol=1e-12):
                raise RuntimeError(f"loss components do not add up at epoch {epoch + 1}, step {step}")
            T.backward(total, tape)
            grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
            try:
                adamw_step(model.params, grads, state, lr=lr, weight_decay=config.weight_decay)
            except NonFiniteGradientError as exc:
                raise DivergenceError(f"epoch {epoch + 1}, step {step}: {exc}") from None
            for p in model.params.values():
                p.grad = None
            w = len(idx) / n
            sums["total"] += total.item() * w
            for k, v in parts.items():
                sums[k] += v * w
        row = {"epoch": epoch + 1, "lr": lr, **sums, "recon_scaled": sums["recon"] / L}
        report.epochs.append(row)
        log.debug("epoch %d: %s", epoch + 1, row)

    if corr_hash(model.corr) != c_hash:
        raise RuntimeError("correlation matrix changed during training")
    if evaluate:
        test = prepared.subset("test") or prepared.subset("validation")
        report.metrics = evaluate_task(model, config, test)
    report.wall_clock = time.perf_counter() - started
    if out_dir is not None:
        write_artifacts(Path(out_dir), model, prepared, report, config)
    return TrainState(model, prepared, report)


# --- evaluation ------------------------------------------------------------------------


def evaluate_task(model: MuSiCNet, config: RunConfig, instances: Sequence[IsmtsInstance]) -> dict:
    if config.task == "classify":
        return evaluate_classification(model, instances)
    if config.task == "interpolate":
        return evaluate_interpolation(model, instances, config.observed_fraction, config.seed)
    if config.task == "forecast":
        return evaluate_forecast(model, instances, config.forecast_horizon, config.forecast_split)
    return {}


def evaluate_classification(model: MuSiCNet, instances: Sequence[IsmtsInstance]) -> dict:
    """AUROC, AUPRC, accuracy and macro precision/recall/F1 on ``instances``."""
    insts = [inst for inst in instances if inst.n_obs > 0]
    if not insts:
        raise DataError("no evaluable instance")
    probs = model.predict_proba([align(inst) for inst in insts])
    labels = np.array([inst.label for inst in insts])
    out = classification_report(labels, probs)
    out["n"] = len(insts)
    return out


def reveal_split(aligned: AlignedInstance, fraction: float, rng: np.random.Generator):
    """Partition the observed cells into revealed and hidden masks."""
    cells = np.argwhere(aligned.obs_mask)
    n_reveal = int(round(fraction * len(cells)))
    n_reveal = min(max(n_reveal, 1), len(cells))
    chosen = rng.permutation(len(cells))[:n_reveal]
    revealed = np.zeros_like(aligned.obs_mask)
    revealed[tuple(cells[chosen].T)] = True
    return revealed, aligned.obs_mask & ~revealed


def evaluate_interpolation(
    model: MuSiCNet,
    instances: Sequence[IsmtsInstance],
    observed_fraction: float,
    seed: int = 0,
    batch_size: int = 64,
) -> dict:
    """MSE at hidden observations when only ``observed_fraction`` is revealed,
    with the per-channel revealed-mean predictor as a baseline."""
    usable, skipped = [], 0
    for i, inst in enumerate(instances):
        if inst.n_obs < 2:
            skipped += 1
            continue
        a = align(inst)
        rev, hid = reveal_split(a, observed_fraction, substream(seed, "reveal", i))
        usable.append((a, rev, hid))
    if not any(h.any() for _, _, h in usable):
        raise DataError("no hidden targets: every observation is revealed")
    se = base_se = 0.0
    count = 0
    for s in range(0, len(usable), batch_size):
        chunk = usable[s : s + batch_size]
        preds = model.reconstruct(
            [a for a, _, _ in chunk], [r for _, r, _ in chunk], [a.normalized_grid() for a, _, _ in chunk]
        )
        for (a, rev, hid), pred in zip(chunk, preds):
            err = (pred - a.values)[hid]
            se += float((err**2).sum())
            cnt = rev.sum(axis=0)
            mean = np.divide(
                np.where(rev, a.values, 0.0).sum(axis=0), cnt, out=np.zeros(a.n_channels), where=cnt > 0
            )
            base = (np.broadcast_to(mean, a.values.shape) - a.values)[hid]
            base_se += float((base**2).sum())
            count += int(hid.sum())
    return {
        "mse": se / count,
        "baseline_mse": base_se / count,
        "n_hidden": count,
        "n": len(usable),
        "skipped": skipped,
        "observed_fraction": observed_fraction,
    }


def evaluate_forecast(
    model: MuSiCNet,
    instances: Sequence[IsmtsInstance],
    horizon: int,
    split_frac: float,
    batch_size: int = 64,
) -> dict:
    """MSE over valid cells of the next ``horizon`` grid times after the split,
    with a last-observed-value baseline."""
    views, skipped = [], 0
    for inst in instances:
        v = forecast_view(inst, split_frac, horizon)
        if v is None:
            skipped += 1
        else:
            views.append(v)
    if not views:
        raise DataError("no instance has forecast targets")
    se = base_se = 0.0
    count = 0
    for s in range(0, len(views), batch_size):
        chunk = views[s : s + batch_size]
        hist = [v.history for v in chunk]
        preds = model.reconstruct(hist, [h.obs_mask for h in hist], [v.target_times for v in chunk])
        for v, pred in zip(chunk, preds):
            m = v.target_mask
            se += float(((pred - v.target_values)[m] ** 2).sum())
            last = np.zeros(v.history.n_channels)
            for d in range(v.history.n_channels):
                rows = np.flatnonzero(v.history.obs_mask[:, d])
                if rows.size:
                    last[d] = v.history.values[rows[-1], d]
            base_se += float(((np.broadcast_to(last, m.shape) - v.target_values)[m] ** 2).sum())
            count += int(m.sum())
    return {
        "mse": se / count,
        "baseline_mse": base_se / count,
        "n_targets": count,
        "n": len(views),
        "skipped": skipped,
        "horizon": horizon,
    }


# --- artifacts ---------------------------------------------------------------------------


def write_matrix_csv(matrix: np.ndarray, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        D = matrix.shape[1]
        w.writerow([""] + [f"ch{d}" for d in range(D)])
        for i, row in enumerate(matrix):
            w.writerow([f"ch{i}"] + [repr(float(x)) for x in row])


def read_matrix_csv(path) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]])


def write_losses_csv(rows: Sequence[dict], path) -> None:
    cols = ["epoch", "lr", "total", "recon", "adj", "cons", "task", "recon_scaled"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in cols})


def write_artifacts(out: Path, model: MuSiCNet, prepared: PreparedData, report: RunReport, config: RunConfig):
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.npz"
    model.save(
        ckpt,
        {"config": config.to_dict(), "config_hash": config.hash(), "normalization": prepared.stats.to_dict()},
    )
    report.checkpoint = str(ckpt)
    stem = CORR_FILES.get(model.corr.method, f"corr_{model.corr.method}")
    corr_path = out / f"{stem}.csv"
    write_matrix_csv(model.corr.weights, corr_path)
    write_matrix_csv(model.corr.raw_distances, out / f"{stem}_distances.csv")
    report.corr_path = str(corr_path)
    write_losses_csv(report.epochs, out / "losses.csv")
    (out / "report.json").write_text(
        json.dumps(json_safe(report.to_dict()), indent=2, default=_json_default, allow_nan=False)
    )


def json_safe(x):
    """Undefined metrics (NaN) are written as JSON null."""
    if isinstance(x, dict):
        return {k: json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [json_safe(v) for v in x]
    if isinstance(x, (float, np.floating)) and math.isnan(x):
        return None
    return x


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def corr_dump(config: RunConfig, out_dir, dataset: Sequence[IsmtsInstance] | None = None) -> dict:
    """Write LSP-DTW and I-DTW weights and raw distances for the training split."""
    prepared = prepare_data(config, dataset)
    train_set = prepared.subset("train")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = {}
    for cm in (correlation_matrix(train_set), idtw_matrix(train_set)):
        stem = CORR_FILES[cm.method]
        write_matrix_csv(cm.weights, out / f"{stem}.csv")
        write_matrix_csv(cm.raw_distances, out / f"{stem}_distances.csv")
        result[cm.method] = cm
    return result


def evaluate_checkpoint(checkpoint, config: RunConfig | None = None, which: str = "test") -> dict:
    """Re-create the run's split from the stored config and evaluate."""
    model, meta = MuSiCNet.load(checkpoint)
    config = config or RunConfig.from_dict(meta["config"])
    raw = load_dataset(config)
    sp = split(raw, config.split_ratios, config.effective_data_seed, stratify=config.task == "classify")
    stats = NormStats.from_dict(meta["normalization"])
    data = [normalize(inst, stats) for inst in raw]
    insts = [data[i] for i in getattr(sp, which)]
    return evaluate_task(model, config, insts)
