"""Correlation-weighted time-attention encoder, its decoder, and the GRU
summarizer.

Shapes use ``B`` batch, ``H`` heads, ``K`` reference points, ``T`` grid
times, ``D`` channels, ``E`` embedding width (``d_r``), ``M`` model width.

The encoder attends from reference times to observed grid times separately
for every channel (each channel has its own observation mask), mixes the
per-channel results through the row-normalized correlation matrix, and
projects the concatenated heads to ``M`` features per reference point. The
decoder attends from target times back to the reference points.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_channels: int
    n_classes: int = 0
    heads: int = 4
    embed_dim: int = 16
    d_model: int = 256
    gru_hidden: int = 50
    # "kernel": per-head scaled-identity query/key projections and spread
    # time-embedding frequencies; "uniform": plain fan-in uniform init.
    init: str = "kernel"
    max_cycles: float = 4.0

    def __post_init__(self):
        if self.heads < 1 or self.embed_dim < 2:
            raise ValueError("need heads >= 1 and embed_dim >= 2")
        if self.init not in ("kernel", "uniform"):
            raise ValueError(f"unknown init scheme {self.init!r}")

    def to_dict(self) -> dict:
        return asdict(self)


Params = dict[str, Tensor]


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _embedding_params(rng, cfg: ModelConfig, prefix: str) -> dict[str, np.ndarray]:
    H, E = cfg.heads, cfg.embed_dim
    omega = _uniform(rng, (H, E), 1)
    alpha = _uniform(rng, (H, E), 1)
    omega[:, 0] = rng.uniform(0.0, 1.0, size=H)
    if cfg.init == "kernel":
        omega[:, 1:] = 2 * np.pi * rng.uniform(0.0, cfg.max_cycles, size=(H, E - 1))
        alpha[:, 1:] = rng.uniform(0.0, 2 * np.pi, size=(H, E - 1))
    if cfg.init == "kernel":
        # head h starts as a kernel of sharpness ~ 2**h
        scale = np.sqrt(2.0 ** np.arange(H) * E / max(E - 1, 1) * 2.0)
        wq = scale[:, None, None] * np.eye(E)[None] + _uniform(rng, (H, E, E), E) * 0.1
        wk = scale[:, None, None] * np.eye(E)[None] + _uniform(rng, (H, E, E), E) * 0.1
        wq[:, 0, 0] = wk[:, 0, 0] = 0.0
    else:
        wq = _uniform(rng, (H, E, E), E)
        wk = _uniform(rng, (H, E, E), E)
    return {
        f"{prefix}.omega": omega,
        f"{prefix}.alpha": alpha,
        f"{prefix}.wq": wq,
        f"{prefix}.wk": wk,
    }


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    H, D, M, G = cfg.heads, cfg.n_channels, cfg.d_model, cfg.gru_hidden
    arrays = {}
    arrays.update(_embedding_params(rng, cfg, "enc"))
    arrays["enc.out_w"] = _uniform(rng, (H * D, M), H * D)
    arrays["enc.out_b"] = _uniform(rng, (M,), H * D)
    arrays.update(_embedding_params(rng, cfg, "dec"))
    arrays["dec.read_w"] = _uniform(rng, (H, M, D), H * M)
    arrays["dec.read_b"] = _uniform(rng, (D,), H * M)
    arrays["gru.w"] = _uniform(rng, (M, 3 * G), G)
    arrays["gru.u"] = _uniform(rng, (G, 3 * G), G)
    arrays["gru.b"] = _uniform(rng, (3 * G,), G)
    if cfg.n_classes:
        arrays["cls.w"] = _uniform(rng, (G, cfg.n_classes), G)
        arrays["cls.b"] = _uniform(rng, (cfg.n_classes,), G)
    return {name: Tensor(a, requires_grad=True, name=name) for name, a in arrays.items()}


# --- time embedding ----------------------------------------------------------


def time_embed(t, omega: Tensor, alpha: Tensor) -> Tensor:
    """Embed times with ``H`` learnable functions of width ``E``.

    Component 0 is linear, ``omega[h,0] * t + alpha[h,0]``; components
    ``1..E-1`` are ``sin(omega[h,i] * t + alpha[h,i])``. ``t`` of shape
    ``(..., n)`` gives ``(..., H, n, E)``.
    """
    t = np.asarray(t, dtype=np.float64)
    tt = Tensor(t[..., None, :, None])
    lin = tt * omega.reshape(omega.shape[0], 1, omega.shape[1]) + alpha.reshape(
        alpha.shape[0], 1, alpha.shape[1]
    )
    return T.concat([lin[..., :1], lin[..., 1:].sin()], axis=-1)


def _scores(q_emb: Tensor, k_emb: Tensor, wq: Tensor, wk: Tensor) -> Tensor:
    E = wq.shape[-1]
    q = q_emb @ wq
    k = k_emb @ wk
    return (q @ k.swapaxes(-1, -2)) * (1.0 / E)


def normalized_mixing(weights: np.ndarray) -> np.ndarray:
    """Rows rescaled to sum to one."""
    w = np.asarray(weights, dtype=np.float64)
    return w / w.sum(axis=1, keepdims=True)


# --- encoder --------------------------------------------------------------------


def corr_attention(
    ref_times,
    key_times,
    values,
    obs_mask,
    corr: np.ndarray | None,
    params: Params,
) -> Tensor:
    """Encode one level.

    ``ref_times`` (K,), ``key_times`` (B, T) or a shared (T,), ``values`` and ``obs_mask``
    (B, T, D). ``corr`` is the D x D correlation weight matrix or ``None``
    for no channel mixing. Returns (B, K, M).

    Values at unobserved cells never matter. A channel with no visible cell
    attends uniformly over zeros and so contributes nothing.
    """
    values = np.asarray(values, dtype=np.float64)
    obs_mask = np.asarray(obs_mask, dtype=bool)
    B, Tn, D = values.shape
    key_times = np.asarray(key_times, dtype=np.float64)
    omega, alpha = params["enc.omega"], params["enc.alpha"]
    H = omega.shape[0]

    q_emb = time_embed(ref_times, omega, alpha)  # H, K, E
    k_emb = time_embed(key_times, omega, alpha)  # [B,] H, T, E
    scores = _scores(q_emb, k_emb, params["enc.wq"], params["enc.wk"])  # [B,] H, K, T
    K = scores.shape[-2]

    mask = obs_mask.transpose(0, 2, 1)  # B, D, T
    empty = ~mask.any(axis=-1, keepdims=True)
    mask = mask | empty
    x = np.where(obs_mask, values, 0.0).transpose(0, 2, 1)  # B, D, T

    y = T.masked_attention_pool(scores, mask[:, None], x[:, None])  # B, H, K, D

    if corr is not None:
        mix = normalized_mixing(corr)
        if not np.array_equal(mix, np.eye(D)):
            y = y @ Tensor(mix.T)
    z = y.transpose(0, 2, 1, 3).reshape(B, K, H * D)
    return z @ params["enc.out_w"] + params["enc.out_b"]


def encode(level, ref_times, corr, params: Params, *, use_random_mask: bool = True) -> Tensor:
    """Latent sequence at ``ref_times`` for a batched level.

    ``level`` exposes ``times`` (B, T), ``values`` and ``obs_mask`` (B, T, D)
    and ``random_mask``; held-out cells are removed from the keys.
    """
    mask = level.obs_mask & ~level.random_mask if use_random_mask else level.obs_mask
    return corr_attention(ref_times, level.times, level.values, mask, corr, params)


# --- decoder --------------------------------------------------------------------


def decode(latent: Tensor, ref_times, target_times, params: Params) -> Tensor:
    """Values at ``target_times`` (B, T) or shared (T,) from ``latent`` (B, K, M) -> (B, T, D).

    Per head, target times attend over the reference points; the attended
    latent features pass through a per-head linear readout and heads are
    summed. No channel mixing.
    """
    omega, alpha = params["dec.omega"], params["dec.alpha"]
    target_times = np.asarray(target_times, dtype=np.float64)
    q_emb = time_embed(target_times, omega, alpha)  # [B,] H, T, E
    k_emb = time_embed(ref_times, omega, alpha)  # H, K, E
    attn = T.softmax(_scores(q_emb, k_emb, params["dec.wq"], params["dec.wk"]))  # B, H, T, K
    Bn, K, M = latent.shape
    v = latent.reshape(Bn, 1, K, M) @ params["dec.read_w"]  # B, H, K, D
    return (attn @ v).sum(axis=1) + params["dec.read_b"]


# --- GRU ----------------------------------------------------------------------------


def gru_summarize(latent: Tensor, params: Params) -> Tensor:
    """Final hidden state of a GRU run over the K latent steps in time order.

    z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
    n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) * n + z * h; h0 = 0.
    """
    w, u, b = params["gru.w"], params["gru.u"], params["gru.b"]
    G = u.shape[0]
    B, K, _ = latent.shape
    xw = latent @ w + b  # B, K, 3G
    u_zr = u[:, : 2 * G]
    u_n = u[:, 2 * G :]
    h = Tensor(np.zeros((B, G)))
    for k in range(K):
        xk = xw[:, k, :]
        zr = (xk[:, : 2 * G] + h @ u_zr).sigmoid()
        z = zr[:, :G]
        r = zr[:, G:]
        n = (xk[:, 2 * G :] + (r * h) @ u_n).tanh()
        h = n + z * (h - n)
    return h


def classify_logits(h: Tensor, params: Params) -> Tensor:
    return h @ params["cls.w"] + params["cls.b"]
