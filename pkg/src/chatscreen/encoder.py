"""Character-level sequence encoder with analytic gradients.

Architecture: embedding -> 3 stacked recurrent layers (input/forget/output
gates, tanh candidate and output squashing) -> batch norm -> dropout ->
ReLU-activated dense projection to 64 dimensions. All 24 time steps are
processed, padding included: uniform treatment of padding is what keeps the
model from reading sequence length off the pad boundary.

Parameters are stored as float32 (matching the on-disk format bit for bit);
forward and backward compute in float64 so finite-difference gradient checks
are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .chardomain import CharSeq
from .tensorio import (
    ChecksumError,
    VersionMismatchError,
    read_container,
    write_container,
)

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "ForwardCache",
    "ShapeError",
    "NonFiniteError",
    "StaleCacheError",
    "VersionMismatchError",
    "ChecksumError",
    "init_params",
    "forward",
    "backward",
    "update_running_stats",
    "save_params",
    "load_params",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ShapeError(ValueError):
    """Batch does not match the configured sequence length / dimensions."""


class NonFiniteError(FloatingPointError):
    """An activation overflowed to inf/nan."""


class StaleCacheError(RuntimeError):
    """backward() was handed a cache from a different forward pass."""


@dataclass(frozen=True)
class EncoderConfig:
    alphabet_size: int = 31
    embed_dim: int = 32
    hidden_dim: int = 128
    num_layers: int = 3
    proj_dim: int = 64
    dropout_rate: float = 0.2
    seq_len: int = 24

    def __post_init__(self) -> None:
        if self.num_layers != 3:
            raise ValueError("encoder is fixed at 3 recurrent layers")
        if self.proj_dim != 64:
            raise ValueError("projection dimension is fixed at 64")
        if min(self.alphabet_size, self.embed_dim, self.hidden_dim, self.seq_len) < 1:
            raise ValueError("all dimensions must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


# bn_mean / bn_var are running statistics, updated by momentum, never by the optimizer
NON_TRAINABLE = frozenset({"bn_mean", "bn_var"})


def tensor_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {"embed": (cfg.alphabet_size, cfg.embed_dim)}
    for layer in range(1, cfg.num_layers + 1):
        in_dim = cfg.embed_dim if layer == 1 else cfg.hidden_dim
        shapes[f"l{layer}_wx"] = (in_dim, 4 * cfg.hidden_dim)
        shapes[f"l{layer}_wh"] = (cfg.hidden_dim, 4 * cfg.hidden_dim)
        shapes[f"l{layer}_b"] = (4 * cfg.hidden_dim,)
    shapes["bn_gamma"] = (cfg.hidden_dim,)
    shapes["bn_beta"] = (cfg.hidden_dim,)
    shapes["bn_mean"] = (cfg.hidden_dim,)
    shapes["bn_var"] = (cfg.hidden_dim,)
    shapes["proj_w"] = (cfg.hidden_dim, cfg.proj_dim)
    shapes["proj_b"] = (cfg.proj_dim,)
    return shapes


def param_count(cfg: EncoderConfig) -> int:
    """Closed-form tensor element count (running statistics included)."""
    e, h, p = cfg.embed_dim, cfg.hidden_dim, cfg.proj_dim
    embed = cfg.alphabet_size * e
    lstm = (e * 4 * h + h * 4 * h + 4 * h) + 2 * (h * 4 * h + h * 4 * h + 4 * h)
    bn = 4 * h
    proj = h * p + p
    return embed + lstm + bn + proj


@dataclass
class EncoderParams:
    """All tensors of the encoder, keyed by canonical name, stored float32."""

    config: EncoderConfig
    tensors: dict[str, np.ndarray]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            config=self.config,
            tensors={k: v.copy() for k, v in self.tensors.items()},
        )

    def count(self) -> int:
        return sum(int(v.size) for v in self.tensors.values())

    def equals(self, other: "EncoderParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self.tensors[k], other.tensors[k]) for k in self.tensors
        )


def init_params(cfg: EncoderConfig, seed: int | None = None) -> EncoderParams:
    """Uniform +-sqrt(6/(fan_in+fan_out)) init; forget-gate bias starts at 1."""
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in tensor_shapes(cfg).items():
        if name in ("bn_gamma",):
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name in ("bn_beta", "bn_mean"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        elif name == "bn_var":
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif name.endswith("_b"):
            bias = np.zeros(shape, dtype=np.float32)
            if name.startswith("l"):
                h = cfg.hidden_dim
                bias[h : 2 * h] = 1.0  # forget gate
            tensors[name] = bias
        else:
            fan_in, fan_out = shape[0], shape[-1]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return EncoderParams(config=cfg, tensors=tensors)


@dataclass
class ForwardCache:
    """Activations of one train-mode forward pass, consumed by backward()."""

    ids: np.ndarray
    layer_inputs: list[np.ndarray]  # per layer: (B, T, in_dim)
    gates: list[dict[str, np.ndarray]]  # per layer: i, f, g, o, c, tc, h as (B, T, H)
    y: np.ndarray  # (B, H) final hidden state
    bn_mean: np.ndarray
    bn_var: np.ndarray
    bn_inv_std: np.ndarray
    bn_yhat: np.ndarray
    dropout_mask: np.ndarray | None
    pre_proj: np.ndarray  # (B, proj_dim) pre-ReLU


def _as_id_matrix(batch: Sequence[CharSeq] | np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        ids = batch
    else:
        if len(batch) == 0:
            raise ShapeError("batch must be non-empty")
        ids = np.array([seq.ids for seq in batch], dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != cfg.seq_len or ids.shape[0] == 0:
        raise ShapeError(f"expected (B, {cfg.seq_len}) id matrix, got {ids.shape}")
    if ids.min() < 0 or ids.max() >= cfg.alphabet_size:
        raise ShapeError("character id outside the alphabet")
    return ids


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _run_layer(
    x: np.ndarray, wx: np.ndarray, wh: np.ndarray, b: np.ndarray, hidden: int
) -> dict[str, np.ndarray]:
    batch, steps, _ = x.shape
    pre = x.reshape(batch * steps, -1) @ wx
    pre = pre.reshape(batch, steps, 4 * hidden) + b
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    out = {
        key: np.empty((batch, steps, hidden)) for key in ("i", "f", "g", "o", "c", "tc", "h")
    }
    for t in range(steps):
        z = pre[:, t] + h @ wh
        i = _sigmoid(z[:, :hidden])
        f = _sigmoid(z[:, hidden : 2 * hidden])
        g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = _sigmoid(z[:, 3 * hidden :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        out["i"][:, t] = i
        out["f"][:, t] = f
        out["g"][:, t] = g
        out["o"][:, t] = o
        out["c"][:, t] = c
        out["tc"][:, t] = tc
        out["h"][:, t] = h
    return out


def forward(
    batch: Sequence[CharSeq] | np.ndarray,
    params: EncoderParams,
    mode: str,
    rng: np.random.Generator | None = None,
    return_cache: bool = False,
):
    """Embed a batch of fixed-length sequences to (B, 64).

    mode "train" uses batch statistics for the norm layer and applies
    dropout when an rng is supplied (pass rng=None to get the train-statistics
    path without dropout, which is how validation loss is measured).
    mode "infer" uses running statistics and no dropout: deterministic and
    independent of batch composition.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    cfg = params.config
    ids = _as_id_matrix(batch, cfg)
    t = {k: v.astype(np.float64) for k, v in params.tensors.items()}

    x = t["embed"][ids]  # (B, T, E)
    layer_inputs: list[np.ndarray] = []
    gates: list[dict[str, np.ndarray]] = []
    for layer in range(1, cfg.num_layers + 1):
        layer_inputs.append(x)
        acts = _run_layer(x, t[f"l{layer}_wx"], t[f"l{layer}_wh"], t[f"l{layer}_b"], cfg.hidden_dim)
        gates.append(acts)
        x = acts["h"]
    y = x[:, -1]  # hidden state of the top layer at the final step

    if mode == "train":
        mean = y.mean(axis=0)
        var = y.var(axis=0)
    else:
        mean = t["bn_mean"]
        var = t["bn_var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    yhat = (y - mean) * inv_std
    bn_out = t["bn_gamma"] * yhat + t["bn_beta"]

    mask: np.ndarray | None = None
    if mode == "train" and cfg.dropout_rate > 0.0 and rng is not None:
        keep = 1.0 - cfg.dropout_rate
        mask = (rng.random(bn_out.shape) < keep).astype(np.float64) / keep
        bn_out = bn_out * mask

    pre_proj = bn_out @ t["proj_w"] + t["proj_b"]
    out = np.maximum(pre_proj, 0.0)
    if not np.isfinite(out).all():
        raise NonFiniteError("non-finite encoder output")

    if not return_cache:
        return out
    cache = ForwardCache(
        ids=ids,
        layer_inputs=layer_inputs,
        gates=gates,
        y=y,
        bn_mean=mean,
        bn_var=var,
        bn_inv_std=inv_std,
        bn_yhat=yhat,
        dropout_mask=mask,
        pre_proj=pre_proj,
    )
    return out, cache


def _layer_backward(
    d_h_seq: np.ndarray,
    acts: dict[str, np.ndarray],
    x: np.ndarray,
    wx: np.ndarray,
    wh: np.ndarray,
    hidden: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """BPTT for one layer. Returns (dwx, dwh, db, dx)."""
    batch, steps, _ = x.shape
    dz_all = np.empty((batch, steps, 4 * hidden))
    dc = np.zeros((batch, hidden))
    dh_rec = np.zeros((batch, hidden))
    i, f, g, o = acts["i"], acts["f"], acts["g"], acts["o"]
    c, tc = acts["c"], acts["tc"]
    for t in range(steps - 1, -1, -1):
        dh = d_h_seq[:, t] + dh_rec
        it, ft, gt, ot, tct = i[:, t], f[:, t], g[:, t], o[:, t], tc[:, t]
        c_prev = c[:, t - 1] if t > 0 else np.zeros((batch, hidden))
        do = dh * tct
        dc = dc + dh * ot * (1.0 - tct * tct)
        di = dc * gt
        dg = dc * it
        df = dc * c_prev
        dc_prev = dc * ft
        dz = np.concatenate(
            [
                di * it * (1.0 - it),
                df * ft * (1.0 - ft),
                dg * (1.0 - gt * gt),
                do * ot * (1.0 - ot),
            ],
            axis=1,
        )
        dz_all[:, t] = dz
        dh_rec = dz @ wh.T
        dc = dc_prev
    h_prev = np.concatenate([np.zeros((batch, 1, hidden)), acts["h"][:, :-1]], axis=1)
    flat_dz = dz_all.reshape(batch * steps, 4 * hidden)
    dwx = x.reshape(batch * steps, -1).T @ flat_dz
    dwh = h_prev.reshape(batch * steps, hidden).T @ flat_dz
    db = flat_dz.sum(axis=0)
    dx = (flat_dz @ wx.T).reshape(batch, steps, -1)
    return dwx, dwh, db, dx


def backward(
    batch: Sequence[CharSeq] | np.ndarray,
    params: EncoderParams,
    upstream: np.ndarray,
    cache: ForwardCache,
) -> dict[str, np.ndarray]:
    """Gradients of sum(upstream * output) for every tensor in params.

    Running statistics receive zero gradient: they are not trained.
    """
    cfg = params.config
    ids = _as_id_matrix(batch, cfg)
    if ids.shape != cache.ids.shape or not np.array_equal(ids, cache.ids):
        raise StaleCacheError("forward cache does not belong to this batch")
    if upstream.shape != (ids.shape[0], cfg.proj_dim):
        raise ShapeError(f"upstream must be {(ids.shape[0], cfg.proj_dim)}, got {upstream.shape}")
    t = {k: v.astype(np.float64) for k, v in params.tensors.items()}
    grads: dict[str, np.ndarray] = {}
    n = ids.shape[0]

    d_pre = upstream * (cache.pre_proj > 0.0)
    bn_after_mask = cache.bn_yhat * t["bn_gamma"] + t["bn_beta"]
    if cache.dropout_mask is not None:
        bn_after_mask = bn_after_mask * cache.dropout_mask
    grads["proj_w"] = bn_after_mask.T @ d_pre
    grads["proj_b"] = d_pre.sum(axis=0)
    d_bn = d_pre @ t["proj_w"].T
    if cache.dropout_mask is not None:
        d_bn = d_bn * cache.dropout_mask

    grads["bn_gamma"] = (d_bn * cache.bn_yhat).sum(axis=0)
    grads["bn_beta"] = d_bn.sum(axis=0)
    grads["bn_mean"] = np.zeros(cfg.hidden_dim)
    grads["bn_var"] = np.zeros(cfg.hidden_dim)
    d_yhat = d_bn * t["bn_gamma"]
    # batch-statistics norm backward
    d_y = (
        cache.bn_inv_std
        / n
        * (n * d_yhat - d_yhat.sum(axis=0) - cache.bn_yhat * (d_yhat * cache.bn_yhat).sum(axis=0))
    )

    d_h_seq = np.zeros((n, cfg.seq_len, cfg.hidden_dim))
    d_h_seq[:, -1] = d_y
    for layer in range(cfg.num_layers, 0, -1):
        dwx, dwh, db, dx = _layer_backward(
            d_h_seq,
            cache.gates[layer - 1],
            cache.layer_inputs[layer - 1],
            t[f"l{layer}_wx"],
            t[f"l{layer}_wh"],
            cfg.hidden_dim,
        )
        grads[f"l{layer}_wx"] = dwx
        grads[f"l{layer}_wh"] = dwh
        grads[f"l{layer}_b"] = db
        d_h_seq = dx

    d_embed = np.zeros((cfg.alphabet_size, cfg.embed_dim))
    np.add.at(d_embed, ids.reshape(-1), d_h_seq.reshape(-1, cfg.embed_dim))
    grads["embed"] = d_embed
    return grads


def update_running_stats(
    params: EncoderParams, cache: ForwardCache, momentum: float = BN_MOMENTUM
) -> None:
    """Fold one train-mode batch's statistics into the running estimates."""
    mean = params.tensors["bn_mean"].astype(np.float64)
    var = params.tensors["bn_var"].astype(np.float64)
    mean = (1.0 - momentum) * mean + momentum * cache.bn_mean
    var = (1.0 - momentum) * var + momentum * cache.bn_var
    params.tensors["bn_mean"] = mean.astype(np.float32)
    params.tensors["bn_var"] = var.astype(np.float32)


def _config_dict(cfg: EncoderConfig) -> dict:
    return {
        "alphabet_size": cfg.alphabet_size,
        "embed_dim": cfg.embed_dim,
        "hidden_dim": cfg.hidden_dim,
        "num_layers": cfg.num_layers,
        "proj_dim": cfg.proj_dim,
        "dropout_rate": cfg.dropout_rate,
        "seq_len": cfg.seq_len,
    }


def save_params(params: EncoderParams, path: str | Path) -> None:
    header = {"kind": "encoder-weights", "config": _config_dict(params.config)}
    write_container(path, header, params.tensors)


def load_params(path: str | Path, expected_config: EncoderConfig | None = None) -> EncoderParams:
    header, tensors = read_container(path)
    if header.get("kind") != "encoder-weights":
        raise VersionMismatchError(f"{path}: not a weights file")
    cfg = EncoderConfig(**header["config"])
    if expected_config is not None and cfg != expected_config:
        raise VersionMismatchError(
            f"{path}: stored config {cfg} does not match expected {expected_config}"
        )
    expected_shapes = tensor_shapes(cfg)
    if set(tensors) != set(expected_shapes):
        raise VersionMismatchError(f"{path}: tensor set does not match config")
    for name, shape in expected_shapes.items():
        if tensors[name].shape != shape:
            raise VersionMismatchError(f"{path}: tensor {name!r} has shape {tensors[name].shape}")
    return EncoderParams(config=cfg, tensors=tensors)
