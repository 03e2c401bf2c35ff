"""Self-supervised contrastive training.

Each unique token is its own class: a batch of N tokens becomes 2N augmented
rows (rows 2m, 2m+1 are a positive pair), scored with the normalized
temperature-scaled cross entropy loss, and optimized with Adam under a cosine
learning-rate decay. The checkpoint with the best validation loss is returned.

Validation pairs are drawn once, at the start of fit(), with the
lower-intensity policy: a fixed set makes the loss comparable across epochs
and lets the recorded best value be reproduced exactly afterwards.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .augmentor import TRAIN_POLICY, VALID_POLICY, AugmentPolicy, make_pair
from .chardomain import DOMAIN, CharSeq
from .encoder import (
    EncoderConfig,
    EncoderParams,
    NON_TRAINABLE,
    backward,
    forward,
    init_params,
    update_running_stats,
)

logger = logging.getLogger(__name__)


class ZeroVectorError(ValueError):
    """Cosine similarity is undefined for a zero vector."""


class TooFewTokensError(ValueError):
    """Dataset too small to split or batch."""


class NonFiniteLossError(FloatingPointError):
    """Training loss overflowed; aborting with diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 300
    lr0: float = 1e-4
    temperature: float = 0.07
    split_fraction: float = 0.7
    seed: int = 0
    policy_train: AugmentPolicy = TRAIN_POLICY
    policy_valid: AugmentPolicy = VALID_POLICY

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must be in (0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for rec in self.records:
                writer.writerow(
                    [rec.epoch, repr(rec.train_loss), repr(rec.val_loss), repr(rec.lr)]
                )

    @classmethod
    def from_csv(cls, path: str | Path) -> "TrainHistory":
        history = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                history.records.append(
                    EpochRecord(
                        epoch=int(row["epoch"]),
                        train_loss=float(row["train_loss"]),
                        val_loss=float(row["val_loss"]),
                        lr=float(row["lr"]),
                    )
                )
        for rec in history.records:
            if rec.val_loss < history.best_val_loss:
                history.best_val_loss = rec.val_loss
                history.best_epoch = rec.epoch
        return history


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity of a zero vector")
    return float(np.dot(a, b) / (na * nb))


def ntxent_loss(embeddings: np.ndarray, temperature: float) -> tuple[float, np.ndarray]:
    """Mean contrastive loss over all 2N anchors, plus its gradient.

    Row layout is fixed: rows 2m and 2m+1 form a positive pair. For anchor i
    the denominator runs over every other row (the positive included),
    stabilized by per-row max subtraction. Gradients flow through the cosine
    normalization of each row.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 4 or emb.shape[0] % 2 != 0:
        raise ValueError(f"need an even batch of >= 4 embeddings, got {emb.shape}")
    if not np.isfinite(emb).all():
        raise NonFiniteLossError("non-finite embeddings in contrastive batch")
    two_n = emb.shape[0]
    norms = np.linalg.norm(emb, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVectorError("zero embedding in contrastive batch")
    unit = emb / norms[:, None]
    logits = (unit @ unit.T) / temperature
    np.fill_diagonal(logits, -np.inf)  # the k != i indicator
    partner = np.arange(two_n) ^ 1

    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    exp = np.exp(shifted)
    denom = exp.sum(axis=1)
    log_prob = shifted - np.log(denom)[:, None]
    losses = -log_prob[np.arange(two_n), partner]
    loss = float(losses.mean())
    if not math.isfinite(loss):
        raise NonFiniteLossError("contrastive loss is not finite")

    # d(mean loss)/d(logits): softmax minus the positive indicator, per row
    d_logits = exp / denom[:, None]
    d_logits[np.arange(two_n), partner] -= 1.0
    d_logits /= two_n
    np.fill_diagonal(d_logits, 0.0)
    d_sim = d_logits / temperature
    d_unit = (d_sim + d_sim.T) @ unit
    # back through row normalization: d_e = (d_u - (d_u . u) u) / ||e||
    inner = (d_unit * unit).sum(axis=1, keepdims=True)
    d_emb = (d_unit - inner * unit) / norms[:, None]
    return loss, d_emb


def split_dataset(
    tokens: Sequence[str], fraction: float, seed: int
) -> tuple[list[str], list[str]]:
    """Seeded shuffle then split; both sides are always non-empty."""
    if len(tokens) < 2:
        raise TooFewTokensError(f"need at least 2 tokens, got {len(tokens)}")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(tokens))
    cut = min(max(int(len(tokens) * fraction), 1), len(tokens) - 1)
    train = [tokens[i] for i in order[:cut]]
    valid = [tokens[i] for i in order[cut:]]
    return train, valid


def lr_at(step: int, total_steps: int, lr0: float) -> float:
    """Cosine decay from lr0 at step 0 to 0 at total_steps."""
    frac = min(max(step, 0), total_steps) / total_steps
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Adam over the trainable tensors of EncoderParams (float64 state)."""

    def __init__(self, params: EncoderParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {
            k: np.zeros(v.shape) for k, v in params.tensors.items() if k not in NON_TRAINABLE
        }
        self.v = {k: np.zeros_like(m) for k, m in self.m.items()}

    def step(self, params: EncoderParams, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in self.m:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / c1
            v_hat = self.v[name] / c2
            update = lr * m_hat / (np.sqrt(v_hat) + self.eps)
            params.tensors[name] = (
                params.tensors[name].astype(np.float64) - update
            ).astype(np.float32)


def _encode_pairs(
    tokens: Sequence[str], policy: AugmentPolicy, rng: np.random.Generator
) -> list[CharSeq]:
    rows: list[CharSeq] = []
    for token in tokens:
        pair = make_pair(token, policy, rng)
        rows.append(DOMAIN.encode_token(pair.t))
        rows.append(DOMAIN.encode_token(pair.t_prime))
    return rows


def _batched(items: Sequence, size: int) -> list[list]:
    batches = [list(items[i : i + size]) for i in range(0, len(items), size)]
    return [b for b in batches if len(b) >= 2]  # contrastive loss needs >= 2 pairs


def _child_seeds(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def make_validation_batches(
    valid_tokens: Sequence[str], cfg: TrainConfig
) -> list[list[CharSeq]]:
    """The fixed validation batches fit() evaluates each epoch (reproducible)."""
    _, _, _, val_rng = _child_seeds(cfg.seed, 4)
    batches = _batched(list(valid_tokens), cfg.batch_size)
    return [_encode_pairs(batch, cfg.policy_valid, val_rng) for batch in batches]


def validation_loss(
    params: EncoderParams, val_batches: Sequence[Sequence[CharSeq]], temperature: float
) -> float:
    """Token-weighted mean contrastive loss over the fixed validation batches.

    Uses batch statistics (train-style norm) without dropout, so the value is
    comparable across epochs and exactly reproducible from a checkpoint.
    """
    total, weight = 0.0, 0
    for rows in val_batches:
        out = forward(list(rows), params, "train", rng=None)
        loss, _ = ntxent_loss(out, temperature)
        total += loss * len(rows)
        weight += len(rows)
    if weight == 0:
        raise TooFewTokensError("no usable validation batches")
    return total / weight


def fit(
    tokens: Sequence[str],
    encoder_config: EncoderConfig,
    cfg: TrainConfig,
) -> tuple[EncoderParams, TrainHistory]:
    """Train the encoder on a unique-token corpus; return the best checkpoint.

    Fully deterministic for a given (tokens, configs): initialization,
    shuffling, augmentation, and dropout each draw from independent streams
    derived from cfg.seed.
    """
    tokens = list(dict.fromkeys(tokens))  # dedupe, preserve order
    train_tokens, valid_tokens = split_dataset(tokens, cfg.split_fraction, cfg.seed)
    init_rng, shuffle_rng, aug_rng, _, dropout_rng = _child_seeds(cfg.seed, 5)

    params = init_params(encoder_config, seed=int(init_rng.integers(2**31)))
    optimizer = Adam(params)
    val_batches = make_validation_batches(valid_tokens, cfg)

    steps_per_epoch = len(_batched(train_tokens, cfg.batch_size))
    if steps_per_epoch == 0:
        raise TooFewTokensError("training split yields no usable batch")
    total_steps = cfg.epochs * steps_per_epoch

    history = TrainHistory()
    best_params = params.copy()
    step = 0
    lr = cfg.lr0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_tokens))
        shuffled = [train_tokens[i] for i in order]
        epoch_loss, epoch_weight = 0.0, 0
        for batch_tokens in _batched(shuffled, cfg.batch_size):
            rows = _encode_pairs(batch_tokens, cfg.policy_train, aug_rng)
            out, cache = forward(rows, params, "train", rng=dropout_rng, return_cache=True)
            loss, d_emb = ntxent_loss(out, cfg.temperature)
            grads = backward(rows, params, d_emb, cache)
            lr = lr_at(step, total_steps, cfg.lr0)
            optimizer.step(params, grads, lr)
            update_running_stats(params, cache)
            epoch_loss += loss * len(rows)
            epoch_weight += len(rows)
            step += 1
        train_loss = epoch_loss / epoch_weight
        val_loss = validation_loss(params, val_batches, cfg.temperature)
        history.records.append(
            EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr)
        )
        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_params = params.copy()
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            logger.info(
                "epoch %d train=%.4f val=%.4f lr=%.2e", epoch, train_loss, val_loss, lr
            )
    return best_params, history
