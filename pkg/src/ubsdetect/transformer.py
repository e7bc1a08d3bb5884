"""Encoder-only transformer reconstructing per-session feature vectors.

The D*S session slots of a user tensor, flattened in (day, session) order,
form one sequence; each token keeps the positional encoding of its absolute
slot. Padding slots are excluded from attention and from the loss, so they
cannot influence real slots; the forward pass therefore gathers only the
mask-true rows, which realizes that exclusion exactly. Training is one Adam
step per user tensor per epoch (batch size 1), on benign users only; scoring
reduces per-slot reconstruction errors to the UserScore summary.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import NonFiniteLoss, ShapeMismatch
from .numcore import Mat, Param
from .scores import UserScore, make_score
from .ubs import Label, UbsDims, UbsTensor, UserDataMap

log = logging.getLogger(__name__)


@dataclass
class EncoderConfig:
    dims: UbsDims = field(default_factory=UbsDims)
    d_model: int = 64
    n_blocks: int = 6
    n_heads: int = 8
    d_ff: int = 256
    dropout: float = 0.1
    learning_rate: float = 1e-5
    epochs: int = 50
    seed: int = 0
    early_stop_patience: int = 5
    early_stop_min_delta: float = 1e-6

    def __post_init__(self):
        if self.d_model <= 0 or self.d_ff <= 0 or self.n_blocks <= 0 or self.n_heads <= 0:
            raise ValueError("all widths and depths must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2 != 0:
            raise ValueError("d_model must be even for sinusoidal positions")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "dims": {"days": self.dims.days, "sessions": self.dims.sessions, "features": self.dims.features},
            "d_model": self.d_model,
            "n_blocks": self.n_blocks,
            "n_heads": self.n_heads,
            "d_ff": self.d_ff,
            "dropout": self.dropout,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "early_stop_patience": self.early_stop_patience,
            "early_stop_min_delta": self.early_stop_min_delta,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EncoderConfig":
        obj = dict(obj)
        obj["dims"] = UbsDims(**obj["dims"])
        return cls(**obj)


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: sin at even columns, cos at odd, [length, d_model]."""
    if length <= 0 or d_model <= 0 or d_model % 2 != 0:
        raise ValueError("need length > 0 and even d_model > 0")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d_model // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


def parameter_count(config: EncoderConfig) -> int:
    """Closed-form trainable parameter count for a config."""
    d, dff, f = config.d_model, config.d_ff, config.dims.features
    per_block = 4 * (d * d + d) + 2 * 2 * d + (d * dff + dff) + (dff * d + d)
    return (f * d + d) + config.n_blocks * per_block + (d * f + f)


class EncoderModel:
    """Parameter set: embedding, positional table, blocks, output head."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        d, dff, f = config.d_model, config.d_ff, config.dims.features
        self.pe = positional_encoding(config.dims.slots, d)
        self.embed_w = Param("embed_w", nc.xavier_uniform(rng, f, d))
        self.embed_b = Param("embed_b", np.zeros((1, d)))
        self.blocks = []
        for b in range(config.n_blocks):
            blk = {
                name: Param(f"block{b}.{name}", init)
                for name, init in (
                    ("wq", nc.xavier_uniform(rng, d, d)),
                    ("bq", np.zeros((1, d))),
                    ("wk", nc.xavier_uniform(rng, d, d)),
                    ("bk", np.zeros((1, d))),
                    ("wv", nc.xavier_uniform(rng, d, d)),
                    ("bv", np.zeros((1, d))),
                    ("wo", nc.xavier_uniform(rng, d, d)),
                    ("bo", np.zeros((1, d))),
                    ("ln1_g", np.ones((1, d))),
                    ("ln1_b", np.zeros((1, d))),
                    ("ffn_w1", nc.xavier_uniform(rng, d, dff)),
                    ("ffn_b1", np.zeros((1, dff))),
                    ("ffn_w2", nc.xavier_uniform(rng, dff, d)),
                    ("ffn_b2", np.zeros((1, d))),
                    ("ln2_g", np.ones((1, d))),
                    ("ln2_b", np.zeros((1, d))),
                )
            }
            self.blocks.append(blk)
        self.head_w = Param("head_w", nc.xavier_uniform(rng, d, f))
        self.head_b = Param("head_b", np.zeros((1, f)))
        log.info(
            "encoder built: %d blocks, %d heads, d_model=%d, %d parameters",
            config.n_blocks, config.n_heads, d, self.param_count(),
        )

    def params(self) -> list[Param]:
        out = [self.embed_w, self.embed_b]
        for blk in self.blocks:
            out.extend(blk.values())
        out.extend([self.head_w, self.head_b])
        return out

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())


def _gather(tensor: UbsTensor, dims: UbsDims) -> tuple[np.ndarray, np.ndarray]:
    """Mask-true rows of the (day, session)-flattened tensor plus their slots.

    Padding slots are excluded from attention and from the loss, so a padding
    row can never influence a real row; dropping the rows entirely makes that
    exclusion exact and keeps attention quadratic in real sessions only.
    Every token keeps the positional encoding of its absolute flattened slot.
    """
    if tensor.values.shape != (dims.days, dims.sessions, dims.features):
        raise ShapeMismatch(
            f"user {tensor.user}: tensor shape {tensor.values.shape} "
            f"does not match configured dims"
        )
    slot_mask = tensor.mask.reshape(dims.slots)
    slots = np.flatnonzero(slot_mask)
    x = tensor.values.reshape(dims.slots, dims.features)[slots].astype(np.float64)
    return x, slots


def forward(
    model: EncoderModel,
    tensor: UbsTensor,
    train: bool = False,
    rng: np.random.Generator | None = None,
    collect_attn: list | None = None,
) -> tuple[Mat, Mat, np.ndarray]:
    """Run the encoder over one user tensor.

    Returns (reconstruction node, input leaf node, flattened slot indices);
    row r of both nodes corresponds to slot slots[r] of the D*S sequence.
    Pass `collect_attn` to receive each head's attention-weight matrix.
    """
    cfg = model.config
    x_np, slots = _gather(tensor, cfg.dims)
    if len(slots) == 0:
        raise ShapeMismatch(f"user {tensor.user} has no sessions")
    x = Mat(x_np, name="input")
    h = nc.add(nc.matmul(x, model.embed_w), model.embed_b)
    h = nc.add(h, Mat(model.pe[slots], name="pe"))
    if train:
        h = nc.dropout(h, cfg.dropout, rng, train=True)
    d_head = cfg.d_model // cfg.n_heads
    inv_sqrt = 1.0 / math.sqrt(d_head)
    keep = np.ones(len(slots), dtype=bool)
    for blk in model.blocks:
        q = nc.add(nc.matmul(h, blk["wq"]), blk["bq"])
        k = nc.add(nc.matmul(h, blk["wk"]), blk["bk"])
        v = nc.add(nc.matmul(h, blk["wv"]), blk["bv"])
        heads = []
        for i in range(cfg.n_heads):
            lo, hi = i * d_head, (i + 1) * d_head
            qh = nc.scale(nc.slice_cols(q, lo, hi), inv_sqrt)
            kh = nc.slice_cols(k, lo, hi)
            vh = nc.slice_cols(v, lo, hi)
            scores = nc.matmul(qh, nc.transpose(kh))
            weights = nc.masked_softmax_rows(scores, keep)
            if collect_attn is not None:
                collect_attn.append(weights.data)
            heads.append(nc.matmul(weights, vh))
        attn = nc.add(nc.matmul(nc.concat_cols(heads), blk["wo"]), blk["bo"])
        h = nc.layer_norm_rows(nc.add(h, attn), blk["ln1_g"], blk["ln1_b"])
        f = nc.add(nc.matmul(h, blk["ffn_w1"]), blk["ffn_b1"])
        f = nc.add(nc.matmul(nc.relu(f), blk["ffn_w2"]), blk["ffn_b2"])
        h = nc.layer_norm_rows(nc.add(h, f), blk["ln2_g"], blk["ln2_b"])
    recon = nc.add(nc.matmul(h, model.head_w), model.head_b)
    return recon, x, slots


def reconstruct_full(model: EncoderModel, tensor: UbsTensor) -> np.ndarray:
    """Eval-mode reconstruction scattered back to the full [D*S, F] sequence."""
    recon, _, slots = forward(model, tensor, train=False)
    full = np.zeros((model.config.dims.slots, model.config.dims.features))
    full[slots] = recon.data
    return full


def user_loss(model: EncoderModel, tensor: UbsTensor, train: bool, rng=None) -> Mat:
    recon, x, _ = forward(model, tensor, train=train, rng=rng)
    return nc.mse_masked(recon, x.data, np.ones((recon.rows, 1), dtype=bool))


@dataclass
class TrainReport:
    epochs_run: int
    epoch_losses: list[float]
    stopped_early: bool
    param_count: int

    def as_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "epoch_losses": self.epoch_losses,
            "stopped_early": self.stopped_early,
            "param_count": self.param_count,
        }


def train(config: EncoderConfig, train_map: UserDataMap) -> tuple[EncoderModel, TrainReport]:
    """Train on benign users only, one optimizer step per user per epoch."""
    if not train_map:
        raise ValueError("training map is empty")
    for user, t in train_map.items():
        if t.label is not Label.BENIGN:
            raise ValueError(f"training user {user} is not labeled benign")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng = np.random.default_rng(seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])

    model = EncoderModel(config, init_rng)
    params = model.params()
    adam = nc.AdamState(params, config.learning_rate)
    users = sorted(train_map)
    losses: list[float] = []
    stopped = False
    for epoch in range(config.epochs):
        order = list(users)
        shuffle_rng.shuffle(order)
        total = 0.0
        for user in order:
            loss = user_loss(model, train_map[user], train=True, rng=dropout_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"epoch {epoch}, user {user}: loss={value}")
            nc.backward(loss)
            nc.adam_step(adam)
            total += value
        losses.append(total / len(order))
        log.info("epoch %d: mean loss %.6f", epoch, losses[-1])
        if (
            len(losses) > config.early_stop_patience
            and losses[-config.early_stop_patience - 1] - min(losses[-config.early_stop_patience:])
            < config.early_stop_min_delta
        ):
            stopped = True
            break
    return model, TrainReport(len(losses), losses, stopped, model.param_count())


def score(model: EncoderModel, data: UserDataMap) -> list[UserScore]:
    """Per-user reconstruction-error summaries, eval mode (deterministic)."""
    out = []
    for user in sorted(data):
        tensor = data[user]
        if not tensor.mask.any():
            log.warning("user %s has no sessions; skipped", user)
            continue
        recon, x, _ = forward(model, tensor, train=False)
        err = ((recon.data - x.data) ** 2).mean(axis=1)
        out.append(make_score(user, tensor.label, err))
    return out


def save_model(model: EncoderModel, path) -> None:
    nc.save_checkpoint(path, model.config.to_dict(), model.params())


def load_model(path) -> EncoderModel:
    config_dict, weights = nc.load_checkpoint(path)
    config = EncoderConfig.from_dict(config_dict)
    model = EncoderModel(config, np.random.default_rng(0))
    for p in model.params():
        if p.name not in weights:
            raise ValueError(f"checkpoint missing parameter {p.name}")
        if weights[p.name].shape != p.data.shape:
            raise ShapeMismatch(f"checkpoint {p.name}: {weights[p.name].shape} != {p.data.shape}")
        p.data[...] = weights[p.name]
    return model
