"""Mirror-MLP autoencoder baselines.

Two arrangements of the same architecture: the tabular model reconstructs
individual normalized session rows; the tensor model reconstructs one
flattened vector per user (mask-true cells concatenated in (day, session)
order, zero-padded to D*S*F). Both emit UserScore records identical in shape
to the transformer's, so the detectors are model-agnostic.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, NonFiniteLoss, ShapeMismatch
from .numcore import Mat, Param
from .scores import UserScore, make_score
from .ubs import Label, UbsDims, UbsTensor, UserDataMap

log = logging.getLogger(__name__)


@dataclass
class MlpAeConfig:
    input_width: int
    hidden: list[int] = field(default_factory=lambda: [64, 16])
    dropout: float = 0.0
    learning_rate: float = 1e-3
    epochs: int = 50
    seed: int = 0
    early_stop_patience: int = 5
    early_stop_min_delta: float = 1e-6

    def __post_init__(self):
        if self.input_width <= 0:
            raise ConfigError("input_width must be positive")
        if not self.hidden:
            raise ConfigError("need at least one hidden width")
        if any(b >= a for a, b in zip(self.hidden, self.hidden[1:])):
            raise ConfigError(f"hidden widths must be strictly decreasing: {self.hidden}")
        if self.hidden[-1] >= self.input_width:
            raise ConfigError(
                f"bottleneck {self.hidden[-1]} must be smaller than input width {self.input_width}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "input_width": self.input_width,
            "hidden": list(self.hidden),
            "dropout": self.dropout,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "seed": self.seed,
            "early_stop_patience": self.early_stop_patience,
            "early_stop_min_delta": self.early_stop_min_delta,
        }


class MlpAeModel:
    """Encoder widths input->hidden, mirrored decoder back to input."""

    def __init__(self, config: MlpAeConfig, rng: np.random.Generator):
        self.config = config
        widths = [config.input_width] + list(config.hidden)
        widths += widths[-2::-1]  # mirror back up to input_width
        self.layers: list[tuple[Param, Param]] = []
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            self.layers.append(
                (
                    Param(f"layer{i}.w", nc.xavier_uniform(rng, a, b)),
                    Param(f"layer{i}.b", np.zeros((1, b))),
                )
            )

    def params(self) -> list[Param]:
        return [p for w, b in self.layers for p in (w, b)]

    def reconstruct(self, x: Mat, train: bool = False, rng=None) -> Mat:
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = nc.add(nc.matmul(h, w), b)
            if i != last:
                h = nc.relu(h)
                if train and self.config.dropout > 0.0:
                    h = nc.dropout(h, self.config.dropout, rng, train=True)
        return h


@dataclass
class AeTrainReport:
    epochs_run: int
    epoch_losses: list[float]
    stopped_early: bool

    def as_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "epoch_losses": self.epoch_losses,
            "stopped_early": self.stopped_early,
        }


def _train_loop(config: MlpAeConfig, batches: dict[str, tuple[np.ndarray, np.ndarray]]):
    """Shared loop: one Adam step per user batch (rows, row/cell mask)."""
    if not batches:
        raise ValueError("no training batches")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    model = MlpAeModel(config, np.random.default_rng(seeds[0]))
    shuffle_rng = np.random.default_rng(seeds[1])
    dropout_rng = np.random.default_rng(seeds[2])
    adam = nc.AdamState(model.params(), config.learning_rate)
    users = sorted(batches)
    losses: list[float] = []
    stopped = False
    for epoch in range(config.epochs):
        order = list(users)
        shuffle_rng.shuffle(order)
        total = 0.0
        for user in order:
            rows, mask = batches[user]
            x = Mat(rows)
            out = model.reconstruct(x, train=True, rng=dropout_rng)
            loss = nc.mse_masked(out, rows, mask)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(f"epoch {epoch}, user {user}: loss={value}")
            nc.backward(loss)
            nc.adam_step(adam)
            total += value
        losses.append(total / len(order))
        if (
            len(losses) > config.early_stop_patience
            and losses[-config.early_stop_patience - 1] - min(losses[-config.early_stop_patience:])
            < config.early_stop_min_delta
        ):
            stopped = True
            break
    return model, AeTrainReport(len(losses), losses, stopped)


# -- tabular arrangement ----------------------------------------------------


def _session_rows(tensor: UbsTensor) -> np.ndarray:
    return tensor.values[tensor.mask].astype(np.float64)


def train_tab(config: MlpAeConfig, train_map: UserDataMap) -> tuple[MlpAeModel, AeTrainReport]:
    """Train on per-session rows of benign users (one step per user batch)."""
    _check_benign(train_map)
    batches = {}
    for user, t in train_map.items():
        rows = _session_rows(t)
        if len(rows) == 0:
            continue
        if rows.shape[1] != config.input_width:
            raise ShapeMismatch(f"session width {rows.shape[1]} != input_width {config.input_width}")
        batches[user] = (rows, np.ones((rows.shape[0], 1), dtype=bool))
    return _train_loop(config, batches)


def score_tab(model: MlpAeModel, data: UserDataMap) -> list[UserScore]:
    out = []
    for user in sorted(data):
        t = data[user]
        rows = _session_rows(t)
        if len(rows) == 0:
            log.warning("user %s has no sessions; skipped", user)
            continue
        recon = model.reconstruct(Mat(rows), train=False)
        err = ((recon.data - rows) ** 2).mean(axis=1)
        out.append(make_score(user, t.label, err))
    return out


# -- flattened-tensor arrangement ---------------------------------------------


def flatten_user(tensor: UbsTensor, dims: UbsDims) -> tuple[np.ndarray, np.ndarray]:
    """Mask-true cells concatenated, zero-padded to D*S*F; plus a fill mask."""
    width = dims.slots * dims.features
    cells = tensor.values[tensor.mask].astype(np.float64).reshape(-1)
    row = np.zeros((1, width))
    row[0, : cells.size] = cells
    fill = np.zeros((1, width), dtype=bool)
    fill[0, : cells.size] = True
    return row, fill


def train_ubs(
    config: MlpAeConfig, train_map: UserDataMap, dims: UbsDims
) -> tuple[MlpAeModel, AeTrainReport]:
    """Train on one flattened vector per benign user."""
    _check_benign(train_map)
    if config.input_width != dims.slots * dims.features:
        raise ShapeMismatch(
            f"input_width {config.input_width} != D*S*F = {dims.slots * dims.features}"
        )
    batches = {}
    for user, t in train_map.items():
        if not t.mask.any():
            continue
        batches[user] = flatten_user(t, dims)
    return _train_loop(config, batches)


def score_ubs(model: MlpAeModel, data: UserDataMap, dims: UbsDims) -> list[UserScore]:
    """Per-session errors come from the F-wide blocks of the filled prefix."""
    F = dims.features
    out = []
    for user in sorted(data):
        t = data[user]
        n_sessions = t.session_count()
        if n_sessions == 0:
            log.warning("user %s has no sessions; skipped", user)
            continue
        row, fill = flatten_user(t, dims)
        recon = model.reconstruct(Mat(row), train=False)
        diff = (recon.data[0, : n_sessions * F] - row[0, : n_sessions * F]) ** 2
        err = diff.reshape(n_sessions, F).mean(axis=1)
        out.append(make_score(user, t.label, err))
    return out


def _check_benign(train_map: UserDataMap) -> None:
    if not train_map:
        raise ValueError("training map is empty")
    for user, t in train_map.items():
        if t.label is not Label.BENIGN:
            raise ValueError(f"training user {user} is not labeled benign")


def save_model(model: MlpAeModel, path) -> None:
    nc.save_checkpoint(path, model.config.to_dict(), model.params())


def load_model(path) -> MlpAeModel:
    config_dict, weights = nc.load_checkpoint(path)
    model = MlpAeModel(MlpAeConfig(**config_dict), np.random.default_rng(0))
    for p in model.params():
        if p.name not in weights:
            raise ValueError(f"checkpoint missing parameter {p.name}")
        p.data[...] = weights[p.name]
    return model
