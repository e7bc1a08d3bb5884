"""Per-user sequence tensors: build, normalize, serialize.

Each user becomes a [D, S, F] float32 value array plus a [D, S] validity
mask; cell (i, j, k) holds feature k of session j on day i. Masked-off cells
are exactly zero. Values are float32 in memory (the file dtype) so that
read(write(x)) is bit-exact; all arithmetic happens in float64 and quantizes
on store.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimMismatch, DimensionOverflow, TruncatedFile
from .ingest import SessionRecord

MAGIC = b"UBS1"
FORMAT_VERSION = 1

STD_FLOOR = 1e-8


class Label(IntEnum):
    BENIGN = 0
    MALICIOUS = 1
    UNKNOWN = 2


@dataclass(frozen=True)
class UbsDims:
    days: int = 501
    sessions: int = 9
    features: int = 35

    def __post_init__(self):
        if min(self.days, self.sessions, self.features) <= 0:
            raise ValueError("all dimensions must be strictly positive")

    @property
    def slots(self) -> int:
        return self.days * self.sessions


@dataclass
class UbsTensor:
    user: str
    values: np.ndarray  # float32 [D, S, F]
    mask: np.ndarray  # bool [D, S]
    label: Label

    def session_count(self) -> int:
        return int(self.mask.sum())


# ordered map user id -> UbsTensor; plain dicts keep insertion order and all
# builders/readers insert in sorted user order
UserDataMap = dict[str, UbsTensor]


@dataclass
class NormStats:
    mean: np.ndarray  # float64 [F]
    std: np.ndarray  # float64 [F], floored at STD_FLOOR

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"mean": self.mean.tolist(), "std": self.std.tolist()}, fh, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> "NormStats":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["std"], dtype=np.float64))


def build_ubs(
    sessions: list[SessionRecord],
    dims: UbsDims,
    labels: dict[str, Label],
) -> UserDataMap:
    """Place session feature vectors into per-user [D, S, F] tensors.

    Users absent from `labels` get Label.UNKNOWN. Input order does not matter;
    the output map iterates users in sorted id order.
    """
    by_user: dict[str, list[SessionRecord]] = {}
    for rec in sessions:
        if not (0 <= rec.day_index < dims.days and 0 <= rec.session_index < dims.sessions):
            raise DimensionOverflow(
                f"session ({rec.user}, day {rec.day_index}, slot {rec.session_index}) "
                f"outside [{dims.days}, {dims.sessions}] grid"
            )
        if len(rec.features) != dims.features:
            raise DimensionOverflow(
                f"feature vector length {len(rec.features)} != F={dims.features}"
            )
        by_user.setdefault(rec.user, []).append(rec)

    out: UserDataMap = {}
    for user in sorted(by_user):
        values = np.zeros((dims.days, dims.sessions, dims.features), dtype=np.float32)
        mask = np.zeros((dims.days, dims.sessions), dtype=bool)
        for rec in by_user[user]:
            if mask[rec.day_index, rec.session_index]:
                raise DimensionOverflow(
                    f"duplicate session slot ({user}, {rec.day_index}, {rec.session_index})"
                )
            values[rec.day_index, rec.session_index] = rec.features.astype(np.float32)
            mask[rec.day_index, rec.session_index] = True
        out[user] = UbsTensor(user, values, mask, labels.get(user, Label.UNKNOWN))
    return out


def fit_norm(train: UserDataMap) -> NormStats:
    """Per-feature mean/std over mask-true cells of Benign training users.

    Constant features get their std floored (STD_FLOOR), which zeroes them
    after centering on the training set.
    """
    cells = [
        t.values[t.mask].astype(np.float64)
        for t in train.values()
        if t.label is Label.BENIGN and t.mask.any()
    ]
    if not cells:
        raise ValueError("no benign mask-true cells to fit normalization on")
    stacked = np.concatenate(cells, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return NormStats(mean, np.maximum(std, STD_FLOOR))


def apply_norm(data: UserDataMap, stats: NormStats) -> UserDataMap:
    """Z-score mask-true cells; masked-off cells stay exactly zero."""
    out: UserDataMap = {}
    for user, t in data.items():
        z = (t.values.astype(np.float64) - stats.mean) / stats.std
        z *= t.mask[:, :, None]
        out[user] = UbsTensor(user, z.astype(np.float32), t.mask.copy(), t.label)
    return out


# -- binary format --------------------------------------------------------
#
# little-endian: magic "UBS1", u32 version, u32 U, D, S, F; then per user in
# sorted id order: u16 id length, UTF-8 id, u8 label, D*S mask bytes,
# D*S*F float32 values.


def write_ubs(data: UserDataMap, path: str | Path, dims: UbsDims) -> None:
    for user, t in data.items():
        if t.values.shape != (dims.days, dims.sessions, dims.features):
            raise DimMismatch(f"user {user}: tensor shape {t.values.shape} != dims {dims}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<5I", FORMAT_VERSION, len(data), dims.days, dims.sessions, dims.features))
        for user in sorted(data):
            t = data[user]
            uid = user.encode("utf-8")
            fh.write(struct.pack("<H", len(uid)))
            fh.write(uid)
            fh.write(struct.pack("<B", int(t.label)))
            fh.write(t.mask.astype(np.uint8).tobytes())
            fh.write(t.values.astype("<f4").tobytes())


def read_ubs(path: str | Path, expect_dims: UbsDims | None = None) -> tuple[UserDataMap, UbsDims]:
    def take(fh, n: int, what: str) -> bytes:
        buf = fh.read(n)
        if len(buf) != n:
            raise TruncatedFile(f"{path}: short read for {what}")
        return buf

    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise BadMagic(f"{path}: not a UBS file")
        version, n_users, d, s, f = struct.unpack("<5I", take(fh, 20, "header"))
        if version != FORMAT_VERSION:
            raise BadMagic(f"{path}: unsupported version {version}")
        dims = UbsDims(d, s, f)
        if expect_dims is not None and dims != expect_dims:
            raise DimMismatch(f"{path}: file dims {dims} != expected {expect_dims}")
        out: UserDataMap = {}
        for _ in range(n_users):
            (id_len,) = struct.unpack("<H", take(fh, 2, "id length"))
            user = take(fh, id_len, "user id").decode("utf-8")
            (label,) = struct.unpack("<B", take(fh, 1, "label"))
            mask = np.frombuffer(take(fh, dims.slots, "mask"), dtype=np.uint8)
            mask = mask.reshape(dims.days, dims.sessions).astype(bool)
            raw = take(fh, dims.slots * dims.features * 4, "values")
            values = np.frombuffer(raw, dtype="<f4").reshape(dims.days, dims.sessions, dims.features)
            out[user] = UbsTensor(user, values.copy(), mask, Label(label))
    return out, dims
