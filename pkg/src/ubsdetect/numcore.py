"""Minimal dense 2-D tensor math with reverse-mode gradients.

Every op builds a node in an implicit tape (the expression graph); calling
`backward(loss)` on a 1x1 loss node walks the tape in reverse topological
order and accumulates gradients into every reachable node, `Param` leaves
included. All data is float64; shapes are always 2-D (rows x cols,
row-major). Ops reject non-finite inputs, with one documented exception:
`softmax_rows` accepts -inf entries, the attention masking mechanism.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, NonFiniteInput, ShapeMismatch, TruncatedFile

_CHECK_FINITE = True


def _as2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected 2-D data, got shape {arr.shape}")
    return arr


def _require_finite(arr: np.ndarray, op: str, allow_neginf: bool = False) -> None:
    if not _CHECK_FINITE:
        return
    if allow_neginf:
        bad = np.isnan(arr).any() or np.isposinf(arr).any()
    else:
        bad = not np.isfinite(arr).all()
    if bad:
        raise NonFiniteInput(f"{op}: non-finite input")


class Mat:
    """A 2-D float64 node in the gradient tape."""

    __slots__ = ("data", "grad", "parents", "_backward", "name")

    def __init__(self, data, parents=(), backward=None, name=""):
        self.data = _as2d(data)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Mat, ...] = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a 1x1 Mat, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"<Mat{tag} {self.rows}x{self.cols}>"


class Param(Mat):
    """A named trainable leaf; its grad persists across tape walks."""

    __slots__ = ()

    def __init__(self, name: str, data):
        super().__init__(data, name=name)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)


def _accum(node: Mat, g: np.ndarray, fresh: bool = True) -> None:
    """Add a gradient contribution to a node.

    `fresh` asserts the closure allocated `g` itself (not a view of or alias
    to another node's grad), which lets the first contribution be adopted
    without a defensive copy.
    """
    if node.grad is None:
        node.grad = g if fresh else g.copy()
    else:
        node.grad += g


# -- forward ops -------------------------------------------------------------


def matmul(a: Mat, b: Mat) -> Mat:
    if a.cols != b.rows:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    _require_finite(a.data, "matmul")
    _require_finite(b.data, "matmul")
    out = Mat(a.data @ b.data, parents=(a, b))

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = backward
    return out


def add(a: Mat, b: Mat) -> Mat:
    """Elementwise add; b may also be a [1, cols] row bias."""
    _require_finite(a.data, "add")
    _require_finite(b.data, "add")
    if a.data.shape == b.data.shape:
        broadcast = False
    elif b.data.shape == (1, a.cols):
        broadcast = True
    else:
        raise ShapeMismatch(f"add {a.data.shape} + {b.data.shape}")
    out = Mat(a.data + b.data, parents=(a, b))

    def backward(g):
        _accum(a, g, fresh=False)
        if broadcast:
            _accum(b, g.sum(axis=0, keepdims=True))
        else:
            _accum(b, g, fresh=False)

    out._backward = backward
    return out


def scale(a: Mat, s: float) -> Mat:
    _require_finite(a.data, "scale")
    s = float(s)
    out = Mat(a.data * s, parents=(a,))

    def backward(g):
        _accum(a, g * s)

    out._backward = backward
    return out


def relu(a: Mat) -> Mat:
    _require_finite(a.data, "relu")
    out = Mat(np.maximum(a.data, 0.0), parents=(a,))

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    out._backward = backward
    return out


def transpose(a: Mat) -> Mat:
    _require_finite(a.data, "transpose")
    out = Mat(a.data.T, parents=(a,))

    def backward(g):
        _accum(a, g.T, fresh=False)

    out._backward = backward
    return out


def slice_cols(a: Mat, j0: int, j1: int) -> Mat:
    if not (0 <= j0 < j1 <= a.cols):
        raise ShapeMismatch(f"slice_cols [{j0}:{j1}] of {a.data.shape}")
    out = Mat(a.data[:, j0:j1], parents=(a,))

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, j0:j1] = g
        _accum(a, full)

    out._backward = backward
    return out


def concat_cols(parts: list[Mat]) -> Mat:
    if not parts:
        raise ShapeMismatch("concat_cols of nothing")
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise ShapeMismatch("concat_cols: row counts differ")
    out = Mat(np.concatenate([p.data for p in parts], axis=1), parents=tuple(parts))
    widths = [p.cols for p in parts]

    def backward(g):
        j = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, j : j + w], fresh=False)
            j += w

    out._backward = backward
    return out


def mask_cols(a: Mat, keep: np.ndarray) -> Mat:
    """Write -inf into columns where `keep` is False (pre-softmax masking)."""
    keep = np.asarray(keep, dtype=bool).reshape(-1)
    if keep.size != a.cols:
        raise ShapeMismatch(f"mask_cols: {keep.size} flags for {a.cols} columns")
    _require_finite(a.data, "mask_cols")
    masked = np.where(keep[None, :], a.data, -np.inf)
    out = Mat(masked, parents=(a,))

    def backward(g):
        _accum(a, g * keep[None, :])

    out._backward = backward
    return out


def softmax_rows(a: Mat) -> Mat:
    """Row-wise softmax, max-shifted for stability.

    -inf entries are allowed (masked-out keys get exactly zero weight); a row
    of all -inf is rejected. NaN and +inf are rejected.
    """
    _require_finite(a.data, "softmax_rows", allow_neginf=True)
    row_max = a.data.max(axis=1, keepdims=True)
    if np.isneginf(row_max).any():
        raise NonFiniteInput("softmax_rows: row with every entry masked")
    e = np.exp(a.data - row_max)
    p = e / e.sum(axis=1, keepdims=True)
    out = Mat(p, parents=(a,))

    def backward(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        _accum(a, p * (g - dot))

    out._backward = backward
    return out


def masked_softmax_rows(a: Mat, keep: np.ndarray) -> Mat:
    """softmax_rows(mask_cols(a, keep)) fused into one node.

    Masked columns get exactly zero weight and exactly zero gradient; every
    row must keep at least one column.
    """
    keep = np.asarray(keep, dtype=bool).reshape(-1)
    if keep.size != a.cols:
        raise ShapeMismatch(f"masked_softmax_rows: {keep.size} flags for {a.cols} columns")
    if not keep.any():
        raise NonFiniteInput("masked_softmax_rows: every column masked")
    _require_finite(a.data, "masked_softmax_rows")
    kept = a.data[:, keep]
    e = np.zeros_like(a.data)
    e[:, keep] = np.exp(kept - kept.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    out = Mat(p, parents=(a,))

    def backward(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        _accum(a, p * (g - dot))

    out._backward = backward
    return out


def layer_norm_rows(a: Mat, gamma: Mat, beta: Mat, eps: float = 1e-5) -> Mat:
    if gamma.data.shape != (1, a.cols) or beta.data.shape != (1, a.cols):
        raise ShapeMismatch("layer_norm_rows: gamma/beta must be [1, cols]")
    _require_finite(a.data, "layer_norm_rows")
    _require_finite(gamma.data, "layer_norm_rows")
    _require_finite(beta.data, "layer_norm_rows")
    mu = a.data.mean(axis=1, keepdims=True)
    var = a.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Mat(xhat * gamma.data + beta.data, parents=(a, gamma, beta))
    d = a.cols

    def backward(g):
        gy = g * gamma.data
        mean_gy = gy.mean(axis=1, keepdims=True)
        mean_gy_xhat = (gy * xhat).mean(axis=1, keepdims=True)
        _accum(a, (gy - mean_gy - xhat * mean_gy_xhat) * inv)
        _accum(gamma, (g * xhat).sum(axis=0, keepdims=True))
        _accum(beta, g.sum(axis=0, keepdims=True))

    out._backward = backward
    return out


def dropout(a: Mat, p: float, rng: np.random.Generator, train: bool) -> Mat:
    """Inverted dropout; identity in eval mode (returns the input node)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p={p} outside [0, 1)")
    if not train or p == 0.0:
        return a
    _require_finite(a.data, "dropout")
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = Mat(a.data * keep, parents=(a,))

    def backward(g):
        _accum(a, g * keep)

    out._backward = backward
    return out


def mse_masked(pred: Mat, target: np.ndarray, mask: np.ndarray) -> Mat:
    """Mean squared error over mask-true cells; 0 with zero grad if none.

    `target` is a constant (no gradient flows to it); `mask` is boolean,
    either pred-shaped or a [rows, 1] per-row mask broadcast over columns.
    """
    target = _as2d(target)
    if target.shape != pred.data.shape:
        raise ShapeMismatch(f"mse_masked: target {target.shape} != pred {pred.data.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask.reshape(-1, 1)
    if mask.shape == (pred.rows, 1):
        mask = np.broadcast_to(mask, pred.data.shape)
    if mask.shape != pred.data.shape:
        raise ShapeMismatch(f"mse_masked: mask {mask.shape} != pred {pred.data.shape}")
    _require_finite(pred.data, "mse_masked")
    _require_finite(target, "mse_masked")
    n = int(mask.sum())
    if n == 0:
        out = Mat([[0.0]], parents=(pred,))
        out._backward = lambda g: _accum(pred, np.zeros_like(pred.data))
        return out
    diff = (pred.data - target) * mask
    out = Mat([[float((diff * diff).sum() / n)]], parents=(pred,))

    def backward(g):
        _accum(pred, (2.0 / n) * diff * g[0, 0])

    out._backward = backward
    return out


# -- backward ---------------------------------------------------------------


def backward(loss: Mat) -> None:
    """Reverse-walk the tape from a 1x1 loss node, accumulating grads."""
    if loss.data.shape != (1, 1):
        raise ShapeMismatch(f"backward needs a scalar loss, got {loss.data.shape}")
    topo: list[Mat] = []
    seen: set[int] = set()
    stack: list[tuple[Mat, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    loss.grad = np.ones((1, 1))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# -- optimizer ----------------------------------------------------------------


class AdamState:
    """Bias-corrected Adam over a fixed, ordered parameter list."""

    def __init__(
        self,
        params: list[Param],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self._scratch = [np.empty_like(p.data) for p in self.params]


def adam_step(state: AdamState) -> None:
    """One update from the currently accumulated grads; grads are zeroed."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for p, m, v, tmp in zip(state.params, state.m, state.v, state._scratch):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        # reuse g's buffer for g*g: the grad is zeroed right after anyway
        np.multiply(g, g, out=g)
        v *= b2
        v += (1.0 - b2) * g
        # tmp = lr/bias1 * m / (sqrt(v/bias2) + eps), built without fresh allocs
        np.divide(v, bias2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= state.lr / bias1
        p.data -= tmp
        p.zero_grad()


# -- init ---------------------------------------------------------------------


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -- gradient checking ----------------------------------------------------------


def finite_difference_check(
    build_loss,
    params: list[Param],
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `build_loss()` must rebuild the graph and return the scalar loss node.
    Relative error is |a - n| / max(|a|, |n|, 1), so tiny gradients compare
    absolutely (finite-difference noise floor sits far below 1e-4).
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a_grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = build_loss().item()
            flat[i] = orig - h
            lo = build_loss().item()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * h)
        a = a_grad.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1.0)
        worst = max(worst, float(np.max(np.abs(a - numeric) / denom)))
    return worst


# -- checkpoint io -------------------------------------------------------------
#
# magic "UBSM", u32 version, u32 config-JSON length, config JSON, then
# parameter blobs until EOF: u16 name length, name, u32 rows, u32 cols,
# float64 little-endian data.

CKPT_MAGIC = b"UBSM"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, config: dict, params: list[Param]) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<H", len(name)))
            fh.write(name)
            fh.write(struct.pack("<II", p.rows, p.cols))
            fh.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    def take(fh, n: int, what: str) -> bytes:
        buf = fh.read(n)
        if len(buf) != n:
            raise TruncatedFile(f"{path}: short read for {what}")
        return buf

    with open(path, "rb") as fh:
        if fh.read(4) != CKPT_MAGIC:
            raise BadMagic(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", take(fh, 4, "version"))
        if version != CKPT_VERSION:
            raise BadMagic(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", take(fh, 4, "config length"))
        config = json.loads(take(fh, clen, "config").decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(2)
            if not head:
                break
            if len(head) != 2:
                raise TruncatedFile(f"{path}: short read for name length")
            (nlen,) = struct.unpack("<H", head)
            name = take(fh, nlen, "name").decode("utf-8")
            rows, cols = struct.unpack("<II", take(fh, 8, "shape"))
            raw = take(fh, rows * cols * 8, f"data for {name}")
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
    return config, params
