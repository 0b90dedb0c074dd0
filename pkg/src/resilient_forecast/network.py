"""Single-layer GRU with an affine output head, hand-derived BPTT.

All trainable state lives in one flat float64 :class:`ParameterVector`, which
is what gets checkpointed, averaged and serialised. Gate blocks are stacked
in (update, reset, candidate) order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

MAGIC = b"RFPV"
FORMAT_VERSION = 1

LossFn = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


class DivergenceError(FloatingPointError):
    """Loss or gradient became non-finite."""


@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass(frozen=True)
class NetworkConfig:
    """Sizes of the recurrent core.

    ``input_size`` is the full cell input width. An optional
    ``embedding_rows x embedding_size`` table is stored with the weights so
    that it is trained, averaged and serialised with everything else; the
    kernel itself never reads it.
    """

    input_size: int
    hidden_size: int
    head_output_size: int = 2
    embedding_rows: int = 0
    embedding_size: int = 0

    def __post_init__(self) -> None:
        for name in ("input_size", "hidden_size", "head_output_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embedding_rows < 0 or self.embedding_size < 0:
            raise ValueError("embedding dimensions must be >= 0")

    def layout(self) -> tuple[Block, ...]:
        h, i, o = self.hidden_size, self.input_size, self.head_output_size
        blocks = [
            Block("input_weights", (3 * h, i)),
            Block("recurrent_weights", (3 * h, h)),
            Block("gate_bias", (3 * h,)),
            Block("head_weights", (o, h)),
            Block("head_bias", (o,)),
        ]
        if self.embedding_rows and self.embedding_size:
            blocks.append(Block("embedding", (self.embedding_rows, self.embedding_size)))
        return tuple(blocks)


BIAS_BLOCKS = frozenset({"gate_bias", "head_bias"})


@dataclass(frozen=True, eq=False)
class ParameterVector:
    values: np.ndarray
    layout: tuple[Block, ...]

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).ravel()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", tuple(self.layout))
        expected = sum(b.size for b in self.layout)
        if values.size != expected:
            raise ValueError(f"layout describes {expected} values, got {values.size}")

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)

    __hash__ = None  # type: ignore[assignment]

    def offsets(self) -> dict[str, tuple[int, tuple[int, ...]]]:
        out, pos = {}, 0
        for b in self.layout:
            out[b.name] = (pos, b.shape)
            pos += b.size
        return out

    def block(self, name: str) -> np.ndarray:
        """Read-only view of one named block in its natural shape."""
        pos, shape = self.offsets()[name]
        size = int(np.prod(shape, dtype=np.int64))
        return self.values[pos : pos + size].reshape(shape)

    def with_values(self, values: np.ndarray) -> ParameterVector:
        return ParameterVector(values, self.layout)

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(self.layout))]
        for b in self.layout:
            name = b.name.encode("utf-8")
            parts.append(struct.pack("<I", len(name)))
            parts.append(name)
            parts.append(struct.pack(f"<I{len(b.shape)}I", len(b.shape), *b.shape))
        parts.append(self.values.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> ParameterVector:
        if data[:4] != MAGIC:
            raise ValueError("not a parameter file (bad magic)")
        version, count = struct.unpack_from("<II", data, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter file version {version}")
        pos = 12
        blocks = []
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            blocks.append(Block(name, tuple(dims)))
        total = sum(b.size for b in blocks)
        if len(data) - pos != 8 * total:
            raise ValueError("parameter file is truncated or has trailing bytes")
        values = np.frombuffer(data, dtype="<f8", count=total, offset=pos).astype(np.float64)
        return cls(values, tuple(blocks))


def save_parameters(params: ParameterVector, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params.to_bytes())


def load_parameters(path) -> ParameterVector:
    with open(path, "rb") as fh:
        return ParameterVector.from_bytes(fh.read())


def init_parameters(config: NetworkConfig, seed: int) -> ParameterVector:
    """Weights ~ U[-s, s] with s = 1/sqrt(hidden_size); biases zero."""
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(config.hidden_size)
    layout = config.layout()
    chunks = []
    for b in layout:
        if b.name in BIAS_BLOCKS:
            chunks.append(np.zeros(b.size))
        else:
            chunks.append(rng.uniform(-s, s, size=b.size))
    return ParameterVector(np.concatenate(chunks), layout)


def average_parameters(vectors: Sequence[ParameterVector]) -> ParameterVector:
    """Element-wise mean of parameter vectors sharing one layout."""
    if not vectors:
        raise ValueError("cannot average an empty list of parameter vectors")
    layout = vectors[0].layout
    for v in vectors[1:]:
        if v.layout != layout:
            raise ValueError("parameter vectors have different layouts")
    return ParameterVector(np.mean(np.stack([v.values for v in vectors]), axis=0), layout)


class Weights(NamedTuple):
    W: np.ndarray  # (3H, I)
    U: np.ndarray  # (3H, H)
    b: np.ndarray  # (3H,)
    head_W: np.ndarray  # (O, H)
    head_b: np.ndarray  # (O,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]


def unpack(params: ParameterVector) -> Weights:
    return Weights(
        params.block("input_weights"),
        params.block("recurrent_weights"),
        params.block("gate_bias"),
        params.block("head_weights"),
        params.block("head_bias"),
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def cell(w: Weights, h: np.ndarray, gx: np.ndarray):
    """GRU update given precomputed input projection ``gx = x W^T + b``.

    Returns (h_new, z, r, n).
    """
    H = w.hidden_size
    gh = h @ w.U[: 2 * H].T
    z = _sigmoid(gx[..., :H] + gh[..., :H])
    r = _sigmoid(gx[..., H : 2 * H] + gh[..., H:])
    n = np.tanh(gx[..., 2 * H :] + (r * h) @ w.U[2 * H :].T)
    return (1.0 - z) * n + z * h, z, r, n


def forward_step(params: ParameterVector, state: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One GRU step followed by the head projection.

    ``state`` has shape ``(H,)`` or ``(B, H)``; ``x`` the matching ``(I,)`` or
    ``(B, I)``. Returns the new hidden state and raw (pre-link) head output.
    """
    w = unpack(params)
    state = np.asarray(state, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.input_size:
        raise ValueError(f"input has length {x.shape[-1]}, expected {w.input_size}")
    if state.shape[-1] != w.hidden_size:
        raise ValueError(f"state has length {state.shape[-1]}, expected {w.hidden_size}")
    h, *_ = cell(w, state, x @ w.W.T + w.b)
    return h, h @ w.head_W.T + w.head_b


def backward(
    params: ParameterVector,
    inputs: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
    loss_fn: LossFn,
    h0: np.ndarray | None = None,
    return_input_grad: bool = False,
):
    """Masked loss over a full unroll and its gradient by BPTT.

    ``inputs`` is ``(T, I)`` or ``(B, T, I)``; ``targets`` and ``mask`` are
    ``(T,)`` or ``(B, T)``. ``mask`` entries are non-negative step weights
    (0/1 for plain masking). The loss is ``sum(mask * step_loss)``; steps with
    zero mask contribute exactly nothing, their targets are never read.
    ``loss_fn(raw, y) -> (step_loss, d step_loss / d raw)`` is vectorised.

    Returns ``(loss, gradient)``, plus ``d loss / d inputs`` when requested.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    single = inputs.ndim == 2
    if single:
        inputs, targets, mask = inputs[None], np.asarray(targets)[None], np.asarray(mask)[None]
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != targets.shape or mask.shape != inputs.shape[:2]:
        raise ValueError("inputs, targets and mask disagree on sequence shape")
    w = unpack(params)
    B, T, I = inputs.shape
    H = w.hidden_size
    if I != w.input_size:
        raise ValueError(f"input has length {I}, expected {w.input_size}")

    active = mask != 0.0
    if not active.any():
        grad = params.with_values(np.zeros(len(params)))
        if return_input_grad:
            dx = np.zeros_like(inputs)
            return 0.0, grad, dx[0] if single else dx
        return 0.0, grad

    GX = inputs @ w.W.T + w.b
    hs = np.empty((T + 1, B, H))
    hs[0] = 0.0 if h0 is None else h0
    zs, rs, ns = np.empty((T, B, H)), np.empty((T, B, H)), np.empty((T, B, H))
    for t in range(T):
        hs[t + 1], zs[t], rs[t], ns[t] = cell(w, hs[t], GX[:, t])
    HS = hs[1:].transpose(1, 0, 2)  # (B, T, H)
    raw = HS @ w.head_W.T + w.head_b

    safe_targets = np.where(active, targets, 0.5)
    step_loss, d_raw = loss_fn(raw, safe_targets)
    step_loss = np.where(active, step_loss, 0.0)
    loss = float(np.sum(mask * step_loss))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")
    d_raw = np.where(active[..., None], d_raw * mask[..., None], 0.0)

    d_head_W = np.einsum("bto,bth->oh", d_raw, HS)
    d_head_b = d_raw.sum(axis=(0, 1))
    dHS = d_raw @ w.head_W  # (B, T, H)

    U_zr, U_n = w.U[: 2 * H], w.U[2 * H :]
    dU = np.zeros_like(w.U)
    dGX = np.empty((B, T, 3 * H))
    dh_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev, z, r, n = hs[t], zs[t], rs[t], ns[t]
        dh = dHS[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dh_prev = dh * z
        da_n = dn * (1.0 - n * n)
        d_rh = da_n @ U_n
        dU[2 * H :] += da_n.T @ (r * h_prev)
        dr = d_rh * h_prev
        dh_prev += d_rh * r
        da_zr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
        dU[: 2 * H] += da_zr.T @ h_prev
        dh_prev += da_zr @ U_zr
        dGX[:, t, : 2 * H] = da_zr
        dGX[:, t, 2 * H :] = da_n
        dh_next = dh_prev

    dW = np.einsum("btg,bti->gi", dGX, inputs)
    db = dGX.sum(axis=(0, 1))
    parts = {
        "input_weights": dW,
        "recurrent_weights": dU,
        "gate_bias": db,
        "head_weights": d_head_W,
        "head_bias": d_head_b,
    }
    flat = np.concatenate([parts.get(b.name, np.zeros(b.shape)).ravel() for b in params.layout])
    if not np.all(np.isfinite(flat)):
        raise DivergenceError("non-finite gradient")
    grad = params.with_values(flat)
    if return_input_grad:
        dx = dGX @ w.W
        return loss, grad, dx[0] if single else dx
    return loss, grad
