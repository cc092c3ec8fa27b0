"""Layers, optimizer and checkpoint format used by the graybox networks.

The GRU is a single fused operation: the forward pass loops over time in
numpy and keeps the gate activations, and the backward pass runs
backpropagation-through-time over them. This avoids recording a dozen tape
nodes per time step.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from photonic_graybox import autodiff as ad
from photonic_graybox.autodiff import Tensor
from photonic_graybox.errors import ContractViolation

CHECKPOINT_MAGIC = b"PGBX"
CHECKPOINT_VERSION = 1


class Parameter(Tensor):
    """A named leaf tensor; ``trainable=False`` freezes it."""

    __slots__ = ("trainable",)

    def __init__(self, data, name: str, trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable, name=name)
        self.trainable = trainable

    def freeze(self):
        self.trainable = False
        self.requires_grad = False
        self.grad = None

    def unfreeze(self):
        self.trainable = True
        self.requires_grad = True


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass
class GruWeights:
    """Stacked GRU weights, gate order ``[update, reset, candidate]``.

    ``w_x`` is ``(d_in, 3H)``, ``w_h`` is ``(H, 3H)`` and ``b`` is ``(3H,)``;
    inputs multiply from the left (``x @ w_x``).
    """

    w_x: Parameter
    w_h: Parameter
    b: Parameter

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    @property
    def d_in(self) -> int:
        return self.w_x.shape[0]

    def parameters(self):
        return [self.w_x, self.w_h, self.b]

    @classmethod
    def init(cls, d_in: int, hidden: int, rng: np.random.Generator, prefix: str = "gru"):
        w_x = np.concatenate([glorot_uniform(rng, d_in, hidden) for _ in range(3)], axis=1)
        w_h = np.concatenate([glorot_uniform(rng, hidden, hidden) for _ in range(3)], axis=1)
        return cls(
            Parameter(w_x, f"{prefix}.w_x"),
            Parameter(w_h, f"{prefix}.w_h"),
            Parameter(np.zeros(3 * hidden), f"{prefix}.b"),
        )

    @classmethod
    def zeros(cls, d_in: int, hidden: int, prefix: str = "gru"):
        return cls(
            Parameter(np.zeros((d_in, 3 * hidden)), f"{prefix}.w_x"),
            Parameter(np.zeros((hidden, 3 * hidden)), f"{prefix}.w_h"),
            Parameter(np.zeros(3 * hidden), f"{prefix}.b"),
        )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(x, w: GruWeights, h0=None, dtype=np.float64) -> Tensor:
    """Run a GRU over a ``(B, T, d_in)`` (or ``(T, d_in)``) sequence.

    z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br),
    c = tanh(x Wc + (r * h) Uc + bc), h' = z * h + (1 - z) * c.
    Returns the hidden state at every step, shape ``(B, T, H)``.

    ``dtype`` sets the working precision of the recurrence; float32 roughly
    triples throughput on large batches. Outputs and gradients are float64.
    """
    x = ad.as_tensor(x)
    squeeze = x.ndim == 2
    xs = x.data[None] if squeeze else x.data
    if xs.ndim != 3 or xs.shape[-1] != w.d_in:
        raise ContractViolation(f"GRU expects (B, T, {w.d_in}) input, got {x.shape}")
    B, T, _ = xs.shape
    H = w.hidden
    h0 = ad.as_tensor(np.zeros((B, H)) if h0 is None else h0)
    h0_data = np.broadcast_to(h0.data, (B, H)).astype(dtype)
    xs = xs.astype(dtype, copy=False)
    wx, wh, b = (p.data.astype(dtype, copy=False) for p in w.parameters())

    # internals are time-major so every per-step slice is contiguous
    gx = np.swapaxes(xs, 0, 1) @ wx + b  # (T, B, 3H), all input terms at once
    hs = np.empty((T + 1, B, H), dtype=dtype)
    hs[0] = h0_data
    zr = np.empty((T, B, 2 * H), dtype=dtype)
    rh = np.empty((T, B, H), dtype=dtype)
    cs = np.empty((T, B, H), dtype=dtype)
    wh_zr = np.ascontiguousarray(wh[:, : 2 * H])
    wh_c = np.ascontiguousarray(wh[:, 2 * H:])
    for t in range(T):
        h = hs[t]
        zr[t] = _sigmoid(gx[t, :, : 2 * H] + h @ wh_zr)
        z = zr[t, :, :H]
        np.multiply(zr[t, :, H:], h, out=rh[t])
        cs[t] = np.tanh(gx[t, :, 2 * H:] + rh[t] @ wh_c)
        hs[t + 1] = cs[t] + z * (h - cs[t])

    out = np.swapaxes(hs[1:], 0, 1).astype(np.float64)
    if squeeze:
        out = out[0]

    def back(g):
        g = np.swapaxes(g[None] if squeeze else g, 0, 1).astype(dtype)
        d_gx = np.empty((T, B, 3 * H), dtype=dtype)
        dh = np.zeros((B, H), dtype=dtype)
        wh_zr_t = np.ascontiguousarray(wh_zr.T)
        wh_c_t = np.ascontiguousarray(wh_c.T)
        for t in range(T - 1, -1, -1):
            dh += g[t]
            h, c = hs[t], cs[t]
            z, r = zr[t, :, :H], zr[t, :, H:]
            dac = d_gx[t, :, 2 * H:]
            np.multiply(dh * (1.0 - z), 1.0 - c * c, out=dac)
            drh = dac @ wh_c_t
            da_zr = d_gx[t, :, : 2 * H]
            np.multiply(dh * (h - c), z * (1.0 - z), out=da_zr[:, :H])
            np.multiply(drh * h, r * (1.0 - r), out=da_zr[:, H:])
            dh = dh * z + drh * r + da_zr @ wh_zr_t
        flat = d_gx.reshape(T * B, 3 * H)
        d_wx = d_wh = d_b = None
        if w.w_h.requires_grad:
            d_wh = np.empty_like(wh)
            d_wh[:, : 2 * H] = hs[:T].reshape(T * B, H).T @ flat[:, : 2 * H]
            d_wh[:, 2 * H:] = rh.reshape(T * B, H).T @ flat[:, 2 * H:]
        if w.w_x.requires_grad:
            d_wx = np.swapaxes(xs, 0, 1).reshape(T * B, -1).T @ flat
        if w.b.requires_grad:
            d_b = flat.sum(axis=0)
        dx = None
        if x.requires_grad:
            dx = np.swapaxes(d_gx @ wx.T, 0, 1)
            dx = dx[0] if squeeze else dx
        d_h0 = dh if h0.shape == (B, H) else dh.sum(axis=0).reshape(h0.shape)
        f64 = lambda a: None if a is None else a.astype(np.float64)  # noqa: E731
        return f64(dx), f64(d_wx), f64(d_wh), f64(d_b), f64(d_h0)

    return ad._result(out, (x, w.w_x, w.w_h, w.b, h0), back)


def dense_timedistributed(x, weight: Tensor, bias: Tensor,
                          activation: Callable[[Tensor], Tensor] | None = None) -> Tensor:
    """``activation(x W^T + b)`` with the same ``W`` (d_out, d_in) at every step."""
    x = ad.as_tensor(x)
    if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ContractViolation(
            f"dense layer expects last dim {weight.shape[1]} and bias {(weight.shape[0],)}")
    y = ad.matmul(x, ad.swapaxes(weight, 0, 1)) + bias
    return activation(y) if activation is not None else y


def scaled_tanh(x, v_max: float) -> Tensor:
    """``0.5 * v_max * tanh(x)``; outputs stay inside ``(-v_max/2, v_max/2)``."""
    return ad.scale(ad.tanh(ad.as_tensor(x)), 0.5 * v_max)


mse_loss = ad.mse_loss


class RMSprop:
    """s <- rho s + (1 - rho) g^2 ;  p <- p - lr g / (sqrt(s) + eps)."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, rho: float = 0.9,
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.state = {p.name: np.zeros_like(p.data) for p in self.params}

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            rmsprop_step(p, p.grad, self.state, self.lr, self.rho, self.eps)


def rmsprop_step(p: Parameter, grad, state: dict, lr: float, rho: float = 0.9,
                 eps: float = 1e-8):
    """Update ``p`` in place; frozen parameters and missing gradients are
    left untouched."""
    if not p.trainable or grad is None:
        return
    s = state.setdefault(p.name, np.zeros_like(p.data))
    s *= rho
    s += (1.0 - rho) * grad * grad
    p.data -= lr * grad / (np.sqrt(s) + eps)


# -- checkpoints --------------------------------------------------------------


def save_tensors(path, tensors: dict, header: dict | None = None):
    """Write named float64 arrays behind a JSON header.

    Layout: magic, u32 version, u32 header length, header JSON, u32 count, then
    per tensor: u16 name length, name, u8 rank, u32 dims, little-endian f64
    payload.
    """
    import json

    blob = json.dumps(header or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path):
    import json

    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ContractViolation(f"{path} is not a checkpoint")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ContractViolation(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode())
        (count,) = struct.unpack("<I", fh.read(4))
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack("<H", fh.read(2))
            name = fh.read(ln).decode()
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            size = int(np.prod(shape)) if rank else 1
            tensors[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).copy()
    return header, tensors


def load_into(params: Iterable[Parameter], tensors: dict):
    """Copy stored arrays into ``params``; names and shapes must match exactly."""
    params = list(params)
    names = {p.name for p in params}
    if names != set(tensors):
        missing = sorted(names - set(tensors))
        extra = sorted(set(tensors) - names)
        raise ContractViolation(f"checkpoint mismatch: missing={missing} unexpected={extra}")
    for p in params:
        arr = tensors[p.name]
        if arr.shape != p.shape:
            raise ContractViolation(f"{p.name}: shape {arr.shape} != {p.shape}")
        p.data[...] = arr
