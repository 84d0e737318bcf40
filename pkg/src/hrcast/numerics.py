"""Reverse-mode autodiff over numpy arrays, plus the recurrent/attention kernels,
RMSProp with global-norm clipping, checkpoint I/O, and a finite-difference checker.

Reference mode is float64 end to end; a float32 fast mode exists for training-scale
runs and is excluded from gradient acceptance. Sequence kernels (LSTM/GRU) are fused:
one graph node per sequence with a hand-written backward that recomputes gates from
the cached state sequences, keeping peak memory at two state arrays per direction.
"""
from __future__ import annotations

import json
import struct
from typing import Callable, Iterable, Sequence

import numpy as np

REFERENCE_DTYPE = np.float64
FAST_DTYPE = np.float32

_GELU_C = np.sqrt(2.0 / np.pi)


def dtype_for_mode(mode: str):
    if mode == "reference":
        return REFERENCE_DTYPE
    if mode == "fast":
        return FAST_DTYPE
    raise ValueError(f"unknown precision mode {mode!r} (expected 'reference' or 'fast')")


# ---------------------------------------------------------------------------
# tape


class Tensor:
    """A numpy array plus an optional backward closure linking it to its parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p._backward is not None or p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar (thin wrappers over module-level primitives)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _make(data, parents, backward) -> Tensor:
    if any(_needs(p) for p in parents):
        return Tensor(data, parents=tuple(parents), backward=backward)
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / structural primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if _needs(a):
            a.accumulate(_unbroadcast(g, a.shape))
        if _needs(b):
            b.accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if _needs(a):
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if _needs(b):
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd)


def square(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if _needs(a):
            a.accumulate(g * (2.0 * a.data))

    return _make(a.data * a.data, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if _needs(a):
            a.accumulate(g * out_data)

    return _make(out_data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if _needs(a):
            a.accumulate(g / a.data)

    return _make(np.log(a.data), (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if _needs(a):
            a.accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = _sigmoid(a.data)

    def bwd(g):
        if _needs(a):
            a.accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp on the negative half only; stable for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _gelu_fwd(x: np.ndarray):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), t


def _gelu_bwd(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner


def gelu(a) -> Tensor:
    """tanh-approximation GELU (exact erf form not needed anywhere)."""
    a = as_tensor(a)
    out_data, t = _gelu_fwd(a.data)

    def bwd(g):
        if _needs(a):
            a.accumulate(g * _gelu_bwd(a.data, t))

    return _make(out_data, (a,), bwd)


def matmul(a, b) -> Tensor:
    """2D @ 2D, or 3D @ 2D (batched over the leading axis)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (2, 3):
        raise ValueError(f"matmul supports 2D/3D @ 2D, got {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if _needs(a):
            a.accumulate(g @ b.data.T)
        if _needs(b):
            if a.ndim == 3:
                k = a.shape[-1]
                b.accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                b.accumulate(a.data.T @ g)

    return _make(out_data, (a, b), bwd)


def bmm(a, b) -> Tensor:
    """(B,M,K) @ (B,K,N) batched matmul."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if _needs(a):
            a.accumulate(g @ np.swapaxes(b.data, -1, -2))
        if _needs(b):
            b.accumulate(np.swapaxes(a.data, -1, -2) @ g)

    return _make(out_data, (a, b), bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)

    def bwd(g):
        if _needs(a):
            a.accumulate(np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if _needs(a):
            a.accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if _needs(a):
            a.accumulate(_unbroadcast(g, a.shape))

    return _make(np.broadcast_to(a.data, shape), (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if _needs(p):
                p.accumulate(piece)

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, bwd)


def take(a, idx) -> Tensor:
    """Basic slicing / integer indexing with scatter-add backward."""
    a = as_tensor(a)
    out_data = a.data[idx]

    def bwd(g):
        if _needs(a):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)

    return _make(out_data, (a,), bwd)


def gather_rows(table, indices) -> Tensor:
    """Embedding lookup: table (V,E), indices int array -> (..., E)."""
    table = as_tensor(table)
    idx = np.asarray(indices)
    out_data = table.data[idx]

    def bwd(g):
        if _needs(table):
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx.reshape(-1), g.reshape(-1, table.shape[1]))

    return _make(out_data, (table,), bwd)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if _needs(a):
            if axis is None:
                a.accumulate(np.broadcast_to(g, a.shape).copy())
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                a.accumulate(np.broadcast_to(ge, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis, keepdims), 1.0 / n)


def masked_fill(a, mask, value) -> Tensor:
    """Set entries where mask is True to `value`; their gradient is exactly zero."""
    a = as_tensor(a)
    mask = np.asarray(mask, bool)
    out_data = np.where(mask, np.asarray(value, a.dtype), a.data)

    def bwd(g):
        if _needs(a):
            a.accumulate(np.where(mask, 0.0, g))

    return _make(out_data, (a,), bwd)


def softmax(a, axis=-1) -> Tensor:
    """Stable softmax; -inf logits produce exactly zero weight."""
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all -inf row would poison the shift
    e = np.exp(a.data - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        if _needs(a):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            a.accumulate(out_data * (g - inner))

    return _make(out_data, (a,), bwd)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_keep = m + np.log(s)
    soft = e / s

    def bwd(g):
        if _needs(a):
            ge = g if keepdims else np.expand_dims(g, axis)
            a.accumulate(ge * soft)

    out_data = out_keep if keepdims else np.squeeze(out_keep, axis=axis)
    return _make(out_data, (a,), bwd)


def l2_normalize(a, axis=-1, eps=0.0) -> Tensor:
    """Rows scaled to unit Euclidean norm; errors on an exactly zero row."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if np.any(norm == 0.0):
        raise ValueError("cannot l2-normalize a zero vector")
    out_data = a.data / (norm + eps)

    def bwd(g):
        if _needs(a):
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a.accumulate((g - out_data * dot) / (norm + eps))

    return _make(out_data, (a,), bwd)


def dropout(a, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scaling happens at train time, eval is the identity."""
    if not training or p <= 0.0:
        return as_tensor(a)
    a = as_tensor(a)
    keep = (rng.random(a.shape) >= p).astype(a.dtype)
    return mul(a, keep / (1.0 - p))


def affine(x, w, b) -> Tensor:
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# fused recurrent kernels
#
# Layout: Wx (Din, G*H), Wh (H, G*H), bias (G*H,). LSTM gate order i,f,g,o;
# GRU gate order r,z,n with the candidate's recurrent term gated by r before
# the nonlinearity (separate hidden-side bias bh for the candidate).


def _lstm_gates(pre: np.ndarray, H: int):
    i = _sigmoid(pre[:, :H])
    f = _sigmoid(pre[:, H : 2 * H])
    g = np.tanh(pre[:, 2 * H : 3 * H])
    o = _sigmoid(pre[:, 3 * H :])
    return i, f, g, o


def lstm_seq(x, wx, wh, b, h0=None, c0=None, reverse: bool = False) -> Tensor:
    """Run an LSTM over (B,T,Din); returns hidden states (B,T,H) in time order.

    `reverse=True` scans right-to-left (outputs still stored at their time index),
    so h_seq[:, 0] is the last state computed. Backward recomputes gates from the
    cached h/c sequences instead of caching the gate activations.
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    B, T, Din = x.shape
    H = wh.shape[0]
    if wx.shape != (Din, 4 * H) or wh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ValueError(
            f"lstm_seq shapes inconsistent: x {x.shape}, wx {wx.shape}, wh {wh.shape}, b {b.shape}"
        )
    dt = x.dtype
    h_prev = np.zeros((B, H), dt) if h0 is None else np.asarray(h0, dt)
    c_prev = np.zeros((B, H), dt) if c0 is None else np.asarray(c0, dt)

    steps = range(T - 1, -1, -1) if reverse else range(T)
    xw = x.data.reshape(-1, Din) @ wx.data + b.data  # (B*T, 4H), reused per step
    xw = xw.reshape(B, T, 4 * H)
    h_seq = np.empty((B, T, H), dt)
    c_seq = np.empty((B, T, H), dt)
    h0_arr, c0_arr = h_prev, c_prev
    for t in steps:
        pre = xw[:, t] + h_prev @ wh.data
        i, f, g, o = _lstm_gates(pre, H)
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)
        h_seq[:, t] = h_prev
        c_seq[:, t] = c_prev
    del xw

    def bwd(grad):
        dh_next = np.zeros((B, H), dt)
        dc_next = np.zeros((B, H), dt)
        dpre_all = np.empty((B, T, 4 * H), dt)
        # one big matmul instead of T small ones inside the loop
        xw_b = (x.data.reshape(-1, Din) @ wx.data + b.data).reshape(B, T, 4 * H)
        order = list(steps)
        for k in range(len(order) - 1, -1, -1):
            t = order[k]
            hp = h0_arr if k == 0 else h_seq[:, order[k - 1]]
            cp = c0_arr if k == 0 else c_seq[:, order[k - 1]]
            # recompute gates for step t
            pre = xw_b[:, t] + hp @ wh.data
            i, f, g, o = _lstm_gates(pre, H)
            ct = c_seq[:, t]
            tc = np.tanh(ct)
            dh = grad[:, t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            df = dc * cp
            dg = dc * i
            dpre = dpre_all[:, t]
            dpre[:, :H] = di * i * (1.0 - i)
            dpre[:, H : 2 * H] = df * f * (1.0 - f)
            dpre[:, 2 * H : 3 * H] = dg * (1.0 - g * g)
            dpre[:, 3 * H :] = do * o * (1.0 - o)
            dh_next = dpre @ wh.data.T
            dc_next = dc * f
        flat_dpre = dpre_all.reshape(-1, 4 * H)
        if _needs(x):
            x.accumulate((flat_dpre @ wx.data.T).reshape(B, T, Din))
        if _needs(wx):
            wx.accumulate(x.data.reshape(-1, Din).T @ flat_dpre)
        if _needs(wh):
            hshift = np.empty((B, T, H), dt)
            for k, t in enumerate(order):
                hshift[:, t] = h0_arr if k == 0 else h_seq[:, order[k - 1]]
            wh.accumulate(hshift.reshape(-1, H).T @ flat_dpre)
        if _needs(b):
            b.accumulate(flat_dpre.sum(axis=0))

    return _make(h_seq, (x, wx, wh, b), bwd)


def lstm_cell(x, h, c, wx, wh, b):
    """Single LSTM step; returns (h', c'). Composed from primitives — the fused
    path is only worth it over full sequences."""
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    wx, wh, b = as_tensor(wx), as_tensor(wh), as_tensor(b)
    H = wh.shape[0]
    if x.shape[-1] != wx.shape[0] or h.shape[-1] != H or c.shape[-1] != H:
        raise ValueError("lstm_cell dimension mismatch")
    pre = add(add(matmul(x, wx), matmul(h, wh)), b)
    i = sigmoid(take(pre, (slice(None), slice(0, H))))
    f = sigmoid(take(pre, (slice(None), slice(H, 2 * H))))
    g = tanh(take(pre, (slice(None), slice(2 * H, 3 * H))))
    o = sigmoid(take(pre, (slice(None), slice(3 * H, None))))
    c_new = add(mul(f, c), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


def _gru_gates(pre_x: np.ndarray, pre_h: np.ndarray, H: int):
    r = _sigmoid(pre_x[:, :H] + pre_h[:, :H])
    z = _sigmoid(pre_x[:, H : 2 * H] + pre_h[:, H : 2 * H])
    n = np.tanh(pre_x[:, 2 * H :] + r * pre_h[:, 2 * H :])
    return r, z, n


def gru_seq(x, wx, wh, bx, bh, h0=None, slot_mask=None) -> Tensor:
    """GRU over (B,N,Din) -> (B,N,H); h' = (1-z)*n + z*h.

    slot_mask (B,N) in {0,1}: steps with mask 0 pass the previous state through
    unchanged (used for left-padded history slots).
    """
    x, wx, wh = as_tensor(x), as_tensor(wx), as_tensor(wh)
    bx, bh = as_tensor(bx), as_tensor(bh)
    B, N, Din = x.shape
    H = wh.shape[0]
    if wx.shape != (Din, 3 * H) or wh.shape != (H, 3 * H):
        raise ValueError("gru_seq shapes inconsistent")
    dt = x.dtype
    mask = None if slot_mask is None else np.asarray(slot_mask, dt)
    h_prev = np.zeros((B, H), dt) if h0 is None else np.asarray(h0, dt)
    h0_arr = h_prev
    h_seq = np.empty((B, N, H), dt)
    # N is tiny (history depth), so gate activations are cached directly
    rs = np.empty((B, N, H), dt)
    zs = np.empty((B, N, H), dt)
    ns = np.empty((B, N, H), dt)
    pre_h_n = np.empty((B, N, H), dt)
    for t in range(N):
        pre_x = x.data[:, t] @ wx.data + bx.data
        pre_h = h_prev @ wh.data + bh.data
        r, z, n = _gru_gates(pre_x, pre_h, H)
        h_new = (1.0 - z) * n + z * h_prev
        if mask is not None:
            m = mask[:, t][:, None]
            h_new = m * h_new + (1.0 - m) * h_prev
        rs[:, t], zs[:, t], ns[:, t] = r, z, n
        pre_h_n[:, t] = pre_h[:, 2 * H :]
        h_seq[:, t] = h_new
        h_prev = h_new

    def bwd(grad):
        dh_next = np.zeros((B, H), dt)
        dpx_all = np.empty((B, N, 3 * H), dt)
        dph_all = np.empty((B, N, 3 * H), dt)
        for t in range(N - 1, -1, -1):
            hp = h0_arr if t == 0 else h_seq[:, t - 1]
            r, z, n = rs[:, t], zs[:, t], ns[:, t]
            dh = grad[:, t] + dh_next
            if mask is not None:
                m = mask[:, t][:, None]
                dh_carry = dh * (1.0 - m)
                dh = dh * m
            else:
                dh_carry = 0.0
            dz = dh * (hp - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            da_n = dn * (1.0 - n * n)  # pre-tanh of candidate
            dr = da_n * pre_h_n[:, t]
            dpx = dpx_all[:, t]
            dph = dph_all[:, t]
            dpx[:, :H] = dr * r * (1.0 - r)
            dpx[:, H : 2 * H] = dz * z * (1.0 - z)
            dpx[:, 2 * H :] = da_n
            dph[:, :H] = dpx[:, :H]
            dph[:, H : 2 * H] = dpx[:, H : 2 * H]
            dph[:, 2 * H :] = da_n * r
            dh_next = dh_prev + dph @ wh.data.T + dh_carry
        flat_dpx = dpx_all.reshape(-1, 3 * H)
        flat_dph = dph_all.reshape(-1, 3 * H)
        if _needs(x):
            x.accumulate((flat_dpx @ wx.data.T).reshape(B, N, Din))
        if _needs(wx):
            wx.accumulate(x.data.reshape(-1, Din).T @ flat_dpx)
        if _needs(wh):
            hshift = np.concatenate([h0_arr[:, None], h_seq[:, :-1]], axis=1)
            wh.accumulate(hshift.reshape(-1, H).T @ flat_dph)
        if _needs(bx):
            bx.accumulate(flat_dpx.sum(axis=0))
        if _needs(bh):
            bh.accumulate(flat_dph.sum(axis=0))

    return _make(h_seq, (x, wx, wh, bx, bh), bwd)


def gru_cell(x, h, wx, wh, bx, bh) -> Tensor:
    """Single GRU step on (B,Din),(B,H); returns h' = (1-z)*n + z*h."""
    x, h = as_tensor(x), as_tensor(h)
    wx, wh, bx, bh = as_tensor(wx), as_tensor(wh), as_tensor(bx), as_tensor(bh)
    H = wh.shape[0]
    px = add(matmul(x, wx), bx)
    ph = add(matmul(h, wh), bh)
    cols = lambda t, a, b_: take(t, (slice(None), slice(a, b_)))
    r = sigmoid(add(cols(px, 0, H), cols(ph, 0, H)))
    z = sigmoid(add(cols(px, H, 2 * H), cols(ph, H, 2 * H)))
    n = tanh(add(cols(px, 2 * H, 3 * H), mul(r, cols(ph, 2 * H, 3 * H))))
    return add(n, mul(z, add(h, mul(n, -1.0))))


def bilstm(x, params: dict, prefix: str) -> Tensor:
    """Bidirectional LSTM: concat of forward and reverse hidden sequences (B,T,2H)."""
    fwd = lstm_seq(x, params[f"{prefix}.fwd.wx"], params[f"{prefix}.fwd.wh"], params[f"{prefix}.fwd.b"])
    bwd_ = lstm_seq(
        x, params[f"{prefix}.bwd.wx"], params[f"{prefix}.bwd.wh"], params[f"{prefix}.bwd.b"], reverse=True
    )
    return concat([fwd, bwd_], axis=2)


def multi_head_attention(query, keys, values, mask, params: dict, prefix: str, n_heads: int) -> Tensor:
    """Scaled-dot-product attention, batched single query.

    query (B,Dm), keys/values (B,N,Dm), mask (B,N) boolean with True = attend.
    Masked positions get exactly zero weight; an all-masked row is an error.
    """
    query, keys, values = as_tensor(query), as_tensor(keys), as_tensor(values)
    mask = np.asarray(mask, bool)
    if not np.all(mask.any(axis=1)):
        raise ValueError("attention received a fully masked key set")
    B, N, Dm = keys.shape
    if Dm % n_heads:
        raise ValueError(f"head count {n_heads} must divide model dim {Dm}")
    dh = Dm // n_heads
    q = matmul(query, params[f"{prefix}.wq"])  # (B,Dm)
    k = matmul(keys, params[f"{prefix}.wk"])  # (B,N,Dm)
    v = matmul(values, params[f"{prefix}.wv"])
    qh = transpose(reshape(q, (B, n_heads, 1, dh)), (0, 1, 2, 3))
    kh = transpose(reshape(k, (B, N, n_heads, dh)), (0, 2, 1, 3))
    vh = transpose(reshape(v, (B, N, n_heads, dh)), (0, 2, 1, 3))
    qh = reshape(qh, (B * n_heads, 1, dh))
    kh = reshape(kh, (B * n_heads, N, dh))
    vh = reshape(vh, (B * n_heads, N, dh))
    scores = mul(bmm(qh, transpose(kh, (0, 2, 1))), 1.0 / np.sqrt(dh))  # (B*h,1,N)
    bad = ~np.repeat(mask[:, None, None, :], n_heads, axis=1).reshape(B * n_heads, 1, N)
    scores = masked_fill(scores, bad, -np.inf)
    weights = softmax(scores, axis=-1)
    ctx = bmm(weights, vh)  # (B*h,1,dh)
    ctx = reshape(ctx, (B, n_heads * dh))
    return matmul(ctx, params[f"{prefix}.wo"])


def feed_forward(x, params: dict, prefix: str, drop_p: float = 0.0, rng=None, training: bool = False) -> Tensor:
    """affine -> GELU -> (inverted dropout in training) -> affine."""
    h = gelu(affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    if training and drop_p > 0.0:
        h = dropout(h, drop_p, rng, training=True)
    return affine(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


class ParameterStore:
    """Named parameter tensors with a stable iteration order."""

    def __init__(self, dtype=REFERENCE_DTYPE):
        self.dtype = np.dtype(dtype)
        self._slots: dict[str, Tensor] = {}

    def add(self, path: str, shape, rng: np.random.Generator | None = None,
            fan_in: int | None = None, fill=None, data=None) -> Tensor:
        if path in self._slots:
            raise ValueError(f"duplicate parameter path {path!r}")
        if data is not None:
            arr = np.asarray(data, self.dtype).reshape(shape)
        elif fill is not None:
            arr = np.full(shape, fill, dtype=self.dtype)
        else:
            fi = fan_in if fan_in is not None else shape[0]
            bound = 1.0 / np.sqrt(max(fi, 1))
            arr = rng.uniform(-bound, bound, size=shape).astype(self.dtype)
        t = Tensor(arr, requires_grad=True)
        self._slots[path] = t
        return t

    def add_lstm(self, prefix: str, din: int, hidden: int, rng: np.random.Generator) -> None:
        self.add(f"{prefix}.wx", (din, 4 * hidden), rng, fan_in=din)
        self.add(f"{prefix}.wh", (hidden, 4 * hidden), rng, fan_in=hidden)
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0  # forget-gate bias starts open
        self.add(f"{prefix}.b", (4 * hidden,), data=b)

    def add_bilstm(self, prefix: str, din: int, hidden: int, rng: np.random.Generator) -> None:
        self.add_lstm(f"{prefix}.fwd", din, hidden, rng)
        self.add_lstm(f"{prefix}.bwd", din, hidden, rng)

    def add_gru(self, prefix: str, din: int, hidden: int, rng: np.random.Generator) -> None:
        self.add(f"{prefix}.wx", (din, 3 * hidden), rng, fan_in=din)
        self.add(f"{prefix}.wh", (hidden, 3 * hidden), rng, fan_in=hidden)
        self.add(f"{prefix}.bx", (3 * hidden,), rng, fill=0.0)
        self.add(f"{prefix}.bh", (3 * hidden,), rng, fill=0.0)

    def add_ffn(self, prefix: str, din: int, hidden: int, dout: int, rng: np.random.Generator) -> None:
        self.add(f"{prefix}.w1", (din, hidden), rng, fan_in=din)
        self.add(f"{prefix}.b1", (hidden,), rng, fill=0.0)
        self.add(f"{prefix}.w2", (hidden, dout), rng, fan_in=hidden)
        self.add(f"{prefix}.b2", (dout,), rng, fill=0.0)

    def __getitem__(self, path: str) -> Tensor:
        return self._slots[path]

    def __contains__(self, path: str) -> bool:
        return path in self._slots

    def paths(self) -> list[str]:
        return list(self._slots)

    def items(self):
        return self._slots.items()

    def zero_grad(self) -> None:
        for t in self._slots.values():
            t.grad = None

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self._slots.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._slots.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._slots) ^ set(state)
        if missing:
            raise ValueError(f"parameter paths mismatch: {sorted(missing)}")
        for k, v in state.items():
            arr = np.asarray(v, self.dtype)
            if arr.shape != self._slots[k].data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {self._slots[k].data.shape}")
            self._slots[k].data = arr.copy()


def clip_global_norm(grads: dict[str, np.ndarray], threshold: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients by threshold/norm when the global norm exceeds it."""
    sq = 0.0
    for g in grads.values():
        sq += float(np.sum(g.astype(np.float64) ** 2))
    norm = np.sqrt(sq)
    if norm > threshold:
        scale = threshold / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


class RMSProp:
    """RMSProp with global-norm clipping applied before the accumulator update."""

    def __init__(self, store: ParameterStore, lr: float = 0.01, decay: float = 0.99,
                 eps: float = 1e-8, clip: float = 2.0):
        self.store = store
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.clip = clip
        self.acc = {k: np.zeros_like(t.data) for k, t in store.items()}

    def step(self) -> float:
        grads = {}
        for k, t in self.store.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {k!r}")
            grads[k] = g
        grads, norm = clip_global_norm(grads, self.clip)
        for k, t in self.store.items():
            g = grads[k]
            acc = self.acc[k]
            acc *= self.decay
            acc += (1.0 - self.decay) * g * g
            t.data = t.data - self.lr * g / (np.sqrt(acc) + self.eps)
        return float(norm)


CHECKPOINT_MAGIC = b"HRCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    """Binary container: magic, version, float width, name->shape->payload, JSON tail."""
    widths = {a.dtype.itemsize for a in arrays.values()}
    if len(widths) > 1:
        raise ValueError("mixed float widths in one checkpoint")
    width = widths.pop() if widths else 8
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IBI", CHECKPOINT_VERSION, width, len(arrays)))
        for name in arrays:
            arr = np.ascontiguousarray(arrays[name])
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype(f"<f{width}", copy=False).tobytes())
        meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, width, count = struct.unpack("<IBI", fh.read(9))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(n * width), dtype=f"<f{width}").reshape(shape)
            arrays[name] = data.copy()
        (mlen,) = struct.unpack("<I", fh.read(4))
        metadata = json.loads(fh.read(mlen).decode("utf-8"))
    return arrays, metadata


# ---------------------------------------------------------------------------
# finite differences


def grad_check(fn: Callable[[], Tensor], tensors: Iterable[Tensor], n_probes: int = 100,
               step: float = 1e-4, rng: np.random.Generator | None = None) -> dict:
    """Compare reverse-mode gradients against central differences.

    Probes n random coordinates of the given tensors; relative error uses
    max(|analytic|, |numeric|, 1e-4) as the scale so near-zero gradients are
    compared absolutely at the probe-step scale.
    """
    rng = rng or np.random.default_rng(0)
    tensors = [t for t in tensors if t.data.dtype == np.float64]
    if not tensors:
        raise ValueError("grad_check needs float64 tensors")
    def evaluate() -> float:
        out = fn()
        if out.data.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        return float(out.data.reshape(()))

    for t in tensors:
        t.grad = None
    out = fn()
    if out.data.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = [np.array(t.grad, copy=True) if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    max_err = 0.0
    worst = None
    for _ in range(n_probes):
        ti = int(rng.integers(len(tensors)))
        t = tensors[ti]
        flat = t.data.reshape(-1)
        ci = int(rng.integers(flat.size))
        keep = flat[ci]
        flat[ci] = keep + step
        f_plus = evaluate()
        flat[ci] = keep - step
        f_minus = evaluate()
        flat[ci] = keep
        numeric = (f_plus - f_minus) / (2.0 * step)
        ana = float(analytic[ti].reshape(-1)[ci])
        err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-4)
        if err > max_err:
            max_err = err
            worst = (ti, ci, ana, numeric)
    return {"max_rel_err": max_err, "n_probes": n_probes, "worst": worst}
