"""Layers and losses used by the packet models.

All ops accept optional leading batch axes. Fused ops (LSTM, conv, pooling,
softmax/cross-entropy) carry hand-written backward passes.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError, DomainError, VocabularyError
from .tensor import Tensor, as_tensor, make, mul, add, sum_, unbroadcast

LOG_CLAMP = 1e-12
NORM_EPS = 1e-12


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


def linear(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x W^T + b over the last axis of ``x``."""
    x = as_tensor(x)
    _check(W.ndim == 2, f"W must be 2-d, got shape {W.shape}")
    _check(x.shape[-1] == W.shape[1],
           f"x: last extent {x.shape[-1]} does not match W input extent {W.shape[1]}")
    if b is not None:
        _check(b.shape == (W.shape[0],), f"b: shape {b.shape} does not match W output extent {W.shape[0]}")
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        gx = g @ W.data
        g2 = g.reshape(-1, g.shape[-1])
        gW = g2.T @ x.data.reshape(-1, x.shape[-1])
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return make(out, parents, backward, "linear")


def embedding(ids, E: Tensor) -> Tensor:
    """Row lookup ``E[ids]``; backward scatters into looked-up rows only."""
    ids = np.asarray(ids, dtype=np.int64)
    _check(E.ndim == 2, f"E must be 2-d, got shape {E.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        bad = ids[(ids < 0) | (ids >= E.shape[0])][0]
        raise VocabularyError(f"token id {int(bad)} outside vocabulary of size {E.shape[0]}")
    out = E.data[ids] if ids.size else np.zeros(ids.shape + (E.shape[1],), dtype=E.dtype)

    def backward(g):
        gE = np.zeros_like(E.data)
        np.add.at(gE, ids.reshape(-1), g.reshape(-1, E.shape[1]))
        return (gE,)

    return make(out, (E,), backward, "embedding")


# activations -----------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # stable for large |x|
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make(np.where(mask, x.data, 0).astype(x.dtype), (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def backward(g):
        return (g * out * (1 - out),)

    return make(out, (x,), backward, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1 - out * out),)

    return make(out, (x,), backward, "tanh")


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[kind]
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None
    return fn(x)


# recurrent -------------------------------------------------------------------

def lstm(x, w_ih: Tensor, w_hh: Tensor, b: Tensor, h0=None, c0=None, mask=None,
         reverse: bool = False):
    """Run an LSTM over ``x`` of shape ``(L, d_in)`` or ``(B, L, d_in)``.

    Gates are stacked in the order input, forget, cell, output. Where ``mask``
    is false the state is carried through unchanged and the output is zero.
    Returns ``(h_seq, h_last, c_last)``; ``h_seq`` is differentiable, the
    final state is returned as constants (truncation point for BPTT).
    """
    x = as_tensor(x)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    _check(xd.ndim == 3, f"x_seq must be (L, d) or (B, L, d), got {x.shape}")
    B, L, d_in = xd.shape
    H = w_hh.shape[1]
    _check(L >= 1, "x_seq must contain at least one step")
    _check(w_ih.shape == (4 * H, d_in), f"w_ih: expected {(4 * H, d_in)}, got {w_ih.shape}")
    _check(w_hh.shape == (4 * H, H), f"w_hh: expected {(4 * H, H)}, got {w_hh.shape}")
    _check(b.shape == (4 * H,), f"b: expected {(4 * H,)}, got {b.shape}")
    dtype = np.result_type(xd.dtype, w_ih.dtype)

    def _state(s):
        if s is None:
            return np.zeros((B, H), dtype=dtype)
        s = np.asarray(s.data if isinstance(s, Tensor) else s, dtype=dtype)
        s = np.broadcast_to(s, (B, H)) if s.ndim == 1 else s
        _check(s.shape == (B, H), f"initial state: expected {(B, H)}, got {s.shape}")
        return s

    h, c = _state(h0), _state(c0)
    if mask is None:
        m = None
    else:
        m = np.asarray(mask, dtype=bool)
        m = m[None] if m.ndim == 1 else m
        _check(m.shape == (B, L), f"mask: expected {(B, L)}, got {m.shape}")

    pre_x = xd @ w_ih.data.T + b.data  # (B, L, 4H)
    steps = range(L - 1, -1, -1) if reverse else range(L)
    gates = np.empty((B, L, 4 * H), dtype=dtype)
    cells = np.empty((B, L, H), dtype=dtype)
    h_prev = np.empty((B, L, H), dtype=dtype)
    c_prev = np.empty((B, L, H), dtype=dtype)
    out = np.zeros((B, L, H), dtype=dtype)
    W_hhT = np.ascontiguousarray(w_hh.data.T)
    full = None if m is None else m.all(axis=0)
    for t in steps:
        h_prev[:, t] = h
        c_prev[:, t] = c
        a = h @ W_hhT
        a += pre_x[:, t]
        act = gates[:, t]
        # sigmoid(x) = (1 + tanh(x / 2)) / 2 is overflow-free
        np.multiply(a, 0.5, out=act)
        np.tanh(act, out=act)
        act *= 0.5
        act += 0.5
        np.tanh(a[:, 2 * H:3 * H], out=act[:, 2 * H:3 * H])
        c_new = cells[:, t]
        np.multiply(act[:, H:2 * H], c, out=c_new)
        c_new += act[:, :H] * act[:, 2 * H:3 * H]
        h_new = act[:, 3 * H:] * np.tanh(c_new)
        if m is None or full[t]:
            h, c = h_new, c_new.copy()
            out[:, t] = h_new
        else:
            mt = m[:, t, None]
            h = np.where(mt, h_new, h)
            c = np.where(mt, c_new, c)
            out[:, t] = np.where(mt, h_new, 0)

    def backward(g):
        g = g[None] if squeeze else g
        i = gates[..., :H]
        f = gates[..., H:2 * H]
        gg = gates[..., 2 * H:3 * H]
        o = gates[..., 3 * H:]
        tc = np.tanh(cells)
        # per-step factors, vectorised over time
        dc_from_h = o * (1 - tc * tc)
        fac = np.empty((B, L, 3, H), dtype=dtype)
        fac[:, :, 0] = gg * i * (1 - i)
        fac[:, :, 1] = c_prev * f * (1 - f)
        fac[:, :, 2] = i * (1 - gg * gg)
        fac_o = tc * o * (1 - o)
        f_carry = f
        g_in = g
        keep = None
        if m is not None:
            mf = m[..., None].astype(dtype)
            g_in = g * mf
            dc_from_h = dc_from_h * mf
            fac *= mf[:, :, None]
            fac_o = fac_o * mf
            f_carry = f * mf + (1 - mf)
            keep = 1 - mf
        da_all = np.empty_like(gates)
        da3 = da_all.reshape(B, L, 4, H)
        dh_next = np.zeros((B, H), dtype=dtype)
        dc_next = np.zeros((B, H), dtype=dtype)
        W_hh = w_hh.data
        back_steps = range(L) if reverse else range(L - 1, -1, -1)
        for t in back_steps:
            dh = g_in[:, t] + dh_next
            dc = dc_next + dh * dc_from_h[:, t]
            da3[:, t, :3] = dc[:, None, :] * fac[:, t]
            da3[:, t, 3] = dh * fac_o[:, t]
            dh_next = da_all[:, t] @ W_hh
            if keep is not None:
                dh_next += dh * keep[:, t]
            dc_next = dc * f_carry[:, t]
        flat_da = da_all.reshape(-1, 4 * H)
        gx = da_all @ w_ih.data
        gW_ih = flat_da.T @ xd.reshape(-1, d_in)
        gW_hh = flat_da.T @ h_prev.reshape(-1, H)
        gb = flat_da.sum(axis=0)
        if squeeze:
            gx = gx[0]
        return gx, gW_ih, gW_hh, gb

    out_data = out[0] if squeeze else out
    h_seq = make(out_data, (x, w_ih, w_hh, b), backward, "lstm")
    h_last = h[0] if squeeze else h
    c_last = c[0] if squeeze else c
    return h_seq, Tensor(h_last.copy()), Tensor(c_last.copy())


def bilstm(x, fwd: tuple[Tensor, Tensor, Tensor], bwd: tuple[Tensor, Tensor, Tensor], mask=None) -> Tensor:
    """Sum of a left-to-right and a right-to-left LSTM pass, position by position."""
    if fwd[1].shape[1] != bwd[1].shape[1]:
        raise DimensionError(
            f"hidden size mismatch between directions: {fwd[1].shape[1]} vs {bwd[1].shape[1]}")
    h_f, _, _ = lstm(x, *fwd, mask=mask)
    h_b, _, _ = lstm(x, *bwd, mask=mask, reverse=True)
    return add(h_f, h_b)


# convolution / pooling ---------------------------------------------------------

def conv1d(x, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded cross-correlation, stride 1.

    ``x`` is ``(C_in, L)`` or ``(B, C_in, L)``; ``kernels`` is ``(C_out, C_in, k)``
    with odd ``k``.
    """
    x = as_tensor(x)
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    _check(kernels.ndim == 3, f"kernels must be (C_out, C_in, k), got {kernels.shape}")
    C_out, C_in, k = kernels.shape
    if k % 2 == 0:
        raise ConfigurationError(f"kernel size must be odd, got {k}")
    _check(xd.ndim == 3 and xd.shape[1] == C_in,
           f"x: expected (B, {C_in}, L), got {x.shape}")
    if bias is not None:
        _check(bias.shape == (C_out,), f"bias: expected {(C_out,)}, got {bias.shape}")
    B, _, L = xd.shape
    p = k // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p)))
    # cols[b, l, c, j] = xp[b, c, l + j]
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2).transpose(0, 2, 1, 3)
    K = kernels.data
    out = np.einsum("blcj,ocj->bol", cols, K, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None]

    def backward(g):
        g = g[None] if squeeze else g
        gK = np.einsum("bol,blcj->ocj", g, cols, optimize=True)
        gcols = np.einsum("bol,ocj->bclj", g, K, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j:j + L] += gcols[:, :, :, j]
        gx = gxp[:, :, p:p + L]
        if squeeze:
            gx = gx[0]
        if bias is None:
            return gx, gK
        return gx, gK, g.sum(axis=(0, 2))

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return make(out[0] if squeeze else out, parents, backward, "conv1d")


def maxpool1d(x, window: int, stride: int, pad_right: int = 0, pad_value: float = 0.0) -> Tensor:
    """Max over sliding windows along the last axis.

    Backward routes each output gradient to the first maximal element of its
    window. ``pad_right`` appends constant ``pad_value`` entries before pooling.
    """
    x = as_tensor(x)
    if window < 1 or stride < 1:
        raise ConfigurationError("window and stride must be >= 1")
    xd = x.data
    if pad_right:
        pad = [(0, 0)] * (xd.ndim - 1) + [(0, pad_right)]
        xd = np.pad(xd, pad, constant_values=pad_value)
    L = xd.shape[-1]
    L_out = (L - window) // stride + 1
    if L_out < 1:
        raise ConfigurationError(f"pooling window {window} longer than input length {L}")
    wins = np.lib.stride_tricks.sliding_window_view(xd, window, axis=-1)[..., ::stride, :][..., :L_out, :]
    arg = np.argmax(wins, axis=-1)
    out = np.take_along_axis(wins, arg[..., None], axis=-1)[..., 0]
    src = arg + (np.arange(L_out) * stride)
    L_in = x.shape[-1]

    def backward(g):
        lead = int(np.prod(g.shape[:-1]))
        gp = np.zeros((lead, L), dtype=g.dtype)
        rows = np.repeat(np.arange(lead), L_out)
        np.add.at(gp, (rows, src.reshape(-1)), g.reshape(-1))
        return (gp[:, :L_in].reshape(x.shape),)

    return make(out, (x,), backward, "maxpool1d")


# softmax and losses --------------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (x,), backward, "softmax")


def _class_indices(target, n: int, lead_shape: tuple[int, ...]) -> np.ndarray | None:
    """Validated integer targets, or None when ``target`` is given as rows over the classes."""
    t = np.asarray(target)
    if t.shape == lead_shape + (n,):
        return None
    t = t.astype(np.int64)
    if t.shape != lead_shape:
        raise DimensionError(f"target: expected class indices of shape {lead_shape}, got {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= n):
        raise DomainError(f"target class outside [0, {n})")
    return t


def cross_entropy(z: Tensor, target) -> Tensor:
    """-sum_i target_i log z_i over the last axis; ``z`` holds probabilities.

    ``target`` is either class indices or one-hot rows. When ``z`` came
    straight out of :func:`softmax` the gradient is sent to the logits as
    ``(z - target)``, which stays informative even where ``z`` underflows.
    Log arguments are clamped at 1e-12.
    """
    n = z.shape[-1]
    idx = _class_indices(target, n, z.shape[:-1])
    if idx is None:
        rows = np.asarray(target, dtype=z.dtype)
        out = -(rows * np.log(np.maximum(z.data, LOG_CLAMP))).sum(axis=-1)
    else:
        picked = np.take_along_axis(z.data, idx[..., None], axis=-1)[..., 0]
        out = -np.log(np.maximum(picked, LOG_CLAMP))

    def target_rows():
        if idx is not None:
            oh = np.zeros(z.shape, dtype=z.dtype)
            np.put_along_axis(oh, idx[..., None], 1, axis=-1)
            return oh
        return rows

    if z._op == "softmax" and z.requires_grad:
        logits = z._parents[0]
        probs = z.data

        def fused(g):
            g = np.asarray(g, dtype=probs.dtype)
            if idx is not None:
                grad = probs * g[..., None]
                hit = np.take_along_axis(grad, idx[..., None], axis=-1)
                np.put_along_axis(grad, idx[..., None], hit - g[..., None], axis=-1)
                return (grad,)
            return (g[..., None] * (probs * rows.sum(axis=-1, keepdims=True) - rows),)

        return make(out, (logits,), fused, "softmax_cross_entropy")

    def backward(g):
        oh = target_rows()
        safe = np.maximum(z.data, LOG_CLAMP)
        gz = np.where(z.data > LOG_CLAMP, -oh / safe, 0.0)
        return ((g[..., None] * gz).astype(z.dtype),)

    return make(out, (z,), backward, "cross_entropy")


def gaussian_kl(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over the last axis."""
    mu, sigma = as_tensor(mu), as_tensor(sigma)
    _check(mu.shape == sigma.shape, f"mu {mu.shape} and sigma {sigma.shape} differ in shape")
    if np.any(sigma.data <= 0):
        raise DomainError("sigma must be strictly positive")
    var = sigma.data * sigma.data
    log_var = np.log(np.maximum(var, LOG_CLAMP))
    out = -0.5 * (1 + log_var - mu.data * mu.data - var).sum(axis=-1)

    def backward(g):
        g = g[..., None]
        g_mu = g * mu.data
        dlog = np.where(var > LOG_CLAMP, 1.0 / sigma.data, 0.0)
        g_sigma = g * (sigma.data - dlog)
        return g_mu, g_sigma.astype(sigma.dtype)

    return make(out.astype(mu.dtype), (mu, sigma), backward, "gaussian_kl")


def reparameterize(mu: Tensor, sigma: Tensor, epsilon) -> Tensor:
    """h = mu + epsilon * sigma; ``epsilon`` is a constant input."""
    eps = np.asarray(epsilon.data if isinstance(epsilon, Tensor) else epsilon)
    return add(mu, mul(sigma, Tensor(eps.astype(sigma.dtype))))


def cosine_similarity(a, b) -> Tensor:
    """a.b / ((|a| + 1e-12)(|b| + 1e-12)) along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    _check(a.shape[-1] == b.shape[-1], f"operands differ in length: {a.shape[-1]} vs {b.shape[-1]}")
    na = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=-1, keepdims=True))
    da, db = na + NORM_EPS, nb + NORM_EPS
    dot = (a.data * b.data).sum(axis=-1, keepdims=True)
    cos = dot / (da * db)

    def backward(g):
        g = g[..., None]
        safe_na = np.where(na > 0, na, 1.0)
        safe_nb = np.where(nb > 0, nb, 1.0)
        ga = g * (b.data / (da * db) - cos * a.data / (safe_na * da) * (na > 0))
        gb = g * (a.data / (da * db) - cos * b.data / (safe_nb * db) * (nb > 0))
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return make(cos[..., 0], (a, b), backward, "cosine_similarity")


def masked_mean(x: Tensor, mask, axis: int = -2) -> Tensor:
    """Mean of ``x`` over ``axis`` counting only positions where ``mask`` is true."""
    m = np.asarray(mask, dtype=x.dtype)
    counts = np.maximum(m.sum(axis=-1, keepdims=True), 1)
    w = m / counts  # (..., L)
    w = np.expand_dims(w, -1) if axis == -2 else w
    return sum_(mul(x, Tensor(w)), axis=axis)
