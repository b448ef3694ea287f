"""Forward/backward kernels for the layers the classifier needs.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Inputs are never modified.
"""
from __future__ import annotations

import numpy as np

sliding = np.lib.stride_tricks.sliding_window_view


class NumericError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


def check_finite(a: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"non-finite values in {where}")
    return a


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for any finite x
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- convolution ------------------------------------------------------------

def conv2d_forward(x, w, b=None, pad=(0, 0)):
    """Stride-1 cross-correlation with zero padding.

    x: N x C x H x W, w: O x C x kh x kw, b: O or None.
    Output N x O x (H + 2 ph - kh + 1) x (W + 2 pw - kw + 1).
    """
    n, c, h, wd = x.shape
    o, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"input has {c} channels, kernel expects {c2}")
    ph, pw = pad
    if kh > h + 2 * ph or kw > wd + 2 * pw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{wd + 2 * pw}")
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    ho, wo = h + 2 * ph - kh + 1, wd + 2 * pw - kw + 1
    cols = sliding(xp, (kh, kw), axis=(2, 3))  # n c ho wo kh kw
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    if b is not None:
        out += b
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), (x.shape, w, cols, pad, b is not None)


def conv2d_backward(dout, cache):
    """Returns (dx, dw, db); db is None when the layer has no bias."""
    (n, c, h, wd), w, cols, (ph, pw), has_bias = cache
    o, _, kh, kw = w.shape
    ho, wo = dout.shape[2], dout.shape[3]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0) if has_bias else None
    dcols = (d2 @ w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + ho, j : j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, ph : ph + h, pw : pw + wd]
    return np.ascontiguousarray(dx), dw, db


# --- pooling ----------------------------------------------------------------

def maxpool_forward(x, pool_h=8):
    """Sliding max of height ``pool_h``, stride 1, over the second-to-last axis.

    Ties resolve to the lowest index.
    """
    f = x.shape[-2]
    if f < pool_h:
        raise ValueError(f"feature axis {f} shorter than pool size {pool_h}")
    win = sliding(x, pool_h, axis=-2)  # ... x (f - p + 1) x t x p
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, pool_h)


def maxpool_backward(dout, cache):
    shape, arg, pool_h = cache
    dx = np.zeros(shape)
    fo = dout.shape[-2]
    for k in range(pool_h):
        dx[..., k : k + fo, :] += np.where(arg == k, dout, 0.0)
    return dx


# --- activations ------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, mask):
    return dout * mask


# --- dense ------------------------------------------------------------------

def dense_forward(x, w, b, activation=None):
    """x: N x D, w: H x D, b: H. ``activation`` is None or 'sigmoid'."""
    if x.shape[-1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    z = x @ w.T + b
    if activation == "sigmoid":
        out = sigmoid(z)
    elif activation is None:
        out = z
    else:
        raise ValueError(f"unknown activation {activation!r}")
    return out, (x, w, out, activation)


def dense_backward(dout, cache):
    x, w, out, activation = cache
    dz = dout * out * (1.0 - out) if activation == "sigmoid" else dout
    return dz @ w, dz.T @ x, dz.sum(axis=0)


# --- batch normalization ----------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.99


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, eps=BN_EPS, momentum=BN_MOMENTUM):
    """Normalize x (N x D) per column.

    In train mode the batch statistics are used and updated copies of the
    running statistics are returned alongside; in infer mode the running
    statistics are used as given.
    """
    if train:
        if x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs at least 2 rows")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        new_mean = momentum * running_mean + (1 - momentum) * mu
        new_var = momentum * running_var + (1 - momentum) * var
    else:
        mu, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = gamma * xhat + beta
    return out, (xhat, inv, gamma, train), (new_mean, new_var)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if train:
        n = dout.shape[0]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv
    return dx, dgamma, dbeta


# --- dropout ----------------------------------------------------------------

def dropout_forward(x, p, train, rng=None):
    """Inverted dropout; identity in infer mode or when p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# --- GRU --------------------------------------------------------------------

GRU_PARAMS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")


def gru_forward(x, p, h0=None):
    """Single GRU layer over a batch of sequences.

    x: N x T x D; p maps GRU_PARAMS to arrays with W*: H x D, U*: H x H,
    b*: H. Returns all hidden states, N x T x H.

        z = sigmoid(Wz x + Uz h + bz)
        r = sigmoid(Wr x + Ur h + br)
        c = tanh(Wh x + Uh (r * h) + bh)
        h' = (1 - z) h + z c
    """
    n, t_len, d = x.shape
    hsz = p["Uz"].shape[0]
    for name in ("Wz", "Wr", "Wh"):
        if p[name].shape != (hsz, d):
            raise ValueError(f"{name} has shape {p[name].shape}, expected {(hsz, d)}")
    for name in ("Uz", "Ur", "Uh"):
        if p[name].shape != (hsz, hsz):
            raise ValueError(f"{name} has shape {p[name].shape}, expected {(hsz, hsz)}")
    w_all = np.concatenate([p["Wz"], p["Wr"], p["Wh"]])  # 3H x D
    b_all = np.concatenate([p["bz"], p["br"], p["bh"]])
    u_zr = np.concatenate([p["Uz"], p["Ur"]])  # 2H x H
    uh = p["Uh"]

    xw = (x.reshape(n * t_len, d) @ w_all.T + b_all).reshape(n, t_len, 3 * hsz)
    h = np.zeros((n, hsz)) if h0 is None else h0
    hs = np.empty((n, t_len, hsz))
    zs, rs, cs = (np.empty((n, t_len, hsz)) for _ in range(3))
    for t in range(t_len):
        a = xw[:, t]
        zr = sigmoid(a[:, : 2 * hsz] + h @ u_zr.T)
        z, r = zr[:, :hsz], zr[:, hsz:]
        c = np.tanh(a[:, 2 * hsz :] + (r * h) @ uh.T)
        h = h + z * (c - h)
        zs[:, t], rs[:, t], cs[:, t], hs[:, t] = z, r, c, h
    h_init = np.zeros((n, hsz)) if h0 is None else h0
    return hs, (x, p, h_init, hs, zs, rs, cs)


def gru_backward(dhs, cache):
    """Backpropagation through time. Returns (dx, grads-by-name)."""
    x, p, h_init, hs, zs, rs, cs = cache
    n, t_len, d = x.shape
    hsz = hs.shape[2]
    uz, ur, uh = p["Uz"], p["Ur"], p["Uh"]
    u_zr = np.concatenate([uz, ur])
    da_all = np.empty((n, t_len, 3 * hsz))  # pre-activation grads for z, r, c
    duz_r = np.zeros((2 * hsz, hsz))
    duh = np.zeros((hsz, hsz))
    dh = np.zeros((n, hsz))
    for t in range(t_len - 1, -1, -1):
        dh = dh + dhs[:, t]
        h_prev = hs[:, t - 1] if t > 0 else h_init
        z, r, c = zs[:, t], rs[:, t], cs[:, t]
        dz = dh * (c - h_prev)
        dc = dh * z
        dh_prev = dh * (1.0 - z)
        dac = dc * (1.0 - c * c)
        rh = r * h_prev
        duh += dac.T @ rh
        drh = dac @ uh
        dr = drh * h_prev
        dh_prev += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dazr = np.concatenate([daz, dar], axis=1)
        duz_r += dazr.T @ h_prev
        dh_prev += dazr @ u_zr
        da_all[:, t, : 2 * hsz] = dazr
        da_all[:, t, 2 * hsz :] = dac
        dh = dh_prev
    da2 = da_all.reshape(n * t_len, 3 * hsz)
    dw_all = da2.T @ x.reshape(n * t_len, d)
    db_all = da2.sum(axis=0)
    w_all = np.concatenate([p["Wz"], p["Wr"], p["Wh"]])
    dx = (da2 @ w_all).reshape(n, t_len, d)
    grads = {
        "Wz": dw_all[:hsz],
        "Wr": dw_all[hsz : 2 * hsz],
        "Wh": dw_all[2 * hsz :],
        "bz": db_all[:hsz],
        "br": db_all[hsz : 2 * hsz],
        "bh": db_all[2 * hsz :],
        "Uz": duz_r[:hsz],
        "Ur": duz_r[hsz:],
        "Uh": duh,
    }
    return dx, grads


# --- loss -------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean negative log-likelihood over the batch and its gradient."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {n}")
    if np.any((labels < 0) | (labels >= c)):
        raise ValueError(f"label out of range [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted[np.arange(n), labels] - log_z
    loss = -log_p.mean()
    grad = np.exp(shifted - log_z[:, None])
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n
