# tcnn/tensor/functional.py
"""
Differentiable primitives built on Tensor: matmul, conv2d (im2col), pooling,
softmax, activations and reductions.

Images are B x C x H x W, filters C_out x C_in x k x k, convolution follows the
cross-correlation convention (no filter flip) with zero padding.
"""
from typing import Optional, Tuple

import numpy as np

from tcnn.core.exceptions import ConfigError, DimensionError, NumericError, UsageError
from tcnn.tensor.tensor import Tensor, make_result, unbroadcast

ACTIVATIONS = ("sigmoid", "softplus", "relu")
REDUCTIONS = ("sum", "mean", "max")
DEFAULT_SOFTPLUS_BETA = 5.0


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with gradient to both operands (leading axes broadcast)."""
    return a @ b


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> Tuple[np.ndarray, int, int]:
    B, C, H, W = xp.shape
    out_h = (H - kh) // stride + 1
    out_w = (W - kw) // stride + 1
    col = np.empty((B, C, kh, kw, out_h, out_w), dtype=xp.dtype)
    for y in range(kh):
        y_max = y + stride * out_h
        for x in range(kw):
            x_max = x + stride * out_w
            col[:, :, y, x, :, :] = xp[:, :, y:y_max:stride, x:x_max:stride]
    # (B, C, kh, kw, oh, ow) -> (B*oh*ow, C*kh*kw)
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(B * out_h * out_w, -1), out_h, out_w


def _col2im(cols: np.ndarray, shape: Tuple[int, ...], kh: int, kw: int, stride: int,
            out_h: int, out_w: int) -> np.ndarray:
    B, C, H, W = shape
    col = cols.reshape(B, out_h, out_w, C, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros(shape, dtype=cols.dtype)
    for y in range(kh):
        y_max = y + stride * out_h
        for x in range(kw):
            x_max = x + stride * out_w
            img[:, :, y:y_max:stride, x:x_max:stride] += col[:, :, y, x, :, :]
    return img


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D cross-correlation of a batch of images with a filter bank.

    Args:
        x (Tensor): Input of shape B x C_in x H x W
        weight (Tensor): Filters of shape C_out x C_in x k x k
        stride (int): Positive step between output pixels
        padding (int): Zero padding added on each side

    Returns:
        Tensor: B x C_out x H' x W' with H' = (H + 2p - k) // stride + 1

    Raises:
        DimensionError: If ranks or channel counts disagree, or the kernel exceeds the padded input
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and filter", detail=f"{x.shape} and {weight.shape}")
    if stride < 1 or padding < 0:
        raise UsageError("conv2d needs stride >= 1 and padding >= 0", detail=f"stride={stride} padding={padding}")
    B, C, H, W = x.shape
    C_out, C_in, kh, kw = weight.shape
    if C_in != C:
        raise DimensionError("conv2d channel mismatch", detail=f"input {x.shape} vs filter {weight.shape}")
    if kh > H + 2 * padding or kw > W + 2 * padding:
        raise DimensionError("Kernel larger than padded input",
                             detail=f"input {x.shape}, filter {weight.shape}, padding {padding}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, out_h, out_w = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(C_out, -1)
    out = (cols @ wmat.T).reshape(B, out_h, out_w, C_out).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(-1, C_out)
        gw = (gmat.T @ cols).reshape(weight.shape)
        gxp = _col2im(gmat @ wmat, xp.shape, kh, kw, stride, out_h, out_w)
        if padding:
            gxp = gxp[:, :, padding:padding + H, padding:padding + W]
        return np.ascontiguousarray(gxp), gw
    return make_result(np.ascontiguousarray(out), (x, weight), backward, "conv2d")


def avg_pool2d(x: Tensor, window: int, stride: int, ceil_mode: bool = False) -> Tensor:
    """
    Mean over each window x window patch, moving by `stride`.

    With `ceil_mode`, windows that run past the bottom or right edge are kept
    and average only the pixels inside the input.
    """
    if x.ndim != 4:
        raise DimensionError("avg_pool2d expects 4-D input", detail=str(x.shape))
    B, C, H, W = x.shape
    if window < 1 or stride < 1 or (not ceil_mode and (window > H or window > W)):
        raise DimensionError("Pooling window does not fit the input", detail=f"window {window} on {x.shape}")
    if ceil_mode:
        out_h = -(-(H - window) // stride) + 1
        out_w = -(-(W - window) // stride) + 1
    else:
        out_h = (H - window) // stride + 1
        out_w = (W - window) // stride + 1
    pad_h = max((out_h - 1) * stride + window - H, 0)
    pad_w = max((out_w - 1) * stride + window - W, 0)
    data = x.data
    if pad_h or pad_w:
        data = np.pad(data, ((0, 0), (0, 0), (0, pad_h), (0, pad_w)))
    mask = np.pad(np.ones((H, W), dtype=x.dtype), ((0, pad_h), (0, pad_w)))
    count = np.zeros((out_h, out_w), dtype=x.dtype)
    out = np.zeros((B, C, out_h, out_w), dtype=x.dtype)
    for y in range(window):
        for z in range(window):
            out += data[:, :, y:y + stride * out_h:stride, z:z + stride * out_w:stride][:, :, :out_h, :out_w]
            count += mask[y:y + stride * out_h:stride, z:z + stride * out_w:stride][:out_h, :out_w]
    scale = 1.0 / count
    out *= scale

    def backward(g):
        gx = np.zeros_like(data)
        for y in range(window):
            for z in range(window):
                gx[:, :, y:y + stride * out_h:stride, z:z + stride * out_w:stride][:, :, :out_h, :out_w] += g * scale
        return (gx[:, :, :H, :W],)
    return make_result(out, (x,), backward, "avg_pool2d")


def _check_finite(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"Non-finite input to {op}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`, stabilized by max-subtraction."""
    _check_finite(x, "softmax")
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError("Axis out of range", detail=f"axis {axis} for shape {x.shape}")
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return make_result(y, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_finite(x, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return make_result(out, (x,), backward, "log_softmax")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * y * (1.0 - y),)
    return make_result(y, (x,), backward, "sigmoid")


def softplus(x: Tensor, beta: float = DEFAULT_SOFTPLUS_BETA) -> Tensor:
    """(1/beta) * log(1 + exp(beta * x)), increasing and strictly positive."""
    if beta <= 0:
        raise UsageError("softplus needs beta > 0", detail=str(beta))
    y = np.logaddexp(0.0, beta * x.data) / beta
    slope = 0.5 * (1.0 + np.tanh(0.5 * beta * x.data))

    def backward(g):
        return (g * slope,)
    return make_result(y.astype(x.dtype, copy=False), (x,), backward, "softplus")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)
    return make_result(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), backward, "relu")


def activation(x: Tensor, kind: str, beta: float = DEFAULT_SOFTPLUS_BETA) -> Tensor:
    """Elementwise sigmoid, softplus_beta or relu."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "softplus":
        return softplus(x, beta)
    if kind == "relu":
        return relu(x)
    raise UsageError("Unknown activation", detail=f"{kind}; expected one of {ACTIVATIONS}")


def reduce(x: Tensor, kind: str, axis=None, keepdims: bool = False) -> Tensor:
    """Sum, mean or max over `axis` (all axes when None)."""
    if kind == "sum":
        return x.sum(axis=axis, keepdims=keepdims)
    if kind == "mean":
        return x.mean(axis=axis, keepdims=keepdims)
    if kind == "max":
        return x.max(axis=axis, keepdims=keepdims)
    raise UsageError("Unknown reduction", detail=f"{kind}; expected one of {REDUCTIONS}")


def attention_probs(q: Tensor, k: Tensor, scale: Optional[float] = None) -> Tensor:
    """
    softmax(scale * q k^T) over the key axis as one primitive.

    Only the probabilities are kept for the backward pass, which matters for the
    B x N_h x L x L content attention of GPSA layers.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError("Query and key widths differ", detail=f"{q.shape} vs {k.shape}")
    factor = 1.0 if scale is None else float(scale)
    logits = np.matmul(q.data, np.swapaxes(k.data, -1, -2))
    if factor != 1.0:
        logits *= factor
    if not np.all(np.isfinite(logits)):
        raise NumericError("Non-finite attention logits")
    probs = np.exp(logits - logits.max(axis=-1, keepdims=True))
    probs /= probs.sum(axis=-1, keepdims=True)
    del logits

    def backward(g):
        ds = probs * (g - (g * probs).sum(axis=-1, keepdims=True))
        if factor != 1.0:
            ds *= factor
        gq = np.matmul(ds, k.data)
        gk = np.matmul(np.swapaxes(ds, -1, -2), q.data)
        return unbroadcast(gq, q.shape), unbroadcast(gk, k.shape)
    return make_result(probs, (q, k), backward, "attention_probs")


def crop2d(x: Tensor, crop: int) -> Tensor:
    """Remove `crop` pixels from each side of the last two axes."""
    if crop < 0:
        raise UsageError("Crop must be non-negative", detail=str(crop))
    if crop == 0:
        return x
    H, W = x.shape[-2:]
    if 2 * crop >= H or 2 * crop >= W:
        raise DimensionError("Crop removes the whole image", detail=f"crop {crop} on {x.shape}")
    out = np.ascontiguousarray(x.data[..., crop:H - crop, crop:W - crop])

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., crop:H - crop, crop:W - crop] = g
        return (full,)
    return make_result(out, (x,), backward, "crop2d")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray, var: np.ndarray,
               eps: float) -> Tensor:
    """
    Per-channel affine normalization of B x C x H x W input with given statistics.

    `mean` and `var` must be the batch statistics of `x`: the backward pass
    differentiates through them (training mode). Running statistics go through
    `batch_norm_eval`.
    """
    inv = 1.0 / np.sqrt(var + eps)
    shape = (1, -1, 1, 1)
    xhat = (x.data - mean.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    n = x.size // x.shape[1]

    def backward(g):
        gbeta = g.sum(axis=(0, 2, 3))
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(shape)
        gx = (inv.reshape(shape) / n) * (n * gxhat - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                                         - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        return gx, ggamma, gbeta
    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor, mean: np.ndarray, var: np.ndarray,
                    eps: float) -> Tensor:
    """Normalization with fixed (running) statistics."""
    inv = 1.0 / np.sqrt(var + eps)
    shape = (1, -1, 1, 1)
    xhat = (x.data - mean.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        return (g * (gamma.data * inv).reshape(shape), (g * xhat).sum(axis=(0, 2, 3)),
                g.sum(axis=(0, 2, 3)))
    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm_eval")


def stochastic_depth(branch: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """
    Drop the residual branch per sample with probability `rate`, scaling survivors by 1/(1 - rate).

    Identity in eval mode or when `rate` is 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError("Stochastic depth rate must lie in [0, 1)", detail=str(rate))
    if not training or rate == 0.0:
        return branch
    keep = rng.random(branch.shape[0]) >= rate
    mask = (keep / (1.0 - rate)).astype(branch.dtype).reshape((-1,) + (1,) * (branch.ndim - 1))
    return branch * Tensor(mask, dtype=branch.dtype)


def content_attention(q: Tensor, k: Tensor, v: Tensor, scale: float = 1.0) -> Tensor:
    """
    softmax(scale * q_h k_h^T) v for every head, with a value matrix shared by all heads.

    Args:
        q (Tensor): Queries, B x N_h x L x D_h
        k (Tensor): Keys, B x N_h x L x D_h
        v (Tensor): Shared values, B x L x D
        scale (float): Logit scaling

    Returns:
        Tensor: B x N_h x L x D

    The attention probabilities are recomputed sample by sample in the backward
    pass, so only one N_h x L x L block is alive at any time.
    """
    if q.ndim != 4 or q.shape != k.shape:
        raise DimensionError("Queries and keys must be B x N_h x L x D_h", detail=f"{q.shape} vs {k.shape}")
    if v.ndim != 3 or v.shape[0] != q.shape[0] or v.shape[1] != q.shape[2]:
        raise DimensionError("Values must be B x L x D", detail=f"{v.shape} for queries {q.shape}")
    B, n_heads, L, _ = q.shape

    def probs_of(b: int) -> np.ndarray:
        logits = np.matmul(q.data[b], np.swapaxes(k.data[b], -1, -2))
        if scale != 1.0:
            logits *= scale
        if not np.all(np.isfinite(logits)):
            raise NumericError("Non-finite attention logits")
        p = np.exp(logits - logits.max(axis=-1, keepdims=True))
        p /= p.sum(axis=-1, keepdims=True)
        return p

    out = np.empty((B, n_heads, L, v.shape[2]), dtype=v.dtype)
    for b in range(B):
        out[b] = np.matmul(probs_of(b), v.data[b])

    def backward(g):
        gq = np.empty_like(q.data)
        gk = np.empty_like(k.data)
        gv = np.empty_like(v.data)
        for b in range(B):
            p = probs_of(b)
            gv[b] = np.matmul(np.swapaxes(p, -1, -2), g[b]).sum(axis=0)
            gp = np.matmul(g[b], v.data[b].T)
            gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True))
            if scale != 1.0:
                gs *= scale
            gq[b] = np.matmul(gs, k.data[b])
            gk[b] = np.matmul(np.swapaxes(gs, -1, -2), q.data[b])
        return gq, gk, gv
    return make_result(out, (q, k, v), backward, "content_attention")


def positional_attention(p: Tensor, v: Tensor) -> Tensor:
    """
    Apply per-head attention maps shared across the batch to a shared value matrix.

    Args:
        p (Tensor): Attention maps, N_h x L x L
        v (Tensor): Values, B x L x D

    Returns:
        Tensor: B x N_h x L x D
    """
    if p.ndim != 3 or v.ndim != 3 or p.shape[2] != v.shape[1]:
        raise DimensionError("Positional attention shape mismatch", detail=f"{p.shape} vs {v.shape}")
    B, L, D = v.shape
    n_heads = p.shape[0]
    # batch folded into columns: L x (B*D)
    folded = np.ascontiguousarray(v.data.transpose(1, 0, 2).reshape(L, B * D))
    out = np.matmul(p.data, folded).reshape(n_heads, L, B, D).transpose(2, 0, 1, 3)

    def backward(g):
        gfold = np.ascontiguousarray(g.transpose(1, 2, 0, 3).reshape(n_heads, L, B * D))
        gp = np.matmul(gfold, folded.T)
        gv = np.matmul(np.swapaxes(p.data, -1, -2), gfold).sum(axis=0)
        return gp, gv.reshape(L, B, D).transpose(1, 0, 2)
    return make_result(np.ascontiguousarray(out), (p, v), backward, "positional_attention")
