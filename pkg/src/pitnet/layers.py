"""Numpy forward/backward primitives for the training stack.

Every operation is a pure function pair: ``*_forward`` returns the output
plus an opaque cache, ``*_backward`` consumes the upstream gradient and the
cache and returns exact gradients. Nothing here traces a graph; composition
and parameter bookkeeping live in :mod:`pitnet.network`.

Layout is NCHW throughout. Convolution is cross-correlation (no kernel
flip) with zero padding, vectorized as an im2col gather followed by one
batched matmul per call.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_output_extent(in_extent: int, kernel: int, stride: int = 1,
                       padding: int = 0, dilation: int = 1) -> int:
    """Spatial extent produced by a conv along one axis."""
    if in_extent < 1 or kernel < 1 or stride < 1 or dilation < 1 or padding < 0:
        raise ShapeError(
            f"bad conv geometry: in={in_extent} k={kernel} s={stride} "
            f"p={padding} d={dilation}")
    span = dilation * (kernel - 1) + 1
    if in_extent + 2 * padding < span:
        raise ShapeError(
            f"effective kernel span {span} exceeds padded input "
            f"{in_extent + 2 * padding}")
    return (in_extent + 2 * padding - span) // stride + 1


def _im2col(xp: np.ndarray, kernel: int, stride: int, dilation: int,
            out_h: int, out_w: int) -> np.ndarray:
    """Gather (n, c*k*k, out_h*out_w) patches from a padded input."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kernel, kernel, out_h, out_w), dtype=xp.dtype)
    for a in range(kernel):
        for b in range(kernel):
            i0, j0 = a * dilation, b * dilation
            cols[:, :, a, b] = xp[:, :,
                                  i0:i0 + (out_h - 1) * stride + 1:stride,
                                  j0:j0 + (out_w - 1) * stride + 1:stride]
    return cols.reshape(n, c * kernel * kernel, out_h * out_w)


def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias=None,
                   stride: int = 1, padding: int = 0, dilation: int = 1):
    """Cross-correlate ``x`` (n,c,h,w) with ``weight`` (o,c,k,k)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d tensors, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    out_ch, c_w, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"square kernels only, got {kh}x{kw}")
    if c != c_w:
        raise ShapeError(f"input has {c} channels, weight expects {c_w}")
    if not np.isfinite(x).all() or not np.isfinite(weight).all():
        raise NumericError("non-finite values in conv input or weight")
    out_h = conv_output_extent(h, kh, stride, padding, dilation)
    out_w = conv_output_extent(w, kh, stride, padding, dilation)
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x
    cols = _im2col(xp, kh, stride, dilation, out_h, out_w)
    y = (weight.reshape(out_ch, -1) @ cols).reshape(n, out_ch, out_h, out_w)
    if bias is not None:
        y += bias[None, :, None, None]
    cache = (x.shape, weight, bias is not None, stride, padding, dilation, cols)
    return y, cache


def conv2d_backward(grad_out: np.ndarray, cache):
    """Gradients of a conv2d_forward call: (grad_input, grad_weight, grad_bias)."""
    x_shape, weight, has_bias, stride, padding, dilation, cols = cache
    n, c, h, w = x_shape
    out_ch, _, k, _ = weight.shape
    out_h, out_w = grad_out.shape[2], grad_out.shape[3]
    g = grad_out.reshape(n, out_ch, out_h * out_w)
    grad_w = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3)) if has_bias else None
    gcols = (weight.reshape(out_ch, -1).T @ g).reshape(n, c, k, k, out_h, out_w)
    gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=grad_out.dtype)
    for a in range(k):
        for b in range(k):
            i0, j0 = a * dilation, b * dilation
            gxp[:, :,
                i0:i0 + (out_h - 1) * stride + 1:stride,
                j0:j0 + (out_w - 1) * stride + 1:stride] += gcols[:, :, a, b]
    grad_x = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
    return grad_x, grad_w, grad_b


def batchnorm2d_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                        running_mean: np.ndarray, running_var: np.ndarray,
                        training: bool, eps: float = BN_EPS,
                        momentum: float = BN_MOMENTUM):
    """Per-channel batch normalization over (n, h, w).

    Training mode normalizes by the biased batch variance and updates the
    running statistics in place (the one documented mutation in the stack).
    Inference mode normalizes by the running statistics and returns no
    usable backward cache.
    """
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm got {x.shape} with {gamma.shape[0]} channels")
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise NumericError("batch variance undefined for a single element")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, gamma, inv_std) if training else None
    return y, cache


def batchnorm2d_backward(grad_out: np.ndarray, cache):
    """Gradients through training-mode batchnorm, including the batch stats."""
    if cache is None:
        raise StateError("batchnorm backward requires a training-mode forward cache")
    xhat, gamma, inv_std = cache
    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma[None, :, None, None]
    gx = (inv_std[None, :, None, None] / m) * (
        m * gxhat
        - gxhat.sum(axis=(0, 2, 3), keepdims=True)
        - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
    return gx, grad_gamma, grad_beta


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray):
    # Subgradient at exactly 0 is 0 (strict mask).
    return grad_out * mask


def adaptive_avgpool2d_forward(x: np.ndarray, target: tuple[int, int]):
    """Average pool to a fixed (th, tw) target with floor-split bins."""
    n, c, h, w = x.shape
    th, tw = target
    if th < 1 or tw < 1 or th > h or tw > w:
        raise ShapeError(f"pool target {target} invalid for input {h}x{w}")
    rows = [(i * h // th, (i + 1) * h // th) for i in range(th)]
    cols = [(j * w // tw, (j + 1) * w // tw) for j in range(tw)]
    y = np.empty((n, c, th, tw), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            y[:, :, i, j] = x[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    return y, (x.shape, rows, cols)


def adaptive_avgpool2d_backward(grad_out: np.ndarray, cache):
    x_shape, rows, cols = cache
    gx = np.zeros(x_shape, dtype=grad_out.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            area = (r1 - r0) * (c1 - c0)
            gx[:, :, r0:r1, c0:c1] += grad_out[:, :, i, j, None, None] / area
    return gx


def residual_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"residual add of {a.shape} and {b.shape}")
    return a + b


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its logit gradient in one pass.

    Uses the max-subtraction trick; gradient is (softmax - onehot) / n.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (n, classes), got {logits.shape}")
    n, n_classes = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ShapeError(f"labels outside [0, {n_classes})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad
