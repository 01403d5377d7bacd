"""Dense tensor kernels: convolution, pooling, activations, losses.

Activation maps and filter banks are plain float64 ndarrays with a fixed
axis order: activations are (batch, channels, rows, cols) and filter banks
are (out_planes, in_planes, rows, cols). All kernels are pure functions;
dropout takes an explicit Generator. Convolution is implemented as
cross-correlation (no filter flip), the usual CNN convention.

The backward functions take the saved forward inputs explicitly instead of
hidden state, so each is a pure function as well; layer objects in
``layers.py`` do the caching.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .errors import ConfigError, ShapeError


def check_tensor4(a: np.ndarray, name: str = "tensor"):
    if a.ndim != 4:
        raise ShapeError(f"{name} must be 4-D, got shape {a.shape}")


def _conv_cols(x: np.ndarray, d: int) -> np.ndarray:
    """Zero-pad for same-size output and unfold d x d patches into rows.

    Returns a (batch*rows*cols, channels*d*d) matrix; one row per output
    position, matching the (channels, u, v) flattening of a filter bank.
    This copy is the dominant cost of the convolution on bandwidth-bound
    hardware, which is why backward reuses it instead of rebuilding it.
    """
    b, c, h, w = x.shape
    p = (d - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    if _kernels.HAVE_NUMBA:
        return _kernels.gather_cols(xp, d)
    win = sliding_window_view(xp, (d, d), axis=(2, 3))  # (b, c, h, w, d, d)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * d * d)


def _check_conv_args(x, filters, bias):
    check_tensor4(x, "input")
    check_tensor4(filters, "filters")
    m = x.shape[1]
    n, m2, d, d2 = filters.shape
    if m2 != m:
        raise ShapeError(f"filters expect {m2} input planes, input has {m}")
    if d != d2 or d % 2 == 0:
        raise ShapeError(f"filters must be square with odd size, got {d}x{d2}")
    if bias is not None and bias.shape != (n,):
        raise ShapeError(f"bias must have shape ({n},), got {bias.shape}")


def conv2d_same_cols(x: np.ndarray, filters: np.ndarray, bias: np.ndarray):
    """conv2d_same that also returns the unfolded patch matrix for backward."""
    _check_conv_args(x, filters, bias)
    b, m, h, w = x.shape
    n, _, d, _ = filters.shape
    cols = _conv_cols(x, d)
    out = cols @ filters.reshape(n, m * d * d).T
    out += bias
    return out.reshape(b, h, w, n).transpose(0, 3, 1, 2), cols


def conv2d_same(x: np.ndarray, filters: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded cross-correlation: (b,m,H,W) * (n,m,d,d) -> (b,n,H,W)."""
    return conv2d_same_cols(x, filters, bias)[0]


def conv2d_same_backward(
    grad_out: np.ndarray,
    x: np.ndarray,
    filters: np.ndarray,
    cols: np.ndarray | None = None,
    need_input_grad: bool = True,
):
    """Gradients of conv2d_same w.r.t. input, filters and bias.

    grad_out must match the forward output shape for (x, filters); a
    mismatch means the caller lost its forward context. ``cols`` may pass
    the patch matrix saved from conv2d_same_cols; the input gradient is a
    fold (col2im) of the patch-matrix gradient, the exact adjoint of the
    unfold done in forward.
    """
    check_tensor4(grad_out, "grad_out")
    b, m, h, w = x.shape
    n, _, d, _ = filters.shape
    if grad_out.shape != (b, n, h, w):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"({b},{n},{h},{w}); forward context mismatch"
        )
    if cols is None:
        cols = _conv_cols(x, d)
    g = grad_out.transpose(0, 2, 3, 1).reshape(b * h * w, n)
    dfilters = (cols.T @ g).T.reshape(n, m, d, d)
    dbias = g.sum(axis=0)
    dx = None
    if need_input_grad:
        dcols = g @ filters.reshape(n, m * d * d)
        p = (d - 1) // 2
        if _kernels.HAVE_NUMBA:
            dxp = _kernels.fold_cols(dcols, b, m, d, h + 2 * p, w + 2 * p)
        else:
            dwin = dcols.reshape(b, h, w, m, d, d)
            dxp = np.zeros((b, m, h + 2 * p, w + 2 * p))
            for u in range(d):
                for v in range(d):
                    dxp[:, :, u : u + h, v : v + w] += dwin[
                        :, :, :, :, u, v
                    ].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p : p + h, p : p + w]
    return dx, dfilters, dbias


def maxpool2(x: np.ndarray) -> np.ndarray:
    """Non-overlapping 2x2 max pooling; rows and cols must be even."""
    check_tensor4(x, "input")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(b, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def maxpool2_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Route each pooled gradient to the argmax position of its window.

    Ties go to the first position in (row, col) scan order, so exactly one
    input location per window receives the gradient.
    """
    b, c, h, w = x.shape
    if grad_out.shape != (b, c, h // 2, w // 2):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match pooled shape; "
            "forward context mismatch"
        )
    if _kernels.HAVE_NUMBA:
        return _kernels.maxpool2_scatter(grad_out, x)
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    mask = np.zeros_like(win)
    np.put_along_axis(mask, arg[..., None], 1.0, axis=-1)
    mask = mask * grad_out[..., None]
    mask = mask.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return mask.reshape(b, c, h, w)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0.0)


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator, train: bool):
    """Inverted dropout. Returns (output, mask); mask is None in eval mode.

    In train mode entries are zeroed with probability ``rate`` and the
    survivors are scaled by 1/(1-rate), so the expected output equals the
    input. Eval mode is the identity.
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(grad_out: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return grad_out
    return grad_out * mask


def fc_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Fully-connected transform: (b,p) @ (p,q) + (q,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"fc shapes incompatible: input {x.shape}, weight {weight.shape}"
        )
    return x @ weight + bias


def fc_backward(grad_out: np.ndarray, x: np.ndarray, weight: np.ndarray):
    if grad_out.shape != (x.shape[0], weight.shape[1]):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match fc output; "
            "forward context mismatch"
        )
    dx = grad_out @ weight.T
    dweight = x.T @ grad_out
    dbias = grad_out.sum(axis=0)
    return dx, dweight, dbias


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Returns (loss, dloss/dlogits); the gradient already includes the 1/batch
    factor from the mean.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (batch, classes), got {logits.shape}")
    b, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (b,):
        raise ShapeError(f"labels must have shape ({b},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = -log_probs[np.arange(b), labels].mean()
    dlogits = np.exp(log_probs)
    dlogits[np.arange(b), labels] -= 1.0
    return loss, dlogits / b


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator):
    """Uniform init in [-s, s] with s = sqrt(6 / (fan_in + fan_out))."""
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)
