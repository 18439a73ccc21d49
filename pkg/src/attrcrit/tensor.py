"""Dense float64 array primitives.

Arrays are plain ``numpy.ndarray`` objects in C (row-major) order.  The
functions here add the shape validation and the convolution / pooling
kernels that the network and attribution code rely on.  Spatial operations
accept either a single ``C x H x W`` array or a batch ``N x C x H x W``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NonFiniteError, ShapeError

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
    "min": np.minimum,
}


def as_tensor(data, shape=None, *, check_finite=True) -> np.ndarray:
    """Return ``data`` as a contiguous float64 array, optionally reshaped.

    Raises ShapeError when ``shape`` does not hold exactly ``data.size``
    elements and NonFiniteError when NaN/Inf values are present.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError(f"extents must be positive, got {shape}")
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} values as {shape}")
        arr = arr.reshape(shape)
    if check_finite and not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return arr


def elementwise(op_kind: str, a, b=None) -> np.ndarray:
    """Apply ``op_kind`` pointwise.  ``b`` must match ``a``'s shape or be a scalar."""
    a = np.asarray(a, dtype=np.float64)
    if op_kind == "relu":
        return np.maximum(a, 0.0)
    try:
        fn = _BINARY[op_kind]
    except KeyError:
        raise ValueError(f"unknown op {op_kind!r}") from None
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 0 and b.shape != a.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return fn(a, b)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ValueError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected C x H x W or N x C x H x W, got {x.shape}")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    # N x C x H' x W' x kh x kw view, no copy
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def conv2d(x, kernels, stride=1, padding=0, bias=None) -> np.ndarray:
    """Cross-correlate ``x`` with ``kernels`` (C_out x C_in x kh x kw), zero padded."""
    xb, single = _batched(x)
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim != 4 or kernels.shape[1] != xb.shape[1]:
        raise ShapeError(f"kernel {kernels.shape} does not fit input {xb.shape[1:]}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    _, _, kh, kw = kernels.shape
    h, w = xb.shape[2:]
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w}")
    if ph or pw:
        xb = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _windows(xb, kh, kw, sh, sw)
    out = np.tensordot(win, kernels, axes=([1, 4, 5], [1, 2, 3]))  # N x H' x W' x C_out
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out[0] if single else out


def conv2d_input_grad(grad_out, kernels, input_shape, stride=1, padding=0) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to its input.

    ``input_shape`` is the unpadded C x H x W extent of the forward input.
    """
    gb, single = _batched(grad_out)
    kernels = np.asarray(kernels, dtype=np.float64)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    c_in, h, w = input_shape
    _, _, kh, kw = kernels.shape
    n, _, oh, ow = gb.shape
    padded = np.zeros((n, c_in, h + 2 * ph, w + 2 * pw))
    # cols: N x C_in x kh x kw x H' x W'
    cols = np.tensordot(kernels, gb, axes=([0], [1])).transpose(3, 0, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            padded[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += cols[:, :, i, j]
    out = padded[:, :, ph : ph + h, pw : pw + w]
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_weight_grad(grad_out, x, kernel_shape, stride=1, padding=0) -> np.ndarray:
    """Gradient of ``sum(grad_out * conv2d(x, W))`` with respect to ``W``, summed over the batch."""
    gb, _ = _batched(grad_out)
    xb, _ = _batched(x)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    _, _, kh, kw = kernel_shape
    if ph or pw:
        xb = np.pad(xb, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _windows(xb, kh, kw, sh, sw)
    return np.tensordot(gb, win, axes=([0, 2, 3], [0, 2, 3]))


def maxpool2d(x, window, stride=None) -> tuple[np.ndarray, np.ndarray]:
    """Max over each window; returns the pooled array and the argmax indices.

    Indices are flat offsets into the H x W plane of each channel.  Ties go
    to the lowest flat index.
    """
    xb, single = _batched(x)
    kh, kw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    h, w = xb.shape[2:]
    if kh > h or kw > w:
        raise ShapeError(f"window {kh}x{kw} exceeds input {h}x{w}")
    win = _windows(xb, kh, kw, sh, sw)
    flat = win.reshape(win.shape[:4] + (kh * kw,))
    local = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    oh, ow = out.shape[2:]
    rows = np.arange(oh)[:, None] * sh + local // kw
    cols = np.arange(ow)[None, :] * sw + local % kw
    idx = rows * w + cols
    if single:
        return out[0], idx[0]
    return out, idx


def maxpool2d_scatter(values, indices, input_shape) -> np.ndarray:
    """Route pooled ``values`` back to their argmax positions, summing collisions."""
    vb, single = _batched(values)
    ib = indices[None] if single else indices
    n, c = vb.shape[:2]
    _, h, w = input_shape
    plane = (np.arange(n * c) * (h * w)).reshape(n, c, 1, 1)
    flat = np.broadcast_to(ib, vb.shape) + plane
    out = np.bincount(flat.ravel(), weights=vb.ravel(), minlength=n * c * h * w)
    out = out.reshape(n, c, h, w)
    return out[0] if single else out


def bilinear_resize(plane, size) -> np.ndarray:
    """Resize a 2-D array with corner-aligned bilinear interpolation."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    oh, ow = size
    ys = np.linspace(0.0, h - 1, oh) if h > 1 else np.zeros(oh)
    xs = np.linspace(0.0, w - 1, ow) if w > 1 else np.zeros(ow)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    top = plane[np.ix_(y0, x0)] * (1 - tx) + plane[np.ix_(y0, x1)] * tx
    bot = plane[np.ix_(y1, x0)] * (1 - tx) + plane[np.ix_(y1, x1)] * tx
    return top * (1 - ty) + bot * ty
