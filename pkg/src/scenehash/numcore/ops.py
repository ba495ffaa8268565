"""Forward ops with their backward rules.

Every op validates shapes up front, computes the forward value with numpy,
and attaches a vector-Jacobian product closure. Broadcasting is deliberately
limited to bias addition over the leading dimensions; everything else is
explicit reshapes/transposes, which keeps the correctness surface small.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.vjp is not None


def _make(data, parents, vjp, op):
    if any(_tracked(p) for p in parents):
        return Tensor(data, parents=tuple(parents), vjp=vjp, op=op)
    return Tensor(data, op=op)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a, s: float):
    a = as_tensor(a)
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def add_scalar(a, s: float):
    a = as_tensor(a)
    s = float(s)
    return _make(a.data + s, (a,), lambda g: (g,), "add_scalar")


def neg(a):
    return scale(a, -1.0)


def add_bias(x, b):
    """x[..., d] + b[d], broadcast over all leading dimensions."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"add_bias: bias {b.data.shape} does not match trailing dim of {x.data.shape}")
    lead = tuple(range(x.data.ndim - 1))
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)), "add_bias")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree {a.data.shape} x {b.data.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def bmm(a, b):
    """Batched matmul over the leading dimension: (L,m,k) x (L,k,n) -> (L,m,n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"bmm: expected 3-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2] != b.data.shape[1]:
        raise ShapeError(f"bmm: incompatible shapes {a.data.shape} x {b.data.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.transpose(0, 2, 1), a.data.transpose(0, 2, 1) @ g),
        "bmm",
    )


# ---------------------------------------------------------------------------
# structure

def reshape(x, shape):
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    old = x.data.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(int(a) for a in axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input list")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis) for i in range(len(parts))
        )

    return _make(np.concatenate([p.data for p in parts], axis=axis), parts, vjp, "concat")


def slice_axis(x, axis, start, stop):
    x = as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.data.shape

    def vjp(g):
        out = np.zeros(shape)
        out[idx] = g
        return (out,)

    return _make(x.data[idx].copy(), (x,), vjp, "slice")


def gather_rows(x, indices):
    """Select rows of a 2-D tensor; duplicate indices accumulate in backward."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-D input, got {x.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    shape = x.data.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(x.data[idx], (x,), vjp, "gather_rows")


# ---------------------------------------------------------------------------
# pointwise nonlinearities

def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x):
    x = as_tensor(x)
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0.0),), "relu")


def sigmoid(x):
    x = as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0.0):
        raise ValueError("log: input must be strictly positive")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def absolute(x):
    x = as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def sign_st(x):
    """sign() with the zero tie mapped to +1; backward passes gradients through unchanged."""
    x = as_tensor(x)
    y = np.where(x.data >= 0.0, 1.0, -1.0)
    return _make(y, (x,), lambda g: (g,), "sign_st")


# ---------------------------------------------------------------------------
# normalizations

class DegenerateMaskError(ValueError):
    pass


def softmax_rows(x, mask=None):
    """Row softmax of a 2-D tensor with max-subtraction; masked entries are exactly 0."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expected 2-D input, got {x.data.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != x.data.shape:
            raise ShapeError(f"softmax_rows: mask shape {m.shape} != input {x.data.shape}")
        if not m.any(axis=1).all():
            raise DegenerateMaskError("softmax_rows: fully masked row")
        z = np.where(m, x.data, -np.inf)
    else:
        m = None
        z = x.data
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    if m is not None:
        e = np.where(m, e, 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, (x,), vjp, "softmax_rows")


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm: trailing dimension must be >= 2")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError("layer_norm: gain/bias must match the trailing dimension")
    if eps <= 0.0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        lead = tuple(range(x.data.ndim - 1))
        dxhat = g * gain.data
        dvar = (dxhat * xc).sum(axis=-1, keepdims=True) * (-0.5) * inv**3
        dmu = -dxhat.sum(axis=-1, keepdims=True) * inv + dvar * (-2.0 / d) * xc.sum(axis=-1, keepdims=True)
        dx = dxhat * inv + dvar * (2.0 / d) * xc + dmu / d
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        return (dx, dgain, dbias)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), vjp, "layer_norm")


def l2_normalize_rows(x, eps=1e-12):
    """Scale each row of a 2-D tensor to unit L2 norm (eps guards the zero row)."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"l2_normalize_rows: expected 2-D input, got {x.data.shape}")
    s = (x.data * x.data).sum(axis=1, keepdims=True)
    n = np.sqrt(s + eps)
    y = x.data / n

    def vjp(g):
        dot = (g * x.data).sum(axis=1, keepdims=True)
        return (g / n - x.data * dot / n**3,)

    return _make(y, (x,), vjp, "l2_normalize_rows")


# ---------------------------------------------------------------------------
# reductions

def sum_all(x):
    x = as_tensor(x)
    shape = x.data.shape
    return _make(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean_all(x):
    x = as_tensor(x)
    shape = x.data.shape
    n = x.data.size
    return _make(x.data.mean(), (x,), lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean")


def sum_axis(x, axis, keepdims=False):
    x = as_tensor(x)
    axis = int(axis)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), vjp, "sum_axis")


def mean_axis(x, axis, keepdims=False):
    x = as_tensor(x)
    axis = int(axis)
    n = x.data.shape[axis]

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, x.data.shape).copy(),)

    return _make(x.data.mean(axis=axis, keepdims=keepdims), (x,), vjp, "mean_axis")


# ---------------------------------------------------------------------------
# convolution support

def im2col(x, ksize, stride, padding):
    """Unfold (B,C,H,W) into patch rows (B*OH*OW, C*ksize*ksize), zero padded.

    Convolution is then a single matmul against the (C*k*k, F) filter bank.
    """
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"im2col: expected (B,C,H,W), got {x.data.shape}")
    b, c, h, w = x.data.shape
    k, s, p = int(ksize), int(stride), int(padding)
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"im2col: kernel {k} does not fit input {x.data.shape} with stride {s}, pad {p}")
    hp, wp = h + 2 * p, w + 2 * p
    ih, iw = (oh - 1) * s + 1, (ow - 1) * s + 1

    padded = np.zeros((b, c, hp, wp))
    padded[:, :, p:p + h, p:p + w] = x.data
    # one strided slice per kernel offset beats a fancy-index gather/scatter
    patches = np.empty((b, c, k, k, oh, ow))
    for i in range(k):
        for j in range(k):
            patches[:, :, i, j] = padded[:, :, i:i + ih:s, j:j + iw:s]
    out = patches.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * k * k)

    def vjp(g):
        gt = g.reshape(b, oh, ow, c, k, k).transpose(0, 3, 4, 5, 1, 2)
        gpad = np.zeros((b, c, hp, wp))
        for i in range(k):
            for j in range(k):
                gpad[:, :, i:i + ih:s, j:j + iw:s] += gt[:, :, i, j]
        return (gpad[:, :, p:p + h, p:p + w].copy(),)

    return _make(out, (x,), vjp, "im2col")
