"""Minimal dense tensor engine with tape-based reverse-mode differentiation.

Tensors wrap contiguous numpy arrays (float32 by default, float64 selectable
for gradient checks). Differentiable operations record themselves on the
active GradientTape; `backward` replays the record in reverse to accumulate
parameter gradients.
"""

import numpy as np

DEFAULT_DTYPE = np.float32

_ACTIVE_TAPE = None


class GradientTape:
    """Ordered record of executed differentiable operations.

    Used as a context manager. Operations executed inside the context whose
    inputs require gradients append a node to the tape. `backward` replays
    the record in reverse; gradients accumulate across repeated replays
    until `reset_gradients` is called.
    """

    def __init__(self):
        self._nodes = []  # (out, parents, backward_fn) in execution order
        self.grads = {}  # leaf Tensor -> accumulated ndarray
        self._watched = []
        self.untracked = []  # watched params that received no gradient

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("nested GradientTape contexts are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def watch(self, *tensors):
        for t in tensors:
            if not t.requires_grad:
                raise ValueError("watched tensors must have requires_grad=True")
            if t not in self._watched:
                self._watched.append(t)

    def reset_gradients(self):
        self.grads = {}
        self.untracked = []
        for t in self._watched:
            t.grad = None


class Tensor:
    """Dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        # note: ascontiguousarray would silently promote 0-d arrays to 1-d
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        t = Tensor(self.data, requires_grad=False, dtype=self.data.dtype)
        return t

    def astype(self, dtype):
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad,
                      dtype=dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar; everything routes through the module-level ops
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _record(out, parents, backward_fn):
    """Append a node to the active tape if any parent is being tracked."""
    tape = _ACTIVE_TAPE
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._leaf = False
        tape._nodes.append((out, parents, backward_fn))
    return out


def _unbroadcast(grad, shape):
    """Sum out dimensions of `grad` that were broadcast up from `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                           _unbroadcast(g, b.data.shape)))


def sub(a, b):
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                           _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), bwd)


def div(a, b):
    out = Tensor(a.data / b.data)

    def bwd(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, (a, b), bwd)


def neg(a):
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def pow_scalar(a, p):
    p = float(p)
    out = Tensor(a.data ** p)
    return _record(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a):
    e = np.exp(a.data)
    out = Tensor(e)
    return _record(out, (a,), lambda g: (g * e,))


def log(a):
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def sqrt(a):
    r = np.sqrt(a.data)
    out = Tensor(r)
    return _record(out, (a,), lambda g: (g * (0.5 / r),))


def relu(a):
    """Pointwise max(x, 0)."""
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0))
    return _record(out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.dtype, copy=False),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).astype(a.dtype, copy=False),)

    return _record(out, (a,), bwd)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(sum_(a, axis=axis, keepdims=keepdims), _wrap(1.0 / float(n), a.dtype))


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes):
    inv = np.argsort(axes)
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def index(a, idx):
    """Slice / integer-array indexing. Backward scatters into zeros."""
    out = Tensor(a.data[idx].copy())
    advanced = _has_advanced(idx)

    def bwd(g):
        ga = np.zeros_like(a.data)
        if advanced:
            np.add.at(ga, idx, g)
        else:
            ga[idx] += g
        return (ga,)

    return _record(out, (a,), bwd)


def _has_advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def gather_pairs(a, rows, cols):
    """Pick entries a[rows[i], cols[i]] from a 2-D tensor."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = Tensor(a.data[rows, cols].copy())

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, cols), g)
        return (ga,)

    return _record(out, (a,), bwd)


def fixed_gather(a, flat_idx, out_shape):
    """out.flat[i] = a.flat[flat_idx[i]] for a fixed index table."""
    flat_idx = np.asarray(flat_idx, dtype=np.int64).ravel()
    out = Tensor(a.data.ravel()[flat_idx].reshape(out_shape))

    def bwd(g):
        ga = np.zeros(a.data.size, dtype=a.dtype)
        np.add.at(ga, flat_idx, g.ravel())
        return (ga.reshape(a.data.shape),)

    return _record(out, (a,), bwd)


def sparse_taps(a, tap_idx, tap_w, out_shape):
    """Fixed sparse linear map: out.flat[m] = sum_t tap_w[t,m] * a.flat[tap_idx[t,m]].

    tap_idx/tap_w have shape [n_taps, prod(out_shape)]. Entries with weight 0
    may point anywhere. Used to expand steerable base weights into filter
    banks (rotation resampling has at most 4 taps per coefficient).
    """
    flat = a.data.ravel()
    acc = np.zeros(tap_idx.shape[1], dtype=a.dtype)
    for t in range(tap_idx.shape[0]):
        acc += tap_w[t].astype(a.dtype) * flat[tap_idx[t]]
    out = Tensor(acc.reshape(out_shape))

    def bwd(g):
        gf = g.ravel()
        ga = np.zeros(a.data.size, dtype=a.dtype)
        for t in range(tap_idx.shape[0]):
            np.add.at(ga, tap_idx[t], tap_w[t].astype(a.dtype) * gf)
        return (ga.reshape(a.data.shape),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# matmul / softmax / normalization


def matmul(a, b):
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        bt = np.swapaxes(b.data, -1, -2)
        at = np.swapaxes(a.data, -1, -2)
        ga = np.matmul(g, bt)
        gb = np.matmul(at, g)
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _record(out, (a, b), bwd)


def softmax(a, axis=-1):
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return ((g - dot) * s,)

    return _record(out, (a,), bwd)


def log_softmax(a, axis=-1):
    m = a.data.max(axis=axis, keepdims=True)
    sh = a.data - m
    lse = np.log(np.exp(sh).sum(axis=axis, keepdims=True))
    ls = sh - lse
    out = Tensor(ls)

    def bwd(g):
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (a,), bwd)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale and shift."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    n = x.shape[-1]

    def bwd(g):
        gxhat = g * gain.data
        # d/dx of (x - mu) * inv with mu, var functions of x
        t1 = gxhat
        t2 = gxhat.mean(axis=-1, keepdims=True)
        t3 = (gxhat * xhat).mean(axis=-1, keepdims=True) * xhat
        ga = inv * (t1 - t2 - t3)
        ggain = _unbroadcast(g * xhat, gain.data.shape)
        gbias = _unbroadcast(g, bias.data.shape)
        return (ga, ggain, gbias)

    return _record(out, (a, gain, bias), bwd)


# ---------------------------------------------------------------------------
# convolution / pooling / resampling


def conv2d(x, kernel, stride=1, padding=0):
    """2-D cross-correlation (no kernel flip), zero padding.

    Args:
        x: Tensor [batch, c_in, h, w].
        kernel: Tensor [c_out, c_in, k, k], k odd.
        stride: positive int.
        padding: non-negative int, zeros on all four sides.

    Returns:
        Tensor [batch, c_out, h', w'] with h' = (h + 2*padding - k)//stride + 1.
    """
    b, ci, h, w = x.data.shape
    co, cik, kh, kw = kernel.data.shape
    if ci != cik:
        raise ValueError(f"conv2d channel mismatch: input has {ci}, kernel expects {cik}")
    if kh != kw:
        raise ValueError("conv2d requires square kernels")
    if kh % 2 == 0:
        raise ValueError("conv2d requires odd kernel size")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d requires stride >= 1 and padding >= 0")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ValueError("conv2d input smaller than kernel after padding")

    k = kh
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1

    # im2col via strided view, then one matmul
    sb, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(b, ci, ho, wo, k, k),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw), writeable=False)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, ci * k * k)
    kmat = kernel.data.reshape(co, ci * k * k)
    y = (cols @ kmat.T).reshape(b, ho, wo, co).transpose(0, 3, 1, 2)
    out = Tensor(np.ascontiguousarray(y))

    def bwd(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * ho * wo, co)
        gk = (gmat.T @ cols).reshape(co, ci, k, k)
        gcols = gmat @ kmat  # [b*ho*wo, ci*k*k]
        gcols = gcols.reshape(b, ho, wo, ci, k, k).transpose(0, 3, 1, 2, 4, 5)
        gxp = np.zeros_like(xp)
        for u in range(k):
            for v in range(k):
                gxp[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += gcols[..., u, v]
        gx = gxp[:, :, padding:hp - padding, padding:wp - padding] if padding else gxp
        return (np.ascontiguousarray(gx), gk)

    return _record(out, (x, kernel), bwd)


def avg_pool2d(x, size=2):
    """Non-overlapping average pooling over size x size blocks."""
    b, c, h, w = x.data.shape
    if h % size or w % size:
        raise ValueError(f"avg_pool2d requires dims divisible by {size}, got {h}x{w}")
    y = x.data.reshape(b, c, h // size, size, w // size, size).mean(axis=(3, 5))
    out = Tensor(y)

    def bwd(g):
        gx = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
        return (gx.astype(x.dtype, copy=False),)

    return _record(out, (x,), bwd)


def upsample_nearest2x(x):
    """Nearest-neighbour 2x spatial upsampling."""
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    out = Tensor(y)
    b, c, h, w = x.data.shape

    def bwd(g):
        return (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record(out, (x,), bwd)


def crop_windows(fmap, centers, w):
    """Crop w x w windows around integer centers from a [C, H, W] map.

    centers: int array [n, 2] of (row, col). Windows must lie fully inside
    the map; callers are responsible for dropping out-of-bounds requests.
    Returns Tensor [n, C, w, w].
    """
    centers = np.asarray(centers, dtype=np.int64)
    c, hh, ww = fmap.data.shape
    r = w // 2
    if centers.size and ((centers[:, 0] < r).any() or (centers[:, 0] >= hh - r).any()
                         or (centers[:, 1] < r).any() or (centers[:, 1] >= ww - r).any()):
        raise ValueError("crop_windows: window exceeds map bounds")
    off = np.arange(-r, r + 1)
    rows = centers[:, 0, None, None] + off[None, :, None]  # [n, w, 1]
    cols = centers[:, 1, None, None] + off[None, None, :]  # [n, 1, w]
    out_data = fmap.data[:, rows, cols]          # [C, n, w, w]
    out = Tensor(np.ascontiguousarray(out_data.transpose(1, 0, 2, 3)))

    def bwd(g):
        gf = np.zeros_like(fmap.data)
        np.add.at(gf, (slice(None), rows, cols), g.transpose(1, 0, 2, 3))
        return (gf,)

    return _record(out, (fmap,), bwd)


# ---------------------------------------------------------------------------
# bilinear warping (not differentiable; resampling backend for the harness)


def bilinear_sample(img, xs, ys, fill=0.0):
    """Sample [c, h, w] image data at continuous coords (pixel-center convention).

    Pixel (r, c) has coordinates (x=c+0.5, y=r+0.5). Samples outside the
    image rectangle return `fill`. Returns [c, ...] matching xs shape.
    """
    img = np.asarray(img)
    c, h, w = img.shape
    xf = np.asarray(xs, dtype=np.float64) - 0.5
    yf = np.asarray(ys, dtype=np.float64) - 0.5
    x0 = np.floor(xf).astype(np.int64)
    y0 = np.floor(yf).astype(np.int64)
    tx = xf - x0
    ty = yf - y0
    valid = (xf >= -0.5) & (xf <= w - 0.5) & (yf >= -0.5) & (yf <= h - 0.5)

    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    # weights of out-of-range taps are zeroed so clipped indices are inert
    wx1 = np.where((x0 + 1 > w - 1) & (tx > 0), 0.0, tx)
    wx0 = np.where(x0 < 0, 0.0, 1.0 - tx)
    wy1 = np.where((y0 + 1 > h - 1) & (ty > 0), 0.0, ty)
    wy0 = np.where(y0 < 0, 0.0, 1.0 - ty)
    # renormalize edge samples so a pure border sample keeps full weight
    norm = (wx0 + wx1) * (wy0 + wy1)
    norm = np.where(norm > 0, norm, 1.0)

    v = (img[:, y0c, x0c] * (wy0 * wx0)
         + img[:, y0c, x1c] * (wy0 * wx1)
         + img[:, y1c, x0c] * (wy1 * wx0)
         + img[:, y1c, x1c] * (wy1 * wx1)) / norm
    return np.where(valid, v, fill)


def bilinear_warp(image, hmap, out_h, out_w, fill=0.0):
    """Warp an image through a homography, bilinear resampling.

    Args:
        image: Tensor or array [c, h, w].
        hmap: 3x3 target->source map; output pixel centers are sent through
            it into source coordinates and sampled there.
        out_h, out_w: output dimensions.
        fill: value for samples outside the source rectangle.

    Returns:
        Tensor [c, out_h, out_w]. Not differentiable.
    """
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    m = np.asarray(hmap, dtype=np.float64)
    if m.shape != (3, 3):
        m = np.asarray(getattr(hmap, "matrix", hmap), dtype=np.float64)
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("bilinear_warp: singular map")
    ys, xs = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    xs += 0.5
    ys += 0.5
    denom = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    sx = (m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / denom
    sy = (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / denom
    v = bilinear_sample(img, sx, sy, fill=fill)
    return Tensor(v.astype(img.dtype if img.dtype in (np.float32, np.float64) else DEFAULT_DTYPE))


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss, tape):
    """Accumulate gradients of a scalar loss into the tape's parameter map.

    Replays the tape's operation record in reverse. Gradients land on each
    reached leaf parameter's `.grad` and in `tape.grads`; watched parameters
    that the loss does not reach get zero gradients and are listed in
    `tape.untracked`.

    Returns a dict mapping parameter Tensor -> gradient ndarray.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    grad_map = {id(loss): np.ones_like(loss.data)}
    keep = {id(loss): loss}
    result = {}

    def _leaf_accum(t, g):
        if t.grad is None:
            t.grad = g.copy()
        else:
            t.grad = t.grad + g
        prev = tape.grads.get(t)
        tape.grads[t] = g.copy() if prev is None else prev + g
        result[t] = tape.grads[t]

    for out, parents, bwd in reversed(tape._nodes):
        g = grad_map.pop(id(out), None)
        keep.pop(id(out), None)
        if g is None:
            continue
        parent_grads = bwd(g)
        for p, pg in zip(parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p._leaf:
                _leaf_accum(p, pg)
            else:
                pid = id(p)
                if pid in grad_map:
                    grad_map[pid] = grad_map[pid] + pg
                else:
                    grad_map[pid] = pg
                    keep[pid] = p

    tape.untracked = []
    for t in tape._watched:
        if t not in result:
            z = np.zeros_like(t.data)
            tape.grads.setdefault(t, z)
            result[t] = tape.grads[t]
            tape.untracked.append(t)
    return result


def finite_diff_check(fn, params, eps=1e-5, sample=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    Args:
        fn: callable(params) -> scalar Tensor; must be deterministic.
        params: list of Tensors (float64 recommended) with requires_grad=True.
        eps: central difference step.
        sample: optionally check only this many randomly chosen coordinates
            per parameter (seeded by rng); default checks every coordinate.
        rng: numpy Generator used when sampling coordinates.

    Returns:
        Maximum over checked coordinates of |analytic - numeric| /
        max(|analytic|, |numeric|, 1e-12).
    """
    params = list(params)
    with GradientTape() as tape:
        tape.watch(*params)
        loss = fn(params)
        if not np.isfinite(loss.data).all():
            raise ValueError("finite_diff_check: non-finite base function value")
        grads = backward(loss, tape)

    def f_scalar():
        val = fn(params).item()
        if not np.isfinite(val):
            raise ValueError("finite_diff_check: non-finite function value at perturbed point")
        return val

    worst = 0.0
    for p in params:
        analytic = grads[p].ravel()
        flat = p.data.ravel()
        n = flat.size
        if sample is not None and sample < n:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = gen.choice(n, size=sample, replace=False)
        else:
            coords = range(n)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = f_scalar()
            flat[i] = orig - eps
            fm = f_scalar()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(abs(analytic[i]), abs(numeric), 1e-12)
            err = abs(analytic[i] - numeric) / denom
            if err > worst:
                worst = err
    return worst
