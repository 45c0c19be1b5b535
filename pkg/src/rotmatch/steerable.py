"""Equivariant layers between feature fields of a cyclic group.

Three convolution kinds cover the backbone's needs:
  * lift: trivial input fields -> regular output fields. Each output field's
    N channels convolve with the N rotated copies of one base kernel.
  * group: regular -> regular. The filter bank is generated from base
    weights [F_out, F_in, N, k, k]; the block for output element g rotates
    kernels spatially by g and cyclically shifts the input-group axis by g.
  * readout: regular -> trivial via a 1x1 convolution whose equivariance
    constraint forces one shared coefficient per (output channel, input
    field) pair; implemented as a group-sum followed by a 1x1 projection.

Filter expansion is a fixed sparse linear map of the base weights (at most
4 taps per expanded coefficient), so it is cheap and differentiable.

Downsampling layers (stride 2) apply a stride-1 convolution followed by 2x2
average pooling: on even grids the stride-2 sampling lattice has no
rot90-symmetric phase, while block pooling commutes with quarter rotations
exactly, which keeps strided layers equivariant instead of merely close.
"""

import numpy as np

from . import tensor as T
from .groups import _kernel_rotation_taps
from .nn import Module
from .tensor import Tensor

__all__ = ["EquivConv", "InnerBatchNorm", "lift_conv", "group_conv", "readout",
           "inner_batch_norm"]


def _expansion_taps(in_type, out_type, k, kind, masked):
    """Tap tables mapping flat base weights to the expanded filter bank.

    Returns (idx, w, bank_shape) where bank_shape is
    [out_channels, in_channels, k, k].
    """
    n = out_type.group.order
    rot = [_kernel_rotation_taps(k, 360.0 * g / n, masked=masked) for g in range(n)]
    n_taps = max(r[0].shape[0] for r in rot)
    kk = k * k
    # pad every element's tap table to a common depth (weight-0 taps are inert)
    ridx = np.zeros((n, n_taps, kk), dtype=np.int64)
    rw = np.zeros((n, n_taps, kk))
    for g, (i_g, w_g) in enumerate(rot):
        ridx[g, :i_g.shape[0]] = i_g
        rw[g, :w_g.shape[0]] = w_g

    if kind == "lift":
        f_out = out_type.n_regular_fields
        c_in = in_type.channel_count
        co = f_out * n
        shape = (co, c_in, k, k)
        out_pos = np.arange(co * c_in * kk)
        rem, m = np.divmod(out_pos, kk)
        rem, ci = np.divmod(rem, c_in)
        fo, g = np.divmod(rem, n)
        # base: [f_out, c_in, k, k]
        idx = (fo * c_in + ci)[None] * kk + ridx[g, :, m].T
        w = rw[g, :, m].T
        return idx, w, shape

    if kind == "group":
        f_out = out_type.n_regular_fields
        f_in = in_type.n_regular_fields
        co, ci = f_out * n, f_in * n
        shape = (co, ci, k, k)
        out_pos = np.arange(co * ci * kk)
        rem, m = np.divmod(out_pos, kk)
        rem, ih = np.divmod(rem, n)      # input channel = (fi, h)
        rem, fi = np.divmod(rem, f_in)
        fo, g = np.divmod(rem, n)
        src_h = (ih - g) % n
        # base: [f_out, f_in, n, k, k]
        idx = ((fo * f_in + fi) * n + src_h)[None] * kk + ridx[g, :, m].T
        w = rw[g, :, m].T
        return idx, w, shape

    raise ValueError(f"unknown expansion kind {kind!r}")


class EquivConv(Module):
    """Equivariant convolution between feature fields (lift/group/readout).

    Stride 2 downsamples with a stride-1 convolution plus 2x2 average
    pooling (see module docstring). Biases are shared per output field on
    regular outputs and per channel on trivial (readout) outputs.
    """

    def __init__(self, in_type, out_type, kernel_size=3, stride=1, padding=None,
                 bias=True, rng=None, dtype=np.float32):
        super().__init__()
        if in_type.group != out_type.group:
            raise ValueError("input and output field types must share a group")
        self.in_type = in_type
        self.out_type = out_type
        self.k = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        if stride not in (1, 2):
            raise ValueError("EquivConv supports stride 1 or 2")
        rng = rng or np.random.default_rng(0)
        n = in_type.group.order
        # kernels of groups with non-grid rotations are circularly masked so
        # the rotated-filter family closes under the group
        self._masked = (n not in (1, 2, 4))

        if in_type.is_all_trivial and out_type.is_all_regular:
            self.kind = "lift"
            f_out, c_in = out_type.n_regular_fields, in_type.channel_count
            fan_in = c_in * kernel_size ** 2
            base = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(f_out, c_in, kernel_size, kernel_size))
        elif in_type.is_all_regular and out_type.is_all_regular:
            self.kind = "group"
            f_out, f_in = out_type.n_regular_fields, in_type.n_regular_fields
            fan_in = f_in * n * kernel_size ** 2
            base = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                              size=(f_out, f_in, n, kernel_size, kernel_size))
        elif in_type.is_all_regular and out_type.is_all_trivial:
            self.kind = "readout"
            if kernel_size != 1:
                raise ValueError("readout layers are restricted to 1x1 kernels")
            c_out, f_in = out_type.channel_count, in_type.n_regular_fields
            # group-sum upstream multiplies activations by ~n
            base = rng.normal(0.0, np.sqrt(1.0 / (f_in * n)), size=(c_out, f_in, 1, 1))
        else:
            raise ValueError(f"unsupported field type combination: "
                             f"{in_type.reps} -> {out_type.reps}")

        self.base = Tensor(base, requires_grad=True, dtype=dtype)
        if self.kind == "readout":
            self._taps = None
            nbias = out_type.channel_count
        else:
            idx, w, bank = _expansion_taps(in_type, out_type, kernel_size, self.kind,
                                           self._masked)
            self._taps = (idx, w, bank)
            nbias = out_type.n_regular_fields
        self.bias = Tensor(np.zeros(nbias), requires_grad=True, dtype=dtype) if bias else None

    def filter_bank(self):
        """Expanded filters [out_channels, in_channels, k, k] (differentiable)."""
        if self.kind == "readout":
            return self.base
        idx, w, shape = self._taps
        return T.sparse_taps(self.base, idx, w, shape)

    def __call__(self, x):
        if x.shape[1] != self.in_type.channel_count:
            raise ValueError(f"{self.kind} conv expects {self.in_type.channel_count} "
                             f"channels, got {x.shape[1]}")
        if self.kind == "readout":
            n = self.in_type.group.order
            b, c, h, w = x.shape
            pooled = T.sum_(T.reshape(x, (b, c // n, n, h, w)), axis=2)
            y = T.conv2d(pooled, self.base, stride=1, padding=0)
        else:
            y = T.conv2d(x, self.filter_bank(), stride=1, padding=self.padding)
        if self.bias is not None:
            if self.kind == "readout":
                bias_c = self.bias
            else:
                n = self.out_type.group.order
                reps = np.repeat(np.arange(self.out_type.n_regular_fields), n)
                bias_c = T.fixed_gather(self.bias, reps, (len(reps),))
            y = y + T.reshape(bias_c, (1, len(bias_c.data), 1, 1))
        if self.stride == 2:
            y = T.avg_pool2d(y, 2)
        return y


def lift_conv(x, layer):
    if layer.kind != "lift":
        raise ValueError("lift_conv requires a lift layer (trivial in, regular out)")
    return layer(x)


def group_conv(x, layer):
    if layer.kind != "group":
        raise ValueError("group_conv requires a group layer (regular in and out)")
    return layer(x)


def readout(x, layer):
    if layer.kind != "readout":
        raise ValueError("readout requires a readout layer (regular in, trivial out)")
    return layer(x)


class InnerBatchNorm(Module):
    """Batch normalization pooling statistics over each field's group axis.

    One (scale, bias, running mean, running var) tuple per trivial channel
    and per regular field, so group-channel permutations of the input
    permute the output identically.
    """

    def __init__(self, ft, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.ft = ft
        self.eps = eps
        self.momentum = momentum
        n = ft.group.order
        unit_of_channel = []
        u = 0
        for kind, start, stop in ft.blocks():
            if kind == "trivial":
                for _ in range(stop - start):
                    unit_of_channel.append(u)
                    u += 1
            else:
                for f in range((stop - start) // n):
                    unit_of_channel.extend([u] * n)
                    u += 1
        self._unit_of_channel = np.asarray(unit_of_channel, dtype=np.int64)
        self.n_units = u
        c = ft.channel_count
        avg = np.zeros((u, c))
        for ch, uu in enumerate(self._unit_of_channel):
            avg[uu, ch] = 1.0
        avg /= avg.sum(axis=1, keepdims=True)
        self._avg = Tensor(avg, dtype=dtype)
        self.scale = Tensor(np.ones(u), requires_grad=True, dtype=dtype)
        self.shift = Tensor(np.zeros(u), requires_grad=True, dtype=dtype)
        self.register_buffer("running_mean", np.zeros(u, dtype=dtype))
        self.register_buffer("running_var", np.ones(u, dtype=dtype))

    def _per_channel(self, unit_values):
        c = len(self._unit_of_channel)
        return T.reshape(T.fixed_gather(unit_values, self._unit_of_channel, (c,)),
                         (1, c, 1, 1))

    def __call__(self, x):
        if x.shape[1] != self.ft.channel_count:
            raise ValueError(f"InnerBatchNorm expects {self.ft.channel_count} channels, "
                             f"got {x.shape[1]}")
        if self.training:
            c = self.ft.channel_count
            ch_mean = T.reshape(T.mean(x, axis=(0, 2, 3)), (c, 1))
            ch_sq = T.reshape(T.mean(x * x, axis=(0, 2, 3)), (c, 1))
            mu = T.reshape(self._avg @ ch_mean, (self.n_units,))
            var = T.reshape(self._avg @ ch_sq, (self.n_units,)) - mu * mu
            self._buffers["running_mean"] = (
                (1 - self.momentum) * self._buffers["running_mean"]
                + self.momentum * mu.data).astype(self._buffers["running_mean"].dtype)
            self._buffers["running_var"] = (
                (1 - self.momentum) * self._buffers["running_var"]
                + self.momentum * var.data).astype(self._buffers["running_var"].dtype)
            inv = (var + self.eps) ** -0.5
            xhat = (x - self._per_channel(mu)) * self._per_channel(inv)
        else:
            rm = Tensor(self._buffers["running_mean"])
            inv = Tensor(1.0 / np.sqrt(self._buffers["running_var"] + self.eps))
            xhat = (x - self._per_channel(rm)) * self._per_channel(inv)
        return xhat * self._per_channel(self.scale) + self._per_channel(self.shift)


def inner_batch_norm(x, state, training):
    state.train(training)
    return state(x)


def calibrate_norm_stats(model, x):
    """Set running statistics of every norm layer from one forward pass.

    Fresh-initialized running stats (mean 0, var 1) rarely match actual
    activation statistics, so eval-mode features of an untrained model can
    collapse through depth. A single full-momentum pass fixes the scales.
    """
    norms = [m for m in _walk_modules(model) if isinstance(m, InnerBatchNorm)]
    saved = [(m.momentum, m.training) for m in norms]
    for m in norms:
        m.momentum = 1.0
    was_training = model.training
    model.train(True)
    try:
        model(x)
    finally:
        for m, (mom, tr) in zip(norms, saved):
            m.momentum = mom
        model.train(was_training)
    return model


def _walk_modules(module):
    yield module
    for _, value in vars(module).items():
        if isinstance(value, Module):
            yield from _walk_modules(value)
        elif isinstance(value, (list, tuple)):
            for v in value:
                if isinstance(v, Module):
                    yield from _walk_modules(v)
