"""Small module system: parameter registration, train/eval mode, state dicts."""

import numpy as np

from .tensor import Tensor, add, matmul


class Module:
    """Base class for layers and models.

    Parameters are Tensor attributes with requires_grad=True; persistent
    non-learnable state (running statistics) goes in `self._buffers`.
    Attribute insertion order fixes parameter naming, so checkpoints are
    deterministic.
    """

    def __init__(self):
        self._buffers = {}
        self._training = True

    def register_buffer(self, name, array):
        self._buffers[name] = np.asarray(array)

    @property
    def training(self):
        return self._training

    def train(self, flag=True):
        self._training = flag
        for child in self._children():
            child.train(flag)
        return self

    def eval(self):
        return self.train(False)

    def _children(self):
        for _, value in vars(self).items():
            if isinstance(value, Module):
                yield value
            elif isinstance(value, (list, tuple)):
                for v in value:
                    if isinstance(v, Module):
                        yield v

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, arr in self._buffers.items():
            yield f"{prefix}{name}", arr
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_buffers(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield from v.named_buffers(f"{full}.{i}.")

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        for name, arr in self.named_buffers():
            state[name] = arr
        return state

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = []
        for name, p in own.items():
            if name not in state:
                missing.append(name)
                continue
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"checkpoint {arr.shape} vs model {p.data.shape}")
            p.data = arr.copy()
        buf_owners = self._buffer_owners()
        for name, (owner, key) in buf_owners.items():
            if name in state:
                owner._buffers[key] = np.asarray(state[name]).astype(
                    owner._buffers[key].dtype).copy()
            else:
                missing.append(name)
        if missing:
            raise ValueError(f"checkpoint missing entries: {missing}")

    def _buffer_owners(self, prefix=""):
        owners = {}
        for key in self._buffers:
            owners[f"{prefix}{key}"] = (self, key)
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                owners.update(value._buffer_owners(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        owners.update(v._buffer_owners(f"{full}.{i}."))
        return owners


def param_count(module):
    """Number of free scalars (weights and norm scales/biases; running stats excluded)."""
    if isinstance(module, Tensor):
        return module.size
    return sum(p.size for p in module.parameters())


class Linear(Module):
    """Affine map on the last axis: y = x @ weight + bias."""

    def __init__(self, d_in, d_out, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(1.0 / d_in)
        self.weight = Tensor(rng.uniform(-scale, scale, size=(d_in, d_out)),
                             requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True, dtype=dtype) if bias else None

    def __call__(self, x):
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = add(y, self.bias)
        return y
