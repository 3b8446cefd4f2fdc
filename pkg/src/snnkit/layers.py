"""Layers for the from-scratch network engine.

All tensors are float64 numpy arrays; image tensors are (N, C, H, W).
Every layer implements forward(x, train) and backward(grad_out); parametric
layers expose .params / .grads dicts keyed by name. Convolution is
cross-correlation (no kernel flip), the universal ML convention.
"""

from dataclasses import dataclass

import numpy as np

from .errors import MissingCache, ShapeMismatch

LAYER_KINDS = (
    "conv2d", "dense", "relu", "max_pool", "avg_pool",
    "batch_norm", "dropout", "softmax", "flatten",
)


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description; the currency of conversion rules."""

    kind: str
    params: tuple = ()  # sorted (key, value) pairs, hashable

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @classmethod
    def make(cls, kind, **params):
        _validate_params(kind, params)
        return cls(kind, tuple(sorted(params.items())))

    def get(self, key, default=None):
        return dict(self.params).get(key, default)

    def as_dict(self):
        return {"kind": self.kind, **dict(self.params)}


def _validate_params(kind, p):
    def positive(*keys):
        for k in keys:
            if p[k] <= 0:
                raise ValueError(f"{kind}.{k} must be positive, got {p[k]}")

    if kind == "conv2d":
        positive("in_channels", "out_channels", "kernel_size")
        if p.get("stride", 1) <= 0 or p.get("padding", 0) < 0:
            raise ValueError("bad conv2d stride/padding")
    elif kind == "dense":
        positive("in_features", "out_features")
    elif kind in ("max_pool", "avg_pool"):
        positive("window")
    elif kind == "batch_norm":
        positive("num_features")
    elif kind == "dropout":
        if not 0.0 <= p["p"] < 1.0:
            raise ValueError(f"dropout p must be in [0, 1), got {p['p']}")


class Layer:
    spec: LayerSpec

    def __init__(self, spec):
        self.spec = spec
        self.params = {}
        self.grads = {}
        self._cache = None

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise MissingCache(f"{self.spec.kind}: backward before forward")
        return self._cache

    def out_shape(self, in_shape):
        """Shape of one item (no batch dim) after this layer."""
        raise NotImplementedError


# ---------------------------------------------------------------------------
# im2col helpers

def _im2col(x, k, stride, padding):
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, oh, ow, k, k),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    # (n*oh*ow, c*k*k)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * k * k)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols, x_shape, k, stride, padding, oh, ow):
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp))
    cols = cols.reshape(n, oh, ow, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, :, :, i, j]
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


class Conv2d(Layer):
    def __init__(self, spec, rng=None):
        super().__init__(spec)
        cin = spec.get("in_channels")
        cout = spec.get("out_channels")
        k = spec.get("kernel_size")
        self.k, self.stride, self.padding = k, spec.get("stride", 1), spec.get("padding", 0)
        self.cin, self.cout = cin, cout
        fan_in = cin * k * k
        limit = np.sqrt(6.0 / fan_in)  # He-style uniform, seeded
        w = rng.uniform(-limit, limit, size=(cout, fan_in)) if rng is not None else np.zeros((cout, fan_in))
        self.params = {"w": w, "b": np.zeros(cout)}

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ShapeMismatch(f"conv2d expected (N,{self.cin},H,W), got {x.shape}")
        cols, oh, ow = _im2col(x, self.k, self.stride, self.padding)
        out = cols @ self.params["w"].T + self.params["b"]
        out = out.reshape(x.shape[0], oh, ow, self.cout).transpose(0, 3, 1, 2)
        self._cache = (x.shape, cols, oh, ow)
        return out

    def backward(self, grad_out):
        x_shape, cols, oh, ow = self._need_cache()
        n = x_shape[0]
        g = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, self.cout)
        self.grads = {"w": g.T @ cols, "b": g.sum(axis=0)}
        grad_cols = g @ self.params["w"]
        return _col2im(grad_cols, x_shape, self.k, self.stride, self.padding, oh, ow)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.cin:
            raise ShapeMismatch(f"conv2d wants {self.cin} channels, got {c}")
        oh = (h + 2 * self.padding - self.k) // self.stride + 1
        ow = (w + 2 * self.padding - self.k) // self.stride + 1
        return (self.cout, oh, ow)


class Dense(Layer):
    def __init__(self, spec, rng=None):
        super().__init__(spec)
        fin, fout = spec.get("in_features"), spec.get("out_features")
        self.fin, self.fout = fin, fout
        limit = np.sqrt(6.0 / fin)
        w = rng.uniform(-limit, limit, size=(fout, fin)) if rng is not None else np.zeros((fout, fin))
        self.params = {"w": w, "b": np.zeros(fout)}

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.fin:
            raise ShapeMismatch(f"dense expected (N,{self.fin}), got {x.shape}")
        self._cache = x
        return x @ self.params["w"].T + self.params["b"]

    def backward(self, grad_out):
        x = self._need_cache()
        self.grads = {"w": grad_out.T @ x, "b": grad_out.sum(axis=0)}
        return grad_out @ self.params["w"]

    def out_shape(self, in_shape):
        if in_shape != (self.fin,):
            raise ShapeMismatch(f"dense wants ({self.fin},), got {in_shape}")
        return (self.fout,)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._cache = x > 0
        return np.maximum(x, 0.0)

    def backward(self, grad_out):
        return grad_out * self._need_cache()

    def out_shape(self, in_shape):
        return in_shape


class MaxPool2d(Layer):
    """Non-overlapping max pooling (stride == window)."""

    def __init__(self, spec):
        super().__init__(spec)
        self.window = spec.get("window")

    def _split(self, x):
        n, c, h, w = x.shape
        k = self.window
        if h % k or w % k:
            raise ShapeMismatch(f"pool window {k} does not tile {h}x{w}")
        return x.reshape(n, c, h // k, k, w // k, k)

    def forward(self, x, train=False):
        blocks = self._split(x)
        out = blocks.max(axis=(3, 5))
        self._cache = (x.shape, blocks == out[:, :, :, None, :, None])
        return out

    def backward(self, grad_out):
        x_shape, mask = self._need_cache()
        g = mask * grad_out[:, :, :, None, :, None]
        # split credit evenly across ties so the gradient stays exact
        g = g / mask.sum(axis=(3, 5), keepdims=True)
        return g.reshape(x_shape)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        k = self.window
        if h % k or w % k:
            raise ShapeMismatch(f"pool window {k} does not tile {h}x{w}")
        return (c, h // k, w // k)


class AvgPool2d(MaxPool2d):
    def forward(self, x, train=False):
        blocks = self._split(x)
        self._cache = (x.shape, None)
        return blocks.mean(axis=(3, 5))

    def backward(self, grad_out):
        x_shape, _ = self._need_cache()
        k = self.window
        g = grad_out[:, :, :, None, :, None] / (k * k)
        g = np.broadcast_to(g, grad_out.shape[:3] + (k, grad_out.shape[3], k))
        return g.reshape(x_shape)


class BatchNorm(Layer):
    """Per-channel batch normalization with learned scale/shift.

    Works on (N, C, H, W) and (N, F) inputs; running statistics drive
    inference mode and are what fold_batch_norm absorbs.
    """

    def __init__(self, spec):
        super().__init__(spec)
        n = spec.get("num_features")
        self.eps = spec.get("eps", 1e-5)
        self.momentum = spec.get("momentum", 0.1)
        self.params = {"gamma": np.ones(n), "beta": np.zeros(n)}
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)

    def _axes(self, x):
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        if x.ndim == 2:
            return (0,), (1, -1)
        raise ShapeMismatch(f"batch_norm on {x.ndim}-d input")

    def forward(self, x, train=False):
        axes, bshape = self._axes(x)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        self._cache = (xhat, inv_std, axes, bshape, x.shape)
        return self.params["gamma"].reshape(bshape) * xhat + self.params["beta"].reshape(bshape)

    def backward(self, grad_out):
        xhat, inv_std, axes, bshape, x_shape = self._need_cache()
        m = np.prod([x_shape[a] for a in axes])
        self.grads = {
            "gamma": (grad_out * xhat).sum(axis=axes),
            "beta": grad_out.sum(axis=axes),
        }
        g = grad_out * self.params["gamma"].reshape(bshape)
        gx = (g - g.mean(axis=axes, keepdims=True)
              - xhat * (g * xhat).mean(axis=axes, keepdims=True)) * inv_std.reshape(bshape)
        return gx

    def out_shape(self, in_shape):
        return in_shape


class Dropout(Layer):
    """Inverted dropout: scaled at train time, identity at inference."""

    def __init__(self, spec, rng=None):
        super().__init__(spec)
        self.p = spec.get("p")
        self.rng = rng

    def forward(self, x, train=False):
        if not train or self.p == 0.0:
            self._cache = None
            return x
        keep = 1.0 - self.p
        mask = (self.rng.random(x.shape) < keep) / keep
        self._cache = mask
        return x * mask

    def backward(self, grad_out):
        return grad_out if self._cache is None else grad_out * self._cache

    def out_shape(self, in_shape):
        return in_shape


class Flatten(Layer):
    def forward(self, x, train=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._need_cache())

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Softmax(Layer):
    def forward(self, x, train=False):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._cache = p
        return p

    def backward(self, grad_out):
        p = self._need_cache()
        return p * (grad_out - (grad_out * p).sum(axis=1, keepdims=True))

    def out_shape(self, in_shape):
        return in_shape


def build_layer(spec: LayerSpec, rng=None) -> Layer:
    kind = spec.kind
    if kind == "conv2d":
        return Conv2d(spec, rng)
    if kind == "dense":
        return Dense(spec, rng)
    if kind == "relu":
        return ReLU(spec)
    if kind == "max_pool":
        return MaxPool2d(spec)
    if kind == "avg_pool":
        return AvgPool2d(spec)
    if kind == "batch_norm":
        return BatchNorm(spec)
    if kind == "dropout":
        return Dropout(spec, rng)
    if kind == "flatten":
        return Flatten(spec)
    if kind == "softmax":
        return Softmax(spec)
    raise ValueError(kind)
