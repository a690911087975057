"""Layer kinds for the dense numpy engine.

All layers work on batches: the leading axis is the sample index. Forward
passes are pure; backward passes recompute whatever they need from the
layer input and output so no state is cached between calls.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

EMPTY = np.zeros(0)


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = None
    has_weights = False

    def __init__(self):
        self.weight = EMPTY
        self.bias = EMPTY

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, x, y, grad_y):
        """Return (grad_x, grad_weight, grad_bias) for one batch."""
        raise NotImplementedError

    def config(self):
        return {"kind": self.kind}

    def __repr__(self):
        return f"{type(self).__name__}({self.config()})"


class FullyConnected(Layer):
    kind = "fully_connected"
    has_weights = True

    def __init__(self, in_features, units, use_bias=True, rng=None):
        super().__init__()
        self.in_features, self.units, self.use_bias = in_features, units, use_bias
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = glorot_uniform(rng, (units, in_features), in_features, units)
        self.bias = np.zeros(units) if use_bias else EMPTY

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.in_features,):
            raise ValueError(f"expects input ({self.in_features},), got {tuple(input_shape)}")
        return (self.units,)

    def forward(self, x):
        out = x @ self.weight.T
        if self.use_bias:
            out = out + self.bias
        return out

    def backward(self, x, y, grad_y):
        gw = grad_y.T @ x
        gb = grad_y.sum(axis=0) if self.use_bias else EMPTY
        return grad_y @ self.weight, gw, gb

    def config(self):
        cfg = {"kind": self.kind, "units": self.units}
        if not self.use_bias:
            cfg["bias"] = False
        return cfg


def conv2d_direct(x, w, b, stride=1, padding=0):
    """Reference convolution by explicit loops (cross-correlation, NCHW)."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(n):
        for f in range(o):
            for r in range(oh):
                for s in range(ow):
                    patch = xp[i, :, r * stride:r * stride + kh, s * stride:s * stride + kw]
                    out[i, f, r, s] = np.sum(patch * w[f]) + (b[f] if b.size else 0.0)
    return out


class Conv2D(Layer):
    kind = "conv2d"
    has_weights = True

    def __init__(self, in_channels, filters, kernel, stride=1, padding=0, use_bias=True, rng=None):
        super().__init__()
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.use_bias = use_bias
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel * kernel
        fan_out = filters * kernel * kernel
        self.weight = glorot_uniform(rng, (filters, in_channels, kernel, kernel), fan_in, fan_out)
        self.bias = np.zeros(filters) if use_bias else EMPTY

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != self.in_channels:
            raise ValueError(f"expects ({self.in_channels}, H, W), got {tuple(input_shape)}")
        _, h, w = input_shape
        oh = (h + 2 * self.padding - self.kernel) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"kernel {self.kernel} does not fit input {tuple(input_shape)}")
        return (self.filters, oh, ow)

    def _patches(self, x):
        p, s, k = self.padding, self.stride, self.kernel
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        # (N, C, OH, OW, k, k)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        return xp, win

    def forward(self, x):
        _, win = self._patches(x)
        out = np.einsum("ncrskl,fckl->nfrs", win, self.weight, optimize=True)
        if self.use_bias:
            out = out + self.bias[None, :, None, None]
        return out

    def backward(self, x, y, grad_y):
        p, s, k = self.padding, self.stride, self.kernel
        xp, win = self._patches(x)
        gw = np.einsum("ncrskl,nfrs->fckl", win, grad_y, optimize=True)
        gb = grad_y.sum(axis=(0, 2, 3)) if self.use_bias else EMPTY
        gxp = np.zeros_like(xp)
        oh, ow = grad_y.shape[2], grad_y.shape[3]
        for i in range(k):
            for j in range(k):
                # contribution of kernel tap (i, j) to every output location
                gxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += np.einsum(
                    "nfrs,fc->ncrs", grad_y, self.weight[:, :, i, j], optimize=True
                )
        gx = gxp[:, :, p:xp.shape[2] - p, p:xp.shape[3] - p] if p else gxp
        return gx, gw, gb

    def config(self):
        cfg = {
            "kind": self.kind,
            "filters": self.filters,
            "kernel": self.kernel,
            "stride": self.stride,
            "padding": self.padding,
        }
        if not self.use_bias:
            cfg["bias"] = False
        return cfg


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, x, y, grad_y):
        return grad_y * (x > 0), EMPTY, EMPTY


class MaxPool(Layer):
    kind = "max_pool"

    def __init__(self, size=2, stride=None):
        super().__init__()
        self.size = size
        self.stride = size if stride is None else stride

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ValueError(f"expects (C, H, W), got {tuple(input_shape)}")
        c, h, w = input_shape
        oh = (h - self.size) // self.stride + 1
        ow = (w - self.size) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"pool {self.size} does not fit input {tuple(input_shape)}")
        return (c, oh, ow)

    def _windows(self, x):
        k, s = self.size, self.stride
        return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]

    def forward(self, x):
        return self._windows(x).max(axis=(4, 5))

    def backward(self, x, y, grad_y):
        k, s = self.size, self.stride
        win = self._windows(x)
        n, c, oh, ow = win.shape[:4]
        # first maximal element in each window receives the gradient
        arg = win.reshape(n, c, oh, ow, k * k).argmax(axis=-1)
        di, dj = np.divmod(arg, k)
        rows = np.arange(oh)[None, None, :, None] * s + di
        cols = np.arange(ow)[None, None, None, :] * s + dj
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        gx = np.zeros_like(x)
        np.add.at(gx, (ni, ci, rows, cols), grad_y)
        return gx, EMPTY, EMPTY

    def config(self):
        return {"kind": self.kind, "size": self.size, "stride": self.stride}


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ValueError(f"expects (C, H, W), got {tuple(input_shape)}")
        return (input_shape[0],)

    def forward(self, x):
        return x.mean(axis=(2, 3))

    def backward(self, x, y, grad_y):
        h, w = x.shape[2], x.shape[3]
        gx = np.broadcast_to(grad_y[:, :, None, None] / (h * w), x.shape).copy()
        return gx, EMPTY, EMPTY


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1)

    def backward(self, x, y, grad_y):
        return grad_y.reshape(x.shape), EMPTY, EMPTY


class Softmax(Layer):
    kind = "softmax"

    def output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ValueError(f"softmax expects a flat input, got {tuple(input_shape)}")
        return tuple(input_shape)

    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def backward(self, x, y, grad_y):
        return y * (grad_y - np.sum(grad_y * y, axis=1, keepdims=True)), EMPTY, EMPTY


KINDS = {
    cls.kind: cls
    for cls in (FullyConnected, Conv2D, ReLU, MaxPool, GlobalAvgPool, Flatten, Softmax)
}
