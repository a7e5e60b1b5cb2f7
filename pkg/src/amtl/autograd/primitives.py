"""The primitive set: enough to build a conv-frontend transformer encoder,
its heads, and every loss in :mod:`amtl.losses`."""
from __future__ import annotations

import numpy as np

from amtl import kernels
from amtl.autograd.tensor import Primitive, register
from amtl.errors import AmtlError


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _axis(axis: int, ndim: int) -> int:
    return axis % ndim if ndim else 0


class _Broadcasting(Primitive):
    def check(self, shapes, attrs):
        try:
            np.broadcast_shapes(*shapes)
        except ValueError:
            raise self.shape_error(*shapes) from None


@register
class Add(_Broadcasting):
    name = "add"

    def forward(self, arrays, attrs):
        return arrays[0] + arrays[1], None

    def backward(self, saved, g, arrays, attrs):
        return _unbroadcast(g, arrays[0].shape), _unbroadcast(g, arrays[1].shape)


@register
class Sub(_Broadcasting):
    name = "sub"

    def forward(self, arrays, attrs):
        return arrays[0] - arrays[1], None

    def backward(self, saved, g, arrays, attrs):
        return _unbroadcast(g, arrays[0].shape), _unbroadcast(-g, arrays[1].shape)


@register
class Mul(_Broadcasting):
    name = "mul"

    def forward(self, arrays, attrs):
        return arrays[0] * arrays[1], None

    def backward(self, saved, g, arrays, attrs):
        a, b = arrays
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register
class Scale(Primitive):
    name = "scale"

    def forward(self, arrays, attrs):
        return arrays[0] * arrays[0].dtype.type(attrs["factor"]), None

    def backward(self, saved, g, arrays, attrs):
        return (g * g.dtype.type(attrs["factor"]),)


@register
class MatMul(Primitive):
    name = "matmul"

    def check(self, shapes, attrs):
        a, b = shapes
        if len(a) < 2 or len(b) < 2 or a[-1] != b[-2]:
            raise self.shape_error(a, b)
        try:
            np.broadcast_shapes(a[:-2], b[:-2])
        except ValueError:
            raise self.shape_error(a, b, detail="batch dimensions") from None

    def forward(self, arrays, attrs):
        return np.matmul(arrays[0], arrays[1]), None

    def backward(self, saved, g, arrays, attrs):
        a, b = arrays
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@register
class Conv1d(Primitive):
    """Strided 1-D convolution over time.

    x: (T, C_in), weight: (C_out, C_in, K), optional bias: (C_out,).
    Output: (floor((T - K) / stride) + 1, C_out).
    """

    name = "conv1d"

    def check(self, shapes, attrs):
        stride = attrs.get("stride", 1)
        if not isinstance(stride, (int, np.integer)) or stride < 1:
            raise AmtlError(f"conv1d: stride must be an integer >= 1, got {stride!r}")
        x, w = shapes[0], shapes[1]
        if len(x) != 2 or len(w) != 3 or x[1] != w[1]:
            raise self.shape_error(x, w)
        if x[0] < w[2]:
            raise self.shape_error(x, w, detail=f"input length {x[0]} shorter than kernel width {w[2]}")
        if len(shapes) == 3 and shapes[2] != (w[0],):
            raise self.shape_error(w, shapes[2], detail="bias")

    def forward(self, arrays, attrs):
        x, w = arrays[0], arrays[1]
        stride = attrs.get("stride", 1)
        cout, cin, k = w.shape
        windows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0)[::stride]
        cols = np.ascontiguousarray(windows).reshape(windows.shape[0], cin * k)
        out = cols @ w.reshape(cout, cin * k).T
        if len(arrays) == 3:
            out = out + arrays[2]
        return out, cols

    def backward(self, saved, g, arrays, attrs):
        cols = saved
        x, w = arrays[0], arrays[1]
        stride = attrs.get("stride", 1)
        cout, cin, k = w.shape
        gw = (g.T @ cols).reshape(w.shape)
        gcols = (g @ w.reshape(cout, cin * k)).reshape(g.shape[0], cin, k)
        gx = np.zeros_like(x)
        n = g.shape[0]
        for j in range(k):
            gx[j : j + stride * (n - 1) + 1 : stride] += gcols[:, :, j]
        grads = [gx, gw]
        if len(arrays) == 3:
            grads.append(g.sum(axis=0))
        return grads


@register
class Relu(Primitive):
    name = "relu"

    def forward(self, arrays, attrs):
        return np.maximum(arrays[0], 0), None

    def backward(self, saved, g, arrays, attrs):
        return (g * (arrays[0] > 0),)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    half = x.dtype.type(0.5)
    return half * (1 + np.tanh(half * x))


@register
class Sigmoid(Primitive):
    name = "sigmoid"

    def forward(self, arrays, attrs):
        s = _sigmoid(arrays[0])
        return s, s

    def backward(self, saved, g, arrays, attrs):
        return (g * saved * (1 - saved),)


@register
class Tanh(Primitive):
    name = "tanh"

    def forward(self, arrays, attrs):
        y = np.tanh(arrays[0])
        return y, y

    def backward(self, saved, g, arrays, attrs):
        return (g * (1 - saved * saved),)


@register
class Glu(Primitive):
    """Gated linear unit: first half of ``axis`` times sigmoid of second half."""

    name = "glu"

    def check(self, shapes, attrs):
        (x,) = shapes
        ax = _axis(attrs.get("axis", -1), len(x))
        if not x or x[ax] % 2:
            raise self.shape_error(x, detail="gated axis must have even extent")

    def forward(self, arrays, attrs):
        a, b = np.split(arrays[0], 2, axis=attrs.get("axis", -1))
        s = _sigmoid(b)
        return a * s, (a, s)

    def backward(self, saved, g, arrays, attrs):
        a, s = saved
        return (np.concatenate([g * s, g * a * s * (1 - s)], axis=attrs.get("axis", -1)),)


@register
class Exp(Primitive):
    name = "exp"

    def forward(self, arrays, attrs):
        y = np.exp(arrays[0])
        return y, y

    def backward(self, saved, g, arrays, attrs):
        return (g * saved,)


@register
class Log(Primitive):
    name = "log"

    def forward(self, arrays, attrs):
        return np.log(arrays[0]), None

    def backward(self, saved, g, arrays, attrs):
        return (g / arrays[0],)


@register
class Softmax(Primitive):
    name = "softmax"

    def forward(self, arrays, attrs):
        ax = attrs.get("axis", -1)
        x = arrays[0]
        e = np.exp(x - x.max(axis=ax, keepdims=True))
        s = e / e.sum(axis=ax, keepdims=True)
        return s, s

    def backward(self, saved, g, arrays, attrs):
        ax = attrs.get("axis", -1)
        s = saved
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)


@register
class LogSoftmax(Primitive):
    name = "log_softmax"

    def forward(self, arrays, attrs):
        ax = attrs.get("axis", -1)
        x = arrays[0]
        shifted = x - x.max(axis=ax, keepdims=True)
        y = shifted - np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
        return y, y

    def backward(self, saved, g, arrays, attrs):
        ax = attrs.get("axis", -1)
        return (g - np.exp(saved) * g.sum(axis=ax, keepdims=True),)


@register
class LayerNorm(Primitive):
    """Normalize over the last axis, then scale by gamma and shift by beta."""

    name = "layer_norm"

    def check(self, shapes, attrs):
        x, gamma, beta = shapes
        if not x or gamma != (x[-1],) or beta != (x[-1],):
            raise self.shape_error(x, gamma, detail=f"beta {beta}")

    def forward(self, arrays, attrs):
        x, gamma, beta = arrays
        eps = x.dtype.type(attrs.get("eps", 1e-5))
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        rstd = 1 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        xhat = xc * rstd
        return xhat * gamma + beta, (xhat, rstd)

    def backward(self, saved, g, arrays, attrs):
        xhat, rstd = saved
        gamma = arrays[1]
        gxhat = g * gamma
        gx = rstd * (
            gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)


class _Reduce(Primitive):
    def _expand(self, g, shape, attrs):
        axis = attrs.get("axis")
        if axis is not None and not attrs.get("keepdims", False):
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            g = np.expand_dims(g, tuple(a % len(shape) for a in axes))
        return np.broadcast_to(g, shape)

    def _count(self, shape, attrs):
        axis = attrs.get("axis")
        if axis is None:
            return int(np.prod(shape))
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        return int(np.prod([shape[a] for a in axes]))


@register
class Sum(_Reduce):
    name = "sum"

    def forward(self, arrays, attrs):
        return np.asarray(arrays[0].sum(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False))), None

    def backward(self, saved, g, arrays, attrs):
        return (np.array(self._expand(g, arrays[0].shape, attrs)),)


@register
class Mean(_Reduce):
    """Mean over an axis; mean over time is the pooling used by the accent head."""

    name = "mean"

    def forward(self, arrays, attrs):
        return np.asarray(arrays[0].mean(axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False))), None

    def backward(self, saved, g, arrays, attrs):
        n = self._count(arrays[0].shape, attrs)
        return (np.array(self._expand(g, arrays[0].shape, attrs)) / g.dtype.type(n),)


@register
class Reshape(Primitive):
    name = "reshape"

    def check(self, shapes, attrs):
        (x,) = shapes
        try:
            np.empty(x, dtype=np.uint8).reshape(attrs["shape"])
        except ValueError:
            raise self.shape_error(x, attrs["shape"]) from None

    def forward(self, arrays, attrs):
        return arrays[0].reshape(attrs["shape"]), None

    def backward(self, saved, g, arrays, attrs):
        return (g.reshape(arrays[0].shape),)


@register
class Transpose(Primitive):
    name = "transpose"

    def forward(self, arrays, attrs):
        return np.ascontiguousarray(np.transpose(arrays[0], attrs.get("axes"))), None

    def backward(self, saved, g, arrays, attrs):
        axes = attrs.get("axes")
        inv = None if axes is None else tuple(np.argsort(axes))
        return (np.transpose(g, inv),)


@register
class Take(Primitive):
    """Row gather along ``axis``: embedding lookup and index selection."""

    name = "take"

    def check(self, shapes, attrs):
        (x,) = shapes
        idx = np.asarray(attrs["indices"])
        ax = _axis(attrs.get("axis", 0), len(x))
        if idx.ndim != 1:
            raise self.shape_error(x, idx.shape, detail="indices must be one-dimensional")
        if not x or (idx.size and (idx.min() < -x[ax] or idx.max() >= x[ax])):
            raise self.shape_error(x, idx.shape, detail="index out of range")

    def forward(self, arrays, attrs):
        return np.take(arrays[0], np.asarray(attrs["indices"]), axis=attrs.get("axis", 0)), None

    def backward(self, saved, g, arrays, attrs):
        x = arrays[0]
        ax = _axis(attrs.get("axis", 0), x.ndim)
        gx = np.zeros_like(x)
        idx = np.asarray(attrs["indices"])
        gm = np.moveaxis(gx, ax, 0)
        np.add.at(gm, idx, np.moveaxis(g, ax, 0))
        return (gx,)


@register
class Pick(Primitive):
    """x[i, idx[i]] for a (B, C) input: the per-row class pick of cross-entropy."""

    name = "pick"

    def check(self, shapes, attrs):
        (x,) = shapes
        idx = np.asarray(attrs["indices"])
        if len(x) != 2 or idx.shape != (x[0],):
            raise self.shape_error(x, idx.shape)
        if idx.size and (idx.min() < 0 or idx.max() >= x[1]):
            raise self.shape_error(x, idx.shape, detail="class index out of range")

    def forward(self, arrays, attrs):
        idx = np.asarray(attrs["indices"])
        return arrays[0][np.arange(len(idx)), idx], None

    def backward(self, saved, g, arrays, attrs):
        idx = np.asarray(attrs["indices"])
        gx = np.zeros_like(arrays[0])
        gx[np.arange(len(idx)), idx] = g
        return (gx,)


@register
class Slice(Primitive):
    """Basic slicing (ints and slices); the result is a materialized copy."""

    name = "slice"

    def check(self, shapes, attrs):
        key = attrs["key"]
        parts = key if isinstance(key, tuple) else (key,)
        if any(not isinstance(p, (int, slice, np.integer)) and p is not Ellipsis for p in parts):
            raise AmtlError("slice: only integer and slice keys are supported")
        try:
            out = np.empty(shapes[0], dtype=np.uint8)[key]
        except IndexError:
            raise self.shape_error(shapes[0], detail=f"key {key!r}") from None
        if 0 in np.shape(out):
            raise self.shape_error(shapes[0], detail=f"key {key!r} selects nothing")

    def forward(self, arrays, attrs):
        return np.array(arrays[0][attrs["key"]]), None

    def backward(self, saved, g, arrays, attrs):
        gx = np.zeros_like(arrays[0])
        gx[attrs["key"]] = g
        return (gx,)


@register
class Concat(Primitive):
    name = "concat"

    def check(self, shapes, attrs):
        ax = attrs.get("axis", 0)
        first = shapes[0]
        a = _axis(ax, len(first))
        for s in shapes[1:]:
            if len(s) != len(first) or any(d1 != d2 for i, (d1, d2) in enumerate(zip(first, s)) if i != a):
                raise self.shape_error(first, s)

    def forward(self, arrays, attrs):
        return np.concatenate(arrays, axis=attrs.get("axis", 0)), None

    def backward(self, saved, g, arrays, attrs):
        ax = attrs.get("axis", 0)
        cuts = np.cumsum([a.shape[ax] for a in arrays])[:-1]
        return np.split(g, cuts, axis=ax)


@register
class Stack(Primitive):
    name = "stack"

    def check(self, shapes, attrs):
        for s in shapes[1:]:
            if s != shapes[0]:
                raise self.shape_error(shapes[0], s)

    def forward(self, arrays, attrs):
        return np.stack(arrays, axis=attrs.get("axis", 0)), None

    def backward(self, saved, g, arrays, attrs):
        ax = attrs.get("axis", 0)
        return [np.take(g, i, axis=ax) for i in range(len(arrays))]


@register
class Dropout(Primitive):
    """Multiply by a precomputed, already rescaled keep mask."""

    name = "dropout"

    def check(self, shapes, attrs):
        if np.shape(attrs["mask"]) != shapes[0]:
            raise self.shape_error(shapes[0], np.shape(attrs["mask"]), detail="mask")

    def forward(self, arrays, attrs):
        return arrays[0] * attrs["mask"], None

    def backward(self, saved, g, arrays, attrs):
        return (g * attrs["mask"],)


@register
class L2Normalize(Primitive):
    """x / sqrt(sum(x^2) + eps) along the last axis (smooth at the origin)."""

    name = "l2_normalize"

    def forward(self, arrays, attrs):
        x = arrays[0]
        eps = x.dtype.type(attrs.get("eps", 1e-12))
        r = 1 / np.sqrt((x * x).sum(axis=-1, keepdims=True) + eps)
        return x * r, r

    def backward(self, saved, g, arrays, attrs):
        x = arrays[0]
        r = saved
        return (g * r - x * (r * r * r) * (g * x).sum(axis=-1, keepdims=True),)


@register
class CtcLoss(Primitive):
    """Negative log-likelihood of one target under CTC; input (T, V) log-probs."""

    name = "ctc_loss"

    def check(self, shapes, attrs):
        (x,) = shapes
        if len(x) != 2:
            raise self.shape_error(x, detail="expected (T, V) log-probabilities")
        target = np.asarray(attrs["target"], dtype=np.int64)
        blank = attrs.get("blank", 0)
        if target.size and (target.min() < 0 or target.max() >= x[1]):
            raise self.shape_error(x, target.shape, detail="target id out of vocabulary")
        if not 0 <= blank < x[1]:
            raise self.shape_error(x, detail=f"blank id {blank} out of vocabulary")

    def forward(self, arrays, attrs):
        x = arrays[0]
        nll, grad = kernels.ctc_forward_backward(
            x, np.asarray(attrs["target"], dtype=np.int64), int(attrs.get("blank", 0))
        )
        return np.asarray(nll, dtype=x.dtype), grad.astype(x.dtype, copy=False)

    def backward(self, saved, g, arrays, attrs):
        return (saved * g,)
