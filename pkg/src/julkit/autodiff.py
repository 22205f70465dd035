"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array together with the closure that
propagates gradients back to its parents. Building an expression records
the graph; calling :meth:`Tensor.backward` on a scalar result walks the
graph once in reverse topological order and accumulates ``.grad`` on every
tensor that requires it. Graphs are one-shot: running backward twice over
the same nodes without rebuilding the expression is rejected.

The heavy kernels (convolution, bilinear sampling) are delegated to the
selected backend in :mod:`julkit._kernels`; everything else is plain numpy.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError, JulkitError, ShapeError

ELEMENTWISE_KINDS = frozenset(
    {"add", "sub", "mul", "div", "neg", "exp", "log", "abs",
     "square", "sigmoid", "tanh", "softplus"}
)
REDUCE_KINDS = frozenset({"sum", "mean"})


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Tensor:
    """A float64 array plus the bookkeeping for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward",
                 "_op", "_consumed")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    # -- basic introspection -------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    def detach(self):
        """A view of the same values cut loose from the graph."""
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- graph construction helper --------------------------------------

    @staticmethod
    def _make(data, parents, op, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    # -- elementwise unary ----------------------------------------------

    def neg(self):
        out = Tensor._make(-self.data, (self,), "neg",
                           lambda g, a=self: a._accumulate(-g))
        return out

    def exp(self):
        val = np.exp(self.data)

        def backward(g, a=self, v=val):
            a._accumulate(g * v)

        return Tensor._make(val, (self,), "exp", backward)

    def log(self):
        if np.any(self.data <= 0.0):
            raise DomainError("log requires strictly positive values")

        def backward(g, a=self):
            a._accumulate(g / a.data)

        return Tensor._make(np.log(self.data), (self,), "log", backward)

    def abs(self):
        # subgradient at exactly zero is defined as zero
        def backward(g, a=self):
            a._accumulate(g * np.sign(a.data))

        return Tensor._make(np.abs(self.data), (self,), "abs", backward)

    def square(self):
        def backward(g, a=self):
            a._accumulate(g * 2.0 * a.data)

        return Tensor._make(np.square(self.data), (self,), "square", backward)

    def sigmoid(self):
        val = _stable_sigmoid(self.data)

        def backward(g, a=self, v=val):
            a._accumulate(g * v * (1.0 - v))

        return Tensor._make(val, (self,), "sigmoid", backward)

    def tanh(self):
        val = np.tanh(self.data)

        def backward(g, a=self, v=val):
            a._accumulate(g * (1.0 - v * v))

        return Tensor._make(val, (self,), "tanh", backward)

    def softplus(self):
        val = np.logaddexp(0.0, self.data)

        def backward(g, a=self):
            a._accumulate(g * _stable_sigmoid(a.data))

        return Tensor._make(val, (self,), "softplus", backward)

    def sin(self):
        def backward(g, a=self):
            a._accumulate(g * np.cos(a.data))

        return Tensor._make(np.sin(self.data), (self,), "sin", backward)

    def cos(self):
        def backward(g, a=self):
            a._accumulate(g * -np.sin(a.data))

        return Tensor._make(np.cos(self.data), (self,), "cos", backward)

    def sqrt(self):
        if np.any(self.data < 0.0):
            raise DomainError("sqrt requires non-negative values")
        val = np.sqrt(self.data)

        def backward(g, a=self, v=val):
            a._accumulate(g * 0.5 / v)

        return Tensor._make(val, (self,), "sqrt", backward)

    def clamp(self, lo, hi):
        """Clip values to [lo, hi]; gradient passes only where unclipped."""
        mask = (self.data >= lo) & (self.data <= hi)

        def backward(g, a=self, m=mask):
            a._accumulate(g * m)

        return Tensor._make(np.clip(self.data, lo, hi), (self,), "clamp", backward)

    # -- elementwise binary ----------------------------------------------

    @staticmethod
    def _coerce(other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=np.float64))

    def _binary_shapes(self, b, op):
        if self.data.shape == b.data.shape:
            return
        if self.data.size == 1 or b.data.size == 1:
            return
        raise ShapeError(
            f"{op}: shapes {self.data.shape} and {b.data.shape} require "
            "equal shapes or a scalar operand"
        )

    @staticmethod
    def _unbroadcast(g, shape):
        if g.shape == shape:
            return g
        return np.sum(g).reshape(shape)

    def add(self, other):
        b = Tensor._coerce(other)
        self._binary_shapes(b, "add")

        def backward(g, a=self, bb=b):
            a._accumulate(Tensor._unbroadcast(g, a.data.shape))
            bb._accumulate(Tensor._unbroadcast(g, bb.data.shape))

        return Tensor._make(self.data + b.data, (self, b), "add", backward)

    def sub(self, other):
        b = Tensor._coerce(other)
        self._binary_shapes(b, "sub")

        def backward(g, a=self, bb=b):
            a._accumulate(Tensor._unbroadcast(g, a.data.shape))
            bb._accumulate(Tensor._unbroadcast(-g, bb.data.shape))

        return Tensor._make(self.data - b.data, (self, b), "sub", backward)

    def mul(self, other):
        b = Tensor._coerce(other)
        self._binary_shapes(b, "mul")

        def backward(g, a=self, bb=b):
            a._accumulate(Tensor._unbroadcast(g * bb.data, a.data.shape))
            bb._accumulate(Tensor._unbroadcast(g * a.data, bb.data.shape))

        return Tensor._make(self.data * b.data, (self, b), "mul", backward)

    def div(self, other):
        b = Tensor._coerce(other)
        self._binary_shapes(b, "div")
        if np.any(b.data == 0.0):
            raise DomainError("div requires a nonzero divisor")

        def backward(g, a=self, bb=b):
            a._accumulate(Tensor._unbroadcast(g / bb.data, a.data.shape))
            bb._accumulate(
                Tensor._unbroadcast(-g * a.data / (bb.data * bb.data), bb.data.shape)
            )

        return Tensor._make(self.data / b.data, (self, b), "div", backward)

    # -- operator sugar ---------------------------------------------------

    __add__ = add
    __mul__ = mul
    __sub__ = sub
    __truediv__ = div
    __neg__ = neg

    def __radd__(self, other):
        return Tensor._coerce(other).add(self)

    def __rsub__(self, other):
        return Tensor._coerce(other).sub(self)

    def __rmul__(self, other):
        return Tensor._coerce(other).mul(self)

    def __rtruediv__(self, other):
        return Tensor._coerce(other).div(self)

    def __matmul__(self, other):
        return self.matmul(other)

    # -- reductions --------------------------------------------------------

    def _check_axis(self, axis):
        if axis is None:
            return None
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for ax in axes:
            if not -self.data.ndim <= ax < self.data.ndim:
                raise ShapeError(f"axis {ax} invalid for rank {self.data.ndim}")
        return tuple(ax % self.data.ndim for ax in axes)

    def sum(self, axis=None, keepdims=False):
        axes = self._check_axis(axis)
        val = np.sum(self.data, axis=axes, keepdims=keepdims)

        def backward(g, a=self, axes=axes, keepdims=keepdims):
            if axes is not None and not keepdims:
                g = np.expand_dims(g, axes)
            a._accumulate(np.broadcast_to(g, a.data.shape))

        return Tensor._make(val, (self,), "sum", backward)

    def mean(self, axis=None, keepdims=False):
        axes = self._check_axis(axis)
        if axes is None:
            count = self.data.size
        else:
            count = 1
            for ax in axes:
                count *= self.data.shape[ax]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- structural ops ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        val = self.data.reshape(shape)

        def backward(g, a=self):
            a._accumulate(g.reshape(a.data.shape))

        return Tensor._make(val, (self,), "reshape", backward)

    def broadcast_to(self, shape):
        shape = tuple(shape)
        try:
            val = np.broadcast_to(self.data, shape)
        except ValueError as e:
            raise ShapeError(f"cannot broadcast {self.data.shape} to {shape}") from e

        def backward(g, a=self, shape=shape):
            extra = len(shape) - a.data.ndim
            g = g.sum(axis=tuple(range(extra)))
            keep = tuple(i for i, n in enumerate(a.data.shape) if n == 1 and g.shape[i] != 1)
            if keep:
                g = g.sum(axis=keep, keepdims=True)
            a._accumulate(g)

        return Tensor._make(val.copy(), (self,), "broadcast_to", backward)

    def __getitem__(self, idx):
        val = self.data[idx]

        def backward(g, a=self, idx=idx):
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)

        return Tensor._make(np.array(val), (self,), "getitem", backward)

    def subsample2(self):
        """Keep every second row and column (stride-2 decimation)."""
        return self[..., ::2, ::2]

    def upsample2(self):
        """Nearest-neighbour 2x upsampling of the two trailing axes."""
        val = np.repeat(np.repeat(self.data, 2, axis=-2), 2, axis=-1)

        def backward(g, a=self):
            s = a.data.shape
            gg = g.reshape(s[:-2] + (s[-2], 2, s[-1], 2))
            a._accumulate(gg.sum(axis=(-3, -1)))

        return Tensor._make(val, (self,), "upsample2", backward)

    def bias_add(self, bias):
        """Add a rank-1 bias along the channel axis of a feature map.

        Accepts [batch, C] rows, [C, H, W] maps, or [N, C, H, W] batches.
        """
        b = Tensor._coerce(bias)
        if b.data.ndim != 1:
            raise ShapeError("bias must be rank 1")
        if self.data.ndim == 2:
            if self.data.shape[1] != b.data.shape[0]:
                raise ShapeError("bias length mismatch")
            val = self.data + b.data
            axes = (0,)
        elif self.data.ndim == 3:
            if self.data.shape[0] != b.data.shape[0]:
                raise ShapeError("bias length mismatch")
            val = self.data + b.data[:, None, None]
            axes = (1, 2)
        elif self.data.ndim == 4:
            if self.data.shape[1] != b.data.shape[0]:
                raise ShapeError("bias length mismatch")
            val = self.data + b.data[None, :, None, None]
            axes = (0, 2, 3)
        else:
            raise ShapeError("bias_add expects a rank-2, -3, or -4 input")

        def backward(g, a=self, bb=b, axes=axes):
            a._accumulate(g)
            bb._accumulate(g.sum(axis=axes))

        return Tensor._make(val, (self, b), "bias_add", backward)

    # -- linear algebra --------------------------------------------------------

    def matmul(self, other):
        b = Tensor._coerce(other)
        if self.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError("matmul expects two rank-2 tensors")
        if self.data.shape[1] != b.data.shape[0]:
            raise ShapeError(
                f"matmul inner dimensions disagree: {self.data.shape} vs {b.data.shape}"
            )

        def backward(g, a=self, bb=b):
            a._accumulate(g @ bb.data.T)
            bb._accumulate(a.data.T @ g)

        return Tensor._make(self.data @ b.data, (self, b), "matmul", backward)

    # -- spatial kernels ---------------------------------------------------------

    def conv2d(self, kernels):
        """Same-size 2-D convolution, stride 1, zero padding (k-1)/2.

        Accepts a [C,H,W] map or an [N,C,H,W] batch; kernels are
        [C_out,C_in,k,k] with odd k.
        """
        w = Tensor._coerce(kernels)
        if w.data.ndim != 4:
            raise ShapeError("conv2d kernels must be rank 4 [C_out,C_in,k,k]")
        k = w.data.shape[2]
        if w.data.shape[3] != k:
            raise ShapeError("conv2d kernels must be square")
        if k % 2 == 0:
            raise ConfigError(f"conv2d kernel size must be odd, got {k}")
        squeeze = self.data.ndim == 3
        x = self.data[None] if squeeze else self.data
        if x.ndim != 4:
            raise ShapeError("conv2d input must be rank 3 or 4")
        if x.shape[1] != w.data.shape[1]:
            raise ShapeError(
                f"conv2d channel mismatch: input {x.shape[1]}, kernels {w.data.shape[1]}"
            )
        val = _kernels.conv2d_forward(np.ascontiguousarray(x),
                                      np.ascontiguousarray(w.data))

        def backward(g, a=self, ww=w, k=k, squeeze=squeeze):
            g4 = g[None] if squeeze else g
            g4 = np.ascontiguousarray(g4)
            x4 = np.ascontiguousarray(a.data[None] if squeeze else a.data)
            if a.requires_grad:
                gx = _kernels.conv2d_grad_input(g4, np.ascontiguousarray(ww.data))
                a._accumulate(gx[0] if squeeze else gx)
            if ww.requires_grad:
                ww._accumulate(_kernels.conv2d_grad_weight(x4, g4, k))

        return Tensor._make(val[0] if squeeze else val, (self, w), "conv2d", backward)

    def bilinear_sample(self, grid):
        """Sample this map at normalized grid coordinates.

        Grid values live in [-1, 1] with corners mapped to pixel centers:
        pixel_x = (x + 1) / 2 * (W - 1), likewise for y. Out-of-range
        locations read zero. The grid may be shared across channels
        ([H,W,2]) or per channel ([G,H,W,2] with G == C); batched inputs
        take batched grids ([N,G,H,W,2]).
        """
        g = Tensor._coerce(grid)
        squeeze = self.data.ndim == 3
        x = self.data[None] if squeeze else self.data
        if x.ndim != 4:
            raise ShapeError("bilinear_sample input must be rank 3 or 4")
        gd = g.data
        if gd.ndim == 3:
            gd5 = gd[None, None]
        elif gd.ndim == 4:
            gd5 = gd[None]
        elif gd.ndim == 5:
            gd5 = gd
        else:
            raise ShapeError("grid must be rank 3, 4, or 5 with trailing axis 2")
        if gd5.shape[-1] != 2:
            raise ShapeError("grid trailing axis must have size 2")
        if gd5.shape[0] != x.shape[0]:
            raise ShapeError("grid batch size must match input batch size")
        if gd5.shape[1] not in (1, x.shape[1]):
            raise ShapeError(
                f"grid channel count must be 1 or {x.shape[1]}, got {gd5.shape[1]}"
            )
        val = _kernels.bilinear_forward(np.ascontiguousarray(x),
                                        np.ascontiguousarray(gd5))

        def backward(gout, a=self, gg=g, squeeze=squeeze):
            g4 = gout[None] if squeeze else gout
            x4 = np.ascontiguousarray(a.data[None] if squeeze else a.data)
            gd = gg.data
            gd5 = gd[None, None] if gd.ndim == 3 else (gd[None] if gd.ndim == 4 else gd)
            gx, ggrid = _kernels.bilinear_backward(
                x4, np.ascontiguousarray(gd5), np.ascontiguousarray(g4))
            if a.requires_grad:
                a._accumulate(gx[0] if squeeze else gx)
            if gg.requires_grad:
                gg._accumulate(ggrid.reshape(gd.shape))

        return Tensor._make(val[0] if squeeze else val, (self, g), "bilinear_sample",
                            backward)

    # -- backward pass -------------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every ancestor's .grad."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar root, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise JulkitError("backward on a tensor that does not require grad")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            if node._backward is not None and node._consumed:
                raise JulkitError(
                    "backward was already run through this graph; rebuild the "
                    "expression before differentiating again"
                )
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
                node._consumed = True


def concat(tensors, axis=0):
    """Concatenate tensors of equal rank along one axis."""
    ts = [Tensor._coerce(t) for t in tensors]
    if not ts:
        raise ShapeError("concat requires at least one tensor")
    try:
        val = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat shapes incompatible: {e}") from e
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g, ts=ts, axis=axis, offsets=offsets):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return Tensor._make(val, tuple(ts), "concat", backward)


def elementwise(kind, a, b=None):
    """Apply one of the registered pointwise operations by name."""
    if kind not in ELEMENTWISE_KINDS:
        raise ConfigError(f"unknown elementwise kind {kind!r}")
    a = Tensor._coerce(a)
    if kind in ("add", "sub", "mul", "div"):
        if b is None:
            raise ConfigError(f"elementwise {kind!r} needs two operands")
        return getattr(a, kind)(b)
    if b is not None:
        raise ConfigError(f"elementwise {kind!r} is unary")
    return getattr(a, kind)()


def reduce(kind, a, axis=None):
    """Apply a registered reduction (sum or mean) by name."""
    if kind not in REDUCE_KINDS:
        raise ConfigError(f"unknown reduce kind {kind!r}")
    a = Tensor._coerce(a)
    return getattr(a, kind)(axis=axis)


def gradcheck(fn, inputs, step=1e-5, max_coords=None, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps the given tensors to a scalar Tensor. Every input with
    ``requires_grad`` set is perturbed coordinate by coordinate with
    (f(x+h) - f(x-h)) / 2h and compared against the gradient produced by
    one backward pass; the return value is the worst
    |analytic - numeric| / max(1e-8, |numeric|) over all coordinates.

    ``max_coords`` caps the total number of perturbed coordinates; when
    the inputs hold more, a deterministic sample is drawn (spread across
    inputs in proportion to their size) using ``rng`` or a fixed seed.
    """
    inputs = list(inputs)
    checked = [t for t in inputs if t.requires_grad]
    if not checked:
        raise ConfigError("gradcheck needs at least one input with requires_grad")
    for t in checked:
        t.grad = None
    out = fn(*inputs)
    if out.data.size != 1:
        raise ShapeError("gradcheck requires a scalar-valued function")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in checked]

    total = sum(t.data.size for t in checked)
    coords = []
    if max_coords is None or total <= max_coords:
        for k, t in enumerate(checked):
            coords.extend((k, i) for i in range(t.data.size))
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        pool = np.concatenate([np.full(t.data.size, k, dtype=np.int64)
                               for k, t in enumerate(checked)])
        offsets = np.concatenate([np.arange(t.data.size, dtype=np.int64)
                                  for t in checked])
        picks = rng.choice(total, size=max_coords, replace=False)
        coords = [(int(pool[p]), int(offsets[p])) for p in picks]

    worst = 0.0
    for k, i in coords:
        t = checked[k]
        flat = t.data.reshape(-1)
        orig = flat[i]
        flat[i] = orig + step
        hi = float(fn(*inputs).data)
        flat[i] = orig - step
        lo = float(fn(*inputs).data)
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * step)
        err = abs(analytic[k].reshape(-1)[i] - numeric) / max(1e-8, abs(numeric))
        if err > worst:
            worst = err
    return worst
