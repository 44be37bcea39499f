"""Reverse-mode differentiable arrays on top of numpy.

Every operation used by the feedback pipeline carries a closed-form
vector-Jacobian product, so gradients of any composition are exact
chain-rule derivatives.  Gradients accumulate (+=) into ``.grad``
buffers and are cleared only by an explicit ``zero_grad`` call, which
lets several losses contribute to one optimizer step.

The module is intentionally small: no GPU, no graph capture, no
higher-order derivatives.  Training runs in float32 by default;
verification suites build float64 stores so finite-difference checks
are meaningful.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "NonFiniteError",
    "concat",
    "conv2d",
    "cumsum",
    "take",
    "softplus",
    "softplus_inv",
    "no_grad",
    "set_finite_checks",
    "forward_backward",
    "finite_diff_grad",
]

_GRAD_ENABLED = True
_CHECK_FINITE = False


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a computation node."""


def set_finite_checks(enabled):
    """Toggle per-op NaN/Inf detection (debug aid, off by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class no_grad:
    """Context manager that builds constant tensors (no graph)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A dense real array plus an optional gradient buffer.

    ``data`` is always a numpy array; dtype is whatever the caller
    supplies (parameters fix it via :class:`ParamStore`).  Intermediate
    tensors are created by the ops below, which attach the backward
    closures.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", parents=()):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.op = op
        self._parents = parents if self.requires_grad else ()
        self._backward = None
        if _CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite value produced by op '{op}'")

    # -- basic introspection -------------------------------------------------

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
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, grad={self.requires_grad})"

    # -- autograd core -------------------------------------------------------

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(np.broadcast_to(grad, self.data.shape),
                                 dtype=self.data.dtype)
        else:
            self.grad += grad

    def backward(self, grad=None):
        """Reverse-accumulate gradients from this tensor to its leaves.

        `grad` defaults to ones (the usual seed for a scalar loss).
        Repeated calls keep adding into ``.grad``; zeroing is the
        caller's job.
        """
        if not self.requires_grad:
            return
        if grad is None:
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self):
        """Constant view of this tensor (blocks gradient flow)."""
        return Tensor(self.data, op="detach")

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data + other.data,
                         requires_grad=self.requires_grad or other.requires_grad,
                         op="add", parents=(self, other))
            if out.requires_grad:
                def _bw(g):
                    if self.requires_grad:
                        self._accumulate(_unbroadcast(g, self.data.shape))
                    if other.requires_grad:
                        other._accumulate(_unbroadcast(g, other.data.shape))
                out._backward = _bw
            return out
        out = Tensor(self.data + other, requires_grad=self.requires_grad,
                     op="add", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(_unbroadcast(g, self.data.shape))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, requires_grad=self.requires_grad, op="neg", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(-g)
        return out

    def __sub__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data - other.data,
                         requires_grad=self.requires_grad or other.requires_grad,
                         op="sub", parents=(self, other))
            if out.requires_grad:
                def _bw(g):
                    if self.requires_grad:
                        self._accumulate(_unbroadcast(g, self.data.shape))
                    if other.requires_grad:
                        other._accumulate(_unbroadcast(-g, other.data.shape))
                out._backward = _bw
            return out
        out = Tensor(self.data - other, requires_grad=self.requires_grad,
                     op="sub", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(_unbroadcast(g, self.data.shape))
        return out

    def __rsub__(self, other):
        out = Tensor(other - self.data, requires_grad=self.requires_grad,
                     op="rsub", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(_unbroadcast(-g, self.data.shape))
        return out

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data * other.data,
                         requires_grad=self.requires_grad or other.requires_grad,
                         op="mul", parents=(self, other))
            if out.requires_grad:
                def _bw(g):
                    if self.requires_grad:
                        self._accumulate(_unbroadcast(g * other.data, self.data.shape))
                    if other.requires_grad:
                        other._accumulate(_unbroadcast(g * self.data, other.data.shape))
                out._backward = _bw
            return out
        out = Tensor(self.data * other, requires_grad=self.requires_grad,
                     op="mul", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(_unbroadcast(g * other, self.data.shape))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            out = Tensor(self.data / other.data,
                         requires_grad=self.requires_grad or other.requires_grad,
                         op="div", parents=(self, other))
            if out.requires_grad:
                def _bw(g):
                    if self.requires_grad:
                        self._accumulate(_unbroadcast(g / other.data, self.data.shape))
                    if other.requires_grad:
                        other._accumulate(_unbroadcast(-g * self.data / (other.data * other.data),
                                                       other.data.shape))
                out._backward = _bw
            return out
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        out = Tensor(other / self.data, requires_grad=self.requires_grad,
                     op="rdiv", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(
                _unbroadcast(-g * other / (self.data * self.data), self.data.shape))
        return out

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        out = Tensor(self.data ** exponent, requires_grad=self.requires_grad,
                     op="pow", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(
                g * exponent * self.data ** (exponent - 1))
        return out

    def __matmul__(self, other):
        a, b = self.data, other.data
        out = Tensor(np.matmul(a, b),
                     requires_grad=self.requires_grad or other.requires_grad,
                     op="matmul", parents=(self, other))
        if out.requires_grad:
            def _bw(g):
                if self.requires_grad:
                    ga = np.matmul(g, np.swapaxes(b, -1, -2))
                    self._accumulate(_unbroadcast(ga, a.shape))
                if other.requires_grad:
                    gb = np.matmul(np.swapaxes(a, -1, -2), g)
                    other._accumulate(_unbroadcast(gb, b.shape))
            out._backward = _bw
        return out

    # -- elementwise functions -------------------------------------------------

    def exp(self):
        y = np.exp(self.data)
        out = Tensor(y, requires_grad=self.requires_grad, op="exp", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * y)
        return out

    def log(self):
        out = Tensor(np.log(self.data), requires_grad=self.requires_grad,
                     op="log", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g / self.data)
        return out

    def abs(self):
        out = Tensor(np.abs(self.data), requires_grad=self.requires_grad,
                     op="abs", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * np.sign(self.data))
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0), requires_grad=self.requires_grad,
                     op="relu", parents=(self,))
        if out.requires_grad:
            mask = self.data > 0
            out._backward = lambda g: self._accumulate(g * mask)
        return out

    def tanh(self):
        y = np.tanh(self.data)
        out = Tensor(y, requires_grad=self.requires_grad, op="tanh", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * (1.0 - y * y))
        return out

    def sqrt(self):
        y = np.sqrt(self.data)
        out = Tensor(y, requires_grad=self.requires_grad, op="sqrt", parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: self._accumulate(g * 0.5 / y)
        return out

    # -- reductions / shape ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     requires_grad=self.requires_grad, op="sum", parents=(self,))
        if out.requires_grad:
            shape = self.data.shape

            def _bw(g):
                if axis is None:
                    self._accumulate(np.broadcast_to(g, shape).astype(self.data.dtype, copy=False))
                    return
                if not keepdims:
                    ax = axis if isinstance(axis, tuple) else (axis,)
                    g = np.expand_dims(g, ax)
                self._accumulate(np.broadcast_to(g, shape))
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), requires_grad=self.requires_grad,
                     op="reshape", parents=(self,))
        if out.requires_grad:
            orig = self.data.shape
            out._backward = lambda g: self._accumulate(g.reshape(orig))
        return out

    def transpose(self, axes):
        out = Tensor(self.data.transpose(axes), requires_grad=self.requires_grad,
                     op="transpose", parents=(self,))
        if out.requires_grad:
            inv = np.argsort(axes)
            out._backward = lambda g: self._accumulate(g.transpose(inv))
        return out

    def __getitem__(self, key):
        # Basic (slice/int) indexing only; fancy indexing goes through take().
        out = Tensor(self.data[key], requires_grad=self.requires_grad,
                     op="slice", parents=(self,))
        if out.requires_grad:
            def _bw(g):
                full = np.zeros_like(self.data)
                full[key] += g
                self._accumulate(full)
            out._backward = _bw
        return out


# -- free functions -------------------------------------------------------------


def concat(tensors, axis):
    """Concatenate tensors along `axis`."""
    datas = [t.data for t in tensors]
    req = any(t.requires_grad for t in tensors)
    out = Tensor(np.concatenate(datas, axis=axis), requires_grad=req,
                 op="concat", parents=tuple(tensors))
    if out.requires_grad:
        sizes = [d.shape[axis] for d in datas]
        splits = np.cumsum(sizes)[:-1]

        def _bw(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accumulate(piece)
        out._backward = _bw
    return out


def take(t, indices, axis):
    """Select `indices` along `axis` (used for channel permutations)."""
    indices = np.asarray(indices)
    out = Tensor(np.take(t.data, indices, axis=axis), requires_grad=t.requires_grad,
                 op="take", parents=(t,))
    if out.requires_grad:
        def _bw(g):
            full = np.zeros_like(t.data)
            key = (slice(None),) * axis + (indices,)
            np.add.at(full, key, g)
            t._accumulate(full)
        out._backward = _bw
    return out


def cumsum(t, axis):
    out = Tensor(np.cumsum(t.data, axis=axis), requires_grad=t.requires_grad,
                 op="cumsum", parents=(t,))
    if out.requires_grad:
        out._backward = lambda g: t._accumulate(
            np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis))
    return out


def _sigmoid(x):
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    z[~pos] = ex / (1.0 + ex)
    return z


def softplus_array(x):
    """log(1 + exp(x)) with an overflow-safe branch for large x."""
    x = np.asarray(x)
    out = np.empty_like(x)
    hi = x > 20.0
    lo = ~hi
    out[lo] = np.log1p(np.exp(x[lo]))
    out[hi] = x[hi] + np.log1p(np.exp(-x[hi]))
    return out


def softplus(t):
    """Elementwise softplus; derivative is the logistic function."""
    out = Tensor(softplus_array(t.data), requires_grad=t.requires_grad,
                 op="softplus", parents=(t,))
    if out.requires_grad:
        out._backward = lambda g: t._accumulate(g * _sigmoid(t.data))
    return out


def softplus_inv(y):
    """Scalar inverse of softplus, computed in float64."""
    import math
    return math.log(math.expm1(y))


def softplus_inv_exact(target, dtype):
    """Raw value whose softplus reproduces `target` exactly in `dtype` if possible.

    Starts from the analytic inverse and nudges by ulps; quantizer
    initialization relies on the derived uniform levels being exact.
    """
    dtype = np.dtype(dtype)
    t = dtype.type(target)
    raw = dtype.type(softplus_inv(target))
    for _ in range(8):
        cur = softplus_array(np.array(raw, dtype=dtype))[()]
        if cur == t:
            break
        direction = dtype.type(np.inf) if cur < t else dtype.type(-np.inf)
        raw = np.nextafter(raw, direction)
    return raw


def conv2d(x, w, b, padding=1):
    """2-D convolution, stride 1, symmetric zero padding.

    x: (B, C, H, W); w: (O, C, kh, kw); b: (O,).  Runs as an im2col
    matmul with a col2im backward.  Height-1 inputs (the patched CSI
    layout) take a specialized path: the padded rows above and below
    are all zero, so only the middle kernel row contributes and the
    whole op collapses to a width-wise 1-D convolution.
    """
    if x.data.shape[2] == 1 and w.data.shape[2] == 3 and padding == 1:
        return _conv2d_row(x, w, b)
    B, C, H, W = x.data.shape
    O, _, kh, kw = w.data.shape
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    Hp, Wp = xp.shape[2], xp.shape[3]
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    s = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, (B, C, kh, kw, Ho, Wo), (s[0], s[1], s[2], s[3], s[2], s[3]))
    cols2 = np.ascontiguousarray(cols.transpose(0, 4, 5, 1, 2, 3)).reshape(B * Ho * Wo, C * kh * kw)
    w2 = w.data.reshape(O, -1)
    y = cols2 @ w2.T
    y = y.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2) + b.data.reshape(1, O, 1, 1)

    req = x.requires_grad or w.requires_grad or b.requires_grad
    out = Tensor(y, requires_grad=req, op="conv2d", parents=(x, w, b))
    if out.requires_grad:
        def _bw(g):
            g2 = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
            if b.requires_grad:
                b._accumulate(g2.sum(axis=0))
            if w.requires_grad:
                w._accumulate((g2.T @ cols2).reshape(O, C, kh, kw))
            if x.requires_grad:
                dcols = (g2 @ w2).reshape(B, Ho, Wo, C, kh, kw)
                dxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + Ho, j:j + Wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                x._accumulate(dxp[:, :, p:p + H, p:p + W])
        out._backward = _bw
    return out


def _conv2d_row(x, w, b):
    """conv2d for height-1 inputs with 3x3 kernels and padding 1."""
    B, C, _, W = x.data.shape
    O, _, _, kw = w.data.shape
    dt = x.data.dtype
    xt = np.empty((B, W + 2, C), dtype=dt)
    xt[:, 0, :] = 0
    xt[:, -1, :] = 0
    np.copyto(xt[:, 1:-1, :], x.data[:, :, 0, :].transpose(0, 2, 1))
    s = xt.strides
    cols = np.lib.stride_tricks.as_strided(xt, (B, W, kw, C), (s[0], s[1], s[1], s[2]))
    cols2 = np.ascontiguousarray(cols).reshape(B * W, kw * C)
    wmat = np.ascontiguousarray(w.data[:, :, 1, :].transpose(2, 1, 0)).reshape(kw * C, O)
    y2 = cols2 @ wmat
    y = (y2.reshape(B, W, O).transpose(0, 2, 1) + b.data.reshape(1, O, 1))[:, :, None, :]

    req = x.requires_grad or w.requires_grad or b.requires_grad
    out = Tensor(np.ascontiguousarray(y), requires_grad=req, op="conv2d", parents=(x, w, b))
    if out.requires_grad:
        def _bw(g):
            g2 = np.ascontiguousarray(g[:, :, 0, :].transpose(0, 2, 1)).reshape(B * W, O)
            if b.requires_grad:
                b._accumulate(g2.sum(axis=0))
            if w.requires_grad:
                dw = np.zeros_like(w.data)
                dw[:, :, 1, :] = (cols2.T @ g2).reshape(kw, C, O).transpose(2, 1, 0)
                w._accumulate(dw)
            if x.requires_grad:
                dcols = (g2 @ wmat.T).reshape(B, W, kw, C)
                dxt = np.zeros((B, W + 2, C), dtype=dt)
                for k in range(kw):
                    dxt[:, k:k + W, :] += dcols[:, :, k, :]
                x._accumulate(dxt[:, 1:-1, :].transpose(0, 2, 1)[:, :, None, :])
        out._backward = _bw
    return out


def straight_through(soft, hard_data):
    """Forward emits `hard_data` exactly; gradient passes to `soft` unchanged."""
    out = Tensor(np.asarray(hard_data, dtype=soft.data.dtype),
                 requires_grad=soft.requires_grad, op="straight_through", parents=(soft,))
    if out.requires_grad:
        out._backward = lambda g: soft._accumulate(g)
    return out


# -- parameters and optimizer ------------------------------------------------------


class ParamStore:
    """Named parameter tensors with matching gradient buffers.

    Insertion order is preserved, so update order (and therefore the
    whole training trajectory) is deterministic.  ``trainable=False``
    registers a tensor that serializes with the model but is skipped by
    the optimizer (frozen ablation variants).
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params = {}
        self._trainable = {}
        self._m = {}
        self._v = {}
        self.step_count = 0

    def add(self, name, value, trainable=True):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=trainable)
        t.grad = np.zeros_like(t.data)
        t.op = f"param:{name}"
        self._params[name] = t
        self._trainable[name] = bool(trainable)
        if trainable:
            self._m[name] = np.zeros_like(t.data)
            self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def is_trainable(self, name):
        return self._trainable[name]

    def num_trainable(self):
        return sum(t.data.size for n, t in self._params.items() if self._trainable[n])

    def zero_grad(self):
        for t in self._params.values():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad[...] = 0

    def adam_step(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        """One Adam update with bias correction; gradients are left as-is."""
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for name, p in self._params.items():
            if not self._trainable[name]:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + eps)

    def check_finite(self):
        for name, p in self._params.items():
            if not np.all(np.isfinite(p.data)):
                raise NonFiniteError(f"parameter {name!r} contains non-finite values")

    # -- checkpoint support --

    def export_arrays(self):
        out = {}
        for name, p in self._params.items():
            out[name] = p.data.copy()
            if self._trainable[name]:
                out["opt.m:" + name] = self._m[name].copy()
                out["opt.v:" + name] = self._v[name].copy()
        return out

    def load_arrays(self, arrays):
        for name, p in self._params.items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing tensor {name!r}")
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(
                    f"tensor {name!r} has shape {src.shape}, expected {p.data.shape}")
            p.data[...] = src.astype(self.dtype)
            if self._trainable[name]:
                self._m[name][...] = arrays["opt.m:" + name].astype(self.dtype)
                self._v[name][...] = arrays["opt.v:" + name].astype(self.dtype)


# -- verification helpers ------------------------------------------------------------


def forward_backward(fn, *inputs):
    """Evaluate `fn(*inputs)` and reverse-accumulate every output.

    Each output is seeded with an all-ones upstream gradient; parameter
    and input gradients therefore hold exact chain-rule derivatives of
    the (summed) outputs.  Raises :class:`NonFiniteError` if any output
    is non-finite.
    """
    outputs = fn(*inputs)
    single = isinstance(outputs, Tensor)
    outs = (outputs,) if single else tuple(outputs)
    for o in outs:
        if not np.all(np.isfinite(o.data)):
            raise NonFiniteError(f"non-finite output from op '{o.op}'")
        o.backward()
    return outputs


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of a scalar function at `x`.

    `f` maps a numpy array to a float.  This is the independent oracle
    used by the gradient verification suites; keep it dumb.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = float(f(x))
        flat[k] = orig - eps
        fm = float(f(x))
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError("non-finite value while probing finite differences")
        gf[k] = (fp - fm) / (2.0 * eps)
    return g
