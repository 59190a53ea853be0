"""Dense float64 tensors with reverse-mode automatic differentiation.

Every numeric value in the network flows through this module. A Tensor wraps
one contiguous float64 numpy array plus an optional gradient buffer; forward
ops record parent links and a backward closure, and ``backward()`` replays the
recorded graph in exact reverse topological order, accumulating gradients
additively into every reachable tensor with ``requires_grad``.

Engine-wide conventions:
  * float64 everywhere; convolution is cross-correlation (no kernel flip)
  * gradients accumulate additively; callers zero them between steps
  * tensors are treated as immutable once they enter a graph
  * with debug checks enabled, any op producing NaN/Inf aborts immediately,
    naming the op that produced it
"""

from __future__ import annotations

import numpy as np


class EngineError(Exception):
    """Base class for engine failures."""


class DimensionError(EngineError):
    """Operand shapes are incompatible with the requested op."""


class ContractError(EngineError):
    """An op precondition was violated."""


class GraphStateError(EngineError):
    """Backward was invoked on a graph that has already been consumed."""


class NonFiniteError(EngineError):
    """An op produced NaN or Inf while debug checks were active."""


_debug_checks = False
_grad_enabled = True
_flop_counter: "FlopCounter | None" = None


def set_debug_checks(enabled: bool) -> None:
    """Toggle post-op NaN/Inf detection (off by default; training turns it on)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def debug_checks_enabled() -> bool:
    return _debug_checks


class no_grad:
    """Context manager that skips graph construction inside its body."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class FlopCounter:
    """Counts scalar multiply-add work of forward ops while installed.

    Counts are deterministic functions of op shapes, which makes them a clean
    signal for the linear-complexity measurements: installing a counter and
    running an op twice yields identical totals.
    """

    def __init__(self):
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)

    def __enter__(self):
        global _flop_counter
        self._prev = _flop_counter
        _flop_counter = self
        return self

    def __exit__(self, *exc):
        global _flop_counter
        _flop_counter = self._prev
        return False


def _count(n: int) -> None:
    if _flop_counter is not None:
        _flop_counter.add(n)


class Tensor:
    """N-D float64 array with an optional gradient slot.

    ``grad`` is lazily allocated by backward passes and always matches
    ``data``'s shape. Interior graph nodes carry a backward closure; leaves
    (inputs, parameters) do not.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_op", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward_fn = None
        self._op = "leaf"
        self._spent = False

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() needs a single-element tensor, got shape %r"
                                % (self.shape,))
        return float(self.data.reshape(()))

    def __repr__(self):
        return "Tensor(op=%s, shape=%r, requires_grad=%s)" % (
            self._op, self.shape, self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad tensor.

        The loss must be scalar; running backward twice over the same graph
        raises GraphStateError.
        """
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss, got shape %r"
                                % (self.shape,))
        if not self.requires_grad:
            raise ContractError("loss does not require grad; nothing to differentiate")
        order = toposort(self)
        for node in order:
            if node._spent:
                raise GraphStateError(
                    "graph already consumed by a previous backward(); "
                    "rebuild the forward pass before differentiating again")
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)
                node._spent = True

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return take(self, idx)

    # -- method sugar ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def toposort(root: Tensor) -> list:
    """Topological order of the graph below ``root`` (parents before children)."""
    order: list = []
    seen: set = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(out_data: np.ndarray, parents: tuple, op: str, backward_fn) -> Tensor:
    """Wrap an op result; record the graph edge unless grads are disabled."""
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise NonFiniteError("op '%s' produced a non-finite value" % op)
    out = Tensor(out_data)
    out._op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(out, (a, b), "add", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), "sub", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), "mul", backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data),
                                       b.data.shape))

    return _make(out, (a, b), "div", backward)


def neg(a: Tensor) -> Tensor:
    out = -a.data
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _make(out, (a,), "neg", backward)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data ** exponent
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * exponent * a.data ** (exponent - 1.0))

    return _make(out, (a,), "pow", backward)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; at ties the gradient routes to the first operand."""
    out = np.maximum(a.data, b.data)
    _count(out.size)
    mask = (a.data >= b.data).astype(np.float64)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * mask, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * (1.0 - mask), b.data.shape))

    return _make(out, (a, b), "maximum", backward)


def absolute(a: Tensor) -> Tensor:
    out = np.abs(a.data)
    _count(out.size)
    sign = np.sign(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * sign)

    return _make(out, (a,), "abs", backward)


# ---------------------------------------------------------------------------
# activations and pointwise transcendentals
# ---------------------------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out)

    return _make(out, (a,), "exp", backward)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), "sigmoid", backward)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # piecewise form avoids overflow in exp for large |x|
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_np(a.data)
    out = a.data * s
    _count(2 * out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (s + a.data * s * (1.0 - s)))

    return _make(out, (a,), "silu", backward)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU (engine-wide choice, exact erf not needed)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)
    _count(4 * out.size)

    def backward(g):
        if a.requires_grad:
            d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
            grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            a._accumulate(g * grad)

    return _make(out, (a,), "gelu", backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    _count(out.size)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out * out))

    return _make(out, (a,), "tanh", backward)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))
    _count(2 * out.size)
    s = _sigmoid_np(x)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(out, (a,), "softplus", backward)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Probability simplex along ``axis``, computed with max-subtraction."""
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError("softmax axis %d invalid for shape %r" % (axis, a.shape))
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    _count(4 * out.size)

    def backward(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=axis, keepdims=True)
            a._accumulate(out * (g - dot))

    return _make(out, (a,), "softmax", backward)


def layer_norm(a: Tensor, axis: int, eps: float = 1e-6) -> Tensor:
    """Zero-mean unit-variance normalization along ``axis`` (no affine)."""
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError("layer_norm axis %d invalid for shape %r" % (axis, a.shape))
    n = a.data.shape[axis]
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv
    _count(5 * out.size)

    def backward(g):
        if a.requires_grad:
            gy_sum = g.sum(axis=axis, keepdims=True)
            gy_dot = (g * out).sum(axis=axis, keepdims=True)
            a._accumulate(inv / n * (n * g - gy_sum - out * gy_dot))

    return _make(out, (a,), "layer_norm", backward)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(out, (a,), "reshape", backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError("transpose axes %r invalid for ndim %d" % (axes, a.ndim))
    # contiguous output keeps downstream kernels on one deterministic path
    out = np.ascontiguousarray(a.data.transpose(axes))
    inverse = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inverse))

    return _make(out, (a,), "transpose", backward)


def flip(a: Tensor, axis: int) -> Tensor:
    out = np.flip(a.data, axis=axis).copy()

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.flip(g, axis=axis))

    return _make(out, (a,), "flip", backward)


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(out, tuple(tensors), "concat", backward)


def take(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    if np.isscalar(out) or out.ndim == 0:
        out = np.asarray(out)

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

    return _make(out, (a,), "slice", backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)
    _count(a.size)

    def backward(g):
        if a.requires_grad:
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                for ax in sorted(axis):
                    gg = np.expand_dims(gg, ax)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _make(out, (a,), "sum", backward)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, a.ndim)
    count = a.size if axis is None else int(np.prod([a.data.shape[ax] for ax in axis]))
    out = a.data.mean(axis=axis, keepdims=keepdims)
    out = np.asarray(out)
    _count(a.size)

    def backward(g):
        if a.requires_grad:
            gg = np.asarray(g) / count
            if axis is not None and not keepdims:
                for ax in sorted(axis):
                    gg = np.expand_dims(gg, ax)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return _make(out, (a,), "mean", backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul needs 2-D operands, got %r and %r"
                             % (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dims disagree: %r vs %r"
                             % (a.shape, b.shape))
    out = a.data @ b.data
    _count(2 * a.shape[0] * a.shape[1] * b.shape[1])

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(out, (a, b), "matmul", backward)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int | None = None) -> Tensor:
    """Cross-correlation of a C_in cube with a C_out x C_in x k x k kernel.

    ``pad=None`` selects zero padding that preserves spatial dims at stride 1.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError("conv2d expects x[C,H,W], w[Co,Ci,k,k]; got %r, %r"
                             % (x.shape, w.shape))
    c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if kh != kw:
        raise DimensionError("conv2d kernels must be square, got %r" % (w.shape,))
    if c_in != c_in_w:
        raise DimensionError("conv2d channel mismatch: input %d vs kernel %d"
                             % (c_in, c_in_w))
    k = kh
    if pad is None:
        pad = (k - 1) // 2
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (wd + 2 * pad - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError("conv2d output would be empty for input %r kernel %d"
                             % (x.shape, k))

    if k == 1 and stride == 1 and pad == 0:
        out = (w.data.reshape(c_out, c_in) @ x.data.reshape(c_in, h * wd))
        out = out.reshape(c_out, h, wd)
        _count(2 * c_out * c_in * h * wd)

        def backward_1x1(g):
            gm = g.reshape(c_out, h * wd)
            if w.requires_grad:
                w._accumulate((gm @ x.data.reshape(c_in, h * wd).T)
                              .reshape(w.data.shape))
            if x.requires_grad:
                x._accumulate((w.data.reshape(c_out, c_in).T @ gm)
                              .reshape(x.data.shape))

        return _make(out, (x, w), "conv2d", backward_1x1)

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]          # (Ci, Ho, Wo, k, k)
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * k * k, h_out * w_out)
    cols = np.ascontiguousarray(cols)
    out = (w.data.reshape(c_out, c_in * k * k) @ cols).reshape(c_out, h_out, w_out)
    _count(2 * c_out * c_in * k * k * h_out * w_out)

    def backward(g):
        gm = g.reshape(c_out, h_out * w_out)
        if w.requires_grad:
            w._accumulate((gm @ cols.T).reshape(w.data.shape))
        if x.requires_grad:
            gcols = (w.data.reshape(c_out, c_in * k * k).T @ gm)
            gcols = gcols.reshape(c_in, k, k, h_out, w_out)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + stride * h_out:stride,
                        j:j + stride * w_out:stride] += gcols[:, i, j]
            if pad:
                gxp = gxp[:, pad:-pad, pad:-pad]
            x._accumulate(gxp)

    return _make(out, (x, w), "conv2d", backward)


def depthwise_conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Per-channel k x k cross-correlation with same zero padding, stride 1."""
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError("depthwise_conv2d expects x[C,H,W], w[C,k,k]; got %r, %r"
                             % (x.shape, w.shape))
    c, h, wd = x.shape
    cw, kh, kw = w.shape
    if kh != kw:
        raise DimensionError("depthwise kernels must be square, got %r" % (w.shape,))
    if c != cw:
        raise DimensionError("depthwise channel mismatch: input %d vs kernel %d"
                             % (c, cw))
    k = kh
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    out = np.einsum("chwij,cij->chw", windows, w.data)
    _count(2 * c * h * wd * k * k)

    def backward(g):
        if w.requires_grad:
            w._accumulate(np.einsum("chwij,chw->cij", windows, g))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + h, j:j + wd] += g * w.data[:, i, j][:, None, None]
            if pad:
                gxp = gxp[:, pad:-pad, pad:-pad]
            x._accumulate(gxp)

    return _make(out, (x, w), "depthwise_conv2d", backward)


def dilated_conv2d(x: Tensor, w: Tensor, dilation: int) -> Tensor:
    """Dilated 3x3 cross-correlation with same zero padding, stride 1."""
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError("dilated_conv2d expects x[C,H,W], w[Co,Ci,k,k]")
    c_in, h, wd = x.shape
    c_out, c_in_w, k, k2 = w.shape
    if k != k2:
        raise DimensionError("dilated kernels must be square, got %r" % (w.shape,))
    if c_in != c_in_w:
        raise DimensionError("dilated_conv2d channel mismatch: %d vs %d"
                             % (c_in, c_in_w))
    pad = dilation * (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    # gather the k*k dilated taps as shifted views
    taps = np.empty((c_in, k, k, h, wd))
    for i in range(k):
        for j in range(k):
            taps[:, i, j] = xp[:, i * dilation:i * dilation + h,
                               j * dilation:j * dilation + wd]
    out = np.einsum("cijhw,ocij->ohw", taps, w.data)
    _count(2 * c_out * c_in * k * k * h * wd)

    def backward(g):
        if w.requires_grad:
            w._accumulate(np.einsum("cijhw,ohw->ocij", taps, g))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            gtaps = np.einsum("ocij,ohw->cijhw", w.data, g)
            for i in range(k):
                for j in range(k):
                    gxp[:, i * dilation:i * dilation + h,
                        j * dilation:j * dilation + wd] += gtaps[:, i, j]
            gxp = gxp[:, pad:-pad, pad:-pad] if pad else gxp
            x._accumulate(gxp)

    return _make(out, (x, w), "dilated_conv2d", backward)


def pad_reflect2d(x: Tensor, pad: int) -> Tensor:
    """Reflect-pad the two spatial axes of a C x H x W tensor."""
    if x.ndim != 3:
        raise DimensionError("pad_reflect2d expects x[C,H,W], got %r" % (x.shape,))
    c, h, w = x.shape
    if pad >= h or pad >= w:
        raise ContractError("reflect pad %d too large for %dx%d image" % (pad, h, w))
    out = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    idx = np.pad(np.arange(h * w).reshape(h, w), pad, mode="reflect").ravel()

    def backward(g):
        if x.requires_grad:
            gflat = g.reshape(c, -1)
            buf = np.zeros((c, h * w))
            for ch in range(c):
                buf[ch] = np.bincount(idx, weights=gflat[ch], minlength=h * w)
            x._accumulate(buf.reshape(c, h, w))

    return _make(out, (x,), "pad_reflect2d", backward)


# ---------------------------------------------------------------------------
# selective-scan recurrence
# ---------------------------------------------------------------------------

def selective_scan_core(u: Tensor, delta: Tensor, b: Tensor, c: Tensor,
                        a: Tensor, d: Tensor) -> Tensor:
    """Input-selective state-space recurrence over one token sequence.

    Shapes: u, delta are (L, C); b, c are (L, N); a is (C, N) and holds the
    continuous-time (negative) state matrix; d is (C,). For every channel ch:

        h_t = exp(delta_t * a) * h_{t-1} + (delta_t * u_t) * b_t
        y_t = <h_t, c_t> + d * u_t        with  h_0 = 0

    The forward loop is the sequential recurrence itself; backward replays it
    in reverse with the adjoint recursion. Work is linear in L.
    """
    if u.ndim != 2:
        raise DimensionError("selective_scan_core expects u[L,C], got %r"
                             % (u.shape,))
    length, ch = u.shape
    if length < 1:
        raise ContractError("selective scan needs at least one token")
    n = a.shape[1] if a.ndim == 2 else 0
    if delta.shape != u.shape:
        raise DimensionError("delta shape %r != u shape %r" % (delta.shape, u.shape))
    if b.shape != (length, n) or c.shape != (length, n):
        raise DimensionError("b/c must be (L,N)=(%d,%d); got %r, %r"
                             % (length, n, b.shape, c.shape))
    if a.shape != (ch, n) or d.shape != (ch,):
        raise DimensionError("a must be (C,N), d must be (C,)")

    ud, dd, bd, cd, ad, sd = u.data, delta.data, b.data, c.data, a.data, d.data
    decay = np.exp(dd[:, :, None] * ad[None])                  # (L,C,N)
    drive = (dd * ud)[:, :, None] * bd[:, None, :]             # (L,C,N)
    hs = np.empty((length, ch, n))
    h = np.zeros((ch, n))
    for t in range(length):
        h = decay[t] * h + drive[t]
        hs[t] = h
    y = np.einsum("lcn,ln->lc", hs, cd) + sd * ud
    _count(10 * length * ch * n + 2 * length * ch)

    def backward(g):
        gdirect = g[:, :, None] * cd[:, None, :]               # (L,C,N)
        gh_all = np.empty((length, ch, n))
        gh_next = np.zeros((ch, n))
        for t in range(length - 1, -1, -1):
            gh_next = gdirect[t] + gh_next
            gh_all[t] = gh_next
            gh_next = gh_next * decay[t]
        gdu = np.einsum("lcn,ln->lc", gh_all, bd)       # grad wrt (delta * u)
        if u.requires_grad:
            u._accumulate(g * sd + gdu * dd)
        if delta.requires_grad or a.requires_grad:
            h_prev = np.concatenate([np.zeros((1, ch, n)), hs[:-1]], axis=0)
            gda = gh_all * h_prev * decay
            if delta.requires_grad:
                delta._accumulate(gdu * ud + (gda * ad[None]).sum(axis=2))
            if a.requires_grad:
                a._accumulate(np.einsum("lcn,lc->cn", gda, dd))
        if b.requires_grad:
            b._accumulate(np.einsum("lcn,lc->ln", gh_all, dd * ud))
        if c.requires_grad:
            c._accumulate(np.einsum("lc,lcn->ln", g, hs))
        if d.requires_grad:
            d._accumulate((g * ud).sum(axis=0))

    return _make(y, (u, delta, b, c, a, d), "selective_scan_core", backward)
