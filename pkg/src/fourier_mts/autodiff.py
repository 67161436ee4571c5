"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations only record themselves while a :class:`GradTape` is active, so
inference code runs without any bookkeeping::

    with GradTape() as tape:
        loss = (w * x).sum()
    tape.backward(loss)
    w.grad  # == x.data
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .exceptions import ConfigurationError, ContractError, DimensionError

__all__ = [
    "BNState",
    "GradTape",
    "Tensor",
    "as_tensor",
    "batchnorm",
    "concat",
    "conv1d",
    "dropout",
    "gelu",
    "log_softmax",
    "matmul",
    "mean",
    "reshape",
    "softmax",
    "transpose",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_active_tapes: list["GradTape"] = []


class _Node:
    __slots__ = ("inputs", "backward", "out")

    def __init__(self, inputs, backward, out):
        self.inputs = inputs
        self.backward = backward
        self.out = out


class GradTape:
    """Append-only record of differentiable operations.

    The tape is a context manager; nested tapes are allowed and the innermost
    one records. Nodes are replayed in strict reverse append order, which is a
    valid topological order because an op can only consume tensors that
    already exist.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def record(self, out, inputs, backward):
        node = _Node(inputs, backward, out)
        out._node = node
        out._tape = self
        self.nodes.append(node)

    def backward(self, loss, wrt=None):
        """Propagate d(loss)/d(.) to every leaf that requires grad.

        Gradients accumulate into ``leaf.grad``. When ``wrt`` is given, a list
        of gradient arrays aligned with it is returned; tensors the loss does
        not depend on get zeros.
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ContractError(
                f"backward needs a scalar loss, got shape {getattr(loss, 'shape', None)}"
            )
        if loss._tape is not self:
            raise ContractError("loss was not recorded on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._node is None:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    grads[key] = gi if key not in grads else grads[key] + gi

        if wrt is None:
            return None
        return [
            np.zeros_like(t.data) if t.grad is None else t.grad for t in wrt
        ]


def _recording():
    return _active_tapes[-1] if _active_tapes else None


class Tensor:
    """Real N-dimensional array that can take part in a gradient tape.

    Parameters
    ----------
    data : array_like
        Values, copied to float64.
    requires_grad : bool
        Leaf tensors with ``requires_grad`` accumulate ``.grad`` on backward.
    name : str, optional
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._node = None
        self._tape = None

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
    def grad_handle(self):
        return self._node

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NotImplementedError("tensor / tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, inputs, backward):
    """Wrap ``data``, recording a node when any input participates."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._node = None
    out._tape = None
    tape = _recording()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for a in axes:
        if not -ndim <= a < ndim:
            raise DimensionError(f"axis {a} out of range for {ndim}-d tensor")
        out.append(a % ndim)
    return tuple(sorted(set(out)))


# elementwise -------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _result(data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _result(data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    ad, bd = a.data, b.data
    return _result(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def power(a, p):
    a = as_tensor(a)
    ad = a.data
    return _result(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def getitem(a, idx):
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), backward)


# reductions and shape ops -----------------------------------------------


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    shape = x.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(x.data.sum(axis=axes, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    """Arithmetic mean over ``axis``; the gradient is ``1/n`` broadcast."""
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    shape = x.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _result(x.data.mean(axis=axes, keepdims=keepdims), (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _result(data, (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for {x.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    (ax,) = _normalize_axes(axis, ndim)
    try:
        data = np.concatenate([t.data for t in tensors], axis=ax)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concat shapes {shapes} on axis {ax}") from exc
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result(
        data, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=ax))
    )


# linear algebra -----------------------------------------------------------


def matmul(a, b):
    """Batched matrix product ``a[..., p, q] @ b[..., q, r]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def backward(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(data, (a, b), backward)


def conv1d(x, w, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x[batch, in_ch, length]`` with ``w[out_ch, in_ch, k]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d expects 3-d input and weight, got {x.shape}, {w.shape}")
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    batch, cin, length = x.shape
    cout, wcin, k = w.shape
    if wcin != cin:
        raise DimensionError(f"conv1d channel mismatch: input {x.shape}, weight {w.shape}")
    padded = length + 2 * padding
    if k > padded:
        raise DimensionError(f"kernel size {k} exceeds padded input length {padded}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    # cols[b, t, c, j] = xp[b, c, t*stride + j]
    cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :].transpose(0, 2, 1, 3)
    out_len = cols.shape[1]
    cols = cols.reshape(batch, out_len, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    out = cols @ wmat.T
    inputs = (x, w)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise DimensionError(f"bias shape {bias.shape} does not match out_ch {cout}")
        out = out + bias.data
        inputs = (x, w, bias)
    out = out.transpose(0, 2, 1)

    def backward(g):
        gt = g.transpose(0, 2, 1)  # [b, out_len, cout]
        gw = np.einsum("bto,btk->ok", gt, cols).reshape(w.shape)
        dcols = (gt @ wmat).reshape(batch, out_len, cin, k)
        gxp = np.zeros((batch, cin, padded))
        for j in range(k):
            gxp[:, :, j : j + stride * (out_len - 1) + 1 : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, padding : padding + length] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _result(np.ascontiguousarray(out), inputs, backward)


# nonlinearities -----------------------------------------------------------


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("softmax produced non-finite values")

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(y, (x,), backward)


def gelu(x):
    """Exact gelu, ``x * Phi(x)`` with the erf form of the Gaussian CDF."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _result(xd * cdf, (x,), backward)


def dropout(x, rate, rng, training=True):
    """Inverted dropout; identity when not training or ``rate == 0``."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


@dataclass
class BNState:
    """Running statistics for one batch-norm site."""

    num_features: int
    momentum: float = 0.1
    eps: float = 1e-5
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.num_features)
        if self.running_var is None:
            self.running_var = np.ones(self.num_features)


def batchnorm(x, gamma, beta, state, training=True, axis=1):
    """Batch normalization over every axis except the feature ``axis``.

    In training mode the batch statistics are used and ``state`` is updated
    by an exponential moving average (unbiased variance); in eval mode the
    running statistics are used and ``state`` is left untouched.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    ax = axis % x.ndim
    nfeat = x.shape[ax]
    if gamma.shape != (nfeat,) or beta.shape != (nfeat,):
        raise DimensionError(
            f"gamma/beta shapes {gamma.shape}/{beta.shape} do not match {nfeat} features"
        )
    red = tuple(i for i in range(x.ndim) if i != ax)
    bshape = [1] * x.ndim
    bshape[ax] = nfeat
    gd = gamma.data.reshape(bshape)
    bd = beta.data.reshape(bshape)

    if training:
        if x.shape[0] < 2:
            raise ConfigurationError("batchnorm in train mode needs batch >= 2")
        n = x.data.size // nfeat
        mu = x.data.mean(axis=red, keepdims=True)
        var = x.data.var(axis=red, keepdims=True)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu.reshape(-1)
        state.running_var = (1 - m) * state.running_var + m * var.reshape(-1) * n / max(n - 1, 1)
    else:
        mu = state.running_mean.reshape(bshape)
        var = state.running_var.reshape(bshape)

    invstd = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * invstd
    out = xhat * gd + bd

    def backward(g):
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        if training:
            gx_hat = g * gd
            gx = invstd * (
                gx_hat
                - gx_hat.mean(axis=red, keepdims=True)
                - xhat * (gx_hat * xhat).mean(axis=red, keepdims=True)
            )
        else:
            gx = g * gd * invstd
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)


def linear_map(x, forward, adjoint):
    """Apply a fixed linear map with a user-supplied adjoint for backward."""
    x = as_tensor(x)
    return _result(forward(x.data), (x,), lambda g: (adjoint(g),))
