"""numpy-backed dense tensors with reverse-mode automatic differentiation.

Each operation links its result to its inputs through a backward closure;
``Tensor.backward()`` replays the closures in reverse topological order, so
one forward pass builds exactly one tape. float32 is the training dtype,
float64 the test / gradient-check dtype; dtypes never mix inside a graph.
Broadcasting is restricted to trailing-dimension (bias style) addition to
keep the kernel auditable.
"""

import contextlib
import threading

import numpy as np
from scipy.special import erf

from pelt.errors import ContractError, ShapeError

_ALLOWED = (np.dtype(np.float32), np.dtype(np.float64))

# per-thread so parallel inference cannot disable recording for a trainer
_state = threading.local()


def _grad_on():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    prev = _grad_on()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A dense row-major array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _ALLOWED:
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every reachable input."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _result(data, parents, backward):
    out = Tensor(data)
    if _grad_on() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"mixed dtypes in one graph: {dt} vs {t.data.dtype}")
    return dt


def matmul(a, b):
    """Matrix product; 2-D weights or fully batched operands."""
    _check_same_dtype(a, b)
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    if b.ndim == 2:
        data = a.data @ b.data
    elif a.ndim == b.ndim:
        if a.data.shape[:-2] != b.data.shape[:-2]:
            raise ShapeError(f"matmul: batch dimensions disagree, {a.shape} x {b.shape}")
        data = np.matmul(a.data, b.data)
    else:
        raise ShapeError(f"matmul: unsupported ranks, {a.shape} x {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2:
                ga = a.data.reshape(-1, a.data.shape[-1])
                gg = g.reshape(-1, g.shape[-1])
                _accum(b, ga.T @ gg)
            else:
                _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(data, (a, b), backward)


def add(a, b):
    """a + b. b may be a Tensor (same shape or trailing-dims bias) or a constant."""
    if isinstance(b, Tensor):
        _check_same_dtype(a, b)
        if b.shape != a.shape and a.shape[a.ndim - b.ndim:] != b.shape:
            raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not line up")
        data = a.data + b.data

        def backward(g):
            if a.requires_grad:
                _accum(a, g)
            if b.requires_grad:
                gb = g
                while gb.ndim > b.ndim:
                    gb = gb.sum(axis=0)
                _accum(b, gb)

        return _result(data, (a, b), backward)

    data = a.data + np.asarray(b, dtype=a.data.dtype)
    if data.shape != a.data.shape:
        raise ShapeError(f"add: constant of shape {np.shape(b)} broadcast past {a.shape}")

    def backward_const(g):
        _accum(a, g)

    return _result(data, (a,), backward_const)


def sub(a, b):
    return add(a, mul(b, -1.0)) if isinstance(b, Tensor) else add(a, -np.asarray(b))


def mul(a, b):
    """Elementwise product with a same-shape Tensor or a python scalar."""
    if isinstance(b, Tensor):
        _check_same_dtype(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")
        data = a.data * b.data

        def backward(g):
            if a.requires_grad:
                _accum(a, g * b.data)
            if b.requires_grad:
                _accum(b, g * a.data)

        return _result(data, (a, b), backward)

    c = float(b)
    data = a.data * c

    def backward_scalar(g):
        _accum(a, g * c)

    return _result(data, (a,), backward_scalar)


def dot(a, b):
    """Inner product of two 1-D tensors."""
    _check_same_dtype(a, b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: need equal 1-D shapes, got {a.shape} and {b.shape}")
    data = np.asarray(a.data @ b.data)

    def backward(g):
        if a.requires_grad:
            _accum(a, g * b.data)
        if b.requires_grad:
            _accum(b, g * a.data)

    return _result(data, (a, b), backward)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return _result(data, (a,), backward)


def transpose(a, axes=None):
    data = a.data.transpose(axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inv))

    return _result(data, (a,), backward)


def gather_rows(table, indices):
    """Row lookup table[indices]; backward scatter-adds into the table."""
    idx = np.asarray(indices)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"gather_rows: index out of range for table with {table.shape[0]} rows")
    data = table.data[idx]

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
            _accum(table, acc)

    return _result(data, (table,), backward)


def tsum(a):
    data = np.asarray(a.data.sum())

    def backward(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _result(data, (a,), backward)


def tmean(a):
    n = a.data.size
    data = np.asarray(a.data.sum() / n)

    def backward(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _result(data, (a,), backward)


def gelu(a):
    """Exact (erf) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0, dtype=x.dtype)))
    data = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        _accum(a, g * (cdf + x * pdf).astype(x.dtype))

    return _result(data, (a,), backward)


def softmax(a, axis=-1):
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gs = g * s
        _accum(a, gs - s * gs.sum(axis=axis, keepdims=True))

    return _result(s, (a,), backward)


def layer_norm(x, gain, bias, epsilon):
    """Zero-mean / unit-variance normalization over the last axis, then affine.

    Variance is the population variance over the feature axis; with gain=1,
    bias=0 and epsilon=0 every output row has Euclidean norm sqrt(D).
    """
    if epsilon < 0:
        raise ValueError(f"layer_norm: epsilon must be >= 0, got {epsilon}")
    d = x.data.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match feature size {d}"
        )
    _check_same_dtype(x, gain, bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            term = dxhat - dxhat.mean(axis=-1, keepdims=True) \
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * term)

    return _result(data, (x, gain, bias), backward)


def softmax_cross_entropy(logits, target):
    """Mean negative log-softmax probability of the target token(s).

    Accepts a single row (V,) with an integer target or a batch (N, V) with
    an integer vector; the gradient is (softmax - one_hot) / N.
    """
    squeeze = logits.ndim == 1
    lg = logits.data.reshape(1, -1) if squeeze else logits.data
    if lg.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy: logits must be 1-D or 2-D, got {logits.shape}")
    tg = np.atleast_1d(np.asarray(target, dtype=np.int64))
    if squeeze and tg.size != 1:
        raise ShapeError("softmax_cross_entropy: one row of logits but several targets")
    if tg.size != lg.shape[0]:
        raise ShapeError(
            f"softmax_cross_entropy: {lg.shape[0]} rows of logits but {tg.size} targets"
        )
    v = lg.shape[1]
    if tg.size and (tg.min() < 0 or tg.max() >= v):
        raise IndexError(f"softmax_cross_entropy: target out of range for vocabulary of {v}")
    n = lg.shape[0]
    m = lg.max(axis=1, keepdims=True)
    shifted = lg - m
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    losses = lse - shifted[rows, tg]
    data = np.asarray(losses.mean(), dtype=lg.dtype)

    def backward(g):
        if logits.requires_grad:
            sm = np.exp(shifted)
            sm /= sm.sum(axis=1, keepdims=True)
            sm[rows, tg] -= 1.0
            grad = (float(g) / n) * sm
            _accum(logits, grad.reshape(logits.data.shape))

    return _result(data, (logits,), backward)


class ParamStore:
    """Ordered, uniquely named collection of trainable tensors."""

    def __init__(self):
        self._params = {}

    def add(self, name, data, dtype=None):
        if name in self._params:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(data, dtype=dtype)
        t.requires_grad = True
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def total_size(self):
        return sum(t.size for t in self._params.values())
