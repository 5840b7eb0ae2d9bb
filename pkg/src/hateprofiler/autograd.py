"""Dense-tensor reverse-mode automatic differentiation.

Small, eager autograd over numpy arrays: every operation computes its result
immediately and, when gradients are being recorded, attaches a closure that
propagates the upstream gradient to its inputs. ``Tensor.backward()`` walks
the implicit operation graph in reverse topological order exactly once and
accumulates gradients into every reachable leaf.

Supports rank 0..3 arrays in float32 or float64. The test / oracle path uses
float64; training may run in float32. Row-softmax masking uses an additive
-inf surrogate so masked slots come out exactly zero in both the forward
values and the gradients.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DegenerateInputError, DimensionError, InputError

_FLOAT_DTYPES = (np.float32, np.float64)


class _GradMode(threading.local):
    # per-thread so parallel evaluation cannot race the recording flag
    enabled = True


_mode = _GradMode()


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation paths)."""
    prev = _mode.enabled
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if arr.ndim > 3:
            raise DimensionError(f"tensors are limited to rank 3, got shape {arr.shape}")
        # ascontiguousarray would promote scalars to rank 1, so guard on ndim
        self.data = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._prev = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        """Backpropagate from a scalar: fills ``grad`` on every reachable leaf."""
        if self.data.ndim != 0:
            raise InputError(f"backward requires a scalar, got shape {self.shape}")
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
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named trainable leaf; ``grad`` is allocated and zeroed up front."""

    __slots__ = ("name",)

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype.name})"


def _recording(*tensors):
    return _mode.enabled and any(t.requires_grad for t in tensors)


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad += g


def _result(data, parents, backward_fn):
    out = Tensor(data)
    out.requires_grad = True
    out._prev = tuple(parents)
    out._backward = backward_fn
    return out


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product of two rank-2 tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    data = a.data @ b.data
    if not _recording(a, b):
        return Tensor(data)
    out = None

    def backward():
        g = out.grad
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out = _result(data, (a, b), backward)
    return out


def transpose(x):
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects rank 2, got {x.shape}")
    data = np.ascontiguousarray(x.data.T)
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, np.ascontiguousarray(out.grad.T))

    out = _result(data, (x,), backward)
    return out


def add(x, y):
    """Elementwise sum of two same-shape tensors."""
    if x.shape != y.shape:
        raise DimensionError(f"add shapes differ: {x.shape} vs {y.shape}")
    data = x.data + y.data
    if not _recording(x, y):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, out.grad)
        _accumulate(y, out.grad)

    out = _result(data, (x, y), backward)
    return out


def add_bias(x, b):
    """Add a length-d bias to every row of an m-by-d tensor."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias shapes incompatible: {x.shape} + {b.shape}")
    data = x.data + b.data
    if not _recording(x, b):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, out.grad)
        _accumulate(b, out.grad.sum(axis=0))

    out = _result(data, (x, b), backward)
    return out


def scale(x, c):
    """Multiply by a python scalar constant."""
    c = float(c)
    data = x.data * c
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, out.grad * c)

    out = _result(data, (x,), backward)
    return out


def mul_elem(x, y):
    """Elementwise product of two same-shape tensors."""
    if x.shape != y.shape:
        raise DimensionError(f"mul_elem shapes differ: {x.shape} vs {y.shape}")
    data = x.data * y.data
    if not _recording(x, y):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, out.grad * y.data)
        _accumulate(y, out.grad * x.data)

    out = _result(data, (x, y), backward)
    return out


def tanh(x):
    data = np.tanh(x.data)
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, out.grad * (1.0 - data * data))

    out = _result(data, (x,), backward)
    return out


def masked_row_softmax(x, mask=None):
    """Row-wise softmax with optional binary masking.

    Masked positions are excluded via an additive -inf surrogate, so they are
    exactly zero in the output and receive exactly zero gradient. Each row of
    the output sums to 1 over its unmasked positions.
    """
    if x.data.ndim != 2:
        raise DimensionError(f"masked_row_softmax expects rank 2, got {x.shape}")
    if mask is None:
        data = kernels.softmax_rows(x.data)
    else:
        m = np.ascontiguousarray(np.asarray(mask.data if isinstance(mask, Tensor) else mask))
        if m.shape != x.shape:
            raise DimensionError(f"mask shape {m.shape} does not match input {x.shape}")
        m = (m != 0).astype(np.uint8)
        if np.any(m.sum(axis=1) == 0):
            rows = np.nonzero(m.sum(axis=1) == 0)[0].tolist()
            raise DegenerateInputError(f"fully masked softmax rows: {rows}")
        data = kernels.softmax_rows_masked(x.data, m)
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, kernels.softmax_rows_grad(data, out.grad))

    out = _result(data, (x,), backward)
    return out


def mean_rows(x):
    """Column-wise arithmetic mean: an m-by-d tensor reduces to length d."""
    if x.data.ndim != 2:
        raise DimensionError(f"mean_rows expects rank 2, got {x.shape}")
    n = x.shape[0]
    data = x.data.mean(axis=0)
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, np.broadcast_to(out.grad / n, x.shape))

    out = _result(data, (x,), backward)
    return out


def masked_mean(x, mask):
    """Mean over the rows whose mask entry is 1."""
    if x.data.ndim != 2:
        raise DimensionError(f"masked_mean expects rank 2, got {x.shape}")
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if m.shape != (x.shape[0],):
        raise DimensionError(f"row mask shape {m.shape} does not match {x.shape}")
    keep = (m != 0)
    count = int(keep.sum())
    if count == 0:
        raise DegenerateInputError("masked_mean over an all-zero mask")
    weights = keep.astype(x.dtype) / count
    data = weights @ x.data
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, np.outer(weights, out.grad))

    out = _result(data, (x,), backward)
    return out


def gather_rows(table, ids):
    """Select rows of a V-by-d table by index; gradients scatter-add back."""
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise InputError(f"ids must be a flat index list, got shape {idx.shape}")
    if table.data.ndim != 2:
        raise DimensionError(f"gather_rows expects a rank-2 table, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise InputError(f"row ids out of range for table with {table.shape[0]} rows")
    data = table.data[idx]
    if not _recording(table):
        return Tensor(data)
    out = None

    def backward():
        g = np.zeros_like(table.data)
        np.add.at(g, idx, out.grad)
        _accumulate(table, g)

    out = _result(data, (table,), backward)
    return out


def stack_rows(rows):
    """Stack n length-d tensors into an n-by-d tensor."""
    if not rows:
        raise InputError("stack_rows needs at least one row")
    d = rows[0].shape
    for r in rows:
        if r.data.ndim != 1 or r.shape != d:
            raise DimensionError(f"stack_rows expects equal rank-1 rows, got {r.shape} vs {d}")
    data = np.stack([r.data for r in rows])
    if not _recording(*rows):
        return Tensor(data)
    out = None

    def backward():
        for i, r in enumerate(rows):
            _accumulate(r, out.grad[i])

    out = _result(data, rows, backward)
    return out


def slice_cols(x, start, stop):
    if x.data.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
        raise DimensionError(f"bad column slice [{start}:{stop}] for shape {x.shape}")
    data = np.ascontiguousarray(x.data[:, start:stop])
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        g = np.zeros_like(x.data)
        g[:, start:stop] = out.grad
        _accumulate(x, g)

    out = _result(data, (x,), backward)
    return out


def concat_cols(parts):
    if not parts:
        raise InputError("concat_cols needs at least one part")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise DimensionError("concat_cols expects rank-2 parts with equal row counts")
    data = np.concatenate([p.data for p in parts], axis=1)
    if not _recording(*parts):
        return Tensor(data)
    out = None
    widths = [p.shape[1] for p in parts]

    def backward():
        j = 0
        for p, w in zip(parts, widths):
            _accumulate(p, out.grad[:, j:j + w])
            j += w

    out = _result(data, parts, backward)
    return out


def reshape(x, shape):
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.shape} to {tuple(shape)}")
    data = x.data.reshape(shape)
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, out.grad.reshape(x.shape))

    out = _result(data, (x,), backward)
    return out


def sum_all(x):
    """Sum every entry down to a scalar."""
    data = np.asarray(x.data.sum(), dtype=x.dtype)
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, np.broadcast_to(out.grad, x.shape))

    out = _result(data, (x,), backward)
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    """Row-wise layer normalization with learned gain and bias."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise DimensionError(
            f"layer_norm shapes incompatible: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    data, mu, rstd = kernels.layer_norm_rows(x.data, gain.data, bias.data, eps)
    if not _recording(x, gain, bias):
        return Tensor(data)
    out = None

    def backward():
        gx, ggain, gbias = kernels.layer_norm_rows_grad(x.data, gain.data, mu, rstd, out.grad)
        _accumulate(x, gx)
        _accumulate(gain, ggain)
        _accumulate(bias, gbias)

    out = _result(data, (x, gain, bias), backward)
    return out


def dropout(x, p, rng, training):
    """Zero entries with probability p and rescale survivors while training."""
    if not (0.0 <= p < 1.0):
        raise ConfigError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    data = x.data * keep
    if not _recording(x):
        return Tensor(data)
    out = None

    def backward():
        _accumulate(x, out.grad * keep)

    out = _result(data, (x,), backward)
    return out


def softmax_cross_entropy(logits, label):
    """Negative log softmax probability of the true binary label."""
    if logits.data.ndim != 1 or logits.shape[0] != 2:
        raise DimensionError(f"expected binary logits of shape (2,), got {logits.shape}")
    if label not in (0, 1):
        raise InputError(f"label must be 0 or 1, got {label!r}")
    z = logits.data - logits.data.max()
    ez = np.exp(z)
    probs = ez / ez.sum()
    data = np.asarray(-np.log(probs[label]), dtype=logits.dtype)
    if not _recording(logits):
        return Tensor(data)
    out = None

    def backward():
        g = probs.copy()
        g[label] -= 1.0
        _accumulate(logits, g * out.grad)

    out = _result(data, (logits,), backward)
    return out


def glorot_init(rng, fan_in, fan_out, shape=None, dtype=np.float32):
    """Uniform Glorot initialization for a weight of the given fan."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = shape if shape is not None else (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    worst_coord: tuple
    analytic: float
    numeric: float


@dataclass
class GradCheckReport:
    tol: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def passed(self):
        return self.max_rel_err < self.tol

    def __str__(self):
        lines = [f"{'parameter':<28} {'max rel err':>12}  status"]
        for e in self.entries:
            status = "ok" if e.max_rel_err < self.tol else "FAIL"
            lines.append(f"{e.name:<28} {e.max_rel_err:>12.3e}  {status}")
        lines.append(f"overall max {self.max_rel_err:.3e} ({'pass' if self.passed else 'FAIL'} at tol {self.tol:g})")
        return "\n".join(lines)


def grad_check(f, params, h=1e-5, tol=1e-4, coords_per_param=None, rng=None):
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` is a no-argument callable returning a scalar Tensor and must be
    deterministic across calls (run the model in eval mode). Parameters
    should be float64; the relative error denominator is floored at 1e-6 so
    finite-difference roundoff on near-zero gradients does not register as
    disagreement. ``coords_per_param`` optionally subsamples the coordinates
    checked per parameter (seeded by ``rng``); by default all are checked.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = {id(p): p.grad.copy() for p in params}

    report = GradCheckReport(tol=tol)
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if coords_per_param is not None and coords_per_param < n:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(n, size=coords_per_param, replace=False)
        else:
            idxs = range(n)
        worst = (0.0, (0,), 0.0, 0.0)
        for i in idxs:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                f_plus = float(f().data)
                flat[i] = orig - h
                f_minus = float(f().data)
                flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[id(p)].reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            if rel > worst[0]:
                worst = (rel, np.unravel_index(int(i), p.data.shape), a, numeric)
        name = getattr(p, "name", f"param{len(report.entries)}")
        report.entries.append(GradCheckEntry(name, worst[0], worst[1], worst[2], worst[3]))
    return report
