"""Reverse-mode automatic differentiation over dense float64 arrays of rank <= 2.

A :class:`Tape` records operations in creation order, which is already a
topological order, and :meth:`Tape.backward` walks it once in reverse.
Arrays passed to an op are wrapped as constants; a result is recorded only
when at least one input requires a gradient, so evaluation code can run the
same forward functions without building a graph.

Batches are rows: a (B, K) matrix holds B instances of a K-vector. Binary
ops follow numpy broadcasting and reduce gradients back to input shapes.
"""

import numpy as np

from . import special

__all__ = [
    "Tape",
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "TapeError",
    "DomainError",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "add_bias",
    "relu",
    "softplus",
    "sigmoid",
    "exp",
    "log",
    "pow",
    "ln_gamma",
    "digamma",
    "sum",
    "mean",
    "softmax_rows",
    "log_softmax_rows",
    "clip",
    "reshape",
    "grad_check",
    "GradCheckReport",
]

DomainError = special.DomainError


class ShapeError(ValueError):
    category = "shape"


class NonFiniteError(ArithmeticError):
    category = "non-finite"


class TapeError(RuntimeError):
    category = "tape"


class Tensor:
    __slots__ = ("value", "tape", "requires_grad", "parents", "backward_fn", "index", "name")

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, tape=None, requires_grad=False, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 2:
            raise ShapeError(f"rank {value.ndim} tensors are not supported (max 2)")
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.index = -1
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, other):
        return pow(self, other)


class Tape:
    """Ordered op record plus a registry of named parameter leaves."""

    def __init__(self):
        self.nodes = []
        self.params = {}
        self.consumed = False

    def param(self, name, value):
        if name in self.params:
            raise TapeError(f"parameter {name!r} registered twice")
        t = Tensor(np.array(value, dtype=np.float64), tape=self, requires_grad=True, name=name)
        _check_finite(t.value, f"param {name}")
        self.params[name] = t
        return t

    def constant(self, value):
        return Tensor(value, tape=self)

    def _record(self, t):
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        t.index = len(self.nodes)
        self.nodes.append(t)

    def backward(self, loss):
        """Return {param name: gradient array} for d loss / d param."""
        if not isinstance(loss, Tensor) or loss.value.size != 1 or loss.value.ndim != 0:
            raise TapeError("backward() needs a scalar loss tensor")
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        if loss.tape is not self and loss.requires_grad:
            raise TapeError("loss was not produced on this tape")
        self.consumed = True
        grads = {}
        if loss.requires_grad:
            grads[id(loss)] = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.value.shape)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out = {}
        for name, p in self.params.items():
            g = grads.get(id(p))
            out[name] = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64).reshape(p.value.shape)
        return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(value, what):
    if not np.isfinite(value).all():
        raise NonFiniteError(f"non-finite value produced by {what}")


def _unbroadcast(g, shape):
    g = np.asarray(g, dtype=np.float64)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _make(value, inputs, backward_fn, opname):
    value = np.asarray(value, dtype=np.float64)
    if value.ndim > 2:
        raise ShapeError(f"{opname}: result rank {value.ndim} exceeds 2")
    _check_finite(value, opname)
    tape = None
    for t in inputs:
        if t.requires_grad:
            tape = t.tape
            break
    if tape is None:
        return Tensor(value, tape=next((t.tape for t in inputs if t.tape is not None), None))
    for t in inputs:
        if t.requires_grad and t.tape is not tape:
            raise TapeError(f"{opname}: inputs come from different tapes")
    out = Tensor(value, tape=tape, requires_grad=True)
    out.parents = tuple(inputs)
    out.backward_fn = backward_fn
    tape._record(out)
    return out


def _broadcast_shape(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise DomainError("div: division by zero")
    out = av / bv
    return _make(out, (a, b), lambda g: (g / bv, -g * out / bv), "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add_bias(x, bias):
    """(B, H) + (H,) row broadcast."""
    x, bias = as_tensor(x), as_tensor(bias)
    if x.value.ndim != 2 or bias.value.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {bias.shape}")
    return _make(x.value + bias.value, (x, bias), lambda g: (g, g.sum(axis=0)), "add_bias")


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0.0  # derivative at exactly 0 is 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def softplus(x):
    x = as_tensor(x)
    sig = special.stable_sigmoid(x.value)
    return _make(special.softplus(x.value), (x,), lambda g: (g * sig,), "softplus")


def sigmoid(x):
    x = as_tensor(x)
    s = np.asarray(special.stable_sigmoid(x.value))
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):  # overflow is reported by the finite check
        out = np.exp(x.value)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    x = as_tensor(x)
    xv = x.value
    if np.any(xv <= 0.0):
        raise DomainError(f"log: argument must be > 0, got min {xv.min()!r}")
    return _make(np.log(xv), (x,), lambda g: (g / xv,), "log")


def pow(base, exponent):
    """base ** exponent for positive base; exponent may be a tensor.

    The exponent gradient uses a^b = exp(b ln a).
    """
    base, exponent = as_tensor(base), as_tensor(exponent)
    _broadcast_shape(base, exponent, "pow")
    bv, ev = base.value, exponent.value
    if np.any(bv <= 0.0):
        raise DomainError("pow: base must be > 0")
    out = bv**ev

    def backward(g):
        gb = g * ev * out / bv
        ge = g * out * np.log(bv) if exponent.requires_grad else None
        return gb, ge

    return _make(out, (base, exponent), backward, "pow")


def ln_gamma(x):
    x = as_tensor(x)
    xv = x.value
    return _make(special.ln_gamma(xv), (x,), lambda g: (g * special.digamma(xv),), "ln_gamma")


def digamma(x):
    x = as_tensor(x)
    xv = x.value
    return _make(special.digamma(xv), (x,), lambda g: (g * special.trigamma(xv),), "digamma")


def sum(x, axis=None):
    """Sum over all entries, or over ``axis`` (the axis is dropped)."""
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _make(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, shape),), "sum")
    axis = axis % max(x.value.ndim, 1)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _make(x.value.sum(axis=axis), (x,), backward, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    return sum(x, axis) * (1.0 / n)


def softmax_rows(x):
    """Softmax along the last axis."""
    x = as_tensor(x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), backward, "softmax_rows")


def log_softmax_rows(x):
    x = as_tensor(x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax_rows")


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient is zero where the clamp is active."""
    x = as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _make(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,), "clip")


class GradCheckReport:
    """Per-parameter max relative error of analytic vs central-difference gradients."""

    def __init__(self, errors, tol):
        self.errors = errors
        self.tol = tol

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error <= self.tol

    def __repr__(self):
        return f"GradCheckReport(max_error={self.max_error:.3e}, tol={self.tol:g}, passed={self.passed})"


def grad_check(f, params, h=1e-5, tol=1e-4, floor=1e-6):
    """Compare backprop gradients of ``f`` with central finite differences.

    ``f(tape, tensors)`` must build a scalar loss from the parameter tensors
    (``tape`` is None on the finite-difference passes) and be deterministic (all sampling noise frozen). The relative
    error per entry is |a - n| / max(|a|, |n|, floor); ``floor`` keeps
    near-zero gradients from amplifying round-off.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        tape = Tape()
        tensors = {k: tape.param(k, v) for k, v in values.items()}
        return tape, f(tape, tensors)

    tape, loss = evaluate(params)
    _, again = evaluate(params)
    if loss.value != again.value:
        raise TapeError("grad_check: f is not deterministic (two forward passes disagree)")
    analytic = tape.backward(loss)

    def value_at(name, flat_index, delta):
        # tape-free: perturbed passes need values only
        shifted = {k: Tensor(v) for k, v in params.items()}
        arr = params[name].copy()
        arr.reshape(-1)[flat_index] += delta
        shifted[name] = Tensor(arr)
        return f(None, shifted).item()

    errors = {}
    for name, arr in params.items():
        a = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(arr.size):
            numeric = (value_at(name, i, h) - value_at(name, i, -h)) / (2.0 * h)
            scale = max(abs(a[i]), abs(numeric), floor)
            worst = max(worst, abs(a[i] - numeric) / scale)
        errors[name] = worst
    return GradCheckReport(errors, tol)
