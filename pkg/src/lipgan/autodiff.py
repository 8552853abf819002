"""Tape-based reverse-mode automatic differentiation over float64 arrays.

Every op is registered with a forward function (numpy in, numpy out) and a
vector-Jacobian rule written with the same Tensor ops.  A plain backward pass
runs the rules with recording switched off; a differentiable backward records
them on the tape, so the resulting gradients can be differentiated once more
(this is what the gradient penalty needs).

Usage::

    with Tape() as tape:
        x = tape.watch(np.array([1.0, 2.0, 3.0]))
        y = (x * x).sum()
    (gx,) = backward(y, [x])
"""

import contextlib
import math
import threading

import numpy as np

from .errors import ConfigurationError, DomainError, UsageError

_local = threading.local()


def _stack():
    try:
        return _local.stack
    except AttributeError:
        _local.stack = []
        return _local.stack


def active_tape():
    st = _stack()
    return st[-1] if st else None


class Tape:
    """Append-only record of ops; nodes are the recorded Tensors themselves."""

    def __init__(self):
        self.nodes = []
        self.recording = True
        # set while a differentiable backward is running
        self.differentiable = False
        self._level = 0

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def watch(self, value):
        """Register ``value`` as a leaf so gradients can be taken w.r.t. it."""
        t = Tensor(value)
        t.tape = self
        t.index = len(self.nodes)
        self.nodes.append(t)
        return t

    def _record(self, t):
        t.tape = self
        t.index = len(self.nodes)
        self.nodes.append(t)

    @contextlib.contextmanager
    def paused(self):
        prev = self.recording
        self.recording = False
        try:
            yield self
        finally:
            self.recording = prev

    def replay(self):
        """Re-run every recorded forward from cached parent values.

        Returns True when all outputs are reproduced bit-exactly.
        """
        for node in self.nodes:
            if node.op is None:
                continue
            fwd = _OPS[node.op].forward
            new = fwd(*(p.value for p in node.parents), **node.attrs)
            if not np.array_equal(np.asarray(new), node.value):
                return False
        return True


class Tensor:
    __slots__ = ("value", "op", "parents", "attrs", "tape", "index", "level")
    # make ``ndarray <op> Tensor`` defer to the Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, value, op=None, parents=(), attrs=None):
        if type(value) is not np.ndarray or value.dtype != np.float64:
            value = np.asarray(value, dtype=np.float64)
        self.value = value
        self.op = op
        self.parents = parents
        self.attrs = attrs if attrs is not None else {}
        self.tape = None
        self.index = -1
        self.level = 0

    @property
    def shape(self):
        return self.value.shape

    @property
    def values(self):
        """Row-major flat view of the data."""
        return self.value.reshape(-1)

    @property
    def size(self):
        return self.value.size

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return self.value.shape[0]

    # arithmetic sugar; python scalars go through the cheaper const ops
    def __add__(self, other):
        if _is_number(other):
            return apply("add_const", self, c=float(other))
        return apply("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if _is_number(other):
            return apply("add_const", self, c=-float(other))
        return apply("sub", self, other)

    def __rsub__(self, other):
        if _is_number(other):
            return apply("add_const", apply("neg", self), c=float(other))
        return apply("sub", other, self)

    def __mul__(self, other):
        if _is_number(other):
            return apply("scale", self, c=float(other))
        return apply("mul", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _is_number(other):
            return apply("scale", self, c=1.0 / float(other))
        return apply("div", self, other)

    def __rtruediv__(self, other):
        return apply("div", other, self)

    def __neg__(self):
        return apply("neg", self)

    def __pow__(self, p):
        if p != 2:
            raise UsageError("only squaring is supported")
        return apply("square", self)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    @property
    def T(self):
        return apply("transpose", self)

    def sum(self, axis=None):
        return apply("sum", self, axis=axis)

    def mean(self, axis=None):
        n = self.size if axis is None else self.shape[axis]
        return apply("scale", apply("sum", self, axis=axis), c=1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return apply("reshape", self, shape=tuple(shape))


def _is_number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Op:
    __slots__ = ("name", "forward", "vjp", "np_vjp")

    def __init__(self, name, forward, vjp, np_vjp):
        self.name = name
        self.forward = forward
        self.vjp = vjp
        self.np_vjp = np_vjp


_OPS = {}


def register_op(name, forward, vjp, np_vjp=None):
    """Add an op.

    ``forward(*arrays, **attrs)`` returns an array. ``vjp(out, g, needs,
    *parents, **attrs)`` returns one Tensor (or None) per parent and must be
    built from Tensor ops so it can be recorded. ``np_vjp(out_value, g,
    needs, *parent_values, **attrs)`` is an optional pure-numpy equivalent
    used by plain (non-differentiable) backward passes.
    """
    _OPS[name] = _Op(name, forward, vjp, np_vjp)


_register = register_op


def op_names():
    return sorted(_OPS)


def apply(op, *inputs, **attrs):
    """Evaluate ``op`` on ``inputs`` and record it on the active tape."""
    try:
        spec = _OPS[op]
    except KeyError:
        raise UsageError(f"unknown op {op!r}") from None
    ts = tuple([x if isinstance(x, Tensor) else Tensor(x) for x in inputs])
    value = spec.forward(*[t.value for t in ts], **attrs)
    st = _stack()
    tape = st[-1] if st else None
    if tape is not None and tape.recording:
        level = -1
        for t in ts:
            if t.tape is tape and t.level > level:
                level = t.level
        if level >= 0:
            out = Tensor(value, op, ts, attrs)
            out.level = max(level, tape._level)
            tape._record(out)
            return out
    return Tensor(value)


def backward(output, wrt, differentiable=False):
    """Gradients of the scalar ``output`` w.r.t. each tensor in ``wrt``.

    With ``differentiable=True`` the gradient computation is itself recorded,
    so the returned tensors can be fed into another (first-order) backward.
    """
    if output.size != 1:
        raise UsageError(f"backward needs a scalar output, got shape {output.shape}")
    tape = output.tape
    if tape is None:
        raise UsageError("output is not on a tape")
    wrt = list(wrt)
    for w in wrt:
        if not isinstance(w, Tensor) or w.tape is not tape:
            raise UsageError("gradient requested for a tensor that is not on the output's tape")
    if differentiable and output.level >= 1:
        raise UsageError("only one level of nested differentiation is supported")
    if not wrt:
        return []
    lo = min(w.index for w in wrt)
    prev = (tape.recording, tape.differentiable, tape._level)
    tape.recording = differentiable
    tape.differentiable = differentiable
    tape._level = 1
    with tape:
        try:
            if differentiable:
                grads = _sweep_recorded(tape, output, lo)
            else:
                grads = _sweep_numpy(tape, output, lo)
        finally:
            tape.recording, tape.differentiable, tape._level = prev
    out = []
    for w in wrt:
        g = grads.get(w.index)
        if g is None:
            g = np.zeros_like(w.value)
        out.append(g if isinstance(g, Tensor) else Tensor(g))
    return out


def _needs(node, tape, lo, i):
    return tuple([p.tape is tape and lo <= p.index < i for p in node.parents])


def _sweep_recorded(tape, output, lo):
    nodes = tape.nodes
    grads = {output.index: Tensor(np.ones_like(output.value))}
    for i in range(output.index, lo - 1, -1):
        g = grads.get(i)
        if g is None:
            continue
        node = nodes[i]
        if node.op is None:
            continue
        needs = _needs(node, tape, lo, i)
        if not any(needs):
            continue
        pgs = _OPS[node.op].vjp(node, g, needs, *node.parents, **node.attrs)
        for p, pg, need in zip(node.parents, pgs, needs):
            if need and pg is not None:
                acc = grads.get(p.index)
                grads[p.index] = pg if acc is None else apply("add", acc, pg)
    return grads


def _sweep_numpy(tape, output, lo):
    nodes = tape.nodes
    grads = {output.index: np.ones_like(output.value)}
    for i in range(output.index, lo - 1, -1):
        g = grads.get(i)
        if g is None:
            continue
        node = nodes[i]
        if node.op is None:
            continue
        needs = _needs(node, tape, lo, i)
        if not any(needs):
            continue
        spec = _OPS[node.op]
        if spec.np_vjp is not None:
            pgs = spec.np_vjp(node.value, g, needs, *[p.value for p in node.parents], **node.attrs)
        else:
            pgs = spec.vjp(node, Tensor(g), needs, *node.parents, **node.attrs)
            pgs = [None if pg is None else pg.value for pg in pgs]
        for p, pg, need in zip(node.parents, pgs, needs):
            if need and pg is not None:
                acc = grads.get(p.index)
                grads[p.index] = pg if acc is None else acc + pg
    return grads


def grad(fn, x, differentiable=False):
    """Convenience: value and gradient of a scalar function of one array."""
    with Tape() as tape:
        xt = tape.watch(x)
        y = fn(xt)
    (g,) = backward(y, [xt], differentiable=differentiable)
    return y.value, g.value


def finite_diff_check(fn, point, h=1e-5):
    """Max relative error between tape gradient and central differences.

    ``fn`` maps a Tensor to a scalar Tensor. Each component's error is
    divided by ``max(|analytic|, 1e-6 * max(1, max|analytic|))``, so a
    gradient that is exactly zero is compared in absolute terms rather than
    as roundoff over roundoff. Returns ``inf`` when either side is not finite.
    """
    x0 = np.array(point, dtype=np.float64)
    _, analytic = grad(fn, x0)
    numeric = np.empty_like(x0)
    for idx in np.ndindex(x0.shape):
        xp = x0.copy()
        xp[idx] += h
        xm = x0.copy()
        xm[idx] -= h
        with Tape():  # fn may need a tape of its own (e.g. a gradient penalty)
            fp = fn(Tensor(xp)).item()
            fm = fn(Tensor(xm)).item()
        numeric[idx] = (fp - fm) / (2.0 * h)
    if x0.size == 0:
        return 0.0
    with np.errstate(invalid="ignore"):
        floor = 1e-6 * max(1.0, float(np.max(np.abs(analytic))))
        err = np.abs(analytic - numeric) / np.maximum(np.abs(analytic), floor)
    if not np.all(np.isfinite(err)):
        return math.inf
    return float(err.max())


# ---------------------------------------------------------------------------
# op table
#
# Each op carries two equivalent gradient rules: ``vjp`` in Tensor ops (used
# when the backward pass itself must be differentiable) and ``np_vjp`` in
# plain numpy (the fast first-order path).


def _same_or_scalar(a, b, name):
    if a.shape != b.shape and a.ndim and b.ndim:
        raise ConfigurationError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return apply("sum", g)


def _unb(g, shape):
    return g if g.shape == shape else np.sum(g)


def _bin(name, fn):
    def forward(a, b):
        _same_or_scalar(a, b, name)
        return fn(a, b)

    return forward


def _div_forward(a, b):
    _same_or_scalar(a, b, "div")
    if np.any(b == 0):
        raise DomainError("division by zero")
    return a / b


_register(
    "add", _bin("add", np.add),
    lambda out, g, needs, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    lambda out, g, needs, a, b: (_unb(g, a.shape), _unb(g, b.shape)),
)
_register(
    "sub", _bin("sub", np.subtract),
    lambda out, g, needs, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape) if needs[1] else None),
    lambda out, g, needs, a, b: (_unb(g, a.shape), _unb(-g, b.shape)),
)
_register(
    "mul", _bin("mul", np.multiply),
    lambda out, g, needs, a, b: (
        _unbroadcast(g * b, a.shape) if needs[0] else None,
        _unbroadcast(g * a, b.shape) if needs[1] else None,
    ),
    lambda out, g, needs, a, b: (_unb(g * b, a.shape), _unb(g * a, b.shape)),
)
_register(
    "div", _div_forward,
    lambda out, g, needs, a, b: (
        _unbroadcast(g / b, a.shape) if needs[0] else None,
        _unbroadcast(-(g * out) / b, b.shape) if needs[1] else None,
    ),
    lambda out, g, needs, a, b: (_unb(g / b, a.shape), _unb(-g * out / b, b.shape)),
)
_register("neg", np.negative, lambda out, g, needs, a: (-g,), lambda out, g, needs, a: (-g,))
_register(
    "scale", lambda a, c: a * c,
    lambda out, g, needs, a, c: (apply("scale", g, c=c),),
    lambda out, g, needs, a, c: (g * c,),
)
_register(
    "add_const", lambda a, c: a + c,
    lambda out, g, needs, a, c: (g,),
    lambda out, g, needs, a, c: (g,),
)
_register(
    "mul_const", lambda a, c: a * c,
    lambda out, g, needs, a, c: (apply("mul_const", g, c=c),),
    lambda out, g, needs, a, c: (g * c,),
)


def _log_forward(a):
    if np.any(a <= 0):
        raise DomainError("log of a non-positive value")
    return np.log(a)


def _sqrt_forward(a):
    if np.any(a < 0):
        raise DomainError("sqrt of a negative value")
    return np.sqrt(a)


def _sigmoid(a):
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(a):
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def _leaky_forward(a, slope):
    # valid for 0 <= slope <= 1
    return np.maximum(a, a * slope)


def _leaky_mask(a, slope):
    return (a > 0) * (1.0 - slope) + slope


_register(
    "exp", np.exp,
    lambda out, g, needs, a: (g * out,),
    lambda out, g, needs, a: (g * out,),
)
_register(
    "log", _log_forward,
    lambda out, g, needs, a: (g / a,),
    lambda out, g, needs, a: (g / a,),
)
_register(
    "sin", np.sin,
    lambda out, g, needs, a: (g * apply("cos", a),),
    lambda out, g, needs, a: (g * np.cos(a),),
)
_register(
    "cos", np.cos,
    lambda out, g, needs, a: (-(g * apply("sin", a)),),
    lambda out, g, needs, a: (-g * np.sin(a),),
)
_register(
    "tanh", np.tanh,
    lambda out, g, needs, a: (g * (1.0 - out * out),),
    lambda out, g, needs, a: (g * (1.0 - out * out),),
)
_register(
    "sigmoid", _sigmoid,
    lambda out, g, needs, a: (g * (out * (1.0 - out)),),
    lambda out, g, needs, a: (g * out * (1.0 - out),),
)
_register(
    "softplus", _softplus,
    lambda out, g, needs, a: (g * apply("sigmoid", a),),
    lambda out, g, needs, a: (g * _sigmoid(a),),
)
# second derivative of leaky-relu is 0 a.e.; its mask enters as a constant
_register(
    "leaky_relu", _leaky_forward,
    lambda out, g, needs, a, slope: (apply("mul_const", g, c=_leaky_mask(a.value, slope)),),
    lambda out, g, needs, a, slope: (g * _leaky_mask(a, slope),),
)
_register(
    "square", np.square,
    lambda out, g, needs, a: ((g * a) * 2.0,),
    lambda out, g, needs, a: (2.0 * g * a,),
)
_register(
    "sqrt", _sqrt_forward,
    lambda out, g, needs, a: ((g / out) * 0.5,),
    lambda out, g, needs, a: (0.5 * g / out,),
)


def _matmul_forward(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ConfigurationError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _affine_forward(x, w, b):
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ConfigurationError(f"affine: input {x.shape} does not fit weight {w.shape}")
    if b.shape != (w.shape[1],):
        raise ConfigurationError(f"affine: bias {b.shape} does not fit weight {w.shape}")
    return x @ w + b


def _transpose_forward(a):
    if a.ndim != 2:
        raise ConfigurationError(f"transpose needs a matrix, got {a.shape}")
    return a.T


_register(
    "matmul", _matmul_forward,
    lambda out, g, needs, a, b: (
        apply("matmul", g, apply("transpose", b)) if needs[0] else None,
        apply("matmul", apply("transpose", a), g) if needs[1] else None,
    ),
    lambda out, g, needs, a, b: (g @ b.T if needs[0] else None, a.T @ g if needs[1] else None),
)
_register(
    "transpose", _transpose_forward,
    lambda out, g, needs, a: (apply("transpose", g),),
    lambda out, g, needs, a: (g.T,),
)
_register(
    "affine", _affine_forward,
    lambda out, g, needs, x, w, b: (
        apply("matmul", g, apply("transpose", w)) if needs[0] else None,
        apply("matmul", apply("transpose", x), g) if needs[1] else None,
        apply("sum", g, axis=0) if needs[2] else None,
    ),
    lambda out, g, needs, x, w, b: (
        g @ w.T if needs[0] else None,
        x.T @ g if needs[1] else None,
        g.sum(axis=0) if needs[2] else None,
    ),
)


def _keepdims_shape(shape, axis):
    if axis is None:
        return tuple(1 for _ in shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = {ax % len(shape) for ax in axes}
    return tuple(1 if i in axes else n for i, n in enumerate(shape))


def _broadcast_forward(a, shape):
    if a.shape == tuple(shape):
        return a.copy()
    return np.broadcast_to(a, shape).copy()


def _broadcast_axes(a_shape, shape):
    lead = len(shape) - len(a_shape)
    return tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(a_shape) if n == 1 and shape[lead + i] != 1
    )


def _broadcast_vjp(out, g, needs, a, shape):
    axes = _broadcast_axes(a.shape, shape)
    if axes:
        g = apply("sum", g, axis=axes)
    return (apply("reshape", g, shape=a.shape),)


def _reshape_forward(a, shape):
    try:
        return a.reshape(shape)
    except ValueError:
        raise ConfigurationError(f"cannot reshape {a.shape} to {shape}") from None


_register(
    "sum", lambda a, axis=None: np.sum(a, axis=axis),
    lambda out, g, needs, a, axis=None: (
        apply("broadcast_to", apply("reshape", g, shape=_keepdims_shape(a.shape, axis)), shape=a.shape),
    ),
    lambda out, g, needs, a, axis=None: (
        np.broadcast_to(np.reshape(g, _keepdims_shape(a.shape, axis)), a.shape),
    ),
)
_register(
    "broadcast_to", _broadcast_forward, _broadcast_vjp,
    lambda out, g, needs, a, shape: (np.sum(g, axis=_broadcast_axes(a.shape, shape)).reshape(a.shape),),
)
_register(
    "reshape", _reshape_forward,
    lambda out, g, needs, a, shape: (apply("reshape", g, shape=a.shape),),
    lambda out, g, needs, a, shape: (np.reshape(g, a.shape),),
)


def _l2norm_forward(a, axis=None):
    return np.sqrt(np.sum(a * a, axis=axis))


def _l2norm_vjp(out, g, needs, a, axis=None):
    # d||a|| = a/||a||; defined as 0 where the norm vanishes
    safe = apply("add_const", out, c=(out.value == 0).astype(np.float64))
    q = apply("reshape", g / safe, shape=_keepdims_shape(a.shape, axis))
    return (a * apply("broadcast_to", q, shape=a.shape),)


def _l2norm_np_vjp(out, g, needs, a, axis=None):
    safe = out + (out == 0)
    return (a * np.reshape(g / safe, _keepdims_shape(a.shape, axis)),)


_register("l2norm", _l2norm_forward, _l2norm_vjp, _l2norm_np_vjp)


def _sn_forward(w, uv, k):
    # uv = outer(u, v) with unit u, v held constant; sigma = <W, uv>
    return w * (k / np.sum(w * uv))


def _sn_vjp(out, g, needs, w, uv, k):
    # d(kW/s) with s = <W, uv>:  (k/s) g - (k/s^2) <g, W> uv
    s = apply("sum", apply("mul_const", w, c=uv))
    inner = apply("sum", g * w)
    coef = apply("broadcast_to", inner * k / (s * s), shape=w.shape)
    return (g * (k / s) - apply("mul_const", coef, c=uv),)


def _sn_np_vjp(out, g, needs, w, uv, k):
    s = np.sum(w * uv)
    return ((k / s) * g - (k / (s * s)) * np.sum(g * w) * uv,)


_register("sn_scale", _sn_forward, _sn_vjp, _sn_np_vjp)


def _concat_forward(*arrays):
    tails = {a.shape[1:] for a in arrays}
    if len(tails) != 1:
        raise ConfigurationError("concat: trailing shapes differ")
    return np.concatenate(arrays, axis=0)


def _concat_vjp(out, g, needs, *parts):
    res, start = [], 0
    for p, need in zip(parts, needs):
        stop = start + p.shape[0]
        res.append(apply("rows", g, start=start, stop=stop) if need else None)
        start = stop
    return tuple(res)


def _concat_np_vjp(out, g, needs, *parts):
    res, start = [], 0
    for p in parts:
        stop = start + p.shape[0]
        res.append(g[start:stop])
        start = stop
    return tuple(res)


def _pad_rows_forward(a, start, total):
    z = np.zeros((total,) + a.shape[1:])
    z[start:start + a.shape[0]] = a
    return z


_register("concat", _concat_forward, _concat_vjp, _concat_np_vjp)
_register(
    "rows", lambda a, start, stop: a[start:stop].copy(),
    lambda out, g, needs, a, start, stop: (apply("pad_rows", g, start=start, total=a.shape[0]),),
    lambda out, g, needs, a, start, stop: (_pad_rows_forward(g, start, a.shape[0]),),
)
_register(
    "pad_rows", _pad_rows_forward,
    lambda out, g, needs, a, start, total: (apply("rows", g, start=start, stop=start + a.shape[0]),),
    lambda out, g, needs, a, start, total: (g[start:start + a.shape[0]],),
)


# ---------------------------------------------------------------------------
# functional front end


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def div(a, b):
    return apply("div", a, b)


def neg(a):
    return apply("neg", a)


def scale(a, c):
    return apply("scale", a, c=float(c))


def exp(a):
    return apply("exp", a)


def log(a):
    return apply("log", a)


def sin(a):
    return apply("sin", a)


def cos(a):
    return apply("cos", a)


def tanh(a):
    return apply("tanh", a)


def sigmoid(a):
    return apply("sigmoid", a)


def softplus(a):
    return apply("softplus", a)


def leaky_relu(a, slope=0.2):
    return apply("leaky_relu", a, slope=float(slope))


def relu(a):
    return apply("leaky_relu", a, slope=0.0)


def square(a):
    return apply("square", a)


def sqrt(a):
    return apply("sqrt", a)


def matmul(a, b):
    return apply("matmul", a, b)


def transpose(a):
    return apply("transpose", a)


def affine(x, w, b):
    return apply("affine", x, w, b)


def reduce_sum(a, axis=None):
    return apply("sum", a, axis=axis)


def mean(a, axis=None):
    return as_tensor(a).mean(axis)


def l2norm(a, axis=None):
    return apply("l2norm", a, axis=axis)


def concat(tensors):
    return apply("concat", *tensors)


def rows(a, start, stop):
    return apply("rows", a, start=start, stop=stop)


def reshape(a, shape):
    return apply("reshape", a, shape=tuple(shape))
