"""Minimal reverse-mode autodiff over float64 numpy arrays.

The networks trained in this package are tiny and fixed-shape, so the
primitive set is closed on purpose: affine arithmetic, exp/log/softplus,
hard max/min with subgradients routed to the first attaining index, row
softmax, and a handful of shape ops. Ops accept plain ndarrays (or scalars)
as constants; gradients flow only through ``Var`` operands. When no operand
is a ``Var`` an op returns a plain ndarray, so the same graph-builder code
doubles as a fast evaluation path.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, NumericError

__all__ = [
    "ParamVector",
    "Tape",
    "Var",
    "gradient",
    "mlp_forward",
    "add",
    "sub",
    "mul",
    "neg",
    "exp",
    "log",
    "absolute",
    "softplus",
    "amax",
    "amin",
    "maximum",
    "minimum",
    "vsum",
    "vmean",
    "softmax",
    "stack",
    "concat",
    "narrow",
    "take",
    "reshape",
]


# ---------------------------------------------------------------------------
# Parameter vectors
# ---------------------------------------------------------------------------


class ParamVector:
    """Immutable flat float64 vector carved into named, shaped segments.

    Segment order and shapes are fixed at construction; `with_values`
    produces a sibling vector with the same layout. All entries must be
    finite.
    """

    __slots__ = ("_values", "_layout", "_offsets")

    def __init__(self, values, layout):
        values = np.array(values, dtype=np.float64).reshape(-1)
        layout = tuple((str(n), tuple(int(d) for d in shape)) for n, shape in layout)
        total = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in layout)
        if values.size != total:
            raise ConfigError(
                f"parameter vector has {values.size} entries, layout needs {total}"
            )
        names = [n for n, _ in layout]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate segment names in layout: {names}")
        if not np.isfinite(values).all():
            raise NumericError("parameter vector contains non-finite entries")
        values.setflags(write=False)
        offsets = {}
        pos = 0
        for name, shape in layout:
            size = int(np.prod(shape, dtype=np.int64))
            offsets[name] = (pos, shape)
            pos += size
        self._values = values
        self._layout = layout
        self._offsets = offsets

    @classmethod
    def from_segments(cls, named_arrays):
        """Build from an iterable of (name, array) pairs, row-major order."""
        named = [(name, np.asarray(a, dtype=np.float64)) for name, a in named_arrays]
        layout = [(name, a.shape) for name, a in named]
        if named:
            flat = np.concatenate([a.reshape(-1) for _, a in named])
        else:
            flat = np.zeros(0)
        return cls(flat, layout)

    @property
    def values(self):
        return self._values

    @property
    def layout(self):
        return self._layout

    @property
    def names(self):
        return [n for n, _ in self._layout]

    @property
    def size(self):
        return self._values.size

    def segment(self, name):
        """Read-only view of one named segment, reshaped to its layout shape."""
        if name not in self._offsets:
            raise ConfigError(f"unknown segment {name!r}; have {self.names}")
        pos, shape = self._offsets[name]
        size = int(np.prod(shape, dtype=np.int64))
        return self._values[pos : pos + size].reshape(shape)

    def segments(self):
        return {name: self.segment(name) for name, _ in self._layout}

    def with_values(self, flat):
        """Sibling vector with the same layout and new values."""
        return ParamVector(flat, self._layout)

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self._layout == other._layout and np.array_equal(
            self._values, other._values
        )

    def __hash__(self):
        return hash((self._layout, self._values.tobytes()))

    def __repr__(self):
        segs = ", ".join(f"{n}{list(s)}" for n, s in self._layout)
        return f"ParamVector({segs})"

    # -- text checkpoint format --------------------------------------------

    FORMAT_VERSION = 1

    def to_text(self):
        """Human-readable, bit-exact text serialization."""
        lines = [f"paramvector {self.FORMAT_VERSION}"]
        for name, shape in self._layout:
            dims = " ".join(str(d) for d in shape) if shape else "scalar"
            lines.append(f"segment {name} {dims}")
            flat = self.segment(name).reshape(-1)
            lines.append(" ".join(_format_float(x) for x in flat))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("paramvector "):
            raise ConfigError("not a paramvector checkpoint (missing header)")
        version = lines[0].split()[1]
        if version != str(cls.FORMAT_VERSION):
            raise ConfigError(f"unsupported paramvector format version {version}")
        named = []
        i = 1
        while i < len(lines):
            head = lines[i].split()
            if head[0] != "segment" or len(head) < 3:
                raise ConfigError(f"malformed segment header: {lines[i]!r}")
            name = head[1]
            shape = () if head[2] == "scalar" else tuple(int(d) for d in head[2:])
            if i + 1 >= len(lines):
                raise ConfigError(f"segment {name!r} is missing its values line")
            vals = np.array([float(tok) for tok in lines[i + 1].split()])
            expected = int(np.prod(shape, dtype=np.int64)) if shape else 1
            if vals.size != expected:
                raise ConfigError(
                    f"segment {name!r} expects {expected} values, found {vals.size}"
                )
            named.append((name, vals.reshape(shape)))
            i += 2
        return cls.from_segments(named)


def _format_float(x):
    # repr round-trips float64 exactly and stays readable
    return repr(float(x))


# ---------------------------------------------------------------------------
# Tape and nodes
# ---------------------------------------------------------------------------


class Tape:
    """Single-use record of a forward pass, replayed backwards for gradients.

    Nodes are appended in creation order, which is already a topological
    order, so the backward pass is one reverse sweep. A tape must stay
    confined to one thread and one `backward` call.
    """

    __slots__ = ("nodes", "_used")

    def __init__(self):
        self.nodes = []
        self._used = False

    def leaf(self, value):
        """Register a differentiable input."""
        return Var(np.asarray(value, dtype=np.float64), self, (), "leaf")

    def backward(self, loss):
        """Accumulate d(loss)/d(node) into `.grad` of every reachable node."""
        if self._used:
            raise ConfigError("tape already replayed; tapes are single-use")
        self._used = True
        if not isinstance(loss, Var) or loss.tape is not self:
            raise ConfigError("loss must be a Var recorded on this tape")
        if loss.value.size != 1:
            raise ConfigError(f"loss must be scalar, got shape {loss.value.shape}")
        if not np.isfinite(loss.value):
            self._raise_nonfinite()
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            for parent, vjp in node.vjps:
                g = vjp(node.grad)
                # rebinding only, never in-place: aliased views stay safe
                parent.grad = g if parent.grad is None else parent.grad + g

    def _raise_nonfinite(self):
        for i, node in enumerate(self.nodes):
            if not np.isfinite(node.value).all():
                raise NumericError(
                    f"non-finite value at node {i} (op {node.op!r})"
                )
        raise NumericError("non-finite loss value")


class Var:
    """One recorded node: a value plus vector-Jacobian products to parents."""

    __slots__ = ("value", "grad", "tape", "vjps", "op")

    def __init__(self, value, tape, vjps, op):
        self.value = value
        self.grad = None
        self.tape = tape
        self.vjps = vjps
        self.op = op
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op!r}, shape={self.value.shape})"


def _val(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = _val(a), _val(b)
    tape = _tape_of(a, b)
    out = av + bv
    if tape is None:
        return out
    vjps = []
    if isinstance(a, Var):
        vjps.append((a, lambda g, s=av.shape: _unbroadcast(g, s)))
    if isinstance(b, Var):
        vjps.append((b, lambda g, s=bv.shape: _unbroadcast(g, s)))
    return Var(out, tape, tuple(vjps), "add")


def sub(a, b):
    av, bv = _val(a), _val(b)
    tape = _tape_of(a, b)
    out = av - bv
    if tape is None:
        return out
    vjps = []
    if isinstance(a, Var):
        vjps.append((a, lambda g, s=av.shape: _unbroadcast(g, s)))
    if isinstance(b, Var):
        vjps.append((b, lambda g, s=bv.shape: _unbroadcast(-g, s)))
    return Var(out, tape, tuple(vjps), "sub")


def mul(a, b):
    av, bv = _val(a), _val(b)
    tape = _tape_of(a, b)
    out = av * bv
    if tape is None:
        return out
    vjps = []
    if isinstance(a, Var):
        vjps.append((a, lambda g, o=bv, s=av.shape: _unbroadcast(g * o, s)))
    if isinstance(b, Var):
        vjps.append((b, lambda g, o=av, s=bv.shape: _unbroadcast(g * o, s)))
    return Var(out, tape, tuple(vjps), "mul")


def neg(a):
    if not isinstance(a, Var):
        return -_val(a)
    return Var(-a.value, a.tape, ((a, lambda g: -g),), "neg")


def exp(a):
    av = _val(a)
    out = np.exp(av)
    if not isinstance(a, Var):
        return out
    return Var(out, a.tape, ((a, lambda g, o=out: g * o),), "exp")


def log(a):
    av = _val(a)
    out = np.log(av)
    if not isinstance(a, Var):
        return out
    return Var(out, a.tape, ((a, lambda g, v=av: g / v),), "log")


def absolute(a):
    av = _val(a)
    out = np.abs(av)
    if not isinstance(a, Var):
        return out
    sign = np.sign(av)
    return Var(out, a.tape, ((a, lambda g, s=sign: g * s),), "abs")


def _softplus_value(x):
    # log(1 + e^x), stable for large |x|
    return np.logaddexp(0.0, x)


def softplus(a):
    av = _val(a)
    out = _softplus_value(av)
    if not isinstance(a, Var):
        return out
    sig = 1.0 / (1.0 + np.exp(-av))
    return Var(out, a.tape, ((a, lambda g, s=sig: g * s),), "softplus")


def amax(a, axis, keepdims=False):
    """Hard max along an axis; subgradient routes to the first attaining index."""
    return _reduce_extreme(a, axis, keepdims, np.max, np.argmax, "amax")


def amin(a, axis, keepdims=False):
    """Hard min along an axis; subgradient routes to the first attaining index."""
    return _reduce_extreme(a, axis, keepdims, np.min, np.argmin, "amin")


def _reduce_extreme(a, axis, keepdims, reducer, arg_reducer, name):
    av = _val(a)
    out = reducer(av, axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out
    idx = arg_reducer(av, axis=axis)

    def vjp(g, av=av, idx=idx, axis=axis, keepdims=keepdims):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(av)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        return full

    return Var(out, a.tape, ((a, vjp),), name)


def maximum(a, b):
    """Elementwise hard max; ties route the gradient to the first argument."""
    return _binary_extreme(a, b, np.maximum, lambda av, bv: av >= bv, "maximum")


def minimum(a, b):
    """Elementwise hard min; ties route the gradient to the first argument."""
    return _binary_extreme(a, b, np.minimum, lambda av, bv: av <= bv, "minimum")


def _binary_extreme(a, b, reducer, first_wins, name):
    av, bv = _val(a), _val(b)
    tape = _tape_of(a, b)
    out = reducer(av, bv)
    if tape is None:
        return out
    mask = first_wins(av, bv)
    vjps = []
    if isinstance(a, Var):
        vjps.append((a, lambda g, m=mask, s=av.shape: _unbroadcast(g * m, s)))
    if isinstance(b, Var):
        vjps.append((b, lambda g, m=~mask, s=bv.shape: _unbroadcast(g * m, s)))
    return Var(out, tape, tuple(vjps), name)


def vsum(a, axis=None, keepdims=False):
    av = _val(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out

    def vjp(g, shape=av.shape, axis=axis, keepdims=keepdims):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return Var(out, a.tape, ((a, vjp),), "sum")


def vmean(a, axis=None, keepdims=False):
    av = _val(a)
    out = np.mean(av, axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out
    if axis is None:
        count = av.size
    else:
        count = av.shape[axis]

    def vjp(g, shape=av.shape, axis=axis, keepdims=keepdims, count=count):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / count, shape)

    return Var(out, a.tape, ((a, vjp),), "mean")


def softmax(a, axis=-1):
    """Row-stochastic softmax along `axis`, numerically stabilized."""
    av = _val(a)
    shifted = av - np.max(av, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)
    if not isinstance(a, Var):
        return out

    def vjp(g, p=out, axis=axis):
        inner = np.sum(g * p, axis=axis, keepdims=True)
        return p * (g - inner)

    return Var(out, a.tape, ((a, vjp),), "softmax")


def stack(parts, axis=0):
    """Stack Vars/arrays along a new axis; backward slices the gradient."""
    vals = [_val(p) for p in parts]
    tape = _tape_of(*parts)
    out = np.stack(vals, axis=axis)
    if tape is None:
        return out
    vjps = []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            vjps.append((p, lambda g, i=i, axis=axis: np.take(g, i, axis=axis)))
    return Var(out, tape, tuple(vjps), "stack")


def concat(parts, axis=-1):
    """Concatenate Vars/arrays along an existing axis; backward slices."""
    vals = [_val(p) for p in parts]
    tape = _tape_of(*parts)
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    vjps = []
    offset = 0
    for p, v in zip(parts, vals):
        width = v.shape[axis]
        if isinstance(p, Var):
            def vjp(g, start=offset, width=width, axis=axis):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(start, start + width)
                return g[tuple(sl)]

            vjps.append((p, vjp))
        offset += width
    return Var(out, tape, tuple(vjps), "concat")


def narrow(a, axis, start, length):
    """Slice [start, start+length) along one axis; backward zero-pads."""
    av = _val(a)
    sl = [slice(None)] * av.ndim
    sl[axis] = slice(start, start + length)
    out = av[tuple(sl)]
    if not isinstance(a, Var):
        return out

    def vjp(g, shape=av.shape, sl=tuple(sl)):
        full = np.zeros(shape)
        full[sl] = g
        return full

    return Var(out, a.tape, ((a, vjp),), "narrow")


def take(a, index, axis):
    """Select one integer index along an axis; backward scatters."""
    av = _val(a)
    out = np.take(av, index, axis=axis)
    if not isinstance(a, Var):
        return out

    def vjp(g, shape=av.shape, index=index, axis=axis):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return full

    return Var(out, a.tape, ((a, vjp),), "take")


def reshape(a, shape):
    av = _val(a)
    out = av.reshape(shape)
    if not isinstance(a, Var):
        return out
    return Var(out, a.tape, ((a, lambda g, s=av.shape: g.reshape(s)),), "reshape")


# ---------------------------------------------------------------------------
# Convenience entry points
# ---------------------------------------------------------------------------


def gradient(params, loss_fn):
    """Gradient of a scalar loss with respect to every parameter entry.

    `loss_fn` receives a dict mapping segment names to leaf Vars and must
    return a scalar Var built from this module's primitives. The result is a
    ParamVector with the same layout holding d(loss)/d(parameter).
    """
    tape = Tape()
    leaves = {name: tape.leaf(params.segment(name)) for name in params.names}
    loss = loss_fn(leaves)
    tape.backward(loss)
    grads = []
    for name in params.names:
        leaf = leaves[name]
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        grads.append(np.asarray(g).reshape(-1))
    flat = np.concatenate(grads) if grads else np.zeros(0)
    if not np.isfinite(flat).all():
        raise NumericError("non-finite gradient entries")
    return params.with_values(flat)


def mlp_forward(params, x, hidden_activation=softplus):
    """Feedforward evaluation of a small dense net.

    Expects segments named w0, b0, w1, b1, ... where w_i has shape
    (fan_out, fan_in). The hidden activation is applied between layers and
    the last layer stays linear. Works on ParamVector input (plain forward)
    or on a dict of Vars (differentiable forward).
    """
    segs = params.segments() if isinstance(params, ParamVector) else dict(params)
    n_layers = 0
    while f"w{n_layers}" in segs:
        if f"b{n_layers}" not in segs:
            raise ConfigError(f"layer {n_layers} has weights but no bias segment")
        n_layers += 1
    if n_layers == 0:
        raise ConfigError("no layer segments (w0, b0, ...) found")
    h = np.asarray(x, dtype=np.float64)
    for i in range(n_layers):
        w, b = segs[f"w{i}"], segs[f"b{i}"]
        wv = _val(w)
        if wv.ndim != 2 or wv.shape[1] != np.shape(_val(h))[-1]:
            raise ConfigError(
                f"layer {i} weight shape {wv.shape} does not match input width "
                f"{np.shape(_val(h))[-1]}"
            )
        # h @ w.T + b via broadcasting: (.., 1, in) * (out, in) summed over in
        hx = reshape(h, (*np.shape(_val(h))[:-1], 1, wv.shape[1]))
        z = add(vsum(mul(hx, w), axis=-1), b)
        h = hidden_activation(z) if i < n_layers - 1 else z
    return h
