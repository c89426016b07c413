"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tape`` records operations in append
order, ``backward`` walks the list once in reverse, and gradients
accumulate additively on every tensor with ``requires_grad`` set.  Feature
maps are channels-first (C, H, W); convolution weights are (F, C, kH, kW).

A tape together with the tensors recorded on it is a single-threaded unit
of work.  Independent tapes (one per sample, say) can live on different
threads; the active-tape stack is thread-local and there is no shared
mutable state between tapes.  A recorded tape holds references to the
parameter buffers it saw, so run ``backward`` before mutating parameters.
"""
import math
import threading

import numpy as np

from .errors import DimensionError, NumericError, ParameterError, UsageError
from .kernels import backend as _K

_ACTIVE = threading.local()


def _tape_stack():
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class _Node:
    __slots__ = ("parents", "grad_fn", "leaf")

    def __init__(self, parents, grad_fn, leaf=None):
        self.parents = parents
        self.grad_fn = grad_fn
        self.leaf = leaf


class Tape:
    """Append-only operation record; reverse traversal yields gradients."""

    def __init__(self):
        self.nodes = []
        self.last_visit_count = 0

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def _add(self, parents, grad_fn, leaf=None):
        self.nodes.append(_Node(parents, grad_fn, leaf))
        return len(self.nodes) - 1


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape", "tape_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.tape = None
        self.tape_id = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise UsageError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.data.shape)}{flag})"


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def _track(t, tape):
    """Node id of t on tape; registers a leaf for gradient targets.  -1 if inert."""
    if t.tape is tape and t.tape_id is not None:
        return t.tape_id
    if t.requires_grad:
        nid = tape._add((), None, leaf=t)
        t.tape = tape
        t.tape_id = nid
        return nid
    return -1


def _record(out_data, parents, grad_fn):
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = False
    out.grad = None
    out.tape = None
    out.tape_id = None
    tape = active_tape()
    if tape is not None:
        pids = tuple(_track(p, tape) for p in parents)
        if any(pid >= 0 for pid in pids):
            out.tape = tape
            out.tape_id = tape._add(pids, grad_fn)
    return out


def backward(loss):
    """Accumulate d loss / d t into t.grad for every tracked tensor.

    Grads add up across calls; zero them explicitly between steps.  The
    traversal touches each tape node exactly once, newest first.
    """
    if loss.data.size != 1:
        raise UsageError("backward needs a scalar loss")
    tape = loss.tape
    if tape is None or loss.tape_id is None:
        raise UsageError("loss was not recorded on a tape")
    flows = {loss.tape_id: np.ones_like(loss.data)}
    nodes = tape.nodes
    visits = 0
    for nid in range(len(nodes) - 1, -1, -1):
        visits += 1
        g = flows.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        if node.leaf is not None:
            leaf = node.leaf
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            leaf.grad += g
            continue
        pgrads = node.grad_fn(g)
        for pid, pg in zip(node.parents, pgrads):
            if pid < 0 or pg is None:
                continue
            held = flows.get(pid)
            # addition allocates a fresh buffer so grad_fn outputs may alias g
            flows[pid] = pg if held is None else held + pg
    tape.last_visit_count = visits


def _as_chw(t, opname):
    if t.data.ndim != 3:
        raise DimensionError(f"{opname} expects a (C,H,W) tensor, got shape {tuple(t.shape)}")
    return t.data.shape


def _pad_pair(padding):
    if isinstance(padding, tuple):
        ph, pw = padding
    else:
        ph = pw = padding
    if ph < 0 or pw < 0:
        raise ParameterError("padding must be non-negative")
    return int(ph), int(pw)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    Output height is (H + 2*pad - kH) // stride + 1, same for width.
    Differentiable in the input, the weight, and the optional (F,) bias.
    """
    _as_chw(x, "conv2d")
    if weight.data.ndim != 4:
        raise DimensionError("conv2d weight must be (F,C,kH,kW)")
    f, cin, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ParameterError("conv2d kernel sides must be odd")
    if stride < 1:
        raise ParameterError("stride must be a positive integer")
    if x.shape[0] != cin:
        raise DimensionError(
            f"conv2d input has {x.shape[0]} channels, weight expects {cin}")
    ph, pw = _pad_pair(padding)
    c, h, w = x.shape
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise DimensionError("conv2d input too small for kernel and padding")
    if bias is not None and bias.shape != (f,):
        raise DimensionError("conv2d bias must have shape (F,)")

    out, saved = _K.conv2d_forward(x.data, weight.data, stride, ph, pw)
    if bias is not None:
        out += bias.data.reshape(f, 1, 1)
    x_shape, w_data = x.shape, weight.data

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        gx, gw = _K.conv2d_backward(g, saved, w_data, x_shape, stride, ph, pw)
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, parents, grad_fn)


def depthwise_conv2d(x, kernel):
    """Correlate every channel with one fixed (K,K) kernel, zero 'same' padding.

    The kernel is a plain array, not a tensor; only the input gets a gradient.
    """
    _as_chw(x, "depthwise_conv2d")
    k = np.ascontiguousarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise ParameterError("depthwise kernel must be square with odd side")
    out = _K.depthwise_forward(x.data, k)

    def grad_fn(g):
        return (_K.depthwise_backward(np.ascontiguousarray(g), k),)

    return _record(out, (x,), grad_fn)


def upsample_bilinear(x, scale):
    """Bilinear upsampling by an integer factor.

    Half-pixel-center convention: source coordinate = (dst+0.5)/scale - 0.5,
    clamped to the valid range, so constants are preserved exactly.
    """
    _as_chw(x, "upsample_bilinear")
    if not isinstance(scale, int) or scale < 1:
        raise ParameterError("scale must be a positive integer")
    c, h, w = x.shape
    out = _K.upsample_forward(x.data, scale)

    def grad_fn(g):
        return (_K.upsample_backward(np.ascontiguousarray(g), h, w, scale),)

    return _record(out, (x,), grad_fn)


def concat_channels(a, b):
    _as_chw(a, "concat_channels")
    _as_chw(b, "concat_channels")
    if a.shape[1:] != b.shape[1:]:
        raise DimensionError(
            f"concat_channels spatial mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    c1 = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)

    def grad_fn(g):
        return (np.ascontiguousarray(g[:c1]), np.ascontiguousarray(g[c1:]))

    return _record(out, (a, b), grad_fn)


def expand_channels(x, channels):
    """Repeat a single-channel map across ``channels`` channels."""
    _as_chw(x, "expand_channels")
    if x.shape[0] != 1:
        raise DimensionError("expand_channels needs a (1,H,W) input")
    if channels < 1:
        raise ParameterError("channels must be positive")
    out = np.repeat(x.data, channels, axis=0)

    def grad_fn(g):
        return (g.sum(axis=0, keepdims=True),)

    return _record(out, (x,), grad_fn)


# ---------------------------------------------------------------------------
# pointwise ops

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    out = _sigmoid(x.data)

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _record(out, (x,), grad_fn)


def relu(x):
    out = np.maximum(x.data, 0.0)
    mask = x.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _record(out, (x,), grad_fn)


def elu(x):
    neg = x.data <= 0
    out = x.data.copy()
    np.expm1(x.data, where=neg, out=out)

    def grad_fn(g):
        return (g * np.where(neg, out + 1.0, 1.0),)

    return _record(out, (x,), grad_fn)


def softplus(x):
    out = np.logaddexp(0.0, x.data)
    xd = x.data

    def grad_fn(g):
        return (g * _sigmoid(xd),)

    return _record(out, (x,), grad_fn)


def absolute(x):
    out = np.abs(x.data)
    sgn = np.sign(x.data)

    def grad_fn(g):
        return (g * sgn,)

    return _record(out, (x,), grad_fn)


def _vec_view(shape):
    # per-channel vectors may be stored as (C,) or (C,1,1)
    return len(shape) == 1 or (len(shape) == 3 and shape[1] == 1 and shape[2] == 1)


def _binary_layout(sa, sb, opname):
    if tuple(sa) == tuple(sb):
        return "equal"
    if len(sa) == 3 and _vec_view(sb) and sb[0] == sa[0]:
        return "b_vec"
    if len(sb) == 3 and _vec_view(sa) and sa[0] == sb[0]:
        return "a_vec"
    raise DimensionError(
        f"{opname}: shapes {tuple(sa)} and {tuple(sb)} are neither equal nor "
        "a per-channel vector against a (C,H,W) map")


def _as_tensor(v):
    return v if isinstance(v, Tensor) else Tensor(v)


def _reduce_to_vec(g, stored_shape):
    return g.sum(axis=(1, 2)).reshape(stored_shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    layout = _binary_layout(a.shape, b.shape, "add")
    bd = b.data.reshape(b.shape[0], 1, 1) if layout == "b_vec" else b.data
    ad = a.data.reshape(a.shape[0], 1, 1) if layout == "a_vec" else a.data
    out = ad + bd
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        ga = _reduce_to_vec(g, sa) if layout == "a_vec" else g
        gb = _reduce_to_vec(g, sb) if layout == "b_vec" else g
        return (ga, gb)

    return _record(out, (a, b), grad_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    layout = _binary_layout(a.shape, b.shape, "sub")
    bd = b.data.reshape(b.shape[0], 1, 1) if layout == "b_vec" else b.data
    ad = a.data.reshape(a.shape[0], 1, 1) if layout == "a_vec" else a.data
    out = ad - bd
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        ga = _reduce_to_vec(g, sa) if layout == "a_vec" else g
        gb = _reduce_to_vec(-g, sb) if layout == "b_vec" else -g
        return (ga, gb)

    return _record(out, (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    layout = _binary_layout(a.shape, b.shape, "mul")
    bd = b.data.reshape(b.shape[0], 1, 1) if layout == "b_vec" else b.data
    ad = a.data.reshape(a.shape[0], 1, 1) if layout == "a_vec" else a.data
    out = ad * bd
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        ga = g * bd
        gb = g * ad
        if layout == "a_vec":
            ga = _reduce_to_vec(ga, sa)
        if layout == "b_vec":
            gb = _reduce_to_vec(gb, sb)
        return (ga, gb)

    return _record(out, (a, b), grad_fn)


def affine(x, mul_const=1.0, add_const=0.0):
    """x * m + c with float constants; handy for 1-eps style expressions."""
    m = float(mul_const)
    out = x.data * m + float(add_const)

    def grad_fn(g):
        return (g * m,)

    return _record(out, (x,), grad_fn)


def scale(x, factor):
    """Multiply by a constant scalar or per-channel vector (no gradient to it)."""
    if np.isscalar(factor):
        return affine(x, mul_const=float(factor))
    return mul(x, Tensor(factor))


def sum_all(x):
    out = np.array(x.data.sum())
    shp = x.shape

    def grad_fn(g):
        return (np.full(shp, float(g)),)

    return _record(out, (x,), grad_fn)


def mean_all(x):
    out = np.array(x.data.mean())
    shp, n = x.shape, x.data.size

    def grad_fn(g):
        return (np.full(shp, float(g) / n),)

    return _record(out, (x,), grad_fn)


def diff_x(x):
    """Forward differences along width: out[..., j] = x[..., j+1] - x[..., j]."""
    _as_chw(x, "diff_x")
    out = x.data[:, :, 1:] - x.data[:, :, :-1]
    shp = x.shape

    def grad_fn(g):
        gx = np.zeros(shp)
        gx[:, :, 1:] += g
        gx[:, :, :-1] -= g
        return (gx,)

    return _record(out, (x,), grad_fn)


def diff_y(x):
    """Forward differences along height."""
    _as_chw(x, "diff_y")
    out = x.data[:, 1:, :] - x.data[:, :-1, :]
    shp = x.shape

    def grad_fn(g):
        gx = np.zeros(shp)
        gx[:, 1:, :] += g
        gx[:, :-1, :] -= g
        return (gx,)

    return _record(out, (x,), grad_fn)


_UNARY = {"sigmoid": sigmoid, "relu": relu, "elu": elu, "softplus": softplus}
_BINARY = {"add": add, "mul": mul}


def elementwise(x, kind, other=None):
    """Pointwise op dispatcher.

    Unary kinds: sigmoid, relu, elu, softplus.  Binary kinds add/mul take a
    second operand of equal shape or a per-channel vector.  Kind 'scale'
    multiplies by a constant scalar or vector.
    """
    if kind in _UNARY:
        return _UNARY[kind](x)
    if kind in _BINARY:
        if other is None:
            raise UsageError(f"elementwise kind {kind!r} needs a second operand")
        return _BINARY[kind](x, other)
    if kind == "scale":
        if other is None:
            raise UsageError("elementwise kind 'scale' needs a factor")
        return scale(x, other)
    raise UsageError(f"unknown elementwise kind {kind!r}")


def pool(x, kind):
    """Pooling: max2 and avg2 halve H and W, global_avg yields (C,1,1).

    max2 routes the gradient to the argmax; ties go to the first cell in
    row-major window order.
    """
    c, h, w = _as_chw(x, "pool")
    if kind in ("max2", "avg2"):
        if h % 2 or w % 2:
            raise DimensionError(f"pool {kind} needs even H and W, got {h}x{w}")
    if kind == "max2":
        out, arg = _K.maxpool2_forward(x.data)

        def grad_fn(g):
            return (_K.maxpool2_backward(np.ascontiguousarray(g), arg, h, w),)

        return _record(out, (x,), grad_fn)
    if kind == "avg2":
        out = _K.avgpool2_forward(x.data)

        def grad_fn(g):
            return (_K.avgpool2_backward(np.ascontiguousarray(g), h, w),)

        return _record(out, (x,), grad_fn)
    if kind == "global_avg":
        out = x.data.mean(axis=(1, 2)).reshape(c, 1, 1)
        n = h * w

        def grad_fn(g):
            return (np.broadcast_to(g / n, (c, h, w)).copy(),)

        return _record(out, (x,), grad_fn)
    raise UsageError(f"unknown pool kind {kind!r}")


def gradcheck(f, inputs, eps, max_coords=None, rng=None):
    """Compare tape gradients of a scalar function against central differences.

    Returns the max over checked coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|).  By default every
    coordinate of every input is perturbed; ``max_coords`` caps the number
    per input by deterministic subsampling (seeded by ``rng``), for large
    composite functions.
    """
    if not (isinstance(eps, float) and 0.0 < eps <= 1e-2):
        raise UsageError("eps must lie in (0, 1e-2]")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape():
        out = f(*inputs)
        if out.data.size != 1:
            raise UsageError("gradcheck needs a scalar-valued function")
        backward(out)
    max_err = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            r = rng if rng is not None else np.random.default_rng(0)
            coords = np.sort(r.choice(flat.size, size=max_coords, replace=False))
        for i in coords:
            v = flat[i]
            flat[i] = v + eps
            f1 = float(f(*inputs).data)
            flat[i] = v - eps
            f2 = float(f(*inputs).data)
            flat[i] = v
            numeric = (f1 - f2) / (2.0 * eps)
            a = float(aflat[i])
            if not (math.isfinite(a) and math.isfinite(numeric)):
                raise NumericError("non-finite value met during gradient check")
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
