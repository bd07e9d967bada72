"""Dense float64 tensors with reverse-mode differentiation.

Every value the synthesis pipeline touches -- activations, losses, graph
nodes -- lives in the :class:`Tensor` type below.  Operations record
parent links as they execute; ``backward()`` replays the implicit tape in
reverse topological order and accumulates gradients additively into every
leaf that asked for them.  Desk scale keeps the design deliberately
small: 64-bit floats, a single thread, no in-place mutation of anything
that participates in a recorded graph (the optimizer update on parameter
storage between steps is the one sanctioned exception).
"""
from __future__ import annotations

import struct

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


# ---------------------------------------------------------------------------
# core tensor type
# ---------------------------------------------------------------------------


def _accumulate(t, g):
    """Add gradient ``g`` into ``t.grad`` without mutating either array."""
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back down to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _result(data, parents, backward):
    """Build an op result, recording the graph only when a parent needs it."""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _toposort(root):
    """Parents-before-children ordering of the ancestors of ``root``."""
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    norm = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        norm.append(ax % ndim)
    if len(set(norm)) != len(norm):
        raise ShapeError(f"duplicate axes in {axes}")
    return tuple(sorted(norm))


def _promote(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class Tensor:
    """N-dimensional float64 array with optional gradient tracking.

    Constructors reject non-finite values; downstream numerical blowups
    are the caller's responsibility to detect (the trainer checks its
    loss scalars every step).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("Tensor rejects non-finite values (NaN/Inf)")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    # -- autodiff -------------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        Only scalar roots are accepted; running twice on fresh graphs is
        the caller's concern (grads add, they are never reset here).
        """
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.data.shape}")
        if not self.requires_grad:
            return
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self):
        """A view of the same values severed from the recorded graph."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        return out

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        a, b = self, _promote(other)

        def bw(g):
            _accumulate(a, _unbroadcast(g, a.data.shape))
            _accumulate(b, _unbroadcast(g, b.data.shape))

        return _result(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bw(g):
            _accumulate(a, -g)

        return _result(-a.data, (a,), bw)

    def __sub__(self, other):
        return self + (-_promote(other))

    def __rsub__(self, other):
        return _promote(other) + (-self)

    def __mul__(self, other):
        a, b = self, _promote(other)

        def bw(g):
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

        return _result(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _promote(other)

        def bw(g):
            _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return _result(a.data / b.data, (a, b), bw)

    def __rtruediv__(self, other):
        return _promote(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a, e = self, float(exponent)

        def bw(g):
            _accumulate(a, g * e * a.data ** (e - 1.0))

        return _result(a.data ** e, (a,), bw)

    def abs(self):
        a = self
        sign = np.sign(a.data)

        def bw(g):
            _accumulate(a, g * sign)

        return _result(np.abs(a.data), (a,), bw)

    # -- shape ops --------------------------------------------------------

    def reshape(self, shape):
        a = self
        orig = a.data.shape

        def bw(g):
            _accumulate(a, g.reshape(orig))

        return _result(a.data.reshape(shape), (a,), bw)

    # -- reductions -------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        axes = _normalize_axes(axis, a.data.ndim)
        out = a.data.sum(axis=axes, keepdims=keepdims)

        def bw(g):
            gg = np.asarray(g)
            if axes is not None and not keepdims:
                for ax in axes:
                    gg = np.expand_dims(gg, ax)
            _accumulate(a, np.broadcast_to(gg, a.data.shape))

        return _result(out, (a,), bw)

    def mean(self, axis=None, keepdims=False):
        a = self
        axes = _normalize_axes(axis, a.data.ndim)
        if axes is None:
            n = a.data.size
        else:
            n = 1
            for ax in axes:
                n *= a.data.shape[ax]
        if n == 0:
            raise ShapeError("mean over an empty extent")
        out = a.data.mean(axis=axes, keepdims=keepdims)

        def bw(g):
            gg = np.asarray(g)
            if axes is not None and not keepdims:
                for ax in axes:
                    gg = np.expand_dims(gg, ax)
            _accumulate(a, np.broadcast_to(gg, a.data.shape) / n)

        return _result(out, (a,), bw)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


def relu(x):
    mask = x.data > 0.0

    def bw(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), bw)


def leaky_relu(x, slope=0.2):
    factor = np.where(x.data > 0.0, 1.0, slope)

    def bw(g):
        _accumulate(x, g * factor)

    return _result(x.data * factor, (x,), bw)


def _sigmoid_stable(d):
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ed = np.exp(d[~pos])
    out[~pos] = ed / (1.0 + ed)
    return out


def sigmoid(x):
    s = _sigmoid_stable(x.data)

    def bw(g):
        _accumulate(x, g * s * (1.0 - s))

    return _result(s, (x,), bw)


def tanh(x):
    t = np.tanh(x.data)

    def bw(g):
        _accumulate(x, g * (1.0 - t * t))

    return _result(t, (x,), bw)


def softplus(x):
    """log(1 + exp(x)) computed without overflow; softplus(0) == log 2."""
    d = x.data
    s = _sigmoid_stable(d)
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))

    def bw(g):
        _accumulate(x, g * s)

    return _result(out, (x,), bw)


def exp(x):
    e = np.exp(x.data)

    def bw(g):
        _accumulate(x, g * e)

    return _result(e, (x,), bw)


def log(x):
    def bw(g):
        _accumulate(x, g / x.data)

    return _result(np.log(x.data), (x,), bw)


def square(x):
    return x * x


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the input is inside."""
    mask = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        _accumulate(x, g * mask)

    return _result(np.clip(x.data, lo, hi), (x,), bw)


def softmax(x, axis):
    _normalize_axes(axis, x.data.ndim)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return _result(s, (x,), bw)


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def concat(tensors, axis=0):
    ts = [_promote(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty sequence")
    ndim = ts[0].data.ndim
    axes = _normalize_axes(axis, ndim)
    ax = axes[0]
    for t in ts[1:]:
        if t.data.ndim != ndim:
            raise ShapeError(f"concat rank mismatch: {ndim} vs {t.data.ndim}")
        for d in range(ndim):
            if d != ax and t.data.shape[d] != ts[0].data.shape[d]:
                raise ShapeError(
                    f"concat dim {d} mismatch: {ts[0].data.shape} vs {t.data.shape}"
                )
    data = np.concatenate([t.data for t in ts], axis=ax)
    offsets = np.cumsum([t.data.shape[ax] for t in ts])[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, offsets, axis=ax)):
            _accumulate(t, piece)

    return _result(data, tuple(ts), bw)


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    """2-D cross-correlation over [N, C, H, W] with square stride/padding.

    Implemented as patch extraction plus one matrix product so that the
    heavy lifting stays inside BLAS; the backward pass scatters column
    gradients back with the mirror-image slice assignments.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(
            f"conv2d wants 4-D input and kernel, got {x.data.shape} and {kernel.data.shape}"
        )
    if not isinstance(stride, int) or stride < 1:
        raise ShapeError(f"stride must be a positive int, got {stride!r}")
    if not isinstance(padding, int) or padding < 0:
        raise ShapeError(f"padding must be a non-negative int, got {padding!r}")
    n, cin, h, w = x.data.shape
    cout, kcin, kh, kw = kernel.data.shape
    if kcin != cin:
        raise ShapeError(f"kernel expects {kcin} input channels, input has {cin}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"kernel {kh}x{kw} does not fit padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({cout},)")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1

    cols = np.empty((n, cin, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[
                :, :, i : i + stride * (ho - 1) + 1 : stride,
                j : j + stride * (wo - 1) + 1 : stride,
            ]
    cols2 = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, cin * kh * kw)
    kmat = kernel.data.reshape(cout, cin * kh * kw)
    out = (cols2 @ kmat.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        if kernel.requires_grad:
            _accumulate(kernel, (g2.T @ cols2).reshape(kernel.data.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = (g2 @ kmat).reshape(n, ho, wo, cin, kh, kw).transpose(0, 3, 4, 5, 1, 2)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[
                        :, :, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride,
                    ] += gcols[:, :, i, j]
            if padding:
                gxp = gxp[:, :, padding : padding + h, padding : padding + w]
            _accumulate(x, gxp)

    return _result(out, parents, bw)


def upsample_nearest(x, factor):
    """Repeat each pixel factor x factor; gradient sums each block back."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest wants 4-D input, got {x.data.shape}")
    if not isinstance(factor, int) or factor < 1:
        raise ShapeError(f"factor must be a positive int, got {factor!r}")
    n, c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        _accumulate(x, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _result(out, (x,), bw)


def avg_pool2d(x, factor):
    """Non-overlapping factor x factor mean pooling."""
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool2d wants 4-D input, got {x.data.shape}")
    if not isinstance(factor, int) or factor < 1:
        raise ShapeError(f"factor must be a positive int, got {factor!r}")
    n, c, h, w = x.data.shape
    if h % factor or w % factor:
        raise ShapeError(f"spatial size {h}x{w} not divisible by pool factor {factor}")
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def bw(g):
        gg = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        _accumulate(x, gg / (factor * factor))

    return _result(out, (x,), bw)


def normalize(x, eps=1e-5, stats="instance"):
    """Zero-mean unit-variance normalization over spatial extents.

    ``stats="instance"`` normalizes each (sample, channel) slice on its
    own; ``stats="batch"`` pools the batch axis as well (the two coincide
    at batch size one).  Constant slices map to exactly zero.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"normalize wants 4-D input, got {x.data.shape}")
    if stats == "instance":
        axes = (2, 3)
    elif stats == "batch":
        axes = (0, 2, 3)
    else:
        raise ValueError(f"unknown stats mode {stats!r}")
    m = x.mean(axis=axes, keepdims=True)
    centered = x - m
    v = (centered * centered).mean(axis=axes, keepdims=True)
    return centered / ((v + eps) ** 0.5)


def l2_norm(x):
    """Euclidean norm of the flattened tensor as a scalar Tensor."""
    return (x * x).sum() ** 0.5


# ---------------------------------------------------------------------------
# parameters and optimization
# ---------------------------------------------------------------------------


class Parameter(Tensor):
    """Trainable tensor carrying Adam moment buffers and a step counter."""

    __slots__ = ("m1", "m2", "step")

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.m1 = np.zeros_like(self.data)
        self.m2 = np.zeros_like(self.data)
        self.step = 0


def adam_step(params, lr, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over ``params`` (in place).

    Parameters with no accumulated gradient are rejected: that always
    means a bookkeeping bug, never a legitimate no-op.
    """
    for p in params:
        if p.grad is None:
            raise ValueError("adam_step found a parameter with no gradient")
    for p in params:
        g = p.grad
        p.step += 1
        p.m1 = beta1 * p.m1 + (1.0 - beta1) * g
        p.m2 = beta2 * p.m2 + (1.0 - beta2) * (g * g)
        mhat = p.m1 / (1.0 - beta1 ** p.step)
        vhat = p.m2 / (1.0 - beta2 ** p.step)
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


def lr_at_epoch(base_lr, epoch, total_epochs):
    """Constant for the first half of training, then linear decay toward 0.

    ``epoch`` counts from 0.  With 2 epochs this yields base_lr then
    base_lr / 2; the final epoch of any schedule keeps a positive rate.
    """
    half = total_epochs // 2
    decay_span = total_epochs - half
    over = max(0, epoch + 1 - half)
    return base_lr * (1.0 - over / float(decay_span + 1))


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SGS1"


def save_checkpoint(path, entries):
    """Write named float64 arrays to the flat binary container format.

    Layout: magic ``SGS1`` then, per entry, u32-LE name length, UTF-8
    name, u32-LE rank, u32-LE dims, raw little-endian float64 data.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, arr in entries:
            # tobytes() below always emits C order; no need to copy first.
            # (ascontiguousarray would also silently promote rank 0 to 1.)
            a = np.asarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a.ndim))
            for d in a.shape:
                f.write(struct.pack("<I", d))
            f.write(a.tobytes())


def load_checkpoint(path):
    """Read a checkpoint container back into an ordered name -> array dict."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    out = {}
    pos = 4
    while pos < len(blob):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        if name in out:
            raise ValueError(f"{path}: duplicate checkpoint entry {name!r}")
        out[name] = arr.astype(np.float64)
    return out


def save_params(path, named_params):
    """Persist (name, Parameter) pairs with their optimizer state."""
    entries = []
    for name, p in named_params:
        entries.append((name, p.data))
        entries.append((name + ".m1", p.m1))
        entries.append((name + ".m2", p.m2))
        entries.append((name + ".step", np.float64(p.step)))
    save_checkpoint(path, entries)


def load_params(path, named_params):
    """Restore parameters saved by :func:`save_params`, by name."""
    blob = load_checkpoint(path)
    for name, p in named_params:
        if name not in blob:
            raise KeyError(f"{path}: checkpoint missing parameter {name!r}")
        arr = blob[name]
        if arr.shape != p.data.shape:
            raise ShapeError(
                f"{path}: parameter {name!r} has shape {arr.shape}, expected {p.data.shape}"
            )
        p.data = arr.copy()
        p.m1 = blob[name + ".m1"].copy()
        p.m2 = blob[name + ".m2"].copy()
        p.step = int(blob[name + ".step"].reshape(())) if name + ".step" in blob else 0
        p.grad = None
