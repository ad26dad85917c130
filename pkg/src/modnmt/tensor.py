"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything the translation models need is built from the small op set below.
Ops record themselves on the active :class:`Tape` (if any); ``backward(loss)``
replays the tape in reverse and accumulates gradients into leaf tensors.
"""

from __future__ import annotations

import numpy as np

LN_EPS = 1e-5  # variance floor for layer_norm
NEG_INF = -np.inf

_active_tape = None
_grad_enabled = True
_malloc_tuned = False


def tune_malloc():
    """Raise glibc's mmap/trim thresholds so tape-sized buffers get recycled.

    Activation tensors live for one tape and are reallocated every step; with
    default thresholds glibc serves them via mmap and returns the pages to the
    kernel on free, which makes every step pay the page-fault cost again
    (10x+ slowdown in sandboxed kernels). Safe to call repeatedly; a no-op on
    non-glibc platforms. Numbers are capped at glibc's own maximums.
    """
    global _malloc_tuned
    if _malloc_tuned:
        return True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6", use_errno=True)
        m_mmap_threshold, m_trim_threshold = -3, -1
        ok = libc.mallopt(m_mmap_threshold, 32 * 1024 * 1024)
        ok &= libc.mallopt(m_trim_threshold, 256 * 1024 * 1024)
        _malloc_tuned = bool(ok)
    except (OSError, AttributeError):
        return False
    return _malloc_tuned


class Tensor:
    """A dense n-dimensional float64 array with an optional gradient slot.

    ``grad`` is populated by ``backward()`` for every tensor with
    ``requires_grad=True`` reachable from the loss. Leaf tensors (parameters,
    inputs) accumulate additively across backward calls; op outputs are
    overwritten per call.
    """

    __slots__ = ("data", "grad", "requires_grad", "_creator_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._creator_tape = None  # set when produced by a recorded op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def is_leaf(self):
        return self._creator_tape is None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all shape/grad logic lives in the op functions
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations, replayed in reverse by ``backward``.

    Execution order is topological by construction: an op's inputs always
    exist before its output is recorded.
    """

    def __init__(self):
        self.records = []  # (out, inputs, grad_fn); grad_fn(g_out) -> per-input grads

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a Tape is already active; nested tapes are not supported")
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False

    def backward(self, loss):
        if loss.size != 1:
            raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
        if loss._creator_tape is not self:
            raise ValueError("loss was not produced under this tape")
        # per-call gradient map so repeated backward calls stay additive on leaves
        local = {id(loss): np.ones_like(loss.data)}
        tensors = {id(loss): loss}
        for out, inputs, grad_fn in reversed(self.records):
            g_out = local.get(id(out))
            if g_out is None:
                continue
            for inp, g in zip(inputs, grad_fn(g_out)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in local:
                    local[key] = local[key] + g
                else:
                    local[key] = g
                    tensors[key] = inp
        for key, g in local.items():
            t = tensors[key]
            if not t.requires_grad:
                continue
            if t.is_leaf():
                # copy: g may alias another tensor's gradient buffer
                t.grad = g.copy() if t.grad is None else t.grad + g
            else:
                t.grad = g


class no_grad:
    """Context manager disabling tape recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def backward(loss):
    """Reverse-mode gradients of a scalar loss over the tape that recorded it."""
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ValueError(f"backward expects a scalar Tensor, got shape {shape}")
    if loss._creator_tape is None:
        raise ValueError("loss was not produced under a recording tape")
    loss._creator_tape.backward(loss)


def _record(out_data, inputs, grad_fn):
    """Build the output tensor and push one record onto the active tape."""
    out = Tensor(out_data)
    if _grad_enabled and _active_tape is not None and any(i.requires_grad for i in inputs):
        out.requires_grad = True
        out._creator_tape = _active_tape
        _active_tape.records.append((out, inputs, grad_fn))
    return out


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops
#
# Gradient closures skip inputs that cannot need a gradient (need flags read
# at record time): masks, scales, and other constants cost nothing extra.


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    na, nb = a.requires_grad, b.requires_grad

    def grad_fn(g):
        return (_unbroadcast(g, a.data.shape) if na else None,
                _unbroadcast(g, b.data.shape) if nb else None)

    return _record(out, [a, b], grad_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    na, nb = a.requires_grad, b.requires_grad

    def grad_fn(g):
        return (_unbroadcast(g * b.data, a.data.shape) if na else None,
                _unbroadcast(g * a.data, b.data.shape) if nb else None)

    return _record(out, [a, b], grad_fn)


def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)
    na, nb = a.requires_grad, b.requires_grad

    def grad_fn(g):
        ga = gb = None
        if na:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if nb:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return ga, gb

    return _record(out, [a, b], grad_fn)


def linear(x, w, b=None):
    """Affine map ``x @ w + b`` fused into one tape record.

    ``w`` is (in, out); ``b`` broadcasts over all leading axes of the output.
    Leading axes are collapsed so the whole call is a single GEMM.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.shape} x {w.shape}")
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        b = as_tensor(b)
        out += b.data
    nx, nw = x.requires_grad, w.requires_grad
    nb = b.requires_grad if b is not None else False

    def grad_fn(g):
        g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(x.data.shape) if nx else None
        gw = x2.T @ g2 if nw else None
        gb = g2.sum(axis=0) if nb else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    return _record(out.reshape(*lead, w.shape[1]), [x, w] if b is None else [x, w, b], grad_fn)


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def grad_fn(g):
        return (np.transpose(g, inv),)

    return _record(out, [a], grad_fn)


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)

    def grad_fn(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _record(np.swapaxes(a.data, ax1, ax2), [a], grad_fn)


def reshape(a, shape):
    a = as_tensor(a)
    orig = a.data.shape

    def grad_fn(g):
        return (g.reshape(orig),)

    return _record(a.data.reshape(shape), [a], grad_fn)


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def grad_fn(g):
        return (g * (a.data > 0.0),)

    return _record(out, [a], grad_fn)


def pow_(a, exponent):
    """Elementwise power with a fixed scalar exponent."""
    a = as_tensor(a)
    out = a.data ** exponent

    def grad_fn(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _record(out, [a], grad_fn)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record(out, [a], grad_fn)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def softmax(a, axis=-1):
    """Numerically stable softmax; slices along ``axis`` sum to 1.

    -inf entries (additive masking) receive exactly zero weight.
    """
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record(out, [a], grad_fn)


def embedding(weight, ids):
    """Row gather: ``weight[ids]``. Gradient scatters rows back additively."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ValueError(
            f"token id out of range: ids span [{ids.min()}, {ids.max()}], "
            f"vocabulary size {weight.shape[0]}"
        )
    out = weight.data[ids]

    def grad_fn(g):
        # scatter via one-hot GEMM; much faster than np.add.at at these sizes
        flat = ids.reshape(-1)
        onehot = np.zeros((flat.size, weight.shape[0]))
        onehot[np.arange(flat.size), flat] = 1.0
        return (onehot.T @ g.reshape(-1, weight.shape[1]),)

    return _record(out, [weight], grad_fn)


def cross_entropy(logits, targets, mask=None):
    """Mean negative log-likelihood over unmasked positions.

    ``logits`` has shape (..., V); ``targets`` integer ids of shape (...);
    ``mask`` (same shape as targets) marks positions to count, True = keep.
    Fused log-softmax keeps the op stable for large logits.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    vocab = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ValueError(
            f"target id out of range: targets span [{targets.min()}, {targets.max()}], "
            f"vocabulary size {vocab}"
        )
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("cross_entropy: every position is masked out")

    flat = logits.data.reshape(-1, vocab)
    tflat = targets.reshape(-1)
    mflat = mask.reshape(-1)
    m = flat.max(axis=-1, keepdims=True)
    logz = m + np.log(np.exp(flat - m).sum(axis=-1, keepdims=True))
    logp = flat - logz
    nll = -logp[np.arange(flat.shape[0]), tflat]
    out = (nll * mflat).sum() / n

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(flat.shape[0]), tflat] -= 1.0
        p *= (mflat / n)[:, None]
        return (float(g) * p.reshape(logits.data.shape),)

    return _record(out, [logits], grad_fn)


def dropout(a, rate, rng):
    """Inverted dropout; identity when rate == 0."""
    a = as_tensor(a)
    if rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def grad_fn(g):
        return (g * keep,)

    return _record(a.data * keep, [a], grad_fn)


def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalize each row (last axis) to zero mean / unit variance, then affine.

    ``gain`` and ``bias`` are 1-D of the row width. Fused into one tape record.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise ValueError(
            f"layer_norm gain/bias must be ({width},), got {gain.shape} and {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    nx, ng, nb = x.requires_grad, gain.requires_grad, bias.requires_grad

    def grad_fn(g):
        gx = ggain = gbias = None
        if nx:
            gg = g * gain.data
            gx = inv * (
                gg
                - gg.mean(axis=-1, keepdims=True)
                - xhat * (gg * xhat).mean(axis=-1, keepdims=True)
            )
        if ng:
            ggain = (g * xhat).reshape(-1, width).sum(axis=0)
        if nb:
            gbias = g.reshape(-1, width).sum(axis=0)
        return gx, ggain, gbias

    return _record(out, [x, gain, bias], grad_fn)
