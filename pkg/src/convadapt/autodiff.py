"""Reverse-mode automatic differentiation over dense numpy arrays.

Tensors wrap row-major numpy buffers. Differentiable operations record
nodes on the active :class:`Tape`; :func:`backward` replays the tape in
reverse order, accumulating gradients additively into leaf tensors.

Training runs at float32. Gradient checking runs at float64 because
central differences are unreliable at single precision.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .errors import ConfigError, DataError, ShapeError, UsageError

__all__ = [
    "DEFAULT_DTYPE",
    "Tensor",
    "Tape",
    "no_grad",
    "backward",
    "grad_check",
    "GradCheckReport",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "shift",
    "matmul",
    "transpose_last2",
    "reshape",
    "concat",
    "softmax",
    "layer_norm",
    "activation",
    "cross_entropy",
    "conv2d_same",
    "conv2d",
    "maxpool2d",
    "dropout",
]

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class _ThreadState(threading.local):
    def __init__(self):
        self.tapes: list[Tape] = []
        self.grad_enabled: bool = True


_state = _ThreadState()


class Tape:
    """Ordered record of one forward pass's differentiable operations.

    Use as a context manager around a forward pass; call :func:`backward`
    on the resulting scalar loss exactly once. Replaying a spent tape, or
    recording new operations onto it, is a usage error.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _state.tapes.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _state.tapes.pop()
        if popped is not self:
            raise UsageError("tape context exited out of order")
        return False


class _Node:
    __slots__ = ("inputs", "output", "grad_fn", "tape")

    def __init__(self, inputs, output, grad_fn, tape):
        self.inputs = inputs
        self.output = output
        self.grad_fn = grad_fn
        self.tape = tape


class no_grad:
    """Context manager that disables tape recording."""

    def __enter__(self) -> "no_grad":
        self._prev = _state.grad_enabled
        _state.grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """Dense n-dimensional array, optionally tracked for differentiation.

    ``data`` is a row-major numpy array of float32 or float64. ``grad``,
    when populated by :func:`backward`, always has the same shape and
    dtype as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Untracked view of the same buffer."""
        return Tensor(self.data, requires_grad=False)

    def sum(self) -> "Tensor":
        out = np.asarray(self.data.sum(dtype=self.dtype))

        def grad_fn(g, x=self):
            return (np.full(x.data.shape, g, dtype=x.dtype),)

        return _record(out, (self,), grad_fn)

    def mean(self) -> "Tensor":
        out = np.asarray(self.data.mean(dtype=self.dtype))
        n = self.size

        def grad_fn(g, x=self):
            return (np.full(x.data.shape, g / n, dtype=x.dtype),)

        return _record(out, (self,), grad_fn)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -float(other))
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"


def _record(out_data: np.ndarray, inputs: tuple, grad_fn) -> Tensor:
    requires = _state.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires, dtype=out_data.dtype)
    if requires and _state.tapes:
        tape = _state.tapes[-1]
        if tape._spent:
            raise UsageError(
                "tape already replayed; run a fresh forward pass on a new tape"
            )
        node = _Node(inputs, out, grad_fn, tape)
        tape.nodes.append(node)
        out._node = node
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient contributions over axes that numpy broadcast."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(d.name for d in dtypes)}")


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that the scalar loss depends on.

    Gradients accumulate additively when a tensor feeds several
    consumers, and across repeated backward calls on different tapes.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        raise UsageError("loss was not produced by operations recorded on a tape")
    tape = node.tape
    if tape._spent:
        raise UsageError("tape already replayed; one backward pass per forward pass")
    tape._spent = True

    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for nd in reversed(tape.nodes):
        g = flows.pop(id(nd.output), None)
        if g is None:
            continue
        grads = nd.grad_fn(g)
        for inp, gi in zip(nd.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is not None and inp._node.tape is tape:
                key = id(inp)
                prev = flows.get(key)
                flows[key] = gi if prev is None else prev + gi
            elif inp.grad is None:
                inp.grad = np.array(gi, dtype=inp.dtype, copy=True)
            else:
                inp.grad = inp.grad + gi


# ---------------------------------------------------------------------------
# elementwise and structural operations


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("add", a, b)
    out = a.data + b.data

    def grad_fn(g, sa=a.data.shape, sb=b.data.shape):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record(out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("sub", a, b)
    out = a.data - b.data

    def grad_fn(g, sa=a.data.shape, sb=b.data.shape):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _record(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("mul", a, b)
    out = a.data * b.data
    da, db = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

    return _record(out, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (-g,)

    return _record(-a.data, (a,), grad_fn)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar, preserving dtype."""
    s = float(s)

    def grad_fn(g):
        return (g * s,)

    return _record(a.data * s, (a,), grad_fn)


def shift(a: Tensor, s: float) -> Tensor:
    """Add a python scalar, preserving dtype."""

    def grad_fn(g):
        return (g,)

    return _record(a.data + float(s), (a,), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch broadcasting on leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    _check_same_dtype("matmul", a, b)
    da, db = a.data, b.data
    out = np.matmul(da, db)
    need_a, need_b = a.requires_grad, b.requires_grad

    def grad_fn(g):
        ga = gb = None
        if need_a:
            ga = _unbroadcast(np.matmul(g, db.swapaxes(-1, -2)), da.shape)
        if need_b:
            gb = _unbroadcast(np.matmul(da.swapaxes(-1, -2), g), db.shape)
        return ga, gb

    return _record(out, (a, b), grad_fn)


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError(f"transpose_last2 needs >=2 dims, got {a.shape}")

    def grad_fn(g):
        return (g.swapaxes(-1, -2),)

    return _record(a.data.swapaxes(-1, -2), (a,), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    orig = a.data.shape

    def grad_fn(g):
        return (g.reshape(orig),)

    return _record(a.data.reshape(shape), (a,), grad_fn)


def concat(parts, axis: int = -1) -> Tensor:
    parts = tuple(parts)
    if not parts:
        raise ShapeError("concat of zero tensors")
    _check_same_dtype("concat", *parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, parts, grad_fn)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only on training paths."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def grad_fn(g):
        return (g * mask,)

    return _record(x.data * mask, (x,), grad_fn)


# ---------------------------------------------------------------------------
# normalization, activations, losses


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _normalize_axis(axis, max(x.ndim, 1))
    shifted = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=ax, keepdims=True)

    def grad_fn(g):
        dot = (g * y).sum(axis=ax, keepdims=True)
        return ((g - dot) * y,)

    return _record(y, (x,), grad_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each trailing vector (population variance), then affine."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), "
            f"got gamma {gamma.shape}, beta {beta.shape}"
        )
    _check_same_dtype("layer_norm", x, gamma, beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data
    need_x, need_g, need_b = x.requires_grad, gamma.requires_grad, beta.requires_grad
    gdata = gamma.data

    def grad_fn(g):
        gx = gg = gb = None
        if need_x:
            gy = g * gdata
            gx = (
                gy
                - gy.mean(axis=-1, keepdims=True)
                - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
            ) * inv
        if need_g:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if need_b:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb

    return _record(out, (x, gamma, beta), grad_fn)


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity: ``gelu`` (exact Gaussian CDF), ``sigmoid``, ``relu``."""
    xd = x.data
    if kind == "gelu":
        cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
        out = xd * cdf

        def grad_fn(g):
            pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
            return (g * (cdf + xd * pdf),)

    elif kind == "relu":
        out = np.maximum(xd, 0)

        def grad_fn(g):
            return (g * (xd > 0),)

    elif kind == "sigmoid":
        out = _sigmoid_stable(xd)

        def grad_fn(g):
            return (g * out * (1.0 - out),)

    else:
        raise ConfigError(f"unknown activation kind '{kind}'")
    return _record(np.asarray(out, dtype=xd.dtype), (x,), grad_fn)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels.

    ``logits`` is (batch, classes); ``labels`` is any integer sequence of
    length batch with values in ``[0, classes)``.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (batch, classes), got {logits.shape}")
    lab = np.asarray(labels)
    if lab.ndim != 1 or lab.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"labels shape {lab.shape} does not match batch {logits.shape[0]}"
        )
    if not np.issubdtype(lab.dtype, np.integer):
        raise DataError(f"labels must be integers, got dtype {lab.dtype}")
    n, c = logits.shape
    bad = (lab < 0) | (lab >= c)
    if bad.any():
        i = int(np.argmax(bad))
        raise DataError(f"label {int(lab[i])} out of range [0, {c}) at index {i}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    rows = np.arange(n)
    out = np.asarray(-logp[rows, lab].mean(), dtype=logits.dtype)
    probs = ez / denom

    def grad_fn(g):
        gi = probs.copy()
        gi[rows, lab] -= 1.0
        gi *= g / n
        return (gi,)

    return _record(out, (logits,), grad_fn)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d_same(x: Tensor, f: Tensor) -> Tensor:
    """Single-channel cross-correlation, stride 1, zero padding, same shape.

    ``x`` is (rows, cols); ``f`` is a square odd-sized kernel. The output
    has the shape of ``x`` and is differentiable in both arguments.
    """
    if x.ndim != 2:
        raise ShapeError(f"conv2d_same input must be 2-d, got {x.shape}")
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ShapeError(f"conv2d_same kernel must be square, got {f.shape}")
    k = f.shape[0]
    if k % 2 == 0:
        raise ConfigError(f"conv2d_same kernel size must be odd, got {k}")
    r, c = x.shape
    if k > 2 * min(r, c) + 1:
        raise ShapeError(f"kernel {k}x{k} too large for input {x.shape}")
    _check_same_dtype("conv2d_same", x, f)
    p = (k - 1) // 2
    xp = np.pad(x.data, p)
    win = sliding_window_view(xp, (k, k))
    out = np.einsum("rcij,ij->rc", win, f.data)
    need_x, need_f = x.requires_grad, f.requires_grad
    fdata = f.data

    def grad_fn(g):
        gx = gf = None
        if need_x:
            gp = np.pad(g, p)
            gwin = sliding_window_view(gp, (k, k))
            gx = np.einsum("rcij,ij->rc", gwin, fdata[::-1, ::-1])
        if need_f:
            fwin = sliding_window_view(xp, (r, c))
            gf = np.einsum("ijrc,rc->ij", fwin, g)
        return gx, gf

    return _record(np.asarray(out, dtype=x.dtype), (x, f), grad_fn)


def conv2d(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Batched multi-channel cross-correlation for the tokenizer stem.

    ``x`` is (batch, in_ch, h, w); ``w`` is (out_ch, in_ch, k, k).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input/weight, got {x.shape}, {w.shape}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d kernel must be square, got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape}, weight {w.shape}")
    bsz, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    if ho < 1 or wo < 1:
        raise ConfigError(
            f"conv2d output collapses to {ho}x{wo} for input {h}x{wd}, "
            f"kernel {k}, stride {s}, padding {p}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    out = np.einsum("bchwij,ocij->bohw", win, w.data)
    if b is not None:
        if b.shape != (cout,):
            raise ShapeError(f"conv2d bias must have shape ({cout},), got {b.shape}")
        out = out + b.data[None, :, None, None]
    need_x, need_w = x.requires_grad, w.requires_grad
    need_b = b is not None and b.requires_grad
    wdata = w.data

    def grad_fn(g):
        gx = gw = gb = None
        if need_b:
            gb = g.sum(axis=(0, 2, 3))
        if need_w:
            gw = np.einsum("bohw,bchwij->ocij", g, win)
        if need_x:
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.einsum(
                        "bohw,oc->bchw", g, wdata[:, :, i, j]
                    )
            gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        if b is None:
            return gx, gw
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _record(np.asarray(out, dtype=x.dtype), inputs, grad_fn)


def maxpool2d(x: Tensor, size: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    """Batched max pooling over (batch, channels, h, w)."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-d input, got {x.shape}")
    bsz, ch, h, wd = x.shape
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - size) // s + 1
    wo = (wd + 2 * p - size) // s + 1
    if ho < 1 or wo < 1:
        raise ConfigError(f"maxpool2d output collapses for input {h}x{wd}")
    xp = np.pad(
        x.data, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf
    )
    win = sliding_window_view(xp, (size, size), axis=(2, 3))[:, :, ::s, ::s]
    flat = win.reshape(bsz, ch, ho, wo, size * size)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gxp = np.zeros_like(xp)
        for m in range(size * size):
            i, j = divmod(m, size)
            gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.where(
                idx == m, g, 0.0
            )
        return (gxp[:, :, p : p + h, p : p + wd],)

    return _record(np.ascontiguousarray(out), (x,), grad_fn)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients against central differences."""

    max_rel_err: float
    tol: float
    passed: bool
    coords_checked: int


def grad_check(
    f,
    xs,
    eps: float = 1e-3,
    tol: float = 1e-4,
    max_coords_per_input: int | None = None,
    rng: np.random.Generator | None = None,
    denom_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of a scalar function to central differences.

    ``f`` receives the tensors in ``xs`` and must return a scalar Tensor
    deterministically (dropout disabled). Errors are relative per
    coordinate, ``|a - n| / max(|a|, |n|, denom_floor)``; the floor keeps
    coordinates whose true gradient is at roundoff scale (where central
    differences bottom out in noise) from dominating the report.
    ``max_coords_per_input`` subsamples coordinates for expensive
    functions; the estimates themselves stay exact central differences.
    """
    xs = (xs,) if isinstance(xs, Tensor) else tuple(xs)
    v1 = _eval_scalar(f, xs)
    v2 = _eval_scalar(f, xs)
    if v1 != v2:
        raise UsageError(
            "grad_check requires a deterministic function; disable dropout"
        )

    for x in xs:
        x.grad = None
    with Tape():
        y = f(*xs)
        if y.size != 1:
            raise UsageError(f"grad_check needs a scalar function, got {y.shape}")
        if y._node is not None:
            backward(y)

    if rng is None:
        rng = np.random.default_rng(0)
    max_rel = 0.0
    checked = 0
    for x in xs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        flat = x.data.reshape(-1)
        n = flat.size
        if max_coords_per_input is not None and n > max_coords_per_input:
            coords = rng.choice(n, size=max_coords_per_input, replace=False)
        else:
            coords = np.arange(n)
        numeric = np.empty(len(coords), dtype=np.float64)
        for pos, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + eps
            fp = _eval_scalar(f, xs)
            flat[i] = orig - eps
            fm = _eval_scalar(f, xs)
            flat[i] = orig
            numeric[pos] = (fp - fm) / (2.0 * eps)
        asel = analytic.reshape(-1)[coords].astype(np.float64)
        denom = np.maximum(np.maximum(np.abs(asel), np.abs(numeric)), denom_floor)
        if len(coords):
            max_rel = max(max_rel, float(np.max(np.abs(asel - numeric) / denom)))
        checked += len(coords)
    return GradCheckReport(max_rel, tol, max_rel <= tol, checked)


def _eval_scalar(f, xs) -> float:
    y = f(*xs)
    if not isinstance(y, Tensor) or y.size != 1:
        raise UsageError("grad_check needs a scalar-valued tensor function")
    return float(y.data)
