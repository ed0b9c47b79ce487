"""Dense float64 tensors with reverse-mode automatic differentiation.

Define-by-run: while a :class:`Tape` is active on the current thread, every
operation on tracked tensors appends a node to it; creation order is a valid
topological order, so the backward pass is a single reversed sweep.  Outside a
tape, the same functions compute plain values (eval mode).

Everything is 64-bit; this library is a verification instrument, so precision
wins over speed.  Broadcasting is deliberately limited to bias addition along
the feature/channel axis, which keeps every adjoint short enough to audit.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, TapeError

Array = np.ndarray

_tls = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tensor:
    """n-dimensional float64 array, optionally tracked for backprop.

    ``grad`` accumulates across backward passes until explicitly cleared;
    interior nodes also keep their gradient after a backward sweep, which the
    tests use to inspect routing.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, severed from any recorded graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self) -> None:
        if self._tape is None:
            raise TapeError("tensor was not recorded on a tape; run the forward pass inside `with Tape():`")
        self._tape.backward(self)


class Tape:
    """Ordered operation record for one forward/backward pass.

    One backward per recorded forward: a second call without :meth:`reset`
    raises.  A tape and the tensors recorded on it are confined to the thread
    that built them.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise TapeError("a tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc) -> bool:
        _tls.tape = None
        return False

    def reset(self) -> None:
        """Allow another backward sweep; clears interior gradients."""
        self.consumed = False
        for node in self.nodes:
            node.grad = None

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by a backward pass; call reset() or rebuild the forward graph")
        if loss._tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if loss.shape != ():
            raise TapeError(f"backward expects a scalar loss, got shape {loss.shape}")
        self.consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def _accum(t: Tensor, g: Array) -> None:
    if not (t.requires_grad or t._backward is not None):
        return
    if g.shape != t.data.shape:
        raise DimensionError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _record(out: Tensor, parents: Sequence[Tensor], backward: Callable[[Array], None]) -> Tensor:
    tape = _active_tape()
    if tape is None:
        return out
    if tape.consumed:
        raise TapeError("tape already consumed; re-use without reset is an error")
    tracked = False
    for p in parents:
        if p._backward is not None and p._tape is not tape:
            raise TapeError("parent tensor belongs to a different tape; rebuild the forward pass")
        tracked = tracked or p.requires_grad or p._backward is not None
    if not tracked:
        return out
    out._parents = tuple(parents)
    out._backward = backward
    out._tape = tape
    tape.nodes.append(out)
    return out


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g: Array) -> None:
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _record(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a 2-d tensor, got {a.shape}")
    out = Tensor(a.data.T)

    def backward(g: Array) -> None:
        _accum(a, g.T)

    return _record(out, (a,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise addition; ``b`` may be a bias along the feature/channel axis."""
    if a.shape == b.shape:
        out = Tensor(a.data + b.data)

        def backward(g: Array) -> None:
            _accum(a, g)
            _accum(b, g)

    elif b.ndim == 1 and a.ndim == 2 and a.shape[1] == b.shape[0]:
        out = Tensor(a.data + b.data)

        def backward(g: Array) -> None:
            _accum(a, g)
            _accum(b, g.sum(axis=0))

    elif b.ndim == 1 and a.ndim == 4 and a.shape[1] == b.shape[0]:
        out = Tensor(a.data + b.data.reshape(1, -1, 1, 1))

        def backward(g: Array) -> None:
            _accum(a, g)
            _accum(b, g.sum(axis=(0, 2, 3)))

    else:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data)

    def backward(g: Array) -> None:
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)

    def backward(g: Array) -> None:
        _accum(a, g * s)

    return _record(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def backward(g: Array) -> None:
        # subgradient 0 at exactly 0
        _accum(a, g * (a.data > 0.0))

    return _record(out, (a,), backward)


def flatten(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise DimensionError(f"flatten needs a batched tensor, got shape {a.shape}")
    out = Tensor(a.data.reshape(a.shape[0], -1))

    def backward(g: Array) -> None:
        _accum(a, g.reshape(a.data.shape))

    return _record(out, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}")
    out = Tensor(a.data.reshape(shape))

    def backward(g: Array) -> None:
        _accum(a, g.reshape(a.data.shape))

    return _record(out, (a,), backward)


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - numpy-style name
    out = Tensor(a.data.sum(axis=axis))

    def backward(g: Array) -> None:
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).astype(np.float64))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).astype(np.float64))

    return _record(out, (a,), backward)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis))

    def backward(g: Array) -> None:
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.data.shape).astype(np.float64))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g / count, axis), a.data.shape).astype(np.float64))

    return _record(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive value")
    out = Tensor(np.log(a.data))

    def backward(g: Array) -> None:
        _accum(a, g / a.data)

    return _record(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))

    def backward(g: Array) -> None:
        _accum(a, g * out.data)

    return _record(out, (a,), backward)


class ClampCounter:
    """Counts how many values a ``clamp_floor`` raised to the floor."""

    def __init__(self):
        self.count = 0

    def add(self, k: int) -> None:
        self.count += int(k)


def clamp_floor(a: Tensor, floor: float, counter: ClampCounter | None = None) -> Tensor:
    """max(a, floor) elementwise; clamped entries get zero gradient."""
    clamped = a.data < floor
    if counter is not None and clamped.any():
        counter.add(clamped.sum())
    out = Tensor(np.maximum(a.data, floor))

    def backward(g: Array) -> None:
        _accum(a, g * (~clamped))

    return _record(out, (a,), backward)


def gather(a: Tensor, index) -> Tensor:
    """Pick ``a[i, index[i], ...]`` for every row ``i``."""
    idx = np.asarray(index, dtype=np.int64)
    if a.ndim < 2:
        raise DimensionError(f"gather needs at least 2 dimensions, got shape {a.shape}")
    if idx.shape != (a.shape[0],):
        raise DimensionError(f"index shape {idx.shape} does not match batch size {a.shape[0]}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise DimensionError(f"gather index out of range for axis of size {a.shape[1]}")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, idx])

    def backward(g: Array) -> None:
        da = np.zeros_like(a.data)
        da[rows, idx] = g
        _accum(a, da)

    return _record(out, (a,), backward)


def stack(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise DimensionError("stack of no tensors")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"stack needs equal shapes, got {shape} and {t.shape}")
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    parents = tuple(tensors)

    def backward(g: Array) -> None:
        for j, t in enumerate(parents):
            _accum(t, np.take(g, j, axis=axis))

    return _record(out, parents, backward)


def log_softmax(a: Tensor) -> Tensor:
    """Numerically stable log-softmax along the last axis."""
    if a.shape[-1] < 2:
        raise DimensionError(f"log_softmax needs at least 2 classes, got shape {a.shape}")
    z = a.data
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(shifted - lse)

    def backward(g: Array) -> None:
        sm = np.exp(out.data)
        _accum(a, g - sm * g.sum(axis=-1, keepdims=True))

    return _record(out, (a,), backward)


def maxpool2x2(a: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties resolve to the first occurrence."""
    if a.ndim != 4:
        raise DimensionError(f"maxpool2x2 needs a (batch, channel, h, w) tensor, got {a.shape}")
    b, c, h, w = a.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2 needs even spatial dimensions, got {h}x{w}")
    hh, ww = h // 2, w // 2
    windows = a.data.reshape(b, c, hh, 2, ww, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, hh, ww, 4)
    arg = windows.argmax(axis=-1)
    out = Tensor(np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0])

    def backward(g: Array) -> None:
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        da = dwin.reshape(b, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        _accum(a, da)

    return _record(out, (a,), backward)


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0:
        raise DimensionError(f"kernel size {k} exceeds padded input size {size + 2 * pad}")
    if span % stride:
        raise ConfigError(f"non-integer convolution output: (({size} + 2*{pad} - {k}) / {stride}) + 1")
    return span // stride + 1


def _im2col_indices(c: int, h: int, w: int, k: int, stride: int, pad: int):
    hh = _conv_out_size(h, k, stride, pad)
    ww = _conv_out_size(w, k, stride, pad)
    ch = np.repeat(np.arange(c), k * k)[:, None]
    i0 = np.tile(np.repeat(np.arange(k), k), c)[:, None]
    j0 = np.tile(np.tile(np.arange(k), k), c)[:, None]
    i1 = stride * np.repeat(np.arange(hh), ww)[None, :]
    j1 = stride * np.tile(np.arange(ww), hh)[None, :]
    return ch, i0 + i1, j0 + j1, hh, ww


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation (no kernel flip) of a batched image with a 4-d kernel."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d needs 4-d input and kernel, got {x.shape} and {kernel.shape}")
    b, c_in, h, w = x.shape
    c_out, kc, kh, kw = kernel.shape
    if kh != kw:
        raise DimensionError(f"conv2d kernel must be square, got {kh}x{kw}")
    if kc != c_in:
        raise DimensionError(f"kernel expects {kc} input channels, input has {c_in}")
    if kh % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {kh}")
    k = kh
    ch, ii, jj, hh, ww = _im2col_indices(c_in, h, w, k, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = xp[:, ch, ii, jj]  # (b, c_in*k*k, hh*ww)
    w2 = kernel.data.reshape(c_out, -1)
    out = Tensor(np.einsum("oi,bil->bol", w2, cols).reshape(b, c_out, hh, ww))

    def backward(g: Array) -> None:
        g2 = g.reshape(b, c_out, hh * ww)
        _accum(kernel, np.einsum("bol,bil->oi", g2, cols).reshape(kernel.data.shape))
        dcols = np.einsum("oi,bol->bil", w2, g2)
        dxp = np.zeros_like(xp)
        np.add.at(dxp, (np.arange(b)[:, None, None], ch, ii, jj), dcols)
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        _accum(x, dx)

    return _record(out, (x, kernel), backward)
