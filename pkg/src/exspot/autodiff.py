"""Tape-based reverse-mode automatic differentiation over float64 numpy arrays.

Design notes:

* Every op computes its forward result eagerly with numpy and, when a Tape is
  active and some input requires gradients, appends one record to that tape.
  Replaying the tape in reverse visits each recorded op exactly once; because
  records are appended in execution order, the reversed order is a valid
  topological order of the graph.
* Gradients are accumulated in float64. Op outputs are checked for finiteness
  so NaN/Inf surface at the op that produced them (NumericError).
* Tapes are confined to the thread that created them (thread-local stack), so
  independent graphs may be built concurrently. Gradient summation order
  across accumulation sites is fixed within one build; callers that sum
  per-sample gradients themselves should expect agreement only up to
  float64 associativity (~1e-9 relative).
* Only the operations and broadcasting the model needs are provided. Binary
  tensor ops require identical shapes; constant operands may broadcast.
"""

from __future__ import annotations

import math
import threading
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DegenerateRowError, NumericError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Dense float64 array plus an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    # Keep numpy from intercepting arithmetic so ndarray (op) Tensor defers to
    # our reflected operators instead of building object arrays.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("Tensor rejects non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

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

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- operator sugar; constants (python scalars / ndarrays) never get grads
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    def __radd__(self, other):
        return add_const(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, neg(other))
        return add_const(self, _neg_const(other))

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_const(self, other)

    def __rmul__(self, other):
        return mul_const(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, pow_const(other, -1.0))
        return mul_const(self, 1.0 / other)


def _neg_const(c):
    return -np.asarray(c, dtype=np.float64)


def _wrap(arr: np.ndarray) -> Tensor:
    """Internal fast constructor for op outputs (no copy, finite-checked)."""
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("operation produced non-finite values")
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.grad = None
    t.requires_grad = False
    return t


BackwardFn = Callable[[np.ndarray], list]


class Tape:
    """Ordered record of executed ops for one reverse sweep.

    Use as a context manager; ops executed inside the block are recorded.
    ``backward`` replays the records once, newest first, then clears them.
    """

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list[tuple[Tensor, BackwardFn]] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor, into: dict | None = None) -> None:
        backward(loss, tape=self, into=into)


_LOCAL = threading.local()


def _stack() -> list:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _record(out: Tensor, parents: tuple, bwd: BackwardFn) -> None:
    tape = active_tape()
    if tape is None:
        return
    for p in parents:
        if p.requires_grad:
            out.requires_grad = True
            tape._records.append((out, bwd))
            return


def backward(loss: Tensor, tape: Tape | None = None, into: dict | None = None) -> None:
    """Run the reverse sweep from a scalar loss and clear the tape.

    Gradients accumulate into each leaf's ``.grad`` (summed with anything
    already there), or into the ``into`` mapping keyed by tensor when given;
    the latter never mutates shared tensors and is safe across threads.
    """
    if tape is None:
        tape = active_tape()
    if tape is None:
        raise ShapeError("backward called with no active tape")
    if loss.data.ndim != 0:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    owners: dict[int, Tensor] = {id(loss): loss}
    for out, bwd in reversed(tape._records):
        g = grads.pop(id(out), None)
        owners.pop(id(out), None)
        if g is None:
            continue
        for parent, contrib in bwd(g):
            key = id(parent)
            prev = grads.get(key)
            grads[key] = contrib if prev is None else prev + contrib
            owners[key] = parent
    tape._records.clear()
    for key, g in grads.items():
        leaf = owners[key]
        if not leaf.requires_grad:
            continue
        g = np.asarray(g, dtype=np.float64).reshape(leaf.data.shape)
        if into is not None:
            prev = into.get(leaf)
            into[leaf] = g.copy() if prev is None else prev + g
        else:
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# elementwise and structural ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op} shapes {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = _wrap(a.data + b.data)

    def bwd(g):
        pairs = []
        if a.requires_grad:
            pairs.append((a, g))
        if b.requires_grad:
            pairs.append((b, g))
        return pairs

    _record(out, (a, b), bwd)
    return out


def add_const(t: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    out = _wrap(t.data + c)
    if out.data.shape != t.data.shape:
        raise ShapeError(f"add_const broadened shape {t.data.shape} -> {out.data.shape}")

    def bwd(g):
        return [(t, g)] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = _wrap(a.data * b.data)

    def bwd(g):
        pairs = []
        if a.requires_grad:
            pairs.append((a, g * b.data))
        if b.requires_grad:
            pairs.append((b, g * a.data))
        return pairs

    _record(out, (a, b), bwd)
    return out


def mul_const(t: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    out = _wrap(t.data * c)
    if out.data.shape != t.data.shape:
        raise ShapeError(f"mul_const broadened shape {t.data.shape} -> {out.data.shape}")

    def bwd(g):
        return [(t, g * c)] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def neg(t: Tensor) -> Tensor:
    return mul_const(t, -1.0)


def pow_const(t: Tensor, exponent: float) -> Tensor:
    e = float(exponent)
    out = _wrap(t.data**e)

    def bwd(g):
        return [(t, g * e * t.data ** (e - 1.0))] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def log(t: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.log(t.data)
    if not np.all(np.isfinite(val)):
        raise NumericError("log of non-positive value")
    out = _wrap(val)

    def bwd(g):
        return [(t, g / t.data)] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    out = _wrap(np.clip(t.data, lo, hi))
    passthrough = (t.data >= lo) & (t.data <= hi)

    def bwd(g):
        return [(t, g * passthrough)] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def relu(t: Tensor) -> Tensor:
    out = _wrap(np.maximum(t.data, 0.0))
    positive = t.data > 0.0

    def bwd(g):
        return [(t, g * positive)] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    e = np.exp(-np.abs(x))
    val = np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = _wrap(val)

    def bwd(g):
        return [(t, g * val * (1.0 - val))] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def gelu(t: Tensor) -> Tensor:
    """Exact Gaussian error linear unit: x * Phi(x) with the true erf cdf."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = _wrap(x * cdf)

    def bwd(g):
        if not t.requires_grad:
            return []
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return [(t, g * (cdf + x * pdf))]

    _record(out, (t,), bwd)
    return out


def sum_all(t: Tensor) -> Tensor:
    out = _wrap(np.asarray(t.data.sum()))

    def bwd(g):
        return [(t, np.broadcast_to(g, t.data.shape))] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _wrap(t.data.reshape(shape))

    def bwd(g):
        return [(t, g.reshape(t.data.shape))] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def transpose(t: Tensor) -> Tensor:
    if t.data.ndim != 2:
        raise ShapeError(f"transpose expects 2-d, got {t.data.shape}")
    out = _wrap(t.data.T)

    def bwd(g):
        return [(t, g.T)] if t.requires_grad else []

    _record(out, (t,), bwd)
    return out


def slice2d(t: Tensor, r0: int, r1: int, c0: int | None = None, c1: int | None = None) -> Tensor:
    """Contiguous row (and optionally column) slice of a 2-d tensor."""
    if t.data.ndim != 2:
        raise ShapeError(f"slice2d expects 2-d, got {t.data.shape}")
    rows, cols = t.data.shape
    if c0 is None:
        c0, c1 = 0, cols
    if not (0 <= r0 <= r1 <= rows and 0 <= c0 <= c1 <= cols):
        raise ShapeError(f"slice ({r0}:{r1}, {c0}:{c1}) outside shape {t.data.shape}")
    out = _wrap(t.data[r0:r1, c0:c1])

    def bwd(g):
        if not t.requires_grad:
            return []
        full = np.zeros_like(t.data)
        full[r0:r1, c0:c1] = g
        return [(t, full)]

    _record(out, (t,), bwd)
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if len(parts) == 1:
        p = parts[0]
        out = _wrap(p.data)

        def bwd1(g):
            return [(p, g)] if p.requires_grad else []

        _record(out, (p,), bwd1)
        return out
    widths = {p.data.shape[1] for p in parts}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows widths differ: {sorted(widths)}")
    out = _wrap(np.concatenate([p.data for p in parts], axis=0))
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def bwd(g):
        return [
            (p, g[offsets[i] : offsets[i + 1]])
            for i, p in enumerate(parts)
            if p.requires_grad
        ]

    _record(out, tuple(parts), bwd)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    heights = {p.data.shape[0] for p in parts}
    if len(heights) != 1:
        raise ShapeError(f"concat_cols heights differ: {sorted(heights)}")
    out = _wrap(np.concatenate([p.data for p in parts], axis=1))
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def bwd(g):
        return [
            (p, g[:, offsets[i] : offsets[i + 1]])
            for i, p in enumerate(parts)
            if p.requires_grad
        ]

    _record(out, tuple(parts), bwd)
    return out


def repeat_rows(t: Tensor, factor: int, out_len: int) -> Tensor:
    """Nearest-neighbor upsampling along axis 0, trimmed to out_len rows."""
    if factor < 1:
        raise ShapeError(f"repeat factor must be >= 1, got {factor}")
    n = t.data.shape[0]
    if n * factor < out_len:
        raise ShapeError(f"repeat_rows: {n} rows * {factor} < requested {out_len}")
    out = _wrap(np.repeat(t.data, factor, axis=0)[:out_len])
    src = np.arange(out_len) // factor

    def bwd(g):
        if not t.requires_grad:
            return []
        acc = np.zeros_like(t.data)
        np.add.at(acc, src, g)
        return [(t, acc)]

    _record(out, (t,), bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra, normalization, attention softmax, convolution


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}")
    out = _wrap(a.data @ b.data)

    def bwd(g):
        pairs = []
        if a.requires_grad:
            pairs.append((a, g @ b.data.T))
        if b.requires_grad:
            pairs.append((b, a.data.T @ g))
        return pairs

    _record(out, (a, b), bwd)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a width-D bias row to every row of a (T, D) tensor."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias shapes {x.data.shape} + {b.data.shape}")
    out = _wrap(x.data + b.data)

    def bwd(g):
        pairs = []
        if x.requires_grad:
            pairs.append((x, g))
        if b.requires_grad:
            pairs.append((b, g.sum(axis=0)))
        return pairs

    _record(out, (x, b), bwd)
    return out


def softmax_lastdim(t: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax over the last axis.

    ``mask`` is a boolean vector over the last axis; masked entries come out
    exactly zero and each row renormalizes over the surviving entries. A mask
    with no valid entry raises DegenerateRowError.
    """
    x = t.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (x.shape[-1],):
            raise ShapeError(f"mask shape {mask.shape} vs last dim {x.shape[-1]}")
        if not mask.any():
            raise DegenerateRowError("softmax row has no unmasked entries")
        shifted = np.where(mask, x, -np.inf)
        shifted = shifted - shifted.max(axis=-1, keepdims=True)
        e = np.exp(shifted, where=np.broadcast_to(mask, x.shape), out=np.zeros_like(x))
    else:
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _wrap(y)

    def bwd(g):
        if not t.requires_grad:
            return []
        inner = (g * y).sum(axis=-1, keepdims=True)
        return [(t, y * (g - inner))]

    _record(out, (t,), bwd)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization of a (T, D) tensor with learned gain and bias."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm expects 2-d, got {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias {gain.data.shape}/{bias.data.shape} vs width {d}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _wrap(xhat * gain.data + bias.data)

    def bwd(g):
        pairs = []
        if gain.requires_grad:
            pairs.append((gain, (g * xhat).sum(axis=0)))
        if bias.requires_grad:
            pairs.append((bias, g.sum(axis=0)))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            pairs.append((x, (gx - m1 - xhat * m2) * inv))
        return pairs

    _record(out, (x, gain, bias), bwd)
    return out


@lru_cache(maxsize=256)
def _conv_gather_indices(
    t_in: int, k: int, stride: int, pad: int
) -> tuple[np.ndarray, int]:
    t_out = (t_in + 2 * pad - k) // stride + 1
    base = np.arange(t_out)[:, None] * stride + np.arange(k)[None, :] - pad
    idx = np.where((base >= 0) & (base < t_in), base, t_in)
    idx.setflags(write=False)
    return idx, t_out


def conv1d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: str = "same",
) -> Tensor:
    """Temporal convolution of (T, Din) rows with a (k, Din, Dout) kernel.

    "same" padding (odd k only) zero-pads so stride 1 preserves T and stride 2
    yields ceil(T/2) rows; "none" applies no padding.
    """
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise ShapeError(f"conv1d shapes {x.data.shape}, kernel {w.data.shape}")
    t_in, d_in = x.data.shape
    k, kd_in, d_out = w.data.shape
    if kd_in != d_in:
        raise ShapeError(f"conv1d input width {d_in} vs kernel width {kd_in}")
    if stride not in (1, 2):
        raise ShapeError(f"conv1d stride must be 1 or 2, got {stride}")
    if padding == "same":
        if k % 2 == 0:
            raise ShapeError(f"'same' padding needs odd kernel size, got {k}")
        pad = (k - 1) // 2
    elif padding == "none":
        pad = 0
        if t_in < k:
            raise ShapeError(f"conv1d: {t_in} rows < kernel size {k} without padding")
    else:
        raise ShapeError(f"conv1d padding must be 'same' or 'none', got {padding!r}")
    if b is not None and b.data.shape != (d_out,):
        raise ShapeError(f"conv1d bias {b.data.shape} vs output width {d_out}")

    idx, t_out = _conv_gather_indices(t_in, k, stride, pad)
    xp = np.concatenate([x.data, np.zeros((1, d_in))], axis=0)
    cols = xp[idx].reshape(t_out, k * d_in)
    w2 = w.data.reshape(k * d_in, d_out)
    val = cols @ w2
    if b is not None:
        val = val + b.data
    out = _wrap(val)

    def bwd(g):
        pairs = []
        if x.requires_grad:
            dcols = (g @ w2.T).reshape(t_out, k, d_in)
            dxp = np.zeros((t_in + 1, d_in))
            np.add.at(dxp, idx, dcols)
            pairs.append((x, dxp[:t_in]))
        if w.requires_grad:
            pairs.append((w, (cols.T @ g).reshape(k, d_in, d_out)))
        if b is not None and b.requires_grad:
            pairs.append((b, g.sum(axis=0)))
        return pairs

    parents = (x, w) if b is None else (x, w, b)
    _record(out, parents, bwd)
    return out
