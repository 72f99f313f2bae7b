"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything is 64-bit: the model is desk-scale and gradient checking needs the
precision. A ``Tape`` is a Wengert list; operations append a backward rule
when they run under an active tape and any operand requires gradients.
Replaying the rules in reverse application order yields exact gradients for
every ``requires_grad`` leaf.

Shape discipline is deliberately strict: elementwise operations demand
identical shapes and broadcasting only happens through the explicit
``broadcast_to`` op, so shape bugs fail loudly at the call site.

Concurrency: a tape and the tensors recorded on it form a single-owner unit.
The active-tape stack is thread-local, so distinct tapes may run on distinct
threads; detached tensors are immutable by convention and safe to share.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an operation's shape rule."""


class DomainError(ValueError):
    """Operand values fall outside an operation's defined domain."""


_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return slice_tensor(self, key)


class Tape:
    """Ordered record of primitive applications with their backward rules."""

    def __init__(self):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, root: Tensor):
        """Accumulate d(root)/d(leaf) into .grad of every requires_grad leaf.

        A root disconnected from the tape (a constant) is a no-op.
        """
        if root.data.ndim != 0:
            raise ShapeError(
                f"backward root must be a scalar, got shape {root.data.shape}"
            )
        root.grad = np.ones_like(root.data)
        for out, rule in reversed(self._records):
            if out.grad is not None:
                rule(out.grad)


def backward(root: Tensor):
    """Run backward on the active tape (see Tape.backward)."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() requires an active Tape")
    tape.backward(root)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(out: Tensor, operands: Sequence[Tensor], rule: Callable[[np.ndarray], None]):
    tape = active_tape()
    if tape is not None and any(o.requires_grad for o in operands):
        out.requires_grad = True
        tape._records.append((out, rule))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(op: str, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} must match exactly"
            " (use broadcast_to for explicit expansion)"
        )


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data)

    def rule(g):
        _accum(a, g)
        _accum(b, g)

    return _record(out, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data)

    def rule(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(out, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data)

    def rule(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _record(out, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("div", a, b)
    if np.any(b.data == 0.0):
        raise DomainError("div: denominator contains zero entries")
    out = Tensor(a.data / b.data)

    def rule(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _record(out, (a, b), rule)


# ---------------------------------------------------------------------------
# matmul


def matmul(a, b) -> Tensor:
    """Matrix product.

    Either both operands share identical leading (batch) axes, or ``b`` is a
    plain 2-D matrix applied to the trailing axis of ``a``.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner extents differ, {a.shape} @ {b.shape}"
        )
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(
            f"matmul: leading axes differ, {a.shape} @ {b.shape}"
        )
    out = Tensor(np.matmul(a.data, b.data))

    def rule(g):
        if a.requires_grad:
            _accum(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                _accum(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _record(out, (a, b), rule)


# ---------------------------------------------------------------------------
# elementwise unary


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))

    def rule(g):
        _accum(a, g * out.data)

    return _record(out, (a,), rule)


def log(a) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: input contains nonpositive entries")
    out = Tensor(np.log(a.data))

    def rule(g):
        _accum(a, g / a.data)

    return _record(out, (a,), rule)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data))

    def rule(g):
        _accum(a, g * (1.0 - out.data * out.data))

    return _record(out, (a,), rule)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid exp overflow warnings
    pos = x >= 0
    out = np.empty_like(x)
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(_sigmoid_stable(a.data))

    def rule(g):
        _accum(a, g * out.data * (1.0 - out.data))

    return _record(out, (a,), rule)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def rule(g):
        _accum(a, g * (a.data > 0.0))

    return _record(out, (a,), rule)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)

    def rule(g):
        _accum(a, g * c)

    return _record(out, (a,), rule)


def shift(a, c: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data + float(c))

    def rule(g):
        _accum(a, g)

    return _record(out, (a,), rule)


def clamp_min(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient is zero where the floor binds."""
    a = _as_tensor(a)
    floor = float(floor)
    out = Tensor(np.maximum(a.data, floor))

    def rule(g):
        _accum(a, g * (a.data > floor))

    return _record(out, (a,), rule)


# ---------------------------------------------------------------------------
# reductions


def sum_over_axis(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis))

    def rule(g):
        if axis is None:
            _accum(a, np.full_like(a.data, g))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _record(out, (a,), rule)


def mean_over_axis(a, axis: int | None = None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.mean(a.data, axis=axis))
    count = a.data.size if axis is None else a.data.shape[axis]

    def rule(g):
        if axis is None:
            _accum(a, np.full_like(a.data, g / count))
        else:
            _accum(
                a,
                np.broadcast_to(np.expand_dims(g / count, axis), a.data.shape).copy(),
            )

    return _record(out, (a,), rule)


def max_over_axis(a, axis: int) -> Tensor:
    """Max along one axis; ties send the gradient to the first maximum."""
    a = _as_tensor(a)
    out = Tensor(np.max(a.data, axis=axis))
    arg = np.argmax(a.data, axis=axis)

    def rule(g):
        da = np.zeros_like(a.data)
        idx = np.expand_dims(arg, axis)
        np.put_along_axis(da, idx, np.expand_dims(g, axis), axis)
        _accum(a, da)

    return _record(out, (a,), rule)


# ---------------------------------------------------------------------------
# structural


def concat_along_axis(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_along_axis: empty operand list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def rule(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _record(out, tensors, rule)


def slice_tensor(a, key) -> Tensor:
    """Basic (non-advanced) indexing; the backward scatters into the region."""
    a = _as_tensor(a)
    out = Tensor(a.data[key])

    def rule(g):
        da = np.zeros_like(a.data)
        da[key] = g
        _accum(a, da)

    return _record(out, (a,), rule)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    out = Tensor(a.data.reshape(shape))

    def rule(g):
        _accum(a, g.reshape(a.data.shape))

    return _record(out, (a,), rule)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.transpose(a.data, axes))
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def rule(g):
        _accum(a, np.transpose(g, inv))

    return _record(out, (a,), rule)


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    """Explicit trailing-axis broadcast.

    ``a.shape`` must align with the trailing axes of ``shape``; axes of extent
    1 expand, missing leading axes are prepended. Anything else is rejected.
    """
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if a.ndim > len(shape):
        raise ShapeError(f"broadcast_to: cannot shrink {a.shape} to {shape}")
    trailing = shape[len(shape) - a.ndim :]
    for have, want in zip(a.shape, trailing):
        if have != want and have != 1:
            raise ShapeError(
                f"broadcast_to: axis extent {have} of {a.shape} does not align"
                f" with {shape}"
            )
    out = Tensor(np.broadcast_to(a.data, shape).copy())
    n_lead = len(shape) - a.ndim
    expanded = tuple(
        i + n_lead for i, (have, want) in enumerate(zip(a.shape, trailing)) if have == 1 and want != 1
    )

    def rule(g):
        g = g.sum(axis=tuple(range(n_lead))) if n_lead else g
        if expanded:
            g = g.sum(axis=tuple(e - n_lead for e in expanded), keepdims=True)
        _accum(a, g)

    return _record(out, (a,), rule)


def gather_rows(table, ids: np.ndarray) -> Tensor:
    """Select rows of a 2-D table by integer id; backward scatter-adds."""
    table = _as_tensor(table)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.shape}")
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DomainError(
            f"gather_rows: id out of bounds for table with {table.shape[0]} rows"
        )
    out = Tensor(table.data[ids])

    def rule(g):
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids.ravel(), g.reshape(-1, table.shape[1]))

    return _record(out, (table,), rule)


# ---------------------------------------------------------------------------
# fused ops


def masked_softmax(logits, mask) -> Tensor:
    """Softmax over the last axis restricted to mask==1 positions.

    Masked positions are exactly 0 in the output; each row sums to 1. The
    computation subtracts the row max over unmasked entries for stability.
    The mask is a constant: it must have the same shape as the logits and
    every row must contain at least one unmasked entry.
    """
    logits = _as_tensor(logits)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if m.shape != logits.shape:
        raise ShapeError(
            f"masked_softmax: mask shape {m.shape} != logits shape {logits.shape}"
        )
    valid = m != 0.0
    if not np.all(valid.any(axis=-1)):
        bad = np.argwhere(~valid.any(axis=-1))[0]
        raise DomainError(f"masked_softmax: all-zero mask row at index {tuple(bad)}")
    neg = np.where(valid, logits.data, -np.inf)
    mx = neg.max(axis=-1, keepdims=True)
    e = np.where(valid, np.exp(logits.data - mx), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)

    def rule(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        _accum(logits, p * (g - inner))

    return _record(out, (logits,), rule)


def layer_norm_op(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit (population) variance,
    then apply an elementwise affine: y = xhat * gain + bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def rule(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accum(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gm = g * gain.data
            m1 = gm.mean(axis=-1, keepdims=True)
            m2 = (gm * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gm - m1 - xhat * m2))

    return _record(out, (x, gain, bias), rule)


def conv1d_maxpool(char_emb, lengths: np.ndarray, filters, fbias, width: int = 5) -> Tensor:
    """Per-token 1-D convolution over character positions, max-pooled.

    char_emb  (W, C, d) character embeddings, padded to C >= width
    lengths   (W,) true character counts per token
    filters   (width * d, F) flattened convolution filters
    fbias     (F,)

    Pooling only covers windows that start inside the padded-to-width token,
    so the result is independent of how far the batch pads beyond
    max(length, width).
    """
    char_emb, filters, fbias = _as_tensor(char_emb), _as_tensor(filters), _as_tensor(fbias)
    W, C, d = char_emb.shape
    if C < width:
        raise ShapeError(f"conv1d_maxpool: need C >= {width}, got {C}")
    F = filters.shape[1]
    if filters.shape != (width * d, F):
        raise ShapeError(
            f"conv1d_maxpool: filters must be ({width * d}, F), got {filters.shape}"
        )
    P = C - width + 1
    lengths = np.asarray(lengths)
    windows = np.stack(
        [char_emb.data[:, p : p + width, :].reshape(W, width * d) for p in range(P)],
        axis=1,
    )  # (W, P, width*d)
    scores = windows @ filters.data + fbias.data  # (W, P, F)
    n_valid = np.maximum(lengths - width + 1, 1)  # windows per token
    pos_ok = np.arange(P)[None, :] < n_valid[:, None]  # (W, P)
    masked = np.where(pos_ok[:, :, None], scores, -np.inf)
    arg = masked.argmax(axis=1)  # (W, F)
    out = Tensor(np.take_along_axis(masked, arg[:, None, :], axis=1)[:, 0, :])

    def rule(g):
        ds = np.zeros_like(scores)
        np.put_along_axis(ds, arg[:, None, :], g[:, None, :], axis=1)
        if fbias.requires_grad:
            _accum(fbias, ds.sum(axis=(0, 1)))
        if filters.requires_grad:
            _accum(filters, windows.reshape(-1, width * d).T @ ds.reshape(-1, F))
        if char_emb.requires_grad:
            dwin = ds @ filters.data.T  # (W, P, width*d)
            dx = np.zeros_like(char_emb.data)
            for p in range(P):
                dx[:, p : p + width, :] += dwin[:, p].reshape(W, width, d)
            _accum(char_emb, dx)

    return _record(out, (char_emb, filters, fbias), rule)


def gru_sequence(xproj, u, b_hn, mask: np.ndarray, reverse: bool = False) -> Tensor:
    """One direction of a GRU over a padded batch (see kernels module).

    xproj (B, T, 3H) precomputed input projections, u (H, 3H) recurrent
    weights, b_hn (H,) candidate recurrent bias, mask (B, T) constant. The
    initial state is zero. Masked steps carry the state through unchanged.
    """
    xproj, u, b_hn = _as_tensor(xproj), _as_tensor(u), _as_tensor(b_hn)
    B, T, H3 = xproj.shape
    H = H3 // 3
    if H3 != 3 * H or u.shape != (H, H3) or b_hn.shape != (H,):
        raise ShapeError(
            f"gru_sequence: got xproj {xproj.shape}, u {u.shape}, b_hn {b_hn.shape}"
        )
    mask = np.ascontiguousarray(np.asarray(mask, dtype=np.float64))
    if mask.shape != (B, T):
        raise ShapeError(f"gru_sequence: mask shape {mask.shape} != ({B}, {T})")
    h0 = np.zeros((B, H))
    xp = np.ascontiguousarray(xproj.data)
    hout, zc, rc, nc, hnc = kernels.gru_seq_forward(
        xp, u.data, b_hn.data, h0, mask, reverse
    )
    out = Tensor(hout)

    def rule(g):
        dxp, du, db, _dh0 = kernels.gru_seq_backward(
            np.ascontiguousarray(g), xp, u.data, mask, hout, h0, zc, rc, nc, hnc, reverse
        )
        _accum(xproj, dxp)
        _accum(u, du)
        _accum(b_hn, db)

    return _record(out, (xproj, u, b_hn), rule)


# ---------------------------------------------------------------------------
# dispatch and checking


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "max_over_axis": max_over_axis,
    "sum_over_axis": sum_over_axis,
    "mean_over_axis": mean_over_axis,
    "concat_along_axis": concat_along_axis,
    "slice": slice_tensor,
    "reshape": reshape,
    "transpose": transpose,
    "broadcast": broadcast_to,
    "scale": scale,
    "shift": shift,
    "clamp_min": clamp_min,
    "gather_rows": gather_rows,
    "masked_softmax": masked_softmax,
    "layer_norm": layer_norm_op,
    "conv1d_maxpool": conv1d_maxpool,
    "gru_sequence": gru_sequence,
}


def apply_primitive(op_kind: str, operands, **kwargs) -> Tensor:
    """Apply a named primitive; the name set is fixed by PRIMITIVES."""
    try:
        fn = PRIMITIVES[op_kind]
    except KeyError:
        raise KeyError(f"unknown primitive {op_kind!r}") from None
    if op_kind == "concat_along_axis":
        return fn(operands, **kwargs)
    return fn(*operands, **kwargs)


def finite_difference_check(f, x: Tensor, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the tensor to a scalar Tensor; it is re-evaluated with each
    coordinate of ``x`` perturbed by +/- epsilon. Relative error per
    coordinate is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x.grad = None
    with Tape() as tape:
        y = f(x)
        if y.data.ndim != 0:
            raise ShapeError(f"f must return a scalar, got shape {y.data.shape}")
        tape.backward(y)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.grad = None
    numeric = np.zeros_like(analytic)
    for i in range(x.data.size):
        idx = np.unravel_index(i, x.data.shape)
        orig = x.data[idx]
        x.data[idx] = orig + epsilon
        hi = float(f(x).data)
        x.data[idx] = orig - epsilon
        lo = float(f(x).data)
        x.data[idx] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise DomainError(f"finite_difference_check: non-finite f at coordinate {idx}")
        numeric[idx] = (hi - lo) / (2.0 * epsilon)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))
