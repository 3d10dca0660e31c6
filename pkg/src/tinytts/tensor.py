"""Dense tensors, neural-net primitives, and a reverse-mode gradient tape.

Arrays are contiguous numpy buffers (float32 by default, float64 for
gradient-check builds). Forward ops are pure functions; while a GradTape
is active, every op whose inputs require gradients records one node with
the saved values its backward pass needs. Recording order is execution
order, so replaying the node list in reverse is a valid reverse
topological sweep. One tape per training step; tapes are never shared
between threads.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    ConfigError,
    NumericError,
    SequenceTooShortError,
    ShapeError,
    TokenError,
)

# Scan every op output for non-finite values. Off by default (costs a pass
# over the data); tests and debug runs flip it on.
CHECK_FINITE = False

_ACTIVE_TAPE: "GradTape | None" = None

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """Dense n-dimensional real array, optionally tracked for gradients.

    `data` is row-major; `grad`, once populated by a backward pass, has the
    same shape as `data`. Repeated backward calls accumulate additively.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class GradTape:
    """Ordered record of ops, replayed once in reverse by `backward`.

    Used as a context manager::

        with GradTape() as tape:
            loss = ...
        tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self._output_ids: set[int] = set()
        self._previous: GradTape | None = None

    def __enter__(self) -> "GradTape":
        global _ACTIVE_TAPE
        self._previous = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._previous
        self._previous = None

    def _record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                backward_fn: Callable[[np.ndarray], tuple]) -> None:
        self.nodes.append(TapeNode(op, inputs, output, backward_fn))
        self._output_ids.add(id(output))

    def backward(self, loss: Tensor) -> None:
        """Populate `grad` on every requires_grad tensor reachable from `loss`."""
        if loss.data.ndim != 0:
            raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
        if id(loss) not in self._output_ids:
            raise ValueError("loss tensor was not recorded on this tape")
        flowing: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
        for node in reversed(self.nodes):
            g_out = flowing.pop(id(node.output), None)
            if g_out is None:
                continue
            grads = node.backward_fn(g_out)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in flowing:
                    flowing[key] += g
                else:
                    flowing[key] = np.array(g, copy=True) if np.isscalar(g) else g.copy()
        for node in self.nodes:
            for t in node.inputs:
                g = flowing.get(id(t))
                if g is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = g.astype(t.dtype, copy=True)
                else:
                    t.grad += g
                flowing.pop(id(t))


def backward(tape: GradTape, loss: Tensor) -> None:
    """Functional alias for `tape.backward(loss)`."""
    tape.backward(loss)


class Rng:
    """Counter-based random source (Philox): same seed, same draws, any platform."""

    algorithm = "philox4x64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, low: float, high: float, shape, dtype=np.float32) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def normal(self, shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self._gen.standard_normal(size=shape) * std).astype(dtype)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent stream, e.g. one per dataset sample."""
        return Rng((self.seed * 0x9E3779B97F4A7C15 + key + 1) % (1 << 63))


def _result(data: np.ndarray, op: str, inputs: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], tuple] | None) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"op '{op}' produced non-finite values")
    out = Tensor(data)
    tape = _ACTIVE_TAPE
    if tape is not None and backward_fn is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(op, inputs, out, backward_fn)
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise and reduction ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, factor: float) -> Tensor:
    c = a.dtype.type(factor)
    return _result(a.data * c, "scale", (a,), lambda g: (g * c,))


def absolute(a: Tensor) -> Tensor:
    s = np.sign(a.data)
    return _result(np.abs(a.data), "abs", (a,), lambda g: (g * s,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _result(ad * ad, "square", (a,), lambda g: (g * 2.0 * ad,))


def sum_all(a: Tensor) -> Tensor:
    shape, dt = a.data.shape, a.dtype
    return _result(a.data.sum(), "sum_all", (a,),
                   lambda g: (np.broadcast_to(g, shape).astype(dt),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    shape, dt = a.data.shape, a.dtype
    return _result(a.data.mean(), "mean_all", (a,),
                   lambda g: (np.broadcast_to(g / n, shape).astype(dt),))


# ---------------------------------------------------------------------------
# structural ops

def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {a.data.shape}")
    return _result(np.ascontiguousarray(a.data.T), "transpose", (a,),
                   lambda g: (np.ascontiguousarray(g.T),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.data.shape
    return _result(a.data.reshape(shape), "reshape", (a,),
                   lambda g: (g.reshape(old),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise ShapeError(
                "concat_cols: row counts differ: "
                + ", ".join(str(p.data.shape) for p in parts))
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward_fn(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(widths)))

    return _result(np.concatenate([p.data for p in parts], axis=1),
                   "concat_cols", tuple(parts), backward_fn)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got shape {a.data.shape}")
    shape, dt = a.data.shape, a.dtype

    def backward_fn(g):
        full = np.zeros(shape, dtype=dt)
        full[:, start:stop] = g
        return (full,)

    return _result(np.ascontiguousarray(a.data[:, start:stop]),
                   "slice_cols", (a,), backward_fn)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"slice_rows expects a 2-D tensor, got shape {a.data.shape}")
    shape, dt = a.data.shape, a.dtype

    def backward_fn(g):
        full = np.zeros(shape, dtype=dt)
        full[start:stop, :] = g
        return (full,)

    return _result(np.ascontiguousarray(a.data[start:stop, :]),
                   "slice_rows", (a,), backward_fn)


def repeat_rows(a: Tensor, counts: np.ndarray) -> Tensor:
    """Repeat row i of `a` counts[i] times, preserving order."""
    if a.data.ndim != 2:
        raise ShapeError(f"repeat_rows expects a 2-D tensor, got shape {a.data.shape}")
    counts = np.asarray(counts, dtype=np.int64)
    if counts.shape != (a.data.shape[0],):
        raise ShapeError(
            f"repeat_rows: counts shape {counts.shape} does not match "
            f"{a.data.shape[0]} rows")
    if np.any(counts < 0):
        raise ValueError("repeat_rows: negative repeat count")
    index = np.repeat(np.arange(a.data.shape[0]), counts)
    shape, dt = a.data.shape, a.dtype

    def backward_fn(g):
        acc = np.zeros(shape, dtype=dt)
        np.add.at(acc, index, g)
        return (acc,)

    return _result(a.data[index], "repeat_rows", (a,), backward_fn)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer id; gradients scatter-add back."""
    ids = np.asarray(ids)
    if ids.ndim != 1:
        raise ShapeError(f"embedding ids must be 1-D, got shape {ids.shape}")
    vocab = table.data.shape[0]
    bad = np.nonzero((ids < 0) | (ids >= vocab))[0]
    if bad.size:
        raise TokenError(
            f"token id {int(ids[bad[0]])} at position {int(bad[0])} outside "
            f"table of {vocab} rows")
    shape, dt = table.data.shape, table.dtype

    def backward_fn(g):
        acc = np.zeros(shape, dtype=dt)
        np.add.at(acc, ids, g)
        return (acc,)

    return _result(table.data[ids], "embedding", (table,), backward_fn)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not conform")
    ad, bd = a.data, b.data
    return _result(ad @ bd, "matmul", (a, b),
                   lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """out[n, j] = sum_i x[n, i] * weight[i, j] (+ bias[j])."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(
            f"linear: input {x.data.shape} does not conform with weight {weight.data.shape}")
    out = x.data @ weight.data
    if bias is not None:
        if bias.data.shape != (weight.data.shape[1],):
            raise ShapeError(
                f"linear: bias {bias.data.shape} does not match output width "
                f"{weight.data.shape[1]}")
        out = out + bias.data
        xd, wd = x.data, weight.data
        return _result(out, "linear", (x, weight, bias),
                       lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))
    xd, wd = x.data, weight.data
    return _result(out, "linear", (x, weight),
                   lambda g: (g @ wd.T, xd.T @ g))


# ---------------------------------------------------------------------------
# convolutions (inputs are channels x length)

def _conv_windows(padded: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (c, L_padded) -> (c, L_out, k) view, stride applied along length
    win = np.lib.stride_tricks.sliding_window_view(padded, k, axis=1)
    return win[:, ::stride, :]


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Cross-correlation over (c_in, L); weight is (c_out, c_in/groups, k).

    groups == c_in gives a depthwise convolution; a depthwise-separable
    layer is that followed by a pointwise (k=1, groups=1) convolution.
    """
    if x.data.ndim != 2 or weight.data.ndim != 3:
        raise ShapeError(
            f"conv1d: input {x.data.shape} (want 2-D) / weight {weight.data.shape} (want 3-D)")
    c_in, length = x.data.shape
    c_out, c_in_g, k = weight.data.shape
    if c_in % groups or c_out % groups:
        raise ShapeError(f"conv1d: groups={groups} must divide c_in={c_in} and c_out={c_out}")
    if c_in_g != c_in // groups:
        raise ShapeError(
            f"conv1d: weight {weight.data.shape} inconsistent with c_in={c_in}, groups={groups}")
    l_out = (length + 2 * padding - k) // stride + 1
    if l_out < 1:
        raise SequenceTooShortError(
            f"conv1d: length {length} with padding {padding} too short for kernel {k}")

    dt = x.dtype
    padded = np.pad(x.data, ((0, 0), (padding, padding))) if padding else x.data
    windows = _conv_windows(padded, k, stride)  # (c_in, l_out, k)
    wd = weight.data
    depthwise = groups == c_in and c_out == c_in

    if groups == 1:
        # im2col: (c_in*k, l_out) columns against (c_out, c_in*k) kernels
        cols = np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(c_in * k, l_out)
        out = wd.reshape(c_out, c_in * k) @ cols
    elif depthwise:
        out = (windows * wd[:, 0, :][:, None, :]).sum(axis=2)
    else:
        out = np.empty((c_out, l_out), dtype=dt)
        cog = c_out // groups
        for gi in range(groups):
            xs = windows[gi * c_in_g:(gi + 1) * c_in_g]
            cols_g = np.ascontiguousarray(xs.transpose(0, 2, 1)).reshape(c_in_g * k, l_out)
            out[gi * cog:(gi + 1) * cog] = (
                wd[gi * cog:(gi + 1) * cog].reshape(cog, c_in_g * k) @ cols_g)
    if bias is not None:
        if bias.data.shape != (c_out,):
            raise ShapeError(f"conv1d: bias {bias.data.shape} does not match c_out={c_out}")
        out = out + bias.data[:, None]

    def backward_fn(g):
        # contrib[i, l, t]: what grad flows to padded position l*stride + t of channel i
        if groups == 1:
            cols = np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(c_in * k, l_out)
            d_w = (g @ cols.T).reshape(c_out, c_in, k)
            contrib = (wd.reshape(c_out, c_in * k).T @ g).reshape(c_in, k, l_out)
        elif depthwise:
            d_w = (g[:, :, None] * windows).sum(axis=1)[:, None, :]
            contrib = (g[:, None, :] * wd[:, 0, :][:, :, None])
        else:
            d_w = np.empty_like(wd)
            contrib = np.empty((c_in, k, l_out), dtype=dt)
            cog = c_out // groups
            for gi in range(groups):
                gs = g[gi * cog:(gi + 1) * cog]
                xs = windows[gi * c_in_g:(gi + 1) * c_in_g]
                cols_g = np.ascontiguousarray(xs.transpose(0, 2, 1)).reshape(c_in_g * k, l_out)
                d_w[gi * cog:(gi + 1) * cog] = (gs @ cols_g.T).reshape(cog, c_in_g, k)
                contrib[gi * c_in_g:(gi + 1) * c_in_g] = (
                    wd[gi * cog:(gi + 1) * cog].reshape(cog, c_in_g * k).T @ gs
                ).reshape(c_in_g, k, l_out)
        d_padded = np.zeros_like(padded)
        positions = stride * np.arange(l_out)
        for t in range(k):
            d_padded[:, positions + t] += contrib[:, t, :]
        d_x = d_padded[:, padding:padding + length] if padding else d_padded
        if bias is not None:
            return d_x, d_w, g.sum(axis=1)
        return d_x, d_w

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, "conv1d", inputs, backward_fn)


def conv1d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1) -> Tensor:
    """Gradient-of-conv upsampling; weight is (c_in, c_out, k).

    Output length is (L - 1) * stride + k.
    """
    if x.data.ndim != 2 or weight.data.ndim != 3:
        raise ShapeError(
            f"conv1d_transpose: input {x.data.shape} (want 2-D) / weight "
            f"{weight.data.shape} (want 3-D)")
    c_in, length = x.data.shape
    if length < 1:
        raise SequenceTooShortError("conv1d_transpose: empty input")
    if weight.data.shape[0] != c_in:
        raise ShapeError(
            f"conv1d_transpose: weight {weight.data.shape} does not match c_in={c_in}")
    if stride < 1:
        raise ConfigError(f"conv1d_transpose: stride must be >= 1, got {stride}")
    _, c_out, k = weight.data.shape
    l_out = (length - 1) * stride + k
    xd = x.data
    w2 = weight.data.reshape(c_in, c_out * k)

    # contrib rows are (c_out*k): contrib[o*k + t, l] = sum_i x[i, l] * w[i, o, t]
    contrib = (w2.T @ xd).reshape(c_out, k, length)
    out = np.zeros((c_out, l_out), dtype=x.dtype)
    positions = stride * np.arange(length)
    for t in range(k):
        out[:, positions + t] += contrib[:, t, :]
    if bias is not None:
        if bias.data.shape != (c_out,):
            raise ShapeError(
                f"conv1d_transpose: bias {bias.data.shape} does not match c_out={c_out}")
        out = out + bias.data[:, None]

    def backward_fn(g):
        # gathered[o, t, l] = g[o, l*stride + t]
        gathered = np.empty((c_out, k, length), dtype=g.dtype)
        for t in range(k):
            gathered[:, t, :] = g[:, positions + t]
        flat = gathered.reshape(c_out * k, length)
        d_x = w2 @ flat
        d_w = (xd @ flat.T).reshape(c_in, c_out, k)
        if bias is not None:
            return d_x, d_w, g.sum(axis=1)
        return d_x, d_w

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, "conv1d_transpose", inputs, backward_fn)


# ---------------------------------------------------------------------------
# normalization, attention, activations

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then affine."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm expects a 2-D tensor, got shape {x.data.shape}")
    c = x.data.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"layer_norm: gamma {gamma.data.shape} / beta {beta.data.shape} "
            f"do not match {c} channels")
    if eps <= 0:
        raise ConfigError(f"layer_norm: eps must be positive, got {eps}")
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    gd = gamma.data

    def backward_fn(g):
        gg = g * gd
        d_x = inv_std * (gg - gg.mean(axis=1, keepdims=True)
                         - x_hat * (gg * x_hat).mean(axis=1, keepdims=True))
        return d_x, (g * x_hat).sum(axis=0), g.sum(axis=0)

    return _result(x_hat * gd + beta.data, "layer_norm", (x, gamma, beta), backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, computed max-shifted for stability."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    y = ex / ex.sum(axis=1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, "softmax_rows", (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0), "relu", (x,),
                   lambda g: (np.where(mask, g, 0),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
    return _result(xd * cdf, "gelu", (x,), lambda g: (g * (cdf + xd * pdf),))


_ACTIVATIONS = {"gelu": gelu, "relu": relu, "tanh": tanh}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ConfigError(f"unknown activation '{kind}'") from None


def self_attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                   n_heads: int = 1) -> Tensor:
    """softmax(Q K^T / sqrt(c/heads)) V per head, concatenated, projected.

    Composed from primitive ops, so gradients come for free. No positional
    encoding and no masking: the sequence is processed fully in parallel.
    """
    if x.data.ndim != 2:
        raise ShapeError(f"self_attention expects a 2-D tensor, got shape {x.data.shape}")
    c = x.data.shape[1]
    if c % n_heads:
        raise ConfigError(f"self_attention: {n_heads} heads do not divide width {c}")
    d_head = c // n_heads
    inv_sqrt = 1.0 / math.sqrt(d_head)
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    outs = []
    for h in range(n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = slice_cols(q, lo, hi) if n_heads > 1 else q
        kh = slice_cols(k, lo, hi) if n_heads > 1 else k
        vh = slice_cols(v, lo, hi) if n_heads > 1 else v
        weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt))
        outs.append(matmul(weights, vh))
    merged = concat_cols(outs) if n_heads > 1 else outs[0]
    return matmul(merged, wo)


# ---------------------------------------------------------------------------
# gradient checking oracle

def finite_difference_gradient(f: Callable[[], float], params: Sequence[Tensor],
                               eps: float = 1e-5) -> list[np.ndarray]:
    """Central-difference gradient of f with respect to each param, elementwise.

    `f` takes no arguments and reads the params' current data; each
    coordinate is perturbed in place and restored. Independent of the tape.
    """
    if eps <= 0:
        raise ConfigError(f"finite_difference_gradient: eps must be positive, got {eps}")
    grads = []
    for p in params:
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat, dtype=np.float64)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            hi = float(f())
            flat[i] = saved - eps
            lo = float(f())
            flat[i] = saved
            g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g.reshape(p.data.shape).astype(p.dtype))
    return grads
