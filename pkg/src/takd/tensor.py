"""Dense float tensors with reverse-mode automatic differentiation.

Every operation that produces a tensor records its parents and a backward
closure; the reachable graph from a scalar loss is the gradient tape.
Calling :func:`backward` walks that tape once, accumulating ``dloss/dparam``
additively into ``.grad`` of every reachable tensor with ``requires_grad``.
A second backward over the same tape raises.

Training runs in float32; float64 is supported for finite-difference
gradient checking (operands of one op must share a dtype).
"""

from __future__ import annotations

import struct
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_STATE = threading.local()


def grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (frozen-model forwards).

    The flag is thread-local so parallel no-grad evaluations cannot clobber
    each other's recording state.
    """

    def __enter__(self):
        self._prev = grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


class Tensor:
    """N-dimensional float32/float64 array node in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_backward_ran")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        if dtype is None:
            if isinstance(data, (np.ndarray, np.floating)) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = np.float32
        arr = np.asarray(data, dtype=dtype, order="C")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._backward_ran = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, grad={self.requires_grad})"

    # arithmetic sugar; constants are wrapped at the operand's dtype
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _check_same_dtype(*tensors: Tensor):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError(f"mixed dtypes {dt} and {t.dtype}")


def backward(loss: Tensor):
    """Accumulate dloss/dx for every tensor reachable from the scalar loss."""
    if loss.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward_ran:
        raise RuntimeError("backward already ran over this tape; rebuild the graph")
    loss._backward_ran = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss._accum(np.ones((), dtype=loss.dtype))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise and reduction operations


def _binary_shapes(a: Tensor, b: Tensor):
    if a.shape == b.shape:
        return
    if a.shape == () or b.shape == ():
        return
    raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if shape == () and g.shape != ():
        return g.sum()
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _binary_shapes(a, b)

    def _bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g, b.shape))

    return _make(a.data + b.data, (a, b), _bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _binary_shapes(a, b)

    def _bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(-g, b.shape))

    return _make(a.data - b.data, (a, b), _bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _binary_shapes(a, b)

    def _bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), _bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _binary_shapes(a, b)

    def _bwd(g):
        if a.requires_grad:
            a._accum(_reduce_to(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_reduce_to(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), _bwd)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def _bwd(g):
        if x.requires_grad:
            x._accum(g * np.asarray(s, dtype=x.dtype))

    return _make(x.data * np.asarray(s, dtype=x.dtype), (x,), _bwd)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def _bwd(g):
        if x.requires_grad:
            x._accum(g * (out_data > 0))

    return _make(out_data, (x,), _bwd)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so neither branch exponentiates a large positive value
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    y[~pos] = ez / (1.0 + ez)

    def _bwd(g):
        if x.requires_grad:
            x._accum(g * y * (1.0 - y))

    return _make(y, (x,), _bwd)


def log(x: Tensor) -> Tensor:
    def _bwd(g):
        if x.requires_grad:
            x._accum(g / x.data)

    return _make(np.log(x.data), (x,), _bwd)


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)

    def _bwd(g):
        if x.requires_grad:
            x._accum(g * y)

    return _make(y, (x,), _bwd)


def sqrt(x: Tensor) -> Tensor:
    y = np.sqrt(x.data)

    def _bwd(g):
        if x.requires_grad:
            x._accum(g / (2.0 * y))

    return _make(y, (x,), _bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(x.data, lo, hi)
    mask = (x.data > lo) & (x.data < hi)

    def _bwd(g):
        if x.requires_grad:
            x._accum(g * mask)

    return _make(out_data, (x,), _bwd)


def tsum(x: Tensor, axis=None) -> Tensor:
    axes = axis if axis is None or isinstance(axis, tuple) else (axis,)

    def _bwd(g):
        if not x.requires_grad:
            return
        if axes is None:
            x._accum(np.broadcast_to(g, x.shape).astype(x.dtype, copy=True))
        else:
            ge = np.expand_dims(g, axes)
            x._accum(np.broadcast_to(ge, x.shape).astype(x.dtype, copy=True))

    return _make(x.data.sum(axis=axes), (x,), _bwd)


def mean(x: Tensor) -> Tensor:
    n = x.size

    def _bwd(g):
        if x.requires_grad:
            x._accum(np.full(x.shape, g / n, dtype=x.dtype))

    return _make(np.asarray(x.data.mean(), dtype=x.dtype), (x,), _bwd)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def _bwd(g):
        coeff = 2.0 * g / n
        if a.requires_grad:
            a._accum(coeff * diff)
        if b.requires_grad:
            b._accum(-coeff * diff)

    return _make(np.asarray(np.mean(diff * diff), dtype=a.dtype), (a, b), _bwd)


def frobenius_norm(x: Tensor) -> Tensor:
    """sqrt of the sum of squares over all elements."""
    norm = float(np.sqrt(np.sum(x.data.astype(np.float64) ** 2)))
    norm = np.asarray(norm, dtype=x.dtype)

    def _bwd(g):
        if x.requires_grad and norm > 0:
            x._accum(g * x.data / norm)

    return _make(norm, (x,), _bwd)


def pointwise_and_reduction(kind: str, *operands: Tensor) -> Tensor:
    """Dispatch for the small named family: relu, add, scale, mse, frobenius_norm."""
    table = {"relu": relu, "add": add, "scale": scale, "mse": mse,
             "frobenius_norm": frobenius_norm}
    if kind not in table:
        raise ValueError(f"unknown kind {kind!r}; expected one of {sorted(table)}")
    return table[kind](*operands)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def _bwd(g):
        if x.requires_grad:
            x._accum(g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), _bwd)


def moveaxis(x: Tensor, src: int, dst: int) -> Tensor:
    def _bwd(g):
        if x.requires_grad:
            x._accum(np.moveaxis(g, dst, src))

    return _make(np.ascontiguousarray(np.moveaxis(x.data, src, dst)), (x,), _bwd)


def row_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every row of a 2-D tensor by the matching entry of a vector."""
    _check_same_dtype(x, s)
    if x.ndim != 2 or s.shape != (x.shape[0],):
        raise ValueError(f"row_scale expects (m,n) and (m,), got {x.shape} and {s.shape}")

    def _bwd(g):
        if x.requires_grad:
            x._accum(g * s.data[:, None])
        if s.requires_grad:
            s._accum(np.sum(g * x.data, axis=1))

    return _make(x.data * s.data[:, None], (x, s), _bwd)


# ---------------------------------------------------------------------------
# linear-algebra operations


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias for x (m, n_in), weight (n_out, n_in), bias (n_out,)."""
    _check_same_dtype(x, weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"affine shape mismatch {x.shape} @ {weight.shape}.T")
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bwd(g):
        if x.requires_grad:
            x._accum(g @ weight.data)
        if weight.requires_grad:
            weight._accum(g.T @ x.data)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=0))

    return _make(out_data, parents, _bwd)


def gram_product(f: Tensor) -> Tensor:
    """G = F @ F.T for a 2-D feature matrix; symmetric positive semidefinite."""
    if f.ndim != 2:
        raise ValueError(f"gram_product expects a 2-D matrix, got shape {f.shape}")

    def _bwd(g):
        if f.requires_grad:
            f._accum((g + g.T) @ f.data)

    return _make(f.data @ f.data.T, (f,), _bwd)


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape (n_out, n_in)."""
    w = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1:
        w[0, 0] = 1.0
        return w
    pos = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(int)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    for i in range(n_out):
        w[i, lo[i]] += 1.0 - frac[i]
        w[i, hi[i]] += frac[i]
    return w


def resize_linear(x: Tensor, axis: int, new_size: int) -> Tensor:
    """Corner-aligned linear interpolation along one axis (exact identity when sizes match)."""
    old = x.shape[axis]
    if old == new_size:
        return x
    w = _interp_matrix(old, new_size, x.dtype)

    def _fwd(arr, m):
        return np.ascontiguousarray(np.moveaxis(np.tensordot(m, arr, axes=([1], [axis])), 0, axis))

    def _bwd(g):
        if x.requires_grad:
            x._accum(_fwd(g, w.T))

    return _make(_fwd(x.data, w), (x,), _bwd)


def bilinear_resize_map(m: Tensor, target: int) -> Tensor:
    """Resize a square (m, m) map to (target, target) with corner-aligned bilinear sampling."""
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"bilinear_resize_map expects a square map, got {m.shape}")
    if m.shape[0] == target:
        return m
    return resize_linear(resize_linear(m, 0, target), 1, target)


# ---------------------------------------------------------------------------
# convolutions


def _conv_out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """Cross-correlation of x (b, c_in, t, h, w) with kernel (c_out, c_in, k1, k2, k3)."""
    _check_same_dtype(x, kernel)
    if x.ndim != 5 or kernel.ndim != 5:
        raise ValueError(f"conv3d expects 5-D input and kernel, got {x.shape}, {kernel.shape}")
    b, cin, t, h, w = x.shape
    cout, cink, k1, k2, k3 = kernel.shape
    if cink != cin:
        raise ValueError(f"channel mismatch: input has {cin}, kernel expects {cink}")
    s1, s2, s3 = stride
    p1, p2, p3 = padding
    to, ho, wo = _conv_out(t, k1, s1, p1), _conv_out(h, k2, s2, p2), _conv_out(w, k3, s3, p3)
    if to < 1 or ho < 1 or wo < 1:
        raise ValueError(f"non-positive output dims ({to},{ho},{wo}) for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p1, p1), (p2, p2), (p3, p3)))
    win = sliding_window_view(xp, (k1, k2, k3), axis=(2, 3, 4))[:, :, ::s1, ::s2, ::s3]
    out = np.tensordot(win, kernel.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"bias shape {bias.shape} != ({cout},)")
        out += bias.data.reshape(1, -1, 1, 1, 1)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def _bwd(g):
        if kernel.requires_grad:
            kernel._accum(np.tensordot(g, win, axes=([0, 2, 3, 4], [0, 2, 3, 4])))
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            prod = np.tensordot(g, kernel.data, axes=([1], [0]))
            gx = np.zeros_like(xp)
            for i in range(k1):
                for j in range(k2):
                    for k in range(k3):
                        gx[:, :,
                           i:i + s1 * (to - 1) + 1:s1,
                           j:j + s2 * (ho - 1) + 1:s2,
                           k:k + s3 * (wo - 1) + 1:s3] += np.moveaxis(prod[..., i, j, k], -1, 1)
            x._accum(gx[:, :, p1:p1 + t, p2:p2 + h, p3:p3 + w])

    return _make(out, parents, _bwd)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (b, c_in, t) with kernel (c_out, c_in, k)."""
    _check_same_dtype(x, kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and kernel, got {x.shape}, {kernel.shape}")
    b, cin, t = x.shape
    cout, cink, k = kernel.shape
    if cink != cin:
        raise ValueError(f"channel mismatch: input has {cin}, kernel expects {cink}")
    to = _conv_out(t, k, stride, padding)
    if to < 1:
        raise ValueError(f"non-positive output length {to} for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]
    out = np.tensordot(win, kernel.data, axes=([1, 3], [1, 2]))
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"bias shape {bias.shape} != ({cout},)")
        out += bias.data.reshape(1, -1, 1)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def _bwd(g):
        if kernel.requires_grad:
            kernel._accum(np.tensordot(g, win, axes=([0, 2], [0, 2])))
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2)))
        if x.requires_grad:
            prod = np.tensordot(g, kernel.data, axes=([1], [0]))
            gx = np.zeros_like(xp)
            for i in range(k):
                gx[:, :, i:i + stride * (to - 1) + 1:stride] += np.moveaxis(prod[..., i], -1, 1)
            x._accum(gx[:, :, padding:padding + t])

    return _make(out, parents, _bwd)


# ---------------------------------------------------------------------------
# checkpoint serialization

_MAGIC = b"TAKD"
_VERSION = 1
_META_PREFIX = "__meta__:"


def save_checkpoint(path, params: dict, meta: dict | None = None):
    """Write named float32 arrays: magic, version u32, then (name, rank, dims, payload) records."""
    import json

    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        if meta is not None:
            name = (_META_PREFIX + json.dumps(meta, sort_keys=True)).encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            fh.write(struct.pack("<I", 1))
            fh.write(struct.pack("<I", 0))
        for name, value in params.items():
            arr = value.data if isinstance(value, Tensor) else np.asarray(value)
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict | None]:
    """Read a checkpoint back into {name: float32 ndarray} plus optional metadata."""
    import json

    params: dict[str, np.ndarray] = {}
    meta = None
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            if dims and min(dims) == 0:
                count = 0
            payload = fh.read(4 * count)
            if len(payload) != 4 * count:
                raise ValueError(f"{path}: truncated payload for record {name!r}")
            if name.startswith(_META_PREFIX):
                meta = json.loads(name[len(_META_PREFIX):])
                continue
            params[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return params, meta
