"""Dense float tensors with reverse-mode automatic differentiation.

Primitives record themselves onto the computation graph as they run; a
backward sweep walks the records of a Tape in reverse and accumulates
gradients into every leaf that requires them. Values are float32 by
default; the finite-difference oracle runs graphs built in float64.

There is no implicit broadcasting. The only shape-bending primitives are
scale (scalar * tensor), add_bias / add_channel_bias (explicit bias
broadcast with a summing backward), reshape, concat_channels and
upsample2x_nearest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

GradFn = Callable[[np.ndarray], tuple]


class Tensor:
    """n-dimensional float32/float64 array participating in autodiff.

    Leaves are created directly; primitive results carry a record linking
    them to their inputs. A tensor with requires_grad=False never
    accumulates a gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "_record")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            # float32 by default; explicit float64 arrays (oracle graphs) pass through
            keep64 = isinstance(data, np.ndarray) and data.dtype == np.float64
            arr = np.asarray(data, dtype=np.float64 if keep64 else np.float32)
        if arr.dtype not in (np.float32, np.float64):
            raise ContractError(f"unsupported dtype {arr.dtype}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: TapeRecord | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        op = self._record.op if self._record is not None else "leaf"
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, {op})"

    # Small amount of operator sugar over the explicit primitives.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other: "Tensor") -> "Tensor":
        return div(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


@dataclass
class TapeRecord:
    """One primitive application: op id, input refs, output ref, grad closure."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    grad_fn: GradFn


class Tape:
    """Topologically ordered records reachable from a root tensor.

    Every input of record k was produced by some record j < k or is a
    leaf; a backward sweep visits each record exactly once, in reverse.
    """

    def __init__(self, records: list[TapeRecord]):
        self.records = records

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        records: list[TapeRecord] = []
        emitted: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            rec = node._record
            if rec is None:
                continue
            if expanded:
                if id(node) not in emitted:
                    emitted.add(id(node))
                    records.append(rec)
                continue
            if id(node) in emitted:
                continue
            stack.append((node, True))
            for parent in rec.inputs:
                if parent._record is not None and id(parent) not in emitted:
                    stack.append((parent, False))
        return cls(records)

    def __len__(self) -> int:
        return len(self.records)


def backward_sweep(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every grad-requiring leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward_sweep needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = Tape.from_root(loss)
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    else:
        loss.grad = loss.grad + np.ones_like(loss.data)
    for rec in reversed(tape.records):
        out_grad = rec.output.grad
        if out_grad is None:
            continue
        grads = rec.grad_fn(out_grad)
        for parent, g in zip(rec.inputs, grads):
            if g is None or not (parent.requires_grad or parent._record is not None):
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _attach(op: str, inputs: tuple[Tensor, ...], out: Tensor, grad_fn: GradFn) -> Tensor:
    if any(p.requires_grad or p._record is not None for p in inputs):
        out.requires_grad = True
        out._record = TapeRecord(op, inputs, out, grad_fn)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# ---------------------------------------------------------------------------
# binary elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = Tensor(a.data + b.data, dtype=a.data.dtype)
    na, nb = a.requires_grad or a._record is not None, b.requires_grad or b._record is not None

    def grad_fn(g):
        return (g if na else None, g if nb else None)

    return _attach("add", (a, b), out, grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = Tensor(a.data - b.data, dtype=a.data.dtype)
    na, nb = a.requires_grad or a._record is not None, b.requires_grad or b._record is not None

    def grad_fn(g):
        return (g if na else None, -g if nb else None)

    return _attach("sub", (a, b), out, grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = Tensor(a.data * b.data, dtype=a.data.dtype)
    na, nb = a.requires_grad or a._record is not None, b.requires_grad or b._record is not None
    a_data, b_data = a.data, b.data

    def grad_fn(g):
        return (g * b_data if na else None, g * a_data if nb else None)

    return _attach("mul", (a, b), out, grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("div", a, b)
    out = Tensor(a.data / b.data, dtype=a.data.dtype)
    na, nb = a.requires_grad or a._record is not None, b.requires_grad or b._record is not None
    a_data, b_data = a.data, b.data

    def grad_fn(g):
        ga = g / b_data if na else None
        gb = -g * a_data / (b_data * b_data) if nb else None
        return (ga, gb)

    return _attach("div", (a, b), out, grad_fn)


def scale(x: Tensor, c: float) -> Tensor:
    """c * x for a plain python scalar c."""
    c = float(c)
    out = Tensor(x.data * np.asarray(c, dtype=x.data.dtype), dtype=x.data.dtype)

    def grad_fn(g):
        return (g * c,)

    return _attach("scale", (x,), out, grad_fn)


# ---------------------------------------------------------------------------
# unary elementwise


def sin(x: Tensor) -> Tensor:
    out = Tensor(np.sin(x.data), dtype=x.data.dtype)
    x_data = x.data

    def grad_fn(g):
        return (g * np.cos(x_data),)

    return _attach("sin", (x,), out, grad_fn)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0), dtype=x.data.dtype)
    # subgradient at 0 is 0
    mask = x.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _attach("relu", (x,), out, grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    x_data = x.data
    y = np.empty_like(x_data)
    pos = x_data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x_data[pos]))
    ex = np.exp(x_data[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y, dtype=x_data.dtype)

    def grad_fn(g):
        return (g * y * (1.0 - y),)

    return _attach("sigmoid", (x,), out, grad_fn)


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data, dtype=x.data.dtype)
    x_data = x.data

    def grad_fn(g):
        return (g * 2.0 * x_data,)

    return _attach("square", (x,), out, grad_fn)


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), dtype=x.data.dtype)
    x_data = x.data

    def grad_fn(g):
        return (g / x_data,)

    return _attach("log", (x,), out, grad_fn)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where x lies strictly inside."""
    out = Tensor(np.clip(x.data, lo, hi), dtype=x.data.dtype)
    mask = (x.data > lo) & (x.data < hi)

    def grad_fn(g):
        return (g * mask,)

    return _attach("clip", (x,), out, grad_fn)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = Tensor(x.data.reshape(shape), dtype=x.data.dtype)
    orig = x.shape

    def grad_fn(g):
        return (g.reshape(orig),)

    return _attach("reshape", (x,), out, grad_fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-vector bias add: x [m,n] + b [n], backward sums over rows."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data[None, :], dtype=x.data.dtype)
    nb = b.requires_grad or b._record is not None

    def grad_fn(g):
        return (g, g.sum(axis=0) if nb else None)

    return _attach("add_bias", (x, b), out, grad_fn)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Per-channel bias add: x [C,H,W] + b [C], backward sums over H,W."""
    if x.data.ndim != 3 or b.data.ndim != 1 or x.shape[0] != b.shape[0]:
        raise ShapeError(f"add_channel_bias: incompatible shapes {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data[:, None, None], dtype=x.data.dtype)
    nb = b.requires_grad or b._record is not None

    def grad_fn(g):
        return (g, g.sum(axis=(1, 2)) if nb else None)

    return _attach("add_channel_bias", (x, b), out, grad_fn)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack [Ca,H,W] and [Cb,H,W] along the channel axis."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=0), dtype=a.data.dtype)
    ca = a.shape[0]
    na, nb = a.requires_grad or a._record is not None, b.requires_grad or b._record is not None

    def grad_fn(g):
        return (g[:ca] if na else None, g[ca:] if nb else None)

    return _attach("concat_channels", (a, b), out, grad_fn)


def upsample2x_nearest(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of [C,H,W]."""
    if x.data.ndim != 3:
        raise ShapeError(f"upsample2x_nearest: expected [C,H,W], got {x.shape}")
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2), dtype=x.data.dtype)
    c, h, w = x.shape

    def grad_fn(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _attach("upsample2x_nearest", (x,), out, grad_fn)


# ---------------------------------------------------------------------------
# contractions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"matmul: dtype mismatch {a.data.dtype} vs {b.data.dtype}")
    out = Tensor(a.data @ b.data, dtype=a.data.dtype)
    na, nb = a.requires_grad or a._record is not None, b.requires_grad or b._record is not None
    a_data, b_data = a.data, b.data

    def grad_fn(g):
        ga = g @ b_data.T if na else None
        gb = a_data.T @ g if nb else None
        return (ga, gb)

    return _attach("matmul", (a, b), out, grad_fn)


def _im2col(xpad: np.ndarray, kh: int, kw: int, stride: int, hout: int, wout: int) -> np.ndarray:
    c = xpad.shape[0]
    cols = np.empty((c, kh, kw, hout, wout), dtype=xpad.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, u, v] = xpad[:, u : u + stride * hout : stride, v : v + stride * wout : stride]
    return cols.reshape(c * kh * kw, hout * wout)


def conv2d(x: Tensor, k: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [C_in,H,W] with k [C_out,C_in,kh,kw] (no kernel flip)."""
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ShapeError(f"conv2d: expected [C,H,W] and [Co,Ci,kh,kw], got {x.shape} and {k.shape}")
    cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel expects {kcin}")
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d: bad stride/padding {stride}/{padding}")
    if (h + 2 * padding - kh) % stride or (w + 2 * padding - kw) % stride:
        raise ShapeError(
            f"conv2d: non-integral output extent for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (w + 2 * padding - kw) // stride + 1
    if hout < 1 or wout < 1:
        raise ShapeError(f"conv2d: empty output {hout}x{wout}")

    if padding:
        xpad = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xpad = x.data
    cols = _im2col(xpad, kh, kw, stride, hout, wout)
    kmat = k.data.reshape(cout, cin * kh * kw)
    out = Tensor((kmat @ cols).reshape(cout, hout, wout), dtype=x.data.dtype)

    nx, nk = x.requires_grad or x._record is not None, k.requires_grad or k._record is not None
    pad_shape = xpad.shape

    def grad_fn(g):
        gmat = g.reshape(cout, hout * wout)
        gk = (gmat @ cols.T).reshape(cout, cin, kh, kw) if nk else None
        gx = None
        if nx:
            dcols = (kmat.T @ gmat).reshape(cin, kh, kw, hout, wout)
            dxpad = np.zeros(pad_shape, dtype=g.dtype)
            for u in range(kh):
                for v in range(kw):
                    dxpad[:, u : u + stride * hout : stride, v : v + stride * wout : stride] += dcols[:, u, v]
            gx = dxpad[:, padding : padding + h, padding : padding + w] if padding else dxpad
        return (gx, gk)

    return _attach("conv2d", (x, k), out, grad_fn)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), dtype=x.data.dtype)
    shape = x.shape

    def grad_fn(g):
        return (np.broadcast_to(g, shape).copy(),)

    return _attach("sum", (x,), out, grad_fn)


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean(), dtype=x.data.dtype)
    shape = x.shape

    def grad_fn(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _attach("mean", (x,), out, grad_fn)


# ---------------------------------------------------------------------------
# gradient oracle


def finite_difference_check(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-3,
) -> float:
    """Worst relative error between autodiff and central finite differences.

    build_loss must reconstruct the scalar loss from the current contents
    of params; each parameter element is perturbed in place by +-step.
    Relative error uses denominator max(|g_fd|, |g_ad|, 1e-8). Build the
    graph in float64 for meaningful tolerances.
    """
    if step <= 0:
        raise ContractError("finite_difference_check: step must be positive")
    zero_grads(params)
    backward_sweep(build_loss())
    auto = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    worst = 0.0
    for p, g in zip(params, auto):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(build_loss().data)
            flat[i] = orig - step
            f_minus = float(build_loss().data)
            flat[i] = orig
            g_fd = (f_plus - f_minus) / (2.0 * step)
            denom = max(abs(g_fd), abs(float(gflat[i])), 1e-8)
            worst = max(worst, abs(g_fd - float(gflat[i])) / denom)
    return worst
