"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in row-major numpy arrays. Every operation builds a node in an
implicit graph (parent references plus a backward closure); calling
``Tensor.backward()`` on a scalar walks the graph once in reverse topological
order. All forward results are checked for NaN/Inf and raise instead of
propagating them. Reduction orders are fixed, so repeated runs on the same
machine produce bitwise identical results.

Checkpoint container (``save_checkpoint`` / ``load_checkpoint``): binary file
starting with the magic ``FGCKPT01``, a uint32 tensor count, then per tensor a
uint16 name length, the UTF-8 name, a uint8 rank, uint32 extents, and the
values as little-endian float64 in row-major order. The layout is stable; any
change would use a new magic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


class Tensor:
    """A node in the autodiff graph wrapping a float64 ndarray."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse pass from this tensor. Overwrites ``.grad`` on every
        reachable tensor that requires gradients; each graph node is visited
        exactly once."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            node.grad = None  # closures allocate on first contribution
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.data.shape).copy()
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
        for node in topo:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            # the pass consumes the graph: drop closures and parent links so
            # the whole step's memory frees by reference count (the closure
            # captured its output tensor, a cycle the cyclic GC would
            # otherwise have to find)
            node._backward = None
            node._parents = ()


_grad_enabled = True


class no_grad:
    """Context manager that suppresses graph recording; forward values still
    compute. Use for evaluation passes so they cost no graph memory."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _node(data: np.ndarray, parents: tuple[Tensor, ...], op: str) -> Tensor:
    out = Tensor(_finite(data, op))
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(p for p in parents if p.requires_grad)
    return out


def _accum(t: Tensor, g: np.ndarray, own: bool = False) -> None:
    """Add a gradient contribution; ``own=True`` promises ``g`` is a fresh
    array the graph may keep without copying."""
    if t.grad is None:
        t.grad = g if own else g.copy()
    else:
        t.grad += g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shapes {a.data.shape} vs {b.data.shape}")
    out = _node(a.data + b.data, (a, b), "add")

    def backward():
        if a.requires_grad:
            _accum(a, out.grad)
        if b.requires_grad:
            _accum(b, out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: shapes {a.data.shape} vs {b.data.shape}")
    out = _node(a.data * b.data, (a, b), "mul")

    def backward():
        if a.requires_grad:
            _accum(a, out.grad * b.data, own=True)
        if b.requires_grad:
            _accum(b, out.grad * a.data, own=True)

    out._backward = backward if out.requires_grad else None
    return out


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    out = _node(a.data * c, (a,), "scale")

    def backward():
        _accum(a, out.grad * c, own=True)

    out._backward = backward if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0  # subgradient 0 at exactly 0
    out = _node(np.where(mask, a.data, 0.0), (a,), "relu")

    def backward():
        _accum(a, out.grad * mask, own=True)

    out._backward = backward if out.requires_grad else None
    return out


def scale_slices(a: Tensor, weights) -> Tensor:
    """Scale each slice along the first axis by a constant scalar.

    ``weights`` has one entry per leading-index slice; entries are plain
    numbers, not graph nodes.
    """
    a = _as_tensor(a)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != a.data.shape[0]:
        raise ShapeError(
            f"scale_slices: {w.shape[0]} weights for leading extent {a.data.shape[0]}"
        )
    wb = w.reshape((-1,) + (1,) * (a.data.ndim - 1))
    out = _node(a.data * wb, (a,), "scale_slices")

    def backward():
        _accum(a, out.grad * wb, own=True)

    out._backward = backward if out.requires_grad else None
    return out


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = _node(np.asarray(a.data.sum()), (a,), "sum_all")

    def backward():
        _accum(a, np.full_like(a.data, float(out.grad)), own=True)

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = _node(a.data.reshape(shape).copy(), (a,), "reshape")

    def backward():
        _accum(a, out.grad.reshape(a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = _node(np.ascontiguousarray(a.data.transpose(axes)), (a,), "transpose")

    def backward():
        _accum(a, out.grad.transpose(inv))

    out._backward = backward if out.requires_grad else None
    return out


def concat_n(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_n: no inputs")
    base = tensors[0].data.shape
    for t in tensors[1:]:
        if len(t.data.shape) != len(base):
            raise ShapeError("concat_n: rank mismatch")
        for ax, (x, y) in enumerate(zip(t.data.shape, base)):
            if ax != axis and x != y:
                raise ShapeError(
                    f"concat_n: non-concat extent mismatch {t.data.shape} vs {base}"
                )
    out = _node(np.concatenate([t.data for t in tensors], axis=axis),
                tuple(tensors), "concat")
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(int(lo), int(hi))
                _accum(t, out.grad[tuple(idx)])

    out._backward = backward if out.requires_grad else None
    return out


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis (axis 1 of NCHW, axis 0 of CHW)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (3, 4):
        raise ShapeError("concat_channels: expects two CHW or two NCHW tensors")
    return concat_n([a, b], axis=a.data.ndim - 3)


def take_batch(a: Tensor, indices) -> Tensor:
    """Gather slices along the leading axis; gradient scatter-adds back."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = _node(a.data[idx].copy(), (a,), "take_batch")

    def backward():
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, out.grad)

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# linear algebra and normalization
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul: operands must be rank 2")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner extents {a.data.shape[1]} vs {b.data.shape[0]}"
        )
    out = _node(a.data @ b.data, (a, b), "matmul")

    def backward():
        if a.requires_grad:
            _accum(a, out.grad @ b.data.T, own=True)
        if b.requires_grad:
            _accum(b, a.data.T @ out.grad, own=True)

    out._backward = backward if out.requires_grad else None
    return out


def softmax(a: Tensor, axis: int) -> Tensor:
    a = _as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _node(y, (a,), "softmax")

    def backward():
        g = out.grad
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)), own=True)

    out._backward = backward if out.requires_grad else None
    return out


def log_softmax(a: Tensor, axis: int) -> Tensor:
    a = _as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"log_softmax: axis {axis} invalid for shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _node(y, (a,), "log_softmax")

    def backward():
        g = out.grad
        _accum(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True), own=True)

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# convolution, pooling, upsampling
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, h_out: int, w_out: int) -> np.ndarray:
    """Patch matrix of shape (C*k*k, N*h_out*w_out); row index is (c, a, b)."""
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((c, k, k, n, h_out, w_out))
    for a in range(k):
        for b in range(k):
            cols[:, a, b] = xp[:, :, a:a + stride * h_out:stride,
                               b:b + stride * w_out:stride].transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * h_out * w_out)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over NCHW input with an OIkk kernel."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError("conv2d: input must be NCHW and kernel OIkk")
    n, c, h, w = x.data.shape
    o, ci, kh, kw = kernel.data.shape
    if kh != kw or kh not in (1, 2, 3):
        raise ShapeError(f"conv2d: kernel size {kh}x{kw} unsupported")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride {stride} unsupported")
    if padding < 0:
        raise ShapeError("conv2d: negative padding")
    if ci != c:
        raise ShapeError(f"conv2d: input channels {c} vs kernel {ci}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.data.shape}, expected ({o},)")
    k = kh
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError("conv2d: output would be empty")

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = _im2col(xp, k, stride, h_out, w_out)
    kmat = kernel.data.reshape(o, c * k * k)
    y = kmat @ cols  # (O, N*h_out*w_out)
    if bias is not None:
        y = y + bias.data[:, None]
    y = np.ascontiguousarray(y.reshape(o, n, h_out, w_out).transpose(1, 0, 2, 3))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    out = _node(y, parents, "conv2d")

    def backward():
        gmat = np.ascontiguousarray(out.grad.transpose(1, 0, 2, 3)) \
            .reshape(o, n * h_out * w_out)
        if bias is not None and bias.requires_grad:
            _accum(bias, gmat.sum(axis=1), own=True)
        if kernel.requires_grad:
            _accum(kernel, (gmat @ cols.T).reshape(o, c, k, k), own=True)
        if x.requires_grad:
            gcols = (kmat.T @ gmat).reshape(c, k, k, n, h_out, w_out)
            hp, wp = h + 2 * padding, w + 2 * padding
            gx = np.zeros((n, c, hp, wp))
            for a in range(k):
                for b in range(k):
                    gx[:, :, a:a + stride * h_out:stride,
                       b:b + stride * w_out:stride] += gcols[:, a, b].transpose(1, 0, 2, 3)
            if padding:
                gx = gx[:, :, padding:hp - padding, padding:wp - padding].copy()
            _accum(x, gx, own=True)

    out._backward = backward if out.requires_grad else None
    return out


def conv_transpose2d(x: Tensor, kernel: Tensor, bias: Tensor | None) -> Tensor:
    """2x2 stride-2 transposed convolution (the learned upsampler).

    Kernel layout is IOkk: (c_in, c_out, 2, 2). Output doubles H and W;
    stride equals the kernel size, so contributions never overlap.
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError("conv_transpose2d: input must be NCHW and kernel IOkk")
    n, c, h, w = x.data.shape
    ci, o, kh, kw = kernel.data.shape
    if (kh, kw) != (2, 2):
        raise ShapeError("conv_transpose2d: only 2x2 kernels supported")
    if ci != c:
        raise ShapeError(f"conv_transpose2d: input channels {c} vs kernel {ci}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.data.shape != (o,):
            raise ShapeError("conv_transpose2d: bias shape mismatch")

    kmat = kernel.data.reshape(c, o * 4)
    xrows = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(c, n * h * w)
    # y6[o, a, b, n, h, w] = sum_c kernel[c, o, a, b] * x[n, c, h, w]
    y6 = (kmat.T @ xrows).reshape(o, 2, 2, n, h, w)
    y = y6.transpose(3, 0, 4, 1, 5, 2).reshape(n, o, 2 * h, 2 * w)
    if bias is not None:
        y = y + bias.data.reshape(1, o, 1, 1)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    out = _node(np.ascontiguousarray(y), parents, "conv_transpose2d")

    def backward():
        g6 = np.ascontiguousarray(
            out.grad.reshape(n, o, h, 2, w, 2).transpose(1, 3, 5, 0, 2, 4)
        ).reshape(o * 4, n * h * w)  # rows (o, a, b)
        if bias is not None and bias.requires_grad:
            _accum(bias, out.grad.sum(axis=(0, 2, 3)), own=True)
        if kernel.requires_grad:
            xrows = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(c, -1)
            _accum(kernel, (xrows @ g6.T).reshape(c, o, 2, 2), own=True)
        if x.requires_grad:
            gx = (kmat @ g6).reshape(c, n, h, w).transpose(1, 0, 2, 3)
            _accum(x, np.ascontiguousarray(gx), own=True)

    out._backward = backward if out.requires_grad else None
    return out


def upsample2(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Learned 2x upsampling; alias for the 2x2 stride-2 transposed conv."""
    return conv_transpose2d(x, kernel, bias)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; gradient flows to the first maximum of
    each window only."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("maxpool2: input must be NCHW")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: odd spatial extents ({h}, {w})")
    ho, wo = h // 2, w // 2
    win = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5) \
        .reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=4)  # first max wins ties
    y = np.take_along_axis(win, arg[..., None], axis=4)[..., 0]
    out = _node(np.ascontiguousarray(y), (x,), "maxpool2")

    def backward():
        gwin = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(gwin, arg[..., None], out.grad[..., None], axis=4)
        gx = gwin.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5) \
            .reshape(n, c, h, w)
        _accum(x, np.ascontiguousarray(gx), own=True)

    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences."""

    max_rel_error: float
    max_abs_error: float
    per_input: list = field(default_factory=list)
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(fn, inputs, tolerance: float = 1e-4, step: float = 1e-5,
               max_coords: int | None = None, rng=None) -> GradCheckReport:
    """Check ``fn(*inputs) -> scalar Tensor`` against central finite
    differences with the given step.

    Perturbs each input coordinate in place (restoring it afterwards). When
    ``max_coords`` is set, a random subset of coordinates per input is checked,
    which keeps large models tractable. The relative error is the largest
    absolute deviation divided by the largest gradient magnitude seen.
    """
    out = fn(*inputs)
    if out.data.size != 1:
        raise ShapeError("grad_check: fn must return a scalar tensor")
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    if rng is None:
        rng = np.random.default_rng(0)
    max_abs = 0.0
    scale_ = 0.0
    per_input = []
    for t, a in zip(inputs, analytic):
        t.data = np.ascontiguousarray(t.data)  # reshape(-1) below must be a view
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        worst = 0.0
        for i in coords:
            keep = flat[i]
            with no_grad():  # probe forwards need values only
                flat[i] = keep + step
                fp = float(fn(*inputs).data)
                flat[i] = keep - step
                fm = float(fn(*inputs).data)
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * step)
            diff = abs(aflat[i] - numeric)
            worst = max(worst, diff)
            scale_ = max(scale_, abs(aflat[i]), abs(numeric))
        per_input.append(worst)
        max_abs = max(max_abs, worst)
    rel = max_abs / max(scale_, 1e-8)
    return GradCheckReport(max_rel_error=rel, max_abs_error=max_abs,
                           per_input=per_input, tolerance=tolerance)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"FGCKPT01"


def save_checkpoint(params: dict, path) -> None:
    """Write named tensors to ``path`` in the documented binary layout."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
            data = np.asarray(data, dtype=np.float64)
            shape = data.shape  # ascontiguousarray would promote 0-d to 1-d
            enc = name.encode("utf-8")
            fh.write(struct.pack("<H", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<B", len(shape)))
            for extent in shape:
                fh.write(struct.pack("<I", extent))
            fh.write(np.ascontiguousarray(data).astype("<f8").tobytes())


def load_checkpoint(path) -> dict:
    """Read a checkpoint written by :func:`save_checkpoint`. Returns an
    ordered dict of name -> Tensor(requires_grad=True)."""
    params: dict[str, Tensor] = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(_CKPT_MAGIC))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            n_items = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n_items)
            if len(raw) != 8 * n_items:
                raise ValueError(f"{path}: truncated tensor {name!r}")
            data = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            params[name] = Tensor(data, requires_grad=True)
    return params
